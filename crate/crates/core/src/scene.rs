//! Scene primitives, orthographic cameras and the synthetic dynamic-scene
//! generator used as ground truth throughout the crate.

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::masking::SegmentationMap;
use crate::ply::{self, ScalarType};
use crate::render::{self, Contributions};

/// Number of scalar parameters a single Gaussian exposes to the optimizer.
pub const PARAM_COUNT: usize = 14;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One anisotropic Gaussian primitive.
///
/// Scale and opacity are stored pre-activation: the effective scale is
/// `exp(log_scale)` and the effective opacity is `sigmoid(opacity_logit)`.
/// `rotation` is a unit quaternion in `(w, x, y, z)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub id: u64,
    pub center: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color: [f64; 3],
    pub voxel_id: Option<usize>,
    pub unconstrained: bool,
    /// Sum of positional gradient magnitudes since the last densification
    /// pass; divided by `grad_steps` for the mean.
    pub grad_accum: f64,
    /// Sum of positional gradient vectors over the same window.
    pub grad_dir: Vector3<f64>,
    pub grad_steps: u32,
}

impl Gaussian3D {
    pub fn new(center: Vector3<f64>, scale: Vector3<f64>, opacity: f64, color: [f64; 3]) -> Self {
        Self {
            id: 0,
            center,
            log_scale: scale.map(f64::ln),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            color,
            voxel_id: None,
            unconstrained: false,
            grad_accum: 0.0,
            grad_dir: Vector3::zeros(),
            grad_steps: 0,
        }
    }

    pub fn with_rotation(mut self, q: [f64; 4]) -> Self {
        self.rotation = q;
        self.normalize_rotation();
        self
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn max_scale(&self) -> f64 {
        self.scale().max()
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        build_covariance(self.rotation, self.log_scale)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(normalized_quat(self.rotation))
    }

    pub fn normalize_rotation(&mut self) {
        self.rotation = normalized_quat(self.rotation);
    }

    /// Flat optimizer view: center, log-scale, rotation, opacity logit, color.
    pub fn params(&self) -> [f64; PARAM_COUNT] {
        let c = &self.center;
        let s = &self.log_scale;
        let q = &self.rotation;
        [
            c.x,
            c.y,
            c.z,
            s.x,
            s.y,
            s.z,
            q[0],
            q[1],
            q[2],
            q[3],
            self.opacity_logit,
            self.color[0],
            self.color[1],
            self.color[2],
        ]
    }

    pub fn set_params(&mut self, p: &[f64; PARAM_COUNT]) {
        self.center = Vector3::new(p[0], p[1], p[2]);
        self.log_scale = Vector3::new(p[3], p[4], p[5]);
        self.rotation = [p[6], p[7], p[8], p[9]];
        self.opacity_logit = p[10];
        self.color = [p[11], p[12], p[13]];
    }

    pub fn reset_grad_stats(&mut self) {
        self.grad_accum = 0.0;
        self.grad_dir = Vector3::zeros();
        self.grad_steps = 0;
    }
}

pub fn normalized_quat(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    q.map(|v| v / n)
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn build_covariance(rotation: [f64; 4], log_scale: Vector3<f64>) -> Matrix3<f64> {
    let r = quat_to_matrix(normalized_quat(rotation));
    let m = r * Matrix3::from_diagonal(&log_scale.map(f64::exp));
    let cov = m * m.transpose();
    // exact symmetry
    (cov + cov.transpose()) * 0.5
}

/// Orthographic camera: world point `p` maps to camera space `R p + t`,
/// then to pixel coordinates `pixels_per_unit * (x, y) + (W/2, H/2)`.
/// Depth is camera-space `z`, smaller is closer.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoCamera {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub pixels_per_unit: f64,
    pub width: usize,
    pub height: usize,
}

impl OrthoCamera {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        pixels_per_unit: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            rotation,
            translation,
            pixels_per_unit,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn identity(pixels_per_unit: f64, width: usize, height: usize) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            pixels_per_unit,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = (self.rotation * self.rotation.transpose() - Matrix3::identity()).abs().max();
        if err > 1e-9 {
            return Err(Error::Invalid(format!(
                "camera rotation is not orthonormal (error {err:e})"
            )));
        }
        if !(self.pixels_per_unit > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::Invalid(
                "camera needs positive pixels_per_unit and image size".into(),
            ));
        }
        Ok(())
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_pixel(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let c = self.to_camera(p);
        Vector2::new(
            self.pixels_per_unit * c.x + self.width as f64 * 0.5,
            self.pixels_per_unit * c.y + self.height as f64 * 0.5,
        )
    }
}

/// One training view.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: usize,
    pub image: Image,
    pub camera: OrthoCamera,
    pub seg: Option<SegmentationMap>,
    pub gt_distractor_mask: Option<Mask>,
}

impl Frame {
    pub fn new(index: usize, image: Image, camera: OrthoCamera) -> Result<Self> {
        if image.width() != camera.width || image.height() != camera.height {
            return Err(Error::Shape(format!(
                "frame {index}: image {}x{} vs camera {}x{}",
                image.width(),
                image.height(),
                camera.width,
                camera.height
            )));
        }
        Ok(Self {
            index,
            image,
            camera,
            seg: None,
            gt_distractor_mask: None,
        })
    }
}

/// A static object: a group of Gaussians sharing one segmentation ID.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub gaussians: Vec<Gaussian3D>,
}

/// A moving object: one Gaussian template moved through per-frame waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct DistractorScript {
    pub template: Gaussian3D,
    pub waypoints: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneSpec {
    pub static_objects: Vec<SceneObject>,
    pub distractor_scripts: Vec<DistractorScript>,
    pub n_frames: usize,
    pub camera_path: Vec<OrthoCamera>,
    pub background: [f64; 3],
    /// Standard deviation of additive per-pixel noise; zero disables it.
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::Invalid("scene needs at least one frame".into()));
        }
        if self.camera_path.len() != self.n_frames {
            return Err(Error::Invalid(format!(
                "camera path has {} cameras for {} frames",
                self.camera_path.len(),
                self.n_frames
            )));
        }
        for (i, s) in self.distractor_scripts.iter().enumerate() {
            if s.waypoints.len() != self.n_frames {
                return Err(Error::Invalid(format!(
                    "distractor {i} has {} waypoints for {} frames",
                    s.waypoints.len(),
                    self.n_frames
                )));
            }
        }
        for cam in &self.camera_path {
            cam.validate()?;
        }
        Ok(())
    }

    /// All static Gaussians, flattened in object order.
    pub fn static_gaussians(&self) -> Vec<Gaussian3D> {
        self.static_objects
            .iter()
            .flat_map(|o| o.gaussians.iter().cloned())
            .collect()
    }

    /// Segmentation ID of static object `i` (background is 0).
    pub fn static_id(&self, i: usize) -> u16 {
        (i + 1) as u16
    }

    /// Segmentation ID (and track ID) of distractor `i`.
    pub fn distractor_id(&self, i: usize) -> u16 {
        (self.static_objects.len() + i + 1) as u16
    }

    pub fn distractor_at(&self, script: usize, frame: usize) -> Gaussian3D {
        let s = &self.distractor_scripts[script];
        let mut g = s.template.clone();
        g.center = s.waypoints[frame];
        g
    }

    /// Static Gaussians with seeded perturbations, standing in for an
    /// imperfect initial reconstruction. At `amount = 1` centers move up to
    /// 0.1 units in x/y, scales grow by e^0.15 and colors shift up to 0.15.
    pub fn perturbed_static_init(&self, amount: f64, seed: u64) -> Vec<Gaussian3D> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.static_gaussians()
            .into_iter()
            .map(|mut g| {
                g.center.x += amount * rng.random_range(-0.1..0.1);
                g.center.y += amount * rng.random_range(-0.1..0.1);
                g.log_scale += Vector3::repeat(0.15 * amount);
                for c in &mut g.color {
                    *c = (*c + amount * rng.random_range(-0.15..0.15)).clamp(0.0, 1.0);
                }
                g
            })
            .collect()
    }
}

/// Output of the synthetic generator: frames plus per-distractor masks
/// (usable as a ground-truth track store).
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub frames: Vec<Frame>,
    /// `distractor_masks[d][i]`: mask of distractor `d` in frame `i`.
    pub distractor_masks: Vec<Vec<Mask>>,
    /// Segmentation/track ID of each distractor.
    pub distractor_ids: Vec<u16>,
}

fn alpha_mask(contrib: &Contributions, width: usize, height: usize) -> Mask {
    let bits = contrib
        .final_transmittance
        .iter()
        .map(|&t| t < 1.0)
        .collect();
    Mask::from_bits(width, height, bits).expect("contribution record matches image")
}

/// Renders every frame of the scripted scene together with its segmentation
/// and ground-truth distractor mask.
pub fn generate_synthetic_sequence(spec: &SyntheticSceneSpec) -> Result<SyntheticSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let statics = spec.static_gaussians();
    let static_owner: Vec<u16> = spec
        .static_objects
        .iter()
        .enumerate()
        .flat_map(|(i, o)| std::iter::repeat_n(spec.static_id(i), o.gaussians.len()))
        .collect();
    let n_d = spec.distractor_scripts.len();
    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut distractor_masks = vec![Vec::with_capacity(spec.n_frames); n_d];

    for i in 0..spec.n_frames {
        let cam = &spec.camera_path[i];
        let (w, h) = (cam.width, cam.height);
        let movers: Vec<Gaussian3D> = (0..n_d).map(|d| spec.distractor_at(d, i)).collect();

        let mut all = statics.clone();
        all.extend(movers.iter().cloned());
        let mut image = render::render_gaussians(&all, cam, spec.background, false)?.image;
        if spec.noise_sigma > 0.0 {
            for p in image.pixels_mut() {
                for c in p.iter_mut() {
                    let u: f64 = rng.random::<f64>() - 0.5;
                    // uniform noise with the requested standard deviation
                    *c = (*c + u * spec.noise_sigma * 12f64.sqrt()).clamp(0.0, 1.0);
                }
            }
        }

        // each distractor alone against a zero background
        let mut per_distractor = Vec::with_capacity(n_d);
        let mut gt = Mask::new(w, h, false);
        for (d, g) in movers.iter().enumerate() {
            let out = render::render_gaussians(std::slice::from_ref(g), cam, [0.0; 3], true)?;
            let m = alpha_mask(out.contributions.as_ref().expect("recorded"), w, h);
            gt.union_with(&m)?;
            distractor_masks[d].push(m.clone());
            per_distractor.push((cam.to_camera(&g.center).z, m));
        }

        // static ownership by largest compositing weight, background wins ties
        let statics_out = render::render_gaussians(&statics, cam, spec.background, true)?;
        let contrib = statics_out.contributions.as_ref().expect("recorded");
        let order = &statics_out.order;
        let mut ids = vec![0u16; w * h];
        let mut weights: Vec<(u16, f64)> = Vec::new();
        for (p, id) in ids.iter_mut().enumerate() {
            weights.clear();
            for e in contrib.pixel(p) {
                let owner = static_owner[order[e.splat as usize]];
                let wgt = e.alpha * e.transmittance;
                match weights.iter_mut().find(|(o, _)| *o == owner) {
                    Some(slot) => slot.1 += wgt,
                    None => weights.push((owner, wgt)),
                }
            }
            let mut best = (0u16, contrib.final_transmittance[p]);
            for &(o, wgt) in &weights {
                if wgt > best.1 {
                    best = (o, wgt);
                }
            }
            *id = best.0;
        }
        // front-most distractor claims its alpha mask
        let mut by_depth: Vec<usize> = (0..n_d).collect();
        by_depth.sort_by(|&a, &b| per_distractor[b].0.total_cmp(&per_distractor[a].0));
        for d in by_depth {
            let did = spec.distractor_id(d);
            for (p, &b) in per_distractor[d].1.bits().iter().enumerate() {
                if b {
                    ids[p] = did;
                }
            }
        }

        let mut frame = Frame::new(i, image, cam.clone())?;
        frame.seg = Some(SegmentationMap::new(w, h, ids)?);
        frame.gt_distractor_mask = Some(gt);
        frames.push(frame);
    }

    Ok(SyntheticSequence {
        frames,
        distractor_masks,
        distractor_ids: (0..n_d).map(|d| spec.distractor_id(d)).collect(),
    })
}

/// Parameters for procedurally building a [`SyntheticSceneSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecipe {
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    pub pixels_per_unit: f64,
    pub background: [f64; 3],
    pub static_objects: usize,
    pub gaussians_per_object: usize,
    /// Half-extent of the square region holding static objects (world units).
    pub extent: f64,
    /// Per-frame camera translation in world units (x, y).
    pub camera_step: [f64; 2],
    pub noise_sigma: f64,
    pub seed: u64,
    pub distractors: Vec<DistractorRecipe>,
}

/// Linear path from `start` to `end`; frames in `[hold_from, hold_until)`
/// stay at the position reached at `hold_from`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistractorRecipe {
    pub color: [f64; 3],
    pub scale: [f64; 3],
    pub opacity: f64,
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub hold: Option<(usize, usize)>,
    pub waypoints: Option<Vec<[f64; 3]>>,
}

impl Default for SceneRecipe {
    fn default() -> Self {
        Self {
            n_frames: 8,
            width: 64,
            height: 64,
            pixels_per_unit: 16.0,
            background: [0.15, 0.2, 0.25],
            static_objects: 5,
            gaussians_per_object: 4,
            extent: 1.4,
            camera_step: [0.0, 0.0],
            noise_sigma: 0.0,
            seed: 7,
            distractors: Vec::new(),
        }
    }
}

impl DistractorRecipe {
    pub fn waypoints(&self, n_frames: usize) -> Vec<Vector3<f64>> {
        if let Some(w) = &self.waypoints {
            return w.iter().map(|p| Vector3::from(*p)).collect();
        }
        let start = Vector3::from(self.start);
        let end = Vector3::from(self.end);
        let denom = (n_frames.max(2) - 1) as f64;
        let held = self.hold.map_or(0, |(from, until)| until.saturating_sub(from + 1));
        let span = (denom - held as f64).max(1.0);
        (0..n_frames)
            .map(|i| {
                let k = match self.hold {
                    Some((from, until)) if i >= from && i < until => from,
                    Some((_, until)) if i >= until => i - held,
                    _ => i,
                };
                start + (end - start) * (k as f64 / span).min(1.0)
            })
            .collect()
    }
}

impl SceneRecipe {
    /// Eight drifting frames, mild sensor noise and two distractors that
    /// cross the scene on different paths.
    pub fn dynamic_demo() -> Self {
        Self {
            camera_step: [0.06, 0.03],
            noise_sigma: 0.01,
            distractors: vec![
                DistractorRecipe {
                    color: [0.95, 0.9, 0.1],
                    scale: [0.4, 0.4, 0.1],
                    opacity: 0.95,
                    start: [-1.6, 1.5, 0.2],
                    end: [1.6, 0.6, 0.2],
                    hold: None,
                    waypoints: None,
                },
                DistractorRecipe {
                    color: [0.9, 0.1, 0.8],
                    scale: [0.35, 0.45, 0.1],
                    opacity: 0.95,
                    start: [1.2, 1.5, 0.1],
                    end: [-1.0, -1.5, 0.1],
                    hold: None,
                    waypoints: None,
                },
            ],
            ..Self::default()
        }
    }

    /// A single distractor parked for the first half of the sequence, then
    /// driving off. The camera pans far enough that the parking spot leaves
    /// the view once the distractor moves, so only the parked frames ever
    /// observe that spot.
    pub fn stopping_demo() -> Self {
        let mut r = Self::dynamic_demo();
        r.camera_step = [0.45, 0.0];
        r.noise_sigma = 0.0;
        r.static_objects = 14;
        r.extent = 3.4;
        r.distractors = vec![DistractorRecipe {
            color: [0.9, 0.15, 0.1],
            scale: [0.4, 0.3, 0.1],
            opacity: 0.95,
            start: [-1.6, 1.5, 0.2],
            end: [4.0, 0.6, 0.2],
            hold: Some((0, r.n_frames / 2)),
            waypoints: None,
        }];
        r
    }

    pub fn build(&self) -> Result<SyntheticSceneSpec> {
        if self.n_frames == 0 {
            return Err(Error::Invalid("scene needs at least one frame".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut next_id = 0u64;
        let mut static_objects = Vec::with_capacity(self.static_objects);
        for _ in 0..self.static_objects {
            let cx = rng.random_range(-self.extent..self.extent);
            let cy = rng.random_range(-self.extent..self.extent);
            let cz = rng.random_range(0.5..1.5);
            let base = [
                rng.random_range(0.2..0.95),
                rng.random_range(0.2..0.95),
                rng.random_range(0.2..0.95),
            ];
            let mut gaussians = Vec::with_capacity(self.gaussians_per_object);
            for _ in 0..self.gaussians_per_object {
                let off = Vector3::new(
                    rng.random_range(-0.25..0.25),
                    rng.random_range(-0.25..0.25),
                    rng.random_range(-0.1..0.1),
                );
                let scale = Vector3::new(
                    rng.random_range(0.12..0.3),
                    rng.random_range(0.12..0.3),
                    rng.random_range(0.05..0.2),
                );
                let angle: f64 = rng.random_range(-1.5..1.5);
                let q = [(angle / 2.0).cos(), 0.0, 0.0, (angle / 2.0).sin()];
                let color = base.map(|c: f64| (c + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0));
                let mut g = Gaussian3D::new(
                    Vector3::new(cx, cy, cz) + off,
                    scale,
                    rng.random_range(0.85..0.97),
                    color,
                )
                .with_rotation(q);
                g.id = next_id;
                next_id += 1;
                gaussians.push(g);
            }
            static_objects.push(SceneObject { gaussians });
        }

        let distractor_scripts = self
            .distractors
            .iter()
            .map(|d| {
                let mut template = Gaussian3D::new(
                    Vector3::from(d.start),
                    Vector3::from(d.scale),
                    d.opacity,
                    d.color,
                );
                template.id = next_id;
                next_id += 1;
                DistractorScript {
                    template,
                    waypoints: d.waypoints(self.n_frames),
                }
            })
            .collect();

        let camera_path = (0..self.n_frames)
            .map(|i| {
                let mut cam = OrthoCamera::identity(self.pixels_per_unit, self.width, self.height);
                cam.translation = Vector3::new(
                    -self.camera_step[0] * i as f64,
                    -self.camera_step[1] * i as f64,
                    0.0,
                );
                cam
            })
            .collect();

        let spec = SyntheticSceneSpec {
            static_objects,
            distractor_scripts,
            n_frames: self.n_frames,
            camera_path,
            background: self.background,
            noise_sigma: self.noise_sigma,
            rng_seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// One camera per line: `index ppu width height r00 r01 .. r22 tx ty tz`.
pub fn cameras_text(cameras: &[OrthoCamera]) -> String {
    let mut out = String::from("# index pixels_per_unit width height r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz\n");
    for (i, c) in cameras.iter().enumerate() {
        let mut fields = vec![i.to_string(), c.pixels_per_unit.to_string(), c.width.to_string(), c.height.to_string()];
        for r in 0..3 {
            for k in 0..3 {
                fields.push(c.rotation[(r, k)].to_string());
            }
        }
        fields.extend(c.translation.iter().map(|v| v.to_string()));
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_cameras(path: &Path, cameras: &[OrthoCamera]) -> Result<()> {
    std::fs::write(path, cameras_text(cameras)).map_err(|e| Error::io(path, e))
}

/// Reads a camera file; lines must be in index order starting at 0.
pub fn read_cameras(path: &Path) -> Result<Vec<OrthoCamera>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cams = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::parse(path, format!("line {}: {what}", n + 1));
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 16 {
            return Err(bad("expected 16 fields"));
        }
        let index: usize = tok[0].parse().map_err(|_| bad("bad index"))?;
        if index != cams.len() {
            return Err(bad("camera indices must run 0, 1, 2, ..."));
        }
        let f: Vec<f64> = tok[4..]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("bad number"))?;
        let ppu: f64 = tok[1].parse().map_err(|_| bad("bad pixels_per_unit"))?;
        let width: usize = tok[2].parse().map_err(|_| bad("bad width"))?;
        let height: usize = tok[3].parse().map_err(|_| bad("bad height"))?;
        let rotation = Matrix3::from_row_slice(&f[..9]);
        let translation = Vector3::new(f[9], f[10], f[11]);
        cams.push(OrthoCamera::new(rotation, translation, ppu, width, height).map_err(|e| bad(&e.to_string()))?);
    }
    Ok(cams)
}

const GAUSSIAN_PROPS: [(&str, ScalarType); 19] = [
    ("x", ScalarType::F64),
    ("y", ScalarType::F64),
    ("z", ScalarType::F64),
    ("scale_0", ScalarType::F64),
    ("scale_1", ScalarType::F64),
    ("scale_2", ScalarType::F64),
    ("rot_0", ScalarType::F64),
    ("rot_1", ScalarType::F64),
    ("rot_2", ScalarType::F64),
    ("rot_3", ScalarType::F64),
    ("opacity", ScalarType::F64),
    ("color_r", ScalarType::F64),
    ("color_g", ScalarType::F64),
    ("color_b", ScalarType::F64),
    ("red", ScalarType::U8),
    ("green", ScalarType::U8),
    ("blue", ScalarType::U8),
    ("id", ScalarType::F64),
    ("voxel_id", ScalarType::I32),
];

/// Writes Gaussians as PLY vertices. `scale_*` are log-scales, `rot_*` the
/// `(w, x, y, z)` quaternion and `opacity` the pre-sigmoid logit. The 8-bit
/// `red/green/blue` copy is only there for point-cloud viewers and is
/// ignored on read. `voxel_id` is -1 for unassigned Gaussians.
pub fn write_gaussians_ply(path: &Path, gaussians: &[Gaussian3D]) -> Result<()> {
    let rows: Vec<Vec<f64>> = gaussians
        .iter()
        .map(|g| {
            let mut row = g.params().to_vec();
            row.extend(g.color.iter().map(|c| (c.clamp(0.0, 1.0) * 255.0).round()));
            row.push(g.id as f64);
            row.push(g.voxel_id.map_or(-1.0, |v| v as f64));
            row
        })
        .collect();
    ply::write(path, ply::Format::BinaryLittleEndian, "vertex", &GAUSSIAN_PROPS, &rows)
}

pub fn read_gaussians_ply(path: &Path) -> Result<Vec<Gaussian3D>> {
    let elements = ply::read(path)?;
    let el = elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(path, "no vertex element"))?;
    let mut cols = Vec::with_capacity(PARAM_COUNT + 2);
    for (name, _) in GAUSSIAN_PROPS.iter().take(PARAM_COUNT).chain(&GAUSSIAN_PROPS[17..]) {
        cols.push(el.column(name).ok_or_else(|| Error::parse(path, format!("missing property {name}")))?);
    }
    el.rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let mut p = [0.0; PARAM_COUNT];
            for (k, slot) in p.iter_mut().enumerate() {
                *slot = row[cols[k]];
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(path, format!("vertex {r} has a non-finite parameter")));
            }
            let mut g = Gaussian3D::new(Vector3::zeros(), Vector3::repeat(1.0), 0.5, [0.0; 3]);
            g.set_params(&p);
            g.id = row[cols[PARAM_COUNT]] as u64;
            let v = row[cols[PARAM_COUNT + 1]];
            g.voxel_id = (v >= 0.0).then_some(v as usize);
            Ok(g)
        })
        .collect()
}

/// Small scene for exercising the voxel guide.
///
/// The sparse cloud spans exactly two voxels of length 0.25 at `N = 1`.
/// Voxel A holds a well-observed three-Gaussian object. Voxel B holds one
/// stray Gaussian from a spurious point. The views also show a patch that
/// the cloud missed, close enough to pull the stray out of its voxel.
#[derive(Debug, Clone)]
pub struct GuideFixture {
    pub frames: Vec<Frame>,
    pub init: Vec<Gaussian3D>,
    pub sample_points: Vec<Vector3<f64>>,
    pub background: [f64; 3],
}

pub fn two_voxel_fixture() -> Result<GuideFixture> {
    let background = [0.1, 0.1, 0.12];
    let v = Vector3::new;
    let object = [
        Gaussian3D::new(v(0.08, 0.10, 1.10), v(0.06, 0.05, 0.05), 0.9, [0.85, 0.2, 0.15]),
        Gaussian3D::new(v(0.16, 0.15, 1.12), v(0.05, 0.07, 0.05), 0.9, [0.8, 0.35, 0.1]),
        Gaussian3D::new(v(0.12, 0.06, 1.15), v(0.07, 0.04, 0.05), 0.9, [0.9, 0.25, 0.3]),
    ];
    let patch = Gaussian3D::new(v(1.3, 0.125, 1.5), v(0.3, 0.3, 0.05), 0.9, [0.2, 0.8, 0.25]);
    let truth: Vec<Gaussian3D> = object.iter().cloned().chain([patch]).collect();
    let mut frames = Vec::new();
    for (i, (dx, dy)) in [(0.0, 0.0), (0.05, 0.0), (0.0, 0.05), (-0.05, -0.03)].into_iter().enumerate() {
        let mut cam = OrthoCamera::identity(32.0, 64, 64);
        cam.translation = v(-0.7 + dx, -0.125 + dy, 0.0);
        let image = render::render_gaussians(&truth, &cam, background, false)?.image;
        frames.push(Frame::new(i, image, cam)?);
    }
    let mut init: Vec<Gaussian3D> = object
        .iter()
        .map(|g| {
            let mut g = g.clone();
            g.center.x += 0.01;
            g
        })
        .collect();
    init.push(Gaussian3D::new(v(0.48, 0.125, 1.05), v(0.3, 0.3, 0.05), 0.5, [0.2, 0.8, 0.25]));
    for (i, g) in init.iter_mut().enumerate() {
        g.id = i as u64;
    }
    let sample_points = vec![v(0.0, 0.0, 1.0), v(0.5, 0.25, 1.25), v(0.1, 0.1, 1.1), v(0.48, 0.125, 1.05)];
    Ok(GuideFixture {
        frames,
        init,
        sample_points,
        background,
    })
}
