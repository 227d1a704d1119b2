//! Masked optimization loop.
//!
//! Frames are visited round-robin. Each iteration renders the current
//! Gaussians, asks the mask provider which pixels to keep, back-propagates
//! the masked L1 loss and takes one Adam step. With a voxel guide attached,
//! updates of drifting Gaussians are damped and the guide prunes and
//! densifies at its own cadence.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::guide::{self, DensifyReport, GuideConfig, GuideGrid, PruneReport};
use crate::image::{Image, Mask};
use crate::masking::AdaptiveMasker;
use crate::render::{self, ParamGrad};
use crate::scene::{Frame, Gaussian3D, PARAM_COUNT};

/// Per-group Adam step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 2e-3,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 0.05,
            color: 0.01,
        }
    }
}

impl LearningRates {
    fn per_param(&self) -> [f64; PARAM_COUNT] {
        let mut lr = [0.0; PARAM_COUNT];
        lr[0..3].fill(self.position);
        lr[3..6].fill(self.scale);
        lr[6..10].fill(self.rotation);
        lr[10] = self.opacity;
        lr[11..14].fill(self.color);
        lr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: LearningRates,
    /// Weight of the D-SSIM column in the reported total loss.
    pub lambda_dssim: f64,
    pub background: [f64; 3],
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 7000,
            lr: LearningRates::default(),
            lambda_dssim: 0.2,
            background: [0.0; 3],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
        }
    }
}

/// Source of per-frame keep masks (true = pixel enters the loss).
pub trait MaskProvider {
    /// `None` keeps every pixel.
    fn keep_mask(&mut self, iteration: usize, frame_pos: usize, frame: &Frame, render: &Image) -> Result<Option<Mask>>;
}

/// Keeps every pixel.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoMasking;

impl MaskProvider for NoMasking {
    fn keep_mask(&mut self, _: usize, _: usize, _: &Frame, _: &Image) -> Result<Option<Mask>> {
        Ok(None)
    }
}

/// Uses each frame's ground-truth distractor mask.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleMasking;

impl MaskProvider for OracleMasking {
    fn keep_mask(&mut self, _: usize, _: usize, frame: &Frame, _: &Image) -> Result<Option<Mask>> {
        Ok(frame.gt_distractor_mask.as_ref().map(Mask::inverted))
    }
}

impl MaskProvider for AdaptiveMasker {
    fn keep_mask(&mut self, iteration: usize, frame_pos: usize, frame: &Frame, render: &Image) -> Result<Option<Mask>> {
        if iteration < self.config.activation_iter {
            return Ok(None);
        }
        let seg = frame
            .seg
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("frame {} has no segmentation", frame.index)))?;
        let distractors = self.evaluate(frame_pos, render, &frame.image, seg, iteration)?;
        Ok(Some(distractors.inverted()))
    }
}

/// Guide state owned by a training run.
#[derive(Debug, Clone)]
pub struct VoxelGuide {
    pub grid: GuideGrid,
    pub config: GuideConfig,
    pub history: Vec<GuideStep>,
}

impl VoxelGuide {
    pub fn new(grid: GuideGrid, config: GuideConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            grid,
            config,
            history: Vec::new(),
        })
    }
}

/// What happened at one guide cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct GuideStep {
    pub iteration: usize,
    /// Voxels violating `γ2`/`γ3` just before pruning.
    pub violations_before_prune: Vec<usize>,
    pub pruned: PruneReport,
    /// Violating voxels left right after pruning (always expected empty).
    pub violations_after_prune: usize,
    pub densified: DensifyReport,
    pub alive_voxels: usize,
    pub gaussians: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    pub frame: usize,
    pub l1: f64,
    pub dssim: f64,
    pub total: f64,
    pub n_gaussians: usize,
    /// Fraction of pixels excluded from the loss.
    pub masked_fraction: f64,
}

pub fn log_csv(log: &[LogRecord]) -> String {
    let mut s = String::from("iteration,frame,l1,dssim,total,n_gaussians,masked_fraction\n");
    for r in log {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.iteration, r.frame, r.l1, r.dssim, r.total, r.n_gaussians, r.masked_fraction
        )
        .unwrap();
    }
    s
}

pub fn write_log_csv(log: &[LogRecord], path: &Path) -> Result<()> {
    std::fs::write(path, log_csv(log)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy)]
struct Moments {
    m: [f64; PARAM_COUNT],
    v: [f64; PARAM_COUNT],
    steps: i32,
}

/// Adam with per-Gaussian state keyed by Gaussian ID.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: [f64; PARAM_COUNT],
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    state: HashMap<u64, Moments>,
}

impl Adam {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            lr: config.lr.per_param(),
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            state: HashMap::new(),
        }
    }

    /// Parameter delta for one Gaussian.
    pub fn step(&mut self, id: u64, grad: &ParamGrad) -> [f64; PARAM_COUNT] {
        let st = self.state.entry(id).or_insert(Moments {
            m: [0.0; PARAM_COUNT],
            v: [0.0; PARAM_COUNT],
            steps: 0,
        });
        st.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(st.steps);
        let bc2 = 1.0 - self.beta2.powi(st.steps);
        let mut delta = [0.0; PARAM_COUNT];
        for i in 0..PARAM_COUNT {
            st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * grad[i];
            st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = st.m[i] / bc1;
            let vh = st.v[i] / bc2;
            delta[i] = -self.lr[i] * mh / (vh.sqrt() + self.epsilon);
        }
        delta
    }

    pub fn forget(&mut self, keep: impl Fn(u64) -> bool) {
        self.state.retain(|id, _| keep(*id));
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub gaussians: Vec<Gaussian3D>,
    pub log: Vec<LogRecord>,
}

/// Runs `config.iterations` optimization steps.
pub fn train(
    init: &[Gaussian3D],
    frames: &[Frame],
    config: &TrainConfig,
    masks: &mut dyn MaskProvider,
    mut guide: Option<&mut VoxelGuide>,
) -> Result<TrainOutput> {
    if frames.is_empty() {
        return Err(Error::Invalid("training needs at least one frame".into()));
    }
    if !(0.0..=1.0).contains(&config.lambda_dssim) {
        return Err(Error::Config("lambda_dssim must lie in [0, 1]".into()));
    }
    let mut gaussians = init.to_vec();
    let mut adam = Adam::new(config);
    let mut next_id = gaussians.iter().map(|g| g.id).max().map_or(0, |m| m + 1);
    let mut log = Vec::with_capacity(config.iterations);
    if let Some(gd) = guide.as_deref_mut() {
        guide::check_consistency(&gaussians, &gd.grid)?;
        guide::update_flags(&mut gaussians, &gd.grid, &gd.config);
    }

    for t in 0..config.iterations {
        let pos = t % frames.len();
        let frame = &frames[pos];
        let fwd = render::render_gaussians(&gaussians, &frame.camera, config.background, true)?;
        let keep = masks
            .keep_mask(t, pos, frame, &fwd.image)?
            .unwrap_or_else(|| Mask::new(frame.image.width(), frame.image.height(), true));
        let (l1, grads) = render::backward_l1(&gaussians, frame, &keep, &fwd)?;
        let breakdown = render::masked_loss(&fwd.image, &frame.image, &keep, config.lambda_dssim)?;
        if !breakdown.total.is_finite() || !l1.is_finite() {
            return Err(Error::NonFinite {
                iteration: t,
                detail: format!(
                    "frame {} with {} gaussians: l1 {l1}, dssim {}",
                    frame.index,
                    gaussians.len(),
                    breakdown.dssim
                ),
            });
        }
        log.push(LogRecord {
            iteration: t,
            frame: frame.index,
            l1,
            dssim: breakdown.dssim,
            total: breakdown.total,
            n_gaussians: gaussians.len(),
            masked_fraction: 1.0 - keep.count() as f64 / keep.bits().len() as f64,
        });

        for (g, grad) in gaussians.iter_mut().zip(&grads) {
            let factor = match guide.as_deref() {
                Some(gd) => g
                    .voxel_id
                    .and_then(|v| gd.grid.voxels.get(&v))
                    .map_or(1.0, |v| guide::decay_factor(g, v, &gd.config)),
                None => 1.0,
            };
            let pos_grad = nalgebra::Vector3::new(grad[0], grad[1], grad[2]) * factor;
            g.grad_accum += pos_grad.norm();
            g.grad_dir += pos_grad;
            g.grad_steps += 1;
            let delta = adam.step(g.id, grad);
            let mut p = g.params();
            for i in 0..PARAM_COUNT {
                p[i] += factor * delta[i];
            }
            g.set_params(&p);
        }

        if let Some(gd) = guide.as_deref_mut() {
            guide::update_flags(&mut gaussians, &gd.grid, &gd.config);
            if (t + 1) % gd.config.densify_interval == 0 {
                let violations_before_prune = guide::violating_voxels(&gaussians, &gd.grid, &gd.config);
                let pruned = guide::prune_voxels(&mut gaussians, &mut gd.grid, &gd.config);
                let violations_after_prune = guide::violating_voxels(&gaussians, &gd.grid, &gd.config).len();
                let densified = guide::densify(&mut gaussians, &mut gd.grid, &gd.config, &mut next_id);
                for g in gaussians.iter_mut() {
                    g.reset_grad_stats();
                }
                guide::update_flags(&mut gaussians, &gd.grid, &gd.config);
                guide::check_consistency(&gaussians, &gd.grid)?;
                let live: std::collections::HashSet<u64> = gaussians.iter().map(|g| g.id).collect();
                adam.forget(|id| live.contains(&id));
                gd.history.push(GuideStep {
                    iteration: t,
                    violations_before_prune,
                    pruned,
                    violations_after_prune,
                    densified,
                    alive_voxels: gd.grid.alive_count(),
                    gaussians: gaussians.len(),
                });
            }
        }
    }
    Ok(TrainOutput { gaussians, log })
}
