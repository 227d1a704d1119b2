//! Progressive multi-view alignment in overlapping windows.
//!
//! A pairwise stereo predictor can only digest `N` frames at a time. Frames
//! are therefore processed in windows of `N` with stride `N/2`; the first
//! half of every window after the first is already aligned and its poses are
//! handed to the predictor as fixed. Results are merged so that every frame
//! contributes its poses and points exactly once.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Camera pose: unit quaternion `(w, x, y, z)` and translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0; 3],
        }
    }

    pub fn from_parts(q: UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Self {
            rotation: [q.w, q.i, q.j, q.k],
            translation: [t.x, t.y, t.z],
        }
    }

    /// Equality of the underlying bit patterns.
    pub fn bitwise_eq(&self, other: &Pose) -> bool {
        self.rotation.iter().zip(&other.rotation).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.translation.iter().zip(&other.translation).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignWindow {
    pub frame_indices: Vec<usize>,
    /// Leading frames whose poses come from earlier windows.
    pub fixed_prefix: usize,
}

impl AlignWindow {
    pub fn start(&self) -> usize {
        self.frame_indices[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaggedPoint {
    pub position: [f64; 3],
    pub confidence: f64,
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorResult {
    /// One pose per window frame, in window order.
    pub poses: Vec<Pose>,
    pub points: Vec<TaggedPoint>,
}

/// Multi-view predictor over a window of frames. `fixed` holds the poses of
/// the first `fixed.len()` frames, which must be returned unchanged.
pub trait PairwisePredictor {
    fn predict(&mut self, frames: &[usize], fixed: &[Pose]) -> Result<PredictorResult>;
}

/// Windows of `n` frames with stride `n/2`; the last window ends at
/// `total` and is fixed over its whole overlap with the previous one.
pub fn plan_windows(total: usize, n: usize) -> Result<Vec<AlignWindow>> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::Config(format!("window size {n} must be even and at least 2")));
    }
    if total == 0 {
        return Err(Error::Invalid("no frames to align".into()));
    }
    if total <= n {
        return Ok(vec![AlignWindow {
            frame_indices: (0..total).collect(),
            fixed_prefix: 0,
        }]);
    }
    let half = n / 2;
    let mut windows = Vec::new();
    let mut start = 0;
    while start + n <= total {
        windows.push(AlignWindow {
            frame_indices: (start..start + n).collect(),
            fixed_prefix: if start == 0 { 0 } else { half },
        });
        start += half;
    }
    let covered = start - half + n;
    if covered < total {
        let s = total - n;
        windows.push(AlignWindow {
            frame_indices: (s..total).collect(),
            fixed_prefix: covered - s,
        });
    }
    Ok(windows)
}

/// Windows as TSV: `start`, comma-separated indices, `fixed_prefix`.
pub fn windows_tsv(windows: &[AlignWindow]) -> String {
    let mut s = String::from("start\tindices\tfixed_prefix\n");
    for w in windows {
        let idx: Vec<String> = w.frame_indices.iter().map(usize::to_string).collect();
        writeln!(s, "{}\t{}\t{}", w.start(), idx.join(","), w.fixed_prefix).unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// Pose of frame `i` at index `i`.
    pub poses: Vec<Pose>,
    pub points: Vec<TaggedPoint>,
    pub windows: Vec<AlignWindow>,
}

/// Runs the predictor window by window and merges the results.
pub fn run_alignment(total: usize, n: usize, predictor: &mut dyn PairwisePredictor) -> Result<AlignmentResult> {
    let windows = plan_windows(total, n)?;
    let mut poses: Vec<Option<Pose>> = vec![None; total];
    let mut points = Vec::new();
    let mut first_window = vec![None; total];
    for (wi, w) in windows.iter().enumerate() {
        for &f in &w.frame_indices {
            first_window[f].get_or_insert(wi);
        }
    }
    for (wi, w) in windows.iter().enumerate() {
        let fixed: Vec<Pose> = w.frame_indices[..w.fixed_prefix]
            .iter()
            .map(|&f| poses[f].expect("fixed frames were aligned by an earlier window"))
            .collect();
        let out = predictor.predict(&w.frame_indices, &fixed)?;
        let fail = |message: String| Error::Alignment { window: wi, message };
        if out.poses.len() != w.frame_indices.len() {
            return Err(fail(format!(
                "{} poses returned for {} frames",
                out.poses.len(),
                w.frame_indices.len()
            )));
        }
        for (k, (got, want)) in out.poses.iter().zip(&fixed).enumerate() {
            if !got.bitwise_eq(want) {
                return Err(fail(format!("fixed pose of frame {} was altered", w.frame_indices[k])));
            }
        }
        for (&f, p) in w.frame_indices.iter().zip(&out.poses) {
            if poses[f].is_none() {
                poses[f] = Some(*p);
            }
        }
        // points of a frame come from the first window that saw it
        for p in out.points {
            match first_window.get(p.frame) {
                Some(&Some(first)) if w.frame_indices.contains(&p.frame) => {
                    if first == wi {
                        points.push(p);
                    }
                }
                _ => return Err(fail(format!("point tagged with foreign frame {}", p.frame))),
            }
        }
    }
    Ok(AlignmentResult {
        poses: poses.into_iter().map(|p| p.expect("every frame is covered")).collect(),
        points,
        windows,
    })
}

/// Trajectory text: `frame qw qx qy qz tx ty tz` per line.
pub fn trajectory_text(poses: &[Pose]) -> String {
    let mut s = String::from("# frame qw qx qy qz tx ty tz\n");
    for (i, p) in poses.iter().enumerate() {
        let r = p.rotation;
        let t = p.translation;
        writeln!(s, "{i} {} {} {} {} {} {} {}", r[0], r[1], r[2], r[3], t[0], t[1], t[2]).unwrap();
    }
    s
}

pub fn write_trajectory(poses: &[Pose], path: &Path) -> Result<()> {
    std::fs::write(path, trajectory_text(poses)).map_err(|e| Error::io(path, e))
}

/// Oracle predictor returning ground truth restricted to each window while
/// passing fixed poses through untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPredictor {
    pub poses: Vec<Pose>,
    /// World-space points observed by each frame.
    pub points: Vec<Vec<TaggedPoint>>,
    pub calls: usize,
}

impl SyntheticPredictor {
    pub fn new(poses: Vec<Pose>, points: Vec<Vec<TaggedPoint>>) -> Self {
        Self { poses, points, calls: 0 }
    }

    /// A smooth random trajectory with a few points per frame.
    pub fn random(total: usize, points_per_frame: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut poses = Vec::with_capacity(total);
        let mut points = Vec::with_capacity(total);
        let mut pos = Vector3::zeros();
        let mut yaw = 0.0f64;
        for f in 0..total {
            pos += Vector3::new(rng.random_range(0.5..1.0), rng.random_range(-0.2..0.2), rng.random_range(-0.05..0.05));
            yaw += rng.random_range(-0.1..0.1);
            let q = UnitQuaternion::from_euler_angles(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), yaw);
            poses.push(Pose::from_parts(q, pos));
            points.push(
                (0..points_per_frame)
                    .map(|_| TaggedPoint {
                        position: [
                            pos.x + rng.random_range(-2.0..2.0),
                            pos.y + rng.random_range(-2.0..2.0),
                            rng.random_range(-0.5..0.5),
                        ],
                        confidence: rng.random_range(0.1..1.0),
                        frame: f,
                    })
                    .collect(),
            );
        }
        Self::new(poses, points)
    }
}

impl PairwisePredictor for SyntheticPredictor {
    fn predict(&mut self, frames: &[usize], fixed: &[Pose]) -> Result<PredictorResult> {
        self.calls += 1;
        if fixed.len() > frames.len() {
            return Err(Error::Invalid("more fixed poses than frames".into()));
        }
        let mut poses = Vec::with_capacity(frames.len());
        let mut points = Vec::new();
        for (k, &f) in frames.iter().enumerate() {
            let truth = self
                .poses
                .get(f)
                .ok_or_else(|| Error::Invalid(format!("frame {f} unknown to the predictor")))?;
            poses.push(fixed.get(k).copied().unwrap_or(*truth));
            points.extend_from_slice(&self.points[f]);
        }
        Ok(PredictorResult { poses, points })
    }
}
