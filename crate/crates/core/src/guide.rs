//! Voxel-guided optimization.
//!
//! Every Gaussian belongs to one voxel of the sampling grid. Gaussians that
//! wander more than `τ` voxel lengths from their voxel center (or grow larger
//! than that) are flagged and their updates decay exponentially with the
//! excess distance. At a fixed cadence, voxels with too few members or too
//! little opacity are pruned, and flagged Gaussians with a strong gradient
//! pointing into an empty voxel are cloned or split into it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::pointcloud::SampleGrid;
use crate::scene::Gaussian3D;

/// Reference point for the drift distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceDatum {
    /// Euclidean distance to the voxel center.
    #[default]
    Center,
    /// Distance to the center minus half a voxel length (never negative).
    HalfLengthOffset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuideConfig {
    /// Drift limit in voxel lengths.
    pub tau: f64,
    /// Mean positional gradient needed for densification.
    pub gamma1: f64,
    /// Minimum members per voxel.
    pub gamma2: usize,
    /// Minimum mean opacity per voxel.
    pub gamma3: f64,
    /// Decay rate of the update multiplier beyond the drift limit.
    pub beta: f64,
    pub densify_interval: usize,
    pub datum: DistanceDatum,
}

impl Default for GuideConfig {
    fn default() -> Self {
        Self {
            tau: 3.5,
            gamma1: 0.003,
            gamma2: 2,
            gamma3: 0.075,
            beta: 1.0,
            densify_interval: 100,
            datum: DistanceDatum::Center,
        }
    }
}

impl GuideConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.gamma1 > 0.0 && self.beta > 0.0) {
            return Err(Error::Config("tau, gamma1 and beta must be positive".into()));
        }
        if self.gamma2 == 0 || self.densify_interval == 0 {
            return Err(Error::Config("gamma2 and densify_interval must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma3) {
            return Err(Error::Config("gamma3 must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuideVoxel {
    pub index: [usize; 3],
    pub center: Vector3<f64>,
    pub length: f64,
    pub members: BTreeSet<u64>,
    pub alive: bool,
}

/// Guide state. Voxels absent from `voxels` are empty and dead.
#[derive(Debug, Clone, PartialEq)]
pub struct GuideGrid {
    pub aabb_min: Vector3<f64>,
    pub voxel_length: f64,
    pub dims: [usize; 3],
    pub voxels: BTreeMap<usize, GuideVoxel>,
}

impl GuideGrid {
    pub fn from_sample_grid(grid: &SampleGrid) -> Self {
        Self {
            aabb_min: grid.aabb_min,
            voxel_length: grid.voxel_length,
            dims: grid.dims,
            voxels: BTreeMap::new(),
        }
    }

    pub fn linear(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    pub fn coords(&self, linear: usize) -> [usize; 3] {
        [
            linear % self.dims[0],
            (linear / self.dims[0]) % self.dims[1],
            linear / (self.dims[0] * self.dims[1]),
        ]
    }

    pub fn center(&self, c: [usize; 3]) -> Vector3<f64> {
        self.aabb_min + Vector3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * self.voxel_length
    }

    /// Unclamped cell coordinates, possibly outside the grid.
    fn cell(&self, p: &Vector3<f64>) -> [i64; 3] {
        let mut c = [0; 3];
        for a in 0..3 {
            c[a] = ((p[a] - self.aabb_min[a]) / self.voxel_length).floor() as i64;
        }
        c
    }

    fn in_grid(&self, c: [i64; 3]) -> Option<[usize; 3]> {
        (0..3)
            .all(|a| c[a] >= 0 && (c[a] as usize) < self.dims[a])
            .then(|| [c[0] as usize, c[1] as usize, c[2] as usize])
    }

    /// Voxel containing `p`, clamped into the grid; the flag reports clamping.
    pub fn locate_clamped(&self, p: &Vector3<f64>) -> ([usize; 3], bool) {
        let c = self.cell(p);
        let mut out = [0; 3];
        let mut clamped = false;
        for a in 0..3 {
            let v = c[a].clamp(0, self.dims[a] as i64 - 1);
            // points on the far faces belong to the last voxel without a warning
            let hi = self.aabb_min[a] + self.dims[a] as f64 * self.voxel_length;
            let tol = 1e-9 * self.voxel_length;
            clamped |= p[a] < self.aabb_min[a] - tol || p[a] > hi + tol;
            out[a] = v as usize;
        }
        (out, clamped)
    }

    pub fn is_alive(&self, linear: usize) -> bool {
        self.voxels.get(&linear).is_some_and(|v| v.alive)
    }

    fn voxel_mut(&mut self, linear: usize) -> &mut GuideVoxel {
        let c = self.coords(linear);
        let center = self.center(c);
        let length = self.voxel_length;
        self.voxels.entry(linear).or_insert_with(|| GuideVoxel {
            index: c,
            center,
            length,
            members: BTreeSet::new(),
            alive: false,
        })
    }

    fn add_member(&mut self, linear: usize, g: &mut Gaussian3D) {
        let v = self.voxel_mut(linear);
        v.members.insert(g.id);
        v.alive = true;
        g.voxel_id = Some(linear);
    }

    pub fn alive_count(&self) -> usize {
        self.voxels.values().filter(|v| v.alive).count()
    }

    /// One line per recorded voxel: `i j k members mean_opacity alive`.
    pub fn dump(&self, gaussians: &[Gaussian3D]) -> String {
        let by_id: BTreeMap<u64, &Gaussian3D> = gaussians.iter().map(|g| (g.id, g)).collect();
        let mut s = String::from("# i j k members mean_opacity alive\n");
        for v in self.voxels.values() {
            let ops: Vec<f64> = v.members.iter().filter_map(|id| by_id.get(id)).map(|g| g.opacity()).collect();
            let mean = if ops.is_empty() { 0.0 } else { ops.iter().sum::<f64>() / ops.len() as f64 };
            writeln!(
                s,
                "{} {} {} {} {:.6} {}",
                v.index[0],
                v.index[1],
                v.index[2],
                v.members.len(),
                mean,
                u8::from(v.alive)
            )
            .unwrap();
        }
        s
    }
}

/// Puts every Gaussian into the voxel containing its center. Gaussians
/// outside the box go to the nearest voxel with a warning.
pub fn assign_initial(gaussians: &mut [Gaussian3D], grid: &SampleGrid) -> GuideGrid {
    let mut guide = GuideGrid::from_sample_grid(grid);
    for g in gaussians.iter_mut() {
        let (c, clamped) = guide.locate_clamped(&g.center);
        if clamped {
            log::warn!("gaussian {} lies outside the sampling box; clamped to voxel {c:?}", g.id);
        }
        let l = guide.linear(c);
        guide.add_member(l, g);
    }
    guide
}

fn drift(g: &Gaussian3D, voxel: &GuideVoxel, datum: DistanceDatum) -> f64 {
    let d = (g.center - voxel.center).norm();
    match datum {
        DistanceDatum::Center => d,
        DistanceDatum::HalfLengthOffset => (d - 0.5 * voxel.length).max(0.0),
    }
}

/// Center clause of the constraint.
pub fn center_violation(g: &Gaussian3D, voxel: &GuideVoxel, config: &GuideConfig) -> bool {
    drift(g, voxel, config.datum) > config.tau * voxel.length
}

pub fn check_constraint(g: &Gaussian3D, voxel: &GuideVoxel, config: &GuideConfig) -> bool {
    center_violation(g, voxel, config) || g.max_scale() > config.tau * voxel.length
}

/// `exp(-β·(d - τL)/L)` for Gaussians beyond the drift limit, else 1.
pub fn decay_factor(g: &Gaussian3D, voxel: &GuideVoxel, config: &GuideConfig) -> f64 {
    let excess = drift(g, voxel, config.datum) - config.tau * voxel.length;
    if excess > 0.0 {
        (-config.beta * excess / voxel.length).exp()
    } else {
        1.0
    }
}

pub fn decay_gradient<const N: usize>(grad: &[f64; N], g: &Gaussian3D, voxel: &GuideVoxel, config: &GuideConfig) -> [f64; N] {
    let f = decay_factor(g, voxel, config);
    if f == 1.0 {
        return *grad;
    }
    grad.map(|v| v * f)
}

/// Refreshes `unconstrained` on every assigned Gaussian.
pub fn update_flags(gaussians: &mut [Gaussian3D], guide: &GuideGrid, config: &GuideConfig) {
    for g in gaussians.iter_mut() {
        g.unconstrained = g
            .voxel_id
            .and_then(|v| guide.voxels.get(&v))
            .is_some_and(|v| check_constraint(g, v, config));
    }
}

/// Voxel entered when leaving the cell that contains `origin` along `dir`,
/// or `None` when the ray leaves the grid or `origin` is outside it.
pub fn exit_voxel(guide: &GuideGrid, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<usize> {
    let start = guide.in_grid(guide.cell(origin))?;
    let mut best: Option<(f64, usize, i64)> = None;
    for a in 0..3 {
        if dir[a] == 0.0 {
            continue;
        }
        let lo = guide.aabb_min[a] + start[a] as f64 * guide.voxel_length;
        let (bound, step) = if dir[a] > 0.0 { (lo + guide.voxel_length, 1) } else { (lo, -1) };
        let t = (bound - origin[a]) / dir[a];
        if best.is_none_or(|(bt, _, _)| t < bt) {
            best = Some((t, a, step));
        }
    }
    let (_, axis, step) = best?;
    let mut next = [start[0] as i64, start[1] as i64, start[2] as i64];
    next[axis] += step;
    guide.in_grid(next).map(|c| guide.linear(c))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub revived: Vec<usize>,
}

/// Clones or splits flagged Gaussians whose mean positional gradient is at
/// least `γ1` and whose descent direction leads straight into an empty
/// voxel. New Gaussians take IDs from `next_id`.
pub fn densify(gaussians: &mut Vec<Gaussian3D>, guide: &mut GuideGrid, config: &GuideConfig, next_id: &mut u64) -> DensifyReport {
    let mut report = DensifyReport::default();
    let mut out = Vec::with_capacity(gaussians.len());
    for mut g in std::mem::take(gaussians) {
        let mean_grad = if g.grad_steps > 0 { g.grad_accum / g.grad_steps as f64 } else { 0.0 };
        let dir = -g.grad_dir;
        let target = (g.unconstrained && mean_grad >= config.gamma1 && dir.norm() > 0.0)
            .then(|| exit_voxel(guide, &g.center, &dir.normalize()))
            .flatten()
            .filter(|&v| !guide.is_alive(v));
        let Some(target) = target else {
            out.push(g);
            continue;
        };
        let dir = dir.normalize();
        let len = guide.voxel_length;
        if g.max_scale() < 0.5 * len {
            let mut child = g.clone();
            child.id = *next_id;
            *next_id += 1;
            child.center += dir * len;
            child.reset_grad_stats();
            child.unconstrained = false;
            guide.add_member(target, &mut child);
            g.reset_grad_stats();
            out.push(g);
            out.push(child);
            report.cloned += 1;
        } else {
            let s = g.scale();
            let axis_idx = s.imax();
            let axis = g.rotation_matrix().column(axis_idx).into_owned();
            let offset = axis * (0.8 * s[axis_idx]);
            let forward_sign = if offset.dot(&dir) >= 0.0 { 1.0 } else { -1.0 };
            let parent_voxel = g.voxel_id;
            if let Some(pv) = parent_voxel.and_then(|v| guide.voxels.get_mut(&v)) {
                pv.members.remove(&g.id);
            }
            for sign in [forward_sign, -forward_sign] {
                let mut child = g.clone();
                child.id = *next_id;
                *next_id += 1;
                child.center = g.center + offset * sign;
                child.log_scale = g.log_scale.map(|v| v - 1.6f64.ln());
                child.reset_grad_stats();
                child.unconstrained = false;
                if sign == forward_sign {
                    guide.add_member(target, &mut child);
                } else if let Some(pv) = parent_voxel {
                    guide.add_member(pv, &mut child);
                }
                out.push(child);
            }
            report.split += 1;
        }
        report.revived.push(target);
    }
    *gaussians = out;
    report
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PruneReport {
    pub voxels: Vec<usize>,
    pub removed: usize,
}

/// Alive voxels with fewer than `γ2` members or mean opacity below `γ3`.
pub fn violating_voxels(gaussians: &[Gaussian3D], guide: &GuideGrid, config: &GuideConfig) -> Vec<usize> {
    let opacity: BTreeMap<u64, f64> = gaussians.iter().map(|g| (g.id, g.opacity())).collect();
    guide
        .voxels
        .iter()
        .filter(|(_, v)| v.alive)
        .filter(|(_, v)| {
            if v.members.len() < config.gamma2 {
                return true;
            }
            let mean = v.members.iter().map(|id| opacity.get(id).copied().unwrap_or(0.0)).sum::<f64>()
                / v.members.len() as f64;
            mean < config.gamma3
        })
        .map(|(&l, _)| l)
        .collect()
}

/// Kills every violating voxel and deletes its members from the scene.
pub fn prune_voxels(gaussians: &mut Vec<Gaussian3D>, guide: &mut GuideGrid, config: &GuideConfig) -> PruneReport {
    let doomed = violating_voxels(gaussians, guide, config);
    let mut dead_ids = BTreeSet::new();
    for l in &doomed {
        let v = guide.voxels.get_mut(l).expect("violating voxel exists");
        v.alive = false;
        dead_ids.extend(std::mem::take(&mut v.members));
    }
    let before = gaussians.len();
    gaussians.retain(|g| !dead_ids.contains(&g.id));
    PruneReport {
        voxels: doomed,
        removed: before - gaussians.len(),
    }
}

/// Checks that membership lists and `voxel_id` fields agree and that every
/// Gaussian sits in exactly one live voxel.
pub fn check_consistency(gaussians: &[Gaussian3D], guide: &GuideGrid) -> Result<()> {
    let mut seen = BTreeMap::new();
    for g in gaussians {
        let v = g
            .voxel_id
            .ok_or_else(|| Error::Invalid(format!("gaussian {} has no voxel", g.id)))?;
        let vox = guide
            .voxels
            .get(&v)
            .filter(|x| x.alive)
            .ok_or_else(|| Error::Invalid(format!("gaussian {} assigned to dead voxel {v}", g.id)))?;
        if !vox.members.contains(&g.id) {
            return Err(Error::Invalid(format!("voxel {v} does not list gaussian {}", g.id)));
        }
        if seen.insert(g.id, v).is_some() {
            return Err(Error::Invalid(format!("duplicate gaussian id {}", g.id)));
        }
    }
    for (l, v) in &guide.voxels {
        if !v.alive && !v.members.is_empty() {
            return Err(Error::Invalid(format!("dead voxel {l} still has members")));
        }
        for id in &v.members {
            if seen.get(id) != Some(l) {
                return Err(Error::Invalid(format!("voxel {l} lists missing or foreign gaussian {id}")));
            }
        }
    }
    Ok(())
}
