//! Geometry-aware point sampling.
//!
//! Each point is scored by its confidence times the L2 norm of its
//! normalized FPFH descriptor. The cloud's bounding box is cut into cubic
//! voxels (the shortest edge split into `n` pieces) and the `k` best points
//! of every voxel are kept.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::num::NonZero;
use std::path::Path;

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ply::{self, Format, ScalarType};

pub const FPFH_BINS: usize = 11;
pub const FPFH_LEN: usize = 3 * FPFH_BINS;
/// Lower bound on the neighbor distance used as an FPFH weight denominator.
pub const DISTANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub position: Vector3<f64>,
    pub confidence: f64,
    pub color: Option<[u8; 3]>,
    pub normal: Option<Vector3<f64>>,
}

impl Point {
    pub fn new(position: Vector3<f64>, confidence: f64) -> Self {
        Self {
            position,
            confidence,
            color: None,
            normal: None,
        }
    }
}

/// Three 11-bin histograms: α, φ, θ.
pub type FpfhDescriptor = [f64; FPFH_LEN];

/// Reads `x y z` plus optional `confidence`, `red green blue`, `nx ny nz`.
pub fn read_ply(path: &Path) -> Result<Vec<Point>> {
    let els = ply::read(path)?;
    let v = els
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(path, "no vertex element"))?;
    let col = |n: &str| v.column(n);
    let (Some(x), Some(y), Some(z)) = (col("x"), col("y"), col("z")) else {
        return Err(Error::parse(path, "vertex element lacks x, y or z"));
    };
    let conf = col("confidence");
    let rgb = match (col("red"), col("green"), col("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let nrm = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    Ok(v.rows
        .iter()
        .map(|r| Point {
            position: Vector3::new(r[x], r[y], r[z]),
            confidence: conf.map_or(1.0, |c| r[c]),
            color: rgb.map(|c| [r[c[0]] as u8, r[c[1]] as u8, r[c[2]] as u8]),
            normal: nrm.map(|c| Vector3::new(r[c[0]], r[c[1]], r[c[2]])),
        })
        .collect())
}

/// Writes positions, normals and confidence as doubles and colors as uchar.
/// Colors and normals are written only when every point has them.
pub fn write_ply(path: &Path, points: &[Point], format: Format) -> Result<()> {
    let with_color = !points.is_empty() && points.iter().all(|p| p.color.is_some());
    let with_normal = !points.is_empty() && points.iter().all(|p| p.normal.is_some());
    let mut props = vec![("x", ScalarType::F64), ("y", ScalarType::F64), ("z", ScalarType::F64)];
    if with_normal {
        props.extend([("nx", ScalarType::F64), ("ny", ScalarType::F64), ("nz", ScalarType::F64)]);
    }
    if with_color {
        props.extend([("red", ScalarType::U8), ("green", ScalarType::U8), ("blue", ScalarType::U8)]);
    }
    props.push(("confidence", ScalarType::F64));
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let mut r = vec![p.position.x, p.position.y, p.position.z];
            if let (true, Some(n)) = (with_normal, p.normal) {
                r.extend([n.x, n.y, n.z]);
            }
            if let (true, Some(c)) = (with_color, p.color) {
                r.extend(c.map(f64::from));
            }
            r.push(p.confidence);
            r
        })
        .collect();
    ply::write(path, format, "vertex", &props, &rows)
}

struct Neighbors {
    tree: ImmutableKdTree<f64, u32, 3, 32>,
    coords: Vec<[f64; 3]>,
}

impl Neighbors {
    fn new(points: &[Point]) -> Self {
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.position.x, p.position.y, p.position.z]).collect();
        Self {
            tree: ImmutableKdTree::new_from_slice(&coords),
            coords,
        }
    }

    /// `k` nearest other points as `(index, distance)`, nearest first; ties
    /// by lower index.
    fn knn(&self, i: usize, k: usize) -> Vec<(usize, f64)> {
        let q = self.coords[i];
        // a few extra candidates so that distance ties resolve by index
        let want = (k + 4).min(self.coords.len());
        let found = self
            .tree
            .nearest_n::<SquaredEuclidean>(&q, NonZero::new(want).expect("non-empty cloud"));
        let mut out: Vec<(usize, f64)> = found
            .into_iter()
            .map(|n| (n.item as usize, n.distance))
            .filter(|&(j, _)| j != i)
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out.truncate(k);
        out.into_iter().map(|(j, d2)| (j, d2.sqrt())).collect()
    }

    fn all(&self, k: usize) -> Vec<Vec<(usize, f64)>> {
        (0..self.coords.len()).into_par_iter().map(|i| self.knn(i, k)).collect()
    }
}

fn check_neighbors(n_points: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("neighbor count must be positive".into()));
    }
    if n_points <= k {
        return Err(Error::Invalid(format!(
            "cloud of {n_points} points needs more than {k} points for {k} neighbors"
        )));
    }
    Ok(())
}

/// Flips `n` so that z ≥ 0, falling back to y then x when the component is zero.
pub fn orient_normal(n: Vector3<f64>) -> Vector3<f64> {
    const EPS: f64 = 1e-12;
    for c in [2, 1, 0] {
        if n[c] > EPS {
            return n;
        }
        if n[c] < -EPS {
            return -n;
        }
    }
    n
}

/// Smallest-eigenvalue eigenvector of the covariance of the point and its
/// `k` nearest neighbors.
pub fn estimate_normals(points: &mut [Point], k: usize) -> Result<()> {
    check_neighbors(points.len(), k)?;
    let knn = Neighbors::new(points).all(k);
    normals_from(points, &knn)
}

fn normals_from(points: &mut [Point], knn: &[Vec<(usize, f64)>]) -> Result<()> {
    let normals: Vec<Result<Vector3<f64>>> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut members = vec![points[i].position];
            members.extend(knn[i].iter().map(|&(j, _)| points[j].position));
            let centroid = members.iter().sum::<Vector3<f64>>() / members.len() as f64;
            let mut cov = Matrix3::zeros();
            for m in &members {
                let d = m - centroid;
                cov += d * d.transpose();
            }
            cov /= members.len() as f64;
            let scale = members.iter().map(|m| m.norm()).fold(1.0, f64::max);
            if cov.trace() <= 1e-24 * scale * scale {
                return Err(Error::DegenerateNeighborhood { index: i });
            }
            let eig = SymmetricEigen::new(cov);
            let mut best = 0;
            for c in 1..3 {
                if eig.eigenvalues[c] < eig.eigenvalues[best] {
                    best = c;
                }
            }
            Ok(orient_normal(eig.eigenvectors.column(best).normalize()))
        })
        .collect();
    for (p, n) in points.iter_mut().zip(normals) {
        p.normal = Some(n?);
    }
    Ok(())
}

/// Darboux pair features `(α, φ, θ)` between a point and a neighbor, or
/// `None` when the pair is degenerate (coincident points or the connecting
/// line parallel to the source normal).
///
/// The source of the frame is whichever point's normal makes the smaller
/// angle with the connecting line.
pub fn pair_features(p1: &Vector3<f64>, n1: &Vector3<f64>, p2: &Vector3<f64>, n2: &Vector3<f64>) -> Option<(f64, f64, f64)> {
    let mut dp = p2 - p1;
    let dist = dp.norm();
    if dist == 0.0 {
        return None;
    }
    let a1 = n1.dot(&dp) / dist;
    let a2 = n2.dot(&dp) / dist;
    let (src, tgt, phi) = if a1.abs().acos() > a2.abs().acos() {
        dp = -dp;
        (n2, n1, -a2)
    } else {
        (n1, n2, a1)
    };
    let v = dp.cross(src);
    let vn = v.norm();
    if vn == 0.0 {
        return None;
    }
    let v = v / vn;
    let w = src.cross(&v);
    let alpha = v.dot(tgt);
    let theta = w.dot(tgt).atan2(src.dot(tgt));
    Some((alpha, phi, theta))
}

fn bin(value: f64, lo: f64, hi: f64) -> usize {
    let b = ((value - lo) / (hi - lo) * FPFH_BINS as f64).floor();
    (b.max(0.0) as usize).min(FPFH_BINS - 1)
}

/// Bin indices for one feature triple.
pub fn feature_bins(alpha: f64, phi: f64, theta: f64) -> [usize; 3] {
    [bin(alpha, -1.0, 1.0), bin(phi, -1.0, 1.0), bin(theta, -PI, PI)]
}

fn spfh_from(points: &[Point], i: usize, neighbors: &[(usize, f64)]) -> Result<FpfhDescriptor> {
    let p = &points[i];
    let n1 = p.normal.ok_or(Error::MissingNormals)?;
    let mut h = [0.0; FPFH_LEN];
    let mut valid = 0usize;
    for &(j, _) in neighbors {
        let q = &points[j];
        let n2 = q.normal.ok_or(Error::MissingNormals)?;
        if let Some((a, f, t)) = pair_features(&p.position, &n1, &q.position, &n2) {
            let b = feature_bins(a, f, t);
            for (block, idx) in b.iter().enumerate() {
                h[block * FPFH_BINS + idx] += 1.0;
            }
            valid += 1;
        }
    }
    if valid > 0 {
        let inv = 1.0 / valid as f64;
        h.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(h)
}

/// Simplified point feature histogram of point `i` over its `k` nearest
/// neighbors. Each 11-bin block sums to 1 (or 0 if every pair is degenerate).
pub fn spfh(points: &[Point], i: usize, k: usize) -> Result<FpfhDescriptor> {
    check_neighbors(points.len(), k)?;
    if i >= points.len() {
        return Err(Error::Invalid(format!("point {i} out of range")));
    }
    let nn = Neighbors::new(points);
    spfh_from(points, i, &nn.knn(i, k))
}

/// `FPFH(p) = SPFH(p) + (1/K) Σ_q SPFH(q) / d(p, q)` over the `k` nearest
/// neighbors, computed for every point.
pub fn fpfh(points: &[Point], k: usize) -> Result<Vec<FpfhDescriptor>> {
    check_neighbors(points.len(), k)?;
    if points.iter().any(|p| p.normal.is_none()) {
        return Err(Error::MissingNormals);
    }
    let knn = Neighbors::new(points).all(k);
    fpfh_from(points, &knn, k)
}

fn fpfh_from(points: &[Point], knn: &[Vec<(usize, f64)>], k: usize) -> Result<Vec<FpfhDescriptor>> {
    let spfhs: Vec<FpfhDescriptor> = (0..points.len())
        .into_par_iter()
        .map(|i| spfh_from(points, i, &knn[i]))
        .collect::<Result<_>>()?;
    Ok((0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut out = spfhs[i];
            let inv_k = 1.0 / k as f64;
            for &(j, d) in &knn[i] {
                let w = inv_k / d.max(DISTANCE_FLOOR);
                for (o, s) in out.iter_mut().zip(&spfhs[j]) {
                    *o += w * s;
                }
            }
            out
        })
        .collect())
}

/// How descriptors are rescaled before taking their L2 norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreNormalization {
    /// Each descriptor divided by its own bin sum.
    #[default]
    UnitSum,
    /// Each bin min-max rescaled to `[0, 1]` across the whole cloud.
    MinMaxPerDimension,
}

/// `Conf(p) · ‖FPFH(p) / Σ FPFH(p)‖₂`; a zero descriptor scores 0.
pub fn score(point: &Point, descriptor: &FpfhDescriptor) -> f64 {
    let sum: f64 = descriptor.iter().sum();
    if sum <= 0.0 {
        return 0.0;
    }
    let norm = descriptor.iter().map(|v| (v / sum).powi(2)).sum::<f64>().sqrt();
    point.confidence * norm
}

pub fn score_all(points: &[Point], descriptors: &[FpfhDescriptor], normalization: ScoreNormalization) -> Vec<f64> {
    match normalization {
        ScoreNormalization::UnitSum => points.iter().zip(descriptors).map(|(p, d)| score(p, d)).collect(),
        ScoreNormalization::MinMaxPerDimension => {
            let mut lo = [f64::INFINITY; FPFH_LEN];
            let mut hi = [f64::NEG_INFINITY; FPFH_LEN];
            for d in descriptors {
                for c in 0..FPFH_LEN {
                    lo[c] = lo[c].min(d[c]);
                    hi[c] = hi[c].max(d[c]);
                }
            }
            points
                .iter()
                .zip(descriptors)
                .map(|(p, d)| {
                    let sq: f64 = (0..FPFH_LEN)
                        .map(|c| {
                            let r = hi[c] - lo[c];
                            if r > 0.0 {
                                ((d[c] - lo[c]) / r).powi(2)
                            } else {
                                0.0
                            }
                        })
                        .sum();
                    p.confidence * sq.sqrt()
                })
                .collect()
        }
    }
}

/// Cubic voxel partition of the cloud's bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub aabb_min: Vector3<f64>,
    pub aabb_max: Vector3<f64>,
    pub voxel_length: f64,
    pub dims: [usize; 3],
    /// Voxel of each point, as a linear index `x + dims[0]*(y + dims[1]*z)`.
    pub point_voxel: Vec<usize>,
    /// Point indices per occupied voxel, ascending.
    pub voxels: BTreeMap<usize, Vec<usize>>,
}

impl SampleGrid {
    pub fn voxel_coords(&self, linear: usize) -> [usize; 3] {
        [
            linear % self.dims[0],
            (linear / self.dims[0]) % self.dims[1],
            linear / (self.dims[0] * self.dims[1]),
        ]
    }

    pub fn linear(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    /// Voxel containing `p` under the floor-and-clamp rule.
    pub fn locate(&self, p: &Vector3<f64>) -> [usize; 3] {
        let mut c = [0; 3];
        for a in 0..3 {
            let f = ((p[a] - self.aabb_min[a]) / self.voxel_length).floor();
            c[a] = (f.max(0.0) as usize).min(self.dims[a] - 1);
        }
        c
    }

    pub fn voxel_center(&self, c: [usize; 3]) -> Vector3<f64> {
        self.aabb_min + Vector3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * self.voxel_length
    }
}

/// Voxel edge = shortest bounding-box edge / `n`. A flat box uses its shortest
/// positive edge; a box of zero extent becomes a single unit voxel.
pub fn build_grid(positions: &[Vector3<f64>], n: usize) -> Result<SampleGrid> {
    if positions.is_empty() {
        return Err(Error::Invalid("cannot build a grid over an empty cloud".into()));
    }
    if n == 0 {
        return Err(Error::Config("voxel count N must be positive".into()));
    }
    let mut lo = positions[0];
    let mut hi = positions[0];
    for p in positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let ext = hi - lo;
    let shortest = ext.iter().copied().filter(|&e| e > 0.0).fold(f64::INFINITY, f64::min);
    let (voxel_length, dims) = if shortest.is_finite() {
        let len = shortest / n as f64;
        let mut dims = [1; 3];
        for a in 0..3 {
            dims[a] = ((ext[a] / len).ceil() as usize).max(1);
        }
        (len, dims)
    } else {
        (1.0, [1, 1, 1])
    };
    let mut grid = SampleGrid {
        aabb_min: lo,
        aabb_max: hi,
        voxel_length,
        dims,
        point_voxel: Vec::with_capacity(positions.len()),
        voxels: BTreeMap::new(),
    };
    for (i, p) in positions.iter().enumerate() {
        let v = grid.linear(grid.locate(p));
        grid.point_voxel.push(v);
        grid.voxels.entry(v).or_default().push(i);
    }
    Ok(grid)
}

/// Indices of the `k` best-scoring points per voxel, ties to the lower
/// index, returned in ascending index order.
pub fn top_k_per_voxel(grid: &SampleGrid, scores: &[f64], k: usize) -> Vec<usize> {
    let mut keep = Vec::new();
    for members in grid.voxels.values() {
        let mut m = members.clone();
        m.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        keep.extend(m.into_iter().take(k));
    }
    keep.sort_unstable();
    keep
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    /// Voxels along the shortest bounding-box edge.
    pub n: usize,
    /// Points retained per voxel.
    pub k: usize,
    /// Neighbors for normals, SPFH and FPFH.
    pub neighbors: usize,
    pub normalization: ScoreNormalization,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n: 80,
            k: 3,
            neighbors: 10,
            normalization: ScoreNormalization::UnitSum,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 || self.neighbors == 0 {
            return Err(Error::Config("N, k and neighbors must all be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SampleResult {
    pub points: Vec<Point>,
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub grid: SampleGrid,
}

/// Full pipeline: normals (if any are missing), FPFH, scores, grid, top-k.
pub fn sample(cloud: &[Point], config: &SamplingConfig) -> Result<SampleResult> {
    config.validate()?;
    check_neighbors(cloud.len(), config.neighbors)?;
    let mut pts = cloud.to_vec();
    // one neighbor search serves both normals and descriptors
    let knn = Neighbors::new(&pts).all(config.neighbors);
    if pts.iter().any(|p| p.normal.is_none()) {
        normals_from(&mut pts, &knn)?;
    }
    let desc = fpfh_from(&pts, &knn, config.neighbors)?;
    let scores = score_all(&pts, &desc, config.normalization);
    let positions: Vec<Vector3<f64>> = pts.iter().map(|p| p.position).collect();
    let grid = build_grid(&positions, config.n)?;
    let indices = top_k_per_voxel(&grid, &scores, config.k);
    Ok(SampleResult {
        points: indices.iter().map(|&i| cloud[i].clone()).collect(),
        indices,
        scores,
        grid,
    })
}

/// Dense synthetic capture: a rolling ground surface with box-shaped
/// buildings, the whole thing roughly as tall as it is wide. Surfaces are
/// sampled in proportion to their area, like a per-pixel reconstruction.
pub fn synthetic_dense_cloud(n_points: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buildings: Vec<([f64; 2], [f64; 2], f64)> = (0..12)
        .map(|_| {
            let c = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
            let h = [rng.random_range(0.03..0.08), rng.random_range(0.03..0.08)];
            (c, h, rng.random_range(0.3..0.9))
        })
        .collect();
    // surface 0 is the ground; then five faces per building (4 walls, roof)
    let mut areas = vec![1.0];
    for &(_, h, top) in &buildings {
        let (wx, wy) = (2.0 * h[0], 2.0 * h[1]);
        areas.extend([wy * top, wy * top, wx * top, wx * top, wx * wy]);
    }
    let pick = WeightedIndex::new(&areas).expect("positive areas");
    let ground = |x: f64, y: f64| 0.05 * (6.0 * x).sin() * (5.0 * y).cos();
    let mut pts = Vec::with_capacity(n_points);
    while pts.len() < n_points {
        let conf = rng.random_range(0.2..1.0);
        let jitter = rng.random_range(-1e-3..1e-3);
        let surface = pick.sample(&mut rng);
        let p = if surface == 0 {
            let (x, y) = (rng.random::<f64>(), rng.random::<f64>());
            Vector3::new(x, y, ground(x, y) + jitter)
        } else {
            let (c, h, top) = buildings[(surface - 1) / 5];
            let z = rng.random_range(0.0..top);
            let (u, v) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let (bx, by, bz) = match (surface - 1) % 5 {
                0 => (c[0] - h[0], c[1] + v * h[1], z),
                1 => (c[0] + h[0], c[1] + v * h[1], z),
                2 => (c[0] + u * h[0], c[1] - h[1], z),
                3 => (c[0] + u * h[0], c[1] + h[1], z),
                _ => (c[0] + u * h[0], c[1] + v * h[1], top),
            };
            Vector3::new(bx, by, bz + jitter)
        };
        let mut pt = Point::new(p, conf);
        pt.color = Some([rng.random(), rng.random(), rng.random()]);
        pts.push(pt);
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn with_normal(p: [f64; 3], n: [f64; 3], conf: f64) -> Point {
        let mut pt = Point::new(Vector3::from(p), conf);
        pt.normal = Some(Vector3::from(n).normalize());
        pt
    }

    #[test]
    fn ascii_fixture_and_default_confidence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ply");
        std::fs::write(
            &p,
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n\
             property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n\
             0 0 0 255 0 0\n1 0.5 -2 0 255 0\n3 4 5 0 0 255\n",
        )
        .unwrap();
        let pts = read_ply(&p).unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[1].position, Vector3::new(1.0, 0.5, -2.0));
        assert_eq!(pts[2].color, Some([0, 0, 255]));
        assert!(pts.iter().all(|p| p.confidence == 1.0 && p.normal.is_none()));
    }

    #[test]
    fn binary_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.ply");
        let mut pts = synthetic_dense_cloud(300, 5);
        for (i, pt) in pts.iter_mut().enumerate() {
            pt.normal = Some(Vector3::new(0.1 * i as f64, 1.0, -0.3).normalize());
            pt.confidence = 1.0 / (i as f64 + 3.0);
        }
        write_ply(&p, &pts, Format::BinaryLittleEndian).unwrap();
        let back = read_ply(&p).unwrap();
        assert_eq!(back.len(), pts.len());
        for (a, b) in pts.iter().zip(&back) {
            for c in 0..3 {
                assert_eq!(a.position[c].to_bits(), b.position[c].to_bits());
                assert_eq!(a.normal.unwrap()[c].to_bits(), b.normal.unwrap()[c].to_bits());
            }
            assert_eq!(a.confidence.to_bits(), b.confidence.to_bits());
            assert_eq!(a.color, b.color);
        }
        write_ply(&p, &pts, Format::Ascii).unwrap();
        let back = read_ply(&p).unwrap();
        assert_eq!(back[7].position, pts[7].position);
    }

    #[test]
    fn planar_normals() {
        let mut pts: Vec<Point> = (0..64)
            .map(|i| Point::new(Vector3::new((i % 8) as f64 * 0.3, (i / 8) as f64 * 0.2 + 0.01 * (i % 3) as f64, 0.0), 1.0))
            .collect();
        estimate_normals(&mut pts, 8).unwrap();
        for p in &pts {
            let n = p.normal.unwrap();
            assert_abs_diff_eq!(n.z, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(n.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn normal_errors() {
        let mut few: Vec<Point> = (0..5).map(|i| Point::new(Vector3::new(i as f64, 0.0, 0.0), 1.0)).collect();
        assert!(estimate_normals(&mut few, 5).is_err());
        let mut same: Vec<Point> = (0..6).map(|_| Point::new(Vector3::new(1.0, 2.0, 3.0), 1.0)).collect();
        assert!(matches!(
            estimate_normals(&mut same, 3),
            Err(Error::DegenerateNeighborhood { index: 0 })
        ));
        let bare: Vec<Point> = (0..6).map(|i| Point::new(Vector3::new(i as f64, 0.0, 0.0), 1.0)).collect();
        assert!(matches!(fpfh(&bare, 3), Err(Error::MissingNormals)));
    }

    #[test]
    fn normals_follow_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pts: Vec<Point> = (0..200)
            .map(|_| {
                let (x, y) = (rng.random::<f64>(), rng.random::<f64>());
                Point::new(Vector3::new(x, y, 0.3 * x * x - 0.2 * y), 1.0)
            })
            .collect();
        let rot = nalgebra::Rotation3::from_euler_angles(0.4, -0.7, 1.1);
        let mut turned: Vec<Point> = pts.iter().map(|p| Point::new(rot * p.position, 1.0)).collect();
        estimate_normals(&mut pts, 10).unwrap();
        estimate_normals(&mut turned, 10).unwrap();
        for (a, b) in pts.iter().zip(&turned) {
            let ra = rot * a.normal.unwrap();
            let d = ra.dot(&b.normal.unwrap()).abs();
            assert_abs_diff_eq!(d, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn parallel_normals_on_a_line() {
        let n = [0.0, 0.0, 1.0];
        let (a, f, t) = pair_features(
            &Vector3::new(0.0, 0.0, 0.0),
            &Vector3::from(n),
            &Vector3::new(1.0, 0.0, 0.0),
            &Vector3::from(n),
        )
        .unwrap();
        assert_eq!((a, f, t), (0.0, 0.0, 0.0));
        // cos θ = 1: all three features sit in the middle bin
        assert_eq!(feature_bins(a, f, t), [5, 5, 5]);
        let pts: Vec<Point> = (0..4).map(|i| with_normal([i as f64, 0.0, 0.0], n, 1.0)).collect();
        let h = spfh(&pts, 0, 3).unwrap();
        for block in 0..3 {
            assert_eq!(h[block * FPFH_BINS + 5], 1.0);
            assert_eq!(h[block * FPFH_BINS..(block + 1) * FPFH_BINS].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn degenerate_pairs_are_skipped() {
        let n = Vector3::new(0.0, 0.0, 1.0);
        let o = Vector3::zeros();
        assert!(pair_features(&o, &n, &o, &n).is_none());
        assert!(pair_features(&o, &n, &Vector3::new(0.0, 0.0, 2.0), &n).is_none());
    }

    #[test]
    fn score_examples() {
        let uniform = [1.0 / 33.0; FPFH_LEN];
        let mut p = Point::new(Vector3::zeros(), 1.0);
        assert_abs_diff_eq!(score(&p, &uniform), 1.0 / 33f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(score(&p, &uniform), 0.17408, epsilon = 1e-5);
        p.confidence = 2.0;
        assert_abs_diff_eq!(score(&p, &uniform), 2.0 / 33f64.sqrt(), epsilon = 1e-15);
        p.confidence = 0.0;
        assert_eq!(score(&p, &uniform), 0.0);
        assert_eq!(score(&Point::new(Vector3::zeros(), 1.0), &[0.0; FPFH_LEN]), 0.0);
    }

    #[test]
    fn minmax_scores_stay_bounded() {
        let pts: Vec<Point> = (0..3).map(|_| Point::new(Vector3::zeros(), 1.0)).collect();
        let mut a = [0.0; FPFH_LEN];
        a[0] = 1.0;
        let mut b = [0.0; FPFH_LEN];
        b[1] = 2.0;
        let s = score_all(&pts, &[a, b, [0.0; FPFH_LEN]], ScoreNormalization::MinMaxPerDimension);
        assert_eq!(s, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn unit_cube_grid() {
        let mut pos = Vec::new();
        for c in 0..8 {
            pos.push(Vector3::new((c & 1) as f64, ((c >> 1) & 1) as f64, (c >> 2) as f64));
        }
        pos.push(Vector3::new(0.25, 0.75, 0.25));
        pos.push(Vector3::new(0.5, 0.2, 0.2));
        let g = build_grid(&pos, 2).unwrap();
        assert_eq!(g.voxel_length, 0.5);
        assert_eq!(g.dims, [2, 2, 2]);
        assert_eq!(g.voxels.len(), 8);
        // exactly on the x = 0.5 boundary: higher voxel
        assert_eq!(g.locate(&pos[9]), [1, 0, 0]);
        // max face clamps
        assert_eq!(g.locate(&pos[7]), [1, 1, 1]);
    }

    #[test]
    fn grid_edge_cases() {
        let same = vec![Vector3::new(1.0, 1.0, 1.0); 4];
        let g = build_grid(&same, 80).unwrap();
        assert_eq!(g.voxels.len(), 1);
        let flat = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(2.0, 1.0, 0.0)];
        let g = build_grid(&flat, 4).unwrap();
        assert_eq!(g.voxel_length, 0.25);
        assert_eq!(g.dims, [8, 4, 1]);
        assert!(build_grid(&[], 2).is_err());
    }

    #[test]
    fn keeps_higher_confidence_on_ties() {
        let desc = [[1.0; FPFH_LEN]; 2];
        let pts = vec![
            Point::new(Vector3::zeros(), 0.1),
            Point::new(Vector3::new(0.01, 0.0, 0.0), 0.9),
        ];
        let scores = score_all(&pts, &desc, ScoreNormalization::UnitSum);
        let grid = build_grid(&[pts[0].position, pts[1].position], 1).unwrap();
        assert_eq!(top_k_per_voxel(&grid, &scores, 1), vec![1]);
        assert_eq!(top_k_per_voxel(&grid, &scores, 5), vec![0, 1]);
        assert_eq!(top_k_per_voxel(&grid, &[0.5, 0.5], 1), vec![0]);
    }

    proptest! {
        #[test]
        fn grid_partitions_points(seed in 0u64..1000, n in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pos: Vec<Vector3<f64>> = (0..200)
                .map(|_| Vector3::new(rng.random::<f64>() * 3.0, rng.random::<f64>(), rng.random::<f64>() * 2.0 - 5.0))
                .collect();
            let g = build_grid(&pos, n).unwrap();
            let ext = g.aabb_max - g.aabb_min;
            let shortest = ext.min();
            prop_assert!((g.voxel_length * n as f64 - shortest).abs() <= 1e-9);
            let mut seen = vec![0; pos.len()];
            for (v, members) in &g.voxels {
                for &i in members {
                    seen[i] += 1;
                    prop_assert_eq!(g.point_voxel[i], *v);
                    let c = g.voxel_coords(*v);
                    for a in 0..3 {
                        let lo = g.aabb_min[a] + c[a] as f64 * g.voxel_length;
                        let inside = pos[i][a] >= lo - 1e-12
                            && (pos[i][a] < lo + g.voxel_length + 1e-12 || c[a] == g.dims[a] - 1);
                        prop_assert!(inside);
                    }
                }
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
        }

        #[test]
        fn fpfh_translation_invariant(seed in 0u64..200, dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut dyadic = || rng.random_range(0..1024) as f64 / 1024.0;
            let pts: Vec<Point> = (0..20)
                .map(|_| with_normal(
                    [dyadic(), dyadic(), dyadic()],
                    [dyadic() - 0.5, dyadic() - 0.5, 1.0],
                    1.0,
                ))
                .collect();
            // dyadic coordinates and offsets keep every difference exact
            let shift = Vector3::new((dx * 4.0).round() / 4.0, (dy * 4.0).round() / 4.0, 8.0);
            let moved: Vec<Point> = pts.iter().map(|p| Point { position: p.position + shift, ..p.clone() }).collect();
            let a = fpfh(&pts, 5).unwrap();
            let b = fpfh(&moved, 5).unwrap();
            for (x, y) in a.iter().zip(&b) {
                for (u, v) in x.iter().zip(y) {
                    prop_assert_eq!(u.to_bits(), v.to_bits());
                }
            }
        }
    }
}
