//! Adaptive local-global distractor masking.
//!
//! Per training frame the render is compared against the ground truth with
//! an L1 and a D-SSIM residual. Both are min-max normalized, mixed with
//! `λ_dssim`, and averaged per segmentation object. Objects whose mean
//! exceeds the adaptive local threshold `E + Var·(1 + λ_L (T_max - t)/T_max)`
//! are masked in that frame. Objects above the global threshold
//! `E + λ_G·Var` become tracking candidates: the matching track is unioned
//! into a persistent per-frame global mask. The final mask of a frame is the
//! union of both.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::metrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    L1,
    Dssim,
    NormalizedL1,
    NormalizedDssim,
    Combined,
}

impl ResidualKind {
    fn is_normalized(self) -> bool {
        !matches!(self, ResidualKind::L1 | ResidualKind::Dssim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub kind: ResidualKind,
}

impl ResidualMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, kind: ResidualKind) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} residuals for {width}x{height}",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            kind,
        })
    }

    /// Writes the `RMAP` binary layout: magic, u32 width, u32 height, then
    /// row-major little-endian f32 values.
    pub fn write_rmap(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + 4 * self.values.len());
        buf.extend_from_slice(b"RMAP");
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        for &v in &self.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_rmap(path: &Path, kind: ResidualKind) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 12 || &bytes[..4] != b"RMAP" {
            return Err(Error::parse(path, "missing RMAP header"));
        }
        let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() != 4 * w * h {
            return Err(Error::parse(
                path,
                format!("expected {} value bytes, found {}", 4 * w * h, body.len()),
            ));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Self::new(w, h, values, kind)
    }
}

/// Per-pixel object IDs. Each distinct ID is one object mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    width: usize,
    height: usize,
    ids: Vec<u16>,
}

impl SegmentationMap {
    pub fn new(width: usize, height: usize, ids: Vec<u16>) -> Result<Self> {
        if ids.len() != width * height {
            return Err(Error::Shape(format!("{} ids for {width}x{height}", ids.len())));
        }
        Ok(Self { width, height, ids })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ids(&self) -> &[u16] {
        &self.ids
    }

    /// Distinct IDs in ascending order.
    pub fn objects(&self) -> Vec<u16> {
        self.ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn object_mask(&self, id: u16) -> Mask {
        Mask::from_bits(self.width, self.height, self.ids.iter().map(|&v| v == id).collect())
            .expect("dimensions match")
    }

    /// 16-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(self.width as u32, self.height as u32, self.ids.clone())
                .expect("buffer size matches");
        img.save(path).map_err(|e| Error::image(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma16();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }
}

fn check_images(render: &Image, gt: &Image) -> Result<()> {
    render.ensure_same_shape(gt)
}

/// Mean absolute channel difference per pixel.
pub fn l1_residual(render: &Image, gt: &Image) -> Result<ResidualMap> {
    check_images(render, gt)?;
    let values = render
        .pixels()
        .iter()
        .zip(gt.pixels())
        .map(|(a, b)| ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0)
        .collect();
    ResidualMap::new(render.width(), render.height(), values, ResidualKind::L1)
}

/// `(1 - SSIM(p)) / 2` per pixel, clamped to `[0, 1]`.
pub fn dssim_residual(render: &Image, gt: &Image) -> Result<ResidualMap> {
    let map = metrics::ssim_map(render, gt)?;
    let values = map.into_iter().map(|s| ((1.0 - s) / 2.0).clamp(0.0, 1.0)).collect();
    ResidualMap::new(render.width(), render.height(), values, ResidualKind::Dssim)
}

/// Min-max rescale to `[0, 1]` over the frame; constant maps become zero.
pub fn normalize(map: &ResidualMap) -> Result<ResidualMap> {
    let kind = match map.kind {
        ResidualKind::L1 | ResidualKind::NormalizedL1 => ResidualKind::NormalizedL1,
        ResidualKind::Dssim | ResidualKind::NormalizedDssim => ResidualKind::NormalizedDssim,
        ResidualKind::Combined => {
            return Err(Error::Invalid("combined residuals are already normalized".into()))
        }
    };
    let lo = map.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let values = if range > 0.0 {
        map.values.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; map.values.len()]
    };
    ResidualMap::new(map.width, map.height, values, kind)
}

/// `(1-λ)·R̃_L1 + λ·R̃_DSSIM`.
pub fn combine(norm_l1: &ResidualMap, norm_dssim: &ResidualMap, lambda_dssim: f64) -> Result<ResidualMap> {
    if !(0.0..=1.0).contains(&lambda_dssim) {
        return Err(Error::Config(format!("lambda_dssim {lambda_dssim} outside [0, 1]")));
    }
    if !norm_l1.kind.is_normalized() || !norm_dssim.kind.is_normalized() {
        return Err(Error::Invalid("combine expects normalized residuals".into()));
    }
    if norm_l1.width != norm_dssim.width || norm_l1.height != norm_dssim.height {
        return Err(Error::Shape("residual maps differ in size".into()));
    }
    let values = if lambda_dssim == 0.0 {
        norm_l1.values.clone()
    } else if lambda_dssim == 1.0 {
        norm_dssim.values.clone()
    } else {
        norm_l1
            .values
            .iter()
            .zip(&norm_dssim.values)
            .map(|(a, b)| (1.0 - lambda_dssim) * a + lambda_dssim * b)
            .collect()
    };
    ResidualMap::new(norm_l1.width, norm_l1.height, values, ResidualKind::Combined)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectResidual {
    pub id: u16,
    pub mean: f64,
    pub area: usize,
}

/// Object-wise average residuals, ordered by object ID.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectResidualTable {
    pub entries: Vec<ObjectResidual>,
}

impl ObjectResidualTable {
    pub fn get(&self, id: u16) -> Option<&ObjectResidual> {
        self.entries.iter().find(|e| e.id == id)
    }
}

pub fn object_average(residual: &ResidualMap, seg: &SegmentationMap) -> Result<ObjectResidualTable> {
    if residual.width != seg.width || residual.height != seg.height {
        return Err(Error::Shape(format!(
            "residual {}x{} vs segmentation {}x{}",
            residual.width, residual.height, seg.width, seg.height
        )));
    }
    // (sum, count, min, max); the mean is clamped into [min, max] against round-off
    let mut acc: BTreeMap<u16, (f64, usize, f64, f64)> = BTreeMap::new();
    for (&id, &v) in seg.ids.iter().zip(&residual.values) {
        let e = acc.entry(id).or_insert((0.0, 0, v, v));
        e.0 += v;
        e.1 += 1;
        e.2 = e.2.min(v);
        e.3 = e.3.max(v);
    }
    Ok(ObjectResidualTable {
        entries: acc
            .into_iter()
            .map(|(id, (sum, area, lo, hi))| ObjectResidual {
                id,
                mean: (sum / area as f64).clamp(lo, hi),
                area,
            })
            .collect(),
    })
}

/// Expectation and population variance of the residual distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    pub mean: f64,
    pub variance: f64,
}

impl ResidualStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("statistics of an empty residual map".into()));
        }
        if values.iter().all(|&v| v == values[0]) {
            return Ok(Self {
                mean: values[0],
                variance: 0.0,
            });
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self { mean, variance })
    }

    /// Replaces the variance by the requested dispersion term.
    pub fn with_spread(self, spread: Spread) -> Self {
        match spread {
            Spread::Variance => self,
            Spread::StdDev => Self {
                mean: self.mean,
                variance: self.variance.sqrt(),
            },
        }
    }
}

/// Pixel-wise statistics, every pixel weighted `1/N`.
pub fn stats(residual: &ResidualMap) -> Result<ResidualStats> {
    ResidualStats::from_values(&residual.values)
}

/// Which population the threshold statistics are taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StatsDomain {
    #[default]
    Pixels,
    Objects,
}

/// Dispersion term added to the expectation in the thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Spread {
    #[default]
    Variance,
    StdDev,
}

/// `E + Var·(1 + λ_L·(T_max - t)/T_max)`.
pub fn local_threshold(stats: &ResidualStats, t: usize, t_max: usize, lambda_l: f64) -> Result<f64> {
    if t > t_max {
        return Err(Error::Invalid(format!("iteration {t} beyond T_max {t_max}")));
    }
    if t_max == 0 {
        return Ok(stats.mean + stats.variance);
    }
    let relax = lambda_l * (t_max - t) as f64 / t_max as f64;
    Ok(stats.mean + stats.variance * (1.0 + relax))
}

/// Objects whose mean residual strictly exceeds the threshold.
pub fn local_masks(table: &ObjectResidualTable, threshold: f64) -> BTreeSet<u16> {
    table
        .entries
        .iter()
        .filter(|e| e.mean > threshold)
        .map(|e| e.id)
        .collect()
}

/// `E + λ_G·Var`; requires `λ_G > 1 + λ_L`.
pub fn global_threshold(stats: &ResidualStats, lambda_g: f64, lambda_l: f64) -> Result<f64> {
    if !(lambda_g > 1.0 + lambda_l) {
        return Err(Error::Config(format!(
            "lambda_g {lambda_g} must exceed 1 + lambda_l = {}",
            1.0 + lambda_l
        )));
    }
    Ok(stats.mean + lambda_g * stats.variance)
}

/// Center prompt (centroid snapped onto the mask) followed by the leftmost,
/// rightmost, topmost and bottommost mask pixels, as `(x, y)`.
///
/// Edge ties are broken toward the centroid, then toward the lower index.
pub fn prompts_from_mask(mask: &Mask) -> Result<[(usize, usize); 5]> {
    let w = mask.width();
    let pts: Vec<(usize, usize)> = mask
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| (i % w, i / w))
        .collect();
    if pts.is_empty() {
        return Err(Error::Invalid("cannot place prompts on an empty mask".into()));
    }
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let dist = |p: &(usize, usize)| (p.0 as f64 - cx).powi(2) + (p.1 as f64 - cy).powi(2);
    let nearest = |cands: &mut dyn Iterator<Item = &(usize, usize)>| -> (usize, usize) {
        let mut best: Option<((usize, usize), f64)> = None;
        for p in cands {
            let d = dist(p);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((*p, d));
            }
        }
        best.expect("non-empty").0
    };
    let min_x = pts.iter().map(|p| p.0).min().unwrap();
    let max_x = pts.iter().map(|p| p.0).max().unwrap();
    let min_y = pts.iter().map(|p| p.1).min().unwrap();
    let max_y = pts.iter().map(|p| p.1).max().unwrap();
    Ok([
        nearest(&mut pts.iter()),
        nearest(&mut pts.iter().filter(|p| p.0 == min_x)),
        nearest(&mut pts.iter().filter(|p| p.0 == max_x)),
        nearest(&mut pts.iter().filter(|p| p.1 == min_y)),
        nearest(&mut pts.iter().filter(|p| p.1 == max_y)),
    ])
}

/// External tracker output: per track, per-frame binary masks keyed by the
/// frame's position in the sequence. Frames without an entry are empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackStore {
    pub tracks: BTreeMap<u32, BTreeMap<usize, Mask>>,
}

impl TrackStore {
    pub fn insert(&mut self, track: u32, frame: usize, mask: Mask) {
        self.tracks.entry(track).or_default().insert(frame, mask);
    }

    /// Layout: `manifest.txt` plus `track_<id>/frame_<i>.png` per covered frame.
    /// Manifest lines are `<track id>\t<comma separated frame indices>`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join("manifest.txt");
        let mut manifest = Vec::new();
        writeln!(manifest, "# track_id\tframes").unwrap();
        for (id, frames) in &self.tracks {
            let tdir = dir.join(format!("track_{id}"));
            fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
            let list: Vec<String> = frames.keys().map(|f| f.to_string()).collect();
            writeln!(manifest, "{id}\t{}", list.join(",")).unwrap();
            for (f, m) in frames {
                m.save_png(&tdir.join(format!("frame_{f:04}.png")))?;
            }
        }
        fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.txt");
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut store = TrackStore::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, frames) = line.split_once('\t').unwrap_or((line, ""));
            let id: u32 = id
                .trim()
                .parse()
                .map_err(|_| Error::parse(&manifest_path, format!("bad track id in {line:?}")))?;
            let tdir = dir.join(format!("track_{id}"));
            store.tracks.entry(id).or_default();
            for f in frames.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let f: usize = f
                    .parse()
                    .map_err(|_| Error::parse(&manifest_path, format!("bad frame index {f:?}")))?;
                store.insert(id, f, Mask::load_png(&tdir.join(format!("frame_{f:04}.png")))?);
            }
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskingConfig {
    pub lambda_dssim: f64,
    pub lambda_local: f64,
    pub lambda_global: f64,
    pub t_max: usize,
    pub activation_iter: usize,
    pub stats_domain: StatsDomain,
    pub spread: Spread,
    /// Minimum IoU between a candidate and a track for ingestion.
    pub track_iou: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            lambda_dssim: 0.2,
            lambda_local: 0.4,
            lambda_global: 2.8,
            t_max: 7000,
            activation_iter: 500,
            stats_domain: StatsDomain::Pixels,
            spread: Spread::Variance,
            track_iou: 0.5,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_dssim) {
            return Err(Error::Config("lambda_dssim must lie in [0, 1]".into()));
        }
        if self.lambda_local < 0.0 {
            return Err(Error::Config("lambda_l must be non-negative".into()));
        }
        if !(self.lambda_global > 1.0 + self.lambda_local) {
            return Err(Error::Config(format!(
                "lambda_g {} must exceed 1 + lambda_l = {}",
                self.lambda_global,
                1.0 + self.lambda_local
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMasks {
    /// Object IDs selected by the local threshold at the last evaluation.
    pub local: BTreeSet<u16>,
    /// Accumulated global mask; only ever grows.
    pub global: Mask,
    /// Distractor mask of the last evaluation (local ∪ global).
    pub final_mask: Option<Mask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskState {
    pub frames: Vec<FrameMasks>,
    pub ingested_tracks: BTreeSet<u32>,
}

impl MaskState {
    pub fn new(n_frames: usize, width: usize, height: usize) -> Self {
        Self {
            frames: (0..n_frames)
                .map(|_| FrameMasks {
                    local: BTreeSet::new(),
                    global: Mask::new(width, height, false),
                    final_mask: None,
                })
                .collect(),
            ingested_tracks: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GlobalUpdate {
    Ingested { track: u32, iou: f64 },
    AlreadyIngested { track: u32 },
    NoMatch { best_iou: f64 },
}

/// Unions the track best matching `candidate` (in frame `frame`) into every
/// frame's global mask.
pub fn update_global(
    state: &mut MaskState,
    frame: usize,
    candidate: &Mask,
    store: &TrackStore,
    min_iou: f64,
) -> Result<GlobalUpdate> {
    let mut best: Option<(u32, f64)> = None;
    for (&id, frames) in &store.tracks {
        let Some(m) = frames.get(&frame) else { continue };
        let iou = metrics::mask_iou(candidate, m)?;
        if best.is_none_or(|(_, b)| iou > b) {
            best = Some((id, iou));
        }
    }
    match best {
        Some((track, iou)) if iou >= min_iou => {
            if !state.ingested_tracks.insert(track) {
                return Ok(GlobalUpdate::AlreadyIngested { track });
            }
            for (f, m) in &store.tracks[&track] {
                if let Some(slot) = state.frames.get_mut(*f) {
                    slot.global.union_with(m)?;
                }
            }
            Ok(GlobalUpdate::Ingested { track, iou })
        }
        other => {
            let best_iou = other.map_or(0.0, |b| b.1);
            Ok(GlobalUpdate::NoMatch { best_iou })
        }
    }
}

/// Distractor mask of frame `frame`: its local objects plus its global mask.
pub fn final_mask(state: &MaskState, frame: usize, seg: &SegmentationMap) -> Result<Mask> {
    let slot = &state.frames[frame];
    let mut m = slot.global.clone();
    if m.width() != seg.width || m.height() != seg.height {
        return Err(Error::Shape("segmentation does not match mask state".into()));
    }
    for (i, id) in seg.ids.iter().enumerate() {
        if slot.local.contains(id) {
            m.set_index(i, true);
        }
    }
    Ok(m)
}

/// Everything computed for one masking evaluation, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskEvaluation {
    pub iteration: usize,
    pub frame: usize,
    pub stats: ResidualStats,
    pub local_threshold: f64,
    pub global_threshold: f64,
    pub table: ObjectResidualTable,
    pub local: BTreeSet<u16>,
    pub candidates: Vec<(u16, [(usize, usize); 5], GlobalUpdate)>,
    pub distractor_mask: Mask,
}

/// Stateful masking driver used by the trainer.
#[derive(Debug, Clone)]
pub struct AdaptiveMasker {
    pub config: MaskingConfig,
    pub state: MaskState,
    pub store: Option<TrackStore>,
    /// When set, every evaluation is appended here.
    pub history: Option<Vec<MaskEvaluation>>,
    /// (frame, object) pairs already reported as matching no track.
    unmatched: BTreeSet<(usize, u16)>,
}

impl AdaptiveMasker {
    pub fn new(config: MaskingConfig, n_frames: usize, width: usize, height: usize, store: Option<TrackStore>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: MaskState::new(n_frames, width, height),
            store,
            history: None,
            unmatched: BTreeSet::new(),
        })
    }

    pub fn with_history(mut self) -> Self {
        self.history = Some(Vec::new());
        self
    }

    /// Runs one masking evaluation of frame `frame` at iteration `t` and
    /// returns the distractor mask.
    pub fn evaluate(&mut self, frame: usize, render: &Image, gt: &Image, seg: &SegmentationMap, t: usize) -> Result<Mask> {
        let cfg = &self.config;
        let t = t.min(cfg.t_max);
        let l1 = normalize(&l1_residual(render, gt)?)?;
        let dssim = normalize(&dssim_residual(render, gt)?)?;
        let combined = combine(&l1, &dssim, cfg.lambda_dssim)?;
        let table = object_average(&combined, seg)?;
        let raw = match cfg.stats_domain {
            StatsDomain::Pixels => stats(&combined)?,
            StatsDomain::Objects => {
                ResidualStats::from_values(&table.entries.iter().map(|e| e.mean).collect::<Vec<_>>())?
            }
        };
        let eff = raw.with_spread(cfg.spread);
        let tl = local_threshold(&eff, t, cfg.t_max, cfg.lambda_local)?;
        let tg = global_threshold(&eff, cfg.lambda_global, cfg.lambda_local)?;
        let local = local_masks(&table, tl);

        let mut candidates = Vec::new();
        for e in table.entries.iter().filter(|e| e.mean > tg) {
            let cand = seg.object_mask(e.id);
            let prompts = prompts_from_mask(&cand)?;
            let outcome = match &self.store {
                Some(store) => update_global(&mut self.state, frame, &cand, store, cfg.track_iou)?,
                None => GlobalUpdate::NoMatch { best_iou: 0.0 },
            };
            if let GlobalUpdate::NoMatch { best_iou } = outcome {
                if self.unmatched.insert((frame, e.id)) {
                    log::warn!("frame {frame}: candidate object {} matches no track (best IoU {best_iou:.3})", e.id);
                }
            }
            candidates.push((e.id, prompts, outcome));
        }

        self.state.frames[frame].local = local.clone();
        let mask = final_mask(&self.state, frame, seg)?;
        self.state.frames[frame].final_mask = Some(mask.clone());
        if let Some(h) = self.history.as_mut() {
            h.push(MaskEvaluation {
                iteration: t,
                frame,
                stats: raw,
                local_threshold: tl,
                global_threshold: tg,
                table,
                local,
                candidates,
                distractor_mask: mask.clone(),
            });
        }
        Ok(mask)
    }
}
