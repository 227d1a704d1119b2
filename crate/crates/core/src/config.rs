//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` are comments. A `[section]` line prefixes the
//! following keys with `section.`, so `[guide]` + `tau = 3` is the same as
//! `guide.tau = 3`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::guide::{DistanceDatum, GuideConfig};
use crate::masking::{MaskingConfig, Spread, StatsDomain};
use crate::pointcloud::{SamplingConfig, ScoreNormalization};
use crate::scene::{DistractorRecipe, SceneRecipe};
use crate::train::TrainConfig;

/// Parses `key = value` text into pairs, in file order.
pub fn parse_kv(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut section = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(origin, format!("line {}: expected key = value", n + 1)))?;
        let key = if section.is_empty() {
            k.trim().to_string()
        } else {
            format!("{section}.{}", k.trim())
        };
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Which masks the trainer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Adaptive,
    None,
    /// Ground-truth distractor masks (synthetic scenes only).
    Oracle,
}

/// Every tunable of a run, with the published defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub train: TrainConfig,
    pub masking: MaskingConfig,
    pub mask_mode: MaskMode,
    pub sampling: SamplingConfig,
    pub guide: GuideConfig,
    pub use_guide: bool,
    pub scene: SceneRecipe,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            train: TrainConfig::default(),
            masking: MaskingConfig::default(),
            mask_mode: MaskMode::Adaptive,
            sampling: SamplingConfig::default(),
            guide: GuideConfig::default(),
            use_guide: true,
            scene: SceneRecipe::dynamic_demo(),
        }
        .with_scene_background()
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn triple(key: &str, v: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("{key}: expected three comma-separated numbers")));
    }
    Ok([num(key, parts[0])?, num(key, parts[1])?, num(key, parts[2])?])
}

fn fmt3(v: [f64; 3]) -> String {
    format!("{},{},{}", v[0], v[1], v[2])
}

impl RunConfig {
    fn with_scene_background(mut self) -> Self {
        self.train.background = self.scene.background;
        self
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        for (k, v) in parse_kv(&text, path)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let m = &mut self.masking;
        let g = &mut self.guide;
        let s = &mut self.scene;
        match key {
            "seed" => self.seed = num(key, v)?,
            "iterations" => t.iterations = num(key, v)?,
            "lambda_dssim" => {
                t.lambda_dssim = num(key, v)?;
                m.lambda_dssim = t.lambda_dssim;
            }
            "background" => {
                t.background = triple(key, v)?;
                s.background = t.background;
            }
            "lr.position" => t.lr.position = num(key, v)?,
            "lr.scale" => t.lr.scale = num(key, v)?,
            "lr.rotation" => t.lr.rotation = num(key, v)?,
            "lr.opacity" => t.lr.opacity = num(key, v)?,
            "lr.color" => t.lr.color = num(key, v)?,
            "masking.mode" => {
                self.mask_mode = match v {
                    "adaptive" => MaskMode::Adaptive,
                    "none" => MaskMode::None,
                    "oracle" => MaskMode::Oracle,
                    _ => return Err(Error::Config(format!("{key}: unknown mode {v:?}"))),
                }
            }
            "masking.t_max" => m.t_max = num(key, v)?,
            "masking.activation_iter" => m.activation_iter = num(key, v)?,
            "masking.lambda_l" => m.lambda_local = num(key, v)?,
            "masking.lambda_g" => m.lambda_global = num(key, v)?,
            "masking.track_iou" => m.track_iou = num(key, v)?,
            "masking.stats" => {
                m.stats_domain = match v {
                    "pixels" => StatsDomain::Pixels,
                    "objects" => StatsDomain::Objects,
                    _ => return Err(Error::Config(format!("{key}: expected pixels or objects"))),
                }
            }
            "masking.spread" => {
                m.spread = match v {
                    "variance" => Spread::Variance,
                    "stddev" => Spread::StdDev,
                    _ => return Err(Error::Config(format!("{key}: expected variance or stddev"))),
                }
            }
            "sampling.n" => self.sampling.n = num(key, v)?,
            "sampling.k" => self.sampling.k = num(key, v)?,
            "sampling.neighbors" => self.sampling.neighbors = num(key, v)?,
            "sampling.normalization" => {
                self.sampling.normalization = match v {
                    "unit_sum" => ScoreNormalization::UnitSum,
                    "minmax" => ScoreNormalization::MinMaxPerDimension,
                    _ => return Err(Error::Config(format!("{key}: expected unit_sum or minmax"))),
                }
            }
            "guide.enabled" => self.use_guide = num(key, v)?,
            "guide.tau" => g.tau = num(key, v)?,
            "guide.gamma1" => g.gamma1 = num(key, v)?,
            "guide.gamma2" => g.gamma2 = num(key, v)?,
            "guide.gamma3" => g.gamma3 = num(key, v)?,
            "guide.beta" => g.beta = num(key, v)?,
            "guide.densify_interval" => g.densify_interval = num(key, v)?,
            "guide.datum" => {
                g.datum = match v {
                    "center" => DistanceDatum::Center,
                    "half_length" => DistanceDatum::HalfLengthOffset,
                    _ => return Err(Error::Config(format!("{key}: expected center or half_length"))),
                }
            }
            "scene.frames" => s.n_frames = num(key, v)?,
            "scene.width" => s.width = num(key, v)?,
            "scene.height" => s.height = num(key, v)?,
            "scene.pixels_per_unit" => s.pixels_per_unit = num(key, v)?,
            "scene.objects" => s.static_objects = num(key, v)?,
            "scene.gaussians_per_object" => s.gaussians_per_object = num(key, v)?,
            "scene.extent" => s.extent = num(key, v)?,
            "scene.noise" => s.noise_sigma = num(key, v)?,
            "scene.seed" => s.seed = num(key, v)?,
            "scene.preset" => {
                let keep = s.clone();
                *s = match v {
                    "dynamic" => SceneRecipe::dynamic_demo(),
                    "stopping" => SceneRecipe::stopping_demo(),
                    "static" => SceneRecipe {
                        distractors: Vec::<DistractorRecipe>::new(),
                        ..SceneRecipe::dynamic_demo()
                    },
                    _ => return Err(Error::Config(format!("{key}: unknown preset {v:?}"))),
                };
                s.seed = keep.seed;
                s.background = t.background;
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.masking.validate()?;
        self.sampling.validate()?;
        self.guide.validate()?;
        if !(0.0..=1.0).contains(&self.train.lambda_dssim) {
            return Err(Error::Config("lambda_dssim must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Resolved configuration in the same `key = value` format.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let m = &self.masking;
        let g = &self.guide;
        let s = &self.scene;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("seed", self.seed.to_string());
        kv("iterations", t.iterations.to_string());
        kv("lambda_dssim", t.lambda_dssim.to_string());
        kv("background", fmt3(t.background));
        kv("lr.position", t.lr.position.to_string());
        kv("lr.scale", t.lr.scale.to_string());
        kv("lr.rotation", t.lr.rotation.to_string());
        kv("lr.opacity", t.lr.opacity.to_string());
        kv("lr.color", t.lr.color.to_string());
        kv(
            "masking.mode",
            match self.mask_mode {
                MaskMode::Adaptive => "adaptive",
                MaskMode::None => "none",
                MaskMode::Oracle => "oracle",
            }
            .into(),
        );
        kv("masking.t_max", m.t_max.to_string());
        kv("masking.activation_iter", m.activation_iter.to_string());
        kv("masking.lambda_l", m.lambda_local.to_string());
        kv("masking.lambda_g", m.lambda_global.to_string());
        kv("masking.track_iou", m.track_iou.to_string());
        kv(
            "masking.stats",
            match m.stats_domain {
                StatsDomain::Pixels => "pixels",
                StatsDomain::Objects => "objects",
            }
            .into(),
        );
        kv(
            "masking.spread",
            match m.spread {
                Spread::Variance => "variance",
                Spread::StdDev => "stddev",
            }
            .into(),
        );
        kv("sampling.n", self.sampling.n.to_string());
        kv("sampling.k", self.sampling.k.to_string());
        kv("sampling.neighbors", self.sampling.neighbors.to_string());
        kv(
            "sampling.normalization",
            match self.sampling.normalization {
                ScoreNormalization::UnitSum => "unit_sum",
                ScoreNormalization::MinMaxPerDimension => "minmax",
            }
            .into(),
        );
        kv("guide.enabled", self.use_guide.to_string());
        kv("guide.tau", g.tau.to_string());
        kv("guide.gamma1", g.gamma1.to_string());
        kv("guide.gamma2", g.gamma2.to_string());
        kv("guide.gamma3", g.gamma3.to_string());
        kv("guide.beta", g.beta.to_string());
        kv("guide.densify_interval", g.densify_interval.to_string());
        kv(
            "guide.datum",
            match g.datum {
                DistanceDatum::Center => "center",
                DistanceDatum::HalfLengthOffset => "half_length",
            }
            .into(),
        );
        kv("scene.frames", s.n_frames.to_string());
        kv("scene.width", s.width.to_string());
        kv("scene.height", s.height.to_string());
        kv("scene.pixels_per_unit", s.pixels_per_unit.to_string());
        kv("scene.objects", s.static_objects.to_string());
        kv("scene.gaussians_per_object", s.gaussians_per_object.to_string());
        kv("scene.extent", s.extent.to_string());
        kv("scene.noise", s.noise_sigma.to_string());
        kv("scene.seed", s.seed.to_string());
        out
    }
}
