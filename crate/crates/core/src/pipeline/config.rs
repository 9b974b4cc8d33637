//! Text configuration: one `key = value` per line, `#` starts a comment.
//! Absent keys keep their defaults; unknown keys are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::MaskCorruption;
use crate::dynproc::DynprocConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::gsmap::{GsmapConfig, OptimizerKind};
use crate::tracking::TrackerConfig;

/// Default length of generated synthetic sequences.
pub const DEFAULT_SYNTHETIC_FRAMES: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    /// TUM-layout directory (rgb/, depth/, an association file, optional groundtruth.txt).
    Tum(PathBuf),
    /// Built-in ray-cast scene; `frames` overrides the configured length.
    Synthetic { name: String, frames: Option<usize> },
}

impl FromStr for DatasetSpec {
    type Err = Error;

    /// `synthetic:<name>[:<frames>]` or a directory path.
    fn from_str(s: &str) -> Result<Self> {
        let Some(rest) = s.strip_prefix("synthetic:") else {
            return Ok(DatasetSpec::Tum(PathBuf::from(s)));
        };
        let (name, frames) = match rest.split_once(':') {
            Some((n, f)) => {
                let f = f
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad synthetic frame count `{f}`")))?;
                (n, Some(f))
            }
            None => (rest, None),
        };
        Ok(DatasetSpec::Synthetic {
            name: name.to_string(),
            frames,
        })
    }
}

/// Where per-frame segment masks come from.
#[derive(Clone, Debug, PartialEq)]
pub enum MaskSetting {
    /// Synthetic ground truth for synthetic data, `<root>/masks` for TUM when present, else none.
    Auto,
    None,
    Synthetic,
    Directory(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub dataset: Option<DatasetSpec>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    /// Process at most this many frames (0 = all).
    pub max_frames: usize,
    pub synthetic_frames: usize,
    pub synthetic_color_noise: f64,
    pub synthetic_depth_noise: f64,
    pub mask: MaskSetting,
    pub mask_corruption: MaskCorruption,
    /// Refine raw masks with the background model; off = raw masks only.
    pub prior_mask: bool,
    pub dynproc: DynprocConfig,
    pub features: FeatureConfig,
    pub tracker: TrackerConfig,
    pub gsmap: GsmapConfig,
    pub render_keyframes: bool,
    pub dump_masks: bool,
    pub dump_features: bool,
    /// The run fails when more than this fraction of frames is lost.
    pub max_lost_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            out_dir: None,
            seed: 0,
            max_frames: 0,
            synthetic_frames: DEFAULT_SYNTHETIC_FRAMES,
            synthetic_color_noise: 0.0,
            synthetic_depth_noise: 0.0,
            mask: MaskSetting::Auto,
            mask_corruption: MaskCorruption::default(),
            prior_mask: true,
            dynproc: DynprocConfig::default(),
            features: FeatureConfig::default(),
            tracker: TrackerConfig::default(),
            gsmap: GsmapConfig::default(),
            render_keyframes: true,
            dump_masks: false,
            dump_features: false,
            max_lost_fraction: 0.5,
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::ConfigParse {
        line,
        message: format!("cannot parse `{value}` for `{key}`"),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::ConfigParse {
            line,
            message: format!("expected a boolean for `{key}`, got `{value}`"),
        }),
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::ConfigParse {
                    line,
                    message: format!("expected `key = value`, got `{content}`"),
                });
            };
            cfg.set(line, key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` assignment; `line` is used for error reporting.
    pub fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let d = &mut self.dynproc;
        let f = &mut self.features;
        let t = &mut self.tracker;
        let g = &mut self.gsmap;
        match key {
            "dataset" => self.dataset = Some(v.parse()?),
            "out" => self.out_dir = Some(PathBuf::from(v)),
            "seed" => self.seed = parse(line, key, v)?,
            "max_frames" => self.max_frames = parse(line, key, v)?,
            "synthetic_frames" => self.synthetic_frames = parse(line, key, v)?,
            "synthetic_color_noise" => self.synthetic_color_noise = parse(line, key, v)?,
            "synthetic_depth_noise" => self.synthetic_depth_noise = parse(line, key, v)?,
            "mask_source" => {
                self.mask = match v {
                    "auto" => MaskSetting::Auto,
                    "none" => MaskSetting::None,
                    "synthetic" => MaskSetting::Synthetic,
                    dir => MaskSetting::Directory(PathBuf::from(dir)),
                }
            }
            "mask_dropout" => self.mask_corruption.dropout = parse(line, key, v)?,
            "mask_dilation" => self.mask_corruption.dilation = parse(line, key, v)?,
            "prior_mask" => self.prior_mask = parse_bool(line, key, v)?,
            "adaptive_features" => f.adaptive = parse_bool(line, key, v)?,
            "render_keyframes" => self.render_keyframes = parse_bool(line, key, v)?,
            "dump_masks" => self.dump_masks = parse_bool(line, key, v)?,
            "dump_features" => self.dump_features = parse_bool(line, key, v)?,
            "max_lost_fraction" => self.max_lost_fraction = parse(line, key, v)?,

            "flow_threshold" => d.flow_threshold = parse(line, key, v)?,
            "tau" => d.tau = parse(line, key, v)?,
            "rho" => d.rho = parse(line, key, v)?,
            "sigma_m" => d.sigma_m = parse(line, key, v)?,
            "n_m" => d.n_m = parse(line, key, v)?,
            "refine_radius" => d.radius = parse(line, key, v)?,
            "literal_dynamic_blend" => d.literal_dynamic_blend = parse_bool(line, key, v)?,
            "flow_levels" => d.flow_levels = parse(line, key, v)?,
            "flow_window" => d.flow_window = parse(line, key, v)?,
            "flow_iterations" => d.flow_iterations = parse(line, key, v)?,
            "flow_min_eigen" => d.flow_min_eigen = parse(line, key, v)?,

            "sigma_0" => f.sigma_0 = parse(line, key, v)?,
            "k" => f.k = parse(line, key, v)?,
            "n_f" => f.n_f = parse(line, key, v)?,
            "n_levels" => f.n_levels = parse(line, key, v)?,
            "scale_factor" => {
                f.scale_factor = parse(line, key, v)?;
                t.scale_factor = f.scale_factor;
            }
            "target_count" => f.target_count = if v == "auto" { None } else { Some(parse(line, key, v)?) },
            "blur_sigma" => f.blur_sigma = parse(line, key, v)?,
            "inverted_comparator" => f.inverted_comparator = parse_bool(line, key, v)?,

            "huber_delta" => t.huber_delta = parse(line, key, v)?,
            "max_iterations" => t.max_iterations = parse(line, key, v)?,
            "initial_damping" => t.initial_damping = parse(line, key, v)?,
            "pixel_tolerance" => t.pixel_tolerance = parse(line, key, v)?,
            "cost_tolerance" => t.cost_tolerance = parse(line, key, v)?,
            "min_inliers" => t.min_inliers = parse(line, key, v)?,
            "search_radius" => t.search_radius = parse(line, key, v)?,
            "match_ratio" => t.match_ratio = parse(line, key, v)?,
            "max_descriptor_distance" => t.max_descriptor_distance = parse(line, key, v)?,
            "keyframe_inlier_ratio" => t.keyframe_inlier_ratio = parse(line, key, v)?,
            "keyframe_translation" => t.keyframe_translation = parse(line, key, v)?,
            "keyframe_rotation_deg" => t.keyframe_rotation = parse::<f64>(line, key, v)?.to_radians(),

            "lambda" => g.lambda = parse(line, key, v)?,
            "base_radius" => g.base_radius = parse(line, key, v)?,
            "base_opacity" => g.base_opacity = parse(line, key, v)?,
            "n_densify" => g.n_densify = parse(line, key, v)?,
            "densify_radius_factor" => g.densify_radius_factor = parse(line, key, v)?,
            "densify_opacity" => g.densify_opacity = parse(line, key, v)?,
            "dup_radius_factor" => g.dup_radius_factor = parse(line, key, v)?,
            "iterations_per_keyframe" => g.iterations_per_keyframe = parse(line, key, v)?,
            "window_size" => g.window_size = parse(line, key, v)?,
            "prune_interval" => g.prune_interval = parse(line, key, v)?,
            "prune_opacity" => g.prune_opacity = parse(line, key, v)?,
            "optimizer" => {
                g.optimizer = match v {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => {
                        return Err(Error::ConfigParse {
                            line,
                            message: format!("optimizer must be `adam` or `sgd`, got `{v}`"),
                        })
                    }
                }
            }
            "lr_position" => g.lr_position = parse(line, key, v)?,
            "lr_opacity" => g.lr_opacity = parse(line, key, v)?,
            "lr_scale" => g.lr_scale = parse(line, key, v)?,
            "lr_rotation" => g.lr_rotation = parse(line, key, v)?,
            "lr_color" => g.lr_color = parse(line, key, v)?,
            "max_gaussians" => g.max_gaussians = parse(line, key, v)?,
            "background_min_alpha" => g.background_min_alpha = parse(line, key, v)?,
            _ => {
                return Err(Error::UnknownConfigKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dynproc.validate()?;
        self.features.validate()?;
        self.tracker.validate()?;
        self.gsmap.validate()?;
        if !(0.0..=1.0).contains(&self.mask_corruption.dropout) {
            return Err(Error::InvalidConfig("mask_dropout must lie in [0, 1]".into()));
        }
        if self.synthetic_frames < 2 {
            return Err(Error::InvalidConfig("synthetic_frames must be at least 2".into()));
        }
        Ok(())
    }

    /// The effective numeric parameters in the same `key = value` form.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let (d, f, t, g) = (&self.dynproc, &self.features, &self.tracker, &self.gsmap);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "prior_mask = {}", self.prior_mask);
        let _ = writeln!(s, "adaptive_features = {}", f.adaptive);
        let _ = writeln!(s, "n_f = {}\nn_m = {}\nk = {}\nsigma_m = {}\nsigma_0 = {}\nlambda = {}", f.n_f, d.n_m, f.k, d.sigma_m, f.sigma_0, g.lambda);
        let _ = writeln!(s, "tau = {}\nrho = {}\nflow_threshold = {}", d.tau, d.rho, d.flow_threshold);
        let _ = writeln!(s, "search_radius = {}\nmin_inliers = {}", t.search_radius, t.min_inliers);
        let _ = writeln!(s, "iterations_per_keyframe = {}\nmax_gaussians = {}", g.iterations_per_keyframe, g.max_gaussians);
        s
    }
}
