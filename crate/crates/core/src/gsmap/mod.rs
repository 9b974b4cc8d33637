//! Explicit 3D Gaussian map: feature-anchored insertion, depth-sorted
//! alpha-compositing of color and depth, masked L1 loss and gradient updates.

mod io;
mod loss;
mod optimize;
mod project;
mod render;

pub use io::{read_map, read_map_text, write_map, write_map_text, MAP_MAGIC, MAP_VERSION};
pub use loss::{loss, LossValue};
pub use optimize::{keyframe_window, optimize_map, Keyframe, OptimizeStats};
pub use project::{
    covariance_3d, footprint, project_backward, project_gaussian, quat_to_matrix, Projected, ScreenGrad, COV_FILTER,
    CUTOFF_Q, NEAR_PLANE,
};
pub use render::{
    backward, render, render_depth_for_background, render_with_state, RenderOutput, RenderState, ALPHA_MAX,
    MIN_TRANSMITTANCE, TILE,
};

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{unproject, Intrinsics, Point3, Pose};
use crate::grid::ColorImage;

pub const N_PARAMS: usize = 14;
pub type ParamGrad = [f64; N_PARAMS];

const MIN_LOG_SCALE: f64 = -13.815_510_557_964_274; // ln 1e-6
const MAX_LOG_SCALE: f64 = std::f64::consts::LN_10;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub position: Point3,
    pub opacity_logit: f64,
    /// Per-axis log standard deviation (log-meters).
    pub log_scale: Vector3<f64>,
    /// Quaternion (w, x, y, z).
    pub rotation: [f64; 4],
    pub color: [f64; 3],
}

impl Gaussian {
    /// Isotropic Gaussian with standard deviation `radius`.
    pub fn new(position: Point3, radius: f64, opacity: f64, color: [f64; 3]) -> Self {
        Self {
            position,
            opacity_logit: logit(opacity),
            log_scale: Vector3::repeat(radius.ln()),
            rotation: [1.0, 0.0, 0.0, 0.0],
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn params(&self) -> ParamGrad {
        let mut p = [0.0; N_PARAMS];
        p[0..3].copy_from_slice(self.position.as_slice());
        p[3] = self.opacity_logit;
        p[4..7].copy_from_slice(self.log_scale.as_slice());
        p[7..11].copy_from_slice(&self.rotation);
        p[11..14].copy_from_slice(&self.color);
        p
    }

    pub fn set_params(&mut self, p: &ParamGrad) {
        self.position = Point3::new(p[0], p[1], p[2]);
        self.opacity_logit = p[3];
        self.log_scale = Vector3::new(p[4], p[5], p[6]);
        self.rotation = [p[7], p[8], p[9], p[10]];
        self.color = [p[11], p[12], p[13]];
    }

    /// Re-establishes the invariants after an unconstrained update.
    fn project_to_valid(&mut self) {
        let n = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 && n.is_finite() {
            self.rotation.iter_mut().for_each(|v| *v /= n);
        } else {
            self.rotation = [1.0, 0.0, 0.0, 0.0];
        }
        self.log_scale = self.log_scale.map(|v| v.clamp(MIN_LOG_SCALE, MAX_LOG_SCALE));
        self.color.iter_mut().for_each(|c| *c = c.clamp(0.0, 1.0));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GsmapConfig {
    /// Depth weight λ in the loss.
    pub lambda: f64,
    pub base_radius: f64,
    pub base_opacity: f64,
    pub n_densify: usize,
    pub densify_radius_factor: f64,
    pub densify_opacity: f64,
    pub dup_radius_factor: f64,
    pub iterations_per_keyframe: usize,
    pub window_size: usize,
    pub prune_interval: usize,
    pub prune_opacity: f64,
    pub optimizer: OptimizerKind,
    pub lr_position: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_color: f64,
    /// Insertion stops once the map holds this many Gaussians.
    pub max_gaussians: usize,
    /// Rendered depth below this accumulated opacity counts as unobserved.
    pub background_min_alpha: f64,
}

impl Default for GsmapConfig {
    fn default() -> Self {
        Self {
            lambda: 0.7,
            base_radius: 0.03,
            base_opacity: 0.5,
            n_densify: 4,
            densify_radius_factor: 2.0,
            densify_opacity: 0.25,
            dup_radius_factor: 1.0,
            iterations_per_keyframe: 60,
            window_size: 8,
            prune_interval: 100,
            prune_opacity: 0.05,
            optimizer: OptimizerKind::Adam,
            lr_position: 2e-3,
            lr_opacity: 1e-1,
            lr_scale: 3e-2,
            lr_rotation: 1e-2,
            lr_color: 4e-2,
            max_gaussians: 20_000,
            background_min_alpha: 0.5,
        }
    }
}

impl GsmapConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ((0.0..=1.0).contains(&self.lambda), "lambda must lie in [0, 1]"),
            (self.base_radius > 0.0, "base_radius must be positive"),
            (self.base_opacity > 0.0 && self.base_opacity < 1.0, "base_opacity must lie in (0, 1)"),
            (self.densify_opacity > 0.0 && self.densify_opacity < 1.0, "densify_opacity must lie in (0, 1)"),
            (self.window_size >= 1, "window_size must be at least 1"),
            (self.prune_interval >= 1, "prune_interval must be at least 1"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::InvalidConfig(msg.into()));
            }
        }
        Ok(())
    }

    fn learning_rates(&self, extent: f64) -> ParamGrad {
        let mut lr = [0.0; N_PARAMS];
        lr[0..3].fill(self.lr_position * extent);
        lr[3] = self.lr_opacity;
        lr[4..7].fill(self.lr_scale);
        lr[7..11].fill(self.lr_rotation);
        lr[11..14].fill(self.lr_color);
        lr
    }
}

/// Gaussians plus per-parameter first/second moment estimates.
#[derive(Clone, Debug)]
pub struct GaussianMap {
    pub gaussians: Vec<Gaussian>,
    first_moment: Vec<ParamGrad>,
    second_moment: Vec<ParamGrad>,
    /// Per-Gaussian optimizer step count (bias correction).
    steps: Vec<u32>,
    /// Scene extent (meters) scaling the position learning rate.
    pub extent: f64,
    /// Total optimization iterations applied (drives the prune schedule).
    pub iterations: usize,
}

impl Default for GaussianMap {
    fn default() -> Self {
        Self::new()
    }
}

impl GaussianMap {
    pub fn new() -> Self {
        Self {
            gaussians: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            steps: Vec::new(),
            extent: 1.0,
            iterations: 0,
        }
    }

    pub fn from_gaussians(gaussians: Vec<Gaussian>) -> Self {
        let mut m = Self::new();
        for g in gaussians {
            m.push(g);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn push(&mut self, g: Gaussian) {
        self.gaussians.push(g);
        self.first_moment.push([0.0; N_PARAMS]);
        self.second_moment.push([0.0; N_PARAMS]);
        self.steps.push(0);
    }

    /// Optimizer state is always length-matched to the Gaussians.
    pub fn state_consistent(&self) -> bool {
        let n = self.gaussians.len();
        self.first_moment.len() == n && self.second_moment.len() == n && self.steps.len() == n
    }

    /// One gradient step (adaptive moments or plain SGD per `cfg.optimizer`).
    pub fn step(&mut self, grads: &[ParamGrad], cfg: &GsmapConfig) {
        assert_eq!(grads.len(), self.len(), "gradient count mismatch");
        let lr = cfg.learning_rates(self.extent);
        let (b1, b2, eps) = (0.9, 0.999, 1e-15);
        for (i, g) in grads.iter().enumerate() {
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let mut p = self.gaussians[i].params();
            match cfg.optimizer {
                OptimizerKind::Adam => {
                    self.steps[i] += 1;
                    let t = self.steps[i] as i32;
                    let (c1, c2) = (1.0 - f64::powi(b1, t), 1.0 - f64::powi(b2, t));
                    let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
                    for k in 0..N_PARAMS {
                        m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                        v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                        let mh = m[k] / c1;
                        let vh = v[k] / c2;
                        p[k] -= lr[k] * mh / (vh.sqrt() + eps);
                    }
                }
                OptimizerKind::Sgd => {
                    for k in 0..N_PARAMS {
                        p[k] -= lr[k] * g[k];
                    }
                }
            }
            let gs = &mut self.gaussians[i];
            gs.set_params(&p);
            gs.project_to_valid();
        }
    }

    /// Removes Gaussians whose opacity fell below `min_opacity`; returns how many.
    pub fn prune(&mut self, min_opacity: f64) -> usize {
        let keep: Vec<bool> = self.gaussians.iter().map(|g| g.opacity() >= min_opacity).collect();
        let before = self.len();
        let mut it = keep.iter();
        self.gaussians.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.first_moment.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.second_moment.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.steps.retain(|_| *it.next().unwrap());
        before - self.len()
    }

    /// Inserts Gaussians anchored at feature pixels with valid depth.
    ///
    /// Each anchor whose back-projection has no Gaussian within the duplicate
    /// radius gets one Gaussian at the base radius and opacity, plus
    /// `n_densify` companions sampled uniformly in the surrounding ball.
    /// Returns the number of Gaussians added.
    pub fn insert_from_features(
        &mut self,
        anchors: &[([f64; 2], f64)],
        color: &ColorImage,
        pose: &Pose,
        intr: &Intrinsics,
        cfg: &GsmapConfig,
        rng: &mut impl Rng,
    ) -> usize {
        let r_dup = cfg.base_radius * cfg.dup_radius_factor;
        let mut index = SpatialHash::new(r_dup.max(1e-6));
        for (i, g) in self.gaussians.iter().enumerate() {
            index.insert(&g.position, i);
        }
        let before = self.len();
        for &(px, depth) in anchors {
            if self.len() + 1 + cfg.n_densify > cfg.max_gaussians {
                log::debug!("Gaussian budget of {} reached; skipping insertion", cfg.max_gaussians);
                break;
            }
            let Ok(p) = unproject(pose, intr, px, depth) else {
                continue;
            };
            if index.any_within(&p, r_dup, &self.gaussians) {
                continue;
            }
            let (xi, yi) = (
                (px[0].round().max(0.0) as usize).min(color.width() - 1),
                (px[1].round().max(0.0) as usize).min(color.height() - 1),
            );
            let c = *color.get(xi, yi);
            index.insert(&p, self.len());
            self.push(Gaussian::new(p, cfg.base_radius, cfg.base_opacity, c));
            let r = cfg.base_radius * cfg.densify_radius_factor;
            for _ in 0..cfg.n_densify {
                let q = p + sample_ball(rng) * r;
                self.push(Gaussian::new(q, cfg.base_radius, cfg.densify_opacity, c));
            }
        }
        self.len() - before
    }
}

fn sample_ball(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm_squared() <= 1.0 {
            return v;
        }
    }
}

/// Uniform-grid hash over Gaussian centers for duplicate queries.
struct SpatialHash {
    cell: f64,
    buckets: std::collections::HashMap<(i64, i64, i64), Vec<usize>>,
}

impl SpatialHash {
    fn new(cell: f64) -> Self {
        Self {
            cell,
            buckets: Default::default(),
        }
    }

    fn key(&self, p: &Point3) -> (i64, i64, i64) {
        (
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        )
    }

    fn insert(&mut self, p: &Point3, id: usize) {
        let k = self.key(p);
        self.buckets.entry(k).or_default().push(id);
    }

    fn any_within(&self, p: &Point3, r: f64, gaussians: &[Gaussian]) -> bool {
        let (kx, ky, kz) = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.buckets.get(&(kx + dx, ky + dy, kz + dz)) {
                        if ids.iter().any(|&i| (gaussians[i].position - p).norm() <= r) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn intr() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 32.0, 32.0, 64, 64).unwrap()
    }

    #[test]
    fn insertion_counts_and_dedup() {
        let cfg = GsmapConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let color = Grid::new(64, 64, [0.3, 0.5, 0.7]);
        let mut map = GaussianMap::new();
        assert_eq!(map.insert_from_features(&[], &color, &Pose::identity(), &intr(), &cfg, &mut rng), 0);
        assert_eq!(map.insert_from_features(&[([32.0, 32.0], 2.0)], &color, &Pose::identity(), &intr(), &cfg, &mut rng), 5);
        let g = &map.gaussians[0];
        assert!((g.position - Point3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        assert!((g.opacity() - 0.5).abs() < 1e-12);
        assert_eq!(g.color, [0.3, 0.5, 0.7]);
        for d in &map.gaussians[1..] {
            assert!((d.opacity() - 0.25).abs() < 1e-12);
            assert!((d.position - g.position).norm() <= 2.0 * cfg.base_radius + 1e-12);
        }
        // a pixel whose back-projection lands 1 cm from an existing Gaussian
        let near = [32.0 + 100.0 * 0.01 / 2.0, 32.0];
        assert_eq!(map.insert_from_features(&[(near, 2.0)], &color, &Pose::identity(), &intr(), &cfg, &mut rng), 0);
        assert!(map.state_consistent());
    }

    #[test]
    fn insertion_respects_budget() {
        let cfg = GsmapConfig {
            max_gaussians: 12,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let color = Grid::new(64, 64, [0.5; 3]);
        let anchors: Vec<_> = (0..5).map(|i| ([10.0 + 10.0 * i as f64, 20.0], 2.0)).collect();
        let mut map = GaussianMap::new();
        map.insert_from_features(&anchors, &color, &Pose::identity(), &intr(), &cfg, &mut rng);
        assert_eq!(map.len(), 10);
    }

    #[test]
    fn prune_removes_transparent_gaussians() {
        let mut map = GaussianMap::from_gaussians(vec![
            Gaussian::new(Point3::new(0.0, 0.0, 1.0), 0.03, 0.5, [0.5; 3]),
            Gaussian::new(Point3::new(0.0, 0.0, 2.0), 0.03, 0.01, [0.5; 3]),
        ]);
        assert_eq!(map.prune(0.05), 1);
        assert_eq!(map.len(), 1);
        assert!(map.state_consistent());
        assert!((map.gaussians[0].position.z - 1.0).abs() < 1e-15);
    }

    #[test]
    fn step_keeps_invariants() {
        let mut map = GaussianMap::from_gaussians(vec![Gaussian::new(Point3::new(0.0, 0.0, 1.0), 0.03, 0.5, [0.99; 3])]);
        let mut g = [0.0; N_PARAMS];
        g[7] = 5.0;
        g[11] = -10.0;
        g[4] = -1e6;
        for _ in 0..200 {
            map.step(&[g], &GsmapConfig::default());
        }
        let gs = &map.gaussians[0];
        let n: f64 = gs.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        assert!(gs.color[0] <= 1.0);
        assert!(gs.log_scale.iter().all(|s| (MIN_LOG_SCALE..=MAX_LOG_SCALE).contains(s)));
    }
}
