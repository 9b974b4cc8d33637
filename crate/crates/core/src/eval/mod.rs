//! Trajectory accuracy, photometric quality and run-time summaries.

mod timing;

pub use timing::{percentile_nearest_rank, timing_report, FrameTiming, StageSummary, TimingReport};

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::grid::{ColorImage, Grid};
use crate::mask::StaticMask;
use crate::trajectory::Trajectory;

pub const DEFAULT_MAX_DT: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct PosePair {
    pub t_est: f64,
    pub t_gt: f64,
    /// Camera-to-world poses.
    pub est: Pose,
    pub gt: Pose,
}

/// Greedy nearest-timestamp association: candidate pairs with |Δt| ≤ `max_dt`
/// are taken in order of increasing |Δt|, each pose used at most once.
/// Result is ordered by estimate timestamp.
pub fn associate(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<Vec<PosePair>> {
    if est.is_empty() || gt.is_empty() {
        return Err(Error::EmptyDataset("trajectory association needs non-empty inputs".into()));
    }
    let mut gt_sorted: Vec<usize> = (0..gt.len()).collect();
    gt_sorted.sort_by(|&a, &b| gt.poses[a].0.total_cmp(&gt.poses[b].0));
    let gt_times: Vec<f64> = gt_sorted.iter().map(|&i| gt.poses[i].0).collect();

    let mut candidates = Vec::new();
    for (ei, (te, _)) in est.poses.iter().enumerate() {
        let start = gt_times.partition_point(|&t| t < te - max_dt);
        for (k, &tg) in gt_times.iter().enumerate().skip(start) {
            if tg > te + max_dt {
                break;
            }
            candidates.push(((te - tg).abs(), ei, gt_sorted[k]));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut est_used = vec![false; est.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (_, ei, gi) in candidates {
        if est_used[ei] || gt_used[gi] {
            continue;
        }
        est_used[ei] = true;
        gt_used[gi] = true;
        pairs.push((ei, gi));
    }
    if pairs.is_empty() {
        return Err(Error::NoPairsFound { max_dt });
    }
    pairs.sort_by(|a, b| est.poses[a.0].0.total_cmp(&est.poses[b.0].0));
    Ok(pairs
        .into_iter()
        .map(|(ei, gi)| PosePair {
            t_est: est.poses[ei].0,
            t_gt: gt.poses[gi].0,
            est: est.poses[ei].1.clone(),
            gt: gt.poses[gi].1.clone(),
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct AteReport {
    pub rmse: f64,
    pub mean: f64,
    pub std: f64,
    pub errors: Vec<f64>,
    /// Rigid transform applied to the estimated positions.
    #[serde(skip)]
    pub alignment: Pose,
    pub scale: f64,
    /// Estimated positions are (nearly) collinear, so the rotation about
    /// their line is not determined.
    pub degenerate: bool,
}

/// Least-squares rigid alignment (no scale) of `est` onto `gt`:
/// returns `(R, t)` minimizing Σ‖gt − (R·est + t)‖² and a collinearity flag.
pub fn align_rigid(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> (Pose, bool) {
    let n = est.len() as f64;
    let me = est.iter().sum::<Vector3<f64>>() / n;
    let mg = gt.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (e, g) in est.iter().zip(gt) {
        h += (g - mg) * (e - me).transpose();
        spread += (e - me) * (e - me).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    let t = mg - r * me;
    let sv = spread.symmetric_eigenvalues();
    let mut ev: Vec<f64> = sv.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let degenerate = ev[1] <= 1e-12 * ev[0].max(1e-300);
    (Pose::new(r, t), degenerate)
}

pub fn ate(pairs: &[PosePair]) -> Result<AteReport> {
    if pairs.len() < 3 {
        return Err(Error::TooFewPairs(pairs.len()));
    }
    let est: Vec<Vector3<f64>> = pairs.iter().map(|p| p.est.translation).collect();
    let gt: Vec<Vector3<f64>> = pairs.iter().map(|p| p.gt.translation).collect();
    let (alignment, degenerate) = align_rigid(&est, &gt);
    if degenerate {
        log::warn!("ATE alignment is degenerate: estimated positions are collinear");
    }
    let errors: Vec<f64> = est
        .iter()
        .zip(&gt)
        .map(|(e, g)| (alignment.transform(e) - g).norm())
        .collect();
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let std = (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n).sqrt();
    Ok(AteReport {
        rmse,
        mean,
        std,
        errors,
        alignment,
        scale: 1.0,
        degenerate,
    })
}

/// PSNR in dB over static pixels; `f64::INFINITY` when the images agree there.
pub fn psnr(render: &ColorImage, gt: &ColorImage, mask: &StaticMask) -> Result<f64> {
    render.ensure_same_dims(gt)?;
    render.ensure_same_dims(mask.grid())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (a, b)) in render.as_slice().iter().zip(gt.as_slice()).enumerate() {
        if mask.grid().as_slice()[i] == 0 {
            continue;
        }
        for k in 0..3 {
            sum += (a[k] - b[k]).powi(2);
        }
        n += 3;
    }
    if n == 0 {
        return Err(Error::NoStaticPixels);
    }
    let mse = sum / n as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

/// Mean absolute color error over a pixel region, restricted to pixels the
/// render actually covers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RegionError {
    /// Sum of |render − reference| over covered pixels and channels.
    pub abs_sum: f64,
    /// Pixels in the region.
    pub pixels: usize,
    /// Region pixels whose rendered opacity reaches the coverage threshold.
    pub covered: usize,
}

impl RegionError {
    /// Per-channel mean absolute error; `None` when nothing was covered.
    pub fn l1(&self) -> Option<f64> {
        (self.covered > 0).then(|| self.abs_sum / (3 * self.covered) as f64)
    }

    pub fn coverage(&self) -> f64 {
        if self.pixels == 0 {
            0.0
        } else {
            self.covered as f64 / self.pixels as f64
        }
    }

    pub fn merge(&mut self, o: &RegionError) {
        self.abs_sum += o.abs_sum;
        self.pixels += o.pixels;
        self.covered += o.covered;
    }
}

/// Color error of `render` against `reference` on the dynamic pixels of
/// `region`, counting only pixels with rendered opacity ≥ `min_alpha`.
pub fn region_color_error(
    render: &ColorImage,
    alpha: &Grid<f64>,
    reference: &ColorImage,
    region: &StaticMask,
    min_alpha: f64,
) -> Result<RegionError> {
    render.ensure_same_dims(reference)?;
    render.ensure_same_dims(alpha)?;
    render.ensure_same_dims(region.grid())?;
    let mut e = RegionError::default();
    for (i, &m) in region.grid().as_slice().iter().enumerate() {
        if m != 0 {
            continue;
        }
        e.pixels += 1;
        if alpha.as_slice()[i] < min_alpha {
            continue;
        }
        e.covered += 1;
        let (a, b) = (render.as_slice()[i], reference.as_slice()[i]);
        e.abs_sum += (0..3).map(|k| (a[k] - b[k]).abs()).sum::<f64>();
    }
    Ok(e)
}

/// One named metric for the JSON/text reports.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Metric {
    pub name: String,
    /// `None` encodes non-finite values (e.g. the +∞ PSNR sentinel).
    pub value: Option<f64>,
    pub units: String,
}

impl Metric {
    pub fn new(name: &str, value: f64, units: &str) -> Self {
        Self {
            name: name.into(),
            value: value.is_finite().then_some(value),
            units: units.into(),
        }
    }
}

pub fn metrics_json(metrics: &[Metric]) -> Result<String> {
    Ok(serde_json::to_string_pretty(metrics)?)
}

pub fn metrics_text(metrics: &[Metric]) -> String {
    let mut out = String::new();
    for m in metrics {
        let v = m.value.map_or("inf".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(out, "{:<24} {v} {}", m.name, m.units);
    }
    out
}
