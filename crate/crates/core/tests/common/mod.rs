//! Shared oracles for integration and acceptance tests.
#![allow(dead_code)]

use dynsplat::dataset::Frame;
use dynsplat::geometry::{Intrinsics, Point3, Pose};
use dynsplat::grid::Grid;
use dynsplat::gsmap::{self, logit, project_gaussian, Gaussian, GaussianMap};
use dynsplat::mask::StaticMask;
use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;

/// Footprint written out independently of the library: `exp(−q/2)` minus its
/// tangent line at q = 9, normalized to 1 at the center; zero beyond 3σ.
fn oracle_footprint(q: f64) -> f64 {
    if q >= 9.0 {
        return 0.0;
    }
    let e9 = (-4.5f64).exp();
    ((-0.5 * q).exp() - e9 * (1.0 - 0.5 * (q - 9.0))) / (1.0 - 5.5 * e9)
}

pub struct OracleImage {
    pub color: Grid<[f64; 3]>,
    pub depth: Grid<f64>,
    pub alpha: Grid<f64>,
    /// Σ of compositing weights per pixel.
    pub weight_sum: Grid<f64>,
}

/// All-pairs compositor: every pixel visits every projected Gaussian in depth
/// order, with no bounding boxes, tiles or culling beyond the near plane.
pub fn brute_force_render(map: &GaussianMap, pose: &Pose, intr: &Intrinsics) -> OracleImage {
    let mut proj: Vec<_> = map.gaussians.iter().filter_map(|g| project_gaussian(g, pose, intr)).collect();
    proj.sort_by(|a, b| a.depth.total_cmp(&b.depth));
    let (w, h) = (intr.width, intr.height);
    let mut color = Grid::new(w, h, [0.0; 3]);
    let mut depth = Grid::new(w, h, 0.0);
    let mut alpha = Grid::new(w, h, 0.0);
    let mut weight_sum = Grid::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut t: f64 = 1.0;
            let mut c = [0.0; 3];
            let mut d = 0.0;
            let mut ws = 0.0;
            for p in &proj {
                let dx = x as f64 - p.mean[0];
                let dy = y as f64 - p.mean[1];
                let q = p.conic[0] * dx * dx + 2.0 * p.conic[1] * dx * dy + p.conic[2] * dy * dy;
                let a = (p.opacity * oracle_footprint(q)).clamp(0.0, 0.999);
                if a == 0.0 {
                    continue;
                }
                let wgt = a * t;
                for k in 0..3 {
                    c[k] += wgt * p.color[k];
                }
                d += wgt * p.depth;
                ws += wgt;
                t *= 1.0 - a;
                if t < 1e-4 {
                    break;
                }
            }
            color.set(x, y, c);
            depth.set(x, y, d);
            alpha.set(x, y, 1.0 - t);
            weight_sum.set(x, y, ws);
        }
    }
    OracleImage {
        color,
        depth,
        alpha,
        weight_sum,
    }
}

pub fn small_intrinsics(size: usize) -> Intrinsics {
    let f = size as f64;
    Intrinsics::new(f, f, (size as f64 - 1.0) / 2.0, (size as f64 - 1.0) / 2.0, size, size).unwrap()
}

/// Random Gaussian in the view frustum of an identity camera, anisotropic
/// and arbitrarily rotated.
pub fn random_gaussian(rng: &mut impl Rng, z: f64, opacity: (f64, f64)) -> Gaussian {
    let x = rng.gen_range(-0.4..0.4) * z;
    let y = rng.gen_range(-0.4..0.4) * z;
    let mut g = Gaussian::new(Point3::new(x, y, z), 0.1, 0.5, [0.0; 3]);
    g.log_scale = Vector3::new(
        rng.gen_range(0.02f64..0.25).ln(),
        rng.gen_range(0.02f64..0.25).ln(),
        rng.gen_range(0.02f64..0.25).ln(),
    );
    let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let q = UnitQuaternion::from_scaled_axis(axis * rng.gen_range(0.0..1.5));
    // deliberately non-unit raw quaternion to exercise normalization
    let s = rng.gen_range(0.7..1.3);
    g.rotation = [q.w * s, q.i * s, q.j * s, q.k * s];
    g.opacity_logit = logit(rng.gen_range(opacity.0..opacity.1));
    g.color = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
    g
}

/// `n` Gaussians with pairwise depth separation of at least `min_gap`.
pub fn random_map(rng: &mut impl Rng, n: usize, opacity: (f64, f64), min_gap: f64) -> GaussianMap {
    let mut depths: Vec<f64> = Vec::new();
    while depths.len() < n {
        let z = rng.gen_range(1.0..4.0);
        if depths.iter().all(|d: &f64| (d - z).abs() >= min_gap) {
            depths.push(z);
        }
    }
    GaussianMap::from_gaussians(depths.into_iter().map(|z| random_gaussian(rng, z, opacity)).collect())
}

/// Ground truth whose residuals against `base` stay at least 0.05 away from
/// zero, so finite differences never straddle the L1 kink. Roughly one pixel
/// in ten has invalid depth and one in five is dynamic.
pub fn offset_ground_truth(rng: &mut impl Rng, base: &gsmap::RenderOutput) -> (Frame, StaticMask) {
    let (w, h) = base.color.dims();
    let off = |rng: &mut dyn rand::RngCore| {
        let m: f64 = rng.gen_range(0.05..0.5);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    };
    let color = Grid::from_fn(w, h, |x, y| {
        let c = base.color.get(x, y);
        [c[0] + off(rng), c[1] + off(rng), c[2] + off(rng)]
    });
    let depth = Grid::from_fn(w, h, |x, y| {
        if rng.gen_bool(0.1) {
            0.0
        } else {
            base.depth.get(x, y) + rng.gen_range(0.1..1.0)
        }
    });
    let mask = StaticMask::from_fn(w, h, |_, _| !rng.gen_bool(0.2));
    (
        Frame {
            index: 0,
            timestamp: 0.0,
            color,
            depth,
        },
        mask,
    )
}

/// |a − f| / max(|a|, |f|, floor)
pub fn rel_err(a: f64, f: f64, floor: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(floor)
}
