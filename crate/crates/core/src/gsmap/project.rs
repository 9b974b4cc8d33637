//! Projection of 3D Gaussians to screen-space ellipses and its adjoint.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use super::Gaussian;
use crate::geometry::{Intrinsics, Pose};

pub const NEAR_PLANE: f64 = 0.01;
/// Screen-space low-pass filter added to every projected covariance (pixels²).
pub const COV_FILTER: f64 = 0.3;
/// Footprint support in squared Mahalanobis distance (3σ).
pub const CUTOFF_Q: f64 = 9.0;
/// `exp(−CUTOFF_Q / 2)`.
const CUTOFF_EXP: f64 = 0.011_108_996_538_242_306;
/// `1 / (1 − exp(−4.5)·(1 + CUTOFF_Q / 2))`.
const FOOTPRINT_NORM: f64 = 1.0 / (1.0 - CUTOFF_EXP * (1.0 + 0.5 * CUTOFF_Q));

/// Screen-space footprint `g(q)` of a Gaussian at squared Mahalanobis
/// distance `q`, and `dg/dq`.
///
/// `exp(−q/2)` minus its first-order Taylor expansion at the 3σ cutoff,
/// renormalized so `g(0) = 1`. It reaches zero with zero slope at `q = 9`, so
/// 3σ bounding boxes are exact and gradients stay continuous.
#[inline]
pub fn footprint(q: f64) -> (f64, f64) {
    if q >= CUTOFF_Q {
        return (0.0, 0.0);
    }
    footprint_from_exp(q, (-0.5 * q).exp())
}

/// [`footprint`] given a precomputed `e = exp(−q/2)`, for `q < CUTOFF_Q`.
#[inline]
pub(super) fn footprint_from_exp(q: f64, e: f64) -> (f64, f64) {
    let g = (e - CUTOFF_EXP * (1.0 - 0.5 * (q - CUTOFF_Q))) * FOOTPRINT_NORM;
    let dg = 0.5 * (CUTOFF_EXP - e) * FOOTPRINT_NORM;
    (g, dg)
}

/// Per-Gaussian screen-space quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct Projected {
    pub mean: [f64; 2],
    /// Σ' entries (xx, xy, yy) in pixels².
    pub cov: [f64; 3],
    /// Σ'⁻¹ entries (a, b, c): q = a·dx² + 2b·dx·dy + c·dy².
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Inclusive pixel box `(x0, y0, x1, y1)` of the 3σ support; `None` when off-screen.
    pub bbox: Option<(usize, usize, usize, usize)>,
}

pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

fn normalized(q: &[f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// World-space covariance `R·diag(exp(2s))·Rᵀ`.
pub fn covariance_3d(g: &Gaussian) -> Matrix3<f64> {
    let r = quat_to_matrix(&normalized(&g.rotation));
    let s = Matrix3::from_diagonal(&g.log_scale.map(|v| (2.0 * v).exp()));
    r * s * r.transpose()
}

fn projective_jacobian(intr: &Intrinsics, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(
        intr.fx * iz,
        0.0,
        -intr.fx * t.x * iz * iz,
        0.0,
        intr.fy * iz,
        -intr.fy * t.y * iz * iz,
    )
}

/// Projects a Gaussian; `None` when its center is closer than the near plane.
pub fn project_gaussian(g: &Gaussian, pose: &Pose, intr: &Intrinsics) -> Option<Projected> {
    let t = pose.transform(&g.position);
    if t.z <= NEAR_PLANE {
        return None;
    }
    let j = projective_jacobian(intr, &t);
    let m = j * pose.rotation;
    let cov2 = m * covariance_3d(g) * m.transpose() + Matrix2::identity() * COV_FILTER;
    let (a, b, c) = (cov2[(0, 0)], 0.5 * (cov2[(0, 1)] + cov2[(1, 0)]), cov2[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let mean = [intr.fx * t.x / t.z + intr.cx, intr.fy * t.y / t.z + intr.cy];
    let (rx, ry) = (CUTOFF_Q.sqrt() * a.sqrt(), CUTOFF_Q.sqrt() * c.sqrt());
    let (w, h) = (intr.width as f64, intr.height as f64);
    let (x0, x1) = ((mean[0] - rx).ceil().max(0.0), (mean[0] + rx).floor().min(w - 1.0));
    let (y0, y1) = ((mean[1] - ry).ceil().max(0.0), (mean[1] + ry).floor().min(h - 1.0));
    let bbox = (x0 <= x1 && y0 <= y1 && x1.is_finite() && y1.is_finite())
        .then(|| (x0 as usize, y0 as usize, x1 as usize, y1 as usize));
    Some(Projected {
        mean,
        cov: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: t.z,
        opacity: g.opacity(),
        color: g.color,
        bbox,
    })
}

/// Gradients of the loss with respect to one projected Gaussian's screen-space values.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScreenGrad {
    pub mean: [f64; 2],
    /// With respect to (a, b, c) of the conic, `b` counted once.
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl ScreenGrad {
    pub fn accumulate(&mut self, o: &ScreenGrad) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.depth += o.depth;
        self.opacity += o.opacity;
    }
}

/// Chains screen-space gradients back to the 14 Gaussian parameters
/// (μ, opacity logit, log-scale, raw quaternion, rgb).
pub fn project_backward(g: &Gaussian, pose: &Pose, intr: &Intrinsics, sg: &ScreenGrad) -> [f64; 14] {
    let mut out = [0.0; 14];
    let w = &pose.rotation;
    let t = pose.transform(&g.position);
    let (fx, fy) = (intr.fx, intr.fy);
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;

    let j = projective_jacobian(intr, &t);
    let m = j * w;
    let sigma = covariance_3d(g);
    let cov2 = m * sigma * m.transpose() + Matrix2::identity() * COV_FILTER;
    let (a, b, c) = (cov2[(0, 0)], 0.5 * (cov2[(0, 1)] + cov2[(1, 0)]), cov2[(1, 1)]);
    let det = a * c - b * b;
    let conic = Matrix2::new(c / det, -b / det, -b / det, a / det);

    // conic → covariance: dΣ' = −K·dK·K with the symmetric gradient of K
    let gk = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let g_cov2 = -(conic * gk * conic);

    // Σ' = M Σ Mᵀ
    let g_sigma = m.transpose() * g_cov2 * m;
    let g_m = 2.0 * g_cov2 * m * sigma;
    let g_j = g_m * w.transpose();

    // camera-frame point gradient through J and the mean
    let mut g_t = Vector3::zeros();
    g_t.x += sg.mean[0] * fx * iz;
    g_t.y += sg.mean[1] * fy * iz;
    g_t.z += -sg.mean[0] * fx * t.x * iz2 - sg.mean[1] * fy * t.y * iz2;
    g_t.z += sg.depth;
    g_t.z += g_j[(0, 0)] * (-fx * iz2);
    g_t.x += g_j[(0, 2)] * (-fx * iz2);
    g_t.z += g_j[(0, 2)] * (2.0 * fx * t.x * iz2 * iz);
    g_t.z += g_j[(1, 1)] * (-fy * iz2);
    g_t.y += g_j[(1, 2)] * (-fy * iz2);
    g_t.z += g_j[(1, 2)] * (2.0 * fy * t.y * iz2 * iz);
    let g_mu = w.transpose() * g_t;
    out[0..3].copy_from_slice(g_mu.as_slice());

    let o = g.opacity();
    out[3] = sg.opacity * o * (1.0 - o);

    // Σ = L Lᵀ with L = R S
    let qn = normalized(&g.rotation);
    let r = quat_to_matrix(&qn);
    let s = g.log_scale.map(f64::exp);
    let l = r * Matrix3::from_diagonal(&s);
    let g_l = 2.0 * g_sigma * l;
    let g_s = r.transpose() * g_l;
    for i in 0..3 {
        out[4 + i] = g_s[(i, i)] * s[i];
    }
    let g_r = g_l * Matrix3::from_diagonal(&s);
    let [qw, qx, qy, qz] = qn;
    let dr = [
        Matrix3::new(0.0, -2.0 * qz, 2.0 * qy, 2.0 * qz, 0.0, -2.0 * qx, -2.0 * qy, 2.0 * qx, 0.0),
        Matrix3::new(0.0, 2.0 * qy, 2.0 * qz, 2.0 * qy, -4.0 * qx, -2.0 * qw, 2.0 * qz, 2.0 * qw, -4.0 * qx),
        Matrix3::new(-4.0 * qy, 2.0 * qx, 2.0 * qw, 2.0 * qx, 0.0, 2.0 * qz, -2.0 * qw, 2.0 * qz, -4.0 * qy),
        Matrix3::new(-4.0 * qz, -2.0 * qw, 2.0 * qx, 2.0 * qw, -4.0 * qz, 2.0 * qy, 2.0 * qx, 2.0 * qy, 0.0),
    ];
    let g_qn: Vec<f64> = dr.iter().map(|d| g_r.component_mul(d).sum()).collect();
    // through q̂ = q / |q|
    let norm = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = (0..4).map(|i| g_qn[i] * qn[i]).sum();
    for i in 0..4 {
        out[7 + i] = (g_qn[i] - qn[i] * dot) / norm;
    }
    out[11..14].copy_from_slice(&sg.color);
    out
}
