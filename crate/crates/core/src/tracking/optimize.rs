//! Levenberg–Marquardt motion-only bundle adjustment with a Huber kernel.

use nalgebra::{Matrix2x6, Matrix3, Matrix6, Vector6};

use super::{Observation, Residual, TrackerConfig};
use crate::error::{Error, Result};
use crate::geometry::{skew, Intrinsics, Point3, Pose};

const MIN_DEPTH: f64 = 1e-9;
const MAX_CONSECUTIVE_REJECTIONS: usize = 5;

/// Huber kernel on a squared error `s`.
#[inline]
pub fn huber(s: f64, delta: f64) -> f64 {
    let r = s.sqrt();
    if r <= delta {
        s
    } else {
        2.0 * delta * r - delta * delta
    }
}

/// `dρ/ds`, the IRLS weight.
#[inline]
pub fn huber_weight(s: f64, delta: f64) -> f64 {
    let r = s.sqrt();
    if r <= delta {
        1.0
    } else {
        delta / r
    }
}

/// `e = P_I − π(T · P_w)` in pixels.
pub fn residual(pose: &Pose, intr: &Intrinsics, obs: &Observation, point: &Point3) -> Result<Residual> {
    residual_jacobian(pose, intr, obs, point).map(|(e, _)| e)
}

/// Residual and its Jacobian with respect to a left tangent perturbation
/// `exp(ξ)·T`, ξ = [ρ, φ].
pub fn residual_jacobian(
    pose: &Pose,
    intr: &Intrinsics,
    obs: &Observation,
    point: &Point3,
) -> Result<(Residual, Matrix2x6<f64>)> {
    let pc = pose.transform(point);
    if pc.z <= MIN_DEPTH {
        return Err(Error::BehindCamera { depth: pc.z });
    }
    let [u, v] = intr.project_camera(&pc);
    let e = Residual::new(obs.pixel[0] - u, obs.pixel[1] - v);
    let iz = 1.0 / pc.z;
    let iz2 = iz * iz;
    let dpi = nalgebra::Matrix2x3::new(
        intr.fx * iz,
        0.0,
        -intr.fx * pc.x * iz2,
        0.0,
        intr.fy * iz,
        -intr.fy * pc.y * iz2,
    );
    let dp_dphi: Matrix3<f64> = -skew(&pc);
    let mut j = Matrix2x6::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(-dpi));
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-dpi * dp_dphi));
    Ok((e, j))
}

#[derive(Clone, Debug)]
pub struct PoseEstimate {
    pub pose: Pose,
    /// Per-observation inlier flag at the final pose (false for behind-camera points).
    pub inliers: Vec<bool>,
    pub cost: f64,
    /// Accepted LM steps over both passes.
    pub iterations: usize,
}

impl PoseEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

struct Linearization {
    cost: f64,
    h: Matrix6<f64>,
    g: Vector6<f64>,
    jacobians: Vec<Matrix2x6<f64>>,
    used: usize,
}

fn squared_error(e: &Residual, obs: &Observation) -> f64 {
    obs.weight * obs.weight * e.norm_squared()
}

fn linearize(
    pose: &Pose,
    intr: &Intrinsics,
    obs: &[Observation],
    points: &[Point3],
    active: &[bool],
    delta: f64,
) -> Linearization {
    let mut lin = Linearization {
        cost: 0.0,
        h: Matrix6::zeros(),
        g: Vector6::zeros(),
        jacobians: Vec::with_capacity(obs.len()),
        used: 0,
    };
    for (o, &on) in obs.iter().zip(active) {
        if !on {
            continue;
        }
        let Ok((e, j)) = residual_jacobian(pose, intr, o, &points[o.point]) else {
            continue;
        };
        let s = squared_error(&e, o);
        let w = huber_weight(s, delta) * o.weight * o.weight;
        lin.cost += huber(s, delta);
        lin.h += w * j.transpose() * j;
        lin.g += w * j.transpose() * e;
        lin.jacobians.push(j);
        lin.used += 1;
    }
    lin
}

fn robust_cost(
    pose: &Pose,
    intr: &Intrinsics,
    obs: &[Observation],
    points: &[Point3],
    active: &[bool],
    delta: f64,
) -> (f64, usize) {
    let mut cost = 0.0;
    let mut used = 0;
    for (o, &on) in obs.iter().zip(active) {
        if on {
            if let Ok(e) = residual(pose, intr, o, &points[o.point]) {
                cost += huber(squared_error(&e, o), delta);
                used += 1;
            }
        }
    }
    (cost, used)
}

fn run_lm(
    initial: &Pose,
    intr: &Intrinsics,
    obs: &[Observation],
    points: &[Point3],
    active: &[bool],
    cfg: &TrackerConfig,
) -> Result<(Pose, f64, usize)> {
    let delta = cfg.huber_delta;
    let mut pose = initial.clone();
    let mut lin = linearize(&pose, intr, obs, points, active, delta);
    if lin.used < 6 {
        return Err(Error::InsufficientObservations {
            found: lin.used,
            required: 6,
        });
    }
    let mut lambda = cfg.initial_damping;
    let mut rejections = 0;
    let mut accepted = 0;
    for _ in 0..cfg.max_iterations {
        if lin.g.amax() == 0.0 {
            break;
        }
        let mut a = lin.h;
        for i in 0..6 {
            a[(i, i)] += lambda * lin.h[(i, i)].max(1e-9);
        }
        // g is half the cost gradient, so the damped Gauss–Newton step solves A·δ = −g
        let Some(step) = a.cholesky().map(|c| c.solve(&(-lin.g))) else {
            lambda *= 10.0;
            rejections += 1;
            continue;
        };
        let motion = lin.jacobians.iter().map(|j| (j * step).norm()).fold(0.0, f64::max);
        if motion < cfg.pixel_tolerance {
            break;
        }
        let candidate = pose.retract(&step);
        let (new_cost, used) = robust_cost(&candidate, intr, obs, points, active, delta);
        if new_cost.is_finite() && new_cost <= lin.cost && used >= lin.used {
            let rel = (lin.cost - new_cost) / lin.cost.max(f64::MIN_POSITIVE);
            pose = candidate;
            accepted += 1;
            rejections = 0;
            lambda = (lambda * 0.1).max(1e-12);
            lin = linearize(&pose, intr, obs, points, active, delta);
            if rel < cfg.cost_tolerance {
                break;
            }
        } else {
            lambda *= 10.0;
            rejections += 1;
            if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                // Gauss–Newton predicted decrease; negligible means we are at a minimum.
                let predicted = -lin.g.dot(&step);
                if predicted <= 1e-9 * lin.cost + 1e-15 {
                    break;
                }
                return Err(Error::Diverged { iterations: accepted });
            }
        }
    }
    Ok((pose, lin.cost, accepted))
}

fn classify(
    pose: &Pose,
    intr: &Intrinsics,
    obs: &[Observation],
    points: &[Point3],
    cfg: &TrackerConfig,
) -> Vec<bool> {
    obs.iter()
        .map(|o| match residual(pose, intr, o, &points[o.point]) {
            Ok(e) => squared_error(&e, o).sqrt() <= 2.0 * cfg.huber_delta,
            Err(_) => false,
        })
        .collect()
}

/// Robust pose refinement. `observations[k].point` indexes `points`.
///
/// A first pass uses every observation; observations whose weighted residual
/// norm exceeds `2·δ_h` are then flagged and a second pass runs on inliers.
pub fn optimize_pose(
    initial: &Pose,
    observations: &[Observation],
    points: &[Point3],
    intr: &Intrinsics,
    cfg: &TrackerConfig,
) -> Result<PoseEstimate> {
    let all = vec![true; observations.len()];
    let (pose, cost, it1) = run_lm(initial, intr, observations, points, &all, cfg)?;
    let inliers = classify(&pose, intr, observations, points, cfg);
    if inliers == all {
        return Ok(PoseEstimate {
            pose,
            inliers,
            cost,
            iterations: it1,
        });
    }
    match run_lm(&pose, intr, observations, points, &inliers, cfg) {
        Ok((pose2, cost2, it2)) => Ok(PoseEstimate {
            inliers: classify(&pose2, intr, observations, points, cfg),
            pose: pose2,
            cost: cost2,
            iterations: it1 + it2,
        }),
        // too few inliers to re-fit: report the first pass
        Err(Error::InsufficientObservations { .. }) => Ok(PoseEstimate {
            pose,
            inliers,
            cost,
            iterations: it1,
        }),
        Err(e) => Err(e),
    }
}
