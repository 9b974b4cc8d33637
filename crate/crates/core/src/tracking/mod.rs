//! Frame-to-map pose estimation: guided descriptor matching against projected
//! map points followed by robust motion-only bundle adjustment.

mod optimize;
mod track;

pub use optimize::{huber, huber_weight, optimize_pose, residual, residual_jacobian, PoseEstimate};
pub use track::{guided_match, track_frame, TrackResult};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dataset::Frame;
use crate::error::{Error, Result};
use crate::features::{Descriptor, FeaturePoint};
use crate::geometry::{unproject, Intrinsics, Point3, Pose};

pub type Residual = Vector2<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct MapPoint {
    pub position: Point3,
    pub descriptor: Descriptor,
    pub observations: u32,
}

/// A 2D measurement of map point `point`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub point: usize,
    pub pixel: [f64; 2],
    pub level: usize,
    /// Information weight ω (1/pixels); the squared error is scaled by ω².
    pub weight: f64,
}

impl Observation {
    pub fn at_level(point: usize, pixel: [f64; 2], level: usize, scale_factor: f64) -> Self {
        Self {
            point,
            pixel,
            level,
            weight: 1.0 / scale_factor.powi(level as i32),
        }
    }
}

/// Append-only map-point store; ids are indices.
#[derive(Clone, Debug, Default)]
pub struct PointMap {
    pub points: Vec<MapPoint>,
}

impl PointMap {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend(&mut self, new: impl IntoIterator<Item = MapPoint>) {
        self.points.extend(new);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub huber_delta: f64,
    pub max_iterations: usize,
    pub initial_damping: f64,
    /// Stop when the largest predicted pixel motion of a step falls below this.
    pub pixel_tolerance: f64,
    /// Stop when an accepted step changes the cost by less than this fraction.
    pub cost_tolerance: f64,
    pub min_inliers: usize,
    pub search_radius: f64,
    pub match_ratio: f64,
    pub max_descriptor_distance: u32,
    pub scale_factor: f64,
    pub keyframe_inlier_ratio: f64,
    pub keyframe_translation: f64,
    /// Radians.
    pub keyframe_rotation: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            huber_delta: 5.991f64.sqrt(),
            max_iterations: 50,
            initial_damping: 1e-3,
            pixel_tolerance: 1e-10,
            cost_tolerance: 1e-14,
            min_inliers: 10,
            search_radius: 15.0,
            match_ratio: 0.8,
            max_descriptor_distance: 64,
            scale_factor: 1.25,
            keyframe_inlier_ratio: 0.7,
            keyframe_translation: 0.1,
            keyframe_rotation: 10f64.to_radians(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.huber_delta > 0.0) {
            return Err(Error::InvalidConfig("huber_delta must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.search_radius > 0.0) || !(0.0..=1.0).contains(&self.match_ratio) {
            return Err(Error::InvalidConfig("bad matching parameters".into()));
        }
        Ok(())
    }
}

/// Reference state of the last keyframe.
#[derive(Clone, Debug)]
pub struct KeyframeRef {
    pub pose: Pose,
    /// Map points associated with the keyframe (tracked inliers plus new points).
    pub tracked: usize,
}

/// Keyframe when tracking weakens relative to the last keyframe or the camera
/// has moved far enough.
pub fn select_keyframe(pose: &Pose, inliers: usize, last: &KeyframeRef, cfg: &TrackerConfig) -> bool {
    let ratio = if last.tracked == 0 { 0.0 } else { inliers as f64 / last.tracked as f64 };
    let (angle, dist) = pose.distance(&last.pose);
    ratio < cfg.keyframe_inlier_ratio || dist > cfg.keyframe_translation || angle > cfg.keyframe_rotation
}

/// Instantiates map points by back-projecting features with valid depth.
/// Features flagged in `skip` (already matched) are ignored.
pub fn triangulate_new_points(
    pose: &Pose,
    intr: &Intrinsics,
    frame: &Frame,
    features: &[FeaturePoint],
    skip: &[bool],
) -> Vec<MapPoint> {
    let mut out = Vec::new();
    for (i, f) in features.iter().enumerate() {
        if skip.get(i).copied().unwrap_or(false) {
            continue;
        }
        let [x, y] = f.pixel();
        let (xi, yi) = (x.round() as usize, y.round() as usize);
        let Some(d) = frame.depth_at(xi.min(frame.width() - 1), yi.min(frame.height() - 1)) else {
            continue;
        };
        if let Ok(p) = unproject(pose, intr, [x, y], d) {
            out.push(MapPoint {
                position: p,
                descriptor: f.descriptor,
                observations: 1,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Keypoint;
    use crate::geometry::project;
    use crate::grid::Grid;

    fn feature_at(x: f64, y: f64) -> FeaturePoint {
        FeaturePoint {
            keypoint: Keypoint {
                x,
                y,
                level: 0,
                level_x: x as usize,
                level_y: y as usize,
                score: 16,
                response: 0.0,
            },
            descriptor: Descriptor([1, 2, 3, 4]),
        }
    }

    fn frame(depth: Grid<f64>) -> Frame {
        let (w, h) = depth.dims();
        Frame {
            index: 0,
            timestamp: 0.0,
            color: Grid::new(w, h, [0.5; 3]),
            depth,
        }
    }

    #[test]
    fn keyframe_rules() {
        let cfg = TrackerConfig::default();
        let last = KeyframeRef {
            pose: Pose::identity(),
            tracked: 100,
        };
        assert!(!select_keyframe(&Pose::identity(), 100, &last, &cfg));
        let moved = Pose::from_translation(0.0, 0.0, 0.0).compose(&Pose::from_translation(0.2, 0.0, 0.0));
        assert!(select_keyframe(&moved, 100, &last, &cfg));
        assert!(select_keyframe(&Pose::identity(), 50, &last, &cfg));
        assert!(!select_keyframe(&Pose::identity(), 70, &last, &cfg));
        let rot = Pose::exp(&nalgebra::Vector6::new(0.0, 0.0, 0.0, 0.0, 0.2, 0.0));
        assert!(select_keyframe(&rot, 100, &last, &cfg));
    }

    #[test]
    fn new_point_at_principal_point() {
        let intr = Intrinsics::new(100.0, 100.0, 20.0, 15.0, 40, 30).unwrap();
        let f = frame(Grid::new(40, 30, 2.0));
        let pts = triangulate_new_points(&Pose::identity(), &intr, &f, &[feature_at(20.0, 15.0)], &[]);
        assert_eq!(pts.len(), 1);
        assert!((pts[0].position - Point3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn new_points_reproject_and_skip_invalid() {
        let intr = Intrinsics::new(100.0, 100.0, 20.0, 15.0, 40, 30).unwrap();
        let mut d = Grid::from_fn(40, 30, |x, y| 1.0 + 0.01 * (x + y) as f64);
        d.set(5, 5, 0.0);
        let pose = Pose::exp(&nalgebra::Vector6::new(0.1, -0.2, 0.05, 0.02, 0.01, -0.03));
        let feats = [feature_at(12.0, 9.0), feature_at(5.0, 5.0), feature_at(30.0, 20.0)];
        let pts = triangulate_new_points(&pose, &intr, &frame(d), &feats, &[false, false, true]);
        assert_eq!(pts.len(), 1);
        let px = project(&pose, &intr, &pts[0].position).unwrap();
        assert!((px[0] - 12.0).abs() < 1e-6 && (px[1] - 9.0).abs() < 1e-6);
    }
}
