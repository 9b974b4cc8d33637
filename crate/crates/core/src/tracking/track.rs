use super::{optimize_pose, Observation, PointMap, TrackerConfig};
use crate::dataset::Frame;
use crate::error::{Error, Result};
use crate::features::{describe, detect, hamming, DescriptorPattern, FeatureConfig, FeaturePoint, Pyramid};
use crate::geometry::{project, Intrinsics, Point3, Pose};
use crate::mask::StaticMask;

/// Widening applied to the search window when the first guided pass finds too
/// few matches (e.g. after a poor motion prediction).
const FALLBACK_RADIUS_FACTOR: f64 = 3.0;

#[derive(Clone, Debug)]
pub struct TrackResult {
    pub pose: Pose,
    pub lost: bool,
    pub features: Vec<FeaturePoint>,
    /// `(feature index, map point id)` for inlier matches.
    pub matches: Vec<(usize, usize)>,
    /// Per-feature flag: matched to a map point as an inlier.
    pub matched: Vec<bool>,
}

impl TrackResult {
    pub fn inliers(&self) -> usize {
        self.matches.len()
    }
}

/// Matches map points projected at `pose` to features within `radius` pixels.
/// Returns one-to-one `(feature, point, distance)` triples.
pub fn guided_match(
    pose: &Pose,
    intr: &Intrinsics,
    map: &PointMap,
    features: &[FeaturePoint],
    radius: f64,
    cfg: &TrackerConfig,
) -> Vec<(usize, usize, u32)> {
    let cell = radius.max(1.0);
    let gw = (intr.width as f64 / cell).ceil() as usize + 1;
    let gh = (intr.height as f64 / cell).ceil() as usize + 1;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); gw * gh];
    for (i, f) in features.iter().enumerate() {
        let [x, y] = f.pixel();
        let (cx, cy) = ((x / cell) as usize, (y / cell) as usize);
        buckets[cy.min(gh - 1) * gw + cx.min(gw - 1)].push(i);
    }

    // best candidate per feature: (point, distance)
    let mut by_feature: Vec<Option<(usize, u32)>> = vec![None; features.len()];
    for (pid, mp) in map.points.iter().enumerate() {
        let Ok(px) = project(pose, intr, &mp.position) else {
            continue;
        };
        if !intr.in_bounds(px, 0.0) {
            continue;
        }
        let (cx, cy) = ((px[0] / cell) as isize, (px[1] / cell) as isize);
        let mut best = (usize::MAX, u32::MAX);
        let mut second = u32::MAX;
        for by in (cy - 1).max(0)..=(cy + 1).min(gh as isize - 1) {
            for bx in (cx - 1).max(0)..=(cx + 1).min(gw as isize - 1) {
                for &fi in &buckets[by as usize * gw + bx as usize] {
                    let [fx, fy] = features[fi].pixel();
                    if (fx - px[0]).powi(2) + (fy - px[1]).powi(2) > radius * radius {
                        continue;
                    }
                    let d = hamming(&mp.descriptor, &features[fi].descriptor);
                    if d < best.1 {
                        second = best.1;
                        best = (fi, d);
                    } else if d < second {
                        second = d;
                    }
                }
            }
        }
        if best.0 == usize::MAX || best.1 > cfg.max_descriptor_distance {
            continue;
        }
        if second != u32::MAX && best.1 as f64 >= cfg.match_ratio * second as f64 {
            continue;
        }
        let slot = &mut by_feature[best.0];
        if slot.map_or(true, |(_, d)| best.1 < d) {
            *slot = Some((pid, best.1));
        }
    }
    by_feature
        .iter()
        .enumerate()
        .filter_map(|(fi, s)| s.map(|(pid, d)| (fi, pid, d)))
        .collect()
}

/// Detects and describes features on the static part of `frame`, matches them
/// to the map around the `predicted` pose, and refines the pose. When fewer
/// than `cfg.min_inliers` inliers survive, the frame is flagged lost and the
/// prediction is returned as its pose.
#[allow(clippy::too_many_arguments)]
pub fn track_frame(
    frame: &Frame,
    mask: &StaticMask,
    map: &PointMap,
    intr: &Intrinsics,
    predicted: &Pose,
    feature_cfg: &FeatureConfig,
    pattern: &DescriptorPattern,
    cfg: &TrackerConfig,
) -> Result<TrackResult> {
    let pyramid = Pyramid::build(&frame.gray(), feature_cfg);
    let keypoints = detect(&pyramid, mask, feature_cfg)?;
    let features = describe(&pyramid, &keypoints, pattern);
    let lost = |features: Vec<FeaturePoint>| TrackResult {
        pose: predicted.clone(),
        lost: true,
        matched: vec![false; features.len()],
        features,
        matches: Vec::new(),
    };

    let mut matches = guided_match(predicted, intr, map, &features, cfg.search_radius, cfg);
    if matches.len() < cfg.min_inliers {
        let wide = guided_match(predicted, intr, map, &features, cfg.search_radius * FALLBACK_RADIUS_FACTOR, cfg);
        if wide.len() > matches.len() {
            matches = wide;
        }
    }
    if matches.len() < cfg.min_inliers {
        log::debug!("frame {}: only {} guided matches", frame.index, matches.len());
        return Ok(lost(features));
    }

    let points: Vec<Point3> = matches.iter().map(|&(_, pid, _)| map.points[pid].position).collect();
    let observations: Vec<Observation> = matches
        .iter()
        .enumerate()
        .map(|(k, &(fi, _, _))| {
            let kp = &features[fi].keypoint;
            Observation::at_level(k, [kp.x, kp.y], kp.level, cfg.scale_factor)
        })
        .collect();

    let estimate = match optimize_pose(predicted, &observations, &points, intr, cfg) {
        Ok(e) => e,
        Err(e @ (Error::Diverged { .. } | Error::InsufficientObservations { .. })) => {
            log::debug!("frame {}: pose optimization failed: {e}", frame.index);
            return Ok(lost(features));
        }
        Err(e) => return Err(e),
    };
    if estimate.inlier_count() < cfg.min_inliers {
        return Ok(lost(features));
    }

    let mut matched = vec![false; features.len()];
    let mut inlier_matches = Vec::new();
    for (k, &(fi, pid, _)) in matches.iter().enumerate() {
        if estimate.inliers[k] {
            matched[fi] = true;
            inlier_matches.push((fi, pid));
        }
    }
    Ok(TrackResult {
        pose: estimate.pose,
        lost: false,
        features,
        matches: inlier_matches,
        matched,
    })
}
