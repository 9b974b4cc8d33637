//! Relaxed feature points on a Gaussian pyramid with a mask-adaptive
//! similarity threshold, binary descriptors and descriptor matching.

mod descriptor;
mod detect;
mod pyramid;

pub use descriptor::{describe, hamming, match_descriptors, Descriptor, DescriptorPattern, Match, MatchSet};
pub use detect::{detect, detect_with_threshold, qualifying_count, Keypoint, CIRCLE};
pub use pyramid::{Pyramid, PyramidLevel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::StaticMask;

/// A detected keypoint with its descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePoint {
    pub keypoint: Keypoint,
    pub descriptor: Descriptor,
}

impl FeaturePoint {
    /// Position in level-0 pixel coordinates.
    pub fn pixel(&self) -> [f64; 2] {
        [self.keypoint.x, self.keypoint.y]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Base gray-difference threshold (image in [0, 1]).
    pub sigma_0: f64,
    /// Fraction of `sigma_0` removed when the whole frame is static.
    pub k: f64,
    /// A pixel qualifies when more than `n_f` circle samples pass the comparison.
    pub n_f: usize,
    pub n_levels: usize,
    pub scale_factor: f64,
    /// Feature budget per frame; `None` scales 1000 features at 640×480 by image area.
    pub target_count: Option<usize>,
    /// Blur applied before each pyramid downsample.
    pub blur_sigma: f64,
    /// Count samples that differ by MORE than the threshold (segment-test reading).
    pub inverted_comparator: bool,
    /// Use the mask-adaptive threshold; when false the threshold is `sigma_0`.
    pub adaptive: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sigma_0: 0.3,
            k: 0.9,
            n_f: 12,
            n_levels: 4,
            scale_factor: 1.25,
            target_count: None,
            blur_sigma: 1.0,
            inverted_comparator: false,
            adaptive: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.sigma_0 > 0.0, "sigma_0 must be positive"),
            ((0.0..=1.0).contains(&self.k), "k must lie in [0, 1]"),
            (self.n_f < CIRCLE.len(), "n_f must be smaller than the circle size"),
            (self.n_levels >= 1, "need at least one pyramid level"),
            (self.scale_factor > 1.0, "pyramid scale factor must exceed 1"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::InvalidConfig(msg.into()));
            }
        }
        Ok(())
    }

    pub fn budget(&self, width: usize, height: usize) -> usize {
        self.target_count
            .unwrap_or_else(|| ((1000.0 * (width * height) as f64 / (640.0 * 480.0)).round() as usize).max(1))
    }

    /// Threshold used for `mask` under this configuration.
    pub fn threshold_for(&self, mask: &StaticMask) -> f64 {
        if self.adaptive {
            adaptive_threshold(mask, self)
        } else {
            self.sigma_0
        }
    }
}

/// `σ_dy = σ_0 · (1 − k · ΣM / (H·W))`, where ΣM counts static pixels.
pub fn adaptive_threshold(mask: &StaticMask, cfg: &FeatureConfig) -> f64 {
    let (w, h) = mask.dims();
    cfg.sigma_0 * (1.0 - cfg.k * mask.static_count() as f64 / (w * h) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_examples() {
        let cfg = FeatureConfig::default();
        assert_eq!(adaptive_threshold(&StaticMask::all_dynamic(8, 8), &cfg), 0.3);
        assert!((adaptive_threshold(&StaticMask::all_static(8, 8), &cfg) - 0.03).abs() < 1e-15);
        let half = StaticMask::from_fn(8, 8, |x, _| x < 4);
        assert!((adaptive_threshold(&half, &cfg) - 0.165).abs() < 1e-15);
    }

    #[test]
    fn threshold_strictly_decreasing_in_static_count() {
        let cfg = FeatureConfig::default();
        let mut prev = f64::INFINITY;
        for n in 0..=64 {
            let m = StaticMask::from_fn(8, 8, |x, y| y * 8 + x < n);
            let t = adaptive_threshold(&m, &cfg);
            assert!(t < prev);
            prev = t;
        }
    }

    #[test]
    fn non_adaptive_uses_base_threshold() {
        let cfg = FeatureConfig {
            adaptive: false,
            ..Default::default()
        };
        assert_eq!(cfg.threshold_for(&StaticMask::all_static(4, 4)), 0.3);
    }

    #[test]
    fn budget_scales_with_area() {
        let cfg = FeatureConfig::default();
        assert_eq!(cfg.budget(640, 480), 1000);
        assert_eq!(cfg.budget(320, 240), 250);
    }
}
