use crate::grid::{gaussian_blur, GrayImage, Grid};
use crate::mask::StaticMask;

use super::FeatureConfig;

#[derive(Clone, Debug)]
pub struct PyramidLevel {
    pub image: GrayImage,
    /// Smoothed copy used for descriptor comparisons.
    pub smoothed: GrayImage,
    /// Level-0 pixels per pixel at this level.
    pub scale: f64,
}

/// Gaussian pyramid built by repeated blur + resample.
#[derive(Clone, Debug)]
pub struct Pyramid {
    pub levels: Vec<PyramidLevel>,
}

impl Pyramid {
    pub fn build(gray: &GrayImage, cfg: &FeatureConfig) -> Self {
        let mut levels = Vec::with_capacity(cfg.n_levels);
        let mut current = gray.clone();
        for l in 0..cfg.n_levels {
            let scale = cfg.scale_factor.powi(l as i32);
            if l > 0 {
                let blurred = gaussian_blur(&current, cfg.blur_sigma);
                let w = (gray.width() as f64 / scale).round() as usize;
                let h = (gray.height() as f64 / scale).round() as usize;
                if w < 40 || h < 40 {
                    break;
                }
                let f = cfg.scale_factor;
                current = Grid::from_fn(w, h, |x, y| blurred.sample_bilinear(x as f64 * f, y as f64 * f));
            }
            let smoothed = gaussian_blur(&current, 1.2);
            levels.push(PyramidLevel {
                image: current.clone(),
                smoothed,
                scale,
            });
        }
        Self { levels }
    }

    /// Min-pooled mask for `level`: a coarse pixel is static only if every
    /// level-0 pixel it covers is static.
    pub fn level_mask(&self, mask: &StaticMask, level: usize) -> StaticMask {
        let lvl = &self.levels[level];
        let (w, h) = lvl.image.dims();
        if level == 0 {
            return mask.clone();
        }
        let (mw, mh) = mask.dims();
        let s = lvl.scale;
        StaticMask::from_fn(w, h, |x, y| {
            let x0 = ((x as f64 - 0.5) * s).floor().max(0.0) as usize;
            let y0 = ((y as f64 - 0.5) * s).floor().max(0.0) as usize;
            let x1 = (((x as f64 + 0.5) * s).ceil() as usize).min(mw - 1);
            let y1 = (((y as f64 + 0.5) * s).ceil() as usize).min(mh - 1);
            (y0..=y1).all(|yy| (x0..=x1).all(|xx| mask.is_static(xx, yy)))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_sizes_follow_scale() {
        let g = Grid::new(320, 240, 0.5);
        let p = Pyramid::build(&g, &FeatureConfig::default());
        assert_eq!(p.levels.len(), 4);
        assert_eq!(p.levels[1].image.dims(), (256, 192));
        assert!((p.levels[3].scale - 1.953125).abs() < 1e-12);
    }

    #[test]
    fn min_pooling_propagates_dynamic() {
        let g = Grid::new(100, 80, 0.5);
        let p = Pyramid::build(&g, &FeatureConfig::default());
        let mut m = StaticMask::all_static(100, 80);
        m.set(50, 40, false);
        let lm = p.level_mask(&m, 2);
        assert!(lm.dynamic_count() >= 1);
        // the coarse pixel covering (50, 40) is dynamic
        let s = p.levels[2].scale;
        assert!(!lm.is_static((50.0 / s).round() as usize, (40.0 / s).round() as usize));
    }
}
