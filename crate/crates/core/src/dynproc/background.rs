use super::DynprocConfig;
use crate::dataset::Frame;
use crate::error::Result;
use crate::grid::{DepthImage, Grid};
use crate::mask::StaticMask;

/// Recursive per-pixel estimate of the static scene depth. 0 = not yet observed.
#[derive(Clone, Debug)]
pub struct BackgroundModel {
    pub depth: DepthImage,
    pub initialized: bool,
}

impl BackgroundModel {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            depth: Grid::new(width, height, 0.0),
            initialized: false,
        }
    }

    /// First-frame model: the depth image with dynamic and invalid pixels left unobserved.
    pub fn initialize(frame: &Frame, raw_mask: &StaticMask) -> Result<Self> {
        frame.depth.ensure_same_dims(raw_mask.grid())?;
        let depth = Grid::from_fn(frame.width(), frame.height(), |x, y| {
            let d = *frame.depth.get(x, y);
            if raw_mask.is_static(x, y) && d > 0.0 {
                d
            } else {
                0.0
            }
        });
        Ok(Self {
            depth,
            initialized: true,
        })
    }

    #[inline]
    pub fn is_observed(&self, x: usize, y: usize) -> bool {
        *self.depth.get(x, y) > 0.0
    }

    pub fn observed_count(&self) -> usize {
        self.depth.as_slice().iter().filter(|&&d| d > 0.0).count()
    }
}

/// One step of the background recursion
/// `B_i = (1-τ-ρ)·B_{i-1} + τ·R + ρ·D_i`.
///
/// `rendered` is the map depth at the predicted pose (0 = unobserved); `None`
/// before a map exists, which zeroes τ. Where the current depth is dynamic or
/// invalid, ρ's weight moves onto the history term unless
/// `cfg.literal_dynamic_blend` is set.
pub fn update_background(
    model: &BackgroundModel,
    frame: &Frame,
    raw_mask: &StaticMask,
    rendered: Option<&DepthImage>,
    cfg: &DynprocConfig,
) -> Result<BackgroundModel> {
    if !model.initialized {
        return BackgroundModel::initialize(frame, raw_mask);
    }
    model.depth.ensure_same_dims(&frame.depth)?;
    model.depth.ensure_same_dims(raw_mask.grid())?;
    if let Some(r) = rendered {
        model.depth.ensure_same_dims(r)?;
    }
    let (w, h) = frame.depth.dims();
    let depth = Grid::from_fn(w, h, |x, y| {
        let b = *model.depth.get(x, y);
        let d = *frame.depth.get(x, y);
        let r = rendered.map_or(0.0, |r| *r.get(x, y));
        let has_obs = raw_mask.is_static(x, y) && d > 0.0;
        let has_render = r > 0.0;
        if b <= 0.0 {
            return if has_obs {
                d
            } else if has_render {
                r
            } else {
                0.0
            };
        }
        let tau = if has_render { cfg.tau } else { 0.0 };
        if has_obs {
            (1.0 - tau - cfg.rho) * b + tau * r + cfg.rho * d
        } else if cfg.literal_dynamic_blend {
            // the observation term contributes ρ·0
            (1.0 - tau - cfg.rho) * b + tau * r
        } else {
            (1.0 - tau) * b + tau * r
        }
    });
    Ok(BackgroundModel {
        depth,
        initialized: true,
    })
}

/// Depth-consistency mask: static when more than `n_m` valid samples in the
/// (2r+1)² window (center included) lie within `σ_m` of the background depth
/// at the center. Unobserved background pixels keep the raw mask value.
pub fn refine_mask(
    model: &BackgroundModel,
    frame: &Frame,
    raw_mask: &StaticMask,
    cfg: &DynprocConfig,
) -> Result<StaticMask> {
    model.depth.ensure_same_dims(&frame.depth)?;
    model.depth.ensure_same_dims(raw_mask.grid())?;
    let (w, h) = frame.depth.dims();
    let r = cfg.radius;
    Ok(StaticMask::from_fn(w, h, |x, y| {
        let b = *model.depth.get(x, y);
        if b <= 0.0 {
            return raw_mask.is_static(x, y);
        }
        let mut count = 0;
        for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
            for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                let d = *frame.depth.get(xx, yy);
                if d > 0.0 && (b - d).abs() < cfg.sigma_m {
                    count += 1;
                }
            }
        }
        count > cfg.n_m
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame_with_depth(depth: DepthImage) -> Frame {
        let (w, h) = depth.dims();
        Frame {
            index: 0,
            timestamp: 0.0,
            color: Grid::new(w, h, [0.5; 3]),
            depth,
        }
    }

    fn model(depth: DepthImage) -> BackgroundModel {
        BackgroundModel {
            depth,
            initialized: true,
        }
    }

    #[test]
    fn zero_weights_keep_history() {
        let m = model(Grid::new(3, 3, 2.0));
        let f = frame_with_depth(Grid::new(3, 3, 5.0));
        let cfg = DynprocConfig {
            tau: 0.0,
            rho: 0.0,
            ..Default::default()
        };
        let r = Grid::new(3, 3, 7.0);
        let out = update_background(&m, &f, &StaticMask::all_static(3, 3), Some(&r), &cfg).unwrap();
        assert!(out.depth.as_slice().iter().all(|&b| b == 2.0));
    }

    #[test]
    fn blend_static_and_dynamic_pixels() {
        let m = model(Grid::new(2, 1, 2.0));
        let f = frame_with_depth(Grid::new(2, 1, 2.05));
        let r = Grid::new(2, 1, 2.1);
        let cfg = DynprocConfig {
            tau: 0.2,
            rho: 0.3,
            ..Default::default()
        };
        let mut raw = StaticMask::all_static(2, 1);
        raw.set(1, 0, false);
        let out = update_background(&m, &f, &raw, Some(&r), &cfg).unwrap();
        assert!((out.depth.get(0, 0) - 2.035).abs() < 1e-12);
        assert!((out.depth.get(1, 0) - 2.02).abs() < 1e-12);

        let literal = DynprocConfig {
            literal_dynamic_blend: true,
            ..cfg
        };
        let out = update_background(&m, &f, &raw, Some(&r), &literal).unwrap();
        assert!((out.depth.get(1, 0) - (0.5 * 2.0 + 0.2 * 2.1)).abs() < 1e-12);
    }

    #[test]
    fn missing_render_zeroes_tau() {
        let m = model(Grid::new(1, 1, 2.0));
        let f = frame_with_depth(Grid::new(1, 1, 3.0));
        let cfg = DynprocConfig::default();
        let out = update_background(&m, &f, &StaticMask::all_static(1, 1), None, &cfg).unwrap();
        assert!((out.depth.get(0, 0) - (0.4 * 2.0 + 0.6 * 3.0)).abs() < 1e-12);
    }

    #[test]
    fn unobserved_pixels_adopt_first_source() {
        let m = model(Grid::new(3, 1, 0.0));
        let mut d = Grid::new(3, 1, 1.5);
        d.set(2, 0, 0.0);
        let f = frame_with_depth(d);
        let mut raw = StaticMask::all_static(3, 1);
        raw.set(1, 0, false);
        let r = Grid::from_vec(3, 1, vec![9.0, 2.5, 0.0]);
        let out = update_background(&m, &f, &raw, Some(&r), &DynprocConfig::default()).unwrap();
        assert_eq!(out.depth.as_slice(), &[1.5, 2.5, 0.0]);
    }

    #[test]
    fn initialization_drops_dynamic_and_invalid() {
        let mut d = Grid::new(3, 1, 2.0);
        d.set(0, 0, 0.0);
        let mut raw = StaticMask::all_static(3, 1);
        raw.set(1, 0, false);
        let m = BackgroundModel::initialize(&frame_with_depth(d), &raw).unwrap();
        assert_eq!(m.depth.as_slice(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn refine_uniform_agreement_and_offset() {
        let cfg = DynprocConfig::default();
        let m = model(Grid::new(7, 7, 2.0));
        let raw = StaticMask::all_static(7, 7);
        let same = refine_mask(&m, &frame_with_depth(Grid::new(7, 7, 2.0)), &raw, &cfg).unwrap();
        assert!(same.is_static(3, 3));
        let off = refine_mask(&m, &frame_with_depth(Grid::new(7, 7, 3.0)), &raw, &cfg).unwrap();
        assert_eq!(off.static_count(), 0);
    }

    #[test]
    fn refine_count_is_strict() {
        let cfg = DynprocConfig::default();
        let m = model(Grid::new(5, 5, 2.0));
        let raw = StaticMask::all_static(5, 5);
        for (agree, expect) in [(10, true), (9, false)] {
            // the center pixel sees the full 5x5 window
            let d = Grid::from_fn(5, 5, |x, y| if y * 5 + x < agree { 2.1 } else { 2.5 });
            let out = refine_mask(&m, &frame_with_depth(d), &raw, &cfg).unwrap();
            assert_eq!(out.is_static(2, 2), expect, "agree = {agree}");
        }
    }

    #[test]
    fn refine_excludes_invalid_and_defaults_unobserved() {
        let cfg = DynprocConfig::default();
        let mut b = Grid::new(5, 5, 2.0);
        b.set(0, 0, 0.0);
        let m = model(b);
        let mut raw = StaticMask::all_static(5, 5);
        raw.set(0, 0, false);
        // 12 invalid samples, 13 valid and agreeing
        let d = Grid::from_fn(5, 5, |x, y| if y * 5 + x < 12 { 0.0 } else { 2.0 });
        let out = refine_mask(&m, &frame_with_depth(d.clone()), &raw, &cfg).unwrap();
        assert!(out.is_static(2, 2));
        assert!(!out.is_static(0, 0));
        let d = Grid::from_fn(5, 5, |x, y| if y * 5 + x < 16 { 0.0 } else { 2.0 });
        let out = refine_mask(&m, &frame_with_depth(d), &raw, &cfg).unwrap();
        assert!(!out.is_static(2, 2));
    }

    #[test]
    fn converges_on_static_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = Grid::from_fn(16, 12, |x, y| 1.0 + 0.05 * x as f64 + 0.02 * y as f64);
        let noisy = truth.map(|d| d + 0.05 * (2.0 * rng.gen::<f64>() - 1.0));
        let all = StaticMask::all_static(16, 12);
        for _ in 0..20 {
            let s: f64 = rng.gen_range(0.2..=1.0);
            let tau = s * rng.gen::<f64>();
            let cfg = DynprocConfig {
                tau,
                rho: s - tau,
                ..Default::default()
            };
            let mut m = BackgroundModel::initialize(&frame_with_depth(noisy.clone()), &all).unwrap();
            let exact = frame_with_depth(truth.clone());
            let err = |m: &BackgroundModel| {
                m.depth.as_slice().iter().zip(truth.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            };
            let mut prev = err(&m);
            for _ in 0..49 {
                m = update_background(&m, &exact, &all, Some(&truth), &cfg).unwrap();
                let e = err(&m);
                assert!(e <= prev);
                prev = e;
            }
            assert!(prev < 1e-6, "s = {s}, err = {prev}");
        }
    }
}
