//! Relaxed-similarity point detector.
//!
//! A pixel qualifies when more than `n_f` of the 16 samples on a radius-3
//! circle lie within `σ_dy` of the center intensity. Qualifying pixels are
//! thinned by 8-neighbour non-maximum suppression on (score, corner response)
//! and capped per level.

use std::cmp::Ordering;

use super::{FeatureConfig, Pyramid};
use crate::error::Result;
use crate::grid::{box_sum, GrayImage, Grid};
use crate::mask::StaticMask;

/// Bresenham circle of radius 3, clockwise from the top.
pub const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Keypoints keep this distance (level pixels) from the image border so the
/// descriptor pattern always fits.
pub const BORDER: usize = 16;

const RESPONSE_RADIUS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Keypoint {
    /// Level-0 pixel coordinates.
    pub x: f64,
    pub y: f64,
    pub level: usize,
    pub level_x: usize,
    pub level_y: usize,
    /// Number of circle samples passing the comparison.
    pub score: u8,
    /// Shi–Tomasi minimum eigenvalue, used to rank equal scores.
    pub response: f64,
}

fn circle_score(img: &GrayImage, x: usize, y: usize, sigma: f64, inverted: bool) -> u8 {
    let c = *img.get(x, y);
    let mut n = 0;
    for &(dx, dy) in &CIRCLE {
        let v = *img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize);
        let d = (v - c).abs();
        if (!inverted && d < sigma) || (inverted && d > sigma) {
            n += 1;
        }
    }
    n
}

fn min_eigen_response(img: &GrayImage) -> Grid<f64> {
    let (w, h) = img.dims();
    let gx = Grid::from_fn(w, h, |x, y| {
        let (l, r) = (x.saturating_sub(1), (x + 1).min(w - 1));
        0.5 * (img.get(r, y) - img.get(l, y))
    });
    let gy = Grid::from_fn(w, h, |x, y| {
        let (t, b) = (y.saturating_sub(1), (y + 1).min(h - 1));
        0.5 * (img.get(x, b) - img.get(x, t))
    });
    let prod = |a: &Grid<f64>, b: &Grid<f64>| {
        Grid::from_vec(w, h, a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| p * q).collect())
    };
    let sxx = box_sum(&prod(&gx, &gx), RESPONSE_RADIUS);
    let sxy = box_sum(&prod(&gx, &gy), RESPONSE_RADIUS);
    let syy = box_sum(&prod(&gy, &gy), RESPONSE_RADIUS);
    Grid::from_fn(w, h, |x, y| {
        let (a, b, c) = (*sxx.get(x, y), *sxy.get(x, y), *syy.get(x, y));
        0.5 * (a + c) - (0.25 * (a - c) * (a - c) + b * b).sqrt()
    })
}

/// Position hash used as the final, deterministic tie-break.
fn tie_hash(x: usize, y: usize, level: usize) -> u64 {
    let mut z = (x as u64) | ((y as u64) << 24) | ((level as u64) << 48);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy)]
struct Candidate {
    x: usize,
    y: usize,
    score: u8,
    response: f64,
    hash: u64,
}

impl Candidate {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.score
            .cmp(&other.score)
            .then(self.response.total_cmp(&other.response))
            .then(self.hash.cmp(&other.hash))
    }
}

/// Per-level score map (0 where the pixel does not qualify).
fn score_level(img: &GrayImage, mask: &StaticMask, sigma: f64, cfg: &FeatureConfig) -> Grid<u8> {
    let (w, h) = img.dims();
    let mut scores = Grid::new(w, h, 0u8);
    if w <= 2 * BORDER || h <= 2 * BORDER {
        return scores;
    }
    for y in BORDER..h - BORDER {
        for x in BORDER..w - BORDER {
            if !mask.is_static(x, y) {
                continue;
            }
            let s = circle_score(img, x, y, sigma, cfg.inverted_comparator);
            if s as usize > cfg.n_f {
                scores.set(x, y, s);
            }
        }
    }
    scores
}

/// Number of qualifying (pre-suppression) pixels over all levels.
pub fn qualifying_count(pyramid: &Pyramid, mask: &StaticMask, sigma: f64, cfg: &FeatureConfig) -> Result<usize> {
    mask.grid().ensure_same_dims(&pyramid.levels[0].image)?;
    let mut n = 0;
    for (l, level) in pyramid.levels.iter().enumerate() {
        let m = pyramid.level_mask(mask, l);
        n += score_level(&level.image, &m, sigma, cfg).as_slice().iter().filter(|&&s| s > 0).count();
    }
    Ok(n)
}

/// Detects keypoints using the threshold implied by `cfg` for this mask.
pub fn detect(pyramid: &Pyramid, mask: &StaticMask, cfg: &FeatureConfig) -> Result<Vec<Keypoint>> {
    detect_with_threshold(pyramid, mask, cfg.threshold_for(mask), cfg)
}

pub fn detect_with_threshold(
    pyramid: &Pyramid,
    mask: &StaticMask,
    sigma: f64,
    cfg: &FeatureConfig,
) -> Result<Vec<Keypoint>> {
    let base = &pyramid.levels[0].image;
    mask.grid().ensure_same_dims(base)?;
    let budget = cfg.budget(base.width(), base.height());
    let areas: Vec<f64> = pyramid.levels.iter().map(|l| l.image.len() as f64).collect();
    let total_area: f64 = areas.iter().sum();

    let mut out = Vec::new();
    for (l, level) in pyramid.levels.iter().enumerate() {
        let img = &level.image;
        let (w, h) = img.dims();
        let lmask = pyramid.level_mask(mask, l);
        let scores = score_level(img, &lmask, sigma, cfg);
        if scores.as_slice().iter().all(|&s| s == 0) {
            continue;
        }
        let response = min_eigen_response(img);
        let cand = |x: usize, y: usize| Candidate {
            x,
            y,
            score: *scores.get(x, y),
            response: *response.get(x, y),
            hash: tie_hash(x, y, l),
        };

        let mut kept = Vec::new();
        for y in BORDER..h.saturating_sub(BORDER) {
            for x in BORDER..w.saturating_sub(BORDER) {
                if *scores.get(x, y) == 0 {
                    continue;
                }
                let c = cand(x, y);
                let mut is_max = true;
                'nb: for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let (nx, ny) = ((x as i32 + dx) as usize, (y as i32 + dy) as usize);
                        if *scores.get(nx, ny) > 0 && cand(nx, ny).key_cmp(&c) == Ordering::Greater {
                            is_max = false;
                            break 'nb;
                        }
                    }
                }
                if is_max {
                    kept.push(c);
                }
            }
        }

        kept.sort_by(|a, b| b.key_cmp(a));
        let quota = ((budget as f64 * areas[l] / total_area).round() as usize).max(1);
        kept.truncate(quota);
        out.extend(kept.into_iter().map(|c| Keypoint {
            x: c.x as f64 * level.scale,
            y: c.y as f64 * level.scale,
            level: l,
            level_x: c.x,
            level_y: c.y,
            score: c.score,
            response: c.response,
        }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::adaptive_threshold;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_level() -> FeatureConfig {
        FeatureConfig {
            n_levels: 1,
            target_count: Some(1_000_000),
            ..Default::default()
        }
    }

    fn checkerboard(w: usize, h: usize, tile: usize) -> GrayImage {
        Grid::from_fn(w, h, |x, y| if (x / tile + y / tile) % 2 == 0 { 0.25 } else { 0.75 })
    }

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Grid::from_fn(w, h, |_, _| rng.gen::<f64>());
        crate::grid::gaussian_blur(&noise, 1.5)
    }

    #[test]
    fn circle_is_radius_three() {
        for &(dx, dy) in &CIRCLE {
            let r = ((dx * dx + dy * dy) as f64).sqrt();
            assert!((2.8..=3.2).contains(&r));
        }
        let mut pts = CIRCLE.to_vec();
        pts.sort();
        pts.dedup();
        assert_eq!(pts.len(), 16);
    }

    #[test]
    fn uniform_image_qualifies_everywhere_then_is_thinned() {
        let cfg = FeatureConfig {
            n_levels: 1,
            ..Default::default()
        };
        let img = Grid::new(64, 64, 0.5);
        let mask = StaticMask::all_static(64, 64);
        let sigma = adaptive_threshold(&mask, &cfg);
        let pyr = Pyramid::build(&img, &cfg);
        let interior = (64 - 2 * BORDER) * (64 - 2 * BORDER);
        assert_eq!(qualifying_count(&pyr, &mask, sigma, &cfg).unwrap(), interior);
        let kps = detect(&pyr, &mask, &cfg).unwrap();
        assert!(!kps.is_empty());
        assert!(kps.len() < interior / 4);
        assert!(kps.len() <= cfg.budget(64, 64));
        assert!(kps.iter().all(|k| k.score == 16));
    }

    #[test]
    fn checkerboard_interiors_qualify_corners_do_not() {
        let cfg = one_level();
        let img = checkerboard(96, 96, 16);
        let mask = StaticMask::all_static(96, 96);
        let sigma = adaptive_threshold(&mask, &cfg);
        assert!((sigma - 0.03).abs() < 1e-12);
        // interior of a tile
        assert_eq!(circle_score(&img, 40, 40, sigma, false), 16);
        // tile corner at (48, 48): the circle straddles four tiles
        let s = circle_score(&img, 48, 48, sigma, false);
        assert!(s as usize <= cfg.n_f, "corner score {s}");
        let pyr = Pyramid::build(&img, &cfg);
        let kps = detect(&pyr, &mask, &cfg).unwrap();
        assert!(kps.iter().all(|k| !(k.level_x == 48 && k.level_y == 48)));
    }

    #[test]
    fn inverted_comparator_prefers_corners() {
        let img = checkerboard(96, 96, 16);
        assert_eq!(circle_score(&img, 40, 40, 0.03, true), 0);
        assert!(circle_score(&img, 48, 48, 0.03, true) > 0);
    }

    #[test]
    fn no_features_on_dynamic_pixels() {
        let cfg = FeatureConfig::default();
        let img = random_image(160, 120, 3);
        let mask = StaticMask::from_fn(160, 120, |x, y| !(40..110).contains(&x) || !(30..90).contains(&y));
        let pyr = Pyramid::build(&img, &cfg);
        for kp in detect(&pyr, &mask, &cfg).unwrap() {
            let x = kp.x.round() as usize;
            let y = kp.y.round() as usize;
            assert!(mask.is_static(x.min(159), y.min(119)), "{kp:?}");
        }
    }

    #[test]
    fn cap_respected() {
        let cfg = FeatureConfig {
            target_count: Some(40),
            ..Default::default()
        };
        let img = random_image(200, 160, 5);
        let pyr = Pyramid::build(&img, &cfg);
        let kps = detect(&pyr, &StaticMask::all_static(200, 160), &cfg).unwrap();
        assert!(kps.len() <= 40 + cfg.n_levels);
        assert!(kps.len() >= 20);
    }

    #[test]
    fn mask_size_mismatch_errors() {
        let cfg = FeatureConfig::default();
        let pyr = Pyramid::build(&Grid::new(64, 64, 0.5), &cfg);
        assert!(detect(&pyr, &StaticMask::all_static(63, 64), &cfg).is_err());
    }

    #[test]
    fn adaptive_count_grows_as_static_region_grows() {
        // A textured left half stays static; a uniform right half turns dynamic.
        // Qualifying pixels inside the always-static region can only increase
        // as the threshold rises with the dynamic fraction.
        let cfg = one_level();
        let tex = random_image(128, 96, 11);
        let img = Grid::from_fn(128, 96, |x, y| if x < 64 { *tex.get(x, y) } else { 0.5 });
        let pyr = Pyramid::build(&img, &cfg);
        let fixed_region = StaticMask::from_fn(128, 96, |x, _| x < 64);
        let mut prev = 0;
        for cut in (64..=128).rev().step_by(8) {
            let mask = StaticMask::from_fn(128, 96, |x, _| x < cut);
            let sigma = adaptive_threshold(&mask, &cfg);
            let n = qualifying_count(&pyr, &fixed_region, sigma, &cfg).unwrap();
            assert!(n >= prev);
            prev = n;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn detection_is_shift_equivariant(seed in 0u64..1000, dx in 1usize..6, dy in 1usize..6) {
            let cfg = one_level();
            let (w, h) = (96, 80);
            let big = random_image(w + 8, h + 8, seed);
            let a = Grid::from_fn(w, h, |x, y| *big.get(x + 6, y + 6));
            let b = Grid::from_fn(w, h, |x, y| *big.get(x + 6 - dx, y + 6 - dy));
            let mask = StaticMask::all_static(w, h);
            let ka = detect(&Pyramid::build(&a, &cfg), &mask, &cfg).unwrap();
            let kb = detect(&Pyramid::build(&b, &cfg), &mask, &cfg).unwrap();
            // compare away from the border, where neither image sees clamping
            let inner = |x: usize, y: usize| x >= BORDER + 8 && x < w - BORDER - 8 && y >= BORDER + 8 && y < h - BORDER - 8;
            let mut sa: Vec<(usize, usize, u8)> = ka.iter()
                .filter(|k| inner(k.level_x, k.level_y))
                .map(|k| (k.level_x + dx, k.level_y + dy, k.score))
                .filter(|&(x, y, _)| inner(x, y))
                .collect();
            let mut sb: Vec<(usize, usize, u8)> = kb.iter()
                .filter(|k| inner(k.level_x, k.level_y) && k.level_x >= dx + BORDER + 8 && k.level_y >= dy + BORDER + 8)
                .filter(|k| inner(k.level_x - dx, k.level_y - dy))
                .map(|k| (k.level_x, k.level_y, k.score))
                .collect();
            sa.sort();
            sb.sort();
            prop_assert_eq!(sa, sb);
        }
    }
}
