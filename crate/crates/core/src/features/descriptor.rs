//! 256-bit binary intensity-comparison descriptors and matching.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{FeaturePoint, Keypoint, Pyramid};

const PATCH: i32 = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Descriptor(pub [u64; 4]);

#[inline]
pub fn hamming(a: &Descriptor, b: &Descriptor) -> u32 {
    a.0.iter().zip(&b.0).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Sampling pattern: 256 point pairs drawn from an isotropic Gaussian
/// (σ = 31/5) clipped to the 31×31 patch.
#[derive(Clone, Debug)]
pub struct DescriptorPattern {
    pub pairs: Vec<[(i32, i32); 2]>,
}

impl DescriptorPattern {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6272_6965_665f_7061);
        let normal = Normal::new(0.0, 31.0 / 5.0).expect("valid sigma");
        let mut draw = || (normal.sample(&mut rng) as f64).round().clamp(-PATCH as f64, PATCH as f64) as i32;
        let pairs = (0..256).map(|_| [(draw(), draw()), (draw(), draw())]).collect();
        Self { pairs }
    }
}

/// Computes descriptors on each keypoint's smoothed pyramid level. Keypoints
/// whose patch leaves the image are dropped.
pub fn describe(pyramid: &Pyramid, keypoints: &[Keypoint], pattern: &DescriptorPattern) -> Vec<FeaturePoint> {
    let mut out = Vec::with_capacity(keypoints.len());
    let mut dropped = 0;
    for kp in keypoints {
        let Some(level) = pyramid.levels.get(kp.level) else {
            dropped += 1;
            continue;
        };
        let img = &level.smoothed;
        let (w, h) = (img.width() as i32, img.height() as i32);
        let (x, y) = (kp.level_x as i32, kp.level_y as i32);
        if x < PATCH || y < PATCH || x + PATCH >= w || y + PATCH >= h {
            dropped += 1;
            continue;
        }
        let mut bits = [0u64; 4];
        for (i, [(ax, ay), (bx, by)]) in pattern.pairs.iter().enumerate() {
            let a = img.get((x + ax) as usize, (y + ay) as usize);
            let b = img.get((x + bx) as usize, (y + by) as usize);
            if a < b {
                bits[i / 64] |= 1 << (i % 64);
            }
        }
        out.push(FeaturePoint {
            keypoint: kp.clone(),
            descriptor: Descriptor(bits),
        });
    }
    if dropped > 0 {
        log::debug!("dropped {dropped} keypoints too close to the border for a descriptor");
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Match {
    pub query: usize,
    pub train: usize,
    pub distance: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchSet {
    pub matches: Vec<Match>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

pub const MATCH_RATIO: f64 = 0.8;
pub const MAX_MATCH_DISTANCE: u32 = 64;

fn best_two(d: &Descriptor, set: &[Descriptor]) -> Option<(usize, u32, u32)> {
    let mut best = (usize::MAX, u32::MAX);
    let mut second = u32::MAX;
    for (j, e) in set.iter().enumerate() {
        let dist = hamming(d, e);
        if dist < best.1 {
            second = best.1;
            best = (j, dist);
        } else if dist < second {
            second = dist;
        }
    }
    (best.0 != usize::MAX).then_some((best.0, best.1, second))
}

#[inline]
fn passes_ratio(best: u32, second: u32) -> bool {
    second == u32::MAX || (best as f64) < MATCH_RATIO * second as f64
}

/// Mutual nearest neighbours passing the ratio test (in both directions) and a distance cap.
pub fn match_descriptors(query: &[Descriptor], train: &[Descriptor]) -> MatchSet {
    let mut matches = Vec::new();
    for (i, d) in query.iter().enumerate() {
        let Some((j, best, second)) = best_two(d, train) else {
            continue;
        };
        if best > MAX_MATCH_DISTANCE || !passes_ratio(best, second) {
            continue;
        }
        let back = best_two(&train[j], query);
        if matches!(back, Some((k, _, s)) if k == i && passes_ratio(best, s)) {
            matches.push(Match {
                query: i,
                train: j,
                distance: best,
            });
        }
    }
    MatchSet { matches }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{detect, FeatureConfig};
    use crate::grid::{gaussian_blur, Grid};
    use crate::mask::StaticMask;
    use rand::Rng;

    fn random_descriptors(n: usize, seed: u64) -> Vec<Descriptor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Descriptor(rng.gen())).collect()
    }

    #[test]
    fn pattern_is_seeded_and_clipped() {
        let a = DescriptorPattern::new(3);
        assert_eq!(a.pairs, DescriptorPattern::new(3).pairs);
        assert_ne!(a.pairs, DescriptorPattern::new(4).pairs);
        assert_eq!(a.pairs.len(), 256);
        for p in &a.pairs {
            for (x, y) in p {
                assert!(x.abs() <= PATCH && y.abs() <= PATCH);
            }
        }
    }

    #[test]
    fn identical_sets_match_identically() {
        let d = random_descriptors(200, 1);
        let m = match_descriptors(&d, &d);
        assert_eq!(m.len(), 200);
        assert!(m.matches.iter().all(|m| m.query == m.train && m.distance == 0));
    }

    #[test]
    fn disjoint_random_sets_barely_match() {
        let m = match_descriptors(&random_descriptors(300, 1), &random_descriptors(300, 2));
        assert!(m.len() <= 3, "{} spurious matches", m.len());
    }

    #[test]
    fn matches_are_one_to_one() {
        let mut d = random_descriptors(50, 5);
        d.push(d[0]);
        let m = match_descriptors(&d, &random_descriptors(50, 5));
        let mut trains: Vec<usize> = m.matches.iter().map(|m| m.train).collect();
        trains.sort();
        trains.dedup();
        assert_eq!(trains.len(), m.len());
        // the duplicated descriptor fails the ratio test
        assert!(m.matches.iter().all(|m| m.train != 0));
    }

    #[test]
    fn shifted_image_descriptors_match() {
        let cfg = FeatureConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let big = gaussian_blur(&Grid::from_fn(200, 160, |_, _| rng.gen::<f64>()), 1.5);
        let a = Grid::from_fn(180, 140, |x, y| *big.get(x + 10, y + 10));
        let b = Grid::from_fn(180, 140, |x, y| *big.get(x + 7, y + 8));
        let mask = StaticMask::all_static(180, 140);
        let pattern = DescriptorPattern::new(0);
        let pa = Pyramid::build(&a, &cfg);
        let pb = Pyramid::build(&b, &cfg);
        let fa = describe(&pa, &detect(&pa, &mask, &cfg).unwrap(), &pattern);
        let fb = describe(&pb, &detect(&pb, &mask, &cfg).unwrap(), &pattern);
        let da: Vec<_> = fa.iter().map(|f| f.descriptor).collect();
        let db: Vec<_> = fb.iter().map(|f| f.descriptor).collect();
        let m = match_descriptors(&da, &db);
        assert!(m.len() > 20, "{} matches", m.len());
        let good = m
            .matches
            .iter()
            .filter(|m| {
                let (p, q) = (fa[m.query].pixel(), fb[m.train].pixel());
                ((q[0] - p[0] - 3.0).powi(2) + (q[1] - p[1] - 2.0).powi(2)).sqrt() < 2.0
            })
            .count();
        assert!(good as f64 > 0.9 * m.len() as f64, "{good}/{}", m.len());
    }

    #[test]
    fn out_of_bounds_keypoints_dropped() {
        let cfg = FeatureConfig::default();
        let pyr = Pyramid::build(&Grid::new(64, 64, 0.5), &cfg);
        let kp = Keypoint {
            x: 3.0,
            y: 3.0,
            level: 0,
            level_x: 3,
            level_y: 3,
            score: 16,
            response: 0.0,
        };
        assert!(describe(&pyr, &[kp], &DescriptorPattern::new(0)).is_empty());
    }
}
