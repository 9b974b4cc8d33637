use rand::seq::index::sample;
use rand::Rng;

use super::{backward, loss, render_with_state, GaussianMap, GsmapConfig};
use crate::dataset::Frame;
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::mask::StaticMask;

/// A training view for the map.
#[derive(Clone, Debug)]
pub struct Keyframe {
    pub frame: Frame,
    pub pose: Pose,
    pub mask: StaticMask,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizeStats {
    pub iterations: usize,
    /// Iterations skipped because the sampled view had no static pixels.
    pub skipped: usize,
    pub pruned: usize,
    pub last_loss: Option<f64>,
}

/// Current keyframe (the last one) plus up to `size − 1` distinct random past keyframes.
pub fn keyframe_window(n_keyframes: usize, size: usize, rng: &mut impl Rng) -> Vec<usize> {
    if n_keyframes == 0 {
        return Vec::new();
    }
    let current = n_keyframes - 1;
    let k = size.saturating_sub(1).min(current);
    let mut window = vec![current];
    let mut past: Vec<usize> = sample(rng, current, k).into_vec();
    past.sort_unstable();
    window.extend(past);
    window
}

/// Runs `iterations` gradient steps, each on one keyframe drawn uniformly from `window`.
pub fn optimize_map(
    map: &mut GaussianMap,
    keyframes: &[Keyframe],
    window: &[usize],
    intr: &Intrinsics,
    iterations: usize,
    cfg: &GsmapConfig,
    rng: &mut impl Rng,
) -> Result<OptimizeStats> {
    if keyframes.is_empty() || window.is_empty() {
        return Err(Error::InvalidConfig("map optimization needs at least one keyframe".into()));
    }
    let mut stats = OptimizeStats::default();
    for _ in 0..iterations {
        let kf = &keyframes[window[rng.gen_range(0..window.len())]];
        let (out, state) = render_with_state(map, &kf.pose, intr);
        let value = match loss(&out, &kf.frame, &kf.mask, cfg.lambda) {
            Ok(v) => v,
            Err(Error::NoStaticPixels) => {
                log::debug!("keyframe {} has no static pixels; iteration skipped", kf.frame.index);
                stats.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let grads = backward(map, &state, &kf.pose, intr, &value.dl_dcolor, &value.dl_ddepth);
        map.step(&grads, cfg);
        map.iterations += 1;
        stats.iterations += 1;
        stats.last_loss = Some(value.total);
        if map.iterations % cfg.prune_interval == 0 {
            stats.pruned += map.prune(cfg.prune_opacity);
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use crate::grid::Grid;
    use crate::gsmap::{logit, Gaussian};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn window_contains_current_and_distinct_past() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(keyframe_window(1, 8, &mut rng), vec![0]);
        let w = keyframe_window(20, 8, &mut rng);
        assert_eq!(w.len(), 8);
        assert_eq!(w[0], 19);
        let mut s = w.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 8);
        assert_eq!(keyframe_window(3, 8, &mut rng).len(), 3);
    }

    fn single_view() -> (GaussianMap, Vec<Keyframe>, Intrinsics) {
        let intr = Intrinsics::new(60.0, 60.0, 15.5, 15.5, 32, 32).unwrap();
        let frame = Frame {
            index: 0,
            timestamp: 0.0,
            color: Grid::new(32, 32, [0.8, 0.3, 0.1]),
            depth: Grid::new(32, 32, 2.0),
        };
        let kf = Keyframe {
            frame,
            pose: Pose::identity(),
            mask: StaticMask::all_static(32, 32),
        };
        let map = GaussianMap::from_gaussians(vec![Gaussian::new(Point3::new(0.0, 0.0, 2.0), 0.2, 0.5, [0.5; 3])]);
        (map, vec![kf], intr)
    }

    #[test]
    fn zero_iterations_leave_map_unchanged() {
        let (mut map, kfs, intr) = single_view();
        let before = map.gaussians.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        optimize_map(&mut map, &kfs, &[0], &intr, 0, &GsmapConfig::default(), &mut rng).unwrap();
        assert_eq!(map.gaussians, before);
    }

    #[test]
    fn loss_decreases_on_single_view() {
        let (mut map, kfs, intr) = single_view();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = GsmapConfig::default();
        let first = optimize_map(&mut map, &kfs, &[0], &intr, 1, &cfg, &mut rng).unwrap().last_loss.unwrap();
        let last = optimize_map(&mut map, &kfs, &[0], &intr, 200, &cfg, &mut rng).unwrap().last_loss.unwrap();
        assert!(last < 0.8 * first, "{first} -> {last}");
    }

    #[test]
    fn all_dynamic_views_are_skipped() {
        let (mut map, mut kfs, intr) = single_view();
        kfs[0].mask = StaticMask::all_dynamic(32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = optimize_map(&mut map, &kfs, &[0], &intr, 3, &GsmapConfig::default(), &mut rng).unwrap();
        assert_eq!(s.skipped, 3);
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn prune_runs_on_schedule() {
        let (mut map, kfs, intr) = single_view();
        let mut faint = Gaussian::new(Point3::new(5.0, 5.0, 2.0), 0.05, 0.5, [0.5; 3]);
        faint.opacity_logit = logit(0.01);
        map.push(faint);
        map.iterations = 99;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = optimize_map(&mut map, &kfs, &[0], &intr, 1, &GsmapConfig::default(), &mut rng).unwrap();
        assert_eq!(s.pruned, 1);
        assert_eq!(map.len(), 1);
    }
}
