use serde::Serialize;

/// Stage durations of one frame, in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct FrameTiming {
    pub dynproc_ms: f64,
    pub tracking_ms: f64,
    pub mapping_ms: f64,
    /// Wall time of the whole frame (≥ the stage sum; includes I/O and bookkeeping).
    pub total_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: String,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingReport {
    pub frames: usize,
    pub stages: Vec<StageSummary>,
    /// Frames per second over the summed per-frame wall time.
    pub fps: f64,
}

/// Nearest-rank percentile (`p` in (0, 100]) of unsorted samples.
pub fn percentile_nearest_rank(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn summarize(stage: &str, values: &[f64]) -> StageSummary {
    StageSummary {
        stage: stage.into(),
        mean_ms: values.iter().sum::<f64>() / values.len() as f64,
        median_ms: median(values),
        p95_ms: percentile_nearest_rank(values, 95.0),
    }
}

/// Summary statistics per stage and end-to-end frame rate. Returns `None` for no frames.
pub fn timing_report(frames: &[FrameTiming]) -> Option<TimingReport> {
    if frames.is_empty() {
        return None;
    }
    let col = |f: fn(&FrameTiming) -> f64| frames.iter().map(f).collect::<Vec<_>>();
    let total = col(|f| f.total_ms);
    let total_s: f64 = total.iter().sum::<f64>() / 1000.0;
    Some(TimingReport {
        frames: frames.len(),
        stages: vec![
            summarize("dynproc", &col(|f| f.dynproc_ms)),
            summarize("tracking", &col(|f| f.tracking_ms)),
            summarize("mapping", &col(|f| f.mapping_ms)),
            summarize("total", &total),
        ],
        fps: if total_s > 0.0 { frames.len() as f64 / total_s } else { f64::INFINITY },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_frame_fps() {
        let r = timing_report(&[FrameTiming {
            dynproc_ms: 10.0,
            tracking_ms: 50.0,
            mapping_ms: 40.0,
            total_ms: 100.0,
        }])
        .unwrap();
        assert!((r.fps - 10.0).abs() < 1e-12);
        assert_eq!(r.stages[0].mean_ms, 10.0);
        assert_eq!(r.stages[1].mean_ms, 50.0);
        assert_eq!(r.stages[2].mean_ms, 40.0);
    }

    #[test]
    fn p95_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frames: Vec<FrameTiming> = (0..100)
            .map(|_| {
                let (a, b, c) = (rng.gen_range(1.0..20.0), rng.gen_range(5.0..80.0), rng.gen_range(0.0..300.0));
                FrameTiming {
                    dynproc_ms: a,
                    tracking_ms: b,
                    mapping_ms: c,
                    total_ms: a + b + c,
                }
            })
            .collect();
        let r = timing_report(&frames).unwrap();
        let mut tr: Vec<f64> = frames.iter().map(|f| f.tracking_ms).collect();
        tr.sort_by(f64::total_cmp);
        // nearest rank: the 95th smallest of 100
        assert_eq!(r.stages[1].p95_ms, tr[94]);
        assert!(timing_report(&[]).is_none());
    }
}
