//! Per-frame orchestration: dynamic-region masks → tracking → mapping.
//!
//! The reference mode is strictly sequential. Within a frame, tracking reads
//! the map as it stood at frame start; mapping runs afterwards.

mod config;

pub use config::{DatasetSpec, MaskSetting, PipelineConfig, DEFAULT_SYNTHETIC_FRAMES};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    load_tum_sequence, Frame, MaskProvider, MaskSource, Sequence, SyntheticScene, SyntheticSequence,
};
use crate::dynproc::{combine_raw, compute_flow, motion_mask, refine_mask, update_background, BackgroundModel};
use crate::error::{Error, Result};
use crate::eval::{
    associate, ate, metrics_json, metrics_text, psnr, region_color_error, timing_report, AteReport, FrameTiming, Metric,
    RegionError, TimingReport, DEFAULT_MAX_DT,
};
use crate::features::{describe, detect, DescriptorPattern, FeaturePoint, Pyramid};
use crate::geometry::{predict_pose, Intrinsics, Pose};
use crate::grid::ColorImage;
use crate::gsmap::{keyframe_window, optimize_map, render, render_depth_for_background, write_map, GaussianMap, Keyframe};
use crate::imageio::{write_color_png, write_mask_png};
use crate::mask::StaticMask;
use crate::tracking::{select_keyframe, track_frame, triangulate_new_points, KeyframeRef, PointMap};
use crate::trajectory::Trajectory;

/// Seed offsets so each consumer draws from its own stream.
const MASK_STREAM: u64 = 0x6d61_736b;
const MAP_STREAM: u64 = 0x6d61_7070;

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub timestamp: f64,
    /// World-to-camera.
    pub pose: Pose,
    pub lost: bool,
    pub keyframe: bool,
    pub features: usize,
    pub inliers: usize,
    pub raw_static_fraction: f64,
    pub refined_static_fraction: f64,
    pub timing: FrameTiming,
}

#[derive(Clone, Debug)]
pub struct FeatureRow {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub level: usize,
    pub score: u8,
    pub matched: bool,
}

/// Masks of one frame, kept when mask dumping is enabled.
#[derive(Clone, Debug)]
pub struct FrameMasks {
    pub index: usize,
    pub raw: StaticMask,
    pub refined: StaticMask,
}

/// Streaming SLAM state. Feed frames in order with [`Pipeline::process`].
pub struct Pipeline {
    cfg: PipelineConfig,
    intr: Intrinsics,
    pattern: DescriptorPattern,
    masks: MaskProvider,
    rng: ChaCha8Rng,
    background: BackgroundModel,
    prev_frame: Option<Frame>,
    points: PointMap,
    map: GaussianMap,
    keyframes: Vec<Keyframe>,
    kf_ref: Option<KeyframeRef>,
    records: Vec<FrameRecord>,
    renders: Vec<(usize, ColorImage)>,
    keyframe_psnr: Vec<f64>,
    mask_log: Vec<FrameMasks>,
    feature_log: Vec<FeatureRow>,
}

pub struct RunOutput {
    pub records: Vec<FrameRecord>,
    pub map: GaussianMap,
    pub keyframes: Vec<Keyframe>,
    /// `(keyframe number, render at its pose right after mapping)`.
    pub renders: Vec<(usize, ColorImage)>,
    pub keyframe_psnr: Vec<f64>,
    pub masks: Vec<FrameMasks>,
    pub features: Vec<FeatureRow>,
    pub timing: Option<TimingReport>,
    pub ground_truth: Option<Trajectory>,
    pub ate: Option<AteReport>,
}

impl RunOutput {
    /// Camera-to-world estimate in TUM convention.
    pub fn trajectory(&self) -> Trajectory {
        Trajectory::from_world_to_camera(self.records.iter().map(|r| (r.timestamp, r.pose.clone())))
    }

    pub fn lost_frames(&self) -> usize {
        self.records.iter().filter(|r| r.lost).count()
    }

    pub fn metrics(&self) -> Vec<Metric> {
        let mut m = vec![
            Metric::new("frames", self.records.len() as f64, "count"),
            Metric::new("lost_frames", self.lost_frames() as f64, "count"),
            Metric::new("keyframes", self.keyframes.len() as f64, "count"),
            Metric::new("gaussians", self.map.len() as f64, "count"),
        ];
        if let Some(a) = &self.ate {
            m.push(Metric::new("ate_rmse", a.rmse, "m"));
            m.push(Metric::new("ate_mean", a.mean, "m"));
            m.push(Metric::new("ate_std", a.std, "m"));
            m.push(Metric::new("ate_degenerate", a.degenerate as u8 as f64, "flag"));
        }
        if !self.keyframe_psnr.is_empty() {
            let finite: Vec<f64> = self.keyframe_psnr.iter().copied().filter(|p| p.is_finite()).collect();
            let mean = if finite.is_empty() {
                f64::INFINITY
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            };
            m.push(Metric::new("keyframe_psnr_mean", mean, "dB"));
        }
        if let Some(t) = &self.timing {
            m.push(Metric::new("fps", t.fps, "Hz"));
        }
        m
    }
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, intr: Intrinsics, mask_source: MaskSource) -> Result<Self> {
        cfg.validate()?;
        intr.validate()?;
        let masks = MaskProvider::new(mask_source, cfg.mask_corruption, cfg.seed ^ MASK_STREAM);
        Ok(Self {
            pattern: DescriptorPattern::new(cfg.seed),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ MAP_STREAM),
            background: BackgroundModel::empty(intr.width, intr.height),
            intr,
            masks,
            prev_frame: None,
            points: PointMap::default(),
            map: GaussianMap::new(),
            keyframes: Vec::new(),
            kf_ref: None,
            records: Vec::new(),
            renders: Vec::new(),
            keyframe_psnr: Vec::new(),
            mask_log: Vec::new(),
            feature_log: Vec::new(),
            cfg,
        })
    }

    pub fn map(&self) -> &GaussianMap {
        &self.map
    }

    pub fn records(&self) -> &[FrameRecord] {
        &self.records
    }

    fn predicted_pose(&self) -> Pose {
        match self.records.as_slice() {
            [] => Pose::identity(),
            [only] => only.pose.clone(),
            [.., a, b] => predict_pose(&b.pose, &a.pose),
        }
    }

    /// Processes the next frame; `gt_mask` feeds the synthetic mask source.
    pub fn process(&mut self, frame: Frame, gt_mask: Option<&StaticMask>) -> Result<&FrameRecord> {
        frame.validate(&self.intr)?;
        let t_start = Instant::now();
        let predicted = self.predicted_pose();

        // Dynamic process
        let seg = self.masks.provide(&frame, gt_mask)?;
        let raw = match &self.prev_frame {
            Some(prev) => {
                let flow = compute_flow(prev, &frame, &self.cfg.dynproc)?;
                combine_raw(&seg, &motion_mask(&flow, self.cfg.dynproc.flow_threshold))?
            }
            None => seg,
        };
        let mask = if self.cfg.prior_mask {
            let rendered = (!self.map.is_empty()).then(|| {
                render_depth_for_background(&self.map, &predicted, &self.intr, self.cfg.gsmap.background_min_alpha)
            });
            self.background = update_background(&self.background, &frame, &raw, rendered.as_ref(), &self.cfg.dynproc)?;
            refine_mask(&self.background, &frame, &raw, &self.cfg.dynproc)?
        } else {
            raw.clone()
        };
        let t_dynproc = Instant::now();

        // Tracking
        let first = self.records.is_empty();
        let (pose, lost, features, matched, inliers) = if first {
            let pyramid = Pyramid::build(&frame.gray(), &self.cfg.features);
            let kps = detect(&pyramid, &mask, &self.cfg.features)?;
            let features = describe(&pyramid, &kps, &self.pattern);
            let matched = vec![false; features.len()];
            (predicted.clone(), false, features, matched, 0)
        } else {
            let r = track_frame(
                &frame,
                &mask,
                &self.points,
                &self.intr,
                &predicted,
                &self.cfg.features,
                &self.pattern,
                &self.cfg.tracker,
            )?;
            let inliers = r.inliers();
            (r.pose, r.lost, r.features, r.matched, inliers)
        };
        if lost {
            info!("frame {}: tracking lost, keeping the predicted pose", frame.index);
        }
        let is_keyframe = first
            || (!lost
                && self
                    .kf_ref
                    .as_ref()
                    .map_or(true, |k| select_keyframe(&pose, inliers, k, &self.cfg.tracker)));
        let t_tracking = Instant::now();

        // Mapping
        if is_keyframe {
            self.add_keyframe(&frame, &pose, &mask, &features, &matched, inliers)?;
        }
        let t_mapping = Instant::now();

        if self.cfg.dump_features {
            self.feature_log.extend(features.iter().zip(&matched).map(|(f, &m)| FeatureRow {
                frame: frame.index,
                x: f.keypoint.x,
                y: f.keypoint.y,
                level: f.keypoint.level,
                score: f.keypoint.score,
                matched: m,
            }));
        }
        let raw_static_fraction = raw.static_fraction();
        let refined_static_fraction = mask.static_fraction();
        if self.cfg.dump_masks {
            self.mask_log.push(FrameMasks {
                index: frame.index,
                raw,
                refined: mask,
            });
        }
        let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
        self.records.push(FrameRecord {
            index: frame.index,
            timestamp: frame.timestamp,
            pose,
            lost,
            keyframe: is_keyframe,
            features: features.len(),
            inliers,
            raw_static_fraction,
            refined_static_fraction,
            timing: FrameTiming {
                dynproc_ms: ms(t_start, t_dynproc),
                tracking_ms: ms(t_dynproc, t_tracking),
                mapping_ms: ms(t_tracking, t_mapping),
                total_ms: ms(t_start, Instant::now()),
            },
        });
        self.prev_frame = Some(frame);
        let r = self.records.last().expect("just pushed");
        log::debug!(
            "frame {}: {} features, {} inliers, static {:.3} raw / {:.3} refined, {:.0} ms",
            r.index,
            r.features,
            r.inliers,
            r.raw_static_fraction,
            r.refined_static_fraction,
            r.timing.total_ms
        );
        Ok(r)
    }

    fn add_keyframe(
        &mut self,
        frame: &Frame,
        pose: &Pose,
        mask: &StaticMask,
        features: &[FeaturePoint],
        matched: &[bool],
        inliers: usize,
    ) -> Result<()> {
        let new_points = triangulate_new_points(pose, &self.intr, frame, features, matched);
        self.kf_ref = Some(KeyframeRef {
            pose: pose.clone(),
            tracked: inliers + new_points.len(),
        });
        self.points.extend(new_points);

        // every feature with depth is a candidate; the map skips those that
        // already have a Gaussian nearby
        let anchors: Vec<([f64; 2], f64)> = features
            .iter()
            .filter_map(|f| {
                let [x, y] = f.pixel();
                let (xi, yi) = ((x.round() as usize).min(frame.width() - 1), (y.round() as usize).min(frame.height() - 1));
                frame.depth_at(xi, yi).map(|d| ([x, y], d))
            })
            .collect();
        let added = self
            .map
            .insert_from_features(&anchors, &frame.color, pose, &self.intr, &self.cfg.gsmap, &mut self.rng);
        self.keyframes.push(Keyframe {
            frame: frame.clone(),
            pose: pose.clone(),
            mask: mask.clone(),
        });
        let window = keyframe_window(self.keyframes.len(), self.cfg.gsmap.window_size, &mut self.rng);
        let stats = optimize_map(
            &mut self.map,
            &self.keyframes,
            &window,
            &self.intr,
            self.cfg.gsmap.iterations_per_keyframe,
            &self.cfg.gsmap,
            &mut self.rng,
        )?;
        info!(
            "keyframe {} (frame {}): +{added} Gaussians, {} total, loss {:?}, pruned {}",
            self.keyframes.len() - 1,
            frame.index,
            self.map.len(),
            stats.last_loss,
            stats.pruned
        );
        if self.cfg.render_keyframes {
            let out = render(&self.map, pose, &self.intr);
            match psnr(&out.color, &frame.color, mask) {
                Ok(p) => self.keyframe_psnr.push(p),
                Err(Error::NoStaticPixels) => {}
                Err(e) => return Err(e),
            }
            self.renders.push((self.keyframes.len() - 1, out.color));
        }
        Ok(())
    }

    /// Final results; ATE is computed when `ground_truth` is given and associates.
    pub fn finish(self, ground_truth: Option<Trajectory>) -> RunOutput {
        let timing = timing_report(&self.records.iter().map(|r| r.timing).collect::<Vec<_>>());
        let mut out = RunOutput {
            records: self.records,
            map: self.map,
            keyframes: self.keyframes,
            renders: self.renders,
            keyframe_psnr: self.keyframe_psnr,
            masks: self.mask_log,
            features: self.feature_log,
            timing,
            ground_truth,
            ate: None,
        };
        if let Some(gt) = &out.ground_truth {
            match associate(&out.trajectory(), gt, DEFAULT_MAX_DT).and_then(|pairs| ate(&pairs)) {
                Ok(a) => out.ate = Some(a),
                Err(e) => warn!("ATE unavailable: {e}"),
            }
        }
        out
    }
}

/// Built-in synthetic scenes by name.
pub fn synthetic_scene(name: &str) -> Result<SyntheticScene> {
    match name {
        "desk_static" | "static" => Ok(SyntheticScene::desk_static()),
        "desk_dynamic" | "dynamic" => Ok(SyntheticScene::desk_dynamic()),
        _ => Err(Error::InvalidConfig(format!(
            "unknown synthetic scene `{name}` (expected desk_static or desk_dynamic)"
        ))),
    }
}

/// Opens the configured dataset and resolves the mask source for it.
pub fn open_dataset(cfg: &PipelineConfig) -> Result<(Box<dyn Sequence>, MaskSource)> {
    let spec = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("no dataset given".into()))?;
    let (seq, auto): (Box<dyn Sequence>, MaskSource) = match spec {
        DatasetSpec::Synthetic { name, frames } => {
            let mut scene = synthetic_scene(name)?;
            scene.color_noise = cfg.synthetic_color_noise;
            scene.depth_noise = cfg.synthetic_depth_noise;
            scene.noise_seed = cfg.seed;
            let n = frames.unwrap_or(cfg.synthetic_frames);
            (Box::new(SyntheticSequence::new(scene, n)?), MaskSource::SyntheticGroundTruth)
        }
        DatasetSpec::Tum(root) => {
            if !root.is_dir() {
                return Err(Error::MissingFile(root.clone()));
            }
            let assoc = ["associations.txt", "association.txt", "associate.txt"]
                .iter()
                .map(|n| root.join(n))
                .find(|p| p.exists())
                .ok_or_else(|| Error::EmptyDataset(format!("no association file in {}", root.display())))?;
            let masks = root.join("masks");
            let auto = if masks.is_dir() {
                MaskSource::Directory(masks)
            } else {
                MaskSource::AllStatic
            };
            (Box::new(load_tum_sequence(root, &assoc)?), auto)
        }
    };
    let source = match &cfg.mask {
        MaskSetting::Auto => auto,
        MaskSetting::None => MaskSource::AllStatic,
        MaskSetting::Synthetic => MaskSource::SyntheticGroundTruth,
        MaskSetting::Directory(d) => MaskSource::Directory(d.clone()),
    };
    Ok((seq, source))
}

/// Runs the whole sequence in memory.
pub fn run_sequence(seq: &dyn Sequence, mask_source: MaskSource, cfg: &PipelineConfig) -> Result<RunOutput> {
    if seq.is_empty() {
        return Err(Error::EmptyDataset("sequence has no frames".into()));
    }
    let n = if cfg.max_frames > 0 { cfg.max_frames.min(seq.len()) } else { seq.len() };
    let mut pipeline = Pipeline::new(cfg.clone(), seq.intrinsics(), mask_source)?;
    for i in 0..n {
        let (frame, gt_mask) = seq.frame_with_mask(i)?;
        pipeline.process(frame, gt_mask.as_ref())?;
    }
    let gt = seq.ground_truth().map(|mut t| {
        if n < seq.len() {
            let last = pipeline.records().last().map_or(f64::INFINITY, |r| r.timestamp);
            t.poses.retain(|(ts, _)| *ts <= last + DEFAULT_MAX_DT);
        }
        t
    });
    Ok(pipeline.finish(gt))
}

/// Static-scene color error of the final map where movers stood.
///
/// For every keyframe the map is rendered at its estimated pose and compared
/// with the mover-free ray cast of `scene` on the pixels a mover covered in
/// that input frame. Only pixels the map covers with opacity ≥ `min_alpha`
/// are scored; the returned coverage says how many that was.
pub fn occluded_region_error(out: &RunOutput, scene: &SyntheticScene, min_alpha: f64) -> Result<RegionError> {
    let mut total = RegionError::default();
    for kf in &out.keyframes {
        let t = kf.frame.index as f64;
        let gt_pose = scene.camera.world_to_camera(t);
        let (_, _, movers) = scene.render_view(&gt_pose, t, true);
        if movers.dynamic_count() == 0 {
            continue;
        }
        let (reference, _, _) = scene.render_view(&gt_pose, t, false);
        let r = render(&out.map, &kf.pose, &scene.intrinsics);
        total.merge(&region_color_error(&r.color, &r.alpha, &reference, &movers, min_alpha)?);
    }
    Ok(total)
}

/// Fails when more than the allowed fraction of frames lost tracking.
pub fn check_lost(out: &RunOutput, cfg: &PipelineConfig) -> Result<()> {
    let (lost, total) = (out.lost_frames(), out.records.len());
    if lost as f64 > cfg.max_lost_fraction * total as f64 {
        return Err(Error::TrackingLost { lost, total });
    }
    Ok(())
}

/// Opens the dataset, runs, writes artifacts to `cfg.out_dir` (when set) and
/// applies the lost-frame check.
pub fn run(cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let (seq, source) = open_dataset(cfg)?;
    info!("running on {} frames", seq.len());
    let out = run_sequence(seq.as_ref(), source, cfg)?;
    if let Some(dir) = &cfg.out_dir {
        write_artifacts(&out, dir)?;
    }
    check_lost(&out, cfg)?;
    Ok(out)
}

pub fn write_artifacts(out: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    out.trajectory().save(&dir.join("trajectory.txt"))?;
    if let Some(gt) = &out.ground_truth {
        gt.save(&dir.join("groundtruth.txt"))?;
    }
    let metrics = out.metrics();
    fs::write(dir.join("metrics.json"), metrics_json(&metrics)?)?;
    fs::write(dir.join("metrics.txt"), metrics_text(&metrics))?;
    if let Some(t) = &out.timing {
        let per_frame: Vec<FrameTiming> = out.records.iter().map(|r| r.timing).collect();
        let json = serde_json::json!({ "summary": t, "frames": per_frame });
        fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&json)?)?;
    }
    if !out.renders.is_empty() {
        let renders = dir.join("renders");
        fs::create_dir_all(&renders)?;
        for (n, img) in &out.renders {
            write_color_png(&renders.join(format!("kf_{n}.png")), img)?;
        }
    }
    if !out.masks.is_empty() {
        let masks = dir.join("masks");
        fs::create_dir_all(&masks)?;
        for m in &out.masks {
            write_mask_png(&masks.join(format!("raw_{:06}.png", m.index)), &m.raw)?;
            write_mask_png(&masks.join(format!("refined_{:06}.png", m.index)), &m.refined)?;
        }
    }
    if !out.features.is_empty() {
        let mut csv = String::from("frame,x,y,level,score,matched\n");
        for f in &out.features {
            let _ = writeln!(csv, "{},{:.3},{:.3},{},{},{}", f.frame, f.x, f.y, f.level, f.score, f.matched as u8);
        }
        fs::write(dir.join("features.csv"), csv)?;
    }
    write_map(&out.map, &dir.join("map.bin"))?;
    Ok(())
}
