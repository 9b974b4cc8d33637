//! Minimal CPU ray caster for textured planes and boxes with moving boxes.
//!
//! World coordinates follow the camera convention of frame 0 for the stock
//! scenes: x right, y down, z forward. Depth is the camera-frame z of the first
//! hit, color comes from flat-shaded random-color tiles, and the ground-truth
//! mask is 0 exactly where the center ray first hits a mover.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Frame, Sequence};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Point3, Pose};
use crate::grid::{ColorImage, DepthImage, Grid};
use crate::mask::StaticMask;
use crate::trajectory::Trajectory;

/// Random-color square tiles of side `tile` meters.
#[derive(Clone, Debug)]
pub struct Texture {
    pub tile: f64,
    pub seed: u64,
    pub lo: f64,
    pub hi: f64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Texture {
    pub fn new(tile: f64, seed: u64) -> Self {
        Self {
            tile,
            seed,
            lo: 0.1,
            hi: 0.9,
        }
    }

    pub fn color(&self, face: u64, s: f64, t: f64) -> [f64; 3] {
        let i = (s / self.tile).floor() as i64 as u64;
        let j = (t / self.tile).floor() as i64 as u64;
        let h = splitmix64(
            self.seed
                ^ splitmix64(face.wrapping_mul(0x1000_0000_01b3))
                ^ splitmix64(i.wrapping_mul(0x9e37_79b9).wrapping_add(j.wrapping_mul(0x85eb_ca6b))),
        );
        let span = self.hi - self.lo;
        let ch = |k: u32| self.lo + span * (((h >> (k * 16)) & 0xffff) as f64 / 65535.0);
        [ch(0), ch(1), ch(2)]
    }
}

#[derive(Clone, Debug)]
pub enum Shape {
    /// Rectangle `origin + a·u + b·v`, `a, b ∈ [0, 1]`, with `u ⟂ v`.
    Quad {
        origin: Point3,
        u: Vector3<f64>,
        v: Vector3<f64>,
    },
    /// Axis-aligned box.
    Cuboid { center: Point3, half: Vector3<f64> },
}

#[derive(Clone, Copy, Debug)]
struct Hit {
    t: f64,
    face: u64,
    s: f64,
    r: f64,
}

fn intersect_quad(o: &Point3, d: &Vector3<f64>, origin: &Point3, u: &Vector3<f64>, v: &Vector3<f64>) -> Option<Hit> {
    let n = u.cross(v);
    let denom = n.dot(d);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = n.dot(&(origin - o)) / denom;
    if t <= 1e-9 {
        return None;
    }
    let rel = o + d * t - origin;
    let a = rel.dot(u) / u.norm_squared();
    let b = rel.dot(v) / v.norm_squared();
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
        return None;
    }
    Some(Hit {
        t,
        face: 0,
        s: a * u.norm(),
        r: b * v.norm(),
    })
}

fn intersect_box(o: &Point3, d: &Vector3<f64>, center: &Point3, half: &Vector3<f64>) -> Option<Hit> {
    let lo = center - half;
    let hi = center + half;
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    let mut side = 0;
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k] < lo[k] || o[k] > hi[k] {
                return None;
            }
            continue;
        }
        let t0 = (lo[k] - o[k]) / d[k];
        let t1 = (hi[k] - o[k]) / d[k];
        let (ta, tb, sa) = if t0 < t1 { (t0, t1, 0) } else { (t1, t0, 1) };
        if ta > t_near {
            t_near = ta;
            axis = k;
            side = sa;
        }
        t_far = t_far.min(tb);
    }
    if t_near > t_far || t_near <= 1e-9 {
        return None;
    }
    let p = o + d * t_near - lo;
    let (s, r) = match axis {
        0 => (p.z, p.y),
        1 => (p.x, p.z),
        _ => (p.x, p.y),
    };
    Some(Hit {
        t: t_near,
        face: (axis * 2 + side) as u64 + 1,
        s,
        r,
    })
}

impl Shape {
    fn intersect(&self, o: &Point3, d: &Vector3<f64>) -> Option<Hit> {
        match self {
            Shape::Quad { origin, u, v } => intersect_quad(o, d, origin, u, v),
            Shape::Cuboid { center, half } => intersect_box(o, d, center, half),
        }
    }

    fn contains(&self, p: &Point3) -> bool {
        match self {
            Shape::Quad { .. } => false,
            Shape::Cuboid { center, half } => (p - center).iter().zip(half.iter()).all(|(a, h)| a.abs() < *h),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TexturedShape {
    pub shape: Shape,
    pub texture: Texture,
}

#[derive(Clone, Debug)]
pub enum MoverPath {
    /// Triangle wave between `from` and `to`; one full cycle takes `period` frames.
    PingPong {
        from: Point3,
        to: Point3,
        period: f64,
        phase: f64,
    },
    Linear {
        start: Point3,
        velocity: Vector3<f64>,
    },
}

impl MoverPath {
    pub fn position(&self, frame: f64) -> Point3 {
        match self {
            MoverPath::PingPong {
                from,
                to,
                period,
                phase,
            } => {
                let c = (frame / period + phase).rem_euclid(1.0);
                let a = if c < 0.5 { 2.0 * c } else { 2.0 - 2.0 * c };
                from + (to - from) * a
            }
            MoverPath::Linear { start, velocity } => start + velocity * frame,
        }
    }
}

/// Axis-aligned textured box translated along a path.
#[derive(Clone, Debug)]
pub struct Mover {
    pub half: Vector3<f64>,
    pub texture: Texture,
    pub path: MoverPath,
}

/// Camera-to-world motion: linear drift plus sinusoidal sway and yaw/pitch wobble.
#[derive(Clone, Debug)]
pub struct CameraPath {
    pub start: Pose,
    pub velocity: Vector3<f64>,
    pub sway: Vector3<f64>,
    pub sway_period: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub rot_period: f64,
}

impl CameraPath {
    pub fn stationary(camera_to_world: Pose) -> Self {
        Self {
            start: camera_to_world,
            velocity: Vector3::zeros(),
            sway: Vector3::zeros(),
            sway_period: 1.0,
            yaw: 0.0,
            pitch: 0.0,
            rot_period: 1.0,
        }
    }

    pub fn camera_to_world(&self, frame: f64) -> Pose {
        let s = (2.0 * PI * frame / self.sway_period).sin();
        let r = (2.0 * PI * frame / self.rot_period).sin();
        let translation = self.start.translation + self.velocity * frame + self.sway * s;
        let wobble = Rotation3::from_axis_angle(&Vector3::y_axis(), self.yaw * r)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.pitch * r);
        Pose::new(self.start.rotation * wobble.matrix(), translation)
    }

    pub fn world_to_camera(&self, frame: f64) -> Pose {
        self.camera_to_world(frame).inverse()
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub statics: Vec<TexturedShape>,
    pub movers: Vec<Mover>,
    pub camera: CameraPath,
    pub intrinsics: Intrinsics,
    pub frame_rate: f64,
    /// Color samples per pixel along each axis.
    pub supersample: usize,
    /// Standard deviation of additive color noise.
    pub color_noise: f64,
    /// Relative depth noise (fraction of depth).
    pub depth_noise: f64,
    pub noise_seed: u64,
}

/// One rendered frame with its world-to-camera pose and ground-truth mask.
#[derive(Clone, Debug)]
pub struct SyntheticFrame {
    pub frame: Frame,
    pub pose: Pose,
    pub mask: StaticMask,
}

fn desk_room(statics: &mut Vec<TexturedShape>) {
    let wall = |origin: Point3, u: Vector3<f64>, v: Vector3<f64>, seed| TexturedShape {
        shape: Shape::Quad { origin, u, v },
        texture: Texture::new(0.12, seed),
    };
    let (x0, x1, y0, y1, z1) = (-1.5, 1.5, -1.1, 0.75, 2.6);
    statics.push(wall(Point3::new(x0, y0, z1), Vector3::new(x1 - x0, 0.0, 0.0), Vector3::new(0.0, y1 - y0, 0.0), 11));
    statics.push(wall(Point3::new(x0, y1, 0.0), Vector3::new(x1 - x0, 0.0, 0.0), Vector3::new(0.0, 0.0, z1), 12));
    statics.push(wall(Point3::new(x0, y0, 0.0), Vector3::new(x1 - x0, 0.0, 0.0), Vector3::new(0.0, 0.0, z1), 13));
    statics.push(wall(Point3::new(x0, y0, 0.0), Vector3::new(0.0, 0.0, z1), Vector3::new(0.0, y1 - y0, 0.0), 14));
    statics.push(wall(Point3::new(x1, y0, 0.0), Vector3::new(0.0, 0.0, z1), Vector3::new(0.0, y1 - y0, 0.0), 15));
    statics.push(TexturedShape {
        shape: Shape::Cuboid {
            center: Point3::new(-0.45, 0.5, 1.8),
            half: Vector3::new(0.3, 0.25, 0.25),
        },
        texture: Texture::new(0.07, 21),
    });
    statics.push(TexturedShape {
        shape: Shape::Cuboid {
            center: Point3::new(0.55, 0.45, 2.2),
            half: Vector3::new(0.2, 0.3, 0.2),
        },
        texture: Texture::new(0.07, 22),
    });
}

impl SyntheticScene {
    pub fn default_intrinsics() -> Intrinsics {
        Intrinsics {
            fx: 260.0,
            fy: 260.0,
            cx: 159.5,
            cy: 119.5,
            width: 320,
            height: 240,
        }
    }

    /// Empty scene with a stationary identity camera.
    pub fn empty(intrinsics: Intrinsics) -> Self {
        Self {
            statics: Vec::new(),
            movers: Vec::new(),
            camera: CameraPath::stationary(Pose::identity()),
            intrinsics,
            frame_rate: 30.0,
            supersample: 2,
            color_noise: 0.0,
            depth_noise: 0.0,
            noise_seed: 0,
        }
    }

    /// Textured room with two boxes, slowly drifting hand-held camera.
    pub fn desk_static() -> Self {
        let mut scene = Self::empty(Self::default_intrinsics());
        desk_room(&mut scene.statics);
        scene.camera = CameraPath {
            start: Pose::identity(),
            velocity: Vector3::new(0.0015, 0.0, 0.001),
            sway: Vector3::new(0.03, 0.015, 0.02),
            sway_period: 70.0,
            yaw: 0.035,
            pitch: 0.02,
            rot_period: 90.0,
        };
        scene
    }

    /// [`Self::desk_static`] plus two boxes sweeping across the view.
    pub fn desk_dynamic() -> Self {
        let mut scene = Self::desk_static();
        scene.movers.push(Mover {
            half: Vector3::new(0.15, 0.22, 0.1),
            texture: Texture::new(0.05, 31),
            path: MoverPath::PingPong {
                from: Point3::new(-0.8, 0.05, 1.25),
                to: Point3::new(0.8, 0.05, 1.25),
                period: 120.0,
                phase: 0.0,
            },
        });
        scene.movers.push(Mover {
            half: Vector3::new(0.12, 0.3, 0.12),
            texture: Texture::new(0.05, 32),
            path: MoverPath::PingPong {
                from: Point3::new(0.7, 0.0, 1.9),
                to: Point3::new(-0.7, 0.0, 1.9),
                period: 160.0,
                phase: 0.25,
            },
        });
        scene
    }

    fn check_camera(&self, camera_to_world: &Pose, frame: f64) -> Result<()> {
        let c = camera_to_world.translation;
        if self.statics.iter().any(|s| s.shape.contains(&c)) {
            return Err(Error::DegenerateScene("camera inside static geometry".into()));
        }
        for m in &self.movers {
            let shape = Shape::Cuboid {
                center: m.path.position(frame),
                half: m.half,
            };
            if shape.contains(&c) {
                return Err(Error::DegenerateScene("camera inside a mover".into()));
            }
        }
        Ok(())
    }

    /// Nearest hit along a world ray: `(t, color, is_mover)`.
    fn trace(&self, o: &Point3, d: &Vector3<f64>, movers: &[Shape]) -> Option<(f64, [f64; 3], bool)> {
        let mut best: Option<(Hit, &Texture, bool)> = None;
        for s in &self.statics {
            if let Some(h) = s.shape.intersect(o, d) {
                if best.as_ref().map_or(true, |b| h.t < b.0.t) {
                    best = Some((h, &s.texture, false));
                }
            }
        }
        for (m, shape) in self.movers.iter().zip(movers) {
            if let Some(h) = shape.intersect(o, d) {
                if best.as_ref().map_or(true, |b| h.t < b.0.t) {
                    best = Some((h, &m.texture, true));
                }
            }
        }
        best.map(|(h, tex, mover)| (h.t, tex.color(h.face, h.s, h.r), mover))
    }

    /// Renders color, depth and ground-truth mask from `world_to_camera` at time `frame`.
    pub fn render_view(&self, world_to_camera: &Pose, frame: f64, with_movers: bool) -> (ColorImage, DepthImage, StaticMask) {
        let k = &self.intrinsics;
        let cam_to_world = world_to_camera.inverse();
        let o = cam_to_world.translation;
        let rot = cam_to_world.rotation;
        let movers: Vec<Shape> = if with_movers {
            self.movers
                .iter()
                .map(|m| Shape::Cuboid {
                    center: m.path.position(frame),
                    half: m.half,
                })
                .collect()
        } else {
            Vec::new()
        };
        let ss = self.supersample.max(1);
        let (w, h) = (k.width, k.height);
        let mut color = Grid::new(w, h, [0.0; 3]);
        let mut depth = Grid::new(w, h, 0.0);
        let mut mask = StaticMask::all_static(w, h);
        for y in 0..h {
            for x in 0..w {
                let ray = |px: f64, py: f64| rot * Vector3::new((px - k.cx) / k.fx, (py - k.cy) / k.fy, 1.0);
                if let Some((t, _, is_mover)) = self.trace(&o, &ray(x as f64, y as f64), &movers) {
                    depth.set(x, y, t);
                    mask.set(x, y, !is_mover);
                }
                let mut acc = [0.0; 3];
                for sy in 0..ss {
                    for sx in 0..ss {
                        let ox = (sx as f64 + 0.5) / ss as f64 - 0.5;
                        let oy = (sy as f64 + 0.5) / ss as f64 - 0.5;
                        if let Some((_, c, _)) = self.trace(&o, &ray(x as f64 + ox, y as f64 + oy), &movers) {
                            for ch in 0..3 {
                                acc[ch] += c[ch];
                            }
                        }
                    }
                }
                let n = (ss * ss) as f64;
                color.set(x, y, acc.map(|a| a / n));
            }
        }
        (color, depth, mask)
    }

    /// Renders frame `index` with sensor noise applied.
    pub fn render_frame(&self, index: usize) -> Result<SyntheticFrame> {
        let t = index as f64;
        let cam_to_world = self.camera.camera_to_world(t);
        self.check_camera(&cam_to_world, t)?;
        let pose = cam_to_world.inverse();
        let (mut color, mut depth, mask) = self.render_view(&pose, t, true);
        if self.color_noise > 0.0 || self.depth_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed ^ splitmix64(index as u64 + 1));
            let n = Normal::new(0.0, 1.0).expect("unit normal");
            if self.color_noise > 0.0 {
                for c in color.as_mut_slice() {
                    for v in c.iter_mut() {
                        *v = (*v + self.color_noise * n.sample(&mut rng)).clamp(0.0, 1.0);
                    }
                }
            }
            if self.depth_noise > 0.0 {
                for d in depth.as_mut_slice() {
                    if *d > 0.0 {
                        *d = (*d * (1.0 + self.depth_noise * n.sample(&mut rng))).max(1e-3);
                    }
                }
            }
        }
        Ok(SyntheticFrame {
            frame: Frame {
                index,
                timestamp: t / self.frame_rate,
                color,
                depth,
            },
            pose,
            mask,
        })
    }
}

/// Renders `n_frames` frames with poses and ground-truth masks.
pub fn render_synthetic(scene: &SyntheticScene, n_frames: usize) -> Result<Vec<SyntheticFrame>> {
    if n_frames < 2 {
        return Err(Error::InvalidConfig(format!(
            "synthetic sequences need at least 2 frames, got {n_frames}"
        )));
    }
    (0..n_frames).map(|i| scene.render_frame(i)).collect()
}

/// Lazily rendered synthetic sequence.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub scene: SyntheticScene,
    pub n_frames: usize,
}

impl SyntheticSequence {
    pub fn new(scene: SyntheticScene, n_frames: usize) -> Result<Self> {
        if n_frames < 2 {
            return Err(Error::InvalidConfig(format!(
                "synthetic sequences need at least 2 frames, got {n_frames}"
            )));
        }
        scene.intrinsics.validate()?;
        Ok(Self { scene, n_frames })
    }

    pub fn pose(&self, index: usize) -> Pose {
        self.scene.camera.world_to_camera(index as f64)
    }
}

impl Sequence for SyntheticSequence {
    fn len(&self) -> usize {
        self.n_frames
    }

    fn intrinsics(&self) -> Intrinsics {
        self.scene.intrinsics
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        Ok(self.scene.render_frame(index)?.frame)
    }

    fn ground_truth(&self) -> Option<Trajectory> {
        Some(Trajectory::from_world_to_camera((0..self.n_frames).map(|i| {
            (i as f64 / self.scene.frame_rate, self.pose(i))
        })))
    }

    fn ground_truth_mask(&self, index: usize) -> Option<StaticMask> {
        self.scene.render_frame(index).ok().map(|f| f.mask)
    }

    fn frame_with_mask(&self, index: usize) -> Result<(Frame, Option<StaticMask>)> {
        let f = self.scene.render_frame(index)?;
        Ok((f.frame, Some(f.mask)))
    }
}
