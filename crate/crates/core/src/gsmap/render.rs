//! Tiled front-to-back compositing of projected Gaussians and its adjoint.
//!
//! Per pixel, Gaussians are visited in ascending camera depth; each
//! contributes `α = min(o·g(q), ALPHA_MAX)` and the walk stops once the
//! transmittance falls below `MIN_TRANSMITTANCE` (the Gaussian that crosses
//! the limit still contributes). The backward pass walks the same list in
//! reverse, recovering transmittances by division.

use super::project::{footprint_from_exp, project_backward, project_gaussian, Projected, ScreenGrad, CUTOFF_Q};
use super::{GaussianMap, ParamGrad, N_PARAMS};
use crate::geometry::{Intrinsics, Pose};
use crate::grid::{ColorImage, DepthImage, Grid};

pub const TILE: usize = 32;
pub const ALPHA_MAX: f64 = 0.999;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: ColorImage,
    pub depth: DepthImage,
    /// Accumulated opacity `1 − Π(1−α)`.
    pub alpha: Grid<f64>,
}

/// Screen-space data a pixel needs from one Gaussian, packed for cache locality.
#[derive(Clone, Copy, Debug)]
struct Splat {
    mean: [f64; 2],
    conic: [f64; 3],
    /// `exp(−a)`: ratio of successive per-pixel ratios along a row.
    row_decay: f64,
    opacity: f64,
    color: [f64; 3],
    depth: f64,
    /// Pixel box of the 3σ footprint, `(x0, y0, x1, y1)` inclusive.
    bbox: [usize; 4],
}

/// Pixels `xa..=xb` of one row inside a splat's support, with the Gaussian
/// factor at `xa` and its step ratio.
struct RowSpan {
    xa: usize,
    xb: usize,
    dy: f64,
    e: f64,
    ratio: f64,
}

impl Splat {
    fn new(p: &Projected) -> Self {
        let (x0, y0, x1, y1) = p.bbox.expect("only boxed Gaussians are binned");
        Self {
            bbox: [x0, y0, x1, y1],
            mean: p.mean,
            conic: p.conic,
            row_decay: (-p.conic[0]).exp(),
            opacity: p.opacity,
            color: p.color,
            depth: p.depth,
        }
    }

    /// Support of row `y` clipped to `[lo, hi]`: the pixels where
    /// `q < CUTOFF_Q`, solved from the quadratic in `dx` (widened slightly;
    /// callers still test `q`). Along the row `exp(−q/2)` follows a
    /// two-term multiplicative recurrence, so only the span start needs `exp`.
    #[inline]
    fn row_span(&self, y: usize, lo: usize, hi: usize) -> Option<RowSpan> {
        let [a, b, c] = self.conic;
        let dy = y as f64 - self.mean[1];
        let disc = (b * dy).powi(2) - a * (c * dy * dy - CUTOFF_Q);
        if disc <= 0.0 {
            return None;
        }
        let root = disc.sqrt();
        let from = (self.mean[0] + (-b * dy - root) / a - 1e-9).ceil().max(lo.max(self.bbox[0]) as f64);
        let to = (self.mean[0] + (-b * dy + root) / a + 1e-9).floor().min(hi.min(self.bbox[2]) as f64);
        if from > to {
            return None;
        }
        let dx = from - self.mean[0];
        Some(RowSpan {
            xa: from as usize,
            xb: to as usize,
            dy,
            e: (-0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)).exp(),
            ratio: (-0.5 * (a * (2.0 * dx + 1.0) + 2.0 * b * dy)).exp(),
        })
    }

    #[inline]
    fn mahalanobis(&self, dx: f64, dy: f64) -> f64 {
        let [a, b, c] = self.conic;
        a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    }
}

/// Forward-pass bookkeeping needed by [`backward`].
#[derive(Clone, Debug)]
pub struct RenderState {
    pub projected: Vec<Option<Projected>>,
    /// Positions into `splats` per tile, front to back.
    tiles: Vec<Vec<u32>>,
    /// Binned Gaussians in depth order.
    splats: Vec<Splat>,
    /// Map index of each entry of `splats`.
    splat_source: Vec<u32>,
    tiles_x: usize,
    final_transmittance: Vec<f64>,
    /// Number of tile-list entries consumed per pixel.
    consumed: Vec<u32>,
    width: usize,
    height: usize,
}

/// Depth order with a content-based tie-break so the result does not depend
/// on the storage order of the map.
fn depth_order(projected: &[Option<Projected>]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..projected.len() as u32)
        .filter(|&i| projected[i as usize].as_ref().is_some_and(|p| p.bbox.is_some()))
        .collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (projected[i as usize].as_ref().unwrap(), projected[j as usize].as_ref().unwrap());
        a.depth
            .total_cmp(&b.depth)
            .then(a.mean[0].total_cmp(&b.mean[0]))
            .then(a.mean[1].total_cmp(&b.mean[1]))
            .then(a.opacity.total_cmp(&b.opacity))
            .then(a.cov[0].total_cmp(&b.cov[0]))
            .then(a.color[0].total_cmp(&b.color[0]))
    });
    order
}

/// Pixel ranges `(x0, y0, x1, y1)` of a tile, clipped to the image.
#[inline]
fn tile_bounds(tx: usize, ty: usize, w: usize, h: usize) -> (usize, usize, usize, usize) {
    (tx * TILE, ty * TILE, ((tx + 1) * TILE).min(w) - 1, ((ty + 1) * TILE).min(h) - 1)
}

pub fn render(map: &GaussianMap, pose: &Pose, intr: &Intrinsics) -> RenderOutput {
    render_with_state(map, pose, intr).0
}

pub fn render_with_state(map: &GaussianMap, pose: &Pose, intr: &Intrinsics) -> (RenderOutput, RenderState) {
    let (w, h) = (intr.width, intr.height);
    let projected: Vec<Option<Projected>> = map.gaussians.iter().map(|g| project_gaussian(g, pose, intr)).collect();
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let splat_source = depth_order(&projected);
    let splats: Vec<Splat> = splat_source
        .iter()
        .map(|&i| Splat::new(projected[i as usize].as_ref().unwrap()))
        .collect();
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        let [x0, y0, x1, y1] = s.bbox;
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                tiles[ty * tiles_x + tx].push(k as u32);
            }
        }
    }

    let mut color = Grid::new(w, h, [0.0; 3]);
    let mut depth = Grid::new(w, h, 0.0);
    let mut alpha = Grid::new(w, h, 0.0);
    let mut final_transmittance = vec![1.0; w * h];
    let mut consumed = vec![0u32; w * h];

    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let list = &tiles[ty * tiles_x + tx];
            if list.is_empty() {
                continue;
            }
            let (px0, py0, px1, py1) = tile_bounds(tx, ty, w, h);
            for y in py0..=py1 {
                consumed[y * w + px0..=y * w + px1].fill(list.len() as u32);
            }
            let mut alive = (px1 - px0 + 1) * (py1 - py0 + 1);
            for (k, &si) in list.iter().enumerate() {
                let p = &splats[si as usize];
                for y in py0.max(p.bbox[1])..=py1.min(p.bbox[3]) {
                    let Some(span) = p.row_span(y, px0, px1) else {
                        continue;
                    };
                    let (mut e, mut ratio) = (span.e, span.ratio);
                    let mut dx = span.xa as f64 - p.mean[0];
                    let row = y * w + span.xa..=y * w + span.xb;
                    let pixels = final_transmittance[row.clone()]
                        .iter_mut()
                        .zip(&mut color.as_mut_slice()[row.clone()])
                        .zip(&mut depth.as_mut_slice()[row.clone()])
                        .zip(&mut consumed[row]);
                    for (((t, c), d), n) in pixels {
                        let q = p.mahalanobis(dx, span.dy);
                        if *t >= MIN_TRANSMITTANCE && q < CUTOFF_Q {
                            let a = (p.opacity * footprint_from_exp(q, e).0).min(ALPHA_MAX);
                            let wgt = a * *t;
                            c[0] += wgt * p.color[0];
                            c[1] += wgt * p.color[1];
                            c[2] += wgt * p.color[2];
                            *d += wgt * p.depth;
                            *t *= 1.0 - a;
                            if *t < MIN_TRANSMITTANCE {
                                *n = k as u32 + 1;
                                alive -= 1;
                            }
                        }
                        dx += 1.0;
                        e *= ratio;
                        ratio *= p.row_decay;
                    }
                }
                if alive == 0 {
                    break;
                }
            }
        }
    }
    for (a, t) in alpha.as_mut_slice().iter_mut().zip(&final_transmittance) {
        *a = 1.0 - t;
    }
    (
        RenderOutput { color, depth, alpha },
        RenderState {
            projected,
            tiles,
            splats,
            splat_source,
            tiles_x,
            final_transmittance,
            consumed,
            width: w,
            height: h,
        },
    )
}

/// Rendered depth with pixels of low accumulated opacity marked unobserved (0).
pub fn render_depth_for_background(map: &GaussianMap, pose: &Pose, intr: &Intrinsics, min_alpha: f64) -> DepthImage {
    let out = render(map, pose, intr);
    Grid::from_fn(intr.width, intr.height, |x, y| {
        if *out.alpha.get(x, y) < min_alpha {
            0.0
        } else {
            *out.depth.get(x, y)
        }
    })
}

/// Per-pixel state of the reverse walk.
#[derive(Clone, Copy, Default)]
struct Behind {
    t: f64,
    color: [f64; 3],
    depth: f64,
}

/// Gradients of a scalar loss with respect to every Gaussian parameter,
/// given `∂L/∂C_r` and `∂L/∂D_r` per pixel.
pub fn backward(
    map: &GaussianMap,
    state: &RenderState,
    pose: &Pose,
    intr: &Intrinsics,
    dl_dcolor: &ColorImage,
    dl_ddepth: &DepthImage,
) -> Vec<ParamGrad> {
    let (w, h) = (state.width, state.height);
    let mut screen = vec![ScreenGrad::default(); map.len()];
    let mut touched = vec![false; map.len()];
    let mut behind = vec![Behind::default(); w * h];
    for (b, &t) in behind.iter_mut().zip(&state.final_transmittance) {
        b.t = t;
    }
    let active: Vec<bool> = dl_dcolor
        .as_slice()
        .iter()
        .zip(dl_ddepth.as_slice())
        .map(|(c, &d)| *c != [0.0; 3] || d != 0.0)
        .collect();

    for (tile, list) in state.tiles.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let (px0, py0, px1, py1) = tile_bounds(tile % state.tiles_x, tile / state.tiles_x, w, h);
        if !(py0..=py1).any(|y| active[y * w + px0..=y * w + px1].iter().any(|&a| a)) {
            continue;
        }
        let used = (py0..=py1)
            .map(|y| state.consumed[y * w + px0..=y * w + px1].iter().copied().max().unwrap_or(0))
            .max()
            .unwrap_or(0) as usize;
        for (k, &si) in list[..used].iter().enumerate().rev() {
            let p = &state.splats[si as usize];
            let mut sg = ScreenGrad::default();
            let mut hit = false;
            for y in py0.max(p.bbox[1])..=py1.min(p.bbox[3]) {
                let Some(span) = p.row_span(y, px0, px1) else {
                    continue;
                };
                let (mut e, mut ratio) = (span.e, span.ratio);
                let (x0, dy) = (span.xa as f64 - p.mean[0], span.dy);
                let row = y * w + span.xa..=y * w + span.xb;
                let pixels = behind[row.clone()]
                    .iter_mut()
                    .zip(&active[row.clone()])
                    .zip(&state.consumed[row.clone()])
                    .zip(dl_dcolor.as_slice()[row.clone()].iter().zip(&dl_ddepth.as_slice()[row]));
                for (i, (((b, &act), &n), (gc, &gd))) in pixels.enumerate() {
                    let dx = x0 + i as f64;
                    let ee = e;
                    e *= ratio;
                    ratio *= p.row_decay;
                    let q = p.mahalanobis(dx, dy);
                    if k as u32 >= n || q >= CUTOFF_Q || !act {
                        continue;
                    }
                    hit = true;
                    let (fp, dfp) = footprint_from_exp(q, ee);
                    let raw = p.opacity * fp;
                    let a = raw.min(ALPHA_MAX);
                    let t_before = b.t / (1.0 - a);
                    let wgt = a * t_before;
                    let ([c0, c1, c2], [b0, b1, b2]) = (p.color, b.color);
                    sg.color[0] += wgt * gc[0];
                    sg.color[1] += wgt * gc[1];
                    sg.color[2] += wgt * gc[2];
                    sg.depth += wgt * gd;
                    let dl_da = t_before
                        * ((c0 - b0) * gc[0] + (c1 - b1) * gc[1] + (c2 - b2) * gc[2] + (p.depth - b.depth) * gd);
                    let keep = 1.0 - a;
                    b.color = [a * c0 + keep * b0, a * c1 + keep * b1, a * c2 + keep * b2];
                    b.depth = a * p.depth + keep * b.depth;
                    b.t = t_before;

                    if raw < ALPHA_MAX {
                        sg.opacity += dl_da * fp;
                        let dl_dq = dl_da * p.opacity * dfp;
                        let [ca, cb, cc] = p.conic;
                        sg.mean[0] += dl_dq * -2.0 * (ca * dx + cb * dy);
                        sg.mean[1] += dl_dq * -2.0 * (cb * dx + cc * dy);
                        sg.conic[0] += dl_dq * dx * dx;
                        sg.conic[1] += dl_dq * 2.0 * dx * dy;
                        sg.conic[2] += dl_dq * dy * dy;
                    }
                }
            }
            if hit {
                let gi = state.splat_source[si as usize] as usize;
                touched[gi] = true;
                screen[gi].accumulate(&sg);
            }
        }
    }

    map.gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| {
            if touched[i] {
                project_backward(g, pose, intr, &screen[i])
            } else {
                [0.0; N_PARAMS]
            }
        })
        .collect()
}
