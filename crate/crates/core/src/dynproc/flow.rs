//! Dense pyramidal Lucas–Kanade flow.
//!
//! Each pixel solves the brightness-constancy constraint `Ix·u + Iy·v + It = 0`
//! in the least-squares sense over a square window. Window sums come from
//! box filters, so one Gauss–Newton iteration costs O(pixels) per level.

use super::DynprocConfig;
use crate::dataset::Frame;
use crate::error::Result;
use crate::grid::{box_sum, gaussian_blur, GrayImage, Grid};

#[derive(Clone, Debug)]
pub struct FlowField {
    /// Horizontal flow (pixels/frame).
    pub u: Grid<f64>,
    /// Vertical flow (pixels/frame).
    pub v: Grid<f64>,
    pub valid: Grid<bool>,
}

impl FlowField {
    pub fn valid_count(&self) -> usize {
        self.valid.as_slice().iter().filter(|&&v| v).count()
    }
}

pub fn compute_flow(prev: &Frame, curr: &Frame, cfg: &DynprocConfig) -> Result<FlowField> {
    prev.color.ensure_same_dims(&curr.color)?;
    compute_flow_with(&prev.gray(), &curr.gray(), cfg)
}

fn downsample2(img: &GrayImage) -> GrayImage {
    let blurred = gaussian_blur(img, 1.0);
    let w = (img.width() / 2).max(1);
    let h = (img.height() / 2).max(1);
    Grid::from_fn(w, h, |x, y| {
        *blurred.get((2 * x).min(img.width() - 1), (2 * y).min(img.height() - 1))
    })
}

fn gradients(img: &GrayImage) -> (GrayImage, GrayImage) {
    let (w, h) = img.dims();
    let gx = Grid::from_fn(w, h, |x, y| {
        let l = x.saturating_sub(1);
        let r = (x + 1).min(w - 1);
        (img.get(r, y) - img.get(l, y)) / (r - l).max(1) as f64
    });
    let gy = Grid::from_fn(w, h, |x, y| {
        let t = y.saturating_sub(1);
        let b = (y + 1).min(h - 1);
        (img.get(x, b) - img.get(x, t)) / (b - t).max(1) as f64
    });
    (gx, gy)
}

#[inline]
fn min_eigen(a: f64, b: f64, c: f64) -> f64 {
    let m = 0.5 * (a + c);
    let d = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    m - d
}

fn product(a: &GrayImage, b: &GrayImage) -> GrayImage {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).collect();
    Grid::from_vec(a.width(), a.height(), data)
}

/// Flow from `prev` to `curr` on grayscale images.
pub fn compute_flow_with(prev: &GrayImage, curr: &GrayImage, cfg: &DynprocConfig) -> Result<FlowField> {
    prev.ensure_same_dims(curr)?;
    let mut pyr0 = vec![prev.clone()];
    let mut pyr1 = vec![curr.clone()];
    for _ in 1..cfg.flow_levels {
        let (a, b) = (pyr0.last().unwrap(), pyr1.last().unwrap());
        if a.width() < 2 * cfg.flow_window || a.height() < 2 * cfg.flow_window {
            break;
        }
        let (na, nb) = (downsample2(a), downsample2(b));
        pyr0.push(na);
        pyr1.push(nb);
    }

    let r = cfg.flow_window / 2;
    let norm = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut u: Option<Grid<f64>> = None;
    let mut v: Option<Grid<f64>> = None;
    let mut valid = Grid::new(prev.width(), prev.height(), false);

    for level in (0..pyr0.len()).rev() {
        let i0 = &pyr0[level];
        let i1 = &pyr1[level];
        let (w, h) = i0.dims();
        let (mut lu, mut lv) = match (&u, &v) {
            (Some(pu), Some(pv)) => (
                Grid::from_fn(w, h, |x, y| 2.0 * pu.sample_bilinear(x as f64 / 2.0, y as f64 / 2.0)),
                Grid::from_fn(w, h, |x, y| 2.0 * pv.sample_bilinear(x as f64 / 2.0, y as f64 / 2.0)),
            ),
            _ => (Grid::new(w, h, 0.0), Grid::new(w, h, 0.0)),
        };
        let (gx, gy) = gradients(i0);
        let sxx = box_sum(&product(&gx, &gx), r);
        let sxy = box_sum(&product(&gx, &gy), r);
        let syy = box_sum(&product(&gy, &gy), r);
        let ok: Vec<bool> = (0..w * h)
            .map(|i| {
                let (a, b, c) = (sxx.as_slice()[i], sxy.as_slice()[i], syy.as_slice()[i]);
                min_eigen(a / norm, b / norm, c / norm) >= cfg.flow_min_eigen
            })
            .collect();

        for _ in 0..cfg.flow_iterations {
            let it = Grid::from_fn(w, h, |x, y| {
                i1.sample_bilinear(x as f64 + lu.get(x, y), y as f64 + lv.get(x, y)) - i0.get(x, y)
            });
            let sxt = box_sum(&product(&gx, &it), r);
            let syt = box_sum(&product(&gy, &it), r);
            for i in 0..w * h {
                if !ok[i] {
                    continue;
                }
                let (a, b, c) = (sxx.as_slice()[i], sxy.as_slice()[i], syy.as_slice()[i]);
                let det = a * c - b * b;
                let (bx, by) = (sxt.as_slice()[i], syt.as_slice()[i]);
                let du = -(c * bx - b * by) / det;
                let dv = -(a * by - b * bx) / det;
                lu.as_mut_slice()[i] += du;
                lv.as_mut_slice()[i] += dv;
            }
        }
        if level == 0 {
            valid = Grid::from_vec(w, h, ok);
        }
        u = Some(lu);
        v = Some(lv);
    }

    let mut u = u.expect("at least one level");
    let mut v = v.expect("at least one level");
    for i in 0..u.len() {
        let finite = u.as_slice()[i].is_finite() && v.as_slice()[i].is_finite();
        if !finite {
            valid.as_mut_slice()[i] = false;
            u.as_mut_slice()[i] = 0.0;
            v.as_mut_slice()[i] = 0.0;
        }
    }
    Ok(FlowField { u, v, valid })
}
