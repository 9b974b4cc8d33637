use super::RenderOutput;
use crate::dataset::Frame;
use crate::error::{Error, Result};
use crate::grid::{ColorImage, DepthImage, Grid};
use crate::mask::StaticMask;

#[derive(Clone, Debug)]
pub struct LossValue {
    pub total: f64,
    /// Mean absolute color error over static pixels and channels.
    pub color: f64,
    /// Mean absolute depth error over static pixels with valid depth.
    pub depth: f64,
    pub dl_dcolor: ColorImage,
    pub dl_ddepth: DepthImage,
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Masked L1 loss `(1−λ)·|C_r − C|₁ + λ·|D_r − D|₁`, each term averaged over
/// the static (and, for depth, valid) pixels, with its pixel gradients.
pub fn loss(out: &RenderOutput, frame: &Frame, mask: &StaticMask, lambda: f64) -> Result<LossValue> {
    out.color.ensure_same_dims(&frame.color)?;
    out.color.ensure_same_dims(mask.grid())?;
    let (w, h) = frame.color.dims();
    let n_color = mask.static_count();
    if n_color == 0 {
        return Err(Error::NoStaticPixels);
    }
    let n_depth = (0..w * h)
        .filter(|&i| mask.grid().as_slice()[i] != 0 && frame.depth.as_slice()[i] > 0.0)
        .count();

    let color_scale = (1.0 - lambda) / (3 * n_color) as f64;
    let depth_scale = if n_depth > 0 { lambda / n_depth as f64 } else { 0.0 };
    let mut dl_dcolor = Grid::new(w, h, [0.0; 3]);
    let mut dl_ddepth = Grid::new(w, h, 0.0);
    let (mut color_sum, mut depth_sum) = (0.0, 0.0);
    for i in 0..w * h {
        if mask.grid().as_slice()[i] == 0 {
            continue;
        }
        let cr = out.color.as_slice()[i];
        let cg = frame.color.as_slice()[i];
        let g = &mut dl_dcolor.as_mut_slice()[i];
        for ch in 0..3 {
            let r = cr[ch] - cg[ch];
            color_sum += r.abs();
            g[ch] = color_scale * sign(r);
        }
        let dg = frame.depth.as_slice()[i];
        if dg > 0.0 {
            let r = out.depth.as_slice()[i] - dg;
            depth_sum += r.abs();
            dl_ddepth.as_mut_slice()[i] = depth_scale * sign(r);
        }
    }
    let color = color_sum / (3 * n_color) as f64;
    let depth = if n_depth > 0 { depth_sum / n_depth as f64 } else { 0.0 };
    Ok(LossValue {
        total: (1.0 - lambda) * color + lambda * depth,
        color,
        depth,
        dl_dcolor,
        dl_ddepth,
    })
}
