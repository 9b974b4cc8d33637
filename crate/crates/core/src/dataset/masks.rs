use std::path::PathBuf;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Frame;
use crate::error::{Error, Result};
use crate::imageio::read_mask_png;
use crate::mask::SegmentMask;

/// Corruptions applied to otherwise perfect masks, for robustness experiments.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MaskCorruption {
    /// Probability that a frame's mask is dropped entirely (replaced by all-static).
    pub dropout: f64,
    /// Dilation radius (pixels) applied to the dynamic region.
    pub dilation: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MaskSource {
    AllStatic,
    /// 8-bit PNGs named `<index>.png` or `<index:06>.png` (0 = dynamic, 255 = static).
    Directory(PathBuf),
    /// Pass-through of the synthetic renderer's masks.
    SyntheticGroundTruth,
}

/// Supplies per-frame segment masks from an external source.
#[derive(Clone, Debug)]
pub struct MaskProvider {
    source: MaskSource,
    corruption: MaskCorruption,
    rng: ChaCha8Rng,
}

impl MaskProvider {
    pub fn new(source: MaskSource, corruption: MaskCorruption, seed: u64) -> Self {
        Self {
            source,
            corruption,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn source(&self) -> &MaskSource {
        &self.source
    }

    /// Mask for `frame`; `ground_truth` feeds the synthetic pass-through source.
    pub fn provide(&mut self, frame: &Frame, ground_truth: Option<&SegmentMask>) -> Result<SegmentMask> {
        let (w, h) = (frame.width(), frame.height());
        let base = match &self.source {
            MaskSource::AllStatic => SegmentMask::all_static(w, h),
            MaskSource::SyntheticGroundTruth => match ground_truth {
                Some(m) => m.clone(),
                None => {
                    info!("frame {}: no ground-truth mask, using all-static", frame.index);
                    SegmentMask::all_static(w, h)
                }
            },
            MaskSource::Directory(dir) => {
                let candidates = [
                    dir.join(format!("{}.png", frame.index)),
                    dir.join(format!("{:06}.png", frame.index)),
                ];
                match candidates.iter().find(|p| p.exists()) {
                    Some(p) => read_mask_png(p)?,
                    None => {
                        info!("frame {}: no mask file in {}, using all-static", frame.index, dir.display());
                        SegmentMask::all_static(w, h)
                    }
                }
            }
        };
        if base.dims() != (w, h) {
            return Err(Error::MaskSizeMismatch {
                expected: (w, h),
                actual: base.dims(),
            });
        }
        // Draw unconditionally so the random stream does not depend on the source.
        let dropped = self.rng.gen::<f64>() < self.corruption.dropout;
        if dropped {
            return Ok(SegmentMask::all_static(w, h));
        }
        Ok(base.dilate_dynamic(self.corruption.dilation))
    }
}
