//! Frame sources: TUM-format RGB-D sequences, the synthetic ray-cast scenes,
//! and externally supplied segmentation masks.

mod masks;
mod synthetic;
mod tum;

pub use masks::{MaskCorruption, MaskProvider, MaskSource};
pub use synthetic::{
    render_synthetic, CameraPath, MoverPath, Shape, SyntheticFrame, SyntheticScene,
    SyntheticSequence, Texture, TexturedShape, Mover,
};
pub use tum::{load_tum_sequence, TumSequence};

use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::grid::{ColorImage, DepthImage, GrayImage};
use crate::mask::StaticMask;
use crate::trajectory::Trajectory;

/// One timestamped RGB-D pair. Depth is in meters, 0 = invalid.
#[derive(Clone, Debug)]
pub struct Frame {
    pub index: usize,
    pub timestamp: f64,
    pub color: ColorImage,
    pub depth: DepthImage,
}

impl Frame {
    pub fn width(&self) -> usize {
        self.color.width()
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }

    pub fn gray(&self) -> GrayImage {
        crate::grid::to_gray(&self.color)
    }

    #[inline]
    pub fn depth_at(&self, x: usize, y: usize) -> Option<f64> {
        let d = *self.depth.get(x, y);
        (d > 0.0).then_some(d)
    }

    pub fn validate(&self, intr: &Intrinsics) -> Result<()> {
        let expected = (intr.width, intr.height);
        for dims in [self.color.dims(), self.depth.dims()] {
            if dims != expected {
                return Err(Error::DimensionMismatch {
                    left: expected,
                    right: dims,
                });
            }
        }
        if self.depth.as_slice().iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "frame {} has negative or non-finite depth",
                self.index
            )));
        }
        Ok(())
    }
}

/// Random-access, in-order RGB-D sequence.
pub trait Sequence {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn intrinsics(&self) -> Intrinsics;

    fn frame(&self, index: usize) -> Result<Frame>;

    /// Camera-to-world ground truth, when the source has one.
    fn ground_truth(&self) -> Option<Trajectory>;

    /// Ground-truth static mask for frame `index`, when the source has one.
    fn ground_truth_mask(&self, _index: usize) -> Option<StaticMask> {
        None
    }

    /// Frame plus its ground-truth mask, for sources where both come from one render.
    fn frame_with_mask(&self, index: usize) -> Result<(Frame, Option<StaticMask>)> {
        Ok((self.frame(index)?, self.ground_truth_mask(index)))
    }
}
