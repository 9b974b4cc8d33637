//! RGB-D SLAM for dynamic scenes: moving-object masking with a static-background
//! depth model, mask-adaptive feature detection, robust motion-only bundle
//! adjustment, and a static 3D Gaussian map rendered by depth-sorted alpha
//! compositing.

pub mod dataset;
pub mod dynproc;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod grid;
pub mod gsmap;
pub mod imageio;
pub mod mask;
pub mod pipeline;
pub mod tracking;
pub mod trajectory;

pub use error::{Error, Result};
pub use geometry::{Intrinsics, Point3, Pose};
pub use mask::{SegmentMask, StaticMask};
