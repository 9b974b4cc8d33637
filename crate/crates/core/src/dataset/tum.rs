use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use super::{Frame, Sequence};
use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::imageio::{read_color_png, read_depth_png};
use crate::trajectory::Trajectory;

#[derive(Clone, Debug)]
struct Entry {
    timestamp: f64,
    rgb: PathBuf,
    depth: PathBuf,
}

/// TUM RGB-D sequence; images are decoded on access.
#[derive(Clone, Debug)]
pub struct TumSequence {
    entries: Vec<Entry>,
    intrinsics: Intrinsics,
    ground_truth: Option<Trajectory>,
}

fn parse_association(root: &Path, path: &Path) -> Result<Vec<Entry>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = || Error::MalformedAssociation {
            path: path.to_path_buf(),
            line: i + 1,
            text: line.to_string(),
        };
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(malformed());
        }
        let ts: f64 = parts[0].parse().map_err(|_| malformed())?;
        let _ts_depth: f64 = parts[2].parse().map_err(|_| malformed())?;
        entries.push(Entry {
            timestamp: ts,
            rgb: root.join(parts[1]),
            depth: root.join(parts[3]),
        });
    }
    Ok(entries)
}

/// Reads `fx fy cx cy` from `intrinsics.txt` in the sequence root, falling back
/// to the TUM default pinhole model.
fn read_intrinsics(root: &Path, width: usize, height: usize) -> Result<Intrinsics> {
    let path = root.join("intrinsics.txt");
    if path.exists() {
        let text = fs::read_to_string(&path)?;
        let vals: Vec<f64> = text
            .split_whitespace()
            .filter_map(|s| s.parse().ok())
            .collect();
        if vals.len() < 4 {
            return Err(Error::InvalidConfig(format!(
                "{}: expected `fx fy cx cy`",
                path.display()
            )));
        }
        return Intrinsics::new(vals[0], vals[1], vals[2], vals[3], width, height);
    }
    let s = width as f64 / 640.0;
    Intrinsics::new(
        525.0 * s,
        525.0 * s,
        (width as f64 - 1.0) / 2.0,
        (height as f64 - 1.0) / 2.0,
        width,
        height,
    )
}

/// Opens a TUM sequence rooted at `root`; `association` lists
/// `ts_rgb rgb_path ts_depth depth_path` lines relative to `root`.
pub fn load_tum_sequence(root: &Path, association: &Path) -> Result<TumSequence> {
    let mut entries = parse_association(root, association)?;
    if entries.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} lists no frames",
            association.display()
        )));
    }
    for e in &entries {
        for p in [&e.rgb, &e.depth] {
            if !p.exists() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
    }
    entries.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));

    let first = read_color_png(&entries[0].rgb)?;
    let (w, h) = first.dims();
    let intrinsics = read_intrinsics(root, w, h)?;

    let gt_path = root.join("groundtruth.txt");
    let ground_truth = if gt_path.exists() {
        Some(Trajectory::load(&gt_path)?)
    } else {
        warn!("no groundtruth.txt under {}", root.display());
        None
    };

    let seq = TumSequence {
        entries,
        intrinsics,
        ground_truth,
    };
    // surface size mismatches at load time for the first pair
    seq.frame(0)?;
    Ok(seq)
}

impl TumSequence {
    pub fn timestamps(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.timestamp).collect()
    }
}

impl Sequence for TumSequence {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        let e = &self.entries[index];
        let color = read_color_png(&e.rgb)?;
        let depth = read_depth_png(&e.depth)?;
        let expected = (self.intrinsics.width, self.intrinsics.height);
        for (path, dims) in [(&e.rgb, color.dims()), (&e.depth, depth.dims())] {
            if dims != expected {
                return Err(Error::ImageSizeMismatch {
                    path: path.clone(),
                    expected,
                    actual: dims,
                });
            }
        }
        Ok(Frame {
            index,
            timestamp: e.timestamp,
            color,
            depth,
        })
    }

    fn ground_truth(&self) -> Option<Trajectory> {
        self.ground_truth.clone()
    }
}
