//! Timestamped camera-to-world trajectories in the TUM text format
//! (`timestamp tx ty tz qx qy qz qw`, one pose per line, `#` comments).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Pose;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    /// `(timestamp, camera-to-world pose)`
    pub poses: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn push(&mut self, timestamp: f64, camera_to_world: Pose) {
        self.poses.push((timestamp, camera_to_world));
    }

    /// Builds a trajectory from world-to-camera poses.
    pub fn from_world_to_camera(items: impl IntoIterator<Item = (f64, Pose)>) -> Self {
        Self {
            poses: items.into_iter().map(|(t, p)| (t, p.inverse())).collect(),
        }
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.poses.windows(2).all(|w| w[0].0 < w[1].0)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut poses = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = || Error::MalformedTrajectory {
                path: path.to_path_buf(),
                line: i + 1,
                text: line.to_string(),
            };
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| malformed())?;
            if vals.len() != 8 {
                return Err(malformed());
            }
            let t = Vector3::new(vals[1], vals[2], vals[3]);
            // file order is qx qy qz qw
            let pose = Pose::from_quaternion([vals[7], vals[4], vals[5], vals[6]], t);
            poses.push((vals[0], pose));
        }
        Ok(Self { poses })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn to_tum_string(&self) -> String {
        let mut out = String::new();
        for (t, p) in &self.poses {
            let q = p.quaternion();
            let tr = p.translation;
            let _ = writeln!(
                out,
                "{t:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
                tr.x, tr.y, tr.z, q[1], q[2], q[3], q[0]
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tum_string())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_rejects_short_lines() {
        let err = Trajectory::parse("1.0 0 0 0 0 0 0\n", Path::new("gt.txt"));
        assert!(matches!(err, Err(Error::MalformedTrajectory { line: 1, .. })));
    }

    #[test]
    fn round_trip_within_tolerance() {
        let text = "# comment\n1305031102.175304 1.3405 0.6266 1.6575 0.6574 0.6126 -0.2949 -0.3248\n1305031102.211214 1.3303 0.6256 1.6464 0.6579 0.6161 -0.2932 -0.3189\n";
        let traj = Trajectory::parse(text, Path::new("gt.txt")).unwrap();
        assert_eq!(traj.len(), 2);
        let again = Trajectory::parse(&traj.to_tum_string(), Path::new("x")).unwrap();
        for ((ta, pa), (tb, pb)) in traj.poses.iter().zip(&again.poses) {
            assert!((ta - tb).abs() < 1e-6);
            assert!((pa.translation - pb.translation).amax() < 1e-6);
            assert!((pa.rotation - pb.rotation).amax() < 1e-6);
        }
        // Re-serialised values match the original numbers (quaternion sign may flip).
        let line: Vec<f64> = again.to_tum_string().lines().next().unwrap()
            .split_whitespace().map(|s| s.parse().unwrap()).collect();
        let orig = [1305031102.175304, 1.3405, 0.6266, 1.6575, 0.6574, 0.6126, -0.2949, -0.3248];
        let norm = (orig[4..].iter().map(|v| v * v).sum::<f64>()).sqrt();
        let sign = if line[7] * orig[7] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..4 {
            assert!((line[i] - orig[i]).abs() < 1e-6);
        }
        for i in 4..8 {
            assert!((line[i] - sign * orig[i] / norm).abs() < 1e-6);
        }
    }
}
