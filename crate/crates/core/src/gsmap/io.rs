//! Map serialization.
//!
//! Binary layout (little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `DSGM`                  |
//! | 4      | 4    | format version (u32, = 1)     |
//! | 8      | 8    | Gaussian count N (u64)        |
//! | 16     | N·112| N records of 14 × f64         |
//!
//! Each record stores the raw parameters: μ xyz, opacity logit, log-scale
//! xyz, quaternion wxyz, rgb. The text form holds one record per line in the
//! same order, preceded by a `# dsgm <version>` header.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Gaussian, GaussianMap, N_PARAMS};
use crate::error::{Error, Result};

pub const MAP_MAGIC: &[u8; 4] = b"DSGM";
pub const MAP_VERSION: u32 = 1;

fn from_params(p: &[f64; N_PARAMS]) -> Gaussian {
    let mut g = Gaussian::new(Default::default(), 1.0, 0.5, [0.0; 3]);
    g.set_params(p);
    g
}

pub fn write_map(map: &GaussianMap, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + map.len() * N_PARAMS * 8);
    buf.extend_from_slice(MAP_MAGIC);
    buf.extend_from_slice(&MAP_VERSION.to_le_bytes());
    buf.extend_from_slice(&(map.len() as u64).to_le_bytes());
    for g in &map.gaussians {
        for v in g.params() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_map(path: &Path) -> Result<GaussianMap> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let buf = fs::read(path)?;
    if buf.len() < 16 || &buf[0..4] != MAP_MAGIC {
        return Err(Error::MapFormat("bad magic".into()));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != MAP_VERSION {
        return Err(Error::MapFormat(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    let record = N_PARAMS * 8;
    if buf.len() != 16 + n * record {
        return Err(Error::MapFormat(format!("expected {n} records, file size {}", buf.len())));
    }
    let gaussians = buf[16..]
        .chunks_exact(record)
        .map(|rec| {
            let mut p = [0.0; N_PARAMS];
            for (k, c) in rec.chunks_exact(8).enumerate() {
                p[k] = f64::from_le_bytes(c.try_into().unwrap());
            }
            from_params(&p)
        })
        .collect();
    Ok(GaussianMap::from_gaussians(gaussians))
}

pub fn write_map_text(map: &GaussianMap) -> String {
    let mut out = format!("# dsgm {MAP_VERSION}\n");
    for g in &map.gaussians {
        let fields: Vec<String> = g.params().iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", fields.join(" "));
    }
    out
}

pub fn read_map_text(text: &str) -> Result<GaussianMap> {
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some(h) if h == format!("# dsgm {MAP_VERSION}") => {}
        other => return Err(Error::MapFormat(format!("bad header {other:?}"))),
    }
    let mut gaussians = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::MapFormat(format!("line {}: {e}", i + 2)))?;
        let p: [f64; N_PARAMS] = vals
            .try_into()
            .map_err(|_| Error::MapFormat(format!("line {}: expected {N_PARAMS} values", i + 2)))?;
        gaussians.push(from_params(&p));
    }
    Ok(GaussianMap::from_gaussians(gaussians))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;

    fn sample_map() -> GaussianMap {
        let mut g = Gaussian::new(Point3::new(0.1, -0.2, 1.7), 0.03, 0.42, [0.1, 0.2, 0.3]);
        g.rotation = [0.8, 0.0, 0.6, 0.0];
        g.log_scale.y = -2.5;
        GaussianMap::from_gaussians(vec![g.clone(), Gaussian::new(Point3::new(1.0, 2.0, 3.0), 0.01, 0.9, [1.0; 3])])
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.bin");
        let m = sample_map();
        write_map(&m, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 16 + 2 * 112);
        assert_eq!(read_map(&path).unwrap().gaussians, m.gaussians);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = sample_map();
        assert_eq!(read_map_text(&write_map_text(&m)).unwrap().gaussians, m.gaussians);
    }

    #[test]
    fn rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, b"NOPE00000000000000").unwrap();
        assert!(matches!(read_map(&path), Err(Error::MapFormat(_))));
        assert!(read_map_text("# dsgm 1\n1 2 3\n").is_err());
        assert!(read_map_text("nonsense").is_err());
    }
}
