//! Point cloud files: `x,y,z` CSV and ASCII PLY.

use std::fmt::Write as _;
use std::path::Path;

use super::cloud::PointCloud;
use crate::error::{Error, Result};

/// One `x,y,z` line per point, 17 significant digits so values round-trip.
pub fn to_csv(pc: &PointCloud) -> String {
    let mut s = String::with_capacity(pc.len() * 72);
    for p in pc.points() {
        let _ = writeln!(s, "{:.16e},{:.16e},{:.16e}", p[0], p[1], p[2]);
    }
    s
}

pub fn parse_csv(text: &str, path: &Path) -> Result<PointCloud> {
    let mut pts = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::format(path, format!("line {}: expected 3 fields", lineno + 1)));
        }
        let mut p = [0.0; 3];
        for (k, f) in fields.iter().enumerate() {
            p[k] = f
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: bad number {f:?}", lineno + 1)))?;
        }
        pts.push(p);
    }
    PointCloud::new(pts).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_csv(pc: &PointCloud, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(pc)).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

pub fn to_ply(pc: &PointCloud) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        pc.len()
    );
    for p in pc.points() {
        let _ = writeln!(s, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2]);
    }
    s
}

/// Parses ASCII PLY. The vertex element must come first; extra vertex
/// properties are ignored and later elements are skipped.
pub fn parse_ply(text: &str, path: &Path) -> Result<PointCloud> {
    let bad = |m: &str| Error::format(path, m.to_string());
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing ply magic"));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut seen_vertex = false;
    for line in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => return Err(bad("only ascii ply is supported")),
            ["element", "vertex", n] => {
                if seen_vertex {
                    return Err(bad("duplicate vertex element"));
                }
                count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?);
                in_vertex = true;
                seen_vertex = true;
            }
            ["element", ..] => {
                if !seen_vertex {
                    return Err(bad("vertex element must come first"));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => return Err(bad("list vertex property")),
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let n = count.ok_or_else(|| bad("no vertex element"))?;
    let col = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| bad(&format!("missing property {name}")))
    };
    let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let line = lines.next().ok_or_else(|| bad("truncated vertex list"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad(&format!("bad number {t:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() < props.len() {
            return Err(bad("short vertex line"));
        }
        pts.push([vals[ix], vals[iy], vals[iz]]);
    }
    PointCloud::new(pts).map_err(|e| bad(&e.to_string()))
}

pub fn write_ply(pc: &PointCloud, path: &Path) -> Result<()> {
    std::fs::write(path, to_ply(pc)).map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text, path)
}

/// Reads `.ply` or CSV depending on the extension.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => read_ply(path),
        _ => read_csv(path),
    }
}
