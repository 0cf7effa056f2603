//! Artifact writers. CSV files list one row per cell center in row-major
//! order (`x` fastest) and format floats with Rust's shortest round-trip
//! representation, so identical inputs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::barrier::BarrierField;
use crate::grid::Window;
use crate::regions::Region;
use crate::smoothing::SmoothBarrier;
use crate::{Error, Result};

/// Magic bytes of the binary occupancy dump.
pub const OCCUPANCY_MAGIC: &[u8; 4] = b"INCR";

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn rows(w: &Window, header: &str, mut row: impl FnMut(usize, &mut String)) -> String {
    let mut s = String::with_capacity(w.len() * 48);
    s.push_str(header);
    s.push('\n');
    for c in 0..w.len() {
        let p = w.center(c);
        let _ = write!(s, "{},{}", p.x, p.y);
        row(c, &mut s);
        s.push('\n');
    }
    s
}

/// `x,y,inside,sdist`.
pub fn region_csv(r: &Region) -> String {
    let sd = r.sdist_values();
    rows(r.window(), "x,y,inside,sdist", |c, s| {
        let _ = write!(s, ",{},{}", r.is_occupied(c) as u8, sd[c]);
    })
}

/// `x,y,B,clip`.
pub fn barrier_csv(b: &BarrierField) -> String {
    rows(b.window(), "x,y,B,clip", |c, s| {
        let _ = write!(s, ",{},{}", b.at(c), b.is_clipped(c) as u8);
    })
}

/// `x,y,B,dBdx,dBdy`.
pub fn smooth_csv(b: &SmoothBarrier) -> String {
    rows(b.window(), "x,y,B,dBdx,dBdy", |c, s| {
        let g = b.gradient_at(c);
        let _ = write!(s, ",{},{},{}", b.at(c), g.x, g.y);
    })
}

pub fn write_region_csv(path: &Path, r: &Region) -> Result<()> {
    write_text(path, &region_csv(r))
}

pub fn write_barrier_csv(path: &Path, b: &BarrierField) -> Result<()> {
    write_text(path, &barrier_csv(b))
}

pub fn write_smooth_csv(path: &Path, b: &SmoothBarrier) -> Result<()> {
    write_text(path, &smooth_csv(b))
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// Binary occupancy: magic, `lo.x lo.y hi.x hi.y` as little-endian `f64`,
/// `nx ny` as little-endian `u64`, then one byte per cell in row-major order.
pub fn occupancy_bytes(r: &Region) -> Vec<u8> {
    let w = r.window();
    let mut out = Vec::with_capacity(52 + w.len());
    out.extend_from_slice(OCCUPANCY_MAGIC);
    for v in [w.lo().x, w.lo().y, w.hi().x, w.hi().y] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for n in [w.nx(), w.ny()] {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    out.extend(r.occupancy().iter().map(|&b| b as u8));
    out
}

/// Inverse of [`occupancy_bytes`].
pub fn read_occupancy(bytes: &[u8]) -> Result<Region> {
    let bad = |m: &str| Error::param(format!("occupancy dump: {m}"));
    if bytes.len() < 52 || &bytes[..4] != OCCUPANCY_MAGIC {
        return Err(bad("missing header"));
    }
    let f = |k: usize| f64::from_le_bytes(bytes[4 + 8 * k..12 + 8 * k].try_into().expect("8 bytes"));
    let u = |k: usize| u64::from_le_bytes(bytes[36 + 8 * k..44 + 8 * k].try_into().expect("8 bytes")) as usize;
    let w = Window::new(crate::pt(f(0), f(1)), crate::pt(f(2), f(3)), [u(0), u(1)])?;
    let body = &bytes[52..];
    if body.len() != w.len() || body.iter().any(|&b| b > 1) {
        return Err(bad("body does not match the header"));
    }
    Ok(Region::from_cells(w, body.iter().map(|&b| b == 1).collect()))
}

pub fn write_occupancy(path: &Path, r: &Region) -> Result<()> {
    fs::write(path, occupancy_bytes(r))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{pt, Shape};

    #[test]
    fn occupancy_round_trip() {
        let w = Window::new(pt(-1.0, -2.0), pt(3.0, 1.0), [20, 15]).unwrap();
        let r = Shape::disk(pt(0.5, -0.5), 1.0).to_region(w);
        let back = read_occupancy(&occupancy_bytes(&r)).unwrap();
        assert_eq!(back.window(), r.window());
        assert_eq!(back.occupancy(), r.occupancy());
        assert!(read_occupancy(b"INCR").is_err());
    }

    #[test]
    fn region_csv_layout() {
        let w = Window::centered(1.0, 4).unwrap();
        let r = Shape::disk(pt(0.0, 0.0), 0.6).to_region(w);
        let text = region_csv(&r);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 17);
        assert_eq!(lines[0], "x,y,inside,sdist");
        assert!(lines[1].starts_with("-0.75,-0.75,0,"));
        assert!(lines[6].starts_with("-0.25,-0.25,1,"));
    }
}
