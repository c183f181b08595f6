//! CSV and JSON writers. Floats are written with 17 significant digits so
//! every value reads back to the same double.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::config::{version_string, RunConfig};
use crate::levelset::{GridField, ZeroLevel};
use crate::rotational::RotationalProfile;

#[inline]
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a header row followed by one line per row of numbers.
pub fn write_csv<W: Write, R: AsRef<[f64]>>(
    out: W,
    header: &[&str],
    rows: impl IntoIterator<Item = R>,
) -> io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let mut first = true;
        for v in row.as_ref() {
            if !first {
                w.write_all(b",")?;
            }
            first = false;
            w.write_all(fmt_f64(*v).as_bytes())?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn coordinate_names(dim: usize) -> Vec<String> {
    (1..=dim).map(|k| format!("x{k}")).collect()
}

/// `t, x1, …, xn, u` for every node.
pub fn write_grid_csv<W: Write>(out: W, grid: &GridField) -> io::Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(coordinate_names(grid.dim));
    header.push("u".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..grid.len()).map(|idx| {
        let mut row = Vec::with_capacity(grid.dim + 2);
        row.push(grid.time);
        row.extend_from_slice(&grid.node(idx)[..grid.dim]);
        row.push(grid.values[idx]);
        row
    });
    write_csv(out, &header, rows)
}

/// `t, x1, …, xn` for every zero-crossing point.
pub fn write_zero_level_csv<W: Write>(out: W, t: f64, dim: usize, level: &ZeroLevel) -> io::Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(coordinate_names(dim));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = level.points.iter().map(|p| {
        let mut row = vec![t];
        row.extend_from_slice(p);
        row
    });
    write_csv(out, &header, rows)
}

/// `(t, r, f)` triples over all snapshots.
pub fn write_profile_csv<W: Write>(out: W, profiles: &[RotationalProfile]) -> io::Result<()> {
    let rows = profiles
        .iter()
        .flat_map(|p| p.radii().zip(&p.f).map(move |(r, f)| [p.time, r, *f]));
    write_csv(out, &["t", "r", "f"], rows)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

/// Records the resolved configuration and tool version in `dir`.
pub fn write_provenance(dir: &Path, config: &RunConfig) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    // The destination is not part of the run; replaying the file may target anywhere.
    let config = RunConfig {
        output_dir: None,
        ..config.clone()
    };
    let mut text = config.to_json();
    text.push('\n');
    fs::write(dir.join("config.json"), text)?;
    fs::write(dir.join("VERSION"), version_string() + "\n")
}
