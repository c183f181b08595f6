//! Parsers for the compact command-line forms of geometries, fields,
//! samplers and boxes.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use hmcf_core::config::{GeometrySpec, ScanSpec};
use hmcf_core::geometry::CustomFrameSpec;
use hmcf_core::{Frame, NamedSurface, ScalarField};

/// A built-in name, inline JSON, or a path to a JSON file.
pub fn parse_geometry(s: &str) -> Result<GeometrySpec> {
    let s = s.trim();
    let spec = if s.starts_with('{') {
        let custom: CustomFrameSpec = serde_json::from_str(s).context("inline frame JSON")?;
        GeometrySpec::Custom(custom)
    } else if s.ends_with(".json") || Path::new(s).is_file() {
        let text = std::fs::read_to_string(s).with_context(|| format!("cannot read frame file {s}"))?;
        let custom: CustomFrameSpec = serde_json::from_str(&text).with_context(|| format!("frame file {s}"))?;
        GeometrySpec::Custom(custom)
    } else {
        GeometrySpec::Name(s.to_string())
    };
    spec.frame()?;
    Ok(spec)
}

fn numbers(parts: &[&str]) -> Result<Vec<f64>> {
    parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| anyhow!("`{p}` is not a number")))
        .collect()
}

fn count(v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        bail!("sample counts must be positive integers, got {v}")
    }
}

pub fn parse_sampler(s: &str) -> Result<ScanSpec> {
    let mut parts = s.split(':');
    let kind = parts.next().unwrap_or_default().trim().to_ascii_lowercase();
    let rest: Vec<&str> = parts.collect();
    let v = numbers(&rest)?;
    let want = |n: usize| -> Result<()> {
        if v.len() != n {
            bail!("sampler `{kind}` takes {n} parameters, got {}", v.len());
        }
        Ok(())
    };
    Ok(match kind.as_str() {
        "sphere" => {
            want(3)?;
            ScanSpec::Sphere {
                radius: v[0],
                n_polar: count(v[1])?,
                n_azimuth: count(v[2])?,
            }
        }
        "koranyi" => {
            want(3)?;
            ScanSpec::Koranyi {
                radius: v[0],
                n_polar: count(v[1])?,
                n_azimuth: count(v[2])?,
            }
        }
        "cylinder" => {
            want(5)?;
            ScanSpec::Cylinder {
                radius: v[0],
                z_lo: v[1],
                z_hi: v[2],
                n_z: count(v[3])?,
                n_azimuth: count(v[4])?,
            }
        }
        "torus" => {
            want(4)?;
            ScanSpec::Torus {
                a: v[0],
                b: v[1],
                n_tube: count(v[2])?,
                n_azimuth: count(v[3])?,
            }
        }
        other => bail!("unknown sampler `{other}`"),
    })
}

/// `LO1,LO2[,LO3]:HI1,HI2[,HI3]`.
pub fn parse_box(s: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("box must look like LO1,LO2,LO3:HI1,HI2,HI3"))?;
    let lo = numbers(&lo.split(',').collect::<Vec<_>>())?;
    let hi = numbers(&hi.split(',').collect::<Vec<_>>())?;
    if lo.len() != hi.len() {
        bail!("box corners have {} and {} coordinates", lo.len(), hi.len());
    }
    Ok((lo, hi))
}

pub fn parse_surface(name: &str, radius: f64) -> Result<NamedSurface> {
    Ok(match name.trim().to_ascii_lowercase().replace('-', "_").as_str() {
        "euclidean_ball" => NamedSurface::EuclideanBall { radius },
        "koranyi_ball" => NamedSurface::KoranyiBall { radius },
        "heisenberg_ball" => NamedSurface::HeisenbergBall { radius },
        other => bail!("unknown surface `{other}`"),
    })
}

pub fn with_radius(surface: NamedSurface, radius: f64) -> NamedSurface {
    match surface {
        NamedSurface::EuclideanBall { .. } => NamedSurface::EuclideanBall { radius },
        NamedSurface::KoranyiBall { .. } => NamedSurface::KoranyiBall { radius },
        NamedSurface::HeisenbergBall { .. } => NamedSurface::HeisenbergBall { radius },
    }
}

/// An expression in `x1..xn`, or `euclidean_ball:R` / `koranyi_ball:R`.
pub fn parse_field(spec: &str, frame: &Frame) -> Result<ScalarField> {
    let n = frame.ambient_dim();
    if let Some((name, radius)) = spec.split_once(':') {
        let radius: f64 = radius.trim().parse().map_err(|_| anyhow!("bad radius in `{spec}`"))?;
        let surface = parse_surface(name, radius)?;
        let level = surface
            .level_function()
            .ok_or_else(|| anyhow!("`{name}` has no level function"))?;
        return Ok(ScalarField::parse(&level, n)?);
    }
    Ok(ScalarField::parse(spec, n)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samplers() {
        assert_eq!(
            parse_sampler("sphere:1:10:20").unwrap(),
            ScanSpec::Sphere {
                radius: 1.0,
                n_polar: 10,
                n_azimuth: 20
            }
        );
        assert!(parse_sampler("sphere:1:10").is_err());
        assert!(parse_sampler("cube:1:2:3").is_err());
        assert!(parse_sampler("torus:2:0.5:1.5:4").is_err());
    }

    #[test]
    fn boxes() {
        let (lo, hi) = parse_box("-1,-1,-0.5:1,1,0.5").unwrap();
        assert_eq!(lo, vec![-1.0, -1.0, -0.5]);
        assert_eq!(hi, vec![1.0, 1.0, 0.5]);
        assert!(parse_box("-1,-1:1,1,1").is_err());
    }

    #[test]
    fn named_fields() {
        let h1 = Frame::heisenberg(1).unwrap();
        let f = parse_field("koranyi_ball:1", &h1).unwrap();
        assert_eq!(f.eval(&[1.0, 0.0, 0.0]), 0.0);
        assert!(parse_field("heisenberg_ball:1", &h1).is_err());
    }
}
