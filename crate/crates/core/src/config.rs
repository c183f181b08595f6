//! Run configuration shared by every front end.
//!
//! A [`RunConfig`] is what gets written next to every set of outputs, so it
//! must reproduce a run on its own: every field has a concrete default and
//! the JSON form round-trips exactly.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::crossval::CrossvalSpec;
use crate::error::{Error, Result};
use crate::geometry::{CustomFrameSpec, Frame};
use crate::levelset::SchemeParams;
use crate::rotational::NamedSurface;
use crate::sde::EssSup;

/// A built-in frame by name (`"heisenberg(2)"`, `"grusin"`, …) or an inline
/// custom frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeometrySpec {
    Name(String),
    Custom(CustomFrameSpec),
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec::Name("heisenberg(1)".into())
    }
}

impl GeometrySpec {
    pub fn frame(&self) -> Result<Frame> {
        match self {
            GeometrySpec::Name(name) => Frame::from_name(name),
            GeometrySpec::Custom(spec) => Frame::from_spec(spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub h: f64,
}

/// Which policies enter the minimum defining the value estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicySelection {
    Feedback,
    Fan,
    #[default]
    Both,
}

impl std::str::FromStr for PolicySelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<PolicySelection> {
        match s.trim().to_ascii_lowercase().as_str() {
            "feedback" => Ok(PolicySelection::Feedback),
            "fan" => Ok(PolicySelection::Fan),
            "both" => Ok(PolicySelection::Both),
            other => Err(Error::InvalidParameter(format!("unknown policy selection `{other}`"))),
        }
    }
}

/// Sample layout for a characteristic-point scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sampler", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScanSpec {
    Sphere { radius: f64, n_polar: usize, n_azimuth: usize },
    Koranyi { radius: f64, n_polar: usize, n_azimuth: usize },
    Cylinder { radius: f64, z_lo: f64, z_hi: f64, n_z: usize, n_azimuth: usize },
    Torus { a: f64, b: f64, n_tube: usize, n_azimuth: usize },
    /// Explicit sample points.
    Points { points: Vec<Vec<f64>> },
}

impl ScanSpec {
    pub fn samples(&self) -> Vec<Vec<f64>> {
        use crate::calculus::samplers;
        match self {
            ScanSpec::Sphere { radius, n_polar, n_azimuth } => samplers::sphere(*radius, *n_polar, *n_azimuth),
            ScanSpec::Koranyi { radius, n_polar, n_azimuth } => samplers::koranyi(*radius, *n_polar, *n_azimuth),
            ScanSpec::Cylinder {
                radius,
                z_lo,
                z_hi,
                n_z,
                n_azimuth,
            } => samplers::cylinder(*radius, *z_lo, *z_hi, *n_z, *n_azimuth),
            ScanSpec::Torus { a, b, n_tube, n_azimuth } => samplers::torus(*a, *b, *n_tube, *n_azimuth),
            ScanSpec::Points { points } => points.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSpec {
    /// Initial profile as an expression in `r`.
    pub f0: String,
    pub r_max: f64,
    pub h: f64,
    pub dt_max: Option<f64>,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec {
            f0: "0.5*r^2".into(),
            r_max: 2.0,
            h: 1.0 / 128.0,
            dt_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometrySpec,
    /// Level function, initial datum or terminal cost, depending on the command.
    pub field: Option<String>,
    pub surface: Option<NamedSurface>,
    /// Evaluation point, or starting point of the paths.
    pub point: Option<Vec<f64>>,
    pub fd: bool,
    pub char_tol: Option<f64>,
    pub scan: Option<ScanSpec>,
    pub grid: Option<GridSpec>,
    pub scheme: SchemeParams,
    pub snap_every: Option<f64>,
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_end: Option<f64>,
    pub dt: f64,
    pub n_paths: usize,
    pub p: Vec<f64>,
    pub seed: u64,
    pub policy: PolicySelection,
    pub ess_sup: EssSup,
    pub dump_paths: bool,
    pub profile: ProfileSpec,
    pub crossval: CrossvalSpec,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: GeometrySpec::default(),
            field: None,
            surface: None,
            point: None,
            fd: false,
            char_tol: None,
            scan: None,
            grid: None,
            scheme: SchemeParams::default(),
            snap_every: None,
            t0: 0.0,
            t_end: None,
            dt: 1e-3,
            n_paths: 10_000,
            p: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            seed: 0,
            policy: PolicySelection::default(),
            ess_sup: EssSup::default(),
            dump_paths: false,
            profile: ProfileSpec::default(),
            crossval: CrossvalSpec::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs always serialize")
    }

    pub fn require_field(&self) -> Result<&str> {
        self.field
            .as_deref()
            .ok_or_else(|| Error::InvalidParameter("a field expression is required".into()))
    }

    pub fn require_point(&self) -> Result<&[f64]> {
        self.point
            .as_deref()
            .ok_or_else(|| Error::InvalidParameter("a point is required".into()))
    }

    pub fn require_t_end(&self) -> Result<f64> {
        self.t_end
            .ok_or_else(|| Error::InvalidParameter("a time horizon T is required".into()))
    }

    pub fn require_grid(&self) -> Result<&GridSpec> {
        self.grid
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("a grid box and spacing are required".into()))
    }
}

/// Version string recorded next to every set of outputs.
pub fn version_string() -> String {
    format!("hmcf {}", env!("CARGO_PKG_VERSION"))
}
