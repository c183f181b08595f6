//! Runs the rotational reduction, the grid solver and the Monte Carlo
//! estimator on one problem in the first Heisenberg group and tabulates how
//! far apart they land.
//!
//! Every supported problem has the form `u₀ = z − f₀(r)` (or is a vertical
//! plane or a constant). Because vertical translations are group
//! translations, each level set of such a `u₀` moves like the zero level,
//! and the exact solution is `u(t, x) = z − f(t, r)` with `f` from the
//! profile equation. That makes the 1-D profile an oracle for the full value
//! function, not only for the interface.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::ScalarField;
use crate::geometry::Frame;
use crate::levelset::{self, GridField, SchemeParams};
use crate::rotational::{self, ProfileParams, RotationalProfile};
use crate::sde::{self, ControlPolicy, EssSup, GridSurrogate, SimParams, Surrogate};
use crate::config::PolicySelection;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Problem {
    /// `u₀ = a·x + b·y − c`.
    VerticalPlane { a: f64, b: f64, c: f64 },
    /// `u₀ = z − A·exp(−w r²)`.
    RadialCap { amplitude: f64, width: f64 },
    /// `u₀ = z − r²/2`.
    Paraboloid,
    Constant { value: f64 },
}

impl Problem {
    pub fn initial(&self) -> String {
        match *self {
            Problem::VerticalPlane { a, b, c } => format!("({a})*x1+({b})*x2-({c})"),
            Problem::RadialCap { amplitude, width } => {
                format!("x3-({amplitude})*exp(-({width})*(x1^2+x2^2))")
            }
            Problem::Paraboloid => "x3-0.5*(x1^2+x2^2)".into(),
            Problem::Constant { value } => format!("{value}"),
        }
    }

    /// Initial profile `f₀(r)` for the radial problems.
    pub fn profile(&self) -> Option<String> {
        match *self {
            Problem::RadialCap { amplitude, width } => Some(format!("({amplitude})*exp(-({width})*r^2)")),
            Problem::Paraboloid => Some("0.5*r^2".into()),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Problem::VerticalPlane { .. } => "vertical_plane",
            Problem::RadialCap { .. } => "radial_cap",
            Problem::Paraboloid => "paraboloid",
            Problem::Constant { .. } => "constant",
        }
    }
}

/// A start time and point for the stochastic estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probe {
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossvalSpec {
    pub problem: Problem,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub h: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub snap_every: f64,
    pub scheme: SchemeParams,
    /// Radial spacing of the profile solver; `None` means `h / 4`.
    pub profile_h: Option<f64>,
    /// Zero-level points farther than this from the axis are not compared;
    /// `None` means three quarters of the smaller horizontal half-width.
    pub compare_radius: Option<f64>,
    /// Empty means a default set spread over the box and over `[0, T)`.
    pub probes: Vec<Probe>,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub ess_sup: EssSup,
    pub policy: PolicySelection,
    /// Grid-vs-profile gap allowed, in multiples of `h`.
    pub interface_cells: f64,
    /// Monte Carlo gaps allowed, as a multiple of `stderr + h`.
    pub value_factor: f64,
    /// Tolerance for the problems whose exact solution is stationary.
    pub stationary_tol: f64,
    /// Relative tolerance on the initial speed of the axis point.
    pub axis_speed_rel_tol: f64,
    /// Run the Monte Carlo estimator at the probes.
    pub stochastic: bool,
}

impl Default for CrossvalSpec {
    fn default() -> Self {
        CrossvalSpec {
            problem: Problem::RadialCap {
                amplitude: 0.5,
                width: 2.0,
            },
            lo: vec![-1.0, -1.0, -0.25],
            hi: vec![1.0, 1.0, 0.75],
            h: 1.0 / 32.0,
            t_end: 0.2,
            snap_every: 0.02,
            scheme: SchemeParams::default(),
            profile_h: None,
            compare_radius: None,
            probes: Vec::new(),
            n_paths: 10_000,
            dt: 1e-4,
            seed: 0,
            ess_sup: EssSup::Max,
            policy: PolicySelection::Feedback,
            interface_cells: 2.0,
            value_factor: 3.0,
            stationary_tol: 1e-3,
            axis_speed_rel_tol: 0.1,
            stochastic: true,
        }
    }
}

impl CrossvalSpec {
    /// Probes at times `0, T/4, T/2, 3T/4` spread over the interface region.
    pub fn default_probes(&self) -> Vec<Probe> {
        let t = self.t_end;
        let z = |x: f64, y: f64| match self.problem {
            Problem::RadialCap { amplitude, width } => amplitude * (-width * (x * x + y * y)).exp() - 0.1,
            Problem::Paraboloid => 0.5 * (x * x + y * y) + 0.05,
            _ => 0.1,
        };
        [
            (0.0, 0.0, 0.0),
            (0.25, 0.3, 0.0),
            (0.5, 0.0, -0.4),
            (0.75, 0.35, 0.35),
            (0.0, 0.6, -0.2),
        ]
        .iter()
        .map(|&(s, x, y)| Probe {
            t: s * t,
            x: vec![x, y, z(x, y)],
        })
        .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.lo.len() != 3 || self.hi.len() != 3 {
            return Err(Error::Dimension("cross-validation runs on a box in R^3".into()));
        }
        let positive = [
            ("h", self.h),
            ("T", self.t_end),
            ("snap_every", self.snap_every),
            ("dt", self.dt),
            ("value_factor", self.value_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidParameter("n_paths must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discrepancy {
    pub comparison: String,
    pub t: f64,
    pub x: Vec<f64>,
    pub left: f64,
    pub right: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Discrepancy {
    fn new(comparison: &str, t: f64, x: Vec<f64>, left: f64, right: f64, tolerance: f64) -> Discrepancy {
        Discrepancy::with_gap(comparison, t, x, left, right, (left - right).abs(), tolerance)
    }

    fn with_gap(comparison: &str, t: f64, x: Vec<f64>, left: f64, right: f64, gap: f64, tolerance: f64) -> Discrepancy {
        Discrepancy {
            comparison: comparison.into(),
            t,
            x,
            left,
            right,
            gap,
            tolerance,
            pass: gap <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossvalReport {
    pub problem: String,
    pub grid_dt: f64,
    pub grid_steps: usize,
    pub s_max: f64,
    pub rows: Vec<Discrepancy>,
    pub passed: bool,
    /// Wall-clock cost of each stage; never serialized so reports stay
    /// reproducible.
    #[serde(skip)]
    pub timings: Timings,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timings {
    pub grid: Duration,
    pub profile: Duration,
    pub stochastic: Duration,
}

impl CrossvalReport {
    pub fn rows_named<'a>(&'a self, comparison: &'a str) -> impl Iterator<Item = &'a Discrepancy> + 'a {
        self.rows.iter().filter(move |r| r.comparison == comparison)
    }

    /// `comparison, t, x1, x2, x3, left, right, gap, tolerance, pass` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        use std::io::Write as _;
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "comparison,t,x1,x2,x3,left,right,gap,tolerance,pass")?;
        for r in &self.rows {
            let f = crate::output::fmt_f64;
            let x: Vec<String> = (0..3).map(|k| r.x.get(k).map_or_else(String::new, |v| f(*v))).collect();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.comparison,
                f(r.t),
                x.join(","),
                f(r.left),
                f(r.right),
                f(r.gap),
                f(r.tolerance),
                r.pass
            )?;
        }
        w.flush()
    }
}

/// Profile snapshots dense enough in time that linear interpolation between
/// them is far below grid accuracy.
struct ProfileTrack {
    snaps: Vec<RotationalProfile>,
}

impl ProfileTrack {
    fn at(&self, t: f64) -> (f64, &RotationalProfile, &RotationalProfile) {
        let k = self.snaps.partition_point(|s| s.time < t).clamp(1, self.snaps.len() - 1);
        let (a, b) = (&self.snaps[k - 1], &self.snaps[k]);
        let w = ((t - a.time) / (b.time - a.time)).clamp(0.0, 1.0);
        (w, a, b)
    }

    fn value(&self, t: f64, r: f64) -> f64 {
        let (w, a, b) = self.at(t);
        (1.0 - w) * a.value_at(r) + w * b.value_at(r)
    }

    /// Euclidean distance in the `(r, z)` half-plane from a point to the
    /// profile curve at time `t`.
    fn distance(&self, t: f64, r: f64, z: f64) -> f64 {
        let h = self.snaps[0].h;
        let vertical = (z - self.value(t, r)).abs();
        let lo = ((r - vertical) / h).floor().max(0.0) as usize;
        let last = self.snaps[0].f.len() - 1;
        let hi = (((r + vertical) / h).ceil() as usize).min(last);
        let mut best = vertical;
        for k in lo..hi {
            let (r0, r1) = (k as f64 * h, (k + 1) as f64 * h);
            let (z0, z1) = (self.value(t, r0), self.value(t, r1));
            let (dr, dz) = (r1 - r0, z1 - z0);
            let s = (((r - r0) * dr + (z - z0) * dz) / (dr * dr + dz * dz)).clamp(0.0, 1.0);
            let d = (r - r0 - s * dr).hypot(z - z0 - s * dz);
            best = best.min(d);
        }
        best
    }
}

fn radius(x: &[f64]) -> f64 {
    x[0].hypot(x[1])
}

/// Runs the three computations and compares them.
pub fn crossval(spec: &CrossvalSpec) -> Result<CrossvalReport> {
    spec.validate()?;
    let frame = Frame::heisenberg(1)?;
    let u0 = ScalarField::parse(&spec.problem.initial(), 3).map_err(|e| e.context("initial datum"))?;
    let grid = GridField::from_field(&spec.lo, &spec.hi, spec.h, &u0)?;
    let h = grid.h_min();
    log::info!("cross-validating {} on {} nodes", spec.problem.label(), grid.len());
    let mut timings = Timings::default();
    let clock = Instant::now();
    let evolution = Arc::new(
        levelset::evolve(&frame, &grid, spec.t_end, &spec.scheme, Some(spec.snap_every))
            .map_err(|e| e.context("grid solver"))?,
    );

    timings.grid = clock.elapsed();
    let clock = Instant::now();
    let track = match spec.problem.profile() {
        Some(src) => {
            let f0 = Expr::parse_with_aliases(&src, &[("r", 0)])?;
            let corner = spec.lo[0].abs().max(spec.hi[0].abs()).hypot(spec.lo[1].abs().max(spec.hi[1].abs()));
            let initial = RotationalProfile::sample(&f0, corner + 4.0 * h, spec.profile_h.unwrap_or(h / 4.0))?;
            let params = ProfileParams {
                dt_max: None,
                snap_every: Some(spec.snap_every / 10.0),
            };
            let snaps = rotational::evolve_profile(&initial, spec.t_end, &params)
                .map_err(|e| e.context("profile solver"))?;
            Some(ProfileTrack { snaps })
        }
        None => None,
    };

    let mut rows = Vec::new();
    let interface_tol = spec.interface_cells * h;
    let compare_radius = spec.compare_radius.unwrap_or_else(|| {
        0.75 * (0..2).map(|a| 0.5 * (spec.hi[a] - spec.lo[a])).fold(f64::INFINITY, f64::min)
    });
    let axis = [0.5 * (spec.lo[0] + spec.hi[0]), 0.5 * (spec.lo[1] + spec.hi[1])];

    for snap in &evolution.snapshots {
        let t = snap.time;
        match (&spec.problem, &track) {
            (Problem::Constant { value }, _) => {
                let gap = snap.values.iter().map(|v| (v - value).abs()).fold(0.0, f64::max);
                rows.push(Discrepancy::with_gap("grid_vs_exact", t, Vec::new(), *value, *value, gap, 1e-12));
            }
            (Problem::VerticalPlane { a, b, c }, _) => {
                let level = levelset::zero_level_extract(snap);
                let norm = a.hypot(*b);
                let gap = level
                    .points
                    .iter()
                    .map(|p| (a * p[0] + b * p[1] - c).abs() / norm)
                    .fold(0.0, f64::max);
                rows.push(Discrepancy::with_gap(
                    "interface_grid_vs_plane",
                    t,
                    Vec::new(),
                    0.0,
                    0.0,
                    gap,
                    spec.stationary_tol,
                ));
                let change = snap.max_interior_diff(&evolution.snapshots[0]);
                rows.push(Discrepancy::with_gap(
                    "grid_stationarity",
                    t,
                    Vec::new(),
                    0.0,
                    0.0,
                    change,
                    spec.stationary_tol,
                ));
            }
            (_, Some(track)) => {
                let level = levelset::zero_level_extract(snap);
                let mut worst = (0.0, Vec::new());
                for p in level.points.iter().filter(|p| radius(p) <= compare_radius) {
                    let d = track.distance(t, radius(p), p[2]);
                    if d >= worst.0 {
                        worst = (d, p.clone());
                    }
                }
                if level.empty {
                    return Err(Error::Empty(format!("grid zero level at t = {t}")));
                }
                rows.push(Discrepancy::with_gap(
                    "interface_grid_vs_profile",
                    t,
                    worst.1,
                    0.0,
                    0.0,
                    worst.0,
                    interface_tol,
                ));
            }
            _ => {}
        }
    }

    if let Some(track) = &track {
        // Speed of the axis point over a few grid steps against f''(0).
        let z_axis = -u0.eval(&[axis[0], axis[1], 0.0]);
        let x_axis = vec![axis[0], axis[1], z_axis];
        let tau = 10.0 * evolution.dt;
        let short = levelset::evolve(&frame, &grid, tau, &spec.scheme, None)?;
        let grid_speed = (grid.interpolate(&x_axis) - short.last().interpolate(&x_axis)) / tau;
        let expected = track.snaps[0].rhs()[0];
        rows.push(Discrepancy::new(
            "axis_speed_grid_vs_profile",
            0.0,
            x_axis,
            grid_speed,
            expected,
            spec.axis_speed_rel_tol * expected.abs(),
        ));
    }

    timings.profile = clock.elapsed();
    let clock = Instant::now();
    let probes = if !spec.stochastic {
        Vec::new()
    } else if spec.probes.is_empty() {
        spec.default_probes()
    } else {
        spec.probes.clone()
    };
    let surrogate: Arc<dyn Surrogate> = Arc::new(GridSurrogate::new(evolution.clone(), spec.t_end));
    let mut family = Vec::new();
    if matches!(spec.policy, PolicySelection::Feedback | PolicySelection::Both) {
        family.push(ControlPolicy::Feedback(surrogate));
    }
    if matches!(spec.policy, PolicySelection::Fan | PolicySelection::Both) {
        family.extend(sde::fan_policies(&frame));
    }
    let sim = SimParams {
        n_paths: spec.n_paths,
        dt: spec.dt,
        seed: spec.seed,
    };
    for probe in &probes {
        if probe.x.len() != 3 || !(probe.t >= 0.0 && probe.t < spec.t_end) {
            return Err(Error::InvalidParameter(format!(
                "probe {:?} must be a point of R^3 with 0 <= t < T",
                probe
            )));
        }
        let tau = spec.t_end - probe.t;
        let grid_value = evolution.value_at(tau, &probe.x);
        let est = sde::estimate_v(&frame, &probe.x, probe.t, spec.t_end, &u0, &family, &sim, spec.ess_sup)
            .map_err(|e| e.context(format!("estimator at {:?}", probe)))?;
        let exact = match (&spec.problem, &track) {
            (Problem::Constant { value }, _) => Some(*value),
            (Problem::VerticalPlane { .. }, _) => Some(u0.eval(&probe.x)),
            (_, Some(track)) => Some(probe.x[2] - track.value(tau, radius(&probe.x))),
            _ => None,
        };
        let stationary = matches!(spec.problem, Problem::Constant { .. } | Problem::VerticalPlane { .. });
        let mc_tol = if stationary {
            spec.stationary_tol
        } else {
            spec.value_factor * (est.stderr + h)
        };
        rows.push(Discrepancy::new("value_mc_vs_grid", probe.t, probe.x.clone(), est.value, grid_value, mc_tol));
        if let Some(exact) = exact {
            let grid_tol = if stationary { spec.stationary_tol } else { interface_tol };
            rows.push(Discrepancy::new("value_grid_vs_exact", probe.t, probe.x.clone(), grid_value, exact, grid_tol));
            rows.push(Discrepancy::new("value_mc_vs_exact", probe.t, probe.x.clone(), est.value, exact, mc_tol));
        }
    }

    timings.stochastic = clock.elapsed();
    let passed = rows.iter().all(|r| r.pass);
    Ok(CrossvalReport {
        problem: spec.problem.label().into(),
        grid_dt: evolution.dt,
        grid_steps: evolution.steps,
        s_max: evolution.s_max,
        rows,
        passed,
        timings,
    })
}
