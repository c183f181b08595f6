//! Surfaces of revolution around the z-axis of `H^1`.
//!
//! A surface `z = f(r)`, `r = √(x² + y²)`, evolves by the scalar equation
//! `f_t = (4f'³ + r³f'')/(4rf'² + r³)` away from the axis and by `f_t = f''(0)`
//! on it. The same profile data give the horizontal mean curvature in closed
//! form, which makes this module the reference for the grid solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;

/// Denominators `r(4f'² + r²)` below this switch to the on-axis limit.
pub const DENOMINATOR_TOL: f64 = 1e-14;

/// `sign · (r²f''/4 + f'³/r) / (f'² + r²/4)^{3/2}`.
///
/// With `sign = +1` this is the curvature of `z = f(r)` for the normal
/// pointing towards decreasing `z`; `sign = −1` gives the outward curvature
/// of the upper cap of a closed surface `|z| = f(r)`.
pub fn radial_curvature(fp: f64, fpp: f64, r: f64, sign: f64) -> Result<f64> {
    if r == 0.0 {
        return Err(Error::Characteristic {
            horizontal_gradient_norm: fp.abs(),
        });
    }
    if !(r > 0.0) {
        return Err(Error::Domain(format!("radius must be positive, got {r}")));
    }
    if sign != 1.0 && sign != -1.0 {
        return Err(Error::InvalidParameter(format!("sign must be ±1, got {sign}")));
    }
    let num = 0.25 * r * r * fpp + fp * fp * fp / r;
    let den = (fp * fp + 0.25 * r * r).powf(1.5);
    Ok(sign * num / den)
}

/// Normal speed of the profile, `(4f'³ + r³f'')/(4rf'² + r³)`, falling back
/// to `f''` where the denominator underflows.
pub fn profile_rhs(fp: f64, fpp: f64, r: f64) -> f64 {
    let den = r * (4.0 * fp * fp + r * r);
    if r <= 0.0 || den.abs() < DENOMINATOR_TOL {
        fpp
    } else {
        (4.0 * fp * fp * fp + r * r * r * fpp) / den
    }
}

/// The closed-form surfaces of `H^1` with explicit curvature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "surface", rename_all = "snake_case")]
pub enum NamedSurface {
    /// `x² + y² + z² = R²`.
    EuclideanBall { radius: f64 },
    /// `(x² + y²)² + 16z² = R⁴`.
    KoranyiBall { radius: f64 },
    /// The sphere of radius `R` of the Carnot–Carathéodory distance, traced by
    /// the geodesic parameter `c ∈ (0, 2π/R)`.
    HeisenbergBall { radius: f64 },
}

/// Result of [`named_curvature`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NamedCurvature {
    pub point: [f64; 3],
    pub curvature: f64,
}

/// Relative residual tolerated when checking that a point lies on the surface.
pub const ON_SURFACE_TOL: f64 = 1e-8;

impl NamedSurface {
    pub fn radius(&self) -> f64 {
        match *self {
            NamedSurface::EuclideanBall { radius }
            | NamedSurface::KoranyiBall { radius }
            | NamedSurface::HeisenbergBall { radius } => radius,
        }
    }

    /// The two points where the surface meets the z-axis.
    pub fn characteristic_points(&self) -> [[f64; 3]; 2] {
        let r = self.radius();
        let z = match self {
            NamedSurface::EuclideanBall { .. } => r,
            NamedSurface::KoranyiBall { .. } => 0.25 * r * r,
            NamedSurface::HeisenbergBall { .. } => r * r / (4.0 * std::f64::consts::PI),
        };
        [[0.0, 0.0, z], [0.0, 0.0, -z]]
    }

    /// Level function vanishing on the surface (not available for the Heisenberg ball).
    pub fn level_function(&self) -> Option<String> {
        let r = self.radius();
        match self {
            NamedSurface::EuclideanBall { .. } => Some(format!("x1^2+x2^2+x3^2-{}", r * r)),
            NamedSurface::KoranyiBall { .. } => Some(format!("(x1^2+x2^2)^2+16*x3^2-{}", r.powi(4))),
            NamedSurface::HeisenbergBall { .. } => None,
        }
    }

    /// Point of the Heisenberg ball at geodesic parameter `c`, in the `y = 0` half-plane.
    pub fn heisenberg_ball_point(radius: f64, c: f64) -> Result<[f64; 3]> {
        check_geodesic_parameter(radius, c)?;
        let r = 2.0 / c * (0.5 * c * radius).sin();
        let z = (c * radius - (c * radius).sin()) / (2.0 * c * c);
        Ok([r, 0.0, z])
    }
}

fn check_geodesic_parameter(radius: f64, c: f64) -> Result<()> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    if !(c > 0.0) || c * radius >= 2.0 * std::f64::consts::PI {
        return Err(Error::InvalidParameter(format!(
            "geodesic parameter must satisfy 0 < cR < 2π, got c = {c}, R = {radius}"
        )));
    }
    Ok(())
}

/// Closed-form curvature of a named surface.
///
/// `location` is a point `(x, y, z)` for the two balls given by level sets,
/// and the one-element slice `[c]` for the Heisenberg ball.
pub fn named_curvature(surface: NamedSurface, location: &[f64]) -> Result<NamedCurvature> {
    let radius = surface.radius();
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    match surface {
        NamedSurface::EuclideanBall { .. } | NamedSurface::KoranyiBall { .. } => {
            let p = point3(location)?;
            let rho2 = p[0] * p[0] + p[1] * p[1];
            let r = rho2.sqrt();
            let (residual, scale) = match surface {
                NamedSurface::EuclideanBall { .. } => (rho2 + p[2] * p[2] - radius * radius, radius * radius),
                _ => (rho2 * rho2 + 16.0 * p[2] * p[2] - radius.powi(4), radius.powi(4)),
            };
            if residual.abs() > ON_SURFACE_TOL * scale {
                return Err(Error::OffSurface { residual });
            }
            if r == 0.0 {
                return Err(Error::Characteristic {
                    horizontal_gradient_norm: 0.0,
                });
            }
            let curvature = match surface {
                NamedSurface::EuclideanBall { .. } => {
                    2.0 * (4.0 + radius * radius) / (r * (4.0 + p[2] * p[2]).powf(1.5))
                }
                _ => 3.0 * r / (radius * radius),
            };
            Ok(NamedCurvature { point: p, curvature })
        }
        NamedSurface::HeisenbergBall { .. } => {
            let &[c] = location else {
                return Err(Error::Dimension(
                    "the Heisenberg ball is addressed by its geodesic parameter c".into(),
                ));
            };
            let point = NamedSurface::heisenberg_ball_point(radius, c)?;
            let a = 0.5 * c * radius;
            let curvature = 0.5 * (0.5 * c / a.sin()) * ((c * radius).sin() - c * radius * (c * radius).cos())
                / (a.sin() - a * a.cos());
            Ok(NamedCurvature { point, curvature })
        }
    }
}

fn point3(location: &[f64]) -> Result<[f64; 3]> {
    match location {
        &[x, y, z] => Ok([x, y, z]),
        _ => Err(Error::Dimension(format!("expected a point in R^3, got {} coordinates", location.len()))),
    }
}

/// Radial profile `f(t, ·)` on the uniform grid `r_k = k·h`, `k = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationalProfile {
    pub h: f64,
    pub f: Vec<f64>,
    pub time: f64,
}

impl RotationalProfile {
    /// Samples an expression in `r` (also accepted as `x1`/`x`) on `[0, r_max]`.
    pub fn sample(f0: &Expr, r_max: f64, h: f64) -> Result<RotationalProfile> {
        if !(h > 0.0) || !(r_max > h) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < h < r_max, got h = {h}, r_max = {r_max}"
            )));
        }
        f0.check_arity(1)?;
        let n = (r_max / h).round() as usize;
        let f = (0..=n)
            .map(|k| f0.eval_checked(&[k as f64 * h]))
            .collect::<Result<Vec<_>>>()?;
        Ok(RotationalProfile { h, f, time: 0.0 })
    }

    pub fn radii(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.f.len()).map(move |k| k as f64 * self.h)
    }

    pub fn r_max(&self) -> f64 {
        (self.f.len() - 1) as f64 * self.h
    }

    /// Linear interpolation, clamped to the grid.
    pub fn value_at(&self, r: f64) -> f64 {
        let s = (r.abs() / self.h).clamp(0.0, (self.f.len() - 1) as f64);
        let k = (s.floor() as usize).min(self.f.len() - 2);
        let w = s - k as f64;
        (1.0 - w) * self.f[k] + w * self.f[k + 1]
    }

    /// Nodal `(f', f'')` by centered differences with the mirror ghost at
    /// `r = 0` and linear extrapolation at the outer end.
    fn derivatives(&self, k: usize) -> (f64, f64) {
        let n = self.f.len() - 1;
        let h = self.h;
        let centre = self.f[k];
        let left = if k == 0 { self.f[1] } else { self.f[k - 1] };
        let right = if k == n { 2.0 * self.f[n] - self.f[n - 1] } else { self.f[k + 1] };
        ((right - left) / (2.0 * h), (right - 2.0 * centre + left) / (h * h))
    }

    pub fn rhs(&self) -> Vec<f64> {
        (0..self.f.len())
            .map(|k| {
                let (fp, fpp) = self.derivatives(k);
                if k == 0 {
                    fpp
                } else {
                    profile_rhs(fp, fpp, k as f64 * self.h)
                }
            })
            .collect()
    }

    /// Off-axis nodes where the profile equation's denominator underflows and
    /// [`profile_rhs`] falls back to `f''`.
    pub fn degenerate_nodes(&self) -> Vec<usize> {
        (1..self.f.len())
            .filter(|&k| {
                let r = k as f64 * self.h;
                let fp = self.derivatives(k).0;
                (r * (4.0 * fp * fp + r * r)).abs() < DENOMINATOR_TOL
            })
            .collect()
    }

    fn max_abs_second_derivative(&self) -> f64 {
        (0..self.f.len())
            .map(|k| self.derivatives(k).1.abs())
            .fold(0.0, f64::max)
    }
}

/// Time-stepping controls for [`evolve_profile`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProfileParams {
    /// Optional cap on the adaptive step `0.25 h² / max(1, max|f''|)`.
    pub dt_max: Option<f64>,
    /// Snapshot spacing in time; `None` keeps only the initial and final states.
    pub snap_every: Option<f64>,
}

/// Explicit Euler for the profile equation up to `t_end`, returning snapshots
/// (the initial state first, the state at exactly `t_end` last).
pub fn evolve_profile(
    initial: &RotationalProfile,
    t_end: f64,
    params: &ProfileParams,
) -> Result<Vec<RotationalProfile>> {
    if !(t_end > 0.0) {
        return Err(Error::InvalidParameter(format!("T must be positive, got {t_end}")));
    }
    if initial.f.len() < 3 {
        return Err(Error::InvalidParameter("profile needs at least three nodes".into()));
    }
    if let Some(dt) = params.dt_max {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
    }
    let mut state = initial.clone();
    let mut snaps = vec![state.clone()];
    let snap_every = params.snap_every.filter(|s| *s > 0.0);
    let mut next_snap = snap_every.map(|s| initial.time + s);
    let t_final = initial.time + t_end;
    let h = state.h;
    let mut flagged = 0usize;
    while state.time < t_final {
        flagged += state.degenerate_nodes().len();
        let mut dt = 0.25 * h * h / state.max_abs_second_derivative().max(1.0);
        if let Some(cap) = params.dt_max {
            dt = dt.min(cap);
        }
        let mut stop_at_snap = false;
        if let Some(ns) = next_snap {
            if state.time + dt >= ns && ns < t_final {
                dt = ns - state.time;
                stop_at_snap = true;
            }
        }
        if state.time + dt >= t_final {
            dt = t_final - state.time;
        }
        let rhs = state.rhs();
        for (k, (f, v)) in state.f.iter_mut().zip(&rhs).enumerate() {
            *f += dt * v;
            if !f.is_finite() {
                return Err(Error::BlowUp {
                    location: format!("r = {}", k as f64 * h),
                    time: state.time + dt,
                });
            }
        }
        state.time = if state.time + dt >= t_final { t_final } else { state.time + dt };
        if stop_at_snap && state.time < t_final {
            snaps.push(state.clone());
            next_snap = next_snap.map(|ns| ns + snap_every.unwrap_or(f64::INFINITY));
        }
    }
    if flagged > 0 {
        log::warn!("profile denominator fell below {DENOMINATOR_TOL:e} at {flagged} off-axis node updates");
    }
    snaps.push(state);
    Ok(snaps)
}
