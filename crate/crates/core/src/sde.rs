//! Controlled horizontal Brownian motion and Monte Carlo estimates of the
//! value function.
//!
//! Paths solve `dξ = √2 σᵀ(ξ) ν dB + Σ_ij (ν²)_ij ∇_{X_i}X_j(ξ) dt` by
//! Euler–Maruyama, with `ν = I − a⊗a` a projection off a unit horizontal
//! direction `a`. Every path draws from its own ChaCha stream selected by the
//! path index, so results do not depend on how paths are scheduled.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::Frame;
use crate::levelset::Evolution;
use crate::linalg::{self, Matrix, Vector, ZERO_MAT, ZERO_VEC};

/// Relative tolerance for grouping eigenvalues into the top eigenspace.
const EIGEN_TIE_TOL: f64 = 1e-10;

/// `ν = I − a⊗a` for a unit horizontal direction `a`, or the identity for
/// free horizontal Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlMatrix {
    m: usize,
    direction: Option<Vector>,
}

impl ControlMatrix {
    /// Normalizes `a`; zero or non-finite directions are rejected.
    pub fn from_direction(a: &[f64]) -> Result<ControlMatrix> {
        let m = a.len();
        if m == 0 || m > linalg::MAX_DIM {
            return Err(Error::Dimension(format!("control direction of length {m}")));
        }
        let norm = linalg::norm(a, m);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidParameter(format!("control direction {a:?} cannot be normalized")));
        }
        let mut dir = ZERO_VEC;
        for (d, v) in dir.iter_mut().zip(a) {
            *d = v / norm;
        }
        Ok(ControlMatrix {
            m,
            direction: Some(dir),
        })
    }

    pub fn unconstrained(m: usize) -> ControlMatrix {
        ControlMatrix { m, direction: None }
    }

    pub fn rank(&self) -> usize {
        self.m
    }

    pub fn direction(&self) -> Option<&[f64]> {
        self.direction.as_ref().map(|d| &d[..self.m])
    }

    pub fn is_unconstrained(&self) -> bool {
        self.direction.is_none()
    }

    /// `ν` as an m×m block.
    pub fn matrix(&self) -> Matrix {
        let mut nu = linalg::identity(self.m);
        if let Some(a) = &self.direction {
            for i in 0..self.m {
                for j in 0..self.m {
                    nu[i][j] -= a[i] * a[j];
                }
            }
        }
        nu
    }

    /// `ν²`, which equals `ν` for every control of this form.
    pub fn squared(&self) -> Matrix {
        self.matrix()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let nu = self.matrix();
        (0..self.m).map(|i| nu[i][..self.m].to_vec()).collect()
    }

    /// Checks `ν = νᵀ`, `ν ⪰ 0`, `I − ν² ⪰ 0` and `Tr(I − ν²) = 1`.
    pub fn is_admissible(&self, tol: f64) -> bool {
        let m = self.m;
        let nu = self.matrix();
        let nu2 = linalg::matmul(&nu, &nu, m, m, m);
        let mut rest = linalg::identity(m);
        for i in 0..m {
            for j in 0..m {
                if (nu[i][j] - nu[j][i]).abs() > tol {
                    return false;
                }
                rest[i][j] -= nu2[i][j];
            }
        }
        linalg::sym_eigen(&nu, m).min() >= -tol
            && linalg::sym_eigen(&rest, m).min() >= -tol
            && (linalg::trace(&rest, m) - 1.0).abs() <= tol
    }
}

/// Anything that can supply `DV(t, x)` and `D²V(t, x)` to the feedback control.
/// The Hessian is only requested at characteristic points.
pub trait Surrogate: Send + Sync {
    fn dim(&self) -> usize;
    fn gradient(&self, t: f64, x: &[f64]) -> Option<Vector>;
    fn hessian(&self, t: f64, x: &[f64]) -> Option<Matrix>;
    /// Threshold below which `|𝒳V|` counts as zero.
    fn char_tol(&self) -> f64;
}

impl Surrogate for ScalarField {
    fn dim(&self) -> usize {
        ScalarField::dim(self)
    }

    fn gradient(&self, _t: f64, x: &[f64]) -> Option<Vector> {
        ScalarField::derivatives(self, x).ok().map(|(_, g, _)| g)
    }

    fn hessian(&self, _t: f64, x: &[f64]) -> Option<Matrix> {
        ScalarField::derivatives(self, x).ok().map(|(_, _, h)| h)
    }

    fn char_tol(&self) -> f64 {
        self.default_char_tol()
    }
}

/// `V(t, x) = u(T − t, x)` from a grid evolution of the level-set equation
/// started at the terminal cost.
#[derive(Debug, Clone)]
pub struct GridSurrogate {
    evolution: Arc<Evolution>,
    horizon: f64,
    step: f64,
}

impl GridSurrogate {
    pub fn new(evolution: Arc<Evolution>, horizon: f64) -> GridSurrogate {
        let step = evolution.snapshots[0].h_min();
        GridSurrogate {
            evolution,
            horizon,
            step,
        }
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.evolution.value_at(self.horizon - t, x)
    }

    fn probe(&self, t: f64, x: &[f64]) -> impl FnMut(&[(usize, f64)]) -> f64 + '_ {
        let n = self.dim();
        let tau = self.horizon - t;
        // Outside the box, derivatives are those at the nearest point that
        // still has a full stencil inside it.
        let grid = &self.evolution.snapshots[0];
        let mut p = ZERO_VEC;
        for a in 0..n {
            let margin = self.step.min(0.5 * (grid.hi[a] - grid.lo[a]));
            p[a] = x[a].clamp(grid.lo[a] + margin, grid.hi[a] - margin);
        }
        move |shifts: &[(usize, f64)]| {
            for &(k, s) in shifts {
                p[k] += s;
            }
            let v = self.evolution.value_at(tau, &p[..n]);
            for &(k, s) in shifts {
                p[k] -= s;
            }
            v
        }
    }
}

impl Surrogate for GridSurrogate {
    fn dim(&self) -> usize {
        self.evolution.snapshots[0].dim
    }

    fn gradient(&self, t: f64, x: &[f64]) -> Option<Vector> {
        let h = self.step;
        let mut at = self.probe(t, x);
        let mut g = ZERO_VEC;
        for k in 0..self.dim() {
            g[k] = (at(&[(k, h)]) - at(&[(k, -h)])) / (2.0 * h);
        }
        Some(g)
    }

    fn hessian(&self, t: f64, x: &[f64]) -> Option<Matrix> {
        let n = self.dim();
        let h = self.step;
        let mut at = self.probe(t, x);
        let centre = at(&[]);
        let mut hess = ZERO_MAT;
        for i in 0..n {
            hess[i][i] = (at(&[(i, h)]) - 2.0 * centre + at(&[(i, -h)])) / (h * h);
            for j in 0..i {
                let v = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)])
                    + at(&[(i, -h), (j, -h)]))
                    / (4.0 * h * h);
                hess[i][j] = v;
                hess[j][i] = v;
            }
        }
        Some(hess)
    }

    fn char_tol(&self) -> f64 {
        self.step
    }
}

pub type CustomPolicyFn = dyn Fn(f64, &[f64]) -> ControlMatrix + Send + Sync;

#[derive(Clone)]
pub enum ControlPolicy {
    Constant(ControlMatrix),
    /// The projection off the horizontal normal of the surrogate's level sets.
    Feedback(Arc<dyn Surrogate>),
    Custom(Arc<CustomPolicyFn>),
}

impl fmt::Debug for ControlPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlPolicy::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            ControlPolicy::Feedback(_) => f.write_str("Feedback"),
            ControlPolicy::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl ControlPolicy {
    pub fn control(&self, frame: &Frame, t: f64, x: &[f64]) -> ControlMatrix {
        match self {
            ControlPolicy::Constant(c) => *c,
            ControlPolicy::Feedback(s) => feedback_optimal_control(frame, s.as_ref(), t, x, s.char_tol()),
            ControlPolicy::Custom(f) => f(t, x),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ControlPolicy::Constant(c) => match c.direction() {
                Some(a) => format!(
                    "constant({})",
                    a.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
                ),
                None => "unconstrained".into(),
            },
            ControlPolicy::Feedback(_) => "feedback".into(),
            ControlPolicy::Custom(_) => "custom".into(),
        }
    }
}

/// `Σ_ij (ν²)_ij ∇_{X_i}X_j(x)`.
pub fn drift_vector(frame: &Frame, nu: &ControlMatrix, x: &[f64]) -> Vec<f64> {
    let mut out = ZERO_VEC;
    drift_into(frame, nu, x, &mut out);
    out[..frame.ambient_dim()].to_vec()
}

fn drift_into(frame: &Frame, nu: &ControlMatrix, x: &[f64], out: &mut Vector) {
    let n = frame.ambient_dim();
    let m = frame.horizontal_rank();
    let nu2 = nu.squared();
    let mut v = ZERO_VEC;
    out[..n].fill(0.0);
    for i in 0..m {
        for j in 0..m {
            if nu2[i][j] == 0.0 {
                continue;
            }
            frame.nabla_into(i, j, x, &mut v);
            for k in 0..n {
                out[k] += nu2[i][j] * v[k];
            }
        }
    }
}

#[inline]
fn step_into(frame: &Frame, x: &mut Vector, nu: &ControlMatrix, dt: f64, dw: &Vector) {
    let n = frame.ambient_dim();
    let m = frame.horizontal_rank();
    let mut sigma = ZERO_MAT;
    frame.sigma_into(&x[..n], &mut sigma);
    let nu_m = nu.matrix();
    let mut w = ZERO_VEC;
    for i in 0..m {
        w[i] = std::f64::consts::SQRT_2 * linalg::dot(&nu_m[i], dw, m);
    }
    let mut drift = ZERO_VEC;
    drift_into(frame, nu, &x[..n], &mut drift);
    for k in 0..n {
        let mut noise = 0.0;
        for i in 0..m {
            noise += sigma[i][k] * w[i];
        }
        x[k] += noise + drift[k] * dt;
    }
}

/// One Euler–Maruyama step `x + √2 σᵀ(x) ν dW + drift(x) dt`.
pub fn step_ito(frame: &Frame, x: &[f64], nu: &ControlMatrix, dt: f64, dw: &[f64]) -> Result<Vec<f64>> {
    let n = frame.ambient_dim();
    let m = frame.horizontal_rank();
    if x.len() != n || dw.len() != m || nu.rank() != m {
        return Err(Error::Dimension(format!(
            "step needs a point in R^{n}, an increment in R^{m} and an m×m control"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let mut state = ZERO_VEC;
    state[..n].copy_from_slice(x);
    let mut w = ZERO_VEC;
    w[..m].copy_from_slice(dw);
    step_into(frame, &mut state, nu, dt, &w);
    if state[..n].iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("Euler–Maruyama step from {x:?}")));
    }
    Ok(state[..n].to_vec())
}

/// Simulation controls shared by every path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Endpoints (and optionally whole trajectories) of a path ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub states: Vec<Vec<f64>>,
    pub t: f64,
    pub dt: f64,
    pub seed: u64,
    /// Per path, the states at every grid time `t0, t0 + dt, …, T`.
    pub trajectories: Option<Vec<Vec<Vec<f64>>>>,
}

fn time_grid(t0: f64, t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(t_end > t0) {
        return Err(Error::InvalidParameter(format!("need t0 < T, got t0 = {t0}, T = {t_end}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let steps = ((t_end - t0) / dt - 1e-9).ceil().max(1.0) as usize;
    let mut times: Vec<f64> = (0..steps).map(|k| t0 + k as f64 * dt).collect();
    times.push(t_end);
    Ok(times)
}

#[allow(clippy::too_many_arguments)]
fn simulate_path(
    frame: &Frame,
    x0: &[f64],
    times: &[f64],
    policy: &ControlPolicy,
    seed: u64,
    index: usize,
    record: bool,
) -> Result<(Vec<f64>, Option<Trajectory>)> {
    let n = frame.ambient_dim();
    let m = frame.horizontal_rank();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut x = ZERO_VEC;
    x[..n].copy_from_slice(x0);
    let mut path = record.then(|| {
        let mut p = Vec::with_capacity(times.len());
        p.push(x0.to_vec());
        p
    });
    let mut dw = ZERO_VEC;
    for w in times.windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        let sd = h.sqrt();
        for v in dw.iter_mut().take(m) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = sd * z;
        }
        let nu = policy.control(frame, t, &x[..n]);
        step_into(frame, &mut x, &nu, h, &dw);
        if x[..n].iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                location: format!("path {index}"),
                time: w[1],
            });
        }
        if let Some(p) = path.as_mut() {
            p.push(x[..n].to_vec());
        }
    }
    Ok((x[..n].to_vec(), path))
}

type Trajectory = Vec<Vec<f64>>;

/// Advances `n_paths` independent paths from `(t0, x0)` to `T`; the last step
/// is shortened to land on `T`.
pub fn simulate(
    frame: &Frame,
    x0: &[f64],
    t0: f64,
    t_end: f64,
    policy: &ControlPolicy,
    params: &SimParams,
    record: bool,
) -> Result<PathEnsemble> {
    if x0.len() != frame.ambient_dim() {
        return Err(Error::Dimension(format!(
            "start point has {} coordinates, frame lives in R^{}",
            x0.len(),
            frame.ambient_dim()
        )));
    }
    if params.n_paths == 0 {
        return Err(Error::InvalidParameter("n_paths must be positive".into()));
    }
    let times = time_grid(t0, t_end, params.dt)?;
    let results: Vec<_> = (0..params.n_paths)
        .into_par_iter()
        .map(|i| simulate_path(frame, x0, &times, policy, params.seed, i, record))
        .collect::<Result<_>>()?;
    let mut states = Vec::with_capacity(results.len());
    let mut trajectories = record.then(|| Vec::with_capacity(results.len()));
    for (s, p) in results {
        states.push(s);
        if let (Some(all), Some(p)) = (trajectories.as_mut(), p) {
            all.push(p);
        }
    }
    Ok(PathEnsemble {
        n_paths: params.n_paths,
        states,
        t: t_end,
        dt: params.dt,
        seed: params.seed,
        trajectories,
    })
}

/// Terminal costs `g(ξ_T)` in path order.
pub fn terminal_values(ensemble: &PathEnsemble, g: &ScalarField) -> Result<Vec<f64>> {
    ensemble
        .states
        .iter()
        .map(|x| {
            let v = g.eval(x);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite(format!("terminal cost at {x:?}")))
            }
        })
        .collect()
}

/// A point estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `(mean g^p)^{1/p}` over a fixed sample, evaluated after shifting the
/// sample to `[1, ∞)` and undone afterwards. Exponentials are taken relative
/// to the sample maximum, so large `p` cannot overflow.
pub fn lp_mean(values: &[f64], p: f64) -> Result<Estimate> {
    if values.is_empty() {
        return Err(Error::Empty("no samples".into()));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("p must be a finite number >= 1, got {p}")));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = values.len() as f64;
    if lo == hi {
        return Ok(Estimate { value: lo, stderr: 0.0 });
    }
    if p == 1.0 {
        let (mean, sd) = mean_sd(values);
        return Ok(Estimate {
            value: mean,
            stderr: sd / n.sqrt(),
        });
    }
    let shift = if lo < 1.0 { 1.0 - lo } else { 0.0 };
    let top = (hi + shift).ln();
    let weights: Vec<f64> = values.iter().map(|v| (p * ((v + shift).ln() - top)).exp()).collect();
    let (w_mean, w_sd) = mean_sd(&weights);
    let scaled = (hi + shift) * w_mean.powf(1.0 / p);
    let value = (scaled - shift).clamp(lo, hi);
    let stderr = scaled * w_sd / (p * w_mean * n.sqrt());
    Ok(Estimate { value, stderr })
}

/// `V_p` for one policy.
#[allow(clippy::too_many_arguments)]
pub fn estimate_vp(
    frame: &Frame,
    x0: &[f64],
    t0: f64,
    t_end: f64,
    g: &ScalarField,
    p: f64,
    policy: &ControlPolicy,
    params: &SimParams,
) -> Result<Estimate> {
    let ensemble = simulate(frame, x0, t0, t_end, policy, params, false)?;
    lp_mean(&terminal_values(&ensemble, g)?, p)
}

/// Statistic standing in for the essential supremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(try_from = "String", into = "String")]
pub enum EssSup {
    #[default]
    Max,
    Quantile(f64),
}

impl std::str::FromStr for EssSup {
    type Err = Error;

    fn from_str(s: &str) -> Result<EssSup> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("max") {
            return Ok(EssSup::Max);
        }
        if let Some(q) = s.strip_prefix("quantile:") {
            let q: f64 = q
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad quantile `{q}`")))?;
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::InvalidParameter(format!("quantile must lie in [0, 1], got {q}")));
            }
            return Ok(EssSup::Quantile(q));
        }
        Err(Error::InvalidParameter(format!("unknown ess-sup mode `{s}`")))
    }
}

impl TryFrom<String> for EssSup {
    type Error = Error;

    fn try_from(s: String) -> Result<EssSup> {
        s.parse()
    }
}

impl From<EssSup> for String {
    fn from(mode: EssSup) -> String {
        mode.to_string()
    }
}

impl fmt::Display for EssSup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EssSup::Max => f.write_str("max"),
            EssSup::Quantile(q) => write!(f, "quantile:{q}"),
        }
    }
}

impl EssSup {
    /// Sample max, or the linearly interpolated order statistic at `q`.
    pub fn apply(&self, values: &[f64]) -> f64 {
        match *self {
            EssSup::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            EssSup::Quantile(q) => {
                let mut sorted = values.to_vec();
                sorted.sort_by(f64::total_cmp);
                let pos = q * (sorted.len() - 1) as f64;
                let k = pos.floor() as usize;
                let w = pos - k as f64;
                if k + 1 < sorted.len() {
                    (1.0 - w) * sorted[k] + w * sorted[k + 1]
                } else {
                    sorted[k]
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEstimate {
    pub policy: String,
    pub value: f64,
    /// `sd(g(ξ_T)) / √N`.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueEstimate {
    pub value: f64,
    pub stderr: f64,
    pub best_policy: usize,
    pub per_policy: Vec<PolicyEstimate>,
}

/// Terminal-cost samples for each policy of a family, with common random numbers.
pub fn family_samples(
    frame: &Frame,
    x0: &[f64],
    t0: f64,
    t_end: f64,
    g: &ScalarField,
    family: &[ControlPolicy],
    params: &SimParams,
) -> Result<Vec<Vec<f64>>> {
    if family.is_empty() {
        return Err(Error::Empty("policy family".into()));
    }
    family
        .iter()
        .map(|policy| {
            let ens = simulate(frame, x0, t0, t_end, policy, params, false)?;
            terminal_values(&ens, g)
        })
        .collect()
}

/// `min` over the family of the ess-sup statistic of `g(ξ_T)`.
pub fn value_from_samples(family: &[ControlPolicy], samples: &[Vec<f64>], mode: EssSup) -> Result<ValueEstimate> {
    if family.is_empty() || samples.is_empty() {
        return Err(Error::Empty("policy family".into()));
    }
    let per_policy: Vec<PolicyEstimate> = family
        .iter()
        .zip(samples)
        .map(|(policy, values)| {
            let (_, sd) = mean_sd(values);
            PolicyEstimate {
                policy: policy.label(),
                value: mode.apply(values),
                stderr: sd / (values.len() as f64).sqrt(),
            }
        })
        .collect();
    let (best_policy, best) = per_policy
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value))
        .expect("non-empty family");
    Ok(ValueEstimate {
        value: best.value,
        stderr: best.stderr,
        best_policy,
        per_policy,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_v(
    frame: &Frame,
    x0: &[f64],
    t0: f64,
    t_end: f64,
    g: &ScalarField,
    family: &[ControlPolicy],
    params: &SimParams,
    mode: EssSup,
) -> Result<ValueEstimate> {
    let samples = family_samples(frame, x0, t0, t_end, g, family, params)?;
    value_from_samples(family, &samples, mode)
}

/// Unit vector of the top eigenspace of `S`: unique up to sign when the
/// eigenvalue is simple, otherwise the lexicographically smallest unit vector
/// of the eigenspace whose first nonzero entry is positive.
pub fn top_eigenvector(s: &Matrix, m: usize) -> Vector {
    let e = linalg::sym_eigen(s, m);
    let top = e.max();
    let tol = EIGEN_TIE_TOL * top.abs().max(1.0);
    let mut basis: Vec<Vector> = (0..m)
        .filter(|&k| (e.values[k] - top).abs() <= tol)
        .map(|k| e.vectors[k])
        .collect();
    // Each pass forces one more leading coordinate to zero while the space
    // has room for it.
    let mut coord = 0;
    while basis.len() > 1 && coord < m {
        let (pivot, size) = basis
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v[coord].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty basis");
        if size > 1e-12 {
            let p = basis.remove(pivot);
            for v in basis.iter_mut() {
                let f = v[coord] / p[coord];
                for k in 0..m {
                    v[k] -= f * p[k];
                }
                v[coord] = 0.0;
            }
            orthonormalize(&mut basis, m);
        }
        coord += 1;
    }
    let mut a = basis[0];
    for v in a.iter_mut().take(m) {
        if v.abs() < 1e-14 {
            *v = 0.0;
        }
    }
    let norm = linalg::norm(&a, m);
    for v in a.iter_mut().take(m) {
        *v /= norm;
    }
    if let Some(first) = a[..m].iter().find(|v| v.abs() > 1e-12) {
        if *first < 0.0 {
            for v in a.iter_mut().take(m) {
                *v = -*v;
            }
        }
    }
    a
}

fn orthonormalize(basis: &mut Vec<Vector>, m: usize) {
    let mut out: Vec<Vector> = Vec::with_capacity(basis.len());
    for v in basis.iter() {
        let mut w = *v;
        for u in &out {
            let d = linalg::dot(&w, u, m);
            for k in 0..m {
                w[k] -= d * u[k];
            }
        }
        let n = linalg::norm(&w, m);
        if n > 1e-12 {
            for x in w.iter_mut().take(m) {
                *x /= n;
            }
            out.push(w);
        }
    }
    *basis = out;
}

/// `ν = I − a⊗a` with `a = 𝒳V/|𝒳V|`, or the top eigenvector of the
/// horizontal Hessian of `V` where `|𝒳V| ≤ char_tol`.
pub fn feedback_optimal_control(
    frame: &Frame,
    surrogate: &dyn Surrogate,
    t: f64,
    x: &[f64],
    char_tol: f64,
) -> ControlMatrix {
    let m = frame.horizontal_rank();
    let fallback = || {
        let mut e = ZERO_VEC;
        e[0] = 1.0;
        ControlMatrix {
            m,
            direction: Some(e),
        }
    };
    let Some(du) = surrogate.gradient(t, x) else {
        return fallback();
    };
    let n = frame.ambient_dim();
    let mut sigma = ZERO_MAT;
    frame.sigma_into(x, &mut sigma);
    let mut xu = ZERO_VEC;
    for i in 0..m {
        xu[i] = linalg::dot(&sigma[i], &du, n);
    }
    let g = linalg::norm(&xu, m);
    let direction = if g > char_tol {
        xu.iter_mut().take(m).for_each(|v| *v /= g);
        xu
    } else {
        let Some(d2u) = surrogate.hessian(t, x) else {
            return fallback();
        };
        let jet = crate::calculus::HorizontalJet::from_derivatives(frame, x, &du, &d2u);
        top_eigenvector(&jet.horiz_hess, m)
    };
    if direction[..m].iter().all(|v| v.is_finite()) {
        ControlMatrix {
            m,
            direction: Some(direction),
        }
    } else {
        fallback()
    }
}

/// `sup_ν [−Tr(S̃ ν²)] = −Tr S̃ + λ_max(S̃)` with `S̃ = σSσᵀ + A(x, d)`.
pub fn control_hamiltonian(frame: &Frame, x: &[f64], d: &[f64], s: &[Vec<f64>]) -> Result<f64> {
    let n = frame.ambient_dim();
    if x.len() != n || d.len() != n || s.len() != n || s.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension(format!("Hamiltonian inputs must live in R^{n}")));
    }
    let mut du = ZERO_VEC;
    du[..n].copy_from_slice(d);
    let mut hess = ZERO_MAT;
    for i in 0..n {
        hess[i][..n].copy_from_slice(&s[i]);
    }
    linalg::symmetrize(&mut hess, n);
    let jet = crate::calculus::HorizontalJet::from_derivatives(frame, x, &du, &hess);
    let m = jet.m;
    Ok(-jet.laplacian() + linalg::sym_eigen(&jet.horiz_hess, m).max())
}

/// `count` deterministic, well-spread unit directions in `R^m`, one per
/// antipodal pair (`a` and `−a` give the same control).
pub fn direction_fan(m: usize, count: usize) -> Vec<Vec<f64>> {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    match m {
        0 => Vec::new(),
        1 => vec![vec![1.0]],
        2 => (0..count)
            .map(|k| {
                let theta = std::f64::consts::PI * (k as f64 + 0.5) / count as f64;
                vec![theta.cos(), theta.sin()]
            })
            .collect(),
        3 => (0..count)
            .map(|k| {
                // Fibonacci lattice on the upper hemisphere.
                let z = 1.0 - (k as f64 + 0.5) / count as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = 2.0 * std::f64::consts::PI * k as f64 / golden;
                vec![r * phi.cos(), r * phi.sin(), z]
            })
            .collect(),
        _ => {
            // Additive recurrence with the generalized golden ratio of R^m,
            // pushed to the sphere through the cube [−1, 1]^m.
            let mut phi: f64 = 2.0;
            for _ in 0..64 {
                phi = (1.0 + phi).powf(1.0 / (m as f64 + 1.0));
            }
            let alpha: Vec<f64> = (1..=m).map(|j| (1.0 / phi.powi(j as i32)).fract()).collect();
            (1..=count)
                .map(|k| {
                    let mut v: Vec<f64> = alpha.iter().map(|a| 2.0 * (0.5 + k as f64 * a).fract() - 1.0).collect();
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.iter_mut().for_each(|x| *x /= n);
                    if v.iter().find(|x| x.abs() > 0.0).is_some_and(|x| *x < 0.0) {
                        v.iter_mut().for_each(|x| *x = -*x);
                    }
                    v
                })
                .collect()
        }
    }
}

/// Number of constant directions in the default policy family.
pub const DEFAULT_FAN: usize = 32;

/// Feedback from `surrogate` plus constant controls over a fan of directions.
pub fn default_family(frame: &Frame, surrogate: Arc<dyn Surrogate>) -> Vec<ControlPolicy> {
    let mut family = vec![ControlPolicy::Feedback(surrogate)];
    family.extend(fan_policies(frame));
    family
}

pub fn fan_policies(frame: &Frame) -> Vec<ControlPolicy> {
    direction_fan(frame.horizontal_rank(), DEFAULT_FAN)
        .into_iter()
        .map(|a| ControlPolicy::Constant(ControlMatrix::from_direction(&a).expect("fan directions are unit")))
        .collect()
}
