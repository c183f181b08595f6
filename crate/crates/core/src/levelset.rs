//! Explicit finite-difference solver for `u_t = Δ₀u − Δ₀,∞u` on boxes in
//! `R^2` and `R^3`.
//!
//! Each step rebuilds the horizontal jet at every node from centered
//! differences and advances by forward Euler. Where the horizontal gradient
//! vanishes the equation is undefined; [`Branch`] selects how those nodes are
//! treated.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::HorizontalJet;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::Frame;
use crate::linalg::{self, Matrix, Vector, ZERO_MAT, ZERO_VEC};

/// Node values on a uniform box grid. Two-dimensional grids keep a single
/// layer in the third axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub dim: usize,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
    pub values: Vec<f64>,
    pub time: f64,
}

impl GridField {
    /// An all-zero grid on `[lo, hi]` whose spacing is the largest value not
    /// exceeding `h` that divides every side.
    pub fn new(lo: &[f64], hi: &[f64], h: f64) -> Result<GridField> {
        let dim = lo.len();
        if !(dim == 2 || dim == 3) || hi.len() != dim {
            return Err(Error::Dimension(format!(
                "grid boxes must be 2- or 3-dimensional, got {} and {} bounds",
                lo.len(),
                hi.len()
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("grid spacing must be positive, got {h}")));
        }
        let mut out = GridField {
            dim,
            lo: [0.0; 3],
            hi: [0.0; 3],
            spacing: [1.0; 3],
            dims: [1; 3],
            values: Vec::new(),
            time: 0.0,
        };
        for a in 0..dim {
            let len = hi[a] - lo[a];
            if !(len > 0.0 && len.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "empty box along axis {a}: [{}, {}]",
                    lo[a], hi[a]
                )));
            }
            let cells = ((len / h) - 1e-9).ceil().max(2.0) as usize;
            out.lo[a] = lo[a];
            out.hi[a] = hi[a];
            out.dims[a] = cells + 1;
            out.spacing[a] = len / cells as f64;
        }
        out.values = vec![0.0; out.len()];
        Ok(out)
    }

    pub fn from_field(lo: &[f64], hi: &[f64], h: f64, field: &ScalarField) -> Result<GridField> {
        let mut g = GridField::new(lo, hi, h)?;
        if field.dim() != g.dim {
            return Err(Error::Dimension(format!(
                "field has {} coordinates, grid has {}",
                field.dim(),
                g.dim
            )));
        }
        for idx in 0..g.len() {
            let x = g.node(idx);
            let v = field.eval(&x[..g.dim]);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("initial value at {:?}", &x[..g.dim])));
            }
            g.values[idx] = v;
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h_min(&self) -> f64 {
        self.spacing[..self.dim].iter().copied().fold(f64::INFINITY, f64::min)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let rest = idx / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], k]
    }

    /// Coordinates of node `idx` (unused trailing axes are zero).
    #[inline]
    pub fn node(&self, idx: usize) -> [f64; 3] {
        let c = self.unravel(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.lo[a] + c[a] as f64 * self.spacing[a];
        }
        x
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let c = self.unravel(idx);
        (0..self.dim).any(|a| c[a] == 0 || c[a] + 1 == self.dims[a])
    }

    /// Multilinear interpolation, clamped to the box.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let mut base = [0usize; 3];
        let mut w = [0.0; 3];
        for a in 0..self.dim {
            let s = ((x[a] - self.lo[a]) / self.spacing[a]).clamp(0.0, (self.dims[a] - 1) as f64);
            let i = (s.floor() as usize).min(self.dims[a] - 2);
            base[a] = i;
            w[a] = s - i as f64;
        }
        let mut acc = 0.0;
        let corners = 1usize << self.dim;
        for corner in 0..corners {
            let mut weight = 1.0;
            let mut c = base;
            for a in 0..self.dim {
                if corner >> a & 1 == 1 {
                    c[a] += 1;
                    weight *= w[a];
                } else {
                    weight *= 1.0 - w[a];
                }
            }
            if weight != 0.0 {
                acc += weight * self.values[self.index(c[0], c[1], c[2])];
            }
        }
        acc
    }

    /// Largest absolute nodewise difference over interior nodes.
    pub fn max_interior_diff(&self, other: &GridField) -> f64 {
        (0..self.len())
            .filter(|&i| !self.is_boundary(i))
            .map(|i| (self.values[i] - other.values[i]).abs())
            .fold(0.0, f64::max)
    }
}

/// How nodes with vanishing horizontal gradient are updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Clipped gradient direction with an isotropic completion; the default.
    #[default]
    Regularized,
    /// `Δ₀u − λ_min(S̃)` at characteristic nodes.
    UpperEnvelope,
    /// `Δ₀u − λ_max(S̃)` at characteristic nodes.
    LowerEnvelope,
}

impl std::str::FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Branch> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "regularized" => Ok(Branch::Regularized),
            "upper" | "upper_envelope" => Ok(Branch::UpperEnvelope),
            "lower" | "lower_envelope" => Ok(Branch::LowerEnvelope),
            other => Err(Error::InvalidParameter(format!("unknown branch `{other}`"))),
        }
    }
}

/// Ghost-layer rule applied before every sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// `u(−1) = 2u(0) − u(1)`: keeps affine data exactly stationary.
    #[default]
    Linear,
    /// `u(−1) = u(0)`.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeParams {
    /// Regularization length; `None` means the smallest grid spacing.
    pub epsilon: Option<f64>,
    /// Characteristic threshold; `None` means `epsilon`.
    pub char_tol: Option<f64>,
    pub cfl: f64,
    pub branch: Branch,
    pub boundary: Boundary,
}

impl Default for SchemeParams {
    fn default() -> Self {
        SchemeParams {
            epsilon: None,
            char_tol: None,
            cfl: 0.8,
            branch: Branch::Regularized,
            boundary: Boundary::Linear,
        }
    }
}

impl SchemeParams {
    pub fn with_branch(mut self, branch: Branch) -> Self {
        self.branch = branch;
        self
    }

    fn resolve(&self, h_min: f64) -> Result<(f64, f64)> {
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(Error::InvalidParameter(format!("cfl must lie in (0, 1), got {}", self.cfl)));
        }
        let eps = self.epsilon.unwrap_or(h_min);
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
        }
        let tol = self.char_tol.unwrap_or(eps);
        if !(tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("char_tol must be nonnegative, got {tol}")));
        }
        Ok((eps, tol))
    }
}

/// Right-hand side of the level-set equation at one jet.
///
/// Away from characteristic points every branch returns `Δ₀u − Δ₀,∞u`.
/// The regularized branch uses `q = 𝒳u / max(|𝒳u|, ε)` and returns
/// `Δ₀u − ⟨S̃q, q⟩ − (1 − |q|²) Tr S̃ / m`, which is the trace of `S̃` against
/// a projection-like weight of trace `m − 1` and therefore always lies between
/// the two envelopes.
pub fn envelope_rhs(jet: &HorizontalJet, branch: Branch, char_tol: f64, epsilon: f64) -> f64 {
    let m = jet.m;
    let g = jet.horiz_grad_norm();
    let lap = jet.laplacian();
    match branch {
        Branch::Regularized => {
            let scale = g.max(epsilon);
            let mut q = ZERO_VEC;
            for i in 0..m {
                q[i] = jet.horiz_grad[i] / scale;
            }
            let q2 = linalg::dot(&q, &q, m);
            lap - linalg::quadratic_form(&jet.horiz_hess, &q, m) - (1.0 - q2) * lap / m as f64
        }
        Branch::UpperEnvelope | Branch::LowerEnvelope => {
            if g > char_tol {
                let mut q = ZERO_VEC;
                for i in 0..m {
                    q[i] = jet.horiz_grad[i] / g;
                }
                lap - linalg::quadratic_form(&jet.horiz_hess, &q, m)
            } else {
                let e = jet.hess_eigen();
                if branch == Branch::LowerEnvelope {
                    lap - e.max()
                } else {
                    lap - e.min()
                }
            }
        }
    }
}

/// Output of [`evolve`].
#[derive(Debug, Clone)]
pub struct Evolution {
    /// Initial state first, state at exactly `T` last.
    pub snapshots: Vec<GridField>,
    pub dt: f64,
    pub s_max: f64,
    pub steps: usize,
    pub epsilon: f64,
    pub char_tol: f64,
}

impl Evolution {
    pub fn last(&self) -> &GridField {
        self.snapshots.last().expect("evolution keeps at least one snapshot")
    }

    /// `u(t, x)`, multilinear in space and linear in time between snapshots.
    pub fn value_at(&self, t: f64, x: &[f64]) -> f64 {
        let snaps = &self.snapshots;
        if t <= snaps[0].time {
            return snaps[0].interpolate(x);
        }
        let k = snaps.partition_point(|s| s.time < t);
        if k >= snaps.len() {
            return self.last().interpolate(x);
        }
        let (a, b) = (&snaps[k - 1], &snaps[k]);
        let w = (t - a.time) / (b.time - a.time);
        (1.0 - w) * a.interpolate(x) + w * b.interpolate(x)
    }
}

struct Padded {
    data: Vec<f64>,
    pd: [usize; 3],
    stride: [usize; 3],
    offset: [usize; 3],
}

impl Padded {
    fn new(grid: &GridField) -> Padded {
        let mut pd = [1usize; 3];
        let mut offset = [0usize; 3];
        for a in 0..grid.dim {
            pd[a] = grid.dims[a] + 2;
            offset[a] = 1;
        }
        let stride = [pd[1] * pd[2], pd[2], 1];
        Padded {
            data: vec![0.0; pd[0] * pd[1] * pd[2]],
            pd,
            stride,
            offset,
        }
    }

    #[inline]
    fn at(&self, c: [usize; 3]) -> usize {
        c[0] * self.stride[0] + c[1] * self.stride[1] + c[2]
    }

    fn fill(&mut self, grid: &GridField, boundary: Boundary) {
        let d = grid.dims;
        for i in 0..d[0] {
            for j in 0..d[1] {
                let src = grid.index(i, j, 0);
                let dst = self.at([i + self.offset[0], j + self.offset[1], self.offset[2]]);
                self.data[dst..dst + d[2]].copy_from_slice(&grid.values[src..src + d[2]]);
            }
        }
        // Axis by axis, so corner ghosts extrapolate from already-filled faces.
        for a in 0..grid.dim {
            let mut ranges = [(0, 1); 3];
            for b in 0..3 {
                ranges[b] = if b < a || b >= grid.dim {
                    (0, self.pd[b])
                } else {
                    (1, self.pd[b] - 1)
                };
            }
            ranges[a] = (0, 1);
            let last = self.pd[a] - 1;
            for i in ranges[0].0..ranges[0].1 {
                for j in ranges[1].0..ranges[1].1 {
                    for k in ranges[2].0..ranges[2].1 {
                        for (ghost, inner, next) in [(0usize, 1usize, 2usize), (last, last - 1, last - 2)] {
                            let mut c = [i, j, k];
                            c[a] = ghost;
                            let g = self.at(c);
                            c[a] = inner;
                            let u0 = self.data[self.at(c)];
                            c[a] = next;
                            let u1 = self.data[self.at(c)];
                            self.data[g] = match boundary {
                                Boundary::Linear => 2.0 * u0 - u1,
                                Boundary::Constant => u0,
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Per-run constants shared by every node update.
struct Stencil<'a> {
    frame: &'a Frame,
    dim: usize,
    lo: [f64; 3],
    spacing: [f64; 3],
    branch: Branch,
    epsilon: f64,
    char_tol: f64,
}

impl Stencil<'_> {
    /// Euclidean gradient and Hessian at padded position `c` by centered differences.
    #[inline]
    fn derivatives(&self, p: &Padded, c: usize) -> (Vector, Matrix) {
        let u = &p.data;
        let mut du = ZERO_VEC;
        let mut d2u = ZERO_MAT;
        let centre = u[c];
        for a in 0..self.dim {
            let s = p.stride[a];
            let h = self.spacing[a];
            let (up, down) = (u[c + s], u[c - s]);
            du[a] = (up - down) / (2.0 * h);
            d2u[a][a] = (up - 2.0 * centre + down) / (h * h);
            for b in 0..a {
                let t = p.stride[b];
                let v = (u[c + s + t] - u[c + s - t] - u[c - s + t] + u[c - s - t])
                    / (4.0 * h * self.spacing[b]);
                d2u[a][b] = v;
                d2u[b][a] = v;
            }
        }
        (du, d2u)
    }

    #[inline]
    fn rhs(&self, grid: &GridField, p: &Padded, idx: usize) -> f64 {
        let c = grid.unravel(idx);
        let pc = p.at([c[0] + p.offset[0], c[1] + p.offset[1], c[2] + p.offset[2]]);
        let (du, d2u) = self.derivatives(p, pc);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.lo[a] + c[a] as f64 * self.spacing[a];
        }
        let jet = HorizontalJet::from_derivatives(self.frame, &x[..self.dim], &du, &d2u);
        envelope_rhs(&jet, self.branch, self.char_tol, self.epsilon)
    }
}

/// `max_x [λ_max(σσᵀ) + (h/2) Σ_ij |∇_{X_i}X_j|]` over the grid nodes.
pub fn stiffness_bound(frame: &Frame, grid: &GridField) -> f64 {
    let n = grid.dim;
    let m = frame.horizontal_rank();
    let h = grid.h_min();
    (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let x = grid.node(idx);
            let mut s = ZERO_MAT;
            frame.sigma_into(&x[..n], &mut s);
            let gram = linalg::congruence(&s, &linalg::identity(n), m, n);
            // σσᵀ and σᵀσ share their nonzero spectrum.
            let lam = linalg::sym_eigen(&gram, m).max();
            let mut first = 0.0;
            let mut v = ZERO_VEC;
            for i in 0..m {
                for j in 0..m {
                    frame.nabla_into(i, j, &x[..n], &mut v);
                    first += linalg::norm(&v, n);
                }
            }
            lam + 0.5 * h * first
        })
        .reduce(|| 0.0, f64::max)
}

/// Advances `initial` to `initial.time + t_end`, keeping a snapshot every
/// `snap_every` (if given) plus the initial and final states.
pub fn evolve(
    frame: &Frame,
    initial: &GridField,
    t_end: f64,
    params: &SchemeParams,
    snap_every: Option<f64>,
) -> Result<Evolution> {
    if frame.ambient_dim() != initial.dim {
        return Err(Error::Dimension(format!(
            "frame `{}` lives in R^{}, grid is {}-dimensional",
            frame.label(),
            frame.ambient_dim(),
            initial.dim
        )));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!("T must be positive, got {t_end}")));
    }
    let h_min = initial.h_min();
    let (epsilon, char_tol) = params.resolve(h_min)?;
    let s_max = stiffness_bound(frame, initial);
    if !(s_max.is_finite() && s_max > 0.0) {
        return Err(Error::NonFinite(format!("stiffness bound {s_max}")));
    }
    let dt = params.cfl * h_min * h_min / (2.0 * initial.dim as f64 * s_max);
    let stencil = Stencil {
        frame,
        dim: initial.dim,
        lo: initial.lo,
        spacing: initial.spacing,
        branch: params.branch,
        epsilon,
        char_tol,
    };
    let mut state = initial.clone();
    let mut padded = Padded::new(&state);
    let mut next = state.values.clone();
    let mut snapshots = vec![state.clone()];
    let t_final = initial.time + t_end;
    let snap_every = snap_every.filter(|s| *s > 0.0 && *s < t_end);
    let mut next_snap = snap_every.map(|s| initial.time + s);
    let mut steps = 0usize;
    let row = state.dims[2];
    while state.time < t_final {
        let mut step = dt;
        let mut hit_snap = false;
        if let Some(ns) = next_snap {
            if state.time + step >= ns - 1e-12 * dt {
                step = ns - state.time;
                hit_snap = true;
            }
        }
        let finishing = state.time + step >= t_final - 1e-12 * dt;
        if finishing {
            step = t_final - state.time;
        }
        padded.fill(&state, params.boundary);
        {
            let grid = &state;
            let pad = &padded;
            next.par_chunks_mut(row).enumerate().for_each(|(r, out)| {
                let base = r * row;
                for (k, v) in out.iter_mut().enumerate() {
                    let idx = base + k;
                    *v = grid.values[idx] + step * stencil.rhs(grid, pad, idx);
                }
            });
        }
        if let Some(bad) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                location: format!("{:?}", &state.node(bad)[..state.dim]),
                time: state.time + step,
            });
        }
        std::mem::swap(&mut state.values, &mut next);
        state.time = if finishing { t_final } else { state.time + step };
        steps += 1;
        if hit_snap && !finishing {
            snapshots.push(state.clone());
            next_snap = next_snap.zip(snap_every).map(|(a, b)| a + b);
        }
    }
    snapshots.push(state);
    Ok(Evolution {
        snapshots,
        dt,
        s_max,
        steps,
        epsilon,
        char_tol,
    })
}

/// Points where the grid field changes sign.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroLevel {
    pub points: Vec<Vec<f64>>,
    /// True when the field has no sign change and no exact zero.
    pub empty: bool,
}

/// Linear interpolation along every grid edge with a strict sign change;
/// nodes that are exactly zero are reported once each.
pub fn zero_level_extract(gf: &GridField) -> ZeroLevel {
    let dim = gf.dim;
    let mut points = Vec::new();
    for idx in 0..gf.len() {
        let u0 = gf.values[idx];
        let c = gf.unravel(idx);
        let x0 = gf.node(idx);
        if u0 == 0.0 {
            points.push(x0[..dim].to_vec());
            continue;
        }
        for a in 0..dim {
            if c[a] + 1 >= gf.dims[a] {
                continue;
            }
            let mut cn = c;
            cn[a] += 1;
            let u1 = gf.values[gf.index(cn[0], cn[1], cn[2])];
            if u1 != 0.0 && (u0 < 0.0) != (u1 < 0.0) {
                let s = u0 / (u0 - u1);
                let mut p = x0[..dim].to_vec();
                p[a] += s * gf.spacing[a];
                points.push(p);
            }
        }
    }
    ZeroLevel {
        empty: points.is_empty(),
        points,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use crate::calculus::jet;

    fn diag_jet(d0: f64, d1: f64) -> HorizontalJet {
        let frame = Frame::euclidean(2).unwrap();
        let mut d2u = ZERO_MAT;
        d2u[0][0] = d0;
        d2u[1][1] = d1;
        HorizontalJet::from_derivatives(&frame, &[0.0, 0.0], &ZERO_VEC, &d2u)
    }

    #[test]
    fn envelope_branches_at_characteristic_point() {
        let j = diag_jet(1.0, 3.0);
        assert_eq!(envelope_rhs(&j, Branch::LowerEnvelope, 1e-8, 1e-2), 1.0);
        assert_eq!(envelope_rhs(&j, Branch::UpperEnvelope, 1e-8, 1e-2), 3.0);
        assert_eq!(envelope_rhs(&j, Branch::Regularized, 1e-8, 1e-2), 2.0);
        let j = diag_jet(-2.0, -2.0);
        assert_eq!(envelope_rhs(&j, Branch::LowerEnvelope, 1e-8, 1e-2), -2.0);
        assert_eq!(envelope_rhs(&j, Branch::UpperEnvelope, 1e-8, 1e-2), -2.0);
    }

    #[test]
    fn axis_rule_for_rotational_data() {
        // u = z − f(r) with f''(0) = −2 on the axis: both envelopes give f''(0) for −u_t
        let frame = Frame::heisenberg(1).unwrap();
        let u = ScalarField::parse("x3 - 0.5*exp(-2*(x1^2+x2^2))", 3).unwrap();
        let j = jet(&frame, &u, &[0.0, 0.0, 0.3]).unwrap();
        for b in [Branch::LowerEnvelope, Branch::UpperEnvelope, Branch::Regularized] {
            assert!((envelope_rhs(&j, b, 1e-8, 1e-8) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_geometry() {
        let g = GridField::new(&[-1.0, -1.0], &[1.0, 1.0], 0.25).unwrap();
        assert_eq!(g.dims, [9, 9, 1]);
        assert_eq!(g.node(g.index(8, 0, 0)), [1.0, -1.0, 0.0]);
        assert!(GridField::new(&[0.0], &[1.0], 0.1).is_err());
        assert!(GridField::new(&[0.0, 0.0], &[1.0, 0.0], 0.1).is_err());
        assert!(GridField::new(&[0.0, 0.0], &[1.0, 1.0], 0.0).is_err());
        let f = ScalarField::parse("x1 + 2*x2", 2).unwrap();
        let g = GridField::from_field(&[-1.0, -1.0], &[1.0, 1.0], 0.25, &f).unwrap();
        assert!((g.interpolate(&[0.3, -0.45]) - (0.3 - 0.9)).abs() < 1e-14);
    }

    #[test]
    fn extraction() {
        let f = ScalarField::parse("x1", 2).unwrap();
        let h = 2.0 / 30.0;
        let g = GridField::from_field(&[-1.0, -1.0], &[1.0, 1.0], h, &f).unwrap();
        let z = zero_level_extract(&g);
        assert!(!z.empty);
        assert!(z.points.iter().all(|p| p[0].abs() < h * h));
        let f = ScalarField::parse("x1^2+x2^2-0.5", 2).unwrap();
        let g = GridField::from_field(&[-1.0, -1.0], &[1.0, 1.0], 1.0 / 32.0, &f).unwrap();
        let z = zero_level_extract(&g);
        for p in &z.points {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 0.5f64.sqrt()).abs() < 2.0 / 1024.0);
        }
        let f = ScalarField::constant(2, 1.0).unwrap();
        let g = GridField::from_field(&[-1.0, -1.0], &[1.0, 1.0], 0.5, &f).unwrap();
        assert!(zero_level_extract(&g).empty);
        // exact zeros are reported once
        let f = ScalarField::parse("x1", 2).unwrap();
        let g = GridField::from_field(&[-1.0, -1.0], &[1.0, 1.0], 0.5, &f).unwrap();
        assert_eq!(zero_level_extract(&g).points.len(), 5);
    }

    #[test]
    fn vertical_plane_is_stationary() {
        let frame = Frame::heisenberg(1).unwrap();
        let f = ScalarField::parse("x1 + 2*x2 - 1", 3).unwrap();
        let g = GridField::from_field(&[-0.5, -0.5, -0.5], &[0.5, 0.5, 0.5], 1.0 / 8.0, &f).unwrap();
        let out = evolve(&frame, &g, 0.05, &SchemeParams::default(), None).unwrap();
        assert_eq!(out.last().time, 0.05);
        assert!(out.last().max_interior_diff(&g) <= 1e-12);
    }

    fn circle_radius(gf: &GridField) -> f64 {
        let z = zero_level_extract(gf);
        let n = z.points.len() as f64;
        z.points.iter().map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt()).sum::<f64>() / n
    }

    #[test]
    fn euclidean_circle_shrinks_and_converges() {
        let frame = Frame::euclidean(2).unwrap();
        let f = ScalarField::parse("x1^2+x2^2-0.36", 2).unwrap();
        let t = 0.05;
        let exact = (0.36f64 - 2.0 * t).sqrt();
        let mut errors = Vec::new();
        for h in [1.0 / 16.0, 1.0 / 32.0] {
            let g = GridField::from_field(&[-1.0, -1.0], &[1.0, 1.0], h, &f).unwrap();
            let out = evolve(&frame, &g, t, &SchemeParams::default(), Some(t / 4.0)).unwrap();
            let radii: Vec<f64> = out.snapshots.iter().map(circle_radius).collect();
            assert!(radii.windows(2).all(|w| w[1] < w[0]), "{radii:?}");
            errors.push((radii.last().unwrap() - exact).abs());
        }
        assert!(errors[1] <= 0.6 * errors[0], "{errors:?}");
    }

    #[test]
    fn snapshot_schedule() {
        let frame = Frame::euclidean(2).unwrap();
        let f = ScalarField::parse("x1^2+x2^2-0.36", 2).unwrap();
        let g = GridField::from_field(&[-1.0, -1.0], &[1.0, 1.0], 0.125, &f).unwrap();
        let out = evolve(&frame, &g, 0.1, &SchemeParams::default(), Some(0.025)).unwrap();
        let times: Vec<f64> = out.snapshots.iter().map(|s| s.time).collect();
        assert_eq!(times.len(), 5);
        for (k, t) in times.iter().enumerate() {
            assert!((t - 0.025 * k as f64).abs() < 1e-12, "{times:?}");
        }
        let bad = SchemeParams {
            cfl: 1.5,
            ..SchemeParams::default()
        };
        assert!(evolve(&frame, &g, 0.1, &bad, None).is_err());
    }

    #[test]
    fn h1_envelope_identity() {
        // m = 2: Δ₀ − λ_max = λ_min and Δ₀ − λ_min = λ_max
        let frame = Frame::heisenberg(1).unwrap();
        let u = ScalarField::parse("x1^2 - 3*x1*x2 + 0.5*x2^2 + x3^2", 3).unwrap();
        let j = jet(&frame, &u, &[0.0, 0.0, 0.0]).unwrap();
        let e = j.hess_eigen();
        assert!((envelope_rhs(&j, Branch::LowerEnvelope, 1e-8, 1e-8) - e.min()).abs() < 1e-12);
        assert!((envelope_rhs(&j, Branch::UpperEnvelope, 1e-8, 1e-8) - e.max()).abs() < 1e-12);
    }

    fn builtins() -> Vec<Frame> {
        vec![
            Frame::euclidean(2).unwrap(),
            Frame::euclidean(3).unwrap(),
            Frame::heisenberg(1).unwrap(),
            Frame::heisenberg(2).unwrap(),
            Frame::grusin(),
            Frame::rototranslation(),
        ]
    }

    proptest! {
        #[test]
        fn envelope_ordering(which in 0usize..6, g in prop::collection::vec(-1.0f64..1.0, 5), hs in prop::collection::vec(-3.0f64..3.0, 25), x in prop::array::uniform5(-1.0f64..1.0), scale in prop::sample::select(vec![1e-9, 1e-4, 1e-2, 1.0])) {
            let frame = &builtins()[which];
            let n = frame.ambient_dim();
            let mut du = ZERO_VEC;
            for k in 0..n { du[k] = scale * g[k]; }
            let mut d2u = ZERO_MAT;
            for a in 0..n { for b in 0..=a { d2u[a][b] = hs[a * 5 + b]; d2u[b][a] = hs[a * 5 + b]; } }
            let j = HorizontalJet::from_derivatives(frame, &x[..n], &du, &d2u);
            let eps = 1e-2;
            let lower = envelope_rhs(&j, Branch::LowerEnvelope, eps, eps);
            let reg = envelope_rhs(&j, Branch::Regularized, eps, eps);
            let upper = envelope_rhs(&j, Branch::UpperEnvelope, eps, eps);
            prop_assert!(lower <= reg + 1e-10 && reg <= upper + 1e-10, "{lower} {reg} {upper}");
            if j.horiz_grad_norm() > eps {
                prop_assert!((lower - reg).abs() < 1e-10 && (upper - reg).abs() < 1e-10);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn maximum_principle_and_comparison(a in 0.2f64..0.5, b in 0.0f64..0.1, shift in 0.0f64..0.2) {
            let frame = Frame::heisenberg(1).unwrap();
            let src = format!("x1^2 + x2^2 + {a}*x3^2 + {b}*x1*x3 - 0.3");
            let u = ScalarField::parse(&src, 3).unwrap();
            let v = ScalarField::parse(&format!("{src} + {shift}*(1 + x1^2)"), 3).unwrap();
            let lo = [-1.0, -1.0, -1.0];
            let hi = [1.0, 1.0, 1.0];
            let gu = GridField::from_field(&lo, &hi, 0.125, &u).unwrap();
            let gv = GridField::from_field(&lo, &hi, 0.125, &v).unwrap();
            let params = SchemeParams::default();
            let eu = evolve(&frame, &gu, 0.02, &params, Some(0.005)).unwrap();
            let ev = evolve(&frame, &gv, 0.02, &params, Some(0.005)).unwrap();
            let flipped = GridField { values: gu.values.iter().map(|v| -v).collect(), ..gu.clone() };
            let ef = evolve(&frame, &flipped, 0.02, &params, Some(0.005)).unwrap();
            // the extrema of these data sit inside the box
            let interior_max = |g: &GridField| (0..g.len()).filter(|&i| !g.is_boundary(i)).map(|i| g.values[i]).fold(f64::MIN, f64::max);
            let interior_min = |g: &GridField| (0..g.len()).filter(|&i| !g.is_boundary(i)).map(|i| g.values[i]).fold(f64::MAX, f64::min);
            for w in eu.snapshots.windows(2) {
                prop_assert!(interior_min(&w[1]) >= interior_min(&w[0]) - 1e-12);
            }
            for w in ef.snapshots.windows(2) {
                prop_assert!(interior_max(&w[1]) <= interior_max(&w[0]) + 1e-12);
            }
            for (su, sv) in eu.snapshots.iter().zip(&ev.snapshots) {
                for i in 0..su.len() {
                    prop_assert!(su.values[i] <= sv.values[i] + 1e-12);
                }
            }
        }
    }
}
