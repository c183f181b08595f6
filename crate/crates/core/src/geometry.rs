//! Sub-Riemannian frames, Lie brackets, the Hörmander step and the
//! Heisenberg group structure.
//!
//! A [`Frame`] is an ordered family of vector fields `X_1..X_m` on `R^n`,
//! stored as the coefficient map `σ(x)` whose i-th row is `X_i(x)`, together
//! with the covariant data `∇_{X_i}X_j(x) = DX_j(x) X_i(x)`. Built-in frames
//! carry hand-derived derivatives; custom frames either supply them or fall
//! back to central differences of `σ` along `X_i`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::{self, Matrix, Vector, MAX_DIM, ZERO_MAT, ZERO_VEC};

/// Default spatial step for finite-difference derivative fallbacks.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Relative singular-value threshold of the Hörmander rank test.
pub const RANK_TOL: f64 = 1e-8;

/// Full rank whose smallest retained singular value falls below this ratio is
/// reported as inconclusive rather than satisfied.
pub const RANK_AMBIGUITY: f64 = 1e-6;

type BracketField = Arc<dyn Fn(&[f64]) -> Vector + Send + Sync>;

pub type SigmaFn = dyn Fn(&[f64], &mut Matrix) + Send + Sync;
pub type NablaFn = dyn Fn(usize, usize, &[f64], &mut [f64]) + Send + Sync;

#[derive(Clone)]
enum Kind {
    Euclidean,
    /// `H^k` on `R^{2k+1}` with coordinates `(x_1..x_k, y_1..y_k, z)`.
    Heisenberg { k: usize },
    Grusin,
    RotoTranslation,
    Expressions(Arc<Vec<Vec<Expr>>>),
    Closure {
        sigma: Arc<SigmaFn>,
        nabla: Option<Arc<NablaFn>>,
    },
}

/// An orthonormal frame of the horizontal distribution.
#[derive(Clone)]
pub struct Frame {
    kind: Kind,
    n: usize,
    m: usize,
    fd_step: f64,
    label: String,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("label", &self.label)
            .field("n", &self.n)
            .field("m", &self.m)
            .finish()
    }
}

/// JSON schema for custom frames: `{"n": 3, "m": 2, "rows": [["1","0","-x2/2"], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomFrameSpec {
    pub n: usize,
    pub m: usize,
    pub rows: Vec<Vec<String>>,
    #[serde(default)]
    pub label: Option<String>,
}

impl Frame {
    pub fn euclidean(n: usize) -> Result<Frame> {
        check_dims(n, n)?;
        Ok(Frame {
            kind: Kind::Euclidean,
            n,
            m: n,
            fd_step: DEFAULT_FD_STEP,
            label: format!("euclidean({n})"),
        })
    }

    pub fn heisenberg(k: usize) -> Result<Frame> {
        if k == 0 {
            return Err(Error::Dimension("heisenberg(k) needs k >= 1".into()));
        }
        check_dims(2 * k + 1, 2 * k)?;
        Ok(Frame {
            kind: Kind::Heisenberg { k },
            n: 2 * k + 1,
            m: 2 * k,
            fd_step: DEFAULT_FD_STEP,
            label: format!("heisenberg({k})"),
        })
    }

    /// `X_1 = (1, 0)`, `X_2 = (0, x)`. The rank drop on `x = 0` is kept as a zero row.
    pub fn grusin() -> Frame {
        Frame {
            kind: Kind::Grusin,
            n: 2,
            m: 2,
            fd_step: DEFAULT_FD_STEP,
            label: "grusin".into(),
        }
    }

    /// `X_1 = (cos θ, sin θ, 0)`, `X_2 = (0, 0, 1)` on `(x, y, θ)`.
    pub fn rototranslation() -> Frame {
        Frame {
            kind: Kind::RotoTranslation,
            n: 3,
            m: 2,
            fd_step: DEFAULT_FD_STEP,
            label: "rototranslation".into(),
        }
    }

    /// A frame from a coefficient callback; `nabla` may be omitted, in which
    /// case covariant derivatives come from central differences.
    pub fn custom(
        n: usize,
        m: usize,
        sigma: Arc<SigmaFn>,
        nabla: Option<Arc<NablaFn>>,
        label: impl Into<String>,
    ) -> Result<Frame> {
        check_dims(n, m)?;
        let frame = Frame {
            kind: Kind::Closure { sigma, nabla },
            n,
            m,
            fd_step: DEFAULT_FD_STEP,
            label: label.into(),
        };
        frame.probe()?;
        Ok(frame)
    }

    /// A frame whose coefficients are expressions in `x1..xn`; derivatives are exact.
    pub fn from_spec(spec: &CustomFrameSpec) -> Result<Frame> {
        check_dims(spec.n, spec.m)?;
        if spec.rows.len() != spec.m {
            return Err(Error::Dimension(format!(
                "expected {} rows, found {}",
                spec.m,
                spec.rows.len()
            )));
        }
        let mut rows = Vec::with_capacity(spec.m);
        for (i, row) in spec.rows.iter().enumerate() {
            if row.len() != spec.n {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {}",
                    row.len(),
                    spec.n
                )));
            }
            let mut parsed = Vec::with_capacity(spec.n);
            for src in row {
                let e = Expr::parse(src).map_err(|e| e.context(format!("row {i}")))?;
                e.check_arity(spec.n)?;
                if !e.is_smooth() {
                    return Err(Error::InvalidParameter(format!(
                        "frame coefficient `{src}` is not smooth"
                    )));
                }
                parsed.push(e);
            }
            rows.push(parsed);
        }
        let frame = Frame {
            kind: Kind::Expressions(Arc::new(rows)),
            n: spec.n,
            m: spec.m,
            fd_step: DEFAULT_FD_STEP,
            label: spec.label.clone().unwrap_or_else(|| "custom".into()),
        };
        frame.probe()?;
        Ok(frame)
    }

    pub fn from_json(json: &str) -> Result<Frame> {
        let spec: CustomFrameSpec = serde_json::from_str(json)
            .map_err(|e| Error::InvalidParameter(format!("frame JSON: {e}")))?;
        Frame::from_spec(&spec)
    }

    /// Resolves `euclidean(n)`, `heisenberg(n)` (or bare `heisenberg` = H^1),
    /// `grusin` and `rototranslation`.
    pub fn from_name(name: &str) -> Result<Frame> {
        let name = name.trim().to_ascii_lowercase();
        let (base, arg) = match name.find('(') {
            Some(open) => {
                let close = name
                    .rfind(')')
                    .filter(|&c| c > open)
                    .ok_or_else(|| Error::UnknownGeometry(name.clone()))?;
                let arg: usize = name[open + 1..close]
                    .trim()
                    .parse()
                    .map_err(|_| Error::UnknownGeometry(name.clone()))?;
                (name[..open].trim().to_string(), Some(arg))
            }
            None => (name.clone(), None),
        };
        match (base.as_str(), arg) {
            ("euclidean", Some(n)) => Frame::euclidean(n),
            ("euclidean", None) => Frame::euclidean(3),
            ("heisenberg", k) => Frame::heisenberg(k.unwrap_or(1)),
            ("grusin" | "grushin", None) => Ok(Frame::grusin()),
            ("rototranslation" | "roto-translation", None) => Ok(Frame::rototranslation()),
            _ => Err(Error::UnknownGeometry(name)),
        }
    }

    pub fn with_fd_step(mut self, h: f64) -> Result<Frame> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("fd_step must be positive, got {h}")));
        }
        self.fd_step = h;
        Ok(self)
    }

    pub fn ambient_dim(&self) -> usize {
        self.n
    }

    pub fn horizontal_rank(&self) -> usize {
        self.m
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// True for frames that carry exact covariant derivatives.
    pub fn has_analytic_nabla(&self) -> bool {
        !matches!(self.kind, Kind::Closure { nabla: None, .. })
    }

    /// Whether the frame is (a copy of) a Heisenberg group frame.
    pub fn heisenberg_order(&self) -> Option<usize> {
        match self.kind {
            Kind::Heisenberg { k } => Some(k),
            _ => None,
        }
    }

    fn probe(&self) -> Result<()> {
        let x: Vec<f64> = (0..self.n).map(|i| 0.5 + 0.1 * i as f64).collect();
        let mut s = ZERO_MAT;
        self.sigma_into(&x, &mut s);
        for i in 0..self.m {
            for j in 0..self.n {
                if !s[i][j].is_finite() {
                    return Err(Error::NonFinite(format!(
                        "sigma[{i}][{j}] at probe point {x:?} of frame `{}`",
                        self.label
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes `σ(x)` (m rows, n columns) into the leading block of `out`.
    pub fn sigma_into(&self, x: &[f64], out: &mut Matrix) {
        let n = self.n;
        for row in out.iter_mut().take(self.m) {
            row[..n].fill(0.0);
        }
        match &self.kind {
            Kind::Euclidean => {
                for i in 0..n {
                    out[i][i] = 1.0;
                }
            }
            Kind::Heisenberg { k } => {
                let k = *k;
                for i in 0..k {
                    out[i][i] = 1.0;
                    out[i][2 * k] = -0.5 * x[k + i];
                    out[k + i][k + i] = 1.0;
                    out[k + i][2 * k] = 0.5 * x[i];
                }
            }
            Kind::Grusin => {
                out[0][0] = 1.0;
                out[1][1] = x[0];
            }
            Kind::RotoTranslation => {
                let (s, c) = x[2].sin_cos();
                out[0][0] = c;
                out[0][1] = s;
                out[1][2] = 1.0;
            }
            Kind::Expressions(rows) => {
                for (i, row) in rows.iter().enumerate() {
                    for (j, e) in row.iter().enumerate() {
                        out[i][j] = e.eval(x);
                    }
                }
            }
            Kind::Closure { sigma, .. } => sigma(x, out),
        }
    }

    pub fn sigma(&self, x: &[f64]) -> DMatrix<f64> {
        let mut s = ZERO_MAT;
        self.sigma_into(x, &mut s);
        linalg::to_dmatrix(&s, self.m, self.n)
    }

    /// The i-th frame field at x.
    pub fn field(&self, i: usize, x: &[f64]) -> Vector {
        let mut s = ZERO_MAT;
        self.sigma_into(x, &mut s);
        s[i]
    }

    /// `∇_{X_i}X_j(x)`: exact for built-in and expression frames, central
    /// differences along `X_i` otherwise.
    pub fn nabla_into(&self, i: usize, j: usize, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        out[..n].fill(0.0);
        match &self.kind {
            Kind::Euclidean => {}
            Kind::Heisenberg { k } => {
                let k = *k;
                // Only the z-coefficients vary: X_a has -y_a/2, Y_a has x_a/2.
                let (ia, ja) = (i % k, j % k);
                if ia == ja {
                    match (i < k, j < k) {
                        (false, true) => out[2 * k] = -0.5, // ∇_{Y_a} X_a
                        (true, false) => out[2 * k] = 0.5,  // ∇_{X_a} Y_a
                        _ => {}
                    }
                }
            }
            Kind::Grusin => {
                // DX_2 has the single entry ∂(x)/∂x in the second row.
                if j == 1 {
                    let xi = self.field(i, x);
                    out[1] = xi[0];
                }
            }
            Kind::RotoTranslation => {
                if j == 0 {
                    let xi = self.field(i, x);
                    let (s, c) = x[2].sin_cos();
                    out[0] = -s * xi[2];
                    out[1] = c * xi[2];
                }
            }
            Kind::Expressions(rows) => {
                let xi = self.field(i, x);
                for (k, e) in rows[j].iter().enumerate() {
                    let d = e.eval_dual(&x[..n]);
                    out[k] = linalg::dot(&d.grad, &xi, n);
                }
            }
            Kind::Closure { nabla: Some(f), .. } => f(i, j, x, out),
            Kind::Closure { nabla: None, .. } => self.nabla_fd_into(i, j, x, out),
        }
    }

    pub fn nabla(&self, i: usize, j: usize, x: &[f64]) -> Vec<f64> {
        let mut out = ZERO_VEC;
        self.nabla_into(i, j, x, &mut out);
        out[..self.n].to_vec()
    }

    /// Central difference of row j of σ along `X_i`, step `fd_step`.
    pub fn nabla_fd_into(&self, i: usize, j: usize, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        let h = self.fd_step;
        let xi = self.field(i, x);
        let mut plus = ZERO_VEC;
        let mut minus = ZERO_VEC;
        for k in 0..n {
            plus[k] = x[k] + h * xi[k];
            minus[k] = x[k] - h * xi[k];
        }
        let fp = self.field(j, &plus[..n]);
        let fm = self.field(j, &minus[..n]);
        for k in 0..n {
            out[k] = (fp[k] - fm[k]) / (2.0 * h);
        }
    }

    pub fn nabla_fd(&self, i: usize, j: usize, x: &[f64]) -> Vec<f64> {
        let mut out = ZERO_VEC;
        self.nabla_fd_into(i, j, x, &mut out);
        out[..self.n].to_vec()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, frame `{}` lives in R^{}",
                x.len(),
                self.label,
                self.n
            )));
        }
        Ok(())
    }

    /// `[X_i, X_j](x) = ∇_{X_i}X_j(x) − ∇_{X_j}X_i(x)` (indices are 0-based).
    pub fn lie_bracket(&self, i: usize, j: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        if i >= self.m || j >= self.m {
            return Err(Error::Dimension(format!(
                "bracket indices ({i}, {j}) out of range for rank {}",
                self.m
            )));
        }
        let a = self.nabla(i, j, x);
        let b = self.nabla(j, i, x);
        let out: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("bracket [X{i}, X{j}] at {x:?}")));
        }
        Ok(out)
    }

    /// Brackets the frame fields at `x` until they span `R^n`.
    ///
    /// Level 1 holds the fields themselves, level 2 their brackets (exact
    /// when the frame has analytic derivatives), and deeper levels the
    /// left-normed brackets `[X_i, W]` with `W` from the previous level,
    /// evaluated by central differences.
    pub fn hormander_step(&self, x: &[f64], max_step: usize) -> Result<HormanderReport> {
        self.check_point(x)?;
        if max_step == 0 {
            return Err(Error::InvalidParameter("max_step must be >= 1".into()));
        }
        let n = self.n;
        let m = self.m;
        let base: Vec<BracketField> = (0..m)
            .map(|i| {
                let frame = self.clone();
                Arc::new(move |p: &[f64]| frame.field(i, p)) as BracketField
            })
            .collect();
        let mut columns: Vec<Vector> = (0..m).map(|i| self.field(i, x)).collect();
        let mut previous = base.clone();
        let mut singular_values = Vec::new();
        for step in 1..=max_step {
            if step == 2 {
                let mut level = Vec::new();
                for i in 0..m {
                    for j in (i + 1)..m {
                        let frame = self.clone();
                        let f: BracketField = Arc::new(move |p: &[f64]| {
                            let mut a = ZERO_VEC;
                            let mut b = ZERO_VEC;
                            frame.nabla_into(i, j, p, &mut a);
                            frame.nabla_into(j, i, p, &mut b);
                            let mut out = ZERO_VEC;
                            for k in 0..frame.n {
                                out[k] = a[k] - b[k];
                            }
                            out
                        });
                        columns.push(f(x));
                        level.push(f);
                    }
                }
                previous = level;
            } else if step > 2 {
                let mut level = Vec::new();
                for bi in &base {
                    for w in &previous {
                        let f = bracket_fd(bi.clone(), w.clone(), n, self.fd_step.max(1e-4));
                        columns.push(f(x));
                        level.push(f);
                    }
                }
                previous = level;
            }
            let mat = DMatrix::from_fn(n, columns.len(), |r, c| columns[c][r]);
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("bracket fields at {x:?}")));
            }
            let sv = mat.singular_values();
            let mut values: Vec<f64> = sv.iter().copied().collect();
            values.sort_by(|a, b| b.total_cmp(a));
            let largest = values.first().copied().unwrap_or(0.0);
            let rank = values.iter().filter(|&&s| s > RANK_TOL * largest).count();
            singular_values = values;
            if rank >= n {
                let smallest = singular_values[n - 1] / largest;
                if smallest < RANK_AMBIGUITY {
                    return Ok(HormanderReport {
                        satisfied: false,
                        step: None,
                        rank,
                        singular_values,
                        diagnostic: Some(format!(
                            "rank test inconclusive at step {step}: relative singular value {smallest:e}"
                        )),
                    });
                }
                return Ok(HormanderReport {
                    satisfied: true,
                    step: Some(step),
                    rank,
                    singular_values,
                    diagnostic: None,
                });
            }
        }
        let largest = singular_values.first().copied().unwrap_or(0.0);
        let rank = singular_values
            .iter()
            .filter(|&&s| s > RANK_TOL * largest)
            .count();
        Ok(HormanderReport {
            satisfied: false,
            step: None,
            rank,
            singular_values,
            diagnostic: Some(format!("span has rank {rank} < {n} after {max_step} step(s)")),
        })
    }
}

fn check_dims(n: usize, m: usize) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::Dimension("dimensions must be positive".into()));
    }
    if m > n {
        return Err(Error::Dimension(format!("horizontal rank {m} exceeds ambient dimension {n}")));
    }
    if n > MAX_DIM {
        return Err(Error::Dimension(format!("ambient dimension {n} exceeds {MAX_DIM}")));
    }
    Ok(())
}

type FieldFn = BracketField;

/// `[V, W] = (DW) V − (DV) W` with directional central differences.
fn bracket_fd(v: FieldFn, w: FieldFn, n: usize, h: f64) -> FieldFn {
    Arc::new(move |p: &[f64]| {
        let vp = v(p);
        let wp = w(p);
        let dir = |field: &FieldFn, d: &Vector| {
            let mut plus = ZERO_VEC;
            let mut minus = ZERO_VEC;
            for k in 0..n {
                plus[k] = p[k] + h * d[k];
                minus[k] = p[k] - h * d[k];
            }
            let a = field(&plus[..n]);
            let b = field(&minus[..n]);
            let mut out = ZERO_VEC;
            for k in 0..n {
                out[k] = (a[k] - b[k]) / (2.0 * h);
            }
            out
        };
        let dw_v = dir(&w, &vp);
        let dv_w = dir(&v, &wp);
        let mut out = ZERO_VEC;
        for k in 0..n {
            out[k] = dw_v[k] - dv_w[k];
        }
        out
    })
}

/// Outcome of [`Frame::hormander_step`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HormanderReport {
    pub satisfied: bool,
    /// First bracket depth at which the span is all of `R^n`.
    pub step: Option<usize>,
    pub rank: usize,
    /// Singular values of the final span, descending.
    pub singular_values: Vec<f64>,
    pub diagnostic: Option<String>,
}

/// A point of the Heisenberg group `H^k`, stored as `(x_1..x_k, y_1..y_k, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPoint {
    pub coords: Vec<f64>,
}

impl GroupPoint {
    pub fn new(coords: Vec<f64>) -> Result<GroupPoint> {
        if coords.len() % 2 != 1 || coords.len() > MAX_DIM {
            return Err(Error::Dimension(format!(
                "Heisenberg points need 2k+1 <= {MAX_DIM} coordinates, got {}",
                coords.len()
            )));
        }
        Ok(GroupPoint { coords })
    }

    pub fn h1(x: f64, y: f64, z: f64) -> GroupPoint {
        GroupPoint {
            coords: vec![x, y, z],
        }
    }

    pub fn identity(k: usize) -> GroupPoint {
        GroupPoint {
            coords: vec![0.0; 2 * k + 1],
        }
    }

    pub fn order(&self) -> usize {
        self.coords.len() / 2
    }

    fn same_group(&self, other: &GroupPoint) -> Result<()> {
        if self.coords.len() != other.coords.len() {
            return Err(Error::Dimension("points from different Heisenberg groups".into()));
        }
        Ok(())
    }
}

/// `(x, y, z)·(x', y', z') = (x + x', y + y', z + z' + (x·y' − y·x')/2)`.
pub fn group_op(p: &GroupPoint, q: &GroupPoint) -> Result<GroupPoint> {
    p.same_group(q)?;
    let k = p.order();
    let (a, b) = (&p.coords, &q.coords);
    let mut out = vec![0.0; 2 * k + 1];
    let mut symplectic = 0.0;
    for i in 0..k {
        out[i] = a[i] + b[i];
        out[k + i] = a[k + i] + b[k + i];
        symplectic += a[i] * b[k + i] - a[k + i] * b[i];
    }
    out[2 * k] = a[2 * k] + b[2 * k] + 0.5 * symplectic;
    Ok(GroupPoint { coords: out })
}

pub fn inverse(p: &GroupPoint) -> GroupPoint {
    GroupPoint {
        coords: p.coords.iter().map(|v| -v).collect(),
    }
}

/// `δ_λ(x, y, z) = (λx, λy, λ²z)`.
pub fn dilation(lambda: f64, p: &GroupPoint) -> Result<GroupPoint> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("dilation factor must be positive, got {lambda}")));
    }
    let k = p.order();
    let mut out = p.coords.clone();
    for v in out.iter_mut().take(2 * k) {
        *v *= lambda;
    }
    out[2 * k] *= lambda * lambda;
    Ok(GroupPoint { coords: out })
}

/// `((|x|² + |y|²)² + z²)^{1/4}`.
pub fn homogeneous_norm(p: &GroupPoint) -> f64 {
    let k = p.order();
    let horizontal: f64 = p.coords[..2 * k].iter().map(|v| v * v).sum();
    let z = p.coords[2 * k];
    (horizontal * horizontal + z * z).powf(0.25)
}

/// Differential of `q ↦ a·q`: identity with last row `(-a_y/2, a_x/2, 1)`.
pub fn left_translation_diff(a: &GroupPoint) -> DMatrix<f64> {
    let k = a.order();
    let n = 2 * k + 1;
    let mut out = DMatrix::identity(n, n);
    for i in 0..k {
        out[(2 * k, i)] = -0.5 * a.coords[k + i];
        out[(2 * k, k + i)] = 0.5 * a.coords[i];
    }
    out
}
