//! Scalar level-set functions with exact or finite-difference derivatives.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::{Matrix, Vector, MAX_DIM, ZERO_MAT, ZERO_VEC};

/// Characteristic threshold for fields with exact derivatives.
pub const ANALYTIC_CHAR_TOL: f64 = 1e-8;
/// Characteristic threshold for finite-difference fields, above their noise floor.
pub const FD_CHAR_TOL: f64 = 1e-4;

const DEFAULT_GRAD_STEP: f64 = 1e-5;
const DEFAULT_HESS_STEP: f64 = 2e-4;

pub type EvalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
pub type GradFn = dyn Fn(&[f64], &mut Vector) + Send + Sync;
pub type HessFn = dyn Fn(&[f64], &mut Matrix) + Send + Sync;

#[derive(Clone)]
enum Source {
    Expr(Expr),
    Closures {
        eval: Arc<EvalFn>,
        grad: Option<Arc<GradFn>>,
        hess: Option<Arc<HessFn>>,
    },
}

/// A function `u: R^n → R` whose zero level is the evolving surface.
#[derive(Clone)]
pub struct ScalarField {
    source: Source,
    n: usize,
    fd_step: f64,
    hess_step: f64,
    force_fd: bool,
    label: String,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("label", &self.label)
            .field("n", &self.n)
            .field("analytic", &self.is_analytic())
            .finish()
    }
}

impl ScalarField {
    /// Wraps a parsed expression. Smooth expressions get exact derivatives by
    /// forward-mode differentiation; anything containing `abs` falls back to
    /// central differences.
    pub fn from_expr(expr: Expr, n: usize) -> Result<ScalarField> {
        check_dim(n)?;
        expr.check_arity(n)?;
        if !expr.is_smooth() {
            log::warn!(
                "`{}` is not smooth; derivatives fall back to finite differences",
                expr.source()
            );
        }
        let label = expr.source().to_string();
        Ok(ScalarField {
            force_fd: !expr.is_smooth(),
            source: Source::Expr(expr),
            n,
            fd_step: DEFAULT_GRAD_STEP,
            hess_step: DEFAULT_HESS_STEP,
            label,
        })
    }

    pub fn parse(src: &str, n: usize) -> Result<ScalarField> {
        ScalarField::from_expr(Expr::parse(src)?, n)
    }

    /// A field known only through evaluation.
    pub fn from_fn(n: usize, eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Result<ScalarField> {
        check_dim(n)?;
        Ok(ScalarField {
            source: Source::Closures {
                eval: Arc::new(eval),
                grad: None,
                hess: None,
            },
            n,
            fd_step: DEFAULT_GRAD_STEP,
            hess_step: DEFAULT_HESS_STEP,
            force_fd: false,
            label: "closure".into(),
        })
    }

    pub fn constant(n: usize, c: f64) -> Result<ScalarField> {
        let mut f = ScalarField::from_fn(n, move |_| c)?
            .with_grad(|_, g| g.fill(0.0))
            .with_hess(|_, h| *h = ZERO_MAT);
        f.label = format!("{c}");
        Ok(f)
    }

    pub fn with_grad(mut self, grad: impl Fn(&[f64], &mut Vector) + Send + Sync + 'static) -> Self {
        if let Source::Closures { grad: g, .. } = &mut self.source {
            *g = Some(Arc::new(grad));
        }
        self
    }

    pub fn with_hess(mut self, hess: impl Fn(&[f64], &mut Matrix) + Send + Sync + 'static) -> Self {
        if let Source::Closures { hess: h, .. } = &mut self.source {
            *h = Some(Arc::new(hess));
        }
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Step for the first-derivative fallback; the Hessian step scales with it.
    pub fn with_fd_step(mut self, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("fd_step must be positive, got {h}")));
        }
        self.fd_step = h;
        self.hess_step = 20.0 * h;
        Ok(self)
    }

    /// Ignore any exact derivatives and use central differences throughout.
    pub fn finite_difference(mut self) -> Self {
        self.force_fd = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn expr(&self) -> Option<&Expr> {
        match &self.source {
            Source::Expr(e) => Some(e),
            Source::Closures { .. } => None,
        }
    }

    /// True when both derivatives are exact.
    pub fn is_analytic(&self) -> bool {
        if self.force_fd {
            return false;
        }
        match &self.source {
            Source::Expr(_) => true,
            Source::Closures { grad, hess, .. } => grad.is_some() && hess.is_some(),
        }
    }

    pub fn is_smooth(&self) -> bool {
        match &self.source {
            Source::Expr(e) => e.is_smooth(),
            Source::Closures { .. } => true,
        }
    }

    /// The characteristic threshold matching the derivative source.
    pub fn default_char_tol(&self) -> f64 {
        if self.is_analytic() {
            ANALYTIC_CHAR_TOL
        } else {
            FD_CHAR_TOL
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.source {
            Source::Expr(e) => e.eval(x),
            Source::Closures { eval, .. } => eval(x),
        }
    }

    /// `(u, Du, D²u)` at `x`; the Hessian is symmetrized.
    pub fn derivatives(&self, x: &[f64]) -> Result<(f64, Vector, Matrix)> {
        if x.len() != self.n {
            return Err(Error::Dimension(format!(
                "field `{}` expects {} coordinates, got {}",
                self.label,
                self.n,
                x.len()
            )));
        }
        let n = self.n;
        let (value, grad, mut hess) = match (&self.source, self.force_fd) {
            (Source::Expr(e), false) => {
                let d = e.eval_dual(x);
                (d.val, d.grad, d.hess)
            }
            (Source::Closures { eval, grad, hess }, false) => {
                let mut g = ZERO_VEC;
                match grad {
                    Some(f) => f(x, &mut g),
                    None => g = self.fd_grad(x),
                }
                let mut h = ZERO_MAT;
                match hess {
                    Some(f) => f(x, &mut h),
                    None => h = self.fd_hess(x),
                }
                (eval(x), g, h)
            }
            (_, true) => (self.eval(x), self.fd_grad(x), self.fd_hess(x)),
        };
        crate::linalg::symmetrize(&mut hess, n);
        if !value.is_finite() || grad[..n].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("`{}` or its gradient at {x:?}", self.label)));
        }
        if (0..n).any(|i| hess[i][..n].iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("Hessian of `{}` at {x:?}", self.label)));
        }
        Ok((value, grad, hess))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (_, g, _) = self.derivatives(x)?;
        Ok(g[..self.n].to_vec())
    }

    pub fn fd_grad(&self, x: &[f64]) -> Vector {
        let n = self.n;
        let h = self.fd_step;
        let mut p = ZERO_VEC;
        p[..n].copy_from_slice(&x[..n]);
        let mut out = ZERO_VEC;
        for i in 0..n {
            p[i] = x[i] + h;
            let up = self.eval(&p[..n]);
            p[i] = x[i] - h;
            let down = self.eval(&p[..n]);
            p[i] = x[i];
            out[i] = (up - down) / (2.0 * h);
        }
        out
    }

    pub fn fd_hess(&self, x: &[f64]) -> Matrix {
        let n = self.n;
        let h = self.hess_step;
        let mut p = ZERO_VEC;
        p[..n].copy_from_slice(&x[..n]);
        let centre = self.eval(x);
        let mut at = |shifts: &[(usize, f64)]| {
            for &(k, s) in shifts {
                p[k] += s;
            }
            let v = self.eval(&p[..n]);
            for &(k, s) in shifts {
                p[k] -= s;
            }
            v
        };
        let mut out = ZERO_MAT;
        for i in 0..n {
            out[i][i] = (at(&[(i, h)]) - 2.0 * centre + at(&[(i, -h)])) / (h * h);
            for j in 0..i {
                let v = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)])
                    + at(&[(i, -h), (j, -h)]))
                    / (4.0 * h * h);
                out[i][j] = v;
                out[j][i] = v;
            }
        }
        out
    }
}

fn check_dim(n: usize) -> Result<()> {
    if n == 0 || n > MAX_DIM {
        return Err(Error::Dimension(format!("field dimension must be in 1..={MAX_DIM}, got {n}")));
    }
    Ok(())
}
