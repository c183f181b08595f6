//! Pointwise horizontal differential operators.
//!
//! Everything is derived from a [`HorizontalJet`]: the horizontal gradient
//! `𝒳u = σDu`, the correction `A_ij = ½⟨∇_{X_i}X_j + ∇_{X_j}X_i, Du⟩` and the
//! symmetrized horizontal Hessian `S̃ = σD²uσᵀ + A`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::Frame;
use crate::linalg::{self, Matrix, SymEigen, Vector, ZERO_MAT, ZERO_VEC};

/// All horizontal first- and second-order data of `u` at one point.
#[derive(Debug, Clone, Copy)]
pub struct HorizontalJet {
    pub n: usize,
    pub m: usize,
    pub point: Vector,
    pub euclid_grad: Vector,
    pub horiz_grad: Vector,
    pub correction: Matrix,
    pub horiz_hess: Matrix,
}

impl HorizontalJet {
    /// Assembles the jet from Euclidean derivatives already at hand.
    pub fn from_derivatives(frame: &Frame, x: &[f64], du: &Vector, d2u: &Matrix) -> HorizontalJet {
        let n = frame.ambient_dim();
        let m = frame.horizontal_rank();
        let mut sigma = ZERO_MAT;
        frame.sigma_into(x, &mut sigma);
        let mut horiz_grad = ZERO_VEC;
        for i in 0..m {
            horiz_grad[i] = linalg::dot(&sigma[i], du, n);
        }
        let mut correction = ZERO_MAT;
        let mut a = ZERO_VEC;
        let mut b = ZERO_VEC;
        for i in 0..m {
            for j in 0..=i {
                frame.nabla_into(i, j, x, &mut a);
                let v = if i == j {
                    linalg::dot(&a, du, n)
                } else {
                    frame.nabla_into(j, i, x, &mut b);
                    0.5 * (linalg::dot(&a, du, n) + linalg::dot(&b, du, n))
                };
                correction[i][j] = v;
                correction[j][i] = v;
            }
        }
        let mut horiz_hess = linalg::congruence(&sigma, d2u, m, n);
        for i in 0..m {
            for j in 0..m {
                horiz_hess[i][j] += correction[i][j];
            }
        }
        let mut point = ZERO_VEC;
        point[..n].copy_from_slice(&x[..n]);
        HorizontalJet {
            n,
            m,
            point,
            euclid_grad: *du,
            horiz_grad,
            correction,
            horiz_hess,
        }
    }

    pub fn horiz_grad_norm(&self) -> f64 {
        linalg::norm(&self.horiz_grad, self.m)
    }

    /// `Δ₀u = Tr S̃`.
    pub fn laplacian(&self) -> f64 {
        linalg::trace(&self.horiz_hess, self.m)
    }

    /// `Δ₀,∞u = ⟨S̃ q, q⟩` with `q = 𝒳u/|𝒳u|`.
    pub fn inf_laplacian(&self, char_tol: f64) -> Result<f64> {
        let g = self.horiz_grad_norm();
        if g <= char_tol {
            return Err(Error::Characteristic {
                horizontal_gradient_norm: g,
            });
        }
        let mut q = ZERO_VEC;
        for i in 0..self.m {
            q[i] = self.horiz_grad[i] / g;
        }
        Ok(linalg::quadratic_form(&self.horiz_hess, &q, self.m))
    }

    /// `k₀ = (Δ₀u − Δ₀,∞u)/|𝒳u|`, positive on convex surfaces with `u` increasing outward.
    pub fn mean_curvature(&self, char_tol: f64) -> Result<f64> {
        let inf = self.inf_laplacian(char_tol)?;
        Ok((self.laplacian() - inf) / self.horiz_grad_norm())
    }

    pub fn is_characteristic(&self, char_tol: f64) -> bool {
        self.horiz_grad_norm() <= char_tol
    }

    pub fn hess_eigen(&self) -> SymEigen {
        linalg::sym_eigen(&self.horiz_hess, self.m)
    }

    pub fn horiz_grad_vec(&self) -> Vec<f64> {
        self.horiz_grad[..self.m].to_vec()
    }

    pub fn horiz_hess_rows(&self) -> Vec<Vec<f64>> {
        (0..self.m).map(|i| self.horiz_hess[i][..self.m].to_vec()).collect()
    }

    pub fn correction_rows(&self) -> Vec<Vec<f64>> {
        (0..self.m).map(|i| self.correction[i][..self.m].to_vec()).collect()
    }
}

fn check_compatible(frame: &Frame, field: &ScalarField, x: &[f64]) -> Result<()> {
    let n = frame.ambient_dim();
    if field.dim() != n || x.len() != n {
        return Err(Error::Dimension(format!(
            "frame `{}` lives in R^{n}, field has {} and point {} coordinates",
            frame.label(),
            field.dim(),
            x.len()
        )));
    }
    Ok(())
}

pub fn jet(frame: &Frame, field: &ScalarField, x: &[f64]) -> Result<HorizontalJet> {
    check_compatible(frame, field, x)?;
    let (_, du, d2u) = field.derivatives(x)?;
    let jet = HorizontalJet::from_derivatives(frame, x, &du, &d2u);
    let m = jet.m;
    let finite = jet.horiz_grad[..m].iter().all(|v| v.is_finite())
        && (0..m).all(|i| jet.horiz_hess[i][..m].iter().all(|v| v.is_finite()));
    if !finite {
        return Err(Error::NonFinite(format!("horizontal jet at {x:?}")));
    }
    Ok(jet)
}

pub fn horizontal_laplacian(jet: &HorizontalJet) -> f64 {
    jet.laplacian()
}

pub fn horizontal_inf_laplacian(jet: &HorizontalJet, char_tol: f64) -> Result<f64> {
    jet.inf_laplacian(char_tol)
}

/// Mean curvature of the level set of `field` through `x`, using the field's
/// default characteristic threshold.
pub fn horizontal_mean_curvature(frame: &Frame, field: &ScalarField, x: &[f64]) -> Result<f64> {
    jet(frame, field, x)?.mean_curvature(field.default_char_tol())
}

pub fn is_characteristic(jet: &HorizontalJet, char_tol: f64) -> bool {
    jet.is_characteristic(char_tol)
}

/// Returns the sampled points at which the level set is characteristic.
pub fn char_scan(
    frame: &Frame,
    field: &ScalarField,
    samples: &[Vec<f64>],
    char_tol: f64,
) -> Result<Vec<Vec<f64>>> {
    if samples.is_empty() {
        return Err(Error::Empty("characteristic scan needs at least one sample".into()));
    }
    let mut hits = Vec::new();
    for x in samples {
        if jet(frame, field, x)?.is_characteristic(char_tol) {
            hits.push(x.clone());
        }
    }
    Ok(hits)
}

/// Samplers producing points on rotationally symmetric surfaces around the
/// z-axis. Polar grids include both poles.
pub mod samplers {
    use super::PI;

    /// `x² + y² + z² = R²` on an `n_polar × n_azimuth` grid.
    pub fn sphere(radius: f64, n_polar: usize, n_azimuth: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(n_polar * n_azimuth);
        for i in 0..n_polar {
            let theta = if n_polar > 1 {
                PI * i as f64 / (n_polar - 1) as f64
            } else {
                0.0
            };
            let (s, c) = theta.sin_cos();
            let (s, c) = snap(s, c, i, n_polar);
            for j in 0..ring(s, n_azimuth) {
                let phi = 2.0 * PI * j as f64 / n_azimuth as f64;
                out.push(vec![radius * s * phi.cos(), radius * s * phi.sin(), radius * c]);
            }
        }
        out
    }

    /// `(x² + y²)² + 16 z² = R⁴`, parametrized by `r² = R² sin θ`, `4z = R² cos θ`.
    pub fn koranyi(radius: f64, n_polar: usize, n_azimuth: usize) -> Vec<Vec<f64>> {
        let r2 = radius * radius;
        let mut out = Vec::with_capacity(n_polar * n_azimuth);
        for i in 0..n_polar {
            let theta = if n_polar > 1 {
                PI * i as f64 / (n_polar - 1) as f64
            } else {
                0.0
            };
            let (s, c) = theta.sin_cos();
            let (s, c) = snap(s, c, i, n_polar);
            let r = (r2 * s).sqrt();
            for j in 0..ring(s, n_azimuth) {
                let phi = 2.0 * PI * j as f64 / n_azimuth as f64;
                out.push(vec![r * phi.cos(), r * phi.sin(), 0.25 * r2 * c]);
            }
        }
        out
    }

    /// `x² + y² = R²` for `z` in `[z_lo, z_hi]`.
    pub fn cylinder(radius: f64, z_lo: f64, z_hi: f64, n_z: usize, n_azimuth: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(n_z * n_azimuth);
        for i in 0..n_z {
            let z = if n_z > 1 {
                z_lo + (z_hi - z_lo) * i as f64 / (n_z - 1) as f64
            } else {
                z_lo
            };
            for j in 0..n_azimuth {
                let phi = 2.0 * PI * j as f64 / n_azimuth as f64;
                out.push(vec![radius * phi.cos(), radius * phi.sin(), z]);
            }
        }
        out
    }

    /// Torus of revolution around the z-axis: tube radius `b` around the circle of radius `a > b`.
    pub fn torus(a: f64, b: f64, n_tube: usize, n_azimuth: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(n_tube * n_azimuth);
        for i in 0..n_tube {
            let psi = 2.0 * PI * i as f64 / n_tube as f64;
            let r = a + b * psi.cos();
            let z = b * psi.sin();
            for j in 0..n_azimuth {
                let phi = 2.0 * PI * j as f64 / n_azimuth as f64;
                out.push(vec![r * phi.cos(), r * phi.sin(), z]);
            }
        }
        out
    }

    // A pole is a single point, not a ring.
    fn ring(s: f64, n_azimuth: usize) -> usize {
        if s == 0.0 {
            n_azimuth.min(1)
        } else {
            n_azimuth
        }
    }

    // Exact poles, so that the axis points are hit without rounding.
    fn snap(s: f64, c: f64, i: usize, n: usize) -> (f64, f64) {
        if i == 0 {
            (0.0, 1.0)
        } else if i + 1 == n {
            (0.0, -1.0)
        } else {
            (s, c)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h1() -> Frame {
        Frame::heisenberg(1).unwrap()
    }

    fn field(src: &str, n: usize) -> ScalarField {
        ScalarField::parse(src, n).unwrap()
    }

    #[test]
    fn heisenberg_jet_of_z() {
        let j = jet(&h1(), &field("x3", 3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(j.horiz_grad_vec(), vec![-1.0, 0.5]);
        assert!(j.correction_rows().iter().flatten().all(|&v| v == 0.0));
        assert_eq!(j.laplacian(), 0.0);
        let j = jet(&h1(), &field("x3", 3), &[0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            j.inf_laplacian(1e-8),
            Err(Error::Characteristic { .. })
        ));
    }

    #[test]
    fn laplacians() {
        let e2 = Frame::euclidean(2).unwrap();
        let j = jet(&e2, &field("x1^2+x2^2", 2), &[1.0, 0.0]).unwrap();
        assert_eq!(j.laplacian(), 4.0);
        assert_eq!(j.inf_laplacian(1e-8).unwrap(), 2.0);
        let j = jet(&h1(), &field("x1^2+x2^2", 3), &[0.4, -2.0, 7.0]).unwrap();
        assert!((j.laplacian() - 4.0).abs() < 1e-14);
        let j = jet(&h1(), &field("x1", 3), &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(j.inf_laplacian(1e-8).unwrap(), 0.0);
    }

    #[test]
    fn named_curvatures() {
        let k = horizontal_mean_curvature(&h1(), &field("(x1^2+x2^2)^2+16*x3^2-1", 3), &[1.0, 0.0, 0.0]).unwrap();
        assert!((k - 3.0).abs() < 1e-12);
        let k = horizontal_mean_curvature(&h1(), &field("x1^2+x2^2+x3^2-1", 3), &[1.0, 0.0, 0.0]).unwrap();
        assert!((k - 1.25).abs() < 1e-12);
        let k = horizontal_mean_curvature(&h1(), &field("0.6*x1+0.8*x2-2", 3), &[3.0, -1.0, 5.0]).unwrap();
        assert_eq!(k, 0.0);
    }

    #[test]
    fn characteristic_points() {
        let sphere = field("x1^2+x2^2+x3^2-4", 3);
        let j = jet(&h1(), &sphere, &[0.0, 0.0, 2.0]).unwrap();
        assert!(j.is_characteristic(1e-8));
        let kor = field("(x1^2+x2^2)^2+16*x3^2-16", 3);
        assert!(jet(&h1(), &kor, &[0.0, 0.0, 1.0]).unwrap().is_characteristic(1e-8));
        let plane = field("x1+2*x2-1", 3);
        assert!(!jet(&h1(), &plane, &[0.0, 0.0, 0.0]).unwrap().is_characteristic(1e-8));
    }

    #[test]
    fn scans() {
        let frame = h1();
        let sphere = field("x1^2+x2^2+x3^2-1", 3);
        let hits = char_scan(&frame, &sphere, &samplers::sphere(1.0, 64, 64), 1e-8).unwrap();
        assert!(!hits.is_empty());
        for p in &hits {
            assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12 && (p[2].abs() - 1.0).abs() < 1e-12);
        }
        let cyl = field("x1^2+x2^2-1", 3);
        assert!(char_scan(&frame, &cyl, &samplers::cylinder(1.0, -2.0, 2.0, 64, 64), 1e-8)
            .unwrap()
            .is_empty());
        let torus = field("(sqrt(x1^2+x2^2)-2)^2+x3^2-0.25", 3);
        assert!(char_scan(&frame, &torus, &samplers::torus(2.0, 0.5, 64, 64), 1e-8)
            .unwrap()
            .is_empty());
        assert!(matches!(char_scan(&frame, &sphere, &[], 1e-8), Err(Error::Empty(_))));
    }

    fn builtins() -> Vec<Frame> {
        vec![
            Frame::euclidean(2).unwrap(),
            Frame::euclidean(3).unwrap(),
            h1(),
            Frame::heisenberg(2).unwrap(),
            Frame::grusin(),
            Frame::rototranslation(),
        ]
    }

    fn quadratic(n: usize, c: &[f64]) -> ScalarField {
        let mut terms = Vec::new();
        let mut k = 0;
        for i in 0..n {
            terms.push(format!("{}*x{}", c[k], i + 1));
            k += 1;
            for j in 0..=i {
                terms.push(format!("{}*x{}*x{}", c[k], i + 1, j + 1));
                k += 1;
            }
        }
        field(&terms.join("+").replace("+-", "-"), n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn decomposition_and_trace(which in 0usize..6, c in prop::collection::vec(-2.0f64..2.0, 20), x in prop::array::uniform5(-2.0f64..2.0)) {
            let frame = &builtins()[which];
            let n = frame.ambient_dim();
            let m = frame.horizontal_rank();
            let u = quadratic(n, &c);
            let x = &x[..n];
            let j = jet(frame, &u, x).unwrap();
            let (_, du, d2u) = u.derivatives(x).unwrap();
            let sigma = frame.sigma(x);
            let hess = linalg::to_dmatrix(&d2u, n, n);
            let core = &sigma * hess * sigma.transpose();
            let mut trace_a = 0.0;
            for i in 0..m {
                for k in 0..m {
                    let a = 0.5 * (frame.nabla(i, k, x).iter().zip(&du).map(|(p, q)| p * q).sum::<f64>()
                        + frame.nabla(k, i, x).iter().zip(&du).map(|(p, q)| p * q).sum::<f64>());
                    prop_assert!((j.horiz_hess[i][k] - core[(i, k)] - a).abs() < 1e-10);
                    prop_assert!((j.correction[i][k] - a).abs() < 1e-12);
                }
                trace_a += frame.nabla(i, i, x).iter().zip(&du).map(|(p, q)| p * q).sum::<f64>();
            }
            prop_assert!((j.laplacian() - core.trace() - trace_a).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn pinching_and_fd(which in 0usize..6, c in prop::collection::vec(-2.0f64..2.0, 20), x in prop::array::uniform5(-2.0f64..2.0)) {
            let frame = &builtins()[which];
            let n = frame.ambient_dim();
            let u = quadratic(n, &c);
            let x = &x[..n];
            let j = jet(frame, &u, x).unwrap();
            prop_assume!(!j.is_characteristic(1e-3));
            let e = j.hess_eigen();
            let inf = j.inf_laplacian(1e-8).unwrap();
            prop_assert!(e.min() - 1e-10 <= inf && inf <= e.max() + 1e-10);
            let jf = jet(frame, &u.clone().finite_difference(), x).unwrap();
            prop_assert!((j.laplacian() - jf.laplacian()).abs() < 1e-4);
            prop_assert!((inf - jf.inf_laplacian(1e-4).unwrap()).abs() < 1e-4);
            let k = j.mean_curvature(1e-8).unwrap();
            let kf = jf.mean_curvature(1e-4).unwrap();
            prop_assert!((k - kf).abs() < 1e-4 * (1.0 + k.abs()) / j.horiz_grad_norm().min(1.0));
        }

        #[test]
        fn euclidean_reduction(c in prop::collection::vec(-2.0f64..2.0, 20), x in prop::array::uniform3(-2.0f64..2.0)) {
            let frame = Frame::euclidean(3).unwrap();
            let u = quadratic(3, &c);
            let (_, du, d2u) = u.derivatives(&x).unwrap();
            let g = linalg::norm(&du, 3);
            prop_assume!(g > 1e-3);
            let lap = linalg::trace(&d2u, 3);
            let inf = linalg::quadratic_form(&d2u, &du, 3) / (g * g);
            let classical = (lap - inf) / g;
            let k = jet(&frame, &u, &x).unwrap().mean_curvature(1e-8).unwrap();
            prop_assert!((k - classical).abs() < 1e-10 * (1.0 + classical.abs()));
        }
    }
}
