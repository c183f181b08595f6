//! Stack-allocated small dense linear algebra.
//!
//! Every quantity handled pointwise (frame matrices, jets, controls) lives in
//! dimension at most [`MAX_DIM`], so the hot loops of the grid solver and the
//! path simulator never touch the heap.

use nalgebra::DMatrix;

/// Upper bound on the ambient dimension of every frame (covers H^1..H^3).
pub const MAX_DIM: usize = 8;

pub type Vector = [f64; MAX_DIM];
pub type Matrix = [[f64; MAX_DIM]; MAX_DIM];

pub const ZERO_VEC: Vector = [0.0; MAX_DIM];
pub const ZERO_MAT: Matrix = [[0.0; MAX_DIM]; MAX_DIM];

#[inline]
pub fn dot(a: &[f64], b: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..n {
        s += a[k] * b[k];
    }
    s
}

#[inline]
pub fn norm(a: &[f64], n: usize) -> f64 {
    dot(a, a, n).sqrt()
}

pub fn identity(m: usize) -> Matrix {
    let mut out = ZERO_MAT;
    for i in 0..m {
        out[i][i] = 1.0;
    }
    out
}

pub fn trace(a: &Matrix, m: usize) -> f64 {
    (0..m).map(|i| a[i][i]).sum()
}

/// `<A v, v>` for the leading m×m block.
pub fn quadratic_form(a: &Matrix, v: &[f64], m: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..m {
        for j in 0..m {
            s += a[i][j] * v[i] * v[j];
        }
    }
    s
}

/// `A B` for an (r×k)·(k×c) product of leading blocks.
pub fn matmul(a: &Matrix, b: &Matrix, r: usize, k: usize, c: usize) -> Matrix {
    let mut out = ZERO_MAT;
    for i in 0..r {
        for j in 0..c {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i][l] * b[l][j];
            }
            out[i][j] = s;
        }
    }
    out
}

/// `σ S σᵀ` with σ of shape m×n and S of shape n×n.
pub fn congruence(sigma: &Matrix, s: &Matrix, m: usize, n: usize) -> Matrix {
    let mut tmp = ZERO_MAT; // σ S, m×n
    for i in 0..m {
        for l in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += sigma[i][k] * s[k][l];
            }
            tmp[i][l] = acc;
        }
    }
    let mut out = ZERO_MAT;
    for i in 0..m {
        for j in 0..=i {
            let mut acc = 0.0;
            for l in 0..n {
                acc += tmp[i][l] * sigma[j][l];
            }
            out[i][j] = acc;
            out[j][i] = acc;
        }
    }
    out
}

pub fn symmetrize(a: &mut Matrix, n: usize) {
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[i][j] + a[j][i]);
            a[i][j] = v;
            a[j][i] = v;
        }
    }
}

pub fn to_dmatrix(a: &Matrix, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |i, j| a[i][j])
}

pub fn from_dmatrix(a: &DMatrix<f64>) -> Matrix {
    let mut out = ZERO_MAT;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out[i][j] = a[(i, j)];
        }
    }
    out
}

/// Eigen-decomposition of a small symmetric matrix.
#[derive(Debug, Clone, Copy)]
pub struct SymEigen {
    pub dim: usize,
    /// Ascending.
    pub values: Vector,
    /// `vectors[k]` is the unit eigenvector for `values[k]`.
    pub vectors: Matrix,
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.dim - 1]
    }
}

/// Symmetric eigensolver for the leading m×m block: closed form for m ≤ 2,
/// cyclic Jacobi rotations otherwise.
pub fn sym_eigen(a: &Matrix, m: usize) -> SymEigen {
    assert!((1..=MAX_DIM).contains(&m));
    match m {
        1 => {
            let mut values = ZERO_VEC;
            values[0] = a[0][0];
            let mut vectors = ZERO_MAT;
            vectors[0][0] = 1.0;
            SymEigen {
                dim: 1,
                values,
                vectors,
            }
        }
        2 => eigen_2x2(a[0][0], 0.5 * (a[0][1] + a[1][0]), a[1][1]),
        _ => jacobi(a, m),
    }
}

fn eigen_2x2(a: f64, b: f64, d: f64) -> SymEigen {
    let mean = 0.5 * (a + d);
    let half_diff = 0.5 * (a - d);
    let radius = half_diff.hypot(b);
    let mut values = ZERO_VEC;
    values[0] = mean - radius;
    values[1] = mean + radius;
    let mut vectors = ZERO_MAT;
    if radius == 0.0 {
        vectors[0][0] = 1.0;
        vectors[1][1] = 1.0;
    } else {
        let theta = 0.5 * (2.0 * b).atan2(a - d);
        let (s, c) = theta.sin_cos();
        vectors[1][0] = c;
        vectors[1][1] = s;
        vectors[0][0] = -s;
        vectors[0][1] = c;
    }
    SymEigen {
        dim: 2,
        values,
        vectors,
    }
}

fn jacobi(input: &Matrix, m: usize) -> SymEigen {
    let mut a = *input;
    symmetrize(&mut a, m);
    let mut v = identity(m);
    let scale: f64 = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| a[i][j] * a[i][j])
        .sum::<f64>()
        .sqrt();
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..m {
            for j in (i + 1)..m {
                off += a[i][j] * a[i][j];
            }
        }
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..m {
            for q in (p + 1)..m {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..m {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..m {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..m {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let mut values = ZERO_VEC;
    let mut vectors = ZERO_MAT;
    for (k, &idx) in order.iter().enumerate() {
        values[k] = a[idx][idx];
        for r in 0..m {
            vectors[k][r] = v[r][idx];
        }
    }
    SymEigen {
        dim: m,
        values,
        vectors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn sym_from(entries: &[f64], m: usize) -> Matrix {
        let mut a = ZERO_MAT;
        let mut k = 0;
        for i in 0..m {
            for j in 0..=i {
                a[i][j] = entries[k];
                a[j][i] = entries[k];
                k += 1;
            }
        }
        a
    }

    #[test]
    fn diagonal_2x2() {
        let mut a = ZERO_MAT;
        a[0][0] = 1.0;
        a[1][1] = 3.0;
        let e = sym_eigen(&a, 2);
        assert_eq!(e.min(), 1.0);
        assert_eq!(e.max(), 3.0);
        assert!((e.vectors[1][1].abs() - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn matches_nalgebra(m in 1usize..6, entries in prop::collection::vec(-5.0f64..5.0, 21)) {
            let a = sym_from(&entries, m);
            let ours = sym_eigen(&a, m);
            let reference = SymmetricEigen::new(to_dmatrix(&a, m, m));
            let mut expected: Vec<f64> = reference.eigenvalues.iter().copied().collect();
            expected.sort_by(|x, y| x.total_cmp(y));
            for k in 0..m {
                prop_assert!((ours.values[k] - expected[k]).abs() < 1e-10);
                // A v = λ v
                let v = &ours.vectors[k];
                for i in 0..m {
                    let av: f64 = (0..m).map(|j| a[i][j] * v[j]).sum();
                    prop_assert!((av - ours.values[k] * v[i]).abs() < 1e-9);
                }
                prop_assert!((norm(v, m) - 1.0).abs() < 1e-12);
            }
        }
    }
}
