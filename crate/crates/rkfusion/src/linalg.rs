//! Dense symmetric helpers.  Every factorization goes through a symmetric
//! eigendecomposition so that square roots, inverses and pseudo-inverses
//! share one notion of "numerically zero".

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative eigenvalue floor below which a direction counts as null.
pub const CLAMP: f64 = 1e-12;

/// Eigendecomposition with eigenvalues sorted ascending.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn sym_eig(a: &DMatrix<f64>) -> SymEig {
    let n = a.nrows();
    if n == 0 {
        return SymEig { values: DVector::zeros(0), vectors: DMatrix::zeros(0, 0) };
    }
    let e = symmetrize(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| e.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &e.eigenvectors.column(i));
    }
    SymEig { values, vectors }
}

impl SymEig {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Indices whose eigenvalue exceeds `rel * max(|λ|)`.
    pub fn retained(&self, rel: f64) -> Vec<usize> {
        let scale = self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let floor = rel * scale;
        (0..self.values.len()).filter(|&i| scale > 0.0 && self.values[i] > floor).collect()
    }

    /// U f(Λ) Uᵀ over the retained directions; null directions map to zero.
    pub fn apply(&self, rel: f64, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.values.len();
        let mut out = DMatrix::zeros(n, n);
        for i in self.retained(rel) {
            let u = self.vectors.column(i);
            out += (u * u.transpose()) * f(self.values[i]);
        }
        out
    }
}

pub fn lambda_max(a: &DMatrix<f64>) -> f64 {
    sym_eig(a).max()
}

pub fn lambda_min(a: &DMatrix<f64>) -> f64 {
    sym_eig(a).min()
}

/// λ_max / λ_min for a symmetric matrix, infinite when λ_min ≤ 0.
pub fn condition(a: &DMatrix<f64>) -> f64 {
    let e = sym_eig(a);
    let (lo, hi) = (e.min(), e.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn symmetry_residual(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).amax()
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().singular_values().max()
}

/// Inverse of a symmetric positive definite matrix, refusing anything
/// whose smallest eigenvalue falls below the clamp.
pub fn inverse_spd(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let e = sym_eig(a);
    let (lo, hi) = (e.min(), e.max());
    if !(hi > 0.0) || lo <= CLAMP * hi {
        return Err(Error::Singular { what: what.to_string(), cond: if lo > 0.0 { hi / lo } else { f64::INFINITY } });
    }
    Ok(e.apply(0.0, |v| 1.0 / v))
}

pub fn pinv_sym(a: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    sym_eig(a).apply(rel, |v| 1.0 / v)
}

/// Coordinates for a positive semidefinite metric G on ℝⁿ.
///
/// With G = U_r Λ_r U_rᵀ (retained part), `r = Λ_r^{1/2} U_rᵀ` maps a
/// coefficient vector to orthonormal coordinates of the function it
/// represents, and `r_pinv` is a right inverse on those coordinates.
#[derive(Debug, Clone)]
pub struct Metric {
    pub gram: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub r_pinv: DMatrix<f64>,
    pub pinv: DMatrix<f64>,
    pub eig: SymEig,
    pub rank: usize,
}

impl Metric {
    pub fn new(gram: &DMatrix<f64>, rel: f64) -> Self {
        let eig = sym_eig(gram);
        let keep = eig.retained(rel);
        let n = gram.nrows();
        let rank = keep.len();
        let mut r = DMatrix::zeros(rank, n);
        let mut r_pinv = DMatrix::zeros(n, rank);
        for (k, &i) in keep.iter().enumerate() {
            let s = eig.values[i].sqrt();
            let u = eig.vectors.column(i);
            r.set_row(k, &(u.transpose() * s));
            r_pinv.set_column(k, &(u / s));
        }
        let pinv = eig.apply(rel, |v| 1.0 / v);
        Metric { gram: symmetrize(gram), r, r_pinv, pinv, eig, rank }
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(&(&self.gram * b))
    }

    pub fn norm(&self, a: &DVector<f64>) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }

    pub fn coords(&self, a: &DVector<f64>) -> DVector<f64> {
        &self.r * a
    }

    pub fn from_coords(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.r_pinv * u
    }

    /// Matrix of a coefficient-space operator in orthonormal coordinates.
    pub fn op_coords(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        &self.r * a * &self.r_pinv
    }

    pub fn op_from_coords(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        &self.r_pinv * a * &self.r
    }

    /// A quadratic form Q in orthonormal coordinates: R⁺ᵀ Q R⁺.  Its top
    /// eigenvalue is sup aᵀQa / aᵀGa when Q vanishes on null(G).
    pub fn quadratic_coords(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        self.r_pinv.transpose() * q * &self.r_pinv
    }

    /// Operator norm induced by the metric (on the quotient by its null space).
    pub fn op_norm(&self, a: &DMatrix<f64>) -> f64 {
        spectral_norm(&self.op_coords(a))
    }

    /// Canonical representative: the component in range(G).
    pub fn canonical(&self, a: &DVector<f64>) -> DVector<f64> {
        &self.r_pinv * (&self.r * a)
    }
}

/// Block-diagonal assembly of two square blocks.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(p + q, p + q);
    out.view_mut((0, 0), (p, p)).copy_from(a);
    out.view_mut((p, p), (q, q)).copy_from(b);
    out
}

pub fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eig_sorted_and_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let e = sym_eig(&a);
        assert!(e.values[0] <= e.values[1] && e.values[1] <= e.values[2]);
        let back = e.apply(0.0, |v| v);
        assert_relative_eq!(back, a, epsilon = 1e-12);
    }

    #[test]
    fn metric_quotients_null_space() {
        // rank-one metric [1 1; 1 1]
        let g = DMatrix::from_element(2, 2, 1.0);
        let m = Metric::new(&g, CLAMP);
        assert_eq!(m.rank, 1);
        let v = DVector::from_vec(vec![2.0, -1.0]);
        assert_relative_eq!(m.norm(&v), 1.0, epsilon = 1e-14);
        let c = m.canonical(&v);
        assert_relative_eq!(c[0], c[1], epsilon = 1e-14);
        assert_relative_eq!(m.norm(&c), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn inverse_refuses_singular() {
        let g = DMatrix::from_element(2, 2, 1.0);
        assert!(inverse_spd(&g, "g").is_err());
        let inv = inverse_spd(&DMatrix::from_diagonal_element(2, 2, 4.0), "d").unwrap();
        assert_relative_eq!(inv[(0, 0)], 0.25);
    }
}
