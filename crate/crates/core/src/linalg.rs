//! Dense symmetric linear-algebra helpers built on nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted ascending.
#[derive(Debug, Clone)]
pub struct SortedEigen<T: Scalar> {
    pub values: DVector<T>,
    /// Eigenvectors stored column-wise, in the same order as `values`.
    pub vectors: DMatrix<T>,
}

impl<T: Scalar> SortedEigen<T> {
    pub fn new(m: &DMatrix<T>) -> Self {
        let n = m.nrows();
        if n == 0 {
            return Self {
                values: DVector::zeros(0),
                vectors: DMatrix::zeros(0, 0),
            };
        }
        let eig = SymmetricEigen::new(symmetrize(m));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .partial_cmp(&eig.eigenvalues[b])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Self { values, vectors }
    }

    /// Largest eigenvalue magnitude, i.e. the spectral norm.
    pub fn spectral_norm(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |acc, v| acc.max(v.abs()))
    }
}

pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// `‖M − Mᵀ‖_F / ‖M‖_F`, zero for the zero matrix.
pub fn relative_asymmetry<T: Scalar>(m: &DMatrix<T>) -> T {
    let norm = m.norm();
    if norm == T::zero() {
        return T::zero();
    }
    (m - m.transpose()).norm() / norm
}

/// Spectral norm of a symmetric matrix from its eigenvalues alone.
pub fn spectral_norm_sym<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::zero();
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .fold(T::zero(), |acc, v| acc.max(v.abs()))
}

/// Largest deviation of `BᵀB` from the identity.
pub fn gram_residual<T: Scalar>(basis: &DMatrix<T>) -> T {
    let k = basis.ncols();
    let gram = basis.transpose() * basis - DMatrix::<T>::identity(k, k);
    gram.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
}

pub fn check_orthonormal<T: Scalar>(basis: &DMatrix<T>, tol: f64) -> Result<()> {
    let residual = gram_residual(basis);
    if residual > T::lit(tol) {
        return Err(Error::NonOrthonormal {
            residual: residual.as_f64(),
        });
    }
    Ok(())
}

/// Orthonormal basis for the column range of `columns`, dropping directions
/// whose singular value falls below `rel_tol · σ_max`.
pub fn orthonormal_range<T: Scalar>(columns: &DMatrix<T>, rel_tol: f64) -> DMatrix<T> {
    let n = columns.nrows();
    if columns.ncols() == 0 || columns.norm() == T::zero() {
        return DMatrix::zeros(n, 0);
    }
    let svd = columns.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd
        .singular_values
        .iter()
        .fold(T::zero(), |acc, s| acc.max(*s));
    let cut = smax * T::lit(rel_tol);
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > cut)
        .map(|(i, _)| i)
        .collect();
    let mut out = DMatrix::zeros(n, keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        out.set_column(dst, &u.column(src));
    }
    out
}

/// Orthonormal basis of the orthogonal complement of span(`columns`) in ℝⁿ.
pub fn orthonormal_complement<T: Scalar>(columns: &DMatrix<T>, rel_tol: f64) -> DMatrix<T> {
    let n = columns.nrows();
    let range = orthonormal_range(columns, rel_tol);
    if range.ncols() == 0 {
        return DMatrix::identity(n, n);
    }
    let projector = &range * range.transpose();
    let eig = SortedEigen::new(&projector);
    let half = T::lit(0.5);
    let keep: Vec<usize> = (0..n).filter(|&k| eig.values[k] < half).collect();
    let mut out = DMatrix::zeros(n, keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        out.set_column(dst, &eig.vectors.column(src));
    }
    out
}

/// Generalized symmetric-definite eigenproblem `A v = μ B v` with `B` positive
/// definite. Returns eigenpairs sorted by descending `μ`; eigenvectors are
/// `B`-orthonormal.
pub fn generalized_eigen_desc<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
) -> Option<(DVector<T>, DMatrix<T>)> {
    let n = a.nrows();
    let chol = symmetrize(b).cholesky()?;
    let l = chol.l();
    // C = L⁻¹ A L⁻ᵀ
    let linv_a = l.solve_lower_triangular(&symmetrize(a))?;
    let c = l.solve_lower_triangular(&linv_a.transpose())?;
    let eig = SortedEigen::new(&c);
    let lt = l.transpose();
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for k in 0..n {
        let src = n - 1 - k;
        values[k] = eig.values[src];
        let y = eig.vectors.column(src).into_owned();
        let v = lt.solve_upper_triangular(&y)?;
        vectors.set_column(k, &v);
    }
    Some((values, vectors))
}

/// Gathers the rows `rows` and columns `cols` of `m` into a new matrix.
pub fn submatrix<T: Scalar>(m: &DMatrix<T>, rows: &[usize], cols: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn gather<T: Scalar>(v: &DVector<T>, idx: &[usize]) -> DVector<T> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// `Mᵀ · diag(w) · M`, skipping rows with zero weight.
pub fn weighted_gram<T: Scalar>(m: &DMatrix<T>, weights: &DVector<T>) -> DMatrix<T> {
    let rows: Vec<usize> = (0..m.nrows()).filter(|&i| weights[i] != T::zero()).collect();
    let mut scaled = DMatrix::zeros(rows.len(), m.ncols());
    let mut plain = DMatrix::zeros(rows.len(), m.ncols());
    for (dst, &i) in rows.iter().enumerate() {
        let w = weights[i];
        for j in 0..m.ncols() {
            plain[(dst, j)] = m[(i, j)];
            scaled[(dst, j)] = m[(i, j)] * w;
        }
    }
    symmetrize(&(plain.transpose() * scaled))
}
