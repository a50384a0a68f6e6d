//! Finite-codimension Loewner comparisons through spectral inertia.
//!
//! `A ≤_d B` holds when `B − A` is positive semidefinite on the orthogonal
//! complement of some subspace of dimension at most `d`. For symmetric
//! matrices that is equivalent to `B − A` having at most `d` negative
//! eigenvalues.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fracops::check_len;
use crate::linalg::{check_orthonormal, relative_asymmetry, spectral_norm_sym, SortedEigen};
use crate::scalar::Scalar;

/// Default relative eigenvalue tolerance for inertia counts.
pub const LOEWNER_TOL: f64 = 1e-8;

/// Largest relative asymmetry accepted by the inertia routines.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Gram residual accepted for projection bases.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `A ≤_d B`.
    Leq,
    /// `A ≥_d B`.
    Geq,
    /// `A =_fin B` at threshold `d`.
    EqFin,
}

/// Outcome of a finite-codimension Loewner comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderVerdict {
    pub holds: bool,
    /// Negative count of the tested difference; for [`Direction::EqFin`] the
    /// larger of the two directional counts.
    pub neg_count: usize,
    /// Directional counts `(neg(B − A), neg(A − B))`, filled for `EqFin` only.
    pub directional_counts: Option<(usize, usize)>,
    pub d_threshold: usize,
    /// Ascending eigenvalues of the tested difference.
    pub eigenvalues: Vec<f64>,
    pub tol: f64,
    pub direction: Direction,
}

fn check_symmetric<T: Scalar>(s: &DMatrix<T>) -> Result<()> {
    if s.nrows() != s.ncols() {
        return Err(Error::DimensionMismatch {
            what: "square matrix",
            expected: s.nrows(),
            got: s.ncols(),
        });
    }
    let asym = relative_asymmetry(s);
    if asym > T::lit(SYMMETRY_TOL) {
        return Err(Error::Asymmetric {
            asymmetry: asym.as_f64(),
        });
    }
    Ok(())
}

fn count_below<T: Scalar>(eig: &SortedEigen<T>, tol: f64) -> usize {
    let cut = -eig.spectral_norm() * T::lit(tol);
    eig.values.iter().filter(|v| **v < cut).count()
}

/// Number of eigenvalues of `s` below `−tol·‖s‖₂`.
pub fn neg_eig_count<T: Scalar>(s: &DMatrix<T>, tol: f64) -> Result<usize> {
    check_symmetric(s)?;
    Ok(count_below(&SortedEigen::new(s), tol))
}

/// Tests `neg(diff) ≤ d` where `diff` already equals `B − A`.
pub fn leq_d_diff<T: Scalar>(diff: &DMatrix<T>, d: usize, tol: f64) -> Result<OrderVerdict> {
    check_symmetric(diff)?;
    let eig = SortedEigen::new(diff);
    let neg_count = count_below(&eig, tol);
    Ok(OrderVerdict {
        holds: neg_count <= d,
        neg_count,
        directional_counts: None,
        d_threshold: d,
        eigenvalues: eig.values.iter().map(|v| v.as_f64()).collect(),
        tol,
        direction: Direction::Leq,
    })
}

fn check_same_shape<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<()> {
    check_len("matrix rows", a.nrows(), b.nrows())?;
    check_len("matrix columns", a.ncols(), b.ncols())
}

/// `A ≤_d B`.
pub fn leq_d<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, d: usize, tol: f64) -> Result<OrderVerdict> {
    check_same_shape(a, b)?;
    leq_d_diff(&(b - a), d, tol)
}

/// `A ≥_d B`, i.e. `B ≤_d A`.
pub fn geq_d<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, d: usize, tol: f64) -> Result<OrderVerdict> {
    check_same_shape(a, b)?;
    let mut verdict = leq_d_diff(&(a - b), d, tol)?;
    verdict.direction = Direction::Geq;
    Ok(verdict)
}

/// `A ≤_d B` and `B ≤_d A`.
pub fn eq_fin<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, d: usize, tol: f64) -> Result<OrderVerdict> {
    check_same_shape(a, b)?;
    let diff = b - a;
    check_symmetric(&diff)?;
    let eig = SortedEigen::new(&diff);
    let up = count_below(&eig, tol);
    let cut = eig.spectral_norm() * T::lit(tol);
    let down = eig.values.iter().filter(|v| **v > cut).count();
    let neg_count = up.max(down);
    Ok(OrderVerdict {
        holds: neg_count <= d,
        neg_count,
        directional_counts: Some((up, down)),
        d_threshold: d,
        eigenvalues: eig.values.iter().map(|v| v.as_f64()).collect(),
        tol,
        direction: Direction::EqFin,
    })
}

/// Orthonormal eigenvectors of `s` for its eigenvalues below `−tol·‖s‖₂`:
/// a subspace of maximal dimension on which the quadratic form is negative.
pub fn negative_witness<T: Scalar>(s: &DMatrix<T>, tol: f64) -> Result<DMatrix<T>> {
    check_symmetric(s)?;
    let eig = SortedEigen::new(s);
    let k = count_below(&eig, tol);
    Ok(eig.vectors.columns(0, k).into_owned())
}

/// `‖basisᵀ · s · basis‖₂` for an orthonormal `basis`.
pub fn projected_operator_norm<T: Scalar>(s: &DMatrix<T>, basis: &DMatrix<T>) -> Result<T> {
    check_len("basis rows", s.nrows(), basis.nrows())?;
    check_orthonormal(basis, ORTHONORMAL_TOL)?;
    if basis.ncols() == 0 {
        return Ok(T::zero());
    }
    Ok(spectral_norm_sym(&(basis.transpose() * s * basis)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn counts_negative_diagonal_entries() {
        assert_eq!(neg_eig_count(&DMatrix::<f64>::zeros(3, 3), LOEWNER_TOL).unwrap(), 0);
        assert_eq!(neg_eig_count(&diag(&[1.0, -1.0, -2.0]), LOEWNER_TOL).unwrap(), 2);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(neg_eig_count(&s, LOEWNER_TOL), Err(Error::Asymmetric { .. })));
    }

    #[test]
    fn threshold_decides_leq() {
        let a = DMatrix::<f64>::zeros(2, 2);
        let b = diag(&[1.0, -1.0]);
        assert!(!leq_d(&a, &b, 0, LOEWNER_TOL).unwrap().holds);
        let v = leq_d(&a, &b, 1, LOEWNER_TOL).unwrap();
        assert!(v.holds);
        assert_eq!(v.neg_count, 1);
        assert!(leq_d(&b, &b, 0, LOEWNER_TOL).unwrap().holds);
    }

    #[test]
    fn eq_fin_detects_shift() {
        let a = diag(&[1.0, 2.0, 3.0]);
        assert!(eq_fin(&a, &a, 0, LOEWNER_TOL).unwrap().holds);
        let b = &a + DMatrix::identity(3, 3) * 1e-3;
        let v = eq_fin(&a, &b, 2, LOEWNER_TOL).unwrap();
        assert!(!v.holds);
        assert_eq!(v.directional_counts, Some((0, 3)));
    }

    #[test]
    fn geq_swaps_arguments() {
        let a = diag(&[2.0, 2.0]);
        let b = diag(&[1.0, 3.0]);
        let v = geq_d(&a, &b, 0, LOEWNER_TOL).unwrap();
        assert!(!v.holds);
        assert_eq!(v.direction, Direction::Geq);
        assert!(geq_d(&a, &b, 1, LOEWNER_TOL).unwrap().holds);
    }

    #[test]
    fn witness_spans_negative_directions() {
        let s = diag(&[3.0, -1.0, -2.0, 0.0]);
        let w = negative_witness(&s, LOEWNER_TOL).unwrap();
        assert_eq!(w.ncols(), 2);
        let form = w.transpose() * &s * &w;
        assert!(SortedEigen::new(&form).values[1] < 0.0);
    }

    #[test]
    fn projected_norm_on_eigenvector() {
        let s = diag(&[3.0, -5.0, 1.0]);
        let full = DMatrix::identity(3, 3);
        assert!((projected_operator_norm(&s, &full).unwrap() - 5.0).abs() < 1e-12);
        let e = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        assert!((projected_operator_norm(&s, &e).unwrap() - 1.0).abs() < 1e-12);
        let bad = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 2.0]);
        assert!(matches!(
            projected_operator_norm(&s, &bad),
            Err(Error::NonOrthonormal { .. })
        ));
    }
}
