use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{
    assemble_dtn, derivative_from_solution, dtn_derivative, dtn_difference, solve_dirichlet, stiffness,
    Potential,
};
use crate::fracops::{check_len, NonlocalOperator, RegionMask};
use crate::loewner::{leq_d_diff, Direction, OrderVerdict};
use crate::scalar::Scalar;

/// Both sides of the monotonicity identity for one exterior datum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityGap {
    /// `gᵀ (Λ(q₁) − Λ(q₂)) g`.
    pub lhs: f64,
    /// `Σ m (q₁ − q₂) u₁²`.
    pub rhs: f64,
    /// `𝓑_{q₂}(u₂ − u₁, u₂ − u₁)`.
    pub energy: f64,
    /// `|lhs − rhs − energy|`.
    pub identity_residual: f64,
    /// `|lhs| + |rhs| + 1`, the scale the residual is compared against.
    pub scale: f64,
}

pub fn monotonicity_gap<T: Scalar>(
    op: &NonlocalOperator<T>,
    q1: &Potential<T>,
    q2: &Potential<T>,
    g: &nalgebra::DVector<T>,
) -> Result<MonotonicityGap> {
    let f = nalgebra::DVector::zeros(op.n_interior());
    let u1 = solve_dirichlet(op, q1, g, &f)?;
    let u2 = solve_dirichlet(op, q2, g, &f)?;
    let u1_i = op.interior_part(&u1);
    let u2_i = op.interior_part(&u2);
    // Λ g = L_EE g + L_EI u_I, so the L_EE terms cancel in the difference
    let lhs = g.dot(&op.l_ie.tr_mul(&(&u1_i - &u2_i)));
    let dq = q1.difference(q2);
    let rhs = (0..u1_i.len()).fold(T::zero(), |acc, i| acc + op.mass * dq.values[i] * u1_i[i] * u1_i[i]);
    let w = &u2_i - &u1_i;
    let energy = w.dot(&(stiffness(op, q2)? * &w));
    let (lhs, rhs, energy) = (lhs.as_f64(), rhs.as_f64(), energy.as_f64());
    Ok(MonotonicityGap {
        lhs,
        rhs,
        energy,
        identity_residual: (lhs - rhs - energy).abs(),
        scale: lhs.abs() + rhs.abs() + 1.0,
    })
}

/// `T_M = Λ′(q₀) χ_M`.
pub fn testing_operator<T: Scalar>(
    op: &NonlocalOperator<T>,
    q0: &Potential<T>,
    mask: &RegionMask,
) -> Result<DMatrix<T>> {
    check_len("mask", op.n_interior(), mask.len())?;
    if mask.is_empty() {
        return Err(Error::EmptyRegion);
    }
    dtn_derivative(op, q0, &Potential::new(mask.indicator())?)
}

pub(crate) fn testing_operator_from_solution<T: Scalar>(
    solution: &DMatrix<T>,
    mass: T,
    mask: &RegionMask,
) -> DMatrix<T> {
    derivative_from_solution(solution, mass, &mask.indicator())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointwiseOrder {
    Equal,
    /// `q₁ ≥ q₂` everywhere, strictly somewhere.
    Geq,
    /// `q₁ ≤ q₂` everywhere, strictly somewhere.
    Leq,
    Neither,
}

impl PointwiseOrder {
    pub fn of<T: Scalar>(q1: &Potential<T>, q2: &Potential<T>) -> Self {
        match (q1.dominates(q2), q2.dominates(q1)) {
            (true, true) => PointwiseOrder::Equal,
            (true, false) => PointwiseOrder::Geq,
            (false, true) => PointwiseOrder::Leq,
            (false, false) => PointwiseOrder::Neither,
        }
    }
}

/// Pointwise order of two potentials next to the Loewner verdicts of their DtN maps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConverseReport {
    pub pointwise: PointwiseOrder,
    pub d_q1: usize,
    pub d_q2: usize,
    /// `Λ(q₁) ≥_{d(q₂)} Λ(q₂)`.
    pub geq_verdict: OrderVerdict,
    /// `Λ(q₁) ≤_{d(q₁)} Λ(q₂)`.
    pub leq_verdict: OrderVerdict,
    /// Whether `q₁ ≥ q₂ ⇔ Λ(q₁) ≥_{d(q₂)} Λ(q₂)` and `q₁ ≤ q₂ ⇔ Λ(q₁) ≤_{d(q₁)} Λ(q₂)` both agree.
    pub agrees: bool,
}

pub fn converse_check<T: Scalar>(
    op: &NonlocalOperator<T>,
    q1: &Potential<T>,
    q2: &Potential<T>,
    tol: f64,
) -> Result<ConverseReport> {
    let l1 = assemble_dtn(op, q1)?;
    let l2 = assemble_dtn(op, q2)?;
    let diff = dtn_difference(&l1, &l2)?;
    let d_q1 = l1.resonance.d_q;
    let d_q2 = l2.resonance.d_q;
    let mut geq_verdict = leq_d_diff(&diff.matrix, d_q2, tol)?;
    geq_verdict.direction = Direction::Geq;
    let leq_verdict = leq_d_diff(&(-&diff.matrix), d_q1, tol)?;
    let pointwise = PointwiseOrder::of(q1, q2);
    let q1_geq = matches!(pointwise, PointwiseOrder::Geq | PointwiseOrder::Equal);
    let q1_leq = matches!(pointwise, PointwiseOrder::Leq | PointwiseOrder::Equal);
    Ok(ConverseReport {
        pointwise,
        d_q1,
        d_q2,
        agrees: q1_geq == geq_verdict.holds && q1_leq == leq_verdict.holds,
        geq_verdict,
        leq_verdict,
    })
}

/// Sign of a direction `r` next to the semidefiniteness of `Λ′(q) r`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearizedReport {
    pub r_nonnegative: bool,
    /// `0 ≤ Λ′(q) r`.
    pub verdict: OrderVerdict,
    pub agrees: bool,
}

pub fn linearized_converse_check<T: Scalar>(
    op: &NonlocalOperator<T>,
    q: &Potential<T>,
    r: &Potential<T>,
    tol: f64,
) -> Result<LinearizedReport> {
    let derivative = dtn_derivative(op, q, r)?;
    let verdict = leq_d_diff(&derivative, 0, tol)?;
    let r_nonnegative = r.values.iter().all(|v| *v >= T::zero());
    Ok(LinearizedReport {
        r_nonnegative,
        agrees: r_nonnegative == verdict.holds,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracops::{assemble_operator, GridSpec, Partition, Scheme};
    use crate::loewner::LOEWNER_TOL;
    use nalgebra::DVector;

    fn op(n: usize) -> NonlocalOperator<f64> {
        assemble_operator(&GridSpec::interval(n, n), 0.5, Scheme::SpectralPower).unwrap()
    }

    #[test]
    fn equal_potentials_have_zero_gap() {
        let op = op(8);
        let q = Potential::constant(8, 0.3);
        let g = DVector::from_fn(16, |i, _| (i as f64).sin());
        let gap = monotonicity_gap(&op, &q, &q, &g).unwrap();
        assert_eq!(gap.lhs, 0.0);
        assert_eq!(gap.rhs, 0.0);
        assert_eq!(gap.identity_residual, 0.0);
    }

    #[test]
    fn gap_identity_holds_for_unordered_pair() {
        let op = op(8);
        let q1 = Potential::from_slice(&[1.0, -2.0, 0.5, 0.0, 3.0, -1.0, 0.2, 0.0]).unwrap();
        let q2 = Potential::from_slice(&[0.0, 1.0, -0.5, 2.0, 0.0, 0.0, -3.0, 1.0]).unwrap();
        let g = DVector::from_fn(16, |i, _| 1.0 + (i as f64 * 0.3).cos());
        let gap = monotonicity_gap(&op, &q1, &q2, &g).unwrap();
        assert!(gap.identity_residual <= 1e-10 * gap.scale);
    }

    #[test]
    fn testing_operator_is_additive() {
        let op = op(8);
        let q0 = Potential::zeros(8);
        let cell = op.grid.cell_volume();
        let a = RegionMask::from_indices(8, cell, &[0, 1, 2]);
        let b = RegionMask::from_indices(8, cell, &[5, 6]);
        let ta = testing_operator(&op, &q0, &a).unwrap();
        let tb = testing_operator(&op, &q0, &b).unwrap();
        let tab = testing_operator(&op, &q0, &a.union(&b)).unwrap();
        assert!((ta + tb - &tab).norm() <= 1e-12 * tab.norm());
        let empty = RegionMask::empty(8, cell);
        assert_eq!(testing_operator(&op, &q0, &empty).unwrap_err(), Error::EmptyRegion);
    }

    #[test]
    fn ordered_pair_agrees_with_loewner_verdict() {
        let op = op(16);
        let part = Partition::uniform(&op.grid, &[4]).unwrap();
        let q2 = Potential::zeros(16);
        let q1 = part.potential(&[0.0, 1.0, 0.0, 0.5]).unwrap();
        let report = converse_check(&op, &q1, &q2, LOEWNER_TOL).unwrap();
        assert_eq!(report.pointwise, PointwiseOrder::Geq);
        assert!(report.geq_verdict.holds);
        assert!(!report.leq_verdict.holds);
        assert!(report.agrees);
    }

    #[test]
    fn linearized_sign_of_cell_directions() {
        let op = op(16);
        let part = Partition::uniform(&op.grid, &[4]).unwrap();
        let q = Potential::zeros(16);
        let up = part.potential(&[0.0, 1.0, 0.0, 0.0]).unwrap();
        let down = part.potential(&[0.0, -1.0, 0.0, 0.0]).unwrap();
        assert!(linearized_converse_check(&op, &q, &up, LOEWNER_TOL).unwrap().agrees);
        assert!(linearized_converse_check(&op, &q, &down, LOEWNER_TOL).unwrap().agrees);
    }
}
