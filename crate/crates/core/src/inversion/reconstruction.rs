use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{assemble_dtn, dtn_difference, DtnMap};
use crate::fracops::{check_len, NonlocalOperator, Partition};
use crate::loewner::leq_d_diff;
use crate::scalar::Scalar;

/// Sweeps allowed per step size before giving up on convergence.
pub const MAX_SWEEPS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellEstimate {
    pub cell: usize,
    /// Largest admissible value from below: `Λ(ψ) ≤_{d(ψ)} Λ(q)`.
    pub sup_value: f64,
    /// Smallest admissible value from above: `Λ(ψ) ≥_{d(q)} Λ(q)`.
    pub inf_value: f64,
    /// `max(sup, 0) + min(inf, 0)`.
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconstruction {
    pub cells: Vec<CellEstimate>,
    /// False when some step size hit [`MAX_SWEEPS`] without settling.
    pub converged: bool,
    pub sweeps: usize,
    pub evaluations: usize,
}

impl Reconstruction {
    pub fn estimates(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.estimate).collect()
    }
}

struct Search<'a, T: Scalar> {
    op: &'a NonlocalOperator<T>,
    observed: &'a DtnMap<T>,
    partition: &'a Partition,
    tol: f64,
    evaluations: usize,
}

impl<T: Scalar> Search<'_, T> {
    /// `Λ(ψ) ≤_{d(ψ)} Λ(q)` when `from_below`, else `Λ(ψ) ≥_{d(q)} Λ(q)`.
    fn admissible(&mut self, values: &[f64], from_below: bool) -> Result<bool> {
        self.evaluations += 1;
        let cell_values: Vec<T> = values.iter().map(|v| T::lit(*v)).collect();
        let psi = self.partition.potential(&cell_values)?;
        let trial = assemble_dtn(self.op, &psi)?;
        let verdict = if from_below {
            let diff = dtn_difference(self.observed, &trial)?;
            leq_d_diff(&diff.matrix, trial.resonance.d_q, self.tol)?
        } else {
            let diff = dtn_difference(&trial, self.observed)?;
            leq_d_diff(&diff.matrix, self.observed.resonance.d_q, self.tol)?
        };
        Ok(verdict.holds)
    }

    /// Grows every cell away from `∓a` in steps that halve once no cell can
    /// move, until the step drops below `step_tol`.
    fn ascend(&mut self, a: f64, step_tol: f64, from_below: bool) -> Result<(Vec<f64>, usize, bool)> {
        let sign = if from_below { 1.0 } else { -1.0 };
        let k = self.partition.n_cells();
        let mut psi = vec![-sign * a; k];
        let mut step = a;
        let mut sweeps = 0;
        let mut converged = true;
        while step >= step_tol {
            let mut settled = false;
            for _ in 0..MAX_SWEEPS {
                sweeps += 1;
                let mut moved = false;
                for j in 0..k {
                    let mut trial = psi.clone();
                    trial[j] += sign * step;
                    if trial[j].abs() <= a * (1.0 + 1e-12) && self.admissible(&trial, from_below)? {
                        psi = trial;
                        moved = true;
                    }
                }
                if !moved {
                    settled = true;
                    break;
                }
            }
            converged &= settled;
            step *= 0.5;
        }
        Ok((psi, sweeps, converged))
    }
}

/// Partition-constant surrogate of the sup/inf reconstruction formula.
///
/// Cells are visited in index order. Each side starts at the opposite bound
/// and grows cell values while the Loewner test keeps holding; the step
/// halves whenever a sweep moves no cell, down to `bisect_tol / 2`.
pub fn reconstruct_monotone<T: Scalar>(
    op: &NonlocalOperator<T>,
    observed: &DtnMap<T>,
    partition: &Partition,
    a: f64,
    bisect_tol: f64,
    tol: f64,
) -> Result<Reconstruction> {
    check_len("partition", op.n_interior(), partition.n_interior())?;
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::InvalidParameter(format!("bound a must be positive, got {a}")));
    }
    if !(bisect_tol > 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerances must be positive".into()));
    }
    let mut search = Search {
        op,
        observed,
        partition,
        tol,
        evaluations: 0,
    };
    let (sup, sweeps_sup, conv_sup) = search.ascend(a, bisect_tol / 2.0, true)?;
    let (inf, sweeps_inf, conv_inf) = search.ascend(a, bisect_tol / 2.0, false)?;
    let cells = (0..partition.n_cells())
        .map(|cell| CellEstimate {
            cell,
            sup_value: sup[cell],
            inf_value: inf[cell],
            estimate: sup[cell].max(0.0) + inf[cell].min(0.0),
            lower: sup[cell].min(inf[cell]),
            upper: sup[cell].max(inf[cell]),
        })
        .collect();
    Ok(Reconstruction {
        cells,
        converged: conv_sup && conv_inf,
        sweeps: sweeps_sup + sweeps_inf,
        evaluations: search.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::Potential;
    use crate::fracops::{assemble_operator, GridSpec, Scheme};
    use crate::loewner::LOEWNER_TOL;

    #[test]
    fn zero_potential_reconstructs_to_zero() {
        let op = assemble_operator::<f64>(&GridSpec::interval(16, 16), 0.5, Scheme::SpectralPower).unwrap();
        let p = Partition::uniform(&op.grid, &[4]).unwrap();
        let observed = assemble_dtn(&op, &Potential::zeros(16)).unwrap();
        let r = reconstruct_monotone(&op, &observed, &p, 1.0, 1e-2, LOEWNER_TOL).unwrap();
        assert!(r.converged);
        for c in &r.cells {
            assert!(c.estimate.abs() <= 1e-2, "{c:?}");
            assert!(c.lower <= 0.0 && c.upper >= 0.0, "{c:?}");
        }
    }

    #[test]
    fn rejects_bad_bounds() {
        let op = assemble_operator::<f64>(&GridSpec::interval(8, 8), 0.5, Scheme::SpectralPower).unwrap();
        let p = Partition::uniform(&op.grid, &[2]).unwrap();
        let observed = assemble_dtn(&op, &Potential::zeros(8)).unwrap();
        assert!(reconstruct_monotone(&op, &observed, &p, -1.0, 1e-2, LOEWNER_TOL).is_err());
    }
}
