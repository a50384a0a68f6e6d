//! Forward problem: the exterior Dirichlet problem `(-Δ)^s u + q u = f` in `Ω`,
//! resonance detection, and Dirichlet-to-Neumann maps with their derivative.
//!
//! With `K_q = L_II + m·diag(q)` the interior equation reads
//! `K_q u_I = m f − L_IE g`. When `K_q` is singular the problem is solvable only
//! for data orthogonal to its kernel `N_q`; the returned solution is the one
//! Euclidean-orthogonal to `N_q`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fracops::{check_len, NonlocalOperator};
use crate::linalg::{orthonormal_complement, symmetrize, weighted_gram, SortedEigen};
use crate::scalar::Scalar;

/// Default kernel threshold relative to `‖K_q‖₂`.
pub const KERNEL_TOL: f64 = 1e-10;

/// Relative residual of the solvability condition above which exterior data
/// is declared inadmissible.
pub const SOLVABILITY_TOL: f64 = 1e-8;

/// Potential sampled at interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential<T: Scalar> {
    pub values: DVector<T>,
    pub partition_id: Option<String>,
}

impl<T: Scalar> Potential<T> {
    pub fn new(values: DVector<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("potential has non-finite entries".into()));
        }
        Ok(Self {
            values,
            partition_id: None,
        })
    }

    pub fn from_slice(values: &[T]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: DVector::zeros(n),
            partition_id: None,
        }
    }

    pub fn constant(n: usize, c: T) -> Self {
        Self {
            values: DVector::from_element(n, c),
            partition_id: None,
        }
    }

    pub fn with_partition_id(mut self, id: impl Into<String>) -> Self {
        self.partition_id = Some(id.into());
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm_inf(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    /// `self + scale · other`.
    pub fn add_scaled(&self, scale: T, other: &Potential<T>) -> Potential<T> {
        Potential {
            values: &self.values + &other.values * scale,
            partition_id: None,
        }
    }

    pub fn difference(&self, other: &Potential<T>) -> Potential<T> {
        self.add_scaled(-T::one(), other)
    }

    /// Pointwise `self ≥ other`.
    pub fn dominates(&self, other: &Potential<T>) -> bool {
        self.values.iter().zip(other.values.iter()).all(|(a, b)| a >= b)
    }
}

/// Kernel, negative inertia and coercivity gap of `K_q`.
#[derive(Debug, Clone)]
pub struct ResonanceData<T: Scalar> {
    /// Orthonormal columns spanning `N_q`.
    pub kernel_basis: DMatrix<T>,
    pub dim_kernel: usize,
    /// Number of eigenvalues of `K_q` below `−tol·‖K_q‖₂`.
    pub d_q: usize,
    /// Smallest eigenvalue magnitude of `K_q` outside the kernel.
    pub coercivity_gap: T,
    /// Relative tolerance used for the kernel threshold.
    pub tol: T,
    /// `‖K_q‖₂`.
    pub stiffness_norm: T,
    /// Mass weight of the operator, kept to express the gap in `L²` units.
    pub mass: T,
}

impl<T: Scalar> ResonanceData<T> {
    pub fn is_resonant(&self) -> bool {
        self.dim_kernel > 0
    }

    /// Coercivity gap with respect to the discrete `L²` norm `m·Σ u_i²`.
    pub fn l2_coercivity(&self) -> T {
        self.coercivity_gap / self.mass
    }
}

/// `K_q = L_II + m·diag(q)`.
pub fn stiffness<T: Scalar>(op: &NonlocalOperator<T>, q: &Potential<T>) -> Result<DMatrix<T>> {
    check_len("potential", op.n_interior(), q.len())?;
    let mut k = op.l_ii.clone();
    for i in 0..q.len() {
        k[(i, i)] += op.mass * q.values[i];
    }
    Ok(k)
}

/// Spectral factorization of `K_q` used for all interior solves.
#[derive(Debug, Clone)]
pub struct InteriorSolver<T: Scalar> {
    eigen: SortedEigen<T>,
    threshold: T,
    pub resonance: ResonanceData<T>,
}

impl<T: Scalar> InteriorSolver<T> {
    pub fn new(op: &NonlocalOperator<T>, q: &Potential<T>, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!("kernel tolerance must be positive, got {tol}")));
        }
        let k = stiffness(op, q)?;
        let eigen = SortedEigen::new(&k);
        let norm = eigen.spectral_norm();
        let threshold = norm * T::lit(tol);
        let n = eigen.values.len();
        let kernel_idx: Vec<usize> = (0..n).filter(|&i| eigen.values[i].abs() <= threshold).collect();
        let d_q = (0..n).filter(|&i| eigen.values[i] < -threshold).count();
        let coercivity_gap = (0..n)
            .filter(|&i| eigen.values[i].abs() > threshold)
            .map(|i| eigen.values[i].abs())
            .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.min(v))))
            .unwrap_or_else(T::zero);
        let mut kernel_basis = DMatrix::zeros(n, kernel_idx.len());
        for (dst, &src) in kernel_idx.iter().enumerate() {
            kernel_basis.set_column(dst, &eigen.vectors.column(src));
        }
        let resonance = ResonanceData {
            kernel_basis,
            dim_kernel: kernel_idx.len(),
            d_q,
            coercivity_gap,
            tol: T::lit(tol),
            stiffness_norm: norm,
            mass: op.mass,
        };
        Ok(Self {
            eigen,
            threshold,
            resonance,
        })
    }

    /// Pseudo-inverse application: `K_q⁺ · rhs` for each column of `rhs`.
    pub fn apply_pinv(&self, rhs: &DMatrix<T>) -> DMatrix<T> {
        let mut coeffs = self.eigen.vectors.transpose() * rhs;
        for (i, mu) in self.eigen.values.iter().enumerate() {
            let scale = if mu.abs() > self.threshold {
                T::one() / *mu
            } else {
                T::zero()
            };
            coeffs.row_mut(i).scale_mut(scale);
        }
        &self.eigen.vectors * coeffs
    }

    /// `Vᵀ L_IE` scaled by `|μ|^{-1/2}`, with the sign of `μ`, so that
    /// `L_EI K_q⁺ L_IE = Wᵀ diag(sign) W`.
    fn half_solve(&self, l_ie: &DMatrix<T>) -> (DMatrix<T>, Vec<T>) {
        let mut w = self.eigen.vectors.transpose() * l_ie;
        let mut signs = Vec::with_capacity(w.nrows());
        for (i, mu) in self.eigen.values.iter().enumerate() {
            if mu.abs() > self.threshold {
                w.row_mut(i).scale_mut(T::one() / mu.abs().sqrt());
                signs.push(if *mu > T::zero() { T::one() } else { -T::one() });
            } else {
                w.row_mut(i).fill(T::zero());
                signs.push(T::zero());
            }
        }
        (w, signs)
    }
}

pub fn resonance_data<T: Scalar>(
    op: &NonlocalOperator<T>,
    q: &Potential<T>,
    tol: f64,
) -> Result<ResonanceData<T>> {
    Ok(InteriorSolver::new(op, q, tol)?.resonance)
}

/// Solves the exterior Dirichlet problem and returns the full node vector.
pub fn solve_dirichlet<T: Scalar>(
    op: &NonlocalOperator<T>,
    q: &Potential<T>,
    g: &DVector<T>,
    f: &DVector<T>,
) -> Result<DVector<T>> {
    let solver = InteriorSolver::new(op, q, KERNEL_TOL)?;
    solve_with(op, &solver, g, f)
}

pub fn solve_with<T: Scalar>(
    op: &NonlocalOperator<T>,
    solver: &InteriorSolver<T>,
    g: &DVector<T>,
    f: &DVector<T>,
) -> Result<DVector<T>> {
    check_len("exterior data", op.n_exterior(), g.len())?;
    check_len("interior source", op.n_interior(), f.len())?;
    let source = f * op.mass;
    let coupling = &op.l_ie * g;
    let rhs = &source - &coupling;
    let res = &solver.resonance;
    if res.dim_kernel > 0 {
        let violation = (res.kernel_basis.transpose() * &rhs).norm();
        let scale = rhs.norm() + source.norm() + coupling.norm();
        if violation > T::lit(SOLVABILITY_TOL) * scale {
            return Err(Error::ResonanceViolation {
                residual: (violation / scale).as_f64(),
            });
        }
    }
    let rhs_m = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    let u_i = solver.apply_pinv(&rhs_m).column(0).into_owned();
    op.join(&u_i, g)
}

/// Discrete Neumann trace `(L u)_E = L_EI u_I + L_EE u_E`.
pub fn neumann_trace<T: Scalar>(op: &NonlocalOperator<T>, u: &DVector<T>) -> Result<DVector<T>> {
    check_len("node vector", op.n_nodes(), u.len())?;
    let u_i = op.interior_part(u);
    let u_e = op.exterior_part(u);
    Ok(op.l_ie.tr_mul(&u_i) + &op.l_ee * u_e)
}

/// Discrete DtN map `Λ(q)` on its admissible exterior subspace.
#[derive(Debug, Clone)]
pub struct DtnMap<T: Scalar> {
    /// Symmetric `n_E × n_E` matrix `L_EE − L_EI K_q⁺ L_IE`.
    pub matrix: DMatrix<T>,
    /// Orthonormal columns spanning `H_q = {g : L_IE g ⊥ N_q}`.
    pub domain_basis: DMatrix<T>,
    pub potential: Potential<T>,
    pub resonance: ResonanceData<T>,
    /// Discrete solution operator `g ↦ u_I = −K_q⁺ L_IE g`.
    pub solution: DMatrix<T>,
    /// Columns `L_IEᵀ N_q` whose orthogonal complement is `H_q`.
    pub inadmissible: DMatrix<T>,
    pub mass: T,
    pub(crate) grid_key: (usize, usize, u64),
}

impl<T: Scalar> DtnMap<T> {
    pub fn n_exterior(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn codim(&self) -> usize {
        self.n_exterior() - self.domain_basis.ncols()
    }

    /// Matrix restricted to the admissible subspace.
    pub fn restricted(&self) -> DMatrix<T> {
        self.domain_basis.transpose() * &self.matrix * &self.domain_basis
    }
}

fn grid_key<T: Scalar>(op: &NonlocalOperator<T>) -> (usize, usize, u64) {
    (op.n_interior(), op.n_exterior(), op.grid.h.to_bits() ^ op.s.as_f64().to_bits())
}

pub fn assemble_dtn<T: Scalar>(op: &NonlocalOperator<T>, q: &Potential<T>) -> Result<DtnMap<T>> {
    let solver = InteriorSolver::new(op, q, KERNEL_TOL)?;
    let (w, signs) = solver.half_solve(&op.l_ie);
    let mut signed = w.clone();
    for (i, s) in signs.iter().enumerate() {
        signed.row_mut(i).scale_mut(*s);
    }
    let matrix = symmetrize(&(&op.l_ee - w.transpose() * signed));
    let solution = -solver.apply_pinv(&op.l_ie);
    let inadmissible = op.l_ie.transpose() * &solver.resonance.kernel_basis;
    let domain_basis = if solver.resonance.dim_kernel == 0 {
        DMatrix::identity(op.n_exterior(), op.n_exterior())
    } else {
        orthonormal_complement(&inadmissible, KERNEL_TOL)
    };
    Ok(DtnMap {
        matrix,
        domain_basis,
        potential: q.clone(),
        resonance: solver.resonance,
        solution,
        inadmissible,
        mass: op.mass,
        grid_key: grid_key(op),
    })
}

/// Fréchet derivative `Λ′(q) r`, entry `(a, b) = Σ m r_i u⁽ᵃ⁾_i u⁽ᵇ⁾_i`.
pub fn dtn_derivative<T: Scalar>(
    op: &NonlocalOperator<T>,
    q: &Potential<T>,
    r: &Potential<T>,
) -> Result<DMatrix<T>> {
    check_len("direction", op.n_interior(), r.len())?;
    let solver = InteriorSolver::new(op, q, KERNEL_TOL)?;
    if solver.resonance.is_resonant() {
        return Err(Error::ResonantPotential {
            dim_kernel: solver.resonance.dim_kernel,
        });
    }
    let solution = -solver.apply_pinv(&op.l_ie);
    Ok(derivative_from_solution(&solution, op.mass, &r.values))
}

pub(crate) fn derivative_from_solution<T: Scalar>(
    solution: &DMatrix<T>,
    mass: T,
    direction: &DVector<T>,
) -> DMatrix<T> {
    weighted_gram(solution, &(direction * mass))
}

/// `Λ(q₁) − Λ(q₂)` restricted to `H_{q₁} ∩ H_{q₂}`.
#[derive(Debug, Clone)]
pub struct DtnDifference<T: Scalar> {
    /// `Bᵀ (Λ₁ − Λ₂) B` for the common basis `B`.
    pub matrix: DMatrix<T>,
    pub basis: DMatrix<T>,
}

impl<T: Scalar> DtnDifference<T> {
    /// `B · matrix · Bᵀ`, the difference as an operator on all exterior data
    /// that vanishes off the common domain.
    pub fn embedded(&self) -> DMatrix<T> {
        &self.basis * &self.matrix * self.basis.transpose()
    }

    /// Projects an `n_E × n_E` operator onto the common basis.
    pub fn project(&self, m: &DMatrix<T>) -> DMatrix<T> {
        symmetrize(&(self.basis.transpose() * m * &self.basis))
    }

    pub fn is_full_domain(&self) -> bool {
        self.basis.ncols() == self.basis.nrows()
    }
}

/// Projects `Λ(q₁) − Λ(q₂)` onto the intersection of both admissible subspaces.
/// Only the stored matrices and domains are used, so the routine applies
/// equally to measured maps.
pub fn dtn_difference<T: Scalar>(l1: &DtnMap<T>, l2: &DtnMap<T>) -> Result<DtnDifference<T>> {
    if l1.grid_key != l2.grid_key {
        return Err(Error::GridMismatch);
    }
    let n_e = l1.n_exterior();
    let full = symmetrize(&(&l1.matrix - &l2.matrix));
    if l1.resonance.dim_kernel == 0 && l2.resonance.dim_kernel == 0 {
        return Ok(DtnDifference {
            matrix: full,
            basis: DMatrix::identity(n_e, n_e),
        });
    }
    let (k1, k2) = (l1.inadmissible.ncols(), l2.inadmissible.ncols());
    let stacked = DMatrix::from_fn(n_e, k1 + k2, |i, j| {
        if j < k1 {
            l1.inadmissible[(i, j)]
        } else {
            l2.inadmissible[(i, j - k1)]
        }
    });
    let basis = orthonormal_complement(&stacked, KERNEL_TOL);
    let matrix = symmetrize(&(basis.transpose() * full * &basis));
    Ok(DtnDifference { matrix, basis })
}
