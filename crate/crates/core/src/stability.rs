//! Lipschitz-stability experiments for partition-constant potentials with
//! finitely many measurements, and the constructive witness pipeline.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{assemble_dtn, dtn_difference, resonance_data, DtnMap, Potential, KERNEL_TOL};
use crate::fracops::{check_len, NonlocalOperator, Partition, RegionMask};
use crate::inversion::{localized_potential_with, testing_operator};
use crate::linalg::{orthonormal_complement, spectral_norm_sym, weighted_gram, SortedEigen};
use crate::scalar::Scalar;

/// Ordering of exterior directions in a [`SubspaceLadder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LadderPolicy {
    /// Eigenvectors of `T_Ω = Λ′(0) χ_Ω`, largest eigenvalue first.
    #[default]
    TestingEnergy,
    /// Exterior coordinate vectors, nearest node to `Ω` first.
    Distance,
}

/// Nested measurement subspaces `H_l = span(b₁, …, b_l)`.
#[derive(Debug, Clone)]
pub struct SubspaceLadder<T: Scalar> {
    /// Orthonormal columns `b₁, b₂, …`.
    pub vectors: DMatrix<T>,
    pub policy: LadderPolicy,
    /// Sort key of each column: eigenvalue of `T_Ω` or distance to `Ω`.
    pub keys: Vec<f64>,
}

impl<T: Scalar> SubspaceLadder<T> {
    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.ncols() == 0
    }

    /// Basis of `H_l`.
    pub fn level(&self, l: usize) -> DMatrix<T> {
        self.vectors.columns(0, l.min(self.len())).into_owned()
    }
}

pub fn build_ladder<T: Scalar>(op: &NonlocalOperator<T>, policy: LadderPolicy) -> Result<SubspaceLadder<T>> {
    let n_e = op.n_exterior();
    match policy {
        LadderPolicy::TestingEnergy => {
            let t = testing_operator(op, &Potential::zeros(op.n_interior()), &op.full_mask())?;
            let eig = SortedEigen::new(&t);
            let mut vectors = DMatrix::zeros(n_e, n_e);
            let mut keys = Vec::with_capacity(n_e);
            for k in 0..n_e {
                let src = n_e - 1 - k;
                vectors.set_column(k, &eig.vectors.column(src));
                keys.push(eig.values[src].as_f64());
            }
            Ok(SubspaceLadder { vectors, policy, keys })
        }
        LadderPolicy::Distance => {
            let coords = op.layout.exterior_coords();
            let dist: Vec<f64> = coords.iter().map(|x| op.layout.distance_to_omega(x)).collect();
            let mut order: Vec<usize> = (0..n_e).collect();
            order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
            let mut vectors = DMatrix::zeros(n_e, n_e);
            for (col, &row) in order.iter().enumerate() {
                vectors[(row, col)] = T::one();
            }
            Ok(SubspaceLadder {
                vectors,
                policy,
                keys: order.iter().map(|&i| dist[i]).collect(),
            })
        }
    }
}

/// One set per partition cell: a partition-constant `r` with `‖r‖_∞ = 1`
/// reaches `±1` on some cell.
pub fn witness_sets(partition: &Partition) -> Result<Vec<RegionMask>> {
    if partition.n_cells() == 0 {
        return Err(Error::EmptyPartition);
    }
    Ok(partition.cell_masks())
}

/// `q̂_j = 2a` on `M_j` and `−7a` elsewhere.
pub fn witness_potentials<T: Scalar>(a: f64, sets: &[RegionMask]) -> Result<Vec<Potential<T>>> {
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!("bound a must be positive, got {a}")));
    }
    sets.iter()
        .map(|m| {
            Potential::new(DVector::from_iterator(
                m.len(),
                m.flags.iter().map(|&f| T::lit(if f { 2.0 * a } else { -7.0 * a })),
            ))
        })
        .collect()
}

/// `a χ_M − 8a χ_off ≤ q̂ − q ≤ 3a χ_M − 6a χ_off`, checked pointwise.
pub fn sandwich_holds<T: Scalar>(a: f64, set: &RegionMask, qhat: &Potential<T>, q: &Potential<T>) -> bool {
    let slack = 1e-12 * a;
    (0..set.len()).all(|i| {
        let diff = (qhat.values[i] - q.values[i]).as_f64();
        let (lo, hi) = if set.flags[i] { (a, 3.0 * a) } else { (-8.0 * a, -6.0 * a) };
        diff >= lo - slack && diff <= hi + slack
    })
}

/// Bounds `d(q) ≤ d` and `dim N_q ≤ N` over the class `Q_[−a,a]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionBounds {
    /// `d(−a)`, exact by eigenvalue-count monotonicity.
    pub d: usize,
    /// Largest kernel dimension over the sampled potentials.
    pub n_sampled: usize,
    /// Trivial certified bound `n_I`.
    pub n_trivial: usize,
    pub samples_checked: usize,
}

fn random_cells(rng: &mut ChaCha8Rng, k: usize, a: f64) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(-a..=a)).collect()
}

/// Corner potentials `±a` per cell, enumerated only up to this many cells.
const MAX_CORNER_CELLS: usize = 12;

pub fn dimension_bounds<T: Scalar>(
    op: &NonlocalOperator<T>,
    partition: &Partition,
    a: f64,
    sample_count: usize,
    seed: u64,
    extra: &[Potential<T>],
) -> Result<DimensionBounds> {
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!("bound a must be positive, got {a}")));
    }
    check_len("partition", op.n_interior(), partition.n_interior())?;
    let n = op.n_interior();
    let d = resonance_data(op, &Potential::constant(n, T::lit(-a)), KERNEL_TOL)?.d_q;
    let k = partition.n_cells();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cell_sets: Vec<Vec<f64>> = (0..sample_count).map(|_| random_cells(&mut rng, k, a)).collect();
    if k <= MAX_CORNER_CELLS {
        for bits in 0..(1usize << k) {
            cell_sets.push((0..k).map(|c| if bits >> c & 1 == 1 { a } else { -a }).collect());
        }
    }
    let mut potentials = Vec::with_capacity(cell_sets.len() + extra.len());
    for values in &cell_sets {
        let v: Vec<T> = values.iter().map(|x| T::lit(*x)).collect();
        potentials.push(partition.potential(&v)?);
    }
    potentials.extend(extra.iter().cloned());
    let dims: Vec<Result<usize>> = potentials
        .par_iter()
        .map(|q| resonance_data(op, q, KERNEL_TOL).map(|r| r.dim_kernel))
        .collect();
    let mut n_sampled = 0;
    for dim in dims {
        n_sampled = n_sampled.max(dim?);
    }
    Ok(DimensionBounds {
        d,
        n_sampled,
        n_trivial: n,
        samples_checked: potentials.len(),
    })
}

/// Witness vectors for one set `M_j`.
#[derive(Debug, Clone)]
pub struct WitnessSet<T: Scalar> {
    pub set: usize,
    /// Columns `F̂_{i,j}`.
    pub vectors: DMatrix<T>,
    /// Weighted energies `∫ w |S F̂|²` with `w = χ_M/6 − 4χ_off/3`.
    pub energies: Vec<f64>,
    /// Largest `|(F̂_i, F̂_i')|` over `i ≠ i'`.
    pub max_cross_inner: f64,
    /// Largest `|∫ w S F̂_i S F̂_i'|` over `i ≠ i'`.
    pub max_cross_weighted: f64,
    solution: DMatrix<T>,
    weights: DVector<T>,
    inadmissible: DMatrix<T>,
}

#[derive(Debug, Clone)]
pub struct WitnessData<T: Scalar> {
    pub sets: Vec<WitnessSet<T>>,
    /// Vectors per set, `3d + 2N + 1`.
    pub count: usize,
    /// `1 / (3d + 2N + 2)`.
    pub delta: f64,
    /// `2 max ‖F̂‖²`.
    pub c: f64,
    /// Smallest ladder level at which the projected vectors meet the
    /// `δ`-perturbed conditions.
    pub k: Option<usize>,
}

fn energy_weights<T: Scalar>(mask: &RegionMask, mass: T) -> DVector<T> {
    DVector::from_iterator(
        mask.len(),
        mask.flags
            .iter()
            .map(|&f| mass * T::lit(if f { 1.0 / 6.0 } else { -4.0 / 3.0 })),
    )
}

/// `Fᵀ diag(w) F` for fields `F = S X`. Forming the fields first keeps the
/// small energies of localized data accurate; the Gram form `Sᵀ diag(w) S`
/// would square the conditioning of `S`.
fn field_form<T: Scalar>(solution: &DMatrix<T>, weights: &DVector<T>, x: &DMatrix<T>) -> DMatrix<T> {
    weighted_gram(&(solution * x), weights)
}

fn build_witness_set<T: Scalar>(set: usize, dtn: &DtnMap<T>, mask: &RegionMask, count: usize) -> Result<WitnessSet<T>> {
    let n_e = dtn.n_exterior();
    let weights = energy_weights(mask, dtn.mass);
    let mut constraints = DMatrix::<T>::zeros(n_e, 0);
    let mut vectors = DMatrix::<T>::zeros(n_e, count);
    for i in 0..count {
        let found = localized_potential_with(dtn, mask, &constraints)?;
        let g = found.g;
        let wu = found.u.component_mul(&weights);
        let energy = found.u.dot(&wu);
        if !(energy > T::zero()) {
            return Err(Error::WitnessFailure {
                set,
                energy: energy.as_f64(),
            });
        }
        vectors.set_column(i, &(&g * (T::lit(2.0) / energy).sqrt()));
        let c0 = constraints.ncols();
        constraints = constraints.insert_columns(c0, 2, T::zero());
        constraints.set_column(c0, &g);
        constraints.set_column(c0 + 1, &dtn.solution.tr_mul(&wu));
    }
    let gram = vectors.transpose() * &vectors;
    let weighted = field_form(&dtn.solution, &weights, &vectors);
    let energies = (0..count).map(|i| weighted[(i, i)].as_f64()).collect();
    let (max_cross_inner, max_cross_weighted) = off_diagonal_max(&gram, &weighted);
    Ok(WitnessSet {
        set,
        vectors,
        energies,
        max_cross_inner,
        max_cross_weighted,
        solution: dtn.solution.clone(),
        weights,
        inadmissible: dtn.inadmissible.clone(),
    })
}

fn off_diagonal_max<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> (f64, f64) {
    let mut out = (0.0f64, 0.0f64);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if i != j {
                out.0 = out.0.max(a[(i, j)].abs().as_f64());
                out.1 = out.1.max(b[(i, j)].abs().as_f64());
            }
        }
    }
    out
}

/// Builds `3d + 2N + 1` witness vectors per set with successive
/// localized-potential searches, each orthogonal to the previous vectors in
/// the exterior inner product and in the weighted energy form, scaled to
/// weighted energy 2. Then scans the ladder for the first level at which the
/// projections keep energy `≥ 2 − δ`, weighted cross terms `≤ δ` and inner
/// products `≤ cδ/2`.
pub fn witness_data<T: Scalar>(
    op: &NonlocalOperator<T>,
    sets: &[RegionMask],
    a: f64,
    bounds: &DimensionBounds,
    ladder: &SubspaceLadder<T>,
) -> Result<WitnessData<T>> {
    check_len("ladder rows", op.n_exterior(), ladder.vectors.nrows())?;
    let potentials = witness_potentials::<T>(a, sets)?;
    let count = 3 * bounds.d + 2 * bounds.n_sampled + 1;
    let delta = 1.0 / (count as f64 + 1.0);
    let built: Vec<Result<WitnessSet<T>>> = potentials
        .par_iter()
        .zip(sets.par_iter())
        .enumerate()
        .map(|(j, (qhat, mask))| build_witness_set(j, &assemble_dtn(op, qhat)?, mask, count))
        .collect();
    let sets_out: Vec<WitnessSet<T>> = built.into_iter().collect::<Result<_>>()?;
    let c = 2.0
        * sets_out
            .iter()
            .flat_map(|w| w.vectors.column_iter().map(|v| v.norm_squared().as_f64()))
            .fold(0.0, f64::max);
    let k = (1..=ladder.len()).find(|&l| sets_out.iter().all(|w| projected_conditions(w, ladder, l, delta, c)));
    Ok(WitnessData {
        sets: sets_out,
        count,
        delta,
        c,
        k,
    })
}

fn projected_conditions<T: Scalar>(w: &WitnessSet<T>, ladder: &SubspaceLadder<T>, l: usize, delta: f64, c: f64) -> bool {
    let basis = if w.inadmissible.ncols() == 0 {
        ladder.level(l)
    } else {
        // H_l ∩ H_q̂: complement of the unused ladder directions and the inadmissible ones
        let rest = ladder.vectors.columns(l, ladder.len() - l).into_owned();
        let excluded = DMatrix::from_fn(rest.nrows(), rest.ncols() + w.inadmissible.ncols(), |i, j| {
            if j < rest.ncols() {
                rest[(i, j)]
            } else {
                w.inadmissible[(i, j - rest.ncols())]
            }
        });
        orthonormal_complement(&excluded, KERNEL_TOL)
    };
    let projected = &basis * (basis.transpose() * &w.vectors);
    let gram = projected.transpose() * &projected;
    let weighted = field_form(&w.solution, &w.weights, &projected);
    let energies_ok = (0..gram.nrows()).all(|i| weighted[(i, i)].as_f64() >= 2.0 - delta);
    let (cross_inner, cross_weighted) = off_diagonal_max(&gram, &weighted);
    energies_ok && cross_weighted <= delta && cross_inner <= 0.5 * c * delta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Random,
    Corner,
}

/// Projected-difference ratios for one sampled pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRecord {
    pub kind: PairKind,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub diff_inf: f64,
    /// `‖P_l (Λ(q₂) − Λ(q₁)) P_l‖₂ / ‖q₂ − q₁‖_∞` for `l = 1..=n_E`.
    pub ratios: Vec<f64>,
    /// Largest drop between consecutive levels before the running maximum,
    /// relative to the final ratio (pure round-off when nonzero).
    pub roundoff_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `c_est(l)` for `l = 1..=n_E`: minimum ratio over all pairs.
    pub c_est: Vec<f64>,
    /// `k_est`: smallest `l` with `c_est(l)` above the round-off floor.
    pub k_est: Option<usize>,
    pub floor: f64,
    pub seed: u64,
    pub samples: usize,
    pub pairs: Vec<PairRecord>,
    pub ladder_policy: LadderPolicy,
}

impl StabilityReport {
    /// Number of levels at which `c_est` decreases.
    pub fn monotonicity_violations(&self) -> usize {
        self.c_est.windows(2).filter(|w| w[1] < w[0]).count()
    }
}

/// Random pairs in `Q_[−a,a]` plus pairs of cube corners that differ in one cell.
fn sample_pairs(k: usize, a: f64, samples: usize, seed: u64) -> Vec<(PairKind, Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(samples + 2 * k);
    while pairs.len() < samples {
        let q1 = random_cells(&mut rng, k, a);
        let q2 = random_cells(&mut rng, k, a);
        if q1 != q2 {
            pairs.push((PairKind::Random, q1, q2));
        }
    }
    for base in [-a, a] {
        for cell in 0..k {
            let q1 = vec![base; k];
            let mut q2 = q1.clone();
            q2[cell] = -base;
            pairs.push((PairKind::Corner, q1, q2));
        }
    }
    pairs
}

fn pair_record<T: Scalar>(
    op: &NonlocalOperator<T>,
    partition: &Partition,
    ladder: &SubspaceLadder<T>,
    (kind, q1, q2): (PairKind, Vec<f64>, Vec<f64>),
) -> Result<PairRecord> {
    let to_t = |v: &[f64]| v.iter().map(|x| T::lit(*x)).collect::<Vec<T>>();
    let p1 = partition.potential(&to_t(&q1))?;
    let p2 = partition.potential(&to_t(&q2))?;
    let diff = dtn_difference(&assemble_dtn(op, &p2)?, &assemble_dtn(op, &p1)?)?;
    let embedded = if diff.is_full_domain() {
        diff.matrix.clone()
    } else {
        diff.embedded()
    };
    let diff_inf = q1.iter().zip(&q2).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
    let rotated = ladder.vectors.transpose() * &embedded * &ladder.vectors;
    let mut ratios = Vec::with_capacity(ladder.len());
    let mut running = 0.0f64;
    let mut drop = 0.0f64;
    for l in 1..=ladder.len() {
        let value = spectral_norm_sym(&rotated.view((0, 0), (l, l)).into_owned()).as_f64() / diff_inf;
        drop = drop.max(running - value);
        running = running.max(value);
        ratios.push(running);
    }
    Ok(PairRecord {
        kind,
        q1,
        q2,
        diff_inf,
        roundoff_drop: if running > 0.0 { drop / running } else { 0.0 },
        ratios,
    })
}

/// Minimum over sampled pairs of `‖P_l (Λ(q₂) − Λ(q₁)) P_l‖₂ / ‖q₂ − q₁‖_∞`
/// per ladder level.
pub fn estimate_constant<T: Scalar>(
    op: &NonlocalOperator<T>,
    partition: &Partition,
    a: f64,
    ladder: &SubspaceLadder<T>,
    samples: usize,
    seed: u64,
) -> Result<StabilityReport> {
    check_len("partition", op.n_interior(), partition.n_interior())?;
    check_len("ladder rows", op.n_exterior(), ladder.vectors.nrows())?;
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!("bound a must be positive, got {a}")));
    }
    if samples == 0 {
        return Err(Error::InvalidParameter("at least one random pair is required".into()));
    }
    let pairs: Vec<PairRecord> = sample_pairs(partition.n_cells(), a, samples, seed)
        .into_par_iter()
        .map(|pair| pair_record(op, partition, ladder, pair))
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<_>>()?;
    let levels = ladder.len();
    let c_est: Vec<f64> = (0..levels)
        .map(|l| pairs.iter().map(|p| p.ratios[l]).fold(f64::INFINITY, f64::min))
        .collect();
    let scale = pairs
        .iter()
        .map(|p| p.ratios.last().copied().unwrap_or(0.0))
        .fold(0.0, f64::max);
    let floor = 10.0 * T::machine_eps().as_f64() * scale;
    let k_est = c_est.iter().position(|c| *c > floor).map(|i| i + 1);
    Ok(StabilityReport {
        c_est,
        k_est,
        floor,
        seed,
        samples,
        pairs,
        ladder_policy: ladder.policy,
    })
}
