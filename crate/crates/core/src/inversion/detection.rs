use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{assemble_dtn, dtn_difference, DtnMap, DtnDifference, Potential};
use crate::fracops::{check_len, mask_from_region, GridSpec, NonlocalOperator, Partition, Region, RegionMask};
use crate::loewner::{neg_eig_count, LOEWNER_TOL};
use crate::scalar::Scalar;

use super::monotonicity::testing_operator_from_solution;

/// Upper bound on the number of candidates produced by [`closed_set_dictionary`].
pub const MAX_DICTIONARY: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub id: String,
    pub mask: RegionMask,
}

/// How Loewner thresholds are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DPolicy {
    /// `d(q₀) + d(q)` for the lower indefinite test and the upward definite
    /// test, `d(q)` for the upper indefinite test and the downward definite test.
    #[default]
    Observed,
    /// Caller-supplied thresholds, used in the same slots as above.
    Fixed { lower: usize, upper: usize },
}

impl DPolicy {
    fn thresholds(&self, d_q0: usize, d_q: usize) -> (usize, usize) {
        match *self {
            DPolicy::Observed => (d_q0 + d_q, d_q),
            DPolicy::Fixed { lower, upper } => (lower, upper),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionConfig {
    /// First rung `α₀` of the ladder `α₀·2^k`.
    pub alpha0: f64,
    /// Highest exponent `K`; the ladder has `K + 1` rungs.
    pub levels: usize,
    pub d_policy: DPolicy,
    pub dictionary: Vec<Candidate>,
    pub tol: f64,
}

impl DetectionConfig {
    pub fn new(dictionary: Vec<Candidate>) -> Self {
        Self {
            alpha0: 1e-3,
            levels: 24,
            d_policy: DPolicy::Observed,
            dictionary,
            tol: LOEWNER_TOL,
        }
    }

    pub fn alphas(&self) -> Vec<f64> {
        (0..=self.levels).map(|k| self.alpha0 * 2f64.powi(k as i32)).collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) || !self.alpha0.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha0 must be positive, got {}", self.alpha0)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        if self.dictionary.is_empty() {
            return Err(Error::EmptyDictionary);
        }
        Ok(())
    }
}

/// Complements of unions of up to `max_arity` partition cells, in
/// lexicographic order of the removed cells, capped at `cap` candidates.
pub fn closed_set_dictionary(partition: &Partition, max_arity: usize, cap: usize) -> Result<Vec<Candidate>> {
    let k = partition.n_cells();
    if k == 0 {
        return Err(Error::EmptyPartition);
    }
    let mut out = Vec::new();
    let mut combo = Vec::new();
    for arity in 1..=max_arity.min(k) {
        combo.clear();
        combo.extend(0..arity);
        loop {
            if out.len() >= cap {
                return Ok(out);
            }
            let mask = partition.union_mask(&combo).complement();
            if !mask.is_empty() {
                let removed: Vec<String> = combo.iter().map(|c| c.to_string()).collect();
                out.push(Candidate {
                    id: format!("not_{}", removed.join("+")),
                    mask,
                });
            }
            if !next_combination(&mut combo, k) {
                break;
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    Ok(out)
}

fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let r = combo.len();
    let mut i = r;
    while i > 0 {
        i -= 1;
        if combo[i] < n - r + i {
            combo[i] += 1;
            for j in i + 1..r {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Balls centred at cell centres with radii `factor × cell width`.
pub fn ball_dictionary(grid: &GridSpec, partition: &Partition, radius_factors: &[f64]) -> Result<Vec<Candidate>> {
    let width = partition.cell_width.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut out = Vec::new();
    for cell in 0..partition.n_cells() {
        for (k, factor) in radius_factors.iter().enumerate() {
            if !(*factor > 0.0) {
                return Err(Error::InvalidParameter(format!("radius factor must be positive, got {factor}")));
            }
            let region = Region::Ball {
                center: partition.cell_center(cell),
                radius: factor * width,
            };
            match mask_from_region(grid, &region) {
                Ok(mask) => out.push(Candidate {
                    id: format!("ball_c{cell}_r{k}"),
                    mask,
                }),
                Err(Error::EmptyRegion) => {}
                Err(e) => return Err(e),
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    Ok(out)
}

/// Result of one candidate test on the α ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestOutcome {
    pub pass: bool,
    pub alpha_pass: Option<f64>,
    /// Negative count of the lower (indefinite) or only (definite) test,
    /// taken at `alpha_pass`, or at the last rung tried when nothing passes.
    pub neg_count_lower: usize,
    pub neg_count_upper: Option<usize>,
}

/// `−α T ≤_{d_lower} Δ ≤_{d_upper} α T` for the smallest `α` on the ladder.
pub fn test_indefinite<T: Scalar>(
    delta: &DMatrix<T>,
    t: &DMatrix<T>,
    config: &DetectionConfig,
    d_lower: usize,
    d_upper: usize,
) -> Result<TestOutcome> {
    check_len("testing operator", delta.nrows(), t.nrows())?;
    let mut last = (0, 0);
    for alpha in config.alphas() {
        let scaled = t * T::lit(alpha);
        let lower = neg_eig_count(&(delta + &scaled), config.tol)?;
        let upper = neg_eig_count(&(&scaled - delta), config.tol)?;
        last = (lower, upper);
        if lower <= d_lower && upper <= d_upper {
            return Ok(TestOutcome {
                pass: true,
                alpha_pass: Some(alpha),
                neg_count_lower: lower,
                neg_count_upper: Some(upper),
            });
        }
    }
    Ok(TestOutcome {
        pass: false,
        alpha_pass: None,
        neg_count_lower: last.0,
        neg_count_upper: Some(last.1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefiniteDirection {
    /// `q ≥ q₀`: tests `Λ(q) ≥ Λ(q₀) + α T_B`.
    Up,
    /// `q ≤ q₀`: tests `Λ(q) ≤ Λ(q₀) − α T_B`.
    Down,
}

/// Largest `α` on the ladder passing the one-sided ball test. The test
/// weakens as `α` decreases, so the ladder is scanned from the top.
pub fn test_definite_ball<T: Scalar>(
    delta: &DMatrix<T>,
    t: &DMatrix<T>,
    direction: DefiniteDirection,
    config: &DetectionConfig,
    d: usize,
) -> Result<TestOutcome> {
    check_len("testing operator", delta.nrows(), t.nrows())?;
    let mut last = 0;
    for alpha in config.alphas().into_iter().rev() {
        let scaled = t * T::lit(alpha);
        let probe = match direction {
            DefiniteDirection::Up => delta - &scaled,
            DefiniteDirection::Down => -delta - &scaled,
        };
        let count = neg_eig_count(&probe, config.tol)?;
        last = count;
        if count <= d {
            return Ok(TestOutcome {
                pass: true,
                alpha_pass: Some(alpha),
                neg_count_lower: count,
                neg_count_upper: None,
            });
        }
    }
    Ok(TestOutcome {
        pass: false,
        alpha_pass: None,
        neg_count_lower: last,
        neg_count_upper: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionMode {
    Indefinite,
    DefiniteUp,
    DefiniteDown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateResult {
    pub id: String,
    pub mask: RegionMask,
    pub outcome: TestOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    pub mode: DetectionMode,
    pub candidates: Vec<CandidateResult>,
    /// Intersection of passing closed sets, or union of passing balls.
    pub aggregate: RegionMask,
    pub d_q0: usize,
    pub d_q: usize,
}

struct Prepared<T: Scalar> {
    reference: DtnMap<T>,
    diff: DtnDifference<T>,
}

fn prepare<T: Scalar>(
    op: &NonlocalOperator<T>,
    q0: &Potential<T>,
    observed: &DtnMap<T>,
    config: &DetectionConfig,
) -> Result<Prepared<T>> {
    config.validate()?;
    for c in &config.dictionary {
        check_len("candidate mask", op.n_interior(), c.mask.len())?;
        if c.mask.is_empty() {
            return Err(Error::EmptyRegion);
        }
    }
    let reference = assemble_dtn(op, q0)?;
    if reference.resonance.is_resonant() {
        return Err(Error::ResonantPotential {
            dim_kernel: reference.resonance.dim_kernel,
        });
    }
    let diff = dtn_difference(observed, &reference)?;
    Ok(Prepared { reference, diff })
}

fn projected_testing_operator<T: Scalar>(p: &Prepared<T>, mask: &RegionMask) -> DMatrix<T> {
    let t = testing_operator_from_solution(&p.reference.solution, p.reference.mass, mask);
    if p.diff.is_full_domain() {
        t
    } else {
        p.diff.project(&t)
    }
}

/// Shrinking-closed-set detection for a sign-indefinite difference `q − q₀`.
pub fn detect_indefinite<T: Scalar>(
    op: &NonlocalOperator<T>,
    q0: &Potential<T>,
    observed: &DtnMap<T>,
    config: &DetectionConfig,
) -> Result<DetectionResult> {
    let p = prepare(op, q0, observed, config)?;
    let d_q0 = p.reference.resonance.d_q;
    let d_q = observed.resonance.d_q;
    let (d_lower, d_upper) = config.d_policy.thresholds(d_q0, d_q);
    let outcomes: Vec<Result<TestOutcome>> = config
        .dictionary
        .par_iter()
        .map(|c| {
            let t = projected_testing_operator(&p, &c.mask);
            test_indefinite(&p.diff.matrix, &t, config, d_lower, d_upper)
        })
        .collect();
    let mut aggregate = op.full_mask();
    let mut candidates = Vec::with_capacity(outcomes.len());
    for (c, outcome) in config.dictionary.iter().zip(outcomes) {
        let outcome = outcome?;
        if outcome.pass {
            aggregate = aggregate.intersection(&c.mask);
        }
        candidates.push(CandidateResult {
            id: c.id.clone(),
            mask: c.mask.clone(),
            outcome,
        });
    }
    Ok(DetectionResult {
        mode: DetectionMode::Indefinite,
        candidates,
        aggregate,
        d_q0,
        d_q,
    })
}

/// Open-ball detection for a one-signed difference `q − q₀`.
pub fn detect_definite<T: Scalar>(
    op: &NonlocalOperator<T>,
    q0: &Potential<T>,
    observed: &DtnMap<T>,
    direction: DefiniteDirection,
    config: &DetectionConfig,
) -> Result<DetectionResult> {
    let p = prepare(op, q0, observed, config)?;
    let d_q0 = p.reference.resonance.d_q;
    let d_q = observed.resonance.d_q;
    let (d_up, d_down) = config.d_policy.thresholds(d_q0, d_q);
    let d = match direction {
        DefiniteDirection::Up => d_up,
        DefiniteDirection::Down => d_down,
    };
    let outcomes: Vec<Result<TestOutcome>> = config
        .dictionary
        .par_iter()
        .map(|c| {
            let t = projected_testing_operator(&p, &c.mask);
            test_definite_ball(&p.diff.matrix, &t, direction, config, d)
        })
        .collect();
    let mut aggregate = RegionMask::empty(op.n_interior(), op.grid.cell_volume());
    let mut candidates = Vec::with_capacity(outcomes.len());
    for (c, outcome) in config.dictionary.iter().zip(outcomes) {
        let outcome = outcome?;
        if outcome.pass {
            aggregate = aggregate.union(&c.mask);
        }
        candidates.push(CandidateResult {
            id: c.id.clone(),
            mask: c.mask.clone(),
            outcome,
        });
    }
    Ok(DetectionResult {
        mode: match direction {
            DefiniteDirection::Up => DetectionMode::DefiniteUp,
            DefiniteDirection::Down => DetectionMode::DefiniteDown,
        },
        candidates,
        aggregate,
        d_q0,
        d_q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracops::{assemble_operator, Scheme};

    #[test]
    fn combinations_enumerate_in_order() {
        let mut c = vec![0, 1];
        let mut seen = vec![c.clone()];
        while next_combination(&mut c, 4) {
            seen.push(c.clone());
        }
        assert_eq!(seen.len(), 6);
        assert_eq!(seen.last().unwrap(), &vec![2, 3]);
    }

    #[test]
    fn closed_set_dictionary_respects_cap_and_arity() {
        let g = GridSpec::interval(16, 16);
        let p = Partition::uniform(&g, &[8]).unwrap();
        let single = closed_set_dictionary(&p, 1, MAX_DICTIONARY).unwrap();
        assert_eq!(single.len(), 8);
        assert_eq!(single[0].id, "not_0");
        assert_eq!(single[0].mask.count(), 14);
        let pairs = closed_set_dictionary(&p, 2, MAX_DICTIONARY).unwrap();
        assert_eq!(pairs.len(), 8 + 28);
        assert_eq!(closed_set_dictionary(&p, 3, 10).unwrap().len(), 10);
    }

    #[test]
    fn ball_dictionary_has_three_radii_per_cell() {
        let g = GridSpec::interval(16, 16);
        let p = Partition::uniform(&g, &[4]).unwrap();
        let balls = ball_dictionary(&g, &p, &[0.5, 1.0, 1.5]).unwrap();
        assert_eq!(balls.len(), 12);
        // radius half a cell covers exactly that cell
        assert_eq!(balls[0].mask, p.cell_mask(0));
    }

    #[test]
    fn zero_difference_passes_at_smallest_alpha() {
        let op = assemble_operator::<f64>(&GridSpec::interval(16, 16), 0.5, Scheme::SpectralPower).unwrap();
        let p = Partition::uniform(&op.grid, &[4]).unwrap();
        let q0 = Potential::zeros(16);
        let observed = assemble_dtn(&op, &q0).unwrap();
        let config = DetectionConfig::new(closed_set_dictionary(&p, 1, MAX_DICTIONARY).unwrap());
        let result = detect_indefinite(&op, &q0, &observed, &config).unwrap();
        for c in &result.candidates {
            assert_eq!(c.outcome.alpha_pass, Some(config.alpha0));
        }
        // intersection of all single-cell complements is empty
        assert!(result.aggregate.is_empty());

        let balls = DetectionConfig::new(ball_dictionary(&op.grid, &p, &[0.5]).unwrap());
        let up = detect_definite(&op, &q0, &observed, DefiniteDirection::Up, &balls).unwrap();
        assert!(up.candidates.iter().all(|c| !c.outcome.pass));
        assert!(up.aggregate.is_empty());
    }

    #[test]
    fn empty_dictionary_is_rejected() {
        let op = assemble_operator::<f64>(&GridSpec::interval(8, 8), 0.5, Scheme::SpectralPower).unwrap();
        let q0 = Potential::zeros(8);
        let observed = assemble_dtn(&op, &q0).unwrap();
        let err = detect_indefinite(&op, &q0, &observed, &DetectionConfig::new(vec![])).unwrap_err();
        assert_eq!(err, Error::EmptyDictionary);
    }
}
