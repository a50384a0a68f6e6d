//! One function per experiment kind. Each returns the scalar results for
//! `summary.json` together with the CSV tables and matrices to write.

use fracmono::forward::{assemble_dtn, neumann_trace, resonance_data, solve_dirichlet, stiffness, Potential, KERNEL_TOL};
use fracmono::inversion::{
    ball_dictionary, closed_set_dictionary, converse_check, detect_definite, detect_indefinite,
    localized_potential, monotonicity_gap, reconstruct_monotone, simultaneous_localized_potential, DPolicy,
    DefiniteDirection, DetectionConfig,
};
use fracmono::linalg::SortedEigen;
use fracmono::stability::{build_ladder, dimension_bounds, estimate_constant, witness_data, witness_sets};
use fracmono::fracops::NonlocalOperator;
use fracmono::{assemble_operator, mask_from_region, Partition, RegionMask};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{ConfigError, DictionarySpec, ExperimentConfig, ExteriorData, Kind};
use crate::report::{num, opt_num, Table};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Compute(#[from] fracmono::Error),
}

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Default)]
pub struct Outcome {
    pub results: Value,
    pub tables: Vec<(&'static str, Table)>,
    pub matrices: Vec<(&'static str, DMatrix<f64>)>,
}

const AXES: [&str; 3] = ["x", "y", "z"];

fn node_header(dim: usize, extra: &[&'static str]) -> Vec<&'static str> {
    let mut h = vec!["node"];
    h.extend_from_slice(&AXES[..dim.min(3)]);
    h.extend_from_slice(extra);
    h
}

fn node_row(op: &NonlocalOperator<f64>, global: usize, extra: Vec<String>) -> Vec<String> {
    let mut row = vec![global.to_string()];
    row.extend(op.layout.coords(global).into_iter().map(num));
    row.extend(extra);
    row
}

fn interior_table(op: &NonlocalOperator<f64>, columns: &[&'static str], values: &[&DVector<f64>]) -> Table {
    let mut t = Table::new(&node_header(op.grid.dim, columns));
    for (i, &k) in op.interior().iter().enumerate() {
        t.push(node_row(op, k, values.iter().map(|v| num(v[i])).collect()));
    }
    t
}

fn mask_table(op: &NonlocalOperator<f64>, column: &'static str, mask: &RegionMask) -> Table {
    let mut t = Table::new(&node_header(op.grid.dim, &[column]));
    for (i, &k) in op.interior().iter().enumerate() {
        t.push(node_row(op, k, vec![u8::from(mask.flags[i]).to_string()]));
    }
    t
}

fn partition_of(op: &NonlocalOperator<f64>, shape: &[usize]) -> Result<Partition> {
    Ok(Partition::uniform(&op.grid, shape)?)
}

fn seed_of(cfg: &ExperimentConfig) -> u64 {
    cfg.seed.expect("resolved config carries a seed for randomized kinds")
}

pub fn run_kind(cfg: &ExperimentConfig) -> Result<Outcome> {
    let grid = cfg.grid_spec();
    let op = assemble_operator::<f64>(&grid, cfg.s, cfg.scheme)?;
    let q = cfg.potential.resolve(&grid)?;
    let q0 = cfg.reference.resolve(&grid)?;
    match cfg.kind.expect("resolved config has a kind") {
        Kind::Forward => forward(cfg, &op, &q),
        Kind::Dtn => dtn(&op, &q),
        Kind::MonoCheck => mono_check(cfg, &op),
        Kind::Locpot => locpot(cfg, &op, &q),
        Kind::DetectDefinite | Kind::DetectIndefinite => detect(cfg, &op, &q, &q0),
        Kind::Reconstruct => reconstruct(cfg, &op, &q),
        Kind::Stability => stability(cfg, &op),
        Kind::ConverseCheck => converse(cfg, &op, &q, &q0),
    }
}

fn forward(cfg: &ExperimentConfig, op: &NonlocalOperator<f64>, q: &Potential<f64>) -> Result<Outcome> {
    let p = cfg.forward.as_ref().expect("resolved forward section");
    let n_e = op.n_exterior();
    let g = match &p.exterior {
        ExteriorData::Unit { index } => {
            if *index >= n_e {
                return Err(ConfigError::Invalid(format!("exterior index {index} out of range 0..{n_e}")).into());
            }
            let mut g = DVector::zeros(n_e);
            g[*index] = 1.0;
            g
        }
        ExteriorData::Constant { value } => DVector::from_element(n_e, *value),
        ExteriorData::Values { values } => {
            if values.len() != n_e {
                return Err(ConfigError::Invalid(format!("exterior data has {} values, grid has {n_e}", values.len())).into());
            }
            DVector::from_column_slice(values)
        }
    };
    let f = match &p.source {
        Some(v) if v.len() != op.n_interior() => {
            return Err(ConfigError::Invalid(format!("source has {} values, grid has {}", v.len(), op.n_interior())).into())
        }
        Some(v) => DVector::from_column_slice(v),
        None => DVector::zeros(op.n_interior()),
    };
    let res = resonance_data(op, q, KERNEL_TOL)?;
    let u = solve_dirichlet(op, q, &g, &f)?;
    let u_i = op.interior_part(&u);
    let rhs = &f * op.mass - &op.l_ie * &g;
    let residual = (stiffness(op, q)? * &u_i - &rhs).norm();
    let scale = rhs.norm().max(f64::MIN_POSITIVE);
    let trace = neumann_trace(op, &u)?;

    let mut nodes = Table::new(&node_header(op.grid.dim, &["region", "u"]));
    let exterior_rank: std::collections::HashMap<usize, usize> =
        op.exterior().iter().enumerate().map(|(j, &k)| (k, j)).collect();
    for k in 0..op.n_nodes() {
        let region = if exterior_rank.contains_key(&k) { "exterior" } else { "interior" };
        nodes.push(node_row(op, k, vec![region.to_string(), num(u[k])]));
    }
    let mut neumann = Table::new(&node_header(op.grid.dim, &["neumann"]));
    for (j, &k) in op.exterior().iter().enumerate() {
        neumann.push(node_row(op, k, vec![num(trace[j])]));
    }
    Ok(Outcome {
        results: json!({
            "residual": residual,
            "relative_residual": residual / scale,
            "n_interior": op.n_interior(),
            "n_exterior": n_e,
            "d_q": res.d_q,
            "dim_kernel": res.dim_kernel,
            "l2_coercivity": res.l2_coercivity(),
        }),
        tables: vec![("u.csv", nodes), ("neumann.csv", neumann)],
        matrices: vec![("u.bin", DMatrix::from_column_slice(u.len(), 1, u.as_slice()))],
    })
}

fn dtn(op: &NonlocalOperator<f64>, q: &Potential<f64>) -> Result<Outcome> {
    let map = assemble_dtn(op, q)?;
    let eig = SortedEigen::new(&map.matrix);
    let mut spectrum = Table::new(&["index", "eigenvalue"]);
    for (i, v) in eig.values.iter().enumerate() {
        spectrum.push(vec![i.to_string(), num(*v)]);
    }
    Ok(Outcome {
        results: json!({
            "n_exterior": map.n_exterior(),
            "d_q": map.resonance.d_q,
            "dim_kernel": map.resonance.dim_kernel,
            "codim": map.codim(),
            "l2_coercivity": map.resonance.l2_coercivity(),
            "eigenvalue_min": eig.values.as_slice().first().copied(),
            "eigenvalue_max": eig.values.as_slice().last().copied(),
        }),
        tables: vec![("dtn_spectrum.csv", spectrum)],
        matrices: vec![("dtn.bin", map.matrix)],
    })
}

fn mono_check(cfg: &ExperimentConfig, op: &NonlocalOperator<f64>) -> Result<Outcome> {
    let p = cfg.mono_check.as_ref().expect("resolved mono_check section");
    let mut rng = ChaCha8Rng::seed_from_u64(seed_of(cfg));
    let n = op.n_interior();
    let amp = p.amplitude;
    let mut draw = |len: usize, half: f64| DVector::from_fn(len, |_, _| if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 });
    let mut trials = Vec::with_capacity(p.trials);
    for _ in 0..p.trials {
        let q1 = Potential::new(draw(n, amp))?;
        let q2 = Potential::new(draw(n, amp))?;
        let g = draw(op.n_exterior(), 1.0);
        trials.push((q1, q2, g));
    }
    let mut table = Table::new(&["trial", "lhs", "rhs", "energy", "identity_residual", "scale", "relative_residual"]);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for (t, (q1, q2, g)) in trials.iter().enumerate() {
        let gap = monotonicity_gap(op, q1, q2, g)?;
        let rel = gap.identity_residual / gap.scale;
        worst = worst.max(rel);
        if rel > 1e-10 {
            failures += 1;
        }
        table.push(vec![
            t.to_string(),
            num(gap.lhs),
            num(gap.rhs),
            num(gap.energy),
            num(gap.identity_residual),
            num(gap.scale),
            num(rel),
        ]);
    }
    Ok(Outcome {
        results: json!({
            "trials": p.trials,
            "max_relative_residual": worst,
            "failures_above_1e-10": failures,
        }),
        tables: vec![("mono_check.csv", table)],
        matrices: vec![],
    })
}

fn locpot(cfg: &ExperimentConfig, op: &NonlocalOperator<f64>, q: &Potential<f64>) -> Result<Outcome> {
    let p = cfg.locpot.as_ref().expect("resolved locpot section");
    let mask = mask_from_region(&op.grid, &p.region)?;
    let n_e = op.n_exterior();
    let mut v = DMatrix::zeros(n_e, p.constraints.len());
    for (j, c) in p.constraints.iter().enumerate() {
        if c.len() != n_e {
            return Err(ConfigError::Invalid(format!("constraint {j} has {} values, grid has {n_e}", c.len())).into());
        }
        v.set_column(j, &DVector::from_column_slice(c));
    }
    let r = match &p.second {
        Some(spec) => {
            let q2 = spec.resolve(&op.grid)?;
            simultaneous_localized_potential(op, q, &q2, &mask, &v)?
        }
        None => localized_potential(op, q, &mask, &v)?,
    };
    let inside = DVector::from_iterator(mask.len(), mask.flags.iter().map(|f| f64::from(u8::from(*f))));
    let table = match &r.u2 {
        Some(u2) => interior_table(op, &["in_region", "u", "u2"], &[&inside, &r.u, u2]),
        None => interior_table(op, &["in_region", "u"], &[&inside, &r.u]),
    };
    let mut g_table = Table::new(&node_header(op.grid.dim, &["g"]));
    for (j, &k) in op.exterior().iter().enumerate() {
        g_table.push(node_row(op, k, vec![num(r.g[j])]));
    }
    Ok(Outcome {
        results: json!({
            "ratio": r.ratio,
            "ratio2": r.ratio2,
            "pencil_value": r.pencil_value,
            "region_nodes": mask.count(),
            "excluded_directions": r.constraint_basis.ncols(),
        }),
        tables: vec![("locpot_u.csv", table), ("locpot_g.csv", g_table)],
        matrices: vec![],
    })
}

fn detect(cfg: &ExperimentConfig, op: &NonlocalOperator<f64>, q: &Potential<f64>, q0: &Potential<f64>) -> Result<Outcome> {
    let p = cfg.detection.as_ref().expect("resolved detection section");
    let partition = partition_of(op, &p.partition)?;
    let dictionary = match p.dictionary.as_ref().expect("resolved dictionary") {
        DictionarySpec::ClosedSets { max_arity, cap } => closed_set_dictionary(&partition, *max_arity, *cap)?,
        DictionarySpec::Balls { radius_factors } => ball_dictionary(&op.grid, &partition, radius_factors)?,
    };
    let mut dc = DetectionConfig::new(dictionary);
    dc.alpha0 = p.alpha0;
    dc.levels = p.levels;
    dc.tol = cfg.tolerances.loewner;
    if let Some(t) = &p.thresholds {
        dc.d_policy = DPolicy::Fixed {
            lower: t.lower,
            upper: t.upper,
        };
    }
    let observed = assemble_dtn(op, q)?;
    let result = match cfg.kind {
        Some(Kind::DetectDefinite) => {
            let direction = p.direction.unwrap_or(DefiniteDirection::Up);
            detect_definite(op, q0, &observed, direction, &dc)?
        }
        _ => detect_indefinite(op, q0, &observed, &dc)?,
    };
    let mut table = Table::new(&["candidate_id", "alpha_pass", "neg_count_lower", "neg_count_upper", "pass"]);
    for c in &result.candidates {
        table.push(vec![
            c.id.clone(),
            opt_num(c.outcome.alpha_pass),
            c.outcome.neg_count_lower.to_string(),
            c.outcome.neg_count_upper.map(|n| n.to_string()).unwrap_or_default(),
            c.outcome.pass.to_string(),
        ]);
    }
    let passing: Vec<&str> = result
        .candidates
        .iter()
        .filter(|c| c.outcome.pass)
        .map(|c| c.id.as_str())
        .collect();
    Ok(Outcome {
        results: json!({
            "mode": result.mode,
            "d_q0": result.d_q0,
            "d_q": result.d_q,
            "candidates": result.candidates.len(),
            "passing": passing,
            "aggregate_nodes": result.aggregate.indices(),
            "aggregate_measure": result.aggregate.measure(),
        }),
        tables: vec![
            ("detection.csv", table),
            ("aggregate.csv", mask_table(op, "in_aggregate", &result.aggregate)),
        ],
        matrices: vec![],
    })
}

fn reconstruct(cfg: &ExperimentConfig, op: &NonlocalOperator<f64>, q: &Potential<f64>) -> Result<Outcome> {
    let p = cfg.reconstruct.as_ref().expect("resolved reconstruct section");
    let partition = partition_of(op, &p.partition)?;
    let observed = assemble_dtn(op, q)?;
    let r = reconstruct_monotone(op, &observed, &partition, p.a, p.bisect_tol, cfg.tolerances.loewner)?;
    let mut table = Table::new(&["cell", "sup_value", "inf_value", "estimate", "lower", "upper"]);
    for c in &r.cells {
        table.push(vec![
            c.cell.to_string(),
            num(c.sup_value),
            num(c.inf_value),
            num(c.estimate),
            num(c.lower),
            num(c.upper),
        ]);
    }
    Ok(Outcome {
        results: json!({
            "estimates": r.estimates(),
            "converged": r.converged,
            "sweeps": r.sweeps,
            "evaluations": r.evaluations,
        }),
        tables: vec![("reconstruction.csv", table)],
        matrices: vec![],
    })
}

fn stability(cfg: &ExperimentConfig, op: &NonlocalOperator<f64>) -> Result<Outcome> {
    let p = cfg.stability.as_ref().expect("resolved stability section");
    let seed = seed_of(cfg);
    let partition = partition_of(op, &p.partition)?;
    let ladder = build_ladder(op, p.ladder)?;
    let report = estimate_constant(op, &partition, p.a, &ladder, p.samples, seed)?;
    let mut levels = Table::new(&["level", "c_est"]);
    for (l, c) in report.c_est.iter().enumerate() {
        levels.push(vec![(l + 1).to_string(), num(*c)]);
    }
    let mut pairs = Table::new(&["pair", "kind", "diff_inf", "final_ratio", "roundoff_drop"]);
    for (i, pr) in report.pairs.iter().enumerate() {
        pairs.push(vec![
            i.to_string(),
            serde_json::to_value(pr.kind)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            num(pr.diff_inf),
            num(pr.ratios.last().copied().unwrap_or(0.0)),
            num(pr.roundoff_drop),
        ]);
    }
    let mut results = json!({
        "k_est": report.k_est,
        "c_at_k": report.k_est.map(|k| report.c_est[k - 1]),
        "c_full": report.c_est.last().copied(),
        "floor": report.floor,
        "monotonicity_violations": report.monotonicity_violations(),
        "pairs": report.pairs.len(),
        "max_roundoff_drop": report.pairs.iter().map(|p| p.roundoff_drop).fold(0.0, f64::max),
    });
    let mut tables = vec![("stability.csv", levels), ("pairs.csv", pairs)];
    if p.witness {
        let sets = witness_sets(&partition)?;
        let bounds = dimension_bounds(op, &partition, p.a, p.samples, seed, &[])?;
        let w = witness_data(op, &sets, p.a, &bounds, &ladder)?;
        let mut wt = Table::new(&["set", "min_energy", "max_cross_inner", "max_cross_weighted"]);
        for s in &w.sets {
            wt.push(vec![
                s.set.to_string(),
                num(s.energies.iter().copied().fold(f64::INFINITY, f64::min)),
                num(s.max_cross_inner),
                num(s.max_cross_weighted),
            ]);
        }
        tables.push(("witness.csv", wt));
        results["witness"] = json!({
            "d": bounds.d,
            "n_sampled": bounds.n_sampled,
            "n_trivial": bounds.n_trivial,
            "samples_checked": bounds.samples_checked,
            "count": w.count,
            "delta": w.delta,
            "c": w.c,
            "k": w.k,
        });
    }
    Ok(Outcome {
        results,
        tables,
        matrices: vec![],
    })
}

fn converse(cfg: &ExperimentConfig, op: &NonlocalOperator<f64>, q1: &Potential<f64>, q2: &Potential<f64>) -> Result<Outcome> {
    let r = converse_check(op, q1, q2, cfg.tolerances.loewner)?;
    Ok(Outcome {
        results: json!({
            "pointwise": r.pointwise,
            "d_q1": r.d_q1,
            "d_q2": r.d_q2,
            "geq_holds": r.geq_verdict.holds,
            "geq_neg_count": r.geq_verdict.neg_count,
            "leq_holds": r.leq_verdict.holds,
            "leq_neg_count": r.leq_verdict.neg_count,
            "agrees": r.agrees,
        }),
        tables: vec![],
        matrices: vec![],
    })
}
