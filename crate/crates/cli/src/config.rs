//! Experiment configuration: a single JSON document, checked against the
//! published schema (`schema/config.schema.json`) before any computation.

use std::path::Path;
use std::sync::OnceLock;

use fracmono::forward::Potential;
use fracmono::inversion::DefiniteDirection;
use fracmono::stability::LadderPolicy;
use fracmono::{GridSpec, Partition, Region, Scheme};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// The published JSON schema, embedded for `--print-schema` and tests.
pub const SCHEMA: &str = include_str!("../schema/config.schema.json");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config does not match the schema: {}", .0.join("; "))]
    Schema(Vec<String>),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn schema_validator() -> &'static jsonschema::Validator {
    static VALIDATOR: OnceLock<jsonschema::Validator> = OnceLock::new();
    VALIDATOR.get_or_init(|| {
        let schema: serde_json::Value = serde_json::from_str(SCHEMA).expect("embedded schema is JSON");
        jsonschema::validator_for(&schema).expect("embedded schema compiles")
    })
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Forward,
    Dtn,
    MonoCheck,
    Locpot,
    DetectDefinite,
    DetectIndefinite,
    Reconstruct,
    Stability,
    ConverseCheck,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Forward => "forward",
            Kind::Dtn => "dtn",
            Kind::MonoCheck => "mono-check",
            Kind::Locpot => "locpot",
            Kind::DetectDefinite => "detect-definite",
            Kind::DetectIndefinite => "detect-indefinite",
            Kind::Reconstruct => "reconstruct",
            Kind::Stability => "stability",
            Kind::ConverseCheck => "converse-check",
        }
    }

    fn randomized(self) -> bool {
        matches!(self, Kind::MonoCheck | Kind::Stability)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    pub grid: GridConfig,
    pub s: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Potential `q` (or `q₁` for pairwise kinds).
    #[serde(default)]
    pub potential: PotentialSpec,
    /// Reference potential `q₀` (or `q₂` for pairwise kinds).
    #[serde(default)]
    pub reference: PotentialSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward: Option<ForwardParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mono_check: Option<MonoCheckParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locpot: Option<LocPotParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruct: Option<ReconstructParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityParams>,
    #[serde(default)]
    pub output: OutputParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_hi: Option<Vec<f64>>,
    pub h: f64,
    /// Defaults to the largest extent of `Ω`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collar_width: Option<f64>,
}

impl GridConfig {
    pub fn resolve(&self) -> GridSpec {
        let lo = self.omega_lo.clone().unwrap_or_else(|| vec![0.0; self.dim]);
        let hi = self.omega_hi.clone().unwrap_or_else(|| vec![1.0; self.dim]);
        let width = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
        GridSpec {
            dim: self.dim,
            omega_lo: lo,
            omega_hi: hi,
            collar_width: self.collar_width.unwrap_or(width),
            h: self.h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionValue {
    pub region: Region,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// Constant on the cells of a uniform partition.
    Cells {
        shape: Vec<usize>,
        values: Vec<f64>,
    },
    /// One value per interior node.
    Nodal {
        values: Vec<f64>,
    },
    /// `base` everywhere, overwritten region by region in order.
    Regions {
        #[serde(default)]
        base: f64,
        regions: Vec<RegionValue>,
    },
}

impl PotentialSpec {
    pub fn resolve(&self, grid: &GridSpec) -> Result<Potential<f64>, ConfigError> {
        let layout = grid.layout().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let n = layout.n_interior();
        let q = match self {
            PotentialSpec::Zero => Potential::zeros(n),
            PotentialSpec::Constant { value } => Potential::constant(n, *value),
            PotentialSpec::Cells { shape, values } => {
                let part = Partition::uniform(grid, shape).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                part.potential(values).map_err(|e| ConfigError::Invalid(e.to_string()))?
            }
            PotentialSpec::Nodal { values } => {
                if values.len() != n {
                    return invalid(format!("nodal potential has {} values, grid has {n} interior nodes", values.len()));
                }
                Potential::new(DVector::from_column_slice(values)).map_err(|e| ConfigError::Invalid(e.to_string()))?
            }
            PotentialSpec::Regions { base, regions } => {
                let mut values = vec![*base; n];
                for rv in regions {
                    for (i, &k) in layout.interior.iter().enumerate() {
                        if rv.region.contains(&layout.coords(k)) {
                            values[i] = rv.value;
                        }
                    }
                }
                Potential::new(DVector::from_vec(values)).map_err(|e| ConfigError::Invalid(e.to_string()))?
            }
        };
        Ok(q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative eigenvalue threshold of the Loewner tests.
    pub loewner: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            loewner: fracmono::loewner::LOEWNER_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExteriorData {
    /// Coordinate vector of one exterior node.
    Unit { index: usize },
    Constant { value: f64 },
    Values { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardParams {
    pub exterior: ExteriorData,
    /// Interior source `f`; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Vec<f64>>,
}

impl Default for ForwardParams {
    fn default() -> Self {
        Self {
            exterior: ExteriorData::Unit { index: 0 },
            source: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonoCheckParams {
    pub trials: usize,
    /// Potentials are drawn uniformly from `[−amplitude, amplitude]` per node.
    pub amplitude: f64,
}

impl Default for MonoCheckParams {
    fn default() -> Self {
        Self {
            trials: 50,
            amplitude: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocPotParams {
    pub region: Region,
    /// When present, runs the simultaneous search with `q₂` from this spec.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second: Option<PotentialSpec>,
    /// Extra constraint directions, one exterior vector each.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DictionarySpec {
    ClosedSets {
        max_arity: usize,
        #[serde(default = "default_cap")]
        cap: usize,
    },
    Balls {
        radius_factors: Vec<f64>,
    },
}

fn default_cap() -> usize {
    fracmono::inversion::MAX_DICTIONARY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub lower: usize,
    pub upper: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionParams {
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(default = "default_levels")]
    pub levels: usize,
    pub partition: Vec<usize>,
    /// Defaults to balls for definite runs and single-cell complements otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<DictionarySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<DefiniteDirection>,
    /// Fixed thresholds replacing `d(q₀) + d(q)` and `d(q)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Thresholds>,
}

fn default_alpha0() -> f64 {
    1e-3
}

fn default_levels() -> usize {
    24
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructParams {
    pub partition: Vec<usize>,
    pub a: f64,
    #[serde(default = "default_bisect_tol")]
    pub bisect_tol: f64,
}

fn default_bisect_tol() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityParams {
    pub partition: Vec<usize>,
    pub a: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub ladder: LadderPolicy,
    /// Also run the witness construction.
    #[serde(default = "default_true")]
    pub witness: bool,
}

fn default_samples() -> usize {
    64
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputParams {
    /// Write matrices in the binary format next to the CSV tables.
    pub dump_matrices: bool,
}

impl Default for OutputParams {
    fn default() -> Self {
        Self { dump_matrices: true }
    }
}

impl ExperimentConfig {
    /// Parses `text` after checking it against [`SCHEMA`].
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let errors: Vec<String> = schema_validator()
            .iter_errors(&value)
            .map(|e| format!("{} at '{}'", e, e.instance_path))
            .collect();
        if !errors.is_empty() {
            return Err(ConfigError::Schema(errors));
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Fills defaults, applies the command-line overrides and checks every
    /// constraint that the schema cannot express.
    pub fn resolve(mut self, kind: Kind, seed: Option<u64>) -> Result<Self, ConfigError> {
        if let Some(k) = self.kind {
            if k != kind {
                return invalid(format!("config is for kind '{}', command asks for '{}'", k.name(), kind.name()));
            }
        }
        self.kind = Some(kind);
        if seed.is_some() {
            self.seed = seed;
        }
        let grid = self.grid.resolve();
        self.grid.omega_lo = Some(grid.omega_lo.clone());
        self.grid.omega_hi = Some(grid.omega_hi.clone());
        self.grid.collar_width = Some(grid.collar_width);
        grid.layout().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.s > 0.0 && self.s < 1.0) {
            return invalid(format!("s = {} outside (0, 1)", self.s));
        }
        if !(self.tolerances.loewner > 0.0) {
            return invalid("tolerances.loewner must be positive");
        }
        if kind.randomized() && self.seed.is_none() {
            return invalid(format!("kind '{}' is randomized and needs a seed", kind.name()));
        }
        self.potential.resolve(&grid)?;
        self.reference.resolve(&grid)?;
        match kind {
            Kind::Forward => {
                self.forward.get_or_insert_with(ForwardParams::default);
            }
            Kind::MonoCheck => {
                let p = self.mono_check.get_or_insert_with(MonoCheckParams::default);
                if p.trials == 0 || !(p.amplitude >= 0.0) {
                    return invalid("mono_check needs trials ≥ 1 and amplitude ≥ 0");
                }
            }
            Kind::Locpot => {
                if self.locpot.is_none() {
                    return invalid("kind 'locpot' needs a 'locpot' section");
                }
            }
            Kind::DetectDefinite | Kind::DetectIndefinite => {
                let Some(p) = self.detection.as_mut() else {
                    return invalid("detection kinds need a 'detection' section");
                };
                if !(p.alpha0 > 0.0) {
                    return invalid("detection.alpha0 must be positive");
                }
                if p.dictionary.is_none() {
                    p.dictionary = Some(if kind == Kind::DetectDefinite {
                        DictionarySpec::Balls {
                            radius_factors: vec![0.5, 1.0, 1.5],
                        }
                    } else {
                        DictionarySpec::ClosedSets {
                            max_arity: 1,
                            cap: default_cap(),
                        }
                    });
                }
                if kind == Kind::DetectDefinite && p.direction.is_none() {
                    p.direction = Some(DefiniteDirection::Up);
                }
            }
            Kind::Reconstruct => {
                let Some(p) = self.reconstruct.as_ref() else {
                    return invalid("kind 'reconstruct' needs a 'reconstruct' section");
                };
                if !(p.a > 0.0) || !(p.bisect_tol > 0.0) {
                    return invalid("reconstruct.a and reconstruct.bisect_tol must be positive");
                }
            }
            Kind::Stability => {
                let Some(p) = self.stability.as_ref() else {
                    return invalid("kind 'stability' needs a 'stability' section");
                };
                if !(p.a > 0.0) || p.samples == 0 {
                    return invalid("stability.a must be positive and stability.samples ≥ 1");
                }
            }
            Kind::Dtn | Kind::ConverseCheck => {}
        }
        Ok(self)
    }

    pub fn grid_spec(&self) -> GridSpec {
        self.grid.resolve()
    }
}
