//! Discrete fractional Schrödinger forward solver, Dirichlet-to-Neumann maps,
//! finite-codimension Loewner-order tests, monotonicity-based inversion and
//! Lipschitz-stability experiments.
//!
//! All numerical types are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`.

pub mod error;
pub mod forward;
pub mod fracops;
pub mod inversion;
pub mod linalg;
pub mod loewner;
pub mod scalar;
pub mod stability;

pub use error::{Error, Result};
pub use fracops::{
    assemble_operator, bilinear_form, mask_from_region, GridSpec, Partition, Region, RegionMask,
    Scheme,
};
pub use loewner::{eq_fin, leq_d, neg_eig_count, projected_operator_norm, Direction, OrderVerdict};
pub use scalar::Scalar;

pub type Operator = fracops::NonlocalOperator<f64>;
pub type Potential = forward::Potential<f64>;
pub type DtnMap = forward::DtnMap<f64>;
pub type ResonanceData = forward::ResonanceData<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;
