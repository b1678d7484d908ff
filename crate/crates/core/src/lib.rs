//! Confidence intervals for interval-identified parameters whose identity is
//! selected from the data.
//!
//! A [`BoundsSpec`] describes the lower and upper bounds of every option as
//! max/min families of affine functions of a reduced-form parameter `p`.
//! Given an estimate of `p` ([`ReducedForm`]), a selection rule from
//! [`select`] picks an option and records the polyhedral event that certifies
//! the choice. The [`ci`] module then builds conditional, projection, hybrid
//! and conventional intervals for the selected identified interval.
//!
//! The algebraic core is generic over `f32`/`f64` through [`Real`]; the
//! Gaussian kernel, interval construction, LP conversion and simulation work
//! in `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod ci;
pub mod condition;
pub mod error;
pub mod gauss;
pub mod linalg;
pub mod lpbounds;
pub mod model;
pub mod select;
pub(crate) mod serde_ext;
pub mod sim;

pub use ci::{
    conditional_ci, conventional_ci, hybrid_ci, projection_ci, CiKind, ConfidenceInterval, CriticalValues, UpperTarget,
};
pub use condition::{direction, truncation_bounds, ConditioningWindow, DirectionData};
pub use error::{Error, ErrorClass, Result};
pub use linalg::{Matrix, Real};
pub use model::{
    estimate_bounds, undominated_set, BoundEstimate, BoundsSpec, OptionBounds, Piece, Polyhedron, ReducedForm,
    UndominatedSet,
};
pub use select::{fixed_target, rule_cms, rule_weighted, RuleKind, SelectionOutcome};

pub type BoundsSpecF32 = BoundsSpec<f32>;
pub type BoundsSpecF64 = BoundsSpec<f64>;
pub type ReducedFormF32 = ReducedForm<f32>;
pub type ReducedFormF64 = ReducedForm<f64>;
pub type PolyhedronF32 = Polyhedron<f32>;
pub type PolyhedronF64 = Polyhedron<f64>;
pub type SelectionOutcomeF32 = SelectionOutcome<f32>;
pub type SelectionOutcomeF64 = SelectionOutcome<f64>;
pub type DirectionDataF32 = DirectionData<f32>;
pub type DirectionDataF64 = DirectionData<f64>;
pub type MatrixF32 = Matrix<f32>;
pub type MatrixF64 = Matrix<f64>;
