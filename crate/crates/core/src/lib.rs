//! Horizontal mean curvature flow in sub-Riemannian geometries.
//!
//! The crate computes the flow three ways: pointwise curvature formulas
//! ([`calculus`], [`rotational`]), an explicit level-set solver
//! ([`levelset`]) and a Monte Carlo estimator of the stochastic-control
//! value function ([`sde`]). [`crossval`] runs them against each other.

pub mod calculus;
pub mod config;
pub mod crossval;
pub mod error;
pub mod expr;
pub mod field;
pub mod geometry;
pub mod levelset;
pub mod linalg;
pub mod output;
pub mod rotational;
pub mod sde;

pub use error::{Error, Result};
pub use calculus::{jet, HorizontalJet};
pub use config::RunConfig;
pub use crossval::{crossval, CrossvalReport, CrossvalSpec, Problem};
pub use expr::Expr;
pub use field::ScalarField;
pub use levelset::{Branch, GridField, SchemeParams};
pub use rotational::{NamedSurface, RotationalProfile};
pub use geometry::{Frame, GroupPoint, HormanderReport};
pub use sde::{ControlMatrix, ControlPolicy, EssSup, SimParams, Surrogate};
