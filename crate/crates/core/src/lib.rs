//! Exact analysis and simulation of compact pure-jump Markov neuron networks.

pub mod error;
pub mod harness;
pub mod inequalities;
pub mod model;
pub mod observable;
pub mod semigroup;
pub mod simulate;
pub mod statespace;

pub use error::{PjmpError, Result};
pub use model::{
    apply_jump, carre_du_champ, generator_apply, model_constants, total_rate, Config,
    IntensitySpec, ModelConstants, NetworkParams, Rational,
};
pub use semigroup::{kernel, Kernel, PathFunctional, Schedule};
pub use statespace::{
    build_rate_matrix, enumerate_reachable, invariant_domain, invariant_measure, Distribution,
    RateMatrix, StateSpace,
};
