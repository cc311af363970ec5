//! First-passage functionals of Markov-modulated fluid processes with a
//! time-varying modulating chain.
//!
//! * [`model`]: state space, rates and generator families.
//! * [`evolution`]: evolution matrices of the modulating chain.
//! * [`homog`]: Wiener–Hopf factorization for constant generators.
//! * [`passage`]: semi-Lagrangian solver for passage functionals.
//! * [`mc`]: exact path simulation and Monte Carlo estimates.
//! * [`queries`]: Laplace tables, homogeneous cross-checks, inversion.
//! * [`verify`]: oracle-based verification suites.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod evolution;
pub mod homog;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod passage;
pub mod queries;
pub mod stats;
pub mod verify;

pub use evolution::{evolution_matrix, EvolutionError, EvolutionMatrix};
pub use homog::{factorize, homog_passage_matrix, HomogError, HomogFactorization};
pub use mc::{estimate_expectation, Estimate, McError, PassageQuery, Sampler};
pub use model::{FamilyKind, FluidModel, GeneratorFamily, ModelError, Sign, StateSpace};
pub use passage::{solve, BoundaryFunction, GridFunction, GridParams, PassageError};
pub use queries::{homog_crosscheck, laplace_passage_table, LaplaceOptions, LaplaceTable, QueryError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Homog(#[from] HomogError),
    #[error(transparent)]
    Passage(#[from] PassageError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("{0}")]
    Runtime(String),
}
