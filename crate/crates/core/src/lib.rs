//! Bayesian spatial mixture model for areal boundary detection.
//!
//! Each area carries a Gaussian mixture density over atoms shared by all
//! areas. Mixture weights receive a logistic multivariate CAR prior on a
//! random graph inside the admissible adjacency; edges that the posterior
//! switches off are reported as boundaries. The sampler alternates a
//! reversible-jump move on the number of components with a Pólya-Gamma
//! augmented Gibbs sweep.

pub mod between;
pub mod distributions;
pub mod error;
pub mod inference;
pub mod io;
pub(crate) mod linalg;
pub mod model;
pub mod sampler;
pub mod scenarios;
pub mod within;

pub use error::{Error, Result};
pub use model::{
    alr, inverse_alr, leroux_precision, logmcar_logpdf, Adjacency, Area, AreaDataset, Atom,
    ChainState, GlobalState, GraphState, Hyperparams, MixtureState,
};
