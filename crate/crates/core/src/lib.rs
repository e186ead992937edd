pub mod analysis;
pub mod autodiff;
pub mod bisim;
pub mod dataset;
pub mod empirical;
pub mod env;
pub mod error;
pub mod mdp;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod relation;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
