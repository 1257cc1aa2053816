//! Parameter estimation for small-noise multiscale diffusions
//!
//! `dX = [(eps/delta) b_theta(X, X/delta) + c_theta(X, X/delta)] dt + sqrt(eps) sigma(X, X/delta) dW`
//!
//! with coefficients periodic in the fast variable. The crate simulates such
//! paths, solves the periodic cell and Poisson problems behind the limiting
//! dynamics, evaluates exact, pseudo and limiting log-likelihoods, and runs
//! Monte Carlo studies of the resulting estimators.

pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod estimate;
pub mod io;
pub mod likelihood;
pub mod mc;
pub mod model;
pub mod numerics;
pub mod path;
pub mod torus;

pub use error::{Error, Result};
pub use model::{builtin_model, ModelOptions, ModelRegistry, ModelSpec, Regime, ScaleParams, ThetaDomain};
pub use path::Path;
pub use torus::TorusGrid;
