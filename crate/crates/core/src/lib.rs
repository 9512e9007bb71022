//! Sequential Bayesian inference of log-permeability in a 1D resin injection model.

pub mod diagnostics;
pub mod ensemble;
pub mod experiment;
pub mod forward;
pub mod io;
pub mod observation;
pub mod prior;
pub mod renka;
pub mod rng;
pub mod smc;
pub mod tempering;
