//! Regularized weighted-potential games with prospect-theoretic agents.

pub mod certify;
pub mod cli;
pub mod game;
pub mod io;
pub mod solvers;
pub mod pt;
pub mod scenarios;
