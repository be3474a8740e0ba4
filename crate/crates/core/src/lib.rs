pub mod basis_select;
pub mod cli;
pub mod cluster;
pub mod dataset;
pub mod error;
mod linalg;
pub mod moments;
pub mod qpsolve;
pub mod scores;
pub mod sim;
pub mod subspace;
