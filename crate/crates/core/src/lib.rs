//! Dynamic structural equation models encoded as netlists and sheaves of
//! timeseries data, with consistency-radius inference and subsystem analysis.

pub mod cli;
pub mod dsem;
pub mod inference;
pub mod io;
pub mod maps;
pub mod netlist;
pub mod optim;
pub mod sheaf_builder;
pub mod subsystems;
pub mod topology;
