pub mod error;
pub mod filtering;
pub mod grid;
pub mod lattice;
pub mod lindblad;
pub mod mcwf;
pub mod propagator;
pub mod renewal;
pub mod stats;
