pub mod bounds;
pub mod certifier;
pub mod correlations;
pub mod error;
pub mod io;
pub mod linalg;
pub mod operators;
pub mod states;
