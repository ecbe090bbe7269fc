pub mod boundary;
pub mod grid;
pub mod io;
pub mod leaf;
pub mod linear;
pub mod manufactured;
pub mod profile;
pub mod quantities;
pub mod solver;
pub mod tolerances;
pub mod verifier;
