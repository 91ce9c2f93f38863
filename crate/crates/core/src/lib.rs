//! Verification workbench for commuting local Hamiltonians on 2D lattices.
//!
//! Instances are read from a JSON format (see [`model`]), certificates are
//! produced by [`oracle::prove`] and checked by [`witness::verify`].

pub mod linalg;
pub mod model;
pub mod algebra;
pub mod budget;
pub mod reduction;
pub mod removal;
pub mod factorized;
pub mod oracle;
pub mod witness;
pub mod cli;
