//! Pseudospectral toolkit for the finite- and infinite-depth Camassa-Choi
//! equations on a periodic rectangle.

pub mod cli;
pub mod constants;
pub mod decomposition;
pub mod error;
pub mod illposed;
pub mod io;
pub mod normalform;
pub mod solver;
pub mod wavepacket;
pub mod spectral;
pub mod symbols;

pub use error::{Error, Result};
pub use spectral::{Field, Grid, Space, SymbolTable};
pub use symbols::Depth;
