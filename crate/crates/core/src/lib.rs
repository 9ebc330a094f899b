pub mod assembly;
pub mod cases;
pub mod cli;
pub mod config;
pub mod error;
pub mod filter;
pub mod io;
pub mod material;
pub mod mesh;
pub mod metrics;
pub mod optimizer;
pub mod process;
pub mod sensitivity;

pub use error::{Error, Result};
