pub mod arch;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod fit;
pub mod harness;
pub mod io;
pub mod pipeline;
pub mod presets;
pub mod region;
pub mod solver;

pub use error::{Error, Result};
