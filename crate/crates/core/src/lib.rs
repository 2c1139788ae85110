pub mod error;
pub mod nn;
pub mod rng;
pub mod tensor_archive;

pub use error::{Error, Result};
pub mod corpus;
pub mod fine_context;
pub mod audiofeat;
pub mod coarse_context;
pub mod acoustic;
pub mod pipeline;
