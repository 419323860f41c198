//! File formats, pipeline orchestration and figures on top of
//! [`reflectmap_core`].

pub mod config;
pub mod error;
pub mod figures;
pub mod io;
pub mod localize;
pub mod pipeline;
pub mod scenario;

pub use error::{Error, Result};
pub use reflectmap_core as core;
