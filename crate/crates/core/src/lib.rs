//! SEEG/audio contrastive matching workbench.

pub mod audiofeat;
pub mod datamodel;
pub mod dsp;
pub mod error;
pub mod experiments;
pub mod models;
pub mod sacm;
pub mod synthgen;
pub mod util;

pub use error::{Error, Result};
