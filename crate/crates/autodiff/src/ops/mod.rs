pub mod activation;
pub mod basic;
pub mod conv;
pub mod norm;

pub use conv::{Conv1dSpec, Conv2dSpec};
pub use norm::{BatchNormMode, BatchNormStats};
