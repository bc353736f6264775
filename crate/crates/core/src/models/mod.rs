//! Networks: the EEGNet detector, the dilated residual SEEG encoder and the
//! frozen audio encoder, plus checkpoint I/O.

mod audio;
mod checkpoint;
mod eegnet;
mod encoder;
pub mod layers;

pub use audio::{AudioEncoder, BUILTIN_DIM};
pub use checkpoint::{read_checkpoint, save_checkpoint, CheckpointMeta, ParamMeta};
pub use eegnet::{EegNet, EegNetConfig};
pub use encoder::{Activation, SeegEncoder, SeegEncoderConfig};
