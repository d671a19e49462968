//! Synthetic paired super-resolution data, degradation, latent codecs and
//! dataset persistence.

pub mod codec;
pub mod dataset;
pub mod degrade;
pub mod toy;

pub use codec::{CodecKind, HaarCodec, IdentityCodec, LatentCodec};
pub use dataset::{load_dataset, make_paired, save_dataset, DataConfig, Dataset};
pub use degrade::{degrade, DegradationSpec, Upsample};
pub use toy::{make_toy_hr, ToyKind};
