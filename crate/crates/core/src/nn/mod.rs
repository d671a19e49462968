pub mod disc;
pub mod layers;
pub mod perceptual;
pub mod unet;

pub use disc::DiscriminatorHead;
pub use perceptual::PerceptualProxy;
pub use unet::{ArchSpec, UNet};
