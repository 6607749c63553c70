//! Differentiable building blocks with hand-written backward passes.

pub mod conv;
pub mod encoder;
pub mod layers;
pub mod projector;

pub use conv::Conv2d;
pub use encoder::{Encoder, EncoderCache};
pub use layers::{ChannelAffine, Linear, MaxPool2d};
pub use projector::{Projector, ProjectorCache};
