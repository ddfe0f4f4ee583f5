//! Minimal CPU network kit: convolution layers, a U-Net generator, a
//! conditional discriminator, the composite generator loss, ADAM and the
//! training loop.

pub mod checkpoint;
pub mod loss;
pub mod net;
pub mod ops;
pub mod optim;
mod tensor;
pub mod train;

pub use checkpoint::{infer, Checkpoint, Model};
pub use loss::{composite_generator_loss, gan_losses, perceptual_loss, GeneratorLoss, LossWeights, SsimVariant};
pub use net::{Discriminator, DiscriminatorOutput, Generator, LayerKind, LayerSpec, Network, NetworkSpec};
pub use ops::Mode;
pub use optim::{adam_step, Adam, AdamConfig, AdamState};
pub use tensor::Tensor;
pub use train::{train, EpochLog, TrainConfig, TrainOutcome, Trainer, TrainingPair};
