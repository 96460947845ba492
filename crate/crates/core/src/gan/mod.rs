//! The generator, discriminator, their losses and the training loop.

pub mod checkpoint;
mod config;
mod discriminator;
mod generator;
mod loss;
pub mod sam;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{DiscriminatorConfig, Fusion, GeneratorConfig, TrainConfig};
pub use discriminator::{Discriminator, LEAKY_SLOPE};
pub use generator::{Generator, Trace};
pub use loss::{discriminator_loss, generator_loss, GeneratorLoss};
pub use sam::{attention_map, sam_forward};
pub use train::{evaluate, train, Dataset, EpochRecord, TrainOutcome};
