//! Generator, discriminator and extractor networks and their objectives.

mod losses;
mod nets;

pub use losses::{
    adversarial_loss, adversarial_value, generator_adversarial_loss, perceptual_loss, reconstruction_loss, total_loss,
    total_loss_var, FeatureNet, LossWeights, PROB_EPS,
};
pub use nets::{zero_weights, Discriminator, Extractor, GanArch, Generator, DISC_BLOCKS, EXTRACTOR_LAYERS, UNET_DEPTH};
