//! Adversarial speaker adaptation for a flow-based parallel vocoder.
//!
//! A noise-to-waveform generator built from affine inverse-autoregressive
//! flow stages is first fitted to one synthetic speaker with a log-magnitude
//! STFT objective, then adapted to a second speaker with a least-squares
//! adversarial term supplied by a non-causal dilated-convolution
//! discriminator. No autoregressive teacher is involved at any point.

pub mod conditioning;
pub mod config;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod signal;
pub mod training;

pub use conditioning::{ConditionUpsampler, UpsamplerConfig};
pub use config::ExperimentConfig;
pub use discriminator::{Discriminator, DiscriminatorConfig, Scores};
pub use error::{Error, Result};
pub use generator::{GeneratorConfig, IafGenerator, NoiseSample, Vocoder};
pub use losses::LossValue;
pub use signal::{
    ComplexSpectrogram, MelSpectrogram, SpeakerSpec, SpectralAnalyzer, SpectralConfig, Waveform,
    WindowKind,
};
