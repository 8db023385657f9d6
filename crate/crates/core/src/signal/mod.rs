//! Audio containers, STFT/mel analysis, WAV I/O and synthetic speakers.

mod corpus;
mod spectral;
mod wav;
mod waveform;

pub use corpus::{synth_clip, synth_corpus, SpeakerSpec};
pub use spectral::{
    magnitude, mel_filterbank, mel_spectrogram, stft, ComplexSpectrogram, MelSpectrogram,
    SpectralAnalyzer, SpectralConfig, WindowKind,
};
pub use wav::{load_wav, save_wav};
pub use waveform::Waveform;

/// HTK-style mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}
