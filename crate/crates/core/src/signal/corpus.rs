use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};
use crate::rng::derive_rng;

/// Timbre family of a synthetic "speaker": a glottal-like harmonic source
/// with a spectral tilt and one resonance, gated by a syllabic amplitude
/// envelope, plus a little breath noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerSpec {
    pub f0_min: f64,
    pub f0_max: f64,
    /// Harmonic amplitude slope in dB per octave (negative = darker).
    pub tilt_db_per_octave: f64,
    pub formant_hz: f64,
    pub formant_bandwidth_hz: f64,
    pub formant_gain_db: f64,
    /// Rate of the raised-cosine amplitude envelope.
    pub syllable_rate_hz: f64,
    /// Relative f0 modulation depth at 5 Hz.
    pub vibrato_depth: f64,
    pub noise_level: f64,
    /// Peak absolute amplitude each clip is normalized to.
    pub peak: f64,
}

impl SpeakerSpec {
    /// Low, dark voice used for pretraining.
    pub fn low_dark() -> Self {
        Self {
            f0_min: 95.0,
            f0_max: 140.0,
            tilt_db_per_octave: -10.0,
            formant_hz: 500.0,
            formant_bandwidth_hz: 150.0,
            formant_gain_db: 6.0,
            syllable_rate_hz: 3.0,
            vibrato_depth: 0.01,
            noise_level: 0.01,
            peak: 0.6,
        }
    }

    /// Higher, brighter voice used as the adaptation target.
    pub fn high_bright() -> Self {
        Self {
            f0_min: 210.0,
            f0_max: 310.0,
            tilt_db_per_octave: -3.0,
            formant_hz: 1800.0,
            formant_bandwidth_hz: 300.0,
            formant_gain_db: 12.0,
            syllable_rate_hz: 4.5,
            vibrato_depth: 0.02,
            noise_level: 0.03,
            peak: 0.8,
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.f0_min > 0.0 && self.f0_max >= self.f0_min && self.f0_max < nyquist) {
            return Err(Error::Config(format!(
                "f0 range [{}, {}] is empty or outside (0, {nyquist})",
                self.f0_min, self.f0_max
            )));
        }
        if !(self.formant_bandwidth_hz > 0.0 && self.peak > 0.0 && self.peak <= 1.0) {
            return Err(Error::Config(
                "formant bandwidth must be positive and peak in (0, 1]".into(),
            ));
        }
        if self.noise_level < 0.0 || self.syllable_rate_hz < 0.0 || self.vibrato_depth < 0.0 {
            return Err(Error::Config(
                "noise, syllable rate and vibrato must be >= 0".into(),
            ));
        }
        Ok(())
    }

    fn harmonic_gain(&self, freq: f64, harmonic: usize) -> f64 {
        let tilt = 10f64.powf(self.tilt_db_per_octave * (harmonic as f64).log2() / 20.0);
        let boost = 10f64.powf(self.formant_gain_db / 20.0) - 1.0;
        let z = (freq - self.formant_hz) / self.formant_bandwidth_hz;
        tilt * (1.0 + boost * (-0.5 * z * z).exp())
    }
}

/// One clip of `len` samples; clip `index` of a corpus seeded by `seed`.
pub fn synth_clip(
    spec: &SpeakerSpec,
    len: usize,
    sample_rate: u32,
    seed: u64,
    index: u64,
) -> Result<Waveform> {
    spec.validate(sample_rate)?;
    if len == 0 {
        return Err(Error::Config("clip length must be positive".into()));
    }
    let mut rng = derive_rng(seed, &[index]);
    let sr = sample_rate as f64;
    let nyquist = sr / 2.0;
    let f_start = rng.random_range(spec.f0_min..=spec.f0_max);
    let f_end = rng.random_range(spec.f0_min..=spec.f0_max);
    let env_phase = rng.random_range(0.0..2.0 * PI);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let max_harmonics = (nyquist / spec.f0_min).floor() as usize;
    let mut phases = vec![0.0f64; max_harmonics + 1];
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let frac = t as f64 / len as f64;
        let secs = t as f64 / sr;
        let f0 = (f_start + (f_end - f_start) * frac)
            * (1.0 + spec.vibrato_depth * (2.0 * PI * 5.0 * secs + vib_phase).sin());
        let env =
            0.25 + 0.75 * (0.5 - 0.5 * (2.0 * PI * spec.syllable_rate_hz * secs + env_phase).cos());
        let mut v = 0.0;
        for (h, phase) in phases.iter_mut().enumerate().skip(1) {
            let freq = f0 * h as f64;
            if freq >= 0.95 * nyquist {
                break;
            }
            *phase = (*phase + 2.0 * PI * freq / sr) % (2.0 * PI);
            v += spec.harmonic_gain(freq, h) * phase.sin();
        }
        v += spec.noise_level * noise.sample(&mut rng);
        out.push(env * v);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = spec.peak / peak;
        out.iter_mut().for_each(|v| *v *= scale);
    }
    Waveform::new(out, sample_rate)
}

/// `n_clips` clips, each deterministic in `(spec, seed, clip index)`.
pub fn synth_corpus(
    spec: &SpeakerSpec,
    n_clips: usize,
    clip_len: usize,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<Waveform>> {
    if n_clips == 0 {
        return Err(Error::Config("corpus needs at least one clip".into()));
    }
    (0..n_clips as u64)
        .map(|i| synth_clip(spec, clip_len, sample_rate, seed, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = SpeakerSpec::low_dark();
        let a = synth_corpus(&spec, 3, 1000, 8000, 9).unwrap();
        let b = synth_corpus(&spec, 3, 1000, 8000, 9).unwrap();
        assert_eq!(a, b);
        let c = synth_corpus(&spec, 3, 1000, 8000, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn clips_respect_peak() {
        let spec = SpeakerSpec::high_bright();
        for w in synth_corpus(&spec, 2, 2000, 8000, 1).unwrap() {
            let peak = w.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((peak - spec.peak).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_f0_range_is_rejected() {
        let spec = SpeakerSpec {
            f0_min: 200.0,
            f0_max: 150.0,
            ..SpeakerSpec::low_dark()
        };
        assert!(matches!(
            synth_corpus(&spec, 1, 1000, 8000, 0),
            Err(Error::Config(_))
        ));
        assert!(synth_corpus(&SpeakerSpec::low_dark(), 0, 1000, 8000, 0).is_err());
    }
}
