use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{hz_to_mel, mel_to_hz, Waveform};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; n],
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

/// Framing and feature-extraction parameters.
///
/// `Default` gives the full-scale analysis setup (2048-sample frames, hop
/// 256, 80 mel bands); [`SpectralConfig::desk`] scales framing down for
/// 8 kHz experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralConfig {
    pub frame_length: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub n_mels: usize,
    /// Floor added before every logarithm.
    pub eps: f64,
    pub fmin: f64,
    /// Upper edge of the mel filterbank; `None` means Nyquist.
    pub fmax: Option<f64>,
    /// Whether mel features are returned as `log(mel + eps)`.
    pub log_mel: bool,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            frame_length: 2048,
            hop: 256,
            window: WindowKind::Hann,
            n_mels: 80,
            eps: 1e-7,
            fmin: 0.0,
            fmax: None,
            log_mel: true,
        }
    }
}

impl SpectralConfig {
    pub fn desk() -> Self {
        Self {
            frame_length: 512,
            hop: 64,
            ..Self::default()
        }
    }

    pub fn bins(&self) -> usize {
        self.frame_length / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_length < 2 || self.hop == 0 {
            return Err(Error::Config(format!(
                "frame_length ({}) must be >= 2 and hop ({}) >= 1",
                self.frame_length, self.hop
            )));
        }
        if self.hop > self.frame_length {
            return Err(Error::Config(format!(
                "hop ({}) exceeds frame_length ({})",
                self.hop, self.frame_length
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be at least 1".into()));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.fmin < 0.0 || self.fmax.is_some_and(|f| f <= self.fmin) {
            return Err(Error::Config(
                "mel range must satisfy 0 <= fmin < fmax".into(),
            ));
        }
        Ok(())
    }

    /// Number of whole frames in a signal of `len` samples; trailing partial
    /// frames are dropped.
    pub fn frame_count(&self, len: usize) -> Result<usize> {
        if len < self.frame_length {
            return Err(Error::TooShort {
                len,
                min: self.frame_length,
            });
        }
        Ok((len - self.frame_length) / self.hop + 1)
    }

    /// Sample offset of the hop-long region associated with the first frame:
    /// frame `f` is aligned with samples `[offset + f*hop, offset + (f+1)*hop)`,
    /// centred on the frame's analysis window.
    pub fn alignment_offset(&self) -> usize {
        self.frame_length / 2 - self.hop / 2
    }
}

/// STFT of a waveform: `frames x (frame_length/2 + 1)` complex values.
#[derive(Clone, Debug)]
pub struct ComplexSpectrogram {
    pub values: Array2<Complex64>,
    pub config: SpectralConfig,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }
}

/// Mel features, `frames x n_mels`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
    pub log_compressed: bool,
    pub sample_rate: u32,
    pub config: SpectralConfig,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.ncols()
    }

    /// Channel-major view used as network input: `n_mels x frames`.
    pub fn channels(&self) -> ArrayView2<'_, f64> {
        self.values.t()
    }

    /// Frames `[start, start + count)` as a new spectrogram.
    pub fn slice_frames(&self, start: usize, count: usize) -> Result<MelSpectrogram> {
        if start + count > self.frames() || count == 0 {
            return Err(Error::Shape(format!(
                "frame window {start}..{} outside 0..{}",
                start + count,
                self.frames()
            )));
        }
        Ok(MelSpectrogram {
            values: self.values.slice(s![start..start + count, ..]).to_owned(),
            log_compressed: self.log_compressed,
            sample_rate: self.sample_rate,
            config: self.config.clone(),
        })
    }
}

/// Cached FFT plans and window for one [`SpectralConfig`].
#[derive(Clone)]
pub struct SpectralAnalyzer {
    config: SpectralConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralAnalyzer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralAnalyzer")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl SpectralAnalyzer {
    pub fn new(config: &SpectralConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: config.window.coefficients(config.frame_length),
            forward: planner.plan_fft_forward(config.frame_length),
            inverse: planner.plan_fft_inverse(config.frame_length),
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &SpectralConfig {
        &self.config
    }

    pub fn stft(&self, x: &[f64]) -> Result<Array2<Complex64>> {
        let n = self.config.frame_length;
        let frames = self.config.frame_count(x.len())?;
        let bins = self.config.bins();
        let mut out = Array2::zeros((frames, bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for f in 0..frames {
            let start = f * self.config.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(x[start + i] * self.window[i], 0.0);
            }
            self.forward.process(&mut buf);
            for (k, v) in out.row_mut(f).iter_mut().enumerate() {
                *v = buf[k];
            }
        }
        Ok(out)
    }

    /// Gradient of a scalar with respect to the input signal, given its
    /// gradient `dmag` with respect to `|stft(x)|`. Bins with zero magnitude
    /// receive a zero subgradient.
    pub fn magnitude_backward(
        &self,
        spec: &Array2<Complex64>,
        dmag: &Array2<f64>,
        len: usize,
    ) -> Vec<f64> {
        let n = self.config.frame_length;
        let mut dx = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (f, (srow, grow)) in spec.rows().into_iter().zip(dmag.rows()).enumerate() {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            for (k, (sv, g)) in srow.iter().zip(grow.iter()).enumerate() {
                let m = sv.norm();
                if m > 0.0 {
                    buf[k] = sv * (g / m);
                }
            }
            self.inverse.process(&mut buf);
            let start = f * self.config.hop;
            for (i, b) in buf.iter().enumerate() {
                dx[start + i] += self.window[i] * b.re;
            }
        }
        dx
    }

    pub fn mel_filterbank(&self, sample_rate: u32) -> Array2<f64> {
        let fmax = self.config.fmax.unwrap_or(sample_rate as f64 / 2.0);
        mel_filterbank(
            self.config.n_mels,
            self.config.frame_length,
            sample_rate,
            self.config.fmin,
            fmax,
        )
    }

    pub fn mel_spectrogram(&self, x: &Waveform) -> Result<MelSpectrogram> {
        let mag = self.stft(x.samples())?.mapv(|c| c.norm());
        let bank = self.mel_filterbank(x.sample_rate());
        let mut values = mag.dot(&bank.t());
        if self.config.log_mel {
            let eps = self.config.eps;
            values.mapv_inplace(|v| (v + eps).ln());
        }
        Ok(MelSpectrogram {
            values,
            log_compressed: self.config.log_mel,
            sample_rate: x.sample_rate(),
            config: self.config.clone(),
        })
    }
}

/// Triangular mel filterbank, `n_mels x (frame_length/2 + 1)`, peak 1.
pub fn mel_filterbank(
    n_mels: usize,
    frame_length: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> Array2<f64> {
    let bins = frame_length / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / frame_length as f64;
    let mut bank = Array2::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f > left && f <= centre {
                (f - left) / (centre - left)
            } else if f > centre && f < right {
                (right - f) / (right - centre)
            } else {
                0.0
            };
            bank[[m, k]] = w;
        }
    }
    bank
}

pub fn stft(x: &Waveform, cfg: &SpectralConfig) -> Result<ComplexSpectrogram> {
    let values = SpectralAnalyzer::new(cfg)?.stft(x.samples())?;
    Ok(ComplexSpectrogram {
        values,
        config: cfg.clone(),
    })
}

pub fn magnitude(s: &ComplexSpectrogram) -> Array2<f64> {
    s.values.mapv(|c| c.norm())
}

pub fn mel_spectrogram(x: &Waveform, cfg: &SpectralConfig) -> Result<MelSpectrogram> {
    SpectralAnalyzer::new(cfg)?.mel_spectrogram(x)
}
