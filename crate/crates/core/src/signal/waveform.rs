use crate::error::{Error, Result};

/// Mono audio clip with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    /// Wraps `samples`, rejecting empty, non-finite or out-of-range input.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::check_header(samples.len(), sample_rate)?;
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::Domain(format!(
                "sample {i} = {s} is outside [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Wraps `samples` after clipping them to `[-1, 1]`. Non-finite samples
    /// are still rejected.
    pub fn clipped(mut samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::check_header(samples.len(), sample_rate)?;
        for (i, s) in samples.iter_mut().enumerate() {
            if !s.is_finite() {
                return Err(Error::Domain(format!("sample {i} is not finite")));
            }
            *s = s.clamp(-1.0, 1.0);
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    fn check_header(len: usize, sample_rate: u32) -> Result<()> {
        if len == 0 {
            return Err(Error::Data("waveform has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
