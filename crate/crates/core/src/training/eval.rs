use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::generator::Vocoder;
use crate::losses::LogMagLoss;
use crate::rng::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub index: usize,
    pub log_mag: f64,
    /// Root-mean-square log-spectral distance in dB, averaged over frames.
    pub lsd_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub clips: Vec<ClipMetrics>,
    pub mean_log_mag: f64,
    pub std_log_mag: f64,
    pub mean_lsd_db: f64,
}

/// Synthesizes every held-out clip from its own mel frames and compares it
/// with the recording. Clip `i` uses noise seed `derive_seed(seed, [i])`.
pub fn evaluate(
    vocoder: &dyn Vocoder,
    heldout: &Dataset,
    loss: &LogMagLoss,
    seed: u64,
) -> Result<EvalReport> {
    if heldout.is_empty() {
        return Err(Error::Config("held-out set is empty".into()));
    }
    let mut clips = Vec::with_capacity(heldout.len());
    for index in 0..heldout.len() {
        let ex = heldout.full_example(index)?;
        let generated = vocoder.synthesize(&ex.mel, derive_seed(seed, &[index as u64]))?;
        clips.push(ClipMetrics {
            index,
            log_mag: loss.value(generated.samples(), &ex.target)?.value,
            lsd_db: log_spectral_distance(loss, generated.samples(), &ex.target)?,
        });
    }
    let n = clips.len() as f64;
    let mean_log_mag = clips.iter().map(|c| c.log_mag).sum::<f64>() / n;
    let var = clips
        .iter()
        .map(|c| (c.log_mag - mean_log_mag).powi(2))
        .sum::<f64>()
        / n;
    Ok(EvalReport {
        mean_log_mag,
        std_log_mag: var.sqrt(),
        mean_lsd_db: clips.iter().map(|c| c.lsd_db).sum::<f64>() / n,
        clips,
    })
}

pub fn log_spectral_distance(loss: &LogMagLoss, x: &[f64], y: &[f64]) -> Result<f64> {
    let analyzer = loss.analyzer();
    let eps = analyzer.config().eps;
    let (sx, sy) = (analyzer.stft(x)?, analyzer.stft(y)?);
    let frames = sx.nrows();
    let mut total = 0.0;
    for (rx, ry) in sx.rows().into_iter().zip(sy.rows()) {
        let ms = rx
            .iter()
            .zip(ry.iter())
            .map(|(a, b)| (20.0 * ((a.norm() + eps) / (b.norm() + eps)).log10()).powi(2))
            .sum::<f64>()
            / rx.len() as f64;
        total += ms.sqrt();
    }
    Ok(total / frames as f64)
}
