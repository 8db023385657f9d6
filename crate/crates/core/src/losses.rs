//! Training objectives and their gradients.
//!
//! Every objective is a per-element mean, so values do not depend on batch or
//! clip length; multiply by the element count to recover plain sums.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{SpectralAnalyzer, SpectralConfig};

/// A scalar loss with its additive breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub terms: Vec<(String, f64)>,
}

impl LossValue {
    pub fn from_terms(terms: Vec<(String, f64)>) -> Self {
        let value = terms.iter().map(|(_, v)| v).sum();
        Self { value, terms }
    }

    fn single(name: &str, value: f64) -> Self {
        Self::from_terms(vec![(name.to_string(), value)])
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

fn check_pair(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "{what}: lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Shape(format!("{what}: empty input")));
    }
    Ok(())
}

fn check_scores(s: &[f64], what: &str) -> Result<()> {
    if s.is_empty() {
        return Err(Error::Shape(format!("{what}: empty score sequence")));
    }
    Ok(())
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute difference of log-magnitude spectra,
/// `mean |log(|STFT(x)| + eps) - log(|STFT(x')| + eps)|`.
#[derive(Clone, Debug)]
pub struct LogMagLoss {
    analyzer: SpectralAnalyzer,
}

impl LogMagLoss {
    pub fn new(cfg: &SpectralConfig) -> Result<Self> {
        Ok(Self {
            analyzer: SpectralAnalyzer::new(cfg)?,
        })
    }

    pub fn analyzer(&self) -> &SpectralAnalyzer {
        &self.analyzer
    }

    pub fn from_analyzer(analyzer: SpectralAnalyzer) -> Self {
        Self { analyzer }
    }

    fn log_mag(&self, x: &[f64]) -> Result<(Array2<rustfft::num_complex::Complex64>, Array2<f64>)> {
        let eps = self.analyzer.config().eps;
        let spec = self.analyzer.stft(x)?;
        let log = spec.mapv(|c| (c.norm() + eps).ln());
        Ok((spec, log))
    }

    pub fn value(&self, x: &[f64], x_prime: &[f64]) -> Result<LossValue> {
        check_pair(x, x_prime, "log_mag_loss")?;
        let (_, a) = self.log_mag(x)?;
        let (_, b) = self.log_mag(x_prime)?;
        let n = a.len();
        Ok(LossValue::single(
            "log_mag",
            mean(a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()), n),
        ))
    }

    /// Loss and its gradient with respect to `generated`.
    pub fn value_and_grad(
        &self,
        generated: &[f64],
        target: &[f64],
    ) -> Result<(LossValue, Vec<f64>)> {
        check_pair(generated, target, "log_mag_loss")?;
        let eps = self.analyzer.config().eps;
        let (spec, lg) = self.log_mag(generated)?;
        let (_, lt) = self.log_mag(target)?;
        let n = lg.len() as f64;
        let mut total = 0.0;
        let mut dmag = Array2::zeros(lg.dim());
        ndarray::Zip::from(&mut dmag)
            .and(&spec)
            .and(&lg)
            .and(&lt)
            .for_each(|d, s, &g, &t| {
                total += (g - t).abs();
                *d = sign(g - t) / ((s.norm() + eps) * n);
            });
        let grad = self
            .analyzer
            .magnitude_backward(&spec, &dmag, generated.len());
        Ok((LossValue::single("log_mag", total / n), grad))
    }
}

pub fn log_mag_loss(x: &[f64], x_prime: &[f64], cfg: &SpectralConfig) -> Result<LossValue> {
    LogMagLoss::new(cfg)?.value(x, x_prime)
}

/// `1/2 mean((s_real - 1)^2) + 1/2 mean(s_fake^2)`.
pub fn lsgan_d_loss(scores_real: &[f64], scores_fake: &[f64]) -> Result<LossValue> {
    Ok(lsgan_d_loss_grad(scores_real, scores_fake)?.0)
}

/// Discriminator loss with gradients w.r.t. the real and fake scores.
pub fn lsgan_d_loss_grad(
    scores_real: &[f64],
    scores_fake: &[f64],
) -> Result<(LossValue, Vec<f64>, Vec<f64>)> {
    check_scores(scores_real, "lsgan_d_loss")?;
    check_scores(scores_fake, "lsgan_d_loss")?;
    let (nr, nf) = (scores_real.len(), scores_fake.len());
    let real = 0.5 * mean(scores_real.iter().map(|s| (s - 1.0) * (s - 1.0)), nr);
    let fake = 0.5 * mean(scores_fake.iter().map(|s| s * s), nf);
    let dr = scores_real.iter().map(|s| (s - 1.0) / nr as f64).collect();
    let df = scores_fake.iter().map(|s| s / nf as f64).collect();
    let value = LossValue::from_terms(vec![("real".into(), real), ("fake".into(), fake)]);
    Ok((value, dr, df))
}

/// `1/2 mean((s_fake - 1)^2)`.
pub fn lsgan_g_loss(scores_fake: &[f64]) -> Result<LossValue> {
    Ok(lsgan_g_loss_grad(scores_fake)?.0)
}

pub fn lsgan_g_loss_grad(scores_fake: &[f64]) -> Result<(LossValue, Vec<f64>)> {
    check_scores(scores_fake, "lsgan_g_loss")?;
    let n = scores_fake.len();
    let v = 0.5 * mean(scores_fake.iter().map(|s| (s - 1.0) * (s - 1.0)), n);
    let d = scores_fake.iter().map(|s| (s - 1.0) / n as f64).collect();
    Ok((LossValue::single("adversarial", v), d))
}

/// Adaptation objective for the generator:
/// `log_mag(x', x) + lambda/2 mean((s_fake - 1)^2)`.
pub fn agan_g_loss(
    x_prime: &[f64],
    x: &[f64],
    scores_fake: &[f64],
    lambda: f64,
    spectral: &LogMagLoss,
) -> Result<LossValue> {
    Ok(agan_g_loss_grad(x_prime, x, scores_fake, lambda, spectral)?.0)
}

/// Adaptation objective with gradients w.r.t. `x_prime` (spectral term
/// only) and w.r.t. the fake scores (adversarial term).
pub fn agan_g_loss_grad(
    x_prime: &[f64],
    x: &[f64],
    scores_fake: &[f64],
    lambda: f64,
    spectral: &LogMagLoss,
) -> Result<(LossValue, Vec<f64>, Vec<f64>)> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    let (lm, dx) = spectral.value_and_grad(x_prime, x)?;
    let (adv, ds) = lsgan_g_loss_grad(scores_fake)?;
    let value = LossValue::from_terms(vec![
        ("log_mag".into(), lm.value),
        ("adversarial".into(), lambda * adv.value),
    ]);
    Ok((value, dx, ds.into_iter().map(|d| lambda * d).collect()))
}

/// Conditional GAN value `mean(log D(x)) + mean(log(1 - D(G(z))))`. Reference
/// only; training uses the least-squares objectives.
pub fn cgan_value(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    check_scores(d_real, "cgan_value")?;
    check_scores(d_fake, "cgan_value")?;
    if let Some(p) = d_real
        .iter()
        .chain(d_fake)
        .find(|p| !(**p > 0.0 && **p < 1.0))
    {
        return Err(Error::Domain(format!(
            "discriminator probability {p} not in (0, 1)"
        )));
    }
    Ok(mean(d_real.iter().map(|p| p.ln()), d_real.len())
        + mean(d_fake.iter().map(|p| (-p).ln_1p()), d_fake.len()))
}

/// Time-domain L1 generator objective `lambda mean|x' - x| + 1/2 mean((s - 1)^2)`.
/// Reference only.
pub fn segan_g_loss(
    x_prime: &[f64],
    x: &[f64],
    scores_fake: &[f64],
    lambda: f64,
) -> Result<LossValue> {
    Ok(segan_g_loss_grad(x_prime, x, scores_fake, lambda)?.0)
}

pub fn segan_g_loss_grad(
    x_prime: &[f64],
    x: &[f64],
    scores_fake: &[f64],
    lambda: f64,
) -> Result<(LossValue, Vec<f64>, Vec<f64>)> {
    let (l1, dx) = l1_time_loss_grad(x_prime, x)?;
    let (adv, ds) = lsgan_g_loss_grad(scores_fake)?;
    let value = LossValue::from_terms(vec![
        ("l1".into(), lambda * l1),
        ("adversarial".into(), adv.value),
    ]);
    Ok((value, dx.into_iter().map(|d| lambda * d).collect(), ds))
}

/// `mean|x' - x|` and its gradient w.r.t. `x'`.
pub fn l1_time_loss_grad(x_prime: &[f64], x: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_pair(x_prime, x, "l1 loss")?;
    let n = x.len() as f64;
    let v = x_prime
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    let d = x_prime
        .iter()
        .zip(x)
        .map(|(a, b)| sign(a - b) / n)
        .collect();
    Ok((v, d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lsgan_spot_values() {
        assert_eq!(lsgan_d_loss(&[1.0; 4], &[0.0; 4]).unwrap().value, 0.0);
        assert_eq!(lsgan_d_loss(&[0.0; 4], &[1.0; 4]).unwrap().value, 1.0);
        assert_eq!(lsgan_d_loss(&[0.5; 4], &[0.5; 4]).unwrap().value, 0.25);
        assert_eq!(lsgan_g_loss(&[1.0; 3]).unwrap().value, 0.0);
        assert_eq!(lsgan_g_loss(&[0.0; 3]).unwrap().value, 0.5);
        assert_eq!(lsgan_g_loss(&[-1.0; 3]).unwrap().value, 2.0);
    }

    #[test]
    fn empty_scores_are_shape_errors() {
        assert!(matches!(lsgan_d_loss(&[], &[0.0]), Err(Error::Shape(_))));
        assert!(matches!(lsgan_g_loss(&[]), Err(Error::Shape(_))));
    }

    #[test]
    fn cgan_spot_values_and_domain() {
        let v = cgan_value(&[0.5; 3], &[0.5; 3]).unwrap();
        assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-15);
        let near = cgan_value(&[1.0 - 1e-12], &[1e-12]).unwrap();
        assert!(near < 0.0 && near > -1e-9);
        assert!(matches!(cgan_value(&[1.0], &[0.5]), Err(Error::Domain(_))));
        assert!(matches!(cgan_value(&[0.5], &[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn segan_spot_values() {
        let x = vec![0.2; 8];
        assert_eq!(segan_g_loss(&x, &x, &[1.0; 8], 100.0).unwrap().value, 0.0);
        let xp: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        let v = segan_g_loss(&xp, &x, &[1.0; 8], 10.0).unwrap().value;
        assert!((v - 1.0).abs() < 1e-12);
        assert!(matches!(
            segan_g_loss(&x[..7], &x, &[1.0], 1.0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn agan_spot_values() {
        let cfg = SpectralConfig {
            frame_length: 64,
            hop: 16,
            ..SpectralConfig::default()
        };
        let spectral = LogMagLoss::new(&cfg).unwrap();
        let x: Vec<f64> = (0..128).map(|i| (i as f64 * 0.37).sin() * 0.5).collect();
        assert_eq!(
            agan_g_loss(&x, &x, &[1.0; 128], 1.5, &spectral)
                .unwrap()
                .value,
            0.0
        );
        assert_eq!(
            agan_g_loss(&x, &x, &[0.0; 128], 1.5, &spectral)
                .unwrap()
                .value,
            0.75
        );
        let y: Vec<f64> = x.iter().map(|v| v * 0.5 + 0.01).collect();
        let a = agan_g_loss(&y, &x, &[0.3; 128], 0.0, &spectral).unwrap();
        assert_eq!(a.value, spectral.value(&y, &x).unwrap().value);
        assert!(agan_g_loss(&y, &x, &[0.3; 128], -1.0, &spectral).is_err());
    }

    #[test]
    fn log_mag_is_symmetric_and_zero_on_diagonal() {
        let cfg = SpectralConfig {
            frame_length: 64,
            hop: 16,
            ..SpectralConfig::default()
        };
        let a: Vec<f64> = (0..200).map(|i| (i as f64 * 0.11).cos() * 0.4).collect();
        let b: Vec<f64> = (0..200).map(|i| (i as f64 * 0.53).sin() * 0.2).collect();
        assert_eq!(log_mag_loss(&a, &a, &cfg).unwrap().value, 0.0);
        assert_eq!(
            log_mag_loss(&a, &b, &cfg).unwrap().value,
            log_mag_loss(&b, &a, &cfg).unwrap().value
        );
        assert!(matches!(
            log_mag_loss(&a, &b[..199], &cfg),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn breakdown_sums_to_value() {
        let (v, _, _) = lsgan_d_loss_grad(&[0.1, 0.7], &[0.4, -0.2]).unwrap();
        let sum: f64 = v.terms.iter().map(|(_, t)| t).sum();
        assert!((v.value - sum).abs() < 1e-15);
    }
}
