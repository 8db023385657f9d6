//! Single optimization steps. Each draws its noise from the caller's RNG,
//! computes the batch-mean objective and applies one Adam update to exactly
//! one network.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Example;
use super::optim::{adam_step_model, AdamParams, OptimizerState};
use super::TrainingConfig;
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::{IafGenerator, NoiseSample};
use crate::losses::{agan_g_loss_grad, l1_time_loss_grad, lsgan_d_loss_grad, LogMagLoss};
use crate::nn::zeros_like;

/// Batch-mean loss terms and diagnostics of one update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub loss: f64,
    pub terms: BTreeMap<String, f64>,
    /// Mean discriminator score on real and generated audio.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score_real: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score_fake: Option<f64>,
    /// `1/2 mean((s_fake - 1)^2)` before weighting by lambda.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adversarial_unweighted: Option<f64>,
}

impl StepLosses {
    fn add(&mut self, name: &str, v: f64, n: usize) {
        *self.terms.entry(name.to_string()).or_default() += v / n as f64;
    }

    fn finish(mut self) -> Result<Self> {
        self.loss = self.terms.values().sum();
        if !self.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss terms {:?}", self.terms)));
        }
        Ok(self)
    }
}

pub fn adam_params(cfg: &TrainingConfig) -> AdamParams {
    AdamParams {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    }
}

fn check_batch(batch: &[Example], frame_length: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    if let Some(ex) = batch.iter().find(|ex| ex.target.len() < frame_length) {
        return Err(Error::Data(format!(
            "batch example of {} samples is shorter than one frame ({frame_length})",
            ex.target.len()
        )));
    }
    Ok(())
}

fn generate(g: &IafGenerator, ex: &Example, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let z = NoiseSample::logistic(ex.target.len(), rng);
    g.forward_parallel(&z, &ex.mel)
}

/// Generator update on `log_mag + l1_weight * mean|x' - x|`.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_step(
    g: &mut IafGenerator,
    opt: &mut OptimizerState,
    batch: &[Example],
    loss: &LogMagLoss,
    l1_weight: f64,
    lr: f64,
    hp: &AdamParams,
    rng: &mut impl Rng,
) -> Result<StepLosses> {
    check_batch(batch, loss.analyzer().config().frame_length)?;
    let n = batch.len();
    let mut grad = zeros_like(g);
    let mut out = StepLosses::default();
    for ex in batch {
        let z = NoiseSample::logistic(ex.target.len(), rng);
        let trace = g.forward_traced(&z.z, ex.mel.channels())?;
        let (lm, mut dx) = loss.value_and_grad(trace.output(), &ex.target)?;
        let (l1, dl1) = l1_time_loss_grad(trace.output(), &ex.target)?;
        dx.iter_mut()
            .zip(&dl1)
            .for_each(|(d, e)| *d = (*d + l1_weight * e) / n as f64);
        g.backward(&trace, &dx, Some(&mut grad));
        out.add("log_mag", lm.value, n);
        out.add("l1", l1_weight * l1, n);
    }
    let out = out.finish()?;
    adam_step_model(g, &grad, opt, lr, hp)?;
    Ok(out)
}

/// Discriminator update on the least-squares objective; `g` only produces
/// the fakes and is never modified.
pub fn adapt_d_step(
    d: &mut Discriminator,
    opt: &mut OptimizerState,
    g: &IafGenerator,
    batch: &[Example],
    lr: f64,
    hp: &AdamParams,
    rng: &mut impl Rng,
) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let n = batch.len();
    let mut grad = zeros_like(d);
    let mut out = StepLosses::default();
    let (mut real_mean, mut fake_mean) = (0.0, 0.0);
    for ex in batch {
        let fake = generate(g, ex, rng)?;
        let (sr, tr) = d.forward_traced(&ex.target, ex.mel.channels())?;
        let (sf, tf) = d.forward_traced(&fake, ex.mel.channels())?;
        let (value, dr, df) = lsgan_d_loss_grad(&sr.per_step, &sf.per_step)?;
        let scale = |v: Vec<f64>| v.into_iter().map(|x| x / n as f64).collect::<Vec<_>>();
        d.backward(&tr, &scale(dr), Some(&mut grad));
        d.backward(&tf, &scale(df), Some(&mut grad));
        for (name, v) in &value.terms {
            out.add(name, *v, n);
        }
        real_mean += sr.pooled / n as f64;
        fake_mean += sf.pooled / n as f64;
    }
    out.score_real = Some(real_mean);
    out.score_fake = Some(fake_mean);
    let out = out.finish()?;
    adam_step_model(d, &grad, opt, lr, hp)?;
    Ok(out)
}

/// Generator update on `log_mag + lambda/2 mean((D(x') - 1)^2)`; `d` is
/// only evaluated and never modified.
#[allow(clippy::too_many_arguments)]
pub fn adapt_g_step(
    g: &mut IafGenerator,
    opt: &mut OptimizerState,
    d: &Discriminator,
    batch: &[Example],
    loss: &LogMagLoss,
    lambda: f64,
    lr: f64,
    hp: &AdamParams,
    rng: &mut impl Rng,
) -> Result<StepLosses> {
    check_batch(batch, loss.analyzer().config().frame_length)?;
    let n = batch.len();
    let mut grad = zeros_like(g);
    let mut out = StepLosses::default();
    let (mut fake_mean, mut unweighted) = (0.0, 0.0);
    for ex in batch {
        let z = NoiseSample::logistic(ex.target.len(), rng);
        let trace = g.forward_traced(&z.z, ex.mel.channels())?;
        let (sf, tf) = d.forward_traced(trace.output(), ex.mel.channels())?;
        let (value, mut dx, ds) =
            agan_g_loss_grad(trace.output(), &ex.target, &sf.per_step, lambda, loss)?;
        let dx_adv = d.backward(&tf, &ds, None);
        dx.iter_mut()
            .zip(&dx_adv)
            .for_each(|(a, b)| *a = (*a + b) / n as f64);
        g.backward(&trace, &dx, Some(&mut grad));
        for (name, v) in &value.terms {
            out.add(name, *v, n);
        }
        fake_mean += sf.pooled / n as f64;
        unweighted += 0.5
            * sf.per_step
                .iter()
                .map(|s| (s - 1.0) * (s - 1.0))
                .sum::<f64>()
            / sf.per_step.len() as f64
            / n as f64;
    }
    out.score_fake = Some(fake_mean);
    out.adversarial_unweighted = Some(unweighted);
    let out = out.finish()?;
    adam_step_model(g, &grad, opt, lr, hp)?;
    Ok(out)
}
