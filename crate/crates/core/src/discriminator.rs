//! Conditional real/fake scorer over raw waveforms.
//!
//! Ten non-causal dilated convolutions (kernel 3) with LeakyReLU(0.2), then
//! a linear 1x1 output layer giving one least-squares score per sample. The
//! upsampled mel condition is concatenated to the waveform at the input.

use ndarray::{concatenate, s, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{ConditionUpsampler, UpsamplerConfig, UpsamplerTrace};
use crate::error::{Error, Result};
use crate::generator::receptive_field;
use crate::nn::{join, Conv1d, Padding, Parameterized};
use crate::signal::MelSpectrogram;

pub const DISCRIMINATOR_LAYERS: usize = 10;
pub const DISCRIMINATOR_KERNEL: usize = 3;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    /// One dilation per dilated layer; exactly ten entries.
    pub dilations: Vec<usize>,
    pub channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            dilations: Self::linear_dilations(),
            channels: 64,
        }
    }
}

impl DiscriminatorConfig {
    /// 1, 2, ..., 10: a maximum dilation of ten.
    pub fn linear_dilations() -> Vec<usize> {
        (1..=DISCRIMINATOR_LAYERS).collect()
    }

    /// 1, 2, 4, ..., 512.
    pub fn doubling_dilations() -> Vec<usize> {
        (0..DISCRIMINATOR_LAYERS).map(|i| 1 << i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilations.len() != DISCRIMINATOR_LAYERS {
            return Err(Error::Config(format!(
                "discriminator needs exactly {DISCRIMINATOR_LAYERS} dilations, got {}",
                self.dilations.len()
            )));
        }
        if self.dilations.contains(&0) || self.channels == 0 {
            return Err(Error::Config(
                "discriminator dilations and channels must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(DISCRIMINATOR_KERNEL, &self.dilations)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Linear,
}

/// Introspection record for one convolution of the scorer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub kernel: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub causal: bool,
    pub activation: Activation,
}

/// Per-timestep scores and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub per_step: Vec<f64>,
    pub pooled: f64,
}

impl Scores {
    fn from_row(row: ArrayView1<f64>) -> Self {
        let per_step = row.to_vec();
        let pooled = per_step.iter().sum::<f64>() / per_step.len() as f64;
        Self { per_step, pooled }
    }
}

#[derive(Clone, Debug)]
pub struct DiscriminatorTrace {
    upsampler: Option<UpsamplerTrace>,
    cond_channels: usize,
    /// Input of every dilated layer; the first is waveform plus condition.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of every dilated layer.
    pres: Vec<Array2<f64>>,
    /// Input of the output layer.
    last: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    layers: Vec<Conv1d>,
    output: Conv1d,
    upsampler: ConditionUpsampler,
}

fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

impl Discriminator {
    pub fn new(
        cfg: &DiscriminatorConfig,
        upsampler_cfg: &UpsamplerConfig,
        n_mels: usize,
        hop: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let upsampler = ConditionUpsampler::new(n_mels, upsampler_cfg, hop, rng)?;
        Self::with_upsampler(cfg, upsampler, rng)
    }

    pub fn with_upsampler(
        cfg: &DiscriminatorConfig,
        upsampler: ConditionUpsampler,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
        let mut width = 1 + upsampler.out_channels();
        let mut layers = Vec::with_capacity(DISCRIMINATOR_LAYERS);
        for &d in &cfg.dilations {
            layers.push(
                Conv1d::zeros(width, cfg.channels, DISCRIMINATOR_KERNEL, d, Padding::Same)
                    .randomized(gain, rng),
            );
            width = cfg.channels;
        }
        let output = Conv1d::zeros(cfg.channels, 1, 1, 1, Padding::Same).randomized(1.0, rng);
        Ok(Self {
            layers,
            output,
            upsampler,
        })
    }

    pub fn upsampler(&self) -> &ConditionUpsampler {
        &self.upsampler
    }

    pub fn cond_channels(&self) -> usize {
        self.upsampler.out_channels()
    }

    pub fn dilations(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.dilation).collect()
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(DISCRIMINATOR_KERNEL, &self.dilations())
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let spec = |l: &Conv1d, activation| LayerSpec {
            kernel: l.kernel(),
            dilation: l.dilation,
            in_channels: l.in_channels(),
            out_channels: l.out_channels(),
            causal: l.padding == Padding::Causal,
            activation,
        };
        self.layers
            .iter()
            .map(|l| spec(l, Activation::LeakyRelu(LEAKY_SLOPE)))
            .chain(std::iter::once(spec(&self.output, Activation::Linear)))
            .collect()
    }

    /// Zeroes every weight that reads the condition channels, making the
    /// scores independent of the mel input.
    pub fn zero_condition_inputs(&mut self) {
        self.layers[0].weight.slice_mut(s![.., .., 1..]).fill(0.0);
    }

    /// Sets every parameter (including the output bias) to zero.
    pub fn zero_all(&mut self) {
        self.fill(0.0);
    }

    pub fn score(&self, x: &[f64], mel: &MelSpectrogram) -> Result<Scores> {
        Ok(self.forward_traced(x, mel.channels())?.0)
    }

    /// Scores `x` against an already upsampled condition `(channels, T)`.
    pub fn score_conditioned(&self, x: &[f64], cond: ArrayView2<f64>) -> Result<Scores> {
        Ok(self.forward_with_condition(x, cond, None)?.0)
    }

    pub fn forward_traced(
        &self,
        x: &[f64],
        mel: ArrayView2<f64>,
    ) -> Result<(Scores, DiscriminatorTrace)> {
        let expected = mel.ncols() * self.upsampler.hop();
        if x.len() != expected {
            return Err(Error::Shape(format!(
                "waveform has {} samples, {} mel frames need {expected}",
                x.len(),
                mel.ncols()
            )));
        }
        let (cond, up_trace) = self.upsampler.upsample_traced(mel)?;
        self.forward_with_condition(x, cond.view(), Some(up_trace))
    }

    fn forward_with_condition(
        &self,
        x: &[f64],
        cond: ArrayView2<f64>,
        up_trace: Option<UpsamplerTrace>,
    ) -> Result<(Scores, DiscriminatorTrace)> {
        if x.is_empty() || cond.ncols() != x.len() || cond.nrows() != self.cond_channels() {
            return Err(Error::Shape(format!(
                "waveform of {} samples against condition {:?}",
                x.len(),
                cond.dim()
            )));
        }
        let wave = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let input = concatenate(Axis(0), &[wave, cond]).expect("same length");
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = input;
        for layer in &self.layers {
            let pre = layer.forward(h.view());
            inputs.push(std::mem::replace(&mut h, pre.mapv(leaky)));
            pres.push(pre);
        }
        let out = self.output.forward(h.view());
        let scores = Scores::from_row(out.row(0));
        Ok((
            scores,
            DiscriminatorTrace {
                upsampler: up_trace,
                cond_channels: cond.nrows(),
                inputs,
                pres,
                last: h,
            },
        ))
    }

    /// Backpropagates `dscores` (gradient w.r.t. per-step scores). Parameter
    /// gradients, including the upsampler's, go into `grad` when given.
    /// Returns the gradient with respect to the waveform.
    pub fn backward(
        &self,
        trace: &DiscriminatorTrace,
        dscores: &[f64],
        mut grad: Option<&mut Discriminator>,
    ) -> Vec<f64> {
        let dy = ArrayView2::from_shape((1, dscores.len()), dscores).expect("row vector");
        let mut dh = self.output.backward(
            trace.last.view(),
            dy,
            grad.as_deref_mut().map(|g| &mut g.output),
        );
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let pre = &trace.pres[i];
            dh.zip_mut_with(pre, |d, &p| {
                if p < 0.0 {
                    *d *= LEAKY_SLOPE
                }
            });
            dh = layer.backward(
                trace.inputs[i].view(),
                dh.view(),
                grad.as_deref_mut().map(|g| &mut g.layers[i]),
            );
        }
        if let (Some(g), Some(up)) = (grad, trace.upsampler.as_ref()) {
            let dcond = dh.slice(s![1..1 + trace.cond_channels, ..]);
            self.upsampler.backward(up, dcond, Some(&mut g.upsampler));
        }
        dh.row(0).to_vec()
    }
}

impl Parameterized for Discriminator {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("dilated{i}")), f);
        }
        self.output.visit(&join(prefix, "output"), f);
        self.upsampler.visit_params(&join(prefix, "upsampler"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("dilated{i}")), f);
        }
        self.output.visit_mut(&join(prefix, "output"), f);
        self.upsampler
            .visit_params_mut(&join(prefix, "upsampler"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(rng: &mut ChaCha8Rng) -> Discriminator {
        let cfg = DiscriminatorConfig {
            channels: 4,
            ..DiscriminatorConfig::default()
        };
        let up = UpsamplerConfig {
            strides: vec![2, 2, 2, 2],
            channels: vec![2, 2, 2, 2],
        };
        Discriminator::new(&cfg, &up, 3, 16, rng).unwrap()
    }

    #[test]
    fn receptive_fields() {
        assert_eq!(DiscriminatorConfig::default().receptive_field(), 111);
        assert_eq!(receptive_field(3, &[1]), 3);
        assert_eq!(receptive_field(3, &[1; 10]), 21);
    }

    #[test]
    fn rejects_wrong_depth() {
        let cfg = DiscriminatorConfig {
            dilations: vec![1, 2, 3],
            channels: 4,
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_network_scores_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = small(&mut rng);
        d.zero_all();
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        let cond = Array2::from_elem((2, 64), 0.5);
        let s = d.score_conditioned(&x, cond.view()).unwrap();
        assert!(s.per_step.iter().all(|&v| v == 0.0));
        assert_eq!(s.pooled, 0.0);
    }

    #[test]
    fn constant_input_gives_constant_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = small(&mut rng);
        let len = 400;
        let x = vec![0.3; len];
        let cond = Array2::from_elem((2, len), -0.2);
        let s = d.score_conditioned(&x, cond.view()).unwrap();
        let half = (d.receptive_field() - 1) / 2;
        let interior = &s.per_step[half..len - half];
        assert!(interior.iter().all(|v| (v - interior[0]).abs() < 1e-12));
        // The boundary sees zero padding and differs.
        assert!((s.per_step[0] - interior[0]).abs() > 1e-9);
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = small(&mut rng);
        let mel = Array2::zeros((3, 4));
        assert!(matches!(
            d.forward_traced(&[0.0; 63], mel.view()),
            Err(Error::Shape(_))
        ));
    }
}
