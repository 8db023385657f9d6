//! Parallel waveform generator: a stack of affine inverse-autoregressive
//! flow stages. Each stage maps its input noise `z` to
//! `x_t = z_t * sigma_t + mu_t`, where `(mu_t, log sigma_t)` come from a
//! causal dilated WaveNet-style network that sees only `z_{<t}` and the
//! upsampled mel condition. Because the shift and scale never depend on the
//! stage's own output, every timestep is computed in one pass.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{ConditionUpsampler, UpsamplerConfig, UpsamplerTrace};
use crate::error::{Error, Result};
use crate::nn::{join, sigmoid, tanh, Conv1d, Padding, Parameterized};
use crate::rng::derive_rng;
use crate::signal::{MelSpectrogram, Waveform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub stages: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub channels: usize,
    /// Symmetric bound applied to every log-scale.
    pub log_scale_clamp: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            stages: 2,
            kernel: 2,
            dilations: (0..8).map(|i| 1 << i).collect(),
            channels: 16,
            log_scale_clamp: 7.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.kernel == 0 || self.channels == 0 {
            return Err(Error::Config(
                "generator stages, kernel and channels must be positive".into(),
            ));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::Config(
                "generator dilations must be non-empty and positive".into(),
            ));
        }
        if !(self.log_scale_clamp > 0.0) {
            return Err(Error::Config("log_scale_clamp must be positive".into()));
        }
        Ok(())
    }

    /// Samples of past noise visible to one stage.
    pub fn receptive_field(&self) -> usize {
        receptive_field(self.kernel, &self.dilations)
    }
}

/// `1 + (k - 1) * sum(d)` for a stack of dilated convolutions.
pub fn receptive_field(kernel: usize, dilations: &[usize]) -> usize {
    1 + (kernel - 1) * dilations.iter().sum::<usize>()
}

/// Standard-logistic noise driving the flow.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSample {
    pub z: Vec<f64>,
}

impl NoiseSample {
    pub fn logistic(len: usize, rng: &mut impl Rng) -> Self {
        let z = (0..len)
            .map(|_| {
                let u = loop {
                    let u: f64 = rng.random();
                    if u > 0.0 {
                        break u;
                    }
                };
                u.ln() - (-u).ln_1p()
            })
            .collect();
        Self { z }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Anything that turns mel features into audio.
pub trait Vocoder {
    fn synthesize(&self, mel: &MelSpectrogram, seed: u64) -> Result<Waveform>;
}

#[derive(Clone, Debug)]
struct GatedLayer {
    dilated: Conv1d,
    cond: Conv1d,
    /// First half of the output feeds the residual stream, second half the
    /// skip sum.
    out: Conv1d,
}

/// One affine flow stage.
#[derive(Clone, Debug)]
pub struct FlowStage {
    input: Conv1d,
    layers: Vec<GatedLayer>,
    head: Conv1d,
    clamp: f64,
}

#[derive(Clone, Debug)]
struct NetTrace {
    shifted: Array2<f64>,
    hs: Vec<Array2<f64>>,
    pres: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>,
    skip_act: Array2<f64>,
}

#[derive(Clone, Debug)]
struct StageTrace {
    input: Vec<f64>,
    net: NetTrace,
    log_scale: Vec<f64>,
    sigma: Vec<f64>,
    output: Vec<f64>,
}

/// Forward values needed to backpropagate through the generator.
#[derive(Clone, Debug)]
pub struct GeneratorTrace {
    cond: Array2<f64>,
    upsampler: UpsamplerTrace,
    stages: Vec<StageTrace>,
    output: Vec<f64>,
}

impl GeneratorTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl FlowStage {
    fn new(cfg: &GeneratorConfig, cond_channels: usize, rng: &mut impl Rng) -> Self {
        let c = cfg.channels;
        let out_gain = 1.0 / (cfg.dilations.len() as f64).sqrt();
        let layers = cfg
            .dilations
            .iter()
            .map(|&d| GatedLayer {
                dilated: Conv1d::zeros(c, 2 * c, cfg.kernel, d, Padding::Causal)
                    .randomized(1.0, rng),
                cond: Conv1d::zeros(cond_channels, 2 * c, 1, 1, Padding::Same).randomized(1.0, rng),
                out: Conv1d::zeros(c, 2 * c, 1, 1, Padding::Same).randomized(out_gain, rng),
            })
            .collect();
        Self {
            input: Conv1d::zeros(1, c, 1, 1, Padding::Same).randomized(1.0, rng),
            layers,
            // Zero head: mu = 0, log sigma = 0, so the stage starts as identity.
            head: Conv1d::zeros(c, 2, 1, 1, Padding::Same),
            clamp: cfg.log_scale_clamp,
        }
    }

    fn channels(&self) -> usize {
        self.input.out_channels()
    }

    /// Runs the conditioning network on `input` (the stage's noise) and
    /// returns `(2, T)`: row 0 is the shift, row 1 the unclamped log-scale.
    fn network(&self, input: &[f64], cond: ArrayView2<f64>) -> (Array2<f64>, NetTrace) {
        let len = input.len();
        let c = self.channels();
        let mut shifted = Array2::zeros((1, len));
        for t in 1..len {
            shifted[[0, t]] = input[t - 1];
        }
        let mut h = self.input.forward(shifted.view());
        let mut skip = Array2::<f64>::zeros((c, len));
        let mut trace = NetTrace {
            shifted,
            hs: Vec::with_capacity(self.layers.len()),
            pres: Vec::with_capacity(self.layers.len()),
            gates: Vec::with_capacity(self.layers.len()),
            skip_act: Array2::zeros((0, 0)),
        };
        for layer in &self.layers {
            let pre = layer.dilated.forward(h.view()) + layer.cond.forward(cond);
            let gate = Zip::from(pre.slice(s![..c, ..]))
                .and(pre.slice(s![c.., ..]))
                .map_collect(|&a, &b| tanh(a) * sigmoid(b));
            let o = layer.out.forward(gate.view());
            let next = &h + &o.slice(s![..c, ..]);
            skip += &o.slice(s![c.., ..]);
            trace.hs.push(h);
            trace.pres.push(pre);
            trace.gates.push(gate);
            h = next;
        }
        trace.skip_act = skip.mapv(tanh);
        (self.head.forward(trace.skip_act.view()), trace)
    }

    fn forward(&self, input: &[f64], cond: ArrayView2<f64>) -> StageTrace {
        let (head, net) = self.network(input, cond);
        let log_scale = head.row(1).to_vec();
        let sigma: Vec<f64> = log_scale
            .iter()
            .map(|&l| l.clamp(-self.clamp, self.clamp).exp())
            .collect();
        let output = input
            .iter()
            .zip(&sigma)
            .zip(head.row(0))
            .map(|((z, s), m)| z * s + m)
            .collect();
        StageTrace {
            input: input.to_vec(),
            net,
            log_scale,
            sigma,
            output,
        }
    }

    /// Returns the gradient with respect to the stage input; accumulates the
    /// gradient with respect to the upsampled condition into `dcond`.
    fn backward(
        &self,
        trace: &StageTrace,
        dx: &[f64],
        cond: ArrayView2<f64>,
        dcond: &mut Array2<f64>,
        mut grad: Option<&mut FlowStage>,
    ) -> Vec<f64> {
        let len = dx.len();
        let c = self.channels();
        let mut dz: Vec<f64> = dx.iter().zip(&trace.sigma).map(|(d, s)| d * s).collect();
        let mut dhead = Array2::zeros((2, len));
        for t in 0..len {
            dhead[[0, t]] = dx[t];
            let l = trace.log_scale[t];
            if l > -self.clamp && l < self.clamp {
                dhead[[1, t]] = dx[t] * trace.input[t] * trace.sigma[t];
            }
        }
        let net = &trace.net;
        let ds = self.head.backward(
            net.skip_act.view(),
            dhead.view(),
            grad.as_deref_mut().map(|g| &mut g.head),
        );
        let dskip = Zip::from(&ds)
            .and(&net.skip_act)
            .map_collect(|&d, &a| d * (1.0 - a * a));
        let mut dh = Array2::<f64>::zeros((c, len));
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let mut glayer = grad.as_deref_mut().map(|g| &mut g.layers[i]);
            let dout = concatenate(Axis(0), &[dh.view(), dskip.view()]).expect("same length");
            let dgate = layer.out.backward(
                net.gates[i].view(),
                dout.view(),
                glayer.as_deref_mut().map(|g| &mut g.out),
            );
            let pre = &net.pres[i];
            let (a, b) = (pre.slice(s![..c, ..]), pre.slice(s![c.., ..]));
            let mut dpre = Array2::<f64>::zeros((2 * c, len));
            {
                let (mut da, mut db) = dpre.view_mut().split_at(Axis(0), c);
                Zip::from(&mut da)
                    .and(&mut db)
                    .and(&dgate)
                    .and(a)
                    .and(b)
                    .for_each(|da, db, &g, &a, &b| {
                        let (th, sg) = (tanh(a), sigmoid(b));
                        *da = g * sg * (1.0 - th * th);
                        *db = g * th * sg * (1.0 - sg);
                    });
            }
            *dcond += &layer.cond.backward(
                cond,
                dpre.view(),
                glayer.as_deref_mut().map(|g| &mut g.cond),
            );
            dh += &layer.dilated.backward(
                net.hs[i].view(),
                dpre.view(),
                glayer.as_deref_mut().map(|g| &mut g.dilated),
            );
        }
        let dshift = self.input.backward(
            net.shifted.view(),
            dh.view(),
            grad.as_deref_mut().map(|g| &mut g.input),
        );
        for t in 0..len.saturating_sub(1) {
            dz[t] += dshift[[0, t + 1]];
        }
        dz
    }
}

impl Parameterized for FlowStage {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.input.visit(&join(prefix, "input"), f);
        for (i, l) in self.layers.iter().enumerate() {
            let p = join(prefix, &format!("layer{i}"));
            l.dilated.visit(&join(&p, "dilated"), f);
            l.cond.visit(&join(&p, "cond"), f);
            l.out.visit(&join(&p, "out"), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.input.visit_mut(&join(prefix, "input"), f);
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = join(prefix, &format!("layer{i}"));
            l.dilated.visit_mut(&join(&p, "dilated"), f);
            l.cond.visit_mut(&join(&p, "cond"), f);
            l.out.visit_mut(&join(&p, "out"), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// Flow generator with its own condition upsampler.
#[derive(Clone, Debug)]
pub struct IafGenerator {
    stages: Vec<FlowStage>,
    upsampler: ConditionUpsampler,
    config: GeneratorConfig,
}

impl IafGenerator {
    pub fn new(
        cfg: &GeneratorConfig,
        upsampler_cfg: &UpsamplerConfig,
        n_mels: usize,
        hop: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let upsampler = ConditionUpsampler::new(n_mels, upsampler_cfg, hop, rng)?;
        Self::with_upsampler(cfg, upsampler, rng)
    }

    pub fn with_upsampler(
        cfg: &GeneratorConfig,
        upsampler: ConditionUpsampler,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let stages = (0..cfg.stages)
            .map(|_| FlowStage::new(cfg, upsampler.out_channels(), rng))
            .collect();
        Ok(Self {
            stages,
            upsampler,
            config: cfg.clone(),
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn hop(&self) -> usize {
        self.upsampler.hop()
    }

    pub fn n_mels(&self) -> usize {
        self.upsampler.in_channels()
    }

    pub fn upsampler(&self) -> &ConditionUpsampler {
        &self.upsampler
    }

    pub fn receptive_field(&self) -> usize {
        self.config.receptive_field()
    }

    /// Randomizes the output heads (normally zero) so tests can exercise a
    /// non-identity flow.
    pub fn randomize_heads(&mut self, std: f64, rng: &mut impl Rng) {
        for stage in &mut self.stages {
            crate::nn::fill_normal(
                stage.head.weight.as_slice_mut().expect("contiguous"),
                std,
                rng,
            );
            crate::nn::fill_normal(
                stage.head.bias.as_slice_mut().expect("contiguous"),
                std,
                rng,
            );
        }
    }

    fn condition(
        &self,
        z_len: usize,
        mel: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, UpsamplerTrace)> {
        let expected = mel.ncols() * self.hop();
        if z_len != expected {
            return Err(Error::Shape(format!(
                "noise has {z_len} samples, {} mel frames need {expected}",
                mel.ncols()
            )));
        }
        self.upsampler.upsample_traced(mel)
    }

    /// One pass per stage over all timesteps. The result is not clipped.
    pub fn forward_parallel(&self, z: &NoiseSample, mel: &MelSpectrogram) -> Result<Vec<f64>> {
        Ok(self.forward_traced(&z.z, mel.channels())?.output)
    }

    pub fn forward_traced(&self, z: &[f64], mel: ArrayView2<f64>) -> Result<GeneratorTrace> {
        let (cond, up_trace) = self.condition(z.len(), mel)?;
        let mut x = z.to_vec();
        let mut stages = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let trace = stage.forward(&x, cond.view());
            x.clone_from(&trace.output);
            stages.push(trace);
        }
        Ok(GeneratorTrace {
            cond,
            upsampler: up_trace,
            stages,
            output: x,
        })
    }

    /// Backpropagates `dx` (gradient w.r.t. the output) into `grad`.
    /// Returns the gradient with respect to the input noise.
    pub fn backward(
        &self,
        trace: &GeneratorTrace,
        dx: &[f64],
        mut grad: Option<&mut IafGenerator>,
    ) -> Vec<f64> {
        let mut dcond = Array2::zeros(trace.cond.dim());
        let mut d = dx.to_vec();
        for (k, stage) in self.stages.iter().enumerate().rev() {
            d = stage.backward(
                &trace.stages[k],
                &d,
                trace.cond.view(),
                &mut dcond,
                grad.as_deref_mut().map(|g| &mut g.stages[k]),
            );
        }
        self.upsampler.backward(
            &trace.upsampler,
            dcond.view(),
            grad.as_deref_mut().map(|g| &mut g.upsampler),
        );
        d
    }

    /// Reference evaluation: every `x_t` of every stage is obtained by
    /// re-running the stage network on the prefix `z_{0..=t}` alone.
    pub fn forward_sequential(&self, z: &NoiseSample, mel: &MelSpectrogram) -> Result<Vec<f64>> {
        let (cond, _) = self.condition(z.len(), mel.channels())?;
        let mut x = z.z.clone();
        for stage in &self.stages {
            let mut next = Vec::with_capacity(x.len());
            for t in 0..x.len() {
                let (head, _) = stage.network(&x[..=t], cond.slice(s![.., ..=t]));
                let log_scale = head[[1, t]].clamp(-stage.clamp, stage.clamp);
                next.push(x[t] * log_scale.exp() + head[[0, t]]);
            }
            x = next;
        }
        Ok(x)
    }

    /// Per-timestep `(mu, log sigma)` of stage `k` for input `input`, with the
    /// log-scale clamped as in the forward pass.
    pub fn stage_shift_scale(
        &self,
        k: usize,
        input: &[f64],
        mel: &MelSpectrogram,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let stage = self
            .stages
            .get(k)
            .ok_or_else(|| Error::Shape(format!("generator has no stage {k}")))?;
        let (cond, _) = self.condition(input.len(), mel.channels())?;
        let (head, _) = stage.network(input, cond.view());
        let mu = head.row(0).to_vec();
        let ls = head
            .row(1)
            .iter()
            .map(|l| l.clamp(-stage.clamp, stage.clamp))
            .collect();
        Ok((mu, ls))
    }

    /// Draws logistic noise from `seed` and runs the flow; the result is
    /// clipped to `[-1, 1]`.
    pub fn sample(&self, mel: &MelSpectrogram, seed: u64) -> Result<Waveform> {
        if mel.frames() == 0 {
            return Err(Error::Data("mel spectrogram has no frames".into()));
        }
        let mut rng = derive_rng(seed, &[]);
        let z = NoiseSample::logistic(mel.frames() * self.hop(), &mut rng);
        let x = self.forward_parallel(&z, mel)?;
        Waveform::clipped(x, mel.sample_rate)
    }
}

impl Vocoder for IafGenerator {
    fn synthesize(&self, mel: &MelSpectrogram, seed: u64) -> Result<Waveform> {
        self.sample(mel, seed)
    }
}

impl Parameterized for IafGenerator {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        for (i, s) in self.stages.iter().enumerate() {
            s.visit_params(&join(prefix, &format!("stage{i}")), f);
        }
        self.upsampler.visit_params(&join(prefix, "upsampler"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_params_mut(&join(prefix, &format!("stage{i}")), f);
        }
        self.upsampler
            .visit_params_mut(&join(prefix, "upsampler"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SpectralConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(rng: &mut ChaCha8Rng, randomize: bool) -> (IafGenerator, MelSpectrogram) {
        let cfg = GeneratorConfig {
            stages: 2,
            kernel: 2,
            dilations: vec![1, 2, 4],
            channels: 3,
            log_scale_clamp: 7.0,
        };
        let up = UpsamplerConfig {
            strides: vec![2, 2, 1, 1],
            channels: vec![2, 2, 2, 2],
        };
        let mut g = IafGenerator::new(&cfg, &up, 4, 4, rng).unwrap();
        if randomize {
            g.randomize_heads(0.3, rng);
        }
        let mel = MelSpectrogram {
            values: Array2::from_shape_fn((8, 4), |_| rng.random_range(-1.0..1.0)),
            log_compressed: true,
            sample_rate: 8000,
            config: SpectralConfig::desk(),
        };
        (g, mel)
    }

    #[test]
    fn receptive_field_formula() {
        assert_eq!(receptive_field(2, &[1, 2, 4, 8]), 16);
        assert_eq!(receptive_field(3, &(1..=10).collect::<Vec<_>>()), 111);
        assert_eq!(receptive_field(1, &[1]), 1);
        assert_eq!(GeneratorConfig::default().receptive_field(), 256);
    }

    #[test]
    fn zero_heads_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (g, mel) = toy(&mut rng, false);
        let z = NoiseSample::logistic(32, &mut rng);
        assert_eq!(g.forward_parallel(&z, &mel).unwrap(), z.z);
        assert_eq!(g.forward_sequential(&z, &mel).unwrap(), z.z);
    }

    #[test]
    fn parallel_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (g, mel) = toy(&mut rng, true);
        let z = NoiseSample::logistic(32, &mut rng);
        let a = g.forward_parallel(&z, &mel).unwrap();
        let b = g.forward_sequential(&z, &mel).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (g, mel) = toy(&mut rng, false);
        let z = NoiseSample::logistic(31, &mut rng);
        assert!(matches!(g.forward_parallel(&z, &mel), Err(Error::Shape(_))));
    }

    #[test]
    fn sample_is_deterministic_and_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (g, mel) = toy(&mut rng, true);
        let a = g.sample(&mel, 99).unwrap();
        assert_eq!(a, g.sample(&mel, 99).unwrap());
        assert_eq!(a.len(), mel.frames() * g.hop());
        assert_ne!(a, g.sample(&mel, 100).unwrap());
    }
}
