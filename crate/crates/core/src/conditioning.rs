//! Frame-rate to sample-rate conditioning via four transposed convolutions.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{fill_normal, join, ConvTranspose1d, Parameterized};

/// Stages are fixed at four.
pub const UPSAMPLER_STAGES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpsamplerConfig {
    /// Per-stage strides; their product must equal the hop size.
    pub strides: Vec<usize>,
    /// Output width of each stage; the last entry is the conditioning width
    /// seen by the networks.
    pub channels: Vec<usize>,
}

impl Default for UpsamplerConfig {
    fn default() -> Self {
        Self {
            strides: vec![4, 4, 2, 2],
            channels: vec![16, 16, 16, 16],
        }
    }
}

impl UpsamplerConfig {
    pub fn full_scale() -> Self {
        Self {
            strides: vec![4, 4, 4, 4],
            ..Self::default()
        }
    }

    pub fn output_channels(&self) -> usize {
        self.channels.last().copied().unwrap_or(0)
    }

    pub fn validate(&self, hop: usize) -> Result<()> {
        if self.strides.len() != UPSAMPLER_STAGES || self.channels.len() != UPSAMPLER_STAGES {
            return Err(Error::Config(format!(
                "upsampler needs exactly {UPSAMPLER_STAGES} strides and channel widths, got {} and {}",
                self.strides.len(),
                self.channels.len()
            )));
        }
        if self.strides.contains(&0) || self.channels.contains(&0) {
            return Err(Error::Config(
                "upsampler strides and widths must be positive".into(),
            ));
        }
        let product: usize = self.strides.iter().product();
        if product != hop {
            return Err(Error::Config(format!(
                "upsampler strides {:?} multiply to {product}, hop is {hop}",
                self.strides
            )));
        }
        Ok(())
    }
}

/// Learnable mel-to-sample-rate upsampler with linear activations.
#[derive(Clone, Debug)]
pub struct ConditionUpsampler {
    layers: Vec<ConvTranspose1d>,
}

/// Intermediate signals of one upsampler forward pass.
#[derive(Clone, Debug)]
pub struct UpsamplerTrace {
    inputs: Vec<Array2<f64>>,
}

impl ConditionUpsampler {
    /// Random first stage; later stages start as per-channel linear
    /// interpolators plus small noise.
    pub fn new(
        n_mels: usize,
        cfg: &UpsamplerConfig,
        hop: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate(hop)?;
        let mut layers = Vec::with_capacity(UPSAMPLER_STAGES);
        let mut width = n_mels;
        for (i, (&stride, &out)) in cfg.strides.iter().zip(&cfg.channels).enumerate() {
            let mut layer = ConvTranspose1d::zeros(width, out, stride);
            let w = layer.weight.as_slice_mut().expect("contiguous");
            if i == 0 {
                fill_normal(w, 1.0 / (2.0 * width as f64).sqrt(), rng);
            } else {
                fill_normal(w, 0.1 / (2.0 * width as f64).sqrt(), rng);
                layer.add_interpolation_diagonal();
            }
            layers.push(layer);
            width = out;
        }
        Ok(Self { layers })
    }

    /// Upsampler built from explicit layers (used for toy configurations).
    pub fn from_layers(layers: Vec<ConvTranspose1d>, hop: usize) -> Result<Self> {
        let strides: Vec<usize> = layers.iter().map(|l| l.stride).collect();
        let channels: Vec<usize> = layers.iter().map(|l| l.out_channels()).collect();
        UpsamplerConfig { strides, channels }.validate(hop)?;
        for pair in layers.windows(2) {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(Error::Config("upsampler layer widths do not chain".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn hop(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn stages(&self) -> usize {
        self.layers.len()
    }

    pub fn strides(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.stride).collect()
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].out_channels()
    }

    pub fn layers(&self) -> &[ConvTranspose1d] {
        &self.layers
    }

    fn check_input(&self, mel: &ArrayView2<f64>) -> Result<()> {
        if mel.ncols() == 0 {
            return Err(Error::Data("conditioning has no frames".into()));
        }
        if mel.nrows() != self.in_channels() {
            return Err(Error::Shape(format!(
                "conditioning has {} channels, upsampler expects {}",
                mel.nrows(),
                self.in_channels()
            )));
        }
        Ok(())
    }

    /// `(n_mels, F)` to `(channels, F * hop)`.
    pub fn upsample(&self, mel: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.upsample_traced(mel).map(|(y, _)| y)
    }

    pub fn upsample_traced(&self, mel: ArrayView2<f64>) -> Result<(Array2<f64>, UpsamplerTrace)> {
        self.check_input(&mel)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = mel.to_owned();
        for layer in &self.layers {
            let next = layer.forward(h.view());
            inputs.push(h);
            h = next;
        }
        Ok((h, UpsamplerTrace { inputs }))
    }

    /// Backpropagates `dy` (same shape as the output); returns the gradient
    /// with respect to the mel input.
    pub fn backward(
        &self,
        trace: &UpsamplerTrace,
        dy: ArrayView2<f64>,
        grad: Option<&mut ConditionUpsampler>,
    ) -> Array2<f64> {
        let mut d = dy.to_owned();
        let mut grad = grad;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let g = grad.as_deref_mut().map(|g| &mut g.layers[i]);
            d = layer.backward(trace.inputs[i].view(), d.view(), g);
        }
        d
    }
}

impl Parameterized for ConditionUpsampler {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("up{i}")), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("up{i}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stride_product_must_equal_hop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(ConditionUpsampler::new(80, &UpsamplerConfig::default(), 64, &mut rng).is_ok());
        assert!(matches!(
            ConditionUpsampler::new(80, &UpsamplerConfig::default(), 256, &mut rng),
            Err(Error::Config(_))
        ));
        let three = UpsamplerConfig {
            strides: vec![4, 4, 4],
            channels: vec![8, 8, 8],
        };
        assert!(three.validate(64).is_err());
    }

    #[test]
    fn full_scale_strides_reach_256() {
        let cfg = UpsamplerConfig::full_scale();
        cfg.validate(256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let up = ConditionUpsampler::new(80, &cfg, 256, &mut rng).unwrap();
        let y = up.upsample(Array2::zeros((80, 10)).view()).unwrap();
        assert_eq!(y.dim(), (16, 2560));
    }

    #[test]
    fn identity_toy_upsampler_keeps_constants() {
        let layers = [4, 4, 2, 2]
            .iter()
            .map(|&s| {
                let mut l = ConvTranspose1d::zeros(1, 1, s);
                l.add_interpolation_diagonal();
                l
            })
            .collect();
        let up = ConditionUpsampler::from_layers(layers, 64).unwrap();
        let y = up
            .upsample(Array2::from_elem((1, 6), -1.25).view())
            .unwrap();
        assert_eq!(y.ncols(), 384);
        assert!(y.iter().all(|v| (v + 1.25).abs() < 1e-12));
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let up = ConditionUpsampler::new(8, &UpsamplerConfig::default(), 64, &mut rng).unwrap();
        assert!(matches!(
            up.upsample(Array2::zeros((8, 0)).view()),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            up.upsample(Array2::zeros((7, 3)).view()),
            Err(Error::Shape(_))
        ));
    }
}
