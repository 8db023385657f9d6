#![allow(dead_code)]

pub mod oracles;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vocadapt_core::conditioning::ConditionUpsampler;
use vocadapt_core::nn::{ConvTranspose1d, Parameterized};
use vocadapt_core::{
    Discriminator, DiscriminatorConfig, GeneratorConfig, IafGenerator, MelSpectrogram,
    SpectralConfig, UpsamplerConfig,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Central finite differences of `f` over every parameter of `model`.
pub fn numeric_grad<M: Parameterized + Clone>(
    model: &M,
    step: f64,
    f: impl Fn(&M) -> f64,
) -> Vec<f64> {
    let base = model.flatten();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut work = base.clone();
    for i in 0..base.len() {
        work[i] = base[i] + step;
        probe.load_flat(&work).unwrap();
        let up = f(&probe);
        work[i] = base[i] - step;
        probe.load_flat(&work).unwrap();
        let down = f(&probe);
        work[i] = base[i];
        out.push((up - down) / (2.0 * step));
    }
    out
}

pub fn numeric_grad_vec(x: &[f64], step: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            work[i] = x[i] + step;
            let up = f(&work);
            work[i] = x[i] - step;
            let down = f(&work);
            work[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|)` over whole vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn toy_spectral() -> SpectralConfig {
    SpectralConfig {
        frame_length: 32,
        hop: 8,
        n_mels: 3,
        ..SpectralConfig::default()
    }
}

pub fn toy_mel(frames: usize, n_mels: usize, rng: &mut ChaCha8Rng) -> MelSpectrogram {
    MelSpectrogram {
        values: Array2::from_shape_fn((frames, n_mels), |_| rng.random_range(-1.0..1.0)),
        log_compressed: true,
        sample_rate: 8000,
        config: toy_spectral(),
    }
}

/// Upsampler with strides 2,2,2,1 (hop 8) and `width` channels, randomized.
pub fn toy_upsampler(n_mels: usize, width: usize, rng: &mut ChaCha8Rng) -> ConditionUpsampler {
    let cfg = UpsamplerConfig {
        strides: vec![2, 2, 2, 1],
        channels: vec![width; 4],
    };
    ConditionUpsampler::new(n_mels, &cfg, 8, rng).unwrap()
}

pub fn toy_upsampler_layers(n_mels: usize, rng: &mut ChaCha8Rng) -> ConditionUpsampler {
    let layers = [2usize, 2, 2, 1]
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut l = ConvTranspose1d::zeros(if i == 0 { n_mels } else { 1 }, 1, s);
            l.weight
                .iter_mut()
                .for_each(|w| *w = rng.random_range(-0.8..0.8));
            l.bias
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.3..0.3));
            l
        })
        .collect();
    ConditionUpsampler::from_layers(layers, 8).unwrap()
}

/// Generator with well under 500 parameters and random (non-identity) heads.
pub fn toy_generator(rng: &mut ChaCha8Rng) -> IafGenerator {
    let cfg = GeneratorConfig {
        stages: 2,
        kernel: 2,
        dilations: vec![1, 2, 4],
        channels: 2,
        log_scale_clamp: 7.0,
    };
    let up = toy_upsampler(3, 2, rng);
    let mut g = IafGenerator::with_upsampler(&cfg, up, rng).unwrap();
    g.randomize_heads(0.2, rng);
    g
}

/// Ten-layer discriminator with two channels (under 500 parameters).
pub fn toy_discriminator(rng: &mut ChaCha8Rng) -> Discriminator {
    let cfg = DiscriminatorConfig {
        channels: 2,
        ..DiscriminatorConfig::default()
    };
    let up = toy_upsampler(3, 1, rng);
    let mut d = Discriminator::with_upsampler(&cfg, up, rng).unwrap();
    // Non-zero biases so LeakyReLU kinks are not all at the origin.
    d.visit_params_mut("", &mut |name, p| {
        if name.ends_with("bias") {
            p.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
        }
    });
    d
}
