//! Analytic gradients against central finite differences (float64).

mod common;

use common::*;
use vocadapt_core::losses::{agan_g_loss_grad, lsgan_d_loss_grad, LogMagLoss};
use vocadapt_core::nn::{zeros_like, Parameterized};

const RESTARTS: u64 = 20;
const TOL: f64 = 1e-3;

#[test]
fn log_mag_loss_gradient() {
    let loss = LogMagLoss::new(&toy_spectral()).unwrap();
    for seed in 0..RESTARTS {
        let mut r = rng(seed);
        let target = uniform(64, 0.8, &mut r);
        let x = uniform(64, 0.8, &mut r);
        let (_, analytic) = loss.value_and_grad(&x, &target).unwrap();
        let numeric = numeric_grad_vec(&x, 1e-6, |v| loss.value(v, &target).unwrap().value);
        let err = relative_error(&analytic, &numeric);
        assert!(err < TOL, "seed {seed}: relative error {err}");
    }
}

#[test]
fn agan_loss_gradient_wrt_waveform_and_scores() {
    let loss = LogMagLoss::new(&toy_spectral()).unwrap();
    for seed in 0..RESTARTS {
        let mut r = rng(100 + seed);
        let target = uniform(48, 0.8, &mut r);
        let x = uniform(48, 0.8, &mut r);
        let scores = uniform(48, 1.5, &mut r);
        let (_, dx, ds) = agan_g_loss_grad(&x, &target, &scores, 1.5, &loss).unwrap();
        let nx = numeric_grad_vec(&x, 1e-6, |v| {
            agan_g_loss_grad(v, &target, &scores, 1.5, &loss)
                .unwrap()
                .0
                .value
        });
        let ns = numeric_grad_vec(&scores, 1e-6, |s| {
            agan_g_loss_grad(&x, &target, s, 1.5, &loss)
                .unwrap()
                .0
                .value
        });
        assert!(relative_error(&dx, &nx) < TOL);
        assert!(relative_error(&ds, &ns) < 1e-6);
    }
}

#[test]
fn generator_parameter_gradient() {
    for seed in 0..RESTARTS {
        let mut r = rng(200 + seed);
        let g = toy_generator(&mut r);
        assert!(g.param_count() < 500, "{} parameters", g.param_count());
        let mel = toy_mel(6, 3, &mut r);
        let z = uniform(48, 2.0, &mut r);
        let target = uniform(48, 0.8, &mut r);
        let loss = LogMagLoss::new(&toy_spectral()).unwrap();
        let f = |m: &vocadapt_core::IafGenerator| {
            let out = m.forward_traced(&z, mel.channels()).unwrap();
            loss.value(out.output(), &target).unwrap().value
        };
        let trace = g.forward_traced(&z, mel.channels()).unwrap();
        let (_, dx) = loss.value_and_grad(trace.output(), &target).unwrap();
        let mut grad = zeros_like(&g);
        g.backward(&trace, &dx, Some(&mut grad));
        let numeric = numeric_grad(&g, 1e-5, f);
        let err = relative_error(&grad.flatten(), &numeric);
        assert!(err < TOL, "seed {seed}: relative error {err}");
    }
}

#[test]
fn discriminator_parameter_and_input_gradient() {
    for seed in 0..RESTARTS {
        let mut r = rng(300 + seed);
        let d = toy_discriminator(&mut r);
        assert!(d.param_count() < 500, "{} parameters", d.param_count());
        let mel = toy_mel(5, 3, &mut r);
        let real = uniform(40, 0.8, &mut r);
        let fake = uniform(40, 0.8, &mut r);
        let loss_of = |m: &vocadapt_core::Discriminator, fake: &[f64]| {
            let sr = m.score(&real, &mel).unwrap();
            let sf = m.score(fake, &mel).unwrap();
            lsgan_d_loss_grad(&sr.per_step, &sf.per_step)
                .unwrap()
                .0
                .value
        };
        let (sr, tr) = d.forward_traced(&real, mel.channels()).unwrap();
        let (sf, tf) = d.forward_traced(&fake, mel.channels()).unwrap();
        let (_, dr, df) = lsgan_d_loss_grad(&sr.per_step, &sf.per_step).unwrap();
        let mut grad = zeros_like(&d);
        d.backward(&tr, &dr, Some(&mut grad));
        let dfake = d.backward(&tf, &df, Some(&mut grad));
        let numeric = numeric_grad(&d, 1e-6, |m| loss_of(m, &fake));
        let err = relative_error(&grad.flatten(), &numeric);
        assert!(err < TOL, "seed {seed}: parameter relative error {err}");
        let nx = numeric_grad_vec(&fake, 1e-6, |x| loss_of(&d, x));
        let err = relative_error(&dfake, &nx);
        assert!(err < TOL, "seed {seed}: input relative error {err}");
    }
}

#[test]
fn pooled_score_gradient_wrt_waveform() {
    for seed in 0..RESTARTS {
        let mut r = rng(400 + seed);
        let d = toy_discriminator(&mut r);
        let mel = toy_mel(4, 3, &mut r);
        let x = uniform(32, 0.8, &mut r);
        let (s, trace) = d.forward_traced(&x, mel.channels()).unwrap();
        let n = s.per_step.len() as f64;
        let dx = d.backward(&trace, &vec![1.0 / n; s.per_step.len()], None);
        let numeric = numeric_grad_vec(&x, 1e-6, |v| d.score(v, &mel).unwrap().pooled);
        assert!(relative_error(&dx, &numeric) < TOL);
    }
}

#[test]
fn upsampler_parameter_gradient() {
    for seed in 0..RESTARTS {
        let mut r = rng(500 + seed);
        let up = toy_upsampler_layers(3, &mut r);
        let mel = toy_mel(5, 3, &mut r);
        let readout = uniform(40, 1.0, &mut r);
        // Scalar readout: sum_t w_t * y_t + 0.5 * y_t^2
        let f = |m: &vocadapt_core::ConditionUpsampler| {
            let y = m.upsample(mel.channels()).unwrap();
            y.row(0)
                .iter()
                .zip(&readout)
                .map(|(v, w)| w * v + 0.5 * v * v)
                .sum::<f64>()
        };
        let (y, trace) = up.upsample_traced(mel.channels()).unwrap();
        let dy = ndarray::Array2::from_shape_fn(y.dim(), |(_, t)| readout[t] + y[[0, t]]);
        let mut grad = zeros_like(&up);
        up.backward(&trace, dy.view(), Some(&mut grad));
        let numeric = numeric_grad(&up, 1e-5, f);
        let err = relative_error(&grad.flatten(), &numeric);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}
