//! Randomized invariants.

use proptest::prelude::*;
use vocadapt_core::losses::{agan_g_loss, log_mag_loss, lsgan_d_loss, LogMagLoss};
use vocadapt_core::signal::{load_wav, magnitude, mel_spectrogram, save_wav, stft, synth_corpus};
use vocadapt_core::training::noam_lr;
use vocadapt_core::{
    ExperimentConfig, SpeakerSpec, SpectralAnalyzer, SpectralConfig, Waveform, WindowKind,
};

fn small(window: WindowKind) -> SpectralConfig {
    SpectralConfig {
        frame_length: 64,
        hop: 16,
        window,
        n_mels: 8,
        ..SpectralConfig::default()
    }
}

fn signal(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

fn wave(x: Vec<f64>) -> Waveform {
    Waveform::new(x, 8000).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stft_is_linear(x in signal(200), y in signal(200), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let cfg = small(WindowKind::Hann);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let analyzer = SpectralAnalyzer::new(&cfg).unwrap();
        let sx = analyzer.stft(&x).unwrap();
        let sy = analyzer.stft(&y).unwrap();
        let sm = analyzer.stft(&mix).unwrap();
        for ((m, p), q) in sm.iter().zip(&sx).zip(&sy) {
            prop_assert!((m - (p * a + q * b)).norm() < 1e-9);
        }
    }

    #[test]
    fn rectangular_frames_preserve_energy(x in signal(160)) {
        let cfg = small(WindowKind::Rectangular);
        let n = cfg.frame_length;
        let s = stft(&wave(x.clone()), &cfg).unwrap();
        for (f, row) in s.values.rows().into_iter().enumerate() {
            let spectral: f64 = row
                .iter()
                .enumerate()
                .map(|(k, c)| if k == 0 || k == n / 2 { c.norm_sqr() } else { 2.0 * c.norm_sqr() })
                .sum();
            let energy: f64 = x[f * cfg.hop..f * cfg.hop + n].iter().map(|v| v * v).sum();
            prop_assert!((spectral - n as f64 * energy).abs() <= 1e-6 * n as f64 * energy.max(1e-12));
        }
    }

    #[test]
    fn mel_projection_is_homogeneous(x in signal(200), a in 0.0f64..1.0) {
        let cfg = SpectralConfig { log_mel: false, ..small(WindowKind::Hann) };
        let scaled: Vec<f64> = x.iter().map(|v| a * v).collect();
        let m = mel_spectrogram(&wave(x), &cfg).unwrap().values;
        let ms = mel_spectrogram(&wave(scaled), &cfg).unwrap().values;
        for (p, q) in m.iter().zip(&ms) {
            prop_assert!((a * p - q).abs() <= 1e-9 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn magnitudes_are_non_negative(x in signal(100)) {
        let s = stft(&wave(x), &small(WindowKind::Hann)).unwrap();
        prop_assert!(magnitude(&s).iter().all(|m| *m >= 0.0));
    }

    #[test]
    fn wav_round_trip_within_quantization(x in prop::collection::vec(-1.0f64..=1.0, 1..400)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        save_wav(&wave(x.clone()), &path).unwrap();
        let back = load_wav(&path).unwrap();
        prop_assert_eq!(back.sample_rate(), 8000);
        prop_assert_eq!(back.len(), x.len());
        for (a, b) in x.iter().zip(back.samples()) {
            prop_assert!((a - b).abs() <= 2f64.powi(-15));
        }
    }

    #[test]
    fn log_mag_is_a_symmetric_non_negative_discrepancy(x in signal(128), y in signal(128)) {
        let cfg = small(WindowKind::Hann);
        let xy = log_mag_loss(&x, &y, &cfg).unwrap().value;
        let yx = log_mag_loss(&y, &x, &cfg).unwrap().value;
        prop_assert!(xy >= 0.0);
        prop_assert!((xy - yx).abs() < 1e-12);
        prop_assert_eq!(log_mag_loss(&x, &x, &cfg).unwrap().value, 0.0);
    }

    #[test]
    fn loss_breakdowns_sum_to_value(
        x in signal(128),
        y in signal(128),
        s in prop::collection::vec(-2.0f64..2.0, 128),
        lambda in 0.0f64..3.0,
    ) {
        let loss = LogMagLoss::new(&small(WindowKind::Hann)).unwrap();
        let v = agan_g_loss(&x, &y, &s, lambda, &loss).unwrap();
        let sum: f64 = v.terms.iter().map(|(_, t)| t).sum();
        prop_assert!((v.value - sum).abs() <= 1e-9);
        let d = lsgan_d_loss(&s, &s).unwrap();
        let sum: f64 = d.terms.iter().map(|(_, t)| t).sum();
        prop_assert!(d.value >= 0.0 && (d.value - sum).abs() <= 1e-9);
    }

    #[test]
    fn noam_rises_then_decays(warmup in 1u64..5000, base in 1e-5f64..1.0) {
        let peak = noam_lr(warmup, base, warmup).unwrap();
        prop_assert!((peak - base).abs() <= 1e-12 * base);
        for s in [1, warmup / 2 + 1, warmup] {
            let here = noam_lr(s, base, warmup).unwrap();
            prop_assert!(here <= peak * (1.0 + 1e-12));
            if s < warmup {
                prop_assert!(noam_lr(s + 1, base, warmup).unwrap() > here);
            }
        }
        prop_assert!(noam_lr(warmup + 1, base, warmup).unwrap() < peak);
        prop_assert!(noam_lr(10 * warmup, base, warmup).unwrap() < noam_lr(2 * warmup, base, warmup).unwrap());
    }

    #[test]
    fn config_survives_toml(seed in any::<u64>(), lambda in 0.0f64..10.0, joint in 0u64..100_000) {
        let mut c = ExperimentConfig::default();
        c.seed = seed;
        c.training.lambda_adv = lambda;
        c.training.joint_steps = joint;
        if c.validate().is_ok() {
            let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
            prop_assert_eq!(back, c);
        } else {
            prop_assert!(seed > i64::MAX as u64);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn corpora_are_seed_deterministic(seed in any::<u64>()) {
        let spec = SpeakerSpec::high_bright();
        let a = synth_corpus(&spec, 2, 600, 8000, seed).unwrap();
        prop_assert_eq!(&a, &synth_corpus(&spec, 2, 600, 8000, seed).unwrap());
        prop_assert_ne!(&a, &synth_corpus(&spec, 2, 600, 8000, seed.wrapping_add(1)).unwrap());
    }

    #[test]
    fn speakers_differ_in_mean_envelope(seed in any::<u64>()) {
        let cfg = SpectralConfig::desk();
        let envelope = |spec: &SpeakerSpec| {
            let clips = synth_corpus(spec, 4, 4000, 8000, seed).unwrap();
            let mut mean = vec![0.0; cfg.n_mels];
            let mut frames = 0usize;
            for c in &clips {
                let m = mel_spectrogram(c, &cfg).unwrap();
                for row in m.values.rows() {
                    mean.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    frames += 1;
                }
            }
            mean.iter().map(|v| v / frames as f64).collect::<Vec<_>>()
        };
        let a = envelope(&SpeakerSpec::low_dark());
        let b = envelope(&SpeakerSpec::high_bright());
        let l1: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum();
        prop_assert!(l1 >= 1.0, "envelope L1 {l1}");
    }
}
