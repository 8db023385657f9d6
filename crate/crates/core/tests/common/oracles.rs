//! Independent reference implementations: direct DFTs and scalar loops.

use std::f64::consts::PI;

/// Direct `O(N^2)` DFT of a real frame, bins `0..=N/2`, as `(re, im)`.
pub fn dft(frame: &[f64]) -> Vec<(f64, f64)> {
    let n = frame.len();
    (0..=n / 2)
        .map(|k| {
            frame
                .iter()
                .enumerate()
                .fold((0.0, 0.0), |(re, im), (t, &x)| {
                    let a = -2.0 * PI * (k * t) as f64 / n as f64;
                    (re + x * a.cos(), im + x * a.sin())
                })
        })
        .collect()
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Windowed magnitude spectrogram, frames without padding.
pub fn magnitudes(x: &[f64], frame: usize, hop: usize, window: &[f64]) -> Vec<Vec<f64>> {
    let frames = (x.len() - frame) / hop + 1;
    (0..frames)
        .map(|f| {
            let seg: Vec<f64> = (0..frame).map(|i| x[f * hop + i] * window[i]).collect();
            dft(&seg)
                .into_iter()
                .map(|(re, im)| (re * re + im * im).sqrt())
                .collect()
        })
        .collect()
}

pub fn log_mag(x: &[f64], y: &[f64], frame: usize, hop: usize, eps: f64) -> f64 {
    let w = hann(frame);
    let (mx, my) = (magnitudes(x, frame, hop, &w), magnitudes(y, frame, hop, &w));
    let mut total = 0.0;
    let mut count = 0usize;
    for (rx, ry) in mx.iter().zip(&my) {
        for (a, b) in rx.iter().zip(ry) {
            total += ((a + eps).ln() - (b + eps).ln()).abs();
            count += 1;
        }
    }
    total / count as f64
}

pub fn lsgan_d(real: &[f64], fake: &[f64]) -> f64 {
    let mut r = 0.0;
    for s in real {
        r += (s - 1.0) * (s - 1.0);
    }
    let mut f = 0.0;
    for s in fake {
        f += s * s;
    }
    0.5 * r / real.len() as f64 + 0.5 * f / fake.len() as f64
}

pub fn lsgan_g(fake: &[f64]) -> f64 {
    let mut f = 0.0;
    for s in fake {
        f += (s - 1.0) * (s - 1.0);
    }
    0.5 * f / fake.len() as f64
}

pub fn cgan(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let mut r = 0.0;
    for p in d_real {
        r += p.ln();
    }
    let mut f = 0.0;
    for p in d_fake {
        f += (1.0 - p).ln();
    }
    r / d_real.len() as f64 + f / d_fake.len() as f64
}

pub fn segan(x_prime: &[f64], x: &[f64], fake: &[f64], lambda: f64) -> f64 {
    let mut l1 = 0.0;
    for i in 0..x.len() {
        l1 += (x_prime[i] - x[i]).abs();
    }
    lambda * l1 / x.len() as f64 + lsgan_g(fake)
}

/// Triangular mel filterbank using the natural-log form of the mel scale.
pub fn mel_filterbank(
    n_mels: usize,
    frame: usize,
    sample_rate: f64,
    fmin: f64,
    fmax: f64,
) -> Vec<Vec<f64>> {
    let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
    let hz = |m: f64| 700.0 * ((m / 1127.0).exp() - 1.0);
    let (lo, hi) = (mel(fmin), mel(fmax));
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            (0..=frame / 2)
                .map(|k| {
                    let f = k as f64 * sample_rate / frame as f64;
                    let rise = (f - points[m]) / (points[m + 1] - points[m]);
                    let fall = (points[m + 2] - f) / (points[m + 2] - points[m + 1]);
                    rise.min(fall).max(0.0)
                })
                .collect()
        })
        .collect()
}
