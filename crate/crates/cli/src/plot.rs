//! Side-by-side log-magnitude spectrograms on one shared colour scale.

use std::ops::Range;

use image::{Rgb, RgbImage};
use ndarray::{s, Array2, ArrayView2};
use vocadapt_core::config::ZoomWindow;
use vocadapt_core::{Error, Result, SpectralAnalyzer};

pub const PANEL_WIDTH: u32 = 384;
pub const PANEL_HEIGHT: u32 = 192;
const GAP: u32 = 6;
const BAR_WIDTH: u32 = 14;
/// Dynamic range shown below the loudest bin, in natural-log units (80 dB).
const RANGE: f64 = 80.0 / 20.0 * std::f64::consts::LN_10;
const BACKGROUND: Rgb<u8> = Rgb([24, 24, 24]);
const OUTLINE: Rgb<u8> = Rgb([255, 255, 255]);

const VIRIDIS: [(f64, [f64; 3]); 5] = [
    (0.0, [68.0, 1.0, 84.0]),
    (0.25, [59.0, 82.0, 139.0]),
    (0.5, [33.0, 145.0, 140.0]),
    (0.75, [94.0, 201.0, 98.0]),
    (1.0, [253.0, 231.0, 37.0]),
];

/// Frames and bins selected by a zoom window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ZoomRegion {
    pub frames: Range<usize>,
    pub bins: Range<usize>,
}

pub struct Figure {
    pub image: RgbImage,
    /// Colour-scale limits shared by every panel.
    pub scale: (f64, f64),
    pub zoom: Option<ZoomRegion>,
}

/// `log(|STFT| + eps)`, frames x bins.
pub fn log_spectrogram(analyzer: &SpectralAnalyzer, x: &[f64]) -> Result<Array2<f64>> {
    let eps = analyzer.config().eps;
    Ok(analyzer.stft(x)?.mapv(|c| (c.norm() + eps).ln()))
}

/// Frames whose centre lies in `[start, end)` seconds and bins whose
/// frequency lies in `[min_hz, max_hz]`.
pub fn zoom_region(
    zoom: &ZoomWindow,
    analyzer: &SpectralAnalyzer,
    sample_rate: u32,
    frames: usize,
) -> Result<ZoomRegion> {
    let cfg = analyzer.config();
    let sr = sample_rate as f64;
    let centre = |f: usize| (f * cfg.hop + cfg.frame_length / 2) as f64 / sr;
    let frame_sel: Vec<usize> = (0..frames)
        .filter(|&f| centre(f) >= zoom.start_secs && centre(f) < zoom.end_secs)
        .collect();
    let bin_hz = sr / cfg.frame_length as f64;
    let bin_sel: Vec<usize> = (0..cfg.bins())
        .filter(|&k| {
            let hz = k as f64 * bin_hz;
            hz >= zoom.min_hz && hz <= zoom.max_hz
        })
        .collect();
    match (frame_sel.first(), frame_sel.last(), bin_sel.first(), bin_sel.last()) {
        (Some(&f0), Some(&f1), Some(&k0), Some(&k1)) => Ok(ZoomRegion {
            frames: f0..f1 + 1,
            bins: k0..k1 + 1,
        }),
        _ => Err(Error::Config(format!(
            "zoom window {:.3}-{:.3} s, {}-{} Hz selects no frames or bins of a {frames}-frame spectrogram",
            zoom.start_secs, zoom.end_secs, zoom.min_hz, zoom.max_hz
        ))),
    }
}

pub fn colour(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let i = VIRIDIS
        .iter()
        .rposition(|(p, _)| *p <= t)
        .unwrap_or(0)
        .min(VIRIDIS.len() - 2);
    let ((p0, c0), (p1, c1)) = (VIRIDIS[i], VIRIDIS[i + 1]);
    let w = (t - p0) / (p1 - p0);
    Rgb(std::array::from_fn(|j| {
        (c0[j] + w * (c1[j] - c0[j])).round() as u8
    }))
}

fn draw_panel(img: &mut RgbImage, x0: u32, y0: u32, values: ArrayView2<f64>, scale: (f64, f64)) {
    let (frames, bins) = values.dim();
    let (lo, hi) = scale;
    for px in 0..PANEL_WIDTH {
        let f = (px as usize * frames) / PANEL_WIDTH as usize;
        for py in 0..PANEL_HEIGHT {
            let k = bins - 1 - (py as usize * bins) / PANEL_HEIGHT as usize;
            let t = (values[[f, k]] - lo) / (hi - lo);
            img.put_pixel(x0 + px, y0 + py, colour(t));
        }
    }
}

fn outline(img: &mut RgbImage, x0: u32, y0: u32, region: &ZoomRegion, frames: usize, bins: usize) {
    let x =
        |f: usize| x0 + ((f * PANEL_WIDTH as usize) / frames).min(PANEL_WIDTH as usize - 1) as u32;
    let y = |k: usize| {
        let from_top = PANEL_HEIGHT as usize - ((k * PANEL_HEIGHT as usize) / bins);
        y0 + from_top.clamp(1, PANEL_HEIGHT as usize) as u32 - 1
    };
    let (left, right) = (x(region.frames.start), x(region.frames.end));
    let (top, bottom) = (y(region.bins.end), y(region.bins.start));
    for px in left..=right {
        img.put_pixel(px, top, OUTLINE);
        img.put_pixel(px, bottom, OUTLINE);
    }
    for py in top..=bottom {
        img.put_pixel(left, py, OUTLINE);
        img.put_pixel(right, py, OUTLINE);
    }
}

/// Generated (left) against reference (right); with a zoom window, a second
/// row enlarges the same region of both. A colour bar sits on the right.
pub fn render_comparison(
    analyzer: &SpectralAnalyzer,
    generated: &[f64],
    reference: &[f64],
    sample_rate: u32,
    zoom: Option<&ZoomWindow>,
) -> Result<Figure> {
    let gen = log_spectrogram(analyzer, generated)?;
    let reference = log_spectrogram(analyzer, reference)?;
    if gen.dim() != reference.dim() {
        return Err(Error::Shape(format!(
            "spectrogram shapes differ: {:?} vs {:?}",
            gen.dim(),
            reference.dim()
        )));
    }
    let (frames, bins) = gen.dim();
    let hi = gen
        .iter()
        .chain(reference.iter())
        .fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let lo = gen
        .iter()
        .chain(reference.iter())
        .fold(f64::INFINITY, |m, v| m.min(*v))
        .max(hi - RANGE);
    let scale = if hi > lo { (lo, hi) } else { (lo - 1.0, hi) };
    let region = zoom
        .map(|z| zoom_region(z, analyzer, sample_rate, frames))
        .transpose()?;

    let rows = if region.is_some() { 2 } else { 1 };
    let width = 2 * PANEL_WIDTH + 4 * GAP + BAR_WIDTH;
    let height = rows * PANEL_HEIGHT + (rows + 1) * GAP;
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);
    let col = |c: u32| GAP + c * (PANEL_WIDTH + GAP);
    let row = |r: u32| GAP + r * (PANEL_HEIGHT + GAP);
    for (c, values) in [&gen, &reference].into_iter().enumerate() {
        draw_panel(&mut img, col(c as u32), row(0), values.view(), scale);
        if let Some(reg) = &region {
            outline(&mut img, col(c as u32), row(0), reg, frames, bins);
            let part = values.slice(s![reg.frames.clone(), reg.bins.clone()]);
            draw_panel(&mut img, col(c as u32), row(1), part, scale);
        }
    }
    let bar_x = col(2);
    let bar_h = height - 2 * GAP;
    for py in 0..bar_h {
        let c = colour(1.0 - py as f64 / (bar_h - 1) as f64);
        for px in 0..BAR_WIDTH {
            img.put_pixel(bar_x + px, GAP + py, c);
        }
    }
    Ok(Figure {
        image: img,
        scale,
        zoom: region,
    })
}
