//! Training examples: waveform segments paired with the mel frames that
//! describe them.
//!
//! Frame `f` of a clip's mel spectrogram is aligned with the hop-long
//! segment starting at `alignment_offset + f * hop`, so a window of `n`
//! frames conditions exactly `n * hop` samples.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::CorpusSpec;
use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::signal::{synth_corpus, MelSpectrogram, SpectralAnalyzer, Waveform};

/// A target segment and its conditioning frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub target: Vec<f64>,
    pub mel: MelSpectrogram,
}

#[derive(Clone, Debug)]
struct Clip {
    wave: Waveform,
    mel: MelSpectrogram,
    /// Frames whose aligned segment lies fully inside the clip.
    usable_frames: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    clips: Vec<Clip>,
    hop: usize,
    offset: usize,
}

impl Dataset {
    pub fn new(waves: Vec<Waveform>, analyzer: &SpectralAnalyzer) -> Result<Self> {
        let cfg = analyzer.config();
        let (hop, offset) = (cfg.hop, cfg.alignment_offset());
        let clips = waves
            .into_iter()
            .map(|wave| {
                let mel = analyzer.mel_spectrogram(&wave)?;
                let usable_frames = mel.frames().min((wave.len() - offset) / hop);
                Ok(Clip {
                    wave,
                    mel,
                    usable_frames,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { clips, hop, offset })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn waveform(&self, index: usize) -> &Waveform {
        &self.clips[index].wave
    }

    /// The longest aligned example available from clip `index`.
    pub fn full_example(&self, index: usize) -> Result<Example> {
        let clip = &self.clips[index];
        self.crop(clip, 0, clip.usable_frames)
    }

    /// Examples of exactly `max_len` samples each from `count` clips drawn
    /// with replacement. Clips too short for one crop are never chosen.
    pub fn sample_batch(
        &self,
        count: usize,
        max_len: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Example>> {
        if max_len == 0 || max_len % self.hop != 0 {
            return Err(Error::Data(format!(
                "crop length {max_len} is not a positive multiple of the hop {}",
                self.hop
            )));
        }
        let frames = max_len / self.hop;
        let eligible: Vec<&Clip> = self
            .clips
            .iter()
            .filter(|c| c.usable_frames >= frames)
            .collect();
        if eligible.is_empty() {
            return Err(Error::Data(format!(
                "no clip is long enough for a {max_len}-sample crop"
            )));
        }
        (0..count)
            .map(|_| {
                let clip = eligible[rng.random_range(0..eligible.len())];
                let start = rng.random_range(0..=clip.usable_frames - frames);
                self.crop(clip, start, frames)
            })
            .collect()
    }

    fn crop(&self, clip: &Clip, start: usize, frames: usize) -> Result<Example> {
        if frames == 0 {
            return Err(Error::Data("clip has no aligned frames".into()));
        }
        let begin = self.offset + start * self.hop;
        Ok(Example {
            target: clip.wave.samples()[begin..begin + frames * self.hop].to_vec(),
            mel: clip.mel.slice_frames(start, frames)?,
        })
    }
}

/// Training and held-out parts of one synthetic speaker corpus.
#[derive(Clone, Debug)]
pub struct CorpusSplit {
    pub train: Dataset,
    pub heldout: Dataset,
}

/// Synthesizes `n_clips + heldout_clips` clips and splits them with a
/// seeded shuffle.
pub fn build_corpus(
    spec: &CorpusSpec,
    sample_rate: u32,
    analyzer: &SpectralAnalyzer,
) -> Result<CorpusSplit> {
    let total = spec.n_clips + spec.heldout_clips;
    let waves = synth_corpus(&spec.speaker, total, spec.clip_len, sample_rate, spec.seed)?;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut derive_rng(spec.seed, &[0x5B117]));
    let mut slots: Vec<Option<Waveform>> = waves.into_iter().map(Some).collect();
    let mut take = |ids: &[usize]| -> Vec<Waveform> {
        ids.iter()
            .map(|&i| slots[i].take().expect("each clip used once"))
            .collect()
    };
    let heldout = take(&order[..spec.heldout_clips]);
    let train = take(&order[spec.heldout_clips..]);
    Ok(CorpusSplit {
        train: Dataset::new(train, analyzer)?,
        heldout: Dataset::new(heldout, analyzer)?,
    })
}
