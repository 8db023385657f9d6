//! Experiment configuration: one TOML document with a section per component.
//! Unknown keys are rejected everywhere and every key has a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conditioning::UpsamplerConfig;
use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::signal::{SpeakerSpec, SpectralConfig};
use crate::training::TrainingConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub sample_rate: u32,
    pub spectral: SpectralConfig,
    pub conditioning: UpsamplerConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub training: TrainingConfig,
    pub corpus: CorpusConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sample_rate: 8000,
            spectral: SpectralConfig::desk(),
            conditioning: UpsamplerConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            training: TrainingConfig::default(),
            corpus: CorpusConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// The two synthetic speakers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub pretrain: CorpusSpec,
    pub adapt: CorpusSpec,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            pretrain: CorpusSpec {
                speaker: SpeakerSpec::low_dark(),
                seed: 1,
                ..CorpusSpec::default()
            },
            adapt: CorpusSpec {
                speaker: SpeakerSpec::high_bright(),
                seed: 2,
                ..CorpusSpec::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub n_clips: usize,
    /// Extra clips synthesized and kept out of training.
    pub heldout_clips: usize,
    pub clip_len: usize,
    pub seed: u64,
    pub speaker: SpeakerSpec,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_clips: 32,
            heldout_clips: 8,
            clip_len: 8000,
            seed: 0,
            speaker: SpeakerSpec::low_dark(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Base seed for the noise drawn when synthesizing held-out clips.
    pub seed: u64,
    /// Held-out clip indices rendered as spectrogram plots.
    pub plot_clips: Vec<usize>,
    pub zoom: Option<ZoomWindow>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 1234,
            plot_clips: vec![0],
            zoom: Some(ZoomWindow::default()),
        }
    }
}

/// Time/frequency rectangle shown enlarged next to a spectrogram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZoomWindow {
    pub start_secs: f64,
    pub end_secs: f64,
    pub min_hz: f64,
    pub max_hz: f64,
}

impl Default for ZoomWindow {
    fn default() -> Self {
        Self {
            start_secs: 0.25,
            end_secs: 0.5,
            min_hz: 0.0,
            max_hz: 1000.0,
        }
    }
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn overlay(base: &mut toml::Table, doc: toml::Table) {
    for (key, value) in doc {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(v)) => overlay(b, v),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// Full-scale analysis and schedule: 2048/256 framing, hop-256
    /// upsampling, 50k/100k steps and 24000-sample crops.
    pub fn full_scale() -> Self {
        Self {
            sample_rate: 22050,
            spectral: SpectralConfig::default(),
            conditioning: UpsamplerConfig::full_scale(),
            training: TrainingConfig::full_scale(),
            ..Self::default()
        }
    }

    /// Keys missing from `text` take their values from `ExperimentConfig::default()`,
    /// including keys inside partially given sections.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: toml::Table = toml::from_str(text).map_err(config_error)?;
        let mut merged = match toml::Value::try_from(Self::default()).map_err(config_error)? {
            toml::Value::Table(t) => t,
            _ => unreachable!("config serializes to a table"),
        };
        overlay(&mut merged, doc);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Fully resolved configuration, every key written out.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        let t = &self.training;
        for (name, v) in [
            ("seed", self.seed),
            ("corpus.pretrain.seed", self.corpus.pretrain.seed),
            ("corpus.adapt.seed", self.corpus.adapt.seed),
            ("eval.seed", self.eval.seed),
            ("training.warmup_steps", t.warmup_steps),
            ("training.pretrain_steps", t.pretrain_steps),
            ("training.freeze_g_steps", t.freeze_g_steps),
            ("training.joint_steps", t.joint_steps),
            ("training.eval_every", t.eval_every),
        ] {
            if v > i64::MAX as u64 {
                return Err(Error::Config(format!(
                    "{name} ({v}) exceeds the TOML integer range"
                )));
            }
        }
        self.spectral.validate()?;
        if self
            .spectral
            .fmax
            .is_some_and(|f| f > self.sample_rate as f64 / 2.0)
        {
            return Err(Error::Config(
                "spectral.fmax exceeds the Nyquist frequency".into(),
            ));
        }
        self.conditioning.validate(self.spectral.hop)?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.training.validate(self.spectral.hop)?;
        if self.training.crop_len(self.spectral.hop) < self.spectral.frame_length {
            return Err(Error::Config(format!(
                "training.max_sample_len ({}) gives crops shorter than one analysis frame ({})",
                self.training.max_sample_len, self.spectral.frame_length
            )));
        }
        for (name, c) in [
            ("pretrain", &self.corpus.pretrain),
            ("adapt", &self.corpus.adapt),
        ] {
            c.speaker.validate(self.sample_rate)?;
            if c.n_clips == 0 {
                return Err(Error::Config(format!(
                    "corpus.{name}.n_clips must be at least 1"
                )));
            }
            if c.clip_len < self.spectral.frame_length {
                return Err(Error::Config(format!(
                    "corpus.{name}.clip_len ({}) is shorter than one analysis frame ({})",
                    c.clip_len, self.spectral.frame_length
                )));
            }
        }
        if let Some(z) = &self.eval.zoom {
            if !(z.end_secs > z.start_secs
                && z.start_secs >= 0.0
                && z.max_hz > z.min_hz
                && z.min_hz >= 0.0)
            {
                return Err(Error::Config(
                    "eval.zoom must describe a non-empty window".into(),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(
            ExperimentConfig::from_toml_str("").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn partial_sections_keep_experiment_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "[spectral]\nn_mels = 20\n[corpus.adapt]\nn_clips = 3\n",
        )
        .unwrap();
        let d = ExperimentConfig::default();
        assert_eq!(cfg.spectral.hop, d.spectral.hop);
        assert_eq!(cfg.spectral.n_mels, 20);
        assert_eq!(cfg.corpus.adapt.speaker, d.corpus.adapt.speaker);
        assert_eq!(cfg.corpus.adapt.seed, d.corpus.adapt.seed);
        assert_eq!(cfg.corpus.adapt.n_clips, 3);
    }

    #[test]
    fn seeds_beyond_toml_integers_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = i64::MAX as u64;
        assert!(cfg.validate().is_ok());
        cfg.seed += 1;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_key_is_named() {
        let err =
            ExperimentConfig::from_toml_str("[training]\nlambda_adverse = 2.0\n").unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("lambda_adverse"), "{err}");
        let err =
            ExperimentConfig::from_toml_str("[corpus.adapt.speaker]\nf0 = 3.0\n").unwrap_err();
        assert!(err.to_string().contains("f0"), "{err}");
    }

    #[test]
    fn strides_must_match_hop() {
        let err = ExperimentConfig::from_toml_str("[spectral]\nhop = 128\n").unwrap_err();
        assert!(err.to_string().contains("strides"), "{err}");
    }

    #[test]
    fn full_scale_is_valid() {
        ExperimentConfig::full_scale().validate().unwrap();
    }
}
