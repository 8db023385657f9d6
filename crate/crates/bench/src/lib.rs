//! Fixtures shared by the benchmarks.

use vocadapt_core::signal::synth_clip;
use vocadapt_core::training::{build_corpus, CorpusSplit, Pretraining};
use vocadapt_core::{ExperimentConfig, IafGenerator, Result, SpectralAnalyzer};

/// The desk reference configuration.
pub fn desk_config() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(include_str!("../../../configs/desk.toml"))
        .expect("desk config is valid")
}

pub fn adapt_corpus(cfg: &ExperimentConfig) -> Result<CorpusSplit> {
    let analyzer = SpectralAnalyzer::new(&cfg.spectral)?;
    build_corpus(&cfg.corpus.adapt, cfg.sample_rate, &analyzer)
}

pub fn fresh_generator(cfg: &ExperimentConfig) -> Result<IafGenerator> {
    Ok(Pretraining::new(cfg)?.generator)
}

/// One clip of the adaptation speaker.
pub fn clip(cfg: &ExperimentConfig, len: usize) -> Result<Vec<f64>> {
    let spec = &cfg.corpus.adapt;
    Ok(synth_clip(&spec.speaker, len, cfg.sample_rate, spec.seed, 0)?.into_samples())
}
