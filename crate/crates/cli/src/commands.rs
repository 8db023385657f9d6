use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vocadapt_core::losses::LogMagLoss;
use vocadapt_core::rng::derive_seed;
use vocadapt_core::signal::{load_wav, save_wav};
use vocadapt_core::training::{
    build_corpus, evaluate, run_adaptation, run_pretraining, Checkpoint, CheckpointKind,
    CorpusSplit, EvalReport, LogRecord,
};
use vocadapt_core::{
    Error as CoreError, ExperimentConfig, MelSpectrogram, SpectralAnalyzer, Vocoder,
};

use crate::error::{CliError, Result};
use crate::plot;

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PRETRAINED_FILE: &str = "pretrained.ckpt";
pub const ADAPTED_FILE: &str = "adapted.ckpt";
pub const EVAL_TABLE_FILE: &str = "metrics.csv";
pub const EVAL_REPORT_FILE: &str = "report.json";

/// Input roles an adaptation run is allowed to read.
pub const ADAPT_INPUT_ROLES: [&str; 2] = ["config", "pretrained"];

/// Which synthetic speaker's held-out clips to evaluate on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Pretrain,
    Adapt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

/// `run.json`: what a run read and wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.into(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push(InputRecord {
            role: role.into(),
            path: path.display().to_string(),
            sha256: hex(&Sha256::digest(&bytes)),
        });
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub steps: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub heldout_log_mag: Option<f64>,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptSummary {
    pub lambda_adv: f64,
    pub baseline: EvalReport,
    pub adapted: EvalReport,
    /// Relative held-out log-magnitude reduction over the pretrained generator.
    pub improvement: f64,
    pub gap_start: f64,
    pub gap_end: f64,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub speaker: Speaker,
    pub seed: u64,
    pub checkpoint_kind: CheckpointKind,
    pub checkpoint_step: u64,
    pub report: EvalReport,
    pub plots: Vec<PathBuf>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads `path` (or takes `fallback`), applies a seed override and validates.
pub fn resolve_config(
    path: Option<&Path>,
    fallback: ExperimentConfig,
    seed: Option<u64>,
) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => fallback,
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

fn echo_config(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    write_file(&out.join(CONFIG_FILE), cfg.to_toml_string()?)
}

struct MetricsLog {
    writer: BufWriter<File>,
    records: Vec<LogRecord>,
}

impl MetricsLog {
    fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            writer: BufWriter::new(file),
            records: Vec::new(),
        })
    }

    fn push(&mut self, rec: &LogRecord) -> vocadapt_core::Result<()> {
        writeln!(self.writer, "{}", rec.to_json())?;
        self.records.push(rec.clone());
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<LogRecord>> {
        self.writer.flush().map_err(CoreError::Io)?;
        Ok(self.records)
    }
}

fn step_losses(records: &[LogRecord]) -> Vec<f64> {
    records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Step { g: Some(g), .. } => Some(g.loss),
            _ => None,
        })
        .collect()
}

/// Trains a generator on the pretraining speaker.
pub fn cmd_pretrain(
    config_path: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> Result<PretrainSummary> {
    let cfg = resolve_config(config_path, ExperimentConfig::default(), seed)?;
    prepare_dir(out)?;
    let mut manifest = RunManifest::new("pretrain", cfg.seed);
    if let Some(p) = config_path {
        manifest.input("config", p)?;
    }
    echo_config(out, &cfg)?;

    let mut log = MetricsLog::create(&out.join(METRICS_FILE))?;
    let ck = run_pretraining(&cfg, &mut |r| log.push(r))?;
    let records = log.finish()?;
    let ck_path = out.join(PRETRAINED_FILE);
    ck.save(&ck_path)?;

    let losses = step_losses(&records);
    let heldout_log_mag = records.iter().rev().find_map(|r| match r {
        LogRecord::Eval {
            heldout_log_mag, ..
        } => Some(*heldout_log_mag),
        _ => None,
    });
    let summary = PretrainSummary {
        steps: ck.step,
        initial_loss: losses.first().copied().unwrap_or(f64::NAN),
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        heldout_log_mag,
        checkpoint: ck_path,
    };
    manifest.outputs = [CONFIG_FILE, METRICS_FILE, PRETRAINED_FILE, SUMMARY_FILE]
        .map(String::from)
        .to_vec();
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Fails unless the adaptation run reads nothing but a configuration and a
/// pretrained generator checkpoint that passes `ensure_teacher_free`.
pub fn assert_teacher_free(pretrained: &Checkpoint, manifest: &RunManifest) -> Result<()> {
    if pretrained.kind != CheckpointKind::Pretrain {
        return Err(CoreError::Checkpoint(format!(
            "adaptation starts from a pretraining checkpoint, found {:?}",
            pretrained.kind
        ))
        .into());
    }
    pretrained.ensure_teacher_free()?;
    if let Some(extra) = manifest
        .inputs
        .iter()
        .find(|i| !ADAPT_INPUT_ROLES.contains(&i.role.as_str()))
    {
        return Err(CoreError::Checkpoint(format!(
            "adaptation may not read input '{}' ({})",
            extra.role, extra.path
        ))
        .into());
    }
    Ok(())
}

fn corpus_for(cfg: &ExperimentConfig, speaker: Speaker) -> Result<CorpusSplit> {
    let analyzer = SpectralAnalyzer::new(&cfg.spectral)?;
    let spec = match speaker {
        Speaker::Pretrain => &cfg.corpus.pretrain,
        Speaker::Adapt => &cfg.corpus.adapt,
    };
    Ok(build_corpus(spec, cfg.sample_rate, &analyzer)?)
}

/// Adapts a pretrained generator to the adaptation speaker.
pub fn cmd_adapt(
    config_path: Option<&Path>,
    pretrained: &Path,
    seed: Option<u64>,
    out: &Path,
) -> Result<AdaptSummary> {
    let ck = Checkpoint::load(pretrained)?;
    let cfg = resolve_config(config_path, ck.config.clone(), seed)?;
    let mut manifest = RunManifest::new("adapt", cfg.seed);
    if let Some(p) = config_path {
        manifest.input("config", p)?;
    }
    manifest.input("pretrained", pretrained)?;
    assert_teacher_free(&ck, &manifest)?;
    prepare_dir(out)?;
    echo_config(out, &cfg)?;

    let corpus = corpus_for(&cfg, Speaker::Adapt)?;
    let loss = LogMagLoss::new(&cfg.spectral)?;
    let baseline = evaluate(&ck.generator()?, &corpus.heldout, &loss, cfg.eval.seed)?;

    let mut log = MetricsLog::create(&out.join(METRICS_FILE))?;
    let outcome = run_adaptation(&ck, &corpus, &cfg, &mut |r| log.push(r))?;
    log.finish()?;
    let ck_path = out.join(ADAPTED_FILE);
    outcome.checkpoint.save(&ck_path)?;

    let adapted = evaluate(
        &outcome.checkpoint.generator()?,
        &corpus.heldout,
        &loss,
        cfg.eval.seed,
    )?;
    let summary = AdaptSummary {
        lambda_adv: cfg.training.lambda_adv,
        improvement: 1.0 - adapted.mean_log_mag / baseline.mean_log_mag,
        baseline,
        adapted,
        gap_start: outcome.gap_start,
        gap_end: outcome.gap_end,
        checkpoint: ck_path,
    };
    manifest.outputs = [CONFIG_FILE, METRICS_FILE, ADAPTED_FILE, SUMMARY_FILE]
        .map(String::from)
        .to_vec();
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Reads mel frames from a headerless CSV, one frame per row.
pub fn read_mel_csv(path: &Path, cfg: &ExperimentConfig) -> Result<MelSpectrogram> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let n_mels = cfg.spectral.n_mels;
    let mut values = Vec::new();
    let mut frames = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != n_mels {
            return Err(CoreError::Data(format!(
                "{} row {row}: expected {n_mels} mel values, found {}",
                path.display(),
                record.len()
            ))
            .into());
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| {
                CoreError::Data(format!(
                    "{} row {row}: '{field}' is not a number",
                    path.display()
                ))
            })?;
            values.push(v);
        }
        frames += 1;
    }
    if frames == 0 {
        return Err(CoreError::Data(format!("{}: mel input has no frames", path.display())).into());
    }
    Ok(MelSpectrogram {
        values: Array2::from_shape_vec((frames, n_mels), values).expect("row lengths checked"),
        log_compressed: cfg.spectral.log_mel,
        sample_rate: cfg.sample_rate,
        config: cfg.spectral.clone(),
    })
}

fn mel_from_input(input: &Path, cfg: &ExperimentConfig) -> Result<MelSpectrogram> {
    let is_wav = input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if !is_wav {
        return read_mel_csv(input, cfg);
    }
    let wave = load_wav(input)?;
    if wave.sample_rate() != cfg.sample_rate {
        return Err(CoreError::Data(format!(
            "{} is sampled at {} Hz, the model expects {} Hz",
            input.display(),
            wave.sample_rate(),
            cfg.sample_rate
        ))
        .into());
    }
    Ok(SpectralAnalyzer::new(&cfg.spectral)?.mel_spectrogram(&wave)?)
}

/// Synthesizes a waveform from mel frames (CSV) or from the mel features of
/// a reference WAV. Returns the number of samples written.
pub fn cmd_synth(checkpoint: &Path, input: &Path, out_wav: &Path, seed: u64) -> Result<usize> {
    let ck = Checkpoint::load(checkpoint)?;
    let generator = ck.generator()?;
    let mel = mel_from_input(input, &ck.config)?;
    let wave = generator.sample(&mel, seed)?;
    if let Some(dir) = out_wav.parent().filter(|d| !d.as_os_str().is_empty()) {
        prepare_dir(dir)?;
    }
    save_wav(&wave, out_wav)?;
    Ok(wave.len())
}

/// Scores a checkpoint on held-out clips and renders spectrogram plots.
pub fn cmd_eval(
    checkpoint: &Path,
    config_path: Option<&Path>,
    speaker: Speaker,
    seed: Option<u64>,
    out: &Path,
) -> Result<EvalSummary> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = resolve_config(config_path, ck.config.clone(), None)?;
    if let Some(s) = seed {
        cfg.eval.seed = s;
    }
    let generator = ck.generator()?;
    let corpus = corpus_for(&cfg, speaker)?;
    let loss = LogMagLoss::new(&cfg.spectral)?;
    let report = evaluate(&generator, &corpus.heldout, &loss, cfg.eval.seed)?;
    prepare_dir(out)?;
    echo_config(out, &cfg)?;

    let table = out.join(EVAL_TABLE_FILE);
    let mut w = csv::Writer::from_path(&table)?;
    w.write_record(["clip", "log_mag", "lsd_db"])?;
    for c in &report.clips {
        w.write_record([
            c.index.to_string(),
            c.log_mag.to_string(),
            c.lsd_db.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&table, e))?;

    let mut plots = Vec::new();
    for &index in &cfg.eval.plot_clips {
        if index >= corpus.heldout.len() {
            return Err(CoreError::Config(format!(
                "plot clip {index} is outside the {} held-out clips",
                corpus.heldout.len()
            ))
            .into());
        }
        let ex = corpus.heldout.full_example(index)?;
        let generated =
            generator.synthesize(&ex.mel, derive_seed(cfg.eval.seed, &[index as u64]))?;
        let figure = plot::render_comparison(
            loss.analyzer(),
            generated.samples(),
            &ex.target,
            cfg.sample_rate,
            cfg.eval.zoom.as_ref(),
        )?;
        let path = out.join(format!("spectrogram_clip{index}.png"));
        figure.image.save(&path)?;
        plots.push(path);
    }

    let summary = EvalSummary {
        speaker,
        seed: cfg.eval.seed,
        checkpoint_kind: ck.kind,
        checkpoint_step: ck.step,
        report,
        plots,
    };
    let mut report_json = serde_json::to_value(&summary)?;
    report_json["log_mag"] = format!(
        "{:.4} ± {:.4}",
        summary.report.mean_log_mag, summary.report.std_log_mag
    )
    .into();
    write_json(&out.join(EVAL_REPORT_FILE), &report_json)?;
    Ok(summary)
}
