//! Pretraining, two-phase adversarial adaptation, checkpoints and
//! evaluation.
//!
//! Every random draw of a step comes from `derive_rng(seed, [phase, step])`,
//! so a run resumed from a checkpoint continues exactly as if uninterrupted.

mod checkpoint;
mod config;
pub mod data;
mod eval;
mod optim;
mod steps;

pub use checkpoint::{Checkpoint, CheckpointKind, CHECKPOINT_VERSION};
pub use config::TrainingConfig;
pub use data::{build_corpus, CorpusSplit, Dataset, Example};
pub use eval::{evaluate, log_spectral_distance, ClipMetrics, EvalReport};
pub use optim::{adam_step_model, adam_update, noam_lr, AdamParams, OptimizerState};
pub use steps::{adam_params, adapt_d_step, adapt_g_step, pretrain_step, StepLosses};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::{IafGenerator, NoiseSample};
use crate::losses::LogMagLoss;
use crate::nn::Parameterized;
use crate::rng::{derive_rng, derive_seed};

const TAG_G_INIT: u64 = 1;
const TAG_D_INIT: u64 = 2;
const TAG_PRETRAIN: u64 = 3;
const TAG_ADAPT: u64 = 4;
const TAG_PROBE: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    /// Discriminator-only steps with the generator frozen.
    Freeze,
    /// Alternating discriminator and generator steps.
    Joint,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Step {
        step: u64,
        phase: Phase,
        #[serde(skip_serializing_if = "Option::is_none")]
        lr_g: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        lr_d: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        g: Option<StepLosses>,
        #[serde(skip_serializing_if = "Option::is_none")]
        d: Option<StepLosses>,
    },
    Eval {
        step: u64,
        phase: Phase,
        heldout_log_mag: f64,
        heldout_lsd_db: f64,
    },
    /// Mean scores on a fixed held-out probe batch.
    Probe {
        step: u64,
        phase: Phase,
        score_real: f64,
        score_fake: f64,
        gap: f64,
    },
}

impl LogRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log records serialize")
    }
}

pub type Sink<'a> = dyn FnMut(&LogRecord) -> Result<()> + 'a;

fn eval_record(
    g: &IafGenerator,
    heldout: &Dataset,
    loss: &LogMagLoss,
    cfg: &ExperimentConfig,
    step: u64,
    phase: Phase,
) -> Result<LogRecord> {
    let report = evaluate(g, heldout, loss, cfg.eval.seed)?;
    Ok(LogRecord::Eval {
        step,
        phase,
        heldout_log_mag: report.mean_log_mag,
        heldout_lsd_db: report.mean_lsd_db,
    })
}

/// Generator trained directly on the log-magnitude loss plus a small
/// time-domain L1 term.
pub struct Pretraining {
    pub config: ExperimentConfig,
    pub generator: IafGenerator,
    pub opt: OptimizerState,
    /// Completed steps.
    pub step: u64,
    loss: LogMagLoss,
}

impl Pretraining {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let generator = IafGenerator::new(
            &config.generator,
            &config.conditioning,
            config.spectral.n_mels,
            config.spectral.hop,
            &mut derive_rng(config.seed, &[TAG_G_INIT]),
        )?;
        let opt = OptimizerState::new(generator.param_count());
        Ok(Self {
            config: config.clone(),
            generator,
            opt,
            step: 0,
            loss: LogMagLoss::new(&config.spectral)?,
        })
    }

    pub fn resume(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CheckpointKind::Pretrain {
            return Err(Error::Checkpoint("not a pretraining checkpoint".into()));
        }
        let mut run = Self::new(&ck.config)?;
        run.generator = ck.generator()?;
        run.opt = ck
            .opt_g
            .clone()
            .unwrap_or_else(|| OptimizerState::new(run.generator.param_count()));
        run.step = ck.step;
        Ok(run)
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.training.pretrain_steps
    }

    pub fn step(&mut self, data: &Dataset) -> Result<LogRecord> {
        let t = &self.config.training;
        let step = self.step + 1;
        let mut rng = derive_rng(self.config.seed, &[TAG_PRETRAIN, step]);
        let batch = data.sample_batch(
            t.batch_clips,
            t.crop_len(self.config.spectral.hop),
            &mut rng,
        )?;
        let lr = noam_lr(self.opt.step + 1, t.lr_g, t.warmup_steps)?;
        let losses = pretrain_step(
            &mut self.generator,
            &mut self.opt,
            &batch,
            &self.loss,
            t.pretrain_l1_weight,
            lr,
            &adam_params(t),
            &mut rng,
        )?;
        self.step = step;
        Ok(LogRecord::Step {
            step,
            phase: Phase::Pretrain,
            lr_g: Some(lr),
            lr_d: None,
            g: Some(losses),
            d: None,
        })
    }

    /// Runs the remaining steps, with held-out evaluation at the start, every
    /// `eval_every` steps and at the end.
    pub fn run(
        &mut self,
        data: &Dataset,
        heldout: Option<&Dataset>,
        sink: &mut Sink,
    ) -> Result<()> {
        let every = self.config.training.eval_every;
        let evaluate_now = |this: &Self, sink: &mut Sink| -> Result<()> {
            if let Some(h) = heldout.filter(|h| !h.is_empty()) {
                sink(&eval_record(
                    &this.generator,
                    h,
                    &this.loss,
                    &this.config,
                    this.step,
                    Phase::Pretrain,
                )?)?;
            }
            Ok(())
        };
        if self.step == 0 {
            evaluate_now(self, sink)?;
        }
        while !self.is_finished() {
            let rec = self.step(data)?;
            sink(&rec)?;
            if (every > 0 && self.step % every == 0) || self.is_finished() {
                evaluate_now(self, sink)?;
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_generator(&self.generator, &self.config, self.step);
        ck.opt_g = Some(self.opt.clone());
        ck
    }
}

/// Adversarial adaptation of a pretrained generator: `freeze_g_steps`
/// discriminator-only steps, then `joint_steps` steps that each update the
/// discriminator and then the generator.
pub struct Adaptation {
    pub config: ExperimentConfig,
    pub generator: IafGenerator,
    pub discriminator: Discriminator,
    pub opt_g: OptimizerState,
    pub opt_d: OptimizerState,
    /// Completed steps over both phases.
    pub step: u64,
    source_digest: String,
    loss: LogMagLoss,
}

impl Adaptation {
    /// Starts from a pretrained generator. The discriminator is freshly
    /// initialized and both optimizers start empty. Architecture and
    /// analysis settings must match the pretrained run.
    pub fn new(pretrained: &Checkpoint, config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        if pretrained.kind != CheckpointKind::Pretrain {
            return Err(Error::Checkpoint(
                "adaptation must start from a pretraining checkpoint".into(),
            ));
        }
        pretrained.ensure_teacher_free()?;
        let p = &pretrained.config;
        if p.generator != config.generator
            || p.conditioning != config.conditioning
            || p.spectral != config.spectral
        {
            return Err(Error::Config(
                "generator, conditioning and spectral settings must match the pretrained checkpoint".into(),
            ));
        }
        let generator = pretrained.generator()?;
        let discriminator = Discriminator::new(
            &config.discriminator,
            &config.conditioning,
            config.spectral.n_mels,
            config.spectral.hop,
            &mut derive_rng(config.seed, &[TAG_D_INIT]),
        )?;
        Ok(Self {
            opt_g: OptimizerState::new(generator.param_count()),
            opt_d: OptimizerState::new(discriminator.param_count()),
            source_digest: generator.param_digest(),
            generator,
            discriminator,
            config: config.clone(),
            step: 0,
            loss: LogMagLoss::new(&config.spectral)?,
        })
    }

    pub fn resume(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CheckpointKind::Adapt {
            return Err(Error::Checkpoint("not an adaptation checkpoint".into()));
        }
        ck.ensure_teacher_free()?;
        let generator = ck.generator()?;
        let discriminator = ck.discriminator()?.ok_or_else(|| {
            Error::Checkpoint("adaptation checkpoint has no discriminator".into())
        })?;
        let missing = || Error::Checkpoint("adaptation checkpoint has no optimizer state".into());
        Ok(Self {
            opt_g: ck.opt_g.clone().ok_or_else(missing)?,
            opt_d: ck.opt_d.clone().ok_or_else(missing)?,
            source_digest: ck.source_digest.clone().unwrap_or_default(),
            generator,
            discriminator,
            config: ck.config.clone(),
            step: ck.step,
            loss: LogMagLoss::new(&ck.config.spectral)?,
        })
    }

    pub fn total_steps(&self) -> u64 {
        self.config.training.adaptation_steps()
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.total_steps()
    }

    /// Phase of step number `step` (1-based).
    pub fn phase_of(&self, step: u64) -> Phase {
        if step <= self.config.training.freeze_g_steps {
            Phase::Freeze
        } else {
            Phase::Joint
        }
    }

    /// Digest of the generator this adaptation started from.
    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn loss(&self) -> &LogMagLoss {
        &self.loss
    }

    pub fn step(&mut self, data: &Dataset) -> Result<LogRecord> {
        if self.is_finished() {
            return Err(Error::Config("adaptation schedule already complete".into()));
        }
        let t = self.config.training.clone();
        let hp = adam_params(&t);
        let step = self.step + 1;
        let phase = self.phase_of(step);
        let mut rng = derive_rng(self.config.seed, &[TAG_ADAPT, step]);
        let batch = data.sample_batch(
            t.batch_clips,
            t.crop_len(self.config.spectral.hop),
            &mut rng,
        )?;
        let lr_d = noam_lr(self.opt_d.step + 1, t.lr_d, t.warmup_steps)?;
        let d = adapt_d_step(
            &mut self.discriminator,
            &mut self.opt_d,
            &self.generator,
            &batch,
            lr_d,
            &hp,
            &mut rng,
        )?;
        let (lr_g, g) = if phase == Phase::Joint {
            let lr_g = noam_lr(self.opt_g.step + 1, t.lr_g, t.warmup_steps)?;
            let g = adapt_g_step(
                &mut self.generator,
                &mut self.opt_g,
                &self.discriminator,
                &batch,
                &self.loss,
                t.lambda_adv,
                lr_g,
                &hp,
                &mut rng,
            )?;
            (Some(lr_g), Some(g))
        } else {
            (None, None)
        };
        self.step = step;
        Ok(LogRecord::Step {
            step,
            phase,
            lr_g,
            lr_d: Some(lr_d),
            g,
            d: Some(d),
        })
    }

    /// Mean real and fake scores on a fixed probe batch drawn from `heldout`
    /// with fixed noise.
    pub fn probe(&self, heldout: &Dataset) -> Result<(f64, f64)> {
        let t = &self.config.training;
        let mut rng = derive_rng(self.config.seed, &[TAG_PROBE]);
        let batch = heldout.sample_batch(
            t.batch_clips,
            t.crop_len(self.config.spectral.hop),
            &mut rng,
        )?;
        let (mut real, mut fake) = (0.0, 0.0);
        for (i, ex) in batch.iter().enumerate() {
            let mut noise_rng =
                derive_rng(derive_seed(self.config.seed, &[TAG_PROBE, i as u64]), &[]);
            let z = NoiseSample::logistic(ex.target.len(), &mut noise_rng);
            let x = self.generator.forward_parallel(&z, &ex.mel)?;
            real += self.discriminator.score(&ex.target, &ex.mel)?.pooled;
            fake += self.discriminator.score(&x, &ex.mel)?.pooled;
        }
        let n = batch.len() as f64;
        Ok((real / n, fake / n))
    }

    fn probe_record(&self, heldout: &Dataset) -> Result<LogRecord> {
        let (score_real, score_fake) = self.probe(heldout)?;
        Ok(LogRecord::Probe {
            step: self.step,
            phase: self.phase_of(self.step.max(1)),
            score_real,
            score_fake,
            gap: (score_real - score_fake).abs(),
        })
    }

    /// Runs until `until` completed steps (capped at the schedule end).
    /// Held-out metrics are logged every `eval_every` steps and at the end;
    /// the score probe is logged when the freeze phase ends and at the end.
    pub fn run_until(
        &mut self,
        until: u64,
        data: &Dataset,
        heldout: &Dataset,
        sink: &mut Sink,
    ) -> Result<()> {
        let until = until.min(self.total_steps());
        let every = self.config.training.eval_every;
        let freeze = self.config.training.freeze_g_steps;
        let log_eval = |this: &Self, sink: &mut Sink| -> Result<()> {
            let phase = this.phase_of(this.step.max(1));
            sink(&eval_record(
                &this.generator,
                heldout,
                &this.loss,
                &this.config,
                this.step,
                phase,
            )?)
        };
        if self.step == 0 {
            log_eval(self, sink)?;
            if freeze == 0 {
                sink(&self.probe_record(heldout)?)?;
            }
        }
        while self.step < until {
            let rec = self.step(data)?;
            sink(&rec)?;
            if self.step == freeze || self.is_finished() {
                sink(&self.probe_record(heldout)?)?;
            }
            if (every > 0 && self.step % every == 0) || self.is_finished() {
                log_eval(self, sink)?;
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::Adapt,
            config: self.config.clone(),
            step: self.step,
            generator: self.generator.named_blocks(),
            discriminator: Some(self.discriminator.named_blocks()),
            opt_g: Some(self.opt_g.clone()),
            opt_d: Some(self.opt_d.clone()),
            source_digest: Some(self.source_digest.clone()),
        }
    }
}

/// Result of a complete adaptation run.
#[derive(Clone, Debug)]
pub struct AdaptationOutcome {
    pub checkpoint: Checkpoint,
    /// Probe score gap when joint training starts and when it ends.
    pub gap_start: f64,
    pub gap_end: f64,
}

/// Complete two-phase adaptation from a pretrained checkpoint.
pub fn run_adaptation(
    pretrained: &Checkpoint,
    corpus: &CorpusSplit,
    config: &ExperimentConfig,
    sink: &mut Sink,
) -> Result<AdaptationOutcome> {
    let mut run = Adaptation::new(pretrained, config)?;
    let mut gaps = Vec::new();
    let total = run.total_steps();
    run.run_until(
        total,
        &corpus.train,
        &corpus.heldout,
        &mut |rec: &LogRecord| {
            if let LogRecord::Probe { gap, .. } = rec {
                gaps.push(*gap);
            }
            sink(rec)
        },
    )?;
    Ok(AdaptationOutcome {
        checkpoint: run.checkpoint(),
        gap_start: gaps.first().copied().unwrap_or(f64::NAN),
        gap_end: gaps.last().copied().unwrap_or(f64::NAN),
    })
}

/// Complete pretraining run on the configured pretraining speaker.
pub fn run_pretraining(config: &ExperimentConfig, sink: &mut Sink) -> Result<Checkpoint> {
    let analyzer = crate::signal::SpectralAnalyzer::new(&config.spectral)?;
    let corpus = build_corpus(&config.corpus.pretrain, config.sample_rate, &analyzer)?;
    let mut run = Pretraining::new(config)?;
    run.run(&corpus.train, Some(&corpus.heldout), sink)?;
    Ok(run.checkpoint())
}
