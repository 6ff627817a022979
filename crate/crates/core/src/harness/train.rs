//! Minibatch Adam over one stage of the schedule, with stage-specific freezing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{StageConfig, TrainConfig};
use super::losses::{sample_loss, LossBreakdown, Terms};
use crate::error::{Error, Result};
use crate::flow::FlowDraw;
use crate::model::{Model, Stage};
use crate::numerics::{AdamConfig, Tape};
use crate::synth::DrivingSample;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub stage: Stage,
    pub epoch: usize,
    /// Mean over the epoch's samples.
    pub loss: LossBreakdown,
    pub mean_grad_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &EpochLog> {
        self.epochs.iter().filter(move |e| e.stage == stage)
    }

    pub fn to_text(&self) -> String {
        self.epochs.iter().map(format_epoch).collect()
    }
}

pub fn format_epoch(e: &EpochLog) -> String {
    let l = &e.loss;
    format!(
        "stage {} epoch {}: total {:.5} lang {:.5} path {:.5} speed {:.5} smooth {:.5} grad {:.4}\n",
        e.stage.number(),
        e.epoch,
        l.total,
        l.lang,
        l.path,
        l.speed,
        l.smooth,
        e.mean_grad_norm
    )
}

fn stage_seed(seed: u64, stage: Stage) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stage.number() as u64)
}

pub fn run_stage(
    cfg: &StageConfig,
    model: &mut Model,
    data: &[DrivingSample],
) -> Result<TrainingLog> {
    run_stage_with(cfg, model, data, &mut |_| {})
}

/// Trains one stage; `on_epoch` sees every epoch log as it completes.
pub fn run_stage_with(
    cfg: &StageConfig,
    model: &mut Model,
    data: &[DrivingSample],
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainingLog> {
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let frozen = model.frozen_groups(cfg.stage, cfg.freeze_attention);
    model.store.set_all_trainable(true);
    for &id in &frozen {
        model.store.set_trainable(id, false);
    }
    model.store.reset_optimizer();
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let terms = Terms::for_stage(cfg.stage);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.shuffle_seed, cfg.stage));
    let mut flow_rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.flow_seed, cfg.stage) ^ 0xF10);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainingLog::default();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = LossBreakdown::default();
        let mut grad_norms = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            model.store.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let draw = FlowDraw::sample(&mut flow_rng);
                let grads = {
                    let mut tape = Tape::new(&model.store);
                    let loss = sample_loss(model, &mut tape, &data[i], terms, &cfg.weights, &draw)?;
                    let b = loss.breakdown(&tape);
                    if !b.total.is_finite() {
                        let tensor = tape.first_non_finite().unwrap_or_else(|| "loss".into());
                        return Err(Error::NonFinite { tensor });
                    }
                    add(&mut sum, &b);
                    tape.backward(loss.total)?
                };
                model.store.accumulate(&grads, scale);
            }
            grad_norms += model.store.clip_grad_norm(cfg.clip_norm);
            model.store.adam_step(&adam);
            batches += 1;
        }
        let n = data.len() as f64;
        let loss = LossBreakdown {
            lang: sum.lang / n,
            path: sum.path / n,
            speed: sum.speed / n,
            smooth: sum.smooth / n,
            drive: sum.drive / n,
            total: sum.total / n,
        };
        let entry = EpochLog {
            stage: cfg.stage,
            epoch,
            loss,
            mean_grad_norm: grad_norms / batches as f64,
        };
        on_epoch(&entry);
        log.epochs.push(entry);
    }
    model.store.set_all_trainable(true);
    Ok(log)
}

fn add(acc: &mut LossBreakdown, b: &LossBreakdown) {
    acc.lang += b.lang;
    acc.path += b.path;
    acc.speed += b.speed;
    acc.smooth += b.smooth;
    acc.drive += b.drive;
    acc.total += b.total;
}

/// Runs the given stages in order with the configured epochs.
pub fn train_stages(
    cfg: &TrainConfig,
    stages: &[Stage],
    model: &mut Model,
    data: &[DrivingSample],
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainingLog> {
    let mut log = TrainingLog::default();
    for &stage in stages {
        let l = run_stage_with(&cfg.stage(stage), model, data, on_epoch)?;
        log.epochs.extend(l.epochs);
    }
    Ok(log)
}
