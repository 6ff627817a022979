//! Trains architecture variants under the same schedule and tabulates them.

use std::fmt::Write as _;
use std::time::Instant;

use super::config::TrainConfig;
use super::eval::{evaluate, EvalReport};
use super::train::{train_stages, EpochLog};
use crate::error::Result;
use crate::model::{Model, Stage, Variant};
use crate::synth::DrivingSample;

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: EvalReport,
    pub train_seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

pub fn run_variant(
    base: &TrainConfig,
    variant: Variant,
    train: &[DrivingSample],
    eval: &[DrivingSample],
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<AblationRow> {
    let mut cfg = base.clone();
    cfg.model.variant = variant;
    let mut model = Model::new(cfg.model.clone(), crate::tokenizer::SymbolVocab::standard())?;
    let start = Instant::now();
    train_stages(&cfg, &Stage::ALL, &mut model, train, on_epoch)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let report = evaluate(&model, eval, cfg.euler_steps, cfg.eval_seed)?;
    Ok(AblationRow {
        variant,
        report,
        train_seconds,
    })
}

pub fn run_ablation(
    base: &TrainConfig,
    variants: &[Variant],
    train: &[DrivingSample],
    eval: &[DrivingSample],
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        rows.push(run_variant(base, v, train, eval, on_epoch)?);
    }
    Ok(AblationReport { rows })
}

impl AblationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "variant", "ade", "fde", "speed_mae", "accuracy", "train_s"
        );
        for r in &self.rows {
            let m = &r.report.overall;
            let _ = writeln!(
                s,
                "{:<16} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.1}",
                r.variant.name(),
                m.ade,
                m.fde,
                m.speed_mae,
                m.accuracy,
                r.train_seconds
            );
        }
        let order = |key: fn(&AblationRow) -> f64| {
            let mut v: Vec<&AblationRow> = self.rows.iter().collect();
            v.sort_by(|a, b| key(a).total_cmp(&key(b)));
            v.iter()
                .map(|r| r.variant.name())
                .collect::<Vec<_>>()
                .join(" < ")
        };
        let _ = writeln!(s, "ade order: {}", order(|r| r.report.overall.ade));
        let _ = writeln!(
            s,
            "speed_mae order: {}",
            order(|r| r.report.overall.speed_mae)
        );
        let _ = writeln!(
            s,
            "accuracy order: {}",
            order(|r| -r.report.overall.accuracy).replace(" < ", " > ")
        );
        s
    }
}
