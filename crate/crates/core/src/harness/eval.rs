//! Open-loop metrics on a held-out set: ADE, FDE, speed MAE and instruction
//! token accuracy, overall and per scenario class.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::flow::{euler_integrate, TrajectoryOutput};
use crate::language::{decoded_text, greedy_decode, token_matches, MAX_DECODE_LEN};
use crate::model::Model;
use crate::synth::{Command, DrivingSample};
use crate::tokenizer::SymbolVocab;

/// Anything that can produce an instruction and a trajectory for a sample.
pub trait Planner {
    fn vocab(&self) -> &SymbolVocab;
    fn decode(&self, sample: &DrivingSample) -> Result<Vec<usize>>;
    /// `text` is the decoded instruction as fed back after the command.
    fn plan(
        &self,
        sample: &DrivingSample,
        text: &[usize],
        steps: usize,
        seed: u64,
    ) -> Result<TrajectoryOutput>;
}

impl Planner for Model {
    fn vocab(&self) -> &SymbolVocab {
        &self.vocab
    }

    fn decode(&self, sample: &DrivingSample) -> Result<Vec<usize>> {
        greedy_decode(self, sample, MAX_DECODE_LEN, None)
    }

    fn plan(
        &self,
        sample: &DrivingSample,
        text: &[usize],
        steps: usize,
        seed: u64,
    ) -> Result<TrajectoryOutput> {
        euler_integrate(self, sample, text, steps, seed)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub samples: usize,
    pub ade: f64,
    pub fde: f64,
    pub speed_mae: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub overall: Metrics,
    pub per_class: BTreeMap<String, Metrics>,
}

#[derive(Default)]
struct Acc {
    n: usize,
    ade: f64,
    fde: f64,
    mae: f64,
    hits: usize,
    tokens: usize,
}

impl Acc {
    fn finish(&self) -> Metrics {
        let n = self.n.max(1) as f64;
        Metrics {
            samples: self.n,
            ade: self.ade / n,
            fde: self.fde / n,
            speed_mae: self.mae / n,
            accuracy: if self.tokens == 0 {
                0.0
            } else {
                self.hits as f64 / self.tokens as f64
            },
        }
    }
}

/// Per-sample seed for the Euler noise.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

pub struct SampleResult {
    pub decoded: Vec<usize>,
    pub trajectory: TrajectoryOutput,
}

pub fn run_sample(
    planner: &impl Planner,
    sample: &DrivingSample,
    steps: usize,
    seed: u64,
) -> Result<SampleResult> {
    let decoded = planner.decode(sample)?;
    let trajectory = planner.plan(sample, &decoded_text(&decoded), steps, seed)?;
    Ok(SampleResult {
        decoded,
        trajectory,
    })
}

pub fn evaluate(
    planner: &impl Planner,
    data: &[DrivingSample],
    euler_steps: usize,
    seed: u64,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    let mut overall = Acc::default();
    let mut classes: BTreeMap<String, Acc> = BTreeMap::new();
    for (i, s) in data.iter().enumerate() {
        let r = run_sample(planner, s, euler_steps, sample_seed(seed, i))?;
        let t = &r.trajectory;
        if t.waypoints.len() != s.path.len() || t.speeds.len() != s.speeds.len() {
            return Err(Error::Dimension(
                "planner output does not match the ground-truth shapes".into(),
            ));
        }
        let dists: Vec<f64> = t
            .waypoints
            .iter()
            .zip(&s.path)
            .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
            .collect();
        let ade = dists.iter().sum::<f64>() / dists.len() as f64;
        let fde = *dists.last().unwrap_or(&0.0);
        let mae = t
            .speeds
            .iter()
            .zip(&s.speeds)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / s.speeds.len() as f64;
        let (hits, tokens) = token_matches(&r.decoded, &s.instruction);
        let class = Command::from_symbol_id(planner.vocab(), s.command)
            .map(Command::name)
            .unwrap_or("unknown");
        for acc in [&mut overall, classes.entry(class.to_string()).or_default()] {
            acc.n += 1;
            acc.ade += ade;
            acc.fde += fde;
            acc.mae += mae;
            acc.hits += hits;
            acc.tokens += tokens;
        }
    }
    Ok(EvalReport {
        overall: overall.finish(),
        per_class: classes.into_iter().map(|(k, a)| (k, a.finish())).collect(),
    })
}

impl EvalReport {
    /// `key: value` lines, overall metrics first.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let m = &self.overall;
        let _ = writeln!(s, "samples: {}", m.samples);
        let _ = writeln!(s, "ade: {:.6}", m.ade);
        let _ = writeln!(s, "fde: {:.6}", m.fde);
        let _ = writeln!(s, "speed_mae: {:.6}", m.speed_mae);
        let _ = writeln!(s, "accuracy: {:.6}", m.accuracy);
        for (class, m) in &self.per_class {
            let _ = writeln!(s, "{class}.samples: {}", m.samples);
            let _ = writeln!(s, "{class}.ade: {:.6}", m.ade);
            let _ = writeln!(s, "{class}.fde: {:.6}", m.fde);
            let _ = writeln!(s, "{class}.speed_mae: {:.6}", m.speed_mae);
            let _ = writeln!(s, "{class}.accuracy: {:.6}", m.accuracy);
        }
        s
    }
}
