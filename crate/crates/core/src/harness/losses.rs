//! Composite training objectives built on one forward pass per sample.

use rand::Rng;

use super::config::LossWeights;
use crate::error::{Error, Result};
use crate::flow::{drive_terms, training_state, DriveTerms, FlowDraw};
use crate::language::{language_loss, teacher_text};
use crate::model::{Model, Stage};
use crate::numerics::{Tape, Var};
use crate::synth::DrivingSample;

/// Which objective terms to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Terms {
    pub language: bool,
    pub drive: bool,
}

impl Terms {
    pub fn for_stage(stage: Stage) -> Self {
        Self {
            language: stage.trains_language(),
            drive: stage.trains_drive(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub lang: f64,
    pub path: f64,
    pub speed: f64,
    pub smooth: f64,
    pub drive: f64,
    pub total: f64,
}

pub struct SampleLoss {
    pub total: Var,
    pub lang: Option<Var>,
    pub drive: Option<(Var, DriveTerms)>,
}

impl SampleLoss {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let v = |x: Var| tape.value(x).item();
        let mut b = LossBreakdown {
            total: v(self.total),
            ..Default::default()
        };
        if let Some(l) = self.lang {
            b.lang = v(l);
        }
        if let Some((d, t)) = self.drive {
            b.drive = v(d);
            b.path = v(t.path);
            b.speed = v(t.speed);
            b.smooth = v(t.smooth);
        }
        b
    }
}

/// `λ_path·ℒ_path + λ_smooth·ℒ_smooth + λ_speed·ℒ_speed`
pub fn weighted_drive(tape: &mut Tape, t: &DriveTerms, w: &LossWeights) -> Result<Var> {
    tape.weighted_sum(&[(t.path, w.path), (t.smooth, w.smooth), (t.speed, w.speed)])
}

/// Teacher-forced forward and the requested loss terms of one sample.
pub fn sample_loss(
    model: &Model,
    tape: &mut Tape,
    sample: &DrivingSample,
    terms: Terms,
    weights: &LossWeights,
    draw: &FlowDraw,
) -> Result<SampleLoss> {
    if !terms.language && !terms.drive {
        return Err(Error::Config("no loss terms selected".into()));
    }
    let text = teacher_text(&sample.instruction);
    let state = if terms.drive {
        Some(training_state(model, sample, draw)?)
    } else {
        None
    };
    let fwd = model.forward(tape, sample, &text, state.as_ref())?;
    let lang = if terms.language {
        Some(language_loss(model, tape, &fwd, sample)?)
    } else {
        None
    };
    let drive = match &state {
        Some(x) => {
            let t = drive_terms(model, tape, &fwd, sample, x, draw)?;
            Some((weighted_drive(tape, &t, weights)?, t))
        }
        None => None,
    };
    let parts: Vec<(Var, f64)> = lang
        .iter()
        .map(|&l| (l, 1.0))
        .chain(drive.iter().map(|&(d, _)| (d, 1.0)))
        .collect();
    let total = tape.weighted_sum(&parts)?;
    Ok(SampleLoss { total, lang, drive })
}

fn scalar(
    model: &Model,
    sample: &DrivingSample,
    terms: Terms,
    weights: &LossWeights,
    rng: &mut impl Rng,
) -> Result<f64> {
    let draw = FlowDraw::sample(rng);
    let mut tape = Tape::new(&model.store);
    let l = sample_loss(model, &mut tape, sample, terms, weights, &draw)?;
    Ok(tape.value(l.total).item())
}

pub fn drive_loss(
    sample: &DrivingSample,
    model: &Model,
    weights: &LossWeights,
    rng: &mut impl Rng,
) -> Result<f64> {
    scalar(
        model,
        sample,
        Terms {
            language: false,
            drive: true,
        },
        weights,
        rng,
    )
}

/// `ℒ_lang + ℒ_drive`
pub fn total_loss(
    sample: &DrivingSample,
    model: &Model,
    weights: &LossWeights,
    rng: &mut impl Rng,
) -> Result<f64> {
    scalar(
        model,
        sample,
        Terms {
            language: true,
            drive: true,
        },
        weights,
        rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::synth::{make_sample, sample_scenario};
    use crate::tokenizer::SymbolVocab;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Model, DrivingSample) {
        let cfg = ModelConfig {
            d: 16,
            layers: 2,
            heads: 2,
            d_ff: 24,
            ..ModelConfig::default()
        };
        let m = Model::new(cfg, SymbolVocab::standard()).unwrap();
        let s = make_sample(&sample_scenario(21), &m.vocab);
        (m, s)
    }

    #[test]
    fn zero_weights_give_zero_drive_loss() {
        let (m, s) = setup();
        let w = LossWeights {
            path: 0.0,
            smooth: 0.0,
            speed: 0.0,
        };
        assert_eq!(
            drive_loss(&s, &m, &w, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn recomposition_from_measured_terms() {
        let (m, s) = setup();
        let w = LossWeights::default();
        let draw = FlowDraw::sample(&mut ChaCha8Rng::seed_from_u64(4));
        let mut tape = Tape::new(&m.store);
        let l = sample_loss(
            &m,
            &mut tape,
            &s,
            Terms {
                language: true,
                drive: true,
            },
            &w,
            &draw,
        )
        .unwrap();
        let b = l.breakdown(&tape);
        let drive = 1.0 * b.path + 0.1 * b.smooth + 1.0 * b.speed;
        assert_eq!(b.drive, drive);
        assert_eq!(b.total, b.lang + b.drive);
        let no_smooth = LossWeights { smooth: 0.0, ..w };
        let d = drive_loss(&s, &m, &no_smooth, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(d, b.path + b.speed);
        let t = total_loss(&s, &m, &w, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(t, b.total);
        let d = drive_loss(&s, &m, &w, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(t, b.lang + d);
    }
}
