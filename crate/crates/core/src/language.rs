//! Autoregressive instruction head over the vision-language hidden states.

use crate::error::{Error, Result};
use crate::flow::NoisyActionState;
use crate::model::{Forward, Model};
use crate::numerics::{Tape, Var};
use crate::synth::DrivingSample;
use crate::tokenizer::{BOS, EOS};

pub const MAX_DECODE_LEN: usize = 16;

/// `H_vl · W_out`
pub fn lm_logits(tape: &mut Tape, h_vl: Var, head: Var) -> Result<Var> {
    if tape.value(h_vl).rows() == 0 {
        return Err(Error::Contract(
            "language head needs at least one VL row".into(),
        ));
    }
    tape.matmul(h_vl, head)
}

/// Mean cross entropy over the rows selected by `loss_mask`.
pub fn lm_loss(tape: &mut Tape, logits: Var, targets: &[usize], loss_mask: &[bool]) -> Result<Var> {
    if targets.len() != loss_mask.len() {
        return Err(Error::Dimension(format!(
            "{} targets for {} mask entries",
            targets.len(),
            loss_mask.len()
        )));
    }
    let rows: Vec<(usize, usize)> = targets
        .iter()
        .zip(loss_mask)
        .enumerate()
        .filter(|(_, (_, &m))| m)
        .map(|(i, (&t, _))| (i, t))
        .collect();
    if rows.is_empty() {
        return Err(Error::Contract(
            "language loss mask selects no positions".into(),
        ));
    }
    tape.cross_entropy(logits, &rows)
}

/// Teacher-forced inputs for an instruction: `[BOS, o_1, …, o_{K−1}]`.
pub fn teacher_text(instruction: &[usize]) -> Vec<usize> {
    let mut text = vec![BOS];
    text.extend_from_slice(&instruction[..instruction.len().saturating_sub(1)]);
    text
}

/// Logits at the text positions of `fwd`, in order.
pub fn text_logits(model: &Model, tape: &mut Tape, fwd: &Forward) -> Result<Var> {
    let vl = &fwd.sets.vl;
    let mut rows = Vec::with_capacity(fwd.text_positions.len());
    for p in &fwd.text_positions {
        let r = vl
            .binary_search(p)
            .map_err(|_| Error::Internal(format!("text position {p} is not a VL token")))?;
        rows.push(r);
    }
    let h_vl = tape.gather_rows(fwd.hidden, vl)?;
    let h = tape.gather_rows(h_vl, &rows)?;
    let head = tape.param(model.ids.lm_head);
    lm_logits(tape, h, head)
}

/// Teacher-forced loss of `sample.instruction`; `fwd` must carry `teacher_text`.
pub fn language_loss(
    model: &Model,
    tape: &mut Tape,
    fwd: &Forward,
    sample: &DrivingSample,
) -> Result<Var> {
    if fwd.text_positions.len() != sample.instruction.len() {
        return Err(Error::Contract(format!(
            "forward carries {} text tokens for an instruction of {}",
            fwd.text_positions.len(),
            sample.instruction.len()
        )));
    }
    let logits = text_logits(model, tape, fwd)?;
    let mask = vec![true; sample.instruction.len()];
    lm_loss(tape, logits, &sample.instruction, &mask)
}

fn argmax(row: &[f64]) -> usize {
    // strict `>` keeps the lowest id on ties
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding after the command, stopping at EOS (included) or `max_len`.
/// `action` only exists to show that action tokens cannot influence the text.
pub fn greedy_decode(
    model: &Model,
    sample: &DrivingSample,
    max_len: usize,
    action: Option<&NoisyActionState>,
) -> Result<Vec<usize>> {
    if max_len > MAX_DECODE_LEN {
        return Err(Error::Config(format!(
            "max_len {max_len} exceeds {MAX_DECODE_LEN}"
        )));
    }
    let mut text = vec![BOS];
    let mut out = Vec::new();
    while out.len() < max_len {
        let mut tape = Tape::new(&model.store);
        let fwd = model.forward(&mut tape, sample, &text, action)?;
        let logits = text_logits(model, &mut tape, &fwd)?;
        let lv = tape.value(logits);
        let next = argmax(lv.row(lv.rows() - 1));
        out.push(next);
        if next == EOS {
            break;
        }
        text.push(next);
    }
    Ok(out)
}

/// Position-wise matches of `pred` against `target`, and the target length.
pub fn token_matches(pred: &[usize], target: &[usize]) -> (usize, usize) {
    let hits = target.iter().zip(pred).filter(|(a, b)| a == b).count();
    (hits, target.len())
}

/// Decoded symbols without the trailing EOS, ready to be fed back as text.
pub fn decoded_text(decoded: &[usize]) -> Vec<usize> {
    let mut text = vec![BOS];
    text.extend(decoded.iter().copied().take_while(|&t| t != EOS));
    text
}
