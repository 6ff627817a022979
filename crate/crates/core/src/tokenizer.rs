//! Turns every input modality into embedding rows and lays them out as one
//! tagged sequence: goal, image, target point, command, ego state, actions.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::NoisyActionState;
use crate::numerics::{ParamId, Tape, Tensor, Var};

pub const N_WAYPOINTS: usize = 20;
pub const N_SPEEDS: usize = 10;
pub const N_ACTION_TOKENS: usize = N_WAYPOINTS + N_SPEEDS;
pub const TIME_EMBED_DIM: usize = 8;
pub const RASTER_SIZE: usize = 16;
pub const PATCH_SIZE: usize = 4;
pub const MAX_GOAL_TOKENS: usize = 8;
/// Width of the ego-state feature vector: v, a, sin θ, cos θ − 1, θ̇.
pub const EGO_FEATURES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenType {
    Goal,
    Image,
    TargetPoint,
    Command,
    EgoState,
    PathAction,
    SpeedAction,
}

impl TokenType {
    /// Goal, image and command tokens are served by the vision-language expert.
    pub fn is_vision_language(self) -> bool {
        matches!(
            self,
            TokenType::Goal | TokenType::Image | TokenType::Command
        )
    }

    pub fn is_noisy_action(self) -> bool {
        matches!(self, TokenType::PathAction | TokenType::SpeedAction)
    }
}

/// Physical-unit scales mapping inputs and outputs into model space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            position: 20.0,
            speed: 15.0,
            accel: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    /// m/s
    pub v: f64,
    /// m/s²
    pub a: f64,
    /// rad
    pub yaw: f64,
    /// rad/s
    pub yaw_rate: f64,
}

impl EgoState {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.v, self.a, self.yaw, self.yaw_rate]
            .iter()
            .all(|x| x.is_finite());
        if !all_finite || self.v < 0.0 {
            return Err(Error::Input(format!("invalid ego state {self:?}")));
        }
        Ok(())
    }

    /// Normalized features; the angle enters as (sin θ, cos θ − 1) so the
    /// zero state maps to the zero vector.
    pub fn features(&self, norm: &Normalization) -> [f64; EGO_FEATURES] {
        [
            self.v / norm.speed,
            self.a / norm.accel,
            self.yaw.sin(),
            self.yaw.cos() - 1.0,
            self.yaw_rate,
        ]
    }
}

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const VOCAB_SIZE: usize = 64;

/// Named symbols after the reserved PAD/BOS/EOS, in id order starting at 3.
const NAMED_SYMBOLS: &[&str] = &[
    "CMD_FOLLOW",
    "CMD_TURN_LEFT",
    "CMD_TURN_RIGHT",
    "CMD_STOP",
    "GOAL_REACH",
    "GOAL_AHEAD",
    "GOAL_LEFT",
    "GOAL_RIGHT",
    "GOAL_NEAR",
    "GOAL_FAR",
    "SYM_CLEAR",
    "SYM_LEAD",
    "SYM_STOPLINE",
    "SYM_FOLLOW",
    "SYM_TURN_LEFT",
    "SYM_TURN_RIGHT",
    "SYM_STOP",
    "SYM_CRUISE",
    "SYM_SLOW",
    "SYM_HALT",
];

/// Bijective symbol ↔ id table of fixed size.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolVocab {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl SymbolVocab {
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if ids.insert(n.clone(), i).is_some() {
                return Err(Error::Config(format!(
                    "symbol `{n}` appears twice in vocabulary"
                )));
            }
        }
        if names.len() <= EOS || names[PAD] != "PAD" || names[BOS] != "BOS" || names[EOS] != "EOS" {
            return Err(Error::Config(
                "vocabulary must start with PAD, BOS, EOS".into(),
            ));
        }
        Ok(Self { names, ids })
    }

    /// The driving vocabulary: reserved ids, commands, goal words, instruction
    /// words, padded with unused symbols up to [`VOCAB_SIZE`].
    pub fn standard() -> Self {
        let mut names: Vec<String> = ["PAD", "BOS", "EOS"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend(NAMED_SYMBOLS.iter().map(|s| s.to_string()));
        for i in names.len()..VOCAB_SIZE {
            names.push(format!("UNUSED_{i}"));
        }
        Self::from_names(names).expect("standard vocabulary is bijective")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    /// Id of a symbol that must exist in the standard vocabulary.
    pub fn sym(&self, name: &str) -> usize {
        self.id(name)
            .unwrap_or_else(|| panic!("unknown symbol {name}"))
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.name(i).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Bias-free `silu(x·W1)·W2`.
#[derive(Clone, Copy, Debug)]
pub struct Mlp2 {
    pub w1: ParamId,
    pub w2: ParamId,
}

impl Mlp2 {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w1 = tape.param(self.w1);
        let h = tape.matmul(x, w1)?;
        let h = tape.silu(h);
        let w2 = tape.param(self.w2);
        tape.matmul(h, w2)
    }
}

/// Row lookup in a trainable symbol table.
pub fn embed_symbols(tape: &mut Tape, ids: &[usize], table: Var) -> Result<Var> {
    let size = tape.value(table).rows();
    if let Some(&id) = ids.iter().find(|&&i| i >= size) {
        return Err(Error::Vocabulary { id, size });
    }
    tape.gather_rows(table, ids)
}

/// Splits an R×R raster into (R/ρ)² row-major patches, each flattened row-major.
pub fn patchify(raster: &[Vec<f64>], patch: usize) -> Result<Tensor> {
    let r = raster.len();
    if patch == 0 || !r.is_multiple_of(patch) || raster.iter().any(|row| row.len() != r) {
        return Err(Error::Config(format!(
            "raster of {r} rows is not a square divisible by patch size {patch}"
        )));
    }
    let per_side = r / patch;
    let mut data = Vec::with_capacity(r * r);
    for pr in 0..per_side {
        for pc in 0..per_side {
            for y in 0..patch {
                data.extend_from_slice(&raster[pr * patch + y][pc * patch..(pc + 1) * patch]);
            }
        }
    }
    Tensor::matrix(per_side * per_side, patch * patch, data)
}

/// Linear projection of raster patches into visual tokens.
pub fn encode_scene(tape: &mut Tape, raster: &[Vec<f64>], patch: usize, proj: Var) -> Result<Var> {
    let patches = patchify(raster, patch)?;
    let x = tape.constant(patches);
    tape.matmul(x, proj)
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Input(format!("non-finite {what}: {values:?}")))
    }
}

/// Target point (meters, ego frame) → one token row.
pub fn project_point(
    tape: &mut Tape,
    point: [f64; 2],
    mlp: &Mlp2,
    norm: &Normalization,
) -> Result<Var> {
    check_finite(&point, "target point")?;
    let x = Tensor::matrix(
        1,
        2,
        vec![point[0] / norm.position, point[1] / norm.position],
    )?;
    let x = tape.constant(x);
    mlp.apply(tape, x)
}

pub fn project_ego(
    tape: &mut Tape,
    ego: &EgoState,
    mlp: &Mlp2,
    norm: &Normalization,
) -> Result<Var> {
    ego.validate()?;
    let x = tape.constant(Tensor::matrix(
        1,
        EGO_FEATURES,
        ego.features(norm).to_vec(),
    )?);
    mlp.apply(tape, x)
}

/// Sinusoidal flow-time embedding: sin(π·2^k·τ), cos(π·2^k·τ) for k = 0..3.
/// The k = 0 pair alone is injective on [0, 1].
pub fn time_embedding(tau: f64) -> [f64; TIME_EMBED_DIM] {
    let mut e = [0.0; TIME_EMBED_DIM];
    for k in 0..TIME_EMBED_DIM / 2 {
        let w = PI * (1u32 << k) as f64 * tau;
        e[2 * k] = w.sin();
        e[2 * k + 1] = w.cos();
    }
    e
}

/// Constant preprocessor inputs: each path row / speed value followed by e(τ).
pub fn action_inputs(x: &NoisyActionState) -> Result<(Tensor, Tensor)> {
    x.validate()?;
    let e = time_embedding(x.tau);
    let mut path = Vec::with_capacity(N_WAYPOINTS * (2 + TIME_EMBED_DIM));
    for k in 0..N_WAYPOINTS {
        path.extend_from_slice(x.path.row(k));
        path.extend_from_slice(&e);
    }
    let mut speed = Vec::with_capacity(N_SPEEDS * (1 + TIME_EMBED_DIM));
    for q in 0..N_SPEEDS {
        speed.push(x.speed.data()[q]);
        speed.extend_from_slice(&e);
    }
    Ok((
        Tensor::matrix(N_WAYPOINTS, 2 + TIME_EMBED_DIM, path)?,
        Tensor::matrix(N_SPEEDS, 1 + TIME_EMBED_DIM, speed)?,
    ))
}

/// 30 noisy action tokens: 20 path tokens then 10 speed tokens.
pub fn make_action_tokens(
    tape: &mut Tape,
    x: &NoisyActionState,
    path_mlp: &Mlp2,
    speed_mlp: &Mlp2,
) -> Result<Var> {
    let (path_in, speed_in) = action_inputs(x)?;
    let p = tape.constant(path_in);
    let p = path_mlp.apply(tape, p)?;
    let s = tape.constant(speed_in);
    let s = speed_mlp.apply(tape, s)?;
    tape.concat_rows(&[p, s])
}

/// Fixed group order of the sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Goal = 0,
    Image = 1,
    TargetPoint = 2,
    Command = 3,
    EgoState = 4,
    Action = 5,
}

pub struct SequenceGroups {
    pub goal: Var,
    pub image: Var,
    pub target_point: Var,
    pub command: Var,
    pub ego_state: Var,
    /// `None` for language-only passes.
    pub action: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct InterleavedSequence {
    pub embeddings: Var,
    pub tags: Vec<TokenType>,
    pub spans: [Range<usize>; 6],
}

impl InterleavedSequence {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn span(&self, g: Group) -> Range<usize> {
        self.spans[g as usize].clone()
    }
}

/// Concatenate the groups in the order G, I, P, U, S, A and tag every row.
pub fn interleave(tape: &mut Tape, groups: &SequenceGroups) -> Result<InterleavedSequence> {
    let ordered: Vec<(Option<Var>, TokenType)> = vec![
        (Some(groups.goal), TokenType::Goal),
        (Some(groups.image), TokenType::Image),
        (Some(groups.target_point), TokenType::TargetPoint),
        (Some(groups.command), TokenType::Command),
        (Some(groups.ego_state), TokenType::EgoState),
        (groups.action, TokenType::PathAction),
    ];
    let width = ordered
        .iter()
        .filter_map(|(v, _)| *v)
        .map(|v| tape.value(v))
        .find(|t| t.rows() > 0)
        .map(Tensor::cols)
        .unwrap_or(0);
    let mut tags = Vec::new();
    let mut spans: [Range<usize>; 6] = Default::default();
    let mut vars = Vec::new();
    for (g, (v, tag)) in ordered.iter().enumerate() {
        let start = tags.len();
        if let Some(v) = v {
            let t = tape.value(*v);
            if t.rows() > 0 && t.cols() != width {
                return Err(Error::Dimension(format!(
                    "group {g} has width {} but the sequence width is {width}",
                    t.cols()
                )));
            }
            let rows = t.rows();
            if *tag == TokenType::PathAction {
                if rows != N_ACTION_TOKENS {
                    return Err(Error::Dimension(format!(
                        "action group needs {N_ACTION_TOKENS} rows, got {rows}"
                    )));
                }
                tags.extend(std::iter::repeat_n(TokenType::PathAction, N_WAYPOINTS));
                tags.extend(std::iter::repeat_n(TokenType::SpeedAction, N_SPEEDS));
            } else {
                tags.extend(std::iter::repeat_n(*tag, rows));
            }
            vars.push(*v);
        }
        spans[g] = start..tags.len();
    }
    let embeddings = tape.concat_rows(&vars)?;
    Ok(InterleavedSequence {
        embeddings,
        tags,
        spans,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSets {
    /// Goal, image and command positions, ascending.
    pub vl: Vec<usize>,
    /// Target-point, ego-state and action positions, ascending.
    pub act: Vec<usize>,
    /// Noisy action positions only (a subset of `act`).
    pub action: Vec<usize>,
}

pub fn index_sets(tags: &[TokenType]) -> IndexSets {
    let mut s = IndexSets {
        vl: Vec::new(),
        act: Vec::new(),
        action: Vec::new(),
    };
    for (i, t) in tags.iter().enumerate() {
        if t.is_vision_language() {
            s.vl.push(i);
        } else {
            s.act.push(i);
            if t.is_noisy_action() {
                s.action.push(i);
            }
        }
    }
    s
}
