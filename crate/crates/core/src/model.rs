//! Parameter layout, initialization and the full sequence forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowHeadParams, NoisyActionState};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::routed::{
    build_mask, model_forward, ExpertParams, MaskMode, RoutedLayerParams, Routes, Routing,
    TRAJECTORY_EXPERT, VL_EXPERT,
};
use crate::synth::DrivingSample;
use crate::tokenizer::{
    embed_symbols, encode_scene, index_sets, interleave, make_action_tokens, project_ego,
    project_point, IndexSets, InterleavedSequence, Mlp2, Normalization, SequenceGroups,
    SymbolVocab, EGO_FEATURES, PATCH_SIZE, TIME_EMBED_DIM,
};

/// Architecture variants used by the ablation harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    /// Every token goes through the VL expert.
    SharedFfn,
    /// Action tokens attend only to each other.
    Decoupled,
    /// Every token goes through the trajectory expert.
    SingleExpert,
    /// Direct regression of the trajectory from a zero action state.
    RegressionHead,
}

impl Variant {
    pub const ABLATIONS: [Variant; 4] = [
        Variant::SharedFfn,
        Variant::Decoupled,
        Variant::SingleExpert,
        Variant::RegressionHead,
    ];

    pub fn routing(self) -> Routing {
        match self {
            Variant::SharedFfn => Routing::All(VL_EXPERT),
            Variant::SingleExpert => Routing::All(TRAJECTORY_EXPERT),
            _ => Routing::TokenType,
        }
    }

    pub fn mask_mode(self) -> MaskMode {
        match self {
            Variant::Decoupled => MaskMode::Decoupled,
            _ => MaskMode::Hybrid,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::SharedFfn => "shared-ffn",
            Variant::Decoupled => "decoupled",
            Variant::SingleExpert => "single-expert",
            Variant::RegressionHead => "regression-head",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        [Variant::Full]
            .into_iter()
            .chain(Variant::ABLATIONS)
            .find(|v| v.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub max_positions: usize,
    pub variant: Variant,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            layers: 4,
            heads: 4,
            d_ff: 128,
            vocab: crate::tokenizer::VOCAB_SIZE,
            max_positions: 72,
            variant: Variant::Full,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || !self.d.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "d = {} must be a positive multiple of 4",
                self.d
            )));
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d = {} is not divisible by heads = {}",
                self.d, self.heads
            )));
        }
        if self.d_ff == 0 {
            return Err(Error::Config("d_ff must be positive".into()));
        }
        if self.max_positions == 0 {
            return Err(Error::Config("max_positions must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter handles, grouped by component.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub symbols: ParamId,
    pub patch: ParamId,
    pub positions: ParamId,
    pub point: Mlp2,
    pub ego: Mlp2,
    pub act_path: Mlp2,
    pub act_speed: Mlp2,
    pub layers: Vec<RoutedLayerParams>,
    pub lm_head: ParamId,
    pub flow: FlowHeadParams,
}

impl ModelParams {
    pub fn expert(&self, e: usize) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| {
                let x = l.experts[e];
                [x.gate, x.up, x.down]
            })
            .collect()
    }

    pub fn attention(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| [l.wq, l.wk, l.wv, l.wo, l.ln_attn, l.ln_ffn])
            .collect()
    }

    /// ψ_A, the condition projectors and both flow heads.
    pub fn flow_group(&self) -> Vec<ParamId> {
        let f = &self.flow;
        vec![
            f.psi_a, f.psi_vl, f.psi_s, f.psi_nav, f.psi_p, f.path.w1, f.path.w2, f.speed.w1,
            f.speed.w2,
        ]
    }
}

pub struct Model {
    pub config: ModelConfig,
    pub vocab: SymbolVocab,
    pub norm: Normalization,
    pub store: ParamStore,
    pub ids: ModelParams,
}

/// Output of one pass over the interleaved sequence.
pub struct Forward {
    pub hidden: Var,
    pub seq: InterleavedSequence,
    pub sets: IndexSets,
    /// Goal and command symbol embeddings, for the navigation condition.
    pub nav: Var,
    /// Sequence positions of the text tokens that follow the command.
    pub text_positions: Vec<usize>,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                std * z
            })
            .collect();
        self.store.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Result<ParamId> {
        self.normal(name, &[fan_in, fan_out], gain / (fan_in as f64).sqrt())
    }

    fn ones(&mut self, name: &str, d: usize) -> Result<ParamId> {
        self.store.add(name, Tensor::full(&[d], 1.0))
    }

    fn mlp(
        &mut self,
        name: &str,
        fan_in: usize,
        hidden: usize,
        out: usize,
        gain: f64,
    ) -> Result<Mlp2> {
        Ok(Mlp2 {
            w1: self.linear(&format!("{name}.w1"), fan_in, hidden, 1.0)?,
            w2: self.linear(&format!("{name}.w2"), hidden, out, gain)?,
        })
    }
}

impl Model {
    pub fn new(config: ModelConfig, vocab: SymbolVocab) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab {
            return Err(Error::Config(format!(
                "vocabulary has {} symbols but the config says {}",
                vocab.len(),
                config.vocab
            )));
        }
        let (d, ff, v) = (config.d, config.d_ff, config.vocab);
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(config.init_seed),
        };
        let symbols = init.normal("embed.symbols", &[v, d], 0.5)?;
        let patch = init.linear("embed.patch", PATCH_SIZE * PATCH_SIZE, d, 1.0)?;
        let positions = init.normal("embed.pos", &[config.max_positions, d], 0.1)?;
        let point = init.mlp("tok.point", 2, d, d, 1.0)?;
        let ego = init.mlp("tok.ego", EGO_FEATURES, d, d, 1.0)?;
        let act_path = init.mlp("tok.act_path", 2 + TIME_EMBED_DIM, d, d, 1.0)?;
        let act_speed = init.mlp("tok.act_speed", 1 + TIME_EMBED_DIM, d, d, 1.0)?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("layer{l}");
            let wq = init.linear(&format!("{p}.attn.wq"), d, d, 1.0)?;
            let wk = init.linear(&format!("{p}.attn.wk"), d, d, 1.0)?;
            let wv = init.linear(&format!("{p}.attn.wv"), d, d, 1.0)?;
            let wo = init.linear(&format!("{p}.attn.wo"), d, d, 0.5)?;
            let ln_attn = init.ones(&format!("{p}.ln_attn"), d)?;
            let ln_ffn = init.ones(&format!("{p}.ln_ffn"), d)?;
            let mut experts = Vec::with_capacity(2);
            for e in 0..2 {
                experts.push(ExpertParams {
                    gate: init.linear(&format!("{p}.expert{e}.gate"), d, ff, 1.0)?,
                    up: init.linear(&format!("{p}.expert{e}.up"), d, ff, 1.0)?,
                    down: init.linear(&format!("{p}.expert{e}.down"), ff, d, 0.5)?,
                });
            }
            layers.push(RoutedLayerParams {
                wq,
                wk,
                wv,
                wo,
                ln_attn,
                ln_ffn,
                experts: [experts[0], experts[1]],
            });
        }
        let lm_head = init.linear("lm_head", d, v, 1.0)?;
        let (dc, ds) = (d / 2, d / 4);
        let head_in = dc + dc + 3 * ds;
        let flow = FlowHeadParams {
            psi_a: init.linear("flow.psi_a", d, dc, 1.0)?,
            psi_vl: init.linear("flow.psi_vl", d, dc, 1.0)?,
            psi_s: init.linear("flow.psi_s", EGO_FEATURES, ds, 1.0)?,
            psi_nav: init.linear("flow.psi_nav", d, ds, 1.0)?,
            psi_p: init.linear("flow.psi_p", 2, ds, 1.0)?,
            path: init.mlp("flow.path", head_in, d, 2, 0.5)?,
            speed: init.mlp("flow.speed", head_in, d, 1, 0.5)?,
        };
        let ids = ModelParams {
            symbols,
            patch,
            positions,
            point,
            ego,
            act_path,
            act_speed,
            layers,
            lm_head,
            flow,
        };
        Ok(Self {
            config,
            vocab,
            norm: Normalization::default(),
            store,
            ids,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// One pass over `[G, I, P, command ⧺ text, S, A?]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        sample: &DrivingSample,
        text: &[usize],
        action: Option<&NoisyActionState>,
    ) -> Result<Forward> {
        let ids = &self.ids;
        let table = tape.param(ids.symbols);
        let goal = embed_symbols(tape, &sample.goal, table)?;
        let proj = tape.param(ids.patch);
        let image = encode_scene(tape, &sample.raster, PATCH_SIZE, proj)?;
        let target_point = project_point(tape, sample.target_point, &ids.point, &self.norm)?;
        let mut u = Vec::with_capacity(1 + text.len());
        u.push(sample.command);
        u.extend_from_slice(text);
        let command = embed_symbols(tape, &u, table)?;
        let ego_state = project_ego(tape, &sample.ego, &ids.ego, &self.norm)?;
        let action = match action {
            Some(x) => Some(make_action_tokens(tape, x, &ids.act_path, &ids.act_speed)?),
            None => None,
        };
        let seq = interleave(
            tape,
            &SequenceGroups {
                goal,
                image,
                target_point,
                command,
                ego_state,
                action,
            },
        )?;
        let n = seq.len();
        if n > self.config.max_positions {
            return Err(Error::Input(format!(
                "sequence of {n} tokens exceeds {} positions",
                self.config.max_positions
            )));
        }
        let pos_table = tape.param(ids.positions);
        let pos = tape.gather_rows(pos_table, &(0..n).collect::<Vec<_>>())?;
        let h0 = tape.add(seq.embeddings, pos)?;
        let mask = build_mask(&seq.tags, self.config.variant.mask_mode())?;
        let sets = index_sets(&seq.tags);
        let routes = Routes::new(&sets, self.config.variant.routing());
        let hidden = model_forward(tape, h0, &ids.layers, &mask, &routes, self.config.heads)?;
        let mut nav_ids = sample.goal.clone();
        nav_ids.push(sample.command);
        let nav = embed_symbols(tape, &nav_ids, table)?;
        let start = seq.span(crate::tokenizer::Group::Command).start + 1;
        let text_positions = (start..start + text.len()).collect();
        Ok(Forward {
            hidden,
            seq,
            sets,
            nav,
            text_positions,
        })
    }

    /// Parameters that belong to a training stage's frozen set.
    pub fn frozen_groups(&self, stage: Stage, freeze_attention: bool) -> Vec<ParamId> {
        let ids = &self.ids;
        // with a single routed FFN that FFN is the whole trunk and stays trainable
        let sole_expert = match self.config.variant.routing() {
            Routing::All(e) => Some(e),
            Routing::TokenType => None,
        };
        let expert = |e: usize| {
            if sole_expert == Some(e) {
                Vec::new()
            } else {
                ids.expert(e)
            }
        };
        match stage {
            Stage::One => {
                let mut v = expert(TRAJECTORY_EXPERT);
                v.extend(ids.flow_group());
                v
            }
            Stage::Two => {
                let mut v = expert(VL_EXPERT);
                v.push(ids.lm_head);
                v.push(ids.symbols);
                if freeze_attention {
                    v.extend(ids.attention());
                }
                v
            }
            Stage::Three => Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
    Three,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::One, Stage::Two, Stage::Three];

    pub fn number(self) -> usize {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
            Stage::Three => 3,
        }
    }

    pub fn trains_language(self) -> bool {
        self != Stage::Two
    }

    pub fn trains_drive(self) -> bool {
        self != Stage::One
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_sample, sample_scenario};
    use crate::tokenizer::{TokenType, BOS};

    fn small() -> Model {
        let cfg = ModelConfig {
            d: 16,
            layers: 2,
            heads: 2,
            d_ff: 24,
            ..ModelConfig::default()
        };
        Model::new(cfg, SymbolVocab::standard()).unwrap()
    }

    #[test]
    fn parameter_names_are_stable() {
        let m = small();
        for name in [
            "embed.symbols",
            "layer1.expert0.gate",
            "layer0.attn.wo",
            "flow.speed.w2",
            "lm_head",
        ] {
            assert!(m.store.id(name).is_some(), "{name}");
        }
        assert_eq!(m.store.value(m.ids.flow.path.w2).shape(), &[16, 2]);
        assert_eq!(m.store.value(m.ids.flow.path.w1).shape(), &[28, 16]);
    }

    #[test]
    fn init_is_seeded() {
        let a = small();
        let b = small();
        let all: Vec<_> = a.store.ids().collect();
        assert_eq!(a.store.value_bytes(&all), b.store.value_bytes(&all));
        let cfg = ModelConfig {
            init_seed: 1,
            ..a.config.clone()
        };
        let c = Model::new(cfg, SymbolVocab::standard()).unwrap();
        assert_ne!(a.store.value_bytes(&all), c.store.value_bytes(&all));
    }

    #[test]
    fn forward_layout() {
        let m = small();
        let vocab = SymbolVocab::standard();
        let s = make_sample(&sample_scenario(5), &vocab);
        let mut tape = Tape::new(&m.store);
        let x = NoisyActionState::zeros(0.3);
        let f = m.forward(&mut tape, &s, &[BOS, 20], Some(&x)).unwrap();
        assert_eq!(f.seq.len(), 3 + 16 + 1 + 3 + 1 + 30);
        assert_eq!(f.text_positions, vec![21, 22]);
        assert!(f
            .text_positions
            .iter()
            .all(|&p| f.seq.tags[p] == TokenType::Command));
        assert_eq!(tape.value(f.hidden).shape(), &[54, 16]);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [Variant::Full].into_iter().chain(Variant::ABLATIONS) {
            assert_eq!(Variant::parse(v.name()), Some(v));
        }
        assert_eq!(Variant::parse("bogus"), None);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = ModelConfig {
            d: 18,
            heads: 4,
            ..ModelConfig::default()
        };
        assert!(matches!(
            Model::new(cfg, SymbolVocab::standard()),
            Err(Error::Config(_))
        ));
    }
}
