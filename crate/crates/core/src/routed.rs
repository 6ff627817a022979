//! Shared self-attention followed by statically routed expert FFNs.
//!
//! Every layer runs one attention block over the whole sequence, then sends
//! each token's normalized state to the vision-language expert (0) or the
//! trajectory expert (1) by token type, and scatters the outputs back to their
//! original positions as a residual.

use crate::error::{Error, Result};
use crate::numerics::{ParamId, Tape, Tensor, Var, MASKED};
use crate::tokenizer::{IndexSets, TokenType};

pub const VL_EXPERT: usize = 0;
pub const TRAJECTORY_EXPERT: usize = 1;

#[derive(Clone, Copy, Debug)]
pub struct ExpertParams {
    pub gate: ParamId,
    pub up: ParamId,
    pub down: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct RoutedLayerParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln_attn: ParamId,
    pub ln_ffn: ParamId,
    pub experts: [ExpertParams; 2],
}

/// How tokens are assigned to experts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Routing {
    /// Goal/image/command → expert 0, everything else → expert 1.
    TokenType,
    /// Every token uses one expert.
    All(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// Causal everywhere except a bidirectional block among noisy action tokens.
    Hybrid,
    /// As `Hybrid`, but action tokens see only each other.
    Decoupled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask(pub Tensor);

impl AttentionMask {
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.0.get(i, j) == 0.0
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

pub fn build_mask(tags: &[TokenType], mode: MaskMode) -> Result<AttentionMask> {
    let n = tags.len();
    if n == 0 {
        return Err(Error::Input(
            "cannot build a mask for an empty sequence".into(),
        ));
    }
    let mut m = Tensor::full(&[n, n], MASKED);
    for i in 0..n {
        let row_action = tags[i].is_noisy_action();
        for j in 0..n {
            let col_action = tags[j].is_noisy_action();
            let allowed = if row_action && col_action {
                true
            } else if row_action && mode == MaskMode::Decoupled {
                false
            } else {
                j <= i
            };
            if allowed {
                m.set(i, j, 0.0);
            }
        }
    }
    Ok(AttentionMask(m))
}

/// Token positions handled by each expert, ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Routes {
    pub expert: [Vec<usize>; 2],
}

impl Routes {
    pub fn new(sets: &IndexSets, routing: Routing) -> Self {
        match routing {
            Routing::TokenType => Self {
                expert: [sets.vl.clone(), sets.act.clone()],
            },
            Routing::All(e) => {
                let mut all: Vec<usize> = sets.vl.iter().chain(&sets.act).copied().collect();
                all.sort_unstable();
                let mut expert = [Vec::new(), Vec::new()];
                expert[e] = all;
                Self { expert }
            }
        }
    }
}

/// `H + Attn(LN(H))·W_O` with multi-head masked attention.
pub fn shared_attention(
    tape: &mut Tape,
    h: Var,
    layer: &RoutedLayerParams,
    mask: &AttentionMask,
    heads: usize,
) -> Result<Var> {
    let d = tape.value(h).cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "model width {d} is not divisible by {heads} heads"
        )));
    }
    let g = tape.param(layer.ln_attn);
    let x = tape.layer_norm(h, g)?;
    let wq = tape.param(layer.wq);
    let wk = tape.param(layer.wk);
    let wv = tape.param(layer.wv);
    let wo = tape.param(layer.wo);
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let a = tape.attention(q, k, v, mask.tensor(), heads)?;
    let o = tape.matmul(a, wo)?;
    tape.add(h, o)
}

pub fn route_gather(tape: &mut Tape, h: Var, idx: &[usize]) -> Result<Var> {
    tape.gather_rows(h, idx)
}

/// `[silu(X·W_gate) ⊙ (X·W_up)]·W_down`
pub fn expert_ffn(tape: &mut Tape, x: Var, e: &ExpertParams) -> Result<Var> {
    let wg = tape.param(e.gate);
    let wu = tape.param(e.up);
    let wd = tape.param(e.down);
    let g = tape.matmul(x, wg)?;
    let g = tape.silu(g);
    let u = tape.matmul(x, wu)?;
    let gu = tape.mul(g, u)?;
    tape.matmul(gu, wd)
}

/// Residual scatter of both expert outputs back into sequence order.
pub fn merge_back(
    tape: &mut Tape,
    h: Var,
    vl_out: Var,
    act_out: Var,
    vl_idx: &[usize],
    act_idx: &[usize],
) -> Result<Var> {
    tape.merge(h, &[(vl_out, vl_idx), (act_out, act_idx)])
}

pub fn layer_forward(
    tape: &mut Tape,
    h: Var,
    layer: &RoutedLayerParams,
    mask: &AttentionMask,
    routes: &Routes,
    heads: usize,
) -> Result<Var> {
    let h_attn = shared_attention(tape, h, layer, mask, heads)?;
    let g = tape.param(layer.ln_ffn);
    // LN is per row, so normalizing before gathering equals normalizing each routed subset.
    let normed = tape.layer_norm(h_attn, g)?;
    let mut outs = Vec::with_capacity(2);
    for (e, idx) in routes.expert.iter().enumerate() {
        let x = route_gather(tape, normed, idx)?;
        let y = if idx.is_empty() {
            x
        } else {
            expert_ffn(tape, x, &layer.experts[e])?
        };
        outs.push(y);
    }
    merge_back(
        tape,
        h_attn,
        outs[0],
        outs[1],
        &routes.expert[0],
        &routes.expert[1],
    )
}

/// Runs the layer stack from `H⁽⁰⁾` and returns `H⁽ᴸ⁾`.
pub fn model_forward(
    tape: &mut Tape,
    h0: Var,
    layers: &[RoutedLayerParams],
    mask: &AttentionMask,
    routes: &Routes,
    heads: usize,
) -> Result<Var> {
    let mut h = h0;
    for layer in layers {
        h = layer_forward(tape, h, layer, mask, routes, heads)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{layer_norm, masked_softmax, matmul, silu, ParamStore};
    use crate::tokenizer::index_sets;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const VL: TokenType = TokenType::Image;
    const ACT: TokenType = TokenType::PathAction;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect(),
        )
        .unwrap()
    }

    fn layer_store(
        rng: &mut ChaCha8Rng,
        d: usize,
        ff: usize,
        n_layers: usize,
    ) -> (ParamStore, Vec<RoutedLayerParams>) {
        let mut s = ParamStore::new();
        let mut layers = Vec::new();
        for l in 0..n_layers {
            let sc = 1.0 / (d as f64).sqrt();
            let mut add = |name: &str, shape: &[usize], scale: f64, rng: &mut ChaCha8Rng| {
                s.add(format!("l{l}.{name}"), rand_tensor(rng, shape, scale))
                    .unwrap()
            };
            let wq = add("wq", &[d, d], sc, rng);
            let wk = add("wk", &[d, d], sc, rng);
            let wv = add("wv", &[d, d], sc, rng);
            let wo = add("wo", &[d, d], sc, rng);
            let ln_attn = add("ln_attn", &[d], 1.0, rng);
            let ln_ffn = add("ln_ffn", &[d], 1.0, rng);
            let mut ex = |e: usize, rng: &mut ChaCha8Rng| ExpertParams {
                gate: add(&format!("e{e}.gate"), &[d, ff], sc, rng),
                up: add(&format!("e{e}.up"), &[d, ff], sc, rng),
                down: add(
                    &format!("e{e}.down"),
                    &[ff, d],
                    1.0 / (ff as f64).sqrt(),
                    rng,
                ),
            };
            let experts = [ex(0, rng), ex(1, rng)];
            layers.push(RoutedLayerParams {
                wq,
                wk,
                wv,
                wo,
                ln_attn,
                ln_ffn,
                experts,
            });
        }
        (s, layers)
    }

    fn tie_experts(s: &mut ParamStore, layers: &[RoutedLayerParams]) {
        for l in layers {
            let [e0, e1] = l.experts;
            for (a, b) in [(e0.gate, e1.gate), (e0.up, e1.up), (e0.down, e1.down)] {
                let v = s.value(a).clone();
                s.set_value(b, v).unwrap();
            }
        }
    }

    /// Straight-line evaluation of the attention block from plain tensor kernels.
    fn attention_oracle(
        s: &ParamStore,
        h: &Tensor,
        l: &RoutedLayerParams,
        mask: &Tensor,
        heads: usize,
    ) -> Tensor {
        let x = layer_norm(h, s.value(l.ln_attn)).unwrap();
        let q = matmul(&x, s.value(l.wq)).unwrap();
        let k = matmul(&x, s.value(l.wk)).unwrap();
        let v = matmul(&x, s.value(l.wv)).unwrap();
        let (n, d) = (h.rows(), h.cols());
        let hd = d / heads;
        let mut concat = Tensor::zeros(&[n, d]);
        for head in 0..heads {
            let cols = |t: &Tensor| {
                let mut o = Tensor::zeros(&[n, hd]);
                for i in 0..n {
                    for c in 0..hd {
                        o.set(i, c, t.get(i, head * hd + c));
                    }
                }
                o
            };
            let (qh, kh, vh) = (cols(&q), cols(&k), cols(&v));
            let scores = matmul(&qh, &kh.transpose())
                .unwrap()
                .map(|z| z / (hd as f64).sqrt());
            let p = masked_softmax(&scores, mask).unwrap();
            let o = matmul(&p, &vh).unwrap();
            for i in 0..n {
                for c in 0..hd {
                    concat.set(i, head * hd + c, o.get(i, c));
                }
            }
        }
        let o = matmul(&concat, s.value(l.wo)).unwrap();
        h.zip_map(&o, |a, b| a + b).unwrap()
    }

    fn ffn_oracle(s: &ParamStore, x: &Tensor, e: &ExpertParams) -> Tensor {
        let g = silu(&matmul(x, s.value(e.gate)).unwrap());
        let u = matmul(x, s.value(e.up)).unwrap();
        matmul(&g.zip_map(&u, |a, b| a * b).unwrap(), s.value(e.down)).unwrap()
    }

    /// Per-index loop: position i takes the expert chosen by its own tag.
    fn layer_oracle(
        s: &ParamStore,
        h: &Tensor,
        l: &RoutedLayerParams,
        tags: &[TokenType],
        heads: usize,
    ) -> Tensor {
        let mask = build_mask(tags, MaskMode::Hybrid).unwrap();
        let ha = attention_oracle(s, h, l, mask.tensor(), heads);
        let normed = layer_norm(&ha, s.value(l.ln_ffn)).unwrap();
        let mut out = ha.clone();
        for (i, t) in tags.iter().enumerate() {
            let e = if t.is_vision_language() { 0 } else { 1 };
            let row = Tensor::matrix(1, h.cols(), normed.row(i).to_vec()).unwrap();
            let y = ffn_oracle(s, &row, &l.experts[e]);
            for c in 0..h.cols() {
                out.set(i, c, ha.get(i, c) + y.get(0, c));
            }
        }
        out
    }

    #[test]
    fn pure_causal_mask() {
        let m = build_mask(&[VL, VL, VL], MaskMode::Hybrid).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.allowed(i, j), j <= i);
            }
        }
    }

    #[test]
    fn mixed_mask_entries() {
        let m = build_mask(&[VL, VL, ACT, ACT], MaskMode::Hybrid).unwrap();
        assert_eq!(m.tensor().get(2, 3), 0.0);
        assert_eq!(m.tensor().get(3, 2), 0.0);
        assert_eq!(m.tensor().get(1, 2), MASKED);
        assert_eq!(m.tensor().get(1, 3), MASKED);
    }

    #[test]
    fn all_action_mask_fully_allowed() {
        let tags = [ACT, TokenType::SpeedAction, ACT];
        let m = build_mask(&tags, MaskMode::Hybrid).unwrap();
        assert!(m.tensor().data().iter().all(|&v| v == 0.0));
        assert!(build_mask(&[], MaskMode::Hybrid).is_err());
    }

    #[test]
    fn decoupled_mask_hides_context_from_actions() {
        let m = build_mask(&[VL, TokenType::EgoState, ACT, ACT], MaskMode::Decoupled).unwrap();
        assert!(!m.allowed(2, 0) && !m.allowed(3, 1));
        assert!(m.allowed(2, 3) && m.allowed(3, 2) && m.allowed(1, 0));
    }

    #[test]
    fn single_token_attention_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s, layers) = layer_store(&mut rng, 8, 16, 1);
        let h = rand_tensor(&mut rng, &[1, 8], 1.0);
        let mask = build_mask(&[VL], MaskMode::Hybrid).unwrap();
        let mut tape = Tape::new(&s);
        let hv = tape.constant(h.clone());
        let out = shared_attention(&mut tape, hv, &layers[0], &mask, 2).unwrap();
        let l = &layers[0];
        let x = layer_norm(&h, s.value(l.ln_attn)).unwrap();
        let expect = matmul(&matmul(&x, s.value(l.wv)).unwrap(), s.value(l.wo)).unwrap();
        for (a, (b, c)) in tape
            .value(out)
            .data()
            .iter()
            .zip(h.data().iter().zip(expect.data()))
        {
            assert!((a - (b + c)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_output_projection_is_residual_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut s, layers) = layer_store(&mut rng, 8, 16, 1);
        s.set_value(layers[0].wo, Tensor::zeros(&[8, 8])).unwrap();
        let h = rand_tensor(&mut rng, &[4, 8], 1.0);
        let mask = build_mask(&[VL, VL, ACT, ACT], MaskMode::Hybrid).unwrap();
        let mut tape = Tape::new(&s);
        let hv = tape.constant(h.clone());
        let out = shared_attention(&mut tape, hv, &layers[0], &mask, 2).unwrap();
        assert_eq!(tape.value(out), &h);
        assert!(matches!(
            shared_attention(&mut tape, hv, &layers[0], &mask, 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn attention_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (s, layers) = layer_store(&mut rng, 8, 16, 1);
        let h = rand_tensor(&mut rng, &[5, 8], 1.0);
        let tags = [VL, TokenType::TargetPoint, VL, ACT, ACT];
        let mask = build_mask(&tags, MaskMode::Hybrid).unwrap();
        let mut tape = Tape::new(&s);
        let hv = tape.constant(h.clone());
        let out = shared_attention(&mut tape, hv, &layers[0], &mask, 2).unwrap();
        let oracle = attention_oracle(&s, &h, &layers[0], mask.tensor(), 2);
        for (a, b) in tape.value(out).data().iter().zip(oracle.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gather_edge_cases() {
        let s = ParamStore::new();
        let mut tape = Tape::new(&s);
        let h = tape.constant(Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let all = route_gather(&mut tape, h, &[0, 1, 2]).unwrap();
        assert_eq!(tape.value(all), tape.value(h));
        let none = route_gather(&mut tape, h, &[]).unwrap();
        assert_eq!(tape.value(none).rows(), 0);
        assert!(matches!(
            route_gather(&mut tape, h, &[3]),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn gather_then_merge_round_trip() {
        let s = ParamStore::new();
        let mut tape = Tape::new(&s);
        let h = tape.constant(Tensor::matrix(4, 2, (0..8).map(f64::from).collect()).unwrap());
        let (vl, act) = ([0usize, 2], [1usize, 3]);
        let a = route_gather(&mut tape, h, &vl).unwrap();
        let b = route_gather(&mut tape, h, &act).unwrap();
        let zero = tape.constant(Tensor::zeros(&[4, 2]));
        let merged = merge_back(&mut tape, zero, a, b, &vl, &act).unwrap();
        assert_eq!(tape.value(merged), tape.value(h));
    }

    #[test]
    fn expert_ffn_zero_cases_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut s, layers) = layer_store(&mut rng, 8, 16, 1);
        let e = layers[0].experts[0];
        let x = rand_tensor(&mut rng, &[2, 8], 1.0);
        {
            let mut tape = Tape::new(&s);
            let z = tape.constant(Tensor::zeros(&[2, 8]));
            let y = expert_ffn(&mut tape, z, &e).unwrap();
            assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
            let xv = tape.constant(x.clone());
            let y = expert_ffn(&mut tape, xv, &e).unwrap();
            let oracle = ffn_oracle(&s, &x, &e);
            for (a, b) in tape.value(y).data().iter().zip(oracle.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        s.set_value(e.down, Tensor::zeros(&[16, 8])).unwrap();
        let mut tape = Tape::new(&s);
        let xv = tape.constant(x);
        let y = expert_ffn(&mut tape, xv, &e).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn merge_back_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = ParamStore::new();
        let mut tape = Tape::new(&s);
        let h = rand_tensor(&mut rng, &[5, 3], 1.0);
        let hv = tape.constant(h.clone());
        let (vl, act) = (vec![0, 3], vec![1, 2, 4]);
        let zv = tape.constant(Tensor::zeros(&[2, 3]));
        let za = tape.constant(Tensor::zeros(&[3, 3]));
        let m = merge_back(&mut tape, hv, zv, za, &vl, &act).unwrap();
        assert_eq!(tape.value(m), &h);

        let xv = rand_tensor(&mut rng, &[2, 3], 1.0);
        let xa = rand_tensor(&mut rng, &[3, 3], 1.0);
        let (v1, v2) = (tape.constant(xv.clone()), tape.constant(xa.clone()));
        let m = merge_back(&mut tape, hv, v1, v2, &vl, &act).unwrap();
        let mut oracle = h.clone();
        for i in 0..5 {
            let (src, rank) = match vl.iter().position(|&p| p == i) {
                Some(r) => (&xv, r),
                None => (&xa, act.iter().position(|&p| p == i).unwrap()),
            };
            for c in 0..3 {
                oracle.set(i, c, h.get(i, c) + src.get(rank, c));
            }
        }
        assert_eq!(tape.value(m), &oracle);
        assert!(merge_back(&mut tape, hv, v2, v1, &vl, &act).is_err());
    }

    #[test]
    fn tied_experts_equal_unrouted_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (mut s, layers) = layer_store(&mut rng, 8, 16, 1);
        tie_experts(&mut s, &layers);
        let tags = [
            TokenType::Goal,
            VL,
            TokenType::TargetPoint,
            TokenType::Command,
            ACT,
            TokenType::SpeedAction,
        ];
        let h = rand_tensor(&mut rng, &[6, 8], 1.0);
        let mask = build_mask(&tags, MaskMode::Hybrid).unwrap();
        let sets = index_sets(&tags);
        let mut tape = Tape::new(&s);
        let hv = tape.constant(h);
        let routed = layer_forward(
            &mut tape,
            hv,
            &layers[0],
            &mask,
            &Routes::new(&sets, Routing::TokenType),
            2,
        )
        .unwrap();
        let plain = layer_forward(
            &mut tape,
            hv,
            &layers[0],
            &mask,
            &Routes::new(&sets, Routing::All(0)),
            2,
        )
        .unwrap();
        assert_eq!(tape.value(routed), tape.value(plain));
    }

    #[test]
    fn all_vl_sequence_leaves_trajectory_expert_without_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (s, layers) = layer_store(&mut rng, 8, 16, 1);
        let tags = [TokenType::Goal, VL, VL, TokenType::Command];
        let mask = build_mask(&tags, MaskMode::Hybrid).unwrap();
        let routes = Routes::new(&index_sets(&tags), Routing::TokenType);
        let mut tape = Tape::new(&s);
        let hv = tape.constant(rand_tensor(&mut rng, &[4, 8], 1.0));
        let out = layer_forward(&mut tape, hv, &layers[0], &mask, &routes, 2).unwrap();
        let loss = tape
            .squared_error(out, &Tensor::zeros(&[4, 8]), 1.0)
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        let e1 = layers[0].experts[1];
        for id in [e1.gate, e1.up, e1.down] {
            assert!(grads
                .get(id)
                .is_none_or(|g| g.data().iter().all(|&v| v == 0.0)));
        }
        assert!(grads.get(layers[0].experts[0].gate).is_some());
    }

    #[test]
    fn mixed_layer_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (s, layers) = layer_store(&mut rng, 8, 16, 1);
        let tags = [
            TokenType::Goal,
            VL,
            TokenType::TargetPoint,
            TokenType::Command,
            TokenType::EgoState,
            ACT,
        ];
        let h = rand_tensor(&mut rng, &[6, 8], 1.0);
        let mask = build_mask(&tags, MaskMode::Hybrid).unwrap();
        let routes = Routes::new(&index_sets(&tags), Routing::TokenType);
        let mut tape = Tape::new(&s);
        let hv = tape.constant(h.clone());
        let out = layer_forward(&mut tape, hv, &layers[0], &mask, &routes, 2).unwrap();
        let oracle = layer_oracle(&s, &h, &layers[0], &tags, 2);
        for (a, b) in tape.value(out).data().iter().zip(oracle.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_layers_is_identity_and_prefix_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (s, layers) = layer_store(&mut rng, 8, 16, 3);
        let tags = [
            TokenType::Goal,
            VL,
            VL,
            TokenType::EgoState,
            ACT,
            ACT,
            TokenType::SpeedAction,
        ];
        let mask = build_mask(&tags, MaskMode::Hybrid).unwrap();
        let routes = Routes::new(&index_sets(&tags), Routing::TokenType);
        let h = rand_tensor(&mut rng, &[7, 8], 1.0);
        let mut h2 = h.clone();
        for i in 4..7 {
            for c in 0..8 {
                h2.set(i, c, rng.gen_range(-3.0..3.0));
            }
        }
        let mut tape = Tape::new(&s);
        let a = tape.constant(h.clone());
        let b = tape.constant(h2);
        let id = model_forward(&mut tape, a, &[], &mask, &routes, 2).unwrap();
        assert_eq!(tape.value(id), &h);
        let ya = model_forward(&mut tape, a, &layers, &mask, &routes, 2).unwrap();
        let yb = model_forward(&mut tape, b, &layers, &mask, &routes, 2).unwrap();
        for i in 0..4 {
            assert_eq!(tape.value(ya).row(i), tape.value(yb).row(i));
        }
        assert_ne!(tape.value(ya).row(5), tape.value(yb).row(5));
    }
}
