//! Flow-matching planner: noisy action states, condition assembly, the path and
//! speed heads, Euler sampling and the training losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Forward, Model, Variant};
use crate::numerics::{second_difference_loss, ParamId, Tape, Tensor, Var};
use crate::synth::DrivingSample;
use crate::tokenizer::{EgoState, Mlp2, Normalization, EGO_FEATURES, N_SPEEDS, N_WAYPOINTS};

/// `X_τ` for both the path (20×2) and speed (10×1) states, in normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyActionState {
    pub path: Tensor,
    pub speed: Tensor,
    pub tau: f64,
}

impl NoisyActionState {
    pub fn new(path: Tensor, speed: Tensor, tau: f64) -> Result<Self> {
        let x = Self { path, speed, tau };
        x.validate()?;
        Ok(x)
    }

    pub fn zeros(tau: f64) -> Self {
        Self {
            path: Tensor::zeros(&[N_WAYPOINTS, 2]),
            speed: Tensor::zeros(&[N_SPEEDS, 1]),
            tau,
        }
    }

    /// Standard normal draw for both states.
    pub fn noise(rng: &mut impl Rng, tau: f64) -> Self {
        Self {
            path: standard_normal(rng, N_WAYPOINTS, 2),
            speed: standard_normal(rng, N_SPEEDS, 1),
            tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.path.shape() != [N_WAYPOINTS, 2] || self.speed.shape() != [N_SPEEDS, 1] {
            return Err(Error::Dimension(format!(
                "action state must be {N_WAYPOINTS}×2 and {N_SPEEDS}×1, got {:?} and {:?}",
                self.path.shape(),
                self.speed.shape()
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Input(format!(
                "flow time τ = {} outside [0, 1]",
                self.tau
            )));
        }
        if !self.path.is_finite() || !self.speed.is_finite() {
            return Err(Error::Input("non-finite action state".into()));
        }
        Ok(())
    }
}

/// Planned trajectory in meters and m/s, ego frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutput {
    pub waypoints: Vec<[f64; 2]>,
    pub speeds: Vec<f64>,
}

impl TrajectoryOutput {
    pub fn from_normalized(path: &Tensor, speed: &Tensor, norm: &Normalization) -> Self {
        Self {
            waypoints: (0..path.rows())
                .map(|k| {
                    [
                        path.get(k, 0) * norm.position,
                        path.get(k, 1) * norm.position,
                    ]
                })
                .collect(),
            speeds: speed.data().iter().map(|v| v * norm.speed).collect(),
        }
    }
}

/// Ground-truth targets of a sample in normalized units.
pub fn normalized_targets(
    sample: &DrivingSample,
    norm: &Normalization,
) -> Result<(Tensor, Tensor)> {
    let path = sample
        .path
        .iter()
        .flat_map(|p| [p[0] / norm.position, p[1] / norm.position])
        .collect();
    let speed = sample.speeds.iter().map(|v| v / norm.speed).collect();
    Ok((
        Tensor::matrix(sample.path.len(), 2, path)?,
        Tensor::matrix(sample.speeds.len(), 1, speed)?,
    ))
}

pub fn standard_normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches length")
}

#[derive(Clone, Debug)]
pub struct FlowCondition {
    pub c_imp: Var,
    pub c_exp: Var,
    pub c_fm: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct FlowHeadParams {
    pub psi_a: ParamId,
    pub psi_vl: ParamId,
    pub psi_s: ParamId,
    pub psi_nav: ParamId,
    pub psi_p: ParamId,
    /// f_ω
    pub path: Mlp2,
    /// f_η
    pub speed: Mlp2,
}

fn same_shape(y: &Tensor, eps: &Tensor) -> Result<()> {
    if y.shape() != eps.shape() {
        return Err(Error::Input(format!(
            "shape mismatch {:?} vs {:?}",
            y.shape(),
            eps.shape()
        )));
    }
    Ok(())
}

/// `X_τ = (1 − τ)ε + τY`
pub fn sample_noisy(y: &Tensor, eps: &Tensor, tau: f64) -> Result<Tensor> {
    same_shape(y, eps)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Input(format!("flow time τ = {tau} outside [0, 1]")));
    }
    y.zip_map(eps, |y, e| (1.0 - tau) * e + tau * y)
}

/// `v* = Y − ε`
pub fn target_field(y: &Tensor, eps: &Tensor) -> Result<Tensor> {
    same_shape(y, eps)?;
    y.zip_map(eps, |y, e| y - e)
}

/// Mean-pooled VL hidden states through ψ_vl.
pub fn implicit_condition(tape: &mut Tape, h_vl: Var, psi_vl: ParamId) -> Result<Var> {
    let pooled = tape.mean_rows(h_vl)?;
    let w = tape.param(psi_vl);
    tape.matmul(pooled, w)
}

/// `[ψ_S(S) ‖ ψ_nav(mean(Z_G, Z_U)) ‖ ψ_P(P)]`
pub fn explicit_condition(
    tape: &mut Tape,
    ego: &EgoState,
    nav: Var,
    point: [f64; 2],
    params: &FlowHeadParams,
    norm: &Normalization,
) -> Result<Var> {
    if tape.value(nav).rows() == 0 {
        return Err(Error::Input(
            "no goal or command tokens for the navigation condition".into(),
        ));
    }
    ego.validate()?;
    let s = tape.constant(Tensor::matrix(
        1,
        EGO_FEATURES,
        ego.features(norm).to_vec(),
    )?);
    let w = tape.param(params.psi_s);
    let cs = tape.matmul(s, w)?;
    let pooled = tape.mean_rows(nav)?;
    let w = tape.param(params.psi_nav);
    let cn = tape.matmul(pooled, w)?;
    let p = tape.constant(Tensor::matrix(
        1,
        2,
        vec![point[0] / norm.position, point[1] / norm.position],
    )?);
    let w = tape.param(params.psi_p);
    let cp = tape.matmul(p, w)?;
    tape.concat_cols(&[cs, cn, cp])
}

pub fn flow_condition(
    model: &Model,
    tape: &mut Tape,
    fwd: &Forward,
    sample: &DrivingSample,
) -> Result<FlowCondition> {
    let params = &model.ids.flow;
    let h_vl = tape.gather_rows(fwd.hidden, &fwd.sets.vl)?;
    let c_imp = implicit_condition(tape, h_vl, params.psi_vl)?;
    let c_exp = explicit_condition(
        tape,
        &sample.ego,
        fwd.nav,
        sample.target_point,
        params,
        &model.norm,
    )?;
    let c_fm = tape.concat_cols(&[c_imp, c_exp])?;
    Ok(FlowCondition { c_imp, c_exp, c_fm })
}

/// Per-token `f([ψ_A(h_i) ‖ c_fm])` for the path rows and the speed rows.
pub fn flow_heads(
    model: &Model,
    tape: &mut Tape,
    fwd: &Forward,
    cond: &FlowCondition,
) -> Result<(Var, Var)> {
    let params = &model.ids.flow;
    let action = &fwd.sets.action;
    if action.len() != N_WAYPOINTS + N_SPEEDS {
        return Err(Error::Contract(format!(
            "expected {} action tokens, found {}",
            N_WAYPOINTS + N_SPEEDS,
            action.len()
        )));
    }
    let psi_a = tape.param(params.psi_a);
    let mut out = Vec::with_capacity(2);
    for (rows, head) in [
        (&action[..N_WAYPOINTS], &params.path),
        (&action[N_WAYPOINTS..], &params.speed),
    ] {
        let h = tape.gather_rows(fwd.hidden, rows)?;
        let a = tape.matmul(h, psi_a)?;
        let c = tape.repeat_rows(cond.c_fm, rows.len())?;
        let f = tape.concat_cols(&[a, c])?;
        out.push(head.apply(tape, f)?);
    }
    Ok((out[0], out[1]))
}

/// Field prediction `(v̂_path, v̂_speed)` at state `x`, with `text` after the command.
pub fn predict_field(
    model: &Model,
    sample: &DrivingSample,
    text: &[usize],
    x: &NoisyActionState,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new(&model.store);
    let fwd = model.forward(&mut tape, sample, text, Some(x))?;
    let cond = flow_condition(model, &mut tape, &fwd, sample)?;
    let (vp, vs) = flow_heads(model, &mut tape, &fwd, &cond)?;
    Ok((tape.value(vp).clone(), tape.value(vs).clone()))
}

pub trait VectorField {
    fn field(&self, x: &NoisyActionState) -> Result<(Tensor, Tensor)>;
}

pub struct ModelField<'a> {
    pub model: &'a Model,
    pub sample: &'a DrivingSample,
    pub text: &'a [usize],
}

impl VectorField for ModelField<'_> {
    fn field(&self, x: &NoisyActionState) -> Result<(Tensor, Tensor)> {
        predict_field(self.model, self.sample, self.text, x)
    }
}

/// `X ← X + v̂(X, k/steps)/steps` for `k = 0..steps`, path and speed together.
pub fn euler_solve(
    field: &impl VectorField,
    x0: NoisyActionState,
    steps: usize,
) -> Result<NoisyActionState> {
    if steps < 1 {
        return Err(Error::Config(
            "Euler integration needs at least one step".into(),
        ));
    }
    let dt = 1.0 / steps as f64;
    let mut x = x0;
    for k in 0..steps {
        x.tau = k as f64 / steps as f64;
        let (vp, vs) = field.field(&x)?;
        x.path = x.path.zip_map(&vp, |a, v| a + dt * v)?;
        x.speed = x.speed.zip_map(&vs, |a, v| a + dt * v)?;
    }
    x.tau = 1.0;
    Ok(x)
}

/// Samples a trajectory from seeded noise; the regression variant needs one pass.
pub fn euler_integrate(
    model: &Model,
    sample: &DrivingSample,
    text: &[usize],
    steps: usize,
    seed: u64,
) -> Result<TrajectoryOutput> {
    if steps < 1 {
        return Err(Error::Config(
            "Euler integration needs at least one step".into(),
        ));
    }
    let x = if model.variant() == Variant::RegressionHead {
        let (p, s) = predict_field(model, sample, text, &NoisyActionState::zeros(0.0))?;
        NoisyActionState {
            path: p,
            speed: s,
            tau: 1.0,
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = NoisyActionState::noise(&mut rng, 0.0);
        euler_solve(
            &ModelField {
                model,
                sample,
                text,
            },
            x0,
            steps,
        )?
    };
    Ok(TrajectoryOutput::from_normalized(
        &x.path,
        &x.speed,
        &model.norm,
    ))
}

/// Random quantities of one flow-matching training draw.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowDraw {
    pub tau: f64,
    pub eps_path: Tensor,
    pub eps_speed: Tensor,
}

impl FlowDraw {
    /// τ ~ U[0, 1], ε ~ N(0, I).
    pub fn sample(rng: &mut impl Rng) -> Self {
        let tau = rng.gen::<f64>();
        Self {
            tau,
            eps_path: standard_normal(rng, N_WAYPOINTS, 2),
            eps_speed: standard_normal(rng, N_SPEEDS, 1),
        }
    }
}

/// Unweighted drive loss terms of one sample.
#[derive(Clone, Copy, Debug)]
pub struct DriveTerms {
    pub path: Var,
    pub speed: Var,
    pub smooth: Var,
}

/// Action state fed to the model during training.
pub fn training_state(
    model: &Model,
    sample: &DrivingSample,
    draw: &FlowDraw,
) -> Result<NoisyActionState> {
    if model.variant() == Variant::RegressionHead {
        return Ok(NoisyActionState::zeros(0.0));
    }
    let (yp, yv) = normalized_targets(sample, &model.norm)?;
    NoisyActionState::new(
        sample_noisy(&yp, &draw.eps_path, draw.tau)?,
        sample_noisy(&yv, &draw.eps_speed, draw.tau)?,
        draw.tau,
    )
}

/// Flow-matching MSE for both heads plus smoothness of the one-step denoised path
/// `X_τ + (1 − τ)·v̂`. The regression variant regresses `Y` directly instead.
pub fn drive_terms(
    model: &Model,
    tape: &mut Tape,
    fwd: &Forward,
    sample: &DrivingSample,
    x: &NoisyActionState,
    draw: &FlowDraw,
) -> Result<DriveTerms> {
    let cond = flow_condition(model, tape, fwd, sample)?;
    let (vp, vs) = flow_heads(model, tape, fwd, &cond)?;
    let (yp, yv) = normalized_targets(sample, &model.norm)?;
    if model.variant() == Variant::RegressionHead {
        let path = tape.squared_error(vp, &yp, N_WAYPOINTS as f64)?;
        let speed = tape.squared_error(vs, &yv, N_SPEEDS as f64)?;
        let smooth = tape.smoothness(vp)?;
        return Ok(DriveTerms {
            path,
            speed,
            smooth,
        });
    }
    let path = tape.squared_error(vp, &target_field(&yp, &draw.eps_path)?, N_WAYPOINTS as f64)?;
    let speed = tape.squared_error(vs, &target_field(&yv, &draw.eps_speed)?, N_SPEEDS as f64)?;
    let denoised = tape.affine(vp, 1.0 - x.tau, &x.path)?;
    let smooth = tape.smoothness(denoised)?;
    Ok(DriveTerms {
        path,
        speed,
        smooth,
    })
}

fn flow_loss_value(
    model: &Model,
    sample: &DrivingSample,
    rng: &mut impl Rng,
    pick: fn(&DriveTerms) -> Var,
) -> Result<f64> {
    let draw = FlowDraw::sample(rng);
    let x = training_state(model, sample, &draw)?;
    let text = crate::language::teacher_text(&sample.instruction);
    let mut tape = Tape::new(&model.store);
    let fwd = model.forward(&mut tape, sample, &text, Some(&x))?;
    let terms = drive_terms(model, &mut tape, &fwd, sample, &x, &draw)?;
    Ok(tape.value(pick(&terms)).item())
}

pub fn path_flow_loss(model: &Model, sample: &DrivingSample, rng: &mut impl Rng) -> Result<f64> {
    flow_loss_value(model, sample, rng, |t| t.path)
}

pub fn speed_flow_loss(model: &Model, sample: &DrivingSample, rng: &mut impl Rng) -> Result<f64> {
    flow_loss_value(model, sample, rng, |t| t.speed)
}

/// `(1/18) Σ_{k=2}^{19} ‖p_{k+1} − 2p_k + p_{k−1}‖²` over exactly 20 waypoints.
pub fn smoothness_loss(waypoints: &Tensor) -> Result<f64> {
    if waypoints.shape() != [N_WAYPOINTS, 2] {
        return Err(Error::Input(format!(
            "smoothness needs {N_WAYPOINTS}×2 waypoints, got {:?}",
            waypoints.shape()
        )));
    }
    second_difference_loss(waypoints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::synth::{make_sample, sample_scenario};
    use crate::tokenizer::SymbolVocab;

    fn t(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = standard_normal(&mut rng, 20, 2);
        let e = standard_normal(&mut rng, 20, 2);
        assert_eq!(sample_noisy(&y, &e, 0.0).unwrap(), e);
        assert_eq!(sample_noisy(&y, &e, 1.0).unwrap(), y);
        let mid = sample_noisy(&t(1, 2, vec![2.0, 4.0]), &t(1, 2, vec![0.0, 0.0]), 0.5).unwrap();
        assert_eq!(mid.data(), &[1.0, 2.0]);
        let tau = 0.37;
        let got = sample_noisy(&y, &e, tau).unwrap();
        for i in 0..40 {
            assert_eq!(got.data()[i], (1.0 - tau) * e.data()[i] + tau * y.data()[i]);
        }
        assert!(matches!(
            sample_noisy(&y, &t(1, 2, vec![0.0; 2]), 0.5),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn target_field_cases() {
        let y = t(1, 2, vec![3.0, 0.0]);
        assert_eq!(
            target_field(&y, &t(1, 2, vec![1.0, 0.0])).unwrap().data(),
            &[2.0, 0.0]
        );
        assert_eq!(target_field(&y, &y).unwrap().data(), &[0.0, 0.0]);
        assert!(target_field(&y, &t(2, 1, vec![0.0; 2])).is_err());
    }

    struct Constant(Tensor, Tensor);

    impl VectorField for Constant {
        fn field(&self, _: &NoisyActionState) -> Result<(Tensor, Tensor)> {
            Ok((self.0.clone(), self.1.clone()))
        }
    }

    #[test]
    fn constant_field_euler_recovers_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x0 = NoisyActionState::noise(&mut rng, 0.0);
        let y = t(20, 2, (0..40).map(|i| i as f64 * 0.25).collect());
        let yv = t(10, 1, (0..10).map(|i| i as f64 * 0.5).collect());
        let stub = Constant(
            target_field(&y, &x0.path).unwrap(),
            target_field(&yv, &x0.speed).unwrap(),
        );
        // x0 + (y − x0) rounds, so "exact" means within a few ulps
        let close = |a: &Tensor, b: &Tensor| {
            a.data()
                .iter()
                .zip(b.data())
                .all(|(p, q)| (p - q).abs() <= 1e-14 * (1.0 + q.abs()))
        };
        for steps in [1, 2, 3, 10, 64] {
            let x = euler_solve(&stub, x0.clone(), steps).unwrap();
            assert!(close(&x.path, &y), "{steps} steps");
            assert!(close(&x.speed, &yv), "{steps} steps");
        }
        assert!(matches!(euler_solve(&stub, x0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn smoothness_fixtures() {
        let line = t(
            20,
            2,
            (1..=20).flat_map(|k| [k as f64, 2.0 * k as f64]).collect(),
        );
        assert_eq!(smoothness_loss(&line).unwrap(), 0.0);
        let quad = t(
            20,
            2,
            (1..=20).flat_map(|k| [k as f64, (k * k) as f64]).collect(),
        );
        assert_eq!(smoothness_loss(&quad).unwrap(), 4.0);
        assert!(smoothness_loss(&t(19, 2, vec![0.0; 38])).is_err());
    }

    fn small_model() -> Model {
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
    fn predict_field_shapes_and_live_conditioning() {
        let m = small_model();
        let vocab = SymbolVocab::standard();
        let s = make_sample(&sample_scenario(11), &vocab);
        let text = crate::language::teacher_text(&s.instruction);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = NoisyActionState::noise(&mut rng, 0.4);
        let (vp, vs) = predict_field(&m, &s, &text, &x).unwrap();
        assert_eq!(vp.shape(), &[20, 2]);
        assert_eq!(vs.shape(), &[10, 1]);
        let mut s2 = s.clone();
        s2.goal[1] = vocab.sym(if s.goal[1] == vocab.sym("GOAL_LEFT") {
            "GOAL_RIGHT"
        } else {
            "GOAL_LEFT"
        });
        let (vp2, _) = predict_field(&m, &s2, &text, &x).unwrap();
        assert_ne!(vp, vp2);
    }

    #[test]
    fn euler_integrate_is_deterministic() {
        let m = small_model();
        let s = make_sample(&sample_scenario(4), &SymbolVocab::standard());
        let text = crate::language::teacher_text(&s.instruction);
        let a = euler_integrate(&m, &s, &text, 3, 77).unwrap();
        let b = euler_integrate(&m, &s, &text, 3, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.waypoints.len(), 20);
        assert_eq!(a.speeds.len(), 10);
        assert!(euler_integrate(&m, &s, &text, 0, 77).is_err());
    }

    #[test]
    fn one_euler_step_is_noise_plus_field() {
        let m = small_model();
        let s = make_sample(&sample_scenario(4), &SymbolVocab::standard());
        let text = crate::language::teacher_text(&s.instruction);
        let out = euler_integrate(&m, &s, &text, 1, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = NoisyActionState::noise(&mut rng, 0.0);
        let (vp, vs) = predict_field(&m, &s, &text, &x0).unwrap();
        let want = TrajectoryOutput::from_normalized(
            &x0.path.zip_map(&vp, |a, b| a + b).unwrap(),
            &x0.speed.zip_map(&vs, |a, b| a + b).unwrap(),
            &m.norm,
        );
        assert_eq!(out, want);
    }

    #[test]
    fn zero_field_loss_matches_arithmetic() {
        let mut m = small_model();
        for id in [m.ids.flow.path.w2, m.ids.flow.speed.w2] {
            let shape = m.store.value(id).shape().to_vec();
            m.store.set_value(id, Tensor::zeros(&shape)).unwrap();
        }
        let s = make_sample(&sample_scenario(8), &SymbolVocab::standard());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let loss = path_flow_loss(&m, &s, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draw = FlowDraw::sample(&mut rng);
        let (yp, _) = normalized_targets(&s, &m.norm).unwrap();
        let mut want = 0.0;
        for k in 0..20 {
            for j in 0..2 {
                let r = yp.get(k, j) - draw.eps_path.get(k, j);
                want += r * r;
            }
        }
        assert!((loss - want / 20.0).abs() < 1e-12);
    }
}
