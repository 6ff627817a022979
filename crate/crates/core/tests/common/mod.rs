#![allow(dead_code)]

use vdrive::flow::NoisyActionState;
use vdrive::model::{Model, ModelConfig, Variant};
use vdrive::numerics::Tensor;
use vdrive::synth::{make_sample, sample_scenario, DrivingSample};
use vdrive::tokenizer::SymbolVocab;

pub fn small_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        d: 16,
        layers: 2,
        heads: 2,
        d_ff: 24,
        variant,
        ..ModelConfig::default()
    }
}

pub fn small_model(variant: Variant, seed: u64) -> Model {
    let mut cfg = small_config(variant);
    cfg.init_seed = seed;
    Model::new(cfg, SymbolVocab::standard()).unwrap()
}

pub fn sample(seed: u64) -> DrivingSample {
    make_sample(&sample_scenario(seed), &SymbolVocab::standard())
}

pub fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

pub fn rows(t: &Tensor, idx: &[usize]) -> Vec<u64> {
    idx.iter()
        .flat_map(|&i| t.row(i).iter().map(|x| x.to_bits()))
        .collect()
}

pub fn state_from(values: &[f64], tau: f64) -> NoisyActionState {
    let path = Tensor::matrix(20, 2, values[..40].to_vec()).unwrap();
    let speed = Tensor::matrix(10, 1, values[40..50].to_vec()).unwrap();
    NoisyActionState::new(path, speed, tau).unwrap()
}
