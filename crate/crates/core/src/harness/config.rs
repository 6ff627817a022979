//! Training configuration and its line-oriented `key = value` file format.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Stage, Variant};

pub const DEFAULT_EULER_STEPS: usize = 10;
pub const DEFAULT_EPOCHS: [usize; 3] = [10, 12, 7];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub path: f64,
    pub smooth: f64,
    pub speed: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            path: 1.0,
            smooth: 0.1,
            speed: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub epochs: [usize; 3],
    pub weights: LossWeights,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub shuffle_seed: u64,
    pub flow_seed: u64,
    pub eval_seed: u64,
    pub euler_steps: usize,
    pub freeze_attn_stage2: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr: 3e-4,
            epochs: DEFAULT_EPOCHS,
            weights: LossWeights::default(),
            batch_size: 16,
            clip_norm: 1.0,
            shuffle_seed: 0,
            flow_seed: 0,
            eval_seed: 0,
            euler_steps: DEFAULT_EULER_STEPS,
            freeze_attn_stage2: false,
        }
    }
}

/// Everything `run_stage` needs for one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub weights: LossWeights,
    pub shuffle_seed: u64,
    pub flow_seed: u64,
    pub freeze_attention: bool,
}

impl TrainConfig {
    pub fn stage(&self, stage: Stage) -> StageConfig {
        StageConfig {
            stage,
            epochs: self.epochs[stage.number() - 1],
            lr: self.lr,
            batch_size: self.batch_size,
            clip_norm: self.clip_norm,
            weights: self.weights,
            shuffle_seed: self.shuffle_seed,
            flow_seed: self.flow_seed,
            freeze_attention: stage == Stage::Two && self.freeze_attn_stage2,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Defaults overridden by `key = value` lines; `#` starts a comment and
    /// `-` and `_` are interchangeable in keys.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`")))?;
            let key = key.trim().replace('-', "_");
            let value = value.trim();
            c.set(&key, value)
                .map_err(|e| Error::Config(format!("line {line_no}: {e}")))?;
        }
        c.model.validate()?;
        if c.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if c.euler_steps == 0 {
            return Err(Error::Config("euler_steps must be positive".into()));
        }
        Ok(c)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("invalid value `{value}` for `{key}`"))
        }
        match key {
            "d" => self.model.d = num(key, value)?,
            "layers" => self.model.layers = num(key, value)?,
            "heads" => self.model.heads = num(key, value)?,
            "d_ff" => self.model.d_ff = num(key, value)?,
            "vocab" => self.model.vocab = num(key, value)?,
            "max_positions" => self.model.max_positions = num(key, value)?,
            "init_seed" => self.model.init_seed = num(key, value)?,
            "variant" => {
                self.model.variant =
                    Variant::parse(value).ok_or_else(|| format!("unknown variant `{value}`"))?
            }
            "lr" => self.lr = num(key, value)?,
            "epochs" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(format!(
                        "`epochs` needs three comma-separated values, got `{value}`"
                    ));
                }
                for (slot, p) in self.epochs.iter_mut().zip(parts) {
                    *slot = num(key, p)?;
                }
            }
            "epochs_stage1" => self.epochs[0] = num(key, value)?,
            "epochs_stage2" => self.epochs[1] = num(key, value)?,
            "epochs_stage3" => self.epochs[2] = num(key, value)?,
            "lambda_path" => self.weights.path = num(key, value)?,
            "lambda_smooth" => self.weights.smooth = num(key, value)?,
            "lambda_speed" => self.weights.speed = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "shuffle_seed" => self.shuffle_seed = num(key, value)?,
            "flow_seed" => self.flow_seed = num(key, value)?,
            "eval_seed" => self.eval_seed = num(key, value)?,
            "seed" => {
                let s: u64 = num(key, value)?;
                self.model.init_seed = s;
                self.shuffle_seed = s;
                self.flow_seed = s;
            }
            "euler_steps" => self.euler_steps = num(key, value)?,
            "freeze_attn_stage2" => self.freeze_attn_stage2 = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let w = &self.weights;
        format!(
            "d = {}\nlayers = {}\nheads = {}\nd_ff = {}\nvocab = {}\nmax_positions = {}\ninit_seed = {}\n\
             variant = {}\nlr = {}\nepochs = {}, {}, {}\nlambda_path = {}\nlambda_smooth = {}\nlambda_speed = {}\n\
             batch_size = {}\nclip_norm = {}\nshuffle_seed = {}\nflow_seed = {}\neval_seed = {}\n\
             euler_steps = {}\nfreeze_attn_stage2 = {}\n",
            m.d,
            m.layers,
            m.heads,
            m.d_ff,
            m.vocab,
            m.max_positions,
            m.init_seed,
            m.variant.name(),
            self.lr,
            self.epochs[0],
            self.epochs[1],
            self.epochs[2],
            w.path,
            w.smooth,
            w.speed,
            self.batch_size,
            self.clip_norm,
            self.shuffle_seed,
            self.flow_seed,
            self.eval_seed,
            self.euler_steps,
            self.freeze_attn_stage2
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.epochs, [10, 12, 7]);
        assert_eq!(
            c.weights,
            LossWeights {
                path: 1.0,
                smooth: 0.1,
                speed: 1.0
            }
        );
        assert_eq!(c.euler_steps, 10);
        assert_eq!((c.model.d, c.model.layers, c.model.heads), (64, 4, 4));
    }

    #[test]
    fn parse_overrides_and_comments() {
        let c = TrainConfig::parse("# tiny\nd = 16\nheads=2\nepochs = 1, 2, 3\nfreeze-attn-stage2 = true\nlambda_smooth = 0.5 # note\n")
            .unwrap();
        assert_eq!(c.model.d, 16);
        assert_eq!(c.model.heads, 2);
        assert_eq!(c.epochs, [1, 2, 3]);
        assert!(c.freeze_attn_stage2);
        assert_eq!(c.weights.smooth, 0.5);
    }

    #[test]
    fn unknown_key_rejected() {
        let e = TrainConfig::parse("d = 16\nwidth = 3\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(TrainConfig::parse("d = sixteen").is_err());
        assert!(TrainConfig::parse("just words").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.lr = 1.5e-3;
        c.model.variant = Variant::Decoupled;
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }
}
