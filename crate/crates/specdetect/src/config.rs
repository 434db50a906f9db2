//! Line-oriented `key = value` run configuration.
//!
//! ```text
//! # comments run to end of line
//! include = base.cfg        # resolved relative to this file
//! lambda = 0.7
//! max_grad_norm = none
//! ```
//!
//! Later assignments win, so a file can include defaults and override them.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use specdetect_core::diff::OptimConfig;
use specdetect_core::hsi::SynthConfig;
use specdetect_core::metatrain::TrainConfig;
use specdetect_core::model::ModelConfig;
use specdetect_core::ssplm::{AugmentConfig, HeadInit, TtaConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected `key = value`, got `{text}`")]
    Syntax { path: PathBuf, line: usize, text: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
    #[error("include cycle through {0}")]
    IncludeCycle(PathBuf),
    #[error("invalid configuration: {0}")]
    Invalid(#[from] specdetect_core::Error),
}

/// Scalar types that can appear on the right of `=`.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! numeric_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
numeric_value!(usize, u64);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("must be finite".into())
        }
    }
    fn render(&self) -> String {
        // shortest representation that parses back to the same bits
        format!("{self:?}")
    }
}

impl ConfigValue for bool {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "true" | "yes" | "on" | "1" => Ok(true),
            "false" | "no" | "off" | "0" => Ok(false),
            _ => Err("expected true or false".into()),
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for Option<f64> {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s == "none" {
            Ok(None)
        } else {
            f64::parse_value(s).map(Some)
        }
    }
    fn render(&self) -> String {
        self.map_or_else(|| "none".into(), |v| v.render())
    }
}

/// Starting point of the detection head at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadInitKind {
    Keep,
    Prototype,
}

impl ConfigValue for HeadInitKind {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "keep" => Ok(Self::Keep),
            "prototype" => Ok(Self::Prototype),
            _ => Err("expected keep or prototype".into()),
        }
    }
    fn render(&self) -> String {
        match self {
            Self::Keep => "keep".into(),
            Self::Prototype => "prototype".into(),
        }
    }
}

macro_rules! run_config {
    ($( $(#[doc = $doc:literal])* $field:ident : $ty:ty = $default:expr ),* $(,)?) => {
        /// Every tunable of a run. Written next to each output.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $( $(#[doc = $doc])* pub $field: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($field) ),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                let key = key.replace('-', "_");
                match key.as_str() {
                    $( stringify!($field) => {
                        self.$field = <$ty as ConfigValue>::parse_value(value).map_err(|reason| {
                            ConfigError::Value { key: key.clone(), value: value.into(), reason }
                        })?;
                    } )*
                    _ => return Err(ConfigError::UnknownKey(key)),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key.replace('-', "_").as_str() {
                    $( stringify!($field) => Some(self.$field.render()), )*
                    _ => None,
                }
            }

            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( (stringify!($field), self.$field.render()), )*]
            }
        }
    };
}

run_config! {
    /// Base seed; every random stream is derived from it.
    seed: u64 = 0,
    patch: usize = 5,
    rho_low: f64 = 0.25,
    rho_mid: f64 = 0.60,
    freq_masking: bool = true,
    group_width: usize = 64,
    adapter_width: usize = 64,
    state_size: usize = 16,
    delta_init: f64 = 0.1,
    embed_width: usize = 64,
    heads: usize = 4,
    blocks: usize = 2,
    ffn_mult: usize = 2,
    prior_hidden: usize = 128,
    /// Meta-training iterations.
    iterations: usize = 10_000,
    /// Episodes per meta-training batch.
    batch: usize = 32,
    ways: usize = 10,
    shots: usize = 2,
    /// Query samples per class and episode.
    queries: usize = 15,
    beta: f64 = 1.0,
    gamma: f64 = 0.1,
    lambda: f64 = 0.7,
    train_q_pos: f64 = 0.9,
    train_q_neg: f64 = 0.1,
    freeze_backbone: bool = false,
    lr: f64 = 1e-4,
    weight_decay: f64 = 1e-2,
    beta1: f64 = 0.9,
    beta2: f64 = 0.999,
    epsilon: f64 = 1e-8,
    max_grad_norm: Option<f64> = None,
    tta_iterations: usize = 50,
    eta: f64 = 0.4,
    q_pos: f64 = 0.95,
    q_neg: f64 = 0.05,
    /// Pseudo-label refresh interval during adaptation.
    refresh: usize = 10,
    aug_noise: f64 = 0.01,
    aug_rotations: bool = true,
    aug_flips: bool = true,
    head_init: HeadInitKind = HeadInitKind::Keep,
    head_scale: f64 = 5.0,
    /// Adaptation learning rate; `none` reuses `lr`.
    tta_lr: Option<f64> = None,
    /// Adaptation weight decay; `none` reuses `weight_decay`.
    tta_weight_decay: Option<f64> = None,
    /// ROC threshold grid size.
    grid: usize = 1000,
    synth_height: usize = 48,
    synth_width: usize = 48,
    synth_bands: usize = 32,
    synth_classes: usize = 4,
    synth_length_scale: f64 = 0.15,
    synth_implants: usize = 20,
    synth_abundance_min: f64 = 0.4,
    synth_abundance_max: f64 = 1.0,
    synth_noise: f64 = 0.01,
    synth_region: usize = 8,
    /// Background classes of the synthetic training scene.
    source_classes: usize = 10,
    /// Distinct implanted materials in the training scene, one class each.
    source_materials: usize = 3,
    source_implants: usize = 60,
}

impl RunConfig {
    pub fn model(&self, bands: usize) -> ModelConfig {
        ModelConfig {
            bands,
            patch: self.patch,
            rho_low: self.rho_low,
            rho_mid: self.rho_mid,
            freq_masking: self.freq_masking,
            group_width: self.group_width,
            adapter_width: self.adapter_width,
            state_size: self.state_size,
            delta_init: self.delta_init,
            embed_width: self.embed_width,
            heads: self.heads,
            blocks: self.blocks,
            ffn_mult: self.ffn_mult,
            prior_hidden: self.prior_hidden,
        }
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            max_grad_norm: self.max_grad_norm,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            episodes_per_batch: self.batch,
            ways: self.ways,
            shots: self.shots,
            queries_per_class: self.queries,
            beta: self.beta,
            gamma: self.gamma,
            lambda: self.lambda,
            q_pos: self.train_q_pos,
            q_neg: self.train_q_neg,
            freeze_backbone: self.freeze_backbone,
            optim: self.optim(),
            seed: specdetect_core::rng::derive(self.seed, &[TRAIN_STREAM]),
        }
    }

    pub fn tta(&self) -> TtaConfig {
        let mut optim = self.optim();
        if let Some(lr) = self.tta_lr {
            optim.learning_rate = lr;
        }
        if let Some(wd) = self.tta_weight_decay {
            optim.weight_decay = wd;
        }
        TtaConfig {
            iterations: self.tta_iterations,
            eta: self.eta,
            q_pos: self.q_pos,
            q_neg: self.q_neg,
            refresh: self.refresh,
            augment: AugmentConfig {
                noise_std: self.aug_noise,
                rotations: self.aug_rotations,
                flips: self.aug_flips,
            },
            head_init: match self.head_init {
                HeadInitKind::Keep => HeadInit::Keep,
                HeadInitKind::Prototype => HeadInit::Prototype {
                    scale: self.head_scale,
                },
            },
            optim,
            seed: specdetect_core::rng::derive(self.seed, &[TTA_STREAM]),
        }
    }

    pub fn synth(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            height: self.synth_height,
            width: self.synth_width,
            bands: self.synth_bands,
            background_classes: self.synth_classes,
            length_scale: self.synth_length_scale,
            implants: self.synth_implants,
            abundance_min: self.synth_abundance_min,
            abundance_max: self.synth_abundance_max,
            noise_std: self.synth_noise,
            region_size: self.synth_region,
            seed,
        }
    }

    /// Training scene: same geometry as the target scene, more classes.
    pub fn source_synth(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            background_classes: self.source_classes,
            implants: self.source_implants,
            ..self.synth(seed)
        }
    }

    /// Re-runs the checks of every module that consumes the configuration.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model(self.synth_bands).validate()?;
        self.train().validate()?;
        self.tta().validate()?;
        self.synth(self.seed).validate()?;
        self.source_synth(self.seed).validate()?;
        if self.source_materials == 0 {
            return Err(ConfigError::Value {
                key: "source_materials".into(),
                value: "0".into(),
                reason: "must be positive".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(specdetect_core::Error::BlendOutOfRange(self.lambda).into());
        }
        if self.grid == 0 {
            return Err(ConfigError::Value {
                key: "grid".into(),
                value: "0".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }

    /// Applies `key = value` lines from `text`; includes resolve against `base`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), ConfigError> {
        let mut seen = HashSet::new();
        self.apply_inner(text, origin, &mut seen)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let mut seen = HashSet::new();
        self.apply_file_inner(path, &mut seen)
    }

    fn apply_file_inner(&mut self, path: &Path, seen: &mut HashSet<PathBuf>) -> Result<(), ConfigError> {
        let canon = path.canonicalize().map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if !seen.insert(canon.clone()) {
            return Err(ConfigError::IncludeCycle(canon));
        }
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_inner(&text, path, seen)?;
        seen.remove(&canon);
        Ok(())
    }

    fn apply_inner(&mut self, text: &str, origin: &Path, seen: &mut HashSet<PathBuf>) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    path: origin.to_path_buf(),
                    line: n + 1,
                    text: raw.into(),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if k == "include" {
                let dir = origin.parent().unwrap_or(Path::new("."));
                self.apply_file_inner(&dir.join(v), seen)?;
            } else {
                self.set(k, v)?;
            }
        }
        Ok(())
    }

    /// Fully resolved form: one line per key, no includes.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# resolved run configuration\n");
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

const TRAIN_STREAM: u64 = 0x7472;
const TTA_STREAM: u64 = 0x7474;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let mut d = RunConfig::default();
        d.lambda = 0.3;
        d.max_grad_norm = Some(1.5);
        d.head_init = HeadInitKind::Prototype;
        let mut e = RunConfig::default();
        e.apply_text(&d.to_text(), Path::new("x.cfg")).unwrap();
        assert_eq!(d, e);
    }

    #[test]
    fn bad_lines() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("nope", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.set("lambda", "abc"), Err(ConfigError::Value { .. })));
        assert!(matches!(c.set("lambda", "inf"), Err(ConfigError::Value { .. })));
        assert!(matches!(
            c.apply_text("lambda 0.2", Path::new("a.cfg")),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        c.set("rho-low", "0.3").unwrap();
        assert_eq!(c.rho_low, 0.3);
        c.lambda = 1.5;
        assert!(c.validate().is_err());
    }
}
