//! Flat `key = value` configuration shared by every command.
//!
//! Lines are `key = value`; `#` starts a comment and blank lines are
//! ignored. Unknown keys, malformed values and out-of-range values are
//! rejected with their line number. An empty file yields [`Config::default`],
//! and [`Config::dump`] writes every key so that parsing the dump gives back
//! the same configuration.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `seed` | 0 | master seed (overridden by `TIMEBALANCE_SEED`) |
//! | `synth.num_classes_atomic` | 5 | |
//! | `synth.num_classes_composite` | 5 | |
//! | `synth.videos_per_class` | 20 | training corpus |
//! | `synth.test_videos_per_class` | 20 | held-out corpus |
//! | `synth.t`, `synth.h`, `synth.w`, `synth.channels` | 64, 32, 32, 3 | |
//! | `synth.noise_std` | 0.01 | |
//! | `data.root` | empty | training corpus directory |
//! | `data.test_root` | empty | evaluation corpus directory |
//! | `data.labeled_fraction` | 0.1 | |
//! | `clips.n` | 4 | consecutive clips per video |
//! | `augment.crop_scale_min`, `augment.crop_scale_max` | 0.5, 1.0 | crop area range |
//! | `augment.flip` | 0.5 | horizontal flip probability |
//! | `augment.grayscale` | 0.1 | |
//! | `augment.brightness`, `augment.contrast`, `augment.saturation` | 0.2, 0.2, 0.2 | jitter ranges |
//! | `model.input_size` | 16 | clip side after cropping |
//! | `model.widths` | 4,8,16,64 | backbone block widths |
//! | `model.groups` | 1 | group-norm groups |
//! | `model.proj_dim` | 16 | projection size `d` |
//! | `train.batch_size` | 8 | |
//! | `train.base_lr` | 0.001 | |
//! | `train.warmup_epochs` | 10 | |
//! | `train.patience` | 5 | |
//! | `train.tau` | 0.1 | |
//! | `train.omega` | 1.0 | unsupervised loss weight |
//! | `train.distill` | l2 | `l2`, `kl` or `js` |
//! | `pretrain.epochs`, `pretrain.clip_len` | 30, 16 | |
//! | `finetune.epochs`, `finetune.clip_len` | 150, 8 | |
//! | `finetune.repeats` | 8 | passes over the labeled set per epoch |
//! | `student.epochs`, `student.clip_len` | 80, 8 | |
//! | `student.init` | ssl | `ssl` or `random` |
//! | `student.reweight` | tstr | `tstr` or `uniform` (s fixed at 0.5) |
//! | `student.labeled_per_batch` | 4 | labeled samples per student batch |
//! | `eval.num_clips`, `eval.num_scales` | 10, 3 | |
//! | `eval.delta_k` | 5 | extreme classes reported by `classwise-delta` |

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::{AugmentSpec, ColorJitter, CropSpec};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::losses::Divergence;
use crate::synthgen::SynthSpec;

pub const SEED_ENV: &str = "TIMEBALANCE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudentInit {
    Random,
    Ssl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reweight {
    Tstr,
    Uniform,
}

impl fmt::Display for StudentInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StudentInit::Random => "random",
            StudentInit::Ssl => "ssl",
        })
    }
}

impl FromStr for StudentInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(StudentInit::Random),
            "ssl" | "ssl_checkpoint" => Ok(StudentInit::Ssl),
            _ => Err(Error::Argument(format!("student init must be 'ssl' or 'random', got '{s}'"))),
        }
    }
}

impl fmt::Display for Reweight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reweight::Tstr => "tstr",
            Reweight::Uniform => "uniform",
        })
    }
}

impl FromStr for Reweight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tstr" => Ok(Reweight::Tstr),
            "uniform" => Ok(Reweight::Uniform),
            _ => Err(Error::Argument(format!("reweight must be 'tstr' or 'uniform', got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes_atomic: usize,
    pub num_classes_composite: usize,
    pub videos_per_class: usize,
    pub test_videos_per_class: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub root: Option<PathBuf>,
    pub test_root: Option<PathBuf>,
    pub labeled_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub crop_scale_min: f64,
    pub crop_scale_max: f64,
    pub flip: f64,
    pub grayscale: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    pub widths: [usize; 4],
    pub groups: usize,
    pub proj_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedTrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub patience: usize,
    pub tau: f64,
    pub omega: f64,
    pub distill: Divergence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub clip_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub clip_len: usize,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentConfig {
    pub epochs: usize,
    pub clip_len: usize,
    pub init: StudentInit,
    pub reweight: Reweight,
    pub labeled_per_batch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub num_clips: usize,
    pub num_scales: usize,
    pub delta_k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub synth: SynthConfig,
    pub data: DataConfig,
    pub n: usize,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub train: SharedTrainConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub student: StudentConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig {
                num_classes_atomic: 5,
                num_classes_composite: 5,
                videos_per_class: 20,
                test_videos_per_class: 20,
                t: 64,
                h: 32,
                w: 32,
                channels: 3,
                noise_std: 0.01,
            },
            data: DataConfig {
                root: None,
                test_root: None,
                labeled_fraction: 0.1,
            },
            n: 4,
            augment: AugmentConfig {
                crop_scale_min: 0.5,
                crop_scale_max: 1.0,
                flip: 0.5,
                grayscale: 0.1,
                brightness: 0.2,
                contrast: 0.2,
                saturation: 0.2,
            },
            model: ModelConfig {
                input_size: 16,
                widths: [4, 8, 16, 64],
                groups: 1,
                proj_dim: 16,
            },
            train: SharedTrainConfig {
                batch_size: 8,
                base_lr: 1e-3,
                warmup_epochs: 10,
                patience: 5,
                tau: 0.1,
                omega: 1.0,
                distill: Divergence::L2,
            },
            pretrain: PretrainConfig {
                epochs: 30,
                clip_len: 16,
            },
            finetune: FinetuneConfig {
                epochs: 150,
                clip_len: 8,
                repeats: 8,
            },
            student: StudentConfig {
                epochs: 80,
                clip_len: 8,
                init: StudentInit::Ssl,
                reweight: Reweight::Tstr,
                labeled_per_batch: 4,
            },
            eval: EvalConfig {
                num_clips: 10,
                num_scales: 3,
                delta_k: 5,
            },
        }
    }
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn format_value(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("expected {}: {e}", stringify!($t)))
            }
            fn format_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(usize, u64);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let v: f64 = s.parse().map_err(|e| format!("expected a number: {e}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("expected a finite number".into())
        }
    }

    fn format_value(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for Option<PathBuf> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok((!s.is_empty()).then(|| PathBuf::from(s)))
    }

    fn format_value(&self) -> String {
        self.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
    }
}

impl ConfigValue for [usize; 4] {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("expected 4 comma-separated integers: {e}"))?;
        parts
            .try_into()
            .map_err(|_| "expected exactly 4 comma-separated integers".to_string())
    }

    fn format_value(&self) -> String {
        self.map(|v| v.to_string()).join(",")
    }
}

macro_rules! enum_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e: Error| e.to_string())
            }
            fn format_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

enum_value!(StudentInit, Reweight, Divergence);

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+;)*) => {
        /// Every accepted key, in dump order.
        pub const KEYS: &[&str] = &[$($key),*];

        impl Config {
            fn set_key(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                match key {
                    $($key => self$(.$field)+ = ConfigValue::parse_value(value)?,)*
                    _ => return Err(format!("unknown key '{key}'")),
                }
                Ok(())
            }

            fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, self$(.$field)+.format_value())),*]
            }
        }
    };
}

config_keys! {
    "seed" => seed;
    "synth.num_classes_atomic" => synth.num_classes_atomic;
    "synth.num_classes_composite" => synth.num_classes_composite;
    "synth.videos_per_class" => synth.videos_per_class;
    "synth.test_videos_per_class" => synth.test_videos_per_class;
    "synth.t" => synth.t;
    "synth.h" => synth.h;
    "synth.w" => synth.w;
    "synth.channels" => synth.channels;
    "synth.noise_std" => synth.noise_std;
    "data.root" => data.root;
    "data.test_root" => data.test_root;
    "data.labeled_fraction" => data.labeled_fraction;
    "clips.n" => n;
    "augment.crop_scale_min" => augment.crop_scale_min;
    "augment.crop_scale_max" => augment.crop_scale_max;
    "augment.flip" => augment.flip;
    "augment.grayscale" => augment.grayscale;
    "augment.brightness" => augment.brightness;
    "augment.contrast" => augment.contrast;
    "augment.saturation" => augment.saturation;
    "model.input_size" => model.input_size;
    "model.widths" => model.widths;
    "model.groups" => model.groups;
    "model.proj_dim" => model.proj_dim;
    "train.batch_size" => train.batch_size;
    "train.base_lr" => train.base_lr;
    "train.warmup_epochs" => train.warmup_epochs;
    "train.patience" => train.patience;
    "train.tau" => train.tau;
    "train.omega" => train.omega;
    "train.distill" => train.distill;
    "pretrain.epochs" => pretrain.epochs;
    "pretrain.clip_len" => pretrain.clip_len;
    "finetune.epochs" => finetune.epochs;
    "finetune.clip_len" => finetune.clip_len;
    "finetune.repeats" => finetune.repeats;
    "student.epochs" => student.epochs;
    "student.clip_len" => student.clip_len;
    "student.init" => student.init;
    "student.reweight" => student.reweight;
    "student.labeled_per_batch" => student.labeled_per_batch;
    "eval.num_clips" => eval.num_clips;
    "eval.num_scales" => eval.num_scales;
    "eval.delta_k" => eval.delta_k;
}

impl Config {
    pub fn parse_str(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Config::default();
        let mut last_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let fail = |reason: String| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                reason,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail("expected 'key = value'".into()))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set_key(key, value).map_err(|e| fail(format!("{key}: {e}")))?;
            last_line = line_no;
            cfg.check_key(key).map_err(fail)?;
        }
        cfg.validate().map_err(|reason| Error::Parse {
            path: path.to_path_buf(),
            line: last_line,
            reason,
        })?;
        Ok(cfg)
    }

    /// Reads `path`, then applies the `TIMEBALANCE_SEED` override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse_str(&text, path)?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Argument(format!("{SEED_ENV} must be an unsigned integer, got '{v}'")))?;
        }
        Ok(())
    }

    /// Every key with its value, one `key = value` line each.
    pub fn dump(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Range check of a single freshly parsed key.
    fn check_key(&self, key: &str) -> std::result::Result<(), String> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be positive, got {v}"))
            }
        };
        let probability = |v: f64, name: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} must lie in [0, 1], got {v}"))
            }
        };
        match key {
            "train.tau" => positive(self.train.tau, key),
            "train.base_lr" => positive(self.train.base_lr, key),
            "train.omega" if self.train.omega < 0.0 => Err(format!("{key} must be >= 0")),
            "synth.noise_std" if self.synth.noise_std < 0.0 => Err(format!("{key} must be >= 0")),
            "data.labeled_fraction" if !(self.data.labeled_fraction > 0.0 && self.data.labeled_fraction <= 1.0) => {
                Err(format!("{key} must lie in (0, 1]"))
            }
            "augment.flip" => probability(self.augment.flip, key),
            "augment.grayscale" => probability(self.augment.grayscale, key),
            "augment.crop_scale_min" => probability(self.augment.crop_scale_min, key),
            "augment.crop_scale_max" => probability(self.augment.crop_scale_max, key),
            "train.patience" if self.train.patience == 0 => Err(format!("{key} must be at least 1")),
            "train.batch_size" if self.train.batch_size == 0 => Err(format!("{key} must be at least 1")),
            "clips.n" if self.n < 2 => Err(format!("{key} must be at least 2")),
            _ => Ok(()),
        }
    }

    /// Cross-key consistency.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for key in KEYS {
            self.check_key(key)?;
        }
        let warm = self.train.warmup_epochs;
        for (name, epochs) in [
            ("pretrain", self.pretrain.epochs),
            ("finetune", self.finetune.epochs),
            ("student", self.student.epochs),
        ] {
            if epochs < warm {
                return Err(format!("{name}.epochs = {epochs} is below train.warmup_epochs = {warm}"));
            }
        }
        if self.augment.crop_scale_min > self.augment.crop_scale_max {
            return Err("augment.crop_scale_min exceeds augment.crop_scale_max".into());
        }
        for (name, len) in [
            ("pretrain.clip_len", self.pretrain.clip_len),
            ("finetune.clip_len", self.finetune.clip_len),
            ("student.clip_len", self.student.clip_len),
        ] {
            if len == 0 || len % crate::encoder::TEMPORAL_STRIDE != 0 {
                return Err(format!(
                    "{name} = {len} must be a positive multiple of {}",
                    crate::encoder::TEMPORAL_STRIDE
                ));
            }
        }
        if self.eval.num_clips == 0 || !(1..=3).contains(&self.eval.num_scales) {
            return Err("eval.num_clips must be >= 1 and eval.num_scales in 1..=3".into());
        }
        if self.finetune.repeats == 0 || self.student.labeled_per_batch == 0 {
            return Err("finetune.repeats and student.labeled_per_batch must be >= 1".into());
        }
        if self.student.labeled_per_batch > self.train.batch_size {
            return Err("student.labeled_per_batch exceeds train.batch_size".into());
        }
        self.encoder_config(2).validate().map_err(|e| e.to_string())?;
        self.synth_spec().validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn synth_spec(&self) -> SynthSpec {
        let s = &self.synth;
        SynthSpec {
            num_classes_atomic: s.num_classes_atomic,
            num_classes_composite: s.num_classes_composite,
            videos_per_class: s.videos_per_class,
            t: s.t,
            h: s.h,
            w: s.w,
            channels: s.channels,
            phases: self.n,
            noise_std: s.noise_std,
            seed: self.seed,
        }
    }

    /// Same corpus recipe with an independent seed and the held-out size.
    pub fn test_synth_spec(&self) -> SynthSpec {
        SynthSpec {
            videos_per_class: self.synth.test_videos_per_class,
            seed: self.seed ^ 0x7E57_7E57_7E57_7E57,
            ..self.synth_spec()
        }
    }

    pub fn encoder_config(&self, num_classes: usize) -> EncoderConfig {
        EncoderConfig {
            in_channels: self.synth.channels,
            input_size: self.model.input_size,
            widths: self.model.widths,
            groups: self.model.groups,
            proj_dim: self.model.proj_dim,
            num_classes,
        }
    }

    /// Augmentation template; the trainer draws per-clip randomness itself.
    pub fn augment_spec(&self) -> AugmentSpec {
        let a = &self.augment;
        AugmentSpec {
            crop: CropSpec {
                enabled: true,
                out_h: self.model.input_size,
                out_w: self.model.input_size,
                scale_min: a.crop_scale_min,
                scale_max: a.crop_scale_max,
            },
            horizontal_flip: a.flip,
            grayscale: a.grayscale,
            color_jitter: ColorJitter {
                brightness: a.brightness,
                contrast: a.contrast,
                saturation: a.saturation,
            },
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = Config::parse_str("", Path::new("x")).unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.n, 4);
        assert_eq!(cfg.train.tau, 0.1);
        assert_eq!(cfg.train.omega, 1.0);
        assert_eq!(cfg.train.base_lr, 1e-3);
        assert_eq!(cfg.pretrain.clip_len, 16);
        assert_eq!(cfg.student.clip_len, 8);
    }

    #[test]
    fn negative_tau_is_rejected_with_line() {
        let err = Config::parse_str("seed = 1\n\ntrain.tau = -1\n", Path::new("c.cfg")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_and_bad_type() {
        assert!(matches!(
            Config::parse_str("nope = 1", Path::new("c")),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(Config::parse_str("clips.n = four", Path::new("c")).is_err());
        assert!(Config::parse_str("just words", Path::new("c")).is_err());
    }

    #[test]
    fn dump_round_trips() {
        let text = "# comment\nseed = 9\ntrain.distill = js\nmodel.widths = 2, 4, 8, 16\ndata.root = /tmp/x\n";
        let cfg = Config::parse_str(text, Path::new("c")).unwrap();
        let dumped = cfg.dump();
        let again = Config::parse_str(&dumped, Path::new("c")).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.dump(), dumped);
        assert_eq!(dumped.lines().count(), KEYS.len());
    }
}
