use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::block::{FusionKind, KernelCombo};
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::model::{MarginKind, MarginLossConfig, StageSpec, TinyNetConfig};

pub const CONFIG_ECHO: &str = "config.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    Single,
    Double,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            _ => Err(Error::Config(format!("unknown precision {s:?}"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Single => "single",
            Precision::Double => "double",
        })
    }
}

/// Every knob of a training run. Text form is one `key = value` per line;
/// `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,

    pub kind: FusionKind,
    pub combo: KernelCombo,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub stage_blocks: Vec<usize>,
    pub stage_channels: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub embed_dim: usize,
    pub reduction: usize,
    pub min_width: usize,

    pub loss: MarginKind,
    pub scale: f64,
    /// Margins left unset take the defaults of the loss kind.
    pub m1: Option<f64>,
    pub m2: Option<f64>,
    pub m3: Option<f64>,

    pub identities: usize,
    pub samples_per_identity: usize,
    pub image_size: usize,
    pub channels: usize,
    pub noise: f64,
    pub max_shift: usize,
    /// Read images from here instead of generating them.
    pub data_dir: Option<PathBuf>,

    pub heldout_per_identity: usize,
    pub far_target: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            precision: Precision::Single,
            epochs: 20,
            batch_size: 32,
            lr_init: 0.02,
            lr_min: 5e-6,
            momentum: 0.9,
            weight_decay: 5e-4,
            kind: FusionKind::MsConv,
            combo: KernelCombo::K3K5,
            stem_channels: 16,
            stem_stride: 1,
            stage_blocks: vec![1],
            stage_channels: vec![32],
            stage_strides: vec![2],
            embed_dim: 64,
            reduction: 16,
            min_width: 32,
            loss: MarginKind::Cos,
            scale: 64.0,
            m1: None,
            m2: None,
            m3: None,
            identities: 10,
            samples_per_identity: 50,
            image_size: 32,
            channels: 3,
            noise: 0.2,
            max_shift: 2,
            data_dir: None,
            heldout_per_identity: 5,
            far_target: 1e-3,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub const KEYS: [&'static str; 32] = [
        "seed",
        "precision",
        "epochs",
        "batch_size",
        "lr_init",
        "lr_min",
        "momentum",
        "weight_decay",
        "kind",
        "combo",
        "stem_channels",
        "stem_stride",
        "stage_blocks",
        "stage_channels",
        "stage_strides",
        "embed_dim",
        "reduction",
        "min_width",
        "loss",
        "scale",
        "m1",
        "m2",
        "m3",
        "identities",
        "samples_per_identity",
        "image_size",
        "channels",
        "noise",
        "max_shift",
        "data_dir",
        "heldout_per_identity",
        "far_target",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "precision" => self.precision = v.parse()?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr_init" => self.lr_init = parse(key, v)?,
            "lr_min" => self.lr_min = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "kind" => self.kind = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "combo" => self.combo = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "stem_channels" => self.stem_channels = parse(key, v)?,
            "stem_stride" => self.stem_stride = parse(key, v)?,
            "stage_blocks" => self.stage_blocks = parse_list(key, v)?,
            "stage_channels" => self.stage_channels = parse_list(key, v)?,
            "stage_strides" => self.stage_strides = parse_list(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "reduction" => self.reduction = parse(key, v)?,
            "min_width" => self.min_width = parse(key, v)?,
            "loss" => self.loss = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "scale" => self.scale = parse(key, v)?,
            "m1" => self.m1 = Some(parse(key, v)?),
            "m2" => self.m2 = Some(parse(key, v)?),
            "m3" => self.m3 = Some(parse(key, v)?),
            "identities" => self.identities = parse(key, v)?,
            "samples_per_identity" => self.samples_per_identity = parse(key, v)?,
            "image_size" => self.image_size = parse(key, v)?,
            "channels" => self.channels = parse(key, v)?,
            "noise" => self.noise = parse(key, v)?,
            "max_shift" => self.max_shift = parse(key, v)?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "heldout_per_identity" => self.heldout_per_identity = parse(key, v)?,
            "far_target" => self.far_target = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let margin = |m: Option<f64>, d: f64| m.unwrap_or(d).to_string();
        let defaults = MarginLossConfig::new(self.loss, 1);
        Some(match key {
            "seed" => self.seed.to_string(),
            "precision" => self.precision.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr_init" => self.lr_init.to_string(),
            "lr_min" => self.lr_min.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "kind" => self.kind.to_string(),
            "combo" => self.combo.name().to_string(),
            "stem_channels" => self.stem_channels.to_string(),
            "stem_stride" => self.stem_stride.to_string(),
            "stage_blocks" => list(&self.stage_blocks),
            "stage_channels" => list(&self.stage_channels),
            "stage_strides" => list(&self.stage_strides),
            "embed_dim" => self.embed_dim.to_string(),
            "reduction" => self.reduction.to_string(),
            "min_width" => self.min_width.to_string(),
            "loss" => self.loss.to_string(),
            "scale" => self.scale.to_string(),
            "m1" => margin(self.m1, defaults.m1),
            "m2" => margin(self.m2, defaults.m2),
            "m3" => margin(self.m3, defaults.m3),
            "identities" => self.identities.to_string(),
            "samples_per_identity" => self.samples_per_identity.to_string(),
            "image_size" => self.image_size.to_string(),
            "channels" => self.channels.to_string(),
            "noise" => self.noise.to_string(),
            "max_shift" => self.max_shift.to_string(),
            "data_dir" => self
                .data_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "heldout_per_identity" => self.heldout_per_identity.to_string(),
            "far_target" => self.far_target.to_string(),
            _ => return None,
        })
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr_init > 0.0 && self.lr_min > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.lr_min < self.lr_init) {
            return bad("lr_min must be below lr_init");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        let n = self.stage_blocks.len();
        if self.stage_channels.len() != n || self.stage_strides.len() != n {
            return bad("stage_blocks, stage_channels and stage_strides need equal lengths");
        }
        if !(self.far_target > 0.0 && self.far_target < 1.0) {
            return bad("far_target must lie in (0, 1)");
        }
        if self.heldout_per_identity < 2 {
            return bad("heldout_per_identity must be at least 2");
        }
        self.model_config().validate()?;
        self.loss_config(self.identities.max(1)).validate()?;
        if self.data_dir.is_none() {
            self.synthetic_spec().validate()?;
        }
        Ok(())
    }

    pub fn model_config(&self) -> TinyNetConfig {
        let stages = self
            .stage_blocks
            .iter()
            .zip(&self.stage_channels)
            .zip(&self.stage_strides)
            .map(|((&blocks, &channels), &stride)| StageSpec {
                blocks,
                channels,
                stride,
                kind: self.kind,
            })
            .collect();
        TinyNetConfig {
            in_channels: self.channels,
            stem_channels: self.stem_channels,
            stem_stride: self.stem_stride,
            stages,
            embed_dim: self.embed_dim,
            combo: self.combo,
            reduction: self.reduction,
            min_width: self.min_width,
        }
    }

    pub fn loss_config(&self, classes: usize) -> MarginLossConfig {
        let mut c = MarginLossConfig::new(self.loss, classes);
        c.scale = self.scale;
        c.m1 = self.m1.unwrap_or(c.m1);
        c.m2 = self.m2.unwrap_or(c.m2);
        c.m3 = self.m3.unwrap_or(c.m3);
        c
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            identities: self.identities,
            samples_per_identity: self.samples_per_identity,
            height: self.image_size,
            width: self.image_size,
            channels: self.channels,
            noise: self.noise,
            max_shift: self.max_shift,
            seed: self.seed,
        }
    }
}
