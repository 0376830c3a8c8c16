//! Run configuration: one strict JSON document shared by every command.

use std::fmt;
use std::path::Path;

use mmr_core::coeffmap::{Interp, Norm};
use mmr_core::eval::{ProbeConfig, TaskKind};
use mmr_core::model::{ArchConfig, Mode};
use mmr_core::pipeline::{patch_dim, MapConfig, TokenConfig};
use mmr_core::preprocess::PreprocessConfig;
use mmr_core::synth::CohortSpec;
use mmr_core::tokenizer::MaskStrategy;
use mmr_core::train::TrainConfig;
use mmr_core::wavelet::WaveletKind;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// A config that failed to parse or validate. `path` is the dotted location
/// of the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config at `{}`: {}", self.path, self.message)
    }
}

impl std::error::Error for SchemaError {}

fn schema(path: &str, e: impl fmt::Display) -> SchemaError {
    SchemaError {
        path: path.to_string(),
        message: e.to_string(),
    }
}

/// Parse JSON text, reporting the path of the first bad field.
pub fn parse_strict<T: DeserializeOwned>(text: &str) -> Result<T, SchemaError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        schema(if path.is_empty() { "." } else { &path }, e.into_inner())
    })?;
    de.end().map_err(|e| schema(".", e))?;
    Ok(value)
}

pub fn read_strict<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("config: cannot read {}: {e}", path.display()))?;
    Ok(parse_strict(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub wavelet: WaveletConfig,
    #[serde(default)]
    pub map: MapSection,
    #[serde(default)]
    pub tokenizer: TokenConfig,
    #[serde(default)]
    pub arch: ArchSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_users: usize,
    pub segments_per_user: usize,
    pub cohort: CohortSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_users: 20,
            segments_per_user: 10,
            cohort: CohortSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveletConfig {
    pub family: WaveletKind,
    pub level: usize,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        let m = MapConfig::default();
        Self {
            family: m.family,
            level: m.level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapSection {
    pub bandpass_high_hz: f64,
    pub interp: Interp,
    pub norm: Norm,
}

impl Default for MapSection {
    fn default() -> Self {
        let m = MapConfig::default();
        Self {
            bandpass_high_hz: m.bandpass_high_hz,
            interp: m.interp,
            norm: m.norm,
        }
    }
}

/// A named preset with optional per-field overrides. `patch_dim` always
/// follows the tokenizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSection {
    pub preset: String,
    pub mode: Mode,
    pub enc_blocks: Option<usize>,
    pub enc_dim: Option<usize>,
    pub enc_heads: Option<usize>,
    pub enc_ffn: Option<usize>,
    pub dec_blocks: Option<usize>,
    pub dec_dim: Option<usize>,
    pub dec_heads: Option<usize>,
    pub dec_ffn: Option<usize>,
}

impl Default for ArchSection {
    fn default() -> Self {
        Self {
            preset: "mmr_light".into(),
            mode: Mode::Mmr,
            enc_blocks: None,
            enc_dim: None,
            enc_heads: None,
            enc_ffn: None,
            dec_blocks: None,
            dec_dim: None,
            dec_heads: None,
            dec_ffn: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    /// Key into each segment's `labels`.
    pub label: String,
    pub kind: TaskKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k_folds: usize,
    pub probe: ProbeConfig,
    pub tasks: Vec<TaskSpec>,
    pub histogram_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_folds: 5,
            probe: ProbeConfig::default(),
            tasks: vec![
                TaskSpec {
                    label: "class".into(),
                    kind: TaskKind::Classification,
                },
                TaskSpec {
                    label: "hr_bpm".into(),
                    kind: TaskKind::Regression,
                },
            ],
            histogram_bins: 20,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let cfg: Self = parse_strict(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let cfg: Self = read_strict(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn map_config(&self) -> MapConfig {
        MapConfig {
            family: self.wavelet.family,
            level: self.wavelet.level,
            bandpass_high_hz: self.map.bandpass_high_hz,
            interp: self.map.interp,
            norm: self.map.norm,
        }
    }

    pub fn arch_config(&self) -> Result<ArchConfig, SchemaError> {
        let a = &self.arch;
        let mut cfg = ArchConfig::preset(&a.preset, patch_dim(a.mode, &self.tokenizer))
            .map_err(|e| schema("arch.preset", e))?;
        cfg.mode = a.mode;
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut cfg.enc_blocks, a.enc_blocks);
        set(&mut cfg.enc_dim, a.enc_dim);
        set(&mut cfg.enc_heads, a.enc_heads);
        set(&mut cfg.enc_ffn, a.enc_ffn);
        set(&mut cfg.dec_blocks, a.dec_blocks);
        set(&mut cfg.dec_dim, a.dec_dim);
        set(&mut cfg.dec_heads, a.dec_heads);
        if a.dec_ffn.is_some() {
            cfg.dec_ffn = a.dec_ffn;
        }
        cfg.validate().map_err(|e| schema("arch", e))?;
        Ok(cfg)
    }

    /// Value checks that the type system does not cover.
    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.data.n_users == 0 {
            return Err(schema("data.n_users", "must be >= 1"));
        }
        if self.data.segments_per_user == 0 {
            return Err(schema("data.segments_per_user", "must be >= 1"));
        }
        self.preprocess
            .bandpass
            .validate(self.preprocess.target_fs_hz)
            .map_err(|e| schema("preprocess.bandpass", e))?;
        self.preprocess.sqi.validate().map_err(|e| schema("preprocess.sqi", e))?;
        if !(self.wavelet.level >= 1) {
            return Err(schema("wavelet.level", "must be >= 1"));
        }
        if !(self.map.bandpass_high_hz > 0.0) {
            return Err(schema("map.bandpass_high_hz", "must be positive"));
        }
        let t = &self.tokenizer;
        if t.patch_rows == 0 || t.patch_cols == 0 {
            return Err(schema("tokenizer", "patch_rows and patch_cols must be >= 1"));
        }
        if !(t.mask_ratio > 0.0 && t.mask_ratio < 1.0) {
            return Err(schema("tokenizer.mask_ratio", "must lie in (0, 1)"));
        }
        self.arch_config()?;
        self.train.validate().map_err(|e| schema("train", e))?;
        if self.eval.k_folds < 2 {
            return Err(schema("eval.k_folds", "must be >= 2"));
        }
        if self.eval.histogram_bins == 0 {
            return Err(schema("eval.histogram_bins", "must be >= 1"));
        }
        if self.eval.probe.iterations == 0 || !(self.eval.probe.lr > 0.0) {
            return Err(schema("eval.probe", "iterations and lr must be positive"));
        }
        Ok(())
    }
}

/// Axes of an ablation sweep. An empty axis means "the base config's value".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationGrid {
    pub family: Vec<WaveletKind>,
    pub level: Vec<usize>,
    /// `[patch_rows, patch_cols]` pairs.
    pub patch: Vec<(usize, usize)>,
    pub mask: Vec<MaskStrategy>,
    pub interp: Vec<Interp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub family: WaveletKind,
    pub level: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub mask: MaskStrategy,
    pub interp: Interp,
}

impl GridPoint {
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.wavelet.family = self.family;
        cfg.wavelet.level = self.level;
        cfg.tokenizer.patch_rows = self.patch_rows;
        cfg.tokenizer.patch_cols = self.patch_cols;
        cfg.tokenizer.mask_strategy = self.mask;
        cfg.map.interp = self.interp;
        cfg
    }
}

impl AblationGrid {
    /// Cartesian product in axis order family, level, patch, mask, interp.
    pub fn points(&self, base: &RunConfig) -> Vec<GridPoint> {
        fn or<T: Copy>(axis: &[T], dflt: T) -> Vec<T> {
            if axis.is_empty() {
                vec![dflt]
            } else {
                axis.to_vec()
            }
        }
        let families = or(&self.family, base.wavelet.family);
        let levels = or(&self.level, base.wavelet.level);
        let patches = or(&self.patch, (base.tokenizer.patch_rows, base.tokenizer.patch_cols));
        let masks = or(&self.mask, base.tokenizer.mask_strategy);
        let interps = or(&self.interp, base.map.interp);
        let mut out = Vec::new();
        for &family in &families {
            for &level in &levels {
                for &(patch_rows, patch_cols) in &patches {
                    for &mask in &masks {
                        for &interp in &interps {
                            out.push(GridPoint {
                                family,
                                level,
                                patch_rows,
                                patch_cols,
                                mask,
                                interp,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}
