//! Segment samples to model-ready patches.

use serde::{Deserialize, Serialize};

use crate::coeffmap::{build_map, CoeffMap, Interp, Norm};
use crate::model::Mode;
use crate::tokenizer::{grid_row_weights, make_mask, patchify, MaskPlan, MaskStrategy, PatchGrid, Patches};
use crate::wavelet::{wavedec_padded, WaveletKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub family: WaveletKind,
    pub level: usize,
    /// Detail bands starting at or above this frequency are dropped.
    pub bandpass_high_hz: f64,
    pub interp: Interp,
    pub norm: Norm,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            family: WaveletKind::Haar,
            level: 3,
            bandpass_high_hz: 10.0,
            interp: Interp::ZeroOrder,
            norm: Norm::PerBandInstance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenConfig {
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub mask_strategy: MaskStrategy,
    pub mask_ratio: f64,
}

impl Default for TokenConfig {
    fn default() -> Self {
        Self {
            patch_rows: 1,
            patch_cols: 25,
            mask_strategy: MaskStrategy::Random,
            mask_ratio: 0.75,
        }
    }
}

/// Patches of one segment with the grid they tile and the per-grid-row
/// masking weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub patches: Patches,
    pub grid: PatchGrid,
    pub row_weights: Vec<f64>,
}

impl Prepared {
    pub fn mask(&self, tok: &TokenConfig, seed: u64) -> Result<MaskPlan> {
        make_mask(&self.grid, &self.row_weights, tok.mask_strategy, tok.mask_ratio, seed)
    }
}

pub fn coefficient_map(samples: &[f64], fs_hz: f64, cfg: &MapConfig) -> Result<CoeffMap> {
    let dec = wavedec_padded(samples, cfg.family, cfg.level)?;
    build_map(&dec, fs_hz, cfg.bandpass_high_hz, cfg.interp, cfg.norm)
}

/// MMR mode cuts the coefficient map; MTR mode cuts the waveform itself as a
/// single-row map and ignores `patch_rows`.
pub fn prepare(
    samples: &[f64],
    fs_hz: f64,
    mode: Mode,
    map: &MapConfig,
    tok: &TokenConfig,
) -> Result<Prepared> {
    match mode {
        Mode::Mmr => {
            let m = coefficient_map(samples, fs_hz, map)?;
            let grid = PatchGrid::new(m.rows, m.cols, tok.patch_rows, tok.patch_cols)?;
            let patches = patchify(&m.data, m.rows, m.cols, &grid)?;
            let row_weights = grid_row_weights(&grid, &m.row_f_hi());
            Ok(Prepared {
                patches,
                grid,
                row_weights,
            })
        }
        Mode::Mtr => {
            if samples.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: "input waveform".into(),
                });
            }
            let grid = PatchGrid::new(1, samples.len(), 1, tok.patch_cols)?;
            let patches = patchify(samples, 1, samples.len(), &grid)?;
            Ok(Prepared {
                patches,
                grid,
                row_weights: vec![fs_hz / 2.0],
            })
        }
    }
}

/// Patch dimension produced by `prepare` for the given settings.
pub fn patch_dim(mode: Mode, tok: &TokenConfig) -> usize {
    match mode {
        Mode::Mmr => tok.patch_rows * tok.patch_cols,
        Mode::Mtr => tok.patch_cols,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_segment, SynthConfig};

    fn pulse() -> Vec<f64> {
        let seg = generate_segment(&SynthConfig::default()).unwrap();
        crate::preprocess::zscore(&seg.samples).unwrap()
    }

    #[test]
    fn default_pipeline_gives_80_patches() {
        let x = pulse();
        let p = prepare(&x, 100.0, Mode::Mmr, &MapConfig::default(), &TokenConfig::default()).unwrap();
        assert_eq!((p.patches.n, p.patches.dim), (80, 25));
        assert_eq!((p.grid.grid_rows, p.grid.grid_cols), (2, 40));
        assert!(p.row_weights[0] > p.row_weights[1]);
        let mask = p.mask(&TokenConfig::default(), 3).unwrap();
        assert_eq!(mask.masked.len(), 60);
    }

    #[test]
    fn mtr_uses_raw_waveform() {
        let x = pulse();
        let p = prepare(&x, 100.0, Mode::Mtr, &MapConfig::default(), &TokenConfig::default()).unwrap();
        assert_eq!((p.patches.n, p.patches.dim), (40, 25));
        assert_eq!(p.patches.data, x);
        assert_eq!(patch_dim(Mode::Mtr, &TokenConfig::default()), 25);
    }

    #[test]
    fn non_dyadic_lengths_use_padding() {
        let x = pulse();
        let cfg = MapConfig {
            level: 5,
            ..MapConfig::default()
        };
        let m = coefficient_map(&x, 100.0, &cfg).unwrap();
        assert_eq!(m.cols, 1000);
        assert_eq!(m.rows, 4);
    }

    #[test]
    fn grid_must_tile() {
        let x = pulse();
        let tok = TokenConfig {
            patch_cols: 30,
            ..TokenConfig::default()
        };
        let r = prepare(&x, 100.0, Mode::Mmr, &MapConfig::default(), &tok);
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
