//! Patches, fixed 2-D sine-cosine positional embeddings and mask plans.
//!
//! Patches are numbered band-major: all time patches of grid row 0, then grid
//! row 1, and so on.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl PatchGrid {
    pub fn new(map_rows: usize, map_cols: usize, patch_rows: usize, patch_cols: usize) -> Result<Self> {
        if patch_rows == 0 || patch_cols == 0 {
            return Err(Error::config("patch size must be non-zero"));
        }
        if map_rows % patch_rows != 0 || map_cols % patch_cols != 0 {
            return Err(Error::shape(format!(
                "[{map_rows} x {map_cols}] map does not tile into ({patch_rows}, {patch_cols}) patches"
            )));
        }
        Ok(Self {
            patch_rows,
            patch_cols,
            grid_rows: map_rows / patch_rows,
            grid_cols: map_cols / patch_cols,
        })
    }

    pub fn n_patches(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_rows * self.patch_cols
    }

    pub fn map_rows(&self) -> usize {
        self.grid_rows * self.patch_rows
    }

    pub fn map_cols(&self) -> usize {
        self.grid_cols * self.patch_cols
    }

    /// `(grid_row, grid_col)` of patch `p`.
    pub fn position(&self, p: usize) -> (usize, usize) {
        (p / self.grid_cols, p % self.grid_cols)
    }
}

/// Patch vectors as a row-major `[n x dim]` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Patches {
    pub data: Vec<f64>,
    pub n: usize,
    pub dim: usize,
}

impl Patches {
    pub fn patch(&self, p: usize) -> &[f64] {
        &self.data[p * self.dim..(p + 1) * self.dim]
    }
}

/// Cut a row-major `[rows x cols]` map into patches; each patch is its
/// `r x c` block flattened row-major.
pub fn patchify(map: &[f64], rows: usize, cols: usize, grid: &PatchGrid) -> Result<Patches> {
    if map.len() != rows * cols || grid.map_rows() != rows || grid.map_cols() != cols {
        return Err(Error::shape(format!(
            "map [{rows} x {cols}] ({} cells) does not match grid {grid:?}",
            map.len()
        )));
    }
    let (r, c) = (grid.patch_rows, grid.patch_cols);
    let mut data = Vec::with_capacity(map.len());
    for p in 0..grid.n_patches() {
        let (gr, gc) = grid.position(p);
        for i in 0..r {
            let start = (gr * r + i) * cols + gc * c;
            data.extend_from_slice(&map[start..start + c]);
        }
    }
    Ok(Patches {
        data,
        n: grid.n_patches(),
        dim: grid.patch_dim(),
    })
}

pub fn unpatchify(patches: &Patches, grid: &PatchGrid) -> Result<Vec<f64>> {
    if patches.n != grid.n_patches() || patches.dim != grid.patch_dim() {
        return Err(Error::shape("patch set does not match grid"));
    }
    let (r, c) = (grid.patch_rows, grid.patch_cols);
    let cols = grid.map_cols();
    let mut map = vec![0.0; patches.data.len()];
    for p in 0..patches.n {
        let (gr, gc) = grid.position(p);
        let src = patches.patch(p);
        for i in 0..r {
            let start = (gr * r + i) * cols + gc * c;
            map[start..start + c].copy_from_slice(&src[i * c..(i + 1) * c]);
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    Random,
    RowWise,
    CrossScale,
    FrequencyGuided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    /// Sorted.
    pub masked: Vec<usize>,
    /// Sorted.
    pub visible: Vec<usize>,
    /// Achieved `|masked| / n_patches`.
    pub ratio: f64,
    pub target_ratio: f64,
    pub strategy: MaskStrategy,
    pub seed: u64,
}

impl MaskPlan {
    pub fn n_patches(&self) -> usize {
        self.masked.len() + self.visible.len()
    }

    /// Plan with the given masked set; the rest is visible.
    pub fn from_masked(n_patches: usize, mut masked: Vec<usize>) -> Result<Self> {
        masked.sort_unstable();
        masked.dedup();
        if masked.is_empty() || masked.len() >= n_patches || masked[masked.len() - 1] >= n_patches {
            return Err(Error::config(format!(
                "masked set of {} must be a proper non-empty subset of {n_patches} patches",
                masked.len()
            )));
        }
        let ratio = masked.len() as f64 / n_patches as f64;
        Ok(Self {
            visible: complement(n_patches, &masked),
            masked,
            ratio,
            target_ratio: ratio,
            strategy: MaskStrategy::Random,
            seed: 0,
        })
    }
}

fn complement(n: usize, sorted: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(n - sorted.len());
    let mut it = sorted.iter().peekable();
    for i in 0..n {
        if it.peek() == Some(&&i) {
            it.next();
        } else {
            out.push(i);
        }
    }
    out
}

/// Integer count in `1..=max-1` closest to `ratio * max`.
fn closest_count(ratio: f64, max: usize) -> Option<usize> {
    if max < 2 {
        return None;
    }
    Some(((ratio * max as f64).round() as usize).clamp(1, max - 1))
}

/// Draw a mask plan.
///
/// `row_weight` gives one weight per grid row; only the frequency-guided
/// strategy reads it (a patch is masked with probability increasing in its
/// row's weight, typically the band's upper frequency).
pub fn make_mask(
    grid: &PatchGrid,
    row_weight: &[f64],
    strategy: MaskStrategy,
    ratio: f64,
    seed: u64,
) -> Result<MaskPlan> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!("mask ratio {ratio} must lie in (0, 1)")));
    }
    let n = grid.n_patches();
    let target = (ratio * n as f64).round() as usize;
    if target == 0 || target >= n {
        return Err(Error::config(format!(
            "mask ratio {ratio} on {n} patches leaves an empty masked or visible set"
        )));
    }
    let mut rng = rng::rng(seed);
    let masked: Vec<usize> = match strategy {
        MaskStrategy::Random => index::sample(&mut rng, n, target).into_vec(),
        MaskStrategy::RowWise => {
            let k = closest_count(ratio, grid.grid_rows).ok_or_else(|| {
                Error::config("row-wise masking needs at least two grid rows")
            })?;
            index::sample(&mut rng, grid.grid_rows, k)
                .into_iter()
                .flat_map(|r| (0..grid.grid_cols).map(move |c| r * grid.grid_cols + c))
                .collect()
        }
        MaskStrategy::CrossScale => {
            let k = closest_count(ratio, grid.grid_cols).ok_or_else(|| {
                Error::config("cross-scale masking needs at least two grid columns")
            })?;
            index::sample(&mut rng, grid.grid_cols, k)
                .into_iter()
                .flat_map(|c| (0..grid.grid_rows).map(move |r| r * grid.grid_cols + c))
                .collect()
        }
        MaskStrategy::FrequencyGuided => {
            if row_weight.len() != grid.grid_rows {
                return Err(Error::shape(format!(
                    "{} row weights for {} grid rows",
                    row_weight.len(),
                    grid.grid_rows
                )));
            }
            if row_weight.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                return Err(Error::config("frequency-guided weights must be positive"));
            }
            // Weighted sampling without replacement: keep the `target` largest
            // keys u^(1/w).
            let mut keyed: Vec<(f64, usize)> = (0..n)
                .map(|p| {
                    let w = row_weight[grid.position(p).0];
                    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                    (u.ln() / w, p)
                })
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            keyed.into_iter().take(target).map(|(_, p)| p).collect()
        }
    };
    let mut plan = MaskPlan::from_masked(n, masked)?;
    plan.target_ratio = ratio;
    plan.strategy = strategy;
    plan.seed = seed;
    Ok(plan)
}

/// Per-grid-row masking weight: mean upper frequency of the map rows the grid
/// row spans.
pub fn grid_row_weights(grid: &PatchGrid, map_row_f_hi: &[f64]) -> Vec<f64> {
    map_row_f_hi
        .chunks(grid.patch_rows)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Fixed positional embedding table, `[n_patches x d_model]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PosEmbed {
    pub table: Vec<f64>,
    pub n: usize,
    pub d_model: usize,
}

impl PosEmbed {
    pub fn row(&self, p: usize) -> &[f64] {
        &self.table[p * self.d_model..(p + 1) * self.d_model]
    }
}

/// Standard 1-D sine-cosine code of `pos` into `out` (sines, then cosines).
fn sincos_1d(pos: f64, out: &mut [f64]) {
    let quarter = out.len() / 2;
    for i in 0..quarter {
        let omega = 1.0 / 10000f64.powf(i as f64 / quarter as f64);
        out[i] = (pos * omega).sin();
        out[quarter + i] = (pos * omega).cos();
    }
}

/// First half of each row encodes the time (grid column) index, second half
/// the band (grid row) index.
pub fn pos_embed(grid: &PatchGrid, d_model: usize) -> Result<PosEmbed> {
    if d_model == 0 || d_model % 4 != 0 {
        return Err(Error::config(format!(
            "positional embedding width {d_model} must be a positive multiple of 4"
        )));
    }
    let n = grid.n_patches();
    let half = d_model / 2;
    let mut table = vec![0.0; n * d_model];
    for (p, row) in table.chunks_mut(d_model).enumerate() {
        let (gr, gc) = grid.position(p);
        let (time, band) = row.split_at_mut(half);
        sincos_1d(gc as f64, time);
        sincos_1d(gr as f64, band);
    }
    Ok(PosEmbed {
        table,
        n,
        d_model,
    })
}
