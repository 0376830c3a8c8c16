//! Aligned 2-D wavelet coefficient maps: `[bands x T]`, finest retained band
//! on top, approximation at the bottom.

use serde::{Deserialize, Serialize};

use crate::preprocess::{mean_std, DEGENERATE_STD};
use crate::wavelet::{band_frequency_range, waverec, Band, DwtDecomposition, WaveletKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    ZeroOrder,
    Linear,
    Cubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    PerBandInstance,
    Global,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandMeta {
    pub band: Band,
    pub f_lo: f64,
    pub f_hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoeffMap {
    /// Row-major `[rows x cols]`.
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub band_meta: Vec<BandMeta>,
    pub interp: Interp,
    pub norm: Norm,
    /// `(mean, std)` removed from each row.
    pub norm_stats: Vec<(f64, f64)>,
    pub family: WaveletKind,
    pub level: usize,
    pub padded_len: usize,
}

impl CoeffMap {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Highest nominal frequency per row.
    pub fn row_f_hi(&self) -> Vec<f64> {
        self.band_meta.iter().map(|m| m.f_hi).collect()
    }
}

/// Bands of `dec` ordered finest detail first, approximation last, with the
/// detail bands entirely above `cutoff_hz` removed.
pub fn discard_out_of_band(
    dec: &DwtDecomposition,
    fs_hz: f64,
    cutoff_hz: f64,
) -> Result<Vec<(BandMeta, Vec<f64>)>> {
    let meta = |band| {
        let (f_lo, f_hi) = band_frequency_range(band, fs_hz);
        BandMeta { band, f_lo, f_hi }
    };
    let mut kept: Vec<(BandMeta, Vec<f64>)> = (1..=dec.level)
        .map(|j| (meta(Band::Detail(j)), dec.detail(j).to_vec()))
        .filter(|(m, _)| m.f_lo < cutoff_hz)
        .collect();
    if kept.is_empty() {
        return Err(Error::config(format!(
            "every detail band of the level-{} decomposition lies above {cutoff_hz} Hz",
            dec.level
        )));
    }
    kept.push((meta(Band::Approx(dec.level)), dec.approx.clone()));
    Ok(kept)
}

/// Stretch `coeffs` to `target_len` (a multiple of its length).
///
/// Linear and cubic modes place knot `k` at the centre of its block,
/// `(k + 0.5) * f - 0.5` in sample coordinates, and clamp beyond the outer
/// knots. Cubic uses Catmull-Rom segments.
pub fn interp_band(coeffs: &[f64], target_len: usize, mode: Interp) -> Result<Vec<f64>> {
    let n = coeffs.len();
    if n == 0 || target_len % n != 0 {
        return Err(Error::shape(format!(
            "cannot stretch {n} coefficients to {target_len}"
        )));
    }
    let f = target_len / n;
    if mode == Interp::ZeroOrder || n == 1 {
        return Ok(coeffs.iter().flat_map(|&c| std::iter::repeat_n(c, f)).collect());
    }
    let at = |k: isize| coeffs[k.clamp(0, n as isize - 1) as usize];
    Ok((0..target_len)
        .map(|i| {
            let pos = ((i as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let k = (pos.floor() as isize).min(n as isize - 2);
            let t = pos - k as f64;
            match mode {
                Interp::Linear => at(k) * (1.0 - t) + at(k + 1) * t,
                _ => {
                    let (p0, p1, p2, p3) = (at(k - 1), at(k), at(k + 1), at(k + 2));
                    let t2 = t * t;
                    let t3 = t2 * t;
                    0.5 * (2.0 * p1
                        + (p2 - p0) * t
                        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2
                        + (3.0 * (p1 - p2) + p3 - p0) * t3)
                }
            }
        })
        .collect())
}

/// Discard, stretch, stack and normalize. Maps of edge-padded decompositions
/// are cropped back to `original_len` columns.
pub fn build_map(
    dec: &DwtDecomposition,
    fs_hz: f64,
    cutoff_hz: f64,
    interp: Interp,
    norm: Norm,
) -> Result<CoeffMap> {
    let bands = discard_out_of_band(dec, fs_hz, cutoff_hz)?;
    let cols = dec.original_len;
    let rows = bands.len();
    let mut data = Vec::with_capacity(rows * cols);
    let mut band_meta = Vec::with_capacity(rows);
    for (meta, coeffs) in &bands {
        let stretched = interp_band(coeffs, dec.padded_len, interp)?;
        data.extend_from_slice(&stretched[..cols]);
        band_meta.push(*meta);
    }

    let norm_stats = match norm {
        Norm::None => vec![(0.0, 1.0); rows],
        Norm::PerBandInstance => {
            let mut stats = Vec::with_capacity(rows);
            for (r, meta) in band_meta.iter().enumerate() {
                let (mean, std) = mean_std(&data[r * cols..(r + 1) * cols]);
                if !(std >= DEGENERATE_STD) {
                    return Err(Error::DegenerateSegment(format!(
                        "band {} has standard deviation {std:e}",
                        meta.band.name()
                    )));
                }
                stats.push((mean, std));
            }
            stats
        }
        Norm::Global => {
            let (mean, std) = mean_std(&data);
            if !(std >= DEGENERATE_STD) {
                return Err(Error::DegenerateSegment(format!(
                    "coefficient map has standard deviation {std:e}"
                )));
            }
            vec![(mean, std); rows]
        }
    };
    if norm != Norm::None {
        for (row, &(mean, std)) in data.chunks_mut(cols).zip(&norm_stats) {
            row.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
    }

    Ok(CoeffMap {
        data,
        rows,
        cols,
        band_meta,
        interp,
        norm,
        norm_stats,
        family: dec.family,
        level: dec.level,
        padded_len: dec.padded_len,
    })
}

/// Undo normalization and interpolation, zero-fill discarded bands, and
/// reconstruct. Only zero-order maps are invertible.
///
/// For edge-padded decompositions the coefficients whose blocks start past
/// `cols` were cropped away; they are refilled with the last retained value.
pub fn invert_map(map: &CoeffMap) -> Result<Vec<f64>> {
    if map.interp != Interp::ZeroOrder {
        return Err(Error::config(format!(
            "{:?} interpolation is lossy; only zero-order maps can be inverted",
            map.interp
        )));
    }
    let mut details = vec![Vec::new(); map.level];
    let mut approx = Vec::new();
    for (r, meta) in map.band_meta.iter().enumerate() {
        let (mean, std) = map.norm_stats[r];
        let factor = meta.band.factor();
        let n_coeffs = map.padded_len / factor;
        let row = map.row(r);
        let coeffs: Vec<f64> = (0..n_coeffs)
            .map(|k| {
                let idx = (k * factor).min(map.cols - 1);
                row[idx] * std + mean
            })
            .collect();
        match meta.band {
            Band::Detail(j) => details[j - 1] = coeffs,
            Band::Approx(_) => approx = coeffs,
        }
    }
    for (j, d) in details.iter_mut().enumerate() {
        if d.is_empty() {
            *d = vec![0.0; map.padded_len >> (j + 1)];
        }
    }
    waverec(&DwtDecomposition {
        approx,
        details,
        level: map.level,
        family: map.family,
        original_len: map.cols,
        padded_len: map.padded_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::{wavedec, wavedec_padded};
    use rand::Rng;

    fn random_signal(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::rng(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn discard_keeps_two_bands_at_level3() {
        let dec = wavedec(&random_signal(1000, 1), WaveletKind::Haar, 3).unwrap();
        let kept = discard_out_of_band(&dec, 100.0, 10.0).unwrap();
        let bands: Vec<Band> = kept.iter().map(|(m, _)| m.band).collect();
        assert_eq!(bands, vec![Band::Detail(3), Band::Approx(3)]);
    }

    #[test]
    fn discard_keeps_three_bands_at_level4() {
        let dec = wavedec(&random_signal(1024, 1), WaveletKind::Haar, 4).unwrap();
        let kept = discard_out_of_band(&dec, 100.0, 10.0).unwrap();
        let bands: Vec<Band> = kept.iter().map(|(m, _)| m.band).collect();
        assert_eq!(bands, vec![Band::Detail(3), Band::Detail(4), Band::Approx(4)]);
    }

    #[test]
    fn cutoff_at_nyquist_keeps_everything() {
        let dec = wavedec(&random_signal(1000, 1), WaveletKind::Haar, 3).unwrap();
        assert_eq!(discard_out_of_band(&dec, 100.0, 50.0).unwrap().len(), 4);
    }

    #[test]
    fn all_details_dropped_is_an_error() {
        let dec = wavedec(&random_signal(1000, 1), WaveletKind::Haar, 2).unwrap();
        assert!(matches!(discard_out_of_band(&dec, 100.0, 10.0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_order_repeats() {
        assert_eq!(
            interp_band(&[1.0, 2.0], 4, Interp::ZeroOrder).unwrap(),
            vec![1.0, 1.0, 2.0, 2.0]
        );
        assert!(matches!(interp_band(&[1.0, 2.0, 3.0], 4, Interp::ZeroOrder), Err(Error::Shape(_))));
    }

    #[test]
    fn linear_uses_block_centres() {
        let y = interp_band(&[0.0, 1.0], 4, Interp::Linear).unwrap();
        let want = [0.0, 0.25, 0.75, 1.0];
        assert!(y.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15), "{y:?}");
    }

    #[test]
    fn constant_band_stays_constant() {
        for mode in [Interp::ZeroOrder, Interp::Linear, Interp::Cubic] {
            let y = interp_band(&[2.5; 5], 40, mode).unwrap();
            assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-12), "{mode:?}");
        }
    }

    #[test]
    fn cubic_passes_through_knots() {
        let c = random_signal(10, 4);
        let y = interp_band(&c, 40, Interp::Cubic).unwrap();
        // With factor 4 the knots fall half-way between samples 4k+1 and 4k+2;
        // check the interpolant is bracketed sensibly at the first knot pair.
        assert_eq!(y.len(), 40);
        let mid = 0.5 * (y[1] + y[2]);
        assert!((mid - c[0]).abs() < 0.5);
    }

    #[test]
    fn zero_order_then_decimate_is_identity() {
        let c = random_signal(125, 6);
        let y = interp_band(&c, 1000, Interp::ZeroOrder).unwrap();
        let back: Vec<f64> = y.iter().step_by(8).copied().collect();
        assert_eq!(back, c);
    }

    #[test]
    fn map_shape_and_order() {
        let dec = wavedec(&random_signal(1000, 2), WaveletKind::Haar, 3).unwrap();
        let map = build_map(&dec, 100.0, 10.0, Interp::ZeroOrder, Norm::PerBandInstance).unwrap();
        assert_eq!((map.rows, map.cols), (2, 1000));
        assert_eq!(map.band_meta[0].band, Band::Detail(3));
        assert_eq!(map.band_meta[1].band, Band::Approx(3));
        for w in map.band_meta.windows(2) {
            assert!(w[0].f_hi > w[1].f_hi);
        }
        for r in 0..map.rows {
            let (m, s) = mean_std(map.row(r));
            assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn map_is_deterministic() {
        let dec = wavedec(&random_signal(1000, 2), WaveletKind::Db4, 3).unwrap();
        let a = build_map(&dec, 100.0, 10.0, Interp::Cubic, Norm::Global).unwrap();
        let b = build_map(&dec, 100.0, 10.0, Interp::Cubic, Norm::Global).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_signal_is_degenerate() {
        let dec = wavedec(&[0.0; 1000], WaveletKind::Haar, 3).unwrap();
        let r = build_map(&dec, 100.0, 10.0, Interp::ZeroOrder, Norm::PerBandInstance);
        assert!(matches!(r, Err(Error::DegenerateSegment(_))));
    }

    #[test]
    fn lossless_inversion_without_discard_or_norm() {
        let x = random_signal(1000, 3);
        for kind in WaveletKind::ALL {
            let dec = wavedec(&x, kind, 3).unwrap();
            let map = build_map(&dec, 100.0, 50.0, Interp::ZeroOrder, Norm::None).unwrap();
            let y = invert_map(&map).unwrap();
            let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "{kind}: {err}");
        }
    }

    #[test]
    fn inversion_matches_zero_banded_oracle() {
        let mut x = vec![0.0; 1000];
        for i in (0..1000).step_by(73) {
            x[i] = 1.0;
        }
        let dec = wavedec(&x, WaveletKind::Haar, 3).unwrap();
        let map = build_map(&dec, 100.0, 10.0, Interp::ZeroOrder, Norm::PerBandInstance).unwrap();
        let y = invert_map(&map).unwrap();
        let mut oracle = dec.clone();
        oracle.details[0].iter_mut().for_each(|v| *v = 0.0);
        oracle.details[1].iter_mut().for_each(|v| *v = 0.0);
        let z = waverec(&oracle).unwrap();
        let err = y.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn padded_map_inverts_close_to_signal() {
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.05).sin()).collect();
        let dec = wavedec_padded(&x, WaveletKind::Haar, 5).unwrap();
        let map = build_map(&dec, 100.0, 50.0, Interp::ZeroOrder, Norm::None).unwrap();
        assert_eq!(map.cols, 1000);
        let y = invert_map(&map).unwrap();
        let err = x[..990].iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn non_zero_order_inversion_is_unsupported() {
        let dec = wavedec(&random_signal(1000, 2), WaveletKind::Haar, 3).unwrap();
        let map = build_map(&dec, 100.0, 10.0, Interp::Linear, Norm::None).unwrap();
        assert!(matches!(invert_map(&map), Err(Error::Config(_))));
    }
}
