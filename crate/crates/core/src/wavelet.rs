//! Periodized multilevel discrete wavelet transform.
//!
//! Filters are stored in correlation form: the analysis step computes
//! `a[k] = sum_i lo[i] * x[(2k + start + i) mod N]`, and synthesis is the
//! transpose of the analysis operator built from the dual filters. High-pass
//! filters are derived from the low-pass pair with the alternating flip
//! `hi[n] = (-1)^n * dual_lo[1 - n]`, which makes the analysis and synthesis
//! bases biorthogonal for every family here.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveletKind {
    Haar,
    Db4,
    #[serde(rename = "bior2_2", alias = "bior2.2")]
    Bior22,
    #[serde(rename = "bior4_4", alias = "bior4.4")]
    Bior44,
}

impl WaveletKind {
    pub const ALL: [WaveletKind; 4] = [
        WaveletKind::Haar,
        WaveletKind::Db4,
        WaveletKind::Bior22,
        WaveletKind::Bior44,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WaveletKind::Haar => "haar",
            WaveletKind::Db4 => "db4",
            WaveletKind::Bior22 => "bior2_2",
            WaveletKind::Bior44 => "bior4_4",
        }
    }

    pub fn is_orthogonal(self) -> bool {
        matches!(self, WaveletKind::Haar | WaveletKind::Db4)
    }

    pub fn family(self) -> WaveletFamily {
        WaveletFamily::new(self)
    }
}

impl fmt::Display for WaveletKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WaveletKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haar" => Ok(WaveletKind::Haar),
            "db4" => Ok(WaveletKind::Db4),
            "bior2_2" | "bior2.2" => Ok(WaveletKind::Bior22),
            "bior4_4" | "bior4.4" => Ok(WaveletKind::Bior44),
            other => Err(Error::config(format!("unknown wavelet family {other:?}"))),
        }
    }
}

/// A finite filter with taps at indices `start .. start + taps.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub taps: Vec<f64>,
    pub start: isize,
}

impl Filter {
    fn new(taps: Vec<f64>, start: isize) -> Self {
        Self { taps, start }
    }

    /// `(-1)^n * self[1 - n]`.
    fn alternating_flip(&self) -> Filter {
        let len = self.taps.len() as isize;
        let start = 1 - (self.start + len - 1);
        let taps = (0..len)
            .map(|i| {
                let n = start + i;
                let sign = if n.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                sign * self.taps[(1 - n - self.start) as usize]
            })
            .collect();
        Filter { taps, start }
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFamily {
    pub kind: WaveletKind,
    pub dec_lo: Filter,
    pub dec_hi: Filter,
    pub rec_lo: Filter,
    pub rec_hi: Filter,
}

// Daubechies 8-tap (four vanishing moments) scaling filter, sum sqrt(2).
const DB4: [f64; 8] = [
    0.230_377_813_308_896_5,
    0.714_846_570_552_915_7,
    0.630_880_767_929_858_9,
    -0.027_983_769_416_859_854,
    -0.187_034_811_719_093_1,
    0.030_841_381_835_560_764,
    0.032_883_011_666_885_2,
    -0.010_597_401_785_069_032,
];

// CDF 9/7 analysis and synthesis low-pass filters, centred.
const BIOR44_DEC: [f64; 9] = [
    0.037_828_455_507_264_04,
    -0.023_849_465_019_556_843,
    -0.110_624_404_418_437_18,
    0.377_402_855_612_830_66,
    0.852_698_679_008_893_8,
    0.377_402_855_612_830_66,
    -0.110_624_404_418_437_18,
    -0.023_849_465_019_556_843,
    0.037_828_455_507_264_04,
];
const BIOR44_REC: [f64; 7] = [
    -0.064_538_882_628_697_06,
    -0.040_689_417_609_164_06,
    0.418_092_273_221_617_24,
    0.788_485_616_405_582_9,
    0.418_092_273_221_617_24,
    -0.040_689_417_609_164_06,
    -0.064_538_882_628_697_06,
];

impl WaveletFamily {
    pub fn new(kind: WaveletKind) -> Self {
        let (dec_lo, rec_lo) = match kind {
            WaveletKind::Haar => {
                let f = Filter::new(vec![SQRT_2 / 2.0; 2], 0);
                (f.clone(), f)
            }
            WaveletKind::Db4 => {
                let f = Filter::new(DB4.to_vec(), 0);
                (f.clone(), f)
            }
            WaveletKind::Bior22 => (
                Filter::new(
                    [-0.125, 0.25, 0.75, 0.25, -0.125]
                        .iter()
                        .map(|v| v * SQRT_2)
                        .collect(),
                    -2,
                ),
                Filter::new([0.25, 0.5, 0.25].iter().map(|v| v * SQRT_2).collect(), -1),
            ),
            WaveletKind::Bior44 => (
                Filter::new(BIOR44_DEC.to_vec(), -4),
                Filter::new(BIOR44_REC.to_vec(), -3),
            ),
        };
        let dec_hi = rec_lo.alternating_flip();
        let rec_hi = dec_lo.alternating_flip();
        Self {
            kind,
            dec_lo,
            dec_hi,
            rec_lo,
            rec_hi,
        }
    }

    /// Filter length used for depth limits (longest support, rounded up to
    /// even).
    pub fn filter_len(&self) -> usize {
        let l = self.dec_lo.taps.len().max(self.rec_lo.taps.len());
        l + l % 2
    }

    /// Deepest level `J` such that every level's input is at least as long as
    /// the filter.
    pub fn max_level(&self, len: usize) -> usize {
        let fl = self.filter_len();
        let mut j = 0;
        let mut n = len;
        while n >= fl && n % 2 == 0 {
            j += 1;
            n /= 2;
        }
        j
    }
}

fn analyze(x: &[f64], filter: &Filter, out: &mut [f64]) {
    let n = x.len() as isize;
    for (k, o) in out.iter_mut().enumerate() {
        let base = 2 * k as isize + filter.start;
        *o = filter
            .taps
            .iter()
            .enumerate()
            .map(|(i, t)| t * x[(base + i as isize).rem_euclid(n) as usize])
            .sum();
    }
}

fn synthesize(coeffs: &[f64], filter: &Filter, out: &mut [f64]) {
    let n = out.len() as isize;
    for (k, c) in coeffs.iter().enumerate() {
        let base = 2 * k as isize + filter.start;
        for (i, t) in filter.taps.iter().enumerate() {
            out[(base + i as isize).rem_euclid(n) as usize] += t * c;
        }
    }
}

/// One analysis level: returns `(approx, detail)`, each half the input length.
pub fn dwt_single(signal: &[f64], family: &WaveletFamily) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = signal.len();
    if n == 0 || n % 2 != 0 {
        return Err(Error::shape(format!("dwt input length {n} must be even and non-zero")));
    }
    if n < family.filter_len() {
        return Err(Error::shape(format!(
            "dwt input length {n} shorter than {} filter ({} taps)",
            family.kind,
            family.filter_len()
        )));
    }
    let mut approx = vec![0.0; n / 2];
    let mut detail = vec![0.0; n / 2];
    analyze(signal, &family.dec_lo, &mut approx);
    analyze(signal, &family.dec_hi, &mut detail);
    Ok((approx, detail))
}

pub fn idwt_single(approx: &[f64], detail: &[f64], family: &WaveletFamily) -> Result<Vec<f64>> {
    if approx.len() != detail.len() {
        return Err(Error::shape(format!(
            "approx length {} != detail length {}",
            approx.len(),
            detail.len()
        )));
    }
    let mut out = vec![0.0; 2 * approx.len()];
    synthesize(approx, &family.rec_lo, &mut out);
    synthesize(detail, &family.rec_hi, &mut out);
    Ok(out)
}

/// Multilevel decomposition. `details[0]` is level 1 (finest).
#[derive(Debug, Clone, PartialEq)]
pub struct DwtDecomposition {
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
    pub level: usize,
    pub family: WaveletKind,
    pub original_len: usize,
    /// Length actually decomposed; exceeds `original_len` when the signal was
    /// edge-padded to a multiple of `2^level`.
    pub padded_len: usize,
}

impl DwtDecomposition {
    pub fn detail(&self, level: usize) -> &[f64] {
        &self.details[level - 1]
    }

    pub fn coefficient_count(&self) -> usize {
        self.approx.len() + self.details.iter().map(Vec::len).sum::<usize>()
    }

    pub fn energy(&self) -> f64 {
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        sq(&self.approx) + self.details.iter().map(|d| sq(d)).sum::<f64>()
    }
}

pub fn wavedec(signal: &[f64], kind: WaveletKind, level: usize) -> Result<DwtDecomposition> {
    let family = kind.family();
    let t = signal.len();
    if level == 0 {
        return Err(Error::config("decomposition level must be >= 1"));
    }
    if t % (1usize << level.min(63)) != 0 {
        return Err(Error::shape(format!(
            "length {t} not divisible by 2^{level}"
        )));
    }
    let max = family.max_level(t);
    if level > max {
        return Err(Error::config(format!(
            "level {level} too deep for {kind} on length {t} (max {max})"
        )));
    }
    let mut details = Vec::with_capacity(level);
    let mut approx = signal.to_vec();
    for _ in 0..level {
        let (a, d) = dwt_single(&approx, &family)?;
        details.push(d);
        approx = a;
    }
    Ok(DwtDecomposition {
        approx,
        details,
        level,
        family: kind,
        original_len: t,
        padded_len: t,
    })
}

/// Like [`wavedec`], but right-pads by edge replication to the next multiple
/// of `2^level` when needed. [`waverec`] trims the padding again.
pub fn wavedec_padded(signal: &[f64], kind: WaveletKind, level: usize) -> Result<DwtDecomposition> {
    if signal.is_empty() {
        return Err(Error::shape("empty signal"));
    }
    let block = 1usize << level.min(63);
    let t = signal.len();
    let padded_len = t.div_ceil(block) * block;
    if padded_len == t {
        return wavedec(signal, kind, level);
    }
    let mut padded = signal.to_vec();
    padded.resize(padded_len, signal[t - 1]);
    let mut dec = wavedec(&padded, kind, level)?;
    dec.original_len = t;
    Ok(dec)
}

pub fn waverec(dec: &DwtDecomposition) -> Result<Vec<f64>> {
    if dec.details.len() != dec.level {
        return Err(Error::shape(format!(
            "{} detail bands for level {}",
            dec.details.len(),
            dec.level
        )));
    }
    let family = dec.family.family();
    let mut approx = dec.approx.clone();
    for j in (0..dec.level).rev() {
        let expected = dec.padded_len >> (j + 1);
        if dec.details[j].len() != expected || approx.len() != expected {
            return Err(Error::shape(format!(
                "level {} band lengths ({}, {}) != {expected}",
                j + 1,
                approx.len(),
                dec.details[j].len()
            )));
        }
        approx = idwt_single(&approx, &dec.details[j], &family)?;
    }
    approx.truncate(dec.original_len);
    Ok(approx)
}

/// A subband of a `J`-level decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "level")]
pub enum Band {
    Detail(usize),
    Approx(usize),
}

impl Band {
    /// Decimation factor of the band relative to the input signal.
    pub fn factor(self) -> usize {
        match self {
            Band::Detail(j) | Band::Approx(j) => 1 << j,
        }
    }

    pub fn name(self) -> String {
        match self {
            Band::Detail(j) => format!("d{j}"),
            Band::Approx(j) => format!("a{j}"),
        }
    }
}

/// Nominal frequency support of a band: detail level `j` covers
/// `(fs/2^(j+1), fs/2^j]`, the approximation at level `J` covers
/// `[0, fs/2^(J+1)]`.
pub fn band_frequency_range(band: Band, fs_hz: f64) -> (f64, f64) {
    match band {
        Band::Detail(j) => (fs_hz / (1u64 << (j + 1)) as f64, fs_hz / (1u64 << j) as f64),
        Band::Approx(j) => (0.0, fs_hz / (1u64 << (j + 1)) as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_signal(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::rng(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn orthogonal_filter_normalization() {
        for kind in [WaveletKind::Haar, WaveletKind::Db4] {
            let f = kind.family();
            assert!((f.dec_lo.energy() - 1.0).abs() < 1e-12, "{kind}");
            assert!((f.dec_lo.sum() - SQRT_2).abs() < 1e-12, "{kind}");
            assert_eq!(f.dec_lo, f.rec_lo);
            assert_eq!(f.dec_hi, f.rec_hi);
        }
    }

    #[test]
    fn biorthogonal_filters_sum_to_sqrt2() {
        for kind in [WaveletKind::Bior22, WaveletKind::Bior44] {
            let f = kind.family();
            assert!((f.dec_lo.sum() - SQRT_2).abs() < 1e-12, "{kind}");
            assert!((f.rec_lo.sum() - SQRT_2).abs() < 1e-12, "{kind}");
            assert!(f.dec_hi.sum().abs() < 1e-10);
            assert!(f.rec_hi.sum().abs() < 1e-10);
        }
    }

    #[test]
    fn haar_two_samples() {
        let (a, d) = dwt_single(&[4.0, 2.0], &WaveletKind::Haar.family()).unwrap();
        assert!((a[0] - 6.0 / SQRT_2).abs() < 1e-15);
        assert!((d[0] - 2.0 / SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn haar_constant_has_zero_detail() {
        let x = vec![3.5; 16];
        let (a, d) = dwt_single(&x, &WaveletKind::Haar.family()).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
        assert!(a.iter().all(|&v| (v - 3.5 * SQRT_2).abs() < 1e-12));
    }

    #[test]
    fn haar_pairwise_identity() {
        let x = random_signal(64, 5);
        let (a, d) = dwt_single(&x, &WaveletKind::Haar.family()).unwrap();
        for k in 0..32 {
            assert!((a[k] - (x[2 * k] + x[2 * k + 1]) / SQRT_2).abs() < 1e-15);
            assert!((d[k] - (x[2 * k] - x[2 * k + 1]) / SQRT_2).abs() < 1e-15);
        }
    }

    #[test]
    fn single_level_energy_for_orthogonal() {
        for kind in [WaveletKind::Haar, WaveletKind::Db4] {
            let x = random_signal(64, 11);
            let (a, d) = dwt_single(&x, &kind.family()).unwrap();
            let e = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>();
            assert!((e(&a) + e(&d) - e(&x)).abs() < 1e-9);
        }
    }

    #[test]
    fn single_level_round_trip() {
        for kind in WaveletKind::ALL {
            let f = kind.family();
            let x = random_signal(64, 2);
            let (a, d) = dwt_single(&x, &f).unwrap();
            let y = idwt_single(&a, &d, &f).unwrap();
            assert!(max_abs_diff(&x, &y) < 1e-9, "{kind}");
        }
    }

    #[test]
    fn haar_inverse_of_scaled_constant() {
        let y = idwt_single(&[SQRT_2 * 2.5], &[0.0], &WaveletKind::Haar.family()).unwrap();
        assert!((y[0] - 2.5).abs() < 1e-15 && (y[1] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn zero_coefficients_give_zero_signal() {
        for kind in WaveletKind::ALL {
            let y = idwt_single(&[0.0; 8], &[0.0; 8], &kind.family()).unwrap();
            assert!(y.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn shape_errors() {
        let f = WaveletKind::Haar.family();
        assert!(matches!(dwt_single(&[1.0, 2.0, 3.0], &f), Err(Error::Shape(_))));
        assert!(matches!(idwt_single(&[1.0], &[1.0, 2.0], &f), Err(Error::Shape(_))));
    }

    #[test]
    fn band_lengths_t1000_j3() {
        let x = random_signal(1000, 3);
        let dec = wavedec(&x, WaveletKind::Haar, 3).unwrap();
        assert_eq!(dec.detail(1).len(), 500);
        assert_eq!(dec.detail(2).len(), 250);
        assert_eq!(dec.detail(3).len(), 125);
        assert_eq!(dec.approx.len(), 125);
        assert_eq!(dec.coefficient_count(), 1000);
    }

    #[test]
    fn non_divisible_and_too_deep_are_rejected() {
        let x = random_signal(1000, 3);
        assert!(matches!(wavedec(&x, WaveletKind::Haar, 5), Err(Error::Shape(_))));
        let y = random_signal(64, 3);
        // db4 (8 taps) on 64 samples supports at most 4 levels.
        assert_eq!(WaveletKind::Db4.family().max_level(64), 4);
        assert!(matches!(wavedec(&y, WaveletKind::Db4, 5), Err(Error::Config(_))));
    }

    #[test]
    fn padded_decomposition_round_trips() {
        let x = random_signal(1000, 8);
        for kind in WaveletKind::ALL {
            let dec = wavedec_padded(&x, kind, 5).unwrap();
            assert_eq!(dec.padded_len, 1024);
            assert_eq!(dec.approx.len(), 32);
            let y = waverec(&dec).unwrap();
            assert_eq!(y.len(), 1000);
            assert!(max_abs_diff(&x, &y) < 1e-9, "{kind}");
        }
    }

    #[test]
    fn db4_multilevel_energy() {
        let x = random_signal(512, 4);
        let dec = wavedec(&x, WaveletKind::Db4, 4).unwrap();
        let ex: f64 = x.iter().map(|v| v * v).sum();
        assert!((dec.energy() - ex).abs() < 1e-9);
    }

    #[test]
    fn haar_approx_only_gives_block_means() {
        let x = random_signal(64, 12);
        let mut dec = wavedec(&x, WaveletKind::Haar, 3).unwrap();
        for d in &mut dec.details {
            d.iter_mut().for_each(|v| *v = 0.0);
        }
        let y = waverec(&dec).unwrap();
        for (block, out) in x.chunks(8).zip(y.chunks(8)) {
            let mean = block.iter().sum::<f64>() / 8.0;
            assert!(out.iter().all(|v| (v - mean).abs() < 1e-12));
        }
    }

    #[test]
    fn haar_details_only_sum_to_zero() {
        let x = random_signal(64, 13);
        let mut dec = wavedec(&x, WaveletKind::Haar, 3).unwrap();
        dec.approx.iter_mut().for_each(|v| *v = 0.0);
        let y = waverec(&dec).unwrap();
        assert!(y.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn band_ranges_at_100hz() {
        assert_eq!(band_frequency_range(Band::Detail(1), 100.0), (25.0, 50.0));
        assert_eq!(band_frequency_range(Band::Detail(2), 100.0), (12.5, 25.0));
        assert_eq!(band_frequency_range(Band::Detail(3), 100.0), (6.25, 12.5));
        assert_eq!(band_frequency_range(Band::Approx(3), 100.0), (0.0, 6.25));
        // Both of the two finest details lie above a 10 Hz upper cutoff.
        assert!(band_frequency_range(Band::Detail(1), 100.0).0 >= 10.0);
        assert!(band_frequency_range(Band::Detail(2), 100.0).0 >= 10.0);
        assert!(band_frequency_range(Band::Detail(3), 100.0).0 < 10.0);
    }

    #[test]
    fn parse_names() {
        assert_eq!("bior2.2".parse::<WaveletKind>().unwrap(), WaveletKind::Bior22);
        assert_eq!("bior4_4".parse::<WaveletKind>().unwrap(), WaveletKind::Bior44);
        assert!("sym5".parse::<WaveletKind>().is_err());
    }
}
