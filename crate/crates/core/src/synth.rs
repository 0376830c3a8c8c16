//! Synthetic PPG-like pulse segments with known heart-rate labels.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

/// Label above which a segment is the positive ("elevated") class.
pub const CLASS_THRESHOLD_BPM: f64 = 90.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub fs_hz: f64,
    pub duration_s: f64,
    pub hr_bpm: f64,
    pub n_harmonics: usize,
    pub dicrotic_amp: f64,
    pub wander_amp: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            fs_hz: 100.0,
            duration_s: 10.0,
            hr_bpm: 72.0,
            n_harmonics: 3,
            dicrotic_amp: 0.3,
            wander_amp: 0.1,
            noise_std: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.fs_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs_hz > 0.0) || !(self.duration_s > 0.0) {
            return Err(Error::config("fs_hz and duration_s must be positive"));
        }
        if !(40.0..=180.0).contains(&self.hr_bpm) {
            return Err(Error::config(format!(
                "hr_bpm {} outside 40..=180",
                self.hr_bpm
            )));
        }
        if self.n_harmonics == 0 {
            return Err(Error::config("n_harmonics must be at least 1"));
        }
        // The dicrotic term sits on the second harmonic.
        let highest = if self.dicrotic_amp > 0.0 {
            self.n_harmonics.max(2)
        } else {
            self.n_harmonics
        };
        let top = highest as f64 * self.hr_bpm / 60.0;
        if self.fs_hz <= 2.0 * top {
            return Err(Error::config(format!(
                "fs_hz {} aliases the highest synthesized harmonic at {top} Hz",
                self.fs_hz
            )));
        }
        let n = self.duration_s * self.fs_hz;
        if (n - n.round()).abs() > 1e-9 {
            return Err(Error::config(format!(
                "duration_s x fs_hz = {n} is not an integer sample count"
            )));
        }
        if !(0.0..=1.0).contains(&self.dicrotic_amp) {
            return Err(Error::config("dicrotic_amp must lie in [0, 1]"));
        }
        if self.wander_amp < 0.0 || self.noise_std < 0.0 {
            return Err(Error::config("wander_amp and noise_std must be non-negative"));
        }
        Ok(())
    }
}

/// One fixed-length single-channel recording with its metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub user_id: String,
    pub segment_id: String,
    pub fs_hz: f64,
    pub samples: Vec<f64>,
    #[serde(default)]
    pub labels: BTreeMap<String, f64>,
}

impl Segment {
    pub fn label(&self, key: &str) -> Option<f64> {
        self.labels.get(key).copied()
    }
}

pub fn generate_segment(cfg: &SynthConfig) -> Result<Segment> {
    cfg.validate()?;
    let mut rng = rng::rng(cfg.seed);
    let n = cfg.n_samples();
    let f0 = cfg.hr_bpm / 60.0;

    let phases: Vec<f64> = (0..cfg.n_harmonics)
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();
    let wander_hz = rng.random_range(0.05..0.25);
    let wander_phase = rng.random_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, cfg.noise_std)
        .map_err(|e| Error::config(format!("noise_std: {e}")))?;

    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / cfg.fs_hz;
            let pulse: f64 = phases
                .iter()
                .enumerate()
                .map(|(k, phi)| {
                    let h = (k + 1) as f64;
                    (2.0 * PI * h * f0 * t + phi).sin() / h
                })
                .sum();
            let dicrotic =
                cfg.dicrotic_amp * (2.0 * PI * 2.0 * f0 * t + 2.0 * phases[0] + PI / 3.0).sin();
            let wander = cfg.wander_amp * (2.0 * PI * wander_hz * t + wander_phase).sin();
            let eps = if cfg.noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            pulse + dicrotic + wander + eps
        })
        .collect();

    let mut labels = BTreeMap::new();
    labels.insert("hr_bpm".to_string(), cfg.hr_bpm);
    labels.insert("class".to_string(), hr_class(cfg.hr_bpm));

    Ok(Segment {
        user_id: "user-0".to_string(),
        segment_id: "seg-0".to_string(),
        fs_hz: cfg.fs_hz,
        samples,
        labels,
    })
}

pub fn hr_class(hr_bpm: f64) -> f64 {
    if hr_bpm > CLASS_THRESHOLD_BPM {
        1.0
    } else {
        0.0
    }
}

/// Ranges a cohort is drawn from. Users cycle through `hr_ranges`, so with two
/// ranges even-numbered users come from the first and odd-numbered from the
/// second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub fs_hz: f64,
    pub duration_s: f64,
    pub hr_ranges: Vec<(f64, f64)>,
    /// Per-segment heart-rate jitter (uniform, +/- bpm) around the user's rate.
    pub jitter_bpm: f64,
    pub n_harmonics: usize,
    pub dicrotic_range: (f64, f64),
    pub wander_amp: f64,
    pub noise_std: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            fs_hz: 100.0,
            duration_s: 10.0,
            hr_ranges: vec![(60.0, 70.0), (110.0, 120.0)],
            jitter_bpm: 2.0,
            n_harmonics: 3,
            dicrotic_range: (0.1, 0.5),
            wander_amp: 0.1,
            noise_std: 0.02,
        }
    }
}

pub fn generate_cohort(
    n_users: usize,
    segments_per_user: usize,
    spec: &CohortSpec,
    seed: u64,
) -> Result<Vec<Segment>> {
    if n_users == 0 || segments_per_user == 0 {
        return Err(Error::config("n_users and segments_per_user must be >= 1"));
    }
    if spec.hr_ranges.is_empty() {
        return Err(Error::config("hr_ranges must not be empty"));
    }
    for &(lo, hi) in &spec.hr_ranges {
        if !(lo <= hi) {
            return Err(Error::config(format!("hr range ({lo}, {hi}) is inverted")));
        }
    }
    let (d_lo, d_hi) = spec.dicrotic_range;
    if !(d_lo <= d_hi) {
        return Err(Error::config("dicrotic_range is inverted"));
    }

    let root = rng::derive(seed, rng::stream::SYNTH);
    let width = digits(n_users);
    let seg_width = digits(segments_per_user);
    let mut out = Vec::with_capacity(n_users * segments_per_user);
    for u in 0..n_users {
        let user_seed = rng::derive(root, u as u64);
        let mut user_rng = rng::rng(user_seed);
        let (lo, hi) = spec.hr_ranges[u % spec.hr_ranges.len()];
        let latent_hr = sample_range(&mut user_rng, lo, hi);
        let dicrotic = sample_range(&mut user_rng, d_lo, d_hi);
        let user_id = format!("user-{u:0width$}");

        for s in 0..segments_per_user {
            let seg_seed = rng::derive(user_seed, 1 + s as u64);
            let mut seg_rng = rng::rng(seg_seed);
            let jitter = sample_range(&mut seg_rng, -spec.jitter_bpm, spec.jitter_bpm);
            let cfg = SynthConfig {
                fs_hz: spec.fs_hz,
                duration_s: spec.duration_s,
                hr_bpm: (latent_hr + jitter).clamp(40.0, 180.0),
                n_harmonics: spec.n_harmonics,
                dicrotic_amp: dicrotic,
                wander_amp: spec.wander_amp,
                noise_std: spec.noise_std,
                seed: rng::derive(seg_seed, 0),
            };
            let mut seg = generate_segment(&cfg)?;
            seg.user_id = user_id.clone();
            seg.segment_id = format!("{user_id}-seg-{s:0seg_width$}");
            out.push(seg);
        }
    }
    Ok(out)
}

fn sample_range(rng: &mut rng::Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean(hr: f64) -> SynthConfig {
        SynthConfig {
            hr_bpm: hr,
            n_harmonics: 1,
            dicrotic_amp: 0.0,
            wander_amp: 0.0,
            noise_std: 0.0,
            ..SynthConfig::default()
        }
    }

    /// DFT magnitude at integer bin k, computed directly.
    fn dft_mag(x: &[f64], k: usize) -> f64 {
        let n = x.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let w = 2.0 * PI * k as f64 * i as f64 / n;
            re += v * w.cos();
            im -= v * w.sin();
        }
        re.hypot(im)
    }

    #[test]
    fn single_harmonic_is_pure_sinusoid() {
        let seg = generate_segment(&clean(60.0)).unwrap();
        assert_eq!(seg.samples.len(), 1000);
        // Recover the phase from the first sample and check every sample.
        let x = &seg.samples;
        let amp = x.iter().map(|v| v * v).sum::<f64>() * 2.0 / 1000.0;
        assert!((amp.sqrt() - 1.0).abs() < 1e-9);
        // 1 Hz at 100 Hz: period of exactly 100 samples.
        for i in 0..900 {
            assert!((x[i] - x[i + 100]).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let cfg = SynthConfig {
            seed: 42,
            ..SynthConfig::default()
        };
        let a = generate_segment(&cfg).unwrap();
        let b = generate_segment(&cfg).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn dominant_bin_at_heart_rate() {
        let seg = generate_segment(&SynthConfig {
            hr_bpm: 120.0,
            noise_std: 0.0,
            wander_amp: 0.0,
            ..SynthConfig::default()
        })
        .unwrap();
        // 10 s record: bin k sits at k / 10 Hz.
        let mags: Vec<f64> = (0..500).map(|k| dft_mag(&seg.samples, k)).collect();
        let argmax = (0..500)
            .max_by(|&a, &b| mags[a].total_cmp(&mags[b]))
            .unwrap();
        assert_eq!(argmax, 20);
    }

    #[test]
    fn fundamental_beats_non_harmonics() {
        let seg = generate_segment(&SynthConfig {
            hr_bpm: 72.0,
            noise_std: 0.0,
            wander_amp: 0.0,
            ..SynthConfig::default()
        })
        .unwrap();
        let fund = dft_mag(&seg.samples, 12);
        for k in 1..500 {
            if k % 12 != 0 {
                assert!(dft_mag(&seg.samples, k) < fund, "bin {k}");
            }
        }
    }

    #[test]
    fn aliasing_is_rejected() {
        let cfg = SynthConfig {
            fs_hz: 10.0,
            hr_bpm: 180.0,
            n_harmonics: 3,
            ..SynthConfig::default()
        };
        assert!(matches!(generate_segment(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn cohort_counts_and_users() {
        let segs = generate_cohort(2, 3, &CohortSpec::default(), 1).unwrap();
        assert_eq!(segs.len(), 6);
        let users: std::collections::BTreeSet<_> = segs.iter().map(|s| &s.user_id).collect();
        assert_eq!(users.len(), 2);
    }

    #[test]
    fn cohort_segments_share_user_rate() {
        let spec = CohortSpec {
            jitter_bpm: 2.0,
            ..CohortSpec::default()
        };
        let segs = generate_cohort(4, 5, &spec, 9).unwrap();
        for user in segs.chunks(5) {
            let hrs: Vec<f64> = user.iter().map(|s| s.label("hr_bpm").unwrap()).collect();
            let lo = hrs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = hrs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(hi - lo <= 4.0);
        }
    }

    /// Count local maxima above zero crossing-separated pulses; return mean
    /// interval in samples.
    fn mean_peak_interval(x: &[f64]) -> f64 {
        let mut peaks = Vec::new();
        for i in 1..x.len() - 1 {
            if x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > 0.5 {
                if peaks.last().is_none_or(|&p: &usize| i - p > 20) {
                    peaks.push(i);
                }
            }
        }
        let gaps: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
        gaps.iter().sum::<f64>() / gaps.len() as f64
    }

    #[test]
    fn class_separable_by_peak_interval() {
        let spec = CohortSpec {
            n_harmonics: 1,
            dicrotic_range: (0.0, 0.0),
            wander_amp: 0.0,
            noise_std: 0.0,
            jitter_bpm: 1.0,
            ..CohortSpec::default()
        };
        let segs = generate_cohort(6, 3, &spec, 3).unwrap();
        let (mut low, mut high) = (Vec::new(), Vec::new());
        for s in &segs {
            let gap = mean_peak_interval(&s.samples);
            if s.label("class").unwrap() == 1.0 {
                high.push(gap);
            } else {
                low.push(gap);
            }
        }
        assert!(!low.is_empty() && !high.is_empty());
        let min_low = low.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_high = high.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(max_high < min_low, "{max_high} vs {min_low}");
    }
}
