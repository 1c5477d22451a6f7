//! Multiple-start, multiple-stop histograms of detection timestamps.
//!
//! Every ordered pair of clicks within the window contributes its delay, not
//! only consecutive ones. Timestamps are held as integer picoseconds so that
//! binning is exact and independent of floating-point rounding.

use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::RecoveryProfile;
use crate::seed;

const PS: f64 = 1e12;

fn to_ps(seconds: f64) -> i64 {
    (seconds * PS).round() as i64
}

/// Strictly increasing click times.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TimestampSeries {
    ps: Vec<i64>,
}

impl TimestampSeries {
    pub fn from_picoseconds(ps: Vec<i64>) -> Result<Self> {
        if let Some(i) = ps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidData(format!(
                "timestamps not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self { ps })
    }

    /// Rounds times in seconds to the nearest picosecond.
    pub fn from_seconds(t: &[f64]) -> Result<Self> {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite timestamp".into()));
        }
        Self::from_picoseconds(t.iter().map(|&v| to_ps(v)).collect())
    }

    pub fn picoseconds(&self) -> &[i64] {
        &self.ps
    }

    pub fn seconds(&self) -> impl Iterator<Item = f64> + '_ {
        self.ps.iter().map(|&v| v as f64 / PS)
    }

    pub fn len(&self) -> usize {
        self.ps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartStopHistogram {
    /// Bin width (s).
    pub bin_width: f64,
    /// Window length (s); there are `ceil(max_delay / bin_width)` bins.
    pub max_delay: f64,
    pub counts: Vec<u64>,
    /// Number of timestamps that went into the histogram.
    pub total_events: u64,
}

impl StartStopHistogram {
    pub fn empty(bin_width: f64, max_delay: f64) -> Result<Self> {
        let n = bin_count(bin_width, max_delay)?;
        Ok(Self {
            bin_width,
            max_delay,
            counts: vec![0; n],
            total_events: 0,
        })
    }

    /// Lower edge of bin `i` (s).
    pub fn bin_start(&self, i: usize) -> f64 {
        i as f64 * self.bin_width
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.bin_width
    }

    pub fn total_pairs(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds another shard; binning must agree.
    pub fn merge(&mut self, other: &StartStopHistogram) -> Result<()> {
        if self.bin_width != other.bin_width || self.counts.len() != other.counts.len() {
            return Err(Error::InvalidData("cannot merge histograms with different binning".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_events += other.total_events;
        Ok(())
    }
}

fn geometry(bin_width: f64, max_delay: f64) -> Result<(i64, i64)> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::param("bin_width", format!("must be > 0, got {bin_width}")));
    }
    if !(max_delay >= bin_width && max_delay.is_finite()) {
        return Err(Error::param("max_delay", format!("must be >= bin width, got {max_delay}")));
    }
    let bin = to_ps(bin_width);
    if bin < 1 {
        return Err(Error::param("bin_width", "must be at least 1 ps"));
    }
    Ok((bin, to_ps(max_delay)))
}

fn bin_count(bin_width: f64, max_delay: f64) -> Result<usize> {
    let (bin, max) = geometry(bin_width, max_delay)?;
    Ok(((max + bin - 1) / bin) as usize)
}

/// Pairs whose start index lies in `starts`; stops may lie anywhere after.
fn count_pairs(ps: &[i64], starts: std::ops::Range<usize>, bin: i64, max: i64, counts: &mut [u64]) {
    let n_bins = counts.len() as i64;
    for j in starts {
        let t0 = ps[j];
        for &t in &ps[j + 1..] {
            let d = t - t0;
            if d > max {
                break;
            }
            let b = d / bin;
            if b < n_bins {
                counts[b as usize] += 1;
            }
        }
    }
}

/// Start indices per shard in parallel accumulation.
const SHARD_EVENTS: usize = 1 << 16;

/// Histogram of all delays `t_k − t_j` (`k > j`) up to `max_delay`.
pub fn build_histogram(ts: &TimestampSeries, bin_width: f64, max_delay: f64) -> Result<StartStopHistogram> {
    let (bin, max) = geometry(bin_width, max_delay)?;
    let n_bins = bin_count(bin_width, max_delay)?;
    let ps = ts.picoseconds();
    let shards: Vec<Vec<u64>> = (0..ps.len().div_ceil(SHARD_EVENTS))
        .into_par_iter()
        .map(|s| {
            let mut counts = vec![0; n_bins];
            let end = ((s + 1) * SHARD_EVENTS).min(ps.len());
            count_pairs(ps, s * SHARD_EVENTS..end, bin, max, &mut counts);
            counts
        })
        .collect();
    let mut counts = vec![0u64; n_bins];
    for shard in shards {
        for (a, b) in counts.iter_mut().zip(shard) {
            *a += b;
        }
    }
    Ok(StartStopHistogram {
        bin_width,
        max_delay,
        counts,
        total_events: ps.len() as u64,
    })
}

/// How the plateau level is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauWindow {
    /// Mean over bins starting in `[norm_delay − width, norm_delay]`.
    Mean { width: f64 },
    /// The single bin containing `norm_delay`.
    SingleBin,
}

impl Default for PlateauWindow {
    fn default() -> Self {
        PlateauWindow::Mean { width: 20e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizeOptions {
    /// Bins starting below this delay are dropped (s).
    pub cutoff: f64,
    /// Delay at which the curve is scaled to one (s).
    pub norm_delay: f64,
    pub plateau: PlateauWindow,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        Self {
            cutoff: 20e-9,
            norm_delay: 800e-9,
            plateau: PlateauWindow::default(),
        }
    }
}

/// Histogram scaled to unit plateau: a normalised detection efficiency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRecoveryCurve {
    /// Bin centres (s).
    pub delays: Vec<f64>,
    pub values: Vec<f64>,
    /// Poisson errors `√max(counts, 1)` on the same scale.
    pub sigmas: Vec<f64>,
    pub cutoff: f64,
    pub norm_delay: f64,
    /// Mean raw count in the plateau window, when built from a histogram.
    #[serde(default)]
    pub plateau_counts: Option<f64>,
}

impl NormalizedRecoveryCurve {
    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }
}

pub fn normalize_histogram(h: &StartStopHistogram, options: &NormalizeOptions) -> Result<NormalizedRecoveryCurve> {
    let NormalizeOptions {
        cutoff,
        norm_delay,
        plateau,
    } = *options;
    if !(cutoff >= 0.0) || !(norm_delay > cutoff) {
        return Err(Error::param("norm_delay", format!("need 0 <= cutoff < norm_delay, got {cutoff}, {norm_delay}")));
    }
    let bin = to_ps(h.bin_width);
    let n = h.counts.len() as i64;
    let index = |t: f64| to_ps(t) / bin;
    let (lo, hi) = match plateau {
        PlateauWindow::Mean { width } => {
            if !(width >= 0.0) {
                return Err(Error::param("plateau width", format!("must be >= 0, got {width}")));
            }
            // Bins whose lower edge lies in [norm_delay − width, norm_delay].
            let first = (to_ps(norm_delay - width) + bin - 1).div_euclid(bin).max(0);
            (first, index(norm_delay))
        }
        PlateauWindow::SingleBin => {
            let i = index(norm_delay);
            (i, i)
        }
    };
    let hi = hi.min(n - 1);
    if lo > hi || lo >= n {
        return Err(Error::InvalidData(format!(
            "normalization window at {:.3} ns lies outside the histogram",
            norm_delay * 1e9
        )));
    }
    let window = &h.counts[lo as usize..=hi as usize];
    let level = window.iter().sum::<u64>() as f64 / window.len() as f64;
    if level <= 0.0 {
        return Err(Error::InvalidData("normalization window is empty".into()));
    }
    let first = (to_ps(cutoff) + bin - 1).div_euclid(bin) as usize;
    let kept = first.min(h.counts.len())..h.counts.len();
    Ok(NormalizedRecoveryCurve {
        delays: kept.clone().map(|i| h.bin_center(i)).collect(),
        values: h.counts[kept.clone()].iter().map(|&c| c as f64 / level).collect(),
        sigmas: h.counts[kept].iter().map(|&c| (c.max(1) as f64).sqrt() / level).collect(),
        cutoff,
        norm_delay,
        plateau_counts: Some(level),
    })
}

/// Anything with a recovery time.
pub trait RecoveryTime {
    /// Smallest delay at which the normalised efficiency reaches `fraction`.
    fn recovery_time_at(&self, fraction: f64) -> Result<f64>;
}

impl RecoveryTime for NormalizedRecoveryCurve {
    /// Linear interpolation between bins; the cutoff if the first kept bin
    /// already exceeds `fraction`.
    fn recovery_time_at(&self, fraction: f64) -> Result<f64> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::param("fraction", format!("must be in (0, 1), got {fraction}")));
        }
        let i = self
            .values
            .iter()
            .position(|&v| v >= fraction)
            .ok_or_else(|| Error::Domain(format!("curve never reaches {fraction}")))?;
        if i == 0 {
            return Ok(self.cutoff);
        }
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        let (t0, t1) = (self.delays[i - 1], self.delays[i]);
        Ok(t0 + (fraction - v0) / (v1 - v0) * (t1 - t0))
    }
}

/// Search limit for profile recovery times (s).
pub const PROFILE_SEARCH_WINDOW: f64 = 10e-6;

impl RecoveryTime for RecoveryProfile {
    fn recovery_time_at(&self, fraction: f64) -> Result<f64> {
        self.time_to_reach(fraction, PROFILE_SEARCH_WINDOW)
    }
}

/// Histogram whose bins are Poisson draws around `plateau_counts · η(t)`,
/// with `η` evaluated at bin centres.
pub fn synthetic_histogram(
    profile: &RecoveryProfile,
    bin_width: f64,
    max_delay: f64,
    plateau_counts: f64,
    seed: u64,
) -> Result<StartStopHistogram> {
    profile.validate()?;
    if !(plateau_counts > 0.0 && plateau_counts.is_finite()) {
        return Err(Error::param("plateau_counts", format!("must be > 0, got {plateau_counts}")));
    }
    let mut h = StartStopHistogram::empty(bin_width, max_delay)?;
    let p = profile.compile();
    let mut rng = seed::rng(seed, seed::ARRIVAL_STREAM);
    for i in 0..h.counts.len() {
        let mean = plateau_counts * p.efficiency(h.bin_center(i));
        h.counts[i] = if mean > 0.0 {
            Poisson::new(mean)
                .map_err(|e| Error::param("plateau_counts", e.to_string()))?
                .sample(&mut rng) as u64
        } else {
            0
        };
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::{fit_recovery, reduced_chi2};
    use crate::models::{BiasRecovery, Normalization, SdeParams};
    use crate::montecarlo::{generate_arrivals, simulate_with_timestamps, BoostConfig, SimConfig};
    use proptest::prelude::*;

    const NS: f64 = 1e-9;

    fn series_ns(ns: &[f64]) -> TimestampSeries {
        TimestampSeries::from_seconds(&ns.iter().map(|v| v * NS).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_pair() {
        let h = build_histogram(&series_ns(&[0.0, 50.0]), NS, 800.0 * NS).unwrap();
        assert_eq!(h.counts.len(), 800);
        assert_eq!(h.counts[50], 1);
        assert_eq!(h.total_pairs(), 1);
        assert_eq!(h.total_events, 2);
    }

    #[test]
    fn all_pairs_counted() {
        let h = build_histogram(&series_ns(&[0.0, 100.0, 200.0]), NS, 800.0 * NS).unwrap();
        assert_eq!(h.counts[100], 2);
        assert_eq!(h.counts[200], 1);
        assert_eq!(h.total_pairs(), 3);
    }

    #[test]
    fn regular_sequence_pair_count() {
        // n events spaced by s: pairs with delay m·s number n − m.
        let n = 1000;
        let ts: Vec<f64> = (0..n).map(|i| 7.0 * i as f64).collect();
        let h = build_histogram(&series_ns(&ts), NS, 100.0 * NS).unwrap();
        let expected: u64 = (1..=14).map(|m| (n - m) as u64).sum();
        assert_eq!(h.total_pairs(), expected);
    }

    #[test]
    fn bin_count_is_ceiling() {
        assert_eq!(StartStopHistogram::empty(2.0 * NS, 800.0 * NS).unwrap().counts.len(), 400);
        assert_eq!(StartStopHistogram::empty(3.0 * NS, 800.0 * NS).unwrap().counts.len(), 267);
        assert!(StartStopHistogram::empty(0.0, 800.0 * NS).is_err());
    }

    #[test]
    fn rejects_unsorted() {
        assert!(TimestampSeries::from_seconds(&[0.0, 2e-9, 1e-9]).is_err());
        assert!(TimestampSeries::from_seconds(&[0.0, 0.0]).is_err());
    }

    fn deadtime_stamps(n: u64, seed: u64) -> TimestampSeries {
        let cfg = SimConfig::new(
            1.0,
            RecoveryProfile::Step { dead_time: 30.0 * NS },
            BoostConfig::off(),
            n,
            seed,
        );
        let out = simulate_with_timestamps(generate_arrivals(2e6, n, seed::derive(seed, 9)).unwrap(), &cfg, usize::MAX).unwrap();
        TimestampSeries::from_seconds(&out.detected_timestamps.unwrap()).unwrap()
    }

    #[test]
    fn deadtime_series_has_no_short_delays() {
        let ts = deadtime_stamps(200_000, 1);
        let h = build_histogram(&ts, NS, 800.0 * NS).unwrap();
        assert!(h.counts[..30].iter().all(|&c| c == 0));
        assert!(h.counts[30] > 0);
    }

    #[test]
    fn poisson_series_is_flat() {
        let arrivals = generate_arrivals(5e5, 1_000_000, 3).unwrap();
        let mut t = 0.0;
        let times: Vec<f64> = arrivals
            .map(|dt| {
                t += dt;
                t
            })
            .collect();
        // Arrivals closer than a picosecond collapse onto one tick; keep the first.
        let mut ps: Vec<i64> = times.iter().map(|&t| to_ps(t)).collect();
        ps.dedup();
        let h = build_histogram(&TimestampSeries::from_picoseconds(ps).unwrap(), NS, 800.0 * NS).unwrap();
        let mean = h.total_pairs() as f64 / h.counts.len() as f64;
        let resid: Vec<f64> = h.counts.iter().map(|&c| c as f64 - mean).collect();
        let sig = vec![mean.sqrt(); resid.len()];
        let chi = reduced_chi2(&resid, &sig, 1).unwrap();
        assert!(chi < 1.5, "{chi}");
    }

    #[test]
    fn sharded_build_matches_serial() {
        let ts = deadtime_stamps(300_000, 4);
        assert!(ts.len() > 2 * SHARD_EVENTS);
        let h = build_histogram(&ts, NS, 800.0 * NS).unwrap();
        let mut serial = vec![0; h.counts.len()];
        count_pairs(ts.picoseconds(), 0..ts.len(), to_ps(NS), to_ps(800.0 * NS), &mut serial);
        assert_eq!(h.counts, serial);
    }

    #[test]
    fn merge_is_commutative_and_associative() {
        let mk = |s| synthetic_histogram(&RecoveryProfile::Unity, NS, 100.0 * NS, 50.0, s).unwrap();
        let (a, b, c) = (mk(1), mk(2), mk(3));
        let mut ab_c = a.clone();
        ab_c.merge(&b).unwrap();
        ab_c.merge(&c).unwrap();
        let mut bc = b.clone();
        bc.merge(&c).unwrap();
        let mut a_bc = a.clone();
        a_bc.merge(&bc).unwrap();
        let mut ba = b.clone();
        ba.merge(&a).unwrap();
        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        assert_eq!(ab_c, a_bc);
        assert_eq!(ab, ba);
        let other = StartStopHistogram::empty(2.0 * NS, 100.0 * NS).unwrap();
        assert!(ab.merge(&other).is_err());
    }

    #[test]
    fn flat_histogram_normalizes_to_one() {
        let h = StartStopHistogram {
            bin_width: NS,
            max_delay: 800.0 * NS,
            counts: vec![37; 800],
            total_events: 0,
        };
        let c = normalize_histogram(&h, &NormalizeOptions::default()).unwrap();
        assert_eq!(c.len(), 780);
        assert!(c.values.iter().all(|&v| v == 1.0));
        assert!((c.delays[0] - 20.5 * NS).abs() < 1e-18);
    }

    #[test]
    fn artifact_peak_is_removed() {
        let mut counts = vec![100; 800];
        counts[9] = 5000;
        let h = StartStopHistogram {
            bin_width: NS,
            max_delay: 800.0 * NS,
            counts,
            total_events: 0,
        };
        let c = normalize_histogram(&h, &NormalizeOptions::default()).unwrap();
        assert!(c.values.iter().all(|&v| v == 1.0));
        assert!(c.delays.iter().all(|&d| d >= 20.0 * NS));
    }

    #[test]
    fn single_bin_and_window_errors() {
        let mut counts = vec![10; 800];
        counts[799] = 20;
        let h = StartStopHistogram {
            bin_width: NS,
            max_delay: 800.0 * NS,
            counts,
            total_events: 0,
        };
        let opts = NormalizeOptions {
            plateau: PlateauWindow::SingleBin,
            norm_delay: 799.5 * NS,
            ..NormalizeOptions::default()
        };
        let c = normalize_histogram(&h, &opts).unwrap();
        assert_eq!(*c.values.last().unwrap(), 1.0);
        assert_eq!(c.values[0], 0.5);

        let far = NormalizeOptions {
            norm_delay: 2000.0 * NS,
            plateau: PlateauWindow::SingleBin,
            ..NormalizeOptions::default()
        };
        assert!(normalize_histogram(&h, &far).is_err());
        let zero = StartStopHistogram::empty(NS, 800.0 * NS).unwrap();
        assert!(normalize_histogram(&zero, &NormalizeOptions::default()).is_err());
    }

    proptest! {
        #[test]
        fn normalization_is_scale_invariant(counts in prop::collection::vec(1u64..1000, 800), k in 1u64..50) {
            let h = StartStopHistogram { bin_width: NS, max_delay: 800.0 * NS, counts, total_events: 0 };
            let mut scaled = h.clone();
            scaled.counts.iter_mut().for_each(|c| *c *= k);
            let a = normalize_histogram(&h, &NormalizeOptions::default()).unwrap();
            let b = normalize_histogram(&scaled, &NormalizeOptions::default()).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-14 * x.abs().max(1.0));
            }
        }
    }

    fn table_profile(i_bias: f64) -> RecoveryProfile {
        RecoveryProfile::Bias {
            sde: SdeParams::reference(),
            recovery: BiasRecovery::reference(i_bias).unwrap(),
            normalization: Normalization::AtDelay(800.0 * NS),
        }
    }

    #[test]
    fn forward_model_curve_matches_generator() {
        let profile = table_profile(22.0);
        let h = synthetic_histogram(&profile, NS, 800.0 * NS, 2e4, 11).unwrap();
        let c = normalize_histogram(&h, &NormalizeOptions::default()).unwrap();
        let resid: Vec<f64> = c.delays.iter().zip(&c.values).map(|(&t, &v)| v - profile.efficiency(t)).collect();
        let chi = reduced_chi2(&resid, &c.sigmas, 0).unwrap();
        assert!((0.5..2.5).contains(&chi), "{chi}");
    }

    #[test]
    fn recovery_fit_on_forward_model() {
        let profile = table_profile(22.0);
        let h = synthetic_histogram(&profile, NS, 800.0 * NS, 2e4, 12).unwrap();
        let c = normalize_histogram(&h, &NormalizeOptions::default()).unwrap();
        let fit = fit_recovery(&c, &SdeParams::reference(), 22.0).unwrap();
        assert!((fit.value("tau_rec").unwrap() - 34.0).abs() < 4.0, "{fit:?}");
        assert!((fit.value("i_drop").unwrap() - 5.57).abs() < 0.05, "{fit:?}");
    }

    #[test]
    fn recovery_fit_noiseless_is_exact() {
        let profile = table_profile(22.0);
        let delays: Vec<f64> = (20..800).map(|i| (i as f64 + 0.5) * NS).collect();
        let c = NormalizedRecoveryCurve {
            values: delays.iter().map(|&t| profile.efficiency(t)).collect(),
            sigmas: vec![1e-3; delays.len()],
            delays,
            cutoff: 20.0 * NS,
            norm_delay: 800.0 * NS,
            plateau_counts: None,
        };
        let fit = fit_recovery(&c, &SdeParams::reference(), 22.0).unwrap();
        assert!((fit.value("tau_rec").unwrap() - 34.0).abs() < 1e-6);
        assert!((fit.value("i_drop").unwrap() - 5.57).abs() < 1e-7);
    }

    #[test]
    fn recovery_times_follow_bias_ordering() {
        let t: Vec<f64> = [22.5, 22.0, 21.5]
            .iter()
            .map(|&i| RecoveryProfile::reference(i).unwrap().recovery_time_at(0.9).unwrap())
            .collect();
        assert!(t[0] < t[1] && t[1] < t[2], "{t:?}");
        assert!((t[1] / NS - 110.7).abs() < 0.1, "{t:?}");
    }

    #[test]
    fn curve_recovery_time() {
        let c = NormalizedRecoveryCurve {
            delays: vec![20.5 * NS, 21.5 * NS, 22.5 * NS],
            values: vec![0.5, 0.8, 1.0],
            sigmas: vec![0.1; 3],
            cutoff: 20.0 * NS,
            norm_delay: 800.0 * NS,
            plateau_counts: None,
        };
        assert!((c.recovery_time_at(0.9).unwrap() - 22.0 * NS).abs() < 1e-18);
        assert_eq!(c.recovery_time_at(1e-9).unwrap(), 20.0 * NS);
        let low = NormalizedRecoveryCurve {
            values: vec![0.1, 0.2, 0.3],
            ..c
        };
        assert!(low.recovery_time_at(0.9).is_err());
    }

    #[test]
    fn recovery_fit_coverage() {
        let profile = table_profile(22.0);
        let mut hits = [0usize; 2];
        for s in 0..100 {
            let h = synthetic_histogram(&profile, NS, 800.0 * NS, 2e4, 100 + s).unwrap();
            let c = normalize_histogram(&h, &NormalizeOptions::default()).unwrap();
            let fit = fit_recovery(&c, &SdeParams::reference(), 22.0).unwrap();
            for (k, want) in [34.0, 5.57].into_iter().enumerate() {
                let p = &fit.parameters[k];
                hits[k] += ((p.value - want).abs() <= p.uncertainty) as usize;
            }
        }
        // 68 % within two binomial standard deviations.
        assert!(hits.iter().all(|&h| (59..=77).contains(&h)), "{hits:?}");
    }
}
