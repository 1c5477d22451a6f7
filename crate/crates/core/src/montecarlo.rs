//! Monte-Carlo simulation of photon arrivals and detection.
//!
//! Photons arrive as a Poisson process. The simulation always starts right
//! after a click at `t = 0`. Each photon is detected with probability
//! `p = A·η(Δt + δt) + B`, where `η` is the recovery profile evaluated at the
//! time since the last click, and `B` is the hotspot boost granted to the
//! photon right after an undetected one. In fill-to-unity mode the boost
//! raises `p` to exactly one when that photon arrives within `T_boost`.
//!
//! Long runs are split into chunks with their own derived seeds and a forced
//! click at each chunk start. Chunks run in parallel and are reduced in index
//! order, so results are bit-identical for any thread count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{ResiduumCurve, ResiduumPoint};
use crate::models::{CompiledProfile, RecoveryProfile};
use crate::seed;

/// Default number of photons per chunk.
pub const DEFAULT_CHUNK_PHOTONS: u64 = 1_000_000;
/// Photon count per rate point used for the published simulations.
pub const FULL_PHOTONS: u64 = 200_000_000;
/// Photon count per rate point for quick runs.
pub const FAST_PHOTONS: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoostShape {
    /// `b(Δt) = u(T_boost − Δt)`.
    #[default]
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoostAmplitude {
    /// `B₀` chosen so that the boosted photon is detected with certainty.
    #[default]
    FillToUnity,
}

/// Hotspot boost for the photon following an undetected one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    /// Characteristic boost time (s); zero disables the boost.
    pub t_boost: f64,
    #[serde(default)]
    pub shape: BoostShape,
    #[serde(default)]
    pub amplitude: BoostAmplitude,
}

impl BoostConfig {
    pub fn off() -> Self {
        Self::step(0.0)
    }

    pub fn step(t_boost: f64) -> Self {
        Self {
            t_boost,
            shape: BoostShape::Step,
            amplitude: BoostAmplitude::FillToUnity,
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.t_boost > 0.0
    }

    #[inline]
    fn covers(&self, dt: f64) -> bool {
        match self.shape {
            BoostShape::Step => dt < self.t_boost,
        }
    }

    #[inline]
    fn boosted(&self, _base: f64) -> f64 {
        match self.amplitude {
            // B₀ = 1 − A·η: the sum is one by construction.
            BoostAmplitude::FillToUnity => 1.0,
        }
    }
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self::off()
    }
}

/// How the full-flux and half-flux runs of a residuum estimate share randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Both runs consume the same unit-exponential arrivals (rescaled by the
    /// flux) and the same decision draws. Most of the shot noise cancels in
    /// the ratio; the uncertainty comes from the scatter between chunks.
    #[default]
    Common,
    /// Independent streams for the two runs; Poisson-propagated uncertainty.
    Independent,
}

/// Recovery profile measured at one detected count rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcLevel {
    /// Detected count rate (Hz) at which the profile was measured.
    pub rate: f64,
    pub recovery: RecoveryProfile,
}

/// Relative distance within which a detected rate selects an [`AcLevel`].
pub const AC_LEVEL_TOLERANCE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Steady-state system detection efficiency `A`.
    pub steady_state_efficiency: f64,
    pub recovery: RecoveryProfile,
    #[serde(default)]
    pub boost: BoostConfig,
    /// Photons per simulated rate (`N`).
    pub n_photons: u64,
    pub seed: u64,
    #[serde(default = "default_chunk")]
    pub chunk_photons: u64,
    #[serde(default)]
    pub pairing: Pairing,
    /// Flux-dependent recovery profiles for AC-biasing studies.
    #[serde(default)]
    pub ac_biasing: Option<Vec<AcLevel>>,
}

fn default_chunk() -> u64 {
    DEFAULT_CHUNK_PHOTONS
}

impl SimConfig {
    pub fn new(steady_state_efficiency: f64, recovery: RecoveryProfile, boost: BoostConfig, n_photons: u64, seed: u64) -> Self {
        Self {
            steady_state_efficiency,
            recovery,
            boost,
            n_photons,
            seed,
            chunk_photons: DEFAULT_CHUNK_PHOTONS,
            pairing: Pairing::Common,
            ac_biasing: None,
        }
    }

    /// Reference detector: `A = 0.604`, recovery fitted at 22 µA and a
    /// 172 ns fill-to-unity boost.
    pub fn reference(n_photons: u64, seed: u64) -> Self {
        Self::new(
            0.604,
            RecoveryProfile::reference(22.0).expect("tabulated bias"),
            BoostConfig::step(172e-9),
            n_photons,
            seed,
        )
    }

    /// Recovery profiles measured at 250 kHz and 500 kHz detected rate.
    pub fn reference_ac_levels() -> Vec<AcLevel> {
        use crate::models::{BiasRecovery, SdeParams};
        let level = |rate: f64, i_drop: f64, tau: f64| AcLevel {
            rate,
            recovery: RecoveryProfile::bias(
                SdeParams::reference(),
                BiasRecovery {
                    i_bias: 22.0,
                    i_drop,
                    tau,
                },
            ),
        };
        vec![level(250e3, 6.09, 35e-9), level(500e3, 5.256, 33e-9)]
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.steady_state_efficiency;
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::param("steady_state_efficiency", format!("must be in (0, 1], got {a}")));
        }
        if self.n_photons == 0 {
            return Err(Error::param("n_photons", "must be >= 1"));
        }
        if self.chunk_photons == 0 {
            return Err(Error::param("chunk_photons", "must be >= 1"));
        }
        if !(self.boost.t_boost >= 0.0 && self.boost.t_boost.is_finite()) {
            return Err(Error::param("t_boost", format!("must be finite and >= 0, got {}", self.boost.t_boost)));
        }
        self.recovery.validate()?;
        if let Some(levels) = &self.ac_biasing {
            for level in levels {
                if !(level.rate > 0.0 && level.rate.is_finite()) {
                    return Err(Error::param("ac_biasing.rate", format!("must be > 0, got {}", level.rate)));
                }
                level.recovery.validate()?;
            }
        }
        Ok(())
    }

    /// Recovery profile for a detected rate, from the AC-biasing table.
    pub fn ac_profile(&self, detected_rate: f64) -> Result<&RecoveryProfile> {
        let levels = self.ac_biasing.as_deref().unwrap_or(&[]);
        levels
            .iter()
            .map(|l| (((l.rate - detected_rate) / l.rate).abs(), l))
            .filter(|(d, _)| *d <= AC_LEVEL_TOLERANCE)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, l)| &l.recovery)
            .ok_or(Error::MissingProfile(detected_rate))
    }
}

/// Inter-arrival times of a Poisson process.
pub struct Arrivals {
    rng: ChaCha8Rng,
    mean: f64,
    remaining: u64,
}

impl Iterator for Arrivals {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let e: f64 = Exp1.sample(&mut self.rng);
        Some(e * self.mean)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.remaining as usize;
        (n, Some(n))
    }
}

/// `n` exponentially distributed inter-arrival times (s) with mean `1/rate`.
pub fn generate_arrivals(rate: f64, n: u64, seed: u64) -> Result<Arrivals> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::param("rate", format!("must be > 0, got {rate}")));
    }
    Ok(Arrivals {
        rng: seed::rng(seed, seed::ARRIVAL_STREAM),
        mean: 1.0 / rate,
        remaining: n,
    })
}

/// Detector state machine driven one photon at a time.
#[derive(Debug, Clone)]
pub struct Detector {
    efficiency: f64,
    profile: CompiledProfile,
    boost: BoostConfig,
    since_click: f64,
    boost_armed: bool,
}

impl Detector {
    /// A detector that has just clicked.
    pub fn new(steady_state_efficiency: f64, profile: &RecoveryProfile, boost: BoostConfig) -> Self {
        Self {
            efficiency: steady_state_efficiency,
            profile: profile.compile(),
            boost,
            since_click: 0.0,
            boost_armed: false,
        }
    }

    /// Detection probability of a photon arriving `dt` after the previous one.
    #[inline]
    pub fn probability(&self, dt: f64) -> f64 {
        let base = self.efficiency * self.profile.efficiency(self.since_click + dt);
        let p = if self.boost_armed && self.boost.covers(dt) {
            self.boost.boosted(base)
        } else {
            base
        };
        p.clamp(0.0, 1.0)
    }

    /// Advances by one photon; `u` is a uniform draw in `[0, 1)`.
    #[inline]
    pub fn photon(&mut self, dt: f64, u: f64) -> bool {
        let p = self.probability(dt);
        self.since_click += dt;
        let detected = u < p;
        if detected {
            self.since_click = 0.0;
            self.boost_armed = false;
        } else {
            self.boost_armed = self.boost.is_enabled();
        }
        detected
    }
}

/// Result of a single detection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub n_photons: u64,
    /// Clicks among the random photons (the forced click at `t = 0` is not counted).
    pub detected_count: u64,
    /// Arrival time of the last photon (s).
    pub elapsed: f64,
    /// Detected rate (Hz).
    pub effective_rate: f64,
    /// One-sigma uncertainty of the detected rate (Hz).
    pub statistical_uncertainty: f64,
    /// Click times (s), starting with the forced click at 0; capped in length.
    pub detected_timestamps: Option<Vec<f64>>,
}

/// Runs the detector over a stream of inter-arrival times.
///
/// Decision draws come from the config seed's decision stream, one per photon.
pub fn simulate_detections<I>(arrivals: I, config: &SimConfig) -> Result<SimOutcome>
where
    I: IntoIterator<Item = f64>,
{
    simulate_with_timestamps(arrivals, config, 0)
}

/// As [`simulate_detections`], additionally recording up to `cap` click times.
pub fn simulate_with_timestamps<I>(arrivals: I, config: &SimConfig, cap: usize) -> Result<SimOutcome>
where
    I: IntoIterator<Item = f64>,
{
    config.validate()?;
    let mut decisions = seed::rng(config.seed, seed::DECISION_STREAM);
    let mut det = Detector::new(config.steady_state_efficiency, &config.recovery, config.boost);
    let mut stamps = (cap > 0).then(|| vec![0.0]);
    let (mut n, mut k, mut t) = (0u64, 0u64, 0.0f64);
    for dt in arrivals {
        let u: f64 = decisions.random();
        t += dt;
        n += 1;
        if det.photon(dt, u) {
            k += 1;
            if let Some(s) = stamps.as_mut().filter(|s| s.len() < cap) {
                s.push(t);
            }
        }
    }
    let (rate, sigma) = if t > 0.0 {
        (k as f64 / t, (k as f64).sqrt() / t)
    } else {
        (0.0, 0.0)
    };
    Ok(SimOutcome {
        n_photons: n,
        detected_count: k,
        elapsed: t,
        effective_rate: rate,
        statistical_uncertainty: sigma,
        detected_timestamps: stamps,
    })
}

#[derive(Debug, Clone, Copy, Default)]
struct ChunkTally {
    /// Elapsed time at the primary flux.
    elapsed: f64,
    primary: u64,
    secondary: u64,
}

fn chunk_sizes(total: u64, chunk: u64) -> Vec<u64> {
    let full = total / chunk;
    let rest = total % chunk;
    let mut sizes = vec![chunk; full as usize];
    if rest > 0 {
        sizes.push(rest);
    }
    sizes
}

/// Simulates `n` photons at `phi` and, optionally, a second detector seeing
/// the same photons at half the flux (every gap doubled).
fn run_chunk(
    phi: f64,
    n: u64,
    chunk_seed: u64,
    efficiency: f64,
    boost: BoostConfig,
    primary: &RecoveryProfile,
    secondary: Option<&RecoveryProfile>,
) -> ChunkTally {
    let mut arrivals = seed::rng(chunk_seed, seed::ARRIVAL_STREAM);
    let mut decisions = seed::rng(chunk_seed, seed::DECISION_STREAM);
    let mut a = Detector::new(efficiency, primary, boost);
    let mut b = secondary.map(|p| Detector::new(efficiency, p, boost));
    let mean = 1.0 / phi;
    let mut tally = ChunkTally::default();
    for _ in 0..n {
        let e: f64 = Exp1.sample(&mut arrivals);
        let u: f64 = decisions.random();
        let dt = e * mean;
        tally.elapsed += dt;
        tally.primary += a.photon(dt, u) as u64;
        if let Some(b) = b.as_mut() {
            tally.secondary += b.photon(2.0 * dt, u) as u64;
        }
    }
    tally
}

fn run_chunks(
    phi: f64,
    config: &SimConfig,
    point_seed: u64,
    primary: &RecoveryProfile,
    secondary: Option<&RecoveryProfile>,
) -> Vec<ChunkTally> {
    let sizes = chunk_sizes(config.n_photons, config.chunk_photons);
    sizes
        .par_iter()
        .enumerate()
        .map(|(i, &n)| {
            run_chunk(
                phi,
                n,
                seed::derive(point_seed, i as u64),
                config.steady_state_efficiency,
                config.boost,
                primary,
                secondary,
            )
        })
        .collect()
}

/// Ratio `Σa/Σb` and its batch-means standard error.
fn ratio_estimate(a: &[f64], b: &[f64]) -> (f64, Option<f64>) {
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let r = sa / sb;
    let n = a.len();
    if n < 2 {
        return (r, None);
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - r * y).powi(2)).sum();
    (r, Some((ss * n as f64 / (n as f64 - 1.0)).sqrt() / sb))
}

/// Detected rate at incident flux `phi`, chunked and parallel.
///
/// The uncertainty is the batch-means standard error over chunks, or the
/// Poisson error when the run fits into a single chunk.
pub fn simulate_rate(phi: f64, config: &SimConfig, point_seed: u64) -> Result<SimOutcome> {
    simulate_rate_with(phi, config, point_seed, &config.recovery)
}

fn simulate_rate_with(phi: f64, config: &SimConfig, point_seed: u64, profile: &RecoveryProfile) -> Result<SimOutcome> {
    config.validate()?;
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::param("phi", format!("must be > 0, got {phi}")));
    }
    let tallies = run_chunks(phi, config, point_seed, profile, None);
    let k: Vec<f64> = tallies.iter().map(|t| t.primary as f64).collect();
    let t: Vec<f64> = tallies.iter().map(|t| t.elapsed).collect();
    let (rate, batch) = ratio_estimate(&k, &t);
    let elapsed: f64 = t.iter().sum();
    let detected: u64 = tallies.iter().map(|t| t.primary).sum();
    Ok(SimOutcome {
        n_photons: config.n_photons,
        detected_count: detected,
        elapsed,
        effective_rate: rate,
        statistical_uncertainty: batch.unwrap_or((detected as f64).sqrt() / elapsed),
        detected_timestamps: None,
    })
}

/// Simulated residuum at one combined flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResiduumEstimate {
    /// Combined incident flux `φ₁₊₂` (Hz).
    pub phi12: f64,
    /// Detected rate with both paths open (Hz).
    pub nu12: f64,
    pub nu12_sigma: f64,
    /// Detected rate with a single path open (Hz).
    pub nu1: f64,
    pub nu1_sigma: f64,
    /// `2ν₁/ν₁₊₂ − 1`.
    pub delta: f64,
    pub delta_sigma: f64,
    /// Number of chunks (batches) behind each rate.
    pub batches: u64,
}

impl ResiduumEstimate {
    pub fn to_point(&self) -> ResiduumPoint {
        ResiduumPoint {
            nu12: self.nu12,
            delta: self.delta,
            delta_sem: self.delta_sigma,
            cycles: self.batches,
        }
    }
}

fn check_flux(phi12: f64) -> Result<()> {
    if phi12 > 0.0 && phi12.is_finite() {
        Ok(())
    } else {
        Err(Error::param("rate_12", format!("must be > 0, got {phi12}")))
    }
}

/// Simulates the combined and single-path fluxes at `phi12` and `phi12/2`
/// with the config's recovery profile.
pub fn simulated_residuum(phi12: f64, config: &SimConfig) -> Result<ResiduumEstimate> {
    check_flux(phi12)?;
    residuum_with_profiles(phi12, config, seed::for_rate(config.seed, phi12), &config.recovery, &config.recovery)
}

/// Residuum with the AC-biasing profiles: the combined-flux run uses the
/// profile measured near its detected rate, the single-path runs the profile
/// measured near half that rate.
///
/// Detected rates are estimated as `A·φ` for the profile lookup.
pub fn simulate_with_ac_biasing(phi12: f64, config: &SimConfig) -> Result<ResiduumEstimate> {
    check_flux(phi12)?;
    let a = config.steady_state_efficiency;
    let high = config.ac_profile(a * phi12)?;
    let low = config.ac_profile(0.5 * a * phi12)?;
    residuum_with_profiles(phi12, config, seed::for_rate(config.seed, phi12), high, low)
}

fn residuum_with_profiles(
    phi12: f64,
    config: &SimConfig,
    point_seed: u64,
    combined: &RecoveryProfile,
    single: &RecoveryProfile,
) -> Result<ResiduumEstimate> {
    config.validate()?;
    match config.pairing {
        Pairing::Common => {
            let tallies = run_chunks(phi12, config, point_seed, combined, Some(single));
            let full: Vec<f64> = tallies.iter().map(|t| t.primary as f64).collect();
            let half: Vec<f64> = tallies.iter().map(|t| t.secondary as f64).collect();
            let time: Vec<f64> = tallies.iter().map(|t| t.elapsed).collect();
            let (nu12, s12) = ratio_estimate(&full, &time);
            let (nu1_2x, s1_2x) = ratio_estimate(&half, &time);
            let (ratio, s_ratio) = ratio_estimate(&half, &full);
            let (k12, k1): (f64, f64) = (full.iter().sum(), half.iter().sum());
            let t: f64 = time.iter().sum();
            let poisson = |k: f64| k.sqrt() / t;
            let delta = ratio - 1.0;
            Ok(ResiduumEstimate {
                phi12,
                nu12,
                nu12_sigma: s12.unwrap_or_else(|| poisson(k12)),
                nu1: 0.5 * nu1_2x,
                nu1_sigma: 0.5 * s1_2x.unwrap_or_else(|| poisson(k1)),
                delta,
                delta_sigma: s_ratio.unwrap_or_else(|| ratio * (1.0 / k1 + 1.0 / k12).sqrt()),
                batches: tallies.len() as u64,
            })
        }
        Pairing::Independent => {
            let full = simulate_rate_with(phi12, config, seed::derive(point_seed, 1 << 40), combined)?;
            let half = simulate_rate_with(0.5 * phi12, config, seed::derive(point_seed, 2 << 40), single)?;
            let ratio = 2.0 * half.effective_rate / full.effective_rate;
            let rel = ((half.statistical_uncertainty / half.effective_rate).powi(2)
                + (full.statistical_uncertainty / full.effective_rate).powi(2))
            .sqrt();
            Ok(ResiduumEstimate {
                phi12,
                nu12: full.effective_rate,
                nu12_sigma: full.statistical_uncertainty,
                nu1: half.effective_rate,
                nu1_sigma: half.statistical_uncertainty,
                delta: ratio - 1.0,
                delta_sigma: ratio * rel,
                batches: chunk_sizes(config.n_photons, config.chunk_photons).len() as u64,
            })
        }
    }
}

/// One [`simulated_residuum`] per flux, run in parallel.
pub fn sweep_residuum(rates: &[f64], config: &SimConfig) -> Result<Vec<ResiduumEstimate>> {
    sweep_with(rates, config, simulated_residuum)
}

/// One [`simulate_with_ac_biasing`] per flux, run in parallel.
pub fn sweep_ac_biasing(rates: &[f64], config: &SimConfig) -> Result<Vec<ResiduumEstimate>> {
    sweep_with(rates, config, simulate_with_ac_biasing)
}

fn sweep_with(
    rates: &[f64],
    config: &SimConfig,
    point: fn(f64, &SimConfig) -> Result<ResiduumEstimate>,
) -> Result<Vec<ResiduumEstimate>> {
    if rates.is_empty() {
        return Err(Error::InvalidData("empty rate list".into()));
    }
    config.validate()?;
    rates.par_iter().map(|&phi| point(phi, config)).collect()
}

/// Converts sweep results into a residuum curve.
pub fn to_curve(estimates: &[ResiduumEstimate]) -> ResiduumCurve {
    ResiduumCurve {
        points: estimates.iter().map(ResiduumEstimate::to_point).collect(),
    }
}
