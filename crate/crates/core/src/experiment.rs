//! Virtual superposition-method experiment.
//!
//! Two equal paths illuminate the detector through shutters. For every flux
//! step the four shutter settings (closed, path 1, path 2, both) are measured
//! repeatedly, background-corrected, and reduced to the normalised residuum
//! `Δ = (ν₁ + ν₂)/ν₁₊₂ − 1`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::montecarlo::{generate_arrivals, simulate_detections, SimConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShutterSetting {
    Closed,
    Path1,
    Path2,
    Both,
}

impl ShutterSetting {
    pub const ALL: [ShutterSetting; 4] = [
        ShutterSetting::Closed,
        ShutterSetting::Path1,
        ShutterSetting::Path2,
        ShutterSetting::Both,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Raw rates of one cycle through the four shutter settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    /// Raw detected rates `ν̂ᵢ` (Hz), indexed by [`ShutterSetting`].
    pub raw_rates: [f64; 4],
    /// Integration time per setting (s).
    pub integration_time: f64,
}

impl CycleRecord {
    pub fn new(closed: f64, path1: f64, path2: f64, both: f64, integration_time: f64) -> Self {
        Self {
            raw_rates: [closed, path1, path2, both],
            integration_time,
        }
    }

    pub fn raw(&self, setting: ShutterSetting) -> f64 {
        self.raw_rates[setting.index()]
    }

    /// Background `ν₀`: the rate with both shutters closed.
    pub fn background(&self) -> f64 {
        self.raw(ShutterSetting::Closed)
    }

    /// Background-corrected rate `νᵢ = ν̂ᵢ − ν₀`.
    pub fn corrected(&self, setting: ShutterSetting) -> f64 {
        self.raw(setting) - self.background()
    }
}

/// Residuum of one cycle: `r = ν₁ + ν₂ − ν₁₊₂` (Hz) and `Δ = r/ν₁₊₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleResiduum {
    pub nu12: f64,
    pub r: f64,
    pub delta: f64,
}

pub fn residuum_from_cycle(c: &CycleRecord) -> Result<CycleResiduum> {
    if c.raw_rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::InvalidData(format!("raw rates must be >= 0: {:?}", c.raw_rates)));
    }
    let nu1 = c.corrected(ShutterSetting::Path1);
    let nu2 = c.corrected(ShutterSetting::Path2);
    let nu12 = c.corrected(ShutterSetting::Both);
    if nu12 <= 0.0 {
        return Err(Error::InvalidData(format!(
            "background-corrected combined rate must be > 0, got {nu12}"
        )));
    }
    let r = nu1 + nu2 - nu12;
    Ok(CycleResiduum { nu12, r, delta: r / nu12 })
}

/// One point of a residuum curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResiduumPoint {
    /// Detected rate with both paths open (Hz).
    pub nu12: f64,
    pub delta: f64,
    /// Standard error of the mean of `delta`.
    pub delta_sem: f64,
    pub cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResiduumCurve {
    pub points: Vec<ResiduumPoint>,
}

impl ResiduumCurve {
    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            if !(p.nu12 > 0.0 && p.nu12.is_finite()) {
                return Err(Error::InvalidData(format!("nu12 must be > 0, got {}", p.nu12)));
            }
            if !(p.delta_sem >= 0.0) || !p.delta.is_finite() {
                return Err(Error::InvalidData(format!("bad residuum point {p:?}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Mean residuum over repeated cycles with its standard error.
pub fn aggregate_cycles(cycles: &[CycleRecord]) -> Result<ResiduumPoint> {
    if cycles.len() < 2 {
        return Err(Error::InvalidData(format!(
            "need at least 2 cycles, got {}",
            cycles.len()
        )));
    }
    let values = cycles.iter().map(residuum_from_cycle).collect::<Result<Vec<_>>>()?;
    let n = values.len() as f64;
    let mean_nu = values.iter().map(|v| v.nu12).sum::<f64>() / n;
    let mean = values.iter().map(|v| v.delta).sum::<f64>() / n;
    let var = values.iter().map(|v| (v.delta - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(ResiduumPoint {
        nu12: mean_nu,
        delta: mean,
        delta_sem: (var / n).sqrt(),
        cycles: values.len() as u64,
    })
}

/// Half-wave-plate power schedule `Pᵢ = P₀ cos²(2αᵢ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxSchedule {
    /// Power with the plate at 0°, expressed as the combined photon flux on
    /// the detector (Hz).
    pub p0: f64,
    /// Plate angles in degrees, each in [0, 45].
    pub angles: Vec<f64>,
}

impl FluxSchedule {
    /// Angles giving `steps` equidistant powers `P₀·k/steps`, `k = 1..=steps`.
    pub fn equidistant(p0: f64, steps: usize) -> Self {
        let angles = (1..=steps)
            .map(|k| 0.5 * (k as f64 / steps as f64).sqrt().acos().to_degrees())
            .collect();
        Self { p0, angles }
    }

    pub fn powers(&self) -> Result<Vec<f64>> {
        power_schedule(self.p0, &self.angles)
    }
}

pub fn power_schedule(p0: f64, angles: &[f64]) -> Result<Vec<f64>> {
    if !(p0 >= 0.0 && p0.is_finite()) {
        return Err(Error::param("p0", format!("must be >= 0, got {p0}")));
    }
    angles
        .iter()
        .map(|&a| {
            if !(0.0..=45.0).contains(&a) {
                return Err(Error::param("angle", format!("must be within [0, 45] degrees, got {a}")));
            }
            let c = (2.0 * a).to_radians().cos();
            Ok(p0 * c * c)
        })
        .collect()
}

/// Knobs of the virtual experiment besides the detector itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    /// Background (dark count) rate added to every setting (Hz).
    pub background_rate: f64,
    /// Relative path imbalance: `φ₁ = φ₁₊₂(1+x)/2`, `φ₂ = φ₁₊₂(1−x)/2`.
    pub imbalance: f64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            background_rate: 350.0,
            imbalance: 0.0,
        }
    }
}

/// Simulates one shutter setting; returns the raw rate (Hz).
fn measure(flux: f64, background: f64, integration: f64, detector: &SimConfig, run_seed: u64) -> Result<f64> {
    let mut rng = seed::rng(run_seed, 2);
    let mut background_counts = |t: f64| -> Result<f64> {
        if background * t <= 0.0 {
            return Ok(0.0);
        }
        let dist = Poisson::new(background * t).map_err(|e| Error::param("background_rate", e.to_string()))?;
        Ok(dist.sample(&mut rng))
    };
    let photons = (flux * integration).round() as u64;
    if photons == 0 {
        return Ok(background_counts(integration)? / integration);
    }
    let mut cfg = detector.clone();
    cfg.seed = seed::derive(run_seed, 1);
    let arrivals = generate_arrivals(flux, photons, seed::derive(run_seed, 0))?;
    let out = simulate_detections(arrivals, &cfg)?;
    let t = out.elapsed;
    Ok((out.detected_count as f64 + background_counts(t)?) / t)
}

/// Simulates `cycles` shutter cycles per flux step and aggregates them.
///
/// Shot noise comes entirely from the simulated detection process and the
/// Poissonian background. Steps with zero power are skipped.
pub fn run_virtual_experiment(
    schedule: &FluxSchedule,
    detector: &SimConfig,
    cycles: usize,
    integration: f64,
    options: &ExperimentOptions,
) -> Result<ResiduumCurve> {
    detector.validate()?;
    if cycles < 2 {
        return Err(Error::param("cycles", format!("need at least 2, got {cycles}")));
    }
    if !(integration > 0.0 && integration.is_finite()) {
        return Err(Error::param("integration", format!("must be > 0, got {integration}")));
    }
    if !(options.imbalance.abs() < 1.0) {
        return Err(Error::param("imbalance", format!("must be in (-1, 1), got {}", options.imbalance)));
    }
    if !(options.background_rate >= 0.0) {
        return Err(Error::param("background_rate", "must be >= 0"));
    }
    let steps: Vec<(usize, f64)> = schedule
        .powers()?
        .into_iter()
        .enumerate()
        .filter(|(_, p)| *p > 0.0)
        .collect();
    let points = steps
        .par_iter()
        .map(|&(step, phi12)| {
            let step_seed = seed::derive(detector.seed, step as u64);
            let records = (0..cycles)
                .into_par_iter()
                .map(|cycle| {
                    let cycle_seed = seed::derive(step_seed, cycle as u64);
                    let flux = [
                        0.0,
                        0.5 * phi12 * (1.0 + options.imbalance),
                        0.5 * phi12 * (1.0 - options.imbalance),
                        phi12,
                    ];
                    let mut raw = [0.0; 4];
                    for setting in ShutterSetting::ALL {
                        let i = setting.index();
                        raw[i] = measure(flux[i], options.background_rate, integration, detector, seed::derive(cycle_seed, i as u64))?;
                    }
                    Ok(CycleRecord {
                        raw_rates: raw,
                        integration_time: integration,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            aggregate_cycles(&records)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResiduumCurve { points })
}

/// Polynomial degree used to read off `Δ` at a fixed rate.
pub const EXTRACTION_DEGREE: usize = 5;

/// `Δ` and its uncertainty at `target` from a weighted degree-5 least-squares
/// polynomial through the whole curve.
///
/// Points are weighted by `1/sem²` when every sem is positive; otherwise unit
/// weights are used and the covariance is scaled by the residual variance.
pub fn extract_at_rate(curve: &ResiduumCurve, target: f64) -> Result<(f64, f64)> {
    curve.validate()?;
    let n = curve.len();
    let terms = EXTRACTION_DEGREE + 1;
    if n < terms {
        return Err(Error::Underdetermined { points: n, params: terms });
    }
    let lo = curve.points.iter().map(|p| p.nu12).fold(f64::INFINITY, f64::min);
    let hi = curve.points.iter().map(|p| p.nu12).fold(f64::NEG_INFINITY, f64::max);
    if !(target >= lo && target <= hi) {
        return Err(Error::Domain(format!(
            "target {target} Hz outside the measured range [{lo}, {hi}] Hz"
        )));
    }
    let center = 0.5 * (lo + hi);
    let half = (0.5 * (hi - lo)).max(f64::MIN_POSITIVE);
    let weighted = curve.points.iter().all(|p| p.delta_sem > 0.0);
    let basis = |nu: f64| {
        let x = (nu - center) / half;
        DVector::from_iterator(terms, (0..terms).map(|k| x.powi(k as i32)))
    };
    let mut a = DMatrix::zeros(n, terms);
    let mut b = DVector::zeros(n);
    for (i, p) in curve.points.iter().enumerate() {
        let w = if weighted { 1.0 / p.delta_sem } else { 1.0 };
        a.set_row(i, &(basis(p.nu12) * w).transpose());
        b[i] = p.delta * w;
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= smax * 1e-13 {
        return Err(Error::Singular("rate abscissae do not support a degree-5 polynomial".into()));
    }
    let coef = svd.solve(&b, 0.0).map_err(|e| Error::Singular(e.to_string()))?;
    let v = svd.v_t.as_ref().expect("computed").transpose();
    let inv_s2 = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / (s * s)));
    let mut cov = &v * inv_s2 * v.transpose();
    if !weighted {
        let dof = n - terms;
        let resid = (&a * &coef - &b).norm_squared();
        cov *= if dof > 0 { resid / dof as f64 } else { 0.0 };
    }
    let phi = basis(target);
    let value = phi.dot(&coef);
    let var = (phi.transpose() * &cov * &phi)[(0, 0)];
    Ok((value, var.max(0.0).sqrt()))
}
