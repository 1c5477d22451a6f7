//! Weighted nonlinear least squares and the model adapters built on it.
//!
//! [`least_squares_fit`] minimises `Σ((yᵢ − f(xᵢ; θ))/σᵢ)²` with a damped
//! Gauss-Newton iteration. Parameter covariances are the unscaled inverse of
//! `JᵀJ` at the optimum, so they are meaningful when the `σᵢ` are true
//! one-sigma errors; `reduced_chi2` tells how far that holds.
//!
//! Adapters express dead times and TPD intervals in ns and currents in µA,
//! which keeps the normal equations well conditioned.

mod lm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ResiduumCurve;
use crate::histogram::NormalizedRecoveryCurve;
use crate::models::{
    bias_recovery, combined_residuum, deadtime_residuum, sde_vs_bias, BiasRecovery, DeadTime, SdeParams, Tpd,
};

/// Name and unit of a model parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: &'static str,
    pub unit: &'static str,
}

/// A scalar model `f(x; θ)`.
pub trait Model {
    fn parameters(&self) -> Vec<ParamInfo>;

    fn eval(&self, x: f64, params: &[f64]) -> Result<f64>;

    /// `∂f/∂θ` at `x`; central differences unless overridden.
    fn gradient(&self, x: f64, params: &[f64], out: &mut [f64]) -> Result<()> {
        numeric_gradient(self, x, params, out)
    }
}

/// Central-difference gradient with step `10⁻⁶·max(|θ|, 1)`.
pub fn numeric_gradient<M: Model + ?Sized>(model: &M, x: f64, params: &[f64], out: &mut [f64]) -> Result<()> {
    let mut p = params.to_vec();
    for k in 0..params.len() {
        let h = 1e-6 * params[k].abs().max(1.0);
        p[k] = params[k] + h;
        let up = model.eval(x, &p)?;
        p[k] = params[k] - h;
        let down = model.eval(x, &p)?;
        p[k] = params[k];
        out[k] = (up - down) / (2.0 * h);
    }
    Ok(())
}

/// Abscissae, ordinates and one-sigma errors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataSeries {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl DataSeries {
    pub fn new(x: Vec<f64>, y: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let d = Self { x, y, sigma };
        d.validate()?;
        Ok(d)
    }

    /// Series with unit weights.
    pub fn unweighted(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        Self::new(x, y, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() || self.x.len() != self.sigma.len() {
            return Err(Error::InvalidData(format!(
                "length mismatch: x {}, y {}, sigma {}",
                self.x.len(),
                self.y.len(),
                self.sigma.len()
            )));
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite data value".into()));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidData("sigma values must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative decrease of the cost below which the iteration stops.
    pub tolerance: f64,
    /// Per-parameter `(lower, upper)`; proposals are projected into the box.
    pub bounds: Option<Vec<(f64, f64)>>,
    /// Parameters held at their initial value.
    pub fixed: Vec<bool>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-10,
            bounds: None,
            fixed: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParameter {
    pub name: String,
    pub unit: String,
    pub value: f64,
    pub uncertainty: f64,
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub parameters: Vec<FitParameter>,
    /// Covariance over all parameters; rows and columns of fixed ones are zero.
    pub covariance: Vec<Vec<f64>>,
    pub chi2: f64,
    pub dof: usize,
    pub reduced_chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Conditions worth a second look, e.g. near-degenerate parameters.
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.param(name).map(|p| p.value)
    }

    pub fn uncertainty(&self, name: &str) -> Option<f64> {
        self.param(name).map(|p| p.uncertainty)
    }

    pub fn param(&self, name: &str) -> Option<&FitParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn values(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.value).collect()
    }

    pub fn correlation(&self, a: usize, b: usize) -> f64 {
        let c = &self.covariance;
        c[a][b] / (c[a][a] * c[b][b]).sqrt()
    }
}

/// `Σ(rᵢ/σᵢ)² / (n − p)`.
pub fn reduced_chi2(residuals: &[f64], sigmas: &[f64], n_params: usize) -> Result<f64> {
    if residuals.len() != sigmas.len() {
        return Err(Error::InvalidData("residuals and sigmas differ in length".into()));
    }
    if residuals.len() <= n_params {
        return Err(Error::Underdetermined {
            points: residuals.len(),
            params: n_params,
        });
    }
    let chi2: f64 = residuals.iter().zip(sigmas).map(|(r, s)| (r / s).powi(2)).sum();
    Ok(chi2 / (residuals.len() - n_params) as f64)
}

/// Fits `model` to `data` starting from `initial`.
pub fn least_squares_fit(model: &dyn Model, data: &DataSeries, initial: &[f64], options: &FitOptions) -> Result<FitResult> {
    fit_named(model, "custom", data, initial, options)
}

fn fit_named(model: &dyn Model, name: &str, data: &DataSeries, initial: &[f64], options: &FitOptions) -> Result<FitResult> {
    data.validate()?;
    let info = model.parameters();
    if initial.len() != info.len() {
        return Err(Error::InvalidData(format!(
            "{} initial values for {} parameters",
            initial.len(),
            info.len()
        )));
    }
    if let Some(b) = &options.bounds {
        if b.len() != info.len() {
            return Err(Error::InvalidData("bounds length does not match parameter count".into()));
        }
        for (k, (v, (lo, hi))) in initial.iter().zip(b).enumerate() {
            if !(lo <= v && v <= hi) {
                return Err(Error::InvalidData(format!(
                    "initial {} = {v} outside bounds [{lo}, {hi}]",
                    info[k].name
                )));
            }
        }
    }
    let n_free = (0..info.len())
        .filter(|&k| !options.fixed.get(k).copied().unwrap_or(false))
        .count();
    if data.len() < n_free + 1 {
        return Err(Error::Underdetermined {
            points: data.len(),
            params: n_free,
        });
    }
    let sol = lm::solve(model, data, initial, options)?;

    let n = info.len();
    let mut cov = vec![vec![0.0; n]; n];
    for (a, &ka) in sol.free.iter().enumerate() {
        for (b, &kb) in sol.free.iter().enumerate() {
            cov[ka][kb] = sol.covariance[(a, b)];
        }
    }
    let parameters = info
        .iter()
        .enumerate()
        .map(|(k, p)| FitParameter {
            name: p.name.to_string(),
            unit: p.unit.to_string(),
            value: sol.params[k],
            uncertainty: cov[k][k].max(0.0).sqrt(),
            fixed: !sol.free.contains(&k),
        })
        .collect();
    let dof = data.len() - n_free;
    Ok(FitResult {
        model: name.to_string(),
        parameters,
        covariance: cov,
        chi2: sol.cost,
        dof,
        reduced_chi2: sol.cost / dof as f64,
        iterations: sol.iterations,
        converged: true,
        warnings: Vec::new(),
    })
}

const NS: f64 = 1e-9;

/// Dead-time residuum `Δ(ν₁₊₂; τ)`; parameter `tau` in ns.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeadTimeResiduumModel;

impl Model for DeadTimeResiduumModel {
    fn parameters(&self) -> Vec<ParamInfo> {
        vec![ParamInfo { name: "tau", unit: "ns" }]
    }

    fn eval(&self, x: f64, p: &[f64]) -> Result<f64> {
        deadtime_residuum(x, DeadTime::new(p[0] * NS)?)
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) -> Result<()> {
        let d = 2.0 - p[0] * NS * x;
        if d <= 0.0 {
            return Err(Error::Domain("tau*nu12 >= 2".into()));
        }
        out[0] = 2.0 * x * NS / (d * d);
        Ok(())
    }
}

/// Combined dead-time/TPD residuum; parameters `tau` and `epsilon` in ns.
#[derive(Debug, Clone, Copy, Default)]
pub struct CombinedResiduumModel;

impl Model for CombinedResiduumModel {
    fn parameters(&self) -> Vec<ParamInfo> {
        vec![
            ParamInfo { name: "tau", unit: "ns" },
            ParamInfo { name: "epsilon", unit: "ns" },
        ]
    }

    fn eval(&self, x: f64, p: &[f64]) -> Result<f64> {
        combined_residuum(x, DeadTime::new(p[0] * NS)?, Tpd::new(p[1] * NS)?)
    }

    /// Central differences, switching to a second-order forward stencil at
    /// the `ε, τ ≥ 0` boundary.
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) -> Result<()> {
        let mut q = p.to_vec();
        let mut at = |k: usize, v: f64| -> Result<f64> {
            q[k] = v;
            let f = self.eval(x, &q);
            q[k] = p[k];
            f
        };
        for k in 0..2 {
            let h = 1e-6 * p[k].abs().max(1.0);
            out[k] = if p[k] >= h {
                (at(k, p[k] + h)? - at(k, p[k] - h)?) / (2.0 * h)
            } else {
                (-3.0 * at(k, p[k])? + 4.0 * at(k, p[k] + h)? - at(k, p[k] + 2.0 * h)?) / (2.0 * h)
            };
        }
        Ok(())
    }
}

/// Error-function efficiency versus bias current (µA).
#[derive(Debug, Clone, Copy, Default)]
pub struct ErfSdeModel;

impl Model for ErfSdeModel {
    fn parameters(&self) -> Vec<ParamInfo> {
        vec![
            ParamInfo { name: "eta_max", unit: "" },
            ParamInfo { name: "i0", unit: "uA" },
            ParamInfo { name: "delta_i", unit: "uA" },
        ]
    }

    fn eval(&self, x: f64, p: &[f64]) -> Result<f64> {
        if !(p[2] > 0.0) {
            return Err(Error::Domain("delta_i must be > 0".into()));
        }
        Ok(sde_vs_bias(
            x,
            &SdeParams {
                eta_max: p[0],
                i0: p[1],
                delta_i: p[2],
            },
        ))
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) -> Result<()> {
        let (eta, i0, di) = (p[0], p[1], p[2]);
        if !(di > 0.0) {
            return Err(Error::Domain("delta_i must be > 0".into()));
        }
        let z = (x - i0) / di;
        let bump = eta * (-z * z).exp() / std::f64::consts::PI.sqrt();
        out[0] = 0.5 * (1.0 + libm::erf(z));
        out[1] = -bump / di;
        out[2] = -bump * z / di;
        Ok(())
    }
}

/// Normalised recovery profile versus delay (s); parameters `tau_rec` (ns),
/// `i_drop` (µA) and `scale`.
///
/// `scale` absorbs the statistical error of the plateau used to normalise a
/// histogram. Without it that error, common to every bin, would be forced
/// into the two physical parameters.
#[derive(Debug, Clone, Copy)]
pub struct RecoveryModel {
    pub sde: SdeParams,
    pub i_bias: f64,
    /// Delay (s) at which the data are scaled to one; `None` for the asymptote.
    pub norm_delay: Option<f64>,
}

impl RecoveryModel {
    fn bias(&self, p: &[f64]) -> Result<BiasRecovery> {
        if !(p[0] > 0.0) || !(p[1] > 0.0 && p[1] < self.i_bias) {
            return Err(Error::Domain(format!("recovery parameters out of range: {p:?}")));
        }
        Ok(BiasRecovery {
            i_bias: self.i_bias,
            i_drop: p[1],
            tau: p[0] * NS,
        })
    }
}

impl Model for RecoveryModel {
    fn parameters(&self) -> Vec<ParamInfo> {
        vec![
            ParamInfo { name: "tau_rec", unit: "ns" },
            ParamInfo { name: "i_drop", unit: "uA" },
            ParamInfo { name: "scale", unit: "" },
        ]
    }

    fn eval(&self, x: f64, p: &[f64]) -> Result<f64> {
        let rec = self.bias(p)?;
        let norm = match self.norm_delay {
            Some(t) => sde_vs_bias(bias_recovery(t, &rec), &self.sde),
            None => sde_vs_bias(self.i_bias, &self.sde),
        };
        Ok(p[2] * sde_vs_bias(bias_recovery(x, &rec), &self.sde) / norm)
    }
}

/// Residuum curve as fit data; falls back to unit weights when any sem is zero.
fn residuum_data(curve: &ResiduumCurve, warnings: &mut Vec<String>) -> Result<DataSeries> {
    curve.validate()?;
    let x: Vec<f64> = curve.points.iter().map(|p| p.nu12).collect();
    let y: Vec<f64> = curve.points.iter().map(|p| p.delta).collect();
    if curve.points.iter().all(|p| p.delta_sem > 0.0) {
        DataSeries::new(x, y, curve.points.iter().map(|p| p.delta_sem).collect())
    } else {
        warnings.push("missing standard errors: unit weights used".into());
        DataSeries::unweighted(x, y)
    }
}

/// Initial dead time (ns) for residuum fits.
pub const INITIAL_TAU_NS: f64 = 30.0;

/// Fits the dead-time residuum; reports `tau` in ns.
pub fn fit_deadtime_model(curve: &ResiduumCurve) -> Result<FitResult> {
    fit_deadtime_model_with(curve, &FitOptions::default())
}

pub fn fit_deadtime_model_with(curve: &ResiduumCurve, options: &FitOptions) -> Result<FitResult> {
    let mut warnings = Vec::new();
    let data = residuum_data(curve, &mut warnings)?;
    let max_nu = data.x.iter().cloned().fold(0.0, f64::max);
    let upper = if max_nu > 0.0 { (2.0 / (max_nu * NS)) * (1.0 - 1e-9) } else { f64::INFINITY };
    let opts = FitOptions {
        bounds: Some(vec![(0.0, upper)]),
        ..options.clone()
    };
    let mut fit = fit_named(&DeadTimeResiduumModel, "deadtime", &data, &[INITIAL_TAU_NS.min(0.5 * upper)], &opts)?;
    fit.warnings.extend(warnings);
    Ok(fit)
}

/// Correlation magnitude above which `tau` and `epsilon` are reported degenerate.
pub const DEGENERACY_CORRELATION: f64 = 0.999;

/// Fits the combined dead-time/TPD residuum; reports `tau` and `epsilon` in ns.
pub fn fit_combined_model(curve: &ResiduumCurve) -> Result<FitResult> {
    fit_combined_model_with(curve, &[INITIAL_TAU_NS, 0.0], &FitOptions::default())
}

pub fn fit_combined_model_with(curve: &ResiduumCurve, initial: &[f64], options: &FitOptions) -> Result<FitResult> {
    let mut warnings = Vec::new();
    let data = residuum_data(curve, &mut warnings)?;
    if data.len() < 3 {
        return Err(Error::Underdetermined {
            points: data.len(),
            params: 2,
        });
    }
    let opts = FitOptions {
        bounds: Some(vec![(0.0, f64::INFINITY), (0.0, f64::INFINITY)]),
        ..options.clone()
    };
    let mut fit = fit_named(&CombinedResiduumModel, "combined", &data, initial, &opts)?;
    fit.warnings.extend(warnings);
    if !fit.parameters.iter().any(|p| p.fixed) {
        let rho = fit.correlation(0, 1);
        if rho.abs() > DEGENERACY_CORRELATION {
            fit.warnings.push(format!("tau and epsilon are degenerate (correlation {rho:.6})"));
        }
    }
    Ok(fit)
}

/// Scaling of raw count rates to efficiency: the rate at `current` (µA) maps to `efficiency`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeAnchor {
    pub current: f64,
    pub efficiency: f64,
}

impl Default for SdeAnchor {
    /// Manufacturer efficiency 0.64 at the highest usable bias, 22.6 µA.
    fn default() -> Self {
        Self {
            current: 22.6,
            efficiency: 0.64,
        }
    }
}

/// Linear interpolation of `y(x)` on data sorted by `x`.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let i = xs.iter().position(|&v| v >= x)?;
    if xs[i] == x || i == 0 {
        return (xs[i] == x).then_some(ys[i]);
    }
    let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    Some(ys[i - 1] + t * (ys[i] - ys[i - 1]))
}

fn sorted_by_x(data: &DataSeries) -> DataSeries {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.sort_by(|&a, &b| data.x[a].total_cmp(&data.x[b]));
    DataSeries {
        x: idx.iter().map(|&i| data.x[i]).collect(),
        y: idx.iter().map(|&i| data.y[i]).collect(),
        sigma: idx.iter().map(|&i| data.sigma[i]).collect(),
    }
}

/// Initial `(η_max, I₀, ΔI)` read off the data.
fn sde_initial(data: &DataSeries) -> [f64; 3] {
    let d = sorted_by_x(data);
    let top = d.y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let eta = (top * 1.02).min(1.0);
    let crossing = |level: f64| {
        d.y.windows(2).position(|w| w[0] < level && w[1] >= level).map(|i| {
            let t = (level - d.y[i]) / (d.y[i + 1] - d.y[i]);
            d.x[i] + t * (d.x[i + 1] - d.x[i])
        })
    };
    let (xmin, xmax) = (d.x[0], d.x[d.len() - 1]);
    let i0 = crossing(0.5 * eta).unwrap_or(0.5 * (xmin + xmax));
    // erf(±0.9936) = ±0.84, i.e. 8 % and 92 % of η_max.
    let width = match (crossing(0.08 * eta), crossing(0.92 * eta)) {
        (Some(a), Some(b)) if b > a => (b - a) / 1.9872,
        _ => 0.25 * (xmax - xmin),
    };
    [eta, i0, width.max(1e-6)]
}

/// Fits the error-function efficiency to `(I_b, η)` data without rescaling.
pub fn fit_sde_curve(data: &DataSeries) -> Result<FitResult> {
    data.validate()?;
    if data.len() < 4 {
        return Err(Error::Underdetermined {
            points: data.len(),
            params: 3,
        });
    }
    let init = sde_initial(data);
    let opts = FitOptions {
        bounds: Some(vec![
            (f64::MIN_POSITIVE, 1.0),
            (f64::NEG_INFINITY, f64::INFINITY),
            (1e-9, f64::INFINITY),
        ]),
        ..FitOptions::default()
    };
    fit_named(&ErfSdeModel, "erf-sde", data, &init, &opts)
}

/// Scales raw `(I_b, rate)` data to efficiency with `anchor`, then fits the
/// error-function model.
pub fn fit_erf_sde(raw: &DataSeries, anchor: SdeAnchor) -> Result<FitResult> {
    raw.validate()?;
    if raw.is_empty() {
        return Err(Error::Underdetermined { points: 0, params: 3 });
    }
    let sorted = sorted_by_x(raw);
    let at_anchor = interpolate(&sorted.x, &sorted.y, anchor.current).ok_or_else(|| {
        Error::InvalidData(format!("anchor current {} µA outside the data range", anchor.current))
    })?;
    if !(at_anchor > 0.0) {
        return Err(Error::InvalidData("rate at the anchor current must be > 0".into()));
    }
    let scale = anchor.efficiency / at_anchor;
    let scaled = DataSeries::new(
        sorted.x.clone(),
        sorted.y.iter().map(|v| v * scale).collect(),
        sorted.sigma.iter().map(|v| v * scale).collect(),
    )?;
    fit_sde_curve(&scaled)
}

/// Fits the normalised recovery curve over `(tau_rec, i_drop)` and the
/// plateau `scale`, with the efficiency-versus-bias parameters held fixed.
///
/// Bins are weighted with Poisson errors. When the curve knows its plateau
/// count, the fit is repeated with errors taken from the fitted expectation
/// rather than the observed counts, which removes the downward bias of
/// `√counts` weights in sparse bins.
pub fn fit_recovery(curve: &NormalizedRecoveryCurve, sde: &SdeParams, i_bias: f64) -> Result<FitResult> {
    sde.validate()?;
    if curve.delays.is_empty() {
        return Err(Error::Underdetermined { points: 0, params: 3 });
    }
    let model = RecoveryModel {
        sde: *sde,
        i_bias,
        norm_delay: Some(curve.norm_delay),
    };
    let mut data = DataSeries::new(curve.delays.clone(), curve.values.clone(), curve.sigmas.clone())?;
    let opts = FitOptions {
        bounds: Some(vec![(1e-3, 1e4), (1e-6, i_bias * (1.0 - 1e-9)), (0.0, f64::INFINITY)]),
        ..FitOptions::default()
    };
    let mut fit = fit_named(&model, "recovery", &data, &[INITIAL_TAU_NS, 0.25 * i_bias, 1.0], &opts)?;
    if let Some(level) = curve.plateau_counts.filter(|l| *l > 0.0) {
        for _ in 0..REWEIGHT_PASSES {
            let p = fit.values();
            data.sigma = data
                .x
                .iter()
                .map(|&t| Ok((model.eval(t, &p)? * level).max(1.0).sqrt() / level))
                .collect::<Result<_>>()?;
            fit = fit_named(&model, "recovery", &data, &p, &opts)?;
        }
    }
    Ok(fit)
}

const REWEIGHT_PASSES: usize = 2;
