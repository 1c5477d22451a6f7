//! Closed-form detector transfer functions.
//!
//! Rates and fluxes are in Hz, durations in seconds and bias currents in µA.
//! Two families of models live here:
//!
//! * count-rate transfer functions `ν = f(φ)` for dead-time saturation,
//!   two-photon detection (TPD) and their combination, together with their
//!   inverses and the normalised residuum `Δ` they predict for the
//!   superposition method with two equal paths;
//! * the bias-current dependent system detection efficiency (an error
//!   function in `I_b`) and the recovery of the bias current after a click,
//!   which combine into a [`RecoveryProfile`] `η(Δt)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_rate(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite and >= 0, got {value}")))
    }
}

/// Step-like recovery with dead time `tau` (seconds).
///
/// `tau = 0` is accepted so that the combined model can degenerate to pure TPD
/// and so that fits of a perfectly linear detector can land on the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadTime {
    tau: f64,
}

impl DeadTime {
    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_finite() && tau >= 0.0 {
            Ok(Self { tau })
        } else {
            Err(Error::param("tau", format!("dead time must be >= 0, got {tau}")))
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Effective two-photon interval `epsilon` (seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tpd {
    epsilon: f64,
}

impl Tpd {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon.is_finite() && epsilon >= 0.0 {
            Ok(Self { epsilon })
        } else {
            Err(Error::param(
                "epsilon",
                format!("TPD interval must be >= 0, got {epsilon}"),
            ))
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// `ν = φ / (1 + τφ)`.
pub fn deadtime_transfer(phi: f64, dt: DeadTime) -> Result<f64> {
    check_rate("phi", phi)?;
    Ok(phi / (1.0 + dt.tau * phi))
}

/// Residuum of the dead-time model for two equal paths, `Δ = 2/(2 − τν₁₊₂) − 1`.
pub fn deadtime_residuum(nu12: f64, dt: DeadTime) -> Result<f64> {
    check_rate("nu12", nu12)?;
    let x = dt.tau * nu12;
    if x >= 2.0 {
        return Err(Error::Domain(format!(
            "dead-time residuum needs tau*nu12 < 2, got {x}"
        )));
    }
    Ok(x / (2.0 - x))
}

/// `ν = φ + εφ²`.
pub fn tpd_transfer(phi: f64, tpd: Tpd) -> Result<f64> {
    check_rate("phi", phi)?;
    Ok(phi + tpd.epsilon * phi * phi)
}

/// TPD applied to the dead-time saturated rate: `g + εg²` with `g = φ/(1+τφ)`.
pub fn combined_transfer(phi: f64, dt: DeadTime, tpd: Tpd) -> Result<f64> {
    let g = deadtime_transfer(phi, dt)?;
    Ok(g + tpd.epsilon * g * g)
}

/// `φ = ν / (1 − ντ)`.
pub fn invert_deadtime(nu: f64, dt: DeadTime) -> Result<f64> {
    check_rate("nu", nu)?;
    let denom = 1.0 - nu * dt.tau;
    if denom <= 0.0 {
        return Err(Error::Domain(format!(
            "rate {nu} Hz is at or above the saturation bound 1/tau"
        )));
    }
    Ok(nu / denom)
}

/// `√(1+4εν) − 1`, evaluated without cancellation for small `εν`.
fn sqrt1p_m1(x: f64) -> f64 {
    x / (1.0 + (1.0 + x).sqrt())
}

/// `φ = 2ν / (1 + √(1+4εν) − 2ντ)`.
pub fn invert_combined(nu: f64, dt: DeadTime, tpd: Tpd) -> Result<f64> {
    check_rate("nu", nu)?;
    let s_m1 = sqrt1p_m1(4.0 * tpd.epsilon * nu);
    let denom = 2.0 + s_m1 - 2.0 * nu * dt.tau;
    if denom <= 0.0 {
        return Err(Error::Domain(format!(
            "combined model cannot be inverted at {nu} Hz (denominator {denom})"
        )));
    }
    Ok(2.0 * nu / denom)
}

/// Closed-form residuum of the combined dead-time/TPD model.
///
/// Equals `2 f(f⁻¹(ν)/2) / ν − 1` for the combined transfer function `f`;
/// see [`residuum_by_composition`] for the compositional route.
pub fn combined_residuum(nu12: f64, dt: DeadTime, tpd: Tpd) -> Result<f64> {
    check_rate("nu12", nu12)?;
    let (tau, eps, nu) = (dt.tau, tpd.epsilon, nu12);
    if nu == 0.0 || (tau == 0.0 && eps == 0.0) {
        return Ok(0.0);
    }
    // g = f_dt(φ₁₊₂) = 2ν/(1 + √(1+4εν)); x = τg must stay below 1.
    let g = 2.0 * nu / (2.0 + sqrt1p_m1(4.0 * eps * nu));
    let x = tau * g;
    if x >= 1.0 {
        return Err(Error::Domain(format!(
            "combined residuum undefined at {nu} Hz for tau={tau}, eps={eps}"
        )));
    }
    let u = 2.0 - x;
    let numerator = tau * u - eps * (2.0 - 4.0 * x + x * x);
    Ok(g * numerator / ((1.0 + eps * g) * u * u))
}

/// `Δ = 2 f(f⁻¹(ν)/2)/ν − 1` for an arbitrary transfer function and inverse.
pub fn residuum_by_composition<F, G>(nu12: f64, transfer: F, inverse: G) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
    G: Fn(f64) -> Result<f64>,
{
    check_rate("nu12", nu12)?;
    if nu12 == 0.0 {
        return Ok(0.0);
    }
    let phi12 = inverse(nu12)?;
    let nu1 = transfer(0.5 * phi12)?;
    Ok(2.0 * nu1 / nu12 - 1.0)
}

/// Error-function model of the steady-state efficiency versus bias current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeParams {
    /// Plateau efficiency.
    pub eta_max: f64,
    /// Transition midpoint (µA).
    pub i0: f64,
    /// Transition width (µA).
    pub delta_i: f64,
}

impl SdeParams {
    pub fn new(eta_max: f64, i0: f64, delta_i: f64) -> Result<Self> {
        let p = Self {
            eta_max,
            i0,
            delta_i,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_max > 0.0 && self.eta_max <= 1.0) {
            return Err(Error::param("eta_max", format!("must be in (0, 1], got {}", self.eta_max)));
        }
        if !self.i0.is_finite() {
            return Err(Error::param("i0", "must be finite"));
        }
        if !(self.delta_i > 0.0 && self.delta_i.is_finite()) {
            return Err(Error::param("delta_i", format!("must be > 0, got {}", self.delta_i)));
        }
        Ok(())
    }

    /// Values fitted to the detector characterised in the reference measurement
    /// (`η_max = 0.680`, `I₀ = 19.962 µA`, `ΔI = 2.343 µA`).
    pub fn reference() -> Self {
        Self {
            eta_max: 0.680,
            i0: 19.962,
            delta_i: 2.343,
        }
    }
}

/// `η(I_b) = ½ η_max (1 + erf((I_b − I₀)/ΔI))`.
pub fn sde_vs_bias(i_bias: f64, p: &SdeParams) -> f64 {
    0.5 * p.eta_max * (1.0 + libm::erf((i_bias - p.i0) / p.delta_i))
}

/// Bias-current recovery after a click: drop to `i_drop`, exponential return to `i_bias`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasRecovery {
    /// Steady-state bias current (µA).
    pub i_bias: f64,
    /// Current right after a detection (µA).
    pub i_drop: f64,
    /// Recovery time constant (s).
    pub tau: f64,
}

impl BiasRecovery {
    pub fn new(i_bias: f64, i_drop: f64, tau: f64) -> Result<Self> {
        let p = Self { i_bias, i_drop, tau };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.i_drop > 0.0 && self.i_drop < self.i_bias && self.i_bias.is_finite()) {
            return Err(Error::param(
                "i_drop",
                format!("need 0 < i_drop < i_bias, got {} / {}", self.i_drop, self.i_bias),
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::param("tau_rec", format!("must be > 0, got {}", self.tau)));
        }
        Ok(())
    }

    /// Fitted recovery parameters of the reference detector at the given
    /// bias current (21.5, 22.0 or 22.5 µA).
    pub fn reference(i_bias: f64) -> Option<Self> {
        const ROWS: [(f64, f64, f64); 3] = [(22.5, 5.23, 33e-9), (22.0, 5.57, 34e-9), (21.5, 6.06, 34e-9)];
        ROWS.iter()
            .find(|row| (row.0 - i_bias).abs() < 1e-9)
            .map(|&(i_bias, i_drop, tau)| Self { i_bias, i_drop, tau })
    }
}

/// `I(Δt) = (I_b − I_drop)(1 − e^{−Δt/τ}) + I_drop`.
pub fn bias_recovery(delta_t: f64, p: &BiasRecovery) -> f64 {
    (p.i_bias - p.i_drop) * -(-delta_t / p.tau).exp_m1() + p.i_drop
}

/// Where a bias-driven recovery profile is scaled to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the steady-state efficiency `η(I_b)`.
    #[default]
    Asymptotic,
    /// Divide by the efficiency at a finite delay (seconds), as done for
    /// histograms scaled at their last bin.
    AtDelay(f64),
}

/// Normalised detection efficiency as a function of the delay since the last click.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecoveryProfile {
    /// `η ≡ 1`: no recovery at all.
    Unity,
    /// `η = 0` for `Δt < dead_time`, 1 afterwards.
    Step { dead_time: f64 },
    /// `η(I(Δt))` from the error-function efficiency and the bias recovery.
    Bias {
        sde: SdeParams,
        recovery: BiasRecovery,
        #[serde(default)]
        normalization: Normalization,
    },
}

impl RecoveryProfile {
    pub fn bias(sde: SdeParams, recovery: BiasRecovery) -> Self {
        RecoveryProfile::Bias {
            sde,
            recovery,
            normalization: Normalization::Asymptotic,
        }
    }

    /// Reference detector profile at one of the tabulated bias currents.
    pub fn reference(i_bias: f64) -> Option<Self> {
        BiasRecovery::reference(i_bias).map(|r| Self::bias(SdeParams::reference(), r))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RecoveryProfile::Unity => Ok(()),
            RecoveryProfile::Step { dead_time } => {
                if dead_time.is_finite() && *dead_time >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::param("dead_time", format!("must be >= 0, got {dead_time}")))
                }
            }
            RecoveryProfile::Bias {
                sde,
                recovery,
                normalization,
            } => {
                sde.validate()?;
                recovery.validate()?;
                if let Normalization::AtDelay(t) = normalization {
                    if !(*t > 0.0 && t.is_finite()) {
                        return Err(Error::param("norm_delay", format!("must be > 0, got {t}")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Precomputes the constants needed for repeated evaluation.
    pub fn compile(&self) -> CompiledProfile {
        match *self {
            RecoveryProfile::Unity => CompiledProfile::Unity,
            RecoveryProfile::Step { dead_time } => CompiledProfile::Step { dead_time },
            RecoveryProfile::Bias {
                sde,
                recovery,
                normalization,
            } => {
                let norm = match normalization {
                    Normalization::Asymptotic => sde_vs_bias(recovery.i_bias, &sde),
                    Normalization::AtDelay(t) => sde_vs_bias(bias_recovery(t, &recovery), &sde),
                };
                CompiledProfile::Bias {
                    span: (recovery.i_bias - recovery.i_drop) / sde.delta_i,
                    offset: (recovery.i_drop - sde.i0) / sde.delta_i,
                    inv_tau: 1.0 / recovery.tau,
                    scale: 0.5 * sde.eta_max / norm,
                }
            }
        }
    }

    pub fn efficiency(&self, delta_t: f64) -> f64 {
        self.compile().efficiency(delta_t)
    }

    /// Smallest delay at which the profile reaches `fraction`, searched up to `max_delay`.
    pub fn time_to_reach(&self, fraction: f64, max_delay: f64) -> Result<f64> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::param("fraction", format!("must be in (0, 1), got {fraction}")));
        }
        let p = self.compile();
        match *self {
            RecoveryProfile::Unity => return Ok(0.0),
            RecoveryProfile::Step { dead_time } if dead_time <= max_delay => return Ok(dead_time),
            _ => {}
        }
        if p.efficiency(0.0) >= fraction {
            return Ok(0.0);
        }
        if p.efficiency(max_delay) < fraction {
            return Err(Error::Domain(format!(
                "profile does not reach {fraction} within {max_delay} s"
            )));
        }
        let (mut lo, mut hi) = (0.0, max_delay);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if p.efficiency(mid) >= fraction {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        Ok(hi)
    }
}

/// [`RecoveryProfile`] with its constants folded for the simulation kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompiledProfile {
    Unity,
    Step {
        dead_time: f64,
    },
    Bias {
        span: f64,
        offset: f64,
        inv_tau: f64,
        scale: f64,
    },
}

impl CompiledProfile {
    #[inline]
    pub fn efficiency(&self, delta_t: f64) -> f64 {
        match *self {
            CompiledProfile::Unity => 1.0,
            CompiledProfile::Step { dead_time } => {
                if delta_t < dead_time {
                    0.0
                } else {
                    1.0
                }
            }
            CompiledProfile::Bias {
                span,
                offset,
                inv_tau,
                scale,
            } => {
                let arg = span * -(-delta_t * inv_tau).exp_m1() + offset;
                scale * (1.0 + libm::erf(arg))
            }
        }
    }
}

/// `η(I(Δt))` normalised to the steady-state efficiency.
pub fn recovery_profile(delta_t: f64, sde: &SdeParams, rec: &BiasRecovery) -> f64 {
    sde_vs_bias(bias_recovery(delta_t, rec), sde) / sde_vs_bias(rec.i_bias, sde)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn erf_matches_high_precision_values() {
        // 40-digit reference values.
        let cases = [
            (0.5, 0.520_499_877_813_046_537_68),
            (1.0, 0.842_700_792_949_714_869_34),
            (-0.3, -0.328_626_759_459_127_427_64),
            (2.0, 0.995_322_265_018_952_734_16),
            (3.5, 0.999_999_256_901_627_658_59),
            (-1e-5, -1.128_379_167_057_899_935e-5),
        ];
        for (x, want) in cases {
            assert!((libm::erf(x) - want).abs() < 1e-15, "erf({x})");
        }
    }

    #[test]
    fn deadtime_transfer_examples() {
        let dt = DeadTime::new(30e-9).unwrap();
        assert_eq!(deadtime_transfer(0.0, dt).unwrap(), 0.0);
        assert!(rel(deadtime_transfer(1e6, dt).unwrap(), 970_873.786_407_766_990_29) < 1e-14);
        let sat = deadtime_transfer(1e15, dt).unwrap();
        assert!(sat < 1.0 / 30e-9 && rel(sat, 1.0 / 30e-9) < 1e-6);
        assert!(deadtime_transfer(-1.0, dt).is_err());
    }

    #[test]
    fn deadtime_residuum_examples() {
        let dt = DeadTime::new(30e-9).unwrap();
        assert_eq!(deadtime_residuum(0.0, dt).unwrap(), 0.0);
        assert!(rel(deadtime_residuum(4e5, dt).unwrap(), 6.036_217_303_822_937_6e-3) < 1e-12);
        let fitted = DeadTime::new(2.10e-9).unwrap();
        assert!(rel(deadtime_residuum(5e5, fitted).unwrap(), 5.252_757_697_791_340_5e-4) < 1e-12);
        assert!(matches!(deadtime_residuum(2.0 / 30e-9, dt), Err(Error::Domain(_))));
    }

    #[test]
    fn tpd_and_combined_examples() {
        assert_eq!(tpd_transfer(0.0, Tpd::new(1e-9).unwrap()).unwrap(), 0.0);
        assert_eq!(tpd_transfer(123.0, Tpd::new(0.0).unwrap()).unwrap(), 123.0);
        assert!(rel(tpd_transfer(1e5, Tpd::new(1e-9).unwrap()).unwrap(), 100_010.0) < 1e-14);

        let dt = DeadTime::new(118e-9).unwrap();
        let tpd = Tpd::new(118e-9).unwrap();
        let g = deadtime_transfer(1e6, dt).unwrap();
        assert!(rel(g, 894_454.382_826_475_849_73) < 1e-14);
        assert!(rel(combined_transfer(1e6, dt, tpd).unwrap(), 988_860.122_695_459_883_96) < 1e-14);
    }

    #[test]
    fn combined_reduces_to_components() {
        let dt = DeadTime::new(40e-9).unwrap();
        let tpd = Tpd::new(70e-9).unwrap();
        let none = Tpd::new(0.0).unwrap();
        let zero = DeadTime::new(0.0).unwrap();
        for phi in [0.0, 1e3, 5e4, 3e5, 9e5, 4e6] {
            assert_eq!(combined_transfer(phi, dt, none).unwrap(), deadtime_transfer(phi, dt).unwrap());
            assert_eq!(combined_transfer(phi, zero, tpd).unwrap(), tpd_transfer(phi, tpd).unwrap());
        }
        for nu in [1e3, 1e5, 6e5] {
            let a = combined_residuum(nu, dt, none).unwrap();
            let b = deadtime_residuum(nu, dt).unwrap();
            assert!(rel(a, b) < 1e-12, "{a} vs {b}");
            assert!(rel(invert_combined(nu, dt, none).unwrap(), invert_deadtime(nu, dt).unwrap()) < 1e-14);
        }
    }

    #[test]
    fn inversions_round_trip_and_reject_saturation() {
        let dt = DeadTime::new(30e-9).unwrap();
        assert_eq!(invert_deadtime(0.0, dt).unwrap(), 0.0);
        assert!(rel(invert_deadtime(970_873.786_407_767, dt).unwrap(), 1e6) < 1e-12);
        assert!(invert_deadtime(1.0 / 30e-9, dt).is_err());
        let near = invert_deadtime(0.999_999 / 30e-9, dt).unwrap();
        assert!(near > 1e12);

        let dt = DeadTime::new(118e-9).unwrap();
        let tpd = Tpd::new(118e-9).unwrap();
        let nu = combined_transfer(1e6, dt, tpd).unwrap();
        assert!(rel(invert_combined(nu, dt, tpd).unwrap(), 1e6) < 1e-10);
        assert_eq!(invert_combined(0.0, dt, tpd).unwrap(), 0.0);
        assert!(matches!(invert_combined(2e7, dt, tpd), Err(Error::Domain(_))));
    }

    #[test]
    fn combined_residuum_matches_high_precision_composition() {
        // Reference values from a 40-digit evaluation of 2f(f⁻¹(ν)/2)/ν − 1.
        let dt = DeadTime::new(118e-9).unwrap();
        let tpd = Tpd::new(130e-9).unwrap();
        let cases = [
            (1e5, -4.767_187_149_038_232_653e-4),
            (3e5, -7.524_761_456_194_283_007e-4),
            (5e5, -2.410_341_719_575_051_259e-4),
        ];
        for (nu, want) in cases {
            assert!(rel(combined_residuum(nu, dt, tpd).unwrap(), want) < 1e-10);
        }
        assert_eq!(combined_residuum(0.0, dt, tpd).unwrap(), 0.0);
        let tiny = combined_residuum(1e-3, dt, tpd).unwrap();
        assert!(tiny.abs() < 1e-9);
    }

    #[test]
    fn sde_examples() {
        let p = SdeParams::reference();
        assert!((sde_vs_bias(p.i0, &p) - 0.340).abs() < 1e-15);
        assert!(rel(sde_vs_bias(22.0, &p), 0.605_658_048_655_418_056_84) < 1e-13);
        assert!((sde_vs_bias(1e3, &p) - 0.680).abs() < 1e-15);
        assert!(sde_vs_bias(-1e3, &p) >= 0.0);
    }

    #[test]
    fn bias_recovery_examples() {
        let r = BiasRecovery::reference(22.0).unwrap();
        assert_eq!(bias_recovery(0.0, &r), 5.57);
        assert!((bias_recovery(1.0, &r) - 22.0).abs() < 1e-12);
        assert!(rel(bias_recovery(34e-9, &r), 15.955_740_781_553_202_656) < 1e-14);
        assert!(BiasRecovery::new(22.0, 23.0, 1e-8).is_err());
        assert!(BiasRecovery::new(22.0, 5.0, 0.0).is_err());
    }

    #[test]
    fn recovery_profile_reference_times() {
        // Tabulated 90 % recovery: 99, 109 and 121 ns at 22.5, 22.0 and 21.5 µA.
        let t = |ib: f64| RecoveryProfile::reference(ib).unwrap().time_to_reach(0.9, 1e-6).unwrap();
        let (t225, t220, t215) = (t(22.5), t(22.0), t(21.5));
        assert!((t225 - 99e-9).abs() < 3e-9, "{t225}");
        assert!((t220 - 109e-9).abs() < 3e-9, "{t220}");
        assert!((t215 - 121e-9).abs() < 3e-9, "{t215}");
        assert!(t225 < t220 && t220 < t215);
    }

    #[test]
    fn profile_normalization_modes() {
        let sde = SdeParams::reference();
        let rec = BiasRecovery::reference(22.0).unwrap();
        let asym = RecoveryProfile::bias(sde, rec);
        assert!((asym.efficiency(1e-3) - 1.0).abs() < 1e-15);
        assert!((asym.efficiency(50e-9) - recovery_profile(50e-9, &sde, &rec)).abs() < 1e-14);
        let finite = RecoveryProfile::Bias {
            sde,
            recovery: rec,
            normalization: Normalization::AtDelay(800e-9),
        };
        assert!((finite.efficiency(800e-9) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn step_and_unity_profiles() {
        let step = RecoveryProfile::Step { dead_time: 30e-9 };
        assert_eq!(step.efficiency(29.9e-9), 0.0);
        assert_eq!(step.efficiency(30e-9), 1.0);
        assert_eq!(step.time_to_reach(0.9, 1e-6).unwrap(), 30e-9);
        assert_eq!(RecoveryProfile::Unity.efficiency(0.0), 1.0);
        assert!(step.time_to_reach(1.0, 1e-6).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn deadtime_is_concave_and_bounded(phi in 0.0f64..1e9, tau in 1e-10f64..1e-6) {
                let dt = DeadTime::new(tau).unwrap();
                let nu = deadtime_transfer(phi, dt).unwrap();
                prop_assert!(nu <= phi && nu <= 1.0 / tau);
                let h = 1.0 + phi * 1e-3;
                let mid = deadtime_transfer(phi + h, dt).unwrap();
                let far = deadtime_transfer(phi + 2.0 * h, dt).unwrap();
                prop_assert!(mid >= nu);
                prop_assert!(2.0 * mid >= nu + far - 1e-9 * far);
            }

            #[test]
            fn deadtime_round_trip(phi in 0.0f64..1e8, tau in 1e-10f64..2e-7) {
                let dt = DeadTime::new(tau).unwrap();
                let back = invert_deadtime(deadtime_transfer(phi, dt).unwrap(), dt).unwrap();
                prop_assert!((back - phi).abs() <= 1e-12 * phi.max(1e-300) * 10.0);
            }

            #[test]
            fn residuum_signs(nu in 1.0f64..2e6, tau in 1e-10f64..5e-7, eps in 1e-10f64..5e-7) {
                let dt = DeadTime::new(tau).unwrap();
                if tau * nu < 2.0 {
                    prop_assert!(deadtime_residuum(nu, dt).unwrap() >= 0.0);
                }
                let zero = DeadTime::new(0.0).unwrap();
                let tpd = Tpd::new(eps).unwrap();
                prop_assert!(combined_residuum(nu, zero, tpd).unwrap() <= 1e-15);
            }

            #[test]
            fn profile_monotone_in_unit_interval(
                a in 0.0f64..400e-9, b in 0.0f64..400e-9,
                i_drop in 1.0f64..15.0, tau in 5e-9f64..80e-9, i_bias in 20.5f64..24.0,
            ) {
                let p = RecoveryProfile::bias(SdeParams::reference(), BiasRecovery::new(i_bias, i_drop, tau).unwrap());
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                let (ea, eb) = (p.efficiency(lo), p.efficiency(hi));
                prop_assert!(ea <= eb);
                prop_assert!((0.0..=1.0 + 1e-9).contains(&ea) && eb <= 1.0 + 1e-9);
            }
        }
    }
}
