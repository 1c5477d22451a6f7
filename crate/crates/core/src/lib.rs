//! Simulation and analysis of the nonlinear count-rate response of
//! superconducting nanowire single-photon detectors.
//!
//! - [`models`]: closed-form transfer functions, residua and recovery profiles.
//! - [`montecarlo`]: event-by-event detection of Poissonian photon streams.
//! - [`experiment`]: a virtual superposition experiment with shutter cycles.
//! - [`histogram`]: start-stop histograms and normalised recovery curves.
//! - [`fitting`]: weighted least squares with model adapters.
//! - [`io`]: configuration, file formats and plot data.
//!
//! Internally all durations are in seconds, rates in Hz and currents in µA.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Reference values are quoted with every digit of the oracle.
#![cfg_attr(test, allow(clippy::excessive_precision))]

pub mod error;
pub mod experiment;
pub mod fitting;
pub mod histogram;
pub mod io;
pub mod models;
pub mod montecarlo;
pub mod seed;

pub use error::{Error, Result};
pub use experiment::{
    aggregate_cycles, extract_at_rate, power_schedule, residuum_from_cycle, run_virtual_experiment, CycleRecord,
    ExperimentOptions, FluxSchedule, ResiduumCurve, ResiduumPoint, ShutterSetting,
};
pub use fitting::{
    fit_combined_model, fit_deadtime_model, fit_erf_sde, fit_recovery, fit_sde_curve, least_squares_fit, reduced_chi2,
    DataSeries, FitOptions, FitParameter, FitResult, Model,
};
pub use histogram::{
    build_histogram, normalize_histogram, NormalizeOptions, NormalizedRecoveryCurve, RecoveryTime, StartStopHistogram,
    TimestampSeries,
};
pub use models::{
    bias_recovery, combined_residuum, combined_transfer, deadtime_residuum, deadtime_transfer, invert_combined,
    invert_deadtime, recovery_profile, sde_vs_bias, tpd_transfer, BiasRecovery, DeadTime, Normalization,
    RecoveryProfile, SdeParams, Tpd,
};
pub use montecarlo::{
    generate_arrivals, simulate_detections, simulate_with_ac_biasing, simulated_residuum, sweep_residuum, BoostConfig,
    Pairing, ResiduumEstimate, SimConfig, SimOutcome,
};
