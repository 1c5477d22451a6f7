//! Shared fixtures for the benchmarks.

use snspd_core::histogram::synthetic_histogram;
use snspd_core::models::{deadtime_residuum, DeadTime, RecoveryProfile};
use snspd_core::{generate_arrivals, normalize_histogram, NormalizeOptions, NormalizedRecoveryCurve};
use snspd_core::{ResiduumCurve, ResiduumPoint, TimestampSeries};

/// Poisson click times at `rate`, rounded to picoseconds.
pub fn poisson_timestamps(rate: f64, n: u64, seed: u64) -> TimestampSeries {
    let mut t = 0.0;
    let mut ps: Vec<i64> = generate_arrivals(rate, n, seed)
        .expect("valid rate")
        .map(|dt| {
            t += dt;
            (t * 1e12).round() as i64
        })
        .collect();
    ps.dedup();
    TimestampSeries::from_picoseconds(ps).expect("increasing")
}

/// Exact dead-time residua at ten rates up to 500 kHz.
pub fn deadtime_curve(tau: f64) -> ResiduumCurve {
    let dt = DeadTime::new(tau).expect("valid dead time");
    ResiduumCurve {
        points: (1..=10)
            .map(|k| {
                let nu = 50e3 * k as f64;
                ResiduumPoint {
                    nu12: nu,
                    delta: deadtime_residuum(nu, dt).expect("in domain"),
                    delta_sem: 1e-5,
                    cycles: 60,
                }
            })
            .collect(),
    }
}

/// Normalised recovery curve of the 22 µA reference profile.
pub fn recovery_curve(plateau_counts: f64, seed: u64) -> NormalizedRecoveryCurve {
    let profile = RecoveryProfile::reference(22.0).expect("tabulated");
    let h = synthetic_histogram(&profile, 1e-9, 800e-9, plateau_counts, seed).expect("valid profile");
    normalize_histogram(&h, &NormalizeOptions::default()).expect("plateau present")
}
