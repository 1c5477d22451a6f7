//! TOML configuration. Unknown keys are rejected with their line and column.
//!
//! ```toml
//! seed = 42
//!
//! [detector]
//! efficiency = 0.604
//! photons = 10000000
//! t_boost_ns = 172.0
//!
//! [detector.recovery]
//! kind = "bias"
//! i_bias_ua = 22.0
//! i_drop_ua = 5.57
//! tau_ns = 34.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::from_ns;
use crate::error::{Error, Result};
use crate::experiment::{ExperimentOptions, FluxSchedule};
use crate::fitting::FitOptions;
use crate::histogram::{NormalizeOptions, PlateauWindow};
use crate::models::{BiasRecovery, Normalization, RecoveryProfile, SdeParams};
use crate::montecarlo::{AcLevel, BoostConfig, Pairing, SimConfig, DEFAULT_CHUNK_PHOTONS, FAST_PHOTONS};

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "SNSPD_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolkitConfig {
    pub seed: u64,
    pub detector: DetectorConfig,
    pub simulate: SimulateConfig,
    pub experiment: ExperimentConfig,
    pub fit: FitConfig,
    pub histogram: HistogramConfig,
    pub output: OutputConfig,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            detector: DetectorConfig::default(),
            simulate: SimulateConfig::default(),
            experiment: ExperimentConfig::default(),
            fit: FitConfig::default(),
            histogram: HistogramConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoostMode {
    #[default]
    FillToUnity,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Steady-state efficiency `A`.
    pub efficiency: f64,
    pub photons: u64,
    pub chunk_photons: u64,
    pub pairing: Pairing,
    pub boost: BoostMode,
    pub t_boost_ns: f64,
    pub recovery: RecoveryConfig,
    /// Rate-dependent recovery profiles; empty disables AC-biasing.
    pub ac_levels: Vec<AcLevelConfig>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            efficiency: 0.604,
            photons: FAST_PHOTONS,
            chunk_photons: DEFAULT_CHUNK_PHOTONS,
            pairing: Pairing::Common,
            boost: BoostMode::FillToUnity,
            t_boost_ns: 172.0,
            recovery: RecoveryConfig::default(),
            ac_levels: Vec::new(),
        }
    }
}

fn default_eta_max() -> f64 {
    SdeParams::reference().eta_max
}
fn default_i0() -> f64 {
    SdeParams::reference().i0
}
fn default_delta_i() -> f64 {
    SdeParams::reference().delta_i
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RecoveryConfig {
    Unity,
    Step {
        dead_time_ns: f64,
    },
    /// Tabulated fit at 21.5, 22.0 or 22.5 µA.
    Reference {
        i_bias_ua: f64,
    },
    Bias {
        i_bias_ua: f64,
        i_drop_ua: f64,
        tau_ns: f64,
        #[serde(default = "default_eta_max")]
        eta_max: f64,
        #[serde(default = "default_i0")]
        i0_ua: f64,
        #[serde(default = "default_delta_i")]
        delta_i_ua: f64,
        /// Normalise at this delay instead of the asymptote.
        #[serde(default)]
        norm_delay_ns: Option<f64>,
    },
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig::Reference { i_bias_ua: 22.0 }
    }
}

impl RecoveryConfig {
    pub fn to_profile(&self) -> Result<RecoveryProfile> {
        let p = match *self {
            RecoveryConfig::Unity => RecoveryProfile::Unity,
            RecoveryConfig::Step { dead_time_ns } => RecoveryProfile::Step {
                dead_time: from_ns(dead_time_ns),
            },
            RecoveryConfig::Reference { i_bias_ua } => RecoveryProfile::reference(i_bias_ua).ok_or_else(|| {
                Error::Config(format!(
                    "no tabulated recovery at {i_bias_ua} µA (available: 21.5, 22.0, 22.5)"
                ))
            })?,
            RecoveryConfig::Bias {
                i_bias_ua,
                i_drop_ua,
                tau_ns,
                eta_max,
                i0_ua,
                delta_i_ua,
                norm_delay_ns,
            } => RecoveryProfile::Bias {
                sde: SdeParams::new(eta_max, i0_ua, delta_i_ua)?,
                recovery: BiasRecovery::new(i_bias_ua, i_drop_ua, from_ns(tau_ns))?,
                normalization: norm_delay_ns.map_or(Normalization::Asymptotic, |t| Normalization::AtDelay(from_ns(t))),
            },
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcLevelConfig {
    /// Detected rate at which the profile applies (Hz).
    pub rate_hz: f64,
    pub recovery: RecoveryConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Combined fluxes `φ₁₊₂`: `start:stop:count` or a comma list, SI suffixes allowed.
    pub rates: String,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            rates: "100k:850k:10".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Combined flux with the wave plate at 0° (Hz).
    pub p0_hz: f64,
    /// Number of equidistant power steps, used when `angles_deg` is empty.
    pub steps: usize,
    pub angles_deg: Vec<f64>,
    pub cycles: usize,
    /// Integration time per shutter setting (s).
    pub integration_s: f64,
    pub background_hz: f64,
    pub imbalance: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            p0_hz: 850e3,
            steps: 10,
            angles_deg: Vec::new(),
            cycles: 60,
            integration_s: 0.1,
            background_hz: 350.0,
            imbalance: 0.0,
        }
    }
}

impl ExperimentConfig {
    pub fn schedule(&self) -> FluxSchedule {
        if self.angles_deg.is_empty() {
            FluxSchedule::equidistant(self.p0_hz, self.steps)
        } else {
            FluxSchedule {
                p0: self.p0_hz,
                angles: self.angles_deg.clone(),
            }
        }
    }

    pub fn options(&self) -> ExperimentOptions {
        ExperimentOptions {
            background_rate: self.background_hz,
            imbalance: self.imbalance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        let d = FitOptions::default();
        Self {
            max_iterations: d.max_iterations,
            tolerance: d.tolerance,
        }
    }
}

impl FitConfig {
    pub fn options(&self) -> FitOptions {
        FitOptions {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            ..FitOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlateauMode {
    #[default]
    Mean,
    SingleBin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramConfig {
    pub bin_ns: f64,
    pub window_ns: f64,
    pub cutoff_ns: f64,
    pub norm_delay_ns: f64,
    pub plateau: PlateauMode,
    pub plateau_width_ns: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            bin_ns: 1.0,
            window_ns: 800.0,
            cutoff_ns: 20.0,
            norm_delay_ns: 800.0,
            plateau: PlateauMode::Mean,
            plateau_width_ns: 20.0,
        }
    }
}

impl HistogramConfig {
    pub fn normalize_options(&self) -> NormalizeOptions {
        NormalizeOptions {
            cutoff: from_ns(self.cutoff_ns),
            norm_delay: from_ns(self.norm_delay_ns),
            plateau: match self.plateau {
                PlateauMode::Mean => PlateauWindow::Mean {
                    width: from_ns(self.plateau_width_ns),
                },
                PlateauMode::SingleBin => PlateauWindow::SingleBin,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Directory for outputs whose path is not given explicitly.
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: ".".into() }
    }
}

impl ToolkitConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Detector configuration for the simulator.
    pub fn sim_config(&self) -> Result<SimConfig> {
        let d = &self.detector;
        let boost = match d.boost {
            BoostMode::FillToUnity if d.t_boost_ns > 0.0 => BoostConfig::step(from_ns(d.t_boost_ns)),
            _ => BoostConfig::off(),
        };
        let mut cfg = SimConfig::new(d.efficiency, d.recovery.to_profile()?, boost, d.photons, self.seed);
        cfg.chunk_photons = d.chunk_photons;
        cfg.pairing = d.pairing;
        if !d.ac_levels.is_empty() {
            cfg.ac_biasing = Some(
                d.ac_levels
                    .iter()
                    .map(|l| {
                        Ok(AcLevel {
                            rate: l.rate_hz,
                            recovery: l.recovery.to_profile()?,
                        })
                    })
                    .collect::<Result<_>>()?,
            );
        }
        if !(d.t_boost_ns >= 0.0 && d.t_boost_ns.is_finite()) {
            return Err(Error::Config(format!("t_boost_ns must be >= 0, got {}", d.t_boost_ns)));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_reproduce_reference_detector() {
        let cfg = ToolkitConfig::parse("").unwrap();
        let sim = cfg.sim_config().unwrap();
        let reference = SimConfig::reference(FAST_PHOTONS, 1);
        assert_eq!(sim, reference);
    }

    #[test]
    fn full_document_parses() {
        let text = r#"
seed = 9

[detector]
efficiency = 0.5
photons = 1000
boost = "off"
pairing = "independent"

[detector.recovery]
kind = "step"
dead_time_ns = 30.0

[[detector.ac_levels]]
rate_hz = 250e3
recovery = { kind = "bias", i_bias_ua = 22.0, i_drop_ua = 6.09, tau_ns = 35.0 }

[experiment]
angles_deg = [0.0, 10.0]
cycles = 15

[histogram]
plateau = "single_bin"
"#;
        let cfg = ToolkitConfig::parse(text).unwrap();
        let sim = cfg.sim_config().unwrap();
        assert_eq!(sim.recovery, RecoveryProfile::Step { dead_time: 30e-9 });
        assert!(!sim.boost.is_enabled());
        assert_eq!(sim.pairing, Pairing::Independent);
        assert_eq!(sim.ac_biasing.unwrap().len(), 1);
        assert_eq!(cfg.experiment.schedule().angles, vec![0.0, 10.0]);
        assert_eq!(cfg.histogram.normalize_options().plateau, PlateauWindow::SingleBin);
        let back = ToolkitConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_reported_with_line() {
        let text = "seed = 1\n\n[detector]\nefficiency = 0.6\nbogus = 3\n";
        let err = ToolkitConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains("line 5"), "{err}");
        assert!(err.contains("bogus"), "{err}");

        let nested = "[detector.recovery]\nkind = \"step\"\ndead_time_ns = 30\nextra = 1\n";
        let err = ToolkitConfig::parse(nested).unwrap_err().to_string();
        assert!(err.contains("extra"), "{err}");
        assert!(err.contains("line 1") || err.contains("line 4"), "{err}");

        let err = ToolkitConfig::parse("[nope]\n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        let cfg = ToolkitConfig::parse("[detector]\nefficiency = 1.5\n").unwrap();
        assert!(cfg.sim_config().is_err());
        let cfg = ToolkitConfig::parse("[detector.recovery]\nkind = \"reference\"\ni_bias_ua = 23\n").unwrap();
        assert!(cfg.sim_config().is_err());
        assert!(ToolkitConfig::parse("seed = \"x\"\n").is_err());
    }
}
