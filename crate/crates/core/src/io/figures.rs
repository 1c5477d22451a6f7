//! Plot-ready datasets for the standard figures.
//!
//! A recipe takes loaded result files and returns every series needed to
//! redraw the figure, model overlays included. Nothing is rendered.

use serde::{Deserialize, Serialize};

use super::{format_real, from_ns, to_ns, Document, Provenance};
use crate::error::{Error, Result};
use crate::experiment::{extract_at_rate, ResiduumCurve};
use crate::fitting::{fit_combined_model, fit_deadtime_model, fit_recovery, FitResult};
use crate::histogram::{NormalizedRecoveryCurve, RecoveryTime};
use crate::models::{combined_residuum, deadtime_residuum, DeadTime, RecoveryProfile, SdeParams, Tpd};
use crate::montecarlo::SimConfig;

/// Figure names understood by [`figure`].
pub const FIGURES: [&str; 5] = ["fig2", "fig3", "fig4b", "fig6", "fig8"];

/// Rate at which residua are compared across bias currents (Hz).
pub const COMPARISON_RATE: f64 = 400e3;

/// Points in model overlays.
const OVERLAY_POINTS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub enum FigureInput {
    Residuum { label: String, curve: ResiduumCurve },
    Recovery { label: String, curve: NormalizedRecoveryCurve },
}

impl FigureInput {
    fn label(&self) -> &str {
        match self {
            FigureInput::Residuum { label, .. } | FigureInput::Recovery { label, .. } => label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axes {
    pub panel: String,
    pub x_label: String,
    pub y_label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    Points,
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub name: String,
    pub panel: String,
    pub kind: SeriesKind,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub y_err: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotDataset {
    pub figure: String,
    pub axes: Vec<Axes>,
    pub series: Vec<PlotSeries>,
    pub provenance: Provenance,
}

impl PlotDataset {
    pub fn validate(&self) -> Result<()> {
        if self.series.is_empty() {
            return Err(Error::InvalidData("plot dataset has no series".into()));
        }
        for s in &self.series {
            let err_len = s.y_err.as_ref().map_or(s.x.len(), Vec::len);
            if s.x.len() != s.y.len() || err_len != s.x.len() {
                return Err(Error::InvalidData(format!("series `{}` has inconsistent lengths", s.name)));
            }
            if !self.axes.iter().any(|a| a.panel == s.panel) {
                return Err(Error::InvalidData(format!("series `{}` refers to unknown panel", s.name)));
            }
        }
        if self.provenance.config_hash.is_empty() {
            return Err(Error::InvalidData("missing provenance".into()));
        }
        Ok(())
    }

    /// Long format: one row per point.
    pub fn to_document(&self) -> Document {
        let mut d = Document::new(&["panel", "series", "x", "y", "y_err"]).with_provenance(&self.provenance);
        d.metadata.insert("figure".into(), serde_json::Value::String(self.figure.clone()));
        d.metadata
            .insert("axes".into(), serde_json::to_value(&self.axes).expect("axes serialise"));
        for s in &self.series {
            for i in 0..s.x.len() {
                d.rows.push(vec![
                    s.panel.clone(),
                    s.name.clone(),
                    format_real(s.x[i]),
                    format_real(s.y[i]),
                    s.y_err.as_ref().map(|e| format_real(e[i])).unwrap_or_default(),
                ]);
            }
        }
        d
    }
}

fn axes(panel: &str, x: &str, y: &str) -> Axes {
    Axes {
        panel: panel.into(),
        x_label: x.into(),
        y_label: y.into(),
    }
}

fn grid(lo: f64, hi: f64) -> Vec<f64> {
    (0..OVERLAY_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (OVERLAY_POINTS - 1) as f64)
        .collect()
}

fn line(name: String, panel: &str, x: Vec<f64>, f: impl Fn(f64) -> Result<f64>) -> Result<PlotSeries> {
    let y = x.iter().map(|&v| f(v)).collect::<Result<_>>()?;
    Ok(PlotSeries {
        name,
        panel: panel.into(),
        kind: SeriesKind::Line,
        x,
        y,
        y_err: None,
    })
}

fn residuum_points(label: &str, panel: &str, c: &ResiduumCurve) -> PlotSeries {
    PlotSeries {
        name: label.to_string(),
        panel: panel.into(),
        kind: SeriesKind::Points,
        x: c.points.iter().map(|p| p.nu12).collect(),
        y: c.points.iter().map(|p| p.delta).collect(),
        y_err: Some(c.points.iter().map(|p| p.delta_sem).collect()),
    }
}

fn residua(inputs: &[FigureInput]) -> Result<Vec<(&str, &ResiduumCurve)>> {
    inputs
        .iter()
        .map(|i| match i {
            FigureInput::Residuum { label, curve } => Ok((label.as_str(), curve)),
            other => Err(Error::InvalidData(format!("input `{}` is not a residuum curve", other.label()))),
        })
        .collect()
}

fn bias_label(label: &str) -> Result<f64> {
    label
        .trim_end_matches("uA")
        .parse()
        .map_err(|_| Error::InvalidData(format!("label `{label}` is not a bias current in µA")))
}

fn max_rate(c: &ResiduumCurve) -> f64 {
    c.points.iter().map(|p| p.nu12).fold(0.0, f64::max)
}

fn value(fit: &FitResult, name: &str) -> f64 {
    fit.value(name).expect("adapter parameter")
}

/// Residuum data with dead-time (30 ns and fitted) and combined-model overlays.
fn fig2(inputs: &[FigureInput]) -> Result<(Vec<Axes>, Vec<PlotSeries>)> {
    let panel = "residuum";
    let mut series = Vec::new();
    for (label, curve) in residua(inputs)? {
        series.push(residuum_points(label, panel, curve));
        let x = grid(0.0, max_rate(curve)).into_iter().skip(1).collect::<Vec<_>>();
        let reference = DeadTime::new(from_ns(30.0))?;
        series.push(line(format!("{label}: dead time 30 ns"), panel, x.clone(), |v| {
            deadtime_residuum(v, reference)
        })?);
        let fit = fit_deadtime_model(curve)?;
        let tau = DeadTime::new(from_ns(value(&fit, "tau")))?;
        series.push(line(
            format!("{label}: dead time fit tau={:.3} ns", value(&fit, "tau")),
            panel,
            x.clone(),
            |v| deadtime_residuum(v, tau),
        )?);
        let fit = fit_combined_model(curve)?;
        let (t, e) = (value(&fit, "tau"), value(&fit, "epsilon"));
        let (dt, tpd) = (DeadTime::new(from_ns(t))?, Tpd::new(from_ns(e))?);
        series.push(line(
            format!("{label}: combined fit tau={t:.3} ns eps={e:.3} ns"),
            panel,
            x,
            |v| combined_residuum(v, dt, tpd),
        )?);
    }
    Ok((vec![axes(panel, "nu12 [Hz]", "delta")], series))
}

/// Residuum at the comparison rate versus bias current; labels are currents in µA.
fn fig3(inputs: &[FigureInput]) -> Result<(Vec<Axes>, Vec<PlotSeries>)> {
    let panel = "bias";
    let mut rows = residua(inputs)?
        .into_iter()
        .map(|(label, curve)| {
            let (d, s) = extract_at_rate(curve, COMPARISON_RATE)?;
            Ok((bias_label(label)?, d, s))
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut series = vec![PlotSeries {
        name: "delta at 400 kHz".into(),
        panel: panel.into(),
        kind: SeriesKind::Points,
        x: rows.iter().map(|r| r.0).collect(),
        y: rows.iter().map(|r| r.1).collect(),
        y_err: Some(rows.iter().map(|r| r.2).collect()),
    }];
    let mut ax = vec![axes(panel, "bias current [uA]", "delta(400 kHz)")];
    ax.push(axes("curves", "nu12 [Hz]", "delta"));
    for (label, curve) in residua(inputs)? {
        series.push(residuum_points(label, "curves", curve));
    }
    Ok((ax, series))
}

/// Normalised recovery curves with recovery-profile fits; labels are currents in µA.
fn fig4b(inputs: &[FigureInput]) -> Result<(Vec<Axes>, Vec<PlotSeries>)> {
    let panel = "recovery";
    let mut series = Vec::new();
    for input in inputs {
        let FigureInput::Recovery { label, curve } = input else {
            return Err(Error::InvalidData(format!("input `{}` is not a recovery curve", input.label())));
        };
        let i_bias = bias_label(label)?;
        series.push(PlotSeries {
            name: label.clone(),
            panel: panel.into(),
            kind: SeriesKind::Points,
            x: curve.delays.iter().map(|&t| to_ns(t)).collect(),
            y: curve.values.clone(),
            y_err: Some(curve.sigmas.clone()),
        });
        let fit = fit_recovery(curve, &SdeParams::reference(), i_bias)?;
        let (tau, drop, scale) = (value(&fit, "tau_rec"), value(&fit, "i_drop"), value(&fit, "scale"));
        let profile = RecoveryProfile::Bias {
            sde: SdeParams::reference(),
            recovery: crate::models::BiasRecovery::new(i_bias, drop, from_ns(tau))?,
            normalization: crate::models::Normalization::AtDelay(curve.norm_delay),
        };
        let t90 = to_ns(profile.recovery_time_at(0.9)?);
        let x = grid(to_ns(curve.cutoff), to_ns(curve.norm_delay));
        series.push(line(
            format!("{label}: fit tau={tau:.2} ns I_drop={drop:.3} uA t0.9={t90:.1} ns"),
            panel,
            x,
            |t| Ok(scale * profile.efficiency(from_ns(t))),
        )?);
    }
    Ok((vec![axes(panel, "delay [ns]", "normalised efficiency")], series))
}

/// Simulated residua.
fn fig6(inputs: &[FigureInput]) -> Result<(Vec<Axes>, Vec<PlotSeries>)> {
    let panel = "simulation";
    let series = residua(inputs)?
        .into_iter()
        .map(|(label, c)| residuum_points(label, panel, c))
        .collect();
    Ok((vec![axes(panel, "nu12 [Hz]", "delta")], series))
}

/// Rate-dependent recovery profiles and the residua with and without them.
fn fig8(inputs: &[FigureInput]) -> Result<(Vec<Axes>, Vec<PlotSeries>)> {
    let mut series = Vec::new();
    for level in SimConfig::reference_ac_levels() {
        let profile = level.recovery;
        series.push(line(
            format!("recovery at {:.0} kHz", level.rate / 1e3),
            "recovery",
            grid(0.0, 800.0),
            |t| Ok(profile.efficiency(from_ns(t))),
        )?);
    }
    for (label, c) in residua(inputs)? {
        series.push(residuum_points(label, "residuum", c));
    }
    Ok((
        vec![
            axes("recovery", "delay [ns]", "normalised efficiency"),
            axes("residuum", "nu12 [Hz]", "delta"),
        ],
        series,
    ))
}

/// Builds the named figure from `inputs`.
pub fn figure(name: &str, inputs: &[FigureInput], provenance: Provenance) -> Result<PlotDataset> {
    if inputs.is_empty() {
        return Err(Error::InvalidData(format!("figure {name} needs at least one input")));
    }
    if let Some(empty) = inputs.iter().find(|i| match i {
        FigureInput::Residuum { curve, .. } => curve.is_empty(),
        FigureInput::Recovery { curve, .. } => curve.is_empty(),
    }) {
        return Err(Error::InvalidData(format!("input `{}` is empty", empty.label())));
    }
    let (axes, series) = match name {
        "fig2" => fig2(inputs)?,
        "fig3" => fig3(inputs)?,
        "fig4b" => fig4b(inputs)?,
        "fig6" => fig6(inputs)?,
        "fig8" => fig8(inputs)?,
        other => {
            return Err(Error::param(
                "figure",
                format!("unknown figure `{other}` (known: {})", FIGURES.join(", ")),
            ))
        }
    };
    let ds = PlotDataset {
        figure: name.to_string(),
        axes,
        series,
        provenance,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::ResiduumPoint;
    use crate::histogram::{normalize_histogram, synthetic_histogram, NormalizeOptions};

    fn prov() -> Provenance {
        Provenance::new("00".repeat(32), Some(1))
    }

    fn deadtime_curve(tau: f64) -> ResiduumCurve {
        let dt = DeadTime::new(tau).unwrap();
        ResiduumCurve {
            points: (1..=10)
                .map(|k| {
                    let nu = 5e4 * k as f64;
                    ResiduumPoint {
                        nu12: nu,
                        delta: deadtime_residuum(nu, dt).unwrap() + 1e-5 * ((k * 7) % 5) as f64 / 5.0,
                        delta_sem: 1e-5,
                        cycles: 60,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn fig2_has_points_and_three_overlays() {
        let input = FigureInput::Residuum {
            label: "data".into(),
            curve: deadtime_curve(25e-9),
        };
        let ds = figure("fig2", &[input], prov()).unwrap();
        assert_eq!(ds.series.len(), 4);
        assert_eq!(ds.series[0].kind, SeriesKind::Points);
        assert!(ds.series[2].name.contains("dead time fit"));
        assert!(ds.series[3].name.contains("combined fit"));
        let csv = ds.to_document().to_csv().unwrap();
        assert!(csv.contains("# provenance:"));
    }

    #[test]
    fn fig3_orders_by_bias() {
        let inputs: Vec<_> = [(22.5, 30e-9), (21.5, 10e-9), (22.0, 20e-9)]
            .iter()
            .map(|&(i, tau)| FigureInput::Residuum {
                label: format!("{i}"),
                curve: deadtime_curve(tau),
            })
            .collect();
        let ds = figure("fig3", &inputs, prov()).unwrap();
        assert_eq!(ds.series[0].x, vec![21.5, 22.0, 22.5]);
        assert!(ds.series[0].y[0] < ds.series[0].y[2]);
    }

    #[test]
    fn fig4b_fits_each_curve() {
        let inputs: Vec<_> = [22.5, 22.0, 21.5]
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let prof = RecoveryProfile::Bias {
                    sde: SdeParams::reference(),
                    recovery: crate::models::BiasRecovery::reference(i).unwrap(),
                    normalization: crate::models::Normalization::AtDelay(800e-9),
                };
                let h = synthetic_histogram(&prof, from_ns(1.0), from_ns(800.0), 1e4, k as u64).unwrap();
                FigureInput::Recovery {
                    label: format!("{i}"),
                    curve: normalize_histogram(&h, &NormalizeOptions::default()).unwrap(),
                }
            })
            .collect();
        let ds = figure("fig4b", &inputs, prov()).unwrap();
        assert_eq!(ds.series.len(), 6);
        assert!(ds.series[1].name.contains("t0.9="));
    }

    #[test]
    fn errors() {
        assert!(figure("fig2", &[], prov()).is_err());
        let input = FigureInput::Residuum {
            label: "x".into(),
            curve: deadtime_curve(25e-9),
        };
        assert!(figure("fig99", std::slice::from_ref(&input), prov()).is_err());
        assert!(figure("fig4b", std::slice::from_ref(&input), prov()).is_err());
        let empty = FigureInput::Residuum {
            label: "e".into(),
            curve: ResiduumCurve::default(),
        };
        assert!(figure("fig6", &[empty], prov()).is_err());
        assert!(figure("fig8", &[input], prov()).is_ok());
    }
}
