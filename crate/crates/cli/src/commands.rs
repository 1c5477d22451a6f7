use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use snspd_core::io::config::{BoostMode, PlateauMode, RecoveryConfig, ToolkitConfig};
use snspd_core::io::formats::{self, Document};
use snspd_core::io::units::{parse_duration, parse_rate, parse_rate_list};
use snspd_core::io::{figure, hash_bytes, hash_json, json_with_provenance, to_ns, write_atomic, FigureInput, Provenance};
use snspd_core::montecarlo::{self, simulate_with_timestamps, sweep_ac_biasing, to_curve};
use snspd_core::{
    build_histogram, fit_erf_sde, fit_recovery, fit_sde_curve, generate_arrivals, normalize_histogram,
    run_virtual_experiment, seed, sweep_residuum, Error, FitOptions, FitResult, Pairing, SdeParams, SimConfig,
    TimestampSeries,
};
use snspd_core::fitting::{fit_combined_model_with, fit_deadtime_model_with, SdeAnchor, INITIAL_TAU_NS};

use crate::{
    Cli, Command, EmitArgs, ExperimentArgs, Failure, FitArgs, FitModel, Format, HistogramArgs, PairingArg,
    SimulateArgs, Switch,
};

type CmdResult<T = ()> = Result<T, Failure>;

pub fn run(cli: Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot set thread count: {e}")))?;
    }
    let config = match &cli.config {
        Some(p) => ToolkitConfig::load(p)?,
        None => ToolkitConfig::default(),
    };
    match cli.command {
        Command::Simulate(a) => simulate(config, a),
        Command::Fit(a) => fit(config, a),
        Command::Histogram(a) => histogram(config, a),
        Command::Experiment(a) => experiment(config, a),
        Command::Emit(a) => emit(config, a),
    }
}

/// Malformed flag values are usage errors.
fn usage<T>(r: snspd_core::Result<T>, flag: &str) -> CmdResult<T> {
    r.map_err(|e| Failure::Usage(format!("--{flag}: {e}")))
}

fn parse_recovery(s: &str) -> CmdResult<RecoveryConfig> {
    let bad = || Failure::Usage(format!("--recovery: cannot parse `{s}`"));
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
    Ok(match kind {
        "unity" if rest.is_empty() => RecoveryConfig::Unity,
        "step" => RecoveryConfig::Step {
            dead_time_ns: to_ns(usage(parse_duration(rest), "recovery")?),
        },
        "reference" => RecoveryConfig::Reference { i_bias_ua: num(rest)? },
        "bias" => {
            let f: Vec<&str> = rest.split(',').collect();
            if f.len() != 3 {
                return Err(bad());
            }
            RecoveryConfig::Bias {
                i_bias_ua: num(f[0])?,
                i_drop_ua: num(f[1])?,
                tau_ns: to_ns(usage(parse_duration(f[2]), "recovery")?),
                eta_max: SdeParams::reference().eta_max,
                i0_ua: SdeParams::reference().i0,
                delta_i_ua: SdeParams::reference().delta_i,
                norm_delay_ns: None,
            }
        }
        _ => return Err(bad()),
    })
}

struct DetectorFlags<'a> {
    recovery: &'a Option<String>,
    t_boost: &'a Option<String>,
    boost: Option<Switch>,
    efficiency: Option<f64>,
    seed: Option<u64>,
}

fn apply_detector_flags(cfg: &mut ToolkitConfig, f: DetectorFlags) -> CmdResult {
    if let Some(r) = f.recovery {
        cfg.detector.recovery = parse_recovery(r)?;
    }
    if let Some(t) = f.t_boost {
        cfg.detector.t_boost_ns = to_ns(usage(parse_duration(t), "t-boost")?);
    }
    if let Some(b) = f.boost {
        cfg.detector.boost = match b {
            Switch::On => BoostMode::FillToUnity,
            Switch::Off => BoostMode::Off,
        };
    }
    if let Some(a) = f.efficiency {
        cfg.detector.efficiency = a;
    }
    if let Some(s) = f.seed {
        cfg.seed = s;
    }
    Ok(())
}

fn output_path(cfg: &ToolkitConfig, explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| Path::new(&cfg.output.dir).join(default_name))
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    write_atomic(path, text.as_bytes())?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn simulate(mut cfg: ToolkitConfig, a: SimulateArgs) -> CmdResult {
    apply_detector_flags(
        &mut cfg,
        DetectorFlags {
            recovery: &a.recovery,
            t_boost: &a.t_boost,
            boost: a.boost,
            efficiency: a.efficiency,
            seed: a.seed,
        },
    )?;
    if let Some(r) = &a.rates {
        usage(parse_rate_list(r), "rates")?;
        cfg.simulate.rates = r.clone();
    }
    if let Some(n) = a.photons {
        cfg.detector.photons = n;
    }
    if let Some(p) = a.pairing {
        cfg.detector.pairing = match p {
            PairingArg::Common => Pairing::Common,
            PairingArg::Independent => Pairing::Independent,
        };
    }
    let rates = parse_rate_list(&cfg.simulate.rates)?;
    let mut sim = cfg.sim_config()?;
    if a.ac_biasing && sim.ac_biasing.is_none() {
        sim.ac_biasing = Some(SimConfig::reference_ac_levels());
    }
    let ac = a.ac_biasing && sim.ac_biasing.is_some();

    let estimates = if ac {
        sweep_ac_biasing(&rates, &sim)?
    } else {
        sweep_residuum(&rates, &sim)?
    };
    let stamps = match &a.timestamps {
        Some(_) => Some(simulated_timestamps(rates[0], &sim)?),
        None => None,
    };

    let effective = json!({ "config": cfg, "ac_biasing": ac, "rates_hz": rates });
    let prov = Provenance::of(&effective, Some(cfg.seed))?;
    let out = output_path(&cfg, &a.out, "residuum.csv");
    let mut doc = formats::residuum_curve_document(&to_curve(&estimates)).with_provenance(&prov);
    doc.metadata.insert("simulation".into(), simulation_summary(&sim, ac));
    let mut extra = BTreeMap::new();
    extra.insert("configuration".into(), serde_json::to_value(&cfg).map_err(Error::Json)?);
    extra.insert("simulation".into(), simulation_summary(&sim, ac));
    let meta = json_with_provenance(&prov, "estimates", &estimates_json(&estimates), &extra)?;

    let stamp_text = match (&a.timestamps, &stamps) {
        (Some(path), Some((ts, dropped))) => {
            let mut d = formats::timestamps_document(ts).with_provenance(&prov);
            d.metadata.insert(
                "timestamps".into(),
                json!({ "flux_hz": rates[0], "merged_within_1ps": dropped }),
            );
            Some((path.clone(), d.to_csv()?))
        }
        _ => None,
    };
    write_text(&out, &doc.to_csv()?)?;
    write_text(&sidecar(&out), &meta)?;
    if let Some((path, text)) = stamp_text {
        write_text(&path, &text)?;
    }
    Ok(())
}

fn simulation_summary(sim: &SimConfig, ac: bool) -> Value {
    json!({
        "efficiency": sim.steady_state_efficiency,
        "photons": sim.n_photons,
        "chunk_photons": sim.chunk_photons,
        "pairing": sim.pairing,
        "boost": sim.boost,
        "recovery": sim.recovery,
        "ac_biasing": ac,
    })
}

/// Estimates with rates in Hz, as plain JSON numbers.
fn estimates_json(estimates: &[montecarlo::ResiduumEstimate]) -> Value {
    Value::Array(
        estimates
            .iter()
            .map(|e| {
                json!({
                    "phi12_hz": e.phi12,
                    "nu12_hz": e.nu12,
                    "nu12_sigma_hz": e.nu12_sigma,
                    "nu1_hz": e.nu1,
                    "nu1_sigma_hz": e.nu1_sigma,
                    "delta": e.delta,
                    "delta_sigma": e.delta_sigma,
                    "batches": e.batches,
                })
            })
            .collect(),
    )
}

/// Click times of one run at `phi`; clicks closer than 1 ps are merged.
fn simulated_timestamps(phi: f64, sim: &SimConfig) -> CmdResult<(TimestampSeries, usize)> {
    let point_seed = seed::for_rate(sim.seed, phi);
    let cfg = SimConfig {
        seed: point_seed,
        ..sim.clone()
    };
    let arrivals = generate_arrivals(phi, sim.n_photons, point_seed)?;
    let out = simulate_with_timestamps(arrivals, &cfg, usize::MAX)?;
    let t = out.detected_timestamps.unwrap_or_default();
    let mut ps: Vec<i64> = t.iter().map(|&s| (s * 1e12).round() as i64).collect();
    let before = ps.len();
    ps.dedup();
    let dropped = before - ps.len();
    Ok((TimestampSeries::from_picoseconds(ps)?, dropped))
}

fn parse_anchor(s: &str) -> CmdResult<SdeAnchor> {
    let bad = || Failure::Usage(format!("--anchor: expected <current>:<efficiency>, got `{s}`"));
    let (c, e) = s.split_once(':').ok_or_else(bad)?;
    Ok(SdeAnchor {
        current: c.trim().parse().map_err(|_| bad())?,
        efficiency: e.trim().parse().map_err(|_| bad())?,
    })
}

fn fit(cfg: ToolkitConfig, a: FitArgs) -> CmdResult {
    let bytes = std::fs::read(&a.data).map_err(Error::Io)?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::InvalidData("input is not UTF-8".into()))?;
    let doc = Document::parse(&text)?;
    let anchor = a.anchor.as_deref().map(parse_anchor).transpose()?;
    if a.fix_epsilon && a.model != FitModel::Combined {
        return Err(Failure::Usage("--fix-epsilon applies to the combined model only".into()));
    }
    if anchor.is_some() && a.model != FitModel::ErfSde {
        return Err(Failure::Usage("--anchor applies to the erf-sde model only".into()));
    }
    let opts = cfg.fit.options();
    let result: FitResult = match a.model {
        FitModel::Deadtime => fit_deadtime_model_with(&formats::residuum_curve_from(&doc)?, &opts)?,
        FitModel::Combined => {
            let curve = formats::residuum_curve_from(&doc)?;
            let o = FitOptions {
                fixed: if a.fix_epsilon { vec![false, true] } else { Vec::new() },
                ..opts
            };
            fit_combined_model_with(&curve, &[INITIAL_TAU_NS, 0.0], &o)?
        }
        FitModel::ErfSde => {
            let data = formats::data_series_from(&doc)?;
            match anchor {
                Some(an) => fit_erf_sde(&data, an)?,
                None => fit_sde_curve(&data)?,
            }
        }
        FitModel::Recovery => {
            let curve = formats::recovery_curve_from(&doc)?;
            fit_recovery(&curve, &SdeParams::reference(), a.bias)?
        }
    };

    let effective = json!({
        "model": format!("{:?}", a.model),
        "fit": cfg.fit,
        "bias_ua": a.bias,
        "anchor": anchor.map(|x| [x.current, x.efficiency]),
        "fix_epsilon": a.fix_epsilon,
        "input_sha256": hash_bytes(&bytes),
    });
    let prov = Provenance::new(hash_json(&effective)?, None);
    let mut extra = BTreeMap::new();
    extra.insert("input".into(), json!({ "path": a.data.display().to_string(), "sha256": hash_bytes(&bytes) }));
    let text = json_with_provenance(&prov, "fit", &result, &extra)?;
    print_fit(&result);
    let out = output_path(&cfg, &a.out, &format!("fit_{}.json", result.model));
    write_text(&out, &text)
}

fn print_fit(r: &FitResult) {
    println!("model: {}", r.model);
    for p in &r.parameters {
        let note = if p.fixed { "  (fixed)" } else { "" };
        println!("  {:<10} {:>16.8e} ± {:<14.6e} {}{}", p.name, p.value, p.uncertainty, p.unit, note);
    }
    println!(
        "  chi2 = {:.6e}, dof = {}, chi2/dof = {:.6}, iterations = {}, converged = {}",
        r.chi2, r.dof, r.reduced_chi2, r.iterations, r.converged
    );
    for w in &r.warnings {
        println!("  warning: {w}");
    }
}

fn histogram(mut cfg: ToolkitConfig, a: HistogramArgs) -> CmdResult {
    let h = &mut cfg.histogram;
    let dur = |v: &Option<String>, flag: &str| -> CmdResult<Option<f64>> {
        v.as_deref().map(|s| usage(parse_duration(s), flag).map(to_ns)).transpose()
    };
    if let Some(v) = dur(&a.bin, "bin")? {
        h.bin_ns = v;
    }
    if let Some(v) = dur(&a.window, "window")? {
        h.window_ns = v;
    }
    if let Some(v) = dur(&a.cutoff, "cutoff")? {
        h.cutoff_ns = v;
    }
    if let Some(v) = dur(&a.norm, "norm")? {
        h.norm_delay_ns = v;
    }
    match a.plateau.as_deref() {
        None => {}
        Some("single") => h.plateau = PlateauMode::SingleBin,
        Some(w) => {
            h.plateau = PlateauMode::Mean;
            h.plateau_width_ns = to_ns(usage(parse_duration(w), "plateau")?);
        }
    }

    let bytes = std::fs::read(&a.timestamps).map_err(Error::Io)?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::InvalidData("input is not UTF-8".into()))?;
    let ts = formats::timestamps_from(&Document::parse(&text)?)?;
    let hist = build_histogram(&ts, cfg.histogram.bin_ns / 1e9, cfg.histogram.window_ns / 1e9)?;
    let curve = normalize_histogram(&hist, &cfg.histogram.normalize_options())?;

    let effective = json!({ "histogram": cfg.histogram, "input_sha256": hash_bytes(&bytes) });
    let prov = Provenance::new(hash_json(&effective)?, None);
    let raw = formats::histogram_document(&hist).with_provenance(&prov).to_csv()?;
    let norm = formats::recovery_curve_document(&curve).with_provenance(&prov).to_csv()?;

    let prefix = output_path(&cfg, &a.out, "recovery");
    let with_suffix = |s: &str| {
        let mut p = prefix.clone().into_os_string();
        p.push(s);
        PathBuf::from(p)
    };
    write_text(&with_suffix("_histogram.csv"), &raw)?;
    write_text(&with_suffix("_normalized.csv"), &norm)
}

fn experiment(mut cfg: ToolkitConfig, a: ExperimentArgs) -> CmdResult {
    apply_detector_flags(
        &mut cfg,
        DetectorFlags {
            recovery: &a.recovery,
            t_boost: &a.t_boost,
            boost: a.boost,
            efficiency: a.efficiency,
            seed: a.seed,
        },
    )?;
    let e = &mut cfg.experiment;
    if let Some(p) = &a.p0 {
        e.p0_hz = usage(parse_rate(p), "p0")?;
    }
    if let Some(n) = a.steps {
        e.steps = n;
        e.angles_deg.clear();
    }
    if let Some(n) = a.cycles {
        e.cycles = n;
    }
    if let Some(t) = &a.integration {
        e.integration_s = usage(parse_duration(t), "integration")?;
    }
    if let Some(b) = &a.background {
        e.background_hz = match b.trim() {
            "0" => 0.0,
            s => usage(parse_rate(s), "background")?,
        };
    }
    if let Some(x) = a.imbalance {
        e.imbalance = x;
    }
    let sim = cfg.sim_config()?;
    let e = &cfg.experiment;
    let curve = run_virtual_experiment(&e.schedule(), &sim, e.cycles, e.integration_s, &e.options())?;

    let prov = Provenance::of(&cfg, Some(cfg.seed))?;
    let mut doc = formats::residuum_curve_document(&curve).with_provenance(&prov);
    doc.metadata.insert("experiment".into(), serde_json::to_value(&cfg.experiment).map_err(Error::Json)?);
    let mut extra = BTreeMap::new();
    extra.insert("configuration".into(), serde_json::to_value(&cfg).map_err(Error::Json)?);
    let meta = json_with_provenance(&prov, "curve", &curve, &extra)?;
    let out = output_path(&cfg, &a.out, "experiment.csv");
    write_text(&out, &doc.to_csv()?)?;
    write_text(&sidecar(&out), &meta)
}

fn emit(cfg: ToolkitConfig, a: EmitArgs) -> CmdResult {
    let mut inputs = Vec::new();
    let mut hashes = Vec::new();
    for spec in &a.inputs {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                (stem, p)
            }
        };
        let bytes = std::fs::read(&path).map_err(|e| {
            Error::InvalidData(format!("cannot read {}: {e}", path.display()))
        })?;
        hashes.push(json!([label, hash_bytes(&bytes)]));
        let text = String::from_utf8(bytes).map_err(|_| Error::InvalidData("input is not UTF-8".into()))?;
        let doc = Document::parse(&text)?;
        let input = if doc.header.iter().any(|h| h == "nu12_hz") {
            FigureInput::Residuum {
                label,
                curve: formats::residuum_curve_from(&doc)?,
            }
        } else if doc.header.iter().any(|h| h == "efficiency") {
            FigureInput::Recovery {
                label,
                curve: formats::recovery_curve_from(&doc)?,
            }
        } else {
            return Err(Error::InvalidData(format!(
                "{}: neither a residuum curve nor a recovery curve",
                path.display()
            ))
            .into());
        };
        inputs.push(input);
    }
    let effective = json!({ "figure": a.figure, "inputs": hashes });
    let prov = Provenance::new(hash_json(&effective)?, None);
    let data = figure(&a.figure, &inputs, prov)?;
    let (text, ext) = match a.format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&data).map_err(Error::Json)?;
            s.push('\n');
            (s, "json")
        }
        Format::Csv => (data.to_document().to_csv()?, "csv"),
    };
    let out = output_path(&cfg, &a.out, &format!("{}.{ext}", a.figure));
    write_text(&out, &text)
}
