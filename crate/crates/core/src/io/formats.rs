//! CSV files with a block of `# key: <json>` metadata lines before the header.
//!
//! | content            | columns                               |
//! |--------------------|---------------------------------------|
//! | residuum curve     | `nu12_hz,delta,delta_sem,cycles`      |
//! | histogram          | `delay_ns,counts` (bin lower edges)   |
//! | normalised curve   | `delay_ns,efficiency,sigma`           |
//! | timestamps         | `time_ns`                             |
//! | generic fit data   | `x,y[,sigma]` under any header names  |

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use super::{format_real, from_ns, to_ns, write_atomic, Provenance};
use crate::error::{Error, Result};
use crate::experiment::{ResiduumCurve, ResiduumPoint};
use crate::fitting::DataSeries;
use crate::histogram::{NormalizedRecoveryCurve, StartStopHistogram, TimestampSeries};

/// Metadata plus a table of string cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    pub metadata: BTreeMap<String, Value>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Document {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn with_provenance(mut self, p: &Provenance) -> Self {
        self.metadata
            .insert("provenance".into(), serde_json::to_value(p).expect("provenance serialises"));
        self
    }

    pub fn provenance(&self) -> Option<Provenance> {
        self.metadata
            .get("provenance")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            out.push_str(&format!("# {k}: {}\n", serde_json::to_string(v)?));
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut metadata = BTreeMap::new();
        let mut body_start = 0;
        for (lineno, line) in text.split_inclusive('\n').enumerate() {
            let Some(rest) = line.strip_prefix('#') else { break };
            body_start += line.len();
            let rest = rest.trim();
            if rest.is_empty() {
                continue;
            }
            let (k, v) = rest
                .split_once(": ")
                .ok_or_else(|| Error::InvalidData(format!("line {}: malformed metadata `{rest}`", lineno + 1)))?;
            let v: Value = serde_json::from_str(v)
                .map_err(|e| Error::InvalidData(format!("line {}: bad metadata value: {e}", lineno + 1)))?;
            metadata.insert(k.to_string(), v);
        }
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(&text.as_bytes()[body_start..]);
        let header = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { metadata, header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())
    }

    /// Fails unless the header starts with `expected`.
    fn expect_columns(&self, expected: &[&str]) -> Result<()> {
        let ok = self.header.len() >= expected.len() && self.header.iter().zip(expected).all(|(a, b)| a == b);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidData(format!(
                "expected columns {}, found {}",
                expected.join(","),
                self.header.join(",")
            )))
        }
    }

    fn real(&self, row: usize, col: usize) -> Result<f64> {
        let cell = self
            .rows
            .get(row)
            .and_then(|r| r.get(col))
            .ok_or_else(|| Error::InvalidData(format!("row {}: missing column {}", row + 1, col + 1)))?;
        cell.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::InvalidData(format!("row {}: `{cell}` is not a finite number", row + 1)))
    }

    fn integer(&self, row: usize, col: usize) -> Result<u64> {
        let cell = &self.rows[row][col];
        cell.parse::<u64>()
            .map_err(|_| Error::InvalidData(format!("row {}: `{cell}` is not a non-negative integer", row + 1)))
    }
}

pub fn residuum_curve_document(curve: &ResiduumCurve) -> Document {
    let mut d = Document::new(&["nu12_hz", "delta", "delta_sem", "cycles"]);
    d.rows = curve
        .points
        .iter()
        .map(|p| {
            vec![
                format_real(p.nu12),
                format_real(p.delta),
                format_real(p.delta_sem),
                p.cycles.to_string(),
            ]
        })
        .collect();
    d
}

pub fn residuum_curve_from(d: &Document) -> Result<ResiduumCurve> {
    d.expect_columns(&["nu12_hz", "delta", "delta_sem", "cycles"])?;
    let points = (0..d.rows.len())
        .map(|i| {
            Ok(ResiduumPoint {
                nu12: d.real(i, 0)?,
                delta: d.real(i, 1)?,
                delta_sem: d.real(i, 2)?,
                cycles: d.integer(i, 3)?,
            })
        })
        .collect::<Result<_>>()?;
    let curve = ResiduumCurve { points };
    curve.validate()?;
    Ok(curve)
}

pub fn histogram_document(h: &StartStopHistogram) -> Document {
    let mut d = Document::new(&["delay_ns", "counts"]);
    d.metadata.insert(
        "histogram".into(),
        serde_json::json!({
            "bin_width_ns": to_ns(h.bin_width),
            "max_delay_ns": to_ns(h.max_delay),
            "total_events": h.total_events,
        }),
    );
    d.rows = h
        .counts
        .iter()
        .enumerate()
        .map(|(i, c)| vec![format_real(to_ns(h.bin_start(i))), c.to_string()])
        .collect();
    d
}

pub fn histogram_from(d: &Document) -> Result<StartStopHistogram> {
    d.expect_columns(&["delay_ns", "counts"])?;
    let meta = d
        .metadata
        .get("histogram")
        .ok_or_else(|| Error::InvalidData("histogram metadata missing".into()))?;
    let field = |k: &str| {
        meta.get(k)
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::InvalidData(format!("histogram metadata lacks `{k}`")))
    };
    let mut h = StartStopHistogram::empty(from_ns(field("bin_width_ns")?), from_ns(field("max_delay_ns")?))?;
    h.total_events = field("total_events")? as u64;
    if d.rows.len() != h.counts.len() {
        return Err(Error::InvalidData(format!(
            "{} rows for {} bins",
            d.rows.len(),
            h.counts.len()
        )));
    }
    for i in 0..d.rows.len() {
        h.counts[i] = d.integer(i, 1)?;
    }
    Ok(h)
}

pub fn recovery_curve_document(c: &NormalizedRecoveryCurve) -> Document {
    let mut d = Document::new(&["delay_ns", "efficiency", "sigma"]);
    d.metadata.insert(
        "normalization".into(),
        serde_json::json!({
            "cutoff_ns": to_ns(c.cutoff),
            "norm_delay_ns": to_ns(c.norm_delay),
            "plateau_counts": c.plateau_counts,
        }),
    );
    d.rows = (0..c.len())
        .map(|i| {
            vec![
                format_real(to_ns(c.delays[i])),
                format_real(c.values[i]),
                format_real(c.sigmas[i]),
            ]
        })
        .collect();
    d
}

pub fn recovery_curve_from(d: &Document) -> Result<NormalizedRecoveryCurve> {
    d.expect_columns(&["delay_ns", "efficiency"])?;
    let meta = d.metadata.get("normalization");
    let get = |k: &str| meta.and_then(|m| m.get(k)).and_then(Value::as_f64);
    let has_sigma = d.header.len() > 2;
    let mut c = NormalizedRecoveryCurve {
        delays: Vec::with_capacity(d.rows.len()),
        values: Vec::with_capacity(d.rows.len()),
        sigmas: Vec::with_capacity(d.rows.len()),
        cutoff: 0.0,
        norm_delay: 0.0,
        plateau_counts: get("plateau_counts"),
    };
    for i in 0..d.rows.len() {
        c.delays.push(from_ns(d.real(i, 0)?));
        c.values.push(d.real(i, 1)?);
        c.sigmas.push(if has_sigma { d.real(i, 2)? } else { 1.0 });
    }
    c.cutoff = get("cutoff_ns").map(from_ns).or(c.delays.first().copied()).unwrap_or(0.0);
    c.norm_delay = get("norm_delay_ns")
        .map(from_ns)
        .or(c.delays.last().copied())
        .unwrap_or(0.0);
    Ok(c)
}

pub fn timestamps_document(ts: &TimestampSeries) -> Document {
    let mut d = Document::new(&["time_ns"]);
    d.rows = ts
        .picoseconds()
        .iter()
        .map(|&ps| vec![format_real(ps as f64 * 1e-3)])
        .collect();
    d
}

pub fn timestamps_from(d: &Document) -> Result<TimestampSeries> {
    d.expect_columns(&["time_ns"])?;
    let ps = (0..d.rows.len())
        .map(|i| Ok((d.real(i, 0)? * 1e3).round() as i64))
        .collect::<Result<Vec<_>>>()?;
    TimestampSeries::from_picoseconds(ps)
}

/// First two columns as `x, y`, an optional third as `σ` (unit weights otherwise).
pub fn data_series_from(d: &Document) -> Result<DataSeries> {
    if d.header.len() < 2 {
        return Err(Error::InvalidData("need at least two columns".into()));
    }
    let n = d.rows.len();
    let col = |c: usize| (0..n).map(|i| d.real(i, c)).collect::<Result<Vec<_>>>();
    let sigma = if d.header.len() > 2 { col(2)? } else { vec![1.0; n] };
    DataSeries::new(col(0)?, col(1)?, sigma)
}

pub fn data_series_document(data: &DataSeries, header: [&str; 3]) -> Document {
    let mut d = Document::new(&header);
    d.rows = (0..data.len())
        .map(|i| vec![format_real(data.x[i]), format_real(data.y[i]), format_real(data.sigma[i])])
        .collect();
    d
}
