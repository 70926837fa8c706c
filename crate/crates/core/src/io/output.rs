//! Result files.
//!
//! CSV schemas (header row first, `\n` line ends, UTF-8):
//!
//! | content    | columns |
//! |------------|---------|
//! | path       | `t,x` |
//! | summary    | `observable,statistic,value` |
//! | histogram  | `left_edge,right_edge,count` |
//! | samples    | `index,seed,area,tau0,lambda0,crossed,x_end` (`tau0`, `lambda0` empty when absent) |
//! | sweep      | `value,eps,sigma,amplitude,case,borderline,statistic,std_error,median_area,crossing_rate,median_tau0` |
//!
//! Floats are written with 17 significant digits, which round-trips every
//! `f64`. JSONL files hold one JSON object per CSV row, keyed by the column names.

use std::io::{Read, Write};

use serde_json::{json, Map, Value};

use crate::ensemble::{EnsembleSummary, Histogram, ObservableSummary};
use crate::error::{Error, Result};
use crate::io::Format;
use crate::path::Path;
use crate::scaling::SweepTable;
use crate::sde::CycleObservables;

/// Round-trip exact decimal form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One cell of an output row.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    F(f64),
    U(u64),
    S(String),
    B(bool),
    Missing,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::F(x) => fmt_f64(*x),
            Cell::U(u) => u.to_string(),
            Cell::S(s) => s.clone(),
            Cell::B(b) => b.to_string(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::F(x) => json!(x),
            Cell::U(u) => json!(u),
            Cell::S(s) => json!(s),
            Cell::B(b) => json!(b),
            Cell::Missing => Value::Null,
        }
    }
}

fn opt(x: Option<f64>) -> Cell {
    x.map_or(Cell::Missing, Cell::F)
}

/// Writes a header and rows in the chosen format.
pub fn write_table<W: Write>(
    out: W,
    format: Format,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<Cell>>,
) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(out);
            w.write_record(header).map_err(|e| Error::io("csv", e))?;
            for row in rows {
                w.write_record(row.iter().map(Cell::csv))
                    .map_err(|e| Error::io("csv", e))?;
            }
            w.flush().map_err(|e| Error::io("csv", e))
        }
        Format::Jsonl => {
            let mut out = out;
            for row in rows {
                let obj: Map<String, Value> = header
                    .iter()
                    .map(|h| h.to_string())
                    .zip(row.iter().map(Cell::json))
                    .collect();
                writeln!(out, "{}", Value::Object(obj)).map_err(|e| Error::io("jsonl", e))?;
            }
            out.flush().map_err(|e| Error::io("jsonl", e))
        }
    }
}

pub const PATH_HEADER: [&str; 2] = ["t", "x"];
pub const SUMMARY_HEADER: [&str; 3] = ["observable", "statistic", "value"];
pub const HISTOGRAM_HEADER: [&str; 3] = ["left_edge", "right_edge", "count"];
pub const SAMPLES_HEADER: [&str; 7] = ["index", "seed", "area", "tau0", "lambda0", "crossed", "x_end"];
pub const SWEEP_HEADER: [&str; 11] = [
    "value",
    "eps",
    "sigma",
    "amplitude",
    "case",
    "borderline",
    "statistic",
    "std_error",
    "median_area",
    "crossing_rate",
    "median_tau0",
];

pub fn write_path<W: Write>(out: W, path: &Path, format: Format) -> Result<()> {
    write_table(
        out,
        format,
        &PATH_HEADER,
        path.iter().map(|(t, x)| vec![Cell::F(t), Cell::F(x)]),
    )
}

fn quantile_name(level: f64) -> String {
    format!("q{:02}", (level * 100.0).round() as u32)
}

fn observable_rows(name: &str, s: &ObservableSummary) -> Vec<Vec<Cell>> {
    let row = |stat: &str, v: Cell| vec![Cell::S(name.into()), Cell::S(stat.into()), v];
    let mut rows = vec![
        row("count", Cell::U(s.count)),
        row("mean", Cell::F(s.mean)),
        row("variance", Cell::F(s.variance)),
        row("skewness", Cell::F(s.skewness)),
        row("excess_kurtosis", Cell::F(s.excess_kurtosis)),
        row("min", Cell::F(s.min)),
        row("max", Cell::F(s.max)),
    ];
    rows.extend(s.quantiles.iter().map(|&(p, q)| row(&quantile_name(p), Cell::F(q))));
    rows
}

/// One row per observable statistic, after the ensemble-level rows.
pub fn summary_rows(summary: &EnsembleSummary) -> Vec<Vec<Cell>> {
    let row = |stat: &str, v: Cell| vec![Cell::S("ensemble".into()), Cell::S(stat.into()), v];
    let mut rows = vec![
        row("n", Cell::U(summary.n)),
        row("seed_base", Cell::U(summary.seed_base)),
        row("crossed", Cell::U(summary.crossed)),
        row("crossing_rate", Cell::F(summary.crossing_rate)),
    ];
    for (name, s) in summary.observables() {
        rows.extend(observable_rows(name, s));
    }
    rows
}

pub fn write_summary<W: Write>(out: W, summary: &EnsembleSummary, format: Format) -> Result<()> {
    write_table(out, format, &SUMMARY_HEADER, summary_rows(summary))
}

pub fn write_histogram<W: Write>(out: W, hist: &Histogram, format: Format) -> Result<()> {
    write_table(
        out,
        format,
        &HISTOGRAM_HEADER,
        hist.rows().map(|(l, r, c)| vec![Cell::F(l), Cell::F(r), Cell::U(c)]),
    )
}

pub fn write_samples<W: Write>(out: W, samples: &[CycleObservables], format: Format) -> Result<()> {
    write_table(
        out,
        format,
        &SAMPLES_HEADER,
        samples.iter().enumerate().map(|(i, o)| {
            vec![
                Cell::U(i as u64),
                Cell::U(o.seed),
                Cell::F(o.area),
                opt(o.tau0),
                opt(o.lambda0),
                Cell::B(o.crossed),
                Cell::F(o.x_end),
            ]
        }),
    )
}

pub fn write_sweep<W: Write>(out: W, table: &SweepTable, format: Format) -> Result<()> {
    write_table(
        out,
        format,
        &SWEEP_HEADER,
        table.rows.iter().map(|r| {
            vec![
                Cell::F(r.value),
                Cell::F(r.params.epsilon),
                Cell::F(r.params.sigma),
                Cell::F(r.params.amplitude),
                Cell::S(r.case.to_string()),
                Cell::B(r.borderline),
                Cell::F(r.statistic),
                Cell::F(r.std_error),
                opt(r.median_area),
                opt(r.crossing_rate),
                opt(r.median_tau0),
            ]
        }),
    )
}

/// Rows of a CSV file written by this module, header excluded.
pub fn read_csv<R: Read>(input: R, header: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new().from_reader(input);
    let found: Vec<String> = r
        .headers()
        .map_err(|e| Error::io("csv", e))?
        .iter()
        .map(String::from)
        .collect();
    if found != header {
        return Err(Error::Config(format!(
            "unexpected CSV header {found:?}, expected {header:?}"
        )));
    }
    r.records()
        .map(|rec| {
            rec.map(|rec| rec.iter().map(String::from).collect())
                .map_err(|e| Error::io("csv", e))
        })
        .collect()
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Config(format!("not a number: `{s}`")))
}

pub fn read_path_csv<R: Read>(input: R) -> Result<Vec<(f64, f64)>> {
    read_csv(input, &PATH_HEADER)?
        .iter()
        .map(|r| Ok((parse_f64(&r[0])?, parse_f64(&r[1])?)))
        .collect()
}

/// `(observable, statistic, value)` triples of a summary CSV. Values stay
/// text: counts and seeds are integers that an `f64` cannot always hold.
pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<(String, String, String)>> {
    Ok(read_csv(input, &SUMMARY_HEADER)?
        .into_iter()
        .map(|mut r| {
            let v = std::mem::take(&mut r[2]);
            let stat = std::mem::take(&mut r[1]);
            (std::mem::take(&mut r[0]), stat, v)
        })
        .collect())
}

pub fn read_histogram_csv<R: Read>(input: R) -> Result<Histogram> {
    let rows = read_csv(input, &HISTOGRAM_HEADER)?;
    let mut edges = Vec::with_capacity(rows.len() + 1);
    let mut counts = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if i == 0 {
            edges.push(parse_f64(&r[0])?);
        }
        edges.push(parse_f64(&r[1])?);
        counts.push(
            r[2].parse()
                .map_err(|_| Error::Config(format!("bad count `{}`", r[2])))?,
        );
    }
    Ok(Histogram { edges, counts })
}
