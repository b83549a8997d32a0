//! CSV artifacts. Every file starts with one `# config_hash=<hex> seed=<n>`
//! line followed by a header row; real numbers carry 9 significant digits.
//!
//! | kind    | columns |
//! |---------|---------|
//! | sweep   | `axis,axis_value,detector,detection_rate,empirical_false_alarm,num_trials,num_steps` |
//! | roc     | `detector,threshold,false_alarm_rate,detection_rate` |
//! | records | `k,truth,detector,statistic,threshold,decision` |

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{HarnessError, RocCurve, RocPoint, RocResult, SweepAxis, SweepPoint, SweepResult};
use crate::detector::{DetectionRecord, DetectorKind, Hypothesis};

type Result<T> = std::result::Result<T, HarnessError>;

pub const SWEEP_HEADER: [&str; 7] =
    ["axis", "axis_value", "detector", "detection_rate", "empirical_false_alarm", "num_trials", "num_steps"];
pub const ROC_HEADER: [&str; 4] = ["detector", "threshold", "false_alarm_rate", "detection_rate"];
pub const RECORDS_HEADER: [&str; 6] = ["k", "truth", "detector", "statistic", "threshold", "decision"];

/// 9 significant digits in scientific notation.
pub fn format_real(x: f64) -> String {
    format!("{x:.8e}")
}

fn hypothesis_name(h: Hypothesis) -> &'static str {
    match h {
        Hypothesis::H0 => "H0",
        Hypothesis::H1 => "H1",
    }
}

fn parse_hypothesis(s: &str) -> Option<Hypothesis> {
    match s {
        "H0" => Some(Hypothesis::H0),
        "H1" => Some(Hypothesis::H1),
        _ => None,
    }
}

fn parse_detector(s: &str) -> Option<DetectorKind> {
    match s {
        "kalman" => Some(DetectorKind::Kalman),
        "magnitude" => Some(DetectorKind::MagnitudeDiff),
        _ => None,
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| {
        let line = e.position().map_or(0, |p| p.line() as usize);
        match e.into_kind() {
            csv::ErrorKind::Io(source) => HarnessError::Io { path: path.display().to_string(), source },
            other => HarnessError::Csv { path: path.display().to_string(), line, message: format!("{other:?}") },
        }
    }
}

fn write_table<W: Write>(
    out: W,
    hash: &str,
    seed: u64,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> std::result::Result<(), csv::Error> {
    let mut out = out;
    writeln!(out, "# config_hash={hash} seed={seed}")?;
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_file(path: &Path, hash: &str, seed: u64, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_table(BufWriter::new(file), hash, seed, header, rows).map_err(csv_err(path))
}

struct Table {
    hash: String,
    seed: u64,
    rows: Vec<(usize, csv::StringRecord)>,
}

fn read_file(path: &Path, header: &[&str]) -> Result<Table> {
    let bad = |line: usize, message: String| HarnessError::Csv { path: path.display().to_string(), line, message };
    let mut reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut meta = String::new();
    reader.read_line(&mut meta).map_err(io_err(path))?;
    let meta = meta.trim_end();
    let body = meta.strip_prefix("# ").ok_or_else(|| bad(1, "missing `# config_hash=... seed=...` line".into()))?;
    let (mut hash, mut seed) = (None, None);
    for field in body.split_whitespace() {
        match field.split_once('=') {
            Some(("config_hash", v)) => hash = Some(v.to_string()),
            Some(("seed", v)) => seed = v.parse::<u64>().ok(),
            _ => {}
        }
    }
    let (hash, seed) = hash.zip(seed).ok_or_else(|| bad(1, "metadata needs config_hash and seed".into()))?;
    let mut rest = String::new();
    reader.read_to_string(&mut rest).map_err(io_err(path))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
    let got: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(str::to_string).collect();
    if got != header {
        return Err(bad(2, format!("expected header {}, got {}", header.join(","), got.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        rows.push((i + 3, rec.map_err(csv_err(path))?));
    }
    Ok(Table { hash, seed, rows })
}

fn field<'a>(path: &Path, line: usize, rec: &'a csv::StringRecord, i: usize) -> Result<&'a str> {
    rec.get(i).ok_or_else(|| HarnessError::Csv { path: path.display().to_string(), line, message: format!("missing column {i}") })
}

fn parsed<T: std::str::FromStr>(path: &Path, line: usize, s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| HarnessError::Csv { path: path.display().to_string(), line, message: format!("bad {what} `{s}`") })
}

fn named<T>(path: &Path, line: usize, v: Option<T>, s: &str) -> Result<T> {
    v.ok_or_else(|| HarnessError::Csv { path: path.display().to_string(), line, message: format!("unrecognized value `{s}`") })
}

pub fn write_sweep_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let rows = result.points.iter().map(|p| {
        vec![
            result.axis.name().to_string(),
            format_real(p.axis_value),
            p.detector.name().to_string(),
            format_real(p.detection_rate),
            format_real(p.empirical_false_alarm),
            p.num_trials.to_string(),
            p.num_steps.to_string(),
        ]
    });
    write_file(path, &result.config_hash, result.seed, &SWEEP_HEADER, rows)
}

/// Reads a sweep file; the axis of an empty file defaults to SNR.
pub fn read_sweep_csv(path: &Path) -> Result<SweepResult> {
    let t = read_file(path, &SWEEP_HEADER)?;
    let mut axis = None;
    let mut points = Vec::new();
    for (line, rec) in &t.rows {
        let f = |i| field(path, *line, rec, i);
        let a = named(path, *line, SweepAxis::parse(f(0)?), f(0)?)?;
        if axis.is_some_and(|x| x != a) {
            return Err(HarnessError::Csv { path: path.display().to_string(), line: *line, message: "mixed axes".into() });
        }
        axis = Some(a);
        points.push(SweepPoint {
            axis_value: parsed(path, *line, f(1)?, "axis value")?,
            detector: named(path, *line, parse_detector(f(2)?), f(2)?)?,
            detection_rate: parsed(path, *line, f(3)?, "rate")?,
            empirical_false_alarm: parsed(path, *line, f(4)?, "rate")?,
            num_trials: parsed(path, *line, f(5)?, "count")?,
            num_steps: parsed(path, *line, f(6)?, "count")?,
            counts: None,
        });
    }
    Ok(SweepResult { axis: axis.unwrap_or(SweepAxis::SnrDb), points, config_hash: t.hash, seed: t.seed, created_unix: None })
}

pub fn write_roc_csv(result: &RocResult, path: &Path) -> Result<()> {
    let rows = result.curves.iter().flat_map(|c| {
        c.points.iter().map(move |p| {
            vec![c.detector.name().to_string(), format_real(p.threshold), format_real(p.false_alarm_rate), format_real(p.detection_rate)]
        })
    });
    write_file(path, &result.config_hash, result.seed, &ROC_HEADER, rows)
}

pub fn read_roc_csv(path: &Path) -> Result<RocResult> {
    let t = read_file(path, &ROC_HEADER)?;
    let mut curves: Vec<RocCurve> = Vec::new();
    for (line, rec) in &t.rows {
        let f = |i| field(path, *line, rec, i);
        let detector = named(path, *line, parse_detector(f(0)?), f(0)?)?;
        let point = RocPoint {
            threshold: parsed(path, *line, f(1)?, "threshold")?,
            false_alarm_rate: parsed(path, *line, f(2)?, "rate")?,
            detection_rate: parsed(path, *line, f(3)?, "rate")?,
        };
        match curves.last_mut() {
            Some(c) if c.detector == detector => c.points.push(point),
            _ => curves.push(RocCurve { detector, points: vec![point] }),
        }
    }
    Ok(RocResult { curves, config_hash: t.hash, seed: t.seed })
}

pub fn write_records_csv(records: &[DetectionRecord], config_hash: &str, seed: u64, path: &Path) -> Result<()> {
    let rows = records.iter().map(|r| {
        vec![
            r.time_index.to_string(),
            hypothesis_name(r.ground_truth).to_string(),
            r.detector.name().to_string(),
            format_real(r.statistic),
            format_real(r.threshold),
            hypothesis_name(r.decision).to_string(),
        ]
    });
    write_file(path, config_hash, seed, &RECORDS_HEADER, rows)
}

/// Reads records back; returns them with the metadata hash and seed.
pub fn read_records_csv(path: &Path) -> Result<(Vec<DetectionRecord>, String, u64)> {
    let t = read_file(path, &RECORDS_HEADER)?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let f = |i| field(path, *line, rec, i);
        let statistic = parsed(path, *line, f(3)?, "statistic")?;
        let threshold = parsed(path, *line, f(4)?, "threshold")?;
        let decision = named(path, *line, parse_hypothesis(f(5)?), f(5)?)?;
        out.push(DetectionRecord {
            time_index: parsed(path, *line, f(0)?, "step")?,
            ground_truth: named(path, *line, parse_hypothesis(f(1)?), f(1)?)?,
            detector: named(path, *line, parse_detector(f(2)?), f(2)?)?,
            statistic,
            threshold,
            decision,
        });
    }
    Ok((out, t.hash, t.seed))
}
