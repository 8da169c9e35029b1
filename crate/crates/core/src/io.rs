//! Text file formats. Every file written here starts with a
//! `#format-version=1` line; readers skip other `#` lines and reject unknown
//! versions. Category codes in files are 1-based.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{CategoryLayout, DisjointConditionSet, MarginalCondition, MicrodataSample};
use crate::error::{Error, Result};
use crate::risk::{RiskTrace, TraceSummary};

pub const FORMAT_VERSION: u32 = 1;
const VERSION_PREFIX: &str = "#format-version=";

pub fn version_line() -> String {
    format!("{VERSION_PREFIX}{FORMAT_VERSION}\n")
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Read a whole text file and check its version line, if present.
fn read_versioned(path: &Path, what: &'static str) -> Result<String> {
    let text = fs::read_to_string(path)?;
    if let Some(first) = text.lines().next() {
        if let Some(v) = first.trim().strip_prefix(VERSION_PREFIX) {
            if v.trim() != FORMAT_VERSION.to_string() {
                return Err(Error::FormatVersion {
                    what,
                    found: v.trim().to_string(),
                    expected: FORMAT_VERSION,
                });
            }
        }
    }
    Ok(text)
}

fn csv_reader(text: &str, headers: bool) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(headers)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes())
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_error(path, line, e.to_string())
}

/// Write `contents` through a temporary sibling and rename it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Layout file: one `name,n_j` line per variable.
pub fn read_layout(path: &Path) -> Result<CategoryLayout> {
    let text = read_versioned(path, "layout file")?;
    let mut names = Vec::new();
    let mut levels = Vec::new();
    for rec in csv_reader(&text, false).records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = record_line(&rec);
        if rec.len() != 2 {
            return Err(parse_error(path, line, "expected `name,levels`"));
        }
        let n: u32 = rec[1]
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad level count `{}`", &rec[1])))?;
        names.push(rec[0].to_string());
        levels.push(n);
    }
    CategoryLayout::new(names, levels)
}

pub fn format_layout(layout: &CategoryLayout) -> String {
    let mut out = version_line();
    for (name, l) in layout.names().iter().zip(layout.levels()) {
        out.push_str(&format!("{name},{l}\n"));
    }
    out
}

/// Microdata CSV: a header of variable names, then one row of 1-based
/// codes per individual.
pub fn read_microdata(path: &Path, layout: &CategoryLayout) -> Result<MicrodataSample> {
    let text = read_versioned(path, "microdata file")?;
    let mut reader = csv_reader(&text, true);
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() != layout.num_vars() {
        return Err(parse_error(
            path,
            record_line(&header),
            format!("{} columns for {} key variables", header.len(), layout.num_vars()),
        ));
    }
    for (j, (h, name)) in header.iter().zip(layout.names()).enumerate() {
        if h != name {
            return Err(parse_error(
                path,
                record_line(&header),
                format!("column {} is `{h}`, layout names `{name}`", j + 1),
            ));
        }
    }
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = record_line(&rec);
        if rec.len() != layout.num_vars() {
            return Err(parse_error(
                path,
                line,
                format!("{} fields, expected {}", rec.len(), layout.num_vars()),
            ));
        }
        let mut row = Vec::with_capacity(rec.len());
        for (j, field) in rec.iter().enumerate() {
            let v: u32 = field
                .parse()
                .map_err(|_| parse_error(path, line, format!("bad category code `{field}`")))?;
            if v == 0 || v > layout.level(j) {
                return Err(parse_error(
                    path,
                    line,
                    format!("code {v} outside 1..={} for {}", layout.level(j), layout.names()[j]),
                ));
            }
            row.push(v - 1);
        }
        records.push(row);
    }
    MicrodataSample::new(layout.clone(), records)
}

pub fn format_microdata(sample: &MicrodataSample) -> String {
    let mut out = version_line();
    out.push_str(&sample.layout().names().join(","));
    out.push('\n');
    for rec in sample.records() {
        let row: Vec<String> = rec.iter().map(|x| (x + 1).to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Condition file: one condition per line, J tokens, `*` for wildcards.
pub fn read_conditions(path: &Path, layout: &CategoryLayout) -> Result<Vec<MarginalCondition>> {
    let text = read_versioned(path, "condition file")?;
    let mut out = Vec::new();
    for rec in csv_reader(&text, false).records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = record_line(&rec);
        let tokens: Vec<&str> = rec.iter().collect();
        let mu =
            MarginalCondition::parse_tokens(layout, &tokens).map_err(|e| parse_error(path, line, e.to_string()))?;
        out.push(mu);
    }
    Ok(out)
}

pub fn format_conditions(conditions: &DisjointConditionSet) -> String {
    let mut out = version_line();
    for mu in conditions.conditions() {
        out.push_str(&mu.to_tokens());
        out.push('\n');
    }
    out
}

/// Trace CSV with columns `iteration,tau1,K_n`.
pub fn format_trace(trace: &RiskTrace) -> String {
    let mut out = version_line();
    out.push_str("iteration,tau1,K_n\n");
    for ((it, tau), k) in trace.iterations.iter().zip(&trace.tau1).zip(&trace.k_n) {
        out.push_str(&format!("{it},{tau},{k}\n"));
    }
    out
}

/// Rows of a trace CSV as (iteration, τ₁, K_n).
pub fn read_trace(path: &Path) -> Result<Vec<(u64, f64, usize)>> {
    let text = read_versioned(path, "trace file")?;
    let mut reader = csv_reader(&text, true);
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["iteration", "tau1", "K_n"] {
        return Err(parse_error(
            path,
            record_line(&header),
            "expected header `iteration,tau1,K_n`",
        ));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = record_line(&rec);
        let bad = |what: &str| parse_error(path, line, format!("bad {what}"));
        if rec.len() != 3 {
            return Err(bad("row length"));
        }
        rows.push((
            rec[0].parse().map_err(|_| bad("iteration"))?,
            rec[1].parse().map_err(|_| bad("tau1"))?,
            rec[2].parse().map_err(|_| bad("K_n"))?,
        ));
    }
    Ok(rows)
}

/// `key=value` lines for a posterior summary.
pub fn format_summary(summary: &TraceSummary, extra: &[(&str, String)]) -> String {
    let mut out = version_line();
    for (k, v) in extra {
        out.push_str(&format!("{k}={v}\n"));
    }
    out.push_str(&format!("draws={}\n", summary.draws));
    out.push_str(&format!("mean={}\n", summary.mean));
    out.push_str(&format!("median={}\n", summary.median));
    out.push_str(&format!("std={}\n", summary.std));
    out.push_str(&format!("q025={}\n", summary.q025));
    out.push_str(&format!("q975={}\n", summary.q975));
    out
}

/// Equal-width histogram over [min, max] of the values.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (lo + b as f64 * width, lo + (b + 1) as f64 * width, c))
        .collect()
}

pub fn format_histogram(values: &[f64], bins: usize) -> String {
    let mut out = version_line();
    out.push_str("lower,upper,count\n");
    for (a, b, c) in histogram(values, bins) {
        out.push_str(&format!("{a},{b},{c}\n"));
    }
    out
}

pub fn save_checkpoint(path: &Path, checkpoint: &crate::hdp::Checkpoint) -> Result<()> {
    let json = serde_json::to_vec(checkpoint)?;
    write_atomic(path, &json)
}

pub fn load_checkpoint(path: &Path) -> Result<crate::hdp::Checkpoint> {
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}
