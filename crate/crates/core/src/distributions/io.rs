//! Text formats for PMFs and execution-time traces.
//!
//! PMF files hold one `<value_µs> <probability>` pair per line in strictly
//! increasing value order; `#` starts a comment. Written files begin with a
//! versioned header comment. Trace files hold one sample per line; fractional
//! samples are rounded to the nearest microsecond.

use super::{DistributionError, Pmf};
use std::fmt::Write as _;
use std::path::Path;

pub const PMF_FORMAT_HEADER: &str = "# cbsprob-pmf v1";
const PMF_HEADER_PREFIX: &str = "# cbsprob-pmf";
const NORMALIZATION_SLACK: f64 = 1e-6;

fn parse_err(line: usize, message: impl Into<String>) -> DistributionError {
    DistributionError::Parse {
        line,
        message: message.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses the PMF text format.
pub fn parse_pmf(text: &str) -> Result<Pmf, DistributionError> {
    if let Some(first) = text.lines().next() {
        let first = first.trim();
        if let Some(version) = first.strip_prefix(PMF_HEADER_PREFIX) {
            if version.trim() != "v1" {
                return Err(parse_err(1, format!("unsupported PMF format version '{}'", version.trim())));
            }
        }
    }
    let mut pairs: Vec<(u64, f64)> = Vec::new();
    for (line, content) in content_lines(text) {
        let mut fields = content.split_whitespace();
        let (Some(value), Some(prob), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(line, "expected '<value_us> <probability>'"));
        };
        let value: u64 = value
            .parse()
            .map_err(|_| parse_err(line, format!("invalid value '{value}' (expected integer µs)")))?;
        let prob: f64 = prob
            .parse()
            .map_err(|_| parse_err(line, format!("invalid probability '{prob}'")))?;
        if !prob.is_finite() || prob < 0.0 {
            return Err(parse_err(line, format!("probability {prob} is not a nonnegative number")));
        }
        if let Some(&(prev, _)) = pairs.last() {
            if value <= prev {
                return Err(parse_err(line, format!("value {value} does not exceed previous value {prev}")));
            }
        }
        pairs.push((value, prob));
    }
    if pairs.is_empty() {
        return Err(DistributionError::NoMass);
    }
    let sum: f64 = pairs.iter().map(|(_, p)| p).sum();
    if (sum - 1.0).abs() >= NORMALIZATION_SLACK {
        return Err(DistributionError::NotNormalized { sum });
    }
    Pmf::from_pairs(&pairs)
}

/// Serializes the nonzero masses of `pmf` in the PMF text format.
pub fn format_pmf(pmf: &Pmf) -> String {
    let mut out = String::from(PMF_FORMAT_HEADER);
    out.push('\n');
    for (value, mass) in pmf.support() {
        // `{:e}` round-trips f64 exactly.
        let _ = writeln!(out, "{value} {mass:e}");
    }
    out
}

pub fn read_pmf(path: &Path) -> Result<Pmf, DistributionError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DistributionError::Io(format!("{}: {e}", path.display())))?;
    parse_pmf(&text)
}

pub fn write_pmf(path: &Path, pmf: &Pmf) -> Result<(), DistributionError> {
    std::fs::write(path, format_pmf(pmf)).map_err(|e| DistributionError::Io(format!("{}: {e}", path.display())))
}

/// Parses a trace: one execution-time sample (µs) per line.
pub fn parse_trace(text: &str) -> Result<Vec<u64>, DistributionError> {
    content_lines(text)
        .map(|(line, content)| {
            let x: f64 = content
                .parse()
                .map_err(|_| parse_err(line, format!("invalid sample '{content}'")))?;
            if !x.is_finite() || x < 0.0 {
                return Err(parse_err(line, format!("sample {x} is not a nonnegative number")));
            }
            Ok(x.round() as u64)
        })
        .collect()
}

pub fn read_trace(path: &Path) -> Result<Vec<u64>, DistributionError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DistributionError::Io(format!("{}: {e}", path.display())))?;
    parse_trace(&text)
}
