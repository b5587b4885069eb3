//! Run reports: the configuration as a commented JSON block, one CSV row per
//! iteration and a closing fit line.
//!
//! ```text
//! # config
//! # { "geometry": "slit", ... }
//! iter,knots,dofs,mu,eta,energy_error,marked,kappa,seconds
//! 0,6,4,0.31,0.12,0.05,2,1,0.001
//! # fit s=1.49 q=0.71
//! ```

use std::io::Write;

use crate::driver::{RateFit, RunConfig, RunReport};
use crate::error::{Error, Result};
use crate::estimators::IndicatorSet;

pub const CSV_HEADER: &str = "iter,knots,dofs,mu,eta,energy_error,marked,kappa,seconds";
pub const INDICATOR_HEADER: &str = "iter,node_param,mu2,eta2";

const CONFIG_MARKER: &str = "# config";
const FIT_PREFIX: &str = "# fit ";

/// One CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub iter: usize,
    pub knots: usize,
    pub dofs: usize,
    pub mu: f64,
    pub eta: f64,
    pub energy_error: Option<f64>,
    pub marked: usize,
    pub kappa: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedReport {
    pub config: Option<RunConfig>,
    pub rows: Vec<ReportRow>,
    pub fit: Option<RateFit>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_report(w: &mut impl Write, report: &RunReport) -> Result<()> {
    writeln!(w, "{CONFIG_MARKER}")?;
    let json =
        serde_json::to_string_pretty(&report.config).map_err(|e| Error::Internal(e.to_string()))?;
    for line in json.lines() {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "{CSV_HEADER}")?;
    for r in &report.records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.iter,
            r.knots,
            r.dofs,
            r.mu,
            r.eta,
            opt(r.energy_error),
            r.marked,
            r.kappa,
            r.seconds
        )?;
    }
    writeln!(w, "# stop {}", report.stop)?;
    writeln!(w, "{}", fit_line(report))?;
    Ok(())
}

/// The closing summary line; `NaN` when the run is too short to fit.
pub fn fit_line(report: &RunReport) -> String {
    match report.fit() {
        Ok(f) => format!("{FIT_PREFIX}s={} q={}", f.s, f.q),
        Err(_) => format!("{FIT_PREFIX}s=NaN q=NaN"),
    }
}

pub fn write_indicators(
    w: &mut impl Write,
    iter: usize,
    mu: &IndicatorSet,
    eta: &IndicatorSet,
) -> Result<()> {
    if mu.params() != eta.params() {
        return Err(Error::domain("indicator sets belong to different meshes"));
    }
    for ((z, m), e) in mu.params().iter().zip(mu.values()).zip(eta.values()) {
        writeln!(w, "{iter},{z},{m},{e}")?;
    }
    Ok(())
}

fn parse_row(line: usize, l: &str) -> Result<ReportRow> {
    let cols: Vec<&str> = l.split(',').map(str::trim).collect();
    if cols.len() != 9 {
        return Err(Error::parse(
            line,
            format!("expected 9 columns, got {}", cols.len()),
        ));
    }
    let int = |i: usize| {
        cols[i]
            .parse::<usize>()
            .map_err(|_| Error::parse(line, format!("bad integer in column {}", i + 1)))
    };
    let real = |i: usize| {
        cols[i]
            .parse::<f64>()
            .map_err(|_| Error::parse(line, format!("bad number in column {}", i + 1)))
    };
    Ok(ReportRow {
        iter: int(0)?,
        knots: int(1)?,
        dofs: int(2)?,
        mu: real(3)?,
        eta: real(4)?,
        energy_error: if cols[5].is_empty() {
            None
        } else {
            Some(real(5)?)
        },
        marked: int(6)?,
        kappa: real(7)?,
        seconds: real(8)?,
    })
}

fn parse_fit(line: usize, rest: &str) -> Result<RateFit> {
    let mut tokens = rest.split_whitespace();
    let mut value = |key: &str| {
        tokens
            .next()
            .and_then(|t| t.strip_prefix(key))
            .and_then(|t| t.strip_prefix('='))
            .and_then(|t| t.parse::<f64>().ok())
            .ok_or_else(|| Error::parse(line, format!("expected {key}=<number>")))
    };
    let s = value("s")?;
    let q = value("q")?;
    if tokens.next().is_some() {
        return Err(Error::parse(line, "trailing text after fit"));
    }
    Ok(RateFit { s, q })
}

/// Parses a report written by [`write_report`]. The config block is
/// optional; the CSV header is required.
pub fn parse_report(text: &str) -> Result<ParsedReport> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
    let mut config = None;
    let mut header_seen = false;
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut fit = None;
    while let Some((line, l)) = lines.next() {
        let l = l.trim_end();
        if l == CONFIG_MARKER {
            if header_seen || config.is_some() {
                return Err(Error::parse(line, "config block out of place"));
            }
            let mut json = String::new();
            let mut end = line;
            while let Some((n, body)) = lines.next_if(|(_, c)| c.starts_with('#')) {
                end = n;
                json.push_str(&body[1..]);
                json.push('\n');
            }
            let parsed: RunConfig = serde_json::from_str(&json)
                .map_err(|e| Error::parse(end, format!("config: {e}")))?;
            config = Some(parsed);
            continue;
        }
        if let Some(rest) = l.strip_prefix(FIT_PREFIX) {
            if !header_seen || fit.is_some() {
                return Err(Error::parse(line, "fit line out of place"));
            }
            fit = Some(parse_fit(line, rest)?);
            continue;
        }
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        if !header_seen {
            if l != CSV_HEADER {
                return Err(Error::parse(line, "missing CSV header"));
            }
            header_seen = true;
            continue;
        }
        if fit.is_some() {
            return Err(Error::parse(line, "row after fit line"));
        }
        let row = parse_row(line, l)?;
        if rows.last().is_some_and(|prev| row.iter != prev.iter + 1)
            || (rows.is_empty() && row.iter != 0)
        {
            return Err(Error::parse(line, "iterations must count up from 0"));
        }
        rows.push(row);
    }
    if !header_seen {
        return Err(Error::parse(
            text.lines().count().max(1),
            "missing CSV header",
        ));
    }
    Ok(ParsedReport { config, rows, fit })
}
