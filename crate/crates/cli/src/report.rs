use crate::error::{input, CliResult};
use crate::output::{csv_text, fmt6, Outputs};
use crate::predict::Prediction;
use macroreal_core::analysis::{Estimate, MeasuredSummary};
use macroreal_core::multiphoton::modified_bounds;
use macroreal_core::quantum::Interval;
use serde::de::DeserializeOwned;
use std::fmt::Write;
use std::path::Path;

/// One quantity side by side: prediction, measurement and violation margin.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub quantity: &'static str,
    pub predicted: f64,
    pub range: Option<Interval>,
    pub measured: f64,
    pub delta: Option<f64>,
    /// Macrorealist bound for LGI/WLGI; zero for the NSIT conditions.
    pub bound: f64,
}

impl Row {
    pub fn margin(&self) -> f64 {
        self.measured - self.bound
    }

    /// Margin in units of Δ.
    pub fn ratio(&self) -> Option<f64> {
        self.delta.filter(|d| *d > 0.0).map(|d| self.margin() / d)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input(format!("cannot read {what} {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| input(format!("{what} {}: field `{}`: {}", path.display(), e.path(), e.inner())))
}

/// Bounds default to the blocker setup's 1 and 0; a γ lifts them to the
/// multiphoton-modified values.
pub fn rows(pred: &Prediction, meas: &MeasuredSummary, gamma: Option<f64>) -> CliResult<Vec<Row>> {
    let (lgi_bound, wlgi_bound) = match gamma {
        Some(g) => {
            let b = modified_bounds(g)?;
            (b.lgi_bound, b.wlgi_bound)
        }
        None => (1.0, 0.0),
    };
    let p = &pred.point;
    let row = |quantity, predicted, range, e: &Estimate, bound| Row {
        quantity,
        predicted,
        range,
        measured: e.mean,
        delta: e.delta,
        bound,
    };
    Ok(vec![
        row("LGI", p.lgi, Some(pred.range.lgi), &meas.lgi, lgi_bound),
        row("WLGI", p.wlgi, Some(pred.range.wlgi), &meas.wlgi, wlgi_bound),
        row("NSIT12", p.nsit12, None, &meas.nsit12, 0.0),
        row("NSIT23", p.nsit23, Some(pred.range.nsit23), &meas.nsit23, 0.0),
        row("NSIT13", p.nsit13, None, &meas.nsit13, 0.0),
    ])
}

const HEADER: [&str; 9] = [
    "quantity",
    "predicted",
    "range_lo",
    "range_hi",
    "measured",
    "delta",
    "bound",
    "margin",
    "margin_over_delta",
];

fn cells(r: &Row) -> Vec<String> {
    let opt = |x: Option<f64>| x.map(fmt6).unwrap_or_default();
    vec![
        r.quantity.to_string(),
        fmt6(r.predicted),
        opt(r.range.map(|i| i.lo)),
        opt(r.range.map(|i| i.hi)),
        fmt6(r.measured),
        opt(r.delta),
        fmt6(r.bound),
        fmt6(r.margin()),
        opt(r.ratio()),
    ]
}

pub fn text(rows: &[Row]) -> String {
    let table: Vec<Vec<String>> = std::iter::once(HEADER.iter().map(|h| h.to_string()).collect())
        .chain(rows.iter().map(cells))
        .collect();
    let widths: Vec<usize> = (0..HEADER.len())
        .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for r in &table {
        let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        writeln!(s, "{}", line.join("  ").trim_end()).unwrap();
    }
    s.push('\n');
    for r in rows.iter().take(2) {
        match r.ratio() {
            Some(x) if r.margin() > 0.0 => writeln!(
                s,
                "{} exceeds its macrorealist bound {} by {:.1} times Δ.",
                r.quantity,
                fmt6(r.bound),
                x
            ),
            Some(_) => writeln!(s, "{} does not exceed its macrorealist bound {}.", r.quantity, fmt6(r.bound)),
            None => writeln!(s, "{}: no Δ available.", r.quantity),
        }
        .unwrap();
    }
    s
}

pub fn write(out: &mut Outputs, rows: &[Row]) -> CliResult<()> {
    out.text("report.csv", &csv_text(&HEADER, rows.iter().map(cells)))?;
    out.text("report.txt", &text(rows))
}
