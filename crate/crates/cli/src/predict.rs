use crate::config::Config;
use crate::error::CliResult;
use crate::output::{csv_text, fmt6, Outputs};
use macroreal_core::quantum::{
    predicted_tables, qm_lgi, qm_nsit, qm_range, qm_wlgi, QmRange, SetupParams, Tolerances,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointValues {
    pub lgi: f64,
    pub wlgi: f64,
    pub nsit12: f64,
    pub nsit23: f64,
    pub nsit13: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub setup: SetupParams,
    pub tolerances: Tolerances,
    pub point: PointValues,
    /// Extremes over the tolerance box.
    pub range: QmRange,
    /// Joint probability tables keyed by time tuple, then outcome label.
    pub tables: BTreeMap<String, BTreeMap<String, f64>>,
}

pub fn predict(cfg: &Config) -> CliResult<Prediction> {
    let p = &cfg.setup;
    let n = qm_nsit(p);
    let point = PointValues {
        lgi: qm_lgi(p),
        wlgi: qm_wlgi(p),
        nsit12: n.nsit12,
        nsit23: n.nsit23,
        nsit13: n.nsit13,
    };
    let range = qm_range(p, &cfg.tolerances)?;
    let t = predicted_tables(p)?;
    let tables = [
        ("t2,t3", &t.p23),
        ("t1,t3", &t.p13),
        ("t1,t2,t3", &t.p123),
        ("t1,t2", &t.p12),
        ("t3", &t.p3),
    ]
    .into_iter()
    .map(|(k, t)| (k.to_string(), t.labelled()))
    .collect();
    Ok(Prediction {
        setup: *p,
        tolerances: cfg.tolerances,
        point,
        range,
        tables,
    })
}

pub fn write(out: &mut Outputs, pred: &Prediction) -> CliResult<()> {
    out.json("prediction.json", pred)?;
    let rows = pred.tables.iter().flat_map(|(times, entries)| {
        entries
            .iter()
            .map(move |(outcome, p)| vec![times.clone(), outcome.clone(), fmt6(*p)])
    });
    out.text("probabilities.csv", &csv_text(&["times", "outcome", "probability"], rows))
}
