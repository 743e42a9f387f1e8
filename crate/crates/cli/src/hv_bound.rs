use crate::error::{input, CliResult};
use crate::output::{csv_text, fmt6, Outputs};
use macroreal_core::hv::{
    blocker_setup_bound, critical_efficiency, maximize_detectors, BoundCertificate, Inequality,
    SearchOptions,
};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

/// η values of the default scan, including both crossing points.
pub const DEFAULT_ETAS: [f64; 5] = [0.5, 2.0 / 3.0, 0.78, 0.8508, 1.0];

#[derive(Serialize)]
pub struct HvReport {
    pub detectors: Vec<BoundCertificate>,
    pub blockers: Vec<BoundCertificate>,
    pub critical_efficiency: BTreeMap<String, f64>,
}

pub fn check_etas(etas: &[f64]) -> CliResult<()> {
    if etas.is_empty() {
        return Err(input("at least one η is required"));
    }
    match etas.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
        Some(e) => Err(input(format!("η = {e} not in (0, 1]"))),
        None => Ok(()),
    }
}

pub fn hv_bound(etas: &[f64], ineqs: &[Inequality], opts: &SearchOptions) -> CliResult<HvReport> {
    check_etas(etas)?;
    let cases: Vec<(Inequality, f64)> = ineqs
        .iter()
        .flat_map(|&i| etas.iter().map(move |&e| (i, e)))
        .collect();
    let detectors = cases
        .par_iter()
        .map(|&(i, e)| maximize_detectors(i, e, opts))
        .collect::<macroreal_core::Result<Vec<_>>>()?;
    let blockers = cases
        .iter()
        .map(|&(i, e)| blocker_setup_bound(i, e))
        .collect::<macroreal_core::Result<Vec<_>>>()?;
    let critical_efficiency = ineqs
        .iter()
        .map(|&i| (i.to_string().to_lowercase(), critical_efficiency(i)))
        .collect();
    Ok(HvReport {
        detectors,
        blockers,
        critical_efficiency,
    })
}

pub fn write(out: &mut Outputs, r: &HvReport) -> CliResult<()> {
    out.json("hv_bounds.json", r)?;
    let rows = r.detectors.iter().zip(&r.blockers).map(|(d, b)| {
        vec![
            d.inequality.to_string(),
            fmt6(d.eta),
            fmt6(d.bound),
            fmt6(d.formula_value),
            fmt6(b.bound),
            fmt6(d.min_denominator),
            d.exceeds_formula(1e-4).to_string(),
        ]
    });
    out.text(
        "hv_bounds.csv",
        &csv_text(
            &[
                "inequality",
                "eta",
                "detectors_bound",
                "closed_form",
                "blockers_bound",
                "min_denominator",
                "exceeds_closed_form",
            ],
            rows,
        ),
    )
}
