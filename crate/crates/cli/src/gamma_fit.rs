use crate::config::FitConfig;
use crate::error::{input, CliError, CliResult};
use crate::output::{csv_text, fmt6, Outputs};
use macroreal_core::fixtures::BUNDLED_COUNTS_CSV;
use macroreal_core::multiphoton::{
    fit_gamma, gamma_profile, modified_bounds, predicted_counts, CountVector12, GammaFit,
    ModifiedBounds, ProfilePoint, SET_LABELS,
};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Serialize)]
pub struct GammaFitReport {
    pub input: String,
    pub observed: BTreeMap<String, f64>,
    pub predicted: BTreeMap<String, f64>,
    pub fit: GammaFit,
    pub modified_bounds: ModifiedBounds,
    pub profile: Vec<ProfilePoint>,
}

pub fn read_counts(path: Option<&Path>) -> CliResult<(CountVector12, String)> {
    match path {
        None => Ok((CountVector12::from_csv(BUNDLED_COUNTS_CSV.as_bytes())?, "bundled".into())),
        Some(p) => {
            let f = std::fs::File::open(p)
                .map_err(|e| input(format!("cannot open {}: {e}", p.display())))?;
            let c = CountVector12::from_csv(f)
                .map_err(|e| input(format!("{}: {e}", p.display())))?;
            Ok((c, p.display().to_string()))
        }
    }
}

fn named(c: &CountVector12) -> BTreeMap<String, f64> {
    c.0.iter()
        .enumerate()
        .map(|(k, v)| (CountVector12::cell_name(k), *v))
        .collect()
}

pub fn gamma_fit(
    observed: &CountVector12,
    input_name: String,
    cfg: &FitConfig,
    profile: &[f64],
) -> CliResult<GammaFitReport> {
    let opts = cfg.options();
    let fit = fit_gamma(observed, &opts)?;
    let profile = gamma_profile(observed, profile, &opts)?;
    Ok(GammaFitReport {
        input: input_name,
        observed: named(observed),
        predicted: named(&predicted_counts(&fit.params)),
        modified_bounds: modified_bounds(fit.params.gamma)?,
        fit,
        profile,
    })
}

/// Writes the report; a fit that did not converge is still written and then
/// reported as an error.
pub fn write(out: &mut Outputs, r: &GammaFitReport, observed: &CountVector12) -> CliResult<()> {
    out.json("gamma_fit.json", r)?;
    let predicted = predicted_counts(&r.fit.params);
    let rows = SET_LABELS.iter().enumerate().map(|(s, l)| {
        let mut row = vec![l.to_string()];
        for j in 0..3 {
            row.push(fmt6(observed.0[3 * s + j]));
            row.push(fmt6(predicted.0[3 * s + j]));
        }
        row
    });
    out.text(
        "gamma_fit_counts.csv",
        &csv_text(
            &["set_label", "C1", "C1_fit", "C2", "C2_fit", "C12", "C12_fit"],
            rows,
        ),
    )?;
    if !r.profile.is_empty() {
        let rows = r.profile.iter().map(|p| vec![fmt6(p.gamma), fmt6(p.chi2)]);
        out.text("gamma_profile.csv", &csv_text(&["gamma", "chi2"], rows))?;
    }
    Ok(())
}

pub fn convergence(r: &GammaFitReport) -> CliResult<()> {
    if r.fit.converged {
        Ok(())
    } else {
        Err(CliError::NonConvergence(format!(
            "γ fit stopped at χ² = {} without meeting its tolerance",
            r.fit.chi2
        )))
    }
}
