use crate::config::Config;
use crate::error::{input, output, CliResult};
use crate::output::{csv_text, fmt6, Outputs};
use macroreal_core::analysis::{
    analyze_counts, analyze_histograms, bootstrap_sdm, channel_histograms, select_windows,
    CoincidenceHistogram, CountsDataset, Provenance, ResultReport,
};
use macroreal_core::fixtures::REPRESENTATIVE_COUNTS_CSV;
use macroreal_core::protocol::{Sign, SubRun, PROTOCOL};
use macroreal_core::quantum::SetupParams;
use macroreal_core::sim::{read_manifest, read_streams_csv, SourceConfig, DATASET_MANIFEST};
use rayon::prelude::*;
use std::fs;
use std::path::{Path, PathBuf};

/// Iteration counts of the SD/M-vs-I curve.
pub const SDM_IS: [usize; 4] = [10, 50, 150, 300];

/// What `analyze` was pointed at.
#[derive(Debug)]
pub enum Input {
    /// The bundled representative counts.
    Bundled,
    /// A `sub_run,iteration,plus,minus` CSV.
    Counts(PathBuf),
    /// A simulated dataset with its manifest.
    Dataset(PathBuf),
    /// `sub_run_<id>/` directories of timestamp CSVs without a manifest.
    SubRunDirs(PathBuf, Vec<(SubRun, PathBuf)>),
}

impl Input {
    pub fn resolve(path: Option<&Path>, bundled: bool) -> CliResult<Input> {
        let p = match (path, bundled) {
            (None, true) => return Ok(Input::Bundled),
            (Some(_), true) => return Err(input("give either an input path or --bundled, not both")),
            (None, false) => return Err(input("an input path or --bundled is required")),
            (Some(p), false) => p,
        };
        if p.is_file() {
            return Ok(Input::Counts(p.to_path_buf()));
        }
        if !p.is_dir() {
            return Err(input(format!("{} does not exist", p.display())));
        }
        if p.join(DATASET_MANIFEST).is_file() {
            return Ok(Input::Dataset(p.to_path_buf()));
        }
        let files = scan_sub_run_dirs(p)?;
        if files.is_empty() {
            return Err(input(format!(
                "{} holds no {DATASET_MANIFEST} and no sub_run_<id>/ timestamp files",
                p.display()
            )));
        }
        Ok(Input::SubRunDirs(p.to_path_buf(), files))
    }

    pub fn name(&self) -> String {
        match self {
            Input::Bundled => "bundled representative counts".into(),
            Input::Counts(p) | Input::Dataset(p) | Input::SubRunDirs(p, _) => p.display().to_string(),
        }
    }
}

fn scan_sub_run_dirs(dir: &Path) -> CliResult<Vec<(SubRun, PathBuf)>> {
    let mut out = Vec::new();
    for s in PROTOCOL {
        let sub = dir.join(format!("sub_run_{}", s.id()));
        if !sub.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&sub)
            .map_err(|e| input(format!("{}: {e}", sub.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        out.extend(files.into_iter().map(|f| (s, f)));
    }
    Ok(out)
}

pub struct Analysis {
    pub report: ResultReport,
    pub counts: CountsDataset,
    /// Histograms summed over iterations, per sub-run, as (PLUS, MINUS).
    pub aggregated: Vec<(SubRun, [CoincidenceHistogram; 2])>,
}

type Histograms = Vec<(SubRun, Vec<[CoincidenceHistogram; 2]>)>;

/// Histograms every file as it is read, so only histograms stay in memory.
fn histograms_of(files: &[(SubRun, PathBuf)], bin_width: i64, range: (i64, i64)) -> CliResult<Histograms> {
    let per_file = files
        .par_iter()
        .map(|(s, path)| {
            let f = fs::File::open(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
            let streams =
                read_streams_csv(f).map_err(|e| input(format!("{}: {e}", path.display())))?;
            Ok((*s, channel_histograms(&streams, bin_width, range)?))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut grouped: Histograms = PROTOCOL.iter().map(|s| (*s, Vec::new())).collect();
    for (s, h) in per_file {
        let slot = PROTOCOL.iter().position(|p| *p == s).expect("protocol sub-run");
        grouped[slot].1.push(h);
    }
    Ok(grouped)
}

fn aggregate(hists: &Histograms) -> Vec<(SubRun, [CoincidenceHistogram; 2])> {
    hists
        .iter()
        .filter_map(|(s, iters)| {
            let mut agg = iters.first()?.clone();
            for h in &iters[1..] {
                agg[0].accumulate(&h[0]);
                agg[1].accumulate(&h[1]);
            }
            Some((*s, agg))
        })
        .collect()
}

fn from_streams(
    files: &[(SubRun, PathBuf)],
    cfg: &Config,
    source: Option<&SourceConfig>,
    setup: Option<&SetupParams>,
    name: &str,
) -> CliResult<Analysis> {
    let a = &cfg.analysis;
    let center = match (a.center, source) {
        (None, None) => {
            return Err(input(
                "analysis.center is required for timestamp files without a dataset manifest",
            ))
        }
        _ => a.center_for(source),
    };
    let hists = histograms_of(files, a.bin_width, a.range(center))?;
    let (report, counts) = analyze_histograms(&hists, a, source, setup, name)?;
    Ok(Analysis {
        report,
        counts,
        aggregated: aggregate(&hists),
    })
}

pub fn analyze(inp: &Input, cfg: &Config) -> CliResult<Analysis> {
    let name = inp.name();
    match inp {
        Input::Bundled | Input::Counts(_) => {
            let counts = match inp {
                Input::Counts(p) => {
                    let f = fs::File::open(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
                    CountsDataset::from_csv(f).map_err(|e| input(format!("{}: {e}", p.display())))?
                }
                _ => CountsDataset::from_csv(REPRESENTATIVE_COUNTS_CSV.as_bytes())?,
            };
            let provenance = Provenance {
                input: name,
                iterations: counts.iteration_counts(),
                analysis: cfg.analysis.clone(),
                source: None,
                setup: None,
            };
            let report = analyze_counts(&counts, &cfg.analysis, Vec::new(), provenance)?;
            Ok(Analysis {
                report,
                counts,
                aggregated: Vec::new(),
            })
        }
        Input::Dataset(dir) => {
            let m = read_manifest(dir)?;
            let mut files: Vec<(SubRun, usize, PathBuf)> = m
                .files
                .iter()
                .map(|f| {
                    let s = SubRun::parse(&f.sub_run)
                        .ok_or_else(|| input(format!("unknown sub-run `{}` in manifest", f.sub_run)))?;
                    Ok((s, f.iteration, dir.join(&f.path)))
                })
                .collect::<CliResult<_>>()?;
            files.sort_by_key(|(s, k, _)| (PROTOCOL.iter().position(|p| p == s), *k));
            let files: Vec<(SubRun, PathBuf)> = files.into_iter().map(|(s, _, p)| (s, p)).collect();
            from_streams(&files, cfg, Some(&m.source), Some(&m.setup), &name)
        }
        Input::SubRunDirs(_, files) => from_streams(files, cfg, None, None, &name),
    }
}

fn histogram_csv(h: &CoincidenceHistogram, max_peaks: usize) -> String {
    let sel = select_windows(h, max_peaks).ok();
    let rows = h.counts.iter().enumerate().map(|(k, c)| {
        let start = h.bin_start(k);
        let (in_window, flat) = match &sel {
            Some(s) => (
                s.windows.iter().any(|w| w.start <= start && start < w.end),
                s.flatline_bins[k],
            ),
            None => (false, true),
        };
        vec![
            start.to_string(),
            c.to_string(),
            (in_window as u8).to_string(),
            (flat as u8).to_string(),
        ]
    });
    csv_text(&["bin_start_ps", "counts", "in_window", "flatline"], rows)
}

fn sdm_rows(counts: &CountsDataset, k: usize, seed: u64) -> CliResult<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    for (ci, (s, iters)) in counts.sub_runs.iter().enumerate() {
        if iters.len() < 2 {
            continue;
        }
        for (d, detector) in Sign::BOTH.into_iter().enumerate() {
            let samples: Vec<f64> = iters.iter().map(|c| if d == 0 { c.0 } else { c.1 }).collect();
            for &i in SDM_IS.iter().filter(|&&i| i <= samples.len()) {
                let r = bootstrap_sdm(&samples, i, k, seed.wrapping_add((2 * ci + d) as u64))?;
                rows.push(vec![
                    s.id(),
                    detector.symbol().to_string(),
                    i.to_string(),
                    k.to_string(),
                    fmt6(r.mean),
                    fmt6(r.sd),
                    r.sd_over_mean.map(fmt6).unwrap_or_default(),
                ]);
            }
        }
    }
    Ok(rows)
}

pub fn write(out: &mut Outputs, a: &Analysis, cfg: &Config) -> CliResult<()> {
    out.json("result.json", &a.report)?;
    let mut buf = Vec::new();
    a.counts.write_csv(&mut buf).map_err(output)?;
    out.text("counts.csv", &String::from_utf8(buf).map_err(output)?)?;
    for (s, [plus, minus]) in &a.aggregated {
        for (tag, h) in [("plus", plus), ("minus", minus)] {
            let rel = format!("histograms/sub_run_{}_{tag}.csv", s.id());
            out.text(&rel, &histogram_csv(h, cfg.analysis.max_peaks))?;
        }
    }
    let rows = sdm_rows(&a.counts, cfg.analysis.bootstrap_k, cfg.analysis.seed)?;
    if !rows.is_empty() {
        out.text(
            "sdm_vs_i.csv",
            &csv_text(
                &["sub_run", "detector", "I", "K", "mean", "sd", "sd_over_mean"],
                rows,
            ),
        )?;
    }
    Ok(())
}
