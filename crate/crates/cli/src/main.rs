//! `macroreal`: predictions, macrorealist bounds, γ fits, simulation,
//! analysis and reports for the interferometric Leggett–Garg test.

mod analyze;
mod config;
mod error;
mod gamma_fit;
mod hv_bound;
mod output;
mod predict;
mod report;
mod simulate;

use clap::{Parser, Subcommand, ValueEnum};
use config::Config;
use error::{input, CliResult};
use macroreal_core::analysis::MeasuredSummary;
use macroreal_core::hv::{Inequality, SearchOptions};
use output::Outputs;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "macroreal", version, about)]
struct Cli {
    /// JSON config with optional sections setup, tolerances, source,
    /// iterations, analysis and fit.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the seeds of every config section.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "macroreal-out")]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads; falls back to MACROREAL_THREADS, then all cores.
    #[arg(long, global = true, env = "MACROREAL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Lgi,
    Wlgi,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Quantum point values, tolerance ranges and probability tables.
    Predict,
    /// Macrorealist bounds under detector inefficiency, with witnesses.
    HvBound {
        /// Comma-separated detector efficiencies.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        eta: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value = "both")]
        inequality: Which,
        /// Random starts of the search per η.
        #[arg(long)]
        starts: Option<usize>,
    },
    /// Fits the two-photon fraction γ to singles and coincidence counts.
    GammaFit {
        /// `set_label,C1,C2,C12` CSV; defaults to the bundled table.
        #[arg(long)]
        counts: Option<PathBuf>,
        /// Pins the PLUS detector efficiency.
        #[arg(long)]
        eta1: Option<f64>,
        /// Pins the MINUS detector efficiency.
        #[arg(long)]
        eta2: Option<f64>,
        /// Comma-separated γ values for a χ² profile.
        #[arg(long, value_delimiter = ',')]
        profile: Vec<f64>,
    },
    /// Simulates every sub-run and writes timestamp files.
    Simulate,
    /// Coincidence analysis of a dataset directory or counts CSV.
    Analyze {
        /// Dataset directory, `sub_run_<id>/` tree or counts CSV.
        input: Option<PathBuf>,
        /// Analyze the bundled representative counts instead.
        #[arg(long)]
        bundled: bool,
    },
    /// Side-by-side table of predictions and measurements.
    Report {
        #[arg(long)]
        prediction: PathBuf,
        /// `result.json` from `analyze`, or any JSON with the five estimates.
        #[arg(long)]
        analysis: PathBuf,
        /// Two-photon fraction raising the macrorealist bounds.
        #[arg(long)]
        gamma: Option<f64>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(error::output)?;
    }
    let cfg = Config::load(cli.config.as_deref())?.with_seed(cli.seed);
    match cli.command {
        Command::Predict => {
            let p = predict::predict(&cfg)?;
            let mut out = Outputs::create(&cli.out, cli.force)?;
            predict::write(&mut out, &p)?;
            println!(
                "LGI {:.4} in [{:.4}, {:.4}], WLGI {:.4} in [{:.4}, {:.4}]",
                p.point.lgi, p.range.lgi.lo, p.range.lgi.hi, p.point.wlgi, p.range.wlgi.lo, p.range.wlgi.hi
            );
            out.finish("predict", None, &cfg)
        }
        Command::HvBound {
            eta,
            inequality,
            starts,
        } => {
            let etas = eta.unwrap_or_else(|| hv_bound::DEFAULT_ETAS.to_vec());
            hv_bound::check_etas(&etas)?;
            let ineqs = match inequality {
                Which::Lgi => vec![Inequality::Lgi],
                Which::Wlgi => vec![Inequality::Wlgi],
                Which::Both => vec![Inequality::Lgi, Inequality::Wlgi],
            };
            let mut opts = SearchOptions::default();
            if let Some(s) = starts {
                opts.random_starts = s;
            }
            if let Some(s) = cli.seed {
                opts.seed = s;
            }
            let mut out = Outputs::create(&cli.out, cli.force)?;
            let r = hv_bound::hv_bound(&etas, &ineqs, &opts)?;
            hv_bound::write(&mut out, &r)?;
            for c in &r.detectors {
                println!("{} η={:.4}: bound {:.4} (closed form {:.4})", c.inequality, c.eta, c.bound, c.formula_value);
            }
            out.finish("hv-bound", Some(opts.seed), &cfg)
        }
        Command::GammaFit {
            counts,
            eta1,
            eta2,
            profile,
        } => {
            let mut cfg = cfg;
            cfg.fit.eta1 = eta1.or(cfg.fit.eta1);
            cfg.fit.eta2 = eta2.or(cfg.fit.eta2);
            let (observed, name) = gamma_fit::read_counts(counts.as_deref())?;
            let mut out = Outputs::create(&cli.out, cli.force)?;
            let r = gamma_fit::gamma_fit(&observed, name, &cfg.fit, &profile)?;
            gamma_fit::write(&mut out, &r, &observed)?;
            println!("γ = {:.5}, χ² = {:.3}", r.fit.params.gamma, r.fit.chi2);
            out.finish("gamma-fit", Some(cfg.fit.seed), &cfg)?;
            gamma_fit::convergence(&r)
        }
        Command::Simulate => {
            let mut out = Outputs::create(&cli.out, cli.force)?;
            let m = simulate::simulate(&mut out, &cfg)?;
            println!("{} iteration files in {}", m.files.len(), cli.out.display());
            out.finish("simulate", Some(cfg.source.seed), &cfg)
        }
        Command::Analyze { input, bundled } => {
            let inp = analyze::Input::resolve(input.as_deref(), bundled)?;
            let a = analyze::analyze(&inp, &cfg)?;
            let mut out = Outputs::create(&cli.out, cli.force)?;
            analyze::write(&mut out, &a, &cfg)?;
            let r = &a.report;
            let d = |x: Option<f64>| x.map_or("n/a".into(), |d| format!("{d:.4}"));
            println!("LGI {:.4} ± {}, WLGI {:.4} ± {}", r.lgi.mean, d(r.lgi.delta), r.wlgi.mean, d(r.wlgi.delta));
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            out.finish("analyze", Some(cfg.analysis.seed), &cfg)
        }
        Command::Report {
            prediction,
            analysis,
            gamma,
        } => {
            let pred: predict::Prediction = report::read_json(&prediction, "prediction")?;
            let meas: MeasuredSummary = report::read_json(&analysis, "analysis")?;
            let rows = report::rows(&pred, &meas, gamma)?;
            let mut out = Outputs::create(&cli.out, cli.force)?;
            report::write(&mut out, &rows)?;
            print!("{}", report::text(&rows));
            out.finish("report", None, &cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("macroreal: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
