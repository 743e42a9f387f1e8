//! Output directory handling, canonical JSON and the run manifest.

use crate::config::Config;
use crate::error::{input, output, CliResult};
use serde::Serialize;
use serde_json::Value;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const MANIFEST: &str = "manifest.json";
pub const TIMING: &str = "timing.json";

/// Rounds to 6 significant digits.
pub fn round6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Float cell for CSV output.
pub fn fmt6(x: f64) -> String {
    round6(x).to_string()
}

fn canonical(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round6(x)))
            .map_or(Value::Null, Value::Number),
        Value::Array(a) => Value::Array(a.into_iter().map(canonical).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, canonical(v))).collect()),
        v => v,
    }
}

/// Pretty JSON with sorted keys and floats at 6 significant digits.
pub fn to_canonical_json<T: Serialize>(value: &T) -> CliResult<String> {
    let v = serde_json::to_value(value).map_err(output)?;
    let mut s = serde_json::to_string_pretty(&canonical(v)).map_err(output)?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    seed: Option<u64>,
    config: &'a Config,
    versions: BTreeMap<&'static str, &'static str>,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct Timing<'a> {
    command: &'a str,
    wall_clock_s: f64,
}

/// Files written by one command, recorded for the manifest.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    start: Instant,
}

impl Outputs {
    /// Creates `dir`, refusing a non-empty one unless `force` is set.
    pub fn create(dir: &Path, force: bool) -> CliResult<Self> {
        if dir.exists() {
            if !dir.is_dir() {
                return Err(input(format!("{} exists and is not a directory", dir.display())));
            }
            let non_empty = fs::read_dir(dir).map_err(output)?.next().is_some();
            if non_empty && !force {
                return Err(input(format!(
                    "output directory {} is not empty; pass --force to write into it",
                    dir.display()
                )));
            }
        }
        fs::create_dir_all(dir).map_err(output)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            start: Instant::now(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Notes a file written by other code.
    pub fn record(&mut self, rel: impl Into<String>) {
        self.files.push(rel.into());
    }

    pub fn text(&mut self, rel: &str, contents: &str) -> CliResult<()> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(output)?;
        }
        fs::write(&p, contents).map_err(output)?;
        self.record(rel);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<()> {
        self.text(rel, &to_canonical_json(value)?)
    }

    /// Writes the timing sidecar and then the manifest. Wall-clock time stays
    /// out of the manifest so reruns reproduce it byte for byte.
    pub fn finish(mut self, command: &str, seed: Option<u64>, config: &Config) -> CliResult<()> {
        let timing = Timing {
            command,
            wall_clock_s: self.start.elapsed().as_secs_f64(),
        };
        self.json(TIMING, &timing)?;
        let mut outputs = std::mem::take(&mut self.files);
        outputs.sort();
        outputs.dedup();
        let manifest = RunManifest {
            command,
            seed,
            config,
            versions: BTreeMap::from([
                ("macroreal-cli", env!("CARGO_PKG_VERSION")),
                ("macroreal-core", macroreal_core::VERSION),
            ]),
            outputs,
        };
        fs::write(self.path(MANIFEST), to_canonical_json(&manifest)?).map_err(output)
    }
}

/// CSV text with a header line; cells are quoted where needed.
pub fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}
