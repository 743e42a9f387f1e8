//! Monte Carlo timestamp generator for the heralding detector and the two
//! output detectors, sub-run by sub-run.

use crate::error::{invalid, Error, Result};
use crate::protocol::{BlockerConfig, Run, Sign, SubRun, PROTOCOL};
use crate::quantum::{arm_probs, SetupParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const PS_PER_S: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    /// Pairs per second.
    pub pair_rate: f64,
    /// Seconds per iteration.
    pub duration: f64,
    pub gamma: f64,
    pub eta_herald: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// Dark counts per second on the herald, PLUS and MINUS channels.
    pub dark_rate_h: f64,
    pub dark_rate_p: f64,
    pub dark_rate_m: f64,
    /// Picoseconds.
    pub jitter_sigma: f64,
    /// Herald → signal delay, picoseconds.
    pub base_delay: f64,
    /// Extra delay of the −1 arm at t₁, picoseconds.
    pub arm_delay_tau: f64,
    pub seed: u64,
    /// Per-iteration visibility drawn uniformly from this interval, standing
    /// in for interferometer drift. `None` keeps the setup's visibility.
    pub visibility_jitter: Option<[f64; 2]>,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            pair_rate: 5e4,
            duration: 1.0,
            gamma: 0.0023,
            eta_herald: 0.5,
            eta1: 0.56,
            eta2: 0.64,
            dark_rate_h: 200.0,
            dark_rate_p: 200.0,
            dark_rate_m: 200.0,
            jitter_sigma: 400.0,
            base_delay: 1e5,
            arm_delay_tau: 2e4,
            seed: 0,
            visibility_jitter: None,
        }
    }
}

impl SourceConfig {
    /// Multiplies every rate by `factor`, which keeps all count ratios.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.pair_rate *= factor;
        self.dark_rate_h *= factor;
        self.dark_rate_p *= factor;
        self.dark_rate_m *= factor;
        self
    }

    /// Noise-free source: unit efficiencies, no dark counts, no two-photon events.
    pub fn ideal(pair_rate: f64, duration: f64, seed: u64) -> Self {
        SourceConfig {
            pair_rate,
            duration,
            gamma: 0.0,
            eta_herald: 1.0,
            eta1: 1.0,
            eta2: 1.0,
            dark_rate_h: 0.0,
            dark_rate_p: 0.0,
            dark_rate_m: 0.0,
            seed,
            ..SourceConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("pair_rate", self.pair_rate),
            ("dark_rate_h", self.dark_rate_h),
            ("dark_rate_p", self.dark_rate_p),
            ("dark_rate_m", self.dark_rate_m),
            ("jitter_sigma", self.jitter_sigma),
            ("base_delay", self.base_delay),
            ("arm_delay_tau", self.arm_delay_tau),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("{v} must be finite and non-negative")));
            }
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration", format!("{} must be positive", self.duration)));
        }
        for (name, v) in [
            ("eta_herald", self.eta_herald),
            ("eta1", self.eta1),
            ("eta2", self.eta2),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(name, format!("{v} not in (0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid("gamma", format!("{} not in [0, 1)", self.gamma)));
        }
        if let Some([lo, hi]) = self.visibility_jitter {
            if !(-1.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(invalid(
                    "visibility_jitter",
                    format!("[{lo}, {hi}] is not an interval inside [-1, 1]"),
                ));
            }
        }
        Ok(())
    }

    fn duration_ps(&self) -> u64 {
        (self.duration * PS_PER_S).round() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "H")]
    Herald,
    #[serde(rename = "P")]
    Plus,
    #[serde(rename = "M")]
    Minus,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Herald, Channel::Plus, Channel::Minus];

    pub fn code(self) -> &'static str {
        match self {
            Channel::Herald => "H",
            Channel::Plus => "P",
            Channel::Minus => "M",
        }
    }

    pub fn parse(code: &str) -> Option<Channel> {
        Channel::ALL.into_iter().find(|c| c.code() == code)
    }

    pub fn detector(out: Sign) -> Channel {
        match out {
            Sign::Plus => Channel::Plus,
            Sign::Minus => Channel::Minus,
        }
    }
}

/// Sorted, duplicate-free picosecond timestamps of one channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestampStream {
    pub channel: Channel,
    pub times: Vec<u64>,
}

impl TimestampStream {
    /// Sorts and merges equal timestamps (a detector clicks once per picosecond).
    pub fn from_unsorted(channel: Channel, mut times: Vec<u64>) -> Self {
        times.sort_unstable();
        times.dedup();
        TimestampStream { channel, times }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_strictly_sorted(&self) -> bool {
        self.times.windows(2).all(|w| w[0] < w[1])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubRunStreams {
    pub herald: TimestampStream,
    pub plus: TimestampStream,
    pub minus: TimestampStream,
}

impl SubRunStreams {
    pub fn detector(&self, out: Sign) -> &TimestampStream {
        match out {
            Sign::Plus => &self.plus,
            Sign::Minus => &self.minus,
        }
    }
}

fn poisson_count(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

fn add_dark(rng: &mut ChaCha8Rng, out: &mut Vec<u64>, rate: f64, duration_ps: u64, secs: f64) {
    for _ in 0..poisson_count(rng, rate * secs) {
        out.push(rng.random_range(0..duration_ps));
    }
}

/// One iteration of one blocker configuration, driven by `src.seed`.
pub fn generate_sub_run(
    src: &SourceConfig,
    setup: &SetupParams,
    blockers: BlockerConfig,
) -> Result<SubRunStreams> {
    src.validate()?;
    setup.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(src.seed);
    Ok(generate_with(&mut rng, src, setup, blockers))
}

fn generate_with(
    rng: &mut ChaCha8Rng,
    src: &SourceConfig,
    setup: &SetupParams,
    blockers: BlockerConfig,
) -> SubRunStreams {
    let duration_ps = src.duration_ps();
    let jitter = Normal::new(0.0, src.jitter_sigma).expect("validated sigma");

    // Click probabilities per t₁ arm; renormalized when the non-unitary
    // splitter model pushes the total slightly above one.
    let click = |arm: Sign| {
        let (p, m) = arm_probs(setup, arm, blockers.block_t2);
        let s = (p + m).max(1.0);
        (p / s * src.eta1, m / s * src.eta2)
    };
    let clicks = [click(Sign::Plus), click(Sign::Minus)];

    let (mut h, mut pl, mut mi) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..poisson_count(rng, src.pair_rate * src.duration) {
        let t0 = rng.random_range(0..duration_ps);
        if rng.random::<f64>() < src.eta_herald {
            h.push(t0);
        }
        let photons = if rng.random::<f64>() < src.gamma { 2 } else { 1 };
        for _ in 0..photons {
            let arm = if rng.random::<f64>() < setup.alpha_sq {
                Sign::Plus
            } else {
                Sign::Minus
            };
            if blockers.block_t1.blocks(arm) {
                continue;
            }
            let (cp, cm) = clicks[(arm == Sign::Minus) as usize];
            let u = rng.random::<f64>();
            let target = if u < cp {
                &mut pl
            } else if u < cp + cm {
                &mut mi
            } else {
                continue;
            };
            let delay = src.base_delay
                + if arm == Sign::Minus { src.arm_delay_tau } else { 0.0 }
                + jitter.sample(rng);
            let t = t0 as f64 + delay.round();
            if t >= 0.0 && t < duration_ps as f64 {
                target.push(t as u64);
            }
        }
    }
    add_dark(rng, &mut h, src.dark_rate_h, duration_ps, src.duration);
    add_dark(rng, &mut pl, src.dark_rate_p, duration_ps, src.duration);
    add_dark(rng, &mut mi, src.dark_rate_m, duration_ps, src.duration);
    SubRunStreams {
        herald: TimestampStream::from_unsorted(Channel::Herald, h),
        plus: TimestampStream::from_unsorted(Channel::Plus, pl),
        minus: TimestampStream::from_unsorted(Channel::Minus, mi),
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one iteration: the master seed is folded with the run, sub-run
/// and iteration indices through successive splitmix64 steps.
pub fn derive_seed(master: u64, sub_run: &SubRun, iteration: usize) -> u64 {
    let mut s = splitmix64(master);
    for k in [sub_run.run.number() as u64, sub_run.index as u64, iteration as u64] {
        s = splitmix64(s ^ k);
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationCounts {
    pub interference: usize,
    pub non_interference: usize,
}

impl Default for IterationCounts {
    fn default() -> Self {
        IterationCounts {
            interference: 300,
            non_interference: 150,
        }
    }
}

impl IterationCounts {
    pub fn for_run(&self, run: Run) -> usize {
        if run.is_interference() {
            self.interference
        } else {
            self.non_interference
        }
    }
}

/// What an iteration was generated from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationInfo {
    pub sub_run: SubRun,
    pub iteration: usize,
    pub seed: u64,
    pub visibility: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub info: IterationInfo,
    pub streams: SubRunStreams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDataset {
    pub source: SourceConfig,
    pub setup: SetupParams,
    pub iterations: IterationCounts,
    /// Protocol order, iterations in index order.
    pub sub_runs: Vec<(SubRun, Vec<Iteration>)>,
}

fn iteration_plan(src: &SourceConfig, setup: &SetupParams, counts: &IterationCounts) -> Vec<IterationInfo> {
    PROTOCOL
        .iter()
        .flat_map(|s| {
            (0..counts.for_run(s.run)).map(move |k| {
                let seed = derive_seed(src.seed, s, k);
                let visibility = match src.visibility_jitter {
                    Some([lo, hi]) if hi > lo => {
                        ChaCha8Rng::seed_from_u64(splitmix64(seed)).random_range(lo..=hi)
                    }
                    Some([lo, _]) => lo,
                    None => setup.visibility,
                };
                IterationInfo {
                    sub_run: *s,
                    iteration: k,
                    seed,
                    visibility,
                }
            })
        })
        .collect()
}

/// Generates every iteration of every sub-run and hands each to `f`, in
/// parallel, without keeping the streams. Results come back grouped by
/// sub-run in protocol order.
pub fn run_protocol_map<T, F>(
    src: &SourceConfig,
    setup: &SetupParams,
    counts: &IterationCounts,
    f: F,
) -> Result<Vec<(SubRun, Vec<T>)>>
where
    T: Send,
    F: Fn(&IterationInfo, SubRunStreams) -> T + Sync,
{
    src.validate()?;
    setup.validate()?;
    let plan = iteration_plan(src, setup, counts);
    let mut results: Vec<(IterationInfo, T)> = plan
        .into_par_iter()
        .map(|info| {
            let local = SetupParams {
                visibility: info.visibility,
                ..*setup
            };
            let mut rng = ChaCha8Rng::seed_from_u64(info.seed);
            let streams = generate_with(&mut rng, src, &local, info.sub_run.blockers);
            let out = f(&info, streams);
            (info, out)
        })
        .collect();
    let mut grouped: Vec<(SubRun, Vec<T>)> = PROTOCOL.iter().map(|s| (*s, Vec::new())).collect();
    for (info, out) in results.drain(..) {
        let slot = PROTOCOL.iter().position(|s| *s == info.sub_run).expect("protocol sub-run");
        grouped[slot].1.push(out);
    }
    Ok(grouped)
}

/// Full dataset with every stream kept in memory.
pub fn run_protocol(
    src: &SourceConfig,
    setup: &SetupParams,
    counts: &IterationCounts,
) -> Result<ExperimentDataset> {
    let sub_runs = run_protocol_map(src, setup, counts, |info, streams| Iteration {
        info: *info,
        streams,
    })?;
    Ok(ExperimentDataset {
        source: src.clone(),
        setup: *setup,
        iterations: *counts,
        sub_runs,
    })
}

/// Writes `channel,time_ps` rows, merged in time order.
pub fn write_streams_csv<W: Write>(streams: &SubRunStreams, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "channel,time_ps")?;
    let all = [&streams.herald, &streams.plus, &streams.minus];
    let mut idx = [0usize; 3];
    loop {
        let next = (0..3)
            .filter(|&c| idx[c] < all[c].times.len())
            .min_by_key(|&c| (all[c].times[idx[c]], c));
        let Some(c) = next else { break };
        writeln!(w, "{},{}", all[c].channel.code(), all[c].times[idx[c]])?;
        idx[c] += 1;
    }
    w.flush()?;
    Ok(())
}

/// Reads `channel,time_ps` rows in any order, e.g. a time-tagger export.
pub fn read_streams_csv<R: Read>(input: R) -> Result<SubRunStreams> {
    let mut times: [Vec<u64>; 3] = Default::default();
    let mut lines = BufReader::new(input).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Malformed("empty timestamp file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["channel", "time_ps"] {
        return Err(Error::Malformed(format!(
            "expected header `channel,time_ps`, found `{header}`"
        )));
    }
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (c, t) = line
            .split_once(',')
            .ok_or_else(|| Error::Malformed(format!("line {}: expected two fields", n + 2)))?;
        let channel = Channel::parse(c.trim())
            .ok_or_else(|| Error::Malformed(format!("line {}: unknown channel `{c}`", n + 2)))?;
        let t: u64 = t
            .trim()
            .parse()
            .map_err(|_| Error::Malformed(format!("line {}: bad time `{t}`", n + 2)))?;
        times[channel as usize].push(t);
    }
    let [h, p, m] = times;
    Ok(SubRunStreams {
        herald: TimestampStream::from_unsorted(Channel::Herald, h),
        plus: TimestampStream::from_unsorted(Channel::Plus, p),
        minus: TimestampStream::from_unsorted(Channel::Minus, m),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub sub_run: String,
    pub iteration: usize,
    pub seed: u64,
    pub visibility: f64,
    /// Relative to the dataset directory.
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: SourceConfig,
    pub setup: SetupParams,
    pub iterations: IterationCounts,
    pub files: Vec<DatasetFile>,
}

pub const DATASET_MANIFEST: &str = "dataset.json";

pub fn iteration_path(sub_run: &SubRun, iteration: usize) -> PathBuf {
    PathBuf::from(format!("sub_run_{}", sub_run.id())).join(format!("iter_{iteration:04}.csv"))
}

/// Writes one CSV per iteration under a directory per sub-run, then the
/// dataset manifest.
pub fn write_dataset(dir: &Path, data: &ExperimentDataset) -> Result<DatasetManifest> {
    let mut files = Vec::new();
    for (sub_run, iters) in &data.sub_runs {
        fs::create_dir_all(dir.join(format!("sub_run_{}", sub_run.id())))?;
        for it in iters {
            let rel = iteration_path(sub_run, it.info.iteration);
            write_streams_csv(&it.streams, fs::File::create(dir.join(&rel))?)?;
            files.push(DatasetFile {
                sub_run: sub_run.id(),
                iteration: it.info.iteration,
                seed: it.info.seed,
                visibility: it.info.visibility,
                path: rel.to_string_lossy().replace('\\', "/"),
            });
        }
    }
    let manifest = DatasetManifest {
        source: data.source.clone(),
        setup: data.setup,
        iterations: data.iterations,
        files,
    };
    let mut w = BufWriter::new(fs::File::create(dir.join(DATASET_MANIFEST))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.flush()?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(DATASET_MANIFEST);
    if !path.is_file() {
        return Err(Error::Missing(format!("{}", path.display())));
    }
    Ok(serde_json::from_reader(BufReader::new(fs::File::open(path)?))?)
}

/// Loads every iteration listed in the manifest of `dir`.
pub fn read_dataset(dir: &Path) -> Result<ExperimentDataset> {
    let manifest = read_manifest(dir)?;
    let mut sub_runs: Vec<(SubRun, Vec<Iteration>)> =
        PROTOCOL.iter().map(|s| (*s, Vec::new())).collect();
    for f in &manifest.files {
        let sub_run = SubRun::parse(&f.sub_run)
            .ok_or_else(|| Error::Malformed(format!("unknown sub-run `{}`", f.sub_run)))?;
        let streams = read_streams_csv(fs::File::open(dir.join(&f.path))?)?;
        let slot = PROTOCOL.iter().position(|s| *s == sub_run).expect("protocol sub-run");
        sub_runs[slot].1.push(Iteration {
            info: IterationInfo {
                sub_run,
                iteration: f.iteration,
                seed: f.seed,
                visibility: f.visibility,
            },
            streams,
        });
    }
    for (_, iters) in sub_runs.iter_mut() {
        iters.sort_by_key(|i| i.info.iteration);
    }
    Ok(ExperimentDataset {
        source: manifest.source,
        setup: manifest.setup,
        iterations: manifest.iterations,
        sub_runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Blocker;

    #[test]
    fn seeds_differ_per_iteration() {
        let s = PROTOCOL[0];
        assert_ne!(derive_seed(1, &s, 0), derive_seed(1, &s, 1));
        assert_ne!(derive_seed(1, &s, 0), derive_seed(1, &PROTOCOL[1], 0));
        assert_ne!(derive_seed(1, &s, 0), derive_seed(2, &s, 0));
        assert_eq!(derive_seed(7, &s, 3), derive_seed(7, &s, 3));
    }

    #[test]
    fn streams_sorted_and_bounded() {
        let src = SourceConfig {
            seed: 3,
            duration: 0.01,
            ..SourceConfig::default()
        };
        let s = generate_sub_run(&src, &SetupParams::nominal(), BlockerConfig::OPEN).unwrap();
        for st in [&s.herald, &s.plus, &s.minus] {
            assert!(st.is_strictly_sorted());
            assert!(st.times.iter().all(|&t| t < src.duration_ps()));
            assert!(!st.is_empty());
        }
    }

    #[test]
    fn blocked_populated_arm_leaves_only_darks() {
        let src = SourceConfig {
            dark_rate_p: 0.0,
            dark_rate_m: 0.0,
            ..SourceConfig::ideal(1e5, 0.01, 5)
        };
        let setup = SetupParams {
            alpha_sq: 1.0,
            ..SetupParams::nominal()
        };
        let s = generate_sub_run(&src, &setup, BlockerConfig::new(Blocker::Plus, Blocker::None))
            .unwrap();
        assert!(s.plus.is_empty() && s.minus.is_empty());
        assert!(!s.herald.is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let src = SourceConfig {
            seed: 11,
            duration: 0.002,
            ..SourceConfig::default()
        };
        let s = generate_sub_run(&src, &SetupParams::nominal(), BlockerConfig::OPEN).unwrap();
        let mut buf = Vec::new();
        write_streams_csv(&s, &mut buf).unwrap();
        assert_eq!(read_streams_csv(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn csv_rejects_bad_rows() {
        assert!(read_streams_csv("channel,time_ps\nX,5\n".as_bytes()).is_err());
        assert!(read_streams_csv("channel,time_ps\nH,-5\n".as_bytes()).is_err());
        assert!(read_streams_csv("time,channel\n".as_bytes()).is_err());
        assert!(read_streams_csv("".as_bytes()).is_err());
    }

    #[test]
    fn invalid_source_rejected() {
        let bad = SourceConfig {
            eta1: 0.0,
            ..SourceConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SourceConfig {
            duration: 0.0,
            ..SourceConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
