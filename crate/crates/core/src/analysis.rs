//! Coincidence histograms, FWHM windows, accidental subtraction, joint
//! probabilities, bootstrap SD/M and cross-combination error distributions.

use crate::error::{invalid, Error, Result};
use crate::protocol::{Run, Sign, SubRun, PROTOCOL};
use crate::quantum::SetupParams;
use crate::sim::{run_protocol_map, IterationCounts, SourceConfig, SubRunStreams, TimestampStream};
use crate::tables::{assemble, evaluate, InequalityValues, ProbabilityTables};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};

/// Histogram of pairwise differences `t_b − t_a`; bin `k` covers
/// `[origin + k·bin_width, origin + (k+1)·bin_width)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bin_width: i64,
    pub origin: i64,
    pub counts: Vec<u64>,
}

impl CoincidenceHistogram {
    pub fn zeros(bin_width: i64, origin: i64, bins: usize) -> Result<Self> {
        if bin_width <= 0 {
            return Err(invalid("bin_width", format!("{bin_width} must be positive")));
        }
        if bins < 3 {
            return Err(invalid("range", format!("{bins} bins, need at least 3")));
        }
        Ok(CoincidenceHistogram {
            bin_width,
            origin,
            counts: vec![0; bins],
        })
    }

    pub fn end(&self) -> i64 {
        self.origin + self.bin_width * self.counts.len() as i64
    }

    pub fn bin_start(&self, k: usize) -> i64 {
        self.origin + self.bin_width * k as i64
    }

    /// Adds another histogram over the same bins.
    pub fn accumulate(&mut self, other: &CoincidenceHistogram) {
        debug_assert_eq!((self.bin_width, self.origin), (other.bin_width, other.origin));
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Counts every difference `t_b − t_a` in `[lo, hi)` with a two-pointer
/// sweep: the work is linear in the events plus the pairs inside the range.
pub fn histogram(
    a: &TimestampStream,
    b: &TimestampStream,
    bin_width: i64,
    range: (i64, i64),
) -> Result<CoincidenceHistogram> {
    let (lo, hi) = range;
    if hi <= lo {
        return Err(invalid("range", format!("[{lo}, {hi}) is empty")));
    }
    let bins = ((hi - lo) + bin_width.max(1) - 1) / bin_width.max(1);
    let mut h = CoincidenceHistogram::zeros(bin_width, lo, bins as usize)?;
    let hi = h.end();
    let bt = &b.times;
    let mut start = 0usize;
    for &ta in &a.times {
        let ta = ta as i64;
        while start < bt.len() && (bt[start] as i64) - ta < lo {
            start += 1;
        }
        let mut j = start;
        while j < bt.len() {
            let d = bt[j] as i64 - ta;
            if d >= hi {
                break;
            }
            h.counts[((d - lo) / bin_width) as usize] += 1;
            j += 1;
        }
    }
    Ok(h)
}

/// Number of differences `t_b − t_a` in `[lo, hi)`.
fn count_pairs(a: &TimestampStream, b: &TimestampStream, (lo, hi): (i64, i64)) -> u64 {
    let bt = &b.times;
    let mut start = 0usize;
    let mut n = 0;
    for &ta in &a.times {
        let ta = ta as i64;
        while start < bt.len() && (bt[start] as i64) - ta < lo {
            start += 1;
        }
        n += bt[start..].iter().take_while(|&&t| (t as i64) - ta < hi).count() as u64;
    }
    n
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowPolicy {
    #[serde(rename = "FWHM")]
    Fwhm,
}

/// Coincidence window `[start, end)` in picoseconds of time difference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSelection {
    pub start: i64,
    pub end: i64,
    pub bin_width: i64,
    /// Accidental counts per bin.
    pub flatline_mean: f64,
    pub policy: WindowPolicy,
}

impl WindowSelection {
    pub fn width_bins(&self) -> f64 {
        (self.end - self.start) as f64 / self.bin_width as f64
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end) as f64
    }
}

/// Peaks found in one histogram plus the bins used for the flatline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakSelection {
    pub windows: Vec<WindowSelection>,
    /// Per bin: true where the bin lies beyond ±3 peak widths of every peak.
    pub flatline_bins: Vec<bool>,
}

pub const PEAK_SIGMA: f64 = 5.0;

fn detectable(max: f64, flat: f64) -> bool {
    max >= flat + PEAK_SIGMA * (flat + 1.0).sqrt()
}

fn median(xs: &[u64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2]) as f64
    }
}

/// Contiguous bins around `peak` whose counts reach `level`.
fn half_max_interval(counts: &[u64], peak: usize, level: f64) -> (usize, usize) {
    let mut lo = peak;
    while lo > 0 && counts[lo - 1] as f64 >= level {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < counts.len() && counts[hi + 1] as f64 >= level {
        hi += 1;
    }
    (lo, hi)
}

/// Finds up to `max_peaks` detectable peaks, strongest first, each with a
/// flatline-corrected FWHM window. Runs with both t₁ arms open show one
/// peak per arm, separated by the arm delay.
pub fn select_windows(h: &CoincidenceHistogram, max_peaks: usize) -> Result<PeakSelection> {
    let c = &h.counts;
    let n = c.len();
    let flat0 = median(c);
    let mut masked = vec![false; n];
    let mut peaks = Vec::new();
    while peaks.len() < max_peaks.max(1) {
        let Some(peak) = (0..n).filter(|&k| !masked[k]).max_by_key(|&k| (c[k], std::cmp::Reverse(k)))
        else {
            break;
        };
        let max = c[peak] as f64;
        if !detectable(max, flat0) {
            if peaks.is_empty() {
                return Err(Error::NoPeak {
                    max: c[peak],
                    flatline: flat0,
                });
            }
            break;
        }
        let (lo, hi) = half_max_interval(c, peak, flat0 + 0.5 * (max - flat0));
        let reach = 3 * (hi - lo + 1);
        let from = lo.min(peak.saturating_sub(reach));
        let to = hi.max((peak + reach).min(n - 1));
        masked[from..=to].iter_mut().for_each(|m| *m = true);
        peaks.push(peak);
    }
    let flat_bins: Vec<usize> = (0..n).filter(|&k| !masked[k]).collect();
    let flat = if flat_bins.is_empty() {
        flat0
    } else {
        flat_bins.iter().map(|&k| c[k] as f64).sum::<f64>() / flat_bins.len() as f64
    };
    let mut windows: Vec<WindowSelection> = peaks
        .iter()
        .map(|&p| {
            let (lo, hi) = half_max_interval(c, p, flat + 0.5 * (c[p] as f64 - flat));
            WindowSelection {
                start: h.bin_start(lo),
                end: h.bin_start(hi + 1),
                bin_width: h.bin_width,
                flatline_mean: flat,
                policy: WindowPolicy::Fwhm,
            }
        })
        .collect();
    windows.sort_by_key(|w| w.start);
    Ok(PeakSelection {
        windows,
        flatline_bins: masked.iter().map(|m| !m).collect(),
    })
}

/// FWHM window of the strongest peak.
pub fn select_window(h: &CoincidenceHistogram) -> Result<WindowSelection> {
    Ok(select_windows(h, 1)?.windows[0])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corrected {
    pub value: f64,
    pub raw: u64,
    /// Accidental subtraction went below zero and was clamped.
    pub clamped: bool,
}

fn correct(raw: u64, background: f64) -> Corrected {
    let v = raw as f64 - background;
    Corrected {
        value: v.max(0.0),
        raw,
        clamped: v < 0.0,
    }
}

/// Pairs inside the window minus flatline × window width, clamped at zero.
pub fn corrected_coincidences(
    a: &TimestampStream,
    b: &TimestampStream,
    w: &WindowSelection,
) -> Result<Corrected> {
    if w.end <= w.start {
        return Err(invalid("window", format!("[{}, {}) is empty", w.start, w.end)));
    }
    Ok(correct(count_pairs(a, b, (w.start, w.end)), w.flatline_mean * w.width_bins()))
}

/// Corrected counts of one histogram over a selection made on the
/// aggregated histogram; the flatline is re-estimated from this histogram
/// over the selection's flatline bins.
pub fn corrected_from_histogram(h: &CoincidenceHistogram, sel: &PeakSelection) -> Corrected {
    let in_flat: Vec<u64> = h
        .counts
        .iter()
        .zip(&sel.flatline_bins)
        .filter_map(|(c, f)| f.then_some(*c))
        .collect();
    let flat = if in_flat.is_empty() {
        0.0
    } else {
        in_flat.iter().sum::<u64>() as f64 / in_flat.len() as f64
    };
    let mut raw = 0;
    let mut width = 0.0;
    for w in &sel.windows {
        let lo = ((w.start - h.origin) / h.bin_width) as usize;
        let hi = ((w.end - h.origin) / h.bin_width) as usize;
        raw += h.counts[lo..hi].iter().sum::<u64>();
        width += w.width_bins();
    }
    correct(raw, flat * width)
}

/// Selection of one sub-run detector channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelDiagnostics {
    pub sub_run: String,
    pub detector: Sign,
    pub windows: Vec<WindowSelection>,
    pub no_peak: bool,
    pub clamped_iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum CombinationMode {
    /// Exhaustive up to the limit, sampled beyond it.
    Auto,
    Exhaustive,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Picoseconds.
    pub bin_width: i64,
    /// Half-width of the histogram range around `center`, picoseconds.
    pub half_range: i64,
    /// Expected herald → signal delay. `None` takes the midpoint of the two
    /// arm delays of the generating source, or zero for external data.
    pub center: Option<i64>,
    pub max_peaks: usize,
    pub combination: CombinationMode,
    pub exhaustive_limit: u64,
    pub draws: usize,
    pub bootstrap_k: usize,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bin_width: 100,
            half_range: 50_000,
            center: None,
            max_peaks: 2,
            combination: CombinationMode::Auto,
            exhaustive_limit: 250_000,
            draws: 1_000_000,
            bootstrap_k: 100_000,
            seed: 0x5eed,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bin_width <= 0 {
            return Err(invalid("bin_width", "must be positive"));
        }
        if self.half_range <= 0 {
            return Err(invalid("half_range", "must be positive"));
        }
        if 2 * self.half_range / self.bin_width < 3 {
            return Err(invalid("half_range", "range must span at least 3 bins"));
        }
        if self.max_peaks == 0 {
            return Err(invalid("max_peaks", "must be at least 1"));
        }
        if self.draws == 0 {
            return Err(invalid("draws", "must be at least 1"));
        }
        Ok(())
    }

    pub fn range(&self, center: i64) -> (i64, i64) {
        (center - self.half_range, center + self.half_range)
    }

    pub fn center_for(&self, src: Option<&SourceConfig>) -> i64 {
        self.center.unwrap_or_else(|| {
            src.map_or(0, |s| (s.base_delay + 0.5 * s.arm_delay_tau).round() as i64)
        })
    }
}

/// Herald-vs-PLUS and herald-vs-MINUS histograms of one iteration.
pub fn channel_histograms(
    s: &SubRunStreams,
    bin_width: i64,
    range: (i64, i64),
) -> Result<[CoincidenceHistogram; 2]> {
    Ok([
        histogram(&s.herald, &s.plus, bin_width, range)?,
        histogram(&s.herald, &s.minus, bin_width, range)?,
    ])
}

/// Corrected coincidences per sub-run and iteration, as `(plus, minus)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountsDataset {
    /// Protocol order; a sub-run may have no iterations.
    pub sub_runs: Vec<(SubRun, Vec<(f64, f64)>)>,
}

impl CountsDataset {
    pub fn new(entries: impl IntoIterator<Item = (SubRun, Vec<(f64, f64)>)>) -> Self {
        let mut sub_runs: Vec<(SubRun, Vec<(f64, f64)>)> =
            PROTOCOL.iter().map(|s| (*s, Vec::new())).collect();
        for (s, v) in entries {
            if let Some(slot) = sub_runs.iter_mut().find(|(t, _)| *t == s) {
                slot.1.extend(v);
            }
        }
        CountsDataset { sub_runs }
    }

    pub fn iterations(&self, s: &SubRun) -> &[(f64, f64)] {
        self.sub_runs
            .iter()
            .find(|(t, _)| t == s)
            .map_or(&[], |(_, v)| v.as_slice())
    }

    pub fn mean(&self, s: &SubRun) -> Option<(f64, f64)> {
        let v = self.iterations(s);
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        Some((
            v.iter().map(|c| c.0).sum::<f64>() / n,
            v.iter().map(|c| c.1).sum::<f64>() / n,
        ))
    }

    pub fn iteration_counts(&self) -> BTreeMap<String, usize> {
        self.sub_runs.iter().map(|(s, v)| (s.id(), v.len())).collect()
    }

    /// Reads `sub_run,iteration,plus,minus` rows.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            sub_run: String,
            iteration: usize,
            plus: f64,
            minus: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows: BTreeMap<(String, usize), (SubRun, f64, f64)> = BTreeMap::new();
        for (n, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Malformed(format!("row {}: {e}", n + 1)))?;
            let s = SubRun::parse(&row.sub_run)
                .ok_or_else(|| Error::Malformed(format!("unknown sub-run `{}`", row.sub_run)))?;
            if !(row.plus >= 0.0 && row.minus >= 0.0) {
                return Err(Error::Malformed(format!(
                    "negative count in sub-run {} iteration {}",
                    row.sub_run, row.iteration
                )));
            }
            if rows
                .insert((row.sub_run.clone(), row.iteration), (s, row.plus, row.minus))
                .is_some()
            {
                return Err(Error::Malformed(format!(
                    "duplicate sub-run {} iteration {}",
                    row.sub_run, row.iteration
                )));
            }
        }
        Ok(CountsDataset::new(
            rows.into_values().map(|(s, p, m)| (s, vec![(p, m)])),
        ))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sub_run", "iteration", "plus", "minus"])?;
        for (s, v) in &self.sub_runs {
            for (k, (p, m)) in v.iter().enumerate() {
                w.write_record([s.id(), k.to_string(), p.to_string(), m.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-channel window selection on the histogram summed over iterations,
/// then per-iteration correction. A channel without a detectable peak
/// contributes zero counts and is flagged.
pub fn counts_from_histograms(
    per_sub_run: &[(SubRun, Vec<[CoincidenceHistogram; 2]>)],
    max_peaks: usize,
) -> Result<(CountsDataset, Vec<ChannelDiagnostics>)> {
    let mut entries = Vec::new();
    let mut diags = Vec::new();
    for (s, iters) in per_sub_run {
        let mut counts = vec![(0.0, 0.0); iters.len()];
        for (d, detector) in Sign::BOTH.into_iter().enumerate() {
            let Some(first) = iters.first() else { continue };
            let mut agg = first[d].clone();
            for h in &iters[1..] {
                agg.accumulate(&h[d]);
            }
            let mut diag = ChannelDiagnostics {
                sub_run: s.id(),
                detector,
                windows: Vec::new(),
                no_peak: false,
                clamped_iterations: 0,
            };
            match select_windows(&agg, max_peaks) {
                Ok(sel) => {
                    for (k, h) in iters.iter().enumerate() {
                        let c = corrected_from_histogram(&h[d], &sel);
                        diag.clamped_iterations += c.clamped as usize;
                        if d == 0 {
                            counts[k].0 = c.value;
                        } else {
                            counts[k].1 = c.value;
                        }
                    }
                    diag.windows = sel.windows;
                }
                Err(Error::NoPeak { .. }) => diag.no_peak = true,
                Err(e) => return Err(e),
            }
            diags.push(diag);
        }
        entries.push((*s, counts));
    }
    Ok((CountsDataset::new(entries), diags))
}

/// Probability tables from the iteration-mean counts of every sub-run.
pub fn joint_probs_from_runs(data: &CountsDataset) -> Result<ProbabilityTables> {
    assemble(|s| data.mean(s))
}

pub fn evaluate_inequalities(t: &ProbabilityTables) -> InequalityValues {
    evaluate(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub i: usize,
    pub k: usize,
    pub mean: f64,
    pub sd: f64,
    /// `None` when the mean is zero.
    pub sd_over_mean: Option<f64>,
}

const BOOTSTRAP_CHUNK: usize = 1024;

fn chunk_seed(seed: u64, chunk: usize) -> u64 {
    let mut z = seed ^ (chunk as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// K means of size-I resamples drawn with replacement; SD over the means
/// uses the K − 1 denominator.
pub fn bootstrap_sdm(samples: &[f64], i: usize, k: usize, seed: u64) -> Result<BootstrapResult> {
    if i == 0 || samples.len() < i {
        return Err(invalid(
            "I",
            format!("need 1 <= I <= {} samples, got {i}", samples.len()),
        ));
    }
    if k == 0 {
        return Err(invalid("K", "must be at least 1"));
    }
    let chunks = k.div_ceil(BOOTSTRAP_CHUNK);
    let means: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(chunk_seed(seed, c));
            let len = BOOTSTRAP_CHUNK.min(k - c * BOOTSTRAP_CHUNK);
            (0..len)
                .map(|_| {
                    (0..i).map(|_| samples[rng.random_range(0..samples.len())]).sum::<f64>()
                        / i as f64
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let mean = means.iter().sum::<f64>() / k as f64;
    let sd = if k > 1 {
        (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(BootstrapResult {
        i,
        k,
        mean,
        sd,
        sd_over_mean: (mean != 0.0).then(|| sd / mean.abs()),
    })
}

/// Linear functional of one run's normalized counts, e.g. a correlator or
/// a single joint probability.
#[derive(Clone, Copy)]
struct RunTerm {
    run: Run,
    weight: fn(&[Sign]) -> f64,
}

impl RunTerm {
    fn weights(&self) -> Vec<(f64, f64)> {
        self.run
            .sub_runs()
            .map(|s| ((self.weight)(&s.outcome(Sign::Plus)), (self.weight)(&s.outcome(Sign::Minus))))
            .collect()
    }
}

fn corr(l: &[Sign]) -> f64 {
    l[0].value() * l[1].value()
}
fn minus_plus(l: &[Sign]) -> f64 {
    (l[0] == Sign::Minus && l[1] == Sign::Plus) as u8 as f64
}
fn first_plus(l: &[Sign]) -> f64 {
    (l[0] == Sign::Plus) as u8 as f64
}
fn second_plus(l: &[Sign]) -> f64 {
    (l[1] == Sign::Plus) as u8 as f64
}

const fn term(run: Run, weight: fn(&[Sign]) -> f64) -> RunTerm {
    RunTerm { run, weight }
}

/// Population statistics accumulated with Welford's update.
#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if self.n == 0.0 {
            return o;
        }
        if o.n == 0.0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * o.n / n,
            m2: self.m2 + o.m2 + d * d * self.n * o.n / n,
        }
    }

    fn sd(&self) -> f64 {
        if self.n > 0.0 {
            (self.m2 / self.n).max(0.0).sqrt()
        } else {
            0.0
        }
    }
}

fn term_value(weights: &[(f64, f64)], picks: &[(f64, f64)]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (w, c) in weights.iter().zip(picks) {
        num += w.0 * c.0 + w.1 * c.1;
        den += c.0 + c.1;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// How one combination distribution was evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub sigma: f64,
    pub combinations: u64,
    pub exhaustive: bool,
}

/// SD of a per-run term over every cross combination of the run's sub-run
/// iterations (one iteration drawn per sub-run), exhaustive or sampled.
pub fn combination_spread(
    lists: &[&[(f64, f64)]],
    weights: &[(f64, f64)],
    mode: CombinationMode,
    exhaustive_limit: u64,
    draws: usize,
    seed: u64,
) -> Result<Spread> {
    if let Some(short) = lists.iter().find(|l| l.len() < 2) {
        return Err(Error::InsufficientData(format!(
            "{} iteration(s) in a sub-run; error distributions need at least 2",
            short.len()
        )));
    }
    let total = lists
        .iter()
        .try_fold(1u64, |acc, l| acc.checked_mul(l.len() as u64))
        .unwrap_or(u64::MAX);
    let exhaustive = match mode {
        CombinationMode::Exhaustive => true,
        CombinationMode::Sampled => false,
        CombinationMode::Auto => total <= exhaustive_limit,
    };
    let m = if exhaustive {
        // Parallel over the first sub-run's iteration, mixed-radix below it.
        (0..lists[0].len())
            .into_par_iter()
            .map(|i0| {
                let mut acc = Moments::default();
                let mut idx = vec![0usize; lists.len()];
                idx[0] = i0;
                let mut picks: Vec<(f64, f64)> = lists.iter().map(|l| l[0]).collect();
                picks[0] = lists[0][i0];
                loop {
                    for (j, l) in lists.iter().enumerate().skip(1) {
                        picks[j] = l[idx[j]];
                    }
                    acc.push(term_value(weights, &picks));
                    let mut j = lists.len() - 1;
                    loop {
                        if j == 0 {
                            return acc;
                        }
                        idx[j] += 1;
                        if idx[j] < lists[j].len() {
                            break;
                        }
                        idx[j] = 0;
                        j -= 1;
                    }
                }
            })
            .reduce(Moments::default, Moments::merge)
    } else {
        let chunks = draws.div_ceil(BOOTSTRAP_CHUNK);
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(chunk_seed(seed, c));
                let mut acc = Moments::default();
                let mut picks = vec![(0.0, 0.0); lists.len()];
                for _ in 0..BOOTSTRAP_CHUNK.min(draws - c * BOOTSTRAP_CHUNK) {
                    for (p, l) in picks.iter_mut().zip(lists) {
                        *p = l[rng.random_range(0..l.len())];
                    }
                    acc.push(term_value(weights, &picks));
                }
                acc
            })
            .reduce(Moments::default, Moments::merge)
    };
    Ok(Spread {
        sigma: m.sd(),
        combinations: if exhaustive { total } else { draws as u64 },
        exhaustive,
    })
}

/// A point value with its worst-case error Δ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    #[serde(default)]
    pub delta: Option<f64>,
    /// σ of each contributing measured term, keyed by time pair.
    #[serde(default)]
    pub sigmas: BTreeMap<String, f64>,
}

/// The measured quantities of a [`ResultReport`], as read back for comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuredSummary {
    pub lgi: Estimate,
    pub wlgi: Estimate,
    pub nsit12: Estimate,
    pub nsit23: Estimate,
    pub nsit13: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistributions {
    pub lgi: Estimate,
    pub wlgi: Estimate,
    pub nsit12: Estimate,
    pub nsit23: Estimate,
    pub nsit13: Estimate,
    pub spreads: BTreeMap<String, Spread>,
}

fn run_lists(data: &CountsDataset, run: Run) -> Vec<&[(f64, f64)]> {
    run.sub_runs().map(|s| data.iterations(&s)).collect()
}

/// Terms of each quantity: (label, term). Δ is the sum of their σ.
fn quantity_terms() -> [(&'static str, Vec<(&'static str, RunTerm)>); 5] {
    [
        (
            "lgi",
            vec![
                ("t1,t2", term(Run::Three, corr)),
                ("t2,t3", term(Run::One, corr)),
                ("t1,t3", term(Run::Two, corr)),
            ],
        ),
        (
            "wlgi",
            vec![
                ("t1,t2", term(Run::Three, minus_plus)),
                ("t2,t3", term(Run::One, minus_plus)),
                ("t1,t3", term(Run::Two, minus_plus)),
            ],
        ),
        (
            "nsit12",
            vec![
                ("t2,t3", term(Run::One, first_plus)),
                ("t1,t2", term(Run::Three, second_plus)),
            ],
        ),
        (
            "nsit23",
            vec![("t3", term(Run::Four, first_plus)), ("t2,t3", term(Run::One, second_plus))],
        ),
        (
            "nsit13",
            vec![("t3", term(Run::Four, first_plus)), ("t1,t3", term(Run::Two, second_plus))],
        ),
    ]
}

/// σ of every measured term over its cross-combination distribution and
/// the resulting Δ of each quantity; means are the point values.
pub fn error_distributions(data: &CountsDataset, cfg: &AnalysisConfig) -> Result<ErrorDistributions> {
    let point = evaluate(&joint_probs_from_runs(data)?);
    let mut spreads = BTreeMap::new();
    let mut estimates = Vec::new();
    for (qi, (name, terms)) in quantity_terms().into_iter().enumerate() {
        let mut sigmas = BTreeMap::new();
        for (ti, (pair, t)) in terms.into_iter().enumerate() {
            let spread = combination_spread(
                &run_lists(data, t.run),
                &t.weights(),
                cfg.combination,
                cfg.exhaustive_limit,
                cfg.draws,
                chunk_seed(cfg.seed, 16 * qi + ti),
            )?;
            sigmas.insert(pair.to_string(), spread.sigma);
            spreads.insert(format!("{name}:{pair}"), spread);
        }
        let mean = match name {
            "lgi" => point.lgi,
            "wlgi" => point.wlgi,
            "nsit12" => point.nsit12,
            "nsit23" => point.nsit23,
            _ => point.nsit13,
        };
        estimates.push(Estimate {
            mean,
            delta: Some(sigmas.values().sum()),
            sigmas,
        });
    }
    let mut it = estimates.into_iter();
    Ok(ErrorDistributions {
        lgi: it.next().unwrap(),
        wlgi: it.next().unwrap(),
        nsit12: it.next().unwrap(),
        nsit23: it.next().unwrap(),
        nsit13: it.next().unwrap(),
        spreads,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub input: String,
    pub iterations: BTreeMap<String, usize>,
    pub analysis: AnalysisConfig,
    pub source: Option<SourceConfig>,
    pub setup: Option<SetupParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultReport {
    pub lgi: Estimate,
    pub wlgi: Estimate,
    pub nsit12: Estimate,
    pub nsit23: Estimate,
    pub nsit13: Estimate,
    /// ⟨Q_{t_i} Q_{t_j}⟩ keyed by time pair.
    pub correlations: BTreeMap<String, Correlation>,
    /// Mean corrected counts per sub-run as (plus, minus).
    pub counts: BTreeMap<String, (f64, f64)>,
    pub probabilities: BTreeMap<String, BTreeMap<String, f64>>,
    pub channels: Vec<ChannelDiagnostics>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

fn point_estimate(mean: f64) -> Estimate {
    Estimate {
        mean,
        delta: None,
        sigmas: BTreeMap::new(),
    }
}

/// Point values from iteration means; Δ whenever every sub-run has at least
/// two iterations.
pub fn analyze_counts(
    data: &CountsDataset,
    cfg: &AnalysisConfig,
    channels: Vec<ChannelDiagnostics>,
    provenance: Provenance,
) -> Result<ResultReport> {
    cfg.validate()?;
    let tables = joint_probs_from_runs(data)?;
    let v = evaluate(&tables);
    let mut warnings = Vec::new();
    for c in &channels {
        if c.no_peak {
            warnings.push(format!(
                "sub-run {} {}: no coincidence peak, counted as zero",
                c.sub_run,
                c.detector.symbol()
            ));
        }
        if c.clamped_iterations > 0 {
            warnings.push(format!(
                "sub-run {} {}: {} iteration(s) clamped at zero after background subtraction",
                c.sub_run,
                c.detector.symbol(),
                c.clamped_iterations
            ));
        }
    }
    let (lgi, wlgi, nsit12, nsit23, nsit13) = match error_distributions(data, cfg) {
        Ok(e) => (e.lgi, e.wlgi, e.nsit12, e.nsit23, e.nsit13),
        Err(Error::InsufficientData(msg)) => {
            warnings.push(format!("no error estimate: {msg}"));
            (
                point_estimate(v.lgi),
                point_estimate(v.wlgi),
                point_estimate(v.nsit12),
                point_estimate(v.nsit23),
                point_estimate(v.nsit13),
            )
        }
        Err(e) => return Err(e),
    };
    let correlations = [("t1,t2", v.q12), ("t2,t3", v.q23), ("t1,t3", v.q13)]
        .into_iter()
        .map(|(k, value)| {
            (
                k.to_string(),
                Correlation {
                    value,
                    sigma: lgi.sigmas.get(k).copied(),
                },
            )
        })
        .collect();
    let counts = data
        .sub_runs
        .iter()
        .filter_map(|(s, _)| data.mean(s).map(|m| (s.id(), m)))
        .collect();
    let probabilities = [
        ("t2,t3", &tables.p23),
        ("t1,t3", &tables.p13),
        ("t1,t2,t3", &tables.p123),
        ("t1,t2", &tables.p12),
        ("t3", &tables.p3),
    ]
    .into_iter()
    .map(|(k, t)| (k.to_string(), t.labelled()))
    .collect();
    Ok(ResultReport {
        lgi,
        wlgi,
        nsit12,
        nsit23,
        nsit13,
        correlations,
        counts,
        probabilities,
        channels,
        warnings,
        provenance,
    })
}

/// Full pipeline over in-memory streams.
pub fn analyze_streams(
    sub_runs: &[(SubRun, Vec<&SubRunStreams>)],
    cfg: &AnalysisConfig,
    source: Option<&SourceConfig>,
    setup: Option<&SetupParams>,
    input: &str,
) -> Result<(ResultReport, CountsDataset)> {
    cfg.validate()?;
    let range = cfg.range(cfg.center_for(source));
    let hists = sub_runs
        .iter()
        .map(|(s, iters)| {
            let h = iters
                .par_iter()
                .map(|st| channel_histograms(st, cfg.bin_width, range))
                .collect::<Result<Vec<_>>>()?;
            Ok((*s, h))
        })
        .collect::<Result<Vec<_>>>()?;
    analyze_histograms(&hists, cfg, source, setup, input)
}

/// Simulates and analyzes without keeping the streams: each iteration is
/// reduced to its two histograms as soon as it is generated.
pub fn analyze_simulation(
    src: &SourceConfig,
    setup: &SetupParams,
    counts: &IterationCounts,
    cfg: &AnalysisConfig,
) -> Result<(ResultReport, CountsDataset)> {
    cfg.validate()?;
    let range = cfg.range(cfg.center_for(Some(src)));
    let hists = run_protocol_map(src, setup, counts, |_, s| {
        channel_histograms(&s, cfg.bin_width, range)
    })?
    .into_iter()
    .map(|(s, v)| Ok((s, v.into_iter().collect::<Result<Vec<_>>>()?)))
    .collect::<Result<Vec<_>>>()?;
    analyze_histograms(&hists, cfg, Some(src), Some(setup), "simulation")
}

/// Window selection, correction and inequality evaluation over
/// per-iteration herald-vs-PLUS and herald-vs-MINUS histograms.
pub fn analyze_histograms(
    hists: &[(SubRun, Vec<[CoincidenceHistogram; 2]>)],
    cfg: &AnalysisConfig,
    source: Option<&SourceConfig>,
    setup: Option<&SetupParams>,
    input: &str,
) -> Result<(ResultReport, CountsDataset)> {
    let (data, channels) = counts_from_histograms(hists, cfg.max_peaks)?;
    let provenance = Provenance {
        input: input.to_string(),
        iterations: data.iteration_counts(),
        analysis: cfg.clone(),
        source: source.cloned(),
        setup: setup.copied(),
    };
    let report = analyze_counts(&data, cfg, channels, provenance)?;
    Ok((report, data))
}

/// Inequality values computed from the k-th iteration of every sub-run,
/// for k below the smallest iteration count.
pub fn per_iteration_values(data: &CountsDataset) -> Result<Vec<InequalityValues>> {
    let n = data.sub_runs.iter().map(|(_, v)| v.len()).min().unwrap_or(0);
    (0..n)
        .map(|k| assemble(|s| data.iterations(s).get(k).copied()).map(|t| evaluate(&t)))
        .collect()
}

/// SD/M of bootstrap means for each I in `is`.
pub fn sdm_curve(samples: &[f64], is: &[usize], k: usize, seed: u64) -> Result<Vec<BootstrapResult>> {
    is.iter().map(|&i| bootstrap_sdm(samples, i, k, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Channel;

    fn stream(channel: Channel, times: &[u64]) -> TimestampStream {
        TimestampStream::from_unsorted(channel, times.to_vec())
    }

    #[test]
    fn delta_stream_gives_single_bin() {
        let a: Vec<u64> = (0..100).map(|k| 1_000_000 * k + 17).collect();
        let b: Vec<u64> = a.iter().map(|t| t + 5000).collect();
        let h = histogram(
            &stream(Channel::Herald, &a),
            &stream(Channel::Plus, &b),
            100,
            (-50_000, 50_000),
        )
        .unwrap();
        assert_eq!(h.total(), 100);
        let k = h.counts.iter().position(|&c| c == 100).unwrap();
        assert_eq!(h.bin_start(k), 5000);
    }

    #[test]
    fn empty_stream_gives_zero_histogram() {
        let h = histogram(
            &stream(Channel::Herald, &[]),
            &stream(Channel::Plus, &[1, 2, 3]),
            100,
            (-1000, 1000),
        )
        .unwrap();
        assert_eq!(h.counts.len(), 20);
        assert_eq!(h.total(), 0);
    }

    #[test]
    fn too_few_bins_rejected() {
        let e = stream(Channel::Herald, &[]);
        assert!(histogram(&e, &e, 100, (0, 200)).is_err());
        assert!(histogram(&e, &e, 0, (0, 2000)).is_err());
    }

    #[test]
    fn flat_histogram_has_no_peak() {
        let h = CoincidenceHistogram {
            bin_width: 10,
            origin: 0,
            counts: vec![50; 200],
        };
        assert!(matches!(select_window(&h), Err(Error::NoPeak { .. })));
    }

    #[test]
    fn two_peaks_both_selected() {
        let mut counts = vec![1u64; 400];
        for (c, h) in [(100usize, 500u64), (300, 400)] {
            for d in 0..5 {
                counts[c - 2 + d] = h;
            }
        }
        let h = CoincidenceHistogram {
            bin_width: 100,
            origin: 0,
            counts,
        };
        let sel = select_windows(&h, 2).unwrap();
        assert_eq!(sel.windows.len(), 2);
        assert_eq!((sel.windows[0].start, sel.windows[0].end), (9800, 10300));
        assert_eq!((sel.windows[1].start, sel.windows[1].end), (29800, 30300));
        assert!((sel.windows[0].flatline_mean - 1.0).abs() < 1e-12);
        let c = corrected_from_histogram(&h, &sel);
        assert_eq!(c.raw, 4500);
        assert!((c.value - 4490.0).abs() < 1e-9);
    }

    #[test]
    fn clamps_negative_counts() {
        let c = correct(3, 10.0);
        assert_eq!(c.value, 0.0);
        assert!(c.clamped);
        assert!(!correct(10, 3.0).clamped);
    }

    #[test]
    fn bootstrap_of_constant_is_exact() {
        let r = bootstrap_sdm(&[4.0; 30], 10, 500, 1).unwrap();
        assert_eq!((r.mean, r.sd, r.sd_over_mean), (4.0, 0.0, Some(0.0)));
        let z = bootstrap_sdm(&[0.0; 5], 3, 10, 1).unwrap();
        assert_eq!(z.sd_over_mean, None);
        assert!(bootstrap_sdm(&[1.0], 2, 10, 1).is_err());
        assert!(bootstrap_sdm(&[1.0], 1, 0, 1).is_err());
    }

    #[test]
    fn moments_merge_matches_direct() {
        let xs: Vec<f64> = (0..37).map(|k| (k as f64 * 0.37).sin()).collect();
        let mut all = Moments::default();
        xs.iter().for_each(|&x| all.push(x));
        let (mut a, mut b) = (Moments::default(), Moments::default());
        xs[..11].iter().for_each(|&x| a.push(x));
        xs[11..].iter().for_each(|&x| b.push(x));
        let m = a.merge(b);
        assert!((m.sd() - all.sd()).abs() < 1e-14);
        assert!((m.mean - all.mean).abs() < 1e-14);
    }

    #[test]
    fn counts_csv_round_trip() {
        let d = CountsDataset::new(PROTOCOL.iter().map(|s| (*s, vec![(1.5, 2.0), (3.0, 4.25)])));
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(CountsDataset::from_csv(buf.as_slice()).unwrap(), d);
        let dup = "sub_run,iteration,plus,minus\n1.1,0,1,2\n1.1,0,3,4\n";
        assert!(CountsDataset::from_csv(dup.as_bytes()).is_err());
        let bad = "sub_run,iteration,plus,minus\n9.9,0,1,2\n";
        assert!(CountsDataset::from_csv(bad.as_bytes()).is_err());
    }
}
