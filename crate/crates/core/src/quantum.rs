//! Quantum predictions for the unbalanced MZI followed by the displaced Sagnac loop.

use crate::error::{invalid, Error, Result};
use crate::optim::NelderMead;
use crate::protocol::{Blocker, BlockerConfig, Run, Sign, SubRun, PROTOCOL};
use crate::tables::{assemble, evaluate, InequalityValues, JointProbTable, ProbabilityTables};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Optical circuit: input split, per-port NPBS transmissions, Sagnac visibility.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupParams {
    pub alpha_sq: f64,
    /// T₁..T₄ for the four NPBS input ports.
    pub t_ratios: [f64; 4],
    /// v = cos θ₂.
    pub visibility: f64,
}

impl Default for SetupParams {
    fn default() -> Self {
        SetupParams::nominal()
    }
}

impl SetupParams {
    pub fn new(alpha_sq: f64, t_ratios: [f64; 4], visibility: f64) -> Result<Self> {
        let p = SetupParams {
            alpha_sq,
            t_ratios,
            visibility,
        };
        p.validate()?;
        Ok(p)
    }

    /// Balanced input with a common transmission on every port, v = 1.
    pub fn ideal(t: f64) -> Self {
        SetupParams {
            alpha_sq: 0.5,
            t_ratios: [t; 4],
            visibility: 1.0,
        }
    }

    /// Characterized transmissions of the experiment, v = 1.
    pub fn nominal() -> Self {
        SetupParams {
            alpha_sq: 0.5,
            t_ratios: [0.80, 0.79, 0.82, 0.82],
            visibility: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_sq) {
            return Err(invalid("alpha_sq", format!("{} not in [0, 1]", self.alpha_sq)));
        }
        for (i, t) in self.t_ratios.iter().enumerate() {
            if !(0.0..=1.0).contains(t) {
                return Err(invalid(&format!("t_ratios[{i}]"), format!("{t} not in [0, 1]")));
            }
        }
        if !(-1.0..=1.0).contains(&self.visibility) {
            return Err(invalid(
                "visibility",
                format!("{} not in [-1, 1]", self.visibility),
            ));
        }
        Ok(())
    }

    pub fn beta_sq(&self) -> f64 {
        1.0 - self.alpha_sq
    }

    /// Transmission of port `i` (1-based).
    pub fn t(&self, i: usize) -> f64 {
        self.t_ratios[i - 1]
    }

    /// Reflection of port `i` (1-based).
    pub fn r(&self, i: usize) -> f64 {
        1.0 - self.t_ratios[i - 1]
    }

    fn arm_weight(&self, arm: Sign) -> f64 {
        match arm {
            Sign::Plus => self.alpha_sq,
            Sign::Minus => self.beta_sq(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionProbs {
    pub p_plus: f64,
    pub p_minus: f64,
    pub p_lost: f64,
}

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Amplitudes into the inner Sagnac arms (+1, −1) for a photon in t₁ arm `arm`.
fn inner_amplitudes(p: &SetupParams, arm: Sign) -> [Complex64; 2] {
    match arm {
        // Port 1: transmission feeds inner +1, reflection inner −1.
        Sign::Plus => [Complex64::from(p.t(1).sqrt()), I * p.r(1).sqrt()],
        // Port 4: reflection feeds inner +1, transmission inner −1.
        Sign::Minus => [I * p.r(4).sqrt(), Complex64::from(p.t(4).sqrt())],
    }
}

/// Amplitudes from inner arm (+1 → port 2, −1 → port 3) to the (PLUS, MINUS) detectors.
fn output_amplitudes(p: &SetupParams, inner: Sign) -> [Complex64; 2] {
    match inner {
        Sign::Plus => [Complex64::from(p.t(2).sqrt()), I * p.r(2).sqrt()],
        Sign::Minus => [I * p.r(3).sqrt(), Complex64::from(p.t(3).sqrt())],
    }
}

/// Click probabilities `(plus, minus)` for a photon known to be in t₁ arm `arm`,
/// with the given t₂ blocker. The cross term between the two inner paths is
/// scaled by the visibility.
pub fn arm_probs(p: &SetupParams, arm: Sign, block_t2: Blocker) -> (f64, f64) {
    let inner = inner_amplitudes(p, arm);
    let mut out = [0.0; 2];
    for (k, o) in out.iter_mut().enumerate() {
        let path: Vec<Complex64> = [Sign::Plus, Sign::Minus]
            .iter()
            .enumerate()
            .map(|(j, &s)| {
                if block_t2.blocks(s) {
                    Complex64::new(0.0, 0.0)
                } else {
                    inner[j] * output_amplitudes(p, s)[k]
                }
            })
            .collect();
        *o = path[0].norm_sqr()
            + path[1].norm_sqr()
            + 2.0 * p.visibility * (path[0] * path[1].conj()).re;
    }
    (out[0], out[1])
}

/// Probability the photon in t₁ arm `arm` is absorbed by the t₂ blocker.
fn lost_at_t2(p: &SetupParams, arm: Sign, block_t2: Blocker) -> f64 {
    let inner = inner_amplitudes(p, arm);
    [Sign::Plus, Sign::Minus]
        .iter()
        .enumerate()
        .filter(|(_, s)| block_t2.blocks(**s))
        .map(|(j, _)| inner[j].norm_sqr())
        .sum()
}

/// Per-source-photon detection probabilities under a blocker configuration.
pub fn detection_probs(p: &SetupParams, blockers: BlockerConfig) -> DetectionProbs {
    let mut d = DetectionProbs {
        p_plus: 0.0,
        p_minus: 0.0,
        p_lost: 0.0,
    };
    for arm in Sign::BOTH {
        let w = p.arm_weight(arm);
        if blockers.block_t1.blocks(arm) {
            d.p_lost += w;
            continue;
        }
        let (plus, minus) = arm_probs(p, arm, blockers.block_t2);
        d.p_plus += w * plus;
        d.p_minus += w * minus;
        d.p_lost += w * lost_at_t2(p, arm, blockers.block_t2);
    }
    d
}

/// All protocol tables predicted for `p`, each run normalized by its own total.
pub fn predicted_tables(p: &SetupParams) -> Result<ProbabilityTables> {
    assemble(|s| {
        let d = detection_probs(p, s.blockers);
        Some((d.p_plus, d.p_minus))
    })
}

/// Raw detected weight summed over the sub-runs of `run`.
pub fn run_weight(p: &SetupParams, run: Run) -> f64 {
    run.sub_runs()
        .map(|s| {
            let d = detection_probs(p, s.blockers);
            d.p_plus + d.p_minus
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimePair {
    T1T2,
    T2T3,
    T1T3,
}

pub fn joint_probs_two_time(p: &SetupParams, pair: TimePair) -> Result<JointProbTable> {
    let run = match pair {
        TimePair::T1T2 => Run::Three,
        TimePair::T2T3 => Run::One,
        TimePair::T1T3 => Run::Two,
    };
    let mut raw = std::collections::BTreeMap::new();
    let mut provenance = Vec::new();
    for s in run.sub_runs() {
        let d = detection_probs(p, s.blockers);
        raw.insert(s.outcome(Sign::Plus), d.p_plus);
        raw.insert(s.outcome(Sign::Minus), d.p_minus);
        provenance.push((s.blockers, d.p_plus + d.p_minus));
    }
    let order = if run == Run::Three {
        crate::tables::Order::ThreeTime
    } else {
        crate::tables::Order::TwoTime
    };
    let table = JointProbTable::normalize(order, &raw, provenance, &run.to_string())?;
    Ok(if run == Run::Three {
        table.marginalize_last()
    } else {
        table
    })
}

/// Inequality values assembled from the predicted tables.
pub fn assembled_values(p: &SetupParams) -> Result<InequalityValues> {
    predicted_tables(p).map(|t| evaluate(&t))
}

pub fn qm_lgi(p: &SetupParams) -> f64 {
    let (t1, t2, t3, t4) = (p.t(1), p.t(2), p.t(3), p.t(4));
    let (r1, r2, r3, r4) = (p.r(1), p.r(2), p.r(3), p.r(4));
    let v = p.visibility;
    p.alpha_sq
        * (r1 * (t3 - 3.0 * r3)
            + t1
            + 2.0 * (t1 * t2 * r1 * r3).sqrt() * v
            + 2.0 * (t1 * t3 * r1 * r2).sqrt() * v)
        + p.beta_sq()
            * (r4 * (t2 - 3.0 * r2)
                + t4
                + 2.0 * (t2 * t4 * r3 * r4).sqrt() * v
                + 2.0 * (t3 * t4 * r2 * r4).sqrt() * v)
}

pub fn qm_wlgi(p: &SetupParams) -> f64 {
    2.0 * p.beta_sq() * (p.t(2) * p.t(4) * p.r(3) * p.r(4)).sqrt() * p.visibility
        - p.alpha_sq * p.r(1) * p.r(3)
        - p.beta_sq() * p.r(2) * p.r(4)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nsit {
    pub nsit12: f64,
    pub nsit23: f64,
    pub nsit13: f64,
}

pub fn qm_nsit(p: &SetupParams) -> Nsit {
    let v = p.visibility;
    let a = 2.0 * p.alpha_sq * (p.t(1) * p.t(2) * p.r(1) * p.r(3)).sqrt() * v;
    let b = 2.0 * p.beta_sq() * (p.t(2) * p.t(4) * p.r(3) * p.r(4)).sqrt() * v;
    Nsit {
        nsit12: 0.0,
        nsit23: (a - b).abs(),
        nsit13: 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToleranceMode {
    /// T ± width.
    #[default]
    Absolute,
    /// T·(1 ± width).
    Relative,
}

/// Least-count tolerances swept by [`qm_range`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Half-width of the HWP angle error, degrees.
    pub hwp_angle_deg: f64,
    /// Half-width of the transmission error.
    pub transmission: f64,
    pub transmission_mode: ToleranceMode,
    /// Visibility interval; `None` keeps the setup's own value.
    pub visibility: Option<(f64, f64)>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            hwp_angle_deg: 1.0,
            transmission: 0.02,
            transmission_mode: ToleranceMode::Absolute,
            visibility: None,
        }
    }
}

impl Tolerances {
    pub const ZERO: Tolerances = Tolerances {
        hwp_angle_deg: 0.0,
        transmission: 0.0,
        transmission_mode: ToleranceMode::Absolute,
        visibility: None,
    };

    pub fn with_visibility(mut self, lo: f64, hi: f64) -> Self {
        self.visibility = Some((lo, hi));
        self
    }
}

/// Grid points per tolerance axis.
pub const GRID_POINTS: usize = 21;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    const EMPTY: Interval = Interval {
        lo: f64::INFINITY,
        hi: f64::NEG_INFINITY,
    };

    fn include(&mut self, x: f64) {
        self.lo = self.lo.min(x);
        self.hi = self.hi.max(x);
    }

    fn merge(self, o: Interval) -> Interval {
        Interval {
            lo: self.lo.min(o.lo),
            hi: self.hi.max(o.hi),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QmRange {
    pub lgi: Interval,
    pub wlgi: Interval,
    pub nsit23: Interval,
}

impl QmRange {
    const EMPTY: QmRange = QmRange {
        lgi: Interval::EMPTY,
        wlgi: Interval::EMPTY,
        nsit23: Interval::EMPTY,
    };

    fn merge(self, o: QmRange) -> QmRange {
        QmRange {
            lgi: self.lgi.merge(o.lgi),
            wlgi: self.wlgi.merge(o.wlgi),
            nsit23: self.nsit23.merge(o.nsit23),
        }
    }
}

/// |α|² as a function of the HWP angle error δ around the nominal setting.
pub fn alpha_sq_at(nominal_alpha_sq: f64, delta_deg: f64) -> f64 {
    let theta0 = 0.5 * nominal_alpha_sq.sqrt().asin();
    (2.0 * (theta0 + delta_deg.to_radians())).sin().powi(2)
}

fn axis(lo: f64, hi: f64) -> Vec<f64> {
    if hi == lo {
        return vec![lo];
    }
    (0..GRID_POINTS)
        .map(|k| lo + (hi - lo) * k as f64 / (GRID_POINTS - 1) as f64)
        .collect()
}

/// Min/max of LGI, WLGI and NSIT₂₃ over the tolerance box, on a
/// [`GRID_POINTS`]-per-axis grid that includes the endpoints.
pub fn qm_range(p: &SetupParams, tol: &Tolerances) -> Result<QmRange> {
    p.validate()?;
    let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
    if !finite_nonneg(tol.hwp_angle_deg) || !finite_nonneg(tol.transmission) {
        return Err(Error::EmptyTolerance(
            "tolerance half-widths must be finite and non-negative".into(),
        ));
    }
    let (v_lo, v_hi) = tol.visibility.unwrap_or((p.visibility, p.visibility));
    if !(v_lo <= v_hi) || v_lo < -1.0 || v_hi > 1.0 {
        return Err(Error::EmptyTolerance(format!(
            "visibility interval [{v_lo}, {v_hi}] is empty or outside [-1, 1]"
        )));
    }

    let alphas: Vec<f64> = axis(-tol.hwp_angle_deg, tol.hwp_angle_deg)
        .into_iter()
        .map(|d| alpha_sq_at(p.alpha_sq, d))
        .collect();
    let t_axes: Vec<Vec<f64>> = p
        .t_ratios
        .iter()
        .map(|&t| {
            let w = match tol.transmission_mode {
                ToleranceMode::Absolute => tol.transmission,
                ToleranceMode::Relative => tol.transmission * t,
            };
            axis((t - w).max(0.0), (t + w).min(1.0))
        })
        .collect();
    let vs = axis(v_lo, v_hi);

    let outer: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| t_axes[0].iter().map(move |&t1| (a, t1)))
        .collect();
    let range = outer
        .par_iter()
        .map(|&(alpha_sq, t1)| {
            let mut r = QmRange::EMPTY;
            for &t2 in &t_axes[1] {
                for &t3 in &t_axes[2] {
                    for &t4 in &t_axes[3] {
                        for &v in &vs {
                            let q = SetupParams {
                                alpha_sq,
                                t_ratios: [t1, t2, t3, t4],
                                visibility: v,
                            };
                            r.lgi.include(qm_lgi(&q));
                            r.wlgi.include(qm_wlgi(&q));
                            r.nsit23.include(qm_nsit(&q).nsit23);
                        }
                    }
                }
            }
            r
        })
        .reduce(|| QmRange::EMPTY, QmRange::merge);
    Ok(range)
}

/// LGI of the generic two-MZI circuit.
pub fn generic_lgi(theta2: f64, t2: f64, t3: f64) -> f64 {
    let (r2, r3) = (1.0 - t2, 1.0 - t3);
    1.0 - 4.0 * r2 * r3 + 4.0 * theta2.cos() * (t2 * t3 * r2 * r3).sqrt()
}

/// WLGI of the generic two-MZI circuit.
pub fn generic_wlgi(theta1: f64, theta2: f64, t1: f64, t2: f64, t3: f64) -> f64 {
    let (r1, r2, r3) = (1.0 - t1, 1.0 - t2, 1.0 - t3);
    2.0 * theta2.cos() * r1 * (t2 * t3 * r2 * r3).sqrt()
        - 2.0 * theta1.cos() * r3 * (t1 * t2 * r1 * r2).sqrt()
        - r2 * r3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LgiMaximum {
    pub value: f64,
    pub theta2: f64,
    pub t2: f64,
    pub t3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WlgiMaximum {
    pub value: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdealMaxima {
    pub lgi: LgiMaximum,
    pub wlgi: WlgiMaximum,
}

/// Wraps a phase into (−π, π].
fn wrap_phase(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Transmissions are searched through T = sin²u so the box [0,1] is implicit.
fn to_t(u: f64) -> f64 {
    u.sin().powi(2)
}

/// Multistart Nelder–Mead over `phases` phase coordinates followed by
/// `transmissions` transmission coordinates; starts form a fixed lattice.
fn best_of<F: Fn(&[f64]) -> f64>(f: F, phases: usize, transmissions: usize) -> Vec<f64> {
    const PHASE_STARTS: [f64; 3] = [0.5, 2.0, 3.0];
    const T_STARTS: [f64; 3] = [0.35, 0.8, 1.2];
    let nm = NelderMead {
        max_evals: 4000,
        f_tol: 1e-15,
        x_tol: 1e-12,
    };
    let dim = phases + transmissions;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for code in 0..3usize.pow(dim as u32) {
        let x0: Vec<f64> = (0..dim)
            .map(|k| {
                let idx = code / 3usize.pow(k as u32) % 3;
                if k < phases {
                    PHASE_STARTS[idx]
                } else {
                    T_STARTS[idx]
                }
            })
            .collect();
        let m = nm.minimize_restarting(|x| -f(x), &x0, &vec![0.3; dim], 4);
        if best.as_ref().map_or(true, |b| m.value < b.1) {
            best = Some((m.x, m.value));
        }
    }
    best.unwrap().0
}

/// Maximizes the generic-circuit LGI and WLGI expressions.
pub fn ideal_maxima() -> IdealMaxima {
    let x = best_of(|x| generic_lgi(x[0], to_t(x[1]), to_t(x[2])), 1, 2);
    let lgi = LgiMaximum {
        value: generic_lgi(x[0], to_t(x[1]), to_t(x[2])),
        theta2: wrap_phase(x[0]),
        t2: to_t(x[1]),
        t3: to_t(x[2]),
    };
    let f = |x: &[f64]| generic_wlgi(x[0], x[1], to_t(x[2]), to_t(x[3]), to_t(x[4]));
    let x = best_of(f, 2, 3);
    let wlgi = WlgiMaximum {
        value: f(&x),
        theta1: wrap_phase(x[0]),
        theta2: wrap_phase(x[1]),
        t1: to_t(x[2]),
        t2: to_t(x[3]),
        t3: to_t(x[4]),
    };
    IdealMaxima { lgi, wlgi }
}

/// Detection probabilities for every sub-run, in protocol order.
pub fn sub_run_probs(p: &SetupParams) -> Vec<(SubRun, DetectionProbs)> {
    PROTOCOL
        .iter()
        .map(|s| (*s, detection_probs(p, s.blockers)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ideal_point_values() {
        let p = SetupParams::ideal(0.75);
        assert!(close(qm_lgi(&p), 1.5, 1e-12));
        assert!(close(qm_wlgi(&p), 0.125, 1e-12));
        let mut q = p;
        q.visibility = 0.0;
        assert!(close(qm_lgi(&q), 0.75, 1e-12));
    }

    #[test]
    fn nominal_point_values() {
        let p = SetupParams::nominal();
        assert!(close(qm_lgi(&p), 1.47, 0.005), "{}", qm_lgi(&p));
        assert!(close(qm_wlgi(&p), 0.11, 0.005), "{}", qm_wlgi(&p));
        assert!(close(qm_nsit(&p).nsit23, 0.006, 0.0005), "{:?}", qm_nsit(&p));
    }

    #[test]
    fn nsit23_for_single_arm_input() {
        let p = SetupParams {
            alpha_sq: 1.0,
            ..SetupParams::ideal(0.75)
        };
        assert!(close(qm_nsit(&p).nsit23, 0.375, 1e-12));
    }

    #[test]
    fn open_setup_loses_nothing() {
        let d = detection_probs(&SetupParams::ideal(0.75), BlockerConfig::OPEN);
        assert!(close(d.p_plus + d.p_minus, 1.0, 1e-12));
        assert_eq!(d.p_lost, 0.0);
    }

    #[test]
    fn ideal_t1_t2_table() {
        let t = joint_probs_two_time(&SetupParams::ideal(0.75), TimePair::T1T2).unwrap();
        let want = [0.375, 0.125, 0.125, 0.375];
        for (got, w) in t.entries.values().zip(want) {
            assert!(close(*got, w, 1e-12), "{:?}", t.entries);
        }
    }

    #[test]
    fn nominal_nsit23_from_detection_probs() {
        let p = SetupParams::nominal();
        let d = detection_probs(&p, BlockerConfig::OPEN);
        let t = joint_probs_two_time(&p, TimePair::T2T3).unwrap();
        let nsit = (d.p_plus - t.pp(Sign::Plus, Sign::Plus) - t.pp(Sign::Minus, Sign::Plus)).abs();
        assert!(close(nsit, 0.006, 0.0005), "{nsit}");
    }

    #[test]
    fn alpha_mapping_at_one_degree() {
        assert!(close(alpha_sq_at(0.5, -1.0), 0.4651, 1e-4));
        assert!(close(alpha_sq_at(0.5, 1.0), 0.5349, 1e-4));
        assert!(close(alpha_sq_at(0.5, 0.0), 0.5, 1e-15));
    }

    #[test]
    fn zero_width_range_is_a_point() {
        let p = SetupParams::nominal();
        let r = qm_range(&p, &Tolerances::ZERO).unwrap();
        assert_eq!(r.lgi.lo, r.lgi.hi);
        assert!(close(r.lgi.lo, qm_lgi(&p), 1e-15));
        assert!(close(r.wlgi.hi, qm_wlgi(&p), 1e-15));
    }

    #[test]
    fn inverted_visibility_interval_is_rejected() {
        let tol = Tolerances::default().with_visibility(0.9, 0.8);
        assert!(matches!(
            qm_range(&SetupParams::nominal(), &tol),
            Err(Error::EmptyTolerance(_))
        ));
    }

    #[test]
    fn generic_forms_by_hand() {
        assert!(close(generic_lgi(0.0, 0.5, 0.5), 1.0, 1e-15));
        assert!(close(generic_lgi(0.0, 0.75, 0.75), 1.5, 1e-15));
        assert!(close(generic_wlgi(PI, 0.0, 0.1524, 0.6952, 0.4833), 0.4034, 1e-4));
    }

    #[test]
    fn validation_rejects_out_of_range() {
        assert!(SetupParams::new(1.2, [0.5; 4], 1.0).is_err());
        assert!(SetupParams::new(0.5, [0.5, 0.5, -0.1, 0.5], 1.0).is_err());
        assert!(SetupParams::new(0.5, [0.5; 4], 1.5).is_err());
    }
}
