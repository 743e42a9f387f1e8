//! Hidden-variable subspace model: detector-only LGI/WLGI expressions, their
//! maximization under finite detection efficiency, and the blocker-setup bounds.

use crate::error::{invalid, Error, Result};
use crate::protocol::Sign;
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Inequality {
    Lgi,
    Wlgi,
}

impl std::fmt::Display for Inequality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Inequality::Lgi => "LGI",
            Inequality::Wlgi => "WLGI",
        })
    }
}

/// Subspace blocks, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Q,
    P,
    S,
    A,
    B,
    C,
    D,
}

pub const BLOCKS: [Block; 7] = [
    Block::Q,
    Block::P,
    Block::S,
    Block::A,
    Block::B,
    Block::C,
    Block::D,
];

pub const DIM: usize = 56;

/// Flat index of weight `block_i` (i = 1..8).
pub fn flat(block: Block, i: usize) -> usize {
    debug_assert!((1..=8).contains(&i));
    block as usize * 8 + (i - 1)
}

/// Outcome triple (q₁, q₂, q₃) labelled by index i = 1..8:
/// 1 = (+,+,+), 2 = (+,+,−), …, 8 = (−,−,−).
pub fn triple(i: usize) -> [Sign; 3] {
    let k = i - 1;
    let bit = |b: usize| if k >> b & 1 == 0 { Sign::Plus } else { Sign::Minus };
    [bit(2), bit(1), bit(0)]
}

/// The 56 subspace weights (q, p, s, a, b, c, d)ᵢ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HVWeights {
    pub q: [f64; 8],
    pub p: [f64; 8],
    pub s: [f64; 8],
    pub a: [f64; 8],
    pub b: [f64; 8],
    pub c: [f64; 8],
    pub d: [f64; 8],
}

impl HVWeights {
    pub fn zero() -> Self {
        HVWeights::from_flat(&[0.0; DIM])
    }

    pub fn from_flat(w: &[f64]) -> Self {
        assert_eq!(w.len(), DIM);
        let block = |k: usize| -> [f64; 8] { w[k * 8..k * 8 + 8].try_into().unwrap() };
        HVWeights {
            q: block(0),
            p: block(1),
            s: block(2),
            a: block(3),
            b: block(4),
            c: block(5),
            d: block(6),
        }
    }

    pub fn to_flat(&self) -> [f64; DIM] {
        let mut w = [0.0; DIM];
        for (k, blk) in [self.q, self.p, self.s, self.a, self.b, self.c, self.d]
            .iter()
            .enumerate()
        {
            w[k * 8..k * 8 + 8].copy_from_slice(blk);
        }
        w
    }

    /// Builder for sparse weights, e.g. `HVWeights::zero().with(Block::A, 7, 0.25)`.
    pub fn with(self, block: Block, i: usize, value: f64) -> Self {
        let mut w = self.to_flat();
        w[flat(block, i)] = value;
        HVWeights::from_flat(&w)
    }

    pub fn total(&self) -> f64 {
        self.to_flat().iter().sum()
    }

    /// The three detection-efficiency sums Σ(p+a+b+d), Σ(q+a+c+d), Σ(s+b+c+d).
    pub fn efficiency_sums(&self) -> [f64; 3] {
        let s = |x: &[f64; 8]| x.iter().sum::<f64>();
        let (q, p, ss) = (s(&self.q), s(&self.p), s(&self.s));
        let (a, b, c, d) = (s(&self.a), s(&self.b), s(&self.c), s(&self.d));
        [p + a + b + d, q + a + c + d, ss + b + c + d]
    }

    /// Largest violation of nonnegativity, normalization, or the efficiency
    /// constraints at `eta`.
    pub fn infeasibility(&self, eta: f64) -> f64 {
        let w = self.to_flat();
        let neg = w.iter().map(|x| (-x).max(0.0)).fold(0.0, f64::max);
        let norm = (self.total() - 1.0).max(0.0);
        let eff = self
            .efficiency_sums()
            .iter()
            .map(|s| (s - eta).abs())
            .fold(0.0, f64::max);
        neg.max(norm).max(eff)
    }
}

/// A linear form over the 56 weights.
type Form = [f64; DIM];

const ALL: &[usize] = &[1, 2, 3, 4, 5, 6, 7, 8];
const LOW: &[usize] = &[1, 2, 3, 4];
const HIGH: &[usize] = &[5, 6, 7, 8];
const ACDP: &[Block] = &[Block::A, Block::C, Block::D, Block::P];
const BCDS: &[Block] = &[Block::B, Block::C, Block::D, Block::S];

fn form(parts: &[(&[Block], &[usize], f64)]) -> Form {
    let mut f = [0.0; DIM];
    for (blocks, idx, sign) in parts {
        for &b in *blocks {
            for &i in *idx {
                f[flat(b, i)] += sign;
            }
        }
    }
    f
}

fn diff(blocks: &[Block], pos: &[usize], neg: &[usize]) -> Form {
    form(&[(blocks, pos, 1.0), (blocks, neg, -1.0)])
}

fn dot(f: &Form, w: &[f64]) -> f64 {
    f.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// One signed ratio term `sign · num(w) / den(w)`.
struct Ratio {
    sign: f64,
    num: Form,
    den: Form,
}

fn ratio(sign: f64, num: Form, den: Form) -> Ratio {
    Ratio { sign, num, den }
}

fn lgi_terms() -> Vec<Ratio> {
    use Block::*;
    vec![
        ratio(
            1.0,
            diff(ACDP, &[1, 2], &[3, 4]),
            form(&[(&[A, D], ALL, 1.0), (&[C, P], LOW, 1.0), (&[B, Q], HIGH, 1.0)]),
        ),
        ratio(
            1.0,
            diff(ACDP, &[7, 8], &[5, 6]),
            form(&[(&[A, D], ALL, 1.0), (&[C, P], HIGH, 1.0), (&[B, Q], LOW, 1.0)]),
        ),
        ratio(
            1.0,
            diff(BCDS, &[1, 5], &[2, 6]),
            form(&[
                (&[C, D], ALL, 1.0),
                (&[B, S], &[1, 2, 5, 6], 1.0),
                (&[A, P], &[3, 4, 7, 8], 1.0),
            ]),
        ),
        ratio(
            1.0,
            diff(BCDS, &[4, 8], &[3, 7]),
            form(&[
                (&[C, D], ALL, 1.0),
                (&[B, S], &[3, 4, 7, 8], 1.0),
                (&[A, P], &[1, 2, 5, 6], 1.0),
            ]),
        ),
        ratio(
            -1.0,
            diff(BCDS, &[1, 3], &[2, 4]),
            form(&[(&[B, D], ALL, 1.0), (&[C, S], LOW, 1.0), (&[A, Q], HIGH, 1.0)]),
        ),
        ratio(
            -1.0,
            diff(BCDS, &[6, 8], &[5, 7]),
            form(&[(&[B, D], ALL, 1.0), (&[C, S], HIGH, 1.0), (&[A, Q], LOW, 1.0)]),
        ),
    ]
}

fn wlgi_terms() -> Vec<Ratio> {
    use Block::*;
    vec![
        ratio(
            1.0,
            form(&[(BCDS, &[5, 7], 1.0)]),
            form(&[(&[B, D], ALL, 1.0), (&[C, S], HIGH, 1.0), (&[A, Q], LOW, 1.0)]),
        ),
        ratio(
            -1.0,
            form(&[(ACDP, &[5, 6], 1.0)]),
            form(&[(&[A, D], ALL, 1.0), (&[C, P], HIGH, 1.0), (&[B, Q], LOW, 1.0)]),
        ),
        ratio(
            -1.0,
            form(&[(BCDS, &[3, 7], 1.0)]),
            form(&[
                (&[C, D], ALL, 1.0),
                (&[B, S], &[3, 4, 7, 8], 1.0),
                (&[A, P], &[1, 2, 5, 6], 1.0),
            ]),
        ),
    ]
}

fn terms(ineq: Inequality) -> Vec<Ratio> {
    match ineq {
        Inequality::Lgi => lgi_terms(),
        Inequality::Wlgi => wlgi_terms(),
    }
}

fn evaluate_terms(terms: &[Ratio], w: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (k, t) in terms.iter().enumerate() {
        let den = dot(&t.den, w);
        if den <= 0.0 {
            return Err(Error::DegenerateConfiguration(format!(
                "denominator of ratio term {} is zero",
                k + 1
            )));
        }
        total += t.sign * dot(&t.num, w) / den;
    }
    Ok(total)
}

/// Detector-only LGI expression of the subspace model.
pub fn lgi_detectors_value(w: &HVWeights) -> Result<f64> {
    evaluate_terms(&lgi_terms(), &w.to_flat())
}

/// Detector-only WLGI expression of the subspace model.
pub fn wlgi_detectors_value(w: &HVWeights) -> Result<f64> {
    evaluate_terms(&wlgi_terms(), &w.to_flat())
}

pub fn detectors_value(ineq: Inequality, w: &HVWeights) -> Result<f64> {
    evaluate_terms(&terms(ineq), &w.to_flat())
}

/// Smallest denominator among the ratio terms of `ineq` at `w`.
pub fn min_denominator(ineq: Inequality, w: &HVWeights) -> f64 {
    let w = w.to_flat();
    terms(ineq)
        .iter()
        .map(|t| dot(&t.den, &w))
        .fold(f64::INFINITY, f64::min)
}

/// Closed-form detector-only macrorealist bound.
pub fn closed_form_bound(ineq: Inequality, eta: f64) -> f64 {
    match (ineq, eta < 2.0 / 3.0) {
        (Inequality::Lgi, true) => 8.0 / 3.0,
        (Inequality::Lgi, false) => 2.0 / eta - eta,
        (Inequality::Wlgi, true) => 1.0,
        (Inequality::Wlgi, false) => (1.0 - eta) / (2.0 * eta - 1.0),
    }
}

/// Maximum quantum values the detector-only bounds are compared against.
pub fn quantum_maximum(ineq: Inequality) -> f64 {
    match ineq {
        Inequality::Lgi => 1.5,
        Inequality::Wlgi => 0.4034,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub inequality: Inequality,
    pub eta: f64,
    pub bound: f64,
    pub witness: HVWeights,
    pub formula_value: f64,
    /// Smallest ratio denominator at the witness; values near zero mark a
    /// limit where one run has almost no detected weight.
    pub min_denominator: f64,
}

impl BoundCertificate {
    /// An optimizer value above the closed form is a finding about the
    /// closed form, not a failure of the search.
    pub fn exceeds_formula(&self, tol: f64) -> bool {
        self.bound > self.formula_value + tol
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta <= 1.0 {
        Ok(())
    } else {
        Err(invalid("eta", format!("{eta} not in (0, 1]")))
    }
}

/// The feasible polytope {w ≥ 0 on `support`, efficiency sums = η, Σw ≤ 1}.
struct Polytope {
    eta: f64,
    support: Vec<usize>,
    efficiency: [Form; 3],
}

impl Polytope {
    fn new(eta: f64, support: Vec<usize>) -> Self {
        use Block::*;
        let efficiency = [
            form(&[(&[P, A, B, D], ALL, 1.0)]),
            form(&[(&[Q, A, C, D], ALL, 1.0)]),
            form(&[(&[S, B, C, D], ALL, 1.0)]),
        ];
        Polytope {
            eta,
            support,
            efficiency,
        }
    }

    /// A vertex maximizing `cost · w`, or `None` if the polytope is empty.
    fn vertex(&self, cost: &[f64]) -> Option<[f64; DIM]> {
        let mut lp = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = self
            .support
            .iter()
            .map(|&k| lp.add_var(cost[k], (0.0, f64::INFINITY)))
            .collect();
        for e in &self.efficiency {
            let expr: Vec<_> = vars
                .iter()
                .zip(&self.support)
                .filter(|(_, &k)| e[k] != 0.0)
                .map(|(v, &k)| (*v, e[k]))
                .collect();
            if expr.is_empty() {
                return None;
            }
            lp.add_constraint(expr.as_slice(), ComparisonOp::Eq, self.eta);
        }
        let all: Vec<_> = vars.iter().map(|v| (*v, 1.0)).collect();
        lp.add_constraint(all.as_slice(), ComparisonOp::Le, 1.0);
        let sol = lp.solve().ok()?;
        let mut w = [0.0; DIM];
        for (v, &k) in vars.iter().zip(&self.support) {
            w[k] = sol[*v].max(0.0);
        }
        Some(w)
    }
}

fn objective(terms: &[Ratio], w: &[f64]) -> f64 {
    evaluate_terms(terms, w).unwrap_or(f64::NEG_INFINITY)
}

fn gradient(terms: &[Ratio], w: &[f64]) -> [f64; DIM] {
    let mut g = [0.0; DIM];
    for t in terms {
        let n = dot(&t.num, w);
        let d = dot(&t.den, w);
        for k in 0..DIM {
            g[k] += t.sign * (t.num[k] * d - n * t.den[k]) / (d * d);
        }
    }
    g
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> [f64; DIM] {
    let mut w = [0.0; DIM];
    for k in 0..DIM {
        w[k] = a[k] + t * (b[k] - a[k]);
    }
    w
}

/// Best step length along w → s: coarse scan then golden-section refinement.
fn line_search(terms: &[Ratio], w: &[f64], s: &[f64]) -> (f64, f64) {
    const COARSE: usize = 32;
    let phi = |t: f64| objective(terms, &lerp(w, s, t));
    let (mut best_t, mut best_v) = (0.0, phi(0.0));
    for k in 1..=COARSE {
        let t = k as f64 / COARSE as f64;
        let v = phi(t);
        if v > best_v {
            best_t = t;
            best_v = v;
        }
    }
    let h = 1.0 / COARSE as f64;
    let (mut lo, mut hi) = ((best_t - h).max(0.0), (best_t + h).min(1.0));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if phi(x1) >= phi(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    let t = 0.5 * (lo + hi);
    let v = phi(t);
    if v > best_v {
        (t, v)
    } else {
        (best_t, best_v)
    }
}

/// Conditional-gradient ascent: each step moves toward the polytope vertex
/// maximizing the linearized objective, so iterates stay feasible.
fn ascend(terms: &[Ratio], poly: &Polytope, start: [f64; DIM], max_iter: usize) -> ([f64; DIM], f64) {
    let mut w = start;
    let mut value = objective(terms, &w);
    if !value.is_finite() {
        return (w, value);
    }
    for _ in 0..max_iter {
        let g = gradient(terms, &w);
        let Some(s) = poly.vertex(&g) else { break };
        let gap: f64 = (0..DIM).map(|k| g[k] * (s[k] - w[k])).sum();
        if gap <= 1e-13 {
            break;
        }
        let (t, v) = line_search(terms, &w, &s);
        if v <= value + 1e-15 {
            break;
        }
        w = lerp(&w, &s, t);
        value = v;
    }
    (w, value)
}

/// Search settings for the detector-only maximization.
#[derive(Clone, Debug)]
pub struct SearchOptions {
    pub random_starts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            random_starts: 48,
            max_iter: 400,
            seed: 0x5eed_4856,
        }
    }
}

/// The two witness families printed with the closed-form bounds.
pub fn witness_patterns(ineq: Inequality, eta: f64) -> Vec<HVWeights> {
    use Block::*;
    let mut out = Vec::new();
    if 1.5 * eta <= 1.0 {
        out.push(
            HVWeights::zero()
                .with(A, 7, eta / 2.0)
                .with(B, 5, eta / 2.0)
                .with(C, 1, eta / 2.0),
        );
    }
    if eta >= 2.0 / 3.0 {
        let r = 1.0 - eta;
        let base = match ineq {
            Inequality::Lgi => HVWeights::zero().with(A, 1, r).with(B, 4, r),
            Inequality::Wlgi => HVWeights::zero().with(A, 7, r).with(B, 5, r),
        };
        out.push(base.with(C, 1, r).with(D, 1, 3.0 * eta - 2.0));
    }
    out
}

fn search(
    ineq: Inequality,
    eta: f64,
    support: Vec<usize>,
    seeds: Vec<[f64; DIM]>,
    opts: &SearchOptions,
) -> Option<([f64; DIM], f64)> {
    let terms = terms(ineq);
    let poly = Polytope::new(eta, support);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let random_vertex = |rng: &mut ChaCha8Rng| {
        let cost: Vec<f64> = (0..DIM).map(|_| rng.random::<f64>() - 0.5).collect();
        poly.vertex(&cost)
    };
    // Centroid of several random vertices: a start with, typically, every
    // denominator positive.
    let vertices: Vec<_> = (0..8).filter_map(|_| random_vertex(&mut rng)).collect();
    if vertices.is_empty() {
        return None;
    }
    let mut anchor = [0.0; DIM];
    for v in &vertices {
        for k in 0..DIM {
            anchor[k] += v[k] / vertices.len() as f64;
        }
    }
    let mut starts = seeds;
    starts.push(anchor);
    starts.extend(vertices);
    for _ in 0..opts.random_starts {
        if let Some(v) = random_vertex(&mut rng) {
            let mix: f64 = rng.random_range(0.05..0.95);
            starts.push(lerp(&anchor, &v, mix));
            starts.push(v);
        }
    }
    starts
        .into_par_iter()
        .map(|s| ascend(&terms, &poly, s, opts.max_iter))
        .filter(|(_, v)| v.is_finite())
        .reduce_with(|a, b| if b.1 > a.1 { b } else { a })
}

/// Maximizes the detector-only expression over the feasible weights at `eta`.
pub fn maximize_detectors(ineq: Inequality, eta: f64, opts: &SearchOptions) -> Result<BoundCertificate> {
    check_eta(eta)?;
    let seeds = witness_patterns(ineq, eta)
        .iter()
        .map(HVWeights::to_flat)
        .collect();
    let (w, bound) = search(ineq, eta, (0..DIM).collect(), seeds, opts)
        .ok_or_else(|| Error::DegenerateConfiguration(format!("no feasible weights at eta={eta}")))?;
    let witness = HVWeights::from_flat(&w);
    Ok(BoundCertificate {
        inequality: ineq,
        eta,
        bound,
        min_denominator: min_denominator(ineq, &witness),
        witness,
        formula_value: closed_form_bound(ineq, eta),
    })
}

pub fn maximize_lgi_detectors(eta: f64) -> Result<BoundCertificate> {
    maximize_detectors(Inequality::Lgi, eta, &SearchOptions::default())
}

pub fn maximize_wlgi_detectors(eta: f64) -> Result<BoundCertificate> {
    maximize_detectors(Inequality::Wlgi, eta, &SearchOptions::default())
}

/// Maximum over weights supported on the given flat indices; `None` when no
/// feasible point on that support has all denominators positive.
pub fn maximize_on_support(
    ineq: Inequality,
    eta: f64,
    support: &[usize],
    opts: &SearchOptions,
) -> Result<Option<(f64, HVWeights)>> {
    check_eta(eta)?;
    Ok(search(ineq, eta, support.to_vec(), Vec::new(), opts)
        .map(|(w, v)| (v, HVWeights::from_flat(&w))))
}

/// Efficiency below which the detector-only bound reaches the quantum maximum.
pub fn critical_efficiency(ineq: Inequality) -> f64 {
    let target = quantum_maximum(ineq);
    // The bound decreases on [2/3, 1], from above the target to below it.
    let (mut lo, mut hi) = (2.0 / 3.0, 1.0);
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        if closed_form_bound(ineq, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Value of the blocker-setup expression when every hidden state in Λ₃
/// yields the deterministic outcome triple `t`.
fn blocker_setup_value(ineq: Inequality, t: [Sign; 3]) -> f64 {
    use Sign::{Minus as M, Plus as P};
    let [q1, q2, q3] = t;
    let ind = |c: bool| if c { 1.0 } else { 0.0 };
    match ineq {
        Inequality::Lgi => {
            q1.value() * q2.value() + q2.value() * q3.value() - q1.value() * q3.value()
        }
        Inequality::Wlgi => {
            ind(q1 == M && q3 == P) - ind(q1 == M && q2 == P) - ind(q2 == M && q3 == P)
        }
    }
}

/// Macrorealist bound of the blocker-based setup. Only Λ₃ contributes and η
/// cancels between numerators and denominators, so the optimum over response
/// distributions is attained at one of the eight deterministic triples.
pub fn blocker_setup_bound(ineq: Inequality, eta: f64) -> Result<BoundCertificate> {
    check_eta(eta)?;
    let (best_i, bound) = (1..=8)
        .map(|i| (i, blocker_setup_value(ineq, triple(i))))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let witness = HVWeights::zero().with(Block::D, best_i, eta);
    Ok(BoundCertificate {
        inequality: ineq,
        eta,
        bound,
        min_denominator: min_denominator(ineq, &witness),
        witness,
        formula_value: match ineq {
            Inequality::Lgi => 1.0,
            Inequality::Wlgi => 0.0,
        },
    })
}
