//! Two-photon realist model, γ-modified bounds, predicted singles and
//! coincidences for the four blocker sets, and the χ² fit of γ.

use crate::error::{invalid, Error, Result};
use crate::optim::NelderMead;
use crate::protocol::{parse_label, Blocker, Sign};
use crate::tables::{assemble, evaluate, InequalityValues, ProbabilityTables};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Read;

/// Outcome triples carried by the two photons of the deterministic model,
/// given the t₁ blocker position.
fn two_photon_triples(block_t1: Blocker) -> [[Sign; 3]; 2] {
    use Sign::{Minus as M, Plus as P};
    match block_t1 {
        Blocker::None => [[P, P, P], [M, M, M]],
        Blocker::Minus => [[P, P, M], [M, M, M]],
        Blocker::Plus => [[P, P, P], [M, M, P]],
    }
}

/// Protocol tables of the two-photon model, obtained by running every
/// sub-run with the same bookkeeping as the experiment: a photon meeting a
/// blocker is lost, a surviving photon clicks the detector of its t₃ outcome.
pub fn two_photon_joint_probs() -> Result<ProbabilityTables> {
    assemble(|s| {
        let mut clicks = (0.0, 0.0);
        for [q1, q2, q3] in two_photon_triples(s.blockers.block_t1) {
            if s.blockers.block_t1.blocks(q1) || s.blockers.block_t2.blocks(q2) {
                continue;
            }
            match q3 {
                Sign::Plus => clicks.0 += 1.0,
                Sign::Minus => clicks.1 += 1.0,
            }
        }
        Some(clicks)
    })
}

pub fn two_photon_values() -> Result<InequalityValues> {
    two_photon_joint_probs().map(|t| evaluate(&t))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModifiedBounds {
    pub lgi_bound: f64,
    pub wlgi_bound: f64,
}

/// Macrorealist bounds when a fraction γ of events carries two photons:
/// γ × (two-photon value) + (1 − γ) × (single-photon bound).
pub fn modified_bounds(gamma: f64) -> Result<ModifiedBounds> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid("gamma", format!("{gamma} not in [0, 1)")));
    }
    let two = two_photon_values()?;
    Ok(ModifiedBounds {
        lgi_bound: gamma * two.lgi + (1.0 - gamma) * 1.0,
        wlgi_bound: gamma * two.wlgi + (1.0 - gamma) * 0.0,
    })
}

/// Parameters of the twelve count equations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaFitParams {
    pub alpha_sq: f64,
    pub t: [f64; 4],
    pub eta1: f64,
    pub eta2: f64,
    /// Total photon events.
    pub n: f64,
    pub gamma: f64,
}

impl GammaFitParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(invalid(name, format!("{x} not in [0, 1]")))
            }
        };
        unit("alpha_sq", self.alpha_sq)?;
        for (i, t) in self.t.iter().enumerate() {
            unit(&format!("t[{i}]"), *t)?;
        }
        unit("eta1", self.eta1)?;
        unit("eta2", self.eta2)?;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid("gamma", format!("{} not in [0, 1)", self.gamma)));
        }
        if !(self.n > 0.0) {
            return Err(invalid("n", format!("{} must be positive", self.n)));
        }
        Ok(())
    }

    pub fn n1(&self) -> f64 {
        (1.0 - self.gamma) * self.n
    }

    pub fn n2(&self) -> f64 {
        self.gamma * self.n
    }

    fn get(&self, k: usize) -> f64 {
        match k {
            0 => self.alpha_sq,
            1..=4 => self.t[k - 1],
            5 => self.eta1,
            6 => self.eta2,
            7 => self.gamma,
            _ => self.n,
        }
    }

    fn set(&mut self, k: usize, v: f64) {
        match k {
            0 => self.alpha_sq = v,
            1..=4 => self.t[k - 1] = v,
            5 => self.eta1 = v,
            6 => self.eta2 = v,
            7 => self.gamma = v,
            _ => self.n = v,
        }
    }
}

pub const PARAM_NAMES: [&str; 9] = [
    "alpha_sq", "t1", "t2", "t3", "t4", "eta1", "eta2", "gamma", "n",
];

/// Blocker-set labels in table order.
pub const SET_LABELS: [&str; 4] = ["++", "+-", "-+", "--"];

/// Singles C₁, C₂ and coincidences C₁,₂ for the four blocker sets, stored
/// set by set: [C₁(+,+), C₂(+,+), C₁,₂(+,+), C₁(+,−), …].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountVector12(pub [f64; 12]);

/// The measured table of singles and coincidences.
pub const BUNDLED_COUNTS: CountVector12 = CountVector12([
    9412.0, 36458.33, 7.67, 9589.33, 2611.67, 0.67, 2206.0, 11286.0, 1.0, 32375.33, 10656.67,
    7.33,
]);

impl CountVector12 {
    pub fn cell_name(k: usize) -> String {
        let kind = ["C1", "C2", "C12"][k % 3];
        format!("{kind}({})", SET_LABELS[k / 3])
    }

    /// Reads `set_label,C1,C2,C12` rows, one per blocker set.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Malformed(format!("missing column `{name}`")))
        };
        let (cl, c1, c2, c12) = (col("set_label")?, col("C1")?, col("C2")?, col("C12")?);
        let mut out = [f64::NAN; 12];
        for row in rdr.records() {
            let row = row?;
            let field = |i: usize| row.get(i).unwrap_or("");
            let set = parse_label(field(cl))
                .and_then(|t| SET_LABELS.iter().position(|l| parse_label(l) == Some(t.clone())))
                .ok_or_else(|| Error::Malformed(format!("unknown set label `{}`", field(cl))))?;
            for (j, idx) in [c1, c2, c12].into_iter().enumerate() {
                let v: f64 = field(idx).parse().map_err(|_| {
                    Error::Malformed(format!("non-numeric count `{}`", field(idx)))
                })?;
                if !(v >= 0.0) {
                    return Err(Error::Malformed(format!("negative count {v}")));
                }
                out[3 * set + j] = v;
            }
        }
        if let Some(k) = out.iter().position(|v| v.is_nan()) {
            return Err(Error::Malformed(format!(
                "missing row for set {}",
                SET_LABELS[k / 3]
            )));
        }
        Ok(CountVector12(out))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("set_label,C1,C2,C12\n");
        for (k, l) in SET_LABELS.iter().enumerate() {
            let v = &self.0[3 * k..3 * k + 3];
            s.push_str(&format!("{l},{},{},{}\n", v[0], v[1], v[2]));
        }
        s
    }
}

/// `x²η(2−η) + 2xyη`: at least one click at a detector reached with
/// probability x by each of two independent photons (y the other port).
fn two_photon_click(x: f64, y: f64, eta: f64) -> f64 {
    x * x * eta * (2.0 - eta) + 2.0 * x * y * eta
}

/// The twelve singles/coincidence equations of the two-photon count model.
pub fn predicted_counts(p: &GammaFitParams) -> CountVector12 {
    let (a, b) = (p.alpha_sq, 1.0 - p.alpha_sq);
    let [t1, t2, t3, t4] = p.t;
    let (r1, r2, r3, r4) = (1.0 - t1, 1.0 - t2, 1.0 - t3, 1.0 - t4);
    let (e1, e2) = (p.eta1, p.eta2);
    let (n1, n2) = (p.n1(), p.n2());

    // One set: single-photon path weight `w`, source weight `src` (|α|² or
    // |β|²), the first-splitter coefficient `x` on the open arm, the
    // one-photon-surviving mixing term `mix`, and the second splitter
    // split (to detector 1, to detector 2).
    let set = |w: f64, src2: f64, x: f64, mix: f64, d1: f64, d2: f64| -> [f64; 3] {
        [
            n1 * w * d1 * e1 + n2 * src2 * x * x * two_photon_click(d1, d2, e1) + n2 * mix * d1 * e1,
            n1 * w * d2 * e2 + n2 * src2 * x * x * two_photon_click(d2, d1, e2) + n2 * mix * d2 * e2,
            2.0 * n2 * src2 * x * x * d1 * d2 * e1 * e2,
        ]
    };
    let mix_alpha = |x: f64| a * a * 2.0 * t1 * r1 + 2.0 * a * b * x;
    let mix_beta = |x: f64| b * b * 2.0 * t4 * r4 + 2.0 * a * b * x;
    let s1 = set(a * t1, a * a, t1, mix_alpha(t1), r2, t2);
    let s2 = set(a * r1, a * a, r1, mix_alpha(r1), t3, r3);
    let s3 = set(b * r4, b * b, r4, mix_beta(r4), r2, t2);
    let s4 = set(b * t4, b * b, t4, mix_beta(t4), t3, r3);
    let mut out = [0.0; 12];
    for (k, s) in [s1, s2, s3, s4].iter().enumerate() {
        out[3 * k..3 * k + 3].copy_from_slice(s);
    }
    CountVector12(out)
}

/// Pearson χ² of observed against predicted counts.
pub fn chi_squared(observed: &CountVector12, predicted: &CountVector12) -> Result<f64> {
    let mut chi2 = 0.0;
    for (k, (o, e)) in observed.0.iter().zip(&predicted.0).enumerate() {
        if !(*e > 0.0) {
            return Err(Error::ZeroPrediction(k));
        }
        chi2 += (o - e).powi(2) / e;
    }
    Ok(chi2)
}

/// Box bounds of the fit, in [`PARAM_NAMES`] order.
pub const FIT_BOX: [(f64, f64); 9] = [
    (0.3, 0.7),
    (0.5, 0.95),
    (0.5, 0.95),
    (0.5, 0.95),
    (0.5, 0.95),
    (0.3, 0.9),
    (0.3, 0.9),
    (0.0, 0.05),
    (1e4, 1e7),
];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_evals: usize,
    /// Parameters held at a known value, in [`PARAM_NAMES`] order.
    pub fixed: [Option<f64>; 9],
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 50,
            seed: 0x6a33_a0f1,
            max_evals: 20_000,
            fixed: [None; 9],
        }
    }
}

impl FitOptions {
    /// Pins both detector efficiencies, which makes γ identifiable.
    pub fn with_efficiencies(mut self, eta1: f64, eta2: f64) -> Self {
        self.fixed[5] = Some(eta1);
        self.fixed[6] = Some(eta2);
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.fixed[7] = Some(gamma);
        self
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaFit {
    pub params: GammaFitParams,
    pub chi2: f64,
    pub converged: bool,
    pub restarts: usize,
    pub free: Vec<String>,
}

/// Free coordinate u ↦ box value. The sine map keeps every u feasible; N is
/// searched on a log scale.
fn from_unbounded(k: usize, u: f64) -> f64 {
    let (lo, hi) = FIT_BOX[k];
    let s = 0.5 * (1.0 + u.sin());
    if k == 8 {
        (lo.ln() + s * (hi.ln() - lo.ln())).exp()
    } else {
        lo + s * (hi - lo)
    }
}

fn to_unbounded(k: usize, x: f64) -> f64 {
    let (lo, hi) = FIT_BOX[k];
    let s = if k == 8 {
        (x.ln() - lo.ln()) / (hi.ln() - lo.ln())
    } else {
        (x - lo) / (hi - lo)
    };
    (2.0 * s.clamp(0.0, 1.0) - 1.0).asin()
}

fn validate_counts(observed: &CountVector12) -> Result<()> {
    if observed.0.iter().all(|v| v.is_finite() && *v >= 0.0) {
        Ok(())
    } else {
        Err(Error::Malformed("counts must be finite and non-negative".into()))
    }
}

/// Minimizes χ² over the free parameters with multistart Nelder–Mead.
pub fn fit_gamma(observed: &CountVector12, opts: &FitOptions) -> Result<GammaFit> {
    validate_counts(observed)?;
    let free: Vec<usize> = (0..9).filter(|&k| opts.fixed[k].is_none()).collect();
    let mut base = GammaFitParams {
        alpha_sq: 0.5,
        t: [0.7; 4],
        eta1: 0.6,
        eta2: 0.6,
        n: 1e5,
        gamma: 0.0,
    };
    for (k, v) in opts.fixed.iter().enumerate() {
        if let Some(v) = v {
            base.set(k, *v);
        }
    }
    base.validate()?;

    let params_at = |u: &[f64]| {
        let mut p = base;
        for (j, &k) in free.iter().enumerate() {
            p.set(k, from_unbounded(k, u[j]));
        }
        p
    };
    let objective = |u: &[f64]| {
        chi_squared(observed, &predicted_counts(&params_at(u))).unwrap_or(f64::INFINITY)
    };
    let nm = NelderMead {
        max_evals: opts.max_evals,
        f_tol: 1e-13,
        x_tol: 1e-9,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts: Vec<Vec<f64>> = (0..opts.restarts.max(1))
        .map(|_| {
            free.iter()
                .map(|&k| {
                    let (lo, hi) = FIT_BOX[k];
                    let x = if k == 8 {
                        (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
                    } else {
                        lo + rng.random::<f64>() * (hi - lo)
                    };
                    to_unbounded(k, x)
                })
                .collect()
        })
        .collect();

    let best = starts
        .par_iter()
        .map(|u0| nm.minimize_restarting(objective, u0, &vec![0.4; free.len()], 6))
        .reduce_with(|a, b| if b.value < a.value { b } else { a })
        .expect("at least one restart");

    Ok(GammaFit {
        params: params_at(&best.x),
        chi2: best.value,
        converged: best.converged && best.value.is_finite(),
        restarts: opts.restarts.max(1),
        free: free.iter().map(|&k| PARAM_NAMES[k].to_string()).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub gamma: f64,
    pub chi2: f64,
}

/// Minimum χ² with γ held at each grid value and every other parameter
/// free. A flat profile means the counts do not determine γ.
pub fn gamma_profile(
    observed: &CountVector12,
    gammas: &[f64],
    opts: &FitOptions,
) -> Result<Vec<ProfilePoint>> {
    gammas
        .iter()
        .map(|&g| {
            let fit = fit_gamma(observed, &opts.clone().with_gamma(g))?;
            Ok(ProfilePoint {
                gamma: g,
                chi2: fit.chi2,
            })
        })
        .collect()
}

/// Value of parameter `k` (in [`PARAM_NAMES`] order).
pub fn param(p: &GammaFitParams, k: usize) -> f64 {
    p.get(k)
}
