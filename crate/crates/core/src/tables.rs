//! Joint probability tables and the inequality expressions built from them.

use crate::error::{Error, Result};
use crate::protocol::{label, BlockerConfig, Run, Sign, SubRun};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Order {
    OneTime,
    TwoTime,
    ThreeTime,
}

impl Order {
    pub fn arity(self) -> usize {
        match self {
            Order::OneTime => 1,
            Order::TwoTime => 2,
            Order::ThreeTime => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointProbTable {
    pub order: Order,
    pub entries: BTreeMap<Vec<Sign>, f64>,
    /// Blocker configurations and the raw detected weight each contributed.
    pub provenance: Vec<(BlockerConfig, f64)>,
}

fn all_tuples(arity: usize) -> Vec<Vec<Sign>> {
    (0..1usize << arity)
        .map(|bits| {
            (0..arity)
                .map(|k| {
                    if bits >> (arity - 1 - k) & 1 == 0 {
                        Sign::Plus
                    } else {
                        Sign::Minus
                    }
                })
                .collect()
        })
        .collect()
}

impl JointProbTable {
    /// Normalizes raw weights by their total.
    pub fn normalize(
        order: Order,
        raw: &BTreeMap<Vec<Sign>, f64>,
        provenance: Vec<(BlockerConfig, f64)>,
        what: &str,
    ) -> Result<Self> {
        let total: f64 = raw.values().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::UndefinedProbability(format!(
                "total weight of {what} is {total}"
            )));
        }
        let entries = all_tuples(order.arity())
            .into_iter()
            .map(|t| {
                let w = raw.get(&t).copied().unwrap_or(0.0);
                (t, w / total)
            })
            .collect();
        Ok(JointProbTable {
            order,
            entries,
            provenance,
        })
    }

    pub fn get(&self, outcomes: &[Sign]) -> f64 {
        self.entries.get(outcomes).copied().unwrap_or(0.0)
    }

    pub fn pp(&self, a: Sign, b: Sign) -> f64 {
        self.get(&[a, b])
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    /// ⟨Q_i Q_j⟩ of a two-time table.
    pub fn correlation(&self) -> f64 {
        self.entries
            .iter()
            .map(|(t, p)| t.iter().map(|s| s.value()).product::<f64>() * p)
            .sum()
    }

    /// Sums out the last time (arrow-of-time marginalization).
    pub fn marginalize_last(&self) -> JointProbTable {
        let order = match self.order {
            Order::ThreeTime => Order::TwoTime,
            _ => Order::OneTime,
        };
        let mut entries: BTreeMap<Vec<Sign>, f64> = BTreeMap::new();
        for (t, p) in &self.entries {
            *entries.entry(t[..t.len() - 1].to_vec()).or_insert(0.0) += p;
        }
        JointProbTable {
            order,
            entries,
            provenance: self.provenance.clone(),
        }
    }

    /// Entries keyed by their text label, e.g. `"+-"`.
    pub fn labelled(&self) -> BTreeMap<String, f64> {
        self.entries.iter().map(|(t, p)| (label(t), *p)).collect()
    }
}

/// Every table the protocol produces.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityTables {
    pub p23: JointProbTable,
    pub p13: JointProbTable,
    pub p123: JointProbTable,
    pub p12: JointProbTable,
    pub p3: JointProbTable,
}

/// Assembles the tables from per-sub-run detected weights `(plus, minus)`.
/// Each run is normalized by its own total; `P_{t1,t2}` comes from the
/// three-time table by marginalization.
pub fn assemble(weights: impl Fn(&SubRun) -> Option<(f64, f64)>) -> Result<ProbabilityTables> {
    let mut per_run = Vec::with_capacity(4);
    for run in Run::ALL {
        let mut raw = BTreeMap::new();
        let mut provenance = Vec::new();
        for s in run.sub_runs() {
            let (plus, minus) = weights(&s)
                .ok_or_else(|| Error::Missing(format!("{run} ({s})")))?;
            raw.insert(s.outcome(Sign::Plus), plus);
            raw.insert(s.outcome(Sign::Minus), minus);
            provenance.push((s.blockers, plus + minus));
        }
        let order = match run {
            Run::Three => Order::ThreeTime,
            Run::Four => Order::OneTime,
            _ => Order::TwoTime,
        };
        per_run.push(JointProbTable::normalize(
            order,
            &raw,
            provenance,
            &run.to_string(),
        )?);
    }
    let p3 = per_run.pop().unwrap();
    let p123 = per_run.pop().unwrap();
    let p13 = per_run.pop().unwrap();
    let p23 = per_run.pop().unwrap();
    let p12 = p123.marginalize_last();
    Ok(ProbabilityTables {
        p23,
        p13,
        p123,
        p12,
        p3,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityValues {
    pub lgi: f64,
    pub wlgi: f64,
    pub nsit12: f64,
    pub nsit23: f64,
    pub nsit13: f64,
    pub q12: f64,
    pub q23: f64,
    pub q13: f64,
}

/// Point values of LGI, WLGI and the three NSIT conditions.
pub fn evaluate(t: &ProbabilityTables) -> InequalityValues {
    use Sign::{Minus as M, Plus as P};
    let q12 = t.p12.correlation();
    let q23 = t.p23.correlation();
    let q13 = t.p13.correlation();
    let p3_plus = t.p3.get(&[P]);
    InequalityValues {
        lgi: q12 + q23 - q13,
        wlgi: t.p13.pp(M, P) - t.p12.pp(M, P) - t.p23.pp(M, P),
        nsit12: ((t.p23.pp(P, P) + t.p23.pp(P, M)) - (t.p12.pp(P, P) + t.p12.pp(M, P))).abs(),
        nsit23: (p3_plus - t.p23.pp(P, P) - t.p23.pp(M, P)).abs(),
        nsit13: (p3_plus - t.p13.pp(P, P) - t.p13.pp(M, P)).abs(),
        q12,
        q23,
        q13,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_counts_give_uniform_tables() {
        let t = assemble(|_| Some((7.0, 7.0))).unwrap();
        assert!((t.p23.get(&[Sign::Plus, Sign::Minus]) - 0.25).abs() < 1e-15);
        assert!((t.p123.get(&[Sign::Minus; 3]) - 0.125).abs() < 1e-15);
        assert!((t.p3.get(&[Sign::Plus]) - 0.5).abs() < 1e-15);
        let v = evaluate(&t);
        assert!(v.lgi.abs() < 1e-15);
        assert!((v.wlgi + 0.25).abs() < 1e-15);
        assert!(v.nsit12 < 1e-15 && v.nsit23 < 1e-15 && v.nsit13 < 1e-15);
    }

    #[test]
    fn missing_sub_run_names_the_run() {
        let err = assemble(|s| (s.id() != "3.2").then_some((1.0, 1.0))).unwrap_err();
        assert!(err.to_string().contains("run 3"), "{err}");
    }

    #[test]
    fn zero_run_total_is_undefined() {
        let err = assemble(|s| Some(if s.run == Run::Four { (0.0, 0.0) } else { (1.0, 2.0) }))
            .unwrap_err();
        assert!(matches!(err, Error::UndefinedProbability(_)));
    }

    #[test]
    fn marginalization_preserves_total() {
        let t = assemble(|s| Some((s.index as f64, 3.0))).unwrap();
        assert!((t.p12.total() - t.p123.total()).abs() < 1e-15);
        for a in Sign::BOTH {
            for b in Sign::BOTH {
                let direct = t.p123.get(&[a, b, Sign::Plus]) + t.p123.get(&[a, b, Sign::Minus]);
                assert_eq!(t.p12.pp(a, b), direct);
            }
        }
    }

    #[test]
    fn tuple_ordering_is_lexicographic_plus_first() {
        let order: Vec<String> = all_tuples(2).iter().map(|t| label(t)).collect();
        assert_eq!(order, vec!["++", "+-", "-+", "--"]);
    }
}
