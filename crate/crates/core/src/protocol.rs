//! Run/sub-run protocol shared by the model, the simulator and the analysis.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Outcome of a dichotomic measurement, also used to name the two arms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub const BOTH: [Sign; 2] = [Sign::Plus, Sign::Minus];

    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }
}

pub fn label(outcomes: &[Sign]) -> String {
    outcomes.iter().map(|s| s.symbol()).collect()
}

pub fn parse_label(text: &str) -> Option<Vec<Sign>> {
    text.chars()
        .filter(|c| !matches!(c, '(' | ')' | ',' | ' '))
        .map(|c| match c {
            '+' => Some(Sign::Plus),
            '-' | '−' => Some(Sign::Minus),
            _ => None,
        })
        .collect()
}

/// Which arm, if any, carries a blocker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Blocker {
    None,
    Plus,
    Minus,
}

impl Blocker {
    pub fn blocks(self, arm: Sign) -> bool {
        matches!(
            (self, arm),
            (Blocker::Plus, Sign::Plus) | (Blocker::Minus, Sign::Minus)
        )
    }

    /// Outcome inferred for a photon that survived this blocker.
    pub fn inferred(self) -> Option<Sign> {
        match self {
            Blocker::None => None,
            Blocker::Plus => Some(Sign::Minus),
            Blocker::Minus => Some(Sign::Plus),
        }
    }

    fn inferring(outcome: Sign) -> Blocker {
        match outcome {
            Sign::Plus => Blocker::Minus,
            Sign::Minus => Blocker::Plus,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockerConfig {
    pub block_t1: Blocker,
    pub block_t2: Blocker,
}

impl BlockerConfig {
    pub const OPEN: BlockerConfig = BlockerConfig {
        block_t1: Blocker::None,
        block_t2: Blocker::None,
    };

    pub fn new(block_t1: Blocker, block_t2: Blocker) -> Self {
        BlockerConfig { block_t1, block_t2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Run {
    One,
    Two,
    Three,
    Four,
}

impl Run {
    pub const ALL: [Run; 4] = [Run::One, Run::Two, Run::Three, Run::Four];

    pub fn number(self) -> u8 {
        match self {
            Run::One => 1,
            Run::Two => 2,
            Run::Three => 3,
            Run::Four => 4,
        }
    }

    /// Runs with no blocker at t₂ keep both Sagnac paths open and interfere.
    pub fn is_interference(self) -> bool {
        matches!(self, Run::Two | Run::Four)
    }

    pub fn sub_runs(self) -> impl Iterator<Item = SubRun> {
        PROTOCOL.into_iter().filter(move |s| s.run == self)
    }

    pub fn times(self) -> &'static str {
        match self {
            Run::One => "t2,t3",
            Run::Two => "t1,t3",
            Run::Three => "t1,t2,t3",
            Run::Four => "t3",
        }
    }
}

impl fmt::Display for Run {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run {}", self.number())
    }
}

/// One blocker arrangement of the protocol table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubRun {
    pub run: Run,
    pub index: u8,
    pub blockers: BlockerConfig,
}

const fn sub(run: Run, index: u8, block_t1: Blocker, block_t2: Blocker) -> SubRun {
    SubRun {
        run,
        index,
        blockers: BlockerConfig { block_t1, block_t2 },
    }
}

/// The nine sub-runs, in protocol order. Within a run, sub-runs are ordered
/// so that the inferred outcome prefixes read (+…) before (−…).
pub const PROTOCOL: [SubRun; 9] = [
    sub(Run::One, 1, Blocker::None, Blocker::Minus),
    sub(Run::One, 2, Blocker::None, Blocker::Plus),
    sub(Run::Two, 1, Blocker::Minus, Blocker::None),
    sub(Run::Two, 2, Blocker::Plus, Blocker::None),
    sub(Run::Three, 1, Blocker::Minus, Blocker::Minus),
    sub(Run::Three, 2, Blocker::Minus, Blocker::Plus),
    sub(Run::Three, 3, Blocker::Plus, Blocker::Minus),
    sub(Run::Three, 4, Blocker::Plus, Blocker::Plus),
    sub(Run::Four, 1, Blocker::None, Blocker::None),
];

impl SubRun {
    pub fn id(&self) -> String {
        format!("{}.{}", self.run.number(), self.index)
    }

    pub fn parse(id: &str) -> Option<SubRun> {
        PROTOCOL.into_iter().find(|s| s.id() == id.trim())
    }

    /// Sub-run of `run` whose blockers infer the given earlier outcomes.
    pub fn inferring(run: Run, prefix: &[Sign]) -> Option<SubRun> {
        let wanted = match (run, prefix) {
            (Run::One, [q2]) => BlockerConfig::new(Blocker::None, Blocker::inferring(*q2)),
            (Run::Two, [q1]) => BlockerConfig::new(Blocker::inferring(*q1), Blocker::None),
            (Run::Three, [q1, q2]) => {
                BlockerConfig::new(Blocker::inferring(*q1), Blocker::inferring(*q2))
            }
            (Run::Four, []) => BlockerConfig::OPEN,
            _ => return None,
        };
        PROTOCOL
            .into_iter()
            .find(|s| s.run == run && s.blockers == wanted)
    }

    /// Outcomes at earlier times inferred from the blocker positions.
    pub fn prefix(&self) -> Vec<Sign> {
        [self.blockers.block_t1, self.blockers.block_t2]
            .iter()
            .filter_map(|b| b.inferred())
            .collect()
    }

    /// Full outcome tuple recorded when the t₃ detector `out` clicks.
    pub fn outcome(&self, out: Sign) -> Vec<Sign> {
        let mut tuple = self.prefix();
        tuple.push(out);
        tuple
    }
}

impl fmt::Display for SubRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sub-run {}", self.id())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn nine_distinct_configurations() {
        let configs: HashSet<_> = PROTOCOL.iter().map(|s| s.blockers).collect();
        assert_eq!(configs.len(), 9);
        let counts: Vec<usize> = Run::ALL.iter().map(|r| r.sub_runs().count()).collect();
        assert_eq!(counts, vec![2, 2, 4, 1]);
    }

    #[test]
    fn blocker_infers_the_complementary_arm() {
        let s = SubRun::parse("3.2").unwrap();
        assert_eq!(s.prefix(), vec![Sign::Plus, Sign::Minus]);
        assert_eq!(s.outcome(Sign::Minus), vec![Sign::Plus, Sign::Minus, Sign::Minus]);
        assert_eq!(SubRun::inferring(Run::Three, &[Sign::Plus, Sign::Minus]), Some(s));
    }

    #[test]
    fn every_prefix_has_exactly_one_sub_run() {
        for run in Run::ALL {
            for s in run.sub_runs() {
                assert_eq!(SubRun::inferring(run, &s.prefix()), Some(s));
            }
        }
    }

    #[test]
    fn labels_round_trip() {
        let t = vec![Sign::Minus, Sign::Plus, Sign::Plus];
        assert_eq!(label(&t), "-++");
        assert_eq!(parse_label("(-,+,+)"), Some(t));
        assert_eq!(parse_label("+x"), None);
    }
}
