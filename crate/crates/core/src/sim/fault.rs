use std::collections::BTreeMap;
use std::fmt;

use super::{Time, WorldRank};

/// When a rank stops.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FailAt {
    BeforeStart,
    At(Time),
}

impl FailAt {
    /// First virtual time at which the rank is dead.
    pub fn death_time(self) -> Time {
        match self {
            FailAt::BeforeStart => 0,
            FailAt::At(t) => t,
        }
    }
}

impl fmt::Display for FailAt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailAt::BeforeStart => write!(f, "start"),
            FailAt::At(t) => write!(f, "t{t}"),
        }
    }
}

/// Fail-stop schedule, one entry per rank.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FaultPlan {
    entries: BTreeMap<WorldRank, FailAt>,
}

impl FaultPlan {
    pub fn new() -> Self {
        Self::default()
    }

    /// Plan where every listed rank is dead before the run starts.
    pub fn before_start<I: IntoIterator<Item = u32>>(ranks: I) -> Self {
        let mut plan = FaultPlan::new();
        for r in ranks {
            plan.insert(WorldRank(r), FailAt::BeforeStart);
        }
        plan
    }

    /// Records a failure; an earlier existing failure wins.
    pub fn insert(&mut self, rank: WorldRank, at: FailAt) {
        self.entries
            .entry(rank)
            .and_modify(|cur| {
                if at.death_time() < cur.death_time() {
                    *cur = at;
                }
            })
            .or_insert(at);
    }

    pub fn get(&self, rank: WorldRank) -> Option<FailAt> {
        self.entries.get(&rank).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (WorldRank, FailAt)> + '_ {
        self.entries.iter().map(|(r, a)| (*r, *a))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prestart_count(&self) -> usize {
        self.entries
            .values()
            .filter(|a| matches!(a, FailAt::BeforeStart))
            .count()
    }

    pub fn midrun_count(&self) -> usize {
        self.len() - self.prestart_count()
    }

    pub fn is_prestart_only(&self) -> bool {
        self.midrun_count() == 0
    }

    pub fn alive_at_start(&self, rank: WorldRank) -> bool {
        !matches!(self.get(rank), Some(FailAt::BeforeStart))
    }
}
