//! Liveness discovery: every live member of a group learns which members
//! are still alive, via a binomial gather/broadcast over point-to-point
//! messages.

pub mod codec;
mod engine;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::ConfigError;
use crate::sim::{OpError, Proc, ProcessEnd, RunOutcome, World, WorldRank};
use crate::topology::{AlgRank, TreeShape};

pub use codec::{decode_rank_set, encode_rank_set, Layout, RankSetPayload};

/// Ordered, duplicate-free list of world ranks; algorithm rank `i` is
/// `members[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupSpec {
    members: Vec<WorldRank>,
    index: HashMap<WorldRank, AlgRank>,
}

impl GroupSpec {
    pub fn new(members: Vec<WorldRank>) -> Result<Self, ConfigError> {
        if members.is_empty() {
            return Err(ConfigError::EmptyGroup);
        }
        let mut index = HashMap::with_capacity(members.len());
        for (i, m) in members.iter().enumerate() {
            if index.insert(*m, AlgRank(i as u32)).is_some() {
                return Err(ConfigError::DuplicateMember(m.0));
            }
        }
        Ok(GroupSpec { members, index })
    }

    /// Group `0..k`.
    pub fn prefix(k: u32) -> Self {
        GroupSpec::new((0..k).map(WorldRank).collect()).expect("0..k is a valid group")
    }

    pub fn size(&self) -> u32 {
        self.members.len() as u32
    }

    pub fn shape(&self) -> TreeShape {
        TreeShape::new(self.size())
    }

    pub fn members(&self) -> &[WorldRank] {
        &self.members
    }

    pub fn world(&self, r: AlgRank) -> WorldRank {
        self.members[r.index()]
    }

    pub fn alg(&self, w: WorldRank) -> Option<AlgRank> {
        self.index.get(&w).copied()
    }

    pub fn contains(&self, w: WorldRank) -> bool {
        self.index.contains_key(&w)
    }

    pub fn to_world(&self, ranks: &[AlgRank]) -> Vec<WorldRank> {
        ranks.iter().map(|r| self.world(*r)).collect()
    }

    /// Sub-group made of `ranks` of this group, order preserved.
    pub fn restrict(&self, ranks: &[AlgRank]) -> Result<GroupSpec, ConfigError> {
        GroupSpec::new(self.to_world(ranks))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LdaVariant {
    Naive,
    Adaptive,
}

impl fmt::Display for LdaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LdaVariant::Naive => "naive",
            LdaVariant::Adaptive => "adaptive",
        })
    }
}

impl FromStr for LdaVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(LdaVariant::Naive),
            "adaptive" => Ok(LdaVariant::Adaptive),
            other => Err(format!("unknown algorithm variant `{other}`")),
        }
    }
}

/// What one process returns from a discovery run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LdaOutcome {
    /// Ascending algorithm ranks believed alive.
    pub survivors: Vec<AlgRank>,
    /// AND of the contributions of `survivors`, when contributions were given.
    pub flag: Option<bool>,
    /// First failed operation of the naive variant; always `None` for the
    /// adaptive variant.
    pub error: Option<OpError>,
    /// Set held at the end of the gather, if this process held position 0.
    pub root_set: Option<Vec<AlgRank>>,
    /// Tree positions held when the run ended.
    pub positions: Vec<AlgRank>,
}

impl LdaOutcome {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Run one discovery instance as process `proc`. `proc` must be a member of
/// `group`.
pub async fn discover(
    proc: &Proc,
    group: &GroupSpec,
    variant: LdaVariant,
    instance: u32,
    contribution: Option<bool>,
) -> LdaOutcome {
    let me = group
        .alg(proc.rank())
        .expect("discovery caller belongs to the group");
    engine::Engine::new(proc, group, me, instance, contribution)
        .run(variant)
        .await
}

/// Per-member outcomes of a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LdaResult {
    pub outcomes: BTreeMap<AlgRank, ProcessEnd<LdaOutcome>>,
    pub run: RunOutcome,
    /// Processes that started the run.
    pub participants: usize,
}

impl LdaResult {
    /// Outcomes of the processes that returned.
    pub fn completed(&self) -> impl Iterator<Item = (AlgRank, &LdaOutcome)> {
        self.outcomes
            .iter()
            .filter_map(|(r, e)| e.value().map(|v| (*r, v)))
    }

    pub fn get(&self, r: AlgRank) -> Option<&LdaOutcome> {
        self.outcomes.get(&r).and_then(|e| e.value())
    }
}

/// Install discovery programs on every member of `group` and run the world.
///
/// `contributions[i]` is the reduction bit of algorithm rank `i`.
pub fn run_lda(
    world: &mut World<LdaOutcome>,
    group: &GroupSpec,
    variant: LdaVariant,
    contributions: Option<&[bool]>,
) -> LdaResult {
    assert!(
        contributions.is_none_or(|c| c.len() == group.size() as usize),
        "one contribution per group member"
    );
    for (i, &w) in group.members().iter().enumerate() {
        let g = group.clone();
        let bit = contributions.map(|c| c[i]);
        world.spawn(w, move |p| async move {
            discover(&p, &g, variant, 0, bit).await
        });
    }
    let participants = world.participants();
    let run = world.run();
    let outcomes = group
        .members()
        .iter()
        .enumerate()
        .map(|(i, w)| (AlgRank(i as u32), world.end(*w).clone()))
        .collect();
    LdaResult {
        outcomes,
        run,
        participants,
    }
}

pub fn naive_lda(world: &mut World<LdaOutcome>, group: &GroupSpec) -> LdaResult {
    run_lda(world, group, LdaVariant::Naive, None)
}

pub fn adaptive_lda(
    world: &mut World<LdaOutcome>,
    group: &GroupSpec,
    contributions: Option<&[bool]>,
) -> LdaResult {
    run_lda(world, group, LdaVariant::Adaptive, contributions)
}
