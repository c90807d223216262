//! Per-run metrics and the agreement/accuracy validators.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use crate::lda::{GroupSpec, LdaResult};
use crate::ncops::{Agreement, CommState, CreateOutcome, OpReport};
use crate::sim::{EventKind, FaultPlan, Phase, ProcessEnd, RunOutcome, Time, Trace, WorldRank};

/// Every operation the harness can run and report on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Naive,
    Adaptive,
    BaselineCreateGroup,
    BaselineCreateFromGroup,
    GuardedCreateGroup,
    GuardedCreateFromGroup,
    NcShrink,
    NcAgree,
    CollectiveShrink,
    CollectiveAgree,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Naive,
        Variant::Adaptive,
        Variant::BaselineCreateGroup,
        Variant::BaselineCreateFromGroup,
        Variant::GuardedCreateGroup,
        Variant::GuardedCreateFromGroup,
        Variant::NcShrink,
        Variant::NcAgree,
        Variant::CollectiveShrink,
        Variant::CollectiveAgree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Naive => "naive",
            Variant::Adaptive => "adaptive",
            Variant::BaselineCreateGroup => "baseline_create_group",
            Variant::BaselineCreateFromGroup => "baseline_create_from_group",
            Variant::GuardedCreateGroup => "guarded_create_group",
            Variant::GuardedCreateFromGroup => "guarded_create_from_group",
            Variant::NcShrink => "nc_shrink",
            Variant::NcAgree => "nc_agree",
            Variant::CollectiveShrink => "collective_shrink",
            Variant::CollectiveAgree => "collective_agree",
        }
    }

    /// Whether the operation takes one bit per member.
    pub fn uses_flags(self) -> bool {
        matches!(self, Variant::NcAgree | Variant::CollectiveAgree)
    }

    /// Whether the operation promises agreement and freedom from deadlock.
    pub fn is_guarded(self) -> bool {
        !matches!(
            self,
            Variant::Naive | Variant::BaselineCreateGroup | Variant::BaselineCreateFromGroup
        )
    }

    /// Whether the operation is defined relative to an enclosing communicator.
    pub fn uses_comm(self) -> bool {
        matches!(
            self,
            Variant::BaselineCreateGroup | Variant::GuardedCreateGroup
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

/// What a live member ended with.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProcessOutcome {
    /// A member list in world ranks, plus the agreed bit when there is one.
    /// `error` marks a naive run whose parent exchange failed.
    Returned {
        members: Vec<WorldRank>,
        flag: Option<bool>,
        error: bool,
    },
    ProcFailed,
    Blocked,
    Died {
        at: Time,
    },
}

impl ProcessOutcome {
    fn from_end<V>(end: &ProcessEnd<V>, f: impl Fn(&V) -> ProcessOutcome) -> Option<Self> {
        match end {
            ProcessEnd::Finished { value, .. } => Some(f(value)),
            ProcessEnd::Blocked => Some(ProcessOutcome::Blocked),
            ProcessEnd::Died { at: 0 } | ProcessEnd::Idle => None,
            ProcessEnd::Died { at } => Some(ProcessOutcome::Died { at: *at }),
        }
    }

    fn returned(members: Vec<WorldRank>, flag: Option<bool>) -> Self {
        ProcessOutcome::Returned {
            members,
            flag,
            error: false,
        }
    }

    /// Comparison key for agreement; `None` for processes that did not return.
    fn verdict(&self) -> Option<(Option<&[WorldRank]>, Option<bool>)> {
        match self {
            ProcessOutcome::Returned { members, flag, .. } => Some((Some(members), *flag)),
            ProcessOutcome::ProcFailed => Some((None, None)),
            _ => None,
        }
    }
}

/// Everything known about one finished run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunReport {
    pub scenario_id: String,
    pub variant: Variant,
    pub group: GroupSpec,
    pub plan: FaultPlan,
    pub outcomes: BTreeMap<WorldRank, ProcessOutcome>,
    pub run: RunOutcome,
    pub participants: usize,
    pub trace: Trace,
}

fn collect<V>(
    ends: impl IntoIterator<Item = (WorldRank, ProcessEnd<V>)>,
    f: impl Fn(&V) -> ProcessOutcome,
) -> BTreeMap<WorldRank, ProcessOutcome> {
    ends.into_iter()
        .filter_map(|(r, e)| ProcessOutcome::from_end(&e, &f).map(|o| (r, o)))
        .collect()
}

/// Per-process outcomes of a discovery run.
pub fn lda_outcomes(group: &GroupSpec, r: &LdaResult) -> BTreeMap<WorldRank, ProcessOutcome> {
    let ends = r.outcomes.iter().map(|(a, e)| (group.world(*a), e.clone()));
    collect(ends, |o| ProcessOutcome::Returned {
        members: group.to_world(&o.survivors),
        flag: o.flag,
        error: o.error.is_some(),
    })
}

pub fn create_outcomes(r: &OpReport<CreateOutcome>) -> BTreeMap<WorldRank, ProcessOutcome> {
    collect(r.outcomes.clone(), |o| match o {
        CreateOutcome::Ok(c) => ProcessOutcome::returned(c.members.members().to_vec(), None),
        CreateOutcome::ProcFailed => ProcessOutcome::ProcFailed,
        CreateOutcome::Deadlocked => ProcessOutcome::Blocked,
    })
}

pub fn comm_outcomes(r: &OpReport<CommState>) -> BTreeMap<WorldRank, ProcessOutcome> {
    collect(r.outcomes.clone(), |c| {
        ProcessOutcome::returned(c.members.members().to_vec(), None)
    })
}

pub fn agreement_outcomes(r: &OpReport<Agreement>) -> BTreeMap<WorldRank, ProcessOutcome> {
    collect(r.outcomes.clone(), |(flag, members)| {
        ProcessOutcome::returned(members.clone(), Some(*flag))
    })
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricsRow {
    pub scenario_id: String,
    pub s: u32,
    pub n_failed_prestart: usize,
    pub n_failed_midrun: usize,
    pub variant: Variant,
    pub payload_msgs: usize,
    pub probe_msgs: usize,
    pub failed_detections: usize,
    pub virtual_time: Time,
    pub participants: usize,
    /// `None` when the run deadlocked.
    pub agreed: Option<bool>,
    /// `None` when the run deadlocked or had mid-run faults.
    pub accurate: Option<bool>,
    pub deadlocked: bool,
}

pub const CSV_HEADER: &str = "scenario_id,s,n_failed_prestart,n_failed_midrun,variant,payload_msgs,probe_msgs,failed_detections,virtual_time,participants,agreed,accurate,deadlocked";

fn cell(b: Option<bool>) -> &'static str {
    match b {
        Some(true) => "true",
        Some(false) => "false",
        None => "",
    }
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.scenario_id,
            self.s,
            self.n_failed_prestart,
            self.n_failed_midrun,
            self.variant,
            self.payload_msgs,
            self.probe_msgs,
            self.failed_detections,
            self.virtual_time,
            self.participants,
            cell(self.agreed),
            cell(self.accurate),
            self.deadlocked
        )
    }
}

pub fn write_csv<'a, W: Write>(
    mut w: W,
    rows: impl IntoIterator<Item = &'a MetricsRow>,
) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.to_csv())?;
    }
    Ok(())
}

/// Message counters of a trace.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub payload_msgs: usize,
    pub probe_msgs: usize,
    pub failed_detections: usize,
    pub virtual_time: Time,
}

pub fn count(trace: &Trace) -> Counters {
    let mut c = Counters::default();
    for e in trace.events() {
        if e.is_message() {
            if e.phase == Phase::Probe {
                c.probe_msgs += 1;
            } else {
                c.payload_msgs += 1;
            }
        }
        if e.is_failed_detection() {
            c.failed_detections += 1;
        }
        if e.kind != EventKind::Fail {
            c.virtual_time = c.virtual_time.max(e.time);
        }
    }
    c
}

/// Failures detected by operations that `rank` performed.
pub fn detections_by(trace: &Trace, rank: WorldRank) -> usize {
    trace
        .events()
        .iter()
        .filter(|e| e.initiator == rank && e.is_failed_detection())
        .count()
}

pub fn summarize(report: &RunReport) -> MetricsRow {
    let c = count(&report.trace);
    let deadlocked = report.run.is_deadlock();
    MetricsRow {
        scenario_id: report.scenario_id.clone(),
        s: report.group.size(),
        n_failed_prestart: report.plan.prestart_count(),
        n_failed_midrun: report.plan.midrun_count(),
        variant: report.variant,
        payload_msgs: c.payload_msgs,
        probe_msgs: c.probe_msgs,
        failed_detections: c.failed_detections,
        virtual_time: c.virtual_time,
        participants: report.participants,
        agreed: (!deadlocked).then(|| check_agreement(report)),
        accurate: if deadlocked {
            None
        } else {
            check_accuracy(report, &report.plan)
        },
        deadlocked,
    }
}

/// All processes that returned gave the same answer.
pub fn check_agreement(report: &RunReport) -> bool {
    let mut verdicts = report.outcomes.values().filter_map(ProcessOutcome::verdict);
    match verdicts.next() {
        Some(first) => verdicts.all(|v| v == first),
        None => true,
    }
}

/// Every returned member list equals the group members alive at the start.
/// `None` when `plan` has mid-run faults.
pub fn check_accuracy(report: &RunReport, plan: &FaultPlan) -> Option<bool> {
    if !plan.is_prestart_only() {
        return None;
    }
    let alive: Vec<WorldRank> = report
        .group
        .members()
        .iter()
        .copied()
        .filter(|m| plan.alive_at_start(*m))
        .collect();
    Some(report.outcomes.values().all(|o| match o {
        ProcessOutcome::Returned { members, .. } => *members == alive,
        ProcessOutcome::ProcFailed => true,
        _ => false,
    }))
}
