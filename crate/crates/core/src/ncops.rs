//! Communicator-level operations on top of the simulator.
//!
//! The baseline creation calls model the observed runtime behavior: they
//! exchange over a plain tree and never notice an unacknowledged failure,
//! so a dead group member leaves its parent waiting forever. The guarded
//! calls run liveness discovery first and cannot deadlock.

use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;

use crate::lda::{discover, GroupSpec, LdaVariant};
use crate::sim::{
    Kind, OpError, Proc, ProcessEnd, RecvFilter, RunOutcome, Tag, Time, World, WorldRank,
};
use crate::topology::{children, parent, AlgRank};

/// Context id of the communicator spanning the whole world.
pub const WORLD_CONTEXT: u32 = 0;

const LDA_INSTANCE: u32 = 1 << 30;
const SECOND_LDA_INSTANCE: u32 = LDA_INSTANCE + 1;
const EXCHANGE: &[Kind] = &[Kind::App];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CommStatus {
    Ok,
    Faulty,
    Revoked,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommState {
    pub members: GroupSpec,
    pub epoch: u32,
    pub status: CommStatus,
    pub acknowledged_failures: BTreeSet<WorldRank>,
    pub context: u32,
}

impl CommState {
    pub fn new(members: GroupSpec, context: u32) -> Self {
        CommState {
            members,
            epoch: 0,
            status: CommStatus::Ok,
            acknowledged_failures: BTreeSet::new(),
            context,
        }
    }

    /// The whole world as one communicator.
    pub fn world(size: u32) -> Self {
        CommState::new(GroupSpec::prefix(size), WORLD_CONTEXT)
    }

    /// Status as seen at time `t` in `world`.
    pub fn assess<T: 'static>(&self, world: &World<T>, t: Time) -> CommStatus {
        if self.status == CommStatus::Revoked || world.is_revoked(self.context, t) {
            return CommStatus::Revoked;
        }
        let unacknowledged = self
            .members
            .members()
            .iter()
            .any(|m| !world.is_alive(*m, t) && !self.acknowledged_failures.contains(m));
        if unacknowledged {
            CommStatus::Faulty
        } else {
            CommStatus::Ok
        }
    }

    /// Copy of `self` with the status observed at `t`.
    pub fn observed<T: 'static>(&self, world: &World<T>, t: Time) -> Self {
        CommState {
            status: self.assess(world, t),
            ..self.clone()
        }
    }

    fn derived(&self, members: GroupSpec, epoch: u32) -> Self {
        CommState {
            epoch,
            ..CommState::new(members, self.context + 1)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CreateOutcome {
    Ok(CommState),
    ProcFailed,
    Deadlocked,
}

/// Per-caller ends of one operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpReport<V> {
    pub outcomes: BTreeMap<WorldRank, ProcessEnd<V>>,
    pub run: RunOutcome,
    pub participants: usize,
}

impl<V> OpReport<V> {
    pub fn completed(&self) -> impl Iterator<Item = (WorldRank, &V)> {
        self.outcomes
            .iter()
            .filter_map(|(r, e)| e.value().map(|v| (*r, v)))
    }

    pub fn get(&self, r: WorldRank) -> Option<&V> {
        self.outcomes.get(&r).and_then(|e| e.value())
    }
}

impl OpReport<CreateOutcome> {
    /// Outcome per live caller, with blocked callers reported as deadlocked.
    pub fn create_outcomes(&self) -> BTreeMap<WorldRank, CreateOutcome> {
        self.outcomes
            .iter()
            .filter_map(|(r, e)| match e {
                ProcessEnd::Finished { value, .. } => Some((*r, value.clone())),
                ProcessEnd::Blocked => Some((*r, CreateOutcome::Deadlocked)),
                _ => None,
            })
            .collect()
    }
}

fn run_callers<V, F, Fut>(
    world: &mut World<V>,
    callers: &[WorldRank],
    reported: &[WorldRank],
    program: F,
) -> OpReport<V>
where
    V: Clone + 'static,
    F: Fn(Proc) -> Fut,
    Fut: Future<Output = V> + 'static,
{
    for &r in callers {
        world.spawn(r, &program);
    }
    let participants = world.participants();
    let run = world.run();
    let outcomes = reported
        .iter()
        .map(|r| (*r, world.end(*r).clone()))
        .collect();
    OpReport {
        outcomes,
        run,
        participants,
    }
}

/// Revoke `comm` at time `at`. Idempotent.
pub fn revoke<T: 'static>(world: &mut World<T>, comm: &CommState, at: Time) -> CommState {
    if !world.is_revoked(comm.context, at) {
        world.revoke(comm.context, at);
    }
    CommState {
        status: CommStatus::Revoked,
        ..comm.clone()
    }
}

/// Tree exchange that only notices failures already acknowledged.
async fn unguarded_exchange(
    proc: &Proc,
    group: &GroupSpec,
    context: u32,
    acknowledged: &BTreeSet<WorldRank>,
) -> Result<(), OpError> {
    let shape = group.shape();
    let me = group.alg(proc.rank()).expect("caller belongs to the group");
    let tag = |pos: AlgRank| Tag {
        kind: Kind::App,
        position: pos.0,
        instance: context,
    };
    let filter = |pos: AlgRank| RecvFilter::new(EXCHANGE, pos.0, context);
    let recv = |peer: AlgRank, pos: AlgRank| {
        let w = group.world(peer);
        proc.recv_with(w, filter(pos), acknowledged.contains(&w))
    };
    let send = |peer: AlgRank, pos: AlgRank| {
        let w = group.world(peer);
        proc.send_as(
            w,
            tag(pos),
            crate::sim::Phase::App,
            Vec::new(),
            acknowledged.contains(&w),
        )
    };
    for (_, c) in children(me, shape) {
        recv(c, c).await?;
    }
    if let Some(p) = parent(me, shape) {
        send(p, me)?;
        recv(p, me).await?;
    }
    for (_, c) in children(me, shape).into_iter().rev() {
        send(c, c)?;
    }
    Ok(())
}

async fn baseline_create(proc: Proc, group: GroupSpec, source: CommState) -> CreateOutcome {
    if proc.is_revoked(source.context) {
        return CreateOutcome::ProcFailed;
    }
    match unguarded_exchange(&proc, &group, source.context, &source.acknowledged_failures).await {
        Ok(()) => CreateOutcome::Ok(source.derived(group, 0)),
        Err(_) => CreateOutcome::ProcFailed,
    }
}

fn callers_of(group: &GroupSpec) -> Vec<WorldRank> {
    group.members().to_vec()
}

/// Create a communicator over `group`, a subset of `comm`, without
/// liveness discovery.
pub fn baseline_create_group(
    world: &mut World<CreateOutcome>,
    comm: &CommState,
    group: &GroupSpec,
) -> OpReport<CreateOutcome> {
    let callers = callers_of(group);
    run_callers(world, &callers, &callers, |p| {
        baseline_create(p, group.clone(), comm.clone())
    })
}

/// Create a communicator from `group` alone, without liveness discovery.
/// The group is taken from the world process set, so a revoked world
/// context fails the call.
pub fn baseline_create_from_group(
    world: &mut World<CreateOutcome>,
    group: &GroupSpec,
) -> OpReport<CreateOutcome> {
    let source = CommState::new(group.clone(), WORLD_CONTEXT);
    let callers = callers_of(group);
    run_callers(world, &callers, &callers, |p| {
        baseline_create(p, group.clone(), source.clone())
    })
}

/// Liveness discovery, then creation only if nobody in `group` failed.
pub fn guarded_create_group(
    world: &mut World<CreateOutcome>,
    comm: &CommState,
    group: &GroupSpec,
) -> OpReport<CreateOutcome> {
    let callers = callers_of(group);
    run_callers(world, &callers, &callers, |p| {
        let group = group.clone();
        let comm = comm.clone();
        async move {
            if p.is_revoked(comm.context) {
                return CreateOutcome::ProcFailed;
            }
            let out = discover(&p, &group, LdaVariant::Adaptive, LDA_INSTANCE, None).await;
            if out.survivors.len() == group.size() as usize {
                CreateOutcome::Ok(comm.derived(group, 0))
            } else {
                CreateOutcome::ProcFailed
            }
        }
    })
}

/// Liveness discovery, then creation over the survivors.
pub fn guarded_create_from_group(
    world: &mut World<CreateOutcome>,
    group: &GroupSpec,
) -> OpReport<CreateOutcome> {
    let source = CommState::new(group.clone(), WORLD_CONTEXT);
    let callers = callers_of(group);
    run_callers(world, &callers, &callers, |p| {
        let group = group.clone();
        let source = source.clone();
        async move {
            let out = discover(&p, &group, LdaVariant::Adaptive, LDA_INSTANCE, None).await;
            let members = group
                .restrict(&out.survivors)
                .expect("survivor set holds the caller");
            CreateOutcome::Ok(source.derived(members, 0))
        }
    })
}

async fn shrink_as(proc: &Proc, comm: &CommState) -> CommState {
    let first = discover(
        proc,
        &comm.members,
        LdaVariant::Adaptive,
        LDA_INSTANCE,
        None,
    )
    .await;
    let alive = comm
        .members
        .restrict(&first.survivors)
        .expect("survivor set holds the caller");
    let second = discover(
        proc,
        &alive,
        LdaVariant::Adaptive,
        SECOND_LDA_INSTANCE,
        None,
    )
    .await;
    let members = alive
        .restrict(&second.survivors)
        .expect("survivor set holds the caller");
    comm.derived(members, comm.epoch + 1)
}

/// Rebuild `comm` over its live members; only members take part.
pub fn nc_shrink(world: &mut World<CommState>, comm: &CommState) -> OpReport<CommState> {
    let callers = callers_of(&comm.members);
    run_callers(world, &callers, &callers, |p| {
        let comm = comm.clone();
        async move { shrink_as(&p, &comm).await }
    })
}

/// Agreed AND of the survivors' flags, and the survivors.
pub type Agreement = (bool, Vec<WorldRank>);

/// AND-agreement among the live members of `group`. `flags[i]` belongs to
/// the i-th member.
pub fn nc_agree(
    world: &mut World<Agreement>,
    group: &GroupSpec,
    flags: &[bool],
) -> OpReport<Agreement> {
    assert_eq!(flags.len(), group.size() as usize, "one flag per member");
    let callers = callers_of(group);
    run_callers(world, &callers, &callers, |p| {
        let group = group.clone();
        let bit = flags[group.alg(p.rank()).expect("caller is a member").index()];
        async move {
            let out = discover(&p, &group, LdaVariant::Adaptive, LDA_INSTANCE, Some(bit)).await;
            (
                out.flag.expect("contributions were supplied"),
                group.to_world(&out.survivors),
            )
        }
    })
}

/// Same contract as [`nc_shrink`], but every process of the world takes
/// part.
pub fn collective_shrink_baseline(
    world: &mut World<CommState>,
    comm: &CommState,
) -> OpReport<CommState> {
    let everyone = GroupSpec::prefix(world.size());
    let reported = callers_of(&comm.members);
    run_callers(world, everyone.members(), &reported, |p| {
        let everyone = everyone.clone();
        let comm = comm.clone();
        async move {
            let out = discover(&p, &everyone, LdaVariant::Adaptive, LDA_INSTANCE, None).await;
            let alive: Vec<WorldRank> = everyone
                .to_world(&out.survivors)
                .into_iter()
                .filter(|w| comm.members.contains(*w))
                .collect();
            let members = GroupSpec::new(alive).unwrap_or_else(|_| comm.members.clone());
            comm.derived(members, comm.epoch + 1)
        }
    })
}

/// Same contract as [`nc_agree`], but every process of the world takes
/// part; non-members contribute a neutral bit.
pub fn collective_agree_baseline(
    world: &mut World<Agreement>,
    group: &GroupSpec,
    flags: &[bool],
) -> OpReport<Agreement> {
    assert_eq!(flags.len(), group.size() as usize, "one flag per member");
    let everyone = GroupSpec::prefix(world.size());
    let reported = callers_of(group);
    run_callers(world, everyone.members(), &reported, |p| {
        let everyone = everyone.clone();
        let group = group.clone();
        let bit = group.alg(p.rank()).is_none_or(|a| flags[a.index()]);
        async move {
            let out = discover(&p, &everyone, LdaVariant::Adaptive, LDA_INSTANCE, Some(bit)).await;
            let members = everyone
                .to_world(&out.survivors)
                .into_iter()
                .filter(|w| group.contains(*w))
                .collect();
            (out.flag.expect("contributions were supplied"), members)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_world, FailAt, FaultPlan};

    fn wr(v: &[u32]) -> Vec<WorldRank> {
        v.iter().map(|&r| WorldRank(r)).collect()
    }

    fn group(v: &[u32]) -> GroupSpec {
        GroupSpec::new(wr(v)).unwrap()
    }

    fn world<T: 'static>(size: u32, dead: &[u32]) -> World<T> {
        build_world(size, FaultPlan::before_start(dead.iter().copied()), 3).unwrap()
    }

    fn kinds(r: &OpReport<CreateOutcome>) -> Vec<&'static str> {
        r.create_outcomes()
            .values()
            .map(|o| match o {
                CreateOutcome::Ok(_) => "ok",
                CreateOutcome::ProcFailed => "pf",
                CreateOutcome::Deadlocked => "dl",
            })
            .collect()
    }

    #[test]
    fn comm_status_follows_acknowledgement() {
        let w: World<()> = world(6, &[5]);
        let mut comm = CommState::world(6);
        assert_eq!(comm.assess(&w, 0), CommStatus::Faulty);
        comm.acknowledged_failures.insert(WorldRank(5));
        assert_eq!(comm.assess(&w, 0), CommStatus::Ok);
    }

    #[test]
    fn revoke_is_idempotent() {
        let mut w: World<()> = world(4, &[]);
        let comm = CommState::world(4);
        let once = revoke(&mut w, &comm, 0);
        let twice = revoke(&mut w, &once, 0);
        assert_eq!(once, twice);
        assert_eq!(twice.assess(&w, 0), CommStatus::Revoked);
    }

    #[test]
    fn baseline_create_group_cases() {
        let comm = CommState::world(6);
        let mut w = world(6, &[5]);
        assert_eq!(
            kinds(&baseline_create_group(&mut w, &comm, &group(&[0, 1, 2, 3]))),
            ["ok"; 4]
        );

        let mut w = world(6, &[2]);
        let r = baseline_create_group(&mut w, &comm, &group(&[0, 1, 2, 3]));
        assert!(r.run.is_deadlock());
        assert!(kinds(&r).contains(&"dl"));

        let mut w = world(6, &[5]);
        let revoked = revoke(&mut w, &comm, 0);
        assert_eq!(
            kinds(&baseline_create_group(
                &mut w,
                &revoked,
                &group(&[0, 1, 2, 3])
            )),
            ["pf"; 4]
        );
    }

    #[test]
    fn pending_baseline_create_fails_on_revocation() {
        let comm = CommState::world(4);
        let mut w = world(4, &[3]);
        w.revoke(WORLD_CONTEXT, 5);
        let r = baseline_create_group(&mut w, &comm, &group(&[0, 1, 2, 3]));
        assert_eq!(r.run, RunOutcome::Completed);
        assert_eq!(kinds(&r), ["pf"; 3]);
    }

    #[test]
    fn baseline_create_from_group_cases() {
        let mut w = world(4, &[]);
        assert_eq!(
            kinds(&baseline_create_from_group(&mut w, &group(&[0, 1, 2, 3]))),
            ["ok"; 4]
        );
        let mut w = world(4, &[1]);
        assert!(baseline_create_from_group(&mut w, &group(&[0, 1, 2, 3]))
            .run
            .is_deadlock());
        let mut w = world(4, &[]);
        let r = baseline_create_from_group(&mut w, &group(&[2]));
        match r.get(WorldRank(2)) {
            Some(CreateOutcome::Ok(c)) => {
                assert_eq!((c.members.members(), c.epoch), (&wr(&[2])[..], 0))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn guarded_create_group_exposes_an_error() {
        let comm = CommState::world(6);
        let mut w = world(6, &[2]);
        let r = guarded_create_group(&mut w, &comm, &group(&[0, 1, 2, 3]));
        assert_eq!(r.run, RunOutcome::Completed);
        assert_eq!(kinds(&r), ["pf"; 3]);

        let mut w = world(6, &[5]);
        assert_eq!(
            kinds(&guarded_create_group(&mut w, &comm, &group(&[0, 1, 2, 3]))),
            ["ok"; 4]
        );
    }

    #[test]
    fn guarded_create_group_fails_on_revoked_comm() {
        let mut w = world(6, &[1]);
        let comm = revoke(&mut w, &CommState::world(6), 0);
        let r = guarded_create_group(&mut w, &comm, &GroupSpec::prefix(6));
        assert_eq!(r.run, RunOutcome::Completed);
        assert_eq!(kinds(&r), ["pf"; 5]);
    }

    #[test]
    fn guarded_create_from_group_completes() {
        let mut w = world(6, &[2, 5]);
        let r = guarded_create_from_group(&mut w, &GroupSpec::prefix(6));
        for (_, o) in r.create_outcomes() {
            match o {
                CreateOutcome::Ok(c) => assert_eq!(c.members.members(), &wr(&[0, 1, 3, 4])[..]),
                other => panic!("unexpected {other:?}"),
            }
        }
        let mut w = world(6, &[0, 1, 2, 4, 5]);
        let r = guarded_create_from_group(&mut w, &GroupSpec::prefix(6));
        assert!(matches!(r.get(WorldRank(3)), Some(CreateOutcome::Ok(c)) if c.members.size() == 1));
    }

    #[test]
    fn shrink_drops_dead_and_bumps_epoch() {
        let comm = CommState::world(6);
        let mut w = world(6, &[2, 5]);
        let r = nc_shrink(&mut w, &comm);
        assert_eq!(r.completed().count(), 4);
        for (_, c) in r.completed() {
            assert_eq!(c.members.members(), &wr(&[0, 1, 3, 4])[..]);
            assert_eq!(c.epoch, 1);
        }
        let next = r.get(WorldRank(0)).unwrap().clone();
        let mut w = world(6, &[2, 5]);
        let again = nc_shrink(&mut w, &next);
        assert_eq!(again.get(WorldRank(0)).unwrap().members, next.members);
        assert_eq!(again.get(WorldRank(0)).unwrap().epoch, 2);
    }

    #[test]
    fn agree_excludes_dead_contributions() {
        let mut w = world(4, &[2]);
        let r = nc_agree(&mut w, &GroupSpec::prefix(4), &[true, true, false, true]);
        for (_, v) in r.completed() {
            assert_eq!(v, &(true, wr(&[0, 1, 3])));
        }
        let mut w = world(4, &[]);
        let r = nc_agree(&mut w, &GroupSpec::prefix(4), &[true, false, true, true]);
        assert!(r.completed().all(|(_, v)| !v.0 && v.1.len() == 4));
    }

    #[test]
    fn collective_baselines_involve_the_world() {
        let comm = CommState::new(group(&[3, 7, 9, 12]), 4);
        let mut w = world(16, &[]);
        let col = collective_shrink_baseline(&mut w, &comm);
        let mut w = world(16, &[]);
        let nc = nc_shrink(&mut w, &comm);
        assert_eq!((col.participants, nc.participants), (16, 4));
        assert_eq!(
            col.get(WorldRank(3)).unwrap().members,
            nc.get(WorldRank(3)).unwrap().members
        );

        let flags = [true, true, false, true];
        let mut w = world(16, &[]);
        let a = collective_agree_baseline(&mut w, &comm.members, &flags);
        let mut w = world(16, &[]);
        let b = nc_agree(&mut w, &comm.members, &flags);
        assert_eq!(a.get(WorldRank(7)), b.get(WorldRank(7)));
    }

    #[test]
    fn midrun_fault_does_not_deadlock_guarded_calls() {
        let mut plan = FaultPlan::new();
        plan.insert(WorldRank(2), FailAt::At(1));
        let mut w = build_world(8, plan, 9).unwrap();
        let r = guarded_create_from_group(&mut w, &GroupSpec::prefix(8));
        assert_eq!(r.run, RunOutcome::Completed);
    }
}
