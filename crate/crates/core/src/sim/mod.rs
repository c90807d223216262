//! Deterministic discrete-event message passing with fail-stop faults.
//!
//! Every process runs an `async` program against a [`Proc`] handle. Sends are
//! eager and never block; receives, probes and sleeps suspend the program
//! until the event loop resumes it. Messages take one virtual time unit.
//! Failure detection follows the ULFM model: a receive from a dead peer
//! returns [`OpError::ProcFailed`], and so does a send unless send-side
//! detection is switched off.
//!
//! Ties between events scheduled for the same instant are broken by a
//! seeded RNG, so a run is a pure function of `(config, programs)`.

mod fault;
mod trace;

use std::cell::RefCell;
use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll, Waker};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::error::ConfigError;

pub use fault::{FailAt, FaultPlan};
pub use trace::{Event, EventKind, Outcome, Trace};

pub type Time = u64;

/// Fixed message latency.
pub const LATENCY: Time = 1;

/// Rank in the enclosing world communicator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WorldRank(pub u32);

impl fmt::Display for WorldRank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Trace classification of a message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Gather,
    Broadcast,
    Probe,
    App,
}

impl Phase {
    pub fn letter(self) -> char {
        match self {
            Phase::Gather => 'g',
            Phase::Broadcast => 'b',
            Phase::Probe => 'p',
            Phase::App => 'a',
        }
    }
}

/// What a message means to its receiver; receives match on this.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    Gather,
    Broadcast,
    Request,
    App,
}

impl Kind {
    pub fn default_phase(self) -> Phase {
        match self {
            Kind::Gather => Phase::Gather,
            Kind::Broadcast => Phase::Broadcast,
            Kind::Request => Phase::Probe,
            Kind::App => Phase::App,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tag {
    pub kind: Kind,
    /// Tree position the message speaks for.
    pub position: u32,
    /// Algorithm instance, doubling as the communicator context.
    pub instance: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub src: WorldRank,
    pub dst: WorldRank,
    pub tag: Tag,
    pub phase: Phase,
    pub payload: Vec<u8>,
    pub send_time: Time,
    pub deliver_time: Time,
    seq: u64,
}

/// Source-directed receive filter; no wildcards.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecvFilter {
    pub kinds: &'static [Kind],
    pub position: u32,
    pub instance: u32,
}

impl RecvFilter {
    pub fn new(kinds: &'static [Kind], position: u32, instance: u32) -> Self {
        RecvFilter {
            kinds,
            position,
            instance,
        }
    }

    fn matches(&self, tag: &Tag) -> bool {
        tag.position == self.position
            && tag.instance == self.instance
            && self.kinds.contains(&tag.kind)
    }
}

/// A received message as seen by the program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub src: WorldRank,
    pub tag: Tag,
    pub phase: Phase,
    pub payload: Vec<u8>,
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq, Hash)]
pub enum OpError {
    #[error("process {0} failed")]
    ProcFailed(WorldRank),
    #[error("communicator revoked")]
    Revoked,
}

pub type OpResult<T> = Result<T, OpError>;

/// Reply produced by a responder for a message that arrived after the
/// owning program stopped listening on that instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reply {
    pub tag: Tag,
    pub phase: Phase,
    pub payload: Vec<u8>,
}

pub type Responder = Box<dyn FnMut(&Message) -> Option<Reply>>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorldConfig {
    pub world_size: u32,
    pub plan: FaultPlan,
    pub seed: u64,
    pub detect_on_send: bool,
}

impl WorldConfig {
    pub fn new(world_size: u32, plan: FaultPlan, seed: u64) -> Self {
        WorldConfig {
            world_size,
            plan,
            seed,
            detect_on_send: true,
        }
    }
}

/// An operation a live process is stuck on when the run stalls.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingOp {
    pub rank: WorldRank,
    pub since: Time,
    pub op: String,
}

impl fmt::Display for PendingOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rank {} since t={}: {}", self.rank, self.since, self.op)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    Deadlock(Vec<PendingOp>),
}

impl RunOutcome {
    pub fn is_deadlock(&self) -> bool {
        matches!(self, RunOutcome::Deadlock(_))
    }
}

/// How a process ended up after the run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProcessEnd<T> {
    Finished {
        value: T,
        at: Time,
    },
    Blocked,
    Died {
        at: Time,
    },
    /// No program was installed.
    Idle,
}

impl<T> ProcessEnd<T> {
    pub fn value(&self) -> Option<&T> {
        match self {
            ProcessEnd::Finished { value, .. } => Some(value),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SlotState {
    Idle,
    Runnable,
    Blocked,
    Finished,
    Dead,
}

#[derive(Clone, Copy, Debug)]
enum Waiting {
    Recv {
        src: WorldRank,
        filter: RecvFilter,
        detect: bool,
        satisfied: bool,
    },
    Probe {
        dst: WorldRank,
        position: u32,
    },
    Sleep,
}

enum Resumption {
    Start,
    Recv(OpResult<Delivery>),
    Probe(OpResult<()>),
    Wake,
}

struct Slot {
    state: SlotState,
    gen: u64,
    clock: Time,
    since: Time,
    resume: Option<Resumption>,
    waiting: Option<Waiting>,
    mailbox: Vec<Message>,
    responders: Vec<(u32, Responder)>,
}

enum Action {
    Resume {
        pid: usize,
        gen: u64,
        result: Resumption,
    },
    Deliver {
        dst: usize,
        seq: u64,
    },
    ProbeArrive {
        src: usize,
        dst: WorldRank,
        gen: u64,
        position: u32,
    },
    Death(WorldRank),
    Revoke(u32),
}

struct Queued {
    time: Time,
    tiebreak: u64,
    seq: u64,
    action: Action,
}

impl Queued {
    fn key(&self) -> (Time, u64, u64) {
        (self.time, self.tiebreak, self.seq)
    }
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

struct Shared {
    death: Vec<Option<Time>>,
    detect_on_send: bool,
    revocations: HashMap<u32, Time>,
    slots: Vec<Slot>,
    queue: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    rng: ChaCha8Rng,
    trace: Trace,
    now: Time,
}

impl Shared {
    fn dead_at(&self, rank: WorldRank, t: Time) -> bool {
        self.death[rank.0 as usize].is_some_and(|d| d <= t)
    }

    fn revoked_at(&self, instance: u32, t: Time) -> bool {
        self.revocations.get(&instance).is_some_and(|&r| r <= t)
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn schedule(&mut self, time: Time, action: Action) {
        let tiebreak = self.rng.next_u64();
        let seq = self.next_seq();
        self.queue.push(Reverse(Queued {
            time,
            tiebreak,
            seq,
            action,
        }));
    }

    fn log(&mut self, e: Event) {
        self.trace.push(e);
    }

    #[allow(clippy::too_many_arguments)]
    fn send_at(
        &mut self,
        pid: usize,
        t: Time,
        dst: WorldRank,
        tag: Tag,
        phase: Phase,
        payload: Vec<u8>,
        detect: bool,
    ) -> OpResult<()> {
        let src = WorldRank(pid as u32);
        let mut event = Event {
            time: t,
            kind: EventKind::Send,
            src,
            dst,
            phase,
            position: tag.position,
            bytes: payload.len(),
            outcome: Outcome::Ok,
            initiator: src,
        };
        if self.revoked_at(tag.instance, t) {
            event.outcome = Outcome::Revoked;
            self.log(event);
            return Err(OpError::Revoked);
        }
        if self.dead_at(dst, t) {
            if detect {
                event.outcome = Outcome::ProcFailed;
                self.log(event);
                return Err(OpError::ProcFailed(dst));
            }
            // lost on the wire
            self.log(event);
            return Ok(());
        }
        self.log(event);
        let seq = self.next_seq();
        let msg = Message {
            src,
            dst,
            tag,
            phase,
            payload,
            send_time: t,
            deliver_time: t + LATENCY,
            seq,
        };
        let d = dst.0 as usize;
        let slot = &mut self.slots[d];
        if let Some(Waiting::Recv {
            src: want,
            filter,
            satisfied: satisfied @ false,
            ..
        }) = slot.waiting.as_mut()
        {
            if *want == src && filter.matches(&msg.tag) && slot.state == SlotState::Blocked {
                *satisfied = true;
                slot.gen += 1;
                let gen = slot.gen;
                let at = slot.since.max(msg.deliver_time);
                let delivery = Delivery {
                    src,
                    tag: msg.tag,
                    phase: msg.phase,
                    payload: msg.payload,
                };
                self.schedule(
                    at,
                    Action::Resume {
                        pid: d,
                        gen,
                        result: Resumption::Recv(Ok(delivery)),
                    },
                );
                return Ok(());
            }
        }
        let deliver_time = msg.deliver_time;
        slot.mailbox.push(msg);
        self.schedule(deliver_time, Action::Deliver { dst: d, seq });
        Ok(())
    }

    fn register(&mut self, pid: usize, waiting: Waiting) {
        let t = self.slots[pid].clock;
        let slot = &mut self.slots[pid];
        slot.gen += 1;
        slot.since = t;
        slot.waiting = Some(waiting);
        slot.state = SlotState::Blocked;
        let gen = slot.gen;
        match waiting {
            Waiting::Recv {
                src,
                filter,
                detect,
                ..
            } => {
                if self.revoked_at(filter.instance, t) {
                    self.schedule(
                        t,
                        Action::Resume {
                            pid,
                            gen,
                            result: Resumption::Recv(Err(OpError::Revoked)),
                        },
                    );
                    return;
                }
                let slot = &mut self.slots[pid];
                let found = slot
                    .mailbox
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| m.src == src && filter.matches(&m.tag))
                    .min_by_key(|(_, m)| (m.deliver_time, m.seq))
                    .map(|(i, _)| i);
                if let Some(i) = found {
                    let msg = slot.mailbox.remove(i);
                    if let Some(Waiting::Recv { satisfied, .. }) = slot.waiting.as_mut() {
                        *satisfied = true;
                    }
                    let at = t.max(msg.deliver_time);
                    let delivery = Delivery {
                        src,
                        tag: msg.tag,
                        phase: msg.phase,
                        payload: msg.payload,
                    };
                    self.schedule(
                        at,
                        Action::Resume {
                            pid,
                            gen,
                            result: Resumption::Recv(Ok(delivery)),
                        },
                    );
                    return;
                }
                if detect {
                    if let Some(d) = self.death[src.0 as usize] {
                        self.schedule(
                            d.max(t),
                            Action::Resume {
                                pid,
                                gen,
                                result: Resumption::Recv(Err(OpError::ProcFailed(src))),
                            },
                        );
                    }
                }
            }
            Waiting::Probe { dst, position } => {
                let me = WorldRank(pid as u32);
                self.log(Event {
                    time: t,
                    kind: EventKind::Probe,
                    src: me,
                    dst,
                    phase: Phase::Probe,
                    position,
                    bytes: 0,
                    outcome: Outcome::Ok,
                    initiator: me,
                });
                self.schedule(
                    t + LATENCY,
                    Action::ProbeArrive {
                        src: pid,
                        dst,
                        gen,
                        position,
                    },
                );
            }
            Waiting::Sleep => {}
        }
    }

    fn respond_pending(&mut self, pid: usize, t: Time) {
        if self.slots[pid].responders.is_empty() || self.dead_at(WorldRank(pid as u32), t) {
            return;
        }
        let mut order: Vec<(Time, u64)> = self.slots[pid]
            .mailbox
            .iter()
            .filter(|m| m.deliver_time <= t)
            .map(|m| (m.deliver_time, m.seq))
            .collect();
        order.sort_unstable();
        for (_, seq) in order {
            self.respond_one(pid, seq, t);
        }
    }

    fn respond_one(&mut self, pid: usize, seq: u64, t: Time) {
        let slot = &mut self.slots[pid];
        let Some(i) = slot.mailbox.iter().position(|m| m.seq == seq) else {
            return;
        };
        let instance = slot.mailbox[i].tag.instance;
        let Some(r) = slot
            .responders
            .iter()
            .position(|(inst, _)| *inst == instance)
        else {
            return;
        };
        let reply = (slot.responders[r].1)(&slot.mailbox[i]);
        if let Some(reply) = reply {
            let msg = slot.mailbox.remove(i);
            let detect = self.detect_on_send;
            let _ = self.send_at(
                pid,
                t,
                msg.src,
                reply.tag,
                reply.phase,
                reply.payload,
                detect,
            );
        }
    }

    fn describe(w: &Waiting) -> String {
        match w {
            Waiting::Recv { src, filter, .. } => format!(
                "recv from {} kinds={:?} pos={} instance={}",
                src, filter.kinds, filter.position, filter.instance
            ),
            Waiting::Probe { dst, .. } => format!("probe {dst}"),
            Waiting::Sleep => "sleep".to_string(),
        }
    }
}

type Program<T> = Pin<Box<dyn Future<Output = T>>>;

/// A simulated world: processes, their programs, and the event loop.
pub struct World<T> {
    shared: Rc<RefCell<Shared>>,
    plan: FaultPlan,
    programs: Vec<Option<Program<T>>>,
    ends: Vec<ProcessEnd<T>>,
    started: bool,
    outcome: Option<RunOutcome>,
}

impl<T: 'static> World<T> {
    pub fn new(config: WorldConfig) -> Result<Self, ConfigError> {
        let n = config.world_size;
        if n == 0 {
            return Err(ConfigError::EmptyWorld);
        }
        let mut death = vec![None; n as usize];
        for (rank, at) in config.plan.iter() {
            if rank.0 >= n {
                return Err(ConfigError::RankOutOfRange {
                    rank: rank.0,
                    world_size: n,
                });
            }
            death[rank.0 as usize] = Some(at.death_time());
        }
        let slots = (0..n)
            .map(|_| Slot {
                state: SlotState::Idle,
                gen: 0,
                clock: 0,
                since: 0,
                resume: None,
                waiting: None,
                mailbox: Vec::new(),
                responders: Vec::new(),
            })
            .collect();
        let shared = Shared {
            death,
            detect_on_send: config.detect_on_send,
            revocations: HashMap::new(),
            slots,
            queue: BinaryHeap::new(),
            seq: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            trace: Trace::default(),
            now: 0,
        };
        Ok(World {
            shared: Rc::new(RefCell::new(shared)),
            plan: config.plan,
            programs: (0..n).map(|_| None).collect(),
            ends: (0..n).map(|_| ProcessEnd::Idle).collect(),
            started: false,
            outcome: None,
        })
    }

    pub fn size(&self) -> u32 {
        self.programs.len() as u32
    }

    pub fn plan(&self) -> &FaultPlan {
        &self.plan
    }

    /// Fail-stop `rank` from `at` on. Only effective before [`World::run`];
    /// an earlier failure wins.
    pub fn kill(&mut self, rank: WorldRank, at: FailAt) {
        assert!(!self.started, "faults must be planned before the run");
        self.plan.insert(rank, at);
        let mut sh = self.shared.borrow_mut();
        let slot = &mut sh.death[rank.0 as usize];
        let t = at.death_time();
        if slot.is_none_or(|d| t < d) {
            *slot = Some(t);
        }
    }

    pub fn is_alive(&self, rank: WorldRank, t: Time) -> bool {
        !self.shared.borrow().dead_at(rank, t)
    }

    pub fn death_time(&self, rank: WorldRank) -> Option<Time> {
        self.shared.borrow().death[rank.0 as usize]
    }

    /// Ranks alive when the run starts.
    pub fn live_at_start(&self) -> Vec<WorldRank> {
        (0..self.size())
            .map(WorldRank)
            .filter(|r| self.is_alive(*r, 0))
            .collect()
    }

    pub fn detect_on_send(&self) -> bool {
        self.shared.borrow().detect_on_send
    }

    /// Revoke communicator context `instance` at time `at`.
    pub fn revoke(&mut self, instance: u32, at: Time) {
        let mut sh = self.shared.borrow_mut();
        let cur = sh.revocations.get(&instance).copied();
        if cur.is_none_or(|c| at < c) {
            sh.revocations.insert(instance, at);
            if !self.started && at > 0 {
                sh.schedule(at, Action::Revoke(instance));
            }
        }
    }

    pub fn is_revoked(&self, instance: u32, t: Time) -> bool {
        self.shared.borrow().revoked_at(instance, t)
    }

    /// Install the program of `rank`. Ranks dead before the start never run.
    pub fn spawn<F, Fut>(&mut self, rank: WorldRank, program: F)
    where
        F: FnOnce(Proc) -> Fut,
        Fut: Future<Output = T> + 'static,
    {
        assert!(!self.started, "programs must be installed before the run");
        let proc = Proc {
            rank,
            shared: Rc::clone(&self.shared),
        };
        self.programs[rank.0 as usize] = Some(Box::pin(program(proc)));
    }

    /// Processes with an installed program that are alive at the start.
    pub fn participants(&self) -> usize {
        (0..self.size())
            .filter(|&r| self.programs[r as usize].is_some() && self.is_alive(WorldRank(r), 0))
            .count()
    }

    pub fn run(&mut self) -> RunOutcome {
        assert!(!self.started, "a world runs once");
        self.started = true;
        {
            let mut sh = self.shared.borrow_mut();
            let n = self.programs.len();
            for r in 0..n {
                let rank = WorldRank(r as u32);
                match sh.death[r] {
                    Some(0) => {
                        sh.slots[r].state = SlotState::Dead;
                        sh.log(fail_event(rank, 0));
                        self.ends[r] = ProcessEnd::Died { at: 0 };
                        self.programs[r] = None;
                    }
                    Some(t) => sh.schedule(t, Action::Death(rank)),
                    None => {}
                }
            }
            for r in 0..n {
                if self.programs[r].is_some() && sh.slots[r].state != SlotState::Dead {
                    sh.slots[r].state = SlotState::Runnable;
                    sh.slots[r].gen += 1;
                    let gen = sh.slots[r].gen;
                    sh.schedule(
                        0,
                        Action::Resume {
                            pid: r,
                            gen,
                            result: Resumption::Start,
                        },
                    );
                }
            }
        }

        loop {
            let next = self.shared.borrow_mut().queue.pop();
            let Some(Reverse(item)) = next else { break };
            let t = item.time;
            self.shared.borrow_mut().now = t;
            match item.action {
                Action::Resume { pid, gen, result } => self.resume(pid, gen, t, result),
                Action::Deliver { dst, seq } => {
                    let mut sh = self.shared.borrow_mut();
                    if !sh.dead_at(WorldRank(dst as u32), t) {
                        sh.respond_one(dst, seq, t);
                    }
                }
                Action::ProbeArrive {
                    src,
                    dst,
                    gen,
                    position,
                } => {
                    let mut sh = self.shared.borrow_mut();
                    if sh.dead_at(dst, t) {
                        sh.schedule(
                            t,
                            Action::Resume {
                                pid: src,
                                gen,
                                result: Resumption::Probe(Err(OpError::ProcFailed(dst))),
                            },
                        );
                    } else {
                        sh.log(Event {
                            time: t,
                            kind: EventKind::Probe,
                            src: dst,
                            dst: WorldRank(src as u32),
                            phase: Phase::Probe,
                            position,
                            bytes: 0,
                            outcome: Outcome::Ok,
                            initiator: dst,
                        });
                        sh.schedule(
                            t + LATENCY,
                            Action::Resume {
                                pid: src,
                                gen,
                                result: Resumption::Probe(Ok(())),
                            },
                        );
                    }
                }
                Action::Death(rank) => {
                    let r = rank.0 as usize;
                    let mut sh = self.shared.borrow_mut();
                    sh.log(fail_event(rank, t));
                    sh.slots[r].state = SlotState::Dead;
                    sh.slots[r].waiting = None;
                    sh.slots[r].responders.clear();
                    drop(sh);
                    self.programs[r] = None;
                    if !matches!(self.ends[r], ProcessEnd::Finished { .. }) {
                        self.ends[r] = ProcessEnd::Died { at: t };
                    }
                }
                Action::Revoke(instance) => {
                    let mut sh = self.shared.borrow_mut();
                    sh.revocations.entry(instance).or_insert(t);
                    let mut wake = Vec::new();
                    for (pid, slot) in sh.slots.iter_mut().enumerate() {
                        if slot.state != SlotState::Blocked {
                            continue;
                        }
                        if let Some(Waiting::Recv {
                            filter,
                            satisfied: satisfied @ false,
                            ..
                        }) = slot.waiting.as_mut()
                        {
                            if filter.instance == instance {
                                *satisfied = true;
                                slot.gen += 1;
                                wake.push((pid, slot.gen));
                            }
                        }
                    }
                    for (pid, gen) in wake {
                        sh.schedule(
                            t,
                            Action::Resume {
                                pid,
                                gen,
                                result: Resumption::Recv(Err(OpError::Revoked)),
                            },
                        );
                    }
                }
            }
        }

        let sh = self.shared.borrow();
        let mut pending = Vec::new();
        for (r, slot) in sh.slots.iter().enumerate() {
            if slot.state == SlotState::Blocked || slot.state == SlotState::Runnable {
                let op = slot
                    .waiting
                    .as_ref()
                    .map(Shared::describe)
                    .unwrap_or_else(|| "runnable".to_string());
                pending.push(PendingOp {
                    rank: WorldRank(r as u32),
                    since: slot.since,
                    op,
                });
                self.ends[r] = ProcessEnd::Blocked;
            }
        }
        let outcome = if pending.is_empty() {
            RunOutcome::Completed
        } else {
            RunOutcome::Deadlock(pending)
        };
        self.outcome = Some(outcome.clone());
        outcome
    }

    fn resume(&mut self, pid: usize, gen: u64, t: Time, result: Resumption) {
        {
            let mut sh = self.shared.borrow_mut();
            let me = WorldRank(pid as u32);
            if sh.slots[pid].state == SlotState::Dead || sh.dead_at(me, t) {
                return;
            }
            if sh.slots[pid].gen != gen {
                return;
            }
            let waiting = sh.slots[pid].waiting.take();
            match (&result, waiting) {
                (Resumption::Recv(r), Some(Waiting::Recv { src, filter, .. })) => {
                    let (phase, position, bytes, outcome) = match r {
                        Ok(d) => (d.phase, d.tag.position, d.payload.len(), Outcome::Ok),
                        Err(OpError::ProcFailed(_)) => {
                            (recv_phase(filter), filter.position, 0, Outcome::ProcFailed)
                        }
                        Err(OpError::Revoked) => {
                            (recv_phase(filter), filter.position, 0, Outcome::Revoked)
                        }
                    };
                    sh.log(Event {
                        time: t,
                        kind: EventKind::Recv,
                        src,
                        dst: me,
                        phase,
                        position,
                        bytes,
                        outcome,
                        initiator: me,
                    });
                }
                (Resumption::Probe(Err(_)), Some(Waiting::Probe { dst, position })) => {
                    sh.log(Event {
                        time: t,
                        kind: EventKind::Probe,
                        src: me,
                        dst,
                        phase: Phase::Probe,
                        position,
                        bytes: 0,
                        outcome: Outcome::ProcFailed,
                        initiator: me,
                    });
                }
                _ => {}
            }
            let slot = &mut sh.slots[pid];
            slot.clock = t;
            slot.resume = Some(result);
            slot.state = SlotState::Runnable;
        }

        let Some(program) = self.programs[pid].as_mut() else {
            return;
        };
        let mut cx = Context::from_waker(Waker::noop());
        match program.as_mut().poll(&mut cx) {
            Poll::Ready(value) => {
                self.programs[pid] = None;
                self.shared.borrow_mut().slots[pid].state = SlotState::Finished;
                self.ends[pid] = ProcessEnd::Finished { value, at: t };
            }
            Poll::Pending => {
                let sh = self.shared.borrow();
                debug_assert!(
                    sh.slots[pid].state == SlotState::Blocked,
                    "program yielded without blocking on an operation"
                );
            }
        }
    }

    pub fn outcome(&self) -> Option<&RunOutcome> {
        self.outcome.as_ref()
    }

    pub fn trace(&self) -> Trace {
        self.shared.borrow().trace.clone()
    }

    /// Time of the last processed event.
    pub fn now(&self) -> Time {
        self.shared.borrow().now
    }

    pub fn end(&self, rank: WorldRank) -> &ProcessEnd<T> {
        &self.ends[rank.0 as usize]
    }

    pub fn into_ends(self) -> Vec<ProcessEnd<T>> {
        self.ends
    }
}

fn recv_phase(filter: RecvFilter) -> Phase {
    filter
        .kinds
        .first()
        .map(|k| k.default_phase())
        .unwrap_or(Phase::App)
}

fn fail_event(rank: WorldRank, t: Time) -> Event {
    Event {
        time: t,
        kind: EventKind::Fail,
        src: rank,
        dst: rank,
        phase: Phase::App,
        position: 0,
        bytes: 0,
        outcome: Outcome::ProcFailed,
        initiator: rank,
    }
}

/// Validated world constructor.
pub fn build_world<T: 'static>(
    world_size: u32,
    plan: FaultPlan,
    seed: u64,
) -> Result<World<T>, ConfigError> {
    World::new(WorldConfig::new(world_size, plan, seed))
}

/// Handle a program uses to talk to the simulator.
pub struct Proc {
    rank: WorldRank,
    shared: Rc<RefCell<Shared>>,
}

impl Proc {
    pub fn rank(&self) -> WorldRank {
        self.rank
    }

    pub fn now(&self) -> Time {
        self.shared.borrow().slots[self.rank.0 as usize].clock
    }

    pub fn world_size(&self) -> u32 {
        self.shared.borrow().slots.len() as u32
    }

    pub fn detect_on_send(&self) -> bool {
        self.shared.borrow().detect_on_send
    }

    pub fn is_revoked(&self, instance: u32) -> bool {
        let sh = self.shared.borrow();
        sh.revoked_at(instance, sh.slots[self.rank.0 as usize].clock)
    }

    /// Revoke `instance` for everyone, effective now.
    pub fn revoke(&self, instance: u32) {
        let mut sh = self.shared.borrow_mut();
        let t = sh.slots[self.rank.0 as usize].clock;
        if !sh.revoked_at(instance, t) {
            sh.schedule(t, Action::Revoke(instance));
        }
    }

    /// Eager send with the world's detection mode and the tag's default phase.
    pub fn send(&self, dst: WorldRank, tag: Tag, payload: Vec<u8>) -> OpResult<()> {
        let detect = self.detect_on_send();
        self.send_as(dst, tag, tag.kind.default_phase(), payload, detect)
    }

    pub fn send_as(
        &self,
        dst: WorldRank,
        tag: Tag,
        phase: Phase,
        payload: Vec<u8>,
        detect: bool,
    ) -> OpResult<()> {
        let mut sh = self.shared.borrow_mut();
        let pid = self.rank.0 as usize;
        let t = sh.slots[pid].clock;
        sh.send_at(pid, t, dst, tag, phase, payload, detect)
    }

    /// Receive from `src`, reporting its failure.
    pub async fn recv(&self, src: WorldRank, filter: RecvFilter) -> OpResult<Delivery> {
        self.recv_with(src, filter, true).await
    }

    /// Receive from `src`; with `detect = false` a dead source blocks forever.
    pub async fn recv_with(
        &self,
        src: WorldRank,
        filter: RecvFilter,
        detect: bool,
    ) -> OpResult<Delivery> {
        let w = Waiting::Recv {
            src,
            filter,
            detect,
            satisfied: false,
        };
        match self.block(w).await {
            Resumption::Recv(r) => r,
            _ => unreachable!("recv resumed with a foreign result"),
        }
    }

    /// Zero-payload probe/ack exchange; two messages, two time units.
    pub async fn probe(&self, dst: WorldRank, position: u32) -> OpResult<()> {
        match self.block(Waiting::Probe { dst, position }).await {
            Resumption::Probe(r) => r,
            _ => unreachable!("probe resumed with a foreign result"),
        }
    }

    pub async fn sleep_until(&self, t: Time) {
        let pid = self.rank.0 as usize;
        {
            let mut sh = self.shared.borrow_mut();
            let now = sh.slots[pid].clock;
            let gen = sh.slots[pid].gen + 1;
            sh.schedule(
                t.max(now),
                Action::Resume {
                    pid,
                    gen,
                    result: Resumption::Wake,
                },
            );
        }
        self.block(Waiting::Sleep).await;
    }

    /// Answer messages of `instance` that arrive from now on, plus any
    /// already delivered and never consumed.
    pub fn set_responder(&self, instance: u32, responder: Responder) {
        let mut sh = self.shared.borrow_mut();
        let pid = self.rank.0 as usize;
        sh.slots[pid].responders.push((instance, responder));
        let t = sh.slots[pid].clock;
        sh.respond_pending(pid, t);
    }

    fn block(&self, waiting: Waiting) -> BlockOn<'_> {
        BlockOn {
            proc: self,
            waiting: Some(waiting),
        }
    }
}

struct BlockOn<'a> {
    proc: &'a Proc,
    waiting: Option<Waiting>,
}

impl Future for BlockOn<'_> {
    type Output = Resumption;

    fn poll(mut self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<Resumption> {
        let pid = self.proc.rank.0 as usize;
        if let Some(w) = self.waiting.take() {
            let mut sh = self.proc.shared.borrow_mut();
            sh.slots[pid].resume = None;
            sh.register(pid, w);
            return Poll::Pending;
        }
        let mut sh = self.proc.shared.borrow_mut();
        match sh.slots[pid].resume.take() {
            Some(Resumption::Start) | None => Poll::Pending,
            Some(r) => Poll::Ready(r),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: &[Kind] = &[Kind::Gather];

    fn tag(pos: u32) -> Tag {
        Tag {
            kind: Kind::Gather,
            position: pos,
            instance: 0,
        }
    }

    fn world(n: u32, plan: FaultPlan) -> World<OpResult<Delivery>> {
        build_world(n, plan, 1).unwrap()
    }

    #[test]
    fn prestart_faults_leave_the_rest_alive() {
        let w: World<()> = build_world(6, FaultPlan::before_start([2, 5]), 1).unwrap();
        assert_eq!(
            w.live_at_start(),
            vec![WorldRank(0), WorldRank(1), WorldRank(3), WorldRank(4)]
        );
    }

    #[test]
    fn single_process_world() {
        let mut w: World<u32> = build_world(1, FaultPlan::new(), 0).unwrap();
        w.spawn(WorldRank(0), |p| async move { p.rank().0 });
        assert_eq!(w.run(), RunOutcome::Completed);
        assert_eq!(w.end(WorldRank(0)).value(), Some(&0));
    }

    #[test]
    fn bad_plan_rank_is_rejected() {
        let r: Result<World<()>, _> = build_world(6, FaultPlan::before_start([9]), 0);
        assert!(matches!(
            r,
            Err(ConfigError::RankOutOfRange { rank: 9, .. })
        ));
        let r: Result<World<()>, _> = build_world(0, FaultPlan::new(), 0);
        assert_eq!(r.err(), Some(ConfigError::EmptyWorld));
    }

    #[test]
    fn timed_death_is_time_ordered() {
        let mut plan = FaultPlan::new();
        plan.insert(WorldRank(4), FailAt::At(3));
        let mut w: World<()> = build_world(8, plan, 7).unwrap();
        assert!(w.is_alive(WorldRank(4), 2));
        assert!(!w.is_alive(WorldRank(4), 3));
        w.run();
        assert!(w
            .trace()
            .events()
            .iter()
            .any(|e| e.kind == EventKind::Fail && e.src == WorldRank(4) && e.time == 3));
    }

    #[test]
    fn kill_is_idempotent() {
        let mut w: World<()> = build_world(4, FaultPlan::new(), 0).unwrap();
        w.kill(WorldRank(2), FailAt::BeforeStart);
        w.kill(WorldRank(2), FailAt::At(5));
        assert!(!w.is_alive(WorldRank(2), 0));
        assert!(!w.is_alive(WorldRank(2), 100));
        assert_eq!(w.death_time(WorldRank(2)), Some(0));
    }

    #[test]
    fn send_to_dead_peer_fails() {
        let mut w: World<OpResult<()>> = build_world(4, FaultPlan::before_start([2]), 0).unwrap();
        w.spawn(WorldRank(3), |p| async move {
            p.send(WorldRank(2), tag(3), vec![1])
        });
        w.run();
        assert_eq!(
            w.end(WorldRank(3)).value(),
            Some(&Err(OpError::ProcFailed(WorldRank(2))))
        );
    }

    #[test]
    fn send_without_detection_is_lost() {
        let mut cfg = WorldConfig::new(4, FaultPlan::before_start([2]), 0);
        cfg.detect_on_send = false;
        let mut w: World<OpResult<()>> = World::new(cfg).unwrap();
        w.spawn(WorldRank(3), |p| async move {
            p.send(WorldRank(2), tag(3), vec![1])
        });
        w.run();
        assert_eq!(w.end(WorldRank(3)).value(), Some(&Ok(())));
    }

    #[test]
    fn recv_completes_at_delivery_time() {
        let mut w = world(2, FaultPlan::new());
        w.spawn(WorldRank(1), |p| async move {
            p.send(WorldRank(0), tag(1), vec![7])?;
            Err(OpError::Revoked)
        });
        w.spawn(WorldRank(0), |p| async move {
            p.recv(WorldRank(1), RecvFilter::new(G, 1, 0)).await
        });
        assert_eq!(w.run(), RunOutcome::Completed);
        match w.end(WorldRank(0)) {
            ProcessEnd::Finished { value: Ok(d), at } => {
                assert_eq!(d.payload, vec![7]);
                assert_eq!(*at, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn recv_posted_after_delivery_completes_at_post_time() {
        let mut w: World<(Time, Vec<u8>)> = build_world(2, FaultPlan::new(), 3).unwrap();
        w.spawn(WorldRank(1), |p| async move {
            p.send(WorldRank(0), tag(1), vec![9]).unwrap();
            (0, vec![])
        });
        w.spawn(WorldRank(0), |p| async move {
            p.sleep_until(5).await;
            let d = p
                .recv(WorldRank(1), RecvFilter::new(G, 1, 0))
                .await
                .unwrap();
            (p.now(), d.payload)
        });
        w.run();
        assert_eq!(w.end(WorldRank(0)).value(), Some(&(5, vec![9])));
    }

    #[test]
    fn recv_from_prestart_dead_fails_immediately() {
        let mut w = world(3, FaultPlan::before_start([2]));
        w.spawn(WorldRank(0), |p| async move {
            p.recv(WorldRank(2), RecvFilter::new(G, 2, 0)).await
        });
        w.run();
        match w.end(WorldRank(0)) {
            ProcessEnd::Finished { value, at } => {
                assert_eq!(*value, Err(OpError::ProcFailed(WorldRank(2))));
                assert_eq!(*at, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn recv_from_rank_dying_later_fails_at_death() {
        let mut plan = FaultPlan::new();
        plan.insert(WorldRank(1), FailAt::At(5));
        let mut w = world(2, plan);
        w.spawn(WorldRank(0), |p| async move {
            p.recv(WorldRank(1), RecvFilter::new(G, 1, 0)).await
        });
        w.spawn(WorldRank(1), |p| async move {
            p.sleep_until(100).await;
            Err(OpError::Revoked)
        });
        assert_eq!(w.run(), RunOutcome::Completed);
        match w.end(WorldRank(0)) {
            ProcessEnd::Finished { value, at } => {
                assert_eq!(*value, Err(OpError::ProcFailed(WorldRank(1))));
                assert_eq!(*at, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(w.end(WorldRank(1)), &ProcessEnd::Died { at: 5 });
    }

    #[test]
    fn undetected_dead_peer_deadlocks() {
        let mut w = world(2, FaultPlan::before_start([1]));
        w.spawn(WorldRank(0), |p| async move {
            p.recv_with(WorldRank(1), RecvFilter::new(G, 1, 0), false)
                .await
        });
        match w.run() {
            RunOutcome::Deadlock(ops) => {
                assert_eq!(ops.len(), 1);
                assert_eq!(ops[0].rank, WorldRank(0));
            }
            other => panic!("expected deadlock, got {other:?}"),
        }
    }

    #[test]
    fn revocation_wakes_blocked_receivers() {
        let mut w = world(2, FaultPlan::before_start([1]));
        w.spawn(WorldRank(0), |p| async move {
            p.recv_with(WorldRank(1), RecvFilter::new(G, 1, 0), false)
                .await
        });
        w.revoke(0, 4);
        assert_eq!(w.run(), RunOutcome::Completed);
        assert_eq!(w.end(WorldRank(0)).value(), Some(&Err(OpError::Revoked)));
    }

    #[test]
    fn probe_round_trip() {
        let mut w: World<(OpResult<()>, OpResult<()>, Time)> =
            build_world(3, FaultPlan::before_start([2]), 0).unwrap();
        w.spawn(WorldRank(0), |p| async move {
            let a = p.probe(WorldRank(1), 1).await;
            let b = p.probe(WorldRank(2), 2).await;
            (a, b, p.now())
        });
        w.run();
        assert_eq!(
            w.end(WorldRank(0)).value(),
            Some(&(Ok(()), Err(OpError::ProcFailed(WorldRank(2))), 3))
        );
    }

    #[test]
    fn responder_answers_late_messages() {
        let mut w: World<OpResult<Delivery>> = build_world(2, FaultPlan::new(), 0).unwrap();
        w.spawn(WorldRank(0), |p| async move {
            p.set_responder(
                0,
                Box::new(|m: &Message| {
                    Some(Reply {
                        tag: Tag {
                            kind: Kind::Broadcast,
                            ..m.tag
                        },
                        phase: Phase::Broadcast,
                        payload: vec![42],
                    })
                }),
            );
            Err(OpError::Revoked)
        });
        w.spawn(WorldRank(1), |p| async move {
            p.sleep_until(3).await;
            p.send(WorldRank(0), tag(1), vec![]).unwrap();
            p.recv(WorldRank(0), RecvFilter::new(&[Kind::Broadcast], 1, 0))
                .await
        });
        assert_eq!(w.run(), RunOutcome::Completed);
        let d = w.end(WorldRank(1)).value().unwrap().clone().unwrap();
        assert_eq!(d.payload, vec![42]);
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let run = |seed| {
            let mut w: World<()> = build_world(4, FaultPlan::new(), seed).unwrap();
            for r in 1..4 {
                w.spawn(WorldRank(r), move |p| async move {
                    let _ = p.send(WorldRank(0), tag(r), vec![r as u8]);
                });
            }
            w.spawn(WorldRank(0), |p| async move {
                for r in 1..4 {
                    let _ = p.recv(WorldRank(r), RecvFilter::new(G, r, 0)).await;
                }
            });
            w.run();
            w.trace().render()
        };
        assert_eq!(run(5), run(5));
    }
}
