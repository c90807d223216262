//! Per-process liveness discovery state machines.
//!
//! Both variants run a binomial gather to position 0 followed by a broadcast
//! of the merged set. The naive variant skips any operation whose peer has
//! failed. The adaptive variant walks successors of a failed position until a
//! live holder answers, and takes over the duties of a failed parent when no
//! rank between the parent and itself is alive.
//!
//! A holder whose parent dies after it already delivered its data is "late":
//! whoever inherits that parent may have already sent the final set to some
//! children, so a late holder asks each child holder with a request message
//! and accepts either fresh gather data or the final set. Processes that
//! finished keep answering gather data and requests for their instance with
//! the final set.

use std::collections::BTreeMap;

use crate::sim::{Kind, Message, OpError, Phase, Proc, RecvFilter, Reply, Tag, WorldRank};
use crate::topology::{children, parent, subtree_range, AlgRank, FailureSet, TreeShape};

use super::codec::{decode_rank_set, encode_rank_set, Layout, RankSetPayload};
use super::{GroupSpec, LdaOutcome, LdaVariant};

const GATHER: &[Kind] = &[Kind::Gather];
const GATHER_OR_FINAL: &[Kind] = &[Kind::Gather, Kind::Broadcast];
const BROADCAST: &[Kind] = &[Kind::Broadcast];

type RankData = BTreeMap<AlgRank, bool>;

pub(super) struct Engine<'a> {
    proc: &'a Proc,
    group: &'a GroupSpec,
    shape: TreeShape,
    me: AlgRank,
    instance: u32,
    layout: Layout,
    detect: bool,
    data: RankData,
    failed: FailureSet,
    chain: Vec<AlgRank>,
    late: bool,
    root_set: Option<Vec<AlgRank>>,
    error: Option<OpError>,
}

impl<'a> Engine<'a> {
    pub(super) fn new(
        proc: &'a Proc,
        group: &'a GroupSpec,
        me: AlgRank,
        instance: u32,
        contribution: Option<bool>,
    ) -> Self {
        let mut data = RankData::new();
        data.insert(me, contribution.unwrap_or(true));
        Engine {
            proc,
            group,
            shape: group.shape(),
            me,
            instance,
            layout: if contribution.is_some() {
                Layout::WithFlags
            } else {
                Layout::Plain
            },
            detect: proc.detect_on_send(),
            data,
            failed: FailureSet::new(),
            chain: vec![me],
            late: false,
            root_set: None,
            error: None,
        }
    }

    pub(super) async fn run(self, variant: LdaVariant) -> LdaOutcome {
        match variant {
            LdaVariant::Naive => self.run_naive().await,
            LdaVariant::Adaptive => self.run_adaptive().await,
        }
    }

    fn world(&self, r: AlgRank) -> WorldRank {
        self.group.world(r)
    }

    fn tag(&self, kind: Kind, position: AlgRank) -> Tag {
        Tag {
            kind,
            position: position.0,
            instance: self.instance,
        }
    }

    fn filter(&self, kinds: &'static [Kind], position: AlgRank) -> RecvFilter {
        RecvFilter::new(kinds, position.0, self.instance)
    }

    fn encode(&self, data: &RankData) -> Vec<u8> {
        encode_payload(data, self.shape, self.layout)
    }

    fn decode(&self, bytes: &[u8]) -> RankData {
        let p = decode_rank_set(bytes, self.shape, self.layout)
            .expect("peers only send well-formed rank sets");
        match p.flags {
            Some(flags) => p.ranks.into_iter().zip(flags).collect(),
            None => p.ranks.into_iter().map(|r| (r, true)).collect(),
        }
    }

    fn merge(&mut self, bytes: &[u8]) {
        let incoming = self.decode(bytes);
        self.data.extend(incoming);
    }

    fn finish(self, set: RankData) -> LdaOutcome {
        let flag = match self.layout {
            Layout::WithFlags => Some(set.values().all(|&f| f)),
            Layout::Plain => None,
        };
        let mut positions = self.chain;
        positions.sort_unstable();
        LdaOutcome {
            survivors: set.into_keys().collect(),
            flag,
            error: self.error,
            root_set: self.root_set,
            positions,
        }
    }

    async fn run_naive(mut self) -> LdaOutcome {
        let me = self.me;
        for (_, c) in children(me, self.shape) {
            let src = self.world(c);
            if let Ok(d) = self.proc.recv(src, self.filter(GATHER, c)).await {
                self.merge(&d.payload);
            }
        }
        match parent(me, self.shape) {
            Some(p) => {
                let dst = self.world(p);
                let payload = self.encode(&self.data);
                if let Err(e) = self.proc.send_as(
                    dst,
                    self.tag(Kind::Gather, me),
                    Phase::Gather,
                    payload,
                    self.detect,
                ) {
                    self.error = Some(e);
                }
                match self.proc.recv(dst, self.filter(BROADCAST, me)).await {
                    Ok(d) => self.data = self.decode(&d.payload),
                    Err(e) => {
                        self.error.get_or_insert(e);
                    }
                }
            }
            None => self.root_set = Some(self.data.keys().copied().collect()),
        }
        let payload = self.encode(&self.data);
        for (_, c) in children(me, self.shape).into_iter().rev() {
            let _ = self.proc.send_as(
                self.world(c),
                self.tag(Kind::Broadcast, c),
                Phase::Broadcast,
                payload.clone(),
                self.detect,
            );
        }
        let set = std::mem::take(&mut self.data);
        self.finish(set)
    }

    async fn run_adaptive(mut self) -> LdaOutcome {
        let mut final_set = self.gather_position(self.me).await;
        while final_set.is_none() {
            let top = *self.chain.last().expect("chain starts with own rank");
            match parent(top, self.shape) {
                None => {
                    self.root_set = Some(self.data.keys().copied().collect());
                    final_set = Some(self.data.clone());
                }
                Some(p) => match self.deliver_up(top, p).await {
                    Some(set) => final_set = Some(set),
                    None => {
                        self.chain.push(p);
                        final_set = self.gather_position(p).await;
                    }
                },
            }
        }
        let set = final_set.expect("loop exits with a final set");
        if self.root_set.is_none() && self.chain.contains(&AlgRank(0)) {
            self.root_set = Some(set.keys().copied().collect());
        }
        self.broadcast(&set).await;
        self.install_responder(&set);
        self.finish(set)
    }

    /// Collect data for every child of `q` not held locally. Returns the final
    /// set if a late request was answered with it.
    async fn gather_position(&mut self, q: AlgRank) -> Option<RankData> {
        for (_, c) in children(q, self.shape) {
            if self.chain.contains(&c) {
                continue;
            }
            for x in subtree_range(c, self.shape).map(AlgRank) {
                if self.failed.contains(x) {
                    continue;
                }
                debug_assert_ne!(x, self.me);
                let peer = self.world(x);
                let kinds = if self.late {
                    let ask = self.proc.send_as(
                        peer,
                        self.tag(Kind::Request, c),
                        Phase::Probe,
                        Vec::new(),
                        self.detect,
                    );
                    if ask.is_err() {
                        self.failed.insert(x);
                        continue;
                    }
                    GATHER_OR_FINAL
                } else {
                    GATHER
                };
                match self.proc.recv(peer, self.filter(kinds, c)).await {
                    Ok(d) if d.tag.kind == Kind::Broadcast => return Some(self.decode(&d.payload)),
                    Ok(d) => {
                        self.merge(&d.payload);
                        break;
                    }
                    Err(_) => {
                        self.failed.insert(x);
                    }
                }
            }
        }
        None
    }

    /// Hand the data of position `top` to the holder of its parent `p` and
    /// wait for the final set. `None` means every rank in `[p, me)` is dead
    /// and this process now holds `p`.
    async fn deliver_up(&mut self, top: AlgRank, p: AlgRank) -> Option<RankData> {
        loop {
            let candidate = (p.0..self.me.0)
                .map(AlgRank)
                .find(|x| !self.failed.contains(*x));
            let x = candidate?;
            let peer = self.world(x);
            if !self.detect && self.proc.probe(peer, p.0).await.is_err() {
                self.failed.insert(x);
                continue;
            }
            let phase = if x == p { Phase::Gather } else { Phase::Probe };
            let payload = self.encode(&self.data);
            if self
                .proc
                .send_as(
                    peer,
                    self.tag(Kind::Gather, top),
                    phase,
                    payload,
                    self.detect,
                )
                .is_err()
            {
                self.failed.insert(x);
                continue;
            }
            match self.proc.recv(peer, self.filter(BROADCAST, top)).await {
                Ok(d) => return Some(self.decode(&d.payload)),
                Err(_) => {
                    self.failed.insert(x);
                    self.late = true;
                }
            }
        }
    }

    /// Send the final set to the holder of every child position, positions
    /// ascending, children by descending offset.
    async fn broadcast(&mut self, set: &RankData) {
        let payload = self.encode(set);
        let mut positions = self.chain.clone();
        positions.sort_unstable();
        for q in positions {
            for (_, c) in children(q, self.shape).into_iter().rev() {
                if self.chain.contains(&c) {
                    continue;
                }
                for x in subtree_range(c, self.shape).map(AlgRank) {
                    if self.failed.contains(x) {
                        continue;
                    }
                    let peer = self.world(x);
                    if !self.detect && self.proc.probe(peer, c.0).await.is_err() {
                        self.failed.insert(x);
                        continue;
                    }
                    let phase = if x == c {
                        Phase::Broadcast
                    } else {
                        Phase::Probe
                    };
                    let sent = self.proc.send_as(
                        peer,
                        self.tag(Kind::Broadcast, c),
                        phase,
                        payload.clone(),
                        self.detect,
                    );
                    match sent {
                        Ok(()) => break,
                        Err(_) => {
                            self.failed.insert(x);
                        }
                    }
                }
            }
        }
    }

    fn install_responder(&self, set: &RankData) {
        let payload = self.encode(set);
        let instance = self.instance;
        let group = self.group.clone();
        self.proc.set_responder(
            instance,
            Box::new(move |m: &Message| {
                if !matches!(m.tag.kind, Kind::Gather | Kind::Request) {
                    return None;
                }
                let nominal = group.alg(m.src) == Some(AlgRank(m.tag.position));
                Some(Reply {
                    tag: Tag {
                        kind: Kind::Broadcast,
                        position: m.tag.position,
                        instance,
                    },
                    phase: if nominal {
                        Phase::Broadcast
                    } else {
                        Phase::Probe
                    },
                    payload: payload.clone(),
                })
            }),
        );
    }
}

fn encode_payload(data: &RankData, shape: TreeShape, layout: Layout) -> Vec<u8> {
    let p = RankSetPayload {
        ranks: data.keys().copied().collect(),
        flags: match layout {
            Layout::WithFlags => Some(data.values().copied().collect()),
            Layout::Plain => None,
        },
    };
    encode_rank_set(&p, shape).expect("group sizes fit the 16-bit header")
}
