use std::fmt;
use std::io::{self, Write};

use super::{Phase, Time, WorldRank};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Send,
    Recv,
    Fail,
    Probe,
}

impl EventKind {
    fn as_str(self) -> &'static str {
        match self {
            EventKind::Send => "SEND",
            EventKind::Recv => "RECV",
            EventKind::Fail => "FAIL",
            EventKind::Probe => "PROBE",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Ok,
    ProcFailed,
    Revoked,
}

impl Outcome {
    fn as_str(self) -> &'static str {
        match self {
            Outcome::Ok => "ok",
            Outcome::ProcFailed => "pf",
            Outcome::Revoked => "rv",
        }
    }
}

/// One trace line.
///
/// `initiator` is the process that performed the operation; for `RECV` this
/// is `dst`, for `SEND` it is `src`. Probe acknowledgements are initiated by
/// the probed rank's runtime.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub time: Time,
    pub kind: EventKind,
    pub src: WorldRank,
    pub dst: WorldRank,
    pub phase: Phase,
    pub position: u32,
    pub bytes: usize,
    pub outcome: Outcome,
    pub initiator: WorldRank,
}

impl Event {
    /// A message travelled on the wire.
    pub fn is_message(&self) -> bool {
        matches!(self.kind, EventKind::Send | EventKind::Probe) && self.outcome == Outcome::Ok
    }

    pub fn is_failed_detection(&self) -> bool {
        self.kind != EventKind::Fail && self.outcome == Outcome::ProcFailed
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} {} src={} dst={} phase={} pos={} bytes={} result={}",
            self.time,
            self.kind.as_str(),
            self.src.0,
            self.dst.0,
            self.phase.letter(),
            self.position,
            self.bytes,
            self.outcome.as_str()
        )
    }
}

/// Ordered event log of one run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    events: Vec<Event>,
}

impl Trace {
    pub(crate) fn push(&mut self, e: Event) {
        self.events.push(e);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            writeln!(w, "{e}")?;
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(out).expect("trace is ASCII")
    }
}
