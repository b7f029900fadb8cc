//! Per-state checks of the program obligations. A violation is reported as
//! data: the state a process is about to step from breaks one of the
//! conditions its head command must satisfy.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::calculus::{Command, GlobalState, Resolved};
use crate::semantics::{blocked_classes, Blocked, ReplayError, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axiom {
    AtStart,
    AtSend,
    AtRecv,
    AtWait,
    AtBarrier,
    AtEnd,
    AtSet,
    AtRead,
}

/// Which conclusion failed, with the values involved.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "clause", rename_all = "snake_case")]
pub enum Clause {
    /// The initial state is not `program; barrier` with only rank and size bound.
    BadStart,
    WrongSender { tag: i64, expected: i64 },
    WrongReceiver { tag: i64, expected: i64 },
    WrongPayload { tag: i64, expected: i64, actual: Option<i64> },
    AlreadyPending { tag: i64 },
    /// The waited (or barrier) tag does not exceed the last completed one.
    NotIncreasing { tag: i64, last_tag: i64 },
    /// A tag this rank owns lies strictly between the last one and `tag`.
    SkippedTag { tag: i64, skipped: i64 },
    OutsideInterval { tag: i64, lo: i64, hi: i64 },
    NotPosted { tag: i64 },
    PendingSend { tag: i64 },
    PendingRecv { tag: i64 },
    BarrierCount { expected: i64, actual: i64 },
    PendingBuffer { var: String, tag: i64 },
    WritesRank,
    ReadsPending { var: String, tag: i64 },
    /// The topology function could not be evaluated for this check.
    SpecUndefined { tag: i64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Violation {
    pub axiom: Axiom,
    pub rank: i64,
    #[serde(flatten)]
    pub clause: Clause,
    /// Position in the trace of the offending state, when known.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub state_index: Option<usize>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at rank {}: {:?}", self.axiom, self.rank, self.clause)?;
        if let Some(i) = self.state_index {
            write!(f, " (state {i})")?;
        }
        Ok(())
    }
}

struct Checker<'a> {
    s: &'a GlobalState,
    spec: &'a Resolved,
    out: Vec<Violation>,
}

impl Checker<'_> {
    fn flag(&mut self, axiom: Axiom, rank: i64, clause: Clause) {
        self.out.push(Violation {
            axiom,
            rank,
            clause,
            state_index: None,
        });
    }

    /// Tags between `lo` and `hi` (exclusive) owned by `rank`.
    fn skipped(&mut self, axiom: Axiom, rank: i64, lo: i64, hi: i64) {
        match self.spec.owns_tag_between(rank, lo, hi) {
            Ok(Some(skipped)) => self.flag(axiom, rank, Clause::SkippedTag { tag: hi, skipped }),
            Ok(None) => {}
            Err(_) => self.flag(axiom, rank, Clause::SpecUndefined { tag: hi }),
        }
    }

    fn check_proc(&mut self, i: usize) {
        let s = self.s;
        let spec = self.spec;
        let p = &s.procs[i];
        let rank = i as i64;
        let head = p.cmd.head();
        match head {
            Command::ISend { tag, var } => {
                let Ok(v) = tag.eval(&p.env) else { return };
                match spec.sender(v) {
                    Ok(sender) if sender != rank => {
                        self.flag(Axiom::AtSend, rank, Clause::WrongSender { tag: v, expected: sender })
                    }
                    Err(_) => self.flag(Axiom::AtSend, rank, Clause::SpecUndefined { tag: v }),
                    _ => {}
                }
                match spec.message(v) {
                    Ok(expected) => {
                        let actual = p.env.get(var).copied();
                        if actual != Some(expected) {
                            self.flag(Axiom::AtSend, rank, Clause::WrongPayload { tag: v, expected, actual });
                        }
                    }
                    Err(_) => self.flag(Axiom::AtSend, rank, Clause::SpecUndefined { tag: v }),
                }
                if s.send_buf.contains_key(&v) {
                    self.flag(Axiom::AtSend, rank, Clause::AlreadyPending { tag: v });
                }
            }
            Command::IRecv { tag, .. } => {
                let Ok(v) = tag.eval(&p.env) else { return };
                match spec.receiver(v) {
                    Ok(receiver) if receiver != rank => self.flag(
                        Axiom::AtRecv,
                        rank,
                        Clause::WrongReceiver { tag: v, expected: receiver },
                    ),
                    Err(_) => self.flag(Axiom::AtRecv, rank, Clause::SpecUndefined { tag: v }),
                    _ => {}
                }
                if s.recv_buf.contains_key(&v) {
                    self.flag(Axiom::AtRecv, rank, Clause::AlreadyPending { tag: v });
                }
            }
            Command::Wait(tag) => {
                let Ok(v) = tag.eval(&p.env) else { return };
                if v <= p.last_tag {
                    self.flag(Axiom::AtWait, rank, Clause::NotIncreasing { tag: v, last_tag: p.last_tag });
                }
                self.skipped(Axiom::AtWait, rank, p.last_tag, v);
                match (spec.barrier_tag(p.barriers), spec.barrier_tag(p.barriers + 1)) {
                    (Ok(lo), Ok(hi)) => {
                        if !(lo <= v && v < hi) {
                            self.flag(Axiom::AtWait, rank, Clause::OutsideInterval { tag: v, lo, hi });
                        }
                    }
                    _ => self.flag(Axiom::AtWait, rank, Clause::SpecUndefined { tag: v }),
                }
                let posted = (spec.sender(v) == Ok(rank) && s.send_buf.contains_key(&v))
                    || (spec.receiver(v) == Ok(rank) && s.recv_buf.contains_key(&v));
                if !posted {
                    self.flag(Axiom::AtWait, rank, Clause::NotPosted { tag: v });
                }
            }
            Command::Barrier => {
                let Ok(v) = spec.barrier_tag(p.barriers + 1) else {
                    self.flag(Axiom::AtBarrier, rank, Clause::SpecUndefined { tag: -1 });
                    return;
                };
                if v <= p.last_tag {
                    self.flag(Axiom::AtBarrier, rank, Clause::NotIncreasing { tag: v, last_tag: p.last_tag });
                }
                self.skipped(Axiom::AtBarrier, rank, p.last_tag, v);
                for &t in s.send_buf.keys() {
                    if spec.sender(t) == Ok(rank) {
                        self.flag(Axiom::AtBarrier, rank, Clause::PendingSend { tag: t });
                    }
                }
                for &t in s.recv_buf.keys() {
                    if spec.receiver(t) == Ok(rank) {
                        self.flag(Axiom::AtBarrier, rank, Clause::PendingRecv { tag: t });
                    }
                }
            }
            Command::Skip if p.cmd.is_terminated() => {
                if p.barriers != spec.count {
                    self.flag(
                        Axiom::AtEnd,
                        rank,
                        Clause::BarrierCount { expected: spec.count, actual: p.barriers },
                    );
                }
            }
            Command::Set { var, .. } => {
                for (&t, x) in &s.send_buf {
                    if x == var && spec.sender(t) == Ok(rank) {
                        self.flag(Axiom::AtSet, rank, Clause::PendingBuffer { var: var.clone(), tag: t });
                    }
                }
                for (&t, x) in &s.recv_buf {
                    if x == var && spec.receiver(t) == Ok(rank) {
                        self.flag(Axiom::AtSet, rank, Clause::PendingBuffer { var: var.clone(), tag: t });
                    }
                }
                if var == "rank" {
                    self.flag(Axiom::AtSet, rank, Clause::WritesRank);
                }
            }
            _ => {}
        }

        // Reads of variables with a pending receive. The source variable of
        // an isend counts as a read: its value is what the transfer copies.
        let mut reads = Vec::new();
        for e in head.direct_exprs() {
            e.reads(&mut reads);
        }
        if let Command::ISend { var, .. } = head {
            reads.push(var);
        }
        if reads.is_empty() {
            return;
        }
        for (&t, x) in &s.recv_buf {
            if reads.contains(&x.as_str()) && spec.receiver(t) == Ok(rank) {
                self.flag(Axiom::AtRead, rank, Clause::ReadsPending { var: x.clone(), tag: t });
            }
        }
    }
}

/// Violations of every obligation whose premise holds in `s`.
pub fn check_state(s: &GlobalState, spec: &Resolved) -> Vec<Violation> {
    let mut c = Checker {
        s,
        spec,
        out: Vec::new(),
    };
    for i in 0..s.procs.len() {
        c.check_proc(i);
    }
    c.out
}

/// Checks that `s` has the shape every execution must start from.
pub fn check_start(s: &GlobalState) -> Vec<Violation> {
    let n = s.size();
    let mut out = Vec::new();
    let program = s.procs.first().and_then(|p| match &p.cmd {
        Command::Seq(c, rest) if matches!(rest.as_ref(), Command::Barrier) => Some(c.clone()),
        _ => None,
    });
    let buffers_empty = s.recv_buf.is_empty() && s.send_buf.is_empty() && s.msg_buf.is_empty();
    for (i, p) in s.procs.iter().enumerate() {
        let same_program = match (&program, &p.cmd) {
            (Some(c), Command::Seq(d, rest)) => c == d && matches!(rest.as_ref(), Command::Barrier),
            _ => false,
        };
        let env_ok = p.env.len() == 2
            && p.env.get("rank") == Some(&(i as i64))
            && p.env.get("size") == Some(&n);
        if !(same_program && env_ok && p.last_tag == -1 && p.barriers == 0 && buffers_empty) {
            out.push(Violation {
                axiom: Axiom::AtStart,
                rank: i as i64,
                clause: Clause::BadStart,
                state_index: Some(0),
            });
        }
    }
    out
}

/// Replays `trace` and checks every state along it, including the start.
pub fn monitor_trace(trace: &Trace, spec: &Resolved) -> Result<Vec<Violation>, ReplayError> {
    let states = trace.replay(spec)?;
    let mut out = check_start(&states[0]);
    for (k, s) in states.iter().enumerate() {
        out.extend(check_state(s, spec).into_iter().map(|mut v| {
            v.state_index = Some(k);
            v
        }));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "lemma", rename_all = "snake_case")]
pub enum LemmaFailure {
    /// Two blocked processes wait on the same tag.
    NoTwoTagsTheSame { tag: i64, ranks: (i64, i64) },
    /// A process with a barrier still ahead has already passed them all.
    NumberOfBarriers { rank: i64, barriers: i64, count: i64 },
}

/// State-level consequences of the obligations. On programs with no
/// violations these must never fail.
pub fn check_lemmas(s: &GlobalState, spec: &Resolved) -> Vec<LemmaFailure> {
    let mut out = Vec::new();
    let mut waiting: Vec<(i64, i64)> = Vec::new();
    for (i, p) in s.procs.iter().enumerate() {
        if p.cmd.ends_in_barrier() && p.barriers >= spec.count {
            out.push(LemmaFailure::NumberOfBarriers {
                rank: i as i64,
                barriers: p.barriers,
                count: spec.count,
            });
        }
        let classes = blocked_classes(s, spec, i);
        if classes.contains(&Blocked::OnSend) || classes.contains(&Blocked::OnRecv) {
            if let Command::Wait(e) = p.cmd.head() {
                if let Ok(t) = e.eval(&p.env) {
                    waiting.push((t, i as i64));
                }
            }
        }
    }
    waiting.sort();
    for w in waiting.windows(2) {
        if w[0].0 == w[1].0 {
            out.push(LemmaFailure::NoTwoTagsTheSame {
                tag: w[0].0,
                ranks: (w[0].1, w[1].1),
            });
        }
    }
    out
}
