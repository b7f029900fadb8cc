//! Message-passing API over locked arrays.
//!
//! Rank code is written once as an `async` function taking a [`World`] and
//! runs unchanged on two backends: the deterministic simulator in [`sim`],
//! where every API call is a scheduling point, and real threads in
//! [`threads`]. Every call checks its preconditions against the topology
//! before touching the backend, so a protocol mistake surfaces as a
//! [`RuntimeError::Precondition`] carrying the same axiom and clause the
//! calculus monitor would report.

pub mod sim;
pub mod threads;

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::rc::Rc;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::arrays::{ArrayError, Buffer, Region};
use crate::calculus::{validate_topology, CollectiveKind, EvalError, ReduceOp, Resolved, SpecError, TopologySpec};
use crate::monitor::{Axiom, Clause, Violation};

/// Expected payload for `(tag, size)`, or `None` where the topology has no
/// opinion for that pair.
pub type MessageFn = Arc<dyn Fn(i64, i64) -> Option<Vec<f64>> + Send + Sync>;
/// Expected gather segment for `(collective index, rank, size)`.
pub type SegmentFn = Arc<dyn Fn(i64, i64, i64) -> Option<Vec<f64>> + Send + Sync>;
/// Expected all-reduce contribution for `(collective index, rank, size)`.
pub type ContributionFn = Arc<dyn Fn(i64, i64, i64) -> Option<f64> + Send + Sync>;

/// Topology plus the array-valued payload expectations. Any expectation left
/// as `None` is not checked.
#[derive(Clone)]
pub struct RuntimeSpec {
    pub topology: TopologySpec,
    pub message: Option<MessageFn>,
    pub expected_segment: Option<SegmentFn>,
    pub expected_contribution: Option<ContributionFn>,
}

impl RuntimeSpec {
    pub fn new(topology: TopologySpec) -> Self {
        RuntimeSpec {
            topology,
            message: None,
            expected_segment: None,
            expected_contribution: None,
        }
    }

    pub fn with_message(mut self, f: impl Fn(i64, i64) -> Option<Vec<f64>> + Send + Sync + 'static) -> Self {
        self.message = Some(Arc::new(f));
        self
    }

    pub fn with_segments(mut self, f: impl Fn(i64, i64, i64) -> Option<Vec<f64>> + Send + Sync + 'static) -> Self {
        self.expected_segment = Some(Arc::new(f));
        self
    }

    pub fn with_contributions(mut self, f: impl Fn(i64, i64, i64) -> Option<f64> + Send + Sync + 'static) -> Self {
        self.expected_contribution = Some(Arc::new(f));
        self
    }

    /// Validates the topology for `n` ranks (skipped for a single rank, which
    /// exchanges no messages) and tabulates it.
    pub fn prepare(&self, n: i64) -> Result<Resolved, RuntimeError> {
        if n < 1 {
            return Err(RuntimeError::Config(format!("need at least one rank, got {n}")));
        }
        if n > 1 {
            let errors = validate_topology(&self.topology, n..=n);
            if !errors.is_empty() {
                return Err(RuntimeError::InvalidSpec(errors));
            }
        }
        Ok(self.topology.resolve(n)?)
    }
}

impl fmt::Debug for RuntimeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RuntimeSpec")
            .field("topology", &self.topology)
            .field("message", &self.message.is_some())
            .field("expected_segment", &self.expected_segment.is_some())
            .field("expected_contribution", &self.expected_contribution.is_some())
            .finish()
    }
}

#[derive(Clone, Debug, Error, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum RuntimeError {
    #[error("precondition failed: {0}")]
    Precondition(Violation),
    #[error("rank {rank}: payload for tag {tag} differs from the topology at element {index}")]
    PayloadMismatch { rank: i64, tag: i64, index: usize },
    #[error("rank {rank}: received payload for tag {tag} differs from the topology")]
    RelyViolated { rank: i64, tag: i64 },
    #[error("rank {rank}: region for tag {tag} overlaps a pending operation: {source}")]
    BufferConflict { rank: i64, tag: i64, source: ArrayError },
    #[error("rank {rank}: {source}")]
    Array { rank: i64, source: ArrayError },
    #[error("rank {rank}: request for tag {tag} was issued on a different buffer")]
    WrongBuffer { rank: i64, tag: i64 },
    #[error("rank {rank}: collective {index} is {expected:?} but {called} was called")]
    CollectiveMismatch {
        rank: i64,
        index: i64,
        expected: CollectiveKind,
        called: String,
    },
    #[error("rank {rank}: gather segment for collective {index} differs from the topology")]
    SegmentMismatch { rank: i64, index: i64 },
    #[error("rank {rank}: contribution {actual} to collective {index} differs from the expected {expected}")]
    ContributionMismatch {
        rank: i64,
        index: i64,
        expected: f64,
        actual: f64,
    },
    #[error("deadlock: {}", .blocked.join("; "))]
    Deadlock { blocked: Vec<String> },
    #[error("rank {rank} timed out waiting for {waiting_for}")]
    Timeout { rank: i64, waiting_for: String },
    #[error("rank {rank} stopped because another rank failed")]
    Aborted { rank: i64 },
    #[error("rank {rank} panicked: {message}")]
    Panicked { rank: i64, message: String },
    #[error("rank {rank} finished with unfinished communication: {detail}")]
    Leftover { rank: i64, detail: String },
    #[error("topology cannot be evaluated: {0}")]
    Spec(#[from] EvalError),
    #[error("invalid topology: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidSpec(Vec<SpecError>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl RuntimeError {
    /// Failures of the simulated or threaded runtime itself, as opposed to
    /// mistakes in rank code.
    pub fn is_infrastructure(&self) -> bool {
        matches!(self, RuntimeError::Aborted { .. } | RuntimeError::Protocol(_))
    }
}

fn violation(axiom: Axiom, rank: i64, clause: Clause) -> RuntimeError {
    RuntimeError::Precondition(Violation {
        axiom,
        rank,
        clause,
        state_index: None,
    })
}

/// Payload compared and hashed by bit pattern, so NaNs and signed zeros are
/// told apart exactly.
#[derive(Clone, Debug, Default)]
pub struct Payload(pub Vec<f64>);

impl PartialEq for Payload {
    fn eq(&self, other: &Self) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for Payload {}

impl Hash for Payload {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.len().hash(state);
        for v in &self.0 {
            v.to_bits().hash(state);
        }
    }
}

fn first_difference(a: &[f64], b: &[f64]) -> Option<usize> {
    if a.len() != b.len() {
        return Some(a.len().min(b.len()));
    }
    a.iter().zip(b).position(|(x, y)| x.to_bits() != y.to_bits())
}

/// One request to the backend. Sends carry their payload, snapshotted when
/// the send is posted.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(crate) enum Op {
    Send { tag: i64, payload: Payload },
    Recv { tag: i64 },
    WaitSend { tag: i64 },
    WaitRecv { tag: i64 },
    Collective { index: i64, kind: CollectiveKind, contribution: Payload },
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Send { tag, .. } => write!(f, "isend {tag}"),
            Op::Recv { tag } => write!(f, "irecv {tag}"),
            Op::WaitSend { tag } => write!(f, "wait (send) {tag}"),
            Op::WaitRecv { tag } => write!(f, "wait (recv) {tag}"),
            Op::Collective { index, kind, .. } => write!(f, "collective {index} ({kind:?})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(crate) enum OpResult {
    Done,
    Payload(Payload),
}

/// Combines the per-rank contributions of one collective into per-rank
/// results.
pub(crate) fn combine(kind: CollectiveKind, contributions: &[Payload]) -> Vec<Payload> {
    let n = contributions.len();
    match kind {
        CollectiveKind::PlainBarrier => vec![Payload::default(); n],
        CollectiveKind::Gather { root } => {
            let all: Vec<f64> = contributions.iter().flat_map(|p| p.0.iter().copied()).collect();
            (0..n)
                .map(|r| {
                    if r as i64 == root {
                        Payload(all.clone())
                    } else {
                        Payload::default()
                    }
                })
                .collect()
        }
        CollectiveKind::AllReduce { op } => {
            let v = op.fold(contributions.iter().map(|p| p.0.first().copied().unwrap_or(f64::NAN)));
            vec![Payload(v.into_iter().collect()); n]
        }
    }
}

#[derive(Clone)]
pub(crate) enum Link {
    Sim(Rc<sim::Shared>),
    Threads(Arc<threads::Shared>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Send,
    Recv,
}

/// Handle for a pending non-blocking operation. Not `Clone`: it is consumed
/// by exactly one [`World::wait`].
#[derive(Debug, PartialEq, Eq)]
#[must_use = "a request must be waited on"]
pub struct Request {
    kind: RequestKind,
    tag: i64,
    buffer: u64,
    region: Region,
}

impl Request {
    pub fn kind(&self) -> RequestKind {
        self.kind
    }

    pub fn tag(&self) -> i64 {
        self.tag
    }

    pub fn region(&self) -> Region {
        self.region
    }
}

#[derive(Clone, Copy, Debug)]
struct Pending {
    kind: RequestKind,
    buffer: u64,
}

/// One rank's view of the communicator.
pub struct World {
    rank: i64,
    size: i64,
    spec: Arc<RuntimeSpec>,
    resolved: Arc<Resolved>,
    last_tag: i64,
    clct: i64,
    pending: BTreeMap<i64, Pending>,
    link: Link,
}

impl World {
    pub(crate) fn new(rank: i64, spec: Arc<RuntimeSpec>, resolved: Arc<Resolved>, link: Link) -> Self {
        World {
            rank,
            size: resolved.n,
            spec,
            resolved,
            last_tag: -1,
            clct: 0,
            pending: BTreeMap::new(),
            link,
        }
    }

    pub fn rank(&self) -> i64 {
        self.rank
    }

    pub fn size(&self) -> i64 {
        self.size
    }

    pub fn last_tag(&self) -> i64 {
        self.last_tag
    }

    /// Number of collectives passed so far.
    pub fn clct(&self) -> i64 {
        self.clct
    }

    pub fn barrier_count(&self) -> i64 {
        self.resolved.count
    }

    pub fn is_done(&self) -> bool {
        self.clct == self.resolved.count
    }

    pub fn spec(&self) -> &RuntimeSpec {
        &self.spec
    }

    /// First tag of the current barrier interval, i.e. the tag base of the
    /// current step in the benchmark layouts.
    pub fn interval_start(&self) -> Result<i64, RuntimeError> {
        Ok(self.resolved.barrier_tag(self.clct)?)
    }

    async fn perform(&self, op: Op) -> Result<OpResult, RuntimeError> {
        match &self.link {
            Link::Sim(shared) => sim::SimOp::new(shared.clone(), self.rank, op).await,
            Link::Threads(shared) => shared.perform(self.rank, op),
        }
    }

    fn check_interval(&self, axiom: Axiom, tag: i64) -> Result<(), RuntimeError> {
        let lo = self.resolved.barrier_tag(self.clct)?;
        let hi = self.resolved.barrier_tag(self.clct + 1)?;
        if tag < lo || tag >= hi {
            return Err(violation(axiom, self.rank, Clause::OutsideInterval { tag, lo, hi }));
        }
        Ok(())
    }

    fn expected_message(&self, tag: i64) -> Result<Option<Vec<f64>>, RuntimeError> {
        match &self.spec.message {
            None => Ok(None),
            Some(f) => match f(tag, self.size) {
                Some(v) => Ok(Some(v)),
                None => Err(violation(Axiom::AtSend, self.rank, Clause::SpecUndefined { tag })),
            },
        }
    }

    fn array_err(&self, source: ArrayError) -> RuntimeError {
        RuntimeError::Array { rank: self.rank, source }
    }

    /// Posts a non-blocking send of `region` to `dest`. The region stays
    /// read-locked until the request is waited on.
    pub async fn isend<B: Buffer + ?Sized>(
        &mut self,
        buf: &mut B,
        region: Region,
        dest: i64,
        tag: i64,
    ) -> Result<Request, RuntimeError> {
        let sender = self.resolved.sender(tag)?;
        if sender != self.rank {
            return Err(violation(Axiom::AtSend, self.rank, Clause::WrongSender { tag, expected: sender }));
        }
        let receiver = self.resolved.receiver(tag)?;
        if receiver != dest {
            return Err(violation(Axiom::AtSend, self.rank, Clause::WrongReceiver { tag, expected: receiver }));
        }
        if self.pending.contains_key(&tag) {
            return Err(violation(Axiom::AtSend, self.rank, Clause::AlreadyPending { tag }));
        }
        self.check_interval(Axiom::AtSend, tag)?;
        let payload = buf.read_region(region).map_err(|e| self.array_err(e))?;
        if let Some(expected) = self.expected_message(tag)? {
            if let Some(index) = first_difference(&payload, &expected) {
                return Err(RuntimeError::PayloadMismatch {
                    rank: self.rank,
                    tag,
                    index,
                });
            }
        }
        buf.acquire_read(region).map_err(|source| RuntimeError::BufferConflict {
            rank: self.rank,
            tag,
            source,
        })?;
        if let Err(e) = self
            .perform(Op::Send {
                tag,
                payload: Payload(payload),
            })
            .await
        {
            let _ = buf.release_read(region);
            return Err(e);
        }
        self.pending.insert(
            tag,
            Pending {
                kind: RequestKind::Send,
                buffer: buf.id(),
            },
        );
        Ok(Request {
            kind: RequestKind::Send,
            tag,
            buffer: buf.id(),
            region,
        })
    }

    /// Posts a non-blocking receive into `region`, which is write-locked
    /// until the request is waited on.
    pub async fn irecv<B: Buffer + ?Sized>(&mut self, buf: &mut B, region: Region, tag: i64) -> Result<Request, RuntimeError> {
        let receiver = self.resolved.receiver(tag)?;
        if receiver != self.rank {
            return Err(violation(Axiom::AtRecv, self.rank, Clause::WrongReceiver { tag, expected: receiver }));
        }
        if self.pending.contains_key(&tag) {
            return Err(violation(Axiom::AtRecv, self.rank, Clause::AlreadyPending { tag }));
        }
        self.check_interval(Axiom::AtRecv, tag)?;
        let len = buf.region_len(region).map_err(|e| self.array_err(e))?;
        if let Some(expected) = self.expected_message(tag)? {
            if expected.len() != len {
                return Err(self.array_err(ArrayError::LengthMismatch {
                    expected: expected.len(),
                    actual: len,
                }));
            }
        }
        buf.acquire_write(region).map_err(|source| RuntimeError::BufferConflict {
            rank: self.rank,
            tag,
            source,
        })?;
        if let Err(e) = self.perform(Op::Recv { tag }).await {
            let _ = buf.release_write(region);
            return Err(e);
        }
        self.pending.insert(
            tag,
            Pending {
                kind: RequestKind::Recv,
                buffer: buf.id(),
            },
        );
        Ok(Request {
            kind: RequestKind::Recv,
            tag,
            buffer: buf.id(),
            region,
        })
    }

    /// Completes a request: releases its lock exactly once and, for a
    /// receive, fills the region with the payload.
    pub async fn wait<B: Buffer + ?Sized>(&mut self, req: Request, buf: &mut B) -> Result<(), RuntimeError> {
        let tag = req.tag;
        if req.buffer != buf.id() {
            return Err(RuntimeError::WrongBuffer { rank: self.rank, tag });
        }
        match self.pending.get(&tag) {
            Some(p) if p.kind == req.kind && p.buffer == req.buffer => {}
            _ => return Err(violation(Axiom::AtWait, self.rank, Clause::NotPosted { tag })),
        }
        if tag <= self.last_tag {
            return Err(violation(
                Axiom::AtWait,
                self.rank,
                Clause::NotIncreasing {
                    tag,
                    last_tag: self.last_tag,
                },
            ));
        }
        if let Some(skipped) = self.resolved.owns_tag_between(self.rank, self.last_tag, tag)? {
            return Err(violation(Axiom::AtWait, self.rank, Clause::SkippedTag { tag, skipped }));
        }
        self.check_interval(Axiom::AtWait, tag)?;
        match req.kind {
            RequestKind::Send => {
                self.perform(Op::WaitSend { tag }).await?;
                buf.release_read(req.region).map_err(|e| self.array_err(e))?;
            }
            RequestKind::Recv => {
                let OpResult::Payload(Payload(data)) = self.perform(Op::WaitRecv { tag }).await? else {
                    return Err(RuntimeError::Protocol(format!("receive {tag} completed without a payload")));
                };
                if let Some(expected) = self.expected_message(tag)? {
                    if first_difference(&data, &expected).is_some() {
                        return Err(RuntimeError::RelyViolated { rank: self.rank, tag });
                    }
                }
                buf.release_write(req.region).map_err(|e| self.array_err(e))?;
                buf.write_region(req.region, &data).map_err(|e| self.array_err(e))?;
            }
        }
        self.pending.remove(&tag);
        self.last_tag = tag;
        Ok(())
    }

    /// Blocking send: `isend` then `wait`.
    pub async fn send<B: Buffer + ?Sized>(&mut self, buf: &mut B, region: Region, dest: i64, tag: i64) -> Result<(), RuntimeError> {
        let req = self.isend(buf, region, dest, tag).await?;
        self.wait(req, buf).await
    }

    /// Blocking receive: `irecv` then `wait`.
    pub async fn recv<B: Buffer + ?Sized>(&mut self, buf: &mut B, region: Region, tag: i64) -> Result<(), RuntimeError> {
        let req = self.irecv(buf, region, tag).await?;
        self.wait(req, buf).await
    }

    fn collective_pre(&self, called: CollectiveKind) -> Result<(), RuntimeError> {
        if let Some((&tag, p)) = self.pending.iter().next() {
            let clause = match p.kind {
                RequestKind::Send => Clause::PendingSend { tag },
                RequestKind::Recv => Clause::PendingRecv { tag },
            };
            return Err(violation(Axiom::AtBarrier, self.rank, clause));
        }
        if self.clct >= self.resolved.count {
            return Err(violation(
                Axiom::AtBarrier,
                self.rank,
                Clause::BarrierCount {
                    expected: self.resolved.count,
                    actual: self.clct + 1,
                },
            ));
        }
        let next = self.resolved.barrier_tag(self.clct + 1)?;
        if next <= self.last_tag {
            return Err(violation(
                Axiom::AtBarrier,
                self.rank,
                Clause::NotIncreasing {
                    tag: next,
                    last_tag: self.last_tag,
                },
            ));
        }
        if let Some(skipped) = self.resolved.owns_tag_between(self.rank, self.last_tag, next)? {
            return Err(violation(Axiom::AtBarrier, self.rank, Clause::SkippedTag { tag: next, skipped }));
        }
        let expected = self.spec.topology.collective(self.clct);
        if expected != called {
            return Err(RuntimeError::CollectiveMismatch {
                rank: self.rank,
                index: self.clct,
                expected,
                called: format!("{called:?}"),
            });
        }
        Ok(())
    }

    async fn collective(&mut self, kind: CollectiveKind, contribution: Vec<f64>) -> Result<Vec<f64>, RuntimeError> {
        let result = self
            .perform(Op::Collective {
                index: self.clct,
                kind,
                contribution: Payload(contribution),
            })
            .await?;
        self.clct += 1;
        match result {
            OpResult::Payload(Payload(v)) => Ok(v),
            OpResult::Done => Ok(Vec::new()),
        }
    }

    pub async fn barrier(&mut self) -> Result<(), RuntimeError> {
        self.collective_pre(CollectiveKind::PlainBarrier)?;
        self.collective(CollectiveKind::PlainBarrier, Vec::new()).await?;
        Ok(())
    }

    /// Concatenates every rank's `region` of `send` at `root`, in rank
    /// order, into `recv` (required at the root, ignored elsewhere).
    pub async fn gather<B: Buffer + ?Sized>(
        &mut self,
        send: &B,
        region: Region,
        recv: Option<(&mut dyn Buffer, Region)>,
        root: i64,
    ) -> Result<(), RuntimeError> {
        let kind = CollectiveKind::Gather { root };
        self.collective_pre(kind)?;
        let segment = send.read_region(region).map_err(|e| self.array_err(e))?;
        if let Some(f) = &self.spec.expected_segment {
            let ok = f(self.clct, self.rank, self.size).is_some_and(|exp| first_difference(&segment, &exp).is_none());
            if !ok {
                return Err(RuntimeError::SegmentMismatch {
                    rank: self.rank,
                    index: self.clct,
                });
            }
        }
        if self.rank == root && recv.is_none() {
            return Err(RuntimeError::Config(format!("rank {root} is the gather root but passed no receive buffer")));
        }
        let all = self.collective(kind, segment).await?;
        if self.rank == root {
            let (buf, region) = recv.expect("checked above");
            buf.write_region(region, &all).map_err(|e| self.array_err(e))?;
        }
        Ok(())
    }

    /// Left fold of every rank's `value` in rank order, delivered to all.
    pub async fn allreduce(&mut self, value: f64, op: ReduceOp) -> Result<f64, RuntimeError> {
        let kind = CollectiveKind::AllReduce { op };
        self.collective_pre(kind)?;
        if let Some(f) = &self.spec.expected_contribution {
            let expected = f(self.clct, self.rank, self.size).unwrap_or(f64::NAN);
            if expected.to_bits() != value.to_bits() {
                return Err(RuntimeError::ContributionMismatch {
                    rank: self.rank,
                    index: self.clct,
                    expected,
                    actual: value,
                });
            }
        }
        let v = self.collective(kind, vec![value]).await?;
        v.first()
            .copied()
            .ok_or_else(|| RuntimeError::Protocol("all-reduce returned nothing".into()))
    }

    /// Checks the end-of-program obligations: every collective passed and
    /// nothing left pending.
    pub fn finish(&self) -> Result<(), RuntimeError> {
        if let Some((&tag, p)) = self.pending.iter().next() {
            return Err(RuntimeError::Leftover {
                rank: self.rank,
                detail: format!("{:?} request for tag {tag}", p.kind),
            });
        }
        if self.clct != self.resolved.count {
            return Err(violation(
                Axiom::AtEnd,
                self.rank,
                Clause::BarrierCount {
                    expected: self.resolved.count,
                    actual: self.clct,
                },
            ));
        }
        Ok(())
    }
}
