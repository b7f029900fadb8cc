//! Deterministic single-threaded execution of rank code.
//!
//! Each rank's future is polled until it blocks on its next runtime call;
//! the scheduler then picks one enabled communication action, mirroring the
//! calculus rules (post send, post receive, complete a wait, transfer with or
//! without a waiting receiver, pass a collective). Local computation between
//! calls is atomic, so the only interleavings are the ones that matter.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::sync::Arc;
use std::task::{Context, Poll};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{combine, Link, Op, OpResult, Payload, RuntimeError, RuntimeSpec, World};
use crate::calculus::{CollectiveKind, Resolved};
use crate::digest::Digest;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Head {
    Running,
    Blocked(Op),
    Completed(OpResult),
    Finished,
}

#[derive(Debug, Hash)]
struct State {
    heads: Vec<Head>,
    last_tag: Vec<i64>,
    /// Hash chain over each rank's received results; with deterministic rank
    /// code it stands in for the rank's local state.
    history: Vec<Digest>,
    passed: Vec<i64>,
    send_buf: BTreeMap<i64, Payload>,
    recv_buf: BTreeSet<i64>,
    msg_buf: BTreeMap<i64, Payload>,
}

pub(crate) struct Shared {
    state: RefCell<State>,
}

/// Future for one runtime call: registers the call on first poll, then
/// waits for the scheduler to complete it.
pub(crate) struct SimOp {
    shared: Rc<Shared>,
    rank: usize,
    op: Option<Op>,
}

impl SimOp {
    pub(crate) fn new(shared: Rc<Shared>, rank: i64, op: Op) -> Self {
        SimOp {
            shared,
            rank: rank as usize,
            op: Some(op),
        }
    }
}

impl Future for SimOp {
    type Output = Result<OpResult, RuntimeError>;

    fn poll(mut self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<Self::Output> {
        let rank = self.rank;
        if let Some(op) = self.op.take() {
            self.shared.state.borrow_mut().heads[rank] = Head::Blocked(op);
            return Poll::Pending;
        }
        let mut st = self.shared.state.borrow_mut();
        match std::mem::replace(&mut st.heads[rank], Head::Running) {
            Head::Completed(r) => Poll::Ready(Ok(r)),
            other => {
                st.heads[rank] = other;
                Poll::Pending
            }
        }
    }
}

/// One scheduling decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Send { rank: i64, tag: i64 },
    Recv { rank: i64, tag: i64 },
    WaitSend { rank: i64, tag: i64 },
    WaitRecv { rank: i64, tag: i64 },
    TransferOnWait { tag: i64 },
    TransferNoWait { tag: i64 },
    Collective { index: i64 },
}

pub trait Scheduler {
    /// Picks an index into `enabled`, or `None` to abandon the run.
    fn choose(&mut self, enabled: &[Action], state: Digest) -> Option<usize>;
}

/// Uniformly random choices from a seeded generator.
pub struct RandomScheduler(ChaCha8Rng);

impl RandomScheduler {
    pub fn new(seed: u64) -> Self {
        RandomScheduler(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl Scheduler for RandomScheduler {
    fn choose(&mut self, enabled: &[Action], _: Digest) -> Option<usize> {
        Some(self.0.gen_range(0..enabled.len()))
    }
}

/// Always the first enabled action.
pub struct FirstScheduler;

impl Scheduler for FirstScheduler {
    fn choose(&mut self, _: &[Action], _: Digest) -> Option<usize> {
        Some(0)
    }
}

/// Follows a recorded schedule; gives up if it stops matching.
pub struct ReplayScheduler {
    schedule: Vec<Action>,
    next: usize,
}

impl ReplayScheduler {
    pub fn new(schedule: Vec<Action>) -> Self {
        ReplayScheduler { schedule, next: 0 }
    }
}

impl Scheduler for ReplayScheduler {
    fn choose(&mut self, enabled: &[Action], _: Digest) -> Option<usize> {
        let want = self.schedule.get(self.next)?;
        self.next += 1;
        enabled.iter().position(|a| a == want)
    }
}

#[derive(Debug)]
pub struct SimRun<T> {
    /// Per-rank results, or `None` if the scheduler abandoned the run.
    pub outputs: Option<Vec<T>>,
    pub schedule: Vec<Action>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimFailure {
    pub error: RuntimeError,
    /// Actions taken up to the failure; replays it with [`ReplayScheduler`].
    pub schedule: Vec<Action>,
}

impl std::fmt::Display for SimFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} scheduled actions)", self.error, self.schedule.len())
    }
}

impl std::error::Error for SimFailure {}

impl State {
    fn new(n: usize) -> Self {
        State {
            heads: vec![Head::Running; n],
            last_tag: vec![-1; n],
            history: vec![Digest(0); n],
            passed: vec![0; n],
            send_buf: BTreeMap::new(),
            recv_buf: BTreeSet::new(),
            msg_buf: BTreeMap::new(),
        }
    }

    fn waiting(&self, rank: usize) -> bool {
        matches!(
            self.heads[rank],
            Head::Blocked(Op::WaitSend { .. } | Op::WaitRecv { .. } | Op::Collective { .. })
        )
    }

    fn enabled(&self, spec: &Resolved) -> Result<Vec<Action>, RuntimeError> {
        let mut out = Vec::new();
        for (r, head) in self.heads.iter().enumerate() {
            let rank = r as i64;
            match head {
                Head::Blocked(Op::Send { tag, .. }) => out.push(Action::Send { rank, tag: *tag }),
                Head::Blocked(Op::Recv { tag }) => out.push(Action::Recv { rank, tag: *tag }),
                Head::Blocked(Op::WaitSend { tag }) if self.msg_buf.contains_key(tag) => {
                    out.push(Action::WaitSend { rank, tag: *tag })
                }
                Head::Blocked(Op::WaitRecv { tag }) if self.msg_buf.contains_key(tag) => {
                    out.push(Action::WaitRecv { rank, tag: *tag })
                }
                _ => {}
            }
        }
        for &tag in self.send_buf.keys() {
            if self.msg_buf.contains_key(&tag) {
                continue;
            }
            let receiver = spec.receiver(tag)? as usize;
            if matches!(self.heads.get(receiver), Some(Head::Blocked(Op::WaitRecv { tag: t })) if *t == tag) {
                out.push(Action::TransferOnWait { tag });
            }
            let sender = spec.sender(tag)? as usize;
            if sender < self.heads.len() && !self.waiting(sender) {
                out.push(Action::TransferNoWait { tag });
            }
        }
        let mut index = None;
        let all_in_collective = self.heads.iter().all(|h| match h {
            Head::Blocked(Op::Collective { index: i, .. }) => *index.get_or_insert(*i) == *i,
            _ => false,
        });
        if all_in_collective {
            out.push(Action::Collective {
                index: index.expect("at least one rank"),
            });
        }
        Ok(out)
    }

    fn complete(&mut self, rank: usize, result: OpResult) {
        self.history[rank] = Digest::of(&(self.history[rank], &result));
        self.heads[rank] = Head::Completed(result);
    }

    fn free(&mut self, tag: i64, spec: &Resolved) -> Result<(), RuntimeError> {
        let s = spec.sender(tag)? as usize;
        let r = spec.receiver(tag)? as usize;
        if self.last_tag[s] >= tag && self.last_tag[r] >= tag {
            self.msg_buf.remove(&tag);
        }
        Ok(())
    }

    /// Applies an enabled action; returns the ranks whose call completed.
    fn apply(&mut self, action: Action, spec: &Resolved) -> Result<Vec<usize>, RuntimeError> {
        let blocked = |st: &State, r: i64| match &st.heads[r as usize] {
            Head::Blocked(op) => Ok(op.clone()),
            other => Err(RuntimeError::Protocol(format!("rank {r} is not blocked ({other:?})"))),
        };
        Ok(match action {
            Action::Send { rank, tag } => {
                let Op::Send { payload, .. } = blocked(self, rank)? else {
                    return Err(RuntimeError::Protocol("send action on non-send".into()));
                };
                self.send_buf.insert(tag, payload);
                self.complete(rank as usize, OpResult::Done);
                vec![rank as usize]
            }
            Action::Recv { rank, tag } => {
                self.recv_buf.insert(tag);
                self.complete(rank as usize, OpResult::Done);
                vec![rank as usize]
            }
            Action::WaitSend { rank, tag } => {
                self.send_buf.remove(&tag);
                self.last_tag[rank as usize] = tag;
                self.complete(rank as usize, OpResult::Done);
                self.free(tag, spec)?;
                vec![rank as usize]
            }
            Action::WaitRecv { rank, tag } => {
                let payload = self.msg_buf[&tag].clone();
                self.recv_buf.remove(&tag);
                self.last_tag[rank as usize] = tag;
                self.complete(rank as usize, OpResult::Payload(payload));
                self.free(tag, spec)?;
                vec![rank as usize]
            }
            Action::TransferOnWait { tag } | Action::TransferNoWait { tag } => {
                let payload = self.send_buf[&tag].clone();
                self.msg_buf.insert(tag, payload);
                vec![]
            }
            Action::Collective { index } => {
                let mut kind: Option<CollectiveKind> = None;
                let mut contributions = Vec::with_capacity(self.heads.len());
                for r in 0..self.heads.len() {
                    let Op::Collective { kind: k, contribution, .. } = blocked(self, r as i64)? else {
                        return Err(RuntimeError::Protocol("collective action without all ranks".into()));
                    };
                    if *kind.get_or_insert(k) != k {
                        return Err(RuntimeError::Protocol(format!(
                            "collective {index}: ranks disagree on the operation ({:?} vs {k:?})",
                            kind.unwrap()
                        )));
                    }
                    contributions.push(contribution);
                }
                let results = combine(kind.expect("n >= 1"), &contributions);
                for (r, res) in results.into_iter().enumerate() {
                    self.passed[r] += 1;
                    self.complete(r, OpResult::Payload(res));
                }
                (0..self.heads.len()).collect()
            }
        })
    }

    fn describe_blocked(&self) -> Vec<String> {
        self.heads
            .iter()
            .enumerate()
            .filter_map(|(r, h)| match h {
                Head::Blocked(op) => Some(format!("rank {r} blocked in {op}")),
                _ => None,
            })
            .collect()
    }
}

type RankFuture<'a, T> = Pin<Box<dyn Future<Output = Result<T, RuntimeError>> + 'a>>;

/// Runs `body` on `n` simulated ranks under `sched`.
pub fn run_sim<'a, T, F, Fut>(
    n: i64,
    spec: Arc<RuntimeSpec>,
    sched: &mut dyn Scheduler,
    body: F,
) -> Result<SimRun<T>, SimFailure>
where
    F: Fn(World) -> Fut,
    Fut: Future<Output = Result<T, RuntimeError>> + 'a,
{
    let fail = |error, schedule| SimFailure { error, schedule };
    let resolved = Arc::new(spec.prepare(n).map_err(|e| fail(e, vec![]))?);
    let size = n as usize;
    let shared = Rc::new(Shared {
        state: RefCell::new(State::new(size)),
    });
    let mut futures: Vec<RankFuture<'a, T>> = (0..n)
        .map(|r| {
            let w = World::new(r, spec.clone(), resolved.clone(), Link::Sim(shared.clone()));
            Box::pin(body(w)) as RankFuture<'a, T>
        })
        .collect();
    let mut outputs: Vec<Option<T>> = (0..size).map(|_| None).collect();
    let mut schedule = Vec::new();
    let waker = futures::task::noop_waker();
    let mut cx = Context::from_waker(&waker);

    let mut poll = |r: usize, outputs: &mut Vec<Option<T>>| -> Result<(), RuntimeError> {
        match futures[r].as_mut().poll(&mut cx) {
            Poll::Ready(Ok(v)) => {
                outputs[r] = Some(v);
                shared.state.borrow_mut().heads[r] = Head::Finished;
                Ok(())
            }
            Poll::Ready(Err(e)) => Err(e),
            Poll::Pending => match shared.state.borrow().heads[r] {
                Head::Blocked(_) => Ok(()),
                _ => Err(RuntimeError::Protocol(format!(
                    "rank {r} is waiting on something other than the runtime"
                ))),
            },
        }
    };

    for r in 0..size {
        poll(r, &mut outputs).map_err(|e| fail(e, schedule.clone()))?;
    }
    loop {
        let (enabled, digest) = {
            let st = shared.state.borrow();
            if st.heads.iter().all(|h| *h == Head::Finished) {
                break;
            }
            let enabled = st.enabled(&resolved).map_err(|e| fail(e, schedule.clone()))?;
            if enabled.is_empty() {
                return Err(fail(
                    RuntimeError::Deadlock {
                        blocked: st.describe_blocked(),
                    },
                    schedule,
                ));
            }
            (enabled, Digest::of(&*st))
        };
        let Some(i) = sched.choose(&enabled, digest) else {
            return Ok(SimRun { outputs: None, schedule });
        };
        let action = enabled[i];
        schedule.push(action);
        let woken = shared
            .state
            .borrow_mut()
            .apply(action, &resolved)
            .map_err(|e| fail(e, schedule.clone()))?;
        for r in woken {
            poll(r, &mut outputs).map_err(|e| fail(e, schedule.clone()))?;
        }
    }

    let st = shared.state.borrow();
    let leftover = st
        .send_buf
        .keys()
        .map(|t| format!("unwaited send {t}"))
        .chain(st.recv_buf.iter().map(|t| format!("unwaited receive {t}")))
        .chain(st.msg_buf.keys().map(|t| format!("undelivered message {t}")))
        .collect::<Vec<_>>();
    if !leftover.is_empty() {
        return Err(fail(
            RuntimeError::Leftover {
                rank: -1,
                detail: leftover.join(", "),
            },
            schedule,
        ));
    }
    if let Some(r) = st.passed.iter().position(|&p| p != resolved.count) {
        return Err(fail(
            super::violation(
                crate::monitor::Axiom::AtEnd,
                r as i64,
                crate::monitor::Clause::BarrierCount {
                    expected: resolved.count,
                    actual: st.passed[r],
                },
            ),
            schedule,
        ));
    }
    drop(st);
    Ok(SimRun {
        outputs: Some(outputs.into_iter().map(|o| o.expect("every rank finished")).collect()),
        schedule,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct ExhaustiveLimits {
    pub max_runs: usize,
}

impl Default for ExhaustiveLimits {
    fn default() -> Self {
        ExhaustiveLimits { max_runs: 1_000_000 }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SimExploration {
    /// Runs started, including those cut short at an already-seen state.
    pub runs: usize,
    pub completed_runs: usize,
    pub distinct_states: usize,
    /// Distinct outcome digests over completed runs.
    pub outcomes: BTreeSet<Digest>,
    /// False if `max_runs` stopped the search early.
    pub exhaustive: bool,
}

struct DfsScheduler<'v> {
    prefix: Vec<usize>,
    /// Branching factor at each choice made by this run.
    points: Vec<usize>,
    visited: &'v mut HashSet<Digest>,
}

impl Scheduler for DfsScheduler<'_> {
    fn choose(&mut self, enabled: &[Action], state: Digest) -> Option<usize> {
        let depth = self.points.len();
        if depth < self.prefix.len() {
            self.points.push(enabled.len());
            return Some(self.prefix[depth]);
        }
        if !self.visited.insert(state) {
            return None;
        }
        self.points.push(enabled.len());
        Some(0)
    }
}

/// Visits every distinct reachable state by replaying schedule prefixes,
/// cutting each run at the first state seen before. Stops at the first
/// failing schedule.
pub fn explore_sim<'a, T, F, Fut>(
    n: i64,
    spec: Arc<RuntimeSpec>,
    body: F,
    outcome: impl Fn(&[T]) -> Digest,
    limits: ExhaustiveLimits,
) -> Result<SimExploration, SimFailure>
where
    F: Fn(World) -> Fut,
    Fut: Future<Output = Result<T, RuntimeError>> + 'a,
{
    let mut visited = HashSet::new();
    let mut report = SimExploration::default();
    let mut prefix: Vec<usize> = Vec::new();
    loop {
        if report.runs >= limits.max_runs {
            report.distinct_states = visited.len();
            return Ok(report);
        }
        report.runs += 1;
        let mut sched = DfsScheduler {
            prefix: prefix.clone(),
            points: Vec::new(),
            visited: &mut visited,
        };
        let run = run_sim(n, spec.clone(), &mut sched, &body)?;
        let points = sched.points;
        if let Some(outputs) = &run.outputs {
            report.completed_runs += 1;
            report.outcomes.insert(outcome(outputs));
        }
        // Choices actually taken: the prefix, then zeros for new points.
        let mut choices = prefix.clone();
        choices.resize(points.len(), 0);
        // Backtrack to the deepest point with an untried alternative.
        loop {
            match choices.last() {
                None => {
                    report.distinct_states = visited.len();
                    report.exhaustive = true;
                    return Ok(report);
                }
                Some(&c) if c + 1 < points[choices.len() - 1] => {
                    *choices.last_mut().unwrap() += 1;
                    break;
                }
                Some(_) => {
                    choices.pop();
                }
            }
        }
        prefix = choices;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrays::{LockedArray1D, Region};
    use crate::calculus::{ReduceOp, SpecFn, TopologySpec};
    use crate::monitor::{Axiom, Clause};

    /// Tag t goes from rank t to rank t + 1, then everyone sums.
    fn chain() -> Arc<RuntimeSpec> {
        let topo = TopologySpec {
            sender: SpecFn::expr("tag"),
            receiver: SpecFn::expr("tag + 1"),
            message: SpecFn::expr("tag"),
            barrier_tag: SpecFn::expr("index * (size - 1)"),
            barrier_count: SpecFn::expr("1"),
            collectives: [(0, CollectiveKind::AllReduce { op: ReduceOp::Sum })].into(),
        };
        Arc::new(RuntimeSpec::new(topo).with_message(|tag, _| Some(vec![tag as f64 * 10.0])))
    }

    async fn relay(mut w: World) -> Result<f64, RuntimeError> {
        let r = w.rank();
        let mut buf = LockedArray1D::zeros(1);
        if r > 0 {
            w.recv(&mut buf, Region::range(0, 1), r - 1).await?;
        }
        if r + 1 < w.size() {
            buf.set(0, r as f64 * 10.0).map_err(|source| RuntimeError::Array { rank: r, source })?;
            w.send(&mut buf, Region::range(0, 1), r + 1, r).await?;
        }
        let total = w.allreduce(r as f64, ReduceOp::Sum).await?;
        w.finish()?;
        Ok(total)
    }

    #[test]
    fn relay_runs_under_every_scheduler() {
        for seed in 0..20 {
            let run = run_sim(4, chain(), &mut RandomScheduler::new(seed), relay).unwrap();
            assert_eq!(run.outputs.unwrap(), [6.0; 4]);
        }
        let run = run_sim(3, chain(), &mut FirstScheduler, relay).unwrap();
        let replay = run_sim(3, chain(), &mut ReplayScheduler::new(run.schedule.clone()), relay).unwrap();
        assert_eq!(run.schedule, replay.schedule);
    }

    #[test]
    fn exhaustive_search_finds_one_outcome() {
        let r = explore_sim(
            3,
            chain(),
            relay,
            |o: &[f64]| Digest::of(&o.iter().map(|v| v.to_bits()).collect::<Vec<_>>()),
            ExhaustiveLimits::default(),
        )
        .unwrap();
        assert!(r.exhaustive);
        assert_eq!(r.outcomes.len(), 1);
        assert!(r.completed_runs >= 1);
        assert!(r.distinct_states > 5);
    }

    #[test]
    fn wrong_payload_is_rejected() {
        async fn bad(mut w: World) -> Result<(), RuntimeError> {
            let mut buf = LockedArray1D::from_vec(vec![99.0]);
            if w.rank() == 0 {
                w.send(&mut buf, Region::range(0, 1), 1, 0).await?;
            } else {
                w.recv(&mut buf, Region::range(0, 1), 0).await?;
            }
            Ok(())
        }
        let err = run_sim(2, chain(), &mut FirstScheduler, bad).unwrap_err();
        assert!(matches!(err.error, RuntimeError::PayloadMismatch { rank: 0, tag: 0, index: 0 }), "{err}");
    }

    #[test]
    fn waits_out_of_order_are_rejected() {
        async fn bad(mut w: World) -> Result<(), RuntimeError> {
            let mut buf = LockedArray1D::zeros(2);
            match w.rank() {
                1 => {
                    buf.set(1, 10.0).unwrap();
                    let s = w.isend(&mut buf, Region::range(1, 1), 2, 1).await?;
                    let r = w.irecv(&mut buf, Region::range(0, 1), 0).await?;
                    w.wait(s, &mut buf).await?;
                    w.wait(r, &mut buf).await?;
                }
                _ => {}
            }
            Ok(())
        }
        let err = run_sim(3, chain(), &mut FirstScheduler, bad).unwrap_err();
        match err.error {
            RuntimeError::Precondition(v) => {
                assert_eq!(v.axiom, Axiom::AtWait);
                assert_eq!(v.clause, Clause::SkippedTag { tag: 1, skipped: 0 });
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn missing_sender_deadlocks() {
        async fn lonely(mut w: World) -> Result<(), RuntimeError> {
            let mut buf = LockedArray1D::zeros(1);
            if w.rank() == 1 {
                w.recv(&mut buf, Region::range(0, 1), 0).await?;
            }
            Ok(())
        }
        let err = run_sim(2, chain(), &mut FirstScheduler, lonely).unwrap_err();
        assert!(matches!(err.error, RuntimeError::Deadlock { .. }), "{err}");
    }
}
