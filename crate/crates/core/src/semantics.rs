//! Small-step reduction: enabled transitions, their effect, and the blocked
//! and terminated predicates.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calculus::{Command, EvalError, Expr, GlobalState, ProcState, Resolved};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    IfTrue,
    IfFalse,
    While,
    Set,
    SeqSkip,
    Send,
    Recv,
    WaitRecv,
    WaitSend,
    TransferOnWait,
    TransferNoWait,
    FreeBuffer,
    Barrier,
    /// Runtime traces only: a rank ran host code up to its next API call.
    Compute,
}

impl Rule {
    pub fn is_local(self) -> bool {
        matches!(
            self,
            Rule::IfTrue | Rule::IfFalse | Rule::While | Rule::Set | Rule::SeqSkip
        )
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            Rule::IfTrue => "IT",
            Rule::IfFalse => "IF",
            Rule::While => "W",
            Rule::Set => "SET",
            Rule::SeqSkip => "SS",
            Rule::Send => "S",
            Rule::Recv => "R",
            Rule::WaitRecv => "WR",
            Rule::WaitSend => "WS",
            Rule::TransferOnWait => "TOW",
            Rule::TransferNoWait => "TNW",
            Rule::FreeBuffer => "FB",
            Rule::Barrier => "B",
            Rule::Compute => "C",
        }
    }
}

/// One labelled reduction step. Field order gives the canonical sort order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Transition {
    pub rule: Rule,
    pub rank: Option<i64>,
    pub tag: Option<i64>,
}

impl Transition {
    pub fn new(rule: Rule, rank: Option<i64>, tag: Option<i64>) -> Self {
        Transition { rule, rank, tag }
    }

    pub fn local(rule: Rule, rank: i64) -> Self {
        Transition::new(rule, Some(rank), None)
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.rule)?;
        if let Some(r) = self.rank {
            write!(f, "@p{r}")?;
        }
        if let Some(t) = self.tag {
            write!(f, "(tag {t})")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq, Serialize)]
pub enum SemanticsError {
    #[error("rank {rank}: {err}")]
    Eval { rank: i64, err: EvalError },
    #[error("transition {0} is not enabled")]
    NotEnabled(Transition),
}

fn eval_at(p: &ProcState, rank: i64, e: &Expr) -> Result<i64, SemanticsError> {
    e.eval(&p.env)
        .map_err(|err| SemanticsError::Eval { rank, err })
}

fn local_rewrite(cmd: &Command, p: &ProcState) -> Result<Option<(Rule, Command, Option<(String, i64)>)>, EvalError> {
    Ok(match cmd {
        Command::Seq(first, rest) => {
            if matches!(first.as_ref(), Command::Skip) {
                Some((Rule::SeqSkip, rest.as_ref().clone(), None))
            } else {
                local_rewrite(first, p)?
                    .map(|(rule, c, w)| (rule, Command::seq2(c, rest.as_ref().clone()), w))
            }
        }
        Command::If { cond, then, els } => {
            if cond.eval(&p.env)? != 0 {
                Some((Rule::IfTrue, then.as_ref().clone(), None))
            } else {
                Some((Rule::IfFalse, els.as_ref().clone(), None))
            }
        }
        Command::While { cond, body } => Some((
            Rule::While,
            Command::if_(
                cond.clone(),
                Command::seq2(body.as_ref().clone(), cmd.clone()),
                Command::Skip,
            ),
            None,
        )),
        Command::Set { var, expr } => {
            let v = expr.eval(&p.env)?;
            Some((Rule::Set, Command::Skip, Some((var.clone(), v))))
        }
        _ => None,
    })
}

/// Applies the single-process rule that matches the head of `p`, if any.
/// Communication primitives, `barrier` and a lone `skip` yield `None`.
pub fn local_step(p: &ProcState) -> Result<Option<(Rule, ProcState)>, EvalError> {
    let Some((rule, cmd, write)) = local_rewrite(&p.cmd, p)? else {
        return Ok(None);
    };
    let mut next = ProcState {
        cmd,
        env: p.env.clone(),
        last_tag: p.last_tag,
        barriers: p.barriers,
    };
    if let Some((x, v)) = write {
        next.env.insert(x, v);
    }
    Ok(Some((rule, next)))
}

/// Value a pending send would copy into B_m, read from the sender's env.
fn send_payload(s: &GlobalState, spec: &Resolved, tag: i64) -> Result<Option<(i64, i64)>, SemanticsError> {
    let Some(var) = s.send_buf.get(&tag) else {
        return Ok(None);
    };
    let sender = spec
        .sender(tag)
        .map_err(|err| SemanticsError::Eval { rank: -1, err })?;
    let Some(p) = usize::try_from(sender).ok().and_then(|i| s.procs.get(i)) else {
        return Ok(None);
    };
    let v = p.env.get(var).copied().ok_or(SemanticsError::Eval {
        rank: sender,
        err: EvalError::UnboundVariable(var.clone()),
    })?;
    Ok(Some((sender, v)))
}

fn spec_err(rank: i64) -> impl Fn(EvalError) -> SemanticsError {
    move |err| SemanticsError::Eval { rank, err }
}

/// All transitions whose premises hold in `s`, in canonical order. A
/// transfer that would rewrite B_m with the value it already holds is left
/// out: it is a self-loop.
pub fn enabled_transitions(s: &GlobalState, spec: &Resolved) -> Result<Vec<Transition>, SemanticsError> {
    let mut out = Vec::new();
    let mut all_barrier = !s.procs.is_empty();
    for (i, p) in s.procs.iter().enumerate() {
        let rank = i as i64;
        let head = p.cmd.head();
        if !matches!(head, Command::Barrier) {
            all_barrier = false;
        }
        match head {
            Command::ISend { tag, .. } => {
                let t = eval_at(p, rank, tag)?;
                out.push(Transition::new(Rule::Send, Some(rank), Some(t)));
            }
            Command::IRecv { tag, .. } => {
                let t = eval_at(p, rank, tag)?;
                out.push(Transition::new(Rule::Recv, Some(rank), Some(t)));
            }
            Command::Wait(tag) => {
                let t = eval_at(p, rank, tag)?;
                let sender = spec.sender(t).map_err(spec_err(rank))?;
                let receiver = spec.receiver(t).map_err(spec_err(rank))?;
                let in_m = s.msg_buf.get(&t);
                if receiver == rank && s.recv_buf.contains_key(&t) && in_m.is_some() {
                    out.push(Transition::new(Rule::WaitRecv, Some(rank), Some(t)));
                }
                if sender == rank && in_m.is_some() {
                    out.push(Transition::new(Rule::WaitSend, Some(rank), Some(t)));
                }
                if receiver == rank {
                    if let Some((_, v)) = send_payload(s, spec, t)? {
                        if in_m != Some(&v) {
                            out.push(Transition::new(Rule::TransferOnWait, Some(rank), Some(t)));
                        }
                    }
                }
            }
            _ => {
                if let Some((rule, _)) = local_step(p).map_err(spec_err(rank))? {
                    out.push(Transition::local(rule, rank));
                }
            }
        }
    }
    for &t in s.send_buf.keys() {
        if let Some((sender, v)) = send_payload(s, spec, t)? {
            let head = s.procs[sender as usize].cmd.head();
            if !matches!(head, Command::Wait(_) | Command::Barrier) && s.msg_buf.get(&t) != Some(&v) {
                out.push(Transition::new(Rule::TransferNoWait, None, Some(t)));
            }
        }
    }
    for &t in s.msg_buf.keys() {
        let sender = spec.sender(t).map_err(spec_err(-1))?;
        let receiver = spec.receiver(t).map_err(spec_err(-1))?;
        let passed = |r: i64| {
            usize::try_from(r)
                .ok()
                .and_then(|i| s.procs.get(i))
                .is_some_and(|p| p.last_tag >= t)
        };
        if passed(sender) && passed(receiver) {
            out.push(Transition::new(Rule::FreeBuffer, None, Some(t)));
        }
    }
    if all_barrier {
        out.push(Transition::new(Rule::Barrier, None, None));
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn complete_head(p: &mut ProcState) {
    p.cmd = p.cmd.replace_head(Command::Skip);
}

/// Applies `tr` assuming it is enabled. Callers that cannot guarantee this
/// should use [`apply_transition`].
pub fn apply_enabled(s: &GlobalState, tr: &Transition, spec: &Resolved) -> Result<GlobalState, SemanticsError> {
    let mut next = s.clone();
    let rank = tr.rank.unwrap_or(-1);
    let not_enabled = || SemanticsError::NotEnabled(*tr);
    let proc_mut = |next: &mut GlobalState| -> Result<usize, SemanticsError> {
        usize::try_from(rank)
            .ok()
            .filter(|&i| i < next.procs.len())
            .ok_or_else(not_enabled)
    };
    match tr.rule {
        Rule::IfTrue | Rule::IfFalse | Rule::While | Rule::Set | Rule::SeqSkip => {
            let i = proc_mut(&mut next)?;
            let (rule, p) = local_step(&next.procs[i])
                .map_err(spec_err(rank))?
                .ok_or_else(not_enabled)?;
            if rule != tr.rule {
                return Err(not_enabled());
            }
            next.procs[i] = p;
        }
        Rule::Send | Rule::Recv => {
            let i = proc_mut(&mut next)?;
            let (tag, var, is_send) = match next.procs[i].cmd.head() {
                Command::ISend { tag, var } => (tag.clone(), var.clone(), true),
                Command::IRecv { tag, var } => (tag.clone(), var.clone(), false),
                _ => return Err(not_enabled()),
            };
            let t = eval_at(&next.procs[i], rank, &tag)?;
            if is_send != (tr.rule == Rule::Send) {
                return Err(not_enabled());
            }
            if is_send {
                next.send_buf.insert(t, var);
            } else {
                next.recv_buf.insert(t, var);
            }
            complete_head(&mut next.procs[i]);
        }
        Rule::WaitRecv => {
            let i = proc_mut(&mut next)?;
            let t = tr.tag.ok_or_else(not_enabled)?;
            let var = next.recv_buf.remove(&t).ok_or_else(not_enabled)?;
            let v = *next.msg_buf.get(&t).ok_or_else(not_enabled)?;
            let p = &mut next.procs[i];
            p.env.insert(var, v);
            p.last_tag = t;
            complete_head(p);
        }
        Rule::WaitSend => {
            let i = proc_mut(&mut next)?;
            let t = tr.tag.ok_or_else(not_enabled)?;
            next.send_buf.remove(&t);
            let p = &mut next.procs[i];
            p.last_tag = t;
            complete_head(p);
        }
        Rule::TransferOnWait | Rule::TransferNoWait => {
            let t = tr.tag.ok_or_else(not_enabled)?;
            let (_, v) = send_payload(s, spec, t)?.ok_or_else(not_enabled)?;
            next.msg_buf.insert(t, v);
        }
        Rule::FreeBuffer => {
            let t = tr.tag.ok_or_else(not_enabled)?;
            next.msg_buf.remove(&t).ok_or_else(not_enabled)?;
        }
        Rule::Barrier => {
            for p in &mut next.procs {
                if !matches!(p.cmd.head(), Command::Barrier) {
                    return Err(not_enabled());
                }
                complete_head(p);
                p.barriers += 1;
            }
        }
        Rule::Compute => return Err(not_enabled()),
    }
    Ok(next)
}

/// Applies `tr` after confirming it is among the enabled transitions.
pub fn apply_transition(s: &GlobalState, tr: &Transition, spec: &Resolved) -> Result<GlobalState, SemanticsError> {
    if !enabled_transitions(s, spec)?.contains(tr) {
        return Err(SemanticsError::NotEnabled(*tr));
    }
    apply_enabled(s, tr, spec)
}

/// How a process can be blocked, following the deadlock definition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Blocked {
    OnRecv,
    OnSend,
    OnBarrier,
    Terminated,
}

/// Every blocked class `p` (at rank `rank`) belongs to. Usually zero or one.
pub fn blocked_classes(s: &GlobalState, spec: &Resolved, rank: usize) -> Vec<Blocked> {
    let p = &s.procs[rank];
    let mut out = Vec::new();
    match p.cmd.head() {
        Command::Skip if p.cmd.is_terminated() => out.push(Blocked::Terminated),
        Command::Barrier => out.push(Blocked::OnBarrier),
        Command::Wait(e) => {
            let Ok(t) = e.eval(&p.env) else {
                return out;
            };
            let r = rank as i64;
            let in_m = s.msg_buf.contains_key(&t);
            if spec.receiver(t) == Ok(r) && !in_m && !s.send_buf.contains_key(&t) {
                out.push(Blocked::OnRecv);
            }
            if spec.sender(t) == Ok(r) && !in_m {
                out.push(Blocked::OnSend);
            }
        }
        _ => {}
    }
    out
}

/// Every process is blocked or terminated, yet not all have terminated and
/// not all sit at a barrier.
pub fn is_deadlock(s: &GlobalState, spec: &Resolved) -> bool {
    let mut all_term = true;
    let mut all_barrier = true;
    for i in 0..s.procs.len() {
        let classes = blocked_classes(s, spec, i);
        if classes.is_empty() {
            return false;
        }
        all_term &= classes.contains(&Blocked::Terminated);
        all_barrier &= classes.contains(&Blocked::OnBarrier);
    }
    !s.procs.is_empty() && !all_term && !all_barrier
}

pub fn is_terminated(s: &GlobalState) -> bool {
    s.is_terminated()
}

/// A replayable schedule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub initial: GlobalState,
    pub steps: Vec<Transition>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq, Serialize)]
#[error("step {index} ({transition}) cannot be replayed: {cause}")]
pub struct ReplayError {
    pub index: usize,
    pub transition: Transition,
    pub cause: SemanticsError,
}

impl Trace {
    /// All states along the trace, starting with the initial one.
    pub fn replay(&self, spec: &Resolved) -> Result<Vec<GlobalState>, ReplayError> {
        let mut states = vec![self.initial.clone()];
        for (index, tr) in self.steps.iter().enumerate() {
            let cur = states.last().expect("non-empty");
            let next = apply_transition(cur, tr, spec).map_err(|cause| ReplayError {
                index,
                transition: *tr,
                cause,
            })?;
            states.push(next);
        }
        Ok(states)
    }

    /// Replays as far as possible, returning the valid prefix and the first
    /// failure, if any.
    pub fn replay_prefix(&self, spec: &Resolved) -> (Vec<GlobalState>, Option<ReplayError>) {
        let mut states = vec![self.initial.clone()];
        for (index, tr) in self.steps.iter().enumerate() {
            match apply_transition(states.last().expect("non-empty"), tr, spec) {
                Ok(next) => states.push(next),
                Err(cause) => {
                    return (
                        states,
                        Some(ReplayError {
                            index,
                            transition: *tr,
                            cause,
                        }),
                    )
                }
            }
        }
        (states, None)
    }

    pub fn final_state(&self, spec: &Resolved) -> Result<GlobalState, ReplayError> {
        self.replay(spec).map(|mut v| v.pop().expect("non-empty"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::initial_state;
    use crate::corpus;

    fn t(rule: Rule, rank: Option<i64>, tag: Option<i64>) -> Transition {
        Transition::new(rule, rank, tag)
    }

    fn run_local(mut s: GlobalState, spec: &Resolved) -> GlobalState {
        loop {
            let en = enabled_transitions(&s, spec).unwrap();
            let Some(tr) = en.iter().find(|t| t.rule.is_local()) else {
                return s;
            };
            s = apply_enabled(&s, tr, spec).unwrap();
        }
    }

    fn fig_state0() -> (GlobalState, Resolved) {
        let spec = corpus::sendrecv_spec().resolve(2).unwrap();
        let s = initial_state(&corpus::sendrecv_program(), 2).unwrap();
        (run_local(s, &spec), spec)
    }

    #[test]
    fn seq_skip_and_set() {
        let p = ProcState {
            cmd: Command::seq2(Command::Skip, Command::wait(Expr::int(0))),
            env: Default::default(),
            last_tag: -1,
            barriers: 0,
        };
        let (rule, q) = local_step(&p).unwrap().unwrap();
        assert_eq!(rule, Rule::SeqSkip);
        assert_eq!(q.cmd, Command::wait(Expr::int(0)));

        let p = ProcState {
            cmd: Command::set("x", Expr::int(5)),
            ..p
        };
        let (rule, q) = local_step(&p).unwrap().unwrap();
        assert_eq!(rule, Rule::Set);
        assert_eq!(q.cmd, Command::Skip);
        assert_eq!(q.env["x"], 5);
    }

    #[test]
    fn false_loop_unrolls_to_skip() {
        let p = ProcState {
            cmd: Command::while_(Expr::int(0), Command::Barrier),
            env: Default::default(),
            last_tag: -1,
            barriers: 0,
        };
        let (r1, q) = local_step(&p).unwrap().unwrap();
        assert_eq!(r1, Rule::While);
        let (r2, q) = local_step(&q).unwrap().unwrap();
        assert_eq!(r2, Rule::IfFalse);
        assert_eq!(q.cmd, Command::Skip);
        assert!(local_step(&q).unwrap().is_none());
    }

    #[test]
    fn state0_enables_send_and_recv() {
        let (s0, spec) = fig_state0();
        assert_eq!(
            enabled_transitions(&s0, &spec).unwrap(),
            vec![
                t(Rule::Send, Some(0), Some(0)),
                t(Rule::Recv, Some(1), Some(0))
            ]
        );
    }

    #[test]
    fn state1_enabled_set() {
        let (s0, spec) = fig_state0();
        let s1 = apply_transition(&s0, &t(Rule::Send, Some(0), Some(0)), &spec).unwrap();
        assert_eq!(
            enabled_transitions(&s1, &spec).unwrap(),
            vec![
                t(Rule::SeqSkip, Some(0), None),
                t(Rule::Recv, Some(1), Some(0)),
                t(Rule::TransferNoWait, None, Some(0)),
            ]
        );
    }

    fn apply_all(mut s: GlobalState, spec: &Resolved, steps: &[Transition]) -> GlobalState {
        for tr in steps {
            s = apply_transition(&s, tr, spec).unwrap();
        }
        s
    }

    #[test]
    fn both_rows_reach_state5() {
        let (s0, spec) = fig_state0();
        let top = apply_all(
            s0.clone(),
            &spec,
            &[
                t(Rule::Send, Some(0), Some(0)),
                t(Rule::TransferNoWait, None, Some(0)),
                t(Rule::SeqSkip, Some(0), None),
                t(Rule::WaitSend, Some(0), Some(0)),
                t(Rule::Recv, Some(1), Some(0)),
                t(Rule::SeqSkip, Some(1), None),
                t(Rule::WaitRecv, Some(1), Some(0)),
            ],
        );
        let bottom = apply_all(
            s0,
            &spec,
            &[
                t(Rule::Recv, Some(1), Some(0)),
                t(Rule::Send, Some(0), Some(0)),
                t(Rule::SeqSkip, Some(0), None),
                t(Rule::SeqSkip, Some(1), None),
                t(Rule::TransferOnWait, Some(1), Some(0)),
                t(Rule::WaitRecv, Some(1), Some(0)),
                t(Rule::WaitSend, Some(0), Some(0)),
            ],
        );
        assert_eq!(top, bottom);
        assert_eq!(top.procs[1].env["x"], 5);
        assert_eq!(top.msg_buf.get(&0), Some(&5));
        assert!(top.recv_buf.is_empty() && top.send_buf.is_empty());

        let done = apply_all(
            top,
            &spec,
            &[
                t(Rule::FreeBuffer, None, Some(0)),
                t(Rule::SeqSkip, Some(0), None),
                t(Rule::SeqSkip, Some(1), None),
                t(Rule::Barrier, None, None),
            ],
        );
        assert!(is_terminated(&done));
        assert!(done.procs.iter().all(|p| p.barriers == 1));
        assert!(enabled_transitions(&done, &spec).unwrap().is_empty());
        assert!(!is_deadlock(&done, &spec));
    }

    #[test]
    fn disabled_transition_is_rejected() {
        let (s0, spec) = fig_state0();
        let tr = t(Rule::WaitRecv, Some(1), Some(0));
        assert_eq!(
            apply_transition(&s0, &tr, &spec),
            Err(SemanticsError::NotEnabled(tr))
        );
    }

    #[test]
    fn blocked_receiver_against_barrier_is_deadlock() {
        let spec = corpus::deadlock_spec().resolve(2).unwrap();
        let mut s = initial_state(&Command::Skip, 2).unwrap();
        s.procs[0].cmd = Command::seq2(Command::wait(Expr::int(0)), Command::Barrier);
        s.procs[1].cmd = Command::Barrier;
        assert_eq!(blocked_classes(&s, &spec, 0), vec![Blocked::OnRecv]);
        assert!(is_deadlock(&s, &spec));
        assert!(enabled_transitions(&s, &spec).unwrap().is_empty());
    }

    #[test]
    fn all_at_barrier_or_all_done_is_not_deadlock() {
        let spec = corpus::sendrecv_spec().resolve(2).unwrap();
        let mut s = initial_state(&Command::Skip, 2).unwrap();
        for p in &mut s.procs {
            p.cmd = Command::Skip;
        }
        assert!(!is_deadlock(&s, &spec));
        for p in &mut s.procs {
            p.cmd = Command::Barrier;
        }
        assert!(!is_deadlock(&s, &spec));
    }
}
