//! Exhaustive and randomized schedule exploration.
//!
//! The exhaustive search is a depth-first walk over reachable states,
//! deduplicated by [`Digest`]. Runs of single-process rules on one rank are
//! taken as a single edge: they touch no shared buffer, so interleaving them
//! with other ranks' steps only multiplies equivalent paths. A transfer that
//! races such a run is still explored, because it is enabled from the state
//! the run starts in.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calculus::{initial_state, Command, EvalError, GlobalState, ProcState, Resolved, StateError};
use crate::digest::Digest;
use crate::monitor::{check_lemmas, check_start, check_state, LemmaFailure, Violation};
use crate::par::Parallelism;
use crate::semantics::{apply_enabled, enabled_transitions, is_deadlock, local_step, Rule, SemanticsError, Trace, Transition};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeBufferPolicy {
    /// Branch on freeing each completed tag or keeping it.
    Explore,
    /// Free completed tags as soon as possible, as part of the step that
    /// completed them.
    #[default]
    Eager,
    /// Never free.
    Never,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreBounds {
    pub max_states: usize,
    pub max_depth: usize,
    pub free_buffer_policy: FreeBufferPolicy,
}

impl Default for ExploreBounds {
    fn default() -> Self {
        ExploreBounds {
            max_states: 5_000_000,
            max_depth: 1_000_000,
            free_buffer_policy: FreeBufferPolicy::Eager,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ExploreOptions {
    pub bounds: ExploreBounds,
    pub monitor: bool,
    /// Take each run of single-process rules as one edge.
    pub compress_local: bool,
    pub parallelism: Parallelism,
    /// Check the lemma assertions and the deadlock cross-check on every state.
    pub check_lemmas: bool,
    pub record_graph: bool,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            bounds: ExploreBounds::default(),
            monitor: true,
            compress_local: true,
            parallelism: Parallelism::Auto,
            check_lemmas: true,
            record_graph: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Ok {
        states_visited: usize,
        terminal_states: usize,
    },
    DeadlockFound {
        trace: Trace,
    },
    ViolationFound {
        trace: Trace,
        violations: Vec<Violation>,
    },
    BoundExceeded {
        states_visited: usize,
    },
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Ok { .. } => "ok",
            Verdict::DeadlockFound { .. } => "deadlock_found",
            Verdict::ViolationFound { .. } => "violation_found",
            Verdict::BoundExceeded { .. } => "bound_exceeded",
        }
    }

    pub fn trace(&self) -> Option<&Trace> {
        match self {
            Verdict::DeadlockFound { trace } | Verdict::ViolationFound { trace, .. } => Some(trace),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Inner,
    Terminal,
    Deadlock,
    Violation,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct StateGraph {
    pub nodes: Vec<(Digest, NodeKind)>,
    pub edges: Vec<(Digest, Digest, String)>,
}

impl StateGraph {
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph states {\n  node [shape=circle, fontsize=9];\n");
        for (d, kind) in &self.nodes {
            let attrs = match kind {
                NodeKind::Inner => "",
                NodeKind::Terminal => ", shape=doublecircle",
                NodeKind::Deadlock => ", color=red, style=filled, fillcolor=mistyrose",
                NodeKind::Violation => ", color=orange",
            };
            let _ = writeln!(out, "  \"{}\" [label=\"{}\"{attrs}];", d.short(), d.short());
        }
        for (a, b, label) in &self.edges {
            let _ = writeln!(out, "  \"{}\" -> \"{}\" [label=\"{label}\"];", a.short(), b.short());
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Exploration {
    pub verdict: Verdict,
    /// Distinct per-process outcomes (commands, envs, tags, barriers) among
    /// terminated states. One element means every schedule agrees.
    pub terminal_outcomes: BTreeSet<Digest>,
    pub lemma_failures: Vec<LemmaFailure>,
    /// States where the blocked-process classification disagreed with "only
    /// freeing is enabled and not everyone is done".
    pub crosscheck_failures: usize,
    #[serde(skip)]
    pub graph: Option<StateGraph>,
}

#[derive(Clone, Debug, Error)]
pub enum ExploreError {
    #[error(transparent)]
    Start(#[from] StateError),
    #[error("topology cannot be evaluated: {0}")]
    Spec(#[from] EvalError),
    #[error("{error} (after {} steps)", .trace.steps.len())]
    Semantics { error: SemanticsError, trace: Trace },
}

struct Edge {
    steps: Vec<Transition>,
    state: GlobalState,
}

/// A counterexample, with the full path from the initial state.
enum Finding {
    Deadlock(Vec<Transition>),
    Violation(Vec<Transition>, Vec<Violation>),
}

struct Expansion {
    edges: Vec<Edge>,
    stuck: bool,
    terminated: bool,
    /// A violation met in the middle of a local run, with the steps into it.
    midchain: Option<(Vec<Transition>, Vec<Violation>)>,
}

const MAX_CHAIN: usize = 10_000;

struct Ctx<'a> {
    spec: &'a Resolved,
    opts: &'a ExploreOptions,
}

impl Ctx<'_> {
    fn free_eagerly(&self, s: &mut GlobalState, steps: &mut Vec<Transition>) {
        if self.opts.bounds.free_buffer_policy != FreeBufferPolicy::Eager {
            return;
        }
        let ready: Vec<i64> = s
            .msg_buf
            .keys()
            .copied()
            .filter(|&t| {
                let done = |r: Result<i64, EvalError>| {
                    r.ok()
                        .and_then(|r| usize::try_from(r).ok())
                        .and_then(|i| s.procs.get(i))
                        .is_some_and(|p| p.last_tag >= t)
                };
                done(self.spec.sender(t)) && done(self.spec.receiver(t))
            })
            .collect();
        for t in ready {
            s.msg_buf.remove(&t);
            steps.push(Transition::new(Rule::FreeBuffer, None, Some(t)));
        }
    }

    fn expand(&self, s: &GlobalState) -> Result<Expansion, (SemanticsError, Vec<Transition>)> {
        let enabled = enabled_transitions(s, self.spec).map_err(|e| (e, vec![]))?;
        let terminated = s.is_terminated();
        let stuck = !terminated && enabled.iter().all(|t| t.rule == Rule::FreeBuffer);
        let mut edges = Vec::with_capacity(enabled.len());
        let mut midchain = None;
        for tr in &enabled {
            if tr.rule == Rule::FreeBuffer && self.opts.bounds.free_buffer_policy != FreeBufferPolicy::Explore {
                continue;
            }
            let mut steps = vec![*tr];
            let mut state = apply_enabled(s, tr, self.spec).map_err(|e| (e, steps.clone()))?;
            if self.opts.compress_local && tr.rule.is_local() {
                let rank = tr.rank.expect("local rules name a rank");
                let i = rank as usize;
                let mut violated = false;
                while steps.len() < MAX_CHAIN {
                    if local_step(&state.procs[i]).ok().flatten().is_none() {
                        break;
                    }
                    if self.opts.monitor {
                        let v = check_state(&state, self.spec);
                        if !v.is_empty() {
                            if midchain.is_none() {
                                midchain = Some((steps.clone(), v));
                            }
                            violated = true;
                            break;
                        }
                    }
                    let (rule, next) = local_step(&state.procs[i])
                        .map_err(|err| (SemanticsError::Eval { rank, err }, steps.clone()))?
                        .expect("checked above");
                    state.procs[i] = next;
                    steps.push(Transition::local(rule, rank));
                }
                if violated {
                    continue;
                }
            }
            self.free_eagerly(&mut state, &mut steps);
            edges.push(Edge { steps, state });
        }
        Ok(Expansion {
            edges,
            stuck,
            terminated,
            midchain,
        })
    }

    fn check_node(&self, s: &GlobalState) -> Vec<Violation> {
        if self.opts.monitor {
            check_state(s, self.spec)
        } else {
            Vec::new()
        }
    }

    /// Lemma failures, and whether the deadlock predicate disagreed with the
    /// enabled set.
    fn observe(&self, s: &GlobalState, exp: &Expansion) -> (Vec<LemmaFailure>, bool) {
        if !self.opts.check_lemmas {
            return (Vec::new(), false);
        }
        let lemmas = check_lemmas(s, self.spec);
        let mismatch = is_deadlock(s, self.spec) != exp.stuck;
        (lemmas, mismatch)
    }
}

fn outcome_digest(s: &GlobalState) -> Digest {
    Digest::of::<[ProcState]>(&s.procs)
}

#[derive(Clone)]
struct NodeInfo {
    parent: Option<Digest>,
    steps: Vec<Transition>,
    depth: usize,
}

fn rebuild(nodes: &HashMap<Digest, NodeInfo>, mut at: Digest, extra: Vec<Transition>) -> Vec<Transition> {
    let mut pieces = vec![extra];
    while let Some(info) = nodes.get(&at) {
        pieces.push(info.steps.clone());
        match info.parent {
            Some(p) => at = p,
            None => break,
        }
    }
    pieces.reverse();
    pieces.concat()
}

#[derive(Default)]
struct Tally {
    terminal_states: usize,
    terminal_outcomes: BTreeSet<Digest>,
    lemma_failures: Vec<LemmaFailure>,
    crosscheck_failures: usize,
    graph: Option<StateGraph>,
    depth_hit: bool,
}

impl Tally {
    fn absorb(&mut self, s: &GlobalState, exp: &Expansion, observed: (Vec<LemmaFailure>, bool)) {
        if exp.terminated {
            self.terminal_states += 1;
            self.terminal_outcomes.insert(outcome_digest(s));
        }
        for l in observed.0 {
            if !self.lemma_failures.contains(&l) {
                self.lemma_failures.push(l);
            }
        }
        self.crosscheck_failures += observed.1 as usize;
    }

    fn record(&mut self, from: Digest, edge: &Edge, to: Digest) {
        if let Some(g) = &mut self.graph {
            let label: Vec<&str> = edge.steps.iter().map(|t| t.rule.abbrev()).collect();
            g.edges.push((from, to, label.join("+")));
        }
    }

    fn node(&mut self, d: Digest, kind: NodeKind) {
        if let Some(g) = &mut self.graph {
            g.nodes.push((d, kind));
        }
    }
}

enum Stop {
    Found(Finding),
    States,
    Error(SemanticsError, Vec<Transition>),
}

fn explore_sequential(init: &GlobalState, ctx: &Ctx) -> (Tally, usize, Option<Stop>) {
    let mut tally = Tally {
        graph: ctx.opts.record_graph.then(StateGraph::default),
        ..Tally::default()
    };
    let mut nodes: HashMap<Digest, NodeInfo> = HashMap::new();
    let root = Digest::of(init);
    nodes.insert(
        root,
        NodeInfo {
            parent: None,
            steps: vec![],
            depth: 0,
        },
    );
    let mut v = ctx.check_node(init);
    if ctx.opts.monitor {
        v.extend(check_start(init));
    }
    if !v.is_empty() {
        tally.node(root, NodeKind::Violation);
        return (tally, 1, Some(Stop::Found(Finding::Violation(vec![], v))));
    }
    let mut stack = vec![(init.clone(), root, 0usize)];
    while let Some((s, d, depth)) = stack.pop() {
        if nodes.get(&d).is_some_and(|n| n.depth < depth) {
            continue;
        }
        let exp = match ctx.expand(&s) {
            Ok(e) => e,
            Err((e, steps)) => {
                let path = rebuild(&nodes, d, steps);
                return (tally, nodes.len(), Some(Stop::Error(e, path)));
            }
        };
        let observed = ctx.observe(&s, &exp);
        tally.absorb(&s, &exp, observed);
        if let Some((steps, v)) = exp.midchain {
            tally.node(d, NodeKind::Violation);
            let path = rebuild(&nodes, d, steps);
            return (tally, nodes.len(), Some(Stop::Found(Finding::Violation(path, v))));
        }
        if exp.stuck {
            tally.node(d, NodeKind::Deadlock);
            let path = rebuild(&nodes, d, vec![]);
            return (tally, nodes.len(), Some(Stop::Found(Finding::Deadlock(path))));
        }
        tally.node(d, if exp.terminated { NodeKind::Terminal } else { NodeKind::Inner });
        if depth >= ctx.opts.bounds.max_depth {
            tally.depth_hit |= !exp.edges.is_empty();
            continue;
        }
        for edge in exp.edges.into_iter().rev() {
            let cd = Digest::of(&edge.state);
            tally.record(d, &edge, cd);
            if nodes.get(&cd).is_some_and(|n| n.depth <= depth + 1) {
                continue;
            }
            if nodes.len() >= ctx.opts.bounds.max_states && !nodes.contains_key(&cd) {
                return (tally, nodes.len(), Some(Stop::States));
            }
            nodes.insert(
                cd,
                NodeInfo {
                    parent: Some(d),
                    steps: edge.steps,
                    depth: depth + 1,
                },
            );
            let v = ctx.check_node(&edge.state);
            if !v.is_empty() {
                tally.node(cd, NodeKind::Violation);
                let path = rebuild(&nodes, cd, vec![]);
                return (tally, nodes.len(), Some(Stop::Found(Finding::Violation(path, v))));
            }
            stack.push((edge.state, cd, depth + 1));
        }
    }
    let n = nodes.len();
    (tally, n, None)
}

/// Parallel variant: workers split the search tree and share the visited map.
/// It only decides whether something is wrong; the caller reruns the
/// sequential search to produce the reported counterexample, so both modes
/// agree on every verdict.
#[cfg(feature = "parallel")]
fn explore_parallel(init: &GlobalState, ctx: &Ctx) -> (Tally, usize, bool) {
    use dashmap::DashMap;
    use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
    use std::sync::Mutex;

    struct Shared<'a> {
        ctx: &'a Ctx<'a>,
        nodes: DashMap<Digest, usize>,
        count: AtomicUsize,
        stop: AtomicBool,
        bad: AtomicBool,
        tally: Mutex<Tally>,
    }

    fn work<'s>(scope: &rayon::Scope<'s>, sh: &'s Shared<'s>, s: GlobalState, d: Digest, depth: usize) {
        let mut local = vec![(s, d, depth)];
        while let Some((s, d, depth)) = local.pop() {
            if sh.stop.load(Ordering::Relaxed) {
                return;
            }
            if sh.nodes.get(&d).is_some_and(|n| *n < depth) {
                continue;
            }
            let exp = match sh.ctx.expand(&s) {
                Ok(e) => e,
                Err(_) => {
                    sh.bad.store(true, Ordering::Relaxed);
                    sh.stop.store(true, Ordering::Relaxed);
                    return;
                }
            };
            let observed = sh.ctx.observe(&s, &exp);
            if exp.midchain.is_some() || exp.stuck {
                sh.bad.store(true, Ordering::Relaxed);
                sh.stop.store(true, Ordering::Relaxed);
                return;
            }
            {
                let mut t = sh.tally.lock().expect("tally lock");
                t.absorb(&s, &exp, observed);
                t.node(d, if exp.terminated { NodeKind::Terminal } else { NodeKind::Inner });
                if depth >= sh.ctx.opts.bounds.max_depth {
                    t.depth_hit |= !exp.edges.is_empty();
                    continue;
                }
            }
            for edge in exp.edges {
                let cd = Digest::of(&edge.state);
                if sh.ctx.opts.record_graph {
                    sh.tally.lock().expect("tally lock").record(d, &edge, cd);
                }
                let fresh = {
                    use dashmap::mapref::entry::Entry;
                    match sh.nodes.entry(cd) {
                        Entry::Occupied(mut o) => {
                            if *o.get() > depth + 1 {
                                o.insert(depth + 1);
                                true
                            } else {
                                false
                            }
                        }
                        Entry::Vacant(v) => {
                            if sh.count.fetch_add(1, Ordering::Relaxed) >= sh.ctx.opts.bounds.max_states {
                                sh.stop.store(true, Ordering::Relaxed);
                                return;
                            }
                            v.insert(depth + 1);
                            true
                        }
                    }
                };
                if !fresh {
                    continue;
                }
                if !sh.ctx.check_node(&edge.state).is_empty() {
                    sh.bad.store(true, Ordering::Relaxed);
                    sh.stop.store(true, Ordering::Relaxed);
                    return;
                }
                if local.len() < 4 {
                    local.push((edge.state, cd, depth + 1));
                } else {
                    scope.spawn(move |scope| work(scope, sh, edge.state, cd, depth + 1));
                }
            }
        }
    }

    let root = Digest::of(init);
    let sh = Shared {
        ctx,
        nodes: DashMap::new(),
        count: AtomicUsize::new(1),
        stop: AtomicBool::new(false),
        bad: AtomicBool::new(!ctx.check_node(init).is_empty() || (ctx.opts.monitor && !check_start(init).is_empty())),
        tally: Mutex::new(Tally {
            graph: ctx.opts.record_graph.then(StateGraph::default),
            ..Tally::default()
        }),
    };
    sh.nodes.insert(root, 0);
    if !sh.bad.load(Ordering::Relaxed) {
        let shr = &sh;
        rayon::scope(|scope| work(scope, shr, init.clone(), root, 0));
    }
    let bad = sh.bad.load(Ordering::Relaxed);
    let count = sh.nodes.len();
    let exceeded = sh.stop.load(Ordering::Relaxed) && !bad;
    let tally = sh.tally.into_inner().expect("tally lock");
    (tally, if exceeded { usize::MAX } else { count }, bad)
}

/// Explores every schedule of `program` on `n` processes.
pub fn explore(program: &Command, spec: &Resolved, n: i64, opts: &ExploreOptions) -> Result<Exploration, ExploreError> {
    let init = initial_state(program, n)?;
    explore_from(&init, spec, opts)
}

/// Explores from an arbitrary state.
pub fn explore_from(init: &GlobalState, spec: &Resolved, opts: &ExploreOptions) -> Result<Exploration, ExploreError> {
    let ctx = Ctx { spec, opts };

    #[cfg(feature = "parallel")]
    if opts.parallelism.is_parallel() {
        let (tally, count, bad) = explore_parallel(init, &ctx);
        if !bad {
            let verdict = if count == usize::MAX {
                Verdict::BoundExceeded {
                    states_visited: opts.bounds.max_states,
                }
            } else if tally.depth_hit {
                Verdict::BoundExceeded { states_visited: count }
            } else {
                Verdict::Ok {
                    states_visited: count,
                    terminal_states: tally.terminal_states,
                }
            };
            return Ok(finish(verdict, tally));
        }
    }

    let (tally, count, stop) = explore_sequential(init, &ctx);
    let trace = |steps: Vec<Transition>| Trace {
        initial: init.clone(),
        steps,
    };
    let verdict = match stop {
        None if tally.depth_hit => Verdict::BoundExceeded { states_visited: count },
        None => Verdict::Ok {
            states_visited: count,
            terminal_states: tally.terminal_states,
        },
        Some(Stop::States) => Verdict::BoundExceeded {
            states_visited: opts.bounds.max_states,
        },
        Some(Stop::Found(Finding::Deadlock(path))) => Verdict::DeadlockFound { trace: trace(path) },
        Some(Stop::Found(Finding::Violation(path, mut violations))) => {
            for v in &mut violations {
                v.state_index = Some(path.len());
            }
            Verdict::ViolationFound {
                trace: trace(path),
                violations,
            }
        }
        Some(Stop::Error(error, path)) => {
            return Err(ExploreError::Semantics {
                error,
                trace: trace(path),
            })
        }
    };
    Ok(finish(verdict, tally))
}

fn finish(verdict: Verdict, tally: Tally) -> Exploration {
    Exploration {
        verdict,
        terminal_outcomes: tally.terminal_outcomes,
        lemma_failures: tally.lemma_failures,
        crosscheck_failures: tally.crosscheck_failures,
        graph: tally.graph,
    }
}

/// Outcome of one randomly scheduled run.
#[derive(Clone, Debug, Serialize)]
pub struct ScheduleRun {
    pub trace: Trace,
    pub verdict: Verdict,
    pub final_state: GlobalState,
}

/// Follows one schedule, picking uniformly among all enabled transitions
/// with a seeded generator.
pub fn run_schedule(
    program: &Command,
    spec: &Resolved,
    n: i64,
    seed: u64,
    monitor: bool,
    max_depth: usize,
) -> Result<ScheduleRun, ExploreError> {
    let init = initial_state(program, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = init.clone();
    let mut steps = Vec::new();
    let mut seen = 1usize;
    let verdict = loop {
        if monitor {
            let mut v = check_state(&s, spec);
            if steps.is_empty() {
                v.extend(check_start(&s));
            }
            if !v.is_empty() {
                let index = steps.len();
                for x in &mut v {
                    x.state_index = Some(index);
                }
                break Verdict::ViolationFound {
                    trace: Trace {
                        initial: init.clone(),
                        steps: steps.clone(),
                    },
                    violations: v,
                };
            }
        }
        let enabled = enabled_transitions(&s, spec).map_err(|error| ExploreError::Semantics {
            error,
            trace: Trace {
                initial: init.clone(),
                steps: steps.clone(),
            },
        })?;
        if s.is_terminated() && enabled.is_empty() {
            break Verdict::Ok {
                states_visited: seen,
                terminal_states: 1,
            };
        }
        if enabled.iter().all(|t| t.rule == Rule::FreeBuffer) && !s.is_terminated() {
            break Verdict::DeadlockFound {
                trace: Trace {
                    initial: init.clone(),
                    steps: steps.clone(),
                },
            };
        }
        if steps.len() >= max_depth {
            break Verdict::BoundExceeded { states_visited: seen };
        }
        let tr = enabled[rng.gen_range(0..enabled.len())];
        s = apply_enabled(&s, &tr, spec).map_err(|error| ExploreError::Semantics {
            error,
            trace: Trace {
                initial: init.clone(),
                steps: steps.clone(),
            },
        })?;
        steps.push(tr);
        seen += 1;
    };
    Ok(ScheduleRun {
        trace: Trace {
            initial: init,
            steps,
        },
        verdict,
        final_state: s,
    })
}

/// Structural digest of a state; maps are compared by content.
pub fn canonical_hash(s: &GlobalState) -> Digest {
    Digest::of(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    fn seq_opts() -> ExploreOptions {
        ExploreOptions {
            parallelism: Parallelism::Sequential,
            ..ExploreOptions::default()
        }
    }

    #[test]
    fn sendrecv_is_ok_and_confluent() {
        let spec = corpus::sendrecv_spec().resolve(2).unwrap();
        for policy in [FreeBufferPolicy::Eager, FreeBufferPolicy::Explore, FreeBufferPolicy::Never] {
            for compress in [true, false] {
                let mut o = seq_opts();
                o.bounds.free_buffer_policy = policy;
                o.compress_local = compress;
                let r = explore(&corpus::sendrecv_program(), &spec, 2, &o).unwrap();
                assert!(r.verdict.is_ok(), "{policy:?} {compress}: {:?}", r.verdict);
                assert_eq!(r.terminal_outcomes.len(), 1);
                assert!(r.lemma_failures.is_empty());
                assert_eq!(r.crosscheck_failures, 0);
            }
        }
    }

    #[test]
    fn never_sent_deadlocks() {
        let spec = corpus::deadlock_spec().resolve(2).unwrap();
        let mut o = seq_opts();
        o.monitor = false;
        let r = explore(&corpus::deadlock_program(), &spec, 2, &o).unwrap();
        let Verdict::DeadlockFound { trace } = &r.verdict else {
            panic!("{:?}", r.verdict)
        };
        let last = trace.final_state(&spec).unwrap();
        assert!(is_deadlock(&last, &spec));

        o.monitor = true;
        let r = explore(&corpus::deadlock_program(), &spec, 2, &o).unwrap();
        let Verdict::ViolationFound { violations, trace } = &r.verdict else {
            panic!("{:?}", r.verdict)
        };
        assert_eq!(violations[0].axiom, crate::monitor::Axiom::AtBarrier);
        let states = trace.replay(&spec).unwrap();
        assert_eq!(check_state(states.last().unwrap(), &spec), {
            let mut v = violations.clone();
            v.iter_mut().for_each(|x| x.state_index = None);
            v
        });
    }

    #[test]
    fn seeded_runs_repeat() {
        let spec = corpus::sendrecv_spec().resolve(2).unwrap();
        let a = run_schedule(&corpus::sendrecv_program(), &spec, 2, 7, true, 10_000).unwrap();
        let b = run_schedule(&corpus::sendrecv_program(), &spec, 2, 7, true, 10_000).unwrap();
        assert_eq!(a.trace, b.trace);
        assert!(a.verdict.is_ok());
        let c = run_schedule(&corpus::sendrecv_program(), &spec, 2, 8, true, 10_000).unwrap();
        assert_eq!(c.final_state.procs[1].env["x"], 5);
        assert_eq!(
            outcome_digest(&a.final_state),
            outcome_digest(&c.final_state)
        );
    }

    #[test]
    fn never_sent_deadlocks_on_every_seed() {
        let spec = corpus::deadlock_spec().resolve(2).unwrap();
        for seed in 0..20 {
            let r = run_schedule(&corpus::deadlock_program(), &spec, 2, seed, false, 10_000).unwrap();
            assert!(matches!(r.verdict, Verdict::DeadlockFound { .. }));
        }
    }

    #[test]
    fn depth_bound_is_reported() {
        let spec = corpus::pingpong_spec().resolve(2).unwrap();
        let mut o = seq_opts();
        o.bounds.max_depth = 3;
        let r = explore(&corpus::pingpong_program(), &spec, 2, &o).unwrap();
        assert!(matches!(r.verdict, Verdict::BoundExceeded { .. }));
        o.bounds.max_depth = 1_000;
        o.bounds.max_states = 5;
        let r = explore(&corpus::pingpong_program(), &spec, 2, &o).unwrap();
        assert_eq!(r.verdict, Verdict::BoundExceeded { states_visited: 5 });
    }

    #[test]
    fn dot_export_lists_nodes_and_edges() {
        let spec = corpus::sendrecv_spec().resolve(2).unwrap();
        let mut o = seq_opts();
        o.record_graph = true;
        let r = explore(&corpus::sendrecv_program(), &spec, 2, &o).unwrap();
        let dot = r.graph.unwrap().to_dot();
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("TNW"));
        assert!(dot.contains("doublecircle"));
    }

    proptest::proptest! {
        #[test]
        fn random_schedules_replay_and_agree(seed in proptest::prelude::any::<u64>()) {
            let spec = corpus::pingpong_spec().resolve(2).unwrap();
            let run = run_schedule(&corpus::pingpong_program(), &spec, 2, seed, true, 10_000).unwrap();
            proptest::prop_assert!(run.verdict.is_ok());
            proptest::prop_assert_eq!(run.trace.final_state(&spec).unwrap(), run.final_state.clone());
            let reference = run_schedule(&corpus::pingpong_program(), &spec, 2, 0, true, 10_000).unwrap();
            proptest::prop_assert_eq!(outcome_digest(&run.final_state), outcome_digest(&reference.final_state));
        }
    }
}
