//! The user-supplied communication layout: who sends and receives each tag,
//! what the payload is, where the barriers fall, and how many there are.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::expr::{EvalError, Expr};

/// Largest permitted distance between consecutive barrier tags.
pub const MAX_TAG_GAP: i64 = 32767;

type NativeFn = Arc<dyn Fn(i64, i64) -> i64 + Send + Sync>;

/// A pure function of `(argument, size)`. The expression form reads the
/// argument as `tag` (or `index` for barrier tags) and the process count as
/// `size`.
#[derive(Clone)]
pub enum SpecFn {
    Expr(Expr),
    Native(NativeFn),
}

impl SpecFn {
    pub fn expr(src: &str) -> Self {
        SpecFn::Expr(Expr::parse(src).expect("static expression"))
    }

    pub fn native(f: impl Fn(i64, i64) -> i64 + Send + Sync + 'static) -> Self {
        SpecFn::Native(Arc::new(f))
    }

    pub fn call(&self, arg: i64, size: i64) -> Result<i64, EvalError> {
        match self {
            SpecFn::Native(f) => Ok(f(arg, size)),
            SpecFn::Expr(e) => e.eval_in(&|x| match x {
                "tag" | "index" => Some(arg),
                "size" => Some(size),
                _ => None,
            }),
        }
    }
}

impl fmt::Debug for SpecFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecFn::Expr(e) => write!(f, "{e}"),
            SpecFn::Native(_) => f.write_str("<native>"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReduceOp {
    Sum,
    Min,
    Max,
    LogicalAnd,
}

impl ReduceOp {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ReduceOp::Sum => a + b,
            ReduceOp::Min => a.min(b),
            ReduceOp::Max => a.max(b),
            ReduceOp::LogicalAnd => ((a != 0.0) && (b != 0.0)) as i64 as f64,
        }
    }

    /// Left fold in the given order; `None` for an empty sequence.
    pub fn fold(self, values: impl IntoIterator<Item = f64>) -> Option<f64> {
        values.into_iter().reduce(|a, b| self.apply(a, b))
    }
}

/// What a barrier does beyond synchronizing, as seen by the calculus. The
/// payload-level details live in the runtime's collective descriptors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CollectiveKind {
    PlainBarrier,
    Gather { root: i64 },
    AllReduce { op: ReduceOp },
}

#[derive(Clone, Debug)]
pub struct TopologySpec {
    pub sender: SpecFn,
    pub receiver: SpecFn,
    pub message: SpecFn,
    pub barrier_tag: SpecFn,
    /// Ignores its first argument.
    pub barrier_count: SpecFn,
    /// Keyed by the number of barriers passed before the collective.
    pub collectives: BTreeMap<i64, CollectiveKind>,
}

impl TopologySpec {
    pub fn sender(&self, tag: i64, n: i64) -> Result<i64, EvalError> {
        self.sender.call(tag, n)
    }

    pub fn receiver(&self, tag: i64, n: i64) -> Result<i64, EvalError> {
        self.receiver.call(tag, n)
    }

    pub fn message(&self, tag: i64, n: i64) -> Result<i64, EvalError> {
        self.message.call(tag, n)
    }

    pub fn barrier_tag(&self, index: i64, n: i64) -> Result<i64, EvalError> {
        self.barrier_tag.call(index, n)
    }

    pub fn barrier_count(&self, n: i64) -> Result<i64, EvalError> {
        self.barrier_count.call(0, n)
    }

    pub fn collective(&self, index: i64) -> CollectiveKind {
        self.collectives
            .get(&index)
            .copied()
            .unwrap_or(CollectiveKind::PlainBarrier)
    }

    /// Tabulates the topology for one process count so hot paths avoid
    /// re-evaluating expressions.
    pub fn resolve(&self, n: i64) -> Result<Resolved, EvalError> {
        let count = self.barrier_count(n)?;
        let barrier_tags = (0..=count.max(0) + 1)
            .map(|b| self.barrier_tag(b, n))
            .collect::<Result<Vec<_>, _>>()?;
        let limit = barrier_tags[count.max(0) as usize].clamp(0, 1 << 24) as usize;
        let mut senders = Vec::with_capacity(limit);
        let mut receivers = Vec::with_capacity(limit);
        let mut messages = Vec::with_capacity(limit);
        for tag in 0..limit as i64 {
            senders.push(self.sender(tag, n)?);
            receivers.push(self.receiver(tag, n)?);
            messages.push(self.message(tag, n)?);
        }
        Ok(Resolved {
            spec: self.clone(),
            n,
            count,
            barrier_tags,
            senders,
            receivers,
            messages,
        })
    }
}

/// A [`TopologySpec`] specialised to one process count.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub spec: TopologySpec,
    pub n: i64,
    pub count: i64,
    barrier_tags: Vec<i64>,
    senders: Vec<i64>,
    receivers: Vec<i64>,
    messages: Vec<i64>,
}

impl Resolved {
    fn table(&self, table: &[i64], f: &SpecFn, tag: i64) -> Result<i64, EvalError> {
        match usize::try_from(tag).ok().and_then(|i| table.get(i)) {
            Some(v) => Ok(*v),
            None => f.call(tag, self.n),
        }
    }

    pub fn sender(&self, tag: i64) -> Result<i64, EvalError> {
        self.table(&self.senders, &self.spec.sender, tag)
    }

    pub fn receiver(&self, tag: i64) -> Result<i64, EvalError> {
        self.table(&self.receivers, &self.spec.receiver, tag)
    }

    pub fn message(&self, tag: i64) -> Result<i64, EvalError> {
        self.table(&self.messages, &self.spec.message, tag)
    }

    pub fn barrier_tag(&self, index: i64) -> Result<i64, EvalError> {
        self.table(&self.barrier_tags, &self.spec.barrier_tag, index)
    }

    /// True if `rank` sends or receives some tag strictly between `lo` and `hi`.
    pub fn owns_tag_between(&self, rank: i64, lo: i64, hi: i64) -> Result<Option<i64>, EvalError> {
        for v in (lo + 1).max(0)..hi {
            if self.sender(v)? == rank || self.receiver(v)? == rank {
                return Ok(Some(v));
            }
        }
        Ok(None)
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum SpecError {
    #[error("N={n}: barrier_tag(0) = {value}, expected 0")]
    AnchorNotZero { n: i64, value: i64 },
    #[error("N={n}: barrier_tag({index}) = {hi} is below barrier_tag({}) = {lo}", .index - 1)]
    Decreasing { n: i64, index: i64, lo: i64, hi: i64 },
    #[error("N={n}: barrier interval {index} spans {gap} tags (limit {MAX_TAG_GAP})")]
    TagGapExceeded { n: i64, index: i64, gap: i64 },
    #[error("N={n}: {role}({tag}) = {rank} is not a rank")]
    RankOutOfRange {
        n: i64,
        tag: i64,
        role: &'static str,
        rank: i64,
    },
    #[error("N={n}: barrier_count = {count} is negative")]
    NegativeBarrierCount { n: i64, count: i64 },
    #[error("N={n}: collective index {index} is outside 0..{count}")]
    CollectiveOutOfRange { n: i64, index: i64, count: i64 },
    #[error("N={n}: evaluating {what} failed: {err}")]
    Eval {
        n: i64,
        what: &'static str,
        err: EvalError,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum SpecWarning {
    SelfSend { n: i64, tag: i64, rank: i64 },
}

fn check(
    spec: &TopologySpec,
    n: i64,
    errors: &mut Vec<SpecError>,
    warnings: &mut Vec<SpecWarning>,
) {
    let eval = |what, r: Result<i64, EvalError>, errors: &mut Vec<SpecError>| match r {
        Ok(v) => Some(v),
        Err(err) => {
            errors.push(SpecError::Eval { n, what, err });
            None
        }
    };
    let Some(count) = eval("barrier_count", spec.barrier_count(n), errors) else {
        return;
    };
    if count < 0 {
        errors.push(SpecError::NegativeBarrierCount { n, count });
        return;
    }
    for &index in spec.collectives.keys() {
        if index < 0 || index >= count {
            errors.push(SpecError::CollectiveOutOfRange { n, index, count });
        }
    }
    let mut tags = Vec::with_capacity(count as usize + 1);
    for b in 0..=count {
        match eval("barrier_tag", spec.barrier_tag(b, n), errors) {
            Some(t) => tags.push(t),
            None => return,
        }
    }
    if tags[0] != 0 {
        errors.push(SpecError::AnchorNotZero { n, value: tags[0] });
    }
    let mut ordered = true;
    for b in 1..tags.len() {
        let (lo, hi) = (tags[b - 1], tags[b]);
        if hi < lo {
            ordered = false;
            errors.push(SpecError::Decreasing {
                n,
                index: b as i64,
                lo,
                hi,
            });
        } else if hi - lo > MAX_TAG_GAP {
            errors.push(SpecError::TagGapExceeded {
                n,
                index: b as i64 - 1,
                gap: hi - lo,
            });
        }
    }
    if !ordered {
        return;
    }
    for tag in 0..tags[count as usize] {
        let s = eval("sender", spec.sender(tag, n), errors);
        let r = eval("receiver", spec.receiver(tag, n), errors);
        eval("message", spec.message(tag, n), errors);
        for (role, v) in [("sender", s), ("receiver", r)] {
            if let Some(rank) = v {
                if !(0..n).contains(&rank) {
                    errors.push(SpecError::RankOutOfRange { n, tag, role, rank });
                }
            }
        }
        if let (Some(s), Some(r)) = (s, r) {
            if s == r {
                warnings.push(SpecWarning::SelfSend { n, tag, rank: s });
            }
        }
    }
}

/// Checks the layout for every process count in `ns`. An empty result means
/// the topology is usable.
pub fn validate_topology(spec: &TopologySpec, ns: RangeInclusive<i64>) -> Vec<SpecError> {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    for n in ns {
        check(spec, n, &mut errors, &mut warnings);
    }
    errors
}

/// Legal but suspicious layouts, currently only self-sends.
pub fn topology_warnings(spec: &TopologySpec, ns: RangeInclusive<i64>) -> Vec<SpecWarning> {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    for n in ns {
        check(spec, n, &mut errors, &mut warnings);
    }
    warnings
}

#[derive(Serialize, Deserialize)]
struct CollectiveEntry {
    index: i64,
    #[serde(flatten)]
    kind: CollectiveKind,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecRepr {
    sender: Expr,
    receiver: Expr,
    message: Expr,
    barrier_tag: Expr,
    barrier_count: Expr,
    #[serde(default)]
    collectives: Vec<CollectiveEntry>,
}

#[derive(Debug, Error)]
pub enum SpecFormatError {
    #[error("spec contains a native function and cannot be written as JSON")]
    NativeFunction,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TopologySpec {
    pub fn from_json(text: &str) -> Result<Self, SpecFormatError> {
        let r: SpecRepr = serde_json::from_str(text)?;
        Ok(TopologySpec {
            sender: SpecFn::Expr(r.sender),
            receiver: SpecFn::Expr(r.receiver),
            message: SpecFn::Expr(r.message),
            barrier_tag: SpecFn::Expr(r.barrier_tag),
            barrier_count: SpecFn::Expr(r.barrier_count),
            collectives: r.collectives.into_iter().map(|c| (c.index, c.kind)).collect(),
        })
    }

    pub fn to_json(&self) -> Result<String, SpecFormatError> {
        let e = |f: &SpecFn| match f {
            SpecFn::Expr(e) => Ok(e.clone()),
            SpecFn::Native(_) => Err(SpecFormatError::NativeFunction),
        };
        let r = SpecRepr {
            sender: e(&self.sender)?,
            receiver: e(&self.receiver)?,
            message: e(&self.message)?,
            barrier_tag: e(&self.barrier_tag)?,
            barrier_count: e(&self.barrier_count)?,
            collectives: self
                .collectives
                .iter()
                .map(|(&index, &kind)| CollectiveEntry { index, kind })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&r)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn running_example(nt: i64) -> TopologySpec {
        TopologySpec {
            sender: SpecFn::expr("tag - (tag div (size - 1)) * (size - 1)"),
            receiver: SpecFn::expr("tag - (tag div (size - 1)) * (size - 1) + 1"),
            message: SpecFn::expr("tag * 2 + 1"),
            barrier_tag: SpecFn::expr("index * (size - 1)"),
            barrier_count: SpecFn::Expr(Expr::int(nt + 1)),
            collectives: [(nt, CollectiveKind::Gather { root: 0 })].into(),
        }
    }

    #[test]
    fn running_example_is_valid() {
        assert_eq!(validate_topology(&running_example(25), 2..=8), vec![]);
    }

    #[test]
    fn oversized_gap_is_rejected() {
        let mut s = running_example(1);
        s.barrier_tag = SpecFn::expr("index * 40000");
        s.sender = SpecFn::expr("0");
        s.receiver = SpecFn::expr("1");
        let errs = validate_topology(&s, 2..=2);
        assert!(matches!(
            errs.as_slice(),
            [SpecError::TagGapExceeded { gap: 40000, .. }, ..]
        ));
        s.barrier_tag = SpecFn::expr("index * 32767");
        assert_eq!(validate_topology(&s, 2..=2), vec![]);
    }

    #[test]
    fn out_of_range_sender_is_rejected() {
        let mut s = running_example(1);
        s.sender = SpecFn::expr("5");
        let errs = validate_topology(&s, 2..=2);
        assert!(errs.contains(&SpecError::RankOutOfRange {
            n: 2,
            tag: 0,
            role: "sender",
            rank: 5
        }));
    }

    #[test]
    fn anchor_and_order() {
        let mut s = running_example(2);
        s.barrier_tag = SpecFn::expr("index * (size - 1) + 1");
        assert!(validate_topology(&s, 2..=2)
            .iter()
            .any(|e| matches!(e, SpecError::AnchorNotZero { value: 1, .. })));
        s.barrier_tag = SpecFn::expr("10 - index");
        assert!(validate_topology(&s, 3..=3)
            .iter()
            .any(|e| matches!(e, SpecError::Decreasing { .. })));
        // Empty intervals are allowed: the final collective may close
        // nothing new.
        s.barrier_tag = SpecFn::expr("index - (index div 3) * (index - 2)");
        assert!(validate_topology(&s, 2..=2).is_empty());
    }

    #[test]
    fn self_send_is_only_a_warning() {
        let mut s = running_example(1);
        s.receiver = s.sender.clone();
        assert_eq!(validate_topology(&s, 2..=3), vec![]);
        assert!(!topology_warnings(&s, 2..=3).is_empty());
    }

    #[test]
    fn json_round_trip() {
        let s = running_example(3);
        let text = s.to_json().unwrap();
        let back = TopologySpec::from_json(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text);
        let r = back.resolve(4).unwrap();
        assert_eq!(r.sender(4).unwrap(), 1);
        assert_eq!(r.receiver(4).unwrap(), 2);
        assert_eq!(r.barrier_tag(3).unwrap(), 9);
        assert_eq!(r.count, 4);
    }

    #[test]
    fn folds_are_left_to_right() {
        assert_eq!(ReduceOp::Sum.fold([1.0, 2.0, 3.0]), Some(6.0));
        assert_eq!(ReduceOp::Max.fold([-1.0, 5.0, 2.0]), Some(5.0));
        assert_eq!(ReduceOp::LogicalAnd.fold([1.0, 0.0]), Some(0.0));
        assert_eq!(ReduceOp::Min.fold([]), None);
    }
}
