use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::expr::Expr;

/// A command of the calculus. Children are shared so that cloning a state
/// (which happens on every explored transition) costs a few refcount bumps.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Command {
    IRecv { tag: Expr, var: String },
    ISend { tag: Expr, var: String },
    Wait(Expr),
    Barrier,
    Skip,
    If {
        cond: Expr,
        then: Arc<Command>,
        els: Arc<Command>,
    },
    While { cond: Expr, body: Arc<Command> },
    Set { var: String, expr: Expr },
    Seq(Arc<Command>, Arc<Command>),
}

impl Command {
    pub fn irecv(tag: Expr, var: &str) -> Self {
        Command::IRecv {
            tag,
            var: var.to_owned(),
        }
    }

    pub fn isend(tag: Expr, var: &str) -> Self {
        Command::ISend {
            tag,
            var: var.to_owned(),
        }
    }

    pub fn wait(tag: Expr) -> Self {
        Command::Wait(tag)
    }

    pub fn set(var: &str, expr: Expr) -> Self {
        Command::Set {
            var: var.to_owned(),
            expr,
        }
    }

    pub fn if_(cond: Expr, then: Command, els: Command) -> Self {
        Command::If {
            cond,
            then: Arc::new(then),
            els: Arc::new(els),
        }
    }

    pub fn while_(cond: Expr, body: Command) -> Self {
        Command::While {
            cond,
            body: Arc::new(body),
        }
    }

    pub fn seq2(first: Command, rest: Command) -> Self {
        Command::Seq(Arc::new(first), Arc::new(rest))
    }

    /// Right-nested sequence of `cmds`. An empty list is `skip`.
    pub fn seq<I: IntoIterator<Item = Command>>(cmds: I) -> Self {
        let mut items: Vec<Command> = cmds.into_iter().collect();
        let Some(mut acc) = items.pop() else {
            return Command::Skip;
        };
        while let Some(c) = items.pop() {
            acc = Command::seq2(c, acc);
        }
        acc
    }

    /// `irecv tag var; wait tag`
    pub fn recv(tag: Expr, var: &str) -> Self {
        Command::seq2(Command::irecv(tag.clone(), var), Command::wait(tag))
    }

    /// `isend tag var; wait tag`
    pub fn send(tag: Expr, var: &str) -> Self {
        Command::seq2(Command::isend(tag.clone(), var), Command::wait(tag))
    }

    /// The command the process is about to execute: the leftmost leaf of the
    /// sequence spine.
    pub fn head(&self) -> &Command {
        let mut c = self;
        while let Command::Seq(first, _) = c {
            c = first;
        }
        c
    }

    /// Rebuilds the sequence spine with the head replaced by `new`.
    pub fn replace_head(&self, new: Command) -> Command {
        match self {
            Command::Seq(first, rest) => {
                Command::Seq(Arc::new(first.replace_head(new)), Arc::clone(rest))
            }
            _ => new,
        }
    }

    pub fn is_terminated(&self) -> bool {
        matches!(self, Command::Skip)
    }

    /// Expressions occurring directly in this command, without descending into
    /// sub-commands. These are what the next step may evaluate.
    pub fn direct_exprs(&self) -> Vec<&Expr> {
        match self {
            Command::IRecv { tag, .. } | Command::ISend { tag, .. } | Command::Wait(tag) => {
                vec![tag]
            }
            Command::If { cond, .. } | Command::While { cond, .. } => vec![cond],
            Command::Set { expr, .. } => vec![expr],
            Command::Barrier | Command::Skip | Command::Seq(..) => vec![],
        }
    }

    /// Does the command (anywhere in its tree) end in a `barrier`?
    pub fn ends_in_barrier(&self) -> bool {
        match self {
            Command::Barrier => true,
            Command::Seq(_, rest) => rest.ends_in_barrier(),
            _ => false,
        }
    }

    /// Number of `barrier` leaves still syntactically present.
    pub fn count_barriers(&self) -> usize {
        match self {
            Command::Barrier => 1,
            Command::Seq(a, b) => a.count_barriers() + b.count_barriers(),
            Command::If { then, els, .. } => then.count_barriers() + els.count_barriers(),
            Command::While { body, .. } => body.count_barriers(),
            _ => 0,
        }
    }

    fn spine(&self) -> Vec<&Command> {
        let mut out = Vec::new();
        let mut c = self;
        while let Command::Seq(first, rest) = c {
            out.push(first.as_ref());
            c = rest;
        }
        out.push(c);
        out
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::IRecv { tag, var } => write!(f, "irecv {tag} {var}"),
            Command::ISend { tag, var } => write!(f, "isend {tag} {var}"),
            Command::Wait(tag) => write!(f, "wait {tag}"),
            Command::Barrier => f.write_str("barrier"),
            Command::Skip => f.write_str("skip"),
            Command::If { cond, then, els } => write!(f, "if {cond} {{ {then} }} {{ {els} }}"),
            Command::While { cond, body } => write!(f, "while {cond} {{ {body} }}"),
            Command::Set { var, expr } => write!(f, "set {var} {expr}"),
            Command::Seq(first, rest) => {
                if matches!(first.as_ref(), Command::Seq(..)) {
                    write!(f, "{{ {first} }}; {rest}")
                } else {
                    write!(f, "{first}; {rest}")
                }
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
enum Tagged {
    Irecv {
        tag: Expr,
        var: String,
    },
    Isend {
        tag: Expr,
        var: String,
    },
    Wait {
        tag: Expr,
    },
    Barrier,
    Skip,
    If {
        cond: Expr,
        then: Box<Repr>,
        #[serde(rename = "else", default = "skip_repr")]
        els: Box<Repr>,
    },
    While {
        cond: Expr,
        body: Box<Repr>,
    },
    Set {
        var: String,
        expr: Expr,
    },
    Seq {
        body: Vec<Repr>,
    },
    /// Blocking send: `isend; wait`.
    Send {
        tag: Expr,
        var: String,
    },
    /// Blocking receive: `irecv; wait`.
    Recv {
        tag: Expr,
        var: String,
    },
}

fn skip_repr() -> Box<Repr> {
    Box::new(Repr::Tagged(Tagged::Skip))
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Repr {
    List(Vec<Repr>),
    Tagged(Tagged),
}

impl From<&Command> for Repr {
    fn from(c: &Command) -> Self {
        let t = match c {
            Command::IRecv { tag, var } => Tagged::Irecv {
                tag: tag.clone(),
                var: var.clone(),
            },
            Command::ISend { tag, var } => Tagged::Isend {
                tag: tag.clone(),
                var: var.clone(),
            },
            Command::Wait(tag) => Tagged::Wait { tag: tag.clone() },
            Command::Barrier => Tagged::Barrier,
            Command::Skip => Tagged::Skip,
            Command::If { cond, then, els } => Tagged::If {
                cond: cond.clone(),
                then: Box::new(then.as_ref().into()),
                els: Box::new(els.as_ref().into()),
            },
            Command::While { cond, body } => Tagged::While {
                cond: cond.clone(),
                body: Box::new(body.as_ref().into()),
            },
            Command::Set { var, expr } => Tagged::Set {
                var: var.clone(),
                expr: expr.clone(),
            },
            Command::Seq(..) => return Repr::List(c.spine().into_iter().map(Repr::from).collect()),
        };
        Repr::Tagged(t)
    }
}

impl From<Repr> for Command {
    fn from(r: Repr) -> Self {
        match r {
            Repr::List(items) => Command::seq(items.into_iter().map(Command::from)),
            Repr::Tagged(t) => match t {
                Tagged::Irecv { tag, var } => Command::IRecv { tag, var },
                Tagged::Isend { tag, var } => Command::ISend { tag, var },
                Tagged::Wait { tag } => Command::Wait(tag),
                Tagged::Barrier => Command::Barrier,
                Tagged::Skip => Command::Skip,
                Tagged::If { cond, then, els } => {
                    Command::if_(cond, Command::from(*then), Command::from(*els))
                }
                Tagged::While { cond, body } => Command::while_(cond, Command::from(*body)),
                Tagged::Set { var, expr } => Command::Set { var, expr },
                Tagged::Seq { body } => Command::seq(body.into_iter().map(Command::from)),
                Tagged::Send { tag, var } => Command::send(tag, &var),
                Tagged::Recv { tag, var } => Command::recv(tag, &var),
            },
        }
    }
}

impl Serialize for Command {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        Repr::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Command {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Repr::deserialize(d).map(Command::from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig_program() -> Command {
        Command::seq([
            Command::set("x", Expr::int(5)),
            Command::if_(
                Expr::eq(Expr::var("rank"), Expr::int(0)),
                Command::isend(Expr::int(0), "x"),
                Command::irecv(Expr::int(0), "x"),
            ),
            Command::wait(Expr::int(0)),
        ])
    }

    #[test]
    fn head_descends_the_spine() {
        let c = Command::seq2(
            Command::seq2(Command::Skip, Command::Barrier),
            Command::Barrier,
        );
        assert_eq!(c.head(), &Command::Skip);
        assert_eq!(
            c.replace_head(Command::Barrier),
            Command::seq2(
                Command::seq2(Command::Barrier, Command::Barrier),
                Command::Barrier
            )
        );
    }

    #[test]
    fn json_round_trip() {
        let p = fig_program();
        let text = serde_json::to_string(&p).unwrap();
        let back: Command = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn json_accepts_shorthands() {
        let c: Command = serde_json::from_str(
            r#"{"op":"seq","body":[{"op":"send","tag":"rank + 1","var":"x"},{"op":"if","cond":1,"then":{"op":"skip"}}]}"#,
        )
        .unwrap();
        assert_eq!(
            c,
            Command::seq2(
                Command::send(Expr::parse("rank + 1").unwrap(), "x"),
                Command::if_(Expr::int(1), Command::Skip, Command::Skip)
            )
        );
        assert!(serde_json::from_str::<Command>(r#"{"op":"jump"}"#).is_err());
    }

    #[test]
    fn display_is_readable() {
        assert_eq!(
            fig_program().to_string(),
            "set x 5; if (rank = 0) { isend 0 x } { irecv 0 x }; wait 0"
        );
    }

    #[test]
    fn direct_expressions_do_not_descend() {
        let c = Command::while_(Expr::var("n"), Command::set("y", Expr::var("x")));
        let reads: Vec<String> = c.direct_exprs().iter().map(|e| e.to_string()).collect();
        assert_eq!(reads, vec!["n"]);
    }
}
