//! Calculus programs with the same tags, waits and barriers as the
//! benchmark rank programs, but integer payloads (`tag * 2 + 1`) instead of
//! grid data. Every rank runs the same program and branches on `rank`.

use crate::calculus::{Command, Expr, TopologySpec};

#[derive(Clone, Debug)]
pub struct Model {
    pub name: &'static str,
    pub program: Command,
    pub spec: TopologySpec,
}

fn e(src: &str) -> Expr {
    Expr::parse(src).expect("static expression")
}

fn not(src: &str) -> Expr {
    Expr::not(e(src))
}

/// `set var (tag*2+1)` followed by `isend tag var`, with the tag first
/// stored in `tvar`.
fn isend(tvar: &str, tag: &str, var: &str) -> Command {
    Command::seq([
        Command::set(tvar, e(tag)),
        Command::set(var, e(&format!("{tvar} * 2 + 1"))),
        Command::isend(Expr::var(tvar), var),
    ])
}

fn irecv(tvar: &str, tag: &str, var: &str) -> Command {
    Command::seq([Command::set(tvar, e(tag)), Command::irecv(Expr::var(tvar), var)])
}

fn loop_steps(steps: i64, body: Command) -> Command {
    Command::seq([
        Command::set("n", Expr::int(0)),
        Command::while_(
            Expr::not(Expr::eq(Expr::var("n"), Expr::int(steps))),
            Command::seq([body, Command::Barrier, Command::set("n", e("n + 1"))]),
        ),
    ])
}

/// Left-to-right relay: rank 0 sends, the last rank receives, the rest
/// isend, receive, then wait on the send.
pub fn convection(nt: i64) -> Model {
    let step = Command::seq([
        Command::set("bt", e("n * (size - 1)")),
        Command::if_(
            e("rank = 0"),
            Command::seq([isend("ts", "bt", "x"), Command::wait(Expr::var("ts"))]),
            Command::if_(
                e("rank = size - 1"),
                Command::seq([irecv("tr", "bt + rank - 1", "h"), Command::wait(Expr::var("tr"))]),
                Command::seq([
                    isend("ts", "bt + rank", "x"),
                    irecv("tr", "bt + rank - 1", "h"),
                    Command::wait(Expr::var("tr")),
                    Command::wait(Expr::var("ts")),
                ]),
            ),
        ),
    ]);
    Model {
        name: "convection",
        program: loop_steps(nt, step),
        spec: super::convection::topology(nt as usize),
    }
}

/// Two-way halo exchange with both neighbours, waits in tag order.
fn halo_exchange(steps: i64) -> Command {
    let skip = Command::Skip;
    let step = Command::seq([
        Command::set("bt", e("n * 2 * (size - 1)")),
        Command::if_(
            not("rank = 0"),
            Command::seq([irecv("tt", "bt + 2 * rank - 2", "top"), isend("su", "bt + 2 * rank - 1", "s1")]),
            skip.clone(),
        ),
        Command::if_(
            not("rank = size - 1"),
            Command::seq([isend("sd", "bt + 2 * rank", "s2"), irecv("tb", "bt + 2 * rank + 1", "bot")]),
            skip.clone(),
        ),
        Command::if_(
            not("rank = 0"),
            Command::seq([Command::wait(Expr::var("tt")), Command::wait(Expr::var("su"))]),
            skip.clone(),
        ),
        Command::if_(
            not("rank = size - 1"),
            Command::seq([Command::wait(Expr::var("sd")), Command::wait(Expr::var("tb"))]),
            skip,
        ),
    ]);
    loop_steps(steps, step)
}

pub fn poisson(iters: i64) -> Model {
    Model {
        name: "poisson",
        program: halo_exchange(iters),
        spec: super::poisson::topology(iters as usize),
    }
}

pub fn heat(nt: i64) -> Model {
    Model {
        name: "heat",
        program: halo_exchange(nt),
        spec: super::heat::topology(nt as usize),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explorer::{explore, ExploreOptions, FreeBufferPolicy, Verdict};

    fn check(model: &Model, n: i64, policy: FreeBufferPolicy) {
        let resolved = model.spec.resolve(n).unwrap();
        let mut opts = ExploreOptions::default();
        opts.bounds.free_buffer_policy = policy;
        let ex = explore(&model.program, &resolved, n, &opts).unwrap();
        assert!(matches!(ex.verdict, Verdict::Ok { .. }), "{} N={n}: {:?}", model.name, ex.verdict);
        assert_eq!(ex.terminal_outcomes.len(), 1, "{} N={n}", model.name);
        assert!(ex.lemma_failures.is_empty());
    }

    #[test]
    fn convection_model_is_safe_and_confluent() {
        check(&convection(2), 3, FreeBufferPolicy::Explore);
        for n in [2, 4] {
            check(&convection(2), n, FreeBufferPolicy::Eager);
        }
    }

    #[test]
    fn halo_models_are_safe_and_confluent() {
        for n in [2, 3] {
            check(&poisson(2), n, FreeBufferPolicy::Eager);
            check(&heat(2), n, FreeBufferPolicy::Eager);
        }
    }

    #[test]
    fn models_round_trip_through_json() {
        for m in [convection(3), poisson(3), heat(3)] {
            let text = serde_json::to_string(&m.program).unwrap();
            let back: Command = serde_json::from_str(&text).unwrap();
            assert_eq!(back, m.program);
            let spec = TopologySpec::from_json(&m.spec.to_json().unwrap()).unwrap();
            assert_eq!(spec.resolve(4).unwrap().count, m.spec.resolve(4).unwrap().count);
        }
    }
}
