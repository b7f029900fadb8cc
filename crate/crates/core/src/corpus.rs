//! Programs and specs shipped with the crate, parsed from the JSON files in
//! `corpus/`.

use crate::calculus::{Command, TopologySpec};
use crate::monitor::Axiom;

fn program(src: &str) -> Command {
    serde_json::from_str(src).expect("corpus program parses")
}

fn spec(src: &str) -> TopologySpec {
    TopologySpec::from_json(src).expect("corpus spec parses")
}

pub const SENDRECV_PROGRAM: &str = include_str!("../corpus/sendrecv.program.json");
pub const SENDRECV_SPEC: &str = include_str!("../corpus/sendrecv.spec.json");
pub const DEADLOCK_PROGRAM: &str = include_str!("../corpus/deadlock.program.json");
pub const DEADLOCK_SPEC: &str = include_str!("../corpus/deadlock.spec.json");
pub const PINGPONG_PROGRAM: &str = include_str!("../corpus/pingpong.program.json");
pub const PINGPONG_SPEC: &str = include_str!("../corpus/pingpong.spec.json");

/// `set x 5; if rank = 0 { isend 0 x } { irecv 0 x }; wait 0`
pub fn sendrecv_program() -> Command {
    program(SENDRECV_PROGRAM)
}

/// Tag 0 goes from rank 0 to rank 1 carrying 5; one barrier.
pub fn sendrecv_spec() -> TopologySpec {
    spec(SENDRECV_SPEC)
}

/// Rank 0 waits for tag 0, which rank 1 is meant to send but never does.
pub fn deadlock_program() -> Command {
    program(DEADLOCK_PROGRAM)
}

pub fn deadlock_spec() -> TopologySpec {
    spec(DEADLOCK_SPEC)
}

/// Two ranks trading four messages across two barrier intervals. The
/// well-behaved base for the mutants.
pub fn pingpong_program() -> Command {
    program(PINGPONG_PROGRAM)
}

pub fn pingpong_spec() -> TopologySpec {
    spec(PINGPONG_SPEC)
}

/// A deliberately broken variant of a correct program.
#[derive(Clone, Copy, Debug)]
pub struct Mutant {
    pub name: &'static str,
    pub program: &'static str,
    pub spec: &'static str,
    /// The axiom the monitor is expected to flag first.
    pub axiom: Axiom,
    /// Whether some schedule reaches a stuck state.
    pub deadlocks: bool,
}

impl Mutant {
    pub fn program(&self) -> Command {
        program(self.program)
    }

    pub fn spec(&self) -> TopologySpec {
        spec(self.spec)
    }
}

macro_rules! mutant {
    ($name:literal, $axiom:ident, $deadlocks:expr) => {
        Mutant {
            name: $name,
            program: include_str!(concat!("../corpus/mutants/", $name, ".program.json")),
            spec: PINGPONG_SPEC,
            axiom: Axiom::$axiom,
            deadlocks: $deadlocks,
        }
    };
}

pub const MUTANTS: &[Mutant] = &[
    mutant!("swapped_order", AtWait, true),
    mutant!("skipped_wait", AtWait, true),
    mutant!("wrong_rank_send", AtSend, true),
    mutant!("wrong_payload", AtSend, false),
    mutant!("barrier_before_wait", AtBarrier, true),
    mutant!("mismatched_barriers", AtBarrier, true),
    mutant!("set_pending", AtSet, false),
    mutant!("read_pending", AtRead, false),
    mutant!("extra_barriers", AtBarrier, false),
    Mutant {
        name: "never_sent",
        program: DEADLOCK_PROGRAM,
        spec: DEADLOCK_SPEC,
        axiom: Axiom::AtBarrier,
        deadlocks: true,
    },
];

pub fn mutant(name: &str) -> Option<&'static Mutant> {
    MUTANTS.iter().find(|m| m.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::validate_topology;

    #[test]
    fn everything_parses_and_validates() {
        for s in [sendrecv_spec(), deadlock_spec(), pingpong_spec()] {
            assert_eq!(validate_topology(&s, 2..=2), vec![]);
        }
        sendrecv_program();
        deadlock_program();
        pingpong_program();
        for m in MUTANTS {
            m.program();
            m.spec();
        }
    }
}
