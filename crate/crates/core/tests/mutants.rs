use mpicheck::corpus::MUTANTS;
use mpicheck::explorer::{explore, ExploreOptions, Verdict};
use mpicheck::monitor::{check_state, monitor_trace};
use mpicheck::par::Parallelism;
use mpicheck::semantics::{enabled_transitions, is_deadlock, Rule};

fn opts(monitor: bool) -> ExploreOptions {
    ExploreOptions {
        monitor,
        parallelism: Parallelism::Sequential,
        ..ExploreOptions::default()
    }
}

#[test]
fn every_mutant_is_flagged_by_the_monitor() {
    for m in MUTANTS {
        let spec = m.spec().resolve(2).unwrap();
        let r = explore(&m.program(), &spec, 2, &opts(true)).unwrap();
        let Verdict::ViolationFound { violations, trace } = &r.verdict else {
            panic!("{}: {:?}", m.name, r.verdict.name())
        };
        assert_eq!(violations[0].axiom, m.axiom, "{}: {violations:?}", m.name);
        let replayed = monitor_trace(trace, &spec).unwrap();
        assert!(!replayed.is_empty(), "{}", m.name);
    }
}

#[test]
fn deadlocking_mutants_deadlock_without_the_monitor() {
    let mut classified = 0;
    for m in MUTANTS {
        let spec = m.spec().resolve(2).unwrap();
        let r = explore(&m.program(), &spec, 2, &opts(false)).unwrap();
        match (&r.verdict, m.deadlocks) {
            (Verdict::DeadlockFound { trace }, true) => {
                let last = trace.final_state(&spec).unwrap();
                let enabled = enabled_transitions(&last, &spec).unwrap();
                assert!(enabled.iter().all(|t| t.rule == Rule::FreeBuffer), "{}", m.name);
                // The blocked-process classification is only exact on states
                // the monitor accepts.
                // A stuck state outside the blocked-process classes must at
                // least be one the monitor rejects.
                if is_deadlock(&last, &spec) {
                    classified += 1;
                } else {
                    assert!(!check_state(&last, &spec).is_empty(), "{}\n{last}", m.name);
                }
            }
            (Verdict::Ok { .. }, false) => {}
            (v, _) => panic!("{}: {} (expected deadlock = {})", m.name, v.name(), m.deadlocks),
        }
    }
    assert!(classified >= 3, "{classified}");
}

#[test]
fn parallel_and_sequential_agree_on_mutants() {
    for m in MUTANTS {
        let spec = m.spec().resolve(2).unwrap();
        for monitor in [true, false] {
            let a = explore(&m.program(), &spec, 2, &opts(monitor)).unwrap();
            let mut o = opts(monitor);
            o.parallelism = Parallelism::Auto;
            let b = explore(&m.program(), &spec, 2, &o).unwrap();
            assert_eq!(a.verdict, b.verdict, "{}", m.name);
        }
    }
}
