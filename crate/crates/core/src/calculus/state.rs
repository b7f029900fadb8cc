use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::command::Command;
use super::expr::Env;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProcState {
    pub cmd: Command,
    pub env: Env,
    /// Largest tag used by a completed `wait`; starts at -1.
    pub last_tag: i64,
    /// Barriers passed so far.
    pub barriers: i64,
}

impl ProcState {
    pub fn rank(&self) -> i64 {
        self.env.get("rank").copied().unwrap_or(-1)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GlobalState {
    pub procs: Vec<ProcState>,
    /// B_r: tag -> destination variable.
    pub recv_buf: BTreeMap<i64, String>,
    /// B_s: tag -> source variable.
    pub send_buf: BTreeMap<i64, String>,
    /// B_m: tag -> payload.
    pub msg_buf: BTreeMap<i64, i64>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum StateError {
    #[error("at least two processes are required, got {0}")]
    TooFewProcesses(i64),
}

/// Every rank runs `program; barrier` with only `rank` and `size` bound.
pub fn initial_state(program: &Command, n: i64) -> Result<GlobalState, StateError> {
    if n < 2 {
        return Err(StateError::TooFewProcesses(n));
    }
    let cmd = Command::seq2(program.clone(), Command::Barrier);
    let procs = (0..n)
        .map(|i| ProcState {
            cmd: cmd.clone(),
            env: [("rank".to_owned(), i), ("size".to_owned(), n)]
                .into_iter()
                .collect(),
            last_tag: -1,
            barriers: 0,
        })
        .collect();
    Ok(GlobalState {
        procs,
        ..GlobalState::default()
    })
}

impl GlobalState {
    pub fn size(&self) -> i64 {
        self.procs.len() as i64
    }

    pub fn is_terminated(&self) -> bool {
        self.procs.iter().all(|p| p.cmd.is_terminated())
    }
}

fn fmt_map<V: fmt::Display>(f: &mut fmt::Formatter<'_>, m: &BTreeMap<i64, V>) -> fmt::Result {
    if m.is_empty() {
        return f.write_str("{}");
    }
    f.write_str("{")?;
    for (i, (k, v)) in m.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{k} -> {v}")?;
    }
    f.write_str("}")
}

/// Box layout: one line per process, then the three buffers.
impl fmt::Display for GlobalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.procs.iter().enumerate() {
            let env: Vec<String> = p
                .env
                .iter()
                .filter(|(k, _)| k.as_str() != "rank" && k.as_str() != "size")
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            writeln!(
                f,
                "  c{i} = {}   [t={} b={}{}{}]",
                p.cmd,
                p.last_tag,
                p.barriers,
                if env.is_empty() { "" } else { " " },
                env.join(" ")
            )?;
        }
        f.write_str("  B_r = ")?;
        fmt_map(f, &self.recv_buf)?;
        f.write_str("\n  B_s = ")?;
        fmt_map(f, &self.send_buf)?;
        f.write_str("\n  B_m = ")?;
        fmt_map(f, &self.msg_buf)?;
        writeln!(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_state_of_skip() {
        let s = initial_state(&Command::Skip, 2).unwrap();
        assert_eq!(s.procs.len(), 2);
        for (i, p) in s.procs.iter().enumerate() {
            assert_eq!(p.cmd, Command::seq2(Command::Skip, Command::Barrier));
            assert_eq!(p.last_tag, -1);
            assert_eq!(p.barriers, 0);
            assert_eq!(p.rank(), i as i64);
            assert_eq!(p.env["size"], 2);
        }
        assert!(s.recv_buf.is_empty() && s.send_buf.is_empty() && s.msg_buf.is_empty());
    }

    #[test]
    fn single_process_is_rejected() {
        assert_eq!(
            initial_state(&Command::Skip, 1),
            Err(StateError::TooFewProcesses(1))
        );
    }

    #[test]
    fn processes_differ_only_in_rank() {
        let s = initial_state(&Command::Barrier, 4).unwrap();
        for p in &s.procs[1..] {
            let mut a = p.clone();
            let mut b = s.procs[0].clone();
            a.env.remove("rank");
            b.env.remove("rank");
            assert_eq!(a, b);
        }
    }
}
