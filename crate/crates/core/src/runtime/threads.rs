//! One OS thread per rank, exchanging data through a shared match table.
//!
//! Sends whose payload fits in `eager_bytes` are buffered immediately and
//! complete at once; larger ones wait for the receiver (rendezvous), which is
//! the behaviour that makes badly ordered MPI programs hang only for some
//! message sizes.

use std::collections::{HashMap, HashSet};
use std::future::Future;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::{combine, Link, Op, OpResult, Payload, RuntimeError, RuntimeSpec, World};
use crate::calculus::CollectiveKind;

#[derive(Clone, Copy, Debug)]
pub struct ThreadsConfig {
    pub eager_bytes: usize,
    /// How long a rank may block in one call before the run is abandoned.
    pub timeout: Duration,
}

impl Default for ThreadsConfig {
    fn default() -> Self {
        ThreadsConfig {
            eager_bytes: 4096,
            timeout: Duration::from_secs(30),
        }
    }
}

struct Collective {
    kind: CollectiveKind,
    contributions: Vec<Option<Payload>>,
    results: Option<Vec<Option<Payload>>>,
}

#[derive(Default)]
struct Table {
    /// Rendezvous sends not yet taken by their receiver.
    pending_sends: HashMap<i64, Payload>,
    /// Buffered (eager) payloads not yet taken.
    buffered: HashMap<i64, Payload>,
    /// Sends whose payload has left the sender's hands.
    released: HashSet<i64>,
    posted_recvs: HashSet<i64>,
    collectives: HashMap<i64, Collective>,
    aborted: bool,
}

pub(crate) struct Shared {
    n: usize,
    cfg: ThreadsConfig,
    table: Mutex<Table>,
    changed: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Table> {
        self.table.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn abort(&self) {
        self.lock().aborted = true;
        self.changed.notify_all();
    }

    /// Blocks until `ready` yields a value, the run is aborted, or the
    /// timeout passes.
    fn block_until<R>(
        &self,
        rank: i64,
        what: impl Fn() -> String,
        mut ready: impl FnMut(&mut Table) -> Option<R>,
    ) -> Result<R, RuntimeError> {
        let deadline = Instant::now() + self.cfg.timeout;
        let mut t = self.lock();
        loop {
            if t.aborted {
                return Err(RuntimeError::Aborted { rank });
            }
            if let Some(r) = ready(&mut t) {
                drop(t);
                self.changed.notify_all();
                return Ok(r);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(RuntimeError::Timeout {
                    rank,
                    waiting_for: what(),
                });
            }
            t = self
                .changed
                .wait_timeout(t, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }

    pub(crate) fn perform(&self, rank: i64, op: Op) -> Result<OpResult, RuntimeError> {
        match op {
            Op::Send { tag, payload } => {
                let mut t = self.lock();
                if payload.0.len() * std::mem::size_of::<f64>() <= self.cfg.eager_bytes {
                    t.buffered.insert(tag, payload);
                    t.released.insert(tag);
                } else {
                    t.pending_sends.insert(tag, payload);
                }
                drop(t);
                self.changed.notify_all();
                Ok(OpResult::Done)
            }
            Op::Recv { tag } => {
                self.lock().posted_recvs.insert(tag);
                Ok(OpResult::Done)
            }
            Op::WaitSend { tag } => {
                self.block_until(rank, || format!("send {tag} to be taken"), |t| t.released.remove(&tag).then_some(()))?;
                Ok(OpResult::Done)
            }
            Op::WaitRecv { tag } => {
                let p = self.block_until(
                    rank,
                    || format!("message {tag}"),
                    |t| {
                        if let Some(p) = t.buffered.remove(&tag) {
                            t.posted_recvs.remove(&tag);
                            return Some(p);
                        }
                        let p = t.pending_sends.remove(&tag)?;
                        t.released.insert(tag);
                        t.posted_recvs.remove(&tag);
                        Some(p)
                    },
                )?;
                Ok(OpResult::Payload(p))
            }
            Op::Collective {
                index,
                kind,
                contribution,
            } => {
                let n = self.n;
                let r = rank as usize;
                {
                    let mut t = self.lock();
                    let c = t.collectives.entry(index).or_insert_with(|| Collective {
                        kind,
                        contributions: vec![None; n],
                        results: None,
                    });
                    if c.kind != kind {
                        return Err(RuntimeError::Protocol(format!(
                            "collective {index}: ranks disagree on the operation ({:?} vs {kind:?})",
                            c.kind
                        )));
                    }
                    c.contributions[r] = Some(contribution);
                    if c.contributions.iter().all(Option::is_some) {
                        let all: Vec<Payload> = c.contributions.iter_mut().map(|p| p.take().unwrap()).collect();
                        c.results = Some(combine(kind, &all).into_iter().map(Some).collect());
                    }
                }
                self.changed.notify_all();
                let result = self.block_until(
                    rank,
                    || format!("collective {index}"),
                    |t| {
                        let c = t.collectives.get_mut(&index)?;
                        let mine = c.results.as_mut()?[r].take()?;
                        if c.results.as_ref().is_some_and(|rs| rs.iter().all(Option::is_none)) {
                            t.collectives.remove(&index);
                        }
                        Some(mine)
                    },
                )?;
                Ok(OpResult::Payload(result))
            }
        }
    }
}

/// Runs `body` on `n` threads and returns the per-rank results. If any rank
/// fails, the others are woken and stopped, and the first genuine error (by
/// rank order) is returned.
pub fn run_threads<T, F, Fut>(n: i64, spec: Arc<RuntimeSpec>, cfg: ThreadsConfig, body: F) -> Result<Vec<T>, RuntimeError>
where
    T: Send,
    F: Fn(World) -> Fut + Sync,
    Fut: Future<Output = Result<T, RuntimeError>>,
{
    let resolved = Arc::new(spec.prepare(n)?);
    let shared = Arc::new(Shared {
        n: n as usize,
        cfg,
        table: Mutex::new(Table::default()),
        changed: Condvar::new(),
    });
    let results: Vec<Result<T, RuntimeError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .map(|rank| {
                let (spec, resolved, shared, body) = (spec.clone(), resolved.clone(), shared.clone(), &body);
                scope.spawn(move || {
                    let world = World::new(rank, spec, resolved, Link::Threads(shared.clone()));
                    let out = futures::executor::block_on(body(world));
                    if out.is_err() {
                        shared.abort();
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(rank, h)| {
                h.join().unwrap_or_else(|panic| {
                    shared.abort();
                    let message = panic
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| panic.downcast_ref::<String>().cloned())
                        .unwrap_or_default();
                    Err(RuntimeError::Panicked {
                        rank: rank as i64,
                        message,
                    })
                })
            })
            .collect()
    });
    if results.iter().any(Result::is_err) {
        let mut errors: Vec<RuntimeError> = results.into_iter().filter_map(Result::err).collect();
        let primary = errors.iter().position(|e| !e.is_infrastructure()).unwrap_or(0);
        return Err(errors.swap_remove(primary));
    }
    let t = shared.lock();
    let mut leftover: Vec<String> = t
        .pending_sends
        .keys()
        .map(|k| format!("untaken send {k}"))
        .chain(t.buffered.keys().map(|k| format!("undelivered message {k}")))
        .collect();
    leftover.sort();
    if !leftover.is_empty() {
        return Err(RuntimeError::Leftover {
            rank: -1,
            detail: leftover.join(", "),
        });
    }
    drop(t);
    Ok(results.into_iter().map(|r| r.expect("checked")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrays::{LockedArray1D, Region};
    use crate::calculus::{SpecFn, TopologySpec};

    fn ring_spec(len: usize) -> Arc<RuntimeSpec> {
        // Every rank sends `len` values to its right neighbour, in tag order.
        let topo = TopologySpec {
            sender: SpecFn::expr("tag"),
            receiver: SpecFn::expr("(tag + 1) - ((tag + 1) div size) * size"),
            message: SpecFn::expr("tag"),
            barrier_tag: SpecFn::expr("index * size"),
            barrier_count: SpecFn::expr("1"),
            collectives: Default::default(),
        };
        Arc::new(RuntimeSpec::new(topo).with_message(move |tag, _| Some(vec![tag as f64; len])))
    }

    /// Rank 0 sends, then receives; everyone else receives, then sends.
    /// Deadlock-free for any message size.
    async fn ring(mut w: World, len: usize) -> Result<f64, RuntimeError> {
        let r = w.rank();
        let n = w.size();
        let left = (r + n - 1) % n;
        let mut out = LockedArray1D::from_vec(vec![r as f64; len]);
        let mut inn = LockedArray1D::zeros(len);
        let all = Region::range(0, len);
        if r == 0 {
            let s = w.isend(&mut out, all, (r + 1) % n, r).await?;
            w.wait(s, &mut out).await?;
            w.recv(&mut inn, all, left).await?;
        } else {
            let q = w.irecv(&mut inn, all, left).await?;
            w.wait(q, &mut inn).await?;
            w.send(&mut out, all, (r + 1) % n, r).await?;
        }
        w.barrier().await?;
        w.finish()?;
        Ok(inn.get(0).unwrap())
    }

    #[test]
    fn ring_completes_eager_and_rendezvous() {
        for eager_bytes in [0, 1 << 20] {
            let cfg = ThreadsConfig {
                eager_bytes,
                timeout: Duration::from_secs(10),
            };
            let got = run_threads(4, ring_spec(8), cfg, |w| ring(w, 8)).unwrap();
            assert_eq!(got, [3.0, 0.0, 1.0, 2.0]);
        }
    }

    #[test]
    fn failure_on_one_rank_stops_the_rest() {
        let cfg = ThreadsConfig {
            eager_bytes: 0,
            timeout: Duration::from_secs(10),
        };
        let err = run_threads(3, ring_spec(2), cfg, |mut w: World| async move {
            if w.rank() == 1 {
                // Wrong destination for tag 1.
                let mut b = LockedArray1D::from_vec(vec![1.0, 1.0]);
                w.send(&mut b, Region::range(0, 2), 0, 1).await?;
            }
            ring(w, 2).await
        })
        .unwrap_err();
        assert!(matches!(err, RuntimeError::Precondition(_)), "{err}");
    }

    #[test]
    fn blocked_rank_times_out() {
        let cfg = ThreadsConfig {
            eager_bytes: 0,
            timeout: Duration::from_millis(200),
        };
        let err = run_threads(2, ring_spec(1), cfg, |mut w: World| async move {
            if w.rank() == 1 {
                let mut b = LockedArray1D::zeros(1);
                w.recv(&mut b, Region::range(0, 1), 0).await?;
            }
            Ok(())
        })
        .unwrap_err();
        assert!(matches!(err, RuntimeError::Timeout { rank: 1, .. }), "{err}");
    }
}
