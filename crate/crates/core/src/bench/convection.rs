//! 1D linear convection with the upwind scheme, split into contiguous
//! stripes. Each step rank `r` hands its rightmost value to rank `r + 1`.

use std::sync::Arc;

use serde::Serialize;

use super::{arr, divisible, BenchError, Solution};
use crate::arrays::{Buffer, LockedArray1D, Region};
use crate::calculus::{CollectiveKind, SpecFn, TopologySpec};
use crate::runtime::{RuntimeError, RuntimeSpec, World};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvectionConfig {
    pub nx: usize,
    pub nt: usize,
    pub dx: f64,
    pub dt: f64,
    pub c: f64,
}

impl Default for ConvectionConfig {
    fn default() -> Self {
        ConvectionConfig {
            nx: 40,
            nt: 25,
            dx: 0.05,
            dt: 0.025,
            c: 1.0,
        }
    }
}

impl ConvectionConfig {
    /// A domain of length 2 resolved with `nx` points, at Courant number 0.5.
    pub fn with_size(nx: usize, nt: usize) -> Self {
        let dx = 2.0 / nx as f64;
        ConvectionConfig {
            nx,
            nt,
            dx,
            dt: dx / 2.0,
            c: 1.0,
        }
    }

    pub fn courant(&self) -> f64 {
        self.c * self.dt / self.dx
    }

    pub fn validate(&self, n: i64) -> Result<(), BenchError> {
        if self.nx == 0 {
            return Err(BenchError::Config("nx must be positive".into()));
        }
        if !(self.dx > 0.0 && self.dt > 0.0) {
            return Err(BenchError::Config("dx and dt must be positive".into()));
        }
        if self.courant() > 1.0 {
            return Err(BenchError::Config(format!(
                "CFL number c*dt/dx = {} exceeds 1",
                self.courant()
            )));
        }
        divisible("nx", self.nx, n)?;
        Ok(())
    }

    /// Square wave: 2 on x in [0.5, 1], 1 elsewhere, with x = i*dx.
    pub fn initial(&self) -> Vec<f64> {
        let lo = (0.5 / self.dx).round() as usize;
        let hi = (1.0 / self.dx).round() as usize;
        (0..self.nx).map(|i| if (lo..=hi).contains(&i) { 2.0 } else { 1.0 }).collect()
    }
}

pub fn upwind_step(u: f64, u_left: f64, cfg: &ConvectionConfig) -> f64 {
    u - cfg.c * cfg.dt / cfg.dx * (u - u_left)
}

/// Grid at the start of every step, plus the final grid: `nt + 1` entries.
pub fn history(cfg: &ConvectionConfig) -> Vec<Vec<f64>> {
    let mut u = cfg.initial();
    let mut out = Vec::with_capacity(cfg.nt + 1);
    for _ in 0..cfg.nt {
        let un = u.clone();
        for i in 1..u.len() {
            u[i] = upwind_step(un[i], un[i - 1], cfg);
        }
        out.push(un);
    }
    out.push(u);
    out
}

pub fn convection_sequential(cfg: &ConvectionConfig) -> Vec<f64> {
    history(cfg).pop().expect("at least the initial grid")
}

pub fn sequential_solution(cfg: &ConvectionConfig) -> Solution {
    Solution {
        rows: 1,
        cols: cfg.nx,
        data: convection_sequential(cfg),
        residual: None,
    }
}

/// `min(index, steps)` as an expression; there is no comparison operator.
pub(crate) fn clamp_index(steps: usize) -> String {
    format!("(index - (index div {}) * (index - {steps}))", steps + 1)
}

/// Tags `n*(N-1) + r` carry rank `r`'s rightmost value to rank `r + 1`
/// during step `n`; one barrier per step and a final gather at rank 0.
/// The gather's interval is empty: barrier tags stop growing after step
/// `nt`, since no messages follow the last barrier.
pub fn topology(nt: usize) -> TopologySpec {
    TopologySpec {
        sender: SpecFn::expr("tag - (tag div (size - 1)) * (size - 1)"),
        receiver: SpecFn::expr("tag - (tag div (size - 1)) * (size - 1) + 1"),
        message: SpecFn::expr("tag * 2 + 1"),
        barrier_tag: SpecFn::expr(&format!("{} * (size - 1)", clamp_index(nt))),
        barrier_count: SpecFn::Expr(crate::calculus::Expr::int(nt as i64 + 1)),
        collectives: [(nt as i64, CollectiveKind::Gather { root: 0 })].into(),
    }
}

pub fn runtime_spec(cfg: &ConvectionConfig, _n: i64) -> RuntimeSpec {
    let hist = Arc::new(history(cfg));
    let nx = cfg.nx as i64;
    let nt = cfg.nt as i64;
    let h1 = hist.clone();
    RuntimeSpec::new(topology(cfg.nt))
        .with_message(move |tag, n| {
            if n < 2 || tag < 0 {
                return None;
            }
            let (step, r) = (tag / (n - 1), tag % (n - 1));
            let m = nx / n;
            let row = h1.get(step as usize)?;
            row.get(((r + 1) * m - 1) as usize).map(|v| vec![*v])
        })
        .with_segments(move |index, rank, n| {
            if index != nt {
                return None;
            }
            let m = (nx / n) as usize;
            let r = rank as usize;
            hist.last().map(|u| u[r * m..(r + 1) * m].to_vec())
        })
}

/// Rank program: update the interior of the stripe, pass the old rightmost
/// value right, patch the leftmost value with the received one.
pub async fn convection_parallel(mut w: World, cfg: ConvectionConfig) -> Result<Option<Solution>, RuntimeError> {
    let rank = w.rank();
    let n = w.size();
    let m = cfg.nx / n as usize;
    let start = rank as usize * m;
    let init = cfg.initial();
    let mut u = LockedArray1D::from_vec(init[start..start + m].to_vec());
    let head = Region::range(0, 1);
    let tail = Region::range(m - 1, 1);
    for step in 0..cfg.nt {
        let bt = (step as i64) * (n - 1);
        let mut un = arr(rank, u.copy())?;
        {
            let (new, old) = (arr(rank, u.as_mut_slice())?, arr(rank, un.as_slice())?);
            for i in 1..m {
                new[i] = upwind_step(old[i], old[i - 1], &cfg);
            }
        }
        if n > 1 {
            if rank == 0 {
                w.send(&mut un, tail, rank + 1, bt).await?;
            } else if rank == n - 1 {
                w.recv(&mut u, head, bt + rank - 1).await?;
                let v = upwind_step(arr(rank, un.get(0))?, arr(rank, u.get(0))?, &cfg);
                arr(rank, u.set(0, v))?;
            } else {
                let req = w.isend(&mut un, tail, rank + 1, bt + rank).await?;
                w.recv(&mut u, head, bt + rank - 1).await?;
                let v = upwind_step(arr(rank, un.get(0))?, arr(rank, u.get(0))?, &cfg);
                arr(rank, u.set(0, v))?;
                w.wait(req, &mut un).await?;
            }
        }
        w.barrier().await?;
    }
    let all = Region::range(0, m);
    let out = if rank == 0 {
        let mut out = LockedArray1D::zeros(cfg.nx);
        w.gather(&u, all, Some((&mut out as &mut dyn Buffer, Region::range(0, cfg.nx))), 0)
            .await?;
        Some(Solution {
            rows: 1,
            cols: cfg.nx,
            data: arr(rank, out.to_vec())?,
            residual: None,
        })
    } else {
        w.gather(&u, all, None, 0).await?;
        None
    };
    w.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::Benchmark;
    use crate::calculus::validate_topology;
    use crate::runtime::sim::{FirstScheduler, RandomScheduler};

    #[test]
    fn upwind_examples() {
        let cfg = ConvectionConfig::default();
        assert_eq!(cfg.courant(), 0.5);
        assert_eq!(upwind_step(2.0, 2.0, &cfg), 2.0);
        assert_eq!(upwind_step(2.0, 0.0, &cfg), 1.0);
    }

    #[test]
    fn initial_condition_is_a_square_wave() {
        let u = ConvectionConfig::default().initial();
        assert_eq!(u.len(), 40);
        assert_eq!(u.iter().filter(|&&v| v == 2.0).count(), 11);
        assert_eq!((u[9], u[10], u[20], u[21]), (1.0, 2.0, 2.0, 1.0));
    }

    #[test]
    fn wave_moves_right_and_stays_bounded() {
        let u = convection_sequential(&ConvectionConfig::default());
        assert_eq!(u[0], 1.0);
        assert!(u.iter().all(|&v| (1.0..=2.0).contains(&v)));
        let peak = u.iter().cloned().enumerate().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
        assert!(peak > 20, "peak at {peak}");
    }

    #[test]
    fn topology_is_valid_for_small_counts() {
        assert!(validate_topology(&topology(25), 2..=8).is_empty());
    }

    #[test]
    fn parallel_equals_sequential_bitwise() {
        let bench = Benchmark::Convection(ConvectionConfig::default());
        let seq = bench.sequential();
        for n in [1, 2, 4, 5, 8] {
            let par = bench.run_sim(n, &mut RandomScheduler::new(n as u64)).unwrap();
            assert_eq!(par.digest(), seq.digest(), "N = {n}");
        }
        let par = bench.run_sim(4, &mut FirstScheduler).unwrap();
        assert_eq!(par.data, seq.data);
    }

    #[test]
    fn non_divisible_domain_is_rejected() {
        let bench = Benchmark::Convection(ConvectionConfig::default());
        assert!(matches!(bench.runtime_spec(3), Err(BenchError::Config(_))));
        let bad = ConvectionConfig {
            dt: 0.1,
            ..ConvectionConfig::default()
        };
        assert!(bad.validate(2).is_err());
    }

    #[test]
    fn tiny_instance_is_schedule_confluent() {
        let bench = Benchmark::Convection(ConvectionConfig::with_size(8, 2));
        let ex = bench.explore_sim(2, Default::default()).unwrap();
        assert!(ex.exhaustive);
        assert_eq!(ex.outcomes.len(), 1);
    }
}
