//! Stencil benchmarks: linear convection (upwind), Poisson (Jacobi) and heat
//! diffusion (RK4). Each has a sequential reference solver, a rank program
//! over [`crate::runtime::World`], a topology whose payload expectations are
//! taken from the reference solver's history, and a calculus model with the
//! same communication skeleton.

pub mod convection;
pub mod heat;
pub mod models;
pub mod poisson;

use std::future::Future;
use std::pin::Pin;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::digest::Digest;
use crate::runtime::sim::{self, ExhaustiveLimits, Scheduler, SimExploration, SimFailure};
use crate::runtime::threads::{self, ThreadsConfig};
use crate::runtime::{RuntimeError, RuntimeSpec, World};

pub use convection::ConvectionConfig;
pub use heat::HeatConfig;
pub use poisson::PoissonConfig;

#[derive(Clone, Debug, Error, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: (usize, usize), right: (usize, usize) },
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Sim(#[from] SimFailure),
    #[error("no rank returned the gathered solution")]
    NoRoot,
}

/// A gathered solution: a `rows x cols` grid (one row for 1D problems) and,
/// for Poisson, the final residual.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Solution {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub residual: Option<f64>,
}

impl Solution {
    /// Bit-exact digest of grid and residual.
    pub fn digest(&self) -> Digest {
        let bits: Vec<u64> = self.data.iter().map(|v| v.to_bits()).collect();
        Digest::of(&(self.rows, self.cols, bits, self.residual.map(f64::to_bits)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "mode", content = "epsilon", rename_all = "snake_case")]
pub enum Tolerance {
    Exact,
    RelTol(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub mode: Tolerance,
    pub passed: bool,
    /// Largest deviation: absolute bit-level mismatch count for `Exact` is
    /// not meaningful, so this is always the largest relative deviation
    /// (absolute where the reference is zero).
    pub max_deviation: f64,
    pub first_mismatch: Option<usize>,
    pub compared: usize,
}

fn deviation(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if b == 0.0 {
        d
    } else {
        d / b.abs()
    }
}

/// Compares a parallel result against the sequential one.
pub fn equivalence_check(
    parallel: &[f64],
    parallel_shape: (usize, usize),
    sequential: &[f64],
    sequential_shape: (usize, usize),
    mode: Tolerance,
) -> Result<EquivalenceReport, BenchError> {
    if parallel_shape != sequential_shape || parallel.len() != sequential.len() {
        return Err(BenchError::ShapeMismatch {
            left: parallel_shape,
            right: sequential_shape,
        });
    }
    let mut max_deviation: f64 = 0.0;
    let mut first_mismatch = None;
    for (i, (&a, &b)) in parallel.iter().zip(sequential).enumerate() {
        let dev = deviation(a, b);
        if dev > max_deviation || dev.is_nan() {
            max_deviation = if dev.is_nan() { f64::INFINITY } else { dev };
        }
        let ok = match mode {
            Tolerance::Exact => a.to_bits() == b.to_bits(),
            Tolerance::RelTol(eps) => dev <= eps,
        };
        if !ok && first_mismatch.is_none() {
            first_mismatch = Some(i);
        }
    }
    Ok(EquivalenceReport {
        mode,
        passed: first_mismatch.is_none(),
        max_deviation,
        first_mismatch,
        compared: parallel.len(),
    })
}

/// Equivalence of a whole benchmark result: the grid, and the residual when
/// there is one.
#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub benchmark: &'static str,
    pub ranks: i64,
    pub grid: EquivalenceReport,
    pub residual: Option<EquivalenceReport>,
}

impl BenchReport {
    pub fn passed(&self) -> bool {
        self.grid.passed && self.residual.as_ref().is_none_or(|r| r.passed)
    }
}

/// Tolerance for the Poisson residual, whose reduction order differs
/// between the sequential sum and the per-stripe fold.
pub const RESIDUAL_RTOL: f64 = 1e-9;

pub fn compare(name: &'static str, ranks: i64, parallel: &Solution, sequential: &Solution) -> Result<BenchReport, BenchError> {
    let grid = equivalence_check(
        &parallel.data,
        (parallel.rows, parallel.cols),
        &sequential.data,
        (sequential.rows, sequential.cols),
        Tolerance::Exact,
    )?;
    let residual = match (parallel.residual, sequential.residual) {
        (Some(p), Some(s)) => Some(equivalence_check(&[p], (1, 1), &[s], (1, 1), Tolerance::RelTol(RESIDUAL_RTOL))?),
        (None, None) => None,
        _ => return Err(BenchError::ShapeMismatch { left: (1, 1), right: (0, 0) }),
    };
    Ok(BenchReport {
        benchmark: name,
        ranks,
        grid,
        residual,
    })
}

pub type RankFuture = Pin<Box<dyn Future<Output = Result<Option<Solution>, RuntimeError>>>>;

/// One configured benchmark.
#[derive(Clone, Debug)]
pub enum Benchmark {
    Convection(ConvectionConfig),
    Poisson(PoissonConfig),
    Heat(HeatConfig),
}

impl Benchmark {
    pub fn name(&self) -> &'static str {
        match self {
            Benchmark::Convection(_) => "convection",
            Benchmark::Poisson(_) => "poisson",
            Benchmark::Heat(_) => "heat",
        }
    }

    /// Default sizes: convection 40 points / 25 steps, Poisson 64x64 / 100
    /// iterations, heat 32x32 / 10 steps.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "convection" => Some(Benchmark::Convection(ConvectionConfig::default())),
            "poisson" => Some(Benchmark::Poisson(PoissonConfig::default())),
            "heat" => Some(Benchmark::Heat(HeatConfig::default())),
            _ => None,
        }
    }

    pub fn validate(&self, n: i64) -> Result<(), BenchError> {
        match self {
            Benchmark::Convection(c) => c.validate(n),
            Benchmark::Poisson(c) => c.validate(n),
            Benchmark::Heat(c) => c.validate(n),
        }
    }

    pub fn sequential(&self) -> Solution {
        match self {
            Benchmark::Convection(c) => convection::sequential_solution(c),
            Benchmark::Poisson(c) => poisson::sequential_solution(c),
            Benchmark::Heat(c) => heat::sequential_solution(c),
        }
    }

    /// Topology and payload expectations for `n` ranks.
    pub fn runtime_spec(&self, n: i64) -> Result<RuntimeSpec, BenchError> {
        self.validate(n)?;
        Ok(match self {
            Benchmark::Convection(c) => convection::runtime_spec(c, n),
            Benchmark::Poisson(c) => poisson::runtime_spec(c, n),
            Benchmark::Heat(c) => heat::runtime_spec(c, n),
        })
    }

    /// The rank program.
    pub fn rank(&self, w: World) -> RankFuture {
        match self.clone() {
            Benchmark::Convection(c) => Box::pin(convection::convection_parallel(w, c)),
            Benchmark::Poisson(c) => Box::pin(poisson::poisson_parallel(w, c)),
            Benchmark::Heat(c) => Box::pin(heat::heat_parallel(w, c)),
        }
    }

    pub fn run_sim(&self, n: i64, sched: &mut dyn Scheduler) -> Result<Solution, BenchError> {
        self.run_sim_with(Arc::new(self.runtime_spec(n)?), n, sched)
    }

    /// Like [`Benchmark::run_sim`] with a spec built once by the caller,
    /// for running many schedules.
    pub fn run_sim_with(&self, spec: Arc<RuntimeSpec>, n: i64, sched: &mut dyn Scheduler) -> Result<Solution, BenchError> {
        let run = sim::run_sim(n, spec, sched, |w| self.rank(w))?;
        root_output(run.outputs.unwrap_or_default())
    }

    pub fn run_threads(&self, n: i64, cfg: ThreadsConfig) -> Result<Solution, BenchError> {
        let spec = Arc::new(self.runtime_spec(n)?);
        let outputs = threads::run_threads(n, spec, cfg, |w| self.rank(w))?;
        root_output(outputs)
    }

    /// Every distinct schedule of the simulator, deduplicated by state.
    pub fn explore_sim(&self, n: i64, limits: ExhaustiveLimits) -> Result<SimExploration, BenchError> {
        let spec = Arc::new(self.runtime_spec(n)?);
        let outcome = |outs: &[Option<Solution>]| {
            Digest::of(&outs.iter().map(|o| o.as_ref().map(Solution::digest)).collect::<Vec<_>>())
        };
        Ok(sim::explore_sim(n, spec, |w| self.rank(w), outcome, limits)?)
    }

    /// Calculus model with the same tag layout, for `n` ranks.
    pub fn calculus_model(&self) -> models::Model {
        match self {
            Benchmark::Convection(c) => models::convection(c.nt as i64),
            Benchmark::Poisson(c) => models::poisson(c.iters as i64),
            Benchmark::Heat(c) => models::heat(c.nt as i64),
        }
    }
}

fn root_output(outputs: Vec<Option<Solution>>) -> Result<Solution, BenchError> {
    outputs.into_iter().next().flatten().ok_or(BenchError::NoRoot)
}

/// Wraps an array error from rank code.
pub(crate) fn arr<T>(rank: i64, r: Result<T, crate::arrays::ArrayError>) -> Result<T, RuntimeError> {
    r.map_err(|source| RuntimeError::Array { rank, source })
}

fn divisible(what: &str, size: usize, n: i64) -> Result<usize, BenchError> {
    if n < 1 {
        return Err(BenchError::Config(format!("need at least one rank, got {n}")));
    }
    let n = n as usize;
    if size % n != 0 {
        return Err(BenchError::Config(format!("{what} = {size} is not divisible by {n} ranks")));
    }
    Ok(size / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equivalence_modes() {
        let a = [1.0, 2.0, 3.0];
        let r = equivalence_check(&a, (1, 3), &a, (1, 3), Tolerance::Exact).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_deviation, 0.0);
        let b = [1.0, 2.0 * (1.0 + 1e-12), 3.0];
        let r = equivalence_check(&b, (1, 3), &a, (1, 3), Tolerance::RelTol(1e-9)).unwrap();
        assert!(r.passed);
        assert!(r.max_deviation > 0.0 && r.max_deviation < 1e-11);
        let r = equivalence_check(&b, (1, 3), &a, (1, 3), Tolerance::Exact).unwrap();
        assert_eq!(r.first_mismatch, Some(1));
        let long = vec![0.0; 41];
        assert!(matches!(
            equivalence_check(&long, (1, 41), &[0.0; 40], (1, 40), Tolerance::Exact),
            Err(BenchError::ShapeMismatch { .. })
        ));
    }
}
