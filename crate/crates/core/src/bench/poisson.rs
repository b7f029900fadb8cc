//! 2D Poisson equation by Jacobi iteration on horizontal stripes with one
//! halo row on each side. The per-iteration collective is an all-reduce of
//! the squared update norm.

use std::sync::Arc;

use serde::Serialize;

use super::{arr, divisible, BenchError, Solution};
use crate::arrays::{Buffer, LockedArray2D, Region};
use crate::calculus::{CollectiveKind, Expr, ReduceOp, SpecFn, TopologySpec};
use crate::runtime::{RuntimeError, RuntimeSpec, World};

#[derive(Clone, Debug, Serialize)]
pub struct PoissonConfig {
    pub nx: usize,
    pub ny: usize,
    pub iters: usize,
    pub dx: f64,
    pub dy: f64,
    /// Stop once the residual drops below this; later iterations leave the
    /// grid untouched but still communicate, so the protocol is unchanged.
    pub tolerance: Option<f64>,
    /// Right-hand side, row-major `ny x nx`.
    #[serde(skip)]
    pub f: Arc<[f64]>,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        Self::new(64, 64, 100)
    }
}

/// sin(2 pi x) sin(2 pi y) on the unit square, x along columns.
pub fn rhs(nx: usize, ny: usize) -> Vec<f64> {
    let dx = 1.0 / (nx as f64 - 1.0);
    let dy = 1.0 / (ny as f64 - 1.0);
    let tau = 2.0 * std::f64::consts::PI;
    let sx: Vec<f64> = (0..nx).map(|j| (tau * j as f64 * dx).sin()).collect();
    (0..ny)
        .flat_map(|i| {
            let sy = (tau * i as f64 * dy).sin();
            sx.iter().map(move |s| s * sy)
        })
        .collect()
}

impl PoissonConfig {
    pub fn new(nx: usize, ny: usize, iters: usize) -> Self {
        PoissonConfig {
            nx,
            ny,
            iters,
            dx: 1.0 / (nx as f64 - 1.0),
            dy: 1.0 / (ny as f64 - 1.0),
            tolerance: None,
            f: rhs(nx, ny).into(),
        }
    }

    /// Replaces the right-hand side, e.g. with one loaded from disk.
    pub fn with_rhs(mut self, f: Vec<f64>) -> Result<Self, BenchError> {
        if f.len() != self.nx * self.ny {
            return Err(BenchError::ShapeMismatch {
                left: (f.len(), 1),
                right: (self.ny, self.nx),
            });
        }
        self.f = f.into();
        Ok(self)
    }

    pub fn validate(&self, n: i64) -> Result<(), BenchError> {
        if self.nx < 3 || self.ny < 3 {
            return Err(BenchError::Config("the grid needs at least 3x3 points".into()));
        }
        if self.f.len() != self.nx * self.ny {
            return Err(BenchError::Config("right-hand side has the wrong size".into()));
        }
        divisible("ny", self.ny, n)?;
        Ok(())
    }
}

/// Five-point Jacobi update of one interior cell.
#[inline]
pub fn jacobi_cell(up: f64, down: f64, left: f64, right: f64, f: f64, dx2: f64, dy2: f64) -> f64 {
    ((left + right) * dy2 + (up + down) * dx2 - f * dx2 * dy2) / (2.0 * (dx2 + dy2))
}

/// One sweep over the whole grid; boundary cells are copied through.
pub fn jacobi_step(u: &[f64], f: &[f64], nx: usize, ny: usize, dx: f64, dy: f64) -> Vec<f64> {
    let (dx2, dy2) = (dx * dx, dy * dy);
    let mut out = u.to_vec();
    for i in 1..ny - 1 {
        for j in 1..nx - 1 {
            let k = i * nx + j;
            out[k] = jacobi_cell(u[k - nx], u[k + nx], u[k - 1], u[k + 1], f[k], dx2, dy2);
        }
    }
    out
}

/// Sum of squared changes over interior cells of global rows `rows`, in
/// row-major order.
fn squared_update(old: &[f64], new: &[f64], nx: usize, ny: usize, rows: std::ops::Range<usize>) -> f64 {
    let mut acc = 0.0;
    for i in rows.filter(|&i| i > 0 && i + 1 < ny) {
        for j in 1..nx - 1 {
            let d = new[i * nx + j] - old[i * nx + j];
            acc += d * d;
        }
    }
    acc
}

/// Grids at the start of each iteration plus the final one, and the
/// residual after each iteration.
pub struct PoissonHistory {
    pub grids: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    /// Iterations that changed the grid; the rest were frozen by the
    /// tolerance.
    pub active: usize,
}

pub fn history(cfg: &PoissonConfig) -> PoissonHistory {
    let (nx, ny) = (cfg.nx, cfg.ny);
    let mut u = vec![0.0; nx * ny];
    let mut grids = Vec::with_capacity(cfg.iters + 1);
    let mut residuals = Vec::with_capacity(cfg.iters);
    let mut residual = f64::INFINITY;
    let mut active = 0;
    for _ in 0..cfg.iters {
        grids.push(u.clone());
        if cfg.tolerance.is_some_and(|tol| residual < tol) {
            residuals.push(residual);
            continue;
        }
        let new = jacobi_step(&u, &cfg.f, nx, ny, cfg.dx, cfg.dy);
        residual = squared_update(&u, &new, nx, ny, 0..ny).sqrt();
        residuals.push(residual);
        u = new;
        active += 1;
    }
    grids.push(u);
    PoissonHistory {
        grids,
        residuals,
        active,
    }
}

pub fn poisson_sequential(cfg: &PoissonConfig) -> (Vec<f64>, f64) {
    let mut h = history(cfg);
    let residual = h.residuals.last().copied().unwrap_or(f64::INFINITY);
    (h.grids.pop().expect("initial grid"), residual)
}

pub fn sequential_solution(cfg: &PoissonConfig) -> Solution {
    let (data, residual) = poisson_sequential(cfg);
    Solution {
        rows: cfg.ny,
        cols: cfg.nx,
        data,
        residual: Some(residual),
    }
}

/// Sender and receiver for the two-tags-per-boundary layout: within a step,
/// tag `2b` goes down across boundary `b` and `2b + 1` comes back up.
pub(crate) fn halo_topology(steps: usize, per_step: CollectiveKind, last: CollectiveKind) -> TopologySpec {
    let k = "(tag - (tag div (2 * (size - 1))) * (2 * (size - 1)))";
    let odd = format!("({k} - 2 * ({k} div 2))");
    TopologySpec {
        sender: SpecFn::expr(&format!("{k} div 2 + {odd}")),
        receiver: SpecFn::expr(&format!("{k} div 2 + 1 - {odd}")),
        message: SpecFn::expr("tag * 2 + 1"),
        barrier_tag: SpecFn::expr(&format!("{} * 2 * (size - 1)", super::convection::clamp_index(steps))),
        barrier_count: SpecFn::Expr(Expr::int(steps as i64 + 1)),
        collectives: (0..steps as i64)
            .map(|i| (i, per_step))
            .chain([(steps as i64, last)])
            .filter(|(_, c)| *c != CollectiveKind::PlainBarrier)
            .collect(),
    }
}

/// Decodes a halo tag into (step, boundary, downward).
pub(crate) fn decode_tag(tag: i64, n: i64) -> Option<(usize, i64, bool)> {
    if n < 2 || tag < 0 {
        return None;
    }
    let per = 2 * (n - 1);
    let k = tag % per;
    Some(((tag / per) as usize, k / 2, k % 2 == 0))
}

pub fn topology(iters: usize) -> TopologySpec {
    halo_topology(
        iters,
        CollectiveKind::AllReduce { op: ReduceOp::Sum },
        CollectiveKind::Gather { root: 0 },
    )
}

pub fn runtime_spec(cfg: &PoissonConfig, _n: i64) -> RuntimeSpec {
    let hist = Arc::new(history(cfg));
    let (nx, ny, iters) = (cfg.nx, cfg.ny, cfg.iters);
    let (h1, h2) = (hist.clone(), hist.clone());
    RuntimeSpec::new(topology(iters))
        .with_message(move |tag, n| {
            let (step, b, down) = decode_tag(tag, n)?;
            let h = ny / n as usize;
            let row = (b as usize + 1) * h - usize::from(down);
            let g = h1.grids.get(step)?;
            Some(g[row * nx..(row + 1) * nx].to_vec())
        })
        .with_contributions(move |index, rank, n| {
            let idx = usize::try_from(index).ok().filter(|&i| i < iters)?;
            let h = ny / n as usize;
            let r = rank as usize;
            Some(squared_update(&h2.grids[idx], &h2.grids[idx + 1], nx, ny, r * h..(r + 1) * h))
        })
        .with_segments(move |index, rank, n| {
            if index as usize != iters {
                return None;
            }
            let h = ny / n as usize;
            let r = rank as usize;
            hist.grids.last().map(|g| g[r * h * nx..(r + 1) * h * nx].to_vec())
        })
}

/// Posts the halo exchange for one step and completes it in increasing tag
/// order. `depth` rows travel each way; `owned` is the stripe height and the
/// local array is `owned + 2*depth` rows.
pub(crate) async fn exchange_halos(
    w: &mut World,
    local: &mut LockedArray2D,
    bt: i64,
    depth: usize,
    owned: usize,
) -> Result<(), RuntimeError> {
    let (rank, n) = (w.rank(), w.size());
    if n < 2 {
        return Ok(());
    }
    let has_up = rank > 0;
    let has_down = rank < n - 1;
    let top_halo = Region::rows(0, depth);
    let bottom_halo = Region::rows(depth + owned, depth);
    let first_rows = Region::rows(depth, depth);
    let last_rows = Region::rows(owned, depth);
    let mut up = None;
    let mut down = None;
    if has_up {
        let recv = w.irecv(local, top_halo, bt + 2 * rank - 2).await?;
        let send = w.isend(local, first_rows, rank - 1, bt + 2 * rank - 1).await?;
        up = Some((recv, send));
    }
    if has_down {
        let send = w.isend(local, last_rows, rank + 1, bt + 2 * rank).await?;
        let recv = w.irecv(local, bottom_halo, bt + 2 * rank + 1).await?;
        down = Some((send, recv));
    }
    if let Some((recv, send)) = up {
        w.wait(recv, local).await?;
        w.wait(send, local).await?;
    }
    if let Some((send, recv)) = down {
        w.wait(send, local).await?;
        w.wait(recv, local).await?;
    }
    Ok(())
}

/// Gathers the owned rows `depth..depth+owned` of every stripe at rank 0.
pub(crate) async fn gather_stripes(
    w: &mut World,
    local: &LockedArray2D,
    depth: usize,
    owned: usize,
    (ny, nx): (usize, usize),
    residual: Option<f64>,
) -> Result<Option<Solution>, RuntimeError> {
    let rank = w.rank();
    let mine = Region::rows(depth, owned);
    if rank == 0 {
        let mut out = LockedArray2D::zeros(ny, nx);
        w.gather(local, mine, Some((&mut out as &mut dyn Buffer, Region::rows(0, ny))), 0)
            .await?;
        Ok(Some(Solution {
            rows: ny,
            cols: nx,
            data: arr(rank, out.to_vec())?,
            residual,
        }))
    } else {
        w.gather(local, mine, None, 0).await?;
        Ok(None)
    }
}

pub async fn poisson_parallel(mut w: World, cfg: PoissonConfig) -> Result<Option<Solution>, RuntimeError> {
    let rank = w.rank();
    let n = w.size();
    let (nx, ny) = (cfg.nx, cfg.ny);
    let h = ny / n as usize;
    let first = rank as usize * h;
    let (dx2, dy2) = (cfg.dx * cfg.dx, cfg.dy * cfg.dy);
    // Local row l holds global row first + l - 1.
    let mut local = LockedArray2D::zeros(h + 2, nx);
    let mut residual = f64::INFINITY;
    let per_step = 2 * (n - 1);
    for step in 0..cfg.iters {
        exchange_halos(&mut w, &mut local, step as i64 * per_step, 1, h).await?;
        let frozen = cfg.tolerance.is_some_and(|tol| residual < tol);
        let mut contribution = 0.0;
        if !frozen {
            let old = arr(rank, local.to_vec())?;
            let u = arr(rank, local.as_mut_slice())?;
            for l in 1..=h {
                let g = first + l - 1;
                if g == 0 || g + 1 == ny {
                    continue;
                }
                for j in 1..nx - 1 {
                    let k = l * nx + j;
                    u[k] = jacobi_cell(old[k - nx], old[k + nx], old[k - 1], old[k + 1], cfg.f[g * nx + j], dx2, dy2);
                    let d = u[k] - old[k];
                    contribution += d * d;
                }
            }
        }
        let total = w.allreduce(contribution, ReduceOp::Sum).await?;
        if !frozen {
            residual = total.sqrt();
        }
    }
    let out = gather_stripes(&mut w, &local, 1, h, (ny, nx), Some(residual)).await?;
    w.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{compare, Benchmark};
    use crate::calculus::validate_topology;
    use crate::runtime::sim::RandomScheduler;

    #[test]
    fn jacobi_spreads_a_point_source() {
        let (nx, ny) = (5, 5);
        let mut u = vec![0.0; 25];
        u[2 * 5 + 2] = 4.0;
        let out = jacobi_step(&u, &[0.0; 25], nx, ny, 0.25, 0.25);
        assert_eq!(out[12], 0.0);
        for k in [7, 11, 13, 17] {
            assert_eq!(out[k], 1.0);
        }
        assert_eq!(out.iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn zero_is_a_fixed_point_and_boundaries_stay() {
        let out = jacobi_step(&[0.0; 16], &[0.0; 16], 4, 4, 1.0, 1.0);
        assert!(out.iter().all(|&v| v == 0.0));
        let u: Vec<f64> = (0..16).map(f64::from).collect();
        let out = jacobi_step(&u, &[1.0; 16], 4, 4, 0.5, 0.5);
        for k in [0, 1, 2, 3, 4, 7, 8, 11, 12, 13, 14, 15] {
            assert_eq!(out[k], u[k]);
        }
    }

    #[test]
    fn solution_has_the_sign_pattern_of_the_source() {
        let (u, res) = poisson_sequential(&PoissonConfig::default());
        let at = |y: f64, x: f64| u[((y * 63.0).round() as usize) * 64 + (x * 63.0).round() as usize];
        // u is the negatively scaled source for this eigenfunction.
        assert!(at(0.25, 0.25) < 0.0);
        assert!(at(0.25, 0.75) > 0.0);
        assert!(at(0.75, 0.25) > 0.0);
        assert!(at(0.75, 0.75) < 0.0);
        assert!(res.is_finite() && res > 0.0);
    }

    #[test]
    fn topology_is_valid_for_small_counts() {
        assert!(validate_topology(&topology(100), 2..=8).is_empty());
    }

    #[test]
    fn parallel_grid_matches_exactly() {
        let bench = Benchmark::Poisson(PoissonConfig::new(16, 16, 20));
        let seq = bench.sequential();
        for n in [1, 2, 4, 8] {
            let par = bench.run_sim(n, &mut RandomScheduler::new(7)).unwrap();
            let report = compare("poisson", n, &par, &seq).unwrap();
            assert!(report.passed(), "N = {n}: {report:?}");
            assert_eq!(par.data, seq.data);
        }
    }

    #[test]
    fn tolerance_mode_freezes_the_grid() {
        let mut cfg = PoissonConfig::new(8, 8, 200);
        cfg.tolerance = Some(1e-6);
        let hist = history(&cfg);
        assert!(hist.active < 200);
        assert!(hist.residuals[hist.active - 1] < 1e-6);
        let bench = Benchmark::Poisson(cfg);
        let par = bench.run_sim(2, &mut RandomScheduler::new(1)).unwrap();
        let report = compare("poisson", 2, &par, &bench.sequential()).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
