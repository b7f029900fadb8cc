//! 2D heat equation, RK4 in time on a five-point Laplacian. The four RK
//! stages reach four cells, so stripes trade four-row halos each step.

use std::sync::Arc;

use serde::Serialize;

use super::poisson::{decode_tag, exchange_halos, gather_stripes, halo_topology};
use super::{arr, divisible, BenchError, Solution};
use crate::arrays::LockedArray2D;
use crate::calculus::{CollectiveKind, TopologySpec};
use crate::runtime::{RuntimeError, RuntimeSpec, World};

/// Halo depth, equal to the stencil reach of one RK4 step.
pub const HALO: usize = 4;

/// Real-axis stability limit of classical RK4 relative to forward Euler.
const RK4_STABILITY_GAIN: f64 = 2.785 / 2.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatConfig {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub alpha: f64,
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
}

impl Default for HeatConfig {
    fn default() -> Self {
        Self::new(32, 32, 10)
    }
}

impl HeatConfig {
    /// Unit square, alpha = 1, dt = 0.2 dx^2.
    pub fn new(nx: usize, ny: usize, nt: usize) -> Self {
        let dx = 1.0 / (nx as f64 - 1.0);
        let dy = 1.0 / (ny as f64 - 1.0);
        HeatConfig {
            nx,
            ny,
            nt,
            alpha: 1.0,
            dx,
            dy,
            dt: 0.2 * dx * dx,
        }
    }

    pub fn validate(&self, n: i64) -> Result<(), BenchError> {
        if self.nx < 3 || self.ny < 3 {
            return Err(BenchError::Config("the grid needs at least 3x3 points".into()));
        }
        let (dx2, dy2) = (self.dx * self.dx, self.dy * self.dy);
        let euler = dx2 * dy2 / (2.0 * self.alpha * (dx2 + dy2));
        if !(self.dt > 0.0 && self.dt <= euler * RK4_STABILITY_GAIN) {
            return Err(BenchError::Config(format!(
                "dt = {} is outside the RK4 stability range (0, {}]",
                self.dt,
                euler * RK4_STABILITY_GAIN
            )));
        }
        let h = divisible("ny", self.ny, n)?;
        if h < HALO {
            return Err(BenchError::Config(format!(
                "stripes of {h} rows are thinner than the {HALO}-row halo"
            )));
        }
        Ok(())
    }

    /// 1 on the centred square of rows and columns [3n/8, 5n/8), 0 elsewhere.
    pub fn initial(&self) -> Vec<f64> {
        let (r0, r1) = (3 * self.ny / 8, 5 * self.ny / 8);
        let (c0, c1) = (3 * self.nx / 8, 5 * self.nx / 8);
        (0..self.ny * self.nx)
            .map(|k| {
                let (i, j) = (k / self.nx, k % self.nx);
                if (r0..r1).contains(&i) && (c0..c1).contains(&j) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Classical RK4 for du/dt = k(u), where `k(v, idx)` is the rate at one
/// cell.
fn rk4(u: &[f64], dt: f64, k: impl Fn(&[f64], usize) -> f64) -> Vec<f64> {
    let rate = |v: &[f64]| (0..v.len()).map(|i| k(v, i)).collect::<Vec<f64>>();
    let shift = |a: f64, k: &[f64]| u.iter().zip(k).map(|(u, k)| u + a * k).collect::<Vec<f64>>();
    let k1 = rate(u);
    let k2 = rate(&shift(dt / 2.0, &k1));
    let k3 = rate(&shift(dt / 2.0, &k2));
    let k4 = rate(&shift(dt, &k3));
    (0..u.len())
        .map(|i| u[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

#[inline]
fn laplacian(up: f64, down: f64, left: f64, right: f64, c: f64, dx2: f64, dy2: f64) -> f64 {
    (up - 2.0 * c + down) / dy2 + (left - 2.0 * c + right) / dx2
}

/// One RK4 step on a block of `rows` rows whose first row is global row
/// `first_global`. The rate is zero on the global boundary, on rows outside
/// the grid and on the block's own edge rows; rows more than four away from
/// the block edges come out exactly as in a whole-grid step.
pub fn rk4_block(u: &[f64], rows: usize, first_global: isize, cfg: &HeatConfig) -> Vec<f64> {
    let nx = cfg.nx;
    let (dx2, dy2) = (cfg.dx * cfg.dx, cfg.dy * cfg.dy);
    let ny = cfg.ny as isize;
    rk4(u, cfg.dt, |v, idx| {
        let (i, j) = (idx / nx, idx % nx);
        let g = first_global + i as isize;
        if i == 0 || i + 1 == rows || j == 0 || j + 1 == nx || g <= 0 || g >= ny - 1 {
            return 0.0;
        }
        cfg.alpha * laplacian(v[idx - nx], v[idx + nx], v[idx - 1], v[idx + 1], v[idx], dx2, dy2)
    })
}

pub fn rk4_heat_step(u: &[f64], cfg: &HeatConfig) -> Vec<f64> {
    rk4_block(u, cfg.ny, 0, cfg)
}

/// Grid at the start of each step plus the final grid.
pub fn history(cfg: &HeatConfig) -> Vec<Vec<f64>> {
    let mut u = cfg.initial();
    let mut out = Vec::with_capacity(cfg.nt + 1);
    for _ in 0..cfg.nt {
        let next = rk4_heat_step(&u, cfg);
        out.push(std::mem::replace(&mut u, next));
    }
    out.push(u);
    out
}

pub fn heat_sequential(cfg: &HeatConfig) -> Vec<f64> {
    history(cfg).pop().expect("initial grid")
}

pub fn sequential_solution(cfg: &HeatConfig) -> Solution {
    Solution {
        rows: cfg.ny,
        cols: cfg.nx,
        data: heat_sequential(cfg),
        residual: None,
    }
}

pub fn topology(nt: usize) -> TopologySpec {
    halo_topology(nt, CollectiveKind::PlainBarrier, CollectiveKind::Gather { root: 0 })
}

pub fn runtime_spec(cfg: &HeatConfig, _n: i64) -> RuntimeSpec {
    let hist = Arc::new(history(cfg));
    let (nx, ny, nt) = (cfg.nx, cfg.ny, cfg.nt);
    let h1 = hist.clone();
    RuntimeSpec::new(topology(nt))
        .with_message(move |tag, n| {
            let (step, b, down) = decode_tag(tag, n)?;
            let h = ny / n as usize;
            let edge = (b as usize + 1) * h;
            let first = if down { edge - HALO } else { edge };
            let g = h1.get(step)?;
            Some(g[first * nx..(first + HALO) * nx].to_vec())
        })
        .with_segments(move |index, rank, n| {
            if index as usize != nt {
                return None;
            }
            let h = ny / n as usize;
            let r = rank as usize;
            hist.last().map(|g| g[r * h * nx..(r + 1) * h * nx].to_vec())
        })
}

pub async fn heat_parallel(mut w: World, cfg: HeatConfig) -> Result<Option<Solution>, RuntimeError> {
    let rank = w.rank();
    let n = w.size();
    let (nx, ny) = (cfg.nx, cfg.ny);
    let h = ny / n as usize;
    let rows = h + 2 * HALO;
    let first_global = (rank as usize * h) as isize - HALO as isize;
    let init = cfg.initial();
    // Local row l holds global row first_global + l; rows outside the grid
    // stay zero.
    let mut local = LockedArray2D::from_fn(rows, nx, |l, j| {
        let g = first_global + l as isize;
        if (0..ny as isize).contains(&g) && (HALO..HALO + h).contains(&l) {
            init[g as usize * nx + j]
        } else {
            0.0
        }
    });
    let per_step = 2 * (n - 1);
    let owned = HALO * nx..(HALO + h) * nx;
    for step in 0..cfg.nt {
        exchange_halos(&mut w, &mut local, step as i64 * per_step, HALO, h).await?;
        let next = rk4_block(&arr(rank, local.to_vec())?, rows, first_global, &cfg);
        arr(rank, local.as_mut_slice())?[owned.clone()].copy_from_slice(&next[owned.clone()]);
        w.barrier().await?;
    }
    let out = gather_stripes(&mut w, &local, HALO, h, (ny, nx), None).await?;
    w.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrays::{ArrayError, Buffer, Region};
    use crate::bench::Benchmark;
    use crate::calculus::validate_topology;
    use crate::runtime::sim::RandomScheduler;

    #[test]
    fn uniform_field_is_an_equilibrium() {
        let cfg = HeatConfig::new(12, 12, 1);
        let u = vec![3.5; 144];
        assert_eq!(rk4_heat_step(&u, &cfg), u);
    }

    #[test]
    fn dependence_reaches_exactly_four_cells() {
        let cfg = HeatConfig::new(21, 21, 1);
        let base = vec![0.0; 21 * 21];
        let probe = 10 * 21 + 10;
        let before = rk4_heat_step(&base, &cfg)[probe];
        for (di, dj, reaches) in [(4, 0, true), (2, 2, true), (1, 3, true), (5, 0, false), (3, 2, false), (0, 5, false)] {
            let mut u = base.clone();
            u[(10 + di) * 21 + 10 + dj] = 1.0;
            let after = rk4_heat_step(&u, &cfg)[probe];
            assert_eq!(after != before, reaches, "offset ({di}, {dj})");
        }
    }

    #[test]
    fn periodic_variant_conserves_heat() {
        let cfg = HeatConfig::new(16, 16, 1);
        let (nx, ny) = (16, 16);
        let (dx2, dy2) = (cfg.dx * cfg.dx, cfg.dy * cfg.dy);
        let mut u: Vec<f64> = (0..nx * ny).map(|k| ((k * 37) % 11) as f64 * 0.25 + 1.0).collect();
        let total = u.iter().sum::<f64>();
        for _ in 0..10 {
            let before = u.iter().sum::<f64>();
            u = rk4(&u, cfg.dt, |v, idx| {
                let (i, j) = (idx / nx, idx % nx);
                let at = |i: usize, j: usize| v[(i % ny) * nx + j % nx];
                laplacian(at(i + ny - 1, j), at(i + 1, j), at(i, j + nx - 1), at(i, j + 1), v[idx], dx2, dy2)
            });
            let after = u.iter().sum::<f64>();
            assert!((after - before).abs() / before.abs() <= 1e-10);
        }
        assert!((u.iter().sum::<f64>() - total).abs() / total <= 1e-9);
    }

    #[test]
    fn hot_square_spreads_out() {
        let cfg = HeatConfig::new(32, 32, 100);
        let u = heat_sequential(&cfg);
        let centre = u[16 * 32 + 16];
        assert!(centre < 1.0 && centre > 0.0);
        assert!(u[8 * 32 + 16] > 0.0);
        assert!(u.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn topology_is_valid_for_small_counts() {
        assert!(validate_topology(&topology(10), 2..=8).is_empty());
    }

    #[test]
    fn parallel_equals_sequential_bitwise() {
        let bench = Benchmark::Heat(HeatConfig::default());
        let seq = bench.sequential();
        for n in [1, 2, 4, 8] {
            let par = bench.run_sim(n, &mut RandomScheduler::new(3)).unwrap();
            assert_eq!(par.digest(), seq.digest(), "N = {n}");
        }
    }

    #[test]
    fn thin_stripes_are_rejected() {
        assert!(HeatConfig::default().validate(16).is_err());
        assert!(HeatConfig::default().validate(3).is_err());
        let mut cfg = HeatConfig::default();
        cfg.dt *= 10.0;
        assert!(cfg.validate(2).is_err());
    }

    #[test]
    fn overlapping_sends_share_but_receives_exclude() {
        // Stripe of exactly four rows: both outgoing blocks are the same rows.
        let mut a = LockedArray2D::zeros(12, 8);
        a.acquire_read(Region::rows(4, 4)).unwrap();
        a.acquire_read(Region::rows(4, 4)).unwrap();
        a.acquire_write(Region::rows(0, 4)).unwrap();
        assert_eq!(
            a.acquire_write(Region::rows(2, 4)),
            Err(ArrayError::AcquireConflict { index: 16 })
        );
        assert!(a.invariant_holds());
    }
}
