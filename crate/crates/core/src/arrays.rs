//! Real-valued buffers with per-element lock bookkeeping.
//!
//! Read locks are counters (any number of pending sends may read a cell),
//! write locks are flags (a pending receive owns its cells outright). Every
//! operation either fails without touching anything or leaves the arrays with
//! `write_locked[i] => read_count[i] == 0`.

use std::io::{self, BufRead, Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "region", rename_all = "snake_case")]
pub enum Region {
    Range1D { start: usize, len: usize },
    RowBlock { first_row: usize, n_rows: usize },
    RowSegment { row: usize, start_col: usize, len: usize },
}

impl Region {
    pub fn range(start: usize, len: usize) -> Self {
        Region::Range1D { start, len }
    }

    pub fn rows(first_row: usize, n_rows: usize) -> Self {
        Region::RowBlock { first_row, n_rows }
    }

    pub fn segment(row: usize, start_col: usize, len: usize) -> Self {
        Region::RowSegment { row, start_col, len }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ArrayError {
    #[error("index {index} out of bounds for length {len}")]
    OutOfBounds { index: usize, len: usize },
    #[error("region {region:?} does not fit a {rows}x{cols} array")]
    BadRegion { region: Region, rows: usize, cols: usize },
    #[error("element {index} is locked for writing and cannot be read")]
    ReadWhileWriteLocked { index: usize },
    #[error("element {index} is locked and cannot be written")]
    WriteWhileLocked { index: usize },
    #[error("cannot acquire a read lock: element {index} is locked for writing")]
    AcquireOnWriteLocked { index: usize },
    #[error("cannot acquire a write lock: element {index} is already locked")]
    AcquireConflict { index: usize },
    #[error("element {index} does not hold the lock being released")]
    ReleaseUnheld { index: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("malformed array file: {0}")]
    Format(String),
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Shared storage for both array shapes; `cols == len` and `rows == 1` for 1D.
#[derive(Debug, PartialEq)]
struct Cells {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    read_count: Vec<u32>,
    write_locked: Vec<bool>,
}

impl Cells {
    fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        let n = data.len();
        debug_assert_eq!(n, rows * cols);
        Cells {
            rows,
            cols,
            data,
            read_count: vec![0; n],
            write_locked: vec![false; n],
        }
    }

    fn span(&self, region: Region) -> Result<std::ops::Range<usize>, ArrayError> {
        let bad = || ArrayError::BadRegion {
            region,
            rows: self.rows,
            cols: self.cols,
        };
        let (start, len) = match region {
            Region::Range1D { start, len } => (start, len),
            Region::RowBlock { first_row, n_rows } => {
                if first_row.checked_add(n_rows).is_none_or(|e| e > self.rows) {
                    return Err(bad());
                }
                (first_row * self.cols, n_rows * self.cols)
            }
            Region::RowSegment { row, start_col, len } => {
                if row >= self.rows || start_col.checked_add(len).is_none_or(|e| e > self.cols) {
                    return Err(bad());
                }
                (row * self.cols + start_col, len)
            }
        };
        if len == 0 || start.checked_add(len).is_none_or(|e| e > self.data.len()) {
            return Err(bad());
        }
        Ok(start..start + len)
    }

    fn index_ok(&self, i: usize) -> Result<(), ArrayError> {
        if i < self.data.len() {
            Ok(())
        } else {
            Err(ArrayError::OutOfBounds {
                index: i,
                len: self.data.len(),
            })
        }
    }

    fn get(&self, i: usize) -> Result<f64, ArrayError> {
        self.index_ok(i)?;
        if self.write_locked[i] {
            return Err(ArrayError::ReadWhileWriteLocked { index: i });
        }
        Ok(self.data[i])
    }

    fn set(&mut self, i: usize, v: f64) -> Result<(), ArrayError> {
        self.index_ok(i)?;
        if self.write_locked[i] || self.read_count[i] > 0 {
            return Err(ArrayError::WriteWhileLocked { index: i });
        }
        self.data[i] = v;
        Ok(())
    }

    fn acquire_read(&mut self, region: Region) -> Result<(), ArrayError> {
        let span = self.span(region)?;
        if let Some(i) = span.clone().find(|&i| self.write_locked[i]) {
            return Err(ArrayError::AcquireOnWriteLocked { index: i });
        }
        for i in span {
            self.read_count[i] += 1;
        }
        Ok(())
    }

    fn release_read(&mut self, region: Region) -> Result<(), ArrayError> {
        let span = self.span(region)?;
        if let Some(i) = span.clone().find(|&i| self.read_count[i] == 0) {
            return Err(ArrayError::ReleaseUnheld { index: i });
        }
        for i in span {
            self.read_count[i] -= 1;
        }
        Ok(())
    }

    fn acquire_write(&mut self, region: Region) -> Result<(), ArrayError> {
        let span = self.span(region)?;
        if let Some(i) = span.clone().find(|&i| self.write_locked[i] || self.read_count[i] > 0) {
            return Err(ArrayError::AcquireConflict { index: i });
        }
        for i in span {
            self.write_locked[i] = true;
        }
        Ok(())
    }

    fn release_write(&mut self, region: Region) -> Result<(), ArrayError> {
        let span = self.span(region)?;
        if let Some(i) = span.clone().find(|&i| !self.write_locked[i]) {
            return Err(ArrayError::ReleaseUnheld { index: i });
        }
        for i in span {
            self.write_locked[i] = false;
        }
        Ok(())
    }

    fn read_region(&self, region: Region) -> Result<Vec<f64>, ArrayError> {
        let span = self.span(region)?;
        if let Some(i) = span.clone().find(|&i| self.write_locked[i]) {
            return Err(ArrayError::ReadWhileWriteLocked { index: i });
        }
        Ok(self.data[span].to_vec())
    }

    fn write_region(&mut self, region: Region, values: &[f64]) -> Result<(), ArrayError> {
        let span = self.span(region)?;
        if span.len() != values.len() {
            return Err(ArrayError::LengthMismatch {
                expected: span.len(),
                actual: values.len(),
            });
        }
        if let Some(i) = span.clone().find(|&i| self.write_locked[i] || self.read_count[i] > 0) {
            return Err(ArrayError::WriteWhileLocked { index: i });
        }
        self.data[span].copy_from_slice(values);
        Ok(())
    }

    fn readable(&self) -> Result<&[f64], ArrayError> {
        match self.write_locked.iter().position(|&w| w) {
            Some(i) => Err(ArrayError::ReadWhileWriteLocked { index: i }),
            None => Ok(&self.data),
        }
    }

    fn writable(&mut self) -> Result<&mut [f64], ArrayError> {
        let locked = (0..self.data.len()).find(|&i| self.write_locked[i] || self.read_count[i] > 0);
        match locked {
            Some(i) => Err(ArrayError::WriteWhileLocked { index: i }),
            None => Ok(&mut self.data),
        }
    }

    fn invariant_holds(&self) -> bool {
        self.write_locked
            .iter()
            .zip(&self.read_count)
            .all(|(&w, &r)| !w || r == 0)
    }

    fn is_unlocked(&self) -> bool {
        self.read_count.iter().all(|&r| r == 0) && self.write_locked.iter().all(|&w| !w)
    }

    fn contiguous(&self, parts: &[Region]) -> Result<bool, ArrayError> {
        let mut next: Option<usize> = None;
        for &p in parts {
            let span = self.span(p)?;
            if next.is_some_and(|n| n != span.start) {
                return Ok(false);
            }
            next = Some(span.end);
        }
        Ok(true)
    }
}

/// Region-level access shared by both array shapes; this is what the
/// message-passing runtime works against.
pub trait Buffer {
    /// Identity of this buffer, stable for its lifetime and unique per process.
    fn id(&self) -> u64;
    fn shape(&self) -> (usize, usize);
    fn region_len(&self, region: Region) -> Result<usize, ArrayError>;
    fn read_region(&self, region: Region) -> Result<Vec<f64>, ArrayError>;
    fn write_region(&mut self, region: Region, values: &[f64]) -> Result<(), ArrayError>;
    fn acquire_read(&mut self, region: Region) -> Result<(), ArrayError>;
    fn release_read(&mut self, region: Region) -> Result<(), ArrayError>;
    fn acquire_write(&mut self, region: Region) -> Result<(), ArrayError>;
    fn release_write(&mut self, region: Region) -> Result<(), ArrayError>;
    /// True if the parts, taken in order, cover one run of consecutive
    /// row-major positions.
    fn check_contiguous(&self, parts: &[Region]) -> Result<bool, ArrayError>;
    fn invariant_holds(&self) -> bool;
    fn is_unlocked(&self) -> bool;
}

macro_rules! buffer_impl {
    ($ty:ty) => {
        impl Buffer for $ty {
            fn id(&self) -> u64 {
                self.id
            }
            fn shape(&self) -> (usize, usize) {
                (self.cells.rows, self.cells.cols)
            }
            fn region_len(&self, region: Region) -> Result<usize, ArrayError> {
                self.cells.span(region).map(|s| s.len())
            }
            fn read_region(&self, region: Region) -> Result<Vec<f64>, ArrayError> {
                self.cells.read_region(region)
            }
            fn write_region(&mut self, region: Region, values: &[f64]) -> Result<(), ArrayError> {
                self.cells.write_region(region, values)
            }
            fn acquire_read(&mut self, region: Region) -> Result<(), ArrayError> {
                self.cells.acquire_read(region)
            }
            fn release_read(&mut self, region: Region) -> Result<(), ArrayError> {
                self.cells.release_read(region)
            }
            fn acquire_write(&mut self, region: Region) -> Result<(), ArrayError> {
                self.cells.acquire_write(region)
            }
            fn release_write(&mut self, region: Region) -> Result<(), ArrayError> {
                self.cells.release_write(region)
            }
            fn check_contiguous(&self, parts: &[Region]) -> Result<bool, ArrayError> {
                self.cells.contiguous(parts)
            }
            fn invariant_holds(&self) -> bool {
                self.cells.invariant_holds()
            }
            fn is_unlocked(&self) -> bool {
                self.cells.is_unlocked()
            }
        }
    };
}

/// One-dimensional locked array. Deliberately not `Clone`: use
/// [`LockedArray1D::copy`], which yields a distinct buffer with no locks.
#[derive(Debug)]
pub struct LockedArray1D {
    id: u64,
    cells: Cells,
}

buffer_impl!(LockedArray1D);

impl LockedArray1D {
    pub fn zeros(len: usize) -> Self {
        Self::from_vec(vec![0.0; len])
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        LockedArray1D {
            id: fresh_id(),
            cells: Cells::new(1, data.len(), data),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.data.is_empty()
    }

    pub fn get(&self, i: usize) -> Result<f64, ArrayError> {
        self.cells.get(i)
    }

    pub fn set(&mut self, i: usize, v: f64) -> Result<(), ArrayError> {
        self.cells.set(i, v)
    }

    pub fn read_count(&self, i: usize) -> u32 {
        self.cells.read_count[i]
    }

    pub fn is_write_locked(&self, i: usize) -> bool {
        self.cells.write_locked[i]
    }

    /// Whole contents; fails if any element is locked for writing.
    pub fn as_slice(&self) -> Result<&[f64], ArrayError> {
        self.cells.readable()
    }

    /// Whole contents for in-place update; fails if anything is locked.
    pub fn as_mut_slice(&mut self) -> Result<&mut [f64], ArrayError> {
        self.cells.writable()
    }

    pub fn to_vec(&self) -> Result<Vec<f64>, ArrayError> {
        self.as_slice().map(<[f64]>::to_vec)
    }

    pub fn copy(&self) -> Result<Self, ArrayError> {
        Ok(Self::from_vec(self.to_vec()?))
    }

    pub fn slice(&self, region: Region) -> Result<Self, ArrayError> {
        Ok(Self::from_vec(self.read_region(region)?))
    }

    /// Cyclic shift to the right by `shift` (negative shifts go left).
    pub fn roll(&self, shift: isize) -> Result<Self, ArrayError> {
        let mut v = self.to_vec()?;
        if !v.is_empty() {
            let k = shift.rem_euclid(v.len() as isize) as usize;
            v.rotate_right(k);
        }
        Ok(Self::from_vec(v))
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, ArrayError> {
        let (a, b) = (self.as_slice()?, other.as_slice()?);
        if a.len() != b.len() {
            return Err(ArrayError::ShapeMismatch {
                left: (1, a.len()),
                right: (1, b.len()),
            });
        }
        Ok(Self::from_vec(a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()))
    }

    pub fn add(&self, other: &Self) -> Result<Self, ArrayError> {
        self.zip(other, |x, y| x + y)
    }

    pub fn mul(&self, other: &Self) -> Result<Self, ArrayError> {
        self.zip(other, |x, y| x * y)
    }

    pub fn scale(&self, a: f64) -> Result<Self, ArrayError> {
        Ok(Self::from_vec(self.as_slice()?.iter().map(|x| a * x).collect()))
    }

    /// `a * x + y`, elementwise.
    pub fn axpy(a: f64, x: &Self, y: &Self) -> Result<Self, ArrayError> {
        x.zip(y, |xv, yv| a * xv + yv)
    }

    pub fn fill(&mut self, v: f64) -> Result<(), ArrayError> {
        self.as_mut_slice()?.fill(v);
        Ok(())
    }
}

/// Row-major two-dimensional locked array.
#[derive(Debug)]
pub struct LockedArray2D {
    id: u64,
    cells: Cells,
}

buffer_impl!(LockedArray2D);

impl LockedArray2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_vec(rows, cols, vec![0.0; rows * cols]).expect("sizes agree")
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ArrayError> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(ArrayError::LengthMismatch {
                expected: rows.saturating_mul(cols),
                actual: data.len(),
            });
        }
        Ok(LockedArray2D {
            id: fresh_id(),
            cells: Cells::new(rows, cols, data),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Self::from_vec(rows, cols, data).expect("sizes agree")
    }

    pub fn rows(&self) -> usize {
        self.cells.rows
    }

    pub fn cols(&self) -> usize {
        self.cells.cols
    }

    fn flat(&self, r: usize, c: usize) -> Result<usize, ArrayError> {
        if r >= self.rows() || c >= self.cols() {
            return Err(ArrayError::OutOfBounds {
                index: r.saturating_mul(self.cols()).saturating_add(c),
                len: self.cells.data.len(),
            });
        }
        Ok(r * self.cols() + c)
    }

    pub fn get(&self, r: usize, c: usize) -> Result<f64, ArrayError> {
        self.cells.get(self.flat(r, c)?)
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) -> Result<(), ArrayError> {
        let i = self.flat(r, c)?;
        self.cells.set(i, v)
    }

    pub fn read_count(&self, r: usize, c: usize) -> u32 {
        self.cells.read_count[r * self.cols() + c]
    }

    pub fn is_write_locked(&self, r: usize, c: usize) -> bool {
        self.cells.write_locked[r * self.cols() + c]
    }

    pub fn as_slice(&self) -> Result<&[f64], ArrayError> {
        self.cells.readable()
    }

    pub fn as_mut_slice(&mut self) -> Result<&mut [f64], ArrayError> {
        self.cells.writable()
    }

    pub fn to_vec(&self) -> Result<Vec<f64>, ArrayError> {
        self.as_slice().map(<[f64]>::to_vec)
    }

    pub fn copy(&self) -> Result<Self, ArrayError> {
        Self::from_vec(self.rows(), self.cols(), self.to_vec()?)
    }

    pub fn slice(&self, region: Region) -> Result<LockedArray1D, ArrayError> {
        Ok(LockedArray1D::from_vec(self.read_region(region)?))
    }

    /// Cyclic shift of the flattened contents, keeping the shape.
    pub fn roll(&self, shift: isize) -> Result<Self, ArrayError> {
        let mut v = self.to_vec()?;
        if !v.is_empty() {
            let k = shift.rem_euclid(v.len() as isize) as usize;
            v.rotate_right(k);
        }
        Self::from_vec(self.rows(), self.cols(), v)
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, ArrayError> {
        if (self.rows(), self.cols()) != (other.rows(), other.cols()) {
            return Err(ArrayError::ShapeMismatch {
                left: (self.rows(), self.cols()),
                right: (other.rows(), other.cols()),
            });
        }
        let data = self
            .as_slice()?
            .iter()
            .zip(other.as_slice()?)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Self::from_vec(self.rows(), self.cols(), data)
    }

    pub fn add(&self, other: &Self) -> Result<Self, ArrayError> {
        self.zip(other, |x, y| x + y)
    }

    pub fn mul(&self, other: &Self) -> Result<Self, ArrayError> {
        self.zip(other, |x, y| x * y)
    }

    pub fn scale(&self, a: f64) -> Result<Self, ArrayError> {
        let data = self.as_slice()?.iter().map(|x| a * x).collect();
        Self::from_vec(self.rows(), self.cols(), data)
    }

    pub fn axpy(a: f64, x: &Self, y: &Self) -> Result<Self, ArrayError> {
        x.zip(y, |xv, yv| a * xv + yv)
    }

    pub fn fill(&mut self, v: f64) -> Result<(), ArrayError> {
        self.as_mut_slice()?.fill(v);
        Ok(())
    }
}

const MAGIC: &[u8; 4] = b"LKA1";

/// Writes `rows`, `cols` (u64 little-endian) after a magic tag, then the
/// values as little-endian f64.
pub fn write_binary(out: &mut impl Write, rows: usize, cols: usize, data: &[f64]) -> io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(rows as u64).to_le_bytes())?;
    out.write_all(&(cols as u64).to_le_bytes())?;
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary(input: &mut impl Read) -> Result<LockedArray2D, ArrayError> {
    let io_err = |e: io::Error| ArrayError::Format(e.to_string());
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(ArrayError::Format("bad magic".into()));
    }
    let mut word = [0u8; 8];
    input.read_exact(&mut word).map_err(io_err)?;
    let rows = u64::from_le_bytes(word) as usize;
    input.read_exact(&mut word).map_err(io_err)?;
    let cols = u64::from_le_bytes(word) as usize;
    let n = rows
        .checked_mul(cols)
        .filter(|&n| n <= 1 << 32)
        .ok_or_else(|| ArrayError::Format("implausible dimensions".into()))?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        input.read_exact(&mut word).map_err(io_err)?;
        data.push(f64::from_le_bytes(word));
    }
    LockedArray2D::from_vec(rows, cols, data)
}

/// One row per line, comma separated, shortest round-trip formatting.
pub fn write_csv(out: &mut impl Write, cols: usize, data: &[f64]) -> io::Result<()> {
    for row in data.chunks(cols.max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_csv(input: impl BufRead) -> Result<LockedArray2D, ArrayError> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for line in input.lines() {
        let line = line.map_err(|e| ArrayError::Format(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ArrayError::Format(format!("line {}: {e}", rows + 1)))?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(ArrayError::Format(format!("line {} has {} columns, expected {c}", rows + 1, row.len())))
            }
            _ => {}
        }
        data.extend(row);
        rows += 1;
    }
    LockedArray2D::from_vec(rows, cols.unwrap_or(0), data)
}

pub mod fuzz {
    //! Randomized lock-operation sessions checked against a plain reference
    //! model of per-element counters and flags.

    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum Shape {
        OneD,
        TwoD,
    }

    #[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
    pub struct SessionReport {
        pub operations: usize,
        pub rejected: usize,
        /// States where a write-locked cell also had readers.
        pub invariant_violations: usize,
        /// Operations whose outcome differed from the reference model.
        pub model_mismatches: usize,
    }

    impl SessionReport {
        pub fn merge(&mut self, other: &SessionReport) {
            self.operations += other.operations;
            self.rejected += other.rejected;
            self.invariant_violations += other.invariant_violations;
            self.model_mismatches += other.model_mismatches;
        }
    }

    struct Model {
        reads: Vec<u32>,
        write: Vec<bool>,
        data: Vec<f64>,
    }

    fn random_region(rng: &mut ChaCha8Rng, shape: Shape, rows: usize, cols: usize) -> Region {
        match (shape, rng.gen_range(0..3)) {
            (Shape::OneD, _) => {
                let start = rng.gen_range(0..cols);
                Region::range(start, rng.gen_range(1..=cols - start))
            }
            (Shape::TwoD, 0) => {
                let r = rng.gen_range(0..rows);
                Region::rows(r, rng.gen_range(1..=rows - r))
            }
            (Shape::TwoD, 1) => {
                let r = rng.gen_range(0..rows);
                let c = rng.gen_range(0..cols);
                Region::segment(r, c, rng.gen_range(1..=cols - c))
            }
            (Shape::TwoD, _) => {
                let n = rows * cols;
                let start = rng.gen_range(0..n);
                Region::range(start, rng.gen_range(1..=n - start))
            }
        }
    }

    fn cells_of(region: Region, cols: usize) -> std::ops::Range<usize> {
        match region {
            Region::Range1D { start, len } => start..start + len,
            Region::RowBlock { first_row, n_rows } => first_row * cols..(first_row + n_rows) * cols,
            Region::RowSegment { row, start_col, len } => row * cols + start_col..row * cols + start_col + len,
        }
    }

    /// Runs `steps` random operations on a fresh array.
    pub fn session(seed: u64, shape: Shape, steps: usize) -> SessionReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, cols) = match shape {
            Shape::OneD => (1, rng.gen_range(1..=12)),
            Shape::TwoD => (rng.gen_range(1..=5), rng.gen_range(1..=5)),
        };
        let n = rows * cols;
        let mut arr: Box<dyn Buffer> = match shape {
            Shape::OneD => Box::new(LockedArray1D::zeros(n)),
            Shape::TwoD => Box::new(LockedArray2D::zeros(rows, cols)),
        };
        let mut model = Model {
            reads: vec![0; n],
            write: vec![false; n],
            data: vec![0.0; n],
        };
        let mut rep = SessionReport::default();
        for _ in 0..steps {
            rep.operations += 1;
            let region = random_region(&mut rng, shape, rows, cols);
            let span = cells_of(region, cols);
            let (actual_ok, expected_ok) = match rng.gen_range(0..6) {
                0 => {
                    let ok = span.clone().all(|i| !model.write[i]);
                    if ok {
                        span.clone().for_each(|i| model.reads[i] += 1);
                    }
                    (arr.acquire_read(region).is_ok(), ok)
                }
                1 => {
                    let ok = span.clone().all(|i| model.reads[i] > 0);
                    if ok {
                        span.clone().for_each(|i| model.reads[i] -= 1);
                    }
                    (arr.release_read(region).is_ok(), ok)
                }
                2 => {
                    let ok = span.clone().all(|i| !model.write[i] && model.reads[i] == 0);
                    if ok {
                        span.clone().for_each(|i| model.write[i] = true);
                    }
                    (arr.acquire_write(region).is_ok(), ok)
                }
                3 => {
                    let ok = span.clone().all(|i| model.write[i]);
                    if ok {
                        span.clone().for_each(|i| model.write[i] = false);
                    }
                    (arr.release_write(region).is_ok(), ok)
                }
                4 => {
                    let ok = span.clone().all(|i| !model.write[i]);
                    let got = arr.read_region(region);
                    let same = match &got {
                        Ok(v) => v.as_slice() == &model.data[span.clone()],
                        Err(_) => true,
                    };
                    rep.model_mismatches += usize::from(!same);
                    (got.is_ok(), ok)
                }
                _ => {
                    let v: f64 = rng.gen_range(-10.0..10.0);
                    let values = vec![v; span.len()];
                    let ok = span.clone().all(|i| !model.write[i] && model.reads[i] == 0);
                    if ok {
                        span.clone().for_each(|i| model.data[i] = v);
                    }
                    (arr.write_region(region, &values).is_ok(), ok)
                }
            };
            rep.rejected += usize::from(!actual_ok);
            rep.model_mismatches += usize::from(actual_ok != expected_ok);
            rep.invariant_violations += usize::from(!arr.invariant_holds());
        }
        rep
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn get_and_write_locks() {
        let mut a = LockedArray1D::zeros(4);
        assert_eq!(a.get(2), Ok(0.0));
        a.acquire_write(Region::range(0, 1)).unwrap();
        assert_eq!(a.get(0), Err(ArrayError::ReadWhileWriteLocked { index: 0 }));
        assert_eq!(a.get(2), Ok(0.0));
        assert!(matches!(a.get(9), Err(ArrayError::OutOfBounds { .. })));
    }

    #[test]
    fn set_respects_read_locks() {
        let mut a = LockedArray1D::zeros(4);
        a.set(1, 3.5).unwrap();
        assert_eq!(a.get(1), Ok(3.5));
        a.acquire_read(Region::range(1, 1)).unwrap();
        assert_eq!(a.set(1, 0.0), Err(ArrayError::WriteWhileLocked { index: 1 }));
        a.release_read(Region::range(1, 1)).unwrap();
        a.set(1, 0.0).unwrap();
    }

    #[test]
    fn overlapping_reads_count_up() {
        let mut a = LockedArray1D::zeros(6);
        a.acquire_read(Region::range(0, 4)).unwrap();
        a.acquire_read(Region::range(2, 4)).unwrap();
        assert_eq!((0..6).map(|i| a.read_count(i)).collect::<Vec<_>>(), [1, 1, 2, 2, 1, 1]);
        a.release_read(Region::range(0, 4)).unwrap();
        a.release_read(Region::range(2, 4)).unwrap();
        assert!(a.is_unlocked());
        a.fill(1.0).unwrap();
        assert_eq!(
            a.release_read(Region::range(0, 1)),
            Err(ArrayError::ReleaseUnheld { index: 0 })
        );
    }

    #[test]
    fn write_locks_exclude() {
        let mut a = LockedArray2D::zeros(4, 4);
        a.acquire_write(Region::rows(0, 2)).unwrap();
        assert!(a.is_write_locked(1, 3));
        a.set(2, 0, 1.0).unwrap();
        assert_eq!(
            a.acquire_write(Region::segment(1, 2, 2)),
            Err(ArrayError::AcquireConflict { index: 6 })
        );
        assert_eq!(
            a.acquire_read(Region::rows(1, 1)),
            Err(ArrayError::AcquireOnWriteLocked { index: 4 })
        );
        let mut b = LockedArray2D::zeros(2, 2);
        b.acquire_read(Region::segment(0, 0, 1)).unwrap();
        assert_eq!(b.acquire_write(Region::rows(0, 1)), Err(ArrayError::AcquireConflict { index: 0 }));
    }

    #[test]
    fn contiguity() {
        let a = LockedArray2D::zeros(4, 4);
        assert!(a.check_contiguous(&[Region::rows(1, 2)]).unwrap());
        let column: Vec<Region> = (0..4).map(|r| Region::segment(r, 1, 1)).collect();
        assert!(!a.check_contiguous(&column).unwrap());
        let thin = LockedArray2D::zeros(4, 1);
        assert!(thin.check_contiguous(&[Region::rows(0, 4)]).unwrap());
        let thin_column: Vec<Region> = (0..4).map(|r| Region::segment(r, 0, 1)).collect();
        assert!(thin.check_contiguous(&thin_column).unwrap());
        assert!(a.check_contiguous(&[Region::rows(4, 1)]).is_err());
    }

    #[test]
    fn helpers() {
        let a = LockedArray1D::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.roll(1).unwrap().to_vec().unwrap(), [4.0, 1.0, 2.0, 3.0]);
        assert_eq!(a.roll(-1).unwrap().to_vec().unwrap(), [2.0, 3.0, 4.0, 1.0]);
        let x = LockedArray1D::from_vec(vec![1.0, 1.0]);
        let y = LockedArray1D::from_vec(vec![3.0, 4.0]);
        assert_eq!(LockedArray1D::axpy(2.0, &x, &y).unwrap().to_vec().unwrap(), [5.0, 6.0]);
        assert_eq!(x.add(&y).unwrap().to_vec().unwrap(), [4.0, 5.0]);
        assert_eq!(x.mul(&y).unwrap().to_vec().unwrap(), [3.0, 4.0]);
        let mut g = LockedArray2D::zeros(4, 4);
        for (c, v) in [9.0, 8.0, 7.0, 6.0].into_iter().enumerate() {
            g.set(1, c, v).unwrap();
        }
        assert_eq!(g.slice(Region::segment(1, 0, 4)).unwrap().to_vec().unwrap(), [9.0, 8.0, 7.0, 6.0]);
        let c = g.copy().unwrap();
        assert_ne!(c.id(), g.id());
        assert!(matches!(x.add(&a), Err(ArrayError::ShapeMismatch { .. })));
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let g = LockedArray2D::from_fn(3, 2, |r, c| r as f64 * 0.1 + c as f64 / 3.0);
        let mut bin = Vec::new();
        write_binary(&mut bin, 3, 2, g.as_slice().unwrap()).unwrap();
        assert_eq!(bin.len(), 4 + 16 + 6 * 8);
        let back = read_binary(&mut bin.as_slice()).unwrap();
        assert_eq!(back.to_vec().unwrap(), g.to_vec().unwrap());
        let mut csv = Vec::new();
        write_csv(&mut csv, 2, g.as_slice().unwrap()).unwrap();
        let back = read_csv(csv.as_slice()).unwrap();
        assert_eq!((back.rows(), back.cols()), (3, 2));
        assert_eq!(back.to_vec().unwrap(), g.to_vec().unwrap());
        assert!(read_binary(&mut &b"nope"[..]).is_err());
    }

    #[test]
    fn fuzz_sessions_agree_with_the_model() {
        for seed in 0..50 {
            for shape in [fuzz::Shape::OneD, fuzz::Shape::TwoD] {
                let r = fuzz::session(seed, shape, 200);
                assert_eq!(r.invariant_violations, 0);
                assert_eq!(r.model_mismatches, 0, "seed {seed} {shape:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn acquire_release_round_trips(start in 0usize..8, len in 1usize..8, reads in 0u32..3) {
            let mut a = LockedArray1D::zeros(16);
            let before: Vec<u32> = (0..16).map(|i| a.read_count(i)).collect();
            let r = Region::range(start, len);
            for _ in 0..reads {
                a.acquire_read(r).unwrap();
            }
            for _ in 0..reads {
                a.release_read(r).unwrap();
            }
            a.acquire_write(r).unwrap();
            prop_assert!(a.invariant_holds());
            a.release_write(r).unwrap();
            let after: Vec<u32> = (0..16).map(|i| a.read_count(i)).collect();
            prop_assert_eq!(before, after);
            prop_assert!(a.is_unlocked());
        }

        #[test]
        fn failed_operations_change_nothing(ops in proptest::collection::vec((0u8..4, 0usize..6, 1usize..4), 1..40)) {
            let mut a = LockedArray2D::zeros(3, 2);
            for (op, start, len) in ops {
                let r = Region::range(start, len);
                let locks = |a: &LockedArray2D| {
                    (0..3).flat_map(|i| (0..2).map(move |j| (i, j)))
                        .map(|(i, j)| (a.read_count(i, j), a.is_write_locked(i, j)))
                        .collect::<Vec<_>>()
                };
                let snapshot = locks(&a);
                let res = match op {
                    0 => a.acquire_read(r),
                    1 => a.release_read(r),
                    2 => a.acquire_write(r),
                    _ => a.release_write(r),
                };
                if res.is_err() {
                    prop_assert_eq!(snapshot, locks(&a));
                }
                prop_assert!(a.invariant_holds());
            }
        }
    }
}
