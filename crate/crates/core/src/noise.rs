//! Grid-based Brownian increments with counter-based seeding.
//!
//! A path is a pure function of `(grid, d, seed, path_index)`: the master seed
//! selects a ChaCha key and the path index selects the stream, so path `k`
//! comes out the same whether it is generated first, last, or on another
//! thread.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

/// Relative slack used when matching a requested time against grid points.
const TIME_EPS: f64 = 1e-9;

/// Strictly increasing simulation times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(invalid("time grid is empty"));
        }
        if times.iter().any(|t| !t.is_finite()) || times[0] < 0.0 {
            return Err(invalid("time grid must be finite and start at t >= 0"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("time grid must be strictly increasing"));
        }
        Ok(Self { times })
    }

    /// `steps` equal intervals on `[start, end]`. The last point is `end` exactly.
    pub fn uniform(start: f64, end: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(end > start) {
            return Err(invalid(format!(
                "uniform grid needs steps >= 1 and end > start (got {steps}, [{start}, {end}])"
            )));
        }
        let h = (end - start) / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|k| start + k as f64 * h).collect();
        times[steps] = end;
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of intervals.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("grid is never empty")
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    fn eps(&self) -> f64 {
        TIME_EPS * self.end().abs().max(1.0)
    }

    /// Index of the grid point equal to `s` (up to rounding).
    pub fn index_of(&self, s: f64) -> Result<usize> {
        let eps = self.eps();
        let k = self.times.partition_point(|&t| t < s - eps);
        match self.times.get(k) {
            Some(&t) if (t - s).abs() <= eps => Ok(k),
            _ => Err(invalid(format!("time {s} is not a grid point"))),
        }
    }

    pub fn is_uniform(&self) -> bool {
        if self.steps() <= 1 {
            return true;
        }
        let h = self.dt(0);
        (1..self.steps()).all(|i| (self.dt(i) - h).abs() <= 1e-9 * h)
    }

    /// Keeps every `factor`-th point. Requires `steps` divisible by `factor`.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps() % factor != 0 {
            return Err(invalid(format!("cannot coarsen {} steps by {factor}", self.steps())));
        }
        Ok(Self {
            times: self.times.iter().step_by(factor).copied().collect(),
        })
    }
}

/// Brownian increments over a grid, row-major `[interval][component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    grid: TimeGrid,
    d: usize,
    increments: Vec<f64>,
    seed: u64,
    path_index: u64,
}

/// Draws the increments of path `path_index`.
pub fn generate(grid: &TimeGrid, d: usize, seed: u64, path_index: u64) -> Result<NoisePath> {
    if d == 0 {
        return Err(invalid("noise dimension must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    let mut increments = Vec::with_capacity(grid.steps() * d);
    for i in 0..grid.steps() {
        let sd = grid.dt(i).sqrt();
        for _ in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            increments.push(z * sd);
        }
    }
    Ok(NoisePath {
        grid: grid.clone(),
        d,
        increments,
        seed,
        path_index,
    })
}

impl NoisePath {
    /// Builds a path from explicit increments (one `d`-block per interval).
    pub fn from_increments(grid: TimeGrid, d: usize, increments: Vec<f64>) -> Result<Self> {
        if d == 0 || increments.len() != grid.steps() * d {
            return Err(invalid(format!(
                "expected {} increments for {} intervals of dimension {d}",
                grid.steps() * d,
                grid.steps()
            )));
        }
        if increments.iter().any(|x| !x.is_finite()) {
            return Err(invalid("increments must be finite"));
        }
        Ok(Self {
            grid,
            d,
            increments,
            seed: 0,
            path_index: 0,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// Increment over `[t_i, t_{i+1}]`.
    pub fn increment(&self, i: usize) -> &[f64] {
        &self.increments[i * self.d..(i + 1) * self.d]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W(t_i) - W(t_0)` at every grid point.
    pub fn cumulative(&self) -> Vec<Vec<f64>> {
        let mut w = vec![0.0; self.d];
        let mut out = Vec::with_capacity(self.grid.len());
        out.push(w.clone());
        for i in 0..self.grid.steps() {
            for (wj, dw) in w.iter_mut().zip(self.increment(i)) {
                *wj += dw;
            }
            out.push(w.clone());
        }
        out
    }

    fn slice_from(&self, k: usize, end: usize, times: Vec<f64>) -> NoisePath {
        NoisePath {
            grid: TimeGrid { times },
            d: self.d,
            increments: self.increments[k * self.d..end * self.d].to_vec(),
            seed: self.seed,
            path_index: self.path_index,
        }
    }

    /// The two-parameter restriction `W_s(u) = W(u) - W(s)`: same increments,
    /// grid starting at `s`. At `s = T` the result has no intervals.
    pub fn restrict_after(&self, s: f64) -> Result<NoisePath> {
        let k = self.grid.index_of(s)?;
        let steps = self.grid.steps();
        Ok(self.slice_from(k, steps, self.grid.times[k..].to_vec()))
    }

    /// Restriction to the window `[s, t]`.
    pub fn restrict(&self, s: f64, t: f64) -> Result<NoisePath> {
        let k = self.grid.index_of(s)?;
        let e = self.grid.index_of(t)?;
        if e < k {
            return Err(invalid(format!("window [{s}, {t}] is reversed")));
        }
        Ok(self.slice_from(k, e, self.grid.times[k..=e].to_vec()))
    }

    /// Time shift by `s`: the increments after `s` replayed from the grid's
    /// origin, so the interval `[t_i - s, t_{i+1} - s]` carries the original
    /// increment over `[t_i, t_{i+1}]`.
    pub fn shift(&self, s: f64) -> Result<NoisePath> {
        if !self.grid.is_uniform() {
            return Err(Error::Unsupported("shift requires a uniform grid".into()));
        }
        let k = self.grid.index_of(s)?;
        let origin = self.grid.start();
        let h = if self.grid.steps() > 0 { self.grid.dt(0) } else { 0.0 };
        let count = self.grid.len() - k;
        // Rebuilt from the step size so repeated shifts stay on the same lattice.
        let times = (0..count).map(|j| origin + j as f64 * h).collect();
        Ok(self.slice_from(k, self.grid.steps(), times))
    }

    /// Sums consecutive increments in blocks of `factor` (same Brownian path on
    /// the coarser grid).
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        let grid = self.grid.coarsen(factor)?;
        let mut increments = vec![0.0; grid.steps() * self.d];
        for i in 0..self.grid.steps() {
            let c = i / factor;
            for j in 0..self.d {
                increments[c * self.d + j] += self.increments[i * self.d + j];
            }
        }
        Ok(NoisePath {
            grid,
            d: self.d,
            increments,
            seed: self.seed,
            path_index: self.path_index,
        })
    }

    /// Binary dump: magic `TAMENOIS`, then little-endian `u32` version, `u32` d,
    /// `u64` seed, `u64` path index, `u64` number of grid times, the times as
    /// `f64`, and finally the increments row-major as `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.d as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.path_index.to_le_bytes())?;
        w.write_all(&(self.grid.len() as u64).to_le_bytes())?;
        for t in &self.grid.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for x in &self.increments {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<NoisePath> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(invalid("not a noise dump"));
        }
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(invalid(format!("unsupported noise dump version {version}")));
        }
        let d = read_u32(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let path_index = read_u64(&mut r)?;
        let len = read_u64(&mut r)? as usize;
        let times = (0..len).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let grid = TimeGrid::new(times)?;
        let increments = (0..grid.steps() * d)
            .map(|_| read_f64(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let mut path = NoisePath::from_increments(grid, d, increments)?;
        path.seed = seed;
        path.path_index = path_index;
        Ok(path)
    }
}

const MAGIC: &[u8; 8] = b"TAMENOIS";

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}
