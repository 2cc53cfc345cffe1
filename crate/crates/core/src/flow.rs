//! Price flows: the augmented price `(P0, P1, ..., Pn)`, the bond `B`, the
//! exponential martingale `Z` and the deflator `H = Z / B` along a grid.
//!
//! The scheme is log-Euler with coefficients frozen at the left end of each
//! interval. Every price is updated multiplicatively,
//! `P <- P * exp(increment)`, so restarting from an intermediate state on the
//! same grid reproduces the path bit for bit. The shadow price takes the same
//! log increments as `H`, hence `P0 = p0 * H` up to rounding.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::linalg::DEFAULT_RANK_TOL;
use crate::market::{risk_price_from, Coefficients, MarketSpec, RiskPrice};
use crate::noise::{generate, NoisePath, TimeGrid};
use crate::stats::log_log_slope;

/// One simulated path of the augmented flow started at `(s, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPath {
    times: Vec<f64>,
    n: usize,
    d: usize,
    prices: Vec<f64>,
    bond: Vec<f64>,
    z: Vec<f64>,
    h: Vec<f64>,
    theta: Vec<f64>,
    max_kappa: f64,
    max_kappa_time: f64,
}

impl FlowPath {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Augmented price at grid point `i`.
    pub fn price(&self, i: usize) -> &[f64] {
        &self.prices[i * (self.n + 1)..(i + 1) * (self.n + 1)]
    }

    pub fn last_price(&self) -> &[f64] {
        self.price(self.len() - 1)
    }

    pub fn bond(&self) -> &[f64] {
        &self.bond
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    /// Market price of risk used on the interval starting at grid point `i`.
    pub fn theta(&self, i: usize) -> &[f64] {
        &self.theta[i * self.d..(i + 1) * self.d]
    }

    /// Largest `|kappa|` met along the path. Non-zero means the market admits
    /// arbitrage somewhere on this path.
    pub fn max_kappa_norm(&self) -> f64 {
        self.max_kappa
    }

    /// First grid time at which [`Self::max_kappa_norm`] is attained.
    pub fn max_kappa_time(&self) -> f64 {
        self.max_kappa_time
    }

    /// Position of time `t` on the path grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let eps = 1e-9 * self.times.last().unwrap().abs().max(1.0);
        self.times
            .iter()
            .position(|&u| (u - t).abs() <= eps)
            .ok_or_else(|| invalid(format!("time {t} is not on the flow grid")))
    }
}

/// Coefficients and risk prices per grid index, for markets whose
/// coefficients ignore the price state.
#[derive(Debug, Clone)]
pub struct StepCache {
    frames: Vec<(Coefficients, RiskPrice)>,
}

impl StepCache {
    /// `None` when the market reads the price state.
    pub fn build(m: &MarketSpec, grid: &TimeGrid) -> Result<Option<StepCache>> {
        if !m.state_free() {
            return Ok(None);
        }
        let p = m.p0();
        let frames = grid
            .times()
            .iter()
            .map(|&t| {
                let c = m.eval(p, t)?;
                let rp = risk_price_from(&c, DEFAULT_RANK_TOL)?;
                Ok((c, rp))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(StepCache { frames }))
    }
}

/// Simulates the flow from `(s, p)` to the end of the noise grid.
pub fn simulate_flow(m: &MarketSpec, noise: &NoisePath, s: f64, p: &[f64]) -> Result<FlowPath> {
    simulate_flow_cached(m, noise, s, p, None)
}

/// [`simulate_flow`] reusing per-step coefficients built on `noise.grid()`.
pub fn simulate_flow_cached(
    m: &MarketSpec,
    noise: &NoisePath,
    s: f64,
    p: &[f64],
    cache: Option<&StepCache>,
) -> Result<FlowPath> {
    let n = m.n();
    let d = m.d();
    if noise.dim() != d {
        return Err(invalid(format!("noise has {} factors, market has {d}", noise.dim())));
    }
    if p.len() != n + 1 || p.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(invalid("start price must be a positive vector of length n + 1"));
    }
    let grid = noise.grid();
    let k0 = grid.index_of(s)?;
    if let Some(c) = cache {
        if c.frames.len() != grid.len() {
            return Err(invalid("step cache was built for another grid"));
        }
    }
    let times: Vec<f64> = grid.times()[k0..].to_vec();
    let len = times.len();
    let mut prices = Vec::with_capacity(len * (n + 1));
    let mut bond = Vec::with_capacity(len);
    let mut zs = Vec::with_capacity(len);
    let mut hs = Vec::with_capacity(len);
    let mut theta = Vec::with_capacity(len * d);
    prices.extend_from_slice(p);
    bond.push(1.0);
    zs.push(1.0);
    hs.push(1.0);

    let mut cur: Vec<f64> = p.to_vec();
    let (mut b_acc, mut z_acc) = (1.0f64, 1.0f64);
    let mut max_kappa: f64 = 0.0;
    let mut max_kappa_time = times[0];
    let mut scratch = Coefficients::zeros(n, d);
    let mut owned_rp;

    for (j, &t) in times.iter().enumerate() {
        let gi = k0 + j;
        let (c, rp): (&Coefficients, &RiskPrice) = match cache {
            Some(cache) => {
                let f = &cache.frames[gi];
                (&f.0, &f.1)
            }
            None => {
                m.eval_into(&cur, t, &mut scratch)?;
                owned_rp = risk_price_from(&scratch, DEFAULT_RANK_TOL)?;
                (&scratch, &owned_rp)
            }
        };
        theta.extend(rp.theta.iter());
        let kn = rp.kappa.norm();
        if kn > max_kappa {
            max_kappa = kn;
            max_kappa_time = t;
        }
        if j + 1 == len {
            break;
        }
        let dt = grid.dt(gi);
        let dw = noise.increment(gi);
        for k in 0..n {
            let row = c.sigma.row(k);
            let mut var = 0.0;
            let mut shock = 0.0;
            for (jj, &dwj) in dw.iter().enumerate() {
                var += row[jj] * row[jj];
                shock += row[jj] * dwj;
            }
            cur[k + 1] *= ((c.b[k] - 0.5 * var) * dt + shock).exp();
        }
        let th2: f64 = rp.theta.iter().map(|x| x * x).sum();
        let th_dw: f64 = rp.theta.iter().zip(dw).map(|(a, b)| a * b).sum();
        let log_z = -0.5 * th2 * dt - th_dw;
        z_acc *= log_z.exp();
        b_acc *= (c.r * dt).exp();
        let h = z_acc / b_acc;
        cur[0] *= (log_z - c.r * dt).exp();
        let t_next = times[j + 1];
        if !(h > 0.0 && h.is_finite() && b_acc.is_finite()) || cur.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::Explosion { time: t_next });
        }
        prices.extend_from_slice(&cur);
        bond.push(b_acc);
        zs.push(z_acc);
        hs.push(h);
    }
    Ok(FlowPath {
        times,
        n,
        d,
        prices,
        bond,
        z: zs,
        h: hs,
        theta,
        max_kappa,
        max_kappa_time,
    })
}

/// Pointwise `H * values`.
pub fn deflate(flow: &FlowPath, values: &[f64]) -> Result<Vec<f64>> {
    if values.len() != flow.len() {
        return Err(invalid(format!(
            "{} values for a flow with {} grid points",
            values.len(),
            flow.len()
        )));
    }
    Ok(flow.h.iter().zip(values).map(|(h, v)| h * v).collect())
}

/// Paths sharing one market, grid, seed and start point.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub noises: Vec<NoisePath>,
    pub flows: Vec<FlowPath>,
    pub seed: u64,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn max_kappa_norm(&self) -> f64 {
        self.flows.iter().map(|f| f.max_kappa).fold(0.0, f64::max)
    }

    /// Largest `|kappa|` over the ensemble and the first time it occurs.
    pub fn worst_kappa(&self) -> (f64, f64) {
        let mut worst = (0.0, self.flows.first().map(|f| f.start()).unwrap_or(0.0));
        for f in &self.flows {
            if f.max_kappa > worst.0 {
                worst = (f.max_kappa, f.max_kappa_time);
            }
        }
        worst
    }

    /// Grid of the flows (shared by every path).
    pub fn times(&self) -> &[f64] {
        self.flows[0].times()
    }
}

/// Simulates paths `first..first + paths` from `(s, p)`.
pub fn simulate_ensemble_range(
    m: &MarketSpec,
    grid: &TimeGrid,
    seed: u64,
    first: u64,
    paths: usize,
    s: f64,
    p: &[f64],
) -> Result<Ensemble> {
    if paths == 0 {
        return Err(invalid("an ensemble needs at least one path"));
    }
    let cache = StepCache::build(m, grid)?;
    let results: Vec<Result<(NoisePath, FlowPath)>> = (0..paths as u64)
        .into_par_iter()
        .map(|k| {
            let noise = generate(grid, m.d(), seed, first + k)?;
            let flow = simulate_flow_cached(m, &noise, s, p, cache.as_ref())?;
            Ok((noise, flow))
        })
        .collect();
    let mut noises = Vec::with_capacity(paths);
    let mut flows = Vec::with_capacity(paths);
    for r in results {
        let (nz, fl) = r?;
        noises.push(nz);
        flows.push(fl);
    }
    Ok(Ensemble { noises, flows, seed })
}

/// Simulates `paths` paths from the market's own start `(0, p0)`.
pub fn simulate_ensemble(m: &MarketSpec, grid: &TimeGrid, seed: u64, paths: usize) -> Result<Ensemble> {
    simulate_ensemble_range(m, grid, seed, 0, paths, grid.start(), m.p0())
}

/// Result of the restart-consistency study.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    /// `max |P(s,t,p) - P(s_mid, t, P(s, s_mid, p))|` on the same grid and
    /// noise, over all paths and levels.
    pub max_abs_gap: f64,
    /// `(dt, mean defect)` per level: the coarse flow from `p` against the
    /// coarse flow restarted at `s_mid` from the reference-grid state.
    pub levels: Vec<(f64, f64)>,
    /// Log-log slope of the defect in `dt`; `None` when it is not identifiable.
    pub convergence_slope: Option<f64>,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Restart consistency `P(s,t,p) = P(s_mid, t, P(s, s_mid, p))`.
///
/// `noises` live on the reference (finest) grid. Each entry of `factors`
/// coarsens that grid by summing increments, so every level sees the same
/// Brownian path. The same-grid gap should vanish for any Markov scheme; the
/// defect against the reference state measures how fast the scheme's
/// dependence on the intermediate state converges.
pub fn check_consistency(
    m: &MarketSpec,
    noises: &[NoisePath],
    s: f64,
    s_mid: f64,
    t: f64,
    p: &[f64],
    factors: &[usize],
) -> Result<ConsistencyReport> {
    if !(s <= s_mid && s_mid <= t) {
        return Err(invalid(format!("need s <= s_mid <= t, got {s}, {s_mid}, {t}")));
    }
    if noises.is_empty() || factors.is_empty() {
        return Err(invalid("consistency study needs paths and levels"));
    }
    let per_path: Vec<Result<Vec<(f64, f64)>>> = noises
        .par_iter()
        .map(|noise| {
            let window = noise.restrict(s, t)?;
            let reference = simulate_flow(m, &window.restrict(s, s_mid)?, s, p)?;
            let ref_mid = reference.last_price().to_vec();
            factors
                .iter()
                .map(|&f| {
                    let coarse = window.coarsen(f)?;
                    let direct = simulate_flow(m, &coarse, s, p)?;
                    let k = direct.index_of(s_mid)?;
                    let restart_noise = coarse.restrict_after(s_mid)?;
                    let restart = simulate_flow(m, &restart_noise, s_mid, direct.price(k))?;
                    let gap = max_abs_diff(direct.last_price(), restart.last_price());
                    let from_ref = simulate_flow(m, &restart_noise, s_mid, &ref_mid)?;
                    let defect = max_abs_diff(direct.last_price(), from_ref.last_price());
                    Ok((gap, defect))
                })
                .collect()
        })
        .collect();
    let mut max_gap: f64 = 0.0;
    let mut sums = vec![0.0; factors.len()];
    for r in per_path {
        for (l, (gap, defect)) in r?.into_iter().enumerate() {
            max_gap = max_gap.max(gap);
            sums[l] += defect;
        }
    }
    let fine_dt = noises[0].grid().dt(noises[0].grid().index_of(s)?);
    let levels: Vec<(f64, f64)> = factors
        .iter()
        .zip(&sums)
        .map(|(&f, &sum)| (fine_dt * f as f64, sum / noises.len() as f64))
        .collect();
    let (dts, defects): (Vec<f64>, Vec<f64>) = levels.iter().copied().unzip();
    Ok(ConsistencyReport {
        max_abs_gap: max_gap,
        convergence_slope: log_log_slope(&dts, &defects),
        levels,
    })
}

/// Cocycle gap `|P(s, s+t, p)(w) - P(0, t, p)(shift(w, s))|` over every grid
/// point of the window, including `B`, `Z` and `H`.
pub fn check_cocycle(m: &MarketSpec, noise: &NoisePath, s: f64, t: f64, p: &[f64]) -> Result<f64> {
    if !m.autonomous() {
        return Err(Error::Unsupported(
            "cocycle check needs coefficients that do not read calendar time".into(),
        ));
    }
    if !noise.grid().is_uniform() {
        return Err(Error::Unsupported("cocycle check needs a uniform grid".into()));
    }
    let origin = noise.grid().start();
    let a = simulate_flow(m, &noise.restrict(s, s + t)?, s, p)?;
    let shifted = noise.shift(s - origin)?;
    let b_noise = shifted.restrict(origin, shifted.grid().times()[a.len() - 1])?;
    let b = simulate_flow(m, &b_noise, origin, p)?;
    if a.len() != b.len() {
        return Err(invalid("shifted window does not match the original window"));
    }
    let gap = max_abs_diff(&a.prices, &b.prices)
        .max(max_abs_diff(&a.bond, &b.bond))
        .max(max_abs_diff(&a.z, &b.z))
        .max(max_abs_diff(&a.h, &b.h));
    Ok(gap)
}
