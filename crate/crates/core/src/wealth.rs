//! Wealth, income and portfolio structures and their gain in excess.
//!
//! Wealth is advanced in discounted form with left-point coefficients:
//!
//! ```text
//! D(i+1) = D(i) + (dGamma + pi'(sigma dW + (b + delta - r 1) dt)) / B(i),   X = B D
//! ```
//!
//! The gain in excess accumulates only the portfolio term,
//! `G = B * sum(pi'(sigma dW + (b + delta - r 1) dt) / B)`, and the deflated
//! process is `Y = H X - sum(H dGamma)`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::flow::{Ensemble, FlowPath};
use crate::linalg::DEFAULT_RANK_TOL;
use crate::market::{risk_price_from, Coefficients, MarketSpec};
use crate::noise::NoisePath;

type HoldingFn = Arc<dyn Fn(f64, &[f64], f64) -> Vec<f64> + Send + Sync>;
type DriftFn = Arc<dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync>;

/// Dollar holdings `pi(x, p, t)` in the stocks plus an income with drift
/// `b_gamma(x, p, t)` and volatility `sigma_gamma(x, p, t)`. The bond holding is
/// always `pi0 = X - pi' 1`.
#[derive(Clone)]
pub struct PortfolioRule {
    n: usize,
    d: usize,
    pi: HoldingFn,
    income_drift: Option<DriftFn>,
    income_vol: Option<HoldingFn>,
}

impl fmt::Debug for PortfolioRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PortfolioRule")
            .field("n", &self.n)
            .field("d", &self.d)
            .field("income", &self.has_income())
            .finish()
    }
}

impl PortfolioRule {
    pub fn new(n: usize, d: usize, pi: impl Fn(f64, &[f64], f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        PortfolioRule {
            n,
            d,
            pi: Arc::new(pi),
            income_drift: None,
            income_vol: None,
        }
    }

    /// Holds nothing but the bond.
    pub fn zero(n: usize, d: usize) -> Self {
        Self::new(n, d, move |_, _, _| vec![0.0; n])
    }

    pub fn with_income(
        mut self,
        drift: impl Fn(f64, &[f64], f64) -> f64 + Send + Sync + 'static,
        vol: impl Fn(f64, &[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.income_drift = Some(Arc::new(drift));
        self.income_vol = Some(Arc::new(vol));
        self
    }

    pub fn has_income(&self) -> bool {
        self.income_drift.is_some()
    }

    pub fn holdings(&self, x: f64, p: &[f64], t: f64) -> Vec<f64> {
        (self.pi)(x, p, t)
    }

    /// `(b_gamma, sigma_gamma)` at a point.
    pub fn income(&self, x: f64, p: &[f64], t: f64) -> (f64, Vec<f64>) {
        match (&self.income_drift, &self.income_vol) {
            (Some(b), Some(s)) => (b(x, p, t), s(x, p, t)),
            _ => (0.0, vec![0.0; self.d]),
        }
    }
}

/// The portfolio `pi = kappa(p, t)` that earns the arbitrage residual; zero when the market is
/// arbitrage free.
pub fn arbitrage_portfolio(m: &MarketSpec) -> PortfolioRule {
    let market = m.clone();
    let n = m.n();
    PortfolioRule::new(n, m.d(), move |_, p, t| match market.eval(p, t) {
        Ok(c) => match risk_price_from(&c, DEFAULT_RANK_TOL) {
            Ok(rp) => rp.kappa.iter().copied().collect(),
            Err(_) => vec![f64::NAN; n],
        },
        Err(_) => vec![f64::NAN; n],
    })
}

/// Wealth, income and derived processes along one flow path.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthIncomePath {
    pub times: Vec<f64>,
    pub x0: f64,
    pub wealth: Vec<f64>,
    pub income: Vec<f64>,
    /// Gain in excess, accumulated from the portfolio term.
    pub gain: Vec<f64>,
    /// `H X - sum(H dGamma)`.
    pub deflated: Vec<f64>,
    /// `sum(dGamma / B)`.
    pub discounted_income: Vec<f64>,
    /// `sum(H dGamma)`.
    pub deflated_income: Vec<f64>,
    /// Stock holdings per grid point, `n` per row.
    pub holdings: Vec<f64>,
}

impl WealthIncomePath {
    /// Bond holding `pi0 = X - pi' 1` at grid point `i`.
    pub fn bond_holding(&self, i: usize) -> f64 {
        let n = self.holdings.len() / self.times.len();
        self.wealth[i] - self.holdings[i * n..(i + 1) * n].iter().sum::<f64>()
    }
}

/// Offset of the flow's first grid point inside the noise grid.
pub(crate) fn noise_offset(noise: &NoisePath, flow: &FlowPath) -> Result<usize> {
    let k = noise.grid().index_of(flow.start())?;
    if noise.grid().len() - k < flow.len() || noise.dim() != flow.d() {
        return Err(invalid("noise path does not cover the flow grid"));
    }
    Ok(k)
}

/// Advances wealth from `x` along `flow` with the rule's holdings and income.
pub fn simulate_wealth(
    m: &MarketSpec,
    noise: &NoisePath,
    flow: &FlowPath,
    rule: &PortfolioRule,
    x: f64,
) -> Result<WealthIncomePath> {
    let (n, d) = (m.n(), m.d());
    if rule.n != n || rule.d != d || flow.n() != n {
        return Err(invalid("portfolio rule, market and flow dimensions differ"));
    }
    if !x.is_finite() {
        return Err(invalid("initial wealth must be finite"));
    }
    let k0 = noise_offset(noise, flow)?;
    let len = flow.len();
    let times = flow.times().to_vec();
    let b = flow.bond();
    let h = flow.h();
    let mut out = WealthIncomePath {
        times,
        x0: x,
        wealth: Vec::with_capacity(len),
        income: Vec::with_capacity(len),
        gain: Vec::with_capacity(len),
        deflated: Vec::with_capacity(len),
        discounted_income: Vec::with_capacity(len),
        deflated_income: Vec::with_capacity(len),
        holdings: Vec::with_capacity(len * n),
    };
    let (mut disc, mut gains_disc, mut inc_disc, mut inc_defl, mut gamma) = (x, 0.0, 0.0, 0.0, 0.0);
    let mut c = Coefficients::zeros(n, d);
    let mut xi = x;
    for i in 0..len {
        let t = out.times[i];
        let p = flow.price(i);
        out.wealth.push(xi);
        out.income.push(gamma);
        out.gain.push(b[i] * gains_disc);
        out.deflated.push(h[i] * xi - inc_defl);
        out.discounted_income.push(inc_disc);
        out.deflated_income.push(inc_defl);
        let pi = rule.holdings(xi, p, t);
        if pi.len() != n {
            return Err(invalid(format!("portfolio rule returned {} holdings, expected {n}", pi.len())));
        }
        out.holdings.extend_from_slice(&pi);
        if i + 1 == len {
            break;
        }
        m.eval_into(p, t, &mut c)?;
        let dt = out.times[i + 1] - t;
        let dw = noise.increment(k0 + i);
        let mut gains = 0.0;
        for k in 0..n {
            let shock: f64 = (0..d).map(|j| c.sigma[(k, j)] * dw[j]).sum();
            gains += pi[k] * (shock + (c.b[k] + c.delta[k] - c.r) * dt);
        }
        let (bg, sg) = rule.income(xi, p, t);
        let dgamma = bg * dt + sg.iter().zip(dw).map(|(a, w)| a * w).sum::<f64>();
        disc += (dgamma + gains) / b[i];
        gains_disc += gains / b[i];
        inc_disc += dgamma / b[i];
        inc_defl += h[i] * dgamma;
        gamma += dgamma;
        xi = b[i + 1] * disc;
        if !xi.is_finite() {
            return Err(Error::Explosion { time: out.times[i + 1] });
        }
    }
    Ok(out)
}

/// [`simulate_wealth`] over every path of an ensemble.
pub fn simulate_wealth_ensemble(
    m: &MarketSpec,
    ens: &Ensemble,
    rule: &PortfolioRule,
    x: f64,
) -> Result<Vec<WealthIncomePath>> {
    let res: Vec<Result<WealthIncomePath>> = ens
        .noises
        .par_iter()
        .zip(&ens.flows)
        .map(|(nz, fl)| simulate_wealth(m, nz, fl, rule, x))
        .collect();
    res.into_iter().collect()
}

/// Gain in excess from the wealth identity `G = X - x B - B sum(dGamma / B)`.
pub fn gain_in_excess(path: &WealthIncomePath, flow: &FlowPath) -> Result<Vec<f64>> {
    if flow.len() != path.wealth.len() {
        return Err(invalid("wealth path and flow have different grids"));
    }
    Ok(path
        .wealth
        .iter()
        .zip(flow.bond())
        .zip(&path.discounted_income)
        .map(|((x, b), i)| x - path.x0 * b - b * i)
        .collect())
}

/// Empirical state-tameness screen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TameReport {
    pub tame: bool,
    /// Smallest `H G` over every path and grid point.
    pub inf_hg: f64,
}

/// Default lower floor for `H G`.
pub const DEFAULT_TAME_FLOOR: f64 = -1e6;

/// Necessary-condition screen: the ensemble infimum of `H G` must stay above
/// `floor`. A finite sample cannot prove a uniform bound.
pub fn check_state_tame(paths: &[WealthIncomePath], flows: &[FlowPath], floor: f64) -> Result<TameReport> {
    if paths.len() != flows.len() {
        return Err(invalid("wealth and flow ensembles differ in size"));
    }
    let mut inf = f64::INFINITY;
    for (w, f) in paths.iter().zip(flows) {
        for (g, h) in w.gain.iter().zip(f.h()) {
            inf = inf.min(g * h);
        }
    }
    if paths.is_empty() {
        inf = 0.0;
    }
    Ok(TameReport { tame: inf > floor, inf_hg: inf })
}

/// Sign profile of `H G` at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpportunityReport {
    pub all_nonneg: bool,
    pub frac_positive: f64,
}

impl OpportunityReport {
    /// Nonnegative everywhere and positive with positive frequency.
    pub fn is_opportunity(&self) -> bool {
        self.all_nonneg && self.frac_positive > 0.0
    }
}

/// Empirical `P[H G >= 0]` and `P[H G > 0]` at time `t`.
pub fn check_arbitrage_opportunity(paths: &[WealthIncomePath], flows: &[FlowPath], t: f64) -> Result<OpportunityReport> {
    if paths.is_empty() || paths.len() != flows.len() {
        return Err(invalid("need matching, non-empty wealth and flow ensembles"));
    }
    let mut nonneg = true;
    let mut positive = 0usize;
    for (w, f) in paths.iter().zip(flows) {
        let i = f.index_of(t)?;
        let hg = w.gain[i] * f.h()[i];
        nonneg &= hg >= 0.0;
        if hg > 0.0 {
            positive += 1;
        }
    }
    Ok(OpportunityReport {
        all_nonneg: nonneg,
        frac_positive: positive as f64 / paths.len() as f64,
    })
}
