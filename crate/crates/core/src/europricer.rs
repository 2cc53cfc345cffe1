//! European claims: deflated valuation, the representation integrand `phi`,
//! the hedge solving `sigma' pi = phi / H + X theta`, replication backtests and
//! the incompleteness witness.
//!
//! The deflated value `Y(i) = E[H(tau) g(P(tau)) - J(tau) | state(i)]` and the
//! integrand are estimated by cross-sectional regressions on the augmented
//! state (log prices, plus the accumulated deflated income when the claim pays
//! one). The augmented flow is Markov, so conditioning on the state is enough.

use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::claim::ClaimSpec;
use crate::error::{invalid, Error, Result};
use crate::flow::{Ensemble, FlowPath};
use crate::linalg::{self, kernel_projector, lemma1_selector, range_threshold, MatrixReal, VectorReal};
use crate::market::{Coefficients, MarketSpec};
use crate::regression::{BasisKind, Regression};
use crate::stats::Estimate;
use crate::noise::NoisePath;
use crate::wealth::{noise_offset, simulate_wealth, PortfolioRule, WealthIncomePath};

/// Largest `|kappa|` tolerated on an ensemble before pricing is refused.
pub const DEFAULT_KAPPA_TOL: f64 = 1e-8;
/// Relative residual above which a hedge is declared infeasible.
pub const DEFAULT_HEDGE_TOL: f64 = 1e-6;

/// Refuses ensembles on which the excess return has a kernel component.
pub fn screen_arbitrage(ens: &Ensemble, kappa_tol: f64) -> Result<()> {
    let (norm, time) = ens.worst_kappa();
    if norm > kappa_tol {
        return Err(Error::PricingRefused { kappa_norm: norm, time });
    }
    Ok(())
}

/// Deflated claim outcome on one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTarget {
    /// Grid index at which the claim expires.
    pub stop: usize,
    /// `H(tau) g(P(tau)) - J(tau)`.
    pub value: f64,
    /// Accumulated deflated income `J` at every grid point.
    pub income: Vec<f64>,
}

/// Stop index, deflated payoff and deflated income for every path.
pub fn deflated_targets(claim: &ClaimSpec, ens: &Ensemble) -> Result<Vec<PathTarget>> {
    ens.noises
        .par_iter()
        .zip(&ens.flows)
        .map(|(nz, fl)| {
            let stop = claim.stop_index(fl);
            let income = claim.deflated_income(fl, nz)?;
            let value = fl.h()[stop] * claim.payoff(fl.price(stop)) - income[stop];
            if !value.is_finite() {
                return Err(Error::ModelEvaluation {
                    what: format!("payoff of {}", claim.name()),
                    t: fl.times()[stop],
                });
            }
            Ok(PathTarget { stop, value, income })
        })
        .collect()
}

/// Price at the ensemble's start: the sample mean of the deflated payoff.
pub fn price_european(claim: &ClaimSpec, ens: &Ensemble, kappa_tol: f64) -> Result<Estimate> {
    screen_arbitrage(ens, kappa_tol)?;
    let targets = deflated_targets(claim, ens)?;
    let values: Vec<f64> = targets.iter().map(|t| t.value).collect();
    Ok(Estimate::from_sample(&values))
}

/// Regression features at grid point `i`: log of every augmented price, and
/// the accumulated deflated income when present.
pub fn state_features(flow: &FlowPath, i: usize, income: Option<f64>, out: &mut Vec<f64>) {
    out.extend(flow.price(i).iter().map(|x| x.ln()));
    if let Some(j) = income {
        out.push(j);
    }
}

/// Maximum over grid times of `|mean Y(i) - mean Y(0)| / SE`, where `values`
/// holds one path per row. A martingale keeps this below about 3.
pub fn martingale_screen(values: &[Vec<f64>]) -> f64 {
    let Some(len) = values.first().map(|v| v.len()) else {
        return 0.0;
    };
    let first: Vec<f64> = values.iter().map(|v| v[0]).collect();
    (1..len)
        .map(|i| {
            let col: Vec<f64> = values.iter().map(|v| v[i]).collect();
            let diff = Estimate::paired_difference(&col, &first);
            if diff.se > 0.0 {
                diff.mean.abs() / diff.se
            } else if diff.mean.abs() > 1e-12 * first[0].abs().max(1.0) {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Splits the state space into two regions fitted separately, as a function
/// of the augmented price.
pub type Split = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// Per-step fits of the deflated value and the representation integrand.
#[derive(Clone)]
pub struct Representation {
    times: Vec<f64>,
    d: usize,
    with_income: bool,
    driving: Option<Vec<usize>>,
    split: Option<Split>,
    /// Per grid step, fits for the regions `false` and `true` of the split.
    value: Vec<[Option<Regression>; 2]>,
    phi: Vec<[Option<Regression>; 2]>,
    /// Fitted value per path (rows) and grid point.
    fitted: Vec<Vec<f64>>,
    /// Accumulated martingale per path and grid point.
    martingale: Vec<Vec<f64>>,
    stops: Vec<usize>,
}

impl std::fmt::Debug for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Representation")
            .field("steps", &self.value.len())
            .field("d", &self.d)
            .field("with_income", &self.with_income)
            .field("driving", &self.driving)
            .field("split", &self.split.is_some())
            .finish()
    }
}

impl Representation {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Whether features include the accumulated deflated income.
    pub fn with_income(&self) -> bool {
        self.with_income
    }

    /// Fitted deflated value paths of the fitting ensemble.
    pub fn fitted(&self) -> &[Vec<f64>] {
        &self.fitted
    }

    /// Martingale built from the fitted increments; equals [`fitted`] for a
    /// single segment.
    ///
    /// [`fitted`]: Representation::fitted
    pub fn martingale(&self) -> &[Vec<f64>] {
        &self.martingale
    }

    pub fn stops(&self) -> &[usize] {
        &self.stops
    }

    fn region(&self, price: &[f64]) -> usize {
        self.split.as_ref().map(|s| usize::from(s(price))).unwrap_or(0)
    }

    /// `phi` at grid point `i` for an augmented price and accumulated deflated
    /// income. Zero where no fit exists.
    pub fn phi_at(&self, i: usize, price: &[f64], income: Option<f64>) -> Vec<f64> {
        let mut f = Vec::with_capacity(price.len() + 1);
        f.extend(price.iter().map(|x| x.ln()));
        f.extend(income);
        let mut out = match self.phi.get(i).and_then(|r| r[self.region(price)].as_ref()) {
            Some(reg) => reg.predict_all(&f),
            None => vec![0.0; self.d],
        };
        if let Some(set) = &self.driving {
            for (j, v) in out.iter_mut().enumerate() {
                if !set.contains(&j) {
                    *v = 0.0;
                }
            }
        }
        out
    }

    /// Fitted deflated value at grid point `i`.
    pub fn value_at(&self, i: usize, price: &[f64], income: Option<f64>) -> Option<f64> {
        let mut f: Vec<f64> = price.iter().map(|x| x.ln()).collect();
        f.extend(income);
        self.value
            .get(i)
            .and_then(|r| r[self.region(price)].as_ref())
            .map(|r| r.predict(&f, 0))
    }
}

/// Fits the representation of a deflated target `Y(tau)` that is stopped at
/// `stops` and whose income path is `income` (one row per path, or `None`).
pub fn fit_representation(
    ens: &Ensemble,
    stops: &[usize],
    terminal: &[f64],
    income: Option<&[Vec<f64>]>,
    driving: Option<Vec<usize>>,
    kind: BasisKind,
) -> Result<Representation> {
    if terminal.len() != ens.len() {
        return Err(invalid("representation inputs do not match the ensemble"));
    }
    fit_martingale(
        ens,
        stops,
        &|p, _| terminal[p],
        &|p, i| i + 1 == stops[p],
        income,
        driving,
        None,
        kind,
    )
}

/// Piecewise martingale fit. On each grid step `i < stop` the value
/// `V(i) = E[target(p, i) | state(i)]` is regressed, separately on the two
/// regions of `split` when one is given. A segment ends after step `i` when
/// `seg_end(p, i)` holds, and the next segment starts from the exact target.
/// The martingale accumulates `next - V(i)`, where `next` is the exact target
/// at a segment end and `V(i + 1)` otherwise.
#[allow(clippy::too_many_arguments)]
pub fn fit_martingale(
    ens: &Ensemble,
    stops: &[usize],
    target: &(dyn Fn(usize, usize) -> f64 + Sync),
    seg_end: &(dyn Fn(usize, usize) -> bool + Sync),
    income: Option<&[Vec<f64>]>,
    driving: Option<Vec<usize>>,
    split: Option<Split>,
    kind: BasisKind,
) -> Result<Representation> {
    let paths = ens.len();
    if paths == 0 || stops.len() != paths {
        return Err(invalid("representation inputs do not match the ensemble"));
    }
    if income.is_some_and(|j| j.len() != paths) {
        return Err(invalid("income paths do not match the ensemble"));
    }
    let times = ens.times().to_vec();
    let len = times.len();
    if stops.iter().any(|&s| s >= len) {
        return Err(invalid("stop index beyond the grid"));
    }
    let d = ens.flows[0].d();
    if let Some(set) = &driving {
        if set.iter().any(|&j| j >= d) {
            return Err(invalid(format!("driving factor out of range for d = {d}")));
        }
    }
    let k = ens.flows[0].n() + 1 + usize::from(income.is_some());
    let features_at = |i: usize, rows: &[usize]| -> Vec<f64> {
        let mut f = Vec::with_capacity(rows.len() * k);
        for &p in rows {
            state_features(&ens.flows[p], i, income.map(|j| j[p][i]), &mut f);
        }
        f
    };
    let region = |p: usize, i: usize| -> usize {
        split.as_ref().map(|s| usize::from(s(ens.flows[p].price(i)))).unwrap_or(0)
    };
    let rows_at = |i: usize, r: usize| -> Vec<usize> {
        (0..paths).filter(|&p| stops[p] > i && region(p, i) == r).collect()
    };
    let fit_step = |i: usize, targets: &dyn Fn(&[usize]) -> Vec<Vec<f64>>| -> Result<[Option<Regression>; 2]> {
        let mut out = [None, None];
        for (r, slot) in out.iter_mut().enumerate() {
            let rows = rows_at(i, r);
            if rows.is_empty() {
                continue;
            }
            let cols = targets(&rows);
            let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            *slot = Some(Regression::fit(&features_at(i, &rows), k, &refs, kind)?);
        }
        Ok(out)
    };

    let value: Vec<[Option<Regression>; 2]> = (0..len - 1)
        .into_par_iter()
        .map(|i| fit_step(i, &|rows| vec![rows.iter().map(|&p| target(p, i)).collect()]))
        .collect::<Result<_>>()?;

    // Fitted values, then the value each step moves to.
    let (fitted, next): (Vec<Vec<f64>>, Vec<Vec<f64>>) = (0..paths)
        .into_par_iter()
        .map(|p| {
            let stop = stops[p];
            let mut v = Vec::with_capacity(len);
            let mut f = Vec::with_capacity(k);
            for i in 0..stop {
                f.clear();
                state_features(&ens.flows[p], i, income.map(|j| j[p][i]), &mut f);
                let fit = value[i][region(p, i)].as_ref();
                v.push(fit.map(|r| r.predict(&f, 0)).unwrap_or_else(|| target(p, i)));
            }
            let nx: Vec<f64> = (0..stop)
                .map(|i| if seg_end(p, i) || i + 1 == stop { target(p, i) } else { v[i + 1] })
                .collect();
            v.resize(len, target(p, stop.saturating_sub(1)));
            (v, nx)
        })
        .unzip();

    let offsets: Vec<usize> = ens
        .noises
        .iter()
        .zip(&ens.flows)
        .map(|(nz, fl)| noise_offset(nz, fl))
        .collect::<Result<_>>()?;
    let phi: Vec<[Option<Regression>; 2]> = (0..len - 1)
        .into_par_iter()
        .map(|i| {
            let dt = times[i + 1] - times[i];
            fit_step(i, &|rows| {
                (0..d)
                    .map(|j| {
                        rows.iter()
                            .map(|&p| {
                                let dw = ens.noises[p].increment(offsets[p] + i)[j];
                                (next[p][i] - fitted[p][i]) * dw / dt
                            })
                            .collect()
                    })
                    .collect()
            })
        })
        .collect::<Result<_>>()?;

    let martingale: Vec<Vec<f64>> = fitted
        .iter()
        .zip(&next)
        .map(|(v, nx)| {
            let mut m = Vec::with_capacity(len);
            let mut acc = v[0];
            m.push(acc);
            for i in 1..len {
                if let Some(x) = nx.get(i - 1) {
                    acc += x - v[i - 1];
                }
                m.push(acc);
            }
            m
        })
        .collect();

    Ok(Representation {
        times,
        d,
        with_income: income.is_some(),
        driving,
        split,
        value,
        phi,
        fitted,
        martingale,
        stops: stops.to_vec(),
    })
}

/// Representation of a European claim on a fitting ensemble.
pub fn estimate_representation(claim: &ClaimSpec, ens: &Ensemble, kind: BasisKind) -> Result<Representation> {
    let targets = deflated_targets(claim, ens)?;
    let stops: Vec<usize> = targets.iter().map(|t| t.stop).collect();
    let terminal: Vec<f64> = targets.iter().map(|t| t.value).collect();
    let income: Option<Vec<Vec<f64>>> = claim
        .income()
        .map(|_| targets.into_iter().map(|t| t.income).collect());
    fit_representation(
        ens,
        &stops,
        &terminal,
        income.as_deref(),
        claim.driving().map(|s| s.to_vec()),
        kind,
    )
}

/// Solves `sigma' pi = phi / h + x theta` for the minimal-norm `pi`.
///
/// Fails with [`Error::HedgingInfeasible`] when the right-hand side is
/// farther than `tol * max(1, |rhs|)` from the range of `sigma'`.
pub fn hedge_step(c: &Coefficients, theta: &[f64], h: f64, x: f64, phi: &[f64], tol: f64, t: f64) -> Result<Vec<f64>> {
    let (n, d) = (c.sigma.nrows(), c.sigma.ncols());
    if theta.len() != d || phi.len() != d {
        return Err(invalid("integrand and market price of risk must have d components"));
    }
    let rhs = VectorReal::from_iterator(d, phi.iter().zip(theta).map(|(f, th)| f / h + x * th));
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::ModelEvaluation {
            what: "hedge right-hand side".into(),
            t,
        });
    }
    let (pi, residual) = if n == 1 {
        let row = c.sigma.row(0);
        let norm2 = row.norm_squared();
        let pi = if norm2 > 0.0 { row.iter().zip(rhs.iter()).map(|(s, r)| s * r).sum::<f64>() / norm2 } else { 0.0 };
        let res = row.iter().zip(rhs.iter()).map(|(s, r)| (s * pi - r).powi(2)).sum::<f64>().sqrt();
        (vec![pi], res)
    } else {
        let sol = linalg::min_norm_solution(&c.sigma.transpose(), &rhs, linalg::DEFAULT_RANK_TOL)?;
        (sol.solution.iter().copied().collect(), sol.residual)
    };
    if residual > range_threshold(tol, rhs.norm()) {
        return Err(Error::HedgingInfeasible { residual, time: t });
    }
    Ok(pi)
}

/// Hedge along one flow path: bond holdings `pi0 = X - pi' 1` and stock
/// holdings `pi` (one row per grid point) for a given wealth and integrand.
pub fn synthesize_hedge(
    m: &MarketSpec,
    flow: &FlowPath,
    x_path: &[f64],
    phi_path: &[Vec<f64>],
    tol: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let len = flow.len();
    if x_path.len() != len || phi_path.len() != len {
        return Err(invalid("wealth and integrand paths must cover the flow grid"));
    }
    let mut c = Coefficients::zeros(m.n(), m.d());
    let mut pi0 = Vec::with_capacity(len);
    let mut pis = Vec::with_capacity(len);
    for i in 0..len {
        let t = flow.times()[i];
        m.eval_into(flow.price(i), t, &mut c)?;
        let pi = hedge_step(&c, flow.theta(i), flow.h()[i], x_path[i], &phi_path[i], tol, t)?;
        pi0.push(x_path[i] - pi.iter().sum::<f64>());
        pis.push(pi);
    }
    Ok((pi0, pis))
}

/// Implied wealth `X = (Y + J) / H` and integrand along one path of the
/// fitting ensemble.
pub fn implied_path(rep: &Representation, ens: &Ensemble, income: Option<&[Vec<f64>]>, path: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    debug_assert_eq!(income.is_some(), rep.with_income, "income paths must match the fit");
    let flow = &ens.flows[path];
    let stop = rep.stops[path];
    let mut x = Vec::with_capacity(flow.len());
    let mut phi = Vec::with_capacity(flow.len());
    for i in 0..flow.len() {
        let j = income.map(|j| j[path][i]);
        x.push((rep.martingale[path][i] + j.unwrap_or(0.0)) / flow.h()[i]);
        if i < stop {
            phi.push(rep.phi_at(i, flow.price(i), j));
        } else {
            phi.push(vec![0.0; rep.d]);
        }
    }
    (x, phi)
}

/// Runs the hedge from `rep` as a self-financing strategy from wealth `x` on
/// every path of `ens`, with the claim's income paid into the wealth, and
/// hands each finished path to `inspect` together with its flow and stop index.
/// Holdings are zero from the stop index on.
pub fn run_hedge<T: Send>(
    m: &MarketSpec,
    claim: &ClaimSpec,
    rep: &Representation,
    ens: &Ensemble,
    x: f64,
    tol: f64,
    inspect: impl Fn(usize, &FlowPath, usize, &WealthIncomePath) -> T + Sync,
) -> Result<Vec<T>> {
    if ens.times() != rep.times() {
        return Err(invalid("hedging ensemble and representation use different grids"));
    }
    let rep = Arc::new(rep.clone());
    let (n, d) = (m.n(), m.d());
    (0..ens.len())
        .into_par_iter()
        .map(|path| {
            let (nz, fl) = (&ens.noises[path], &ens.flows[path]);
            let stop = claim.stop_index(fl);
            let income = match claim.income() {
                Some(_) => Some(claim.deflated_income(fl, nz)?),
                None => None,
            };
            let failure: Arc<Mutex<Option<Error>>> = Arc::new(Mutex::new(None));
            let rule = {
                let (rep, failure) = (rep.clone(), failure.clone());
                let times = fl.times().to_vec();
                let h = fl.h().to_vec();
                let thetas: Vec<Vec<f64>> = (0..fl.len()).map(|i| fl.theta(i).to_vec()).collect();
                let market = m.clone();
                PortfolioRule::new(n, d, move |x, p, t| {
                    let i = times.partition_point(|&s| s < t);
                    if i >= stop {
                        return vec![0.0; n];
                    }
                    let phi = rep.phi_at(i, p, income.as_ref().map(|j| j[i]));
                    match market
                        .eval(p, t)
                        .and_then(|c| hedge_step(&c, &thetas[i], h[i], x, &phi, tol, t))
                    {
                        Ok(pi) => pi,
                        Err(e) => {
                            failure.lock().expect("failure slot").get_or_insert(e);
                            vec![f64::NAN; n]
                        }
                    }
                })
            };
            let rule = match claim.income() {
                Some(inc) => {
                    let (b, s) = (inc.drift.clone(), inc.vol.clone());
                    rule.with_income(move |_, p, t| b(p, t), move |_, p, t| s(p, t))
                }
                None => rule,
            };
            let run = simulate_wealth(m, nz, fl, &rule, x);
            if let Some(e) = failure.lock().expect("failure slot").take() {
                return Err(e);
            }
            Ok(inspect(path, fl, stop, &run?))
        })
        .collect()
}

/// Integrand of `rep` along one path, evaluated at the path's own state.
pub fn phi_along(rep: &Representation, claim: &ClaimSpec, flow: &FlowPath, noise: &NoisePath) -> Result<Vec<Vec<f64>>> {
    let stop = claim.stop_index(flow);
    let income = match claim.income() {
        Some(_) => Some(claim.deflated_income(flow, noise)?),
        None => None,
    };
    Ok((0..flow.len())
        .map(|i| {
            if i >= stop {
                return vec![0.0; rep.d];
            }
            rep.phi_at(i, flow.price(i), income.as_ref().map(|j| j[i]))
        })
        .collect())
}

/// Outcome of a self-financing replication run.
#[derive(Debug, Clone, PartialEq)]
pub struct Backtest {
    /// Root mean square of `X(tau) - g(P(tau))`.
    pub terminal_rmse: f64,
    /// Mean of `X(tau) - g(P(tau))`.
    pub mean_error: f64,
    /// Stock holdings along the first path, one row per grid point.
    pub pi_path: Vec<Vec<f64>>,
    /// Integrand along the first path.
    pub phi_path: Vec<Vec<f64>>,
}

/// Runs the hedge from `rep` as a self-financing strategy from wealth `x` on
/// every path of `ens` (usually independent of the fitting ensemble) and
/// measures the terminal replication error.
pub fn replication_backtest(
    m: &MarketSpec,
    claim: &ClaimSpec,
    rep: &Representation,
    ens: &Ensemble,
    x: f64,
    tol: f64,
) -> Result<Backtest> {
    let n = m.n();
    let runs = run_hedge(m, claim, rep, ens, x, tol, |path, fl, stop, w| {
        let err = w.wealth[stop] - claim.payoff(fl.price(stop));
        let pi = (path == 0).then(|| w.holdings.chunks(n).map(|c| c.to_vec()).collect::<Vec<_>>());
        (err, pi)
    })?;
    let nf = runs.len() as f64;
    let errs: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let pi_path = runs.into_iter().next().and_then(|r| r.1).unwrap_or_default();
    Ok(Backtest {
        terminal_rmse: (errs.iter().map(|e| e * e).sum::<f64>() / nf).sqrt(),
        mean_error: errs.iter().sum::<f64>() / nf,
        pi_path,
        phi_path: phi_along(rep, claim, &ens.flows[0], &ens.noises[0])?,
    })
}

/// Price, hedge and replication quality of a European claim.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeReport {
    pub price: Estimate,
    /// Integrand along the first backtest path.
    pub phi_path: Vec<Vec<f64>>,
    /// Stock holdings along the first backtest path.
    pub pi_path: Vec<Vec<f64>>,
    pub replication_rmse: f64,
}

/// Prices on `fit`, estimates the representation there and backtests the
/// hedge on the independent ensemble `test`.
pub fn hedge_european(
    m: &MarketSpec,
    claim: &ClaimSpec,
    fit: &Ensemble,
    test: &Ensemble,
    kind: BasisKind,
    tol: f64,
) -> Result<HedgeReport> {
    let price = price_european(claim, fit, DEFAULT_KAPPA_TOL)?;
    screen_arbitrage(test, DEFAULT_KAPPA_TOL)?;
    let rep = estimate_representation(claim, fit, kind)?;
    let bt = replication_backtest(m, claim, &rep, test, price.mean, tol)?;
    Ok(HedgeReport {
        price,
        phi_path: bt.phi_path,
        pi_path: bt.pi_path,
        replication_rmse: bt.terminal_rmse,
    })
}

/// Direction of size `c` in the kernel of `sigma` restricted to `factors`,
/// embedded in `R^d`; `None` when that kernel is trivial.
pub fn kernel_direction(sigma: &MatrixReal, factors: &[usize], c: f64, tol: f64) -> Result<Option<VectorReal>> {
    let d = sigma.ncols();
    if factors.is_empty() || factors.iter().any(|&j| j >= d) {
        return Err(invalid(format!("factor set must be non-empty and below d = {d}")));
    }
    let block = MatrixReal::from_fn(sigma.nrows(), factors.len(), |r, k| sigma[(r, factors[k])]);
    let v = lemma1_selector(&kernel_projector(&block, tol)?, tol)?;
    let norm = v.norm();
    if norm == 0.0 {
        return Ok(None);
    }
    let mut out = VectorReal::zeros(d);
    for (k, &j) in factors.iter().enumerate() {
        out[j] = c * v[k] / norm;
    }
    Ok(Some(out))
}

/// The claim paying nothing at expiry whose income is `-psi / H`, so its
/// deflated value is `Y = int psi' dW` with `psi` orthogonal to the range of
/// `sigma'`. `p0_start` is the shadow price at the start of the paths.
pub fn witness_claim(m: &MarketSpec, factors: &[usize], c: f64, p0_start: f64, tol: f64) -> ClaimSpec {
    let market = m.clone();
    let factors = factors.to_vec();
    let d = m.d();
    let driving = factors.clone();
    ClaimSpec::constant(0.0)
        .named("witness")
        .with_income(
            |_, _| 0.0,
            move |p, t| {
                let psi = market
                    .eval(p, t)
                    .and_then(|co| kernel_direction(&co.sigma, &factors, c, tol))
                    .map(|v| v.map(|v| v.iter().copied().collect()).unwrap_or_else(|| vec![0.0; d]))
                    .unwrap_or_else(|_| vec![f64::NAN; d]);
                let h = p[0] / p0_start;
                psi.into_iter().map(|x| -x / h).collect()
            },
        )
        .driven_by(driving)
}

/// Verdict of the incompleteness witness.
#[derive(Debug, Clone)]
pub struct WitnessReport {
    pub claim: ClaimSpec,
    pub hedgeable: bool,
    /// Residual of the hedge equation at the first failing grid time.
    pub residual: f64,
    pub time: f64,
    /// `psi` along the path.
    pub psi_path: Vec<Vec<f64>>,
}

/// Builds the witness claim on one path and tries to hedge it. Its integrand
/// is known exactly (`phi = psi`, wealth `X = 0`), so the verdict does not
/// depend on a regression.
pub fn incompleteness_witness(
    m: &MarketSpec,
    flow: &FlowPath,
    factors: &[usize],
    c: f64,
    tol: f64,
) -> Result<WitnessReport> {
    let rank_tol = linalg::DEFAULT_RANK_TOL;
    let mut co = Coefficients::zeros(m.n(), m.d());
    let mut psi_path = Vec::with_capacity(flow.len());
    let mut deficient = false;
    for i in 0..flow.len() {
        m.eval_into(flow.price(i), flow.times()[i], &mut co)?;
        match kernel_direction(&co.sigma, factors, c, rank_tol)? {
            Some(v) => {
                deficient = true;
                psi_path.push(v.iter().copied().collect::<Vec<f64>>());
            }
            None => psi_path.push(vec![0.0; m.d()]),
        }
    }
    if !deficient {
        return Err(Error::WitnessUnavailable);
    }
    let claim = witness_claim(m, factors, c, flow.price(0)[0], rank_tol);
    let x_path = vec![0.0; flow.len()];
    let (hedgeable, residual, time) = match synthesize_hedge(m, flow, &x_path, &psi_path, tol) {
        Ok(_) => (true, 0.0, flow.times()[flow.len() - 1]),
        Err(Error::HedgingInfeasible { residual, time }) => (false, residual, time),
        Err(e) => return Err(e),
    };
    Ok(WitnessReport {
        claim,
        hedgeable,
        residual,
        time,
        psi_path,
    })
}

/// Hedges a claim along one path of `ens` with the fitted integrand; used to
/// expose infeasibility of claims driven by unspanned factors.
pub fn hedge_along(
    m: &MarketSpec,
    claim: &ClaimSpec,
    rep: &Representation,
    ens: &Ensemble,
    path: usize,
    tol: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if path >= ens.len() {
        return Err(invalid(format!("path {path} outside an ensemble of {}", ens.len())));
    }
    let income = match claim.income() {
        Some(_) => {
            let mut rows = vec![Vec::new(); ens.len()];
            rows[path] = claim.deflated_income(&ens.flows[path], &ens.noises[path])?;
            Some(rows)
        }
        None => None,
    };
    let (x, phi) = implied_path(rep, ens, income.as_deref(), path);
    synthesize_hedge(m, &ens.flows[path], &x, &phi, tol)
}
