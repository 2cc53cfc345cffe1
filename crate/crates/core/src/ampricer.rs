//! American (Bermudan) claims on a finite set of exercise dates.
//!
//! Exercise decisions come from least-squares regressions of realised
//! deflated cash flows on the augmented state, fitted on in-the-money paths
//! only. The induced rule is then evaluated on an independent ensemble, which
//! gives a lower bound. Alongside it the regression envelope
//! `U(e) = max(Z(e), E[U(e+1) | state])` gives a value that is biased high.
//!
//! All rules here read only the date and the current augmented state (plus,
//! for a combined rule, which of its two parents fired first), so the stopping
//! families they induce are consistent under restarts.

use std::sync::Arc;

use rayon::prelude::*;

use crate::claim::ClaimSpec;
use crate::error::{invalid, Error, Result};
use crate::europricer::{fit_martingale, phi_along, run_hedge, screen_arbitrage, state_features, synthesize_hedge, Representation};
use crate::flow::Ensemble;
use crate::market::MarketSpec;
use crate::regression::{BasisKind, Regression};
use crate::stats::{log_log_slope, Estimate};

/// Deflated exercise values and regression features at the exercise dates.
#[derive(Debug, Clone)]
pub struct ExerciseData {
    /// Grid indices of the exercise dates.
    dates: Vec<usize>,
    times: Vec<f64>,
    k: usize,
    paths: usize,
    /// `paths x dates x k`.
    features: Vec<f64>,
    /// `paths x dates`: `H g - J`.
    z: Vec<f64>,
    /// `paths x dates`: whether exercise pays anything.
    itm: Vec<bool>,
    /// First price component after the shadow price, for boundary tables.
    lead: Vec<f64>,
    /// Number of exercise dates strictly before each path's expiry.
    cut: Vec<usize>,
    /// Deflated value received at expiry.
    z_expiry: Vec<f64>,
}

impl ExerciseData {
    /// Collects exercise data for `claim` on `ens` at grid indices `dates`.
    pub fn build(claim: &ClaimSpec, ens: &Ensemble, dates: &[usize]) -> Result<ExerciseData> {
        let len = ens.times().len();
        if dates.is_empty() || dates.windows(2).any(|w| w[0] >= w[1]) || dates[dates.len() - 1] >= len {
            return Err(invalid("exercise dates must be increasing grid indices"));
        }
        let k = ens.flows[0].n() + 1 + usize::from(claim.income().is_some());
        let nd = dates.len();
        let rows: Vec<Result<(Vec<f64>, Vec<f64>, Vec<bool>, Vec<f64>, usize, f64)>> = ens
            .noises
            .par_iter()
            .zip(&ens.flows)
            .map(|(nz, fl)| {
                let stop = claim.stop_index(fl);
                let j = claim.deflated_income(fl, nz)?;
                let mut feats = vec![0.0; nd * k];
                let mut z = vec![0.0; nd];
                let mut itm = vec![false; nd];
                let mut lead = vec![0.0; nd];
                let mut cut = 0;
                let mut f = Vec::with_capacity(k);
                for (e, &i) in dates.iter().enumerate() {
                    if i >= stop {
                        break;
                    }
                    f.clear();
                    state_features(fl, i, claim.income().map(|_| j[i]), &mut f);
                    feats[e * k..(e + 1) * k].copy_from_slice(&f);
                    let g = claim.payoff(fl.price(i));
                    z[e] = fl.h()[i] * g - j[i];
                    itm[e] = g > 0.0;
                    lead[e] = fl.price(i).get(1).copied().unwrap_or(f64::NAN);
                    cut = e + 1;
                }
                let z_exp = fl.h()[stop] * claim.payoff(fl.price(stop)) - j[stop];
                if !z_exp.is_finite() || z.iter().any(|v| !v.is_finite()) {
                    return Err(Error::ModelEvaluation {
                        what: format!("payoff of {}", claim.name()),
                        t: fl.times()[stop],
                    });
                }
                Ok((feats, z, itm, lead, cut, z_exp))
            })
            .collect();
        let paths = ens.len();
        let mut data = ExerciseData {
            dates: dates.to_vec(),
            times: dates.iter().map(|&i| ens.times()[i]).collect(),
            k,
            paths,
            features: Vec::with_capacity(paths * nd * k),
            z: Vec::with_capacity(paths * nd),
            itm: Vec::with_capacity(paths * nd),
            lead: Vec::with_capacity(paths * nd),
            cut: Vec::with_capacity(paths),
            z_expiry: Vec::with_capacity(paths),
        };
        for r in rows {
            let (f, z, itm, lead, cut, ze) = r?;
            data.features.extend(f);
            data.z.extend(z);
            data.itm.extend(itm);
            data.lead.extend(lead);
            data.cut.push(cut);
            data.z_expiry.push(ze);
        }
        Ok(data)
    }

    /// Exercise data from raw arrays: `features` is `paths x dates x k`,
    /// `z` and `itm` are `paths x dates`, `cut[p]` counts the exercisable
    /// dates of path `p` and `z_expiry[p]` is what it receives at expiry.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        times: Vec<f64>,
        k: usize,
        features: Vec<f64>,
        z: Vec<f64>,
        itm: Vec<bool>,
        cut: Vec<usize>,
        z_expiry: Vec<f64>,
    ) -> Result<ExerciseData> {
        let nd = times.len();
        let paths = cut.len();
        if features.len() != paths * nd * k || z.len() != paths * nd || itm.len() != paths * nd || z_expiry.len() != paths {
            return Err(invalid("exercise data arrays have inconsistent sizes"));
        }
        if cut.iter().any(|&c| c > nd) {
            return Err(invalid("exercisable date count exceeds the dates"));
        }
        Ok(ExerciseData {
            dates: (0..nd).collect(),
            times,
            k,
            paths,
            features,
            lead: vec![f64::NAN; paths * nd],
            z,
            itm,
            cut,
            z_expiry,
        })
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn dates(&self) -> &[usize] {
        &self.dates
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn cut(&self, path: usize) -> usize {
        self.cut[path]
    }

    pub fn features(&self, path: usize, e: usize) -> &[f64] {
        let at = (path * self.dates.len() + e) * self.k;
        &self.features[at..at + self.k]
    }

    pub fn z(&self, path: usize, e: usize) -> f64 {
        self.z[path * self.dates.len() + e]
    }

    pub fn itm(&self, path: usize, e: usize) -> bool {
        self.itm[path * self.dates.len() + e]
    }

    /// Deflated value when stopping at date position `e`; positions at or
    /// past the path's cut mean expiry.
    pub fn value(&self, path: usize, e: usize) -> f64 {
        if e < self.cut[path] {
            self.z(path, e)
        } else {
            self.z_expiry[path]
        }
    }

    fn fit_on(&self, e: usize, rows: &[usize], target: &[f64], kind: BasisKind) -> Result<Regression> {
        let mut f = Vec::with_capacity(rows.len() * self.k);
        for &p in rows {
            f.extend_from_slice(self.features(p, e));
        }
        Regression::fit(&f, self.k, &[target], kind)
    }
}

/// A rule that picks a stopping position (an index into the exercise dates,
/// or the path's cut for expiry) on each path.
pub trait StoppingRule: Send + Sync {
    fn stop_position(&self, data: &ExerciseData, path: usize) -> usize;
}

/// Stops at the first exercise date.
#[derive(Debug, Clone, Copy)]
pub struct Immediate;

impl StoppingRule for Immediate {
    fn stop_position(&self, _: &ExerciseData, _: usize) -> usize {
        0
    }
}

/// Holds to expiry.
#[derive(Debug, Clone, Copy)]
pub struct Never;

impl StoppingRule for Never {
    fn stop_position(&self, data: &ExerciseData, path: usize) -> usize {
        data.cut(path)
    }
}

/// Exercise where the deflated payoff is positive-paying and at least the
/// regressed continuation value.
#[derive(Debug, Clone)]
pub struct SnellRule {
    fits: Arc<Vec<Option<Regression>>>,
}

impl SnellRule {
    /// Continuation estimate at date position `e`, if a fit exists there.
    pub fn continuation(&self, e: usize, features: &[f64]) -> Option<f64> {
        self.fits.get(e).and_then(|r| r.as_ref()).map(|r| r.predict(features, 0))
    }
}

impl StoppingRule for SnellRule {
    fn stop_position(&self, data: &ExerciseData, path: usize) -> usize {
        (0..data.cut(path))
            .find(|&e| {
                data.itm(path, e)
                    && self
                        .continuation(e, data.features(path, e))
                        .is_some_and(|c| data.z(path, e) >= c)
            })
            .unwrap_or(data.cut(path))
    }
}

/// Combination of two rules: at the earlier of their stops, stop when the
/// immediate value beats the regressed value at the later stop, otherwise
/// wait for the later one.
#[derive(Clone)]
pub struct CombinedRule {
    first: Arc<dyn StoppingRule>,
    second: Arc<dyn StoppingRule>,
    /// Per parent and date, the regressed value of following that parent
    /// from a date it has not yet stopped at.
    fits: Arc<[Vec<Option<Regression>>; 2]>,
}

impl StoppingRule for CombinedRule {
    fn stop_position(&self, data: &ExerciseData, path: usize) -> usize {
        let a = self.first.stop_position(data, path);
        let b = self.second.stop_position(data, path);
        let (lo, hi) = (a.min(b), a.max(b));
        if lo == hi || lo >= data.cut(path) {
            return lo;
        }
        let later = usize::from(b > a);
        match self.fits[later].get(lo).and_then(|r| r.as_ref()) {
            Some(r) if data.z(path, lo) >= r.predict(data.features(path, lo), 0) => lo,
            _ => hi,
        }
    }
}

/// Value of a rule: mean deflated payoff at its stopping positions.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingOutcome {
    pub estimate: Estimate,
    pub positions: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn evaluate_stopping(data: &ExerciseData, rule: &dyn StoppingRule) -> StoppingOutcome {
    let positions: Vec<usize> = (0..data.paths())
        .into_par_iter()
        .map(|p| rule.stop_position(data, p))
        .collect();
    let values: Vec<f64> = positions.iter().enumerate().map(|(p, &e)| data.value(p, e)).collect();
    StoppingOutcome {
        estimate: Estimate::from_sample(&values),
        positions,
        values,
    }
}

/// Regressions of `E[Y(tau) | state(e)]` over paths the rule has not
/// stopped by `e`, built backwards with one-step targets.
fn rule_value_fits(pos: &[usize], data: &ExerciseData, kind: BasisKind) -> Result<Vec<Option<Regression>>> {
    let nd = data.dates().len();
    let mut fits: Vec<Option<Regression>> = vec![None; nd];
    for e in (0..nd).rev() {
        let rows: Vec<usize> = (0..data.paths()).filter(|&p| pos[p] > e && e < data.cut(p)).collect();
        if rows.is_empty() {
            continue;
        }
        let target: Vec<f64> = rows
            .iter()
            .map(|&p| match &fits.get(e + 1) {
                Some(Some(r)) if pos[p] > e + 1 => r.predict(data.features(p, e + 1), 0),
                _ => data.value(p, pos[p]),
            })
            .collect();
        fits[e] = Some(match data.fit_on(e, &rows, &target, kind) {
            Err(Error::DegenerateBasis(_)) => data.fit_on(e, &rows, &target, BasisKind::Polynomial { degree: 0 })?,
            r => r?,
        });
    }
    Ok(fits)
}

/// Builds the combined rule of two parents from regressions on `data`.
pub fn combine_stopping(
    first: Arc<dyn StoppingRule>,
    second: Arc<dyn StoppingRule>,
    data: &ExerciseData,
    kind: BasisKind,
) -> Result<CombinedRule> {
    let pos = |rule: &Arc<dyn StoppingRule>| -> Vec<usize> { (0..data.paths()).map(|p| rule.stop_position(data, p)).collect() };
    let fits = [rule_value_fits(&pos(&first), data, kind)?, rule_value_fits(&pos(&second), data, kind)?];
    Ok(CombinedRule {
        first,
        second,
        fits: Arc::new(fits),
    })
}

/// One row of the exercise boundary table: the range of the first stock price
/// over paths the rule exercises at a date.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryRow {
    pub time: f64,
    pub exercised: usize,
    pub lead_min: f64,
    pub lead_max: f64,
}

/// Regression Snell envelope of an American claim.
#[derive(Debug, Clone)]
pub struct SnellEnvelope {
    /// Induced rule evaluated on the independent ensemble.
    pub lower: Estimate,
    /// Regression envelope value at the root (biased high).
    pub regression: Estimate,
    /// Induced rule on the fitting ensemble.
    pub in_sample: Estimate,
    pub rule: SnellRule,
    /// `U` per path of the fitting ensemble at every date position, with one
    /// extra column for expiry. Stopped paths keep their expiry value.
    pub envelope: Vec<Vec<f64>>,
    /// `M(0) = U(0)`, `M(e+1) = M(e) + U(e+1) - E[U(e+1) | state(e)]`; laid
    /// out like `envelope`, so `M >= U >= Z` by construction.
    pub martingale: Vec<Vec<f64>>,
    /// Regressions of `U(e+1)` over live paths that are out of and in the
    /// money at `e`.
    pub continuation: Vec<[Option<Regression>; 2]>,
    pub boundary: Vec<BoundaryRow>,
    pub data: ExerciseData,
}

impl SnellEnvelope {
    /// Point estimate of the value: the lower bound.
    pub fn value(&self) -> f64 {
        self.lower.mean
    }
}

/// Prices an American claim exercisable at grid indices `dates`: decision
/// regressions on `fit`, lower bound on `eval`.
pub fn price_american(
    claim: &ClaimSpec,
    fit: &Ensemble,
    eval: &Ensemble,
    dates: &[usize],
    kind: BasisKind,
    kappa_tol: f64,
) -> Result<SnellEnvelope> {
    screen_arbitrage(fit, kappa_tol)?;
    screen_arbitrage(eval, kappa_tol)?;
    if fit.times() != eval.times() {
        return Err(invalid("fitting and evaluation ensembles use different grids"));
    }
    let data = ExerciseData::build(claim, fit, dates)?;
    let nd = dates.len();
    let paths = data.paths();

    let mut cash: Vec<f64> = data.z_expiry.clone();
    let mut tau: Vec<usize> = data.cut.clone();
    let mut envelope = vec![vec![0.0; nd + 1]; paths];
    for (p, row) in envelope.iter_mut().enumerate() {
        let c = data.cut(p);
        row[c..].iter_mut().for_each(|v| *v = data.z_expiry[p]);
    }
    let mut fits: Vec<Option<Regression>> = vec![None; nd];
    let mut continuation: Vec<[Option<Regression>; 2]> = vec![[None, None]; nd];
    let mut cont_value = vec![vec![0.0; nd]; paths];

    for e in (0..nd).rev() {
        let alive: Vec<usize> = (0..paths).filter(|&p| data.cut(p) > e).collect();
        if alive.is_empty() {
            continue;
        }
        // Continuation of the envelope, fitted separately where exercise pays
        // and where it does not. The region is a function of the state, so
        // this is a regression on a richer basis and keeps `M` a martingale.
        for (side, slot) in continuation[e].iter_mut().enumerate() {
            let rows: Vec<usize> = alive.iter().copied().filter(|&p| usize::from(data.itm(p, e)) == side).collect();
            if rows.is_empty() {
                continue;
            }
            let next: Vec<f64> = rows.iter().map(|&p| envelope[p][e + 1]).collect();
            let reg = data.fit_on(e, &rows, &next, kind)?;
            for &p in &rows {
                let c = reg.predict(data.features(p, e), 0);
                cont_value[p][e] = c;
                envelope[p][e] = data.z(p, e).max(c);
            }
            *slot = Some(reg);
        }

        let itm: Vec<usize> = alive.iter().copied().filter(|&p| data.itm(p, e)).collect();
        if itm.is_empty() {
            continue;
        }
        let realised: Vec<f64> = itm.iter().map(|&p| cash[p]).collect();
        let reg = data.fit_on(e, &itm, &realised, kind)?;
        for &p in &itm {
            if data.z(p, e) >= reg.predict(data.features(p, e), 0) {
                cash[p] = data.z(p, e);
                tau[p] = e;
            }
        }
        fits[e] = Some(reg);
    }

    let martingale: Vec<Vec<f64>> = (0..paths)
        .map(|p| {
            let mut m = Vec::with_capacity(nd + 1);
            let mut acc = envelope[p][0];
            m.push(acc);
            for e in 0..nd {
                if e < data.cut(p) {
                    acc += envelope[p][e + 1] - cont_value[p][e];
                }
                m.push(acc);
            }
            m
        })
        .collect();

    let boundary = (0..nd)
        .map(|e| {
            let hits: Vec<f64> = (0..paths).filter(|&p| tau[p] == e).map(|p| data.lead[p * nd + e]).collect();
            BoundaryRow {
                time: data.times[e],
                exercised: hits.len(),
                lead_min: hits.iter().copied().fold(f64::INFINITY, f64::min),
                lead_max: hits.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();

    let root: Vec<f64> = envelope.iter().map(|r| r[0]).collect();
    let mut regression = Estimate::from_sample(&root);
    if regression.se <= 1e-12 * regression.mean.abs() && nd > 1 && data.cut(0) > 0 && root[0] > data.z(0, 0) {
        // A common start state: the root is the mean of the next column, so
        // that mean carries the sampling error.
        let next: Vec<f64> = envelope.iter().map(|r| r[1]).collect();
        regression.se = Estimate::from_sample(&next).se;
    }
    let in_sample = Estimate::from_sample(&cash);
    let rule = SnellRule { fits: Arc::new(fits) };
    let eval_data = ExerciseData::build(claim, eval, dates)?;
    let lower = evaluate_stopping(&eval_data, &rule).estimate;
    Ok(SnellEnvelope {
        lower,
        regression,
        in_sample,
        rule,
        envelope,
        martingale,
        continuation,
        boundary,
        data,
    })
}

/// Result of the supermartingale screen.
#[derive(Debug, Clone, PartialEq)]
pub struct SupermartingaleReport {
    pub pass: bool,
    /// Largest `(mean V(e+1) - mean V(e)) / SE` over consecutive columns.
    pub worst_z: f64,
    /// Column at which it occurs.
    pub worst_position: usize,
}

/// Checks that column means of `values` (one path per row) do not increase
/// by more than `k` paired standard errors between consecutive columns.
pub fn supermartingale_report(values: &[Vec<f64>], k: f64) -> SupermartingaleReport {
    let cols = values.first().map(|r| r.len()).unwrap_or(0);
    let mut worst = (f64::NEG_INFINITY, 0);
    for e in 0..cols.saturating_sub(1) {
        let a: Vec<f64> = values.iter().map(|r| r[e + 1]).collect();
        let b: Vec<f64> = values.iter().map(|r| r[e]).collect();
        let d = Estimate::paired_difference(&a, &b);
        let z = if d.se > 0.0 {
            d.mean / d.se
        } else if d.mean > 1e-12 {
            f64::INFINITY
        } else {
            0.0
        };
        if z > worst.0 {
            worst = (z, e);
        }
    }
    SupermartingaleReport {
        pass: worst.0 <= k,
        worst_z: worst.0.max(0.0),
        worst_position: worst.1,
    }
}

/// The supermartingale screen on an envelope at 3 standard errors.
pub fn check_snell_supermartingale(env: &SnellEnvelope) -> SupermartingaleReport {
    supermartingale_report(&env.envelope, 3.0)
}

/// Wealth and cumulative income of a structure on a shared comparison grid,
/// one row per path, with the index of the last compared point.
#[derive(Debug, Clone, PartialEq)]
pub struct IncomeStructure {
    pub times: Vec<f64>,
    pub wealth: Vec<Vec<f64>>,
    pub income: Vec<Vec<f64>>,
    pub stop: Vec<usize>,
}

/// Slack used when comparing wealth and income pathwise.
pub const DOMINATION_SLACK: f64 = 1e-9;

/// `a` dominates `b` when it lives at least as long and, up to `b`'s stop, has
/// no less wealth and no more income on every path.
pub fn check_domination(a: &IncomeStructure, b: &IncomeStructure) -> Result<bool> {
    if a.times != b.times || a.wealth.len() != b.wealth.len() {
        return Err(invalid("structures are not on a common grid and ensemble"));
    }
    Ok((0..b.wealth.len()).all(|p| {
        a.stop[p] >= b.stop[p]
            && (0..=b.stop[p]).all(|i| {
                a.wealth[p][i] >= b.wealth[p][i] - DOMINATION_SLACK
                    && a.income[p][i] <= b.income[p][i] + DOMINATION_SLACK
            })
    }))
}

/// Outcome of the dominating hedge construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DominationReport {
    /// Initial wealth `X(s)`.
    pub price: f64,
    /// Verdict of [`check_domination`] for `X = (M + J) / H` against the claim.
    pub dominates: bool,
    /// Smallest `X - g` over exercise dates and paths.
    pub worst_margin: f64,
    /// Stock holdings along the first path.
    pub pi_path: Vec<Vec<f64>>,
    pub phi_path: Vec<Vec<f64>>,
    /// RMS over paths of the shortfall `max(g - X_pi)+` of the self-financing
    /// wealth at the exercise dates.
    pub shortfall_rmse: f64,
    /// RMS of `X_pi - X` at expiry.
    pub tracking_rmse: f64,
}

/// Builds the dominating hedge from the envelope: `U` at the next exercise
/// date is the target on each grid segment, the fitted martingale gives
/// `X = (M + J) / H`, and the hedge equation is solved along every path.
/// Fails with [`Error::HedgingInfeasible`] where the integrand leaves the
/// range of `sigma'`.
pub fn dominating_hedge(
    m: &MarketSpec,
    claim: &ClaimSpec,
    env: &SnellEnvelope,
    fit: &Ensemble,
    kind: BasisKind,
    tol: f64,
) -> Result<DominationReport> {
    let data = &env.data;
    if data.paths() != fit.len() {
        return Err(invalid("envelope was not built on this ensemble"));
    }
    let len = fit.times().len();
    let dates = data.dates().to_vec();
    let nd = dates.len();
    let is_date = |i: usize| dates.binary_search(&i).is_ok();
    let stops: Vec<usize> = fit.flows.iter().map(|f| claim.stop_index(f)).collect();
    let income: Option<Vec<Vec<f64>>> = match claim.income() {
        Some(_) => Some(
            fit.noises
                .par_iter()
                .zip(&fit.flows)
                .map(|(nz, fl)| claim.deflated_income(fl, nz))
                .collect::<Result<_>>()?,
        ),
        None => None,
    };
    let rep = envelope_representation(claim, env, fit, kind)?;

    let start_shift: Vec<f64> = (0..fit.len())
        .map(|p| if is_date(0) && stops[p] > 0 { env.envelope[p][0] - rep.fitted()[p][0] } else { 0.0 })
        .collect();
    let wealth_bar = |p: usize| -> Vec<f64> {
        let fl = &fit.flows[p];
        (0..len)
            .map(|i| {
                let j = income.as_ref().map(|j| j[p][i]).unwrap_or(0.0);
                (rep.martingale()[p][i] + start_shift[p] + j) / fl.h()[i]
            })
            .collect()
    };

    // Feasibility along every path; the first failure in path order wins.
    let pis: Vec<Result<Option<Vec<Vec<f64>>>>> = (0..fit.len())
        .into_par_iter()
        .map(|p| {
            let phi = phi_along(&rep, claim, &fit.flows[p], &fit.noises[p])?;
            let (_, pi) = synthesize_hedge(m, &fit.flows[p], &wealth_bar(p), &phi, tol)?;
            Ok((p == 0).then_some(pi))
        })
        .collect();
    let mut pi_path = Vec::new();
    for r in pis {
        if let Some(pi) = r? {
            pi_path = pi;
        }
    }
    let phi_path = phi_along(&rep, claim, &fit.flows[0], &fit.noises[0])?;

    // Compare on the exercise dates before expiry plus the expiry itself.
    let mut times: Vec<f64> = dates.iter().map(|&i| fit.times()[i]).collect();
    times.push(fit.times()[len - 1]);
    let mut hedged = IncomeStructure {
        times,
        wealth: Vec::with_capacity(fit.len()),
        income: Vec::with_capacity(fit.len()),
        stop: Vec::with_capacity(fit.len()),
    };
    let mut raw = hedged.clone();
    let mut worst_margin = f64::INFINITY;
    for p in 0..fit.len() {
        let fl = &fit.flows[p];
        let xb = wealth_bar(p);
        let cut = data.cut(p);
        let idx: Vec<usize> = dates[..cut].iter().copied().chain(std::iter::once(stops[p])).collect();
        let w: Vec<f64> = idx.iter().map(|&i| xb[i]).collect();
        let g: Vec<f64> = idx.iter().map(|&i| claim.payoff(fl.price(i))).collect();
        for (a, b) in w.iter().zip(&g) {
            worst_margin = worst_margin.min(a - b);
        }
        let pad = |v: Vec<f64>| {
            let mut v = v;
            v.resize(nd + 1, *v.last().unwrap_or(&0.0));
            v
        };
        let gamma = vec![0.0; nd + 1];
        hedged.wealth.push(pad(w));
        raw.wealth.push(pad(g));
        hedged.income.push(gamma.clone());
        raw.income.push(gamma);
        hedged.stop.push(cut);
        raw.stop.push(cut);
    }
    let dominates = check_domination(&hedged, &raw)?;

    let price = wealth_bar(0)[0];
    let runs = run_hedge(m, claim, &rep, fit, price, tol, |p, fl, stop, w| {
        let cut = data.cut(p);
        let shortfall = dates[..cut]
            .iter()
            .chain(std::iter::once(&stop))
            .map(|&i| (claim.payoff(fl.price(i)) - w.wealth[i]).max(0.0))
            .fold(0.0, f64::max);
        let xb = (rep.martingale()[p][stop] + start_shift[p] + income.as_ref().map(|j| j[p][stop]).unwrap_or(0.0))
            / fl.h()[stop];
        (shortfall, w.wealth[stop] - xb)
    })?;
    let nf = runs.len() as f64;
    Ok(DominationReport {
        price,
        dominates,
        worst_margin,
        pi_path,
        phi_path,
        shortfall_rmse: (runs.iter().map(|r| r.0 * r.0).sum::<f64>() / nf).sqrt(),
        tracking_rmse: (runs.iter().map(|r| r.1 * r.1).sum::<f64>() / nf).sqrt(),
    })
}

/// Argument of the deflated random field `Y(s, t, x, p)` being perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldArgument {
    Start,
    Time,
    Wealth,
    Price(usize),
}

impl FieldArgument {
    pub fn label(&self) -> String {
        match self {
            FieldArgument::Start => "s".into(),
            FieldArgument::Time => "t".into(),
            FieldArgument::Wealth => "x".into(),
            FieldArgument::Price(i) => format!("p{i}"),
        }
    }
}

/// Empirical moments `E|Y(arg + h) - Y(arg)|^gamma` at several sizes `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentCurve {
    pub argument: FieldArgument,
    pub sizes: Vec<f64>,
    pub moments: Vec<f64>,
}

/// Fitted exponent for one argument; `None` when the moments vanish or the
/// fit is not identifiable.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentFit {
    pub argument: FieldArgument,
    pub exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition1Report {
    pub gamma: f64,
    pub fits: Vec<ExponentFit>,
    /// Sum of reciprocal exponents when every exponent is identified.
    pub reciprocal_sum: Option<f64>,
    /// All increments were zero.
    pub degenerate: bool,
}

impl Condition1Report {
    pub fn exponent(&self, arg: FieldArgument) -> Option<f64> {
        self.fits.iter().find(|f| f.argument == arg).and_then(|f| f.exponent)
    }

    /// Whether the reciprocal sum is below one; a diagnostic, not a gate.
    pub fn reciprocal_sum_below_one(&self) -> Option<bool> {
        self.reciprocal_sum.map(|s| s < 1.0)
    }
}

/// Log-log fits of moment curves.
pub fn condition1_diagnostic(curves: &[MomentCurve], gamma: f64) -> Condition1Report {
    let degenerate = curves.iter().all(|c| c.moments.iter().all(|&m| m == 0.0));
    let fits: Vec<ExponentFit> = curves
        .iter()
        .map(|c| ExponentFit {
            argument: c.argument,
            exponent: log_log_slope(&c.sizes, &c.moments),
        })
        .collect();
    let reciprocal_sum = if !fits.is_empty() && fits.iter().all(|f| f.exponent.is_some_and(|a| a > 0.0)) {
        Some(fits.iter().map(|f| 1.0 / f.exponent.unwrap_or(f64::NAN)).sum())
    } else {
        None
    };
    Condition1Report {
        gamma,
        fits,
        reciprocal_sum,
        degenerate,
    }
}

/// Deflated claim field `Y(s, t, x, p) = H g(x, P) - J` at `t` for the flow
/// started at `(s, p)` on `noise`.
pub fn field_value(
    m: &MarketSpec,
    claim: &ClaimSpec,
    noise: &crate::noise::NoisePath,
    s: f64,
    t: f64,
    x: f64,
    p: &[f64],
) -> Result<f64> {
    let window = noise.restrict(s, t)?;
    let flow = crate::flow::simulate_flow(m, &window, s, p)?;
    let j = claim.deflated_income(&flow, &window)?;
    let i = flow.len() - 1;
    Ok(flow.h()[i] * claim.payoff_at(x, flow.price(i)) - j[i])
}

/// Moment curve for one argument of the field on common noise. Time
/// perturbations must be multiples of the noise grid step.
#[allow(clippy::too_many_arguments)]
pub fn moment_curve(
    m: &MarketSpec,
    claim: &ClaimSpec,
    noises: &[crate::noise::NoisePath],
    base: (f64, f64, f64, &[f64]),
    argument: FieldArgument,
    sizes: &[f64],
    gamma: f64,
) -> Result<MomentCurve> {
    let (s, t, x, p) = base;
    let moments: Vec<f64> = sizes
        .iter()
        .map(|&h| {
            let incs: Vec<f64> = noises
                .par_iter()
                .map(|nz| {
                    let y0 = field_value(m, claim, nz, s, t, x, p)?;
                    let y1 = match argument {
                        FieldArgument::Start => field_value(m, claim, nz, s + h, t, x, p)?,
                        FieldArgument::Time => field_value(m, claim, nz, s, t + h, x, p)?,
                        FieldArgument::Wealth => field_value(m, claim, nz, s, t, x + h, p)?,
                        FieldArgument::Price(k) => {
                            let mut q = p.to_vec();
                            q.get_mut(k).ok_or_else(|| invalid(format!("price index {k} out of range")))?;
                            q[k] += h;
                            field_value(m, claim, nz, s, t, x, &q)?
                        }
                    };
                    Ok((y1 - y0).abs().powf(gamma))
                })
                .collect::<Result<_>>()?;
            Ok(incs.iter().sum::<f64>() / incs.len().max(1) as f64)
        })
        .collect::<Result<_>>()?;
    Ok(MomentCurve {
        argument,
        sizes: sizes.to_vec(),
        moments,
    })
}

/// Representation used by [`dominating_hedge`], exposed for inspection.
pub fn envelope_representation(
    claim: &ClaimSpec,
    env: &SnellEnvelope,
    fit: &Ensemble,
    kind: BasisKind,
) -> Result<Representation> {
    if env.data.paths() != fit.len() {
        return Err(invalid("envelope was not built on this ensemble"));
    }
    let len = fit.times().len();
    let dates = env.data.dates().to_vec();
    let nd = dates.len();
    // Position of the first exercise date strictly after grid index i.
    let next_pos: Vec<usize> = (0..len).map(|i| dates.partition_point(|&d| d <= i)).collect();
    let stops: Vec<usize> = fit.flows.iter().map(|f| claim.stop_index(f)).collect();
    let income: Option<Vec<Vec<f64>>> = match claim.income() {
        Some(_) => Some(
            fit.noises
                .par_iter()
                .zip(&fit.flows)
                .map(|(nz, fl)| claim.deflated_income(fl, nz))
                .collect::<Result<_>>()?,
        ),
        None => None,
    };
    let envelope = &env.envelope;
    let payoff = claim.clone();
    fit_martingale(
        fit,
        &stops,
        &|p, i| envelope[p][next_pos[i].min(nd)],
        &|_, i| dates.binary_search(&(i + 1)).is_ok(),
        income.as_deref(),
        claim.driving().map(|s| s.to_vec()),
        Some(Arc::new(move |p: &[f64]| payoff.payoff(p) > 0.0)),
        kind,
    )
}
