//! One runner per task. Each fills a [`Results`] or fails without writing.

use tameflow::ampricer::{
    check_snell_supermartingale, condition1_diagnostic, dominating_hedge, moment_curve, price_american, FieldArgument,
};
use tameflow::europricer::{hedge_european, price_european};
use tameflow::flow::{check_cocycle, check_consistency, simulate_ensemble, simulate_ensemble_range, Ensemble};
use tameflow::linalg::DEFAULT_RANK_TOL;
use tameflow::market::{completeness_check, is_state_arbitrage_free, MarketSpec};
use tameflow::noise::{generate, NoisePath, TimeGrid};
use tameflow::stats::Estimate;
use tameflow::Error;

use crate::config::{ExperimentConfig, TaskKind};
use crate::output::Results;
use crate::CliError;

pub fn parse_argument(label: &str, n: usize) -> Result<FieldArgument, CliError> {
    let arg = match label {
        "s" => FieldArgument::Start,
        "t" => FieldArgument::Time,
        "x" => FieldArgument::Wealth,
        p => match p.strip_prefix('p').and_then(|k| k.parse::<usize>().ok()) {
            Some(k) if k <= n => FieldArgument::Price(k),
            _ => return Err(CliError::Config(format!("unknown field argument {label:?}"))),
        },
    };
    Ok(arg)
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    m: MarketSpec,
    grid: TimeGrid,
}

impl Ctx<'_> {
    fn ensemble(&self) -> Result<Ensemble, Error> {
        simulate_ensemble(&self.m, &self.grid, self.cfg.noise.seed, self.cfg.noise.paths)
    }

    /// Independent paths: the next block of path indices under the same seed.
    fn second_ensemble(&self) -> Result<Ensemble, Error> {
        let paths = self.cfg.noise.paths;
        simulate_ensemble_range(
            &self.m,
            &self.grid,
            self.cfg.noise.seed,
            paths as u64,
            paths,
            self.grid.start(),
            self.m.p0(),
        )
    }

    fn noises(&self) -> Result<Vec<NoisePath>, Error> {
        (0..self.cfg.noise.paths as u64)
            .map(|k| generate(&self.grid, self.m.d(), self.cfg.noise.seed, k))
            .collect()
    }

    /// Grid time nearest to `t`.
    fn snap(&self, t: f64) -> f64 {
        let times = self.grid.times();
        times
            .iter()
            .copied()
            .min_by(|a, b| (a - t).abs().total_cmp(&(b - t).abs()))
            .unwrap_or(t)
    }
}

pub fn run_task(cfg: &ExperimentConfig) -> Result<Results, CliError> {
    let m = cfg.market()?;
    let grid = TimeGrid::uniform(0.0, m.horizon(), cfg.grid.steps)?;
    let ctx = Ctx { cfg, m, grid };
    let out = match cfg.task.name {
        TaskKind::Simulate => simulate(&ctx)?,
        TaskKind::CheckMarket => check_market(&ctx)?,
        TaskKind::PriceEu => price_eu(&ctx)?,
        TaskKind::HedgeEu => hedge_eu(&ctx)?,
        TaskKind::PriceAm => price_am(&ctx)?,
        TaskKind::Consistency => consistency(&ctx)?,
        TaskKind::Cocycle => cocycle(&ctx)?,
        TaskKind::Condition1 => condition1(&ctx)?,
    };
    Ok(out)
}

fn simulate(ctx: &Ctx) -> Result<Results, Error> {
    let ens = ctx.ensemble()?;
    let mut r = Results::default();
    let n = ctx.m.n();
    let len = ctx.grid.len();
    let series = |f: &dyn Fn(usize, usize) -> f64, i: usize| -> Estimate {
        let xs: Vec<f64> = (0..ens.len()).map(|p| f(p, i)).collect();
        Estimate::from_sample(&xs)
    };
    for i in 0..len {
        r.push_at("t", i, ctx.grid.times()[i], None);
        for k in 0..=n {
            let e = series(&|p, i| ens.flows[p].price(i)[k], i);
            r.push_at(&format!("mean_p{k}"), i, e.mean, Some(e.se));
        }
        let b = series(&|p, i| ens.flows[p].bond()[i], i);
        r.push_at("mean_bond", i, b.mean, Some(b.se));
        let h = series(&|p, i| ens.flows[p].h()[i], i);
        r.push_at("mean_h", i, h.mean, Some(h.se));
        let z = series(&|p, i| ens.flows[p].z()[i], i);
        r.push_at("mean_z", i, z.mean, Some(z.se));
    }
    let record = ctx.cfg.task.record_paths.unwrap_or(1).min(ens.len());
    for (p, fl) in ens.flows.iter().take(record).enumerate() {
        for i in 0..len {
            for k in 0..=n {
                r.push_at(&format!("path{p}_p{k}"), i, fl.price(i)[k], None);
            }
        }
    }
    let p0 = ctx.m.p0()[0];
    let shadow_gap = ens
        .flows
        .iter()
        .flat_map(|f| (0..len).map(move |i| (f.price(i)[0] - p0 * f.h()[i]).abs() / f.price(i)[0].abs().max(1.0)))
        .fold(0.0, f64::max);
    let zt = series(&|p, _| *ens.flows[p].z().last().unwrap_or(&f64::NAN), len - 1);
    r.key("mean_z_terminal", zt.mean, Some(zt.se));
    r.key("shadow_gap", shadow_gap, None);
    r.key("max_kappa_norm", ens.max_kappa_norm(), None);
    r.screen("z_martingale", zt.within(1.0, 3.0));
    r.screen("shadow_identity", shadow_gap < 1e-12);
    Ok(r)
}

fn check_market(ctx: &Ctx) -> Result<Results, Error> {
    let m = &ctx.m;
    let tol = &ctx.cfg.tolerances;
    let region = m.default_region();
    let arb = is_state_arbitrage_free(m, &region, tol.samples(), tol.kappa())?;
    let factors: Vec<usize> = ctx.cfg.task.factors.clone().unwrap_or_else(|| (0..m.d()).collect());
    let comp = completeness_check(m, &region, tol.samples(), &factors, DEFAULT_RANK_TOL)?;
    let lip = m.lipschitz_screen(&region, tol.samples().min(1024), tol.lipschitz_step())?;
    let mut r = Results::default();
    r.key("free", f64::from(u8::from(arb.free)), None);
    r.key("worst_kappa_norm", arb.worst_kappa_norm, None);
    r.push("min_rank", arb.min_rank as f64);
    r.push("max_rank", arb.max_rank as f64);
    if let Some((p, t)) = &arb.witness {
        r.push("witness_t", *t);
        for (k, v) in p.iter().enumerate() {
            r.push_at("witness_p", k, *v, None);
        }
    }
    r.key("complete", f64::from(u8::from(comp.complete)), None);
    r.push("completeness_min_rank", comp.min_rank as f64);
    r.key("lipschitz_quotient", lip, None);
    r.screen("arbitrage_free", arb.free);
    r.screen("complete", comp.complete);
    r.screen("rank_constant", !arb.rank_changes());
    Ok(r)
}

fn price_eu(ctx: &Ctx) -> Result<Results, CliError> {
    let claim = ctx.cfg.claim(&ctx.m)?;
    let ens = ctx.ensemble()?;
    let est = price_european(&claim, &ens, ctx.cfg.tolerances.kappa())?;
    let mut r = Results::default();
    r.key("price", est.mean, Some(est.se));
    r.key("max_kappa_norm", ens.max_kappa_norm(), None);
    r.screen("arbitrage_screen", true);
    Ok(r)
}

fn hedge_eu(ctx: &Ctx) -> Result<Results, CliError> {
    let claim = ctx.cfg.claim(&ctx.m)?;
    let fit = ctx.ensemble()?;
    let test = ctx.second_ensemble()?;
    let rep = hedge_european(&ctx.m, &claim, &fit, &test, ctx.cfg.basis(), ctx.cfg.tolerances.hedge())?;
    let mut r = Results::default();
    r.key("price", rep.price.mean, Some(rep.price.se));
    r.key("replication_rmse", rep.replication_rmse, None);
    for (i, row) in rep.pi_path.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            r.push_at(&format!("pi{}", k + 1), i, *v, None);
        }
    }
    for (i, row) in rep.phi_path.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            r.push_at(&format!("phi{k}"), i, *v, None);
        }
    }
    r.screen("hedge_feasible", true);
    Ok(r)
}

fn price_am(ctx: &Ctx) -> Result<Results, CliError> {
    let claim = ctx.cfg.claim(&ctx.m)?;
    let fit = ctx.ensemble()?;
    let eval = ctx.second_ensemble()?;
    let dates = ctx.cfg.exercise_dates();
    let kind = ctx.cfg.basis();
    let env = price_american(&claim, &fit, &eval, &dates, kind, ctx.cfg.tolerances.kappa())?;
    drop(eval);
    let sm = check_snell_supermartingale(&env);
    let mut r = Results::default();
    r.key("lower", env.lower.mean, Some(env.lower.se));
    r.key("regression", env.regression.mean, Some(env.regression.se));
    r.key("in_sample", env.in_sample.mean, Some(env.in_sample.se));
    r.key("supermartingale_worst_z", sm.worst_z, None);
    for (e, b) in env.boundary.iter().enumerate() {
        r.push_at("date_t", e, b.time, None);
        r.push_at("exercised", e, b.exercised as f64, None);
        if b.exercised > 0 {
            r.push_at("exercised_p1_min", e, b.lead_min, None);
            r.push_at("exercised_p1_max", e, b.lead_max, None);
        }
    }
    r.screen("supermartingale", sm.pass);
    if ctx.cfg.task.dominate {
        let d = dominating_hedge(&ctx.m, &claim, &env, &fit, kind, ctx.cfg.tolerances.hedge())?;
        r.key("dominating_price", d.price, None);
        r.key("dominates", f64::from(u8::from(d.dominates)), None);
        r.key("worst_margin", d.worst_margin, None);
        r.key("shortfall_rmse", d.shortfall_rmse, None);
        r.key("tracking_rmse", d.tracking_rmse, None);
        r.screen("domination", d.dominates);
    }
    Ok(r)
}

fn consistency(ctx: &Ctx) -> Result<Results, Error> {
    let t_end = ctx.m.horizon();
    let task = &ctx.cfg.task;
    let s = task.s.unwrap_or(0.0);
    let t = task.t.unwrap_or(t_end);
    let s_mid = task.s_mid.unwrap_or_else(|| ctx.snap(0.5 * (s + t)));
    let levels = task.levels.clone().unwrap_or_else(|| vec![1, 2, 4]);
    let noises = ctx.noises()?;
    let rep = check_consistency(&ctx.m, &noises, s, s_mid, t, ctx.m.p0(), &levels)?;
    let mut r = Results::default();
    r.key("max_abs_gap", rep.max_abs_gap, None);
    for (l, (dt, defect)) in rep.levels.iter().enumerate() {
        r.push_at("level_dt", l, *dt, None);
        r.push_at("level_defect", l, *defect, None);
    }
    r.key("convergence_slope", rep.convergence_slope.unwrap_or(f64::NAN), None);
    r.screen("same_grid_restart", rep.max_abs_gap < 1e-12 * ctx.m.p0().iter().fold(1.0_f64, |a, b| a.max(b.abs())));
    Ok(r)
}

fn cocycle(ctx: &Ctx) -> Result<Results, Error> {
    let times = ctx.grid.times();
    let steps = ctx.cfg.grid.steps;
    let s = ctx.cfg.task.s.unwrap_or(times[steps / 4]);
    let t = ctx.cfg.task.t.unwrap_or(times[steps / 2]);
    let noises = ctx.noises()?;
    let gaps: Vec<f64> = noises
        .iter()
        .map(|nz| check_cocycle(&ctx.m, nz, s, t, ctx.m.p0()))
        .collect::<Result<_, _>>()?;
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    let mut r = Results::default();
    r.key("max_gap", worst, None);
    r.key("mean_gap", gaps.iter().sum::<f64>() / gaps.len() as f64, None);
    r.screen("cocycle", worst < 1e-12 * ctx.m.p0().iter().fold(1.0_f64, |a, b| a.max(b.abs())));
    Ok(r)
}

fn condition1(ctx: &Ctx) -> Result<Results, CliError> {
    let claim = ctx.cfg.claim(&ctx.m)?;
    let task = &ctx.cfg.task;
    let gamma = task.gamma.unwrap_or(2.0);
    let s = task.s.unwrap_or(0.0);
    let t = task.t.unwrap_or_else(|| ctx.snap(0.5 * ctx.m.horizon()));
    let x = task.x.unwrap_or(1.0);
    let dt = ctx.grid.dt(0);
    let sizes: Vec<f64> = task
        .size_steps
        .clone()
        .unwrap_or_else(|| vec![1, 2, 4, 8, 16])
        .iter()
        .map(|&k| k as f64 * dt)
        .collect();
    let labels = task.arguments.clone().unwrap_or_else(|| vec!["s".into(), "t".into(), "x".into(), "p1".into()]);
    let noises = ctx.noises()?;
    let p = ctx.m.p0().to_vec();
    let mut curves = Vec::with_capacity(labels.len());
    for l in &labels {
        let arg = parse_argument(l, ctx.m.n())?;
        curves.push(moment_curve(&ctx.m, &claim, &noises, (s, t, x, &p), arg, &sizes, gamma)?);
    }
    let rep = condition1_diagnostic(&curves, gamma);
    let mut r = Results::default();
    for c in &curves {
        for (i, (h, mo)) in c.sizes.iter().zip(&c.moments).enumerate() {
            r.push_at(&format!("size_{}", c.argument.label()), i, *h, None);
            r.push_at(&format!("moment_{}", c.argument.label()), i, *mo, None);
        }
    }
    for f in &rep.fits {
        r.key(&format!("exponent_{}", f.argument.label()), f.exponent.unwrap_or(f64::NAN), None);
    }
    r.key("reciprocal_sum", rep.reciprocal_sum.unwrap_or(f64::NAN), None);
    r.key("degenerate", f64::from(u8::from(rep.degenerate)), None);
    if let Some(below) = rep.reciprocal_sum_below_one() {
        r.screen("reciprocal_sum_below_one", below);
    }
    Ok(r)
}
