use std::sync::Arc;

use statrs::distribution::{ContinuousCDF, Normal};
use tameflow::ampricer::{combine_stopping, evaluate_stopping, price_american, ExerciseData, Immediate, Never, StoppingRule};
use tameflow::claim::ClaimSpec;
use tameflow::europricer::{hedge_european, price_european, DEFAULT_HEDGE_TOL, DEFAULT_KAPPA_TOL};
use tameflow::flow::{simulate_ensemble, simulate_ensemble_range};
use tameflow::market::{is_state_arbitrage_free, risk_price, Field, DEFAULT_SAMPLES};
use tameflow::noise::TimeGrid;
use tameflow::presets::market_preset;
use tameflow::regression::BasisKind;
use tameflow::stats::Estimate;
use tameflow::wealth::{arbitrage_portfolio, check_arbitrage_opportunity, simulate_wealth_ensemble};
use tameflow::Error;

fn bs_call(s: f64, k: f64, r: f64, v: f64, t: f64) -> f64 {
    let d1 = ((s / k).ln() + (r + 0.5 * v * v) * t) / (v * t.sqrt());
    let d2 = d1 - v * t.sqrt();
    let n = Normal::standard();
    s * n.cdf(d1) - k * (-r * t).exp() * n.cdf(d2)
}

#[test]
fn european_call_matches_closed_form() {
    let m = market_preset("bs-1stock").unwrap();
    let g = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
    let ens = simulate_ensemble(&m, &g, 7, 40_000).unwrap();
    let est = price_european(&ClaimSpec::call(100.0, 1), &ens, DEFAULT_KAPPA_TOL).unwrap();
    let exact = bs_call(100.0, 100.0, 0.05, 0.2, 1.0);
    assert!(est.within(exact, 4.0), "{est:?} vs {exact}");
}

#[test]
fn pricing_is_refused_when_kappa_is_nonzero() {
    let m = market_preset("kappa-arbitrage").unwrap();
    let g = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
    let ens = simulate_ensemble(&m, &g, 1, 20).unwrap();
    let err = price_european(&ClaimSpec::call(1.0, 1), &ens, DEFAULT_KAPPA_TOL).unwrap_err();
    assert!(matches!(err, Error::PricingRefused { kappa_norm, .. } if (kappa_norm - 0.02f64.sqrt()).abs() < 1e-12));

    let report = is_state_arbitrage_free(&m, &m.default_region(), DEFAULT_SAMPLES, DEFAULT_KAPPA_TOL).unwrap();
    assert!(!report.free);
    assert!(report.witness.is_some());
}

#[test]
fn arbitrage_portfolio_earns_from_nothing() {
    let m = market_preset("kappa-arbitrage").unwrap();
    let g = TimeGrid::uniform(0.0, 1.0, 20).unwrap();
    let ens = simulate_ensemble(&m, &g, 3, 200).unwrap();
    let paths = simulate_wealth_ensemble(&m, &ens, &arbitrage_portfolio(&m), 0.0).unwrap();
    let rep = check_arbitrage_opportunity(&paths, &ens.flows, 1.0).unwrap();
    assert!(rep.is_opportunity(), "{rep:?}");
}

#[test]
fn hedge_reduces_error_compared_to_holding_cash() {
    let m = market_preset("bs-1stock").unwrap();
    let g = TimeGrid::uniform(0.0, 1.0, 25).unwrap();
    let call = ClaimSpec::call(100.0, 1);
    let fit = simulate_ensemble(&m, &g, 11, 8000).unwrap();
    let test = simulate_ensemble_range(&m, &g, 11, 8000, 4000, 0.0, m.p0()).unwrap();
    let rep = hedge_european(&m, &call, &fit, &test, BasisKind::Hinge { knots: 8 }, DEFAULT_HEDGE_TOL).unwrap();
    // Holding the premium in the bond leaves the payoff's own spread.
    let payoffs: Vec<f64> = test.flows.iter().map(|f| call.payoff(f.last_price())).collect();
    let unhedged = Estimate::from_sample(&payoffs).se * (payoffs.len() as f64).sqrt();
    assert!(rep.replication_rmse < 0.3 * unhedged, "{} vs {unhedged}", rep.replication_rmse);
    assert!(rep.pi_path.iter().all(|pi| pi[0] >= -1e-6));
}

#[test]
fn american_put_sits_between_european_and_intrinsic_bounds() {
    let m = market_preset("bs-1stock").unwrap().with_rate(Field::Const(0.06));
    let g = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
    let dates: Vec<usize> = (1..=10).collect();
    let put = ClaimSpec::put(100.0, 1);
    let fit = simulate_ensemble(&m, &g, 5, 20_000).unwrap();
    let eval = simulate_ensemble_range(&m, &g, 5, 20_000, 20_000, 0.0, m.p0()).unwrap();
    let env = price_american(&put, &fit, &eval, &dates, BasisKind::Hinge { knots: 8 }, DEFAULT_KAPPA_TOL).unwrap();
    let euro = price_european(&put, &eval, DEFAULT_KAPPA_TOL).unwrap();
    assert!(env.lower.mean > euro.mean, "{:?} vs {euro:?}", env.lower);
    assert!(env.lower.mean < 100.0 * (1.0 - (-0.06f64).exp()) + euro.mean + 1.0);

    let data = ExerciseData::build(&put, &eval, &dates).unwrap();
    let never: Arc<dyn StoppingRule> = Arc::new(Never);
    let now: Arc<dyn StoppingRule> = Arc::new(Immediate);
    let combined = combine_stopping(never.clone(), now.clone(), &env.data, BasisKind::Polynomial { degree: 2 }).unwrap();
    let c = evaluate_stopping(&data, &combined).values;
    for parent in [never, now] {
        let d = Estimate::paired_difference(&c, &evaluate_stopping(&data, parent.as_ref()).values);
        assert!(d.mean >= -3.0 * d.se, "{d:?}");
    }
}

#[test]
fn theta_is_thread_count_invariant() {
    let m = market_preset("state-dependent-vol").unwrap();
    let g = TimeGrid::uniform(0.0, 1.0, 16).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate_ensemble(&m, &g, 9, 300).unwrap())
    };
    let (a, b) = (run(1), run(4));
    for (x, y) in a.flows.iter().zip(&b.flows) {
        assert_eq!(x.z(), y.z());
        assert_eq!(x.last_price(), y.last_price());
    }
    let rp = risk_price(&m, &[1.0, 100.0], 0.0, DEFAULT_KAPPA_TOL).unwrap();
    assert!((rp.theta[0] - (0.08 - 0.05) / 0.25).abs() < 1e-12);
}
