//! Built-in markets.

use crate::error::{invalid, Result};
use crate::market::{Field, MarketSpec};

/// Name and one-line description of every built-in market.
pub const MARKET_PRESETS: [(&str, &str); 4] = [
    ("bs-1stock", "one stock, b = 0.08, r = 0.05, sigma = 0.2, p = 100, T = 1"),
    ("kappa-arbitrage", "two stocks on one factor, sigma = (1, 1), b = (0.1, 0.3), r = 0"),
    ("rank-deficient-2factor", "one stock, two factors, sigma = (0.2, 0)"),
    ("state-dependent-vol", "one stock, sigma = 0.1 + 30 / (p1 + 100)"),
];

fn consts(v: &[f64]) -> Vec<Field> {
    v.iter().map(|&x| Field::Const(x)).collect()
}

/// Looks up a built-in market by name.
pub fn market_preset(name: &str) -> Result<MarketSpec> {
    let m = match name {
        "bs-1stock" => MarketSpec::new(1, 1, vec![1.0, 100.0], 1.0)?
            .with_drift(consts(&[0.08]))?
            .with_vol(consts(&[0.2]))?
            .with_rate(Field::Const(0.05)),
        "kappa-arbitrage" => MarketSpec::new(2, 1, vec![1.0, 1.0, 1.0], 1.0)?
            .with_drift(consts(&[0.1, 0.3]))?
            .with_vol(consts(&[1.0, 1.0]))?,
        "rank-deficient-2factor" => MarketSpec::new(1, 2, vec![1.0, 100.0], 1.0)?
            .with_drift(consts(&[0.08]))?
            .with_vol(consts(&[0.2, 0.0]))?
            .with_rate(Field::Const(0.05)),
        "state-dependent-vol" => MarketSpec::new(1, 1, vec![1.0, 100.0], 1.0)?
            .with_drift(consts(&[0.08]))?
            .with_vol(vec![Field::formula("0.1 + 0.3 * 100 / (p1 + 100)", 1)?])?
            .with_rate(Field::Const(0.05)),
        other => return Err(invalid(format!("unknown market preset {other:?}"))),
    };
    Ok(m.named(name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::is_state_arbitrage_free;

    #[test]
    fn presets_build_and_screen() {
        for (name, _) in MARKET_PRESETS {
            let m = market_preset(name).unwrap();
            assert_eq!(m.name(), name);
            let rep = is_state_arbitrage_free(&m, &m.default_region(), 256, 1e-10).unwrap();
            assert_eq!(rep.free, name != "kappa-arbitrage", "{name}");
        }
        assert!(market_preset("heston").is_err());
        let sdv = market_preset("state-dependent-vol").unwrap();
        assert!(!sdv.state_free());
        let c = sdv.eval(&[1.0, 100.0], 0.0).unwrap();
        assert!((c.sigma[(0, 0)] - 0.25).abs() < 1e-15);
    }
}
