//! Experiment configuration files.
//!
//! A config is a TOML document with the sections `[market]`, `[grid]`,
//! `[noise]`, `[task]`, `[claim]` and `[tolerances]`. Unknown keys are
//! rejected. See the README for the full key list.

use serde::{Deserialize, Serialize};

use tameflow::claim::{claim_preset, ClaimSpec};
use tameflow::europricer::{DEFAULT_HEDGE_TOL, DEFAULT_KAPPA_TOL};
use tameflow::market::{Field, MarketSpec, DEFAULT_SAMPLES};
use tameflow::presets::market_preset;
use tameflow::regression::BasisKind;

use crate::CliError;

/// A coefficient entry: a number or a formula over `p0..pn` and `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coef {
    Num(f64),
    Expr(String),
}

impl Coef {
    fn field(&self, n: usize) -> Result<Field, CliError> {
        match self {
            Coef::Num(v) => Ok(Field::Const(*v)),
            Coef::Expr(s) => Ok(Field::formula(s, n)?),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub preset: Option<String>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    /// Augmented start prices `(p0, p1, ..., pn)`.
    pub p0: Option<Vec<f64>>,
    pub horizon: Option<f64>,
    pub drift: Option<Vec<Coef>>,
    /// One row of `d` entries per stock.
    pub vol: Option<Vec<Vec<Coef>>>,
    pub dividend: Option<Vec<Coef>>,
    pub rate: Option<Coef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub steps: usize,
    /// Exercise dates as grid indices; every grid point when absent.
    pub exercise: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub seed: u64,
    pub paths: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Simulate,
    CheckMarket,
    PriceEu,
    HedgeEu,
    PriceAm,
    Consistency,
    Cocycle,
    Condition1,
}

impl TaskKind {
    pub fn label(self) -> &'static str {
        match self {
            TaskKind::Simulate => "simulate",
            TaskKind::CheckMarket => "check-market",
            TaskKind::PriceEu => "price-eu",
            TaskKind::HedgeEu => "hedge-eu",
            TaskKind::PriceAm => "price-am",
            TaskKind::Consistency => "consistency",
            TaskKind::Cocycle => "cocycle",
            TaskKind::Condition1 => "condition1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisName {
    #[default]
    Polynomial,
    Hinge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub name: TaskKind,
    #[serde(default)]
    pub basis: BasisName,
    /// Polynomial degree (default 4).
    pub degree: Option<usize>,
    /// Hinge knots per component (default 8).
    pub knots: Option<usize>,
    /// price-am: also build and check the dominating hedge.
    #[serde(default)]
    pub dominate: bool,
    /// simulate: paths written in full to the results.
    pub record_paths: Option<usize>,
    /// check-market: factor columns for the completeness screen (zero-based).
    pub factors: Option<Vec<usize>>,
    /// consistency / cocycle / condition1 start time.
    pub s: Option<f64>,
    /// consistency restart time.
    pub s_mid: Option<f64>,
    /// End time of the window.
    pub t: Option<f64>,
    /// consistency coarsening factors of the grid.
    pub levels: Option<Vec<usize>>,
    /// condition1 moment order.
    pub gamma: Option<f64>,
    /// condition1 wealth argument.
    pub x: Option<f64>,
    /// condition1 arguments: `s`, `t`, `x`, `pK`.
    pub arguments: Option<Vec<String>>,
    /// condition1 perturbations in grid steps.
    pub size_steps: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimSection {
    pub preset: String,
    #[serde(default = "default_strike")]
    pub strike: f64,
    pub barrier: Option<f64>,
    /// Factors the claim depends on (zero-based).
    pub factors: Option<Vec<usize>>,
}

fn default_strike() -> f64 {
    100.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub kappa: Option<f64>,
    pub hedge: Option<f64>,
    pub samples: Option<usize>,
    pub lipschitz_step: Option<f64>,
}

impl Tolerances {
    pub fn kappa(&self) -> f64 {
        self.kappa.unwrap_or(DEFAULT_KAPPA_TOL)
    }

    pub fn hedge(&self) -> f64 {
        self.hedge.unwrap_or(DEFAULT_HEDGE_TOL)
    }

    pub fn samples(&self) -> usize {
        self.samples.unwrap_or(DEFAULT_SAMPLES)
    }

    pub fn lipschitz_step(&self) -> f64 {
        self.lipschitz_step.unwrap_or(1e-4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub market: MarketSection,
    pub grid: GridSection,
    pub noise: NoiseSection,
    pub task: TaskSection,
    pub claim: Option<ClaimSection>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text of the resolved config, used for the inputs digest.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let m = self.market()?;
        if self.grid.steps == 0 {
            return Err(bad("grid.steps must be positive"));
        }
        if self.noise.paths == 0 {
            return Err(bad("noise.paths must be positive"));
        }
        if let Some(ex) = &self.grid.exercise {
            if ex.is_empty() || ex.windows(2).any(|w| w[0] >= w[1]) || ex.iter().any(|&i| i > self.grid.steps) {
                return Err(bad("grid.exercise must be increasing grid indices within 0..=steps"));
            }
        }
        let needs_claim = matches!(
            self.task.name,
            TaskKind::PriceEu | TaskKind::HedgeEu | TaskKind::PriceAm | TaskKind::Condition1
        );
        if needs_claim && self.claim.is_none() {
            return Err(bad(format!("task {} needs a [claim] section", self.task.name.label())));
        }
        if self.claim.is_some() {
            self.claim(&m)?;
        }
        for f in self.task.factors.iter().flatten() {
            if *f >= m.d() {
                return Err(bad(format!("task.factors entry {f} is not below d = {}", m.d())));
            }
        }
        if let Some(args) = &self.task.arguments {
            for a in args {
                crate::tasks::parse_argument(a, m.n())?;
            }
        }
        for (name, v) in [("kappa", self.tolerances.kappa), ("hedge", self.tolerances.hedge)] {
            if v.is_some_and(|v| !(v > 0.0)) {
                return Err(bad(format!("tolerances.{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Builds the market: the preset (if any) with every given field applied on top.
    pub fn market(&self) -> Result<MarketSpec, CliError> {
        let s = &self.market;
        let mut m = match &s.preset {
            Some(name) => {
                let m = market_preset(name)?;
                if s.n.is_some_and(|n| n != m.n()) || s.d.is_some_and(|d| d != m.d()) {
                    return Err(bad(format!("market.n and market.d disagree with preset {name:?}")));
                }
                m
            }
            None => {
                let (n, d) = match (s.n, s.d) {
                    (Some(n), Some(d)) => (n, d),
                    _ => return Err(bad("market needs a preset or both n and d")),
                };
                let p0 = s.p0.clone().ok_or_else(|| bad("market.p0 is required without a preset"))?;
                MarketSpec::new(n, d, p0, s.horizon.unwrap_or(1.0))?.named("custom")
            }
        };
        let n = m.n();
        if let Some(p0) = &s.p0 {
            m = m.with_p0(p0.clone())?;
        }
        if let Some(h) = s.horizon {
            m = m.with_horizon(h)?;
        }
        if let Some(b) = &s.drift {
            m = m.with_drift(b.iter().map(|c| c.field(n)).collect::<Result<_, _>>()?)?;
        }
        if let Some(rows) = &s.vol {
            if rows.len() != n || rows.iter().any(|r| r.len() != m.d()) {
                return Err(bad(format!("market.vol must be {n} rows of {} entries", m.d())));
            }
            m = m.with_vol(rows.iter().flatten().map(|c| c.field(n)).collect::<Result<_, _>>()?)?;
        }
        if let Some(dl) = &s.dividend {
            m = m.with_dividend(dl.iter().map(|c| c.field(n)).collect::<Result<_, _>>()?)?;
        }
        if let Some(r) = &s.rate {
            m = m.with_rate(r.field(n)?);
        }
        Ok(m)
    }

    pub fn claim(&self, m: &MarketSpec) -> Result<ClaimSpec, CliError> {
        let c = self.claim.as_ref().ok_or_else(|| bad("missing [claim] section"))?;
        let mut claim = claim_preset(&c.preset, c.strike, c.barrier, m.n())?;
        if let Some(f) = &c.factors {
            if f.is_empty() || f.windows(2).any(|w| w[0] >= w[1]) || f.iter().any(|&j| j >= m.d()) {
                return Err(bad(format!("claim.factors must be increasing and below d = {}", m.d())));
            }
            claim = claim.driven_by(f.clone());
        }
        Ok(claim)
    }

    pub fn basis(&self) -> BasisKind {
        match self.task.basis {
            BasisName::Polynomial => BasisKind::Polynomial {
                degree: self.task.degree.unwrap_or(4),
            },
            BasisName::Hinge => BasisKind::Hinge {
                knots: self.task.knots.unwrap_or(8),
            },
        }
    }

    pub fn exercise_dates(&self) -> Vec<usize> {
        self.grid.exercise.clone().unwrap_or_else(|| (0..=self.grid.steps).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BS: &str = r#"
        [market]
        preset = "bs-1stock"
        [grid]
        steps = 10
        [noise]
        seed = 1
        paths = 100
        [task]
        name = "price-eu"
        [claim]
        preset = "call"
    "#;

    #[test]
    fn parses_and_resolves() {
        let cfg = ExperimentConfig::parse(BS).unwrap();
        assert_eq!(cfg.task.name, TaskKind::PriceEu);
        assert_eq!(cfg.basis(), BasisKind::Polynomial { degree: 4 });
        assert_eq!(cfg.exercise_dates().len(), 11);
        let m = cfg.market().unwrap();
        assert_eq!(m.name(), "bs-1stock");
        assert_eq!(cfg.claim(&m).unwrap().name(), "call");
    }

    #[test]
    fn overrides_apply_on_presets() {
        let text = BS.replace("preset = \"bs-1stock\"", "preset = \"bs-1stock\"\nrate = 0.06\nvol = [[\"0.1 + 0 * p1\"]]");
        let m = ExperimentConfig::parse(&text).unwrap().market().unwrap();
        let c = m.eval(&[1.0, 100.0], 0.0).unwrap();
        assert_eq!(c.r, 0.06);
        assert!((c.sigma[(0, 0)] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            BS.replace("bs-1stock", "nope"),
            BS.replace("steps = 10", "steps = 0"),
            BS.replace("[claim]\n        preset = \"call\"", ""),
            BS.replace("paths = 100", "paths = 100\ncolour = 3"),
            BS.replace("price-eu", "price-asian"),
            BS.replace("preset = \"call\"", "preset = \"call\"\nfactors = [1]"),
            "not toml [".to_string(),
        ] {
            assert!(ExperimentConfig::parse(&text).is_err(), "{text}");
        }
    }
}
