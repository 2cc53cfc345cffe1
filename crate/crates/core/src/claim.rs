//! Contingent claims: a payoff `g(x, p)`, an expiration rule and an optional
//! income paid along the way.
//!
//! The deflated value of a claim stopped at grid point `i` of a path is
//! `H(i) g(x, P(i)) - sum_{j < i} H(j) dGamma(j)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::flow::FlowPath;
use crate::noise::NoisePath;
use crate::wealth::noise_offset;

type PayoffFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
type StateFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
type StateVecFn = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;

/// When the claim expires.
#[derive(Debug, Clone, PartialEq)]
pub enum Expiry {
    /// At the end of the grid.
    Fixed,
    /// At the first grid time the augmented price leaves the open box
    /// `lo < p < hi` (componentwise), capped at the end of the grid.
    Barrier { lo: Vec<f64>, hi: Vec<f64> },
}

/// Income paid by the claim holder's wealth structure, a function of `(p, t)`.
#[derive(Clone)]
pub struct ClaimIncome {
    pub drift: StateFn,
    pub vol: StateVecFn,
}

/// A state contingent claim.
#[derive(Clone)]
pub struct ClaimSpec {
    name: String,
    payoff: PayoffFn,
    expiry: Expiry,
    income: Option<ClaimIncome>,
    /// Factors the claim is driven by; the others get a zero integrand.
    driving: Option<Vec<usize>>,
    /// Wealth argument passed to the payoff.
    x_ref: f64,
}

impl fmt::Debug for ClaimSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClaimSpec")
            .field("name", &self.name)
            .field("expiry", &self.expiry)
            .field("income", &self.income.is_some())
            .field("driving", &self.driving)
            .finish()
    }
}

impl ClaimSpec {
    pub fn new(name: impl Into<String>, payoff: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ClaimSpec {
            name: name.into(),
            payoff: Arc::new(payoff),
            expiry: Expiry::Fixed,
            income: None,
            driving: None,
            x_ref: 0.0,
        }
    }

    /// `(p_asset - k)+`; `asset` indexes the augmented price (1 is the first stock).
    pub fn call(strike: f64, asset: usize) -> Self {
        Self::new("call", move |_, p| (p[asset] - strike).max(0.0))
    }

    pub fn put(strike: f64, asset: usize) -> Self {
        Self::new("put", move |_, p| (strike - p[asset]).max(0.0))
    }

    /// Pays 1 when `p_asset > k`.
    pub fn digital(strike: f64, asset: usize) -> Self {
        Self::new("digital", move |_, p| if p[asset] > strike { 1.0 } else { 0.0 })
    }

    /// Call that expires early when `p_asset` reaches `barrier`, paying its
    /// intrinsic value at that moment.
    pub fn barrier_capped(strike: f64, barrier: f64, asset: usize, n: usize) -> Self {
        let mut hi = vec![f64::INFINITY; n + 1];
        hi[asset] = barrier;
        Self::call(strike, asset)
            .named("barrier-capped")
            .with_expiry(Expiry::Barrier {
                lo: vec![0.0; n + 1],
                hi,
            })
    }

    pub fn constant(c: f64) -> Self {
        Self::new("constant", move |_, _| c)
    }

    /// `alpha a + beta b`. Both claims must share expiry and income.
    pub fn linear(a: &ClaimSpec, alpha: f64, b: &ClaimSpec, beta: f64) -> Result<Self> {
        if a.expiry != b.expiry || a.income.is_some() || b.income.is_some() {
            return Err(invalid("linear combination needs a common expiry and no income"));
        }
        let (ga, gb) = (a.payoff.clone(), b.payoff.clone());
        Ok(ClaimSpec {
            name: format!("{alpha}*{}+{beta}*{}", a.name, b.name),
            payoff: Arc::new(move |x, p| alpha * ga(x, p) + beta * gb(x, p)),
            expiry: a.expiry.clone(),
            income: None,
            driving: a.driving.clone(),
            x_ref: a.x_ref,
        })
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_expiry(mut self, expiry: Expiry) -> Self {
        self.expiry = expiry;
        self
    }

    pub fn with_income(
        mut self,
        drift: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        vol: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.income = Some(ClaimIncome {
            drift: Arc::new(drift),
            vol: Arc::new(vol),
        });
        self
    }

    /// Declares the factors the claim depends on (zero-based).
    pub fn driven_by(mut self, factors: Vec<usize>) -> Self {
        self.driving = Some(factors);
        self
    }

    pub fn with_wealth_arg(mut self, x: f64) -> Self {
        self.x_ref = x;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn expiry(&self) -> &Expiry {
        &self.expiry
    }

    pub fn income(&self) -> Option<&ClaimIncome> {
        self.income.as_ref()
    }

    pub fn driving(&self) -> Option<&[usize]> {
        self.driving.as_deref()
    }

    pub fn payoff(&self, p: &[f64]) -> f64 {
        (self.payoff)(self.x_ref, p)
    }

    pub fn payoff_at(&self, x: f64, p: &[f64]) -> f64 {
        (self.payoff)(x, p)
    }

    /// Grid index at which the claim expires on this path.
    pub fn stop_index(&self, flow: &FlowPath) -> usize {
        let last = flow.len() - 1;
        match &self.expiry {
            Expiry::Fixed => last,
            Expiry::Barrier { lo, hi } => (0..=last)
                .find(|&i| {
                    let p = flow.price(i);
                    p.iter().zip(lo).zip(hi).any(|((x, l), h)| !(x > l && x < h))
                })
                .unwrap_or(last),
        }
    }

    /// `(b_gamma, sigma_gamma)` at a point; zero without income.
    pub fn income_at(&self, p: &[f64], t: f64, d: usize) -> (f64, Vec<f64>) {
        match &self.income {
            Some(inc) => ((inc.drift)(p, t), (inc.vol)(p, t)),
            None => (0.0, vec![0.0; d]),
        }
    }

    /// `sum_{j < i} H(j) dGamma(j)` at every grid point of the path.
    pub fn deflated_income(&self, flow: &FlowPath, noise: &NoisePath) -> Result<Vec<f64>> {
        let len = flow.len();
        if self.income.is_none() {
            return Ok(vec![0.0; len]);
        }
        let k0 = noise_offset(noise, flow)?;
        let mut out = Vec::with_capacity(len);
        let mut acc = 0.0;
        out.push(acc);
        for i in 0..len - 1 {
            let t = flow.times()[i];
            let dt = flow.times()[i + 1] - t;
            let (bg, sg) = self.income_at(flow.price(i), t, flow.d());
            let dw = noise.increment(k0 + i);
            let dgamma = bg * dt + sg.iter().zip(dw).map(|(a, b)| a * b).sum::<f64>();
            acc += flow.h()[i] * dgamma;
            out.push(acc);
        }
        Ok(out)
    }

    /// Deflated payoff if the claim is stopped at every grid point,
    /// `H(i) g(P(i)) - J(i)`.
    pub fn deflated_exercise(&self, flow: &FlowPath, noise: &NoisePath) -> Result<Vec<f64>> {
        let j = self.deflated_income(flow, noise)?;
        Ok((0..flow.len())
            .map(|i| flow.h()[i] * self.payoff(flow.price(i)) - j[i])
            .collect())
    }
}

/// Named claim presets: `call`, `put`, `digital`, `barrier-capped`.
pub fn claim_preset(name: &str, strike: f64, barrier: Option<f64>, n: usize) -> Result<ClaimSpec> {
    Ok(match name {
        "call" => ClaimSpec::call(strike, 1),
        "put" => ClaimSpec::put(strike, 1),
        "digital" => ClaimSpec::digital(strike, 1),
        "barrier-capped" => {
            let b = barrier.ok_or_else(|| invalid("barrier-capped needs a barrier level"))?;
            if b <= strike {
                return Err(invalid("barrier must lie above the strike"));
            }
            ClaimSpec::barrier_capped(strike, b, 1, n)
        }
        other => return Err(invalid(format!("unknown claim preset {other:?}"))),
    })
}

pub const CLAIM_PRESETS: [&str; 4] = ["call", "put", "digital", "barrier-capped"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::simulate_flow;
    use crate::market::{Field, MarketSpec};
    use crate::noise::{generate, TimeGrid};

    #[test]
    fn payoffs() {
        let p = [1.0, 110.0];
        assert_eq!(ClaimSpec::call(100.0, 1).payoff(&p), 10.0);
        assert_eq!(ClaimSpec::put(100.0, 1).payoff(&p), 0.0);
        assert_eq!(ClaimSpec::digital(100.0, 1).payoff(&p), 1.0);
        let l = ClaimSpec::linear(&ClaimSpec::call(100.0, 1), 2.0, &ClaimSpec::constant(1.0), -3.0).unwrap();
        assert_eq!(l.payoff(&p), 17.0);
        assert!(claim_preset("barrier-capped", 100.0, None, 1).is_err());
        assert!(claim_preset("swaption", 100.0, None, 1).is_err());
    }

    #[test]
    fn barrier_stop() {
        let m = MarketSpec::new(1, 1, vec![1.0, 100.0], 1.0)
            .unwrap()
            .with_drift(vec![Field::Const(0.5)])
            .unwrap();
        let g = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let f = simulate_flow(&m, &generate(&g, 1, 0, 0).unwrap(), 0.0, m.p0()).unwrap();
        // Deterministic growth 100 e^{0.5 t} crosses 120 between t = 0.3 and 0.4.
        let c = ClaimSpec::barrier_capped(100.0, 120.0, 1, 1);
        assert_eq!(c.stop_index(&f), 4);
        assert_eq!(ClaimSpec::call(100.0, 1).stop_index(&f), 10);
    }

    #[test]
    fn income_is_deflated() {
        let m = MarketSpec::new(1, 1, vec![1.0, 100.0], 1.0)
            .unwrap()
            .with_rate(Field::Const(0.1));
        let g = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let nz = generate(&g, 1, 0, 0).unwrap();
        let f = simulate_flow(&m, &nz, 0.0, m.p0()).unwrap();
        let c = ClaimSpec::constant(0.0).with_income(|_, _| 1.0, |_, _| vec![0.0]);
        let j = c.deflated_income(&f, &nz).unwrap();
        let expect: f64 = (0..4).map(|i| (-0.1 * i as f64 / 4.0).exp() * 0.25).sum();
        assert!((j[4] - expect).abs() < 1e-14);
    }
}
