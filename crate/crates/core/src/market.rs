//! Markets with deterministic coefficients `b(p,t)`, `sigma(p,t)`,
//! `delta(p,t)`, `r(p,t)`, and the market price of risk they induce.
//!
//! The price argument `p` is always the augmented vector `(p0, p1, ..., pn)`
//! with the shadow stock in slot 0.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::expr::Expr;
use crate::linalg::{self, MatrixReal, VectorReal};

type ScalarFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// One scalar coefficient entry.
#[derive(Clone)]
pub enum Field {
    Const(f64),
    /// Formula over `p0..pn` and `t`.
    Formula(Expr),
    /// Arbitrary closure; the flags say whether it reads `p` and `t`.
    Func {
        f: ScalarFn,
        state: bool,
        time: bool,
    },
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Const(v) => write!(f, "{v}"),
            Field::Formula(e) => write!(f, "{e}"),
            Field::Func { .. } => f.write_str("<fn>"),
        }
    }
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Const(v)
    }
}

impl Field {
    pub fn func(f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static, state: bool, time: bool) -> Field {
        Field::Func {
            f: Arc::new(f),
            state,
            time,
        }
    }

    /// Parses a formula over `p0..pn, t` for an `n`-stock market.
    pub fn formula(src: &str, n: usize) -> Result<Field> {
        let names = variable_names(n);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let e = Expr::parse(src, &refs)?;
        Ok(match e.as_constant() {
            Some(v) => Field::Const(v),
            None => Field::Formula(e),
        })
    }

    #[inline]
    pub fn eval(&self, p: &[f64], t: f64) -> f64 {
        match self {
            Field::Const(v) => *v,
            Field::Formula(e) => {
                let mut vars = [0.0; 16];
                if p.len() < vars.len() {
                    vars[..p.len()].copy_from_slice(p);
                    vars[p.len()] = t;
                    e.eval(&vars[..=p.len()])
                } else {
                    let mut v = p.to_vec();
                    v.push(t);
                    e.eval(&v)
                }
            }
            Field::Func { f, .. } => f(p, t),
        }
    }

    fn reads_state(&self, n: usize) -> bool {
        match self {
            Field::Const(_) => false,
            Field::Formula(e) => (0..=n).any(|k| e.uses(k)),
            Field::Func { state, .. } => *state,
        }
    }

    fn reads_time(&self, n: usize) -> bool {
        match self {
            Field::Const(_) => false,
            Field::Formula(e) => e.uses(n + 1),
            Field::Func { time, .. } => *time,
        }
    }
}

/// `["p0", ..., "pn", "t"]`.
pub fn variable_names(n: usize) -> Vec<String> {
    let mut v: Vec<String> = (0..=n).map(|k| format!("p{k}")).collect();
    v.push("t".into());
    v
}

/// Coefficients evaluated at one `(p, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub b: Vec<f64>,
    /// `n x d`.
    pub sigma: MatrixReal,
    pub delta: Vec<f64>,
    pub r: f64,
}

impl Coefficients {
    pub fn zeros(n: usize, d: usize) -> Self {
        Coefficients {
            b: vec![0.0; n],
            sigma: MatrixReal::zeros(n, d),
            delta: vec![0.0; n],
            r: 0.0,
        }
    }

    /// `b + delta - r 1`.
    pub fn excess(&self) -> VectorReal {
        VectorReal::from_iterator(self.b.len(), self.b.iter().zip(&self.delta).map(|(b, d)| b + d - self.r))
    }
}

/// The market `(P, b, sigma, delta, r, p0)` on `[0, T]`.
#[derive(Debug, Clone)]
pub struct MarketSpec {
    name: String,
    n: usize,
    d: usize,
    p0: Vec<f64>,
    horizon: f64,
    drift: Vec<Field>,
    vol: Vec<Field>,
    dividend: Vec<Field>,
    rate: Field,
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(invalid(format!("{what}: expected {want} entries, got {got}")))
    }
}

impl MarketSpec {
    /// A market with all coefficients zero. `p0` is the augmented initial price.
    pub fn new(n: usize, d: usize, p0: Vec<f64>, horizon: f64) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(invalid("a market needs n >= 1 stocks and d >= 1 factors"));
        }
        check_len("initial price", p0.len(), n + 1)?;
        if p0.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(invalid("initial prices must be strictly positive"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(MarketSpec {
            name: "custom".into(),
            n,
            d,
            p0,
            horizon,
            drift: vec![Field::Const(0.0); n],
            vol: vec![Field::Const(0.0); n * d],
            dividend: vec![Field::Const(0.0); n],
            rate: Field::Const(0.0),
        })
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_drift(mut self, b: Vec<Field>) -> Result<Self> {
        check_len("drift", b.len(), self.n)?;
        self.drift = b;
        Ok(self)
    }

    /// Volatility entries row-major, `n` rows of `d`.
    pub fn with_vol(mut self, sigma: Vec<Field>) -> Result<Self> {
        check_len("volatility", sigma.len(), self.n * self.d)?;
        self.vol = sigma;
        Ok(self)
    }

    pub fn with_dividend(mut self, delta: Vec<Field>) -> Result<Self> {
        check_len("dividend", delta.len(), self.n)?;
        self.dividend = delta;
        Ok(self)
    }

    pub fn with_rate(mut self, r: Field) -> Self {
        self.rate = r;
        self
    }

    pub fn with_p0(mut self, p0: Vec<f64>) -> Result<Self> {
        check_len("initial price", p0.len(), self.n + 1)?;
        if p0.iter().any(|p| !(*p > 0.0)) {
            return Err(invalid("initial prices must be strictly positive"));
        }
        self.p0 = p0;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(invalid("horizon must be positive"));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p0(&self) -> &[f64] {
        &self.p0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn fields(&self) -> impl Iterator<Item = &Field> {
        self.drift
            .iter()
            .chain(&self.vol)
            .chain(&self.dividend)
            .chain(std::iter::once(&self.rate))
    }

    /// No coefficient reads the price state.
    pub fn state_free(&self) -> bool {
        !self.fields().any(|f| f.reads_state(self.n))
    }

    /// No coefficient reads calendar time.
    pub fn autonomous(&self) -> bool {
        !self.fields().any(|f| f.reads_time(self.n))
    }

    /// Evaluates every coefficient at `(p, t)` into `out`.
    pub fn eval_into(&self, p: &[f64], t: f64, out: &mut Coefficients) -> Result<()> {
        let bad = |what: &str| Error::ModelEvaluation { what: what.into(), t };
        for (k, f) in self.drift.iter().enumerate() {
            out.b[k] = f.eval(p, t);
        }
        for (k, f) in self.dividend.iter().enumerate() {
            out.delta[k] = f.eval(p, t);
        }
        for i in 0..self.n {
            for j in 0..self.d {
                out.sigma[(i, j)] = self.vol[i * self.d + j].eval(p, t);
            }
        }
        out.r = self.rate.eval(p, t);
        if out.b.iter().any(|x| !x.is_finite()) {
            return Err(bad("drift"));
        }
        if out.delta.iter().any(|x| !x.is_finite()) {
            return Err(bad("dividend"));
        }
        if out.sigma.iter().any(|x| !x.is_finite()) {
            return Err(bad("volatility"));
        }
        if !out.r.is_finite() {
            return Err(bad("rate"));
        }
        Ok(())
    }

    pub fn eval(&self, p: &[f64], t: f64) -> Result<Coefficients> {
        let mut c = Coefficients::zeros(self.n, self.d);
        self.eval_into(p, t, &mut c)?;
        Ok(c)
    }

    /// Default screening box: each price within a factor 2 of `p0`, all of `[0, T]`.
    pub fn default_region(&self) -> Region {
        Region {
            lo: self.p0.iter().map(|p| p * 0.5).collect(),
            hi: self.p0.iter().map(|p| p * 2.0).collect(),
            t_lo: 0.0,
            t_hi: self.horizon,
        }
    }

    /// Empirical local-Lipschitz screen: the largest difference quotient of
    /// any coefficient under relative price bumps of size `h`, over `samples`
    /// points of `region`. A screen, not a proof.
    pub fn lipschitz_screen(&self, region: &Region, samples: usize, h: f64) -> Result<f64> {
        region.check(self.n)?;
        let mut worst: f64 = 0.0;
        for (p, t) in region.points(samples) {
            let base = self.eval(&p, t)?;
            for k in 0..=self.n {
                let mut q = p.clone();
                let step = h * p[k];
                q[k] += step;
                let bumped = self.eval(&q, t)?;
                let diff = base
                    .b
                    .iter()
                    .zip(&bumped.b)
                    .chain(base.delta.iter().zip(&bumped.delta))
                    .chain(base.sigma.iter().zip(bumped.sigma.iter()))
                    .map(|(a, b)| (a - b).abs())
                    .fold((base.r - bumped.r).abs(), f64::max);
                worst = worst.max(diff / step);
            }
        }
        Ok(worst)
    }
}

/// Market price of risk at one point, with the arbitrage residual.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskPrice {
    pub theta: VectorReal,
    pub kappa: VectorReal,
    pub rank: usize,
}

fn check_point(m: &MarketSpec, p: &[f64], t: f64) -> Result<()> {
    check_len("price point", p.len(), m.n + 1)?;
    if p.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(invalid("prices must be strictly positive"));
    }
    if !(0.0..=m.horizon * (1.0 + 1e-12)).contains(&t) {
        return Err(invalid(format!("time {t} outside [0, {}]", m.horizon)));
    }
    Ok(())
}

/// `theta` solves `sigma theta = row part of (b + delta - r 1)` with minimal
/// norm; `kappa` is the part of the excess return in `ker(sigma')`.
pub fn risk_price(m: &MarketSpec, p: &[f64], t: f64, tol: f64) -> Result<RiskPrice> {
    check_point(m, p, t)?;
    let c = m.eval(p, t)?;
    risk_price_from(&c, tol)
}

/// [`risk_price`] from already evaluated coefficients.
pub fn risk_price_from(c: &Coefficients, tol: f64) -> Result<RiskPrice> {
    if c.b.len() == 1 {
        Ok(risk_price_single(c))
    } else {
        risk_price_svd(c, tol)
    }
}

/// One stock: `sigma` is a single row, so `ker(sigma') = {0}` unless the row
/// vanishes.
fn risk_price_single(c: &Coefficients) -> RiskPrice {
    let excess = c.b[0] + c.delta[0] - c.r;
    let d = c.sigma.ncols();
    let norm2: f64 = c.sigma.iter().map(|x| x * x).sum();
    if norm2 > 0.0 {
        let theta = VectorReal::from_iterator(d, c.sigma.iter().map(|s| s * excess / norm2));
        RiskPrice {
            theta,
            kappa: VectorReal::zeros(1),
            rank: 1,
        }
    } else {
        RiskPrice {
            theta: VectorReal::zeros(d),
            kappa: VectorReal::from_element(1, excess),
            rank: 0,
        }
    }
}

pub(crate) fn risk_price_svd(c: &Coefficients, tol: f64) -> Result<RiskPrice> {
    let excess = c.excess();
    let (kappa, row) = linalg::project_kernel(&c.sigma.transpose(), &excess, tol)?;
    let sol = linalg::min_norm_solution(&c.sigma, &row, tol)?;
    Ok(RiskPrice {
        theta: sol.solution,
        kappa,
        rank: sol.rank,
    })
}

/// A box of augmented prices times a time interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub t_lo: f64,
    pub t_hi: f64,
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

impl Region {
    fn check(&self, n: usize) -> Result<()> {
        check_len("region lower corner", self.lo.len(), n + 1)?;
        check_len("region upper corner", self.hi.len(), n + 1)?;
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(*l > 0.0) || h < l) {
            return Err(invalid("region must lie in the positive orthant with lo <= hi"));
        }
        if self.t_hi < self.t_lo || self.t_lo < 0.0 {
            return Err(invalid("region time interval is reversed"));
        }
        if self.lo.len() + 1 > PRIMES.len() {
            return Err(invalid("region has too many dimensions for the Halton sampler"));
        }
        Ok(())
    }

    /// The first `count` Halton points of the box (index 1 onwards).
    pub fn points(&self, count: usize) -> Vec<(Vec<f64>, f64)> {
        let dims = self.lo.len();
        (1..=count as u64)
            .map(|i| {
                let p = (0..dims)
                    .map(|k| self.lo[k] + (self.hi[k] - self.lo[k]) * radical_inverse(i, PRIMES[k]))
                    .collect();
                let t = self.t_lo + (self.t_hi - self.t_lo) * radical_inverse(i, PRIMES[dims]);
                (p, t)
            })
            .collect()
    }
}

/// Default number of screening samples.
pub const DEFAULT_SAMPLES: usize = 4096;

/// Outcome of the arbitrage screen.
#[derive(Debug, Clone, PartialEq)]
pub struct ArbitrageReport {
    pub free: bool,
    pub worst_kappa_norm: f64,
    /// The sample with the largest `|kappa|`, reported when not free.
    pub witness: Option<(Vec<f64>, f64)>,
    pub min_rank: usize,
    pub max_rank: usize,
}

impl ArbitrageReport {
    /// The rank of `sigma` changed across the sample, so `theta` may be
    /// discontinuous there.
    pub fn rank_changes(&self) -> bool {
        self.min_rank != self.max_rank
    }
}

/// Samples `|kappa|` over a low-discrepancy cover of `region`.
pub fn is_state_arbitrage_free(m: &MarketSpec, region: &Region, samples: usize, tol: f64) -> Result<ArbitrageReport> {
    region.check(m.n)?;
    let pts = region.points(samples);
    let evals: Vec<Result<(f64, usize)>> = pts
        .par_iter()
        .map(|(p, t)| {
            let rp = risk_price(m, p, *t, linalg::DEFAULT_RANK_TOL)?;
            Ok((rp.kappa.norm(), rp.rank))
        })
        .collect();
    let mut worst = 0.0;
    let mut at = None;
    let (mut min_rank, mut max_rank) = (usize::MAX, 0);
    for (k, e) in evals.into_iter().enumerate() {
        let (kn, rank) = e?;
        if kn > worst || at.is_none() {
            worst = kn;
            at = Some(k);
        }
        min_rank = min_rank.min(rank);
        max_rank = max_rank.max(rank);
    }
    if pts.is_empty() {
        min_rank = 0;
    }
    let free = worst <= tol;
    Ok(ArbitrageReport {
        free,
        worst_kappa_norm: worst,
        witness: if free { None } else { at.map(|k| pts[k].clone()) },
        min_rank,
        max_rank,
    })
}

/// Outcome of the completeness screen on a column block of `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletenessReport {
    pub complete: bool,
    pub min_rank: usize,
    pub required_rank: usize,
    /// The worst-conditioned rank-deficient sample, if any.
    pub witness: Option<(Vec<f64>, f64)>,
}

/// Checks that the columns `indices` (zero-based factor indices) of `sigma`
/// have full column rank at every sample. `tol` is the relative
/// singular-value cutoff.
pub fn completeness_check(
    m: &MarketSpec,
    region: &Region,
    samples: usize,
    indices: &[usize],
    tol: f64,
) -> Result<CompletenessReport> {
    region.check(m.n)?;
    if indices.is_empty() || indices.windows(2).any(|w| w[1] <= w[0]) || indices.iter().any(|&i| i >= m.d) {
        return Err(invalid(format!(
            "factor indices must be strictly increasing within 0..{}",
            m.d
        )));
    }
    let k = indices.len();
    let pts = region.points(samples);
    let evals: Vec<Result<(usize, f64)>> = pts
        .par_iter()
        .map(|(p, t)| {
            let c = m.eval(p, *t)?;
            let block = c.sigma.select_columns(indices);
            let rep = linalg::rank_with_tolerance(&block, tol)?;
            let cond = match rep.singular_values.first() {
                Some(&top) if top > 0.0 => rep.singular_values.get(k - 1).copied().unwrap_or(0.0) / top,
                _ => 0.0,
            };
            Ok((rep.rank, cond))
        })
        .collect();
    let mut min_rank = usize::MAX;
    let mut witness: Option<(usize, f64)> = None;
    for (i, e) in evals.into_iter().enumerate() {
        let (rank, cond) = e?;
        min_rank = min_rank.min(rank);
        if rank < k && witness.is_none_or(|(_, c)| cond < c) {
            witness = Some((i, cond));
        }
    }
    if pts.is_empty() {
        min_rank = 0;
    }
    Ok(CompletenessReport {
        complete: !pts.is_empty() && min_rank == k,
        min_rank,
        required_rank: k,
        witness: witness.map(|(i, _)| pts[i].clone()),
    })
}
