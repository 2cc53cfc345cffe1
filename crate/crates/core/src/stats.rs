//! Sample statistics with deterministic summation order.

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    /// Mean and `sd / sqrt(n)` of a sample; both zero for an empty sample.
    pub fn from_sample(xs: &[f64]) -> Estimate {
        let n = xs.len();
        if n == 0 {
            return Estimate { mean: 0.0, se: 0.0, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Estimate { mean, se: 0.0, n };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        Estimate {
            mean,
            se: (var / n as f64).sqrt(),
            n,
        }
    }

    /// Estimate of `E[a - b]` from paired samples (common random numbers).
    pub fn paired_difference(a: &[f64], b: &[f64]) -> Estimate {
        assert_eq!(a.len(), b.len(), "paired samples must have equal length");
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Estimate::from_sample(&diff)
    }

    /// `|mean - target| <= k * se`, with a floor for zero-variance samples.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se + 1e-12 * target.abs().max(1.0)
    }
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    slope.is_finite().then_some(slope)
}

/// Slope of `log y` against `log x`; `None` if any value is non-positive.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    ols_slope(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se() {
        let e = Estimate::from_sample(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((e.se - sd / 2.0).abs() < 1e-15);
        assert_eq!(Estimate::from_sample(&[]).n, 0);
        assert_eq!(Estimate::from_sample(&[7.0]).se, 0.0);
    }

    #[test]
    fn paired() {
        let e = Estimate::paired_difference(&[2.0, 3.0], &[1.0, 2.0]);
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.se, 0.0);
        assert!(e.within(1.0, 3.0));
    }

    #[test]
    fn slopes() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((log_log_slope(&x, &y).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(log_log_slope(&x, &[1.0, 0.0, 1.0, 1.0]), None);
        assert_eq!(ols_slope(&[1.0, 1.0], &[0.0, 1.0]), None);
    }
}
