//! Cross-sectional least squares on functions of the path state.
//!
//! Raw features (log prices, log deflator, wealth) are standardised, constant
//! columns are dropped and collinear directions are removed by a principal
//! component rotation. The basis is then built on the whitened components.
//! In a one-stock market with constant coefficients `log H` is an affine
//! function of `log P1`, so the rotation is what keeps the design regular.
//!
//! Gram matrices are accumulated over fixed chunks of rows and summed in chunk
//! order, which keeps fits bit-identical for any number of threads.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};

const CHUNK: usize = 4096;

/// Shape of the regression basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisKind {
    /// All monomials of total degree at most `degree`.
    Polynomial { degree: usize },
    /// Per component: linear term plus hinges `(u - k)+` at `knots` quantiles.
    Hinge { knots: usize },
}

impl Default for BasisKind {
    fn default() -> Self {
        BasisKind::Polynomial { degree: 4 }
    }
}

/// A fitted regression, possibly for several targets sharing one design.
#[derive(Debug, Clone)]
pub struct Regression {
    k: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    keep: Vec<usize>,
    /// Columns map standardised kept features to whitened components.
    rotation: DMatrix<f64>,
    kind: BasisKind,
    monomials: Vec<Vec<u32>>,
    knots: Vec<Vec<f64>>,
    coef: Vec<DVector<f64>>,
}

fn monomials(m: usize, degree: usize) -> Vec<Vec<u32>> {
    fn rec(m: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur.push(e);
            rec(m, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(m, degree as u32, &mut Vec::new(), &mut out);
    out.sort_by_key(|e| e.iter().sum::<u32>());
    out
}

impl Regression {
    /// Fits every target against `features` (row-major, `k` columns).
    pub fn fit(features: &[f64], k: usize, targets: &[&[f64]], kind: BasisKind) -> Result<Regression> {
        let rows = targets.first().map(|t| t.len()).unwrap_or(0);
        if rows == 0 || targets.iter().any(|t| t.len() != rows) || features.len() != rows * k {
            return Err(Error::DegenerateBasis(format!(
                "design has {} feature values for {rows} rows of {k} columns",
                features.len()
            )));
        }
        let nf = rows as f64;
        let mut mean = vec![0.0; k];
        for row in features.chunks(k.max(1)).take(rows) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut var = vec![0.0; k];
        for row in features.chunks(k.max(1)).take(rows) {
            for j in 0..k {
                var[j] += (row[j] - mean[j]).powi(2);
            }
        }
        let scale: Vec<f64> = var.iter().map(|v| (v / nf).sqrt()).collect();
        let keep: Vec<usize> = (0..k)
            .filter(|&j| scale[j] > 1e-10 * mean[j].abs().max(1.0))
            .collect();

        let kk = keep.len();
        let mut cov = DMatrix::<f64>::zeros(kk, kk);
        let mut z = vec![0.0; kk];
        for row in features.chunks(k.max(1)).take(rows) {
            for (a, &j) in keep.iter().enumerate() {
                z[a] = (row[j] - mean[j]) / scale[j];
            }
            for a in 0..kk {
                for b in 0..=a {
                    cov[(a, b)] += z[a] * z[b];
                }
            }
        }
        for a in 0..kk {
            for b in 0..a {
                cov[(b, a)] = cov[(a, b)];
            }
        }
        cov /= nf;
        let rotation = if kk == 0 {
            DMatrix::zeros(0, 0)
        } else {
            let eig = SymmetricEigen::new(cov);
            let mut order: Vec<usize> = (0..kk).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let top = eig.eigenvalues[order[0]].max(0.0);
            let kept: Vec<usize> = order
                .into_iter()
                .filter(|&i| eig.eigenvalues[i] > 1e-8 * top && top > 0.0)
                .collect();
            let mut rot = DMatrix::zeros(kk, kept.len());
            for (c, &i) in kept.iter().enumerate() {
                let v = eig.eigenvectors.column(i);
                // Fix the sign so the rotation is a deterministic function of the data.
                let pivot = v.iter().copied().fold(0.0, |acc: f64, x| if x.abs() > acc.abs() { x } else { acc });
                let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
                let s = sign / eig.eigenvalues[i].sqrt();
                for a in 0..kk {
                    rot[(a, c)] = v[a] * s;
                }
            }
            rot
        };

        let mut reg = Regression {
            k,
            mean,
            scale,
            keep,
            rotation,
            kind,
            monomials: Vec::new(),
            knots: Vec::new(),
            coef: Vec::new(),
        };
        let m = reg.rotation.ncols();
        let comps: Vec<f64> = features
            .par_chunks(k.max(1))
            .take(rows)
            .flat_map_iter(|row| reg.components(row))
            .collect();
        match kind {
            BasisKind::Polynomial { degree } => reg.monomials = monomials(m, degree),
            BasisKind::Hinge { knots } => {
                reg.knots = (0..m)
                    .map(|c| {
                        let mut col: Vec<f64> = comps.iter().skip(c).step_by(m).copied().collect();
                        col.sort_by(f64::total_cmp);
                        (1..=knots)
                            .map(|l| col[(l * (rows - 1)) / (knots + 1)])
                            .collect()
                    })
                    .collect();
            }
        }
        let len = reg.basis_len();
        if rows < len {
            return Err(Error::DegenerateBasis(format!(
                "{rows} rows cannot identify {len} basis functions"
            )));
        }

        let ntarget = targets.len();
        let chunks: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..rows.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(rows);
                let mut g = DMatrix::zeros(len, len);
                let mut r = DMatrix::zeros(len, ntarget);
                let mut phi = vec![0.0; len];
                for i in lo..hi {
                    reg.basis_from_components(&comps[i * m..(i + 1) * m], &mut phi);
                    for a in 0..len {
                        for b in 0..=a {
                            g[(a, b)] += phi[a] * phi[b];
                        }
                        for (t, target) in targets.iter().enumerate() {
                            r[(a, t)] += phi[a] * target[i];
                        }
                    }
                }
                (g, r)
            })
            .collect();
        let mut gram = DMatrix::zeros(len, len);
        let mut rhs = DMatrix::zeros(len, ntarget);
        for (g, r) in chunks {
            gram += g;
            rhs += r;
        }
        for a in 0..len {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        if rhs.iter().any(|x| !x.is_finite()) || gram.iter().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateBasis("non-finite regression data".into()));
        }
        let svd = gram.svd(true, true);
        let top = svd.singular_values.max();
        let sol = svd
            .solve(&rhs, 1e-12 * top.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::DegenerateBasis(e.to_string()))?;
        reg.coef = (0..ntarget).map(|t| sol.column(t).into_owned()).collect();
        Ok(reg)
    }

    /// Number of basis functions.
    pub fn basis_len(&self) -> usize {
        match self.kind {
            BasisKind::Polynomial { .. } => self.monomials.len(),
            BasisKind::Hinge { .. } => 1 + self.knots.iter().map(|k| 1 + k.len()).sum::<usize>(),
        }
    }

    /// Number of independent directions retained from the features.
    pub fn rank(&self) -> usize {
        self.rotation.ncols()
    }

    fn components(&self, row: &[f64]) -> Vec<f64> {
        let m = self.rotation.ncols();
        let mut out = vec![0.0; m];
        for (a, &j) in self.keep.iter().enumerate() {
            let z = (row[j] - self.mean[j]) / self.scale[j];
            for (c, o) in out.iter_mut().enumerate() {
                *o += z * self.rotation[(a, c)];
            }
        }
        out
    }

    fn basis_from_components(&self, u: &[f64], phi: &mut [f64]) {
        match self.kind {
            BasisKind::Polynomial { .. } => {
                for (slot, exps) in phi.iter_mut().zip(&self.monomials) {
                    let mut v = 1.0;
                    for (x, &e) in u.iter().zip(exps) {
                        v *= x.powi(e as i32);
                    }
                    *slot = v;
                }
            }
            BasisKind::Hinge { .. } => {
                phi[0] = 1.0;
                let mut at = 1;
                for (c, knots) in self.knots.iter().enumerate() {
                    phi[at] = u[c];
                    at += 1;
                    for k in knots {
                        phi[at] = (u[c] - k).max(0.0);
                        at += 1;
                    }
                }
            }
        }
    }

    /// Prediction of target `target` at one feature row.
    pub fn predict(&self, row: &[f64], target: usize) -> f64 {
        debug_assert_eq!(row.len(), self.k);
        let u = self.components(row);
        let mut phi = vec![0.0; self.basis_len()];
        self.basis_from_components(&u, &mut phi);
        self.coef[target].iter().zip(&phi).map(|(c, p)| c * p).sum()
    }

    /// Predictions of every target at one feature row.
    pub fn predict_all(&self, row: &[f64]) -> Vec<f64> {
        let u = self.components(row);
        let mut phi = vec![0.0; self.basis_len()];
        self.basis_from_components(&u, &mut phi);
        self.coef
            .iter()
            .map(|c| c.iter().zip(&phi).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn targets(&self) -> usize {
        self.coef.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_count() {
        assert_eq!(monomials(2, 4).len(), 15);
        assert_eq!(monomials(0, 4).len(), 1);
        assert_eq!(monomials(3, 2).len(), 10);
    }

    #[test]
    fn recovers_polynomial() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 50.0).collect();
        let y: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x - 0.5 * x * x).collect();
        let r = Regression::fit(&xs, 1, &[&y], BasisKind::Polynomial { degree: 2 }).unwrap();
        for x in [0.3, 1.7, 3.2] {
            assert!((r.predict(&[x], 0) - (1.0 + 2.0 * x - 0.5 * x * x)).abs() < 1e-9);
        }
    }

    #[test]
    fn collinear_and_constant_features() {
        // Column 1 is affine in column 0, column 2 is constant.
        let mut f = Vec::new();
        let mut y = Vec::new();
        for i in 0..100 {
            let x = i as f64 / 10.0;
            f.extend_from_slice(&[x, 3.0 - 2.0 * x, 7.0]);
            y.push(x * x);
        }
        let r = Regression::fit(&f, 3, &[&y], BasisKind::Polynomial { degree: 2 }).unwrap();
        assert_eq!(r.rank(), 1);
        assert!((r.predict(&[2.5, -2.0, 7.0], 0) - 6.25).abs() < 1e-8);
    }

    #[test]
    fn constant_design_gives_mean() {
        let f = vec![1.0; 10];
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let r = Regression::fit(&f, 1, &[&y], BasisKind::default()).unwrap();
        assert_eq!(r.basis_len(), 1);
        assert!((r.predict(&[1.0], 0) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_rows() {
        let f = vec![0.0, 1.0, 2.0];
        let y = vec![0.0, 1.0, 4.0];
        let err = Regression::fit(&f, 1, &[&y], BasisKind::Polynomial { degree: 4 }).unwrap_err();
        assert!(matches!(err, Error::DegenerateBasis(_)));
    }

    #[test]
    fn hinge_fits_kink() {
        let xs: Vec<f64> = (0..400).map(|i| i as f64 / 100.0).collect();
        let y: Vec<f64> = xs.iter().map(|x| (x - 2.0f64).max(0.0)).collect();
        let r = Regression::fit(&xs, 1, &[&y], BasisKind::Hinge { knots: 7 }).unwrap();
        assert!((r.predict(&[3.5], 0) - 1.5).abs() < 0.05);
        assert!(r.predict(&[0.5], 0).abs() < 0.05);
    }

    #[test]
    fn thread_count_does_not_change_fit() {
        let f: Vec<f64> = (0..20_000).map(|i| ((i * 7919) % 1000) as f64 / 100.0).collect();
        let y: Vec<f64> = f.iter().map(|x| x.sin()).collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| Regression::fit(&f, 1, &[&y], BasisKind::default()).unwrap().predict(&[3.3], 0))
        };
        assert_eq!(run(1).to_bits(), run(3).to_bits());
    }
}
