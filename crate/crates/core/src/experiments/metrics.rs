use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Top-`k` accuracy (%) over rankings of candidate word labels. With a
/// `label_map` (word → initial/final/tone), a trial counts as a hit when any of
/// its first `k` candidates maps to the same class as the true word.
pub fn topk_accuracy(
    rankings: &[Vec<u32>],
    truth: &[u32],
    k: usize,
    label_map: Option<&[u32]>,
) -> Result<f64> {
    if rankings.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} rankings for {} trials",
            rankings.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no trials to score".into()));
    }
    let map = |w: u32| -> Result<u32> {
        match label_map {
            None => Ok(w),
            Some(m) => m
                .get(w as usize)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("unknown word label {w}"))),
        }
    };
    let mut hits = 0;
    for (r, &t) in rankings.iter().zip(truth) {
        if k > r.len() {
            return Err(Error::InvalidArgument(format!(
                "top-{k} requested from {} candidates",
                r.len()
            )));
        }
        let target = map(t)?;
        let mut hit = false;
        for &c in &r[..k] {
            hit |= map(c)? == target;
        }
        hits += hit as usize;
    }
    Ok(100.0 * hits as f64 / truth.len() as f64)
}

/// `m[true][predicted]` counts.
pub fn confusion(preds: &[u32], truth: &[u32], n: usize) -> Result<Vec<Vec<u32>>> {
    if preds.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    let mut m = vec![vec![0u32; n]; n];
    for (&p, &t) in preds.iter().zip(truth) {
        if p as usize >= n || t as usize >= n {
            return Err(Error::InvalidArgument(format!(
                "label outside 0..{n}: predicted {p}, true {t}"
            )));
        }
        m[t as usize][p as usize] += 1;
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub n: usize,
    /// Zero spread of the differences: `t` is reported as 0 and `p` as 1.
    pub degenerate: bool,
}

/// Two-sided Student-t tail probability `P(|T| ≥ |t|)`.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired t-test needs equal lengths >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd <= 1e-12 * mean.abs().max(1.0) {
        return Ok(TTest {
            t: 0.0,
            p: 1.0,
            df: n - 1,
            n,
            degenerate: true,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    Ok(TTest {
        t,
        p: student_t_two_sided(t, (n - 1) as f64),
        df: n - 1,
        n,
        degenerate: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaResult {
    pub accuracy: f64,
    pub predictions: Vec<u32>,
    pub confusion: Vec<Vec<u32>>,
}

/// Shrinkage LDA: shared covariance `(1−λ)Σ + λ·tr(Σ)/p·I`, class priors
/// from training frequencies.
pub struct Lda {
    classes: Vec<u32>,
    /// Per class: `Σ⁻¹μ_k` and `−½μ_kᵀΣ⁻¹μ_k + log π_k`.
    coef: Vec<(DVector<f64>, f64)>,
}

impl Lda {
    pub fn fit(x: &[Vec<f64>], y: &[u32], shrinkage: f64) -> Result<Lda> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::InvalidArgument(
                "LDA needs one label per training row".into(),
            ));
        }
        if !(0.0..=1.0).contains(&shrinkage) {
            return Err(Error::Config(format!(
                "shrinkage {shrinkage} outside [0, 1]"
            )));
        }
        let p = x[0].len();
        let mut classes: Vec<u32> = y.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::InvalidArgument(
                "LDA needs at least two classes".into(),
            ));
        }
        let mut means = vec![DVector::<f64>::zeros(p); classes.len()];
        let mut counts = vec![0usize; classes.len()];
        let pos = |c: u32| classes.binary_search(&c).unwrap();
        for (row, &c) in x.iter().zip(y) {
            let k = pos(c);
            means[k] += DVector::from_column_slice(row);
            counts[k] += 1;
        }
        for (m, &n) in means.iter_mut().zip(&counts) {
            *m /= n as f64;
        }
        let mut cov = DMatrix::<f64>::zeros(p, p);
        for (row, &c) in x.iter().zip(y) {
            let r = DVector::from_column_slice(row) - &means[pos(c)];
            cov += &r * r.transpose();
        }
        let dof = (x.len() - classes.len()).max(1) as f64;
        cov /= dof;
        let trace = cov.trace();
        let cov =
            cov * (1.0 - shrinkage) + DMatrix::identity(p, p) * (shrinkage * trace / p as f64);
        let singular = || {
            Error::SingularCovariance(format!(
                "{p}×{p} shared covariance is not positive definite"
            ))
        };
        let chol = cov.cholesky().ok_or_else(singular)?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = (diag.min(), diag.max());
        if !(lo * lo > 1e-12 * hi * hi) {
            return Err(singular());
        }
        let n = x.len() as f64;
        let coef = means
            .iter()
            .zip(&counts)
            .map(|(m, &c)| {
                let w = chol.solve(m);
                let b = -0.5 * m.dot(&w) + (c as f64 / n).ln();
                (w, b)
            })
            .collect();
        Ok(Lda { classes, coef })
    }

    pub fn predict(&self, row: &[f64]) -> u32 {
        let x = DVector::from_column_slice(row);
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, (w, b)) in self.coef.iter().enumerate() {
            let s = w.dot(&x) + b;
            if s > best.0 {
                best = (s, k);
            }
        }
        self.classes[best.1]
    }
}

/// Fit on the training rows, score the test rows; `n_classes` sizes the confusion matrix.
pub fn lda_probe(
    train_x: &[Vec<f64>],
    train_y: &[u32],
    test_x: &[Vec<f64>],
    test_y: &[u32],
    n_classes: usize,
    shrinkage: f64,
) -> Result<LdaResult> {
    let lda = Lda::fit(train_x, train_y, shrinkage)?;
    let predictions: Vec<u32> = test_x.iter().map(|r| lda.predict(r)).collect();
    let correct = predictions
        .iter()
        .zip(test_y)
        .filter(|(p, t)| p == t)
        .count();
    Ok(LdaResult {
        accuracy: 100.0 * correct as f64 / test_y.len().max(1) as f64,
        confusion: confusion(&predictions, test_y, n_classes)?,
        predictions,
    })
}
