use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureMatrix;
use crate::error::{Error, Result};
use crate::tensor::gemm;

/// Label fractions of the probe protocol.
pub const PROBE_FRACTIONS: [f64; 3] = [1.0, 0.5, 0.2];
/// L2 strengths tried on the validation split.
pub const L2_GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];
const MAX_ITERS: usize = 1000;
const GRAD_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub fraction: f64,
    /// Percentages.
    pub top1: f64,
    pub top5: f64,
    pub l2: f64,
    pub train_items: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
}

/// Multinomial logistic regression on standardised features.
#[derive(Clone, Debug)]
pub struct LinearClassifier {
    classes: usize,
    dim: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `classes x (dim + 1)`, bias last.
    weights: Vec<f64>,
}

fn standardise(x: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let d = x.dim;
    let n = x.rows as f64;
    let mut mean = vec![0.0; d];
    x.iter_rows().for_each(|r| mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n));
    let mut var = vec![0.0; d];
    x.iter_rows().for_each(|r| {
        var.iter_mut()
            .zip(r)
            .zip(&mean)
            .for_each(|((s, v), m)| *s += (v - m) * (v - m) / n)
    });
    let scale = var.iter().map(|v| if *v > 1e-12 { 1.0 / v.sqrt() } else { 1.0 }).collect();
    (mean, scale)
}

impl LinearClassifier {
    fn design(&self, x: &FeatureMatrix) -> Vec<f64> {
        let d1 = self.dim + 1;
        let mut out = Vec::with_capacity(x.rows * d1);
        for r in x.iter_rows() {
            out.extend(r.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s));
            out.push(1.0);
        }
        out
    }

    fn logits(&self, design: &[f64], rows: usize, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; rows * self.classes];
        gemm(rows, self.dim + 1, self.classes, 1.0, design, false, w, true, 0.0, &mut out);
        out
    }

    /// Loss and gradient of mean cross-entropy plus `l2/2 |W|^2` (bias excluded).
    fn loss_grad(&self, design: &[f64], labels: &[usize], w: &[f64], l2: f64) -> (f64, Vec<f64>) {
        let n = labels.len();
        let (k, d1) = (self.classes, self.dim + 1);
        let mut p = self.logits(design, n, w);
        let mut loss = 0.0;
        for (row, &y) in p.chunks_mut(k).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            loss += z.ln() + max - row[y];
            row.iter_mut().for_each(|v| *v = (*v - max).exp() / z);
            row[y] -= 1.0;
        }
        let mut grad = vec![0.0; k * d1];
        gemm(k, n, d1, 1.0 / n as f64, &p, true, design, false, 0.0, &mut grad);
        loss /= n as f64;
        for c in 0..k {
            for j in 0..self.dim {
                let wv = w[c * d1 + j];
                loss += 0.5 * l2 * wv * wv;
                grad[c * d1 + j] += l2 * wv;
            }
        }
        (loss, grad)
    }

    /// Fits by accelerated gradient descent with a step of 1/L, L bounded by
    /// the largest design eigenvalue.
    pub fn fit(x: &FeatureMatrix, labels: &[usize], classes: usize, l2: f64) -> Result<Self> {
        if x.rows == 0 || labels.len() != x.rows || classes < 2 {
            return Err(Error::Argument("probe needs labelled rows and >= 2 classes".into()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Argument(format!("label {bad} out of range")));
        }
        let (mean, scale) = standardise(x);
        let mut clf = LinearClassifier {
            classes,
            dim: x.dim,
            mean,
            scale,
            weights: vec![0.0; classes * (x.dim + 1)],
        };
        let design = clf.design(x);
        let lipschitz = 0.5 * top_eigenvalue(&design, x.rows, x.dim + 1) / x.rows as f64 + l2;
        let step = 1.0 / lipschitz.max(1e-12);
        let mut w = clf.weights.clone();
        let mut prev = w.clone();
        for it in 0..MAX_ITERS {
            let beta = it as f64 / (it as f64 + 3.0);
            let y: Vec<f64> = w.iter().zip(&prev).map(|(a, b)| a + beta * (a - b)).collect();
            let (_, g) = clf.loss_grad(&design, labels, &y, l2);
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            prev = w;
            w = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            if gnorm < GRAD_TOL {
                break;
            }
        }
        clf.weights = w;
        Ok(clf)
    }

    /// Class scores, row-major `rows x classes`.
    pub fn scores(&self, x: &FeatureMatrix) -> Vec<f64> {
        let design = self.design(x);
        self.logits(&design, x.rows, &self.weights)
    }

    /// `(top1, top5)` accuracy in percent; top-5 uses min(5, classes).
    pub fn accuracy(&self, x: &FeatureMatrix, labels: &[usize]) -> (f64, f64) {
        let s = self.scores(x);
        let k5 = self.classes.min(5);
        let (mut t1, mut t5) = (0usize, 0usize);
        for (row, &y) in s.chunks(self.classes).zip(labels) {
            let better = row.iter().enumerate().filter(|(c, v)| **v > row[y] || (**v == row[y] && *c < y)).count();
            t1 += usize::from(better == 0);
            t5 += usize::from(better < k5);
        }
        let n = labels.len().max(1) as f64;
        (100.0 * t1 as f64 / n, 100.0 * t5 as f64 / n)
    }
}

fn top_eigenvalue(a: &[f64], rows: usize, cols: usize) -> f64 {
    let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut lambda = 0.0;
    for _ in 0..50 {
        let mut av = vec![0.0; rows];
        gemm(rows, cols, 1, 1.0, a, false, &v, false, 0.0, &mut av);
        let mut atav = vec![0.0; cols];
        gemm(cols, rows, 1, 1.0, a, true, &av, false, 0.0, &mut atav);
        let norm = atav.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = atav.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

fn by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    labels.iter().enumerate().for_each(|(i, l)| m.entry(*l).or_default().push(i));
    m
}

fn select(x: &FeatureMatrix, idx: &[usize]) -> FeatureMatrix {
    FeatureMatrix {
        rows: idx.len(),
        dim: x.dim,
        data: idx.iter().flat_map(|&i| x.row(i).to_vec()).collect(),
    }
}

/// Stratified subset: `floor(fraction * n_c)` items of each class.
pub fn stratified_subset(labels: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!("label fraction {fraction} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (class, mut items) in by_class(labels) {
        let keep = (fraction * items.len() as f64 + 1e-9).floor() as usize;
        if keep == 0 {
            return Err(Error::Data(format!(
                "fraction {fraction} leaves class {class} without training labels"
            )));
        }
        items.shuffle(&mut rng);
        out.extend_from_slice(&items[..keep]);
    }
    out.sort_unstable();
    Ok(out)
}

/// One probe row: fit on a stratified fraction of the training set, choose
/// L2 on a held-out fifth of it, refit, and score on the test set.
pub fn linear_probe(
    train: &FeatureMatrix,
    train_labels: &[usize],
    test: &FeatureMatrix,
    test_labels: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<ProbeRow> {
    let classes = train_labels
        .iter()
        .chain(test_labels)
        .max()
        .map_or(0, |m| m + 1);
    if by_class(train_labels).len() < 2 {
        return Err(Error::Data("linear probe needs >= 2 classes".into()));
    }
    let subset = stratified_subset(train_labels, fraction, seed)?;
    let sub_labels: Vec<usize> = subset.iter().map(|&i| train_labels[i]).collect();
    let (mut fit_idx, mut val_idx) = (Vec::new(), Vec::new());
    for items in by_class(&sub_labels).values() {
        for (j, &pos) in items.iter().enumerate() {
            if items.len() >= 2 && j % 5 == 4 {
                val_idx.push(subset[pos]);
            } else {
                fit_idx.push(subset[pos]);
            }
        }
    }
    let mut l2 = L2_GRID[L2_GRID.len() / 2];
    if !val_idx.is_empty() {
        let xf = select(train, &fit_idx);
        let yf: Vec<usize> = fit_idx.iter().map(|&i| train_labels[i]).collect();
        let xv = select(train, &val_idx);
        let yv: Vec<usize> = val_idx.iter().map(|&i| train_labels[i]).collect();
        let mut best = f64::NEG_INFINITY;
        for &cand in &L2_GRID {
            let (acc, _) = LinearClassifier::fit(&xf, &yf, classes, cand)?.accuracy(&xv, &yv);
            if acc > best {
                best = acc;
                l2 = cand;
            }
        }
    }
    let xs = select(train, &subset);
    let clf = LinearClassifier::fit(&xs, &sub_labels, classes, l2)?;
    let (top1, top5) = clf.accuracy(test, test_labels);
    Ok(ProbeRow {
        fraction,
        top1,
        top5,
        l2,
        train_items: subset.len(),
    })
}

/// All fractions of the protocol.
pub fn probe_report(
    train: &FeatureMatrix,
    train_labels: &[usize],
    test: &FeatureMatrix,
    test_labels: &[usize],
    fractions: &[f64],
    seed: u64,
) -> Result<ProbeReport> {
    let rows = fractions
        .iter()
        .map(|&f| linear_probe(train, train_labels, test, test_labels, f, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (FeatureMatrix, Vec<usize>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            let x = if c == 0 { -1.0 } else { 1.0 } * (1.0 + (i as f64) * 0.01);
            rows.push(vec![x, (i as f64 * 0.37).sin()]);
            labels.push(c);
        }
        (FeatureMatrix::from_rows(rows).unwrap(), labels)
    }

    #[test]
    fn separable_two_class_is_perfect() {
        let (x, y) = toy();
        let row = linear_probe(&x, &y, &x, &y, 1.0, 0).unwrap();
        assert_eq!(row.top1, 100.0);
        assert!(row.top5 >= row.top1);
    }

    #[test]
    fn empty_class_fraction_is_a_data_error() {
        let x = FeatureMatrix::from_rows(vec![vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(
            stratified_subset(&[0, 1, 1], 0.5, 0),
            Err(Error::Data(_))
        ));
        assert!(linear_probe(&x, &[0, 1, 1], &x, &[0, 1, 1], 0.5, 0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = toy();
        let clf = LinearClassifier::fit(&x, &y, 3, 0.1).unwrap();
        let design = clf.design(&x);
        let w: Vec<f64> = (0..clf.weights.len()).map(|i| (i as f64 * 0.3).cos()).collect();
        let (_, g) = clf.loss_grad(&design, &y, &w, 0.1);
        for i in 0..w.len() {
            let mut wp = w.clone();
            wp[i] += 1e-6;
            let mut wm = w.clone();
            wm[i] -= 1e-6;
            let fd = (clf.loss_grad(&design, &y, &wp, 0.1).0 - clf.loss_grad(&design, &y, &wm, 0.1).0) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6, "{i}: {fd} vs {}", g[i]);
        }
    }
}
