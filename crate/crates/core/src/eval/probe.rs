use rand::seq::SliceRandom;

use crate::error::{DamsError, Result};
use crate::rng::{self, stream};

/// Fewest vectors per domain the probe accepts.
pub const MIN_PER_DOMAIN: usize = 40;
pub const PROBE_EPOCHS: usize = 200;
const TRAIN_FRACTION: f64 = 0.8;
/// Inputs are scaled to unit mean squared norm, which bounds the logistic
/// Hessian by 1/4; a step of 4 stays well inside the stable range.
const PROBE_LR: f64 = 4.0;

/// Vectors from one representation source.
#[derive(Clone, Debug, PartialEq)]
pub struct RepSet {
    pub tag: String,
    pub vectors: Vec<Vec<f64>>,
}

impl RepSet {
    pub fn new(tag: impl Into<String>, vectors: Vec<Vec<f64>>) -> Self {
        RepSet { tag: tag.into(), vectors }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    /// Held-out accuracy on a class-balanced split.
    pub accuracy: f64,
    pub count_a: usize,
    pub count_b: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub tag: String,
}

impl ProbeReport {
    pub fn to_tsv(&self) -> String {
        format!(
            "tag\taccuracy\tcount_a\tcount_b\ttrain\ttest\n{}\t{:.6}\t{}\t{}\t{}\t{}\n",
            self.tag, self.accuracy, self.count_a, self.count_b, self.train_size, self.test_size
        )
    }
}

/// Held-out accuracy of a full-batch logistic-regression probe separating
/// `a` (label 0) from `b` (label 1). The larger side is subsampled so both
/// classes are equally represented in both splits.
pub fn domain_probe(a: &RepSet, b: &RepSet, seed: u64) -> Result<ProbeReport> {
    for s in [a, b] {
        if s.vectors.len() < MIN_PER_DOMAIN {
            return Err(DamsError::InvalidBatch(format!(
                "probe needs at least {MIN_PER_DOMAIN} vectors per domain; {:?} has {}",
                s.tag,
                s.vectors.len()
            )));
        }
    }
    let dim = a.vectors[0].len();
    if dim == 0 || a.vectors.iter().chain(&b.vectors).any(|v| v.len() != dim) {
        return Err(DamsError::InvalidBatch("probe vectors must share one non-zero width".into()));
    }
    if a.vectors.iter().chain(&b.vectors).flatten().any(|x| !x.is_finite()) {
        return Err(DamsError::NumericDomain("probe vectors contain non-finite values".into()));
    }

    let k = a.vectors.len().min(b.vectors.len());
    let n_train = ((k as f64) * TRAIN_FRACTION).round() as usize;
    let mut rng = rng::derive(seed, &[stream::PROBE]);
    let mut split = |set: &RepSet| {
        let mut idx: Vec<usize> = (0..set.vectors.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(k);
        let test = idx.split_off(n_train);
        (idx, test)
    };
    let (train_a, test_a) = split(a);
    let (train_b, test_b) = split(b);

    let mut train: Vec<(&[f64], f64)> = Vec::with_capacity(2 * n_train);
    train.extend(train_a.iter().map(|&i| (a.vectors[i].as_slice(), 0.0)));
    train.extend(train_b.iter().map(|&i| (b.vectors[i].as_slice(), 1.0)));
    let mut test: Vec<(&[f64], f64)> = Vec::with_capacity(2 * (k - n_train));
    test.extend(test_a.iter().map(|&i| (a.vectors[i].as_slice(), 0.0)));
    test.extend(test_b.iter().map(|&i| (b.vectors[i].as_slice(), 1.0)));

    // Centering plus one global scale keeps the probe rotation-equivariant.
    let mut mean = vec![0.0; dim];
    for (x, _) in &train {
        for (m, v) in mean.iter_mut().zip(*x) {
            *m += v / train.len() as f64;
        }
    }
    let centered = |x: &[f64]| -> Vec<f64> { x.iter().zip(&mean).map(|(v, m)| v - m).collect() };
    let train_x: Vec<Vec<f64>> = train.iter().map(|(x, _)| centered(x)).collect();
    let ms: f64 = train_x.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / train_x.len() as f64;
    let scale = if ms > 0.0 { 1.0 / ms.sqrt() } else { 1.0 };
    let train_x: Vec<Vec<f64>> = train_x.into_iter().map(|x| x.into_iter().map(|v| v * scale).collect()).collect();

    let (w, bias) = fit_logistic(&train_x, &train.iter().map(|(_, y)| *y).collect::<Vec<_>>());
    let correct = test
        .iter()
        .filter(|(x, y)| {
            let z: f64 = centered(x).iter().zip(&w).map(|(v, w)| v * scale * w).sum::<f64>() + bias;
            (z > 0.0) == (*y > 0.5)
        })
        .count();
    Ok(ProbeReport {
        accuracy: correct as f64 / test.len() as f64,
        count_a: a.vectors.len(),
        count_b: b.vectors.len(),
        train_size: train.len(),
        test_size: test.len(),
        tag: format!("{} vs {}", a.tag, b.tag),
    })
}

/// Gradient descent on mean logistic loss from zero weights.
fn fit_logistic(x: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, f64) {
    let dim = x[0].len();
    let n = x.len() as f64;
    let (mut w, mut b) = (vec![0.0; dim], 0.0);
    let mut gw = vec![0.0; dim];
    for _ in 0..PROBE_EPOCHS {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let z: f64 = xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let r = (1.0 / (1.0 + (-z).exp()) - yi) / n;
            for (g, v) in gw.iter_mut().zip(xi) {
                *g += r * v;
            }
            gb += r;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= PROBE_LR * g;
        }
        b -= PROBE_LR * gb;
    }
    (w, b)
}
