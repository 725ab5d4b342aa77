//! Independent reference implementations used by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;

/// Scores recomputed from one-vs-rest TP/FP/FN counts.
#[derive(Debug, Clone, Copy)]
pub struct NaiveScores {
    pub acc: f64,
    pub bacc: f64,
    pub kappa: f64,
    pub f1: f64,
    pub prec: f64,
    pub rec: f64,
}

pub fn naive_scores(cm: &[Vec<u64>]) -> NaiveScores {
    let k = cm.len();
    let mut n = 0.0;
    let mut correct = 0.0;
    for (i, row) in cm.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            n += c as f64;
            if i == j {
                correct += c as f64;
            }
        }
    }
    let mut bacc = 0.0;
    let (mut f1, mut prec, mut rec) = (0.0, 0.0, 0.0);
    let mut p_e = 0.0;
    for c in 0..k {
        let tp = cm[c][c] as f64;
        let fn_: f64 = (0..k).filter(|&j| j != c).map(|j| cm[c][j] as f64).sum();
        let fp: f64 = (0..k).filter(|&i| i != c).map(|i| cm[i][c] as f64).sum();
        let support = tp + fn_;
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if support > 0.0 { tp / support } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        bacc += r / k as f64;
        prec += support / n * p;
        rec += support / n * r;
        f1 += support / n * f;
        p_e += (support / n) * ((tp + fp) / n);
    }
    let acc = correct / n;
    let kappa = if p_e < 1.0 { (acc - p_e) / (1.0 - p_e) } else { 0.0 };
    NaiveScores {
        acc,
        bacc,
        kappa,
        f1,
        prec,
        rec,
    }
}

/// Area under the ROC polyline traced by sweeping the threshold over every
/// distinct score, integrated with the trapezoid rule.
pub fn sweep_auroc(scores: &[f64], positive: &[bool]) -> f64 {
    let p = positive.iter().filter(|&&b| b).count() as f64;
    let q = positive.len() as f64 - p;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut points = vec![(0.0, 0.0)];
    for t in thresholds {
        let tp = scores.iter().zip(positive).filter(|(&s, &y)| y && s >= t).count() as f64;
        let fp = scores.iter().zip(positive).filter(|(&s, &y)| !y && s >= t).count() as f64;
        points.push((fp / q, tp / p));
    }
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// `x · (W0 + B·A)ᵀ` with explicit loops; `x` is `[n, k]`, `W0` is `[d, k]`.
pub fn dense_adapted(x: &[Vec<f64>], w0: &[Vec<f64>], b: &[Vec<f64>], a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = w0.len();
    let k = w0[0].len();
    let r = a.len();
    let mut w = w0.to_vec();
    for i in 0..d {
        for j in 0..k {
            for l in 0..r {
                w[i][j] += b[i][l] * a[l][j];
            }
        }
    }
    x.iter()
        .map(|row| (0..d).map(|i| (0..k).map(|j| row[j] * w[i][j]).sum()).collect())
        .collect()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn flatten(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

/// Random confusion matrix; some rows or columns may be entirely zero.
pub fn random_confusion(rng: &mut impl Rng) -> Vec<Vec<u64>> {
    let k = rng.random_range(2..=6);
    let sparse = rng.random_bool(0.3);
    loop {
        let cm: Vec<Vec<u64>> = (0..k)
            .map(|_| {
                (0..k)
                    .map(|_| if sparse && rng.random_bool(0.5) { 0 } else { rng.random_range(0..40) })
                    .collect()
            })
            .collect();
        if cm.iter().flatten().sum::<u64>() > 0 {
            return cm;
        }
    }
}

/// Random binary scoring problem with both classes present; scores are
/// quantized so that ties occur.
pub fn random_binary_problem(rng: &mut impl Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..80);
    let levels = rng.random_range(2..30);
    loop {
        let pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if pos.iter().any(|&b| b) && pos.iter().any(|&b| !b) {
            let scores = pos
                .iter()
                .map(|&y| {
                    let shift = if y { 3 } else { 0 };
                    (rng.random_range(0..levels) + shift) as f64 / levels as f64
                })
                .collect();
            return (scores, pos);
        }
    }
}
