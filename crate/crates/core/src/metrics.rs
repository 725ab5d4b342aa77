//! Classification metrics from a confusion matrix and per-class scores.
//!
//! Multiclass reductions: precision, recall and F1 are one-vs-rest per class
//! and support-weighted; balanced accuracy and AUROC are macro averages.

use std::fmt;

use crate::error::{Error, Result};

/// `counts[i][j]`: samples of true class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Input("confusion matrix must be square".into()));
        }
        Ok(Self {
            classes: k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.classes + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    /// Support of class `i` (true count).
    pub fn row_sum(&self, i: usize) -> u64 {
        (0..self.classes).map(|j| self.get(i, j)).sum()
    }

    /// Number of predictions of class `j`.
    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, j)).sum()
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.classes {
            let row: Vec<String> = (0..self.classes).map(|j| self.get(i, j).to_string()).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Input("no samples".into()));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &y) in preds.iter().zip(labels) {
        for label in [p, y] {
            if label >= classes {
                return Err(Error::Label { label, classes });
            }
        }
        cm.add(y, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// A denominator was zero and the affected score was set to 0.
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub acc: f64,
    pub bacc: f64,
    pub kappa: f64,
    pub f1: f64,
    pub prec: f64,
    pub rec: f64,
    pub per_class: Vec<ClassScores>,
}

impl Metrics {
    pub fn zero_division_classes(&self) -> Vec<usize> {
        (0..self.per_class.len())
            .filter(|&c| self.per_class[c].zero_division)
            .collect()
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Input("confusion matrix is empty".into()));
    }
    let k = cm.classes();
    let n = total as f64;
    let per_class: Vec<ClassScores> = (0..k)
        .map(|c| {
            let tp = cm.get(c, c);
            let support = cm.row_sum(c);
            let (precision, zp) = ratio(tp, cm.col_sum(c));
            let (recall, zr) = ratio(tp, support);
            let (f1, zf) = if precision + recall == 0.0 {
                (0.0, true)
            } else {
                (2.0 * precision * recall / (precision + recall), false)
            };
            ClassScores {
                precision,
                recall,
                f1,
                support,
                zero_division: zp || zr || zf,
            }
        })
        .collect();
    let weighted = |f: fn(&ClassScores) -> f64| -> f64 {
        per_class.iter().map(|s| s.support as f64 * f(s)).sum::<f64>() / n
    };
    let acc = cm.trace() as f64 / n;
    let p_e = (0..k)
        .map(|i| cm.row_sum(i) as f64 * cm.col_sum(i) as f64)
        .sum::<f64>()
        / (n * n);
    let kappa = if p_e >= 1.0 { 0.0 } else { (acc - p_e) / (1.0 - p_e) };
    Ok(Metrics {
        acc,
        bacc: per_class.iter().map(|s| s.recall).sum::<f64>() / k as f64,
        kappa,
        f1: weighted(|s| s.f1),
        prec: weighted(|s| s.precision),
        rec: weighted(|s| s.recall),
        per_class,
    })
}

/// Rank-statistic AUROC of one binary problem; ties get half credit.
/// `None` when either side is empty.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean.
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&s| positive[s]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Auroc {
    pub value: f64,
    /// `None` for classes skipped for lacking positives or negatives.
    pub per_class: Vec<Option<f64>>,
}

impl Auroc {
    pub fn skipped(&self) -> Vec<usize> {
        (0..self.per_class.len())
            .filter(|&c| self.per_class[c].is_none())
            .collect()
    }
}

/// Macro one-vs-rest AUROC over `scores[sample][class]`.
pub fn auroc(scores: &[Vec<f64>], labels: &[usize]) -> Result<Auroc> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} score vectors for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let k = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|s| s.len() != k) {
        return Err(Error::Input("score vectors differ in length".into()));
    }
    if scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite score".into()));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Label { label, classes: k });
    }
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            binary_auroc(&col, &pos)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::UndefinedAuroc);
    }
    Ok(Auroc {
        value: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class,
    })
}

/// The seven headline metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub acc: f64,
    pub bacc: f64,
    pub kappa: f64,
    pub f1: f64,
    pub prec: f64,
    pub rec: f64,
    pub auroc: f64,
}

impl MetricsReport {
    pub const KEYS: [&'static str; 7] = ["acc", "bacc", "kappa", "f1", "prec", "rec", "auroc"];

    pub fn values(&self) -> [f64; 7] {
        [self.acc, self.bacc, self.kappa, self.f1, self.prec, self.rec, self.auroc]
    }

    pub fn from_parts(m: &Metrics, auroc: f64) -> Self {
        Self {
            acc: m.acc,
            bacc: m.bacc,
            kappa: m.kappa,
            f1: m.f1,
            prec: m.prec,
            rec: m.rec,
            auroc,
        }
    }

    /// Parses the `key=value` text written by `Display`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut vals = [None; 7];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("metrics line without '=': {line:?}")))?;
            let slot = Self::KEYS
                .iter()
                .position(|k| *k == key.trim())
                .ok_or_else(|| Error::Format(format!("unknown metric {key:?}")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad value for {key}: {value:?}")))?;
            vals[slot] = Some(v);
        }
        let get = |i: usize| vals[i].ok_or_else(|| Error::Format(format!("missing metric {}", Self::KEYS[i])));
        Ok(Self {
            acc: get(0)?,
            bacc: get(1)?,
            kappa: get(2)?,
            f1: get(3)?,
            prec: get(4)?,
            rec: get(5)?,
            auroc: get(6)?,
        })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in Self::KEYS.iter().zip(self.values()) {
            writeln!(f, "{k}={v:.6}")?;
        }
        Ok(())
    }
}

/// Index of the largest score; the first one wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Full report from per-sample class scores (predictions are their argmax).
pub fn report(scores: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<MetricsReport> {
    let preds: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
    let m = compute_metrics(&confusion(&preds, labels, classes)?)?;
    let a = auroc(scores, labels)?;
    Ok(MetricsReport::from_parts(&m, a.value))
}
