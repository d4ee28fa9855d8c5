use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Dynamic time warping distance with absolute-difference point cost over an
/// unconstrained monotone path, divided by the length of the optimal path.
///
/// Among equal-cost paths the shorter one is preferred, which keeps the score
/// symmetric in its arguments. Runs in O(len(a) * len(b)) time and
/// O(len(b)) memory.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return invalid("dtw needs two non-empty series");
    }
    let m = b.len();
    // (cost, path length) for the previous and current row
    let mut prev: Vec<(f64, u32)> = vec![(f64::INFINITY, 0); m];
    let mut cur: Vec<(f64, u32)> = vec![(f64::INFINITY, 0); m];
    let better = |x: (f64, u32), y: (f64, u32)| if y.0 < x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x };
    for (i, &ai) in a.iter().enumerate() {
        for j in 0..m {
            let d = (ai - b[j]).abs();
            let best = match (i, j) {
                (0, 0) => (0.0, 0),
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => better(better(prev[j - 1], prev[j]), cur[j - 1]),
            };
            cur[j] = (best.0 + d, best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, len) = prev[m - 1];
    Ok(cost / f64::from(len))
}

/// Median absolute percentage error, percent.
pub fn medape(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() || est.is_empty() {
        return invalid(format!("medape needs equal non-empty lengths, got {} and {}", est.len(), truth.len()));
    }
    if truth.iter().any(|&t| t == 0.0) {
        return invalid("medape truth contains zero");
    }
    let ape: Vec<f64> = est.iter().zip(truth).map(|(e, t)| 100.0 * (e - t).abs() / t.abs()).collect();
    Ok(super::hrv::median(&ape))
}

/// Confusion counts and derived scores; arrhythmia is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_auc: Option<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, precision, recall and F1 from confusion counts. Undefined
/// ratios (no predicted or no actual positives) are reported as 0.
pub fn classification_metrics(tp: u64, fp: u64, tn: u64, fn_: u64) -> Result<DiagnosisReport> {
    let total = tp + fp + tn + fn_;
    if total == 0 {
        return invalid("confusion counts are all zero");
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(DiagnosisReport {
        tp,
        fp,
        tn,
        fn_,
        accuracy: ratio(tp + tn, total),
        precision,
        recall,
        f1,
        roc_auc: None,
    })
}

/// Area under the ROC curve as the probability that a random positive
/// outscores a random negative, ties counting one half.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return invalid("scores and labels differ in length");
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return invalid("roc_auc needs both classes");
    }
    // average ranks handle ties
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Zero-normalized cross-correlation of `a[i]` against `b[i + lag]` for
/// `lag` in `-max_lag..=max_lag`; element `k` holds lag `k - max_lag`.
pub fn zncc(a: &[f64], b: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = a.len().min(b.len());
    if n < max_lag + 2 {
        return invalid(format!("overlap too short for max_lag {max_lag}"));
    }
    let mut out = Vec::with_capacity(2 * max_lag + 1);
    for k in 0..=2 * max_lag {
        let lag = k as isize - max_lag as isize;
        let (a0, b0) = if lag >= 0 { (0, lag as usize) } else { ((-lag) as usize, 0) };
        let len = (a.len() - a0).min(b.len() - b0);
        let xa = &a[a0..a0 + len];
        let xb = &b[b0..b0 + len];
        let ma = xa.iter().sum::<f64>() / len as f64;
        let mb = xb.iter().sum::<f64>() / len as f64;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in xa.iter().zip(xb) {
            let (dx, dy) = (x - ma, y - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
        if saa <= 0.0 || sbb <= 0.0 {
            return Err(Error::Numeric(format!("zero-variance window at lag {lag}")));
        }
        out.push((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0));
    }
    Ok(out)
}
