//! Bagged Gini decision trees with majority voting.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Bootstrap sample size as a fraction of the training set.
    pub bootstrap_fraction: f64,
    /// Features tried per split; `None` means ceil(sqrt(n_features)).
    pub max_features: Option<usize>,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 6,
            bootstrap_fraction: 1.0,
            max_features: None,
            min_samples_split: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf { positive: usize, total: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Class vote of the leaf reached by `row`; ties vote negative.
    pub fn vote(&self, row: &[f64]) -> bool {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { positive, total } => return 2 * positive > total,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub n_features: usize,
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [bool],
    cfg: &'a ForestConfig,
    max_features: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let positive = idx.iter().filter(|&&i| self.labels[i]).count();
        self.nodes.push(Node::Leaf { positive, total: idx.len() });
        self.nodes.len() - 1
    }

    /// Best (weighted impurity, feature, threshold) over a random feature subset.
    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<(f64, usize, f64)> {
        let n_features = self.rows[0].len();
        let mut features: Vec<usize> = (0..n_features).collect();
        features.shuffle(rng);
        let total = idx.len();
        let total_pos = idx.iter().filter(|&&i| self.labels[i]).count();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = idx.to_vec();
        for &f in &features[..self.max_features] {
            sorted.sort_by(|&a, &b| self.rows[a][f].total_cmp(&self.rows[b][f]));
            let mut left_pos = 0;
            for k in 0..total - 1 {
                if self.labels[sorted[k]] {
                    left_pos += 1;
                }
                let (v, next) = (self.rows[sorted[k]][f], self.rows[sorted[k + 1]][f]);
                if v == next {
                    continue;
                }
                let nl = k + 1;
                let nr = total - nl;
                let impurity = (nl as f64 * gini(left_pos, nl) + nr as f64 * gini(total_pos - left_pos, nr)) / total as f64;
                if best.is_none_or(|(b, _, _)| impurity < b) {
                    best = Some((impurity, f, 0.5 * (v + next)));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let pos = idx.iter().filter(|&&i| self.labels[i]).count();
        if depth >= self.cfg.max_depth || pos == 0 || pos == idx.len() || idx.len() < self.cfg.min_samples_split {
            return self.leaf(idx);
        }
        let Some((impurity, feature, threshold)) = self.best_split(idx, rng) else {
            return self.leaf(idx);
        };
        if impurity >= gini(pos, idx.len()) {
            return self.leaf(idx);
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.rows[i][feature] <= threshold);
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { positive: 0, total: 0 });
        let left = self.grow(&l, depth + 1, rng);
        let right = self.grow(&r, depth + 1, rng);
        self.nodes[me] = Node::Split { feature, threshold, left, right };
        me
    }
}

/// Train a forest; labels are `true` for the positive (arrhythmia) class.
pub fn rf_train(rows: &[Vec<f64>], labels: &[bool], cfg: &ForestConfig) -> Result<ForestModel> {
    if rows.is_empty() || rows.len() != labels.len() {
        return invalid("training set must be non-empty with one label per row");
    }
    let n_features = rows[0].len();
    if n_features == 0 || rows.iter().any(|r| r.len() != n_features || r.iter().any(|v| !v.is_finite())) {
        return invalid("rows must share a positive width and be finite");
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return invalid("training set contains a single class");
    }
    if cfg.n_trees == 0 || !(cfg.bootstrap_fraction > 0.0) {
        return invalid("n_trees and bootstrap_fraction must be positive");
    }
    let max_features = cfg
        .max_features
        .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
        .clamp(1, n_features);
    let sample_size = ((rows.len() as f64 * cfg.bootstrap_fraction).round() as usize).max(1);
    let trees = (0..cfg.n_trees)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_index(cfg.seed, k as u64));
            let idx: Vec<usize> = (0..sample_size).map(|_| rng.gen_range(0..rows.len())).collect();
            let mut b = Builder { rows, labels, cfg, max_features, nodes: Vec::new() };
            b.grow(&idx, 0, &mut rng);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(ForestModel { trees, n_trees: cfg.n_trees, max_depth: cfg.max_depth, seed: cfg.seed, n_features })
}

/// Predicted label and positive-vote fraction. A score of exactly one half
/// is called positive.
pub fn rf_predict(model: &ForestModel, row: &[f64]) -> (bool, f64) {
    let votes = model.trees.iter().filter(|t| t.vote(row)).count();
    let score = votes as f64 / model.trees.len() as f64;
    (score >= 0.5, score)
}

impl ForestModel {
    pub fn predict(&self, row: &[f64]) -> (bool, f64) {
        rf_predict(self, row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_feature_is_learned() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let labels: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let model = rf_train(&rows, &labels, &ForestConfig { n_trees: 25, ..Default::default() }).unwrap();
        let correct = rows.iter().zip(&labels).filter(|(r, &l)| rf_predict(&model, r).0 == l).count();
        assert_eq!(correct, 40);
        assert!(model.trees.iter().all(|t| t.depth() <= 6));
    }

    #[test]
    fn uninformative_features_give_even_scores() {
        let rows = vec![vec![1.0, 1.0]; 40];
        let labels: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let model = rf_train(&rows, &labels, &ForestConfig::default()).unwrap();
        let (_, score) = rf_predict(&model, &[1.0, 1.0]);
        assert!((score - 0.5).abs() <= 0.2, "score {score}");
        assert!(model.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn refuses_single_class_and_bad_shapes() {
        assert!(rf_train(&[vec![1.0], vec![2.0]], &[true, true], &ForestConfig::default()).is_err());
        assert!(rf_train(&[], &[], &ForestConfig::default()).is_err());
        assert!(rf_train(&[vec![1.0], vec![2.0, 3.0]], &[true, false], &ForestConfig::default()).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i * 7 % 11) as f64, (i % 5) as f64]).collect();
        let labels: Vec<bool> = (0..30).map(|i| (i * 7 % 11) > 4).collect();
        let cfg = ForestConfig { seed: 3, ..Default::default() };
        assert_eq!(rf_train(&rows, &labels, &cfg).unwrap(), rf_train(&rows, &labels, &cfg).unwrap());
    }

    #[test]
    fn vote_matches_tally_over_serialized_trees() {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![(i % 13) as f64, (i % 7) as f64, (i * 3 % 17) as f64]).collect();
        let labels: Vec<bool> = rows.iter().map(|r| r[0] + r[1] > 9.0).collect();
        let model = rf_train(&rows, &labels, &ForestConfig { n_trees: 31, seed: 5, ..Default::default() }).unwrap();
        let json = serde_json::to_value(&model).unwrap();
        for row in &rows {
            let mut votes = 0;
            for tree in json["trees"].as_array().unwrap() {
                let nodes = tree["nodes"].as_array().unwrap();
                let mut i = 0;
                loop {
                    let n = &nodes[i];
                    if n["kind"] == "leaf" {
                        let (p, t) = (n["positive"].as_u64().unwrap(), n["total"].as_u64().unwrap());
                        votes += u64::from(2 * p > t);
                        break;
                    }
                    let f = n["feature"].as_u64().unwrap() as usize;
                    i = if row[f] <= n["threshold"].as_f64().unwrap() {
                        n["left"].as_u64().unwrap()
                    } else {
                        n["right"].as_u64().unwrap()
                    } as usize;
                }
            }
            let (label, score) = rf_predict(&model, row);
            assert_eq!(score, votes as f64 / 31.0);
            assert_eq!(label, votes * 2 >= 31);
        }
        let back: ForestModel = serde_json::from_value(json).unwrap();
        assert_eq!(back, model);
    }
}
