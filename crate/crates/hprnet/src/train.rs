//! Mini-batch Adam training on random crops.

use cardiodx_core::sigproc::FeatureBlock;
use cardiodx_core::Hpw;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{block_nodes, HprNet};
use crate::tensor::Seq;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Steps per training crop; shorter recordings are used whole.
    pub crop_len: usize,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    /// Keep the parameters of the epoch with the lowest validation loss.
    pub keep_best: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 16,
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            crop_len: 800,
            grad_clip: Some(1.0),
            keep_best: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.crop_len == 0 {
            return invalid("epochs, batch_size and crop_len must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return invalid("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return invalid("Adam needs betas in [0, 1) and a positive epsilon");
        }
        Ok(())
    }
}

/// One recording: per-bin inputs and the matching target waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub nodes: Vec<Seq>,
    pub target: Vec<f64>,
}

impl Sample {
    pub fn new(nodes: Vec<Seq>, target: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.iter().any(|n| n.len != target.len()) || target.is_empty() {
            return invalid("sample inputs and target must share a positive length");
        }
        Ok(Self { nodes, target })
    }

    pub fn from_block(block: &FeatureBlock, target: &Hpw) -> Result<Self> {
        if block.num_steps() != target.samples.len() {
            return invalid("feature block and target differ in length");
        }
        Self::new(block_nodes(block, 0, block.num_steps())?, target.samples.clone())
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn crop(&self, start: usize, len: usize) -> Sample {
        let len = len.min(self.len() - start);
        Sample {
            nodes: self.nodes.iter().map(|n| n.window(start, len)).collect(),
            target: self.target[start..start + len].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Loss on the fixed evaluation crops before the first update.
    pub initial_train_mse: f64,
    /// Same crops after training (with the returned parameters).
    pub final_train_mse: f64,
    /// Mean loss over each epoch's random crops.
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Mean loss over the first `crop_len` steps of every sample.
pub fn evaluate(net: &HprNet, samples: &[Sample], crop_len: usize) -> Result<f64> {
    if samples.is_empty() {
        return invalid("nothing to evaluate");
    }
    let losses: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| {
            let c = s.crop(0, crop_len);
            net.loss_with(&net.params, &c.nodes, &c.target)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / samples.len() as f64)
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric { .. } => Error::Diverged { epoch },
        other => other,
    }
}

/// Train `net` in place. Gradients of a batch are computed in parallel and
/// summed in sample order, so results do not depend on the thread count.
pub fn train(net: &mut HprNet, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return invalid("empty training set");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net.num_params());
    let initial_train_mse = evaluate(net, train, cfg.crop_len)?;
    let mut history = History {
        initial_train_mse,
        final_train_mse: initial_train_mse,
        train_mse: Vec::with_capacity(cfg.epochs),
        val_mse: Vec::new(),
        best_epoch: None,
        steps: 0,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let crops: Vec<Sample> = order
            .iter()
            .map(|&i| {
                let s = &train[i];
                let start = if s.len() > cfg.crop_len { rng.gen_range(0..=s.len() - cfg.crop_len) } else { 0 };
                s.crop(start, cfg.crop_len)
            })
            .collect();
        let mut epoch_loss = 0.0;
        for batch in crops.chunks(cfg.batch_size) {
            let results: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|c| net.loss_and_grad_with(&net.params, &c.nodes, &c.target, None))
                .collect();
            let mut grad = vec![0.0; net.num_params()];
            for r in results {
                let (loss, g) = r.map_err(diverged(epoch))?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                epoch_loss += loss;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if let Some(clip) = cfg.grad_clip {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > clip {
                    grad.iter_mut().for_each(|g| *g *= clip / norm);
                }
            }
            adam.step(&mut net.params, &grad, cfg);
            history.steps += 1;
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        history.train_mse.push(epoch_loss / crops.len() as f64);
        if !val.is_empty() {
            let v = evaluate(net, val, cfg.crop_len).map_err(diverged(epoch))?;
            history.val_mse.push(v);
            if cfg.keep_best && best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, net.params.clone()));
                history.best_epoch = Some(epoch);
            }
        }
    }
    if let Some((_, params)) = best {
        net.params = params;
    }
    history.final_train_mse = evaluate(net, train, cfg.crop_len)?;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchConfig;

    fn toy_sample(len: usize, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = (0..2).map(|_| Seq::from_data(3, len, (0..3 * len).map(|_| rng.gen_range(-1.0..1.0)).collect())).collect();
        let target = (0..len).map(|t| 0.5 + 0.4 * (t as f64 * 0.3).sin()).collect();
        Sample::new(nodes, target).unwrap()
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut net = HprNet::new(ArchConfig::default(), 1).unwrap();
        let before = net.params.clone();
        let data = [toy_sample(32, 1), toy_sample(32, 2)];
        let cfg = TrainConfig { epochs: 3, batch_size: 1, learning_rate: 0.0, crop_len: 64, keep_best: false, ..Default::default() };
        let h = train(&mut net, &data, &[], &cfg).unwrap();
        assert_eq!(net.params, before);
        assert!(h.train_mse.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = vec![1.0, -1.0];
        let mut adam = Adam::new(2);
        let cfg = TrainConfig { learning_rate: 0.1, ..Default::default() };
        adam.step(&mut p, &[2.0, -3.0], &cfg);
        // first bias-corrected step has magnitude lr
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_config() {
        let mut net = HprNet::new(ArchConfig::default(), 1).unwrap();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert!(train(&mut net, &[toy_sample(8, 1)], &[], &cfg).is_err());
        assert!(train(&mut net, &[], &[], &TrainConfig::default()).is_err());
    }
}
