//! Central finite-difference check of the analytic gradient.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gat::Fault;
use crate::model::HprNet;
use crate::tensor::Seq;

/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub block: String,
    pub checked: usize,
    /// Parameters whose finite difference crossed a LeakyReLU kink.
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub blocks: Vec<BlockReport>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Compare the analytic MSE gradient with central differences on up to
/// `per_block` random parameters of every block.
#[allow(clippy::too_many_arguments)]
pub fn grad_check(
    net: &HprNet,
    nodes: &[Seq],
    target: &[f64],
    epsilon: f64,
    per_block: usize,
    seed: u64,
    fault: Option<Fault>,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return invalid(format!("epsilon {epsilon} outside [1e-6, 1e-3]"));
    }
    let (_, grad) = net.loss_and_grad_with(&net.params, nodes, target, fault)?;
    let mut by_block: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for i in 0..net.num_params() {
        let block = net.layout.block_of(i).unwrap_or("?").to_string();
        by_block.entry(block).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = net.params.clone();
    let mut blocks = Vec::new();
    for (block, indices) in by_block {
        let picked: Vec<usize> = indices.choose_multiple(&mut rng, per_block.min(indices.len())).copied().collect();
        let mut report = BlockReport { block, checked: 0, skipped: 0, max_rel_error: 0.0 };
        for i in picked {
            let orig = p[i];
            p[i] = orig + epsilon;
            let (out_p, cache_p) = net.forward_with(&p, nodes)?;
            p[i] = orig - epsilon;
            let (out_m, cache_m) = net.forward_with(&p, nodes)?;
            p[i] = orig;
            if net.kink_signature(&cache_p) != net.kink_signature(&cache_m) {
                report.skipped += 1;
                continue;
            }
            let mse = |o: &[f64]| o.iter().zip(target).map(|(y, t)| (y - t).powi(2)).sum::<f64>() / o.len() as f64;
            let numeric = (mse(&out_p) - mse(&out_m)) / (2.0 * epsilon);
            report.max_rel_error = report.max_rel_error.max(relative_error(grad[i], numeric));
            report.checked += 1;
        }
        blocks.push(report);
    }
    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, blocks })
}
