//! The full reconstruction network.
//!
//! Per-bin convolutional extractor (weights shared across bins), attention
//! across bins at every time step pooled to one sequence, a strided residual
//! encoder with a transposed-residual decoder joined by additive skips, a
//! bidirectional LSTM and a per-step dense head with sigmoid output.

use cardiodx_core::sigproc::{FeatureBlock, NUM_CHANNELS};
use cardiodx_core::Hpw;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gat::{Fault, GatCache, GatLayer, LEAKY_SLOPE};
use crate::layers::{sigmoid, Activation, Conv1d, ResBlock, ResCache, TransResBlock};
use crate::lstm::{BiLstm, LstmCache};
use crate::tensor::{Layout, Seq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub ext_channels: usize,
    pub ext_kernel: usize,
    pub res_blocks: usize,
    pub res_kernel: usize,
    pub gat_dim: usize,
    /// Width of each stride-2 encoder level.
    pub enc_channels: Vec<usize>,
    pub coder_kernel: usize,
    pub lstm_hidden: usize,
    pub head_hidden: usize,
    pub leaky_slope: f64,
    pub skips: bool,
    /// Replace every LeakyReLU by the identity.
    pub linear: bool,
}

impl Default for ArchConfig {
    /// Small enough to train on one CPU core in minutes.
    fn default() -> Self {
        Self {
            in_channels: NUM_CHANNELS,
            ext_channels: 8,
            ext_kernel: 7,
            res_blocks: 2,
            res_kernel: 3,
            gat_dim: 8,
            enc_channels: vec![8, 12, 16],
            coder_kernel: 3,
            lstm_hidden: 8,
            head_hidden: 16,
            leaky_slope: LEAKY_SLOPE,
            skips: true,
            linear: false,
        }
    }
}

impl ArchConfig {
    /// Wider variant: 16-channel extractor, 32-wide attention, 32/64/64
    /// encoder, 64 hidden LSTM units, 128-unit head.
    pub fn wide() -> Self {
        Self {
            ext_channels: 16,
            gat_dim: 32,
            enc_channels: vec![32, 64, 64],
            lstm_hidden: 64,
            head_hidden: 128,
            ..Self::default()
        }
    }

    /// Tiny network for gradient checks.
    pub fn toy() -> Self {
        Self {
            ext_channels: 4,
            gat_dim: 4,
            enc_channels: vec![4, 6],
            lstm_hidden: 8,
            head_hidden: 6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.in_channels,
            self.ext_channels,
            self.ext_kernel,
            self.res_kernel,
            self.gat_dim,
            self.coder_kernel,
            self.lstm_hidden,
            self.head_hidden,
        ];
        if widths.contains(&0) || self.enc_channels.contains(&0) {
            return invalid("architecture widths and kernels must be positive");
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return invalid("leaky slope must be finite and non-negative");
        }
        Ok(())
    }

    /// Sequence lengths are padded to a multiple of this.
    pub fn length_multiple(&self) -> usize {
        1 << self.enc_channels.len()
    }

    fn act(&self) -> Activation {
        if self.linear {
            Activation::Identity
        } else {
            Activation::LeakyRelu(self.leaky_slope)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layers {
    conv_in: Conv1d,
    ext: Vec<ResBlock>,
    gat: GatLayer,
    enc: Vec<ResBlock>,
    /// `dec[l]` maps encoder level `l + 1` back to level `l`.
    dec: Vec<TransResBlock>,
    lstm: BiLstm,
    dense1: Conv1d,
    dense2: Conv1d,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HprNet {
    pub arch: ArchConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
    layers: Layers,
}

#[derive(Debug, Clone)]
struct ExtCache {
    z0: Seq,
    /// Input of every residual block, then the final output.
    acts: Vec<Seq>,
    blocks: Vec<ResCache>,
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct Cache {
    len: usize,
    inputs: Vec<Seq>,
    ext: Vec<ExtCache>,
    gat: GatCache,
    /// Encoder levels, `enc_out[0]` being the pooled attention output.
    enc_out: Vec<Seq>,
    enc: Vec<ResCache>,
    dec_in: Vec<Seq>,
    dec: Vec<ResCache>,
    lstm_in: Seq,
    lstm: [LstmCache; 2],
    lstm_out: Seq,
    z1: Seq,
    a1: Seq,
    y: Seq,
}

impl Cache {
    pub fn gat(&self) -> &GatCache {
        &self.gat
    }
}

fn check(x: &Seq, layer: &str) -> Result<()> {
    if x.all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric { layer: layer.into() })
    }
}

impl HprNet {
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let (layout, layers) = Self::build(&arch);
        let mut params = layout.init(&mut ChaCha8Rng::seed_from_u64(seed));
        layers.lstm.fwd.forget_bias_init(&mut params);
        layers.lstm.bwd.forget_bias_init(&mut params);
        Ok(Self { arch, layout, params, layers })
    }

    /// Rebuild from an architecture and a flat parameter vector.
    pub fn from_params(arch: ArchConfig, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let (layout, layers) = Self::build(&arch);
        if params.len() != layout.num_params() {
            return invalid(format!("expected {} parameters, got {}", layout.num_params(), params.len()));
        }
        Ok(Self { arch, layout, params, layers })
    }

    fn build(arch: &ArchConfig) -> (Layout, Layers) {
        let act = arch.act();
        let mut l = Layout::default();
        let c = arch.ext_channels;
        let conv_in = Conv1d::new(&mut l, "extractor.conv_in", arch.in_channels, c, arch.ext_kernel, 1);
        let ext = (0..arch.res_blocks)
            .map(|i| ResBlock::new(&mut l, &format!("extractor.res{i}"), c, c, arch.res_kernel, 1, act))
            .collect();
        let gat = GatLayer::new(&mut l, "gat", c, arch.gat_dim, act, act);
        let mut widths = vec![arch.gat_dim];
        widths.extend(&arch.enc_channels);
        let enc = (0..arch.enc_channels.len())
            .map(|i| ResBlock::new(&mut l, &format!("encoder.res{i}"), widths[i], widths[i + 1], arch.coder_kernel, 2, act))
            .collect();
        let dec = (0..arch.enc_channels.len())
            .map(|i| TransResBlock::new(&mut l, &format!("decoder.tres{i}"), widths[i + 1], widths[i], arch.coder_kernel, act))
            .collect();
        let lstm = BiLstm::new(&mut l, "bilstm", arch.gat_dim, arch.lstm_hidden);
        let dense1 = Conv1d::new(&mut l, "head.dense1", 2 * arch.lstm_hidden, arch.head_hidden, 1, 1);
        let dense2 = Conv1d::new(&mut l, "head.dense2", arch.head_hidden, 1, 1, 1);
        (l, Layers { conv_in, ext, gat, enc, dec, lstm, dense1, dense2 })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn act(&self) -> Activation {
        self.arch.act()
    }

    fn validate_nodes(&self, nodes: &[Seq]) -> Result<usize> {
        let Some(first) = nodes.first() else {
            return invalid("at least one range bin is required");
        };
        if first.len == 0 {
            return invalid("empty sequence");
        }
        if nodes.iter().any(|n| n.ch != self.arch.in_channels || n.len != first.len) {
            return invalid(format!("every bin needs {} channels of equal length", self.arch.in_channels));
        }
        Ok(first.len)
    }

    fn extract_one(&self, p: &[f64], x: &Seq) -> ExtCache {
        let z0 = self.layers.conv_in.forward(p, x);
        let mut acts = vec![self.act().apply_seq(&z0)];
        let mut blocks = Vec::with_capacity(self.layers.ext.len());
        for blk in &self.layers.ext {
            let (y, c) = blk.forward(p, acts.last().unwrap());
            acts.push(y);
            blocks.push(c);
        }
        ExtCache { z0, acts, blocks }
    }

    /// Per-bin embeddings, `ext_channels x T` each.
    pub fn extractor_forward(&self, nodes: &[Seq]) -> Result<Vec<Seq>> {
        self.validate_nodes(nodes)?;
        Ok(nodes.iter().map(|x| self.extract_one(&self.params, x).acts.pop().unwrap()).collect())
    }

    /// Encoder latent and decoder output of a `gat_dim x T` sequence; `T`
    /// must be a multiple of [`ArchConfig::length_multiple`].
    pub fn coder_forward(&self, x: &Seq) -> Result<(Seq, Seq)> {
        if x.ch != self.arch.gat_dim || x.len % self.arch.length_multiple() != 0 {
            return invalid("coder input has the wrong width or an unpadded length");
        }
        let (enc_out, _) = self.encode(&self.params, x.clone());
        let latent = enc_out.last().unwrap().clone();
        let (out, _, _) = self.decode(&self.params, &enc_out);
        Ok((latent, out))
    }

    fn encode(&self, p: &[f64], g: Seq) -> (Vec<Seq>, Vec<ResCache>) {
        let mut enc_out = vec![g];
        let mut caches = Vec::new();
        for blk in &self.layers.enc {
            let (y, c) = blk.forward(p, enc_out.last().unwrap());
            enc_out.push(y);
            caches.push(c);
        }
        (enc_out, caches)
    }

    fn decode(&self, p: &[f64], enc_out: &[Seq]) -> (Seq, Vec<Seq>, Vec<ResCache>) {
        let levels = self.layers.dec.len();
        let mut dec_in = vec![Seq::zeros(0, 0); levels];
        let mut caches: Vec<Option<ResCache>> = vec![None; levels];
        let mut cur = enc_out[levels].clone();
        for l in (0..levels).rev() {
            let (mut y, c) = self.layers.dec[l].forward(p, &cur);
            if self.arch.skips {
                y.add_assign(&enc_out[l]);
            }
            dec_in[l] = cur;
            caches[l] = Some(c);
            cur = y;
        }
        (cur, dec_in, caches.into_iter().map(Option::unwrap).collect())
    }

    /// Forward pass with parameters `p`; returns per-step amplitudes for
    /// the unpadded length and the cache for [`HprNet::backward_with`].
    pub fn forward_with(&self, p: &[f64], nodes: &[Seq]) -> Result<(Vec<f64>, Cache)> {
        let len = self.validate_nodes(nodes)?;
        let padded = len.div_ceil(self.arch.length_multiple()) * self.arch.length_multiple();
        let inputs: Vec<Seq> = nodes.iter().map(|n| n.window(0, padded)).collect();
        let ext: Vec<ExtCache> = inputs.iter().map(|x| self.extract_one(p, x)).collect();
        let embeddings: Vec<Seq> = ext.iter().map(|e| e.acts.last().unwrap().clone()).collect();
        for e in &embeddings {
            check(e, "extractor")?;
        }
        let (g, gat) = self.layers.gat.forward(p, &embeddings);
        check(&g, "gat")?;
        let (enc_out, enc) = self.encode(p, g);
        check(enc_out.last().unwrap(), "encoder")?;
        let (lstm_in, dec_in, dec) = self.decode(p, &enc_out);
        check(&lstm_in, "decoder")?;
        let (lstm_out, lstm) = self.layers.lstm.forward(p, &lstm_in);
        check(&lstm_out, "bilstm")?;
        let z1 = self.layers.dense1.forward(p, &lstm_out);
        let a1 = self.act().apply_seq(&z1);
        let logits = self.layers.dense2.forward(p, &a1);
        let y = Seq::from_data(1, padded, logits.data.iter().map(|&v| sigmoid(v)).collect());
        check(&y, "head")?;
        let out = y.data[..len].to_vec();
        let cache = Cache { len, inputs, ext, gat, enc_out, enc, dec_in, dec, lstm_in, lstm, lstm_out, z1, a1, y };
        Ok((out, cache))
    }

    pub fn forward(&self, nodes: &[Seq]) -> Result<(Vec<f64>, Cache)> {
        self.forward_with(&self.params, nodes)
    }

    /// Gradient of a loss with respect to every parameter, given the loss
    /// gradient `dout` with respect to the unpadded outputs.
    pub fn backward_with(&self, p: &[f64], cache: &Cache, dout: &[f64], fault: Option<Fault>) -> Vec<f64> {
        let mut g = vec![0.0; p.len()];
        let padded = cache.y.len;
        let mut dlogit = Seq::zeros(1, padded);
        for t in 0..cache.len {
            let y = cache.y.data[t];
            dlogit.data[t] = dout[t] * y * (1.0 - y);
        }
        let da1 = self.layers.dense2.backward(p, &cache.a1, &dlogit, &mut g);
        let dz1 = self.act().backward_seq(&cache.z1, &da1);
        let dlstm = self.layers.dense1.backward(p, &cache.lstm_out, &dz1, &mut g);
        let mut dcur = self.layers.lstm.backward(p, &cache.lstm_in, &cache.lstm, &dlstm, &mut g);

        let levels = self.layers.dec.len();
        let mut denc: Vec<Seq> = cache.enc_out.iter().map(|e| Seq::zeros(e.ch, e.len)).collect();
        for l in 0..levels {
            if self.arch.skips {
                denc[l].add_assign(&dcur);
            }
            dcur = self.layers.dec[l].backward(p, &cache.dec_in[l], &cache.dec[l], &dcur, &mut g);
        }
        denc[levels].add_assign(&dcur);
        for l in (0..levels).rev() {
            let d = self.layers.enc[l].backward(p, &cache.enc_out[l], &cache.enc[l], &denc[l + 1], &mut g);
            denc[l].add_assign(&d);
        }

        let embeddings: Vec<&Seq> = cache.ext.iter().map(|e| e.acts.last().unwrap()).collect();
        let owned: Vec<Seq> = embeddings.into_iter().cloned().collect();
        let demb = self.layers.gat.backward(p, &owned, &cache.gat, &denc[0], &mut g, fault);
        for ((e, x), d) in cache.ext.iter().zip(&cache.inputs).zip(demb) {
            let mut d = d;
            for (k, blk) in self.layers.ext.iter().enumerate().rev() {
                d = blk.backward(p, &e.acts[k], &e.blocks[k], &d, &mut g);
            }
            let dz0 = self.act().backward_seq(&e.z0, &d);
            self.layers.conv_in.backward(p, x, &dz0, &mut g);
        }
        g
    }

    /// Mean squared error against `target` and its parameter gradient.
    pub fn loss_and_grad_with(&self, p: &[f64], nodes: &[Seq], target: &[f64], fault: Option<Fault>) -> Result<(f64, Vec<f64>)> {
        let (out, cache) = self.forward_with(p, nodes)?;
        if target.len() != out.len() {
            return invalid("target length differs from input length");
        }
        let n = out.len() as f64;
        let loss = out.iter().zip(target).map(|(y, t)| (y - t).powi(2)).sum::<f64>() / n;
        let dout: Vec<f64> = out.iter().zip(target).map(|(y, t)| 2.0 * (y - t) / n).collect();
        Ok((loss, self.backward_with(p, &cache, &dout, fault)))
    }

    pub fn loss_with(&self, p: &[f64], nodes: &[Seq], target: &[f64]) -> Result<f64> {
        let (out, _) = self.forward_with(p, nodes)?;
        if target.len() != out.len() {
            return invalid("target length differs from input length");
        }
        Ok(out.iter().zip(target).map(|(y, t)| (y - t).powi(2)).sum::<f64>() / out.len() as f64)
    }

    /// Signs of every value entering a LeakyReLU; a change between two
    /// nearby parameter vectors means a finite difference straddles a kink.
    pub fn kink_signature(&self, cache: &Cache) -> Vec<bool> {
        if self.arch.linear {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut push = |s: &Seq| out.extend(s.data.iter().map(|&v| v > 0.0));
        for e in &cache.ext {
            push(&e.z0);
            for b in &e.blocks {
                push(&b.z1);
                push(&b.pre);
            }
        }
        for b in cache.enc.iter().chain(&cache.dec) {
            push(&b.z1);
            push(&b.pre);
        }
        push(&cache.z1);
        out.extend(cache.gat.kink_inputs().map(|v| v > 0.0));
        out
    }

    /// Reconstruct a heart pulse waveform from a feature block.
    pub fn reconstruct(&self, block: &FeatureBlock) -> Result<Hpw> {
        let nodes = block_nodes(block, 0, block.num_steps())?;
        let (samples, _) = self.forward(&nodes)?;
        Ok(Hpw { samples, rate: block.rate })
    }
}

/// Split `steps` samples of a feature block starting at `start` into one
/// `channels x steps` sequence per bin.
pub fn block_nodes(block: &FeatureBlock, start: usize, steps: usize) -> Result<Vec<Seq>> {
    let (bins, total, channels) = block.shape();
    if bins == 0 || start + steps > total || steps == 0 {
        return invalid(format!("window {start}+{steps} outside block of {total} steps"));
    }
    Ok((0..bins)
        .map(|b| {
            let mut s = Seq::zeros(channels, steps);
            for c in 0..channels {
                s.row_mut(c).copy_from_slice(&block.channel(b, c)[start..start + steps]);
            }
            s
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn nodes(m: usize, len: usize, seed: u64) -> Vec<Seq> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(|_| Seq::from_data(3, len, (0..3 * len).map(|_| rng.gen_range(-1.0..1.0)).collect())).collect()
    }

    #[test]
    fn output_length_and_range() {
        let net = HprNet::new(ArchConfig::default(), 1).unwrap();
        for len in [1, 7, 8, 50, 97] {
            let (y, _) = net.forward(&nodes(3, len, len as u64)).unwrap();
            assert_eq!(y.len(), len);
            assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn coder_lengths() {
        let net = HprNet::new(ArchConfig::default(), 2).unwrap();
        let x = Seq::from_data(8, 96, (0..8 * 96).map(|i| (i as f64 * 0.1).sin()).collect());
        let (latent, out) = net.coder_forward(&x).unwrap();
        assert_eq!(latent.len, 12);
        assert_eq!(out.len, 96);
        assert!(out.all_finite());
        assert!(net.coder_forward(&Seq::zeros(8, 95)).is_err());
    }

    #[test]
    fn skips_are_wired() {
        let net = HprNet::new(ArchConfig::default(), 3).unwrap();
        let no_skip = HprNet::from_params(ArchConfig { skips: false, ..ArchConfig::default() }, net.params.clone()).unwrap();
        let x = Seq::from_data(8, 32, (0..8 * 32).map(|i| (i as f64 * 0.37).cos()).collect());
        let (_, a) = net.coder_forward(&x).unwrap();
        let (_, b) = no_skip.coder_forward(&x).unwrap();
        let diff: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn zero_input_zero_bias_extractor_is_zero() {
        let net = HprNet::new(ArchConfig::default(), 4).unwrap();
        let out = net.extractor_forward(&[Seq::zeros(3, 20), Seq::zeros(3, 20)]).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|s| s.ch == 8 && s.len == 20 && s.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rejects_mismatched_bins() {
        let net = HprNet::new(ArchConfig::default(), 5).unwrap();
        assert!(net.forward(&[]).is_err());
        assert!(net.forward(&[Seq::zeros(3, 10), Seq::zeros(3, 11)]).is_err());
        assert!(net.forward(&[Seq::zeros(2, 10)]).is_err());
    }

    #[test]
    fn non_finite_input_names_layer() {
        let net = HprNet::new(ArchConfig::default(), 6).unwrap();
        let mut x = Seq::zeros(3, 16);
        x.data[5] = f64::NAN;
        match net.forward(&[x]) {
            Err(Error::Numeric { layer }) => assert_eq!(layer, "extractor"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
