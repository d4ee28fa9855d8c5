//! Single-head graph attention across the range bins of one time step.
//!
//! Every bin is a node of a fully connected graph. For node features `h_i`:
//! `z_i = W h_i`, `e_ij = LeakyReLU(a . [z_i || z_j])`, `alpha_ij = softmax_j(e_ij)`,
//! `h'_i = LeakyReLU(sum_j alpha_ij z_j)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::layers::Activation;
use crate::tensor::{Init, Layout, Seq, Slot};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Stand-alone attention parameters; `w` is row-major `d_out x d_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatParams {
    pub d_in: usize,
    pub d_out: usize,
    pub w: Vec<f64>,
    pub a: Vec<f64>,
    pub leaky_slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatOutput {
    /// Row-major `m x m`.
    pub alpha: Vec<f64>,
    /// Row-major `m x d_out`.
    pub out: Vec<f64>,
}

/// Intermediate values of one time step, kept for the backward pass.
#[derive(Debug, Clone, Default)]
struct Step {
    z: Vec<f64>,
    pre: Vec<f64>,
    alpha: Vec<f64>,
    u: Vec<f64>,
    /// Nodes sorted by their projected features; every sum over nodes runs
    /// in this order so results do not depend on bin order.
    order: Vec<usize>,
}

fn attend(w: &[f64], a: &[f64], h: &[f64], m: usize, d_in: usize, d_out: usize, attn: Activation, step: &mut Step) {
    step.z.clear();
    step.z.resize(m * d_out, 0.0);
    for i in 0..m {
        let hi = &h[i * d_in..(i + 1) * d_in];
        for o in 0..d_out {
            let wr = &w[o * d_in..(o + 1) * d_in];
            step.z[i * d_out + o] = wr.iter().zip(hi).map(|(x, y)| x * y).sum();
        }
    }
    let z = &step.z;
    step.order.clear();
    step.order.extend(0..m);
    step.order.sort_by(|&i, &j| {
        let (zi, zj) = (&z[i * d_out..(i + 1) * d_out], &z[j * d_out..(j + 1) * d_out]);
        zi.iter().zip(zj).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let (a1, a2) = a.split_at(d_out);
    let dot = |v: &[f64], zi: &[f64]| v.iter().zip(zi).map(|(x, y)| x * y).sum::<f64>();
    let s: Vec<f64> = (0..m).map(|i| dot(a1, &step.z[i * d_out..(i + 1) * d_out])).collect();
    let r: Vec<f64> = (0..m).map(|j| dot(a2, &step.z[j * d_out..(j + 1) * d_out])).collect();
    step.pre.clear();
    step.alpha.clear();
    step.u.clear();
    step.u.resize(m * d_out, 0.0);
    for i in 0..m {
        let row0 = step.pre.len();
        step.pre.extend((0..m).map(|j| s[i] + r[j]));
        let e: Vec<f64> = step.pre[row0..].iter().map(|&p| attn.apply(p)).collect();
        let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = e.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = step.order.iter().map(|&j| ex[j]).sum();
        step.alpha.extend(ex.iter().map(|v| v / total));
        for &j in &step.order {
            let al = step.alpha[i * m + j];
            for o in 0..d_out {
                step.u[i * d_out + o] += al * step.z[j * d_out + o];
            }
        }
    }
}

/// Attention over one set of nodes; `h` is row-major `m x d_in`.
pub fn gat_forward(h: &[f64], m: usize, p: &GatParams) -> Result<GatOutput> {
    if m == 0 || p.d_in == 0 || p.d_out == 0 {
        return invalid("gat needs at least one node and positive widths");
    }
    if h.len() != m * p.d_in || p.w.len() != p.d_out * p.d_in || p.a.len() != 2 * p.d_out {
        return invalid("gat shape mismatch");
    }
    let act = Activation::LeakyRelu(p.leaky_slope);
    let mut step = Step::default();
    attend(&p.w, &p.a, h, m, p.d_in, p.d_out, act, &mut step);
    let out = step.u.iter().map(|&v| act.apply(v)).collect();
    Ok(GatOutput { alpha: step.alpha, out })
}

/// Network layer: attention at every time step followed by a mean over nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatLayer {
    pub d_in: usize,
    pub d_out: usize,
    pub w: Slot,
    pub a: Slot,
    /// Applied to attention logits.
    pub attn_act: Activation,
    /// Applied to the aggregated node features.
    pub out_act: Activation,
}

#[derive(Debug, Clone)]
pub struct GatCache {
    steps: Vec<Step>,
    m: usize,
}

impl GatCache {
    pub fn attention(&self, t: usize) -> &[f64] {
        &self.steps[t].alpha
    }

    /// Every value that passes through a kinked activation.
    pub fn kink_inputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().flat_map(|s| s.pre.iter().chain(&s.u).copied())
    }
}

/// Gradient faults for checking that the gradient check notices them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Drop the softmax normalization term from the attention gradient.
    GatSoftmax,
}

impl GatLayer {
    pub fn new(layout: &mut Layout, name: &str, d_in: usize, d_out: usize, attn_act: Activation, out_act: Activation) -> Self {
        let w = layout.alloc(format!("{name}.w"), &[d_out, d_in], Init::Uniform((6.0 / (d_in + d_out) as f64).sqrt()));
        let a = layout.alloc(format!("{name}.a"), &[2 * d_out], Init::Uniform((3.0 / d_out as f64).sqrt()));
        Self { d_in, d_out, w, a, attn_act, out_act }
    }

    /// `nodes[i]` is the `d_in x T` embedding of bin `i`; returns the pooled `d_out x T`.
    pub fn forward(&self, p: &[f64], nodes: &[Seq]) -> (Seq, GatCache) {
        let m = nodes.len();
        let len = nodes[0].len;
        let w = &p[self.w.range()];
        let a = &p[self.a.range()];
        let mut out = Seq::zeros(self.d_out, len);
        let mut steps = Vec::with_capacity(len);
        let mut h = vec![0.0; m * self.d_in];
        for t in 0..len {
            for (i, node) in nodes.iter().enumerate() {
                for c in 0..self.d_in {
                    h[i * self.d_in + c] = node.data[c * len + t];
                }
            }
            let mut step = Step::default();
            attend(w, a, &h, m, self.d_in, self.d_out, self.attn_act, &mut step);
            for o in 0..self.d_out {
                let mut acc = 0.0;
                for &i in &step.order {
                    acc += self.out_act.apply(step.u[i * self.d_out + o]);
                }
                out.data[o * len + t] = acc / m as f64;
            }
            steps.push(step);
        }
        (out, GatCache { steps, m })
    }

    pub fn backward(&self, p: &[f64], nodes: &[Seq], cache: &GatCache, dy: &Seq, g: &mut [f64], fault: Option<Fault>) -> Vec<Seq> {
        let (m, din, dout) = (cache.m, self.d_in, self.d_out);
        let len = dy.len;
        let w = &p[self.w.range()];
        let (a1, a2) = p[self.a.range()].split_at(dout);
        let mut dnodes = vec![Seq::zeros(din, len); m];
        let mut dw = vec![0.0; dout * din];
        let mut da = vec![0.0; 2 * dout];
        let mut du = vec![0.0; m * dout];
        let mut dz = vec![0.0; m * dout];
        let mut dpre = vec![0.0; m * m];
        for t in 0..len {
            let st = &cache.steps[t];
            for i in 0..m {
                for o in 0..dout {
                    du[i * dout + o] = dy.data[o * len + t] / m as f64 * self.out_act.deriv(st.u[i * dout + o]);
                }
            }
            dz.fill(0.0);
            for i in 0..m {
                let dui = &du[i * dout..(i + 1) * dout];
                // gradient of alpha_ij from u_i = sum_j alpha_ij z_j
                let mut dalpha = vec![0.0; m];
                for j in 0..m {
                    let zj = &st.z[j * dout..(j + 1) * dout];
                    let al = st.alpha[i * m + j];
                    let mut acc = 0.0;
                    for o in 0..dout {
                        dz[j * dout + o] += al * dui[o];
                        acc += dui[o] * zj[o];
                    }
                    dalpha[j] = acc;
                }
                let mean: f64 = match fault {
                    Some(Fault::GatSoftmax) => 0.0,
                    None => (0..m).map(|j| st.alpha[i * m + j] * dalpha[j]).sum(),
                };
                for j in 0..m {
                    let de = st.alpha[i * m + j] * (dalpha[j] - mean);
                    dpre[i * m + j] = de * self.attn_act.deriv(st.pre[i * m + j]);
                }
            }
            for i in 0..m {
                let ds: f64 = (0..m).map(|j| dpre[i * m + j]).sum();
                let dr: f64 = (0..m).map(|k| dpre[k * m + i]).sum();
                let zi = &st.z[i * dout..(i + 1) * dout];
                for o in 0..dout {
                    da[o] += ds * zi[o];
                    da[dout + o] += dr * zi[o];
                    dz[i * dout + o] += ds * a1[o] + dr * a2[o];
                }
            }
            for j in 0..m {
                let node = &nodes[j];
                let dn = &mut dnodes[j];
                for o in 0..dout {
                    let d = dz[j * dout + o];
                    if d == 0.0 {
                        continue;
                    }
                    let wr = &w[o * din..(o + 1) * din];
                    for c in 0..din {
                        dw[o * din + c] += d * node.data[c * len + t];
                        dn.data[c * len + t] += d * wr[c];
                    }
                }
            }
        }
        for (k, v) in dw.into_iter().enumerate() {
            g[self.w.offset + k] += v;
        }
        for (k, v) in da.into_iter().enumerate() {
            g[self.a.offset + k] += v;
        }
        dnodes
    }
}
