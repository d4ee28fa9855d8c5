//! Bidirectional LSTM with backpropagation through time.

use serde::{Deserialize, Serialize};

use crate::layers::sigmoid;
use crate::tensor::{Init, Layout, Seq, Slot};

/// One direction. Gate rows are ordered input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstmDir {
    pub d_in: usize,
    pub hidden: usize,
    pub wx: Slot,
    pub wh: Slot,
    pub b: Slot,
    pub reverse: bool,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Post-activation gates, `[t][4H]` in time order.
    gates: Vec<f64>,
    /// Cell states `[t][H]`.
    c: Vec<f64>,
    /// Outputs `H x T`.
    pub h: Seq,
}

impl LstmDir {
    pub fn new(layout: &mut Layout, name: &str, d_in: usize, hidden: usize, reverse: bool) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let wx = layout.alloc(format!("{name}.wx"), &[4 * hidden, d_in], Init::Uniform(bound));
        let wh = layout.alloc(format!("{name}.wh"), &[4 * hidden, hidden], Init::Uniform(bound));
        let b = layout.alloc(format!("{name}.b"), &[4 * hidden], Init::Zero);
        Self { d_in, hidden, wx, wh, b, reverse }
    }

    /// Forget-gate biases start at one.
    pub fn forget_bias_init(&self, p: &mut [f64]) {
        let h = self.hidden;
        p[self.b.offset + h..self.b.offset + 2 * h].fill(1.0);
    }

    fn order(&self, len: usize) -> Box<dyn Iterator<Item = usize>> {
        if self.reverse {
            Box::new((0..len).rev())
        } else {
            Box::new(0..len)
        }
    }

    pub fn forward(&self, p: &[f64], x: &Seq) -> LstmCache {
        let (hd, len, din) = (self.hidden, x.len, self.d_in);
        let wx = &p[self.wx.range()];
        let wh = &p[self.wh.range()];
        let b = &p[self.b.range()];
        let mut gates = vec![0.0; len * 4 * hd];
        let mut c = vec![0.0; len * hd];
        let mut h = Seq::zeros(hd, len);
        let mut h_prev = vec![0.0; hd];
        let mut c_prev = vec![0.0; hd];
        let mut xt = vec![0.0; din];
        for t in self.order(len) {
            for (k, v) in xt.iter_mut().enumerate() {
                *v = x.data[k * len + t];
            }
            let gt = &mut gates[t * 4 * hd..(t + 1) * 4 * hd];
            for r in 0..4 * hd {
                let mut acc = b[r];
                let wxr = &wx[r * din..(r + 1) * din];
                acc += wxr.iter().zip(&xt).map(|(a, b)| a * b).sum::<f64>();
                let whr = &wh[r * hd..(r + 1) * hd];
                acc += whr.iter().zip(&h_prev).map(|(a, b)| a * b).sum::<f64>();
                gt[r] = if (2 * hd..3 * hd).contains(&r) { acc.tanh() } else { sigmoid(acc) };
            }
            for k in 0..hd {
                let (i, f, gg, o) = (gt[k], gt[hd + k], gt[2 * hd + k], gt[3 * hd + k]);
                let ct = f * c_prev[k] + i * gg;
                c[t * hd + k] = ct;
                let ht = o * ct.tanh();
                h.data[k * len + t] = ht;
                c_prev[k] = ct;
                h_prev[k] = ht;
            }
        }
        LstmCache { gates, c, h }
    }

    pub fn backward(&self, p: &[f64], x: &Seq, cache: &LstmCache, dh_out: &Seq, g: &mut [f64]) -> Seq {
        let (hd, len, din) = (self.hidden, x.len, self.d_in);
        let wx = &p[self.wx.range()];
        let wh = &p[self.wh.range()];
        let mut dx = Seq::zeros(din, len);
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dpre = vec![0.0; 4 * hd];
        let steps: Vec<usize> = self.order(len).collect();
        for (n, &t) in steps.iter().enumerate().rev() {
            let prev = if n > 0 { Some(steps[n - 1]) } else { None };
            let gt = &cache.gates[t * 4 * hd..(t + 1) * 4 * hd];
            for k in 0..hd {
                let (i, f, gg, o) = (gt[k], gt[hd + k], gt[2 * hd + k], gt[3 * hd + k]);
                let ct = cache.c[t * hd + k];
                let c_prev = prev.map_or(0.0, |q| cache.c[q * hd + k]);
                let tc = ct.tanh();
                let dh = dh_out.data[k * len + t] + dh_next[k];
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                dpre[k] = dc * gg * i * (1.0 - i);
                dpre[hd + k] = dc * c_prev * f * (1.0 - f);
                dpre[2 * hd + k] = dc * i * (1.0 - gg * gg);
                dpre[3 * hd + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            dh_next.fill(0.0);
            for r in 0..4 * hd {
                let d = dpre[r];
                g[self.b.offset + r] += d;
                for k in 0..din {
                    g[self.wx.offset + r * din + k] += d * x.data[k * len + t];
                    dx.data[k * len + t] += d * wx[r * din + k];
                }
                if let Some(q) = prev {
                    for k in 0..hd {
                        g[self.wh.offset + r * hd + k] += d * cache.h.data[k * len + q];
                        dh_next[k] += d * wh[r * hd + k];
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiLstm {
    pub fwd: LstmDir,
    pub bwd: LstmDir,
}

impl BiLstm {
    pub fn new(layout: &mut Layout, name: &str, d_in: usize, hidden: usize) -> Self {
        Self {
            fwd: LstmDir::new(layout, &format!("{name}.fwd"), d_in, hidden, false),
            bwd: LstmDir::new(layout, &format!("{name}.bwd"), d_in, hidden, true),
        }
    }

    /// Output is `2H x T`: forward states stacked over backward states.
    pub fn forward(&self, p: &[f64], x: &Seq) -> (Seq, [LstmCache; 2]) {
        let f = self.fwd.forward(p, x);
        let b = self.bwd.forward(p, x);
        let mut data = f.h.data.clone();
        data.extend_from_slice(&b.h.data);
        (Seq::from_data(2 * self.fwd.hidden, x.len, data), [f, b])
    }

    pub fn backward(&self, p: &[f64], x: &Seq, cache: &[LstmCache; 2], dy: &Seq, g: &mut [f64]) -> Seq {
        let half = self.fwd.hidden * dy.len;
        let df = Seq::from_data(self.fwd.hidden, dy.len, dy.data[..half].to_vec());
        let db = Seq::from_data(self.bwd.hidden, dy.len, dy.data[half..].to_vec());
        let mut dx = self.fwd.backward(p, x, &cache[0], &df, g);
        dx.add_assign(&self.bwd.backward(p, x, &cache[1], &db, g));
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reversal_symmetry_with_swapped_directions() {
        let mut layout = Layout::default();
        let bi = BiLstm::new(&mut layout, "l", 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p: Vec<f64> = (0..layout.num_params()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let len = 25;
        let x = Seq::from_data(3, len, (0..3 * len).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let (y, _) = bi.forward(&p, &x);

        // swap the two directions' weights and reverse time
        let mut q = p.clone();
        let (f, b) = (bi.fwd, bi.bwd);
        for (sf, sb) in [(f.wx, b.wx), (f.wh, b.wh), (f.b, b.b)] {
            q[sf.range()].copy_from_slice(&p[sb.range()]);
            q[sb.range()].copy_from_slice(&p[sf.range()]);
        }
        let mut xr = Seq::zeros(3, len);
        for c in 0..3 {
            for t in 0..len {
                xr.row_mut(c)[t] = x.row(c)[len - 1 - t];
            }
        }
        let (yr, _) = bi.forward(&q, &xr);
        for k in 0..4 {
            for t in 0..len {
                assert!((yr.row(k)[len - 1 - t] - y.row(4 + k)[t]).abs() < 1e-12);
                assert!((yr.row(4 + k)[len - 1 - t] - y.row(k)[t]).abs() < 1e-12);
            }
        }
    }
}
