//! Convolutions, activations and residual blocks with explicit backward passes.

use serde::{Deserialize, Serialize};

use crate::tensor::{Init, Layout, Seq, Slot};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) if v <= 0.0 => s * v,
            _ => v,
        }
    }

    #[inline]
    pub fn deriv(self, pre: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) if pre <= 0.0 => s,
            _ => 1.0,
        }
    }

    pub fn apply_seq(self, x: &Seq) -> Seq {
        Seq::from_data(x.ch, x.len, x.data.iter().map(|&v| self.apply(v)).collect())
    }

    /// `dy * f'(pre)` elementwise.
    pub fn backward_seq(self, pre: &Seq, dy: &Seq) -> Seq {
        let data = pre.data.iter().zip(&dy.data).map(|(&p, &d)| d * self.deriv(p)).collect();
        Seq::from_data(pre.ch, pre.len, data)
    }

    pub fn is_kinked(self) -> bool {
        matches!(self, Activation::LeakyRelu(_))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn glorot(fan_in: usize, fan_out: usize) -> Init {
    Init::Uniform((6.0 / (fan_in + fan_out) as f64).sqrt())
}

/// 1-D convolution with zero "same" padding; stride `s` keeps `ceil(len / s)` outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub w: Slot,
    pub b: Slot,
}

impl Conv1d {
    pub fn new(layout: &mut Layout, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        let w = layout.alloc(format!("{name}.w"), &[cout, cin, k], glorot(cin * k, cout * k));
        let b = layout.alloc(format!("{name}.b"), &[cout], Init::Zero);
        Self { cin, cout, k, stride, w, b }
    }

    pub fn out_len(&self, len: usize) -> usize {
        len.div_ceil(self.stride)
    }

    fn pad(&self) -> usize {
        (self.k - 1) / 2
    }

    /// Output positions `o` for which tap `j` reads inside the input.
    fn valid(&self, j: usize, len: usize, out_len: usize) -> (usize, usize) {
        let (pad, s) = (self.pad(), self.stride);
        let lo = if j >= pad { 0 } else { (pad - j).div_ceil(s) };
        if len + pad < j + 1 {
            return (0, 0);
        }
        let hi = ((len - 1 + pad - j) / s + 1).min(out_len);
        (lo, hi.max(lo))
    }

    pub fn forward(&self, p: &[f64], x: &Seq) -> Seq {
        debug_assert_eq!(x.ch, self.cin);
        let out_len = self.out_len(x.len);
        let mut y = Seq::zeros(self.cout, out_len);
        let w = &p[self.w.range()];
        let b = &p[self.b.range()];
        let (k, s, pad) = (self.k, self.stride, self.pad());
        for co in 0..self.cout {
            let yr = y.row_mut(co);
            yr.fill(b[co]);
            for ci in 0..self.cin {
                let xr = x.row(ci);
                for j in 0..k {
                    let wv = w[(co * self.cin + ci) * k + j];
                    let (lo, hi) = self.valid(j, x.len, out_len);
                    if s == 1 {
                        let src = &xr[lo + j - pad..hi + j - pad];
                        for (yv, xv) in yr[lo..hi].iter_mut().zip(src) {
                            *yv += wv * xv;
                        }
                    } else {
                        for o in lo..hi {
                            yr[o] += wv * xr[o * s + j - pad];
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates weight gradients into `g` and returns the input gradient.
    pub fn backward(&self, p: &[f64], x: &Seq, dy: &Seq, g: &mut [f64]) -> Seq {
        let mut dx = Seq::zeros(self.cin, x.len);
        let w = &p[self.w.range()];
        let (k, s, pad) = (self.k, self.stride, self.pad());
        let (w0, b0) = (self.w.offset, self.b.offset);
        for co in 0..self.cout {
            let dyr = dy.row(co);
            g[b0 + co] += dyr.iter().sum::<f64>();
            for ci in 0..self.cin {
                let xr = x.row(ci);
                for j in 0..k {
                    let idx = (co * self.cin + ci) * k + j;
                    let wv = w[idx];
                    let (lo, hi) = self.valid(j, x.len, dy.len);
                    let mut acc = 0.0;
                    let dxr = dx.row_mut(ci);
                    if s == 1 {
                        let (src, dst) = (&xr[lo + j - pad..hi + j - pad], &mut dxr[lo + j - pad..hi + j - pad]);
                        for ((d, x), dv) in dst.iter_mut().zip(src).zip(&dyr[lo..hi]) {
                            acc += dv * x;
                            *d += wv * dv;
                        }
                    } else {
                        for o in lo..hi {
                            let i = o * s + j - pad;
                            acc += dyr[o] * xr[i];
                            dxr[i] += wv * dyr[o];
                        }
                    }
                    g[w0 + idx] += acc;
                }
            }
        }
        dx
    }
}

/// Transposed convolution with kernel 2 and stride 2: doubles the length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvT2 {
    pub cin: usize,
    pub cout: usize,
    pub w: Slot,
    pub b: Slot,
}

impl ConvT2 {
    pub fn new(layout: &mut Layout, name: &str, cin: usize, cout: usize) -> Self {
        let w = layout.alloc(format!("{name}.w"), &[cin, cout, 2], glorot(cin, cout));
        let b = layout.alloc(format!("{name}.b"), &[cout], Init::Zero);
        Self { cin, cout, w, b }
    }

    pub fn forward(&self, p: &[f64], x: &Seq) -> Seq {
        let mut y = Seq::zeros(self.cout, 2 * x.len);
        let w = &p[self.w.range()];
        let b = &p[self.b.range()];
        for co in 0..self.cout {
            let yr = y.row_mut(co);
            yr.fill(b[co]);
            for ci in 0..self.cin {
                let (w0, w1) = (w[(ci * self.cout + co) * 2], w[(ci * self.cout + co) * 2 + 1]);
                for (o, &xv) in x.row(ci).iter().enumerate() {
                    yr[2 * o] += w0 * xv;
                    yr[2 * o + 1] += w1 * xv;
                }
            }
        }
        y
    }

    pub fn backward(&self, p: &[f64], x: &Seq, dy: &Seq, g: &mut [f64]) -> Seq {
        let mut dx = Seq::zeros(self.cin, x.len);
        let w = &p[self.w.range()];
        for co in 0..self.cout {
            let dyr = dy.row(co);
            g[self.b.offset + co] += dyr.iter().sum::<f64>();
            for ci in 0..self.cin {
                let idx = (ci * self.cout + co) * 2;
                let (w0, w1) = (w[idx], w[idx + 1]);
                let (mut a0, mut a1) = (0.0, 0.0);
                let xr = x.row(ci);
                let dxr = dx.row_mut(ci);
                for o in 0..x.len {
                    a0 += dyr[2 * o] * xr[o];
                    a1 += dyr[2 * o + 1] * xr[o];
                    dxr[o] += w0 * dyr[2 * o] + w1 * dyr[2 * o + 1];
                }
                g[self.w.offset + idx] += a0;
                g[self.w.offset + idx + 1] += a1;
            }
        }
        dx
    }
}

/// `act(conv2(act(conv1(x))) + shortcut(x))`; the shortcut is the identity
/// unless the block changes stride or width, then a 1x1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResBlock {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub shortcut: Option<Conv1d>,
    pub act: Activation,
}

#[derive(Debug, Clone)]
pub struct ResCache {
    pub z1: Seq,
    pub a1: Seq,
    pub pre: Seq,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(layout: &mut Layout, name: &str, cin: usize, cout: usize, k: usize, stride: usize, act: Activation) -> Self {
        let conv1 = Conv1d::new(layout, &format!("{name}.conv1"), cin, cout, k, stride);
        let conv2 = Conv1d::new(layout, &format!("{name}.conv2"), cout, cout, k, 1);
        let shortcut = (stride != 1 || cin != cout).then(|| Conv1d::new(layout, &format!("{name}.short"), cin, cout, 1, stride));
        Self { conv1, conv2, shortcut, act }
    }

    pub fn forward(&self, p: &[f64], x: &Seq) -> (Seq, ResCache) {
        let z1 = self.conv1.forward(p, x);
        let a1 = self.act.apply_seq(&z1);
        let mut pre = self.conv2.forward(p, &a1);
        match &self.shortcut {
            Some(sc) => pre.add_assign(&sc.forward(p, x)),
            None => pre.add_assign(x),
        }
        let y = self.act.apply_seq(&pre);
        (y, ResCache { z1, a1, pre })
    }

    pub fn backward(&self, p: &[f64], x: &Seq, cache: &ResCache, dy: &Seq, g: &mut [f64]) -> Seq {
        let dpre = self.act.backward_seq(&cache.pre, dy);
        let da1 = self.conv2.backward(p, &cache.a1, &dpre, g);
        let dz1 = self.act.backward_seq(&cache.z1, &da1);
        let mut dx = self.conv1.backward(p, x, &dz1, g);
        match &self.shortcut {
            Some(sc) => dx.add_assign(&sc.backward(p, x, &dpre, g)),
            None => dx.add_assign(&dpre),
        }
        dx
    }

    pub fn kink_inputs<'a>(&self, cache: &'a ResCache) -> [&'a Seq; 2] {
        [&cache.z1, &cache.pre]
    }
}

/// Upsampling counterpart: `act(conv(act(up(x))) + up_short(x))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransResBlock {
    pub up: ConvT2,
    pub conv: Conv1d,
    pub shortcut: ConvT2,
    pub act: Activation,
}

impl TransResBlock {
    pub fn new(layout: &mut Layout, name: &str, cin: usize, cout: usize, k: usize, act: Activation) -> Self {
        let up = ConvT2::new(layout, &format!("{name}.up"), cin, cout);
        let conv = Conv1d::new(layout, &format!("{name}.conv"), cout, cout, k, 1);
        let shortcut = ConvT2::new(layout, &format!("{name}.short"), cin, cout);
        Self { up, conv, shortcut, act }
    }

    pub fn forward(&self, p: &[f64], x: &Seq) -> (Seq, ResCache) {
        let z1 = self.up.forward(p, x);
        let a1 = self.act.apply_seq(&z1);
        let mut pre = self.conv.forward(p, &a1);
        pre.add_assign(&self.shortcut.forward(p, x));
        let y = self.act.apply_seq(&pre);
        (y, ResCache { z1, a1, pre })
    }

    pub fn backward(&self, p: &[f64], x: &Seq, cache: &ResCache, dy: &Seq, g: &mut [f64]) -> Seq {
        let dpre = self.act.backward_seq(&cache.pre, dy);
        let da1 = self.conv.backward(p, &cache.a1, &dpre, g);
        let dz1 = self.act.backward_seq(&cache.z1, &da1);
        let mut dx = self.up.backward(p, x, &dz1, g);
        dx.add_assign(&self.shortcut.backward(p, x, &dpre, g));
        dx
    }
}
