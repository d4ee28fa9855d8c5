//! Channel-major sequences and the flat parameter layout.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// `ch` channels of `len` samples, stored channel after channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq {
    pub ch: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl Seq {
    pub fn zeros(ch: usize, len: usize) -> Self {
        Self { ch, len, data: vec![0.0; ch * len] }
    }

    pub fn from_data(ch: usize, len: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), ch * len, "sequence data length");
        Self { ch, len, data }
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn add_assign(&mut self, other: &Seq) {
        debug_assert_eq!((self.ch, self.len), (other.ch, other.len));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Copy of samples `start..start + len` with zeros past the end.
    pub fn window(&self, start: usize, len: usize) -> Seq {
        let mut out = Seq::zeros(self.ch, len);
        let n = len.min(self.len.saturating_sub(start));
        for c in 0..self.ch {
            out.row_mut(c)[..n].copy_from_slice(&self.row(c)[start..start + n]);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Location of one parameter tensor inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub slot: Slot,
    /// Uniform init bound; zero for biases.
    #[serde(skip)]
    pub init: Init,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Init {
    #[default]
    Zero,
    Const(f64),
    Uniform(f64),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub entries: Vec<Entry>,
}

impl Layout {
    pub fn num_params(&self) -> usize {
        self.entries.last().map_or(0, |e| e.slot.offset + e.slot.len)
    }

    pub fn alloc(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Slot {
        let slot = Slot { offset: self.num_params(), len: shape.iter().product() };
        self.entries.push(Entry { name: name.into(), shape: shape.to_vec(), slot, init });
        slot
    }

    /// Block name of a parameter: the part of its name before the first dot.
    pub fn block_of(&self, index: usize) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.slot.range().contains(&index))
            .map(|e| e.name.split('.').next().unwrap_or(&e.name))
    }

    pub fn init<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.num_params()];
        for e in &self.entries {
            let dst = &mut out[e.slot.range()];
            match e.init {
                Init::Zero => {}
                Init::Const(v) => dst.fill(v),
                Init::Uniform(bound) => dst.iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound)),
            }
        }
        out
    }
}
