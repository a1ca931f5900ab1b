use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, dense, row-major parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        Param { name: String::from(name), shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    /// Glorot-uniform draw in +-sqrt(6 / (fan_in + fan_out)).
    pub fn glorot<R: Rng>(name: &str, shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let mut p = Self::zeros(name, shape);
        for v in p.data.iter_mut() {
            *v = rng.random_range(-limit..limit);
        }
        p
    }
}

/// Ordered collection of parameters (or of gradients with identical layout).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Params {
    pub list: Vec<Param>,
}

impl Params {
    pub fn zeros_like(&self) -> Params {
        Params { list: self.list.iter().map(|p| Param::zeros(&p.name, &p.shape)).collect() }
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.list.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.list.iter_mut().find(|p| p.name == name)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.list.iter().map(|p| p.data.len()).sum()
    }

    pub fn same_layout(&self, other: &Params) -> bool {
        self.list.len() == other.list.len()
            && self
                .list
                .iter()
                .zip(&other.list)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.data.len() == b.data.len())
    }

    pub fn check_layout(&self, other: &Params) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch { expected: self.count(), got: other.count() })
        }
    }

    pub fn scale(&mut self, k: f64) {
        for p in self.list.iter_mut() {
            for v in p.data.iter_mut() {
                *v *= k;
            }
        }
    }

    /// Elementwise `self += other`; layouts must match.
    pub fn add_assign(&mut self, other: &Params) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.list.iter_mut().zip(&other.list) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        for p in self.list.iter_mut() {
            p.data.fill(value);
        }
    }

    /// Flat view by global index (parameter order, then row-major).
    pub fn flat_get(&self, mut idx: usize) -> f64 {
        for p in &self.list {
            if idx < p.data.len() {
                return p.data[idx];
            }
            idx -= p.data.len();
        }
        panic!("flat index out of range");
    }

    pub fn flat_set(&mut self, mut idx: usize, value: f64) {
        for p in self.list.iter_mut() {
            if idx < p.data.len() {
                p.data[idx] = value;
                return;
            }
            idx -= p.data.len();
        }
        panic!("flat index out of range");
    }
}

/// out[r] += sum_c m[r, c] * v[c] for an `rows x cols` row-major block.
#[inline]
pub(crate) fn gemv_acc(out: &mut [f64], m: &[f64], cols: usize, v: &[f64]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        let mut s = 0.0;
        for (a, b) in row.iter().zip(v) {
            s += a * b;
        }
        *o += s;
    }
}

/// out[c] += sum_r m[r, c] * v[r].
#[inline]
pub(crate) fn gemv_t_acc(out: &mut [f64], m: &[f64], cols: usize, v: &[f64]) {
    for (row, &vr) in m.chunks_exact(cols).zip(v) {
        if vr == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vr;
        }
    }
}

/// g[r, c] += a[r] * b[c].
#[inline]
pub(crate) fn outer_acc(g: &mut [f64], cols: usize, a: &[f64], b: &[f64]) {
    for (row, &ar) in g.chunks_exact_mut(cols).zip(a) {
        if ar == 0.0 {
            continue;
        }
        for (o, bc) in row.iter_mut().zip(b) {
            *o += ar * bc;
        }
    }
}
