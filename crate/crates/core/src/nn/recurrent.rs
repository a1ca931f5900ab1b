//! Recurrent cells with backpropagation through time.
//!
//! Gate layout follows the usual fused convention: the kernel is
//! `[gates * n, features]`, the recurrent matrix `[gates * n, n]` and the
//! bias `[gates * n]`.
//!
//! - SimpleRNN: one block, `h' = act(Wx + Uh + b)`.
//! - GRU: blocks `z, r, h`; `h' = z*h + (1-z)*act(W_h x + U_h (r*h) + b_h)`.
//! - LSTM: blocks `i, f, g, o`; `c' = f*c + i*act(a_g)`, `h' = o*act(c')`.

use alloc::vec;
use alloc::vec::Vec;

use super::params::{gemv_acc, gemv_t_acc, outer_acc};
use super::{Activation, Cell};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => libm::tanh(x),
        }
    }

    /// Derivative given the pre-activation and the activation value.
    #[inline]
    pub(crate) fn grad(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

/// Borrowed weights of one recurrent direction.
pub(crate) struct CellWeights<'a> {
    pub kernel: &'a [f64],
    pub recurrent: &'a [f64],
    pub bias: &'a [f64],
}

/// Gradient buffers of one recurrent direction.
pub(crate) struct CellGrads<'a> {
    pub kernel: &'a mut [f64],
    pub recurrent: &'a mut [f64],
    pub bias: &'a mut [f64],
}

#[derive(Debug, Clone)]
struct Step {
    t: usize,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// post-activation gate values, `gates * n`
    gates: Vec<f64>,
    /// candidate pre-activation
    cand_pre: Vec<f64>,
    /// LSTM cell state after the step
    c: Vec<f64>,
    /// GRU r * h_prev
    rh: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct DirectionTrace {
    steps: Vec<Step>,
    pub h_last: Vec<f64>,
}

pub(crate) struct Recurrence {
    pub cell: Cell,
    pub act: Activation,
    pub n: usize,
    pub features: usize,
    pub steps: usize,
}

impl Recurrence {
    fn x_at<'a>(&self, input: &'a [f64], t: usize) -> &'a [f64] {
        &input[t * self.features..(t + 1) * self.features]
    }

    /// Run the cell over the whole sequence (reversed for backward directions).
    pub fn forward(&self, w: &CellWeights, input: &[f64], reverse: bool, keep_trace: bool) -> DirectionTrace {
        let n = self.n;
        let f = self.features;
        let g = self.cell.gates();
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut steps = Vec::new();
        for k in 0..self.steps {
            let t = if reverse { self.steps - 1 - k } else { k };
            let x = self.x_at(input, t);
            let mut pre = w.bias.to_vec();
            gemv_acc(&mut pre, w.kernel, f, x);
            let mut gates = vec![0.0; g * n];
            let mut cand_pre = vec![0.0; n];
            let mut rh = Vec::new();
            let mut c_new = Vec::new();
            let h_new: Vec<f64> = match self.cell {
                Cell::Simple => {
                    gemv_acc(&mut pre, w.recurrent, n, &h);
                    cand_pre.copy_from_slice(&pre);
                    for j in 0..n {
                        gates[j] = self.act.apply(pre[j]);
                    }
                    gates.clone()
                }
                Cell::Gru => {
                    gemv_acc(&mut pre[..2 * n], &w.recurrent[..2 * n * n], n, &h);
                    for j in 0..2 * n {
                        gates[j] = sigmoid(pre[j]);
                    }
                    rh = (0..n).map(|j| gates[n + j] * h[j]).collect();
                    gemv_acc(&mut pre[2 * n..], &w.recurrent[2 * n * n..], n, &rh);
                    cand_pre.copy_from_slice(&pre[2 * n..]);
                    for j in 0..n {
                        gates[2 * n + j] = self.act.apply(cand_pre[j]);
                    }
                    (0..n).map(|j| gates[j] * h[j] + (1.0 - gates[j]) * gates[2 * n + j]).collect()
                }
                Cell::Lstm => {
                    gemv_acc(&mut pre, w.recurrent, n, &h);
                    for j in 0..n {
                        gates[j] = sigmoid(pre[j]);
                        gates[n + j] = sigmoid(pre[n + j]);
                        gates[2 * n + j] = self.act.apply(pre[2 * n + j]);
                        gates[3 * n + j] = sigmoid(pre[3 * n + j]);
                    }
                    cand_pre.copy_from_slice(&pre[2 * n..3 * n]);
                    c_new = (0..n).map(|j| gates[n + j] * c[j] + gates[j] * gates[2 * n + j]).collect();
                    (0..n).map(|j| gates[3 * n + j] * self.act.apply(c_new[j])).collect()
                }
            };
            if keep_trace {
                steps.push(Step { t, h_prev: h.clone(), c_prev: c.clone(), gates, cand_pre, c: c_new.clone(), rh });
            }
            h = h_new;
            if self.cell == Cell::Lstm {
                c = c_new;
            }
        }
        DirectionTrace { steps, h_last: h }
    }

    /// Accumulate parameter gradients given dL/dh at the final step.
    pub fn backward(
        &self,
        w: &CellWeights,
        input: &[f64],
        trace: &DirectionTrace,
        dh_last: &[f64],
        grads: &mut CellGrads,
    ) {
        let n = self.n;
        let f = self.features;
        let g = self.cell.gates();
        let mut dh = dh_last.to_vec();
        let mut dc = vec![0.0; n];
        let mut dpre = vec![0.0; g * n];
        for step in trace.steps.iter().rev() {
            let x = self.x_at(input, step.t);
            let mut dh_prev = vec![0.0; n];
            match self.cell {
                Cell::Simple => {
                    for j in 0..n {
                        dpre[j] = dh[j] * self.act.grad(step.cand_pre[j], step.gates[j]);
                    }
                    outer_acc(grads.recurrent, n, &dpre, &step.h_prev);
                    gemv_t_acc(&mut dh_prev, w.recurrent, n, &dpre);
                }
                Cell::Gru => {
                    let (z, r, hh) = (&step.gates[..n], &step.gates[n..2 * n], &step.gates[2 * n..]);
                    for j in 0..n {
                        dh_prev[j] = dh[j] * z[j];
                        let dz = dh[j] * (step.h_prev[j] - hh[j]);
                        let dhh = dh[j] * (1.0 - z[j]);
                        dpre[j] = dz * z[j] * (1.0 - z[j]);
                        dpre[2 * n + j] = dhh * self.act.grad(step.cand_pre[j], hh[j]);
                    }
                    // candidate path through r * h
                    let mut drh = vec![0.0; n];
                    gemv_t_acc(&mut drh, &w.recurrent[2 * n * n..], n, &dpre[2 * n..]);
                    for j in 0..n {
                        let dr = drh[j] * step.h_prev[j];
                        dpre[n + j] = dr * r[j] * (1.0 - r[j]);
                        dh_prev[j] += drh[j] * r[j];
                    }
                    outer_acc(&mut grads.recurrent[..2 * n * n], n, &dpre[..2 * n], &step.h_prev);
                    outer_acc(&mut grads.recurrent[2 * n * n..], n, &dpre[2 * n..], &step.rh);
                    gemv_t_acc(&mut dh_prev, &w.recurrent[..2 * n * n], n, &dpre[..2 * n]);
                }
                Cell::Lstm => {
                    let (i, fg, gg, o) =
                        (&step.gates[..n], &step.gates[n..2 * n], &step.gates[2 * n..3 * n], &step.gates[3 * n..]);
                    for j in 0..n {
                        let ac = self.act.apply(step.c[j]);
                        let dcj = dc[j] + dh[j] * o[j] * self.act.grad(step.c[j], ac);
                        let d_o = dh[j] * ac;
                        let di = dcj * gg[j];
                        let dg = dcj * i[j];
                        let df = dcj * step.c_prev[j];
                        dc[j] = dcj * fg[j];
                        dpre[j] = di * i[j] * (1.0 - i[j]);
                        dpre[n + j] = df * fg[j] * (1.0 - fg[j]);
                        dpre[2 * n + j] = dg * self.act.grad(step.cand_pre[j], gg[j]);
                        dpre[3 * n + j] = d_o * o[j] * (1.0 - o[j]);
                    }
                    outer_acc(grads.recurrent, n, &dpre, &step.h_prev);
                    gemv_t_acc(&mut dh_prev, w.recurrent, n, &dpre);
                }
            }
            outer_acc(grads.kernel, f, &dpre, x);
            for (b, d) in grads.bias.iter_mut().zip(&dpre) {
                *b += d;
            }
            dh = dh_prev;
        }
    }
}
