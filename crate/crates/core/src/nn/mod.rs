//! Small neural network engine for binary attention classification.
//!
//! Five architectures share one head: a single recurrent layer (SimpleRNN,
//! LSTM, GRU or bidirectional LSTM) or a two-stage convnet, followed by
//! dropout and one sigmoid output neuron. The convnet reads images as ink
//! (`1 - pixel`). Gradients are derived by hand for
//! every layer; see the finite-difference tests in `tests/`.

mod conv;
mod optim;
mod params;
mod recurrent;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use conv::{conv3x3_forward, global_avg_pool, maxpool2_forward, MapShape};
pub use optim::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{Param, Params};

use crate::error::{invalid, Error, Result};
use crate::rng::{self, StreamRng};
use recurrent::{sigmoid, CellGrads, CellWeights, DirectionTrace, Recurrence};

/// BCE probability clamp.
pub const PROB_EPS: f64 = 1e-7;

/// Allowed recurrent widths: 16, 24, ..., 128.
pub const HIDDEN_GRID: [usize; 15] = [16, 24, 32, 40, 48, 56, 64, 72, 80, 88, 96, 104, 112, 120, 128];
/// Allowed dropout rates.
pub const DROP_GRID: [f64; 5] = [0.5, 0.4, 0.3, 0.2, 0.1];

pub const CONV1_CHANNELS: usize = 8;
pub const CONV2_CHANNELS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    SimpleRnn,
    Lstm,
    Blstm,
    Gru,
    #[serde(rename = "cnn")]
    SmallConv,
}

impl Arch {
    pub const ALL: [Arch; 5] = [Arch::SimpleRnn, Arch::Lstm, Arch::Blstm, Arch::Gru, Arch::SmallConv];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::SimpleRnn => "simplernn",
            Arch::Lstm => "lstm",
            Arch::Blstm => "blstm",
            Arch::Gru => "gru",
            Arch::SmallConv => "cnn",
        }
    }

    pub fn parse(s: &str) -> Option<Arch> {
        Arch::ALL.into_iter().find(|a| a.as_str() == s)
    }

    pub fn is_recurrent(self) -> bool {
        self != Arch::SmallConv
    }

    fn cell(self) -> Option<Cell> {
        match self {
            Arch::SimpleRnn => Some(Cell::Simple),
            Arch::Lstm | Arch::Blstm => Some(Cell::Lstm),
            Arch::Gru => Some(Cell::Gru),
            Arch::SmallConv => None,
        }
    }

    fn directions(self) -> usize {
        if self == Arch::Blstm {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Cell {
    Simple,
    Gru,
    Lstm,
}

impl Cell {
    pub(crate) fn gates(self) -> usize {
        match self {
            Cell::Simple => 1,
            Cell::Gru => 3,
            Cell::Lstm => 4,
        }
    }
}

/// Activation of the recurrent candidate / cell output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputShape {
    Sequence { steps: usize, features: usize },
    Image { height: usize, width: usize, channels: usize },
}

impl InputShape {
    pub fn len(&self) -> usize {
        match *self {
            InputShape::Sequence { steps, features } => steps * features,
            InputShape::Image { height, width, channels } => height * width * channels,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    /// Recurrent width; ignored by the convnet.
    pub hidden_n: usize,
    pub drop_rate: f64,
    pub input_shape: InputShape,
    pub seed: u64,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match (self.arch.is_recurrent(), self.input_shape) {
            (true, InputShape::Sequence { steps, features }) => {
                if steps == 0 || features == 0 {
                    return Err(invalid("sequence input must be nonempty"));
                }
                if !HIDDEN_GRID.contains(&self.hidden_n) {
                    return Err(invalid(alloc::format!("hidden_n {} not in 16..=128 step 8", self.hidden_n)));
                }
            }
            (false, InputShape::Image { height, width, channels }) => {
                // two conv+pool stages must leave at least one cell
                if channels == 0 || height < 10 || width < 10 {
                    return Err(invalid("image input must be at least 10x10 with one channel"));
                }
            }
            (true, _) => return Err(invalid("recurrent architectures take sequence input")),
            (false, _) => return Err(invalid("the convnet takes image input")),
        }
        if !DROP_GRID.iter().any(|q| libm::fabs(q - self.drop_rate) < 1e-9) {
            return Err(invalid(alloc::format!("drop rate {} not in {{0.5, 0.4, 0.3, 0.2, 0.1}}", self.drop_rate)));
        }
        Ok(())
    }

    /// Width of the feature vector entering dropout and the head.
    pub fn feature_width(&self) -> usize {
        match self.arch {
            Arch::SmallConv => CONV2_CHANNELS,
            arch => arch.directions() * self.hidden_n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: crate::session::Label,
    pub p: f64,
}

/// Intermediate values of one sample's forward pass.
enum Trace {
    Recurrent(Vec<DirectionTrace>),
    Conv(ConvTrace),
}

struct ConvTrace {
    ink: Vec<f64>,
    a1: Vec<f64>,
    arg1: Vec<usize>,
    p1: Vec<f64>,
    a2: Vec<f64>,
    arg2: Vec<usize>,
    s1: MapShape,
    s2: MapShape,
    s3: MapShape,
}

struct Pass {
    logit: f64,
    /// features entering dropout
    features: Vec<f64>,
    trace: Trace,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Params,
    pub mode: Mode,
    rng: StreamRng,
}

/// Initialize a model: Glorot-uniform weights, zero biases, deterministic per seed.
pub fn init_model(spec: &ModelSpec) -> Result<Model> {
    Model::new(spec.clone())
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Model> {
        spec.validate()?;
        let mut init = rng::stream(spec.seed, "model/init", &[]);
        let mut list = Vec::new();
        match spec.arch {
            Arch::SmallConv => {
                let InputShape::Image { channels, .. } = spec.input_shape else { unreachable!() };
                let k2 = conv::KERNEL * conv::KERNEL;
                list.push(Param::glorot(
                    "conv1.w",
                    &[CONV1_CHANNELS, channels, 3, 3],
                    channels * k2,
                    CONV1_CHANNELS * k2,
                    &mut init,
                ));
                list.push(Param::zeros("conv1.b", &[CONV1_CHANNELS]));
                list.push(Param::glorot(
                    "conv2.w",
                    &[CONV2_CHANNELS, CONV1_CHANNELS, 3, 3],
                    CONV1_CHANNELS * k2,
                    CONV2_CHANNELS * k2,
                    &mut init,
                ));
                list.push(Param::zeros("conv2.b", &[CONV2_CHANNELS]));
            }
            arch => {
                let InputShape::Sequence { features, .. } = spec.input_shape else { unreachable!() };
                let n = spec.hidden_n;
                let g = arch.cell().expect("recurrent").gates();
                let prefixes: &[&str] = if arch.directions() == 2 { &["fwd", "bwd"] } else { &["rnn"] };
                for p in prefixes {
                    list.push(Param::glorot(&alloc::format!("{p}.kernel"), &[g * n, features], features, n, &mut init));
                    list.push(Param::glorot(&alloc::format!("{p}.recurrent"), &[g * n, n], n, n, &mut init));
                    list.push(Param::zeros(&alloc::format!("{p}.bias"), &[g * n]));
                }
            }
        }
        let width = spec.feature_width();
        list.push(Param::glorot("head.w", &[1, width], width, 1, &mut init));
        list.push(Param::zeros("head.b", &[1]));
        let rng = rng::stream(spec.seed, "model/dropout", &[]);
        Ok(Model { spec, params: Params { list }, mode: Mode::Infer, rng })
    }

    /// Replace parameters after checking the layout matches.
    pub fn with_params(spec: ModelSpec, params: Params) -> Result<Model> {
        let mut m = Model::new(spec)?;
        m.params.check_layout(&params)?;
        m.params = params;
        Ok(m)
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Reseed the dropout stream.
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.rng = rng::stream(seed, "model/dropout", &[]);
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        let expected = self.spec.input_shape.len();
        if input.len() != expected {
            return Err(Error::ShapeMismatch { expected, got: input.len() });
        }
        Ok(())
    }

    fn draw_mask(&mut self) -> Option<Vec<f64>> {
        if self.mode == Mode::Infer {
            return None;
        }
        let q = self.spec.drop_rate;
        let keep = 1.0 / (1.0 - q);
        let width = self.spec.feature_width();
        Some((0..width).map(|_| if self.rng.random::<f64>() < q { 0.0 } else { keep }).collect())
    }

    fn recurrence(&self) -> Recurrence {
        let InputShape::Sequence { steps, features } = self.spec.input_shape else { unreachable!() };
        Recurrence {
            cell: self.spec.arch.cell().expect("recurrent"),
            act: self.spec.activation,
            n: self.spec.hidden_n,
            features,
            steps,
        }
    }

    fn cell_weights(&self, dir: usize) -> CellWeights<'_> {
        let base = dir * 3;
        CellWeights {
            kernel: &self.params.list[base].data,
            recurrent: &self.params.list[base + 1].data,
            bias: &self.params.list[base + 2].data,
        }
    }

    fn head(&self) -> (&[f64], f64) {
        let l = &self.params.list;
        (&l[l.len() - 2].data, l[l.len() - 1].data[0])
    }

    fn run(&self, input: &[f64], mask: Option<&[f64]>, keep_trace: bool) -> Pass {
        let (features, trace) = match self.spec.arch {
            Arch::SmallConv => self.conv_features(input),
            arch => {
                let rec = self.recurrence();
                let mut feats = Vec::with_capacity(self.spec.feature_width());
                let mut traces = Vec::new();
                for dir in 0..arch.directions() {
                    let t = rec.forward(&self.cell_weights(dir), input, dir == 1, keep_trace);
                    feats.extend_from_slice(&t.h_last);
                    traces.push(t);
                }
                (feats, Trace::Recurrent(traces))
            }
        };
        let (w, b) = self.head();
        let mut logit = b;
        for (j, (&h, &wj)) in features.iter().zip(w).enumerate() {
            let m = mask.map_or(1.0, |m| m[j]);
            logit += wj * h * m;
        }
        Pass { logit, features, trace }
    }

    fn conv_features(&self, input: &[f64]) -> (Vec<f64>, Trace) {
        let InputShape::Image { height, width, channels } = self.spec.input_shape else { unreachable!() };
        let l = &self.params.list;
        let s1 = MapShape { channels, height, width };
        // ink intensity: the white background maps to zero
        let ink: Vec<f64> = input.iter().map(|v| 1.0 - v).collect();
        let mut a1 = conv::conv3x3_forward(&ink, s1, &l[0].data, &l[1].data, CONV1_CHANNELS);
        a1.iter_mut().for_each(|v| *v = v.max(0.0));
        let c1 = s1.after_conv(CONV1_CHANNELS);
        let (p1, arg1) = conv::maxpool2_forward(&a1, c1);
        let s2 = c1.after_pool();
        let mut a2 = conv::conv3x3_forward(&p1, s2, &l[2].data, &l[3].data, CONV2_CHANNELS);
        a2.iter_mut().for_each(|v| *v = v.max(0.0));
        let c2 = s2.after_conv(CONV2_CHANNELS);
        let (p2, arg2) = conv::maxpool2_forward(&a2, c2);
        let s3 = c2.after_pool();
        let g = conv::global_avg_pool(&p2, s3);
        (g, Trace::Conv(ConvTrace { ink, a1, arg1, p1, a2, arg2, s1, s2, s3 }))
    }

    /// Backpropagate dL/dlogit of one pass into `grads`.
    fn backward(&self, input: &[f64], pass: &Pass, mask: Option<&[f64]>, dlogit: f64, grads: &mut Params) {
        let (w, _) = self.head();
        let width = pass.features.len();
        let nparams = grads.list.len();
        grads.list[nparams - 1].data[0] += dlogit;
        let mut dfeat = vec![0.0; width];
        {
            let gw = &mut grads.list[nparams - 2].data;
            for j in 0..width {
                let m = mask.map_or(1.0, |m| m[j]);
                gw[j] += dlogit * pass.features[j] * m;
                dfeat[j] = dlogit * w[j] * m;
            }
        }
        match &pass.trace {
            Trace::Recurrent(traces) => {
                let rec = self.recurrence();
                let n = self.spec.hidden_n;
                for (dir, t) in traces.iter().enumerate() {
                    let (head, rest) = grads.list[dir * 3..].split_at_mut(1);
                    let (rec_g, bias_g) = rest.split_at_mut(1);
                    let mut cg = CellGrads {
                        kernel: &mut head[0].data,
                        recurrent: &mut rec_g[0].data,
                        bias: &mut bias_g[0].data,
                    };
                    rec.backward(&self.cell_weights(dir), input, t, &dfeat[dir * n..(dir + 1) * n], &mut cg);
                }
            }
            Trace::Conv(ct) => {
                let l = &self.params.list;
                let plane3 = ct.s3.height * ct.s3.width;
                let dp2: Vec<f64> =
                    dfeat.iter().flat_map(|&d| core::iter::repeat_n(d / plane3 as f64, plane3)).collect();
                let mut da2 = conv::maxpool2_backward(&dp2, &ct.arg2, ct.a2.len());
                for (d, a) in da2.iter_mut().zip(&ct.a2) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
                let mut dp1 = vec![0.0; ct.p1.len()];
                {
                    let (g01, g23) = grads.list.split_at_mut(2);
                    let (w2, b2) = g23.split_at_mut(1);
                    conv::conv3x3_backward(
                        &ct.p1,
                        ct.s2,
                        &l[2].data,
                        CONV2_CHANNELS,
                        &da2,
                        &mut w2[0].data,
                        &mut b2[0].data,
                        Some(&mut dp1),
                    );
                    let mut da1 = conv::maxpool2_backward(&dp1, &ct.arg1, ct.a1.len());
                    for (d, a) in da1.iter_mut().zip(&ct.a1) {
                        if *a <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    let (w1, b1) = g01.split_at_mut(1);
                    conv::conv3x3_backward(
                        &ct.ink,
                        ct.s1,
                        &l[0].data,
                        CONV1_CHANNELS,
                        &da1,
                        &mut w1[0].data,
                        &mut b1[0].data,
                        None,
                    );
                }
            }
        }
    }

    /// Output probabilities, clamped into `[PROB_EPS, 1 - PROB_EPS]`. In
    /// train mode a fresh inverted-dropout mask is drawn per sample.
    pub fn forward(&mut self, batch: &[&[f64]]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(batch.len());
        for input in batch {
            self.check_input(input)?;
            let mask = self.draw_mask();
            let pass = self.run(input, mask.as_deref(), false);
            out.push(clamp_prob(sigmoid(pass.logit)));
        }
        Ok(out)
    }

    /// Dropout-free probability of one sample.
    pub fn probability(&self, input: &[f64]) -> Result<f64> {
        self.check_input(input)?;
        Ok(clamp_prob(sigmoid(self.run(input, None, false).logit)))
    }

    /// Features entering the head, after dropout in train mode.
    pub fn head_input(&mut self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mask = self.draw_mask();
        let pass = self.run(input, None, false);
        Ok(match mask {
            Some(m) => pass.features.iter().zip(&m).map(|(f, k)| f * k).collect(),
            None => pass.features,
        })
    }

    /// Mean binary cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grads(&mut self, batch: &[&[f64]], labels: &[f64]) -> Result<(f64, Params)> {
        check_labels(batch.len(), labels)?;
        let masks = self.draw_masks(batch.len());
        self.loss_and_grads_with_masks(batch, labels, &masks, 1.0 / batch.len() as f64)
    }

    /// The dropout masks the next `count` training samples would use, in order.
    /// Empty masks (`None`) in infer mode.
    pub fn draw_masks(&mut self, count: usize) -> Vec<Option<Vec<f64>>> {
        (0..count).map(|_| self.draw_mask()).collect()
    }

    /// Summed cross-entropy and gradient with explicit masks, both multiplied by `scale`.
    pub fn loss_and_grads_with_masks(
        &self,
        batch: &[&[f64]],
        labels: &[f64],
        masks: &[Option<Vec<f64>>],
        scale: f64,
    ) -> Result<(f64, Params)> {
        check_labels(batch.len(), labels)?;
        if masks.len() != batch.len() {
            return Err(Error::ShapeMismatch { expected: batch.len(), got: masks.len() });
        }
        let width = self.spec.feature_width();
        if let Some(m) = masks.iter().flatten().find(|m| m.len() != width) {
            return Err(Error::ShapeMismatch { expected: width, got: m.len() });
        }
        let mut grads = self.params.zeros_like();
        let mut loss = 0.0;
        for ((input, &y), mask) in batch.iter().zip(labels).zip(masks) {
            self.check_input(input)?;
            let pass = self.run(input, mask.as_deref(), true);
            let p = sigmoid(pass.logit);
            loss += bce(p, y);
            // clamped region has zero slope
            let dlogit = if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) { (p - y) * scale } else { 0.0 };
            if dlogit != 0.0 {
                self.backward(input, &pass, mask.as_deref(), dlogit, &mut grads);
            }
        }
        Ok((loss * scale, grads))
    }

    /// Mean binary cross-entropy without gradients.
    pub fn loss(&mut self, batch: &[&[f64]], labels: &[f64]) -> Result<f64> {
        check_labels(batch.len(), labels)?;
        let probs = self.forward(batch)?;
        Ok(probs.iter().zip(labels).map(|(&p, &y)| bce(p, y)).sum::<f64>() / batch.len() as f64)
    }

    /// Label 1 iff p > 0.5; always dropout-free.
    pub fn predict(&self, input: &[f64]) -> Result<Prediction> {
        let p = self.probability(input)?;
        let label = if p > 0.5 { crate::session::Label::Attended } else { crate::session::Label::Ignored };
        Ok(Prediction { label, p })
    }
}

fn check_labels(n: usize, labels: &[f64]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::ShapeMismatch { expected: n, got: labels.len() });
    }
    if n == 0 {
        return Err(Error::EmptySet("batch"));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(invalid("labels must be 0 or 1"));
    }
    Ok(())
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross-entropy of one prediction with clamping.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p))
}

/// Recurrent-cell parameter count for one direction.
pub fn cell_param_count(arch: Arch, features: usize, n: usize) -> usize {
    arch.cell().map_or(0, |c| c.gates() * ((features + n) * n + n))
}

impl core::fmt::Display for Arch {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Describe a spec for logs.
pub fn describe(spec: &ModelSpec) -> String {
    alloc::format!("{} n={} q={} seed={}", spec.arch, spec.hidden_n, spec.drop_rate, spec.seed)
}
