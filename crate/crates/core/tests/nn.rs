use cursor_attn_core::nn::{
    adam_step, bce, cell_param_count, init_model, Activation, AdamState, Arch, InputShape, Mode, Model, ModelSpec,
    Params,
};
use cursor_attn_core::session::Label;
use cursor_attn_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;

fn spec(arch: Arch, activation: Activation, seed: u64) -> ModelSpec {
    let input_shape = if arch.is_recurrent() {
        InputShape::Sequence { steps: 5, features: 2 }
    } else {
        InputShape::Image { height: 16, width: 16, channels: 3 }
    };
    ModelSpec { arch, hidden_n: 16, drop_rate: 0.2, input_shape, seed, activation }
}

fn random_batch(shape: InputShape, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| match shape {
            InputShape::Sequence { .. } => (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            InputShape::Image { .. } => (0..shape.len()).map(|_| rng.random_range(0.0..1.0)).collect(),
        })
        .collect()
}

/// Central-difference oracle over every parameter; returns the worst relative error
/// among gradients of magnitude at least 1e-6.
fn max_fd_error(model: &Model, batch: &[Vec<f64>], labels: &[f64]) -> f64 {
    let refs: Vec<&[f64]> = batch.iter().map(Vec::as_slice).collect();
    let (_, grads) = model.clone().loss_and_grads(&refs, labels).unwrap();
    let total = model.params.count();
    let mut worst: f64 = 0.0;
    for i in 0..total {
        let base = model.params.flat_get(i);
        let mut plus = model.clone();
        plus.params.flat_set(i, base + FD_STEP);
        let mut minus = model.clone();
        minus.params.flat_set(i, base - FD_STEP);
        // clones share the dropout stream state, so masks match
        let lp = plus.loss(&refs, labels).unwrap();
        let lm = minus.loss(&refs, labels).unwrap();
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        let analytic = grads.flat_get(i);
        let denom = analytic.abs().max(numeric.abs());
        // below 1e-8 central differences only resolve ~1e-11 absolute
        if denom < 1e-8 {
            assert!((analytic - numeric).abs() < 1e-10, "param {i}: analytic {analytic:e} numeric {numeric:e}");
            continue;
        }
        let tol = if denom < 1e-6 { 1e-3 } else { 1e-4 };
        let rel = (analytic - numeric).abs() / denom;
        assert!(rel < tol, "param {i}: analytic {analytic:e} numeric {numeric:e} rel {rel:e}");
        if denom >= 1e-6 {
            worst = worst.max(rel);
        }
    }
    worst
}

fn check_arch(arch: Arch, activation: Activation, mode: Mode) {
    let s = spec(arch, activation, 17);
    let mut model = init_model(&s).unwrap();
    // nonzero biases exercise every path
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in model.params.list.iter_mut().filter(|p| p.name.ends_with('b') || p.name.ends_with("bias")) {
        p.data.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
    }
    model.set_mode(mode);
    let batch = random_batch(s.input_shape, 3, 9);
    let worst = max_fd_error(&model, &batch, &[1.0, 0.0, 1.0]);
    assert!(worst < 1e-4, "{arch:?} worst {worst:e}");
}

#[test]
fn gradients_match_finite_differences_relu() {
    for arch in Arch::ALL {
        check_arch(arch, Activation::Relu, Mode::Infer);
    }
}

#[test]
fn gradients_match_finite_differences_tanh() {
    for arch in [Arch::SimpleRnn, Arch::Lstm, Arch::Blstm, Arch::Gru] {
        check_arch(arch, Activation::Tanh, Mode::Infer);
    }
}

#[test]
fn gradients_include_dropout_mask() {
    for arch in Arch::ALL {
        check_arch(arch, Activation::Relu, Mode::Train);
    }
}

#[test]
fn gru_parameter_count() {
    assert_eq!(cell_param_count(Arch::Gru, 2, 32), 3360);
    let m = init_model(&ModelSpec {
        arch: Arch::Gru,
        hidden_n: 32,
        drop_rate: 0.3,
        input_shape: InputShape::Sequence { steps: 50, features: 2 },
        seed: 1,
        activation: Activation::Relu,
    })
    .unwrap();
    assert_eq!(m.params.count(), 3360 + 33);
    let lstm = init_model(&ModelSpec { arch: Arch::Blstm, ..m.spec.clone() }).unwrap();
    assert_eq!(lstm.params.count(), 2 * 4 * (34 * 32 + 32) + 65);
}

#[test]
fn init_is_deterministic_and_validated() {
    let s = spec(Arch::Lstm, Activation::Relu, 4);
    assert_eq!(init_model(&s).unwrap().params, init_model(&s).unwrap().params);
    assert_ne!(init_model(&s).unwrap().params, init_model(&ModelSpec { seed: 5, ..s.clone() }).unwrap().params);
    let bad = ModelSpec { hidden_n: 17, ..s.clone() };
    assert!(matches!(init_model(&bad), Err(Error::InvalidValue(_))));
    let bad = ModelSpec { drop_rate: 0.25, ..s.clone() };
    assert!(matches!(init_model(&bad), Err(Error::InvalidValue(_))));
    let bad = ModelSpec { arch: Arch::SmallConv, ..s };
    assert!(matches!(init_model(&bad), Err(Error::InvalidValue(_))));
    // biases start at zero and Glorot bounds hold
    let m = init_model(&spec(Arch::Gru, Activation::Relu, 1)).unwrap();
    let kernel = m.params.get("rnn.kernel").unwrap();
    let limit = (6.0f64 / (2 + 16) as f64).sqrt();
    assert!(kernel.data.iter().all(|v| v.abs() <= limit));
    assert!(m.params.get("rnn.bias").unwrap().data.iter().all(|&v| v == 0.0));
}

#[test]
fn zero_parameters_give_one_half() {
    for arch in Arch::ALL {
        let mut m = init_model(&spec(arch, Activation::Relu, 2)).unwrap();
        m.params.fill(0.0);
        let batch = random_batch(m.spec.input_shape, 2, 3);
        let refs: Vec<&[f64]> = batch.iter().map(Vec::as_slice).collect();
        assert_eq!(m.forward(&refs).unwrap(), vec![0.5, 0.5]);
        let pred = m.predict(&batch[0]).unwrap();
        assert_eq!(pred.p, 0.5);
        assert_eq!(pred.label, Label::Ignored);
        let loss = m.loss(&refs, &[1.0, 0.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }
}

#[test]
fn inference_is_repeatable_and_shapes_checked() {
    let mut m = init_model(&spec(Arch::Blstm, Activation::Relu, 8)).unwrap();
    let batch = random_batch(m.spec.input_shape, 4, 1);
    let refs: Vec<&[f64]> = batch.iter().map(Vec::as_slice).collect();
    assert_eq!(m.forward(&refs).unwrap(), m.forward(&refs).unwrap());
    assert_eq!(m.head_input(&batch[0]).unwrap().len(), 32);
    let short = [0.0; 9];
    assert_eq!(m.forward(&[&short]), Err(Error::ShapeMismatch { expected: 10, got: 9 }));
    assert!(matches!(m.loss_and_grads(&refs, &[1.0]), Err(Error::ShapeMismatch { .. })));
    assert!(matches!(m.loss_and_grads(&refs, &[1.0, 0.0, 2.0, 1.0]), Err(Error::InvalidValue(_))));
}

#[test]
fn threshold_is_strict() {
    let mut m = init_model(&spec(Arch::Gru, Activation::Relu, 2)).unwrap();
    m.params.fill(0.0);
    let x = vec![0.0; 10];
    // logit(0.51)
    let b = (0.51f64 / 0.49).ln();
    m.params.get_mut("head.b").unwrap().data[0] = b;
    let pred = m.predict(&x).unwrap();
    assert!((pred.p - 0.51).abs() < 1e-12);
    assert_eq!(pred.label, Label::Attended);
}

#[test]
fn blstm_reversal_swaps_halves() {
    let m = init_model(&spec(Arch::Blstm, Activation::Tanh, 12)).unwrap();
    let mut mirrored = m.clone();
    // swap forward and backward weights
    for suffix in ["kernel", "recurrent", "bias"] {
        let f = m.params.get(&format!("fwd.{suffix}")).unwrap().data.clone();
        let b = m.params.get(&format!("bwd.{suffix}")).unwrap().data.clone();
        mirrored.params.get_mut(&format!("fwd.{suffix}")).unwrap().data = b;
        mirrored.params.get_mut(&format!("bwd.{suffix}")).unwrap().data = f;
    }
    let x = random_batch(m.spec.input_shape, 1, 4).remove(0);
    let reversed: Vec<f64> = x.chunks(2).rev().flatten().copied().collect();
    let mut a = m.clone();
    let mut b = mirrored;
    let ha = a.head_input(&x).unwrap();
    let hb = b.head_input(&reversed).unwrap();
    assert_eq!(&ha[..16], &hb[16..]);
    assert_eq!(&ha[16..], &hb[..16]);
    // a plain reversal with the same weights changes the output
    assert_ne!(ha, a.head_input(&reversed).unwrap());
}

#[test]
fn dropout_is_unbiased() {
    for (q, tol) in [(0.2, 0.02), (0.5, 0.02)] {
        let mut m = init_model(&ModelSpec { drop_rate: q, ..spec(Arch::Lstm, Activation::Tanh, 3) }).unwrap();
        let x = random_batch(m.spec.input_shape, 1, 2).remove(0);
        let reference = m.head_input(&x).unwrap();
        m.set_mode(Mode::Train);
        let draws = 10_000;
        let mut mean = vec![0.0; reference.len()];
        for _ in 0..draws {
            for (acc, v) in mean.iter_mut().zip(m.head_input(&x).unwrap()) {
                *acc += v / draws as f64;
            }
        }
        if q < 0.5 {
            for (a, r) in mean.iter().zip(&reference) {
                assert!((a - r).abs() <= tol * r.abs() + 1e-12, "{a} vs {r}");
            }
        }
        let (sa, sr): (f64, f64) = (mean.iter().sum(), reference.iter().sum());
        assert!((sa - sr).abs() <= tol * sr.abs());
    }
}

#[test]
fn outputs_stay_inside_unit_interval() {
    let mut m = init_model(&spec(Arch::SimpleRnn, Activation::Relu, 1)).unwrap();
    m.params.get_mut("head.b").unwrap().data[0] = 80.0;
    let x = vec![1.0; 10];
    let p = m.probability(&x).unwrap();
    assert!(p > 0.0 && p < 1.0);
    m.params.get_mut("head.b").unwrap().data[0] = -80.0;
    let p = m.probability(&x).unwrap();
    assert!(p > 0.0 && p < 1.0);
    // saturated at the correct label: tiny but finite loss
    let loss = m.loss(&[&x], &[0.0]).unwrap();
    assert!(loss.is_finite() && loss < 2e-7);
    assert!((bce(1e-7, 0.0) - 1.000_000_05e-7).abs() < 1e-12);
}

#[test]
fn adam_first_step_closed_form() {
    let mut m = init_model(&spec(Arch::Gru, Activation::Relu, 1)).unwrap();
    let before = m.params.clone();
    let mut state = AdamState::new(&m.params, 1e-3).unwrap();
    let zero = m.params.zeros_like();
    adam_step(&mut state, &mut m, &zero).unwrap();
    assert_eq!(m.params, before);
    assert_eq!(state.t, 1);

    let mut ones: Params = m.params.zeros_like();
    ones.fill(1.0);
    let mut state = AdamState::new(&m.params, 1e-3).unwrap();
    adam_step(&mut state, &mut m, &ones).unwrap();
    let expected = 1e-3 / (1.0 + 1e-8);
    for (a, b) in before.list.iter().zip(&m.params.list) {
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!(((x - y) - expected).abs() < 1e-15);
        }
    }
    assert!(state.v.iter().flatten().all(|&v| v >= 0.0));

    let other = init_model(&spec(Arch::Lstm, Activation::Relu, 1)).unwrap();
    assert!(matches!(adam_step(&mut state, &mut m, &other.params.zeros_like()), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn small_conv_on_full_resolution_input() {
    let s = ModelSpec {
        arch: Arch::SmallConv,
        hidden_n: 16,
        drop_rate: 0.1,
        input_shape: InputShape::Image { height: 90, width: 128, channels: 3 },
        seed: 3,
        activation: Activation::Relu,
    };
    let m = init_model(&s).unwrap();
    assert_eq!(m.params.count(), 8 * 27 + 8 + 16 * 72 + 16 + 17);
    let x = vec![0.5; 90 * 128 * 3];
    let p = m.probability(&x).unwrap();
    assert!(p > 0.0 && p < 1.0);
}
