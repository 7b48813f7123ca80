//! Central finite-difference gradient checks in f64.

use coins_core::autograd::{Reduction, Tape, Var};
use coins_core::lm::{masked_nll, LanguageModel, LmConfig, MaskedSequence};
use coins_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared in absolute terms.
pub const FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

pub type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub f: OpFn,
}

/// Reduces the op output to a scalar by a fixed random contraction.
fn scalar_loss(tape: &mut Tape<f64>, leaves: &[Var], f: &OpFn, seed: u64) -> Result<Var> {
    let out = f(tape, leaves)?;
    if tape.value(out).is_scalar() {
        return Ok(out);
    }
    let shape = tape.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random_tensor(&shape, &mut rng));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn loss_value(inputs: &[Tensor<f64>], f: &OpFn, seed: u64) -> Result<f64> {
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let l = scalar_loss(&mut tape, &leaves, f, seed)?;
    Ok(tape.value(l).item())
}

/// Largest relative error over every input element.
pub fn check_op(case: &OpCase) -> Result<f64> {
    let seed = 99;
    let mut tape = Tape::new();
    let leaves: Vec<Var> = case.inputs.iter().map(|t| tape.param(t.clone())).collect();
    let l = scalar_loss(&mut tape, &leaves, &case.f, seed)?;
    tape.backward(l)?;
    let mut worst: f64 = 0.0;
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = tape
            .grad(*leaf)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(case.inputs[k].shape().to_vec()));
        for j in 0..case.inputs[k].numel() {
            let mut plus = case.inputs.clone();
            plus[k].data_mut()[j] += STEP;
            let mut minus = case.inputs.clone();
            minus[k].data_mut()[j] -= STEP;
            let numeric = (loss_value(&plus, &case.f, seed)? - loss_value(&minus, &case.f, seed)?) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    Ok(worst)
}

/// One case per differentiable op, with inputs away from kinks.
pub fn op_cases() -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let mut t = |s: &[usize]| random_tensor(s, &mut rng);
    vec![
        OpCase {
            name: "matmul",
            inputs: vec![t(&[3, 4]), t(&[4, 5])],
            f: Box::new(|tp, v| tp.matmul(v[0], v[1])),
        },
        OpCase {
            name: "add",
            inputs: vec![t(&[3, 4]), t(&[3, 4])],
            f: Box::new(|tp, v| tp.add(v[0], v[1])),
        },
        OpCase {
            name: "add_row_broadcast",
            inputs: vec![t(&[3, 4]), t(&[4])],
            f: Box::new(|tp, v| tp.add(v[0], v[1])),
        },
        OpCase {
            name: "mul",
            inputs: vec![t(&[3, 4]), t(&[3, 4])],
            f: Box::new(|tp, v| tp.mul(v[0], v[1])),
        },
        OpCase {
            name: "scale",
            inputs: vec![t(&[2, 3])],
            f: Box::new(|tp, v| Ok(tp.scale(v[0], -1.7))),
        },
        OpCase {
            name: "sum",
            inputs: vec![t(&[2, 3])],
            f: Box::new(|tp, v| {
                let sq = tp.mul(v[0], v[0])?;
                Ok(tp.sum(sq))
            }),
        },
        OpCase {
            name: "embedding",
            inputs: vec![t(&[5, 3])],
            f: Box::new(|tp, v| tp.embedding(v[0], &[4, 0, 4, 2])),
        },
        OpCase {
            name: "softmax_rows",
            inputs: vec![t(&[3, 4])],
            f: Box::new(|tp, v| tp.softmax(v[0], 1)),
        },
        OpCase {
            name: "softmax_cols",
            inputs: vec![t(&[3, 4])],
            f: Box::new(|tp, v| tp.softmax(v[0], 0)),
        },
        OpCase {
            name: "softmax_vector",
            inputs: vec![t(&[5])],
            f: Box::new(|tp, v| tp.softmax(v[0], 0)),
        },
        OpCase {
            name: "layer_norm",
            inputs: vec![t(&[3, 6]), t(&[6]), t(&[6])],
            f: Box::new(|tp, v| tp.layer_norm(v[0], v[1], v[2], 1e-5)),
        },
        OpCase {
            name: "gelu",
            inputs: vec![t(&[3, 4])],
            f: Box::new(|tp, v| Ok(tp.gelu(v[0]))),
        },
        OpCase {
            name: "dropout",
            inputs: vec![t(&[4, 5])],
            f: Box::new(|tp, v| tp.dropout(v[0], 0.3, &mut ChaCha8Rng::seed_from_u64(5))),
        },
        OpCase {
            name: "concat_rows",
            inputs: vec![t(&[2, 3]), t(&[1, 3])],
            f: Box::new(|tp, v| tp.concat(&[v[0], v[1]], 0)),
        },
        OpCase {
            name: "concat_cols",
            inputs: vec![t(&[2, 3]), t(&[2, 2])],
            f: Box::new(|tp, v| tp.concat(&[v[0], v[1]], 1)),
        },
        OpCase {
            name: "slice_rows",
            inputs: vec![t(&[4, 3])],
            f: Box::new(|tp, v| tp.slice(v[0], 0, 1, 2)),
        },
        OpCase {
            name: "slice_cols",
            inputs: vec![t(&[3, 5])],
            f: Box::new(|tp, v| tp.slice(v[0], 1, 2, 3)),
        },
        OpCase {
            name: "transpose",
            inputs: vec![t(&[2, 3])],
            f: Box::new(|tp, v| tp.transpose(v[0])),
        },
        OpCase {
            name: "causal_mask_softmax",
            inputs: vec![t(&[4, 4])],
            f: Box::new(|tp, v| {
                let m = tp.causal_mask(v[0])?;
                tp.softmax(m, 1)
            }),
        },
        OpCase {
            name: "cross_entropy_mean",
            inputs: vec![t(&[4, 6])],
            f: Box::new(|tp, v| {
                tp.cross_entropy_masked(v[0], &[1, 5, 0, 3], &[true, false, true, true], Reduction::Mean)
            }),
        },
        OpCase {
            name: "cross_entropy_sum",
            inputs: vec![t(&[3, 6])],
            f: Box::new(|tp, v| tp.cross_entropy_masked(v[0], &[2, 2, 4], &[true, true, true], Reduction::Sum)),
        },
    ]
}

fn model_loss(model: &LanguageModel<f64>, seq: &MaskedSequence, train: bool) -> Result<(f64, Vec<Tensor<f64>>)> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let l = masked_nll(model, &mut tape, &params, seq, train, &mut rng)?;
    let value = tape.value(l).item();
    tape.backward(l)?;
    Ok((value, params.grads(&tape).tensors))
}

/// Largest relative error over `per_tensor` sampled entries of every
/// parameter tensor of a freshly initialized model.
pub fn check_model(config: LmConfig, train: bool, per_tensor: usize) -> Result<f64> {
    let vocab = config.vocab as u32;
    let model = LanguageModel::<f64>::new_random(config, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ids: Vec<u32> = (0..7).map(|_| rng.gen_range(0..vocab)).collect();
    let seq = MaskedSequence { ids, target_start: 3 };
    let (_, analytic) = model_loss(&model, &seq, train)?;
    let mut worst: f64 = 0.0;
    for (k, g) in analytic.iter().enumerate() {
        for _ in 0..per_tensor {
            let j = rng.gen_range(0..g.numel());
            let mut plus = model.clone();
            plus.weights.tensors[k].data_mut()[j] += STEP;
            let mut minus = model.clone();
            minus.weights.tensors[k].data_mut()[j] -= STEP;
            let numeric = (model_loss(&plus, &seq, train)?.0 - model_loss(&minus, &seq, train)?.0) / (2.0 * STEP);
            worst = worst.max(rel_err(g.data()[j], numeric));
        }
    }
    Ok(worst)
}
