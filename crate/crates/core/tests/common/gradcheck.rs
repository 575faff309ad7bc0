//! Central finite-difference checks of tape gradients.

use dams::corpus::SynthSpec;
use dams::experiment::Workbench;
use dams::nn::BlockConfig;
use dams::pretrain::{pretrain_gradients, Pretrainer, TrainConfig};
use dams::tensor::{AttentionMask, Gradients, Group, ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor, about 100x the difference round-off of an O(1) loss at
/// this step, so a gradient that vanishes exactly does not turn noise into error.
pub const FLOOR: f64 = 1e-6;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a - n| / max(|a|, |n|)` with Euclidean norms over the checked coordinates.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(FLOOR)
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub error: f64,
    pub coordinates: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error <= TOLERANCE
    }
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

/// One primitive under test: random inputs become parameters, `build`
/// reduces the primitive's output to a scalar.
pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    /// Tape gradient over true derivative: −1 behind one reversal.
    pub sign: f64,
    /// Run on a training tape whose dropout masks come from this seed.
    pub dropout_seed: Option<u64>,
    pub build: Build,
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| r.random_range(-1.0..1.0) as Real).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `sum(v ∘ W)` for a fixed pseudo-random `W`, so every output element matters.
pub fn project(tape: &mut Tape, v: Var, salt: u64) -> Var {
    let w = random_tensor(tape.shape(v), 1000 + salt);
    let w = tape.constant(w);
    let m = tape.mul(v, w);
    tape.sum(m)
}

fn case(name: &'static str, shapes: &[&[usize]], build: impl Fn(&mut Tape, &[Var]) -> Var + 'static) -> Case {
    let inputs = shapes.iter().enumerate().map(|(i, s)| random_tensor(s, 17 * (i as u64 + 1) + name.len() as u64)).collect();
    Case { name, inputs, sign: 1.0, dropout_seed: None, build: Box::new(build) }
}

pub fn primitive_cases() -> Vec<Case> {
    let mut cases = vec![
        case("matmul", &[&[3, 4], &[4, 5]], |t, v| {
            let y = t.matmul(v[0], v[1], false);
            project(t, y, 1)
        }),
        case("matmul_transposed", &[&[3, 4], &[5, 4]], |t, v| {
            let y = t.matmul(v[0], v[1], true);
            project(t, y, 2)
        }),
        case("linear", &[&[2, 3, 4], &[4, 2], &[2]], |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]));
            project(t, y, 3)
        }),
        case("linear_no_bias", &[&[3, 4], &[4, 2]], |t, v| {
            let y = t.linear(v[0], v[1], None);
            project(t, y, 4)
        }),
        case("add", &[&[3, 4], &[3, 4]], |t, v| {
            let y = t.add(v[0], v[1]);
            let y = t.mul(y, y);
            project(t, y, 5)
        }),
        case("mul", &[&[3, 4], &[3, 4]], |t, v| {
            let y = t.mul(v[0], v[1]);
            project(t, y, 6)
        }),
        case("scale", &[&[3, 4]], |t, v| {
            let y = t.scale(v[0], -2.5);
            project(t, y, 7)
        }),
        case("gelu", &[&[3, 5]], |t, v| {
            let x = t.scale(v[0], 3.0);
            let y = t.gelu(x);
            project(t, y, 8)
        }),
        case("sigmoid", &[&[3, 5]], |t, v| {
            let x = t.scale(v[0], 3.0);
            let y = t.sigmoid(x);
            project(t, y, 9)
        }),
        case("softmax", &[&[3, 5]], |t, v| {
            let x = t.scale(v[0], 2.0);
            let y = t.softmax(x).unwrap();
            project(t, y, 10)
        }),
        case("layer_norm", &[&[3, 6], &[6], &[6]], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2]);
            project(t, y, 11)
        }),
        case("embedding", &[&[6, 3]], |t, v| {
            let y = t.embedding(v[0], &[1, 4, 1, 0]).unwrap();
            project(t, y, 12)
        }),
        case("gather_rows", &[&[4, 3]], |t, v| {
            let y = t.gather_rows(v[0], &[Some(2), None, Some(0), Some(2)]);
            project(t, y, 13)
        }),
        case("attention", &[&[6, 4], &[8, 4], &[8, 4]], |t, v| {
            let mask = AttentionMask {
                batch: 2,
                q_len: 3,
                k_len: 4,
                key_valid: vec![true, true, false, true, true, false, false, false],
                causal: false,
            };
            let y = t.attention(v[0], v[1], v[2], 2, mask);
            project(t, y, 14)
        }),
        case("attention_causal", &[&[6, 4], &[6, 4], &[6, 4]], |t, v| {
            let mask = AttentionMask { batch: 2, q_len: 3, k_len: 3, key_valid: vec![true; 6], causal: true };
            let y = t.attention(v[0], v[1], v[2], 2, mask);
            project(t, y, 15)
        }),
        case("weighted_nll", &[&[4, 5]], |t, v| {
            let x = t.scale(v[0], 2.0);
            t.weighted_nll(x, &[1, 0, 4, 2], &[0.5, 0.0, 1.5, 1.0]).unwrap()
        }),
        case("cross_entropy", &[&[4, 5]], |t, v| {
            let x = t.scale(v[0], 2.0);
            t.cross_entropy(x, &[3, 3, 0, 1], &[false, true, false, false]).unwrap()
        }),
        case("bce_with_logits", &[&[5]], |t, v| {
            let x = t.scale(v[0], 3.0);
            t.bce_with_logits(x, &[0.0, 1.0, 1.0, 0.0, 0.3]).unwrap()
        }),
        case("sum", &[&[3, 4]], |t, v| {
            let y = t.mul(v[0], v[0]);
            t.sum(y)
        }),
        case("mean", &[&[3, 4]], |t, v| {
            let y = t.gelu(v[0]);
            t.mean(y)
        }),
        case("reshape", &[&[2, 6]], |t, v| {
            let y = t.reshape(v[0], &[3, 4]);
            project(t, y, 16)
        }),
        case("grad_reverse_twice", &[&[3, 4]], |t, v| {
            let y = t.grad_reverse(v[0]);
            let y = t.grad_reverse(y);
            project(t, y, 18)
        }),
    ];
    let mut reverse = case("grad_reverse", &[&[3, 4]], |t, v| {
        let y = t.grad_reverse(v[0]);
        project(t, y, 17)
    });
    reverse.sign = -1.0;
    cases.push(reverse);
    let mut dropout = case("dropout", &[&[4, 5]], |t, v| {
        let y = t.dropout(v[0]);
        project(t, y, 19)
    });
    dropout.dropout_seed = Some(7);
    cases.push(dropout);
    cases
}

fn evaluate(case: &Case, store: &ParamStore, ids: &[ParamId]) -> (f64, Gradients) {
    let mut rng = ChaCha8Rng::seed_from_u64(case.dropout_seed.unwrap_or(0));
    let mut tape = match case.dropout_seed {
        Some(_) => Tape::training(store, 0.3, &mut rng),
        None => Tape::new(store),
    };
    let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
    let loss = (case.build)(&mut tape, &vars);
    (tape.scalar(loss) as f64, tape.backward(loss).unwrap())
}

fn perturbed(store: &mut ParamStore, id: ParamId, i: usize, delta: f64, f: impl Fn(&ParamStore) -> f64) -> f64 {
    let original = store.get(id).data()[i];
    store.get_mut(id).data_mut()[i] = original + delta as Real;
    let v = f(store);
    store.get_mut(id).data_mut()[i] = original;
    v
}

/// Every coordinate of every input of `case`.
pub fn check_case(case: &Case) -> CheckResult {
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> =
        case.inputs.iter().enumerate().map(|(i, t)| store.add(format!("x{i}"), Group::Embedding, t.clone())).collect();
    let (_, grads) = evaluate(case, &store, &ids);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for &id in &ids {
        let g = grads.get(id, &store);
        for i in 0..store.get(id).len() {
            let f = |s: &ParamStore| evaluate(case, s, &ids).0;
            let up = perturbed(&mut store, id, i, STEP, f);
            let down = perturbed(&mut store, id, i, -STEP, f);
            analytic.push(g.data()[i] as f64);
            numeric.push(case.sign * (up - down) / (2.0 * STEP));
        }
    }
    CheckResult { name: case.name.to_string(), error: relative_error(&analytic, &numeric), coordinates: analytic.len() }
}

pub fn check_primitives() -> Vec<CheckResult> {
    primitive_cases().iter().map(check_case).collect()
}

fn is_critic(g: Group) -> bool {
    matches!(g, Group::CriticEncoder | Group::CriticDecoder)
}

/// The combined pretraining loss with both critics on a 2-layer, d = 8 model.
/// Behind the reversal the tape gradient is `∂task − α ∂critics`; the critics
/// themselves get `+α ∂critics`. Both parts are differenced separately.
/// Checks up to `per_param` sampled coordinates of every parameter tensor.
pub fn check_full_loss(per_param: usize) -> Vec<CheckResult> {
    let spec = SynthSpec { dialogues: 8, shorttexts: 8, articles: 8, finetune: 2, eval: 2, seed: 5 };
    let bench = Workbench::synthetic(&spec).unwrap();
    let block = BlockConfig { layers: 2, heads: 2, model_dim: 8, ffn_dim: 16, max_positions: 64, dropout: 0.1 };
    let cfg = TrainConfig { batch_size: 2, warmup: 2, alpha: 0.1, seed: 4, ..Default::default() };
    let model = bench.fresh_model(block, 3).unwrap();
    let mut run = Pretrainer::new(model, bench.vocab.clone(), bench.encoded.clone(), cfg.clone()).unwrap();
    // move away from the initialisation so no parameter sits at a special point
    for _ in 0..3 {
        run.step().unwrap();
    }
    let batch = run.next_batch();
    let mut model = run.model;
    let (grads, report) = pretrain_gradients(&model, &batch, &cfg).unwrap();
    assert!(report.skipped.is_empty(), "both critics must take part: {:?}", report.skipped);

    let parts = |m: &dams::nn::DamsModel| {
        let (_, r) = pretrain_gradients(m, &batch, &cfg).unwrap();
        let l = r.losses;
        (l.l_rec + l.l_gen + l.l_summ, l.l_de + l.l_dg)
    };
    let mut pick = ChaCha8Rng::seed_from_u64(11);
    let ids: Vec<ParamId> = model.params().ids().collect();
    let mut results = Vec::new();
    for id in ids {
        let store = model.params();
        let (name, group, len) = (store.name(id).to_string(), store.group(id), store.get(id).len());
        let g = grads.get(id, store);
        let coords = if len <= per_param { (0..len).collect() } else { sample(&mut pick, len, per_param).into_vec() };
        let sign = if is_critic(group) { 1.0 } else { -1.0 };
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for &i in &coords {
            let original = model.params().get(id).data()[i];
            model.params_mut().get_mut(id).data_mut()[i] = original + STEP as Real;
            let (tu, au) = parts(&model);
            model.params_mut().get_mut(id).data_mut()[i] = original - STEP as Real;
            let (td, ad) = parts(&model);
            model.params_mut().get_mut(id).data_mut()[i] = original;
            let task = (tu - td) as f64 / (2.0 * STEP);
            let adv = (au - ad) as f64 / (2.0 * STEP);
            analytic.push(g.data()[i] as f64);
            numeric.push(task + cfg.alpha as f64 * sign * adv);
        }
        results.push(CheckResult { name, error: relative_error(&analytic, &numeric), coordinates: coords.len() });
    }
    results
}
