//! Independent re-derivations of library behaviour: brute-force ROUGE,
//! noise and mixing statistics, loss arithmetic and resume equality.

use dams::corpus::{noise_unit, MixedStream, NoiseConfig, Source, SynthSpec, MASK};
use dams::eval::rouge;
use dams::experiment::Workbench;
use dams::nn::BlockConfig;
use dams::pretrain::{
    decode_checkpoint, encode_checkpoint, pretrain_gradients, LossBreakdown, Pretrainer, TrainConfig, TrainingState,
};
use dams::rng;
use dams::tensor::Group;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------- ROUGE ----------

fn grams(tokens: &[&str], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].iter().map(|s| s.to_string()).collect()).collect()
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn f1(overlap: usize, cand: usize, refr: usize) -> f64 {
    if refr == 0 || cand == 0 || overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand as f64;
    let r = overlap as f64 / refr as f64;
    2.0 * p * r / (p + r)
}

/// Clipped n-gram overlap by linear scans over every distinct candidate n-gram.
pub fn brute_rouge_n(cand: &[&str], refr: &[&str], n: usize) -> f64 {
    let (c, r) = (grams(cand, n), grams(refr, n));
    let mut seen: Vec<&Vec<String>> = Vec::new();
    let mut overlap = 0;
    for g in &c {
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        overlap += count(&c, g).min(count(&r, g));
    }
    f1(overlap, c.len(), r.len())
}

fn is_subsequence(sub: &[&str], of: &[&str]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|s| it.any(|o| o == s))
}

/// Longest common subsequence by trying every subset of the candidate.
pub fn brute_lcs(cand: &[&str], refr: &[&str]) -> usize {
    assert!(cand.len() <= 16);
    (0u32..1 << cand.len())
        .filter_map(|mask| {
            let sub: Vec<&str> = (0..cand.len()).filter(|i| mask >> i & 1 == 1).map(|i| cand[i]).collect();
            is_subsequence(&sub, refr).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

pub fn brute_rouge_l(cand: &[&str], refr: &[&str]) -> f64 {
    f1(brute_lcs(cand, refr), cand.len(), refr.len())
}

#[derive(Debug)]
pub struct RougeOracleReport {
    pub pairs: usize,
    pub max_deviation: f64,
    pub hand_examples_exact: bool,
}

/// `pairs` random sequences of up to 12 tokens over a 5-word vocabulary.
pub fn rouge_against_oracle(pairs: usize, seed: u64) -> RougeOracleReport {
    const WORDS: [&str; 5] = ["a", "b", "c", "d", "e"];
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let seq = |r: &mut ChaCha8Rng| -> Vec<&str> {
        let n = r.random_range(0..=12);
        (0..n).map(|_| WORDS[r.random_range(0..WORDS.len())]).collect()
    };
    let mut max_deviation: f64 = 0.0;
    for _ in 0..pairs {
        let (c, f) = (seq(&mut r), seq(&mut r));
        let s = rouge(&c.join(" "), &f.join(" "));
        for (got, want) in [
            (s.rouge1.f1, brute_rouge_n(&c, &f, 1)),
            (s.rouge2.f1, brute_rouge_n(&c, &f, 2)),
            (s.rouge_l.f1, brute_rouge_l(&c, &f)),
        ] {
            max_deviation = max_deviation.max((got - want).abs());
        }
    }
    let s = rouge("the cat sat", "the cat");
    let hand_examples_exact = [
        (s.rouge1.precision, 2.0 / 3.0),
        (s.rouge1.recall, 1.0),
        (s.rouge1.f1, 0.8),
        (s.rouge2.precision, 0.5),
        (s.rouge2.recall, 1.0),
        (s.rouge2.f1, 2.0 / 3.0),
        (s.rouge_l.precision, 2.0 / 3.0),
        (s.rouge_l.recall, 1.0),
        (s.rouge_l.f1, 0.8),
    ]
    .iter()
    .all(|(got, want)| got == want);
    RougeOracleReport { pairs, max_deviation, hand_examples_exact }
}

// ---------- noise ----------

#[derive(Debug)]
pub struct NoiseReport {
    pub units: usize,
    pub untouched: usize,
    /// Non-[CLS] tokens inside noised units, and how many of them are masked.
    pub noised_tokens: usize,
    pub masked: usize,
}

impl NoiseReport {
    pub fn mask_fraction(&self) -> f64 {
        self.masked as f64 / self.noised_tokens as f64
    }

    pub fn untouched_fraction(&self) -> f64 {
        self.untouched as f64 / self.units as f64
    }
}

/// Noises every dialogue utterance of a synthetic corpus, one unit each.
pub fn noise_statistics(spec: &SynthSpec, seed: u64) -> NoiseReport {
    let bench = Workbench::synthetic(spec).unwrap();
    let cfg = NoiseConfig::default();
    let mut report = NoiseReport { units: 0, untouched: 0, noised_tokens: 0, masked: 0 };
    for (k, utt) in bench.encoded.dialogues.iter().flatten().enumerate() {
        let mut r = rng::derive(seed, &[rng::stream::NOISE, k as u64]);
        let n = noise_unit(std::slice::from_ref(utt), &mut r, cfg).pop().unwrap();
        report.units += 1;
        if n.untouched {
            report.untouched += 1;
            assert_eq!(n.noisy, n.clean);
            continue;
        }
        report.noised_tokens += utt.len() - 1;
        report.masked += n.noisy.iter().filter(|&&t| t == MASK).count();
    }
    report
}

// ---------- mixing ----------

/// Records drawn from each source over `steps` steps.
pub fn source_counts(sizes: [usize; 3], batch_size: usize, steps: u64, seed: u64) -> [usize; 3] {
    let stream = MixedStream::new(sizes, batch_size, seed).unwrap();
    let mut counts = [0; 3];
    for step in 0..steps {
        let t = stream.triple(step);
        for s in Source::ALL {
            counts[s.index()] += t.batch(s).len();
        }
    }
    counts
}

// ---------- combined loss ----------

pub fn small_bench() -> Workbench {
    Workbench::synthetic(&SynthSpec { dialogues: 60, shorttexts: 60, articles: 60, finetune: 20, eval: 10, seed: 2 }).unwrap()
}

/// Largest gap between the logged total, read back from its log row, and a
/// fresh sum of the logged components over `steps` toy-preset steps.
pub fn total_arithmetic_gap(bench: &Workbench, steps: u64, alpha: f64) -> f64 {
    let cfg = TrainConfig { steps, alpha: alpha as _, seed: 3, ..Default::default() };
    let model = bench.fresh_model(BlockConfig::toy(), 3).unwrap();
    let mut run = Pretrainer::new(model, bench.vocab.clone(), bench.encoded.clone(), cfg).unwrap();
    let mut gap: f64 = 0.0;
    while run.step_count() < steps {
        let report = run.step().unwrap();
        let (_, l) = LossBreakdown::parse_tsv_row(&report.losses.tsv_row(report.step)).unwrap();
        let sum = l.l_rec as f64 + l.l_gen as f64 + l.l_summ as f64 + alpha * (l.l_de as f64 + l.l_dg as f64);
        gap = gap.max((l.total as f64 - sum).abs());
    }
    gap
}

/// One step's gradients with critics at α = 0 against no critics at all:
/// the largest difference over every non-critic parameter.
pub fn alpha_zero_gradient_gap(bench: &Workbench) -> f64 {
    let model = bench.fresh_model(BlockConfig::toy(), 4).unwrap();
    let with = TrainConfig { alpha: 0.0, critics: true, seed: 4, ..Default::default() };
    let without = TrainConfig { critics: false, ..with.clone() };
    let mut run = Pretrainer::new(model, bench.vocab.clone(), bench.encoded.clone(), with.clone()).unwrap();
    let batch = run.next_batch();
    let (a, ra) = pretrain_gradients(&run.model, &batch, &with).unwrap();
    let (b, rb) = pretrain_gradients(&run.model, &batch, &without).unwrap();
    assert!(ra.losses.l_de > 0.0 && rb.losses.l_de == 0.0);
    let store = run.model.params();
    let mut gap: f64 = 0.0;
    for id in store.ids() {
        if matches!(store.group(id), Group::CriticEncoder | Group::CriticDecoder) {
            continue;
        }
        let (ga, gb) = (a.get(id, store), b.get(id, store));
        for (x, y) in ga.data().iter().zip(gb.data()) {
            gap = gap.max((*x as f64 - *y as f64).abs());
        }
    }
    gap
}

// ---------- resume ----------

fn state(run: Pretrainer, seed: u64) -> TrainingState {
    let stream_position = run.step_count();
    TrainingState { model: run.model, adam: run.adam, vocab: run.vocab, echo: Vec::new(), seed, stream_position }
}

/// Serialized final state of an uninterrupted run and of one stopped at
/// `split`, round-tripped through checkpoint bytes and resumed.
pub fn resume_states(bench: &Workbench, steps: u64, split: u64) -> (Vec<u8>, Vec<u8>) {
    let cfg = TrainConfig { steps, warmup: 5, seed: 6, ..Default::default() };
    let fresh = || bench.fresh_model(BlockConfig::toy(), 6).unwrap();
    let mut full = Pretrainer::new(fresh(), bench.vocab.clone(), bench.encoded.clone(), cfg.clone()).unwrap();
    while full.step_count() < steps {
        full.step().unwrap();
    }
    let mut first = Pretrainer::new(fresh(), bench.vocab.clone(), bench.encoded.clone(), cfg.clone()).unwrap();
    while first.step_count() < split {
        first.step().unwrap();
    }
    let bytes = encode_checkpoint(&state(first, cfg.seed));
    let restored = decode_checkpoint(&bytes, None).unwrap();
    let mut second =
        Pretrainer::resume(restored.model, restored.adam, restored.vocab, bench.encoded.clone(), cfg.clone()).unwrap();
    while second.step_count() < steps {
        second.step().unwrap();
    }
    (encode_checkpoint(&state(full, cfg.seed)), encode_checkpoint(&state(second, cfg.seed)))
}
