use std::cell::RefCell;
use std::fmt;

use rand::seq::SliceRandom;

use crate::error::{DamsError, Result};
use crate::rng::{self, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Dialogues,
    ShortTexts,
    Articles,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Dialogues, Source::ShortTexts, Source::Articles];

    pub fn name(self) -> &'static str {
        match self {
            Source::Dialogues => "dialogues",
            Source::ShortTexts => "shorttexts",
            Source::Articles => "articles",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Record indices consumed by one pretraining step: one batch per source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepTriple {
    pub step: u64,
    pub batches: [Vec<usize>; 3],
}

impl StepTriple {
    pub fn batch(&self, source: Source) -> &[usize] {
        &self.batches[source.index()]
    }

    /// `(source, indices)` pairs in fixed source order.
    pub fn iter(&self) -> impl Iterator<Item = (Source, &[usize])> {
        Source::ALL.into_iter().map(move |s| (s, self.batch(s)))
    }
}

/// Endless seeded walk over `0..size`: a fresh permutation per epoch,
/// `batch_size` indices per step. Batch `k` is a pure function of
/// `(seed, label, k)`.
#[derive(Debug)]
pub struct CyclicSampler {
    size: usize,
    batch_size: usize,
    seed: u64,
    label: u64,
    cache: RefCell<Option<(u64, Vec<usize>)>>,
}

impl CyclicSampler {
    pub fn new(size: usize, batch_size: usize, seed: u64, label: u64) -> Self {
        assert!(size > 0 && batch_size > 0, "sampler needs records and a positive batch size");
        CyclicSampler { size, batch_size, seed, label, cache: RefCell::new(None) }
    }

    pub fn batch(&self, step: u64) -> Vec<usize> {
        let n = self.size as u64;
        (0..self.batch_size as u64)
            .map(|i| {
                let global = step * self.batch_size as u64 + i;
                self.permuted(global / n, (global % n) as usize)
            })
            .collect()
    }

    fn permuted(&self, epoch: u64, offset: usize) -> usize {
        let mut cache = self.cache.borrow_mut();
        if cache.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut perm: Vec<usize> = (0..self.size).collect();
            perm.shuffle(&mut rng::derive(self.seed, &[stream::ORDER, self.label, epoch]));
            *cache = Some((epoch, perm));
        }
        cache.as_ref().expect("filled above").1[offset]
    }
}

/// The 1:1:1 mixed stream. Each source is read through its own
/// [`CyclicSampler`], so the triple for any step is a pure function of
/// `(seed, step)` and resuming needs only the step number.
#[derive(Debug)]
pub struct MixedStream {
    samplers: [CyclicSampler; 3],
    batch_size: usize,
    next_step: u64,
}

impl MixedStream {
    pub fn new(sizes: [usize; 3], batch_size: usize, seed: u64) -> Result<Self> {
        for s in Source::ALL {
            if sizes[s.index()] == 0 {
                return Err(DamsError::Config(format!("pretraining source `{s}` is empty")));
            }
        }
        if batch_size == 0 {
            return Err(DamsError::Config("batch size must be positive".into()));
        }
        let samplers = Source::ALL.map(|s| CyclicSampler::new(sizes[s.index()], batch_size, seed, s.index() as u64));
        Ok(MixedStream { samplers, batch_size, next_step: 0 })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Step index of the triple the iterator yields next.
    pub fn position(&self) -> u64 {
        self.next_step
    }

    pub fn seek(&mut self, step: u64) {
        self.next_step = step;
    }

    pub fn triple(&self, step: u64) -> StepTriple {
        StepTriple { step, batches: Source::ALL.map(|s| self.samplers[s.index()].batch(step)) }
    }
}

impl Iterator for MixedStream {
    type Item = StepTriple;

    fn next(&mut self) -> Option<StepTriple> {
        let t = self.triple(self.next_step);
        self.next_step += 1;
        Some(t)
    }
}
