use std::collections::HashMap;

use crate::corpus::tokenize;
use crate::error::{DamsError, Result};

/// Precision, recall and F1 of one ROUGE variant.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RougeComponent {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// The reference had no n-grams, so every value is 0.
    pub empty_reference: bool,
}

impl RougeComponent {
    fn from_counts(overlap: usize, cand: usize, refr: usize) -> Self {
        if refr == 0 {
            return RougeComponent { empty_reference: true, ..Default::default() };
        }
        let precision = if cand == 0 { 0.0 } else { overlap as f64 / cand as f64 };
        let recall = overlap as f64 / refr as f64;
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        RougeComponent { precision, recall, f1, empty_reference: false }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RougeScore {
    pub rouge1: RougeComponent,
    pub rouge2: RougeComponent,
    pub rouge_l: RougeComponent,
}

impl RougeScore {
    pub fn components(&self) -> [(&'static str, RougeComponent); 3] {
        [("rouge1", self.rouge1), ("rouge2", self.rouge2), ("rougeL", self.rouge_l)]
    }

    /// `metric\tP\tR\tF1` lines under a header.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("metric\tprecision\trecall\tf1\n");
        for (name, c) in self.components() {
            s.push_str(&format!("{name}\t{:.6}\t{:.6}\t{:.6}\n", c.precision, c.recall, c.f1));
        }
        s
    }
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Clipped n-gram overlap on token lists.
pub fn rouge_n_tokens(cand: &[String], refr: &[String], n: usize) -> RougeComponent {
    let (c, r) = (ngrams(cand, n), ngrams(refr, n));
    let overlap: usize = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    RougeComponent::from_counts(overlap, c.values().sum(), r.values().sum())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens(cand: &[String], refr: &[String]) -> RougeComponent {
    RougeComponent::from_counts(lcs_len(cand, refr), cand.len(), refr.len())
}

/// ROUGE-N (n = 1 or 2) after lowercase, punctuation-splitting tokenization.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<RougeComponent> {
    if !(1..=2).contains(&n) {
        return Err(DamsError::Usage(format!("ROUGE-{n} is not supported; use 1 or 2")));
    }
    Ok(rouge_n_tokens(&tokenize(candidate), &tokenize(reference), n))
}

pub fn rouge_l(candidate: &str, reference: &str) -> RougeComponent {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

pub fn rouge(candidate: &str, reference: &str) -> RougeScore {
    let (c, r) = (tokenize(candidate), tokenize(reference));
    RougeScore { rouge1: rouge_n_tokens(&c, &r, 1), rouge2: rouge_n_tokens(&c, &r, 2), rouge_l: rouge_l_tokens(&c, &r) }
}

/// Unweighted mean of per-pair precision, recall and F1.
pub fn corpus_rouge<C: AsRef<str>, R: AsRef<str>>(pairs: &[(C, R)]) -> Result<RougeScore> {
    let scores: Vec<RougeScore> = pairs.iter().map(|(c, r)| rouge(c.as_ref(), r.as_ref())).collect();
    mean_rouge(&scores)
}

/// Mean of per-pair scores, accumulated in order.
pub fn mean_rouge(scores: &[RougeScore]) -> Result<RougeScore> {
    if scores.is_empty() {
        return Err(DamsError::InvalidBatch("no candidate/reference pairs to score".into()));
    }
    let n = scores.len() as f64;
    let mean = |pick: fn(&RougeScore) -> RougeComponent| {
        let mut m = RougeComponent::default();
        for s in scores {
            let c = pick(s);
            m.precision += c.precision / n;
            m.recall += c.recall / n;
            m.f1 += c.f1 / n;
            m.empty_reference |= c.empty_reference;
        }
        m
    };
    Ok(RougeScore { rouge1: mean(|s| s.rouge1), rouge2: mean(|s| s.rouge2), rouge_l: mean(|s| s.rouge_l) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(c: RougeComponent, p: f64, r: f64, f: f64) -> bool {
        (c.precision - p).abs() < 1e-12 && (c.recall - r).abs() < 1e-12 && (c.f1 - f).abs() < 1e-12
    }

    #[test]
    fn hand_counted_examples() {
        assert!(close(rouge_n("the cat sat", "the cat", 1).unwrap(), 2.0 / 3.0, 1.0, 0.8));
        assert!(close(rouge_n("the cat sat", "the cat", 2).unwrap(), 0.5, 1.0, 2.0 / 3.0));
        assert!(close(rouge_l("the cat sat", "the cat"), 2.0 / 3.0, 1.0, 0.8));
        assert_eq!(rouge_l("a b", "c d").f1, 0.0);
        for n in [1, 2] {
            assert_eq!(rouge_n("Hello, there world", "hello , there world", n).unwrap().f1, 1.0);
        }
    }

    #[test]
    fn counts_are_clipped() {
        let c = rouge_n("the the the", "the cat", 1).unwrap();
        assert!(close(c, 1.0 / 3.0, 0.5, 0.4));
    }

    #[test]
    fn empty_texts() {
        let e = rouge_n("something", "", 1).unwrap();
        assert!(e.empty_reference && e.f1 == 0.0);
        let c = rouge_n("", "ref", 1).unwrap();
        assert!(!c.empty_reference && c.f1 == 0.0);
        assert_eq!(rouge_n("a", "a", 2).unwrap(), RougeComponent { empty_reference: true, ..Default::default() });
        assert!(rouge_n("a", "a", 3).is_err());
    }

    #[test]
    fn corpus_mean() {
        assert!(corpus_rouge::<&str, &str>(&[]).is_err());
        let one = corpus_rouge(&[("the cat sat", "the cat")]).unwrap();
        assert_eq!(one, rouge("the cat sat", "the cat"));
        let pairs = [("the cat sat", "the cat"), ("a b", "c d"), ("x y", "x y")];
        let m = corpus_rouge(&pairs).unwrap();
        assert!((m.rouge1.f1 - (0.8 + 0.0 + 1.0) / 3.0).abs() < 1e-12);
        assert!((m.rouge2.f1 - (2.0 / 3.0 + 0.0 + 1.0) / 3.0).abs() < 1e-12);
        let doubled: Vec<_> = pairs.iter().chain(&pairs).copied().collect();
        let d = corpus_rouge(&doubled).unwrap();
        assert!((d.rouge_l.f1 - m.rouge_l.f1).abs() < 1e-12);
        assert!(m.to_tsv().starts_with("metric\tprecision\trecall\tf1\nrouge1\t"));
    }
}
