//! Summary scoring, representation export, the domain probe and
//! convergence logs.

mod convergence;
mod export;
mod probe;
mod rouge;

pub use convergence::{parse_convergence_log, steps_to_reach, ConvergencePoint, CONVERGENCE_HEADER};
pub use export::{encode_reps, export_reps, read_reps, write_reps};
pub use probe::{domain_probe, ProbeReport, RepSet, MIN_PER_DOMAIN, PROBE_EPOCHS};
pub use rouge::{
    corpus_rouge, lcs_len, mean_rouge, rouge, rouge_l, rouge_l_tokens, rouge_n, rouge_n_tokens, RougeComponent, RougeScore,
};
