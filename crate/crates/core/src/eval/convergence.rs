use crate::error::{DamsError, Result};

/// One evaluation point of a fine-tuning run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergencePoint {
    pub step: u64,
    pub train_loss: f64,
    pub dev_ppl: f64,
    pub dev_acc: f64,
}

pub const CONVERGENCE_HEADER: &str = "step\ttrain_loss\tdev_ppl\tdev_acc";

impl ConvergencePoint {
    pub fn tsv_row(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.step, self.train_loss, self.dev_ppl, self.dev_acc)
    }
}

/// Parses a fine-tune log: `#` lines and the header are skipped.
pub fn parse_convergence_log(text: &str) -> Result<Vec<ConvergencePoint>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() || line == CONVERGENCE_HEADER {
            continue;
        }
        let bad = |msg: String| DamsError::data("<convergence log>", i + 1, msg);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        out.push(ConvergencePoint {
            step: f[0].parse().map_err(|e| bad(format!("{:?}: {e}", f[0])))?,
            train_loss: num(f[1])?,
            dev_ppl: num(f[2])?,
            dev_acc: num(f[3])?,
        });
    }
    Ok(out)
}

/// First logged step whose dev perplexity is at or below `target`.
pub fn steps_to_reach(points: &[ConvergencePoint], target: f64) -> Option<u64> {
    points.iter().find(|p| p.dev_ppl <= target).map(|p| p.step)
}
