use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::ModelOut;
use crate::autodiff::Tape;

/// Structural facts checked after a forward pass: level cardinalities,
/// row-stochastic attention and CSSC weights, and gated mixes that stay
/// between their two branches.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantStats {
    pub passes: usize,
    pub cardinality_errors: usize,
    /// Largest `|sum_j w_ij - 1|` over every attention row.
    pub max_attention_err: f64,
    pub max_cssc_err: f64,
    pub gate_checks: usize,
    pub gate_violations: usize,
}

fn max_row_sum_err(t: &crate::autodiff::Tensor) -> f64 {
    (0..t.rows())
        .map(|i| (t.row(i).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

impl InvariantStats {
    pub fn observe(tape: &Tape, out: &ModelOut, cfg: &ModelConfig) -> Self {
        let sizes = cfg.level_sizes();
        let cardinality_errors = out
            .all_levels()
            .iter()
            .zip(&sizes)
            .filter(|(v, n)| tape.value(**v).rows() != **n)
            .count()
            + sizes.len().abs_diff(out.levels.len() + 1);
        let max_attention_err = out
            .trace
            .attention
            .iter()
            .map(|w| max_row_sum_err(tape.value(*w)))
            .fold(0.0, f64::max);
        let max_cssc_err = out
            .trace
            .cssc
            .iter()
            .map(|w| max_row_sum_err(tape.value(*w)))
            .fold(0.0, f64::max);
        let mut gate_checks = 0;
        let mut gate_violations = 0;
        for g in &out.trace.gates {
            let (o, a, x) = (tape.value(g.out), tape.value(g.a), tape.value(g.x));
            for ((o, a), x) in o.data().iter().zip(a.data()).zip(x.data()) {
                gate_checks += 1;
                if !(*o >= a.min(*x) && *o <= a.max(*x)) {
                    gate_violations += 1;
                }
            }
        }
        Self {
            passes: 1,
            cardinality_errors,
            max_attention_err,
            max_cssc_err,
            gate_checks,
            gate_violations,
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.passes += other.passes;
        self.cardinality_errors += other.cardinality_errors;
        self.max_attention_err = self.max_attention_err.max(other.max_attention_err);
        self.max_cssc_err = self.max_cssc_err.max(other.max_cssc_err);
        self.gate_checks += other.gate_checks;
        self.gate_violations += other.gate_violations;
    }

    pub fn holds(&self, row_tol: f64) -> bool {
        self.cardinality_errors == 0
            && self.gate_violations == 0
            && self.max_attention_err <= row_tol
            && self.max_cssc_err <= row_tol
    }
}
