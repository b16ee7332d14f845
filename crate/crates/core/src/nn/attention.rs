use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Linear;
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub heads: usize,
    pub model_dim: usize,
}

impl AttentionSpec {
    pub fn new(heads: usize, model_dim: usize) -> Self {
        Self { heads, model_dim }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "attention: model_dim {} not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Output of an attention call. `weights` holds one `Q x KV` row-stochastic
/// matrix per head.
#[derive(Clone, Debug)]
pub struct AttentionOut {
    pub out: Var,
    pub weights: Vec<Var>,
}

/// Scaled dot-product multi-head attention with query, key, value and
/// output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub spec: AttentionSpec,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, spec: AttentionSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let d = spec.model_dim;
        Ok(Self {
            spec,
            query: Linear::new(store, &format!("{name}.q"), d, d, rng)?,
            // A key bias shifts every logit of a query row equally, which
            // softmax cancels, so keys are projected without one.
            key: Linear::without_bias(store, &format!("{name}.k"), d, d, rng)?,
            value: Linear::new(store, &format!("{name}.v"), d, d, rng)?,
            output: Linear::new(store, &format!("{name}.o"), d, d, rng)?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [&self.query, &self.key, &self.value, &self.output]
            .iter()
            .flat_map(|l| l.param_ids())
            .collect()
    }

    /// Rows of the result follow `q_set`; self-attention is `q_set == kv_set`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, q_set: Var, kv_set: Var) -> Result<AttentionOut> {
        let d = self.spec.model_dim;
        for v in [q_set, kv_set] {
            let s = tape.shape(v);
            if s.len() != 2 || s[1] != d {
                return Err(Error::shape("attention", s, &[0, d]));
            }
        }
        let q = self.query.forward(tape, store, q_set)?;
        let k = self.key.forward(tape, store, kv_set)?;
        let v = self.value.forward(tape, store, kv_set)?;
        let hd = self.spec.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(self.spec.heads);
        let mut weights = Vec::with_capacity(self.spec.heads);
        for h in 0..self.spec.heads {
            let (lo, hi) = (h * hd, (h + 1) * hd);
            let (qh, kh, vh) = if self.spec.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, lo, hi)?,
                    tape.slice_cols(k, lo, hi)?,
                    tape.slice_cols(v, lo, hi)?,
                )
            };
            let kt = tape.transpose(kh)?;
            let logits = tape.matmul(qh, kt)?;
            let logits = tape.scale(logits, scale)?;
            let attn = tape.softmax_rows(logits)?;
            heads.push(tape.matmul(attn, vh)?);
            weights.push(attn);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let out = self.output.forward(tape, store, cat)?;
        Ok(AttentionOut { out, weights })
    }
}
