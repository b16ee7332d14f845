//! Differentiable building blocks shared by every stage.

mod attention;
mod gate;
mod mlp;

pub use attention::{AttentionOut, AttentionSpec, MultiHeadAttention};
pub use gate::{GateOut, SalienceGate};
pub use mlp::{Linear, Mlp, MlpSpec};

use rand::Rng;

use crate::autodiff::{ParamStore, Var};
use crate::error::Result;

/// Tape handles of intermediate quantities worth inspecting after a forward
/// pass: attention maps (one per head), CSSC neighbour weights and gated mixes.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub attention: Vec<Var>,
    pub cssc: Vec<Var>,
    pub gates: Vec<GateOut>,
}

/// Learnable positional embedding: a `3 -> D -> D` MLP over coordinates or
/// coordinate offsets.
pub fn pos_embed<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Result<Mlp> {
    Mlp::new(store, name, &MlpSpec::new(&[3, dim, dim]), rng)
}
