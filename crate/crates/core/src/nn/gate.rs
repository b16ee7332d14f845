use rand::Rng;

use super::mlp::{Mlp, MlpSpec};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Learned sigmoid gate mixing two feature branches:
/// `G = sigmoid(MLP([a, x]))`, `out = (1 - G) * a + G * x`.
#[derive(Clone, Debug)]
pub struct SalienceGate {
    pub mlp: Mlp,
}

/// Handles to the three operands of a gated mix, kept for diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct GateOut {
    pub out: Var,
    pub gate: Var,
    pub a: Var,
    pub x: Var,
}

impl SalienceGate {
    /// Gate MLP `2D -> D -> D`.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Result<Self> {
        let mlp = Mlp::new(store, &format!("{name}.mlp"), &MlpSpec::new(&[2 * dim, dim, dim]), rng)?;
        Ok(Self { mlp })
    }

    pub fn fuse(&self, tape: &mut Tape, store: &ParamStore, a: Var, x: Var) -> Result<GateOut> {
        if tape.shape(a) != tape.shape(x) {
            return Err(Error::shape("salience_fuse", tape.shape(a), tape.shape(x)));
        }
        let cat = tape.concat_cols(&[a, x])?;
        let logits = self.mlp.forward(tape, store, cat)?;
        let gate = tape.sigmoid(logits)?;
        let out = tape.lerp(gate, a, x)?;
        Ok(GateOut { out, gate, a, x })
    }
}
