//! Hierarchical grounded refinement: dual-source feature association,
//! cross-scale shape context attention and displacement upsampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::geom::{idw_var, knn_rows};
use crate::nn::{Linear, Mlp, MlpSpec, Trace};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrbConfig {
    /// Upsampling rate.
    pub r: usize,
    /// Neighbours for interpolation and for CSSC attention.
    pub k: usize,
    pub dim: usize,
}

impl Default for GrbConfig {
    fn default() -> Self {
        Self { r: 2, k: 8, dim: 64 }
    }
}

impl GrbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.k == 0 || self.dim == 0 {
            return Err(Error::invalid("GRB sizes must be positive"));
        }
        Ok(())
    }
}

/// Ablation switches that act inside a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GrbFlags {
    pub dual_source: bool,
    pub structure_aware: bool,
}

impl Default for GrbFlags {
    fn default() -> Self {
        Self {
            dual_source: true,
            structure_aware: true,
        }
    }
}

/// Input of a block. `ctx` holds `(ctx_points, ctx_feats)` from the previous
/// block; the first block has none and builds it from its own input.
#[derive(Clone, Copy, Debug)]
pub struct GrbState {
    pub points: Var,
    pub ctx: Option<(Var, Var)>,
}

/// Observation centers/features and final prior features every block reads.
#[derive(Clone, Copy, Debug)]
pub struct Sources {
    pub obs_centers: Var,
    pub obs_feats: Var,
    pub gen_feats: Var,
}

#[derive(Clone, Debug)]
pub struct GrbOut {
    pub points: Var,
    pub next: GrbState,
    pub assoc: Var,
    pub ctx_feats: Var,
}

#[derive(Clone, Debug)]
pub struct Grb {
    pub cfg: GrbConfig,
    /// Projects `F_as` into context features; present on the first block only.
    pub ctx_proj: Option<Mlp>,
    pub query: Mlp,
    pub key: Linear,
    pub value: Linear,
    /// Relative position encoding of `p_i - p_j`.
    pub phi: Mlp,
    /// `D -> D -> 1` scalar attention logit per neighbour.
    pub logit: Mlp,
    /// `D -> D -> 3r` displacement head.
    pub disp: Mlp,
}

impl Grb {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &GrbConfig, first: bool, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let ctx_proj = if first {
            Some(Mlp::new(
                store,
                &format!("{name}.ctx_proj"),
                &MlpSpec::new(&[2 * d, d, d]),
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            cfg: cfg.clone(),
            ctx_proj,
            query: Mlp::new(store, &format!("{name}.query"), &MlpSpec::new(&[2 * d, d, d]), rng)?,
            key: Linear::new(store, &format!("{name}.key"), d, d, rng)?,
            value: Linear::new(store, &format!("{name}.value"), d, d, rng)?,
            phi: Mlp::new(store, &format!("{name}.phi"), &MlpSpec::new(&[3, d, d]), rng)?,
            logit: Mlp::new(store, &format!("{name}.logit"), &MlpSpec::new(&[d, d, 1]), rng)?,
            disp: Mlp::new(store, &format!("{name}.disp"), &MlpSpec::new(&[d, d, 3 * cfg.r]), rng)?,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: GrbState,
        src: Sources,
        flags: GrbFlags,
        trace: &mut Trace,
    ) -> Result<GrbOut> {
        let p_in = state.points;
        let f_as = dual_source_assoc(tape, p_in, src, self.cfg.k, flags.dual_source)?;
        let (ctx_points, ctx_feats) = match (state.ctx, &self.ctx_proj) {
            (Some(c), _) => c,
            (None, Some(proj)) => (p_in, proj.forward(tape, store, f_as)?),
            (None, None) => return Err(Error::invalid("GRB without context needs a context projection")),
        };
        let f_ctx = self.cssc(
            tape,
            store,
            p_in,
            f_as,
            ctx_points,
            ctx_feats,
            flags.structure_aware,
            trace,
        )?;
        let points = self.upsample(tape, store, p_in, f_ctx)?;
        Ok(GrbOut {
            points,
            next: GrbState {
                points,
                ctx: Some((p_in, f_ctx)),
            },
            assoc: f_as,
            ctx_feats: f_ctx,
        })
    }

    /// `F_ctx = F_q + sum_j alpha_ij v_j` with `alpha_i = softmax_j MLP(q_i - k_j + phi(p_i - p_j))`
    /// over the `k` nearest context points. Without structure awareness it
    /// is `F_q` alone.
    #[allow(clippy::too_many_arguments)]
    pub fn cssc(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        p_in: Var,
        f_as: Var,
        ctx_points: Var,
        ctx_feats: Var,
        structure_aware: bool,
        trace: &mut Trace,
    ) -> Result<Var> {
        let f_q = self.query.forward(tape, store, f_as)?;
        if !structure_aware {
            return Ok(f_q);
        }
        if tape.value(ctx_points).rows() != tape.value(ctx_feats).rows() {
            return Err(Error::shape("cssc", tape.shape(ctx_points), tape.shape(ctx_feats)));
        }
        let k = self.cfg.k;
        let n = tape.value(p_in).rows();
        let nbr = knn_rows(tape.value(p_in), tape.value(ctx_points), k)?;
        let rep: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();

        let keys = self.key.forward(tape, store, ctx_feats)?;
        let vals = self.value.forward(tape, store, ctx_feats)?;
        let q_rep = tape.gather_rows(f_q, &rep)?;
        let k_sel = tape.gather_rows(keys, &nbr.indices)?;
        let p_rep = tape.gather_rows(p_in, &rep)?;
        let p_sel = tape.gather_rows(ctx_points, &nbr.indices)?;
        let rel = tape.sub(p_rep, p_sel)?;
        let pos = self.phi.forward(tape, store, rel)?;
        let h = tape.sub(q_rep, k_sel)?;
        let h = tape.add(h, pos)?;
        let logits = self.logit.forward(tape, store, h)?;
        let logits = tape.reshape(logits, &[n, k])?;
        let alpha = tape.softmax_rows(logits)?;
        trace.cssc.push(alpha);

        let a_col = tape.reshape(alpha, &[n * k, 1])?;
        let v_sel = tape.gather_rows(vals, &nbr.indices)?;
        let weighted = tape.mul_col(v_sel, a_col)?;
        let agg = tape.segment_sum(weighted, k)?;
        tape.add(f_q, agg)
    }

    /// `replicate(P_in, r) + reshape(MLP(F_ctx), r N x 3)`, point-major.
    pub fn upsample(&self, tape: &mut Tape, store: &ParamStore, p_in: Var, f_ctx: Var) -> Result<Var> {
        let n = tape.value(p_in).rows();
        if tape.value(f_ctx).rows() != n {
            return Err(Error::shape("upsample", tape.shape(p_in), tape.shape(f_ctx)));
        }
        let r = self.cfg.r;
        let delta = self.disp.forward(tape, store, f_ctx)?;
        let delta = tape.reshape(delta, &[n * r, 3])?;
        let rep: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, r)).collect();
        let base = tape.gather_rows(p_in, &rep)?;
        tape.add(base, delta)
    }
}

/// `[f_obs, f_gen]`: spatial IDW of observation features at each input
/// point, then feature-space IDW over the prior features. Without the dual
/// source the observation half is duplicated.
pub fn dual_source_assoc(tape: &mut Tape, p_in: Var, src: Sources, k: usize, dual: bool) -> Result<Var> {
    let f_obs = idw_var(tape, p_in, src.obs_centers, src.obs_feats, k)?;
    let f_gen = if dual {
        idw_var(tape, f_obs, src.gen_feats, src.gen_feats, k)?
    } else {
        f_obs
    };
    tape.concat_cols(&[f_obs, f_gen])
}
