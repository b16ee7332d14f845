//! Grounded seed generation: pooled global fusion, channel-to-point seed
//! expansion, seed grounding and the coarse scaffold.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{AttentionSpec, Mlp, MlpSpec, MultiHeadAttention, Trace};

/// Which pooled global acts as the single fusion query.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionQuery {
    /// Pooled prior feature queries the observation tokens.
    #[default]
    Generative,
    /// Pooled observation feature queries the prior tokens.
    Observation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedConfig {
    pub n_c: usize,
    pub dim: usize,
    pub attention: AttentionSpec,
    #[serde(default)]
    pub fusion_query: FusionQuery,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self {
            n_c: 64,
            dim: 64,
            attention: AttentionSpec::new(4, 64),
            fusion_query: FusionQuery::Generative,
        }
    }
}

impl SeedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_c == 0 || self.dim == 0 {
            return Err(Error::invalid("seed sizes must be positive"));
        }
        self.attention.validate()?;
        if self.attention.model_dim != self.dim {
            return Err(Error::invalid("seed attention dim must equal feature dim"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SeedGenerator {
    pub fusion_attn: MultiHeadAttention,
    /// `[attn_out, pooled_obs]`: `2D -> D -> D`.
    pub fusion_mlp: Mlp,
    /// `D -> 2D -> N_c * D`.
    pub expand: Mlp,
    pub ground_attn: MultiHeadAttention,
    /// `[fused, seed, grounded]`: `3D -> D -> 3`.
    pub coarse: Mlp,
    pub cfg: SeedConfig,
}

#[derive(Clone, Copy, Debug)]
pub struct SeedOut {
    pub fused: Var,
    pub seeds: Var,
    pub grounded: Var,
    pub coarse: Var,
}

impl SeedGenerator {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &SeedConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        Ok(Self {
            fusion_attn: MultiHeadAttention::new(store, &format!("{name}.fusion_attn"), cfg.attention, rng)?,
            fusion_mlp: Mlp::new(store, &format!("{name}.fusion_mlp"), &MlpSpec::new(&[2 * d, d, d]), rng)?,
            expand: Mlp::new(
                store,
                &format!("{name}.expand"),
                &MlpSpec::new(&[d, 2 * d, cfg.n_c * d]),
                rng,
            )?,
            ground_attn: MultiHeadAttention::new(store, &format!("{name}.ground_attn"), cfg.attention, rng)?,
            coarse: Mlp::new(store, &format!("{name}.coarse"), &MlpSpec::new(&[3 * d, d, 3]), rng)?,
            cfg: cfg.clone(),
        })
    }

    /// Max-pools both feature sets, attends from one pooled token into the
    /// other set, and mixes the result with the pooled observation.
    pub fn fuse_global(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        f_g: Var,
        f_o: Var,
        trace: &mut Trace,
    ) -> Result<Var> {
        if tape.shape(f_g).get(1) != tape.shape(f_o).get(1) {
            return Err(Error::shape("fuse_global", tape.shape(f_g), tape.shape(f_o)));
        }
        let pg = tape.max_rows(f_g)?;
        let po = tape.max_rows(f_o)?;
        let a = match self.cfg.fusion_query {
            FusionQuery::Generative => self.fusion_attn.forward(tape, store, pg, f_o)?,
            FusionQuery::Observation => self.fusion_attn.forward(tape, store, po, f_g)?,
        };
        trace.attention.extend(&a.weights);
        let cat = tape.concat_cols(&[a.out, po])?;
        self.fusion_mlp.forward(tape, store, cat)
    }

    /// `1 x D -> N_c x D`, row-major reshape of the expanded channels.
    pub fn expand_seeds(&self, tape: &mut Tape, store: &ParamStore, fused: Var) -> Result<Var> {
        let e = self.expand.forward(tape, store, fused)?;
        tape.reshape(e, &[self.cfg.n_c, self.cfg.dim])
    }

    pub fn ground_seeds(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        seeds: Var,
        f_o: Var,
        trace: &mut Trace,
    ) -> Result<Var> {
        let a = self.ground_attn.forward(tape, store, seeds, f_o)?;
        trace.attention.extend(&a.weights);
        Ok(a.out)
    }

    pub fn coarse_points(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        fused: Var,
        seeds: Var,
        grounded: Var,
    ) -> Result<Var> {
        let n = tape.value(seeds).rows();
        if tape.value(grounded).rows() != n || tape.value(fused).rows() != 1 {
            return Err(Error::shape("coarse_points", tape.shape(seeds), tape.shape(grounded)));
        }
        let rep = tape.gather_rows(fused, &vec![0; n])?;
        let cat = tape.concat_cols(&[rep, seeds, grounded])?;
        self.coarse.forward(tape, store, cat)
    }

    /// With `ground == false` the grounded features are zeros and the
    /// grounding attention is never evaluated.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        f_g: Var,
        f_o: Var,
        ground: bool,
        trace: &mut Trace,
    ) -> Result<SeedOut> {
        let fused = self.fuse_global(tape, store, f_g, f_o, trace)?;
        let seeds = self.expand_seeds(tape, store, fused)?;
        let grounded = if ground {
            self.ground_seeds(tape, store, seeds, f_o, trace)?
        } else {
            tape.constant(Tensor::zeros(&[self.cfg.n_c, self.cfg.dim]))
        };
        let coarse = self.coarse_points(tape, store, fused, seeds, grounded)?;
        Ok(SeedOut {
            fused,
            seeds,
            grounded,
            coarse,
        })
    }
}
