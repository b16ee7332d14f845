//! Corrective dual-feature encoding: local edge-conv encoding of both clouds,
//! the salient transformer for the observation and the grounding transformer
//! for the prior.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::geom::{farthest_point_sample, knn, PointCloud};
use crate::nn::{AttentionSpec, GateOut, Linear, Mlp, MlpSpec, MultiHeadAttention, SalienceGate, Trace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_e: usize,
    pub dim: usize,
    pub k_local: usize,
    /// Width of the first edge-conv layer.
    pub edge_width: usize,
    pub attention: AttentionSpec,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_e: 32,
            dim: 64,
            k_local: 8,
            edge_width: 64,
            attention: AttentionSpec::new(4, 64),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_e == 0 || self.dim == 0 || self.k_local == 0 || self.edge_width == 0 {
            return Err(Error::invalid("encoder sizes must be positive"));
        }
        self.attention.validate()?;
        if self.attention.model_dim != self.dim {
            return Err(Error::invalid(format!(
                "encoder attention dim {} != feature dim {}",
                self.attention.model_dim, self.dim
            )));
        }
        Ok(())
    }
}

/// Centers with their features on the tape; row `i` of `feats` belongs to
/// center `i`.
#[derive(Clone, Debug)]
pub struct EncodedSet {
    pub centers: PointCloud,
    pub feats: Var,
}

/// Two-layer edge convolution (DGCNN style). The first layer runs on every
/// raw point over its `k_local` raw neighbours; the second runs at the FPS
/// centers over the same neighbourhoods, using first-layer features.
#[derive(Clone, Debug)]
pub struct LocalEncoder {
    pub edge1: Linear,
    pub edge2: Linear,
}

impl LocalEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            edge1: Linear::new(store, &format!("{name}.edge.0"), 6, cfg.edge_width, rng)?,
            edge2: Linear::new(store, &format!("{name}.edge.1"), 2 * cfg.edge_width, cfg.dim, rng)?,
        })
    }

    /// Returns centers and `F' + phi(centers)`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        phi: &Mlp,
        pc: &PointCloud,
        cfg: &EncoderConfig,
    ) -> Result<EncodedSet> {
        let n = pc.len();
        if n < cfg.n_e.max(cfg.k_local) {
            return Err(Error::invalid(format!(
                "encode_local: {n} points, need at least max(n_e {}, k_local {})",
                cfg.n_e, cfg.k_local
            )));
        }
        let k = cfg.k_local;
        let centers_idx = farthest_point_sample(pc, cfg.n_e, pc.nearest_to_centroid())?;
        let nbr = knn(pc, pc, k)?;
        let self_rep: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();

        let x = tape.constant(pc.to_tensor());
        let h1 = edge_conv(tape, store, &self.edge1, x, &self_rep, &nbr.indices, k)?;
        let h1 = tape.relu(h1)?;

        let c_rep: Vec<usize> = centers_idx.iter().flat_map(|&c| std::iter::repeat_n(c, k)).collect();
        let c_nbr: Vec<usize> = centers_idx.iter().flat_map(|&c| nbr.row(c).iter().copied()).collect();
        let f1 = edge_conv(tape, store, &self.edge2, h1, &c_rep, &c_nbr, k)?;

        let centers = pc.select(&centers_idx);
        let cv = tape.constant(centers.to_tensor());
        let pos = phi.forward(tape, store, cv)?;
        let feats = tape.add(f1, pos)?;
        Ok(EncodedSet { centers, feats })
    }
}

/// `max_j W [h_j - h_c, h_c] + b` over consecutive groups of neighbour rows.
fn edge_conv(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &Linear,
    h: Var,
    center_rows: &[usize],
    neighbor_rows: &[usize],
    k: usize,
) -> Result<Var> {
    let hc = tape.gather_rows(h, center_rows)?;
    let hj = tape.gather_rows(h, neighbor_rows)?;
    let d = tape.sub(hj, hc)?;
    let e = tape.concat_cols(&[d, hc])?;
    let y = layer.forward(tape, store, e)?;
    tape.segment_max(y, k)
}

/// Observation branch: self-attention (global) gated with a max over
/// spatial kNN neighbours of a shared MLP (local).
#[derive(Clone, Debug)]
pub struct SalientTransformer {
    pub attn: MultiHeadAttention,
    pub local: Mlp,
    pub gate: SalienceGate,
}

impl SalientTransformer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.dim;
        Ok(Self {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg.attention, rng)?,
            local: Mlp::new(store, &format!("{name}.local"), &MlpSpec::new(&[d, d, d]), rng)?,
            gate: SalienceGate::new(store, &format!("{name}.gate"), d, rng)?,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        f_obs: Var,
        centers: &PointCloud,
        k_local: usize,
        trace: &mut Trace,
    ) -> Result<GateOut> {
        let n = centers.len();
        if tape.value(f_obs).rows() != n {
            return Err(Error::shape("salient_transform", tape.shape(f_obs), &[n, 0]));
        }
        let a = self.attn.forward(tape, store, f_obs, f_obs)?;
        trace.attention.extend(&a.weights);

        // The MLP is row-wise, so applying it before gathering is the same
        // as applying it to every gathered neighbour.
        let k = k_local.min(n);
        let nbr = knn(centers, centers, k)?;
        let m = self.local.forward(tape, store, f_obs)?;
        let g = tape.gather_rows(m, &nbr.indices)?;
        let x = tape.segment_max(g, k)?;

        let out = self.gate.fuse(tape, store, a.out, x)?;
        trace.gates.push(out);
        Ok(out)
    }
}

/// Prior branch: self-attention gated with cross-attention into the final
/// observation features.
#[derive(Clone, Debug)]
pub struct GroundingTransformer {
    pub self_attn: MultiHeadAttention,
    pub cross_attn: MultiHeadAttention,
    pub gate: SalienceGate,
}

impl GroundingTransformer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), cfg.attention, rng)?,
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), cfg.attention, rng)?,
            gate: SalienceGate::new(store, &format!("{name}.gate"), cfg.dim, rng)?,
        })
    }

    /// With `ground == false` the cross branch is replaced by the self
    /// branch, so the output is exactly the self-attention result.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        f_gen: Var,
        f_obs: Var,
        ground: bool,
        trace: &mut Trace,
    ) -> Result<GateOut> {
        let a = self.self_attn.forward(tape, store, f_gen, f_gen)?;
        trace.attention.extend(&a.weights);
        let x = if ground {
            let c = self.cross_attn.forward(tape, store, f_gen, f_obs)?;
            trace.attention.extend(&c.weights);
            c.out
        } else {
            a.out
        };
        let out = self.gate.fuse(tape, store, a.out, x)?;
        trace.gates.push(out);
        Ok(out)
    }
}
