//! Inverse distance weighted feature interpolation.

use super::cloud::PointCloud;
use super::neighbors::knn_rows;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Added to every neighbour distance so a coincident neighbour gets a large
/// but finite weight.
pub const IDW_EPS: f64 = 1e-8;

/// Differentiable IDW: for each row of `query`, finds its `k` nearest rows of
/// `keys` (Euclidean) and returns the `1 / (d + eps)` weighted mean of the
/// matching `payload` rows. Gradients flow through the distances and the
/// payload; the neighbour choice is a constant.
pub fn idw_var(tape: &mut Tape, query: Var, keys: Var, payload: Var, k: usize) -> Result<Var> {
    let n_keys = tape.value(keys).rows();
    if n_keys == 0 {
        return Err(Error::invalid("idw: empty reference set"));
    }
    if tape.value(payload).rows() != n_keys {
        return Err(Error::shape("idw", tape.shape(keys), tape.shape(payload)));
    }
    let nn = knn_rows(tape.value(query), tape.value(keys), k)?;
    let n_q = tape.value(query).rows();
    let repeat: Vec<usize> = (0..n_q).flat_map(|i| std::iter::repeat_n(i, k)).collect();

    let q_rep = tape.gather_rows(query, &repeat)?;
    let k_sel = tape.gather_rows(keys, &nn.indices)?;
    let diff = tape.sub(q_rep, k_sel)?;
    let dist = tape.row_norm(diff)?;
    let dist = tape.add_scalar(dist, IDW_EPS)?;
    let w = tape.recip(dist)?;

    let f_sel = tape.gather_rows(payload, &nn.indices)?;
    let weighted = tape.mul_col(f_sel, w)?;
    let num = tape.segment_sum(weighted, k)?;
    let den = tape.segment_sum(w, k)?;
    tape.div_col(num, den)
}

/// Interpolates `feats` (rows aligned with `centers`) at every query point
/// from its `k` nearest centers.
pub fn idw_interp_spatial(query: &PointCloud, centers: &PointCloud, feats: &Tensor, k: usize) -> Result<Tensor> {
    if feats.rows() != centers.len() {
        return Err(Error::shape("idw_interp_spatial", &[centers.len(), 3], feats.shape()));
    }
    let mut t = Tape::new();
    let q = t.constant(query.to_tensor());
    let c = t.constant(centers.to_tensor());
    let f = t.constant(feats.clone());
    let out = idw_var(&mut t, q, c, f, k)?;
    Ok(t.value(out).clone())
}

/// Feature-space IDW: neighbours and weights come from distances between
/// `query_feats` rows and `ref_feats` rows, and `ref_feats` rows are also the
/// interpolated payload.
pub fn idw_interp_feature(query_feats: &Tensor, ref_feats: &Tensor, k: usize) -> Result<Tensor> {
    let mut t = Tape::new();
    let q = t.constant(query_feats.clone());
    let r = t.constant(ref_feats.clone());
    let out = idw_var(&mut t, q, r, r, k)?;
    Ok(t.value(out).clone())
}
