use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::invariants::InvariantStats;
use super::model::PgNet;
use crate::autodiff::{ParamStore, Tape};
use crate::data::{SampleTriple, ShapeFamily};
use crate::error::{Error, Result};
use crate::geom::{chamfer_l1, chamfer_l2_squared, fscore, PointCloud};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub family: ShapeFamily,
    /// L1 Chamfer distance, raw units.
    pub cd: f64,
    /// Squared-L2 Chamfer distance, for reference.
    pub cd_l2: f64,
    pub fscore: f64,
}

pub fn score(pred: &PointCloud, s: &SampleTriple, tau: f64) -> Result<SampleMetrics> {
    Ok(SampleMetrics {
        id: s.id.clone(),
        family: s.family,
        cd: chamfer_l1(pred, &s.gt),
        cd_l2: chamfer_l2_squared(pred, &s.gt),
        fscore: fscore(pred, &s.gt, tau)?.f,
    })
}

/// Final-level predictions for every sample, in input order.
pub fn predict_all(model: &PgNet, store: &ParamStore, samples: &[&SampleTriple]) -> Result<Vec<PointCloud>> {
    samples
        .par_iter()
        .map(|s| {
            let mut levels = model.predict(store, &s.partial, &s.prior)?;
            Ok(levels.pop().expect("at least the scaffold"))
        })
        .collect()
}

/// Like [`predict_all`], also checking structural invariants on every
/// forward pass; stats are merged in input order.
pub fn predict_all_observed(
    model: &PgNet,
    store: &ParamStore,
    samples: &[&SampleTriple],
) -> Result<(Vec<PointCloud>, InvariantStats)> {
    let per: Vec<(PointCloud, InvariantStats)> = samples
        .par_iter()
        .map(|s| {
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, store, &s.partial, &s.prior)?;
            let stats = InvariantStats::observe(&tape, &out, &model.cfg);
            Ok((PointCloud::from_tensor(tape.value(out.final_level()))?, stats))
        })
        .collect::<Result<_>>()?;
    let mut acc = InvariantStats::default();
    let preds = per
        .into_iter()
        .map(|(p, st)| {
            acc.merge(&st);
            p
        })
        .collect();
    Ok((preds, acc))
}

pub fn score_all(preds: &[PointCloud], samples: &[&SampleTriple], tau: f64) -> Result<Vec<SampleMetrics>> {
    if preds.len() != samples.len() {
        return Err(Error::Mismatch(format!(
            "{} predictions for {} samples",
            preds.len(),
            samples.len()
        )));
    }
    preds.par_iter().zip(samples).map(|(p, s)| score(p, s, tau)).collect()
}

pub fn evaluate(model: &PgNet, store: &ParamStore, samples: &[&SampleTriple], tau: f64) -> Result<Vec<SampleMetrics>> {
    score_all(&predict_all(model, store, samples)?, samples, tau)
}

/// Scores the untouched prior as if it were the prediction.
pub fn evaluate_prior(samples: &[&SampleTriple], tau: f64) -> Result<Vec<SampleMetrics>> {
    samples.par_iter().map(|s| score(&s.prior, s, tau)).collect()
}

/// Mean L1 CD and mean F-score over samples, summed in input order.
pub fn mean_metrics(m: &[SampleMetrics]) -> (f64, f64) {
    let n = m.len().max(1) as f64;
    (
        m.iter().map(|x| x.cd).sum::<f64>() / n,
        m.iter().map(|x| x.fscore).sum::<f64>() / n,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyRow {
    pub family: String,
    /// Mean L1 CD scaled by 1e3.
    pub cd_e3: f64,
    pub fscore: f64,
    pub n_samples: usize,
}

/// One row per family present, then an `average` row that weights each
/// family equally, like a per-category table.
pub fn summarize(m: &[SampleMetrics]) -> Vec<FamilyRow> {
    let mut rows: Vec<FamilyRow> = ShapeFamily::ALL
        .iter()
        .filter_map(|&f| {
            let sel: Vec<SampleMetrics> = m.iter().filter(|x| x.family == f).cloned().collect();
            (!sel.is_empty()).then(|| {
                let (cd, fs) = mean_metrics(&sel);
                FamilyRow {
                    family: f.name().to_string(),
                    cd_e3: cd * 1e3,
                    fscore: fs,
                    n_samples: sel.len(),
                }
            })
        })
        .collect();
    if !rows.is_empty() {
        let k = rows.len() as f64;
        rows.push(FamilyRow {
            family: "average".into(),
            cd_e3: rows.iter().map(|r| r.cd_e3).sum::<f64>() / k,
            fscore: rows.iter().map(|r| r.fscore).sum::<f64>() / k,
            n_samples: rows.iter().map(|r| r.n_samples).sum(),
        });
    }
    rows
}
