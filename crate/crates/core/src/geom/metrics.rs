use super::cloud::{euclid, l1, PointCloud};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// For every point of `from`, the index of its L1-nearest point in `to`
/// (lowest index on ties) and that distance.
pub fn nearest_l1(from: &[[f64; 3]], to: &[[f64; 3]]) -> (Vec<usize>, Vec<f64>) {
    let mut idx = Vec::with_capacity(from.len());
    let mut dist = Vec::with_capacity(from.len());
    for p in from {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (j, q) in to.iter().enumerate() {
            let d = l1(p, q);
            if d < bd {
                bd = d;
                best = j;
            }
        }
        idx.push(best);
        dist.push(bd);
    }
    (idx, dist)
}

fn nearest_euclid(from: &[[f64; 3]], to: &[[f64; 3]]) -> Vec<f64> {
    from.iter()
        .map(|p| to.iter().map(|q| euclid(p, q)).fold(f64::INFINITY, f64::min))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Symmetric L1 Chamfer distance: mean L1 distance from each point of `a` to
/// its L1-nearest point of `b`, plus the same from `b` to `a`.
pub fn chamfer_l1(a: &PointCloud, b: &PointCloud) -> f64 {
    let (_, dab) = nearest_l1(a.points(), b.points());
    let (_, dba) = nearest_l1(b.points(), a.points());
    mean(&dab) + mean(&dba)
}

/// Symmetric Chamfer distance on squared Euclidean distances, reported next
/// to the L1 variant for reference.
pub fn chamfer_l2_squared(a: &PointCloud, b: &PointCloud) -> f64 {
    let sq = |v: Vec<f64>| v.into_iter().map(|d| d * d).collect::<Vec<_>>();
    mean(&sq(nearest_euclid(a.points(), b.points()))) + mean(&sq(nearest_euclid(b.points(), a.points())))
}

/// Differentiable L1 Chamfer distance between two `N x 3` nodes.
pub fn chamfer_l1_var(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let ta = tape.value(a);
    let tb = tape.value(b);
    if ta.cols() != 3 || tb.cols() != 3 || ta.rank() != 2 || tb.rank() != 2 {
        return Err(Error::shape("chamfer_l1", ta.shape(), tb.shape()));
    }
    if ta.rows() == 0 || tb.rows() == 0 {
        return Err(Error::invalid("chamfer_l1: empty cloud"));
    }
    let pa: Vec<[f64; 3]> = ta.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    let pb: Vec<[f64; 3]> = tb.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    let (nab, _) = nearest_l1(&pa, &pb);
    let (nba, _) = nearest_l1(&pb, &pa);
    let ab = directed_term(tape, a, b, &nab)?;
    let ba = directed_term(tape, b, a, &nba)?;
    tape.add(ab, ba)
}

fn directed_term(tape: &mut Tape, from: Var, to: Var, nn: &[usize]) -> Result<Var> {
    let n = nn.len() as f64;
    let matched = tape.gather_rows(to, nn)?;
    let diff = tape.sub(from, matched)?;
    let a = tape.abs(diff)?;
    let s = tape.sum(a)?;
    tape.div_scalar(s, n)
}

/// Precision, recall and F-score at Euclidean threshold `tau` (strict `<`).
pub fn fscore(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<FScore> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::invalid("fscore: tau must be positive"));
    }
    let frac = |from: &PointCloud, to: &PointCloud| {
        let d = nearest_euclid(from.points(), to.points());
        d.iter().filter(|&&v| v < tau).count() as f64 / d.len() as f64
    };
    let precision = frac(pred, gt);
    let recall = frac(gt, pred);
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(FScore { precision, recall, f })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}
