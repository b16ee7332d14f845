use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::geom::{chamfer_l1, chamfer_l1_var, PointCloud};

/// Unweighted mean of the L1 Chamfer distance of the scaffold and of every
/// refinement level against the full-resolution ground truth.
pub fn total_loss(tape: &mut Tape, coarse: Var, levels: &[Var], gt: Var) -> Result<Var> {
    let mut acc = chamfer_l1_var(tape, coarse, gt)?;
    for &l in levels {
        let cd = chamfer_l1_var(tape, l, gt)?;
        acc = tape.add(acc, cd)?;
    }
    tape.div_scalar(acc, (levels.len() + 1) as f64)
}

/// Plain-value counterpart of [`total_loss`]; `levels[0]` is the scaffold.
pub fn total_loss_value(levels: &[PointCloud], gt: &PointCloud) -> Result<f64> {
    if levels.is_empty() {
        return Err(Error::invalid("total_loss: no prediction levels"));
    }
    let sum: f64 = levels.iter().map(|l| chamfer_l1(l, gt)).sum();
    Ok(sum / levels.len() as f64)
}
