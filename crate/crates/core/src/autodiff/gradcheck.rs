use rayon::prelude::*;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
    pub max_rel_error: f64,
    /// Entry with the largest error, as (parameter name, flat offset).
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: (f64, f64),
    pub checked: usize,
    /// Entries skipped because a `+eps`/`-eps` probe crossed a kink
    /// (different neighbour, argmax, ReLU or sign pattern).
    pub excluded_ties: usize,
}

/// Compares reverse-mode gradients of a scalar function of the trainable
/// parameters in `store` with central differences of step `eps`.
pub fn grad_check<F>(store: &ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var> + Sync,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::invalid("grad_check: eps must be positive"));
    }
    let mut tape = Tape::new();
    let root = f(&mut tape, store)?;
    let signature = tape.choice_signature();
    tape.backward(root)?;
    let analytic = tape.param_grads(store);

    let entries: Vec<(ParamId, usize)> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(id, p)| (0..p.tensor.len()).map(move |k| (id, k)))
        .collect();

    let eval = |s: &ParamStore| -> Result<(f64, u64)> {
        let mut t = Tape::new();
        let r = f(&mut t, s)?;
        Ok((t.value(r).item(), t.choice_signature()))
    };

    type Worst = (f64, Option<(ParamId, usize)>, (f64, f64));
    let partials: Vec<Result<(Worst, usize, usize)>> = entries
        .par_chunks(32)
        .map(|chunk| {
            let mut work = store.clone();
            let mut worst = (0.0f64, None, (0.0, 0.0));
            let mut checked = 0;
            let mut excluded = 0;
            for &(id, k) in chunk {
                let orig = work.get(id).tensor.data()[k];
                work.get_mut(id).tensor.data_mut()[k] = orig + eps;
                let (fp, sp) = eval(&work)?;
                work.get_mut(id).tensor.data_mut()[k] = orig - eps;
                let (fm, sm) = eval(&work)?;
                work.get_mut(id).tensor.data_mut()[k] = orig;
                if sp != signature || sm != signature {
                    excluded += 1;
                    continue;
                }
                let numeric = (fp - fm) / (2.0 * eps);
                let a = analytic[id.0].data()[k];
                let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
                checked += 1;
                if rel > worst.0 || worst.1.is_none() {
                    worst = (rel, Some((id, k)), (a, numeric));
                }
            }
            Ok((worst, checked, excluded))
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        checked: 0,
        excluded_ties: 0,
    };
    for p in partials {
        let ((rel, at, values), checked, excluded) = p?;
        report.checked += checked;
        report.excluded_ties += excluded;
        if let Some((id, k)) = at {
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.get(id).name.clone(), k));
                report.worst_values = values;
            }
        }
    }
    Ok(report)
}
