use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig};
use super::eval::{evaluate, mean_metrics, predict_all_observed, score_all};
use super::invariants::InvariantStats;
use super::loss::total_loss;
use super::model::PgNet;
use super::optim::{cosine_lr, AdamW};
use crate::autodiff::{ParamStore, Tape, Tensor};
use crate::data::{Dataset, SampleTriple, Split};
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CKPT: &str = "final.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";
pub const CONFIG_FILE: &str = "config.json";

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub lr: f64,
    pub train_loss: Option<f64>,
    pub val_cd: Option<f64>,
    pub val_fscore: Option<f64>,
}

/// Model and training configuration stored next to checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Check structural invariants on every forward pass, training and
    /// validation alike.
    pub check_invariants: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore,
    /// Parameters at the lowest validation CD (the final ones without a
    /// validation split).
    pub best: ParamStore,
    pub best_step: Option<usize>,
    pub log: Vec<LogRecord>,
    pub invariants: Option<InvariantStats>,
}

impl TrainOutcome {
    pub fn val_history(&self) -> Vec<(usize, f64)> {
        self.log.iter().filter_map(|r| r.val_cd.map(|v| (r.step, v))).collect()
    }
}

struct SampleGrad {
    loss: f64,
    grads: Vec<Tensor>,
    stats: Option<InvariantStats>,
}

fn sample_grad(model: &PgNet, store: &ParamStore, s: &SampleTriple, check: bool) -> Result<SampleGrad> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, store, &s.partial, &s.prior)?;
    let stats = check.then(|| InvariantStats::observe(&tape, &out, &model.cfg));
    let gt = tape.constant(s.gt.to_tensor());
    let loss = total_loss(&mut tape, out.coarse, &out.levels, gt)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Ok(SampleGrad {
            loss: value,
            grads: Vec::new(),
            stats,
        });
    }
    tape.backward(loss)?;
    Ok(SampleGrad {
        loss: value,
        grads: tape.param_grads(store),
        stats,
    })
}

/// Endless stream of training indices: one fresh permutation per epoch.
struct BatchOrder {
    rng: ChaCha8Rng,
    n: usize,
    queue: Vec<usize>,
}

impl BatchOrder {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xBA7C_0DE5_0000_0001),
            n,
            queue: Vec::new(),
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.queue.is_empty() {
                    self.queue = (0..self.n).collect();
                    self.queue.shuffle(&mut self.rng);
                    self.queue.reverse();
                }
                self.queue.pop().expect("refilled")
            })
            .collect()
    }
}

/// Runs the optimizer from `store`. Batch items are processed in parallel;
/// their losses and gradients are reduced in batch order, so the result does
/// not depend on the thread count.
pub fn train_loop(
    model: &PgNet,
    mut store: ParamStore,
    train: &[&SampleTriple],
    val: &[&SampleTriple],
    cfg: &TrainConfig,
    opts: &TrainOptions,
    on_record: &mut dyn FnMut(&LogRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let mut opt = AdamW::new(&store, cfg);
    let mut order = BatchOrder::new(train.len(), cfg.seed);
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut invariants = opts.check_invariants.then(InvariantStats::default);

    let validate = |store: &ParamStore,
                    step: usize,
                    best: &mut Option<(f64, usize, ParamStore)>,
                    inv: &mut Option<InvariantStats>|
     -> Result<(Option<f64>, Option<f64>)> {
        if val.is_empty() {
            return Ok((None, None));
        }
        let metrics = match inv.as_mut() {
            Some(acc) => {
                let (preds, stats) = predict_all_observed(model, store, val)?;
                acc.merge(&stats);
                score_all(&preds, val, cfg.tau)?
            }
            None => evaluate(model, store, val, cfg.tau)?,
        };
        let (cd, fs) = mean_metrics(&metrics);
        if best.as_ref().is_none_or(|b| cd < b.0) {
            *best = Some((cd, step, store.clone()));
        }
        Ok((Some(cd), Some(fs)))
    };

    for step in 0..cfg.iterations {
        let (val_cd, val_fscore) = if step % cfg.val_every == 0 {
            validate(&store, step, &mut best, &mut invariants)?
        } else {
            (None, None)
        };
        let lr = cosine_lr(cfg.lr, step, cfg.iterations);
        let batch = order.next_batch(cfg.batch_size);
        let batch_ids = || {
            batch
                .iter()
                .map(|&i| train[i].id.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        };
        let results: Vec<SampleGrad> = batch
            .par_iter()
            .map(|&i| sample_grad(model, &store, train[i], opts.check_invariants))
            .collect::<Result<_>>()
            .map_err(|e| match e {
                Error::NonFinite(op) => Error::NonFinite(format!(
                    "{op} in training forward at step {step}, batch [{}]",
                    batch_ids()
                )),
                e => e,
            })?;

        let mut loss = 0.0;
        let mut grads: Option<Vec<Tensor>> = None;
        for r in &results {
            loss += r.loss;
            if let (Some(acc), Some(s)) = (invariants.as_mut(), r.stats.as_ref()) {
                acc.merge(s);
            }
            match grads.as_mut() {
                None => grads = Some(r.grads.clone()),
                Some(g) => g.iter_mut().zip(&r.grads).for_each(|(a, b)| a.add_assign(b)),
            }
        }
        let b = batch.len() as f64;
        loss /= b;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at step {step}, batch [{}]",
                batch_ids()
            )));
        }
        let grads: Vec<Tensor> = grads
            .expect("non-empty batch")
            .iter()
            .map(|g| g.map(|v| v / b))
            .collect();
        opt.step(&mut store, &grads, lr)?;

        let rec = LogRecord {
            step,
            lr,
            train_loss: Some(loss),
            val_cd,
            val_fscore,
        };
        on_record(&rec)?;
        log.push(rec);
    }

    let (val_cd, val_fscore) = validate(&store, cfg.iterations, &mut best, &mut invariants)?;
    let rec = LogRecord {
        step: cfg.iterations,
        lr: cosine_lr(cfg.lr, cfg.iterations, cfg.iterations),
        train_loss: None,
        val_cd,
        val_fscore,
    };
    on_record(&rec)?;
    log.push(rec);

    let (best, best_step) = match best {
        Some((_, step, params)) => (params, Some(step)),
        None => (store.clone(), None),
    };
    Ok(TrainOutcome {
        params: store,
        best,
        best_step,
        log,
        invariants,
    })
}

/// Trains on a loaded dataset and writes `metrics.jsonl`, `final.ckpt`,
/// `best.ckpt` and `config.json` into `out`.
pub fn train_to_dir(data: &Dataset, run: &RunConfig, opts: &TrainOptions, out: &Path) -> Result<TrainOutcome> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (store, model) = PgNet::init(&run.model, run.train.seed)?;
    let train = data.split(Split::Train);
    let val = data.split(Split::Val);

    let metrics_path = out.join(METRICS_FILE);
    let file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut write = |r: &LogRecord| -> Result<()> {
        let line = serde_json::to_string(r)?;
        writeln!(w, "{line}").map_err(|e| Error::io(&metrics_path, e))
    };
    let outcome = train_loop(&model, store, &train, &val, &run.train, opts, &mut write)?;
    w.flush().map_err(|e| Error::io(&metrics_path, e))?;

    outcome.params.save(&out.join(FINAL_CKPT))?;
    outcome.best.save(&out.join(BEST_CKPT))?;
    let cfg_path = out.join(CONFIG_FILE);
    let mut text = serde_json::to_string_pretty(run)?;
    text.push('\n');
    fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(outcome)
}
