//! Command line front end: dataset generation, training, evaluation and
//! ablation sweeps.

mod manifest;
mod table;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use manifest::{dataset_hash, RunManifest};
use pgnet::autodiff::ParamStore;
use pgnet::data::{build_dataset, Dataset, DatasetConfig, PriorBias, SampleTriple, ShapeFamily, Split};
use pgnet::geom::io::write_ply;
use pgnet::pipeline::{
    evaluate_prior, predict_all, score_all, summarize, train_to_dir, Ablation, PgNet, RunConfig, TrainOptions,
    BEST_CKPT, CONFIG_FILE, FINAL_CKPT, METRICS_FILE,
};
use pgnet::{Error, Result};
use table::VariantRows;

#[derive(Debug, Parser)]
#[command(
    name = "pgnet",
    version,
    about = "Point-cloud completion by correcting a generative shape prior"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset of partial / prior / ground-truth triples.
    GenData(GenDataArgs),
    /// Train a model and write checkpoints plus a metrics log.
    Train(TrainArgs),
    /// Evaluate trained runs per shape family.
    Eval(EvalArgs),
    /// Train and evaluate the full model against its ablations.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Comma-separated families (sphere, box, cylinder, l-bracket, lamp).
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<ShapeFamily>>,
    /// default, zero or strong.
    #[arg(long, default_value = "default")]
    bias_profile: String,
}

#[derive(Debug, Clone, Args)]
struct TrainFlags {
    #[arg(long)]
    data: PathBuf,
    /// JSON file with `model` and `train` sections; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Check structural invariants on every forward pass.
    #[arg(long)]
    check_invariants: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated ablation flags.
    #[arg(long, default_value = "")]
    ablate: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CheckpointArg {
    Best,
    Final,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Run directories produced by `train`; several give a comparison table.
    #[arg(long = "run")]
    runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "val")]
    split: SplitArg,
    #[arg(long, value_enum, default_value = "best")]
    checkpoint: CheckpointArg,
    /// F-score distance threshold.
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
    /// Also score the untouched prior as a baseline.
    #[arg(long)]
    with_prior: bool,
    /// Use the ground truth as the prediction (sanity path).
    #[arg(long)]
    oracle_gt: bool,
    /// Directory for `eval.csv`, the run manifest and exported clouds.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write each predicted cloud as PLY under `<out>/clouds/<variant>/`.
    #[arg(long, requires = "out")]
    export: bool,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of ablations to compare against the full model.
    #[arg(long, value_delimiter = ',')]
    only: Option<Vec<String>>,
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
}

/// Caps rayon's pool from `PGNET_THREADS`.
fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PGNET_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Invalid(format!("PGNET_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = DatasetConfig {
        n_samples: a.samples,
        families: a.families.unwrap_or_else(|| ShapeFamily::ALL.to_vec()),
        master_seed: a.seed,
        bias: PriorBias::by_name(&a.bias_profile)?,
        ..Default::default()
    };
    let m = build_dataset(&cfg, &a.out)?;
    let mut rm = RunManifest::new("gen-data", serde_json::to_value(&cfg)?, a.seed, dataset_hash(&a.out)?);
    rm.outputs = vec![a.out.join(pgnet::data::MANIFEST_FILE).display().to_string()];
    rm.write(&a.out)?;
    let val = m.samples.iter().filter(|s| s.split == Split::Val).count();
    println!(
        "wrote {} samples ({} train, {val} val) to {}",
        m.samples.len(),
        m.samples.len() - val,
        a.out.display()
    );
    Ok(())
}

fn resolve_config(f: &TrainFlags, ablation: Ablation) -> Result<RunConfig> {
    let mut cfg = match &f.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig {
            model: Default::default(),
            train: Default::default(),
        },
    };
    if let Some(v) = f.iters {
        cfg.train.iterations = v;
    }
    if let Some(v) = f.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = f.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = f.batch {
        cfg.train.batch_size = v;
    }
    for name in ablation.active() {
        cfg.model.ablation = cfg.model.ablation.with(name)?;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

fn load_dataset(dir: &Path) -> Result<(Dataset, String)> {
    let data = Dataset::load(dir)?;
    let hash = dataset_hash(dir)?;
    Ok((data, hash))
}

fn train_one(data: &Dataset, hash: &str, cfg: &RunConfig, check: bool, out: &Path) -> Result<()> {
    create_dir(out)?;
    let opts = TrainOptions {
        check_invariants: check,
    };
    let outcome = train_to_dir(data, cfg, &opts, out)?;
    let mut rm = RunManifest::new("train", serde_json::to_value(cfg)?, cfg.train.seed, hash.to_string());
    rm.variant = Some(cfg.model.ablation.to_string());
    rm.outputs = [METRICS_FILE, FINAL_CKPT, BEST_CKPT, CONFIG_FILE]
        .iter()
        .map(|f| out.join(f).display().to_string())
        .collect();
    rm.write(out)?;

    let hist = outcome.val_history();
    if let (Some(first), Some(last)) = (hist.first(), hist.last()) {
        println!(
            "[{}] val CD {:.5} -> {:.5} (best at step {})",
            cfg.model.ablation,
            first.1,
            last.1,
            outcome.best_step.unwrap_or(0)
        );
    }
    if let Some(inv) = &outcome.invariants {
        println!(
            "invariants over {} passes: cardinality errors {}, attention row error {:.1e}, CSSC row error {:.1e}, gate violations {}/{}",
            inv.passes, inv.cardinality_errors, inv.max_attention_err, inv.max_cssc_err, inv.gate_violations, inv.gate_checks
        );
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let ablation = Ablation::parse_list(&a.ablate)?;
    let cfg = resolve_config(&a.flags, ablation)?;
    let (data, hash) = load_dataset(&a.flags.data)?;
    train_one(&data, &hash, &cfg, a.flags.check_invariants, &a.out)
}

fn select(data: &Dataset, split: SplitArg) -> Vec<&SampleTriple> {
    match split {
        SplitArg::Train => data.split(Split::Train),
        SplitArg::Val => data.split(Split::Val),
        SplitArg::All => data.samples.iter().collect(),
    }
}

/// Loads a run's config and checkpoint; a layout mismatch is a state error.
fn load_run(dir: &Path, which: CheckpointArg) -> Result<(RunConfig, PgNet, ParamStore)> {
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let file = match which {
        CheckpointArg::Best => BEST_CKPT,
        CheckpointArg::Final => FINAL_CKPT,
    };
    let store = ParamStore::load(&dir.join(file))?;
    let model = PgNet::attach(&cfg.model, &store).map_err(|e| {
        Error::Mismatch(format!(
            "{} does not match {}: {e}",
            file,
            dir.join(CONFIG_FILE).display()
        ))
    })?;
    Ok((cfg, model, store))
}

fn unique_label(label: String, taken: &[VariantRows]) -> String {
    if !taken.iter().any(|v| v.variant == label) {
        return label;
    }
    (2..)
        .map(|i| format!("{label}#{i}"))
        .find(|l| !taken.iter().any(|v| &v.variant == l))
        .expect("unbounded")
}

fn eval(a: EvalArgs) -> Result<()> {
    if a.runs.is_empty() && !a.oracle_gt && !a.with_prior {
        return Err(Error::Invalid("eval needs --run, --with-prior or --oracle-gt".into()));
    }
    let (data, hash) = load_dataset(&a.data)?;
    let samples = select(&data, a.split);
    if samples.is_empty() {
        return Err(Error::Invalid(format!(
            "the {:?} split of {} is empty",
            a.split,
            a.data.display()
        )));
    }
    let mut variants: Vec<VariantRows> = Vec::new();
    let mut configs = Vec::new();
    for run in &a.runs {
        let (cfg, model, store) = load_run(run, a.checkpoint)?;
        let preds = predict_all(&model, &store, &samples)?;
        let label = unique_label(cfg.model.ablation.to_string(), &variants);
        if let (true, Some(out)) = (a.export, &a.out) {
            export(&out.join("clouds").join(&label), &samples, &preds)?;
        }
        variants.push(VariantRows {
            variant: label,
            rows: summarize(&score_all(&preds, &samples, a.tau)?),
        });
        configs.push(serde_json::to_value(&cfg)?);
    }
    if a.with_prior {
        variants.push(VariantRows {
            variant: "prior".into(),
            rows: summarize(&evaluate_prior(&samples, a.tau)?),
        });
    }
    if a.oracle_gt {
        let gts: Vec<_> = samples.iter().map(|s| s.gt.clone()).collect();
        variants.push(VariantRows {
            variant: "oracle-gt".into(),
            rows: summarize(&score_all(&gts, &samples, a.tau)?),
        });
    }

    print!(
        "{}",
        table::wide(
            &variants,
            "Chamfer distance (L1) x1e-3, lower is better",
            |r| r.cd_e3,
            3
        )
    );
    println!();
    print!(
        "{}",
        table::wide(
            &variants,
            &format!("F-score@{}, higher is better", a.tau),
            |r| r.fscore,
            3
        )
    );

    if let Some(out) = &a.out {
        create_dir(out)?;
        let csv = out.join("eval.csv");
        write_file(&csv, &table::to_csv(&variants))?;
        let config = serde_json::json!({
            "runs": a.runs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "run_configs": configs,
            "split": format!("{:?}", a.split).to_lowercase(),
            "tau": a.tau,
        });
        let mut rm = RunManifest::new("eval", config, 0, hash);
        rm.outputs = vec![csv.display().to_string()];
        rm.write(out)?;
    }
    Ok(())
}

fn export(dir: &Path, samples: &[&SampleTriple], preds: &[pgnet::geom::PointCloud]) -> Result<()> {
    create_dir(dir)?;
    for (s, p) in samples.iter().zip(preds) {
        write_ply(p, &dir.join(format!("{}.ply", s.id)))?;
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let names: Vec<String> = match &a.only {
        Some(list) => list
            .iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
        None => Ablation::TABLE.iter().map(|s| s.to_string()).collect(),
    };
    let mut variants = vec![Ablation::default()];
    for n in &names {
        variants.push(Ablation::default().with(n)?);
    }
    let base = resolve_config(&a.flags, Ablation::default())?;
    let (data, hash) = load_dataset(&a.flags.data)?;
    let val = data.split(Split::Val);
    let samples = if val.is_empty() {
        data.samples.iter().collect()
    } else {
        val
    };
    create_dir(&a.out)?;

    let mut rows = Vec::new();
    for ab in &variants {
        let mut cfg = base.clone();
        cfg.model.ablation = *ab;
        let dir = a.out.join(ab.to_string());
        train_one(&data, &hash, &cfg, a.flags.check_invariants, &dir)?;
        let (_, model, store) = load_run(&dir, CheckpointArg::Best)?;
        let preds = predict_all(&model, &store, &samples)?;
        rows.push(VariantRows {
            variant: ab.to_string(),
            rows: summarize(&score_all(&preds, &samples, a.tau)?),
        });
    }
    let report = table::ablation(&rows);
    print!("{report}");
    let csv = a.out.join("ablation.csv");
    write_file(&csv, &table::to_csv(&rows))?;
    write_file(&a.out.join("ablation.txt"), &report)?;

    let mut rm = RunManifest::new("ablate", serde_json::to_value(&base)?, base.train.seed, hash);
    rm.outputs = std::iter::once(csv.display().to_string())
        .chain(variants.iter().map(|v| a.out.join(v.to_string()).display().to_string()))
        .collect();
    rm.write(&a.out)?;
    Ok(())
}
