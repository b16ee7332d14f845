use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pgnet::data::{read_manifest, Dataset, Split, MANIFEST_FILE};
use pgnet::geom::io::read_ply;
use pgnet::pipeline::{PgNet, RunConfig, BEST_CKPT, CONFIG_FILE, FINAL_CKPT, METRICS_FILE};

fn pgnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgnet")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = pgnet(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    pgnet(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dataset(dir: &Path, samples: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("data-{samples}-{seed}"));
    ok(&[
        "gen-data",
        "--samples",
        &samples.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&out),
    ]);
    out
}

fn train(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--data", s(data), "--out", s(out), "--batch", "2"];
    if !extra.contains(&"--iters") {
        args.extend(["--iters", "2"]);
    }
    args.extend_from_slice(extra);
    ok(&args);
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_data_single_sample() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 1, 0);
    let m = read_manifest(&data).unwrap();
    assert_eq!(m.samples.len(), 1);
    let e = &m.samples[0];
    for f in [&e.files.partial, &e.files.prior, &e.files.gt] {
        assert!(data.join(f).is_file(), "{f}");
    }
    let d = Dataset::load(&data).unwrap();
    assert_eq!(d.samples[0].partial.len(), 256);
    assert!(data.join("run_manifest.json").is_file());
}

#[test]
fn gen_data_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dataset(dir.path(), 6, 3);
    let b = dir.path().join("again");
    ok(&["gen-data", "--samples", "6", "--seed", "3", "--out", s(&b)]);
    let m = read_manifest(&a).unwrap();
    let mut files = vec![MANIFEST_FILE.to_string()];
    for e in &m.samples {
        files.extend([&e.files.partial, &e.files.prior, &e.files.gt].map(String::clone));
    }
    assert_eq!(files.len(), 19);
    for f in &files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f:?}");
    }
    let (ma, mb) = (json(&a.join("run_manifest.json")), json(&b.join("run_manifest.json")));
    assert_eq!(ma["input_hash"], mb["input_hash"]);
    let other = dataset(dir.path(), 6, 4);
    assert_ne!(
        fs::read(a.join(MANIFEST_FILE)).unwrap(),
        fs::read(other.join(MANIFEST_FILE)).unwrap()
    );
}

#[test]
fn default_manifest_schema() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 10, 0);
    let m = json(&data.join(MANIFEST_FILE));
    assert_eq!(m["master_seed"], 0);
    let samples = m["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 10);
    for e in samples {
        for key in ["id", "family", "files", "crop_direction", "split"] {
            assert!(e.get(key).is_some(), "{key} missing in {e}");
        }
        assert_eq!(e["crop_direction"].as_array().unwrap().len(), 3);
        assert!(["train", "val"].contains(&e["split"].as_str().unwrap()), "{e}");
    }
    let rm = json(&data.join("run_manifest.json"));
    for key in [
        "command",
        "args",
        "config",
        "seed",
        "input_hash",
        "outputs",
        "created_unix",
    ] {
        assert!(rm.get(key).is_some(), "{key} missing in run manifest");
    }
    assert_eq!(rm["command"], "gen-data");
    assert_eq!(rm["input_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&["gen-data", "--out", s(&p.join("x")), "--families", "teapot"]), 2);
    assert_eq!(code(&["gen-data", "--out", s(&p.join("x")), "--samples", "0"]), 2);
    assert_eq!(
        code(&["gen-data", "--out", s(&p.join("x")), "--bias-profile", "wild"]),
        2
    );
    assert_eq!(
        code(&["train", "--data", s(&p.join("missing")), "--out", s(&p.join("r"))]),
        2
    );

    let data = dataset(p, 10, 0);
    assert_eq!(
        code(&[
            "train",
            "--data",
            s(&data),
            "--out",
            s(&p.join("r")),
            "--ablate",
            "no_such_flag"
        ]),
        2
    );
    assert_eq!(code(&["eval", "--data", s(&data)]), 2);

    // A checkpoint that does not fit its config is a state mismatch.
    let run = p.join("run");
    train(&data, &run, &["--iters", "0"]);
    let mut cfg: RunConfig = serde_json::from_value(json(&run.join(CONFIG_FILE))).unwrap();
    cfg.model.seed.n_c += 1;
    fs::write(run.join(CONFIG_FILE), serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(code(&["eval", "--data", s(&data), "--run", s(&run)]), 3);

    // A runaway learning rate overflows the loss.
    assert_eq!(
        code(&[
            "train",
            "--data",
            s(&data),
            "--out",
            s(&p.join("nan")),
            "--iters",
            "6",
            "--batch",
            "2",
            "--lr",
            "1e300"
        ]),
        4
    );
}

#[test]
fn zero_iterations_write_the_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 10, 0);
    let run = dir.path().join("run");
    train(&data, &run, &["--iters", "0", "--seed", "5"]);
    let (init, _) = PgNet::init(&Default::default(), 5).unwrap();
    assert_eq!(fs::read(run.join(FINAL_CKPT)).unwrap(), init.to_checkpoint_bytes());
    assert_eq!(fs::read(run.join(BEST_CKPT)).unwrap(), init.to_checkpoint_bytes());
    let log = fs::read_to_string(run.join(METRICS_FILE)).unwrap();
    assert_eq!(log.lines().count(), 1);
    let rec: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(rec["step"], 0);
    assert!(rec["val_cd"].as_f64().unwrap() > 0.0);
}

#[test]
fn ablation_flags_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 10, 0);
    let run = dir.path().join("inpaint");
    train(&data, &run, &["--ablate", "inpaint_mode"]);
    let rm = json(&run.join("run_manifest.json"));
    assert_eq!(rm["variant"], "inpaint_mode");
    assert_eq!(rm["command"], "train");
    let cfg: RunConfig = serde_json::from_value(json(&run.join(CONFIG_FILE))).unwrap();
    assert!(cfg.model.ablation.inpaint_mode);
    assert_eq!(cfg.train.iterations, 2);
    let lines = fs::read_to_string(run.join(METRICS_FILE)).unwrap();
    assert_eq!(lines.lines().count(), 3);
}

#[test]
fn paired_eval_table_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 20, 0);
    let (full, ablated) = (dir.path().join("full"), dir.path().join("nsg"));
    train(&data, &full, &[]);
    train(&data, &ablated, &["--ablate", "no_seed_grounding"]);
    let out = dir.path().join("eval");
    let stdout = ok(&[
        "eval",
        "--data",
        s(&data),
        "--run",
        s(&full),
        "--run",
        s(&ablated),
        "--run",
        s(&full),
        "--with-prior",
        "--oracle-gt",
        "--out",
        s(&out),
        "--export",
    ]);
    assert!(
        stdout.contains("Chamfer distance") && stdout.contains("F-score@0.01"),
        "{stdout}"
    );
    for label in ["full", "no_seed_grounding", "full#2", "prior", "oracle-gt"] {
        assert!(
            stdout.lines().any(|l| l.starts_with(label)),
            "{label} row missing:\n{stdout}"
        );
    }
    let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "variant,family,cd_e3,fscore,n_samples");
    let oracle: Vec<&str> = csv.lines().filter(|l| l.starts_with("oracle-gt,average")).collect();
    assert_eq!(oracle.len(), 1);
    let f: Vec<&str> = oracle[0].split(',').collect();
    assert_eq!((f[2], f[3]), ("0", "1"));

    let n_val = Dataset::load(&data).unwrap().split(Split::Val).len();
    let exported: Vec<_> = fs::read_dir(out.join("clouds").join("full")).unwrap().collect();
    assert_eq!(exported.len(), n_val);
    let first = exported[0].as_ref().unwrap().path();
    assert_eq!(read_ply(&first).unwrap().len(), 256);
    assert_eq!(json(&out.join("run_manifest.json"))["command"], "eval");
}
