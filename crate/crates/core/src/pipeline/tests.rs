use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, ParamStore, Tape, Tensor};
use crate::data::{generate, DatasetConfig, SampleTriple, Split};
use crate::encoders::EncoderConfig;
use crate::geom::PointCloud;
use crate::nn::AttentionSpec;
use crate::oracle::{self, Mat};
use crate::refine::GrbConfig;
use crate::seed::{FusionQuery, SeedConfig};

const STAGE_EPS: f64 = 1e-3;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn cloud(r: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| [0; 3].map(|_| r.random_range(-0.5..0.5))).collect()).unwrap()
}

fn small_cfg(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            n_e: 8,
            dim: 8,
            k_local: 4,
            edge_width: 8,
            attention: AttentionSpec::new(2, 8),
        },
        seed: SeedConfig {
            n_c: 4,
            dim: 8,
            attention: AttentionSpec::new(2, 8),
            fusion_query: FusionQuery::Generative,
        },
        grbs: vec![GrbConfig { r: 2, k: 3, dim: 8 }; 2],
        ablation,
    }
}

/// Small random biases so that zero-initialised paths are exercised too.
fn perturb(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    for p in store.iter_mut() {
        for v in p.tensor.data_mut() {
            *v += r.random_range(-0.05..0.05);
        }
    }
}

fn oracle_levels(model: &PgNet, store: &ParamStore, partial: &PointCloud, prior: &PointCloud) -> Vec<Mat> {
    let cfg = &model.cfg;
    let ab = cfg.ablation;
    let (n_e, k) = (cfg.encoder.n_e, cfg.encoder.k_local);
    let po = oracle::rows(partial);
    let (ci, fo0) = oracle::encode(&po, store, &model.enc_obs, &model.phi_enc, n_e, k);
    let co: Mat = ci.iter().map(|&i| po[i].clone()).collect();
    let fo = oracle::salient(&fo0, &co, store, &model.salient, k);
    let fg = if ab.inpaint_mode {
        fo.clone()
    } else {
        let (_, fg0) = oracle::encode(&oracle::rows(prior), store, &model.enc_gen, &model.phi_enc, n_e, k);
        oracle::grounding(&fg0, &fo, store, &model.grounding, !ab.no_prior_feature_grounding)
    };
    let pc = oracle::seed(&fg, &fo, store, &model.seed, !ab.no_seed_grounding);
    let mut levels = vec![pc.clone()];
    levels.extend(oracle::refine(store, &model.grbs, &pc, &co, &fo, &fg, ab.grb_flags()));
    levels
}

fn variants() -> Vec<Ablation> {
    let mut v = vec![Ablation::default()];
    v.extend(Ablation::NAMES.iter().map(|n| Ablation::default().with(n).unwrap()));
    v
}

#[test]
fn sixteen_point_sample_matches_composed_oracle_per_level() {
    for ab in variants() {
        for seed in 0..3 {
            let (mut store, model) = PgNet::init(&small_cfg(ab), seed).unwrap();
            perturb(&mut store, 100 + seed);
            let partial = cloud(&mut rng(200 + seed), 16);
            let prior = cloud(&mut rng(300 + seed), 16);
            let got = model.predict(&store, &partial, &prior).unwrap();
            let want = oracle_levels(&model, &store, &partial, &prior);
            assert_eq!(got.len(), 3);
            for (g, w) in got.iter().zip(&want) {
                let d = oracle::max_diff(w, &g.to_tensor());
                assert!(d < 1e-10, "{ab} seed {seed}: {d}");
            }
        }
    }
}

#[test]
fn level_cardinalities_follow_upsampling_rates() {
    let mut cfg = small_cfg(Ablation::default());
    cfg.grbs = vec![GrbConfig { r: 2, k: 3, dim: 8 }, GrbConfig { r: 3, k: 3, dim: 8 }];
    let (store, model) = PgNet::init(&cfg, 1).unwrap();
    let got = model
        .predict(&store, &cloud(&mut rng(1), 20), &cloud(&mut rng(2), 12))
        .unwrap();
    let sizes: Vec<usize> = got.iter().map(PointCloud::len).collect();
    assert_eq!(sizes, [4, 8, 24]);
    assert_eq!(cfg.level_sizes(), sizes);
}

#[test]
fn zero_displacement_heads_replicate_the_scaffold() {
    for seed in 0..3 {
        let (mut store, model) = PgNet::init(&small_cfg(Ablation::default()), seed).unwrap();
        for p in model.displacement_prefixes() {
            assert!(store.zero_prefix(&p) > 0);
        }
        let got = model
            .predict(&store, &cloud(&mut rng(seed), 16), &cloud(&mut rng(seed + 9), 16))
            .unwrap();
        assert_eq!(got[1], got[0].replicate(2));
        assert_eq!(got[2], got[0].replicate(4));
    }
}

#[test]
fn inpaint_mode_ignores_the_prior() {
    let (store, model) = PgNet::init(&small_cfg(Ablation::default().with("inpaint_mode").unwrap()), 4).unwrap();
    let partial = cloud(&mut rng(5), 16);
    let base = model.predict(&store, &partial, &cloud(&mut rng(6), 16)).unwrap();
    for s in 0..5 {
        let other = cloud(&mut rng(60 + s), 10 + s as usize);
        assert_eq!(model.predict(&store, &partial, &other).unwrap(), base);
    }
}

#[test]
fn forward_rejects_too_small_clouds() {
    let (store, model) = PgNet::init(&small_cfg(Ablation::default()), 0).unwrap();
    assert!(model
        .predict(&store, &cloud(&mut rng(1), 5), &cloud(&mut rng(2), 16))
        .is_err());
    assert!(model
        .predict(&store, &cloud(&mut rng(1), 16), &cloud(&mut rng(2), 5))
        .is_err());
}

fn single(p: [f64; 3]) -> PointCloud {
    PointCloud::new(vec![p]).unwrap()
}

#[test]
fn total_loss_of_exact_levels_is_zero() {
    let gt = cloud(&mut rng(3), 12);
    let levels = vec![gt.clone(), gt.clone(), gt.clone()];
    assert_eq!(total_loss_value(&levels, &gt).unwrap(), 0.0);
}

#[test]
fn total_loss_is_the_unweighted_level_mean() {
    // Per-level L1 CDs of 1, 2 and 3 against a single point at the origin.
    let gt = single([0.0; 3]);
    let levels = [
        single([0.5, 0.0, 0.0]),
        single([0.0, 1.0, 0.0]),
        single([0.0, 0.0, 1.5]),
    ];
    assert_eq!(total_loss_value(&levels, &gt).unwrap(), 2.0);
    let mut t = Tape::new();
    let v: Vec<_> = levels.iter().map(|l| t.constant(l.to_tensor())).collect();
    let g = t.constant(gt.to_tensor());
    let loss = total_loss(&mut t, v[0], &v[1..], g).unwrap();
    assert_eq!(t.value(loss).item(), 2.0);
}

fn brute_chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    let dir = |x: &PointCloud, y: &PointCloud| {
        x.points()
            .iter()
            .map(|p| {
                y.points()
                    .iter()
                    .map(|q| (0..3).map(|c| (p[c] - q[c]).abs()).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / x.len() as f64
    };
    dir(a, b) + dir(b, a)
}

#[test]
fn total_loss_matches_independent_chamfer_mean() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let gt = cloud(&mut r, 24);
        let levels: Vec<PointCloud> = [4, 8, 16].iter().map(|&n| cloud(&mut r, n)).collect();
        let want = levels.iter().map(|l| brute_chamfer(l, &gt)).sum::<f64>() / 3.0;
        let mut t = Tape::new();
        let v: Vec<_> = levels.iter().map(|l| t.constant(l.to_tensor())).collect();
        let g = t.constant(gt.to_tensor());
        let loss = total_loss(&mut t, v[0], &v[1..], g).unwrap();
        assert!((t.value(loss).item() - want).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn total_loss_ignores_point_order(seed in 0u64..1000, shift in 1usize..7) {
        let mut r = rng(seed);
        let gt = cloud(&mut r, 9);
        let levels: Vec<PointCloud> = [3, 6].iter().map(|&n| cloud(&mut r, n)).collect();
        let rot = |pc: &PointCloud| {
            let mut p = pc.points().to_vec();
            let s = shift % p.len();
            p.rotate_left(s);
            p.reverse();
            PointCloud::new(p).unwrap()
        };
        let a = total_loss_value(&levels, &gt).unwrap();
        let permuted: Vec<PointCloud> = levels.iter().map(rot).collect();
        let b = total_loss_value(&permuted, &rot(&gt)).unwrap();
        prop_assert!((a - b).abs() < 1e-15);
    }
}

fn sample(seed: u64) -> SampleTriple {
    let mut r = rng(seed);
    SampleTriple {
        id: format!("s{seed}"),
        family: crate::data::ShapeFamily::Sphere,
        partial: cloud(&mut r, 16),
        prior: cloud(&mut r, 16),
        gt: cloud(&mut r, 16),
        crop_direction: [0.0, 0.0, 1.0],
        split: Split::Train,
    }
}

fn grads_for(model: &PgNet, store: &ParamStore, s: &SampleTriple) -> Vec<(String, f64)> {
    let mut t = Tape::new();
    let out = model.forward(&mut t, store, &s.partial, &s.prior).unwrap();
    let gt = t.constant(s.gt.to_tensor());
    let loss = total_loss(&mut t, out.coarse, &out.levels, gt).unwrap();
    t.backward(loss).unwrap();
    store
        .iter()
        .zip(t.param_grads(store))
        .map(|((_, p), g)| (p.name.clone(), g.data().iter().map(|v| v.abs()).fold(0.0, f64::max)))
        .collect()
}

/// Largest gradient magnitude over parameters whose name starts with one of
/// `prefixes`, and over all the others.
fn split_grads(g: &[(String, f64)], prefixes: &[&str]) -> (f64, f64) {
    let hit = |n: &str| prefixes.iter().any(|p| n.starts_with(p));
    let inside = g.iter().filter(|(n, _)| hit(n)).map(|x| x.1).fold(0.0, f64::max);
    let outside = g.iter().filter(|(n, _)| !hit(n)).map(|x| x.1).fold(0.0, f64::max);
    (inside, outside)
}

#[test]
fn ablations_cut_gradients_of_exactly_their_components() {
    let cases: [(&str, &[&str]); 5] = [
        ("no_seed_grounding", &["seed.ground_attn"]),
        ("no_prior_feature_grounding", &["gr.cross_attn"]),
        (
            "no_structure_aware",
            &[
                "grb.0.key",
                "grb.0.value",
                "grb.0.phi",
                "grb.0.logit",
                "grb.1.key",
                "grb.1.value",
                "grb.1.phi",
                "grb.1.logit",
            ],
        ),
        ("inpaint_mode", &["enc.gen", "gr."]),
        ("no_dual_source", &[]),
    ];
    let s = sample(7);
    for (flag, dead) in cases {
        let (mut store, model) = PgNet::init(&small_cfg(Ablation::default().with(flag).unwrap()), 3).unwrap();
        perturb(&mut store, 4);
        let g = grads_for(&model, &store, &s);
        let (inside, outside) = split_grads(&g, dead);
        assert_eq!(inside, 0.0, "{flag}");
        assert!(outside > 0.0, "{flag}");
        // The same components are live in the full model.
        let full = PgNet::attach(&small_cfg(Ablation::default()), &store).unwrap();
        if !dead.is_empty() {
            assert!(split_grads(&grads_for(&full, &store, &s), dead).0 > 0.0, "{flag}");
        }
    }
}

#[test]
fn full_model_passes_grad_check() {
    for seed in 0..10 {
        let (mut store, model) = PgNet::init(&small_cfg(Ablation::default()), seed).unwrap();
        perturb(&mut store, 50 + seed);
        let s = sample(seed);
        let rep = grad_check(&store, STAGE_EPS, |t, st| {
            let out = model.forward(t, st, &s.partial, &s.prior)?;
            let gt = t.constant(s.gt.to_tensor());
            total_loss(t, out.coarse, &out.levels, gt)
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "seed {seed}: {rep:?}");
        assert!(rep.checked > rep.excluded_ties);
    }
}

fn scalar_store(v: f64) -> ParamStore {
    let mut s = ParamStore::new();
    s.add("w", Tensor::new(vec![1], vec![v]).unwrap()).unwrap();
    s
}

#[test]
fn adamw_with_zero_gradient_and_decay_is_a_no_op() {
    let (store0, _) = PgNet::init(&small_cfg(Ablation::default()), 0).unwrap();
    let mut store = store0.clone();
    let cfg = TrainConfig {
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut opt = AdamW::new(&store, &cfg);
    let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.tensor.shape())).collect();
    for _ in 0..3 {
        opt.step(&mut store, &zeros, 1e-3).unwrap();
    }
    assert_eq!(store, store0);
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(2e-4, 0, 100), 2e-4);
    assert!((cosine_lr(2e-4, 50, 100) - 1e-4).abs() < 1e-18);
    assert_eq!(cosine_lr(2e-4, 100, 100), 0.0);
    let mut store = scalar_store(0.7);
    let mut opt = AdamW::new(&store, &TrainConfig::default());
    opt.step(
        &mut store,
        &[Tensor::new(vec![1], vec![0.3]).unwrap()],
        cosine_lr(1e-2, 10, 10),
    )
    .unwrap();
    assert_eq!(store.get(crate::autodiff::ParamId(0)).tensor.data(), [0.7]);
}

#[test]
fn adamw_two_hand_computed_steps() {
    let cfg = TrainConfig {
        weight_decay: 0.1,
        ..Default::default()
    };
    let (lr, b1, b2, eps, wd) = (0.01, 0.9, 0.999, 1e-8, 0.1);
    let mut store = scalar_store(1.0);
    let mut opt = AdamW::new(&store, &cfg);
    let (g1, g2) = (0.5, -0.2);
    opt.step(&mut store, &[Tensor::new(vec![1], vec![g1]).unwrap()], lr)
        .unwrap();
    opt.step(&mut store, &[Tensor::new(vec![1], vec![g2]).unwrap()], lr)
        .unwrap();

    let mut w = 1.0f64;
    let (mut m, mut v) = (0.0f64, 0.0f64);
    for (t, g) in [(1, g1), (2, g2)] {
        w -= lr * wd * w;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        w -= lr * mh / (vh.sqrt() + eps);
    }
    // Step 1 moves by lr against the gradient sign (bias-corrected m / sqrt(v) = 1).
    assert!((w - 0.984_555).abs() < 1e-6, "{w}");
    assert!((store.get(crate::autodiff::ParamId(0)).tensor.data()[0] - w).abs() < 1e-15);
}

#[test]
fn adamw_rejects_nan_gradient_by_name() {
    let (mut store, _) = PgNet::init(&small_cfg(Ablation::default()), 0).unwrap();
    let before = store.clone();
    let mut opt = AdamW::new(&store, &TrainConfig::default());
    let mut grads: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.tensor.shape())).collect();
    grads[5].data_mut()[0] = f64::NAN;
    let err = opt.step(&mut store, &grads, 1e-3).unwrap_err().to_string();
    let name = &before.get(crate::autodiff::ParamId(5)).name;
    assert!(err.contains(name.as_str()), "{err}");
    assert_eq!(store, before);
}

fn toy_data(n: usize) -> Vec<SampleTriple> {
    generate(&DatasetConfig {
        n_samples: n,
        m: 24,
        n: 24,
        n_g: 24,
        ..Default::default()
    })
    .unwrap()
}

fn run(cfg: &ModelConfig, tc: &TrainConfig, data: &[SampleTriple]) -> Result<(ParamStore, TrainOutcome), crate::Error> {
    let (store, model) = PgNet::init(cfg, tc.seed)?;
    let train: Vec<_> = data.iter().filter(|s| s.split == Split::Train).collect();
    let val: Vec<_> = data.iter().filter(|s| s.split == Split::Val).collect();
    let out = train_loop(
        &model,
        store.clone(),
        &train,
        &val,
        tc,
        &TrainOptions { check_invariants: true },
        &mut |_| Ok(()),
    )?;
    Ok((store, out))
}

#[test]
fn zero_iterations_keep_the_initialisation() {
    let data = toy_data(10);
    let tc = TrainConfig {
        iterations: 0,
        ..Default::default()
    };
    let (init, out) = run(&small_cfg(Ablation::default()), &tc, &data).unwrap();
    assert_eq!(out.params, init);
    assert_eq!(out.log.len(), 1);
    assert!(out.log[0].val_cd.is_some() && out.log[0].train_loss.is_none());
}

#[test]
fn training_is_bitwise_reproducible_and_logs_on_cadence() {
    let data = toy_data(10);
    let tc = TrainConfig {
        iterations: 6,
        batch_size: 3,
        lr: 1e-3,
        val_every: 4,
        ..Default::default()
    };
    let (_, a) = run(&small_cfg(Ablation::default()), &tc, &data).unwrap();
    let (_, b) = run(&small_cfg(Ablation::default()), &tc, &data).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.params, b.params);
    assert_eq!(a.params.to_checkpoint_bytes(), b.params.to_checkpoint_bytes());
    let val_steps: Vec<usize> = a.val_history().iter().map(|x| x.0).collect();
    assert_eq!(val_steps, [0, 4, 6]);
    assert_eq!(a.log.len(), 7);
    let inv = a.invariants.unwrap();
    // 6 steps x 3 training samples, plus 3 validation rounds x 1 sample.
    assert_eq!(inv.passes, 21);
    assert!(inv.holds(1e-12), "{inv:?}");
    // A different seed changes the run.
    let (_, c) = run(&small_cfg(Ablation::default()), &TrainConfig { seed: 1, ..tc }, &data).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn non_finite_loss_aborts_with_batch_ids() {
    let data = toy_data(10);
    let (mut store, model) = PgNet::init(&small_cfg(Ablation::default()), 0).unwrap();
    let id = store.id("grb.1.disp.1.bias").unwrap();
    store.get_mut(id).tensor.data_mut()[0] = f64::INFINITY;
    let train: Vec<_> = data.iter().filter(|s| s.split == Split::Train).collect();
    let tc = TrainConfig {
        iterations: 2,
        batch_size: 2,
        ..Default::default()
    };
    let err = train_loop(&model, store, &train, &[], &tc, &TrainOptions::default(), &mut |_| {
        Ok(())
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), 4);
    let msg = err.to_string();
    assert!(
        msg.contains("step 0") && train.iter().filter(|s| msg.contains(&s.id)).count() == 2,
        "{msg}"
    );
}

#[test]
fn ablation_names_parse_and_print() {
    let a = Ablation::parse_list("no_seed_grounding, inpaint_mode").unwrap();
    assert!(a.no_seed_grounding && a.inpaint_mode && !a.no_dual_source);
    assert_eq!(a.to_string(), "no_seed_grounding+inpaint_mode");
    assert_eq!(Ablation::parse_list("").unwrap().to_string(), "full");
    assert!(Ablation::parse_list("no_gates").is_err());
}

#[test]
fn model_config_validation() {
    let mut c = ModelConfig::default();
    c.validate().unwrap();
    assert_eq!(c.level_sizes(), [64, 128, 256]);
    c.grbs.clear();
    assert!(c.validate().is_err());
    let mut c = ModelConfig::default();
    c.grbs[1].dim = 32;
    assert!(c.validate().is_err());
    let mut c = small_cfg(Ablation::default());
    c.grbs[0].k = 5;
    assert!(c.validate().is_err(), "k above the scaffold size");
    let text = serde_json::to_string(&ModelConfig::default()).unwrap();
    assert_eq!(
        serde_json::from_str::<ModelConfig>(&text).unwrap(),
        ModelConfig::default()
    );
}

#[test]
fn schedules() {
    let p = TrainConfig::paper();
    assert_eq!((p.lr, p.iterations, p.batch_size), (2e-4, 100_000, 192));
    assert_eq!((p.beta1, p.beta2, p.eps), (0.9, 0.999, 1e-8));
    let t = TrainConfig::default();
    assert_eq!((t.lr, t.iterations, t.batch_size), (TOY_LR, 2000, 8));
    p.validate().unwrap();
    t.validate().unwrap();
}

#[test]
fn attach_checks_checkpoint_layout() {
    let (store, _) = PgNet::init(&small_cfg(Ablation::default()), 0).unwrap();
    assert!(PgNet::attach(&small_cfg(Ablation::default()), &store).is_ok());
    let err = PgNet::attach(&ModelConfig::default(), &store).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
