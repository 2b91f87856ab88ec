use super::*;
use crate::datasets::{generate_synthetic, SyntheticSpec};
use crate::numcore::{bce_with_logits, DenseMatrix};

fn data(n: usize, m: usize, rho: f64, seed: u64) -> MultiLabelDataset<f64> {
    generate_synthetic(&SyntheticSpec {
        n,
        m,
        d: 8,
        rho,
        label_noise: 0.0,
        missing_frac: 0.0,
        seed,
    })
    .unwrap()
}

fn small(setting: Setting) -> TrainConfig {
    TrainConfig {
        setting,
        aux_ratio: 0.4,
        held_out_task_fraction: 0.34,
        shots: 16,
        query_size: 32,
        batch_size: 32,
        epochs: 2,
        base_lr: 5e-3,
        hidden: vec![16],
        embed_dim: 8,
        seed: 7,
        eval_episodes: 3,
        ..TrainConfig::default()
    }
}

fn zero_output_heads(model: &mut MetaLinkModel<f64>) {
    let ids: Vec<_> = model
        .params()
        .iter()
        .filter(|(_, name, _)| name.starts_with("head.") && (name.ends_with(".w2") || name.ends_with(".b2")))
        .map(|(id, _, _)| id)
        .collect();
    assert!(!ids.is_empty());
    for id in ids {
        let (r, c) = model.params().get(id).shape();
        *model.params_mut().get_mut(id) = DenseMatrix::zeros(r, c);
    }
}

#[test]
fn zero_epochs_returns_untouched_model() {
    let ds = data(120, 4, 0.5, 1);
    let cfg = TrainConfig { epochs: 0, ..small(Setting::Relational) };
    let (model, h) = train(&ds, &cfg).unwrap();
    assert!(h.train_loss.is_empty() && h.val_metric.is_empty() && h.lr.is_empty() && h.step_loss.is_empty());
    assert!(h.test.is_none() && h.best_epoch.is_none());
    let fresh = MetaLinkModel::<f64>::new(model.config().clone(), derive_seed(cfg.seed, Stream::Init)).unwrap();
    assert!(fresh == model);
}

#[test]
fn history_lengths_match_epochs() {
    let ds = data(160, 4, 0.5, 2);
    let cfg = TrainConfig { epochs: 3, ..small(Setting::Relational) };
    let (_, h) = train(&ds, &cfg).unwrap();
    assert_eq!(h.train_loss.len(), 3);
    assert_eq!(h.val_metric.len(), 3);
    assert_eq!(h.lr.len(), 3);
    assert_eq!(h.wall_clock.len(), 3);
    assert!(h.test.is_some());
}

#[test]
fn identical_seeds_give_identical_runs() {
    let ds = data(600, 6, 0.0, 3);
    for setting in [Setting::Standard, Setting::Relational, Setting::RelationalMeta, Setting::Fewshot] {
        let cfg = TrainConfig { shots: 2, query_size: 4, ..small(setting) };
        let (m1, h1) = train(&ds, &cfg).unwrap();
        let (m2, h2) = train(&ds, &cfg).unwrap();
        assert_eq!(m1.to_json().unwrap(), m2.to_json().unwrap(), "{setting:?}");
        assert_eq!(serde_json::to_string(&h1).unwrap(), serde_json::to_string(&h2).unwrap());
    }
    let (a, _) = train(&ds, &small(Setting::Relational)).unwrap();
    let (b, _) = train(&ds, &TrainConfig { seed: 8, ..small(Setting::Relational) }).unwrap();
    assert!(a != b);
}

#[test]
fn zero_ratio_relational_matches_standard_step_for_step() {
    let ds = data(160, 5, 0.8, 4);
    let std_cfg = TrainConfig { aux_ratio: 0.0, ..small(Setting::Standard) };
    let rel_cfg = TrainConfig { setting: Setting::Relational, ..std_cfg.clone() };
    let (ms, hs) = train(&ds, &std_cfg).unwrap();
    let (mr, hr) = train(&ds, &rel_cfg).unwrap();
    assert!(!hs.step_loss.is_empty());
    assert_eq!(hs.step_loss, hr.step_loss);
    assert_eq!(hs.test, hr.test);
    assert!(ms == mr);
}

#[test]
fn zero_head_gives_ln2_loss() {
    let ds = data(64, 4, 0.5, 5);
    let cfg = small(Setting::Relational);
    let p = plan(&ds, &cfg).unwrap();
    let mut model = MetaLinkModel::new(model_config(&cfg, ds.d(), &p), 1).unwrap();
    zero_output_heads(&mut model);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = sample_relational(&ds, &p.split.train[..20], 0.5, &mut rng, None).unwrap();
    let enc = EncodedBatch::new(&ds, &batch).unwrap();
    let mut tape = Tape::new(model.params());
    let loss = episode_loss_multilabel(&model, &mut tape, &enc).unwrap();
    assert!((tape.value(loss).get(0, 0) - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn multilabel_loss_is_bce_over_forward_logits() {
    let ds = data(64, 4, 0.5, 6);
    let cfg = small(Setting::Relational);
    let p = plan(&ds, &cfg).unwrap();
    let model = MetaLinkModel::new(model_config(&cfg, ds.d(), &p), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = sample_relational(&ds, &p.split.train[..24], 0.5, &mut rng, None).unwrap();
    let enc = EncodedBatch::new(&ds, &batch).unwrap();
    let logits = model.predict(&enc).unwrap();
    let expected = bce_with_logits(&logits, &enc.labels, &vec![1.0; logits.len()]).unwrap();
    let mut tape = Tape::new(model.params());
    let loss = episode_loss_multilabel(&model, &mut tape, &enc).unwrap();
    assert!((tape.value(loss).get(0, 0) - expected).abs() < 1e-12);
}

#[test]
fn empty_targets_are_rejected() {
    let ds = data(32, 3, 0.5, 7);
    let cfg = small(Setting::Standard);
    let p = plan(&ds, &cfg).unwrap();
    let model = MetaLinkModel::new(model_config(&cfg, ds.d(), &p), 3).unwrap();
    let mut batch = sample_relational(&ds, &[0, 1], 0.0, &mut ChaCha8Rng::seed_from_u64(0), None).unwrap();
    batch.query_targets.clear();
    let enc = EncodedBatch::new(&ds, &batch).unwrap();
    let mut tape = Tape::new(model.params());
    assert!(matches!(episode_loss_multilabel(&model, &mut tape, &enc), Err(Error::EmptyLoss)));
}

fn fewshot_batch(ds: &MultiLabelDataset<f64>, p: &Plan, ways: usize) -> EpisodeBatch {
    let spec = FewShotSpec {
        examples: &p.split.train,
        seen_tasks: &p.seen_tasks,
        unseen_tasks: &p.unseen_tasks,
        phase: MetaPhase::Train,
        ways,
        shots: 2,
        queries: 3,
    };
    sample_fewshot(ds, &spec, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
}

#[test]
fn fewshot_uniform_logits_give_ln_n() {
    // Orthogonal tasks keep single-positive examples plentiful.
    let ds = data(2000, 10, 0.0, 8);
    let cfg = TrainConfig { setting: Setting::Fewshot, held_out_task_fraction: 0.3, ..small(Setting::Fewshot) };
    let p = plan(&ds, &cfg).unwrap();
    let mut model = MetaLinkModel::new(model_config(&cfg, ds.d(), &p), 4).unwrap();
    zero_output_heads(&mut model);
    let batch = fewshot_batch(&ds, &p, 5);
    let enc = EncodedBatch::new(&ds, &batch).unwrap();
    let mut tape = Tape::new(model.params());
    let loss = episode_loss_fewshot(&model, &mut tape, &enc).unwrap();
    assert!((tape.value(loss).get(0, 0) - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn fewshot_loss_averages_per_example_softmax_ce() {
    let ds = data(2000, 10, 0.0, 9);
    let cfg = TrainConfig { held_out_task_fraction: 0.3, ..small(Setting::Fewshot) };
    let p = plan(&ds, &cfg).unwrap();
    let model = MetaLinkModel::new(model_config(&cfg, ds.d(), &p), 5).unwrap();
    let batch = fewshot_batch(&ds, &p, 4);
    let enc = EncodedBatch::new(&ds, &batch).unwrap();
    let logits = model.predict(&enc).unwrap();
    let groups = fewshot_groups(&enc).unwrap();
    let expected = groups
        .iter()
        .map(|(members, pos)| {
            let v: Vec<f64> = members.iter().map(|&k| logits[k]).collect();
            crate::numcore::softmax_ce(&v, *pos).unwrap()
        })
        .sum::<f64>()
        / groups.len() as f64;
    let mut tape = Tape::new(model.params());
    let loss = episode_loss_fewshot(&model, &mut tape, &enc).unwrap();
    assert!((tape.value(loss).get(0, 0) - expected).abs() < 1e-12);
}

#[test]
fn fewshot_rejects_two_positives() {
    let ds = data(2000, 10, 0.0, 10);
    let cfg = TrainConfig { held_out_task_fraction: 0.3, ..small(Setting::Fewshot) };
    let p = plan(&ds, &cfg).unwrap();
    let model = MetaLinkModel::new(model_config(&cfg, ds.d(), &p), 6).unwrap();
    let batch = fewshot_batch(&ds, &p, 3);
    let mut enc = EncodedBatch::new(&ds, &batch).unwrap();
    enc.labels.iter_mut().for_each(|l| *l = 1.0);
    let mut tape = Tape::new(model.params());
    assert!(matches!(episode_loss_fewshot(&model, &mut tape, &enc), Err(Error::Contract(_))));
}

#[test]
fn schedule_starts_at_base_and_decays() {
    let ds = data(160, 4, 0.5, 11);
    let cfg = TrainConfig { epochs: 13, ..small(Setting::Standard) };
    let (_, h) = train(&ds, &cfg).unwrap();
    assert_eq!(h.lr[0], cfg.base_lr);
    assert!(h.lr.windows(2).all(|w| w[1] < w[0]));
    let total = cfg.epochs * iterations_per_epoch(&cfg, h.plan.split.train.len(), 0);
    assert!(total >= 50);
    assert!(cosine_lr(cfg.base_lr, total - 1, total).unwrap() <= cfg.base_lr * 1e-3);
    assert_eq!(cosine_lr(cfg.base_lr, total, total).unwrap(), 0.0);
}

#[test]
fn meta_runs_never_touch_held_out_tasks() {
    let ds = data(3000, 9, 0.0, 12);
    for setting in [Setting::Meta, Setting::RelationalMeta, Setting::Fewshot] {
        let shots = if setting == Setting::Fewshot { 2 } else { 16 };
        let cfg = TrainConfig { epochs: 2, shots, query_size: 4, batch_size: 128, ..small(setting) };
        let (_, h) = train(&ds, &cfg).unwrap();
        assert_eq!(h.meta_violations, 0, "{setting:?}");
        assert_eq!(h.leakage_violations, 0, "{setting:?}");
        assert_eq!(h.plan.unseen_tasks.len(), 3);
        assert!(!h.step_loss.is_empty());
    }
    for setting in [Setting::Standard, Setting::Relational] {
        let (_, h) = train(&ds, &small(setting)).unwrap();
        assert_eq!(h.leakage_violations, 0);
    }
}

#[test]
fn standard_and_relational_eval_score_the_same_targets() {
    let ds = data(300, 6, 0.8, 13);
    let cfg = small(Setting::Relational);
    let p = plan(&ds, &cfg).unwrap();
    let rel = cfg.eval_spec();
    let std_spec = EvalSpec { setting: Setting::Standard, ..rel.clone() };
    let a = eval::eval_batches(&ds, &p, &p.split.test, &rel).unwrap();
    let b = eval::eval_batches(&ds, &p, &p.split.test, &std_spec).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.query_targets, y.query_targets);
        assert!(y.query_known.is_empty());
        assert_eq!(count_leaks(x), 0);
    }
    assert!(a.iter().any(|x| !x.query_known.is_empty()));

    // With no auxiliary labels the two settings build the same graphs.
    let zero = EvalSpec { aux_ratio: 0.0, ..rel.clone() };
    let zero_std = EvalSpec { setting: Setting::Standard, ..zero.clone() };
    assert_eq!(
        eval::eval_batches(&ds, &p, &p.split.test, &zero).unwrap(),
        eval::eval_batches(&ds, &p, &p.split.test, &zero_std).unwrap()
    );
    let model = MetaLinkModel::new(model_config(&cfg, ds.d(), &p), 0).unwrap();
    assert_eq!(
        evaluate(&model, &ds, &p, &p.split.test, &zero).unwrap(),
        evaluate(&model, &ds, &p, &p.split.test, &zero_std).unwrap()
    );
}

#[test]
fn untrained_model_is_at_chance() {
    let ds = data(4000, 10, 0.0, 14);
    let cfg = TrainConfig { split: (0.2, 0.0, 0.8), ..small(Setting::Standard) };
    let p = plan(&ds, &cfg).unwrap();
    let aucs: Vec<f64> = (0..5)
        .map(|seed| {
            let model = MetaLinkModel::new(model_config(&cfg, ds.d(), &p), seed).unwrap();
            let ev = evaluate(&model, &ds, &p, &p.split.test, &cfg.eval_spec()).unwrap();
            ev.report.macro_auc.unwrap()
        })
        .collect();
    let auc = aucs.iter().sum::<f64>() / aucs.len() as f64;
    assert!((auc - 0.5).abs() <= 0.05, "auc {auc} from {aucs:?}");
}

#[test]
fn meta_eval_uses_large_support_and_scores_only_held_out_tasks() {
    let ds = data(1500, 10, 0.5, 16);
    let cfg = TrainConfig {
        shots: 256,
        held_out_task_fraction: 0.2,
        split: (0.5, 0.1, 0.4),
        ..small(Setting::RelationalMeta)
    };
    let p = plan(&ds, &cfg).unwrap();
    let spec = cfg.eval_spec();
    let batches = eval::eval_batches(&ds, &p, &p.split.test, &spec).unwrap();
    assert!(!batches.is_empty());
    let unseen: BTreeSet<usize> = p.unseen_tasks.iter().copied().collect();
    for b in &batches {
        assert_eq!(b.support_examples.len(), 256);
        assert!(b.support_examples.iter().all(|e| p.split.train.contains(e)));
        assert!(b.support.iter().all(|e| unseen.contains(&e.task)));
        assert!(!b.support.is_empty());
        assert!(b.query_targets.iter().all(|t| unseen.contains(&t.task)));
        assert!(b.query_known.iter().all(|t| !unseen.contains(&t.task)));
        assert_eq!(count_leaks(b), 0);
        b.validate(&ds, Some(MetaPhase::Test)).unwrap();
    }
    let model = MetaLinkModel::new(model_config(&cfg, ds.d(), &p), 1).unwrap();
    let ev = evaluate(&model, &ds, &p, &p.split.test, &spec).unwrap();
    let names: Vec<&str> = ev.report.per_task.iter().map(|t| t.task.as_str()).collect();
    let expected: Vec<&str> = p.unseen_tasks.iter().map(|&t| ds.task_names()[t].as_str()).collect();
    assert_eq!(names, expected);
    assert_eq!(ev.targets, p.split.test.len() * p.unseen_tasks.len());
}

#[test]
fn fewshot_eval_reports_accuracy() {
    let ds = data(2000, 10, 0.0, 17);
    let cfg = TrainConfig { held_out_task_fraction: 0.3, shots: 2, query_size: 4, ..small(Setting::Fewshot) };
    let p = plan(&ds, &cfg).unwrap();
    let model = MetaLinkModel::new(model_config(&cfg, ds.d(), &p), 2).unwrap();
    let ev = evaluate(&model, &ds, &p, &p.split.test, &cfg.eval_spec()).unwrap();
    let acc = ev.accuracy.unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(ev.targets, cfg.eval_episodes * 3 * 4 * 3);
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = data(60, 4, 0.5, 18);
    let bad = [
        TrainConfig { held_out_task_fraction: 0.0, ..small(Setting::Meta) },
        TrainConfig { held_out_task_fraction: 0.1, ..small(Setting::Meta) },
        TrainConfig { aux_ratio: 1.0, ..small(Setting::Relational) },
        TrainConfig { batch_size: 0, ..small(Setting::Standard) },
        TrainConfig { ways: Some(1), ..small(Setting::Fewshot) },
    ];
    for cfg in bad {
        assert!(matches!(train(&ds, &cfg), Err(Error::Config(_))), "{cfg:?}");
    }
    assert!("relational_meta".parse::<Setting>().unwrap() == Setting::RelationalMeta);
    assert!("bogus".parse::<Setting>().is_err());
}

#[test]
fn overflowing_inputs_abort_with_divergence() {
    let mut ds = data(80, 3, 0.5, 19);
    let values = vec![f64::MAX; ds.features().values().len()];
    let (n, d) = ds.features().shape();
    ds = MultiLabelDataset::new(
        DenseMatrix::from_vec(n, d, values).unwrap(),
        (0..n).map(|e| (0..3).map(|t| ds.label(e, t)).collect()).collect(),
        ds.task_names().to_vec(),
    )
    .unwrap();
    let err = train(&ds, &small(Setting::Standard)).unwrap_err();
    assert!(matches!(err, Error::Divergence(_)), "{err:?}");
}

#[test]
fn zero_ratio_sweep_matches_standard_run() {
    let ds = data(160, 4, 0.8, 20);
    let base = TrainConfig { epochs: 1, ..small(Setting::Standard) };
    let rows = sweep_aux_ratio(&ds, &base, &[0.0], &[3], 1).unwrap();
    let (_, h) = train(&ds, &TrainConfig { aux_ratio: 0.0, seed: 3, ..base.clone() }).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].metric, h.test.unwrap().macro_auc);
}

#[test]
fn sweeps_are_deterministic_across_worker_counts() {
    let ds = data(160, 4, 0.8, 21);
    let base = TrainConfig { epochs: 1, ..small(Setting::Relational) };
    let ratios = [0.0, 0.25, 0.5];
    let one = sweep_aux_ratio(&ds, &base, &ratios, &[0, 1], 1).unwrap();
    let two = sweep_aux_ratio(&ds, &base, &ratios, &[0, 1], 2).unwrap();
    assert_eq!(one, two);
    assert_eq!(one.len(), 6);
    let table = summarize(&one);
    assert_eq!(table.len(), ratios.len());
    assert_eq!(table.iter().map(|r| r.0).collect::<Vec<_>>(), ratios);
    let csv = sweep_csv(&one, "ratio");
    assert!(csv.starts_with("ratio,seed,metric\n"));
    assert_eq!(csv.lines().count(), 7);

    let layers = sweep_layers(&ds, &base, &[0, 1], &[0], 1).unwrap();
    assert_eq!(layers.iter().map(|r| r.value).collect::<Vec<_>>(), vec![0.0, 1.0]);
}

#[test]
fn summary_uses_sample_std() {
    let rows = [
        SweepRow { value: 0.5, seed: 0, metric: Some(0.7) },
        SweepRow { value: 0.0, seed: 0, metric: Some(0.6) },
        SweepRow { value: 0.5, seed: 1, metric: Some(0.9) },
        SweepRow { value: 0.0, seed: 1, metric: None },
    ];
    let t = summarize(&rows);
    assert_eq!(t[0].0, 0.0);
    assert_eq!(t[0].1.mean, 0.6);
    assert_eq!(t[0].1.std, 0.0);
    assert!((t[1].1.mean - 0.8).abs() < 1e-12);
    assert!((t[1].1.std - 0.02f64.sqrt()).abs() < 1e-12);
}

