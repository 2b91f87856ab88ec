use super::*;
use crate::numcore::grad_check;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(input_dim: usize, hidden: Vec<usize>, d: usize, layers: usize, tasks: usize) -> ModelConfig {
    ModelConfig {
        input_dim,
        hidden,
        embed_dim: d,
        layers,
        shared_weights: false,
        head: HeadKind::Mlp,
        seen_tasks: (0..tasks).collect(),
    }
}

fn set(model: &mut MetaLinkModel<f64>, name: &str, value: DenseMatrix<f64>) {
    let id = model.params().id_of(name).unwrap_or_else(|| panic!("no {name}"));
    *model.params_mut().get_mut(id) = value;
}

fn mat(rows: usize, cols: usize, v: &[f64]) -> DenseMatrix<f64> {
    DenseMatrix::from_vec(rows, cols, v.to_vec()).unwrap()
}

fn identity_extractor(model: &mut MetaLinkModel<f64>, d: usize) {
    set(model, "extractor.0.w", DenseMatrix::identity(d));
    set(model, "extractor.0.b", DenseMatrix::zeros(1, d));
}

fn embed(model: &MetaLinkModel<f64>, x: &DenseMatrix<f64>) -> DenseMatrix<f64> {
    let mut tape = Tape::new(model.params());
    let xv = tape.constant(x.clone()).unwrap();
    let z = model.extract_features(&mut tape, xv).unwrap();
    tape.value(z).clone()
}

fn logits(model: &MetaLinkModel<f64>, x: &DenseMatrix<f64>, known: &[KnownLabel], ones: &[usize], targets: &[(usize, usize)]) -> Vec<f64> {
    let mut tape = Tape::new(model.params());
    let out = model.forward(&mut tape, x, known, ones, targets).unwrap();
    tape.value(out.logits).values().to_vec()
}

/// Runs one layer on hand-set inputs and returns `(H_data', H_task')`.
fn run_layer(
    model: &MetaLinkModel<f64>,
    x: &DenseMatrix<f64>,
    known: &[KnownLabel],
    tasks: &[usize],
) -> (DenseMatrix<f64>, DenseMatrix<f64>) {
    let mut tape = Tape::new(model.params());
    let xv = tape.constant(x.clone()).unwrap();
    let z = model.extract_features(&mut tape, xv).unwrap();
    let heads = model.params().get(model.ids.task_heads);
    let weights = (0..heads.rows()).map(|r| (r, heads.row(r).to_vec())).collect();
    let graph = KnowledgeGraph::build(tape.value(z), &weights, &[], known, tasks).unwrap();
    let h_task = model.task_init(&mut tape, &graph).unwrap();
    let (a, b) = model.layer(&mut tape, model.ids.layers[0], &graph, z, h_task).unwrap();
    (tape.value(a).clone(), tape.value(b).clone())
}

#[test]
fn identity_extractor_passes_input_through() {
    let mut m = MetaLinkModel::<f64>::new(cfg(3, vec![], 3, 0, 1), 0).unwrap();
    identity_extractor(&mut m, 3);
    let x = mat(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, -1.0]);
    assert_eq!(embed(&m, &x), x);
}

#[test]
fn zero_extractor_weights_give_bias_rows() {
    let mut m = MetaLinkModel::<f64>::new(cfg(2, vec![], 3, 0, 1), 0).unwrap();
    set(&mut m, "extractor.0.w", DenseMatrix::zeros(2, 3));
    set(&mut m, "extractor.0.b", mat(1, 3, &[0.1, 0.2, 0.3]));
    let z = embed(&m, &mat(2, 2, &[5.0, 6.0, 7.0, 8.0]));
    assert_eq!(z.row(0), &[0.1, 0.2, 0.3]);
    assert_eq!(z.row(1), &[0.1, 0.2, 0.3]);
}

fn oracle_affine(x: &[f64], w: &DenseMatrix<f64>, b: Option<&DenseMatrix<f64>>) -> Vec<f64> {
    (0..w.cols())
        .map(|c| {
            let s: f64 = (0..w.rows()).map(|r| x[r] * w.get(r, c)).sum();
            s + b.map_or(0.0, |b| b.get(0, c))
        })
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn p<'a>(m: &'a MetaLinkModel<f64>, name: &str) -> &'a DenseMatrix<f64> {
    m.params().get(m.params().id_of(name).unwrap())
}

#[test]
fn extractor_matches_straight_line_evaluation() {
    let m = MetaLinkModel::<f64>::new(cfg(3, vec![4, 5], 2, 0, 1), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = DenseMatrix::random_normal(3, 3, 1.0, &mut rng);
    let z = embed(&m, &x);
    for i in 0..3 {
        let h = relu(oracle_affine(x.row(i), p(&m, "extractor.0.w"), Some(p(&m, "extractor.0.b"))));
        let h = relu(oracle_affine(&h, p(&m, "extractor.1.w"), Some(p(&m, "extractor.1.b"))));
        let h = oracle_affine(&h, p(&m, "extractor.2.w"), Some(p(&m, "extractor.2.b")));
        for (a, b) in z.row(i).iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

fn hand_layer_model() -> MetaLinkModel<f64> {
    let mut m = MetaLinkModel::<f64>::new(cfg(2, vec![], 2, 1, 1), 0).unwrap();
    identity_extractor(&mut m, 2);
    set(&mut m, "task_heads", mat(1, 2, &[0.0, 1.0]));
    set(&mut m, "gnn.1.w_t2d", DenseMatrix::identity(2));
    set(&mut m, "gnn.1.w_d2t", DenseMatrix::identity(2));
    set(&mut m, "gnn.1.o", DenseMatrix::zeros(1, 2));
    let sum_halves = mat(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
    set(&mut m, "gnn.1.u_data", sum_halves.clone());
    set(&mut m, "gnn.1.u_task", sum_halves);
    m
}

#[test]
fn hand_evaluated_layer() {
    let m = hand_layer_model();
    let x = mat(1, 2, &[1.0, 0.0]);
    let (hd, ht) = run_layer(&m, &x, &[KnownLabel::new(0, 0, true)], &[]);
    assert_eq!(hd.row(0), &[1.0, 1.0]);
    assert_eq!(ht.row(0), &[1.0, 1.0]);
}

#[test]
fn edgeless_layer_uses_zero_mean() {
    let mut m = hand_layer_model();
    set(&mut m, "gnn.1.o", mat(1, 2, &[3.0, -4.0]));
    let x = mat(1, 2, &[1.0, 0.0]);
    let (hd, ht) = run_layer(&m, &x, &[], &[0]);
    assert_eq!(hd.row(0), &[1.0, 0.0]);
    assert_eq!(ht.row(0), &[0.0, 1.0]);
}

#[test]
fn label_flip_shifts_message_by_o() {
    let mut m = hand_layer_model();
    set(&mut m, "gnn.1.w_t2d", DenseMatrix::zeros(2, 2));
    set(&mut m, "gnn.1.o", mat(1, 2, &[0.25, 1.5]));
    set(&mut m, "gnn.1.u_data", mat(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]));
    let x = mat(1, 2, &[1.0, 0.0]);
    let (neg, _) = run_layer(&m, &x, &[KnownLabel::new(0, 0, false)], &[]);
    let (pos, _) = run_layer(&m, &x, &[KnownLabel::new(0, 0, true)], &[]);
    assert_eq!(pos.row(0)[0] - neg.row(0)[0], 0.25);
    assert_eq!(pos.row(0)[1] - neg.row(0)[1], 1.5);
}

#[test]
fn dot_head_degenerate_model() {
    let mut c = cfg(2, vec![], 2, 0, 1);
    c.head = HeadKind::Dot;
    let mut m = MetaLinkModel::<f64>::new(c, 0).unwrap();
    identity_extractor(&mut m, 2);
    set(&mut m, "task_heads", mat(1, 2, &[3.0, 4.0]));
    assert_eq!(logits(&m, &mat(1, 2, &[1.0, 2.0]), &[], &[], &[(0, 0)]), vec![11.0]);
}

#[test]
fn zero_head_gives_zero_logit() {
    let mut m = MetaLinkModel::<f64>::new(cfg(2, vec![3], 2, 0, 1), 4).unwrap();
    for name in ["head.0.w1", "head.0.b1", "head.0.w2", "head.0.b2"] {
        let shape = p(&m, name).shape();
        set(&mut m, name, DenseMatrix::zeros(shape.0, shape.1));
    }
    assert_eq!(logits(&m, &mat(1, 2, &[1.0, 2.0]), &[], &[], &[(0, 0)]), vec![0.0]);
}

#[test]
fn head_is_order_sensitive() {
    let m = MetaLinkModel::<f64>::new(cfg(2, vec![], 3, 0, 1), 5).unwrap();
    let mut tape = Tape::new(m.params());
    let a = tape.constant(mat(1, 3, &[1.0, -0.5, 2.0])).unwrap();
    let b = tape.constant(mat(1, 3, &[0.3, 0.9, -1.2])).unwrap();
    let ab = m.head_logit(&mut tape, m.ids.heads[0], (a, &[0]), (b, &[0])).unwrap();
    let ba = m.head_logit(&mut tape, m.ids.heads[0], (b, &[0]), (a, &[0])).unwrap();
    assert_ne!(tape.value(ab).get(0, 0), tape.value(ba).get(0, 0));
}

fn oracle_head(m: &MetaLinkModel<f64>, l: usize, hi: &[f64], hj: &[f64]) -> f64 {
    let cat: Vec<f64> = hi.iter().chain(hj).copied().collect();
    let h = relu(oracle_affine(&cat, p(m, &format!("head.{l}.w1")), Some(p(m, &format!("head.{l}.b1")))));
    oracle_affine(&h, p(m, &format!("head.{l}.w2")), Some(p(m, &format!("head.{l}.b2"))))[0]
}

/// Direct per-node evaluation of the layer equation and the head ensemble,
/// sharing nothing with the tape implementation.
fn oracle_logits(
    m: &MetaLinkModel<f64>,
    x: &DenseMatrix<f64>,
    known: &[KnownLabel],
    tasks: usize,
    targets: &[(usize, usize)],
) -> Vec<f64> {
    let n = x.rows();
    let mut hd: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut h = x.row(i).to_vec();
            let widths = m.config().hidden.len() + 1;
            for l in 0..widths {
                h = oracle_affine(&h, p(m, &format!("extractor.{l}.w")), Some(p(m, &format!("extractor.{l}.b"))));
                if l + 1 < widths {
                    h = relu(h);
                }
            }
            h
        })
        .collect();
    let mut ht: Vec<Vec<f64>> = (0..tasks).map(|j| p(m, "task_heads").row(j).to_vec()).collect();
    let mut total = vec![0.0; targets.len()];
    if m.config().layers == 0 {
        for (k, &(i, j)) in targets.iter().enumerate() {
            total[k] = oracle_head(m, 0, &hd[i], &ht[j]);
        }
    }
    for l in 1..=m.config().layers {
        let o = p(m, &format!("gnn.{l}.o")).row(0).to_vec();
        let message = |h: &[f64], w: &DenseMatrix<f64>, y: u8| -> Vec<f64> {
            let mut v = oracle_affine(h, w, None);
            v.iter_mut().zip(&o).for_each(|(a, b)| *a += b * f64::from(y));
            relu(v)
        };
        let update = |h: &[f64], msgs: Vec<Vec<f64>>, u: &DenseMatrix<f64>| -> Vec<f64> {
            let mut mean = vec![0.0; h.len()];
            for msg in &msgs {
                mean.iter_mut().zip(msg).for_each(|(a, b)| *a += b / msgs.len() as f64);
            }
            mean.extend_from_slice(h);
            oracle_affine(&mean, u, None)
        };
        let new_d: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let msgs = known
                    .iter()
                    .filter(|k| k.data == i)
                    .map(|k| message(&ht[k.task], p(m, &format!("gnn.{l}.w_t2d")), k.label))
                    .collect();
                update(&hd[i], msgs, p(m, &format!("gnn.{l}.u_data")))
            })
            .collect();
        let new_t: Vec<Vec<f64>> = (0..tasks)
            .map(|j| {
                let msgs = known
                    .iter()
                    .filter(|k| k.task == j)
                    .map(|k| message(&hd[k.data], p(m, &format!("gnn.{l}.w_d2t")), k.label))
                    .collect();
                update(&ht[j], msgs, p(m, &format!("gnn.{l}.u_task")))
            })
            .collect();
        hd = new_d;
        ht = new_t;
        for (k, &(i, j)) in targets.iter().enumerate() {
            total[k] += oracle_head(m, l, &hd[i], &ht[j]);
        }
    }
    total
}

fn random_instance(seed: u64, n: usize, tasks: usize, d_in: usize) -> (DenseMatrix<f64>, Vec<KnownLabel>, Vec<(usize, usize)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DenseMatrix::random_normal(n, d_in, 1.0, &mut rng);
    let mut known = Vec::new();
    let mut targets = Vec::new();
    for i in 0..n {
        for j in 0..tasks {
            if rng.random::<f64>() < 0.4 {
                known.push(KnownLabel::new(i, j, rng.random()));
            } else {
                targets.push((i, j));
            }
        }
    }
    (x, known, targets)
}

#[test]
fn straight_line_oracle_agrees() {
    for (layers, seed) in [(0, 1), (1, 2), (1, 3), (2, 4)] {
        let m = MetaLinkModel::<f64>::new(cfg(3, vec![4], 5, layers, 3), seed).unwrap();
        let (x, known, targets) = random_instance(seed, 4, 3, 3);
        let got = logits(&m, &x, &known, &[], &targets);
        let want = oracle_logits(&m, &x, &known, 3, &targets);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "L={layers}: {a} vs {b}");
        }
    }
}

fn bce_loss<'p>(
    m: &MetaLinkModel<f64>,
    tape: &mut Tape<'p, f64>,
    x: &DenseMatrix<f64>,
    known: &[KnownLabel],
    targets: &[(usize, usize)],
    labels: &[f64],
) -> Result<Var> {
    let out = m.forward(tape, x, known, &[], targets)?;
    tape.bce_with_logits(out.logits, labels, &vec![1.0; labels.len()])
}

#[test]
fn full_forward_passes_grad_check() {
    for seed in 0..3 {
        let mut m = MetaLinkModel::<f64>::new(cfg(3, vec![4], 5, 2, 3), seed).unwrap();
        m.perturb(0.1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (x, known, targets) = random_instance(100 + seed, 4, 3, 3);
        let labels: Vec<f64> = (0..targets.len()).map(|k| (k % 2) as f64).collect();
        let report = grad_check(m.params(), 1e-5, |tape| {
            let model = MetaLinkModel::from_parts(m.config().clone(), tape.params().clone())?;
            bce_loss(&model, tape, &x, &known, &targets, &labels)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn shared_weights_accumulate_both_directions() {
    let mut shared_cfg = cfg(3, vec![], 4, 1, 2);
    shared_cfg.shared_weights = true;
    let shared = MetaLinkModel::<f64>::new(shared_cfg, 9).unwrap();
    let mut hetero = MetaLinkModel::<f64>::new(cfg(3, vec![], 4, 1, 2), 9).unwrap();
    for (_, name, value) in shared.params().iter() {
        match name {
            "gnn.1.w" => {
                set(&mut hetero, "gnn.1.w_t2d", value.clone());
                set(&mut hetero, "gnn.1.w_d2t", value.clone());
            }
            "gnn.1.u" => {
                set(&mut hetero, "gnn.1.u_data", value.clone());
                set(&mut hetero, "gnn.1.u_task", value.clone());
            }
            _ => set(&mut hetero, name, value.clone()),
        }
    }
    let (x, known, targets) = random_instance(5, 4, 2, 3);
    let labels: Vec<f64> = (0..targets.len()).map(|k| (k % 2) as f64).collect();
    let grads = |m: &MetaLinkModel<f64>| {
        let mut tape = Tape::new(m.params());
        let loss = bce_loss(m, &mut tape, &x, &known, &targets, &labels).unwrap();
        tape.backward(loss).unwrap()
    };
    let gs = grads(&shared);
    let gh = grads(&hetero);
    let g = |m: &MetaLinkModel<f64>, gr: &crate::numcore::Gradients<f64>, name: &str| {
        gr.get(m.params().id_of(name).unwrap()).clone()
    };
    for (one, a, b) in [("gnn.1.w", "gnn.1.w_t2d", "gnn.1.w_d2t"), ("gnn.1.u", "gnn.1.u_data", "gnn.1.u_task")] {
        let sum = g(&hetero, &gh, a).add(&g(&hetero, &gh, b)).unwrap();
        assert!(g(&shared, &gs, one).max_abs_diff(&sum) < 1e-12, "{one}");
    }
    assert_eq!(shared.params().len() + 2, hetero.params().len());
}

#[test]
fn edge_order_does_not_change_logits() {
    use rand::seq::SliceRandom;
    let m = MetaLinkModel::<f64>::new(cfg(3, vec![4], 5, 2, 3), 11).unwrap();
    let (x, known, targets) = random_instance(12, 6, 3, 3);
    let base = logits(&m, &x, &known, &[], &targets);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let mut shuffled = known.clone();
        shuffled.shuffle(&mut rng);
        assert_eq!(logits(&m, &x, &shuffled, &[], &targets), base);
    }
}

#[test]
fn edgeless_rows_are_batch_independent() {
    let m = MetaLinkModel::<f64>::new(cfg(3, vec![4], 5, 2, 2), 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let big = DenseMatrix::random_normal(5, 3, 1.0, &mut rng);
    let row = big.select_rows(&[2, 2]).unwrap();
    let pair = logits(&m, &row, &[], &[], &[(0, 1), (1, 1)]);
    assert_eq!(pair[0], pair[1]);
    let alone = logits(&m, &big.select_rows(&[2]).unwrap(), &[], &[], &[(0, 0), (0, 1)]);
    let in_batch = logits(&m, &big, &[], &[], &[(2, 0), (2, 1)]);
    assert_eq!(alone, in_batch);
}

#[test]
fn flipping_an_edge_label_changes_a_logit() {
    for seed in 0..5 {
        let m = MetaLinkModel::<f64>::new(cfg(3, vec![4], 5, 1, 3), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DenseMatrix::random_normal(2, 3, 1.0, &mut rng);
        let targets = [(0, 0), (0, 2)];
        let a = logits(&m, &x, &[KnownLabel::new(0, 1, false)], &[], &targets);
        let b = logits(&m, &x, &[KnownLabel::new(0, 1, true)], &[], &targets);
        assert!(a.iter().zip(&b).any(|(p, q)| p != q));
    }
}

#[test]
fn large_inputs_stay_finite() {
    let m = MetaLinkModel::<f64>::new(cfg(4, vec![8], 6, 3, 3), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = DenseMatrix::from_vec(5, 4, (0..20).map(|_| rng.random_range(-1e3..1e3)).collect()).unwrap();
    let (_, known, targets) = random_instance(4, 5, 3, 4);
    assert!(logits(&m, &x, &known, &[2], &targets).iter().all(|v| v.is_finite()));
}

#[test]
fn target_on_edge_is_rejected() {
    let m = MetaLinkModel::<f64>::new(cfg(2, vec![], 2, 1, 2), 0).unwrap();
    let mut tape = Tape::new(m.params());
    let x = mat(1, 2, &[1.0, 1.0]);
    let res = m.forward(&mut tape, &x, &[KnownLabel::new(0, 1, true)], &[], &[(0, 1)]);
    assert!(matches!(res, Err(Error::Leakage { data: 0, task: 1 })));
}

#[test]
fn unseen_task_needs_no_head() {
    let m = MetaLinkModel::<f64>::new(cfg(2, vec![], 3, 1, 2), 0).unwrap();
    let x = mat(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let known = [KnownLabel::new(0, 7, true), KnownLabel::new(1, 7, false)];
    let out = logits(&m, &x, &known, &[7], &[(0, 0), (1, 1)]);
    assert_eq!(out.len(), 2);
    let mut tape = Tape::new(m.params());
    assert!(m.forward(&mut tape, &x, &[], &[], &[(0, 7)]).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let m = MetaLinkModel::<f64>::new(cfg(3, vec![4], 5, 2, 3), 17).unwrap();
    let text = m.to_json().unwrap();
    let back = MetaLinkModel::<f64>::from_json(&text).unwrap();
    assert!(back == m, "round trip changed parameters");
    assert_eq!(back.to_json().unwrap(), text);

    let small = MetaLinkModel::<f32>::new(cfg(3, vec![], 2, 1, 1), 3).unwrap();
    assert_eq!(MetaLinkModel::<f32>::from_json(&small.to_json().unwrap()).unwrap(), small);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    m.save(&path).unwrap();
    assert_eq!(MetaLinkModel::<f64>::load(&path).unwrap(), m);
}

#[test]
fn checkpoint_rejects_wrong_layout() {
    let m = MetaLinkModel::<f64>::new(cfg(3, vec![4], 5, 2, 3), 17).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
    v["config"]["layers"] = serde_json::json!(3);
    assert!(MetaLinkModel::<f64>::from_json(&v.to_string()).is_err());
}
