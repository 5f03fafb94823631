use msnas_core::autodiff::{finite_difference_check, GradCheckOptions, Graph, ParamStore, Tensor};
use msnas_core::datagen::{Dataset, GeneratorConfig};
use msnas_core::models::{system_mass, ModelKind, ModelSpec, Task};
use msnas_core::pipeline::{
    aggregate, argmin_first, auc, combined_loss_darts, combined_loss_spos, evaluate, grid_search, loss_task1,
    loss_task2, pretrain, run_darts, sample_path, select_argmax, softmax_values, spos_search, Batch, Candidates,
    PipelineError, SelectionConfig, Splits, StopReason, Supernet,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn graph_value(f: impl FnOnce(&Graph<f64>) -> msnas_core::autodiff::Var) -> f64 {
    let g = Graph::new();
    let v = f(&g);
    g.scalar(v)
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), data).unwrap()
}

fn bce(logits: &[f64], targets: &[f64]) -> f64 {
    let n = logits.len();
    graph_value(|g| {
        let y = g.constant(t(&[n, 1], logits));
        let tt = g.constant(t(&[n, 1], targets));
        loss_task2(g, y, tt).unwrap()
    })
}

#[test]
fn task1_loss_examples() {
    let ln = |pt: f64| (0.1 + pt).ln();
    let truth = [ln(40.0), 0.3, -1.0, ln(25.0), -0.2, 2.0];
    let mut pred = truth;
    let l = |p: &[f64], tr: &[f64], n: usize| {
        graph_value(|g| {
            loss_task1(g, g.constant(t(&[n, 6], p)), g.constant(t(&[n, 6], tr))).unwrap()
        })
    };
    assert_eq!(l(&pred, &truth, 1), 0.0);
    pred[0] = ln(50.0);
    assert!((l(&pred, &truth, 1) - 0.01).abs() < 1e-12);
    pred[4] = 0.8;
    let single = l(&pred, &truth, 1);
    let twice = |v: &[f64]| [v, v].concat();
    assert!((l(&twice(&pred), &twice(&truth), 2) - single).abs() < 1e-15);

    let g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(vec![2, 6]));
    let b = g.constant(Tensor::zeros(vec![3, 6]));
    assert!(matches!(loss_task1(&g, a, b), Err(PipelineError::Shape(_))));
}

#[test]
fn task2_loss_examples() {
    assert!((bce(&[0.0], &[0.0]) - 2f64.ln()).abs() < 1e-15);
    assert!((bce(&[1.0], &[1.0]) - (1.0 + (-1f64).exp()).ln()).abs() < 1e-15);
    assert!((bce(&[1.0], &[1.0]) - 0.313262).abs() < 1e-6);
    for (y, target, expect) in [(1e4, 1.0, 0.0), (-1e4, 0.0, 0.0), (1e4, 0.0, 1e4), (-1e4, 1.0, 1e4)] {
        let l = bce(&[y], &[target]);
        assert!(l.is_finite() && (l - expect).abs() < 1e-9, "{y} {target}: {l}");
    }
    let g = Graph::<f64>::new();
    let y = g.constant(Tensor::zeros(vec![1, 1]));
    let bad = g.constant(Tensor::full(vec![1, 1], 0.5));
    assert!(matches!(loss_task2(&g, y, bad), Err(PipelineError::InvalidTarget(_))));
}

#[test]
fn stable_bce_matches_naive_form() {
    let naive = |y: f64, target: f64| {
        let s = 1.0 / (1.0 + (-y).exp());
        -(target * s.ln() + (1.0 - target) * (1.0 - s).ln())
    };
    let mut y = -15.0;
    while y <= 15.0 {
        for target in [0.0, 1.0] {
            let l = bce(&[y], &[target]);
            assert!((l - naive(y, target)).abs() < 1e-9, "{y} {target}");
        }
        y += 0.25;
    }
}

#[test]
fn aggregation_examples() {
    let outs = [[1.0, 2.0], [4.0, -1.0], [7.0, 0.5]];
    let run = |alpha: &[f64], k: usize| {
        let g = Graph::<f64>::new();
        let ys: Vec<_> = outs[..k].iter().map(|o| g.constant(t(&[2, 1], o))).collect();
        let a = g.constant(t(&[alpha.len()], alpha));
        aggregate(&g, &ys, a).map(|v| g.value(v).data().to_vec())
    };
    let mean = run(&[0.3, 0.3, 0.3], 3).unwrap();
    assert!((mean[0] - 4.0).abs() < 1e-12 && (mean[1] - 0.5).abs() < 1e-12);
    let first = run(&[50.0, -50.0, -50.0], 3).unwrap();
    assert!((first[0] - 1.0).abs() < 1e-6 && (first[1] - 2.0).abs() < 1e-6);
    assert_eq!(run(&[-2.0], 1).unwrap(), vec![1.0, 2.0]);
    assert!(matches!(run(&[0.0, 0.0], 3), Err(PipelineError::Shape(_))));

    let w = softmax_values(&[1.0, 2.0, -3.0]);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let shifted = softmax_values(&[1001.0, 1002.0, 997.0]);
    for (a, b) in w.iter().zip(&shifted) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn specs(task1: &[(ModelKind, usize)], task2: &[(ModelKind, usize)]) -> Vec<ModelSpec> {
    let mk = |task, &(k, r): &(ModelKind, usize)| ModelSpec::new(task, k, r, 11).unwrap();
    task1
        .iter()
        .map(|s| mk(Task::Task1, s))
        .chain(task2.iter().map(|s| mk(Task::Task2, s)))
        .collect()
}

fn small_dataset(n: usize, seed: u64) -> Dataset {
    Dataset::generate(&GeneratorConfig {
        n_events: n,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn batch64(ds: &Dataset, n: usize) -> Batch<f64> {
    let splits = Splits::from_dataset(ds).unwrap();
    let idx: Vec<usize> = (0..n).collect();
    splits.train.batch::<f64>(&idx)
}

/// Store with every weight of `net` set to U(-0.3, 0.3), α included.
fn randomized(store: &ParamStore<f32>, seed: u64) -> ParamStore<f64> {
    let mut s = store.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = s.ids().collect();
    for id in ids {
        let shape = s.get(id).shape().to_vec();
        s.set(id, Tensor::from_fn(shape, |_| rng.gen_range(-0.3..0.3)));
    }
    s
}

#[test]
fn combined_loss_identities() {
    let ds = small_dataset(60, 2);
    let b = batch64(&ds, 8);
    let mut s32 = ParamStore::<f32>::new();
    let cands = Candidates::build(&mut s32, &specs(&[(ModelKind::Mlp1, 0)], &[(ModelKind::Mlp2, 0)])).unwrap();
    let net = Supernet::new(&mut s32, cands.clone()).unwrap();
    let store = randomized(&s32, 1);
    let rng = || ChaCha8Rng::seed_from_u64(0);
    let (m1, m2) = (&cands.task1[0], &cands.task2[0]);

    let l2 = graph_value(|g| {
        let y1 = m1.forward_task1(g, &store, msnas_core::models::Task1Input {
            jets: g.constant(b.jets.clone()),
            images: g.constant(b.images.clone()),
        }, &mut rng()).unwrap();
        let y2 = m2.forward_task2(g, &store, y1, &mut rng()).unwrap();
        loss_task2(g, y2, g.constant(b.labels.clone())).unwrap()
    });
    let darts = |v: [f64; 2], eps: f64| {
        graph_value(|g| combined_loss_darts(g, &store, &net, &b, v, eps, &mut rng()).unwrap())
    };
    let spos = |v: [f64; 2]| graph_value(|g| combined_loss_spos(g, &store, m1, m2, &b, v, &mut rng()).unwrap());
    assert!((darts([0.0, 1.0], 1.0) - 2.0 * l2).abs() < 1e-12 * l2.max(1.0));
    assert!((spos([0.0, 1.0]) - l2).abs() < 1e-12 * l2.max(1.0));
    for v in [[0.3, 0.7], [1.0, 0.0], [0.5, 0.5]] {
        let single = spos(v);
        assert!((darts(v, 0.0) - single).abs() < 1e-12 * single.max(1.0));
        assert!((darts(v, 1.0) - 2.0 * single).abs() < 1e-12 * single.max(1.0));
    }

    // v2 = 0 sends no gradient to Task2 weights
    let g = Graph::new();
    let l = combined_loss_darts(&g, &store, &net, &b, [1.0, 0.0], 1.0, &mut rng()).unwrap();
    let grads = g.gradients(l).unwrap();
    for &id in m2.params().iter().chain([&net.alpha[1]]) {
        assert!(grads.get_or_zero(id, &store).data().iter().all(|&x| x == 0.0));
    }
    assert!(grads.get_or_zero(net.alpha[0], &store).data().iter().all(|&x| x == 0.0));
    assert!(grads.get_or_zero(m1.params()[0], &store).max_abs() > 0.0);
}

#[test]
fn identical_candidates_reduce_to_single_path() {
    let ds = small_dataset(40, 3);
    let b = batch64(&ds, 6);
    let mut s32 = ParamStore::<f32>::new();
    // SF starts as the identity regardless of replica, so the two copies agree
    let cands = Candidates::build(
        &mut s32,
        &specs(&[(ModelKind::Sf, 0), (ModelKind::Sf, 1)], &[(ModelKind::Mass, 0)]),
    )
    .unwrap();
    let net = Supernet::new(&mut s32, cands.clone()).unwrap();
    let store = s32.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for v in [[0.5, 0.5], [0.9, 0.1]] {
        let d = graph_value(|g| combined_loss_darts(g, &store, &net, &b, v, 0.0, &mut rng).unwrap());
        let s = graph_value(|g| combined_loss_spos(g, &store, &cands.task1[0], &cands.task2[0], &b, v, &mut rng).unwrap());
        assert!((d - s).abs() < 1e-12 * s.max(1.0), "{d} {s}");
    }
}

#[test]
fn identity_sf_with_mass_on_truth_inputs() {
    let ds = small_dataset(40, 4);
    let mut b = batch64(&ds, 10);
    // candidates replaced by the true taus
    let truth = b.truth.data().to_vec();
    b.jets = Tensor::from_fn(vec![20, 4], |i| if i % 4 == 3 { 0.5 } else { truth[3 * (i / 4) + i % 4] });
    let mut s32 = ParamStore::<f32>::new();
    let cands = Candidates::build(&mut s32, &specs(&[(ModelKind::Sf, 0)], &[(ModelKind::Mass, 0)])).unwrap();
    let mut store = randomized(&s32, 5);
    let sf = &cands.task1[0];
    store.set(sf.params()[0], Tensor::full(vec![1, 3], 1.0));
    store.set(sf.params()[1], Tensor::zeros(vec![3]));
    let mass = &cands.task2[0];
    let path = graph_value(|g| {
        combined_loss_spos(g, &store, sf, mass, &b, [0.0, 1.0], &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    });
    let standalone = graph_value(|g| {
        let y = mass
            .forward_task2(g, &store, g.constant(b.truth.clone()), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        loss_task2(g, y, g.constant(b.labels.clone())).unwrap()
    });
    assert!((path - standalone).abs() < 1e-12, "{path} {standalone}");
    // the raw mass feature is nontrivial on these events
    let g = Graph::<f64>::new();
    let m = system_mass(&g, g.constant(b.truth.clone())).unwrap();
    assert!(g.value(m).data().iter().all(|&v| v > 0.5));
}

#[test]
fn combined_losses_pass_gradient_checks() {
    let ds = small_dataset(40, 5);
    let b = batch64(&ds, 3);
    let mut s32 = ParamStore::<f32>::new();
    let cands = Candidates::build(
        &mut s32,
        &specs(
            &[(ModelKind::Sf, 0), (ModelKind::Mlp1, 0), (ModelKind::Noise, 0)],
            &[(ModelKind::Mlp2, 0), (ModelKind::Mass, 0), (ModelKind::Zeros, 0)],
        ),
    )
    .unwrap();
    let net = Supernet::new(&mut s32, cands.clone()).unwrap();
    let store = randomized(&s32, 6);
    let opts = GradCheckOptions {
        step: 1e-6,
        max_elements_per_param: 12,
        ..Default::default()
    };
    let mut params = net.weight_params();
    params.extend(net.alpha);
    for eps in [0.0, 1.0] {
        let report = finite_difference_check(&store, &params, opts.clone(), |g, s| {
            combined_loss_darts(g, s, &net, &b, [0.4, 0.6], eps, &mut ChaCha8Rng::seed_from_u64(1))
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-4, "darts eps {eps}: {:?}", report.params);
        let alpha = report.params.iter().filter(|p| p.name.starts_with("alpha")).count();
        assert_eq!(alpha, 2);
    }
    let (t1, t2) = (&cands.task1[1], &cands.task2[0]);
    let path: Vec<_> = t1.params().iter().chain(t2.params()).copied().collect();
    let report = finite_difference_check(&store, &path, opts, |g, s| {
        combined_loss_spos(g, s, t1, t2, &b, [0.4, 0.6], &mut ChaCha8Rng::seed_from_u64(1))
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-4, "spos: {:?}", report.params);
}

/// Concordant-pair count with ties worth one half.
fn brute_auc(scores: &[f64], labels: &[f32]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1.0 && labels[j] == 0.0 {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

#[test]
fn auc_matches_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let n = rng.gen_range(2..=200);
        let mut labels: Vec<f32> = (0..n).map(|_| rng.gen_range(0..2) as f32).collect();
        labels[0] = 0.0;
        labels[1] = 1.0;
        // coarse scores so that ties are common
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..12) as f64 / 4.0).collect();
        assert_eq!(auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
    }
    assert_eq!(auc(&[0.9, 0.8, 0.1], &[1.0, 1.0, 0.0]).unwrap(), 1.0);
    assert_eq!(auc(&[0.4; 5], &[1.0, 0.0, 1.0, 0.0, 0.0]).unwrap(), 0.5);
    assert!(auc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
}

proptest! {
    #[test]
    fn auc_invariant_under_increasing_transform(
        pairs in prop::collection::vec((-5.0f64..5.0, prop::bool::ANY), 2..80),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| (p.0 * 4.0).round() / 4.0).collect();
        let labels: Vec<f32> = pairs.iter().map(|p| p.1 as u8 as f32).collect();
        prop_assume!(labels.contains(&0.0) && labels.contains(&1.0));
        let warped: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + s.powi(3)).collect();
        prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&warped, &labels).unwrap());
    }

    #[test]
    fn selection_is_shift_invariant(a in prop::collection::vec(-10.0f64..10.0, 1..6), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = a.iter().map(|x| x + c).collect();
        let base = select_argmax(&[a.clone(), a.clone()]).unwrap();
        prop_assert_eq!(base, select_argmax(&[shifted.clone(), a.clone()]).unwrap());
        for (p, q) in softmax_values(&a).iter().zip(softmax_values(&shifted)) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }
}

#[test]
fn argmax_and_argmin_selection() {
    let a = |v: &[f64]| v.to_vec();
    assert_eq!(select_argmax(&[a(&[0.2, 0.2, 0.1]), a(&[-5.0, 3.0, 0.0])]).unwrap(), (0, 1));
    assert_eq!(select_argmax(&[a(&[0.1, 0.7, 0.2, -3.0, -3.0]), a(&[1.0])]).unwrap(), (1, 0));
    assert!(select_argmax(&[vec![], a(&[1.0])]).is_err());
    assert_eq!(argmin_first(&[0.3, 0.2, 0.25]), Some(1));
}

#[test]
fn path_sampler_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut counts = [0usize; 9];
    for _ in 0..9000 {
        let (i, j) = sample_path(&mut rng, 3, 3);
        counts[3 * i + j] += 1;
    }
    for c in counts {
        assert!((900..=1100).contains(&c), "{counts:?}");
    }
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
    let p = 1.0 - ChiSquared::new(8.0).unwrap().cdf(chi2);
    assert!(p > 0.001, "chi2 {chi2}, p {p}");
}

fn desk_cfg(v1: f64, seed: u64, epochs: usize) -> SelectionConfig {
    SelectionConfig {
        v1,
        seed,
        batch_size: 32,
        max_epochs: epochs,
        patience_train: 2,
        patience_search: 2,
        ..Default::default()
    }
}

#[test]
fn scale_factor_learns_identity_calibration() {
    let ds = small_dataset(1000, 6);
    let splits = Splits::from_dataset(&ds).unwrap();
    // truth replaced by the candidates themselves
    let identity = |p: &msnas_core::pipeline::Prepared| {
        let jets = p.jets();
        let f: Vec<f32> = (0..2 * p.len()).flat_map(|r| jets[4 * r..4 * r + 3].to_vec()).collect();
        p.with_features(f)
    };
    let splits = Splits {
        train: identity(&splits.train),
        val: identity(&splits.val),
        test: identity(&splits.test),
    };
    let mut store = ParamStore::<f32>::new();
    let cands = Candidates::build(&mut store, &specs(&[(ModelKind::Sf, 0)], &[(ModelKind::Zeros, 0)])).unwrap();
    let (a, b) = (cands.task1[0].params()[0], cands.task1[0].params()[1]);
    store.set(a, Tensor::from_f64(vec![1, 3], &[1.3, 0.8, 1.2]).unwrap());
    store.set(b, Tensor::from_f64(vec![3], &[0.2, -0.2, 0.15]).unwrap());
    let cfg = SelectionConfig {
        learning_rate: 1e-2,
        patience_train: 20,
        max_epochs: 400,
        ..desk_cfg(0.5, 0, 400)
    };
    let pre = pretrain(store, cands, &splits, &cfg).unwrap();
    let (a, b) = (pre.store.get(a).data().to_vec(), pre.store.get(b).data().to_vec());
    for k in 0..3 {
        assert!((a[k] - 1.0).abs() < 0.05, "a {a:?}");
        assert!(b[k].abs() < 0.05, "b {b:?}");
    }
}

#[test]
fn pretraining_restores_best_weights() {
    let ds = small_dataset(300, 7);
    let splits = Splits::from_dataset(&ds).unwrap();
    let mut store = ParamStore::<f32>::new();
    let cands = Candidates::build(&mut store, &specs(&[(ModelKind::Sf, 0)], &[(ModelKind::Mlp2, 0)])).unwrap();
    let cfg = desk_cfg(0.5, 3, 12);
    let pre = pretrain(store, cands.clone(), &splits, &cfg).unwrap();
    assert_eq!(pre.records.len(), 2);
    let m = &cands.task2[0];
    let val = splits.val.without_images();
    let mut loss = |g: &Graph<f32>, s: &ParamStore<f32>, b: &Batch<f32>, r: &mut ChaCha8Rng| {
        let y = m.forward_task2(g, s, g.constant(b.truth.clone()), r)?;
        loss_task2(g, y, g.constant(b.labels.clone()))
    };
    let again = evaluate(&pre.store, &val, cfg.batch_size, &mut ChaCha8Rng::seed_from_u64(0), &mut loss).unwrap();
    let rec = &pre.records[1].report;
    assert!((again - rec.best_val_loss).abs() < 1e-6, "{again} vs {}", rec.best_val_loss);
    assert!(rec.stop_epoch <= cfg.max_epochs);
    assert_eq!(rec.stop_epoch, rec.epochs.len());
    let min = rec.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(min, rec.best_val_loss);
    if rec.stop_reason == StopReason::Patience {
        assert_eq!(rec.stop_epoch, rec.best_epoch + cfg.patience_train);
    }
}

#[test]
fn single_candidates_make_spos_a_plain_pair_fit() {
    let ds = small_dataset(200, 8);
    let splits = Splits::from_dataset(&ds).unwrap();
    let mut store = ParamStore::<f32>::new();
    let cands = Candidates::build(&mut store, &specs(&[(ModelKind::Sf, 0)], &[(ModelKind::Mlp2, 0)])).unwrap();
    let (combo, report) = spos_search(&mut store, &cands, &splits, &desk_cfg(0.5, 1, 4)).unwrap();
    assert_eq!((combo.task1, combo.task2), (0, 0));
    assert!(report.alpha_trajectory.is_none());
    assert!(combo.val_loss.is_finite());
}

#[test]
fn darts_runs_are_deterministic() {
    let ds = small_dataset(200, 9);
    let splits = Splits::from_dataset(&ds).unwrap();
    let cfg = desk_cfg(0.5, 4, 3);
    let run = || {
        let mut store = ParamStore::<f32>::new();
        let cands = Candidates::build(
            &mut store,
            &specs(
                &[(ModelKind::Sf, 0), (ModelKind::Mlp1, 0), (ModelKind::Zeros, 0)],
                &[(ModelKind::Mlp2, 0), (ModelKind::Mass, 0), (ModelKind::Noise, 0)],
            ),
        )
        .unwrap();
        let pre = pretrain(store, cands, &splits, &cfg).unwrap();
        run_darts(&pre, &splits, &cfg, true).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.combo, b.combo);
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.test_task1, b.test_task1);
    let search = a.search.unwrap();
    let traj = search.alpha_trajectory.unwrap();
    assert_eq!(traj.len(), 6 * search.stop_epoch);
    assert_eq!(traj.last().unwrap().epoch, search.stop_epoch);
}

#[test]
fn grid_trains_every_pair() {
    let ds = small_dataset(160, 10);
    let splits = Splits::from_dataset(&ds).unwrap();
    let mut store = ParamStore::<f32>::new();
    let cands = Candidates::build(
        &mut store,
        &specs(
            &[(ModelKind::Sf, 0), (ModelKind::Mlp1, 0), (ModelKind::Cnn1, 0), (ModelKind::Zeros, 0)],
            &[(ModelKind::Mlp2, 0), (ModelKind::Mass, 0), (ModelKind::Lstm2, 0)],
        ),
    )
    .unwrap();
    let cfg = desk_cfg(0.0, 2, 3);
    let pre = pretrain(store, cands, &splits, &cfg).unwrap();
    for reopt in [false, true] {
        let res = grid_search(&pre, &splits, &cfg, reopt).unwrap();
        // dummies are excluded
        assert_eq!(res.len(), 9);
        let mut pairs: Vec<_> = res.iter().map(|r| (r.task1, r.task2)).collect();
        pairs.sort_unstable();
        pairs.dedup();
        assert_eq!(pairs.len(), 9);
        assert!(res.windows(2).all(|w| w[0].val_loss <= w[1].val_loss));
        assert!(res.iter().all(|r| r.reoptimized == reopt && (0.0..=1.0).contains(&r.metrics.auc_t2)));
    }
}
