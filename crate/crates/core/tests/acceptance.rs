//! Acceptance suite: one test per criterion, each printing a PASS line when
//! its assertions hold. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines.

use ndarray::{Array2, Array3, Ix2, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use tasked_core::data::{
    loso_fold_specs, loso_splits, make_synthetic, splits::split_for, FoldSpec, SyntheticConfig,
};
use tasked_core::eval::report::{aggregate_csv, results_csv};
use tasked_core::eval::{
    run_loso, subject_probe_accuracy, ConfusionMatrix, SweepOptions,
};
use tasked_core::graph::gradcheck::max_relative_error;
use tasked_core::graph::{Arr, Graph};
use tasked_core::losses::{
    activity_loss, classification_loss, domain_loss, kd_loss, mmd_regularizer, mmd2, objective,
    softened_probs, ClassWeights, KernelBank, LossHyper,
};
use tasked_core::model::{
    classify_activity, discriminate_subject, embed_mean_vectors, embedding_vectors,
    extract_features, Bound, BnUpdates, ForwardOpts, Mode, ModelConfig, ModelDims, ModelParams,
    Net,
};
use tasked_core::training::{
    adversarial_step, pretrain_step, train, Adam, Batch, StepCtx, TrainConfig, TrainData,
};

fn onehot(labels: &[usize], n: usize) -> Array2<f64> {
    let mut y = Array2::zeros((labels.len(), n));
    for (i, &l) in labels.iter().enumerate() {
        y[[i, l]] = 1.0;
    }
    y
}

fn random_logits(rng: &mut ChaCha20Rng, n: usize, k: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, k), |_| rng.gen_range(-2.0..2.0))
}

// ---------------------------------------------------------------------------
// Criterion 1: loss gradient suite (analytic vs central finite differences,
// relative error < 1e-4, batch <= 8, double precision).
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_loss_gradient_suite() {
    let started = std::time::Instant::now();
    let tol = 1e-4;
    let mut rng = ChaCha20Rng::seed_from_u64(101);

    // activity_loss w.r.t. logits.
    let y = onehot(&[0, 2, 1, 3, 0, 2], 4);
    let w = ClassWeights {
        w: vec![0.7, 1.2, 1.0, 1.1],
    };
    let logits0 = random_logits(&mut rng, 6, 4).into_dyn();
    let f = |x: &Arr| {
        let mut g = Graph::new();
        let v = g.leaf(x.clone());
        let l = activity_loss(&mut g, v, &y, &w, 1e-6).unwrap();
        g.scalar_value(l)
    };
    let mut g = Graph::new();
    let v = g.leaf(logits0.clone());
    let l = activity_loss(&mut g, v, &y, &w, 1e-6).unwrap();
    let grads = g.backward(l);
    let err = max_relative_error(f, &logits0, grads.wrt(v), 1e-6, None);
    assert!(err < tol, "activity_loss gradient error {err}");

    // kd_loss w.r.t. student logits.
    let teacher = random_logits(&mut rng, 5, 3);
    let student0 = random_logits(&mut rng, 5, 3).into_dyn();
    let f = |x: &Arr| {
        let mut g = Graph::new();
        let v = g.leaf(x.clone());
        let l = kd_loss(&mut g, v, &teacher, 20.0).unwrap();
        g.scalar_value(l)
    };
    let mut g = Graph::new();
    let v = g.leaf(student0.clone());
    let l = kd_loss(&mut g, v, &teacher, 20.0).unwrap();
    let grads = g.backward(l);
    let err = max_relative_error(f, &student0, grads.wrt(v), 1e-6, None);
    assert!(err < tol, "kd_loss gradient error {err}");

    // domain_loss w.r.t. discriminator logits.
    let subjects = vec![0usize, 1, 2, 0, 1];
    let d0 = random_logits(&mut rng, 5, 4).into_dyn();
    let f = |x: &Arr| {
        let mut g = Graph::new();
        let v = g.leaf(x.clone());
        let l = domain_loss(&mut g, v, &subjects).unwrap();
        g.scalar_value(l)
    };
    let mut g = Graph::new();
    let v = g.leaf(d0.clone());
    let l = domain_loss(&mut g, v, &subjects).unwrap();
    let grads = g.backward(l);
    let err = max_relative_error(f, &d0, grads.wrt(v), 1e-6, None);
    assert!(err < tol, "domain_loss gradient error {err}");

    // mmd2 w.r.t. both embedding sets, fixed kernel bank.
    let bank = KernelBank::new(&[0.8, 1.7], &[0.4, 0.6]).unwrap();
    let a0 = Array2::from_shape_fn((6, 5), |_| rng.gen_range(-1.0..1.0)).into_dyn();
    let b0 = Array2::from_shape_fn((4, 5), |_| rng.gen_range(-1.0..1.0)).into_dyn();
    let fa = |x: &Arr| {
        let mut g = Graph::new();
        let va = g.leaf(x.clone());
        let vb = g.constant(b0.clone());
        let l = mmd2(&mut g, va, vb, &bank).unwrap();
        g.scalar_value(l)
    };
    let fb = |x: &Arr| {
        let mut g = Graph::new();
        let va = g.constant(a0.clone());
        let vb = g.leaf(x.clone());
        let l = mmd2(&mut g, va, vb, &bank).unwrap();
        g.scalar_value(l)
    };
    let mut g = Graph::new();
    let va = g.leaf(a0.clone());
    let vb = g.leaf(b0.clone());
    let l = mmd2(&mut g, va, vb, &bank).unwrap();
    let grads = g.backward(l);
    let err_a = max_relative_error(fa, &a0, grads.wrt(va), 1e-6, None);
    let err_b = max_relative_error(fb, &b0, grads.wrt(vb), 1e-6, None);
    assert!(err_a < tol && err_b < tol, "mmd2 gradient errors {err_a} / {err_b}");

    // Full extractor objective w.r.t. extractor parameters: fixed dropout
    // masks (seeded per call), fixed kernel bank, frozen teacher logits.
    let dims = ModelDims {
        window: 64,
        sensors: vec![("a".into(), 2), ("b".into(), 2)],
        n_activities: 3,
        n_domains: 3,
    };
    let mut config = ModelConfig::default();
    config.feature_dropout = 0.1;
    config.drop_connect = 0.1;
    config.discriminator_dropout = 0.1;
    let params = ModelParams::init(dims.clone(), config, &mut rng).unwrap();
    let batch_x = Array3::from_shape_fn((4, 4, 64), |(b, c, t)| {
        ((b * 977 + c * 131 + t) as f64 * 0.13).sin()
    });
    let y = onehot(&[0, 1, 2, 1], 3);
    let subjects = vec![0usize, 1, 0, 1];
    let weights = ClassWeights::uniform(3);
    let hyper = LossHyper::default();
    let teacher = random_logits(&mut rng, 4, 3);
    let bank = KernelBank::new(&[1.0, 2.0], &[0.5, 0.5]).unwrap();

    // One deterministic builder used for both the analytic pass and the
    // finite-difference oracle (dropout masks are reseeded per call).
    let build = |p: &ModelParams| -> (Graph, Bound, tasked_core::graph::Var) {
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, p, &[Net::Extractor]);
        let mut mask_rng = ChaCha20Rng::seed_from_u64(4242);
        let mut opts = ForwardOpts {
            mode: Mode::Train,
            rng: &mut mask_rng,
        };
        let mut updates = BnUpdates::default();
        let feats = extract_features(&mut g, p, &bound, &batch_x, &mut opts, &mut updates).unwrap();
        let logits = classify_activity(&mut g, &bound, feats.embedding);
        let d_logits = discriminate_subject(&mut g, p, &bound, feats.embedding, &mut opts, &mut updates);
        let (l_cls, _, _) = classification_loss(&mut g, logits, &y, &teacher, &weights, &hyper).unwrap();
        let l_d = domain_loss(&mut g, d_logits, &subjects).unwrap();
        let vectors = embedding_vectors(&mut g, feats.embedding);
        let mut groups = Vec::new();
        for subj in [0usize, 1] {
            let rows: Vec<usize> = subjects
                .iter()
                .enumerate()
                .filter_map(|(i, &s)| (s == subj).then_some(i))
                .collect();
            let mut mask = Array2::<f64>::zeros((rows.len(), subjects.len()));
            for (r, &i) in rows.iter().enumerate() {
                mask[[r, i]] = 1.0;
            }
            let mask = g.constant(mask.into_dyn());
            groups.push(g.matmul(mask, vectors));
        }
        let (l_mmd, warned) = mmd_regularizer(&mut g, &groups, &bank).unwrap();
        assert!(!warned);
        let (ext, _, _) = objective(&mut g, l_cls, l_mmd, l_d, &hyper);
        (g, bound, ext)
    };

    let (g, bound, ext) = build(&params);
    let grads = g.backward(ext);
    let trainable: std::collections::BTreeSet<usize> =
        params.trainable(Net::Extractor).into_iter().collect();
    let mut coord_rng = ChaCha20Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for (idx, var) in bound.slots() {
        if !trainable.contains(&idx) {
            continue;
        }
        let analytic = grads.wrt(var);
        let len = analytic.len();
        let n_coords = 6.min(len);
        let coords: Vec<usize> = (0..n_coords).map(|_| coord_rng.gen_range(0..len)).collect();
        let f = |x: &Arr| {
            let mut p2 = params.clone();
            p2.set_at(idx, x.clone());
            let (g2, _, ext2) = build(&p2);
            g2.scalar_value(ext2)
        };
        let e = max_relative_error(f, params.value_at(idx), analytic, 1e-5, Some(&coords));
        worst = worst.max(e);
    }
    assert!(worst < tol, "extractor objective gradient error {worst}");

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "gradient suite took {elapsed:.1?}");
    println!("[PASS] criterion 1: loss gradient suite (max tolerance 1e-4, {elapsed:.1?})");
}

// ---------------------------------------------------------------------------
// Criterion 2: MMD oracle suite.
// ---------------------------------------------------------------------------

fn mmd2_brute(a: &Array2<f64>, b: &Array2<f64>, bank: &KernelBank) -> f64 {
    let k = |x: ndarray::ArrayView1<f64>, y: ndarray::ArrayView1<f64>| -> f64 {
        let d2: f64 = x.iter().zip(y.iter()).map(|(u, v)| (u - v) * (u - v)).sum();
        bank.kernels
            .iter()
            .map(|&(s, beta)| beta * (-d2 / (2.0 * s * s)).exp())
            .sum()
    };
    let (m, n) = (a.nrows(), b.nrows());
    let mut ss = 0.0;
    for i in 0..m {
        for j in 0..m {
            ss += k(a.row(i), a.row(j));
        }
    }
    let mut tt = 0.0;
    for i in 0..n {
        for j in 0..n {
            tt += k(b.row(i), b.row(j));
        }
    }
    let mut st = 0.0;
    for i in 0..m {
        for j in 0..n {
            st += k(a.row(i), b.row(j));
        }
    }
    ss / (m * m) as f64 + tt / (n * n) as f64 - 2.0 * st / (m * n) as f64
}

#[test]
fn criterion_2_mmd_oracle_suite() {
    let mut rng = ChaCha20Rng::seed_from_u64(202);
    for case in 0..100 {
        let m = rng.gen_range(1..=32);
        let n = rng.gen_range(1..=32);
        let d = rng.gen_range(1..=8);
        let a = Array2::from_shape_fn((m, d), |_| rng.gen_range(-2.0..2.0));
        let b = Array2::from_shape_fn((n, d), |_| rng.gen_range(-2.0..2.0));
        let bank = if case % 2 == 0 {
            KernelBank::single(rng.gen_range(0.4..3.0))
        } else {
            KernelBank::new(&[0.5, 1.0, 2.0, 4.0, 8.0], &[0.2; 5]).unwrap()
        };
        let mut g = Graph::new();
        let va = g.leaf(a.clone().into_dyn());
        let vb = g.leaf(b.clone().into_dyn());
        let v = mmd2(&mut g, va, vb, &bank).unwrap();
        let vectorized = g.scalar_value(v);
        let brute = mmd2_brute(&a, &b, &bank);
        assert!(
            (vectorized - brute).abs() < 1e-9,
            "case {case}: {vectorized} vs {brute}"
        );
        assert!(vectorized > -1e-9, "negative mmd2 {vectorized}");

        // Identical multisets give zero.
        let mut g = Graph::new();
        let va = g.leaf(a.clone().into_dyn());
        let vb = g.leaf(a.clone().into_dyn());
        let v = mmd2(&mut g, va, vb, &bank).unwrap();
        assert!(g.scalar_value(v).abs() < 1e-9);
    }

    // 1-D closed form: {0} vs {1}, single kernel with 2 sigma^2 = 1.
    let bank = KernelBank::single(1.0 / std::f64::consts::SQRT_2);
    let mut g = Graph::new();
    let va = g.leaf(ndarray::arr2(&[[0.0]]).into_dyn());
    let vb = g.leaf(ndarray::arr2(&[[1.0]]).into_dyn());
    let v = mmd2(&mut g, va, vb, &bank).unwrap();
    let expected = 2.0 - 2.0 * (-1.0f64).exp();
    assert!((g.scalar_value(v) - expected).abs() < 1e-6);
    assert!((expected - 1.2642).abs() < 1e-4);
    println!("[PASS] criterion 2: MMD oracle suite (100 cases within 1e-9, closed form within 1e-6)");
}

// ---------------------------------------------------------------------------
// Criterion 3: architecture shape suite.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_architecture_shapes() {
    for (w, s, n_a, n_subj) in [(64usize, 10usize, 5usize, 4usize), (120, 9, 33, 17), (200, 3, 12, 8)] {
        let dims = ModelDims {
            window: w,
            sensors: (0..s).map(|i| (format!("s{i}"), 2)).collect(),
            n_activities: n_a,
            n_domains: n_subj + 1,
        };
        let mut config = ModelConfig::default();
        config.collect_attention = true;
        let mut rng = ChaCha20Rng::seed_from_u64(303);
        let params = ModelParams::init(dims.clone(), config, &mut rng).unwrap();
        let x = Array3::from_shape_fn((2, dims.n_channels(), w), |(b, c, t)| {
            ((b * 43 + c * 17 + t) as f64 * 0.21).sin()
        });
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &params, &[]);
        let mut rng2 = ChaCha20Rng::seed_from_u64(1);
        let mut opts = ForwardOpts {
            mode: Mode::Train,
            rng: &mut rng2,
        };
        let mut updates = BnUpdates::default();
        let out = extract_features(&mut g, &params, &bound, &x, &mut opts, &mut updates).unwrap();
        assert_eq!(g.shape(out.embedding), &[2, 256, w / 8], "W={w}");
        let logits = classify_activity(&mut g, &bound, out.embedding);
        assert_eq!(g.shape(logits), &[2, n_a]);
        let d = discriminate_subject(&mut g, &params, &bound, out.embedding, &mut opts, &mut updates);
        assert_eq!(g.shape(d), &[2, n_subj + 1]);
        assert_eq!(out.attention.len(), 3);
        for rec in &out.attention {
            for mat in [&rec.softmax, &rec.renormalized] {
                assert_eq!(mat.shape()[1], s);
                assert_eq!(mat.shape()[2], s);
                for row in mat.rows() {
                    let sum: f64 = row.sum();
                    assert!(
                        (sum - 1.0).abs() <= 1e-6,
                        "W={w} block={} row sum {sum}",
                        rec.block
                    );
                    assert!(row.iter().all(|&v| v >= 0.0));
                }
            }
        }
    }
    println!("[PASS] criterion 3: architecture shapes for (64,10), (120,9), (200,3); attention rows sum to 1");
}

// ---------------------------------------------------------------------------
// Criterion 4: KD degeneracy.
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_kd_degeneracy() {
    let mut rng = ChaCha20Rng::seed_from_u64(404);
    let y = onehot(&[0, 1, 2, 0], 3);
    let weights = ClassWeights::uniform(3);
    let logits0 = random_logits(&mut rng, 4, 3);
    let teacher = random_logits(&mut rng, 4, 3);

    // alpha = 0: classification loss equals the activity loss exactly.
    let hyper = LossHyper {
        alpha: 0.0,
        ..LossHyper::default()
    };
    let mut g = Graph::new();
    let v = g.leaf(logits0.clone().into_dyn());
    let (total, act, _) = classification_loss(&mut g, v, &y, &teacher, &weights, &hyper).unwrap();
    assert_eq!(g.scalar_value(total), g.scalar_value(act));

    // teacher == student: kd_loss is zero.
    let mut g = Graph::new();
    let v = g.leaf(teacher.clone().into_dyn());
    let kd = kd_loss(&mut g, v, &teacher, 20.0).unwrap();
    assert!(g.scalar_value(kd).abs() < 1e-9);

    // tau = 1e6: softened probabilities uniform within 1e-6.
    let mut g = Graph::new();
    let v = g.leaf(logits0.into_dyn());
    let p = softened_probs(&mut g, v, 1e6);
    let uniform = 1.0 / 3.0;
    for &val in g.value(p).iter() {
        assert!((val - uniform).abs() < 1e-6, "softened prob {val}");
    }
    println!("[PASS] criterion 4: KD degeneracy (alpha=0 exact, teacher==student -> 0, tau=1e6 uniform)");
}

// ---------------------------------------------------------------------------
// Criterion 5: training-protocol assertions on a 3-subject synthetic set.
// ---------------------------------------------------------------------------

fn protocol_dataset() -> tasked_core::data::WindowedDataset {
    make_synthetic(&SyntheticConfig {
        n_subjects: 3,
        n_activities: 3,
        sensors: vec![2, 2],
        window_size: 64,
        windows_per_subject_per_activity: 8,
        subject_effect: 0.5,
        noise_std: 0.1,
        seed: 505,
    })
    .unwrap()
}

#[test]
fn criterion_5_training_protocol() {
    let started = std::time::Instant::now();
    let ds = protocol_dataset();
    let n_domains = ds.n_subjects() + 1;
    let dims = ModelDims::from_dataset(&ds, n_domains);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let base = ModelParams::init(dims, ModelConfig::default(), &mut rng).unwrap();
    let idx: Vec<usize> = (0..24).collect();
    let sel = ds.select(&idx);
    let batch = Batch {
        x: sel.windows.clone(),
        y: sel.activity_labels.clone(),
        s: sel.subject_labels.clone(),
        teacher: None,
    };
    let weights = ClassWeights::uniform(ds.n_activities);

    // Parameter ownership: enable one optimizer at a time; only that
    // network's trainable parameters may change over a full step.
    for (active, lr_e, lr_c, lr_d) in [
        (Net::Classifier, 0.0, 1e-3, 0.0),
        (Net::Discriminator, 0.0, 0.0, 1e-3),
        (Net::Extractor, 1e-3, 0.0, 0.0),
    ] {
        for phase in ["pretrain", "adversarial"] {
            let mut params = base.clone();
            let teacher = base.clone();
            let before = [
                params.trainable_hash(Net::Extractor),
                params.trainable_hash(Net::Classifier),
                params.trainable_hash(Net::Discriminator),
            ];
            let mut adam_e = Adam::new(lr_e, 0.9, 0.99);
            let mut adam_c = Adam::new(lr_c, 0.9, 0.99);
            let mut adam_d = Adam::new(lr_d, 0.9, 0.99);
            let hyper = LossHyper::default();
            let mut step_rng = ChaCha20Rng::seed_from_u64(9);
            let mut ctx = StepCtx {
                params: &mut params,
                teacher: Some(&teacher),
                adam_extractor: &mut adam_e,
                adam_classifier: &mut adam_c,
                adam_discriminator: &mut adam_d,
                hyper: &hyper,
                weights: &weights,
                rng: &mut step_rng,
                use_target_unlabeled: false,
            };
            match phase {
                "pretrain" => pretrain_step(&mut ctx, &batch).unwrap(),
                _ => adversarial_step(&mut ctx, &batch, None).unwrap(),
            };
            let after = [
                params.trainable_hash(Net::Extractor),
                params.trainable_hash(Net::Classifier),
                params.trainable_hash(Net::Discriminator),
            ];
            for (i, net) in [Net::Extractor, Net::Classifier, Net::Discriminator].iter().enumerate() {
                if *net == active {
                    assert_ne!(before[i], after[i], "{phase}: active {net:?} did not change");
                } else {
                    assert_eq!(before[i], after[i], "{phase}: inactive {net:?} changed");
                }
            }
        }
    }

    // Teacher freeze: the snapshot is bit-identical across step-2 updates.
    {
        let mut params = base.clone();
        let teacher = base.clone();
        let teacher_hash = teacher.content_hash(None);
        let mut adam_e = Adam::new(1e-4, 0.9, 0.99);
        let mut adam_c = Adam::new(1e-4, 0.9, 0.99);
        let mut adam_d = Adam::new(1e-3, 0.9, 0.99);
        let hyper = LossHyper::default();
        let mut step_rng = ChaCha20Rng::seed_from_u64(10);
        for _ in 0..4 {
            let mut ctx = StepCtx {
                params: &mut params,
                teacher: Some(&teacher),
                adam_extractor: &mut adam_e,
                adam_classifier: &mut adam_c,
                adam_discriminator: &mut adam_d,
                hyper: &hyper,
                weights: &weights,
                rng: &mut step_rng,
                use_target_unlabeled: false,
            };
            adversarial_step(&mut ctx, &batch, None).unwrap();
        }
        assert_eq!(teacher.content_hash(None), teacher_hash, "teacher drifted in step 2");
    }

    // Adversarial sign: with lambda_cls = lambda_mmd = 0 and lambda_d = 1,
    // the extractor scalar is +(L_D + L_act) in step 1 and exactly -L_D in
    // step 2.
    {
        let mut params = base.clone();
        let teacher = base.clone();
        let hyper = LossHyper {
            lambda_cls: 0.0,
            lambda_mmd: 0.0,
            lambda_d: 1.0,
            ..LossHyper::default()
        };
        let mut adam_e = Adam::new(1e-4, 0.9, 0.99);
        let mut adam_c = Adam::new(1e-4, 0.9, 0.99);
        let mut adam_d = Adam::new(1e-3, 0.9, 0.99);
        let mut step_rng = ChaCha20Rng::seed_from_u64(11);
        let mut ctx = StepCtx {
            params: &mut params,
            teacher: Some(&teacher),
            adam_extractor: &mut adam_e,
            adam_classifier: &mut adam_c,
            adam_discriminator: &mut adam_d,
            hyper: &hyper,
            weights: &weights,
            rng: &mut step_rng,
            use_target_unlabeled: false,
        };
        let b1 = pretrain_step(&mut ctx, &batch).unwrap();
        assert!(
            (b1.extractor_objective - (b1.domain + b1.activity)).abs() < 1e-9,
            "step-1 extractor scalar is the unweighted sum"
        );
        assert!(b1.extractor_objective > 0.0);
        let b2 = adversarial_step(&mut ctx, &batch, None).unwrap();
        assert!(
            (b2.extractor_objective + b2.domain).abs() < 1e-9,
            "step-2 extractor scalar must be -L_D, got {} vs domain {}",
            b2.extractor_objective,
            b2.domain
        );
        assert!(b2.extractor_objective < 0.0);
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 300, "protocol suite took {elapsed:.1?}");
    println!("[PASS] criterion 5: ownership hashes, teacher freeze, adversarial sign flip ({elapsed:.1?})");
}

// ---------------------------------------------------------------------------
// Criterion 6: generalization mechanism on subject-confounded data.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_generalization_mechanism() {
    let started = std::time::Instant::now();
    let ds = make_synthetic(&SyntheticConfig {
        n_subjects: 4,
        n_activities: 4,
        sensors: vec![3, 3],
        window_size: 64,
        windows_per_subject_per_activity: 12,
        subject_effect: 0.8,
        noise_std: 0.15,
        seed: 606,
    })
    .unwrap();
    let fold = FoldSpec {
        test_subject: 3,
        variant: 0,
    };
    let split = split_for(&ds, fold).unwrap();
    let train_ds = {
        let mut part = ds.select(&split.train);
        // Fold-local ids 0..N for the discriminator.
        let mut subs: Vec<usize> = part.subject_labels.clone();
        subs.sort_unstable();
        subs.dedup();
        let map: std::collections::BTreeMap<usize, usize> =
            subs.iter().enumerate().map(|(l, &o)| (o, l)).collect();
        for s in part.subject_labels.iter_mut() {
            *s = map[s];
        }
        part
    };
    let val_ds = ds.select(&split.val);
    let test_ds = ds.select(&split.test);

    let model_cfg = ModelConfig::default();
    let tasked_cfg = TrainConfig {
        batch_size: 48,
        epochs: 30,
        patience: 30,
        seed: 13,
        ..TrainConfig::default()
    };
    let data = TrainData {
        train: &train_ds,
        val: &val_ds,
        target: None,
    };
    let n_domains = train_ds.n_subjects() + 1;
    let outcome = train(&data, &model_cfg, &tasked_cfg, n_domains, None).unwrap();

    // (a) Subject probe on train-split embeddings: step-2 features must be
    // at least 10 points less subject-identifiable than step-1 features.
    let feats_step1 = embed_mean_vectors(&outcome.teacher, &train_ds.windows, 128).unwrap();
    let feats_step2 = embed_mean_vectors(&outcome.params, &train_ds.windows, 128).unwrap();
    let probe1 =
        subject_probe_accuracy(&feats_step1, &train_ds.subject_labels, train_ds.n_subjects(), 0).unwrap();
    let probe2 =
        subject_probe_accuracy(&feats_step2, &train_ds.subject_labels, train_ds.n_subjects(), 0).unwrap();
    println!(
        "  probe accuracy: step-1 {probe1:.3}, step-2 {probe2:.3} (drop {:.1} points)",
        100.0 * (probe1 - probe2)
    );
    assert!(
        probe1 - probe2 >= 0.10,
        "probe drop {:.1} points is below 10",
        100.0 * (probe1 - probe2)
    );

    // (b) Held-out macro F1: full objective vs the no-adversarial /
    // no-MMD / no-KD ablation on the same seed.
    let preds = tasked_core::model::predict_activities(&outcome.params, &test_ds.windows, 128).unwrap();
    let cm = ConfusionMatrix::from_pairs(
        ds.n_activities,
        test_ds.activity_labels.iter().copied().zip(preds),
    )
    .unwrap();
    let tasked_f1 = cm.metrics().unwrap().f_m;

    let ablation_cfg = TrainConfig {
        hyper: LossHyper {
            lambda_mmd: 0.0,
            lambda_d: 0.0,
            alpha: 0.0,
            ..LossHyper::default()
        },
        ..tasked_cfg.clone()
    };
    let ablation = train(&data, &model_cfg, &ablation_cfg, n_domains, None).unwrap();
    let preds = tasked_core::model::predict_activities(&ablation.params, &test_ds.windows, 128).unwrap();
    let cm = ConfusionMatrix::from_pairs(
        ds.n_activities,
        test_ds.activity_labels.iter().copied().zip(preds),
    )
    .unwrap();
    let ablation_f1 = cm.metrics().unwrap().f_m;
    println!("  held-out macro F1: tasked {tasked_f1:.3} vs ablation {ablation_f1:.3}");
    assert!(
        tasked_f1 >= ablation_f1,
        "full objective ({tasked_f1:.3}) fell below the ablation ({ablation_f1:.3})"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 900, "generalization suite took {elapsed:.1?}");
    println!(
        "[PASS] criterion 6: probe drop {:.1} >= 10 points; tasked {tasked_f1:.3} >= ablation {ablation_f1:.3} ({elapsed:.1?})",
        100.0 * (probe1 - probe2)
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: metrics oracle.
// ---------------------------------------------------------------------------

fn brute_force_metrics(truths: &[usize], preds: &[usize], n: usize) -> (f64, f64, f64) {
    let total = truths.len() as f64;
    let acc = truths.iter().zip(preds).filter(|&(t, p)| t == p).count() as f64 / total;
    let mut f_m = 0.0;
    let mut f_w = 0.0;
    for c in 0..n {
        let tp = truths.iter().zip(preds).filter(|&(&t, &p)| t == c && p == c).count() as f64;
        let fp = truths.iter().zip(preds).filter(|&(&t, &p)| t != c && p == c).count() as f64;
        let fn_ = truths.iter().zip(preds).filter(|&(&t, &p)| t == c && p != c).count() as f64;
        let support = truths.iter().filter(|&&t| t == c).count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f_m += f1 / n as f64;
        f_w += support / total * f1;
    }
    (acc, f_w, f_m)
}

#[test]
fn criterion_7_metrics_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(707);
    for case in 0..100 {
        let n = rng.gen_range(2..8);
        let len = rng.gen_range(1..200);
        // Skew predictions so zero-denominator classes occur regularly.
        let truths: Vec<usize> = (0..len).map(|_| rng.gen_range(0..n)).collect();
        let preds: Vec<usize> = (0..len)
            .map(|_| rng.gen_range(0..n.min(1 + case % n)))
            .collect();
        let cm = ConfusionMatrix::from_pairs(n, truths.iter().copied().zip(preds.iter().copied())).unwrap();
        let m = cm.metrics().unwrap();
        let (acc, f_w, f_m) = brute_force_metrics(&truths, &preds, n);
        assert_eq!(m.acc, acc, "case {case} acc");
        assert!((m.f_w - f_w).abs() < 1e-12, "case {case} f_w");
        assert!((m.f_m - f_m).abs() < 1e-12, "case {case} f_m");
    }
    // Worked example.
    let cm = ConfusionMatrix::from_counts(ndarray::arr2(&[[2u64, 1], [0, 3]])).unwrap();
    let m = cm.metrics().unwrap();
    assert!((m.acc - 0.8333).abs() < 1e-4);
    assert!((m.f_m - 0.8286).abs() < 1e-4);
    println!("[PASS] criterion 7: metrics match brute force on 100 cases; worked example acc 0.8333, F_m 0.8286");
}

// ---------------------------------------------------------------------------
// Criterion 8: LOSO plumbing.
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_loso_plumbing() {
    let ds = make_synthetic(&SyntheticConfig {
        n_subjects: 10,
        n_activities: 3,
        sensors: vec![2],
        window_size: 16,
        windows_per_subject_per_activity: 4,
        subject_effect: 0.2,
        noise_std: 0.05,
        seed: 808,
    })
    .unwrap();
    let folds = loso_fold_specs(&ds).unwrap();
    assert_eq!(folds.len(), 20, "10 subjects -> 20 folds");
    for fold in folds {
        let splits = loso_splits(&ds, fold.test_subject).unwrap();
        let split = &splits[fold.variant];
        let mut all: Vec<usize> = split
            .train
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.len()).collect::<Vec<_>>(), "partition not exhaustive");
        let subj = |ix: &[usize]| -> std::collections::BTreeSet<usize> {
            ix.iter().map(|&i| ds.subject_labels[i]).collect()
        };
        let (tr, va, te) = (subj(&split.train), subj(&split.val), subj(&split.test));
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        assert_eq!(te, std::collections::BTreeSet::from([fold.test_subject]));
    }
    println!("[PASS] criterion 8: 10-subject sweep yields exactly 20 disjoint, exhaustive folds");
}

// ---------------------------------------------------------------------------
// Criterion 9: determinism of full LOSO runs.
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_determinism() {
    let started = std::time::Instant::now();
    let ds = make_synthetic(&SyntheticConfig {
        n_subjects: 3,
        n_activities: 3,
        sensors: vec![2, 2],
        window_size: 64,
        windows_per_subject_per_activity: 6,
        subject_effect: 0.4,
        noise_std: 0.1,
        seed: 909,
    })
    .unwrap();
    let model_cfg = ModelConfig::default();
    let train_cfg = TrainConfig {
        batch_size: 24,
        epochs: 2,
        patience: 2,
        seed: 42,
        ..TrainConfig::default()
    };
    let opts = SweepOptions {
        workers: 2,
        out_dir: None,
    };
    let run = || {
        let report = run_loso(&ds, &model_cfg, &train_cfg, &opts).unwrap();
        assert!(report.failures.is_empty());
        (results_csv(&report.folds), aggregate_csv(&report.aggregate))
    };
    let (results1, agg1) = run();
    let (results2, agg2) = run();
    assert_eq!(results1, results2, "per-fold tables differ between runs");
    assert_eq!(agg1, agg2, "aggregate tables differ between runs");
    println!(
        "[PASS] criterion 9: two identical LOSO runs produce identical tables ({:.1?})",
        started.elapsed()
    );
}
