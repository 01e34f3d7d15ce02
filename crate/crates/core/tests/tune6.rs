use tasked_core::data::{make_synthetic, SyntheticConfig, splits::split_for, FoldSpec};
use tasked_core::eval::{subject_probe_accuracy, ConfusionMatrix};
use tasked_core::losses::LossHyper;
use tasked_core::model::{embed_mean_vectors, predict_activities, ModelConfig};
use tasked_core::training::{train, TrainConfig, TrainData};

fn run(se: f64, epochs: usize, seed: u64, lr_e: f64, noise: f64, wpsa: usize) {
    let ds = make_synthetic(&SyntheticConfig {
        n_subjects: 4, n_activities: 4, sensors: vec![3, 3], window_size: 64,
        windows_per_subject_per_activity: wpsa, subject_effect: se, noise_std: noise, seed: 606,
    }).unwrap();
    let fold = FoldSpec { test_subject: 3, variant: 0 };
    let split = split_for(&ds, fold).unwrap();
    let mut train_ds = ds.select(&split.train);
    let mut subs: Vec<usize> = train_ds.subject_labels.clone();
    subs.sort_unstable(); subs.dedup();
    let map: std::collections::BTreeMap<usize, usize> = subs.iter().enumerate().map(|(l, &o)| (o, l)).collect();
    for s in train_ds.subject_labels.iter_mut() { *s = map[s]; }
    let val_ds = ds.select(&split.val);
    let test_ds = ds.select(&split.test);
    let cfg = TrainConfig { batch_size: 48, epochs, patience: epochs, seed, lr_extractor: lr_e, ..TrainConfig::default() };
    let data = TrainData { train: &train_ds, val: &val_ds, target: None };
    let mut last: Vec<String> = vec![];
    let mut cb = |r: &tasked_core::training::EpochRecord| {
        if r.epoch % 10 == 0 || r.epoch == epochs-1 {
            last.push(format!("    {:?} ep{} act {:.3} dom {:.3} mmd {:.4} ext {:.3} val {:.3}",
                r.phase, r.epoch, r.losses.activity, r.losses.domain, r.losses.mmd, r.losses.extractor_objective, r.val_macro_f1));
        }
    };
    let o = train(&data, &ModelConfig::default(), &cfg, train_ds.n_subjects() + 1, Some(&mut cb)).unwrap();
    for l in &last { eprintln!("{l}"); }
    let f1 = |p: &tasked_core::model::ModelParams| {
        let preds = predict_activities(p, &test_ds.windows, 128).unwrap();
        ConfusionMatrix::from_pairs(ds.n_activities, test_ds.activity_labels.iter().copied().zip(preds)).unwrap().metrics().unwrap().f_m
    };
    let fe1 = embed_mean_vectors(&o.teacher, &train_ds.windows, 128).unwrap();
    let fe2 = embed_mean_vectors(&o.params, &train_ds.windows, 128).unwrap();
    let p1 = subject_probe_accuracy(&fe1, &train_ds.subject_labels, train_ds.n_subjects(), 0).unwrap();
    let p2 = subject_probe_accuracy(&fe2, &train_ds.subject_labels, train_ds.n_subjects(), 0).unwrap();
    // ablation
    let abl_cfg = TrainConfig { hyper: LossHyper { lambda_mmd: 0.0, lambda_d: 0.0, alpha: 0.0, ..LossHyper::default() }, ..cfg.clone() };
    let oa = train(&data, &ModelConfig::default(), &abl_cfg, train_ds.n_subjects() + 1, None).unwrap();
    eprintln!("se={se} ep={epochs} seed={seed} lr_e={lr_e}: probe1 {p1:.3} probe2 {p2:.3} drop {:.1}pts | tasked f1 {:.3} abl f1 {:.3}",
        100.0*(p1-p2), f1(&o.params), f1(&oa.params));
}

#[test]
fn tune() {
    let t0 = std::time::Instant::now();
    run(0.8, 60, 13, 1e-4, 0.15, 12);
    eprintln!("[{:.0?}]", t0.elapsed());
}
