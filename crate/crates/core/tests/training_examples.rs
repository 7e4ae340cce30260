//! Seeded end-to-end training runs on generated data.

use illu_core::dataset::{generate_synthetic, DatasetManifest, Domain, Fractions, ImageSet, Split, SyntheticConfig};
use illu_core::network::{build_network, ScaleConfig};
use illu_core::tensor::{LrMap, TrainConfig};
use illu_core::transfer::{apply_policy, finetune, load_split, train_from_scratch, AdaptivePolicy, StopReason};

fn generate(dir: &std::path::Path, classes: usize, per_class: usize, domain: Domain, seed: u64) -> DatasetManifest {
    let cfg = SyntheticConfig {
        num_classes: classes,
        per_class,
        side: 64,
        domain,
        label_noise: 0.0,
        fractions: Fractions::default(),
        seed,
    };
    generate_synthetic(&cfg, &dir.join(domain.as_str())).unwrap()
}

fn splits(m: &DatasetManifest, mean: &[f32]) -> (ImageSet, ImageSet) {
    (m.load(Some(Split::Train), mean).unwrap(), m.load(Some(Split::Val), mean).unwrap())
}

#[test]
fn four_class_natural_task_reaches_80_percent() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate(dir.path(), 4, 150, Domain::Natural, 42);
    let mean = m.mean_rgb(Split::Train).unwrap();
    let (train, val) = splits(&m, &mean);
    let cfg = TrainConfig { seed: 42, dropout_p: 0.25, ..Default::default() };
    let (_, report) = train_from_scratch(&ScaleConfig::default(), &m.class_names, &mean, &train, &val, &cfg).unwrap();
    assert!(report.epochs_run <= 40);
    assert!(report.best_val_top1() >= 80.0, "{}", report.to_tsv());
}

#[test]
fn zero_epochs_returns_the_initial_network() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate(dir.path(), 2, 5, Domain::Natural, 1);
    let mean = m.mean_rgb(Split::Train).unwrap();
    let (train, val) = splits(&m, &mean);
    let cfg = TrainConfig { max_epochs: 0, seed: 9, ..Default::default() };
    let (net, report) = train_from_scratch(&ScaleConfig::default(), &m.class_names, &mean, &train, &val, &cfg).unwrap();
    let mut fresh = build_network(&ScaleConfig::default(), &m.class_names, 9).unwrap();
    fresh.mean_rgb = mean;
    assert_eq!(net, fresh);
    assert_eq!(report.stop_reason, StopReason::MaxEpochs);
    assert_eq!(report.epochs_run, 0);
}

#[test]
fn all_zero_rates_leave_the_network_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate(dir.path(), 2, 5, Domain::Illustration, 2);
    let net = build_network(&ScaleConfig::default(), &m.class_names, 3).unwrap();
    let (train, val) = splits(&m, &net.mean_rgb);
    let zeros: LrMap = (1..=19).map(|l| (l, 0.0)).collect();
    let cfg = TrainConfig { max_epochs: 3, ..Default::default() };
    let (out, report) = finetune(&net, &zeros, &train, &val, &cfg).unwrap();
    assert_eq!(out, net);
    assert_eq!(report.rows.len(), 4);
}

#[test]
fn single_class_data_saturates_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate(dir.path(), 2, 60, Domain::Natural, 3);
    let mean = m.mean_rgb(Split::Train).unwrap();
    let (mut train, mut val) = splits(&m, &mean);
    for set in [&mut train, &mut val] {
        set.labels.iter_mut().for_each(|l| *l = 0);
    }
    let cfg = TrainConfig { max_epochs: 5, patience: 10, batch_size: 8, seed: 5, ..Default::default() };
    let net = build_network(&ScaleConfig::default(), &m.class_names, 5).unwrap();
    let lr: LrMap = (1..=19).map(|l| (l, cfg.base_lr)).collect();
    let (_, report) = finetune(&net, &lr, &train, &val, &cfg).unwrap();
    let last = report.rows.last().unwrap().train_loss;
    assert!(last < 0.01, "{}", report.to_tsv());
}

#[test]
fn default_policy_improves_on_the_transfer_task() {
    let dir = tempfile::tempdir().unwrap();
    let natural = generate(dir.path(), 6, 30, Domain::Natural, 42);
    let illustration = generate(dir.path(), 6, 30, Domain::Illustration, 42);
    let mean = natural.mean_rgb(Split::Train).unwrap();
    let (train, val) = splits(&natural, &mean);
    let cfg = TrainConfig { max_epochs: 10, seed: 42, ..Default::default() };
    let (baseline, _) = train_from_scratch(&ScaleConfig::default(), &natural.class_names, &mean, &train, &val, &cfg).unwrap();

    let adapted = apply_policy(&baseline, &AdaptivePolicy::default(), 42, None).unwrap();
    let ill_train = load_split(&adapted.net, &illustration, Split::Train).unwrap();
    let ill_val = load_split(&adapted.net, &illustration, Split::Val).unwrap();
    let (_, report) = finetune(&adapted.net, &adapted.lr_map, &ill_train, &ill_val, &cfg).unwrap();
    assert!(report.best_val_top1() > report.rows[0].val_top1, "{}", report.to_tsv());
}
