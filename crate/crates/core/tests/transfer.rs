use std::collections::BTreeSet;

use illu_core::dataset::ImageSet;
use illu_core::network::{build_network, Network, ScaleConfig};
use illu_core::rng;
use illu_core::tensor::{LrMap, Tensor, TrainConfig};
use illu_core::transfer::{apply_policy, finetune, train_from_scratch, AdaptivePolicy, StopReason, TransferError};
use rand::Rng as _;

const DEFAULT_TEXT: &str = "reset=1-10,17-19; lr.reset=1e-2; lr.keep=1e-4";

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class{i}")).collect()
}

fn small_scale() -> ScaleConfig {
    ScaleConfig { input_side: 8, input_channels: 3, blocks: vec![1, 1], base_width: 4, width_cap: 8, fc_dims: [8, 8] }
}

/// Random images whose class shifts the mean of one channel.
fn images(scale: &ScaleConfig, classes: usize, per_class: usize, seed: u64) -> ImageSet {
    let mut r = rng::stream(seed, &[42]);
    let s = scale.input_side;
    let mut set = ImageSet::default();
    for c in 0..classes {
        for i in 0..per_class {
            let img = Tensor::from_fn(&[scale.input_channels, s, s], |k| {
                let channel = k / (s * s);
                let shift = if channel == c % scale.input_channels { 0.6 } else { 0.0 };
                shift + r.random_range(-0.3f32..0.3)
            });
            set.ids.push(format!("c{c}_{i}"));
            set.images.push(img);
            set.labels.push(c);
        }
    }
    set
}

fn layer_bits(net: &Network, layer: usize) -> (Vec<u32>, Vec<u32>) {
    let p = &net.params[layer - 1];
    (
        p.weight.data().iter().map(|v| v.to_bits()).collect(),
        p.bias.data().iter().map(|v| v.to_bits()).collect(),
    )
}

#[test]
fn default_policy_text_parses_to_default() {
    assert_eq!(AdaptivePolicy::parse(DEFAULT_TEXT, 19).unwrap(), AdaptivePolicy::default());
    let p = AdaptivePolicy::default();
    assert_eq!(p.reset_layers, (1..=10).chain(17..=19).collect::<BTreeSet<_>>());
    for l in 1..=19 {
        let expect = if (11..=16).contains(&l) { 1e-4 } else { 1e-2 };
        assert_eq!(p.lr_map[&l], expect, "layer {l}");
    }
}

#[test]
fn policy_display_round_trips() {
    let mut p = AdaptivePolicy::parse("reset=2,4-6; lr.keep=0; lr.5=3e-3", 8).unwrap();
    assert_eq!(p.lr_map[&5], 3e-3);
    assert_eq!(p.lr_map[&1], 0.0);
    assert_eq!(AdaptivePolicy::parse(&p.to_string(), 8).unwrap(), p);
    p = AdaptivePolicy::default();
    assert_eq!(AdaptivePolicy::parse(&p.to_string(), 19).unwrap(), p);
}

#[test]
fn policy_rejects_bad_input() {
    for text in ["reset=0-3", "reset=1-20", "reset=5-2", "lr.keep=-1", "lr.keep=nan", "lr.20=1", "speed=3", "reset"] {
        assert!(matches!(AdaptivePolicy::parse(text, 19), Err(TransferError::Policy(_))), "{text}");
    }
    let mut p = AdaptivePolicy::default();
    p.lr_map.remove(&12);
    assert!(p.validate(19).is_err());
}

#[test]
fn default_policy_keeps_layers_11_to_16_bit_identical() {
    let net = build_network(&ScaleConfig::default(), &names(6), 3).unwrap();
    let adapted = apply_policy(&net, &AdaptivePolicy::default(), 99, None).unwrap();
    for layer in 1..=19 {
        let same = layer_bits(&net, layer) == layer_bits(&adapted.net, layer);
        let (_, bias) = layer_bits(&adapted.net, layer);
        if (11..=16).contains(&layer) {
            assert!(same, "layer {layer} should be kept");
        } else {
            // biases reinitialize to zero, so only the weights prove a reset
            assert!(bias.iter().all(|&b| b == 0));
            assert_ne!(layer_bits(&net, layer).0, layer_bits(&adapted.net, layer).0, "layer {layer} should be reset");
        }
    }
    assert_eq!(adapted.lr_map, AdaptivePolicy::default().lr_map);
    assert_eq!(adapted.net.mean_rgb, net.mean_rgb);
}

#[test]
fn reset_is_seeded() {
    let net = build_network(&ScaleConfig::default(), &names(6), 3).unwrap();
    let p = AdaptivePolicy::default();
    let a = apply_policy(&net, &p, 5, None).unwrap();
    let b = apply_policy(&net, &p, 5, None).unwrap();
    let c = apply_policy(&net, &p, 6, None).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.net.params[0], c.net.params[0]);
}

#[test]
fn new_class_list_rebuilds_last_layer() {
    let scale = small_scale();
    let net = build_network(&scale, &names(3), 1).unwrap();
    let layers = net.weighted_layers();
    let target = names(5);
    let reset_last = AdaptivePolicy::split_rates([layers].into(), layers, 1e-2, 1e-4);
    let adapted = apply_policy(&net, &reset_last, 2, Some(&target)).unwrap();
    assert_eq!(adapted.net.num_classes(), 5);
    assert_eq!(adapted.net.class_names, target);
    assert_eq!(adapted.net.params[layers - 1].bias.len(), 5);

    let keep_last = AdaptivePolicy::split_rates([1].into(), layers, 1e-2, 1e-4);
    assert!(matches!(apply_policy(&net, &keep_last, 2, Some(&target)), Err(TransferError::Policy(_))));
    // the same classes need no rebuild
    assert!(apply_policy(&net, &keep_last, 2, Some(&names(3))).is_ok());
}

/// Layers with a zero rate come out of a 10-epoch fine-tune bit-identical,
/// checked once for the odd and once for the even layers, so every layer
/// of the default network is frozen in one run and trained in the other.
#[test]
fn zero_learning_rate_freezes_layers_exactly() {
    let scale = ScaleConfig::default();
    let net = build_network(&scale, &names(3), 8).unwrap();
    let train = images(&scale, 3, 4, 1);
    let val = images(&scale, 3, 2, 2);
    let cfg = TrainConfig { max_epochs: 10, patience: 100, batch_size: 4, seed: 4, ..Default::default() };
    for frozen_parity in [1, 0] {
        let lr_map: LrMap = (1..=19).map(|l| (l, if l % 2 == frozen_parity { 0.0 } else { 1e-2 })).collect();
        let (tuned, report) = finetune(&net, &lr_map, &train, &val, &cfg).unwrap();
        assert_eq!(report.epochs_run, 10);
        for layer in 1..=19 {
            if layer % 2 == frozen_parity {
                assert_eq!(layer_bits(&net, layer), layer_bits(&tuned, layer), "layer {layer} moved");
            }
        }
        if report.best_epoch > 0 {
            let moved = (1..=19).filter(|l| l % 2 != frozen_parity).any(|l| layer_bits(&net, l) != layer_bits(&tuned, l));
            assert!(moved, "trained layers did not move");
        }
    }
}

#[test]
fn finetune_logs_epoch_zero_and_returns_best_epoch() {
    let scale = small_scale();
    let net = build_network(&scale, &names(3), 2).unwrap();
    let train = images(&scale, 3, 8, 3);
    let val = images(&scale, 3, 4, 4);
    let lr: LrMap = (1..=net.weighted_layers()).map(|l| (l, 5e-2)).collect();
    let cfg = TrainConfig { max_epochs: 12, patience: 3, batch_size: 4, dropout_p: 0.0, seed: 1, ..Default::default() };
    let (best, report) = finetune(&net, &lr, &train, &val, &cfg).unwrap();
    assert_eq!(report.rows[0].epoch, 0);
    assert_eq!(report.rows.len(), report.epochs_run + 1);
    let best_val = report.rows.iter().map(|r| r.val_top1).fold(f64::MIN, f64::max);
    assert_eq!(report.best_val_top1(), best_val);
    assert_eq!(report.rows[report.best_epoch].val_top1, best_val);
    assert_eq!(illu_core::transfer::top1_percent(&best, &val).unwrap(), best_val);
    if report.stop_reason == StopReason::Converged {
        assert_eq!(report.epochs_run - report.best_epoch, cfg.patience);
    } else {
        assert_eq!(report.epochs_run, cfg.max_epochs);
    }
    let tsv = report.to_tsv();
    assert!(tsv.lines().nth(1) == Some("epoch\ttrain_loss\tval_top1"));
    assert_eq!(tsv.lines().count(), report.rows.len() + 2);
}

#[test]
fn training_from_scratch_learns_a_separable_task_deterministically() {
    let scale = small_scale();
    let train = images(&scale, 3, 16, 5);
    let val = images(&scale, 3, 6, 6);
    let cfg = TrainConfig { max_epochs: 25, patience: 25, batch_size: 8, dropout_p: 0.0, base_lr: 5e-2, seed: 3, ..Default::default() };
    let (net, report) = train_from_scratch(&scale, &names(3), &[0.1, 0.2, 0.3], &train, &val, &cfg).unwrap();
    assert!(report.best_val_top1() >= 90.0, "{}", report.to_tsv());
    assert_eq!(net.mean_rgb, vec![0.1, 0.2, 0.3]);
    let (again, _) = train_from_scratch(&scale, &names(3), &[0.1, 0.2, 0.3], &train, &val, &cfg).unwrap();
    assert_eq!(net, again);
}

#[test]
fn finetune_rejects_bad_sets() {
    let scale = small_scale();
    let net = build_network(&scale, &names(2), 2).unwrap();
    let lr: LrMap = (1..=net.weighted_layers()).map(|l| (l, 1e-2)).collect();
    let cfg = TrainConfig::default();
    let good = images(&scale, 2, 2, 1);
    let empty = ImageSet::default();
    assert!(matches!(finetune(&net, &lr, &empty, &good, &cfg), Err(TransferError::EmptySplit("train"))));
    assert!(matches!(finetune(&net, &lr, &good, &empty, &cfg), Err(TransferError::EmptySplit("val"))));
    let three = images(&scale, 3, 2, 1);
    assert!(matches!(finetune(&net, &lr, &three, &good, &cfg), Err(TransferError::UnknownClass(_))));
    let mut short = lr.clone();
    short.remove(&1);
    assert!(finetune(&net, &short, &good, &good, &cfg).is_err());
}

#[test]
fn exploding_rate_is_a_numeric_error() {
    let scale = small_scale();
    let net = build_network(&scale, &names(2), 2).unwrap();
    let lr: LrMap = (1..=net.weighted_layers()).map(|l| (l, 1e30)).collect();
    let set = images(&scale, 2, 4, 1);
    let cfg = TrainConfig { max_epochs: 5, batch_size: 2, ..Default::default() };
    assert!(matches!(finetune(&net, &lr, &set, &set, &cfg), Err(TransferError::Numeric { .. })));
}
