use super::*;
use crate::rng;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("c{i}")).collect()
}

/// `per_class` points around each center with the given spread.
fn blobs(centers: &[[f32; 2]], per_class: usize, spread: f32, seed: u64) -> (Vec<Vec<f32>>, Vec<usize>) {
    let mut r = rng::stream(seed, &[0]);
    let mut x = Vec::new();
    let mut labels = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let dx: f32 = StandardNormal.sample(&mut r);
            let dy: f32 = StandardNormal.sample(&mut r);
            x.push(vec![c[0] + spread * dx, c[1] + spread * dy]);
            labels.push(k);
        }
    }
    (x, labels)
}

fn signs(labels: &[usize]) -> Vec<f64> {
    labels.iter().map(|&l| if l == 0 { -1.0 } else { 1.0 }).collect()
}

#[test]
fn rbf_of_identical_points_is_one() {
    let x = [0.3f32, -2.0, 7.5];
    assert_eq!(kernel_eval(&KernelSpec::rbf(0.37), &x, &x).unwrap(), 1.0);
}

#[test]
fn rbf_at_small_gamma_and_distance_hundred() {
    let x = vec![0.0f32; 4];
    let y = vec![50.0f32; 4];
    let k = kernel_eval(&KernelSpec::rbf(1e-4), &x, &y).unwrap();
    assert!((k - (-1.0f64).exp()).abs() < 1e-12);
    assert!((k - 0.367879).abs() < 1e-6);
}

#[test]
fn sigmoid_of_orthogonal_vectors_is_zero() {
    let k = kernel_eval(&KernelSpec::sigmoid(1.0, 0.0), &[1.0, 0.0], &[0.0, 3.0]).unwrap();
    assert_eq!(k, 0.0);
}

#[test]
fn kernel_rejects_mismatched_dimensions() {
    assert!(matches!(
        kernel_eval(&KernelSpec::linear(), &[1.0, 2.0], &[1.0]),
        Err(SvmError::Dimension { expected: 2, found: 1 })
    ));
}

#[test]
fn gamma_and_c_are_validated() {
    assert!(KernelSpec::rbf(0.0).validate().is_err());
    assert!(KernelSpec::sigmoid(-1.0, 0.0).validate().is_err());
    assert!(KernelSpec::linear().validate().is_ok());
    let x = vec![vec![0.0], vec![1.0]];
    assert!(train_binary(&x, &[-1.0, 1.0], KernelSpec::linear(), 0.0, &SolverOptions::default()).is_err());
    assert!(train_binary(&x, &[-1.0, 2.0], KernelSpec::linear(), 1.0, &SolverOptions::default()).is_err());
}

#[test]
fn two_point_linear_problem_has_analytic_solution() {
    // max α1 + α2 − ½(α1 + α2)² with α1 = α2 gives α = ½, w = 1, b = 0
    let x = vec![vec![-1.0f32], vec![1.0]];
    let fit = train_binary(&x, &[-1.0, 1.0], KernelSpec::linear(), 1.0, &SolverOptions::default()).unwrap();
    assert!(fit.alpha.iter().all(|&a| (a - 0.5).abs() < 1e-9), "{:?}", fit.alpha);
    assert_eq!(fit.svm.support.len(), 2);
    assert!(fit.svm.bias.abs() < 1e-9);
    assert!(fit.svm.decision_value(&[0.0]).unwrap().abs() < 1e-9);
    assert!((fit.svm.decision_value(&[1.0]).unwrap() - 1.0).abs() < 1e-9);
    assert!((fit.dual_objective - 0.5).abs() < 1e-9);
}

#[test]
fn single_class_input_is_rejected() {
    let x = vec![vec![0.0f32], vec![1.0]];
    assert!(matches!(
        train_binary(&x, &[1.0, 1.0], KernelSpec::linear(), 1.0, &SolverOptions::default()),
        Err(SvmError::SingleClass)
    ));
}

#[test]
fn separable_blobs_are_fit_exactly_with_large_c() {
    let (x, labels) = blobs(&[[-3.0, -3.0], [3.0, 3.0]], 30, 0.8, 4);
    let y = signs(&labels);
    for kernel in [KernelSpec::linear(), KernelSpec::rbf(0.5)] {
        let fit = train_binary(&x, &y, kernel, 1000.0, &SolverOptions::default()).unwrap();
        for (row, &t) in x.iter().zip(&y) {
            assert!(fit.svm.decision_value(row).unwrap() * t > 0.0);
        }
    }
}

#[test]
fn trained_machines_are_dual_feasible() {
    let (x, labels) = blobs(&[[0.0, 0.0], [1.0, 0.5]], 25, 1.0, 9);
    let y = signs(&labels);
    for c in [0.1, 1.0, 10.0] {
        let fit = train_binary(&x, &y, KernelSpec::rbf(0.3), c, &SolverOptions::default()).unwrap();
        assert!(fit.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
        let balance: f64 = fit.alpha.iter().zip(&y).map(|(a, t)| a * t).sum();
        assert!(balance.abs() <= 1e-6);
        let expected: Vec<usize> = (0..x.len()).filter(|&i| fit.alpha[i] > ALPHA_TOL).collect();
        assert_eq!(fit.svm.support.len(), expected.len());
        for (sv, &i) in fit.svm.support.iter().zip(&expected) {
            assert_eq!(sv, &x[i]);
        }
    }
}

#[test]
fn free_support_vectors_lie_on_the_margin() {
    let (x, labels) = blobs(&[[0.0, 0.0], [2.0, 0.0]], 20, 0.7, 3);
    let y = signs(&labels);
    let c = 5.0;
    let fit = train_binary(&x, &y, KernelSpec::rbf(0.5), c, &SolverOptions::default()).unwrap();
    let mut free = 0;
    for (i, row) in x.iter().enumerate() {
        if fit.alpha[i] > 1e-6 && fit.alpha[i] < c - 1e-6 {
            free += 1;
            let f = fit.svm.decision_value(row).unwrap();
            assert!((f.abs() - 1.0).abs() <= 1e-3, "f = {f}");
        }
    }
    assert!(free > 0);
}

#[test]
fn far_points_decay_to_the_bias() {
    let (x, labels) = blobs(&[[0.0, 0.0], [2.0, 2.0]], 10, 0.5, 5);
    let fit = train_binary(&x, &signs(&labels), KernelSpec::rbf(1.0), 1.0, &SolverOptions::default()).unwrap();
    let f = fit.svm.decision_value(&[100.0, -100.0]).unwrap();
    assert!((f - fit.svm.bias).abs() < 1e-6);
}

#[test]
fn decision_value_of_hand_built_machine() {
    let svm = BinarySvm {
        kernel: KernelSpec::rbf(0.5),
        c: 1.0,
        dim: 2,
        support: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
        coef: vec![0.75, -0.25],
        bias: 0.1,
    };
    // x = (1, 0): distances² 1 and 1, so f = 0.75 e^-0.5 − 0.25 e^-0.5 + 0.1
    let expected = 0.5 * (-0.5f64).exp() + 0.1;
    assert!((svm.decision_value(&[1.0, 0.0]).unwrap() - expected).abs() < 1e-12);
    assert!(svm.decision_value(&[1.0]).is_err());
}

#[test]
fn two_class_ovr_agrees_with_binary_machine() {
    let (x, labels) = blobs(&[[0.0, 0.0], [1.5, 1.0]], 20, 1.0, 12);
    let (test, _) = blobs(&[[0.0, 0.0], [1.5, 1.0]], 10, 1.5, 13);
    let kernel = KernelSpec::rbf(0.4);
    let opts = SolverOptions::default();
    let model = train_ovr(&x, &labels, &names(2), kernel, 1.0, false, &opts).unwrap();
    let binary = train_binary(&x, &signs(&labels), kernel, 1.0, &opts).unwrap();
    for p in &test {
        let top = model.ranking(p).unwrap()[0];
        let f = binary.svm.decision_value(p).unwrap();
        assert_eq!(top, usize::from(f > 0.0), "f = {f}");
    }
}

#[test]
fn three_separated_blobs_are_classified_perfectly() {
    let centers = [[-4.0, 0.0], [4.0, 0.0], [0.0, 5.0]];
    let (x, labels) = blobs(&centers, 20, 0.7, 21);
    let (test, truth) = blobs(&centers, 15, 0.7, 22);
    let model = train_ovr(&x, &labels, &names(3), KernelSpec::rbf(0.2), 1.0, false, &SolverOptions::default()).unwrap();
    assert_eq!(model.machines.len(), 3);
    for (p, &t) in test.iter().zip(&truth) {
        assert_eq!(model.predict_topk(p, 1).unwrap()[0].0, format!("c{t}"));
    }
}

#[test]
fn full_k_is_a_permutation_and_k_is_bounded() {
    let (x, labels) = blobs(&[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]], 8, 0.5, 2);
    let model = train_ovr(&x, &labels, &names(4), KernelSpec::linear(), 1.0, false, &SolverOptions::default()).unwrap();
    let mut all: Vec<String> = model.predict_topk(&[1.0, 1.0], 4).unwrap().into_iter().map(|p| p.0).collect();
    all.sort();
    assert_eq!(all, names(4));
    assert!(matches!(model.predict_topk(&[1.0, 1.0], 0), Err(SvmError::TopK { .. })));
    assert!(matches!(model.predict_topk(&[1.0, 1.0], 5), Err(SvmError::TopK { .. })));
    assert!(model.predict_topk(&[1.0], 1).is_err());
}

#[test]
fn empty_class_is_rejected() {
    let (x, labels) = blobs(&[[0.0, 0.0], [3.0, 0.0]], 5, 0.5, 2);
    let err = train_ovr(&x, &labels, &names(3), KernelSpec::linear(), 1.0, false, &SolverOptions::default()).unwrap_err();
    assert!(matches!(err, SvmError::EmptyClass(ref c) if c == "c2"));
}

#[test]
fn standardizer_maps_to_zero_mean_unit_variance() {
    let x = vec![vec![1.0f32, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]];
    let s = Standardizer::fit(&x);
    let z: Vec<Vec<f32>> = x.iter().map(|r| s.apply(r)).collect();
    let mean: f32 = z.iter().map(|r| r[0]).sum::<f32>() / 3.0;
    let var: f32 = z.iter().map(|r| r[0] * r[0]).sum::<f32>() / 3.0;
    assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-5);
    // constant column is only centered
    assert!(z.iter().all(|r| r[1] == 0.0));
}

#[test]
fn model_file_round_trips_byte_identically() {
    let (x, labels) = blobs(&[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]], 10, 0.8, 31);
    for (kernel, standardize) in [(KernelSpec::rbf(0.1), false), (KernelSpec::sigmoid(0.01, 0.5), true)] {
        let model = train_ovr(&x, &labels, &names(3), kernel, 10.0, standardize, &SolverOptions::default()).unwrap();
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..4], SVM_MAGIC);
        let back = SvmModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_bytes(), bytes);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.svm");
        save_model(&model, &path).unwrap();
        assert_eq!(load_model(&path).unwrap().to_bytes(), bytes);
    }
}

#[test]
fn corrupt_model_files_are_rejected() {
    let (x, labels) = blobs(&[[0.0, 0.0], [3.0, 0.0]], 6, 0.8, 1);
    let bytes = train_ovr(&x, &labels, &names(2), KernelSpec::linear(), 1.0, false, &SolverOptions::default())
        .unwrap()
        .to_bytes();
    assert!(matches!(SvmModel::from_bytes(&bytes[..bytes.len() - 1]), Err(SvmError::Format(_))));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(SvmModel::from_bytes(&extra), Err(SvmError::Format(_))));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(SvmModel::from_bytes(&magic), Err(SvmError::Format(_))));
    let mut version = bytes;
    version[4] = 9;
    assert!(matches!(SvmModel::from_bytes(&version), Err(SvmError::Version(9))));
}

#[test]
fn default_grid_contains_the_reference_settings() {
    let grid = default_grid();
    let has = |kernel, c: f64, gamma: f64| grid.iter().any(|g| g.kernel == kernel && g.c == c && g.gamma == gamma);
    assert!(has(KernelKind::Rbf, 1.0, 1e-4));
    assert!(has(KernelKind::Sigmoid, 10.0, 1e-4));
    assert_eq!(grid.len(), 40);
    assert!(grid.iter().all(|g| g.kernel != KernelKind::Linear));
}

#[test]
fn grid_files_parse_and_reject_garbage() {
    let cells = parse_grid("# kernel C gamma\nrbf 1 0.0001\n\nsigmoid 10 1e-4  # tail\n").unwrap();
    assert_eq!(cells.len(), 2);
    assert_eq!(cells[1], GridCell { kernel: KernelKind::Sigmoid, c: 10.0, gamma: 1e-4 });
    assert!(parse_grid("").is_err());
    assert!(parse_grid("rbf 1").is_err());
    assert!(parse_grid("poly 1 1").is_err());
    assert!(parse_grid("rbf -1 1").is_err());
    assert!(parse_grid("rbf 1 0").is_err());
}

#[test]
fn tie_order_prefers_small_c_then_small_gamma_then_rbf() {
    let cell = |kernel, c, gamma| GridCell { kernel, c, gamma };
    let mut cells = vec![
        cell(KernelKind::Linear, 0.1, 0.01),
        cell(KernelKind::Rbf, 1.0, 1e-4),
        cell(KernelKind::Sigmoid, 0.1, 0.01),
        cell(KernelKind::Rbf, 0.1, 0.1),
        cell(KernelKind::Rbf, 0.1, 0.01),
    ];
    cells.sort_by(|a, b| a.tie_order(b));
    assert_eq!(
        cells,
        vec![
            cell(KernelKind::Rbf, 0.1, 0.01),
            cell(KernelKind::Sigmoid, 0.1, 0.01),
            cell(KernelKind::Linear, 0.1, 0.01),
            cell(KernelKind::Rbf, 0.1, 0.1),
            cell(KernelKind::Rbf, 1.0, 1e-4),
        ]
    );
}

#[test]
fn equally_scored_cells_resolve_by_tie_rule() {
    let (x, labels) = blobs(&[[-5.0, 0.0], [5.0, 0.0]], 9, 0.3, 8);
    let grid = parse_grid("rbf 10 0.1\nrbf 1 0.5\nrbf 1 0.1\nlinear 10 0").unwrap();
    let result = grid_search(&x, &labels, &names(2), &grid, &GridOptions::default()).unwrap();
    assert!(result.scores.iter().all(|(_, s)| *s == 1.0));
    assert_eq!(result.best, grid[2]);
}

#[test]
fn single_cell_grid_picks_that_cell() {
    let (x, labels) = blobs(&[[0.0, 0.0], [1.0, 1.0]], 6, 0.8, 8);
    let grid = parse_grid("sigmoid 10 0.0001").unwrap();
    let result = grid_search(&x, &labels, &names(2), &grid, &GridOptions::default()).unwrap();
    assert_eq!(result.best, grid[0]);
    assert_eq!(result.folds, 3);
    assert_eq!(result.scores.len(), 1);
}

#[test]
fn best_cell_has_the_maximal_score() {
    let (x, labels) = blobs(&[[0.0, 0.0], [1.5, 0.0], [0.0, 1.5]], 12, 0.8, 17);
    let result = grid_search(&x, &labels, &names(3), &default_grid(), &GridOptions::default()).unwrap();
    let max = result.scores.iter().map(|(_, s)| *s).fold(f64::MIN, f64::max);
    assert_eq!(result.best_score, max);
    for (cell, s) in &result.scores {
        if *s == max {
            assert_ne!(cell.tie_order(&result.best), std::cmp::Ordering::Less);
        }
    }
    assert!(result.to_tsv().starts_with("kernel\tC\tgamma\tmean_accuracy\n"));
}

#[test]
fn duplicated_dataset_selects_the_same_cell() {
    const SEP: f32 = 6.0;
    const SPREAD: f32 = 0.5;
    let (x, labels) = blobs(&[[0.0, 0.0], [SEP, 0.0], [0.0, SEP]], 10, SPREAD, 40);
    let opts = GridOptions { seed: 5, ..Default::default() };
    let once = grid_search(&x, &labels, &names(3), &default_grid(), &opts).unwrap();
    let x2: Vec<Vec<f32>> = x.iter().chain(&x).cloned().collect();
    let l2: Vec<usize> = labels.iter().chain(&labels).copied().collect();
    let twice = grid_search(&x2, &l2, &names(3), &default_grid(), &opts).unwrap();
    assert!(once.scores.iter().any(|(_, s)| *s < 1.0));
    assert_eq!(once.best, twice.best);
}

#[test]
fn grid_search_is_seed_deterministic() {
    let (x, labels) = blobs(&[[0.0, 0.0], [1.0, 0.0]], 9, 1.0, 41);
    let grid = parse_grid("rbf 1 0.1\nrbf 10 1\nlinear 1 0").unwrap();
    let opts = GridOptions { seed: 3, ..Default::default() };
    let a = grid_search(&x, &labels, &names(2), &grid, &opts).unwrap();
    let b = grid_search(&x, &labels, &names(2), &grid, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn class_smaller_than_folds_is_an_error() {
    let x: Vec<Vec<f32>> = (0..7).map(|i| vec![i as f32]).collect();
    let labels = vec![0, 0, 0, 0, 0, 1, 1];
    let err = grid_search(&x, &labels, &names(2), &default_grid(), &GridOptions::default()).unwrap_err();
    assert!(matches!(err, SvmError::ClassSmallerThanFolds { count: 2, folds: 3, .. }));
}

#[test]
fn stratified_folds_balance_each_class() {
    let labels: Vec<usize> = (0..47).map(|i| i % 4).collect();
    let folds = stratified_folds(&labels, 3, 9);
    assert_eq!(folds, stratified_folds(&labels, 3, 9));
    for k in 0..4 {
        let mut counts = [0usize; 3];
        for (i, &l) in labels.iter().enumerate() {
            if l == k {
                counts[folds[i]] += 1;
            }
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "{counts:?}");
    }
}

proptest! {
    #[test]
    fn kernels_are_symmetric(
        x in prop::collection::vec(-3.0f32..3.0, 5),
        y in prop::collection::vec(-3.0f32..3.0, 5),
        gamma in 1e-3f64..2.0,
    ) {
        for spec in [KernelSpec::rbf(gamma), KernelSpec::sigmoid(gamma, 0.3), KernelSpec::linear()] {
            prop_assert_eq!(kernel_eval(&spec, &x, &y).unwrap(), kernel_eval(&spec, &y, &x).unwrap());
        }
    }

    #[test]
    fn rbf_is_at_most_one_and_one_only_on_the_diagonal(
        x in prop::collection::vec(-3.0f32..3.0, 4),
        offset in prop::collection::vec(0.01f32..1.0, 4),
        gamma in 0.01f64..1.0,
    ) {
        let spec = KernelSpec::rbf(gamma);
        let y: Vec<f32> = x.iter().zip(&offset).map(|(a, b)| a + b).collect();
        let k = kernel_eval(&spec, &x, &y).unwrap();
        prop_assert!(k > 0.0 && k < 1.0);
        prop_assert_eq!(kernel_eval(&spec, &x, &x).unwrap(), 1.0);
    }

    #[test]
    fn topk_is_a_prefix_of_the_ranking(p in prop::collection::vec(-4.0f32..4.0, 2), k in 1usize..=4) {
        let (x, labels) = blobs(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]], 5, 0.6, 77);
        let model = train_ovr(&x, &labels, &names(4), KernelSpec::rbf(0.3), 1.0, false, &SolverOptions::default()).unwrap();
        let ranking = model.ranking(&p).unwrap();
        let top: Vec<String> = model.predict_topk(&p, k).unwrap().into_iter().map(|(n, _)| n).collect();
        let expected: Vec<String> = ranking[..k].iter().map(|&i| model.class_names[i].clone()).collect();
        prop_assert_eq!(top, expected);
    }
}
