use std::cmp::Ordering;
use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{check_c, check_labels, check_rows, gram_matrix, ovr_with_gram, KernelKind, KernelSpec, Result, SolverOptions, Standardizer, SvmError};
use crate::network::rank_desc;
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub kernel: KernelKind,
    pub c: f64,
    /// Unused (conventionally 0) for the linear kernel.
    pub gamma: f64,
}

impl GridCell {
    pub fn spec(&self, coef0: f64) -> KernelSpec {
        KernelSpec { kind: self.kernel, gamma: self.gamma, coef0 }
    }

    /// Preference order among equally scored cells: smaller C, then
    /// smaller gamma, then rbf < sigmoid < linear.
    pub(crate) fn tie_order(&self, other: &Self) -> Ordering {
        self.c
            .total_cmp(&other.c)
            .then(self.gamma.total_cmp(&other.gamma))
            .then(self.kernel.cmp(&other.kernel))
    }
}

impl fmt::Display for GridCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.kernel, self.c, self.gamma)
    }
}

/// rbf and sigmoid over C ∈ {0.1, 1, 10, 100} × γ ∈ {1e-4 … 1}. Linear
/// cells can be added through a grid file.
pub fn default_grid() -> Vec<GridCell> {
    let cs = [0.1, 1.0, 10.0, 100.0];
    let gammas = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];
    let mut grid = Vec::new();
    for kernel in [KernelKind::Rbf, KernelKind::Sigmoid] {
        for &c in &cs {
            for &gamma in &gammas {
                grid.push(GridCell { kernel, c, gamma });
            }
        }
    }
    grid
}

/// One cell per line, `kernel C gamma`; blank lines and `#` comments are
/// skipped.
pub fn parse_grid(text: &str) -> Result<Vec<GridCell>> {
    let mut cells = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| SvmError::Param(format!("grid line {}: {m}", n + 1));
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [kernel, c, gamma] = cols[..] else {
            return Err(bad("expected `kernel C gamma`"));
        };
        let cell = GridCell {
            kernel: kernel.parse()?,
            c: c.parse().map_err(|_| bad("bad C"))?,
            gamma: gamma.parse().map_err(|_| bad("bad gamma"))?,
        };
        check_c(cell.c)?;
        cell.spec(0.0).validate()?;
        cells.push(cell);
    }
    if cells.is_empty() {
        return Err(SvmError::Param("empty grid".into()));
    }
    Ok(cells)
}

/// Fold index of every sample: within each class, indices in ascending
/// order are shuffled by `(seed, class)` and dealt round-robin.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut out = vec![0; labels.len()];
    for k in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
        idx.shuffle(&mut rng::stream(seed, &[tag::FOLDS, k as u64]));
        for (pos, i) in idx.into_iter().enumerate() {
            out[i] = pos % folds;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    /// Mean held-out top-1 accuracy (fraction) per cell, in grid order.
    pub scores: Vec<(GridCell, f64)>,
    pub best: GridCell,
    pub best_score: f64,
    pub folds: usize,
}

impl GridSearchResult {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("kernel\tC\tgamma\tmean_accuracy\n");
        for (cell, s) in &self.scores {
            out.push_str(&format!("{}\t{}\t{}\t{:.6}\n", cell.kernel, cell.c, cell.gamma, s));
        }
        out.push_str(&format!("# best\t{}\t{}\t{}\t{:.6}\n", self.best.kernel, self.best.c, self.best.gamma, self.best_score));
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GridOptions {
    pub folds: usize,
    pub seed: u64,
    pub coef0: f64,
    pub standardize: bool,
    pub solver: SolverOptions,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            folds: 3,
            seed: 0,
            coef0: 0.0,
            standardize: false,
            solver: SolverOptions::default(),
        }
    }
}

/// Scores every cell by stratified k-fold cross-validation of a
/// one-vs-rest model, and picks the best under the tie rule.
pub fn grid_search(
    x: &[Vec<f32>],
    labels: &[usize],
    class_names: &[String],
    grid: &[GridCell],
    opts: &GridOptions,
) -> Result<GridSearchResult> {
    check_rows(x)?;
    check_labels(labels, class_names, x.len())?;
    if grid.is_empty() {
        return Err(SvmError::Param("empty grid".into()));
    }
    if opts.folds < 2 {
        return Err(SvmError::Param(format!("need at least 2 folds, got {}", opts.folds)));
    }
    for (k, name) in class_names.iter().enumerate() {
        let count = labels.iter().filter(|&&l| l == k).count();
        if count < opts.folds {
            return Err(SvmError::ClassSmallerThanFolds { class: name.clone(), count, folds: opts.folds });
        }
    }
    for cell in grid {
        check_c(cell.c)?;
        cell.spec(opts.coef0).validate()?;
    }

    let fold_of = stratified_folds(labels, opts.folds, opts.seed);
    // cells sharing a kernel function share each fold's Gram matrix
    let mut groups: Vec<(KernelSpec, Vec<usize>)> = Vec::new();
    for (i, cell) in grid.iter().enumerate() {
        let spec = cell.spec(opts.coef0);
        match groups.iter_mut().find(|(s, _)| *s == spec) {
            Some((_, members)) => members.push(i),
            None => groups.push((spec, vec![i])),
        }
    }
    let jobs: Vec<(usize, usize)> = (0..groups.len()).flat_map(|g| (0..opts.folds).map(move |f| (g, f))).collect();
    let results: Vec<Vec<(usize, f64)>> = jobs
        .par_iter()
        .map(|&(g, fold)| {
            let (spec, members) = &groups[g];
            let train: Vec<usize> = (0..x.len()).filter(|&i| fold_of[i] != fold).collect();
            let test: Vec<usize> = (0..x.len()).filter(|&i| fold_of[i] == fold).collect();
            let mut xt: Vec<Vec<f32>> = train.iter().map(|&i| x[i].clone()).collect();
            let mut xv: Vec<Vec<f32>> = test.iter().map(|&i| x[i].clone()).collect();
            if opts.standardize {
                let s = Standardizer::fit(&xt);
                xt = xt.iter().map(|r| s.apply(r)).collect();
                xv = xv.iter().map(|r| s.apply(r)).collect();
            }
            let yt: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let gram = gram_matrix(spec, &xt);
            members
                .iter()
                .map(|&cell| {
                    let machines = ovr_with_gram(&xt, &yt, class_names.len(), &gram, *spec, grid[cell].c, &opts.solver)?;
                    let hits = xv
                        .iter()
                        .zip(&test)
                        .filter(|(row, &i)| {
                            let values: Vec<f64> = machines.iter().map(|m| m.decision_unchecked(row)).collect();
                            rank_desc(&values)[0] == labels[i]
                        })
                        .count();
                    Ok((cell, hits as f64 / test.len() as f64))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![0.0; grid.len()];
    for per_fold in &results {
        for &(cell, acc) in per_fold {
            sums[cell] += acc;
        }
    }
    let scores: Vec<(GridCell, f64)> = grid.iter().zip(sums).map(|(&c, s)| (c, s / opts.folds as f64)).collect();
    let (best, best_score) = scores
        .iter()
        .copied()
        .reduce(|a, b| match b.1.total_cmp(&a.1).then(a.0.tie_order(&b.0)) {
            Ordering::Greater => b,
            _ => a,
        })
        .expect("non-empty grid");
    Ok(GridSearchResult { scores, best, best_score, folds: opts.folds })
}
