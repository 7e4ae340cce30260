//! Top-k precision, per-class report tables, t-SNE embeddings of neural
//! codes and a neighbor-purity score for those embeddings.

mod tsne;

use std::fmt::{self, Write as _};
use std::path::Path;

use thiserror::Error;

pub use tsne::{joint_probabilities, neighbor_purity, tsne_embed, Embedding2D, TsneConfig};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction set is empty")]
    Empty,
    #[error("k = {k} outside 1..={classes}")]
    TopK { k: usize, classes: usize },
    #[error("row {row}: ranking is not a permutation of the {classes} classes")]
    NotPermutation { row: usize, classes: usize },
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("perplexity {perplexity} infeasible for {n} points (need n >= 3 * perplexity)")]
    Perplexity { perplexity: f64, n: usize },
    #[error("{n} points is too many for exact t-SNE (max {max})")]
    TooManyPoints { n: usize, max: usize },
    #[error("need more than k = {k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("format: {0}")]
    Format(String),
    #[error("t-SNE coordinates became non-finite at iteration {0}")]
    Diverged(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.display().to_string(), source }
}

/// An exact hit count. Percentages are derived only for display.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Precision {
    pub hits: usize,
    pub total: usize,
}

impl Precision {
    pub fn percent(&self) -> f64 {
        100.0 * self.hits as f64 / self.total as f64
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.percent())
    }
}

/// Full class rankings for a set of test images.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub class_names: Vec<String>,
    pub ids: Vec<String>,
    /// Class indices, best first; each row is a permutation.
    pub rankings: Vec<Vec<usize>>,
    pub truth: Vec<usize>,
}

impl PredictionSet {
    pub fn new(class_names: Vec<String>) -> Self {
        Self { class_names, ids: Vec::new(), rankings: Vec::new(), truth: Vec::new() }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn push(&mut self, id: impl Into<String>, ranking: Vec<usize>, truth: usize) -> Result<()> {
        let classes = self.num_classes();
        let mut seen = vec![false; classes];
        let ok = ranking.len() == classes
            && ranking.iter().all(|&c| c < classes && !std::mem::replace(&mut seen[c], true));
        if !ok {
            return Err(EvalError::NotPermutation { row: self.len(), classes });
        }
        if truth >= classes {
            return Err(EvalError::UnknownClass(truth.to_string()));
        }
        self.ids.push(id.into());
        self.rankings.push(ranking);
        self.truth.push(truth);
        Ok(())
    }

    /// 1-based rank position of the true class of image `i`.
    pub fn true_rank(&self, i: usize) -> usize {
        1 + self.rankings[i].iter().position(|&c| c == self.truth[i]).expect("ranking is a permutation")
    }

    /// `# classes=a,b,c` then `id\ttrue\tranking` with comma-joined names.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# classes={}\nid\ttrue\tranking\n", self.class_names.join(","));
        for i in 0..self.len() {
            let ranking: Vec<&str> = self.rankings[i].iter().map(|&c| self.class_names[c].as_str()).collect();
            let _ = writeln!(out, "{}\t{}\t{}", self.ids[i], self.class_names[self.truth[i]], ranking.join(","));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let classes = lines
            .next()
            .and_then(|l| l.strip_prefix("# classes="))
            .ok_or_else(|| EvalError::Format("missing `# classes=` line".into()))?;
        let names: Vec<String> = classes.split(',').map(str::to_string).collect();
        if lines.next() != Some("id\ttrue\tranking") {
            return Err(EvalError::Format("missing `id\\ttrue\\tranking` header".into()));
        }
        let index = |name: &str| names.iter().position(|n| n == name).ok_or_else(|| EvalError::UnknownClass(name.into()));
        let mut set = PredictionSet::new(names.clone());
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, truth, ranking] = cols[..] else {
                return Err(EvalError::Format(format!("row {}: expected 3 columns", n + 1)));
            };
            let ranking = ranking.split(',').map(index).collect::<Result<Vec<_>>>()?;
            set.push(id, ranking, index(truth)?)?;
        }
        Ok(set)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// Images whose true class is among the first `k` ranked classes.
pub fn topk_precision(preds: &PredictionSet, k: usize) -> Result<Precision> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    if k == 0 || k > preds.num_classes() {
        return Err(EvalError::TopK { k, classes: preds.num_classes() });
    }
    let hits = (0..preds.len()).filter(|&i| preds.true_rank(i) <= k).count();
    Ok(Precision { hits, total: preds.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRow {
    pub class: String,
    pub top1: Precision,
    pub top5: Precision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Only classes with at least one test image.
    pub rows: Vec<ClassRow>,
    pub global_top1: Precision,
    pub global_top5: Precision,
    pub class_names: Vec<String>,
    /// `confusion[t][p]`: images of true class `t` ranked `p` first.
    pub confusion: Vec<Vec<usize>>,
}

/// The second column uses `k = min(5, classes)`.
pub fn per_class_report(preds: &PredictionSet) -> Result<MetricsReport> {
    let classes = preds.num_classes();
    let k5 = classes.min(5);
    let global_top1 = topk_precision(preds, 1)?;
    let global_top5 = topk_precision(preds, k5)?;
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut counts = vec![(0usize, 0usize, 0usize); classes];
    for i in 0..preds.len() {
        let t = preds.truth[i];
        confusion[t][preds.rankings[i][0]] += 1;
        let rank = preds.true_rank(i);
        let c = &mut counts[t];
        c.0 += 1;
        c.1 += usize::from(rank == 1);
        c.2 += usize::from(rank <= k5);
    }
    let rows = counts
        .iter()
        .enumerate()
        .filter(|(_, c)| c.0 > 0)
        .map(|(k, &(n, h1, h5))| ClassRow {
            class: preds.class_names[k].clone(),
            top1: Precision { hits: h1, total: n },
            top5: Precision { hits: h5, total: n },
        })
        .collect();
    Ok(MetricsReport { rows, global_top1, global_top5, class_names: preds.class_names.clone(), confusion })
}

impl MetricsReport {
    pub fn table(&self) -> ReportTable {
        let mut rows: Vec<(String, f64, f64)> =
            self.rows.iter().map(|r| (r.class.clone(), r.top1.percent(), r.top5.percent())).collect();
        rows.push(("global".into(), self.global_top1.percent(), self.global_top5.percent()));
        ReportTable { rows }
    }

    pub fn to_tsv(&self) -> String {
        self.table().to_tsv()
    }

    pub fn confusion_tsv(&self) -> String {
        let mut out = String::from("true\\pred");
        for name in &self.class_names {
            out.push('\t');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            out.push_str(name);
            for v in row {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Rows of `name, top1 %, top5 %` as written to a report file.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<(String, f64, f64)>,
}

impl ReportTable {
    pub fn to_tsv(&self) -> String {
        self.to_tsv_with_header("class")
    }

    /// Same layout with a different name for the first column.
    pub fn to_tsv_with_header(&self, first: &str) -> String {
        let mut out = format!("{first}\ttop1\ttop5\n");
        for (name, t1, t5) in &self.rows {
            let _ = writeln!(out, "{name}\t{t1:.2}\t{t5:.2}");
        }
        out
    }

    /// Values are read back at the written two-decimal precision.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || EvalError::Format(format!("report row {}: {line:?}", n + 1));
            let [name, t1, t5] = cols[..] else { return Err(bad()) };
            rows.push((name.to_string(), t1.parse().map_err(|_| bad())?, t5.parse().map_err(|_| bad())?));
        }
        if header.split('\t').count() != 3 {
            return Err(EvalError::Format(format!("bad report header {header:?}")));
        }
        Ok(Self { rows })
    }

    pub fn row(&self, name: &str) -> Option<(f64, f64)> {
        self.rows.iter().find(|r| r.0 == name).map(|r| (r.1, r.2))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }
}
