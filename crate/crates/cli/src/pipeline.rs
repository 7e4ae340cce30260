//! The four-model comparison, end to end, with every intermediate artifact
//! written under one directory.

use std::fs;
use std::path::{Path, PathBuf};

use illu_core::dataset::{generate_synthetic, DatasetManifest, Domain, Fractions, ImageSet, Split, SyntheticConfig};
use illu_core::eval::{neighbor_purity, per_class_report, tsne_embed, MetricsReport, PredictionSet, ReportTable, TsneConfig};
use illu_core::network::{codes_for_images, rank_desc, save_checkpoint, Network, NeuralCodes, ScaleConfig};
use illu_core::rng::{self, derive_seed};
use illu_core::svm::{grid_search, save_model, train_ovr, GridCell, GridOptions, SolverOptions, SvmModel};
use illu_core::tensor::TrainConfig;
use illu_core::transfer::{apply_policy, finetune, load_split, top1_percent, train_from_scratch, AdaptivePolicy};
use rand::seq::SliceRandom;

use crate::{write_text, CliError, Result};

/// Sub-seed labels, so stages draw from unrelated streams.
mod stage {
    pub const TRAIN: u64 = 1;
    pub const FINETUNE: u64 = 2;
    pub const RESET: u64 = 3;
    pub const GRID: u64 = 4;
    pub const TSNE: u64 = 5;
    pub const CONTROL: u64 = 6;
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seed: u64,
    pub classes: usize,
    pub per_class: usize,
    pub scale: ScaleConfig,
    pub fractions: Fractions,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
    pub policy: Option<AdaptivePolicy>,
    pub grid: Vec<GridCell>,
    pub folds: usize,
    pub standardize: bool,
    pub tsne: TsneConfig,
    pub purity_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            classes: 6,
            per_class: 200,
            scale: ScaleConfig::default(),
            fractions: Fractions::default(),
            train: TrainConfig::default(),
            finetune: TrainConfig::default(),
            policy: None,
            grid: illu_core::svm::default_grid(),
            folds: 3,
            standardize: false,
            tsne: TsneConfig::default(),
            purity_k: 10,
        }
    }
}

/// Global top-1/top-5 of one pipeline variant on the illustration test split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub top1: f64,
    pub top5: f64,
}

impl From<&MetricsReport> for Scores {
    fn from(r: &MetricsReport) -> Self {
        Self { top1: r.global_top1.percent(), top5: r.global_top5.percent() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub baseline: Scores,
    pub baseline_svm: Scores,
    pub optimized: Scores,
    pub optimized_svm: Scores,
    /// Top-1 on the natural test split.
    pub baseline_natural_top1: f64,
    pub optimized_natural_top1: f64,
    pub baseline_purity: f64,
    pub optimized_purity: f64,
    pub control_purity: f64,
    pub optimized_kl_300: f64,
    pub optimized_kl_final: f64,
    pub baseline_svm_cell: GridCell,
    pub optimized_svm_cell: GridCell,
}

impl PipelineSummary {
    pub fn comparison(&self) -> ReportTable {
        let row = |name: &str, s: Scores| (name.to_string(), s.top1, s.top5);
        ReportTable {
            rows: vec![
                row("Baseline", self.baseline),
                row("Baseline+SVM", self.baseline_svm),
                row("Optimized", self.optimized),
                row("Optimized+SVM", self.optimized_svm),
            ],
        }
    }

    pub fn to_tsv(&self) -> String {
        let rows: [(&str, String); 13] = [
            ("baseline_top1", format!("{:.2}", self.baseline.top1)),
            ("baseline_svm_top1", format!("{:.2}", self.baseline_svm.top1)),
            ("optimized_top1", format!("{:.2}", self.optimized.top1)),
            ("optimized_svm_top1", format!("{:.2}", self.optimized_svm.top1)),
            ("baseline_natural_top1", format!("{:.2}", self.baseline_natural_top1)),
            ("optimized_natural_top1", format!("{:.2}", self.optimized_natural_top1)),
            ("baseline_purity", format!("{:.4}", self.baseline_purity)),
            ("optimized_purity", format!("{:.4}", self.optimized_purity)),
            ("control_purity", format!("{:.4}", self.control_purity)),
            ("optimized_kl_300", format!("{:.6}", self.optimized_kl_300)),
            ("optimized_kl_final", format!("{:.6}", self.optimized_kl_final)),
            ("baseline_svm_cell", self.baseline_svm_cell.to_string()),
            ("optimized_svm_cell", self.optimized_svm_cell.to_string()),
        ];
        let mut out = String::from("metric\tvalue\n");
        for (k, v) in rows {
            out.push_str(&format!("{k}\t{v}\n"));
        }
        out
    }
}

pub fn softmax_predictions(net: &Network, set: &ImageSet) -> Result<PredictionSet> {
    let mut preds = PredictionSet::new(net.class_names.clone());
    for ((id, img), &label) in set.ids.iter().zip(&set.images).zip(&set.labels) {
        let probs = net.probabilities(img)?;
        preds.push(id.clone(), rank_desc(&probs), label)?;
    }
    Ok(preds)
}

pub fn svm_predictions(model: &SvmModel, codes: &NeuralCodes, labels: &[usize]) -> Result<PredictionSet> {
    let mut preds = PredictionSet::new(model.class_names.clone());
    for (i, &label) in labels.iter().enumerate() {
        preds.push(codes.ids[i].clone(), model.ranking(codes.row(i))?, label)?;
    }
    Ok(preds)
}

fn rows(codes: &NeuralCodes) -> Vec<Vec<f32>> {
    (0..codes.rows()).map(|i| codes.row(i).to_vec()).collect()
}

fn concat(a: ImageSet, b: ImageSet) -> ImageSet {
    ImageSet {
        ids: a.ids.into_iter().chain(b.ids).collect(),
        images: a.images.into_iter().chain(b.images).collect(),
        labels: a.labels.into_iter().chain(b.labels).collect(),
    }
}

struct SvmStage {
    scores: Scores,
    cell: GridCell,
    test_codes: NeuralCodes,
}

/// Codes, grid search, final fit and test predictions for one network.
fn svm_stage(cfg: &PipelineConfig, out: &Path, name: &str, net: &Network, fit: &ImageSet, test: &ImageSet) -> Result<SvmStage> {
    let fit_codes = codes_for_images(net, &fit.ids, &fit.images)?;
    let test_codes = codes_for_images(net, &test.ids, &test.images)?;
    fit_codes.write(&out.join(format!("{name}_codes_trainval.tsv")))?;
    test_codes.write(&out.join(format!("{name}_codes_test.tsv")))?;

    let x = rows(&fit_codes);
    let opts = GridOptions {
        folds: cfg.folds,
        seed: derive_seed(cfg.seed, &[stage::GRID]),
        standardize: cfg.standardize,
        ..Default::default()
    };
    let search = grid_search(&x, &fit.labels, &net.class_names, &cfg.grid, &opts)?;
    write_text(&out.join(format!("{name}_grid.tsv")), &search.to_tsv())?;
    let best = search.best;
    let model = train_ovr(&x, &fit.labels, &net.class_names, best.spec(opts.coef0), best.c, cfg.standardize, &SolverOptions::default())?;
    save_model(&model, &out.join(format!("{name}.svm")))?;

    let preds = svm_predictions(&model, &test_codes, &test.labels)?;
    let report = write_predictions(out, &format!("{name}_svm"), &preds)?;
    Ok(SvmStage { scores: Scores::from(&report), cell: best, test_codes })
}

fn write_predictions(out: &Path, name: &str, preds: &PredictionSet) -> Result<MetricsReport> {
    preds.write(&out.join(format!("{name}_predictions.tsv")))?;
    let report = per_class_report(preds)?;
    write_text(&out.join(format!("{name}_report.tsv")), &report.to_tsv())?;
    write_text(&out.join(format!("{name}_confusion.tsv")), &report.confusion_tsv())?;
    Ok(report)
}

fn embed(cfg: &PipelineConfig, out: &Path, name: &str, codes: &NeuralCodes, labels: &[usize], classes: &[String]) -> Result<(Vec<[f64; 2]>, Vec<f64>, f64)> {
    let tsne_cfg = TsneConfig { seed: derive_seed(cfg.seed, &[stage::TSNE]), ..cfg.tsne };
    let e = tsne_embed(&rows(codes), &tsne_cfg)?;
    let names: Vec<String> = labels.iter().map(|&l| classes[l].clone()).collect();
    write_text(&out.join(format!("{name}_embedding.tsv")), &e.to_tsv(&codes.ids, &names)?)?;
    let trace: String = std::iter::once("iteration\tkl\n".to_string())
        .chain(e.kl_trace.iter().enumerate().map(|(t, kl)| format!("{t}\t{kl:.6}\n")))
        .collect();
    write_text(&out.join(format!("{name}_kl.tsv")), &trace)?;
    let purity = neighbor_purity(&e.coords, labels, cfg.purity_k)?;
    Ok((e.coords, e.kl_trace, purity))
}

fn generate(cfg: &PipelineConfig, out: &Path, domain: Domain) -> Result<DatasetManifest> {
    let dir = out.join(domain.as_str());
    let syn = SyntheticConfig {
        num_classes: cfg.classes,
        per_class: cfg.per_class,
        side: cfg.scale.input_side,
        domain,
        label_noise: 0.0,
        fractions: cfg.fractions,
        seed: cfg.seed,
    };
    Ok(generate_synthetic(&syn, &dir)?)
}

/// Runs every stage for `cfg.seed` and writes artifacts under `out`.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<PipelineSummary> {
    fs::create_dir_all(out).map_err(|e| CliError::Io(out.to_path_buf(), e))?;
    let natural = generate(cfg, out, Domain::Natural)?;
    let illustration = generate(cfg, out, Domain::Illustration)?;

    // baseline: natural domain only
    let mean = natural.mean_rgb(Split::Train)?;
    let train_cfg = TrainConfig { seed: derive_seed(cfg.seed, &[stage::TRAIN]), ..cfg.train.clone() };
    let nat_train = natural.load(Some(Split::Train), &mean)?;
    let nat_val = natural.load(Some(Split::Val), &mean)?;
    let (baseline, log) = train_from_scratch(&cfg.scale, &natural.class_names, &mean, &nat_train, &nat_val, &train_cfg)?;
    drop((nat_train, nat_val));
    save_checkpoint(&baseline, &out.join("baseline.ckpt"))?;
    log.write(&out.join("baseline_train.tsv"))?;

    let ill_train = load_split(&baseline, &illustration, Split::Train)?;
    let ill_val = load_split(&baseline, &illustration, Split::Val)?;
    let ill_test = load_split(&baseline, &illustration, Split::Test)?;
    let nat_test = load_split(&baseline, &natural, Split::Test)?;

    let baseline_report = write_predictions(out, "baseline", &softmax_predictions(&baseline, &ill_test)?)?;

    // adaptive fine-tuning on illustrations
    let policy = cfg.policy.clone().unwrap_or_default();
    let adapted = apply_policy(&baseline, &policy, derive_seed(cfg.seed, &[stage::RESET]), None)?;
    let ft_cfg = TrainConfig { seed: derive_seed(cfg.seed, &[stage::FINETUNE]), ..cfg.finetune.clone() };
    let (optimized, ft_log) = finetune(&adapted.net, &adapted.lr_map, &ill_train, &ill_val, &ft_cfg)?;
    save_checkpoint(&optimized, &out.join("optimized.ckpt"))?;
    ft_log.write(&out.join("finetune.tsv"))?;
    let optimized_report = write_predictions(out, "optimized", &softmax_predictions(&optimized, &ill_test)?)?;

    let fit = concat(ill_train, ill_val);
    let base_svm = svm_stage(cfg, out, "baseline", &baseline, &fit, &ill_test)?;
    let opt_svm = svm_stage(cfg, out, "optimized", &optimized, &fit, &ill_test)?;

    let classes = &baseline.class_names;
    let (_, _, baseline_purity) = embed(cfg, out, "baseline", &base_svm.test_codes, &ill_test.labels, classes)?;
    let (coords, kl, optimized_purity) = embed(cfg, out, "optimized", &opt_svm.test_codes, &ill_test.labels, classes)?;
    let mut shuffled = ill_test.labels.clone();
    shuffled.shuffle(&mut rng::stream(cfg.seed, &[stage::CONTROL]));
    let control_purity = neighbor_purity(&coords, &shuffled, cfg.purity_k)?;

    let summary = PipelineSummary {
        baseline: Scores::from(&baseline_report),
        baseline_svm: base_svm.scores,
        optimized: Scores::from(&optimized_report),
        optimized_svm: opt_svm.scores,
        baseline_natural_top1: top1_percent(&baseline, &nat_test)?,
        optimized_natural_top1: top1_percent(&optimized, &nat_test)?,
        baseline_purity,
        optimized_purity,
        control_purity,
        optimized_kl_300: kl.get(300).copied().unwrap_or(f64::NAN),
        optimized_kl_final: *kl.last().expect("non-empty trace"),
        baseline_svm_cell: base_svm.cell,
        optimized_svm_cell: opt_svm.cell,
    };
    write_text(&out.join("comparison.tsv"), &summary.comparison().to_tsv_with_header("model"))?;
    write_text(&out.join("summary.tsv"), &summary.to_tsv())?;
    Ok(summary)
}

/// Every file under `dir`, relative, sorted.
pub fn artifact_paths(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).expect("under dir").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}
