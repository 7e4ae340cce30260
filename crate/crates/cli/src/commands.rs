use std::collections::HashMap;
use std::path::{Path, PathBuf};

use illu_core::dataset::{
    default_stopwords, generate_synthetic, map_to_classes, read_stopwords, split_manifest, DatasetManifest, Domain,
    Fractions, ImageSet, Record, Split, SyntheticConfig,
};
use illu_core::eval::{neighbor_purity, per_class_report, topk_precision, tsne_embed, PredictionSet, ReportTable, TsneConfig};
use illu_core::network::{codes_for_images, load_checkpoint, save_checkpoint, NeuralCodes};
use illu_core::svm::{
    default_grid, grid_search, load_model, parse_grid, save_model, train_ovr, GridCell, GridOptions, KernelKind,
    KernelSpec, SolverOptions,
};
use illu_core::transfer::{apply_policy, finetune, load_split, train_from_scratch, AdaptivePolicy};

use crate::pipeline::{run_pipeline, softmax_predictions, svm_predictions, PipelineConfig};
use crate::{
    write_text, Cli, CliError, CodesArgs, Command, DomainChoice, EmbedArgs, EvalArgs, FinetuneArgs, GenArgs, MapArgs,
    PipelineArgs, PredictArgs, ReportArgs, Result, SplitArgs, SvmArgs, TrainArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Map(a) => map(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Finetune(a) => finetune_cmd(a),
        Command::Codes(a) => codes(a),
        Command::Svm(a) => svm(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Embed(a) => embed(a),
        Command::Report(a) => report(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

/// Refuses an output path that would overwrite one of the inputs.
fn distinct_output(out: &Path, inputs: &[&Path]) -> Result<()> {
    let canon = |p: &Path| std::fs::canonicalize(p).ok();
    if let Some(o) = canon(out) {
        if inputs.iter().any(|i| canon(i).as_ref() == Some(&o)) {
            return Err(CliError::Usage(format!("{} is also an input; choose another output", out.display())));
        }
    }
    Ok(())
}

fn parse_fractions(text: &str) -> Result<Fractions> {
    Ok(text.parse::<Fractions>()?)
}

fn parse_splits(text: &str) -> Result<Vec<Split>> {
    if text == "all" {
        return Ok(vec![Split::Train, Split::Val, Split::Test]);
    }
    text.split(',').map(|s| s.trim().parse::<Split>().map_err(CliError::Usage)).collect()
}

fn lines(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

fn class_lookup<'a>(manifest: &'a DatasetManifest) -> HashMap<&'a str, &'a str> {
    manifest.records.iter().map(|r| (r.id.as_str(), r.class_name.as_str())).collect()
}

/// Class index (into `classes`) of every code row, looked up by id.
fn code_labels(codes: &NeuralCodes, manifest: &DatasetManifest, classes: &[String]) -> Result<Vec<usize>> {
    let by_id = class_lookup(manifest);
    codes
        .ids
        .iter()
        .map(|id| {
            let class = by_id.get(id.as_str()).ok_or_else(|| CliError::Data(format!("code row {id:?} is not in the manifest")))?;
            classes
                .iter()
                .position(|c| c == class)
                .ok_or_else(|| CliError::Data(format!("class {class:?} of {id:?} is unknown to the model")))
        })
        .collect()
}

fn code_rows(codes: &NeuralCodes) -> Vec<Vec<f32>> {
    (0..codes.rows()).map(|i| codes.row(i).to_vec()).collect()
}

fn gen(a: GenArgs) -> Result<()> {
    let domains: &[Domain] = match a.domain {
        DomainChoice::Natural => &[Domain::Natural],
        DomainChoice::Illustration => &[Domain::Illustration],
        DomainChoice::Both => &[Domain::Natural, Domain::Illustration],
    };
    let fractions = parse_fractions(&a.fractions)?;
    for &domain in domains {
        let cfg = SyntheticConfig {
            num_classes: a.classes,
            per_class: a.per_class,
            side: a.side,
            domain,
            label_noise: a.label_noise,
            fractions,
            seed: a.seed,
        };
        cfg.validate()?;
        let dir = if domains.len() == 1 { a.out.clone() } else { a.out.join(domain.as_str()) };
        let m = generate_synthetic(&cfg, &dir)?;
        println!("{}\t{} images\t{}", domain.as_str(), m.records.len(), dir.join("manifest.tsv").display());
    }
    Ok(())
}

fn map(a: MapArgs) -> Result<()> {
    let images = lines(&read_text(&a.images)?);
    let classes = lines(&read_text(&a.classes)?);
    let stop = match &a.stopwords {
        Some(p) => read_stopwords(p)?,
        None => default_stopwords(),
    };
    let mapping = map_to_classes(&images, &classes, &stop);
    write_text(&a.out, &mapping.to_tsv())?;
    let multi = mapping.multi_matched();
    let unmatched = mapping.unmatched();
    println!("matched\t{}", mapping.images.len() - multi.len() - unmatched.len());
    println!("multi\t{}", multi.len());
    println!("unmatched\t{}", unmatched.len());
    for name in multi {
        println!("multi\t{name}\t{}", mapping.classes_of(name).unwrap_or_default().join(","));
    }
    for name in unmatched {
        println!("unmatched\t{name}");
    }
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    distinct_output(&a.out, &[&a.manifest])?;
    let input = DatasetManifest::read(&a.manifest)?;
    let out_root = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let same_root = std::fs::canonicalize(&input.root).ok() == std::fs::canonicalize(if out_root.as_os_str().is_empty() { Path::new(".") } else { &out_root }).ok();
    let records: Vec<Record> = input
        .records
        .iter()
        .map(|r| {
            let path = if same_root || r.path.is_absolute() {
                r.path.clone()
            } else {
                std::path::absolute(input.root.join(&r.path)).map_err(|e| CliError::Io(r.path.clone(), e))?
            };
            Ok(Record { path, split: None, ..r.clone() })
        })
        .collect::<Result<_>>()?;
    let manifest = split_manifest(&records, &input.class_names, parse_fractions(&a.fractions)?, a.seed, out_root)?;
    manifest.write(&a.out)?;
    for s in [Split::Train, Split::Val, Split::Test] {
        println!("{s}\t{}", manifest.in_split(s).count());
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let scale = a.scale.to_scale()?;
    let cfg = a.optim.to_config(a.seed)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let mean = manifest.mean_rgb(Split::Train)?;
    let train_set = manifest.load(Some(Split::Train), &mean)?;
    let val_set = manifest.load(Some(Split::Val), &mean)?;
    let (net, log) = train_from_scratch(&scale, &manifest.class_names, &mean, &train_set, &val_set, &cfg)?;
    save_checkpoint(&net, &a.out)?;
    if let Some(p) = &a.log {
        log.write(p)?;
    }
    println!("best epoch {} of {}, val top-1 {:.2}", log.best_epoch, log.epochs_run, log.best_val_top1());
    Ok(())
}

fn finetune_cmd(a: FinetuneArgs) -> Result<()> {
    distinct_output(&a.out, &[&a.checkpoint, &a.manifest])?;
    let cfg = a.optim.to_config(a.seed)?;
    let source = load_checkpoint(&a.checkpoint)?;
    let policy = AdaptivePolicy::parse(&a.policy, source.weighted_layers())?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let adapted = apply_policy(&source, &policy, a.seed, Some(&manifest.class_names))?;
    let train_set = load_split(&adapted.net, &manifest, Split::Train)?;
    let val_set = load_split(&adapted.net, &manifest, Split::Val)?;
    let (net, log) = finetune(&adapted.net, &adapted.lr_map, &train_set, &val_set, &cfg)?;
    save_checkpoint(&net, &a.out)?;
    if let Some(p) = &a.log {
        log.write(p)?;
    }
    println!("policy {policy}");
    println!("best epoch {} of {}, val top-1 {:.2}", log.best_epoch, log.epochs_run, log.best_val_top1());
    Ok(())
}

fn load_splits(manifest: &DatasetManifest, splits: &[Split], mean: &[f32]) -> Result<ImageSet> {
    let mut all = ImageSet::default();
    for &s in splits {
        let set = manifest.load(Some(s), mean)?;
        all.ids.extend(set.ids);
        all.images.extend(set.images);
        all.labels.extend(set.labels);
    }
    Ok(all)
}

fn codes(a: CodesArgs) -> Result<()> {
    let net = load_checkpoint(&a.checkpoint)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let set = load_splits(&manifest, &parse_splits(&a.split)?, &net.mean_rgb)?;
    let codes = codes_for_images(&net, &set.ids, &set.images)?;
    codes.write(&a.out)?;
    println!("{} codes of dimension {}", codes.rows(), codes.dim());
    Ok(())
}

fn svm(a: SvmArgs) -> Result<()> {
    let codes = NeuralCodes::read(&a.codes)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let classes = manifest.class_names.clone();
    let labels = code_labels(&codes, &manifest, &classes)?;
    let x = code_rows(&codes);
    let solver = SolverOptions { tol: a.tol, ..Default::default() };
    let (spec, c) = match &a.grid {
        Some(grid) => {
            let seed = a.seed.ok_or_else(|| CliError::Usage("--grid needs --seed for the fold assignment".into()))?;
            let cells: Vec<GridCell> = if grid == "default" { default_grid() } else { parse_grid(&read_text(Path::new(grid))?)? };
            let opts = GridOptions { folds: a.folds, seed, coef0: a.coef0, standardize: a.standardize, solver };
            let search = grid_search(&x, &labels, &classes, &cells, &opts)?;
            if let Some(p) = &a.grid_out {
                write_text(p, &search.to_tsv())?;
            }
            println!("best {} mean accuracy {:.4}", search.best, search.best_score);
            (search.best.spec(a.coef0), search.best.c)
        }
        None => {
            let kind: KernelKind = a.kernel.parse()?;
            (KernelSpec { kind, gamma: a.gamma, coef0: a.coef0 }, a.c)
        }
    };
    let model = train_ovr(&x, &labels, &classes, spec, c, a.standardize, &solver)?;
    save_model(&model, &a.out)?;
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let manifest = DatasetManifest::read(&a.manifest)?;
    let split: Split = a.split.parse().map_err(CliError::Usage)?;
    let preds = match (&a.svm, &a.checkpoint, &a.codes) {
        (None, Some(ckpt), None) => {
            let net = load_checkpoint(ckpt)?;
            softmax_predictions(&net, &load_split(&net, &manifest, split)?)?
        }
        (Some(svm), Some(ckpt), None) => {
            let model = load_model(svm)?;
            let net = load_checkpoint(ckpt)?;
            let set = manifest.load(Some(split), &net.mean_rgb)?;
            let codes = codes_for_images(&net, &set.ids, &set.images)?;
            let labels = code_labels(&codes, &manifest, &model.class_names)?;
            svm_predictions(&model, &codes, &labels)?
        }
        (Some(svm), None, Some(codes_path)) => {
            let model = load_model(svm)?;
            let all = NeuralCodes::read(codes_path)?;
            let wanted: std::collections::HashSet<&str> = manifest.in_split(split).map(|r| r.id.as_str()).collect();
            let keep: Vec<usize> = (0..all.rows()).filter(|&i| wanted.contains(all.ids[i].as_str())).collect();
            if keep.is_empty() {
                return Err(CliError::Data(format!("no code rows belong to the {split} split")));
            }
            let dim = all.dim();
            let data: Vec<f32> = keep.iter().flat_map(|&i| all.row(i).to_vec()).collect();
            let codes = NeuralCodes {
                matrix: illu_core::tensor::Tensor::new(vec![keep.len(), dim], data).map_err(|e| CliError::Data(e.to_string()))?,
                ids: keep.iter().map(|&i| all.ids[i].clone()).collect(),
            };
            let labels = code_labels(&codes, &manifest, &model.class_names)?;
            svm_predictions(&model, &codes, &labels)?
        }
        _ => {
            return Err(CliError::Usage(
                "give --checkpoint alone, --svm with --checkpoint, or --svm with --codes".into(),
            ))
        }
    };
    preds.write(&a.out)?;
    println!("{} predictions", preds.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let preds = PredictionSet::read(&a.predictions)?;
    let p = topk_precision(&preds, a.k)?;
    println!("top-{}\t{p}\t{}/{}", a.k, p.hits, p.total);
    if a.report.is_some() || a.confusion.is_some() {
        let report = per_class_report(&preds)?;
        if let Some(path) = &a.report {
            write_text(path, &report.to_tsv())?;
        }
        if let Some(path) = &a.confusion {
            write_text(path, &report.confusion_tsv())?;
        }
    }
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let codes = NeuralCodes::read(&a.codes)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let labels = code_labels(&codes, &manifest, &manifest.class_names)?;
    let cfg = TsneConfig { perplexity: a.perplexity, iterations: a.iterations, seed: a.seed, ..Default::default() };
    let e = tsne_embed(&code_rows(&codes), &cfg)?;
    let names: Vec<String> = labels.iter().map(|&l| manifest.class_names[l].clone()).collect();
    write_text(&a.out, &e.to_tsv(&codes.ids, &names)?)?;
    if let Some(p) = &a.kl_out {
        let mut text = String::from("iteration\tkl\n");
        for (t, kl) in e.kl_trace.iter().enumerate() {
            text.push_str(&format!("{t}\t{kl:.6}\n"));
        }
        write_text(p, &text)?;
    }
    println!("final KL {:.6}", e.kl_trace.last().copied().unwrap_or(f64::NAN));
    println!("purity@{}\t{:.4}", a.k, neighbor_purity(&e.coords, &labels, a.k)?);
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let inputs = [
        ("Baseline", &a.baseline),
        ("Baseline+SVM", &a.baseline_svm),
        ("Optimized", &a.optimized),
        ("Optimized+SVM", &a.optimized_svm),
    ];
    let mut rows = Vec::new();
    for (name, path) in inputs {
        let table = ReportTable::read(path)?;
        let (t1, t5) = table
            .row("global")
            .ok_or_else(|| CliError::Data(format!("{}: no `global` row", path.display())))?;
        rows.push((name.to_string(), t1, t5));
    }
    let table = ReportTable { rows };
    let text = table.to_tsv_with_header("model");
    write_text(&a.out, &text)?;
    print!("{text}");
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let scale = a.scale.to_scale()?;
    let train = a.optim.to_config(a.seed)?;
    let policy = AdaptivePolicy::parse(&a.policy, scale.weighted_layers())?;
    let grid = if a.grid == "default" { default_grid() } else { parse_grid(&read_text(&PathBuf::from(&a.grid))?)? };
    let cfg = PipelineConfig {
        seed: a.seed,
        classes: a.classes,
        per_class: a.per_class,
        scale,
        fractions: parse_fractions(&a.fractions)?,
        finetune: train.clone(),
        train,
        policy: Some(policy),
        grid,
        folds: a.folds,
        standardize: a.standardize,
        tsne: TsneConfig { perplexity: a.perplexity, iterations: a.tsne_iterations, ..Default::default() },
        purity_k: a.purity_k,
    };
    let summary = run_pipeline(&cfg, &a.out)?;
    print!("{}", summary.comparison().to_tsv_with_header("model"));
    Ok(())
}
