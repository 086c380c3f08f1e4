use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use absa_core::dataio::{dataset_stats, few_shot_sample, write_jsonl, DatasetSplit, FewShotSpec};
use absa_core::evaluation::{MetricsReport, SentenceTuples};
use absa_core::prompting::TemplateCatalog;
use absa_core::training::checkpoint::{load_model, load_trainer_state, PARAMS_FILE};
use absa_core::training::{predict_all, Prediction, TrainConfig, Trainer};
use absa_core::{AnnotatedSentence, SubtaskKind};
use anyhow::{bail, Context as _, Result};
use serde::Serialize;

use crate::data::{self, Splits};
use crate::manifest::{DatasetEntry, RunManifest};
use crate::{EvaluateArgs, FewshotArgs, ImportArgs, PredictArgs, StatsArgs, SweepArgs, TrainOptions};

pub struct Context {
    pub data_root: Option<PathBuf>,
    pub argv: Vec<String>,
}

impl Context {
    fn resolve(&self, path: &Path) -> PathBuf {
        data::resolve(path, self.data_root.as_deref())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `out.jsonl` -> `out.manifest.json`
fn sidecar_manifest(output: &Path) -> PathBuf {
    output.with_extension("manifest.json")
}

pub fn import(ctx: &Context, args: &ImportArgs) -> Result<()> {
    let src = ctx.resolve(&args.dataset);
    if src == args.output {
        bail!(absa_core::Error::Argument("refusing to overwrite the source file".into()));
    }
    let manifest = RunManifest::start(
        sidecar_manifest(&args.output),
        "import",
        &ctx.argv,
        serde_json::json!({ "format": args.format }),
        Vec::new(),
        None,
        None,
    )?;
    let split = data::load_file(&src, args.format.as_deref())?;
    write_jsonl(&args.output, &split.sentences)?;
    let stats = dataset_stats(&split.sentences);
    if split.empty_source {
        eprintln!("warning: {} contains no sentences; wrote an empty file", src.display());
    }
    println!(
        "imported {} sentences, {} triplets ({} multi-triplet) from {} into {}",
        stats.n_sentences,
        stats.n_triplets,
        stats.n_multi_triplet,
        src.display(),
        args.output.display()
    );
    manifest.finish()
}

pub fn stats(ctx: &Context, args: &StatsArgs) -> Result<()> {
    let path = ctx.resolve(&args.dataset);
    let files = if path.is_dir() {
        data::split_files(&path)?
    } else {
        vec![(absa_core::dataio::SplitName::infer(&path), path.clone())]
    };
    if files.is_empty() {
        bail!(absa_core::Error::Argument(format!("no split files in {}", path.display())));
    }
    for (name, file) in files {
        let split = data::load_file(&file, args.format.as_deref())?;
        println!("[{name}] {}", file.display());
        print!("{}", dataset_stats(&split.sentences));
    }
    Ok(())
}

pub fn fewshot(ctx: &Context, args: &FewshotArgs) -> Result<()> {
    let src = ctx.resolve(&args.dataset);
    let manifest = RunManifest::start(
        sidecar_manifest(&args.output),
        "fewshot",
        &ctx.argv,
        serde_json::json!({ "fraction": args.fraction }),
        Vec::new(),
        Some(args.seed),
        None,
    )?;
    let split = data::load_file(&src, args.format.as_deref())?;
    let subset = few_shot_sample(
        &split,
        FewShotSpec {
            fraction: args.fraction,
            seed: args.seed,
        },
    )?;
    write_jsonl(&args.output, &subset.sentences)?;
    println!("kept {} of {} sentences (seed {})", subset.len(), split.len(), args.seed);
    manifest.finish()
}

/// Settings after layering the config file and command-line overrides.
fn resolve_config(opts: &TrainOptions) -> Result<(TrainConfig, TemplateCatalog)> {
    let mut config = match &opts.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    if let Some(t) = &opts.template {
        config.template = t.clone();
    }
    if opts.ablate_prompt_encoder {
        config.ablate_prompt_encoder = true;
    }
    if let Some(b) = opts.beam_size {
        config.beam_size = b;
    }
    if let Some(e) = opts.epochs {
        config.epochs = e;
    }
    config.validate()?;
    let catalog = match &opts.templates {
        Some(path) => TemplateCatalog::load(path)?,
        None => TemplateCatalog::with_presets(),
    };
    Ok((config, catalog))
}

fn apply_few_shot(split: DatasetSplit, fraction: Option<f64>, seed: u64) -> Result<DatasetSplit> {
    match fraction {
        Some(f) if !split.is_empty() => Ok(few_shot_sample(&split, FewShotSpec { fraction: f, seed })?),
        _ => Ok(split),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub best_epoch: Option<usize>,
    pub best_dev_f1: Option<f64>,
    pub checkpoint: PathBuf,
    /// Scores of the kept checkpoint on test (or dev when there is no test).
    pub report: Option<MetricsReport>,
    pub evaluated_on: Option<String>,
}

pub fn train(ctx: &Context, opts: &TrainOptions) -> Result<TrainSummary> {
    let (config, catalog) = resolve_config(opts)?;
    train_with(ctx, opts, config, &catalog, &opts.output_dir)
}

fn train_with(
    ctx: &Context,
    opts: &TrainOptions,
    config: TrainConfig,
    catalog: &TemplateCatalog,
    output_dir: &Path,
) -> Result<TrainSummary> {
    let model_config = config.model_config(catalog)?;
    let dataset = ctx.resolve(&opts.dataset);
    let Splits { train, dev, test, files } = data::load_splits(&dataset, opts.format.as_deref())?;
    let train = apply_few_shot(train, opts.few_shot, config.seed)?;
    let dev = dev.map(|d| apply_few_shot(d, opts.few_shot, config.seed)).transpose()?;
    if train.is_empty() {
        bail!(absa_core::Error::Argument("training split is empty".into()));
    }

    let mut entries = Vec::new();
    for (name, path) in &files {
        let split = match name {
            absa_core::dataio::SplitName::Train => Some(&train),
            absa_core::dataio::SplitName::Dev => dev.as_ref(),
            absa_core::dataio::SplitName::Test => test.as_ref(),
        };
        if let Some(s) = split {
            entries.push(DatasetEntry::new(path, s));
        }
    }
    let resolved = serde_json::json!({
        "train": config,
        "model": model_config,
        "few_shot": opts.few_shot,
    });
    std::fs::create_dir_all(output_dir).with_context(|| format!("creating {}", output_dir.display()))?;
    let manifest = RunManifest::start(
        output_dir.join("manifest.json"),
        "train",
        &ctx.argv,
        resolved,
        entries,
        Some(config.seed),
        Some(output_dir.to_path_buf()),
    )?;
    write_text(&output_dir.join("config.toml"), &config.to_toml())?;

    let dev_sentences: &[AnnotatedSentence] = dev.as_ref().map(|d| d.sentences.as_slice()).unwrap_or(&[]);
    let mut trainer = Trainer::new(
        config.clone(),
        model_config,
        &train.sentences,
        &[dev_sentences],
        Some(output_dir.to_path_buf()),
    )?;
    let outcome = trainer.fit(&train.sentences, dev_sentences)?;
    let best_dir = output_dir.join("best");
    println!(
        "trained {} epochs on {} sentences; best epoch {:?}, dev Triplet F1 {}",
        config.epochs,
        train.len(),
        outcome.best_epoch,
        outcome.best_dev_f1.map(|f| format!("{:.2}", 100.0 * f)).unwrap_or_else(|| "n/a".into())
    );

    let held_out = test.as_ref().filter(|t| !t.is_empty()).or(dev.as_ref().filter(|d| !d.is_empty()));
    let mut summary = TrainSummary {
        best_epoch: outcome.best_epoch,
        best_dev_f1: outcome.best_dev_f1,
        checkpoint: best_dir.clone(),
        report: None,
        evaluated_on: None,
    };
    if let Some(split) = held_out {
        let model = load_model(&best_dir)?;
        let preds = predict_all(&model, &split.sentences, config.beam_size, trainer.max_len())?;
        let report = build_report(&preds, &split.sentences, &SubtaskKind::ALL, true, true)?;
        let prefix = split.name.to_string();
        write_report(output_dir, &prefix, &report)?;
        println!("{prefix} scores:\n{}", report.to_table());
        summary.report = Some(report);
        summary.evaluated_on = Some(prefix);
    }
    write_text(&output_dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    manifest.finish()?;
    Ok(summary)
}

fn build_report(
    preds: &[Prediction],
    golds: &[AnnotatedSentence],
    subtasks: &[SubtaskKind],
    multi: bool,
    invalid: bool,
) -> Result<MetricsReport> {
    let p: Vec<SentenceTuples> = preds.iter().map(Prediction::tuples).collect();
    let g: Vec<SentenceTuples> = golds.iter().map(SentenceTuples::from).collect();
    let diagnostics: Vec<_> = preds.iter().map(|p| p.decoded.diagnostics).collect();
    Ok(MetricsReport::build(
        &p,
        &g,
        subtasks,
        multi,
        invalid.then_some(diagnostics.as_slice()),
    )?)
}

fn write_report(dir: &Path, prefix: &str, report: &MetricsReport) -> Result<()> {
    write_text(&dir.join(format!("{prefix}_metrics.json")), &serde_json::to_string_pretty(report)?)?;
    write_text(&dir.join(format!("{prefix}_metrics.txt")), &report.to_table())
}

/// A directory with parameters, or a training output directory whose best
/// checkpoint is used.
fn checkpoint_dir(path: &Path) -> Result<PathBuf> {
    if path.join(PARAMS_FILE).is_file() {
        return Ok(path.to_path_buf());
    }
    let best = path.join("best");
    if best.join(PARAMS_FILE).is_file() {
        return Ok(best);
    }
    bail!(absa_core::Error::Checkpoint(format!(
        "no checkpoint at {} (expected {PARAMS_FILE} or best/{PARAMS_FILE})",
        path.display()
    )))
}

fn max_len_for(dir: &Path, explicit: Option<usize>) -> Result<usize> {
    if let Some(m) = explicit {
        return Ok(m);
    }
    Ok(match load_trainer_state(dir)? {
        Some(state) if state.max_len > 0 => state.max_len,
        _ => TrainConfig::default().resolved_max_len(3),
    })
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    id: &'a str,
    words: &'a [String],
    indices: &'a [usize],
    triplets: Vec<absa_core::Extraction>,
    truncated: bool,
    err_length: usize,
    err_order: usize,
}

fn write_predictions(path: &Path, preds: &[Prediction], sentences: &[AnnotatedSentence]) -> Result<()> {
    let mut out = String::new();
    for (p, s) in preds.iter().zip(sentences) {
        let record = PredictionRecord {
            id: &p.id,
            words: &s.words,
            indices: &p.indices,
            triplets: p.decoded.extractions.iter().cloned().collect(),
            truncated: p.truncated,
            err_length: p.decoded.diagnostics.err_length_count,
            err_order: p.decoded.diagnostics.err_order_count,
        };
        writeln!(out, "{}", serde_json::to_string(&record)?)?;
    }
    write_text(path, &out)
}

pub fn predict(ctx: &Context, args: &PredictArgs) -> Result<()> {
    let dir = checkpoint_dir(&args.checkpoint)?;
    let dataset = ctx.resolve(&args.dataset);
    let manifest = RunManifest::start(
        sidecar_manifest(&args.output),
        "predict",
        &ctx.argv,
        serde_json::json!({ "checkpoint": dir, "beam_size": args.beam_size, "max_len": args.max_len }),
        Vec::new(),
        None,
        None,
    )?;
    let model = load_model(&dir)?;
    let max_len = max_len_for(&dir, args.max_len)?;
    let split = data::load_file(&dataset, args.format.as_deref())?;
    let preds = predict_all(&model, &split.sentences, args.beam_size, max_len)?;
    write_predictions(&args.output, &preds, &split.sentences)?;
    let truncated = preds.iter().filter(|p| p.truncated).count();
    println!(
        "wrote {} predictions to {} ({truncated} hit the length cap)",
        preds.len(),
        args.output.display()
    );
    manifest.finish()
}

fn parse_subtasks(list: &str) -> Result<Vec<SubtaskKind>> {
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let s: SubtaskKind = part.parse()?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    if out.is_empty() {
        bail!(absa_core::Error::Argument("no subtasks given".into()));
    }
    Ok(out)
}

pub fn evaluate(ctx: &Context, args: &EvaluateArgs) -> Result<()> {
    let subtasks = parse_subtasks(&args.subtasks)?;
    let dir = checkpoint_dir(&args.checkpoint)?;
    let dataset = ctx.resolve(&args.dataset);
    std::fs::create_dir_all(&args.output_dir).with_context(|| format!("creating {}", args.output_dir.display()))?;
    let split = data::load_file(&dataset, args.format.as_deref())?;
    let manifest = RunManifest::start(
        args.output_dir.join("manifest.json"),
        "evaluate",
        &ctx.argv,
        serde_json::json!({
            "checkpoint": dir,
            "subtasks": subtasks,
            "beam_size": args.beam_size,
            "max_len": args.max_len,
            "multi_triplet": args.multi_triplet,
            "invalid_rates": args.invalid_rates,
        }),
        vec![DatasetEntry::new(&dataset, &split)],
        None,
        Some(args.output_dir.clone()),
    )?;
    let model = load_model(&dir)?;
    let max_len = max_len_for(&dir, args.max_len)?;
    let preds = predict_all(&model, &split.sentences, args.beam_size, max_len)?;
    let report = build_report(&preds, &split.sentences, &subtasks, args.multi_triplet, args.invalid_rates)?;
    write_report(&args.output_dir, "eval", &report)?;
    write_predictions(&args.output_dir.join("predictions.jsonl"), &preds, &split.sentences)?;
    print!("{}", report.to_table());
    manifest.finish()
}

#[derive(Serialize)]
struct SweepRun {
    template: String,
    seed: u64,
    f1: BTreeMap<SubtaskKind, f64>,
}

pub fn sweep(ctx: &Context, args: &SweepArgs) -> Result<()> {
    let (base, catalog) = resolve_config(&args.options)?;
    for name in &args.grid {
        catalog.get(name)?;
    }
    let seeds = if args.seeds.is_empty() { vec![base.seed] } else { args.seeds.clone() };
    let root = &args.options.output_dir;
    std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let manifest = RunManifest::start(
        root.join("manifest.json"),
        "sweep",
        &ctx.argv,
        serde_json::json!({ "base": base, "grid": args.grid, "seeds": seeds }),
        Vec::new(),
        None,
        Some(root.clone()),
    )?;

    let mut runs = Vec::new();
    for template in &args.grid {
        for &seed in &seeds {
            let config = TrainConfig {
                template: template.clone(),
                seed,
                ..base.clone()
            };
            let dir = root.join(template).join(format!("seed-{seed}"));
            let summary = train_with(ctx, &args.options, config, &catalog, &dir)?;
            let f1 = summary
                .report
                .map(|r| r.subtasks.iter().map(|(k, v)| (*k, v.f1)).collect())
                .unwrap_or_default();
            runs.push(SweepRun {
                template: template.clone(),
                seed,
                f1,
            });
        }
    }

    let mut table = format!("{:<12}{:>10}{:>10}{:>10}\n", "template", "aesc", "pair", "triplet");
    let mut means = BTreeMap::new();
    for template in &args.grid {
        let mine: Vec<&SweepRun> = runs.iter().filter(|r| &r.template == template).collect();
        let mean = |s: SubtaskKind| {
            let v: Vec<f64> = mine.iter().filter_map(|r| r.f1.get(&s).copied()).collect();
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let row: BTreeMap<SubtaskKind, f64> = SubtaskKind::ALL.iter().map(|&s| (s, mean(s))).collect();
        writeln!(
            table,
            "{template:<12}{:>10.2}{:>10.2}{:>10.2}",
            100.0 * row[&SubtaskKind::Aesc],
            100.0 * row[&SubtaskKind::Pair],
            100.0 * row[&SubtaskKind::Triplet]
        )?;
        means.insert(template.clone(), row);
    }
    write_text(
        &root.join("sweep.json"),
        &serde_json::to_string_pretty(&serde_json::json!({ "runs": runs, "mean_f1": means }))?,
    )?;
    write_text(&root.join("sweep.txt"), &table)?;
    print!("{table}");
    manifest.finish()
}
