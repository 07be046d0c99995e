//! Command-line front end: `train`, `eval`, `grid`, `analyze`, `stats`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::data::{categorize_relations, Dataset, EncodedSplit};
use crate::eval::{
    evaluate_model, knn, metrics_by_category, negative_score_distribution, paired_ttest_ranks, read_ranks_csv,
    write_ranks_csv,
};
use crate::model::ModelKind;
use crate::train::{train_with, TrainOutcome};
use crate::Model;

#[derive(Debug, Parser)]
#[command(name = "skge", version, about = "Spherical knowledge graph embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write model.ckpt, train.log.jsonl and config.resolved.
    Train(RunArgs),
    /// Filtered link-prediction metrics for a checkpoint.
    Eval(RunArgs),
    /// Train every margin × learning-rate cell and keep the best by validation MRR.
    Grid(RunArgs),
    /// Embedding-space analyses.
    #[command(subcommand)]
    Analyze(Analyze),
    /// Entity, relation and split counts.
    Stats(RunArgs),
}

#[derive(Debug, Subcommand)]
pub enum Analyze {
    /// Score distribution of uniformly corrupted tails.
    Negatives(RunArgs),
    /// Nearest neighbours of one entity.
    Knn(RunArgs),
    /// Paired t-test between two per-query rank files.
    Significance(RunArgs),
}

/// Flags shared by every command. Each one overrides the matching key of
/// `--config`, which overrides the built-in default.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory holding train.txt, valid.txt and test.txt.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub dim: Option<String>,
    #[arg(long)]
    pub margin: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub negatives: Option<String>,
    #[arg(long)]
    pub eval_every: Option<String>,
    #[arg(long)]
    pub patience: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub radius: Option<String>,
    #[arg(long)]
    pub delta: Option<String>,
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub transe_normalize_entities: Option<String>,
    #[arg(long)]
    pub filter_negatives: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    /// Include wall-clock seconds in train.log.jsonl.
    #[arg(long)]
    pub record_timing: Option<String>,
    /// Worker threads (1 for bit-exact reproducibility of every artifact).
    #[arg(long)]
    pub threads: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Split to evaluate: train, valid or test.
    #[arg(long)]
    pub split: Option<String>,
    /// Also write metrics_by_category.json.
    #[arg(long)]
    pub by_relation_type: bool,
    /// Number of (head, relation) queries for `analyze negatives`.
    #[arg(long = "q")]
    pub queries: Option<String>,
    /// Negatives per query for `analyze negatives`.
    #[arg(long)]
    pub k_neg: Option<String>,
    #[arg(long)]
    pub bins: Option<String>,
    /// Anchor entity label for `analyze knn`.
    #[arg(long)]
    pub entity: Option<String>,
    /// Neighbours to report.
    #[arg(long)]
    pub k: Option<String>,
    /// Optional `id<TAB>name` file mapping entity ids to display names.
    #[arg(long)]
    pub names: Option<String>,
    #[arg(long)]
    pub ranks_a: Option<String>,
    #[arg(long)]
    pub ranks_b: Option<String>,
    /// Comma-separated margins for `grid`.
    #[arg(long)]
    pub grid_margins: Option<String>,
    /// Comma-separated learning rates for `grid`.
    #[arg(long)]
    pub grid_lrs: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((k, v.clone()));
            }
        };
        push("data", &self.data);
        push("model", &self.model);
        push("dim", &self.dim);
        push("margin", &self.margin);
        push("lr", &self.lr);
        push("batch_size", &self.batch_size);
        push("epochs", &self.epochs);
        push("negatives", &self.negatives);
        push("eval_every", &self.eval_every);
        push("patience", &self.patience);
        push("seed", &self.seed);
        push("radius", &self.radius);
        push("delta", &self.delta);
        push("epsilon", &self.epsilon);
        push("transe_normalize_entities", &self.transe_normalize_entities);
        push("filter_negatives", &self.filter_negatives);
        push("out", &self.out);
        push("record_timing", &self.record_timing);
        push("threads", &self.threads);
        push("checkpoint", &self.checkpoint);
        push("split", &self.split);
        push("queries", &self.queries);
        push("k_neg", &self.k_neg);
        push("bins", &self.bins);
        push("entity", &self.entity);
        push("k", &self.k);
        push("names", &self.names);
        push("ranks_a", &self.ranks_a);
        push("ranks_b", &self.ranks_b);
        push("grid_margins", &self.grid_margins);
        push("grid_lrs", &self.grid_lrs);
        if self.by_relation_type {
            out.push(("by_relation_type", "true".into()));
        }
        out
    }

    /// Defaults, then `--config`, then explicit flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (k, v) in self.overrides() {
            cfg.set(k, &v).with_context(|| format!("--{}", k.replace('_', "-")))?;
        }
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let (args, name) = match &cli.command {
        Command::Train(a) => (a, "train"),
        Command::Eval(a) => (a, "eval"),
        Command::Grid(a) => (a, "grid"),
        Command::Stats(a) => (a, "stats"),
        Command::Analyze(Analyze::Negatives(a)) => (a, "negatives"),
        Command::Analyze(Analyze::Knn(a)) => (a, "knn"),
        Command::Analyze(Analyze::Significance(a)) => (a, "significance"),
    };
    let cfg = args.resolve()?;
    if cfg.threads > 0 {
        // a second call within one process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    match name {
        "train" => cmd_train(&cfg),
        "eval" => cmd_eval(&cfg),
        "grid" => cmd_grid(&cfg),
        "stats" => cmd_stats(&cfg),
        "negatives" => cmd_negatives(&cfg),
        "knn" => cmd_knn(&cfg),
        _ => cmd_significance(&cfg),
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.data_dir()?;
    Dataset::load_dir(&dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write(&cfg.out.join("config.resolved"), cfg.to_text())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

fn load_model_for(cfg: &RunConfig, ds: &Dataset) -> Result<Model> {
    let path = cfg.checkpoint_path();
    let model = load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if model.num_entities() != ds.num_entities() {
        bail!(
            "checkpoint has {} entities but the dataset has {}",
            model.num_entities(),
            ds.num_entities()
        );
    }
    if model.num_relations() != ds.num_relations() {
        bail!(
            "checkpoint has {} relations but the dataset has {}",
            model.num_relations(),
            ds.num_relations()
        );
    }
    Ok(model)
}

fn train_one(cfg: &RunConfig, ds: &Dataset, label: &str) -> Result<TrainOutcome<f32>> {
    let model = cfg
        .train
        .init_model::<f32>(cfg.model, ds.num_entities(), ds.num_relations())?;
    let outcome = train_with(model, ds, &cfg.train, cfg.record_timing, |r| {
        if let Some(mrr) = r.val_mrr {
            eprintln!(
                "[{label}] epoch {:>5}  loss {:.6}  val_mrr {:.4}",
                r.epoch, r.mean_loss, mrr
            );
        }
    })?;
    Ok(outcome)
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    prepare_out(cfg)?;
    let outcome = train_one(cfg, &ds, cfg.model.as_str())?;
    save_checkpoint(&outcome.best, cfg.out.join("model.ckpt"))?;
    write(&cfg.out.join("train.log.jsonl"), outcome.log.to_jsonl())?;
    println!(
        "{}",
        json!({
            "model": cfg.model,
            "epochs_run": outcome.log.records.len(),
            "best_epoch": outcome.log.best_epoch,
            "best_val_mrr": outcome.log.best_val_mrr,
            "stopped_early": outcome.log.stopped_early,
            "transe_normalize_entities": outcome.log.transe_normalize_entities,
        })
    );
    Ok(())
}

fn split_of<'a>(ds: &'a Dataset, name: &str) -> &'a EncodedSplit {
    match name {
        "train" => &ds.train,
        "valid" => &ds.valid,
        _ => &ds.test,
    }
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let model = load_model_for(cfg, &ds)?;
    prepare_out(cfg)?;
    let filter = ds.filter_index();
    let split = split_of(&ds, &cfg.split);
    let eval = evaluate_model(&model, split, &filter)?;
    let m = eval.metrics;
    let metrics = json!({
        "mrr": m.mrr,
        "hits1": m.hits1,
        "hits3": m.hits3,
        "hits10": m.hits10,
        "n_queries": m.n_queries,
        "head": eval.head,
        "tail": eval.tail,
        "split": cfg.split,
        "model": model.kind(),
    });
    write_json(&cfg.out.join("metrics.json"), &metrics)?;
    write(&cfg.out.join("ranks.csv"), write_ranks_csv(&eval.ranks))?;
    if cfg.by_relation_type {
        let cats = categorize_relations(&ds.train, ds.num_relations());
        let by_cat = metrics_by_category(split, &eval.ranks, &cats)?;
        write_json(&cfg.out.join("metrics_by_category.json"), &by_cat)?;
    }
    println!("{}", serde_json::to_string(&m)?);
    Ok(())
}

fn cmd_grid(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut lines = String::new();
    let mut best: Option<(f64, RunConfig, TrainOutcome<f32>)> = None;
    for &margin in &cfg.grid_margins {
        for &lr in &cfg.grid_lrs {
            let mut cell = cfg.clone();
            cell.train.margin = margin;
            cell.train.lr = lr;
            let outcome = train_one(&cell, &ds, &format!("{} margin={margin} lr={lr}", cfg.model))?;
            let mrr = outcome.log.best_val_mrr.unwrap_or(f64::NEG_INFINITY);
            lines.push_str(
                &json!({
                    "margin": margin,
                    "lr": lr,
                    "best_val_mrr": outcome.log.best_val_mrr,
                    "best_epoch": outcome.log.best_epoch,
                })
                .to_string(),
            );
            lines.push('\n');
            if best.as_ref().is_none_or(|(b, _, _)| mrr > *b) {
                best = Some((mrr, cell, outcome));
            }
        }
    }
    let Some((mrr, cell, outcome)) = best else {
        bail!("grid is empty: set grid_margins and grid_lrs");
    };
    write(&cfg.out.join("grid.jsonl"), lines)?;
    prepare_out(&cell)?;
    save_checkpoint(&outcome.best, cfg.out.join("model.ckpt"))?;
    write(&cfg.out.join("train.log.jsonl"), outcome.log.to_jsonl())?;
    println!(
        "{}",
        json!({"model": cfg.model, "margin": cell.train.margin, "lr": cell.train.lr, "best_val_mrr": mrr})
    );
    Ok(())
}

fn cmd_stats(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let stats = ds.stats();
    print!("{}", stats.to_table());
    println!("{}", serde_json::to_string(&stats)?);
    Ok(())
}

fn cmd_negatives(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let model = load_model_for(cfg, &ds)?;
    prepare_out(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let report = negative_score_distribution(&model, &ds.test, cfg.queries, cfg.k_neg, &mut rng, cfg.bins)?;
    write(&cfg.out.join("negatives_hist.csv"), report.histogram.to_csv())?;
    write_json(&cfg.out.join("negatives.json"), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    if model.kind() != ModelKind::TransE {
        let bound = 2.0 * model.sphere().radius as f64;
        eprintln!("max score {:.6} (sphere diameter {bound})", report.max);
    }
    Ok(())
}

fn read_names(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(id, name)| (id.trim().to_owned(), name.trim().to_owned()))
        .collect())
}

fn cmd_knn(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let model = load_model_for(cfg, &ds)?;
    let Some(label) = cfg.entity.as_deref() else {
        bail!("analyze knn needs --entity");
    };
    let names = cfg.names.as_deref().map(read_names).transpose()?.unwrap_or_default();
    // accept either a raw vocabulary label or a display name from --names
    let anchor = ds
        .vocab
        .entity_id(label)
        .or_else(|| {
            names
                .iter()
                .filter(|(_, name)| name.as_str() == label)
                .find_map(|(id, _)| ds.vocab.entity_id(id))
        })
        .with_context(|| format!("unknown entity label {label:?}"))?;
    let display = |e: usize| {
        let id = ds.vocab.entity_label(e).unwrap_or_default();
        names.get(id).cloned().unwrap_or_else(|| id.to_owned())
    };
    let neighbours: Vec<_> = knn(&model, anchor, cfg.k)?
        .into_iter()
        .map(|(e, d)| json!({"label": display(e), "id": ds.vocab.entity_label(e), "distance": d}))
        .collect();
    prepare_out(cfg)?;
    let report = json!({"anchor": display(anchor), "model": model.kind(), "neighbours": neighbours});
    write_json(&cfg.out.join("knn.json"), &report)?;
    for n in &neighbours {
        println!("{}\t{}", n["label"].as_str().unwrap_or_default(), n["distance"]);
    }
    Ok(())
}

fn cmd_significance(cfg: &RunConfig) -> Result<()> {
    let (Some(a), Some(b)) = (&cfg.ranks_a, &cfg.ranks_b) else {
        bail!("analyze significance needs --ranks-a and --ranks-b");
    };
    let read = |p: &PathBuf| -> Result<_> {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        Ok(read_ranks_csv(&text)?)
    };
    let test = paired_ttest_ranks(&read(a)?, &read(b)?)?;
    prepare_out(cfg)?;
    write_json(&cfg.out.join("significance.json"), &test)?;
    println!(
        "t = {}  p = {}{}",
        test.t,
        test.p,
        if test.degenerate { "  (degenerate)" } else { "" }
    );
    Ok(())
}
