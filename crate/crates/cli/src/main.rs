//! `hier`: train, evaluate and inspect hierarchical hyperbolic embeddings.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use hier::config::{RunConfig, TrainConfig};
use hier::data::{
    self, read_features, read_tree, write_features, ClassTree, Dataset, GenerateSpec,
};
use hier::eval::{affinity_matrix, proxy_neighbor_report};
use hier::gradcheck;
use hier::mining::DistanceMatrix;
use hier::model::Model;
use hier::train::{self, Checkpoint};

/// Random trees averaged for the Dasgupta baseline.
const RANDOM_TREES: usize = 100;

#[derive(Parser)]
#[command(
    name = "hier",
    version,
    about = "Hierarchical proxies for metric learning in the Poincare ball"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints plus a metrics log.
    Train(TrainArgs),
    /// Evaluate a checkpoint: Recall@k, Dasgupta cost, class affinities.
    Eval(EvalArgs),
    /// Finite-difference check of every differentiable composite.
    Gradcheck(GradcheckArgs),
    /// Recall@1 for each value of one hyperparameter.
    Sweep(SweepArgs),
    /// Generate a synthetic hierarchical dataset.
    GenData(GenDataArgs),
    /// Dump embeddings, the induced tree and reports for a checkpoint.
    Export(ExportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Feature file (config key `dataset`).
    #[arg(long)]
    dataset: Option<String>,
    /// Override `lambda`.
    #[arg(long)]
    lambda: Option<f64>,
    /// Override any config key, e.g. `--set K=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    /// Config file, then flags, then `--set` overrides.
    fn resolve(&self) -> Result<RunConfig> {
        let mut run = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                RunConfig::from_json(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            run.train.seed = s;
        }
        if let Some(d) = &self.dataset {
            run.dataset = Some(d.clone());
        }
        if let Some(l) = self.lambda {
            run.train.lambda = l;
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .with_context(|| format!("override `{o}` is not KEY=VALUE"))?;
            run.set(k.trim(), v.trim())?;
        }
        run.train.validate()?;
        Ok(run)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory (config key `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitChoice {
    Train,
    Test,
    All,
}

impl SplitChoice {
    fn name(self) -> &'static str {
        match self {
            SplitChoice::Train => "train",
            SplitChoice::Test => "test",
            SplitChoice::All => "all",
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// The full feature file the checkpoint was trained from.
    #[arg(long)]
    dataset: PathBuf,
    /// Recall cutoffs; defaults to the checkpoint's `eval_ks`.
    #[arg(long, value_delimiter = ',')]
    ks: Vec<usize>,
    /// Class tree for the Dasgupta cost.
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitChoice,
    /// Directory for metrics.json and affinity.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = gradcheck::INSTANCES)]
    instances: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// One of K, proxy_count, lambda, delta.
    #[arg(long)]
    param: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Optional directory; each run trains into `<param>=<value>/`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 2)]
    branching: usize,
    #[arg(long, default_value_t = 200)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.3)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitChoice,
    /// Nearest samples listed per proxy.
    #[arg(long, default_value_t = 4)]
    top_m: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::GenData(a) => cmd_gen_data(a),
        Command::Export(a) => cmd_export(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    read_features(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn config_value(json: &str) -> Value {
    serde_json::from_str(json).expect("configs serialize to JSON")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_training(run: &RunConfig) -> Result<Vec<train::EpochMetrics>> {
    let Some(path) = &run.dataset else {
        bail!("missing `dataset`: pass --dataset or set it in the config");
    };
    let ds = load_dataset(Path::new(path))?;
    let out = run.out_dir.as_deref().map(Path::new);
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_text(&dir.join("run.json"), &run.to_json())?;
    }
    let (_, log) = train::train_loop(&run.train, &ds, out)?;
    Ok(log)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let mut run = args.config.resolve()?;
    if let Some(o) = &args.out {
        run.out_dir = Some(o.display().to_string());
    }
    for m in run_training(&run)? {
        println!("{}", m.to_json());
    }
    Ok(ExitCode::SUCCESS)
}

/// Checkpoint, its config, the rebuilt model and the chosen split.
struct Loaded {
    cfg: TrainConfig,
    model: Model,
    full: Dataset,
    ds: Dataset,
}

fn load_checkpoint(checkpoint: &Path, dataset: &Path, which: SplitChoice) -> Result<Loaded> {
    let ckpt = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let cfg = TrainConfig::from_json(&ckpt.config_json).context("checkpoint config")?;
    let full = load_dataset(dataset)?;
    let model = train::model_from_checkpoint(&ckpt, &cfg, full.dim)?;
    let ds = match which {
        SplitChoice::All => full.clone(),
        SplitChoice::Train | SplitChoice::Test => {
            let (tr, te) = data::split(&full, cfg.split_fraction, cfg.split_seed)?;
            if matches!(which, SplitChoice::Train) {
                tr
            } else {
                te
            }
        }
    };
    Ok(Loaded {
        cfg,
        model,
        full,
        ds,
    })
}

/// `w_ij` from the class tree, looked up through sample ids in the full file.
fn tree_weights(tree: &ClassTree, full: &Dataset) -> Result<impl Fn(u64, u64) -> f64> {
    let mut label_of = std::collections::HashMap::with_capacity(full.len());
    for (&id, &l) in full.ids.iter().zip(&full.labels) {
        if l as usize >= tree.num_classes() {
            bail!(
                "label {l} is not a leaf of a tree with {} classes",
                tree.num_classes()
            );
        }
        label_of.insert(id, l as usize);
    }
    let tree = tree.clone();
    Ok(move |a: u64, b: u64| tree.class_weight(label_of[&a], label_of[&b]))
}

fn evaluation(
    l: &Loaded,
    tree: Option<&Path>,
) -> Result<(Map<String, Value>, DistanceMatrix, Vec<f64>)> {
    let points = train::embed_points(&l.model, &l.cfg, &l.ds.features_f64())?;
    let dist = DistanceMatrix::hyperbolic(&points, l.cfg.embedding_dim, l.cfg.curvature);
    let labels: Vec<usize> = l.ds.labels.iter().map(|&x| x as usize).collect();
    let recall = hier::eval::recall_at_k(&dist, &labels, &l.cfg.eval_ks)?;
    let mut out = Map::new();
    out.insert("samples".into(), json!(l.ds.len()));
    for (k, r) in l.cfg.eval_ks.iter().zip(recall) {
        out.insert(format!("recall@{k}"), json!(r));
    }
    let dasgupta = match tree {
        Some(p) => {
            let t = read_tree(p).with_context(|| format!("reading tree {}", p.display()))?;
            let w = tree_weights(&t, &l.full)?;
            let c = train::dasgupta_comparison(&l.model, &l.cfg, &l.ds, w, RANDOM_TREES)?;
            json!({
                "subset": c.subset.len(),
                "extracted": c.extracted,
                "random_mean": c.random_mean,
                "ratio": c.extracted / c.random_mean,
                "random_trees": RANDOM_TREES,
            })
        }
        None => Value::Null,
    };
    out.insert("dasgupta".into(), dasgupta);
    Ok((out, dist, points))
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let mut l = load_checkpoint(&args.checkpoint, &args.dataset, args.split)?;
    if !args.ks.is_empty() {
        l.cfg.eval_ks = args.ks.clone();
    }
    let (mut metrics, dist, _) = evaluation(&l, args.tree.as_deref())?;
    metrics.insert("split".into(), json!(args.split.name()));
    metrics.insert("config".into(), config_value(&l.cfg.to_json()));
    let labels: Vec<usize> = l.ds.labels.iter().map(|&x| x as usize).collect();
    let text = serde_json::to_string_pretty(&metrics)?;
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_text(&dir.join("metrics.json"), &text)?;
        write_text(
            &dir.join("affinity.csv"),
            &affinity_matrix(&dist, &labels)?.to_csv(),
        )?;
    }
    println!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let results = gradcheck::run_battery(args.seed, args.instances)?;
    let mut ok = true;
    println!(
        "{:<20} {:>10} {:>14} {:>8}",
        "composite", "instances", "max_rel_err", "status"
    );
    for r in &results {
        ok &= r.passed();
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<20} {:>10} {:>14.3e} {:>8}",
            r.name, r.instances, r.max_rel_error, status
        );
    }
    println!(
        "threshold {:e}, step {:e}, {:.2}s",
        gradcheck::THRESHOLD,
        gradcheck::STEP,
        start.elapsed().as_secs_f64()
    );
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

const SWEEP_PARAMS: [&str; 4] = ["K", "proxy_count", "lambda", "delta"];

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    if !SWEEP_PARAMS.contains(&args.param.as_str()) {
        bail!(
            "cannot sweep `{}`; choose one of {}",
            args.param,
            SWEEP_PARAMS.join(", ")
        );
    }
    let base = args.config.resolve()?;
    if !base.train.eval_ks.contains(&1) {
        bail!("sweeps report Recall@1, so `eval_ks` must include 1");
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_text(&dir.join("sweep.json"), &base.to_json())?;
    }
    println!("param,value,recall@1");
    for value in &args.values {
        let mut run = base.clone();
        run.set(&args.param, value)?;
        run.train.validate()?;
        run.out_dir = args.out.as_ref().map(|d| {
            d.join(format!("{}={value}", args.param))
                .display()
                .to_string()
        });
        let log = run_training(&run).with_context(|| format!("{} = {value}", args.param))?;
        let r1 = log
            .last()
            .and_then(|m| m.recall_at(1))
            .context("run produced no epochs")?;
        println!("{},{value},{r1}", args.param);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen_data(args: GenDataArgs) -> Result<ExitCode> {
    let spec = GenerateSpec {
        samples_per_class: args.samples_per_class,
        feature_dim: args.dim,
        cluster_spread: args.spread,
        seed: args.seed,
        ..GenerateSpec::complete(args.depth, args.branching)
    };
    let h = data::generate(spec)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_features(&h.dataset, &args.out.join("features.bin"))?;
    data::write_tree(&h.tree, &args.out.join("tree.txt"))?;
    let report = json!({
        "spec": h.spec,
        "classes": h.tree.num_classes(),
        "internal_nodes": h.tree.num_internal(),
        "samples": h.dataset.len(),
        "separability": h.separability,
    });
    let text = serde_json::to_string_pretty(&report)?;
    write_text(&args.out.join("report.json"), &text)?;
    println!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_export(args: ExportArgs) -> Result<ExitCode> {
    let l = load_checkpoint(&args.checkpoint, &args.dataset, args.split)?;
    let dir = &args.out;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let (mut metrics, dist, points) = evaluation(&l, args.tree.as_deref())?;
    metrics.insert("split".into(), json!(args.split.name()));

    let dim = l.cfg.embedding_dim;
    let emb = Dataset::new(
        l.ds.ids.clone(),
        l.ds.labels.clone(),
        dim,
        points.iter().map(|&x| x as f32).collect(),
    )?;
    write_features(&emb, &dir.join("embeddings.bin"))?;

    let tree = train::induced_tree(&l.model, &l.cfg, &points)?;
    write_text(&dir.join("tree_edges.txt"), &tree.edge_list())?;

    let labels: Vec<usize> = l.ds.labels.iter().map(|&x| x as usize).collect();
    write_text(
        &dir.join("affinity.csv"),
        &affinity_matrix(&dist, &labels)?.to_csv(),
    )?;

    let proxies = train::proxy_points(&l.model, &l.cfg);
    let report = proxy_neighbor_report(&points, &proxies, dim, &l.cfg.geometry(), args.top_m)?;
    let report: Vec<Value> = report
        .iter()
        .map(|p| {
            json!({
                "proxy": p.proxy,
                "norm": p.norm,
                "neighbors": p.neighbors.iter().map(|&(s, d)| json!({
                    "id": l.ds.ids[s],
                    "label": l.ds.labels[s],
                    "distance": d,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    write_text(
        &dir.join("proxy_neighbors.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;

    let config = config_value(&l.cfg.to_json());
    write_text(
        &dir.join("config.json"),
        &serde_json::to_string_pretty(&config)?,
    )?;
    metrics.insert("config".into(), config);
    let text = serde_json::to_string_pretty(&metrics)?;
    write_text(&dir.join("metrics.json"), &text)?;
    println!("{text}");
    Ok(ExitCode::SUCCESS)
}
