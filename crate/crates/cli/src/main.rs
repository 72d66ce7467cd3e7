//! Command-line front end for the conditional latent tree toolkit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cltm::distances::{distance_matrix, DistanceMatrix};
use cltm::em::{fit_em, EmConfig};
use cltm::model::{CltmModel, LatentTreeStructure, TimeSeriesDataset, VariableMode};
use cltm::pipeline::{
    build_covariates, generate_synthetic, load_data, run_experiment, write_edge_triples, write_states_csv, DataSource,
    ExperimentConfig, Manifest, SyntheticSpec, MANIFEST_FILE,
};
use cltm::predict::{
    fit_edge_model, predict_edges, predict_series, score_edges, score_nodes, stream_for, EdgeModel, MetricsReport,
};
use cltm::structure::{cl_grouping, cluster_assignment, to_dot, GroupingVariant};

#[derive(Parser)]
#[command(name = "cltm", version, about = "Conditional latent tree models for multivariate binary time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pairwise information distances between the observed series.
    Distances(DistancesArgs),
    /// Latent tree from a distance matrix.
    Structure(StructureArgs),
    /// EM fit of the weights on a given structure.
    Fit(FitArgs),
    /// One-step-ahead node prediction and CP/CA scores.
    Predict(PredictArgs),
    /// Edge model fit, plus edge prediction and EP/EA scores.
    Edges(EdgesArgs),
    /// Observed-node clusters from a latent tree.
    Clusters(ClustersArgs),
    /// Synthetic ground-truth data.
    Synth(SynthArgs),
    /// Full pipeline from a config or a previous manifest.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Binary,
    Gaussian,
}

impl From<Mode> for VariableMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Binary => VariableMode::Binary,
            Mode::Gaussian => VariableMode::Gaussian,
        }
    }
}

/// Data and covariates: a JSON experiment config, overridden by flags.
#[derive(Args)]
struct DataArgs {
    /// Experiment config JSON (data source, covariate builders, stage settings).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Wide-form states CSV (replaces the config's data source).
    #[arg(long)]
    states: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "binary")]
    mode: Mode,
    /// Binarize states at this threshold (`>=` is 1).
    #[arg(long)]
    threshold: Option<f64>,
    /// Edge observations as `t,node_u,node_v` triples.
    #[arg(long)]
    edges: Option<PathBuf>,
}

impl DataArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(states) = &self.states {
            cfg.data = DataSource::States {
                states: states.clone(),
                mode: self.mode.into(),
                threshold: self.threshold,
                edges: self.edges.clone(),
            };
        } else if self.config.is_none() {
            bail!("give --states or --config");
        }
        Ok(cfg)
    }

    fn dataset(&self) -> Result<(ExperimentConfig, TimeSeriesDataset)> {
        let cfg = self.config()?;
        let raw = load_data(&cfg.data)?;
        let ds = build_covariates(&raw, &cfg.builders, cfg.execution)?;
        Ok((cfg, ds))
    }
}

#[derive(Args)]
struct DistancesArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Condition on the binary node covariates.
    #[arg(long)]
    conditional: bool,
    /// Use only time points before this index.
    #[arg(long)]
    until: Option<usize>,
    #[arg(long, default_value = "distances.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct StructureArgs {
    #[arg(long)]
    distances: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    eps_test: f64,
    #[arg(long, default_value_t = 0.05)]
    eps_min: f64,
    /// Run recursive grouping over all nodes instead of CL neighbourhoods.
    #[arg(long)]
    global: bool,
    /// Skip the additive-fit check.
    #[arg(long)]
    no_check_fit: bool,
    #[arg(long, default_value = "structure.json")]
    out: PathBuf,
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    structure: PathBuf,
    /// Seed of the random initializations.
    #[arg(long)]
    seed: u64,
    /// Use only time points before this index.
    #[arg(long)]
    until: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    seed: u64,
    /// First predicted time point (defaults to the burn-in).
    #[arg(long)]
    from: Option<usize>,
    /// End of the predicted range (exclusive; defaults to T).
    #[arg(long)]
    to: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// Writes `<out>.json` and `<out>.csv`.
    #[arg(long, default_value = "metrics")]
    out: PathBuf,
}

#[derive(Args)]
struct EdgesArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Fit on time points before this index and score the rest.
    #[arg(long)]
    split: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value = "edge_model.json")]
    out: PathBuf,
    /// Writes `<metrics>.json` and `<metrics>.csv` for the scored range.
    #[arg(long, default_value = "edge_metrics")]
    metrics: PathBuf,
}

#[derive(Args)]
struct ClustersArgs {
    #[arg(long)]
    structure: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic spec JSON; defaults otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    observed: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    time_steps: Option<usize>,
    #[arg(long, default_value = "synthetic")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    config: Option<PathBuf>,
    /// Rerun the config recorded in a manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Seed of the EM initializations and the prediction streams.
    #[arg(long, required_unless_present = "manifest")]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn head(ds: TimeSeriesDataset, until: Option<usize>) -> Result<TimeSeriesDataset> {
    Ok(match until {
        Some(end) => ds.slice_time(0, end)?,
        None => ds,
    })
}

fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn distances(a: DistancesArgs) -> Result<()> {
    let (mut cfg, ds) = a.data.dataset()?;
    cfg.distances.conditional |= a.conditional;
    cfg.distances.mode = ds.mode;
    let d = distance_matrix(&head(ds, a.until)?, &cfg.distances)?;
    d.write_csv(&a.out)?;
    Ok(())
}

fn structure(a: StructureArgs) -> Result<()> {
    let d = DistanceMatrix::read_csv(&a.distances)?;
    let cfg = cltm::structure::StructureConfig {
        eps_test: a.eps_test,
        eps_min: a.eps_min,
        variant: if a.global { GroupingVariant::Global } else { GroupingVariant::Local },
        check_fit: !a.no_check_fit,
    };
    let tree = cl_grouping(&d, &cfg)?;
    write_json(&a.out, &tree)?;
    if let Some(dot) = a.dot {
        fs::write(dot, to_dot(&tree))?;
    }
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let (cfg, ds) = a.data.dataset()?;
    let ds = head(ds, a.until)?;
    let tree: LatentTreeStructure = read_json(&a.structure)?;
    let em = EmConfig {
        seed: a.seed,
        max_iterations: a.max_iterations.unwrap_or(cfg.em.max_iterations),
        restarts: a.restarts.unwrap_or(cfg.em.restarts),
        ..cfg.em
    };
    let (model, trace) = fit_em(&tree, &ds, &ds.schema, &em)?;
    write_json(&a.out, &model)?;
    if let Some(path) = a.trace {
        trace.write_csv_file(&path)?;
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let (cfg, ds) = a.data.dataset()?;
    let model: CltmModel = read_json(&a.model)?;
    let range = a.from.unwrap_or(ds.burn_in)..a.to.unwrap_or(ds.len());
    let m = a.samples.unwrap_or(cfg.samples);
    let batches = predict_series(&model, &ds, range, m, a.seed, cfg.execution)?;
    let report = MetricsReport::new("cltm", cfg.normalization, &score_nodes(&batches, &ds, cfg.normalization)?, None)?;
    report.write_files(&with_suffix(&a.out, "json"), &with_suffix(&a.out, "csv"))?;
    Ok(())
}

fn edges(a: EdgesArgs) -> Result<()> {
    let (cfg, ds) = a.data.dataset()?;
    if ds.edge_observations.is_none() {
        bail!("edge observations required (--edges or an edges file in the config)");
    }
    let model: CltmModel = read_json(&a.model)?;
    let split = a.split.unwrap_or(ds.len());
    let edge_model = fit_edge_model(&ds.slice_time(0, split)?, &model, &cfg.edges)?;
    write_json(&a.out, &edge_model)?;
    if split < ds.len() {
        score_edge_range(&cfg, &ds, &model, &edge_model, split, a.seed, a.samples.unwrap_or(cfg.samples), &a.metrics)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn score_edge_range(
    cfg: &ExperimentConfig,
    ds: &TimeSeriesDataset,
    model: &CltmModel,
    edge_model: &EdgeModel,
    split: usize,
    seed: u64,
    m: usize,
    stem: &Path,
) -> Result<()> {
    let batches = predict_series(model, ds, split..ds.len(), m, seed, cfg.execution)?;
    let preds = batches
        .iter()
        .map(|b| predict_edges(edge_model, model, ds, b, m, &mut stream_for(seed ^ 0x6564_6765, b.t)))
        .collect::<cltm::Result<Vec<_>>>()?;
    let nodes = score_nodes(&batches, ds, cfg.normalization)?;
    let edges = score_edges(&preds, ds, cfg.normalization)?;
    let report = MetricsReport::new("cltm", cfg.normalization, &nodes, Some(&edges))?;
    report.write_files(&with_suffix(stem, "json"), &with_suffix(stem, "csv"))?;
    Ok(())
}

fn clusters(a: ClustersArgs) -> Result<()> {
    let tree: LatentTreeStructure = read_json(&a.structure)?;
    let map: BTreeMap<String, usize> = cluster_assignment(&tree, a.k)?.into_iter().collect();
    match a.out {
        Some(path) => write_json(&path, &map),
        None => {
            println!("{}", serde_json::to_string_pretty(&map)?);
            Ok(())
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec: SyntheticSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => SyntheticSpec::default(),
    };
    spec.seed = a.seed;
    if let Some(n) = a.observed {
        spec.shape.n_observed = n;
    }
    if let Some(n) = a.hidden {
        spec.shape.n_hidden = n;
    }
    if let Some(t) = a.time_steps {
        spec.time_steps = t;
    }
    let data = generate_synthetic(&spec)?;
    fs::create_dir_all(&a.out_dir)?;
    write_states_csv(&data.dataset, fs::File::create(a.out_dir.join("states.csv"))?)?;
    if let Some(w) = &data.dataset.edge_observations {
        write_edge_triples(&data.dataset.node_ids, w, fs::File::create(a.out_dir.join("edges.csv"))?)?;
    }
    if let Some(em) = &data.edge_model {
        write_json(&a.out_dir.join("edge_model.json"), em)?;
    }
    write_json(&a.out_dir.join("model.json"), &data.model)?;
    write_json(&a.out_dir.join("spec.json"), &spec)?;
    fs::write(a.out_dir.join("tree.dot"), to_dot(&data.model.structure))?;
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = match (&a.config, &a.manifest) {
        (Some(p), _) => ExperimentConfig::from_json_file(p).with_context(|| format!("reading {}", p.display()))?,
        (None, Some(p)) => Manifest::read(p).with_context(|| format!("reading {}", p.display()))?.config,
        (None, None) => unreachable!("clap requires one of them"),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
        cfg.em.seed = seed;
    }
    if let Some(dir) = a.output_dir {
        cfg.output_dir = dir;
    }
    let outcome = run_experiment(&cfg)?;
    log::info!(
        "wrote {} outputs and {}",
        outcome.manifest.outputs.len(),
        cfg.output_dir.join(MANIFEST_FILE).display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Distances(a) => distances(a),
        Command::Structure(a) => structure(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Edges(a) => edges(a),
        Command::Clusters(a) => clusters(a),
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
