//! End-to-end experiment: load, build covariates, learn the structure and
//! weights on the training range, fit the chain CRF baseline, predict and
//! score both ranges, and write every artifact plus a manifest.
//!
//! Stages run sequentially. A failing stage aborts the run; outputs written
//! so far stay on disk and the manifest records the failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::covariates::{build_covariates, CovariateBuilder};
use super::ingest::{aggregate_daily, read_edge_triples, read_states_csv, select_active_nodes, threshold_binary, RawEventLog};
use super::synthetic::{generate_synthetic, SyntheticSpec};
use crate::distances::{distance_matrix, DistanceConfig};
use crate::em::{fit_chain_crf, fit_em, ChainCrf, ChainCrfConfig, EmConfig};
use crate::error::{CltmError, Result};
use crate::exec::Execution;
use crate::model::{CltmModel, TimeSeriesDataset, VariableMode};
use crate::predict::{
    fit_edge_model, predict_edges, predict_series, score_edges, score_nodes, EdgeFitConfig, EdgeModel, MetricsReport,
    Normalization, PredictionBatch, DEFAULT_SAMPLES,
};
use crate::structure::{cl_grouping, to_dot, StructureConfig};

/// Where the observations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Wide-form states CSV. Real-valued data is binarized when `threshold`
    /// is set.
    States {
        states: PathBuf,
        #[serde(default)]
        mode: VariableMode,
        #[serde(default)]
        threshold: Option<f64>,
        #[serde(default)]
        edges: Option<PathBuf>,
    },
    /// Long-form event log, binned, ratio-square-rooted and thresholded.
    Events {
        events: PathBuf,
        #[serde(default = "one_day")]
        bin_days: u32,
        threshold: f64,
        /// Keep nodes whose active fraction is at least this.
        #[serde(default)]
        min_rate: Option<f64>,
        #[serde(default)]
        edges: Option<PathBuf>,
    },
    Synthetic(SyntheticSpec),
}

fn one_day() -> u32 {
    1
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// First test time point; `None` trains on everything and skips the
    /// test range.
    pub split: Option<usize>,
    pub builders: Vec<CovariateBuilder>,
    pub distances: DistanceConfig,
    pub structure: StructureConfig,
    pub em: EmConfig,
    pub chain: ChainCrfConfig,
    pub edges: EdgeFitConfig,
    /// Samples per one-step-ahead prediction.
    pub samples: usize,
    /// Seed of the prediction streams.
    pub seed: u64,
    pub normalization: Normalization,
    /// Data-parallel policy of the covariate and prediction stages.
    pub execution: Execution,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::default(),
            split: None,
            builders: vec![CovariateBuilder::Lag { k: 1 }],
            distances: DistanceConfig::default(),
            structure: StructureConfig::default(),
            em: EmConfig::default(),
            chain: ChainCrfConfig::default(),
            edges: EdgeFitConfig::default(),
            samples: DEFAULT_SAMPLES,
            seed: 0,
            normalization: Normalization::default(),
            execution: Execution::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(self)?))
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Raw observations (states, dates, edges) without covariates.
pub fn load_data(source: &DataSource) -> Result<TimeSeriesDataset> {
    match source {
        DataSource::States {
            states,
            mode,
            threshold,
            edges,
        } => {
            let mut ds = read_states_csv(std::fs::File::open(states)?, *mode)?;
            if let Some(thr) = threshold {
                ds.states = threshold_binary(&ds.states, *thr)?;
                ds.mode = VariableMode::Binary;
            }
            attach_edges(ds, edges.as_deref())
        }
        DataSource::Events {
            events,
            bin_days,
            threshold,
            min_rate,
            edges,
        } => {
            let counts = aggregate_daily(&RawEventLog::read_csv(events)?, *bin_days)?;
            let states = threshold_binary(&counts.ratio_sqrt()?, *threshold)?;
            let keep = match min_rate {
                Some(r) => select_active_nodes(&states, *r),
                None => (0..states.ncols()).collect(),
            };
            if keep.is_empty() {
                return Err(CltmError::Empty("no node passes the activity filter".into()));
            }
            let ids = keep.iter().map(|&c| counts.node_ids[c].clone()).collect();
            let mut ds = TimeSeriesDataset::from_states(ids, VariableMode::Binary, states.select(ndarray::Axis(1), &keep))?;
            ds.dates = Some(counts.bin_starts);
            attach_edges(ds, edges.as_deref())
        }
        DataSource::Synthetic(spec) => {
            let data = generate_synthetic(spec)?;
            let mut ds =
                TimeSeriesDataset::from_states(data.dataset.node_ids.clone(), VariableMode::Binary, data.dataset.states)?;
            ds.dates = data.dataset.dates;
            ds.edge_observations = data.dataset.edge_observations;
            Ok(ds)
        }
    }
}

fn attach_edges(mut ds: TimeSeriesDataset, edges: Option<&Path>) -> Result<TimeSeriesDataset> {
    if let Some(path) = edges {
        ds.edge_observations = Some(read_edge_triples(std::fs::File::open(path)?, &ds.node_ids, ds.len())?);
    }
    Ok(ds)
}

/// Loads the data and builds the configured covariates.
pub fn prepare_dataset(config: &ExperimentConfig) -> Result<TimeSeriesDataset> {
    build_covariates(&load_data(&config.data)?, &config.builders, config.execution)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub prediction: u64,
    pub em: u64,
    pub synthetic: Option<u64>,
}

/// Record of one run. Contains no timestamps, so identical runs produce
/// identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub stages: Vec<StageRecord>,
    /// Output file name to hex SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
    pub succeeded: bool,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";

/// Scores of both models on one range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeMetrics {
    pub start: usize,
    pub end: usize,
    pub cltm: MetricsReport,
    pub baseline: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMetrics {
    pub train: RangeMetrics,
    /// `None` when the split leaves no test points.
    pub test: Option<RangeMetrics>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub manifest: Manifest,
    pub metrics: ExperimentMetrics,
    pub model: CltmModel,
    pub baseline: ChainCrf,
    pub edge_model: Option<EdgeModel>,
}

struct Recorder {
    dir: PathBuf,
    stages: Vec<StageRecord>,
    outputs: BTreeMap<String, String>,
}

impl Recorder {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        match f(self) {
            Ok(v) => {
                self.mark(name, StageStatus::Ok, None);
                Ok(v)
            }
            Err(e) => {
                self.mark(name, StageStatus::Failed, Some(e.to_string()));
                Err(CltmError::stage(name, e))
            }
        }
    }

    fn mark(&mut self, name: &str, status: StageStatus, error: Option<String>) {
        self.stages.push(StageRecord {
            name: name.into(),
            status,
            error,
        });
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.outputs.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn write_report(&mut self, stem: &str, report: &MetricsReport) -> Result<()> {
        self.write_json(&format!("{stem}.json"), report)?;
        let mut csv = Vec::new();
        report.write_csv(&mut csv)?;
        self.write(&format!("{stem}.csv"), &csv)
    }
}

const EDGE_STREAM_SALT: u64 = 0x6564_6765;

fn predict_range(
    config: &ExperimentConfig,
    dataset: &TimeSeriesDataset,
    model: &CltmModel,
    baseline: &ChainCrf,
    edge_model: Option<&EdgeModel>,
    start: usize,
    end: usize,
) -> Result<RangeMetrics> {
    let m = config.samples;
    let ours = predict_series(model, dataset, start..end, m, config.seed, config.execution)?;
    let theirs = predict_series(baseline, dataset, start..end, m, config.seed, config.execution)?;
    let edge_scores = match edge_model {
        Some(em) => {
            let preds = config.execution.try_map(ours.len(), |i| {
                let batch: &PredictionBatch = &ours[i];
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ EDGE_STREAM_SALT);
                rng.set_stream(batch.t as u64);
                predict_edges(em, model, dataset, batch, m, &mut rng)
            })?;
            Some(score_edges(&preds, dataset, config.normalization)?)
        }
        None => None,
    };
    let mut cltm = MetricsReport::new(
        "cltm",
        config.normalization,
        &score_nodes(&ours, dataset, config.normalization)?,
        edge_scores.as_deref(),
    )?;
    let baseline = MetricsReport::new(
        "chain_crf",
        config.normalization,
        &score_nodes(&theirs, dataset, config.normalization)?,
        None,
    )?;
    for metric in ["CP", "CA"] {
        cltm.compare(&baseline, metric)?;
    }
    Ok(RangeMetrics {
        start,
        end,
        cltm,
        baseline,
    })
}

/// Runs every stage and writes the artifacts and `manifest.json` into
/// `config.output_dir`. The manifest is written on failure too.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    std::fs::create_dir_all(&config.output_dir)?;
    let mut rec = Recorder {
        dir: config.output_dir.clone(),
        stages: Vec::new(),
        outputs: BTreeMap::new(),
    };
    let result = run_stages(config, &mut rec);
    let manifest = Manifest {
        config: config.clone(),
        config_sha256: config.hash()?,
        seeds: Seeds {
            prediction: config.seed,
            em: config.em.seed,
            synthetic: match &config.data {
                DataSource::Synthetic(s) => Some(s.seed),
                _ => None,
            },
        },
        stages: rec.stages.clone(),
        outputs: rec.outputs.clone(),
        succeeded: result.is_ok(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    std::fs::write(config.output_dir.join(MANIFEST_FILE), bytes)?;
    let (metrics, model, baseline, edge_model) = result?;
    Ok(ExperimentOutcome {
        manifest,
        metrics,
        model,
        baseline,
        edge_model,
    })
}

type StagesOutput = (ExperimentMetrics, CltmModel, ChainCrf, Option<EdgeModel>);

fn run_stages(config: &ExperimentConfig, rec: &mut Recorder) -> Result<StagesOutput> {
    let dataset = rec.stage("load", |_| load_data(&config.data))?;
    let dataset = rec.stage("covariates", |_| build_covariates(&dataset, &config.builders, config.execution))?;
    let t_len = dataset.len();
    let split = config.split.unwrap_or(t_len);
    let train = rec.stage("split", |_| {
        if split <= dataset.burn_in || split > t_len {
            return Err(CltmError::InvalidArgument(format!(
                "split {split} must lie in ({}, {t_len}]",
                dataset.burn_in
            )));
        }
        dataset.slice_time(0, split)
    })?;

    let distances = rec.stage("distances", |r| {
        let d = distance_matrix(&train, &config.distances)?;
        r.write("distances.csv", d.to_csv_string().as_bytes())?;
        Ok(d)
    })?;
    let structure = rec.stage("structure", |r| {
        let s = cl_grouping(&distances, &config.structure)?;
        r.write_json("structure.json", &s)?;
        r.write("tree.dot", to_dot(&s).as_bytes())?;
        Ok(s)
    })?;
    let model = rec.stage("em", |r| {
        let (model, trace) = fit_em(&structure, &train, &train.schema, &config.em)?;
        r.write_json("model.json", &model)?;
        let mut csv = Vec::new();
        trace.write_csv(&mut csv)?;
        r.write("em_trace.csv", &csv)?;
        Ok(model)
    })?;
    let baseline = rec.stage("baseline", |r| {
        let b = fit_chain_crf(&train, &config.chain)?;
        r.write_json("chain_crf.json", &b)?;
        Ok(b)
    })?;
    let edge_model = if train.edge_observations.is_some() {
        Some(rec.stage("edges", |r| {
            let em = fit_edge_model(&train, &model, &config.edges)?;
            r.write_json("edge_model.json", &em)?;
            Ok(em)
        })?)
    } else {
        rec.mark("edges", StageStatus::Skipped, None);
        None
    };
    let metrics = rec.stage("predict", |r| {
        let train_m = predict_range(config, &dataset, &model, &baseline, edge_model.as_ref(), dataset.burn_in, split)?;
        r.write_report("metrics_train", &train_m.cltm)?;
        r.write_report("baseline_metrics_train", &train_m.baseline)?;
        let test_m = if split < t_len {
            let m = predict_range(config, &dataset, &model, &baseline, edge_model.as_ref(), split, t_len)?;
            r.write_report("metrics_test", &m.cltm)?;
            r.write_report("baseline_metrics_test", &m.baseline)?;
            Some(m)
        } else {
            None
        };
        let metrics = ExperimentMetrics {
            train: train_m,
            test: test_m,
        };
        r.write_json(METRICS_FILE, &metrics)?;
        Ok(metrics)
    })?;
    Ok((metrics, model, baseline, edge_model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::TreeShape;

    fn small_config(dir: &Path, split: Option<usize>) -> ExperimentConfig {
        ExperimentConfig {
            data: DataSource::Synthetic(SyntheticSpec {
                shape: TreeShape {
                    n_observed: 5,
                    n_hidden: 1,
                    ..TreeShape::default()
                },
                time_steps: 300,
                seed: 4,
                ..SyntheticSpec::default()
            }),
            split,
            em: EmConfig {
                max_iterations: 10,
                restarts: 1,
                ..EmConfig::default()
            },
            samples: 20,
            output_dir: dir.to_path_buf(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn writes_artifacts_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&small_config(dir.path(), Some(200))).unwrap();
        assert!(out.manifest.succeeded);
        for f in ["model.json", "tree.dot", "metrics.json", "metrics_test.csv", "em_trace.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
            assert!(out.manifest.outputs.contains_key(f), "{f}");
        }
        assert!(dir.path().join(MANIFEST_FILE).exists());
        assert_eq!(out.metrics.test.as_ref().unwrap().start, 200);
    }

    #[test]
    fn train_only_when_split_at_end() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&small_config(dir.path(), None)).unwrap();
        assert!(out.metrics.test.is_none());
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap()).unwrap();
        assert!(json["test"].is_null());
    }

    #[test]
    fn failure_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_experiment(&small_config(dir.path(), Some(1))).unwrap_err();
        assert!(matches!(err, CltmError::Stage { ref stage, .. } if stage == "split"));
        let m = Manifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(!m.succeeded);
        assert_eq!(m.stages.last().unwrap().status, StageStatus::Failed);
    }
}
