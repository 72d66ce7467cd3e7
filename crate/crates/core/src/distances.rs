//! Information distances between observed series.
//!
//! For binary series the distance is `-ln(|det J| / sqrt(det M_i det M_j))`
//! with `J` the 2x2 joint table and `M` the diagonal marginal matrices; for
//! Gaussian series it is `-ln |corr|`. Both are additive along the paths of
//! a latent tree that generated the data. The conditional variant averages
//! per-covariate-state distances weighted by the empirical frequency of the
//! joint covariate state.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{CltmError, Result};
use crate::exec::Execution;
use crate::model::{pairs, TimeSeriesDataset, VariableMode};

/// Distance assigned to (near-)independent pairs.
pub const D_MAX: f64 = 25.0;
/// `|det J|` (or `|corr|`) at or below this value clamps to [`D_MAX`].
pub const DET_FLOOR: f64 = 1e-12;
pub const DEFAULT_SMOOTHING: f64 = 0.5;
/// Covariate states observed fewer times than this fall back to the
/// unconditional distance of the pair.
pub const MIN_STATE_SAMPLES: usize = 5;

/// Normalized 2x2 joint distribution of two binary variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub joint: [[f64; 2]; 2],
}

impl JointTable {
    /// Normalizes nonnegative cell weights.
    pub fn from_weights(w: [[f64; 2]; 2]) -> Result<Self> {
        let total: f64 = w.iter().flatten().sum();
        if w.iter().flatten().any(|x| !(x.is_finite() && *x >= 0.0)) || total <= 0.0 {
            return Err(CltmError::InvalidArgument(format!("invalid joint weights {w:?}")));
        }
        Ok(JointTable {
            joint: w.map(|row| row.map(|x| x / total)),
        })
    }

    pub fn row_marginal(&self) -> [f64; 2] {
        [self.joint[0][0] + self.joint[0][1], self.joint[1][0] + self.joint[1][1]]
    }

    pub fn col_marginal(&self) -> [f64; 2] {
        [self.joint[0][0] + self.joint[1][0], self.joint[0][1] + self.joint[1][1]]
    }

    pub fn det(&self) -> f64 {
        self.joint[0][0] * self.joint[1][1] - self.joint[0][1] * self.joint[1][0]
    }

    pub fn transpose(&self) -> Self {
        let j = self.joint;
        JointTable {
            joint: [[j[0][0], j[1][0]], [j[0][1], j[1][1]]],
        }
    }
}

/// `J[a][b] = (count(i=a, j=b) + smoothing) / (T + 4 smoothing)`.
pub fn empirical_joint(series_i: &[u8], series_j: &[u8], smoothing: f64) -> Result<JointTable> {
    if series_i.len() != series_j.len() {
        return Err(CltmError::LengthMismatch(format!(
            "series of length {} and {}",
            series_i.len(),
            series_j.len()
        )));
    }
    if series_i.is_empty() {
        return Err(CltmError::Empty("series".into()));
    }
    if !(smoothing.is_finite() && smoothing >= 0.0) {
        return Err(CltmError::InvalidArgument(format!("smoothing {smoothing}")));
    }
    let mut counts = [[0usize; 2]; 2];
    for (&a, &b) in series_i.iter().zip(series_j) {
        counts[usize::from(a != 0)][usize::from(b != 0)] += 1;
    }
    let denom = series_i.len() as f64 + 4.0 * smoothing;
    Ok(JointTable {
        joint: counts.map(|row| row.map(|c| (c as f64 + smoothing) / denom)),
    })
}

/// `-ln(|det J| / sqrt(det M_i det M_j))`, clamped to [`D_MAX`].
pub fn discrete_distance(joint: &JointTable) -> Result<f64> {
    let (mi, mj) = (joint.row_marginal(), joint.col_marginal());
    if mi.iter().chain(mj.iter()).any(|&p| p <= 0.0) {
        return Err(CltmError::DegenerateMarginal);
    }
    let det = joint.det().abs();
    if det <= DET_FLOOR {
        return Ok(D_MAX);
    }
    // Product taken in a fixed order so swapping the arguments is exact.
    let (pi, pj) = (mi[0] * mi[1], mj[0] * mj[1]);
    let ratio = det / (pi.min(pj) * pi.max(pj)).sqrt();
    Ok((-ratio.ln()).clamp(0.0, D_MAX))
}

/// `-ln(|Cov| / sqrt(Var_i Var_j))`, clamped to [`D_MAX`].
pub fn gaussian_distance(series_i: &[f64], series_j: &[f64]) -> Result<f64> {
    if series_i.len() != series_j.len() {
        return Err(CltmError::LengthMismatch(format!(
            "series of length {} and {}",
            series_i.len(),
            series_j.len()
        )));
    }
    if series_i.len() < 2 {
        return Err(CltmError::Empty("gaussian distance needs at least two points".into()));
    }
    let n = series_i.len() as f64;
    let mean_i = series_i.iter().sum::<f64>() / n;
    let mean_j = series_j.iter().sum::<f64>() / n;
    let (mut cov, mut var_i, mut var_j) = (0.0, 0.0, 0.0);
    for (&a, &b) in series_i.iter().zip(series_j) {
        let (da, db) = (a - mean_i, b - mean_j);
        cov += da * db;
        var_i += da * da;
        var_j += db * db;
    }
    if var_i <= 0.0 || var_j <= 0.0 {
        return Err(CltmError::ZeroVariance);
    }
    let corr = (cov.abs() / (var_i * var_j).sqrt()).min(1.0);
    if corr <= DET_FLOOR {
        return Ok(D_MAX);
    }
    Ok((-corr.ln()).clamp(0.0, D_MAX))
}

/// Per-covariate breakdown of a conditional distance. States are indexed
/// `2 * x_i + x_j`, i.e. `00, 01, 10, 11`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalDistanceSpec {
    pub covariate_index: usize,
    pub state_weights: [f64; 4],
    pub state_distances: [f64; 4],
}

impl ConditionalDistanceSpec {
    pub fn weighted(&self) -> f64 {
        self.state_weights
            .iter()
            .zip(&self.state_distances)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, d)| w * d)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistanceConfig {
    pub mode: VariableMode,
    pub smoothing: f64,
    /// Condition on node covariates; otherwise plain pairwise distances.
    pub conditional: bool,
    /// Covariate columns to condition on; `None` means every binary-domain
    /// node covariate in the schema.
    pub conditioning: Option<Vec<usize>>,
    pub execution: Execution,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        DistanceConfig {
            mode: VariableMode::Binary,
            smoothing: DEFAULT_SMOOTHING,
            conditional: false,
            conditioning: None,
            execution: Execution::default(),
        }
    }
}

fn to_binary(series: &[f64]) -> Vec<u8> {
    series.iter().map(|&v| u8::from(v >= 0.5)).collect()
}

fn unconditional(y_i: &[f64], y_j: &[f64], config: &DistanceConfig) -> Result<f64> {
    match config.mode {
        VariableMode::Binary => {
            discrete_distance(&empirical_joint(&to_binary(y_i), &to_binary(y_j), config.smoothing)?)
        }
        VariableMode::Gaussian => gaussian_distance(y_i, y_j),
    }
}

/// Covariate-conditioned distance between two series.
///
/// `x_i` and `x_j` are `T x K` covariate matrices of the two nodes; the
/// columns listed in `config.conditioning` (all columns when `None`) are
/// read as binary indicators (`>= 0.5` is on). For each column the four
/// joint states partition the time points; each state's distance is computed
/// on its sub-sample and weighted by the state's frequency, and the
/// per-column sums are averaged. With no conditioning columns the result is
/// the unconditional distance.
///
/// The binary per-state distance uses the determinants of the state's joint
/// and marginal tables, i.e. the same form as the unconditional distance
/// restricted to the sub-sample. The Gaussian per-state distance uses the
/// sub-sample's centred covariance and variances, so a constant covariate
/// reproduces the unconditional value exactly.
pub fn conditional_distance(
    y_i: &[f64],
    y_j: &[f64],
    x_i: ArrayView2<f64>,
    x_j: ArrayView2<f64>,
    config: &DistanceConfig,
) -> Result<(f64, Vec<ConditionalDistanceSpec>)> {
    let t = y_i.len();
    if y_j.len() != t || x_i.nrows() != t || x_j.nrows() != t {
        return Err(CltmError::LengthMismatch("series and covariates must share T".into()));
    }
    if x_i.ncols() != x_j.ncols() {
        return Err(CltmError::LengthMismatch("covariate matrices differ in width".into()));
    }
    let columns: Vec<usize> = config
        .conditioning
        .clone()
        .unwrap_or_else(|| (0..x_i.ncols()).collect());
    if let Some(&c) = columns.iter().find(|&&c| c >= x_i.ncols()) {
        return Err(CltmError::OutOfRange(format!("conditioning column {c}")));
    }
    let global = unconditional(y_i, y_j, config)?;
    if columns.is_empty() {
        return Ok((global, Vec::new()));
    }

    let mut specs = Vec::with_capacity(columns.len());
    for &c in &columns {
        let mut members: [Vec<usize>; 4] = Default::default();
        for s in 0..t {
            let a = usize::from(x_i[[s, c]] >= 0.5);
            let b = usize::from(x_j[[s, c]] >= 0.5);
            members[2 * a + b].push(s);
        }
        let mut state_weights = [0.0; 4];
        let mut state_distances = [0.0; 4];
        for (state, idx) in members.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            state_weights[state] = idx.len() as f64 / t as f64;
            // A state holding every point is the unconditional case.
            state_distances[state] = if idx.len() == t || idx.len() < MIN_STATE_SAMPLES {
                global
            } else {
                let sub_i: Vec<f64> = idx.iter().map(|&s| y_i[s]).collect();
                let sub_j: Vec<f64> = idx.iter().map(|&s| y_j[s]).collect();
                match unconditional(&sub_i, &sub_j, config) {
                    Ok(d) => d,
                    Err(CltmError::DegenerateMarginal | CltmError::ZeroVariance) => global,
                    Err(e) => return Err(e),
                }
            };
        }
        specs.push(ConditionalDistanceSpec {
            covariate_index: c,
            state_weights,
            state_distances,
        });
    }
    let total = specs.iter().map(ConditionalDistanceSpec::weighted).sum::<f64>() / specs.len() as f64;
    Ok((total, specs))
}

/// Symmetric matrix of distances between labelled nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    pub values: Array2<f64>,
}

impl DistanceMatrix {
    pub fn new(labels: Vec<String>, values: Array2<f64>) -> Result<Self> {
        let n = labels.len();
        if values.dim() != (n, n) {
            return Err(CltmError::LengthMismatch(format!(
                "{n} labels for a {:?} matrix",
                values.dim()
            )));
        }
        for i in 0..n {
            if values[[i, i]] != 0.0 {
                return Err(CltmError::InvalidArgument(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (values[[i, j]], values[[j, i]]);
                if !(a.is_finite() && a >= 0.0) || a != b {
                    return Err(CltmError::InvalidArgument(format!(
                        "entry ({i}, {j}) is not a symmetric nonnegative distance"
                    )));
                }
            }
        }
        Ok(DistanceMatrix { labels, values })
    }

    /// Labels `0..n` as strings.
    pub fn unlabelled(values: Array2<f64>) -> Result<Self> {
        let labels = (0..values.nrows()).map(|i| i.to_string()).collect();
        DistanceMatrix::new(labels, values)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    /// CSV with a header row and a leading label column; values carry 17
    /// significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("node");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(l);
            for j in 0..self.n() {
                let _ = write!(out, ",{:.16e}", self.values[[i, j]]);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let n = labels.len();
        let mut values = Array2::zeros((n, n));
        let mut rows = 0;
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            if r >= n || record.len() != n + 1 || record[0] != labels[r] {
                return Err(CltmError::Parse {
                    line: r + 2,
                    message: "row label or width does not match the header".into(),
                });
            }
            for j in 0..n {
                values[[r, j]] = record[j + 1].trim().parse().map_err(|e| CltmError::Parse {
                    line: r + 2,
                    message: format!("column {}: {e}", j + 1),
                })?;
            }
            rows += 1;
        }
        if rows != n {
            return Err(CltmError::Parse {
                line: rows + 2,
                message: format!("expected {n} rows, found {rows}"),
            });
        }
        DistanceMatrix::new(labels, values)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    /// Largest four-point-condition defect over all quartets (the gap
    /// between the two largest of the three pair sums) and its quartet.
    pub fn max_four_point_violation(&self) -> Option<(f64, [usize; 4])> {
        let n = self.n();
        let d = |a: usize, b: usize| self.values[[a, b]];
        let mut worst: Option<(f64, [usize; 4])> = None;
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    for e in c + 1..n {
                        let mut sums = [d(a, b) + d(c, e), d(a, c) + d(b, e), d(a, e) + d(b, c)];
                        sums.sort_by(f64::total_cmp);
                        let gap = sums[2] - sums[1];
                        if worst.is_none_or(|(w, _)| gap > w) {
                            worst = Some((gap, [a, b, c, e]));
                        }
                    }
                }
            }
        }
        worst
    }
}

/// Pairwise (optionally covariate-conditioned) distances between all
/// observed nodes of `dataset`.
pub fn distance_matrix(dataset: &TimeSeriesDataset, config: &DistanceConfig) -> Result<DistanceMatrix> {
    let n = dataset.n();
    if n < 3 {
        return Err(CltmError::InvalidArgument(format!("distance matrix needs n >= 3, got {n}")));
    }
    let columns: Vec<Vec<f64>> = (0..n).map(|i| dataset.states.column(i).to_vec()).collect();
    let conditioning = config.conditioning.clone().unwrap_or_else(|| {
        dataset
            .schema
            .node_covariates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.domain == crate::model::CovariateDomain::Binary)
            .map(|(k, _)| k)
            .collect()
    });
    let effective = DistanceConfig {
        conditioning: Some(conditioning),
        ..config.clone()
    };
    let pair_list: Vec<(usize, usize)> = pairs(n).collect();
    let values = config.execution.try_map(pair_list.len(), |p| {
        let (i, j) = pair_list[p];
        let d = if config.conditional {
            let x_i = dataset.node_covariates.slice(ndarray::s![.., i, ..]);
            let x_j = dataset.node_covariates.slice(ndarray::s![.., j, ..]);
            conditional_distance(&columns[i], &columns[j], x_i, x_j, &effective).map(|(d, _)| d)
        } else {
            unconditional(&columns[i], &columns[j], config)
        };
        d.map_err(|e| CltmError::Pair {
            left: dataset.node_ids[i].clone(),
            right: dataset.node_ids[j].clone(),
            source: Box::new(e),
        })
    })?;
    let mut m = Array2::zeros((n, n));
    for (&(i, j), d) in pair_list.iter().zip(values) {
        m[[i, j]] = d;
        m[[j, i]] = d;
    }
    DistanceMatrix::new(dataset.node_ids.clone(), m)
}
