use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::edges::EdgePrediction;
use super::PredictionBatch;
use crate::error::{CltmError, Result};
use crate::model::{pair_count, pair_index, TimeSeriesDataset};

/// How CP/CA/EP/EA are normalized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by `nM` (nodes) and `eM` (edges, `e = n(n-1)/2`).
    #[default]
    Total,
    /// Divide CP by `M` times the number of active nodes, CA by `M` times
    /// the number of inactive nodes (and likewise for edges over the true
    /// present/absent pairs).
    ActiveCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeScore {
    pub t: usize,
    pub cp: f64,
    pub ca: f64,
    /// No node was active at `t`; CP is 0 by convention.
    pub cp_vacuous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeScore {
    pub t: usize,
    pub ep: f64,
    pub ea: f64,
    /// No edge was present at `t`; EP is 0 by convention.
    pub ep_vacuous: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Conditional presence and absence of the node predictions.
pub fn score_nodes(
    predictions: &[PredictionBatch],
    truth: &TimeSeriesDataset,
    normalization: Normalization,
) -> Result<Vec<NodeScore>> {
    predictions
        .iter()
        .map(|b| {
            if b.t >= truth.len() {
                return Err(CltmError::OutOfRange(format!("prediction at t = {} beyond the data", b.t)));
            }
            let n = truth.n();
            if b.samples.iter().any(|s| s.len() != n) {
                return Err(CltmError::LengthMismatch(format!(
                    "prediction at t = {} does not cover the {n} dataset nodes",
                    b.t
                )));
            }
            let m = b.samples.len();
            let y: Vec<u8> = (0..n).map(|i| truth.state(b.t, i)).collect();
            let (mut hit1, mut hit0) = (0, 0);
            for s in &b.samples {
                for (yi, si) in y.iter().zip(s) {
                    match (*yi, *si) {
                        (1, 1) => hit1 += 1,
                        (0, 0) => hit0 += 1,
                        _ => {}
                    }
                }
            }
            let active = y.iter().filter(|&&v| v == 1).count();
            let (cp, ca) = match normalization {
                Normalization::Total => (ratio(hit1, n * m), ratio(hit0, n * m)),
                Normalization::ActiveCount => (ratio(hit1, active * m), ratio(hit0, (n - active) * m)),
            };
            Ok(NodeScore {
                t: b.t,
                cp,
                ca,
                cp_vacuous: active == 0,
            })
        })
        .collect()
}

/// Conditional presence and absence of the edge predictions, summed over the
/// pairs inside each predicted node set.
pub fn score_edges(
    predictions: &[EdgePrediction],
    truth: &TimeSeriesDataset,
    normalization: Normalization,
) -> Result<Vec<EdgeScore>> {
    let w = truth
        .edge_observations
        .as_ref()
        .ok_or_else(|| CltmError::Empty("dataset has no edge observations".into()))?;
    let n = truth.n();
    let e = pair_count(n);
    predictions
        .iter()
        .map(|p| {
            if p.t >= truth.len() {
                return Err(CltmError::OutOfRange(format!("edge prediction at t = {} beyond the data", p.t)));
            }
            let m = p.m;
            let (mut hit1, mut hit0) = (0, 0);
            for (&(i, j), draws) in p.pairs.iter().zip(&p.samples) {
                if i >= j || j >= n || draws.len() != m {
                    return Err(CltmError::LengthMismatch(format!("malformed edge prediction at t = {}", p.t)));
                }
                let truth_ij = w[[p.t, pair_index(n, i, j)]];
                for &d in draws {
                    match (truth_ij, d) {
                        (1, 1) => hit1 += 1,
                        (0, 0) => hit0 += 1,
                        _ => {}
                    }
                }
            }
            let present = w.row(p.t).iter().filter(|&&v| v == 1).count();
            let (ep, ea) = match normalization {
                Normalization::Total => (ratio(hit1, e * m), ratio(hit0, e * m)),
                Normalization::ActiveCount => (ratio(hit1, present * m), ratio(hit0, (e - present) * m)),
            };
            Ok(EdgeScore {
                t: p.t,
                ep,
                ea,
                ep_vacuous: present == 0,
            })
        })
        .collect()
}

/// `(RDA, RDM)`: relative difference of the sums and of the medians.
pub fn relative_differences(model: &[f64], baseline: &[f64]) -> Result<(f64, f64)> {
    if model.len() != baseline.len() {
        return Err(CltmError::LengthMismatch(format!(
            "series of length {} and {}",
            model.len(),
            baseline.len()
        )));
    }
    if model.is_empty() {
        return Err(CltmError::UndefinedMetric("empty series".into()));
    }
    let (sm, sb): (f64, f64) = (model.iter().sum(), baseline.iter().sum());
    if sb == 0.0 {
        return Err(CltmError::UndefinedMetric("baseline sum is zero".into()));
    }
    let (mm, mb) = (median(model), median(baseline));
    if mb == 0.0 {
        return Err(CltmError::UndefinedMetric("baseline median is zero".into()));
    }
    Ok(((sm - sb) / sb, (mm - mb) / mb))
}

/// Median; the mean of the two middle values for even lengths.
fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub t: usize,
    #[serde(rename = "CP")]
    pub cp: f64,
    #[serde(rename = "CA")]
    pub ca: f64,
    #[serde(rename = "EP")]
    pub ep: Option<f64>,
    #[serde(rename = "EA")]
    pub ea: Option<f64>,
    pub cp_vacuous: bool,
    pub ep_vacuous: Option<bool>,
}

/// RDA/RDM of one metric against a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub metric: String,
    pub baseline: String,
    /// `None` when a baseline denominator is zero.
    pub rda: Option<f64>,
    pub rdm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub normalization: Normalization,
    pub rows: Vec<MetricsRow>,
    pub summary: Vec<ComparisonSummary>,
}

impl MetricsReport {
    pub fn new(
        model: impl Into<String>,
        normalization: Normalization,
        nodes: &[NodeScore],
        edges: Option<&[EdgeScore]>,
    ) -> Result<Self> {
        if let Some(e) = edges {
            if e.len() != nodes.len() || e.iter().zip(nodes).any(|(a, b)| a.t != b.t) {
                return Err(CltmError::LengthMismatch("node and edge scores are not aligned".into()));
            }
        }
        let rows = nodes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let e = edges.map(|e| e[i]);
                MetricsRow {
                    t: s.t,
                    cp: s.cp,
                    ca: s.ca,
                    ep: e.map(|e| e.ep),
                    ea: e.map(|e| e.ea),
                    cp_vacuous: s.cp_vacuous,
                    ep_vacuous: e.map(|e| e.ep_vacuous),
                }
            })
            .collect();
        Ok(MetricsReport {
            model: model.into(),
            normalization,
            rows,
            summary: Vec::new(),
        })
    }

    pub fn series(&self, metric: &str) -> Option<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| match metric {
                "CP" => Some(r.cp),
                "CA" => Some(r.ca),
                "EP" => r.ep,
                "EA" => r.ea,
                _ => None,
            })
            .collect()
    }

    /// Appends RDA/RDM of `metric` against `baseline`. Errors when the series
    /// are missing or misaligned; a zero denominator is recorded as `None`.
    pub fn compare(&mut self, baseline: &MetricsReport, metric: &str) -> Result<ComparisonSummary> {
        let (a, b) = match (self.series(metric), baseline.series(metric)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(CltmError::UndefinedMetric(format!("metric {metric} missing from a report"))),
        };
        if self.rows.iter().zip(&baseline.rows).any(|(x, y)| x.t != y.t) {
            return Err(CltmError::LengthMismatch("reports cover different time points".into()));
        }
        if a.is_empty() {
            return Err(CltmError::UndefinedMetric("empty series".into()));
        }
        let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        let (ma, mb) = (median(&a), median(&b));
        let rda = (sb != 0.0).then(|| (sa - sb) / sb);
        let rdm = (mb != 0.0).then(|| (ma - mb) / mb);
        let s = ComparisonSummary {
            metric: metric.into(),
            baseline: baseline.model.clone(),
            rda,
            rdm,
        };
        self.summary.push(s.clone());
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Columns `t,CP,CA,EP,EA`; EP/EA are empty when edges were not scored.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "CP", "CA", "EP", "EA"])?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([r.t.to_string(), r.cp.to_string(), r.ca.to_string(), opt(r.ep), opt(r.ea)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_files(&self, json: &Path, csv: &Path) -> Result<()> {
        std::fs::write(json, self.to_json()?)?;
        self.write_csv(std::fs::File::create(csv)?)
    }
}
