use chrono::NaiveDate;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{CltmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateDomain {
    Binary,
    Real,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub domain: CovariateDomain,
}

impl Covariate {
    pub fn binary(name: impl Into<String>) -> Self {
        Covariate {
            name: name.into(),
            domain: CovariateDomain::Binary,
        }
    }

    pub fn real(name: impl Into<String>) -> Self {
        Covariate {
            name: name.into(),
            domain: CovariateDomain::Real,
        }
    }
}

/// Named node covariates (individual and global, arity `K_n`) and shared
/// pair covariates (arity `K_e`). The intercept is implicit and is not
/// listed here.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    #[serde(default)]
    pub node_covariates: Vec<Covariate>,
    #[serde(default)]
    pub edge_covariates: Vec<Covariate>,
}

/// Key reserved for the intercept in serialized weights.
pub const BIAS: &str = "bias";

impl CovariateSchema {
    pub fn new(node_covariates: Vec<Covariate>, edge_covariates: Vec<Covariate>) -> Self {
        CovariateSchema {
            node_covariates,
            edge_covariates,
        }
    }

    pub fn node_arity(&self) -> usize {
        self.node_covariates.len()
    }

    pub fn edge_arity(&self) -> usize {
        self.edge_covariates.len()
    }

    /// Names that appear twice in a group, or collide with [`BIAS`].
    pub fn duplicates(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        for (group, list) in [("node", &self.node_covariates), ("edge", &self.edge_covariates)] {
            let mut seen = std::collections::HashSet::new();
            for c in list {
                if c.name == BIAS || !seen.insert(c.name.as_str()) {
                    out.push((group, c.name.clone()));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableMode {
    #[default]
    Binary,
    Gaussian,
}

/// Index of the unordered pair `i < j` among `n` nodes in row-major order of
/// the strict upper triangle.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    debug_assert!(j < n && i != j);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// All pairs `(i, j)` with `i < j`, in [`pair_index`] order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

/// Observed node states over time with aligned covariates.
///
/// Arrays are indexed `[t, node]`, `[t, node, covariate]`,
/// `[t, pair, covariate]` and `[t, pair]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub node_ids: Vec<String>,
    pub mode: VariableMode,
    pub states: Array2<f64>,
    pub schema: CovariateSchema,
    pub node_covariates: Array3<f64>,
    pub edge_covariates: Option<Array3<f64>>,
    pub edge_observations: Option<Array2<u8>>,
    pub dates: Option<Vec<NaiveDate>>,
    /// Leading time points whose lagged covariates are undefined.
    pub burn_in: usize,
    /// Set by the covariate builders once the no-lookahead audit has passed.
    pub leakage_audited: bool,
}

impl TimeSeriesDataset {
    /// A dataset with no covariates.
    pub fn from_states(node_ids: Vec<String>, mode: VariableMode, states: Array2<f64>) -> Result<Self> {
        let (t, n) = states.dim();
        let ds = TimeSeriesDataset {
            node_ids,
            mode,
            states,
            schema: CovariateSchema::default(),
            node_covariates: Array3::zeros((t, n, 0)),
            edge_covariates: None,
            edge_observations: None,
            dates: None,
            burn_in: 0,
            leakage_audited: false,
        };
        ds.check()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.states.ncols()
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn pair_count(&self) -> usize {
        pair_count(self.n())
    }

    pub fn column_of(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|x| x == id)
    }

    /// Checks shape agreement and the binary-state invariant.
    pub fn check(&self) -> Result<()> {
        let (t, n) = self.states.dim();
        if self.node_ids.len() != n {
            return Err(CltmError::LengthMismatch(format!(
                "{} node ids for {} state columns",
                self.node_ids.len(),
                n
            )));
        }
        let kn = self.schema.node_arity();
        if self.node_covariates.dim() != (t, n, kn) {
            return Err(CltmError::LengthMismatch(format!(
                "node covariates have shape {:?}, expected ({t}, {n}, {kn})",
                self.node_covariates.dim()
            )));
        }
        let pc = pair_count(n);
        match &self.edge_covariates {
            Some(x) if x.dim() != (t, pc, self.schema.edge_arity()) => {
                return Err(CltmError::LengthMismatch(format!(
                    "edge covariates have shape {:?}, expected ({t}, {pc}, {})",
                    x.dim(),
                    self.schema.edge_arity()
                )))
            }
            None if self.schema.edge_arity() > 0 => {
                return Err(CltmError::SchemaMismatch(
                    "schema declares edge covariates but the dataset has none".into(),
                ))
            }
            _ => {}
        }
        if let Some(w) = &self.edge_observations {
            if w.dim() != (t, pc) {
                return Err(CltmError::LengthMismatch(format!(
                    "edge observations have shape {:?}, expected ({t}, {pc})",
                    w.dim()
                )));
            }
        }
        if let Some(d) = &self.dates {
            if d.len() != t {
                return Err(CltmError::LengthMismatch(format!("{} dates for {t} time points", d.len())));
            }
        }
        if self.mode == VariableMode::Binary {
            if let Some(((ti, i), v)) = self
                .states
                .indexed_iter()
                .find(|(_, &v)| v != 0.0 && v != 1.0)
            {
                return Err(CltmError::InvalidArgument(format!(
                    "binary dataset has state {v} at t={ti}, node `{}`",
                    self.node_ids[i]
                )));
            }
        }
        Ok(())
    }

    /// Binary state of node `i` at `t`.
    pub fn state(&self, t: usize, i: usize) -> u8 {
        u8::from(self.states[[t, i]] >= 0.5)
    }

    /// Restriction to time points `[start, end)`.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Self> {
        use ndarray::s;
        if start > end || end > self.len() {
            return Err(CltmError::OutOfRange(format!(
                "time range {start}..{end} outside 0..{}",
                self.len()
            )));
        }
        Ok(TimeSeriesDataset {
            node_ids: self.node_ids.clone(),
            mode: self.mode,
            states: self.states.slice(s![start..end, ..]).to_owned(),
            schema: self.schema.clone(),
            node_covariates: self.node_covariates.slice(s![start..end, .., ..]).to_owned(),
            edge_covariates: self
                .edge_covariates
                .as_ref()
                .map(|x| x.slice(s![start..end, .., ..]).to_owned()),
            edge_observations: self
                .edge_observations
                .as_ref()
                .map(|x| x.slice(s![start..end, ..]).to_owned()),
            dates: self.dates.as_ref().map(|d| d[start..end].to_vec()),
            burn_in: self.burn_in.saturating_sub(start),
            leakage_audited: self.leakage_audited,
        })
    }
}
