use super::dataset::{CovariateSchema, TimeSeriesDataset, VariableMode};
use super::tree::{LatentTreeStructure, ValidationReport, Violation};
use crate::error::{CltmError, Result};

/// Linear potential coefficients.
///
/// `node_weights[k] = [c_0, c_1, ..., c_Kn]` for observed nodes and `[c_0]`
/// for hidden nodes. `edge_weights[e] = [e_0, e_1, ..., e_Ke]` for
/// observed-observed edges and `[e_0]` for hidden-incident edges.
#[derive(Debug, Clone, PartialEq)]
pub struct CltmParameters {
    pub node_weights: Vec<Vec<f64>>,
    pub edge_weights: Vec<Vec<f64>>,
}

impl CltmParameters {
    /// All-zero parameters shaped for `structure` and `schema`.
    pub fn zeros(structure: &LatentTreeStructure, schema: &CovariateSchema) -> Self {
        let node_weights = (0..structure.node_count())
            .map(|k| vec![0.0; node_arity(structure, schema, k) + 1])
            .collect();
        let edge_weights = (0..structure.edge_count())
            .map(|e| vec![0.0; edge_arity(structure, schema, e) + 1])
            .collect();
        CltmParameters {
            node_weights,
            edge_weights,
        }
    }

    pub fn len(&self) -> usize {
        self.node_weights.iter().map(Vec::len).sum::<usize>()
            + self.edge_weights.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node blocks followed by edge blocks.
    pub fn to_flat(&self) -> Vec<f64> {
        self.node_weights
            .iter()
            .chain(self.edge_weights.iter())
            .flatten()
            .copied()
            .collect()
    }

    /// Same shape as `self`, values taken from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), self.len(), "flat parameter length");
        let mut it = flat.iter().copied();
        let mut refill = |blocks: &[Vec<f64>]| -> Vec<Vec<f64>> {
            blocks
                .iter()
                .map(|b| (0..b.len()).map(|_| it.next().unwrap()).collect())
                .collect()
        };
        let node_weights = refill(&self.node_weights);
        let edge_weights = refill(&self.edge_weights);
        CltmParameters {
            node_weights,
            edge_weights,
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.node_weights
            .iter()
            .chain(self.edge_weights.iter())
            .flatten()
            .map(|w| w * w)
            .sum()
    }
}

/// Number of covariates (excluding the intercept) that node `k` carries.
pub fn node_arity(structure: &LatentTreeStructure, schema: &CovariateSchema, k: usize) -> usize {
    if structure.is_hidden(k) {
        0
    } else {
        schema.node_arity()
    }
}

/// Number of shared covariates (excluding the intercept) that edge `e` carries.
pub fn edge_arity(structure: &LatentTreeStructure, schema: &CovariateSchema, e: usize) -> usize {
    if structure.edge_is_hidden_incident(e) {
        0
    } else {
        schema.edge_arity()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CltmModel {
    pub structure: LatentTreeStructure,
    pub schema: CovariateSchema,
    pub parameters: CltmParameters,
    pub mode: VariableMode,
}

impl CltmModel {
    /// Builds a model, rejecting parameter blocks that do not match the
    /// structure and schema. Other invariants are left to [`validate_model`].
    pub fn new(
        structure: LatentTreeStructure,
        schema: CovariateSchema,
        parameters: CltmParameters,
        mode: VariableMode,
    ) -> Result<Self> {
        let model = CltmModel {
            structure,
            schema,
            parameters,
            mode,
        };
        let shape = model.shape_violations();
        if let Some(v) = shape.first() {
            return Err(CltmError::InvalidModel(v.to_string()));
        }
        Ok(model)
    }

    /// A model with all coefficients zero.
    pub fn zeros(structure: LatentTreeStructure, schema: CovariateSchema) -> Self {
        let parameters = CltmParameters::zeros(&structure, &schema);
        CltmModel {
            structure,
            schema,
            parameters,
            mode: VariableMode::Binary,
        }
    }

    fn shape_violations(&self) -> Vec<Violation> {
        let s = &self.structure;
        let p = &self.parameters;
        let mut out = Vec::new();
        if p.node_weights.len() != s.node_count() {
            out.push(Violation::ParameterShape(format!(
                "{} node weight vectors for {} nodes",
                p.node_weights.len(),
                s.node_count()
            )));
        } else {
            for (k, w) in p.node_weights.iter().enumerate() {
                let want = node_arity(s, &self.schema, k) + 1;
                if w.len() != want {
                    out.push(Violation::ParameterShape(format!(
                        "node `{}` has {} coefficients, expected {want}",
                        s.nodes()[k].id,
                        w.len()
                    )));
                }
            }
        }
        if p.edge_weights.len() != s.edge_count() {
            out.push(Violation::ParameterShape(format!(
                "{} edge weight vectors for {} edges",
                p.edge_weights.len(),
                s.edge_count()
            )));
        } else {
            for (k, w) in p.edge_weights.iter().enumerate() {
                let e = s.edges()[k];
                let (u, v) = (s.nodes()[e.u].id.clone(), s.nodes()[e.v].id.clone());
                if s.edge_is_hidden_incident(k) && w.len() != 1 {
                    out.push(Violation::HiddenEdgeCovariates {
                        u,
                        v,
                        arity: w.len().saturating_sub(1),
                    });
                } else if !s.edge_is_hidden_incident(k) && w.len() != self.schema.edge_arity() + 1 {
                    out.push(Violation::ParameterShape(format!(
                        "edge `{u}`-`{v}` has {} coefficients, expected {}",
                        w.len(),
                        self.schema.edge_arity() + 1
                    )));
                }
            }
        }
        out
    }

    /// Maps each structure node to the dataset column holding it (by id);
    /// hidden nodes map to `None`. Every dataset column must be covered.
    pub fn column_binding(&self, dataset: &TimeSeriesDataset) -> Result<Vec<Option<usize>>> {
        let mut binding = Vec::with_capacity(self.structure.node_count());
        let mut covered = vec![false; dataset.n()];
        for node in self.structure.nodes() {
            if node.kind == super::VariableKind::Hidden {
                binding.push(None);
                continue;
            }
            let col = dataset.column_of(&node.id).ok_or_else(|| {
                CltmError::SchemaMismatch(format!("observed node `{}` is not a dataset column", node.id))
            })?;
            covered[col] = true;
            binding.push(Some(col));
        }
        if let Some(c) = covered.iter().position(|&c| !c) {
            return Err(CltmError::SchemaMismatch(format!(
                "dataset column `{}` has no node in the structure",
                dataset.node_ids[c]
            )));
        }
        if dataset.schema != self.schema {
            return Err(CltmError::SchemaMismatch(
                "dataset covariate schema differs from the model schema".into(),
            ));
        }
        Ok(binding)
    }
}

/// Lists every violated structural or parametric invariant of `model`.
/// An empty report means the model is well formed.
pub fn validate_model(model: &CltmModel) -> ValidationReport {
    let mut violations = model.structure.structural_violations();
    for (group, name) in model.schema.duplicates() {
        violations.push(Violation::DuplicateCovariate { group, name });
    }
    violations.extend(model.shape_violations());
    let s = &model.structure;
    for (k, w) in model.parameters.node_weights.iter().enumerate() {
        if let Some(p) = w.iter().position(|x| !x.is_finite()) {
            let id = s.nodes().get(k).map_or("?", |n| n.id.as_str());
            violations.push(Violation::NonFiniteCoefficient(format!("node `{id}` coefficient {p}")));
        }
    }
    for (k, w) in model.parameters.edge_weights.iter().enumerate() {
        if let Some(p) = w.iter().position(|x| !x.is_finite()) {
            violations.push(Violation::NonFiniteCoefficient(format!("edge #{k} coefficient {p}")));
        }
    }
    ValidationReport { violations }
}
