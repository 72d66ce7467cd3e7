//! JSON forms of [`LatentTreeStructure`] and [`CltmModel`].
//!
//! Nodes are `{"id", "kind"}`, edges are `{"u", "v", "length"}` with node ids
//! as endpoints, and weights are objects keyed by covariate name (the
//! intercept under `"bias"`). Floats are written in shortest round-trip form,
//! so decoding reproduces every value bit for bit.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::dataset::{CovariateSchema, VariableMode, BIAS};
use super::params::{CltmModel, CltmParameters};
use super::tree::{Edge, LatentTreeStructure, Node};
use crate::error::{CltmError, Result};

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    u: String,
    v: String,
    length: f64,
}

#[derive(Serialize, Deserialize)]
struct StructureJson {
    nodes: Vec<Node>,
    edges: Vec<EdgeJson>,
}

impl From<&LatentTreeStructure> for StructureJson {
    fn from(s: &LatentTreeStructure) -> Self {
        StructureJson {
            nodes: s.nodes().to_vec(),
            edges: s
                .edges()
                .iter()
                .map(|e| EdgeJson {
                    u: s.nodes()[e.u].id.clone(),
                    v: s.nodes()[e.v].id.clone(),
                    length: e.length,
                })
                .collect(),
        }
    }
}

impl TryFrom<StructureJson> for LatentTreeStructure {
    type Error = CltmError;

    fn try_from(j: StructureJson) -> Result<Self> {
        let position = |id: &str| {
            j.nodes
                .iter()
                .position(|n| n.id == id)
                .ok_or_else(|| CltmError::UnknownNode(id.to_string()))
        };
        let edges = j
            .edges
            .iter()
            .map(|e| Ok(Edge::new(position(&e.u)?, position(&e.v)?, e.length)))
            .collect::<Result<Vec<_>>>()?;
        LatentTreeStructure::new(j.nodes, edges)
    }
}

impl Serialize for LatentTreeStructure {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        StructureJson::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LatentTreeStructure {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let j = StructureJson::deserialize(deserializer)?;
        LatentTreeStructure::try_from(j).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct NodeWeightsJson {
    node: String,
    weights: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct EdgeWeightsJson {
    u: String,
    v: String,
    weights: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    variable_mode: VariableMode,
    schema: CovariateSchema,
    structure: LatentTreeStructure,
    node_weights: Vec<NodeWeightsJson>,
    edge_weights: Vec<EdgeWeightsJson>,
}

fn named(values: &[f64], names: &[String]) -> BTreeMap<String, f64> {
    std::iter::once(BIAS.to_string())
        .chain(names.iter().cloned())
        .zip(values.iter().copied())
        .collect()
}

fn unnamed(map: &BTreeMap<String, f64>, names: &[String], owner: &str) -> Result<Vec<f64>> {
    if map.len() != names.len() + 1 {
        return Err(CltmError::SchemaMismatch(format!(
            "`{owner}` has {} weights, expected {}",
            map.len(),
            names.len() + 1
        )));
    }
    std::iter::once(BIAS)
        .chain(names.iter().map(String::as_str))
        .map(|name| {
            map.get(name).copied().ok_or_else(|| {
                CltmError::SchemaMismatch(format!("`{owner}` is missing weight `{name}`"))
            })
        })
        .collect()
}

impl From<&CltmModel> for ModelJson {
    fn from(m: &CltmModel) -> Self {
        let s = &m.structure;
        let node_names: Vec<String> = m.schema.node_covariates.iter().map(|c| c.name.clone()).collect();
        let edge_names: Vec<String> = m.schema.edge_covariates.iter().map(|c| c.name.clone()).collect();
        let node_weights = m
            .parameters
            .node_weights
            .iter()
            .enumerate()
            .map(|(k, w)| NodeWeightsJson {
                node: s.nodes()[k].id.clone(),
                weights: named(w, if s.is_hidden(k) { &[] } else { &node_names }),
            })
            .collect();
        let edge_weights = m
            .parameters
            .edge_weights
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let e = s.edges()[k];
                EdgeWeightsJson {
                    u: s.nodes()[e.u].id.clone(),
                    v: s.nodes()[e.v].id.clone(),
                    weights: named(w, if s.edge_is_hidden_incident(k) { &[] } else { &edge_names }),
                }
            })
            .collect();
        ModelJson {
            variable_mode: m.mode,
            schema: m.schema.clone(),
            structure: s.clone(),
            node_weights,
            edge_weights,
        }
    }
}

impl TryFrom<ModelJson> for CltmModel {
    type Error = CltmError;

    fn try_from(j: ModelJson) -> Result<Self> {
        let s = &j.structure;
        let node_names: Vec<String> = j.schema.node_covariates.iter().map(|c| c.name.clone()).collect();
        let edge_names: Vec<String> = j.schema.edge_covariates.iter().map(|c| c.name.clone()).collect();

        let mut node_weights = vec![None; s.node_count()];
        for nw in &j.node_weights {
            let k = s.index_of(&nw.node)?;
            let names = if s.is_hidden(k) { &[][..] } else { &node_names[..] };
            node_weights[k] = Some(unnamed(&nw.weights, names, &nw.node)?);
        }
        let node_weights = node_weights
            .into_iter()
            .enumerate()
            .map(|(k, w)| {
                w.ok_or_else(|| {
                    CltmError::SchemaMismatch(format!("no weights for node `{}`", s.nodes()[k].id))
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut edge_weights = vec![None; s.edge_count()];
        for ew in &j.edge_weights {
            let (u, v) = (s.index_of(&ew.u)?, s.index_of(&ew.v)?);
            let k = s
                .edges()
                .iter()
                .position(|e| (e.u, e.v) == (u, v) || (e.u, e.v) == (v, u))
                .ok_or_else(|| CltmError::UnknownNode(format!("edge `{}`-`{}`", ew.u, ew.v)))?;
            let names = if s.edge_is_hidden_incident(k) { &[][..] } else { &edge_names[..] };
            edge_weights[k] = Some(unnamed(&ew.weights, names, &format!("{}-{}", ew.u, ew.v))?);
        }
        let edge_weights = edge_weights
            .into_iter()
            .enumerate()
            .map(|(k, w)| w.ok_or_else(|| CltmError::SchemaMismatch(format!("no weights for edge #{k}"))))
            .collect::<Result<Vec<_>>>()?;

        CltmModel::new(
            j.structure,
            j.schema,
            CltmParameters {
                node_weights,
                edge_weights,
            },
            j.variable_mode,
        )
    }
}

impl Serialize for CltmModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ModelJson::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CltmModel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let j = ModelJson::deserialize(deserializer)?;
        CltmModel::try_from(j).map_err(serde::de::Error::custom)
    }
}
