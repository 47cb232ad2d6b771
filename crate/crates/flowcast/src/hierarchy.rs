//! Hierarchy and group structure: the summing matrix and node index.
//!
//! A collection of series is organized as a hierarchy (levels that partition
//! the bottom series, coarse to fine) plus group attributes that cut across
//! it. Every node is a sum of bottom-level series; the binary summing matrix
//! S encodes which ones, so that the full node vector is `y = S * b` for a
//! bottom vector `b`.
//!
//! Node rows are ordered: total, hierarchy levels top-down, attributes,
//! crossings (in declared order), bottom. The ordering is fixed so that
//! serialized outputs are reproducible; reconciliation itself does not
//! depend on it.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::ops::Range;

/// One hierarchy level: a named partition of the bottom-level keys.
///
/// `parents` maps each finest-level label to this level's label. `None`
/// means the level's labels are the finest labels themselves (the usual
/// case for the last, finest level).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelSpec {
    pub name: String,
    pub parents: Option<BTreeMap<String, String>>,
}

impl LevelSpec {
    pub fn identity(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            parents: None,
        }
    }

    pub fn mapped(name: impl Into<String>, parents: BTreeMap<String, String>) -> Self {
        Self {
            name: name.into(),
            parents: Some(parents),
        }
    }
}

/// A group attribute with its declared category set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupAttribute {
    pub name: String,
    pub categories: Vec<String>,
}

/// Declarative description of the hierarchy plus group structure.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StructureSpec {
    /// Aggregate hierarchy levels, coarse to fine.
    pub levels: Vec<LevelSpec>,
    /// Group attributes; bottom keys carry one value per attribute, in order.
    pub attributes: Vec<GroupAttribute>,
    /// Two-way aggregation nodes to include, by dimension name
    /// (a dimension is a hierarchy level or an attribute).
    pub crossings: Vec<(String, String)>,
}

/// A bottom-level key: the finest hierarchy label followed by one value per
/// declared group attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BottomKey(pub Vec<String>);

impl BottomKey {
    pub fn new<I, S>(parts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        BottomKey(parts.into_iter().map(Into::into).collect())
    }

    pub fn finest(&self) -> &str {
        &self.0[0]
    }

    /// Joined label used as the node name for this key.
    pub fn label(&self) -> String {
        self.0.join("/")
    }
}

impl fmt::Display for BottomKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// What a node row represents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeTag {
    Total,
    Level {
        level: String,
        label: String,
    },
    Attribute {
        attribute: String,
        value: String,
    },
    Crossing {
        dims: (String, String),
        values: (String, String),
    },
    Bottom {
        key: BottomKey,
    },
}

/// Label-to-row lookup plus per-node tags, aligned with summing-matrix rows.
#[derive(Debug, Clone)]
pub struct NodeIndex {
    position: HashMap<String, usize>,
    tags: Vec<NodeTag>,
}

impl NodeIndex {
    pub fn position(&self, label: &str) -> Option<usize> {
        self.position.get(label).copied()
    }

    pub fn tag(&self, row: usize) -> &NodeTag {
        &self.tags[row]
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// The binary summing matrix S with its node labels and block layout.
///
/// Aggregate rows are stored sparsely as sorted lists of bottom-column
/// indices; the bottom block is an implicit identity.
#[derive(Debug, Clone)]
pub struct SummingMatrix {
    /// Child bottom-column indices per aggregate row (n - m rows).
    aggregate_rows: Vec<Vec<u32>>,
    node_labels: Vec<String>,
    bottom_labels: Vec<String>,
    /// Named row blocks in order: total, levels, attributes, crossings, bottom.
    blocks: Vec<(String, Range<usize>)>,
    index: NodeIndex,
}

impl SummingMatrix {
    /// Total number of nodes (rows).
    pub fn n(&self) -> usize {
        self.node_labels.len()
    }

    /// Number of bottom-level series (columns).
    pub fn m(&self) -> usize {
        self.bottom_labels.len()
    }

    /// Number of aggregate (non-bottom) rows, `n - m`.
    pub fn n_aggregate(&self) -> usize {
        self.aggregate_rows.len()
    }

    pub fn node_labels(&self) -> &[String] {
        &self.node_labels
    }

    pub fn bottom_labels(&self) -> &[String] {
        &self.bottom_labels
    }

    pub fn index(&self) -> &NodeIndex {
        &self.index
    }

    /// Named row blocks with their row ranges, in row order.
    pub fn blocks(&self) -> &[(String, Range<usize>)] {
        &self.blocks
    }

    /// Block name containing the given row.
    pub fn block_of(&self, row: usize) -> &str {
        self.blocks
            .iter()
            .find(|(_, r)| r.contains(&row))
            .map(|(name, _)| name.as_str())
            .expect("row within matrix")
    }

    /// Bottom-column indices summed by an aggregate row.
    pub fn children(&self, aggregate_row: usize) -> &[u32] {
        &self.aggregate_rows[aggregate_row]
    }

    /// Dense n x m copy of S.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut s = DMatrix::zeros(n, m);
        for (row, children) in self.aggregate_rows.iter().enumerate() {
            for &c in children {
                s[(row, c as usize)] = 1.0;
            }
        }
        let offset = self.n_aggregate();
        for j in 0..m {
            s[(offset + j, j)] = 1.0;
        }
        s
    }

    /// Computes `y = S * b` exactly by summing bottom entries per node.
    ///
    /// Sums of integer-valued inputs stay integer-valued. A missing (NaN)
    /// bottom entry propagates to every ancestor that includes it.
    pub fn aggregate(&self, bottom: &[f64]) -> Result<Vec<f64>> {
        if bottom.len() != self.m() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} bottom values", self.m()),
                actual: format!("{}", bottom.len()),
            });
        }
        let mut y = Vec::with_capacity(self.n());
        for children in &self.aggregate_rows {
            y.push(children.iter().map(|&c| bottom[c as usize]).sum());
        }
        y.extend_from_slice(bottom);
        Ok(y)
    }

    /// Max-norm of `y_aggregate - S * y_bottom`: zero iff `y` is coherent.
    pub fn coherence_residual(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} node values", self.n()),
                actual: format!("{}", y.len()),
            });
        }
        let bottom = &y[self.n_aggregate()..];
        let mut worst = 0.0f64;
        for (row, children) in self.aggregate_rows.iter().enumerate() {
            let sum: f64 = children.iter().map(|&c| bottom[c as usize]).sum();
            worst = worst.max((y[row] - sum).abs());
        }
        Ok(worst)
    }
}

/// Dimension kinds a crossing may reference.
enum Dimension<'a> {
    Level(&'a LevelSpec),
    Attribute(usize),
}

/// Builds the summing matrix and node index for a structure over the given
/// bottom keys.
///
/// Level, attribute, and crossing nodes are enumerated from the values
/// actually observed in `bottom_keys`; declared attribute categories act as
/// a validation domain. Bottom columns keep the input key order.
pub fn build_summing_matrix(spec: &StructureSpec, bottom_keys: &[BottomKey]) -> Result<SummingMatrix> {
    if bottom_keys.is_empty() {
        return Err(Error::EmptyBottom);
    }
    let n_attrs = spec.attributes.len();
    let key_len = 1 + n_attrs;

    let mut seen = HashSet::with_capacity(bottom_keys.len());
    for key in bottom_keys {
        if key.0.len() != key_len {
            return Err(Error::InvalidInput(format!(
                "bottom key {:?} has {} parts, expected {} (finest label + {} attribute values)",
                key.label(),
                key.0.len(),
                key_len,
                n_attrs
            )));
        }
        if !seen.insert(key) {
            return Err(Error::DuplicateBottomKey(key.label()));
        }
        for (a, attr) in spec.attributes.iter().enumerate() {
            let value = &key.0[1 + a];
            if !attr.categories.contains(value) {
                return Err(Error::UnknownCategory {
                    key: key.label(),
                    dimension: attr.name.clone(),
                    value: value.clone(),
                });
            }
        }
        for level in &spec.levels {
            if let Some(parents) = &level.parents {
                if !parents.contains_key(key.finest()) {
                    return Err(Error::OrphanKey {
                        key: key.label(),
                        level: level.name.clone(),
                    });
                }
            }
        }
    }

    // Levels must refine each other coarse to fine.
    for pair in spec.levels.windows(2) {
        let (coarse, fine) = (&pair[0], &pair[1]);
        let mut fine_to_coarse: HashMap<&str, &str> = HashMap::new();
        for key in bottom_keys {
            let f = level_label(fine, key);
            let c = level_label(coarse, key);
            if let Some(prev) = fine_to_coarse.insert(f, c) {
                if prev != c {
                    return Err(Error::InvalidInput(format!(
                        "level {:?} does not refine {:?}: label {:?} spans {:?} and {:?}",
                        fine.name, coarse.name, f, prev, c
                    )));
                }
            }
        }
    }

    // Resolve crossing dimensions and reject duplicates (unordered).
    let mut crossing_dims = Vec::with_capacity(spec.crossings.len());
    let mut crossing_seen: HashSet<(String, String)> = HashSet::new();
    for (a, b) in &spec.crossings {
        if a == b {
            return Err(Error::InvalidInput(format!(
                "crossing pairs a dimension with itself: {a:?}"
            )));
        }
        let norm = if a <= b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        };
        if !crossing_seen.insert(norm) {
            return Err(Error::DuplicateCrossing(a.clone(), b.clone()));
        }
        crossing_dims.push((resolve_dimension(spec, a)?, resolve_dimension(spec, b)?));
    }

    let mut labels = Vec::new();
    let mut tags = Vec::new();
    let mut aggregate_rows: Vec<Vec<u32>> = Vec::new();
    let mut blocks = Vec::new();
    let mut push_block = |name: String,
                          start: usize,
                          labels: &Vec<String>,
                          blocks: &mut Vec<(String, Range<usize>)>| {
        blocks.push((name, start..labels.len()));
    };

    // Total row sums everything.
    labels.push("Total".to_string());
    tags.push(NodeTag::Total);
    aggregate_rows.push((0..bottom_keys.len() as u32).collect());
    push_block("total".into(), 0, &labels, &mut blocks);

    // Hierarchy levels, coarse to fine.
    for level in &spec.levels {
        let start = labels.len();
        let mut members: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
        for (j, key) in bottom_keys.iter().enumerate() {
            members.entry(level_label(level, key)).or_default().push(j as u32);
        }
        for (label, children) in members {
            labels.push(format!("{}:{}", level.name, label));
            tags.push(NodeTag::Level {
                level: level.name.clone(),
                label: label.to_string(),
            });
            aggregate_rows.push(children);
        }
        push_block(level.name.clone(), start, &labels, &mut blocks);
    }

    // Group attributes, values in declared category order.
    for (a, attr) in spec.attributes.iter().enumerate() {
        let start = labels.len();
        let mut members: HashMap<&str, Vec<u32>> = HashMap::new();
        for (j, key) in bottom_keys.iter().enumerate() {
            members.entry(key.0[1 + a].as_str()).or_default().push(j as u32);
        }
        for value in &attr.categories {
            if let Some(children) = members.remove(value.as_str()) {
                labels.push(format!("{}:{}", attr.name, value));
                tags.push(NodeTag::Attribute {
                    attribute: attr.name.clone(),
                    value: value.clone(),
                });
                aggregate_rows.push(children);
            }
        }
        push_block(attr.name.clone(), start, &labels, &mut blocks);
    }

    // Two-way crossings, in declared order; observed value pairs only.
    for ((dim_a, dim_b), (name_a, name_b)) in crossing_dims.iter().zip(&spec.crossings) {
        let start = labels.len();
        let mut members: BTreeMap<(String, String), Vec<u32>> = BTreeMap::new();
        for (j, key) in bottom_keys.iter().enumerate() {
            let va = dimension_value(dim_a, key).to_string();
            let vb = dimension_value(dim_b, key).to_string();
            members.entry((va, vb)).or_default().push(j as u32);
        }
        for ((va, vb), children) in members {
            labels.push(format!("{name_a}:{va}|{name_b}:{vb}"));
            tags.push(NodeTag::Crossing {
                dims: (name_a.clone(), name_b.clone()),
                values: (va, vb),
            });
            aggregate_rows.push(children);
        }
        push_block(format!("{name_a} x {name_b}"), start, &labels, &mut blocks);
    }

    // Bottom block, in input key order.
    let start = labels.len();
    let mut bottom_labels = Vec::with_capacity(bottom_keys.len());
    for key in bottom_keys {
        let label = key.label();
        labels.push(label.clone());
        bottom_labels.push(label);
        tags.push(NodeTag::Bottom { key: key.clone() });
    }
    push_block("bottom".into(), start, &labels, &mut blocks);

    let mut position = HashMap::with_capacity(labels.len());
    for (row, label) in labels.iter().enumerate() {
        if position.insert(label.clone(), row).is_some() {
            return Err(Error::InvalidInput(format!(
                "node label {label:?} is not unique; rename levels/attributes or keys"
            )));
        }
    }

    Ok(SummingMatrix {
        aggregate_rows,
        node_labels: labels,
        bottom_labels,
        blocks,
        index: NodeIndex { position, tags },
    })
}

fn resolve_dimension<'a>(spec: &'a StructureSpec, name: &str) -> Result<Dimension<'a>> {
    if let Some(level) = spec.levels.iter().find(|l| l.name == name) {
        return Ok(Dimension::Level(level));
    }
    if let Some(pos) = spec.attributes.iter().position(|a| a.name == name) {
        return Ok(Dimension::Attribute(pos));
    }
    Err(Error::UnknownDimension(name.to_string()))
}

fn level_label<'a>(level: &'a LevelSpec, key: &'a BottomKey) -> &'a str {
    match &level.parents {
        Some(parents) => parents
            .get(key.finest())
            .map(String::as_str)
            .unwrap_or(key.finest()),
        None => key.finest(),
    }
}

fn dimension_value<'a>(dim: &'a Dimension<'a>, key: &'a BottomKey) -> &'a str {
    match dim {
        Dimension::Level(level) => level_label(level, key),
        Dimension::Attribute(a) => key.0[1 + *a].as_str(),
    }
}
