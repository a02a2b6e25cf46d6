//! Hierarchical conditional search spaces.
//!
//! A space is a tree of parameter nodes. An `int` node with a submodule
//! repeats its children once per index below its sampled value; a `choice`
//! node with a submodule activates only the branch keyed by the chosen value.
//! Everything downstream (sampling, encoding, enumeration, mutation) works on
//! the flattened [`Layout`], where every slot knows the condition under which
//! it is active.

mod config;
mod diff;
mod layout;
mod parse;
mod path;
mod store;

use std::fmt;
use std::sync::{Arc, OnceLock};

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use config::{Configuration, Value, INACTIVE};
pub use diff::{apply_diff, diff_spaces, new_version, ChangeKind, DiffEntry, Facet, SpaceDiff};
pub use layout::{Activation, DimKind, Layout, Slot, MAX_SLOTS};
pub use parse::{parse_space, parse_space_with_id, serialize_space};
pub use store::SpaceStore;

pub type Result<T, E = SpaceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpaceError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid space at `{path}`: {message}")]
    Semantic { path: String, message: String },
    #[error("configuration invalid at `{path}`: {message}")]
    InvalidConfig { path: String, message: String },
    #[error("configuration is for space version {config} but space is version {space}")]
    VersionMismatch { config: u64, space: u64 },
    #[error("encoded value {value} at slot {slot} is outside [0,1] and not the inactive sentinel")]
    BadEncoding { slot: usize, value: f64 },
    #[error("encoded vector has length {got}, expected {expected}")]
    BadLength { got: usize, expected: usize },
    #[error("no-op edit: the edit list is empty")]
    NoOpEdit,
    #[error("invalid edit at `{path}`: {message}")]
    InvalidEdit { path: String, message: String },
    #[error("space `{id}` version {version} not found")]
    NotFound { id: String, version: u64 },
    #[error("space `{id}` version {version} already exists")]
    VersionExists { id: String, version: u64 },
}

impl SpaceError {
    pub(crate) fn semantic(path: impl Into<String>, message: impl Into<String>) -> Self {
        SpaceError::Semantic {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Value range of a single parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Domain {
    Int {
        lo: i64,
        hi: i64,
    },
    Float {
        lo: f64,
        hi: f64,
        #[serde(default)]
        log_scale: bool,
    },
    Choice {
        values: Vec<String>,
    },
}

impl Domain {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Domain::Int { .. } => "int",
            Domain::Float { .. } => "float",
            Domain::Choice { .. } => "choice",
        }
    }

    pub fn same_kind(&self, other: &Domain) -> bool {
        self.kind_name() == other.kind_name()
    }

    /// Number of distinct values, `None` for continuous ranges.
    pub fn cardinality(&self) -> Option<u64> {
        match self {
            Domain::Int { lo, hi } => Some((hi - lo) as u64 + 1),
            Domain::Float { .. } => None,
            Domain::Choice { values } => Some(values.len() as u64),
        }
    }

    pub fn contains(&self, value: &Value) -> bool {
        match (self, value) {
            (Domain::Int { lo, hi }, Value::Int(v)) => lo <= v && v <= hi,
            (Domain::Float { lo, hi, .. }, Value::Float(v)) => *lo <= *v && *v <= *hi,
            (Domain::Choice { values }, Value::Choice(v)) => values.iter().any(|c| c == v),
            _ => false,
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        match self {
            Domain::Int { lo, hi } if lo > hi => Err(SpaceError::semantic(
                path,
                format!("range lower bound {lo} exceeds upper bound {hi}"),
            )),
            Domain::Float { lo, hi, log_scale } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(SpaceError::semantic(path, "float range must be finite"));
                }
                if lo > hi {
                    return Err(SpaceError::semantic(
                        path,
                        format!("range lower bound {lo} exceeds upper bound {hi}"),
                    ));
                }
                if *log_scale && *lo <= 0.0 {
                    return Err(SpaceError::semantic(
                        path,
                        "log-scale range requires a positive lower bound",
                    ));
                }
                Ok(())
            }
            Domain::Choice { values } => {
                if values.is_empty() {
                    return Err(SpaceError::semantic(path, "choice range is empty"));
                }
                for (i, v) in values.iter().enumerate() {
                    if values[..i].contains(v) {
                        return Err(SpaceError::semantic(
                            path,
                            format!("duplicate choice value `{v}`"),
                        ));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Children of a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Submodule {
    /// Instantiated once per repetition index; only valid under `int` nodes.
    Repeat(Vec<ParamNode>),
    /// One branch per choice value; only valid under `choice` nodes.
    Branches(IndexMap<String, Vec<ParamNode>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamNode {
    pub name: String,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submodule: Option<Submodule>,
}

impl ParamNode {
    pub fn new(name: impl Into<String>, domain: Domain) -> Self {
        ParamNode {
            name: name.into(),
            domain,
            submodule: None,
        }
    }

    pub fn with_children(mut self, children: Vec<ParamNode>) -> Self {
        self.submodule = Some(Submodule::Repeat(children));
        self
    }

    pub fn with_branch(mut self, value: impl Into<String>, children: Vec<ParamNode>) -> Self {
        let mut branches = match self.submodule.take() {
            Some(Submodule::Branches(b)) => b,
            _ => IndexMap::new(),
        };
        branches.insert(value.into(), children);
        self.submodule = Some(Submodule::Branches(branches));
        self
    }

    pub fn repeat_children(&self) -> &[ParamNode] {
        match &self.submodule {
            Some(Submodule::Repeat(c)) => c,
            _ => &[],
        }
    }

    pub fn branch(&self, value: &str) -> &[ParamNode] {
        match &self.submodule {
            Some(Submodule::Branches(b)) => b.get(value).map(Vec::as_slice).unwrap_or(&[]),
            _ => &[],
        }
    }

    /// Drops empty containers and orders branches by the choice range.
    pub(crate) fn normalize(&mut self) {
        let sub = match self.submodule.take() {
            Some(Submodule::Repeat(mut children)) => {
                children.iter_mut().for_each(ParamNode::normalize);
                (!children.is_empty()).then_some(Submodule::Repeat(children))
            }
            Some(Submodule::Branches(mut branches)) => {
                branches.retain(|_, c| !c.is_empty());
                for c in branches.values_mut() {
                    c.iter_mut().for_each(ParamNode::normalize);
                }
                if let Domain::Choice { values } = &self.domain {
                    branches.sort_by_cached_key(|k, _| {
                        values.iter().position(|v| v == k).unwrap_or(usize::MAX)
                    });
                }
                (!branches.is_empty()).then_some(Submodule::Branches(branches))
            }
            None => None,
        };
        self.submodule = sub;
    }

    pub(crate) fn validate(&self, path: &str) -> Result<()> {
        path::check_name(&self.name, path)?;
        self.domain.validate(path)?;
        match (&self.domain, &self.submodule) {
            (_, None) => Ok(()),
            (Domain::Int { lo, .. }, Some(Submodule::Repeat(children))) => {
                if *lo < 0 {
                    return Err(SpaceError::semantic(
                        path,
                        "repetition count range must be non-negative",
                    ));
                }
                validate_siblings(children, |name| format!("{path}.{name}"))
            }
            (Domain::Choice { values }, Some(Submodule::Branches(branches))) => {
                for (key, children) in branches {
                    if !values.contains(key) {
                        return Err(SpaceError::semantic(
                            format!("{path}:{key}"),
                            format!("submodule key `{key}` is not a value of the choice range"),
                        ));
                    }
                    validate_siblings(children, |name| format!("{path}:{key}.{name}"))?;
                }
                Ok(())
            }
            (d, Some(_)) => Err(SpaceError::semantic(
                path,
                format!("a {} node cannot carry this kind of submodule", d.kind_name()),
            )),
        }
    }
}

pub(crate) fn validate_siblings(
    nodes: &[ParamNode],
    path_of: impl Fn(&str) -> String,
) -> Result<()> {
    for (i, node) in nodes.iter().enumerate() {
        let path = path_of(&node.name);
        if nodes[..i].iter().any(|n| n.name == node.name) {
            return Err(SpaceError::semantic(path, "duplicate sibling name"));
        }
        node.validate(&path)?;
    }
    Ok(())
}

/// A versioned, immutable search space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSpace {
    pub id: String,
    pub version: u64,
    pub parent_version: Option<u64>,
    pub roots: Vec<ParamNode>,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub note: String,
    #[serde(skip)]
    layout: OnceLock<Arc<Layout>>,
}

impl PartialEq for SearchSpace {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.version == other.version
            && self.parent_version == other.parent_version
            && self.roots == other.roots
            && self.note == other.note
    }
}

impl SearchSpace {
    /// Builds and validates a version-1 space.
    pub fn new(id: impl Into<String>, roots: Vec<ParamNode>) -> Result<Self> {
        Self::from_parts(id.into(), 1, None, roots, String::new())
    }

    pub(crate) fn from_parts(
        id: String,
        version: u64,
        parent_version: Option<u64>,
        mut roots: Vec<ParamNode>,
        note: String,
    ) -> Result<Self> {
        roots.iter_mut().for_each(ParamNode::normalize);
        if roots.is_empty() {
            return Err(SpaceError::semantic("", "the space declares no parameters"));
        }
        validate_siblings(&roots, |name| name.to_string())?;
        let space = SearchSpace {
            id,
            version,
            parent_version,
            roots,
            created_at: Utc::now(),
            note,
            layout: OnceLock::new(),
        };
        let layout = Layout::build(&space.roots)?;
        let _ = space.layout.set(Arc::new(layout));
        Ok(space)
    }

    /// Flattened slot view; computed once per space.
    pub fn layout(&self) -> &Layout {
        self.layout
            .get_or_init(|| Arc::new(Layout::build(&self.roots).expect("validated space")))
    }

    /// Length of the encoded vector.
    pub fn dimension(&self) -> usize {
        self.layout().len()
    }

    /// Number of distinct configurations, `None` when any float is reachable.
    pub fn size(&self) -> Option<f64> {
        fn count(nodes: &[ParamNode]) -> Option<f64> {
            nodes.iter().map(count_node).product()
        }
        fn count_node(node: &ParamNode) -> Option<f64> {
            match &node.domain {
                Domain::Float { .. } => None,
                Domain::Int { lo, hi } => {
                    let per = count(node.repeat_children())?;
                    Some((*lo..=*hi).map(|v| per.powi(v.max(0) as i32)).sum())
                }
                Domain::Choice { values } => {
                    values.iter().map(|v| count(node.branch(v))).sum()
                }
            }
        }
        count(&self.roots)
    }

    /// Names of every node, keyed by schema path.
    pub fn schema_nodes(&self) -> IndexMap<String, &ParamNode> {
        fn walk<'a>(prefix: &str, nodes: &'a [ParamNode], out: &mut IndexMap<String, &'a ParamNode>) {
            for node in nodes {
                let path = if prefix.is_empty() {
                    node.name.clone()
                } else {
                    format!("{prefix}.{}", node.name)
                };
                out.insert(path.clone(), node);
                match &node.submodule {
                    Some(Submodule::Repeat(children)) => walk(&path, children, out),
                    Some(Submodule::Branches(branches)) => {
                        for (key, children) in branches {
                            walk(&format!("{path}:{key}"), children, out);
                        }
                    }
                    None => {}
                }
            }
        }
        let mut out = IndexMap::new();
        walk("", &self.roots, &mut out);
        out
    }

    pub fn node(&self, schema_path: &str) -> Option<&ParamNode> {
        path::resolve(&self.roots, schema_path).ok()
    }
}

impl fmt::Display for SearchSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_space(self))
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn listing_size_and_schema() {
        let space = listing();
        let nodes = space.schema_nodes();
        let paths: Vec<_> = nodes.keys().cloned().collect();
        assert_eq!(
            paths,
            vec![
                "backbone_nums_block",
                "backbone_nums_block.block_type",
                "backbone_nums_block.block_type:resnet.nums_layer",
                "backbone_nums_block.block_type:resnet.nums_layer.nums_channel",
                "backbone_nums_block.block_type:transformer.mlp_expend_ratio",
            ]
        );
        // per block: resnet has sum_{l=3..7} 2^l = 248 options, transformer 4
        let per_block: f64 = 248.0 + 4.0;
        let expected: f64 = (2..=5).map(|n| per_block.powi(n)).sum();
        assert_eq!(space.size(), Some(expected));
    }

    #[test]
    fn float_spaces_have_no_size() {
        let s = SearchSpace::new(
            "f",
            vec![ParamNode::new("lr", Domain::Float { lo: 1e-4, hi: 1e-1, log_scale: true })],
        )
        .unwrap();
        assert_eq!(s.size(), None);
    }

    #[test]
    fn rejects_negative_repetition() {
        let err = SearchSpace::new(
            "n",
            vec![ParamNode::new("d", Domain::Int { lo: -1, hi: 2 })
                .with_children(vec![ParamNode::new("c", Domain::Int { lo: 0, hi: 1 })])],
        )
        .unwrap_err();
        assert!(matches!(err, SpaceError::Semantic { ref path, .. } if path == "d"));
    }

    #[test]
    fn rejects_duplicate_siblings() {
        let a = ParamNode::new("a", Domain::Int { lo: 0, hi: 1 });
        let err = SearchSpace::new("d", vec![a.clone(), a]).unwrap_err();
        assert!(matches!(err, SpaceError::Semantic { ref path, .. } if path == "a"));
    }

    #[test]
    fn rejects_branch_outside_range() {
        let node = ParamNode::new("t", Domain::Choice { values: vec!["x".into()] })
            .with_branch("y", vec![ParamNode::new("k", Domain::Int { lo: 0, hi: 1 })]);
        let err = SearchSpace::new("b", vec![node]).unwrap_err();
        assert!(matches!(err, SpaceError::Semantic { ref path, .. } if path == "t:y"));
    }
}
