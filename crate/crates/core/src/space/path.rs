//! Schema paths: `a.b` addresses child `b` repeated under int node `a`,
//! `a:x.b` addresses child `b` in branch `x` of choice node `a`.
//! Instance paths (configuration keys) additionally carry `[i]` repetition
//! indices, e.g. `a[1].b`.

use indexmap::IndexMap;

use super::{Domain, ParamNode, Result, SpaceError, Submodule};

const RESERVED: &[char] = &['.', ':', '[', ']'];

pub(crate) fn check_name(name: &str, path: &str) -> Result<()> {
    if name.is_empty() || name.contains(RESERVED) || name.starts_with('$') {
        return Err(SpaceError::semantic(
            path,
            format!("`{name}` is not a valid parameter name"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Via {
    Root,
    Repeat,
    Branch(String),
}

#[derive(Debug, Clone)]
pub(crate) struct Seg {
    pub via: Via,
    pub name: String,
}

fn bad(path: &str, message: impl Into<String>) -> SpaceError {
    SpaceError::InvalidEdit {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Splits a schema path into segments, using the tree to disambiguate choice
/// values. The final segment need not exist.
pub(crate) fn parse(roots: &[ParamNode], path: &str) -> Result<Vec<Seg>> {
    let mut segs = Vec::new();
    let mut rest = path;
    let mut siblings: Option<&[ParamNode]> = Some(roots);
    let mut via = Via::Root;
    loop {
        let end = rest.find(['.', ':']).unwrap_or(rest.len());
        let name = &rest[..end];
        if name.is_empty() {
            return Err(bad(path, "empty path segment"));
        }
        segs.push(Seg {
            via: via.clone(),
            name: name.to_string(),
        });
        rest = &rest[end..];
        if rest.is_empty() {
            return Ok(segs);
        }
        let node = siblings
            .and_then(|s| s.iter().find(|n| n.name == name))
            .ok_or_else(|| bad(path, format!("no node named `{name}`")))?;
        if let Some(tail) = rest.strip_prefix('.') {
            if !matches!(node.domain, Domain::Int { .. }) {
                return Err(bad(path, format!("`{name}` is not an int node and has no repeated children")));
            }
            siblings = Some(node.repeat_children());
            via = Via::Repeat;
            rest = tail;
        } else {
            let tail = &rest[1..];
            let Domain::Choice { values } = &node.domain else {
                return Err(bad(path, format!("`{name}` is not a choice node and has no branches")));
            };
            let existing: Vec<&String> = match &node.submodule {
                Some(Submodule::Branches(b)) => b.keys().collect(),
                _ => Vec::new(),
            };
            let key = values
                .iter()
                .chain(existing)
                .filter(|v| {
                    tail.strip_prefix(v.as_str())
                        .is_some_and(|t| t.is_empty() || t.starts_with('.'))
                })
                .max_by_key(|v| v.len())
                .ok_or_else(|| bad(path, format!("no branch of `{name}` matches")))?;
            let after = &tail[key.len()..];
            let Some(after) = after.strip_prefix('.') else {
                return Err(bad(path, "path ends at a branch, not a node"));
            };
            siblings = Some(node.branch(key));
            via = Via::Branch(key.clone());
            rest = after;
        }
    }
}

pub(crate) fn resolve<'a>(roots: &'a [ParamNode], path: &str) -> Result<&'a ParamNode> {
    let segs = parse(roots, path)?;
    let mut siblings = roots;
    let mut found = None;
    for seg in &segs {
        if let Some(node) = found.take() {
            siblings = match &seg.via {
                Via::Branch(k) => ParamNode::branch(node, k),
                _ => ParamNode::repeat_children(node),
            };
        }
        found = Some(
            siblings
                .iter()
                .find(|n| n.name == seg.name)
                .ok_or_else(|| bad(path, format!("no node named `{}`", seg.name)))?,
        );
    }
    found.ok_or_else(|| bad(path, "empty path"))
}

/// The sibling list that holds (or would hold) the node at `path`, creating an
/// empty submodule container on the parent if needed.
pub(crate) fn container_mut<'a>(
    roots: &'a mut Vec<ParamNode>,
    path: &str,
) -> Result<(&'a mut Vec<ParamNode>, String)> {
    let segs = parse(roots, path)?;
    let (last, parents) = segs.split_last().expect("parse yields at least one segment");
    let mut siblings = roots;
    for (i, seg) in parents.iter().enumerate() {
        let node = siblings
            .iter_mut()
            .find(|n| n.name == seg.name)
            .ok_or_else(|| bad(path, format!("no node named `{}`", seg.name)))?;
        let next_via = segs[i + 1].via.clone();
        siblings = match next_via {
            Via::Repeat => {
                if !matches!(node.submodule, Some(Submodule::Repeat(_))) {
                    node.submodule = Some(Submodule::Repeat(Vec::new()));
                }
                match node.submodule.as_mut() {
                    Some(Submodule::Repeat(c)) => c,
                    _ => unreachable!(),
                }
            }
            Via::Branch(key) => {
                if !matches!(node.submodule, Some(Submodule::Branches(_))) {
                    node.submodule = Some(Submodule::Branches(IndexMap::new()));
                }
                match node.submodule.as_mut() {
                    Some(Submodule::Branches(b)) => b.entry(key).or_default(),
                    _ => unreachable!(),
                }
            }
            Via::Root => unreachable!("only the first segment is rooted"),
        };
    }
    Ok((siblings, last.name.clone()))
}

pub(crate) fn resolve_mut<'a>(roots: &'a mut Vec<ParamNode>, path: &str) -> Result<&'a mut ParamNode> {
    let (siblings, name) = container_mut(roots, path)?;
    siblings
        .iter_mut()
        .find(|n| n.name == name)
        .ok_or_else(|| bad(path, format!("no node named `{name}`")))
}

/// Joins a child name onto a container path.
pub(crate) fn child(prefix: &str, via: &Via, name: &str) -> String {
    match via {
        Via::Root => name.to_string(),
        Via::Repeat => format!("{prefix}.{name}"),
        Via::Branch(k) => format!("{prefix}:{k}.{name}"),
    }
}
