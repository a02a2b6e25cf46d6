use serde::{Deserialize, Serialize};

use super::path::{self, Via};
use super::{Domain, ParamNode, Result, SearchSpace, SpaceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChangeKind {
    Added,
    Removed,
    RangeNarrowed,
    RangeWidened,
    ValuesChanged,
}

/// Payload of a diff entry: a whole node for additions and removals, a
/// domain for range changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Facet {
    Node(ParamNode),
    Domain(Domain),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    /// Schema path of the affected node.
    pub path: String,
    pub change: ChangeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old: Option<Facet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new: Option<Facet>,
    /// Index among siblings in the new space (additions only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
}

impl DiffEntry {
    /// Edit that replaces the domain of the node at `path`.
    pub fn set_domain(path: impl Into<String>, old: Option<Domain>, new: Domain) -> Self {
        let change = match &old {
            Some(old) => classify(old, &new),
            None => ChangeKind::ValuesChanged,
        };
        DiffEntry {
            path: path.into(),
            change,
            old: old.map(Facet::Domain),
            new: Some(Facet::Domain(new)),
            position: None,
        }
    }

    pub fn add(path: impl Into<String>, node: ParamNode, position: Option<usize>) -> Self {
        DiffEntry {
            path: path.into(),
            change: ChangeKind::Added,
            old: None,
            new: Some(Facet::Node(node)),
            position,
        }
    }

    pub fn remove(path: impl Into<String>) -> Self {
        DiffEntry {
            path: path.into(),
            change: ChangeKind::Removed,
            old: None,
            new: None,
            position: None,
        }
    }
}

pub type SpaceDiff = Vec<DiffEntry>;

fn classify(old: &Domain, new: &Domain) -> ChangeKind {
    let nested = |olo: f64, ohi: f64, nlo: f64, nhi: f64| {
        if nlo >= olo && nhi <= ohi {
            ChangeKind::RangeNarrowed
        } else if nlo <= olo && nhi >= ohi {
            ChangeKind::RangeWidened
        } else {
            ChangeKind::ValuesChanged
        }
    };
    match (old, new) {
        (Domain::Int { lo: a, hi: b }, Domain::Int { lo: c, hi: d }) => {
            nested(*a as f64, *b as f64, *c as f64, *d as f64)
        }
        (
            Domain::Float { lo: a, hi: b, log_scale: la },
            Domain::Float { lo: c, hi: d, log_scale: lb },
        ) if la == lb => nested(*a, *b, *c, *d),
        _ => ChangeKind::ValuesChanged,
    }
}

/// Per-path structural comparison. Sibling order is part of the structure:
/// nodes whose relative order changed are reported as removed and re-added.
pub fn diff_spaces(old: &SearchSpace, new: &SearchSpace) -> SpaceDiff {
    let mut out = Vec::new();
    diff_siblings("", &Via::Root, &old.roots, &new.roots, &mut out);
    out
}

fn diff_siblings(prefix: &str, via: &Via, old: &[ParamNode], new: &[ParamNode], out: &mut SpaceDiff) {
    let old_common: Vec<&str> = old
        .iter()
        .filter(|o| new.iter().any(|n| n.name == o.name))
        .map(|o| o.name.as_str())
        .collect();
    let new_common: Vec<&str> = new
        .iter()
        .filter(|n| old.iter().any(|o| o.name == n.name))
        .map(|n| n.name.as_str())
        .collect();
    let kept = lcs(&old_common, &new_common);
    let is_kept = |name: &str, o: &ParamNode, n: &ParamNode| {
        kept.contains(&name) && o.domain.same_kind(&n.domain)
    };
    let pair = |name: &str| {
        (
            old.iter().find(|o| o.name == name),
            new.iter().find(|n| n.name == name),
        )
    };
    for o in old {
        let keep = match pair(&o.name) {
            (Some(o), Some(n)) => is_kept(&o.name, o, n),
            _ => false,
        };
        if !keep {
            out.push(DiffEntry {
                path: path::child(prefix, via, &o.name),
                change: ChangeKind::Removed,
                old: Some(Facet::Node(o.clone())),
                new: None,
                position: None,
            });
        }
    }
    for (i, n) in new.iter().enumerate() {
        let keep = match pair(&n.name) {
            (Some(o), Some(n)) => is_kept(&n.name, o, n),
            _ => false,
        };
        if !keep {
            out.push(DiffEntry::add(path::child(prefix, via, &n.name), n.clone(), Some(i)));
        }
    }
    for n in new {
        if let (Some(o), Some(n)) = pair(&n.name) {
            if is_kept(&n.name, o, n) {
                diff_node(&path::child(prefix, via, &n.name), o, n, out);
            }
        }
    }
}

fn diff_node(path: &str, old: &ParamNode, new: &ParamNode, out: &mut SpaceDiff) {
    if old.domain != new.domain {
        out.push(DiffEntry::set_domain(path, Some(old.domain.clone()), new.domain.clone()));
    }
    match (&old.domain, &new.domain) {
        (Domain::Int { .. }, Domain::Int { .. }) => {
            diff_siblings(path, &Via::Repeat, old.repeat_children(), new.repeat_children(), out);
        }
        (Domain::Choice { values: ov }, Domain::Choice { values: nv }) => {
            let mut keys: Vec<&String> = ov.iter().collect();
            keys.extend(nv.iter().filter(|v| !ov.contains(v)));
            for key in keys {
                diff_siblings(path, &Via::Branch(key.clone()), old.branch(key), new.branch(key), out);
            }
        }
        _ => {}
    }
}

fn lcs<'a>(a: &[&'a str], b: &[&'a str]) -> Vec<&'a str> {
    let (n, m) = (a.len(), b.len());
    let mut table = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i][j] = if a[i] == b[j] {
                table[i + 1][j + 1] + 1
            } else {
                table[i + 1][j].max(table[i][j + 1])
            };
        }
    }
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < n && j < m {
        if a[i] == b[j] {
            out.push(a[i]);
            i += 1;
            j += 1;
        } else if table[i + 1][j] >= table[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Applies a diff (or any edit list of the same shape) to a space's nodes.
/// Entries apply in order; removals should precede additions within a
/// sibling list, as [`diff_spaces`] emits them. The result is validated.
pub fn apply_diff(space: &SearchSpace, diff: &[DiffEntry]) -> Result<Vec<ParamNode>> {
    let mut roots = space.roots.clone();
    for entry in diff {
        apply_entry(&mut roots, entry)?;
    }
    roots.iter_mut().for_each(ParamNode::normalize);
    super::validate_siblings(&roots, |name| name.to_string()).map_err(|e| match e {
        SpaceError::Semantic { path, message } => SpaceError::InvalidEdit { path, message },
        other => other,
    })?;
    Ok(roots)
}

fn apply_entry(roots: &mut Vec<ParamNode>, entry: &DiffEntry) -> Result<()> {
    let bad = |message: &str| SpaceError::InvalidEdit {
        path: entry.path.clone(),
        message: message.to_string(),
    };
    match entry.change {
        ChangeKind::Removed => {
            let (siblings, name) = path::container_mut(roots, &entry.path)?;
            let idx = siblings
                .iter()
                .position(|n| n.name == name)
                .ok_or_else(|| bad("no such node to remove"))?;
            siblings.remove(idx);
        }
        ChangeKind::Added => {
            let Some(Facet::Node(node)) = &entry.new else {
                return Err(bad("an addition must carry the new node"));
            };
            let (siblings, name) = path::container_mut(roots, &entry.path)?;
            if node.name != name {
                return Err(bad("node name does not match the last path segment"));
            }
            if siblings.iter().any(|n| n.name == name) {
                return Err(bad("a node with this name already exists"));
            }
            let at = entry.position.unwrap_or(siblings.len()).min(siblings.len());
            siblings.insert(at, node.clone());
        }
        ChangeKind::RangeNarrowed | ChangeKind::RangeWidened | ChangeKind::ValuesChanged => {
            let Some(Facet::Domain(domain)) = &entry.new else {
                return Err(bad("a range change must carry the new domain"));
            };
            let node = path::resolve_mut(roots, &entry.path)?;
            if !node.domain.same_kind(domain) {
                return Err(bad("a range change cannot change the parameter type"));
            }
            node.domain = domain.clone();
        }
    }
    Ok(())
}

/// Derives the next version of `space`. The input is left untouched.
pub fn new_version(space: &SearchSpace, edits: &[DiffEntry], note: impl Into<String>) -> Result<SearchSpace> {
    if edits.is_empty() {
        return Err(SpaceError::NoOpEdit);
    }
    let roots = apply_diff(space, edits)?;
    SearchSpace::from_parts(space.id.clone(), space.version + 1, Some(space.version), roots, note.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::fixtures::listing;
    use crate::space::{parse_space, serialize_space};

    #[test]
    fn identical_spaces_have_empty_diff() {
        assert!(diff_spaces(&listing(), &listing()).is_empty());
    }

    #[test]
    fn narrowing_an_int_range() {
        let a = listing();
        let b = parse_space(&serialize_space(&a).replacen("[2...5]", "[2...4]", 1)).unwrap();
        let d = diff_spaces(&a, &b);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path, "backbone_nums_block");
        assert_eq!(d[0].change, ChangeKind::RangeNarrowed);
        assert_eq!(apply_diff(&a, &d).unwrap(), b.roots);
    }

    #[test]
    fn dropping_a_choice_value_removes_its_branch() {
        let a = listing();
        let text = serialize_space(&a);
        let cut = text.find("        transformer:").unwrap();
        let b_text = text[..cut].replace("{resnet, transformer}", "{resnet}");
        let b = parse_space(&b_text).unwrap();
        let d = diff_spaces(&a, &b);
        let kinds: Vec<(&str, ChangeKind)> = d.iter().map(|e| (e.path.as_str(), e.change)).collect();
        assert_eq!(
            kinds,
            vec![
                ("backbone_nums_block.block_type", ChangeKind::ValuesChanged),
                (
                    "backbone_nums_block.block_type:transformer.mlp_expend_ratio",
                    ChangeKind::Removed
                ),
            ]
        );
        assert_eq!(apply_diff(&a, &d).unwrap(), b.roots);
    }

    #[test]
    fn widening_and_shifting() {
        assert_eq!(
            classify(&Domain::Int { lo: 2, hi: 4 }, &Domain::Int { lo: 1, hi: 5 }),
            ChangeKind::RangeWidened
        );
        assert_eq!(
            classify(&Domain::Int { lo: 2, hi: 4 }, &Domain::Int { lo: 3, hi: 6 }),
            ChangeKind::ValuesChanged
        );
    }

    #[test]
    fn reorder_is_remove_and_add() {
        let a = parse_space("x: {type: int, range: [0...1]}\ny: {type: int, range: [0...1]}").unwrap();
        let b = parse_space("y: {type: int, range: [0...1]}\nx: {type: int, range: [0...1]}").unwrap();
        let d = diff_spaces(&a, &b);
        assert_eq!(d.len(), 2);
        assert_eq!(apply_diff(&a, &d).unwrap(), b.roots);
    }

    #[test]
    fn new_version_chain() {
        let v1 = listing();
        let narrow = DiffEntry::set_domain("backbone_nums_block", None, Domain::Int { lo: 2, hi: 4 });
        let v2 = new_version(&v1, &[narrow], "narrow depth").unwrap();
        assert_eq!((v2.version, v2.parent_version), (2, Some(1)));
        assert_eq!(v1.roots[0].domain, Domain::Int { lo: 2, hi: 5 });
        let widen = DiffEntry::set_domain(
            "backbone_nums_block.block_type:resnet.nums_layer",
            None,
            Domain::Int { lo: 3, hi: 9 },
        );
        let v3 = new_version(&v2, &[widen], "").unwrap();
        assert_eq!((v3.version, v3.parent_version), (3, Some(2)));
        assert_eq!(v3.id, v1.id);
    }

    #[test]
    fn empty_edit_is_rejected() {
        assert_eq!(new_version(&listing(), &[], "x").unwrap_err(), SpaceError::NoOpEdit);
    }

    #[test]
    fn invalid_edit_reports_path() {
        let bad = DiffEntry::set_domain("backbone_nums_block", None, Domain::Int { lo: 6, hi: 2 });
        match new_version(&listing(), &[bad], "").unwrap_err() {
            SpaceError::InvalidEdit { path, .. } => assert_eq!(path, "backbone_nums_block"),
            other => panic!("{other:?}"),
        }
        let wrong_kind = DiffEntry::set_domain("backbone_nums_block", None, Domain::Choice { values: vec!["a".into()] });
        assert!(new_version(&listing(), &[wrong_kind], "").is_err());
    }

    #[test]
    fn adding_into_a_new_branch() {
        let a = parse_space("t: {type: choice, range: {a, b}}").unwrap();
        let edits = vec![DiffEntry::add("t:b.k", ParamNode::new("k", Domain::Int { lo: 0, hi: 3 }), None)];
        let b = new_version(&a, &edits, "").unwrap();
        assert_eq!(b.roots[0].branch("b")[0].name, "k");
        assert_eq!(b.dimension(), 2);
    }
}
