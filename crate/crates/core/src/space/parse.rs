//! The search-space document grammar:
//!
//! ```yaml
//! name:
//!   type: int | float | choice
//!   range: [lo...hi] | {v1, v2, ...}
//!   log_scale: true          # float only
//!   submodule: {...}         # int: child nodes; choice: value -> child nodes
//! ```
//!
//! A top-level `$defs` mapping holds reusable node bodies; `{$ref: name}`
//! in place of a body expands to a copy.

use std::fmt::Write as _;

use indexmap::IndexMap;
use serde_yaml::{Mapping, Value as Yaml};

use super::{Domain, ParamNode, Result, SearchSpace, SpaceError, Submodule};

const DEFS_KEY: &str = "$defs";
const REF_KEY: &str = "$ref";

/// Parses a document into a validated version-1 space whose id is derived
/// from the document text.
pub fn parse_space(text: &str) -> Result<SearchSpace> {
    parse_space_with_id(text, &format!("space-{:016x}", fnv1a(text.as_bytes())))
}

pub fn parse_space_with_id(text: &str, id: &str) -> Result<SearchSpace> {
    let doc: Yaml = serde_yaml::from_str(text).map_err(|e| {
        let (line, column) = e.location().map(|l| (l.line(), l.column())).unwrap_or((0, 0));
        SpaceError::Syntax {
            line,
            column,
            message: e.to_string(),
        }
    })?;
    let Yaml::Mapping(top) = doc else {
        return Err(SpaceError::Syntax {
            line: 1,
            column: 1,
            message: "a search space document must be a mapping of parameter names".into(),
        });
    };
    let defs = match top.get(DEFS_KEY) {
        Some(Yaml::Mapping(m)) => m.clone(),
        Some(_) => return Err(SpaceError::semantic(DEFS_KEY, "`$defs` must be a mapping")),
        None => Mapping::new(),
    };
    let parser = Parser { defs: &defs };
    let mut roots = Vec::new();
    for (key, body) in &top {
        let name = scalar(key, "")?;
        if name == DEFS_KEY {
            continue;
        }
        roots.push(parser.node(&name, body, &name, &mut Vec::new())?);
    }
    if roots.is_empty() {
        return Err(SpaceError::semantic("", "the space declares no parameters"));
    }
    SearchSpace::from_parts(id.to_string(), 1, None, roots, String::new())
}

struct Parser<'a> {
    defs: &'a Mapping,
}

impl Parser<'_> {
    fn node(&self, name: &str, body: &Yaml, path: &str, refs: &mut Vec<String>) -> Result<ParamNode> {
        let Yaml::Mapping(body) = body else {
            return Err(SpaceError::semantic(path, "node body must be a mapping"));
        };
        if let Some(target) = body.get(REF_KEY) {
            if body.len() != 1 {
                return Err(SpaceError::semantic(path, "`$ref` cannot be combined with other keys"));
            }
            let target = scalar(target, path)?;
            if refs.contains(&target) {
                return Err(SpaceError::semantic(path, format!("reference cycle through `{target}`")));
            }
            let def = self
                .defs
                .get(target.as_str())
                .ok_or_else(|| SpaceError::semantic(path, format!("unknown reference `{target}`")))?;
            refs.push(target);
            let node = self.node(name, def, path, refs);
            refs.pop();
            return node;
        }
        for key in body.keys() {
            let key = scalar(key, path)?;
            if !matches!(key.as_str(), "type" | "range" | "log_scale" | "submodule") {
                return Err(SpaceError::semantic(path, format!("unknown key `{key}`")));
            }
        }
        let kind = body
            .get("type")
            .map(|t| scalar(t, path))
            .transpose()?
            .ok_or_else(|| SpaceError::semantic(path, "missing `type`"))?;
        let range = body
            .get("range")
            .ok_or_else(|| SpaceError::semantic(path, "missing `range`"))?;
        let log_scale = match body.get("log_scale") {
            None => false,
            Some(Yaml::Bool(b)) => *b,
            Some(_) => return Err(SpaceError::semantic(path, "`log_scale` must be a boolean")),
        };
        let domain = match kind.as_str() {
            "int" => {
                let (lo, hi) = numeric_range(range, path)?;
                let parse = |s: &str| {
                    s.trim()
                        .parse::<i64>()
                        .map_err(|_| SpaceError::semantic(path, format!("`{s}` is not an integer")))
                };
                Domain::Int {
                    lo: parse(&lo)?,
                    hi: parse(&hi)?,
                }
            }
            "float" => {
                let parse = |s: &str| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| SpaceError::semantic(path, format!("`{s}` is not a number")))
                };
                let (lo, hi) = numeric_range(range, path)?;
                Domain::Float {
                    lo: parse(&lo)?,
                    hi: parse(&hi)?,
                    log_scale,
                }
            }
            "choice" => Domain::Choice {
                values: choice_range(range, path)?,
            },
            other => {
                return Err(SpaceError::semantic(path, format!("unknown type `{other}`")));
            }
        };
        if log_scale && !matches!(domain, Domain::Float { .. }) {
            return Err(SpaceError::semantic(path, "`log_scale` applies only to float nodes"));
        }
        let submodule = match body.get("submodule") {
            None => None,
            Some(Yaml::Mapping(sub)) => Some(match &domain {
                Domain::Int { .. } => Submodule::Repeat(self.children(sub, path, ".", refs)?),
                Domain::Choice { values } => {
                    let mut branches = IndexMap::new();
                    for (key, children) in sub {
                        let key = scalar(key, path)?;
                        let branch_path = format!("{path}:{key}");
                        if !values.contains(&key) {
                            return Err(SpaceError::semantic(
                                branch_path,
                                format!("submodule key `{key}` is not a value of the choice range"),
                            ));
                        }
                        let Yaml::Mapping(children) = children else {
                            return Err(SpaceError::semantic(branch_path, "branch must be a mapping of nodes"));
                        };
                        let nodes = self.children(children, &branch_path, ".", refs)?;
                        branches.insert(key, nodes);
                    }
                    Submodule::Branches(branches)
                }
                Domain::Float { .. } => {
                    return Err(SpaceError::semantic(path, "float nodes cannot have a submodule"));
                }
            }),
            Some(Yaml::Null) => None,
            Some(_) => return Err(SpaceError::semantic(path, "`submodule` must be a mapping")),
        };
        Ok(ParamNode {
            name: name.to_string(),
            domain,
            submodule,
        })
    }

    fn children(&self, sub: &Mapping, path: &str, sep: &str, refs: &mut Vec<String>) -> Result<Vec<ParamNode>> {
        let mut out: Vec<ParamNode> = Vec::new();
        for (key, body) in sub {
            let name = scalar(key, path)?;
            let child_path = format!("{path}{sep}{name}");
            if out.iter().any(|n| n.name == name) {
                return Err(SpaceError::semantic(child_path, "duplicate sibling name"));
            }
            out.push(self.node(&name, body, &child_path, refs)?);
        }
        Ok(out)
    }
}

fn scalar(v: &Yaml, path: &str) -> Result<String> {
    match v {
        Yaml::String(s) => Ok(s.clone()),
        Yaml::Number(n) => Ok(n.to_string()),
        Yaml::Bool(b) => Ok(b.to_string()),
        _ => Err(SpaceError::semantic(path, "expected a scalar")),
    }
}

/// `[lo...hi]`, `lo...hi` or `[lo, hi]`.
fn numeric_range(range: &Yaml, path: &str) -> Result<(String, String)> {
    let split = |s: &str| {
        s.split_once("...")
            .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
            .ok_or_else(|| SpaceError::semantic(path, format!("range `{s}` is not of the form lo...hi")))
    };
    match range {
        Yaml::Sequence(items) if items.len() == 1 => split(&scalar(&items[0], path)?),
        Yaml::Sequence(items) if items.len() == 2 => Ok((scalar(&items[0], path)?, scalar(&items[1], path)?)),
        Yaml::String(s) => split(s),
        _ => Err(SpaceError::semantic(path, "numeric range must be written [lo...hi]")),
    }
}

/// `{a, b, c}` (a flow mapping with empty values) or `[a, b, c]`.
fn choice_range(range: &Yaml, path: &str) -> Result<Vec<String>> {
    let values = match range {
        Yaml::Mapping(m) => {
            if m.values().any(|v| !v.is_null()) {
                return Err(SpaceError::semantic(path, "choice range must be written {v1, v2, ...}"));
            }
            m.keys().map(|k| scalar(k, path)).collect::<Result<Vec<_>>>()?
        }
        Yaml::Sequence(items) => items.iter().map(|k| scalar(k, path)).collect::<Result<Vec<_>>>()?,
        _ => return Err(SpaceError::semantic(path, "choice range must be written {v1, v2, ...}")),
    };
    Ok(values)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Emits the document form of a space (expanded, without `$defs`).
pub fn serialize_space(space: &SearchSpace) -> String {
    let mut out = String::new();
    for node in &space.roots {
        emit_node(&mut out, node, 0);
    }
    out
}

fn emit_node(out: &mut String, node: &ParamNode, depth: usize) {
    let pad = "  ".repeat(depth);
    let _ = writeln!(out, "{pad}{}:", scalar_text(&node.name));
    let _ = writeln!(out, "{pad}  type: {}", node.domain.kind_name());
    match &node.domain {
        Domain::Int { lo, hi } => {
            let _ = writeln!(out, "{pad}  range: [{lo}...{hi}]");
        }
        Domain::Float { lo, hi, log_scale } => {
            let _ = writeln!(out, "{pad}  range: [{lo:?}...{hi:?}]");
            if *log_scale {
                let _ = writeln!(out, "{pad}  log_scale: true");
            }
        }
        Domain::Choice { values } => {
            let items: Vec<String> = values.iter().map(|v| scalar_text(v)).collect();
            let _ = writeln!(out, "{pad}  range: {{{}}}", items.join(", "));
        }
    }
    match &node.submodule {
        None => {}
        Some(Submodule::Repeat(children)) => {
            let _ = writeln!(out, "{pad}  submodule:");
            for child in children {
                emit_node(out, child, depth + 2);
            }
        }
        Some(Submodule::Branches(branches)) => {
            let _ = writeln!(out, "{pad}  submodule:");
            for (key, children) in branches {
                let _ = writeln!(out, "{pad}    {}:", scalar_text(key));
                for child in children {
                    emit_node(out, child, depth + 3);
                }
            }
        }
    }
}

/// Plain when the scalar reads back as the same string, quoted otherwise.
fn scalar_text(s: &str) -> String {
    let ident = s
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    let keyword = matches!(
        s.to_ascii_lowercase().as_str(),
        "true" | "false" | "null" | "yes" | "no" | "on" | "off" | "y" | "n"
    );
    let digits = s.strip_prefix('-').unwrap_or(s);
    let canonical_int = !digits.is_empty()
        && digits.chars().all(|c| c.is_ascii_digit())
        && (digits == "0" || !digits.starts_with('0'))
        && s.parse::<i64>().is_ok();
    if (ident && !keyword) || canonical_int {
        s.to_string()
    } else {
        serde_json::to_string(s).expect("strings serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::fixtures::{listing, LISTING};

    #[test]
    fn parses_listing() {
        let space = listing();
        assert_eq!(space.version, 1);
        assert_eq!(space.parent_version, None);
        assert_eq!(space.roots.len(), 1);
        let root = &space.roots[0];
        assert_eq!(root.name, "backbone_nums_block");
        assert_eq!(root.domain, Domain::Int { lo: 2, hi: 5 });
        let block = &root.repeat_children()[0];
        assert_eq!(
            block.domain,
            Domain::Choice {
                values: vec!["resnet".into(), "transformer".into()]
            }
        );
        assert_eq!(block.branch("resnet")[0].name, "nums_layer");
        assert_eq!(block.branch("transformer")[0].name, "mlp_expend_ratio");
        assert_eq!(
            block.branch("resnet")[0].repeat_children()[0].domain,
            Domain::Choice {
                values: vec!["64".into(), "256".into()]
            }
        );
    }

    #[test]
    fn single_value_choice() {
        let s = parse_space("p: {type: choice, range: {a}}").unwrap();
        assert_eq!(s.roots[0].domain, Domain::Choice { values: vec!["a".into()] });
    }

    #[test]
    fn reversed_range_is_semantic_error_at_path() {
        let err = parse_space("p: {type: int, range: [5...2]}").unwrap_err();
        assert!(matches!(err, SpaceError::Semantic { ref path, .. } if path == "p"), "{err}");
    }

    #[test]
    fn branch_key_outside_range() {
        let doc = "t:\n  type: choice\n  range: {a, b}\n  submodule:\n    c:\n      k: {type: int, range: [0...1]}\n";
        let err = parse_space(doc).unwrap_err();
        assert!(matches!(err, SpaceError::Semantic { ref path, .. } if path == "t:c"), "{err}");
    }

    #[test]
    fn duplicate_choice_value() {
        let err = parse_space("p: {type: choice, range: [a, a]}").unwrap_err();
        assert!(matches!(err, SpaceError::Semantic { ref path, .. } if path == "p"));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_space("p: {type: int, range: [1...2]\nq: 3").unwrap_err();
        match err {
            SpaceError::Syntax { line, .. } => assert!(line >= 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn float_with_log_scale() {
        let s = parse_space("lr: {type: float, range: [0.0001...0.1], log_scale: true}").unwrap();
        assert_eq!(
            s.roots[0].domain,
            Domain::Float { lo: 1e-4, hi: 0.1, log_scale: true }
        );
        assert!(parse_space("n: {type: int, range: [1...2], log_scale: true}").is_err());
    }

    #[test]
    fn refs_expand_and_cycles_fail() {
        let doc = "$defs:\n  width: {type: choice, range: {16, 32}}\nenc: {$ref: width}\ndec: {$ref: width}\n";
        let s = parse_space(doc).unwrap();
        assert_eq!(s.roots.len(), 2);
        assert_eq!(s.roots[0].domain, s.roots[1].domain);
        assert_eq!(s.roots[1].name, "dec");
        let cyclic = "$defs:\n  a:\n    type: int\n    range: [0...2]\n    submodule:\n      x: {$ref: a}\nroot: {$ref: a}\n";
        let err = parse_space(cyclic).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn listing_round_trips() {
        let a = parse_space(LISTING).unwrap();
        let text = serialize_space(&a);
        let b = parse_space(&text).unwrap();
        assert_eq!(a.roots, b.roots);
        assert_eq!(serialize_space(&b), text);
    }

    #[test]
    fn awkward_choice_values_round_trip() {
        let s = SearchSpace::new(
            "w",
            vec![ParamNode::new(
                "v",
                Domain::Choice {
                    values: vec!["1.50".into(), "true".into(), "a, b".into(), "007".into(), "-3".into()],
                },
            )],
        )
        .unwrap();
        let back = parse_space(&serialize_space(&s)).unwrap();
        assert_eq!(back.roots, s.roots);
    }
}
