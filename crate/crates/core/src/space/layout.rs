use std::collections::HashMap;

use super::{Domain, ParamNode, Result, SpaceError, Submodule, Value};

/// Upper bound on the flattened dimension of a space.
pub const MAX_SLOTS: usize = 100_000;

/// When a slot is active, relative to an earlier slot.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    Always,
    /// Active when the int at `parent` is greater than `index`.
    Repeat { parent: usize, index: i64 },
    /// Active when the choice at `parent` equals `value`.
    Branch { parent: usize, value: String },
}

/// How a surrogate should treat an encoded dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DimKind {
    Continuous,
    /// Ordered integer levels.
    Ordinal { levels: usize },
    /// Unordered levels, encoded as normalized ordinals.
    Categorical { levels: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    /// Instance path, e.g. `depth[1].channels`.
    pub path: String,
    /// Schema path, e.g. `depth.channels`.
    pub schema_path: String,
    pub domain: Domain,
    pub activation: Activation,
}

impl Slot {
    /// Whether this slot is active given the values of all earlier slots
    /// (`None` = inactive).
    pub fn is_active(&self, earlier: &[Option<Value>]) -> bool {
        match &self.activation {
            Activation::Always => true,
            Activation::Repeat { parent, index } => {
                matches!(earlier[*parent], Some(Value::Int(n)) if n > *index)
            }
            Activation::Branch { parent, value } => {
                matches!(&earlier[*parent], Some(Value::Choice(c)) if c == value)
            }
        }
    }

    pub fn kind(&self) -> DimKind {
        match &self.domain {
            Domain::Float { .. } => DimKind::Continuous,
            Domain::Int { lo, hi } => DimKind::Ordinal {
                levels: (hi - lo + 1) as usize,
            },
            Domain::Choice { values } => DimKind::Categorical {
                levels: values.len(),
            },
        }
    }
}

/// The max-expansion of a space: repetitions unrolled to their upper bound,
/// every branch present. Parents always precede their children.
#[derive(Debug, Clone, Default)]
pub struct Layout {
    slots: Vec<Slot>,
    index: HashMap<String, usize>,
}

impl Layout {
    pub(crate) fn build(roots: &[ParamNode]) -> Result<Self> {
        let mut layout = Layout::default();
        for node in roots {
            layout.push(node, node.name.clone(), node.name.clone(), Activation::Always)?;
        }
        Ok(layout)
    }

    fn push(&mut self, node: &ParamNode, path: String, schema: String, activation: Activation) -> Result<()> {
        if self.slots.len() >= MAX_SLOTS {
            return Err(SpaceError::semantic(
                schema,
                format!("flattened space exceeds {MAX_SLOTS} dimensions"),
            ));
        }
        let me = self.slots.len();
        self.index.insert(path.clone(), me);
        self.slots.push(Slot {
            path: path.clone(),
            schema_path: schema.clone(),
            domain: node.domain.clone(),
            activation,
        });
        match (&node.domain, &node.submodule) {
            (Domain::Int { hi, .. }, Some(Submodule::Repeat(children))) => {
                for i in 0..(*hi).max(0) {
                    for child in children {
                        self.push(
                            child,
                            format!("{path}[{i}].{}", child.name),
                            format!("{schema}.{}", child.name),
                            Activation::Repeat { parent: me, index: i },
                        )?;
                    }
                }
            }
            (Domain::Choice { values }, Some(Submodule::Branches(branches))) => {
                for value in values {
                    for child in branches.get(value).into_iter().flatten() {
                        self.push(
                            child,
                            format!("{path}:{value}.{}", child.name),
                            format!("{schema}:{value}.{}", child.name),
                            Activation::Branch {
                                parent: me,
                                value: value.clone(),
                            },
                        )?;
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot_index(&self, path: &str) -> Option<usize> {
        self.index.get(path).copied()
    }

    pub fn dim_kinds(&self) -> Vec<DimKind> {
        self.slots.iter().map(Slot::kind).collect()
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.path.as_str())
    }

    /// Walks the slots in order, asking `pick` for a value for every slot
    /// whose activation condition holds given the values picked so far.
    pub fn walk<E>(
        &self,
        mut pick: impl FnMut(usize, &Slot) -> std::result::Result<Value, E>,
    ) -> std::result::Result<Vec<Option<Value>>, E> {
        let mut values: Vec<Option<Value>> = Vec::with_capacity(self.slots.len());
        for (i, slot) in self.slots.iter().enumerate() {
            let active = slot.is_active(&values);
            values.push(if active { Some(pick(i, slot)?) } else { None });
        }
        Ok(values)
    }
}

impl Domain {
    /// Maps a value into [0,1]; single-point ranges map to 0.
    pub fn to_unit(&self, value: &Value) -> Option<f64> {
        let unit = match (self, value) {
            (Domain::Int { lo, hi }, Value::Int(v)) => {
                if hi == lo {
                    0.0
                } else {
                    (*v - *lo) as f64 / (*hi - *lo) as f64
                }
            }
            (Domain::Float { lo, hi, log_scale }, Value::Float(v)) => {
                if hi == lo {
                    0.0
                } else if *log_scale {
                    (v.ln() - lo.ln()) / (hi.ln() - lo.ln())
                } else {
                    (v - lo) / (hi - lo)
                }
            }
            (Domain::Choice { values }, Value::Choice(v)) => {
                let idx = values.iter().position(|c| c == v)?;
                if values.len() == 1 {
                    0.0
                } else {
                    idx as f64 / (values.len() - 1) as f64
                }
            }
            _ => return None,
        };
        Some(unit.clamp(0.0, 1.0))
    }

    /// Inverse of [`Domain::to_unit`]; `x` must lie in [0,1].
    pub fn from_unit(&self, x: f64) -> Value {
        match self {
            Domain::Int { lo, hi } => Value::Int(lo + (x * (hi - lo) as f64).round() as i64),
            Domain::Float { lo, hi, log_scale } => {
                let v = if *log_scale {
                    (lo.ln() + x * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + x * (hi - lo)
                };
                Value::Float(v.clamp(*lo, *hi))
            }
            Domain::Choice { values } => {
                let idx = (x * (values.len() - 1) as f64).round() as usize;
                Value::Choice(values[idx.min(values.len() - 1)].clone())
            }
        }
    }

    /// Nearest in-range value of the same kind, if one exists.
    pub fn project(&self, value: &Value) -> Option<Value> {
        match (self, value) {
            (Domain::Int { lo, hi }, Value::Int(v)) => Some(Value::Int((*v).clamp(*lo, *hi))),
            (Domain::Float { lo, hi, .. }, Value::Float(v)) => Some(Value::Float(v.clamp(*lo, *hi))),
            (Domain::Choice { .. }, Value::Choice(_)) if self.contains(value) => Some(value.clone()),
            _ => None,
        }
    }
}
