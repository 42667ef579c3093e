//! The construction algebra: class expressions, class definitions and
//! specifications.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

/// Labelled (exponential) or unlabelled (ordinary) model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    Labelled,
    #[default]
    Unlabelled,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Labelled => f.write_str("labelled"),
            Mode::Unlabelled => f.write_str("unlabelled"),
        }
    }
}

/// The default atom type, written `Z` in the DSL.
pub const DEFAULT_ATOM: &str = "Z";

/// A class expression over the construction algebra.
///
/// Atom types are identified by their DSL spelling: `Z` for the default
/// atom and `Z_a` for an atom of type `a`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ClassExpr {
    /// The class holding the single structure of size 0.
    Empty,
    Atom(String),
    Ref(String),
    Union(Box<ClassExpr>, Box<ClassExpr>),
    Product(Box<ClassExpr>, Box<ClassExpr>),
    Seq(Box<ClassExpr>),
    /// Labelled only.
    Cycle(Box<ClassExpr>),
    /// Labelled only.
    Set(Box<ClassExpr>),
    /// Unlabelled only.
    MSet(Box<ClassExpr>),
}

impl ClassExpr {
    pub fn atom() -> Self {
        ClassExpr::Atom(DEFAULT_ATOM.to_string())
    }

    pub fn reference(name: impl Into<String>) -> Self {
        ClassExpr::Ref(name.into())
    }

    pub fn union(a: ClassExpr, b: ClassExpr) -> Self {
        ClassExpr::Union(Box::new(a), Box::new(b))
    }

    pub fn product(a: ClassExpr, b: ClassExpr) -> Self {
        ClassExpr::Product(Box::new(a), Box::new(b))
    }

    pub fn seq(a: ClassExpr) -> Self {
        ClassExpr::Seq(Box::new(a))
    }

    pub fn cycle(a: ClassExpr) -> Self {
        ClassExpr::Cycle(Box::new(a))
    }

    pub fn set(a: ClassExpr) -> Self {
        ClassExpr::Set(Box::new(a))
    }

    pub fn mset(a: ClassExpr) -> Self {
        ClassExpr::MSet(Box::new(a))
    }

    /// Visits every sub-expression, parents before children.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a ClassExpr)) {
        f(self);
        match self {
            ClassExpr::Empty | ClassExpr::Atom(_) | ClassExpr::Ref(_) => {}
            ClassExpr::Union(a, b) | ClassExpr::Product(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            ClassExpr::Seq(a) | ClassExpr::Cycle(a) | ClassExpr::Set(a) | ClassExpr::MSet(a) => a.walk(f),
        }
    }
}

/// Body of a class definition.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ClassBody {
    Plain(ClassExpr),
    /// `A' = rhs` together with `A(0) = initial_count`. Labelled only.
    Differential { rhs: ClassExpr, initial_count: u64 },
}

impl ClassBody {
    pub fn expr(&self) -> &ClassExpr {
        match self {
            ClassBody::Plain(e) => e,
            ClassBody::Differential { rhs, .. } => rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassDef {
    pub name: String,
    pub body: ClassBody,
}

impl ClassDef {
    pub fn plain(name: impl Into<String>, expr: ClassExpr) -> Self {
        ClassDef { name: name.into(), body: ClassBody::Plain(expr) }
    }

    pub fn differential(name: impl Into<String>, rhs: ClassExpr, initial_count: u64) -> Self {
        ClassDef { name: name.into(), body: ClassBody::Differential { rhs, initial_count } }
    }

    pub fn is_differential(&self) -> bool {
        matches!(self.body, ClassBody::Differential { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("class `{0}` is defined more than once")]
    DuplicateClass(String),
    #[error("class `{class}` refers to undefined class `{name}`")]
    UnresolvedReference { class: String, name: String },
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("atom weight for `{atom}` must be positive and finite, got {weight}")]
    InvalidWeight { atom: String, weight: f64 },
}

/// A combinatorial specification: an ordered system of class equations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Spec {
    pub mode: Mode,
    pub defs: Vec<ClassDef>,
    atom_weights: BTreeMap<String, f64>,
}

impl Spec {
    pub fn new(mode: Mode, defs: Vec<ClassDef>) -> Self {
        Spec { mode, defs, atom_weights: BTreeMap::new() }
    }

    pub fn class_names(&self) -> impl Iterator<Item = &str> {
        self.defs.iter().map(|d| d.name.as_str())
    }

    pub fn def(&self, name: &str) -> Option<&ClassDef> {
        self.defs.iter().find(|d| d.name == name)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.defs.iter().position(|d| d.name == name)
    }

    /// Atom types occurring anywhere in the definitions.
    pub fn atom_types(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for d in &self.defs {
            d.body.expr().walk(&mut |e| {
                if let ClassExpr::Atom(t) = e {
                    out.insert(t.clone());
                }
            });
        }
        out
    }

    /// Weight of an atom type; 1 unless set.
    pub fn atom_weight(&self, atom: &str) -> f64 {
        self.atom_weights.get(atom).copied().unwrap_or(1.0)
    }

    pub fn set_atom_weight(&mut self, atom: impl Into<String>, weight: f64) -> Result<(), SpecError> {
        let atom = atom.into();
        if !(weight.is_finite() && weight > 0.0) {
            return Err(SpecError::InvalidWeight { atom, weight });
        }
        if weight == 1.0 {
            self.atom_weights.remove(&atom);
        } else {
            self.atom_weights.insert(atom, weight);
        }
        Ok(())
    }

    pub fn has_unit_weights(&self) -> bool {
        self.atom_weights.is_empty()
    }

    pub fn has_differential(&self) -> bool {
        self.defs.iter().any(ClassDef::is_differential)
    }

    /// Checks for duplicate names and dangling references and returns the
    /// name-to-index map.
    pub fn resolve(&self) -> Result<HashMap<&str, usize>, SpecError> {
        let mut index = HashMap::with_capacity(self.defs.len());
        for (i, d) in self.defs.iter().enumerate() {
            if index.insert(d.name.as_str(), i).is_some() {
                return Err(SpecError::DuplicateClass(d.name.clone()));
            }
        }
        for d in &self.defs {
            let mut missing = None;
            d.body.expr().walk(&mut |e| {
                if let ClassExpr::Ref(n) = e {
                    if missing.is_none() && !index.contains_key(n.as_str()) {
                        missing = Some(n.clone());
                    }
                }
            });
            if let Some(name) = missing {
                return Err(SpecError::UnresolvedReference { class: d.name.clone(), name });
            }
        }
        Ok(index)
    }

    /// Indices of the classes reachable from `roots` through references,
    /// in ascending order. Assumes the spec resolves.
    pub fn closure(&self, roots: &[usize]) -> Vec<usize> {
        let index: HashMap<&str, usize> = self.defs.iter().enumerate().map(|(i, d)| (d.name.as_str(), i)).collect();
        let mut seen = vec![false; self.defs.len()];
        let mut stack: Vec<usize> = roots.to_vec();
        while let Some(c) = stack.pop() {
            if std::mem::replace(&mut seen[c], true) {
                continue;
            }
            self.defs[c].body.expr().walk(&mut |e| {
                if let ClassExpr::Ref(n) = e {
                    if let Some(&j) = index.get(n.as_str()) {
                        if !seen[j] {
                            stack.push(j);
                        }
                    }
                }
            });
        }
        (0..self.defs.len()).filter(|&i| seen[i]).collect()
    }
}
