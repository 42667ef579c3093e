//! Static well-foundedness checks.
//!
//! A spec is accepted when every class has finitely many size-0 structures,
//! every class has at least one finite structure, and the argument of every
//! Seq/Cycle/Set/MSet has no structure of size 0. The checks are monotone
//! fixpoint passes over the class equations.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul};

use crate::spec::{ClassBody, ClassExpr, Mode, Spec, SpecError};

/// Cap above which a size-0 count is declared divergent.
pub const ZERO_COUNT_CAP: u64 = 1 << 32;

/// A natural number or infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExtNat {
    Finite(u64),
    Infinite,
}

impl ExtNat {
    pub const ZERO: ExtNat = ExtNat::Finite(0);
    pub const ONE: ExtNat = ExtNat::Finite(1);

    pub fn is_finite(self) -> bool {
        matches!(self, ExtNat::Finite(_))
    }

    pub fn finite(self) -> Option<u64> {
        match self {
            ExtNat::Finite(n) => Some(n),
            ExtNat::Infinite => None,
        }
    }

    fn capped(self, cap: u64) -> ExtNat {
        match self {
            ExtNat::Finite(n) if n > cap => ExtNat::Infinite,
            other => other,
        }
    }
}

impl Add for ExtNat {
    type Output = ExtNat;
    fn add(self, rhs: ExtNat) -> ExtNat {
        match (self, rhs) {
            (ExtNat::Finite(a), ExtNat::Finite(b)) => a.checked_add(b).map_or(ExtNat::Infinite, ExtNat::Finite),
            _ => ExtNat::Infinite,
        }
    }
}

impl Mul for ExtNat {
    type Output = ExtNat;
    /// `0 * inf = 0`: an empty factor kills the product.
    fn mul(self, rhs: ExtNat) -> ExtNat {
        match (self, rhs) {
            (ExtNat::Finite(0), _) | (_, ExtNat::Finite(0)) => ExtNat::ZERO,
            (ExtNat::Finite(a), ExtNat::Finite(b)) => a.checked_mul(b).map_or(ExtNat::Infinite, ExtNat::Finite),
            _ => ExtNat::Infinite,
        }
    }
}

impl fmt::Display for ExtNat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtNat::Finite(n) => write!(f, "{n}"),
            ExtNat::Infinite => f.write_str("inf"),
        }
    }
}

/// One violated condition, attached to the class where it was found.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Diagnostic {
    pub class: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub ok: bool,
    pub zero_counts: BTreeMap<String, ExtNat>,
    pub min_sizes: BTreeMap<String, ExtNat>,
    pub diagnostics: Vec<Diagnostic>,
}

struct Resolved<'a> {
    spec: &'a Spec,
    index: std::collections::HashMap<&'a str, usize>,
}

impl<'a> Resolved<'a> {
    fn new(spec: &'a Spec) -> Result<Self, SpecError> {
        Ok(Resolved { spec, index: spec.resolve()? })
    }

    fn idx(&self, name: &str) -> usize {
        self.index[name]
    }
}

fn zero_count_expr(r: &Resolved<'_>, e: &ClassExpr, z: &[ExtNat]) -> ExtNat {
    match e {
        ClassExpr::Empty => ExtNat::ONE,
        ClassExpr::Atom(_) => ExtNat::ZERO,
        ClassExpr::Ref(n) => z[r.idx(n)],
        ClassExpr::Union(a, b) => zero_count_expr(r, a, z) + zero_count_expr(r, b, z),
        ClassExpr::Product(a, b) => zero_count_expr(r, a, z) * zero_count_expr(r, b, z),
        ClassExpr::Seq(a) | ClassExpr::Set(a) | ClassExpr::MSet(a) => {
            if zero_count_expr(r, a, z) == ExtNat::ZERO {
                ExtNat::ONE
            } else {
                ExtNat::Infinite
            }
        }
        ClassExpr::Cycle(a) => {
            if zero_count_expr(r, a, z) == ExtNat::ZERO {
                ExtNat::ZERO
            } else {
                ExtNat::Infinite
            }
        }
    }
}

fn zero_count_class(r: &Resolved<'_>, c: usize, z: &[ExtNat]) -> ExtNat {
    match &r.spec.defs[c].body {
        ClassBody::Plain(e) => zero_count_expr(r, e, z),
        ClassBody::Differential { initial_count, .. } => ExtNat::Finite(*initial_count),
    }
}

/// Classes whose size-0 count has a nonzero partial derivative in `e`.
fn zero_count_deps(r: &Resolved<'_>, e: &ClassExpr, z: &[ExtNat], out: &mut Vec<usize>) {
    match e {
        ClassExpr::Empty | ClassExpr::Atom(_) => {}
        ClassExpr::Ref(n) => out.push(r.idx(n)),
        ClassExpr::Union(a, b) => {
            zero_count_deps(r, a, z, out);
            zero_count_deps(r, b, z, out);
        }
        ClassExpr::Product(a, b) => {
            if zero_count_expr(r, b, z) != ExtNat::ZERO {
                zero_count_deps(r, a, z, out);
            }
            if zero_count_expr(r, a, z) != ExtNat::ZERO {
                zero_count_deps(r, b, z, out);
            }
        }
        ClassExpr::Seq(a) | ClassExpr::Set(a) | ClassExpr::MSet(a) | ClassExpr::Cycle(a) => {
            if zero_count_expr(r, a, z) != ExtNat::ZERO {
                zero_count_deps(r, a, z, out);
            }
        }
    }
}

/// Runs the size-0 fixpoint with the classes in `forced` pinned to infinity.
fn zero_count_fixpoint(r: &Resolved<'_>, forced: &[bool]) -> Vec<ExtNat> {
    let n = r.spec.defs.len();
    let mut z: Vec<ExtNat> = forced.iter().map(|&f| if f { ExtNat::Infinite } else { ExtNat::ZERO }).collect();
    let rounds = n + 1;
    let mut changed_last = vec![false; n];
    for _ in 0..rounds {
        let next: Vec<ExtNat> = (0..n)
            .map(|c| if forced[c] { ExtNat::Infinite } else { zero_count_class(r, c, &z).capped(ZERO_COUNT_CAP) })
            .collect();
        for c in 0..n {
            changed_last[c] = next[c] != z[c];
        }
        z = next;
        if !changed_last.iter().any(|&b| b) {
            return z;
        }
    }
    // still growing after n+1 rounds: those classes diverge
    let pinned: Vec<bool> = (0..n).map(|c| forced[c] || changed_last[c] || z[c] == ExtNat::Infinite).collect();
    zero_count_fixpoint(r, &pinned)
}

fn zero_counts_indexed(r: &Resolved<'_>) -> Vec<ExtNat> {
    let n = r.spec.defs.len();
    let mut forced = vec![false; n];
    let mut z = zero_count_fixpoint(r, &forced);

    // A class on a cycle of nonzero size-0 dependencies is circular: it
    // would build size-0 structures from themselves.
    let deps: Vec<Vec<usize>> = (0..n)
        .map(|c| {
            let mut out = Vec::new();
            if let ClassBody::Plain(e) = &r.spec.defs[c].body {
                zero_count_deps(r, e, &z, &mut out);
            }
            out
        })
        .collect();
    let mut any = false;
    for c in 0..n {
        if reaches(&deps, c, c) {
            forced[c] = true;
            any = true;
        }
    }
    if any {
        z = zero_count_fixpoint(r, &forced);
        // propagate along nonzero edges until nothing new is infinite
        loop {
            let mut grew = false;
            for c in 0..n {
                if z[c] != ExtNat::Infinite && deps[c].iter().any(|&d| z[d] == ExtNat::Infinite) {
                    forced[c] = true;
                    grew = true;
                }
            }
            if !grew {
                break;
            }
            z = zero_count_fixpoint(r, &forced);
        }
    }
    z
}

fn reaches(deps: &[Vec<usize>], from: usize, target: usize) -> bool {
    let mut seen = vec![false; deps.len()];
    let mut stack = deps[from].clone();
    while let Some(c) = stack.pop() {
        if c == target {
            return true;
        }
        if !std::mem::replace(&mut seen[c], true) {
            stack.extend(deps[c].iter().copied());
        }
    }
    false
}

/// Number of size-0 structures of every class.
pub fn zero_size_counts(spec: &Spec) -> Result<BTreeMap<String, ExtNat>, SpecError> {
    let r = Resolved::new(spec)?;
    let z = zero_counts_indexed(&r);
    Ok(spec.defs.iter().map(|d| d.name.clone()).zip(z).collect())
}

fn min_size_expr(r: &Resolved<'_>, e: &ClassExpr, m: &[ExtNat]) -> ExtNat {
    match e {
        ClassExpr::Empty => ExtNat::ZERO,
        ClassExpr::Atom(_) => ExtNat::ONE,
        ClassExpr::Ref(n) => m[r.idx(n)],
        ClassExpr::Union(a, b) => min_size_expr(r, a, m).min(min_size_expr(r, b, m)),
        ClassExpr::Product(a, b) => min_size_expr(r, a, m) + min_size_expr(r, b, m),
        ClassExpr::Seq(_) | ClassExpr::Set(_) | ClassExpr::MSet(_) => ExtNat::ZERO,
        ClassExpr::Cycle(a) => min_size_expr(r, a, m),
    }
}

fn min_sizes_indexed(r: &Resolved<'_>) -> Vec<ExtNat> {
    let n = r.spec.defs.len();
    let mut m = vec![ExtNat::Infinite; n];
    loop {
        let next: Vec<ExtNat> = (0..n)
            .map(|c| match &r.spec.defs[c].body {
                ClassBody::Plain(e) => min_size_expr(r, e, &m),
                ClassBody::Differential { rhs, initial_count } => {
                    let base = if *initial_count > 0 { ExtNat::ZERO } else { ExtNat::Infinite };
                    base.min(min_size_expr(r, rhs, &m) + ExtNat::ONE)
                }
            })
            .collect();
        if next == m {
            return m;
        }
        m = next;
    }
}

/// Size of the smallest structure of every class.
pub fn min_sizes(spec: &Spec) -> Result<BTreeMap<String, ExtNat>, SpecError> {
    let r = Resolved::new(spec)?;
    let m = min_sizes_indexed(&r);
    Ok(spec.defs.iter().map(|d| d.name.clone()).zip(m).collect())
}

fn construction_name(e: &ClassExpr) -> &'static str {
    match e {
        ClassExpr::Seq(_) => "Seq",
        ClassExpr::Cycle(_) => "Cycle",
        ClassExpr::Set(_) => "Set",
        ClassExpr::MSet(_) => "MSet",
        _ => "",
    }
}

/// Full static check. Violations are reported as data.
pub fn validate_spec(spec: &Spec) -> ValidationReport {
    let mut diagnostics = Vec::new();
    let r = match Resolved::new(spec) {
        Ok(r) => r,
        Err(err) => {
            let class = match &err {
                SpecError::DuplicateClass(c) => c.clone(),
                SpecError::UnresolvedReference { class, .. } => class.clone(),
                _ => String::new(),
            };
            return ValidationReport {
                ok: false,
                zero_counts: BTreeMap::new(),
                min_sizes: BTreeMap::new(),
                diagnostics: vec![Diagnostic { class, reason: err.to_string() }],
            };
        }
    };
    if spec.defs.is_empty() {
        diagnostics.push(Diagnostic { class: String::new(), reason: "specification defines no classes".into() });
    }
    let z = zero_counts_indexed(&r);
    let m = min_sizes_indexed(&r);

    for (c, def) in spec.defs.iter().enumerate() {
        let mut push = |reason: String| diagnostics.push(Diagnostic { class: def.name.clone(), reason });
        if def.is_differential() && spec.mode == Mode::Unlabelled {
            push("differential definitions require labelled mode".into());
        }
        let mut found = Vec::new();
        def.body.expr().walk(&mut |e| found.push(e));
        for e in found {
            match e {
                ClassExpr::Cycle(_) | ClassExpr::Set(_) if spec.mode == Mode::Unlabelled => {
                    push(format!("{} construction requires labelled mode", construction_name(e)));
                }
                ClassExpr::MSet(_) if spec.mode == Mode::Labelled => {
                    push("MSet construction requires unlabelled mode".into());
                }
                _ => {}
            }
            if let ClassExpr::Seq(a) | ClassExpr::Cycle(a) | ClassExpr::Set(a) | ClassExpr::MSet(a) = e {
                if zero_count_expr(&r, a, &z) != ExtNat::ZERO {
                    push(format!("{} argument admits size-0 structures", construction_name(e)));
                }
            }
        }
        if z[c] == ExtNat::Infinite {
            push("infinitely many structures of size 0".into());
        }
        if m[c] == ExtNat::Infinite {
            push("class admits no finite structure".into());
        }
    }
    for atom in spec.atom_types() {
        let w = spec.atom_weight(&atom);
        if !(w.is_finite() && w > 0.0) {
            diagnostics.push(Diagnostic { class: String::new(), reason: format!("atom `{atom}` has invalid weight {w}") });
        }
    }
    diagnostics.sort();
    diagnostics.dedup();
    let names = || spec.defs.iter().map(|d| d.name.clone());
    ValidationReport {
        ok: diagnostics.is_empty(),
        zero_counts: names().zip(z).collect(),
        min_sizes: names().zip(m).collect(),
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{ClassDef, ClassExpr as E};

    fn plane_trees() -> Spec {
        Spec::new(
            Mode::Unlabelled,
            vec![ClassDef::plain("P", E::product(E::atom(), E::seq(E::reference("P"))))],
        )
    }

    #[test]
    fn zero_counts_examples() {
        assert_eq!(zero_size_counts(&plane_trees()).unwrap()["P"], ExtNat::ZERO);
        let e = Spec::new(
            Mode::Unlabelled,
            vec![ClassDef::plain("E", E::union(E::Empty, E::product(E::atom(), E::reference("E"))))],
        );
        assert_eq!(zero_size_counts(&e).unwrap()["E"], ExtNat::ONE);
        let b = Spec::new(Mode::Unlabelled, vec![ClassDef::plain("B", E::product(E::Empty, E::reference("B")))]);
        assert_eq!(zero_size_counts(&b).unwrap()["B"], ExtNat::Infinite);
    }

    #[test]
    fn growing_zero_count_diverges() {
        // B_0 = B_0 + 1 never stabilises
        let b = Spec::new(Mode::Unlabelled, vec![ClassDef::plain("B", E::union(E::reference("B"), E::Empty))]);
        assert_eq!(zero_size_counts(&b).unwrap()["B"], ExtNat::Infinite);
    }

    #[test]
    fn min_sizes_examples() {
        assert_eq!(min_sizes(&plane_trees()).unwrap()["P"], ExtNat::ONE);
        let c = Spec::new(Mode::Unlabelled, vec![ClassDef::plain("C", E::product(E::atom(), E::reference("C")))]);
        assert_eq!(min_sizes(&c).unwrap()["C"], ExtNat::Infinite);
        let t = Spec::new(
            Mode::Labelled,
            vec![ClassDef::differential("T", E::union(E::Empty, E::product(E::reference("T"), E::reference("T"))), 0)],
        );
        assert_eq!(min_sizes(&t).unwrap()["T"], ExtNat::ONE);
    }

    #[test]
    fn unresolved_reference_is_a_name_error() {
        let s = Spec::new(Mode::Unlabelled, vec![ClassDef::plain("A", E::reference("Q"))]);
        assert!(matches!(zero_size_counts(&s), Err(SpecError::UnresolvedReference { .. })));
        assert!(matches!(min_sizes(&s), Err(SpecError::UnresolvedReference { .. })));
        assert!(!validate_spec(&s).ok);
    }

    #[test]
    fn validate_examples() {
        assert!(validate_spec(&plane_trees()).ok);

        let s = Spec::new(
            Mode::Unlabelled,
            vec![
                ClassDef::plain("S", E::seq(E::reference("E"))),
                ClassDef::plain("E", E::union(E::Empty, E::atom())),
            ],
        );
        let rep = validate_spec(&s);
        assert!(!rep.ok);
        assert!(rep.diagnostics.iter().any(|d| d.class == "S" && d.reason == "Seq argument admits size-0 structures"));

        let s = Spec::new(Mode::Unlabelled, vec![ClassDef::plain("S", E::set(E::atom()))]);
        let rep = validate_spec(&s);
        assert!(!rep.ok);
        assert!(rep.diagnostics.iter().any(|d| d.reason.contains("requires labelled mode")));
    }

    #[test]
    fn same_size_circularity_is_rejected() {
        // P = Z + E*P with E = 1 + Z: finite c_0 and min size, infinite c_1
        let s = Spec::new(
            Mode::Unlabelled,
            vec![
                ClassDef::plain("P", E::union(E::atom(), E::product(E::reference("E"), E::reference("P")))),
                ClassDef::plain("E", E::union(E::Empty, E::atom())),
            ],
        );
        let rep = validate_spec(&s);
        assert!(!rep.ok);
        assert_eq!(rep.zero_counts["P"], ExtNat::Infinite);
    }

    #[test]
    fn report_independent_of_definition_order() {
        let defs = vec![
            ClassDef::plain("A", E::product(E::atom(), E::seq(E::reference("B")))),
            ClassDef::plain("B", E::union(E::reference("A"), E::atom())),
            ClassDef::plain("C", E::seq(E::union(E::Empty, E::reference("A")))),
        ];
        let fwd = validate_spec(&Spec::new(Mode::Unlabelled, defs.clone()));
        let mut rev = defs;
        rev.reverse();
        let bwd = validate_spec(&Spec::new(Mode::Unlabelled, rev));
        assert_eq!(fwd, bwd);
    }
}
