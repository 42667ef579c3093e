//! Flattened, index-based form of a spec shared by the enumerator, the
//! oracle and the samplers.

use crate::spec::{ClassBody, ClassExpr, Mode, Spec, SpecError};

pub(crate) type NodeId = usize;
pub(crate) type ClassId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Op {
    Empty,
    Atom(usize),
    Ref(ClassId),
    Union(NodeId, NodeId),
    Product(NodeId, NodeId),
    Seq(NodeId),
    Cycle(NodeId),
    Set(NodeId),
    MSet(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Plain,
    Differential { initial_count: u64 },
}

/// Every class expression stored in post-order: children always have a
/// smaller index than their parent, so a forward pass over `nodes`
/// evaluates everything once the class values are known.
#[derive(Debug, Clone)]
pub(crate) struct Program {
    pub mode: Mode,
    pub names: Vec<String>,
    pub kinds: Vec<Kind>,
    /// Root node of each class body (the right-hand side for differential
    /// classes).
    pub roots: Vec<NodeId>,
    pub nodes: Vec<Op>,
    pub owner: Vec<ClassId>,
    pub atoms: Vec<String>,
    pub weights: Vec<f64>,
}

impl Program {
    pub fn new(spec: &Spec) -> Result<Self, SpecError> {
        let index = spec.resolve()?;
        let atoms: Vec<String> = spec.atom_types().into_iter().collect();
        let weights = atoms.iter().map(|a| spec.atom_weight(a)).collect();
        let mut prog = Program {
            mode: spec.mode,
            names: spec.defs.iter().map(|d| d.name.clone()).collect(),
            kinds: Vec::with_capacity(spec.defs.len()),
            roots: Vec::with_capacity(spec.defs.len()),
            nodes: Vec::new(),
            owner: Vec::new(),
            atoms,
            weights,
        };
        for (c, d) in spec.defs.iter().enumerate() {
            let kind = match d.body {
                ClassBody::Plain(_) => Kind::Plain,
                ClassBody::Differential { initial_count, .. } => Kind::Differential { initial_count },
            };
            prog.kinds.push(kind);
            let root = prog.flatten(d.body.expr(), c, &|n| index[n]);
            prog.roots.push(root);
        }
        Ok(prog)
    }

    fn flatten(&mut self, e: &ClassExpr, owner: ClassId, lookup: &dyn Fn(&str) -> usize) -> NodeId {
        let op = match e {
            ClassExpr::Empty => Op::Empty,
            ClassExpr::Atom(a) => Op::Atom(self.atoms.iter().position(|x| x == a).expect("collected atom")),
            ClassExpr::Ref(n) => Op::Ref(lookup(n)),
            ClassExpr::Union(a, b) => {
                let a = self.flatten(a, owner, lookup);
                let b = self.flatten(b, owner, lookup);
                Op::Union(a, b)
            }
            ClassExpr::Product(a, b) => {
                let a = self.flatten(a, owner, lookup);
                let b = self.flatten(b, owner, lookup);
                Op::Product(a, b)
            }
            ClassExpr::Seq(a) => Op::Seq(self.flatten(a, owner, lookup)),
            ClassExpr::Cycle(a) => Op::Cycle(self.flatten(a, owner, lookup)),
            ClassExpr::Set(a) => Op::Set(self.flatten(a, owner, lookup)),
            ClassExpr::MSet(a) => Op::MSet(self.flatten(a, owner, lookup)),
        };
        self.nodes.push(op);
        self.owner.push(owner);
        self.nodes.len() - 1
    }

    pub fn class_count(&self) -> usize {
        self.names.len()
    }

    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_differential(&self, c: ClassId) -> bool {
        matches!(self.kinds[c], Kind::Differential { .. })
    }

    /// Nodes of the sub-expression rooted at `n` (inclusive), ascending.
    pub fn subtree(&self, n: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![n];
        while let Some(m) = stack.pop() {
            out.push(m);
            match self.nodes[m] {
                Op::Union(a, b) | Op::Product(a, b) => {
                    stack.push(a);
                    stack.push(b);
                }
                Op::Seq(a) | Op::Cycle(a) | Op::Set(a) | Op::MSet(a) => stack.push(a),
                _ => {}
            }
        }
        out.sort_unstable();
        out
    }

    /// Classes referenced directly inside the sub-expression rooted at `n`.
    pub fn refs_in(&self, n: NodeId) -> Vec<ClassId> {
        let mut out: Vec<ClassId> =
            self.subtree(n).into_iter().filter_map(|m| if let Op::Ref(c) = self.nodes[m] { Some(c) } else { None }).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Classes reachable from `roots` through references, as a mask.
    pub fn closure(&self, roots: &[ClassId]) -> Vec<bool> {
        let mut seen = vec![false; self.class_count()];
        let mut stack = roots.to_vec();
        while let Some(c) = stack.pop() {
            if std::mem::replace(&mut seen[c], true) {
                continue;
            }
            for d in self.refs_in(self.roots[c]) {
                if !seen[d] {
                    stack.push(d);
                }
            }
        }
        seen
    }

    pub fn mset_nodes(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, op)| if let Op::MSet(a) = op { Some((i, *a)) } else { None })
    }
}
