//! Sampled structures: an arena of construction nodes.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::stream::SessionStream;

pub type NodeRef = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Construction {
    Seq,
    Cycle,
    Set,
    MSet,
}

impl Construction {
    /// Lower-case name used in JSON.
    pub fn name(self) -> &'static str {
        match self {
            Construction::Seq => "seq",
            Construction::Cycle => "cycle",
            Construction::Set => "set",
            Construction::MSet => "mset",
        }
    }

    fn term_name(self) -> &'static str {
        match self {
            Construction::Seq => "Seq",
            Construction::Cycle => "Cycle",
            Construction::Set => "Set",
            Construction::MSet => "MSet",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    /// One of the size-0 structures of a class; `variant` tells several
    /// apart (differential classes with `A(0) > 1`).
    Empty { variant: u64 },
    Atom { ty: u32, label: Option<u64> },
    Pair(NodeRef, NodeRef),
    List { construction: Construction, items: Vec<NodeRef> },
    /// Named-class boundary. `differential` marks one unrolling of a
    /// differential class: its inner node is empty or `Pair(atom, rest)`.
    Class { class: u32, differential: bool, inner: NodeRef },
}

/// Names shared by all structures of one spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Symbols {
    pub classes: Vec<String>,
    pub atoms: Vec<String>,
    pub labelled: bool,
}

/// A finite tree of construction nodes. Children always precede their
/// parent in the arena; the copies inside an MSet share one subtree.
#[derive(Debug, Clone)]
pub struct Structure {
    nodes: Vec<Node>,
    sizes: Vec<u64>,
    root: NodeRef,
    symbols: Arc<Symbols>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabelError {
    #[error("labels only exist in labelled mode")]
    Unlabelled,
}

/// Output options shared by the JSON and term writers.
#[derive(Debug, Clone, Copy, Default)]
pub struct WriteOptions {
    /// Drop the named-class wrappers.
    pub bare: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct Builder {
    nodes: Vec<Node>,
    sizes: Vec<u64>,
}

impl Builder {
    pub fn new() -> Self {
        Builder { nodes: Vec::new(), sizes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn size(&self, n: NodeRef) -> u64 {
        self.sizes[n]
    }

    pub fn push(&mut self, node: Node) -> NodeRef {
        let size = match &node {
            Node::Empty { .. } => 0,
            Node::Atom { .. } => 1,
            Node::Pair(a, b) => self.sizes[*a] + self.sizes[*b],
            Node::List { items, .. } => items.iter().map(|&i| self.sizes[i]).sum(),
            Node::Class { inner, .. } => self.sizes[*inner],
        };
        self.nodes.push(node);
        self.sizes.push(size);
        self.nodes.len() - 1
    }

    pub fn finish(self, root: NodeRef, symbols: Arc<Symbols>) -> Structure {
        Structure { nodes: self.nodes, sizes: self.sizes, root, symbols }
    }
}

impl Structure {
    pub fn size(&self) -> u64 {
        self.sizes[self.root]
    }

    pub fn root(&self) -> NodeRef {
        self.root
    }

    pub fn node(&self, n: NodeRef) -> &Node {
        &self.nodes[n]
    }

    pub fn node_size(&self, n: NodeRef) -> u64 {
        self.sizes[n]
    }

    pub fn arena_len(&self) -> usize {
        self.nodes.len()
    }

    pub fn symbols(&self) -> &Symbols {
        &self.symbols
    }

    /// Class name at the root, if the root is a class wrapper.
    pub fn class_name(&self) -> Option<&str> {
        match self.nodes[self.root] {
            Node::Class { class, .. } => Some(&self.symbols.classes[class as usize]),
            _ => None,
        }
    }

    fn children(&self, n: NodeRef) -> &[NodeRef] {
        match &self.nodes[n] {
            Node::Pair(a, _) => std::slice::from_ref(a),
            Node::List { items, .. } => items,
            Node::Class { inner, .. } => std::slice::from_ref(inner),
            _ => &[],
        }
    }

    /// Visits nodes depth first, left to right, including every copy of a
    /// shared subtree.
    pub fn preorder(&self) -> Vec<NodeRef> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            out.push(n);
            if let Node::Pair(a, b) = self.nodes[n] {
                stack.push(b);
                stack.push(a);
            } else {
                stack.extend(self.children(n).iter().rev());
            }
        }
        out
    }

    /// Atom labels in depth-first order.
    pub fn labels(&self) -> Vec<Option<u64>> {
        self.preorder()
            .into_iter()
            .filter_map(|n| if let Node::Atom { label, .. } = self.nodes[n] { Some(label) } else { None })
            .collect()
    }

    /// Writes labels `1..=size`: one uniform permutation is cut into
    /// consecutive blocks in depth-first order, where a block is a free atom
    /// or a whole differential unrolling; an unrolling gives the largest
    /// label of its block to its own atom and cuts the rest the same way.
    pub fn assign_labels(&mut self, stream: &mut SessionStream) -> Result<(), LabelError> {
        if !self.symbols.labelled {
            return Err(LabelError::Unlabelled);
        }
        let n = self.size() as usize;
        let mut perm: Vec<u64> = (1..=n as u64).collect();
        for i in (1..n).rev() {
            let j = stream.below(i as u64 + 1) as usize;
            perm.swap(i, j);
        }
        // (block root, start, end) over perm; the root block has no atom
        let mut work = vec![(self.root, 0usize, n, false)];
        while let Some((block, start, end, own_atom)) = work.pop() {
            let mut pos = start;
            let mut scan = Vec::new();
            if own_atom {
                // the unrolling's atom takes the block maximum
                let seg = &mut perm[start..end];
                let (imax, _) = seg.iter().enumerate().max_by_key(|(_, v)| **v).expect("nonempty block");
                seg[imax..].rotate_left(1);
                let Node::Class { inner, .. } = self.nodes[block] else { unreachable!() };
                let Node::Pair(atom, rest) = self.nodes[inner] else { unreachable!() };
                if let Node::Atom { label, .. } = &mut self.nodes[atom] {
                    *label = Some(perm[end - 1]);
                }
                scan.push(rest);
            } else {
                scan.push(block);
            }
            let limit = if own_atom { end - 1 } else { end };
            while let Some(m) = scan.pop() {
                match self.nodes[m] {
                    Node::Atom { .. } => {
                        if let Node::Atom { label, .. } = &mut self.nodes[m] {
                            *label = Some(perm[pos]);
                        }
                        pos += 1;
                    }
                    Node::Class { differential: true, .. } if self.sizes[m] > 0 => {
                        let len = self.sizes[m] as usize;
                        work.push((m, pos, pos + len, true));
                        pos += len;
                    }
                    Node::Pair(a, b) => {
                        scan.push(b);
                        scan.push(a);
                    }
                    _ => scan.extend(self.children(m).iter().rev()),
                }
            }
            debug_assert_eq!(pos, limit);
        }
        Ok(())
    }

    fn atom_text(&self, ty: u32, label: Option<u64>, out: &mut String) {
        out.push_str(&self.symbols.atoms[ty as usize]);
        if let Some(l) = label {
            let _ = write!(out, "@{l}");
        }
    }

    /// JSON object per node:
    /// `{"class":..,"kind":"atom|empty|pair|list","construction":..,"label":..,"items":[..]}`.
    pub fn to_json(&self, opts: WriteOptions) -> String {
        enum Task<'a> {
            Node(NodeRef, Option<u32>),
            Text(&'a str),
        }
        let mut out = String::new();
        let mut stack = vec![Task::Node(self.root, None)];
        let prefix = |out: &mut String, class: Option<u32>| {
            out.push('{');
            if let Some(c) = class {
                let _ = write!(out, "\"class\":{},", json_string(&self.symbols.classes[c as usize]));
            }
        };
        while let Some(task) = stack.pop() {
            let (n, class) = match task {
                Task::Text(t) => {
                    out.push_str(t);
                    continue;
                }
                Task::Node(n, class) => (n, class),
            };
            match &self.nodes[n] {
                Node::Class { class: c, inner, .. } => {
                    if opts.bare {
                        stack.push(Task::Node(*inner, class));
                    } else if matches!(self.nodes[*inner], Node::Class { .. }) || class.is_some() {
                        prefix(&mut out, Some(*c));
                        out.push_str("\"kind\":\"class\",\"items\":[");
                        stack.push(Task::Text("]}"));
                        stack.push(Task::Node(*inner, None));
                    } else {
                        stack.push(Task::Node(*inner, Some(*c)));
                    }
                }
                Node::Empty { variant } => {
                    prefix(&mut out, class);
                    out.push_str("\"kind\":\"empty\"");
                    if *variant > 0 {
                        let _ = write!(out, ",\"variant\":{variant}");
                    }
                    out.push('}');
                }
                Node::Atom { ty, label } => {
                    prefix(&mut out, class);
                    let _ = write!(out, "\"kind\":\"atom\",\"type\":{}", json_string(&self.symbols.atoms[*ty as usize]));
                    if let Some(l) = label {
                        let _ = write!(out, ",\"label\":{l}");
                    }
                    out.push('}');
                }
                Node::Pair(a, b) => {
                    prefix(&mut out, class);
                    out.push_str("\"kind\":\"pair\",\"items\":[");
                    stack.push(Task::Text("]}"));
                    stack.push(Task::Node(*b, None));
                    stack.push(Task::Text(","));
                    stack.push(Task::Node(*a, None));
                }
                Node::List { construction, items } => {
                    prefix(&mut out, class);
                    let _ = write!(out, "\"kind\":\"list\",\"construction\":\"{}\",\"items\":[", construction.name());
                    stack.push(Task::Text("]}"));
                    for (i, &it) in items.iter().enumerate().rev() {
                        stack.push(Task::Node(it, None));
                        if i > 0 {
                            stack.push(Task::Text(","));
                        }
                    }
                }
            }
        }
        out
    }

    /// Compact term text such as `P(Z,Seq[P(Z,Seq[])])`.
    pub fn to_term(&self, opts: WriteOptions) -> String {
        enum Task<'a> {
            Node(NodeRef),
            Text(&'a str),
        }
        let mut out = String::new();
        let mut stack = vec![Task::Node(self.root)];
        while let Some(task) = stack.pop() {
            let n = match task {
                Task::Text(t) => {
                    out.push_str(t);
                    continue;
                }
                Task::Node(n) => n,
            };
            match &self.nodes[n] {
                Node::Class { class, inner, .. } => {
                    if !opts.bare {
                        out.push_str(&self.symbols.classes[*class as usize]);
                        out.push('(');
                        stack.push(Task::Text(")"));
                    }
                    stack.push(Task::Node(*inner));
                }
                Node::Empty { variant } => {
                    out.push('1');
                    if *variant > 0 {
                        let _ = write!(out, "#{variant}");
                    }
                }
                Node::Atom { ty, label } => self.atom_text(*ty, *label, &mut out),
                Node::Pair(a, b) => {
                    for (i, &c) in [*b, *a].iter().enumerate() {
                        let nested = self.is_pair(c, opts);
                        if nested {
                            stack.push(Task::Text(")"));
                        }
                        stack.push(Task::Node(c));
                        if nested {
                            stack.push(Task::Text("("));
                        }
                        if i == 0 {
                            stack.push(Task::Text(","));
                        }
                    }
                }
                Node::List { construction, items } => {
                    out.push_str(construction.term_name());
                    out.push('[');
                    stack.push(Task::Text("]"));
                    for (i, &it) in items.iter().enumerate().rev() {
                        stack.push(Task::Node(it));
                        if i > 0 {
                            stack.push(Task::Text(","));
                        }
                    }
                }
            }
        }
        out
    }

    /// Whether `n` prints as a bare comma-separated pair.
    fn is_pair(&self, mut n: NodeRef, opts: WriteOptions) -> bool {
        loop {
            match self.nodes[n] {
                Node::Pair(..) => return true,
                Node::Class { inner, .. } if opts.bare => n = inner,
                _ => return false,
            }
        }
    }

    /// Term text identifying the structure up to the symmetries of Set,
    /// MSet (item order) and Cycle (rotation); labels are included.
    pub fn canonical_term(&self) -> String {
        let mut text: Vec<String> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let s = match node {
                Node::Class { class, inner, .. } => format!("{}({})", self.symbols.classes[*class as usize], text[*inner]),
                Node::Empty { variant } => {
                    if *variant > 0 {
                        format!("1#{variant}")
                    } else {
                        "1".to_string()
                    }
                }
                Node::Atom { ty, label } => {
                    let mut s = String::new();
                    self.atom_text(*ty, *label, &mut s);
                    s
                }
                Node::Pair(a, b) => format!("<{},{}>", text[*a], text[*b]),
                Node::List { construction, items } => {
                    let mut parts: Vec<&str> = items.iter().map(|&i| text[i].as_str()).collect();
                    match construction {
                        Construction::Set | Construction::MSet => parts.sort_unstable(),
                        Construction::Cycle => {
                            let best = (0..parts.len()).min_by(|&i, &j| {
                                let ri = parts[i..].iter().chain(&parts[..i]);
                                let rj = parts[j..].iter().chain(&parts[..j]);
                                ri.cmp(rj)
                            });
                            if let Some(r) = best {
                                parts.rotate_left(r);
                            }
                        }
                        Construction::Seq => {}
                    }
                    format!("{}[{}]", construction.term_name(), parts.join(","))
                }
            };
            text.push(s);
        }
        text.swap_remove(self.root)
    }
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialisation")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symbols(labelled: bool) -> Arc<Symbols> {
        Arc::new(Symbols { classes: vec!["P".into()], atoms: vec!["Z".into()], labelled })
    }

    /// `P(Z, Seq[P(Z, Seq[])])`
    fn small_tree(labelled: bool) -> Structure {
        let mut b = Builder::new();
        let a1 = b.push(Node::Atom { ty: 0, label: None });
        let l1 = b.push(Node::List { construction: Construction::Seq, items: vec![] });
        let p1 = b.push(Node::Pair(a1, l1));
        let c1 = b.push(Node::Class { class: 0, differential: false, inner: p1 });
        let a0 = b.push(Node::Atom { ty: 0, label: None });
        let l0 = b.push(Node::List { construction: Construction::Seq, items: vec![c1] });
        let p0 = b.push(Node::Pair(a0, l0));
        let root = b.push(Node::Class { class: 0, differential: false, inner: p0 });
        b.finish(root, symbols(labelled))
    }

    #[test]
    fn term_and_json() {
        let s = small_tree(false);
        assert_eq!(s.size(), 2);
        assert_eq!(s.to_term(WriteOptions::default()), "P(Z,Seq[P(Z,Seq[])])");
        assert_eq!(s.to_term(WriteOptions { bare: true }), "Z,Seq[Z,Seq[]]");
        let json: serde_json::Value = serde_json::from_str(&s.to_json(WriteOptions::default())).unwrap();
        assert_eq!(json["class"], "P");
        assert_eq!(json["kind"], "pair");
        assert_eq!(json["items"][1]["construction"], "seq");
        assert_eq!(json["items"][1]["items"][0]["class"], "P");
    }

    #[test]
    fn labels_form_a_permutation() {
        let mut s = small_tree(true);
        s.assign_labels(&mut SessionStream::new(1, 0)).unwrap();
        let mut labels: Vec<u64> = s.labels().into_iter().map(Option::unwrap).collect();
        labels.sort_unstable();
        assert_eq!(labels, [1, 2]);
        assert_eq!(small_tree(false).assign_labels(&mut SessionStream::new(1, 0)), Err(LabelError::Unlabelled));
    }

    #[test]
    fn canonical_form_ignores_set_order() {
        let syms = Arc::new(Symbols { classes: vec![], atoms: vec!["Z_a".into(), "Z_b".into()], labelled: false });
        let make = |first: u32| {
            let mut b = Builder::new();
            let x = b.push(Node::Atom { ty: first, label: None });
            let y = b.push(Node::Atom { ty: 1 - first, label: None });
            let root = b.push(Node::List { construction: Construction::MSet, items: vec![x, y] });
            b.finish(root, syms.clone())
        };
        assert_eq!(make(0).canonical_term(), make(1).canonical_term());
        assert_ne!(make(0).to_term(WriteOptions::default()), make(1).to_term(WriteOptions::default()));
    }
}
