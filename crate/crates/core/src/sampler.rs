//! Boltzmann samplers compiled from a spec and an oracle table.
//!
//! Every real constant a draw depends on (branch probabilities, law
//! parameters, MaxIndex tables) is computed once at compile time. A
//! sampling session owns its uniform stream, its cost counters and its
//! safety-interval ledger.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::distributions::{self, DistError, SafetyInterval};
use crate::oracle::{LevelShape, LevelSolver, OdeGrid, OdeSystem, OracleOptions, OracleTable};
use crate::program::{ClassId, Kind, NodeId, Op, Program};
use crate::scalar::Scalar;
use crate::spec::{Mode, Spec, DEFAULT_ATOM};
use crate::stream::SessionStream;
use crate::structure::{Builder, Construction, Node, NodeRef, Structure, Symbols};

/// Default limit on arena nodes per run.
pub const DEFAULT_NODE_GUARD: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerOptions {
    /// Abort as soon as more atoms than this have been generated.
    pub ceiling: Option<u64>,
    pub node_guard: u64,
    /// Compute safety intervals for every draw at a fixed parameter.
    pub track_intervals: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions { ceiling: None, node_guard: DEFAULT_NODE_GUARD, track_intervals: false }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("cannot compile sampler: {0}")]
    Compile(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("class `{0}` is not covered by the oracle table")]
    NotEvaluated(String),
    #[error("run exceeded the guard of {0} structure nodes")]
    Resource(u64),
    #[error("numerical failure while sampling: {0}")]
    Numeric(String),
}

impl From<DistError> for SampleError {
    fn from(e: DistError) -> Self {
        SampleError::Numeric(e.to_string())
    }
}

/// Which constant of a construction node a draw used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    /// Union: probability of the left branch.
    Branch,
    /// Seq, Cycle, Set: value of the argument.
    Param,
    /// MSet: argument value at the `j`-th power of the level point.
    Inner(u32),
    /// MSet: the multiset value itself (MaxIndex normaliser).
    Total,
    /// Differential class: probability of a size-0 structure.
    Base,
}

/// Name of one compiled constant: a node evaluated at the point `x^level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConstKey {
    pub level: u64,
    pub node: usize,
    pub slot: Slot,
}

impl fmt::Display for ConstKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x^{}/n{}/", self.level, self.node)?;
        match self.slot {
            Slot::Branch => f.write_str("branch"),
            Slot::Param => f.write_str("param"),
            Slot::Inner(j) => write!(f, "inner{j}"),
            Slot::Total => f.write_str("total"),
            Slot::Base => f.write_str("base"),
        }
    }
}

pub type Ledger<F> = BTreeMap<ConstKey, SafetyInterval<F>>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SizeReport {
    pub output_size: u64,
    /// Atoms created, counting every copy made by MSet replication.
    pub atoms_generated: u64,
    pub uniforms_consumed: u64,
    pub oracle_lookups: u64,
    pub aborted: bool,
}

#[derive(Debug, Clone)]
pub struct Sample<F> {
    pub structure: Structure,
    pub report: SizeReport,
    pub ledger: Ledger<F>,
}

#[derive(Debug, Clone)]
pub enum SampleOutcome<F> {
    Done(Sample<F>),
    Aborted(SizeReport),
}

impl<F> SampleOutcome<F> {
    pub fn report(&self) -> &SizeReport {
        match self {
            SampleOutcome::Done(s) => &s.report,
            SampleOutcome::Aborted(r) => r,
        }
    }
}

/// Node and class values at one point `x^k`.
#[derive(Debug)]
struct Level<F> {
    k: u64,
    nodes: Vec<F>,
    classes: Vec<F>,
}

#[derive(Debug)]
struct MsetTable<F> {
    /// `A(x^{kj})` for `j = 1..`, until the geometric tail is negligible.
    inner: Vec<F>,
    /// Dense level index of `x^{kj}`.
    child: Vec<u32>,
    ln_c: F,
}

#[derive(Debug)]
struct Tables<F> {
    prog: Program,
    symbols: Arc<Symbols>,
    x: F,
    tol: F,
    active: Vec<bool>,
    levels: Vec<Level<F>>,
    level_index: HashMap<u64, u32>,
    msets: HashMap<(u32, NodeId), MsetTable<F>>,
    grid: Option<OdeGrid<F>>,
    /// Grid component of each differential class.
    component: Vec<usize>,
    /// Smallest structure size of each class, `None` if it has none.
    min_sizes: Vec<Option<u64>>,
    diff_atom: u32,
    oracle: OracleOptions<F>,
}

/// A Boltzmann sampler for every class in an oracle table's closure.
/// Cheap to clone; sessions share the compiled tables.
#[derive(Debug, Clone)]
pub struct CompiledSampler<F: Scalar = f64> {
    tables: Arc<Tables<F>>,
    options: SamplerOptions,
}

impl<F: Scalar> CompiledSampler<F> {
    pub fn compile(spec: &Spec, table: &OracleTable<F>, options: SamplerOptions) -> Result<Self, SampleError> {
        if !table.converged() {
            return Err(SampleError::Compile(format!(
                "oracle diverged at x = {}: {}",
                table.x,
                table.reason.as_deref().unwrap_or("no reason given")
            )));
        }
        if options.ceiling == Some(0) {
            return Err(SampleError::Compile("ceiling must be at least 1".into()));
        }
        let prog = Program::new(spec).map_err(|e| SampleError::Compile(e.to_string()))?;
        if prog.names != table.classes {
            return Err(SampleError::Compile("oracle table belongs to a different spec".into()));
        }
        let oracle = OracleOptions { tol: table.tol, ..OracleOptions::default() };
        let shape = LevelShape::new(&prog, &table.roots);
        let mut fixed = vec![F::nan(); prog.class_count()];
        let mut component = vec![usize::MAX; prog.class_count()];
        if let Some(g) = &table.ode_grid {
            for (k, &c) in g.ids.iter().enumerate() {
                fixed[c] = g.values[g.steps][k];
                component[c] = k;
            }
        }
        let mut solver = LevelSolver {
            prog: &prog,
            shape: &shape,
            x: table.x,
            tol: table.tol,
            cap: oracle.value_cap,
            max_iterations: oracle.max_iterations,
            max_levels: oracle.max_levels,
            fixed,
            memo: table.levels.clone(),
        };
        let compile_err = |(reason, _): (String, Vec<F>)| SampleError::Compile(reason);
        solver.level(1).map_err(compile_err)?;
        // MaxIndex tables at every level reachable through MSet recursion
        let eps = F::epsilon() / F::lit(4.0);
        let mut series = BTreeMap::new();
        let mut queue = VecDeque::from([1u64]);
        let mut seen = BTreeSet::from([1u64]);
        while let Some(k) = queue.pop_front() {
            let list = if k == 1 { &shape.top_msets } else { &shape.sub_msets };
            for &(m, arg) in list {
                let inner = solver.series(k, arg, eps).map_err(compile_err)?;
                for j in 2..=inner.len() as u64 {
                    if seen.insert(k * j) {
                        queue.push_back(k * j);
                    }
                }
                series.insert((k, m), inner);
            }
        }
        let mut levels = Vec::new();
        let mut level_index = HashMap::new();
        for (&k, v) in &solver.memo {
            level_index.insert(k, levels.len() as u32);
            levels.push(Level { k, nodes: v.nodes.clone(), classes: v.classes.clone() });
        }
        let msets = series
            .into_iter()
            .map(|((k, m), inner)| {
                let ln_c = inner.iter().enumerate().fold(F::zero(), |s, (j, &a)| s + a / F::lit((j + 1) as f64));
                let child = (1..=inner.len() as u64).map(|j| level_index[&(k * j)]).collect();
                ((level_index[&k], m), MsetTable { inner, child, ln_c })
            })
            .collect();
        // unrollings of differential classes emit the plain atom
        let mut atoms = prog.atoms.clone();
        let diff_atom = match atoms.iter().position(|a| a == DEFAULT_ATOM) {
            Some(i) => i,
            None => {
                atoms.push(DEFAULT_ATOM.to_string());
                atoms.len() - 1
            }
        } as u32;
        let symbols = Arc::new(Symbols {
            classes: prog.names.clone(),
            atoms,
            labelled: prog.mode == Mode::Labelled,
        });
        let min = crate::validate::min_sizes(spec).map_err(|e| SampleError::Compile(e.to_string()))?;
        let min_sizes = prog.names.iter().map(|n| min[n].finite()).collect();
        let tables = Tables {
            diff_atom,
            min_sizes,
            symbols,
            x: table.x,
            tol: table.tol,
            active: shape.top_classes.clone(),
            levels,
            level_index,
            msets,
            grid: table.ode_grid.clone(),
            component,
            oracle,
            prog,
        };
        Ok(CompiledSampler { tables: Arc::new(tables), options })
    }

    pub fn x(&self) -> F {
        self.tables.x
    }

    pub fn options(&self) -> &SamplerOptions {
        &self.options
    }

    /// The same compiled tables with other run options.
    pub fn with_options(&self, options: SamplerOptions) -> Self {
        CompiledSampler { tables: self.tables.clone(), options }
    }

    pub fn with_ceiling(&self, ceiling: Option<u64>) -> Self {
        self.with_options(SamplerOptions { ceiling, ..self.options })
    }

    pub fn symbols(&self) -> &Arc<Symbols> {
        &self.tables.symbols
    }

    pub fn min_size(&self, class: &str) -> Result<Option<u64>, SampleError> {
        let c = self.tables.prog.class_id(class).ok_or_else(|| SampleError::UnknownClass(class.to_string()))?;
        Ok(self.tables.min_sizes[c])
    }

    /// Number of distinct points `x^k` held by the sampler.
    pub fn level_count(&self) -> usize {
        self.tables.levels.len()
    }

    /// The compiled value of a constant, as used when not overridden.
    pub fn constant(&self, key: &ConstKey) -> Option<F> {
        let t = &*self.tables;
        let i = *t.level_index.get(&key.level)?;
        let lv = &t.levels[i as usize];
        let op = *t.prog.nodes.get(key.node)?;
        match (op, key.slot) {
            (Op::Union(a, b), Slot::Branch) => Some(lv.nodes[a] / (lv.nodes[a] + lv.nodes[b])),
            (Op::Seq(a) | Op::Cycle(a) | Op::Set(a), Slot::Param) => Some(lv.nodes[a]),
            (Op::MSet(a), Slot::Inner(j)) => {
                let from_table = t.msets.get(&(i, key.node)).and_then(|m| m.inner.get(j as usize - 1).copied());
                from_table.or_else(|| {
                    let deeper = t.level_index.get(&(key.level * j as u64))?;
                    Some(t.levels[*deeper as usize].nodes[a])
                })
            }
            (Op::MSet(_), Slot::Total) => t.msets.get(&(i, key.node)).map(|m| m.ln_c.exp()),
            (_, Slot::Base) => {
                let c = t.prog.owner[key.node];
                match t.prog.kinds[c] {
                    Kind::Differential { initial_count } if t.prog.roots[c] == key.node => {
                        Some(F::lit(initial_count as f64) / lv.classes[c])
                    }
                    _ => None,
                }
            }
            _ => None,
        }
    }

    pub fn sample(&self, class: &str, stream: &mut SessionStream) -> Result<SampleOutcome<F>, SampleError> {
        self.run(class, stream, None)
    }

    /// As `sample`, replacing the named constants by the given values.
    pub fn sample_with(
        &self,
        class: &str,
        stream: &mut SessionStream,
        overrides: &BTreeMap<ConstKey, F>,
    ) -> Result<SampleOutcome<F>, SampleError> {
        self.run(class, stream, Some(overrides))
    }

    fn run(
        &self,
        class: &str,
        stream: &mut SessionStream,
        overrides: Option<&BTreeMap<ConstKey, F>>,
    ) -> Result<SampleOutcome<F>, SampleError> {
        let t = &*self.tables;
        let c = t.prog.class_id(class).ok_or_else(|| SampleError::UnknownClass(class.to_string()))?;
        if !t.active[c] {
            return Err(SampleError::NotEvaluated(class.to_string()));
        }
        let mut session = Session {
            t,
            opts: &self.options,
            stream,
            overrides,
            builder: Builder::new(),
            out: Vec::new(),
            tasks: vec![Task::Ref(c as u32, Ctx::Level(t.level_index[&1]))],
            points: Vec::new(),
            ode: None,
            ledger: Ledger::new(),
            atoms: 0,
            lookups: 0,
        };
        let start = session.stream.consumed();
        let finished = session.drive()?;
        let report = SizeReport {
            output_size: if finished { session.builder.size(session.out[0]) } else { 0 },
            atoms_generated: session.atoms,
            uniforms_consumed: session.stream.consumed() - start,
            oracle_lookups: session.lookups,
            aborted: !finished,
        };
        if !finished {
            return Ok(SampleOutcome::Aborted(report));
        }
        let root = session.out[0];
        let structure = session.builder.finish(root, t.symbols.clone());
        Ok(SampleOutcome::Done(Sample { structure, report, ledger: session.ledger }))
    }
}

/// Where a node is being sampled: a compiled level, or a point drawn from
/// an h-density during the current run.
#[derive(Debug, Clone, Copy)]
enum Ctx {
    Level(u32),
    Point(u32),
}

#[derive(Debug, Clone, Copy)]
enum Task {
    Gen(NodeId, Ctx),
    Ref(u32, Ctx),
    Pair,
    List(Construction, usize),
    Class(u32, bool),
    Replicate(u64),
}

struct Point<F> {
    t: F,
    nodes: Vec<F>,
    classes: Vec<F>,
}

struct Session<'a, F: Scalar> {
    t: &'a Tables<F>,
    opts: &'a SamplerOptions,
    stream: &'a mut SessionStream,
    overrides: Option<&'a BTreeMap<ConstKey, F>>,
    builder: Builder,
    out: Vec<NodeRef>,
    tasks: Vec<Task>,
    points: Vec<Point<F>>,
    ode: Option<OdeSystem<'a, F>>,
    ledger: Ledger<F>,
    atoms: u64,
    lookups: u64,
}

impl<F: Scalar> Session<'_, F> {
    /// Runs the task stack; `false` when the ceiling stopped the run.
    fn drive(&mut self) -> Result<bool, SampleError> {
        while let Some(task) = self.tasks.pop() {
            // pending tasks count too: a supercritical override grows the stack, not the arena
            if (self.builder.len() + self.tasks.len()) as u64 > self.opts.node_guard {
                return Err(SampleError::Resource(self.opts.node_guard));
            }
            match task {
                Task::Gen(n, ctx) => self.gen(n, ctx)?,
                Task::Ref(c, ctx) => self.class(c as ClassId, ctx)?,
                Task::Pair => {
                    let b = self.out.pop().expect("pair operand");
                    let a = self.out.pop().expect("pair operand");
                    let id = self.builder.push(Node::Pair(a, b));
                    self.out.push(id);
                }
                Task::List(construction, count) => {
                    let items = self.out.split_off(self.out.len() - count);
                    let id = self.builder.push(Node::List { construction, items });
                    self.out.push(id);
                }
                Task::Class(class, differential) => {
                    let inner = self.out.pop().expect("class body");
                    let id = self.builder.push(Node::Class { class, differential, inner });
                    self.out.push(id);
                }
                Task::Replicate(j) => {
                    let id = *self.out.last().expect("replicated item");
                    self.atoms += (j - 1) * self.builder.size(id);
                    for _ in 1..j {
                        self.out.push(id);
                    }
                }
            }
            if self.opts.ceiling.is_some_and(|c| self.atoms > c) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn value(&self, n: NodeId, ctx: Ctx) -> F {
        match ctx {
            Ctx::Level(i) => self.t.levels[i as usize].nodes[n],
            Ctx::Point(p) => self.points[p as usize].nodes[n],
        }
    }

    fn key(&self, ctx: Ctx, node: NodeId, slot: Slot) -> Option<ConstKey> {
        match ctx {
            Ctx::Level(i) => Some(ConstKey { level: self.t.levels[i as usize].k, node, slot }),
            Ctx::Point(_) => None,
        }
    }

    /// The constant actually used for a draw: the compiled value unless
    /// the caller overrides it.
    fn constant(&mut self, ctx: Ctx, node: NodeId, slot: Slot, computed: F) -> F {
        self.lookups += 1;
        if let (Some(ov), Some(key)) = (self.overrides, self.key(ctx, node, slot)) {
            if let Some(&v) = ov.get(&key) {
                return v;
            }
        }
        computed
    }

    fn record(&mut self, ctx: Ctx, node: NodeId, slot: Slot, interval: SafetyInterval<F>) {
        if !self.opts.track_intervals {
            return;
        }
        if let Some(key) = self.key(ctx, node, slot) {
            let e = self.ledger.entry(key).or_insert_with(SafetyInterval::full);
            *e = e.intersect(&interval);
        }
    }

    fn uniform(&mut self) -> F {
        self.stream.uniform()
    }

    fn push_node(&mut self, node: Node) {
        let id = self.builder.push(node);
        self.out.push(id);
    }

    fn poisson(&mut self, ctx: Ctx, node: NodeId, slot: Slot, lambda: F, scale: F, min: u64) -> Result<u64, SampleError> {
        let u = self.uniform();
        if self.opts.track_intervals && matches!(ctx, Ctx::Level(_)) {
            let d = distributions::poisson_truncated(u, lambda, min)?;
            self.record(ctx, node, slot, d.interval.scaled(scale));
            Ok(d.value)
        } else {
            Ok(distributions::poisson_plain(u, lambda, min)?)
        }
    }

    fn gen(&mut self, n: NodeId, ctx: Ctx) -> Result<(), SampleError> {
        match self.t.prog.nodes[n] {
            Op::Empty => self.push_node(Node::Empty { variant: 0 }),
            Op::Atom(a) => {
                self.push_node(Node::Atom { ty: a as u32, label: None });
                self.atoms += 1;
            }
            Op::Ref(c) => self.tasks.push(Task::Ref(c as u32, ctx)),
            Op::Union(a, b) => {
                let (va, vb) = (self.value(a, ctx), self.value(b, ctx));
                let p = self.constant(ctx, n, Slot::Branch, va / (va + vb));
                let u = self.uniform();
                let d = distributions::bernoulli(u, p)?;
                self.record(ctx, n, Slot::Branch, d.interval);
                self.tasks.push(Task::Gen(if d.value { a } else { b }, ctx));
            }
            Op::Product(a, b) => {
                self.tasks.push(Task::Pair);
                self.tasks.push(Task::Gen(b, ctx));
                self.tasks.push(Task::Gen(a, ctx));
            }
            Op::Seq(a) | Op::Cycle(a) | Op::Set(a) => {
                let p = self.constant(ctx, n, Slot::Param, self.value(a, ctx));
                let u = self.uniform();
                let (construction, k) = match self.t.prog.nodes[n] {
                    Op::Seq(_) => {
                        let d = distributions::geometric(u, p)?;
                        self.record(ctx, n, Slot::Param, d.interval);
                        (Construction::Seq, d.value)
                    }
                    Op::Cycle(_) => {
                        let k = if self.opts.track_intervals && matches!(ctx, Ctx::Level(_)) {
                            let d = distributions::loga(u, p)?;
                            self.record(ctx, n, Slot::Param, d.interval);
                            d.value
                        } else {
                            distributions::loga_plain(u, p)?
                        };
                        (Construction::Cycle, k)
                    }
                    _ => {
                        let k = if self.opts.track_intervals && matches!(ctx, Ctx::Level(_)) {
                            let d = distributions::poisson(u, p)?;
                            self.record(ctx, n, Slot::Param, d.interval);
                            d.value
                        } else {
                            distributions::poisson_plain(u, p, 0)?
                        };
                        (Construction::Set, k)
                    }
                };
                self.push_list(construction, a, ctx, k)?;
            }
            Op::MSet(a) => self.mset(n, a, ctx)?,
        }
        Ok(())
    }

    fn push_list(&mut self, construction: Construction, arg: NodeId, ctx: Ctx, k: u64) -> Result<(), SampleError> {
        if k > self.opts.node_guard {
            return Err(SampleError::Resource(self.opts.node_guard));
        }
        self.tasks.push(Task::List(construction, k as usize));
        for _ in 0..k {
            self.tasks.push(Task::Gen(arg, ctx));
        }
        Ok(())
    }

    fn mset(&mut self, n: NodeId, arg: NodeId, ctx: Ctx) -> Result<(), SampleError> {
        let Ctx::Level(i) = ctx else {
            return Err(SampleError::Numeric("MSet reached outside a compiled level".into()));
        };
        let t = self.t;
        let table = &t.msets[&(i, n)];
        let mut inner = table.inner.clone();
        let mut ln_c = table.ln_c;
        self.lookups += inner.len() as u64 + 1;
        if let (Some(ov), Some(key)) = (self.overrides, self.key(ctx, n, Slot::Total)) {
            for (j, v) in inner.iter_mut().enumerate() {
                if let Some(&o) = ov.get(&ConstKey { slot: Slot::Inner(j as u32 + 1), ..key }) {
                    *v = o;
                }
            }
            if let Some(&o) = ov.get(&key) {
                ln_c = o.ln();
            }
        }
        let u = self.uniform();
        let d = distributions::max_index_log(u, &inner, ln_c)?;
        let k = d.value as usize;
        if self.opts.track_intervals {
            for (j, iv) in d.inner_intervals.iter().take(k).enumerate() {
                self.record(ctx, n, Slot::Inner(j as u32 + 1), *iv);
            }
            self.record(ctx, n, Slot::Total, d.total_interval);
        }
        let mut counts = Vec::with_capacity(k);
        for j in 1..=k {
            let jf = F::lit(j as f64);
            let lambda = inner[j - 1] / jf;
            let min = u64::from(j == k);
            counts.push(self.poisson(ctx, n, Slot::Inner(j as u32), lambda, jf, min)?);
        }
        let total: u64 = counts.iter().enumerate().map(|(j, &c)| c * (j as u64 + 1)).sum();
        if total > self.opts.node_guard {
            return Err(SampleError::Resource(self.opts.node_guard));
        }
        self.tasks.push(Task::List(Construction::MSet, total as usize));
        let child = &t.msets[&(i, n)].child;
        for j in (1..=k).rev() {
            for _ in 0..counts[j - 1] {
                self.tasks.push(Task::Replicate(j as u64));
                self.tasks.push(Task::Gen(arg, Ctx::Level(child[j - 1])));
            }
        }
        Ok(())
    }

    fn class(&mut self, c: ClassId, ctx: Ctx) -> Result<(), SampleError> {
        let t = self.t;
        let Kind::Differential { initial_count } = t.prog.kinds[c] else {
            self.tasks.push(Task::Class(c as u32, false));
            self.tasks.push(Task::Gen(t.prog.roots[c], ctx));
            return Ok(());
        };
        let root = t.prog.roots[c];
        let value = match ctx {
            Ctx::Level(i) => t.levels[i as usize].classes[c],
            Ctx::Point(p) => self.points[p as usize].classes[c],
        };
        self.tasks.push(Task::Class(c as u32, true));
        if initial_count > 0 {
            let p = self.constant(ctx, root, Slot::Base, F::lit(initial_count as f64) / value);
            let u = self.uniform();
            let d = distributions::bernoulli(u, p)?;
            self.record(ctx, root, Slot::Base, d.interval);
            if d.value {
                let variant = if initial_count > 1 { self.stream.below(initial_count) } else { 0 };
                self.push_node(Node::Empty { variant });
                return Ok(());
            }
        }
        // one unrolling: the largest atom, then the right-hand side at a
        // point drawn from the h-density
        let x0 = match ctx {
            Ctx::Level(_) => t.x,
            Ctx::Point(p) => self.points[p as usize].t,
        };
        let grid = t.grid.as_ref().ok_or_else(|| SampleError::Numeric("differential class without a grid".into()))?;
        let comp = t.component[c];
        let u = self.uniform();
        let at = distributions::invert_h_density(u, x0, |s| grid.value_at(comp, s))?;
        let point = self.point(at)?;
        self.lookups += 1;
        self.push_node(Node::Atom { ty: t.diff_atom, label: None });
        self.atoms += 1;
        self.tasks.push(Task::Pair);
        self.tasks.push(Task::Gen(root, Ctx::Point(point)));
        Ok(())
    }

    /// Solves the plain classes at `at` with the differential classes read
    /// off the grid.
    fn point(&mut self, at: F) -> Result<u32, SampleError> {
        let t = self.t;
        let grid = t.grid.as_ref().expect("grid checked by caller");
        let state = grid.state_at(at);
        let ode = self
            .ode
            .get_or_insert_with(|| OdeSystem::new(&t.prog, &t.active, t.tol, t.oracle.value_cap, t.oracle.max_iterations));
        let ws = ode.solve_at(at, &state).map_err(SampleError::Numeric)?;
        self.points.push(Point { t: at, nodes: ws.nodes.clone(), classes: ws.y.clone() });
        Ok(self.points.len() as u32 - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::Oracle;
    use crate::parser::parse_spec;
    use crate::structure::{Node, WriteOptions};

    fn compile(src: &str, x: f64, options: SamplerOptions) -> CompiledSampler<f64> {
        let spec = parse_spec(src).unwrap();
        let table = Oracle::<f64>::new(&spec, OracleOptions::default()).unwrap().eval(x).unwrap();
        CompiledSampler::compile(&spec, &table, options).unwrap()
    }

    fn done(o: SampleOutcome<f64>) -> Sample<f64> {
        match o {
            SampleOutcome::Done(s) => s,
            SampleOutcome::Aborted(_) => panic!("unexpected abort"),
        }
    }

    #[test]
    fn seq_constant_and_empty_mass() {
        let s = compile("S = Seq(Z);", 0.5, SamplerOptions::default());
        let key = ConstKey { level: 1, node: 1, slot: Slot::Param };
        assert_eq!(s.constant(&key), Some(0.5));
        let zeros = (0..4000).filter(|&i| done(s.sample("S", &mut SessionStream::new(3, i)).unwrap()).structure.size() == 0).count();
        assert!((zeros as f64 / 4000.0 - 0.5).abs() < 0.03, "{zeros}");
    }

    #[test]
    fn plane_tree_output_shape() {
        let s = compile("P = Z * Seq(P);", 0.2, SamplerOptions::default());
        let out = done(s.sample("P", &mut SessionStream::new(1, 0)).unwrap());
        let term = out.structure.to_term(WriteOptions::default());
        assert!(term.starts_with("P(Z,Seq["), "{term}");
        assert_eq!(out.report.output_size, out.structure.size());
        assert_eq!(out.report.atoms_generated, out.structure.size());
    }

    #[test]
    fn ceiling_aborts() {
        let s = compile("P = Z * Seq(P);", 0.2499, SamplerOptions { ceiling: Some(3), ..Default::default() });
        let aborted = (0..200).filter(|&i| s.sample("P", &mut SessionStream::new(5, i)).unwrap().report().aborted).count();
        assert!(aborted > 0);
    }

    #[test]
    fn decreasing_tree_root_takes_the_largest_label() {
        let s = compile("@labelled T' = 1 + T * T; T(0) = 0;", 1.0, SamplerOptions::default());
        for i in 0..50 {
            let mut stream = SessionStream::new(9, i);
            let mut st = done(s.sample("T", &mut stream).unwrap()).structure;
            assert_eq!(st.size() % 2, 1);
            st.assign_labels(&mut stream).unwrap();
            let Node::Class { inner, .. } = *st.node(st.root()) else { panic!() };
            let Node::Pair(atom, _) = *st.node(inner) else { panic!() };
            assert_eq!(*st.node(atom), Node::Atom { ty: 0, label: Some(st.size()) });
        }
    }

    #[test]
    fn mset_replicates_components() {
        let s = compile("Part = MSet(K); K = Z * Seq(Z);", 0.5, SamplerOptions { track_intervals: true, ..Default::default() });
        for i in 0..200 {
            let out = done(s.sample("Part", &mut SessionStream::new(2, i)).unwrap());
            assert_eq!(out.report.atoms_generated, out.structure.size());
            assert!(out.ledger.keys().any(|k| k.slot == Slot::Total));
        }
    }
}
