mod common;

use std::collections::BTreeMap;

use boltzgen::enumerate::size_pmf;
use boltzgen::oracle::{Oracle, OracleOptions};
use boltzgen::sampler::{CompiledSampler, SampleError, SampleOutcome, SamplerOptions};
use boltzgen::stream::SessionStream;
use boltzgen::structure::{Construction, Node, NodeRef, Structure, WriteOptions};
use boltzgen::{parse_spec, CompiledSampler32, Spec};

use common::{chi2_critical, chi2_statistic, compile, compile_at, corpus, oracle, size_law_chi2, CORPUS};

const ALPHA: f64 = 1e-3;

fn done(outcome: SampleOutcome<f64>) -> boltzgen::sampler::Sample<f64> {
    match outcome {
        SampleOutcome::Done(s) => s,
        SampleOutcome::Aborted(r) => panic!("unexpected abort: {r:?}"),
    }
}

/// Atoms below `n`, counting every copy.
fn count_atoms(s: &Structure, n: NodeRef) -> u64 {
    match s.node(n) {
        Node::Empty { .. } => 0,
        Node::Atom { .. } => 1,
        Node::Pair(a, b) => count_atoms(s, *a) + count_atoms(s, *b),
        Node::List { items, .. } => items.iter().map(|&i| count_atoms(s, i)).sum(),
        Node::Class { inner, .. } => count_atoms(s, *inner),
    }
}

fn labels_below(s: &Structure, n: NodeRef, out: &mut Vec<u64>) {
    match s.node(n) {
        Node::Empty { .. } => {}
        Node::Atom { label, .. } => out.push(label.expect("labelled")),
        Node::Pair(a, b) => {
            labels_below(s, *a, out);
            labels_below(s, *b, out);
        }
        Node::List { items, .. } => items.iter().for_each(|&i| labels_below(s, i, out)),
        Node::Class { inner, .. } => labels_below(s, *inner, out),
    }
}

/// Every differential unrolling's atom carries the largest label below it.
fn check_decreasing(s: &Structure, n: NodeRef) {
    match s.node(n) {
        Node::Class { differential: true, inner, .. } => {
            if let Node::Pair(atom, rest) = s.node(*inner) {
                let Node::Atom { label: Some(top), .. } = s.node(*atom) else { panic!("unrolling without atom") };
                let mut below = Vec::new();
                labels_below(s, *rest, &mut below);
                assert!(below.iter().all(|l| l < top), "{} is not the largest of {below:?}", top);
                check_decreasing(s, *rest);
            }
        }
        Node::Class { inner, .. } => check_decreasing(s, *inner),
        Node::Pair(a, b) => {
            check_decreasing(s, *a);
            check_decreasing(s, *b);
        }
        Node::List { items, .. } => items.iter().for_each(|&i| check_decreasing(s, i)),
        _ => {}
    }
}

fn sampling_point(spec: &Spec, class: &str) -> f64 {
    let o = oracle(spec);
    let t = o.tune(class, 8).unwrap();
    t.x
}

#[test]
fn structures_are_well_formed() {
    for &(name, class) in CORPUS {
        let spec = corpus(name);
        let sampler = compile(&spec, sampling_point(&spec, class));
        for session in 0..300 {
            let mut stream = SessionStream::new(1, session);
            let mut s = done(sampler.sample(class, &mut stream).unwrap()).structure;
            assert_eq!(s.size(), count_atoms(&s, s.root()), "{name}");
            assert_eq!(s.class_name(), Some(class));
            if spec.mode == boltzgen::Mode::Labelled {
                s.assign_labels(&mut stream).unwrap();
                let mut labels: Vec<u64> = s.labels().into_iter().map(|l| l.unwrap()).collect();
                check_decreasing(&s, s.root());
                labels.sort_unstable();
                assert_eq!(labels, (1..=s.size()).collect::<Vec<_>>(), "{name}");
            } else {
                assert!(s.assign_labels(&mut stream).is_err());
            }
            // serde_json stops at nesting depth 128
            if s.size() > 40 {
                continue;
            }
            let v: serde_json::Value = serde_json::from_str(&s.to_json(WriteOptions::default())).unwrap();
            assert_eq!(v["class"], class);
        }
    }
}

#[test]
fn same_stream_same_structure() {
    for &(name, class) in CORPUS {
        let spec = corpus(name);
        let sampler = compile(&spec, sampling_point(&spec, class));
        for session in 0..50 {
            let a = done(sampler.sample(class, &mut SessionStream::new(9, session)).unwrap());
            let b = done(sampler.sample_with(class, &mut SessionStream::new(9, session), &BTreeMap::new()).unwrap());
            let opts = WriteOptions::default();
            assert_eq!(a.structure.to_term(opts), b.structure.to_term(opts));
            assert_eq!(a.report, b.report);
        }
    }
}

#[test]
fn free_size_laws_match_size_pmf() {
    for &(name, class) in CORPUS {
        let spec = corpus(name);
        let x = sampling_point(&spec, class);
        let sampler = compile(&spec, x);
        let pmf = size_pmf(&spec, class, x, 120).unwrap();
        let sizes: Vec<u64> = (0..20_000)
            .map(|i| done(sampler.sample(class, &mut SessionStream::new(21, i)).unwrap()).structure.size())
            .collect();
        let (stat, df) = size_law_chi2(&sizes, &pmf);
        assert!(stat < chi2_critical(df, ALPHA), "{name} at x = {x}: chi2 {stat} with {df} df");
    }
}

/// Conditioned on exactly one component, Seq, Set and Cycle of
/// `A = Z + Z * Z` return an `A` with its own Boltzmann law.
#[test]
fn single_component_follows_the_component_law() {
    let x = 0.5;
    // unlabelled A(x) = x + x^2; labelled A(x) = x + 2 x^2 / 2! = x + x^2
    let p1 = x / (x + x * x);
    for (src, construction) in [
        ("S = Seq(A); A = Z + Z * Z;", Construction::Seq),
        ("@labelled\nS = Set(A); A = Z + Z * Z;", Construction::Set),
        ("@labelled\nS = Cycle(A); A = Z + Z * Z;", Construction::Cycle),
    ] {
        let sampler = compile(&parse_spec(src).unwrap(), x);
        let mut counts = [0u64; 2];
        let mut session = 0;
        while counts.iter().sum::<u64>() < 20_000 {
            session += 1;
            let s = done(sampler.sample("S", &mut SessionStream::new(3, session)).unwrap()).structure;
            let Node::Class { inner, .. } = s.node(s.root()) else { panic!() };
            let Node::List { construction: c, items } = s.node(*inner) else { panic!("{src}") };
            assert_eq!(*c, construction);
            if items.len() == 1 {
                counts[s.size() as usize - 1] += 1;
            }
        }
        let stat = chi2_statistic(&counts, &[p1, 1.0 - p1]);
        assert!(stat < chi2_critical(1, ALPHA), "{src}: {counts:?}");
    }
}

#[test]
fn ceiling_aborts_with_the_expected_frequency() {
    let spec = corpus("ptrees");
    let ceiling = 100;
    let sampler = compile_at(&spec, 0.25, SamplerOptions { ceiling: Some(ceiling), ..Default::default() });
    let pmf = size_pmf(&spec, "P", 0.25, ceiling as usize).unwrap();
    let p_abort = 1.0 - pmf.iter().sum::<f64>();
    let n = 20_000;
    let mut aborted = 0;
    for i in 0..n {
        match sampler.sample("P", &mut SessionStream::new(5, i)).unwrap() {
            SampleOutcome::Aborted(r) => {
                aborted += 1;
                assert!(r.aborted && r.atoms_generated > ceiling);
            }
            SampleOutcome::Done(s) => assert!(s.structure.size() <= ceiling),
        }
    }
    let sigma = (p_abort * (1.0 - p_abort) / n as f64).sqrt();
    let f = aborted as f64 / n as f64;
    assert!((f - p_abort).abs() < 4.0 * sigma, "abort rate {f} vs {p_abort}");
}

#[test]
fn ledger_holds_the_precise_constants() {
    for &(name, class) in CORPUS {
        let spec = corpus(name);
        if spec.has_differential() {
            // the Runge-Kutta grids cannot be refined to 1e-15
            continue;
        }
        let x = sampling_point(&spec, class);
        let tracked = compile_at(&spec, x, SamplerOptions { track_intervals: true, ..Default::default() });
        let precise_table = Oracle::new(&spec, OracleOptions::with_tol(1e-15)).unwrap().eval(x).unwrap();
        assert!(precise_table.converged(), "{name}");
        let precise = CompiledSampler::compile(&spec, &precise_table, SamplerOptions::default()).unwrap();
        let mut checked = 0;
        for i in 0..500 {
            let s = done(tracked.sample(class, &mut SessionStream::new(8, i)).unwrap());
            for (key, interval) in &s.ledger {
                let used = tracked.constant(key).unwrap();
                assert!(interval.contains(used), "{name} {key}: used {used} outside {interval}");
                if let Some(v) = precise.constant(key) {
                    assert!(interval.contains(v), "{name} {key}: precise {v} outside {interval} (used {used})");
                    checked += 1;
                }
            }
        }
        assert!(checked > 0, "{name}");
    }
}

#[test]
fn errors() {
    let spec = corpus("ptrees");
    let sampler = compile(&spec, 0.2);
    assert!(matches!(sampler.sample("Q", &mut SessionStream::new(0, 0)), Err(SampleError::UnknownClass(_))));
    let diverged = oracle(&spec).eval(0.3).unwrap();
    assert!(CompiledSampler::compile(&spec, &diverged, SamplerOptions::default()).is_err());
    let table = oracle(&spec).eval(0.2).unwrap();
    assert!(CompiledSampler::compile(&spec, &table, SamplerOptions { ceiling: Some(0), ..Default::default() }).is_err());
    let guarded = sampler.with_options(SamplerOptions { node_guard: 10, ..Default::default() });
    let mut hit = false;
    for i in 0..200 {
        if let Err(SampleError::Resource(_)) = guarded.sample("P", &mut SessionStream::new(0, i)) {
            hit = true;
        }
    }
    assert!(hit, "node guard never triggered");
}

#[test]
fn single_precision_sampler() {
    let spec = corpus("ptrees");
    let table = Oracle::<f32>::new(&spec, OracleOptions::default()).unwrap().eval(0.2f32).unwrap();
    let sampler = CompiledSampler32::compile(&spec, &table, SamplerOptions::default()).unwrap();
    let pmf = size_pmf(&spec, "P", 0.2, 60).unwrap();
    let sizes: Vec<u64> = (0..20_000)
        .map(|i| match sampler.sample("P", &mut SessionStream::new(2, i)).unwrap() {
            SampleOutcome::Done(s) => s.structure.size(),
            SampleOutcome::Aborted(_) => unreachable!(),
        })
        .collect();
    let (stat, df) = size_law_chi2(&sizes, &pmf);
    assert!(stat < chi2_critical(df, ALPHA), "chi2 {stat} with {df} df");
}

#[test]
fn sessions_are_independent_of_threads() {
    fn assert_send_sync<T: Send + Sync>() {}
    assert_send_sync::<CompiledSampler<f64>>();
    let spec = corpus("cayley");
    let sampler = compile(&spec, 0.3);
    let run = |i: u64| {
        let mut stream = SessionStream::new(77, i);
        let mut s = done(sampler.sample("T", &mut stream).unwrap()).structure;
        s.assign_labels(&mut stream).unwrap();
        s.to_term(WriteOptions::default())
    };
    let sequential: Vec<String> = (0..64).map(run).collect();
    let threaded: Vec<String> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..4u64).map(|t| scope.spawn(move || (t * 16..(t + 1) * 16).map(run).collect::<Vec<_>>())).collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(sequential, threaded);
}
