#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use boltzgen::oracle::{Oracle, OracleOptions};
use boltzgen::sampler::{CompiledSampler, SamplerOptions};
use boltzgen::{parse_spec, Spec};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Valid corpus specs and the class each one is sampled from.
pub const CORPUS: &[(&str, &str)] = &[
    ("ptrees", "P"),
    ("seq", "S"),
    ("partitions", "Part"),
    ("motzkin", "M"),
    ("perms", "Perm"),
    ("cayley", "T"),
    ("decreasing", "T"),
    ("rooted", "R"),
    ("words", "W"),
    ("recursive", "T"),
];

pub fn corpus_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus").join(format!("{name}.bg"))
}

pub fn corpus(name: &str) -> Spec {
    let text = std::fs::read_to_string(corpus_path(name)).expect("corpus file");
    parse_spec(&text).expect("corpus spec parses")
}

pub fn oracle(spec: &Spec) -> Oracle<f64> {
    Oracle::new(spec, OracleOptions::default()).expect("valid spec")
}

pub fn compile_at(spec: &Spec, x: f64, options: SamplerOptions) -> CompiledSampler<f64> {
    let table = oracle(spec).eval(x).expect("eval");
    assert!(table.converged(), "oracle diverged at {x}");
    CompiledSampler::compile(spec, &table, options).expect("compile")
}

pub fn compile(spec: &Spec, x: f64) -> CompiledSampler<f64> {
    compile_at(spec, x, SamplerOptions::default())
}

/// Upper `alpha` quantile of the chi-square law with `df` degrees of freedom.
pub fn chi2_critical(df: usize, alpha: f64) -> f64 {
    ChiSquared::new(df as f64).unwrap().inverse_cdf(1.0 - alpha)
}

/// Pearson statistic of `observed` against probabilities `probs`.
pub fn chi2_statistic(observed: &[u64], probs: &[f64]) -> f64 {
    let total: u64 = observed.iter().sum();
    observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * total as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum()
}

/// Chi-square test of bucketed outcomes against a uniform law over `cells`
/// outcomes, unobserved ones included. Returns (statistic, df).
pub fn uniform_chi2<K: Ord>(buckets: &BTreeMap<K, u64>, cells: u64) -> (f64, usize) {
    assert!(buckets.len() as u64 <= cells, "{} distinct outcomes but only {cells} exist", buckets.len());
    let total: u64 = buckets.values().sum();
    let e = total as f64 / cells as f64;
    let seen: f64 = buckets.values().map(|&o| (o as f64 - e).powi(2) / e).sum();
    let unseen = (cells - buckets.len() as u64) as f64 * e;
    (seen + unseen, cells as usize - 1)
}

/// Size histogram against a pmf: cells of expected count at least 5 and a
/// pooled remainder. Returns (statistic, df).
pub fn size_law_chi2(sizes: &[u64], pmf: &[f64]) -> (f64, usize) {
    let total = sizes.len() as f64;
    let mut counts = vec![0u64; pmf.len()];
    let mut beyond = 0u64;
    for &s in sizes {
        match counts.get_mut(s as usize) {
            Some(c) => *c += 1,
            None => beyond += 1,
        }
    }
    let (mut obs, mut probs) = (Vec::new(), Vec::new());
    let (mut pool_o, mut pool_p) = (beyond, 1.0 - pmf.iter().sum::<f64>());
    for (k, &p) in pmf.iter().enumerate() {
        if p * total >= 5.0 {
            obs.push(counts[k]);
            probs.push(p);
        } else {
            pool_o += counts[k];
            pool_p += p;
        }
    }
    if pool_p * total >= 1.0 {
        obs.push(pool_o);
        probs.push(pool_p);
    } else {
        assert!(pool_o as f64 <= 5.0 + 10.0 * pool_p * total, "{pool_o} samples in a pool of mass {pool_p}");
    }
    (chi2_statistic(&obs, &probs), obs.len() - 1)
}

// Brute-force counters, independent of the library.

/// Plane trees with `n` nodes as parenthesis strings.
pub fn plane_trees(n: usize) -> Vec<String> {
    fn forests(m: usize, memo: &mut HashMap<usize, Vec<String>>) -> Vec<String> {
        if let Some(f) = memo.get(&m) {
            return f.clone();
        }
        let mut out = Vec::new();
        if m == 0 {
            out.push(String::new());
        }
        for first in 1..=m {
            for head in forests(first - 1, memo) {
                for tail in forests(m - first, memo) {
                    out.push(format!("({head}){tail}"));
                }
            }
        }
        memo.insert(m, out.clone());
        out
    }
    if n == 0 {
        return Vec::new();
    }
    forests(n - 1, &mut HashMap::new()).into_iter().map(|f| format!("({f})")).collect()
}

/// Unordered rooted trees: plane trees with children sorted recursively.
pub fn rooted_trees(n: usize) -> BTreeSet<String> {
    fn canon(s: &[u8]) -> String {
        // s is "(children)"
        let inner = &s[1..s.len() - 1];
        let mut kids = Vec::new();
        let (mut depth, mut start) = (0i32, 0usize);
        for (i, &c) in inner.iter().enumerate() {
            depth += if c == b'(' { 1 } else { -1 };
            if depth == 0 {
                kids.push(canon(&inner[start..=i]));
                start = i + 1;
            }
        }
        kids.sort();
        format!("({})", kids.concat())
    }
    plane_trees(n).iter().map(|t| canon(t.as_bytes())).collect()
}

/// Integer partitions of `n`.
pub fn partitions(n: u64) -> u64 {
    fn go(n: u64, max: u64) -> u64 {
        if n == 0 {
            return 1;
        }
        (1..=max.min(n)).map(|p| go(n - p, p)).sum()
    }
    go(n, n)
}

/// Unary-binary trees with `n` nodes.
pub fn motzkin(n: u64) -> u64 {
    match n {
        0 => 0,
        1 => 1,
        _ => motzkin(n - 1) + (1..n - 1).map(|a| motzkin(a) * motzkin(n - 1 - a)).sum::<u64>(),
    }
}

/// Permutations of `n` elements, listed by Heap's algorithm.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Rooted labelled trees on `n` vertices: parent maps with one root and no
/// other cycle.
pub fn cayley_trees(n: usize) -> u64 {
    let mut count = 0;
    let total = (n as u64).pow(n as u32);
    for code in 0..total {
        let mut f = vec![0usize; n];
        let mut c = code;
        for v in f.iter_mut() {
            *v = (c % n as u64) as usize;
            c /= n as u64;
        }
        let roots: Vec<usize> = (0..n).filter(|&v| f[v] == v).collect();
        if roots.len() != 1 {
            continue;
        }
        let ok = (0..n).all(|mut v| {
            for _ in 0..n {
                v = f[v];
            }
            v == roots[0]
        });
        count += ok as u64;
    }
    count
}

fn set_partitions(items: &[usize]) -> Vec<Vec<Vec<usize>>> {
    let Some((&first, rest)) = items.split_first() else {
        return vec![Vec::new()];
    };
    let mut out = Vec::new();
    for p in set_partitions(rest) {
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i].push(first);
            out.push(q);
        }
        let mut q = p;
        q.push(vec![first]);
        out.push(q);
    }
    out
}

/// Labelled trees built from a label set whose largest label is the root:
/// each node has no child or two ordered children (`binary`), or any set of
/// children.
pub fn decreasing_trees(n: usize, binary: bool) -> u64 {
    fn count(set: &[usize], binary: bool) -> u64 {
        let (_, rest) = set.split_last().expect("nonempty");
        if binary {
            let mut total = rest.is_empty() as u64;
            let m = rest.len();
            if m >= 2 {
                for mask in 1..(1u32 << m) - 1 {
                    let (l, r): (Vec<usize>, Vec<usize>) = {
                        let l = (0..m).filter(|i| mask >> i & 1 == 1).map(|i| rest[i]).collect();
                        let r = (0..m).filter(|i| mask >> i & 1 == 0).map(|i| rest[i]).collect();
                        (l, r)
                    };
                    total += count(&l, true) * count(&r, true);
                }
            }
            total
        } else {
            set_partitions(rest).iter().map(|p| p.iter().map(|b| count(b, false)).product::<u64>()).sum()
        }
    }
    if n == 0 {
        return 0;
    }
    let labels: Vec<usize> = (1..=n).collect();
    count(&labels, binary)
}

/// Independent counts `c_0..=c_n` for a corpus spec.
pub fn brute_counts(name: &str, n: usize) -> Vec<u64> {
    (0..=n)
        .map(|k| match name {
            "ptrees" => plane_trees(k).len() as u64,
            "seq" => 1,
            "partitions" => partitions(k as u64),
            "motzkin" => motzkin(k as u64),
            "perms" => permutations(k).len() as u64,
            "cayley" => {
                if k == 0 {
                    0
                } else {
                    cayley_trees(k)
                }
            }
            "decreasing" => decreasing_trees(k, true),
            "rooted" => rooted_trees(k).len() as u64,
            "words" => (0..1u64 << k).count() as u64,
            "recursive" => decreasing_trees(k, false),
            _ => panic!("no brute-force counter for {name}"),
        })
        .collect()
}

/// Sample quantile by sorting.
pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((values.len() as f64 - 1.0) * q).round() as usize;
    values[idx]
}
