mod common;

use std::collections::BTreeMap;

use boltzgen::controller::{Alternation, ControlError, ControlMode, Controller};
use boltzgen::enumerate::count_upto;
use boltzgen::sampler::SamplerOptions;
use boltzgen::stream::SessionStream;
use num_traits::ToPrimitive;

use common::{chi2_critical, compile, compile_at, corpus, uniform_chi2};

/// Mean of `runs` geometric trial counts against `1 / p`, within 3 sigma.
fn assert_mean_trials(trials: &[u64], p: f64, what: &str) {
    let mean = trials.iter().sum::<u64>() as f64 / trials.len() as f64;
    let sigma = ((1.0 - p) / (p * p) / trials.len() as f64).sqrt();
    assert!((mean - 1.0 / p).abs() < 3.0 * sigma, "{what}: mean {mean}, expected {} +- {}", 1.0 / p, 3.0 * sigma);
}

#[test]
fn approximate_window_trials() {
    // Seq(Z) tuned to n = 100: x / (1 - x) = 100, sizes geometric
    let x = 100.0 / 101.0;
    let sampler = compile(&corpus("seq"), x);
    let p: f64 = (91..=109).map(|k| x.powi(k) * (1.0 - x)).sum();
    let c = Controller::default();
    let trials: Vec<u64> = (0..2000)
        .map(|i| {
            let r = c.sample_approx(&sampler, "S", 100, 0.1, false, &mut SessionStream::new(1, i)).unwrap();
            assert!((91..=109).contains(&r.structure.size()));
            assert_eq!(r.mode, ControlMode::Approx);
            r.trials
        })
        .collect();
    assert_mean_trials(&trials, p, "approx");
}

#[test]
fn exact_size_trials() {
    let x = 10.0 / 11.0;
    let sampler = compile(&corpus("seq"), x);
    let p = x.powi(10) * (1.0 - x);
    let c = Controller::default();
    let trials: Vec<u64> = (0..2000)
        .map(|i| c.sample_exact(&sampler, "S", 10, false, &mut SessionStream::new(2, i)).unwrap().trials)
        .collect();
    assert_mean_trials(&trials, p, "exact");
}

#[test]
fn singular_exact_acceptance_is_the_size_mass() {
    // plane trees at x = 1/4: P = 1/2 and p_n = c_n 4^-n / P
    let spec = corpus("ptrees");
    let sampler = compile(&spec, 0.25);
    let n = 12;
    let c_n = count_upto(&spec, n).unwrap().class("P").unwrap()[n].to_f64().unwrap();
    let p = c_n * 0.25f64.powi(n as i32) / 0.5;
    let c = Controller::default();
    let trials: Vec<u64> = (0..2000)
        .map(|i| {
            let r = c.sample_exact(&sampler, "P", n as u64, true, &mut SessionStream::new(3, i)).unwrap();
            assert_eq!(r.mode, ControlMode::SingularExact);
            assert_eq!(r.structure.size(), n as u64);
            r.trials
        })
        .collect();
    assert_mean_trials(&trials, p, "singular exact");
    // the ceiling bounds the work of every rejected run
    let r = c.sample_exact(&sampler, "P", n as u64, true, &mut SessionStream::new(3, 9999)).unwrap();
    assert!(r.total_atoms_generated <= r.trials * (n as u64 + 1));
}

#[test]
fn exact_size_is_uniform() {
    let spec = corpus("ptrees");
    let sampler = compile(&spec, 0.22);
    let c = Controller::default();
    let mut buckets = BTreeMap::new();
    for i in 0..7000 {
        let r = c.sample_exact(&sampler, "P", 5, false, &mut SessionStream::new(4, i)).unwrap();
        *buckets.entry(r.structure.canonical_term()).or_insert(0u64) += 1;
    }
    let (stat, df) = uniform_chi2(&buckets, 14);
    assert!(stat < chi2_critical(df, 1e-3), "chi2 {stat}");
}

#[test]
fn naive_hadamard_success_rate() {
    // two Seq(Z) samplers at 1/2: P(equal sizes) = sum 4^-(k+1) = 1/3
    let sampler = compile(&corpus("seq"), 0.5);
    let c = Controller::default();
    let trials: Vec<u64> = (0..3000)
        .map(|i| {
            let r = c.sample_hadamard_naive((&sampler, "S"), (&sampler, "S"), &mut SessionStream::new(5, i)).unwrap();
            assert_eq!(r.structure.size(), r.partner.as_ref().unwrap().size());
            r.trials
        })
        .collect();
    assert_mean_trials(&trials, 1.0 / 3.0, "naive hadamard");
}

#[test]
fn birthday_pairs_are_uniform_given_the_size() {
    // plane trees against unary-binary trees, both with 2 shapes of size 3
    let left = compile(&corpus("ptrees"), 0.2);
    let right = compile(&corpus("motzkin"), 0.25);
    let c = Controller::default();
    let mut buckets = BTreeMap::new();
    let mut session = 0;
    while buckets.values().sum::<u64>() < 4000 {
        session += 1;
        let r = c
            .sample_hadamard_birthday((&left, "P"), (&right, "M"), Alternation::Random, &mut SessionStream::new(6, session))
            .unwrap();
        let partner = r.partner.unwrap();
        assert_eq!(r.structure.size(), partner.size());
        if r.structure.size() == 3 {
            *buckets.entry((r.structure.canonical_term(), partner.canonical_term())).or_insert(0u64) += 1;
        }
    }
    let (stat, df) = uniform_chi2(&buckets, 4);
    assert!(stat < chi2_critical(df, 1e-3), "chi2 {stat}: {buckets:?}");
}

#[test]
fn birthday_needs_fewer_draws_than_naive() {
    let sampler = compile(&corpus("seq"), 0.9);
    let c = Controller::default();
    let runs = 1000;
    let (mut naive, mut birthday) = (0, 0);
    for i in 0..runs {
        let r = c.sample_hadamard_naive((&sampler, "S"), (&sampler, "S"), &mut SessionStream::new(7, i)).unwrap();
        naive += 2 * r.trials;
        for alt in [Alternation::Deterministic, Alternation::Random] {
            let r = c.sample_hadamard_birthday((&sampler, "S"), (&sampler, "S"), alt, &mut SessionStream::new(8, i)).unwrap();
            birthday += r.trials;
        }
    }
    let (naive, birthday) = (naive as f64 / runs as f64, birthday as f64 / (2 * runs) as f64);
    println!("mean draws: naive {naive:.2}, birthday {birthday:.2}");
    assert!(birthday <= naive, "birthday {birthday} > naive {naive}");
}

#[test]
fn failures() {
    let spec = corpus("ptrees");
    let sampler = compile(&spec, 0.2);
    let c = Controller { trial_cap: 5, ..Default::default() };
    let mut stream = SessionStream::new(9, 0);
    assert!(matches!(c.sample_exact(&sampler, "P", 0, false, &mut stream), Err(ControlError::NoSolution { .. })));
    assert!(matches!(c.sample_approx(&sampler, "P", 1, 0.5, false, &mut stream), Ok(_)));
    assert!(matches!(c.sample_approx(&sampler, "P", 10, 0.0, false, &mut stream), Err(ControlError::Parameter(_))));
    assert!(matches!(c.sample_exact(&sampler, "P", 200, false, &mut stream), Err(ControlError::TrialCap { trials: 5, .. })));
    assert!(matches!(c.sample_exact(&sampler, "Q", 3, false, &mut stream), Err(ControlError::Sample(_))));
    let capped = compile_at(&spec, 0.25, SamplerOptions { ceiling: Some(3), ..Default::default() });
    let e = Controller::default().sample_hadamard_naive((&capped, "P"), (&capped, "P"), &mut SessionStream::new(9, 1));
    // a run may pair two small trees before any abort; otherwise the ceiling is rejected
    assert!(matches!(e, Ok(_) | Err(ControlError::Parameter(_))));
    let tight = Controller { memory_cap: 1, ..Default::default() };
    let seq = compile(&corpus("seq"), 0.99);
    let mut hit = false;
    for i in 0..50 {
        if let Err(ControlError::MemoryCap(1)) =
            tight.sample_hadamard_birthday((&seq, "S"), (&seq, "S"), Alternation::Deterministic, &mut SessionStream::new(10, i))
        {
            hit = true;
        }
    }
    assert!(hit);
}
