//! Whole-chain behaviour: reproducibility, resumption, thread-count
//! invariance and the bookkeeping of kept draws.

use hdprisk::data::{CategoryLayout, DisjointConditionSet, MarginalCondition, MicrodataSample};
use hdprisk::hdp::{run_chain, run_chain_sz, ChainConfig, Checkpoint, Estimator, Sampler, StructuralZeros};
use hdprisk::risk::RiskTrace;
use hdprisk::rng::{Purpose, SweepRng};
use hdprisk::synth::{generate_gom_population, subsample, GomParams};
use hdprisk::sz::SzMode;

fn sample() -> MicrodataSample {
    let layout = CategoryLayout::from_levels(vec![3, 4, 2, 5]).unwrap();
    let mut r = SweepRng::new(21, 0).stream(Purpose::User, 0);
    let params = GomParams::random(3, &layout, &mut r).unwrap();
    let pop = generate_gom_population(&params, &layout, 2000, 21, None).unwrap();
    subsample(&pop, 200, &mut r).unwrap()
}

fn config(seed: u64) -> ChainConfig {
    let mut c = ChainConfig::new(2000, seed);
    c.iterations = 120;
    c.burn_in = 60;
    c.t_mc = 20;
    c
}

fn conditions(layout: &CategoryLayout) -> DisjointConditionSet {
    DisjointConditionSet::new(vec![
        MarginalCondition::parse_tokens(layout, &["1", "1", "*", "*"]).unwrap(),
        MarginalCondition::parse_tokens(layout, &["2", "*", "2", "*"]).unwrap(),
    ])
    .unwrap()
}

/// Everything in a trace except the timings.
fn draws(t: &RiskTrace) -> (Vec<u64>, Vec<u64>, Vec<usize>, usize) {
    let bits = t.tau1.iter().map(|v| v.to_bits()).collect();
    (t.iterations.clone(), bits, t.k_n.clone(), t.sample_uniques)
}

#[test]
fn same_seed_same_trace() {
    let s = sample();
    let a = run_chain(&s, config(3)).unwrap();
    let b = run_chain(&s, config(3)).unwrap();
    assert_eq!(draws(&a), draws(&b));
    let c = run_chain(&s, config(4)).unwrap();
    assert_ne!(draws(&a).1, draws(&c).1);
}

#[test]
fn kept_draws_follow_burn_in_and_thinning() {
    let s = sample();
    let mut c = config(5);
    c.iterations = 10;
    c.burn_in = 5;
    let t = run_chain(&s, c.clone()).unwrap();
    assert_eq!(t.iterations, vec![6, 7, 8, 9, 10]);
    c.thinning = 2;
    let t = run_chain(&s, c).unwrap();
    assert_eq!(t.iterations, vec![7, 9]);
    assert_eq!(t.k_n.len(), 2);
}

#[test]
fn resumed_chain_is_identical() {
    let s = sample();
    let full = run_chain(&s, config(6)).unwrap();
    let mut part = Sampler::new(&s, config(6), None).unwrap();
    part.run_until(70).unwrap();
    let json = serde_json::to_string(&part.checkpoint()).unwrap();
    let restored: Checkpoint = serde_json::from_str(&json).unwrap();
    assert_eq!(restored, part.checkpoint());
    let resumed = Sampler::resume(&s, restored).unwrap().run().unwrap();
    assert_eq!(draws(&full), draws(&resumed));
}

#[test]
fn resumed_augmented_chain_is_identical() {
    let s = sample();
    let sz = StructuralZeros {
        conditions: conditions(s.layout()),
        mode: SzMode::Exact,
    };
    let full = Sampler::new(&s, config(7), Some(sz.clone())).unwrap().run().unwrap();
    let mut part = Sampler::new(&s, config(7), Some(sz)).unwrap();
    part.run_until(33).unwrap();
    let json = serde_json::to_string(&part.checkpoint()).unwrap();
    let resumed = Sampler::resume(&s, serde_json::from_str(&json).unwrap())
        .unwrap()
        .run()
        .unwrap();
    assert_eq!(draws(&full), draws(&resumed));
    assert_eq!(full.augmentation, resumed.augmentation);
}

#[test]
fn thread_count_does_not_change_the_trace() {
    let s = sample();
    let run = |threads: usize, estimator: Estimator| {
        let mut c = config(8);
        c.estimator = estimator;
        let sz = conditions(s.layout());
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_chain_sz(&s, c, sz, SzMode::Exact).unwrap())
    };
    for estimator in [Estimator::MonteCarlo, Estimator::PopulationSampling] {
        let one = run(1, estimator);
        let four = run(4, estimator);
        assert_eq!(draws(&one), draws(&four), "{estimator:?}");
        assert_eq!(one.augmentation, four.augmentation);
    }
}

#[test]
fn empty_conditions_reduce_to_the_plain_chain() {
    let s = sample();
    let plain = run_chain(&s, config(9)).unwrap();
    for mode in [SzMode::Exact, SzMode::Approximate] {
        let sz = run_chain_sz(&s, config(9), DisjointConditionSet::empty(), mode).unwrap();
        assert_eq!(draws(&plain), draws(&sz), "{mode:?}");
    }
}

#[test]
fn augmentation_is_recorded_every_sweep() {
    let s = sample();
    let sz = run_chain_sz(&s, config(10), conditions(s.layout()), SzMode::Approximate).unwrap();
    let its: Vec<u64> = sz.augmentation.iter().map(|r| r.iteration).collect();
    assert_eq!(its, (1..=120).collect::<Vec<_>>());
    for rec in &sz.augmentation {
        assert!(rec.p0 > 0.0 && rec.p0 < 1.0);
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    let s = sample();
    let mut c = config(11);
    c.burn_in = c.iterations;
    assert!(run_chain(&s, c).is_err());
    let mut c = config(11);
    c.n_population = 10;
    assert!(run_chain(&s, c).is_err());
    let mut c = config(11);
    c.t_mc = 0;
    assert!(run_chain(&s, c).is_err());
}

#[test]
fn validated_chain_keeps_invariants() {
    let s = sample();
    let mut c = config(12);
    c.validate = true;
    let sz = conditions(s.layout());
    run_chain_sz(&s, c.clone(), sz.clone(), SzMode::Exact).unwrap();
    run_chain_sz(&s, c, sz, SzMode::Approximate).unwrap();
}
