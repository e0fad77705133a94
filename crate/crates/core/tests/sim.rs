use diffcast::params::{ElementSize, ProtocolParams, ScenarioParams, Strategy};
use diffcast::sim::{
    compare_strategies, observe_occupancy, search_by_simulation, simulate, simulate_run, BatchEvaluator,
    CompareOptions, MessageKind, SimConfig, SlotTrace,
};
use diffcast::stationary::stationary;
use diffcast::tuner::TuneOptions;
use proptest::prelude::*;

fn bits16() -> ElementSize {
    ElementSize::from_bits(16).unwrap()
}

fn scenario(lambda: f64, mu: f64, capacity: usize, gamma: f64, bers: Vec<f64>) -> ScenarioParams {
    let s = ScenarioParams { lambda, mu, capacity, element_size: bits16(), gamma, neighbors: bers, p_thresh: 0.95 };
    s.validate().unwrap();
    s
}

fn config(horizon: u64, warmup: u64, runs: u32, seed: u64) -> SimConfig {
    SimConfig { horizon, warmup, runs, seed, cancel_transients: true }
}

fn trace(s: &ScenarioParams, p: &ProtocolParams, c: &SimConfig, run: u32) -> Vec<SlotTrace> {
    let mut out = Vec::new();
    let mut obs = |t: &SlotTrace| out.push(t.clone());
    simulate_run(s, p, c, run, Some(&mut obs)).unwrap();
    out
}

#[test]
fn lossless_static_network_is_always_relevant() {
    let s = scenario(2.0, 0.05, 60, 0.0, vec![0.0; 3]);
    let c = config(3000, 200, 3, 11);
    for p in [
        ProtocolParams::full_dump_only(1).unwrap(),
        ProtocolParams::incremental(7, 1, 1).unwrap(),
        ProtocolParams::cumulative(7, 1, 1).unwrap(),
    ] {
        let r = simulate(&s, &p, &c).unwrap();
        assert_eq!(r.mean_relevance, 1.0, "{p:?}");
        assert_eq!(r.relevance_ci_halfwidth, 0.0);
    }
}

#[test]
fn no_arrivals_means_empty_messages() {
    let s = scenario(0.0, 0.01, 100, 0.001, vec![1e-4]);
    let r = simulate(&s, &ProtocolParams::full_dump_only(3).unwrap(), &config(2000, 100, 2, 1)).unwrap();
    assert_eq!(r.mean_volume, 0.0);
}

#[test]
fn reports_are_reproducible() {
    let s = scenario(5.0, 0.01, 500, 0.002, vec![6.6e-6, 1e-5]);
    let p = ProtocolParams::incremental(20, 2, 1).unwrap();
    let c = config(5000, 1000, 4, 99);
    let a = simulate(&s, &p, &c).unwrap();
    let b = simulate(&s, &p, &c).unwrap();
    assert_eq!(a, b);
    let other = simulate(&s, &p, &SimConfig { seed: 100, ..c }).unwrap();
    assert_ne!(a.per_run, other.per_run);
    assert!(a.volume_ci_halfwidth >= 0.0 && (0.0..=1.0).contains(&a.mean_relevance));
}

#[test]
fn full_dump_only_equals_incremental_with_unit_period() {
    let s = scenario(4.0, 0.02, 300, 0.003, vec![6.6e-6, 2e-5]);
    let c = config(3000, 500, 1, 5);
    let a = trace(&s, &ProtocolParams::full_dump_only(2).unwrap(), &c, 0);
    let b = trace(&s, &ProtocolParams::incremental(1, 2, 5).unwrap(), &c, 0);
    assert_eq!(a, b);
    assert!(a.iter().all(|t| t.kind == MessageKind::FullDump && t.size == t.occupancy && t.copies == 2));
}

#[test]
fn traces_follow_the_slot_schedule() {
    let s = scenario(3.0, 0.05, 40, 0.0, vec![1e-3]);
    let c = config(200, 0, 1, 3);
    let p = ProtocolParams::incremental(4, 3, 2).unwrap();
    for t in trace(&s, &p, &c, 0) {
        if t.slot % 4 == 0 {
            assert_eq!((t.kind, t.size, t.copies), (MessageKind::FullDump, t.occupancy, 3));
        } else {
            assert_eq!((t.kind, t.size, t.copies), (MessageKind::Differential, t.adds + t.dels, 2));
        }
        assert!(t.occupancy <= 40);
    }
}

#[test]
fn batch_replay_matches_simulation() {
    let cases = [
        (scenario(6.0, 0.02, 300, 0.004, vec![2e-5, 5e-5]), 300),
        (scenario(50.0, 0.05, 200, 0.0, vec![1e-4]), 200),
        (scenario(1.5, 0.01, 150, 0.01, vec![3e-5, 1e-5, 8e-5]), 50),
    ];
    for (s, max_n) in cases {
        for cancel in [true, false] {
            let c = SimConfig { cancel_transients: cancel, ..config(4000, 300, 2, 17) };
            for run in 0..2 {
                let ev = BatchEvaluator::record(&s, &c, run, 7).unwrap();
                for strategy in [Strategy::Incremental, Strategy::Cumulative] {
                    for n in [1, 2, 9, max_n] {
                        let pairs = ev.evaluate(strategy, n);
                        for &(nf, nd) in &[(1, 1), (2, 1), (1, 3), (7, 7), (4, 2)] {
                            let p = ProtocolParams::new(strategy, n, nf, nd).unwrap();
                            let sim = simulate_run(&s, &p, &c, run, None).unwrap();
                            let b = pairs[((nf - 1) * 7 + nd - 1) as usize];
                            assert_eq!((b.retries_full, b.retries_diff, b.period), (nf, nd, n));
                            assert_eq!(b.volume, sim.volume, "{p:?} cancel={cancel} run={run}");
                            assert_eq!(b.relevance, sim.relevance, "{p:?} cancel={cancel} run={run}");
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn occupancy_matches_stationary_law() {
    let s = scenario(1.0, 0.5, 2, 0.0, vec![0.0]);
    let pi = stationary(&s).unwrap();
    let occ = observe_occupancy(&s, 10_000_000 + 100, 100, 21).unwrap();
    for (f, p) in occ.frequencies.iter().zip(pi.probabilities()) {
        assert!((f - p).abs() < 1e-3, "{f} vs {p}");
    }
    for (lambda, mu, r) in [(2.0, 0.1, 30), (0.7, 0.05, 12), (10.0, 0.2, 25)] {
        let s = scenario(lambda, mu, r, 0.0, vec![0.0]);
        let pi = stationary(&s).unwrap();
        let occ = observe_occupancy(&s, 1_000_000 + 500, 500, 22).unwrap();
        assert!(occ.tv_distance(pi.probabilities()) < 0.02);
        assert!((occ.mean_adds - occ.mean_dels).abs() <= 0.02 * occ.mean_dels);
    }
}

#[test]
fn lossless_comparison_prefers_incremental() {
    let base = scenario(1.0, 0.01, 100, 0.002, vec![0.0]);
    let mut options = CompareOptions::new(4);
    options.runs = 2;
    options.measured_slots = 4000;
    let rows = compare_strategies(&base, &[0.5, 1.0], &[0.02], &options).unwrap();
    assert_eq!(rows.len(), 4);
    for cell in rows.chunks(2) {
        let (inc, cum) = (&cell[0], &cell[1]);
        assert_eq!((inc.strategy, cum.strategy), (Strategy::Incremental, Strategy::Cumulative));
        let (pi, pc) = (inc.protocol.unwrap(), cum.protocol.unwrap());
        assert_eq!((pi.retries_full, pi.retries_diff), (1, 1));
        assert_eq!((pc.retries_full, pc.retries_diff), (1, 1));
        assert!(inc.volume.unwrap() <= cum.volume.unwrap());
    }

    // Without losses only the startup gap matters, so both strategies share
    // the same feasible periods.
    let s = ScenarioParams { lambda: 0.5 * 0.02 * 100.0, mu: 0.02, ..base };
    let c = SimConfig::with_measured(&s, 4, 4000, 1);
    let ev = BatchEvaluator::record(&s, &c, 0, 7).unwrap();
    let max_feasible = |strategy| {
        (1..=50u64).filter(|&n| ev.evaluate(strategy, n)[0].relevance >= 0.95).max()
    };
    let n_inc = max_feasible(Strategy::Incremental);
    assert!(n_inc.is_some());
    assert_eq!(n_inc, max_feasible(Strategy::Cumulative));
    for n in [1, 10, 50] {
        let (a, b) = (ev.evaluate(Strategy::Incremental, n), ev.evaluate(Strategy::Cumulative, n));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.relevance, y.relevance);
            assert!(x.volume <= y.volume);
        }
    }
}

#[test]
fn full_dump_search_is_restricted() {
    let s = scenario(5.0, 0.01, 500, 0.001, vec![2e-5]);
    let c = config(3000, 500, 2, 8);
    let r = search_by_simulation(&s, &[Strategy::FullDumpOnly], &c, &TuneOptions::default()).unwrap();
    let best = r[0].best.unwrap();
    assert_eq!(best.strategy, Strategy::FullDumpOnly);
    assert_eq!((best.full_dump_period, best.retries_diff), (1, 1));
    assert_eq!(r[0].evaluated, 7);
}

#[test]
fn rejects_bad_config() {
    let s = scenario(1.0, 0.1, 10, 0.0, vec![0.0]);
    let p = ProtocolParams::incremental(2, 1, 1).unwrap();
    assert!(simulate(&s, &p, &config(10, 10, 1, 0)).is_err());
    assert!(simulate(&s, &p, &config(10, 0, 0, 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn relevance_is_monotone_in_channel_quality(
        ber in 1e-5..3e-4f64,
        factor in 0.0..1.0f64,
        n in 1u64..30,
        nf in 1u32..4,
        nd in 1u32..4,
        cumulative in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let worse = scenario(3.0, 0.02, 150, 0.003, vec![ber, ber * 0.5]);
        let better = ScenarioParams { neighbors: worse.neighbors.iter().map(|b| b * factor).collect(), ..worse.clone() };
        let p = if cumulative {
            ProtocolParams::cumulative(n, nf, nd).unwrap()
        } else {
            ProtocolParams::incremental(n, nf, nd).unwrap()
        };
        let c = config(3000, 200, 2, seed);
        let a = simulate(&worse, &p, &c).unwrap();
        let b = simulate(&better, &p, &c).unwrap();
        prop_assert!(b.mean_relevance >= a.mean_relevance);
        prop_assert_eq!(a.mean_volume, b.mean_volume);
    }
}
