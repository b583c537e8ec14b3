use cogsim::baselines::{grid_search, uniform_policy, PolicyVector, StationaryExecutor};
use cogsim::experiment::ActionTally;
use cogsim::sim::{simulate, SimOptions};
use cogsim::{failure_ratio, run_simulation, ActionId, FeedbackCadence, QLearner, SimConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square_p(observed: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

#[test]
fn primary_packets_are_conserved() {
    for (lambda1, seed) in [(0.05, 1), (0.3, 2), (2.0, 3)] {
        let cfg = SimConfig { lambda1, seed, ..SimConfig::default() };
        let mut ex = StationaryExecutor::new(uniform_policy(cfg.ws).unwrap());
        let opts = SimOptions { check_invariants: true, ..SimOptions::summary() };
        let run = simulate(&cfg, &mut ex, 50_000, &opts).unwrap();
        let m = &run.metrics;
        let in_buffer = u64::from(run.final_primary.queue_len);
        assert_eq!(m.arrivals_admitted, m.p_delivered_packets + m.x2_count + in_buffer);
        assert!(run.final_primary.queue_len <= cfg.buffer_b);
        assert!(m.x2_count <= m.x3_count);
    }
}

#[test]
fn forced_silence_follows_a_negative_bit() {
    let cfg = SimConfig { lambda1: 0.1, seed: 2, ..SimConfig::default() };
    let mut q = QLearner::new(&cfg);
    let run = run_simulation(&cfg, &mut q, 60_000).unwrap();
    let mut forced = 0;
    for a in &run.actions {
        let bit = if a.start_slot == 0 { true } else { run.rows[a.start_slot as usize - 1].feedback_bit };
        assert_eq!(a.forced, !bit, "action at slot {}", a.start_slot);
        if a.forced {
            forced += 1;
            assert_eq!(a.action, ActionId::SILENT);
            assert_eq!(a.start_slot, a.end_slot);
            assert_eq!(a.success, None);
        }
    }
    assert!(forced > 0, "scenario never violated the constraint");
}

#[test]
fn every_transmission_is_attempted_once() {
    let cfg = SimConfig { packet_slots: 2, ..SimConfig::default() };
    let mut ex = StationaryExecutor::new(uniform_policy(cfg.ws).unwrap());
    let opts = SimOptions::full(None);
    let run = simulate(&cfg, &mut ex, 30_000, &opts).unwrap();
    let airtime = run.rows.iter().filter(|r| r.outcome.secondary_transmitted).count() as u64;
    let finished: Vec<_> = run.actions.iter().filter(|a| !a.action.is_silent()).collect();
    assert!(finished.iter().all(|a| a.success.is_some()));
    let attempts = run.metrics.s_attempts_clear + run.metrics.s_attempts_overlap;
    assert_eq!(attempts, finished.len() as u64);
    // a transmission cut by the horizon may leave one partial packet on air
    let full = finished.len() as u64 * u64::from(cfg.packet_slots);
    assert!(airtime >= full && airtime < full + u64::from(cfg.packet_slots));
}

#[test]
fn uniform_counters_are_uniform() {
    let cfg = SimConfig::default();
    let mut ex = StationaryExecutor::new(uniform_policy(cfg.ws).unwrap());
    let opts = SimOptions { trace_every: 0, ..SimOptions::full(None) };
    let run = simulate(&cfg, &mut ex, 200_000, &opts).unwrap();
    let tally = ActionTally::from_actions(&run.actions, cfg.num_actions());
    assert_eq!(tally.voluntary[0], 0);
    let p = chi_square_p(&tally.voluntary[1..], &[1.0 / 3.0; 3]);
    assert!(p > 1e-3, "p = {p}, counts {:?}", tally.voluntary);
}

#[test]
fn stationary_policy_frequencies_match_kappa() {
    let kappa = [0.1, 0.2, 0.3, 0.4];
    let cfg = SimConfig::default();
    let mut ex = StationaryExecutor::new(PolicyVector::new(kappa.to_vec()).unwrap());
    let opts = SimOptions { trace_every: 0, ..SimOptions::full(None) };
    let run = simulate(&cfg, &mut ex, 200_000, &opts).unwrap();
    let tally = ActionTally::from_actions(&run.actions, cfg.num_actions());
    let p = chi_square_p(&tally.voluntary, &kappa);
    assert!(p > 1e-3, "p = {p}, counts {:?}", tally.voluntary);
}

#[test]
fn failure_ratio_with_equal_decode_probabilities() {
    // every attempt fails with 0.5, so a packet is dropped with 0.5^4
    let cfg = SimConfig { lambda1: 5.0, rho: 0.5, rho_star: 0.5, ..SimConfig::default() };
    let mut ex = StationaryExecutor::new(uniform_policy(cfg.ws).unwrap());
    let run = simulate(&cfg, &mut ex, 400_000, &SimOptions::summary()).unwrap();
    let n = run.metrics.x3_count as f64;
    let se = (0.0625 * 0.9375 / n).sqrt();
    let got = failure_ratio(&run.metrics);
    assert!((got - 0.0625).abs() < 3.0 * se, "{got} over {n} packets");
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = SimConfig { seed: 11, ..SimConfig::default() };
    let a = run_simulation(&cfg, &mut QLearner::new(&cfg), 20_000).unwrap().to_csv();
    let b = run_simulation(&cfg, &mut QLearner::new(&cfg), 20_000).unwrap().to_csv();
    assert_eq!(a, b);
    let other = SimConfig { seed: 12, ..cfg.clone() };
    let c = run_simulation(&other, &mut QLearner::new(&other), 20_000).unwrap().to_csv();
    assert_ne!(a, c);
}

#[test]
fn completion_cadence_only_evaluates_on_primary_events() {
    let cfg = SimConfig { feedback_cadence: FeedbackCadence::Completion, ..SimConfig::default() };
    let run = run_simulation(&cfg, &mut QLearner::new(&cfg), 20_000).unwrap();
    let m = &run.metrics;
    assert_eq!(m.feedback_evaluations, m.p_delivered_packets + m.x2_count);

    let cfg = SimConfig::default();
    let run = run_simulation(&cfg, &mut QLearner::new(&cfg), 20_000).unwrap();
    assert_eq!(run.metrics.feedback_evaluations, 20_000);
}

#[test]
fn zero_tolerance_grid_is_silent_and_best_dominates() {
    let cfg = SimConfig { gamma1: 0.0, ..SimConfig::default() };
    let g = grid_search(&cfg, 0.5, 100_000).unwrap();
    assert_eq!(g.table.len(), 10);
    assert!(g.best.is_silent());
    assert!(!g.no_feasible_point);

    let cfg = SimConfig::default();
    let g = grid_search(&cfg, 0.5, 100_000).unwrap();
    let best = g.table.iter().find(|p| p.policy == g.best).unwrap();
    assert!(best.feasible);
    for p in g.table.iter().filter(|p| p.feasible) {
        assert!(best.theta_s >= p.theta_s);
    }
    let silent = g.table.iter().find(|p| p.policy.is_silent()).unwrap();
    assert_eq!(silent.loss, 0.0);
    assert_eq!(silent.theta_s, 0.0);
}
