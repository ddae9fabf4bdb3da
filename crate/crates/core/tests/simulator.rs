mod common;

use common::{conservation_run, equivalence_run, random_config, Shape};
use fleetlab::baselines::{AlwaysPass, PowerOfK, RandomFeasible};
use fleetlab::sim::{initial_state, run_trajectory, Policy, RngStream, TraceLevel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg_from(seed: u64, shape: &Shape) -> fleetlab::NetworkConfig {
    random_config(&mut ChaCha8Rng::seed_from_u64(seed), shape)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_policy_conserves_fleet_chargers_and_queues(cfg_seed in any::<u64>(), sim_seed in any::<u64>()) {
        let cfg = cfg_from(cfg_seed, &Shape::small());
        prop_assert_eq!(conservation_run(&cfg, sim_seed, 60), 0);
    }

    #[test]
    fn atomic_epochs_match_fleet_transition(cfg_seed in any::<u64>(), sim_seed in any::<u64>()) {
        let shape = Shape { dyadic_rewards: true, ..Shape::small() };
        let cfg = cfg_from(cfg_seed, &shape);
        prop_assert_eq!(equivalence_run(&cfg, sim_seed, 30), 0);
    }

    #[test]
    fn trajectories_repeat_under_a_seed(cfg_seed in any::<u64>(), seed in any::<u64>(), stream in 0u64..1000) {
        let cfg = cfg_from(cfg_seed, &Shape::small());
        let s = RngStream::new(seed, stream);
        let a = run_trajectory(&cfg, &initial_state(&cfg), &RandomFeasible, 2, s, TraceLevel::Atomic).unwrap();
        let b = run_trajectory(&cfg, &initial_state(&cfg), &RandomFeasible, 2, s, TraceLevel::Atomic).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn epoch_records_balance(cfg_seed in any::<u64>(), seed in any::<u64>()) {
        let cfg = cfg_from(cfg_seed, &Shape::small());
        let tr = run_trajectory(&cfg, &initial_state(&cfg), &PowerOfK::new(2).unwrap(), 2, RngStream::new(seed, 0), TraceLevel::Atomic).unwrap();
        for e in &tr.epochs {
            let h = e.fleet;
            prop_assert_eq!(h.fulfill + h.reposition + h.charge + h.idle + h.busy, cfg.fleet_size);
            prop_assert_eq!(h.fulfill, e.fulfilled);
        }
        let daily: f64 = tr.epochs.iter().map(|e| e.reward).sum();
        prop_assert!((daily - tr.total_reward()).abs() < 1e-9);
    }
}

#[test]
fn passing_forever_earns_nothing_and_drops_every_order() {
    let cfg = fleetlab::data::synth_scenario("two-region-commute", 0).unwrap();
    let tr = run_trajectory(&cfg, &initial_state(&cfg), &AlwaysPass, 3, RngStream::new(4, 0), TraceLevel::Summary).unwrap();
    assert_eq!(tr.total_reward(), 0.0);
    assert!(tr.epochs.iter().all(|e| e.fulfilled == 0));
    let arrived: u32 = tr.epochs.iter().map(|e| e.arrivals).sum();
    let lost: u32 = tr.epochs.iter().map(|e| e.abandoned + e.rejected).sum();
    let waiting: u32 = tr.final_state.as_ref().unwrap().trips.iter().sum();
    assert_eq!(arrived, lost + waiting);
}

#[test]
fn policies_share_demand_on_a_stream() {
    let cfg = fleetlab::data::synth_scenario("hub-spoke-imbalanced", 1).unwrap();
    let s = RngStream::new(9, 3);
    let policies: [&dyn Policy; 3] = [&AlwaysPass, &RandomFeasible, &PowerOfK::new(2).unwrap()];
    let arrivals: Vec<Vec<u32>> = policies
        .iter()
        .map(|p| {
            run_trajectory(&cfg, &initial_state(&cfg), *p, 1, s, TraceLevel::Summary)
                .unwrap()
                .epochs
                .iter()
                .map(|e| e.arrivals)
                .collect()
        })
        .collect();
    assert_eq!(arrivals[0], arrivals[1]);
    assert_eq!(arrivals[0], arrivals[2]);
}
