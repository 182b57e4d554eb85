use mtssrp::monitor::LogSr;
use mtssrp::planner::{
    draw_thompson, plan_exhaustive, plan_greedy, plan_next, plan_sort, sampled_reward, scores_from_draws, PlannerConfig,
};
use mtssrp::{GaussianModel, ModeBank, MonitorState, Solver};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Diagonal bank with random sparse shifts and variances.
fn random_bank(p: usize, k: usize, rng: &mut ChaCha8Rng) -> ModeBank {
    let base = GaussianModel::standard(p);
    let modes = (0..k)
        .map(|_| {
            let mut mean = vec![0.0; p];
            let mut var = vec![1.0; p];
            let forced = rng.random_range(0..p);
            for j in 0..p {
                if j == forced || rng.random_bool(0.4) {
                    mean[j] = rng.random_range(-1.5..1.5);
                    var[j] = rng.random_range(0.5..2.0);
                }
            }
            GaussianModel::diagonal(mean, var).unwrap()
        })
        .collect();
    ModeBank::unlabeled(base, modes).unwrap()
}

fn random_state(k: usize, rng: &mut ChaCha8Rng) -> MonitorState {
    let mut state = MonitorState::new(k);
    state.t = rng.random_range(1..50);
    for s in state.logstats.iter_mut() {
        *s = if rng.random_bool(0.1) {
            LogSr::Zero
        } else {
            LogSr::Log(rng.random_range(-5.0..8.0))
        };
    }
    state
}

struct Instance {
    bank: ModeBank,
    state: MonitorState,
    q: usize,
    ks: usize,
    rng: ChaCha8Rng,
}

fn instance(seed: u64, max_p: usize, max_q: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.random_range(2..=max_p);
    let k = rng.random_range(1..=4);
    let q = rng.random_range(1..=max_q.min(p));
    let ks = rng.random_range(1..=k);
    let bank = random_bank(p, k, &mut rng);
    let state = random_state(k, &mut rng);
    Instance {
        bank,
        state,
        q,
        ks,
        rng,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sort_attains_the_exhaustive_optimum(seed in any::<u64>()) {
        let mut inst = instance(seed, 12, 4);
        let draws = draw_thompson(&inst.state, &inst.bank, inst.ks, &mut inst.rng);
        let sorted = plan_sort(&scores_from_draws(&inst.bank, &draws).unwrap(), inst.q);
        let best = plan_exhaustive(&inst.bank, &draws, inst.q).unwrap();
        prop_assert_eq!(sorted.indices(), best.indices());
        prop_assert_eq!(
            sampled_reward(&inst.bank, &draws, sorted.indices()),
            sampled_reward(&inst.bank, &draws, best.indices())
        );
    }

    #[test]
    fn greedy_first_pick_is_the_best_single_sensor(seed in any::<u64>()) {
        let mut inst = instance(seed, 12, 1);
        let draws = draw_thompson(&inst.state, &inst.bank, inst.ks, &mut inst.rng);
        let greedy = plan_greedy(&inst.bank, &draws, 1);
        let best = plan_exhaustive(&inst.bank, &draws, 1).unwrap();
        prop_assert_eq!(greedy.indices(), best.indices());
    }

    #[test]
    fn greedy_matches_sort_on_diagonal_banks(seed in any::<u64>()) {
        let mut inst = instance(seed, 30, 8);
        let draws = draw_thompson(&inst.state, &inst.bank, inst.ks, &mut inst.rng);
        let sorted = plan_sort(&scores_from_draws(&inst.bank, &draws).unwrap(), inst.q);
        let greedy = plan_greedy(&inst.bank, &draws, inst.q);
        let gap = sampled_reward(&inst.bank, &draws, sorted.indices())
            - sampled_reward(&inst.bank, &draws, greedy.indices());
        prop_assert!(gap.abs() < 1e-9, "gap {}", gap);
    }

    #[test]
    fn scores_vanish_off_the_drawn_supports(seed in any::<u64>()) {
        let mut inst = instance(seed, 40, 4);
        let draws = draw_thompson(&inst.state, &inst.bank, inst.ks, &mut inst.rng);
        let scores = scores_from_draws(&inst.bank, &draws).unwrap();
        for (j, s) in scores.iter().enumerate() {
            let touched = draws.modes.iter().any(|&k| inst.bank.support(k).contains(&j));
            if !touched {
                prop_assert_eq!(*s, 0.0);
            }
        }
    }

    #[test]
    fn drawn_modes_are_the_current_leaders(seed in any::<u64>()) {
        let mut inst = instance(seed, 12, 4);
        let draws = draw_thompson(&inst.state, &inst.bank, inst.ks, &mut inst.rng);
        let values = inst.state.values();
        let worst_drawn = draws.modes.iter().map(|&k| values[k]).fold(f64::INFINITY, f64::min);
        for k in 0..values.len() {
            if !draws.modes.contains(&k) {
                prop_assert!(values[k] <= worst_drawn);
            }
        }
    }

    #[test]
    fn every_solver_respects_the_budget(seed in any::<u64>()) {
        let mut inst = instance(seed, 12, 4);
        let p = inst.bank.dim();
        for solver in [Solver::Sort, Solver::Greedy, Solver::Exhaustive, Solver::Random] {
            let cfg = PlannerConfig { q: inst.q, ks: inst.ks, solver, rng_seed: 0 };
            let plan = plan_next(&inst.state, &inst.bank, &cfg, &mut inst.rng).unwrap();
            prop_assert_eq!(plan.len(), inst.q);
            prop_assert!(plan.indices().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(plan.indices().iter().all(|&j| j < p));
        }
    }
}
