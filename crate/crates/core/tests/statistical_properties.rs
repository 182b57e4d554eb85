use std::sync::Arc;

use mtssrp::calibrate::{arl_lower_bound, estimate_arl0, Welford};
use mtssrp::policy::{Experiment, MtssrpParams, PolicySpec};
use mtssrp::scenarios::ScenarioSpec;
use mtssrp::{DetectionRule, GaussianModel, ModeBank, MonitorState, Observation, Solver};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_scenario() -> (Arc<ModeBank>, ScenarioSpec) {
    let scenario = ScenarioSpec::nonoverlap(60, 6, 0.5);
    (Arc::new(scenario.build_bank().unwrap()), scenario)
}

fn mtssrp(q: usize, ks: usize) -> PolicySpec {
    PolicySpec::Mtssrp(MtssrpParams {
        q,
        ks,
        solver: Solver::Sort,
        rule: DetectionRule::Max,
    })
}

#[test]
fn likelihood_ratio_has_unit_mean_under_the_base() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base = GaussianModel::diagonal(vec![0.2, -0.1, 0.0], vec![1.0, 0.8, 1.5]).unwrap();
    let cov = DMatrix::from_row_slice(3, 3, &[1.2, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 1.6]);
    let modes = vec![
        GaussianModel::diagonal(vec![0.6, -0.1, 0.3], vec![1.1, 0.8, 1.5]).unwrap(),
        GaussianModel::full(vec![0.4, 0.1, -0.2], cov).unwrap(),
    ];
    let bank = ModeBank::unlabeled(base, modes).unwrap();
    let indices = vec![0, 2];
    for k in 0..bank.len() {
        let mut acc = Welford::default();
        for _ in 0..40_000 {
            let x = bank.base().sample(&mut rng);
            let values = vec![x[0], x[2]];
            acc.push(bank.llr_at(k, &indices, &values).exp());
        }
        let z = (acc.mean - 1.0) / acc.se();
        assert!(z.abs() < 4.0, "mode {k}: mean {} se {}", acc.mean, acc.se());
    }
}

#[test]
fn summed_null_statistics_stay_centred() {
    let (bank, scenario) = small_scenario();
    let k = bank.len() as f64;
    for policy in [mtssrp(5, 2), PolicySpec::mrandom(5)] {
        let exp = Experiment::new(bank.clone(), scenario.clone(), policy, 5).unwrap();
        let mut at = [Welford::default(), Welford::default(), Welford::default()];
        for rep in 0..4000 {
            let mut path = exp.null_path(rep, false);
            for t in 1..=10u64 {
                path.step();
                let slot = match t {
                    1 => 0,
                    5 => 1,
                    10 => 2,
                    _ => continue,
                };
                let total: f64 = path.detector().local_statistics().iter().map(|r| r.exp()).sum();
                at[slot].push(total - k * t as f64);
            }
        }
        for acc in &at {
            assert!(
                acc.mean.abs() <= 4.0 * acc.se(),
                "{:?}: mean {} se {}",
                policy.kind(),
                acc.mean,
                acc.se()
            );
        }
    }
}

#[test]
fn null_run_length_respects_the_threshold_bound() {
    let (bank, scenario) = small_scenario();
    let exp = Experiment::new(bank.clone(), scenario, mtssrp(5, 2), 9).unwrap();
    for threshold in [2.0, 3.5, 5.0] {
        let est = estimate_arl0(&exp, threshold, 600, 20_000).unwrap();
        let bound = arl_lower_bound(bank.len(), threshold);
        assert!(
            est.mean >= bound - 3.0 * est.se,
            "A={threshold}: {} vs {bound}",
            est.mean
        );
    }
}

#[test]
fn fully_observed_true_mode_dominates() {
    let p = 4;
    let base = GaussianModel::standard(p);
    let first = GaussianModel::diagonal(vec![0.5, 0.5, 0.0, 0.0], vec![1.0; p]).unwrap();
    let second = GaussianModel::diagonal(vec![0.0, 0.5, 0.5, 0.0], vec![1.0; p]).unwrap();
    let bank = ModeBank::unlabeled(base, vec![first, second]).unwrap();
    let indices: Vec<usize> = (0..p).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut wins = 0;
    for _ in 0..300 {
        let mut state = MonitorState::new(2);
        for t in 1..=200 {
            let x = bank.mode(0).sample(&mut rng);
            let obs = Observation::new(t, indices.clone(), x).unwrap();
            state = state.update(&bank, &obs).unwrap();
        }
        let values = state.values();
        if values[0] > values[1] {
            wins += 1;
        }
    }
    assert!(wins >= 297, "{wins}/300");
}

#[test]
fn diagonal_and_dense_forms_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = 7;
    let means: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let vars: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..p).map(|_| rng.random_range(0.5..2.0)).collect())
        .collect();
    let diag = |i: usize| GaussianModel::diagonal(means[i].clone(), vars[i].clone()).unwrap();
    let dense =
        |i: usize| GaussianModel::full(means[i].clone(), DMatrix::from_diagonal(&vars[i].clone().into())).unwrap();
    let sparse = ModeBank::unlabeled(diag(0), vec![diag(1), diag(2)]).unwrap();
    let full = ModeBank::unlabeled(dense(0), vec![dense(1), dense(2)]).unwrap();
    for _ in 0..200 {
        let n = rng.random_range(1..=p);
        let mut indices = rand::seq::index::sample(&mut rng, p, n).into_vec();
        indices.sort_unstable();
        let values: Vec<f64> = indices.iter().map(|_| rng.random_range(-3.0..3.0)).collect();
        for k in 0..2 {
            let a = sparse.llr_at(k, &indices, &values);
            let b = full.llr_at(k, &indices, &values);
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}
