use privlab_core::attack::AttackConfig;
use privlab_core::mbp::{estimate, estimate_conditional, MbpConfig};
use privlab_core::models::{LabeledSample, ModelSpec};
use privlab_core::numerics::RngStream;
use privlab_core::protection::MechanismConfig;

fn setup() -> (ModelSpec, Vec<f64>, Vec<LabeledSample>) {
    let spec = ModelSpec::logistic(2, 2);
    let mut rng = RngStream::new(17, 0);
    let theta: Vec<f64> = (0..spec.param_dim()).map(|_| rng.standard_normal()).collect();
    let data = (0..4)
        .map(|i| LabeledSample::from_slice(&[rng.uniform(), rng.uniform()], i % 2).unwrap())
        .collect();
    (spec, theta, data)
}

#[test]
fn success_counts_match_a_recount_of_trial_errors() {
    let (spec, theta, data) = setup();
    let attack = AttackConfig::new(100, 1.0, 0.05);
    let mech = MechanismConfig::gaussian(0.1);
    let rng = RngStream::new(1, 2);
    let loose = estimate_conditional(&spec, &theta, &mech, &data, &attack, &MbpConfig::new(50, 0.05, 0.05), &rng).unwrap();
    let tight = estimate_conditional(&spec, &theta, &mech, &data, &attack, &MbpConfig::new(50, 0.01, 0.05), &rng).unwrap();
    assert_eq!(loose.trial_errors, tight.trial_errors);
    for (omega, est) in [(0.05, &loose), (0.01, &tight)] {
        for (d, trials) in est.trial_errors.iter().enumerate() {
            assert_eq!(trials.len(), 50);
            let recount = trials
                .iter()
                .filter_map(|t| t.as_ref())
                .filter(|slots| slots[0] < omega)
                .count() as u64;
            assert_eq!(recount, est.success_counts[d]);
            assert_eq!(est.kappa_hat[d], recount as f64 / 50.0);
        }
    }
    assert!(loose.success_counts.iter().zip(&tight.success_counts).all(|(a, b)| a >= b));
}

#[test]
fn threshold_extremes_give_saturated_estimates() {
    let (spec, theta, data) = setup();
    let attack = AttackConfig::new(20, 1.0, 0.05);
    let mech = MechanismConfig::gaussian(0.1);
    let rng = RngStream::new(2, 2);
    let all = estimate_conditional(&spec, &theta, &mech, &data, &attack, &MbpConfig::new(10, 10.0, 0.05), &rng).unwrap();
    assert!(all.kappa_hat.iter().all(|k| *k == 1.0));
    let none = estimate_conditional(&spec, &theta, &mech, &data, &attack, &MbpConfig::new(10, 0.0, 0.05), &rng).unwrap();
    assert!(none.kappa_hat.iter().all(|k| *k == 0.0));

    // smoothed kappa 1 - 1/20 against a uniform prior of 1/4
    let (est, _) = estimate(&spec, &theta, &mech, &data, &attack, &MbpConfig::new(10, 10.0, 0.05), &rng).unwrap();
    assert!((est.epsilon_hat - (4.0 * 0.95f64).ln()).abs() < 1e-12);
    assert!((est.zeta - (40f64.ln() / 10.0).sqrt()).abs() < 1e-12);
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let (spec, theta, data) = setup();
    let attack = AttackConfig::new(50, 1.0, 0.05);
    let mech = MechanismConfig::laplace(0.1);
    let cfg = MbpConfig::new(20, 0.02, 0.05);
    let rng = RngStream::new(3, 2);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| estimate(&spec, &theta, &mech, &data, &attack, &cfg, &rng).unwrap())
    };
    assert_eq!(run(1), run(4));
}
