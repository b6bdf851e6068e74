use affine_adam::lemmas::{
    descent_residual, first_a_monte_carlo, lemma1_diagnostic, potential_sequence, surrogate_decomposition,
};
use affine_adam::rng::stream;
use affine_adam::{
    run_trajectory, LemmaError, LogLevel, ObjectiveOracle, ObjectiveSpec, OptimizerConfig, TrajectoryOptions,
    TrajectoryRecord,
};

fn full() -> TrajectoryOptions {
    TrajectoryOptions {
        level: Some(LogLevel::Full),
        ..Default::default()
    }
}

fn quartic(sigma1: f64) -> ObjectiveOracle {
    ObjectiveOracle::build(&ObjectiveSpec::Quartic {
        dim: 3,
        sigma0: 1.0,
        sigma1,
        box_radius: 1.0,
    })
    .unwrap()
}

fn quadratic(a: Vec<f64>, sigma0: f64) -> ObjectiveOracle {
    ObjectiveOracle::build(&ObjectiveSpec::Quadratic { a, sigma0, sigma1: 0.0 }).unwrap()
}

fn run(oracle: &ObjectiveOracle, config: &OptimizerConfig, x0: &[f64], steps: u64, index: u64) -> TrajectoryRecord {
    run_trajectory(oracle, config, x0, steps, 21, index, &full()).unwrap()
}

#[test]
fn potential_reduces_to_iterates_without_momentum() {
    let oracle = quartic(0.5);
    let config = OptimizerConfig::modified(1e-2, 0.0, 0.99, 1.0).unwrap();
    let rec = run(&oracle, &config, &[0.5, -0.2, 0.9], 50, 0);
    let p = potential_sequence(&rec, &config).unwrap();
    assert_eq!(p.u.len() as u64, rec.len() + 1);
    for t in 1..=rec.len() + 1 {
        assert_eq!(p.u[(t - 1) as usize], rec.iterate(t).unwrap());
    }
}

#[test]
fn potential_is_constant_at_a_noiseless_stationary_point() {
    let oracle = quadratic(vec![1.0, 2.0], 0.0);
    let config = OptimizerConfig::modified(1e-2, 0.9, 0.999, 1.0).unwrap();
    let rec = run(&oracle, &config, &[0.0, 0.0], 20, 0);
    let p = potential_sequence(&rec, &config).unwrap();
    assert!(p.u.iter().all(|u| u == &p.u[0]));
    assert_eq!(p.max_relative_residual, 0.0);
}

#[test]
fn potential_split_matches_increments() {
    let oracle = quartic(0.5);
    for (beta1, beta2) in [(0.5, 0.9), (0.9, 0.999), (0.3, 0.5)] {
        let config = OptimizerConfig::modified(5e-2, beta1, beta2, 0.1).unwrap();
        let rec = run(&oracle, &config, &[0.7, -0.4, 0.2], 300, 1);
        let p = potential_sequence(&rec, &config).unwrap();
        assert!(p.max_relative_residual <= 1e-10, "{beta1} {beta2}: {}", p.max_relative_residual);
        assert!(p.max_iterate_gap_ulps <= 4.0, "{}", p.max_iterate_gap_ulps);
    }
}

#[test]
fn potential_rejects_large_momentum_and_the_original_update() {
    let oracle = quartic(0.0);
    let config = OptimizerConfig::modified(1e-2, 0.95, 0.81, 1.0).unwrap();
    let rec = run(&oracle, &config, &[0.1, 0.1, 0.1], 5, 0);
    assert!(matches!(potential_sequence(&rec, &config), Err(LemmaError::Precondition(_))));

    let original = OptimizerConfig::original(1e-2, 0.5, 0.9, 1e-8, 1e-16).unwrap();
    let rec = run(&oracle, &original, &[0.1, 0.1, 0.1], 5, 0);
    assert!(matches!(potential_sequence(&rec, &original), Err(LemmaError::Precondition(_))));

    let summary = run_trajectory(
        &oracle,
        &OptimizerConfig::modified(1e-2, 0.5, 0.9, 1.0).unwrap(),
        &[0.1, 0.1, 0.1],
        5,
        0,
        0,
        &TrajectoryOptions {
            level: Some(LogLevel::Summary),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(matches!(
        potential_sequence(&summary, &summary.config),
        Err(LemmaError::MissingLog(_))
    ));
}

#[test]
fn descent_inequality_has_nonnegative_slack_on_quadratic() {
    let oracle = quadratic(vec![1.0, 3.0, 0.5], 0.3);
    let smooth = oracle.smoothness();
    let config = OptimizerConfig::modified(0.1, 0.9, 0.99, 0.5).unwrap();
    let rec = run(&oracle, &config, &[2.0, -1.0, 1.5], 200, 2);
    let r = descent_residual(&rec, &oracle, &smooth).unwrap();
    assert_eq!(r.residuals.len(), 200);
    assert!(r.outside_region.is_empty());
    assert!(r.residuals.iter().all(|&v| v >= -1e-12), "{:?}", r.residuals.iter().cloned().fold(f64::INFINITY, f64::min));
}

#[test]
fn first_a_is_nonnegative_without_noise() {
    let oracle = quadratic(vec![1.0, 2.0], 0.0);
    let config = OptimizerConfig::rmsprop(1e-2, 0.9, 1.0).unwrap();
    let rec = run(&oracle, &config, &[1.0, -1.0], 10, 0);
    for t in 1..=10 {
        let (a, _) = surrogate_decomposition(&rec, &oracle, t).unwrap();
        assert!(a >= 0.0);
    }
    assert!(matches!(
        surrogate_decomposition(&rec, &oracle, 11),
        Err(LemmaError::StepOutOfRange { .. })
    ));
}

#[test]
fn first_a_expectation_matches_closed_form() {
    let oracle = quartic(0.5);
    let config = OptimizerConfig::rmsprop(1e-2, 0.9, 1.0).unwrap();
    let mut rng = stream(5, 0);
    let mc = first_a_monte_carlo(&oracle, &[0.6, -0.3, 0.8], &[0.4, 1.0, 0.1], &config, 20_000, &mut rng).unwrap();
    assert!(mc.within(4.0), "{mc:?}");
    assert!(mc.expected > 0.0);
}

#[test]
fn first_b_lower_bound_holds_on_rmsprop() {
    let oracle = quartic(0.5);
    let (noise, smooth) = (oracle.noise(), oracle.smoothness());
    let config = OptimizerConfig::rmsprop(1e-2, 0.99, 1.0).unwrap();
    let rec = run(&oracle, &config, &[0.6, -0.3, 0.8], 40, 3);
    let mut rng = stream(6, 0);
    for t in [1, 10, 40] {
        let r = lemma1_diagnostic(&rec, &oracle, &noise, &smooth, t, 1.0, 7.0, 4000, &mut rng).unwrap();
        assert!(r.holds_within_2se, "t = {t}: {r:?}");
        assert!(r.bound <= 0.0);
    }
}

#[test]
fn trajectories_are_reproducible_per_stream() {
    let oracle = quartic(0.5);
    let config = OptimizerConfig::modified(1e-2, 0.9, 0.999, 1.0).unwrap();
    let a = run(&oracle, &config, &[0.5, 0.5, 0.5], 100, 4);
    let b = run(&oracle, &config, &[0.5, 0.5, 0.5], 100, 4);
    let c = run(&oracle, &config, &[0.5, 0.5, 0.5], 100, 5);
    assert_eq!(a, b);
    assert_ne!(a.vectors, c.vectors);
}
