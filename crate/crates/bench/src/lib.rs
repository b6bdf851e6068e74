//! Fixtures shared by the benchmarks.

use affine_adam::{ObjectiveOracle, ObjectiveSpec, OptimizerConfig, SequenceCase};

pub fn quartic(dim: usize) -> ObjectiveOracle {
    ObjectiveOracle::build(&ObjectiveSpec::Quartic {
        dim,
        sigma0: 1.0,
        sigma1: 0.0,
        box_radius: 1.0,
    })
    .expect("valid quartic")
}

pub fn adam_config() -> OptimizerConfig {
    OptimizerConfig::modified(1e-3, 0.9, 0.999, 1.0).expect("valid config")
}

/// Deterministic pseudo-random sequence case of length `t`.
pub fn sequence_case(t: usize) -> SequenceCase {
    let c = (0..t).map(|k| ((k * 2654435761) % 1000) as f64 / 100.0).collect();
    SequenceCase::new(c, 0.9, 0.999, 0.5, 1.0)
}
