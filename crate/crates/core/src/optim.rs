//! Bias-correction-free Adam with the `sqrt(v + zeta)` denominator, the
//! original `sqrt(v) + lambda` variant for parity runs, and RMSProp as the
//! `beta1 = 0` special case of the same update.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack allowed when comparing an observed ratio to its bound.
pub const RATIO_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("invalid hyperparameter {name} = {value}: {reason}")]
    InvalidHyperparameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite gradient component at coordinate {0}")]
    NonFiniteGradient(usize),
    #[error("momentum ratio bound needs beta1^2 < beta2 (beta1 = {beta1}, beta2 = {beta2})")]
    RatioBoundUndefined { beta1: f64, beta2: f64 },
    #[error("invariant violated at step {t}: {what} = {value} exceeds {bound}")]
    InvariantViolation {
        t: u64,
        what: &'static str,
        value: f64,
        bound: f64,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `x -= eta * m / sqrt(v + zeta)`
    #[default]
    Modified,
    /// `x -= eta * m / (sqrt(v) + lambda)`
    Original,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub zeta: f64,
    pub variant: Variant,
    pub lambda: f64,
    /// Check pathwise invariants after every step and fail on violation.
    pub strict: bool,
}

impl OptimizerConfig {
    pub fn modified(eta: f64, beta1: f64, beta2: f64, zeta: f64) -> Result<Self, OptimError> {
        let c = Self {
            eta,
            beta1,
            beta2,
            zeta,
            variant: Variant::Modified,
            lambda: 0.0,
            strict: false,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn rmsprop(eta: f64, beta2: f64, zeta: f64) -> Result<Self, OptimError> {
        Self::modified(eta, 0.0, beta2, zeta)
    }

    pub fn original(eta: f64, beta1: f64, beta2: f64, lambda: f64, zeta: f64) -> Result<Self, OptimError> {
        let c = Self {
            eta,
            beta1,
            beta2,
            zeta,
            variant: Variant::Original,
            lambda,
            strict: false,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |name, value, reason| Err(OptimError::InvalidHyperparameter { name, value, reason });
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad("eta", self.eta, "must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", self.beta1, "must lie in [0, 1)");
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta2", self.beta2, "must lie in (0, 1)");
        }
        match self.variant {
            Variant::Modified if !(self.zeta.is_finite() && self.zeta > 0.0) => {
                bad("zeta", self.zeta, "must be positive and finite")
            }
            Variant::Original if !(self.lambda.is_finite() && self.lambda >= 0.0) => {
                bad("lambda", self.lambda, "must be nonnegative and finite")
            }
            _ if !(self.zeta.is_finite() && self.zeta >= 0.0) => bad("zeta", self.zeta, "must be nonnegative"),
            _ => Ok(()),
        }
    }

    /// Whether the momentum ratio bound exists for these betas.
    pub fn momentum_ratio_applies(&self) -> bool {
        self.beta1 * self.beta1 < self.beta2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub x: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Per-step diagnostics computed from the post-update state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub displacement_inf_norm: f64,
    pub momentum_ratio_max: f64,
    pub gradient_ratio_max: f64,
}

/// Closed-form ceilings that every step must respect.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvariantBounds {
    pub gradient_ratio: f64,
    pub momentum_ratio: Option<f64>,
    pub displacement: Option<f64>,
}

impl InvariantBounds {
    pub fn for_config(config: &OptimizerConfig) -> Self {
        let momentum_ratio = momentum_ratio_bound(config).ok();
        let displacement = match config.variant {
            Variant::Modified => momentum_ratio.map(|r| config.eta * r),
            Variant::Original => None,
        };
        Self {
            gradient_ratio: gradient_ratio_bound(config.beta2),
            momentum_ratio,
            displacement,
        }
    }

    /// Names, values and bounds of every violated invariant.
    pub fn violations(&self, r: &StepReport) -> Vec<(&'static str, f64, f64)> {
        let exceeds = |value: f64, bound: f64| !(value <= bound * (1.0 + RATIO_TOL));
        let mut out = Vec::new();
        if exceeds(r.gradient_ratio_max, self.gradient_ratio) {
            out.push(("gradient_ratio", r.gradient_ratio_max, self.gradient_ratio));
        }
        if let Some(b) = self.momentum_ratio {
            if exceeds(r.momentum_ratio_max, b) {
                out.push(("momentum_ratio", r.momentum_ratio_max, b));
            }
        }
        if let Some(b) = self.displacement {
            if exceeds(r.displacement_inf_norm, b) {
                out.push(("displacement", r.displacement_inf_norm, b));
            }
        }
        out
    }
}

/// `1 / sqrt(1 - beta2)`
pub fn gradient_ratio_bound(beta2: f64) -> f64 {
    1.0 / (1.0 - beta2).sqrt()
}

/// `(1 - beta1) / (sqrt(1 - beta2) * sqrt(1 - beta1^2 / beta2))`, defined when `beta1^2 < beta2`.
pub fn momentum_ratio_bound(config: &OptimizerConfig) -> Result<f64, OptimError> {
    let (b1, b2) = (config.beta1, config.beta2);
    if !(b1 * b1 < b2) {
        return Err(OptimError::RatioBoundUndefined { beta1: b1, beta2: b2 });
    }
    Ok((1.0 - b1) / ((1.0 - b2).sqrt() * (1.0 - b1 * b1 / b2).sqrt()))
}

/// Builds the initial state; `v0` defaults to `zeta` in every coordinate.
pub fn init_state(config: &OptimizerConfig, x0: &[f64], v0: Option<&[f64]>) -> Result<OptimizerState, OptimError> {
    config.validate()?;
    let d = x0.len();
    if d == 0 {
        return Err(OptimError::DimensionMismatch { expected: 1, got: 0 });
    }
    if let Some(i) = x0.iter().position(|v| !v.is_finite()) {
        return Err(OptimError::InvalidHyperparameter {
            name: "x0",
            value: x0[i],
            reason: "must be finite",
        });
    }
    let v = match v0 {
        Some(v0) => {
            if v0.len() != d {
                return Err(OptimError::DimensionMismatch { expected: d, got: v0.len() });
            }
            if let Some(&bad) = v0.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(OptimError::InvalidHyperparameter {
                    name: "v0",
                    value: bad,
                    reason: "must be nonnegative and finite",
                });
            }
            v0.to_vec()
        }
        None => vec![config.zeta; d],
    };
    Ok(OptimizerState {
        x: x0.to_vec(),
        m: vec![0.0; d],
        v,
        t: 0,
    })
}

/// One update. `g` is the stochastic gradient observed at `state.x`.
pub fn adam_step(state: &mut OptimizerState, config: &OptimizerConfig, g: &[f64]) -> Result<StepReport, OptimError> {
    let d = state.dim();
    if g.len() != d {
        return Err(OptimError::DimensionMismatch { expected: d, got: g.len() });
    }
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(OptimError::NonFiniteGradient(i));
    }
    let (b1, b2, eta, zeta) = (config.beta1, config.beta2, config.eta, config.zeta);
    let mut report = StepReport::default();
    for i in 0..d {
        let gi = g[i];
        let m = b1 * state.m[i] + (1.0 - b1) * gi;
        let v = b2 * state.v[i] + (1.0 - b2) * gi * gi;
        let s = (v + zeta).sqrt();
        let step = match config.variant {
            Variant::Modified => eta * m / s,
            Variant::Original => eta * m / (v.sqrt() + config.lambda),
        };
        state.m[i] = m;
        state.v[i] = v;
        state.x[i] -= step;
        report.displacement_inf_norm = report.displacement_inf_norm.max(step.abs());
        report.momentum_ratio_max = report.momentum_ratio_max.max(m.abs() / s);
        report.gradient_ratio_max = report.gradient_ratio_max.max(gi.abs() / s);
    }
    state.t += 1;
    if config.strict {
        if let Some((what, value, bound)) = InvariantBounds::for_config(config).violations(&report).into_iter().next() {
            return Err(OptimError::InvariantViolation {
                t: state.t,
                what,
                value,
                bound,
            });
        }
    }
    Ok(report)
}

/// RMSProp: the Adam update with `beta1` forced to zero.
pub fn rmsprop_step(state: &mut OptimizerState, config: &OptimizerConfig, g: &[f64]) -> Result<StepReport, OptimError> {
    let config = OptimizerConfig { beta1: 0.0, ..*config };
    adam_step(state, &config, g)
}

/// `sqrt(beta2 * v_i + zeta)` for the current (pre-step) second moment.
pub fn surrogate_denominator(state: &OptimizerState, config: &OptimizerConfig) -> Vec<f64> {
    state.v.iter().map(|&v| (config.beta2 * v + config.zeta).sqrt()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(b1: f64, b2: f64) -> OptimizerConfig {
        OptimizerConfig::modified(0.1, b1, b2, 1.0).unwrap()
    }

    #[test]
    fn two_steps_match_hand_values() {
        let c = cfg(0.5, 0.9);
        let mut s = init_state(&c, &[1.0], None).unwrap();
        assert_eq!(s.v, vec![1.0]);
        adam_step(&mut s, &c, &[2.0]).unwrap();
        assert_eq!(s.m[0], 1.0);
        assert!((s.v[0] - 1.3).abs() < 1e-15);
        assert!((s.x[0] - 0.9340619526604212).abs() < 1e-15);
        adam_step(&mut s, &c, &[-1.0]).unwrap();
        assert_eq!(s.m[0], 0.0);
        assert!((s.v[0] - 1.2700000000000002).abs() < 1e-15);
        assert!((s.x[0] - 0.9340619526604212).abs() < 1e-15);
        assert_eq!(s.t, 2);
    }

    #[test]
    fn original_variant_uses_sqrt_plus_lambda() {
        let c = OptimizerConfig::original(0.1, 0.5, 0.9, 1e-3, 0.0).unwrap();
        let mut s = init_state(&c, &[1.0], Some(&[1.0])).unwrap();
        adam_step(&mut s, &c, &[2.0]).unwrap();
        assert!((s.x[0] - 0.9123710537393384).abs() < 1e-15);
    }

    #[test]
    fn momentum_bound_example() {
        let b = momentum_ratio_bound(&cfg(0.5, 0.9)).unwrap();
        assert!((b - 1.860521018838127).abs() < 1e-12);
        assert!(matches!(
            momentum_ratio_bound(&OptimizerConfig { beta1: 0.99, ..cfg(0.5, 0.9) }),
            Err(OptimError::RatioBoundUndefined { .. })
        ));
    }

    #[test]
    fn zero_gradient_decays_v_and_keeps_x() {
        let c = cfg(0.9, 0.99);
        let mut s = init_state(&c, &[3.0, -2.0], Some(&[4.0, 0.5])).unwrap();
        adam_step(&mut s, &c, &[0.0, 0.0]).unwrap();
        assert_eq!(s.x, vec![3.0, -2.0]);
        assert_eq!(s.v, vec![0.99 * 4.0, 0.99 * 0.5]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(OptimizerConfig::modified(0.1, 0.9, 1.0, 1.0).is_err());
        assert!(OptimizerConfig::modified(0.1, 0.9, 0.99, 0.0).is_err());
        assert!(OptimizerConfig::modified(-0.1, 0.9, 0.99, 1.0).is_err());
        let c = cfg(0.9, 0.99);
        let mut s = init_state(&c, &[1.0, 2.0], None).unwrap();
        assert_eq!(
            adam_step(&mut s, &c, &[1.0]),
            Err(OptimError::DimensionMismatch { expected: 2, got: 1 })
        );
        assert_eq!(adam_step(&mut s, &c, &[1.0, f64::NAN]), Err(OptimError::NonFiniteGradient(1)));
        assert!(init_state(&c, &[1.0], Some(&[-1.0])).is_err());
    }

    #[test]
    fn surrogate_denominator_uses_previous_v() {
        let c = cfg(0.9, 0.9);
        let s = init_state(&c, &[0.0], Some(&[10.0])).unwrap();
        assert_eq!(surrogate_denominator(&s, &c), vec![(0.9f64 * 10.0 + 1.0).sqrt()]);
    }

    fn betas() -> impl Strategy<Value = (f64, f64)> {
        (0.01f64..0.999).prop_flat_map(|b2| (0.0..b2.sqrt() * 0.999, Just(b2)))
    }

    proptest! {
        #[test]
        fn v_stays_between_previous_v_and_g_squared(
            (b1, b2) in betas(),
            v0 in 0.0f64..100.0,
            g in -100.0f64..100.0,
        ) {
            let c = OptimizerConfig::modified(0.01, b1, b2, 1e-3).unwrap();
            let mut s = init_state(&c, &[0.5], Some(&[v0])).unwrap();
            adam_step(&mut s, &c, &[g]).unwrap();
            let (lo, hi) = (v0.min(g * g), v0.max(g * g));
            prop_assert!(s.v[0] >= lo * (1.0 - 1e-15) && s.v[0] <= hi * (1.0 + 1e-15));
        }

        #[test]
        fn ratios_and_displacement_respect_bounds(
            (b1, b2) in betas(),
            zeta in 1e-12f64..10.0,
            eta in 1e-4f64..1.0,
            gs in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..60),
        ) {
            let c = OptimizerConfig::modified(eta, b1, b2, zeta).unwrap().with_strict(true);
            let bounds = InvariantBounds::for_config(&c);
            let mut s = init_state(&c, &[0.0; 3], Some(&[0.0; 3])).unwrap();
            for g in &gs {
                let r = adam_step(&mut s, &c, g).unwrap();
                prop_assert!(bounds.violations(&r).is_empty());
            }
        }

        #[test]
        fn rmsprop_is_adam_with_zero_beta1(
            b2 in 0.01f64..0.999,
            gs in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 2), 1..30),
        ) {
            let a = OptimizerConfig::modified(0.05, 0.0, b2, 0.5).unwrap();
            let r = OptimizerConfig { beta1: 0.7, ..a };
            let mut sa = init_state(&a, &[1.0, -1.0], None).unwrap();
            let mut sr = sa.clone();
            for g in &gs {
                let ra = adam_step(&mut sa, &a, g).unwrap();
                let rr = rmsprop_step(&mut sr, &r, g).unwrap();
                prop_assert_eq!(ra, rr);
            }
            prop_assert_eq!(sa, sr);
        }

        #[test]
        fn v_never_decays_faster_than_beta2_power(
            b2 in 0.01f64..0.999,
            v0 in 0.0f64..10.0,
            gs in prop::collection::vec(-10.0f64..10.0, 1..100),
        ) {
            let c = OptimizerConfig::rmsprop(0.01, b2, 1.0).unwrap();
            let mut s = init_state(&c, &[0.0], Some(&[v0])).unwrap();
            for (t, g) in gs.iter().enumerate() {
                rmsprop_step(&mut s, &c, &[*g]).unwrap();
                prop_assert!(s.v[0] >= b2.powi(t as i32 + 1) * v0 * (1.0 - 1e-12));
            }
        }
    }
}
