//! Hyperparameter schedules (beta2, eta, T) and predicted gradient-norm
//! bounds for RMSProp and Adam, with every intermediate constant exposed.

use crate::oracles::ObjectiveOracle;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const FIXED_POINT_MAX_ITER: usize = 100;
pub const FIXED_POINT_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("invalid problem constant {name} = {value}")]
    InvalidConstant { name: &'static str, value: f64 },
    #[error("degenerate schedule: {0}")]
    Degenerate(String),
    #[error("beta2 fixed point did not converge after {iterations} iterations (last step {last_step:e})")]
    NoConvergence { iterations: usize, last_step: f64 },
    #[error("beta1 = {beta1} must satisfy beta1 <= sqrt(beta2) with beta2 = {beta2}")]
    Beta1TooLarge { beta1: f64, beta2: f64 },
    #[error("eta override {eta} exceeds the admissible ceiling {ceiling}")]
    EtaAboveCeiling { eta: f64, ceiling: f64 },
    #[error("schedule was computed for {computed:?}, not {requested:?}")]
    KindMismatch {
        computed: ScheduleKind,
        requested: ScheduleKind,
    },
    #[error("required iteration count {0:e} does not fit in 64 bits")]
    TooManySteps(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Rmsprop,
    Adam,
}

/// Problem-level inputs to the schedules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub d: usize,
    pub l0: f64,
    pub l1: f64,
    pub d0: f64,
    pub d1: f64,
    pub zeta: f64,
    pub f1: f64,
    pub grad1_sq: f64,
    pub f_star: f64,
    pub v0_norm: f64,
    /// `sum_i ln v0_i`
    pub v0_log_sum: f64,
}

impl ProblemConstants {
    /// Reads constants from an oracle at the start point `x1`; `v0` defaults to `zeta`.
    pub fn from_oracle(oracle: &ObjectiveOracle, x1: &[f64], v0: Option<&[f64]>, zeta: f64) -> Result<Self, ScheduleError> {
        let (f1, g) = oracle.eval(x1).map_err(|e| ScheduleError::Degenerate(e.to_string()))?;
        let v0 = v0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![zeta; x1.len()]);
        let s = oracle.smoothness();
        let n = oracle.noise();
        let pc = Self {
            d: x1.len(),
            l0: s.l0,
            l1: s.l1,
            d0: n.d0,
            d1: n.d1,
            zeta,
            f1,
            grad1_sq: g.iter().map(|v| v * v).sum(),
            f_star: oracle.f_inf(),
            v0_norm: v0.iter().map(|v| v * v).sum::<f64>().sqrt(),
            v0_log_sum: v0.iter().map(|v| v.ln()).sum(),
        };
        pc.validate()?;
        Ok(pc)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let bad = |name, value| Err(ScheduleError::InvalidConstant { name, value });
        if self.d == 0 {
            return bad("d", 0.0);
        }
        for (name, v) in [
            ("l0", self.l0),
            ("l1", self.l1),
            ("d0", self.d0),
            ("d1", self.d1),
            ("grad1_sq", self.grad1_sq),
            ("v0_norm", self.v0_norm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(name, v);
            }
        }
        if !(self.zeta.is_finite() && self.zeta > 0.0) {
            return bad("zeta", self.zeta);
        }
        if !(self.f1.is_finite() && self.f_star.is_finite() && self.f1 >= self.f_star) {
            return bad("f1", self.f1);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleResult {
    pub kind: ScheduleKind,
    pub epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eta: f64,
    pub t_min: u64,
    pub predicted_bound: f64,
    /// Whether epsilon is small enough for the schedule's regime condition.
    pub in_regime: bool,
    /// Fixed-point iterations used (zero for RMSProp).
    pub iterations: usize,
    pub constants: BTreeMap<String, f64>,
}

impl ScheduleResult {
    pub fn constant(&self, name: &str) -> f64 {
        self.constants.get(name).copied().unwrap_or(f64::NAN)
    }

    /// The constants map as a TOML document.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

/// Ceiling-style division: a zero or undefined denominator makes the branch inactive.
fn over(num: f64, den: f64) -> f64 {
    if den == 0.0 || den.is_nan() {
        f64::INFINITY
    } else {
        num / den
    }
}

fn check_eps(eps: f64) -> Result<(), ScheduleError> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(ScheduleError::InvalidEpsilon(eps))
    }
}

fn steps(x: f64) -> Result<u64, ScheduleError> {
    if !x.is_finite() || x >= 2f64.powi(63) {
        return Err(ScheduleError::TooManySteps(x));
    }
    Ok((x.ceil() as u64).max(1))
}

fn pick_eta(ceiling: f64, eta_override: Option<f64>) -> Result<f64, ScheduleError> {
    if !(ceiling.is_finite() && ceiling > 0.0) {
        return Err(ScheduleError::Degenerate(format!("step-size ceiling is {ceiling}")));
    }
    match eta_override {
        Some(eta) if !(eta > 0.0 && eta <= ceiling) => Err(ScheduleError::EtaAboveCeiling { eta, ceiling }),
        Some(eta) => Ok(eta),
        None => Ok(ceiling),
    }
}

fn echo(pc: &ProblemConstants, m: &mut BTreeMap<String, f64>) {
    for (k, v) in [
        ("d", pc.d as f64),
        ("L0", pc.l0),
        ("L1", pc.l1),
        ("D0", pc.d0),
        ("D1", pc.d1),
        ("zeta", pc.zeta),
        ("f1", pc.f1),
        ("f_star", pc.f_star),
        ("grad1_sq", pc.grad1_sq),
        ("v0_norm", pc.v0_norm),
        ("v0_log_sum", pc.v0_log_sum),
    ] {
        m.insert(k.into(), v);
    }
}

/// `c = sqrt(zeta) + d sqrt(D0 + ||v0||)`
pub fn c_constant(pc: &ProblemConstants) -> f64 {
    pc.zeta.sqrt() + pc.d as f64 * (pc.d0 + pc.v0_norm).sqrt()
}

fn rmsprop_bound(d: f64, d0: f64, d1: f64, zeta: f64, c: f64, eps: f64) -> f64 {
    (2.0 * d * (35.0 * d0 * d1).sqrt() / zeta.powf(0.25) + c.sqrt()) * eps
}

fn adam_bound(d: f64, d1: f64, c: f64, c6: f64, eps: f64) -> f64 {
    (2.0 * c + (2.0 * c).sqrt() + 4.0 * (d * d1).sqrt() / c6.sqrt()) * eps
}

pub fn rmsprop_schedule(eps: f64, pc: &ProblemConstants) -> Result<ScheduleResult, ScheduleError> {
    rmsprop_schedule_with(eps, pc, None)
}

/// RMSProp schedule with an optional smaller step size.
pub fn rmsprop_schedule_with(eps: f64, pc: &ProblemConstants, eta_override: Option<f64>) -> Result<ScheduleResult, ScheduleError> {
    check_eps(eps)?;
    pc.validate()?;
    let d = pc.d as f64;
    let (l0, l1, d0, d1, zeta) = (pc.l0, pc.l1, pc.d0, pc.d1, pc.zeta);
    let sz = zeta.sqrt();
    let qz = zeta.powf(0.25);
    let c = c_constant(pc);
    let omb2 = over(1.0, 7.0 * d1).min(over(sz * eps * eps, 35.0 * d * d0));
    if !(omb2 > 0.0 && omb2 < 1.0) {
        return Err(ScheduleError::Degenerate(format!("1 - beta2 = {omb2} is outside (0, 1)")));
    }
    let beta2 = 1.0 - omb2;
    let lambda1 = over(1.0, (14.0 * l1 * d.sqrt() * d1).max(7.0 * l1 * (d * d1).sqrt()));
    let lambda2 = over(zeta, 35.0 * l0 * d * d0).min(over(sz, 35.0 * l1 * l1 * d.powf(1.5) * d0));
    let lambda3 = over(qz, 7.0 * d1 * l0 * d * 5f64.sqrt());
    let ceilings = [
        over(sz, 7.0 * l0 * d1),
        lambda1 * omb2.sqrt(),
        omb2 / (7.0 * d.sqrt()),
        lambda2 * eps * eps,
        lambda3 * eps * omb2.sqrt(),
    ];
    let ceiling = ceilings.iter().copied().fold(f64::INFINITY, f64::min);
    let eta = pick_eta(ceiling, eta_override)?;
    let delta = pc.f1 - pc.f_star + eta * d * d0 / (2.0 * sz) + eta * d1 * pc.grad1_sq / (2.0 * sz);
    let t_min = steps(70.0 * delta / (eta * eps * eps))?;
    let in_regime = eps <= over((5.0 * d * d0).sqrt(), d1.sqrt() * qz);
    let mut constants = BTreeMap::new();
    echo(pc, &mut constants);
    for (k, v) in [
        ("c", c),
        ("Delta", delta),
        ("Lambda1", lambda1),
        ("Lambda2", lambda2),
        ("Lambda3", lambda3),
        ("one_minus_beta2", omb2),
        ("eta_ceiling", ceiling),
        ("eta_ceiling_smooth", ceilings[0]),
        ("eta_ceiling_lambda1", ceilings[1]),
        ("eta_ceiling_dim", ceilings[2]),
        ("eta_ceiling_lambda2", ceilings[3]),
        ("eta_ceiling_lambda3", ceilings[4]),
    ] {
        constants.insert(k.into(), v);
    }
    Ok(ScheduleResult {
        kind: ScheduleKind::Rmsprop,
        epsilon: eps,
        beta1: 0.0,
        beta2,
        eta,
        t_min,
        predicted_bound: rmsprop_bound(d, d0, d1, zeta, c, eps),
        in_regime,
        iterations: 0,
        constants,
    })
}

/// Every Adam-schedule intermediate at fixed `(beta1, beta2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamConstants {
    pub c1: f64,
    pub c2: f64,
    pub q: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub lambda6: f64,
    /// The `1 - beta2` this `beta2` maps to.
    pub one_minus_beta2_next: f64,
    pub eta_ceiling: f64,
    pub c: f64,
}

/// Evaluates the Adam constants at the given betas.
pub fn adam_constants(beta1: f64, beta2: f64, eps: f64, pc: &ProblemConstants) -> AdamConstants {
    let d = pc.d as f64;
    let sd = d.sqrt();
    let (l0, l1, d0, d1, zeta) = (pc.l0, pc.l1, pc.d0, pc.d1, pc.zeta);
    let omb1 = 1.0 - beta1;
    let c1 = 1.0 - beta1 / beta2.sqrt();
    let c2 = (1.0 - beta1 * beta1 / beta2).sqrt();
    let q = 1.0 - beta1 / beta2.powf(0.25);
    let alpha0 = 21.0 / (2.0 * c2);
    let alpha1 = 21.0 * alpha0 / (2.0 * c2);
    let alpha3 = 7.0 * beta1 * zeta.sqrt() / (2.0 * c2);
    let alpha4 = 14.0 * l1 * sd * (2.0 - c1).powi(2) / (c1 * omb1);
    let c1s = c1 * c1;
    let c3 = 2.0 * (1.0 - c1).powi(2) * sd * l0 / c1s
        + (2.0 - c1) * sd * l0 / c1s
        + sd * l0 * ((1.0 - c1).powi(2) + 1.0) / c1s;
    let c4 = alpha4 * omb1 * omb1 * d * l1 * ((1.0 - c1) + (1.0 - c1).powi(2)) / (2.0 * c1s * c2 * c2)
        + sd * l1 * (2.0 + 2.0 * (2.0 - c1).powi(2)) / c1s * alpha4 * omb1 * omb1 / (2.0 * c2 * c2);
    let c5 = over(c1, 112.0 * c3 * omb1 * d * d1).min(over(q, 168.0 * d1 * c1 * c4 * omb1 * d));
    let root = (d0 + pc.v0_norm).sqrt();
    let c6 = [
        over(c2 * zeta.sqrt(), 21.0 * alpha0 * d * d0),
        over(
            c2.powi(3) * zeta.sqrt(),
            21.0 * alpha0 * alpha1 * d1 * d1 * l0 * l0 * omb1 * omb1 * d * d * c5 * c5,
        ),
        over(c2, 21.0 * alpha3 * d * beta1),
        over(c1, 84.0 * c3 * c5 * d * omb1),
        over(q * q, 84.0 * c1 * c4 * c5 * c5 * omb1 * d * root),
        over(c1s, 784.0 * c3 * c3 * c5 * c5 * omb1 * omb1 * d * d1),
        over(q.powi(4), 7056.0 * c1s * c4 * c4 * c5.powi(4) * d * d1),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    let lambda4 = over(c2 * c2, 21.0 * alpha0 * sd * d1 * l1 * omb1).min(over(c1 * c2, sd * l1 * (1.0 - c1) * omb1));
    let lambda5 = 126.0 * c3 * c5 * omb1 / c1 * (2.0 * d * root - pc.v0_log_sum);
    let lambda6 = 252.0 * c5 * c5 * c1 * c4 * omb1 * d / (q * q) * root;
    let one_minus_beta2_next = over(2.0 * c2, 7.0 * alpha0 * d1).min(c6 * eps * eps);
    let omb2 = 1.0 - beta2;
    let eta_ceiling = (lambda4 * omb2.sqrt()).min(c5 * omb2);
    AdamConstants {
        c1,
        c2,
        q,
        alpha0,
        alpha1,
        alpha3,
        alpha4,
        c3,
        c4,
        c5,
        c6,
        lambda4,
        lambda5,
        lambda6,
        one_minus_beta2_next,
        eta_ceiling,
        c: c_constant(pc),
    }
}

/// Solves `1 - beta2 = min(2 C2 / (7 alpha0 D1), C6 eps^2)` where the right side depends on `beta2`.
pub fn resolve_adam_beta2(eps: f64, beta1: f64, pc: &ProblemConstants) -> Result<(f64, usize), ScheduleError> {
    let alpha0 = 21.0 / (2.0 * (1.0 - beta1 * beta1).sqrt());
    let mut beta2 = 1.0 - over(2.0, 7.0 * alpha0 * pc.d1).min(eps * eps);
    let mut damping = 1.0;
    let mut last_step = f64::INFINITY;
    for it in 1..=FIXED_POINT_MAX_ITER {
        if !(beta1 * beta1 < beta2 && beta2 < 1.0) {
            return Err(ScheduleError::Beta1TooLarge { beta1, beta2 });
        }
        let omb2 = adam_constants(beta1, beta2, eps, pc).one_minus_beta2_next;
        if !(omb2 > 0.0) {
            return Err(ScheduleError::Degenerate(format!("1 - beta2 collapsed to {omb2}")));
        }
        let next = 1.0 - omb2;
        if !next.is_finite() {
            return Err(ScheduleError::Degenerate(format!("beta2 iterate became {next}")));
        }
        let step = next - beta2;
        if step.abs() < FIXED_POINT_TOL {
            return Ok((next, it));
        }
        if step.abs() > last_step {
            damping *= 0.5;
        }
        last_step = step.abs();
        beta2 += damping * step;
    }
    Err(ScheduleError::NoConvergence {
        iterations: FIXED_POINT_MAX_ITER,
        last_step,
    })
}

pub fn adam_schedule(eps: f64, beta1: f64, pc: &ProblemConstants) -> Result<ScheduleResult, ScheduleError> {
    adam_schedule_with(eps, beta1, pc, None)
}

/// Adam schedule with an optional smaller step size.
pub fn adam_schedule_with(eps: f64, beta1: f64, pc: &ProblemConstants, eta_override: Option<f64>) -> Result<ScheduleResult, ScheduleError> {
    check_eps(eps)?;
    pc.validate()?;
    if !(0.0..1.0).contains(&beta1) {
        return Err(ScheduleError::Beta1TooLarge { beta1, beta2: f64::NAN });
    }
    let (beta2, iterations) = resolve_adam_beta2(eps, beta1, pc)?;
    if !(beta1 <= beta2.sqrt()) || !(beta2 > 0.0 && beta2 < 1.0) {
        return Err(ScheduleError::Beta1TooLarge { beta1, beta2 });
    }
    let k = adam_constants(beta1, beta2, eps, pc);
    let eta = pick_eta(k.eta_ceiling, eta_override)?;
    finish_adam(eps, beta1, beta2, eta, iterations, &k, pc)
}

fn finish_adam(
    eps: f64,
    beta1: f64,
    beta2: f64,
    eta: f64,
    iterations: usize,
    k: &AdamConstants,
    pc: &ProblemConstants,
) -> Result<ScheduleResult, ScheduleError> {
    let d = pc.d as f64;
    let omb1 = 1.0 - beta1;
    let sz = pc.zeta.sqrt();
    let delta_prime = pc.f1 - pc.f_star
        + eta * k.alpha0 * d * pc.d0 * omb1 / (2.0 * k.c1 * k.c2 * sz)
        + eta * k.alpha0 * pc.d1 * omb1 * pc.grad1_sq / (2.0 * k.c1 * k.c2 * sz);
    let t_main = 126.0 * k.c1 * delta_prime / (eta * omb1 * eps * eps);
    let t_min = steps(t_main.max(k.lambda5 / (eps * eps)).max(k.lambda6 / (eps * eps)))?;
    let mut constants = BTreeMap::new();
    echo(pc, &mut constants);
    for (name, v) in [
        ("C1", k.c1),
        ("C2", k.c2),
        ("C3", k.c3),
        ("C4", k.c4),
        ("C5", k.c5),
        ("C6", k.c6),
        ("q", k.q),
        ("alpha0", k.alpha0),
        ("alpha1", k.alpha1),
        ("alpha3", k.alpha3),
        ("alpha4", k.alpha4),
        ("Lambda4", k.lambda4),
        ("Lambda5", k.lambda5),
        ("Lambda6", k.lambda6),
        ("Delta_prime", delta_prime),
        ("c", k.c),
        ("one_minus_beta2", 1.0 - beta2),
        ("eta_ceiling", k.eta_ceiling),
    ] {
        constants.insert(name.into(), v);
    }
    let in_regime = eps <= over((2.0 * k.c2).sqrt(), (7.0 * k.alpha0 * k.c6 * pc.d1).sqrt());
    Ok(ScheduleResult {
        kind: ScheduleKind::Adam,
        epsilon: eps,
        beta1,
        beta2,
        eta,
        t_min,
        predicted_bound: adam_bound(d, pc.d1, k.c, k.c6, eps),
        in_regime,
        iterations,
        constants,
    })
}

/// Re-evaluates every Adam constant from the emitted `(beta1, beta2, eta)`
/// and reports whether all of them match bit for bit.
pub fn adam_self_consistent(result: &ScheduleResult, pc: &ProblemConstants) -> bool {
    if result.kind != ScheduleKind::Adam {
        return false;
    }
    let k = adam_constants(result.beta1, result.beta2, result.epsilon, pc);
    match finish_adam(result.epsilon, result.beta1, result.beta2, result.eta, result.iterations, &k, pc) {
        Ok(again) => {
            again.t_min == result.t_min
                && again.predicted_bound.to_bits() == result.predicted_bound.to_bits()
                && again.constants.len() == result.constants.len()
                && again
                    .constants
                    .iter()
                    .all(|(name, v)| result.constants.get(name).map(|w| w.to_bits()) == Some(v.to_bits()))
        }
        Err(_) => false,
    }
}

/// Predicted bound recomputed from the emitted constants.
pub fn target_bound(result: &ScheduleResult, which: ScheduleKind) -> Result<f64, ScheduleError> {
    if result.kind != which {
        return Err(ScheduleError::KindMismatch {
            computed: result.kind,
            requested: which,
        });
    }
    let k = |n: &str| result.constant(n);
    Ok(match which {
        ScheduleKind::Rmsprop => rmsprop_bound(k("d"), k("D0"), k("D1"), k("zeta"), k("c"), result.epsilon),
        ScheduleKind::Adam => adam_bound(k("d"), k("D1"), k("c"), k("C6"), result.epsilon),
    })
}
