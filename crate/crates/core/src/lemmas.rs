//! Executable forms of the deterministic inequalities behind the convergence
//! proofs: scalar-sequence ratio lemmas, the telescoping bound on the
//! second-moment denominators, the pathwise descent residual, the potential
//! sequence identity and the surrogate split of the first-order term.

use crate::harness::TrajectoryRecord;
use crate::optim::{OptimizerConfig, Variant};
use crate::oracles::{NoiseModel, ObjectiveOracle, OracleError, SmoothnessModel};
use crate::rng::StreamRng;
use crate::stats::mean_se;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HOLD_RTOL: f64 = 1e-12;
pub const HOLD_ATOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LemmaError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("trajectory does not carry {0}; rerun with full logging")]
    MissingLog(&'static str),
    #[error("coordinate {index} out of range for dimension {dim}")]
    CoordinateOutOfRange { index: usize, dim: usize },
    #[error("step {t} out of range for a trajectory of length {len}")]
    StepOutOfRange { t: u64, len: u64 },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

impl BoundCheck {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            slack: rhs - lhs,
            holds: lhs <= rhs * (1.0 + HOLD_RTOL) + HOLD_ATOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceCase {
    pub c: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub a0: f64,
    #[serde(default)]
    pub b0: f64,
    #[serde(default)]
    pub zeta: f64,
}

impl SequenceCase {
    pub fn new(c: Vec<f64>, beta1: f64, beta2: f64, a0: f64, zeta: f64) -> Self {
        Self {
            c,
            beta1,
            beta2,
            a0,
            b0: 0.0,
            zeta,
        }
    }

    fn validate(&self, beta1_power: i32) -> Result<(), LemmaError> {
        let fail = |m: String| Err(LemmaError::Precondition(m));
        if self.c.is_empty() {
            return fail("sequence is empty".into());
        }
        if let Some(c) = self.c.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return fail(format!("c_t = {c} is not a nonnegative finite value"));
        }
        if !(self.a0.is_finite() && self.a0 > 0.0) {
            return fail(format!("a0 = {} must be positive", self.a0));
        }
        if !(self.zeta.is_finite() && self.zeta >= 0.0) {
            return fail(format!("zeta = {} must be nonnegative", self.zeta));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return fail(format!("betas ({}, {}) out of range", self.beta1, self.beta2));
        }
        if !(self.beta1.powi(beta1_power) < self.beta2) {
            return fail(format!("need beta1^{beta1_power} < beta2, got ({}, {})", self.beta1, self.beta2));
        }
        Ok(())
    }

    /// `(a_t, b_t)` for `t = 1..=T`.
    pub fn sequences(&self) -> (Vec<f64>, Vec<f64>) {
        let (mut a, mut b) = (self.a0, self.b0);
        let mut av = Vec::with_capacity(self.c.len());
        let mut bv = Vec::with_capacity(self.c.len());
        for &c in &self.c {
            a = self.beta2 * a + (1.0 - self.beta2) * c * c;
            b = self.beta1 * b + (1.0 - self.beta1) * c;
            av.push(a);
            bv.push(b);
        }
        (av, bv)
    }
}

/// Longest random sequence drawn by [`random_case`].
pub const MAX_CASE_LEN: usize = 512;

/// Random case satisfying `beta1^power < beta2`: `T` in `1..=512`,
/// `c_t` in `[0, 10]`, `a0` in `(0, 1]`, `zeta` in `[0, 1)`.
pub fn random_case(rng: &mut StreamRng, beta1_power: i32) -> SequenceCase {
    let t = rng.random_range(1..=MAX_CASE_LEN);
    let c = (0..t).map(|_| rng.random_range(0.0..=10.0)).collect();
    let beta2: f64 = rng.random_range(0.01..0.999);
    let beta1 = rng.random_range(0.0..0.999 * beta2.powf(1.0 / beta1_power as f64));
    let a0 = 1.0 - rng.random::<f64>();
    let zeta = rng.random::<f64>();
    SequenceCase::new(c, beta1, beta2, a0, zeta)
}

/// Random modified-update configuration for short synthetic trajectories.
pub fn random_config(rng: &mut StreamRng) -> OptimizerConfig {
    let eta = 10f64.powf(rng.random_range(-3.0..-1.0));
    let beta2 = rng.random_range(0.5..0.9999);
    let beta1 = rng.random_range(0.0..0.99);
    let zeta = 10f64.powf(rng.random_range(-3.0..0.0));
    OptimizerConfig {
        eta,
        beta1,
        beta2,
        zeta,
        variant: Variant::Modified,
        lambda: 0.0,
        strict: false,
    }
}

/// `max_t b_t / sqrt(a_t + zeta) <= (1 - beta1) / (sqrt(1 - beta2) sqrt(1 - beta1^2 / beta2))`
pub fn check_momentum_ratio(case: &SequenceCase) -> Result<BoundCheck, LemmaError> {
    case.validate(2)?;
    let (a, b) = case.sequences();
    let lhs = a
        .iter()
        .zip(&b)
        .map(|(a, b)| b.abs() / (a + case.zeta).sqrt())
        .fold(0.0, f64::max);
    let (b1, b2) = (case.beta1, case.beta2);
    let rhs = (1.0 - b1) / ((1.0 - b2).sqrt() * (1.0 - b1 * b1 / b2).sqrt());
    Ok(BoundCheck::new(lhs, rhs))
}

fn sum_ratio_log(case: &SequenceCase, beta2_sign: f64) -> Result<BoundCheck, LemmaError> {
    case.validate(2)?;
    let (a, b) = case.sequences();
    let lhs: f64 = a.iter().zip(&b).map(|(a, b)| b * b / a).sum();
    let (b1, b2) = (case.beta1, case.beta2);
    let t = a.len() as f64;
    let k = (1.0 - b1).powi(2) / ((1.0 - b1 / b2.sqrt()).powi(2) * (1.0 - b2));
    let a_t = *a.last().unwrap_or(&case.a0);
    let rhs = k * ((a_t / case.a0).ln() - beta2_sign * t * b2.ln());
    Ok(BoundCheck::new(lhs, rhs))
}

/// `sum_t b_t^2 / a_t <= (1-beta1)^2 / ((1 - beta1/sqrt(beta2))^2 (1-beta2)) (ln(a_T/a_0) - T ln beta2)`
pub fn check_sum_ratio_log(case: &SequenceCase) -> Result<BoundCheck, LemmaError> {
    sum_ratio_log(case, 1.0)
}

/// Negative control: the log bound with the sign of the `beta2` power flipped.
#[doc(hidden)]
pub fn check_sum_ratio_log_flipped(case: &SequenceCase) -> Result<BoundCheck, LemmaError> {
    sum_ratio_log(case, -1.0)
}

/// `sum_t b_t^2 / sqrt(a_t) <= (1-beta1)^2 / (1 - beta1/beta2^(1/4))^2 (2/(1-beta2) (sqrt(a_T) - sqrt(a_0)) + sum_t 2 sqrt(a_{t-1}))`
pub fn check_sum_ratio_sqrt(case: &SequenceCase) -> Result<BoundCheck, LemmaError> {
    case.validate(4)?;
    let (a, b) = case.sequences();
    let lhs: f64 = a.iter().zip(&b).map(|(a, b)| b * b / a.sqrt()).sum();
    let (b1, b2) = (case.beta1, case.beta2);
    let k = (1.0 - b1).powi(2) / (1.0 - b1 / b2.powf(0.25)).powi(2);
    let a_t = *a.last().unwrap_or(&case.a0);
    let prev_sum: f64 = std::iter::once(case.a0)
        .chain(a[..a.len() - 1].iter().copied())
        .map(|x| 2.0 * x.sqrt())
        .sum();
    let rhs = k * (2.0 / (1.0 - b2) * (a_t.sqrt() - case.a0.sqrt()) + prev_sum);
    Ok(BoundCheck::new(lhs, rhs))
}

/// `1/sqrt(zeta) + T (1 - sqrt(beta2)) / sqrt(zeta)`
pub fn telescoping_rhs(zeta: f64, beta2: f64, steps: u64) -> f64 {
    (1.0 + steps as f64 * (1.0 - beta2.sqrt())) / zeta.sqrt()
}

/// `sum_t 1/sqrt(beta2 v_{t-1,i} + zeta) - 1/sqrt(v_{t,i} + zeta)` against its pathwise ceiling.
pub fn check_telescoping(rec: &TrajectoryRecord, config: &OptimizerConfig, i: usize) -> Result<BoundCheck, LemmaError> {
    let d = rec.dim();
    if i >= d {
        return Err(LemmaError::CoordinateOutOfRange { index: i, dim: d });
    }
    let (b2, zeta) = (config.beta2, config.zeta);
    if !(zeta > 0.0) {
        return Err(LemmaError::Precondition(format!("zeta = {zeta} must be positive")));
    }
    let lhs = if rec.has_vectors() {
        let mut prev = rec.v0[i];
        let mut acc = 0.0;
        for s in &rec.vectors {
            acc += 1.0 / (b2 * prev + zeta).sqrt() - 1.0 / (s.v[i] + zeta).sqrt();
            prev = s.v[i];
        }
        acc
    } else if rec.summary.telescoping_lhs.len() == d {
        rec.summary.telescoping_lhs[i]
    } else {
        return Err(LemmaError::MissingLog("second-moment history"));
    };
    Ok(BoundCheck::new(lhs, telescoping_rhs(zeta, b2, rec.len())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescentResiduals {
    pub residuals: Vec<f64>,
    /// Steps whose endpoints leave the region where the smoothness constants are stated.
    pub outside_region: Vec<u64>,
}

impl DescentResiduals {
    pub fn mean(&self) -> f64 {
        mean_se(&self.residuals).0
    }
}

/// Per-step pathwise slack of the coordinate-wise descent inequality.
pub fn descent_residual(rec: &TrajectoryRecord, oracle: &ObjectiveOracle, smooth: &SmoothnessModel) -> Result<DescentResiduals, LemmaError> {
    if !rec.has_vectors() {
        return Err(LemmaError::MissingLog("per-step iterates"));
    }
    let d = rec.dim() as f64;
    let mut out = DescentResiduals {
        residuals: Vec::with_capacity(rec.vectors.len()),
        outside_region: Vec::new(),
    };
    for t in 1..=rec.len() {
        let s = &rec.vectors[(t - 1) as usize];
        let x = &s.x;
        let y = rec.iterate(t + 1).ok_or(LemmaError::MissingLog("next iterate"))?;
        if !smooth.region.admits_step(x, y) {
            out.outside_region.push(t);
        }
        let dist = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let mut r = oracle.value(x)? - oracle.value(y)?;
        for i in 0..x.len() {
            let di = (y[i] - x[i]).abs();
            r += smooth.l0 / (2.0 * d.sqrt()) * dist * di;
            r += smooth.l1 * s.grad[i].abs() / 2.0 * dist * di;
            r -= s.grad[i] * (x[i] - y[i]);
        }
        out.residuals.push(r);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSequence {
    /// `u_t` for `t = 1..=T+1`.
    pub u: Vec<Vec<f64>>,
    /// Largest coordinate-wise relative gap between `u_{t+1} - u_t` and the three-term split.
    pub max_relative_residual: f64,
    /// Largest gap, in units of `f64::EPSILON * |x|`, between logged iterate
    /// differences and the executed displacements.
    pub max_iterate_gap_ulps: f64,
}

/// `u_t = (x_t - (beta1/sqrt(beta2)) x_{t-1}) / (1 - beta1/sqrt(beta2))` with `x_0 = x_1`,
/// plus a check of the main / surrogate-error / zeta-mismatch split of its increments.
pub fn potential_sequence(rec: &TrajectoryRecord, config: &OptimizerConfig) -> Result<PotentialSequence, LemmaError> {
    let (b1, b2, eta, zeta) = (config.beta1, config.beta2, config.eta, config.zeta);
    if !(b1 < b2.sqrt()) {
        return Err(LemmaError::Precondition(format!("beta1 = {b1} must be below sqrt(beta2) = {}", b2.sqrt())));
    }
    if config.variant != Variant::Modified {
        return Err(LemmaError::Precondition("the split holds for the sqrt(v + zeta) update only".into()));
    }
    if !rec.has_vectors() {
        return Err(LemmaError::MissingLog("per-step moments"));
    }
    let k = b1 / b2.sqrt();
    let c1 = 1.0 - k;
    let n = rec.len();
    let x = |t: u64| rec.iterate(t.max(1)).unwrap_or(&rec.x1);
    let u: Vec<Vec<f64>> = (1..=n + 1)
        .map(|t| x(t).iter().zip(x(t - 1)).map(|(a, b)| (a - k * b) / c1).collect())
        .collect();
    // Increments use the executed steps; differencing stored iterates would
    // lose |x| / |dx| ulps to cancellation late in a run.
    let mut worst = 0.0f64;
    let mut gap = 0.0f64;
    let mut m_prev = vec![0.0; rec.dim()];
    let mut dx_prev = vec![0.0; rec.dim()];
    for t in 1..=n {
        let s = &rec.vectors[(t - 1) as usize];
        let v_prev = rec.second_moment(t - 1).ok_or(LemmaError::MissingLog("v history"))?;
        let (xn, xc) = (x(t + 1), x(t));
        for i in 0..rec.dim() {
            let dx = -(eta * s.m[i] / (s.v[i] + zeta).sqrt());
            let ulp = f64::EPSILON * xn[i].abs().max(xc[i].abs()).max(f64::MIN_POSITIVE);
            gap = gap.max(((xn[i] - xc[i]) - dx).abs() / ulp);
            let du = (dx - k * dx_prev[i]) / c1;
            dx_prev[i] = dx;
            let sur = (b2 * v_prev[i] + zeta).sqrt();
            let main = -eta * (1.0 - b1) * s.g[i] / sur / c1;
            let err = (-eta * s.m[i] / (s.v[i] + zeta).sqrt() + eta * s.m[i] / sur) / c1;
            let mis = (eta * b1 * m_prev[i] / (b2 * v_prev[i] + b2 * zeta).sqrt() - eta * b1 * m_prev[i] / sur) / c1;
            let scale = du.abs().max(main.abs() + err.abs() + mis.abs());
            if scale > 0.0 {
                worst = worst.max((du - (main + err + mis)).abs() / scale);
            }
        }
        m_prev.copy_from_slice(&s.m);
    }
    Ok(PotentialSequence {
        u,
        max_relative_residual: worst,
        max_iterate_gap_ulps: gap,
    })
}

/// `(first_a, first_b)` at step `t`: the gradient inner product with the
/// surrogate step and with the surrogate error.
pub fn surrogate_decomposition(rec: &TrajectoryRecord, oracle: &ObjectiveOracle, t: u64) -> Result<(f64, f64), LemmaError> {
    if !rec.has_vectors() {
        return Err(LemmaError::MissingLog("per-step gradients"));
    }
    if t == 0 || t > rec.len() {
        return Err(LemmaError::StepOutOfRange { t, len: rec.len() });
    }
    let c = &rec.config;
    let s = &rec.vectors[(t - 1) as usize];
    let v_prev = rec.second_moment(t - 1).ok_or(LemmaError::MissingLog("v history"))?;
    let grad = oracle.gradient(&s.x)?;
    let (mut a, mut b) = (0.0, 0.0);
    for i in 0..grad.len() {
        let sur = c.eta * s.g[i] / (c.beta2 * v_prev[i] + c.zeta).sqrt();
        a += grad[i] * sur;
        b += grad[i] * (c.eta * s.g[i] / (s.v[i] + c.zeta).sqrt() - sur);
    }
    Ok((a, b))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloCheck {
    pub mean: f64,
    pub se: f64,
    pub expected: f64,
    pub samples: usize,
}

impl MonteCarloCheck {
    pub fn within(&self, k_se: f64) -> bool {
        (self.mean - self.expected).abs() <= k_se * self.se + 1e-12 * self.expected.abs()
    }
}

/// Monte-Carlo mean of `first_a` at a fixed state against `sum_i eta (df/dx_i)^2 / sqrt(beta2 v_i + zeta)`.
pub fn first_a_monte_carlo(
    oracle: &ObjectiveOracle,
    x: &[f64],
    v_prev: &[f64],
    config: &OptimizerConfig,
    samples: usize,
    rng: &mut StreamRng,
) -> Result<MonteCarloCheck, LemmaError> {
    if samples < 2 {
        return Err(LemmaError::Precondition("need at least two samples".into()));
    }
    let grad = oracle.gradient(x)?;
    let sur: Vec<f64> = v_prev.iter().map(|v| (config.beta2 * v + config.zeta).sqrt()).collect();
    let expected = grad.iter().zip(&sur).map(|(g, s)| config.eta * g * g / s).sum();
    let mut g = vec![0.0; x.len()];
    let mut vals = Vec::with_capacity(samples);
    for _ in 0..samples {
        oracle.sample_into(x, rng, &mut g)?;
        vals.push((0..x.len()).map(|i| grad[i] * config.eta * g[i] / sur[i]).sum());
    }
    let (mean, se) = mean_se(&vals);
    Ok(MonteCarloCheck {
        mean,
        se,
        expected,
        samples,
    })
}

/// Monte-Carlo view of the lower bound on `E[first_b]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub first_b_mean: f64,
    pub first_b_se: f64,
    /// The (negative) lower bound, with conditional expectations estimated.
    pub bound: f64,
    pub slack: f64,
    pub holds_within_2se: bool,
}

/// Evaluates the first-order.b lower bound at step `t` of an RMSProp
/// trajectory with free constants `alpha0`, `alpha1`.
#[allow(clippy::too_many_arguments)]
pub fn lemma1_diagnostic(
    rec: &TrajectoryRecord,
    oracle: &ObjectiveOracle,
    noise: &NoiseModel,
    smooth: &SmoothnessModel,
    t: u64,
    alpha0: f64,
    alpha1: f64,
    samples: usize,
    rng: &mut StreamRng,
) -> Result<Lemma1Report, LemmaError> {
    if !rec.has_vectors() {
        return Err(LemmaError::MissingLog("per-step state"));
    }
    if t == 0 || t > rec.len() {
        return Err(LemmaError::StepOutOfRange { t, len: rec.len() });
    }
    if samples < 2 || !(alpha0 > 0.0 && alpha1 > 0.0) {
        return Err(LemmaError::Precondition("need samples >= 2 and positive alphas".into()));
    }
    let c = &rec.config;
    let (eta, b2, zeta) = (c.eta, c.beta2, c.zeta);
    let d = rec.dim();
    let x = rec.iterate(t).ok_or(LemmaError::MissingLog("iterate"))?;
    let x_prev = rec.iterate(t.saturating_sub(1).max(1)).ok_or(LemmaError::MissingLog("iterate"))?;
    let v_prev = rec.second_moment(t - 1).ok_or(LemmaError::MissingLog("v history"))?;
    let grad = oracle.gradient(x)?;
    let grad_prev = oracle.gradient(x_prev)?;
    let sur: Vec<f64> = v_prev.iter().map(|v| (b2 * v + zeta).sqrt()).collect();

    let mut g = vec![0.0; d];
    let mut fb = Vec::with_capacity(samples);
    let mut inv_mean = vec![0.0; d];
    for _ in 0..samples {
        oracle.sample_into(x, rng, &mut g)?;
        let mut val = 0.0;
        for i in 0..d {
            let v = b2 * v_prev[i] + (1.0 - b2) * g[i] * g[i];
            let inv = 1.0 / (v + zeta).sqrt();
            inv_mean[i] += inv / samples as f64;
            val += grad[i] * (eta * g[i] * inv - eta * g[i] / sur[i]);
        }
        fb.push(val);
    }
    let (first_b_mean, first_b_se) = mean_se(&fb);
    let (d0, d1, l0, l1) = (noise.d0, noise.d1, smooth.l0, smooth.l1);
    let df = d as f64;
    let mut total = 0.0;
    for i in 0..d {
        let gi2 = grad[i] * grad[i];
        total += eta * gi2 / (2.0 * alpha0 * sur[i]);
        total += eta * alpha0 * d0 / 2.0 * (1.0 / sur[i] - inv_mean[i]);
        total += eta * alpha0 * d1 / 2.0 * (grad_prev[i] * grad_prev[i] / sur[i] - gi2 * inv_mean[i]);
        let inner = if d1 > 0.0 { gi2 / (alpha1 * d1) } else { 0.0 }
            + alpha1 * df * d1 * l0 * l0 * eta * eta / (1.0 - b2)
            + 2.0 * df.sqrt() * eta * l1 * gi2 / (1.0 - b2).sqrt();
        total += eta * alpha0 * d1 / (2.0 * sur[i]) * inner;
    }
    let bound = -total;
    Ok(Lemma1Report {
        first_b_mean,
        first_b_se,
        bound,
        slack: first_b_mean - bound,
        holds_within_2se: first_b_mean >= bound - 2.0 * first_b_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn momentum_ratio_examples() {
        let zero = SequenceCase::new(vec![0.0; 5], 0.5, 0.9, 1.0, 1.0);
        let r = check_momentum_ratio(&zero).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.holds);

        let r = check_momentum_ratio(&SequenceCase::new(vec![3.0], 0.5, 0.9, 1e-8, 1.0)).unwrap();
        assert!((r.lhs - 1.5 / (0.9f64 * 1e-8 + 0.9 + 1.0).sqrt()).abs() < 1e-15);
        assert!((r.lhs - 1.0882143).abs() < 1e-6);
        assert!((r.rhs - 1.860521018838127).abs() < 1e-12);
        assert!(r.holds);

        let r = check_momentum_ratio(&SequenceCase::new(vec![5.0, 0.1, 7.0], 0.0, 0.8, 0.5, 0.0)).unwrap();
        assert!((r.rhs - 1.0 / 0.2f64.sqrt()).abs() < 1e-12);
        assert!(r.holds);
    }

    #[test]
    fn sum_ratio_log_examples() {
        let r = check_sum_ratio_log(&SequenceCase::new(vec![1.0], 0.0, 0.5, 1.0, 0.0)).unwrap();
        assert_eq!(r.lhs, 1.0);
        assert!((r.rhs - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(r.holds);

        let case = SequenceCase::new(vec![0.0; 4], 0.3, 0.6, 0.7, 0.0);
        let r = check_sum_ratio_log(&case).unwrap();
        let k = 0.7f64.powi(2) / ((1.0 - 0.3 / 0.6f64.sqrt()).powi(2) * 0.4);
        assert_eq!(r.lhs, 0.0);
        assert!((r.rhs - (-4.0 * 0.6f64.ln() * k + k * (0.6f64.powi(4)).ln())).abs() < 1e-12);
    }

    #[test]
    fn sum_ratio_sqrt_example() {
        let r = check_sum_ratio_sqrt(&SequenceCase::new(vec![1.0], 0.0, 0.5, 1.0, 0.0)).unwrap();
        assert_eq!(r.lhs, 1.0);
        assert!((r.rhs - 2.0).abs() < 1e-15);
        assert!(r.holds);
        assert!(check_sum_ratio_sqrt(&SequenceCase::new(vec![0.0; 3], 0.4, 0.5, 1.0, 0.0)).unwrap().holds);
    }

    #[test]
    fn preconditions_are_enforced() {
        assert!(check_momentum_ratio(&SequenceCase::new(vec![1.0], 0.99, 0.9, 1.0, 0.0)).is_err());
        assert!(check_sum_ratio_log(&SequenceCase::new(vec![1.0], 0.5, 0.9, 0.0, 0.0)).is_err());
        assert!(check_sum_ratio_sqrt(&SequenceCase::new(vec![-1.0], 0.5, 0.9, 1.0, 0.0)).is_err());
        assert!(check_sum_ratio_sqrt(&SequenceCase::new(vec![1.0], 0.98, 0.9, 1.0, 0.0)).is_err());
        assert!(check_momentum_ratio(&SequenceCase::new(vec![], 0.5, 0.9, 1.0, 0.0)).is_err());
    }

    #[test]
    fn flipped_log_bound_fails_on_quiet_sequence() {
        let case = SequenceCase::new(vec![0.0; 10], 0.5, 0.5, 1.0, 0.0);
        assert!(check_sum_ratio_log(&case).unwrap().holds);
        let bad = check_sum_ratio_log_flipped(&case).unwrap();
        assert!(bad.rhs < 0.0);
        assert!(!(BoundCheck::new(0.5, bad.rhs).holds));
    }

    #[test]
    fn telescoping_rhs_example() {
        assert!((telescoping_rhs(1.0, 0.9, 1) - 1.0513167019494862).abs() < 1e-12);
    }

    fn case_strategy(power: i32) -> impl Strategy<Value = SequenceCase> {
        (0.01f64..0.999)
            .prop_flat_map(move |b2| {
                let b1_max = b2.powf(1.0 / power as f64) * 0.999;
                (
                    prop::collection::vec(0.0f64..10.0, 1..=512),
                    0.0..b1_max,
                    Just(b2),
                    1e-6f64..=1.0,
                    0.0f64..1.0,
                )
            })
            .prop_map(|(c, b1, b2, a0, zeta)| SequenceCase::new(c, b1, b2, a0, zeta))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]
        #[test]
        fn momentum_ratio_always_holds(case in case_strategy(2)) {
            prop_assert!(check_momentum_ratio(&case).unwrap().holds);
        }

        #[test]
        fn sum_ratio_log_always_holds(case in case_strategy(2)) {
            prop_assert!(check_sum_ratio_log(&case).unwrap().holds);
        }

        #[test]
        fn sum_ratio_sqrt_always_holds(case in case_strategy(4)) {
            prop_assert!(check_sum_ratio_sqrt(&case).unwrap().holds);
        }

        #[test]
        fn scaling_c_keeps_log_bound(case in case_strategy(2), k in 1.0f64..20.0) {
            let scaled = SequenceCase { c: case.c.iter().map(|c| c * k).collect(), ..case.clone() };
            prop_assert!(check_sum_ratio_log(&scaled).unwrap().holds);
        }
    }
}
