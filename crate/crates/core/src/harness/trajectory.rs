use crate::optim::{adam_step, init_state, InvariantBounds, OptimizerConfig, StepReport};
use crate::oracles::{ObjectiveOracle, ObjectiveSpec};
use crate::rng::stream;
use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Iterates beyond this magnitude count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;
/// Longest run for which per-step vectors are kept by default.
pub const FULL_LOG_LIMIT: u64 = 100_000;
/// Number of evenly spaced snapshots kept for thinned runs.
pub const SNAPSHOT_COUNT: u64 = 1000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogLevel {
    /// Per-step scalars and vectors.
    Full,
    /// Per-step scalars plus periodic vector snapshots.
    Scalars,
    /// Online aggregates plus periodic snapshots only.
    #[default]
    Summary,
}

impl LogLevel {
    /// Full logging for short runs, aggregates otherwise.
    pub fn auto(steps: u64) -> Self {
        if steps <= FULL_LOG_LIMIT {
            LogLevel::Full
        } else {
            LogLevel::Summary
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: u64,
    pub f: f64,
    pub grad_norm: f64,
    /// `sqrt(beta2 ||v_{t-1}|| + zeta)`
    pub denom: f64,
    pub report: StepReport,
}

/// Vectors at step `t`: the iterate before the update, its exact gradient,
/// the sampled gradient, and the post-update moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepVectors {
    pub x: Vec<f64>,
    pub grad: Vec<f64>,
    pub g: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: u64,
    pub x: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub f: f64,
    pub running_avg_grad_norm: f64,
}

/// Running sums kept for every trajectory regardless of log level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub steps: u64,
    pub sum_grad_norm: f64,
    pub sum_grad_sq_over_denom: f64,
    pub sum_denom: f64,
    pub sum_f: f64,
    /// Per coordinate `sum_t 1/sqrt(beta2 v_{t-1,i} + zeta) - 1/sqrt(v_{t,i} + zeta)`.
    pub telescoping_lhs: Vec<f64>,
    pub max_gradient_ratio: f64,
    pub max_momentum_ratio: f64,
    pub max_displacement: f64,
    pub invariant_violations: u64,
    /// First step whose running average gradient norm fell to the threshold.
    pub threshold_hit: Option<u64>,
}

impl TrajectorySummary {
    fn mean(&self, s: f64) -> f64 {
        if self.steps == 0 {
            f64::NAN
        } else {
            s / self.steps as f64
        }
    }

    /// `(1/T) sum ||grad f(x_t)||`
    pub fn avg_grad_norm(&self) -> f64 {
        self.mean(self.sum_grad_norm)
    }

    /// `(1/T) sum sqrt(beta2 ||v_{t-1}|| + zeta)`
    pub fn avg_denom(&self) -> f64 {
        self.mean(self.sum_denom)
    }

    /// `(1/T) sum ||grad f(x_t)||^2 / sqrt(beta2 ||v_{t-1}|| + zeta)`
    pub fn avg_grad_sq_over_denom(&self) -> f64 {
        self.mean(self.sum_grad_sq_over_denom)
    }

    pub fn avg_f(&self) -> f64 {
        self.mean(self.sum_f)
    }

    /// Left and right sides of the time-averaged Cauchy-Schwarz relation.
    pub fn holder(&self) -> (f64, f64) {
        let a = self.avg_grad_norm();
        (a * a, self.avg_grad_sq_over_denom() * self.avg_denom())
    }

    pub fn holder_holds(&self) -> bool {
        let (lhs, rhs) = self.holder();
        lhs <= rhs * (1.0 + 1e-12) + 1e-300
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub master_seed: u64,
    pub seed_index: u64,
    pub config: OptimizerConfig,
    pub oracle: Option<ObjectiveSpec>,
    pub level: LogLevel,
    pub x1: Vec<f64>,
    pub v0: Vec<f64>,
    /// `x_{T+1}`
    pub x_final: Vec<f64>,
    pub f_final: f64,
    pub steps: Vec<StepLog>,
    pub vectors: Vec<StepVectors>,
    pub snapshots: Vec<Snapshot>,
    pub summary: TrajectorySummary,
    pub diverged_at: Option<u64>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> u64 {
        self.summary.steps
    }

    pub fn is_empty(&self) -> bool {
        self.summary.steps == 0
    }

    pub fn dim(&self) -> usize {
        self.x1.len()
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn has_vectors(&self) -> bool {
        self.level == LogLevel::Full && self.vectors.len() as u64 == self.summary.steps
    }

    /// `x_t` for `t = 1..=T+1` (full logs only).
    pub fn iterate(&self, t: u64) -> Option<&[f64]> {
        let n = self.vectors.len() as u64;
        if t >= 1 && t <= n {
            Some(&self.vectors[(t - 1) as usize].x)
        } else if t == n + 1 {
            Some(&self.x_final)
        } else {
            None
        }
    }

    /// `v_t` for `t = 0..=T` (full logs only).
    pub fn second_moment(&self, t: u64) -> Option<&[f64]> {
        if t == 0 {
            Some(&self.v0)
        } else {
            self.vectors.get((t - 1) as usize).map(|s| s.v.as_slice())
        }
    }

    /// `m_t` for `t = 0..=T`; `m_0` is zero.
    pub fn first_moment(&self, t: u64) -> Option<Vec<f64>> {
        if t == 0 {
            Some(vec![0.0; self.dim()])
        } else {
            self.vectors.get((t - 1) as usize).map(|s| s.m.clone())
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOptions {
    pub level: Option<LogLevel>,
    pub v0: Option<Vec<f64>>,
    /// Record the first step at which the running average gradient norm is at most this.
    pub threshold: Option<f64>,
    pub stop_at_threshold: bool,
    pub oracle_spec: Option<ObjectiveSpec>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Runs `steps` optimizer iterations from `x0` on stream `(master_seed, index)`.
pub fn run_trajectory(
    oracle: &ObjectiveOracle,
    config: &OptimizerConfig,
    x0: &[f64],
    steps: u64,
    master_seed: u64,
    index: u64,
    opts: &TrajectoryOptions,
) -> Result<TrajectoryRecord, HarnessError> {
    if steps == 0 {
        return Err(HarnessError::InvalidStudy("trajectory length must be at least 1".into()));
    }
    if x0.len() != oracle.dim() {
        return Err(HarnessError::InvalidStudy(format!(
            "start point has dimension {}, oracle has {}",
            x0.len(),
            oracle.dim()
        )));
    }
    let level = opts.level.unwrap_or_else(|| LogLevel::auto(steps));
    let mut state = init_state(config, x0, opts.v0.as_deref())?;
    let d = state.dim();
    let mut rng = stream(master_seed, index);
    let bounds = InvariantBounds::for_config(config);
    let every = (steps / SNAPSHOT_COUNT).max(1);
    let (b2, zeta) = (config.beta2, config.zeta);

    let mut rec = TrajectoryRecord {
        master_seed,
        seed_index: index,
        config: *config,
        oracle: opts.oracle_spec.clone(),
        level,
        x1: x0.to_vec(),
        v0: state.v.clone(),
        x_final: Vec::new(),
        f_final: f64::NAN,
        steps: Vec::new(),
        vectors: Vec::new(),
        snapshots: Vec::new(),
        summary: TrajectorySummary {
            telescoping_lhs: vec![0.0; d],
            ..Default::default()
        },
        diverged_at: None,
    };
    if level != LogLevel::Summary {
        rec.steps.reserve(steps.min(FULL_LOG_LIMIT) as usize);
    }
    let mut grad = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut prev_inv = vec![0.0; d];

    for t in 1..=steps {
        let f = oracle.value(&state.x)?;
        oracle.gradient_into(&state.x, &mut grad)?;
        let grad_norm = norm(&grad);
        let denom = (b2 * norm(&state.v) + zeta).sqrt();
        if !(f.is_finite() && grad_norm.is_finite()) {
            rec.diverged_at = Some(t);
            break;
        }
        let s = &mut rec.summary;
        s.steps = t;
        s.sum_grad_norm += grad_norm;
        s.sum_grad_sq_over_denom += grad_norm * grad_norm / denom;
        s.sum_denom += denom;
        s.sum_f += f;
        let running = s.sum_grad_norm / t as f64;
        if let Some(th) = opts.threshold {
            if s.threshold_hit.is_none() && running <= th {
                s.threshold_hit = Some(t);
            }
        }

        oracle.sample_into(&state.x, &mut rng, &mut g)?;
        if g.iter().any(|v| !v.is_finite()) {
            rec.diverged_at = Some(t);
            break;
        }
        for (p, v) in prev_inv.iter_mut().zip(&state.v) {
            *p = 1.0 / (b2 * v + zeta).sqrt();
        }
        let x_t = (level == LogLevel::Full).then(|| state.x.clone());
        let report = adam_step(&mut state, config, &g)?;

        let s = &mut rec.summary;
        for ((acc, p), v) in s.telescoping_lhs.iter_mut().zip(&prev_inv).zip(&state.v) {
            *acc += p - 1.0 / (v + zeta).sqrt();
        }
        s.invariant_violations += bounds.violations(&report).len() as u64;
        s.max_gradient_ratio = s.max_gradient_ratio.max(report.gradient_ratio_max);
        s.max_momentum_ratio = s.max_momentum_ratio.max(report.momentum_ratio_max);
        s.max_displacement = s.max_displacement.max(report.displacement_inf_norm);

        if level != LogLevel::Summary {
            rec.steps.push(StepLog {
                t,
                f,
                grad_norm,
                denom,
                report,
            });
        }
        if let Some(x) = x_t {
            rec.vectors.push(StepVectors {
                x,
                grad: grad.clone(),
                g: g.clone(),
                m: state.m.clone(),
                v: state.v.clone(),
            });
        }
        if t % every == 0 || t == steps {
            rec.snapshots.push(Snapshot {
                t,
                x: state.x.clone(),
                m: state.m.clone(),
                v: state.v.clone(),
                f,
                running_avg_grad_norm: running,
            });
        }
        if state.x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            rec.diverged_at = Some(t);
            break;
        }
        if opts.stop_at_threshold && rec.summary.threshold_hit.is_some() {
            break;
        }
    }
    if rec.diverged_at.is_some() && rec.level == LogLevel::Full {
        let n = rec.summary.steps as usize;
        rec.vectors.truncate(n);
        rec.steps.truncate(n);
    }
    rec.f_final = oracle.value(&state.x).unwrap_or(f64::NAN);
    rec.x_final = state.x;
    Ok(rec)
}
