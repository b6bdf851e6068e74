use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_trajectory, HarnessError, LogLevel, TrajectoryOptions, TrajectoryRecord};
use crate::lemmas::{telescoping_rhs, BoundCheck};
use crate::optim::OptimizerConfig;
use crate::oracles::{ObjectiveOracle, ObjectiveSpec};
use crate::schedule::{
    adam_schedule_with, rmsprop_schedule_with, ProblemConstants, ScheduleKind, ScheduleResult,
};
use crate::stats::{loglog_slope, mean_se};

/// A study fails when more than this fraction of its trajectories diverge.
pub const MAX_DIVERGED_FRACTION: f64 = 0.1;
/// Smallest `zeta` used when pairing with the original update.
pub const PARITY_ZETA_FLOOR: f64 = 1e-16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Rmsprop,
    Adam,
}

impl OptimizerKind {
    pub fn schedule_kind(self) -> ScheduleKind {
        match self {
            OptimizerKind::Rmsprop => ScheduleKind::Rmsprop,
            OptimizerKind::Adam => ScheduleKind::Adam,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Rmsprop => "rmsprop",
            OptimizerKind::Adam => "adam",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySettings {
    pub master_seed: u64,
    pub x0: Vec<f64>,
    pub v0: Option<Vec<f64>>,
    pub zeta: f64,
    /// Cap on the schedule's iteration count.
    pub max_steps: Option<u64>,
    pub strict: bool,
    pub eta: Option<f64>,
    pub level: Option<LogLevel>,
    pub oracle_spec: Option<ObjectiveSpec>,
}

impl StudySettings {
    pub fn new(master_seed: u64, x0: Vec<f64>) -> Self {
        Self {
            master_seed,
            x0,
            v0: None,
            zeta: 1.0,
            max_steps: None,
            strict: false,
            eta: None,
            level: None,
            oracle_spec: None,
        }
    }
}

/// Per-trajectory outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub steps: u64,
    pub avg_grad_norm: f64,
    pub avg_denom: f64,
    pub avg_grad_sq_over_denom: f64,
    pub holder_lhs: f64,
    pub holder_rhs: f64,
    pub holder_holds: bool,
    pub telescoping_violations: usize,
    pub invariant_violations: u64,
    pub threshold_hit: Option<u64>,
    pub diverged: bool,
    pub f_final: f64,
}

impl SeedRow {
    pub fn from_record(rec: &TrajectoryRecord) -> Self {
        let s = &rec.summary;
        let (holder_lhs, holder_rhs) = s.holder();
        let rhs = telescoping_rhs(rec.config.zeta, rec.config.beta2, s.steps);
        let telescoping_violations = s
            .telescoping_lhs
            .iter()
            .filter(|&&lhs| !BoundCheck::new(lhs, rhs).holds)
            .count();
        Self {
            seed: rec.seed_index,
            steps: s.steps,
            avg_grad_norm: s.avg_grad_norm(),
            avg_denom: s.avg_denom(),
            avg_grad_sq_over_denom: s.avg_grad_sq_over_denom(),
            holder_lhs,
            holder_rhs,
            holder_holds: s.holder_holds(),
            telescoping_violations,
            invariant_violations: s.invariant_violations,
            threshold_hit: s.threshold_hit,
            diverged: rec.diverged(),
            f_final: rec.f_final,
        }
    }
}

/// Seed-aggregated outcome at one accuracy level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub eps: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eta: f64,
    pub t_min: u64,
    pub t_used: u64,
    pub truncated: bool,
    pub seeds: usize,
    pub avg_grad_norm: f64,
    pub avg_grad_norm_se: f64,
    pub stage2_lhs: f64,
    pub stage2_lhs_se: f64,
    pub stage2_rhs: f64,
    pub stage2_rhs_se: f64,
    pub stage2_holds: bool,
    pub predicted_bound: f64,
    pub bound_holds: bool,
    pub in_regime: bool,
    pub holder_violations: usize,
    pub invariant_violations: u64,
    pub telescoping_violations: usize,
    pub diverged: usize,
    pub iters_to_threshold: f64,
    pub iters_to_threshold_se: f64,
    pub threshold_reached: usize,
}

impl StudyRow {
    /// Zero pathwise violations of every kind.
    pub fn pathwise_clean(&self) -> bool {
        self.holder_violations == 0 && self.invariant_violations == 0 && self.telescoping_violations == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub row: StudyRow,
    pub per_seed: Vec<SeedRow>,
    pub schedule: ScheduleResult,
    pub problem: ProblemConstants,
    /// Seed-mean running average gradient norm at snapshot steps.
    pub curve: Vec<(u64, f64)>,
}

fn check_divergence(records: &[TrajectoryRecord]) -> Result<(), HarnessError> {
    let diverged = records.iter().filter(|r| r.diverged()).count();
    if diverged as f64 > MAX_DIVERGED_FRACTION * records.len() as f64 {
        return Err(HarnessError::TooManyDiverged {
            diverged,
            total: records.len(),
        });
    }
    Ok(())
}

/// Runs one trajectory per seed index in parallel; results are in seed order.
pub fn run_seeds(
    oracle: &ObjectiveOracle,
    config: &OptimizerConfig,
    x0: &[f64],
    steps: u64,
    master_seed: u64,
    seeds: &[u64],
    opts: &TrajectoryOptions,
) -> Result<Vec<TrajectoryRecord>, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::InvalidStudy("at least one seed is required".into()));
    }
    seeds
        .par_iter()
        .map(|&s| run_trajectory(oracle, config, x0, steps, master_seed, s, opts))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Problem constants and schedule for one accuracy level.
pub fn plan(
    oracle: &ObjectiveOracle,
    eps: f64,
    optimizer: OptimizerKind,
    beta1: f64,
    settings: &StudySettings,
) -> Result<(ProblemConstants, ScheduleResult, OptimizerConfig), HarnessError> {
    let pc = ProblemConstants::from_oracle(oracle, &settings.x0, settings.v0.as_deref(), settings.zeta)?;
    let (schedule, config) = match optimizer {
        OptimizerKind::Rmsprop => {
            let s = rmsprop_schedule_with(eps, &pc, settings.eta)?;
            let c = OptimizerConfig::rmsprop(s.eta, s.beta2, settings.zeta)?;
            (s, c)
        }
        OptimizerKind::Adam => {
            let s = adam_schedule_with(eps, beta1, &pc, settings.eta)?;
            let c = OptimizerConfig::modified(s.eta, beta1, s.beta2, settings.zeta)?;
            (s, c)
        }
    };
    Ok((pc, schedule, config.with_strict(settings.strict)))
}

fn mean_curve(records: &[&TrajectoryRecord]) -> Vec<(u64, f64)> {
    let mut acc: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for r in records {
        for s in &r.snapshots {
            let e = acc.entry(s.t).or_default();
            e.0 += s.running_avg_grad_norm;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect()
}

fn convergence(
    oracle: &ObjectiveOracle,
    eps: f64,
    optimizer: OptimizerKind,
    beta1: f64,
    seeds: &[u64],
    settings: &StudySettings,
    stop_at_threshold: bool,
) -> Result<ConvergenceStudy, HarnessError> {
    let (pc, schedule, config) = plan(oracle, eps, optimizer, beta1, settings)?;
    let t_used = settings.max_steps.map_or(schedule.t_min, |m| schedule.t_min.min(m.max(1)));
    let opts = TrajectoryOptions {
        level: Some(settings.level.unwrap_or(LogLevel::Summary)),
        v0: settings.v0.clone(),
        threshold: Some(schedule.predicted_bound),
        stop_at_threshold,
        oracle_spec: settings.oracle_spec.clone(),
    };
    let records = run_seeds(oracle, &config, &settings.x0, t_used, settings.master_seed, seeds, &opts)?;
    check_divergence(&records)?;

    let per_seed: Vec<SeedRow> = records.iter().map(SeedRow::from_record).collect();
    let ok: Vec<&SeedRow> = per_seed.iter().filter(|r| !r.diverged).collect();
    let gn: Vec<f64> = ok.iter().map(|r| r.avg_grad_norm).collect();
    let den: Vec<f64> = ok.iter().map(|r| r.avg_denom).collect();
    let (avg_grad_norm, avg_grad_norm_se) = mean_se(&gn);
    let (stage2_lhs, stage2_lhs_se) = mean_se(&den);
    let c = schedule.constant("c");
    let k = 2.0 * (pc.d as f64 * pc.d1).sqrt() / (1.0 - schedule.beta2).sqrt();
    let diff: Vec<f64> = den.iter().zip(&gn).map(|(a, g)| a - k * g - c).collect();
    let (diff_mean, diff_se) = mean_se(&diff);
    let hits: Vec<f64> = ok.iter().filter_map(|r| r.threshold_hit).map(|t| t as f64).collect();
    let (iters_to_threshold, iters_to_threshold_se) = mean_se(&hits);

    let row = StudyRow {
        eps,
        optimizer,
        beta1: config.beta1,
        beta2: schedule.beta2,
        eta: schedule.eta,
        t_min: schedule.t_min,
        t_used,
        truncated: t_used < schedule.t_min,
        seeds: ok.len(),
        avg_grad_norm,
        avg_grad_norm_se,
        stage2_lhs,
        stage2_lhs_se,
        stage2_rhs: c + k * avg_grad_norm,
        stage2_rhs_se: k * avg_grad_norm_se,
        stage2_holds: diff_mean <= 2.0 * diff_se,
        predicted_bound: schedule.predicted_bound,
        bound_holds: avg_grad_norm <= schedule.predicted_bound,
        in_regime: schedule.in_regime,
        holder_violations: ok.iter().filter(|r| !r.holder_holds).count(),
        invariant_violations: ok.iter().map(|r| r.invariant_violations).sum(),
        telescoping_violations: ok.iter().map(|r| r.telescoping_violations).sum(),
        diverged: per_seed.len() - ok.len(),
        iters_to_threshold,
        iters_to_threshold_se,
        threshold_reached: hits.len(),
    };
    let live: Vec<&TrajectoryRecord> = records.iter().filter(|r| !r.diverged()).collect();
    Ok(ConvergenceStudy {
        row,
        curve: mean_curve(&live),
        per_seed,
        schedule,
        problem: pc,
    })
}

/// Runs the schedule's `(beta2, eta, T)` once per seed and aggregates the
/// time-averaged gradient norm against the predicted bound.
pub fn monte_carlo_convergence(
    oracle: &ObjectiveOracle,
    eps: f64,
    optimizer: OptimizerKind,
    beta1: f64,
    seeds: &[u64],
    settings: &StudySettings,
) -> Result<ConvergenceStudy, HarnessError> {
    convergence(oracle, eps, optimizer, beta1, seeds, settings, false)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub rows: Vec<StudyRow>,
    /// Log-log slope of `t_min` against `1/eps`.
    pub schedule_slope: f64,
    /// Log-log slope of the mean iterations-to-threshold against `1/eps`;
    /// undefined unless every seed reached the threshold at every level.
    pub empirical_slope: f64,
}

/// Per accuracy level, runs until the running average gradient norm first
/// reaches the predicted bound.
pub fn scaling_study(
    oracle: &ObjectiveOracle,
    eps_list: &[f64],
    optimizer: OptimizerKind,
    beta1: f64,
    seeds: &[u64],
    settings: &StudySettings,
) -> Result<ScalingStudy, HarnessError> {
    if eps_list.len() < 3 {
        return Err(HarnessError::InvalidStudy(format!(
            "need at least three accuracy levels, got {}",
            eps_list.len()
        )));
    }
    if eps_list.iter().any(|e| !(e.is_finite() && *e > 0.0)) || eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(HarnessError::InvalidStudy("accuracy levels must be positive and strictly decreasing".into()));
    }
    let rows = eps_list
        .iter()
        .map(|&eps| convergence(oracle, eps, optimizer, beta1, seeds, settings, true).map(|s| s.row))
        .collect::<Result<Vec<_>, _>>()?;
    let t_min: Vec<f64> = rows.iter().map(|r| r.t_min as f64).collect();
    let schedule_slope = loglog_slope(eps_list, &t_min);
    let empirical_slope = if rows.iter().all(|r| r.seeds > 0 && r.threshold_reached == r.seeds) {
        let iters: Vec<f64> = rows.iter().map(|r| r.iters_to_threshold).collect();
        loglog_slope(eps_list, &iters)
    } else {
        f64::NAN
    };
    Ok(ScalingStudy {
        rows,
        schedule_slope,
        empirical_slope,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParitySettings {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
    /// Defaults to `max(lambda^2, 1e-16)`.
    pub zeta: Option<f64>,
    pub steps: u64,
}

impl Default for ParitySettings {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            lambda: 1e-8,
            zeta: None,
            steps: 2000,
        }
    }
}

impl ParitySettings {
    pub fn paired_zeta(&self) -> f64 {
        self.zeta.unwrap_or((self.lambda * self.lambda).max(PARITY_ZETA_FLOOR))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantStats {
    pub final_loss: f64,
    pub final_loss_se: f64,
    /// Mean loss over the run.
    pub area: f64,
    pub area_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityStudy {
    pub zeta: f64,
    pub lambda: f64,
    pub steps: u64,
    pub seeds: usize,
    pub modified: VariantStats,
    pub original: VariantStats,
    /// `|modified - original| / |original|` for the final loss.
    pub final_loss_gap: f64,
    pub area_gap: f64,
    /// Invariant, telescoping and Cauchy-Schwarz failures over both variants.
    pub pathwise_violations: u64,
    /// `(t, modified mean loss, original mean loss)`
    pub curve: Vec<(u64, f64, f64)>,
}

fn variant_stats(records: &[TrajectoryRecord]) -> VariantStats {
    let fin: Vec<f64> = records.iter().map(|r| r.f_final).collect();
    let area: Vec<f64> = records.iter().map(|r| r.summary.avg_f()).collect();
    let (final_loss, final_loss_se) = mean_se(&fin);
    let (area, area_se) = mean_se(&area);
    VariantStats {
        final_loss,
        final_loss_se,
        area,
        area_se,
    }
}

fn loss_curve(records: &[TrajectoryRecord]) -> Vec<f64> {
    let n = records.iter().map(|r| r.steps.len()).min().unwrap_or(0);
    (0..n)
        .map(|t| records.iter().map(|r| r.steps[t].f).sum::<f64>() / records.len() as f64)
        .collect()
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = b.abs();
    if scale == 0.0 {
        if a == b {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a - b).abs() / scale
    }
}

/// Modified (`sqrt(v + zeta)`) against original (`sqrt(v) + lambda`) Adam on
/// identical gradient streams.
pub fn parity_study(
    oracle: &ObjectiveOracle,
    parity: &ParitySettings,
    seeds: &[u64],
    settings: &StudySettings,
) -> Result<ParityStudy, HarnessError> {
    let zeta = parity.paired_zeta();
    let modified = OptimizerConfig::modified(parity.eta, parity.beta1, parity.beta2, zeta)?.with_strict(settings.strict);
    let original = OptimizerConfig::original(parity.eta, parity.beta1, parity.beta2, parity.lambda, zeta)?;
    let opts = TrajectoryOptions {
        level: Some(settings.level.unwrap_or(LogLevel::Scalars)),
        v0: settings.v0.clone(),
        oracle_spec: settings.oracle_spec.clone(),
        ..Default::default()
    };
    let run = |c: &OptimizerConfig| run_seeds(oracle, c, &settings.x0, parity.steps, settings.master_seed, seeds, &opts);
    let rm = run(&modified)?;
    let ro = run(&original)?;
    check_divergence(&rm)?;
    check_divergence(&ro)?;
    let rm: Vec<TrajectoryRecord> = rm.into_iter().filter(|r| !r.diverged()).collect();
    let ro: Vec<TrajectoryRecord> = ro.into_iter().filter(|r| !r.diverged()).collect();
    let pathwise_violations = rm
        .iter()
        .chain(&ro)
        .map(SeedRow::from_record)
        .map(|r| r.invariant_violations + r.telescoping_violations as u64 + u64::from(!r.holder_holds))
        .sum();
    let (sm, so) = (variant_stats(&rm), variant_stats(&ro));
    let (cm, co) = (loss_curve(&rm), loss_curve(&ro));
    let curve = cm
        .iter()
        .zip(&co)
        .enumerate()
        .map(|(t, (a, b))| (t as u64 + 1, *a, *b))
        .collect();
    Ok(ParityStudy {
        zeta,
        lambda: parity.lambda,
        steps: parity.steps,
        seeds: rm.len().min(ro.len()),
        final_loss_gap: relative_gap(sm.final_loss, so.final_loss),
        area_gap: relative_gap(sm.area, so.area),
        pathwise_violations,
        modified: sm,
        original: so,
        curve,
    })
}
