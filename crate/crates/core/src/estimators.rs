//! Empirical recovery of the coordinate-wise smoothness constants `(L0, L1)`
//! and the affine noise constants `(D0, D1)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::TrajectoryRecord;
use crate::oracles::{ObjectiveOracle, OracleError};
use crate::rng::stream;
use crate::stats::{mean_se, quantile};

pub const DEFAULT_GAMMAS: [f64; 4] = [0.125, 0.25, 0.5, 1.0];
/// Displacements (and `gamma * displacement`) at or below this are skipped.
pub const MIN_DISPLACEMENT: f64 = 1e-12;
pub const MIN_FIT_SAMPLES: usize = 10;
pub const MIN_NOISE_SAMPLES: usize = 100;
pub const ENVELOPE_QUANTILE: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("need at least {needed} {what}, got {got}")]
    Insufficient { what: &'static str, needed: usize, got: usize },
    #[error("gamma = {0} must lie in (0, 1]")]
    InvalidGamma(f64),
    #[error("trajectory does not carry per-step iterates; rerun with full logging")]
    MissingLog,
    #[error("point {index} has dimension {got}, oracle has {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSample {
    pub t: u64,
    pub i: usize,
    pub grad_abs: f64,
    pub local_l: f64,
}

fn check_gammas(gammas: &[f64]) -> Result<(), EstimatorError> {
    if gammas.is_empty() {
        return Err(EstimatorError::Insufficient {
            what: "gamma values",
            needed: 1,
            got: 0,
        });
    }
    match gammas.iter().find(|g| !(**g > 0.0 && **g <= 1.0)) {
        Some(&g) => Err(EstimatorError::InvalidGamma(g)),
        None => Ok(()),
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-gamma probes `|d_i f(x + gamma (y - x)) - d_i f(x)| / (gamma ||x - y||)`,
/// indexed `[gamma][i]`. `None` when the displacement is degenerate.
fn probes(oracle: &ObjectiveOracle, x: &[f64], y: &[f64], gammas: &[f64]) -> Result<Option<Vec<Vec<f64>>>, EstimatorError> {
    check_gammas(gammas)?;
    let r = dist(x, y);
    if !(r > MIN_DISPLACEMENT) {
        return Ok(None);
    }
    let g0 = oracle.gradient(x)?;
    let mut z = vec![0.0; x.len()];
    let mut gz = vec![0.0; x.len()];
    let mut out = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        if gamma * r < MIN_DISPLACEMENT {
            continue;
        }
        for k in 0..x.len() {
            z[k] = x[k] + gamma * (y[k] - x[k]);
        }
        oracle.gradient_into(&z, &mut gz)?;
        out.push(gz.iter().zip(&g0).map(|(a, b)| (a - b).abs() / (gamma * r)).collect());
    }
    Ok((!out.is_empty()).then_some(out))
}

/// `L_{t,i} = max_gamma |d_i f(x_t + gamma (x_next - x_t)) - d_i f(x_t)| / (gamma ||x_t - x_next||)`.
/// Returns `None` for a degenerate displacement.
pub fn estimate_coordinate_smoothness(
    oracle: &ObjectiveOracle,
    x_t: &[f64],
    x_next: &[f64],
    gammas: &[f64],
) -> Result<Option<Vec<f64>>, EstimatorError> {
    Ok(probes(oracle, x_t, x_next, gammas)?.map(|p| {
        (0..x_t.len())
            .map(|i| p.iter().map(|row| row[i]).fold(0.0, f64::max))
            .collect()
    }))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSamples {
    pub samples: Vec<SmoothnessSample>,
    pub skipped: usize,
}

/// Probes every consecutive pair of logged iterates. With `pool`, each gamma
/// contributes its own sample instead of the maximum.
pub fn smoothness_samples_from_trajectory(
    rec: &TrajectoryRecord,
    oracle: &ObjectiveOracle,
    gammas: &[f64],
    pool: bool,
) -> Result<SmoothnessSamples, EstimatorError> {
    if !rec.has_vectors() {
        return Err(EstimatorError::MissingLog);
    }
    let mut out = SmoothnessSamples::default();
    for t in 1..=rec.len() {
        let x = rec.iterate(t).ok_or(EstimatorError::MissingLog)?;
        let y = rec.iterate(t + 1).ok_or(EstimatorError::MissingLog)?;
        let Some(p) = probes(oracle, x, y, gammas)? else {
            out.skipped += 1;
            continue;
        };
        let grad = &rec.vectors[(t - 1) as usize].grad;
        for (i, g) in grad.iter().enumerate() {
            let mut push = |local_l| {
                out.samples.push(SmoothnessSample {
                    t,
                    i,
                    grad_abs: g.abs(),
                    local_l,
                })
            };
            if pool {
                p.iter().for_each(|row| push(row[i]));
            } else {
                push(p.iter().map(|row| row[i]).fold(0.0, f64::max));
            }
        }
    }
    Ok(out)
}

/// Nonnegative least squares for `y ~ a + b x`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct LineFit {
    a: f64,
    b: f64,
    rms: f64,
    rank_deficient: bool,
}

fn sse(x: &[f64], y: &[f64], a: f64, b: f64) -> f64 {
    x.iter().zip(y).map(|(x, y)| (y - a - b * x).powi(2)).sum()
}

fn nonneg_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let scale = x.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let rank_deficient = !(sxx > 1e-12 * scale);

    let mut candidates = vec![(my.max(0.0), 0.0), (0.0, 0.0)];
    if !rank_deficient {
        let b = sxy / sxx;
        let a = my - b * mx;
        if a >= 0.0 && b >= 0.0 {
            candidates.push((a, b));
        }
        let through_origin = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / scale;
        candidates.push((0.0, through_origin.max(0.0)));
    }
    let (a, b) = candidates
        .into_iter()
        .min_by(|p, q| sse(x, y, p.0, p.1).total_cmp(&sse(x, y, q.0, q.1)))
        .unwrap_or((0.0, 0.0));
    LineFit {
        a,
        b,
        rms: (sse(x, y, a, b) / n).sqrt(),
        rank_deficient,
    }
}

fn pinball(x: &[f64], y: &[f64], a: f64, b: f64, tau: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(x, y)| {
            let r = y - a - b * x;
            if r >= 0.0 {
                tau * r
            } else {
                (tau - 1.0) * r
            }
        })
        .sum()
}

fn profiled_intercept(x: &[f64], y: &[f64], b: f64, tau: f64) -> f64 {
    let r: Vec<f64> = x.iter().zip(y).map(|(x, y)| y - b * x).collect();
    quantile(&r, tau).max(0.0)
}

/// Quantile regression with nonnegative coefficients: the intercept is
/// profiled out and the slope found by golden-section search.
fn envelope_line(x: &[f64], y: &[f64], tau: f64, hint: f64) -> (f64, f64) {
    let xr = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(xr > 0.0) {
        return (profiled_intercept(x, y, 0.0, tau), 0.0);
    }
    let yr = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let loss = |b: f64| pinball(x, y, profiled_intercept(x, y, b, tau), b, tau);
    let (mut lo, mut hi) = (0.0, 4.0 * hint.max(0.0) + 4.0 * yr / xr + 1.0);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let (mut fc, mut fd) = (loss(c), loss(d));
    for _ in 0..200 {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = loss(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = loss(d);
        }
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
    }
    let b = if loss(0.0) <= loss((lo + hi) / 2.0) { 0.0 } else { (lo + hi) / 2.0 };
    (profiled_intercept(x, y, b, tau), b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessFit {
    pub l0_hat: f64,
    pub l1_hat: f64,
    pub residual: f64,
    pub envelope_l0: f64,
    pub envelope_l1: f64,
    pub n_points: usize,
    pub rank_deficient: bool,
}

/// Fits `local_l ~ l0/sqrt(d) + l1 |d_i f|` with `l0, l1 >= 0`, by least
/// squares and by the upper 0.95-quantile envelope.
pub fn fit_l0_l1(samples: &[SmoothnessSample], d: usize) -> Result<SmoothnessFit, EstimatorError> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(EstimatorError::Insufficient {
            what: "smoothness samples",
            needed: MIN_FIT_SAMPLES,
            got: samples.len(),
        });
    }
    let x: Vec<f64> = samples.iter().map(|s| s.grad_abs).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.local_l).collect();
    let ls = nonneg_line(&x, &y);
    let (ea, eb) = envelope_line(&x, &y, ENVELOPE_QUANTILE, ls.b);
    let sd = (d.max(1) as f64).sqrt();
    Ok(SmoothnessFit {
        l0_hat: ls.a * sd,
        l1_hat: ls.b,
        residual: ls.rms,
        envelope_l0: ea * sd,
        envelope_l1: eb,
        n_points: samples.len(),
        rank_deficient: ls.rank_deficient,
    })
}

/// One fit per coordinate index present in `samples`.
pub fn fit_l0_l1_per_coordinate(samples: &[SmoothnessSample], d: usize) -> Vec<(usize, Result<SmoothnessFit, EstimatorError>)> {
    (0..d)
        .map(|i| {
            let s: Vec<SmoothnessSample> = samples.iter().filter(|s| s.i == i).copied().collect();
            (i, fit_l0_l1(&s, d))
        })
        .collect()
}

/// How gradient samples are drawn across probe points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    /// Every point reuses the same random stream.
    #[default]
    Common,
    /// Each point gets its own stream.
    Independent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub point: usize,
    pub i: usize,
    pub grad_abs: f64,
    pub second_moment: f64,
    pub second_moment_se: f64,
    pub std: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub d0_hat: f64,
    pub d1_hat: f64,
    pub residual: f64,
    pub n_points: usize,
    pub rank_deficient: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub points: Vec<NoisePoint>,
    pub per_coordinate: Vec<AffineFit>,
    pub pooled: AffineFit,
}

fn affine_fit(rows: &[&NoisePoint]) -> AffineFit {
    let x: Vec<f64> = rows.iter().map(|p| p.grad_abs * p.grad_abs).collect();
    let y: Vec<f64> = rows.iter().map(|p| p.second_moment).collect();
    let f = nonneg_line(&x, &y);
    AffineFit {
        d0_hat: f.a,
        d1_hat: f.b,
        residual: f.rms,
        n_points: rows.len(),
        rank_deficient: f.rank_deficient,
    }
}

/// Estimates `E[g_i^2]` at each point from `n_samples` draws and fits
/// `E[g_i^2] ~ d0 + d1 (d_i f)^2` with nonnegative coefficients.
pub fn estimate_affine_noise(
    oracle: &ObjectiveOracle,
    points: &[Vec<f64>],
    n_samples: usize,
    master_seed: u64,
    scheme: SamplingScheme,
) -> Result<NoiseEstimate, EstimatorError> {
    if n_samples < MIN_NOISE_SAMPLES {
        return Err(EstimatorError::Insufficient {
            what: "gradient samples per point",
            needed: MIN_NOISE_SAMPLES,
            got: n_samples,
        });
    }
    if points.len() < 2 {
        return Err(EstimatorError::Insufficient {
            what: "points",
            needed: 2,
            got: points.len(),
        });
    }
    let d = oracle.dim();
    let mut rows = Vec::with_capacity(points.len() * d);
    let mut g = vec![0.0; d];
    for (p, x) in points.iter().enumerate() {
        if x.len() != d {
            return Err(EstimatorError::DimensionMismatch {
                index: p,
                expected: d,
                got: x.len(),
            });
        }
        let grad = oracle.gradient(x)?;
        let mut rng = match scheme {
            SamplingScheme::Common => stream(master_seed, 0),
            SamplingScheme::Independent => stream(master_seed, p as u64),
        };
        let mut sq = vec![Vec::with_capacity(n_samples); d];
        let mut lin = vec![0.0; d];
        for _ in 0..n_samples {
            oracle.sample_into(x, &mut rng, &mut g)?;
            for i in 0..d {
                sq[i].push(g[i] * g[i]);
                lin[i] += g[i];
            }
        }
        for i in 0..d {
            let (m2, se) = mean_se(&sq[i]);
            let m1 = lin[i] / n_samples as f64;
            rows.push(NoisePoint {
                point: p,
                i,
                grad_abs: grad[i].abs(),
                second_moment: m2,
                second_moment_se: se,
                std: (m2 - m1 * m1).max(0.0).sqrt(),
            });
        }
    }
    let per_coordinate = (0..d)
        .map(|i| affine_fit(&rows.iter().filter(|r| r.i == i).collect::<Vec<_>>()))
        .collect();
    let pooled = affine_fit(&rows.iter().collect::<Vec<_>>());
    Ok(NoiseEstimate {
        points: rows,
        per_coordinate,
        pooled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_trajectory, LogLevel, TrajectoryOptions};
    use crate::optim::OptimizerConfig;
    use crate::oracles::ObjectiveSpec;

    fn quadratic(a: Vec<f64>) -> ObjectiveOracle {
        ObjectiveOracle::build(&ObjectiveSpec::Quadratic {
            a,
            sigma0: 0.0,
            sigma1: 0.0,
        })
        .unwrap()
    }

    #[test]
    fn quadratic_local_l_is_one() {
        let q = quadratic(vec![1.0]);
        for (x, y) in [(0.0, 1.0), (3.0, -2.5), (1e-3, 2e-3), (-7.0, 40.0)] {
            let l = estimate_coordinate_smoothness(&q, &[x], &[y], &DEFAULT_GAMMAS).unwrap().unwrap();
            assert!((l[0] - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn exp_sum_single_step() {
        let e = ObjectiveOracle::build(&ObjectiveSpec::ExpSum {
            dim: 1,
            sigma0: 0.0,
            sigma1: 0.0,
            step_radius: 0.0,
        })
        .unwrap();
        let l = estimate_coordinate_smoothness(&e, &[0.0], &[0.1], &[0.25, 0.5, 1.0]).unwrap().unwrap();
        assert!((l[0] - (0.1f64.exp() - 1.0) / 0.1).abs() < 1e-12);
        assert!((l[0] - 1.05171).abs() < 1e-5);
    }

    #[test]
    fn degenerate_displacement_is_skipped() {
        let q = quadratic(vec![1.0, 2.0]);
        assert_eq!(estimate_coordinate_smoothness(&q, &[1.0, 1.0], &[1.0, 1.0], &DEFAULT_GAMMAS).unwrap(), None);
        assert!(matches!(
            estimate_coordinate_smoothness(&q, &[1.0, 1.0], &[2.0, 1.0], &[0.0]),
            Err(EstimatorError::InvalidGamma(_))
        ));
    }

    #[test]
    fn scale_covariance() {
        let (q1, q2) = (quadratic(vec![1.0, 3.0]), quadratic(vec![2.0, 6.0]));
        let (x, y) = ([0.4, -1.0], [1.3, 0.2]);
        let l1 = estimate_coordinate_smoothness(&q1, &x, &y, &DEFAULT_GAMMAS).unwrap().unwrap();
        let l2 = estimate_coordinate_smoothness(&q2, &x, &y, &DEFAULT_GAMMAS).unwrap().unwrap();
        for (a, b) in l1.iter().zip(&l2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b);
        }
    }

    fn samples(points: &[(f64, f64)]) -> Vec<SmoothnessSample> {
        points
            .iter()
            .enumerate()
            .map(|(t, &(g, l))| SmoothnessSample {
                t: t as u64,
                i: 0,
                grad_abs: g,
                local_l: l,
            })
            .collect()
    }

    #[test]
    fn exact_line_recovery() {
        let d = 4;
        let (l0, l1) = (3.0, 0.7);
        let pts: Vec<(f64, f64)> = (0..50).map(|k| k as f64 * 0.3).map(|g| (g, l0 / 2.0 + l1 * g)).collect();
        let f = fit_l0_l1(&samples(&pts), d).unwrap();
        assert!((f.l0_hat - l0).abs() < 1e-8);
        assert!((f.l1_hat - l1).abs() < 1e-8);
        assert!((f.envelope_l1 - l1).abs() < 1e-6);
        assert!(!f.rank_deficient);
    }

    #[test]
    fn flat_samples_give_zero_slope() {
        let pts: Vec<(f64, f64)> = (0..20).map(|k| (k as f64, 1.0)).collect();
        let f = fit_l0_l1(&samples(&pts), 9).unwrap();
        assert!(f.l1_hat.abs() < 1e-12);
        assert!((f.l0_hat - 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fits() {
        let f = fit_l0_l1(&samples(&[(2.0, 1.0); 12]), 1).unwrap();
        assert!(f.rank_deficient);
        assert!(fit_l0_l1(&samples(&[(2.0, 1.0), (2.0, 3.0)]), 1).is_err());
    }

    #[test]
    fn envelope_sits_above_most_samples() {
        let pts: Vec<(f64, f64)> = (0..400)
            .map(|k| {
                let g = (k % 40) as f64 * 0.25;
                let wobble = ((k * 7919) % 100) as f64 / 100.0;
                (g, 0.5 + g * (0.5 + wobble))
            })
            .collect();
        let f = fit_l0_l1(&samples(&pts), 1).unwrap();
        let above = pts.iter().filter(|(g, l)| *l <= f.envelope_l0 + f.envelope_l1 * g + 1e-9).count();
        assert!(above as f64 >= 0.93 * pts.len() as f64);
        assert!(f.envelope_l1 >= f.l1_hat);
    }

    #[test]
    fn linreg_noise_recovery() {
        let o = ObjectiveOracle::build(&ObjectiveSpec::GaussianLinreg { dim: 1 }).unwrap();
        let pts: Vec<Vec<f64>> = [0.5, 1.0, 2.0, 4.0].iter().map(|w| vec![*w]).collect();
        let est = estimate_affine_noise(&o, &pts, 10_000, 3, SamplingScheme::Common).unwrap();
        let f = est.per_coordinate[0];
        assert!((2.7..=3.3).contains(&f.d1_hat), "{f:?}");
        assert!(f.d0_hat <= 0.1);
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let q = ObjectiveOracle::build(&ObjectiveSpec::Quadratic {
            a: vec![1.0, 2.0],
            sigma0: 0.0,
            sigma1: 0.0,
        })
        .unwrap();
        let pts = vec![vec![0.5, 1.0], vec![1.0, -2.0], vec![3.0, 0.25]];
        let est = estimate_affine_noise(&q, &pts, 100, 0, SamplingScheme::Independent).unwrap();
        for f in est.per_coordinate.iter().chain([&est.pooled]) {
            assert!((f.d1_hat - 1.0).abs() < 1e-12);
            assert!(f.d0_hat.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_points_are_rank_deficient() {
        let o = ObjectiveOracle::build(&ObjectiveSpec::Quartic {
            dim: 2,
            sigma0: 1.0,
            sigma1: 0.0,
            box_radius: 1.0,
        })
        .unwrap();
        let est = estimate_affine_noise(&o, &[vec![0.0, 0.0], vec![0.0, 0.0]], 200, 1, SamplingScheme::Independent).unwrap();
        assert!(est.pooled.rank_deficient);
        assert!(estimate_affine_noise(&o, &[vec![0.0, 0.0]], 200, 1, SamplingScheme::Common).is_err());
        assert!(estimate_affine_noise(&o, &[vec![0.0, 0.0], vec![1.0, 1.0]], 10, 1, SamplingScheme::Common).is_err());
    }

    #[test]
    fn doubling_samples_shrinks_spread() {
        let o = ObjectiveOracle::build(&ObjectiveSpec::GaussianLinreg { dim: 1 }).unwrap();
        let pts: Vec<Vec<f64>> = [0.5, 1.0, 2.0, 4.0].iter().map(|w| vec![*w]).collect();
        let spread = |n: usize| {
            let fits: Vec<f64> = (0..60)
                .map(|s| {
                    estimate_affine_noise(&o, &pts, n, 1000 + s, SamplingScheme::Independent).unwrap().pooled.d1_hat
                })
                .collect();
            let (m, _) = mean_se(&fits);
            (fits.iter().map(|f| (f - m) * (f - m)).sum::<f64>() / 59.0).sqrt()
        };
        let ratio = spread(500) / spread(1000);
        assert!((1.05..=2.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn exp_sum_trajectory_slope() {
        let spec = ObjectiveSpec::ExpSum {
            dim: 1,
            sigma0: 0.0,
            sigma1: 0.0,
            step_radius: 0.0,
        };
        let o = ObjectiveOracle::build(&spec).unwrap();
        let c = OptimizerConfig::rmsprop(0.02, 0.99, 1.0).unwrap();
        let opts = TrajectoryOptions {
            level: Some(LogLevel::Full),
            ..Default::default()
        };
        let rec = run_trajectory(&o, &c, &[2.0], 200, 0, 0, &opts).unwrap();
        let s = smoothness_samples_from_trajectory(&rec, &o, &DEFAULT_GAMMAS, false).unwrap();
        let f = fit_l0_l1(&s.samples, 1).unwrap();
        assert!((0.9..=1.1).contains(&f.l1_hat), "{f:?}");
        let pooled = smoothness_samples_from_trajectory(&rec, &o, &DEFAULT_GAMMAS, true).unwrap();
        assert_eq!(pooled.samples.len(), 4 * s.samples.len());
    }
}
