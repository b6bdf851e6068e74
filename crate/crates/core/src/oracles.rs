//! Test objectives with exact gradients, affine-variance stochastic gradient
//! samplers and their documented smoothness and noise constants.

use crate::rng::StreamRng;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle {oracle}: invalid parameter {name}: {reason}")]
    InvalidParameter {
        oracle: &'static str,
        name: &'static str,
        reason: String,
    },
    #[error("dimension mismatch: oracle has dimension {expected}, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn d_n() -> usize {
    256
}
fn d_dim() -> usize {
    4
}
fn d_batch() -> usize {
    8
}
fn d_label_noise() -> f64 {
    0.1
}

/// Objective name plus parameters, as read from a study config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    /// `f(x) = sum x_i^4 / 4`, gradient `x_i^3 (1 + sigma1 xi) + sigma0 xi'`.
    Quartic {
        dim: usize,
        #[serde(default)]
        sigma0: f64,
        #[serde(default)]
        sigma1: f64,
        #[serde(default = "one")]
        box_radius: f64,
    },
    /// `f(x) = sum exp(x_i)`, same noise form as the quartic.
    ExpSum {
        dim: usize,
        #[serde(default)]
        sigma0: f64,
        #[serde(default)]
        sigma1: f64,
        #[serde(default)]
        step_radius: f64,
    },
    /// `f(w) = sum w_i^2` with `g_i = 2 z_i^2 w_i`, `z_i ~ N(0, 1)`.
    GaussianLinreg {
        #[serde(default = "one_usize")]
        dim: usize,
    },
    /// `f(x) = sum a_i x_i^2 / 2`.
    Quadratic {
        a: Vec<f64>,
        #[serde(default)]
        sigma0: f64,
        #[serde(default)]
        sigma1: f64,
    },
    /// Finite-sum logistic regression on a seeded two-class dataset,
    /// sampled by minibatches drawn with replacement.
    LogisticToy {
        #[serde(default = "d_n")]
        n: usize,
        #[serde(default = "d_dim")]
        dim: usize,
        #[serde(default = "d_batch")]
        batch: usize,
        #[serde(default)]
        data_seed: u64,
        #[serde(default = "d_label_noise")]
        label_noise: f64,
    },
}

impl ObjectiveSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveSpec::Quartic { .. } => "quartic",
            ObjectiveSpec::ExpSum { .. } => "exp_sum",
            ObjectiveSpec::GaussianLinreg { .. } => "gaussian_linreg",
            ObjectiveSpec::Quadratic { .. } => "quadratic",
            ObjectiveSpec::LogisticToy { .. } => "logistic_toy",
        }
    }
}

/// `E[g_i^2 | x] <= d0 + d1 * (df/dx_i)^2`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub d0: f64,
    pub d1: f64,
}

impl NoiseModel {
    pub fn envelope(&self, partial: f64) -> f64 {
        self.d0 + self.d1 * partial * partial
    }
}

/// Where the smoothness constants are valid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Region {
    Global,
    /// Both points inside `||x||_inf <= radius`.
    Box { radius: f64 },
    /// Any pair with `||x - y|| <= step_radius`.
    Local { step_radius: f64 },
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        match *self {
            Region::Box { radius } => x.iter().all(|v| v.abs() <= radius),
            _ => true,
        }
    }

    pub fn admits_step(&self, x: &[f64], y: &[f64]) -> bool {
        match *self {
            Region::Global => true,
            Region::Box { .. } => self.contains(x) && self.contains(y),
            Region::Local { step_radius } => {
                x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() <= step_radius
            }
        }
    }
}

/// `|df/dx_i(x) - df/dx_i(y)| <= (l0 / sqrt(d) + l1 |df/dx_i(x)|) ||x - y||` on `region`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessModel {
    pub l0: f64,
    pub l1: f64,
    pub region: Region,
}

#[derive(Clone, Debug)]
pub struct Quartic {
    pub dim: usize,
    pub sigma0: f64,
    pub sigma1: f64,
    pub box_radius: f64,
}

#[derive(Clone, Debug)]
pub struct ExpSum {
    pub dim: usize,
    pub sigma0: f64,
    pub sigma1: f64,
    pub step_radius: f64,
}

#[derive(Clone, Debug)]
pub struct GaussianLinreg {
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub struct Quadratic {
    pub a: Vec<f64>,
    pub sigma0: f64,
    pub sigma1: f64,
}

#[derive(Clone, Debug)]
pub struct LogisticToy {
    pub dim: usize,
    pub batch: usize,
    /// Row-major `n x dim` features.
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl LogisticToy {
    pub fn generate(n: usize, dim: usize, batch: usize, data_seed: u64, label_noise: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
        let w_star: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut features = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let z: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let s: f64 = z.iter().zip(&w_star).map(|(a, b)| a * b).sum();
            let mut y = if s >= 0.0 { 1.0 } else { -1.0 };
            if rng.random::<f64>() < label_noise {
                y = -y;
            }
            features.extend_from_slice(&z);
            labels.push(y);
        }
        Self {
            dim,
            batch,
            features,
            labels,
        }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.features[j * self.dim..(j + 1) * self.dim]
    }

    fn margin(&self, j: usize, w: &[f64]) -> f64 {
        self.labels[j] * self.row(j).iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Adds `scale * grad l_j(w)` into `out`.
    fn add_grad(&self, j: usize, w: &[f64], scale: f64, out: &mut [f64]) {
        let s = self.margin(j, w);
        let coef = -scale * self.labels[j] / (1.0 + s.exp());
        for (o, z) in out.iter_mut().zip(self.row(j)) {
            *o += coef * z;
        }
    }

    fn max_sq_feature(&self) -> f64 {
        self.features.iter().fold(0.0, |m, z| m.max(z * z))
    }

    fn max_row_coupling(&self) -> f64 {
        (0..self.n())
            .map(|j| {
                let r = self.row(j);
                let norm = r.iter().map(|z| z * z).sum::<f64>().sqrt();
                r.iter().fold(0.0f64, |m, z| m.max(z.abs())) * norm
            })
            .fold(0.0, f64::max)
    }
}

fn softplus_neg(s: f64) -> f64 {
    (-s).max(0.0) + (-s.abs()).exp().ln_1p()
}

/// A constructed objective.
#[derive(Clone, Debug)]
pub enum ObjectiveOracle {
    Quartic(Quartic),
    ExpSum(ExpSum),
    GaussianLinreg(GaussianLinreg),
    Quadratic(Quadratic),
    LogisticToy(LogisticToy),
}

fn check_sigma(oracle: &'static str, name: &'static str, v: f64) -> Result<(), OracleError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(OracleError::InvalidParameter {
            oracle,
            name,
            reason: format!("must be nonnegative and finite, got {v}"),
        })
    }
}

fn check_dim(oracle: &'static str, dim: usize) -> Result<(), OracleError> {
    if dim == 0 {
        Err(OracleError::InvalidParameter {
            oracle,
            name: "dim",
            reason: "must be at least 1".into(),
        })
    } else {
        Ok(())
    }
}

/// Largest value of `1 + s + s^2 - 3 s^3` on `[0, 1]`, attained at `s = (1 + sqrt(10)) / 9`.
fn quartic_l0_factor() -> f64 {
    let s = (1.0 + 10f64.sqrt()) / 9.0;
    1.0 + s + s * s - 3.0 * s * s * s
}

impl ObjectiveOracle {
    pub fn build(spec: &ObjectiveSpec) -> Result<Self, OracleError> {
        let name = spec.name();
        Ok(match spec.clone() {
            ObjectiveSpec::Quartic {
                dim,
                sigma0,
                sigma1,
                box_radius,
            } => {
                check_dim(name, dim)?;
                check_sigma(name, "sigma0", sigma0)?;
                check_sigma(name, "sigma1", sigma1)?;
                if !(box_radius.is_finite() && box_radius > 0.0) {
                    return Err(OracleError::InvalidParameter {
                        oracle: name,
                        name: "box_radius",
                        reason: format!("must be positive, got {box_radius}"),
                    });
                }
                ObjectiveOracle::Quartic(Quartic {
                    dim,
                    sigma0,
                    sigma1,
                    box_radius,
                })
            }
            ObjectiveSpec::ExpSum {
                dim,
                sigma0,
                sigma1,
                step_radius,
            } => {
                check_dim(name, dim)?;
                check_sigma(name, "sigma0", sigma0)?;
                check_sigma(name, "sigma1", sigma1)?;
                check_sigma(name, "step_radius", step_radius)?;
                ObjectiveOracle::ExpSum(ExpSum {
                    dim,
                    sigma0,
                    sigma1,
                    step_radius,
                })
            }
            ObjectiveSpec::GaussianLinreg { dim } => {
                check_dim(name, dim)?;
                ObjectiveOracle::GaussianLinreg(GaussianLinreg { dim })
            }
            ObjectiveSpec::Quadratic { a, sigma0, sigma1 } => {
                check_dim(name, a.len())?;
                for &ai in &a {
                    check_sigma(name, "a", ai)?;
                }
                check_sigma(name, "sigma0", sigma0)?;
                check_sigma(name, "sigma1", sigma1)?;
                ObjectiveOracle::Quadratic(Quadratic { a, sigma0, sigma1 })
            }
            ObjectiveSpec::LogisticToy {
                n,
                dim,
                batch,
                data_seed,
                label_noise,
            } => {
                check_dim(name, dim)?;
                if n == 0 || batch == 0 {
                    return Err(OracleError::InvalidParameter {
                        oracle: name,
                        name: if n == 0 { "n" } else { "batch" },
                        reason: "must be at least 1".into(),
                    });
                }
                if !(0.0..=0.5).contains(&label_noise) {
                    return Err(OracleError::InvalidParameter {
                        oracle: name,
                        name: "label_noise",
                        reason: format!("must lie in [0, 0.5], got {label_noise}"),
                    });
                }
                ObjectiveOracle::LogisticToy(LogisticToy::generate(n, dim, batch, data_seed, label_noise))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveOracle::Quartic(_) => "quartic",
            ObjectiveOracle::ExpSum(_) => "exp_sum",
            ObjectiveOracle::GaussianLinreg(_) => "gaussian_linreg",
            ObjectiveOracle::Quadratic(_) => "quadratic",
            ObjectiveOracle::LogisticToy(_) => "logistic_toy",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ObjectiveOracle::Quartic(o) => o.dim,
            ObjectiveOracle::ExpSum(o) => o.dim,
            ObjectiveOracle::GaussianLinreg(o) => o.dim,
            ObjectiveOracle::Quadratic(o) => o.a.len(),
            ObjectiveOracle::LogisticToy(o) => o.dim,
        }
    }

    fn check(&self, x: &[f64]) -> Result<(), OracleError> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(OracleError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            })
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64, OracleError> {
        self.check(x)?;
        Ok(self.value_unchecked(x))
    }

    fn value_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            ObjectiveOracle::Quartic(_) => x.iter().map(|v| v.powi(4) / 4.0).sum(),
            ObjectiveOracle::ExpSum(_) => x.iter().map(|v| v.exp()).sum(),
            ObjectiveOracle::GaussianLinreg(_) => x.iter().map(|v| v * v).sum(),
            ObjectiveOracle::Quadratic(o) => o.a.iter().zip(x).map(|(a, v)| 0.5 * a * v * v).sum(),
            ObjectiveOracle::LogisticToy(o) => {
                (0..o.n()).map(|j| softplus_neg(o.margin(j, x))).sum::<f64>() / o.n() as f64
            }
        }
    }

    /// Exact gradient written into `out`.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), OracleError> {
        self.check(x)?;
        self.check(out)?;
        match self {
            ObjectiveOracle::Quartic(_) => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v * v * v;
                }
            }
            ObjectiveOracle::ExpSum(_) => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v.exp();
                }
            }
            ObjectiveOracle::GaussianLinreg(_) => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 2.0 * v;
                }
            }
            ObjectiveOracle::Quadratic(q) => {
                for ((o, v), a) in out.iter_mut().zip(x).zip(&q.a) {
                    *o = a * v;
                }
            }
            ObjectiveOracle::LogisticToy(l) => {
                out.fill(0.0);
                let scale = 1.0 / l.n() as f64;
                for j in 0..l.n() {
                    l.add_grad(j, x, scale, out);
                }
            }
        }
        Ok(())
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(x, &mut g)?;
        Ok(g)
    }

    /// `(f(x), grad f(x))`
    pub fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>), OracleError> {
        let g = self.gradient(x)?;
        Ok((self.value_unchecked(x), g))
    }

    /// One stochastic gradient at `x`, written into `out`.
    pub fn sample_into(&self, x: &[f64], rng: &mut StreamRng, out: &mut [f64]) -> Result<(), OracleError> {
        self.gradient_into(x, out)?;
        let affine = |out: &mut [f64], rng: &mut StreamRng, s0: f64, s1: f64| {
            for o in out.iter_mut() {
                if s1 > 0.0 {
                    *o *= 1.0 + s1 * rng.sample::<f64, _>(StandardNormal);
                }
                if s0 > 0.0 {
                    *o += s0 * rng.sample::<f64, _>(StandardNormal);
                }
            }
        };
        match self {
            ObjectiveOracle::Quartic(q) => affine(out, rng, q.sigma0, q.sigma1),
            ObjectiveOracle::ExpSum(e) => affine(out, rng, e.sigma0, e.sigma1),
            ObjectiveOracle::Quadratic(q) => affine(out, rng, q.sigma0, q.sigma1),
            ObjectiveOracle::GaussianLinreg(_) => {
                for o in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *o *= z * z;
                }
            }
            ObjectiveOracle::LogisticToy(l) => {
                out.fill(0.0);
                let scale = 1.0 / l.batch as f64;
                for _ in 0..l.batch {
                    let j = rng.random_range(0..l.n());
                    l.add_grad(j, x, scale, out);
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, x: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>, OracleError> {
        let mut g = vec![0.0; self.dim()];
        self.sample_into(x, rng, &mut g)?;
        Ok(g)
    }

    pub fn noise(&self) -> NoiseModel {
        let affine = |s0: f64, s1: f64| NoiseModel {
            d0: s0 * s0,
            d1: 1.0 + s1 * s1,
        };
        match self {
            ObjectiveOracle::Quartic(q) => affine(q.sigma0, q.sigma1),
            ObjectiveOracle::ExpSum(e) => affine(e.sigma0, e.sigma1),
            ObjectiveOracle::Quadratic(q) => affine(q.sigma0, q.sigma1),
            ObjectiveOracle::GaussianLinreg(_) => NoiseModel { d0: 0.0, d1: 3.0 },
            ObjectiveOracle::LogisticToy(l) => NoiseModel {
                d0: l.max_sq_feature() / l.batch as f64,
                d1: 1.0,
            },
        }
    }

    pub fn smoothness(&self) -> SmoothnessModel {
        let sqrt_d = (self.dim() as f64).sqrt();
        match self {
            ObjectiveOracle::Quartic(q) => {
                let r = q.box_radius;
                SmoothnessModel {
                    l0: sqrt_d * r * r * quartic_l0_factor(),
                    l1: 3.0 / r,
                    region: Region::Box { radius: r },
                }
            }
            ObjectiveOracle::ExpSum(e) => SmoothnessModel {
                l0: 0.0,
                l1: e.step_radius.exp(),
                region: Region::Local {
                    step_radius: e.step_radius,
                },
            },
            ObjectiveOracle::GaussianLinreg(_) => SmoothnessModel {
                l0: 2.0 * sqrt_d,
                l1: 0.0,
                region: Region::Global,
            },
            ObjectiveOracle::Quadratic(q) => SmoothnessModel {
                l0: sqrt_d * q.a.iter().fold(0.0f64, |m, a| m.max(*a)),
                l1: 0.0,
                region: Region::Global,
            },
            ObjectiveOracle::LogisticToy(l) => SmoothnessModel {
                l0: sqrt_d * 0.25 * l.max_row_coupling(),
                l1: 0.0,
                region: Region::Global,
            },
        }
    }

    /// Infimum of the objective.
    pub fn f_inf(&self) -> f64 {
        0.0
    }
}

/// `d0 + d1 * (df/dx_i)^2` per coordinate at `x`.
pub fn noise_envelope(oracle: &ObjectiveOracle, x: &[f64]) -> Result<Vec<f64>, OracleError> {
    let nm = oracle.noise();
    Ok(oracle.gradient(x)?.into_iter().map(|g| nm.envelope(g)).collect())
}
