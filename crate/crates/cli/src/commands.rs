use std::fs;
use std::path::{Path, PathBuf};

use affine_adam::estimators::{
    estimate_affine_noise, fit_l0_l1, fit_l0_l1_per_coordinate, smoothness_samples_from_trajectory, SmoothnessFit,
};
use affine_adam::harness::{run_seeds, ConvergenceStudy};
use affine_adam::lemmas::{
    check_momentum_ratio, check_sum_ratio_log, check_sum_ratio_log_flipped, check_sum_ratio_sqrt, check_telescoping,
    random_case, random_config,
};
use affine_adam::rng::stream;
use affine_adam::{
    monte_carlo_convergence, parity_study, run_trajectory, scaling_study, BoundCheck, ExperimentConfig, LogLevel,
    ObjectiveOracle, ObjectiveSpec, OptimizerConfig, SequenceCase, TrajectoryOptions,
};
use serde::Serialize;

use crate::error::CliError;
use crate::svg::{Plot, Series};
use crate::table::{num, opt, Table};

/// Synthetic trajectories checked for the telescoping bound.
const TELESCOPING_TRAJECTORIES: usize = 200;
const TELESCOPING_STEPS: u64 = 64;

pub struct Context {
    pub config: Option<ExperimentConfig>,
    pub out: PathBuf,
}

impl Context {
    pub fn load(path: Option<&Path>, seed: Option<u64>, strict: bool, out: PathBuf) -> Result<Self, CliError> {
        let config = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                let mut c = ExperimentConfig::from_toml(&text)?;
                if let Some(s) = seed {
                    c.seed = s;
                }
                c.strict |= strict;
                Some(c)
            }
            None => None,
        };
        fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        Ok(Self { config, out })
    }

    fn config(&self) -> Result<&ExperimentConfig, CliError> {
        self.config
            .as_ref()
            .ok_or_else(|| CliError::Usage("this command needs --config PATH".into()))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, body: &str) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, body).map_err(|e| CliError::io(&p, e))
    }
}

fn b(v: bool) -> String {
    v.to_string()
}

#[derive(Serialize)]
struct Violation<'a> {
    lemma: &'a str,
    case: usize,
    check: BoundCheck,
    #[serde(skip_serializing_if = "Option::is_none")]
    sequence: Option<&'a SequenceCase>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trajectory: Option<TrajectoryReplay>,
}

#[derive(Serialize)]
struct TrajectoryReplay {
    master_seed: u64,
    seed_index: u64,
    coordinate: usize,
    config: OptimizerConfig,
    x0: Vec<f64>,
    steps: u64,
}

type Check = fn(&SequenceCase) -> Result<BoundCheck, affine_adam::LemmaError>;

pub fn verify_lemmas(ctx: &Context, cases: Option<usize>, seed: u64, inject_bug: bool) -> Result<String, CliError> {
    let n = cases
        .or_else(|| ctx.config.as_ref().and_then(|c| c.lemmas.as_ref()).map(|l| l.cases))
        .unwrap_or(10_000);
    if n == 0 {
        return Err(CliError::Usage("--cases must be at least 1".into()));
    }
    let log_check: Check = if inject_bug {
        check_sum_ratio_log_flipped
    } else {
        check_sum_ratio_log
    };
    let suites: [(&str, i32, Check); 3] = [
        ("momentum_ratio", 2, check_momentum_ratio),
        ("sum_ratio_log", 2, log_check),
        ("sum_ratio_sqrt", 4, check_sum_ratio_sqrt),
    ];
    let mut table = Table::create(
        &ctx.path("lemmas.csv"),
        &["lemma", "case", "len", "beta1", "beta2", "a0", "zeta", "lhs", "rhs", "slack", "holds"],
    )?;
    let mut all_cases: Vec<(usize, usize, SequenceCase, BoundCheck)> = Vec::new();
    for (s, (name, power, check)) in suites.iter().enumerate() {
        let mut rng = stream(seed, s as u64);
        for k in 0..n {
            let case = if k == 0 {
                SequenceCase::new(vec![0.0; 8], 0.5, 0.9, 1.0, 0.5)
            } else {
                random_case(&mut rng, *power)
            };
            let r = check(&case)?;
            table.row(vec![
                name.to_string(),
                k.to_string(),
                case.c.len().to_string(),
                num(case.beta1),
                num(case.beta2),
                num(case.a0),
                num(case.zeta),
                num(r.lhs),
                num(r.rhs),
                num(r.slack),
                b(r.holds),
            ])?;
            if !r.holds {
                all_cases.push((s, k, case, r));
            }
        }
    }
    let mut violations: Vec<Violation> = all_cases
        .iter()
        .map(|(s, k, case, r)| Violation {
            lemma: suites[*s].0,
            case: *k,
            check: *r,
            sequence: Some(case),
            trajectory: None,
        })
        .collect();

    let oracle = ObjectiveOracle::build(&ObjectiveSpec::Quartic {
        dim: 3,
        sigma0: 1.0,
        sigma1: 0.5,
        box_radius: 1.0,
    })
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut rng = stream(seed, 3);
    let opts = TrajectoryOptions {
        level: Some(LogLevel::Full),
        ..Default::default()
    };
    for k in 0..n.min(TELESCOPING_TRAJECTORIES) {
        let config = random_config(&mut rng);
        let phase = k as f64;
        let x0 = vec![phase.cos(), phase.sin(), 0.5 * (2.0 * phase).cos()];
        let rec = run_trajectory(&oracle, &config, &x0, TELESCOPING_STEPS, seed, k as u64, &opts)?;
        for i in 0..3 {
            let r = check_telescoping(&rec, &config, i)?;
            table.row(vec![
                "telescoping".into(),
                k.to_string(),
                rec.len().to_string(),
                num(config.beta1),
                num(config.beta2),
                num(rec.v0[i]),
                num(config.zeta),
                num(r.lhs),
                num(r.rhs),
                num(r.slack),
                b(r.holds),
            ])?;
            if !r.holds {
                violations.push(Violation {
                    lemma: "telescoping",
                    case: k,
                    check: r,
                    sequence: None,
                    trajectory: Some(TrajectoryReplay {
                        master_seed: seed,
                        seed_index: k as u64,
                        coordinate: i,
                        config,
                        x0: x0.clone(),
                        steps: TELESCOPING_STEPS,
                    }),
                });
            }
        }
    }
    table.finish()?;
    let json = serde_json::to_string_pretty(&violations).map_err(|e| CliError::Runtime(e.to_string()))?;
    ctx.write("violations.json", &(json + "\n"))?;
    if violations.is_empty() {
        Ok(format!(
            "verify-lemmas: {n} cases per lemma and {} trajectories, all bounds hold",
            n.min(TELESCOPING_TRAJECTORIES)
        ))
    } else {
        Err(CliError::Violation(format!(
            "{} bound violations, first: {} case {} (see violations.json)",
            violations.len(),
            violations[0].lemma,
            violations[0].case
        )))
    }
}

const CONVERGENCE_HEADER: [&str; 26] = [
    "row",
    "seed",
    "eps",
    "optimizer",
    "beta1",
    "beta2",
    "eta",
    "t_min",
    "t_used",
    "steps",
    "avg_grad_norm",
    "avg_grad_norm_se",
    "avg_denom",
    "stage2_lhs",
    "stage2_rhs",
    "stage2_holds",
    "predicted_bound",
    "bound_holds",
    "holder_lhs",
    "holder_rhs",
    "holder_holds",
    "telescoping_violations",
    "invariant_violations",
    "threshold_hit",
    "diverged",
    "f_final",
];

fn write_convergence(ctx: &Context, study: &ConvergenceStudy) -> Result<(), CliError> {
    let r = &study.row;
    let mut t = Table::create(&ctx.path("convergence.csv"), &CONVERGENCE_HEADER)?;
    let head = |kind: &str, seed: String| {
        vec![
            kind.to_string(),
            seed,
            num(r.eps),
            r.optimizer.name().to_string(),
            num(r.beta1),
            num(r.beta2),
            num(r.eta),
            r.t_min.to_string(),
            r.t_used.to_string(),
        ]
    };
    for s in &study.per_seed {
        let mut row = head("seed", s.seed.to_string());
        row.extend([
            s.steps.to_string(),
            num(s.avg_grad_norm),
            String::new(),
            num(s.avg_denom),
            String::new(),
            String::new(),
            String::new(),
            num(r.predicted_bound),
            b(s.avg_grad_norm <= r.predicted_bound),
            num(s.holder_lhs),
            num(s.holder_rhs),
            b(s.holder_holds),
            s.telescoping_violations.to_string(),
            s.invariant_violations.to_string(),
            opt(s.threshold_hit),
            b(s.diverged),
            num(s.f_final),
        ]);
        t.row(row)?;
    }
    let mut row = head("aggregate", String::new());
    row.extend([
        r.t_used.to_string(),
        num(r.avg_grad_norm),
        num(r.avg_grad_norm_se),
        num(r.stage2_lhs),
        num(r.stage2_lhs),
        num(r.stage2_rhs),
        b(r.stage2_holds),
        num(r.predicted_bound),
        b(r.bound_holds),
        String::new(),
        String::new(),
        b(r.holder_violations == 0),
        r.telescoping_violations.to_string(),
        r.invariant_violations.to_string(),
        num(r.iters_to_threshold),
        r.diverged.to_string(),
        String::new(),
    ]);
    t.row(row)?;
    t.finish()?;
    ctx.write("schedule.toml", &study.schedule.to_toml())?;
    let plot = Plot {
        title: format!("{} at eps = {}", r.optimizer.name(), r.eps),
        x_label: "t".into(),
        y_label: "running average of ||grad f(x_t)||".into(),
        log_x: true,
        log_y: true,
        series: vec![Series::line(
            "seed mean",
            study.curve.iter().map(|&(t, v)| (t as f64, v)).collect(),
        )],
        rules: vec![("predicted bound".into(), r.predicted_bound)],
    };
    ctx.write("convergence.svg", &plot.render())
}

pub fn run(ctx: &Context) -> Result<String, CliError> {
    let cfg = ctx.config()?;
    let (sec, settings) = cfg.convergence_settings()?;
    let oracle = cfg.build_oracle()?;
    let study = monte_carlo_convergence(&oracle, sec.eps, sec.optimizer, sec.beta1, &sec.seeds.indices(), &settings)?;
    write_convergence(ctx, &study)?;
    let r = &study.row;
    let summary = format!(
        "run: mean avg grad norm {:.6} (se {:.2e}) vs bound {:.6} over {} seeds, T = {}",
        r.avg_grad_norm, r.avg_grad_norm_se, r.predicted_bound, r.seeds, r.t_used
    );
    if !r.pathwise_clean() {
        return Err(CliError::Violation(format!(
            "pathwise violations: holder {}, invariants {}, telescoping {}",
            r.holder_violations, r.invariant_violations, r.telescoping_violations
        )));
    }
    if !r.bound_holds || !r.stage2_holds {
        return Err(CliError::Violation(format!(
            "{summary}; bound holds: {}, stage-two holds: {}",
            r.bound_holds, r.stage2_holds
        )));
    }
    Ok(summary)
}

pub fn scale_study(ctx: &Context) -> Result<String, CliError> {
    let cfg = ctx.config()?;
    let (sec, settings) = cfg.scaling_settings()?;
    let oracle = cfg.build_oracle()?;
    let study = scaling_study(&oracle, &sec.eps, sec.optimizer, sec.beta1, &sec.seeds.indices(), &settings)?;
    let mut t = Table::create(
        &ctx.path("scale.csv"),
        &[
            "row",
            "eps",
            "t_min",
            "t_used",
            "iters_to_threshold",
            "iters_to_threshold_se",
            "threshold_reached",
            "seeds",
            "avg_grad_norm",
            "predicted_bound",
            "schedule_slope",
            "empirical_slope",
        ],
    )?;
    for r in &study.rows {
        t.row(vec![
            "eps".into(),
            num(r.eps),
            r.t_min.to_string(),
            r.t_used.to_string(),
            num(r.iters_to_threshold),
            num(r.iters_to_threshold_se),
            r.threshold_reached.to_string(),
            r.seeds.to_string(),
            num(r.avg_grad_norm),
            num(r.predicted_bound),
            String::new(),
            String::new(),
        ])?;
    }
    let mut slope = vec!["slope".to_string()];
    slope.extend(std::iter::repeat_n(String::new(), 9));
    slope.extend([num(study.schedule_slope), num(study.empirical_slope)]);
    t.row(slope)?;
    t.finish()?;
    let inv = |f: fn(&affine_adam::StudyRow) -> f64| study.rows.iter().map(|r| (1.0 / r.eps, f(r))).collect();
    let plot = Plot {
        title: "iterations against 1/eps".into(),
        x_label: "1/eps".into(),
        y_label: "iterations".into(),
        log_x: true,
        log_y: true,
        series: vec![
            Series::line("schedule T", inv(|r| r.t_min as f64)),
            Series::line("iterations to threshold", inv(|r| r.iters_to_threshold)),
        ],
        rules: vec![],
    };
    ctx.write("scale.svg", &plot.render())?;
    if study.rows.iter().any(|r| !r.pathwise_clean()) {
        return Err(CliError::Violation("pathwise violations during the scaling study".into()));
    }
    Ok(format!(
        "scale-study: schedule slope {:.4}, empirical slope {:.4}",
        study.schedule_slope, study.empirical_slope
    ))
}

fn fit_row(scope: String, f: &SmoothnessFit, l0: f64, l1: f64) -> Vec<String> {
    vec![
        scope,
        num(f.l0_hat),
        num(f.l1_hat),
        num(f.residual),
        num(f.envelope_l0),
        num(f.envelope_l1),
        f.n_points.to_string(),
        b(f.rank_deficient),
        num(l0),
        num(l1),
    ]
}

pub fn estimate_smoothness(ctx: &Context) -> Result<String, CliError> {
    let cfg = ctx.config()?;
    let sec = cfg.smoothness.as_ref().ok_or(affine_adam::ConfigError::MissingSection("smoothness"))?;
    let oracle = cfg.build_oracle()?;
    let d = oracle.dim();
    let x0 = sec.x0.resolve(d)?;
    let config = OptimizerConfig::modified(sec.eta, sec.beta1, sec.beta2, sec.zeta)
        .map_err(|e| affine_adam::ConfigError::Invalid(e.to_string()))?
        .with_strict(cfg.strict);
    let opts = TrajectoryOptions {
        level: Some(LogLevel::Full),
        oracle_spec: Some(cfg.oracle.clone()),
        ..Default::default()
    };
    let records = run_seeds(&oracle, &config, &x0, sec.steps, cfg.seed, &sec.seeds.indices(), &opts)?;
    let mut samples = Vec::new();
    let mut st = Table::create(&ctx.path("smoothness_samples.csv"), &["seed", "t", "i", "grad_abs", "local_l"])?;
    let mut skipped = 0;
    for rec in &records {
        let s = smoothness_samples_from_trajectory(rec, &oracle, &sec.gammas, sec.pool)?;
        skipped += s.skipped;
        for x in &s.samples {
            st.row(vec![
                rec.seed_index.to_string(),
                x.t.to_string(),
                x.i.to_string(),
                num(x.grad_abs),
                num(x.local_l),
            ])?;
        }
        samples.extend(s.samples);
    }
    st.finish()?;
    let model = oracle.smoothness();
    let pooled = fit_l0_l1(&samples, d)?;
    let mut ft = Table::create(
        &ctx.path("smoothness_fit.csv"),
        &[
            "scope",
            "l0_hat",
            "l1_hat",
            "residual",
            "envelope_l0",
            "envelope_l1",
            "n_points",
            "rank_deficient",
            "analytic_l0",
            "analytic_l1",
        ],
    )?;
    ft.row(fit_row("pooled".into(), &pooled, model.l0, model.l1))?;
    if d > 1 {
        for (i, f) in fit_l0_l1_per_coordinate(&samples, d) {
            if let Ok(f) = f {
                ft.row(fit_row(format!("coordinate_{i}"), &f, model.l0, model.l1))?;
            }
        }
    }
    ft.finish()?;
    let xmax = samples.iter().map(|s| s.grad_abs).fold(0.0, f64::max);
    let sd = (d as f64).sqrt();
    let line = |a: f64, b: f64| vec![(0.0, a / sd), (xmax, a / sd + b * xmax)];
    let plot = Plot {
        title: format!("coordinate-wise smoothness on {}", oracle.name()),
        x_label: "|d_i f(x_t)|".into(),
        y_label: "local smoothness".into(),
        series: vec![
            Series::dots("samples", samples.iter().map(|s| (s.grad_abs, s.local_l)).collect()),
            Series::line("least squares", line(pooled.l0_hat, pooled.l1_hat)),
            Series::line("0.95 envelope", line(pooled.envelope_l0, pooled.envelope_l1)),
        ],
        ..Default::default()
    };
    ctx.write("smoothness.svg", &plot.render())?;
    Ok(format!(
        "estimate-smoothness: {} samples ({skipped} skipped), l0_hat {:.4}, l1_hat {:.4}",
        samples.len(),
        pooled.l0_hat,
        pooled.l1_hat
    ))
}

pub fn estimate_noise(ctx: &Context) -> Result<String, CliError> {
    let cfg = ctx.config()?;
    let sec = cfg.noise.as_ref().ok_or(affine_adam::ConfigError::MissingSection("noise"))?;
    let oracle = cfg.build_oracle()?;
    let points = sec
        .points
        .iter()
        .map(|p| p.resolve(oracle.dim()))
        .collect::<Result<Vec<_>, _>>()?;
    let est = estimate_affine_noise(&oracle, &points, sec.samples, cfg.seed, sec.scheme)?;
    let mut pt = Table::create(
        &ctx.path("noise_points.csv"),
        &["point", "i", "grad_abs", "second_moment", "second_moment_se", "std"],
    )?;
    for p in &est.points {
        pt.row(vec![
            p.point.to_string(),
            p.i.to_string(),
            num(p.grad_abs),
            num(p.second_moment),
            num(p.second_moment_se),
            num(p.std),
        ])?;
    }
    pt.finish()?;
    let model = oracle.noise();
    let mut ft = Table::create(
        &ctx.path("noise_fit.csv"),
        &["scope", "d0_hat", "d1_hat", "residual", "n_points", "rank_deficient", "analytic_d0", "analytic_d1"],
    )?;
    let fits = std::iter::once(("pooled".to_string(), &est.pooled))
        .chain(est.per_coordinate.iter().enumerate().map(|(i, f)| (format!("coordinate_{i}"), f)));
    for (scope, f) in fits {
        ft.row(vec![
            scope,
            num(f.d0_hat),
            num(f.d1_hat),
            num(f.residual),
            f.n_points.to_string(),
            b(f.rank_deficient),
            num(model.d0),
            num(model.d1),
        ])?;
    }
    ft.finish()?;
    let xmax = est.points.iter().map(|p| p.grad_abs).fold(0.0, f64::max);
    let f = est.pooled;
    let curve = (0..=50)
        .map(|k| {
            let x = xmax * k as f64 / 50.0;
            (x, (f.d0_hat + (f.d1_hat - 1.0) * x * x).max(0.0).sqrt())
        })
        .collect();
    let plot = Plot {
        title: format!("gradient noise on {}", oracle.name()),
        x_label: "|d_i f(x)|".into(),
        y_label: "std of g_i".into(),
        series: vec![
            Series::dots("points", est.points.iter().map(|p| (p.grad_abs, p.std)).collect()),
            Series::line("affine fit", curve),
        ],
        ..Default::default()
    };
    ctx.write("noise.svg", &plot.render())?;
    Ok(format!(
        "estimate-noise: d0_hat {:.4}, d1_hat {:.4} from {} points",
        f.d0_hat,
        f.d1_hat,
        points.len()
    ))
}

pub fn parity(ctx: &Context) -> Result<String, CliError> {
    let cfg = ctx.config()?;
    let (sec, settings) = cfg.parity_settings()?;
    let oracle = cfg.build_oracle()?;
    let study = parity_study(&oracle, &sec.settings(), &sec.seeds.indices(), &settings)?;
    let mut t = Table::create(
        &ctx.path("parity.csv"),
        &[
            "variant",
            "lambda",
            "zeta",
            "steps",
            "seeds",
            "final_loss",
            "final_loss_se",
            "area",
            "area_se",
            "final_loss_gap",
            "area_gap",
            "pathwise_violations",
        ],
    )?;
    for (name, v) in [("modified", &study.modified), ("original", &study.original)] {
        t.row(vec![
            name.into(),
            num(study.lambda),
            num(study.zeta),
            study.steps.to_string(),
            study.seeds.to_string(),
            num(v.final_loss),
            num(v.final_loss_se),
            num(v.area),
            num(v.area_se),
            num(study.final_loss_gap),
            num(study.area_gap),
            study.pathwise_violations.to_string(),
        ])?;
    }
    t.finish()?;
    let mut ct = Table::create(&ctx.path("parity_curve.csv"), &["t", "modified", "original"])?;
    for &(step, m, o) in &study.curve {
        ct.row(vec![step.to_string(), num(m), num(o)])?;
    }
    ct.finish()?;
    let plot = Plot {
        title: "modified against original update".into(),
        x_label: "t".into(),
        y_label: "mean loss".into(),
        series: vec![
            Series::line("sqrt(v + zeta)", study.curve.iter().map(|c| (c.0 as f64, c.1)).collect()),
            Series::line("sqrt(v) + lambda", study.curve.iter().map(|c| (c.0 as f64, c.2)).collect()),
        ],
        ..Default::default()
    };
    ctx.write("parity.svg", &plot.render())?;
    if study.pathwise_violations > 0 {
        return Err(CliError::Violation(format!(
            "{} pathwise violations, see parity.csv",
            study.pathwise_violations
        )));
    }
    Ok(format!(
        "parity: final loss {:.6} vs {:.6}, relative gap {:.3e}",
        study.modified.final_loss, study.original.final_loss, study.final_loss_gap
    ))
}
