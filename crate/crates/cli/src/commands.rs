//! One function per subcommand. Each writes its tables into the output
//! directory and returns a JSON summary for the terminal.

use std::sync::Arc;

use gridrl::characteristics::{
    convergence_report, covariation_functional, diagnostic_case, moment_compare,
    state_functional, PathFunctional, DIAGNOSTIC_CASES,
};
use gridrl::integrate::identity_suite;
use gridrl::mc::{par_map_paths, Summary};
use gridrl::model::{JumpDiffusionModel, Partition, RandomizedPolicy, Scenario};
use gridrl::quad::QuadratureSpec;
use gridrl::sde::{
    realized_covariation, solve_exploratory, solve_grid_sampling, solve_limit_joint, SolverConfig,
    Streams,
};
use gridrl::td::{martingale_loss, run_td0, StepSchedule, TDConfig, ValueModel};
use serde_json::{json, Value};

use crate::config::Resolved;
use crate::output::{int, num, OutputDir, Table};
use crate::CliError;

/// Path indices at or above this offset feed the second ensemble of a
/// comparison, so that the two ensembles never share a stream.
const SECOND_ENSEMBLE: u64 = 1 << 40;

pub fn simulate(r: &Resolved, s: &Scenario, out: &mut OutputDir) -> Result<Value, CliError> {
    let n = r.paths_or(100);
    let cfg = SolverConfig::new(r.partition(), r.refine, s.model.dims.d);
    let m = s.model.dims.m;
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|k| format!("x_{k}")));
    header.push("jump_flag".into());
    for (j, pol) in s.policies.iter().enumerate() {
        let records = par_map_paths(n, |k| {
            solve_grid_sampling(&s.model, pol, None, &cfg, Streams::new(r.seed, k))
        })?;
        for (k, rec) in records.iter().enumerate() {
            let mut t = Table::new(&header);
            for (i, flag) in rec.jump_flags().into_iter().enumerate() {
                let mut row = vec![num(rec.times[i])];
                row.extend(rec.state(i).iter().map(|&x| num(x)));
                row.push(int(flag as u8));
                t.push(row);
            }
            out.write_csv(&format!("paths/policy{}_path{k:05}.csv", j + 1), &t)?;
        }
    }
    Ok(json!({ "policies": s.policies.len(), "paths_per_policy": n }))
}

/// `(∫ a(0,x₀,𝐡₁(u)) a(0,x₀,𝐡₂(u)) du, √(∫a²(𝐡₁) ∫a²(𝐡₂)))` per unit time.
fn covariation_rates(model: &JumpDiffusionModel, p1: &RandomizedPolicy, p2: &RandomizedPolicy) -> Result<(f64, f64), CliError> {
    let d = model.dims.d;
    let rule = QuadratureSpec::default_for_dim(d).build(d)?;
    let vol = |p: &RandomizedPolicy, u: &[f64]| {
        let mut a = [0.0];
        model.diffusion_into(0.0, &model.x0, &p.execute(0.0, &model.x0, u), &mut a);
        a[0]
    };
    let cross = rule.integrate(|u| vol(p1, u) * vol(p2, u));
    let s1 = rule.integrate(|u| vol(p1, u).powi(2));
    let s2 = rule.integrate(|u| vol(p2, u).powi(2));
    Ok((cross, (s1 * s2).sqrt()))
}

pub fn covariation(r: &Resolved, s: &Scenario, out: &mut OutputDir) -> Result<Value, CliError> {
    let model = &s.model;
    let dims = model.dims;
    if s.policies.len() < 2 || (dims.m, dims.p, dims.d) != (1, 1, 1) || model.has_jumps() {
        return Err(CliError::Config(format!(
            "covariation needs a scalar jump-free model with two policies; `{}` does not qualify",
            s.id
        )));
    }
    let (p1, p2) = (&s.policies[0], &s.policies[1]);
    let (cross, explore) = covariation_rates(model, p1, p2)?;
    let horizon = model.horizon;
    let mut t = Table::new(&["solver", "mesh_n", "estimate", "target", "abs_error", "se"]);
    let push = |t: &mut Table, solver: &str, n: usize, est: Summary, target: f64| {
        t.push(vec![
            solver.into(),
            int(n),
            num(est.mean),
            num(target),
            num((est.mean - target).abs()),
            num(est.se),
        ]);
    };

    let grid_paths = r.paths_or(100);
    for &n in &r.meshes {
        let cfg = SolverConfig::new(Partition::equidistant(horizon, n)?, r.refine, 1);
        let est = par_map_paths(grid_paths, |k| {
            let a = solve_grid_sampling(model, p1, None, &cfg, Streams::new(r.seed, k))?;
            let b = solve_grid_sampling(model, p2, None, &cfg, Streams::new(r.seed, k))?;
            realized_covariation(&a, &b)
        })?;
        push(&mut t, "grid", n, Summary::of(&est), cross * horizon);
    }

    let limit_paths = r.covariation.limit_paths.unwrap_or(10_000);
    if limit_paths < 2 {
        return Err(CliError::Config("covariation.limit_paths must be at least 2".into()));
    }
    let part = r.partition();
    let cfg = SolverConfig::new(part.clone(), r.refine, 1);
    let pair = [p1.clone(), p2.clone()];
    let limit = par_map_paths(limit_paths, |k| {
        let v = solve_limit_joint(model, &pair, &cfg, Streams::new(r.seed, k))?;
        realized_covariation(&v[0], &v[1])
    })?;
    let limit = Summary::of(&limit);
    push(&mut t, "limit", part.n(), limit, cross * horizon);
    let exploratory = par_map_paths(limit_paths, |k| {
        let a = solve_exploratory(model, p1, &cfg, Streams::new(r.seed, k))?;
        let b = solve_exploratory(model, p2, &cfg, Streams::new(r.seed, k))?;
        realized_covariation(&a, &b)
    })?;
    let exploratory = Summary::of(&exploratory);
    push(&mut t, "exploratory", part.n(), exploratory, explore * horizon);
    out.write_csv("covariation.csv", &t)?;
    let separation = (exploratory.mean - limit.mean).abs() / (exploratory.se.powi(2) + limit.se.powi(2)).sqrt();
    Ok(json!({
        "limit_target": cross * horizon,
        "exploratory_target": explore * horizon,
        "limit_vs_exploratory_separation_se": separation,
    }))
}

pub fn converge(r: &Resolved, s: &Scenario, out: &mut OutputDir) -> Result<Value, CliError> {
    let cases = r
        .converge
        .cases
        .clone()
        .unwrap_or_else(|| DIAGNOSTIC_CASES.iter().map(|c| c.to_string()).collect());
    let paths = r.paths_or(10_000);
    let substeps = r.converge.substeps.unwrap_or(1);
    let n_max = *r.meshes.iter().max().expect("meshes validated non-empty") as f64;
    let mut summary = Vec::new();
    for name in &cases {
        let c = diagnostic_case(name)?;
        let rep = convergence_report(&c.bundle, &c.g, &r.meshes, &c.levy, paths, r.seed, substeps)?;
        let mut t = Table::new(&["mesh_n", "estimate", "target", "abs_error", "mc_se"]);
        for row in &rep.rows {
            t.push(vec![
                int(row.mesh_n),
                num(row.estimate),
                num(row.target),
                num(row.abs_error),
                num(row.mc_se),
            ]);
        }
        out.write_csv(&format!("convergence_{name}.csv"), &t)?;
        let last = rep.rows.last().expect("at least one mesh");
        let pass = match name.as_str() {
            "jump_only" => rep.rows.iter().all(|r| r.abs_error <= 3.0 * r.mc_se),
            "zero" => rep.rows.iter().all(|r| r.abs_error == 0.0),
            _ => rep.decreasing && last.abs_error < (3.0 * last.mc_se).max(2.0 / n_max),
        };
        summary.push(json!({
            "case": name,
            "test_fn": rep.test_fn,
            "decreasing": rep.decreasing,
            "final_abs_error": last.abs_error,
            "final_mc_se": last.mc_se,
            "pass": pass,
        }));
    }

    let moment_paths = r.converge.moment_paths.unwrap_or(2_000);
    if moment_paths < 2 {
        return Err(CliError::Config("converge.moment_paths must be at least 2".into()));
    }
    let horizon = s.model.horizon;
    let times = r
        .converge
        .moment_times
        .clone()
        .unwrap_or_else(|| vec![0.25 * horizon, 0.5 * horizon, horizon]);
    let policies: Vec<RandomizedPolicy> = s.policies.iter().take(2).cloned().collect();
    let cfg = SolverConfig::new(r.partition(), r.refine, s.model.dims.d);
    let pre = par_map_paths(moment_paths, |k| {
        policies
            .iter()
            .map(|p| solve_grid_sampling(&s.model, p, None, &cfg, Streams::new(r.seed, k)))
            .collect()
    })?;
    let lim = par_map_paths(moment_paths, |k| {
        solve_limit_joint(&s.model, &policies, &cfg, Streams::new(r.seed, SECOND_ENSEMBLE + k))
    })?;
    let mut fs: Vec<(String, PathFunctional)> = vec![
        ("x".into(), state_functional(Arc::new(|x| x[0]))),
        ("x2".into(), state_functional(Arc::new(|x| x[0] * x[0]))),
    ];
    if policies.len() == 2 && s.model.dims.m == 1 {
        fs.push(("covariation".into(), covariation_functional()));
    }
    let rows = moment_compare(&pre, &lim, &times, &fs)?;
    let mut t = Table::new(&["t", "functional", "pre_limit", "limit", "abs_diff", "pooled_se"]);
    for row in &rows {
        t.push(vec![
            num(row.t),
            row.functional.clone(),
            num(row.pre_limit),
            num(row.limit),
            num(row.abs_diff),
            num(row.pooled_se),
        ]);
    }
    out.write_csv("moments.csv", &t)?;
    let report = json!({ "cases": summary });
    out.write_json("report.json", &report)?;
    Ok(report)
}

pub fn td0(r: &Resolved, s: &Scenario, out: &mut OutputDir) -> Result<Value, CliError> {
    let model = &s.model;
    if (model.dims.m, model.dims.d) != (1, 1) {
        return Err(CliError::Config("td0 evaluates scalar models with scalar controls".into()));
    }
    let policy = &s.policies[0];
    let lambda = r.td.lambda.or(s.params.get("lambda").copied()).unwrap_or(0.1);
    let schedule = match r.td.alpha {
        Some(alpha) => StepSchedule::Constant { alpha },
        None => {
            let StepSchedule::Decaying { alpha0, k0 } = StepSchedule::default() else {
                unreachable!("default schedule decays")
            };
            StepSchedule::Decaying {
                alpha0: r.td.alpha0.unwrap_or(alpha0),
                k0: r.td.k0.unwrap_or(k0),
            }
        }
    };
    let episodes = r.td.episodes.or(r.paths).unwrap_or(20_000);
    let part = r.partition();
    let mut cfg = TDConfig::new(lambda, schedule, episodes, part.clone());
    cfg.refine = r.refine;
    let value = ValueModel::td0_bench(model.horizon)?;
    let run = run_td0(model, policy, &value, &cfg, r.seed)?;
    let mut t = Table::new(&["episode", "theta_1", "increment_norm"]);
    for row in &run.trajectory {
        t.push(vec![int(row.episode), num(row.theta[0]), num(row.increment_norm)]);
    }
    out.write_csv("trajectory.csv", &t)?;

    let theta_hat = run.theta[0];
    let theta_star = -lambda * policy.entropy(0.0, &model.x0)?;
    let loss_paths = r.td.loss_paths.unwrap_or(2_000);
    let buckets = r.td.buckets.unwrap_or(16);
    let loss_at = |theta: f64| -> Result<Value, CliError> {
        let v = value.clone().with_theta(vec![theta])?;
        let l = martingale_loss(&v, model, policy, &cfg, loss_paths, part.points(), buckets, r.seed)?;
        Ok(json!({ "theta": theta, "loss": l.loss, "se": l.se, "buckets": l.buckets, "widened": l.widened }))
    };
    let report = json!({
        "theta_hat": theta_hat,
        "theta_star": theta_star,
        "abs_error": (theta_hat - theta_star).abs(),
        "tail_average_100": run.tail_average(100)[0],
        "pass": (theta_hat - theta_star).abs() < 0.01,
        "lambda": lambda,
        "episodes": episodes,
        "martingale_loss": [loss_at(theta_hat)?, loss_at(theta_hat + 1.0)?],
    });
    out.write_json("report.json", &report)?;
    Ok(report)
}

pub fn selftest(r: &Resolved, out: &mut OutputDir) -> Result<Value, CliError> {
    let instances = r.paths_or(20);
    let checks = identity_suite(r.seed, instances)?;
    let mut t = Table::new(&["measure", "instance", "atom_side", "interval_side", "scale", "holds"]);
    for c in &checks {
        t.push(vec![
            c.measure.into(),
            int(c.instance),
            num(c.atom_side),
            num(c.interval_side),
            num(c.scale),
            int(c.holds as u8),
        ]);
    }
    out.write_csv("selftest.csv", &t)?;
    let failed = checks.iter().filter(|c| !c.holds).count();
    Ok(json!({ "checks": checks.len(), "failed": failed }))
}
