//! End-to-end acceptance suite. Runs every criterion in order, prints one
//! PASS/FAIL line each and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use gridrl::characteristics::{
    convergence_report, diagnostic_case, integrated_psi, limit_characteristics, TestFn,
    TestFunctionBundle, TruncationFunction,
};
use gridrl::integrate::identity_suite;
use gridrl::mc::{correlation, par_map_paths, raw_moments, Summary};
use gridrl::model::{builtin, JumpSizeLaw, LevyMeasureSpec, Partition, Scenario};
use gridrl::noise::{attach_uniform_marks_limit, fourier_eta, sample_poisson_measure, CellWhiteNoise};
use gridrl::quad::QuadratureSpec;
use gridrl::rng::stream;
use gridrl::sde::{
    realized_covariation, solve_exploratory, solve_grid_sampling, solve_limit_joint, SolverConfig, Streams,
};
use gridrl::td::{martingale_loss, run_td0, td0_bench_fixed_point, StepSchedule, TDConfig, ValueModel};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn scenario(id: &str, pairs: &[(&str, f64)]) -> Scenario {
    let o: BTreeMap<String, f64> = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    builtin(id, &o).expect("builtin scenario")
}

fn identities() -> Outcome {
    let t0 = Instant::now();
    let checks = identity_suite(20260101, 20).map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    let worst = checks
        .iter()
        .map(|c| (c.atom_side - c.interval_side).abs() / c.scale.max(1.0))
        .fold(0.0, f64::max);
    let held = checks.iter().filter(|c| c.holds).count();
    let per = |m: &str| checks.iter().filter(|c| c.measure == m).count();
    check(
        held == checks.len() && worst <= 1e-12 && within(elapsed, 10.0),
        format!(
            "{held}/{} hold ({} drift, {} brownian, {} jump), worst rel {worst:.2e}, {elapsed:.2?}",
            checks.len(),
            per("drift"),
            per("brownian"),
            per("jump")
        ),
    )
}

fn covariation_trichotomy() -> Outcome {
    let t0 = Instant::now();
    let s = scenario("two_controls", &[]);
    let (p1, p2) = (&s.policies[0], &s.policies[1]);
    let cfg = SolverConfig::equidistant(&s.model, 256, 1).map_err(|e| e.to_string())?;
    let grid = par_map_paths(100, |k| {
        let a = solve_grid_sampling(&s.model, p1, None, &cfg, Streams::new(7, k))?;
        let b = solve_grid_sampling(&s.model, p2, None, &cfg, Streams::new(7, k))?;
        realized_covariation(&a, &b)
    })
    .map_err(|e| e.to_string())?;
    let grid = Summary::of(&grid);
    let lcfg = SolverConfig::equidistant(&s.model, 64, 1).map_err(|e| e.to_string())?;
    let pair = [p1.clone(), p2.clone()];
    let limit = par_map_paths(10_000, |k| {
        let v = solve_limit_joint(&s.model, &pair, &lcfg, Streams::new(8, k))?;
        realized_covariation(&v[0], &v[1])
    })
    .map_err(|e| e.to_string())?;
    let limit = Summary::of(&limit);
    let explo = par_map_paths(10_000, |k| {
        let a = solve_exploratory(&s.model, p1, &lcfg, Streams::new(9, k))?;
        let b = solve_exploratory(&s.model, p2, &lcfg, Streams::new(9, k))?;
        realized_covariation(&a, &b)
    })
    .map_err(|e| e.to_string())?;
    let explo = Summary::of(&explo);
    let elapsed = t0.elapsed();
    // μ₁μ₂ + σ₁σ₂ and √((μ₁² + σ₁²)(μ₂² + σ₂²)) with μ = (1, -0.5), σ = (1, 2)
    let (target, wide) = (1.5, 8.5f64.sqrt());
    let sep = (explo.mean - limit.mean).abs() / (explo.se.powi(2) + limit.se.powi(2)).sqrt();
    check(
        (grid.mean - target).abs() < 0.1
            && (limit.mean - target).abs() < 0.05
            && (explo.mean - wide).abs() < 0.05
            && sep > 10.0
            && within(elapsed, 120.0),
        format!(
            "grid {:.4}, limit {:.4}, exploratory {:.4} (target {wide:.4}), separation {sep:.1} se, {elapsed:.2?}",
            grid.mean, limit.mean, explo.mean
        ),
    )
}

fn diagnostics() -> Outcome {
    let t0 = Instant::now();
    let meshes = [4, 16, 64, 256];
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["drift_only", "brownian_only", "jump_only"] {
        let c = diagnostic_case(name).map_err(|e| e.to_string())?;
        let rep = convergence_report(&c.bundle, &c.g, &meshes, &c.levy, 10_000, 2026, 1).map_err(|e| e.to_string())?;
        let last = rep.rows.last().expect("four meshes");
        let pass = if name == "jump_only" {
            rep.rows.iter().all(|r| r.abs_error <= 3.0 * r.mc_se)
        } else {
            rep.decreasing && last.abs_error < (3.0 * last.mc_se).max(2.0 / 256.0)
        };
        ok &= pass;
        let errs: Vec<String> = rep.rows.iter().map(|r| format!("{:.1e}", r.abs_error)).collect();
        parts.push(format!("{name} [{}] se {:.1e}", errs.join(" "), last.mc_se));
    }
    let elapsed = t0.elapsed();
    check(ok && within(elapsed, 300.0), format!("{}; {elapsed:.2?}", parts.join("; ")))
}

fn brownian_characterization() -> Outcome {
    let m = 3;
    let eta = fourier_eta(m);
    let noise = CellWhiteNoise::new(64, m, &eta).map_err(|e| e.to_string())?;
    let n = 10_000;
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|k| noise.terminal(1.0, 8, &mut stream(11, "bm", k as u64)))
        .collect();
    let col = |i: usize| draws.iter().map(|v| v[i]).collect::<Vec<_>>();
    let mut worst_var: f64 = 0.0;
    let mut worst_corr: f64 = 0.0;
    for i in 0..m {
        worst_var = worst_var.max((Summary::of(&col(i)).var - 1.0).abs());
        for j in i + 1..m {
            worst_corr = worst_corr.max(correlation(&col(i), &col(j)).abs());
        }
    }
    check(
        worst_var < 0.03 && worst_corr < 0.03,
        format!("m={m}, max |var-1| {worst_var:.4}, max |corr| {worst_corr:.4}"),
    )
}

fn law_equivalence() -> Outcome {
    let s = scenario("two_controls", &[]);
    let pol = [s.policies[0].clone()];
    let cfg = SolverConfig::equidistant(&s.model, 64, 1).map_err(|e| e.to_string())?;
    let lim = par_map_paths(10_000, |k| {
        Ok(solve_limit_joint(&s.model, &pol, &cfg, Streams::new(12, k))?[0].terminal()[0])
    })
    .map_err(|e| e.to_string())?;
    let exp = par_map_paths(10_000, |k| {
        Ok(solve_exploratory(&s.model, &pol[0], &cfg, Streams::new(13, k))?.terminal()[0])
    })
    .map_err(|e| e.to_string())?;
    let (a, b) = (raw_moments(&lim), raw_moments(&exp));
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 0..4 {
        let z = (a[k].mean - b[k].mean).abs() / (a[k].se.powi(2) + b[k].se.powi(2)).sqrt();
        ok &= z < 4.0;
        parts.push(format!("m{} {:.3}/{:.3} ({z:.2} se)", k + 1, a[k].mean, b[k].mean));
    }
    check(ok, parts.join(", "))
}

fn characteristics_identity() -> Outcome {
    let t0 = Instant::now();
    let mut b = TestFunctionBundle::zero("two_dim", 2, 2, 2, 1.0);
    b.r = 0.7;
    b.f0 = std::sync::Arc::new(|s, u, out: &mut [f64]| {
        out[0] = s * u[0];
        out[1] = 0.3 - u[1];
    });
    b.fl = vec![
        std::sync::Arc::new(|_, u, out: &mut [f64]| {
            out[0] = 1.0 + u[0];
            out[1] = 0.5 * u[1];
        }),
        std::sync::Arc::new(|s, u, out: &mut [f64]| {
            out[0] = (s + u[1]).sin();
            out[1] = -0.8;
        }),
    ];
    b.fp1 = std::sync::Arc::new(|_, z, u, out: &mut [f64]| {
        out[0] = 2.0 * u[0];
        out[1] = (z[0] * u[1]).cos();
    });
    b.fp2 = std::sync::Arc::new(|s, z, u, out: &mut [f64]| {
        out[0] = (z[0] * u[0]).clamp(-2.5, 2.5);
        out[1] = 1.5 * s * u[1];
    });
    b.bound_p1 = 8f64.sqrt();
    b.bound_p2 = (2.5f64 * 2.5 + 1.5 * 1.5).sqrt();
    b.quadrature = QuadratureSpec::GaussLegendre {
        nodes_per_axis: 16,
        endpoint_map: false,
    };
    let levy = LevyMeasureSpec::compound_poisson(3.0, JumpSizeLaw::Gaussian { mean: 0.4, std: 1.2 }, 0.7)
        .map_err(|e| e.to_string())?;
    let h = TruncationFunction::default();
    let times = [0.0, 1.0];
    let tr = limit_characteristics(&b, &levy, &h, &times).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for k in 0..2 {
        for k2 in 0..2 {
            let g = TestFn::truncation_product(h, 2, k, k2);
            let lhs = integrated_psi(&b, &g, &levy, 1.0).map_err(|e| e.to_string())?;
            let jumps = tr
                .jump_integral(1.0, &|y| {
                    let v = h.apply(y);
                    v[k] * v[k2]
                })
                .map_err(|e| e.to_string())?;
            let rhs = tr.second[1][k * 2 + k2] + jumps;
            worst = worst.max((lhs - rhs).abs() / rhs.abs().max(1e-300));
        }
    }
    let elapsed = t0.elapsed();
    check(
        worst <= 1e-6 && within(elapsed, 5.0),
        format!("max rel diff {worst:.2e} over 4 pairs, {elapsed:.2?}"),
    )
}

fn td_fixed_point() -> Outcome {
    let t0 = Instant::now();
    let s = scenario("td0_bench", &[("lambda", 0.1), ("sigma", 1.0)]);
    let part = Partition::equidistant(s.model.horizon, s.intervals).map_err(|e| e.to_string())?;
    let cfg = TDConfig::new(0.1, StepSchedule::default(), 20_000, part.clone());
    let v = ValueModel::td0_bench(s.model.horizon).map_err(|e| e.to_string())?;
    let star = td0_bench_fixed_point(0.1, 1.0);
    let mut thetas = Vec::new();
    for seed in 1..=5 {
        thetas.push(run_td0(&s.model, &s.policies[0], &v, &cfg, seed).map_err(|e| e.to_string())?.theta[0]);
    }
    let elapsed = t0.elapsed();
    let hits = thetas.iter().filter(|t| (**t - star).abs() < 0.01).count();
    let loss = |theta: f64| {
        martingale_loss(
            &v.clone().with_theta(vec![theta]).expect("one feature"),
            &s.model,
            &s.policies[0],
            &cfg,
            4000,
            part.points(),
            16,
            3,
        )
        .map_err(|e| e.to_string())
    };
    let (at, off) = (loss(star)?, loss(star + 1.0)?);
    let gap = (off.loss - at.loss) / (at.se.powi(2) + off.se.powi(2)).sqrt();
    let shown: Vec<String> = thetas.iter().map(|t| format!("{t:.4}")).collect();
    check(
        hits >= 4 && within(elapsed, 180.0) && gap > 10.0,
        format!(
            "θ̂ = [{}] vs {star:.7}, {hits}/5 within 0.01 in {elapsed:.2?}; loss {:.4} vs {:.4} ({gap:.1} se)",
            shown.join(", "),
            at.loss,
            off.loss
        ),
    )
}

fn poisson_extension() -> Outcome {
    let levy = LevyMeasureSpec::compound_poisson(2.0, JumpSizeLaw::Gaussian { mean: 0.0, std: 1.0 }, 0.0)
        .map_err(|e| e.to_string())?;
    let runs = 100_000u64;
    let (mut low, mut high) = (Vec::new(), Vec::new());
    let (mut us, mut zs, mut ts) = (Vec::new(), Vec::new(), Vec::new());
    let mut lag = (Vec::new(), Vec::new());
    for k in 0..runs {
        let jumps = sample_poisson_measure(&levy, 1.0, &mut stream(14, "jumps", k)).map_err(|e| e.to_string())?;
        let events = attach_uniform_marks_limit(&jumps, 1, &mut stream(14, "marks", k));
        let below = events.iter().filter(|e| e.u[0] <= 0.5).count();
        low.push(below as f64);
        high.push((events.len() - below) as f64);
        for w in events.windows(2) {
            lag.0.push(w[0].u[0]);
            lag.1.push(w[1].u[0]);
        }
        for e in &events {
            us.push(e.u[0]);
            zs.push(e.z[0]);
            ts.push(e.t);
        }
    }
    let mass = Summary::of(&low);
    let r = [
        ("u~z", correlation(&us, &zs)),
        ("u~t", correlation(&us, &ts)),
        ("u~next u", correlation(&lag.0, &lag.1)),
        ("N(u<=.5)~N(u>.5)", correlation(&low, &high)),
    ];
    let worst = r.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
    let shown: Vec<String> = r.iter().map(|(n, v)| format!("{n} {v:+.4}")).collect();
    check(
        (mass.mean - 1.0).abs() < 0.02 && worst < 0.01,
        format!("mass {:.4} ± {:.4}; {}", mass.mean, mass.se, shown.join(", ")),
    )
}

// ---- reproducibility through the binary

fn gridrl(args: &[&str], out: &Path, threads: usize) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_gridrl"))
        .args(args)
        .arg("--threads")
        .arg(threads.to_string())
        .arg("--out")
        .arg(out)
        .env_remove("GRIDRL_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&status.stderr)))
    }
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).expect("readable output dir") {
            let p = e.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn content(root: &Path, rel: &Path) -> String {
    let text = std::fs::read_to_string(root.join(rel)).expect("utf-8 output");
    if rel == Path::new("manifest.json") {
        text.lines().filter(|l| !l.contains("wall_clock_seconds")).collect::<Vec<_>>().join("\n")
    } else {
        text
    }
}

/// Largest absolute difference between numeric tokens; `None` if the
/// non-numeric structure differs.
fn max_numeric_diff(a: &str, b: &str) -> Option<f64> {
    let split = |s: &str| -> Vec<String> {
        s.split(|c: char| c == ',' || c == '\n' || c == ':' || c.is_whitespace() || c == '[' || c == ']')
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    };
    let (ta, tb) = (split(a), split(b));
    if ta.len() != tb.len() {
        return None;
    }
    let mut worst: f64 = 0.0;
    for (x, y) in ta.iter().zip(&tb) {
        match (x.parse::<f64>(), y.parse::<f64>()) {
            (Ok(u), Ok(v)) => worst = worst.max((u - v).abs()),
            _ if x == y => {}
            _ => return None,
        }
    }
    Some(worst)
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = tmp.path().join("small.toml");
    std::fs::write(
        &cfg,
        "[covariation]\nlimit_paths = 400\n[converge]\nmoment_paths = 200\n[td]\nloss_paths = 300\n",
    )
    .map_err(|e| e.to_string())?;
    let cfg = cfg.to_str().expect("utf-8 path");
    let runs: [(&str, Vec<&str>); 5] = [
        ("simulate", vec!["simulate", "--paths", "8", "--seed", "5"]),
        ("covariation", vec!["covariation", "--config", cfg, "--paths", "20", "--seed", "5"]),
        ("converge", vec!["converge", "--config", cfg, "--paths", "400", "--seed", "5"]),
        ("td0", vec!["td0", "--config", cfg, "--paths", "2000", "--seed", "5"]),
        ("selftest", vec!["selftest", "--seed", "5"]),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, args) in &runs {
        let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|s| tmp.path().join(format!("{name}_{s}"))).collect();
        gridrl(args, &dirs[0], 4)?;
        gridrl(args, &dirs[1], 4)?;
        gridrl(args, &dirs[2], 1)?;
        let listed = files(&dirs[0]);
        let same_files = listed == files(&dirs[1]) && listed == files(&dirs[2]);
        let identical = same_files && listed.iter().all(|f| content(&dirs[0], f) == content(&dirs[1], f));
        let thread_diff = if same_files {
            listed
                .iter()
                .map(|f| max_numeric_diff(&content(&dirs[0], f), &content(&dirs[2], f)))
                .try_fold(0.0f64, |acc, d| d.map(|d| acc.max(d)))
        } else {
            None
        };
        let pass = identical && thread_diff.is_some_and(|d| d <= 1e-12);
        ok &= pass;
        parts.push(format!(
            "{name} {} files {} rerun, threads 4 vs 1 max diff {}",
            listed.len(),
            if identical { "identical" } else { "DIFFERENT" },
            thread_diff.map_or("structure differs".into(), |d| format!("{d:.1e}"))
        ));
    }
    check(ok, parts.join("; "))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("exact integration identities", identities),
        ("covariation trichotomy", covariation_trichotomy),
        ("characteristics convergence diagnostics", diagnostics),
        ("white-noise Brownian characterization", brownian_characterization),
        ("limit vs exploratory law", law_equivalence),
        ("characteristics identity", characteristics_identity),
        ("TD(0) fixed point", td_fixed_point),
        ("Poisson extension", poisson_extension),
        ("CLI reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} {tag} {name}: {detail} [{:.1?}]", i + 1, t0.elapsed());
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
