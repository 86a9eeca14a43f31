//! Entropy-regularized policy evaluation with a linear value head and the
//! partition-discretized TD(0) update.
//!
//! The cost of a randomized policy is `E[g(X_T) + λ∫_t^T∫ ḣ log ḣ dy ds]`.
//! Values are parametrized as `J_θ(t, x) = g(x) + Σ_ℓ θ_ℓ (T − t) ψ_ℓ(t, x)`,
//! so `J_θ(T, ·) = g` for every `θ`. Along a grid-sampling episode
//! `J_θ(t, X_t) + λ∫_0^t∫ ḣ log ḣ dy ds` should be a martingale; TD(0) pushes
//! `θ` until the one-step residuals are orthogonal to the features.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::par_map_paths;
use crate::model::{JumpDiffusionModel, Partition, RandomizedPolicy};
use crate::rng::RandomizationDraw;
use crate::sde::{solve_grid_sampling, solve_limit_joint, PathRecord, SolverConfig, Streams};

pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type BasisFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Default `|θ|` beyond which learning is declared divergent.
pub const THETA_GUARD: f64 = 1e8;

/// `J_θ(t, x) = g(x) + Σ_ℓ θ_ℓ φ_ℓ(t, x)` with `φ_ℓ = (T − t) ψ_ℓ`.
#[derive(Clone)]
pub struct ValueModel {
    pub horizon: f64,
    terminal: TerminalFn,
    basis: Vec<BasisFn>,
    pub theta: Vec<f64>,
}

impl std::fmt::Debug for ValueModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ValueModel")
            .field("horizon", &self.horizon)
            .field("basis_len", &self.basis.len())
            .field("theta", &self.theta)
            .finish_non_exhaustive()
    }
}

impl ValueModel {
    /// `basis` holds the raw `ψ_ℓ`; the `(T − t)` factor is applied here.
    pub fn new(horizon: f64, terminal: TerminalFn, basis: Vec<BasisFn>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Input(format!("value horizon must be positive, got {horizon}")));
        }
        if basis.is_empty() {
            return Err(Error::Input("value model needs at least one basis function".into()));
        }
        let theta = vec![0.0; basis.len()];
        Ok(ValueModel {
            horizon,
            terminal,
            basis,
            theta,
        })
    }

    /// `g(x) = x_1` with the single feature `T − t`.
    pub fn td0_bench(horizon: f64) -> Result<Self> {
        ValueModel::new(horizon, Arc::new(|x| x[0]), vec![Arc::new(|_, _| 1.0)])
    }

    pub fn with_theta(mut self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.basis.len() {
            return Err(Error::Input(format!(
                "θ has {} entries, basis has {}",
                theta.len(),
                self.basis.len()
            )));
        }
        self.theta = theta;
        Ok(self)
    }

    /// Multiplies every basis function by `c`.
    pub fn scaled_basis(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.basis = self
            .basis
            .iter()
            .map(|b| {
                let b = b.clone();
                Arc::new(move |t: f64, x: &[f64]| c * b(t, x)) as BasisFn
            })
            .collect();
        out
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    /// `∇_θ J_θ(t, x)`.
    pub fn features(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let tau = self.horizon - t;
        self.basis.iter().map(|b| tau * b(t, x)).collect()
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        let phi = self.features(t, x);
        self.terminal(x) + phi.iter().zip(&self.theta).map(|(p, th)| p * th).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { alpha: f64 },
    /// `α_k = α₀ / (1 + k/k₀)`.
    Decaying { alpha0: f64, k0: f64 },
}

impl StepSchedule {
    pub fn alpha(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Constant { alpha } => alpha,
            StepSchedule::Decaying { alpha0, k0 } => alpha0 / (1.0 + k as f64 / k0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { alpha } => alpha >= 0.0 && alpha.is_finite(),
            StepSchedule::Decaying { alpha0, k0 } => {
                alpha0 > 0.0 && alpha0.is_finite() && k0 > 0.0 && k0.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid step schedule {self:?}")))
        }
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Decaying {
            alpha0: 0.03,
            k0: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TDConfig {
    pub lambda: f64,
    pub schedule: StepSchedule,
    pub episodes: usize,
    pub partition: Partition,
    pub refine: usize,
    pub guard: f64,
}

impl TDConfig {
    pub fn new(lambda: f64, schedule: StepSchedule, episodes: usize, partition: Partition) -> Self {
        TDConfig {
            lambda,
            schedule,
            episodes,
            partition,
            refine: 1,
            guard: THETA_GUARD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("temperature must be >= 0, got {}", self.lambda)));
        }
        if self.episodes == 0 || self.refine == 0 {
            return Err(Error::Config("episodes and refinement must be positive".into()));
        }
        if !(self.guard > 0.0) {
            return Err(Error::Config("divergence guard must be positive".into()));
        }
        self.schedule.validate()
    }

    fn solver(&self, d: usize) -> SolverConfig {
        let mut cfg = SolverConfig::new(self.partition.clone(), self.refine, d);
        cfg.overflow = cfg.overflow.max(self.guard);
        cfg
    }
}

/// `α Σ_i ∇J(t_{i−1}, X_{t_{i−1}}) [J(t_i, X_{t_i}) − J(t_{i−1}, X_{t_{i−1}})
/// + λ Δt_i log ḣ(t_{i−1}, X_{t_{i−1}}, 𝐡(t_{i−1}, X_{t_{i−1}}, ξ_i))]`.
pub fn td0_episode_update(
    value: &ValueModel,
    path: &PathRecord,
    draw: &RandomizationDraw,
    policy: &RandomizedPolicy,
    lambda: f64,
    alpha: f64,
) -> Result<Vec<f64>> {
    let part = &draw.partition;
    if (part.horizon() - value.horizon).abs() > 1e-12 * value.horizon
        || path.times.last().copied() != Some(part.horizon())
    {
        return Err(Error::Input("path, randomization and value model disagree on T".into()));
    }
    let mut inc = vec![0.0; value.len()];
    if alpha == 0.0 {
        return Ok(inc);
    }
    for i in 1..=part.n() {
        let (a, b) = part.interval(i);
        let (xa, xb) = (path.state_at(a), path.state_at(b));
        let mut residual = value.value(b, xb) - value.value(a, xa);
        if lambda != 0.0 {
            let y = policy.execute(a, xa, draw.xi(i))[0];
            let dens = policy.density_at(a, xa, y)?;
            if !(dens > 0.0 && dens.is_finite()) {
                return Err(Error::LogDensity {
                    interval: i,
                    action: y,
                });
            }
            residual += lambda * (b - a) * dens.ln();
        }
        for (acc, f) in inc.iter_mut().zip(value.features(a, xa)) {
            *acc += alpha * f * residual;
        }
    }
    Ok(inc)
}

#[derive(Debug, Clone, Serialize)]
pub struct TdRow {
    pub episode: usize,
    pub theta: Vec<f64>,
    pub increment_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TdRun {
    pub theta: Vec<f64>,
    pub trajectory: Vec<TdRow>,
}

impl TdRun {
    /// Average of the last `n` iterates.
    pub fn tail_average(&self, n: usize) -> Vec<f64> {
        let start = self.trajectory.len().saturating_sub(n.max(1));
        let tail = &self.trajectory[start..];
        let mut avg = vec![0.0; self.theta.len()];
        for row in tail {
            avg.iter_mut().zip(&row.theta).for_each(|(a, t)| *a += t);
        }
        avg.iter_mut().for_each(|a| *a /= tail.len() as f64);
        avg
    }
}

/// Sequential offline TD(0): episode `k` is a fresh grid-sampling path from
/// `Streams::new(seed, k)`.
pub fn run_td0(
    model: &JumpDiffusionModel,
    policy: &RandomizedPolicy,
    value: &ValueModel,
    config: &TDConfig,
    seed: u64,
) -> Result<TdRun> {
    config.validate()?;
    let solver = config.solver(model.dims.d);
    solver.validate(model)?;
    let mut value = value.clone();
    let mut trajectory = Vec::with_capacity(config.episodes);
    for k in 0..config.episodes {
        let streams = Streams::new(seed, k as u64);
        let draw = streams.randomization(&config.partition, model.dims.d);
        let path = solve_grid_sampling(model, policy, Some(&draw), &solver, streams)?;
        let inc = td0_episode_update(
            &value,
            &path,
            &draw,
            policy,
            config.lambda,
            config.schedule.alpha(k),
        )?;
        value.theta.iter_mut().zip(&inc).for_each(|(t, d)| *t += d);
        let norm = value.theta.iter().map(|t| t * t).sum::<f64>().sqrt();
        if !(norm <= config.guard) {
            return Err(Error::LearningDivergence { episode: k, norm });
        }
        trajectory.push(TdRow {
            episode: k,
            theta: value.theta.clone(),
            increment_norm: inc.iter().map(|d| d * d).sum::<f64>().sqrt(),
        });
    }
    Ok(TdRun {
        theta: value.theta,
        trajectory,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleLoss {
    pub loss: f64,
    pub se: f64,
    pub buckets: usize,
    pub widened: bool,
}

/// `Σ_j E[(E[M_{t_{j+1}} − M_{t_j} | X_{t_j}])²]` with
/// `M_t = J_θ(t, X_t) − λ∫_0^t H(s, X_s) ds` (`H` the policy entropy),
/// estimated on limit-SDE paths. Conditional means come from `buckets`
/// equal-count groups of paths sorted by `X_{t_j}`; each squared group mean
/// is debiased by its own sampling variance.
pub fn martingale_loss(
    value: &ValueModel,
    model: &JumpDiffusionModel,
    policy: &RandomizedPolicy,
    config: &TDConfig,
    n_paths: usize,
    times: &[f64],
    buckets: usize,
    seed: u64,
) -> Result<MartingaleLoss> {
    config.validate()?;
    if n_paths < 4 || buckets == 0 {
        return Err(Error::Input("martingale loss needs >= 4 paths and >= 1 bucket".into()));
    }
    if times.len() < 2 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input("martingale loss needs an increasing time grid".into()));
    }
    let solver = config.solver(model.dims.d);
    let lambda = config.lambda;
    // M at each requested time, per path
    let martingale = par_map_paths(n_paths, |path| {
        let rec = solve_limit_joint(model, std::slice::from_ref(policy), &solver, Streams::new(seed, path))?
            .pop()
            .expect("one policy in, one path out");
        let mut out = Vec::with_capacity(times.len());
        let mut entropy = 0.0;
        let mut k = 0;
        for &t in times {
            if lambda != 0.0 {
                while k + 1 < rec.len() && rec.times[k + 1] <= t {
                    let s = rec.times[k];
                    entropy += (rec.times[k + 1] - s) * policy.entropy(s, rec.state(k))?;
                    k += 1;
                }
            }
            let x = rec.state_at(t);
            out.push((x[0], value.value(t, x) - lambda * entropy));
        }
        Ok(out)
    })?;

    let mut b = buckets;
    let widened = n_paths / b < 2;
    if widened {
        b = (n_paths / 2).max(1);
        log::warn!("martingale loss: {n_paths} paths cannot fill {buckets} buckets; using {b}");
    }
    let (mut loss, mut var) = (0.0, 0.0);
    let mut order: Vec<usize> = (0..n_paths).collect();
    for j in 0..times.len() - 1 {
        order.sort_by(|&p, &q| martingale[p][j].0.total_cmp(&martingale[q][j].0).then(p.cmp(&q)));
        for bi in 0..b {
            let group = &order[bi * n_paths / b..(bi + 1) * n_paths / b];
            let nb = group.len() as f64;
            let incs: Vec<f64> = group.iter().map(|&p| martingale[p][j + 1].1 - martingale[p][j].1).collect();
            let mean = incs.iter().sum::<f64>() / nb;
            let s2 = incs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nb - 1.0);
            let w = nb / n_paths as f64;
            loss += w * (mean * mean - s2 / nb);
            var += w * w * (4.0 * mean * mean * s2 / nb + 2.0 * s2 * s2 / (nb * (nb - 1.0)));
        }
    }
    Ok(MartingaleLoss {
        loss,
        se: var.sqrt(),
        buckets: b,
        widened,
    })
}

/// `θ* = −λ H` for the linear benchmark, `H` the entropy of `N(μ, σ²)`.
pub fn td0_bench_fixed_point(lambda: f64, sigma: f64) -> f64 {
    -lambda * crate::model::policy::gaussian_entropy(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::Summary;
    use crate::model::{builtin, Dimensions};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn bench(lambda: f64, sigma: f64, horizon: f64) -> (JumpDiffusionModel, RandomizedPolicy) {
        let mut o = BTreeMap::new();
        o.insert("lambda".to_string(), lambda);
        o.insert("sigma".to_string(), sigma);
        o.insert("horizon".to_string(), horizon);
        let mut s = builtin("td0_bench", &o).unwrap();
        (s.model, s.policies.remove(0))
    }

    #[test]
    fn fixed_point_values() {
        // ½ ln(2πe σ²) written out independently
        let h1 = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((td0_bench_fixed_point(0.1, 1.0) + 0.1 * h1).abs() < 1e-15);
        assert!((td0_bench_fixed_point(0.1, 1.0) + 0.141_893_9).abs() < 1e-7);
        assert!((td0_bench_fixed_point(0.1, 2.0) + 0.211_208_6).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn terminal_pin(theta in -50.0f64..50.0, x in -10.0f64..10.0) {
            let v = ValueModel::td0_bench(2.5).unwrap().with_theta(vec![theta]).unwrap();
            prop_assert_eq!(v.value(2.5, &[x]), x);
            prop_assert_eq!(v.features(2.5, &[x]), vec![0.0]);
        }

        #[test]
        fn schedule_is_positive_and_decreasing(k in 0usize..1_000_000) {
            let s = StepSchedule::default();
            prop_assert!(s.alpha(k) > 0.0 && s.alpha(k + 1) < s.alpha(k));
        }
    }

    #[test]
    fn zero_step_gives_zero_increment() {
        let (model, pol) = bench(0.1, 1.0, 1.0);
        let part = Partition::equidistant(1.0, 8).unwrap();
        let s = Streams::new(3, 0);
        let draw = s.randomization(&part, 1);
        let path = solve_grid_sampling(&model, &pol, Some(&draw), &SolverConfig::new(part, 1, 1), s).unwrap();
        let v = ValueModel::td0_bench(1.0).unwrap();
        assert_eq!(td0_episode_update(&v, &path, &draw, &pol, 0.1, 0.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn single_interval_hand_expansion() {
        let model = JumpDiffusionModel::new(
            "still",
            Dimensions::scalar(),
            1.0,
            vec![0.3],
            Arc::new(|_, _, _, o: &mut [f64]| o[0] = 0.0),
            Arc::new(|_, _, _, o: &mut [f64]| o[0] = 0.0),
        )
        .unwrap();
        let pol = RandomizedPolicy::gaussian(0.0, 1.0).unwrap();
        let part = Partition::equidistant(1.0, 1).unwrap();
        let draw = RandomizationDraw::from_values(part.clone(), 1, vec![0.8]).unwrap();
        let path = solve_grid_sampling(&model, &pol, Some(&draw), &SolverConfig::new(part, 1, 1), Streams::new(1, 0))
            .unwrap();
        let v = ValueModel::td0_bench(1.0).unwrap().with_theta(vec![0.7]).unwrap();
        let y = crate::model::normal::inv_norm_cdf(0.8);
        let logh = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * y * y;
        // ∇J = T − 0 = 1; ΔJ = (0.3 + 0) − (0.3 + 0.7)
        let expect = 0.25 * 1.0 * (-0.7 + 0.2 * logh);
        let got = td0_episode_update(&v, &path, &draw, &pol, 0.2, 0.25).unwrap()[0];
        assert!((got - expect).abs() < 1e-14, "{got} vs {expect}");
    }

    #[test]
    fn zero_density_is_reported() {
        let (model, _) = bench(0.1, 1.0, 1.0);
        let pol = RandomizedPolicy::gaussian(0.0, 1.0)
            .unwrap()
            .with_density(crate::model::RelaxedDensity {
                pdf: Arc::new(|_, _, _| 0.0),
                support: Arc::new(|_, _| (-1.0, 1.0)),
            });
        let part = Partition::equidistant(1.0, 4).unwrap();
        let s = Streams::new(1, 0);
        let draw = s.randomization(&part, 1);
        let path = solve_grid_sampling(&model, &pol, Some(&draw), &SolverConfig::new(part, 1, 1), s).unwrap();
        let v = ValueModel::td0_bench(1.0).unwrap();
        let err = td0_episode_update(&v, &path, &draw, &pol, 0.1, 0.1).unwrap_err();
        assert!(matches!(err, Error::LogDensity { interval: 1, .. }));
    }

    #[test]
    fn zero_temperature_increment_has_mean_zero() {
        let (model, pol) = bench(0.0, 1.0, 1.0);
        let part = Partition::equidistant(1.0, 16).unwrap();
        let solver = SolverConfig::new(part.clone(), 1, 1);
        let v = ValueModel::td0_bench(1.0).unwrap();
        let incs: Vec<f64> = par_map_paths(10_000, |k| {
            let s = Streams::new(11, k);
            let draw = s.randomization(&part, 1);
            let path = solve_grid_sampling(&model, &pol, Some(&draw), &solver, s)?;
            Ok(td0_episode_update(&v, &path, &draw, &pol, 0.0, 1.0)?[0])
        })
        .unwrap();
        let s = Summary::of(&incs);
        assert!(s.mean.abs() < 4.0 * s.se, "{} ± {}", s.mean, s.se);
    }

    #[test]
    fn expected_increment_vanishes_at_fixed_point() {
        let (model, pol) = bench(0.1, 1.0, 1.0);
        let part = Partition::equidistant(1.0, 8).unwrap();
        let solver = SolverConfig::new(part.clone(), 1, 1);
        let run = |theta: f64| {
            let v = ValueModel::td0_bench(1.0).unwrap().with_theta(vec![theta]).unwrap();
            let incs: Vec<f64> = par_map_paths(20_000, |k| {
                let s = Streams::new(5, k);
                let draw = s.randomization(&part, 1);
                let path = solve_grid_sampling(&model, &pol, Some(&draw), &solver, s)?;
                Ok(td0_episode_update(&v, &path, &draw, &pol, 0.1, 1.0)?[0])
            })
            .unwrap();
            Summary::of(&incs)
        };
        let at = run(td0_bench_fixed_point(0.1, 1.0));
        assert!(at.mean.abs() < 4.0 * at.se, "{at:?}");
        let off = run(td0_bench_fixed_point(0.1, 1.0) + 1.0);
        assert!(off.mean < -10.0 * off.se, "{off:?}");
    }

    #[test]
    fn scaled_basis_keeps_predictions() {
        let (model, pol) = bench(0.1, 1.0, 1.0);
        let part = Partition::equidistant(1.0, 8).unwrap();
        let v = ValueModel::td0_bench(1.0).unwrap();
        let cfg = TDConfig::new(0.1, StepSchedule::Constant { alpha: 0.02 }, 300, part.clone());
        let base = run_td0(&model, &pol, &v, &cfg, 9).unwrap();
        let c = 3.0;
        let cfg_c = TDConfig::new(0.1, StepSchedule::Constant { alpha: 0.02 / (c * c) }, 300, part);
        let scaled = run_td0(&model, &pol, &v.scaled_basis(c), &cfg_c, 9).unwrap();
        let pred = |th: f64, cc: f64| th * cc * 0.6;
        assert!((pred(base.theta[0], 1.0) - pred(scaled.theta[0], c)).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_guarded() {
        let (model, pol) = bench(0.1, 1.0, 1.0);
        let part = Partition::equidistant(1.0, 8).unwrap();
        let cfg = TDConfig::new(0.1, StepSchedule::Decaying { alpha0: 1e3, k0: 5.0 }, 200, part);
        let err = run_td0(&model, &pol, &ValueModel::td0_bench(1.0).unwrap(), &cfg, 1).unwrap_err();
        assert!(matches!(err, Error::LearningDivergence { .. }));
    }

    #[test]
    fn run_is_deterministic() {
        let (model, pol) = bench(0.1, 1.0, 1.0);
        let part = Partition::equidistant(1.0, 8).unwrap();
        let cfg = TDConfig::new(0.1, StepSchedule::default(), 50, part);
        let v = ValueModel::td0_bench(1.0).unwrap();
        let a = run_td0(&model, &pol, &v, &cfg, 4).unwrap();
        let b = run_td0(&model, &pol, &v, &cfg, 4).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.trajectory.len(), 50);
    }

    #[test]
    fn degenerate_model_has_zero_loss() {
        let model = JumpDiffusionModel::new(
            "still",
            Dimensions::scalar(),
            1.0,
            vec![0.5],
            Arc::new(|_, _, _, o: &mut [f64]| o[0] = 0.0),
            Arc::new(|_, _, _, o: &mut [f64]| o[0] = 0.0),
        )
        .unwrap();
        let pol = RandomizedPolicy::gaussian(0.0, 1.0).unwrap();
        let part = Partition::equidistant(1.0, 8).unwrap();
        let cfg = TDConfig::new(0.0, StepSchedule::default(), 1, part);
        let times: Vec<f64> = (0..=8).map(|i| i as f64 / 8.0).collect();
        let v = ValueModel::new(1.0, Arc::new(|x| x[0]), vec![Arc::new(|_, _| 0.0)]).unwrap();
        let l = martingale_loss(&v, &model, &pol, &cfg, 64, &times, 16, 2).unwrap();
        assert_eq!(l.loss, 0.0);
        assert!(!l.widened);
        let w = martingale_loss(&v, &model, &pol, &cfg, 8, &times, 16, 2).unwrap();
        assert!(w.widened && w.buckets == 4);
    }
}
