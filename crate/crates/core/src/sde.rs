//! Euler–Maruyama solvers with jumps.
//!
//! * [`solve_classical`]: a feedback control, no randomization.
//! * [`solve_grid_sampling`]: the control `𝐡(s, X_{s−}, ξ_i)` on `(t_{i-1}, t_i]`.
//! * [`solve_limit_joint`]: the limit dynamics for `K` policies driven by one
//!   white noise; increments are jointly Gaussian with covariance `Δt·Σ`.
//! * [`solve_exploratory`]: drift `∫b ḣ dy`, diffusion `(∫a² ḣ dy)^{1/2}`.
//!
//! Coefficients are evaluated at step starts. Jump times are grid points; a
//! jump at `s_{k+1}` uses the state after the diffusion part of step `k`,
//! i.e. the left limit. Jumps with `|z| ≤ 𝔯` are compensated by
//! `−Δt ∫ γ ν(dz)` over their sampled part.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{JumpDiffusionModel, Partition, RandomizedPolicy};
use crate::noise::{effective_covariance, psd_factor, JumpEvent, Marks, NoisePanel, SimGrid};
use crate::quad::{gauss_legendre, QuadratureSpec, UnitCubeRule};
use crate::rng::{self, RandomizationDraw};

pub const OVERFLOW_GUARD: f64 = 1e12;
/// `∫a²ḣ dy` may dip this far below zero before it is an error.
pub const SQRT_SLACK: f64 = 1e-12;
/// GL nodes for `dy`-integrals over a relaxed density's support.
const DENSITY_NODES: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Sampling partition `Π`.
    pub partition: Partition,
    /// Simulation steps per `Π`-interval.
    pub refine: usize,
    /// Rule for `du`-integrals in the limit solver.
    pub quadrature: QuadratureSpec,
    pub overflow: f64,
}

impl SolverConfig {
    pub fn new(partition: Partition, refine: usize, d: usize) -> Self {
        SolverConfig {
            partition,
            refine,
            quadrature: QuadratureSpec::default_for_dim(d),
            overflow: OVERFLOW_GUARD,
        }
    }

    /// Equidistant `Π` with `n` intervals on the model horizon.
    pub fn equidistant(model: &JumpDiffusionModel, n: usize, refine: usize) -> Result<Self> {
        Ok(Self::new(
            Partition::equidistant(model.horizon, n)?,
            refine,
            model.dims.d,
        ))
    }

    pub fn validate(&self, model: &JumpDiffusionModel) -> Result<()> {
        if self.refine == 0 {
            return Err(Error::Config("refine must be >= 1".into()));
        }
        if (self.partition.horizon() - model.horizon).abs() > 1e-12 * model.horizon {
            return Err(Error::Config(format!(
                "partition ends at {}, model horizon is {}",
                self.partition.horizon(),
                model.horizon
            )));
        }
        if !(self.overflow > 0.0) {
            return Err(Error::Config("overflow guard must be positive".into()));
        }
        let eps = model.levy.cutoff();
        if model.has_jumps() && eps > 0.0 && model.levy.truncation < eps {
            return Err(Error::LevySpec(format!(
                "truncation radius {} lies inside the unsampled ball |z| <= {eps}",
                model.levy.truncation
            )));
        }
        self.quadrature.validate()
    }
}

/// Master seed and path index; each solver derives its named streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Streams {
    pub seed: u64,
    pub path: u64,
}

impl Streams {
    pub fn new(seed: u64, path: u64) -> Self {
        Streams { seed, path }
    }

    /// `ξ^Π` for this path, from the `("xi", path)` stream.
    pub fn randomization(&self, partition: &Partition, d: usize) -> RandomizationDraw {
        rng::sample_grid_randomization(partition, d, &mut rng::stream(self.seed, "xi", self.path))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMeta {
    pub seed: u64,
    pub path: u64,
    pub scheme: String,
    pub policy: String,
}

/// A càdlàg path on its simulation grid; `states[k]` is `X_{s_k}` after any
/// jump at `s_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub m: usize,
    /// `len × m`, row-major.
    pub states: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
    pub meta: PathMeta,
}

impl PathRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.m..(k + 1) * self.m]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// `X_t`, the value at the last grid time `≤ t`.
    pub fn state_at(&self, t: f64) -> &[f64] {
        let k = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        self.state(k)
    }

    /// Whether a jump happened at each grid time.
    pub fn jump_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.len()];
        for ev in &self.jumps {
            if let Ok(k) = self.times.binary_search_by(|s| s.total_cmp(&ev.t)) {
                flags[k] = true;
            }
        }
        flags
    }
}

/// Shared Euler engine. `control(k, s, x, y)` sets the action for step `k`;
/// `jump_control(event, x_minus, y)` the action seen by a jump.
#[allow(clippy::too_many_arguments)]
fn euler<C, J>(
    model: &JumpDiffusionModel,
    grid: &SimGrid,
    db: &[f64],
    events: &[JumpEvent],
    overflow: f64,
    mut control: C,
    mut jump_control: J,
) -> Result<Vec<f64>>
where
    C: FnMut(usize, f64, &[f64], &mut [f64]),
    J: FnMut(&JumpEvent, &[f64], &mut [f64]),
{
    let dims = model.dims;
    let (m, p) = (dims.m, dims.p);
    let mut states = Vec::with_capacity(grid.times().len() * m);
    let mut x = model.x0.clone();
    states.extend_from_slice(&x);
    let mut y = vec![0.0; dims.d];
    let mut b = vec![0.0; m];
    let mut a = vec![0.0; m * p];
    let mut g = vec![0.0; m];
    let mut xn = vec![0.0; m];
    let jumps = model.has_jumps();
    let (lo, hi) = (model.levy.cutoff(), model.levy.truncation);
    let compensate = jumps && hi > lo;
    let mut next_event = 0;

    for k in 0..grid.steps() {
        let s = grid.times()[k];
        let dt = grid.dt(k);
        control(k, s, &x, &mut y);
        model.drift_into(s, &x, &y, &mut b);
        model.diffusion_into(s, &x, &y, &mut a);
        let dbk = &db[k * p..(k + 1) * p];
        for i in 0..m {
            let noise: f64 = a[i * p..(i + 1) * p].iter().zip(dbk).map(|(a, w)| a * w).sum();
            xn[i] = x[i] + b[i] * dt + noise;
        }
        if compensate {
            for i in 0..m {
                let c = model.levy.integrate_shell(s, lo, hi, &|z| {
                    let mut out = vec![0.0; m];
                    model.jump_into(s, &x, &y, z, &mut out);
                    out[i]
                });
                xn[i] -= c * dt;
            }
        }
        let s1 = grid.times()[k + 1];
        while next_event < events.len() && events[next_event].t == s1 {
            let ev = &events[next_event];
            jump_control(ev, &xn, &mut y);
            model.jump_into(ev.t, &xn, &y, &ev.z, &mut g);
            xn.iter_mut().zip(&g).for_each(|(x, g)| *x += g);
            next_event += 1;
        }
        guard(&xn, k, s1, overflow)?;
        x.copy_from_slice(&xn);
        states.extend_from_slice(&x);
    }
    Ok(states)
}

fn guard(x: &[f64], step: usize, t: f64, overflow: f64) -> Result<()> {
    let norm = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if !(norm <= overflow) {
        return Err(Error::Divergence { step, t, norm });
    }
    Ok(())
}

fn check_policy(model: &JumpDiffusionModel, policy: &RandomizedPolicy) -> Result<()> {
    if policy.control_dim() != model.dims.d {
        return Err(Error::PolicySpec(format!(
            "policy `{}` acts in dimension {}, model control dimension is {}",
            policy.name,
            policy.control_dim(),
            model.dims.d
        )));
    }
    Ok(())
}

/// The classical SDE under a feedback control (a policy ignoring `u`).
pub fn solve_classical(
    model: &JumpDiffusionModel,
    policy: &RandomizedPolicy,
    config: &SolverConfig,
    streams: Streams,
) -> Result<PathRecord> {
    config.validate(model)?;
    check_policy(model, policy)?;
    if !policy.is_u_free() {
        return Err(Error::PolicySpec(format!(
            "classical solver needs a feedback control, `{}` depends on u",
            policy.name
        )));
    }
    let panel = NoisePanel::sample(
        &model.levy,
        &config.partition,
        config.refine,
        model.dims.p,
        Marks::None,
        streams.seed,
        streams.path,
    )?;
    let u0 = vec![0.0; model.dims.d];
    let states = euler(
        model,
        &panel.grid,
        &panel.db,
        &panel.events,
        config.overflow,
        |_, s, x, y| policy.execute_into(s, x, &u0, y),
        |ev, x, y| policy.execute_into(ev.t, x, &u0, y),
    )?;
    Ok(record(panel, model.dims.m, states, streams, "classical", policy))
}

/// The grid-sampling SDE: on `(t_{i-1}, t_i]` the control is
/// `𝐡(s, X_{s−}, ξ_i)`. With `draw = None` the randomization is sampled
/// from the `("xi", path)` stream.
pub fn solve_grid_sampling(
    model: &JumpDiffusionModel,
    policy: &RandomizedPolicy,
    draw: Option<&RandomizationDraw>,
    config: &SolverConfig,
    streams: Streams,
) -> Result<PathRecord> {
    config.validate(model)?;
    check_policy(model, policy)?;
    let owned;
    let draw = match draw {
        Some(d) => d,
        None => {
            owned = streams.randomization(&config.partition, model.dims.d);
            &owned
        }
    };
    if draw.dim() != model.dims.d {
        return Err(Error::Input(format!(
            "randomization has dimension {}, controls need {}",
            draw.dim(),
            model.dims.d
        )));
    }
    let panel = NoisePanel::sample(
        &model.levy,
        &config.partition,
        config.refine,
        model.dims.p,
        Marks::Grid(draw),
        streams.seed,
        streams.path,
    )?;
    if !draw.partition.is_refined_by(panel.grid.times()) {
        return Err(Error::Input(
            "randomization partition is not contained in the simulation grid".into(),
        ));
    }
    let grid = &panel.grid;
    let states = euler(
        model,
        grid,
        &panel.db,
        &panel.events,
        config.overflow,
        |k, s, x, y| {
            let xi = draw.lookup(grid.times()[k + 1]).expect("grid inside [0, T]");
            policy.execute_into(s, x, xi, y)
        },
        |ev, x, y| policy.execute_into(ev.t, x, &ev.u, y),
    )?;
    Ok(record(panel, model.dims.m, states, streams, "grid_sampling", policy))
}

fn record(
    panel: NoisePanel,
    m: usize,
    states: Vec<f64>,
    streams: Streams,
    scheme: &str,
    policy: &RandomizedPolicy,
) -> PathRecord {
    PathRecord {
        times: panel.grid.times().to_vec(),
        m,
        states,
        jumps: panel.events,
        meta: PathMeta {
            seed: streams.seed,
            path: streams.path,
            scheme: scheme.into(),
            policy: policy.name.clone(),
        },
    }
}

/// The limit SDE for `K` policies on one noise source: one white-noise
/// draw per step (stream `("wn", path)`) and one jump list with uniform
/// marks.
pub fn solve_limit_joint(
    model: &JumpDiffusionModel,
    policies: &[RandomizedPolicy],
    config: &SolverConfig,
    streams: Streams,
) -> Result<Vec<PathRecord>> {
    config.validate(model)?;
    if policies.is_empty() {
        return Err(Error::Input("need at least one policy".into()));
    }
    for h in policies {
        check_policy(model, h)?;
    }
    let dims = model.dims;
    let (m, d) = (dims.m, dims.d);
    let k_n = policies.len();
    let rule = config.quadrature.build(d)?;
    let panel = NoisePanel::sample(
        &model.levy,
        &config.partition,
        config.refine,
        dims.p,
        Marks::Limit { d },
        streams.seed,
        streams.path,
    )?;
    let grid = &panel.grid;
    let mut wn = rng::stream(streams.seed, "wn", streams.path);
    let mut xs: Vec<Vec<f64>> = vec![model.x0.clone(); k_n];
    let mut out: Vec<Vec<f64>> = xs.to_vec();
    let (lo, hi) = (model.levy.cutoff(), model.levy.truncation);
    let compensate = model.has_jumps() && hi > lo;
    let mut y = vec![0.0; d];
    let mut b = vec![0.0; m];
    let mut g = vec![0.0; m];
    let mut next_event = 0;

    for k in 0..grid.steps() {
        let s = grid.times()[k];
        let dt = grid.dt(k);
        let sigma = effective_covariance(policies, model, s, &xs, &rule)?;
        let l = psd_factor(&sigma)?;
        let z = DVector::from_iterator(k_n * m, (0..k_n * m).map(|_| wn.sample::<f64, _>(StandardNormal)));
        let inc = l * z * dt.sqrt();
        let mut next: Vec<Vec<f64>> = Vec::with_capacity(k_n);
        for (kk, h) in policies.iter().enumerate() {
            let x = &xs[kk];
            let mut drift = vec![0.0; m];
            for (u, w) in rule.iter() {
                h.execute_into(s, x, u, &mut y);
                model.drift_into(s, x, &y, &mut b);
                drift.iter_mut().zip(&b).for_each(|(a, b)| *a += w * b);
            }
            let mut xn: Vec<f64> = (0..m)
                .map(|i| x[i] + drift[i] * dt + inc[kk * m + i])
                .collect();
            if compensate {
                let c = limit_compensator(model, h, &rule, s, x);
                xn.iter_mut().zip(&c).for_each(|(x, c)| *x -= c * dt);
            }
            next.push(xn);
        }
        let s1 = grid.times()[k + 1];
        while next_event < panel.events.len() && panel.events[next_event].t == s1 {
            let ev = &panel.events[next_event];
            for (kk, h) in policies.iter().enumerate() {
                h.execute_into(ev.t, &next[kk], &ev.u, &mut y);
                model.jump_into(ev.t, &next[kk], &y, &ev.z, &mut g);
                next[kk].iter_mut().zip(&g).for_each(|(x, g)| *x += g);
            }
            next_event += 1;
        }
        for (kk, xn) in next.into_iter().enumerate() {
            guard(&xn, k, s1, config.overflow)?;
            out[kk].extend_from_slice(&xn);
            xs[kk] = xn;
        }
    }
    Ok(policies
        .iter()
        .zip(out)
        .map(|(h, states)| PathRecord {
            times: grid.times().to_vec(),
            m,
            states,
            jumps: panel.events.clone(),
            meta: PathMeta {
                seed: streams.seed,
                path: streams.path,
                scheme: "limit".into(),
                policy: h.name.clone(),
            },
        })
        .collect())
}

/// `∫∫_{ε<|z|≤𝔯} γ(s, x, 𝐡(s,x,u), z) ν_s(dz) du`, per component.
fn limit_compensator(
    model: &JumpDiffusionModel,
    h: &RandomizedPolicy,
    rule: &UnitCubeRule,
    s: f64,
    x: &[f64],
) -> Vec<f64> {
    let m = model.dims.m;
    let (lo, hi) = (model.levy.cutoff(), model.levy.truncation);
    let mut c = vec![0.0; m];
    let mut y = vec![0.0; model.dims.d];
    for (u, w) in rule.iter() {
        h.execute_into(s, x, u, &mut y);
        for (i, ci) in c.iter_mut().enumerate() {
            *ci += w * model.levy.integrate_shell(s, lo, hi, &|z| {
                let mut out = vec![0.0; m];
                model.jump_into(s, x, &y, z, &mut out);
                out[i]
            });
        }
    }
    c
}

/// The exploratory SDE in the scalar diffusion setting (`m = p = d = 1`,
/// no jumps). Brownian increments come from the `("bm", path)` stream, so
/// two policies solved with the same [`Streams`] share one Brownian motion.
pub fn solve_exploratory(
    model: &JumpDiffusionModel,
    policy: &RandomizedPolicy,
    config: &SolverConfig,
    streams: Streams,
) -> Result<PathRecord> {
    config.validate(model)?;
    let dims = model.dims;
    if (dims.m, dims.p, dims.d) != (1, 1, 1) || model.has_jumps() {
        return Err(Error::Input(
            "exploratory solver needs m = p = d = 1 and no jumps".into(),
        ));
    }
    let dens = policy
        .density()
        .ok_or_else(|| Error::PolicySpec(format!("policy `{}` has no relaxed density", policy.name)))?
        .clone();
    let panel = NoisePanel::sample(
        &model.levy,
        &config.partition,
        config.refine,
        1,
        Marks::None,
        streams.seed,
        streams.path,
    )?;
    let (nodes, weights) = gauss_legendre(DENSITY_NODES);
    let grid = &panel.grid;
    let mut x = model.x0[0];
    let mut states = vec![x];
    let (mut b, mut a) = ([0.0], [0.0]);
    for k in 0..grid.steps() {
        let s = grid.times()[k];
        let dt = grid.dt(k);
        let (lo, hi) = (dens.support)(s, &[x]);
        let (half, mid) = (0.5 * (hi - lo), 0.5 * (hi + lo));
        let (mut drift, mut var) = (0.0, 0.0);
        for (v, w) in nodes.iter().zip(&weights) {
            let yv = mid + half * v;
            let wq = half * w * (dens.pdf)(s, &[x], yv);
            model.drift_into(s, &[x], &[yv], &mut b);
            model.diffusion_into(s, &[x], &[yv], &mut a);
            drift += wq * b[0];
            var += wq * a[0] * a[0];
        }
        if var < -SQRT_SLACK || !var.is_finite() {
            return Err(Error::Numerical(format!(
                "exploratory variance {var:e} at t={s}"
            )));
        }
        x += drift * dt + var.max(0.0).sqrt() * panel.db[k];
        guard(&[x], k, grid.times()[k + 1], config.overflow)?;
        states.push(x);
    }
    Ok(record(panel, 1, states, streams, "exploratory", policy))
}

/// `Σ_k ΔX¹_k ΔX²_k` for scalar paths on the same grid.
pub fn realized_covariation(p1: &PathRecord, p2: &PathRecord) -> Result<f64> {
    if p1.m != 1 || p2.m != 1 {
        return Err(Error::Input(
            "scalar covariation needs m = 1; use realized_covariation_matrix".into(),
        ));
    }
    Ok(realized_covariation_matrix(p1, p2)?[0])
}

/// `Σ_k ΔX_k ΔYᵀ_k`, `m₁ × m₂` row-major.
pub fn realized_covariation_matrix(p1: &PathRecord, p2: &PathRecord) -> Result<Vec<f64>> {
    if p1.times != p2.times {
        return Err(Error::Input("paths live on different grids".into()));
    }
    let (m1, m2) = (p1.m, p2.m);
    let mut out = vec![0.0; m1 * m2];
    for k in 1..p1.len() {
        let (a0, a1) = (p1.state(k - 1), p1.state(k));
        let (b0, b1) = (p2.state(k - 1), p2.state(k));
        for i in 0..m1 {
            for j in 0..m2 {
                out[i * m2 + j] += (a1[i] - a0[i]) * (b1[j] - b0[j]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::Summary;
    use crate::model::{builtin, Dimensions, JumpSizeLaw, LevyMeasureSpec};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn scalar_model(mu: f64, sigma: f64) -> JumpDiffusionModel {
        JumpDiffusionModel::new(
            "const",
            Dimensions::scalar(),
            1.0,
            vec![0.5],
            Arc::new(move |_, _, _, out: &mut [f64]| out[0] = mu),
            Arc::new(move |_, _, _, out: &mut [f64]| out[0] = sigma),
        )
        .unwrap()
    }

    #[test]
    fn ode_case_is_exact() {
        let m = scalar_model(1.3, 0.0);
        let cfg = SolverConfig::equidistant(&m, 10, 3).unwrap();
        let pol = RandomizedPolicy::constant(vec![0.0]);
        let path = solve_classical(&m, &pol, &cfg, Streams::new(1, 0)).unwrap();
        assert!((path.terminal()[0] - 1.8).abs() < 1e-12);
        assert_eq!(path.state(0), &[0.5]);
    }

    #[test]
    fn counting_process() {
        let levy =
            LevyMeasureSpec::compound_poisson(3.0, JumpSizeLaw::Dirac { size: vec![1.0] }, 0.5)
                .unwrap();
        let m = scalar_model(0.0, 0.0)
            .with_jumps(Arc::new(|_, _, _, z, out: &mut [f64]| out[0] = z[0]), levy)
            .unwrap();
        let cfg = SolverConfig::equidistant(&m, 4, 2).unwrap();
        let pol = RandomizedPolicy::constant(vec![0.0]);
        for path in 0..20 {
            let p = solve_classical(&m, &pol, &cfg, Streams::new(9, path)).unwrap();
            assert_eq!(p.terminal()[0] - 0.5, p.jumps.len() as f64);
            assert_eq!(p.jump_flags().iter().filter(|f| **f).count(), p.jumps.len());
        }
    }

    #[test]
    fn u_free_policy_reduces_to_classical_bitwise() {
        let s = builtin("jump_linear", &BTreeMap::new()).unwrap();
        let pol = RandomizedPolicy::feedback(1, Arc::new(|_, x, out: &mut [f64]| out[0] = -x[0]));
        let cfg = SolverConfig::equidistant(&s.model, 16, 4).unwrap();
        for path in 0..5 {
            let st = Streams::new(3, path);
            let a = solve_classical(&s.model, &pol, &cfg, st).unwrap();
            let b = solve_grid_sampling(&s.model, &pol, None, &cfg, st).unwrap();
            assert_eq!(a.states, b.states);
        }
    }

    #[test]
    fn grid_sampling_diffusion_is_frozen_per_interval() {
        let s = builtin("two_controls", &BTreeMap::new()).unwrap();
        let cfg = SolverConfig::equidistant(&s.model, 4, 8).unwrap();
        let st = Streams::new(5, 0);
        let draw = st.randomization(&cfg.partition, 1);
        let path = solve_grid_sampling(&s.model, &s.policies[0], Some(&draw), &cfg, st).unwrap();
        let panel = NoisePanel::sample(&s.model.levy, &cfg.partition, 8, 1, Marks::Grid(&draw), 5, 0)
            .unwrap();
        for k in 0..panel.grid.steps() {
            let i = panel.grid.interval_of_step(k);
            let a = 1.0 + crate::model::normal::inv_norm_cdf(draw.xi(i)[0]);
            let dx = path.state(k + 1)[0] - path.state(k)[0];
            assert!((dx - a * panel.db[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn limit_drift_of_centred_executor_vanishes() {
        let m = JumpDiffusionModel::new(
            "drift_is_action",
            Dimensions::scalar(),
            1.0,
            vec![0.25],
            Arc::new(|_, _, y, out: &mut [f64]| out[0] = y[0]),
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
        )
        .unwrap();
        let pol = RandomizedPolicy::gaussian(0.0, 1.0).unwrap();
        let cfg = SolverConfig::equidistant(&m, 8, 2).unwrap();
        let p = solve_limit_joint(&m, &[pol], &cfg, Streams::new(1, 0)).unwrap();
        assert!((p[0].terminal()[0] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn exploratory_single_policy_variance() {
        let s = builtin("two_controls", &BTreeMap::new()).unwrap();
        let cfg = SolverConfig::equidistant(&s.model, 16, 1).unwrap();
        let xt: Vec<f64> = (0..20_000)
            .map(|i| {
                solve_exploratory(&s.model, &s.policies[0], &cfg, Streams::new(2, i))
                    .unwrap()
                    .terminal()[0]
            })
            .collect();
        let sm = Summary::of(&xt);
        // diffusion coefficient √(μ²+σ²) = √2
        assert!((sm.var - 2.0).abs() < 4.0 * 2.0 * (2.0 / 20_000f64).sqrt());
        assert!(sm.mean.abs() < 4.0 * sm.se);
    }

    #[test]
    fn covariation_of_deterministic_path_is_zero() {
        let m = scalar_model(1.0, 0.0);
        let cfg = SolverConfig::equidistant(&m, 1000, 1).unwrap();
        let pol = RandomizedPolicy::constant(vec![0.0]);
        let a = solve_classical(&m, &pol, &cfg, Streams::new(1, 0)).unwrap();
        let b = solve_classical(&scalar_model(0.0, 1.0), &pol, &cfg, Streams::new(1, 1)).unwrap();
        assert!(realized_covariation(&a, &b).unwrap().abs() < 0.01);
        let c = solve_classical(&m, &pol, &SolverConfig::equidistant(&m, 10, 1).unwrap(), Streams::new(1, 0))
            .unwrap();
        assert!(realized_covariation(&a, &c).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let m = JumpDiffusionModel::new(
            "explode",
            Dimensions::scalar(),
            1.0,
            vec![1.0],
            Arc::new(|_, x, _, out: &mut [f64]| out[0] = 1e3 * x[0]),
            Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0),
        )
        .unwrap();
        let cfg = SolverConfig::equidistant(&m, 10, 1).unwrap();
        let err = solve_classical(&m, &RandomizedPolicy::constant(vec![0.0]), &cfg, Streams::new(0, 0))
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }
}
