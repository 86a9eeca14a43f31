//! Driving noises: Brownian increments, the Poisson random measure and its
//! extension by uniform marks, and the covariance of the white-noise
//! martingale measures seen through a family of policies.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{JumpDiffusionModel, LevyMeasureSpec, Partition, RandomizedPolicy};
use crate::quad::{gauss_legendre_interval, UnitCubeRule};
use crate::rng::{self, RandomizationDraw};

/// Eigenvalues below `-PSD_GATE · trace` are treated as a genuine failure.
pub const PSD_GATE: f64 = 1e-8;

/// Simulation grid: a refinement of `Π` with extra points (jump times).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimGrid {
    times: Vec<f64>,
    /// 1-based `Π`-interval containing step `k`, i.e. `(s_k, s_{k+1}]`.
    interval: Vec<usize>,
}

impl SimGrid {
    /// Each `Π`-interval is split into `refine` equal steps; `extra` times in
    /// `(0, T]` are merged in.
    pub fn new(partition: &Partition, refine: usize, extra: &[f64]) -> Result<Self> {
        if refine == 0 {
            return Err(Error::Input("grid refinement must be >= 1".into()));
        }
        let horizon = partition.horizon();
        let mut base = Vec::with_capacity(partition.n() * refine + 1);
        for i in 1..=partition.n() {
            let (a, b) = partition.interval(i);
            for j in 0..refine {
                base.push(a + (b - a) * j as f64 / refine as f64);
            }
        }
        base.push(horizon);

        let mut extra: Vec<f64> = extra.to_vec();
        if let Some(t) = extra.iter().find(|t| !(**t > 0.0 && **t <= horizon)) {
            return Err(Error::Input(format!("grid point {t} outside (0, {horizon}]")));
        }
        extra.sort_by(|a, b| a.total_cmp(b));
        let mut times = Vec::with_capacity(base.len() + extra.len());
        let (mut i, mut j) = (0, 0);
        while i < base.len() || j < extra.len() {
            let next = if j == extra.len() || (i < base.len() && base[i] <= extra[j]) {
                i += 1;
                base[i - 1]
            } else {
                j += 1;
                extra[j - 1]
            };
            if times.last() != Some(&next) {
                times.push(next);
            }
        }
        let interval = times[1..]
            .iter()
            .map(|&t| partition.interval_index(t).expect("grid inside [0, T]"))
            .collect();
        Ok(SimGrid { times, interval })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    #[inline]
    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    #[inline]
    pub fn interval_of_step(&self, k: usize) -> usize {
        self.interval[k]
    }

    /// Step `k` with `s_{k+1} = t`, if `t` is a grid point.
    pub fn step_ending_at(&self, t: f64) -> Option<usize> {
        self.times[1..]
            .binary_search_by(|s| s.total_cmp(&t))
            .ok()
    }
}

/// A sampled atom `(t, ΔL_t)` of the Poisson random measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub t: f64,
    pub z: Vec<f64>,
}

/// An atom `(t, z, u)` of the extended Poisson measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub t: f64,
    pub z: Vec<f64>,
    /// Empty for paths without a randomization.
    pub u: Vec<f64>,
}

/// `p` independent `N(0, Δt)` increments per step, step-major.
pub fn sample_brownian<R: Rng + ?Sized>(grid: &SimGrid, p: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.steps() * p);
    for k in 0..grid.steps() {
        let sd = grid.dt(k).sqrt();
        for _ in 0..p {
            out.push(sd * rng.sample::<f64, _>(StandardNormal));
        }
    }
    out
}

/// Jumps on `(0, T]` whose marks lie above the sampling cutoff, by thinning
/// a homogeneous clock at the rate bound.
pub fn sample_poisson_measure<R: Rng + ?Sized>(
    levy: &LevyMeasureSpec,
    horizon: f64,
    rng: &mut R,
) -> Result<Vec<Jump>> {
    levy.check_integrability(horizon)?;
    sample_poisson_window(levy, 0.0, horizon, rng)
}

/// Jumps on `(a, b]`; the rate is not re-validated.
pub fn sample_poisson_window<R: Rng + ?Sized>(
    levy: &LevyMeasureSpec,
    a: f64,
    b: f64,
    rng: &mut R,
) -> Result<Vec<Jump>> {
    let bound = levy.rate_bound();
    let mut jumps = Vec::new();
    if bound == 0.0 {
        return Ok(jumps);
    }
    let clock = Exp::new(bound).map_err(|e| Error::LevySpec(e.to_string()))?;
    let mut t = a;
    loop {
        t += rng.sample(clock);
        if t > b {
            break;
        }
        let accept = rng.random::<f64>() * bound < levy.sampling_rate(t);
        if accept {
            jumps.push(Jump {
                t,
                z: levy.sample_mark(rng),
            });
        }
    }
    Ok(jumps)
}

/// Independent uniform marks, realizing `M_J` with intensity `ν_t(dz)dudt`.
pub fn attach_uniform_marks_limit<R: Rng + ?Sized>(
    jumps: &[Jump],
    d: usize,
    rng: &mut R,
) -> Vec<JumpEvent> {
    jumps
        .iter()
        .map(|j| JumpEvent {
            t: j.t,
            z: j.z.clone(),
            u: (0..d).map(|_| rng.random()).collect(),
        })
        .collect()
}

/// Marks each jump with `ξ^Π_t`, realizing `M_J^Π`.
pub fn attach_grid_marks(jumps: &[Jump], draw: &RandomizationDraw) -> Result<Vec<JumpEvent>> {
    let horizon = draw.partition.horizon();
    jumps
        .iter()
        .map(|j| {
            if !(j.t > 0.0 && j.t <= horizon) {
                return Err(Error::Input(format!(
                    "jump time {} outside (0, {horizon}]",
                    j.t
                )));
            }
            Ok(JumpEvent {
                t: j.t,
                z: j.z.clone(),
                u: draw.lookup(j.t).expect("checked range").to_vec(),
            })
        })
        .collect()
}

/// How jump events receive their uniform marks.
#[derive(Debug, Clone, Copy)]
pub enum Marks<'a> {
    None,
    Grid(&'a RandomizationDraw),
    Limit { d: usize },
}

/// Everything random that drives one path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisePanel {
    pub grid: SimGrid,
    pub p: usize,
    /// `steps × p`, step-major.
    pub db: Vec<f64>,
    pub events: Vec<JumpEvent>,
}

impl NoisePanel {
    /// Streams: `("jumps", path)`, `("bm", path)` and, for limit marks,
    /// `("marks", path)`.
    pub fn sample(
        levy: &LevyMeasureSpec,
        partition: &Partition,
        refine: usize,
        p: usize,
        marks: Marks<'_>,
        seed: u64,
        path: u64,
    ) -> Result<Self> {
        let horizon = partition.horizon();
        let jumps = sample_poisson_measure(levy, horizon, &mut rng::stream(seed, "jumps", path))?;
        let times: Vec<f64> = jumps.iter().map(|j| j.t).collect();
        let grid = SimGrid::new(partition, refine, &times)?;
        let db = sample_brownian(&grid, p, &mut rng::stream(seed, "bm", path));
        let events = match marks {
            Marks::None => jumps
                .into_iter()
                .map(|j| JumpEvent {
                    t: j.t,
                    z: j.z,
                    u: Vec::new(),
                })
                .collect(),
            Marks::Grid(draw) => attach_grid_marks(&jumps, draw)?,
            Marks::Limit { d } => {
                attach_uniform_marks_limit(&jumps, d, &mut rng::stream(seed, "marks", path))
            }
        };
        Ok(NoisePanel {
            grid,
            p,
            db,
            events,
        })
    }

    #[inline]
    pub fn db(&self, k: usize) -> &[f64] {
        &self.db[k * self.p..(k + 1) * self.p]
    }

    /// `B^{(l)}_T`.
    pub fn brownian_terminal(&self, l: usize) -> f64 {
        (0..self.grid.steps()).map(|k| self.db(k)[l]).sum()
    }
}

/// Bias bound for dropping the unsampled small jumps when `|γ| ≤ |z|`:
/// `∫₀ᵀ∫_{|z|≤ε}|z|²ν_t(dz)dt`.
pub fn unsampled_jump_variance(levy: &LevyMeasureSpec, horizon: f64) -> f64 {
    horizon * levy.unsampled_second_moment()
}

/// `Σ_{(k,i),(j,i')} = Σ_l ∫ a_{il}(t,x_k,h_k(u)) a_{i'l}(t,x_j,h_j(u)) du`,
/// a `Km × Km` matrix, symmetrized.
pub fn effective_covariance(
    policies: &[RandomizedPolicy],
    model: &JumpDiffusionModel,
    t: f64,
    states: &[Vec<f64>],
    rule: &UnitCubeRule,
) -> Result<DMatrix<f64>> {
    let k_n = policies.len();
    if k_n == 0 || states.len() != k_n {
        return Err(Error::Input(format!(
            "{} policies but {} states",
            k_n,
            states.len()
        )));
    }
    let (m, p, d) = (model.dims.m, model.dims.p, model.dims.d);
    if rule.dim() != d || policies.iter().any(|h| h.control_dim() != d) {
        return Err(Error::Input(format!(
            "quadrature and policies must act on [0,1]^{d}"
        )));
    }
    let km = k_n * m;
    let mut sigma = DMatrix::<f64>::zeros(km, km);
    let mut y = vec![0.0; d];
    let mut a = vec![0.0; k_n * m * p];
    for (u, w) in rule.iter() {
        for (k, h) in policies.iter().enumerate() {
            h.execute_into(t, &states[k], u, &mut y);
            model.diffusion_into(t, &states[k], &y, &mut a[k * m * p..(k + 1) * m * p]);
        }
        for r in 0..km {
            let ar = &a[r * p..(r + 1) * p];
            for c in r..km {
                let ac = &a[c * p..(c + 1) * p];
                let dot: f64 = ar.iter().zip(ac).map(|(x, y)| x * y).sum();
                sigma[(r, c)] += w * dot;
            }
        }
    }
    for r in 0..km {
        for c in 0..r {
            sigma[(r, c)] = sigma[(c, r)];
        }
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "effective covariance is not finite at t={t}"
        )));
    }
    check_psd(&sigma)?;
    Ok(sigma)
}

fn check_psd(sigma: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let trace = sigma.trace();
    let eig = sigma.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_GATE * trace.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!(
            "covariance not positive semidefinite: min eigenvalue {min:e}, trace {trace:e}"
        )));
    }
    Ok(eig)
}

/// `L` with `L Lᵀ = Σ`, via the eigen decomposition with small negative
/// eigenvalues clamped to zero.
pub fn psd_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = check_psd(sigma)?;
    let mut l = eig.eigenvectors;
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    Ok(l)
}

/// A discretized white noise on `[0,1]`: the unit interval is cut into
/// equal cells, each carrying an independent Brownian motion with variance
/// rate equal to the cell length. Integrals `∫η(u) M_B(ds,du)` are taken
/// against cell averages of `η`.
#[derive(Debug, Clone)]
pub struct CellWhiteNoise {
    cells: usize,
    m: usize,
    /// `cells × m` cell averages of `η`.
    averages: Vec<f64>,
}

impl CellWhiteNoise {
    pub fn new(cells: usize, m: usize, eta: &dyn Fn(f64, &mut [f64])) -> Result<Self> {
        if cells == 0 || m == 0 {
            return Err(Error::Input("cell white noise needs cells and m >= 1".into()));
        }
        let width = 1.0 / cells as f64;
        let mut averages = vec![0.0; cells * m];
        let mut buf = vec![0.0; m];
        let interior = gauss_legendre_interval(0.0, 1.0, 8);
        let ends = UnitCubeRule::tensor_rule(1, 64, true);
        for c in 0..cells {
            let a = c as f64 * width;
            // Φ⁻¹-like fields blow up only in the end cells, which get mapped nodes
            let nodes: Vec<(f64, f64)> = if c == 0 || c + 1 == cells {
                ends.iter().map(|(v, w)| (v[0], w)).collect()
            } else {
                interior.0.iter().copied().zip(interior.1.iter().copied()).collect()
            };
            for (s, w) in nodes {
                eta(a + width * s, &mut buf);
                for k in 0..m {
                    averages[c * m + k] += w * buf[k];
                }
            }
        }
        Ok(CellWhiteNoise { cells, m, averages })
    }

    /// `Σ_c |c| η̄_c η̄_cᵀ`, the covariance rate actually realized.
    pub fn realized_covariance(&self) -> Vec<f64> {
        let w = 1.0 / self.cells as f64;
        let mut cov = vec![0.0; self.m * self.m];
        for c in 0..self.cells {
            let e = &self.averages[c * self.m..(c + 1) * self.m];
            for i in 0..self.m {
                for j in 0..self.m {
                    cov[i * self.m + j] += w * e[i] * e[j];
                }
            }
        }
        cov
    }

    /// One increment of `B^{η,(k,l)}` over a step of length `dt`, returned
    /// as `p × m` (index `l·m + k`).
    pub fn increment<R: Rng + ?Sized>(&self, dt: f64, p: usize, rng: &mut R) -> Vec<f64> {
        let sd = (dt / self.cells as f64).sqrt();
        let mut out = vec![0.0; p * self.m];
        for l in 0..p {
            for c in 0..self.cells {
                let w = sd * rng.sample::<f64, _>(StandardNormal);
                for k in 0..self.m {
                    out[l * self.m + k] += self.averages[c * self.m + k] * w;
                }
            }
        }
        out
    }
}

/// `η(u) = (1, √2 cos 2πu, √2 sin 2πu, √2 cos 4πu, …)` truncated to `m`
/// components, so that `∫_0^1 η ηᵀ du = I`.
pub fn fourier_eta(m: usize) -> impl Fn(f64, &mut [f64]) {
    move |u, out: &mut [f64]| {
        for (k, o) in out.iter_mut().enumerate().take(m) {
            let j = k.div_ceil(2) as f64;
            let arg = 2.0 * std::f64::consts::PI * j * u;
            *o = match k {
                0 => 1.0,
                _ if k % 2 == 1 => std::f64::consts::SQRT_2 * arg.cos(),
                _ => std::f64::consts::SQRT_2 * arg.sin(),
            };
        }
    }
}

impl CellWhiteNoise {
    /// `B^η_T` (first Brownian slot) summed over `steps` equal steps.
    pub fn terminal<R: Rng + ?Sized>(&self, horizon: f64, steps: usize, rng: &mut R) -> Vec<f64> {
        let mut acc = vec![0.0; self.m];
        for _ in 0..steps {
            let inc = self.increment(horizon / steps as f64, 1, rng);
            acc.iter_mut().zip(&inc).for_each(|(a, d)| *a += d);
        }
        acc
    }
}
