//! Limit characteristics of random-measure integrals and the triangular
//! sums that converge to them.
//!
//! A [`TestFunctionBundle`] fixes `f_0, …, f_{p+2}` and a radius `R`; the
//! process it defines integrates `f_0` against `M_D`, `f_l` against
//! `M_{B^(l)}`, `f_{p+1}|z|` against the compensated jump measure on
//! `{|z| ≤ R}` and `f_{p+2}` against the jump measure on `{|z| > R}`.
//! [`psi`] is the rate `Ψ_f(g)(s)` at which `Σ_i E[g(Δ_i X) − g(0)]`
//! accumulates; [`triangular_sum`] estimates the left side by simulation.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mc::{par_map_paths, Summary};
use crate::model::levy::norm;
use crate::model::{JumpSizeLaw, LevyMeasureSpec, Partition};
use crate::noise::sample_poisson_window;
use crate::quad::{gauss_legendre_interval, QuadratureSpec, UnitCubeRule};
use crate::rng;
use crate::sde::PathRecord;

/// GL nodes per time panel for `ds`-integrals of smooth rates.
const TIME_NODES: usize = 16;

/// `𝔥(z) = z χ(|z|)` with `χ = 1` on `[0, r_inner]`, `0` beyond `r_outer`
/// and a quintic smoothstep in between, so `𝔥 ∈ C²_b` and `|𝔥| ≤ r_outer`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationFunction {
    pub r_inner: f64,
    pub r_outer: f64,
}

impl Default for TruncationFunction {
    fn default() -> Self {
        TruncationFunction {
            r_inner: 1.0,
            r_outer: 2.0,
        }
    }
}

impl TruncationFunction {
    pub fn new(r_inner: f64, r_outer: f64) -> Result<Self> {
        if !(r_inner > 0.0 && r_outer > r_inner && r_outer.is_finite()) {
            return Err(Error::Input(format!(
                "truncation radii must satisfy 0 < r_inner < r_outer < ∞, got ({r_inner}, {r_outer})"
            )));
        }
        Ok(TruncationFunction { r_inner, r_outer })
    }

    /// `(χ, χ', χ'')` at radius `r`.
    fn chi(&self, r: f64) -> (f64, f64, f64) {
        if r <= self.r_inner {
            return (1.0, 0.0, 0.0);
        }
        if r >= self.r_outer {
            return (0.0, 0.0, 0.0);
        }
        let w = self.r_outer - self.r_inner;
        let s = (r - self.r_inner) / w;
        let smooth = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
        let d1 = 30.0 * s * s * (1.0 - s) * (1.0 - s);
        let d2 = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
        (1.0 - smooth, -d1 / w, -d2 / (w * w))
    }

    /// `𝔥^{(k)}(z)`.
    #[inline]
    pub fn component(&self, z: &[f64], k: usize) -> f64 {
        z[k] * self.chi(norm(z)).0
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let (c, _, _) = self.chi(norm(z));
        z.iter().map(|v| v * c).collect()
    }

    /// `∂_j 𝔥^{(k)}(z)` at index `k·m + j`.
    pub fn jacobian(&self, z: &[f64]) -> Vec<f64> {
        let m = z.len();
        let r = norm(z);
        let (c, c1, _) = self.chi(r);
        let mut jac = vec![0.0; m * m];
        for k in 0..m {
            for j in 0..m {
                let radial = if r > 0.0 { z[k] * c1 * z[j] / r } else { 0.0 };
                jac[k * m + j] = if j == k { c } else { 0.0 } + radial;
            }
        }
        jac
    }

    /// `∂_i∂_j 𝔥^{(k)}(z)` at index `i·m + j`.
    pub fn hessian(&self, z: &[f64], k: usize) -> Vec<f64> {
        let m = z.len();
        let r = norm(z);
        let mut h = vec![0.0; m * m];
        if r <= self.r_inner || r >= self.r_outer {
            return h;
        }
        let (_, c1, c2) = self.chi(r);
        let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        for i in 0..m {
            for j in 0..m {
                let (ei, ej) = (z[i] / r, z[j] / r);
                h[i * m + j] = delta(j, k) * c1 * ei
                    + delta(i, k) * c1 * ej
                    + z[k] * (c2 * ei * ej + c1 * (delta(i, j) - ei * ej) / r);
            }
        }
        h
    }
}

/// A `C²_b` test function with its value, and gradient and Hessian at 0.
#[derive(Clone)]
pub struct TestFn {
    pub name: String,
    value: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub grad0: Vec<f64>,
    /// `m × m`, row-major.
    pub hess0: Vec<f64>,
}

impl std::fmt::Debug for TestFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFn")
            .field("name", &self.name)
            .field("grad0", &self.grad0)
            .field("hess0", &self.hess0)
            .finish_non_exhaustive()
    }
}

impl TestFn {
    pub fn new(
        name: impl Into<String>,
        value: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        grad0: Vec<f64>,
        hess0: Vec<f64>,
    ) -> Result<Self> {
        let m = grad0.len();
        if m == 0 || hess0.len() != m * m {
            return Err(Error::Input("test function needs an m-gradient and m×m Hessian".into()));
        }
        Ok(TestFn {
            name: name.into(),
            value,
            grad0,
            hess0,
        })
    }

    pub fn dim(&self) -> usize {
        self.grad0.len()
    }

    #[inline]
    pub fn eval(&self, y: &[f64]) -> f64 {
        (self.value)(y)
    }

    /// `sin(y)` in one dimension.
    pub fn sin() -> Self {
        TestFn {
            name: "sin".into(),
            value: Arc::new(|y| y[0].sin()),
            grad0: vec![1.0],
            hess0: vec![0.0],
        }
    }

    /// `𝔥^{(k)}`.
    pub fn truncation_component(h: TruncationFunction, m: usize, k: usize) -> Self {
        let mut grad0 = vec![0.0; m];
        grad0[k] = 1.0;
        TestFn {
            name: format!("h{}", k + 1),
            value: Arc::new(move |y| h.component(y, k)),
            grad0,
            hess0: vec![0.0; m * m],
        }
    }

    /// `𝔥^{(k)} 𝔥^{(k')}`; near 0 this is `y_k y_{k'}`.
    pub fn truncation_product(h: TruncationFunction, m: usize, k: usize, k2: usize) -> Self {
        let mut hess0 = vec![0.0; m * m];
        hess0[k * m + k2] += 1.0;
        hess0[k2 * m + k] += 1.0;
        TestFn {
            name: format!("h{}h{}", k + 1, k2 + 1),
            value: Arc::new(move |y| {
                let c = h.chi(norm(y)).0;
                y[k] * y[k2] * c * c
            }),
            grad0: vec![0.0; m],
            hess0,
        }
    }

    /// `a·g₁ + b·g₂`.
    pub fn combine(a: f64, g1: &TestFn, b: f64, g2: &TestFn) -> Self {
        let (v1, v2) = (g1.value.clone(), g2.value.clone());
        TestFn {
            name: format!("{a}*{}+{b}*{}", g1.name, g2.name),
            value: Arc::new(move |y| a * v1(y) + b * v2(y)),
            grad0: g1.grad0.iter().zip(&g2.grad0).map(|(x, y)| a * x + b * y).collect(),
            hess0: g1.hess0.iter().zip(&g2.hess0).map(|(x, y)| a * x + b * y).collect(),
        }
    }
}

/// `(s, u, out)` with `out ∈ ℝ^m`.
pub type UField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(s, z, u, out)` with `out ∈ ℝ^m`.
pub type ZuField = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Bounded integrands `f_0, …, f_{p+2}` and the jump split radius `R`.
#[derive(Clone)]
pub struct TestFunctionBundle {
    pub name: String,
    pub m: usize,
    pub d: usize,
    pub horizon: f64,
    pub r: f64,
    pub f0: UField,
    /// `f_1, …, f_p`.
    pub fl: Vec<UField>,
    pub fp1: ZuField,
    pub fp2: ZuField,
    /// Declared `sup |f_{p+1}|` and `sup |f_{p+2}|`.
    pub bound_p1: f64,
    pub bound_p2: f64,
    pub quadrature: QuadratureSpec,
}

impl std::fmt::Debug for TestFunctionBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunctionBundle")
            .field("name", &self.name)
            .field("m", &self.m)
            .field("d", &self.d)
            .field("p", &self.fl.len())
            .field("r", &self.r)
            .finish_non_exhaustive()
    }
}

fn zero_u() -> UField {
    Arc::new(|_, _, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0))
}

fn zero_zu() -> ZuField {
    Arc::new(|_, _, _, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0))
}

fn const_u(c: f64) -> UField {
    Arc::new(move |_, _, out: &mut [f64]| out.iter_mut().for_each(|v| *v = c))
}

impl TestFunctionBundle {
    /// All integrands zero; `m`-dimensional with `p` Brownian slots.
    pub fn zero(name: impl Into<String>, m: usize, p: usize, d: usize, horizon: f64) -> Self {
        TestFunctionBundle {
            name: name.into(),
            m,
            d,
            horizon,
            r: 1.0,
            f0: zero_u(),
            fl: vec![zero_u(); p],
            fp1: zero_zu(),
            fp2: zero_zu(),
            bound_p1: 0.0,
            bound_p2: 0.0,
            quadrature: QuadratureSpec::default_for_dim(d),
        }
    }

    fn validate(&self, levy: &LevyMeasureSpec) -> Result<()> {
        if self.m == 0 || self.d == 0 || !(self.horizon > 0.0) || !(self.r > 0.0) {
            return Err(Error::Input(format!("bundle `{}` has invalid sizes", self.name)));
        }
        if !levy.is_trivial() && levy.cutoff() > 0.0 && self.r < levy.cutoff() {
            return Err(Error::LevySpec(format!(
                "split radius {} lies inside the unsampled ball |z| <= {}",
                self.r,
                levy.cutoff()
            )));
        }
        self.quadrature.validate()
    }

    fn rule(&self) -> Result<UnitCubeRule> {
        self.quadrature.build(self.d)
    }
}

fn eval_u(f: &UField, s: f64, u: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    f(s, u, &mut out);
    out
}

const STACK_M: usize = 8;

/// Runs `k` on `scale · f(s, z, u)` without allocating for `m <= 8`.
#[inline]
fn with_image<R>(
    f: &ZuField,
    (s, z, u): (f64, &[f64], &[f64]),
    m: usize,
    scale: f64,
    k: impl FnOnce(&[f64]) -> R,
) -> R {
    let mut stack = [0.0; STACK_M];
    let mut heap;
    let buf: &mut [f64] = if m <= STACK_M {
        &mut stack[..m]
    } else {
        heap = vec![0.0; m];
        &mut heap
    };
    f(s, z, u, buf);
    if scale != 1.0 {
        buf.iter_mut().for_each(|v| *v *= scale);
    }
    k(buf)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn finite(v: f64, what: &str, s: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("{what} is not finite at s={s}")))
    }
}

fn check_dims(bundle: &TestFunctionBundle, g: &TestFn) -> Result<()> {
    if g.dim() != bundle.m {
        return Err(Error::Input(format!(
            "test function `{}` acts on ℝ^{}, bundle `{}` on ℝ^{}",
            g.name,
            g.dim(),
            bundle.name,
            bundle.m
        )));
    }
    Ok(())
}

/// `Ψ_f(g)(s)`.
pub fn psi(bundle: &TestFunctionBundle, g: &TestFn, levy: &LevyMeasureSpec, s: f64) -> Result<f64> {
    bundle.validate(levy)?;
    check_dims(bundle, g)?;
    let rule = bundle.rule()?;
    psi_with(bundle, g, levy, s, &rule)
}

fn psi_with(
    bundle: &TestFunctionBundle,
    g: &TestFn,
    levy: &LevyMeasureSpec,
    s: f64,
    rule: &UnitCubeRule,
) -> Result<f64> {
    let m = bundle.m;
    let g0 = g.eval(&vec![0.0; m]);
    let local = rule.integrate(|u| {
        let mut v = dot(&g.grad0, &eval_u(&bundle.f0, s, u, m));
        for fl in &bundle.fl {
            let f = eval_u(fl, s, u, m);
            for k in 0..m {
                for k2 in 0..m {
                    v += 0.5 * g.hess0[k * m + k2] * f[k] * f[k2];
                }
            }
        }
        v
    });
    let (small, large) = if levy.is_trivial() {
        (0.0, 0.0)
    } else {
        let small = rule.integrate(|u| {
            levy.integrate_shell(s, 0.0, bundle.r, &|z| {
                let r = norm(z);
                with_image(&bundle.fp1, (s, z, u), m, r, |y| g.eval(y) - g0 - dot(&g.grad0, y))
            })
        });
        let large = rule.integrate(|u| {
            levy.integrate_shell(s, bundle.r, f64::INFINITY, &|z| {
                with_image(&bundle.fp2, (s, z, u), m, 1.0, |y| g.eval(y)) - g0
            })
        });
        (small, large)
    };
    finite(local + small + large, "Ψ", s)
}

/// `∫_a^b φ(s) ds` by GL on one panel.
fn time_integral<F: FnMut(f64) -> Result<f64>>(a: f64, b: f64, mut phi: F) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let (ss, ws) = gauss_legendre_interval(a, b, TIME_NODES);
    let mut acc = 0.0;
    for (s, w) in ss.into_iter().zip(ws) {
        acc += w * phi(s)?;
    }
    Ok(acc)
}

/// `∫_0^t Ψ_f(g)(s) ds`.
pub fn integrated_psi(
    bundle: &TestFunctionBundle,
    g: &TestFn,
    levy: &LevyMeasureSpec,
    t: f64,
) -> Result<f64> {
    bundle.validate(levy)?;
    check_dims(bundle, g)?;
    let rule = bundle.rule()?;
    time_integral(0.0, t.min(bundle.horizon), |s| psi_with(bundle, g, levy, s, &rule))
}

/// `(𝔟^X, C^X, C̃^X)` on a time grid, plus access to `ν^X`.
#[derive(Clone)]
pub struct CharacteristicsTriple {
    pub times: Vec<f64>,
    /// `𝔟^X_t ∈ ℝ^m` per time.
    pub drift: Vec<Vec<f64>>,
    /// `C^X_t`, `m × m` row-major, per time.
    pub second: Vec<Vec<f64>>,
    /// `C̃^X_t = C^X_t + ∫_0^t∫ 𝔥𝔥ᵀ dν^X`.
    pub modified_second: Vec<Vec<f64>>,
    bundle: TestFunctionBundle,
    levy: LevyMeasureSpec,
}

impl std::fmt::Debug for CharacteristicsTriple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CharacteristicsTriple")
            .field("times", &self.times)
            .field("drift", &self.drift)
            .field("second", &self.second)
            .field("modified_second", &self.modified_second)
            .finish_non_exhaustive()
    }
}

impl CharacteristicsTriple {
    /// `∫_0^t ∫ g dν^X`, through the image of `ν_s(dz) du ds` under
    /// `z ↦ f_{p+1}|z|` on `{|z| ≤ R}` and `z ↦ f_{p+2}` on `{|z| > R}`.
    pub fn jump_integral(&self, t: f64, g: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
        let rule = self.bundle.rule()?;
        nu_x_integral(&self.bundle, &self.levy, &rule, 0.0, t.min(self.bundle.horizon), g)
    }

    /// `∫_0^T ∫_{|y| ≥ κ} ν^X(ds, dy)`.
    pub fn tail_mass(&self, kappa: f64) -> Result<f64> {
        self.jump_integral(self.bundle.horizon, &|y| if norm(y) >= kappa { 1.0 } else { 0.0 })
    }

    /// `‖f_{p+1}‖²/κ² ∫∫_{|z|≤R}|z|²ν ds + ‖f_{p+2}‖/κ ∫∫_{|z|>R}ν ds`.
    pub fn tail_bound(&self, kappa: f64) -> Result<f64> {
        let (b, r) = (&self.bundle, self.bundle.r);
        let second = time_integral(0.0, b.horizon, |s| {
            Ok(self.levy.integrate_shell(s, 0.0, r, &|z| norm(z).powi(2)))
        })?;
        let mass = time_integral(0.0, b.horizon, |s| {
            Ok(self.levy.integrate_shell(s, r, f64::INFINITY, &|_| 1.0))
        })?;
        Ok(b.bound_p1.powi(2) / (kappa * kappa) * second + b.bound_p2 / kappa * mass)
    }

    /// `C̃` is symmetric and its increments are PSD at grid times.
    pub fn modified_second_is_monotone(&self, tol: f64) -> bool {
        let m = self.bundle.m;
        let sym = self.modified_second.iter().all(|c| {
            (0..m).all(|i| (0..m).all(|j| (c[i * m + j] - c[j * m + i]).abs() <= tol))
        });
        sym && self.modified_second.windows(2).all(|w| {
            let diff: Vec<f64> = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
            let mat = nalgebra::DMatrix::from_row_slice(m, m, &diff);
            mat.symmetric_eigenvalues().iter().all(|&l| l >= -tol)
        })
    }
}

fn nu_x_integral(
    bundle: &TestFunctionBundle,
    levy: &LevyMeasureSpec,
    rule: &UnitCubeRule,
    a: f64,
    b: f64,
    g: &dyn Fn(&[f64]) -> f64,
) -> Result<f64> {
    if levy.is_trivial() {
        return Ok(0.0);
    }
    let m = bundle.m;
    time_integral(a, b, |s| {
        let v = rule.integrate(|u| {
            let small = levy.integrate_shell(s, 0.0, bundle.r, &|z| {
                with_image(&bundle.fp1, (s, z, u), m, norm(z), g)
            });
            let large = levy.integrate_shell(s, bundle.r, f64::INFINITY, &|z| {
                with_image(&bundle.fp2, (s, z, u), m, 1.0, g)
            });
            small + large
        });
        finite(v, "ν^X integral", s)
    })
}

/// Rates `(d𝔟/ds, dC/ds, dC̃/ds)` at time `s`.
fn rates(
    bundle: &TestFunctionBundle,
    levy: &LevyMeasureSpec,
    h: &TruncationFunction,
    rule: &UnitCubeRule,
    s: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = bundle.m;
    let mut drift = vec![0.0; m];
    let mut c = vec![0.0; m * m];
    for (u, w) in rule.iter() {
        let f0 = eval_u(&bundle.f0, s, u, m);
        drift.iter_mut().zip(&f0).for_each(|(d, f)| *d += w * f);
        for fl in &bundle.fl {
            let f = eval_u(fl, s, u, m);
            for k in 0..m {
                for k2 in 0..m {
                    c[k * m + k2] += w * f[k] * f[k2];
                }
            }
        }
    }
    let mut ct = c.clone();
    if !levy.is_trivial() {
        for k in 0..m {
            drift[k] += rule.integrate(|u| {
                let large = levy.integrate_shell(s, bundle.r, f64::INFINITY, &|z| {
                    with_image(&bundle.fp2, (s, z, u), m, 1.0, |y| h.component(y, k))
                });
                let small = levy.integrate_shell(s, 0.0, bundle.r, &|z| {
                    with_image(&bundle.fp1, (s, z, u), m, norm(z), |y| h.component(y, k) - y[k])
                });
                large + small
            });
            for k2 in k..m {
                let v = rule.integrate(|u| {
                    let prod = |y: &[f64]| h.component(y, k) * h.component(y, k2);
                    levy.integrate_shell(s, 0.0, bundle.r, &|z| {
                        with_image(&bundle.fp1, (s, z, u), m, norm(z), prod)
                    }) + levy.integrate_shell(s, bundle.r, f64::INFINITY, &|z| {
                        with_image(&bundle.fp2, (s, z, u), m, 1.0, prod)
                    })
                });
                ct[k * m + k2] += v;
                if k2 != k {
                    ct[k2 * m + k] += v;
                }
            }
        }
    }
    (drift, c, ct)
}

/// The characteristics of the limit process at the given times (which must
/// start at 0 and increase).
pub fn limit_characteristics(
    bundle: &TestFunctionBundle,
    levy: &LevyMeasureSpec,
    h: &TruncationFunction,
    times: &[f64],
) -> Result<CharacteristicsTriple> {
    bundle.validate(levy)?;
    if times.first() != Some(&0.0) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input("characteristics grid must start at 0 and increase".into()));
    }
    if *times.last().unwrap() > bundle.horizon * (1.0 + 1e-12) {
        return Err(Error::Input("characteristics grid exceeds the horizon".into()));
    }
    let rule = bundle.rule()?;
    let m = bundle.m;
    let mut drift = vec![vec![0.0; m]];
    let mut second = vec![vec![0.0; m * m]];
    let mut modified = vec![vec![0.0; m * m]];
    for w in times.windows(2) {
        let (ss, ws) = gauss_legendre_interval(w[0], w[1], TIME_NODES);
        let mut d = drift.last().unwrap().clone();
        let mut c = second.last().unwrap().clone();
        let mut ct = modified.last().unwrap().clone();
        for (s, wt) in ss.into_iter().zip(ws) {
            let (rd, rc, rct) = rates(bundle, levy, h, &rule, s);
            d.iter_mut().zip(&rd).for_each(|(a, b)| *a += wt * b);
            c.iter_mut().zip(&rc).for_each(|(a, b)| *a += wt * b);
            ct.iter_mut().zip(&rct).for_each(|(a, b)| *a += wt * b);
        }
        for v in d.iter().chain(&c).chain(&ct) {
            finite(*v, "characteristics", w[1])?;
        }
        drift.push(d);
        second.push(c);
        modified.push(ct);
    }
    Ok(CharacteristicsTriple {
        times: times.to_vec(),
        drift,
        second,
        modified_second: modified,
        bundle: bundle.clone(),
        levy: levy.clone(),
    })
}

/// Monte-Carlo estimate of `Σ_i E[g(Δ_i X^n) − g(0)]`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TriangularEstimate {
    pub mesh_n: usize,
    pub estimate: f64,
    pub se: f64,
    pub n_paths: usize,
}

/// Simulates the increments `Δ_i X^n` interval by interval with a fresh
/// `ξ_i` and fresh noise each time; `substeps` left-point steps per
/// interval for the `ds` and `dB` parts. Stream: `("tri/<n>", path)`.
pub fn triangular_sum(
    bundle: &TestFunctionBundle,
    g: &TestFn,
    partition: &Partition,
    levy: &LevyMeasureSpec,
    n_paths: usize,
    seed: u64,
    substeps: usize,
) -> Result<TriangularEstimate> {
    bundle.validate(levy)?;
    check_dims(bundle, g)?;
    if n_paths < 2 || substeps == 0 {
        return Err(Error::Input("need at least two paths and one substep".into()));
    }
    let m = bundle.m;
    let g0 = g.eval(&vec![0.0; m]);
    let purpose = format!("tri/{}", partition.n());
    let (lo, hi) = (levy.cutoff(), bundle.r);
    let compensate = !levy.is_trivial() && hi > lo;
    let totals = par_map_paths(n_paths, |path| {
        let mut rng = rng::stream(seed, &purpose, path);
        let mut total = 0.0;
        let mut u = vec![0.0; bundle.d];
        let mut f = vec![0.0; m];
        for i in 1..=partition.n() {
            let (a, b) = partition.interval(i);
            u.iter_mut().for_each(|v| *v = rng.random());
            let mut delta = vec![0.0; m];
            let hstep = (b - a) / substeps as f64;
            for j in 0..substeps {
                let s = a + hstep * j as f64;
                (bundle.f0)(s, &u, &mut f);
                delta.iter_mut().zip(&f).for_each(|(d, f)| *d += f * hstep);
                for fl in &bundle.fl {
                    let w = hstep.sqrt() * rng.sample::<f64, _>(StandardNormal);
                    fl(s, &u, &mut f);
                    delta.iter_mut().zip(&f).for_each(|(d, f)| *d += f * w);
                }
                if compensate {
                    for k in 0..m {
                        let c = levy.integrate_shell(s, lo, hi, &|z| {
                            with_image(&bundle.fp1, (s, z, &u), m, norm(z), |y| y[k])
                        });
                        delta[k] -= c * hstep;
                    }
                }
            }
            for jump in sample_poisson_window(levy, a, b, &mut rng)? {
                let r = norm(&jump.z);
                if r <= bundle.r {
                    (bundle.fp1)(jump.t, &jump.z, &u, &mut f);
                    delta.iter_mut().zip(&f).for_each(|(d, f)| *d += f * r);
                } else {
                    (bundle.fp2)(jump.t, &jump.z, &u, &mut f);
                    delta.iter_mut().zip(&f).for_each(|(d, f)| *d += f);
                }
            }
            total += g.eval(&delta) - g0;
        }
        finite(total, "triangular sum", partition.horizon())
    })?;
    let s = Summary::of(&totals);
    Ok(TriangularEstimate {
        mesh_n: partition.n(),
        estimate: s.mean,
        se: s.se,
        n_paths,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConvergenceRow {
    pub mesh_n: usize,
    pub estimate: f64,
    pub target: f64,
    pub abs_error: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub bundle: String,
    pub test_fn: String,
    pub rows: Vec<ConvergenceRow>,
    /// Errors never grow by more than three combined standard errors.
    pub decreasing: bool,
}

/// `|Σ_i E[g(Δ_i X^n)] − n g(0) − ∫_0^T Ψ_f(g)|` over equidistant meshes.
pub fn convergence_report(
    bundle: &TestFunctionBundle,
    g: &TestFn,
    meshes: &[usize],
    levy: &LevyMeasureSpec,
    n_paths: usize,
    seed: u64,
    substeps: usize,
) -> Result<ConvergenceReport> {
    let target = integrated_psi(bundle, g, levy, bundle.horizon)?;
    let mut rows = Vec::with_capacity(meshes.len());
    for &n in meshes {
        let part = Partition::equidistant(bundle.horizon, n)?;
        let est = triangular_sum(bundle, g, &part, levy, n_paths, seed, substeps)?;
        rows.push(ConvergenceRow {
            mesh_n: n,
            estimate: est.estimate,
            target,
            abs_error: (est.estimate - target).abs(),
            mc_se: est.se,
        });
    }
    let decreasing = rows.windows(2).all(|w| {
        w[1].abs_error <= w[0].abs_error + 3.0 * (w[0].mc_se.powi(2) + w[1].mc_se.powi(2)).sqrt()
    });
    Ok(ConvergenceReport {
        bundle: bundle.name.clone(),
        test_fn: g.name.clone(),
        rows,
        decreasing,
    })
}

/// A bundle, its Lévy measure and the test function it is checked with.
#[derive(Debug, Clone)]
pub struct DiagnosticCase {
    pub bundle: TestFunctionBundle,
    pub levy: LevyMeasureSpec,
    pub g: TestFn,
}

pub const DIAGNOSTIC_CASES: [&str; 4] = ["drift_only", "brownian_only", "jump_only", "zero"];

/// Scalar cases on `[0, 1]` with one Brownian slot:
///
/// * `drift_only`: `f_0 ≡ 1`, `g = sin`;
/// * `brownian_only`: `f_1 ≡ 1`, `g = 𝔥²`;
/// * `jump_only`: `f_{p+2} ≡ 0.2`, jumps of size 1 at rate 2, `R = 0.5`,
///   `g = 𝔥` (linear wherever the increments land with any real probability);
/// * `zero`: everything zero, `g = sin`.
pub fn diagnostic_case(name: &str) -> Result<DiagnosticCase> {
    let h = TruncationFunction::default();
    let mut bundle = TestFunctionBundle::zero(name, 1, 1, 1, 1.0);
    let mut levy = LevyMeasureSpec::none();
    let g = match name {
        "drift_only" => {
            bundle.f0 = const_u(1.0);
            TestFn::sin()
        }
        "brownian_only" => {
            bundle.fl = vec![const_u(1.0)];
            TestFn::truncation_product(h, 1, 0, 0)
        }
        "jump_only" => {
            bundle.r = 0.5;
            bundle.fp2 = Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.2);
            bundle.bound_p2 = 0.2;
            levy = LevyMeasureSpec::compound_poisson(2.0, JumpSizeLaw::Dirac { size: vec![1.0] }, 0.5)?;
            TestFn::truncation_component(h, 1, 0)
        }
        "zero" => TestFn::sin(),
        other => {
            return Err(Error::Config(format!(
                "unknown diagnostic case `{other}`; known: {}",
                DIAGNOSTIC_CASES.join(", ")
            )))
        }
    };
    Ok(DiagnosticCase { bundle, levy, g })
}

/// A functional of a joint sample of paths at time `t`.
pub type PathFunctional = Arc<dyn Fn(&[PathRecord], f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Serialize)]
pub struct MomentRow {
    pub t: f64,
    pub functional: String,
    pub pre_limit: f64,
    pub limit: f64,
    pub abs_diff: f64,
    pub pooled_se: f64,
}

/// `E[φ]` over two ensembles of joint samples, per time and functional.
pub fn moment_compare(
    pre_limit: &[Vec<PathRecord>],
    limit: &[Vec<PathRecord>],
    times: &[f64],
    functionals: &[(String, PathFunctional)],
) -> Result<Vec<MomentRow>> {
    if pre_limit.len() < 2 || limit.len() < 2 {
        return Err(Error::Input("moment comparison needs at least two samples per side".into()));
    }
    let mut rows = Vec::new();
    for &t in times {
        for (name, phi) in functionals {
            let a: Vec<f64> = pre_limit.iter().map(|s| phi(s, t)).collect();
            let b: Vec<f64> = limit.iter().map(|s| phi(s, t)).collect();
            let (sa, sb) = (Summary::of(&a), Summary::of(&b));
            rows.push(MomentRow {
                t,
                functional: name.clone(),
                pre_limit: sa.mean,
                limit: sb.mean,
                abs_diff: (sa.mean - sb.mean).abs(),
                pooled_se: (sa.se.powi(2) + sb.se.powi(2)).sqrt(),
            });
        }
    }
    Ok(rows)
}

/// `φ(X_t)` for the first path of a joint sample.
pub fn state_functional(f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>) -> PathFunctional {
    Arc::new(move |paths, t| f(paths[0].state_at(t)))
}

/// Realized covariation of the first two paths of a joint sample on `[0, t]`.
pub fn covariation_functional() -> PathFunctional {
    Arc::new(|paths, t| {
        let (a, b) = (&paths[0], &paths[1]);
        let end = a.times.partition_point(|&s| s <= t);
        (1..end)
            .map(|k| (a.state(k)[0] - a.state(k - 1)[0]) * (b.state(k)[0] - b.state(k - 1)[0]))
            .sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn truncation_is_identity_near_zero_and_bounded() {
        let h = TruncationFunction::default();
        assert_eq!(h.apply(&[0.3, -0.4]), vec![0.3, -0.4]);
        assert_eq!(h.apply(&[1.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(h.apply(&[3.0]), vec![0.0]);
        for i in 0..400 {
            let r = i as f64 * 0.01;
            assert!(norm(&h.apply(&[r])) <= 2.0);
        }
    }

    proptest! {
        #[test]
        fn truncation_derivatives_match_finite_differences(
            a in -2.5f64..2.5, b in -2.5f64..2.5, k in 0usize..2
        ) {
            let h = TruncationFunction::default();
            let z = [a, b];
            let eps = 1e-6;
            let jac = h.jacobian(&z);
            let hess = h.hessian(&z, k);
            for j in 0..2 {
                let mut zp = z; zp[j] += eps;
                let mut zm = z; zm[j] -= eps;
                let fd = (h.apply(&zp)[k] - h.apply(&zm)[k]) / (2.0 * eps);
                prop_assert!((fd - jac[k * 2 + j]).abs() < 1e-6);
                let gd: Vec<f64> = (0..2)
                    .map(|i| (h.jacobian(&zp)[k * 2 + i] - h.jacobian(&zm)[k * 2 + i]) / (2.0 * eps))
                    .collect();
                for i in 0..2 {
                    prop_assert!((gd[i] - hess[i * 2 + j]).abs() < 1e-5);
                }
            }
        }

        #[test]
        fn psi_is_linear_in_g(a in -3.0f64..3.0, b in -3.0f64..3.0, s in 0.0f64..1.0) {
            let case = mixed_case();
            let g1 = TestFn::sin();
            let g2 = TestFn::truncation_product(TruncationFunction::default(), 1, 0, 0);
            let lhs = psi(&case.bundle, &TestFn::combine(a, &g1, b, &g2), &case.levy, s).unwrap();
            let rhs = a * psi(&case.bundle, &g1, &case.levy, s).unwrap()
                + b * psi(&case.bundle, &g2, &case.levy, s).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
        }
    }

    fn mixed_case() -> DiagnosticCase {
        let mut bundle = TestFunctionBundle::zero("mixed", 1, 1, 1, 1.0);
        bundle.f0 = Arc::new(|s, u, out: &mut [f64]| out[0] = s + u[0]);
        bundle.fl = vec![Arc::new(|_, u, out: &mut [f64]| out[0] = 1.0 + u[0])];
        bundle.fp1 = Arc::new(|_, _, u, out: &mut [f64]| out[0] = 2.0 * u[0]);
        bundle.fp2 = Arc::new(|_, z, u, out: &mut [f64]| out[0] = z[0] * u[0]);
        bundle.r = 0.8;
        let levy = LevyMeasureSpec::compound_poisson(
            1.5,
            JumpSizeLaw::Gaussian { mean: 0.1, std: 1.0 },
            0.8,
        )
        .unwrap();
        DiagnosticCase {
            bundle,
            levy,
            g: TestFn::sin(),
        }
    }

    #[test]
    fn psi_closed_forms() {
        let d = diagnostic_case("drift_only").unwrap();
        assert!((psi(&d.bundle, &d.g, &d.levy, 0.3).unwrap() - 1.0).abs() < 1e-12);
        // finite-difference oracle for g'(0)
        let fd = ((1e-6f64).sin() - (-1e-6f64).sin()) / 2e-6;
        assert!((d.g.grad0[0] - fd).abs() < 1e-9);

        let b = diagnostic_case("brownian_only").unwrap();
        assert!((psi(&b.bundle, &b.g, &b.levy, 0.3).unwrap() - 1.0).abs() < 1e-12);

        let j = diagnostic_case("jump_only").unwrap();
        // λ (g(c) − g(0)) with the single atom z = 1
        let direct = 2.0 * (j.g.eval(&[0.2]) - j.g.eval(&[0.0]));
        assert!((psi(&j.bundle, &j.g, &j.levy, 0.5).unwrap() - direct).abs() < 1e-14);
        assert!((direct - 0.4).abs() < 1e-15);
    }

    #[test]
    fn brownian_second_characteristic() {
        let mut bundle = TestFunctionBundle::zero("b", 1, 1, 1, 2.0);
        bundle.fl = vec![const_u(0.7)];
        let tr = limit_characteristics(
            &bundle,
            &LevyMeasureSpec::none(),
            &TruncationFunction::default(),
            &[0.0, 0.5, 1.0, 2.0],
        )
        .unwrap();
        for (t, c) in tr.times.iter().zip(&tr.second) {
            assert!((c[0] - 0.49 * t).abs() < 1e-12);
        }
        assert!(tr.modified_second_is_monotone(1e-12));
    }

    #[test]
    fn drift_characteristic_with_inactive_truncation() {
        let mut bundle = TestFunctionBundle::zero("d", 1, 1, 1, 1.0);
        bundle.f0 = Arc::new(|_, u, out: &mut [f64]| out[0] = 0.1 * u[0]);
        let tr = limit_characteristics(
            &bundle,
            &LevyMeasureSpec::none(),
            &TruncationFunction::default(),
            &[0.0, 0.25, 1.0],
        )
        .unwrap();
        assert!((tr.drift[1][0] - 0.25 * 0.05).abs() < 1e-12);
        assert!((tr.drift[2][0] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn tail_mass_respects_bound() {
        let case = mixed_case();
        let mut bundle = case.bundle.clone();
        bundle.bound_p1 = 2.0;
        bundle.fp2 = Arc::new(|_, z, u, out: &mut [f64]| out[0] = (z[0] * u[0]).clamp(-3.0, 3.0));
        bundle.bound_p2 = 3.0;
        let tr = limit_characteristics(&bundle, &case.levy, &TruncationFunction::default(), &[0.0, 1.0])
            .unwrap();
        for kappa in [0.1, 0.5, 1.0, 2.0] {
            let mass = tr.tail_mass(kappa).unwrap();
            let bound = tr.tail_bound(kappa).unwrap();
            assert!(mass <= bound, "κ={kappa}: {mass} > {bound}");
        }
    }

    #[test]
    fn drift_only_triangular_sum_is_exact() {
        let d = diagnostic_case("drift_only").unwrap();
        for n in [4, 16] {
            let part = Partition::equidistant(1.0, n).unwrap();
            let est = triangular_sum(&d.bundle, &d.g, &part, &d.levy, 4, 1, 1).unwrap();
            let exact = n as f64 * (1.0 / n as f64).sin();
            assert!((est.estimate - exact).abs() < 1e-12);
            assert_eq!(est.se, 0.0);
        }
    }

    #[test]
    fn zero_bundle_reports_zero() {
        let z = diagnostic_case("zero").unwrap();
        let rep = convergence_report(&z.bundle, &z.g, &[2, 8], &z.levy, 10, 3, 1).unwrap();
        assert!(rep.rows.iter().all(|r| r.abs_error == 0.0 && r.estimate == 0.0));
        assert!(rep.decreasing);
    }

    #[test]
    fn unknown_case() {
        assert!(matches!(diagnostic_case("nope"), Err(Error::Config(_))));
    }
}
