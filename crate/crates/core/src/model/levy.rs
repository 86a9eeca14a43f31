//! Lévy measures `ν_t(dz)` on `ℝ^q_0` with a truncation radius `𝔯`.
//!
//! Two families are built in:
//!
//! * finite activity: `ν_t = λ(t) · P` for a rate function and a jump-size
//!   law `P`;
//! * a symmetric stable-like measure `c|z|^{-1-α} dz` on `0 < |z| ≤ z_max`
//!   (`q = 1`), of infinite activity. Only jumps with `|z| > ε` are sampled;
//!   the second moment of the rest is known in closed form.

use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::gauss_legendre;

pub type RateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Nodes per GL panel for `ν`-integrals.
const LEVY_NODES: usize = 96;
/// Gaussian jump sizes are integrated over `mean ± 12 std`.
const GAUSS_SPAN: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum JumpSizeLaw {
    Dirac { size: Vec<f64> },
    Discrete { atoms: Vec<Vec<f64>>, probs: Vec<f64> },
    Gaussian { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl JumpSizeLaw {
    fn dim(&self) -> usize {
        match self {
            JumpSizeLaw::Dirac { size } => size.len(),
            JumpSizeLaw::Discrete { atoms, .. } => atoms.first().map_or(0, Vec::len),
            JumpSizeLaw::Gaussian { .. } | JumpSizeLaw::Uniform { .. } => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::LevySpec(m.to_string()));
        match self {
            JumpSizeLaw::Dirac { size } => {
                if size.is_empty() || size.iter().all(|z| *z == 0.0) {
                    return bad("Dirac jump size must be a non-zero vector");
                }
            }
            JumpSizeLaw::Discrete { atoms, probs } => {
                if atoms.is_empty() || atoms.len() != probs.len() {
                    return bad("discrete law needs one probability per atom");
                }
                let q = atoms[0].len();
                if q == 0 || atoms.iter().any(|a| a.len() != q) {
                    return bad("discrete atoms must share a positive dimension");
                }
                if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12
                {
                    return bad("discrete probabilities must be non-negative and sum to 1");
                }
            }
            JumpSizeLaw::Gaussian { mean, std } => {
                if !mean.is_finite() || !(*std > 0.0) || !std.is_finite() {
                    return bad("Gaussian jump law needs finite mean and std > 0");
                }
            }
            JumpSizeLaw::Uniform { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return bad("uniform jump law needs lo < hi");
                }
            }
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            JumpSizeLaw::Dirac { size } => size.clone(),
            JumpSizeLaw::Discrete { atoms, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (a, p) in atoms.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return a.clone();
                    }
                }
                atoms[atoms.len() - 1].clone()
            }
            JumpSizeLaw::Gaussian { mean, std } => {
                let z: f64 = rng.sample(StandardNormal);
                vec![mean + std * z]
            }
            JumpSizeLaw::Uniform { lo, hi } => vec![lo + (hi - lo) * rng.random::<f64>()],
        }
    }

    /// `∫ 1{lo < |z| ≤ hi} f(z) P(dz)`.
    fn expect_in_shell(&self, lo: f64, hi: f64, f: &dyn Fn(&[f64]) -> f64) -> f64 {
        let inside = |z: &[f64]| {
            let r = norm(z);
            r > lo && r <= hi
        };
        match self {
            JumpSizeLaw::Dirac { size } => {
                if inside(size) {
                    f(size)
                } else {
                    0.0
                }
            }
            JumpSizeLaw::Discrete { atoms, probs } => atoms
                .iter()
                .zip(probs)
                .filter(|(a, _)| inside(a))
                .map(|(a, p)| p * f(a))
                .sum(),
            JumpSizeLaw::Gaussian { mean, std } => {
                let dens = |z: f64| {
                    let s = (z - mean) / std;
                    (-0.5 * s * s).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
                };
                let support = (mean - GAUSS_SPAN * std, mean + GAUSS_SPAN * std);
                shell_pieces(lo, hi, support)
                    .map(|(a, b)| gl_1d(a, b, |z| dens(z) * f(&[z])))
                    .sum()
            }
            JumpSizeLaw::Uniform { lo: a0, hi: b0 } => {
                let dens = 1.0 / (b0 - a0);
                shell_pieces(lo, hi, (*a0, *b0))
                    .map(|(a, b)| gl_1d(a, b, |z| dens * f(&[z])))
                    .sum()
            }
        }
    }
}

/// Portions of `{lo < |z| ≤ hi} ∩ [s0, s1]` on the real line.
fn shell_pieces(lo: f64, hi: f64, (s0, s1): (f64, f64)) -> impl Iterator<Item = (f64, f64)> {
    let hi = hi.min(f64::MAX);
    [(-hi, -lo), (lo, hi)]
        .into_iter()
        .map(move |(a, b)| (a.max(s0), b.min(s1)))
        .filter(|(a, b)| b > a)
}

fn gl_1d<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (x, w) = RULE.get_or_init(|| gauss_legendre(LEVY_NODES));
    let (half, mid) = (0.5 * (b - a), 0.5 * (a + b));
    x.iter().zip(w).map(|(&x, &w)| half * w * f(mid + half * x)).sum()
}

pub fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `{0 < |z| ≤ R}` or `{|z| > R}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpRegion {
    Small(f64),
    Large(f64),
    /// All of `ℝ^q_0`.
    All,
}

impl JumpRegion {
    pub fn contains(&self, z: &[f64]) -> bool {
        let r = norm(z);
        match *self {
            JumpRegion::Small(big_r) => r > 0.0 && r <= big_r,
            JumpRegion::Large(big_r) => r > big_r,
            JumpRegion::All => r > 0.0,
        }
    }

    /// Shell bounds `(lo, hi]` in `|z|`.
    pub fn shell(&self) -> (f64, f64) {
        match *self {
            JumpRegion::Small(r) => (0.0, r),
            JumpRegion::Large(r) => (r, f64::INFINITY),
            JumpRegion::All => (0.0, f64::INFINITY),
        }
    }
}

#[derive(Clone)]
pub enum LevyKind {
    FiniteActivity {
        rate: RateFn,
        /// `sup_t λ(t)`, the thinning envelope.
        rate_bound: f64,
        sizes: JumpSizeLaw,
    },
    StableLike {
        scale: f64,
        alpha: f64,
        cutoff: f64,
        z_max: f64,
    },
}

impl fmt::Debug for LevyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevyKind::FiniteActivity {
                rate_bound, sizes, ..
            } => f
                .debug_struct("FiniteActivity")
                .field("rate_bound", rate_bound)
                .field("sizes", sizes)
                .finish_non_exhaustive(),
            LevyKind::StableLike {
                scale,
                alpha,
                cutoff,
                z_max,
            } => f
                .debug_struct("StableLike")
                .field("scale", scale)
                .field("alpha", alpha)
                .field("cutoff", cutoff)
                .field("z_max", z_max)
                .finish(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LevyMeasureSpec {
    pub kind: LevyKind,
    /// `𝔯`: jumps with `|z| ≤ 𝔯` are compensated. May be `0` or `∞`.
    pub truncation: f64,
}

impl LevyMeasureSpec {
    /// No jumps at all.
    pub fn none() -> Self {
        LevyMeasureSpec {
            kind: LevyKind::FiniteActivity {
                rate: Arc::new(|_| 0.0),
                rate_bound: 0.0,
                sizes: JumpSizeLaw::Dirac { size: vec![1.0] },
            },
            truncation: 0.0,
        }
    }

    pub fn compound_poisson(rate: f64, sizes: JumpSizeLaw, truncation: f64) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::LevySpec(format!("rate must be finite and >= 0, got {rate}")));
        }
        Self::inhomogeneous(Arc::new(move |_| rate), rate, sizes, truncation)
    }

    /// `ν_t = λ(t)·P` with `0 ≤ λ(t) ≤ rate_bound`.
    pub fn inhomogeneous(
        rate: RateFn,
        rate_bound: f64,
        sizes: JumpSizeLaw,
        truncation: f64,
    ) -> Result<Self> {
        sizes.validate()?;
        if !(rate_bound >= 0.0) || !rate_bound.is_finite() {
            return Err(Error::LevySpec(
                "rate function must have a finite upper bound".into(),
            ));
        }
        check_truncation(truncation)?;
        Ok(LevyMeasureSpec {
            kind: LevyKind::FiniteActivity {
                rate,
                rate_bound,
                sizes,
            },
            truncation,
        })
    }

    /// `ν(dz) = c|z|^{-1-α} dz` on `0 < |z| ≤ z_max`, sampled above `cutoff`.
    pub fn stable_like(
        scale: f64,
        alpha: f64,
        cutoff: f64,
        z_max: f64,
        truncation: f64,
    ) -> Result<Self> {
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::LevySpec("stable-like scale must be >= 0".into()));
        }
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::LevySpec(format!(
                "stable-like index must lie in (0, 2), got {alpha}"
            )));
        }
        if !(cutoff > 0.0 && cutoff < z_max && z_max.is_finite()) {
            return Err(Error::LevySpec(
                "need 0 < cutoff < z_max < ∞ for the stable-like measure".into(),
            ));
        }
        check_truncation(truncation)?;
        Ok(LevyMeasureSpec {
            kind: LevyKind::StableLike {
                scale,
                alpha,
                cutoff,
                z_max,
            },
            truncation,
        })
    }

    pub fn mark_dim(&self) -> usize {
        match &self.kind {
            LevyKind::FiniteActivity { sizes, .. } => sizes.dim(),
            LevyKind::StableLike { .. } => 1,
        }
    }

    /// Jumps with `|z| ≤ cutoff` are never sampled.
    pub fn cutoff(&self) -> f64 {
        match self.kind {
            LevyKind::FiniteActivity { .. } => 0.0,
            LevyKind::StableLike { cutoff, .. } => cutoff,
        }
    }

    pub fn is_trivial(&self) -> bool {
        match self.kind {
            LevyKind::FiniteActivity { rate_bound, .. } => rate_bound == 0.0,
            LevyKind::StableLike { scale, .. } => scale == 0.0,
        }
    }

    /// Intensity of sampled jumps at time `t`.
    pub fn sampling_rate(&self, t: f64) -> f64 {
        match &self.kind {
            LevyKind::FiniteActivity { rate, .. } => rate(t),
            LevyKind::StableLike {
                scale,
                alpha,
                cutoff,
                z_max,
            } => 2.0 * scale * (cutoff.powf(-alpha) - z_max.powf(-alpha)) / alpha,
        }
    }

    /// Upper envelope of [`sampling_rate`](Self::sampling_rate) on `[0, T]`.
    pub fn rate_bound(&self) -> f64 {
        match self.kind {
            LevyKind::FiniteActivity { rate_bound, .. } => rate_bound,
            LevyKind::StableLike { .. } => self.sampling_rate(0.0),
        }
    }

    /// Draws a sampled jump mark (conditional on a jump happening).
    pub fn sample_mark<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.kind {
            LevyKind::FiniteActivity { sizes, .. } => sizes.sample(rng),
            LevyKind::StableLike {
                alpha,
                cutoff,
                z_max,
                ..
            } => {
                let (a, b) = (cutoff.powf(-alpha), z_max.powf(-alpha));
                let u: f64 = rng.random();
                let r = (a - u * (a - b)).powf(-1.0 / alpha);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                vec![sign * r]
            }
        }
    }

    /// `∫_{lo < |z| ≤ hi} f(z) ν_t(dz)`.
    ///
    /// For the stable-like measure with `lo = 0` the integrand must be
    /// `O(|z|²)` at the origin; the radial variable is integrated after the
    /// substitution `|z| = w^{1/(2-α)}`, which makes such integrands smooth.
    pub fn integrate_shell(&self, t: f64, lo: f64, hi: f64, f: &dyn Fn(&[f64]) -> f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        match &self.kind {
            LevyKind::FiniteActivity { rate, sizes, .. } => {
                let lam = rate(t);
                if lam == 0.0 {
                    0.0
                } else {
                    lam * sizes.expect_in_shell(lo, hi, f)
                }
            }
            LevyKind::StableLike {
                scale,
                alpha,
                z_max,
                ..
            } => {
                let hi = hi.min(*z_max);
                if hi <= lo || *scale == 0.0 {
                    return 0.0;
                }
                let beta = 1.0 / (2.0 - alpha);
                let (w0, w1) = (lo.powf(1.0 / beta), hi.powf(1.0 / beta));
                gl_1d(w0, w1, |w| {
                    let r = w.powf(beta);
                    scale * beta * w.powf(-1.0 - beta * alpha) * (f(&[r]) + f(&[-r]))
                })
            }
        }
    }

    pub fn integrate_region(&self, t: f64, region: JumpRegion, f: &dyn Fn(&[f64]) -> f64) -> f64 {
        let (lo, hi) = region.shell();
        self.integrate_shell(t, lo, hi, f)
    }

    /// `∫_{|z| ≤ ε} |z|² ν_t(dz)` for the unsampled small jumps.
    pub fn unsampled_second_moment(&self) -> f64 {
        match self.kind {
            LevyKind::FiniteActivity { .. } => 0.0,
            LevyKind::StableLike {
                scale,
                alpha,
                cutoff,
                ..
            } => 2.0 * scale * cutoff.powf(2.0 - alpha) / (2.0 - alpha),
        }
    }

    /// Checks `∫₀ᵀ∫(|z|²1{|z|≤𝔯} + 1{|z|>𝔯}) ν_t(dz) dt < ∞` on `[0, T]`.
    pub fn check_integrability(&self, horizon: f64) -> Result<()> {
        match &self.kind {
            LevyKind::FiniteActivity {
                rate, rate_bound, ..
            } => {
                // finite total mass: the rate must stay in [0, bound]
                let probes = 257;
                for k in 0..probes {
                    let t = horizon * k as f64 / (probes - 1) as f64;
                    let lam = rate(t);
                    if !lam.is_finite() || lam < 0.0 || lam > rate_bound * (1.0 + 1e-12) {
                        return Err(Error::LevySpec(format!(
                            "rate λ({t}) = {lam} outside [0, {rate_bound}]"
                        )));
                    }
                }
                Ok(())
            }
            // |z|² c|z|^{-1-α} is integrable at 0 for α < 2 and the support is bounded
            LevyKind::StableLike { .. } => Ok(()),
        }
    }

    /// Rejects regions whose jumps are not (fully) sampled.
    pub fn check_region(&self, region: JumpRegion, compensated: bool) -> Result<()> {
        let (lo, _) = region.shell();
        let eps = self.cutoff();
        if eps > 0.0 && lo < eps && !compensated {
            return Err(Error::LevySpec(format!(
                "uncompensated integral over |z| > {lo} has infinitely many jumps (sampling cutoff {eps})"
            )));
        }
        if eps > 0.0 && lo > 0.0 && lo < eps {
            return Err(Error::LevySpec(format!(
                "region boundary {lo} lies inside the unsampled ball |z| <= {eps}"
            )));
        }
        Ok(())
    }
}

fn check_truncation(r: f64) -> Result<()> {
    if r.is_nan() || r < 0.0 {
        return Err(Error::LevySpec(format!(
            "truncation radius must lie in [0, ∞], got {r}"
        )));
    }
    Ok(())
}
