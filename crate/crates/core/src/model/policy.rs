//! Randomized controls `𝐡(t, x, u)` executing relaxed controls.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use super::normal::inv_norm_cdf;
use crate::error::{Error, Result};
use crate::quad::{adaptive_simpson, gauss_legendre_interval};

/// `(t, x, u, out)` with `out ∈ ℝ^d`.
pub type ExecutorFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type DensityFn = Arc<dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync>;
pub type SupportFn = Arc<dyn Fn(f64, &[f64]) -> (f64, f64) + Send + Sync>;
pub type EntropyFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Lebesgue density `ḣ(t, x, ·)` of a scalar relaxed control, together with
/// an interval outside which it is numerically zero.
#[derive(Clone)]
pub struct RelaxedDensity {
    pub pdf: DensityFn,
    pub support: SupportFn,
}

/// Mass tolerance for a relaxed density over its declared support.
const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Clone)]
pub struct RandomizedPolicy {
    pub name: String,
    d: usize,
    executor: ExecutorFn,
    density: Option<RelaxedDensity>,
    entropy: Option<EntropyFn>,
    u_free: bool,
}

impl fmt::Debug for RandomizedPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RandomizedPolicy")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("has_density", &self.density.is_some())
            .field("has_entropy", &self.entropy.is_some())
            .finish()
    }
}

impl RandomizedPolicy {
    pub fn new(name: impl Into<String>, d: usize, executor: ExecutorFn) -> Self {
        RandomizedPolicy {
            name: name.into(),
            d,
            executor,
            density: None,
            entropy: None,
            u_free: false,
        }
    }

    pub fn with_density(mut self, density: RelaxedDensity) -> Self {
        self.density = Some(density);
        self
    }

    pub fn with_entropy(mut self, entropy: EntropyFn) -> Self {
        self.entropy = Some(entropy);
        self
    }

    /// `𝐡(t, x, u) = μ + σ Φ⁻¹(u¹)`, executing `N(μ, σ²)`.
    pub fn gaussian(mu: f64, sigma: f64) -> Result<Self> {
        Self::gaussian_feedback(Arc::new(move |_, _| mu), sigma)
            .map(|p| p.named(format!("gaussian(mu={mu},sigma={sigma})")))
    }

    /// `N(m(t,x), σ²)` with a state-dependent mean.
    pub fn gaussian_feedback(
        mean: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
        sigma: f64,
    ) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::PolicySpec(format!(
                "Gaussian executor needs sigma > 0, got {sigma}"
            )));
        }
        let m1 = mean.clone();
        let m2 = mean.clone();
        let m3 = mean;
        let executor: ExecutorFn = Arc::new(move |t, x, u, out| {
            out[0] = m1(t, x) + sigma * inv_norm_cdf(u[0]);
        });
        let density = RelaxedDensity {
            pdf: Arc::new(move |t, x, y| {
                let s = (y - m2(t, x)) / sigma;
                (-0.5 * s * s).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            }),
            support: Arc::new(move |t, x| {
                let m = m3(t, x);
                (m - 12.0 * sigma, m + 12.0 * sigma)
            }),
        };
        let h = gaussian_entropy(sigma);
        Ok(RandomizedPolicy::new("gaussian", 1, executor)
            .with_density(density)
            .with_entropy(Arc::new(move |_, _| h)))
    }

    /// `𝐡(t, x, u) = u`, executing the uniform law on `[0,1]^d`.
    pub fn uniform_identity(d: usize) -> Self {
        let p = RandomizedPolicy::new(
            "uniform",
            d,
            Arc::new(|_, _, u, out: &mut [f64]| out.copy_from_slice(u)),
        );
        if d == 1 {
            p.with_density(RelaxedDensity {
                pdf: Arc::new(|_, _, y| if (0.0..=1.0).contains(&y) { 1.0 } else { 0.0 }),
                support: Arc::new(|_, _| (0.0, 1.0)),
            })
            .with_entropy(Arc::new(|_, _| 0.0))
        } else {
            p
        }
    }

    /// Classical feedback control, no dependence on `u`.
    pub fn feedback(
        d: usize,
        control: Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>,
    ) -> Self {
        let mut p = RandomizedPolicy::new(
            "feedback",
            d,
            Arc::new(move |t, x, _, out: &mut [f64]| control(t, x, out)),
        );
        p.u_free = true;
        p
    }

    pub fn constant(y: Vec<f64>) -> Self {
        let d = y.len();
        RandomizedPolicy::feedback(d, Arc::new(move |_, _, out: &mut [f64]| out.copy_from_slice(&y)))
            .named("constant")
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn control_dim(&self) -> usize {
        self.d
    }

    /// True when the executor ignores `u`.
    pub fn is_u_free(&self) -> bool {
        self.u_free
    }

    pub fn density(&self) -> Option<&RelaxedDensity> {
        self.density.as_ref()
    }

    #[inline]
    pub fn execute_into(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.executor)(t, x, u, out)
    }

    pub fn execute(&self, t: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.execute_into(t, x, u, &mut out);
        out
    }

    fn require_density(&self) -> Result<&RelaxedDensity> {
        if self.d != 1 {
            return Err(Error::PolicySpec(format!(
                "relaxed densities are scalar; policy `{}` has d = {}",
                self.name, self.d
            )));
        }
        self.density.as_ref().ok_or_else(|| {
            Error::PolicySpec(format!("policy `{}` has no relaxed density", self.name))
        })
    }

    /// `ḣ(t, x, y)`.
    pub fn density_at(&self, t: f64, x: &[f64], y: f64) -> Result<f64> {
        Ok((self.require_density()?.pdf)(t, x, y))
    }

    /// Shannon entropy `−∫ ḣ log ḣ dy` of the relaxed control at `(t, x)`.
    pub fn entropy(&self, t: f64, x: &[f64]) -> Result<f64> {
        if let Some(h) = &self.entropy {
            return Ok(h(t, x));
        }
        let dens = self.require_density()?;
        let (lo, hi) = (dens.support)(t, x);
        let integrand = |y: f64| {
            let p = (dens.pdf)(t, x, y);
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        };
        adaptive_simpson(integrand, lo, hi, 1e-10)
            .map_err(|e| Error::Entropy(format!("policy `{}`: {e}", self.name)))
    }

    /// Kolmogorov–Smirnov distance between the law of `𝐡(t, x, U)` and the
    /// relaxed density. The reference CDF is built on `bins` cells of the
    /// density's support.
    pub fn pushforward_check<R: Rng + ?Sized>(
        &self,
        t: f64,
        x: &[f64],
        n_samples: usize,
        bins: usize,
        rng: &mut R,
    ) -> Result<PushforwardReport> {
        let dens = self.require_density()?;
        if n_samples == 0 || bins == 0 {
            return Err(Error::Input("pushforward check needs samples and bins".into()));
        }
        let (lo, hi) = (dens.support)(t, x);
        if !(lo < hi) {
            return Err(Error::PolicySpec(format!("empty support [{lo}, {hi}]")));
        }
        // cumulative mass at cell edges, 8-point GL per cell
        let width = (hi - lo) / bins as f64;
        let mut cdf = Vec::with_capacity(bins + 1);
        cdf.push(0.0);
        for k in 0..bins {
            let a = lo + width * k as f64;
            let (ys, ws) = gauss_legendre_interval(a, a + width, 8);
            let m: f64 = ys.iter().zip(&ws).map(|(&y, &w)| w * (dens.pdf)(t, x, y)).sum();
            cdf.push(cdf[k] + m);
        }
        let mass = cdf[bins];
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::PolicySpec(format!(
                "relaxed density of `{}` integrates to {mass} over [{lo}, {hi}]",
                self.name
            )));
        }
        let reference = |y: f64| {
            if y <= lo {
                return 0.0;
            }
            if y >= hi {
                return 1.0;
            }
            let s = (y - lo) / width;
            let k = (s.floor() as usize).min(bins - 1);
            let frac = s - k as f64;
            (cdf[k] + frac * (cdf[k + 1] - cdf[k])) / mass
        };

        let mut u = vec![0.0; self.d];
        let mut out = vec![0.0; self.d];
        let mut samples: Vec<f64> = (0..n_samples)
            .map(|_| {
                u.iter_mut().for_each(|v| *v = rng.random());
                self.execute_into(t, x, &u, &mut out);
                out[0]
            })
            .collect();
        samples.sort_by(|a, b| a.total_cmp(b));
        let n = n_samples as f64;
        let statistic = samples
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let f = reference(y);
                ((i + 1) as f64 / n - f).max(f - i as f64 / n)
            })
            .fold(0.0, f64::max);
        Ok(PushforwardReport {
            statistic,
            threshold_99: KS_CRITICAL_99 / n.sqrt(),
            n_samples,
        })
    }
}

/// Asymptotic 99% quantile of the Kolmogorov distribution.
pub const KS_CRITICAL_99: f64 = 1.627_624;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PushforwardReport {
    pub statistic: f64,
    pub threshold_99: f64,
    pub n_samples: usize,
}

impl PushforwardReport {
    pub fn passes(&self) -> bool {
        self.statistic <= self.threshold_99
    }
}

/// `½ ln(2πeσ²)`.
pub fn gaussian_entropy(sigma: f64) -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_executor_matches_density() {
        let p = RandomizedPolicy::gaussian(0.3, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = p.pushforward_check(0.0, &[0.0], 100_000, 4000, &mut rng).unwrap();
        assert!(r.passes(), "{r:?}");
    }

    #[test]
    fn identity_executor_against_uniform() {
        let p = RandomizedPolicy::uniform_identity(1);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let r = p.pushforward_check(0.0, &[0.0], 200_000, 100, &mut rng).unwrap();
        assert!(r.statistic < 0.005, "{r:?}");
    }

    #[test]
    fn mismatched_scale_is_detected() {
        let base = RandomizedPolicy::gaussian(0.0, 2.0).unwrap();
        let wrong = RandomizedPolicy::gaussian(0.0, 1.0).unwrap();
        let p = RandomizedPolicy::new("mismatch", 1, base.executor.clone())
            .with_density(wrong.density.clone().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let r = p.pushforward_check(0.0, &[0.0], 100_000, 4000, &mut rng).unwrap();
        assert!(!r.passes());
    }

    #[test]
    fn unnormalized_density_is_rejected() {
        let p = RandomizedPolicy::new("bad", 1, Arc::new(|_, _, u, out: &mut [f64]| out[0] = u[0]))
            .with_density(RelaxedDensity {
                pdf: Arc::new(|_, _, _| 2.0),
                support: Arc::new(|_, _| (0.0, 1.0)),
            });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            p.pushforward_check(0.0, &[0.0], 10, 10, &mut rng),
            Err(Error::PolicySpec(_))
        ));
    }

    #[test]
    fn entropy_without_closed_form_uses_quadrature() {
        let g = RandomizedPolicy::gaussian(0.0, 2.0).unwrap();
        let numeric = RandomizedPolicy::new("g2", 1, g.executor.clone())
            .with_density(g.density.clone().unwrap());
        let h = numeric.entropy(0.0, &[0.0]).unwrap();
        assert!((h - 2.112_085_713_764_618).abs() < 1e-8, "{h}");
        let u = RandomizedPolicy::uniform_identity(1);
        assert_eq!(u.entropy(0.0, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn density_required() {
        let p = RandomizedPolicy::constant(vec![1.0]);
        assert!(matches!(p.entropy(0.0, &[0.0]), Err(Error::PolicySpec(_))));
        assert!(p.is_u_free());
    }
}
