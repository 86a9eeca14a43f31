//! Quadrature rules: Gauss–Legendre on intervals, tensor rules on the unit
//! cube `[0,1]^d` for `du`-integrals, and an adaptive Simpson integrator for
//! densities with a known support.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]`, Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss–Legendre rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss–Legendre rule mapped onto `[a, b]`.
pub fn gauss_legendre_interval(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|xi| mid + half * xi).collect(),
        w.iter().map(|wi| half * wi).collect(),
    )
}

/// How `∫_{[0,1]^d} · du` is discretised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuadratureSpec {
    /// Tensor Gauss–Legendre. With `endpoint_map`, each axis is integrated
    /// in `v` with `u = v^4/(v^4+(1-v)^4)`, which clusters nodes at 0 and 1
    /// and tames the logarithmic blow-up of `Φ⁻¹` there.
    GaussLegendre { nodes_per_axis: usize, endpoint_map: bool },
    /// Equal-weight pseudo-random nodes from a fixed seed.
    MonteCarlo { nodes: usize, seed: u64 },
}

impl QuadratureSpec {
    /// 64 mapped GL nodes per axis for `d <= 2`, 2^16 Monte-Carlo nodes beyond.
    pub fn default_for_dim(d: usize) -> Self {
        if d <= 2 {
            QuadratureSpec::GaussLegendre {
                nodes_per_axis: 64,
                endpoint_map: true,
            }
        } else {
            QuadratureSpec::MonteCarlo {
                nodes: 1 << 16,
                seed: 0x5eed_cafe,
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            QuadratureSpec::GaussLegendre { nodes_per_axis, .. } if *nodes_per_axis == 0 => Err(
                Error::Config("quadrature needs at least one node per axis".into()),
            ),
            QuadratureSpec::MonteCarlo { nodes, .. } if *nodes == 0 => {
                Err(Error::Config("Monte-Carlo quadrature needs nodes".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self, d: usize) -> Result<UnitCubeRule> {
        self.validate()?;
        match *self {
            QuadratureSpec::GaussLegendre {
                nodes_per_axis,
                endpoint_map,
            } => Ok(UnitCubeRule::tensor(d, nodes_per_axis, endpoint_map)),
            QuadratureSpec::MonteCarlo { nodes, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let points = (0..nodes * d).map(|_| rng.random::<f64>()).collect();
                Ok(UnitCubeRule {
                    dim: d,
                    points,
                    weights: vec![1.0 / nodes as f64; nodes],
                })
            }
        }
    }
}

/// A concrete rule on `[0,1]^d`; points are stored row-major.
#[derive(Debug, Clone)]
pub struct UnitCubeRule {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl UnitCubeRule {
    fn axis_rule(n: usize, endpoint_map: bool) -> (Vec<f64>, Vec<f64>) {
        let (v, w) = gauss_legendre_interval(0.0, 1.0, n);
        if !endpoint_map {
            return (v, w);
        }
        v.iter()
            .zip(&w)
            .map(|(&v, &w)| {
                let (a, b) = (v.powi(4), (1.0 - v).powi(4));
                let den = a + b;
                let du = 4.0 * (v * (1.0 - v)).powi(3) / (den * den);
                (a / den, w * du)
            })
            .unzip()
    }

    /// Tensor GL rule with `n` nodes per axis.
    pub fn tensor_rule(d: usize, n: usize, endpoint_map: bool) -> Self {
        Self::tensor(d, n, endpoint_map)
    }

    fn tensor(d: usize, n: usize, endpoint_map: bool) -> Self {
        let (x, w) = Self::axis_rule(n, endpoint_map);
        let total = n.pow(d as u32);
        let mut points = Vec::with_capacity(total * d);
        let mut weights = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut wt = 1.0;
            for _ in 0..d {
                let k = rem % n;
                rem /= n;
                points.push(x[k]);
                wt *= w[k];
            }
            weights.push(wt);
        }
        UnitCubeRule {
            dim: d,
            points,
            weights,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points
            .chunks(self.dim.max(1))
            .zip(self.weights.iter().copied())
    }

    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        self.iter().map(|(u, w)| w * f(u)).sum()
    }
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    const MAX_DEPTH: u32 = 48;
    let fa = f(a);
    let fm = f(0.5 * (a + b));
    let fb = f(b);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut failed = false;
    let v = simpson_step(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH, &mut failed);
    if failed || !v.is_finite() {
        return Err(Error::Numerical(format!(
            "adaptive quadrature on [{a}, {b}] did not reach tolerance {tol:e}"
        )));
    }
    Ok(v)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    failed: &mut bool,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    if depth == 0 {
        *failed = true;
        return left + right;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, failed)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, failed)
}
