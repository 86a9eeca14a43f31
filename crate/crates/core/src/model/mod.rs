//! The controlled jump-diffusion
//! `dX = b(t,X,y)dt + a(t,X,y)dB + ∫γ(t,X,y,z)(N − 1{|z|≤𝔯}ν)(dt,dz)`
//! and its inputs.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};

pub mod builtin;
pub mod levy;
pub mod normal;
pub mod partition;
pub mod policy;

pub use builtin::{builtin, Scenario, BUILTIN_IDS};
pub use levy::{JumpRegion, JumpSizeLaw, LevyKind, LevyMeasureSpec};
pub use partition::Partition;
pub use policy::{PushforwardReport, RandomizedPolicy, RelaxedDensity};

/// `(t, x, y, out)`, `out ∈ ℝ^m`.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, y, out)`, `out` is `m × p` row-major.
pub type DiffusionFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, y, z, out)`, `out ∈ ℝ^m`.
pub type JumpFn = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    /// state
    pub m: usize,
    /// Brownian
    pub p: usize,
    /// control
    pub d: usize,
    /// jump mark
    pub q: usize,
}

impl Dimensions {
    pub fn new(m: usize, p: usize, d: usize, q: usize) -> Result<Self> {
        if m == 0 || p == 0 || d == 0 || q == 0 {
            return Err(Error::Input(format!(
                "all dimensions must be >= 1 (m={m}, p={p}, d={d}, q={q})"
            )));
        }
        Ok(Dimensions { m, p, d, q })
    }

    pub fn scalar() -> Self {
        Dimensions {
            m: 1,
            p: 1,
            d: 1,
            q: 1,
        }
    }
}

#[derive(Clone)]
pub struct JumpDiffusionModel {
    pub name: String,
    pub dims: Dimensions,
    pub horizon: f64,
    pub x0: Vec<f64>,
    drift: DriftFn,
    diffusion: DiffusionFn,
    jump: Option<JumpFn>,
    pub levy: LevyMeasureSpec,
}

impl fmt::Debug for JumpDiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpDiffusionModel")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .field("horizon", &self.horizon)
            .field("x0", &self.x0)
            .field("has_jumps", &self.has_jumps())
            .field("levy", &self.levy)
            .finish()
    }
}

/// `b(t,x,y)` and `a(t,x,y)` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub drift: Vec<f64>,
    /// `m × p`, row-major.
    pub diffusion: Vec<f64>,
}

impl JumpDiffusionModel {
    /// A pure diffusion; add jumps with [`with_jumps`](Self::with_jumps).
    pub fn new(
        name: impl Into<String>,
        dims: Dimensions,
        horizon: f64,
        x0: Vec<f64>,
        drift: DriftFn,
        diffusion: DiffusionFn,
    ) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Input(format!("horizon must be positive, got {horizon}")));
        }
        if x0.len() != dims.m {
            return Err(Error::Input(format!(
                "x0 has length {}, state dimension is {}",
                x0.len(),
                dims.m
            )));
        }
        check_finite("x0", 0.0, &x0)?;
        Ok(JumpDiffusionModel {
            name: name.into(),
            dims,
            horizon,
            x0,
            drift,
            diffusion,
            jump: None,
            levy: LevyMeasureSpec::none(),
        })
    }

    pub fn with_jumps(mut self, jump: JumpFn, levy: LevyMeasureSpec) -> Result<Self> {
        if levy.mark_dim() != self.dims.q {
            return Err(Error::LevySpec(format!(
                "jump marks have dimension {}, model declares q = {}",
                levy.mark_dim(),
                self.dims.q
            )));
        }
        levy.check_integrability(self.horizon)?;
        self.jump = Some(jump);
        self.levy = levy;
        Ok(self)
    }

    pub fn has_jumps(&self) -> bool {
        self.jump.is_some() && !self.levy.is_trivial()
    }

    #[inline]
    pub fn drift_into(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, y, out)
    }

    #[inline]
    pub fn diffusion_into(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, y, out)
    }

    /// `γ(t,x,y,z)`; zero when the model has no jump map.
    #[inline]
    pub fn jump_into(&self, t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        match &self.jump {
            Some(g) => g(t, x, y, z, out),
            None => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    /// Checked evaluation of `b(t,x,y)` and `a(t,x,y)`.
    pub fn eval_coeffs(&self, t: f64, x: &[f64], y: &[f64]) -> Result<Coefficients> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Input(format!(
                "t = {t} outside [0, {}]",
                self.horizon
            )));
        }
        if x.len() != self.dims.m || y.len() != self.dims.d {
            return Err(Error::Input(format!(
                "expected x ∈ ℝ^{} and y ∈ ℝ^{}, got lengths {} and {}",
                self.dims.m,
                self.dims.d,
                x.len(),
                y.len()
            )));
        }
        let mut drift = vec![0.0; self.dims.m];
        let mut diffusion = vec![0.0; self.dims.m * self.dims.p];
        self.drift_into(t, x, y, &mut drift);
        self.diffusion_into(t, x, y, &mut diffusion);
        check_finite("drift", t, &drift)?;
        check_finite("diffusion", t, &diffusion)?;
        Ok(Coefficients { drift, diffusion })
    }
}
