//! Named scenario models.
//!
//! | id               | dynamics                                   | policies              |
//! |------------------|--------------------------------------------|-----------------------|
//! | `two_controls`   | `b = 0`, `a = y`                           | `N(μ₁,σ₁²)`, `N(μ₂,σ₂²)` |
//! | `linear_control` | `b = b0 + b1 y`, `a = a0 + a1 y`           | `N(μ,σ²)`             |
//! | `jump_linear`    | `b = −κx + y`, `a = σ0`, `γ = z`           | `N(μ,σ²)`             |
//! | `td0_bench`      | `b = 0`, `a = y`                           | `N(μ,σ²)`             |
//!
//! All coefficients are globally Lipschitz in `x` with constant `κ`
//! (`jump_linear`) or `0` (the others) and grow at most linearly in `y`.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::levy::{JumpSizeLaw, LevyMeasureSpec};
use super::policy::RandomizedPolicy;
use super::{Dimensions, JumpDiffusionModel};
use crate::error::{Error, Result};

pub const BUILTIN_IDS: [&str; 4] = ["two_controls", "linear_control", "jump_linear", "td0_bench"];

/// A built-in model together with its policies and default grid sizes.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub model: JumpDiffusionModel,
    pub policies: Vec<RandomizedPolicy>,
    /// Resolved parameters, defaults merged with overrides.
    pub params: BTreeMap<String, f64>,
    /// Default number of sampling intervals of `Π`.
    pub intervals: usize,
    /// Default simulation steps per sampling interval.
    pub refine: usize,
}

impl Scenario {
    pub fn param(&self, key: &str) -> f64 {
        self.params[key]
    }
}

pub fn default_params(id: &str) -> Result<BTreeMap<String, f64>> {
    let pairs: &[(&str, f64)] = match id {
        "two_controls" => &[
            ("mu1", 1.0),
            ("sigma1", 1.0),
            ("mu2", -0.5),
            ("sigma2", 2.0),
            ("horizon", 1.0),
            ("x0", 0.0),
        ],
        "linear_control" => &[
            ("a0", 0.0),
            ("a1", 1.0),
            ("b0", 0.0),
            ("b1", 0.0),
            ("mu", 0.0),
            ("sigma", 1.0),
            ("horizon", 1.0),
            ("x0", 0.0),
        ],
        "jump_linear" => &[
            ("kappa", 1.0),
            ("sigma0", 0.5),
            ("rate", 2.0),
            ("jump_mean", 0.0),
            ("jump_std", 0.5),
            ("truncation", 1.0),
            ("mu", 0.0),
            ("sigma", 1.0),
            ("horizon", 1.0),
            ("x0", 0.0),
        ],
        "td0_bench" => &[
            ("mu", 0.0),
            ("sigma", 1.0),
            ("lambda", 0.1),
            ("horizon", 4.0),
            ("x0", 0.0),
        ],
        other => {
            return Err(Error::Config(format!(
                "unknown model `{other}`; known: {}",
                BUILTIN_IDS.join(", ")
            )))
        }
    };
    Ok(pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect())
}

/// Builds a registered model, overriding default parameters by name.
pub fn builtin(id: &str, overrides: &BTreeMap<String, f64>) -> Result<Scenario> {
    let mut params = default_params(id)?;
    for (k, v) in overrides {
        match params.get_mut(k) {
            Some(slot) => *slot = *v,
            None => {
                return Err(Error::Config(format!(
                    "model `{id}` has no parameter `{k}`; known: {}",
                    params.keys().cloned().collect::<Vec<_>>().join(", ")
                )))
            }
        }
    }
    if let Some((k, v)) = params.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Config(format!("parameter `{k}` = {v} is not finite")));
    }
    let p = |k: &str| params[k];
    let horizon = p("horizon");
    let x0 = vec![p("x0")];
    let zero_drift: super::DriftFn = Arc::new(|_, _, _, out: &mut [f64]| out[0] = 0.0);
    let control_vol: super::DiffusionFn = Arc::new(|_, _, y, out: &mut [f64]| out[0] = y[0]);

    let (model, policies, intervals, refine) = match id {
        "two_controls" => {
            let m = JumpDiffusionModel::new(
                id,
                Dimensions::scalar(),
                horizon,
                x0,
                zero_drift,
                control_vol,
            )?;
            let pol = vec![
                RandomizedPolicy::gaussian(p("mu1"), p("sigma1"))?,
                RandomizedPolicy::gaussian(p("mu2"), p("sigma2"))?,
            ];
            (m, pol, 256, 1)
        }
        "linear_control" => {
            let (a0, a1, b0, b1) = (p("a0"), p("a1"), p("b0"), p("b1"));
            let m = JumpDiffusionModel::new(
                id,
                Dimensions::scalar(),
                horizon,
                x0,
                Arc::new(move |_, _, y, out: &mut [f64]| out[0] = b0 + b1 * y[0]),
                Arc::new(move |_, _, y, out: &mut [f64]| out[0] = a0 + a1 * y[0]),
            )?;
            (m, vec![RandomizedPolicy::gaussian(p("mu"), p("sigma"))?], 64, 8)
        }
        "jump_linear" => {
            let (kappa, s0) = (p("kappa"), p("sigma0"));
            let levy = LevyMeasureSpec::compound_poisson(
                p("rate"),
                JumpSizeLaw::Gaussian {
                    mean: p("jump_mean"),
                    std: p("jump_std"),
                },
                p("truncation"),
            )?;
            let m = JumpDiffusionModel::new(
                id,
                Dimensions::scalar(),
                horizon,
                x0,
                Arc::new(move |_, x, y, out: &mut [f64]| out[0] = -kappa * x[0] + y[0]),
                Arc::new(move |_, _, _, out: &mut [f64]| out[0] = s0),
            )?
            .with_jumps(Arc::new(|_, _, _, z, out: &mut [f64]| out[0] = z[0]), levy)?;
            (m, vec![RandomizedPolicy::gaussian(p("mu"), p("sigma"))?], 64, 8)
        }
        "td0_bench" => {
            if !(p("lambda") >= 0.0) {
                return Err(Error::Config("td0_bench needs lambda >= 0".into()));
            }
            let m = JumpDiffusionModel::new(
                id,
                Dimensions::scalar(),
                horizon,
                x0,
                zero_drift,
                control_vol,
            )?;
            (m, vec![RandomizedPolicy::gaussian(p("mu"), p("sigma"))?], 32, 1)
        }
        _ => unreachable!("default_params rejects unknown ids"),
    };
    Ok(Scenario {
        id: id.to_string(),
        model,
        policies,
        params,
        intervals,
        refine,
    })
}
