//! The grid random measures `M_D^Π`, `M_{B^(l)}^Π`, `M_J^Π` and the
//! compensator `μ_J^Π`.
//!
//! Every integral has two evaluations: one that walks the atoms of the
//! measure (simulation steps, jump events and their stored marks) and one
//! that sums interval by interval using `ξ_i` directly. They must agree up
//! to rounding; [`identity_holds`] is the comparison used in tests.
//!
//! Integrands are evaluated at step starts (left-endpoint rule), which is
//! the discrete form of predictability and the same rule the Euler solver
//! uses.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{JumpRegion, JumpSizeLaw, LevyMeasureSpec, Partition};
use crate::noise::{JumpEvent, Marks, NoisePanel};
use crate::rng::{sample_grid_randomization, RandomizationDraw};

/// A time-space field `Y_s(u)`.
pub type Field<'a> = &'a dyn Fn(f64, &[f64]) -> f64;
/// A jump field `Y_s(z, u)`.
pub type JumpField<'a> = &'a dyn Fn(f64, &[f64], &[f64]) -> f64;

#[derive(Debug, Clone)]
pub struct GridMeasurePanel {
    pub draw: RandomizationDraw,
    pub noise: NoisePanel,
    pub levy: LevyMeasureSpec,
}

impl GridMeasurePanel {
    /// Samples the noise of one path with grid marks from `draw`.
    pub fn sample(
        draw: RandomizationDraw,
        levy: LevyMeasureSpec,
        refine: usize,
        p: usize,
        seed: u64,
        path: u64,
    ) -> Result<Self> {
        let noise = NoisePanel::sample(
            &levy,
            &draw.partition,
            refine,
            p,
            Marks::Grid(&draw),
            seed,
            path,
        )?;
        Ok(GridMeasurePanel { draw, noise, levy })
    }

    /// Compensated jumps live on `{|z| ≤ 𝔯}` and only the sampled part of
    /// it is compensated; the unsampled ball is dropped on both sides.
    fn sampled_shell(&self, region: JumpRegion) -> (f64, f64) {
        let (lo, hi) = region.shell();
        (lo.max(self.levy.cutoff()), hi)
    }
}

/// Result of an integral together with `Σ|terms|`, the scale for rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_sum: f64,
}

impl Integral {
    fn zero() -> Self {
        Integral {
            value: 0.0,
            abs_sum: 0.0,
        }
    }

    fn add(&mut self, term: f64) {
        self.value += term;
        self.abs_sum += term.abs();
    }
}

/// `|a − b| ≤ 1e-12 · max(1, Σ|terms|)`.
pub fn identity_holds(a: Integral, b: Integral) -> bool {
    (a.value - b.value).abs() <= 1e-12 * a.abs_sum.max(b.abs_sum).max(1.0)
}

fn finite(term: f64, what: &str, i: usize, s: f64) -> Result<f64> {
    if term.is_finite() {
        Ok(term)
    } else {
        Err(Error::Numerical(format!(
            "{what} integrand not finite on interval {i} at s={s}"
        )))
    }
}

/// `∫∫ Y_s(u) M_D^Π(ds, du)`, atom side: each simulation step carries mass
/// `Δs` at `(s_k, ξ^Π_{s_{k+1}})`.
pub fn integrate_md(panel: &GridMeasurePanel, y: Field<'_>) -> Result<Integral> {
    let grid = &panel.noise.grid;
    let mut acc = Integral::zero();
    for k in 0..grid.steps() {
        let (s, s1) = (grid.times()[k], grid.times()[k + 1]);
        let u = panel.draw.lookup(s1).expect("grid inside [0, T]");
        acc.add(finite(y(s, u) * grid.dt(k), "M_D", grid.interval_of_step(k), s)?);
    }
    Ok(acc)
}

/// `Σ_i ∫_{t_{i-1}}^{t_i} Y_s(ξ_i) ds`.
pub fn integrate_md_by_interval(panel: &GridMeasurePanel, y: Field<'_>) -> Result<Integral> {
    let grid = &panel.noise.grid;
    let mut acc = Integral::zero();
    let mut k = 0;
    for i in 1..=panel.draw.n() {
        let xi = panel.draw.xi(i);
        let t_i = panel.draw.partition.points()[i];
        while k < grid.steps() && grid.times()[k] < t_i {
            let s = grid.times()[k];
            acc.add(finite(y(s, xi) * grid.dt(k), "M_D", i, s)?);
            k += 1;
        }
    }
    Ok(acc)
}

/// `∫∫ Y_s(u) M_{B^(l)}^Π(ds, du)`, atom side.
pub fn integrate_mb(panel: &GridMeasurePanel, l: usize, y: Field<'_>) -> Result<Integral> {
    check_component(panel, l)?;
    let grid = &panel.noise.grid;
    let mut acc = Integral::zero();
    for k in 0..grid.steps() {
        let (s, s1) = (grid.times()[k], grid.times()[k + 1]);
        let u = panel.draw.lookup(s1).expect("grid inside [0, T]");
        let db = panel.noise.db(k)[l];
        acc.add(finite(y(s, u) * db, "M_B", grid.interval_of_step(k), s)?);
    }
    Ok(acc)
}

/// `Σ_i ∫_{t_{i-1}}^{t_i} Y_s(ξ_i) dB^{(l)}_s`.
pub fn integrate_mb_by_interval(
    panel: &GridMeasurePanel,
    l: usize,
    y: Field<'_>,
) -> Result<Integral> {
    check_component(panel, l)?;
    let grid = &panel.noise.grid;
    let mut acc = Integral::zero();
    let mut k = 0;
    for i in 1..=panel.draw.n() {
        let xi = panel.draw.xi(i);
        let t_i = panel.draw.partition.points()[i];
        while k < grid.steps() && grid.times()[k] < t_i {
            let s = grid.times()[k];
            acc.add(finite(y(s, xi) * panel.noise.db(k)[l], "M_B", i, s)?);
            k += 1;
        }
    }
    Ok(acc)
}

fn check_component(panel: &GridMeasurePanel, l: usize) -> Result<()> {
    if l >= panel.noise.p {
        return Err(Error::Input(format!(
            "Brownian component {l} out of range (p = {})",
            panel.noise.p
        )));
    }
    Ok(())
}

/// `∫∫∫ Y_s(z,u) M_J^Π(ds,dz,du)` over `region`, optionally minus
/// `∫∫∫ Y μ_J^Π`. Atom side: jump events with their stored marks, and the
/// compensator as `Σ_k Δs ∫ Y_{s_k}(z, ξ^Π_{s_{k+1}}) ν_{s_k}(dz)`.
pub fn integrate_mj(
    panel: &GridMeasurePanel,
    y: JumpField<'_>,
    compensated: bool,
    region: JumpRegion,
) -> Result<Integral> {
    panel.levy.check_region(region, compensated)?;
    let mut acc = Integral::zero();
    for ev in &panel.noise.events {
        if region.contains(&ev.z) {
            let i = panel.draw.partition.interval_index(ev.t).unwrap_or(0);
            acc.add(finite(y(ev.t, &ev.z, &ev.u), "M_J", i, ev.t)?);
        }
    }
    if compensated {
        let (lo, hi) = panel.sampled_shell(region);
        let grid = &panel.noise.grid;
        for k in 0..grid.steps() {
            let (s, s1) = (grid.times()[k], grid.times()[k + 1]);
            let u = panel.draw.lookup(s1).expect("grid inside [0, T]");
            let c = panel.levy.integrate_shell(s, lo, hi, &|z| y(s, z, u));
            acc.add(finite(-c * grid.dt(k), "μ_J", grid.interval_of_step(k), s)?);
        }
    }
    Ok(acc)
}

/// `Σ_i [Σ_{t ∈ (t_{i-1}, t_i]} Y_t(ΔL_t, ξ_i) − ∫_{t_{i-1}}^{t_i}∫ Y_s(z, ξ_i) ν_s(dz) ds]`,
/// locating each jump's interval from its time.
pub fn integrate_mj_by_interval(
    panel: &GridMeasurePanel,
    y: JumpField<'_>,
    compensated: bool,
    region: JumpRegion,
) -> Result<Integral> {
    panel.levy.check_region(region, compensated)?;
    let part = &panel.draw.partition;
    let grid = &panel.noise.grid;
    let (lo, hi) = panel.sampled_shell(region);
    let mut acc = Integral::zero();
    let mut k = 0;
    let mut events = panel.noise.events.iter().peekable();
    for i in 1..=panel.draw.n() {
        let xi = panel.draw.xi(i);
        let (t0, t1) = part.interval(i);
        while let Some(ev) = events.next_if(|e| e.t > t0 && e.t <= t1) {
            if region.contains(&ev.z) {
                acc.add(finite(y(ev.t, &ev.z, xi), "M_J", i, ev.t)?);
            }
        }
        if compensated {
            while k < grid.steps() && grid.times()[k] < t1 {
                let s = grid.times()[k];
                let c = panel.levy.integrate_shell(s, lo, hi, &|z| y(s, z, xi));
                acc.add(finite(-c * grid.dt(k), "μ_J", i, s)?);
                k += 1;
            }
        }
    }
    if events.next().is_some() {
        return Err(Error::Input("jump events are not time-ordered inside (0, T]".into()));
    }
    Ok(acc)
}

/// `∫∫∫ Y M_J` against an event list with independent uniform marks (the
/// limit measure).
pub fn integrate_events(events: &[JumpEvent], y: JumpField<'_>) -> f64 {
    events.iter().map(|e| y(e.t, &e.z, &e.u)).sum()
}

/// One atom-side vs interval-side comparison.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    pub measure: &'static str,
    pub instance: usize,
    pub atom_side: f64,
    pub interval_side: f64,
    pub scale: f64,
    pub holds: bool,
}

/// Randomized instances of the three grid-measure identities: a random
/// partition of a random horizon, refinement, control and Brownian
/// dimensions, jump rate and integrand coefficients per instance. Stream
/// `("identity", instance)`.
pub fn identity_suite(seed: u64, instances: usize) -> Result<Vec<IdentityCheck>> {
    let mut out = Vec::with_capacity(3 * instances);
    for i in 0..instances {
        let mut rng = crate::rng::stream(seed, "identity", i as u64);
        let horizon = rng.random_range(0.5..3.0);
        let n = rng.random_range(2..40usize);
        let mut pts: Vec<f64> = (0..n - 1).map(|_| rng.random_range(0.0..horizon)).collect();
        pts.push(0.0);
        pts.push(horizon);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let part = Partition::new(pts)?;
        let d = rng.random_range(1..4usize);
        let p = rng.random_range(1..4usize);
        let refine = rng.random_range(1..6usize);
        let draw = sample_grid_randomization(&part, d, &mut rng);
        let levy = LevyMeasureSpec::compound_poisson(
            rng.random_range(0.5..8.0),
            JumpSizeLaw::Gaussian {
                mean: rng.random_range(-0.5..0.5),
                std: rng.random_range(0.2..1.5),
            },
            rng.random_range(0.3..2.0),
        )?;
        let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let l = rng.random_range(0..p);
        let panel = GridMeasurePanel::sample(draw, levy, refine, p, seed, i as u64)?;
        let y = |s: f64, u: &[f64]| c[0] * (c[1] * s + u[0]).sin() + c[2] * u[d - 1] * u[d - 1] + c[3];
        let yj = |s: f64, z: &[f64], u: &[f64]| (c[0] + c[1] * u[0]) * z[0] + c[2] * (s * z[0]).cos() * u[d - 1];
        let region = [JumpRegion::Small(1.0), JumpRegion::Large(1.0), JumpRegion::All][i % 3];
        let compensated = !matches!(region, JumpRegion::Large(_)) || i % 2 == 0;
        let pairs = [
            ("drift", integrate_md(&panel, &y)?, integrate_md_by_interval(&panel, &y)?),
            ("brownian", integrate_mb(&panel, l, &y)?, integrate_mb_by_interval(&panel, l, &y)?),
            (
                "jump",
                integrate_mj(&panel, &yj, compensated, region)?,
                integrate_mj_by_interval(&panel, &yj, compensated, region)?,
            ),
        ];
        for (measure, a, b) in pairs {
            out.push(IdentityCheck {
                measure,
                instance: i,
                atom_side: a.value,
                interval_side: b.value,
                scale: a.abs_sum.max(b.abs_sum),
                holds: identity_holds(a, b),
            });
        }
    }
    Ok(out)
}
