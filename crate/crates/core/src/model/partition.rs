use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid `0 = t_0 < t_1 < … < t_n = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    points: Vec<f64>,
}

impl Partition {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Input("partition needs at least two points".into()));
        }
        if points[0] != 0.0 {
            return Err(Error::Input(format!(
                "partition must start at 0, got {}",
                points[0]
            )));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::Input("partition points must be finite".into()));
        }
        if let Some(w) = points.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Input(format!(
                "partition not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Partition { points })
    }

    pub fn equidistant(horizon: f64, n: usize) -> Result<Self> {
        if n == 0 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Input(format!(
                "equidistant partition needs n >= 1 and T > 0 (n={n}, T={horizon})"
            )));
        }
        let mut points: Vec<f64> = (0..=n).map(|i| horizon * i as f64 / n as f64).collect();
        points[n] = horizon;
        Partition::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of intervals.
    pub fn n(&self) -> usize {
        self.points.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.points[self.n()]
    }

    pub fn mesh(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Interval `(t_{i-1}, t_i]`, as the pair of endpoints; `i` is 1-based.
    pub fn interval(&self, i: usize) -> (f64, f64) {
        (self.points[i - 1], self.points[i])
    }

    /// 1-based index `i` with `t ∈ (t_{i-1}, t_i]`. `t = 0` maps to the first
    /// interval, which is where a left-continuous step process takes its
    /// value at time zero.
    pub fn interval_index(&self, t: f64) -> Option<usize> {
        if t < 0.0 || t > self.horizon() {
            return None;
        }
        if t == 0.0 {
            return Some(1);
        }
        // first grid point >= t
        let k = self.points.partition_point(|&p| p < t);
        Some(k.max(1))
    }

    /// `ρ_n(t) = max{t_i : t_i ≤ t}`.
    pub fn rho(&self, t: f64) -> f64 {
        self.points[self.sigma(t)]
    }

    /// `σ_n(t) = max{i : t_i ≤ t}`.
    pub fn sigma(&self, t: f64) -> usize {
        self.points.partition_point(|&p| p <= t).saturating_sub(1)
    }

    /// Every point of `self` also appears in `other`.
    pub fn is_refined_by(&self, other: &[f64]) -> bool {
        self.points.iter().all(|p| {
            other
                .binary_search_by(|q| q.partial_cmp(p).unwrap())
                .is_ok()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(Partition::new(vec![0.0]).is_err());
        assert!(Partition::new(vec![0.1, 1.0]).is_err());
        assert!(Partition::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(Partition::equidistant(1.0, 0).is_err());
    }

    #[test]
    fn half_open_interval_lookup() {
        let p = Partition::equidistant(1.0, 4).unwrap();
        assert_eq!(p.interval_index(0.25), Some(1));
        assert_eq!(p.interval_index(0.25 + 1e-12), Some(2));
        assert_eq!(p.interval_index(1.0), Some(4));
        assert_eq!(p.interval_index(0.0), Some(1));
        assert_eq!(p.interval_index(1.5), None);
        assert!((p.mesh() - 0.25).abs() < 1e-15);
        assert_eq!(p.sigma(0.3), 1);
        assert_eq!(p.sigma(0.5), 2);
        assert_eq!(p.rho(0.99), 0.75);
    }
}
