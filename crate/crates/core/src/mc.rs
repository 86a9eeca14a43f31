//! Monte-Carlo plumbing: ordered parallel maps over path indices and
//! sample summaries.
//!
//! Results are always collected in path-index order and reduced
//! sequentially, so the output does not depend on the number of threads.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;

/// `f(0), …, f(n-1)` in parallel, returned in index order. The first error
/// by index wins.
pub fn par_map_paths<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = (0..n as u64).into_par_iter().map(&f).collect();
    results.into_iter().collect()
}

/// Mean, sample variance and standard error, two-pass in slice order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
    pub se: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Summary {
                n,
                mean: f64::NAN,
                var: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Summary {
            n,
            mean,
            var,
            se: (var / n as f64).sqrt(),
        }
    }
}

/// Sample correlation of two equally long series.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let (sx, sy) = (Summary::of(x), Summary::of(y));
    let cov = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - sx.mean) * (b - sy.mean))
        .sum::<f64>()
        / (x.len() - 1) as f64;
    cov / (sx.var * sy.var).sqrt()
}

/// Sample central moments `E[X]`, `E[X²]`, `E[X³]`, `E[X⁴]` (raw) with
/// standard errors.
pub fn raw_moments(xs: &[f64]) -> [Summary; 4] {
    let pow = |k: i32| Summary::of(&xs.iter().map(|x| x.powi(k)).collect::<Vec<_>>());
    [pow(1), pow(2), pow(3), pow(4)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_basics() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.var - 5.0 / 3.0).abs() < 1e-15);
        assert!((s.se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ordered_and_thread_independent() {
        let f = |i: u64| Ok((i as f64).sqrt());
        let a = par_map_paths(1000, f).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| par_map_paths(1000, f).unwrap());
        assert_eq!(a, b);
        assert_eq!(a[9], 3.0);
    }

    #[test]
    fn first_error_by_index() {
        let r: Result<Vec<u64>> = par_map_paths(100, |i| {
            if i % 10 == 7 {
                Err(crate::Error::Input(format!("{i}")))
            } else {
                Ok(i)
            }
        });
        assert_eq!(r.unwrap_err().to_string(), "invalid input: 7");
    }
}
