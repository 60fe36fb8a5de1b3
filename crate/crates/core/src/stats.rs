//! Small statistics toolkit: mergeable moment accumulators, deterministic
//! chunked Monte-Carlo, medians, least squares and the KS statistic.

use rayon::prelude::*;

use crate::rng::{SimRng, StreamKey};

/// Samples per Monte-Carlo chunk. Fixed so that chunk boundaries, and hence
/// results, do not depend on the thread count.
pub const MC_CHUNK: usize = 1 << 15;

/// Running mean and variance (Welford), mergeable with Chan's update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanVar {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanVar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MeanVar) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.n as f64 * w;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for MeanVar {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = MeanVar::new();
        iter.into_iter().for_each(|x| acc.push(x));
        acc
    }
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Runs `n` Monte-Carlo draws split into fixed-size chunks, each with its own
/// child stream of `key`, and returns per-chunk results in chunk order.
pub fn mc_chunks<A, F>(n: usize, key: StreamKey, f: F) -> Vec<A>
where
    A: Send,
    F: Fn(&mut SimRng, usize) -> A + Sync,
{
    let chunks = n.div_ceil(MC_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|i| {
            let len = MC_CHUNK.min(n - i * MC_CHUNK);
            let mut rng = key.child(i as u64).rng();
            f(&mut rng, len)
        })
        .collect()
}

/// Merges per-chunk accumulators in order.
pub fn merge_all<'a>(parts: impl IntoIterator<Item = &'a MeanVar>) -> MeanVar {
    let mut acc = MeanVar::new();
    for p in parts {
        acc.merge(p);
    }
    acc
}

/// Median of a slice (sorts in place); `None` if empty.
pub fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

/// Ordinary least-squares line.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (zero for two points).
    pub slope_se: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if n > 2 {
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (rss / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some(LineFit {
        slope,
        intercept,
        slope_se,
    })
}

/// Two-sided Kolmogorov–Smirnov distance between a sample and a CDF.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000)
            .map(|i| ((i * 37) % 101) as f64 * 0.1 - 3.0)
            .collect();
        let whole: MeanVar = xs.iter().copied().collect();
        let mut merged = MeanVar::new();
        for c in xs.chunks(77) {
            merged.merge(&c.iter().copied().collect());
        }
        assert!((whole.mean() - merged.mean()).abs() < 1e-12);
        assert!((whole.variance() - merged.variance()).abs() < 1e-10);
        assert_eq!(merged.count(), 1000);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn line_fit_exact() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let fit = fit_line(&xs, &ys).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept + 1.0).abs() < 1e-12);
        assert!(fit.slope_se < 1e-12);
    }

    #[test]
    fn ks_of_grid_against_uniform() {
        let mut xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let ks = ks_statistic(&mut xs, |x| x.clamp(0.0, 1.0));
        assert!((ks - 0.005).abs() < 1e-12);
    }
}
