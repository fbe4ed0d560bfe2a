//! Reproducible sampling plumbing: counter-based streams, pairwise reduction,
//! ratio estimators and goodness-of-fit statistics.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

pub type SampleRng = ChaCha8Rng;

/// Independent generator for sample `stream` under master `seed`.
/// The result depends only on `(seed, stream)`, never on scheduling.
pub fn rng_for(seed: u64, stream: u64) -> SampleRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Standard complex Gaussian: E X = 0, E X² = 0, E|X|² = 1.
pub fn complex_normal(rng: &mut impl Rng) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Complex64::new(normal(rng) * s, normal(rng) * s)
}

/// Evaluates `f` on samples `0..n` in parallel; output order is the sample order.
pub fn par_samples<T, F>(n: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut SampleRng, usize) -> T + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            f(&mut rng, i)
        })
        .collect()
}

/// Pairwise (cascade) summation with a fixed reduction tree.
pub fn pairwise_sum<T>(xs: &[T]) -> T
where
    T: Copy + Default + std::ops::Add<Output = T>,
{
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        let mut acc = T::default();
        for &x in xs {
            acc = acc + x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Monte Carlo estimate of a (possibly complex) quantity.
/// `std_error` is the standard error of the modulus distance, i.e.
/// sqrt(Var Re + Var Im) of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub value: Complex64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl MCEstimate {
    pub fn exact(value: Complex64, seed: u64) -> Self {
        MCEstimate { value, std_error: 0.0, n_samples: 1, seed }
    }

    /// Sample mean with standard error.
    pub fn from_samples(xs: &[Complex64], seed: u64) -> Self {
        let n = xs.len();
        assert!(n >= 1, "at least one sample required");
        let mean = pairwise_sum(xs) / n as f64;
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean).norm_sqr()).collect();
        let var = if n > 1 { pairwise_sum(&dev) / (n as f64 - 1.0) } else { 0.0 };
        MCEstimate { value: mean, std_error: (var / n as f64).sqrt(), n_samples: n, seed }
    }

    pub fn from_real_samples(xs: &[f64], seed: u64) -> Self {
        let c: Vec<Complex64> = xs.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Self::from_samples(&c, seed)
    }

    /// Whether `target` lies within `k` standard errors plus an additive slack.
    pub fn agrees_with(&self, target: Complex64, k: f64, slack: f64) -> bool {
        (self.value - target).norm() <= k * self.std_error + slack
    }
}

/// Combined standard error of a difference of independent estimates.
pub fn combined_sigma(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// Ratio estimator Σnum/Σden on a shared sample stream with delete-one
/// jackknife errors.
pub fn ratio_estimate(num: &[Complex64], den: &[Complex64], seed: u64) -> Result<MCEstimate> {
    let n = num.len();
    assert_eq!(n, den.len());
    assert!(n >= 2, "ratio estimator needs two or more samples");
    let sn = pairwise_sum(num);
    let sd = pairwise_sum(den);
    let den_est = MCEstimate::from_samples(den, seed);
    if den_est.value.norm() <= 3.0 * den_est.std_error {
        return Err(Error::Degenerate(format!(
            "denominator {:.3e} is consistent with zero (std error {:.3e})",
            den_est.value.norm(),
            den_est.std_error
        )));
    }
    let r = sn / sd;
    let loo: Vec<Complex64> = (0..n).map(|i| (sn - num[i]) / (sd - den[i])).collect();
    let mean_loo = pairwise_sum(&loo) / n as f64;
    let dev: Vec<f64> = loo.iter().map(|x| (x - mean_loo).norm_sqr()).collect();
    let var = (n as f64 - 1.0) / n as f64 * pairwise_sum(&dev);
    Ok(MCEstimate { value: r, std_error: var.sqrt(), n_samples: n, seed })
}

/// Asymptotic Kolmogorov survival function Q(λ) = 2 Σ (−1)^{j−1} e^{−2j²λ²}.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        s += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov p-value against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    kolmogorov_survival(d * (sn + 0.12 + 0.11 / sn))
}

/// Two-sample Kolmogorov–Smirnov p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|p, q| p.total_cmp(q));
    xb.sort_by(|p, q| p.total_cmp(q));
    let (na, nb) = (xa.len(), xb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = xa[i].min(xb[j]);
        while i < na && xa[i] <= x {
            i += 1;
        }
        while j < nb && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let sn = ne.sqrt();
    kolmogorov_survival(d * (sn + 0.12 + 0.11 / sn))
}

/// Pearson chi-square goodness-of-fit p-value; bins with tiny expectation
/// are merged into their neighbour.
pub fn chi_square_p(observed: &[f64], expected: &[f64]) -> f64 {
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= 5.0 {
            obs.push(o_acc);
            exp.push(e_acc);
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 {
        if let (Some(lo), Some(le)) = (obs.last_mut(), exp.last_mut()) {
            *lo += o_acc;
            *le += e_acc;
        }
    }
    let stat: f64 = obs.iter().zip(&exp).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = (obs.len().max(2) - 1) as f64;
    let dist = ChiSquared::new(dof).expect("positive degrees of freedom");
    1.0 - dist.cdf(stat)
}

/// Least-squares slope of log(ys) against log(xs).
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Number of strict increases in a sequence that should be nonincreasing.
pub fn count_inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: f64 = rng_for(7, 3).random();
        let b: f64 = rng_for(7, 3).random();
        let c: f64 = rng_for(7, 4).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }

    #[test]
    fn ratio_of_identical_streams_is_one() {
        let xs: Vec<Complex64> = (0..50).map(|i| Complex64::new(1.0 + i as f64, 0.0)).collect();
        let r = ratio_estimate(&xs, &xs, 0).unwrap();
        assert!((r.value - 1.0).norm() < 1e-15);
        assert!(r.std_error < 1e-12);
    }

    #[test]
    fn degenerate_denominator_is_rejected() {
        let num = vec![Complex64::new(1.0, 0.0); 4];
        let den = vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)];
        assert!(matches!(ratio_estimate(&num, &den, 0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn kolmogorov_survival_limits() {
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        assert!(kolmogorov_survival(3.0) < 1e-6);
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 2e-3);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        assert!((log_log_slope(&xs, &ys) - 1.5).abs() < 1e-12);
    }
}
