//! Periodic and Euclidean Brownian bridges: exact sampling on a time grid,
//! path quadrature and increment moments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::stats::{normal, par_samples, rng_for, MCEstimate};
use crate::torus_spectral::{heat_kernel_general, reduce_coord};

/// The unnormalized bridge measure W^{τ,τ̃}_{x,x̃}; `l = ∞` selects R^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeMeasureSpec {
    pub l: f64,
    pub tau_from: f64,
    pub tau_to: f64,
    pub x_from: Vec<f64>,
    pub x_to: Vec<f64>,
    pub m: usize,
}

impl BridgeMeasureSpec {
    pub fn new(l: f64, tau_from: f64, tau_to: f64, x_from: &[f64], x_to: &[f64], m: usize) -> Result<Self> {
        if !(tau_to > tau_from) {
            return domain(format!("bridge needs tau_to > tau_from, got [{tau_from}, {tau_to}]"));
        }
        if m < 1 {
            return domain("bridge needs m >= 1");
        }
        if x_from.len() != x_to.len() || x_from.is_empty() || x_from.len() > 3 {
            return domain("endpoints must share a dimension in 1..=3");
        }
        if !(l > 0.0) {
            return domain(format!("side length must be positive, got {l}"));
        }
        let red = |x: &[f64]| -> Vec<f64> {
            if l.is_finite() {
                x.iter().map(|&v| reduce_coord(v, l)).collect()
            } else {
                x.to_vec()
            }
        };
        Ok(BridgeMeasureSpec { l, tau_from, tau_to, x_from: red(x_from), x_to: red(x_to), m })
    }

    pub fn dim(&self) -> usize {
        self.x_from.len()
    }

    pub fn duration(&self) -> f64 {
        self.tau_to - self.tau_from
    }

    /// Total mass ψ^{τ−τ̃}(x − x̃).
    pub fn weight(&self) -> f64 {
        let dx: Vec<f64> = self.x_to.iter().zip(&self.x_from).map(|(a, b)| a - b).collect();
        heat_kernel_general(self.l, self.duration(), &dx).expect("duration is positive")
    }

    pub fn uniform_grid(&self) -> Vec<f64> {
        let dt = self.duration() / self.m as f64;
        let mut g: Vec<f64> = (0..=self.m).map(|j| self.tau_from + dt * j as f64).collect();
        g[self.m] = self.tau_to;
        g
    }
}

/// A discretized bridge path. `lifted` is the continuous path in the universal
/// cover starting at x̃; `points` are its reductions to the fundamental domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgePath {
    pub t_grid: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub lifted: Vec<Vec<f64>>,
}

impl BridgePath {
    pub fn len(&self) -> usize {
        self.t_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_grid.is_empty()
    }
}

/// Draws an image shift n with probability ∝ e^{−(δ − Ln)²/2T}.
fn sample_winding(l: f64, duration: f64, delta: f64, rng: &mut impl Rng) -> i64 {
    let weight = |n: i64| {
        let a = delta + l * n as f64;
        (-a * a / (2.0 * duration)).exp()
    };
    let mut ns = vec![0i64];
    let mut ws = vec![weight(0)];
    let mut n = 1i64;
    loop {
        let (wp, wm) = (weight(n), weight(-n));
        ns.push(n);
        ws.push(wp);
        ns.push(-n);
        ws.push(wm);
        if wp + wm <= 1e-18 * ws[0] {
            break;
        }
        n += 1;
    }
    let total: f64 = ws.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (n, w) in ns.iter().zip(&ws) {
        if u < *w {
            return *n;
        }
        u -= w;
    }
    0
}

/// Samples the bridge at the given strictly increasing times, which must start
/// at τ̃ and end at τ. Interior points are filled by recursive midpoint
/// displacement, exact for the Brownian bridge law.
pub fn sample_bridge_at(spec: &BridgeMeasureSpec, times: &[f64], rng: &mut impl Rng) -> Result<BridgePath> {
    let m = times.len().saturating_sub(1);
    if m < 1 || times[0] != spec.tau_from || times[m] != spec.tau_to {
        return domain("time grid must start at tau_from and end at tau_to");
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return domain("time grid must be strictly increasing");
    }
    let d = spec.dim();
    let duration = spec.duration();
    let mut lifted = vec![vec![0.0; d]; m + 1];
    for i in 0..d {
        let mut delta = spec.x_to[i] - spec.x_from[i];
        if spec.l.is_finite() {
            delta = reduce_coord(delta, spec.l);
            delta += spec.l * sample_winding(spec.l, duration, delta, rng) as f64;
        }
        lifted[0][i] = spec.x_from[i];
        lifted[m][i] = spec.x_from[i] + delta;
    }
    let mut stack = vec![(0usize, m)];
    while let Some((lo, hi)) = stack.pop() {
        if hi - lo < 2 {
            continue;
        }
        let mid = (lo + hi) / 2;
        let (t0, t1, tm) = (times[lo], times[hi], times[mid]);
        let frac = (tm - t0) / (t1 - t0);
        let sd = ((tm - t0) * (t1 - tm) / (t1 - t0)).sqrt();
        for i in 0..d {
            lifted[mid][i] = lifted[lo][i] + frac * (lifted[hi][i] - lifted[lo][i]) + sd * normal(rng);
        }
        stack.push((lo, mid));
        stack.push((mid, hi));
    }
    let mut points: Vec<Vec<f64>> = lifted
        .iter()
        .map(|p| if spec.l.is_finite() { p.iter().map(|&v| reduce_coord(v, spec.l)).collect() } else { p.clone() })
        .collect();
    points[0] = spec.x_from.clone();
    points[m] = spec.x_to.clone();
    Ok(BridgePath { t_grid: times.to_vec(), points, lifted })
}

/// Samples the bridge on the uniform grid of `spec.m` steps using `rng`.
pub fn sample_bridge_with(spec: &BridgeMeasureSpec, rng: &mut impl Rng) -> Result<BridgePath> {
    sample_bridge_at(spec, &spec.uniform_grid(), rng)
}

/// Samples the bridge on the uniform grid from a seed.
pub fn sample_bridge(spec: &BridgeMeasureSpec, seed: u64) -> Result<BridgePath> {
    sample_bridge_with(spec, &mut rng_for(seed, 0))
}

/// Trapezoidal quadrature of ∫ f(s, ω(s)) ds along the path.
pub fn path_line_integral<T, F>(path: &BridgePath, f: F) -> T
where
    T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    F: Fn(f64, &[f64]) -> T,
{
    let vals: Vec<T> = path.t_grid.iter().zip(&path.points).map(|(&t, x)| f(t, x)).collect();
    let mut acc = T::default();
    for j in 0..vals.len() - 1 {
        let dt = path.t_grid[j + 1] - path.t_grid[j];
        acc = acc + (vals[j] + vals[j + 1]) * (0.5 * dt);
    }
    acc
}

/// Torus (or Euclidean) squared distance between two lifted points.
fn squared_distance(l: f64, a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let dlt = if l.is_finite() { reduce_coord(x - y, l) } else { x - y };
            dlt * dlt
        })
        .sum()
}

/// Monte Carlo estimate of ∫ P(dω) |ω(t) − ω(s)|_L² under the normalized bridge law.
pub fn bridge_increment_moment(spec: &BridgeMeasureSpec, s: f64, t: f64, n_samples: usize, seed: u64) -> Result<MCEstimate> {
    if !(spec.tau_from <= s && s <= t && t <= spec.tau_to) {
        return domain(format!("need tau_from <= s <= t <= tau_to, got s={s}, t={t}"));
    }
    if s == t {
        return Ok(MCEstimate::exact(0.0.into(), seed));
    }
    let mut times = vec![spec.tau_from];
    for v in [s, t, spec.tau_to] {
        if v > *times.last().expect("nonempty") {
            times.push(v);
        }
    }
    let idx = |v: f64| times.iter().position(|&x| x == v).expect("time present in grid");
    let (is, it) = (idx(s), idx(t));
    let samples: Vec<Result<f64>> = par_samples(n_samples, seed, |rng, _| {
        let path = sample_bridge_at(spec, &times, rng)?;
        Ok(squared_distance(spec.l, &path.lifted[it], &path.lifted[is]))
    });
    let values = samples.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(MCEstimate::from_real_samples(&values, seed))
}
