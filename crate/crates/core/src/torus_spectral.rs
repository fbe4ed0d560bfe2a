//! The torus Λ = [−L/2, L/2)^d, the spectrum of h = κ − Δ/2, the periodic
//! heat kernel and free-gas closed forms.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Relative size below which series terms are dropped.
const SERIES_EPS: f64 = 1e-17;

/// Spatial domain and spectral resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusSpec {
    pub d: usize,
    pub l: f64,
    pub kappa: f64,
    pub kmax: usize,
}

impl TorusSpec {
    pub fn new(d: usize, l: f64, kappa: f64, kmax: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return domain(format!("dimension must be 1, 2 or 3, got {d}"));
        }
        if !(l > 0.0 && l.is_finite()) {
            return domain(format!("side length must be positive and finite, got {l}"));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return domain(format!("kappa must be positive, got {kappa}"));
        }
        if kmax < 1 {
            return domain("kmax must be at least 1");
        }
        Ok(TorusSpec { d, l, kappa, kmax })
    }

    pub fn volume(&self) -> f64 {
        self.l.powi(self.d as i32)
    }

    /// Coefficient c in λ_k = κ + c|k|².
    pub fn stiffness(&self) -> f64 {
        2.0 * PI * PI / (self.l * self.l)
    }

    pub fn eigenvalue(&self, k: &[i64]) -> f64 {
        let k2: i64 = k.iter().take(self.d).map(|&ki| ki * ki).sum();
        self.kappa + self.stiffness() * k2 as f64
    }

    /// Number of retained modes (2 kmax + 1)^d.
    pub fn mode_count(&self) -> usize {
        (2 * self.kmax + 1).pow(self.d as u32)
    }

    /// All retained modes, sorted by eigenvalue, ties broken lexicographically.
    pub fn modes(&self) -> Vec<Mode> {
        let km = self.kmax as i64;
        let mut out = Vec::with_capacity(self.mode_count());
        let range = |axis: usize| if axis < self.d { -km..=km } else { 0..=0 };
        for k0 in range(0) {
            for k1 in range(1) {
                for k2 in range(2) {
                    let k = [k0, k1, k2];
                    out.push(Mode { k, lambda: self.eigenvalue(&k) });
                }
            }
        }
        sort_modes(&mut out);
        out
    }

    /// Reduces a point to the fundamental domain [−L/2, L/2)^d.
    pub fn reduce(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&xi| reduce_coord(xi, self.l)).collect()
    }
}

pub(crate) fn reduce_coord(x: f64, l: f64) -> f64 {
    let r = x - l * (x / l + 0.5).floor();
    if r >= 0.5 * l {
        r - l
    } else {
        r
    }
}

fn sort_modes(modes: &mut [Mode]) {
    modes.sort_by(|a, b| {
        let na: i64 = a.k.iter().map(|x| x * x).sum();
        let nb: i64 = b.k.iter().map(|x| x * x).sum();
        na.cmp(&nb).then_with(|| a.k.cmp(&b.k))
    });
}

/// Plane-wave eigenmode of h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: [i64; 3],
    pub lambda: f64,
}

impl Mode {
    /// u_k(x) = e^{2πik·x/L} / L^{d/2}.
    pub fn plane_wave(&self, spec: &TorusSpec, x: &[f64]) -> Complex64 {
        let phase: f64 = (0..spec.d).map(|i| 2.0 * PI * self.k[i] as f64 * x[i] / spec.l).sum();
        Complex64::from_polar(spec.volume().sqrt().recip(), phase)
    }
}

/// Finite orthonormal set of eigenmodes used as a Galerkin basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub spec: TorusSpec,
    pub modes: Vec<Mode>,
}

impl SpectralBasis {
    /// Every mode of the cube |k_i| ≤ kmax.
    pub fn full(spec: TorusSpec) -> Self {
        SpectralBasis { modes: spec.modes(), spec }
    }

    /// The `count` lowest modes in eigenvalue order (the range of P_K with K = count − 1).
    pub fn lowest(spec: TorusSpec, count: usize) -> Result<Self> {
        if count == 0 || count > spec.mode_count() {
            return domain(format!("requested {count} modes but the cube holds {}", spec.mode_count()));
        }
        let mut modes = spec.modes();
        modes.truncate(count);
        Ok(SpectralBasis { spec, modes })
    }

    /// Basis from explicit wave vectors (unused axes ignored).
    pub fn from_wavevectors(spec: TorusSpec, ks: &[[i64; 3]]) -> Result<Self> {
        if ks.is_empty() {
            return domain("basis needs at least one mode");
        }
        let mut modes = Vec::with_capacity(ks.len());
        for k in ks {
            let mut kk = [0i64; 3];
            kk[..spec.d].copy_from_slice(&k[..spec.d]);
            if modes.iter().any(|m: &Mode| m.k == kk) {
                return domain(format!("duplicate wave vector {kk:?}"));
            }
            modes.push(Mode { k: kk, lambda: spec.eigenvalue(&kk) });
        }
        Ok(SpectralBasis { spec, modes })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.lambda).collect()
    }

    pub fn plane_waves(&self, x: &[f64]) -> Vec<Complex64> {
        self.modes.iter().map(|m| m.plane_wave(&self.spec, x)).collect()
    }

    /// Position kernel Σ_{k,k'} u_k(x) G_{kk'} conj(u_{k'}(x̃)) of a mode-space matrix.
    pub fn kernel_at(&self, g: &DMatrix<Complex64>, x: &[f64], xt: &[f64]) -> Complex64 {
        let ux = self.plane_waves(x);
        let uxt = self.plane_waves(xt);
        let mut acc = Complex64::new(0.0, 0.0);
        for (a, ua) in ux.iter().enumerate() {
            for (b, ub) in uxt.iter().enumerate() {
                acc += ua * g[(a, b)] * ub.conj();
            }
        }
        acc
    }

    /// Kernel of a diagonal function f(h) on the basis.
    pub fn diagonal_kernel(&self, f: impl Fn(f64) -> f64, x: &[f64], xt: &[f64]) -> Complex64 {
        self.modes
            .iter()
            .map(|m| m.plane_wave(&self.spec, x) * m.plane_wave(&self.spec, xt).conj() * f(m.lambda))
            .sum()
    }

    /// The set M − M of wave-vector differences, with lookup.
    pub fn difference_set(&self) -> DifferenceSet {
        let mut ps: Vec<[i64; 3]> = Vec::new();
        let mut index = HashMap::new();
        for a in &self.modes {
            for b in &self.modes {
                let p = [a.k[0] - b.k[0], a.k[1] - b.k[1], a.k[2] - b.k[2]];
                if !index.contains_key(&p) {
                    index.insert(p, ps.len());
                    ps.push(p);
                }
            }
        }
        DifferenceSet { ps, index }
    }

    /// Truncated classical density Σ_k λ_k^{-1} / L^d.
    pub fn classical_density(&self) -> f64 {
        self.modes.iter().map(|m| 1.0 / m.lambda).sum::<f64>() / self.spec.volume()
    }

    /// Truncated quantum density Σ_k ν/(e^{νλ_k} − 1) / L^d.
    pub fn free_density(&self, nu: f64) -> f64 {
        self.modes.iter().map(|m| nu / (nu * m.lambda).exp_m1()).sum::<f64>() / self.spec.volume()
    }
}

/// Wave-vector differences k − k' of a basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceSet {
    pub ps: Vec<[i64; 3]>,
    pub index: HashMap<[i64; 3], usize>,
}

impl DifferenceSet {
    pub fn len(&self) -> usize {
        self.ps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ps.is_empty()
    }

    pub fn position(&self, p: &[i64; 3]) -> Option<usize> {
        self.index.get(p).copied()
    }
}

/// 1D periodic heat kernel by the image sum Σ_n (2πt)^{-1/2} e^{−(x−Ln)²/2t}.
pub fn heat_kernel_1d_image(l: f64, t: f64, x: f64) -> f64 {
    let x = reduce_coord(x, l);
    let norm = (2.0 * PI * t).sqrt().recip();
    let mut sum = (-x * x / (2.0 * t)).exp();
    let mut n = 1i64;
    loop {
        let a = x - l * n as f64;
        let b = x + l * n as f64;
        let term = (-a * a / (2.0 * t)).exp() + (-b * b / (2.0 * t)).exp();
        sum += term;
        if term <= SERIES_EPS * sum {
            break;
        }
        n += 1;
    }
    norm * sum
}

/// 1D periodic heat kernel by the spectral sum (1/L) Σ_k e^{−2π²k²t/L²} cos(2πkx/L).
pub fn heat_kernel_1d_spectral(l: f64, t: f64, x: f64) -> f64 {
    let c = 2.0 * PI * PI * t / (l * l);
    let mut sum = 1.0;
    let mut k = 1i64;
    loop {
        let w = (-c * (k * k) as f64).exp();
        sum += 2.0 * w * (2.0 * PI * k as f64 * x / l).cos();
        if w <= SERIES_EPS {
            break;
        }
        k += 1;
    }
    sum / l
}

/// 1D periodic heat kernel; picks the faster of the two dual sums.
pub fn heat_kernel_1d(l: f64, t: f64, x: f64) -> f64 {
    if t < l * l / (2.0 * PI) {
        heat_kernel_1d_image(l, t, x)
    } else {
        heat_kernel_1d_spectral(l, t, x)
    }
}

/// Periodic heat kernel ψ^t(x) = Π_i ψ_1^t(x_i).
pub fn heat_kernel(spec: &TorusSpec, t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("heat kernel needs t > 0, got {t}"));
    }
    Ok((0..spec.d).map(|i| heat_kernel_1d(spec.l, t, x[i])).product())
}

/// Euclidean heat kernel (2πt)^{-d/2} e^{−|x|²/2t}.
pub fn euclidean_heat_kernel(t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("heat kernel needs t > 0, got {t}"));
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    Ok((2.0 * PI * t).powf(-(x.len() as f64) / 2.0) * (-r2 / (2.0 * t)).exp())
}

/// Heat kernel on the torus when `l` is finite, on R^d when it is infinite.
pub fn heat_kernel_general(l: f64, t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("heat kernel needs t > 0, got {t}"));
    }
    if l.is_infinite() {
        euclidean_heat_kernel(t, x)
    } else {
        Ok(x.iter().map(|&xi| heat_kernel_1d(l, t, xi)).product())
    }
}

/// Histogram of |k|² over the retained cube: entry s counts wave vectors with |k|² = s.
fn shell_counts(spec: &TorusSpec) -> Vec<u64> {
    let km = spec.kmax;
    let mut one = vec![0u64; km * km + 1];
    one[0] = 1;
    for k in 1..=km {
        one[k * k] += 2;
    }
    let mut acc = one.clone();
    for _ in 1..spec.d {
        let mut next = vec![0u64; acc.len() + one.len() - 1];
        for (s, &ca) in acc.iter().enumerate() {
            if ca == 0 {
                continue;
            }
            for (t, &cb) in one.iter().enumerate() {
                if cb != 0 {
                    next[s + t] += ca * cb;
                }
            }
        }
        acc = next;
    }
    acc
}

/// Truncated trace with an analytic bound on the dropped modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    pub value: f64,
    pub tail_bound: f64,
}

/// Σ_{retained k} λ_k^{-s} and a bound on Σ_{k outside the cube} λ_k^{-s}.
pub fn trace_h_power(spec: &TorusSpec, s: f64) -> TraceEstimate {
    let c = spec.stiffness();
    let value: f64 = shell_counts(spec)
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(k2, &n)| n as f64 * (spec.kappa + c * k2 as f64).powf(-s))
        .sum();
    let d = spec.d as f64;
    let tail_bound = if 2.0 * s <= d {
        f64::INFINITY
    } else {
        2.0 * d * 3f64.powf(d - 1.0) * c.powf(-s) * (spec.kmax as f64).powf(d - 2.0 * s) / (2.0 * s - d)
    };
    TraceEstimate { value, tail_bound }
}

/// Free quantum density ϱ = ν Σ_{n≥1} e^{−κνn} ψ^{νn}(0) on the full torus.
pub fn free_quantum_density(spec: &TorusSpec, nu: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return domain(format!("nu must be positive, got {nu}"));
    }
    let origin = vec![0.0; spec.d];
    let q = (-spec.kappa * nu).exp();
    let geometric = q / (1.0 - q);
    let mut sum = 0.0;
    let mut n = 1u64;
    loop {
        let t = nu * n as f64;
        let psi = heat_kernel(spec, t, &origin)?;
        sum += (-spec.kappa * t).exp() * psi;
        // ψ^t(0) is decreasing in t, so the remaining terms are bounded geometrically.
        let tail = nu * psi * (-spec.kappa * t).exp() * geometric;
        if tail < 1e-12 {
            break;
        }
        n += 1;
        if n > 100_000_000 {
            return Err(Error::Convergence("density series did not reach tolerance".into()));
        }
    }
    Ok(nu * sum)
}

/// Grand-canonical free expectation of N over the retained modes, Σ_k 1/(e^{νλ_k} − 1).
pub fn expected_particle_number(spec: &TorusSpec, nu: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return domain(format!("nu must be positive, got {nu}"));
    }
    let c = spec.stiffness();
    Ok(shell_counts(spec)
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(k2, &n)| n as f64 / (nu * (spec.kappa + c * k2 as f64)).exp_m1())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduce_maps_into_fundamental_domain() {
        assert_eq!(reduce_coord(0.5, 1.0), -0.5);
        assert!((reduce_coord(1.3, 1.0) - 0.3).abs() < 1e-15);
        assert!((reduce_coord(-0.7, 1.0) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn shell_counts_total_matches_mode_count() {
        let spec = TorusSpec::new(3, 1.0, 1.0, 4).unwrap();
        let total: u64 = shell_counts(&spec).iter().sum();
        assert_eq!(total as usize, spec.mode_count());
    }

    #[test]
    fn lowest_modes_are_symmetric_in_one_dimension() {
        let spec = TorusSpec::new(1, 1.0, 1.0, 8).unwrap();
        let b = SpectralBasis::lowest(spec, 17).unwrap();
        let mut ks: Vec<i64> = b.modes.iter().map(|m| m.k[0]).collect();
        ks.sort();
        assert_eq!(ks, (-8..=8).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_nonpositive_kappa() {
        assert!(TorusSpec::new(1, 1.0, 0.0, 2).is_err());
        assert!(TorusSpec::new(4, 1.0, 1.0, 2).is_err());
    }
}
