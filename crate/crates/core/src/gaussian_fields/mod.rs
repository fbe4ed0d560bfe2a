//! Regularization profiles, interaction potentials and the three Gaussian
//! fields: the classical free field φ, the space-time auxiliary field σ and
//! the spatial auxiliary field ξ.

pub mod wick;

use std::f64::consts::PI;
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quadrature::integrate;
use crate::stats::{complex_normal, normal, rng_for};
use crate::torus_spectral::{DifferenceSet, Mode, SpectralBasis, TorusSpec};

pub use wick::{
    complete_pairings, complex_wick_moment, gaussian_characteristic_moment, partial_pairings, permanent,
    t_p_polynomial, wick_order_moment, WickMonomial,
};

/// Even cutoff profile supported in [−1, 1] with value 1 at the origin and a
/// nonnegative inverse Fourier transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffProfile {
    /// Normalized self-convolution of the tent (1 − 2|p|)₊; a cubic B-spline.
    CubicSpline,
    /// Normalized self-convolution of the smooth bump e^{−1/(1−4p²)} on |p| < 1/2.
    SmoothBumpSquared,
}

fn bump(p: f64) -> f64 {
    let q = 2.0 * p;
    if q.abs() < 1.0 {
        (-1.0 / (1.0 - q * q)).exp()
    } else {
        0.0
    }
}

fn bump_self_convolution(s: f64) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    let s = s.abs();
    if s >= 1.0 {
        return 0.0;
    }
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().expect("cutoff cache poisoned").get(&s.to_bits()) {
        return *v;
    }
    let v = integrate(|p| bump(p) * bump(s - p), s - 0.5, 0.5, 200);
    cache.lock().expect("cutoff cache poisoned").insert(s.to_bits(), v);
    v
}

fn bump_norm() -> f64 {
    static NORM: OnceLock<f64> = OnceLock::new();
    *NORM.get_or_init(|| bump_self_convolution(0.0))
}

fn bump_transform(x: f64) -> f64 {
    let n = 400 + (8.0 * x.abs()) as usize;
    2.0 * integrate(|p| bump(p) * (2.0 * PI * p * x).cos(), 0.0, 0.5, n)
}

impl CutoffProfile {
    pub fn value(&self, s: f64) -> f64 {
        let a = s.abs();
        match self {
            CutoffProfile::CubicSpline => {
                if a <= 0.5 {
                    1.0 - 6.0 * a * a + 6.0 * a * a * a
                } else if a < 1.0 {
                    2.0 * (1.0 - a).powi(3)
                } else {
                    0.0
                }
            }
            CutoffProfile::SmoothBumpSquared => bump_self_convolution(a) / bump_norm(),
        }
    }

    /// Inverse Fourier transform ∫ φ(p) e^{2πipx} dp.
    pub fn inverse_transform(&self, x: f64) -> f64 {
        match self {
            CutoffProfile::CubicSpline => {
                let z = 0.5 * PI * x;
                let sinc = if z.abs() < 1e-8 { 1.0 - z * z / 6.0 } else { z.sin() / z };
                0.75 * sinc.powi(4)
            }
            CutoffProfile::SmoothBumpSquared => bump_transform(x).powi(2) / bump_norm(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CutoffProfile::CubicSpline => "cubic_spline",
            CutoffProfile::SmoothBumpSquared => "smooth_bump_squared",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "cubic_spline" => Some(CutoffProfile::CubicSpline),
            "smooth_bump_squared" => Some(CutoffProfile::SmoothBumpSquared),
            _ => None,
        }
    }
}

/// Regularization scale and cutoff profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationSpec {
    pub eta: f64,
    pub spatial: CutoffProfile,
    pub temporal: CutoffProfile,
}

impl RegularizationSpec {
    pub fn new(eta: f64, spatial: CutoffProfile, temporal: CutoffProfile) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return domain(format!("eta must be positive, got {eta}"));
        }
        for j in 0..=200 {
            let x = 0.1 * j as f64;
            if spatial.inverse_transform(x) < -1e-14 {
                return domain(format!("spatial cutoff {} has a negative inverse transform", spatial.name()));
            }
        }
        Ok(RegularizationSpec { eta, spatial, temporal })
    }

    /// Default profiles: cubic spline in space, squared smooth bump in time.
    pub fn with_eta(eta: f64) -> Result<Self> {
        Self::new(eta, CutoffProfile::CubicSpline, CutoffProfile::SmoothBumpSquared)
    }

    /// Π_i φ(η p_i).
    pub fn spatial_factor(&self, p: &[i64; 3], d: usize) -> f64 {
        (0..d).map(|i| self.spatial.value(self.eta * p[i] as f64)).product()
    }

    pub fn temporal_factor(&self, k: i64) -> f64 {
        self.temporal.value(self.eta * k as f64)
    }

    /// Largest |k| with φ(ηk) possibly nonzero.
    pub fn frequency_cutoff(&self) -> i64 {
        frequency_cutoff(self.eta)
    }

    /// Temporal frequencies with nonzero weight, paired with φ̃(ηk).
    pub fn temporal_modes(&self) -> Vec<(i64, f64)> {
        let c = self.frequency_cutoff();
        (-c..=c).map(|k| (k, self.temporal_factor(k))).filter(|(_, w)| *w > 0.0).collect()
    }

    /// All spatial frequencies with φ(ηp) > 0.
    pub fn spatial_support(&self, d: usize) -> Vec<[i64; 3]> {
        let c = self.frequency_cutoff();
        let r = |axis: usize| if axis < d { -c..=c } else { 0..=0 };
        let mut out = Vec::new();
        for a in r(0) {
            for b in r(1) {
                for e in r(2) {
                    let p = [a, b, e];
                    if self.spatial_factor(&p, d) > 0.0 {
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

/// Largest integer k with ηk < 1.
pub fn frequency_cutoff(eta: f64) -> i64 {
    let c = (1.0 / eta).ceil() as i64;
    if (c as f64) * eta >= 1.0 {
        c - 1
    } else {
        c
    }
}

/// δ_{η,ν}(τ) = (1/ν) Σ_k φ̃(ηk) e^{2πikτ/ν}.
pub fn regularized_delta(reg: &RegularizationSpec, nu: f64, tau: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return domain(format!("nu must be positive, got {nu}"));
    }
    Ok(reg
        .temporal_modes()
        .iter()
        .map(|&(k, w)| w * (2.0 * PI * k as f64 * tau / nu).cos())
        .sum::<f64>()
        / nu)
}

/// δ_{η,ν}(τ) by Poisson summation, (1/νη) Σ_y (F^{-1}φ̃)((τ − νy)/(νη)).
pub fn regularized_delta_poisson(reg: &RegularizationSpec, nu: f64, tau: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return domain(format!("nu must be positive, got {nu}"));
    }
    let scale = nu * reg.eta;
    let y0 = (tau / nu).round() as i64;
    let mut sum = reg.temporal.inverse_transform((tau - nu * y0 as f64) / scale);
    for j in 1..100_000i64 {
        let a = reg.temporal.inverse_transform((tau - nu * (y0 + j) as f64) / scale);
        let b = reg.temporal.inverse_transform((tau - nu * (y0 - j) as f64) / scale);
        sum += a + b;
        if (a + b).abs() < 1e-18 * sum.abs() && (j as f64) * nu / scale > 40.0 {
            break;
        }
    }
    Ok(sum / scale)
}

/// Family of even, positive-type, real interaction potentials on the torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PotentialKind {
    Zero,
    /// v ≡ value.
    Constant { value: f64 },
    /// Periodized a e^{−|x|²/2w²}.
    Gaussian { amplitude: f64, width: f64 },
    /// Periodized a Π_i (1 − |x_i|/w)₊.
    Triangle { amplitude: f64, width: f64 },
    /// Explicit Fourier coefficients (F_L v)(p); unlisted frequencies vanish.
    Table { coeffs: Vec<([i64; 3], f64)> },
}

/// Interaction potential on Λ with optional spatial regularization v_η.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionPotential {
    pub d: usize,
    pub l: f64,
    pub kind: PotentialKind,
    pub regularization: Option<(f64, CutoffProfile)>,
}

fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - z * z / 6.0
    } else {
        z.sin() / z
    }
}

impl InteractionPotential {
    pub fn new(spec: &TorusSpec, kind: PotentialKind) -> Result<Self> {
        match &kind {
            PotentialKind::Zero => {}
            PotentialKind::Constant { value } => {
                if *value < 0.0 {
                    return Err(Error::InvalidPotential(format!("constant {value} is not of positive type")));
                }
            }
            PotentialKind::Gaussian { amplitude, width } | PotentialKind::Triangle { amplitude, width } => {
                if *amplitude < 0.0 || !(*width > 0.0) {
                    return Err(Error::InvalidPotential(format!(
                        "need amplitude >= 0 and width > 0, got {amplitude}, {width}"
                    )));
                }
            }
            PotentialKind::Table { coeffs } => {
                for (p, c) in coeffs {
                    if *c < 0.0 {
                        return Err(Error::InvalidPotential(format!("negative Fourier coefficient {c} at {p:?}")));
                    }
                    let mut q = [0i64; 3];
                    for i in 0..spec.d {
                        q[i] = -p[i];
                    }
                    let partner = coeffs.iter().find(|(pp, _)| (0..spec.d).all(|i| pp[i] == q[i]));
                    match partner {
                        Some((_, cq)) if (cq - c).abs() <= 1e-14 * c.abs().max(1.0) => {}
                        _ => {
                            return Err(Error::InvalidPotential(format!("coefficient at {p:?} has no equal partner at −p")))
                        }
                    }
                }
            }
        }
        Ok(InteractionPotential { d: spec.d, l: spec.l, kind, regularization: None })
    }

    pub fn zero(spec: &TorusSpec) -> Self {
        InteractionPotential { d: spec.d, l: spec.l, kind: PotentialKind::Zero, regularization: None }
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            PotentialKind::Zero => true,
            PotentialKind::Constant { value } => *value == 0.0,
            PotentialKind::Gaussian { amplitude, .. } | PotentialKind::Triangle { amplitude, .. } => *amplitude == 0.0,
            PotentialKind::Table { coeffs } => coeffs.iter().all(|(_, c)| *c == 0.0),
        }
    }

    fn bare_fourier(&self, p: &[i64; 3]) -> f64 {
        let d = self.d;
        let l = self.l;
        match &self.kind {
            PotentialKind::Zero => 0.0,
            PotentialKind::Constant { value } => {
                if (0..d).all(|i| p[i] == 0) {
                    value * l.powi(d as i32)
                } else {
                    0.0
                }
            }
            PotentialKind::Gaussian { amplitude, width } => {
                let p2: f64 = (0..d).map(|i| (p[i] * p[i]) as f64).sum();
                amplitude
                    * (2.0 * PI * width * width).powf(d as f64 / 2.0)
                    * (-2.0 * PI * PI * width * width * p2 / (l * l)).exp()
            }
            PotentialKind::Triangle { amplitude, width } => {
                amplitude * (0..d).map(|i| width * sinc(PI * width * p[i] as f64 / l).powi(2)).product::<f64>()
            }
            PotentialKind::Table { coeffs } => coeffs
                .iter()
                .find(|(q, _)| (0..d).all(|i| q[i] == p[i]))
                .map(|(_, c)| *c)
                .unwrap_or(0.0),
        }
    }

    /// (F_L v)(p), including the regularization factor φ(ηp) when present.
    pub fn fourier(&self, p: &[i64; 3]) -> f64 {
        let bare = self.bare_fourier(p);
        match self.regularization {
            None => bare,
            Some((eta, profile)) => bare * (0..self.d).map(|i| profile.value(eta * p[i] as f64)).product::<f64>(),
        }
    }

    /// Real-space value v(x).
    pub fn value(&self, x: &[f64]) -> f64 {
        let d = self.d;
        let l = self.l;
        if let Some((eta, _)) = self.regularization {
            return self.fourier_sum(x, frequency_cutoff(eta));
        }
        match &self.kind {
            PotentialKind::Zero => 0.0,
            PotentialKind::Constant { value } => *value,
            PotentialKind::Gaussian { amplitude, width } => {
                amplitude
                    * (0..d)
                        .map(|i| {
                            let xi = crate::torus_spectral::reduce_coord(x[i], l);
                            let mut s = 0.0;
                            let reach = (10.0 * width / l).ceil() as i64 + 1;
                            for n in -reach..=reach {
                                let a = xi - l * n as f64;
                                s += (-a * a / (2.0 * width * width)).exp();
                            }
                            s
                        })
                        .product::<f64>()
            }
            PotentialKind::Triangle { amplitude, width } => {
                amplitude
                    * (0..d)
                        .map(|i| {
                            let xi = crate::torus_spectral::reduce_coord(x[i], l);
                            let reach = (width / l).ceil() as i64 + 1;
                            (-reach..=reach).map(|n| (1.0 - (xi - l * n as f64).abs() / width).max(0.0)).sum::<f64>()
                        })
                        .product::<f64>()
            }
            PotentialKind::Table { coeffs } => {
                coeffs
                    .iter()
                    .map(|(p, c)| c * (2.0 * PI * (0..d).map(|i| p[i] as f64 * x[i]).sum::<f64>() / l).cos())
                    .sum::<f64>()
                    / l.powi(d as i32)
            }
        }
    }

    fn fourier_sum(&self, x: &[f64], c: i64) -> f64 {
        let d = self.d;
        let r = |axis: usize| if axis < d { -c..=c } else { 0..=0 };
        let mut s = 0.0;
        for a in r(0) {
            for b in r(1) {
                for e in r(2) {
                    let p = [a, b, e];
                    let f = self.fourier(&p);
                    if f != 0.0 {
                        let ph: f64 = (0..d).map(|i| p[i] as f64 * x[i]).sum::<f64>() * 2.0 * PI / self.l;
                        s += f * ph.cos();
                    }
                }
            }
        }
        s / self.l.powi(d as i32)
    }

    /// Sup norm; equals v(0) for positive-type potentials.
    pub fn sup_norm(&self) -> f64 {
        self.value(&vec![0.0; self.d]).abs()
    }
}

/// v_η with Fourier coefficients φ(ηp)(F_L v)(p).
pub fn regularized_potential(v: &InteractionPotential, reg: &RegularizationSpec) -> Result<InteractionPotential> {
    if let PotentialKind::Table { coeffs } = &v.kind {
        if let Some((p, c)) = coeffs.iter().find(|(_, c)| *c < 0.0) {
            return Err(Error::InvalidPotential(format!("negative Fourier coefficient {c} at {p:?}")));
        }
    }
    if v.regularization.is_some() {
        return domain("potential is already regularized");
    }
    let mut out = v.clone();
    out.regularization = Some((reg.eta, reg.spatial));
    Ok(out)
}

/// Sample of the classical free field P_K φ = Σ_{k≤K} (X_k/√λ_k) u_k.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalField {
    pub spec: TorusSpec,
    pub modes: Vec<Mode>,
    pub coeffs: Vec<Complex64>,
}

impl ClassicalField {
    pub fn value(&self, x: &[f64]) -> Complex64 {
        self.modes.iter().zip(&self.coeffs).map(|(m, c)| c * m.plane_wave(&self.spec, x)).sum()
    }

    /// ∫ |φ|² = Σ_k |c_k|².
    pub fn mass(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Draws the free-field coefficients on a basis.
pub fn sample_phi_on(basis: &SpectralBasis, rng: &mut impl Rng) -> ClassicalField {
    let coeffs = basis.modes.iter().map(|m| complex_normal(rng) / m.lambda.sqrt()).collect();
    ClassicalField { spec: basis.spec, modes: basis.modes.clone(), coeffs }
}

/// Free field truncated to the K+1 lowest modes, from a seed.
pub fn sample_phi(spec: &TorusSpec, k: usize, seed: u64) -> Result<ClassicalField> {
    let basis = SpectralBasis::lowest(*spec, k + 1)?;
    Ok(sample_phi_on(&basis, &mut rng_for(seed, 0)))
}

/// Fills Hermitian-paired Gaussian coefficients: z[j] and z[partner[j]] are
/// conjugate, self-paired entries are real N(0,1), all others have E|z|² = 1.
fn hermitian_gaussians(partner: &[usize], rng: &mut impl Rng) -> Vec<Complex64> {
    let mut z = vec![Complex64::new(0.0, 0.0); partner.len()];
    for j in 0..partner.len() {
        let q = partner[j];
        if q == j {
            z[j] = Complex64::new(normal(rng), 0.0);
        } else if q > j {
            let x = complex_normal(rng);
            z[j] = x;
            z[q] = x.conj();
        }
    }
    z
}

fn neg(p: &[i64; 3]) -> [i64; 3] {
    [-p[0], -p[1], -p[2]]
}

fn partner_index(ps: &[[i64; 3]]) -> Result<Vec<usize>> {
    ps.iter()
        .map(|p| {
            let q = neg(p);
            ps.iter().position(|r| *r == q).ok_or_else(|| Error::Domain(format!("frequency set not symmetric at {p:?}")))
        })
        .collect()
}

/// Space-time auxiliary field σ(τ, x) = Σ_{k,p} σ_{k,p} e^{2πi(kτ/ν + p·x/L)}.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxFieldSigma {
    pub spec: TorusSpec,
    pub nu: f64,
    pub lambda: f64,
    pub temporal: Vec<i64>,
    pub ps: Vec<[i64; 3]>,
    /// Row-major over (temporal index, spatial index).
    pub coeffs: Vec<Complex64>,
}

impl AuxFieldSigma {
    /// The zero field on the given frequency support.
    pub fn zero(spec: TorusSpec, nu: f64, lambda: f64, temporal: Vec<i64>, ps: Vec<[i64; 3]>) -> Self {
        let n = temporal.len() * ps.len();
        AuxFieldSigma { spec, nu, lambda, temporal, ps, coeffs: vec![Complex64::new(0.0, 0.0); n] }
    }

    /// Spatial Fourier coefficients s_p(τ) = Σ_k σ_{k,p} e^{2πikτ/ν}.
    pub fn spatial_coeffs_at(&self, tau: f64) -> Vec<Complex64> {
        let np = self.ps.len();
        let mut out = vec![Complex64::new(0.0, 0.0); np];
        for (ik, &k) in self.temporal.iter().enumerate() {
            let ph = Complex64::from_polar(1.0, 2.0 * PI * k as f64 * tau / self.nu);
            let row = &self.coeffs[ik * np..(ik + 1) * np];
            for (o, c) in out.iter_mut().zip(row) {
                *o += c * ph;
            }
        }
        out
    }

    /// Complex value; the imaginary part is a rounding residue.
    pub fn value_complex(&self, tau: f64, x: &[f64]) -> Complex64 {
        let s = self.spatial_coeffs_at(tau);
        plane_wave_sum(&self.spec, &self.ps, &s, x)
    }

    pub fn value(&self, tau: f64, x: &[f64]) -> f64 {
        self.value_complex(tau, x).re
    }

    /// Projected multiplication operator S_{ab}(τ) = s_{k_a − k_b}(τ).
    pub fn projected_matrix(&self, basis: &SpectralBasis, tau: f64) -> DMatrix<Complex64> {
        let s = self.spatial_coeffs_at(tau);
        projected_from_coeffs(basis, &self.ps, &s)
    }

    /// ⟨σ⟩(x) = (1/ν) ∫_0^ν σ(τ, x) dτ.
    pub fn time_average(&self) -> AuxFieldXi {
        let np = self.ps.len();
        let coeffs = match self.temporal.iter().position(|&k| k == 0) {
            Some(ik) => self.coeffs[ik * np..(ik + 1) * np].to_vec(),
            None => vec![Complex64::new(0.0, 0.0); np],
        };
        AuxFieldXi { spec: self.spec, ps: self.ps.clone(), coeffs }
    }

    /// ∫_0^ν dτ ∫ dx σ(τ, x).
    pub fn space_time_integral(&self) -> f64 {
        let xi = self.time_average();
        match xi.ps.iter().position(|p| *p == [0, 0, 0]) {
            Some(j) => self.nu * self.spec.volume() * xi.coeffs[j].re,
            None => 0.0,
        }
    }
}

fn plane_wave_sum(spec: &TorusSpec, ps: &[[i64; 3]], coeffs: &[Complex64], x: &[f64]) -> Complex64 {
    ps.iter()
        .zip(coeffs)
        .map(|(p, c)| {
            let ph: f64 = (0..spec.d).map(|i| 2.0 * PI * p[i] as f64 * x[i] / spec.l).sum();
            c * Complex64::from_polar(1.0, ph)
        })
        .sum()
}

fn projected_from_coeffs(basis: &SpectralBasis, ps: &[[i64; 3]], s: &[Complex64]) -> DMatrix<Complex64> {
    let n = basis.len();
    let lookup: std::collections::HashMap<[i64; 3], usize> = ps.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    DMatrix::from_fn(n, n, |a, b| {
        let ka = basis.modes[a].k;
        let kb = basis.modes[b].k;
        let p = [ka[0] - kb[0], ka[1] - kb[1], ka[2] - kb[2]];
        lookup.get(&p).map(|&j| s[j]).unwrap_or(Complex64::new(0.0, 0.0))
    })
}

/// Spatial auxiliary field ξ(x) = Σ_p ξ_p e^{2πip·x/L}.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxFieldXi {
    pub spec: TorusSpec,
    pub ps: Vec<[i64; 3]>,
    pub coeffs: Vec<Complex64>,
}

impl AuxFieldXi {
    pub fn value_complex(&self, x: &[f64]) -> Complex64 {
        plane_wave_sum(&self.spec, &self.ps, &self.coeffs, x)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.value_complex(x).re
    }

    /// Projected multiplication operator ⟨u_a, ξ u_b⟩ = ξ_{k_a − k_b}.
    pub fn projected_matrix(&self, basis: &SpectralBasis) -> DMatrix<Complex64> {
        projected_from_coeffs(basis, &self.ps, &self.coeffs)
    }

    /// Time-constant σ equal to this field.
    pub fn as_sigma(&self, nu: f64, lambda: f64) -> AuxFieldSigma {
        AuxFieldSigma { spec: self.spec, nu, lambda, temporal: vec![0], ps: self.ps.clone(), coeffs: self.coeffs.clone() }
    }
}

/// Frequencies at which the projected fields on a basis are needed.
pub fn basis_support(basis: &SpectralBasis) -> Vec<[i64; 3]> {
    let DifferenceSet { ps, .. } = basis.difference_set();
    ps
}

/// Draws σ with covariance (λ/ν) δ_{η,ν}(τ − τ̃) v_η(x − x̃), restricted to the
/// spatial frequencies `ps` (which must be closed under p ↦ −p).
pub fn sample_sigma(
    spec: &TorusSpec,
    reg: &RegularizationSpec,
    v: &InteractionPotential,
    nu: f64,
    lambda: f64,
    ps: &[[i64; 3]],
    rng: &mut impl Rng,
) -> Result<AuxFieldSigma> {
    if !(nu > 0.0) || lambda < 0.0 {
        return domain(format!("need nu > 0 and lambda >= 0, got {nu}, {lambda}"));
    }
    let tmodes = reg.temporal_modes();
    let temporal: Vec<i64> = tmodes.iter().map(|(k, _)| *k).collect();
    let np = ps.len();
    let mut labels = Vec::with_capacity(temporal.len() * np);
    for &k in &temporal {
        for p in ps {
            labels.push((k, *p));
        }
    }
    let index: std::collections::HashMap<(i64, [i64; 3]), usize> =
        labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let partner: Vec<usize> = labels
        .iter()
        .map(|(k, p)| index.get(&(-k, neg(p))).copied().ok_or_else(|| Error::Domain("frequency set not symmetric".into())))
        .collect::<Result<_>>()?;
    let z = hermitian_gaussians(&partner, rng);
    let pref = (lambda / nu).sqrt() / (nu * spec.volume()).sqrt();
    let coeffs = labels
        .iter()
        .zip(&z)
        .enumerate()
        .map(|(i, ((_, p), zi))| {
            let w = tmodes[i / np].1;
            let var = v.fourier(p) * reg.spatial_factor(p, spec.d) * w;
            zi * pref * var.max(0.0).sqrt()
        })
        .collect();
    Ok(AuxFieldSigma { spec: *spec, nu, lambda, temporal, ps: ps.to_vec(), coeffs })
}

/// Draws ξ with covariance v_η(x − x̃) on the frequencies `ps`.
pub fn sample_xi(
    spec: &TorusSpec,
    reg: &RegularizationSpec,
    v: &InteractionPotential,
    ps: &[[i64; 3]],
    rng: &mut impl Rng,
) -> Result<AuxFieldXi> {
    let partner = partner_index(ps)?;
    let z = hermitian_gaussians(&partner, rng);
    let pref = spec.volume().sqrt().recip();
    let coeffs = ps
        .iter()
        .zip(&z)
        .map(|(p, zi)| zi * pref * (v.fourier(p) * reg.spatial_factor(p, spec.d)).max(0.0).sqrt())
        .collect();
    Ok(AuxFieldXi { spec: *spec, ps: ps.to_vec(), coeffs })
}

/// Draws ξ with covariance exactly v (no further regularization).
pub fn sample_xi_unregularized(
    spec: &TorusSpec,
    v: &InteractionPotential,
    ps: &[[i64; 3]],
    rng: &mut impl Rng,
) -> Result<AuxFieldXi> {
    let partner = partner_index(ps)?;
    let z = hermitian_gaussians(&partner, rng);
    let pref = spec.volume().sqrt().recip();
    let coeffs = ps.iter().zip(&z).map(|(p, zi)| zi * pref * v.fourier(p).max(0.0).sqrt()).collect();
    Ok(AuxFieldXi { spec: *spec, ps: ps.to_vec(), coeffs })
}
