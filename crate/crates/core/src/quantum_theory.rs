//! Quantum side of the functional integral: periodic propagators driven by
//! u = −κ + iσ, Green functions, the functionals F₀, F₁, F₂ and Monte Carlo
//! estimators of the relative partition function and reduced density matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::brownian::{path_line_integral, sample_bridge_with, BridgeMeasureSpec, BridgePath};
use crate::classical_theory::{bilinear, density_expansion, kernel_from_samples, sub_permanent, CorrelationKernel, KernelPoint};
use crate::error::{domain, Error, Result};
use crate::gaussian_fields::{
    basis_support, permanent, regularized_delta, sample_sigma, AuxFieldSigma, InteractionPotential, RegularizationSpec,
};
use crate::stats::{par_samples, ratio_estimate, MCEstimate};
use crate::torus_spectral::{heat_kernel_general, SpectralBasis, TorusSpec};

pub use crate::classical_theory::{hat_from_plain as hat_conversion_quantum, plain_from_hat as plain_conversion_quantum};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// W^{τ,τ̃}(−κ + iσ) on a truncated spectral basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorMatrix {
    pub tau_from: f64,
    pub tau_to: f64,
    pub matrix: DMatrix<Complex64>,
}

impl PropagatorMatrix {
    /// Largest singular value.
    pub fn operator_norm(&self) -> f64 {
        operator_norm(&self.matrix)
    }

    /// Position kernel W_{x,x̃} = Σ u_a(x) W_ab ū_b(x̃).
    pub fn kernel(&self, basis: &SpectralBasis, x: &[f64], xt: &[f64]) -> Complex64 {
        basis.kernel_at(&self.matrix, x, xt)
    }
}

pub(crate) fn operator_norm(m: &DMatrix<Complex64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Green function (K(u)^{-1})^{0,0} = Σ_{n≥1} (W^{ν,0})^n.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenKernel {
    pub matrix: DMatrix<Complex64>,
    /// Number of loop-sum terms kept by the verification route; 0 when only the solve route ran.
    pub loop_terms: usize,
    /// Bound on the neglected tail of the loop sum.
    pub tail_bound: f64,
}

/// Extra chemical-potential phase e^{−iρ[σ]} with [σ] = ∫∫σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityShift {
    pub rho_shift: f64,
}

impl DensityShift {
    pub fn new(rho_shift: f64) -> Result<Self> {
        if !rho_shift.is_finite() {
            return domain("density shift must be finite");
        }
        Ok(DensityShift { rho_shift })
    }
}

/// Galerkin–Strang integrator of ∂_τ W = (Δ/2 − κ + iσ(τ)) W on `basis`.
/// Each step applies a half kinetic step, the exact unitary flow of the
/// projected σ frozen at the step midpoint, and another half kinetic step.
pub fn propagate(
    basis: &SpectralBasis,
    sigma: &AuxFieldSigma,
    tau_from: f64,
    tau_to: f64,
    n_steps: usize,
) -> Result<PropagatorMatrix> {
    if n_steps < 1 {
        return domain("propagate needs n_steps >= 1");
    }
    if !(tau_to >= tau_from) {
        return domain(format!("propagate needs tau_to >= tau_from, got [{tau_from}, {tau_to}]"));
    }
    let n = basis.len();
    let lambdas = basis.lambdas();
    let dt = (tau_to - tau_from) / n_steps as f64;
    let half: Vec<f64> = lambdas.iter().map(|l| (-0.5 * dt * l).exp()).collect();
    let mut w = DMatrix::<Complex64>::identity(n, n);
    if dt == 0.0 {
        return Ok(PropagatorMatrix { tau_from, tau_to, matrix: w });
    }
    let trivial = sigma.coeffs.iter().all(|c| *c == ZERO);
    for j in 0..n_steps {
        // W ← D U D W, with D diagonal.
        scale_rows(&mut w, &half);
        if !trivial {
            let mid = tau_from + (j as f64 + 0.5) * dt;
            let u = unitary_step(&sigma.projected_matrix(basis, mid), dt);
            w = u * w;
        }
        scale_rows(&mut w, &half);
    }
    Ok(PropagatorMatrix { tau_from, tau_to, matrix: w })
}

fn scale_rows(m: &mut DMatrix<Complex64>, d: &[f64]) {
    for (i, di) in d.iter().enumerate() {
        m.row_mut(i).scale_mut(*di);
    }
}

/// e^{i dt S} for Hermitian S.
fn unitary_step(s: &DMatrix<Complex64>, dt: f64) -> DMatrix<Complex64> {
    let herm = (s + s.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let v = &eig.eigenvectors;
    let phases: Vec<Complex64> = eig.eigenvalues.iter().map(|&e| Complex64::from_polar(1.0, dt * e)).collect();
    let mut vp = v.clone();
    for (j, ph) in phases.iter().enumerate() {
        for c in vp.column_mut(j).iter_mut() {
            *c *= ph;
        }
    }
    vp * v.adjoint()
}

/// Feynman–Kac route: ψ^{τ−τ̃}(x − x̃) E[exp ∫ (−κ + iσ([t]_ν, ω(t))) dt] over bridges.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_kernel(
    spec: &TorusSpec,
    sigma: &AuxFieldSigma,
    tau_from: f64,
    tau_to: f64,
    x: &[f64],
    xt: &[f64],
    n_samples: usize,
    m: usize,
    seed: u64,
) -> Result<MCEstimate> {
    let bridge = BridgeMeasureSpec::new(spec.l, tau_from, tau_to, xt, x, m)?;
    let mass = bridge.weight();
    let damp = (-spec.kappa * bridge.duration()).exp();
    let samples: Vec<Result<Complex64>> = par_samples(n_samples, seed, |rng, _| {
        let path = sample_bridge_with(&bridge, rng)?;
        let phase = path_line_integral(&path, |t, y| sigma.value(t.rem_euclid(sigma.nu), y));
        Ok(Complex64::from_polar(mass * damp, phase))
    });
    let xs = samples.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MCEstimate::from_samples(&xs, seed))
}

/// Green function of K(u) from W^{ν,0}: W(1 − W)^{-1} by one linear solve, with
/// the loop sum Σ_{n=1}^{R} W^n cross-checked to its geometric tail.
pub fn green_kernel(w_period: &PropagatorMatrix, verify_loop_sum: bool) -> Result<GreenKernel> {
    let w = &w_period.matrix;
    let n = w.nrows();
    let radius = spectral_radius(w)?;
    if radius >= 1.0 {
        return Err(Error::Divergence(format!("spectral radius of W^(nu,0) is {radius}")));
    }
    let one_minus = DMatrix::<Complex64>::identity(n, n) - w;
    let lu = one_minus.lu();
    // G = W (1 − W)^{-1} = (1 − W)^{-1} W since they commute.
    let g = lu.solve(w).ok_or_else(|| Error::Numerical("1 - W is singular".into()))?;
    if !verify_loop_sum {
        return Ok(GreenKernel { matrix: g, loop_terms: 0, tail_bound: 0.0 });
    }
    let norm = operator_norm(w);
    let (sum, terms, tail) = loop_sum(w, norm, 1e-10)?;
    let dist = (&sum - &g).norm();
    if dist > tail * (n as f64).sqrt() + 1e-10 * (1.0 + g.norm()) {
        return Err(Error::Numerical(format!("loop sum and linear solve disagree by {dist:e} (tail {tail:e})")));
    }
    Ok(GreenKernel { matrix: g, loop_terms: terms, tail_bound: tail })
}

/// Σ_{n=1}^{R} W^n with R chosen so that ‖W‖^{R+1}/(1 − ‖W‖) < tol; returns (sum, R, tail bound).
pub fn loop_sum(w: &DMatrix<Complex64>, norm: f64, tol: f64) -> Result<(DMatrix<Complex64>, usize, f64)> {
    if norm >= 1.0 {
        return Err(Error::Divergence(format!("operator norm {norm} >= 1, loop sum has no geometric bound")));
    }
    let n = w.nrows();
    let mut sum = DMatrix::<Complex64>::zeros(n, n);
    let mut power = DMatrix::<Complex64>::identity(n, n);
    let mut terms = 0;
    loop {
        power = &power * w;
        sum += &power;
        terms += 1;
        let tail = norm.powi(terms as i32 + 1) / (1.0 - norm);
        if tail < tol || terms > 100_000 {
            return Ok((sum, terms, tail));
        }
    }
}

fn eigenvalues(w: &DMatrix<Complex64>) -> Result<Vec<Complex64>> {
    let ev = w
        .clone()
        .schur()
        .eigenvalues()
        .ok_or_else(|| Error::Numerical("Schur form did not yield eigenvalues".into()))?;
    Ok(ev.iter().copied().collect())
}

fn spectral_radius(w: &DMatrix<Complex64>) -> Result<f64> {
    Ok(eigenvalues(w)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// F₀(σ) = −Σ log(1 − μ_i) over the eigenvalues of W^{ν,0}.
pub fn f0_from_period(w: &PropagatorMatrix) -> Result<Complex64> {
    let mut f = ZERO;
    for mu in eigenvalues(&w.matrix)? {
        if mu.norm() >= 1.0 {
            return Err(Error::Divergence(format!("eigenvalue of modulus {} in W^(nu,0)", mu.norm())));
        }
        f -= (ONE - mu).ln();
    }
    Ok(f)
}

/// F₀ of the free propagator, −Σ log(1 − e^{−νλ_k}).
pub fn f0_free(basis: &SpectralBasis, nu: f64) -> f64 {
    basis.lambdas().iter().map(|l| -(-(-nu * l).exp_m1()).ln()).sum::<f64>()
}

/// Log-expansion route F₀ ≈ Σ_{ℓ≤R} (1/ℓ) tr W^ℓ; returns (value, R, tail bound).
pub fn f0_log_series(w: &PropagatorMatrix, tol: f64) -> Result<(Complex64, usize, f64)> {
    let norm = w.operator_norm();
    if norm >= 1.0 {
        return Err(Error::Divergence(format!("operator norm {norm} >= 1")));
    }
    let n = w.matrix.nrows();
    let mut power = DMatrix::<Complex64>::identity(n, n);
    let mut f = ZERO;
    let mut l = 0usize;
    loop {
        l += 1;
        power = &power * &w.matrix;
        f += power.trace() / l as f64;
        let tail = n as f64 * norm.powi(l as i32 + 1) / ((l + 1) as f64 * (1.0 - norm));
        if tail < tol || l > 100_000 {
            return Ok((f, l, tail));
        }
    }
}

/// Quantum model on a finite spectral basis with λ, ν and the regularization.
#[derive(Debug, Clone)]
pub struct QuantumModel {
    pub basis: SpectralBasis,
    pub reg: RegularizationSpec,
    /// Unregularized potential; the spatial cutoff enters through `reg`.
    pub v: InteractionPotential,
    pub nu: f64,
    pub lambda: f64,
    pub n_steps: usize,
    ps: Vec<[i64; 3]>,
    rho: f64,
    f0_free: f64,
}

impl QuantumModel {
    /// Mean-field model λ = ν² on the K+1 lowest modes.
    pub fn new(spec: &TorusSpec, reg: &RegularizationSpec, v: &InteractionPotential, nu: f64, k: usize, n_steps: usize) -> Result<Self> {
        Self::on_basis(SpectralBasis::lowest(*spec, k + 1)?, reg, v, nu, nu * nu, n_steps)
    }

    pub fn on_basis(
        basis: SpectralBasis,
        reg: &RegularizationSpec,
        v: &InteractionPotential,
        nu: f64,
        lambda: f64,
        n_steps: usize,
    ) -> Result<Self> {
        if !(nu > 0.0) || !(lambda >= 0.0) {
            return domain(format!("need nu > 0 and lambda >= 0, got {nu}, {lambda}"));
        }
        if n_steps < 1 {
            return domain("n_steps must be >= 1");
        }
        if v.regularization.is_some() {
            return domain("pass the unregularized potential; the cutoff is applied from the regularization spec");
        }
        let ps = basis_support(&basis);
        let rho = basis.free_density(nu);
        let f0_free = f0_free(&basis, nu);
        Ok(QuantumModel { basis, reg: reg.clone(), v: v.clone(), nu, lambda, n_steps, ps, rho, f0_free })
    }

    /// Truncated free density ϱ = ν Σ_k |u_k|²/(e^{νλ_k} − 1).
    pub fn density(&self) -> f64 {
        self.rho
    }

    pub fn sample_sigma(&self, rng: &mut impl rand::Rng) -> AuxFieldSigma {
        sample_sigma(&self.basis.spec, &self.reg, &self.v, self.nu, self.lambda, &self.ps, rng)
            .expect("support is symmetric and parameters validated")
    }

    pub fn zero_sigma(&self) -> AuxFieldSigma {
        AuxFieldSigma::zero(self.basis.spec, self.nu, self.lambda, vec![0], self.ps.clone())
    }

    pub fn period_propagator(&self, sigma: &AuxFieldSigma) -> Result<PropagatorMatrix> {
        propagate(&self.basis, sigma, 0.0, self.nu, self.n_steps)
    }

    /// (F₀(σ), F₁(σ)).
    pub fn f0_f1(&self, sigma: &AuxFieldSigma) -> Result<(Complex64, Complex64)> {
        let w = self.period_propagator(sigma)?;
        let f0 = f0_from_period(&w)?;
        let f1 = f0 - self.f0_free;
        if f1.re > 1e-8 {
            return Err(Error::Numerical(format!("Re F1 = {:e} is positive", f1.re)));
        }
        Ok((f0, f1))
    }

    /// ⟨σ, ϱ⟩ = (1/ν) ∫∫ σ ϱ for the truncated translation-invariant ϱ.
    pub fn sigma_rho_pairing(&self, sigma: &AuxFieldSigma) -> f64 {
        sigma_rho_pairing(sigma, self.rho)
    }

    /// F₂ = F₁ − i⟨σ, ϱ⟩ together with W^{ν,0}.
    pub fn f2_with_propagator(&self, sigma: &AuxFieldSigma) -> Result<(Complex64, PropagatorMatrix)> {
        let w = self.period_propagator(sigma)?;
        let f1 = f0_from_period(&w)? - self.f0_free;
        let f2 = f1 - Complex64::new(0.0, self.sigma_rho_pairing(sigma));
        if f2.re > 1e-8 {
            return Err(Error::Numerical(format!("Re F2 = {:e} is positive", f2.re)));
        }
        Ok((f2, w))
    }

    pub fn f2(&self, sigma: &AuxFieldSigma) -> Result<Complex64> {
        Ok(self.f2_with_propagator(sigma)?.0)
    }

    /// Free Green function e^{−νh}(1 − e^{−νh})^{-1}, diagonal in the basis.
    pub fn free_green(&self) -> DMatrix<Complex64> {
        let d: Vec<Complex64> = self
            .basis
            .lambdas()
            .iter()
            .map(|l| {
                let q = (-self.nu * l).exp();
                Complex64::new(q / (1.0 - q), 0.0)
            })
            .collect();
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d))
    }
}

/// ⟨σ, ϱ⟩ = (1/ν) ∫_0^ν dτ ∫ dx σ(τ, x) ϱ for constant ϱ.
pub fn sigma_rho_pairing(sigma: &AuxFieldSigma, rho: f64) -> f64 {
    rho * sigma.space_time_integral() / sigma.nu
}

/// ϱ from the double loop-length series of the two-resolvent trace, evaluated on
/// the basis diagonal. Independent of the closed form ν/(e^{νh} − 1).
pub fn density_from_loop_series(basis: &SpectralBasis, nu: f64, tol: f64) -> f64 {
    let vol = basis.spec.volume();
    let mut total = 0.0;
    for l in basis.lambdas() {
        let b = (-nu * l).exp();
        // Single sums (r = 0 or r̃ = 0) contribute ν Σ_n b^n/(nν) each, weighted by τ and ν − τ,
        // which add to ν; the double sum contributes ν Σ_{n,m} b^{n+m}/((n+m)ν).
        let mut single = 0.0;
        let mut double = 0.0;
        let mut n = 1usize;
        loop {
            let bn = b.powi(n as i32);
            single += bn / n as f64;
            // Number of (n', m') with n' + m' = n + 1 and both ≥ 1 is n.
            let bn1 = bn * b;
            double += n as f64 * bn1 / (n + 1) as f64;
            if bn < tol * (1.0 - b) {
                break;
            }
            n += 1;
        }
        total += single + double;
    }
    nu * total / vol
}

/// Relative partition function 𝒵_η = E e^{F₂(σ)}, optionally with the phase e^{−iρ[σ]}.
pub fn estimate_z_quantum(model: &QuantumModel, n_samples: usize, seed: u64, shift: Option<DensityShift>) -> Result<MCEstimate> {
    let xs: Vec<Result<Complex64>> = par_samples(n_samples, seed, |rng, _| {
        let sigma = model.sample_sigma(rng);
        let mut f = model.f2(&sigma)?;
        if let Some(s) = shift {
            f -= Complex64::new(0.0, s.rho_shift * sigma.space_time_integral());
        }
        Ok(f.exp())
    });
    let xs = xs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MCEstimate::from_samples(&xs, seed))
}

fn check_points(p: usize, points: &[KernelPoint]) -> Result<()> {
    if p < 1 {
        return domain("correlation order must be >= 1");
    }
    if points.iter().any(|pt| pt.x.len() != p || pt.xt.len() != p) {
        return domain(format!("every evaluation point must carry {p} + {p} positions"));
    }
    Ok(())
}

/// Ratio estimator of Γ̂_{p,η} (wick = true) or Γ_{p,η} (wick = false) at the
/// evaluation points: E[e^{F₂} perm((G(σ) − G(0))(x_i, x̃_j))]/E[e^{F₂}].
pub fn estimate_gamma_hat_p(
    model: &QuantumModel,
    p: usize,
    points: &[KernelPoint],
    n_samples: usize,
    seed: u64,
    wick: bool,
) -> Result<CorrelationKernel> {
    check_points(p, points)?;
    let free = model.free_green();
    let waves = point_waves(&model.basis, points);
    let samples: Vec<Result<(Vec<Complex64>, Complex64)>> = par_samples(n_samples, seed, |rng, _| {
        let sigma = model.sample_sigma(rng);
        let (f2, w) = model.f2_with_propagator(&sigma)?;
        let mut g = green_kernel(&w, false)?.matrix;
        if wick {
            g -= &free;
        }
        let ef = f2.exp();
        let nums = waves
            .iter()
            .map(|(wx, wxt)| permanent(&DMatrix::from_fn(p, p, |i, j| bilinear(&g, &wx[i], &wxt[j]))) * ef)
            .collect();
        Ok((nums, ef))
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    kernel_from_samples(p, points, samples, seed, wick)
}

fn point_waves(basis: &SpectralBasis, points: &[KernelPoint]) -> Vec<(Vec<Vec<Complex64>>, Vec<Vec<Complex64>>)> {
    points
        .iter()
        .map(|pt| {
            (
                pt.x.iter().map(|q| basis.plane_waves(q)).collect(),
                pt.xt.iter().map(|q| basis.plane_waves(q).iter().map(|c| c.conj()).collect()).collect(),
            )
        })
        .collect()
}

/// Free reduced density matrix Γ⁰_p: permanent of the one-body kernel e^{−νh}/(1 − e^{−νh}).
pub fn free_gamma_p0(model: &QuantumModel, p: usize, points: &[KernelPoint]) -> Result<CorrelationKernel> {
    check_points(p, points)?;
    let g = model.free_green();
    let values = point_waves(&model.basis, points)
        .iter()
        .map(|(wx, wxt)| MCEstimate::exact(permanent(&DMatrix::from_fn(p, p, |i, j| bilinear(&g, &wx[i], &wxt[j]))), 0))
        .collect();
    Ok(CorrelationKernel { p, points: points.to_vec(), values, wick_ordered: false })
}

/// Tr[ν^p :N(x₁):⋯:N(x_p): e^{−H}]/Z assembled from per-sample Γ̂ kernels and
/// off-diagonal free kernels νΓ⁰ through fixed-point-free bijections.
pub fn density_correlation_quantum(model: &QuantumModel, points: &[Vec<f64>], n_samples: usize, seed: u64) -> Result<MCEstimate> {
    let p = points.len();
    if p < 1 {
        return domain("need at least one point");
    }
    let nu = model.nu;
    let free = model.free_green();
    let xw: Vec<Vec<Complex64>> = points.iter().map(|q| model.basis.plane_waves(q)).collect();
    let xwc: Vec<Vec<Complex64>> = xw.iter().map(|u| u.iter().map(|c| c.conj()).collect()).collect();
    let g0 = DMatrix::from_fn(p, p, |i, j| bilinear(&free, &xw[i], &xwc[j]) * nu);
    let samples: Vec<Result<(Complex64, Complex64)>> = par_samples(n_samples, seed, |rng, _| {
        let sigma = model.sample_sigma(rng);
        let (f2, w) = model.f2_with_propagator(&sigma)?;
        let d = green_kernel(&w, false)?.matrix - &free;
        let dpos = DMatrix::from_fn(p, p, |i, j| bilinear(&d, &xw[i], &xwc[j]) * nu);
        let ef = f2.exp();
        let value = density_expansion(p, &|j, jt| sub_permanent(&dpos, j, jt), &|i, j| g0[(i, j)]);
        Ok((value * ef, ef))
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let (num, den): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
    ratio_estimate(&num, &den, seed)
}

/// Point-point interaction V_η(x, x̃) = v_η(x − x̃).
pub fn point_point(v_eta: &InteractionPotential, x: &[f64], xt: &[f64]) -> f64 {
    let dx: Vec<f64> = x.iter().zip(xt).map(|(a, b)| a - b).collect();
    v_eta.value(&dx)
}

/// Point-path interaction ∫ ds v_η(x − ω(s)).
pub fn point_path(v_eta: &InteractionPotential, x: &[f64], path: &BridgePath) -> f64 {
    path_line_integral(path, |_, y| point_point(v_eta, x, y))
}

/// Path-path interaction ∫ ds ∫ ds̃ v_η(ω(s) − ω̃(s̃)).
pub fn path_path(v_eta: &InteractionPotential, a: &BridgePath, b: &BridgePath) -> f64 {
    path_line_integral(a, |_, y| point_path(v_eta, y, b))
}

/// Periodic path-path interaction ν ∫ ds ∫ ds̃ δ_{η,ν}(s − s̃) v_η(ω(s) − ω̃(s̃)).
pub fn path_path_periodic(
    reg: &RegularizationSpec,
    nu: f64,
    v_eta: &InteractionPotential,
    a: &BridgePath,
    b: &BridgePath,
) -> Result<f64> {
    // Validates the regularization once; the series itself cannot fail afterwards.
    regularized_delta(reg, nu, 0.0)?;
    let value = path_line_integral(a, |s, y| {
        path_line_integral(b, |st, yt| regularized_delta(reg, nu, s - st).unwrap_or(0.0) * point_point(v_eta, y, yt))
    });
    Ok(nu * value)
}

/// Heat-kernel form of the free one-body kernel Σ_{n≥1} e^{−κνn} ψ^{νn}(x − x̃),
/// truncated when the geometric tail falls below `tol`.
pub fn free_green_heat_series(spec: &TorusSpec, nu: f64, x: &[f64], xt: &[f64], tol: f64) -> Result<f64> {
    let dx: Vec<f64> = x.iter().zip(xt).map(|(a, b)| a - b).collect();
    let q = (-spec.kappa * nu).exp();
    let mut total = 0.0;
    let mut n = 1;
    loop {
        let t = nu * n as f64;
        let term = q.powi(n) * heat_kernel_general(spec.l, t, &dx)?;
        total += term;
        // ψ^t is nonincreasing in t at any x once t ≥ L²/(2π); bound the tail geometrically.
        if term * q / (1.0 - q) < tol && t > spec.l * spec.l {
            return Ok(total);
        }
        n += 1;
        if n > 10_000_000 {
            return Err(Error::Convergence("heat series did not converge".into()));
        }
    }
}
