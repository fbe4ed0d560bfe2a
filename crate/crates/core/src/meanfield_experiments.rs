//! Convergence studies: ν-sweeps of quantum against classical quantities,
//! particle-number moments, free-kernel convergence and Riemann-sum
//! diagnostics.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::classical_theory::{estimate_gamma_hat_phi, estimate_zeta_model, ClassicalModel, KernelPoint};
use crate::error::{domain, Error, Result};
use crate::exact_oracles::{FockOptions, FockSystem, FockTruncation};
use crate::gaussian_fields::{
    regularized_potential, sample_phi_on, InteractionPotential, PotentialKind, RegularizationSpec,
};
use crate::quantum_theory::{estimate_gamma_hat_p, estimate_z_quantum, QuantumModel};
use crate::stats::{combined_sigma, count_inversions, log_log_slope, par_samples, MCEstimate};
use crate::torus_spectral::{SpectralBasis, TorusSpec};

/// One row of a result table; the CSV export uses these columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub nu: Option<f64>,
    pub eta: Option<f64>,
    pub quantity: String,
    pub value_re: f64,
    pub value_im: f64,
    pub std_error: f64,
    pub tail_bound: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl ResultRow {
    pub fn from_estimate(nu: Option<f64>, eta: Option<f64>, quantity: impl Into<String>, e: &MCEstimate) -> Self {
        ResultRow {
            nu,
            eta,
            quantity: quantity.into(),
            value_re: e.value.re,
            value_im: e.value.im,
            std_error: e.std_error,
            tail_bound: 0.0,
            n_samples: e.n_samples,
            seed: e.seed,
        }
    }

    pub fn exact(nu: Option<f64>, eta: Option<f64>, quantity: impl Into<String>, value: f64, tail_bound: f64) -> Self {
        ResultRow {
            nu,
            eta,
            quantity: quantity.into(),
            value_re: value,
            value_im: 0.0,
            std_error: 0.0,
            tail_bound,
            n_samples: 0,
            seed: 0,
        }
    }
}

/// Finite-ν convergence proxy: final gap below tolerance + 5σ and at most one
/// increase along the decreasing-ν sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendVerdict {
    pub gaps: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub inversions: usize,
    pub final_gap: f64,
    pub final_sigma: f64,
    pub tolerance: f64,
    pub converged: bool,
    /// Every gap is within 2σ of zero, so the trend is not resolved.
    pub inconclusive: bool,
}

impl TrendVerdict {
    pub fn assess(gaps: &[f64], sigmas: &[f64], tolerance: f64) -> Self {
        let inversions = count_inversions(gaps);
        let final_gap = *gaps.last().unwrap_or(&f64::NAN);
        let final_sigma = *sigmas.last().unwrap_or(&f64::NAN);
        let converged = inversions <= 1 && final_gap < tolerance + 5.0 * final_sigma;
        let inconclusive = gaps.iter().zip(sigmas).all(|(g, s)| *g < 2.0 * s);
        TrendVerdict {
            gaps: gaps.to_vec(),
            sigmas: sigmas.to_vec(),
            inversions,
            final_gap,
            final_sigma,
            tolerance,
            converged,
            inconclusive,
        }
    }
}

/// Configuration of a ν-sweep on the torus with λ = ν².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuSweepConfig {
    pub d: usize,
    pub l: f64,
    pub kappa: f64,
    pub potential: PotentialKind,
    pub eta: f64,
    /// Basis size K (K + 1 modes).
    pub k: usize,
    pub nus: Vec<f64>,
    pub n_steps: usize,
    pub n_quantum: usize,
    pub n_classical: usize,
    pub points1: Vec<KernelPoint>,
    #[serde(default)]
    pub points2: Vec<KernelPoint>,
    pub tolerance: f64,
    pub seed: u64,
}

/// Quantum-versus-classical gaps at one ν.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuSweepRow {
    pub nu: f64,
    pub z_ratio: MCEstimate,
    pub gap_z: f64,
    pub sigma_z: f64,
    pub gap_g1: f64,
    pub sigma_g1: f64,
    pub gap_g2: Option<f64>,
    pub sigma_g2: Option<f64>,
    /// sup over points of |ν/(e^{νh} − 1) − h^{-1}| on the basis.
    pub free_gap: f64,
    pub inconclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuSweepReport {
    pub zeta: MCEstimate,
    pub rows: Vec<NuSweepRow>,
    pub z_trend: TrendVerdict,
    pub g1_trend: TrendVerdict,
    pub table: Vec<ResultRow>,
}

fn sup_gap(quantum: &[MCEstimate], nu_power: f64, classical: &[MCEstimate]) -> (f64, f64) {
    let mut best = (0.0, 0.0);
    for (q, c) in quantum.iter().zip(classical) {
        let gap = (q.value * nu_power - c.value).norm();
        if gap >= best.0 {
            best = (gap, combined_sigma(q.std_error * nu_power, c.std_error));
        }
    }
    best
}

/// Runs the ν-sweep: Z/Z⁰ against ζ, and νΓ̂₁ (and ν²Γ̂₂ when `points2` is
/// nonempty) against γ̂ at matched η.
pub fn run_nu_sweep(config: &NuSweepConfig) -> Result<NuSweepReport> {
    if config.d == 3 {
        let modes = config.k + 1;
        return Err(Error::Refused(format!(
            "d = 3 sweeps are out of scope; estimated cost {} flops per quantum sample ({} steps x {}^3)",
            config.n_steps * modes.pow(3) * 10,
            config.n_steps,
            modes
        )));
    }
    if config.d != 1 && config.d != 2 {
        return domain(format!("the sweep supports d = 1 or 2, got {}", config.d));
    }
    if config.nus.windows(2).any(|w| !(w[1] < w[0])) {
        return domain("the nu list must be strictly decreasing");
    }
    let spec = TorusSpec::new(config.d, config.l, config.kappa, 64)?;
    let v = InteractionPotential::new(&spec, config.potential.clone())?;
    let reg = RegularizationSpec::with_eta(config.eta)?;
    let v_eta = regularized_potential(&v, &reg)?;
    let classical = ClassicalModel::new(&spec, &v_eta, config.k)?;
    let zeta = estimate_zeta_model(&classical, config.n_classical, config.seed);
    let gh1 = estimate_gamma_hat_phi(&classical, 1, &config.points1, config.n_classical, config.seed.wrapping_add(1))?;
    let gh2 = if config.points2.is_empty() {
        None
    } else {
        Some(estimate_gamma_hat_phi(&classical, 2, &config.points2, config.n_classical, config.seed.wrapping_add(2))?)
    };
    let eta = Some(config.eta);
    let mut table = vec![
        ResultRow::from_estimate(None, eta, "zeta", &zeta),
    ];
    for (i, e) in gh1.values.iter().enumerate() {
        table.push(ResultRow::from_estimate(None, eta, format!("gamma_hat_1[{i}]"), e));
    }
    let mut rows = Vec::new();
    for (j, &nu) in config.nus.iter().enumerate() {
        let seed = config.seed.wrapping_add(100 * (j as u64 + 1));
        let model = QuantumModel::new(&spec, &reg, &v, nu, config.k, config.n_steps)?;
        let z = estimate_z_quantum(&model, config.n_quantum, seed, None)?;
        let g1 = estimate_gamma_hat_p(&model, 1, &config.points1, config.n_quantum, seed.wrapping_add(1), true)?;
        let gap_z = (z.value - zeta.value).norm();
        let sigma_z = combined_sigma(z.std_error, zeta.std_error);
        let (gap_g1, sigma_g1) = sup_gap(&g1.values, nu, &gh1.values);
        let (gap_g2, sigma_g2) = match &gh2 {
            Some(c) => {
                let g2 = estimate_gamma_hat_p(&model, 2, &config.points2, config.n_quantum, seed.wrapping_add(2), true)?;
                let (g, s) = sup_gap(&g2.values, nu * nu, &c.values);
                (Some(g), Some(s))
            }
            None => (None, None),
        };
        let free_gap = config
            .points1
            .iter()
            .map(|pt| {
                model
                    .basis
                    .diagonal_kernel(|l| nu / (nu * l).exp_m1() - 1.0 / l, &pt.x[0], &pt.xt[0])
                    .norm()
            })
            .fold(0.0, f64::max);
        let inconclusive = gap_z < 2.0 * sigma_z && gap_g1 < 2.0 * sigma_g1;
        table.push(ResultRow::from_estimate(Some(nu), eta, "z_ratio", &z));
        for (i, e) in g1.values.iter().enumerate() {
            table.push(ResultRow::from_estimate(Some(nu), eta, format!("nu_Gamma_hat_1[{i}]"), &scaled(e, nu)));
        }
        table.push(gap_row(nu, config.eta, "gap_z", gap_z, sigma_z, config.n_quantum, seed));
        table.push(gap_row(nu, config.eta, "gap_gamma_hat_1", gap_g1, sigma_g1, config.n_quantum, seed));
        if let (Some(g), Some(s)) = (gap_g2, sigma_g2) {
            table.push(gap_row(nu, config.eta, "gap_gamma_hat_2", g, s, config.n_quantum, seed));
        }
        table.push(ResultRow::exact(Some(nu), eta, "free_kernel_gap", free_gap, 0.0));
        rows.push(NuSweepRow { nu, z_ratio: z, gap_z, sigma_z, gap_g1, sigma_g1, gap_g2, sigma_g2, free_gap, inconclusive });
    }
    let z_trend = TrendVerdict::assess(
        &rows.iter().map(|r| r.gap_z).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.sigma_z).collect::<Vec<_>>(),
        config.tolerance,
    );
    let g1_trend = TrendVerdict::assess(
        &rows.iter().map(|r| r.gap_g1).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.sigma_g1).collect::<Vec<_>>(),
        config.tolerance,
    );
    Ok(NuSweepReport { zeta, rows, z_trend, g1_trend, table })
}

fn scaled(e: &MCEstimate, s: f64) -> MCEstimate {
    MCEstimate { value: e.value * s, std_error: e.std_error * s, ..*e }
}

fn gap_row(nu: f64, eta: f64, quantity: &str, gap: f64, sigma: f64, n: usize, seed: u64) -> ResultRow {
    ResultRow {
        nu: Some(nu),
        eta: Some(eta),
        quantity: quantity.into(),
        value_re: gap,
        value_im: 0.0,
        std_error: sigma,
        tail_bound: 0.0,
        n_samples: n,
        seed,
    }
}

/// Configuration of the particle-number moment comparison on a single mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityMomentsConfig {
    pub l: f64,
    pub kappa: f64,
    /// v̂(0); only the zero mode is retained.
    pub v_hat_zero: f64,
    pub nus: Vec<f64>,
    pub max_moment: usize,
    pub n_max: usize,
    pub n_classical: usize,
    pub seed: u64,
}

/// Moment m of ν:N: (Fock) and of :n: (classical) at one ν.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub nu: f64,
    pub m: usize,
    pub quantum: f64,
    pub tail_bound: f64,
    pub classical: MCEstimate,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMomentsReport {
    pub rows: Vec<MomentRow>,
    pub table: Vec<ResultRow>,
}

/// Single-mode model on the torus of dimension 1 and side `l`.
fn single_mode(config: &DensityMomentsConfig) -> Result<(TorusSpec, SpectralBasis, InteractionPotential)> {
    let spec = TorusSpec::new(1, config.l, config.kappa, 4)?;
    let basis = SpectralBasis::from_wavevectors(spec, &[[0, 0, 0]])?;
    let v = InteractionPotential::new(&spec, PotentialKind::Table { coeffs: vec![([0, 0, 0], config.v_hat_zero)] })?;
    Ok((spec, basis, v))
}

/// Classical moments E[:n:^m e^{−W}]/E[e^{−W}] for m = 1..=max_m by φ-sampling.
pub fn classical_number_moments(model: &ClassicalModel, max_m: usize, n_samples: usize, seed: u64) -> Result<Vec<MCEstimate>> {
    let offset: f64 = model.lambdas().iter().map(|l| 1.0 / l).sum();
    let samples: Vec<(Vec<f64>, f64)> = par_samples(n_samples, seed, |rng, _| {
        let phi = sample_phi_on(&model.basis, rng);
        let n: f64 = phi.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() - offset;
        let w = (-model.interaction(&phi.coeffs)).exp();
        ((1..=max_m).map(|m| n.powi(m as i32) * w).collect(), w)
    });
    let den: Vec<Complex64> = samples.iter().map(|(_, w)| Complex64::new(*w, 0.0)).collect();
    (0..max_m)
        .map(|m| {
            let num: Vec<Complex64> = samples.iter().map(|(v, _)| Complex64::new(v[m], 0.0)).collect();
            crate::stats::ratio_estimate(&num, &den, seed)
        })
        .collect()
}

/// Moments of the Wick-ordered particle number, quantum (Fock, λ = ν²) against classical.
pub fn run_density_moments(config: &DensityMomentsConfig) -> Result<DensityMomentsReport> {
    if config.max_moment < 1 {
        return domain("max_moment must be >= 1");
    }
    let (_, basis, v) = single_mode(config)?;
    let classical = ClassicalModel::on_basis(basis.clone(), v.clone());
    let cm = classical_number_moments(&classical, config.max_moment, config.n_classical, config.seed)?;
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for (m, e) in cm.iter().enumerate() {
        table.push(ResultRow::from_estimate(None, None, format!("classical_moment_{}", m + 1), e));
    }
    for &nu in &config.nus {
        let ft = FockTruncation::with_dimension_cap(basis.clone(), config.n_max, 100_000)?;
        let fock = FockSystem::build(ft, &v, FockOptions::mean_field(nu))?;
        for (m, (q, tail)) in fock.number_moments(config.max_moment).into_iter().enumerate() {
            let c = cm[m];
            let gap = (q - c.value.re).abs();
            table.push(ResultRow::exact(Some(nu), None, format!("quantum_moment_{}", m + 1), q, tail));
            table.push(gap_row_plain(nu, format!("moment_gap_{}", m + 1), gap, c.std_error, tail));
            rows.push(MomentRow { nu, m: m + 1, quantum: q, tail_bound: tail, classical: c, gap });
        }
    }
    Ok(DensityMomentsReport { rows, table })
}

fn gap_row_plain(nu: f64, quantity: String, gap: f64, sigma: f64, tail: f64) -> ResultRow {
    ResultRow {
        nu: Some(nu),
        eta: None,
        quantity,
        value_re: gap,
        value_im: 0.0,
        std_error: sigma,
        tail_bound: tail,
        n_samples: 0,
        seed: 0,
    }
}

/// ‖ν/(e^{νh} − 1) − h^{-1}‖ as a grid-L¹ norm of the translation-invariant
/// kernel on the basis: L^d/N^d Σ_{grid y} |Σ_k |u_k|² e^{2πik·y/L} g(λ_k)|.
pub fn free_kernel_gap(basis: &SpectralBasis, nu: f64, grid: usize) -> f64 {
    let spec = basis.spec;
    let d = spec.d;
    let count = grid.pow(d as u32);
    let h = spec.l / grid as f64;
    let mut total = 0.0;
    for idx in 0..count {
        let mut r = idx;
        let y: Vec<f64> = (0..d)
            .map(|_| {
                let j = r % grid;
                r /= grid;
                j as f64 * h
            })
            .collect();
        let origin = vec![0.0; d];
        total += basis.diagonal_kernel(|l| nu / (nu * l).exp_m1() - 1.0 / l, &y, &origin).norm();
    }
    total * h.powi(d as i32)
}

/// Observed order of a gap sequence, fitted on log-log axes.
pub fn observed_order(nus: &[f64], gaps: &[f64]) -> f64 {
    log_log_slope(nus, gaps)
}

/// Integrand families for the Riemann-sum diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum RiemannCase {
    /// g ≡ 1.
    Constant,
    /// Heat trace Σ_k e^{−r·2π²|k|²/L²} over the K + 1 lowest modes of the unit-κ torus.
    HeatTrace { d: usize, l: f64, k: usize },
    /// r ψ^r(0) = r (2πr)^{−d/2}, with an integrable singularity at r = 0.
    SingularKernel { d: usize },
}

impl RiemannCase {
    pub fn name(&self) -> String {
        match self {
            RiemannCase::Constant => "constant".into(),
            RiemannCase::HeatTrace { d, .. } => format!("heat_trace_d{d}"),
            RiemannCase::SingularKernel { d } => format!("singular_kernel_d{d}"),
        }
    }

    /// (ν Σ_{r ∈ νN*} e^{−κr} g(r), ∫_0^∞ e^{−κr} g(r) dr).
    pub fn sum_and_integral(&self, kappa: f64, nu: f64) -> Result<(f64, f64)> {
        match self {
            RiemannCase::Constant => Ok((nu / (kappa * nu).exp_m1(), 1.0 / kappa)),
            RiemannCase::HeatTrace { d, l, k } => {
                let spec = TorusSpec::new(*d, *l, kappa, 64)?;
                let basis = SpectralBasis::lowest(spec, k + 1)?;
                let lambdas = basis.lambdas();
                let sum = lambdas.iter().map(|lam| nu / (nu * lam).exp_m1()).sum();
                let integral = lambdas.iter().map(|lam| 1.0 / lam).sum();
                Ok((sum, integral))
            }
            RiemannCase::SingularKernel { d } => {
                let a = 1.0 - *d as f64 / 2.0;
                let pref = (2.0 * std::f64::consts::PI).powf(-(*d as f64) / 2.0);
                let integral = pref * gamma(a + 1.0) * kappa.powf(-(a + 1.0));
                let mut sum = 0.0;
                let mut n = 1u64;
                loop {
                    let r = nu * n as f64;
                    let term = nu * pref * (-kappa * r).exp() * r.powf(a);
                    sum += term;
                    if kappa * r > 60.0 {
                        break;
                    }
                    n += 1;
                }
                Ok((sum, integral))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiemannConfig {
    pub kappa: f64,
    pub nus: Vec<f64>,
    pub cases: Vec<RiemannCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiemannCaseReport {
    pub case: RiemannCase,
    pub gaps: Vec<f64>,
    pub observed_order: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiemannReport {
    pub cases: Vec<RiemannCaseReport>,
    pub table: Vec<ResultRow>,
}

/// Riemann sums against integrals for each case, with the observed order in ν.
pub fn run_riemann_diagnostics(config: &RiemannConfig) -> Result<RiemannReport> {
    if config.nus.len() < 2 || config.nus.iter().any(|n| !(*n > 0.0)) {
        return domain("need at least two positive nu values");
    }
    let mut cases = Vec::new();
    let mut table = Vec::new();
    for case in &config.cases {
        let mut gaps = Vec::new();
        for &nu in &config.nus {
            let (s, i) = case.sum_and_integral(config.kappa, nu)?;
            let gap = (s - i).abs();
            table.push(ResultRow::exact(Some(nu), None, format!("{}_sum", case.name()), s, 0.0));
            table.push(ResultRow::exact(Some(nu), None, format!("{}_integral", case.name()), i, 0.0));
            table.push(ResultRow::exact(Some(nu), None, format!("{}_gap", case.name()), gap, 0.0));
            gaps.push(gap);
        }
        let order = observed_order(&config.nus, &gaps);
        cases.push(RiemannCaseReport { case: case.clone(), gaps, observed_order: order });
    }
    Ok(RiemannReport { cases, table })
}
