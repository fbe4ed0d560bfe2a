//! Classical Gibbs measure: Wick-ordered interaction, partition function ζ and
//! correlation functions, by direct φ-sampling and by the dual ξ-field route.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gaussian_fields::{
    basis_support, permanent, regularized_potential, sample_phi_on, sample_xi_unregularized, AuxFieldXi,
    ClassicalField, InteractionPotential, RegularizationSpec,
};
use crate::stats::{par_samples, ratio_estimate, MCEstimate};
use crate::torus_spectral::{SpectralBasis, TorusSpec};

/// A correlation-kernel argument (x_1…x_p; x̃_1…x̃_p).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPoint {
    pub x: Vec<Vec<f64>>,
    pub xt: Vec<Vec<f64>>,
}

impl KernelPoint {
    pub fn new(x: Vec<Vec<f64>>, xt: Vec<Vec<f64>>) -> Self {
        KernelPoint { x, xt }
    }

    /// Single-particle argument (x; x̃).
    pub fn pair(x: &[f64], xt: &[f64]) -> Self {
        KernelPoint { x: vec![x.to_vec()], xt: vec![xt.to_vec()] }
    }

    pub fn order(&self) -> usize {
        self.x.len()
    }

    pub fn swapped(&self) -> Self {
        KernelPoint { x: self.xt.clone(), xt: self.x.clone() }
    }

    fn sub(&self, i_set: &[usize], it_set: &[usize]) -> KernelPoint {
        KernelPoint {
            x: i_set.iter().map(|&i| self.x[i].clone()).collect(),
            xt: it_set.iter().map(|&i| self.xt[i].clone()).collect(),
        }
    }
}

/// Correlation kernel values at evaluation points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationKernel {
    pub p: usize,
    pub points: Vec<KernelPoint>,
    pub values: Vec<MCEstimate>,
    pub wick_ordered: bool,
}

impl CorrelationKernel {
    pub fn value_at(&self, point: &KernelPoint) -> Option<MCEstimate> {
        self.points.iter().position(|q| q == point).map(|i| self.values[i])
    }

    /// Largest |K(x̃,x) − conj K(x,x̃)| over stored pairs of swapped points.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, pt) in self.points.iter().enumerate() {
            if let Some(j) = self.points.iter().position(|q| *q == pt.swapped()) {
                worst = worst.max((self.values[j].value - self.values[i].value.conj()).norm());
            }
        }
        worst
    }
}

/// Subsets of {0..p} as sorted index vectors, ordered by bitmask.
pub(crate) fn subsets(p: usize) -> Vec<Vec<usize>> {
    (0..(1usize << p)).map(|mask| (0..p).filter(|i| mask & (1 << i) != 0).collect()).collect()
}

fn complement(p: usize, s: &[usize]) -> Vec<usize> {
    (0..p).filter(|i| !s.contains(i)).collect()
}

/// Σ_{I,Ĩ} (−1)^{|I^c|} γ_{x_I, x̃_Ĩ} γ⁰_{x_{I^c}, x̃_{Ĩ^c}}. The closures receive
/// index subsets of the x and x̃ tuples of equal size.
pub fn hat_from_plain_kernel(
    p: usize,
    plain: impl Fn(&[usize], &[usize]) -> Complex64,
    free: impl Fn(&[usize], &[usize]) -> Complex64,
) -> Complex64 {
    wick_kernel_sum(p, true, plain, free)
}

/// Σ_{I,Ĩ} γ̂_{x_I, x̃_Ĩ} γ⁰_{x_{I^c}, x̃_{Ĩ^c}}, the inverse of [`hat_from_plain_kernel`].
pub fn plain_from_hat_kernel(
    p: usize,
    hat: impl Fn(&[usize], &[usize]) -> Complex64,
    free: impl Fn(&[usize], &[usize]) -> Complex64,
) -> Complex64 {
    wick_kernel_sum(p, false, hat, free)
}

fn wick_kernel_sum(
    p: usize,
    alternate: bool,
    inner: impl Fn(&[usize], &[usize]) -> Complex64,
    free: impl Fn(&[usize], &[usize]) -> Complex64,
) -> Complex64 {
    let subs = subsets(p);
    let mut total = Complex64::new(0.0, 0.0);
    for i_set in &subs {
        for it_set in subs.iter().filter(|s| s.len() == i_set.len()) {
            let ic = complement(p, i_set);
            let itc = complement(p, it_set);
            let sign = if alternate && ic.len() % 2 == 1 { -1.0 } else { 1.0 };
            let g = if i_set.is_empty() { Complex64::new(1.0, 0.0) } else { inner(i_set, it_set) };
            let f = if ic.is_empty() { Complex64::new(1.0, 0.0) } else { free(&ic, &itc) };
            total += g * f * sign;
        }
    }
    total
}

/// Converts plain kernels of orders 1..=p (order 0 is the constant 1) into the
/// Wick-ordered kernel of order p at the points of `gammas[p-1]`. Errors are
/// propagated as if the inputs were independent.
pub fn hat_from_plain(gammas: &[CorrelationKernel], free: &[CorrelationKernel]) -> Result<CorrelationKernel> {
    convert_kernels(gammas, free, true)
}

/// Inverse of [`hat_from_plain`].
pub fn plain_from_hat(hats: &[CorrelationKernel], free: &[CorrelationKernel]) -> Result<CorrelationKernel> {
    convert_kernels(hats, free, false)
}

fn convert_kernels(inner: &[CorrelationKernel], free: &[CorrelationKernel], alternate: bool) -> Result<CorrelationKernel> {
    let p = inner.len();
    if p == 0 || free.len() < p {
        return Err(Error::Domain("kernels of every order 1..=p are required".into()));
    }
    for (k, (g, f)) in inner.iter().zip(free).enumerate() {
        if g.p != k + 1 || f.p != k + 1 {
            return Err(Error::Domain(format!("missing order {} in kernel list", k + 1)));
        }
    }
    let lookup = |list: &[CorrelationKernel], pt: &KernelPoint| -> Result<MCEstimate> {
        let k = pt.order();
        list[k - 1]
            .value_at(pt)
            .ok_or_else(|| Error::Domain(format!("order-{k} kernel lacks a required sub-tuple")))
    };
    let top = &inner[p - 1];
    let mut values = Vec::with_capacity(top.points.len());
    for pt in &top.points {
        let subs = subsets(p);
        let mut total = Complex64::new(0.0, 0.0);
        let mut var = 0.0;
        for i_set in &subs {
            for it_set in subs.iter().filter(|s| s.len() == i_set.len()) {
                let ic = complement(p, i_set);
                let itc = complement(p, it_set);
                let sign = if alternate && ic.len() % 2 == 1 { -1.0 } else { 1.0 };
                let g = if i_set.is_empty() { MCEstimate::exact(1.0.into(), 0) } else { lookup(inner, &pt.sub(i_set, it_set))? };
                let f = if ic.is_empty() { MCEstimate::exact(1.0.into(), 0) } else { lookup(free, &pt.sub(&ic, &itc))? };
                total += g.value * f.value * sign;
                var += (g.std_error * f.value.norm()).powi(2) + (f.std_error * g.value.norm()).powi(2);
            }
        }
        values.push(MCEstimate { value: total, std_error: var.sqrt(), n_samples: top.values[0].n_samples, seed: top.values[0].seed });
    }
    Ok(CorrelationKernel { p, points: top.points.clone(), values, wick_ordered: alternate })
}

/// Σ over bijections δ: from → to without fixed points of Π g(i, δ(i)).
pub fn fixed_point_free_sum(from: &[usize], to: &[usize], g: &dyn Fn(usize, usize) -> Complex64) -> Complex64 {
    if from.len() != to.len() {
        return Complex64::new(0.0, 0.0);
    }
    fn rec(
        from: &[usize],
        to: &[usize],
        used: &mut Vec<bool>,
        acc: Complex64,
        g: &dyn Fn(usize, usize) -> Complex64,
    ) -> Complex64 {
        match from.split_first() {
            None => acc,
            Some((&i, rest)) => {
                let mut s = Complex64::new(0.0, 0.0);
                for (j, &t) in to.iter().enumerate() {
                    if used[j] || t == i {
                        continue;
                    }
                    used[j] = true;
                    s += rec(rest, to, used, acc * g(i, t), g);
                    used[j] = false;
                }
                s
            }
        }
    }
    rec(from, to, &mut vec![false; to.len()], Complex64::new(1.0, 0.0), g)
}

/// Σ_{J,J̃} K̂_{x_J, x_J̃} Σ_{δ ∈ B*(J^c, J̃^c)} Π_{i∈J^c} g(i, δ(i)) for coincident
/// point sets x = x̃.
pub fn density_expansion(p: usize, hat: &dyn Fn(&[usize], &[usize]) -> Complex64, g: &dyn Fn(usize, usize) -> Complex64) -> Complex64 {
    let subs = subsets(p);
    let mut total = Complex64::new(0.0, 0.0);
    for j in &subs {
        for jt in subs.iter().filter(|s| s.len() == j.len()) {
            let jc = complement(p, j);
            let jtc = complement(p, jt);
            let b = fixed_point_free_sum(&jc, &jtc, g);
            if b == Complex64::new(0.0, 0.0) {
                continue;
            }
            let h = if j.is_empty() { Complex64::new(1.0, 0.0) } else { hat(j, jt) };
            total += h * b;
        }
    }
    total
}

/// Classical model on a finite spectral basis with a positive-type potential.
#[derive(Debug, Clone)]
pub struct ClassicalModel {
    pub basis: SpectralBasis,
    pub v: InteractionPotential,
    lambdas: Vec<f64>,
    /// For each frequency p: v̂(p) and the index pairs (a, b) with k_b − k_a = p.
    channels: Vec<([i64; 3], f64, Vec<(usize, usize)>)>,
    /// ϱ_K L^d = Σ_k λ_k^{-1}.
    mass_offset: f64,
}

impl ClassicalModel {
    /// Model truncated to the K+1 lowest modes.
    pub fn new(spec: &TorusSpec, v: &InteractionPotential, k: usize) -> Result<Self> {
        Ok(Self::on_basis(SpectralBasis::lowest(*spec, k + 1)?, v.clone()))
    }

    pub fn on_basis(basis: SpectralBasis, v: InteractionPotential) -> Self {
        let lambdas = basis.lambdas();
        let ds = basis.difference_set();
        let mut channels: Vec<([i64; 3], f64, Vec<(usize, usize)>)> =
            ds.ps.iter().map(|p| (*p, v.fourier(p), Vec::new())).collect();
        for (a, ma) in basis.modes.iter().enumerate() {
            for (b, mb) in basis.modes.iter().enumerate() {
                let p = [mb.k[0] - ma.k[0], mb.k[1] - ma.k[1], mb.k[2] - ma.k[2]];
                let j = ds.position(&p).expect("difference set is closed under negation");
                channels[j].2.push((a, b));
            }
        }
        channels.retain(|(_, vh, _)| *vh != 0.0);
        let mass_offset = lambdas.iter().map(|l| 1.0 / l).sum();
        ClassicalModel { basis, v, lambdas, channels, mass_offset }
    }

    /// ϱ_K.
    pub fn density(&self) -> f64 {
        self.mass_offset / self.basis.spec.volume()
    }

    /// W_K(φ) = (1/2L^d) Σ_p v̂(p) |n̂(p) − δ_{p0} ϱ_K L^d|² from mode coefficients.
    pub fn interaction(&self, c: &[Complex64]) -> f64 {
        let mut w = 0.0;
        for (p, vh, pairs) in &self.channels {
            let mut n: Complex64 = pairs.iter().map(|&(a, b)| c[a].conj() * c[b]).sum();
            if *p == [0, 0, 0] {
                n -= self.mass_offset;
            }
            w += vh * n.norm_sqr();
        }
        0.5 * w / self.basis.spec.volume()
    }

    /// Truncated free kernel (P_K h^{-1})(x, x̃).
    pub fn free_kernel(&self, x: &[f64], xt: &[f64]) -> Complex64 {
        self.basis.diagonal_kernel(|l| 1.0 / l, x, xt)
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }
}

/// ϱ_K = Σ_{k≤K} |u_k|²/λ_k.
#[allow(non_snake_case)]
pub fn classical_density_K(spec: &TorusSpec, k: usize) -> Result<f64> {
    Ok(SpectralBasis::lowest(*spec, k + 1)?.classical_density())
}

/// Wick-ordered truncated interaction W_K(φ) of a sampled field.
pub fn wick_interaction(phi: &ClassicalField, v: &InteractionPotential, k: usize) -> Result<f64> {
    if k + 1 > phi.coeffs.len() {
        return domain(format!("field holds {} modes, K = {k} requested", phi.coeffs.len()));
    }
    let basis = SpectralBasis { spec: phi.spec, modes: phi.modes[..=k].to_vec() };
    let w = ClassicalModel::on_basis(basis, v.clone()).interaction(&phi.coeffs[..=k]);
    if w < -1e-10 {
        return Err(Error::Numerical(format!("Wick-ordered interaction is negative: {w:e}")));
    }
    Ok(w)
}

/// ζ = E e^{−W_K(φ)} by direct sampling on a model.
pub fn estimate_zeta_model(model: &ClassicalModel, n_samples: usize, seed: u64) -> MCEstimate {
    let xs: Vec<f64> = par_samples(n_samples, seed, |rng, _| {
        let phi = sample_phi_on(&model.basis, rng);
        (-model.interaction(&phi.coeffs)).exp()
    });
    MCEstimate::from_real_samples(&xs, seed)
}

/// ζ = E e^{−W_K(φ)} with φ truncated to K+1 modes.
pub fn estimate_zeta(spec: &TorusSpec, v: &InteractionPotential, k: usize, n_samples: usize, seed: u64) -> Result<MCEstimate> {
    Ok(estimate_zeta_model(&ClassicalModel::new(spec, v, k)?, n_samples, seed))
}

/// Ratio estimate of E[e^{−W} Π φ̄(x̃_j) Π φ(x_i)] / E[e^{−W}]; the tuples may differ in length.
pub fn estimate_field_moment(
    model: &ClassicalModel,
    x: &[Vec<f64>],
    xt: &[Vec<f64>],
    n_samples: usize,
    seed: u64,
) -> Result<MCEstimate> {
    let ux: Vec<Vec<Complex64>> = x.iter().map(|p| model.basis.plane_waves(p)).collect();
    let uxt: Vec<Vec<Complex64>> = xt.iter().map(|p| model.basis.plane_waves(p)).collect();
    let pairs: Vec<(Complex64, Complex64)> = par_samples(n_samples, seed, |rng, _| {
        let phi = sample_phi_on(&model.basis, rng);
        let w = (-model.interaction(&phi.coeffs)).exp();
        let eval = |u: &[Complex64]| -> Complex64 { u.iter().zip(&phi.coeffs).map(|(a, b)| a * b).sum() };
        let mut prod = Complex64::new(w, 0.0);
        for u in &ux {
            prod *= eval(u);
        }
        for u in &uxt {
            prod *= eval(u).conj();
        }
        (prod, Complex64::new(w, 0.0))
    });
    let (num, den): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    ratio_estimate(&num, &den, seed)
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

/// Plain correlation function γ_p on the K-truncated model, by φ-sampling.
pub fn estimate_gamma_p_model(
    model: &ClassicalModel,
    p: usize,
    points: &[KernelPoint],
    n_samples: usize,
    seed: u64,
) -> Result<CorrelationKernel> {
    check_points(p, points)?;
    estimate_kernels_phi(model, p, points, n_samples, seed, false)
}

/// γ_p at the given points; the model is truncated to K+1 modes.
#[allow(clippy::too_many_arguments)]
pub fn estimate_gamma_p(
    spec: &TorusSpec,
    v: &InteractionPotential,
    k: usize,
    p: usize,
    points: &[KernelPoint],
    n_samples: usize,
    seed: u64,
) -> Result<CorrelationKernel> {
    estimate_gamma_p_model(&ClassicalModel::new(spec, v, k)?, p, points, n_samples, seed)
}

/// Wick-ordered γ̂_p by φ-sampling: each sample contributes the Wick-ordered
/// monomial, expanded through the hat formula.
pub fn estimate_gamma_hat_phi(
    model: &ClassicalModel,
    p: usize,
    points: &[KernelPoint],
    n_samples: usize,
    seed: u64,
) -> Result<CorrelationKernel> {
    check_points(p, points)?;
    estimate_kernels_phi(model, p, points, n_samples, seed, true)
}

fn estimate_kernels_phi(
    model: &ClassicalModel,
    p: usize,
    points: &[KernelPoint],
    n_samples: usize,
    seed: u64,
    wick: bool,
) -> Result<CorrelationKernel> {
    let waves: Vec<(Vec<Vec<Complex64>>, Vec<Vec<Complex64>>)> = points
        .iter()
        .map(|pt| {
            (
                pt.x.iter().map(|q| model.basis.plane_waves(q)).collect(),
                pt.xt.iter().map(|q| model.basis.plane_waves(q)).collect(),
            )
        })
        .collect();
    let free: Vec<DMatrix<Complex64>> = points
        .iter()
        .map(|pt| DMatrix::from_fn(p, p, |i, j| model.free_kernel(&pt.x[i], &pt.xt[j])))
        .collect();
    let samples: Vec<(Vec<Complex64>, Complex64)> = par_samples(n_samples, seed, |rng, _| {
        let phi = sample_phi_on(&model.basis, rng);
        let w = (-model.interaction(&phi.coeffs)).exp();
        let eval = |u: &[Complex64]| -> Complex64 { u.iter().zip(&phi.coeffs).map(|(a, b)| a * b).sum() };
        let nums = waves
            .iter()
            .zip(&free)
            .map(|((wx, wxt), g0)| {
                let fx: Vec<Complex64> = wx.iter().map(|u| eval(u)).collect();
                let fxt: Vec<Complex64> = wxt.iter().map(|u| eval(u).conj()).collect();
                let mono = |i_set: &[usize], it_set: &[usize]| -> Complex64 {
                    i_set.iter().map(|&i| fx[i]).product::<Complex64>() * it_set.iter().map(|&i| fxt[i]).product::<Complex64>()
                };
                let value = if wick {
                    hat_from_plain_kernel(p, mono, |ic, itc| sub_permanent(g0, ic, itc))
                } else {
                    mono(&(0..p).collect::<Vec<_>>(), &(0..p).collect::<Vec<_>>())
                };
                value * w
            })
            .collect();
        (nums, Complex64::new(w, 0.0))
    });
    kernel_from_samples(p, points, samples, seed, wick)
}

pub(crate) fn sub_permanent(m: &DMatrix<Complex64>, rows: &[usize], cols: &[usize]) -> Complex64 {
    let sub = DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])]);
    permanent(&sub)
}

pub(crate) fn kernel_from_samples(
    p: usize,
    points: &[KernelPoint],
    samples: Vec<(Vec<Complex64>, Complex64)>,
    seed: u64,
    wick: bool,
) -> Result<CorrelationKernel> {
    let den: Vec<Complex64> = samples.iter().map(|(_, d)| *d).collect();
    let mut values = Vec::with_capacity(points.len());
    for j in 0..points.len() {
        let num: Vec<Complex64> = samples.iter().map(|(n, _)| n[j]).collect();
        values.push(ratio_estimate(&num, &den, seed)?);
    }
    Ok(CorrelationKernel { p, points: points.to_vec(), values, wick_ordered: wick })
}

/// Free truncated correlation function γ⁰_p: the permanent of h^{-1} kernels.
pub fn free_gamma_p(model: &ClassicalModel, p: usize, points: &[KernelPoint]) -> Result<CorrelationKernel> {
    check_points(p, points)?;
    let values = points
        .iter()
        .map(|pt| {
            let g = DMatrix::from_fn(p, p, |i, j| model.free_kernel(&pt.x[i], &pt.xt[j]));
            MCEstimate::exact(permanent(&g), 0)
        })
        .collect();
    Ok(CorrelationKernel { p, points: points.to_vec(), values, wick_ordered: false })
}

/// Dual ξ-field model: ξ ~ μ_{v_η} projected on a spectral basis.
#[derive(Debug, Clone)]
pub struct XiModel {
    pub basis: SpectralBasis,
    pub v_eta: InteractionPotential,
    ps: Vec<[i64; 3]>,
    inv_sqrt: Vec<f64>,
}

impl XiModel {
    pub fn new(spec: &TorusSpec, reg: &RegularizationSpec, v: &InteractionPotential, k: usize) -> Result<Self> {
        let basis = SpectralBasis::lowest(*spec, k + 1)?;
        Ok(Self::on_basis(basis, regularized_potential(v, reg)?))
    }

    /// Model with covariance exactly `v_eta` on `basis`.
    pub fn on_basis(basis: SpectralBasis, v_eta: InteractionPotential) -> Self {
        let ps = basis_support(&basis);
        let inv_sqrt = basis.lambdas().iter().map(|l| l.sqrt().recip()).collect();
        XiModel { basis, v_eta, ps, inv_sqrt }
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> AuxFieldXi {
        sample_xi_unregularized(&self.basis.spec, &self.v_eta, &self.ps, rng).expect("support is symmetric")
    }

    /// Eigen-decomposition of h^{-1/2} ξ_P h^{-1/2}.
    fn similarity_eigen(&self, xi: &AuxFieldXi) -> SymmetricEigen<Complex64, nalgebra::Dyn> {
        let s = xi.projected_matrix(&self.basis);
        let n = self.basis.len();
        let b = DMatrix::from_fn(n, n, |a, c| s[(a, c)] * self.inv_sqrt[a] * self.inv_sqrt[c]);
        SymmetricEigen::new(b)
    }

    /// f₂(ξ) = Σ_j [−log(1 − iμ_j) − iμ_j] with μ_j the eigenvalues of h^{-1/2} ξ h^{-1/2}.
    pub fn f2(&self, xi: &AuxFieldXi) -> Result<Complex64> {
        let eig = self.similarity_eigen(xi);
        let f = f2_from_eigenvalues(eig.eigenvalues.as_slice());
        if f.re > 1e-8 {
            return Err(Error::Numerical(format!("Re f2 = {:e} is positive", f.re)));
        }
        Ok(f)
    }

    /// (h − iξ)^{-1} − h^{-1} on the basis, together with f₂(ξ).
    pub fn resolvent_difference(&self, xi: &AuxFieldXi) -> Result<(DMatrix<Complex64>, Complex64)> {
        let eig = self.similarity_eigen(xi);
        let mu = eig.eigenvalues.as_slice();
        let f = f2_from_eigenvalues(mu);
        if f.re > 1e-8 {
            return Err(Error::Numerical(format!("Re f2 = {:e} is positive", f.re)));
        }
        let i = Complex64::new(0.0, 1.0);
        let n = self.basis.len();
        let v = &eig.eigenvectors;
        let weights: Vec<Complex64> = mu.iter().map(|&m| i * m / (Complex64::new(1.0, 0.0) - i * m)).collect();
        let mut d = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for a in 0..n {
            for c in 0..n {
                let mut s = Complex64::new(0.0, 0.0);
                for (j, wj) in weights.iter().enumerate() {
                    s += v[(a, j)] * wj * v[(c, j)].conj();
                }
                d[(a, c)] = s * self.inv_sqrt[a] * self.inv_sqrt[c];
            }
        }
        Ok((d, f))
    }
}

fn f2_from_eigenvalues(mu: &[f64]) -> Complex64 {
    mu.iter().map(|&m| Complex64::new(-0.5 * (m * m).ln_1p(), m.atan() - m)).sum()
}

/// f₂(ξ) on the K-truncated basis.
pub fn f2_xi(spec: &TorusSpec, k: usize, xi: &AuxFieldXi) -> Result<Complex64> {
    let basis = SpectralBasis::lowest(*spec, k + 1)?;
    XiModel::on_basis(basis, InteractionPotential::zero(spec)).f2(xi)
}

/// ζ_η = E e^{f₂(ξ)} on a model.
pub fn estimate_zeta_xi_model(model: &XiModel, n_samples: usize, seed: u64) -> Result<MCEstimate> {
    let xs: Vec<Result<Complex64>> = par_samples(n_samples, seed, |rng, _| {
        let xi = model.sample(rng);
        Ok(model.f2(&xi)?.exp())
    });
    let xs = xs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MCEstimate::from_samples(&xs, seed))
}

/// ζ_η = E e^{f₂(ξ)} with ξ ~ μ_{v_η}, on K+1 modes.
pub fn estimate_zeta_xi(
    spec: &TorusSpec,
    reg: &RegularizationSpec,
    v: &InteractionPotential,
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Result<MCEstimate> {
    estimate_zeta_xi_model(&XiModel::new(spec, reg, v, k)?, n_samples, seed)
}

/// γ̂_p via the ξ route: ratio of E[e^{f₂} perm((R − h^{-1})(x_i, x̃_j))] and E e^{f₂}.
pub fn estimate_gamma_hat_xi_model(
    model: &XiModel,
    p: usize,
    points: &[KernelPoint],
    n_samples: usize,
    seed: u64,
) -> Result<CorrelationKernel> {
    check_points(p, points)?;
    let waves: Vec<(Vec<Vec<Complex64>>, Vec<Vec<Complex64>>)> = points
        .iter()
        .map(|pt| {
            (
                pt.x.iter().map(|q| model.basis.plane_waves(q)).collect(),
                pt.xt.iter().map(|q| model.basis.plane_waves(q).iter().map(|c| c.conj()).collect()).collect(),
            )
        })
        .collect();
    let samples: Vec<Result<(Vec<Complex64>, Complex64)>> = par_samples(n_samples, seed, |rng, _| {
        let xi = model.sample(rng);
        let (d, f) = model.resolvent_difference(&xi)?;
        let ef = f.exp();
        let nums = waves
            .iter()
            .map(|(wx, wxt)| {
                let m = DMatrix::from_fn(p, p, |i, j| bilinear(&d, &wx[i], &wxt[j]));
                permanent(&m) * ef
            })
            .collect();
        Ok((nums, ef))
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    kernel_from_samples(p, points, samples, seed, true)
}

/// γ̂_p via the ξ route on K+1 modes.
#[allow(clippy::too_many_arguments)]
pub fn estimate_gamma_hat_xi(
    spec: &TorusSpec,
    reg: &RegularizationSpec,
    v: &InteractionPotential,
    k: usize,
    p: usize,
    points: &[KernelPoint],
    n_samples: usize,
    seed: u64,
) -> Result<CorrelationKernel> {
    estimate_gamma_hat_xi_model(&XiModel::new(spec, reg, v, k)?, p, points, n_samples, seed)
}

/// Σ_{a,b} u_a M_{ab} w_b.
pub(crate) fn bilinear(m: &DMatrix<Complex64>, u: &[Complex64], w: &[Complex64]) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for (a, ua) in u.iter().enumerate() {
        let mut row = Complex64::new(0.0, 0.0);
        for (b, wb) in w.iter().enumerate() {
            row += m[(a, b)] * wb;
        }
        s += ua * row;
    }
    s
}

/// Both routes to the Wick-ordered density correlation E[e^{−W} Π :n(x_i):]/ζ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityCorrelation {
    pub direct: MCEstimate,
    pub combinatorial: MCEstimate,
}

/// Direct φ-sampling of the Wick-ordered density correlation, and the
/// expansion in ξ-route γ̂ kernels weighted by off-diagonal free kernels.
/// The φ model uses `phi_model.v`; the ξ model must describe the same potential.
pub fn density_correlation_classical(
    phi_model: &ClassicalModel,
    xi_model: &XiModel,
    points: &[Vec<f64>],
    n_samples: usize,
    seed: u64,
) -> Result<DensityCorrelation> {
    let p = points.len();
    if p < 1 {
        return domain("need at least one point");
    }
    let rho = phi_model.density();
    let waves: Vec<Vec<Complex64>> = points.iter().map(|q| phi_model.basis.plane_waves(q)).collect();
    let direct_samples: Vec<(Complex64, Complex64)> = par_samples(n_samples, seed, |rng, _| {
        let phi = sample_phi_on(&phi_model.basis, rng);
        let w = (-phi_model.interaction(&phi.coeffs)).exp();
        let mut prod = w;
        for u in &waves {
            let f: Complex64 = u.iter().zip(&phi.coeffs).map(|(a, b)| a * b).sum();
            prod *= f.norm_sqr() - rho;
        }
        (Complex64::new(prod, 0.0), Complex64::new(w, 0.0))
    });
    let (num, den): (Vec<_>, Vec<_>) = direct_samples.into_iter().unzip();
    let direct = ratio_estimate(&num, &den, seed)?;

    let g0 = DMatrix::from_fn(p, p, |i, j| xi_model.basis.diagonal_kernel(|l| 1.0 / l, &points[i], &points[j]));
    let xw: Vec<Vec<Complex64>> = points.iter().map(|q| xi_model.basis.plane_waves(q)).collect();
    let xwc: Vec<Vec<Complex64>> = xw.iter().map(|u| u.iter().map(|c| c.conj()).collect()).collect();
    let xi_seed = seed ^ 0x5eed_0f_c0ffee;
    let comb: Vec<Result<(Complex64, Complex64)>> = par_samples(n_samples, xi_seed, |rng, _| {
        let xi = xi_model.sample(rng);
        let (d, f) = xi_model.resolvent_difference(&xi)?;
        let ef = f.exp();
        let dpos = DMatrix::from_fn(p, p, |i, j| bilinear(&d, &xw[i], &xwc[j]));
        let value = density_expansion(p, &|j, jt| sub_permanent(&dpos, j, jt), &|i, j| g0[(i, j)]);
        Ok((value * ef, ef))
    });
    let comb = comb.into_iter().collect::<Result<Vec<_>>>()?;
    let (num, den): (Vec<_>, Vec<_>) = comb.into_iter().unzip();
    let combinatorial = ratio_estimate(&num, &den, xi_seed)?;
    Ok(DensityCorrelation { direct, combinatorial })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_free_counts_are_derangements() {
        let one = |_: usize, _: usize| Complex64::new(1.0, 0.0);
        let ids: Vec<usize> = (0..4).collect();
        assert_eq!(fixed_point_free_sum(&ids, &ids, &one).re, 9.0);
        assert_eq!(fixed_point_free_sum(&[0, 1, 2], &[0, 1, 2], &one).re, 2.0);
        assert_eq!(fixed_point_free_sum(&[], &[], &one).re, 1.0);
    }

    #[test]
    fn f2_vanishes_at_zero() {
        assert_eq!(f2_from_eigenvalues(&[0.0, 0.0]), Complex64::new(0.0, 0.0));
    }
}
