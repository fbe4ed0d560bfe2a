//! Brute-force references: truncated Fock-space diagonalization, the quasi-free
//! Wick theorem by two routes, the interacting loop-gas kernel and the
//! bijection identity behind the density-correlation expansion.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::brownian::{sample_bridge_with, BridgeMeasureSpec};
use crate::classical_theory::{fixed_point_free_sum, subsets, CorrelationKernel, KernelPoint};
use crate::error::{domain, Error, Result};
use crate::gaussian_fields::{complete_pairings, InteractionPotential};
use crate::stats::{par_samples, MCEstimate};
use crate::torus_spectral::{SpectralBasis, TorusSpec};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Occupation vectors over a few modes with bounded total particle number.
#[derive(Debug, Clone)]
pub struct FockTruncation {
    pub basis: SpectralBasis,
    pub n_max: usize,
    states: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

impl FockTruncation {
    pub const MAX_MODES: usize = 4;
    pub const MAX_PARTICLES: usize = 6;

    /// Truncation within the default caps of 4 modes and 6 particles.
    pub fn new(basis: SpectralBasis, n_max: usize) -> Result<Self> {
        if basis.len() > Self::MAX_MODES || n_max > Self::MAX_PARTICLES {
            return Err(Error::Refused(format!(
                "Fock truncation with {} modes and n_max = {n_max} exceeds the caps ({} modes, {} particles)",
                basis.len(),
                Self::MAX_MODES,
                Self::MAX_PARTICLES
            )));
        }
        Self::with_dimension_cap(basis, n_max, usize::MAX)
    }

    /// Truncation with explicitly raised caps; refuses when the Fock dimension exceeds `max_dim`.
    pub fn with_dimension_cap(basis: SpectralBasis, n_max: usize, max_dim: usize) -> Result<Self> {
        if basis.is_empty() {
            return domain("Fock truncation needs at least one mode");
        }
        let dim = binomial(basis.len() + n_max, n_max);
        if dim > max_dim as f64 {
            return Err(Error::Refused(format!("Fock dimension {dim} exceeds the cap {max_dim}")));
        }
        let states = occupation_vectors(basis.len(), n_max);
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(FockTruncation { basis, n_max, states, index })
    }

    pub fn dimension(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Vec<u32>] {
        &self.states
    }

    pub fn particle_number(&self, i: usize) -> usize {
        self.states[i].iter().map(|&n| n as usize).sum()
    }

    /// Matrix of a_k in the occupation basis.
    pub fn annihilator(&self, k: usize) -> DMatrix<f64> {
        let d = self.dimension();
        let mut a = DMatrix::zeros(d, d);
        for (j, s) in self.states.iter().enumerate() {
            if s[k] > 0 {
                let mut t = s.clone();
                t[k] -= 1;
                a[(self.index[&t], j)] = (s[k] as f64).sqrt();
            }
        }
        a
    }

    /// Matrix of a(x) = Σ_k u_k(x) a_k.
    pub fn field_annihilator(&self, x: &[f64]) -> DMatrix<Complex64> {
        let d = self.dimension();
        let mut a = DMatrix::from_element(d, d, ZERO);
        for (k, u) in self.basis.plane_waves(x).iter().enumerate() {
            a += self.annihilator(k).map(|v| u * v);
        }
        a
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All occupation vectors of `m` modes with total ≤ n_max, ordered by total then lexicographically.
fn occupation_vectors(m: usize, n_max: usize) -> Vec<Vec<u32>> {
    fn rec(m: usize, left: u32, acc: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if acc.len() == m {
            if left == 0 {
                out.push(acc.clone());
            }
            return;
        }
        for n in (0..=left).rev() {
            acc.push(n);
            rec(m, left - n, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    for total in 0..=n_max as u32 {
        rec(m, total, &mut Vec::new(), &mut out);
    }
    out
}

/// How the one-body part of Σ_{i,j} v(x_i − x_j) is represented in the mode space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelfInteraction {
    /// Σ_p v̂(p) ρ_p† ρ_p with ρ_p = Σ_k a*_k a_{k+p} restricted to the modes. This is
    /// what the Galerkin auxiliary-field representation reproduces.
    Galerkin,
    /// Normal-ordered projected two-body term plus the exact self-energy v(0) N, as in
    /// the continuum path integral.
    Continuum,
}

/// Physical parameters of a Fock-space Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FockOptions {
    pub nu: f64,
    pub lambda: f64,
    pub wick_ordered: bool,
    pub self_interaction: SelfInteraction,
    /// Density shift ρ of the chemical-potential adjustment.
    pub shift: Option<f64>,
}

impl FockOptions {
    /// Wick-ordered mean-field Hamiltonian λ = ν² in the Galerkin form.
    pub fn mean_field(nu: f64) -> Self {
        FockOptions { nu, lambda: nu * nu, wick_ordered: true, self_interaction: SelfInteraction::Galerkin, shift: None }
    }
}

/// e^{−H} on a truncated Fock space, with truncation bounds.
#[derive(Debug, Clone)]
pub struct FockSystem {
    pub ft: FockTruncation,
    pub options: FockOptions,
    pub hamiltonian: DMatrix<f64>,
    gibbs: DMatrix<f64>,
    z: f64,
    z0_truncated: f64,
    z0_full: f64,
    /// tr_n e^{−H⁰} for n = 0, 1, … until negligible.
    free_sector_traces: Vec<f64>,
}

/// Relative partition function from the Fock oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FockPartition {
    pub z: f64,
    pub z0: f64,
    pub ratio: f64,
    pub tail_bound: f64,
}

impl FockSystem {
    /// Builds H = ν Σ λ_k n_k + (λ/2) L^{-d} Σ_p v̂(p) (ρ_p − c δ_{p0})† (ρ_p − c δ_{p0}),
    /// with c = ϱL^d/ν under Wick ordering plus ρL^d for a density shift, and
    /// exponentiates it sector by sector.
    pub fn build(ft: FockTruncation, v: &InteractionPotential, options: FockOptions) -> Result<Self> {
        let FockOptions { nu, lambda, .. } = options;
        if !(nu > 0.0) || !(lambda >= 0.0) {
            return domain(format!("need nu > 0 and lambda >= 0, got {nu}, {lambda}"));
        }
        let basis = &ft.basis;
        let spec = basis.spec;
        let vol = spec.volume();
        let d = ft.dimension();
        let lambdas = basis.lambdas();
        let mut h = DMatrix::<f64>::zeros(d, d);
        for (i, s) in ft.states.iter().enumerate() {
            h[(i, i)] = nu * s.iter().zip(&lambdas).map(|(&n, l)| n as f64 * l).sum::<f64>();
        }
        let mut offset = 0.0;
        if options.wick_ordered {
            offset += basis.free_density(nu) * vol / nu;
        }
        if let Some(rho) = options.shift {
            offset += rho * vol;
        }
        if lambda > 0.0 && !v.is_zero() {
            let ann: Vec<DMatrix<f64>> = (0..basis.len()).map(|k| ft.annihilator(k)).collect();
            let position: HashMap<[i64; 3], usize> = basis.modes.iter().enumerate().map(|(i, m)| (m.k, i)).collect();
            for p in basis.difference_set().ps {
                let vh = v.fourier(&p);
                if vh == 0.0 {
                    continue;
                }
                let mut rho_p = DMatrix::<f64>::zeros(d, d);
                for (a, m) in basis.modes.iter().enumerate() {
                    let kp = [m.k[0] + p[0], m.k[1] + p[1], m.k[2] + p[2]];
                    if let Some(&b) = position.get(&kp) {
                        rho_p += ann[a].transpose() * &ann[b];
                    }
                }
                if p == [0, 0, 0] {
                    for i in 0..d {
                        rho_p[(i, i)] -= offset;
                    }
                }
                h += (rho_p.transpose() * &rho_p) * (0.5 * lambda * vh / vol);
            }
            if options.self_interaction == SelfInteraction::Continuum {
                let v0 = v.value(&vec![0.0; spec.d]);
                for (q, mq) in basis.modes.iter().enumerate() {
                    let galerkin: f64 = basis
                        .modes
                        .iter()
                        .map(|mk| {
                            let p = [mq.k[0] - mk.k[0], mq.k[1] - mk.k[1], mq.k[2] - mk.k[2]];
                            v.fourier(&p)
                        })
                        .sum::<f64>()
                        / vol;
                    let corr = 0.5 * lambda * (v0 - galerkin);
                    for (i, s) in ft.states.iter().enumerate() {
                        h[(i, i)] += corr * s[q] as f64;
                    }
                }
            }
        }
        let mut gibbs = DMatrix::<f64>::zeros(d, d);
        let mut start = 0;
        while start < d {
            let n = ft.particle_number(start);
            let end = (start..d).find(|&i| ft.particle_number(i) != n).unwrap_or(d);
            let block = h.view((start, start), (end - start, end - start)).clone_owned();
            let eig = block.symmetric_eigen();
            let e: Vec<f64> = eig.eigenvalues.iter().map(|x| (-x).exp()).collect();
            let v = &eig.eigenvectors;
            let mut ve = v.clone();
            for (j, ej) in e.iter().enumerate() {
                ve.column_mut(j).scale_mut(*ej);
            }
            gibbs.view_mut((start, start), (end - start, end - start)).copy_from(&(ve * v.transpose()));
            start = end;
        }
        let z = gibbs.trace();
        let qs: Vec<f64> = lambdas.iter().map(|l| (-nu * l).exp()).collect();
        let z0_full = qs.iter().map(|q| 1.0 / (1.0 - q)).product();
        let free_sector_traces = free_sector_traces(&qs, ft.n_max);
        let z0_truncated = free_sector_traces[..=ft.n_max].iter().sum();
        Ok(FockSystem { ft, options, hamiltonian: h, gibbs, z, z0_truncated, z0_full, free_sector_traces })
    }

    /// Largest |H_ij| between different particle-number sectors (zero when [H, N] = 0).
    pub fn sector_leakage(&self) -> f64 {
        let d = self.ft.dimension();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                if self.ft.particle_number(i) != self.ft.particle_number(j) {
                    worst = worst.max(self.hamiltonian[(i, j)].abs());
                }
            }
        }
        worst
    }

    /// Z, Z⁰ and Z/Z⁰ with a rigorous truncation bound. H ≥ H⁰ gives
    /// 0 ≤ Z_full − Z ≤ Z⁰_full − Z⁰.
    pub fn partition(&self) -> FockPartition {
        let t0 = (self.z0_full - self.z0_truncated).max(0.0);
        let ratio = self.z / self.z0_full;
        let hi = (self.z + t0) / self.z0_full;
        FockPartition { z: self.z, z0: self.z0_full, ratio, tail_bound: hi - ratio }
    }

    /// Tr[X e^{−H}]/Z on the truncated space.
    pub fn expectation(&self, op: &DMatrix<Complex64>) -> Complex64 {
        let mut acc = ZERO;
        let d = self.ft.dimension();
        for i in 0..d {
            for j in 0..d {
                acc += op[(i, j)] * self.gibbs[(j, i)];
            }
        }
        acc / self.z
    }

    /// Bound on the contribution of sectors above n_max to Tr[X e^{−H}]/Z for an
    /// operator of sector norm ≤ C n^{deg}.
    fn tail_for(&self, c: f64, deg: i32, value: f64) -> f64 {
        let upper: f64 = self
            .free_sector_traces
            .iter()
            .enumerate()
            .skip(self.ft.n_max + 1)
            .map(|(n, t)| c * (n as f64).powi(deg) * t)
            .sum();
        let t0 = (self.z0_full - self.z0_truncated).max(0.0);
        (upper + value.abs() * t0) / self.z
    }

    /// Γ_p kernel Tr[a*(x̃_1)⋯a*(x̃_p) a(x_1)⋯a(x_p) e^{−H}]/Z and truncation bounds.
    pub fn gamma_p(&self, p: usize, points: &[KernelPoint]) -> Result<(CorrelationKernel, Vec<f64>)> {
        if points.iter().any(|pt| pt.x.len() != p || pt.xt.len() != p) || p == 0 {
            return domain(format!("every evaluation point must carry {p} + {p} positions"));
        }
        let m = self.ft.basis.len() as f64 / self.ft.basis.spec.volume();
        let mut values = Vec::new();
        let mut tails = Vec::new();
        for pt in points {
            let d = self.ft.dimension();
            let mut op = DMatrix::<Complex64>::identity(d, d);
            for x in pt.x.iter().rev() {
                op = self.ft.field_annihilator(x) * op;
            }
            for xt in pt.xt.iter().rev() {
                op = self.ft.field_annihilator(xt).adjoint() * op;
            }
            let val = self.expectation(&op);
            tails.push(self.tail_for(m.powi(p as i32), p as i32, val.norm()));
            values.push(MCEstimate::exact(val, 0));
        }
        Ok((CorrelationKernel { p, points: points.to_vec(), values, wick_ordered: false }, tails))
    }

    /// Γ̂₁ = Γ₁ − Γ₁⁰ with the exact (untruncated in particle number) free kernel.
    pub fn gamma_hat_1(&self, points: &[KernelPoint]) -> Result<(CorrelationKernel, Vec<f64>)> {
        let (mut k, tails) = self.gamma_p(1, points)?;
        let nu = self.options.nu;
        for (pt, val) in k.points.iter().zip(k.values.iter_mut()) {
            let free = self.ft.basis.diagonal_kernel(|l| 1.0 / (nu * l).exp_m1(), &pt.x[0], &pt.xt[0]);
            val.value -= free;
        }
        k.wick_ordered = true;
        Ok((k, tails))
    }

    /// Tr[ν^p :N(x_1):⋯:N(x_p): e^{−H}]/Z with :N(x): = N(x) − ϱ/ν, and its truncation bound.
    pub fn density_correlation(&self, points: &[Vec<f64>]) -> (Complex64, f64) {
        let nu = self.options.nu;
        let d = self.ft.dimension();
        let shift = self.ft.basis.free_density(nu) / nu;
        let mut op = DMatrix::<Complex64>::identity(d, d);
        for x in points {
            let a = self.ft.field_annihilator(x);
            let mut n = a.adjoint() * a;
            for i in 0..d {
                n[(i, i)] -= shift;
            }
            op = op * n * Complex64::new(nu, 0.0);
        }
        let val = self.expectation(&op);
        let m = self.ft.basis.len() as f64 / self.ft.basis.spec.volume();
        let p = points.len() as i32;
        // ‖ν(N(x) − s)‖ ≤ ν(n m + s) ≤ ν(m + s) n for n ≥ 1.
        let c = (nu * (m + shift)).powi(p);
        (val, self.tail_for(c, p, val.norm()))
    }

    /// Moments Tr[(ν:N:)^m e^{−H}]/Z of the Wick-ordered particle number, m = 1..=max_m.
    pub fn number_moments(&self, max_m: usize) -> Vec<(f64, f64)> {
        let nu = self.options.nu;
        let mean0: f64 = self.ft.basis.lambdas().iter().map(|l| 1.0 / (nu * l).exp_m1()).sum();
        let d = self.ft.dimension();
        (1..=max_m)
            .map(|m| {
                let mut acc = 0.0;
                for i in 0..d {
                    let x = nu * (self.ft.particle_number(i) as f64 - mean0);
                    acc += x.powi(m as i32) * self.gibbs[(i, i)];
                }
                let val = acc / self.z;
                let c = (nu * (1.0 + mean0)).powi(m as i32);
                (val, self.tail_for(c, m as i32, val))
            })
            .collect()
    }

    /// ⟨0| a(x_1)⋯a(x_n) e^{−H} a*(x̃_n)⋯a*(x̃_1) |0⟩.
    pub fn vacuum_kernel(&self, x: &[Vec<f64>], xt: &[Vec<f64>]) -> Complex64 {
        let d = self.ft.dimension();
        let mut ket = nalgebra::DVector::<Complex64>::zeros(d);
        ket[0] = ONE;
        for y in xt {
            ket = self.ft.field_annihilator(y).adjoint() * ket;
        }
        let mut bra = nalgebra::DVector::<Complex64>::zeros(d);
        bra[0] = ONE;
        for y in x.iter().rev() {
            bra = self.ft.field_annihilator(y).adjoint() * bra;
        }
        let g = self.gibbs.map(|v| Complex64::new(v, 0.0));
        bra.dotc(&(g * ket))
    }
}

/// tr_n e^{−H⁰} from the product of geometric series, continued past n_max until
/// the terms are negligible.
fn free_sector_traces(qs: &[f64], n_max: usize) -> Vec<f64> {
    let qmax = qs.iter().cloned().fold(0.0, f64::max);
    let mut len = n_max + 64;
    // Grow until the last coefficient is negligible relative to the first sectors.
    loop {
        let mut coeffs = vec![0.0; len + 1];
        coeffs[0] = 1.0;
        for &q in qs {
            for n in 1..=len {
                coeffs[n] += q * coeffs[n - 1];
            }
        }
        let last = coeffs[len] * (len as f64).powi(8);
        if last < 1e-30 || len > 200_000 || qmax == 0.0 {
            return coeffs;
        }
        len *= 2;
    }
}

/// Truncated Z, Z⁰ and their ratio for a Hamiltonian on a Fock truncation.
pub fn fock_truncated_z(ft: &FockTruncation, v: &InteractionPotential, options: FockOptions) -> Result<FockPartition> {
    Ok(FockSystem::build(ft.clone(), v, options)?.partition())
}

/// One letter of an operator word: a*_k or a_k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ladder {
    pub creation: bool,
    pub mode: usize,
}

/// q_b(X₁⋯X_n) by both routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiFreeMoment {
    pub pairing: Complex64,
    pub direct: Complex64,
    pub truncation: usize,
}

/// q_b(X₁⋯X_n) = Tr[X₁⋯X_n Γ(b)]/Tr Γ(b), evaluated by pairing enumeration and
/// by an occupation-basis trace; errors if the two disagree beyond 1e-10.
pub fn quasi_free_moment(b: &DMatrix<Complex64>, word: &[Ladder]) -> Result<QuasiFreeMoment> {
    let m = b.nrows();
    if b.ncols() != m || m == 0 {
        return domain("b must be a nonempty square matrix");
    }
    if word.iter().any(|l| l.mode >= m) {
        return domain("word refers to a mode outside b");
    }
    let norm = b.clone().svd(false, false).singular_values.max();
    if norm >= 0.7 {
        return domain(format!("operator norm of b must be < 0.7 for the direct route, got {norm}"));
    }
    let pairing = quasi_free_pairing(b, word)?;
    let (direct, truncation) = quasi_free_direct(b, word, norm);
    let scale = 1.0 + pairing.norm();
    if (pairing - direct).norm() > 1e-10 * scale {
        return Err(Error::Numerical(format!("quasi-free routes disagree: {pairing} vs {direct}")));
    }
    Ok(QuasiFreeMoment { pairing, direct, truncation })
}

/// Pairing route: Σ over complete pairings of Π q(X_i X_j), i < j.
pub fn quasi_free_pairing(b: &DMatrix<Complex64>, word: &[Ladder]) -> Result<Complex64> {
    let m = b.nrows();
    let one_minus = DMatrix::<Complex64>::identity(m, m) - b;
    let inv = one_minus.try_inverse().ok_or_else(|| Error::Numerical("1 - b is singular".into()))?;
    let occ = b * &inv;
    let two_point = |x: Ladder, y: Ladder| -> Complex64 {
        match (x.creation, y.creation) {
            (true, false) => occ[(y.mode, x.mode)],
            (false, true) => inv[(x.mode, y.mode)],
            _ => ZERO,
        }
    };
    Ok(complete_pairings(word.len())
        .iter()
        .map(|pairs| pairs.iter().map(|&(i, j)| two_point(word[i], word[j])).product::<Complex64>())
        .sum())
}

type SparseState = HashMap<Vec<u32>, Complex64>;

fn apply_ladder(l: Ladder, state: &SparseState) -> SparseState {
    let mut out = SparseState::new();
    for (occ, c) in state {
        let mut t = occ.clone();
        let factor = if l.creation {
            t[l.mode] += 1;
            (t[l.mode] as f64).sqrt()
        } else {
            if t[l.mode] == 0 {
                continue;
            }
            let f = (t[l.mode] as f64).sqrt();
            t[l.mode] -= 1;
            f
        };
        *out.entry(t).or_insert(ZERO) += c * factor;
    }
    out
}

/// Direct route: Σ_n ⟨n| X₁⋯X_n Γ(b) |n⟩ over occupation vectors, using
/// Γ(b)|n⟩ = Π_k a*(b e_k)^{n_k}/√(n_k!) |0⟩.
fn quasi_free_direct(b: &DMatrix<Complex64>, word: &[Ladder], norm: f64) -> (Complex64, usize) {
    let m = b.nrows();
    // Each ladder letter has norm ≤ √(n + len) on sector n, so the word costs (n + len)^{len/2}.
    let half_len = word.len() as f64 / 2.0;
    let mut n_max = 1usize;
    while norm.powi(n_max as i32 + 1) * ((n_max + 1 + word.len()) as f64).powf(half_len) * binomial(n_max + m, m - 1) > 1e-15 {
        n_max += 1;
    }
    let mut numerator = ZERO;
    let mut denominator = ZERO;
    for occ in occupation_vectors(m, n_max) {
        let mut state: SparseState = HashMap::from([(vec![0u32; m], ONE)]);
        for (k, &nk) in occ.iter().enumerate() {
            for _ in 0..nk {
                let mut next = SparseState::new();
                for j in 0..m {
                    let bjk = b[(j, k)];
                    if bjk == ZERO {
                        continue;
                    }
                    for (o, c) in apply_ladder(Ladder { creation: true, mode: j }, &state) {
                        *next.entry(o).or_insert(ZERO) += c * bjk;
                    }
                }
                state = next;
            }
            let fact: f64 = (1..=nk).map(|i| i as f64).product();
            for c in state.values_mut() {
                *c /= fact.sqrt();
            }
        }
        denominator += state.get(&occ).copied().unwrap_or(ZERO);
        for l in word.iter().rev() {
            state = apply_ladder(*l, &state);
        }
        numerator += state.get(&occ).copied().unwrap_or(ZERO);
    }
    (numerator / denominator, n_max)
}

/// Distinguishable-particle kernel (e^{−H_n})_{x, x̃} by Monte Carlo over n
/// bridges from x̃_i to x_i:
/// e^{−νκn} Π ψ^ν(x_i − x̃_i) E[exp(−(λ/2ν) Σ_{i,j} ∫_0^ν v(ω_i − ω_j))].
#[allow(clippy::too_many_arguments)]
pub fn loop_gas_kernel(
    spec: &TorusSpec,
    v: &InteractionPotential,
    nu: f64,
    lambda: f64,
    x: &[Vec<f64>],
    xt: &[Vec<f64>],
    n_samples: usize,
    m: usize,
    seed: u64,
) -> Result<MCEstimate> {
    let n = x.len();
    if n == 0 || xt.len() != n {
        return domain("loop gas needs matching nonempty tuples");
    }
    let bridges: Vec<BridgeMeasureSpec> =
        (0..n).map(|i| BridgeMeasureSpec::new(spec.l, 0.0, nu, &xt[i], &x[i], m)).collect::<Result<_>>()?;
    let mass: f64 = bridges.iter().map(|b| b.weight()).product::<f64>() * (-nu * spec.kappa * n as f64).exp();
    let samples: Vec<Result<f64>> = par_samples(n_samples, seed, |rng, _| {
        let paths = bridges.iter().map(|b| sample_bridge_with(b, rng)).collect::<Result<Vec<_>>>()?;
        let grid = &paths[0].t_grid;
        let mut energy = 0.0;
        for step in 0..grid.len() {
            let w = if step == 0 || step + 1 == grid.len() { 0.5 } else { 1.0 } * (nu / m as f64);
            let mut e = 0.0;
            for pi in &paths {
                for pj in &paths {
                    let dx: Vec<f64> = pi.points[step].iter().zip(&pj.points[step]).map(|(a, b)| a - b).collect();
                    e += v.value(&dx);
                }
            }
            energy += w * e;
        }
        Ok(mass * (-(lambda / (2.0 * nu)) * energy).exp())
    });
    let xs = samples.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MCEstimate::from_real_samples(&xs, seed))
}

/// Left side of the bijection identity for given J, J̃ with coefficient c(|I^c|)
/// on each I ⊃ J ∪ J̃ (the identity holds for c(k) = (−1)^k).
fn claim2_lhs(p: usize, g: &DMatrix<Complex64>, j: &[usize], jt: &[usize], coeff: &dyn Fn(usize) -> f64) -> Complex64 {
    let mut total = ZERO;
    for i_set in subsets(p) {
        if !j.iter().chain(jt).all(|a| i_set.contains(a)) {
            continue;
        }
        let ic: Vec<usize> = (0..p).filter(|a| !i_set.contains(a)).collect();
        let from: Vec<usize> = i_set.iter().copied().filter(|a| !j.contains(a)).collect();
        let to: Vec<usize> = i_set.iter().copied().filter(|a| !jt.contains(a)).collect();
        let diag: Complex64 = ic.iter().map(|&a| g[(a, a)]).product();
        total += diag * all_bijections_sum(&from, &to, g) * coeff(ic.len());
    }
    total
}

/// Σ over all bijections λ: from → to of Π g(i, λ(i)).
fn all_bijections_sum(from: &[usize], to: &[usize], g: &DMatrix<Complex64>) -> Complex64 {
    if from.len() != to.len() {
        return ZERO;
    }
    let mut total = ZERO;
    let mut perm: Vec<usize> = (0..to.len()).collect();
    loop {
        total += from.iter().zip(&perm).map(|(&i, &k)| g[(i, to[k])]).product::<Complex64>();
        if !next_permutation(&mut perm) {
            return total;
        }
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Largest discrepancy of the bijection identity over all J, J̃ ⊂ [p] with |J| = |J̃|,
/// using coefficient c(|I^c|) on the left side.
pub fn claim2_discrepancy(p: usize, g: &DMatrix<Complex64>, coeff: &dyn Fn(usize) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let subs = subsets(p);
    for j in &subs {
        for jt in subs.iter().filter(|s| s.len() == j.len()) {
            let lhs = claim2_lhs(p, g, j, jt, coeff);
            let jc: Vec<usize> = (0..p).filter(|a| !j.contains(a)).collect();
            let jtc: Vec<usize> = (0..p).filter(|a| !jt.contains(a)).collect();
            let rhs = fixed_point_free_sum(&jc, &jtc, &|a, b| g[(a, b)]);
            worst = worst.max((lhs - rhs).norm() / (1.0 + rhs.norm()));
        }
    }
    worst
}

/// Exhaustive check of the bijection identity for the kernel values `g` (a p×p matrix).
pub fn claim2_check(p: usize, g: &DMatrix<Complex64>) -> bool {
    g.nrows() == p && g.ncols() == p && claim2_discrepancy(p, g, &|k| if k % 2 == 0 { 1.0 } else { -1.0 }) < 1e-12
}
