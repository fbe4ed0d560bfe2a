//! Gas in R^d with an external trap, realized on a Dirichlet box: the
//! counterterm fixed-point solvers, weighted bridge kernels, the decay weight
//! Υ and the empirical check of the excursion bound.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::brownian::{sample_bridge_with, BridgeMeasureSpec};
use crate::error::{domain, Error, Result};
use crate::stats::{par_samples, MCEstimate};
use crate::torus_spectral::euclidean_heat_kernel;

/// Largest dense grid the solvers accept.
pub const MAX_GRID_POINTS: usize = 2500;

/// External potential families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrapPotential {
    /// a |x|^θ.
    Power { coefficient: f64, exponent: f64 },
    /// ω² |x|² / 2.
    Harmonic { omega: f64 },
    /// Values at the grid nodes, interpolated multilinearly in between.
    Grid { values: Vec<f64> },
}

/// R^d truncated to the box (−a, a)^d with Dirichlet walls and a uniform
/// finite-difference grid of `n` interior nodes per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapSpec {
    pub d: usize,
    pub box_half_width: f64,
    pub n: usize,
    pub theta: f64,
    pub b: f64,
    pub potential: TrapPotential,
}

impl TrapSpec {
    /// Validates the grid and the lower bound U ≥ b|x|^θ at every node.
    pub fn new(d: usize, box_half_width: f64, n: usize, theta: f64, b: f64, potential: TrapPotential) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return domain(format!("dimension must be 1, 2 or 3, got {d}"));
        }
        if !(box_half_width > 0.0) || n < 3 {
            return domain("need a positive box half width and at least 3 nodes per axis");
        }
        if n.pow(d as u32) > MAX_GRID_POINTS {
            return Err(Error::Refused(format!("grid of {} nodes exceeds the cap {MAX_GRID_POINTS}", n.pow(d as u32))));
        }
        if !(theta >= 2.0) || !(b > 0.0) {
            return domain(format!("need theta >= 2 and b > 0, got {theta}, {b}"));
        }
        if let TrapPotential::Grid { values } = &potential {
            if values.len() != n.pow(d as u32) {
                return domain("grid potential has the wrong number of values");
            }
        }
        let spec = TrapSpec { d, box_half_width, n, theta, b, potential };
        for i in 0..spec.grid_len() {
            let x = spec.node(i);
            let bound = b * norm(&x).powf(theta);
            if spec.potential_at_node(i) < bound - 1e-12 * bound.max(1.0) {
                return domain(format!("potential violates U >= b|x|^theta at {x:?}"));
            }
        }
        Ok(spec)
    }

    /// Same box and constants with a different potential, without the lower-bound check.
    pub fn with_grid_potential(&self, values: Vec<f64>) -> Self {
        TrapSpec { potential: TrapPotential::Grid { values }, ..self.clone() }
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.box_half_width / (self.n + 1) as f64
    }

    pub fn grid_len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    fn axis(&self, j: usize) -> f64 {
        -self.box_half_width + self.spacing() * (j + 1) as f64
    }

    /// Coordinates of node `i` (axis 0 varies fastest).
    pub fn node(&self, i: usize) -> Vec<f64> {
        let mut r = i;
        (0..self.d)
            .map(|_| {
                let j = r % self.n;
                r /= self.n;
                self.axis(j)
            })
            .collect()
    }

    fn potential_at_node(&self, i: usize) -> f64 {
        match &self.potential {
            TrapPotential::Grid { values } => values[i],
            _ => self.potential_value(&self.node(i)),
        }
    }

    pub fn potential_on_grid(&self) -> Vec<f64> {
        (0..self.grid_len()).map(|i| self.potential_at_node(i)).collect()
    }

    /// U(x); +∞ outside the box.
    pub fn potential_value(&self, x: &[f64]) -> f64 {
        if x.iter().any(|c| c.abs() >= self.box_half_width) {
            return f64::INFINITY;
        }
        match &self.potential {
            TrapPotential::Power { coefficient, exponent } => coefficient * norm(x).powf(*exponent),
            TrapPotential::Harmonic { omega } => 0.5 * omega * omega * x.iter().map(|c| c * c).sum::<f64>(),
            TrapPotential::Grid { values } => self.interpolate(values, x),
        }
    }

    /// Multilinear interpolation of nodal values, with zero boundary values at the walls.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let h = self.spacing();
        let mut base = Vec::with_capacity(self.d);
        let mut frac = Vec::with_capacity(self.d);
        for c in x.iter().take(self.d) {
            // Wall nodes sit at index −1 and n.
            let s = (c + self.box_half_width) / h - 1.0;
            let j = s.floor().clamp(-1.0, self.n as f64 - 1.0);
            base.push(j as i64);
            frac.push((s - j).clamp(0.0, 1.0));
        }
        let mut total = 0.0;
        for corner in 0..(1usize << self.d) {
            let mut w = 1.0;
            let mut idx = 0usize;
            let mut stride = 1usize;
            let mut inside = true;
            for a in 0..self.d {
                let up = (corner >> a) & 1;
                let j = base[a] + up as i64;
                w *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
                if j < 0 || j >= self.n as i64 {
                    inside = false;
                }
                idx += (j.max(0) as usize) * stride;
                stride *= self.n;
            }
            if inside && w > 0.0 {
                total += w * values[idx];
            }
        }
        total
    }

    /// Dense −Δ/2 with Dirichlet walls on the grid.
    pub fn kinetic_matrix(&self) -> DMatrix<f64> {
        let m = self.grid_len();
        let h2 = self.spacing().powi(2);
        let mut k = DMatrix::zeros(m, m);
        let mut stride = 1usize;
        for _ in 0..self.d {
            for i in 0..m {
                k[(i, i)] += 1.0 / h2;
                let j = (i / stride) % self.n;
                if j + 1 < self.n {
                    k[(i, i + stride)] -= 0.5 / h2;
                    k[(i + stride, i)] -= 0.5 / h2;
                }
            }
            stride *= self.n;
        }
        k
    }

    /// Dense κ − Δ/2 + U for nodal potential values.
    pub fn hamiltonian(&self, kappa: f64, u: &[f64]) -> DMatrix<f64> {
        let mut h = self.kinetic_matrix();
        for (i, ui) in u.iter().enumerate() {
            h[(i, i)] += kappa + ui;
        }
        h
    }

    /// Agmon estimate exp(−∫_{r_E}^{a} √(2(b r^θ − E)) dr) of the relative
    /// size at the wall of a state with energy E under the trap bound.
    pub fn wall_error_bound(&self, energy: f64) -> f64 {
        let a = self.box_half_width;
        let r_e = (energy.max(0.0) / self.b).powf(1.0 / self.theta);
        if r_e >= a {
            return 1.0;
        }
        let integral =
            crate::quadrature::integrate(|r| (2.0 * (self.b * r.powf(self.theta) - energy)).max(0.0).sqrt(), r_e, a, 64);
        (-integral).exp()
    }

    /// Wall bound at the default reference energy 20.
    pub fn default_wall_error(&self) -> f64 {
        self.wall_error_bound(20.0)
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Compactly supported even interaction of positive type on R^d.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrapInteraction {
    Zero,
    /// amplitude · Π_i (1 − |x_i|/width)₊.
    Triangle { amplitude: f64, width: f64 },
}

impl TrapInteraction {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TrapInteraction::Zero => 0.0,
            TrapInteraction::Triangle { amplitude, width } => {
                amplitude * x.iter().map(|c| (1.0 - c.abs() / width).max(0.0)).product::<f64>()
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            TrapInteraction::Zero => true,
            TrapInteraction::Triangle { amplitude, .. } => *amplitude == 0.0,
        }
    }
}

/// Returned potential together with its residual certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountertermSolution {
    pub values: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub wall_error: f64,
}

/// Nodal convolution (v ∗ f)(x_i) = Σ_j v(x_i − x_j) f_j h^d.
fn convolve(trap: &TrapSpec, v: &TrapInteraction, f: &[f64]) -> Vec<f64> {
    let m = trap.grid_len();
    let nodes: Vec<Vec<f64>> = (0..m).map(|i| trap.node(i)).collect();
    let cell = trap.spacing().powi(trap.d as i32);
    (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let dx: Vec<f64> = nodes[i].iter().zip(&nodes[j]).map(|(a, b)| a - b).collect();
                    v.value(&dx) * f[j]
                })
                .sum::<f64>()
                * cell
        })
        .collect()
}

/// Diagonal of g(h) on the grid as a density, for g applied to the eigenvalues.
fn spectral_diagonal(trap: &TrapSpec, h: DMatrix<f64>, g: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    let eig = h.symmetric_eigen();
    if eig.eigenvalues.min() <= 0.0 {
        return Err(Error::Convergence(format!(
            "one-particle operator lost positivity (lowest eigenvalue {:e}); increase kappa",
            eig.eigenvalues.min()
        )));
    }
    let cell = trap.spacing().powi(trap.d as i32);
    let gs: Vec<f64> = eig.eigenvalues.iter().map(|&e| g(e)).collect();
    let m = trap.grid_len();
    Ok((0..m)
        .map(|i| (0..m).map(|k| eig.eigenvectors[(i, k)].powi(2) * gs[k]).sum::<f64>() / cell)
        .collect())
}

/// Brillouin-zone average of g(κ + lattice dispersion) on the infinite lattice of the trap grid.
fn lattice_constant(trap: &TrapSpec, kappa: f64, g: impl Fn(f64) -> f64) -> f64 {
    let h = trap.spacing();
    let nq: usize = match trap.d {
        1 => 2048,
        2 => 256,
        _ => 64,
    };
    let disp: Vec<f64> = (0..nq)
        .map(|j| {
            let k = -PI / h + 2.0 * PI / h * (j as f64 + 0.5) / nq as f64;
            2.0 / (h * h) * (0.5 * k * h).sin().powi(2)
        })
        .collect();
    let mut total = 0.0;
    let count = nq.pow(trap.d as u32);
    for idx in 0..count {
        let mut r = idx;
        let mut e = kappa;
        for _ in 0..trap.d {
            e += disp[r % nq];
            r /= nq;
        }
        total += g(e);
    }
    total / count as f64 / h.powi(trap.d as i32)
}

/// Homogeneous free density ϱ⁰ = (ν/(e^{νh⁰} − 1))_{x,x} for the grid discretization.
pub fn free_density_lattice(trap: &TrapSpec, nu: f64, kappa: f64) -> f64 {
    lattice_constant(trap, kappa, |e| nu / (nu * e).exp_m1())
}

/// ϱ^U(x) = (ν/(e^{νh^U} − 1))_{x,x} at the nodes.
pub fn trapped_density(trap: &TrapSpec, u: &[f64], nu: f64, kappa: f64) -> Result<Vec<f64>> {
    spectral_diagonal(trap, trap.hamiltonian(kappa, u), |e| nu / (nu * e).exp_m1())
}

fn fixed_point(
    trap: &TrapSpec,
    v: &TrapInteraction,
    tol: f64,
    max_iter: usize,
    density_shift: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<CountertermSolution> {
    let bare = trap.potential_on_grid();
    let wall_error = trap.default_wall_error();
    if v.is_zero() {
        return Ok(CountertermSolution { values: bare, residual: 0.0, iterations: 1, wall_error });
    }
    let image = |u: &[f64]| -> Result<Vec<f64>> {
        let shift = density_shift(u)?;
        let conv = convolve(trap, v, &shift);
        Ok(bare.iter().zip(&conv).map(|(a, c)| a + c).collect())
    };
    let damping = 0.5;
    let mut u = bare.clone();
    let mut last = f64::INFINITY;
    let mut increases = 0;
    for it in 1..=max_iter {
        let target = image(&u)?;
        let residual = u.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if residual < tol {
            return Ok(CountertermSolution { values: u, residual, iterations: it, wall_error });
        }
        increases = if residual > last { increases + 1 } else { 0 };
        if increases >= 3 {
            return Err(Error::Convergence(format!(
                "counterterm iteration is not contracting (residual {residual:e} after {it} iterations); increase kappa"
            )));
        }
        last = residual;
        for (a, b) in u.iter_mut().zip(&target) {
            *a = (1.0 - damping) * *a + damping * b;
        }
    }
    Err(Error::Convergence(format!("counterterm iteration did not reach {tol:e} in {max_iter} iterations")))
}

/// Solves U = V + v ∗ (ϱ^U − ϱ⁰) by damped fixed-point iteration (damping 0.5).
pub fn counterterm_solve(
    trap: &TrapSpec,
    v: &TrapInteraction,
    nu: f64,
    kappa: f64,
    tol: f64,
    max_iter: usize,
) -> Result<CountertermSolution> {
    if !(nu > 0.0) || !(kappa > 0.0) {
        return domain(format!("need nu > 0 and kappa > 0, got {nu}, {kappa}"));
    }
    let rho0 = free_density_lattice(trap, nu, kappa);
    fixed_point(trap, v, tol, max_iter, |u| {
        Ok(trapped_density(trap, u, nu, kappa)?.into_iter().map(|r| r - rho0).collect())
    })
}

/// Solves U₀ = V + v ∗ ((κ − Δ/2 + U₀)^{-1} − (κ − Δ/2)^{-1})_{x,x}.
pub fn counterterm_limit(trap: &TrapSpec, v: &TrapInteraction, kappa: f64, tol: f64, max_iter: usize) -> Result<CountertermSolution> {
    if !(kappa > 0.0) {
        return domain(format!("need kappa > 0, got {kappa}"));
    }
    let r0 = lattice_constant(trap, kappa, |e| 1.0 / e);
    fixed_point(trap, v, tol, max_iter, |u| {
        Ok(spectral_diagonal(trap, trap.hamiltonian(kappa, u), |e| 1.0 / e)?.into_iter().map(|r| r - r0).collect())
    })
}

/// sup_x |U_ν − U₀| / (1 + V).
pub fn relative_distance(trap: &TrapSpec, u_nu: &[f64], u_0: &[f64]) -> f64 {
    let bare = trap.potential_on_grid();
    u_nu.iter().zip(u_0).zip(&bare).map(|((a, b), v)| (a - b).abs() / (1.0 + v)).fold(0.0, f64::max)
}

/// Smallest C with (1 + U₀)/C ≤ 1 + U_ν ≤ C(1 + U₀) at every node of every solution.
pub fn sandwich_constant(u_0: &[f64], solutions: &[&[f64]]) -> Result<f64> {
    let mut c: f64 = 1.0;
    for u in solutions {
        for (a, b) in u.iter().zip(u_0) {
            let (p, q) = (1.0 + a, 1.0 + b);
            if p <= 0.0 || q <= 0.0 {
                return Err(Error::Numerical("1 + U is not positive; the sandwich is undefined".into()));
            }
            c = c.max(p / q).max(q / p);
        }
    }
    Ok(c)
}

/// ψ^τ(x − x̃) E[exp(−∫_0^τ U(ω(t)) dt)] over Euclidean bridges from x̃ to x.
pub fn weighted_kernel(trap: &TrapSpec, tau: f64, x: &[f64], xt: &[f64], n_samples: usize, m: usize, seed: u64) -> Result<MCEstimate> {
    let (factor, est) = weighted_expectation(trap, tau, x, xt, n_samples, m, seed)?;
    Ok(MCEstimate { value: est.value * factor, std_error: est.std_error * factor, ..est })
}

/// (ψ^τ(x − x̃), E[exp(−∫U)]) separately, so that ratios avoid underflow.
pub fn weighted_expectation(
    trap: &TrapSpec,
    tau: f64,
    x: &[f64],
    xt: &[f64],
    n_samples: usize,
    m: usize,
    seed: u64,
) -> Result<(f64, MCEstimate)> {
    if x.len() != trap.d || xt.len() != trap.d {
        return domain("points must match the trap dimension");
    }
    let bridge = BridgeMeasureSpec::new(f64::INFINITY, 0.0, tau, xt, x, m)?;
    let psi = bridge.weight();
    let samples: Vec<Result<f64>> = par_samples(n_samples, seed, |rng, _| {
        let path = sample_bridge_with(&bridge, rng)?;
        let dt = tau / m as f64;
        let mut integral = 0.0;
        for (j, p) in path.points.iter().enumerate() {
            let w = if j == 0 || j == m { 0.5 } else { 1.0 };
            integral += w * dt * trap.potential_value(p);
        }
        Ok((-integral).exp())
    });
    let xs = samples.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((psi, MCEstimate::from_real_samples(&xs, seed)))
}

/// Dense-grid kernel e^{−τ(−Δ/2 + U)}(x, x̃), interpolated between nodes.
pub fn grid_kernel(trap: &TrapSpec, tau: f64, x: &[f64], xt: &[f64]) -> Result<f64> {
    let u = trap.potential_on_grid();
    let eig = trap.hamiltonian(0.0, &u).symmetric_eigen();
    let e: Vec<f64> = eig.eigenvalues.iter().map(|l| (-tau * l).exp()).collect();
    let phi_x = interpolated_modes(trap, &eig.eigenvectors, x);
    let phi_xt = interpolated_modes(trap, &eig.eigenvectors, xt);
    let cell = trap.spacing().powi(trap.d as i32);
    Ok(e.iter().enumerate().map(|(k, ek)| ek * phi_x[k] * phi_xt[k]).sum::<f64>() / cell)
}

/// Grid kernel with a discretization error estimate |K_h − K_{2h}|, which
/// bounds the O(h²) error of the finer grid with margin.
pub fn grid_kernel_with_error(trap: &TrapSpec, tau: f64, x: &[f64], xt: &[f64]) -> Result<(f64, f64)> {
    let fine = grid_kernel(trap, tau, x, xt)?;
    let coarse_n = (trap.n + 1) / 2 - 1;
    if coarse_n < 3 {
        return domain("grid too small for a coarse comparison");
    }
    let coarse_potential = match &trap.potential {
        TrapPotential::Grid { .. } => return domain("error estimate needs an analytic potential"),
        p => p.clone(),
    };
    let coarse = TrapSpec { n: coarse_n, potential: coarse_potential, ..trap.clone() };
    let k2 = grid_kernel(&coarse, tau, x, xt)?;
    Ok((fine, (fine - k2).abs()))
}

fn interpolated_modes(trap: &TrapSpec, vecs: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..vecs.ncols())
        .map(|k| {
            let col: Vec<f64> = vecs.column(k).iter().copied().collect();
            trap.interpolate(&col, x)
        })
        .collect()
}

/// Mehler kernel of −Δ/2 + ω²x²/2 in d = 1.
pub fn mehler_kernel(omega: f64, tau: f64, x: f64, xt: f64) -> f64 {
    let s = (omega * tau).sinh();
    let c = (omega * tau).cosh();
    (omega / (2.0 * PI * s)).sqrt() * (-omega * ((x * x + xt * xt) * c - 2.0 * x * xt) / (2.0 * s)).exp()
}

/// Free Euclidean kernel ψ^τ(x − x̃).
pub fn free_kernel(tau: f64, x: &[f64], xt: &[f64]) -> Result<f64> {
    let dx: Vec<f64> = x.iter().zip(xt).map(|(a, b)| a - b).collect();
    euclidean_heat_kernel(tau, &dx)
}

/// Υ_{θ,c}(x, x̃) symmetrized over permutations of the tuple.
pub fn upsilon_weight(theta: f64, c: f64, x: &[Vec<f64>], xt: &[Vec<f64>]) -> Result<f64> {
    let p = x.len();
    if p == 0 || xt.len() != p {
        return domain("tuples must be nonempty and of equal length");
    }
    let d = x[0].len() as f64;
    let single = |a: &[f64], b: &[f64]| {
        let diff: Vec<f64> = a.iter().zip(b).map(|(u, w)| u - w).collect();
        (1.0 + norm(a) + norm(b)).powf(-theta * (2.0 - d / 2.0)) * (-c * norm(&diff)).exp()
    };
    let mut perm: Vec<usize> = (0..p).collect();
    let mut total = 0.0;
    loop {
        total += (0..p).map(|i| single(&x[i], &xt[perm[i]])).product::<f64>();
        if !next_perm(&mut perm) {
            return Ok(total);
        }
    }
}

fn next_perm(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Bracket of the four-term excursion bound, without C and ψ^τ.
pub fn excursion_bracket(theta: f64, c: f64, tau: f64, x: &[f64], xt: &[f64]) -> f64 {
    let s = norm(x) + norm(xt);
    let indicator = if tau <= s.powf(-2.0 * (theta + 1.0)) { 1.0 } else { 0.0 };
    indicator
        + (-c * s.powf(theta) * tau).exp()
        + (-c * s.powf(1.0 + theta / 2.0)).exp()
        + (-c * (tau.sqrt() * s.powf(theta + 1.0)).powf(2.0 / 3.0)).exp()
}

/// One evaluation of the excursion bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionRow {
    pub tau: f64,
    pub x: Vec<f64>,
    pub xt: Vec<f64>,
    /// E[e^{−∫U}] = kernel / ψ^τ.
    pub lhs: MCEstimate,
    /// C · bracket.
    pub rhs: f64,
    pub holds: bool,
}

/// Outcome of the excursion-bound experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionReport {
    pub c_const: f64,
    pub big_c: f64,
    pub rows: Vec<ExcursionRow>,
    pub all_hold: bool,
}

/// Grid of (τ, x, x̃) values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionGrid {
    pub taus: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
    pub xts: Vec<Vec<f64>>,
}

impl ExcursionGrid {
    fn points(&self) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
        let mut out = Vec::new();
        for &t in &self.taus {
            for x in &self.xs {
                for xt in &self.xts {
                    out.push((t, x.clone(), xt.clone()));
                }
            }
        }
        out
    }
}

/// Candidate decay rates c, tried from largest to smallest during calibration.
const C_CANDIDATES: [f64; 6] = [1.0, 0.5, 0.25, 0.1, 0.05, 0.02];

/// Calibrates (C, c) on `coarse` and checks E[e^{−∫U}] ≤ C·bracket (up to 3σ)
/// at every point of `fine`. C is twice the largest coarse-grid ratio, and c
/// the largest candidate whose calibrated C stays at most 10.
pub fn excursion_bound_check(
    trap: &TrapSpec,
    coarse: &ExcursionGrid,
    fine: &ExcursionGrid,
    n_samples: usize,
    m: usize,
    seed: u64,
) -> Result<ExcursionReport> {
    let theta = trap.theta;
    let evaluate = |grid: &ExcursionGrid, seed: u64| -> Result<Vec<(f64, Vec<f64>, Vec<f64>, MCEstimate)>> {
        grid.points()
            .into_iter()
            .enumerate()
            .map(|(i, (t, x, xt))| {
                let (_, est) = weighted_expectation(trap, t, &x, &xt, n_samples, m, seed.wrapping_add(i as u64))?;
                Ok((t, x, xt, est))
            })
            .collect()
    };
    let calib = evaluate(coarse, seed)?;
    let fit = |c: f64| {
        2.0 * calib
            .iter()
            .map(|(t, x, xt, e)| e.value.re / excursion_bracket(theta, c, *t, x, xt))
            .fold(0.0, f64::max)
    };
    let (c_const, big_c) = C_CANDIDATES
        .iter()
        .map(|&c| (c, fit(c)))
        .find(|(_, big)| *big <= 10.0)
        .unwrap_or_else(|| {
            let c = C_CANDIDATES[C_CANDIDATES.len() - 1];
            (c, fit(c))
        });
    let rows: Vec<ExcursionRow> = evaluate(fine, seed ^ 0x00e5_c0de)?
        .into_iter()
        .map(|(tau, x, xt, lhs)| {
            let rhs = big_c * excursion_bracket(theta, c_const, tau, &x, &xt);
            let holds = lhs.value.re <= rhs + 3.0 * lhs.std_error;
            ExcursionRow { tau, x, xt, lhs, rhs, holds }
        })
        .collect();
    let all_hold = rows.iter().all(|r| r.holds);
    Ok(ExcursionReport { c_const, big_c, rows, all_hold })
}

/// S(x, x̃) = ν Σ_{r ∈ νN*} e^{−κr} r e^{−r(−Δ/2 + U)}(x, x̃) at the nodes.
pub fn sum_prop_est(trap: &TrapSpec, nu: f64, kappa: f64) -> Result<DMatrix<f64>> {
    if !(nu > 0.0) || !(kappa > 0.0) {
        return domain("need nu > 0 and kappa > 0");
    }
    let u = trap.potential_on_grid();
    let eig = trap.hamiltonian(kappa, &u).symmetric_eigen();
    // ν Σ_n νn q^n = ν² q/(1 − q)² with q = e^{−ν(κ + e)}.
    let g: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&e| {
            let q = (-nu * e).exp();
            nu * nu * q / (1.0 - q).powi(2)
        })
        .collect();
    let v = &eig.eigenvectors;
    let mut vg = v.clone();
    for (k, gk) in g.iter().enumerate() {
        vg.column_mut(k).scale_mut(*gk);
    }
    let cell = trap.spacing().powi(trap.d as i32);
    Ok(vg * v.transpose() / cell)
}

/// Result of the decay-envelope check for S.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub c_const: f64,
    pub big_c: f64,
    pub worst_ratio: f64,
    pub holds: bool,
}

/// Calibrates S ≤ C Υ_{θ,c} on the `coarse` node pairs and checks it on `fine`.
pub fn envelope_check(
    trap: &TrapSpec,
    s: &DMatrix<f64>,
    coarse: &[(Vec<f64>, Vec<f64>)],
    fine: &[(Vec<f64>, Vec<f64>)],
) -> Result<EnvelopeReport> {
    let value = |x: &[f64], xt: &[f64]| -> f64 {
        let m = trap.grid_len();
        let rows: Vec<f64> = (0..m)
            .map(|i| {
                let row: Vec<f64> = s.row(i).iter().copied().collect();
                trap.interpolate(&row, xt)
            })
            .collect();
        trap.interpolate(&rows, x)
    };
    let weight = |c: f64, x: &[f64], xt: &[f64]| upsilon_weight(trap.theta, c, &[x.to_vec()], &[xt.to_vec()]);
    let mut chosen = None;
    for &c in &C_CANDIDATES {
        let mut worst: f64 = 0.0;
        for (x, xt) in coarse {
            worst = worst.max(value(x, xt).abs() / weight(c, x, xt)?);
        }
        chosen = Some((c, 2.0 * worst));
        if 2.0 * worst <= 10.0 {
            break;
        }
    }
    let (c_const, big_c) = chosen.ok_or_else(|| Error::Domain("empty candidate list".into()))?;
    let mut worst_ratio: f64 = 0.0;
    for (x, xt) in fine {
        worst_ratio = worst_ratio.max(value(x, xt).abs() / (big_c * weight(c_const, x, xt)?));
    }
    Ok(EnvelopeReport { c_const, big_c, worst_ratio, holds: worst_ratio <= 1.0 })
}
