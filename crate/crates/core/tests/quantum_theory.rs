use bosefield::brownian::{sample_bridge, BridgeMeasureSpec};
use bosefield::classical_theory::KernelPoint;
use bosefield::gaussian_fields::{AuxFieldSigma, InteractionPotential, PotentialKind, RegularizationSpec};
use bosefield::quantum_theory::{
    density_correlation_quantum, estimate_gamma_hat_p, estimate_z_quantum, f0_free, f0_from_period, f0_log_series,
    feynman_kac_kernel, free_gamma_p0, free_green_heat_series, green_kernel, loop_sum, path_path,
    path_path_periodic, point_path, propagate, sigma_rho_pairing, DensityShift, QuantumModel,
};
use bosefield::stats::{complex_normal, rng_for};
use bosefield::torus_spectral::{SpectralBasis, TorusSpec};
use nalgebra::DMatrix;
use num_complex::Complex64;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn spec1(l: f64, kappa: f64, kmax: usize) -> TorusSpec {
    TorusSpec::new(1, l, kappa, kmax).unwrap()
}

/// σ with random coefficients on temporal frequencies |k| ≤ kt and spatial |p| ≤ ps, Hermitian-paired.
fn random_sigma(spec: TorusSpec, nu: f64, kt: i64, pmax: i64, amp: f64, seed: u64) -> AuxFieldSigma {
    let temporal: Vec<i64> = (-kt..=kt).collect();
    let ps: Vec<[i64; 3]> = (-pmax..=pmax).map(|p| [p, 0, 0]).collect();
    let mut s = AuxFieldSigma::zero(spec, nu, 1.0, temporal.clone(), ps.clone());
    let mut rng = rng_for(seed, 0);
    let np = ps.len();
    for (ik, &k) in temporal.iter().enumerate() {
        for (ip, p) in ps.iter().enumerate() {
            let jk = temporal.iter().position(|&q| q == -k).unwrap();
            let jp = ps.iter().position(|q| q[0] == -p[0]).unwrap();
            let (a, b) = (ik * np + ip, jk * np + jp);
            if a < b {
                let z = complex_normal(&mut rng) * amp;
                s.coeffs[a] = z;
                s.coeffs[b] = z.conj();
            } else if a == b {
                s.coeffs[a] = c(complex_normal(&mut rng).re * amp);
            }
        }
    }
    s
}

#[test]
fn spatially_constant_sigma_gives_a_phase() {
    // σ(τ) = s₀ + 2a cos(2πτ/ν): the flow is e^{−Th} e^{i∫σ}.
    let s = spec1(1.0, 0.8, 3);
    let basis = SpectralBasis::full(s);
    let nu = 0.5;
    let (s0, a) = (0.7, 0.3);
    let mut sig = AuxFieldSigma::zero(s, nu, 1.0, vec![-1, 0, 1], vec![[0, 0, 0]]);
    sig.coeffs = vec![c(a), c(s0), c(a)];
    let (t0, t1) = (0.1, 0.4);
    let integral = s0 * (t1 - t0)
        + 2.0 * a * nu / (2.0 * std::f64::consts::PI)
            * ((2.0 * std::f64::consts::PI * t1 / nu).sin() - (2.0 * std::f64::consts::PI * t0 / nu).sin());
    let w = propagate(&basis, &sig, t0, t1, 400).unwrap();
    for (i, m) in basis.modes.iter().enumerate() {
        let expect = Complex64::from_polar((-(t1 - t0) * m.lambda).exp(), integral);
        assert!((w.matrix[(i, i)] - expect).norm() < 1e-6 * expect.norm(), "mode {i}");
    }
}

#[test]
fn strang_propagator_converges_at_second_order() {
    let s = spec1(1.0, 1.0, 3);
    let basis = SpectralBasis::full(s);
    let sig = random_sigma(s, 0.6, 2, 2, 1.0, 3);
    let reference = propagate(&basis, &sig, 0.0, 0.6, 4096).unwrap().matrix;
    let errs: Vec<f64> = [16usize, 32, 64]
        .iter()
        .map(|&n| (propagate(&basis, &sig, 0.0, 0.6, n).unwrap().matrix - &reference).norm())
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order > 1.8, "order {order} from {errs:?}");
    }
}

#[test]
fn propagator_composes_on_a_shared_grid() {
    let s = spec1(1.0, 1.0, 3);
    let basis = SpectralBasis::full(s);
    let sig = random_sigma(s, 0.8, 1, 2, 0.8, 4);
    let a = propagate(&basis, &sig, 0.0, 0.3, 30).unwrap().matrix;
    let b = propagate(&basis, &sig, 0.3, 0.8, 50).unwrap().matrix;
    let ab = propagate(&basis, &sig, 0.0, 0.8, 80).unwrap().matrix;
    assert!((&b * &a - &ab).norm() < 1e-12);
    assert!(propagate(&basis, &sig, 0.5, 0.2, 4).is_err());
    assert!(propagate(&basis, &sig, 0.0, 0.2, 0).is_err());
}

#[test]
fn propagator_is_a_contraction() {
    let s = spec1(1.0, 0.5, 3);
    let basis = SpectralBasis::full(s);
    for seed in 0..5 {
        let sig = random_sigma(s, 0.5, 2, 3, 3.0, seed);
        let w = propagate(&basis, &sig, 0.0, 0.5, 32).unwrap();
        assert!(w.operator_norm() <= (-0.5f64 * 0.5).exp() + 1e-12);
    }
}

#[test]
fn feynman_kac_matches_galerkin_propagator() {
    let s = spec1(1.0, 1.0, 10);
    let basis = SpectralBasis::full(s);
    let sig = random_sigma(s, 0.3, 1, 1, 0.8, 5);
    let (x, xt) = ([0.15], [-0.1]);
    let w = propagate(&basis, &sig, 0.0, 0.3, 400).unwrap();
    let galerkin = w.kernel(&basis, &x, &xt);
    let fk = feynman_kac_kernel(&s, &sig, 0.0, 0.3, &x, &xt, 40_000, 128, 6).unwrap();
    assert!(fk.agrees_with(galerkin, 3.0, 0.0), "{} vs {galerkin} (se {})", fk.value, fk.std_error);
}

#[test]
fn free_green_function_from_period_propagator() {
    let s = spec1(1.0, 1.0, 4);
    let basis = SpectralBasis::full(s);
    let nu = 0.4;
    let zero = AuxFieldSigma::zero(s, nu, 1.0, vec![0], vec![[0, 0, 0]]);
    let w = propagate(&basis, &zero, 0.0, nu, 8).unwrap();
    let g = green_kernel(&w, true).unwrap();
    assert!(g.loop_terms > 0);
    for (i, m) in basis.modes.iter().enumerate() {
        let q = (-nu * m.lambda).exp();
        assert!((g.matrix[(i, i)] - c(q / (1.0 - q))).norm() < 1e-10);
    }
}

#[test]
fn green_kernel_solve_and_loop_sum_agree_with_interaction() {
    let s = spec1(1.0, 1.0, 3);
    let basis = SpectralBasis::full(s);
    let sig = random_sigma(s, 0.5, 1, 2, 2.0, 7);
    let w = propagate(&basis, &sig, 0.0, 0.5, 64).unwrap();
    let solve = green_kernel(&w, false).unwrap().matrix;
    let (sum, _, tail) = loop_sum(&w.matrix, w.operator_norm(), 1e-13).unwrap();
    assert!((solve - sum).norm() < 1e-10 + tail);
}

#[test]
fn loop_sum_refuses_noncontracting_input() {
    let m = DMatrix::from_element(2, 2, c(0.6));
    assert!(loop_sum(&m, 1.2, 1e-8).is_err());
}

#[test]
fn f0_routes_agree() {
    let s = spec1(1.0, 1.0, 3);
    let basis = SpectralBasis::full(s);
    let nu = 0.5;
    let zero = AuxFieldSigma::zero(s, nu, 1.0, vec![0], vec![[0, 0, 0]]);
    let w0 = propagate(&basis, &zero, 0.0, nu, 4).unwrap();
    assert!((f0_from_period(&w0).unwrap() - c(f0_free(&basis, nu))).norm() < 1e-12);
    let sig = random_sigma(s, nu, 1, 2, 2.0, 8);
    let w = propagate(&basis, &sig, 0.0, nu, 64).unwrap();
    let direct = f0_from_period(&w).unwrap();
    let (series, terms, tail) = f0_log_series(&w, 1e-12).unwrap();
    assert!(terms > 1);
    assert!((direct - series).norm() < 1e-10 + tail, "{direct} vs {series}");
    assert!(direct.re <= f0_free(&basis, nu) + 1e-12);
}

fn gauss_model(nu: f64, lambda: f64, k: usize) -> QuantumModel {
    let s = spec1(1.0, 1.0, 4);
    let v = InteractionPotential::new(&s, PotentialKind::Gaussian { amplitude: 2.0, width: 0.2 }).unwrap();
    let reg = RegularizationSpec::with_eta(0.25).unwrap();
    QuantumModel::on_basis(SpectralBasis::lowest(s, k).unwrap(), &reg, &v, nu, lambda, 16).unwrap()
}

#[test]
fn zero_coupling_model_is_free() {
    let m = gauss_model(0.3, 0.0, 5);
    let z = estimate_z_quantum(&m, 100, 1, None).unwrap();
    assert!((z.value - c(1.0)).norm() < 1e-12 && z.std_error < 1e-12);
    let pts = vec![KernelPoint::pair(&[0.1], &[0.3])];
    let g = estimate_gamma_hat_p(&m, 1, &pts, 50, 2, true).unwrap();
    assert!(g.values[0].value.norm() < 1e-12);
    let plain = estimate_gamma_hat_p(&m, 1, &pts, 50, 2, false).unwrap();
    let free = free_gamma_p0(&m, 1, &pts).unwrap();
    assert!((plain.values[0].value - free.values[0].value).norm() < 1e-12);
    let d = density_correlation_quantum(&m, &[vec![0.2]], 50, 3).unwrap();
    assert!(d.value.norm() < 1e-12);
}

#[test]
fn free_one_body_kernel_on_diagonal_is_density_over_nu() {
    let m = gauss_model(0.3, 0.0, 5);
    let g = free_gamma_p0(&m, 1, &[KernelPoint::pair(&[0.27], &[0.27])]).unwrap();
    let occupations: f64 = m.basis.lambdas().iter().map(|l| 1.0 / (0.3 * l).exp_m1()).sum();
    assert!((g.values[0].value - c(occupations)).norm() < 1e-12);
    assert!((m.density() - 0.3 * occupations).abs() < 1e-12);
}

#[test]
fn heat_series_matches_spectral_free_kernel() {
    let s = spec1(1.0, 1.0, 40);
    let basis = SpectralBasis::full(s);
    let nu = 0.2;
    for &(x, xt) in &[(0.0, 0.0), (0.3, -0.1), (0.45, -0.45)] {
        let heat = free_green_heat_series(&s, nu, &[x], &[xt], 1e-13).unwrap();
        let spectral = basis.diagonal_kernel(|l| { let q = (-nu * l).exp(); q / (1.0 - q) }, &[x], &[xt]);
        assert!((spectral - c(heat)).norm() < 1e-9, "x={x}: {heat} vs {spectral}");
    }
}

#[test]
fn f2_has_nonpositive_real_part() {
    let m = gauss_model(0.4, 0.16, 5);
    let mut rng = rng_for(9, 0);
    for _ in 0..20 {
        let sig = m.sample_sigma(&mut rng);
        assert!(m.f2(&sig).unwrap().re <= 1e-10);
    }
    assert!(m.f2(&m.zero_sigma()).unwrap().norm() < 1e-12);
}

#[test]
fn relative_partition_function_lies_in_the_unit_disk() {
    let m = gauss_model(0.4, 0.16, 5);
    let z = estimate_z_quantum(&m, 4000, 10, None).unwrap();
    assert!(z.value.re > 0.0 && z.value.norm() <= 1.0 + 3.0 * z.std_error, "{}", z.value);
    assert!(z.value.im.abs() < 3.0 * z.std_error + 1e-12, "Z is real: {}", z.value);
    assert!(DensityShift::new(f64::NAN).is_err());
    let shifted = estimate_z_quantum(&m, 4000, 10, Some(DensityShift::new(0.0).unwrap())).unwrap();
    assert_eq!(shifted.value, z.value);
}

#[test]
fn sigma_rho_pairing_of_a_constant_field() {
    let s = spec1(1.7, 1.0, 3);
    let mut sig = AuxFieldSigma::zero(s, 0.4, 1.0, vec![0], vec![[0, 0, 0]]);
    sig.coeffs[0] = c(0.9);
    assert!((sigma_rho_pairing(&sig, 2.0) - 2.0 * 0.9 * 1.7).abs() < 1e-14);
}

#[test]
fn path_interactions_with_a_constant_potential() {
    let s = spec1(1.0, 1.0, 3);
    let v = InteractionPotential::new(&s, PotentialKind::Constant { value: 0.6 }).unwrap();
    let a = sample_bridge(&BridgeMeasureSpec::new(1.0, 0.0, 0.4, &[0.1], &[0.3], 16).unwrap(), 1).unwrap();
    let b = sample_bridge(&BridgeMeasureSpec::new(1.0, 0.1, 0.35, &[-0.2], &[0.0], 16).unwrap(), 2).unwrap();
    assert!((point_path(&v, &[0.2], &a) - 0.6 * 0.4).abs() < 1e-13);
    assert!((path_path(&v, &a, &b) - 0.6 * 0.4 * 0.25).abs() < 1e-13);
    // η > 1 leaves only the zero temporal frequency, so δ ≡ 1/ν.
    let reg = RegularizationSpec::with_eta(1.5).unwrap();
    let per = path_path_periodic(&reg, 0.5, &v, &a, &b).unwrap();
    assert!((per - 0.6 * 0.4 * 0.25).abs() < 1e-13);
}

#[test]
fn model_rejects_a_pre_regularized_potential() {
    let s = spec1(1.0, 1.0, 3);
    let v = InteractionPotential::new(&s, PotentialKind::Constant { value: 1.0 }).unwrap();
    let reg = RegularizationSpec::with_eta(0.3).unwrap();
    let ve = bosefield::gaussian_fields::regularized_potential(&v, &reg).unwrap();
    let basis = SpectralBasis::lowest(s, 3).unwrap();
    assert!(QuantumModel::on_basis(basis.clone(), &reg, &ve, 0.2, 0.04, 4).is_err());
    assert!(QuantumModel::on_basis(basis, &reg, &v, 0.0, 0.04, 4).is_err());
}
