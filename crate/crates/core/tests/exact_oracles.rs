use bosefield::exact_oracles::{
    claim2_check, claim2_discrepancy, fock_truncated_z, loop_gas_kernel, quasi_free_moment, FockOptions, FockSystem,
    FockTruncation, Ladder, SelfInteraction,
};
use bosefield::gaussian_fields::{InteractionPotential, PotentialKind};
use bosefield::stats::{complex_normal, rng_for};
use bosefield::torus_spectral::{heat_kernel_general, SpectralBasis, TorusSpec};
use nalgebra::DMatrix;
use num_complex::Complex64;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn basis(d: usize, l: f64, kappa: f64, count: usize) -> SpectralBasis {
    SpectralBasis::lowest(TorusSpec::new(d, l, kappa, 4).unwrap(), count).unwrap()
}

fn free_options(nu: f64) -> FockOptions {
    FockOptions { nu, lambda: 0.0, wick_ordered: false, self_interaction: SelfInteraction::Galerkin, shift: None }
}

fn occupations(modes: usize, n_max: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..modes {
        out = out
            .into_iter()
            .flat_map(|s: Vec<usize>| (0..=n_max).map(move |n| [s.clone(), vec![n]].concat()))
            .collect();
    }
    out.into_iter().filter(|s| s.iter().sum::<usize>() <= n_max).collect()
}

#[test]
fn free_partition_function_matches_enumeration_and_product_formula() {
    let b = basis(1, 1.0, 0.5, 3);
    let nu = 0.2;
    let ft = FockTruncation::new(b.clone(), 6).unwrap();
    assert_eq!(ft.dimension(), 84);
    let z = fock_truncated_z(&ft, &InteractionPotential::zero(&b.spec), free_options(nu)).unwrap();
    let lam = b.lambdas();
    let brute: f64 = occupations(3, 6)
        .iter()
        .map(|s| (-nu * s.iter().zip(&lam).map(|(&n, l)| n as f64 * l).sum::<f64>()).exp())
        .sum();
    let product: f64 = lam.iter().map(|l| 1.0 / (1.0 - (-nu * l).exp())).product();
    assert!((z.z - brute).abs() < 1e-12 * brute);
    assert!((z.z0 - product).abs() < 1e-12 * product);
    assert!(z.ratio <= 1.0 && z.ratio + z.tail_bound >= 1.0 - 1e-12);
}

#[test]
fn single_mode_interacting_partition_function() {
    // H = νκn + (λ/2)(v̂(0)/L)(n − c)² with c = 1/(e^{νκ} − 1).
    let (l, kappa, nu, lambda, cst) = (1.3, 0.9, 0.5, 0.25, 0.8);
    let b = basis(1, l, kappa, 1);
    let v = InteractionPotential::new(&b.spec, PotentialKind::Constant { value: cst }).unwrap();
    let opts = FockOptions { nu, lambda, wick_ordered: true, self_interaction: SelfInteraction::Galerkin, shift: None };
    let ft = FockTruncation::new(b, 6).unwrap();
    let z = fock_truncated_z(&ft, &v, opts).unwrap();
    let shift = 1.0 / (nu * kappa).exp_m1();
    let brute: f64 = (0..=6)
        .map(|n| {
            let n = n as f64;
            (-(nu * kappa * n + 0.5 * lambda * cst * (n - shift).powi(2))).exp()
        })
        .sum();
    assert!((z.z - brute).abs() < 1e-12 * brute, "{} vs {brute}", z.z);
}

#[test]
fn repulsive_partition_ratio_is_at_most_one() {
    let b = basis(1, 1.0, 1.0, 3);
    let v = InteractionPotential::new(&b.spec, PotentialKind::Gaussian { amplitude: 3.0, width: 0.2 }).unwrap();
    for &nu in &[0.8, 0.4, 0.2] {
        let sys = FockSystem::build(FockTruncation::new(b.clone(), 6).unwrap(), &v, FockOptions::mean_field(nu)).unwrap();
        let z = sys.partition();
        assert!(z.ratio <= 1.0, "nu={nu}: {}", z.ratio);
        assert!(z.ratio > 0.0);
        assert_eq!(sys.sector_leakage(), 0.0);
    }
}

#[test]
fn truncation_caps_are_enforced() {
    assert!(FockTruncation::new(basis(1, 1.0, 1.0, 5), 2).is_err());
    assert!(FockTruncation::new(basis(1, 1.0, 1.0, 2), 7).is_err());
    assert!(FockTruncation::with_dimension_cap(basis(1, 1.0, 1.0, 5), 4, 50).is_err());
    assert!(FockTruncation::with_dimension_cap(basis(1, 1.0, 1.0, 5), 4, 200).is_ok());
}

#[test]
fn free_one_body_kernel_from_fock_trace() {
    let b = basis(1, 1.0, 1.0, 3);
    let nu = 0.7;
    let sys = FockSystem::build(FockTruncation::new(b.clone(), 6).unwrap(), &InteractionPotential::zero(&b.spec), free_options(nu))
        .unwrap();
    let pts = vec![bosefield::classical_theory::KernelPoint::pair(&[0.1], &[0.4])];
    let (hat, tails) = sys.gamma_hat_1(&pts).unwrap();
    assert!(hat.values[0].value.norm() <= tails[0] + 1e-12, "{} vs tail {}", hat.values[0].value, tails[0]);
    let moments = sys.number_moments(2);
    assert!(moments[0].0.abs() <= moments[0].1 + 1e-12);
    let var: f64 = b.lambdas().iter().map(|l| { let q = (-nu * l).exp(); q / (1.0 - q).powi(2) }).sum::<f64>() * nu * nu;
    assert!((moments[1].0 - var).abs() <= moments[1].1 + 1e-10, "{} vs {var}", moments[1].0);
}

#[test]
fn quasi_free_diagonal_moments() {
    let q = 0.3;
    let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(q), c(0.1)]));
    let occ = q / (1.0 - q);
    let a = |m| Ladder { creation: false, mode: m };
    let ad = |m| Ladder { creation: true, mode: m };
    assert!((quasi_free_moment(&b, &[ad(0), a(0)]).unwrap().pairing - c(occ)).norm() < 1e-12);
    assert!((quasi_free_moment(&b, &[a(0), ad(0)]).unwrap().pairing - c(1.0 + occ)).norm() < 1e-12);
    assert!(quasi_free_moment(&b, &[a(0), a(0)]).unwrap().pairing.norm() < 1e-14);
    let four = quasi_free_moment(&b, &[ad(0), ad(0), a(0), a(0)]).unwrap();
    assert!((four.pairing - c(2.0 * occ * occ)).norm() < 1e-12);
    assert!(quasi_free_moment(&b, &[ad(0), a(0), ad(1)]).unwrap().pairing.norm() < 1e-14);
}

#[test]
fn quasi_free_routes_agree_for_random_hermitian_b() {
    let mut rng = rng_for(3, 0);
    for trial in 0..5 {
        let m = DMatrix::from_fn(2, 2, |_, _| complex_normal(&mut rng));
        let h = (&m * m.adjoint()).map(|z| z * 0.5);
        let norm = h.clone().svd(false, false).singular_values.max();
        let b = h.map(|z| z * (0.3 / norm));
        for len in [2usize, 4, 6] {
            let word: Vec<Ladder> = (0..len)
                .map(|i| Ladder { creation: (i + trial) % 2 == 0, mode: (i * 7 + trial) % 2 })
                .collect();
            let r = quasi_free_moment(&b, &word).unwrap();
            assert!((r.pairing - r.direct).norm() <= 1e-10 * (1.0 + r.pairing.norm()));
        }
    }
    let big = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.8)]));
    assert!(quasi_free_moment(&big, &[Ladder { creation: true, mode: 0 }, Ladder { creation: false, mode: 0 }]).is_err());
}

#[test]
fn bijection_identity_holds_and_detects_a_planted_violation() {
    let mut rng = rng_for(5, 0);
    for p in 1..=4 {
        let g = DMatrix::from_fn(p, p, |_, _| complex_normal(&mut rng));
        assert!(claim2_check(p, &g));
        let wrong = claim2_discrepancy(p, &g, &|_| 1.0);
        assert!(wrong > 1e-6, "p={p}: sign flip not detected ({wrong})");
    }
    let g = DMatrix::from_element(2, 2, c(1.0));
    assert!(!claim2_check(3, &g));
}

#[test]
fn single_particle_loop_gas_is_the_damped_heat_kernel() {
    let s = TorusSpec::new(1, 1.0, 0.7, 4).unwrap();
    let v = InteractionPotential::new(&s, PotentialKind::Constant { value: 1.0 }).unwrap();
    let (nu, x, xt) = (0.4, vec![0.2], vec![-0.1]);
    // A constant potential contributes the deterministic factor e^{−λ v/2}.
    let k = loop_gas_kernel(&s, &v, nu, 0.3, &[x.clone()], &[xt.clone()], 100, 8, 1).unwrap();
    let exact = (-nu * 0.7f64).exp() * heat_kernel_general(1.0, nu, &[0.3]).unwrap() * (-0.15f64).exp();
    assert!((k.value.re - exact).abs() < 1e-12 * exact);
    assert!(loop_gas_kernel(&s, &v, nu, 0.3, &[x], &[], 10, 8, 1).is_err());
}

#[test]
fn two_particle_loop_gas_matches_fock_vacuum_kernel() {
    let s = TorusSpec::new(1, 1.0, 1.0, 4).unwrap();
    let coeffs = vec![([0, 0, 0], 1.0), ([1, 0, 0], 0.5), ([-1, 0, 0], 0.5)];
    let v = InteractionPotential::new(&s, PotentialKind::Table { coeffs }).unwrap();
    let (nu, lambda) = (0.5, 0.5);
    let b = SpectralBasis::lowest(s, 5).unwrap();
    let ft = FockTruncation::with_dimension_cap(b, 2, 100).unwrap();
    let opts = FockOptions { nu, lambda, wick_ordered: false, self_interaction: SelfInteraction::Continuum, shift: None };
    let sys = FockSystem::build(ft, &v, opts).unwrap();
    let x = vec![vec![0.1], vec![-0.2]];
    let xt = vec![vec![0.0], vec![0.3]];
    let fock = sys.vacuum_kernel(&x, &xt);
    let direct = loop_gas_kernel(&s, &v, nu, lambda, &x, &xt, 20_000, 128, 2).unwrap();
    let swapped = loop_gas_kernel(&s, &v, nu, lambda, &x, &[xt[1].clone(), xt[0].clone()], 20_000, 128, 3).unwrap();
    let total = direct.value + swapped.value;
    let se = bosefield::stats::combined_sigma(direct.std_error, swapped.std_error);
    assert!((total - fock).norm() < 3.0 * se, "{total} vs {fock} (se {se})");
}

#[test]
fn loop_gas_kernel_is_permutation_invariant() {
    let s = TorusSpec::new(1, 1.0, 1.0, 4).unwrap();
    let v = InteractionPotential::new(&s, PotentialKind::Gaussian { amplitude: 1.0, width: 0.2 }).unwrap();
    let x = vec![vec![0.1], vec![-0.2]];
    let xt = vec![vec![0.0], vec![0.3]];
    let a = loop_gas_kernel(&s, &v, 0.5, 0.5, &x, &xt, 2000, 32, 4).unwrap();
    let rx = vec![x[1].clone(), x[0].clone()];
    let rxt = vec![xt[1].clone(), xt[0].clone()];
    let b = loop_gas_kernel(&s, &v, 0.5, 0.5, &rx, &rxt, 2000, 32, 5).unwrap();
    let se = bosefield::stats::combined_sigma(a.std_error, b.std_error);
    assert!((a.value - b.value).norm() < 3.0 * se);
}
