use std::f64::consts::PI;

use bosefield::gaussian_fields::{
    complete_pairings, complex_wick_moment, gaussian_characteristic_moment, partial_pairings, permanent,
    regularized_delta, regularized_delta_poisson, regularized_potential, sample_phi_on, sample_sigma, sample_xi,
    sample_xi_unregularized, t_p_polynomial, wick_order_moment, CutoffProfile, InteractionPotential, PotentialKind,
    RegularizationSpec,
};
use bosefield::stats::{complex_normal, normal, par_samples, MCEstimate};
use bosefield::torus_spectral::{SpectralBasis, TorusSpec};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn spec(d: usize, l: f64) -> TorusSpec {
    TorusSpec::new(d, l, 1.0, 4).unwrap()
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let e = MCEstimate::from_real_samples(xs, 0);
    (e.value.re, e.std_error)
}

#[test]
fn profiles_have_positive_inverse_transforms() {
    for prof in [CutoffProfile::CubicSpline, CutoffProfile::SmoothBumpSquared] {
        for j in 0..200 {
            assert!(prof.inverse_transform(0.13 * j as f64) >= -1e-14);
        }
    }
}

#[test]
fn inverse_transform_matches_quadrature_of_profile() {
    for prof in [CutoffProfile::CubicSpline, CutoffProfile::SmoothBumpSquared] {
        for &x in &[0.0, 0.4, 1.3, 3.0] {
            let n = 4000;
            let h = 2.0 / n as f64;
            let q: f64 = (0..n).map(|j| {
                let p = -1.0 + h * (j as f64 + 0.5);
                prof.value(p) * (2.0 * PI * p * x).cos() * h
            }).sum();
            assert!((q - prof.inverse_transform(x)).abs() < 1e-6, "{prof:?} x={x}: {q}");
        }
    }
}

#[test]
fn regularized_delta_has_unit_mass_per_period() {
    let reg = RegularizationSpec::with_eta(0.1).unwrap();
    let nu = 0.7;
    let n = 2000;
    let h = nu / n as f64;
    let mass: f64 = (0..n).map(|j| regularized_delta(&reg, nu, h * j as f64).unwrap() * h).sum();
    assert!((mass - 1.0).abs() < 1e-12);
}

#[test]
fn regularized_delta_is_flat_once_eta_exceeds_one() {
    let reg = RegularizationSpec::with_eta(1.5).unwrap();
    for &tau in &[0.0, 0.1, 0.33] {
        assert!((regularized_delta(&reg, 0.5, tau).unwrap() - 2.0).abs() < 1e-14);
    }
}

#[test]
fn regularized_delta_fourier_and_poisson_routes_agree() {
    for temporal in [CutoffProfile::CubicSpline, CutoffProfile::SmoothBumpSquared] {
        let reg = RegularizationSpec::new(0.2, CutoffProfile::CubicSpline, temporal).unwrap();
        for &nu in &[0.3, 1.0] {
            for &tau in &[0.0, 0.05, 0.17, 0.5] {
                let a = regularized_delta(&reg, nu, tau).unwrap();
                let b = regularized_delta_poisson(&reg, nu, tau).unwrap();
                assert!((a - b).abs() < 1e-6 * a.abs().max(1.0), "{temporal:?} nu={nu} tau={tau}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn regularized_delta_rejects_nonpositive_nu() {
    let reg = RegularizationSpec::with_eta(0.1).unwrap();
    assert!(regularized_delta(&reg, 0.0, 0.1).is_err());
    assert!(RegularizationSpec::with_eta(0.0).is_err());
}

#[test]
fn constant_potential_is_unchanged_by_regularization() {
    let s = spec(2, 1.7);
    let v = InteractionPotential::new(&s, PotentialKind::Constant { value: 0.8 }).unwrap();
    let reg = RegularizationSpec::with_eta(0.3).unwrap();
    let ve = regularized_potential(&v, &reg).unwrap();
    for x in [[0.0, 0.0], [0.3, -0.6], [0.8, 0.1]] {
        assert!((ve.value(&x) - 0.8).abs() < 1e-13);
    }
}

fn fourier_by_quadrature(v: &InteractionPotential, l: f64, p: i64) -> f64 {
    let n = 4000;
    let h = l / n as f64;
    (0..n).map(|j| {
        let x = -0.5 * l + h * (j as f64 + 0.5);
        v.value(&[x]) * (2.0 * PI * p as f64 * x / l).cos() * h
    }).sum()
}

#[test]
fn closed_form_fourier_coefficients_match_quadrature() {
    let l = 2.0;
    let s = spec(1, l);
    for kind in [
        PotentialKind::Gaussian { amplitude: 1.3, width: 0.3 },
        PotentialKind::Triangle { amplitude: 0.7, width: 0.45 },
        PotentialKind::Triangle { amplitude: 1.0, width: 2.6 },
    ] {
        let v = InteractionPotential::new(&s, kind.clone()).unwrap();
        for p in 0..5 {
            let q = fourier_by_quadrature(&v, l, p);
            assert!((q - v.fourier(&[p, 0, 0])).abs() < 1e-6, "{kind:?} p={p}: {q} vs {}", v.fourier(&[p, 0, 0]));
            assert!(v.fourier(&[p, 0, 0]) >= 0.0);
        }
    }
}

#[test]
fn sup_norm_is_attained_at_the_origin() {
    let s = spec(2, 1.0);
    let v = InteractionPotential::new(&s, PotentialKind::Gaussian { amplitude: 2.0, width: 0.2 }).unwrap();
    let sup = v.sup_norm();
    for j in 0..100 {
        let x = [(j as f64 * 0.37).sin() * 0.5, (j as f64 * 0.61).cos() * 0.5];
        assert!(v.value(&x).abs() <= sup + 1e-14);
    }
    let reg = RegularizationSpec::with_eta(0.1).unwrap();
    let ve = regularized_potential(&v, &reg).unwrap();
    assert!(ve.sup_norm() <= sup + 1e-12);
}

#[test]
fn regularized_potential_tends_to_bare_potential() {
    let s = spec(1, 1.0);
    let v = InteractionPotential::new(&s, PotentialKind::Gaussian { amplitude: 1.0, width: 0.1 }).unwrap();
    let errs: Vec<f64> = [0.2, 0.05, 0.01]
        .iter()
        .map(|&eta| {
            let ve = regularized_potential(&v, &RegularizationSpec::with_eta(eta).unwrap()).unwrap();
            (ve.value(&[0.07]) - v.value(&[0.07])).abs()
        })
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2] && errs[2] < 1e-3, "{errs:?}");
}

#[test]
fn negative_fourier_coefficient_is_rejected() {
    let s = spec(1, 1.0);
    let bad = PotentialKind::Table { coeffs: vec![([0, 0, 0], 1.0), ([1, 0, 0], -0.2), ([-1, 0, 0], -0.2)] };
    assert!(InteractionPotential::new(&s, bad).is_err());
    let unpaired = PotentialKind::Table { coeffs: vec![([1, 0, 0], 0.2)] };
    assert!(InteractionPotential::new(&s, unpaired).is_err());
    assert!(InteractionPotential::new(&s, PotentialKind::Constant { value: -1.0 }).is_err());
}

#[test]
fn free_field_two_point_function() {
    let s = TorusSpec::new(1, 1.5, 0.6, 4).unwrap();
    let basis = SpectralBasis::lowest(s, 5).unwrap();
    let (x, y) = ([0.2], [-0.4]);
    let exact: Complex64 = basis
        .modes
        .iter()
        .map(|m| m.plane_wave(&s, &x) * m.plane_wave(&s, &y).conj() / m.lambda)
        .sum();
    let xs: Vec<Complex64> = par_samples(60_000, 3, |rng, _| {
        let phi = sample_phi_on(&basis, rng);
        phi.value(&x) * phi.value(&y).conj()
    });
    let e = MCEstimate::from_samples(&xs, 3);
    assert!(e.agrees_with(exact, 3.0, 0.0), "{} vs {exact} (se {})", e.value, e.std_error);
    let xx: Vec<Complex64> = par_samples(20_000, 4, |rng, _| {
        let phi = sample_phi_on(&basis, rng);
        phi.value(&x) * phi.value(&y)
    });
    let e = MCEstimate::from_samples(&xx, 4);
    assert!(e.agrees_with(c(0.0), 3.0, 0.0), "E φφ = {}", e.value);
}

#[test]
fn sigma_is_real_with_the_regularized_variance() {
    let s = spec(1, 1.0);
    let v = InteractionPotential::new(&s, PotentialKind::Gaussian { amplitude: 1.0, width: 0.15 }).unwrap();
    let reg = RegularizationSpec::with_eta(0.25).unwrap();
    let ps = reg.spatial_support(1);
    let (nu, lambda) = (0.4, 0.7);
    let (tau, x) = (0.13, [0.31]);
    let delta0: f64 = (-3i64..=3).map(|k| reg.temporal.value(0.25 * k as f64)).sum::<f64>() / nu;
    let v0: f64 = (-3i64..=3).map(|p| v.fourier(&[p, 0, 0]) * reg.spatial.value(0.25 * p as f64)).sum();
    let exact = lambda / nu * delta0 * v0;
    let draws: Vec<(f64, f64)> = par_samples(40_000, 5, |rng, _| {
        let sig = sample_sigma(&s, &reg, &v, nu, lambda, &ps, rng).unwrap();
        let z = sig.value_complex(tau, &x);
        (z.re * z.re, z.im.abs())
    });
    let sq: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let (m, se) = mean_se(&sq);
    assert!((m - exact).abs() < 3.0 * se, "{m} vs {exact} (se {se})");
    assert!(draws.iter().all(|d| d.1 < 1e-10));
}

#[test]
fn sigma_time_average_and_integral_match_quadrature() {
    let s = spec(1, 1.3);
    let v = InteractionPotential::new(&s, PotentialKind::Triangle { amplitude: 1.0, width: 0.4 }).unwrap();
    let reg = RegularizationSpec::with_eta(0.2).unwrap();
    let ps = reg.spatial_support(1);
    let nu = 0.5;
    let mut rng = bosefield::stats::rng_for(1, 0);
    let sig = sample_sigma(&s, &reg, &v, nu, 1.0, &ps, &mut rng).unwrap();
    let xi = sig.time_average();
    let n = 64;
    for &x in &[0.0, 0.21, -0.5] {
        let q: f64 = (0..n).map(|j| sig.value(nu * j as f64 / n as f64, &[x])).sum::<f64>() / n as f64;
        assert!((q - xi.value(&[x])).abs() < 1e-12);
    }
    let mut total = 0.0;
    for j in 0..n {
        for i in 0..n {
            total += sig.value(nu * j as f64 / n as f64, &[-0.65 + 1.3 * i as f64 / n as f64]);
        }
    }
    total *= nu * 1.3 / (n * n) as f64;
    assert!((total - sig.space_time_integral()).abs() < 1e-10);
}

#[test]
fn xi_covariance_is_the_regularized_potential() {
    let s = spec(1, 1.0);
    let v = InteractionPotential::new(&s, PotentialKind::Gaussian { amplitude: 1.0, width: 0.2 }).unwrap();
    let reg = RegularizationSpec::with_eta(0.2).unwrap();
    let ve = regularized_potential(&v, &reg).unwrap();
    let ps = reg.spatial_support(1);
    let x = 0.3;
    let prods: Vec<f64> = par_samples(50_000, 6, |rng, _| {
        let xi = sample_xi(&s, &reg, &v, &ps, rng).unwrap();
        xi.value(&[x]) * xi.value(&[0.0])
    });
    let (m, se) = mean_se(&prods);
    assert!((m - ve.value(&[x])).abs() < 3.0 * se, "{m} vs {}", ve.value(&[x]));
}

#[test]
fn hubbard_stratonovich_identity() {
    // E exp(i Σ_j ξ(x_j)) = exp(−½ Σ_{j,l} v(x_j − x_l)).
    let s = spec(1, 1.0);
    let coeffs = vec![([0, 0, 0], 0.5), ([1, 0, 0], 0.3), ([-1, 0, 0], 0.3), ([2, 0, 0], 0.1), ([-2, 0, 0], 0.1)];
    let v = InteractionPotential::new(&s, PotentialKind::Table { coeffs }).unwrap();
    let ps: Vec<[i64; 3]> = (-2..=2).map(|p| [p, 0, 0]).collect();
    let pts = [0.1, 0.45];
    let quad: f64 = pts.iter().flat_map(|a| pts.iter().map(move |b| (a, b))).map(|(a, b)| v.value(&[a - b])).sum();
    let exact = (-0.5 * quad).exp();
    let xs: Vec<Complex64> = par_samples(50_000, 7, |rng, _| {
        let xi = sample_xi_unregularized(&s, &v, &ps, rng).unwrap();
        Complex64::new(0.0, pts.iter().map(|&p| xi.value(&[p])).sum::<f64>()).exp()
    });
    let e = MCEstimate::from_samples(&xs, 7);
    assert!(e.agrees_with(c(exact), 3.0, 0.0), "{} vs {exact} (se {})", e.value, e.std_error);
}

fn double_factorial(n: usize) -> usize {
    (1..=n).rev().step_by(2).product()
}

#[test]
fn pairing_counts_follow_closed_forms() {
    let telephone = [1, 1, 2, 4, 10, 26, 76, 232];
    for (n, &t) in telephone.iter().enumerate() {
        assert_eq!(partial_pairings(n).len(), t);
    }
    for m in 1..=4 {
        assert_eq!(complete_pairings(2 * m).len(), double_factorial(2 * m - 1));
    }
    assert!(complete_pairings(5).is_empty());
}

#[test]
fn pairings_are_disjoint_and_distinct() {
    let all = partial_pairings(6);
    let mut seen = std::collections::HashSet::new();
    for pairing in &all {
        let mut used = [false; 6];
        let mut key: Vec<(usize, usize)> = pairing.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        for &(a, b) in pairing {
            assert!(a != b && !used[a] && !used[b]);
            used[a] = true;
            used[b] = true;
        }
        key.sort();
        assert!(seen.insert(key));
    }
}

fn random_cov(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = bosefield::stats::rng_for(seed, 0);
    let a = DMatrix::from_fn(n, n, |_, _| normal(&mut rng));
    let cov = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1;
    let chol = cov.clone().cholesky().unwrap().l();
    (cov, chol)
}

#[test]
fn wick_ordered_quadratic_is_centered_product() {
    let (cov, _) = random_cov(3, 1);
    let cc = cov.map(c);
    let w = wick_order_moment(&cc, &[0, 2]).unwrap();
    let u = [c(0.3), c(-1.1), c(0.7)];
    let expect = u[0] * u[2] - cc[(0, 2)];
    assert!((w.evaluate(&u) - expect).norm() < 1e-14);
    assert!(wick_order_moment(&cc, &[0, 5]).is_err());
}

#[test]
fn wick_ordered_monomials_have_zero_mean() {
    let (cov, chol) = random_cov(3, 2);
    let cc = cov.map(c);
    for idx in [vec![0, 1], vec![0, 0, 1, 2], vec![1, 1, 1, 1]] {
        let w = wick_order_moment(&cc, &idx).unwrap();
        let xs: Vec<Complex64> = par_samples(100_000, 8, |rng, _| {
            let z = DVector::from_fn(3, |_, _| normal(rng));
            let u: Vec<Complex64> = (&chol * z).iter().map(|&x| c(x)).collect();
            w.evaluate(&u)
        });
        let e = MCEstimate::from_samples(&xs, 8);
        assert!(e.agrees_with(c(0.0), 3.0, 0.0), "{idx:?}: {} (se {})", e.value, e.std_error);
    }
}

#[test]
fn characteristic_moment_matches_monte_carlo() {
    let (cov, chol) = random_cov(3, 3);
    let f = DVector::from_vec(vec![0.4, -0.2, 0.3]);
    let fl = vec![DVector::from_vec(vec![1.0, 0.0, 0.5]), DVector::from_vec(vec![0.0, 1.0, -1.0])];
    let exact = gaussian_characteristic_moment(&cov, &fl, &f);
    let xs: Vec<Complex64> = par_samples(100_000, 9, |rng, _| {
        let u = &chol * DVector::from_fn(3, |_, _| normal(rng));
        let phase = Complex64::new(0.0, f.dot(&u)).exp();
        fl.iter().map(|g| g.dot(&u)).product::<f64>() * phase
    });
    let e = MCEstimate::from_samples(&xs, 9);
    assert!(e.agrees_with(exact, 3.0, 0.0), "{} vs {exact} (se {})", e.value, e.std_error);
    let plain = gaussian_characteristic_moment(&cov, &[], &f);
    assert!((plain - c((-0.5 * f.dot(&(&cov * &f))).exp())).norm() < 1e-15);
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn permanent_matches_permutation_sum() {
    let mut rng = bosefield::stats::rng_for(4, 0);
    for n in 1..=5 {
        let m = DMatrix::from_fn(n, n, |_, _| complex_normal(&mut rng));
        let brute: Complex64 = permutations(n).iter().map(|p| (0..n).map(|i| m[(i, p[i])]).product::<Complex64>()).sum();
        assert!((permanent(&m) - brute).norm() < 1e-12 * brute.norm().max(1.0));
    }
}

#[test]
fn complex_wick_moment_matches_monte_carlo() {
    let n = 3;
    let mut rng = bosefield::stats::rng_for(5, 0);
    let a = DMatrix::from_fn(n, n, |_, _| complex_normal(&mut rng) * 0.7);
    let cov = &a * a.adjoint();
    let f = vec![
        DVector::from_fn(n, |_, _| complex_normal(&mut rng)),
        DVector::from_fn(n, |_, _| complex_normal(&mut rng)),
    ];
    let g = vec![
        DVector::from_fn(n, |_, _| complex_normal(&mut rng)),
        DVector::from_fn(n, |_, _| complex_normal(&mut rng)),
    ];
    let exact = complex_wick_moment(&cov, &f, &g).unwrap();
    let xs: Vec<Complex64> = par_samples(200_000, 10, |rng, _| {
        let u = &a * DVector::from_fn(n, |_, _| complex_normal(rng));
        f.iter().map(|fi| fi.dotc(&u)).product::<Complex64>() * g.iter().map(|gi| gi.dotc(&u).conj()).product::<Complex64>()
    });
    let e = MCEstimate::from_samples(&xs, 10);
    assert!(e.agrees_with(exact, 3.0, 0.0), "{} vs {exact} (se {})", e.value, e.std_error);
    assert!(complex_wick_moment(&cov, &f, &g[..1]).is_err());
}

#[test]
fn t_p_polynomial_low_orders() {
    for &x in &[0.0, 0.3, 0.9] {
        assert!((t_p_polynomial(1, x).unwrap() - 2.0 * (1.0 - x)).abs() < 1e-14);
        let two = 6.0 - 8.0 * x + 2.0 * x.powi(4);
        assert!((t_p_polynomial(2, x).unwrap() - two).abs() < 1e-13);
    }
    for p in 1..=6 {
        assert!(t_p_polynomial(p, 1.0).unwrap().abs() < 1e-9);
        let at_zero: f64 = (0..=p).map(|k| binom(p, k).powi(2)).sum();
        assert!((t_p_polynomial(p, 0.0).unwrap() - at_zero).abs() < 1e-9);
    }
    assert!(t_p_polynomial(0, 0.5).is_err());
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
