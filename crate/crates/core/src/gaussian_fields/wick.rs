//! Gaussian and Wick combinatorics: pairings, Wick-ordered monomials,
//! characteristic-function moments and permanents.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{domain, Result};

/// All sets of disjoint unordered pairs of {0, …, n−1}, including the empty one.
pub fn partial_pairings(n: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(rest: &[usize], acc: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        match rest.split_first() {
            None => out.push(acc.clone()),
            Some((&first, tail)) => {
                rec(tail, acc, out);
                for (j, &partner) in tail.iter().enumerate() {
                    let mut remaining = tail.to_vec();
                    remaining.remove(j);
                    acc.push((first, partner));
                    rec(&remaining, acc, out);
                    acc.pop();
                }
            }
        }
    }
    let items: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    rec(&items, &mut Vec::new(), &mut out);
    out
}

/// Pairings that cover every element.
pub fn complete_pairings(n: usize) -> Vec<Vec<(usize, usize)>> {
    partial_pairings(n).into_iter().filter(|p| 2 * p.len() == n).collect()
}

/// Evaluator for the Wick-ordered monomial :u_{i_1} … u_{i_n}: with respect to a covariance.
#[derive(Debug, Clone)]
pub struct WickMonomial {
    cov: DMatrix<Complex64>,
    indices: Vec<usize>,
    pairings: Vec<Vec<(usize, usize)>>,
}

impl WickMonomial {
    /// Σ_Π Π_{pairs} (−C_{ab}) Π_{unpaired} u_a.
    pub fn evaluate(&self, u: &[Complex64]) -> Complex64 {
        let n = self.indices.len();
        let mut total = Complex64::new(0.0, 0.0);
        let mut paired = vec![false; n];
        for pairing in &self.pairings {
            paired.iter_mut().for_each(|p| *p = false);
            let mut term = Complex64::new(1.0, 0.0);
            for &(a, b) in pairing {
                paired[a] = true;
                paired[b] = true;
                term *= -self.cov[(self.indices[a], self.indices[b])];
            }
            for j in 0..n {
                if !paired[j] {
                    term *= u[self.indices[j]];
                }
            }
            total += term;
        }
        total
    }

    pub fn degree(&self) -> usize {
        self.indices.len()
    }
}

/// Builds the evaluator of :u_{i_1} … u_{i_n}: for covariance `cov`.
pub fn wick_order_moment(cov: &DMatrix<Complex64>, indices: &[usize]) -> Result<WickMonomial> {
    if !cov.is_square() {
        return domain("covariance must be square");
    }
    if indices.iter().any(|&i| i >= cov.nrows()) {
        return domain("monomial index out of range");
    }
    Ok(WickMonomial { cov: cov.clone(), indices: indices.to_vec(), pairings: partial_pairings(indices.len()) })
}

/// E[Π_i ⟨f_i, u⟩ e^{i⟨f, u⟩}] for u ~ N(0, C), in closed form.
pub fn gaussian_characteristic_moment(cov: &DMatrix<f64>, f_list: &[DVector<f64>], f: &DVector<f64>) -> Complex64 {
    let cf = cov * f;
    let base = (-0.5 * f.dot(&cf)).exp();
    let lin: Vec<f64> = f_list.iter().map(|fi| fi.dot(&cf)).collect();
    let gram: Vec<Vec<f64>> = f_list.iter().map(|fi| f_list.iter().map(|fj| fi.dot(&(cov * fj))).collect()).collect();
    let k = f_list.len();
    let i = Complex64::new(0.0, 1.0);
    let mut total = Complex64::new(0.0, 0.0);
    for pairing in partial_pairings(k) {
        let mut paired = vec![false; k];
        let mut term = Complex64::new(1.0, 0.0);
        for &(a, b) in &pairing {
            paired[a] = true;
            paired[b] = true;
            term *= gram[a][b];
        }
        for j in 0..k {
            if !paired[j] {
                term *= i * lin[j];
            }
        }
        total += term;
    }
    total * base
}

/// Permanent by Ryser's formula.
pub fn permanent(m: &DMatrix<Complex64>) -> Complex64 {
    let n = m.nrows();
    assert!(m.is_square());
    if n == 0 {
        return Complex64::new(1.0, 0.0);
    }
    let mut total = Complex64::new(0.0, 0.0);
    let mut row_sums = vec![Complex64::new(0.0, 0.0); n];
    let mut prev_gray = 0usize;
    for s in 1usize..(1 << n) {
        let gray = s ^ (s >> 1);
        let changed = (gray ^ prev_gray).trailing_zeros() as usize;
        let added = gray & (1 << changed) != 0;
        for (r, rs) in row_sums.iter_mut().enumerate() {
            if added {
                *rs += m[(r, changed)];
            } else {
                *rs -= m[(r, changed)];
            }
        }
        prev_gray = gray;
        let prod: Complex64 = row_sums.iter().product();
        let sign = if (n - gray.count_ones() as usize) % 2 == 0 { 1.0 } else { -1.0 };
        total += prod * sign;
    }
    total
}

/// Σ_{π ∈ S_p} Π_i ⟨f_i, C g_{π(i)}⟩.
pub fn complex_wick_moment(cov: &DMatrix<Complex64>, f_list: &[DVector<Complex64>], g_list: &[DVector<Complex64>]) -> Result<Complex64> {
    if f_list.len() != g_list.len() {
        return domain("f and g lists must have equal length");
    }
    let p = f_list.len();
    let m = DMatrix::from_fn(p, p, |i, j| f_list[i].dotc(&(cov * &g_list[j])));
    Ok(permanent(&m))
}

/// T_p(x) = Σ_{k,l=0}^p C(p,k) C(p,l) (−1)^{k+l} x^{(k−l)²}.
pub fn t_p_polynomial(p: usize, x: f64) -> Result<f64> {
    if p < 1 {
        return domain("T_p needs p >= 1");
    }
    let binom = |n: usize, k: usize| -> f64 { (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64) };
    let mut s = 0.0;
    for k in 0..=p {
        for l in 0..=p {
            let sign = if (k + l) % 2 == 0 { 1.0 } else { -1.0 };
            let e = (k as i64 - l as i64).pow(2) as i32;
            s += sign * binom(p, k) * binom(p, l) * x.powi(e);
        }
    }
    Ok(s)
}
