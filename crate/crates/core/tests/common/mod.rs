#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use qtwas::quantreg::{check_loss, Design};
use rand::Rng;
use rand_distr::StandardNormal;

/// Smallest check loss over all basic solutions: every `d`-subset of rows
/// whose design block is invertible defines a candidate fit through those
/// rows. The LP optimum is attained at one of them.
pub fn vertex_enumeration_optimum(x: &DMatrix<f64>, y: &[f64], tau: f64) -> f64 {
    let (n, d) = x.shape();
    let mut best = f64::INFINITY;
    let mut subset: Vec<usize> = (0..d).collect();
    loop {
        let a = DMatrix::from_fn(d, d, |r, c| x[(subset[r], c)]);
        let b = DVector::from_iterator(d, subset.iter().map(|&i| y[i]));
        if let Some(lu) = Some(a.lu()).filter(|lu| lu.determinant().abs() > 1e-10) {
            if let Some(coef) = lu.solve(&b) {
                let fitted = x * &coef;
                let obj: f64 = (0..n).map(|i| check_loss(y[i] - fitted[i], tau)).sum();
                best = best.min(obj);
            }
        }
        // next combination in lexicographic order
        let mut k = d;
        while k > 0 && subset[k - 1] == n - d + k - 1 {
            k -= 1;
        }
        if k == 0 {
            return best;
        }
        subset[k - 1] += 1;
        for j in k..d {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

/// Random design `[1 | C]` with `d` columns, mixing Gaussian and dosage-like
/// columns, and a heavy-ish tailed response.
pub fn random_instance(rng: &mut impl Rng, n: usize, d: usize) -> (Design, Vec<f64>) {
    let cov = DMatrix::from_fn(n, d - 1, |_, j| {
        if j % 2 == 0 {
            rng.sample::<f64, _>(StandardNormal)
        } else {
            rng.random_range(0..3) as f64
        }
    });
    let design = Design::new(&cov, &[]).unwrap();
    let y = (0..n)
        .map(|i| {
            let lin: f64 = (0..d - 1).map(|j| 0.5 * cov[(i, j)]).sum();
            let e: f64 = rng.sample(StandardNormal);
            lin + e * (1.0 + 0.5 * e.abs())
        })
        .collect();
    (design, y)
}

/// Kolmogorov–Smirnov distance between a sample and Unif(0,1).
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}
