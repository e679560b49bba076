use causalnet::ols::{self, Matrix};
use causalnet::rng::Stream;
use proptest::prelude::*;

fn design_from(seed: u64, n: usize, p: usize) -> (Matrix, Vec<f64>) {
    let mut s = Stream::new(seed);
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| s.std_normal()).collect())
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            0.3 + cols
                .iter()
                .enumerate()
                .map(|(j, c)| (j as f64 - 1.0) * c[i])
                .sum::<f64>()
                + s.std_normal()
        })
        .collect();
    (Matrix::from_columns(&cols).unwrap(), y)
}

fn residuals(fit: &ols::OlsFit, d: &Matrix, y: &[f64]) -> Vec<f64> {
    let pred = ols::predict(fit, d).unwrap();
    y.iter().zip(&pred).map(|(a, b)| a - b).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn residuals_orthogonal_to_design(seed in any::<u64>(), n in 10usize..200, p in 1usize..6) {
        prop_assume!(n > p + 2);
        let (d, y) = design_from(seed, n, p);
        let fit = ols::fit(&d, &y, ols::DEFAULT_RIDGE).unwrap();
        prop_assert!(!fit.regularized);
        let r = residuals(&fit, &d, &y);
        prop_assert!(r.iter().sum::<f64>().abs() < 1e-8);
        for j in 0..p {
            prop_assert!(dot(&d.column(j), &r).abs() < 1e-8);
        }
        prop_assert!(fit.residual_mse >= 0.0);
        prop_assert!(fit.r_squared <= 1.0);
    }

    #[test]
    fn exact_linear_data_is_recovered(seed in any::<u64>(), n in 8usize..60) {
        let mut s = Stream::new(seed);
        let a: Vec<f64> = (0..n).map(|_| s.std_normal()).collect();
        let b: Vec<f64> = (0..n).map(|_| s.std_normal()).collect();
        let y: Vec<f64> = (0..n).map(|i| 2.0 - 3.0 * a[i] + 0.5 * b[i]).collect();
        let fit = ols::fit_columns(&[a, b], &y, ols::DEFAULT_RIDGE).unwrap();
        for (got, want) in fit.coefficients.iter().zip([2.0, -3.0, 0.5]) {
            prop_assert!((got - want).abs() < 1e-9);
        }
        prop_assert!(fit.residual_mse < 1e-20);
    }
}

#[test]
fn duplicated_column_falls_back_to_ridge() {
    let (d, y) = design_from(3, 50, 2);
    let c0 = d.column(0);
    let d2 = Matrix::from_columns(&[c0.clone(), c0, d.column(1)]).unwrap();
    let fit = ols::fit(&d2, &y, ols::DEFAULT_RIDGE).unwrap();
    assert!(fit.regularized);
    assert!(fit.coefficients.iter().all(|c| c.is_finite()));
    let r = residuals(&fit, &d2, &y);
    for j in 0..3 {
        assert!(dot(&d2.column(j), &r).abs() < 1e-6);
    }
}

#[test]
fn constant_column_is_rank_deficient() {
    let (d, y) = design_from(4, 30, 1);
    let d2 = Matrix::from_columns(&[d.column(0), vec![2.5; 30]]).unwrap();
    assert!(ols::fit(&d2, &y, ols::DEFAULT_RIDGE).unwrap().regularized);
}

#[test]
fn uncorrelated_column_leaves_coefficients() {
    let n = 40;
    let (d, y) = design_from(5, n, 2);
    let base = ols::fit(&d, &y, ols::DEFAULT_RIDGE).unwrap();
    // Project a random vector off the span of {1, design, y}.
    let mut s = Stream::new(6);
    let mut extra: Vec<f64> = (0..n).map(|_| s.std_normal()).collect();
    let basis = [vec![1.0; n], d.column(0), d.column(1), y.clone()];
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for b in basis {
        let mut v = b;
        for q in &ortho {
            let c = dot(&v, q);
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
        }
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        ortho.push(v);
    }
    for q in &ortho {
        let c = dot(&extra, q);
        extra.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
    }
    let wide = Matrix::from_columns(&[d.column(0), d.column(1), extra]).unwrap();
    let fit = ols::fit(&wide, &y, ols::DEFAULT_RIDGE).unwrap();
    for j in 0..3 {
        assert!((fit.coefficients[j] - base.coefficients[j]).abs() < 1e-8);
    }
    assert!(fit.coefficients[3].abs() < 1e-8);
}

#[test]
fn refit_returns_treatment_coefficient() {
    let n = 200;
    let mut s = Stream::new(8);
    let a: Vec<f64> = (0..n).map(|_| s.std_normal()).collect();
    let t: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let y: Vec<f64> = (0..n).map(|i| 0.7 * t[i] + a[i]).collect();
    let acts = Matrix::from_columns(&[a]).unwrap();
    let (ate, mse) = ols::ate_from_refit(&acts, &t, &y).unwrap();
    assert!((ate - 0.7).abs() < 1e-10);
    assert!(mse < 1e-20);
}

#[test]
fn rejects_bad_input() {
    let d = Matrix::zeros(3, 1);
    assert!(ols::fit(&d, &[1.0, 2.0], 1e-8).is_err());
    assert!(ols::fit(&d, &[1.0, f64::NAN, 2.0], 1e-8).is_err());
    assert!(ols::fit(&Matrix::zeros(1, 1), &[1.0], 1e-8).is_err());
}
