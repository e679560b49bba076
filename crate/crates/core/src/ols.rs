//! Ordinary least squares via column-pivoted Householder QR.
//!
//! An intercept column is always prepended, so `coefficients[0]` is the
//! intercept and `coefficients[j]` belongs to design column `j - 1`. When the
//! pivoted factorization reveals a rank deficiency the system is re-solved as
//! a ridge problem (augmented rows `sqrt(eps)·I`) and the fit is flagged.

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Relative threshold on |R_kk| / |R_00| below which a pivot counts as zero.
const RANK_TOL: f64 = 1e-10;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds an n×k matrix from k columns of length n.
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let n = cols.first().map_or(0, Vec::len);
        if cols.iter().any(|c| c.len() != n) {
            return Err(Error::Shape("columns differ in length".into()));
        }
        let mut m = Matrix::zeros(n, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                m.data[i * cols.len() + j] = *v;
            }
        }
        Ok(m)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub residual_mse: f64,
    pub r_squared: f64,
    pub regularized: bool,
    /// Observations used.
    #[serde(skip)]
    pub n: usize,
    /// Design columns, intercept excluded.
    #[serde(skip)]
    pub p: usize,
}

pub fn fit(design: &Matrix, target: &[f64], ridge_eps: f64) -> Result<OlsFit> {
    let n = design.rows;
    let p = design.cols;
    if target.len() != n {
        return Err(Error::Shape(format!(
            "design has {n} rows, target has {}",
            target.len()
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientData { need: 2, got: n });
    }
    if design.data.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in OLS input".into()));
    }
    let k = p + 1;
    // Column-major copy with the intercept in front.
    let mut a = vec![0.0; n * k];
    a[..n].fill(1.0);
    for i in 0..n {
        for j in 0..p {
            a[(j + 1) * n + i] = design.get(i, j);
        }
    }
    let (mut beta, rank) = lstsq_colmajor(a.clone(), n, k, target.to_vec());
    let regularized = rank < k;
    if regularized {
        let s = ridge_eps.max(0.0).sqrt();
        let m = n + k;
        let mut aug = vec![0.0; m * k];
        for j in 0..k {
            aug[j * m..j * m + n].copy_from_slice(&a[j * n..(j + 1) * n]);
            aug[j * m + n + j] = s;
        }
        let mut y = target.to_vec();
        y.resize(m, 0.0);
        beta = lstsq_colmajor(aug, m, k, y).0;
    }
    let mut fit = OlsFit {
        coefficients: beta,
        residual_mse: 0.0,
        r_squared: 0.0,
        regularized,
        n,
        p,
    };
    let pred = predict(&fit, design)?;
    let ss_res: f64 = pred
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let my = target.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = target.iter().map(|v| (v - my) * (v - my)).sum();
    fit.residual_mse = ss_res / n as f64;
    fit.r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        0.0
    };
    Ok(fit)
}

/// Convenience wrapper taking design columns.
pub fn fit_columns(cols: &[Vec<f64>], target: &[f64], ridge_eps: f64) -> Result<OlsFit> {
    if cols.is_empty() {
        return fit(&Matrix::zeros(target.len(), 0), target, ridge_eps);
    }
    fit(&Matrix::from_columns(cols)?, target, ridge_eps)
}

pub fn predict(fit: &OlsFit, design: &Matrix) -> Result<Vec<f64>> {
    if design.cols + 1 != fit.coefficients.len() {
        return Err(Error::Shape(format!(
            "fit has {} slopes, design has {} columns",
            fit.coefficients.len() - 1,
            design.cols
        )));
    }
    let b = &fit.coefficients;
    Ok((0..design.rows)
        .map(|i| {
            b[0] + design
                .row(i)
                .iter()
                .zip(&b[1..])
                .map(|(x, c)| x * c)
                .sum::<f64>()
        })
        .collect())
}

/// Refits y on `[activations | t]`; returns the t coefficient and the
/// in-sample residual MSE.
pub fn ate_from_refit(activations: &Matrix, t: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = activations.rows;
    let k = activations.cols;
    if t.len() != n || y.len() != n {
        return Err(Error::Shape("activations, t and y differ in length".into()));
    }
    if n <= k + 2 {
        return Err(Error::InsufficientData {
            need: k + 3,
            got: n,
        });
    }
    let mut d = Matrix::zeros(n, k + 1);
    for i in 0..n {
        d.data[i * (k + 1)..i * (k + 1) + k].copy_from_slice(activations.row(i));
        d.data[i * (k + 1) + k] = t[i];
    }
    let f = fit(&d, y, DEFAULT_RIDGE)?;
    Ok((f.coefficients[k + 1], f.residual_mse))
}

/// Least squares on a column-major m×k matrix. Returns the solution and the
/// numerical rank; coefficients past the rank are set to zero.
fn lstsq_colmajor(mut a: Vec<f64>, m: usize, k: usize, mut y: Vec<f64>) -> (Vec<f64>, usize) {
    let mut perm: Vec<usize> = (0..k).collect();
    let steps = m.min(k);
    let mut diag = vec![0.0; steps];
    let mut r00 = 0.0;
    let mut rank = steps;
    for s in 0..steps {
        // Pivot: largest remaining column norm.
        let mut best = s;
        let mut best_norm = -1.0;
        for j in s..k {
            let col = &a[j * m + s..(j + 1) * m];
            let nrm = col.iter().map(|v| v * v).sum::<f64>();
            if nrm > best_norm {
                best_norm = nrm;
                best = j;
            }
        }
        if best != s {
            for i in 0..m {
                a.swap(s * m + i, best * m + i);
            }
            perm.swap(s, best);
        }
        let norm = best_norm.sqrt();
        if s == 0 {
            r00 = norm;
        }
        if norm <= RANK_TOL * r00 || norm == 0.0 {
            rank = s;
            break;
        }
        let x0 = a[s * m + s];
        let alpha = if x0 > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[s * m + s..(s + 1) * m].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        diag[s] = alpha;
        if vnorm2 > 0.0 {
            for j in s + 1..k {
                let col = &mut a[j * m + s..(j + 1) * m];
                let d: f64 = col.iter().zip(&v).map(|(c, w)| c * w).sum();
                let f = 2.0 * d / vnorm2;
                for (c, w) in col.iter_mut().zip(&v) {
                    *c -= f * w;
                }
            }
            let ys = &mut y[s..m];
            let d: f64 = ys.iter().zip(&v).map(|(c, w)| c * w).sum();
            let f = 2.0 * d / vnorm2;
            for (c, w) in ys.iter_mut().zip(&v) {
                *c -= f * w;
            }
        }
        a[s * m + s] = alpha;
    }
    let mut z = vec![0.0; k];
    for s in (0..rank).rev() {
        let mut acc = y[s];
        for j in s + 1..rank {
            acc -= a[j * m + s] * z[j];
        }
        z[s] = acc / diag[s];
    }
    let mut beta = vec![0.0; k];
    for (s, &j) in perm.iter().enumerate() {
        beta[j] = z[s];
    }
    (beta, rank)
}

impl OlsFit {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::from_columns(&[v.to_vec()]).unwrap()
    }

    #[test]
    fn exact_line() {
        let f = fit(&col(&[1.0, 2.0, 3.0]), &[2.0, 4.0, 6.0], DEFAULT_RIDGE).unwrap();
        assert!(f.coefficients[0].abs() < 1e-12);
        assert!((f.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(f.residual_mse < 1e-24);
        assert!(!f.regularized);
        let p = predict(&f, &col(&[5.0])).unwrap();
        assert!((p[0] - 10.0).abs() < 1e-10);
    }

    #[test]
    fn constant_target() {
        let f = fit(&col(&[0.3, -1.0, 2.0, 5.0]), &[4.0; 4], DEFAULT_RIDGE).unwrap();
        assert!((f.coefficients[0] - 4.0).abs() < 1e-12);
        assert!(f.coefficients[1].abs() < 1e-12);
        assert_eq!(f.r_squared, 0.0);
    }

    #[test]
    fn all_zero_design_predicts_intercept() {
        let f = fit(&col(&[0.0; 5]), &[1.0, 2.0, 3.0, 4.0, 5.0], DEFAULT_RIDGE).unwrap();
        assert!(f.regularized);
        let p = predict(&f, &col(&[7.0, -3.0])).unwrap();
        assert!((p[0] - 3.0).abs() < 1e-6 && (p[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn duplicated_column_is_regularized() {
        let a = vec![1.0, 2.0, 4.0, -1.0, 0.5, 3.0];
        let b = vec![2.0, 1.0, 0.0, 1.0, -2.0, 0.5];
        let y = vec![1.0, 3.0, 2.0, -1.0, 0.0, 4.0];
        let d = Matrix::from_columns(&[a.clone(), a.clone(), b.clone()]).unwrap();
        let f = fit(&d, &y, DEFAULT_RIDGE).unwrap();
        assert!(f.regularized);
        assert!(f.coefficients.iter().all(|c| c.is_finite()));
        let pred = predict(&f, &d).unwrap();
        let r: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
        for c in [vec![1.0; 6], a, b] {
            let dot: f64 = c.iter().zip(&r).map(|(x, y)| x * y).sum();
            assert!(dot.abs() < 1e-6, "{dot}");
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            fit(&col(&[1.0]), &[1.0], DEFAULT_RIDGE),
            Err(Error::InsufficientData { .. })
        ));
        assert!(matches!(
            fit(&col(&[1.0, f64::NAN]), &[1.0, 2.0], DEFAULT_RIDGE),
            Err(Error::Data(_))
        ));
        let f = fit(&col(&[1.0, 2.0, 3.0]), &[1.0, 2.0, 2.0], DEFAULT_RIDGE).unwrap();
        assert!(predict(&f, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn refit_without_activations_is_difference_in_means() {
        let t = [0.0, 0.0, 1.0, 1.0, 1.0];
        let y = [1.0, 2.0, 4.0, 5.0, 6.0];
        let (ate, _) = ate_from_refit(&Matrix::zeros(5, 0), &t, &y).unwrap();
        assert!((ate - 3.5).abs() < 1e-12);
    }

    #[test]
    fn json_fields() {
        let f = fit(&col(&[1.0, 2.0, 3.0]), &[2.0, 4.0, 6.0], DEFAULT_RIDGE).unwrap();
        let v: serde_json::Value = serde_json::from_str(&f.to_json().unwrap()).unwrap();
        for k in ["coefficients", "residual_mse", "r_squared", "regularized"] {
            assert!(v.get(k).is_some());
        }
    }
}
