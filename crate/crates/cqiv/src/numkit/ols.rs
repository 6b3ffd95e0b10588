//! Weighted ordinary least squares.

use nalgebra::{DMatrix, DVector};

use crate::data::{DesignMatrix, WeightVector, RANK_TOL};
use crate::error::{Error, Result};

/// argmin Σᵢ wᵢ (yᵢ − xᵢ'β)², solved through the SVD of the
/// √w-scaled design so that rank deficiency is detected reliably.
pub fn solve_ols(x: &DesignMatrix, y: &[f64], w: &WeightVector) -> Result<Vec<f64>> {
    let n = x.rows();
    let p = x.cols();
    if y.len() != n || w.len() != n {
        return Err(Error::invalid("design, response, and weights must have equal length"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("response vector"));
    }

    let mut xs = DMatrix::zeros(n, p);
    let mut ys = DVector::zeros(n);
    for i in 0..n {
        let sw = w.values()[i].sqrt();
        for j in 0..p {
            xs[(i, j)] = sw * x.values()[(i, j)];
        }
        ys[i] = sw * y[i];
    }

    let svd = xs.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax <= 0.0 || smax.is_nan() || smin <= RANK_TOL * smax {
        return Err(Error::rank_deficient(format!(
            "X'WX is singular (singular value ratio {:.2e})",
            if smax > 0.0 { smin / smax } else { 0.0 }
        )));
    }
    let beta = svd
        .solve(&ys, RANK_TOL * smax)
        .map_err(|e| Error::rank_deficient(e.to_string()))?;
    Ok(beta.iter().copied().collect())
}

/// Residuals y − Xβ.
pub fn residuals(x: &DesignMatrix, y: &[f64], beta: &[f64]) -> Vec<f64> {
    (0..x.rows()).map(|i| y[i] - x.row_dot(i, beta)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only_is_weighted_mean() {
        let x = DesignMatrix::from_columns(vec![("const".into(), vec![1.0; 4])]).unwrap();
        let y = [1.0, 2.0, 3.0, 6.0];
        let beta = solve_ols(&x, &y, &WeightVector::ones(4)).unwrap();
        assert!((beta[0] - 3.0).abs() < 1e-12);

        let w = WeightVector::new(vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        let beta = solve_ols(&x, &y, &w).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exact_linear_data_recovered() {
        let xcol = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let x = DesignMatrix::from_columns(vec![
            ("const".into(), vec![1.0; 5]),
            ("x".into(), xcol.clone()),
        ])
        .unwrap();
        let y: Vec<f64> = xcol.iter().map(|v| -1.5 + 2.25 * v).collect();
        let beta = solve_ols(&x, &y, &WeightVector::ones(5)).unwrap();
        assert!((beta[0] + 1.5).abs() < 1e-12);
        assert!((beta[1] - 2.25).abs() < 1e-12);
    }

    #[test]
    fn matches_normal_equations_oracle() {
        // n=8, p=2; solve the 2×2 normal equations by explicit inversion.
        let xcol = vec![0.4, 1.1, -0.3, 2.2, 0.9, 1.7, -1.4, 0.6];
        let y = vec![1.2, 2.9, 0.1, 4.8, 2.3, 4.1, -2.0, 1.9];
        let w: Vec<f64> = vec![1.0, 2.0, 0.5, 1.0, 3.0, 1.0, 0.25, 1.5];

        let (mut s11, mut s1x, mut sxx, mut s1y, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..8 {
            s11 += w[i];
            s1x += w[i] * xcol[i];
            sxx += w[i] * xcol[i] * xcol[i];
            s1y += w[i] * y[i];
            sxy += w[i] * xcol[i] * y[i];
        }
        let det = s11 * sxx - s1x * s1x;
        let expected = [(sxx * s1y - s1x * sxy) / det, (s11 * sxy - s1x * s1y) / det];

        let x = DesignMatrix::from_columns(vec![
            ("const".into(), vec![1.0; 8]),
            ("x".into(), xcol),
        ])
        .unwrap();
        let beta = solve_ols(&x, &y, &WeightVector::new(w).unwrap()).unwrap();
        assert!((beta[0] - expected[0]).abs() < 1e-10);
        assert!((beta[1] - expected[1]).abs() < 1e-10);
    }

    #[test]
    fn normal_equation_residual_is_small() {
        let xcol = vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5];
        let y = vec![0.1, 0.9, 2.1, 2.8, 4.2, 4.9];
        let x = DesignMatrix::from_columns(vec![
            ("const".into(), vec![1.0; 6]),
            ("x".into(), xcol.clone()),
        ])
        .unwrap();
        let w = WeightVector::ones(6);
        let beta = solve_ols(&x, &y, &w).unwrap();
        let res = residuals(&x, &y, &beta);
        // X'W r should vanish.
        let g0: f64 = res.iter().sum();
        let g1: f64 = res.iter().zip(&xcol).map(|(r, x)| r * x).sum();
        let scale: f64 = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(g0.abs() <= 1e-8 * scale);
        assert!(g1.abs() <= 1e-8 * scale * 2.5);
    }

    #[test]
    fn rank_deficiency_detected() {
        let x = DesignMatrix::from_columns(vec![
            ("a".into(), vec![1.0, 1.0, 1.0]),
            ("b".into(), vec![3.0, 3.0, 3.0]),
        ])
        .unwrap();
        assert!(matches!(
            solve_ols(&x, &[1.0, 2.0, 3.0], &WeightVector::ones(3)),
            Err(Error::RankDeficient { .. })
        ));
    }
}
