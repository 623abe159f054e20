use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear ridge regression from features to AP, clamped to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct APRegressor {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl APRegressor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let y: f64 = self.bias + self.weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        y.clamp(0.0, 1.0)
    }
}

/// Solves `(A + λI) w = b` for symmetric positive semi-definite `A`,
/// falling back to the SVD pseudo-inverse when Cholesky fails.
pub(crate) fn ridge_solve(mut a: DMatrix<f64>, b: DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    if lambda > 0.0 {
        if let Some(ch) = a.clone().cholesky() {
            return Ok(ch.solve(&b));
        }
    }
    let scale = a.amax().max(1.0);
    a.svd(true, true)
        .solve(&b, 1e-12 * scale)
        .map_err(|e| Error::invalid(format!("least squares failed: {e}")))
}

/// Closed-form ridge fit on centred data; the intercept is not penalized.
pub fn fit_ap_regressor(xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> Result<APRegressor> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return Err(Error::invalid("AP regression needs at least two (features, AP) pairs"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("ridge penalty must be non-negative"));
    }
    let n = xs.len();
    let d = xs[0].len();
    if xs.iter().any(|x| x.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: xs.iter().map(|x| x.len()).find(|&l| l != d).unwrap_or(d),
        });
    }
    let mut mean = vec![0.0; d];
    for x in xs {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n as f64;
        }
    }
    let ybar = ys.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, d, |i, j| xs[i][j] - mean[j]);
    let yc = DVector::from_iterator(n, ys.iter().map(|y| y - ybar));
    let w = ridge_solve(xc.transpose() * &xc, xc.transpose() * yc, lambda)?;
    let bias = ybar - w.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(APRegressor {
        weights: w.iter().copied().collect(),
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_targets() {
        let xs = vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5]];
        let r = fit_ap_regressor(&xs, &[0.7; 3], 0.0).unwrap();
        for x in &xs {
            assert!((r.predict(x) - 0.7).abs() < 1e-12);
        }
        assert!((r.predict(&[100.0, 100.0]) - 0.7).abs() < 1e-9);
    }

    #[test]
    fn two_points_interpolate() {
        // y = 0.2 + 0.3 x through (0, 0.2) and (2, 0.8)
        let r = fit_ap_regressor(&[vec![0.0], vec![2.0]], &[0.2, 0.8], 0.0).unwrap();
        assert!((r.weights[0] - 0.3).abs() < 1e-12);
        assert!((r.bias - 0.2).abs() < 1e-12);
        assert!((r.predict(&[1.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clamped() {
        let r = fit_ap_regressor(&[vec![0.0], vec![1.0]], &[0.0, 1.0], 0.0).unwrap();
        assert_eq!(r.predict(&[5.0]), 1.0);
        assert_eq!(r.predict(&[-5.0]), 0.0);
    }

    #[test]
    fn heavy_ridge_gives_mean() {
        let xs = vec![vec![0.0], vec![1.0], vec![2.0]];
        let r = fit_ap_regressor(&xs, &[0.1, 0.2, 0.6], 1e12).unwrap();
        assert!(r.weights[0].abs() < 1e-9);
        assert!((r.predict(&[7.0]) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn needs_two_pairs() {
        assert!(fit_ap_regressor(&[vec![1.0]], &[0.5], 1e-3).is_err());
    }
}
