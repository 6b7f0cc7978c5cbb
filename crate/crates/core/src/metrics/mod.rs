//! Evaluation metrics for predicted curves: integrated mean squared
//! prediction error, integrated uncertainty ellipse area, an exact
//! Wasserstein-2 distance between equal-size point clouds, and the elastic
//! shape distance.

pub mod assignment;
pub mod elastic;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Curve, Point};
use crate::gp::PredictedCurve;

pub use elastic::{elastic_register, esd, esd_with, ElasticOptions, Registration};

/// Largest cloud accepted by [`wasserstein2`].
pub const MAX_ASSIGNMENT_SIZE: usize = 512;

/// `(1/m) Σ_i |a_i - b_i|²` for two point sequences on a shared grid.
pub fn imspe_points(predicted: &[Point], truth: &[Point]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "IMSPE needs equal grids, got {} and {} points",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("IMSPE needs a non-empty grid".into()));
    }
    let sum: f64 = predicted.iter().zip(truth).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok(sum / predicted.len() as f64)
}

/// IMSPE of a predicted curve against a polygonal truth. The prediction must
/// sit on the equally spaced grid `s_i = i ℓ / m`; the truth is evaluated at
/// the same fractions of its own length.
pub fn imspe(predicted: &PredictedCurve, truth: &Curve) -> Result<f64> {
    let m = predicted.len();
    let regular = predicted
        .grid
        .iter()
        .enumerate()
        .all(|(i, &s)| (s - i as f64 * predicted.length / m as f64).abs() <= 1e-9 * predicted.length.max(1.0));
    if !regular {
        return Err(Error::InvalidArgument(
            "IMSPE needs a prediction on the equally spaced grid i·ℓ/m".into(),
        ));
    }
    let l = truth.length();
    let truth_pts: Vec<Point> = (0..m).map(|i| truth.arc_to_xy_param(i as f64 * l / m as f64)).collect();
    imspe_points(&predicted.means, &truth_pts)
}

/// IMSPE between two polygons evaluated at `m` equally spaced fractions of
/// their respective lengths.
pub fn imspe_curves(a: &Curve, b: &Curve, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("IMSPE needs a non-empty grid".into()));
    }
    let pa: Vec<Point> = (0..m).map(|i| a.arc_to_xy_param(i as f64 * a.length() / m as f64)).collect();
    let pb: Vec<Point> = (0..m).map(|i| b.arc_to_xy_param(i as f64 * b.length() / m as f64)).collect();
    imspe_points(&pa, &pb)
}

/// Radius convention for uncertainty ellipses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum EllipseScale {
    /// Semi-axes of `k` standard deviations.
    StdDev(f64),
    /// Ellipse holding probability `p` of the bivariate normal.
    ChiSquare(f64),
}

impl Default for EllipseScale {
    fn default() -> Self {
        EllipseScale::StdDev(1.0)
    }
}

impl EllipseScale {
    /// Squared radius multiplier `k²`.
    pub fn squared(&self) -> Result<f64> {
        match *self {
            EllipseScale::StdDev(k) if k >= 0.0 && k.is_finite() => Ok(k * k),
            EllipseScale::ChiSquare(p) if (0.0..1.0).contains(&p) => Ok(-2.0 * (1.0 - p).ln()),
            other => Err(Error::InvalidArgument(format!("invalid ellipse scale {other:?}"))),
        }
    }
}

/// Area of the uncertainty ellipse of a 2×2 covariance, `π k² √det`.
pub fn ellipse_area(cov: &nalgebra::Matrix2<f64>, k2: f64) -> Result<f64> {
    let (v1, v2, r) = (cov[(0, 0)], cov[(1, 1)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]));
    if v1 == 0.0 && r != 0.0 {
        return Err(Error::Numerical(format!("zero variance with nonzero covariance {r}")));
    }
    let det = v1.max(0.0) * v2.max(0.0) - r * r;
    let tol = 1e-10 * (v1.abs() * v2.abs()).max(f64::MIN_POSITIVE);
    if det < -tol {
        return Err(Error::Numerical(format!(
            "covariance [[{v1}, {r}], [{r}, {v2}]] is not positive semidefinite"
        )));
    }
    Ok(PI * k2 * det.max(0.0).sqrt())
}

/// `(π/m) Σ_i k² σ̃₁ √(σ̃₂² - ρ̃²/σ̃₁²)`, written as `√(σ̃₁²σ̃₂² - ρ̃²)` so that
/// the degenerate case is exactly zero.
pub fn iuea(predicted: &PredictedCurve, scale: EllipseScale) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("IUEA needs a non-empty grid".into()));
    }
    let k2 = scale.squared()?;
    let mut sum = 0.0;
    for c in &predicted.covariances {
        sum += ellipse_area(c, k2)?;
    }
    Ok(sum / predicted.len() as f64)
}

/// Minimum over bijections of the mean squared distance between two
/// equal-size clouds with uniform weights.
pub fn wasserstein2(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "clouds must have equal sizes, got {} and {}; resample first",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("clouds must be non-empty".into()));
    }
    if a.len() > MAX_ASSIGNMENT_SIZE {
        return Err(Error::InvalidArgument(format!(
            "clouds of {} points exceed the exact-assignment limit {MAX_ASSIGNMENT_SIZE}",
            a.len()
        )));
    }
    let cost = DMatrix::from_fn(a.len(), b.len(), |i, j| (a[i] - b[j]).norm_squared());
    let (_, total) = assignment::solve(&cost);
    Ok(total / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, Sampling, Shape};
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix2;

    fn pred_with(covs: Vec<Matrix2<f64>>) -> PredictedCurve {
        let m = covs.len();
        PredictedCurve {
            curve: 0,
            length: 1.0,
            grid: (0..m).map(|i| i as f64 / m as f64).collect(),
            means: vec![Point::origin(); m],
            covariances: covs,
        }
    }

    #[test]
    fn imspe_offset() {
        let c = generate(&Shape::Circle { radius: 1.0 }, 50, Sampling::Equal, 0.0, 0).unwrap();
        let shifted = c.map_points(|p| Point::new(p.x + 0.1, p.y + 0.1)).unwrap();
        assert_abs_diff_eq!(imspe_curves(&c, &shifted, 200).unwrap(), 0.02, epsilon = 1e-12);
        assert_eq!(imspe_curves(&c, &c, 200).unwrap(), 0.0);
    }

    #[test]
    fn imspe_polygon_vs_circle_direct_sum() {
        let c = generate(&Shape::Circle { radius: 1.0 }, 30, Sampling::Equal, 0.0, 0).unwrap();
        let m = 200;
        let poly: Vec<Point> = (0..m).map(|i| c.arc_to_xy_param(i as f64 * c.length() / m as f64)).collect();
        let circle: Vec<Point> = (0..m)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / m as f64;
                Point::new(t.cos(), t.sin())
            })
            .collect();
        let mut direct = 0.0;
        for i in 0..m {
            direct += (poly[i].x - circle[i].x).powi(2) + (poly[i].y - circle[i].y).powi(2);
        }
        direct /= m as f64;
        assert_abs_diff_eq!(imspe_points(&poly, &circle).unwrap(), direct, epsilon = 1e-10);
        assert!(direct > 0.0);
    }

    #[test]
    fn imspe_rejects_irregular_grid() {
        let c = generate(&Shape::Circle { radius: 1.0 }, 10, Sampling::Equal, 0.0, 0).unwrap();
        let mut p = pred_with(vec![Matrix2::zeros(); 4]);
        p.grid[1] = 0.3;
        assert!(imspe(&p, &c).is_err());
    }

    #[test]
    fn iuea_independent_circle() {
        let p = pred_with(vec![Matrix2::new(0.01, 0.0, 0.0, 0.01); 25]);
        assert_abs_diff_eq!(iuea(&p, EllipseScale::default()).unwrap(), PI * 0.01, epsilon = 1e-15);
    }

    #[test]
    fn iuea_degenerate_is_exact_zero() {
        let p = pred_with(vec![Matrix2::new(0.3, 0.3, 0.3, 0.3); 10]);
        assert_eq!(iuea(&p, EllipseScale::default()).unwrap(), 0.0);
    }

    #[test]
    fn iuea_direct_sum() {
        let covs: Vec<Matrix2<f64>> = (1..=7).map(|i| Matrix2::new(0.01 * i as f64, 0.0, 0.0, 0.02 / i as f64)).collect();
        let direct: f64 = covs.iter().map(|c| (c[(0, 0)] * c[(1, 1)]).sqrt()).sum::<f64>() * PI / 7.0;
        assert_abs_diff_eq!(iuea(&pred_with(covs), EllipseScale::default()).unwrap(), direct, epsilon = 1e-15);
    }

    #[test]
    fn iuea_errors() {
        let bad = pred_with(vec![Matrix2::new(0.0, 0.1, 0.1, 1.0)]);
        assert!(matches!(iuea(&bad, EllipseScale::default()), Err(Error::Numerical(_))));
        let zero = pred_with(vec![Matrix2::new(0.0, 0.0, 0.0, 1.0)]);
        assert_eq!(iuea(&zero, EllipseScale::default()).unwrap(), 0.0);
        let not_psd = pred_with(vec![Matrix2::new(1.0, 2.0, 2.0, 1.0)]);
        assert!(iuea(&not_psd, EllipseScale::default()).is_err());
    }

    #[test]
    fn chi_square_scale() {
        // p = 1 - e^{-1/2} is the 1-sd ellipse
        let k2 = EllipseScale::ChiSquare(1.0 - (-0.5f64).exp()).squared().unwrap();
        assert_abs_diff_eq!(k2, 1.0, epsilon = 1e-12);
        assert!(EllipseScale::ChiSquare(1.0).squared().is_err());
    }

    #[test]
    fn wasserstein_examples() {
        let a = [Point::new(0.0, 0.0)];
        let b = [Point::new(1.0, 0.0)];
        assert_eq!(wasserstein2(&a, &b).unwrap(), 1.0);
        let a = [Point::new(0.0, 0.0), Point::new(1.0, 0.0)];
        let b = [Point::new(0.0, 1.0), Point::new(1.0, 1.0)];
        assert_eq!(wasserstein2(&a, &b).unwrap(), 1.0);
        assert_eq!(wasserstein2(&a, &a).unwrap(), 0.0);
        assert!(wasserstein2(&a, &b[..1]).is_err());
        let big = vec![Point::origin(); MAX_ASSIGNMENT_SIZE + 1];
        assert!(wasserstein2(&big, &big).is_err());
    }
}
