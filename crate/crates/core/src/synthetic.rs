//! Seeded synthetic closed curves used as test data and by the `simulate`
//! command.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Curve, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Circle { radius: f64 },
    /// Axis-aligned ellipse with semi-axes `a` (x) and `b` (y).
    Ellipse { a: f64, b: f64 },
    /// Polar curve `r(θ) = radius · (1 + amplitude · cos(petals · θ))`.
    Star {
        radius: f64,
        amplitude: f64,
        petals: u32,
    },
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match *self {
            Shape::Circle { radius } if !(radius > 0.0) => bad(format!("circle radius {radius} must be positive")),
            Shape::Ellipse { a, b } if !(a > 0.0 && b > 0.0) => {
                bad(format!("ellipse semi-axes ({a}, {b}) must be positive"))
            }
            Shape::Star { radius, .. } if !(radius > 0.0) => bad(format!("star radius {radius} must be positive")),
            Shape::Star { amplitude, .. } if !(0.0..1.0).contains(&amplitude) => {
                bad(format!("star amplitude {amplitude} must lie in [0, 1)"))
            }
            Shape::Star { petals, .. } if petals < 1 => bad("star needs at least one petal".into()),
            _ => Ok(()),
        }
    }

    /// Point at polar/parametric angle `theta`.
    pub fn point(&self, theta: f64) -> Point {
        match *self {
            Shape::Circle { radius } => Point::new(radius * theta.cos(), radius * theta.sin()),
            Shape::Ellipse { a, b } => Point::new(a * theta.cos(), b * theta.sin()),
            Shape::Star {
                radius,
                amplitude,
                petals,
            } => {
                let r = radius * (1.0 + amplitude * (petals as f64 * theta).cos());
                Point::new(r * theta.cos(), r * theta.sin())
            }
        }
    }

    /// Noise-free polygon with `n` points at equally spaced angles.
    pub fn dense(&self, n: usize) -> Result<Curve> {
        generate(self, n, Sampling::Equal, 0.0, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum Sampling {
    /// Equally spaced parameter angles starting at zero.
    Equal,
    /// A share `fraction` of the points is packed into the angular window
    /// `[start, start + width)`; the remainder is spread evenly over the rest
    /// of the circle.
    Clustered { start: f64, width: f64, fraction: f64 },
}

impl Sampling {
    fn angles(&self, n: usize) -> Result<Vec<f64>> {
        match *self {
            Sampling::Equal => Ok((0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect()),
            Sampling::Clustered { start, width, fraction } => {
                if !(width > 0.0 && width < 2.0 * PI) {
                    return Err(Error::InvalidArgument(format!(
                        "cluster window width {width} must lie in (0, 2π)"
                    )));
                }
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(Error::InvalidArgument(format!(
                        "cluster fraction {fraction} must lie in [0, 1]"
                    )));
                }
                let inside = ((n as f64 * fraction).round() as usize).clamp(1, n);
                let outside = n - inside;
                let mut angles: Vec<f64> = (0..inside)
                    .map(|i| start + width * i as f64 / inside as f64)
                    .collect();
                let rest = 2.0 * PI - width;
                angles.extend((0..outside).map(|i| start + width + rest * (i as f64 + 0.5) / outside as f64));
                Ok(angles)
            }
        }
    }
}

/// Samples `n` points from `shape` and perturbs both coordinates with
/// independent `N(0, noise_sd²)` noise. Deterministic for a fixed `seed`.
pub fn generate(shape: &Shape, n: usize, sampling: Sampling, noise_sd: f64, seed: u64) -> Result<Curve> {
    shape.validate()?;
    if n < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 points, got {n}")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sd {noise_sd} must be nonnegative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let points = sampling
        .angles(n)?
        .into_iter()
        .map(|theta| {
            let p = shape.point(theta);
            if noise_sd > 0.0 {
                Point::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng))
            } else {
                p
            }
        })
        .collect();
    Curve::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn circle_four_points_right_angles() {
        let c = generate(&Shape::Circle { radius: 1.0 }, 4, Sampling::Equal, 0.0, 1).unwrap();
        let expected = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        for (p, (x, y)) in c.points().iter().zip(expected) {
            assert_abs_diff_eq!(p.x, x, epsilon = 1e-15);
            assert_abs_diff_eq!(p.y, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn noiseless_points_lie_on_shape() {
        let star = Shape::Star {
            radius: 1.0,
            amplitude: 0.3,
            petals: 5,
        };
        let c = generate(&star, 40, Sampling::Equal, 0.0, 3).unwrap();
        for p in c.points() {
            let theta = p.y.atan2(p.x);
            let r = 1.0 + 0.3 * (5.0 * theta).cos();
            assert_abs_diff_eq!(p.coords.norm(), r, epsilon = 1e-12);
        }
    }

    #[test]
    fn ellipse_perimeter_matches_quadrature() {
        let (a, b) = (2.0, 1.0);
        // composite Simpson on the arc-length integrand
        let m = 20_000;
        let h = 2.0 * PI / m as f64;
        let f = |t: f64| (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).sqrt();
        let mut acc = f(0.0) + f(2.0 * PI);
        for i in 1..m {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let perimeter = acc * h / 3.0;
        let c = generate(&Shape::Ellipse { a, b }, 100, Sampling::Equal, 0.0, 0).unwrap();
        assert!(((c.length() - perimeter) / perimeter).abs() < 1e-3);
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let s = Shape::Circle { radius: 1.0 };
        let a = generate(&s, 15, Sampling::Equal, 0.01, 7).unwrap();
        let b = generate(&s, 15, Sampling::Equal, 0.01, 7).unwrap();
        let c = generate(&s, 15, Sampling::Equal, 0.01, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn clustered_points_fall_in_window() {
        let s = Shape::Circle { radius: 1.0 };
        let sampling = Sampling::Clustered {
            start: 0.0,
            width: PI / 2.0,
            fraction: 1.0,
        };
        let c = generate(&s, 10, sampling, 0.0, 0).unwrap();
        for p in c.points() {
            let theta = p.y.atan2(p.x);
            assert!((-1e-12..PI / 2.0).contains(&theta));
        }
    }

    #[test]
    fn invalid_star_params() {
        for shape in [
            Shape::Star { radius: 1.0, amplitude: 1.0, petals: 3 },
            Shape::Star { radius: 1.0, amplitude: 0.2, petals: 0 },
        ] {
            assert!(generate(&shape, 10, Sampling::Equal, 0.0, 0).is_err());
        }
    }
}
