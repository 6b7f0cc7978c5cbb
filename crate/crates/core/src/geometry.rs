//! Closed planar curves and the conversions between sample points and
//! arc-length parameter values.
//!
//! Every computation here is carried out on the *enclosed* piecewise-linear
//! polygon through the observed points: the last point connects back to the
//! first, so a curve with `n` points has `n` segments and the arc parameters
//! `0` and `ℓ` denote the same location.

use nalgebra::{Point2, Vector2};

use crate::error::{Error, Result};

pub type Point = Point2<f64>;

/// Default number of points interpolated inside every segment when projecting
/// an arbitrary planar point onto the curve.
pub const DEFAULT_OVERSAMPLING: usize = 19;

/// An ordered set of sample points from a closed planar curve.
///
/// Consecutive duplicates (including the wrap-around pair last → first) are
/// merged on construction, so every segment has positive length.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    id: String,
    label: Option<i64>,
    points: Vec<Point>,
    /// Cumulative arc length at each vertex; `n + 1` entries, the last being
    /// the total length (the closing vertex).
    cumulative: Vec<f64>,
}

impl Curve {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        Self::with_id("curve", points)
    }

    pub fn with_id(id: impl Into<String>, points: Vec<Point>) -> Result<Self> {
        let id = id.into();
        let raw = points.len();
        if raw < 3 {
            return Err(Error::InvalidCurve(format!(
                "curve '{id}' has {raw} points, a closed curve needs at least 3"
            )));
        }
        if let Some(p) = points.iter().find(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::InvalidCurve(format!(
                "curve '{id}' contains a non-finite point ({}, {})",
                p.x, p.y
            )));
        }

        let mut merged: Vec<Point> = Vec::with_capacity(raw);
        for p in points {
            if merged.last() != Some(&p) {
                merged.push(p);
            }
        }
        while merged.len() > 1 && merged.first() == merged.last() {
            merged.pop();
        }
        if merged.len() < raw {
            log::warn!(
                "curve '{id}': merged {} duplicate consecutive point(s)",
                raw - merged.len()
            );
        }
        if merged.len() == 1 {
            return Err(Error::DegenerateCurve(format!(
                "curve '{id}' has zero total length"
            )));
        }
        if merged.len() < 3 {
            return Err(Error::InvalidCurve(format!(
                "curve '{id}' has {} distinct points after merging duplicates, a closed curve needs at least 3",
                merged.len()
            )));
        }

        let cumulative = cumulative_lengths(&merged);
        Ok(Self {
            id,
            label: None,
            points: merged,
            cumulative,
        })
    }

    pub fn with_label(mut self, label: Option<i64>) -> Self {
        self.label = label;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> Option<i64> {
        self.label
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Perimeter of the enclosed polygon, closing segment included.
    pub fn length(&self) -> f64 {
        self.cumulative[self.points.len()]
    }

    /// Arc parameter of every vertex: the cumulative length from the first
    /// point, in `[0, ℓ)`.
    pub fn arc_params(&self) -> &[f64] {
        &self.cumulative[..self.points.len()]
    }

    /// Length of segment `i` (from vertex `i` to vertex `i + 1`, wrapping).
    pub fn segment_length(&self, i: usize) -> f64 {
        self.cumulative[i + 1] - self.cumulative[i]
    }

    pub fn segment(&self, i: usize) -> (Point, Point) {
        let n = self.points.len();
        (self.points[i], self.points[(i + 1) % n])
    }

    /// Projects `query` onto the curve and returns its arc parameter.
    ///
    /// Each segment is oversampled with `oversampling` interior points and the
    /// arc parameter of the oversampled point nearest to `query` is returned.
    /// Ties resolve to the smallest arc parameter.
    pub fn xy_to_arc_param(&self, query: &Point, oversampling: usize) -> f64 {
        let steps = (oversampling + 1) as f64;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..self.points.len() {
            let (a, b) = self.segment(i);
            let dir = b - a;
            let len = self.segment_length(i);
            for j in 0..=oversampling {
                let t = j as f64 / steps;
                let d = (a + dir * t - query).norm_squared();
                if d < best.0 {
                    best = (d, self.cumulative[i] + t * len);
                }
            }
        }
        best.1
    }

    /// Maps an arc parameter to its location on the enclosed polygon.
    /// Parameters outside `[0, ℓ)` are reduced modulo `ℓ`.
    pub fn arc_to_xy_param(&self, s: f64) -> Point {
        let s = self.wrap(s);
        let i = self.segment_index(s);
        let (a, b) = self.segment(i);
        let ratio = (s - self.cumulative[i]) / self.segment_length(i);
        a + (b - a) * ratio
    }

    /// `m` points equally spaced in arc length, the first at the first vertex.
    pub fn resample_equally_spaced(&self, m: usize) -> Result<Curve> {
        self.resample_from(0.0, m)
    }

    /// `m` points equally spaced in arc length starting at arc parameter
    /// `start`.
    pub fn resample_from(&self, start: f64, m: usize) -> Result<Curve> {
        if m < 3 {
            return Err(Error::InvalidArgument(format!(
                "resampling needs at least 3 points, got {m}"
            )));
        }
        let step = self.length() / m as f64;
        let points = (0..m)
            .map(|j| self.arc_to_xy_param(start + j as f64 * step))
            .collect();
        Ok(Curve::with_id(self.id.clone(), points)?.with_label(self.label))
    }

    /// Same curve with the point order rotated so that vertex `shift` becomes
    /// the first point.
    pub fn cyclic_shift(&self, shift: usize) -> Curve {
        let n = self.points.len();
        let mut points = self.points.clone();
        points.rotate_left(shift % n);
        let cumulative = cumulative_lengths(&points);
        Curve {
            id: self.id.clone(),
            label: self.label,
            points,
            cumulative,
        }
    }

    /// Applies `f` to every point. Fails if the result degenerates.
    pub fn map_points(&self, f: impl Fn(&Point) -> Point) -> Result<Curve> {
        let points = self.points.iter().map(f).collect();
        Ok(Curve::with_id(self.id.clone(), points)?.with_label(self.label))
    }

    /// Distance from `p` to the nearest point of the enclosed polygon.
    pub fn distance_to(&self, p: &Point) -> f64 {
        (0..self.points.len())
            .map(|i| {
                let (a, b) = self.segment(i);
                point_segment_distance(p, &a, &b)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn centroid(&self) -> Point {
        let sum: Vector2<f64> = self.points.iter().map(|p| p.coords).sum();
        Point::from(sum / self.points.len() as f64)
    }

    fn wrap(&self, s: f64) -> f64 {
        let len = self.length();
        let w = s.rem_euclid(len);
        // rem_euclid may round up to exactly `len`
        if w >= len {
            0.0
        } else {
            w
        }
    }

    /// Index of the segment containing wrapped parameter `s`.
    fn segment_index(&self, s: f64) -> usize {
        let n = self.points.len();
        let idx = self.cumulative[..n].partition_point(|&c| c <= s);
        idx.saturating_sub(1)
    }
}

/// Perimeter of the enclosed polygon through `points`.
pub fn polygon_length(points: &[Point]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::InvalidCurve(format!(
            "polygon length needs at least 3 points, got {}",
            points.len()
        )));
    }
    let len = cumulative_lengths(points)[points.len()];
    if len <= 0.0 {
        return Err(Error::DegenerateCurve("zero total length".into()));
    }
    Ok(len)
}

/// Per-segment length-estimation error bounds for points sampled from a known
/// arc-length parameterized curve: `(s_{i+1} - s_i) - |y_{i+1} - y_i|` for
/// unit-speed truth. Returns the per-segment terms; their sum bounds the
/// accumulated error of [`Curve::arc_to_xy_param`].
pub fn length_error_terms(curve: &Curve, true_params: &[f64], true_length: f64) -> Result<Vec<f64>> {
    let n = curve.len();
    if true_params.len() != n {
        return Err(Error::Dimension(format!(
            "{} true parameters for {} points",
            true_params.len(),
            n
        )));
    }
    Ok((0..n)
        .map(|i| {
            let next = if i + 1 < n {
                true_params[i + 1]
            } else {
                true_params[0] + true_length
            };
            ((next - true_params[i]) - curve.segment_length(i)).abs()
        })
        .collect())
}

fn cumulative_lengths(points: &[Point]) -> Vec<f64> {
    let n = points.len();
    let mut cumulative = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    cumulative.push(acc);
    for i in 0..n {
        acc += (points[(i + 1) % n] - points[i]).norm();
        cumulative.push(acc);
    }
    cumulative
}

pub(crate) fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b - a;
    let denom = ab.norm_squared();
    let t = if denom > 0.0 {
        ((p - a).dot(&ab) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * t - p).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn square() -> Curve {
        Curve::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ])
        .unwrap()
    }

    fn circle(n: usize) -> Curve {
        let pts = (0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64;
                Point::new(t.cos(), t.sin())
            })
            .collect();
        Curve::new(pts).unwrap()
    }

    #[test]
    fn square_perimeter() {
        assert_eq!(square().length(), 4.0);
        assert_eq!(polygon_length(square().points()).unwrap(), 4.0);
    }

    #[test]
    fn inscribed_square_perimeter() {
        assert_abs_diff_eq!(circle(4).length(), 4.0 * 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn thousand_gon_perimeter() {
        let n = 1000.0;
        let expected = 2.0 * n * (PI / n).sin();
        let c = circle(1000);
        assert_abs_diff_eq!(c.length(), expected, epsilon = 1e-10);
        let err = 2.0 * PI - c.length();
        assert!((err - 1.03e-5).abs() < 0.01e-5, "{err}");
    }

    #[test]
    fn too_few_points() {
        let err = Curve::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)]).unwrap_err();
        assert!(matches!(err, Error::InvalidCurve(_)));
        assert!(polygon_length(&[Point::origin(), Point::new(1.0, 1.0)]).is_err());
    }

    #[test]
    fn zero_length() {
        let p = Point::new(2.0, 3.0);
        assert!(matches!(
            Curve::new(vec![p, p, p]).unwrap_err(),
            Error::DegenerateCurve(_)
        ));
        assert!(matches!(
            polygon_length(&[p, p, p]).unwrap_err(),
            Error::DegenerateCurve(_)
        ));
    }

    #[test]
    fn duplicates_merged() {
        let c = Curve::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 0.0),
        ])
        .unwrap();
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn xy_to_arc_examples() {
        let sq = square();
        assert_eq!(sq.xy_to_arc_param(&Point::new(0.0, 0.0), DEFAULT_OVERSAMPLING), 0.0);
        assert_abs_diff_eq!(
            sq.xy_to_arc_param(&Point::new(1.0, 0.0), DEFAULT_OVERSAMPLING),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            sq.xy_to_arc_param(&Point::new(0.5, -0.2), DEFAULT_OVERSAMPLING),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn xy_to_arc_ties_pick_smallest() {
        // equidistant from (0.5, 0) on the bottom side and (0.5, 1) on the top
        let s = square().xy_to_arc_param(&Point::new(0.5, 0.5), DEFAULT_OVERSAMPLING);
        assert_abs_diff_eq!(s, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn arc_to_xy_examples() {
        let sq = square();
        assert_eq!(sq.arc_to_xy_param(0.0), Point::new(0.0, 0.0));
        assert_eq!(sq.arc_to_xy_param(4.0), Point::new(0.0, 0.0));
        assert_eq!(sq.arc_to_xy_param(0.5), Point::new(0.5, 0.0));
        assert_eq!(sq.arc_to_xy_param(-0.5), Point::new(0.0, 0.5));
        assert_eq!(sq.arc_to_xy_param(5.5), Point::new(1.0, 0.5));
    }

    #[test]
    fn resample_square_vertices() {
        let r = square().resample_equally_spaced(4).unwrap();
        for (a, b) in r.points().iter().zip(square().points()) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn resample_circle_against_analytic() {
        let c = circle(1000);
        let r = c.resample_equally_spaced(10).unwrap();
        for (j, p) in r.points().iter().enumerate() {
            let t = 2.0 * PI * j as f64 / 10.0;
            assert!((p - Point::new(t.cos(), t.sin())).norm() < 1e-3);
        }
    }

    #[test]
    fn resample_is_fixed_point_for_regular_polygon() {
        let c = circle(12);
        let r = c.resample_equally_spaced(12).unwrap();
        for (a, b) in r.points().iter().zip(c.points()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn cyclic_shift_keeps_length() {
        let c = circle(7);
        let s = c.cyclic_shift(3);
        assert_eq!(s.points()[0], c.points()[3]);
        assert_abs_diff_eq!(s.length(), c.length(), epsilon = 1e-14);
    }

    #[test]
    fn length_error_terms_vanish_for_polygon_truth() {
        let sq = square();
        let terms = length_error_terms(&sq, sq.arc_params(), sq.length()).unwrap();
        assert!(terms.iter().all(|t| t.abs() < 1e-15));
    }
}
