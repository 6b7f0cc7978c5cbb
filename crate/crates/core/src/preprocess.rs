//! Normalization pipeline applied before modelling: centering, scaling to
//! unit polygon length, and joint rotation + seed alignment of each curve to
//! a template by exhaustive cyclic-shift Procrustes on SRVF samples.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Curve, Point};

/// Translates the curve so that the mean of its points is the origin.
pub fn center(curve: &Curve) -> Curve {
    let c = curve.centroid().coords;
    curve
        .map_points(|p| p - c)
        .expect("translation preserves validity")
}

/// Scales the curve so that its enclosed polygon has length one.
pub fn scale_to_unit_length(curve: &Curve) -> Result<Curve> {
    let l = curve.length();
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::DegenerateCurve(format!("cannot scale a curve of length {l}")));
    }
    curve.map_points(|p| Point::from(p.coords / l))
}

/// Square-root velocity samples of the arc-length parameterized polygon:
/// the unit tangent `q_i` on segment `i`, held constant over a piece of
/// length `lengths[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Srvf {
    pub q: Vec<Vector2<f64>>,
    pub lengths: Vec<f64>,
}

impl Srvf {
    /// `∫ |q|² ds`, equal to the curve length.
    pub fn norm_squared(&self) -> f64 {
        self.q.iter().zip(&self.lengths).map(|(q, l)| q.norm_squared() * l).sum()
    }

    /// Samples weighted by `√length`, so that sums of products are integrals.
    fn weighted(&self) -> Vec<Vector2<f64>> {
        self.q.iter().zip(&self.lengths).map(|(q, l)| q * l.sqrt()).collect()
    }
}

pub fn srvf(curve: &Curve) -> Srvf {
    let n = curve.len();
    let mut q = Vec::with_capacity(n);
    let mut lengths = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = curve.segment(i);
        let len = curve.segment_length(i);
        // |β̇| = 1 under arc length, so β̇/√|β̇| is the unit tangent
        q.push((b - a) / len);
        lengths.push(len);
    }
    Srvf { q, lengths }
}

/// Rotation and cyclic seed shift mapping a target onto a template:
/// `aligned_i = rotation · target_{(i + shift) mod n}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    #[serde(with = "rotation_rows")]
    pub rotation: Matrix2<f64>,
    pub shift: usize,
    /// `Σ_i |O a_i - b_i|²` on the length-weighted SRVF samples.
    pub residual: f64,
}

impl AlignmentResult {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix2::identity(),
            shift: 0,
            residual: 0.0,
        }
    }

    pub fn apply(&self, curve: &Curve) -> Curve {
        let r = self.rotation;
        curve
            .cyclic_shift(self.shift)
            .map_points(|p| Point::from(r * p.coords))
            .expect("rotation preserves validity")
    }
}

mod rotation_rows {
    use nalgebra::Matrix2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix2<f64>, s: S) -> Result<S::Ok, S::Error> {
        [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix2<f64>, D::Error> {
        let [[a, b], [c, e]] = <[[f64; 2]; 2]>::deserialize(d)?;
        Ok(Matrix2::new(a, b, c, e))
    }
}

/// Proper rotation `O` maximizing `tr(O H)`, i.e. minimizing
/// `Σ |O a_i - b_i|²` for `H = Σ a_i b_iᵀ`.
pub fn procrustes_rotation(h: &Matrix2<f64>) -> Matrix2<f64> {
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let v = v_t.transpose();
    let o = v * u.transpose();
    if o.determinant() < 0.0 {
        // flip the direction of the smallest singular value
        let (small, _) = if svd.singular_values[0] < svd.singular_values[1] { (0, 1) } else { (1, 0) };
        let mut flip = Matrix2::identity();
        flip[(small, small)] = -1.0;
        v * flip * u.transpose()
    } else {
        o
    }
}

/// Exhaustive search over cyclic shifts of `target`; for each shift the
/// optimal rotation comes from the Procrustes solution on SRVF samples.
/// Ties go to the smallest shift.
pub fn rotation_seed_align(target: &Curve, template: &Curve) -> Result<AlignmentResult> {
    let n = target.len();
    if n != template.len() {
        return Err(Error::InvalidArgument(format!(
            "alignment needs equal point counts ({n} vs {}); resample first",
            template.len()
        )));
    }
    let a = srvf(target).weighted();
    let b = srvf(template).weighted();
    let na: f64 = a.iter().map(|v| v.norm_squared()).sum();
    let nb: f64 = b.iter().map(|v| v.norm_squared()).sum();
    let mut best: Option<AlignmentResult> = None;
    for shift in 0..n {
        let h = (0..n).fold(Matrix2::zeros(), |acc, i| acc + a[(i + shift) % n] * b[i].transpose());
        let rotation = procrustes_rotation(&h);
        let residual = (na + nb - 2.0 * (rotation * h).trace()).max(0.0);
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(AlignmentResult { rotation, shift, residual });
        }
    }
    Ok(best.expect("at least one shift"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub center: bool,
    pub scale: bool,
    pub align: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            center: true,
            scale: true,
            align: true,
        }
    }
}

impl PreprocessOptions {
    pub fn none() -> Self {
        Self {
            center: false,
            scale: false,
            align: false,
        }
    }
}

/// Similarity applied to one curve: `processed = R (p - centroid) / scale`,
/// followed by the cyclic shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub centroid: [f64; 2],
    pub scale: f64,
    pub alignment: AlignmentResult,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            centroid: [0.0, 0.0],
            scale: 1.0,
            alignment: AlignmentResult::identity(),
        }
    }

    /// Maps a processed point back to the original frame.
    pub fn restore_point(&self, p: &Point) -> Point {
        let v = self.alignment.rotation.transpose() * p.coords * self.scale;
        Point::new(v.x + self.centroid[0], v.y + self.centroid[1])
    }

    pub fn restore(&self, pred: &crate::gp::PredictedCurve) -> crate::gp::PredictedCurve {
        pred.transformed(
            &self.alignment.rotation.transpose(),
            self.scale,
            Vector2::new(self.centroid[0], self.centroid[1]),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub curves: Vec<Curve>,
    pub normalizations: Vec<Normalization>,
}

/// Centers and scales every curve, then aligns each non-template curve to
/// the template. Curves whose point count differs from the template's are
/// aligned through equal-arc resampled proxies: the rotation is applied as
/// found and the seed moves to the vertex nearest the matched start.
pub fn preprocess_collection(curves: &[Curve], template_index: usize, options: &PreprocessOptions) -> Result<Preprocessed> {
    if curves.is_empty() {
        return Err(Error::InvalidArgument("preprocessing needs at least one curve".into()));
    }
    if template_index >= curves.len() {
        return Err(Error::InvalidArgument(format!(
            "template index {template_index} out of range for {} curves",
            curves.len()
        )));
    }
    let mut out = Vec::with_capacity(curves.len());
    let mut norms = Vec::with_capacity(curves.len());
    for c in curves {
        let mut n = Normalization::identity();
        let mut cur = c.clone();
        if options.center {
            let ctr = cur.centroid();
            n.centroid = [ctr.x, ctr.y];
            cur = center(&cur);
        }
        if options.scale {
            n.scale = cur.length();
            cur = scale_to_unit_length(&cur)?;
        }
        out.push(cur);
        norms.push(n);
    }
    if options.align {
        let template = out[template_index].clone();
        for j in 0..out.len() {
            if j == template_index {
                continue;
            }
            let alignment = if out[j].len() == template.len() {
                rotation_seed_align(&out[j], &template)?
            } else {
                let m = template.len().max(out[j].len());
                let proxy = rotation_seed_align(&out[j].resample_equally_spaced(m)?, &template.resample_equally_spaced(m)?)?;
                let start = out[j].arc_to_xy_param(proxy.shift as f64 * out[j].length() / m as f64);
                let shift = (0..out[j].len())
                    .min_by(|&a, &b| {
                        (out[j].points()[a] - start)
                            .norm()
                            .total_cmp(&(out[j].points()[b] - start).norm())
                    })
                    .expect("non-empty curve");
                AlignmentResult { shift, ..proxy }
            };
            out[j] = alignment.apply(&out[j]);
            norms[j].alignment = alignment;
        }
    }
    Ok(Preprocessed {
        curves: out,
        normalizations: norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, Sampling, Shape};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn rot(theta: f64) -> Matrix2<f64> {
        Matrix2::new(theta.cos(), -theta.sin(), theta.sin(), theta.cos())
    }

    fn square() -> Curve {
        Curve::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ])
        .unwrap()
    }

    fn star(n: usize) -> Curve {
        generate(&Shape::Star { radius: 1.0, amplitude: 0.3, petals: 3 }, n, Sampling::Equal, 0.0, 0).unwrap()
    }

    #[test]
    fn center_triangle() {
        let c = Curve::new(vec![Point::new(0.0, 0.0), Point::new(2.0, 0.0), Point::new(1.0, 3.0)]).unwrap();
        let cc = center(&c);
        assert_eq!(cc.points()[2], Point::new(0.0, 2.0));
        assert!(cc.centroid().coords.norm() < 1e-12);
        assert_eq!(center(&cc), cc);
    }

    #[test]
    fn unit_square_side() {
        let s = scale_to_unit_length(&square()).unwrap();
        assert_abs_diff_eq!(s.segment_length(0), 0.25, epsilon = 1e-15);
        let again = scale_to_unit_length(&s).unwrap();
        for (a, b) in again.points().iter().zip(s.points()) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn square_srvf_directions() {
        let q = srvf(&square());
        let expected = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        for (v, (x, y)) in q.q.iter().zip(expected) {
            assert_eq!(*v, Vector2::new(x, y));
        }
        assert_abs_diff_eq!(q.norm_squared(), 4.0, epsilon = 1e-12);
        let unit = srvf(&scale_to_unit_length(&star(50)).unwrap());
        assert_abs_diff_eq!(unit.norm_squared(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn self_alignment_is_identity() {
        let c = scale_to_unit_length(&center(&star(30))).unwrap();
        let a = rotation_seed_align(&c, &c).unwrap();
        assert_eq!(a.shift, 0);
        assert!((a.rotation - Matrix2::identity()).amax() < 1e-12);
        assert!(a.residual < 1e-12);
    }

    #[test]
    fn quarter_turn_recovered() {
        let template = star(24);
        let target = template.map_points(|p| Point::from(rot(PI / 2.0) * p.coords)).unwrap();
        let a = rotation_seed_align(&target, &template).unwrap();
        assert_eq!(a.shift, 0);
        assert!((a.rotation - rot(-PI / 2.0)).amax() < 1e-8);
    }

    /// Closed-form 2-D Procrustes: the optimal angle is
    /// `atan2(Σ a × b, Σ a · b)`.
    fn brute_force(target: &Curve, template: &Curve) -> (usize, f64, f64) {
        let qa = srvf(target);
        let qb = srvf(template);
        let n = target.len();
        let mut best = (0, 0.0, f64::INFINITY);
        for shift in 0..n {
            let (mut dot, mut cross) = (0.0, 0.0);
            for i in 0..n {
                let a = qa.q[(i + shift) % n] * qa.lengths[(i + shift) % n].sqrt();
                let b = qb.q[i] * qb.lengths[i].sqrt();
                dot += a.dot(&b);
                cross += a.x * b.y - a.y * b.x;
            }
            let theta = cross.atan2(dot);
            let energy: f64 = (0..n)
                .map(|i| {
                    let a = qa.q[(i + shift) % n] * qa.lengths[(i + shift) % n].sqrt();
                    let b = qb.q[i] * qb.lengths[i].sqrt();
                    (rot(theta) * a - b).norm_squared()
                })
                .sum();
            if energy < best.2 {
                best = (shift, theta, energy);
            }
        }
        best
    }

    #[test]
    fn shift_and_rotation_match_brute_force() {
        let template = scale_to_unit_length(&center(&star(20))).unwrap();
        let target = template
            .cyclic_shift(3)
            .map_points(|p| Point::from(rot(PI / 6.0) * p.coords))
            .unwrap();
        let a = rotation_seed_align(&target, &template).unwrap();
        let (shift, theta, energy) = brute_force(&target, &template);
        assert_eq!(a.shift, shift);
        assert!((a.rotation - rot(theta)).amax() < 1e-10);
        assert_abs_diff_eq!(a.residual, energy, epsilon = 1e-10);
        assert!(a.residual < 1e-12);
        assert!((a.rotation - rot(-PI / 6.0)).amax() < 1e-10);
        // applying the alignment reproduces the template
        let back = a.apply(&target);
        for (p, q) in back.points().iter().zip(template.points()) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn noisy_alignment_matches_brute_force() {
        let template = scale_to_unit_length(&center(&star(16))).unwrap();
        let noisy = generate(&Shape::Star { radius: 1.0, amplitude: 0.3, petals: 3 }, 16, Sampling::Equal, 0.03, 5).unwrap();
        let target = center(&noisy)
            .cyclic_shift(5)
            .map_points(|p| Point::from(rot(2.0) * p.coords * 1.7))
            .unwrap();
        let target = scale_to_unit_length(&target).unwrap();
        let a = rotation_seed_align(&target, &template).unwrap();
        let (shift, theta, energy) = brute_force(&target, &template);
        assert_eq!(a.shift, shift);
        assert!((a.rotation - rot(theta)).amax() < 1e-10);
        assert_abs_diff_eq!(a.residual, energy, epsilon = 1e-10);
        assert_abs_diff_eq!(a.rotation.determinant(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn unequal_counts_rejected() {
        assert!(rotation_seed_align(&star(10), &star(11)).is_err());
    }

    #[test]
    fn reflection_excluded() {
        // H with negative determinant: the unconstrained optimum is a reflection
        let h = Matrix2::new(1.0, 0.0, 0.0, -0.5);
        let o = procrustes_rotation(&h);
        assert_abs_diff_eq!(o.determinant(), 1.0, epsilon = 1e-12);
        assert!((o.transpose() * o - Matrix2::identity()).amax() < 1e-12);
        // best proper rotation keeps the dominant direction
        assert!((o - Matrix2::identity()).amax() < 1e-12);
    }

    #[test]
    fn collection_pipeline() {
        let base = star(20);
        let copy = base
            .cyclic_shift(7)
            .map_points(|p| Point::from(rot(1.1) * p.coords * 3.0 + Vector2::new(2.0, -1.0)))
            .unwrap();
        let out = preprocess_collection(&[base, copy], 0, &PreprocessOptions::default()).unwrap();
        assert_eq!(out.normalizations[0].alignment, AlignmentResult::identity());
        assert!(out.normalizations[1].alignment.residual < 1e-12);
        for (p, q) in out.curves[0].points().iter().zip(out.curves[1].points()) {
            assert!((p - q).norm() < 1e-12);
        }
        // restoring recovers the original frame
        let restored = out.normalizations[0].restore_point(&out.curves[0].points()[4]);
        assert!((restored - star(20).points()[4]).norm() < 1e-12);
    }

    #[test]
    fn collection_with_unequal_counts() {
        let a = star(40);
        let b = star(25).map_points(|p| Point::from(rot(0.7) * p.coords)).unwrap();
        let out = preprocess_collection(&[a, b], 0, &PreprocessOptions::default()).unwrap();
        let r = out.normalizations[1].alignment.rotation;
        assert!((r - rot(-0.7)).amax() < 0.1);
        assert_eq!(out.curves[1].len(), 25);
    }
}
