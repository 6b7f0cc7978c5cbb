//! SVG figure of a predicted curve: mean path, optional truth, observed
//! points and one uncertainty ellipse per grid point.

use std::fmt::Write as _;

use crate::geometry::Point;
use crate::gp::PredictedCurve;

#[derive(Debug, Clone, PartialEq)]
pub struct SvgStyle {
    /// Ellipse semi-axes in standard deviations.
    pub ellipse_k: f64,
    /// Width of the drawing area in pixels; the height follows the data.
    pub width: f64,
    pub mean_color: String,
    pub truth_color: String,
    pub observed_color: String,
    pub ellipse_color: String,
}

impl Default for SvgStyle {
    fn default() -> Self {
        Self {
            ellipse_k: 1.0,
            width: 600.0,
            mean_color: "black".into(),
            truth_color: "gold".into(),
            observed_color: "red".into(),
            ellipse_color: "blue".into(),
        }
    }
}

/// Semi-axes `(a, b)` and rotation (radians, counter-clockwise from +x) of
/// the `k`-sd ellipse of a 2×2 covariance. A diagonal covariance keeps its
/// axes on x and y.
pub fn ellipse_axes(cov: &nalgebra::Matrix2<f64>, k: f64) -> (f64, f64, f64) {
    let (v1, v2, r) = (cov[(0, 0)].max(0.0), cov[(1, 1)].max(0.0), 0.5 * (cov[(0, 1)] + cov[(1, 0)]));
    if r == 0.0 {
        return (k * v1.sqrt(), k * v2.sqrt(), 0.0);
    }
    let mean = 0.5 * (v1 + v2);
    let spread = (0.25 * (v1 - v2).powi(2) + r * r).sqrt();
    let (l1, l2) = (mean + spread, (mean - spread).max(0.0));
    // eigenvector of the larger eigenvalue
    let angle = r.atan2(l1 - v2);
    (k * l1.sqrt(), k * l2.sqrt(), angle)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders the figure. `title` is drawn as a single text line above the
/// plot (typically metric values).
pub fn emit_svg(predicted: &PredictedCurve, observed: &[Point], truth: Option<&[Point]>, title: Option<&str>, style: &SvgStyle) -> String {
    let ellipses: Vec<(f64, f64, f64)> = predicted.covariances.iter().map(|c| ellipse_axes(c, style.ellipse_k)).collect();

    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut extend = |p: &Point, pad: f64| {
        x0 = x0.min(p.x - pad);
        y0 = y0.min(p.y - pad);
        x1 = x1.max(p.x + pad);
        y1 = y1.max(p.y + pad);
    };
    for (p, e) in predicted.means.iter().zip(&ellipses) {
        extend(p, e.0.max(e.1));
    }
    for p in observed.iter().chain(truth.unwrap_or(&[])) {
        extend(p, 0.0);
    }
    if !x0.is_finite() {
        (x0, y0, x1, y1) = (-1.0, -1.0, 1.0, 1.0);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let (pad_x, pad_y) = (0.1 * (x1 - x0).max(1e-3 * span), 0.1 * (y1 - y0).max(1e-3 * span));
    let (x0, x1, y0, y1) = (x0 - pad_x, x1 + pad_x, y0 - pad_y, y1 + pad_y);
    // one scale for both axes keeps the aspect ratio 1:1
    let scale = style.width / (x1 - x0);
    let title_h = if title.is_some() { 24.0 } else { 0.0 };
    let height = (y1 - y0) * scale;
    let tx = |x: f64| (x - x0) * scale;
    let ty = |y: f64| title_h + (y1 - y) * scale;

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.2}" height="{h:.2}" viewBox="0 0 {w:.2} {h:.2}">"#,
        w = style.width,
        h = height + title_h
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="100%" height="100%" fill="white"/>"#);
    if let Some(t) = title {
        let _ = writeln!(
            out,
            r#"<text class="title" x="{:.2}" y="16" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
            style.width / 2.0,
            escape(t)
        );
    }
    let _ = writeln!(out, r#"<g class="ellipses" fill="{}" fill-opacity="0.15" stroke="{}" stroke-width="0.5">"#, style.ellipse_color, style.ellipse_color);
    for (p, (a, b, angle)) in predicted.means.iter().zip(&ellipses) {
        let (cx, cy) = (tx(p.x), ty(p.y));
        // screen y points down, so counter-clockwise data angles flip sign
        let _ = writeln!(
            out,
            r#"<ellipse cx="{cx:.3}" cy="{cy:.3}" rx="{:.3}" ry="{:.3}" transform="rotate({:.3} {cx:.3} {cy:.3})"/>"#,
            a * scale,
            b * scale,
            -angle.to_degrees()
        );
    }
    let _ = writeln!(out, "</g>");
    let path = |pts: &[Point]| {
        let mut d = String::new();
        for (i, p) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.3},{:.3} ", if i == 0 { "M" } else { "L" }, tx(p.x), ty(p.y));
        }
        d.push('Z');
        d
    };
    if let Some(t) = truth {
        if !t.is_empty() {
            let _ = writeln!(out, r#"<path class="truth" d="{}" fill="none" stroke="{}" stroke-width="2"/>"#, path(t), style.truth_color);
        }
    }
    if !predicted.means.is_empty() {
        let _ = writeln!(
            out,
            r#"<path class="mean" d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            path(&predicted.means),
            style.mean_color
        );
    }
    let _ = writeln!(out, r#"<g class="observed" fill="{}">"#, style.observed_color);
    for p in observed {
        let _ = writeln!(out, r#"<circle cx="{:.3}" cy="{:.3}" r="3"/>"#, tx(p.x), ty(p.y));
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(out, "</svg>");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;

    fn pred(covs: Vec<Matrix2<f64>>) -> PredictedCurve {
        let m = covs.len();
        PredictedCurve {
            curve: 0,
            length: 1.0,
            grid: (0..m).map(|i| i as f64 / m as f64).collect(),
            means: (0..m)
                .map(|i| {
                    let t = std::f64::consts::TAU * i as f64 / m as f64;
                    Point::new(t.cos(), t.sin())
                })
                .collect(),
            covariances: covs,
        }
    }

    #[test]
    fn one_ellipse_per_grid_point_and_well_formed() {
        let p = pred(vec![Matrix2::new(0.01, 0.002, 0.002, 0.02); 37]);
        let obs = [Point::new(1.0, 0.0), Point::new(0.0, 1.0)];
        let svg = emit_svg(&p, &obs, Some(&p.means), Some("IMSPE = 1e-3 <ok> & fine"), &SvgStyle::default());
        let doc = roxmltree::Document::parse(&svg).expect("well-formed XML");
        let count = |name: &str| doc.descendants().filter(|n| n.has_tag_name(name)).count();
        assert_eq!(count("ellipse"), 37);
        assert_eq!(count("circle"), 2);
        assert_eq!(count("path"), 2);
        assert_eq!(count("text"), 1);
    }

    #[test]
    fn zero_covariance_gives_zero_radius() {
        let p = pred(vec![Matrix2::zeros(); 5]);
        let svg = emit_svg(&p, &[], None, None, &SvgStyle::default());
        let doc = roxmltree::Document::parse(&svg).unwrap();
        for e in doc.descendants().filter(|n| n.has_tag_name("ellipse")) {
            assert_eq!(e.attribute("rx"), Some("0.000"));
            assert_eq!(e.attribute("ry"), Some("0.000"));
        }
    }

    #[test]
    fn diagonal_covariance_is_axis_aligned() {
        let (a, b, angle) = ellipse_axes(&Matrix2::new(0.04, 0.0, 0.0, 0.01), 1.0);
        assert_eq!((a, b, angle), (0.2, 0.1, 0.0));
        let (a, b, angle) = ellipse_axes(&Matrix2::new(0.01, 0.0, 0.0, 0.04), 2.0);
        assert_eq!((a, b, angle), (0.2, 0.4, 0.0));
    }

    #[test]
    fn correlated_axes_follow_eigenvectors() {
        // eigenvalues 3 and 1 along the diagonals
        let (a, b, angle) = ellipse_axes(&Matrix2::new(2.0, 1.0, 1.0, 2.0), 1.0);
        assert!((a - 3f64.sqrt()).abs() < 1e-12);
        assert!((b - 1.0).abs() < 1e-12);
        assert!((angle - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }
}
