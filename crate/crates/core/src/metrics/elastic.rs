//! Elastic registration of closed curves and the elastic shape distance.
//!
//! Both curves are scaled to unit length, so their SRVFs are unit tangents
//! with unit `L²` norm, piecewise constant between normalized arc-length
//! breakpoints. The registration energy
//!
//! `E(O, γ, seed) = ‖q₁ - O (q₂ ∘ γ) √γ̇‖² = 2 - 2 ⟨q₁, O (q₂ ∘ γ) √γ̇⟩`
//!
//! is minimized by alternating an exhaustive seed search with a Procrustes
//! rotation (γ fixed) and a dynamic program over piecewise-linear γ
//! (rotation and seed fixed). Every inner product is integrated exactly.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Curve;
use crate::preprocess::procrustes_rotation;

/// Score gains below this (relative) do not move the seed, so symmetric
/// shapes keep the smallest seed.
const TIE_TOLERANCE: f64 = 1e-12;

/// Slopes between 1/3 and 3 in grid units.
pub const DEFAULT_STEPS: [(usize, usize); 7] = [(1, 1), (1, 2), (2, 1), (1, 3), (3, 1), (2, 3), (3, 2)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticOptions {
    /// Nodes of the common resampling grid. `None` uses the polygons as
    /// given when their counts agree, and the larger count otherwise.
    pub grid: Option<usize>,
    pub max_rounds: usize,
    pub tolerance: f64,
    pub steps: Vec<(usize, usize)>,
    /// Intervals of the uniform grid on which γ is reported.
    pub gamma_grid: usize,
}

impl Default for ElasticOptions {
    fn default() -> Self {
        Self {
            grid: None,
            max_rounds: 20,
            tolerance: 1e-8,
            steps: DEFAULT_STEPS.to_vec(),
            gamma_grid: 100,
        }
    }
}

/// Result of registering `source` onto `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub rotation: [[f64; 2]; 2],
    /// `γ(u_i)` at `u_i = i / gamma_grid` in normalized arc length
    /// (multiply by ℓ for the unnormalized map).
    pub gamma: Vec<f64>,
    /// Source vertex used as the seed.
    pub shift: usize,
    /// Final `‖q₁ - O (q₂ ∘ γ) √γ̇‖²`.
    pub energy: f64,
    /// `⟨q₁, O (q₂ ∘ γ) √γ̇⟩`.
    pub score: f64,
    pub rounds: usize,
    pub converged: bool,
    /// Energy after each half-step of the alternation.
    pub energy_trace: Vec<f64>,
}

impl Registration {
    pub fn rotation_matrix(&self) -> Matrix2<f64> {
        let r = self.rotation;
        Matrix2::new(r[0][0], r[0][1], r[1][0], r[1][1])
    }

    /// Elastic shape distance `arccos ⟨q₁, O (q₂ ∘ γ) √γ̇⟩` in `[0, π]`,
    /// evaluated as `2 asin(√E / 2)` from the energy for accuracy near zero.
    pub fn distance(&self) -> f64 {
        2.0 * (0.5 * self.energy.max(0.0).sqrt()).min(1.0).asin()
    }
}

/// Piecewise-constant SRVF of a unit-length polygon.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PiecewiseSrvf {
    /// `n + 1` normalized arc-length breakpoints from 0 to 1.
    pub breaks: Vec<f64>,
    pub q: Vec<Vector2<f64>>,
}

impl PiecewiseSrvf {
    pub fn new(curve: &Curve) -> Self {
        let n = curve.len();
        let l = curve.length();
        let mut breaks = Vec::with_capacity(n + 1);
        breaks.extend(curve.arc_params().iter().map(|s| s / l));
        breaks.push(1.0);
        let q = (0..n)
            .map(|i| {
                let (a, b) = curve.segment(i);
                (b - a) / curve.segment_length(i)
            })
            .collect();
        Self { breaks, q }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }
}

/// `H = ∫ √γ̇ · q₂(γ(t)) q₁(t)ᵀ dt` over one edge of a path, where γ maps
/// `[t₁[i0], t₁[i1]]` linearly onto `[t₂[j0], t₂[j1]]`. The edge score for a
/// rotation `O` is `tr(O H)`.
pub(crate) fn edge_h(q1: &PiecewiseSrvf, i0: usize, i1: usize, q2: &PiecewiseSrvf, j0: usize, j1: usize) -> Matrix2<f64> {
    let mut h = Matrix2::zeros();
    for_each_piece(q1, i0, i1, q2, j0, j1, |a, b, dt, sqrt_slope| h += b * a.transpose() * (dt * sqrt_slope));
    h
}

/// Visits the pieces of one path edge on which both SRVFs are constant,
/// passing `(q₁, q₂, piece length, √γ̇)`.
fn for_each_piece(
    q1: &PiecewiseSrvf,
    i0: usize,
    i1: usize,
    q2: &PiecewiseSrvf,
    j0: usize,
    j1: usize,
    mut f: impl FnMut(&Vector2<f64>, &Vector2<f64>, f64, f64),
) {
    let (a, b) = (q1.breaks[i0], q1.breaks[i1]);
    let (c, d) = (q2.breaks[j0], q2.breaks[j1]);
    let inv_slope = (b - a) / (d - c);
    let sqrt_slope = ((d - c) / (b - a)).sqrt();
    let (mut p, mut r, mut t) = (i0, j0, a);
    while p < i1 && r < j1 {
        let next1 = if p + 1 == i1 { b } else { q1.breaks[p + 1] };
        let next2 = if r + 1 == j1 { b } else { a + (q2.breaks[r + 1] - c) * inv_slope };
        let nt = next1.min(next2);
        f(&q1.q[p], &q2.q[r], nt - t, sqrt_slope);
        t = nt;
        if next1 <= nt {
            p += 1;
        }
        if next2 <= nt {
            r += 1;
        }
    }
}

/// `‖q₁ - O (q₂ ∘ γ) √γ̇‖²` integrated exactly along a node path. Equal to
/// `2 - 2 tr(O H)` but free of cancellation when the curves nearly match.
pub(crate) fn path_residual(q1: &PiecewiseSrvf, q2: &PiecewiseSrvf, rotation: &Matrix2<f64>, path: &[(usize, usize)]) -> f64 {
    let mut e = 0.0;
    for w in path.windows(2) {
        for_each_piece(q1, w[0].0, w[1].0, q2, w[0].1, w[1].1, |a, b, dt, sqrt_slope| {
            e += (a - rotation * b * sqrt_slope).norm_squared() * dt;
        });
    }
    e
}

/// Accumulated `H` along a node path.
pub(crate) fn path_h(q1: &PiecewiseSrvf, q2: &PiecewiseSrvf, path: &[(usize, usize)]) -> Matrix2<f64> {
    path.windows(2)
        .fold(Matrix2::zeros(), |acc, w| acc + edge_h(q1, w[0].0, w[1].0, q2, w[0].1, w[1].1))
}

/// Highest-scoring monotone node path from `(0, 0)` to `(n₁, n₂)` for a
/// fixed rotation. Returns `None` when no path fits the step set.
pub(crate) fn dp_path(
    q1: &PiecewiseSrvf,
    q2: &PiecewiseSrvf,
    rotation: &Matrix2<f64>,
    steps: &[(usize, usize)],
) -> Option<(Vec<(usize, usize)>, f64)> {
    let (n1, n2) = (q1.len(), q2.len());
    let idx = |i: usize, j: usize| i * (n2 + 1) + j;
    let mut score = vec![f64::NEG_INFINITY; (n1 + 1) * (n2 + 1)];
    let mut from = vec![usize::MAX; (n1 + 1) * (n2 + 1)];
    score[0] = 0.0;
    for i in 1..=n1 {
        for j in 1..=n2 {
            let mut best = f64::NEG_INFINITY;
            let mut arg = usize::MAX;
            for &(di, dj) in steps {
                if di > i || dj > j {
                    continue;
                }
                let (pi, pj) = (i - di, j - dj);
                let prev = score[idx(pi, pj)];
                if prev == f64::NEG_INFINITY {
                    continue;
                }
                let v = prev + (rotation * edge_h(q1, pi, i, q2, pj, j)).trace();
                if v > best {
                    best = v;
                    arg = idx(pi, pj);
                }
            }
            score[idx(i, j)] = best;
            from[idx(i, j)] = arg;
        }
    }
    let end = idx(n1, n2);
    if score[end] == f64::NEG_INFINITY {
        return None;
    }
    let mut path = vec![(n1, n2)];
    let mut k = end;
    while k != 0 {
        k = from[k];
        path.push((k / (n2 + 1), k % (n2 + 1)));
    }
    path.reverse();
    Some((path, score[end]))
}

fn gamma_on_grid(q1: &PiecewiseSrvf, q2: &PiecewiseSrvf, path: &[(usize, usize)], m: usize) -> Vec<f64> {
    let xs: Vec<f64> = path.iter().map(|&(i, _)| q1.breaks[i]).collect();
    let ys: Vec<f64> = path.iter().map(|&(_, j)| q2.breaks[j]).collect();
    let mut k = 0;
    (0..=m)
        .map(|g| {
            let u = g as f64 / m as f64;
            while k + 2 < xs.len() && xs[k + 1] <= u {
                k += 1;
            }
            let w = ((u - xs[k]) / (xs[k + 1] - xs[k])).clamp(0.0, 1.0);
            ys[k] + w * (ys[k + 1] - ys[k])
        })
        .collect()
}

/// Registers `source` onto `target` by alternating seed + rotation and
/// re-parameterization steps until the energy decrease falls below the
/// tolerance or the round limit is reached.
pub fn elastic_register(source: &Curve, target: &Curve, options: &ElasticOptions) -> Result<Registration> {
    if options.steps.is_empty() || options.steps.iter().any(|&(a, b)| a == 0 || b == 0) {
        return Err(Error::InvalidArgument("DP steps must be non-empty with positive increments".into()));
    }
    if options.gamma_grid == 0 {
        return Err(Error::InvalidArgument("gamma grid must be positive".into()));
    }
    let direct = options.grid.is_none() && source.len() == target.len();
    let n = options.grid.unwrap_or(source.len().max(target.len()));
    if n < 3 {
        return Err(Error::InvalidArgument(format!("registration grid needs at least 3 nodes, got {n}")));
    }
    let q1 = if direct {
        PiecewiseSrvf::new(target)
    } else {
        PiecewiseSrvf::new(&target.resample_equally_spaced(n)?)
    };
    // seeds at every source vertex
    let seeds: Vec<PiecewiseSrvf> = (0..source.len())
        .map(|k| -> Result<PiecewiseSrvf> {
            Ok(if direct {
                PiecewiseSrvf::new(&source.cyclic_shift(k))
            } else {
                PiecewiseSrvf::new(&source.resample_from(source.arc_params()[k], n)?)
            })
        })
        .collect::<Result<_>>()?;

    let mut path: Vec<(usize, usize)> = (0..=n).map(|i| (i, i)).collect();
    let mut seed = 0;
    let mut rotation: Matrix2<f64> = Matrix2::identity();
    let mut score = (rotation * path_h(&q1, &seeds[0], &path)).trace();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut rounds = 0;
    while rounds < options.max_rounds {
        rounds += 1;
        let before = 2.0 - 2.0 * score;

        // seed and rotation with γ fixed; ties keep the smallest seed
        for (k, q2) in seeds.iter().enumerate() {
            let h = path_h(&q1, q2, &path);
            let o = procrustes_rotation(&h);
            let s = (o * h).trace();
            let better = s > score + TIE_TOLERANCE * score.abs().max(1.0);
            if better || (k == seed && s >= score) {
                score = s;
                seed = k;
                rotation = o;
            }
        }
        trace.push(2.0 - 2.0 * score);

        // re-parameterization with seed and rotation fixed
        let (p, s) = dp_path(&q1, &seeds[seed], &rotation, &options.steps)
            .ok_or_else(|| Error::Numerical("no admissible re-parameterization for the step set".into()))?;
        if s > score {
            score = s;
            path = p;
        }
        let after = 2.0 - 2.0 * score;
        trace.push(after);
        if before - after < options.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("elastic registration stopped after {rounds} rounds without converging");
    }
    let gamma = gamma_on_grid(&q1, &seeds[seed], &path, options.gamma_grid);
    let energy = path_residual(&q1, &seeds[seed], &rotation, &path);
    Ok(Registration {
        rotation: [[rotation[(0, 0)], rotation[(0, 1)]], [rotation[(1, 0)], rotation[(1, 1)]]],
        gamma,
        shift: seed,
        energy,
        score,
        rounds,
        converged,
        energy_trace: trace,
    })
}

/// Elastic shape distance with default options.
pub fn esd(c1: &Curve, c2: &Curve) -> Result<f64> {
    esd_with(c1, c2, &ElasticOptions::default())
}

pub fn esd_with(c1: &Curve, c2: &Curve, options: &ElasticOptions) -> Result<f64> {
    Ok(elastic_register(c2, c1, options)?.distance())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::synthetic::{generate, Sampling, Shape};
    use approx::assert_abs_diff_eq;

    fn star(n: usize) -> Curve {
        generate(&Shape::Star { radius: 1.0, amplitude: 0.3, petals: 3 }, n, Sampling::Equal, 0.0, 0).unwrap()
    }

    fn circle(n: usize) -> Curve {
        generate(&Shape::Circle { radius: 1.0 }, n, Sampling::Equal, 0.0, 0).unwrap()
    }

    fn ellipse(n: usize) -> Curve {
        generate(&Shape::Ellipse { a: 2.0, b: 1.0 }, n, Sampling::Equal, 0.0, 0).unwrap()
    }

    /// Midpoint-rule approximation of `∫ √γ̇ q₂(γ(t)) q₁(t)ᵀ dt` for a
    /// piecewise-linear γ through the path nodes.
    fn quadrature_h(q1: &PiecewiseSrvf, q2: &PiecewiseSrvf, path: &[(usize, usize)], samples: usize) -> Matrix2<f64> {
        let lookup = |s: &PiecewiseSrvf, t: f64| {
            let k = s.breaks.partition_point(|&b| b <= t).saturating_sub(1).min(s.len() - 1);
            s.q[k]
        };
        let mut h = Matrix2::zeros();
        for w in path.windows(2) {
            let (a, b) = (q1.breaks[w[0].0], q1.breaks[w[1].0]);
            let (c, d) = (q2.breaks[w[0].1], q2.breaks[w[1].1]);
            let slope = (d - c) / (b - a);
            let dt = (b - a) / samples as f64;
            for k in 0..samples {
                let t = a + (k as f64 + 0.5) * dt;
                h += lookup(q2, c + (t - a) * slope) * lookup(q1, t).transpose() * (slope.sqrt() * dt);
            }
        }
        h
    }

    #[test]
    fn edge_integral_matches_quadrature() {
        let q1 = PiecewiseSrvf::new(&ellipse(9));
        let q2 = PiecewiseSrvf::new(&star(9));
        let path = vec![(0, 0), (1, 2), (4, 3), (5, 6), (7, 7), (9, 9)];
        let exact = path_h(&q1, &q2, &path);
        let approx = quadrature_h(&q1, &q2, &path, 20_000);
        assert!((exact - approx).amax() < 1e-4, "{exact} vs {approx}");
    }

    #[test]
    fn identity_path_norm_is_one() {
        let q = PiecewiseSrvf::new(&star(40));
        let path: Vec<_> = (0..=40).map(|i| (i, i)).collect();
        assert_abs_diff_eq!(path_h(&q, &q, &path).trace(), 1.0, epsilon = 1e-12);
    }

    fn enumerate_paths(
        q1: &PiecewiseSrvf,
        q2: &PiecewiseSrvf,
        o: &Matrix2<f64>,
        at: (usize, usize),
        acc: f64,
        best: &mut f64,
    ) {
        let (n1, n2) = (q1.len(), q2.len());
        if at == (n1, n2) {
            *best = best.max(acc);
            return;
        }
        for &(di, dj) in &DEFAULT_STEPS {
            let (i, j) = (at.0 + di, at.1 + dj);
            if i <= n1 && j <= n2 {
                let s = (o * edge_h(q1, at.0, i, q2, at.1, j)).trace();
                enumerate_paths(q1, q2, o, (i, j), acc + s, best);
            }
        }
    }

    #[test]
    fn dp_matches_exhaustive_paths() {
        let q1 = PiecewiseSrvf::new(&circle(8));
        let q2 = PiecewiseSrvf::new(&ellipse(8));
        for theta in [0.0, 0.4, 2.0] {
            let o = Matrix2::new(f64::cos(theta), -f64::sin(theta), f64::sin(theta), f64::cos(theta));
            let (path, s) = dp_path(&q1, &q2, &o, &DEFAULT_STEPS).unwrap();
            let mut best = f64::NEG_INFINITY;
            enumerate_paths(&q1, &q2, &o, (0, 0), 0.0, &mut best);
            assert_abs_diff_eq!(s, best, epsilon = 1e-12);
            assert_abs_diff_eq!((o * path_h(&q1, &q2, &path)).trace(), s, epsilon = 1e-12);
        }
    }

    #[test]
    fn self_registration() {
        let c = star(60);
        let r = elastic_register(&c, &c, &ElasticOptions::default()).unwrap();
        assert_eq!(r.shift, 0);
        assert!(r.energy.abs() < 1e-12);
        assert!((r.rotation_matrix() - Matrix2::identity()).amax() < 1e-12);
        let step = 1.0 / r.gamma.len() as f64;
        for (i, g) in r.gamma.iter().enumerate() {
            assert!((g - i as f64 / (r.gamma.len() - 1) as f64).abs() < step);
        }
        assert_eq!(esd(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn residual_energy_matches_score() {
        let (a, b) = (star(30), circle(30));
        let r = elastic_register(&a, &b, &ElasticOptions::default()).unwrap();
        assert_abs_diff_eq!(r.energy, 2.0 - 2.0 * r.score, epsilon = 1e-12);
        assert_abs_diff_eq!(r.distance(), r.score.acos(), epsilon = 1e-9);
    }

    #[test]
    fn rigid_copy_registers_to_zero() {
        let c = star(100);
        let copy = c
            .cyclic_shift(17)
            .map_points(|p| {
                let (s, co) = 0.8f64.sin_cos();
                Point::new(2.5 * (co * p.x - s * p.y) + 3.0, 2.5 * (s * p.x + co * p.y) - 1.0)
            })
            .unwrap();
        let r = elastic_register(&copy, &c, &ElasticOptions::default()).unwrap();
        assert!(r.energy < 1e-10);
        assert!(r.distance() < 1e-2);
    }

    #[test]
    fn energy_trace_non_increasing() {
        let r = elastic_register(&ellipse(50), &star(50), &ElasticOptions::default()).unwrap();
        for w in r.energy_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", r.energy_trace);
        }
        assert!(r.energy >= 0.0);
        for w in r.gamma.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert_eq!(r.gamma[0], 0.0);
        assert_abs_diff_eq!(*r.gamma.last().unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn circle_ellipse_distance_stable() {
        let d100 = esd(&circle(100), &ellipse(100)).unwrap();
        let d200 = esd(&circle(200), &ellipse(200)).unwrap();
        assert!(d100 > 0.1, "{d100}");
        assert!(((d100 - d200) / d100).abs() < 0.05, "{d100} vs {d200}");
    }

    #[test]
    fn registration_beats_unregistered() {
        let (c, e) = (circle(100), ellipse(100));
        let identity: Vec<_> = (0..=100).map(|i| (i, i)).collect();
        let unregistered = 2.0 - 2.0 * path_h(&PiecewiseSrvf::new(&c), &PiecewiseSrvf::new(&e), &identity).trace();
        let r = elastic_register(&e, &c, &ElasticOptions::default()).unwrap();
        assert!(r.energy < unregistered, "{} vs {unregistered}", r.energy);
    }

    #[test]
    fn unequal_counts_resampled() {
        let d = esd(&star(80), &star(120)).unwrap();
        assert!(d < 0.05, "{d}");
    }
}
