//! Fixed workloads shared by the benchmarks.

use curvegp::geometry::Curve;
use curvegp::synthetic::{generate, Sampling, Shape};
use curvegp::{CurveSamples, TrainingDesign};

/// Noisy three-petal star with `n` equally spaced samples.
pub fn star(n: usize, seed: u64) -> Curve {
    generate(&Shape::Star { radius: 1.0, amplitude: 0.25, petals: 3 }, n, Sampling::Equal, 0.01, seed).expect("valid star")
}

/// Design of `curves` stars with `n` points each.
pub fn star_design(curves: usize, n: usize) -> TrainingDesign {
    let samples: Vec<CurveSamples> = (0..curves).map(|j| CurveSamples::from_curve(&star(n, j as u64), 0)).collect();
    TrainingDesign::new(&samples).expect("valid design")
}
