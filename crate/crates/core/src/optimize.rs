//! Box-constrained minimisation used for hyperparameter fitting.
//!
//! [`minimize_box`] is a projected limited-memory BFGS: the quasi-Newton
//! direction is computed on the variables that are not pinned at a bound, and
//! a backtracking Armijo search runs along the projected path. This is the
//! same working-set idea as L-BFGS-B without its Cauchy-point machinery, which
//! is plenty for the handful of hyperparameters a curve model has.
//!
//! [`anneal`] is a simple simulated-annealing global search over the box,
//! finished with a local [`minimize_box`] polish.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Objective returning value and gradient, or `None` where it cannot be
/// evaluated (e.g. a failed factorization).
pub trait Objective {
    fn evaluate(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    fn evaluate(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        debug_assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u));
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the infinity norm of the projected gradient drops below this.
    pub gradient_tolerance: f64,
    /// Stop when the relative decrease of the objective drops below this.
    pub value_tolerance: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 8,
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            value_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn projected_gradient(x: &[f64], g: &[f64], bounds: &Bounds) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .map(|((xi, gi), (l, u))| {
            if (*xi <= *l && *gi > 0.0) || (*xi >= *u && *gi < 0.0) {
                0.0
            } else {
                *gi
            }
        })
        .collect()
}

/// Two-loop recursion on the free variables only.
fn lbfgs_direction(pg: &[f64], free: &[bool], history: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(x, f)| if *f { *x } else { 0.0 }).collect() };
    let mut q = mask(pg);
    let pairs: Vec<(Vec<f64>, Vec<f64>, f64)> = history
        .iter()
        .filter_map(|(s, y)| {
            let (s, y) = (mask(s), mask(y));
            let sy = dot(&s, &y);
            (sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0).then(|| (s, y, 1.0 / sy))
        })
        .collect();
    let mut alphas = vec![0.0; pairs.len()];
    for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[k] = a;
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
    }
    if let Some((s, y, _)) = pairs.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (k, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (alphas[k] - b) * si);
    }
    q.iter().map(|v| -v).collect()
}

/// Minimises `objective` over `bounds` starting from `x0` (projected into the
/// box). Returns `None` when the objective cannot be evaluated at the start.
pub fn minimize_box(objective: &mut impl Objective, x0: &[f64], bounds: &Bounds, config: &LbfgsConfig) -> Option<Minimum> {
    let n = bounds.dim();
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let (mut f, mut g) = objective.evaluate(&x)?;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(config.memory);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iterations {
        let pg = projected_gradient(&x, &g, bounds);
        if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) < config.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let free: Vec<bool> = pg.iter().map(|v| *v != 0.0).collect();

        let mut step = None;
        for steepest in [false, true] {
            let mut d = if steepest || history.is_empty() {
                pg.iter().map(|v| -v).collect::<Vec<_>>()
            } else {
                lbfgs_direction(&pg, &free, &history)
            };
            if dot(&d, &pg) >= 0.0 {
                d = pg.iter().map(|v| -v).collect();
            }
            let mut alpha = if history.is_empty() {
                (1.0 / dot(&pg, &pg).sqrt()).min(1.0)
            } else {
                1.0
            };
            for _ in 0..40 {
                let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
                bounds.project(&mut trial);
                let delta: Vec<f64> = trial.iter().zip(&x).map(|(t, xi)| t - xi).collect();
                let decrease = dot(&g, &delta);
                if decrease >= 0.0 && delta.iter().all(|v| *v == 0.0) {
                    break;
                }
                if let Some((ft, gt)) = objective.evaluate(&trial) {
                    if ft.is_finite() && ft <= f + 1e-4 * decrease.min(0.0) {
                        step = Some((trial, ft, gt));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if step.is_some() || history.is_empty() {
                break;
            }
            history.clear();
        }

        let Some((x_new, f_new, g_new)) = step else {
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 {
            if history.len() == config.memory {
                history.pop_front();
            }
            history.push_back((s, y));
        }
        let rel = (f - f_new).abs() / f.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        if rel < config.value_tolerance {
            converged = true;
            break;
        }
    }
    debug_assert_eq!(x.len(), n);
    Some(Minimum {
        x,
        value: f,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    pub iterations: usize,
    /// Initial temperature relative to `max(1, |f(x0)|)`.
    pub initial_temperature: f64,
    pub cooling: f64,
    /// Proposal standard deviation as a fraction of each box width.
    pub step: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            initial_temperature: 0.1,
            cooling: 0.998,
            step: 0.1,
        }
    }
}

/// Simulated annealing over the box followed by a local polish.
pub fn anneal<R: Rng>(
    objective: &mut impl Objective,
    x0: &[f64],
    bounds: &Bounds,
    config: &AnnealConfig,
    local: &LbfgsConfig,
    rng: &mut R,
) -> Option<Minimum> {
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let (mut f, _) = objective.evaluate(&x)?;
    let mut best = (x.clone(), f);
    let mut temperature = config.initial_temperature * f.abs().max(1.0);
    for _ in 0..config.iterations {
        let mut trial = x.clone();
        for (i, v) in trial.iter_mut().enumerate() {
            let width = bounds.upper[i] - bounds.lower[i];
            let z: f64 = StandardNormal.sample(rng);
            *v += config.step * width * z;
            // reflect back into the box
            if *v < bounds.lower[i] {
                *v = 2.0 * bounds.lower[i] - *v;
            }
            if *v > bounds.upper[i] {
                *v = 2.0 * bounds.upper[i] - *v;
            }
        }
        bounds.project(&mut trial);
        if let Some((ft, _)) = objective.evaluate(&trial) {
            if ft.is_finite() {
                let accept = ft < f || rng.random::<f64>() < (-(ft - f) / temperature).exp();
                if accept {
                    x = trial;
                    f = ft;
                    if f < best.1 {
                        best = (x.clone(), f);
                    }
                }
            }
        }
        temperature *= config.cooling;
    }
    let polished = minimize_box(objective, &best.0, bounds, local)?;
    Some(if polished.value <= best.1 {
        polished
    } else {
        Minimum {
            x: best.0,
            value: best.1,
            iterations: config.iterations,
            converged: false,
        }
    })
}
