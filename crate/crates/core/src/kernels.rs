//! Periodic stationary covariance kernels on arc-length inputs.
//!
//! The canonical periodic kernel is
//!
//! `k(s, s') = σ² exp(-sin²(π r / τ) / ρ)`, with `r = |s - s'|`.
//!
//! The Matérn variants map both inputs onto a circle of circumference `τ` and
//! apply the Matérn base kernel (length scale `ρ`) to the chordal distance
//! `d = 2 |sin(π r / τ)|`. Composing a positive-definite kernel on `R²` with an
//! embedding keeps the result positive semi-definite, and every family is
//! exactly `τ`-periodic.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    PeriodicRbf,
    PeriodicMatern32,
    PeriodicMatern12,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] = [
        KernelFamily::PeriodicRbf,
        KernelFamily::PeriodicMatern32,
        KernelFamily::PeriodicMatern12,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::PeriodicRbf => "periodic-rbf",
            KernelFamily::PeriodicMatern32 => "periodic-matern32",
            KernelFamily::PeriodicMatern12 => "periodic-matern12",
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown kernel family '{s}' (expected periodic-rbf, periodic-matern32 or periodic-matern12)"
                ))
            })
    }
}

/// Hyperparameters of a periodic kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicKernel {
    pub family: KernelFamily,
    pub sigma2: f64,
    pub rho: f64,
    pub tau: f64,
}

impl PeriodicKernel {
    pub fn new(family: KernelFamily, sigma2: f64, rho: f64, tau: f64) -> Result<Self> {
        let k = Self {
            family,
            sigma2,
            rho,
            tau,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma2", self.sigma2), ("rho", self.rho), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidHyperparameters(format!(
                    "{name} = {v} must be positive and finite"
                )));
            }
        }
        Ok(())
    }

    pub fn eval(&self, s: f64, t: f64) -> f64 {
        self.eval_distance((s - t).abs())
    }

    pub fn eval_distance(&self, r: f64) -> f64 {
        self.sigma2 * self.correlation(r).0
    }

    /// Unit-variance correlation at input distance `r` together with its
    /// derivative with respect to `ln ρ`.
    pub(crate) fn correlation(&self, r: f64) -> (f64, f64) {
        // fold into [0, τ/2] first so whole periods cancel exactly
        let r = r.rem_euclid(self.tau);
        let r = r.min(self.tau - r);
        let sine = (PI * r / self.tau).sin();
        match self.family {
            KernelFamily::PeriodicRbf => {
                let u = sine * sine / self.rho;
                let k = (-u).exp();
                (k, u * k)
            }
            KernelFamily::PeriodicMatern32 => {
                let a = 3f64.sqrt() * 2.0 * sine.abs() / self.rho;
                let e = (-a).exp();
                ((1.0 + a) * e, a * a * e)
            }
            KernelFamily::PeriodicMatern12 => {
                let a = 2.0 * sine.abs() / self.rho;
                let e = (-a).exp();
                (e, a * e)
            }
        }
    }

    /// Lower and upper bounds on the canonical periodic kernel for inputs
    /// closer than half the curve length `length`:
    ///
    /// `σ²(1 - π²ℓ²/(4ρτ²)) ≤ k ≤ σ²(1 + (2π⁴/(ρ²τ⁴) + 4π⁴/(3ρτ⁴)) ℓ⁴ / 64)`.
    ///
    /// The lower bound may be negative, in which case it is vacuous.
    pub fn value_bounds(&self, length: f64) -> (f64, f64) {
        let (s2, rho, tau) = (self.sigma2, self.rho, self.tau);
        let pi2 = PI * PI;
        let pi4 = pi2 * pi2;
        let tau2 = tau * tau;
        let tau4 = tau2 * tau2;
        let l2 = length * length;
        let lower = s2 * (1.0 - pi2 * l2 / (4.0 * rho * tau2));
        let upper = s2 * (1.0 + (2.0 * pi4 / (rho * rho * tau4) + 4.0 * pi4 / (3.0 * rho * tau4)) * l2 * l2 / 64.0);
        (lower, upper)
    }
}

/// Numerical stabilisation added to every Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "variance", rename_all = "kebab-case")]
pub enum Jitter {
    /// Constant kernel `c` added to the input kernel (before any
    /// coregionalization factors).
    Constant(f64),
    /// Diagonal nugget added to every observation.
    Nugget(f64),
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter::Constant(1e-3)
    }
}

impl Jitter {
    pub fn constant(&self) -> f64 {
        match *self {
            Jitter::Constant(c) => c,
            Jitter::Nugget(_) => 0.0,
        }
    }

    pub fn nugget(&self) -> f64 {
        match *self {
            Jitter::Constant(_) => 0.0,
            Jitter::Nugget(v) => v,
        }
    }
}

/// Observation noise and its admissible range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Noise variance per coordinate (x, y). Equal entries when shared.
    pub variance: [f64; 2],
    /// Whether x and y share a single variance during fitting.
    pub shared: bool,
    /// Box for the noise variance.
    pub bounds: (f64, f64),
    pub jitter: Jitter,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            variance: [1e-5; 2],
            shared: true,
            bounds: (1e-6, 1e-4),
            jitter: Jitter::default(),
        }
    }
}

impl NoiseSpec {
    pub fn shared(variance: f64) -> Self {
        Self {
            variance: [variance; 2],
            ..Self::default()
        }
    }

    pub fn with_jitter(mut self, jitter: Jitter) -> Self {
        self.jitter = jitter;
        self
    }
}

/// Gram matrix `[k(s_i, s_j)]` of a single-output periodic kernel plus the
/// jitter terms.
pub fn gram(kernel: &PeriodicKernel, jitter: Jitter, inputs: &[f64]) -> DMatrix<f64> {
    let n = inputs.len();
    let c = jitter.constant();
    let nugget = jitter.nugget();
    DMatrix::from_fn(n, n, |i, j| {
        let mut v = kernel.eval(inputs[i], inputs[j]) + c;
        if i == j {
            v += nugget;
        }
        v
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub detail: String,
    pub severity: Severity,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub violations: Vec<Violation>,
}

impl ConstraintReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// Fails on the first violation of `Error` severity.
    pub fn into_result(self) -> Result<Self> {
        match self.violations.iter().find(|v| v.severity == Severity::Error) {
            Some(v) => Err(Error::Validation(format!("{}: {}", v.rule, v.detail))),
            None => Ok(self),
        }
    }
}

/// Which rules are fatal when checking hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintPolicy {
    pub period_within_length: Severity,
    pub length_scale_within_half_period: Severity,
    pub noise_in_box: Severity,
}

impl Default for ConstraintPolicy {
    fn default() -> Self {
        Self {
            period_within_length: Severity::Warning,
            length_scale_within_half_period: Severity::Warning,
            noise_in_box: Severity::Error,
        }
    }
}

const RULE_TOL: f64 = 1e-12;

/// Checks `τ ≤ ℓ`, `ρ ≤ τ/2` and that the noise variance lies in its box.
pub fn validate_constraints(
    kernel: &PeriodicKernel,
    noise: &NoiseSpec,
    length_estimate: f64,
    policy: &ConstraintPolicy,
) -> ConstraintReport {
    let mut violations = Vec::new();
    if kernel.tau > length_estimate * (1.0 + RULE_TOL) {
        violations.push(Violation {
            rule: "tau <= length".into(),
            detail: format!("period {} exceeds curve length {}", kernel.tau, length_estimate),
            severity: policy.period_within_length,
        });
    }
    if kernel.rho > 0.5 * kernel.tau * (1.0 + RULE_TOL) {
        violations.push(Violation {
            rule: "rho <= tau/2".into(),
            detail: format!("length scale {} exceeds half the period {}", kernel.rho, 0.5 * kernel.tau),
            severity: policy.length_scale_within_half_period,
        });
    }
    let (lo, hi) = noise.bounds;
    for (d, v) in noise.variance.iter().enumerate() {
        if *v < lo * (1.0 - RULE_TOL) || *v > hi * (1.0 + RULE_TOL) {
            violations.push(Violation {
                rule: "noise variance in box".into(),
                detail: format!("coordinate {d} noise variance {v} outside [{lo}, {hi}]"),
                severity: policy.noise_in_box,
            });
        }
    }
    ConstraintReport { violations }
}
