//! Exact Gaussian process regression over closed-curve designs.
//!
//! A design stacks, for every curve `j` and sample point `i`, two scalar
//! observations (x and y) at the same arc parameter. The covariance between
//! two observations is the separable kernel of [`MultiLevelKernel`] plus a
//! constant jitter kernel on the input level; observation noise is added on
//! the diagonal. Hyperparameters are fitted by maximising the log marginal
//! likelihood with a multi-start box-constrained quasi-Newton search.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coreg::{CoregMatrix, MultiLevelKernel, Site};
use crate::error::{Error, Result};
use crate::geometry::{Curve, Point};
use crate::kernels::{validate_constraints, ConstraintPolicy, ConstraintReport, KernelFamily, NoiseSpec, PeriodicKernel};
use crate::optimize::{anneal, minimize_box, AnnealConfig, Bounds, LbfgsConfig};

/// Diagonal additions tried in turn when a factorization fails.
pub const JITTER_LADDER: [f64; 3] = [1e-8, 1e-6, 1e-4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub site: Site,
    pub y: f64,
}

/// Observed sample points of one curve together with their arc parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSamples {
    pub points: Vec<Point>,
    pub params: Vec<f64>,
    /// Length of the parameter domain `[0, ℓ)`.
    pub length: f64,
    pub group: usize,
}

impl CurveSamples {
    /// Parameterizes the curve by its own enclosed polygon.
    pub fn from_curve(curve: &Curve, group: usize) -> Self {
        Self {
            points: curve.points().to_vec(),
            params: curve.arc_params().to_vec(),
            length: curve.length(),
            group,
        }
    }

    /// Parameterizes the points of `curve` by projecting them onto
    /// `reference` (useful when `curve` is only partially observed).
    pub fn against_reference(curve: &Curve, reference: &Curve, oversampling: usize, group: usize) -> Self {
        Self {
            points: curve.points().to_vec(),
            params: curve
                .points()
                .iter()
                .map(|p| reference.xy_to_arc_param(p, oversampling))
                .collect(),
            length: reference.length(),
            group,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            params: indices.iter().map(|&i| self.params[i]).collect(),
            length: self.length,
            group: self.group,
        }
    }
}

/// Stacked observations of one or more curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDesign {
    pub rows: Vec<Observation>,
    pub curve_lengths: Vec<f64>,
    pub curve_groups: Vec<usize>,
}

impl TrainingDesign {
    pub fn new(curves: &[CurveSamples]) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::InvalidArgument("design needs at least one curve".into()));
        }
        let mut rows = Vec::new();
        for (j, c) in curves.iter().enumerate() {
            if c.points.len() != c.params.len() {
                return Err(Error::Dimension(format!(
                    "curve {j}: {} points but {} parameters",
                    c.points.len(),
                    c.params.len()
                )));
            }
            if c.points.is_empty() {
                return Err(Error::InvalidArgument(format!("curve {j} has no observations")));
            }
            if !(c.length > 0.0) {
                return Err(Error::DegenerateCurve(format!("curve {j} has non-positive length")));
            }
            for (p, &s) in c.points.iter().zip(&c.params) {
                for (coord, y) in [p.x, p.y].into_iter().enumerate() {
                    rows.push(Observation {
                        site: Site::new(s, coord, j, c.group),
                        y,
                    });
                }
            }
        }
        Ok(Self {
            rows,
            curve_lengths: curves.iter().map(|c| c.length).collect(),
            curve_groups: curves.iter().map(|c| c.group).collect(),
        })
    }

    /// Single curve parameterized by its own polygon.
    pub fn from_curve(curve: &Curve) -> Self {
        Self::new(&[CurveSamples::from_curve(curve, 0)]).expect("a valid curve gives a valid design")
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_curves(&self) -> usize {
        self.curve_lengths.len()
    }

    pub fn n_groups(&self) -> usize {
        self.curve_groups.iter().max().map_or(0, |g| g + 1)
    }

    pub fn targets(&self) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.y))
    }

    /// Observed points of curve `j` in input order.
    pub fn curve_points(&self, j: usize) -> Vec<Point> {
        self.rows
            .chunks(2)
            .filter(|r| r[0].site.curve == j)
            .map(|r| Point::new(r[0].y, r[1].y))
            .collect()
    }

    pub fn mean_length(&self) -> f64 {
        self.curve_lengths.iter().sum::<f64>() / self.curve_lengths.len() as f64
    }
}

/// Covariance of the noisy observations, `K + Σ_noise`, including jitter.
pub fn noisy_gram(design: &TrainingDesign, kernel: &MultiLevelKernel, noise: &NoiseSpec) -> DMatrix<f64> {
    let m = design.len();
    let c = noise.jitter.constant();
    let nugget = noise.jitter.nugget();
    let mut k = DMatrix::zeros(m, m);
    for a in 0..m {
        let sa = &design.rows[a].site;
        for b in 0..=a {
            let v = kernel.eval_unchecked(sa, &design.rows[b].site, c);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
        k[(a, a)] += noise.variance[sa.coord] + nugget;
    }
    k
}

fn check_design(design: &TrainingDesign, kernel: &MultiLevelKernel) -> Result<()> {
    for r in &design.rows {
        kernel.check_site(&r.site)?;
    }
    Ok(())
}

/// Cholesky factorization with the diagonal jitter ladder. Returns the factor
/// and the amount added to the diagonal.
pub fn factorize(k: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(ch) = Cholesky::new(k.clone()) {
        return Ok((ch, 0.0));
    }
    for &extra in &JITTER_LADDER {
        let mut kk = k.clone();
        for i in 0..kk.nrows() {
            kk[(i, i)] += extra;
        }
        if let Some(ch) = Cholesky::new(kk) {
            log::debug!("factorization needed diagonal jitter {extra:e}");
            return Ok((ch, extra));
        }
    }
    let diag_max = k.diagonal().iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    Err(Error::Numerical(format!(
        "covariance of size {} not positive definite after jitter {:e} (max diagonal {diag_max:e})",
        k.nrows(),
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

fn log_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// `-½ yᵀ(K+Σ)⁻¹y - ½ log det(K+Σ) - (M/2) log 2π`.
pub fn log_marginal_likelihood(design: &TrainingDesign, kernel: &MultiLevelKernel, noise: &NoiseSpec) -> Result<f64> {
    check_design(design, kernel)?;
    let (ch, _) = factorize(noisy_gram(design, kernel, noise))?;
    let y = design.targets();
    let alpha = ch.solve(&y);
    Ok(-0.5 * y.dot(&alpha) - 0.5 * log_det(&ch) - 0.5 * design.len() as f64 * (2.0 * PI).ln())
}

/// How a discrete level enters the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LevelSpec {
    Absent,
    Fixed { matrix: CoregMatrix },
    Free { rank: usize },
}

impl LevelSpec {
    pub fn identity(m: usize) -> Self {
        LevelSpec::Fixed {
            matrix: CoregMatrix::identity(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tau {
    /// Mean polygon length of the training curves.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: KernelFamily,
    pub tau: Tau,
    pub coords: LevelSpec,
    pub curves: LevelSpec,
    pub groups: LevelSpec,
    pub noise: NoiseSpec,
    /// Box for σ²; `None` spans `[1e-4, 1e2]` times the variance of the targets.
    pub sigma2_bounds: Option<(f64, f64)>,
    /// Lower bound on ρ relative to τ; the upper bound is τ/2.
    pub rho_min_fraction: f64,
    /// Fixed length scale; skips its optimization when set.
    pub rho: Option<f64>,
    pub w_bound: f64,
    pub kappa_bounds: (f64, f64),
    pub constraints: ConstraintPolicy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::PeriodicMatern32,
            tau: Tau::Auto,
            coords: LevelSpec::Free { rank: 1 },
            curves: LevelSpec::Absent,
            groups: LevelSpec::Absent,
            noise: NoiseSpec::default(),
            sigma2_bounds: None,
            rho_min_fraction: 0.01,
            rho: None,
            w_bound: 5.0,
            kappa_bounds: (1e-6, 25.0),
            constraints: ConstraintPolicy::default(),
        }
    }
}

impl ModelConfig {
    /// Independent coordinates (`D = I`), single curve.
    pub fn separate() -> Self {
        Self {
            coords: LevelSpec::identity(2),
            ..Self::default()
        }
    }

    /// Free coordinate and curve coregionalization.
    pub fn joint() -> Self {
        Self {
            curves: LevelSpec::Free { rank: 1 },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub restarts: usize,
    pub seed: u64,
    pub annealing: bool,
    pub anneal: AnnealConfig,
    pub lbfgs: LbfgsConfig,
    pub parallel: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            seed: 0,
            annealing: false,
            anneal: AnnealConfig::default(),
            lbfgs: LbfgsConfig::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LevelLayout {
    offset: usize,
    dim: usize,
    rank: usize,
}

impl LevelLayout {
    fn decode(&self, x: &[f64]) -> Result<CoregMatrix> {
        let w = DMatrix::from_row_slice(self.dim, self.rank, &x[self.offset..self.offset + self.dim * self.rank]);
        let k0 = self.offset + self.dim * self.rank;
        let kappa = DVector::from_iterator(self.dim, x[k0..k0 + self.dim].iter().map(|v| v.exp()));
        CoregMatrix::new(w, kappa)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum LevelParam {
    Absent,
    Fixed(CoregMatrix),
    Free(LevelLayout),
}

impl LevelParam {
    fn matrix(&self, x: &[f64]) -> Result<Option<CoregMatrix>> {
        match self {
            LevelParam::Absent => Ok(None),
            LevelParam::Fixed(m) => Ok(Some(m.clone())),
            LevelParam::Free(l) => l.decode(x).map(Some),
        }
    }
}

/// Negative log marginal likelihood as a function of a flat vector of
/// transformed hyperparameters:
///
/// `[ln σ², ln ρ, D params, C params, G params, ln σ_ε² (1 or 2)]`
///
/// where each free level contributes its row-major `W` followed by `ln κ`.
/// `ln ρ` is absent when the length scale is fixed.
#[derive(Debug, Clone)]
pub struct LikelihoodProblem<'a> {
    design: &'a TrainingDesign,
    family: KernelFamily,
    tau: f64,
    fixed_rho: Option<f64>,
    levels: [LevelParam; 3],
    noise_offset: usize,
    noise_template: NoiseSpec,
    bounds: Bounds,
    y: DVector<f64>,
    y_var: f64,
}

impl<'a> LikelihoodProblem<'a> {
    pub fn new(design: &'a TrainingDesign, config: &ModelConfig) -> Result<Self> {
        let tau = match config.tau {
            Tau::Auto => design.mean_length(),
            Tau::Fixed(t) => t,
        };
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidHyperparameters(format!("period {tau} must be positive")));
        }
        let y = design.targets();
        let mean = y.mean();
        let y_var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len().max(1) as f64;
        let y_var = if y_var > 0.0 { y_var } else { 1.0 };

        let (s2_lo, s2_hi) = config.sigma2_bounds.unwrap_or((1e-4 * y_var, 1e2 * y_var));
        let rho_hi = 0.5 * tau;
        let rho_lo = (config.rho_min_fraction * tau).min(rho_hi);
        let mut lower = vec![s2_lo.ln()];
        let mut upper = vec![s2_hi.ln()];
        if config.rho.is_none() {
            lower.push(rho_lo.ln());
            upper.push(rho_hi.ln());
        }

        let sizes = [2, design.n_curves(), design.n_groups()];
        let names = ["coordinate", "curve", "group"];
        let specs = [&config.coords, &config.curves, &config.groups];
        let mut levels = [LevelParam::Absent, LevelParam::Absent, LevelParam::Absent];
        for (l, spec) in specs.into_iter().enumerate() {
            levels[l] = match spec {
                LevelSpec::Absent if l == 0 => {
                    return Err(Error::InvalidArgument("the coordinate level cannot be absent".into()))
                }
                LevelSpec::Absent => {
                    if sizes[l] > 1 {
                        log::debug!("{} level absent with {} values: treated as shared", names[l], sizes[l]);
                    }
                    LevelParam::Absent
                }
                LevelSpec::Fixed { matrix } => {
                    if matrix.dim() != sizes[l] {
                        return Err(Error::Dimension(format!(
                            "fixed {} matrix has size {}, design has {}",
                            names[l],
                            matrix.dim(),
                            sizes[l]
                        )));
                    }
                    LevelParam::Fixed(matrix.clone())
                }
                LevelSpec::Free { rank } => {
                    let layout = LevelLayout {
                        offset: lower.len(),
                        dim: sizes[l],
                        rank: (*rank).clamp(1, sizes[l]),
                    };
                    for _ in 0..layout.dim * layout.rank {
                        lower.push(-config.w_bound);
                        upper.push(config.w_bound);
                    }
                    for _ in 0..layout.dim {
                        lower.push(config.kappa_bounds.0.ln());
                        upper.push(config.kappa_bounds.1.ln());
                    }
                    LevelParam::Free(layout)
                }
            };
        }

        let noise_offset = lower.len();
        let n_noise = if config.noise.shared { 1 } else { 2 };
        for _ in 0..n_noise {
            lower.push(config.noise.bounds.0.ln());
            upper.push(config.noise.bounds.1.ln());
        }

        Ok(Self {
            design,
            family: config.family,
            tau,
            fixed_rho: config.rho,
            levels,
            noise_offset,
            noise_template: config.noise,
            bounds: Bounds::new(lower, upper),
            y,
            y_var,
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn decode(&self, x: &[f64]) -> Result<(MultiLevelKernel, NoiseSpec)> {
        let rho = self.fixed_rho.unwrap_or_else(|| x[1].exp());
        let input = PeriodicKernel::new(self.family, x[0].exp(), rho, self.tau)?;
        let coords = self.levels[0].matrix(x)?.expect("coordinate level present");
        let kernel = MultiLevelKernel {
            input,
            coords,
            curves: self.levels[1].matrix(x)?,
            groups: self.levels[2].matrix(x)?,
        };
        let mut noise = self.noise_template;
        noise.variance = if noise.shared {
            [x[self.noise_offset].exp(); 2]
        } else {
            [x[self.noise_offset].exp(), x[self.noise_offset + 1].exp()]
        };
        Ok((kernel, noise))
    }

    /// Deterministic starting point: σ² at the target variance, ρ at τ/4,
    /// near-identity coregionalization, noise at the geometric box centre.
    pub fn default_start(&self) -> Vec<f64> {
        let mut x: Vec<f64> = self.bounds.lower.iter().zip(&self.bounds.upper).map(|(l, u)| 0.5 * (l + u)).collect();
        x[0] = self.y_var.ln();
        if self.fixed_rho.is_none() {
            x[1] = (0.25 * self.tau).ln();
        }
        for (l, level) in self.levels.iter().enumerate() {
            if let LevelParam::Free(layout) = level {
                let w0 = if l == 0 { 0.1 } else { 0.8 };
                let k0 = if l == 0 { 1.0 } else { 0.36 };
                for i in 0..layout.dim * layout.rank {
                    x[layout.offset + i] = w0;
                }
                for i in 0..layout.dim {
                    x[layout.offset + layout.dim * layout.rank + i] = f64::ln(k0);
                }
            }
        }
        self.bounds.project(&mut x);
        x
    }

    /// Random start: log-uniform σ² and ρ inside their boxes, random
    /// coregionalization factors.
    pub fn random_start<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut x = self.default_start();
        let n_log = if self.fixed_rho.is_none() { 2 } else { 1 };
        for (i, v) in x.iter_mut().enumerate().take(n_log) {
            *v = rng.random_range(self.bounds.lower[i]..=self.bounds.upper[i]);
        }
        let w = Normal::new(0.5, 0.5).expect("valid normal");
        for (l, level) in self.levels.iter().enumerate() {
            if let LevelParam::Free(layout) = level {
                for i in 0..layout.dim * layout.rank {
                    x[layout.offset + i] = if l == 0 {
                        w.sample(rng) - 0.5
                    } else {
                        w.sample(rng)
                    };
                }
                for i in 0..layout.dim {
                    x[layout.offset + layout.dim * layout.rank + i] = rng.random_range(f64::ln(0.05)..=0.0);
                }
            }
        }
        self.bounds.project(&mut x);
        x
    }

    /// Log marginal likelihood and its gradient with respect to `x`.
    pub fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (kernel, noise) = self.decode(x)?;
        let design = self.design;
        let (ch, _) = factorize(noisy_gram(design, &kernel, &noise))?;
        let m = design.len();
        let alpha = ch.solve(&self.y);
        let lml = -0.5 * self.y.dot(&alpha) - 0.5 * log_det(&ch) - 0.5 * m as f64 * (2.0 * PI).ln();

        // dL/dθ = ½ tr((ααᵀ - K⁻¹) ∂K/∂θ)
        let k_inv = ch.inverse();
        let c = noise.jitter.constant();
        let sigma2 = kernel.input.sigma2;
        let mut g_s2 = 0.0;
        let mut g_rho = 0.0;
        let mut level_sums: [Option<DMatrix<f64>>; 3] = [
            Some(DMatrix::zeros(2, 2)),
            kernel.curves.as_ref().map(|b| DMatrix::zeros(b.dim(), b.dim())),
            kernel.groups.as_ref().map(|b| DMatrix::zeros(b.dim(), b.dim())),
        ];
        let mut g_noise = [0.0; 2];
        for a in 0..m {
            let sa = &design.rows[a].site;
            for b in 0..=a {
                let sb = &design.rows[b].site;
                let weight = if a == b { 1.0 } else { 2.0 };
                let w_ab = weight * (alpha[a] * alpha[b] - k_inv[(a, b)]);
                let (corr, dcorr) = kernel.input.correlation((sa.s - sb.s).abs());
                let f_d = kernel.coords.get(sa.coord, sb.coord);
                let f_c = kernel.curves.as_ref().map_or(1.0, |m| m.get(sa.curve, sb.curve));
                let f_g = kernel.groups.as_ref().map_or(1.0, |m| m.get(sa.group, sb.group));
                let kin = sigma2 * corr + c;
                let levels = f_d * f_c * f_g;
                g_s2 += w_ab * sigma2 * corr * levels;
                g_rho += w_ab * sigma2 * dcorr * levels;
                // S[u, v] accumulates symmetric contributions for each level
                let contrib = [
                    (sa.coord, sb.coord, kin * f_c * f_g),
                    (sa.curve, sb.curve, kin * f_d * f_g),
                    (sa.group, sb.group, kin * f_d * f_c),
                ];
                for (sum, (u, v, val)) in level_sums.iter_mut().zip(contrib) {
                    if let Some(s) = sum {
                        let half = 0.5 * w_ab * val;
                        s[(u, v)] += half;
                        s[(v, u)] += half;
                    }
                }
                if a == b {
                    g_noise[sa.coord] += w_ab;
                }
            }
        }

        let mut grad = vec![0.0; self.dim()];
        grad[0] = 0.5 * g_s2;
        if self.fixed_rho.is_none() {
            grad[1] = 0.5 * g_rho;
        }
        let matrices = [Some(&kernel.coords), kernel.curves.as_ref(), kernel.groups.as_ref()];
        for ((level, sum), matrix) in self.levels.iter().zip(&level_sums).zip(matrices) {
            if let (LevelParam::Free(layout), Some(s), Some(b)) = (level, sum, matrix) {
                // ∂L/∂W = S W, ∂L/∂ln κ_p = ½ S[p, p] κ_p
                let sw = s * b.w();
                for i in 0..layout.dim {
                    for r in 0..layout.rank {
                        grad[layout.offset + i * layout.rank + r] = sw[(i, r)];
                    }
                }
                let k0 = layout.offset + layout.dim * layout.rank;
                for p in 0..layout.dim {
                    grad[k0 + p] = 0.5 * s[(p, p)] * b.kappa()[p];
                }
            }
        }
        if noise.shared {
            grad[self.noise_offset] = 0.5 * (g_noise[0] * noise.variance[0] + g_noise[1] * noise.variance[1]);
        } else {
            grad[self.noise_offset] = 0.5 * g_noise[0] * noise.variance[0];
            grad[self.noise_offset + 1] = 0.5 * g_noise[1] * noise.variance[1];
        }
        Ok((lml, grad))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub log_marginal_likelihood: f64,
    /// Index of the winning restart.
    pub best_restart: Option<usize>,
    /// Final log marginal likelihood of every restart; `None` when the
    /// restart was discarded.
    pub restart_scores: Vec<Option<f64>>,
    pub constraint_report: ConstraintReport,
    /// Diagonal jitter added by the factorization ladder.
    pub jitter_added: f64,
}

/// A conditioned GP: hyperparameters, training design and cached factor.
#[derive(Debug, Clone)]
pub struct FittedModel {
    design: TrainingDesign,
    kernel: MultiLevelKernel,
    noise: NoiseSpec,
    factor: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    pub diagnostics: FitDiagnostics,
}

/// Mean vector and joint covariance of the latent function at query sites.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Predictive law of one curve on a grid of arc parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedCurve {
    pub curve: usize,
    pub length: f64,
    pub grid: Vec<f64>,
    #[serde(with = "point_list")]
    pub means: Vec<Point>,
    /// Per grid point `[[σ₁², ρ₁₂], [ρ₂₁, σ₂²]]`.
    #[serde(with = "matrix2_list")]
    pub covariances: Vec<Matrix2<f64>>,
}

impl PredictedCurve {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Pointwise standard deviations `(σ̃₁, σ̃₂)`.
    pub fn std_devs(&self, i: usize) -> (f64, f64) {
        let c = &self.covariances[i];
        (c[(0, 0)].max(0.0).sqrt(), c[(1, 1)].max(0.0).sqrt())
    }

    /// Affine map `p ↦ scale · R p + offset` applied to means, with the
    /// covariances transformed accordingly.
    pub fn transformed(&self, rotation: &Matrix2<f64>, scale: f64, offset: nalgebra::Vector2<f64>) -> Self {
        Self {
            curve: self.curve,
            length: self.length,
            grid: self.grid.clone(),
            means: self.means.iter().map(|p| Point::from(rotation * p.coords * scale + offset)).collect(),
            covariances: self
                .covariances
                .iter()
                .map(|c| rotation * c * rotation.transpose() * (scale * scale))
                .collect(),
        }
    }
}

pub(crate) mod point_list {
    use super::Point;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(points: &[Point], s: S) -> Result<S::Ok, S::Error> {
        points.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Point>, D::Error> {
        Ok(Vec::<[f64; 2]>::deserialize(d)?.into_iter().map(|[x, y]| Point::new(x, y)).collect())
    }
}

mod matrix2_list {
    use nalgebra::Matrix2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &[Matrix2<f64>], s: S) -> Result<S::Ok, S::Error> {
        m.iter()
            .map(|c| [[c[(0, 0)], c[(0, 1)]], [c[(1, 0)], c[(1, 1)]]])
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix2<f64>>, D::Error> {
        Ok(Vec::<[[f64; 2]; 2]>::deserialize(d)?
            .into_iter()
            .map(|[[a, b], [c, e]]| Matrix2::new(a, b, c, e))
            .collect())
    }
}

impl FittedModel {
    /// Conditions on `design` with the given hyperparameters (no fitting).
    pub fn condition(design: TrainingDesign, kernel: MultiLevelKernel, noise: NoiseSpec) -> Result<Self> {
        check_design(&design, &kernel)?;
        let (factor, jitter_added) = factorize(noisy_gram(&design, &kernel, &noise))?;
        let y = design.targets();
        let alpha = factor.solve(&y);
        let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det(&factor) - 0.5 * design.len() as f64 * (2.0 * PI).ln();
        Ok(Self {
            design,
            kernel,
            noise,
            factor,
            alpha,
            diagnostics: FitDiagnostics {
                log_marginal_likelihood: lml,
                best_restart: None,
                restart_scores: Vec::new(),
                constraint_report: ConstraintReport::default(),
                jitter_added,
            },
        })
    }

    pub fn design(&self) -> &TrainingDesign {
        &self.design
    }

    pub fn kernel(&self) -> &MultiLevelKernel {
        &self.kernel
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn factor(&self) -> &Cholesky<f64, Dyn> {
        &self.factor
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    fn cross_covariance(&self, queries: &[Site]) -> DMatrix<f64> {
        let c = self.noise.jitter.constant();
        DMatrix::from_fn(self.design.len(), queries.len(), |a, q| {
            self.kernel.eval_unchecked(&self.design.rows[a].site, &queries[q], c)
        })
    }

    /// Predictive mean `K*ᵀ α` and covariance `K** - K*ᵀ (K+Σ)⁻¹ K*` of the
    /// latent (noise-free) function.
    pub fn predict(&self, queries: &[Site]) -> Result<Prediction> {
        for q in queries {
            self.kernel.check_site(q)?;
        }
        let c = self.noise.jitter.constant();
        let k_star = self.cross_covariance(queries);
        let mean = k_star.transpose() * &self.alpha;
        let v = self.factor.l().solve_lower_triangular(&k_star).ok_or_else(|| Error::Numerical("singular factor".into()))?;
        let prior = DMatrix::from_fn(queries.len(), queries.len(), |i, j| self.kernel.eval_unchecked(&queries[i], &queries[j], c));
        let cov = prior - v.transpose() * v;
        let covariance = (&cov + cov.transpose()) * 0.5;
        Ok(Prediction { mean, covariance })
    }

    /// Predictive law of curve `curve` on the open grid `s_i = i ℓ / m`.
    pub fn predict_curve(&self, curve: usize, m: usize) -> Result<PredictedCurve> {
        if m < 3 {
            return Err(Error::InvalidArgument(format!("prediction grid needs at least 3 points, got {m}")));
        }
        let length = self.curve_length(curve)?;
        let grid: Vec<f64> = (0..m).map(|i| i as f64 * length / m as f64).collect();
        self.predict_at(curve, &grid)
    }

    /// Predictive law of curve `curve` at arbitrary arc parameters.
    pub fn predict_at(&self, curve: usize, grid: &[f64]) -> Result<PredictedCurve> {
        let length = self.curve_length(curve)?;
        let group = self.design.curve_groups[curve];
        let queries: Vec<Site> = grid
            .iter()
            .flat_map(|&s| [Site::new(s, 0, curve, group), Site::new(s, 1, curve, group)])
            .collect();
        for q in &queries[..queries.len().min(2)] {
            self.kernel.check_site(q)?;
        }
        let c = self.noise.jitter.constant();
        let k_star = self.cross_covariance(&queries);
        let mean = k_star.transpose() * &self.alpha;
        let v = self.factor.l().solve_lower_triangular(&k_star).ok_or_else(|| Error::Numerical("singular factor".into()))?;
        let mut means = Vec::with_capacity(grid.len());
        let mut covariances = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let (qx, qy) = (2 * i, 2 * i + 1);
            means.push(Point::new(mean[qx], mean[qy]));
            let vx = v.column(qx);
            let vy = v.column(qy);
            let prior = |a: usize, b: usize| self.kernel.eval_unchecked(&queries[a], &queries[b], c);
            let xx = prior(qx, qx) - vx.dot(&vx);
            let yy = prior(qy, qy) - vy.dot(&vy);
            let xy = prior(qx, qy) - vx.dot(&vy);
            covariances.push(Matrix2::new(xx, xy, xy, yy));
        }
        Ok(PredictedCurve {
            curve,
            length,
            grid: grid.to_vec(),
            means,
            covariances,
        })
    }

    fn curve_length(&self, curve: usize) -> Result<f64> {
        self.design
            .curve_lengths
            .get(curve)
            .copied()
            .ok_or_else(|| Error::Dimension(format!("curve {curve} not in the design ({} curves)", self.design.n_curves())))
    }

    /// `max |L Lᵀ - (K + Σ)|` relative to `max |K + Σ|`.
    pub fn factor_residual(&self) -> f64 {
        let k = noisy_gram(&self.design, &self.kernel, &self.noise);
        let l = self.factor.l();
        let diff = &l * l.transpose() - &k;
        let kmax = k.amax();
        let dmax = diff.iter().enumerate().fold(0.0f64, |acc, (idx, v)| {
            let (i, j) = (idx % k.nrows(), idx / k.nrows());
            // the diagonal may carry ladder jitter
            let v = if i == j { v - self.diagnostics.jitter_added } else { *v };
            acc.max(v.abs())
        });
        dmax / kmax
    }
}

/// Fits hyperparameters by maximising the log marginal likelihood over
/// `opt.restarts` starts (the first deterministic, the rest drawn at random),
/// keeping the best. τ stays fixed.
pub fn fit(design: &TrainingDesign, config: &ModelConfig, opt: &OptimizerConfig) -> Result<FittedModel> {
    let problem = LikelihoodProblem::new(design, config)?;

    let probe = PeriodicKernel::new(config.family, 1.0, config.rho.unwrap_or(0.25 * problem.tau()), problem.tau())?;
    let report = validate_constraints(&probe, &config.noise, design.mean_length(), &config.constraints);
    for v in &report.violations {
        log::warn!("{}: {}", v.rule, v.detail);
    }
    let report = report.into_result()?;

    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let restarts = opt.restarts.max(1);
    let starts: Vec<Vec<f64>> = (0..restarts)
        .map(|r| if r == 0 { problem.default_start() } else { problem.random_start(&mut rng) })
        .collect();

    let run = |(r, x0): (usize, &Vec<f64>)| -> Option<(f64, Vec<f64>)> {
        let mut objective = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
            match problem.evaluate(x) {
                Ok((lml, g)) if lml.is_finite() && g.iter().all(|v| v.is_finite()) => Some((-lml, g.into_iter().map(|v| -v).collect())),
                _ => None,
            }
        };
        let result = if opt.annealing {
            let mut arng = ChaCha8Rng::seed_from_u64(opt.seed.wrapping_add(r as u64 + 1));
            anneal(&mut objective, x0, problem.bounds(), &opt.anneal, &opt.lbfgs, &mut arng)
        } else {
            minimize_box(&mut objective, x0, problem.bounds(), &opt.lbfgs)
        };
        match result {
            Some(m) => Some((-m.value, m.x)),
            None => {
                log::warn!("restart {r}: likelihood not finite at the starting point, discarded");
                None
            }
        }
    };
    let results: Vec<Option<(f64, Vec<f64>)>> = if opt.parallel {
        starts.par_iter().enumerate().map(run).collect()
    } else {
        starts.iter().enumerate().map(run).collect()
    };

    let restart_scores: Vec<Option<f64>> = results.iter().map(|r| r.as_ref().map(|(l, _)| *l)).collect();
    for (r, s) in restart_scores.iter().enumerate() {
        log::debug!("restart {r}: log marginal likelihood {s:?}");
    }
    let (best, (_, x)) = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().map(|v| (i, v)))
        .fold(None, |acc: Option<(usize, &(f64, Vec<f64>))>, cur| match acc {
            Some(a) if a.1 .0 >= cur.1 .0 => Some(a),
            _ => Some(cur),
        })
        .ok_or_else(|| Error::Numerical("every restart failed to evaluate the likelihood".into()))?;

    let (kernel, noise) = problem.decode(x)?;
    let mut model = FittedModel::condition(design.clone(), kernel, noise)?;
    model.diagnostics.best_restart = Some(best);
    model.diagnostics.restart_scores = restart_scores;
    model.diagnostics.constraint_report = report;
    Ok(model)
}
