//! Workflows built on the fitted model: reconstruction of partially observed
//! curves, a representative mean curve, landmark selection and class-aware
//! fitting of sub-populations.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Curve, Point, DEFAULT_OVERSAMPLING};
use crate::gp::{fit, CurveSamples, FittedModel, LevelSpec, ModelConfig, OptimizerConfig, PredictedCurve, TrainingDesign};
use crate::metrics::{imspe_points, iuea, EllipseScale};
use crate::preprocess::rotation_seed_align;

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub model: FittedModel,
    pub predictions: Vec<PredictedCurve>,
}

/// Fits all curves jointly and predicts each on an `m`-point grid. With a
/// `reference`, sample points are parameterized by projecting them onto it
/// (suited to partial or unevenly sampled curves); otherwise each curve uses
/// its own polygon.
pub fn reconstruct(
    curves: &[Curve],
    reference: Option<&Curve>,
    config: &ModelConfig,
    opt: &OptimizerConfig,
    m: usize,
) -> Result<Reconstruction> {
    let samples: Vec<CurveSamples> = curves
        .iter()
        .map(|c| match reference {
            Some(r) => CurveSamples::against_reference(c, r, DEFAULT_OVERSAMPLING, 0),
            None => CurveSamples::from_curve(c, 0),
        })
        .collect();
    reconstruct_samples(&samples, config, opt, m)
}

pub fn reconstruct_samples(samples: &[CurveSamples], config: &ModelConfig, opt: &OptimizerConfig, m: usize) -> Result<Reconstruction> {
    let design = TrainingDesign::new(samples)?;
    let model = fit(&design, config, opt)?;
    let predictions = (0..samples.len())
        .map(|j| model.predict_curve(j, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(Reconstruction { model, predictions })
}

/// Average of the predictive means of all curves at `m` equally spaced
/// fractions of their lengths.
pub fn pointwise_mean(model: &FittedModel, m: usize) -> Result<Vec<Point>> {
    let j_count = model.design().n_curves();
    let mut acc = vec![nalgebra::Vector2::zeros(); m];
    for j in 0..j_count {
        let pred = model.predict_curve(j, m)?;
        for (a, p) in acc.iter_mut().zip(&pred.means) {
            *a += p.coords;
        }
    }
    Ok(acc.into_iter().map(|v| Point::from(v / j_count as f64)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandmarkCriterion {
    Imspe,
    Iuea,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkConfig {
    pub p: usize,
    pub lambda: f64,
    pub n_trials: usize,
    pub criterion: LandmarkCriterion,
    pub candidates: usize,
    pub seed: u64,
    /// Inclusive range of landmark counts for the criterion trace.
    pub p_range: Option<(usize, usize)>,
    /// Prediction grid for the IUEA criterion.
    pub grid: usize,
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        Self {
            p: 8,
            lambda: 0.5,
            n_trials: 20,
            criterion: LandmarkCriterion::Imspe,
            candidates: 500,
            seed: 0,
            p_range: None,
            grid: 100,
        }
    }
}

impl LandmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Validation(format!("lambda {} must lie in [0, 1]", self.lambda)));
        }
        if self.p < 3 {
            return Err(Error::Validation(format!("landmark count {} must be at least 3", self.p)));
        }
        if self.n_trials < 1 {
            return Err(Error::Validation("at least one trial is required".into()));
        }
        if self.candidates < 10 {
            return Err(Error::Validation(format!(
                "candidate grid of {} is below the minimum of 10",
                self.candidates
            )));
        }
        if let Some((lo, hi)) = self.p_range {
            if lo < 3 || lo > hi {
                return Err(Error::Validation(format!("invalid landmark range {lo}..={hi}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkTrial {
    pub indices: Vec<usize>,
    /// `None` when the fit failed.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkResult {
    pub p: usize,
    pub trials: Vec<LandmarkTrial>,
    pub best_trial: usize,
    pub best_indices: Vec<usize>,
    /// Arc parameters of the best landmarks on the first curve.
    pub best_params: Vec<f64>,
    pub best_score: f64,
    /// Best score for every landmark count in the configured range.
    pub criterion_trace: Vec<(usize, f64)>,
}

fn binomial_capped(n: usize, k: usize, cap: usize) -> usize {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c >= cap as u128 {
            return cap;
        }
    }
    c as usize
}

/// Draws up to `trials` distinct sorted `p`-subsets of `0..n`.
pub fn draw_subsets(n: usize, p: usize, trials: usize, seed: u64) -> Vec<Vec<usize>> {
    let target = binomial_capped(n, p, trials);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(target);
    while out.len() < target {
        let mut idx = sample(&mut rng, n, p).into_vec();
        idx.sort_unstable();
        if seen.insert(idx.clone()) {
            out.push(idx);
        }
    }
    out
}

/// Fits the joint model on the landmark subset and scores it against the
/// dense curves: mean squared error at the dense parameters (treated as
/// truth) or the mean IUEA on the prediction grid, averaged over curves.
pub fn score_landmarks(
    dense: &[CurveSamples],
    indices: &[usize],
    criterion: LandmarkCriterion,
    grid: usize,
    config: &ModelConfig,
    opt: &OptimizerConfig,
) -> Result<f64> {
    let subset: Vec<CurveSamples> = dense.iter().map(|c| c.subset(indices)).collect();
    let model = fit(&TrainingDesign::new(&subset)?, config, opt)?;
    let mut total = 0.0;
    for (j, c) in dense.iter().enumerate() {
        total += match criterion {
            LandmarkCriterion::Imspe => imspe_points(&model.predict_at(j, &c.params)?.means, &c.points)?,
            LandmarkCriterion::Iuea => iuea(&model.predict_curve(j, grid)?, EllipseScale::default())?,
        };
    }
    Ok(total / dense.len() as f64)
}

/// Random search over landmark subsets shared by all curves. Trials are
/// distinct subsets drawn without replacement; the fit seed is the same for
/// every trial, so scores depend only on the subset. Ties go to the earliest
/// trial.
pub fn simultaneous_landmarks(
    curves: &[Curve],
    landmarks: &LandmarkConfig,
    config: &ModelConfig,
    opt: &OptimizerConfig,
) -> Result<LandmarkResult> {
    landmarks.validate()?;
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidArgument("landmark selection needs at least one curve".into()))?;
    let n = first.len();
    if curves.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument(
            "landmark selection needs curves with equal point counts".into(),
        ));
    }
    let dense: Vec<CurveSamples> = curves.iter().map(|c| CurveSamples::from_curve(c, 0)).collect();
    let (lo, hi) = landmarks.p_range.unwrap_or((landmarks.p, landmarks.p));
    let mut counts: Vec<usize> = (lo..=hi).collect();
    if !counts.contains(&landmarks.p) {
        counts.push(landmarks.p);
    }
    let mut trace = Vec::new();
    let mut main = None;
    for p in counts {
        if p > n {
            return Err(Error::Validation(format!("landmark count {p} exceeds the {n} dense points")));
        }
        let subsets = draw_subsets(n, p, landmarks.n_trials, landmarks.seed.wrapping_add(p as u64));
        let trials: Vec<LandmarkTrial> = subsets
            .into_par_iter()
            .enumerate()
            .map(|(t, indices)| {
                let score = match score_landmarks(&dense, &indices, landmarks.criterion, landmarks.grid, config, opt) {
                    Ok(s) if s.is_finite() => Some(s),
                    Ok(_) | Err(_) => {
                        log::warn!("landmark trial {t} (p = {p}) failed, skipped");
                        None
                    }
                };
                LandmarkTrial { indices, score }
            })
            .collect();
        let best = trials
            .iter()
            .enumerate()
            .filter_map(|(t, tr)| tr.score.map(|s| (t, s)))
            .fold(None, |acc: Option<(usize, f64)>, cur| match acc {
                Some(a) if a.1 <= cur.1 => Some(a),
                _ => Some(cur),
            })
            .ok_or_else(|| Error::Numerical(format!("every landmark trial failed for p = {p}")))?;
        trace.push((p, best.1));
        if p == landmarks.p {
            main = Some((trials, best));
        }
    }
    trace.sort_by_key(|t| t.0);
    let (trials, (best_trial, best_score)) = main.expect("main landmark count evaluated");
    let best_indices = trials[best_trial].indices.clone();
    Ok(LandmarkResult {
        p: landmarks.p,
        best_params: best_indices.iter().map(|&i| dense[0].params[i]).collect(),
        best_indices,
        best_trial,
        best_score,
        trials,
        criterion_trace: trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequentialChoice {
    pub s: f64,
    pub index: usize,
    pub criterion: f64,
}

/// Candidate arc parameters `i ℓ / K` and their values of
/// `λ σ̃₁(s) + (1 - λ) σ̃₂(s)` for curve `curve`.
pub fn sequential_criterion(model: &FittedModel, curve: usize, lambda: f64, candidates: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Validation(format!("lambda {lambda} must lie in [0, 1]")));
    }
    if candidates < 10 {
        return Err(Error::Validation(format!("candidate grid of {candidates} is below the minimum of 10")));
    }
    let pred = model.predict_curve(curve, candidates)?;
    let values = (0..pred.len())
        .map(|i| {
            let (s1, s2) = pred.std_devs(i);
            lambda * s1 + (1.0 - lambda) * s2
        })
        .collect();
    Ok((pred.grid, values))
}

/// Next landmark: argmax of the weighted predictive standard deviations over
/// the candidate grid, ties toward the smallest parameter.
pub fn sequential_landmark(model: &FittedModel, curve: usize, lambda: f64, candidates: usize) -> Result<SequentialChoice> {
    let (grid, values) = sequential_criterion(model, curve, lambda, candidates)?;
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    Ok(SequentialChoice {
        s: grid[best],
        index: best,
        criterion: values[best],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub label: i64,
    pub group: usize,
    pub curves: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SubpopulationFit {
    pub model: FittedModel,
    pub classes: Vec<ClassSummary>,
    /// Curves after the within-class rotation.
    pub curves: Vec<Curve>,
}

/// Group index per label in order of first appearance.
pub fn group_indices(labels: &[i64]) -> (Vec<usize>, Vec<ClassSummary>) {
    let mut classes: Vec<ClassSummary> = Vec::new();
    let mut groups = Vec::with_capacity(labels.len());
    for (j, &l) in labels.iter().enumerate() {
        let g = match classes.iter().position(|c| c.label == l) {
            Some(g) => g,
            None => {
                classes.push(ClassSummary {
                    label: l,
                    group: classes.len(),
                    curves: Vec::new(),
                });
                classes.len() - 1
            }
        };
        classes[g].curves.push(j);
        groups.push(g);
    }
    (groups, classes)
}

/// Fits the model with a group level over class labels. When
/// `align_within_class` is set, each curve is first rotated (no seed shift)
/// onto the first curve of its class.
pub fn fit_subpopulations(
    curves: &[Curve],
    labels: &[i64],
    config: &ModelConfig,
    opt: &OptimizerConfig,
    align_within_class: bool,
) -> Result<SubpopulationFit> {
    if curves.len() != labels.len() {
        return Err(Error::Dimension(format!("{} curves but {} labels", curves.len(), labels.len())));
    }
    if curves.is_empty() {
        return Err(Error::InvalidArgument("sub-population fit needs at least one curve".into()));
    }
    let (groups, classes) = group_indices(labels);
    let mut aligned = curves.to_vec();
    if align_within_class {
        for class in &classes {
            let template = &curves[class.curves[0]];
            for &j in &class.curves[1..] {
                if curves[j].len() != template.len() {
                    return Err(Error::InvalidArgument(format!(
                        "curve {j} and its class template differ in point count; resample first"
                    )));
                }
                let mut a = rotation_seed_align(&curves[j], template)?;
                a.shift = 0;
                aligned[j] = a.apply(&curves[j]);
            }
        }
    }
    let samples: Vec<CurveSamples> = aligned
        .iter()
        .zip(&groups)
        .map(|(c, &g)| CurveSamples::from_curve(c, g))
        .collect();
    let mut config = config.clone();
    if config.groups == LevelSpec::Absent {
        config.groups = LevelSpec::Free { rank: 1 };
    }
    let model = fit(&TrainingDesign::new(&samples)?, &config, opt)?;
    Ok(SubpopulationFit {
        model,
        classes,
        curves: aligned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coreg::MultiLevelKernel;
    use crate::kernels::{KernelFamily, NoiseSpec, PeriodicKernel};
    use crate::synthetic::{generate, Sampling, Shape};

    #[test]
    fn subsets_are_distinct_and_capped() {
        let s = draw_subsets(8, 4, 1000, 3);
        assert_eq!(s.len(), 70);
        let set: HashSet<_> = s.iter().cloned().collect();
        assert_eq!(set.len(), 70);
        assert!(s.iter().all(|v| v.windows(2).all(|w| w[0] < w[1])));
        assert_eq!(draw_subsets(8, 4, 5, 3), draw_subsets(8, 4, 5, 3));
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial_capped(8, 4, usize::MAX), 70);
        assert_eq!(binomial_capped(100, 50, 1000), 1000);
        assert_eq!(binomial_capped(5, 5, 10), 1);
    }

    #[test]
    fn labels_by_first_appearance() {
        let (g, classes) = group_indices(&[3, 1, 3, 7]);
        assert_eq!(g, vec![0, 1, 0, 2]);
        assert_eq!(classes[0].curves, vec![0, 2]);
        assert_eq!(classes[2].label, 7);
        let (g2, _) = group_indices(&[5, 2, 5, 9]);
        assert_eq!(g, g2);
    }

    fn circle_model(n: usize) -> FittedModel {
        let c = generate(&Shape::Circle { radius: 0.16 }, n, Sampling::Equal, 0.0, 0).unwrap();
        let kernel = MultiLevelKernel::separate(PeriodicKernel::new(KernelFamily::PeriodicMatern32, 0.01, 0.2, c.length()).unwrap());
        FittedModel::condition(TrainingDesign::from_curve(&c), kernel, NoiseSpec::shared(1e-5)).unwrap()
    }

    #[test]
    fn sequential_picks_gap() {
        let model = circle_model(4);
        let l = model.design().curve_lengths[0];
        let choice = sequential_landmark(&model, 0, 0.5, 400).unwrap();
        // midway between two of the four training inputs
        let frac = (choice.s / (l / 4.0)).fract();
        assert!((frac - 0.5).abs() < 0.01, "{}", choice.s);
        assert!(sequential_landmark(&model, 0, 1.5, 400).is_err());
        assert!(sequential_landmark(&model, 0, 0.5, 5).is_err());
    }

    #[test]
    fn single_curve_mean_is_prediction() {
        let model = circle_model(12);
        let mean = pointwise_mean(&model, 50).unwrap();
        let pred = model.predict_curve(0, 50).unwrap();
        assert_eq!(mean, pred.means);
    }

    #[test]
    fn landmark_config_validation() {
        let bad = LandmarkConfig {
            p: 2,
            ..LandmarkConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = LandmarkConfig {
            lambda: -0.1,
            ..LandmarkConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
