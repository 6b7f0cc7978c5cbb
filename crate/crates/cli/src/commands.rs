use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use curvegp::applications::{group_indices, sequential_landmark, simultaneous_landmarks, LandmarkResult};
use curvegp::config::ExperimentConfig;
use curvegp::geometry::{Curve, Point, DEFAULT_OVERSAMPLING};
use curvegp::io::{collection_json, curve_csv, read_curve_csv, read_curves, read_json, to_json, write_atomic, FitRecord};
use curvegp::metrics::{elastic_register, esd_with, imspe, imspe_curves, iuea, wasserstein2, EllipseScale, Registration, MAX_ASSIGNMENT_SIZE};
use curvegp::preprocess::{preprocess_collection, Normalization};
use curvegp::svg::{emit_svg, SvgStyle};
use curvegp::synthetic::{generate, Sampling, Shape};
use curvegp::{fit, CurveSamples, Error, FittedModel, PredictedCurve, Result, TrainingDesign};

use crate::{Cli, Command, ConfigAction, InputArgs, LandmarkMethod, ShapeKind, SimulateArgs};

/// Predictions in the original frame of each curve, as written by `predict`
/// and `reconstruct` and read by `plot` and `metrics`.
#[derive(Debug, Serialize, Deserialize)]
struct PredictionSet {
    ids: Vec<String>,
    curves: Vec<PredictedCurve>,
}

struct Context {
    config: ExperimentConfig,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.out(name);
        write_atomic(&path, contents.as_bytes())?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        self.config
            .set(key, &value.to_string())
            .map_err(|m| Error::Validation(format!("{key}: {m}")))
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for item in &cli.overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("--set expects KEY=VALUE, got `{item}`")))?;
        cfg.set(k, v).map_err(|m| Error::Validation(format!("{}: {m}", k.trim())))?;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let config = build_config(&cli)?;
    let mut ctx = Context { config };
    match cli.command {
        Command::Config { action } => {
            let text = match action {
                ConfigAction::PrintDefaults => ExperimentConfig::default().render(),
                ConfigAction::Show => ctx.config.render(),
            };
            print!("{text}");
            Ok(())
        }
        Command::Simulate(args) => simulate(&mut ctx, &args),
        Command::Preprocess { input, template } => {
            if let Some(t) = template {
                ctx.set("preprocess.template", t)?;
            }
            preprocess(&mut ctx, &input)
        }
        Command::Fit { input, seed } => {
            if let Some(s) = seed {
                ctx.set("optimizer.seed", s)?;
            }
            fit_command(&mut ctx, &input)
        }
        Command::Predict { model, grid } => {
            if let Some(m) = grid {
                ctx.set("predict.grid", m)?;
            }
            predict(&ctx, model)
        }
        Command::Reconstruct { input, reference, seed, grid } => {
            if let Some(s) = seed {
                ctx.set("optimizer.seed", s)?;
            }
            if let Some(m) = grid {
                ctx.set("predict.grid", m)?;
            }
            if let Some(r) = reference {
                ctx.set("input.reference", r.display())?;
            }
            reconstruct(&mut ctx, &input)
        }
        Command::Landmarks { input, method, p, trials, lambda, seed } => {
            if let Some(p) = p {
                ctx.set("landmarks.p", p)?;
            }
            if let Some(t) = trials {
                ctx.set("landmarks.trials", t)?;
            }
            if let Some(l) = lambda {
                ctx.set("landmarks.lambda", l)?;
            }
            if let Some(s) = seed {
                ctx.set("landmarks.seed", s)?;
                ctx.set("optimizer.seed", s)?;
            }
            landmarks(&mut ctx, &input, method)
        }
        Command::Register { source, target } => register(&ctx, &source, &target),
        Command::Metrics { pair, prediction, truth } => match (pair, prediction) {
            (Some(pair), _) => metrics_pair(&ctx, &pair[0], &pair[1]),
            (None, Some(pred)) => metrics_prediction(&ctx, &pred, truth.as_deref()),
            (None, None) => Err(Error::InvalidArgument("metrics needs --pair A B or --prediction FILE".into())),
        },
        Command::Plot { prediction, observed, truth, curve } => plot(&ctx, &prediction, observed.as_deref(), truth.as_deref(), curve),
    }
}

fn simulate(ctx: &mut Context, args: &SimulateArgs) -> Result<()> {
    ctx.config.validate()?;
    let shape = match args.shape {
        ShapeKind::Circle => Shape::Circle { radius: args.radius },
        ShapeKind::Ellipse => Shape::Ellipse { a: args.a, b: args.b },
        ShapeKind::Star => Shape::Star {
            radius: args.radius,
            amplitude: args.amplitude,
            petals: args.petals,
        },
    };
    let sampling = match args.cluster_width {
        Some(width) => Sampling::Clustered {
            start: args.cluster_start,
            width,
            fraction: args.cluster_fraction,
        },
        None => Sampling::Equal,
    };
    let seed = args.seed.unwrap_or(ctx.config.seed);
    let curve = generate(&shape, args.n, sampling, args.noise, seed)?;
    let path = args.out.clone().unwrap_or_else(|| ctx.out("simulated.csv"));
    write_atomic(&path, curve_csv(curve.points()).as_bytes())?;
    println!("{}", path.display());
    Ok(())
}

struct Inputs {
    curves: Vec<Curve>,
    ids: Vec<String>,
    labels: Option<Vec<i64>>,
}

/// File-name-safe, unique identifiers.
fn unique_ids(curves: &[Curve]) -> Vec<String> {
    let mut seen = HashSet::new();
    curves
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let mut id: String = c
                .id()
                .chars()
                .map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' { ch } else { '_' })
                .collect();
            if id.is_empty() {
                id = format!("curve{j}");
            }
            if !seen.insert(id.clone()) {
                id = format!("{id}_{j}");
                seen.insert(id.clone());
            }
            id
        })
        .collect()
}

fn load_inputs(ctx: &mut Context, input: &InputArgs) -> Result<Inputs> {
    if let Some(l) = &input.labels {
        ctx.set("input.labels", l)?;
    }
    ctx.config.validate()?;
    let paths = if input.inputs.is_empty() {
        ctx.config.input_paths.clone()
    } else {
        input.inputs.clone()
    };
    if paths.is_empty() {
        return Err(Error::InvalidArgument("no input curves given (pass files or set input.paths)".into()));
    }
    let mut curves = Vec::new();
    for p in &paths {
        curves.extend(read_curves(p)?);
    }
    let labels = if !ctx.config.input_labels.is_empty() {
        if ctx.config.input_labels.len() != curves.len() {
            return Err(Error::Validation(format!(
                "{} labels given for {} curves",
                ctx.config.input_labels.len(),
                curves.len()
            )));
        }
        Some(ctx.config.input_labels.clone())
    } else {
        curves.iter().map(Curve::label).collect::<Option<Vec<i64>>>()
    };
    Ok(Inputs {
        ids: unique_ids(&curves),
        curves,
        labels,
    })
}

/// Normalizes the inputs (or, with a reference curve, parameterizes them
/// against it in the original frame) and fits the model.
fn fit_inputs(ctx: &Context, inputs: &Inputs) -> Result<(FittedModel, Vec<Normalization>)> {
    let cfg = &ctx.config;
    let groups = match &inputs.labels {
        Some(l) => group_indices(l).0,
        None => vec![0; inputs.curves.len()],
    };
    let n_groups = groups.iter().max().map_or(1, |g| g + 1);
    let (samples, norms): (Vec<CurveSamples>, Vec<Normalization>) = match &cfg.input_reference {
        Some(path) => {
            // partial observations share the reference frame, so they are
            // not normalized individually
            let reference = read_curve_csv(path)?;
            let samples = inputs
                .curves
                .iter()
                .zip(&groups)
                .map(|(c, &g)| CurveSamples::against_reference(c, &reference, DEFAULT_OVERSAMPLING, g))
                .collect();
            (samples, vec![Normalization::identity(); inputs.curves.len()])
        }
        None => {
            let pre = preprocess_collection(&inputs.curves, cfg.template, &cfg.preprocess)?;
            let samples = pre.curves.iter().zip(&groups).map(|(c, &g)| CurveSamples::from_curve(c, g)).collect();
            (samples, pre.normalizations)
        }
    };
    let design = TrainingDesign::new(&samples)?;
    let model = fit(&design, &cfg.model(design.n_curves(), n_groups), &cfg.optimizer())?;
    log::info!(
        "fitted {} curves, log marginal likelihood {:.6}",
        design.n_curves(),
        model.diagnostics.log_marginal_likelihood
    );
    Ok((model, norms))
}

fn preprocess(ctx: &mut Context, input: &InputArgs) -> Result<()> {
    let inputs = load_inputs(ctx, input)?;
    let pre = preprocess_collection(&inputs.curves, ctx.config.template, &ctx.config.preprocess)?;
    let curves: Vec<Curve> = pre
        .curves
        .into_iter()
        .zip(&inputs.curves)
        .map(|(c, orig)| c.with_label(orig.label()))
        .collect();
    println!("{}", ctx.write("preprocessed.json", &collection_json(&curves)?)?.display());
    println!("{}", ctx.write("normalizations.json", &to_json(&pre.normalizations)?)?.display());
    Ok(())
}

fn fit_command(ctx: &mut Context, input: &InputArgs) -> Result<()> {
    let inputs = load_inputs(ctx, input)?;
    let (model, norms) = fit_inputs(ctx, &inputs)?;
    let record = FitRecord::new(&model, inputs.ids, norms);
    println!("{}", ctx.write("fit.json", &to_json(&record)?)?.display());
    Ok(())
}

fn title_for(pred: &PredictedCurve, truth: Option<&Curve>, k: f64) -> String {
    let mut parts = Vec::new();
    if let Some(t) = truth {
        if let Ok(v) = imspe(pred, t) {
            parts.push(format!("IMSPE = {v:.4e}"));
        }
    }
    if let Ok(v) = iuea(pred, EllipseScale::StdDev(k)) {
        parts.push(format!("IUEA = {v:.4e}"));
    }
    parts.join(", ")
}

/// Restores predictions to the original frames and writes the JSON, one
/// CSV of means per curve and optionally one SVG per curve.
fn write_predictions(ctx: &Context, file: &str, prefix: &str, model: &FittedModel, ids: &[String], norms: &[Normalization], truth: Option<&Curve>) -> Result<()> {
    let cfg = &ctx.config;
    let mut set = PredictionSet {
        ids: ids.to_vec(),
        curves: Vec::new(),
    };
    for j in 0..model.design().n_curves() {
        let norm = norms.get(j).copied().unwrap_or_else(Normalization::identity);
        set.curves.push(norm.restore(&model.predict_curve(j, cfg.grid)?));
    }
    println!("{}", ctx.write(file, &to_json(&set)?)?.display());
    for (j, pred) in set.curves.iter().enumerate() {
        let id = &set.ids[j];
        println!("{}", ctx.write(&format!("{prefix}_{id}.csv"), &curve_csv(&pred.means))?.display());
        if cfg.svg {
            let norm = norms.get(j).copied().unwrap_or_else(Normalization::identity);
            let observed: Vec<Point> = model.design().curve_points(j).iter().map(|p| norm.restore_point(p)).collect();
            let style = SvgStyle {
                ellipse_k: cfg.ellipse_k,
                ..SvgStyle::default()
            };
            let title = title_for(pred, truth, cfg.ellipse_k);
            let svg = emit_svg(pred, &observed, truth.map(Curve::points), Some(&title), &style);
            println!("{}", ctx.write(&format!("{prefix}_{id}.svg"), &svg)?.display());
        }
    }
    Ok(())
}

fn predict(ctx: &Context, model_path: Option<PathBuf>) -> Result<()> {
    ctx.config.validate()?;
    let path = model_path.unwrap_or_else(|| ctx.out("fit.json"));
    let record: FitRecord = read_json(&path)?;
    let model = record.to_model()?;
    let ids = if record.curve_ids.len() == model.design().n_curves() {
        record.curve_ids.clone()
    } else {
        (0..model.design().n_curves()).map(|j| format!("curve{j}")).collect()
    };
    write_predictions(ctx, "predictions.json", "predicted", &model, &ids, &record.normalizations, None)
}

fn reconstruct(ctx: &mut Context, input: &InputArgs) -> Result<()> {
    let inputs = load_inputs(ctx, input)?;
    let (model, norms) = fit_inputs(ctx, &inputs)?;
    let truth = match &ctx.config.input_reference {
        Some(p) => Some(read_curve_csv(p)?),
        None => None,
    };
    let record = FitRecord::new(&model, inputs.ids.clone(), norms.clone());
    println!("{}", ctx.write("fit.json", &to_json(&record)?)?.display());
    write_predictions(ctx, "reconstruction.json", "reconstructed", &model, &inputs.ids, &norms, truth.as_ref())
}

#[derive(Serialize)]
struct LandmarkReport<'a> {
    ids: &'a [String],
    #[serde(flatten)]
    result: &'a LandmarkResult,
    /// Best landmarks of every curve, in the original coordinates.
    best_points: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize)]
struct SequentialReport {
    id: String,
    s: f64,
    index: usize,
    criterion: f64,
    point: [f64; 2],
}

fn landmarks(ctx: &mut Context, input: &InputArgs, method: LandmarkMethod) -> Result<()> {
    let inputs = load_inputs(ctx, input)?;
    let cfg = ctx.config.clone();
    match method {
        LandmarkMethod::Simultaneous => {
            let pre = preprocess_collection(&inputs.curves, cfg.template, &cfg.preprocess)?;
            let model_cfg = cfg.model(inputs.curves.len(), 1);
            let result = simultaneous_landmarks(&pre.curves, &cfg.landmarks, &model_cfg, &cfg.optimizer())?;
            let best_points = pre
                .curves
                .iter()
                .zip(&pre.normalizations)
                .map(|(c, n)| {
                    result
                        .best_indices
                        .iter()
                        .map(|&i| {
                            let p = n.restore_point(&c.points()[i]);
                            [p.x, p.y]
                        })
                        .collect()
                })
                .collect();
            let report = LandmarkReport {
                ids: &inputs.ids,
                result: &result,
                best_points,
            };
            println!("{}", ctx.write("landmarks.json", &to_json(&report)?)?.display());
        }
        LandmarkMethod::Sequential => {
            let (model, norms) = fit_inputs(ctx, &inputs)?;
            let mut out = Vec::new();
            for (j, id) in inputs.ids.iter().enumerate() {
                let choice = sequential_landmark(&model, j, cfg.landmarks.lambda, cfg.landmarks.candidates)?;
                let at = model.predict_at(j, &[choice.s])?;
                let p = norms[j].restore_point(&at.means[0]);
                out.push(SequentialReport {
                    id: id.clone(),
                    s: choice.s,
                    index: choice.index,
                    criterion: choice.criterion,
                    point: [p.x, p.y],
                });
            }
            println!("{}", ctx.write("sequential_landmarks.json", &to_json(&out)?)?.display());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RegistrationReport {
    source: String,
    target: String,
    esd: f64,
    registration: Registration,
}

fn register(ctx: &Context, source: &Path, target: &Path) -> Result<()> {
    ctx.config.validate()?;
    let (s, t) = (read_curve_csv(source)?, read_curve_csv(target)?);
    let registration = elastic_register(&s, &t, &ctx.config.elastic())?;
    let report = RegistrationReport {
        source: source.display().to_string(),
        target: target.display().to_string(),
        esd: registration.distance(),
        registration,
    };
    println!("{}", ctx.write("registration.json", &to_json(&report)?)?.display());
    Ok(())
}

#[derive(Serialize)]
struct PairMetrics {
    a: String,
    b: String,
    imspe: f64,
    esd: f64,
    wasserstein2: f64,
}

fn metrics_pair(ctx: &Context, a_path: &Path, b_path: &Path) -> Result<()> {
    ctx.config.validate()?;
    let (a, b) = (read_curve_csv(a_path)?, read_curve_csv(b_path)?);
    // clouds of different sizes are compared through equal-arc resamples
    let w2 = if a.len() == b.len() && a.len() <= MAX_ASSIGNMENT_SIZE {
        wasserstein2(a.points(), b.points())?
    } else {
        let m = a.len().min(b.len()).min(MAX_ASSIGNMENT_SIZE);
        wasserstein2(a.resample_equally_spaced(m)?.points(), b.resample_equally_spaced(m)?.points())?
    };
    let report = PairMetrics {
        a: a_path.display().to_string(),
        b: b_path.display().to_string(),
        imspe: imspe_curves(&a, &b, ctx.config.grid)?,
        esd: esd_with(&a, &b, &ctx.config.elastic())?,
        wasserstein2: w2,
    };
    println!("{}", ctx.write("metrics.json", &to_json(&report)?)?.display());
    Ok(())
}

#[derive(Serialize)]
struct PredictionMetrics {
    id: String,
    iuea: f64,
    imspe: Option<f64>,
}

fn metrics_prediction(ctx: &Context, pred_path: &Path, truth: Option<&Path>) -> Result<()> {
    ctx.config.validate()?;
    let set: PredictionSet = read_json(pred_path)?;
    let truth = truth.map(read_curve_csv).transpose()?;
    let mut out = Vec::new();
    for (id, pred) in set.ids.iter().zip(&set.curves) {
        out.push(PredictionMetrics {
            id: id.clone(),
            iuea: iuea(pred, EllipseScale::StdDev(ctx.config.ellipse_k))?,
            imspe: truth.as_ref().map(|t| imspe(pred, t)).transpose()?,
        });
    }
    println!("{}", ctx.write("metrics.json", &to_json(&out)?)?.display());
    Ok(())
}

fn plot(ctx: &Context, pred_path: &Path, observed: Option<&Path>, truth: Option<&Path>, only: Option<usize>) -> Result<()> {
    ctx.config.validate()?;
    let set: PredictionSet = read_json(pred_path)?;
    if let Some(j) = only {
        if j >= set.curves.len() {
            return Err(Error::InvalidArgument(format!("curve {j} out of range for {} predictions", set.curves.len())));
        }
    }
    let observed = observed.map(read_curve_csv).transpose()?;
    let truth = truth.map(read_curve_csv).transpose()?;
    let style = SvgStyle {
        ellipse_k: ctx.config.ellipse_k,
        ..SvgStyle::default()
    };
    for (j, (id, pred)) in set.ids.iter().zip(&set.curves).enumerate() {
        if only.is_some_and(|o| o != j) {
            continue;
        }
        let title = title_for(pred, truth.as_ref(), ctx.config.ellipse_k);
        let svg = emit_svg(
            pred,
            observed.as_ref().map_or(&[][..], Curve::points),
            truth.as_ref().map(Curve::points),
            Some(&title),
            &style,
        );
        println!("{}", ctx.write(&format!("plot_{id}.svg"), &svg)?.display());
    }
    Ok(())
}
