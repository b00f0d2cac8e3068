//! Experiment harness: baselines, accuracy, stratified cross-validation over
//! the labeled target points, and JSON/TSV reports.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, DataFormat, DomainDataset, SyntheticShiftSpec};
use crate::error::{Error, Result};
use crate::model::{hinge, HyperParams};
use crate::optimizer::{descend_with_backtracking, fit};

/// Fraction of `scores` whose sign matches `labels`; a score of exactly 0
/// predicts +1.
pub fn accuracy(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Validation("accuracy of an empty set".into()));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(s, y)| (if **s >= 0.0 { 1.0 } else { -1.0 }) == **y)
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// `Σ max(0, 1 − y·βᵀx) + (c/2)‖β‖²` trained by backtracking subgradient
/// descent from zero.
pub fn train_hinge(x: &DMatrix<f64>, labels: &[f64], c: f64, iters: usize, rho: f64) -> Result<DVector<f64>> {
    if labels.is_empty() {
        return Err(Error::Validation("cannot train a classifier without labeled points".into()));
    }
    let n = labels.len();
    let rows = x.rows(0, n);
    let value = |beta: &DVector<f64>| {
        let scores = rows * beta;
        labels.iter().zip(scores.iter()).map(|(y, s)| hinge(y * s)).sum::<f64>() + 0.5 * c * beta.norm_squared()
    };
    let gradient = |beta: &DVector<f64>| {
        let scores = rows * beta;
        let mut g = beta * c;
        for (i, y) in labels.iter().enumerate() {
            if 1.0 - y * scores[i] >= 0.0 {
                for (gj, xj) in g.iter_mut().zip(rows.row(i).iter()) {
                    *gj -= y * xj;
                }
            }
        }
        g
    };
    let (beta, _) = descend_with_backtracking(DVector::zeros(x.ncols()), value, gradient, iters, rho);
    Ok(beta)
}

/// Hinge classifier on the source domain only.
pub fn baseline_source_only(source: &DomainDataset, hp: &HyperParams) -> Result<DVector<f64>> {
    if source.is_empty() || source.labeled_count() == 0 {
        return Err(Error::Validation("source domain has no labeled points".into()));
    }
    train_hinge(source.features(), source.labels(), hp.c1, baseline_budget(hp), hp.rho)
}

/// Same total number of subgradient steps the full model gets.
fn baseline_budget(hp: &HyperParams) -> usize {
    hp.outer_iters.max(1) * hp.subgrad_iters
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// The full model; scores target points with `ψ`.
    Proposed,
    /// The full model with `C3 = 0`.
    NoMatching,
    SourceOnly,
    TargetOnly,
    /// One hinge classifier on source plus labeled target points.
    NoAdaptation,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::NoMatching => "no-matching",
            Method::SourceOnly => "source-only",
            Method::TargetOnly => "target-only",
            Method::NoAdaptation => "no-adaptation",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedMethod {
    /// Linear scorer for target points.
    pub classifier: DVector<f64>,
    pub objective_trace: Vec<f64>,
}

/// Trains `method` on a source domain and a partially labeled target domain.
pub fn train_method(method: Method, source: &DomainDataset, target: &DomainDataset, hp: &HyperParams) -> Result<TrainedMethod> {
    let hinge_only = |classifier| TrainedMethod {
        classifier,
        objective_trace: Vec::new(),
    };
    match method {
        Method::Proposed | Method::NoMatching => {
            let hp = if method == Method::NoMatching {
                HyperParams { c3: 0.0, ..hp.clone() }
            } else {
                hp.clone()
            };
            let state = fit(source, target, &hp).map_err(|f| f.error)?;
            Ok(TrainedMethod {
                classifier: state.model.psi().clone(),
                objective_trace: state.objective_trace,
            })
        }
        Method::SourceOnly => baseline_source_only(source, hp).map(hinge_only),
        Method::TargetOnly => train_hinge(target.features(), target.labels(), hp.c1, baseline_budget(hp), hp.rho).map(hinge_only),
        Method::NoAdaptation => {
            let n3 = target.labeled_count();
            let mut pooled = DMatrix::zeros(source.len() + n3, source.dim());
            pooled.rows_mut(0, source.len()).copy_from(source.features());
            pooled.rows_mut(source.len(), n3).copy_from(&target.features().rows(0, n3));
            let labels: Vec<f64> = source.labels().iter().chain(target.labels()).copied().collect();
            train_hinge(&pooled, &labels, hp.c1, baseline_budget(hp), hp.rho).map(hinge_only)
        }
    }
}

/// Accuracy of each method on the target rows that are unlabeled in
/// `target`, using `truth` (labels for every target row).
pub fn evaluate_on_hidden_labels(
    source: &DomainDataset,
    target: &DomainDataset,
    truth: &[f64],
    hp: &HyperParams,
    methods: &[Method],
) -> Result<Vec<(Method, f64)>> {
    if truth.len() != target.len() {
        return Err(Error::Validation("truth must label every target row".into()));
    }
    let n3 = target.labeled_count();
    let hidden = target.features().rows(n3, target.len() - n3).into_owned();
    methods
        .iter()
        .map(|&m| {
            let trained = train_method(m, source, target, hp)?;
            let scores = &hidden * &trained.classifier;
            Ok((m, accuracy(scores.as_slice(), &truth[n3..])?))
        })
        .collect()
}

/// Fold index of every labeled target point. Each class is shuffled with
/// `seed` and dealt round-robin, positives first, so folds are balanced
/// per class up to rounding.
pub fn stratified_folds(labels: &[f64], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    if labels.len() < folds {
        return Err(Error::Config(format!(
            "{} labeled target points cannot fill {folds} folds",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] > 0.0).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] < 0.0).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut assignment = vec![0; labels.len()];
    for (t, &i) in pos.iter().chain(&neg).enumerate() {
        assignment[i] = t % folds;
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub path: PathBuf,
    pub format: DataFormat,
    /// Declared dimension for the sparse format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

fn default_folds() -> usize {
    10
}

fn default_baselines() -> Vec<Method> {
    vec![Method::SourceOnly, Method::TargetOnly, Method::NoAdaptation, Method::NoMatching]
}

/// Experiment description. Data comes either from `source` + `target`
/// files or from a `synthetic` spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<DataSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<DataSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticShiftSpec>,
    #[serde(default)]
    pub hp: HyperParams,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_baselines")]
    pub baselines: Vec<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub standardize: bool,
}

impl ExperimentConfig {
    pub fn synthetic(spec: SyntheticShiftSpec) -> Self {
        ExperimentConfig {
            source: None,
            target: None,
            synthetic: Some(spec),
            hp: HyperParams::default(),
            folds: default_folds(),
            seed: 0,
            baselines: default_baselines(),
            output: None,
            standardize: false,
        }
    }

    /// Reads a config; relative data paths are resolved against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        for spec in [&mut config.source, &mut config.target].into_iter().flatten() {
            if spec.path.is_relative() {
                spec.path = base.join(&spec.path);
            }
        }
        if let Some(out) = config.output.as_mut() {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("folds = {} must be at least 2", self.folds)));
        }
        match (&self.source, &self.target, &self.synthetic) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => Ok(()),
            _ => Err(Error::Config("give either `source` and `target` files or a `synthetic` spec".into())),
        }
    }

    /// Loads (or generates) both domains, standardizing when requested.
    pub fn load_data(&self) -> Result<(DomainDataset, DomainDataset)> {
        self.validate()?;
        let (source, target) = match (&self.source, &self.target, &self.synthetic) {
            (Some(s), Some(t), None) => (
                data::load_dataset(&s.path, s.format, s.dim)?,
                data::load_dataset(&t.path, t.format, t.dim)?,
            ),
            (None, None, Some(spec)) => data::generate_synthetic_pair(spec)?,
            _ => unreachable!("validated above"),
        };
        if source.dim() != target.dim() {
            return Err(Error::Validation(format!(
                "source dimension {} differs from target dimension {}",
                source.dim(),
                target.dim()
            )));
        }
        if !source.is_fully_labeled() {
            return Err(Error::Validation("every source row must be labeled".into()));
        }
        if self.standardize {
            data::standardize_jointly(&source, &target)
        } else {
            Ok((source, target))
        }
    }

    /// Methods evaluated, proposed first, duplicates removed.
    pub fn methods(&self) -> Vec<Method> {
        let mut out = vec![Method::Proposed];
        for m in &self.baselines {
            if !out.contains(m) {
                out.push(*m);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub mean_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    /// Objective per outer iteration for each fold (empty for baselines).
    pub objective_traces: Vec<Vec<f64>>,
    pub wall_clock_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub folds: usize,
    pub fold_sizes: Vec<usize>,
    pub methods: Vec<MethodReport>,
    pub total_wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// `method<TAB>fold<TAB>accuracy` lines with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("method\tfold\taccuracy\n");
        for m in &self.methods {
            for (fold, acc) in m.fold_accuracies.iter().enumerate() {
                out.push_str(&format!("{}\t{fold}\t{acc}\n", m.method.name()));
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct FoldOutcome {
    accuracies: Vec<f64>,
    traces: Vec<Vec<f64>>,
    seconds: Vec<f64>,
    size: usize,
}

fn run_fold(
    fold: usize,
    assignment: &[usize],
    source: &DomainDataset,
    target: &DomainDataset,
    hp: &HyperParams,
    methods: &[Method],
) -> Result<FoldOutcome> {
    let n3 = target.labeled_count();
    let train: Vec<usize> = (0..n3).filter(|&i| assignment[i] != fold).collect();
    let test: Vec<usize> = (0..n3).filter(|&i| assignment[i] == fold).collect();
    // Held-out points stay in the target domain as unlabeled rows.
    let rows: Vec<usize> = train.iter().chain(&test).copied().chain(n3..target.len()).collect();
    let fold_target = target.select(&rows, train.len())?;
    let test_x = DMatrix::from_fn(test.len(), target.dim(), |i, j| target.features()[(test[i], j)]);
    let test_y: Vec<f64> = test.iter().map(|&i| target.labels()[i]).collect();

    let mut outcome = FoldOutcome {
        accuracies: Vec::with_capacity(methods.len()),
        traces: Vec::with_capacity(methods.len()),
        seconds: Vec::with_capacity(methods.len()),
        size: test.len(),
    };
    for &method in methods {
        let start = Instant::now();
        let trained = train_method(method, source, &fold_target, hp)?;
        outcome.seconds.push(start.elapsed().as_secs_f64());
        let scores = &test_x * &trained.classifier;
        outcome.accuracies.push(accuracy(scores.as_slice(), &test_y)?);
        outcome.traces.push(trained.objective_trace);
    }
    Ok(outcome)
}

/// Stratified k-fold evaluation over the labeled target points. `parallel`
/// > 1 runs folds on that many threads; results do not depend on it.
pub fn run_cv(config: &ExperimentConfig, parallel: usize) -> Result<ExperimentReport> {
    let (source, target) = config.load_data()?;
    run_cv_on(config, &source, &target, parallel)
}

pub fn run_cv_on(config: &ExperimentConfig, source: &DomainDataset, target: &DomainDataset, parallel: usize) -> Result<ExperimentReport> {
    let started = Instant::now();
    config.validate()?;
    config.hp.validate(source.dim())?;
    let assignment = stratified_folds(target.labels(), config.folds, config.seed)?;
    let methods = config.methods();
    let work = |fold: usize| run_fold(fold, &assignment, source, target, &config.hp, &methods);
    let outcomes: Vec<FoldOutcome> = if parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..config.folds).into_par_iter().map(work).collect::<Result<Vec<_>>>())?
    } else {
        (0..config.folds).map(work).collect::<Result<Vec<_>>>()?
    };

    let reports = methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let fold_accuracies: Vec<f64> = outcomes.iter().map(|o| o.accuracies[k]).collect();
            MethodReport {
                method,
                mean_accuracy: fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64,
                fold_accuracies,
                objective_traces: outcomes.iter().map(|o| o.traces[k].clone()).collect(),
                wall_clock_seconds: outcomes.iter().map(|o| o.seconds[k]).collect(),
            }
        })
        .collect();

    let mut resolved = config.clone();
    resolved.hp.r = Some(config.hp.resolved_r(source.dim()));
    Ok(ExperimentReport {
        config: resolved,
        folds: config.folds,
        fold_sizes: outcomes.iter().map(|o| o.size).collect(),
        methods: reports,
        total_wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// The rotated two-Gaussian benchmark used to compare against the
/// baselines: 2-D, 200 points per domain, class means 4 apart, target
/// rotated by 30° and shifted by (−1, 1).
pub fn rotated_benchmark(seed: u64) -> SyntheticShiftSpec {
    SyntheticShiftSpec {
        dim: 2,
        n: 200,
        separation: 4.0,
        angle: 30f64.to_radians(),
        translation: vec![-1.0, 1.0],
        noise: 0.0,
        seed,
    }
}
