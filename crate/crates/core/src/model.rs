//! Model parameters and the training objective.
//!
//! Both domains are mapped into an `r`-dimensional common space by a matrix
//! `Θ` with orthonormal rows. A shared classifier `w` acts in that space and
//! each domain adds its own linear correction:
//!
//! ```text
//! f(x) = wᵀΘx + uᵀx = φᵀx      (source)
//! h(x) = wᵀΘx + vᵀx = ψᵀx      (target)
//! ```
//!
//! The model stores `φ` and `ψ`; `u = φ − Θᵀw` and `v = ψ − Θᵀw` are derived.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::neighborhood::{NeighborhoodGraph, DEFAULT_K};

/// Tolerance on `‖ΘΘᵀ − I‖_max`.
pub const ORTHONORMAL_TOL: f64 = 1e-8;
const WEIGHT_BOUND_TOL: f64 = 1e-9;
const WEIGHT_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Weight of the adaptation penalty `½(‖u‖² + ‖v‖²)`.
    pub c1: f64,
    /// Weight of both neighborhood-reconstruction regularizers.
    pub c2: f64,
    /// Weight of the mean-matching term.
    pub c3: f64,
    /// Common-space dimension; `None` means `min(m, 20)`.
    pub r: Option<usize>,
    /// Upper bound on every source weight.
    pub delta: f64,
    /// Neighbors per point.
    pub k: usize,
    /// Initial subgradient step.
    pub rho: f64,
    pub outer_iters: usize,
    pub subgrad_iters: usize,
    /// Relative objective change that stops the outer loop.
    pub tol: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            r: None,
            delta: 3.0,
            k: DEFAULT_K,
            rho: 0.01,
            outer_iters: 50,
            subgrad_iters: 100,
            tol: 1e-6,
        }
    }
}

impl HyperParams {
    pub fn resolved_r(&self, m: usize) -> usize {
        self.r.unwrap_or(m.min(20))
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        for (name, v) in [("c1", self.c1), ("c2", self.c2), ("c3", self.c3)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Parameter(format!("{name} = {v} must be a finite value ≥ 0")));
            }
        }
        if !(self.delta.is_finite() && self.delta >= 1.0) {
            return Err(Error::Parameter(format!(
                "delta = {} must be ≥ 1 for the weights to sum to n1",
                self.delta
            )));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::Parameter(format!("rho = {} must be > 0", self.rho)));
        }
        if self.k == 0 {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::Parameter(format!("tol = {} must be ≥ 0", self.tol)));
        }
        let r = self.resolved_r(m);
        if r == 0 || r > m {
            return Err(Error::Parameter(format!("r = {r} must satisfy 1 ≤ r ≤ m = {m}")));
        }
        Ok(())
    }
}

/// Largest entry of `|ΘΘᵀ − I|`.
pub fn orthonormality_error(theta: &DMatrix<f64>) -> f64 {
    let gram = theta * theta.transpose();
    (gram - DMatrix::identity(theta.nrows(), theta.nrows())).amax()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferModel {
    theta: DMatrix<f64>,
    w: DVector<f64>,
    phi: DVector<f64>,
    psi: DVector<f64>,
}

impl TransferModel {
    pub fn new(theta: DMatrix<f64>, w: DVector<f64>, phi: DVector<f64>, psi: DVector<f64>) -> Result<Self> {
        let (r, m) = theta.shape();
        if r == 0 || r > m {
            return Err(Error::Validation(format!("theta is {r}×{m}; need 1 ≤ r ≤ m")));
        }
        if w.len() != r || phi.len() != m || psi.len() != m {
            return Err(Error::Validation(format!(
                "parameter sizes w {}, phi {}, psi {} do not fit theta {r}×{m}",
                w.len(),
                phi.len(),
                psi.len()
            )));
        }
        let finite = theta.iter().chain(w.iter()).chain(phi.iter()).chain(psi.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("model parameters must be finite".into()));
        }
        let err = orthonormality_error(&theta);
        if err > ORTHONORMAL_TOL {
            return Err(Error::Validation(format!("theta rows are not orthonormal (error {err:e})")));
        }
        Ok(TransferModel { theta, w, phi, psi })
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn phi(&self) -> &DVector<f64> {
        &self.phi
    }

    pub fn psi(&self) -> &DVector<f64> {
        &self.psi
    }

    pub fn r(&self) -> usize {
        self.theta.nrows()
    }

    pub fn m(&self) -> usize {
        self.theta.ncols()
    }

    /// `Θᵀw`, the shared part of both effective classifiers.
    pub fn shared(&self) -> DVector<f64> {
        self.theta.tr_mul(&self.w)
    }

    /// Source adaptation `u = φ − Θᵀw`.
    pub fn u(&self) -> DVector<f64> {
        &self.phi - self.shared()
    }

    /// Target adaptation `v = ψ − Θᵀw`.
    pub fn v(&self) -> DVector<f64> {
        &self.psi - self.shared()
    }

    pub fn to_json(&self) -> ModelJson {
        ModelJson {
            theta: (0..self.r())
                .flat_map(|i| self.theta.row(i).iter().copied().collect::<Vec<_>>())
                .collect(),
            w: self.w.iter().copied().collect(),
            phi: self.phi.iter().copied().collect(),
            psi: self.psi.iter().copied().collect(),
            r: self.r(),
            m: self.m(),
        }
    }

    pub fn from_json(json: &ModelJson) -> Result<Self> {
        if json.theta.len() != json.r * json.m {
            return Err(Error::Validation(format!(
                "theta has {} entries, expected {}×{}",
                json.theta.len(),
                json.r,
                json.m
            )));
        }
        Self::new(
            DMatrix::from_row_slice(json.r, json.m, &json.theta),
            DVector::from_vec(json.w.clone()),
            DVector::from_vec(json.phi.clone()),
            DVector::from_vec(json.psi.clone()),
        )
    }
}

/// On-disk model layout; `theta` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub r: usize,
    pub m: usize,
}

/// Source instance weights `π` with `0 ≤ π_i ≤ δ` and `Σπ_i = n1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceWeights {
    pi: DVector<f64>,
    delta: f64,
}

impl SourceWeights {
    pub fn new(pi: DVector<f64>, delta: f64) -> Result<Self> {
        let n = pi.len();
        if n == 0 {
            return Err(Error::Validation("empty weight vector".into()));
        }
        if let Some(i) = (0..n).find(|&i| !(pi[i] >= -WEIGHT_BOUND_TOL && pi[i] <= delta + WEIGHT_BOUND_TOL)) {
            return Err(Error::Validation(format!("weight {i} = {} outside [0, {delta}]", pi[i])));
        }
        let sum_err = (pi.sum() - n as f64).abs();
        if sum_err > WEIGHT_SUM_TOL {
            return Err(Error::Validation(format!("weights sum to {}, expected {n}", pi.sum())));
        }
        Ok(SourceWeights { pi, delta })
    }

    pub fn uniform(n: usize, delta: f64) -> Result<Self> {
        Self::new(DVector::from_element(n, 1.0), delta)
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// Largest bound violation (0 when feasible).
    pub fn bound_violation(&self) -> f64 {
        self.pi.iter().map(|&p| (-p).max(p - self.delta).max(0.0)).fold(0.0, f64::max)
    }

    pub fn sum_error(&self) -> f64 {
        (self.pi.sum() - self.pi.len() as f64).abs()
    }
}

fn check_dim(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected != got {
        return Err(Error::Validation(format!("{what}: expected dimension {expected}, got {got}")));
    }
    Ok(())
}

pub fn project(theta: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(theta.ncols(), x.len(), "project")?;
    Ok(theta * x)
}

/// `(1/n1) Σ_i Θx_i π_i`.
pub fn weighted_source_mean(theta: &DMatrix<f64>, source: &DomainDataset, weights: &SourceWeights) -> Result<DVector<f64>> {
    check_dim(theta.ncols(), source.dim(), "weighted_source_mean")?;
    check_dim(source.len(), weights.len(), "weighted_source_mean weights")?;
    let raw = source.features().tr_mul(weights.pi()) / source.len() as f64;
    Ok(theta * raw)
}

/// `(1/n2) Σ_j Θx_j` over every target row.
pub fn target_mean(theta: &DMatrix<f64>, target: &DomainDataset) -> Result<DVector<f64>> {
    check_dim(theta.ncols(), target.dim(), "target_mean")?;
    let raw = target.features().row_mean().transpose();
    Ok(theta * raw)
}

/// `½‖μ_s^π − μ_t‖²`.
pub fn matching_distance(
    theta: &DMatrix<f64>,
    source: &DomainDataset,
    weights: &SourceWeights,
    target: &DomainDataset,
) -> Result<f64> {
    let diff = weighted_source_mean(theta, source, weights)? - target_mean(theta, target)?;
    Ok(0.5 * diff.norm_squared())
}

pub fn classify_source(model: &TransferModel, x: &DVector<f64>) -> Result<f64> {
    check_dim(model.m(), x.len(), "classify_source")?;
    Ok(model.phi.dot(x))
}

pub fn classify_target(model: &TransferModel, x: &DVector<f64>) -> Result<f64> {
    check_dim(model.m(), x.len(), "classify_target")?;
    Ok(model.psi.dot(x))
}

/// `max(0, 1 − margin)`.
pub fn hinge(margin: f64) -> f64 {
    (1.0 - margin).max(0.0)
}

/// Neighborhood graphs of both domains.
#[derive(Debug, Clone)]
pub struct DomainGraphs {
    pub source: NeighborhoodGraph,
    pub target: NeighborhoodGraph,
}

impl DomainGraphs {
    pub fn build(source: &DomainDataset, target: &DomainDataset, k: usize) -> Result<Self> {
        Ok(DomainGraphs {
            source: NeighborhoodGraph::build(source, k)?,
            target: NeighborhoodGraph::build(target, k)?,
        })
    }
}

/// The six weighted terms of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    /// `Σ_i π_i max(0, 1 − y_i φᵀx_i)`.
    pub source_hinge: f64,
    /// `Σ_{j ≤ n3} max(0, 1 − y_j ψᵀx_j)`.
    pub target_hinge: f64,
    /// `(C1/2)(‖φ − Θᵀw‖² + ‖ψ − Θᵀw‖²)`.
    pub adaptation: f64,
    /// `C2 Σ_i (π_i − Σ_k ω_ik π_k)²`.
    pub weight_smoothness: f64,
    /// `C2 Σ_j (ψᵀx_j − Σ_k ω_jk ψᵀx_k)²`.
    pub response_smoothness: f64,
    /// `(C3/2)‖μ_s^π − μ_t‖²`.
    pub matching: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.source_hinge
            + self.target_hinge
            + self.adaptation
            + self.weight_smoothness
            + self.response_smoothness
            + self.matching
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.source_hinge,
            self.target_hinge,
            self.adaptation,
            self.weight_smoothness,
            self.response_smoothness,
            self.matching,
        ]
    }
}

/// Checks that the datasets, weights and graphs describe the same problem.
pub(crate) fn check_problem(
    model: &TransferModel,
    weights: &SourceWeights,
    source: &DomainDataset,
    target: &DomainDataset,
    graphs: &DomainGraphs,
) -> Result<()> {
    check_dim(model.m(), source.dim(), "source features")?;
    check_dim(model.m(), target.dim(), "target features")?;
    check_dim(source.len(), weights.len(), "source weights")?;
    if !source.is_fully_labeled() {
        return Err(Error::Validation("source domain must be fully labeled".into()));
    }
    if graphs.source.len() != source.len() || graphs.target.len() != target.len() {
        return Err(Error::State(format!(
            "neighborhood graphs cover {}/{} points but the domains have {}/{}",
            graphs.source.len(),
            graphs.target.len(),
            source.len(),
            target.len()
        )));
    }
    Ok(())
}

pub fn objective(
    model: &TransferModel,
    weights: &SourceWeights,
    source: &DomainDataset,
    target: &DomainDataset,
    graphs: &DomainGraphs,
    hp: &HyperParams,
) -> Result<ObjectiveTerms> {
    check_problem(model, weights, source, target, graphs)?;
    let pi = weights.pi();
    let source_scores = source.features() * model.phi();
    let target_scores = target.features() * model.psi();

    let source_hinge = source
        .labels()
        .iter()
        .enumerate()
        .map(|(i, y)| pi[i] * hinge(y * source_scores[i]))
        .sum();
    let target_hinge = target
        .labels()
        .iter()
        .enumerate()
        .map(|(j, y)| hinge(y * target_scores[j]))
        .sum();
    let adaptation = 0.5 * hp.c1 * (model.u().norm_squared() + model.v().norm_squared());
    let weight_smoothness = hp.c2 * graphs.source.residuals(pi).norm_squared();
    let response_smoothness = hp.c2 * graphs.target.residuals(&target_scores).norm_squared();
    let matching = hp.c3 * matching_distance(model.theta(), source, weights, target)?;
    Ok(ObjectiveTerms {
        source_hinge,
        target_hinge,
        adaptation,
        weight_smoothness,
        response_smoothness,
        matching,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: &[&[f64]], labels: &[f64]) -> DomainDataset {
        let m = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        DomainDataset::new(DMatrix::from_row_slice(rows.len(), m, &flat), labels.to_vec()).unwrap()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn identity_projection() {
        let x = v(&[3.0, -4.0, 1.0]);
        assert_eq!(project(&DMatrix::identity(3, 3), &x).unwrap(), x);
        let theta = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_eq!(project(&theta, &v(&[3.0, 4.0])).unwrap().as_slice(), &[3.0]);
        assert!(project(&theta, &v(&[1.0])).is_err());
    }

    #[test]
    fn weighted_means() {
        let theta = DMatrix::identity(2, 2);
        let s = ds(&[&[0.0, 0.0], &[2.0, 2.0]], &[1.0, -1.0]);
        let ones = SourceWeights::uniform(2, 3.0).unwrap();
        assert_eq!(weighted_source_mean(&theta, &s, &ones).unwrap().as_slice(), &[1.0, 1.0]);
        let s = ds(&[&[1.0, 0.0], &[0.0, 1.0]], &[1.0, -1.0]);
        let skew = SourceWeights::new(v(&[2.0, 0.0]), 3.0).unwrap();
        assert_eq!(weighted_source_mean(&theta, &s, &skew).unwrap().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn target_mean_cases() {
        let theta = DMatrix::identity(2, 2);
        let single = ds(&[&[1.5, -2.0]], &[]);
        assert_eq!(target_mean(&theta, &single).unwrap().as_slice(), &[1.5, -2.0]);
        let pair = ds(&[&[1.5, -2.0], &[-1.5, 2.0]], &[]);
        assert_eq!(target_mean(&theta, &pair).unwrap().as_slice(), &[0.0, 0.0]);
        let t = ds(&[&[1.0, 2.0], &[3.0, 5.0], &[-1.0, 0.5]], &[1.0, 1.0, -1.0]);
        let ones = SourceWeights::uniform(3, 3.0).unwrap();
        assert_eq!(target_mean(&theta, &t).unwrap(), weighted_source_mean(&theta, &t, &ones).unwrap());
    }

    #[test]
    fn matching_distance_cases() {
        let theta = DMatrix::identity(2, 2);
        let s = ds(&[&[1.0, 0.0], &[1.0, 0.0]], &[1.0, -1.0]);
        let t = ds(&[&[0.0, 0.0]], &[]);
        let ones = SourceWeights::uniform(2, 3.0).unwrap();
        assert_eq!(matching_distance(&theta, &s, &ones, &t).unwrap(), 0.5);
        assert_eq!(matching_distance(&theta, &s, &ones, &s).unwrap(), 0.0);
    }

    #[test]
    fn weights_validation() {
        assert!(SourceWeights::new(v(&[3.5, -1.5]), 3.0).is_err());
        assert!(SourceWeights::new(v(&[1.0, 0.5]), 3.0).is_err());
        assert!(SourceWeights::new(v(&[2.0, 0.0]), 3.0).is_ok());
    }

    #[test]
    fn model_rejects_non_orthonormal_theta() {
        let theta = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(TransferModel::new(theta, v(&[0.0]), v(&[0.0, 0.0]), v(&[0.0, 0.0])).is_err());
        let tall = DMatrix::identity(3, 2);
        assert!(TransferModel::new(tall, v(&[0.0; 3]), v(&[0.0, 0.0]), v(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn classifiers() {
        let theta = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let zero = TransferModel::new(theta.clone(), v(&[0.0]), v(&[0.0, 0.0]), v(&[0.0, 0.0])).unwrap();
        assert_eq!(classify_source(&zero, &v(&[5.0, -2.0])).unwrap(), 0.0);
        // u = 0: φ = Θᵀw.
        let shared = TransferModel::new(theta, v(&[2.0]), v(&[2.0, 0.0]), v(&[1.0, 1.0])).unwrap();
        let x = v(&[1.5, 3.0]);
        assert_eq!(classify_source(&shared, &x).unwrap(), 2.0 * 1.5);
        assert_eq!(classify_target(&shared, &x).unwrap(), 4.5);
        assert!(classify_target(&shared, &v(&[1.0])).is_err());
    }

    #[test]
    fn hyperparams_validation() {
        let hp = HyperParams::default();
        assert!(hp.validate(4).is_ok());
        assert_eq!(hp.resolved_r(4), 4);
        assert_eq!(hp.resolved_r(50), 20);
        assert!(HyperParams { delta: 0.5, ..hp.clone() }.validate(4).is_err());
        assert!(HyperParams { rho: 0.0, ..hp.clone() }.validate(4).is_err());
        assert!(HyperParams { c2: -1.0, ..hp.clone() }.validate(4).is_err());
        assert!(HyperParams { r: Some(5), ..hp }.validate(4).is_err());
    }

    #[test]
    fn hyperparams_json_defaults() {
        let hp: HyperParams = serde_json::from_str(r#"{"c3": 0.0, "k": 3}"#).unwrap();
        assert_eq!(hp.c3, 0.0);
        assert_eq!(hp.k, 3);
        assert_eq!(hp.delta, 3.0);
        assert!(serde_json::from_str::<HyperParams>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn zero_model_hinge_is_one_per_point() {
        let s = ds(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.5, 0.5, 1.0], &[2.0, 0.0, 1.0]], &[1.0, -1.0, 1.0, -1.0]);
        let t = ds(&[&[0.0, 1.0, 0.0], &[1.0, 1.0, 1.0], &[3.0, 0.0, 1.0]], &[-1.0, 1.0]);
        let theta = DMatrix::identity(2, 3);
        let model = TransferModel::new(theta, DVector::zeros(2), DVector::zeros(3), DVector::zeros(3)).unwrap();
        let weights = SourceWeights::new(v(&[2.0, 0.5, 1.5, 0.0]), 3.0).unwrap();
        let graphs = DomainGraphs::build(&s, &t, 2).unwrap();
        let hp = HyperParams::default();
        let terms = objective(&model, &weights, &s, &t, &graphs, &hp).unwrap();
        assert_eq!(terms.source_hinge, 4.0);
        assert_eq!(terms.target_hinge, 2.0);
        assert_eq!(terms.adaptation, 0.0);
        assert_eq!(terms.response_smoothness, 0.0);
        let pure = HyperParams { c1: 0.0, c2: 0.0, c3: 0.0, ..hp };
        let terms = objective(&model, &weights, &s, &t, &graphs, &pure).unwrap();
        assert_eq!(terms.total(), 6.0);
    }

    #[test]
    fn mismatched_graphs_are_a_state_error() {
        let s = ds(&[&[1.0], &[2.0], &[3.0]], &[1.0, -1.0, 1.0]);
        let t = ds(&[&[1.0], &[2.0], &[4.0], &[5.0]], &[]);
        let graphs = DomainGraphs::build(&t, &s, 1).unwrap();
        let model = TransferModel::new(DMatrix::identity(1, 1), v(&[0.0]), v(&[0.0]), v(&[0.0])).unwrap();
        let weights = SourceWeights::uniform(3, 3.0).unwrap();
        let err = objective(&model, &weights, &s, &t, &graphs, &HyperParams::default()).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn model_json_round_trip() {
        let theta = DMatrix::from_row_slice(1, 3, &[0.6, 0.0, 0.8]);
        let model = TransferModel::new(theta, v(&[0.1]), v(&[1.0 / 3.0, 2.0, -7.25e-300]), v(&[0.0, 1e17, 3.0])).unwrap();
        let text = serde_json::to_string(&model.to_json()).unwrap();
        let back: ModelJson = serde_json::from_str(&text).unwrap();
        assert_eq!(TransferModel::from_json(&back).unwrap(), model);
    }
}
