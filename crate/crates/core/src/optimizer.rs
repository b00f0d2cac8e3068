//! Alternating minimization of the training objective.
//!
//! One outer iteration runs, in order:
//!
//! 1. backtracking subgradient descent on `(φ, ψ)`;
//! 2. the closed-form shared classifier `w = ½Θ(φ + ψ)`;
//! 3. the spectral update of `Θ` (smallest eigenvectors of a rank ≤ 2
//!    matrix), followed by a fresh `w` for the new `Θ`;
//! 4. a box- and sum-constrained QP for the source weights `π`.
//!
//! Every step is exact or monotone, so the recorded objective never
//! increases.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::model::{
    hinge, objective, orthonormality_error, DomainGraphs, HyperParams, ObjectiveTerms, SourceWeights,
    TransferModel, ORTHONORMAL_TOL,
};
use crate::qp::{solve_qp, BoxEqQp, QpSolution};

/// Smallest step tried by the backtracking line search.
pub const MIN_STEP: f64 = 1e-12;

/// `w = ½Θ(φ + ψ)`, the minimizer of `‖φ − Θᵀw‖² + ‖ψ − Θᵀw‖²` when `Θ`
/// has orthonormal rows.
pub fn solve_w(theta: &DMatrix<f64>, phi: &DVector<f64>, psi: &DVector<f64>) -> Result<DVector<f64>> {
    if phi.len() != theta.ncols() || psi.len() != theta.ncols() {
        return Err(Error::Validation(format!(
            "solve_w: theta has {} columns, phi {} and psi {} entries",
            theta.ncols(),
            phi.len(),
            psi.len()
        )));
    }
    Ok(theta * (phi + psi) * 0.5)
}

/// Flips `v` so that its first entry with magnitude above `1e-12` is
/// positive.
fn canonical_sign(v: &mut DVector<f64>) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

fn stack_rows(rows: &[DVector<f64>], m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j])
}

/// Rows: the `r` eigenvectors of `M = pos·posᵀ − neg·negᵀ` with the
/// smallest eigenvalues, ascending. The two nonzero eigenpairs live in
/// `span{neg, pos}` and are computed there in closed form; the zero
/// eigenspace is filled by Gram–Schmidt on the canonical basis in index
/// order.
pub fn smallest_eigenvectors_rank_two(neg: &DVector<f64>, pos: &DVector<f64>, r: usize) -> Result<DMatrix<f64>> {
    let m = neg.len();
    if pos.len() != m {
        return Err(Error::Validation("rank-two factors differ in length".into()));
    }
    if r == 0 || r > m {
        return Err(Error::Parameter(format!("r = {r} must satisfy 1 ≤ r ≤ m = {m}")));
    }
    let scale = neg.norm_squared() + pos.norm_squared();
    let small = 1e-12 * scale.sqrt();

    // Orthonormal basis of span{neg, pos}.
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(2);
    for v in [neg, pos] {
        let mut e = v.clone();
        for b in &basis {
            let c = b.dot(&e);
            e.axpy(-c, b, 1.0);
        }
        let nrm = e.norm();
        if nrm > small && nrm > 0.0 {
            basis.push(e / nrm);
        }
    }
    // Coordinates of neg and pos in the basis; M restricted to the span.
    let coords = |v: &DVector<f64>| -> Vec<f64> { basis.iter().map(|b| b.dot(v)).collect() };
    let (a, p) = (coords(neg), coords(pos));
    let d = basis.len();
    let reduced = |i: usize, j: usize| p[i] * p[j] - a[i] * a[j];
    let mut pairs: Vec<(f64, DVector<f64>)> = Vec::with_capacity(2);
    match d {
        1 => pairs.push((reduced(0, 0), basis[0].clone())),
        2 => {
            let (xx, xy, yy) = (reduced(0, 0), reduced(0, 1), reduced(1, 1));
            let mean = 0.5 * (xx + yy);
            let rad = (0.25 * (xx - yy) * (xx - yy) + xy * xy).sqrt();
            if rad == 0.0 {
                pairs.push((mean, basis[0].clone()));
                pairs.push((mean, basis[1].clone()));
            } else {
                let lambda = mean - rad;
                // Null vector of the larger row of [[xx − λ, xy], [xy, yy − λ]].
                let (c0, c1) = if (xx - lambda).abs() + xy.abs() >= xy.abs() + (yy - lambda).abs() {
                    (-xy, xx - lambda)
                } else {
                    (yy - lambda, -xy)
                };
                let n = (c0 * c0 + c1 * c1).sqrt();
                let (c0, c1) = (c0 / n, c1 / n);
                pairs.push((lambda, &basis[0] * c0 + &basis[1] * c1));
                pairs.push((mean + rad, &basis[0] * (-c1) + &basis[1] * c0));
            }
        }
        _ => {}
    }

    let eig_tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let negative: Vec<DVector<f64>> = pairs.iter().filter(|(l, _)| *l < -eig_tol).map(|(_, v)| v.clone()).collect();
    let positive: Vec<DVector<f64>> = pairs.iter().filter(|(l, _)| *l > eig_tol).map(|(_, v)| v.clone()).collect();
    let mut zero: Vec<DVector<f64>> = pairs.iter().filter(|(l, _)| l.abs() <= eig_tol).map(|(_, v)| v.clone()).collect();

    let mut spanned: Vec<DVector<f64>> = basis.clone();
    let needed = m - basis.len();
    let mut completion = 0;
    for i in 0..m {
        if completion == needed {
            break;
        }
        let mut e = DVector::zeros(m);
        e[i] = 1.0;
        for _ in 0..2 {
            for b in &spanned {
                let c = b.dot(&e);
                e.axpy(-c, b, 1.0);
            }
        }
        let nrm = e.norm();
        if nrm > 1e-7 {
            e /= nrm;
            spanned.push(e.clone());
            zero.push(e);
            completion += 1;
        }
    }

    let mut rows: Vec<DVector<f64>> = negative.into_iter().chain(zero).chain(positive).take(r).collect();
    for row in &mut rows {
        canonical_sign(row);
    }
    Ok(stack_rows(&rows, m))
}

/// `d = (1/n1)Σ π_i x_i − (1/n2)Σ x_j` in the original feature space.
pub fn mean_gap(source: &DomainDataset, target: &DomainDataset, weights: &SourceWeights) -> DVector<f64> {
    source.features().tr_mul(weights.pi()) / source.len() as f64 - target.features().row_mean().transpose()
}

/// Factors of the Θ cost `M = −(C1/4)(φ+ψ)(φ+ψ)ᵀ + (C3/2)ddᵀ` as
/// `(neg, pos)` with `M = pos·posᵀ − neg·negᵀ`.
pub fn theta_cost_factors(
    phi: &DVector<f64>,
    psi: &DVector<f64>,
    source: &DomainDataset,
    target: &DomainDataset,
    weights: &SourceWeights,
    hp: &HyperParams,
) -> (DVector<f64>, DVector<f64>) {
    let neg = (phi + psi) * (hp.c1 / 4.0).sqrt();
    let pos = mean_gap(source, target, weights) * (hp.c3 / 2.0).sqrt();
    (neg, pos)
}

/// Dense `M`, for diagnostics and tests.
pub fn theta_cost_matrix(
    phi: &DVector<f64>,
    psi: &DVector<f64>,
    source: &DomainDataset,
    target: &DomainDataset,
    weights: &SourceWeights,
    hp: &HyperParams,
) -> DMatrix<f64> {
    let (neg, pos) = theta_cost_factors(phi, psi, source, target, weights, hp);
    &pos * pos.transpose() - &neg * neg.transpose()
}

/// Minimizes `Tr[ΘMΘᵀ]` over matrices with `r` orthonormal rows.
pub fn solve_theta(
    phi: &DVector<f64>,
    psi: &DVector<f64>,
    source: &DomainDataset,
    target: &DomainDataset,
    weights: &SourceWeights,
    hp: &HyperParams,
) -> Result<DMatrix<f64>> {
    let m = source.dim();
    if phi.len() != m || psi.len() != m || target.dim() != m {
        return Err(Error::Validation("solve_theta: dimension mismatch".into()));
    }
    let (neg, pos) = theta_cost_factors(phi, psi, source, target, weights, hp);
    smallest_eigenvectors_rank_two(&neg, &pos, hp.resolved_r(m))
}

/// Top-`r` principal directions of the pooled, centered rows of both
/// domains, ordered by decreasing variance (ties by index).
pub fn principal_directions(source: &DomainDataset, target: &DomainDataset, r: usize) -> Result<DMatrix<f64>> {
    let m = source.dim();
    if target.dim() != m {
        return Err(Error::Validation("domains differ in dimension".into()));
    }
    if r == 0 || r > m {
        return Err(Error::Parameter(format!("r = {r} must satisfy 1 ≤ r ≤ m = {m}")));
    }
    let total = (source.len() + target.len()) as f64;
    let mean = (source.features().row_sum() + target.features().row_sum()) / total;
    let mut cov = DMatrix::zeros(m, m);
    for ds in [source, target] {
        let mut centered = ds.features().clone();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        cov += centered.tr_mul(&centered);
    }
    cov /= total;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let rows: Vec<DVector<f64>> = order[..r]
        .iter()
        .map(|&i| {
            let mut v = eig.eigenvectors.column(i).into_owned();
            v /= v.norm();
            canonical_sign(&mut v);
            v
        })
        .collect();
    Ok(stack_rows(&rows, m))
}

/// Data shared by every step of a fit: the domains, their neighborhood
/// graphs and a few precomputed matrices.
#[derive(Debug, Clone)]
pub struct TrainingContext<'a> {
    pub source: &'a DomainDataset,
    pub target: &'a DomainDataset,
    pub graphs: DomainGraphs,
    pub hp: HyperParams,
    /// Rows `x_j − Σ_k ω_jk x_k` of the target domain.
    target_residuals: DMatrix<f64>,
    /// `(I − W)ᵀ(I − W)` for the source graph.
    source_smoother: DMatrix<f64>,
}

impl<'a> TrainingContext<'a> {
    pub fn new(source: &'a DomainDataset, target: &'a DomainDataset, hp: &HyperParams) -> Result<Self> {
        if source.dim() != target.dim() {
            return Err(Error::Validation(format!(
                "source dimension {} differs from target dimension {}",
                source.dim(),
                target.dim()
            )));
        }
        if !source.is_fully_labeled() {
            return Err(Error::Validation("source domain must be fully labeled".into()));
        }
        hp.validate(source.dim())?;
        let graphs = DomainGraphs::build(source, target, hp.k)?;
        Ok(Self::with_graphs(source, target, graphs, hp))
    }

    pub fn with_graphs(source: &'a DomainDataset, target: &'a DomainDataset, graphs: DomainGraphs, hp: &HyperParams) -> Self {
        let target_residuals = graphs.target.residual_rows(target.features());
        let lap = graphs.source.laplacian_like();
        let source_smoother = lap.tr_mul(&lap);
        TrainingContext {
            source,
            target,
            graphs,
            hp: hp.clone(),
            target_residuals,
            source_smoother,
        }
    }

    pub fn objective(&self, model: &TransferModel, weights: &SourceWeights) -> Result<ObjectiveTerms> {
        objective(model, weights, self.source, self.target, &self.graphs, &self.hp)
    }

    /// The part of the objective that depends on `(φ, ψ)` with `Θ`, `w` and
    /// `π` held fixed; `anchor = Θᵀw`.
    pub fn q_value(&self, phi: &DVector<f64>, psi: &DVector<f64>, anchor: &DVector<f64>, pi: &DVector<f64>) -> f64 {
        let hp = &self.hp;
        let s_scores = self.source.features() * phi;
        let t_scores = self.target.features() * psi;
        let source_hinge: f64 = self
            .source
            .labels()
            .iter()
            .enumerate()
            .map(|(i, y)| hinge(y * s_scores[i]) * pi[i])
            .sum();
        let target_hinge: f64 = self
            .target
            .labels()
            .iter()
            .enumerate()
            .map(|(j, y)| hinge(y * t_scores[j]))
            .sum();
        let adaptation = 0.5 * hp.c1 * ((phi - anchor).norm_squared() + (psi - anchor).norm_squared());
        let response = hp.c2 * (&self.target_residuals * psi).norm_squared();
        source_hinge + target_hinge + adaptation + response
    }

    /// Subgradients of [`q_value`](Self::q_value); a hinge counts as active
    /// when its slack `1 − y·score` is ≥ 0.
    pub fn subgradients(
        &self,
        phi: &DVector<f64>,
        psi: &DVector<f64>,
        anchor: &DVector<f64>,
        pi: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let hp = &self.hp;
        let (xs, xt) = (self.source.features(), self.target.features());
        let s_scores = xs * phi;
        let t_scores = xt * psi;
        let mut g_phi = (phi - anchor) * hp.c1;
        for (i, y) in self.source.labels().iter().enumerate() {
            if 1.0 - y * s_scores[i] >= 0.0 {
                for (g, x) in g_phi.iter_mut().zip(xs.row(i).iter()) {
                    *g -= y * pi[i] * x;
                }
            }
        }
        let mut g_psi = (psi - anchor) * hp.c1;
        for (j, y) in self.target.labels().iter().enumerate() {
            if 1.0 - y * t_scores[j] >= 0.0 {
                for (g, x) in g_psi.iter_mut().zip(xt.row(j).iter()) {
                    *g -= y * x;
                }
            }
        }
        let r = &self.target_residuals;
        g_psi += r.tr_mul(&(r * psi)) * (2.0 * hp.c2);
        (g_phi, g_psi)
    }

    /// Pieces of the π subproblem: the QP and the constant
    /// `(C3/2)‖μ_t‖²` such that QP objective + constant equals
    /// weighted source hinge + π smoothness + matching.
    pub fn pi_subproblem(&self, model: &TransferModel) -> Result<(BoxEqQp, f64)> {
        let hp = &self.hp;
        let n1 = self.source.len() as f64;
        let projected = model.theta() * self.source.features().transpose();
        let mu_t = model.theta() * self.target.features().row_mean().transpose();
        let mut h = &self.source_smoother * (2.0 * hp.c2) + projected.tr_mul(&projected) * (hp.c3 / (n1 * n1));
        h = (&h + h.transpose()) * 0.5;
        let scores = self.source.features() * model.phi();
        let losses = DVector::from_fn(self.source.len(), |i, _| hinge(self.source.labels()[i] * scores[i]));
        let f = losses - projected.tr_mul(&mu_t) * (hp.c3 / n1);
        let qp = BoxEqQp::with_uniform_bounds(h, f, 0.0, hp.delta, n1)?;
        Ok((qp, 0.5 * hp.c3 * mu_t.norm_squared()))
    }
}

/// Subgradient descent in which every step starts at `rho` and is halved
/// until `value` does not increase; gives up once the step falls below
/// [`MIN_STEP`]. Returns the final point and the number of accepted steps.
pub fn descend_with_backtracking<V, G>(x0: DVector<f64>, value: V, gradient: G, iters: usize, rho: f64) -> (DVector<f64>, usize)
where
    V: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut x = x0;
    let mut current = value(&x);
    let mut accepted = 0;
    for _ in 0..iters {
        let g = gradient(&x);
        if g.iter().all(|v| *v == 0.0) {
            break;
        }
        let mut step = rho;
        let mut moved = false;
        while step >= MIN_STEP {
            let candidate = &x - &g * step;
            let v = value(&candidate);
            if v <= current {
                x = candidate;
                current = v;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
        accepted += 1;
    }
    (x, accepted)
}

/// Runs `hp.subgrad_iters` backtracking subgradient steps on `(φ, ψ)`.
pub fn update_phi_psi(
    ctx: &TrainingContext<'_>,
    model: &TransferModel,
    weights: &SourceWeights,
) -> (DVector<f64>, DVector<f64>) {
    let m = model.m();
    let anchor = model.shared();
    let pi = weights.pi();
    let split = |z: &DVector<f64>| (z.rows(0, m).into_owned(), z.rows(m, m).into_owned());
    let mut start = DVector::zeros(2 * m);
    start.rows_mut(0, m).copy_from(model.phi());
    start.rows_mut(m, m).copy_from(model.psi());
    let (z, _) = descend_with_backtracking(
        start,
        |z| {
            let (phi, psi) = split(z);
            ctx.q_value(&phi, &psi, &anchor, pi)
        },
        |z| {
            let (phi, psi) = split(z);
            let (gp, gq) = ctx.subgradients(&phi, &psi, &anchor, pi);
            let mut g = DVector::zeros(2 * m);
            g.rows_mut(0, m).copy_from(&gp);
            g.rows_mut(m, m).copy_from(&gq);
            g
        },
        ctx.hp.subgrad_iters,
        ctx.hp.rho,
    );
    split(&z)
}

/// Minimizes the π subproblem from the current weights.
pub fn solve_pi(ctx: &TrainingContext<'_>, model: &TransferModel, weights: &SourceWeights) -> Result<(SourceWeights, QpSolution)> {
    let (qp, _) = ctx.pi_subproblem(model)?;
    let solution = solve_qp(&qp, Some(weights.pi()))?;
    let weights = SourceWeights::new(solution.x.clone(), ctx.hp.delta)?;
    Ok((weights, solution))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    PhiPsi,
    W,
    /// `Θ` followed by the matching `w`.
    Theta,
    Pi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCheck {
    pub step: StepKind,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub terms: ObjectiveTerms,
    pub orthonormality_error: f64,
    pub weight_bound_violation: f64,
    pub weight_sum_error: f64,
    pub steps: Vec<StepCheck>,
    pub qp_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct OptState {
    pub model: TransferModel,
    pub weights: SourceWeights,
    /// Objective after initialization, then after every outer iteration.
    pub objective_trace: Vec<f64>,
    pub iteration: usize,
    pub records: Vec<IterationRecord>,
}

/// A fit that stopped on an error; `state` is the last valid state, when
/// one had been reached.
#[derive(Debug)]
pub struct FitFailure {
    pub error: Error,
    pub state: Option<Box<OptState>>,
}

impl std::fmt::Display for FitFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.state {
            Some(s) => write!(f, "{} (after {} outer iterations)", self.error, s.iteration),
            None => write!(f, "{}", self.error),
        }
    }
}

impl std::error::Error for FitFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for FitFailure {
    fn from(error: Error) -> Self {
        FitFailure { error, state: None }
    }
}

fn record(
    ctx: &TrainingContext<'_>,
    model: &TransferModel,
    weights: &SourceWeights,
    iteration: usize,
    steps: Vec<StepCheck>,
    qp_iterations: usize,
) -> Result<IterationRecord> {
    let terms = ctx.objective(model, weights)?;
    Ok(IterationRecord {
        iteration,
        objective: terms.total(),
        terms,
        orthonormality_error: orthonormality_error(model.theta()),
        weight_bound_violation: weights.bound_violation(),
        weight_sum_error: weights.sum_error(),
        steps,
        qp_iterations,
    })
}

/// Uniform weights, principal-direction `Θ`, and `φ = ψ = Θᵀw` with
/// `w = solve_w(Θ, 0, 0) = 0`.
pub fn initialize(ctx: &TrainingContext<'_>) -> Result<(TransferModel, SourceWeights)> {
    let m = ctx.source.dim();
    let theta = principal_directions(ctx.source, ctx.target, ctx.hp.resolved_r(m))?;
    let zero = DVector::zeros(m);
    let w = solve_w(&theta, &zero, &zero)?;
    let shared = theta.tr_mul(&w);
    let model = TransferModel::new(theta, w, shared.clone(), shared)?;
    Ok((model, SourceWeights::uniform(ctx.source.len(), ctx.hp.delta)?))
}

/// One outer iteration; returns the new parameters and the per-step
/// objective checks.
pub fn outer_step(
    ctx: &TrainingContext<'_>,
    model: &TransferModel,
    weights: &SourceWeights,
) -> Result<(TransferModel, SourceWeights, Vec<StepCheck>, usize)> {
    let total = |m: &TransferModel, w: &SourceWeights| ctx.objective(m, w).map(|t| t.total());
    let mut steps = Vec::with_capacity(4);

    let before = total(model, weights)?;
    let (phi, psi) = update_phi_psi(ctx, model, weights);
    let model1 = TransferModel::new(model.theta().clone(), model.w().clone(), phi, psi)?;
    let after = total(&model1, weights)?;
    steps.push(StepCheck { step: StepKind::PhiPsi, before, after });

    let w = solve_w(model1.theta(), model1.phi(), model1.psi())?;
    let model2 = TransferModel::new(model1.theta().clone(), w, model1.phi().clone(), model1.psi().clone())?;
    let after_w = total(&model2, weights)?;
    steps.push(StepCheck { step: StepKind::W, before: after, after: after_w });

    let theta = solve_theta(model2.phi(), model2.psi(), ctx.source, ctx.target, weights, &ctx.hp)?;
    let w = solve_w(&theta, model2.phi(), model2.psi())?;
    let model3 = TransferModel::new(theta, w, model2.phi().clone(), model2.psi().clone())?;
    let after_theta = total(&model3, weights)?;
    steps.push(StepCheck { step: StepKind::Theta, before: after_w, after: after_theta });

    let (new_weights, qp) = solve_pi(ctx, &model3, weights)?;
    let after_pi = total(&model3, &new_weights)?;
    steps.push(StepCheck { step: StepKind::Pi, before: after_theta, after: after_pi });

    for s in &steps {
        debug_assert!(
            s.after <= s.before + 1e-8 * (1.0 + s.before.abs()),
            "{:?} step increased the objective: {} -> {}",
            s.step,
            s.before,
            s.after
        );
    }
    debug_assert!(orthonormality_error(model3.theta()) <= ORTHONORMAL_TOL);
    Ok((model3, new_weights, steps, qp.iterations))
}

/// Alternating minimization from the default initialization.
pub fn fit(source: &DomainDataset, target: &DomainDataset, hp: &HyperParams) -> std::result::Result<OptState, FitFailure> {
    let ctx = TrainingContext::new(source, target, hp)?;
    fit_with_context(&ctx)
}

pub fn fit_with_context(ctx: &TrainingContext<'_>) -> std::result::Result<OptState, FitFailure> {
    let (model, weights) = initialize(ctx)?;
    let first = record(ctx, &model, &weights, 0, Vec::new(), 0)?;
    let mut state = OptState {
        model,
        weights,
        objective_trace: vec![first.objective],
        iteration: 0,
        records: vec![first],
    };
    for iteration in 1..=ctx.hp.outer_iters {
        let step = outer_step(ctx, &state.model, &state.weights).and_then(|(model, weights, steps, qp_iters)| {
            let rec = record(ctx, &model, &weights, iteration, steps, qp_iters)?;
            Ok((model, weights, rec))
        });
        let (model, weights, rec) = match step {
            Ok(v) => v,
            Err(error) => {
                return Err(FitFailure {
                    error,
                    state: Some(Box::new(state)),
                })
            }
        };
        let previous = *state.objective_trace.last().unwrap();
        let current = rec.objective;
        log::debug!("iteration {iteration}: objective {current}");
        state.model = model;
        state.weights = weights;
        state.objective_trace.push(current);
        state.records.push(rec);
        state.iteration = iteration;
        let change = (previous - current).abs() / previous.abs().max(f64::MIN_POSITIVE);
        if change < ctx.hp.tol {
            break;
        }
    }
    Ok(state)
}
