//! k-nearest-neighbor sets and simplex-constrained local reconstruction
//! coefficients.
//!
//! For every point `x_i` with neighbors `N_i`, the coefficients `ω_i` solve
//!
//! ```text
//! minimize ‖x_i − Σ_k ω_ik x_k‖²   subject to  Σ_k ω_ik = 1,  ω_ik ≥ 0
//! ```
//!
//! which, using the sum constraint, is the QP `ωᵀGω` with the local Gram
//! matrix `G_kl = (x_i − x_k)ᵀ(x_i − x_l)`.

use nalgebra::{DMatrix, DVector};
use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Serialize, Serializer};

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::qp::{solve_qp, BoxEqQp};

pub const DEFAULT_K: usize = 5;

/// Relative ridge added to a local Gram matrix before solving.
const GRAM_RIDGE: f64 = 1e-10;

/// Indices of the `k` nearest rows (Euclidean) of every row, excluding the
/// row itself; ties go to the lower index.
pub fn build_knn(dataset: &DomainDataset, k: usize) -> Result<Vec<Vec<usize>>> {
    knn_rows(dataset.features(), k)
}

pub(crate) fn knn_rows(x: &DMatrix<f64>, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = x.nrows();
    if k == 0 || k >= n {
        return Err(Error::Parameter(format!(
            "neighbor count k = {k} must satisfy 1 ≤ k ≤ n − 1 = {}",
            n.saturating_sub(1)
        )));
    }
    let rows: Vec<DVector<f64>> = x.row_iter().map(|r| r.transpose()).collect();
    let lists = rows
        .iter()
        .enumerate()
        .map(|(i, xi)| {
            let mut cand: Vec<(f64, usize)> = rows
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, xj)| ((xi - xj).norm_squared(), j))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.truncate(k);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    Ok(lists)
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub weights: DVector<f64>,
    /// `‖x − Σ ω_k x_k‖²` at the returned weights.
    pub residual: f64,
}

/// Convex-combination weights reconstructing `point` from `neighbors`.
pub fn solve_reconstruction(point: &DVector<f64>, neighbors: &[DVector<f64>]) -> Result<Reconstruction> {
    if neighbors.is_empty() {
        return Err(Error::Validation("reconstruction needs at least one neighbor".into()));
    }
    if let Some(bad) = neighbors.iter().find(|v| v.len() != point.len()) {
        return Err(Error::Validation(format!(
            "neighbor dimension {} differs from point dimension {}",
            bad.len(),
            point.len()
        )));
    }
    let k = neighbors.len();
    let diffs: Vec<DVector<f64>> = neighbors.iter().map(|nb| point - nb).collect();
    let gram = DMatrix::from_fn(k, k, |a, b| diffs[a].dot(&diffs[b]));
    let ridge = GRAM_RIDGE * gram.trace();
    let mut h = &gram * 2.0;
    for i in 0..k {
        h[(i, i)] += 2.0 * ridge;
    }
    let problem = BoxEqQp::with_uniform_bounds(h, DVector::zeros(k), 0.0, 1.0, 1.0)?;
    let solution = solve_qp(&problem, None)?;
    let weights = solution.x;
    let mut recon = point.clone();
    for (w, nb) in weights.iter().zip(neighbors) {
        recon.axpy(-w, nb, 1.0);
    }
    Ok(Reconstruction {
        residual: recon.norm_squared(),
        weights,
    })
}

/// Neighbor lists and reconstruction coefficients for every point of a
/// domain.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodGraph {
    k: usize,
    neighbors: Vec<Vec<usize>>,
    weights: Vec<Vec<f64>>,
}

impl NeighborhoodGraph {
    pub fn build(dataset: &DomainDataset, k: usize) -> Result<Self> {
        let x = dataset.features();
        let neighbors = knn_rows(x, k)?;
        let weights = neighbors
            .iter()
            .enumerate()
            .map(|(i, nbrs)| {
                let point = x.row(i).transpose();
                let pts: Vec<DVector<f64>> = nbrs.iter().map(|&j| x.row(j).transpose()).collect();
                solve_reconstruction(&point, &pts).map(|r| r.weights.iter().copied().collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(NeighborhoodGraph { k, neighbors, weights })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    /// `v_i − Σ_k ω_ik v_k` for every point.
    pub fn residuals(&self, values: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| {
            values[i]
                - self.neighbors[i]
                    .iter()
                    .zip(&self.weights[i])
                    .map(|(&j, w)| w * values[j])
                    .sum::<f64>()
        })
    }

    /// Row-wise reconstruction residuals of a feature matrix,
    /// `x_i − Σ_k ω_ik x_k`.
    pub fn residual_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for i in 0..self.len() {
            for (&j, &w) in self.neighbors[i].iter().zip(&self.weights[i]) {
                let row = x.row(j) * w;
                let mut target = out.row_mut(i);
                target -= row;
            }
        }
        out
    }

    /// Dense `n × n` matrix `I − W` with `W_ik = ω_ik`.
    pub fn laplacian_like(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::identity(n, n);
        for i in 0..n {
            for (&j, &w) in self.neighbors[i].iter().zip(&self.weights[i]) {
                m[(i, j)] -= w;
            }
        }
        m
    }
}

struct NodeEntry<'a> {
    neighbors: &'a [usize],
    weights: &'a [f64],
}

impl Serialize for NodeEntry<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("NodeEntry", 2)?;
        st.serialize_field("neighbors", self.neighbors)?;
        st.serialize_field("weights", self.weights)?;
        st.end()
    }
}

/// `{"0": {"neighbors": [...], "weights": [...]}, "1": ...}` in index order.
impl Serialize for NeighborhoodGraph {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.len()))?;
        for i in 0..self.len() {
            map.serialize_entry(
                &i.to_string(),
                &NodeEntry {
                    neighbors: &self.neighbors[i],
                    weights: &self.weights[i],
                },
            )?;
        }
        map.end()
    }
}
