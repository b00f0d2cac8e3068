//! Domain datasets: in-memory representation, text formats and synthetic
//! shifted-domain generation.
//!
//! A [`DomainDataset`] stores an `n × m` feature matrix (one row per point)
//! together with `±1` labels for a contiguous prefix of rows. Source domains
//! are fully labeled; target domains usually carry labels only for the first
//! few rows.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token marking an unlabeled row in both text formats.
pub const UNLABELED: &str = "?";

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    features: DMatrix<f64>,
    labels: Vec<f64>,
}

impl DomainDataset {
    /// Builds a dataset whose first `labels.len()` rows are labeled.
    pub fn new(features: DMatrix<f64>, labels: Vec<f64>) -> Result<Self> {
        let ds = DomainDataset { features, labels };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds a dataset from rows with optional labels. Unlabeled rows are
    /// moved behind the labeled ones; relative order is otherwise kept.
    pub fn from_rows(rows: &[Vec<f64>], labels: &[Option<f64>]) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let m = rows.first().map_or(0, Vec::len);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Validation(format!(
                    "row {i} has dimension {} but row 0 has dimension {m}",
                    row.len()
                )));
            }
        }
        let order: Vec<usize> = (0..rows.len())
            .filter(|&i| labels[i].is_some())
            .chain((0..rows.len()).filter(|&i| labels[i].is_none()))
            .collect();
        let features = DMatrix::from_fn(rows.len(), m, |i, j| rows[order[i]][j]);
        let labels = order.iter().filter_map(|&i| labels[i]).collect();
        Self::new(features, labels)
    }

    fn validate(&self) -> Result<()> {
        let (n, m) = self.features.shape();
        if n == 0 {
            return Err(Error::Validation("dataset has no rows".into()));
        }
        if m == 0 {
            return Err(Error::Validation("feature dimension must be at least 1".into()));
        }
        if self.labels.len() > n {
            return Err(Error::Validation(format!(
                "{} labels for {n} rows",
                self.labels.len()
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::Validation(format!("label {bad} is not +1 or -1")));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.len()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.len() == self.len()
    }

    /// `n × m` feature matrix, one row per point.
    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    /// Labels of the leading `labeled_count` rows.
    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Option<f64> {
        self.labels.get(i).copied()
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    /// Copy of the dataset keeping labels only on the first `count` rows.
    pub fn with_labeled_prefix(&self, count: usize) -> Result<Self> {
        if count > self.labels.len() {
            return Err(Error::Validation(format!(
                "cannot keep {count} labels, only {} available",
                self.labels.len()
            )));
        }
        Ok(DomainDataset {
            features: self.features.clone(),
            labels: self.labels[..count].to_vec(),
        })
    }

    /// New dataset made of the given rows (in order); labels for the first
    /// `labeled` of them are taken from this dataset.
    pub fn select(&self, rows: &[usize], labeled: usize) -> Result<Self> {
        if labeled > rows.len() {
            return Err(Error::Validation("more labeled rows than selected rows".into()));
        }
        let mut labels = Vec::with_capacity(labeled);
        for &i in &rows[..labeled] {
            labels.push(self.label(i).ok_or_else(|| {
                Error::Validation(format!("row {i} is unlabeled but selected as labeled"))
            })?);
        }
        let features = DMatrix::from_fn(rows.len(), self.dim(), |i, j| self.features[(rows[i], j)]);
        Self::new(features, labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    /// `label,f1,f2,...`
    DenseCsv,
    /// `label idx:val idx:val ...` with 1-based indices.
    SparseSvmlight,
}

fn parse_label(token: &str, line: usize) -> Result<Option<f64>> {
    let token = token.trim();
    if token == UNLABELED {
        return Ok(None);
    }
    let value: f64 = token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid label token {token:?}"),
    })?;
    if value == 1.0 || value == -1.0 {
        Ok(Some(value))
    } else {
        Err(Error::Validation(format!(
            "line {line}: label {token} is not +1, -1 or {UNLABELED}"
        )))
    }
}

fn parse_value(token: &str, line: usize) -> Result<f64> {
    let value: f64 = token.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid number {token:?}"),
    })?;
    if !value.is_finite() {
        return Err(Error::Validation(format!("line {line}: non-finite value {token}")));
    }
    Ok(value)
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_dense_csv(text: &str) -> Result<DomainDataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut dim: Option<(usize, usize)> = None;
    for (line, content) in content_lines(text) {
        let mut fields = content.split(',');
        let label = parse_label(fields.next().unwrap_or(""), line)?;
        let row = fields
            .map(|f| parse_value(f, line))
            .collect::<Result<Vec<_>>>()?;
        if row.is_empty() {
            return Err(Error::Parse {
                line,
                message: "row has a label but no features".into(),
            });
        }
        match dim {
            None => dim = Some((row.len(), line)),
            Some((m, first)) if m != row.len() => {
                return Err(Error::Validation(format!(
                    "line {line} has {} features but line {first} has {m}",
                    row.len()
                )))
            }
            _ => {}
        }
        rows.push(row);
        labels.push(label);
    }
    DomainDataset::from_rows(&rows, &labels)
}

/// Parses svmlight-style text. With `dim = None` the dimension is the
/// largest index seen.
pub fn parse_svmlight(text: &str, dim: Option<usize>) -> Result<DomainDataset> {
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0;
    for (line, content) in content_lines(text) {
        let content = content.split('#').next().unwrap_or("");
        let mut tokens = content.split_whitespace();
        let label = parse_label(tokens.next().unwrap_or(""), line)?;
        let mut row = Vec::new();
        for token in tokens {
            let (idx, val) = token.split_once(':').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected idx:val, found {token:?}"),
            })?;
            if idx == "qid" {
                continue;
            }
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid feature index {idx:?}"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line,
                    message: "feature indices are 1-based".into(),
                });
            }
            if let Some(&(prev, _)) = row.last() {
                if idx <= prev {
                    return Err(Error::Parse {
                        line,
                        message: format!("feature index {idx} is not increasing"),
                    });
                }
            }
            if let Some(m) = dim {
                if idx > m {
                    return Err(Error::Validation(format!(
                        "line {line}: feature index {idx} exceeds declared dimension {m}"
                    )));
                }
            }
            max_index = max_index.max(idx);
            row.push((idx, parse_value(val, line)?));
        }
        entries.push(row);
        labels.push(label);
    }
    let m = dim.unwrap_or(max_index);
    let rows: Vec<Vec<f64>> = entries
        .into_iter()
        .map(|sparse| {
            let mut dense = vec![0.0; m];
            for (idx, val) in sparse {
                dense[idx - 1] = val;
            }
            dense
        })
        .collect();
    DomainDataset::from_rows(&rows, &labels)
}

fn label_token(ds: &DomainDataset, i: usize) -> String {
    match ds.label(i) {
        Some(y) if y > 0.0 => "1".to_string(),
        Some(_) => "-1".to_string(),
        None => UNLABELED.to_string(),
    }
}

/// Dense CSV text. Values use the shortest representation that parses back
/// to the identical `f64`.
pub fn to_dense_csv(ds: &DomainDataset) -> String {
    let mut out = String::new();
    for i in 0..ds.len() {
        out.push_str(&label_token(ds, i));
        for v in ds.features.row(i).iter() {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn to_svmlight(ds: &DomainDataset) -> String {
    let mut out = String::new();
    for i in 0..ds.len() {
        out.push_str(&label_token(ds, i));
        for (j, v) in ds.features.row(i).iter().enumerate() {
            if *v != 0.0 {
                write!(out, " {}:{v}", j + 1).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

/// Loads a dataset. `dim` is only consulted for the sparse format.
pub fn load_dataset(path: &Path, format: DataFormat, dim: Option<usize>) -> Result<DomainDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        DataFormat::DenseCsv => parse_dense_csv(&text),
        DataFormat::SparseSvmlight => parse_svmlight(&text, dim),
    }
}

pub fn save_dataset(ds: &DomainDataset, path: &Path, format: DataFormat) -> Result<()> {
    let text = match format {
        DataFormat::DenseCsv => to_dense_csv(ds),
        DataFormat::SparseSvmlight => to_svmlight(ds),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-feature standardization with statistics pooled over both domains.
/// Constant features are only centered.
pub fn standardize_jointly(
    source: &DomainDataset,
    target: &DomainDataset,
) -> Result<(DomainDataset, DomainDataset)> {
    if source.dim() != target.dim() {
        return Err(Error::Validation(format!(
            "source dimension {} differs from target dimension {}",
            source.dim(),
            target.dim()
        )));
    }
    let total = (source.len() + target.len()) as f64;
    let sum = source.features.row_sum() + target.features.row_sum();
    let mean: RowDVector<f64> = sum / total;
    let mut var = RowDVector::zeros(source.dim());
    for ds in [source, target] {
        for row in ds.features.row_iter() {
            let c = row - &mean;
            var += c.component_mul(&c);
        }
    }
    let scale = (var / total).map(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
    let apply = |ds: &DomainDataset| {
        let mut f = ds.features.clone();
        for mut row in f.row_iter_mut() {
            let centered = &row - &mean;
            row.copy_from(&centered.component_div(&scale));
        }
        DomainDataset::new(f, ds.labels.clone())
    };
    Ok((apply(source)?, apply(target)?))
}

/// Parameters of a two-domain Gaussian benchmark with a rigid shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticShiftSpec {
    pub dim: usize,
    /// Points per domain.
    pub n: usize,
    /// Distance between the two class means.
    pub separation: f64,
    /// Rotation of the target domain in the plane of the first two
    /// features, in radians.
    #[serde(default)]
    pub angle: f64,
    /// Target translation; empty means zero.
    #[serde(default)]
    pub translation: Vec<f64>,
    /// Probability of flipping each label.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Validation("synthetic dimension must be at least 2".into()));
        }
        if self.n < 4 {
            return Err(Error::Validation("synthetic domains need at least 4 samples".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Validation(format!("noise rate {} outside [0, 1]", self.noise)));
        }
        if !self.translation.is_empty() && self.translation.len() != self.dim {
            return Err(Error::Validation(format!(
                "translation has {} entries, expected {}",
                self.translation.len(),
                self.dim
            )));
        }
        if !self.separation.is_finite() || !self.angle.is_finite() {
            return Err(Error::Validation("separation and angle must be finite".into()));
        }
        Ok(())
    }

    /// Number of labeled target rows.
    pub fn target_labeled(&self) -> usize {
        self.n.div_ceil(10)
    }
}

/// A generated pair with the hidden target labels kept for evaluation.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub source: DomainDataset,
    pub target: DomainDataset,
    /// Labels of every target row, including the ones hidden from `target`.
    pub target_truth: Vec<f64>,
}

fn draw_domain(spec: &SyntheticShiftSpec, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<f64>) {
    let mut x = DMatrix::zeros(spec.n, spec.dim);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let class = if i % 2 == 0 { 1.0 } else { -1.0 };
        for j in 0..spec.dim {
            x[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
        x[(i, 0)] += class * spec.separation / 2.0;
        let flip = rng.random::<f64>() < spec.noise;
        labels.push(if flip { -class } else { class });
    }
    (x, labels)
}

pub fn generate_synthetic(spec: &SyntheticShiftSpec) -> Result<SyntheticPair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (xs, ys) = draw_domain(spec, &mut rng);
    let (mut xt, yt) = draw_domain(spec, &mut rng);
    let (sin, cos) = spec.angle.sin_cos();
    for mut row in xt.row_iter_mut() {
        let (a, b) = (row[0], row[1]);
        row[0] = cos * a - sin * b;
        row[1] = sin * a + cos * b;
        for (v, t) in row.iter_mut().zip(&spec.translation) {
            *v += t;
        }
    }
    let labeled = spec.target_labeled();
    Ok(SyntheticPair {
        source: DomainDataset::new(xs, ys)?,
        target: DomainDataset::new(xt, yt[..labeled].to_vec())?,
        target_truth: yt,
    })
}

/// Source (fully labeled) and target (first `⌈n/10⌉` rows labeled).
pub fn generate_synthetic_pair(spec: &SyntheticShiftSpec) -> Result<(DomainDataset, DomainDataset)> {
    let pair = generate_synthetic(spec)?;
    Ok((pair.source, pair.target))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_row_maps_fields() {
        let ds = parse_dense_csv("1, 0.5, 2.0\n").unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.labeled_count()), (1, 2, 1));
        assert_eq!(ds.features()[(0, 1)], 2.0);
    }

    #[test]
    fn sparse_line_expands() {
        let ds = parse_svmlight("-1 3:1.5\n", Some(4)).unwrap();
        assert_eq!(ds.point(0).as_slice(), &[0.0, 0.0, 1.5, 0.0]);
        assert_eq!(ds.labels(), &[-1.0]);
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let err = parse_dense_csv("1,1,2\n-1,1,2,3\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn bad_label_is_validation_error() {
        assert!(matches!(parse_dense_csv("2,1,1\n"), Err(Error::Validation(_))));
        assert!(matches!(parse_svmlight("0 1:1\n", None), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_row_reports_line() {
        match parse_dense_csv("1,1\n1,abc\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse_svmlight("1 1:2\n\n-1 2-3\n", None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sparse_index_checks() {
        assert!(matches!(parse_svmlight("1 0:1\n", None), Err(Error::Parse { .. })));
        assert!(matches!(parse_svmlight("1 5:1\n", Some(4)), Err(Error::Validation(_))));
        assert!(matches!(parse_svmlight("1 2:1 2:3\n", None), Err(Error::Parse { .. })));
    }

    #[test]
    fn unlabeled_rows_move_to_back() {
        let ds = parse_dense_csv("?,9\n1,1\n?,8\n-1,2\n").unwrap();
        assert_eq!(ds.labeled_count(), 2);
        assert_eq!(ds.labels(), &[1.0, -1.0]);
        let col: Vec<f64> = ds.features().column(0).iter().copied().collect();
        assert_eq!(col, vec![1.0, 2.0, 9.0, 8.0]);
    }

    #[test]
    fn comments_and_blank_lines_skipped() {
        let ds = parse_svmlight("# header\n\n1 1:1 # trailing\n? 2:2\n", None).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.labeled_count()), (2, 2, 1));
    }

    #[test]
    fn synthetic_zero_shift_matches_source_process() {
        let spec = SyntheticShiftSpec {
            dim: 3,
            n: 2000,
            separation: 4.0,
            angle: 0.0,
            translation: vec![],
            noise: 0.0,
            seed: 3,
        };
        let (s, t) = generate_synthetic_pair(&spec).unwrap();
        let ms = s.features().row_mean();
        let mt = t.features().row_mean();
        // Class-balanced draws: both means are near zero within sampling error.
        assert!((ms - mt).norm() < 0.15);
        assert_eq!(t.labeled_count(), 200);
        assert!(s.is_fully_labeled());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticShiftSpec {
            dim: 4,
            n: 50,
            separation: 2.0,
            angle: 0.3,
            translation: vec![1.0, 0.0, -1.0, 0.5],
            noise: 0.1,
            seed: 11,
        };
        let a = generate_synthetic_pair(&spec).unwrap();
        let b = generate_synthetic_pair(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_spec_validation() {
        let mut spec = SyntheticShiftSpec {
            dim: 1,
            n: 10,
            separation: 1.0,
            angle: 0.0,
            translation: vec![],
            noise: 0.0,
            seed: 0,
        };
        assert!(generate_synthetic(&spec).is_err());
        spec.dim = 2;
        spec.noise = 1.5;
        assert!(generate_synthetic(&spec).is_err());
        spec.noise = 0.0;
        spec.n = 3;
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn standardization_gives_unit_pooled_variance() {
        let s = parse_dense_csv("1,1,5\n-1,3,5\n").unwrap();
        let t = parse_dense_csv("?,5,5\n?,7,5\n").unwrap();
        let (s2, t2) = standardize_jointly(&s, &t).unwrap();
        let all: Vec<f64> = s2.features().column(0).iter().chain(t2.features().column(0).iter()).copied().collect();
        let mean = all.iter().sum::<f64>() / 4.0;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert!(s2.features().column(1).iter().all(|&v| v == 0.0));
    }
}
