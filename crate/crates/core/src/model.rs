//! Per-block, per-class Gaussian models.
//!
//! A [`BlockClassifier`] holds one Gaussian per class for a single feature
//! block and scores observations three ways: the unnormalized exponential
//! confidence `exp(-½·(z − μ)ᵀΣ⁻¹(z − μ))`, the normalized density, and the
//! density times the class prior.

use std::collections::HashSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, SpdMatrix};

/// Lower bound applied to every estimated variance.
pub const VARIANCE_FLOOR: f64 = 1e-9;

/// Tolerance on `Σ priors = 1`.
pub const PRIOR_SUM_TOLERANCE: f64 = 1e-12;

const MAX_RIDGE_ATTEMPTS: usize = 12;

/// A contiguous run of columns in the concatenated feature vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBlockSpec {
    pub name: String,
    pub offset: usize,
    pub dim: usize,
}

impl FeatureBlockSpec {
    pub fn new(name: impl Into<String>, offset: usize, dim: usize) -> Self {
        FeatureBlockSpec {
            name: name.into(),
            offset,
            dim,
        }
    }

    pub fn end(&self) -> usize {
        self.offset + self.dim
    }

    /// This block's columns of a full-width row.
    pub fn slice<'a>(&self, row: &'a [f64]) -> &'a [f64] {
        &row[self.offset..self.end()]
    }
}

/// Contiguous blocks named `b0`, `b1`, … with cumulative offsets.
pub fn blocks_from_dims(dims: &[usize]) -> Result<Vec<FeatureBlockSpec>> {
    if dims.is_empty() {
        return Err(Error::InvalidModel("at least one block is required".into()));
    }
    let mut offset = 0;
    let mut blocks = Vec::with_capacity(dims.len());
    for (i, &d) in dims.iter().enumerate() {
        if d == 0 {
            return Err(Error::InvalidModel(format!("block {i} has dimension 0")));
        }
        blocks.push(FeatureBlockSpec::new(format!("b{i}"), offset, d));
        offset += d;
    }
    Ok(blocks)
}

/// Checks that `blocks` are contiguous, non-empty, and cover `0..total`.
pub fn check_partition(blocks: &[FeatureBlockSpec], total: usize) -> Result<()> {
    if blocks.is_empty() {
        return Err(Error::InvalidModel("at least one block is required".into()));
    }
    let mut expected = 0;
    for b in blocks {
        if b.dim == 0 {
            return Err(Error::InvalidModel(format!("block {:?} has dimension 0", b.name)));
        }
        if b.offset != expected {
            return Err(Error::InvalidModel(format!(
                "block {:?} starts at column {} but the previous block ends at {}",
                b.name, b.offset, expected
            )));
        }
        expected = b.end();
    }
    if expected != total {
        return Err(Error::BlockDimMismatch {
            declared: expected,
            found: total,
        });
    }
    Ok(())
}

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl ::std::fmt::Display for $name {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl ::std::str::FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "unknown {} {:?} (expected one of: {})",
                        stringify!($name),
                        other,
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}
pub(crate) use keyword_enum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    /// `σ²·I`
    Isotropic,
    Diagonal,
    Full,
}

keyword_enum!(CovarianceKind {
    Isotropic => "isotropic",
    Diagonal => "diagonal",
    Full => "full",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    /// `n_k / N`
    Empirical,
    /// `1 / K`
    Uniform,
}

keyword_enum!(PriorMode {
    Empirical => "empirical",
    Uniform => "uniform",
});

/// Which per-block, per-class log score a decision rule combines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scoring {
    /// `-½·(z − μ)ᵀΣ⁻¹(z − μ)`
    Unnormalized,
    /// Gaussian log-density.
    #[default]
    Density,
    /// Log-density plus log prior.
    Posterior,
}

keyword_enum!(Scoring {
    Unnormalized => "unnormalized",
    Density => "density",
    Posterior => "posterior",
});

/// On-disk covariance: a scalar variance, a diagonal, or full rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovRepr {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl CovRepr {
    pub fn kind(&self) -> CovarianceKind {
        match self {
            CovRepr::Scalar(_) => CovarianceKind::Isotropic,
            CovRepr::Diagonal(_) => CovarianceKind::Diagonal,
            CovRepr::Full(_) => CovarianceKind::Full,
        }
    }

    pub fn to_spd(&self, dim: usize) -> Result<SpdMatrix> {
        let m = match self {
            CovRepr::Scalar(v) => SpdMatrix::scaled_identity(dim, *v)?,
            CovRepr::Diagonal(d) => SpdMatrix::from_diagonal(d)?,
            CovRepr::Full(rows) => SpdMatrix::from_rows(rows)?,
        };
        if m.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: m.dim(),
            });
        }
        Ok(m)
    }

    pub fn from_spd(kind: CovarianceKind, m: &SpdMatrix) -> Self {
        match kind {
            CovarianceKind::Isotropic => CovRepr::Scalar(m.get(0, 0)),
            CovarianceKind::Diagonal => CovRepr::Diagonal(m.diagonal()),
            CovarianceKind::Full => CovRepr::Full(m.to_rows()),
        }
    }
}

/// One class's Gaussian on one block.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGaussian {
    mean: Vec<f64>,
    cov: SpdMatrix,
    prior: f64,
}

impl ClassGaussian {
    pub fn new(mean: Vec<f64>, cov: SpdMatrix, prior: f64) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                found: mean.len(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("class mean".into()));
        }
        if !(prior > 0.0 && prior <= 1.0) {
            return Err(Error::InvalidModel(format!(
                "prior {prior} is outside (0, 1]"
            )));
        }
        Ok(ClassGaussian { mean, cov, prior })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }

    /// `-(d/2)·log(2π) − ½·log|Σ|`
    pub fn log_normalizer(&self) -> f64 {
        -0.5 * self.cov.dim() as f64 * (2.0 * PI).ln() - 0.5 * self.cov.log_det()
    }
}

/// The class-conditional Gaussians of one feature block.
///
/// Class order is canonical: every decision rule breaks ties toward the
/// lower index.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockClassifier {
    block: FeatureBlockSpec,
    kind: CovarianceKind,
    class_labels: Vec<String>,
    classes: Vec<ClassGaussian>,
}

impl BlockClassifier {
    pub fn new(
        block: FeatureBlockSpec,
        kind: CovarianceKind,
        class_labels: Vec<String>,
        classes: Vec<ClassGaussian>,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::InvalidModel("a classifier needs at least one class".into()));
        }
        if class_labels.len() != classes.len() {
            return Err(Error::InvalidModel(format!(
                "{} labels for {} classes",
                class_labels.len(),
                classes.len()
            )));
        }
        let distinct: HashSet<&String> = class_labels.iter().collect();
        if distinct.len() != class_labels.len() {
            return Err(Error::InvalidModel("class labels are not distinct".into()));
        }
        if block.dim == 0 {
            return Err(Error::InvalidModel(format!("block {:?} has dimension 0", block.name)));
        }
        for c in &classes {
            if c.cov.dim() != block.dim {
                return Err(Error::DimensionMismatch {
                    expected: block.dim,
                    found: c.cov.dim(),
                });
            }
            check_kind(kind, &c.cov, &block.name)?;
        }
        let prior_sum: f64 = classes.iter().map(|c| c.prior).sum();
        if (prior_sum - 1.0).abs() > PRIOR_SUM_TOLERANCE {
            return Err(Error::InvalidModel(format!(
                "block {:?}: priors sum to {prior_sum}, not 1",
                block.name
            )));
        }
        Ok(BlockClassifier {
            block,
            kind,
            class_labels,
            classes,
        })
    }

    /// Maximum-likelihood fit from `(z, class index)` pairs, where each `z`
    /// already holds only this block's columns.
    ///
    /// Covariances divide by `n_k`. Variances are floored at
    /// [`VARIANCE_FLOOR`]; a full covariance that still fails to factor gets
    /// a ridge `ε·I` with `ε = 1e-9·max(1, trace/d)`.
    pub fn fit(
        block: FeatureBlockSpec,
        class_labels: &[String],
        samples: &[(&[f64], usize)],
        kind: CovarianceKind,
        prior_mode: PriorMode,
    ) -> Result<Self> {
        let k_count = class_labels.len();
        let d = block.dim;
        let mut counts = vec![0usize; k_count];
        let mut sums = vec![vec![0.0; d]; k_count];
        for &(z, k) in samples {
            if z.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: z.len(),
                });
            }
            if k >= k_count {
                return Err(Error::IndexOutOfRange {
                    index: k,
                    len: k_count,
                });
            }
            counts[k] += 1;
            for (s, v) in sums[k].iter_mut().zip(z) {
                *s += v;
            }
        }
        if let Some(k) = counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(class_labels[k].clone()));
        }
        let means: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &n)| s.into_iter().map(|v| v / n as f64).collect())
            .collect();

        let mut scatter = vec![vec![0.0; d * d]; k_count];
        for &(z, k) in samples {
            let mu = &means[k];
            let s = &mut scatter[k];
            for i in 0..d {
                let di = z[i] - mu[i];
                for j in 0..=i {
                    s[i * d + j] += di * (z[j] - mu[j]);
                }
            }
        }

        let total: usize = counts.iter().sum();
        let mut classes = Vec::with_capacity(k_count);
        for (k, (mean, mut s)) in means.into_iter().zip(scatter).enumerate() {
            let n = counts[k] as f64;
            s.iter_mut().for_each(|v| *v /= n);
            let cov = estimate_cov(kind, d, s)?;
            let prior = match prior_mode {
                PriorMode::Empirical => counts[k] as f64 / total as f64,
                PriorMode::Uniform => 1.0 / k_count as f64,
            };
            classes.push(ClassGaussian::new(mean, cov, prior)?);
        }
        Self::new(block, kind, class_labels.to_vec(), classes)
    }

    /// Concatenated-space classifier whose covariance is the block-diagonal
    /// assembly of the given blocks' covariances, means concatenated, priors
    /// taken from the first block.
    pub fn factorized_joint(blocks: &[BlockClassifier]) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::InvalidModel("at least one block is required".into()))?;
        let dim: usize = blocks.iter().map(|b| b.block.dim).sum();
        let kind = if blocks.iter().all(|b| b.kind != CovarianceKind::Full) {
            CovarianceKind::Diagonal
        } else {
            CovarianceKind::Full
        };
        let mut classes = Vec::with_capacity(first.k());
        for k in 0..first.k() {
            let mean: Vec<f64> = blocks
                .iter()
                .flat_map(|b| b.classes[k].mean.iter().copied())
                .collect();
            let covs: Vec<SpdMatrix> = blocks.iter().map(|b| b.classes[k].cov.clone()).collect();
            classes.push(ClassGaussian::new(
                mean,
                block_diag(&covs)?,
                first.classes[k].prior,
            )?);
        }
        Self::new(
            FeatureBlockSpec::new("joint", 0, dim),
            kind,
            first.class_labels.clone(),
            classes,
        )
    }

    pub fn block(&self) -> &FeatureBlockSpec {
        &self.block
    }

    pub fn kind(&self) -> CovarianceKind {
        self.kind
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn classes(&self) -> &[ClassGaussian] {
        &self.classes
    }

    pub fn class(&self, k: usize) -> Result<&ClassGaussian> {
        self.classes.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            len: self.classes.len(),
        })
    }

    /// Number of classes.
    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.block.dim
    }

    /// `-½·(z − μ_k)ᵀΣ_k⁻¹(z − μ_k)`; its exponential lies in `(0, 1]`.
    pub fn log_confidence_unnormalized(&self, k: usize, z: &[f64]) -> Result<f64> {
        let c = self.class(k)?;
        Ok(-0.5 * c.cov.mahalanobis_sq(z, &c.mean)?)
    }

    pub fn log_density(&self, k: usize, z: &[f64]) -> Result<f64> {
        let c = self.class(k)?;
        Ok(c.log_normalizer() + self.log_confidence_unnormalized(k, z)?)
    }

    /// `log p(z | c_k) + log P(c_k)`
    pub fn log_posterior_numerator(&self, k: usize, z: &[f64]) -> Result<f64> {
        let c = self.class(k)?;
        Ok(self.log_density(k, z)? + c.prior.ln())
    }

    pub fn log_score(&self, scoring: Scoring, k: usize, z: &[f64]) -> Result<f64> {
        match scoring {
            Scoring::Unnormalized => self.log_confidence_unnormalized(k, z),
            Scoring::Density => self.log_density(k, z),
            Scoring::Posterior => self.log_posterior_numerator(k, z),
        }
    }

    /// All `K` scores for `z`, in class order.
    pub fn log_scores(&self, scoring: Scoring, z: &[f64]) -> Result<Vec<f64>> {
        (0..self.k()).map(|k| self.log_score(scoring, k, z)).collect()
    }

    pub(crate) fn to_doc(&self) -> BlockDoc {
        BlockDoc {
            name: self.block.name.clone(),
            offset: self.block.offset,
            dim: self.block.dim,
            kind: self.kind,
            classes: self
                .classes
                .iter()
                .map(|c| ClassDoc {
                    mean: c.mean.clone(),
                    cov: CovRepr::from_spd(self.kind, &c.cov),
                    prior: c.prior,
                })
                .collect(),
        }
    }

    pub(crate) fn from_doc(doc: BlockDoc, class_labels: &[String]) -> Result<Self> {
        let block = FeatureBlockSpec::new(doc.name, doc.offset, doc.dim);
        let classes = doc
            .classes
            .into_iter()
            .map(|c| {
                if c.cov.kind() != doc.kind {
                    return Err(Error::InvalidModel(format!(
                        "block {:?} is {} but a class covariance is stored as {}",
                        block.name,
                        doc.kind,
                        c.cov.kind()
                    )));
                }
                ClassGaussian::new(c.mean, c.cov.to_spd(block.dim)?, c.prior)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(block, doc.kind, class_labels.to_vec(), classes)
    }
}

fn check_kind(kind: CovarianceKind, cov: &SpdMatrix, block: &str) -> Result<()> {
    let d = cov.dim();
    let off_diagonal_zero = (0..d).all(|i| (0..d).all(|j| i == j || cov.get(i, j) == 0.0));
    let ok = match kind {
        CovarianceKind::Full => true,
        CovarianceKind::Diagonal => off_diagonal_zero,
        CovarianceKind::Isotropic => {
            off_diagonal_zero && (0..d).all(|i| cov.get(i, i) == cov.get(0, 0))
        }
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!(
            "block {block:?}: covariance does not have {kind} structure"
        )))
    }
}

// `s` holds the MLE scatter in its lower triangle.
fn estimate_cov(kind: CovarianceKind, d: usize, s: Vec<f64>) -> Result<SpdMatrix> {
    let diag: Vec<f64> = (0..d).map(|i| s[i * d + i]).collect();
    match kind {
        CovarianceKind::Isotropic => {
            let v = diag.iter().sum::<f64>() / d as f64;
            SpdMatrix::scaled_identity(d, v.max(VARIANCE_FLOOR))
        }
        CovarianceKind::Diagonal => {
            let floored: Vec<f64> = diag.iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
            SpdMatrix::from_diagonal(&floored)
        }
        CovarianceKind::Full => {
            let mut m = s;
            for i in 0..d {
                m[i * d + i] = m[i * d + i].max(VARIANCE_FLOOR);
            }
            match SpdMatrix::new(d, m.clone()) {
                Ok(spd) => Ok(spd),
                Err(Error::NotPositiveDefinite { .. }) => {
                    let trace: f64 = (0..d).map(|i| m[i * d + i]).sum();
                    let mut eps = 1e-9 * (trace / d as f64).max(1.0);
                    let mut last = None;
                    for _ in 0..MAX_RIDGE_ATTEMPTS {
                        let mut ridged = m.clone();
                        for i in 0..d {
                            ridged[i * d + i] += eps;
                        }
                        match SpdMatrix::new(d, ridged) {
                            Ok(spd) => return Ok(spd),
                            Err(e) => last = Some(e),
                        }
                        eps *= 10.0;
                    }
                    Err(last.expect("at least one ridge attempt"))
                }
                Err(e) => Err(e),
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ClassDoc {
    pub mean: Vec<f64>,
    pub cov: CovRepr,
    pub prior: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct BlockDoc {
    pub name: String,
    pub offset: usize,
    pub dim: usize,
    pub kind: CovarianceKind,
    pub classes: Vec<ClassDoc>,
}
