//! Decision rules over `N` block classifiers sharing one class set.
//!
//! Every rule produces one score per class and picks the argmax; ties
//! within [`TIE_TOLERANCE`] go to the smallest class index. The product
//! rule works in the log domain: `log Π_b p_b = Σ_b log p_b`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{
    check_partition, keyword_enum, BlockClassifier, BlockDoc, CovarianceKind, FeatureBlockSpec,
    PriorMode, Scoring,
};

/// Absolute tolerance on log scores for declaring a tie.
pub const TIE_TOLERANCE: f64 = 1e-12;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Product,
    Sum,
    /// Weighted squared distance to the class centers (isotropic blocks).
    SqDist,
    /// MAP on the concatenated features.
    Map,
}

keyword_enum!(Rule {
    Product => "product",
    Sum => "sum",
    SqDist => "sqdist",
    Map => "map",
});

/// How the joint (concatenated-feature) classifier is built at fit time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointMode {
    None,
    /// Block-diagonal assembly of the per-block fits.
    Factorized,
    /// Independent full-covariance fit on the concatenated features.
    Full,
}

keyword_enum!(JointMode {
    None => "none",
    Factorized => "factorized",
    Full => "full",
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub rule: Rule,
    /// One score per class. For the sum rule this is the log of the
    /// linear-domain sum.
    pub log_scores: Vec<f64>,
    pub winner: usize,
    pub tie: bool,
    /// Sum rule only: some class's linear score underflowed to zero.
    #[serde(default)]
    pub underflow: bool,
}

/// Smallest index whose score is within [`TIE_TOLERANCE`] of the maximum,
/// and whether any other index is too.
pub fn argmax_smallest(scores: &[f64]) -> (usize, bool) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut near = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == max || max - s <= TIE_TOLERANCE)
        .map(|(k, _)| k);
    let winner = near.next().unwrap_or(0);
    (winner, near.next().is_some())
}

fn check_score_table(block_log_scores: &[Vec<f64>]) -> Result<usize> {
    let k = block_log_scores
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidModel("no blocks to combine".into()))?;
    if k == 0 {
        return Err(Error::InvalidModel("no classes to combine".into()));
    }
    if let Some(bad) = block_log_scores.iter().find(|s| s.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: bad.len(),
        });
    }
    Ok(k)
}

/// Product rule over a `blocks × classes` table of log confidences.
pub fn product_rule(block_log_scores: &[Vec<f64>]) -> Result<DecisionReport> {
    let k = check_score_table(block_log_scores)?;
    let log_scores: Vec<f64> = (0..k)
        .map(|c| block_log_scores.iter().map(|s| s[c]).sum())
        .collect();
    let (winner, tie) = argmax_smallest(&log_scores);
    Ok(DecisionReport {
        rule: Rule::Product,
        log_scores,
        winner,
        tie,
        underflow: false,
    })
}

/// Sum rule: `Σ_b exp(log score)` per class, compared in the linear domain.
/// No shift is applied before exponentiating, since the sum rule is not
/// shift-invariant; classes that underflow are flagged instead.
pub fn sum_rule(block_log_scores: &[Vec<f64>]) -> Result<DecisionReport> {
    let k = check_score_table(block_log_scores)?;
    let sums: Vec<f64> = (0..k)
        .map(|c| block_log_scores.iter().map(|s| s[c].exp()).sum())
        .collect();
    let underflow = sums.contains(&0.0);
    let log_scores: Vec<f64> = sums.iter().map(|s| s.ln()).collect();
    let (winner, tie) = argmax_smallest(&log_scores);
    Ok(DecisionReport {
        rule: Rule::Sum,
        log_scores,
        winner,
        tie,
        underflow,
    })
}

/// Block classifiers over a partition of the concatenated features, plus an
/// optional classifier over the whole concatenated vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    blocks: Vec<BlockClassifier>,
    joint: Option<BlockClassifier>,
}

impl FusionModel {
    pub fn new(blocks: Vec<BlockClassifier>, joint: Option<BlockClassifier>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::InvalidModel("at least one block is required".into()))?;
        for b in &blocks[1..] {
            if b.class_labels() != first.class_labels() {
                return Err(Error::InvalidModel(format!(
                    "block {:?} has different class labels from block {:?}",
                    b.block().name,
                    first.block().name
                )));
            }
        }
        let specs: Vec<FeatureBlockSpec> = blocks.iter().map(|b| b.block().clone()).collect();
        let dim: usize = specs.iter().map(|b| b.dim).sum();
        check_partition(&specs, dim)?;
        if let Some(j) = &joint {
            if j.class_labels() != first.class_labels() {
                return Err(Error::InvalidModel(
                    "joint classifier has different class labels".into(),
                ));
            }
            if j.dim() != dim || j.block().offset != 0 {
                return Err(Error::InvalidModel(format!(
                    "joint classifier covers {} columns from offset {}, expected {dim} from 0",
                    j.dim(),
                    j.block().offset
                )));
            }
        }
        Ok(FusionModel { blocks, joint })
    }

    /// Fits one classifier per block of `data`, and the joint one per `joint`.
    pub fn fit(
        data: &Dataset,
        kind: CovarianceKind,
        prior_mode: PriorMode,
        joint: JointMode,
    ) -> Result<Self> {
        let labels = data.class_labels();
        let blocks = data
            .blocks()
            .iter()
            .map(|spec| {
                let samples: Vec<(&[f64], usize)> = data
                    .rows()
                    .zip(data.labels())
                    .map(|(r, &l)| (spec.slice(r), l))
                    .collect();
                BlockClassifier::fit(spec.clone(), labels, &samples, kind, prior_mode)
            })
            .collect::<Result<Vec<_>>>()?;
        let joint = match joint {
            JointMode::None => None,
            JointMode::Factorized => Some(BlockClassifier::factorized_joint(&blocks)?),
            JointMode::Full => {
                let samples: Vec<(&[f64], usize)> =
                    data.rows().zip(data.labels().iter().copied()).collect();
                Some(BlockClassifier::fit(
                    FeatureBlockSpec::new("joint", 0, data.dim()),
                    labels,
                    &samples,
                    CovarianceKind::Full,
                    prior_mode,
                )?)
            }
        };
        Self::new(blocks, joint)
    }

    pub fn blocks(&self) -> &[BlockClassifier] {
        &self.blocks
    }

    pub fn joint(&self) -> Option<&BlockClassifier> {
        self.joint.as_ref()
    }

    pub fn with_joint(self, joint: Option<BlockClassifier>) -> Result<Self> {
        Self::new(self.blocks, joint)
    }

    pub fn class_labels(&self) -> &[String] {
        self.blocks[0].class_labels()
    }

    /// Number of classes.
    pub fn k(&self) -> usize {
        self.blocks[0].k()
    }

    /// Total concatenated dimension.
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(BlockClassifier::dim).sum()
    }

    pub fn block_specs(&self) -> Vec<FeatureBlockSpec> {
        self.blocks.iter().map(|b| b.block().clone()).collect()
    }

    pub fn is_isotropic(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.kind() == CovarianceKind::Isotropic)
    }

    /// Errors unless `data` has this model's block layout and class labels.
    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.dim() {
            return Err(Error::SchemaMismatch(format!(
                "data has {} features, model expects {}",
                data.dim(),
                self.dim()
            )));
        }
        let model_dims: Vec<usize> = self.blocks.iter().map(BlockClassifier::dim).collect();
        let data_dims: Vec<usize> = data.blocks().iter().map(|b| b.dim).collect();
        if model_dims != data_dims {
            return Err(Error::SchemaMismatch(format!(
                "data blocks {data_dims:?} differ from model blocks {model_dims:?}"
            )));
        }
        if data.class_labels() != self.class_labels() {
            return Err(Error::SchemaMismatch(format!(
                "data classes {:?} differ from model classes {:?}",
                data.class_labels(),
                self.class_labels()
            )));
        }
        Ok(())
    }

    fn check_sample(&self, sample: &[f64]) -> Result<()> {
        if sample.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: sample.len(),
            });
        }
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample".into()));
        }
        Ok(())
    }

    /// `blocks × classes` table of per-block log scores, in block order.
    pub fn block_log_scores(&self, sample: &[f64], scoring: Scoring) -> Result<Vec<Vec<f64>>> {
        self.check_sample(sample)?;
        self.blocks
            .iter()
            .map(|b| b.log_scores(scoring, b.block().slice(sample)))
            .collect()
    }

    pub fn decide_product(&self, sample: &[f64], scoring: Scoring) -> Result<DecisionReport> {
        product_rule(&self.block_log_scores(sample, scoring)?)
    }

    pub fn decide_sum(&self, sample: &[f64], scoring: Scoring) -> Result<DecisionReport> {
        sum_rule(&self.block_log_scores(sample, scoring)?)
    }

    /// `Σ_b ‖z_b − μ_{b,k}‖² / σ²_{b,k}` per class, computed directly from
    /// the isotropic variances.
    pub fn weighted_sqdist_objectives(&self, sample: &[f64]) -> Result<Vec<f64>> {
        self.check_sample(sample)?;
        if let Some(b) = self
            .blocks
            .iter()
            .find(|b| b.kind() != CovarianceKind::Isotropic)
        {
            return Err(Error::RequiresIsotropic(b.block().name.clone()));
        }
        Ok((0..self.k())
            .map(|k| {
                self.blocks
                    .iter()
                    .map(|b| {
                        let c = &b.classes()[k];
                        let z = b.block().slice(sample);
                        let sq: f64 = z.iter().zip(c.mean()).map(|(a, m)| (a - m) * (a - m)).sum();
                        sq / c.cov().get(0, 0)
                    })
                    .sum()
            })
            .collect())
    }

    /// Minimizes the weighted squared distance; scores are `-objective / 2`
    /// so the argmax convention carries over.
    pub fn decide_weighted_sqdist(&self, sample: &[f64]) -> Result<DecisionReport> {
        let log_scores: Vec<f64> = self
            .weighted_sqdist_objectives(sample)?
            .into_iter()
            .map(|o| -0.5 * o)
            .collect();
        let (winner, tie) = argmax_smallest(&log_scores);
        Ok(DecisionReport {
            rule: Rule::SqDist,
            log_scores,
            winner,
            tie,
            underflow: false,
        })
    }

    /// MAP on the concatenated sample: `log p(x | c_k) + log P(c_k)` from the
    /// joint classifier.
    pub fn decide_map_joint(&self, sample: &[f64]) -> Result<DecisionReport> {
        let joint = self.joint.as_ref().ok_or(Error::MissingJointModel)?;
        self.check_sample(sample)?;
        let log_scores = joint.log_scores(Scoring::Posterior, sample)?;
        let (winner, tie) = argmax_smallest(&log_scores);
        Ok(DecisionReport {
            rule: Rule::Map,
            log_scores,
            winner,
            tie,
            underflow: false,
        })
    }

    /// `scoring` is ignored by the rules that fix their own score.
    pub fn decide(&self, rule: Rule, sample: &[f64], scoring: Scoring) -> Result<DecisionReport> {
        match rule {
            Rule::Product => self.decide_product(sample, scoring),
            Rule::Sum => self.decide_sum(sample, scoring),
            Rule::SqDist => self.decide_weighted_sqdist(sample),
            Rule::Map => self.decide_map_joint(sample),
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        let doc = ModelDoc {
            format_version: MODEL_FORMAT_VERSION,
            class_labels: self.class_labels().to_vec(),
            blocks: self.blocks.iter().map(BlockClassifier::to_doc).collect(),
            joint: self.joint.as_ref().map(BlockClassifier::to_doc),
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(s)?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidModel(format!(
                "unsupported format_version {}",
                doc.format_version
            )));
        }
        let blocks = doc
            .blocks
            .into_iter()
            .map(|b| BlockClassifier::from_doc(b, &doc.class_labels))
            .collect::<Result<Vec<_>>>()?;
        let joint = doc
            .joint
            .map(|j| BlockClassifier::from_doc(j, &doc.class_labels))
            .transpose()?;
        Self::new(blocks, joint)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format_version: u32,
    class_labels: Vec<String>,
    blocks: Vec<BlockDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joint: Option<BlockDoc>,
}
