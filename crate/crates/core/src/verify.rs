//! Numerical checks of the three product-rule equivalences.
//!
//! 1. With a factorized joint density and equal priors, joint MAP picks the
//!    same class as the product of per-block densities.
//! 2. With isotropic blocks, the product of unnormalized confidences is
//!    minimizing `Σ_b ‖z_b − μ_{b,k}‖² / σ²_{b,k}`.
//! 3. With a block-diagonal joint covariance, the sum of per-block
//!    log-densities equals the joint log-density.
//!
//! Each report separates "hypothesis violated" (the check makes no claim)
//! from "falsified" (hypotheses hold but the equivalence failed).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionModel;
use crate::model::{BlockClassifier, Scoring, PRIOR_SUM_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Holds,
    HypothesisViolated,
    Falsified,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Holds => "holds",
            Outcome::HypothesisViolated => "hypothesis violated",
            Outcome::Falsified => "FALSIFIED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub sample_index: usize,
    pub left_winner: usize,
    pub right_winner: usize,
    pub left_scores: Vec<f64>,
    pub right_scores: Vec<f64>,
}

/// Joint MAP vs product of densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact1Report {
    pub samples: usize,
    pub agreements: usize,
    /// Largest spread over classes of `map_k − product_k` for one sample;
    /// zero when the two score vectors differ by a class-independent constant.
    pub max_offset_spread: f64,
    pub violations: Vec<String>,
    pub disagreements: Vec<Disagreement>,
    pub outcome: Outcome,
}

/// Weighted squared distance vs product of unnormalized confidences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact2Report {
    pub samples: usize,
    pub agreements: usize,
    /// Largest relative gap between `objective_k` and `−2·log_score_k`.
    pub max_rel_error: f64,
    pub violations: Vec<String>,
    pub disagreements: Vec<Disagreement>,
    pub outcome: Outcome,
}

/// Sum of block log-densities vs joint log-density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact3Report {
    pub samples: usize,
    pub classes: usize,
    pub max_abs_delta: f64,
    /// Largest `|log|Σ_joint| − Σ_b log|Σ_b||` over classes.
    pub max_log_det_delta: f64,
    pub violations: Vec<String>,
    pub outcome: Outcome,
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Ways in which `joint` is not the block-diagonal assembly of the model's
/// blocks: means, diagonal covariance blocks, exact-zero cross blocks.
pub fn factorization_violations(model: &FusionModel, joint: &BlockClassifier) -> Vec<String> {
    const TOL: f64 = 1e-12;
    let mut out = Vec::new();
    let dim = joint.dim();
    for (k, jc) in joint.classes().iter().enumerate() {
        let label = &joint.class_labels()[k];
        for b in model.blocks() {
            let spec = b.block();
            let bc = &b.classes()[k];
            if !spec
                .slice(jc.mean())
                .iter()
                .zip(bc.mean())
                .all(|(a, m)| close(*a, *m, TOL))
            {
                out.push(format!("class {label:?}: joint mean differs from block {:?} mean", spec.name));
            }
            let mut cov_ok = true;
            let mut cross_ok = true;
            for i in spec.offset..spec.end() {
                for j in 0..dim {
                    let v = jc.cov().get(i, j);
                    if (spec.offset..spec.end()).contains(&j) {
                        cov_ok &= close(v, bc.cov().get(i - spec.offset, j - spec.offset), TOL);
                    } else {
                        cross_ok &= v == 0.0;
                    }
                }
            }
            if !cov_ok {
                out.push(format!(
                    "class {label:?}: joint covariance block differs from block {:?} covariance",
                    spec.name
                ));
            }
            if !cross_ok {
                out.push(format!(
                    "class {label:?}: block {:?} is correlated with other blocks in the joint covariance",
                    spec.name
                ));
            }
        }
    }
    out
}

pub fn verify_fact1(model: &FusionModel, samples: &[&[f64]]) -> Result<Fact1Report> {
    let joint = model.joint().ok_or(Error::MissingJointModel)?;
    let mut violations = factorization_violations(model, joint);
    let k = model.k() as f64;
    if joint
        .classes()
        .iter()
        .any(|c| (c.prior() - 1.0 / k).abs() > PRIOR_SUM_TOLERANCE)
    {
        violations.push("joint priors are not uniform".into());
    }

    let mut agreements = 0;
    let mut max_offset_spread: f64 = 0.0;
    let mut disagreements = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let map = model.decide_map_joint(s)?;
        let prod = model.decide_product(s, Scoring::Density)?;
        let offsets: Vec<f64> = map
            .log_scores
            .iter()
            .zip(&prod.log_scores)
            .map(|(a, b)| a - b)
            .collect();
        let hi = offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = offsets.iter().copied().fold(f64::INFINITY, f64::min);
        max_offset_spread = max_offset_spread.max(hi - lo);
        if map.winner == prod.winner {
            agreements += 1;
        } else {
            disagreements.push(Disagreement {
                sample_index: i,
                left_winner: map.winner,
                right_winner: prod.winner,
                left_scores: map.log_scores,
                right_scores: prod.log_scores,
            });
        }
    }
    let outcome = if !violations.is_empty() {
        Outcome::HypothesisViolated
    } else if disagreements.is_empty() {
        Outcome::Holds
    } else {
        Outcome::Falsified
    };
    Ok(Fact1Report {
        samples: samples.len(),
        agreements,
        max_offset_spread,
        violations,
        disagreements,
        outcome,
    })
}

/// `tolerance` bounds the relative gap between each objective and
/// `−2·log_score`.
pub fn verify_fact2(model: &FusionModel, samples: &[&[f64]], tolerance: f64) -> Result<Fact2Report> {
    let violations: Vec<String> = model
        .blocks()
        .iter()
        .filter(|b| b.kind() != crate::model::CovarianceKind::Isotropic)
        .map(|b| format!("block {:?} is {}, not isotropic", b.block().name, b.kind()))
        .collect();
    if !violations.is_empty() {
        return Ok(Fact2Report {
            samples: samples.len(),
            agreements: 0,
            max_rel_error: 0.0,
            violations,
            disagreements: Vec::new(),
            outcome: Outcome::HypothesisViolated,
        });
    }
    let mut agreements = 0;
    let mut max_rel_error: f64 = 0.0;
    let mut disagreements = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let prod = model.decide_product(s, Scoring::Unnormalized)?;
        let objectives = model.weighted_sqdist_objectives(s)?;
        let dist = model.decide_weighted_sqdist(s)?;
        for (o, l) in objectives.iter().zip(&prod.log_scores) {
            let scale = o.abs().max((2.0 * l).abs());
            if scale > 0.0 {
                max_rel_error = max_rel_error.max((o + 2.0 * l).abs() / scale);
            }
        }
        if dist.winner == prod.winner {
            agreements += 1;
        } else {
            disagreements.push(Disagreement {
                sample_index: i,
                left_winner: dist.winner,
                right_winner: prod.winner,
                left_scores: dist.log_scores,
                right_scores: prod.log_scores,
            });
        }
    }
    let outcome = if disagreements.is_empty() && max_rel_error <= tolerance {
        Outcome::Holds
    } else {
        Outcome::Falsified
    };
    Ok(Fact2Report {
        samples: samples.len(),
        agreements,
        max_rel_error,
        violations,
        disagreements,
        outcome,
    })
}

/// `tolerance` bounds both the log-density gap and the log-determinant gap.
pub fn verify_fact3(model: &FusionModel, samples: &[&[f64]], tolerance: f64) -> Result<Fact3Report> {
    let joint = model.joint().ok_or(Error::MissingJointModel)?;
    let mut violations = factorization_violations(model, joint);
    let first = &model.blocks()[0];
    if joint
        .classes()
        .iter()
        .zip(first.classes())
        .any(|(j, b)| j.prior() != b.prior())
    {
        violations.push("joint priors differ from block priors".into());
    }

    let mut max_log_det_delta: f64 = 0.0;
    for (k, jc) in joint.classes().iter().enumerate() {
        let parts: f64 = model.blocks().iter().map(|b| b.classes()[k].cov().log_det()).sum();
        max_log_det_delta = max_log_det_delta.max((jc.cov().log_det() - parts).abs());
    }

    let mut max_abs_delta: f64 = 0.0;
    for s in samples {
        let split = model.block_log_scores(s, Scoring::Density)?;
        for k in 0..model.k() {
            let sum: f64 = split.iter().map(|b| b[k]).sum();
            let whole = joint.log_density(k, s)?;
            max_abs_delta = max_abs_delta.max((sum - whole).abs());
        }
    }
    let outcome = if !violations.is_empty() {
        Outcome::HypothesisViolated
    } else if max_abs_delta <= tolerance && max_log_det_delta <= tolerance {
        Outcome::Holds
    } else {
        Outcome::Falsified
    };
    Ok(Fact3Report {
        samples: samples.len(),
        classes: model.k(),
        max_abs_delta,
        max_log_det_delta,
        violations,
        outcome,
    })
}
