//! Accuracy, confusion, rule agreement, and the per-block vs concatenated
//! benchmark.

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{synth, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::fusion::{argmax_smallest, FusionModel, JointMode, Rule};
use crate::model::{BlockClassifier, CovarianceKind, FeatureBlockSpec, PriorMode, Scoring};

/// A sample whose best total log score is below this would underflow to
/// zero if the product were formed in the linear domain.
pub const UNDERFLOW_LOG_THRESHOLD: f64 = -700.0;

const TIMING_REPEATS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleEval {
    pub rule: Rule,
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub ties: usize,
    pub underflow_census: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub class_labels: Vec<String>,
    pub scoring: Scoring,
    pub rules: Vec<RuleEval>,
    /// `agreement[i][j]`: fraction of samples where rules `i` and `j` pick
    /// the same class.
    pub agreement: Vec<Vec<f64>>,
}

/// Scores every rule on every test sample. With no samples, accuracies are
/// 0 and agreements 1.
pub fn evaluate(
    model: &FusionModel,
    test: &Dataset,
    rules: &[Rule],
    scoring: Scoring,
) -> Result<EvalReport> {
    model.check_dataset(test)?;
    let k = model.k();
    let mut winners: Vec<Vec<usize>> = Vec::with_capacity(rules.len());
    let mut evals = Vec::with_capacity(rules.len());
    for &rule in rules {
        let mut confusion = vec![vec![0; k]; k];
        let mut ties = 0;
        let mut underflow_census = 0;
        let mut picks = Vec::with_capacity(test.len());
        for (row, &label) in test.rows().zip(test.labels()) {
            let r = model.decide(rule, row, scoring)?;
            confusion[label][r.winner] += 1;
            ties += usize::from(r.tie);
            let best = r.log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            underflow_census += usize::from(best < UNDERFLOW_LOG_THRESHOLD);
            picks.push(r.winner);
        }
        let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
        let accuracy = if test.is_empty() {
            0.0
        } else {
            correct as f64 / test.len() as f64
        };
        evals.push(RuleEval {
            rule,
            accuracy,
            confusion,
            ties,
            underflow_census,
        });
        winners.push(picks);
    }
    let agreement = winners
        .iter()
        .map(|a| {
            winners
                .iter()
                .map(|b| {
                    if a.is_empty() {
                        1.0
                    } else {
                        a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
                    }
                })
                .collect()
        })
        .collect();
    Ok(EvalReport {
        samples: test.len(),
        class_labels: model.class_labels().to_vec(),
        scoring,
        rules: evals,
        agreement,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples: {}  scoring: {}", self.samples, self.scoring)?;
        if self.rules.is_empty() {
            return writeln!(f, "(no rules)");
        }
        writeln!(f, "{:<8} {:>9} {:>6} {:>9}", "rule", "accuracy", "ties", "underflow")?;
        for r in &self.rules {
            writeln!(
                f,
                "{:<8} {:>9.4} {:>6} {:>9}",
                r.rule.as_str(),
                r.accuracy,
                r.ties,
                r.underflow_census
            )?;
        }
        let width = self.class_labels.iter().map(String::len).max().unwrap_or(0).max(6);
        for r in &self.rules {
            writeln!(f, "\nconfusion ({}; rows = true, columns = predicted)", r.rule)?;
            write!(f, "{:>width$}", "")?;
            for l in &self.class_labels {
                write!(f, " {l:>width$}")?;
            }
            writeln!(f)?;
            for (l, row) in self.class_labels.iter().zip(&r.confusion) {
                write!(f, "{l:>width$}")?;
                for c in row {
                    write!(f, " {c:>width$}")?;
                }
                writeln!(f)?;
            }
        }
        writeln!(f, "\nagreement")?;
        write!(f, "{:<8}", "")?;
        for r in &self.rules {
            write!(f, " {:>8}", r.rule.as_str())?;
        }
        writeln!(f)?;
        for (r, row) in self.rules.iter().zip(&self.agreement) {
            write!(f, "{:<8}", r.rule.as_str())?;
            for a in row {
                write!(f, " {a:>8.4}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Mean plus symmetric covariance entries for one `d`-dimensional Gaussian.
fn gaussian_params(d: usize) -> usize {
    d + d * (d + 1) / 2
}

/// Parameters of `K` full-covariance Gaussians per block plus `K` priors.
pub fn param_count_per_block(dims: &[usize], classes: usize) -> usize {
    dims.iter().map(|&d| classes * gaussian_params(d)).sum::<usize>() + classes
}

/// Same count for one Gaussian per class on the concatenated features.
pub fn param_count_joint(dims: &[usize], classes: usize) -> usize {
    classes * gaussian_params(dims.iter().sum()) + classes
}

pub fn cov_param_count_per_block(dims: &[usize], classes: usize) -> usize {
    dims.iter().map(|&d| classes * d * (d + 1) / 2).sum()
}

pub fn cov_param_count_joint(dims: &[usize], classes: usize) -> usize {
    let d: usize = dims.iter().sum();
    classes * d * (d + 1) / 2
}

/// The machine-independent part of a benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCounts {
    pub dims: Vec<usize>,
    pub classes: usize,
    pub n: usize,
    pub seed: u64,
    pub per_block_params: usize,
    pub joint_params: usize,
    pub per_block_cov_params: usize,
    pub joint_cov_params: usize,
    /// Block scores per sample that can be computed independently.
    pub parallel_width: usize,
    pub per_block_accuracy: f64,
    pub joint_accuracy: f64,
}

/// Best-of-five wall times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTimings {
    pub fit_per_block: f64,
    pub fit_joint: f64,
    pub predict_per_block: f64,
    pub predict_joint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub counts: BenchCounts,
    pub timings: BenchTimings,
}

fn best_of<T>(mut f: impl FnMut() -> Result<T>) -> Result<(T, Duration)> {
    let mut best = Duration::MAX;
    let mut out = None;
    for _ in 0..TIMING_REPEATS {
        let start = Instant::now();
        let v = f()?;
        best = best.min(start.elapsed());
        out = Some(v);
    }
    Ok((out.expect("at least one repetition"), best))
}

/// Fits per-block full-covariance models and one concatenated
/// full-covariance model on the same synthetic data, then times fitting
/// and prediction for both.
pub fn bench(dims: &[usize], classes: usize, n: usize, seed: u64) -> Result<BenchReport> {
    if dims.is_empty() {
        return Err(Error::InvalidSpec("bench needs at least one block".into()));
    }
    let spec = SynthSpec::random(classes, dims, n, 0.0, seed)?;
    let data = synth(&spec)?;

    let (per_block, fit_per_block) = best_of(|| {
        FusionModel::fit(&data, CovarianceKind::Full, PriorMode::Empirical, JointMode::None)
    })?;
    let joint_samples: Vec<(&[f64], usize)> =
        data.rows().zip(data.labels().iter().copied()).collect();
    let (joint, fit_joint) = best_of(|| {
        BlockClassifier::fit(
            FeatureBlockSpec::new("joint", 0, data.dim()),
            data.class_labels(),
            &joint_samples,
            CovarianceKind::Full,
            PriorMode::Empirical,
        )
    })?;

    let (block_picks, predict_per_block) = best_of(|| {
        data.rows()
            .map(|r| Ok(per_block.decide_product(r, Scoring::Posterior)?.winner))
            .collect::<Result<Vec<_>>>()
    })?;
    let (joint_picks, predict_joint) = best_of(|| {
        data.rows()
            .map(|r| Ok(argmax_smallest(&joint.log_scores(Scoring::Posterior, r)?).0))
            .collect::<Result<Vec<_>>>()
    })?;
    let accuracy = |picks: &[usize]| {
        if picks.is_empty() {
            0.0
        } else {
            picks.iter().zip(data.labels()).filter(|(a, b)| a == b).count() as f64 / picks.len() as f64
        }
    };

    Ok(BenchReport {
        counts: BenchCounts {
            dims: dims.to_vec(),
            classes,
            n,
            seed,
            per_block_params: param_count_per_block(dims, classes),
            joint_params: param_count_joint(dims, classes),
            per_block_cov_params: cov_param_count_per_block(dims, classes),
            joint_cov_params: cov_param_count_joint(dims, classes),
            parallel_width: dims.len(),
            per_block_accuracy: accuracy(&block_picks),
            joint_accuracy: accuracy(&joint_picks),
        },
        timings: BenchTimings {
            fit_per_block: fit_per_block.as_secs_f64(),
            fit_joint: fit_joint.as_secs_f64(),
            predict_per_block: predict_per_block.as_secs_f64(),
            predict_joint: predict_joint.as_secs_f64(),
        },
    })
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.counts;
        let t = &self.timings;
        writeln!(f, "dims {:?}  classes {}  n {}  seed {}", c.dims, c.classes, c.n, c.seed)?;
        writeln!(f, "{:<22} {:>12} {:>12}", "", "per-block", "concatenated")?;
        writeln!(f, "{:<22} {:>12} {:>12}", "parameters", c.per_block_params, c.joint_params)?;
        writeln!(f, "{:<22} {:>12} {:>12}", "covariance parameters", c.per_block_cov_params, c.joint_cov_params)?;
        writeln!(f, "{:<22} {:>12.4} {:>12.4}", "training accuracy", c.per_block_accuracy, c.joint_accuracy)?;
        writeln!(f, "{:<22} {:>12.6} {:>12.6}", "fit seconds", t.fit_per_block, t.fit_joint)?;
        writeln!(f, "{:<22} {:>12.6} {:>12.6}", "predict seconds", t.predict_per_block, t.predict_joint)?;
        writeln!(f, "parallel width: {}", c.parallel_width)
    }
}
