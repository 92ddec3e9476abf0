use prodfuse::data::{CoupledCovariance, SynthBlock};
use prodfuse::model::CovRepr;
use prodfuse::verify::Outcome;
use prodfuse::{
    synth, verify_fact1, verify_fact3, CovarianceKind, FusionModel, JointMode, PriorMode, Rule,
    Scoring, SynthSpec,
};

fn single_class(dims: &[usize], cov: Vec<CovRepr>, mean: Vec<Vec<f64>>, n: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        class_labels: vec!["only".into()],
        blocks: dims
            .iter()
            .enumerate()
            .map(|(i, &dim)| SynthBlock { name: format!("b{i}"), dim })
            .collect(),
        means: vec![mean],
        covariances: vec![cov],
        cross_block_coupling: 0.0,
        class_weights: vec![1.0],
        n,
        seed,
    }
}

#[test]
fn uncoupled_blocks_have_vanishing_sample_cross_covariance() {
    let n = 10_000;
    let spec = single_class(
        &[2, 2],
        vec![CovRepr::Scalar(1.0), CovRepr::Scalar(1.0)],
        vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        n,
        2024,
    );
    let d = synth(&spec).unwrap();
    let mean: Vec<f64> = (0..4).map(|j| d.rows().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let bound = 5.0 / (n as f64).sqrt();
    for i in 0..2 {
        for j in 2..4 {
            let c = d.rows().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / n as f64;
            assert!(c.abs() < bound, "cov[{i}][{j}] = {c}");
        }
    }
}

#[test]
fn full_fit_recovers_known_gaussian() {
    let n = 10_000;
    let truth = vec![vec![2.0, 0.6, -0.3], vec![0.6, 1.0, 0.2], vec![-0.3, 0.2, 0.5]];
    let mu = vec![1.0, -2.0, 0.5];
    let spec = single_class(&[3], vec![CovRepr::Full(truth.clone())], vec![mu.clone()], n, 77);
    let d = synth(&spec).unwrap();
    let m = FusionModel::fit(&d, CovarianceKind::Full, PriorMode::Empirical, JointMode::None).unwrap();
    let c = &m.blocks()[0].classes()[0];
    let sqrt_n = (n as f64).sqrt();
    for (est, t) in c.mean().iter().zip(&mu) {
        assert!((est - t).abs() < 5.0 / sqrt_n);
    }
    for (i, row) in truth.iter().enumerate() {
        for (j, t) in row.iter().enumerate() {
            assert!((c.cov().get(i, j) - t).abs() < 10.0 / sqrt_n);
        }
    }
}

#[test]
fn synthesized_data_passes_fact3_after_fitting() {
    let spec = SynthSpec::random(3, &[4, 4], 2000, 0.0, 17).unwrap();
    let d = synth(&spec).unwrap();
    let m = FusionModel::fit(&d, CovarianceKind::Full, PriorMode::Uniform, JointMode::Factorized).unwrap();
    let rows: Vec<&[f64]> = d.rows().collect();
    let r3 = verify_fact3(&m, &rows, 1e-9).unwrap();
    assert_eq!(r3.outcome, Outcome::Holds);
    assert!(r3.max_abs_delta < 1e-9);
    let r1 = verify_fact1(&m, &rows).unwrap();
    assert_eq!(r1.outcome, Outcome::Holds);
    assert_eq!(r1.agreements, rows.len());
}

#[test]
fn fully_fitted_joint_on_coupled_data_is_a_hypothesis_violation() {
    let spec = SynthSpec::random(2, &[2, 2], 500, 0.6, 5).unwrap();
    let covs: Vec<CoupledCovariance> = spec.joint_covariances().unwrap();
    assert!(covs.iter().all(|c| c.coupling > 0.0));
    let d = synth(&spec).unwrap();
    let m = FusionModel::fit(&d, CovarianceKind::Full, PriorMode::Uniform, JointMode::Full).unwrap();
    let rows: Vec<&[f64]> = d.rows().collect();
    let r3 = verify_fact3(&m, &rows, 1e-9).unwrap();
    assert_eq!(r3.outcome, Outcome::HypothesisViolated);
    assert!(r3.max_abs_delta > 1e-9);
}

#[test]
fn json_round_trip_preserves_every_decision() {
    let spec = SynthSpec::random(4, &[3, 2, 1], 400, 0.0, 31).unwrap();
    let d = synth(&spec).unwrap();
    for kind in CovarianceKind::ALL {
        let m = FusionModel::fit(&d, *kind, PriorMode::Empirical, JointMode::Full).unwrap();
        let back = FusionModel::from_json_str(&m.to_json_string().unwrap()).unwrap();
        assert_eq!(back, m);
        let probe = synth(&SynthSpec { seed: 99, n: 300, ..spec.clone() }).unwrap();
        for row in probe.rows() {
            for rule in Rule::ALL {
                if *rule == Rule::SqDist && *kind != CovarianceKind::Isotropic {
                    continue;
                }
                assert_eq!(
                    m.decide(*rule, row, Scoring::Density).unwrap(),
                    back.decide(*rule, row, Scoring::Density).unwrap()
                );
            }
        }
    }
}
