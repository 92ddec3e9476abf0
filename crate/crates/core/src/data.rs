//! Datasets: synthetic Gaussian generation, CSV ingestion, stratified splits.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`. Standard normals are produced by the Box-Muller
//! transform in [`BoxMuller`], so a given seed reproduces the same dataset
//! on every run.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionModel;
use crate::linalg::{block_diag, SpdMatrix};
use crate::model::{
    blocks_from_dims, check_partition, BlockClassifier, ClassGaussian, CovRepr, CovarianceKind,
    FeatureBlockSpec, PriorMode,
};

const MAX_COUPLING_HALVINGS: usize = 60;

/// Labeled rows of a concatenated feature vector, partitioned into blocks.
///
/// Class indices always refer to `class_labels`, which are kept in sorted
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    class_labels: Vec<String>,
    blocks: Vec<FeatureBlockSpec>,
    provenance: String,
}

impl Dataset {
    /// `features` is row-major `n × dim`. Labels index into `class_labels`,
    /// which must be sorted and distinct.
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        class_labels: Vec<String>,
        blocks: Vec<FeatureBlockSpec>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        check_partition(&blocks, dim)?;
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                found: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        if class_labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::SchemaMismatch(
                "class labels must be sorted and distinct".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_labels.len()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: class_labels.len(),
            });
        }
        Ok(Dataset {
            features,
            dim,
            labels,
            class_labels,
            blocks,
            provenance: provenance.into(),
        })
    }

    /// Builds from raw label strings; the class set is their sorted distinct
    /// values.
    pub fn from_raw_labels(
        features: Vec<f64>,
        dim: usize,
        raw_labels: &[String],
        blocks: Vec<FeatureBlockSpec>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let class_labels: Vec<String> = raw_labels
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let labels = raw_labels
            .iter()
            .map(|l| class_labels.binary_search(l).expect("label present"))
            .collect();
        Self::new(features, dim, labels, class_labels, blocks, provenance)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Total feature dimension `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn blocks(&self) -> &[FeatureBlockSpec] {
        &self.blocks
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_labels.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Re-partitions the columns.
    pub fn with_blocks(mut self, blocks: Vec<FeatureBlockSpec>) -> Result<Self> {
        check_partition(&blocks, self.dim)?;
        self.blocks = blocks;
        Ok(self)
    }

    /// Re-expresses the labels as indices into `class_labels`, a superset of
    /// this dataset's classes in sorted order.
    pub fn relabel_to(&self, class_labels: &[String]) -> Result<Dataset> {
        let map = self
            .class_labels
            .iter()
            .map(|l| {
                class_labels.iter().position(|c| c == l).ok_or_else(|| {
                    Error::SchemaMismatch(format!("label {l:?} is not one of {class_labels:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(
            self.features.clone(),
            self.dim,
            self.labels.iter().map(|&l| map[l]).collect(),
            class_labels.to_vec(),
            self.blocks.clone(),
            self.provenance.clone(),
        )
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_labels: self.class_labels.clone(),
            blocks: self.blocks.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Standard normal draws via Box-Muller: `r = √(−2 ln u₁)`, `θ = 2πu₂`,
/// emitting `r·cos θ` and then `r·sin θ`.
#[derive(Debug, Default, Clone)]
pub struct BoxMuller {
    spare: Option<f64>,
}

impl BoxMuller {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sample<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        // u1 in (0, 1] keeps the log finite
        let u1 = 1.0 - rng.random::<f64>();
        let u2 = rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthBlock {
    pub name: String,
    pub dim: usize,
}

/// Generative model for synthetic data: per-class, per-block Gaussians with
/// optional cross-block coupling `ρ` in each class's joint covariance.
///
/// JSON form mirrors the fields; `means[k][b]` and `covariances[k][b]` are
/// indexed by class then block, in the order of `class_labels` and
/// `blocks`. A covariance is a scalar variance, a diagonal list, or full
/// rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub class_labels: Vec<String>,
    pub blocks: Vec<SynthBlock>,
    pub means: Vec<Vec<Vec<f64>>>,
    pub covariances: Vec<Vec<CovRepr>>,
    #[serde(default)]
    pub cross_block_coupling: f64,
    pub class_weights: Vec<f64>,
    pub n: usize,
    pub seed: u64,
}

/// A class's joint covariance after coupling, with the coupling actually
/// applied (halved from the requested value until positive definite).
#[derive(Debug, Clone)]
pub struct CoupledCovariance {
    pub cov: SpdMatrix,
    pub coupling: f64,
}

impl SynthSpec {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: SynthSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Random well-separated classes with full covariances and equal
    /// weights. Labels are `c00`, `c01`, … so their sorted order is the
    /// generation order.
    pub fn random(
        class_count: usize,
        dims: &[usize],
        n: usize,
        coupling: f64,
        seed: u64,
    ) -> Result<Self> {
        if class_count == 0 || dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidSpec(
                "need at least one class and one non-empty block".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut means = Vec::with_capacity(class_count);
        let mut covariances = Vec::with_capacity(class_count);
        for _ in 0..class_count {
            let mut class_means = Vec::with_capacity(dims.len());
            let mut class_covs = Vec::with_capacity(dims.len());
            for &d in dims {
                class_means.push((0..d).map(|_| rng.random_range(-3.0..3.0)).collect());
                let a: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let rows = (0..d)
                    .map(|i| {
                        (0..d)
                            .map(|j| {
                                let s: f64 = (0..d).map(|r| a[i * d + r] * a[j * d + r]).sum();
                                s / d as f64 + if i == j { 0.5 } else { 0.0 }
                            })
                            .collect()
                    })
                    .collect();
                class_covs.push(CovRepr::Full(rows));
            }
            means.push(class_means);
            covariances.push(class_covs);
        }
        let spec = SynthSpec {
            class_labels: (0..class_count).map(|k| format!("c{k:02}")).collect(),
            blocks: dims
                .iter()
                .enumerate()
                .map(|(i, &dim)| SynthBlock {
                    name: format!("b{i}"),
                    dim,
                })
                .collect(),
            means,
            covariances,
            cross_block_coupling: coupling,
            class_weights: vec![1.0 / class_count as f64; class_count],
            n,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.class_labels.len();
        if k == 0 {
            return Err(Error::InvalidSpec("no classes".into()));
        }
        if self.class_labels.iter().collect::<BTreeSet<_>>().len() != k {
            return Err(Error::InvalidSpec("class labels are not distinct".into()));
        }
        if self.blocks.is_empty() || self.blocks.iter().any(|b| b.dim == 0) {
            return Err(Error::InvalidSpec("blocks must be non-empty".into()));
        }
        if !(0.0..1.0).contains(&self.cross_block_coupling) {
            return Err(Error::InvalidSpec(format!(
                "cross_block_coupling {} is outside [0, 1)",
                self.cross_block_coupling
            )));
        }
        if self.class_weights.len() != k
            || self.means.len() != k
            || self.covariances.len() != k
        {
            return Err(Error::InvalidSpec(
                "class_weights, means and covariances need one entry per class".into(),
            ));
        }
        if self.class_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidSpec("class weights must be finite and >= 0".into()));
        }
        let total: f64 = self.class_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!("class weights sum to {total}, not 1")));
        }
        for (label, (ms, cs)) in self.class_labels.iter().zip(self.means.iter().zip(&self.covariances)) {
            if ms.len() != self.blocks.len() || cs.len() != self.blocks.len() {
                return Err(Error::InvalidSpec(format!(
                    "class {label:?} needs one mean and covariance per block"
                )));
            }
            for (b, (m, c)) in self.blocks.iter().zip(ms.iter().zip(cs)) {
                if m.len() != b.dim {
                    return Err(Error::InvalidSpec(format!(
                        "class {label:?}, block {:?}: mean has {} entries, expected {}",
                        b.name,
                        m.len(),
                        b.dim
                    )));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidSpec(format!("class {label:?}: non-finite mean")));
                }
                c.to_spd(b.dim)?;
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.dim).collect()
    }

    pub fn feature_blocks(&self) -> Vec<FeatureBlockSpec> {
        let mut offset = 0;
        self.blocks
            .iter()
            .map(|b| {
                let spec = FeatureBlockSpec::new(b.name.clone(), offset, b.dim);
                offset += b.dim;
                spec
            })
            .collect()
    }

    /// Per-class joint covariances in `class_labels` order, as used by
    /// [`synth`].
    pub fn joint_covariances(&self) -> Result<Vec<CoupledCovariance>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.coupled_covariances(&mut rng)
    }

    // Cross-block terms: ρ · √(v̄_a · v̄_b) · M_ab / ‖M_ab‖_F, with v̄ the mean
    // variance of a block and M_ab standard normal. ρ is halved until the
    // result factors.
    fn coupled_covariances(&self, rng: &mut ChaCha8Rng) -> Result<Vec<CoupledCovariance>> {
        let dims = self.dims();
        let offsets: Vec<usize> = self.feature_blocks().iter().map(|b| b.offset).collect();
        let total: usize = dims.iter().sum();
        let mut normal = BoxMuller::new();
        let mut out = Vec::with_capacity(self.class_labels.len());
        for (k, covs) in self.covariances.iter().enumerate() {
            let parts = covs
                .iter()
                .zip(&dims)
                .map(|(c, &d)| c.to_spd(d))
                .collect::<Result<Vec<_>>>()?;
            let base = block_diag(&parts)?;
            let rho = self.cross_block_coupling;
            if rho == 0.0 || parts.len() < 2 {
                out.push(CoupledCovariance { cov: base, coupling: 0.0 });
                continue;
            }
            let mut cross = vec![0.0; total * total];
            for a in 0..parts.len() {
                for b in (a + 1)..parts.len() {
                    let (da, db) = (dims[a], dims[b]);
                    let m: Vec<f64> = (0..da * db).map(|_| normal.sample(rng)).collect();
                    let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    let scale = (parts[a].trace() / da as f64 * parts[b].trace() / db as f64).sqrt();
                    for i in 0..da {
                        for j in 0..db {
                            // lower triangle only; SpdMatrix mirrors it
                            cross[(offsets[b] + j) * total + offsets[a] + i] = scale * m[i * db + j] / norm;
                        }
                    }
                }
            }
            let mut applied = rho;
            let mut coupled = None;
            for _ in 0..MAX_COUPLING_HALVINGS {
                let data: Vec<f64> = base
                    .as_slice()
                    .iter()
                    .zip(&cross)
                    .map(|(b, c)| b + applied * c)
                    .collect();
                if let Ok(m) = SpdMatrix::new(total, data) {
                    coupled = Some(m);
                    break;
                }
                applied *= 0.5;
            }
            let cov = coupled.ok_or_else(|| Error::CouplingNotPositiveDefinite {
                label: self.class_labels[k].clone(),
            })?;
            out.push(CoupledCovariance { cov, coupling: applied });
        }
        Ok(out)
    }

    /// The spec's own per-block Gaussians as a fusion model with a
    /// factorized joint. `Empirical` priors take the class weights;
    /// classes are in sorted label order.
    pub fn true_model(&self, prior_mode: PriorMode) -> Result<FusionModel> {
        self.validate()?;
        let order = sorted_order(&self.class_labels);
        let labels: Vec<String> = order.iter().map(|&k| self.class_labels[k].clone()).collect();
        let k_count = labels.len();
        let blocks = self
            .feature_blocks()
            .into_iter()
            .enumerate()
            .map(|(b, spec)| {
                let kinds: BTreeSet<_> = order
                    .iter()
                    .map(|&k| self.covariances[k][b].kind() as u8)
                    .collect();
                let kind = if kinds.len() == 1 {
                    self.covariances[order[0]][b].kind()
                } else {
                    CovarianceKind::Full
                };
                let classes = order
                    .iter()
                    .map(|&k| {
                        let prior = match prior_mode {
                            PriorMode::Empirical => self.class_weights[k],
                            PriorMode::Uniform => 1.0 / k_count as f64,
                        };
                        ClassGaussian::new(
                            self.means[k][b].clone(),
                            self.covariances[k][b].to_spd(spec.dim)?,
                            prior,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                BlockClassifier::new(spec, kind, labels.clone(), classes)
            })
            .collect::<Result<Vec<_>>>()?;
        let joint = BlockClassifier::factorized_joint(&blocks)?;
        FusionModel::new(blocks, Some(joint))
    }
}

fn sorted_order(labels: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[a].cmp(&labels[b]));
    order
}

/// Draws `spec.n` labeled samples. Classes are drawn from `class_weights`;
/// features are `μ_k + L_k·z` with `L_k` the Cholesky factor of the class's
/// joint covariance and `z` standard normal.
pub fn synth(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let covs = spec.coupled_covariances(&mut rng)?;
    let means: Vec<Vec<f64>> = spec.means.iter().map(|m| m.concat()).collect();
    let dim: usize = spec.dims().iter().sum();

    let order = sorted_order(&spec.class_labels);
    let mut canonical = vec![0; order.len()];
    for (pos, &k) in order.iter().enumerate() {
        canonical[k] = pos;
    }
    let last_positive = spec
        .class_weights
        .iter()
        .rposition(|&w| w > 0.0)
        .expect("weights sum to 1");

    let mut normal = BoxMuller::new();
    let mut features = Vec::with_capacity(spec.n * dim);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let u = rng.random::<f64>();
        let mut acc = 0.0;
        let mut k = last_positive;
        for (i, &w) in spec.class_weights.iter().enumerate() {
            acc += w;
            if u < acc && w > 0.0 {
                k = i;
                break;
            }
        }
        let z: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        let x = covs[k].cov.mul_lower(&z)?;
        features.extend(x.iter().zip(&means[k]).map(|(x, m)| x + m));
        labels.push(canonical[k]);
    }
    Dataset::new(
        features,
        dim,
        labels,
        order.iter().map(|&k| spec.class_labels[k].clone()).collect(),
        spec.feature_blocks(),
        format!(
            "synth(seed={}, n={}, coupling={})",
            spec.seed, spec.n, spec.cross_block_coupling
        ),
    )
}

/// Parses CSV with a header row, feature columns, and a final `label`
/// column. With `dims` the columns are split into blocks of those sizes;
/// without, all features form one block. Error rows are 1-based file
/// lines (the header is line 1).
pub fn read_csv<R: Read>(reader: R, dims: Option<&[usize]>, provenance: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().next_back().map(str::trim) != Some("label") {
        return Err(Error::MissingLabelColumn);
    }
    let d = headers.len() - 1;
    if d == 0 {
        return Err(Error::Parse {
            row: 1,
            column: String::new(),
            message: "no feature columns".into(),
        });
    }
    let blocks = match dims {
        Some(dims) => {
            let declared: usize = dims.iter().sum();
            if declared != d {
                return Err(Error::BlockDimMismatch { declared, found: d });
            }
            blocks_from_dims(dims)?
        }
        None => blocks_from_dims(&[d])?,
    };

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row: line,
                column: String::new(),
                message: format!("{} fields, expected {}", record.len(), headers.len()),
            });
        }
        for (j, field) in record.iter().take(d).enumerate() {
            let bad = |message: String| Error::Parse {
                row: line,
                column: headers[j].to_string(),
                message,
            };
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("{field:?} is not a decimal number")))?;
            if !v.is_finite() {
                return Err(bad(format!("{field:?} is not finite")));
            }
            features.push(v);
        }
        raw_labels.push(record[d].trim().to_string());
    }
    Dataset::from_raw_labels(features, d, &raw_labels, blocks, provenance)
}

pub fn load_csv(path: impl AsRef<Path>, dims: Option<&[usize]>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_csv(file, dims, &path.display().to_string())
}

/// Writes `f0,…,f{D-1},label`. Floats use the shortest representation that
/// parses back to the same bits.
pub fn write_csv<W: Write>(d: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..d.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (row, &label) in d.rows().zip(d.labels()) {
        let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        fields.push(d.class_labels()[label].clone());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(d, std::io::BufWriter::new(file))
}

/// Stratified split: each class contributes `round(n_k · test_fraction)`
/// rows to the test part, clamped so both parts keep at least one row of
/// every class. Rows keep their original relative order.
pub fn split(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "test fraction {test_fraction} is outside (0, 1)"
        )));
    }
    let counts = d.class_counts();
    if let Some(k) = counts.iter().position(|&c| c < 2) {
        return Err(Error::ClassTooSmall {
            label: d.class_labels()[k].clone(),
            count: counts[k],
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for k in 0..counts.len() {
        let mut idx: Vec<usize> = (0..d.len()).filter(|&i| d.labels()[i] == k).collect();
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64 * test_fraction).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((d.subset(&train), d.subset(&test)))
}
