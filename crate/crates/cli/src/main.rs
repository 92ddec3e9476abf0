use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prodfuse::verify::{Fact1Report, Fact2Report, Fact3Report};
use prodfuse::{
    bench, evaluate, load_csv, save_csv, synth, verify_fact1, verify_fact2, verify_fact3,
    CovarianceKind, FusionModel, JointMode, Outcome, PriorMode, Rule, Scoring, SynthSpec,
};
use serde::Serialize;

/// Product-rule fusion of per-feature-block Gaussian classifiers.
#[derive(Debug, Parser)]
#[command(name = "prodfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic dataset from a JSON synthesis spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit per-block Gaussian classifiers and write the model as JSON.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Block dimensions, comma separated; must sum to the feature count.
        #[arg(long, value_delimiter = ',', required = true)]
        blocks: Vec<usize>,
        #[arg(long, default_value = "full")]
        cov: CovarianceKind,
        #[arg(long, default_value = "empirical")]
        priors: PriorMode,
        /// Classifier over the concatenated features.
        #[arg(long, default_value = "factorized")]
        joint: JointMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify every row and write one line of scores per sample.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "product")]
        rule: Rule,
        #[arg(long, default_value = "density")]
        scoring: Scoring,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy, confusion and pairwise agreement of several rules.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to every rule the model supports.
        #[arg(long, value_delimiter = ',')]
        rules: Option<Vec<Rule>>,
        #[arg(long, default_value = "density")]
        scoring: Scoring,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Check one of the product-rule equivalences on a model and samples.
    Verify {
        /// 1: joint MAP vs product; 2: weighted squared distance vs product;
        /// 3: concatenated density vs product of block densities.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        fact: u8,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Compare per-block and concatenated full-covariance models.
    Bench {
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Writes the machine-independent counts; timings only go to stdout.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_FALSIFIED: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

/// Error message ready for stderr.
struct Failure(String);

impl<E: Into<prodfuse::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.into().to_string())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn at<T, E: Into<prodfuse::Error>>(path: &Path, r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure(format!("{}: {}", path.display(), e.into())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(prodfuse::Error::from)?;
    text.push('\n');
    at(path, fs::write(path, text))
}

fn load_model(path: &Path) -> Result<FusionModel, Failure> {
    at(path, FusionModel::load(path))
}

fn load_for_model(model: &FusionModel, data: &Path) -> Result<prodfuse::Dataset, Failure> {
    let dims: Vec<usize> = model.blocks().iter().map(|b| b.dim()).collect();
    at(data, load_csv(data, Some(&dims)))
}

fn run(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::Synth { spec, out } => {
            let spec = at(&spec, SynthSpec::load(&spec))?;
            let data = synth(&spec)?;
            at(&out, save_csv(&data, &out))?;
            println!(
                "wrote {} rows ({} features in {} blocks, {} classes) to {}",
                data.len(),
                data.dim(),
                data.blocks().len(),
                data.class_labels().len(),
                out.display()
            );
        }
        Command::Fit {
            data,
            blocks,
            cov,
            priors,
            joint,
            out,
        } => {
            let data = at(&data, load_csv(&data, Some(&blocks)))?;
            let model = FusionModel::fit(&data, cov, priors, joint)?;
            at(&out, model.save(&out))?;
            println!(
                "fitted {} blocks x {} classes ({cov} covariance, {priors} priors, {joint} joint) on {} rows",
                model.blocks().len(),
                model.k(),
                data.len()
            );
            println!("{:<12} {:>7} {:>5}", "block", "offset", "dim");
            for b in model.blocks() {
                let spec = b.block();
                println!("{:<12} {:>7} {:>5}", spec.name, spec.offset, spec.dim);
            }
            println!("{:<12} {:>7}", "class", "prior");
            for (label, c) in model.class_labels().iter().zip(model.blocks()[0].classes()) {
                println!("{:<12} {:>7.4}", label, c.prior());
            }
            println!("model written to {}", out.display());
        }
        Command::Predict {
            model,
            data,
            rule,
            scoring,
            out,
        } => {
            let model = load_model(&model)?;
            let data = load_for_model(&model, &data)?;
            let sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(io::BufWriter::new(at(p, fs::File::create(p))?)),
                None => Box::new(io::stdout().lock()),
            };
            let mut w = csv::Writer::from_writer(sink);
            let mut header = vec!["sample_index".to_string(), "winner_label".into(), "tie".into()];
            header.extend(model.class_labels().iter().map(|l| format!("score_{l}")));
            w.write_record(&header)?;
            for (i, row) in data.rows().enumerate() {
                let r = model.decide(rule, row, scoring)?;
                let mut fields = vec![
                    i.to_string(),
                    model.class_labels()[r.winner].clone(),
                    r.tie.to_string(),
                ];
                fields.extend(r.log_scores.iter().map(f64::to_string));
                w.write_record(&fields)?;
            }
            w.flush()?;
        }
        Command::Evaluate {
            model,
            data,
            rules,
            scoring,
            json,
        } => {
            let model = load_model(&model)?;
            let data = load_for_model(&model, &data)?.relabel_to(model.class_labels())?;
            let rules = rules.unwrap_or_else(|| {
                Rule::ALL
                    .iter()
                    .copied()
                    .filter(|r| *r != Rule::SqDist || model.is_isotropic())
                    .collect()
            });
            let report = evaluate(&model, &data, &rules, scoring)?;
            print!("{report}");
            if let Some(p) = json {
                write_json(&p, &report)?;
            }
        }
        Command::Verify {
            fact,
            model,
            data,
            tolerance,
            json,
        } => {
            let model = load_model(&model)?;
            let data = load_for_model(&model, &data)?;
            let rows: Vec<&[f64]> = data.rows().collect();
            let outcome = match fact {
                1 => {
                    let r = verify_fact1(&model, &rows)?;
                    print_fact1(&r);
                    if let Some(p) = &json {
                        write_json(p, &r)?;
                    }
                    r.outcome
                }
                2 => {
                    let r = verify_fact2(&model, &rows, tolerance)?;
                    print_fact2(&r, tolerance);
                    if let Some(p) = &json {
                        write_json(p, &r)?;
                    }
                    r.outcome
                }
                _ => {
                    let r = verify_fact3(&model, &rows, tolerance)?;
                    print_fact3(&r, tolerance);
                    if let Some(p) = &json {
                        write_json(p, &r)?;
                    }
                    r.outcome
                }
            };
            if outcome == Outcome::Falsified {
                return Ok(ExitCode::from(EXIT_FALSIFIED));
            }
        }
        Command::Bench {
            dims,
            classes,
            n,
            seed,
            json,
        } => {
            let report = bench(&dims, classes, n, seed)?;
            print!("{report}");
            if let Some(p) = json {
                write_json(&p, &report.counts)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_violations(violations: &[String]) {
    for v in violations {
        println!("  hypothesis not met: {v}");
    }
}

fn print_fact1(r: &Fact1Report) {
    println!("fact 1 (joint MAP vs product of densities): {}", r.outcome);
    println!("  agreement: {}/{}", r.agreements, r.samples);
    println!("  max class-offset spread: {:e}", r.max_offset_spread);
    print_violations(&r.violations);
    for d in &r.disagreements {
        println!(
            "  sample {}: map -> {}, product -> {}",
            d.sample_index, d.left_winner, d.right_winner
        );
    }
}

fn print_fact2(r: &Fact2Report, tolerance: f64) {
    println!("fact 2 (weighted squared distance vs product): {}", r.outcome);
    if !r.violations.is_empty() {
        print_violations(&r.violations);
        return;
    }
    println!("  agreement: {}/{}", r.agreements, r.samples);
    println!("  max relative |objective + 2 log score|: {:e} (tolerance {tolerance:e})", r.max_rel_error);
    for d in &r.disagreements {
        println!(
            "  sample {}: sqdist -> {}, product -> {}",
            d.sample_index, d.left_winner, d.right_winner
        );
    }
}

fn print_fact3(r: &Fact3Report, tolerance: f64) {
    println!("fact 3 (concatenated density vs product of block densities): {}", r.outcome);
    println!("  samples x classes: {} x {}", r.samples, r.classes);
    println!("  max |delta log density|: {:e} (tolerance {tolerance:e})", r.max_abs_delta);
    println!("  max |delta log det|: {:e}", r.max_log_det_delta);
    print_violations(&r.violations);
}
