//! Repeated sample-fit-evaluate runs for the mixture and function experiments.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{friedman_target, mc_relative_error, rejection_sample, spline_target, TargetDensity};
use crate::mixture::{format_decimal, neg_log_likelihood, sample, write_model_json, Family, IndexSet, SparseMixture};
use crate::rng::{derive_seed, streams};
use crate::selection::{select_and_fit, Coupling, FitReport, SelectionConfig};

use super::truth::{build_ground_truth, truth_couplings, Setting};

/// Settings shared by all experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub selection: SelectionConfig,
    /// Uniform draws used by each relative-error estimate.
    pub n_mc: usize,
    /// Uniform draws used for the Monte-Carlo normalization of Friedman-1.
    pub n_normalize: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            selection: SelectionConfig::default(),
            n_mc: 100_000,
            n_normalize: 1_000_000,
        }
    }
}

/// Seed of repeat `r` under the top-level seed.
pub fn repeat_seed(seed: u64, r: usize) -> u64 {
    derive_seed(derive_seed(seed, streams::REPEAT), r as u64)
}

/// Test functions approximated by a sparse mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFunction {
    /// Sum of three B-spline products on `[0,1]^9`.
    F1,
    /// Friedman-1 on `[0,1]^10`.
    F2,
}

impl TestFunction {
    /// Number of expansion rounds used for this function.
    pub fn rounds(self) -> usize {
        match self {
            TestFunction::F1 => 3,
            TestFunction::F2 => 2,
        }
    }

    /// Coordinate blocks of the additive structure; every significant coupling
    /// should lie inside one block.
    pub fn blocks(self) -> Vec<IndexSet> {
        let sets: Vec<Vec<usize>> = match self {
            TestFunction::F1 => crate::eval::SPLINE_TERMS.iter().map(|t| t.to_vec()).collect(),
            TestFunction::F2 => vec![vec![0, 1], vec![2], vec![3], vec![4]],
        };
        sets.into_iter().map(|s| IndexSet::new(s).expect("distinct indices")).collect()
    }

    pub fn target(self, cfg: &ExperimentConfig) -> Result<TargetDensity> {
        match self {
            TestFunction::F1 => Ok(spline_target()),
            TestFunction::F2 => friedman_target(cfg.n_normalize, 0),
        }
    }
}

impl std::str::FromStr for TestFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" | "spline" | "spline_f1" => Ok(TestFunction::F1),
            "f2" | "friedman" | "friedman1" => Ok(TestFunction::F2),
            other => Err(Error::InvalidInput(format!("unknown test function '{other}'"))),
        }
    }
}

impl std::fmt::Display for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TestFunction::F1 => "f1",
            TestFunction::F2 => "f2",
        })
    }
}

/// Measurements of one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatOutcome {
    pub repeat: usize,
    pub seed: u64,
    /// `Σ w_i ln f(x_i)` under the ground truth.
    pub log_lik_truth: f64,
    /// `Σ w_i ln p̂(x_i)` under the fitted model.
    pub log_lik_fit: f64,
    pub e_l1: f64,
    pub e_l2: f64,
    pub couplings: Vec<Coupling>,
    pub seconds: f64,
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// All repeats of one experiment for one family, plus the first repeat's model.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub name: String,
    pub family: Family,
    pub n_samples: usize,
    pub repeats: Vec<RepeatOutcome>,
    pub model: SparseMixture,
    pub report: FitReport,
}

impl ExperimentOutcome {
    fn column(&self, f: impl Fn(&RepeatOutcome) -> f64) -> MeanStd {
        MeanStd::of(&self.repeats.iter().map(f).collect::<Vec<_>>())
    }

    pub fn log_lik_truth(&self) -> MeanStd {
        self.column(|r| r.log_lik_truth)
    }

    pub fn log_lik_fit(&self) -> MeanStd {
        self.column(|r| r.log_lik_fit)
    }

    pub fn e_l1(&self) -> MeanStd {
        self.column(|r| r.e_l1)
    }

    pub fn e_l2(&self) -> MeanStd {
        self.column(|r| r.e_l2)
    }

    /// CSV with the rows `mean` and `std` and one column per table entry.
    pub fn write_table_csv<W: Write>(&self, writer: W) -> Result<()> {
        let cols = [self.log_lik_truth(), self.log_lik_fit(), self.e_l1(), self.e_l2()];
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["statistic", "L_f", "L_p_hat", "e_L1", "e_L2"]).map_err(io)?;
        let row = |label: &str, pick: fn(&MeanStd) -> f64| {
            std::iter::once(label.to_string()).chain(cols.iter().map(|c| format_decimal(pick(c)))).collect::<Vec<_>>()
        };
        w.write_record(row("mean", |c| c.mean)).map_err(io)?;
        w.write_record(row("std", |c| c.std)).map_err(io)?;
        w.flush()?;
        Ok(())
    }

    /// CSV with one row per repeat.
    pub fn write_runs_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["repeat", "seed", "L_f", "L_p_hat", "e_L1", "e_L2", "seconds"]).map_err(io)?;
        for r in &self.repeats {
            w.write_record([
                r.repeat.to_string(),
                r.seed.to_string(),
                format_decimal(r.log_lik_truth),
                format_decimal(r.log_lik_fit),
                format_decimal(r.e_l1),
                format_decimal(r.e_l2),
                format!("{:.3}", r.seconds),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `repeat,coupling_label,aggregated_weight`.
    pub fn write_couplings_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["repeat", "coupling_label", "aggregated_weight"]).map_err(io)?;
        for r in &self.repeats {
            for c in &r.couplings {
                w.write_record([r.repeat.to_string(), c.u.to_string(), format_decimal(c.weight)]).map_err(io)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `table.csv`, `runs.csv`, `couplings.csv`, `trace.csv` and
    /// `model.json` into `dir`; the trace and model belong to the first repeat.
    pub fn write_results(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let open = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
        self.write_table_csv(open("table.csv")?)?;
        self.write_runs_csv(open("runs.csv")?)?;
        self.write_couplings_csv(open("couplings.csv")?)?;
        self.report.write_trace_csv(open("trace.csv")?)?;
        let mut m = open("model.json")?;
        write_model_json(&self.model, &mut m)?;
        m.flush()?;
        Ok(())
    }
}

/// `true` when the distinct couplings are exactly the ground-truth index sets.
pub fn recovers_truth(couplings: &[Coupling]) -> bool {
    let mut got: Vec<&IndexSet> = couplings.iter().map(|c| &c.u).collect();
    let truth = truth_couplings();
    let mut want: Vec<&IndexSet> = truth.iter().collect();
    got.sort_by(|a, b| a.as_slice().cmp(b.as_slice()));
    want.sort_by(|a, b| a.as_slice().cmp(b.as_slice()));
    got == want
}

fn run_repeats<F>(
    name: String,
    family: Family,
    n_samples: usize,
    n_repeats: usize,
    cfg: &SelectionConfig,
    seed: u64,
    mut one: F,
) -> Result<ExperimentOutcome>
where
    F: FnMut(u64, &SelectionConfig) -> Result<(RepeatOutcome, SparseMixture, FitReport)>,
{
    if n_repeats == 0 {
        return Err(Error::InvalidParameter("at least one repeat is required".into()));
    }
    let cfg = SelectionConfig { family, ..*cfg };
    let mut repeats = Vec::with_capacity(n_repeats);
    let mut first = None;
    for r in 0..n_repeats {
        let rs = repeat_seed(seed, r);
        let (mut out, model, report) = one(rs, &cfg)?;
        out.repeat = r;
        log::info!(
            "{name} {} repeat {r}: e_L1 {:.4}, e_L2 {:.4}, {} couplings, {:.1}s",
            family.name(),
            out.e_l1,
            out.e_l2,
            out.couplings.len(),
            out.seconds
        );
        repeats.push(out);
        if first.is_none() {
            first = Some((model, report));
        }
    }
    let (model, report) = first.expect("at least one repeat");
    Ok(ExperimentOutcome {
        name,
        family,
        n_samples,
        repeats,
        model,
        report,
    })
}

fn measure(
    rs: u64,
    target: &TargetDensity,
    batch: &crate::mixture::WeightedSampleBatch,
    log_lik_truth: f64,
    cfg: &SelectionConfig,
    n_mc: usize,
    start: std::time::Instant,
) -> Result<(RepeatOutcome, SparseMixture, FitReport)> {
    let (model, report) = select_and_fit(batch, cfg, derive_seed(rs, streams::SELECTION))?;
    let mc_seed = derive_seed(rs, streams::MC_ERROR);
    let e_l1 = mc_relative_error(target, &model, 1, n_mc, mc_seed)?;
    let e_l2 = mc_relative_error(target, &model, 2, n_mc, mc_seed)?;
    let out = RepeatOutcome {
        repeat: 0,
        seed: rs,
        log_lik_truth,
        log_lik_fit: -report.nll,
        e_l1,
        e_l2,
        couplings: report.couplings.clone(),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((out, model, report))
}

/// Samples from the ground truth of `setting`, fits with the selection
/// heuristic, and records log-likelihoods, relative errors and couplings.
pub fn run_mixture_experiment(
    setting: Setting,
    family: Family,
    n_samples: usize,
    n_repeats: usize,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<ExperimentOutcome> {
    let truth = build_ground_truth(setting);
    let target = TargetDensity::from_mixture(&truth)?;
    run_repeats(
        format!("mixture_{setting}"),
        family,
        n_samples,
        n_repeats,
        &cfg.selection,
        seed,
        |rs, sel| {
            let start = std::time::Instant::now();
            let batch = sample(&truth, n_samples, derive_seed(rs, streams::SAMPLE))?;
            let l_f = -neg_log_likelihood(&truth, &batch)?;
            measure(rs, &target, &batch, l_f, sel, cfg.n_mc, start)
        },
    )
}

/// Rejection-samples the normalized test function, fits with
/// [`TestFunction::rounds`] expansion rounds, and records the same
/// measurements as [`run_mixture_experiment`].
pub fn run_function_experiment(
    which: TestFunction,
    family: Family,
    n_samples: usize,
    n_repeats: usize,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<ExperimentOutcome> {
    let target = which.target(cfg)?;
    let sel = SelectionConfig {
        d_s: which.rounds(),
        ..cfg.selection
    };
    run_repeats(which.to_string(), family, n_samples, n_repeats, &sel, seed, |rs, sel| {
        let start = std::time::Instant::now();
        let batch = rejection_sample(&target, n_samples, derive_seed(rs, streams::REJECTION))?;
        let l_f: f64 = (0..batch.len()).map(|i| batch.weights()[i] * target.eval(batch.point(i)).ln()).sum();
        measure(rs, &target, &batch, l_f, sel, cfg.n_mc, start)
    })
}
