//! `spamm`: sample, fit, evaluate and reproduce experiments with sparse
//! mixture models on the torus.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use spamm::eval::{friedman_target, mc_relative_error, rejection_sample, spline_target, TargetDensity};
use spamm::experiments::{
    build_ground_truth, run_function_experiment, run_image_experiment, run_mixture_experiment, ExperimentOutcome,
    Setting, TestFunction,
};
use spamm::mixture::{
    format_decimal, neg_log_likelihood, read_batch_csv, read_model_json, sample, write_batch_csv, write_model_json,
};
use spamm::selection::select_and_fit;
use spamm::{Family, SparseMixture, WeightedSampleBatch};

use config::RunConfig;

/// Sparse mixture models on the torus.
#[derive(Debug, Parser)]
#[command(name = "spamm", version, about)]
struct Cli {
    /// Worker threads; falls back to SPAMM_THREADS, then to all cores
    #[arg(long, global = true, env = "SPAMM_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw samples from a model file or a built-in target and write a CSV batch
    Sample {
        /// mixture_a, mixture_b, spline_f1, friedman1, or a path to model.json
        target: String,
        /// Number of samples
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; standard output when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the selection heuristic and penalized EM on a CSV batch
    Fit {
        /// Input CSV batch
        input: PathBuf,
        /// JSON configuration file with flat keys
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: RunConfig,
    },
    /// Compute metrics of a model on data or against a built-in truth
    Evaluate {
        /// Model JSON file
        model: PathBuf,
        /// CSV batch for the log-likelihood metrics
        #[arg(long)]
        data: Option<PathBuf>,
        /// Built-in ground truth for the relative errors: mixture_a, mixture_b, spline_f1, friedman1
        #[arg(long)]
        truth: Option<String>,
        /// Comma-separated metrics among nll, nll_per_sample, log_lik, e_l1, e_l2
        #[arg(long, value_delimiter = ',', default_value = "nll")]
        metrics: Vec<String>,
        /// Uniform draws per relative-error estimate
        #[arg(long, default_value_t = 100_000)]
        n_mc: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV `metric,value`; standard output when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduce one of the experiments and write a results directory
    Experiment {
        /// table1 (mixture recovery), table2 (function approximation) or image
        name: String,
        /// Ground truth of table1: a or b
        #[arg(long, default_value = "a")]
        setting: Setting,
        /// Test function of table2: f1 or f2
        #[arg(long, default_value = "f2")]
        function: TestFunction,
        /// Run only this family instead of all three
        #[arg(long = "only")]
        only: Option<Family>,
        /// Desk-scale protocol: 3 repeats of 10000 samples (the default)
        #[arg(long, conflicts_with = "full")]
        quick: bool,
        /// Original protocol: 10 repeats at 10000 and 50000 samples
        #[arg(long)]
        full: bool,
        /// JSON configuration file with flat keys
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: RunConfig,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(usize::from(t)).build_global() {
            eprintln!("error: kind=threads message={e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = if e.downcast_ref::<spamm::Error>().is_some_and(|s| matches!(s, spamm::Error::Parse { .. })) {
                "parse"
            } else if e.downcast_ref::<std::io::Error>().is_some() {
                "io"
            } else {
                "runtime"
            };
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error: kind={kind} message={message}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Sample { target, n, seed, out } => cmd_sample(&target, n, seed, out.as_deref()),
        Command::Fit {
            input,
            config,
            overrides,
        } => cmd_fit(&input, config.as_deref(), &overrides),
        Command::Evaluate {
            model,
            data,
            truth,
            metrics,
            n_mc,
            seed,
            out,
        } => cmd_evaluate(&model, data.as_deref(), truth.as_deref(), &metrics, n_mc, seed, out.as_deref()),
        Command::Experiment {
            name,
            setting,
            function,
            only,
            quick: _,
            full,
            config,
            overrides,
        } => cmd_experiment(&name, setting, function, only, full, config.as_deref(), &overrides),
    }
}

/// Writer for `path`, or standard output.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

/// A built-in ground truth as a target density.
fn builtin_target(name: &str) -> Result<TargetDensity> {
    Ok(match name {
        "mixture_a" => TargetDensity::from_mixture(&build_ground_truth(Setting::A))?,
        "mixture_b" => TargetDensity::from_mixture(&build_ground_truth(Setting::B))?,
        "spline_f1" => spline_target(),
        "friedman1" => friedman_target(1_000_000, 0)?,
        other => bail!("unknown target '{other}'"),
    })
}

fn read_model(path: &Path) -> Result<SparseMixture> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_model_json(std::io::BufReader::new(f))?)
}

fn read_batch(path: &Path) -> Result<WeightedSampleBatch> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_batch_csv(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn cmd_sample(target: &str, n: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let batch = match target {
        "mixture_a" => sample(&build_ground_truth(Setting::A), n, seed)?,
        "mixture_b" => sample(&build_ground_truth(Setting::B), n, seed)?,
        "spline_f1" | "friedman1" => rejection_sample(&builtin_target(target)?, n, seed)?,
        path if Path::new(path).is_file() => sample(&read_model(Path::new(path))?, n, seed)?,
        other => bail!("unknown target '{other}': expected mixture_a, mixture_b, spline_f1, friedman1 or a model file"),
    };
    let mut w = output(out)?;
    write_batch_csv(&batch, &mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_fit(input: &Path, config: Option<&Path>, overrides: &RunConfig) -> Result<()> {
    let cfg = RunConfig::load(config, overrides)?;
    cfg.log_defaults();
    let selection = cfg.selection()?;
    let batch = read_batch(input)?;
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("fit_output"));
    let (model, mut report) = select_and_fit(&batch, &selection, cfg.seed())?;
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    report.trace_file = Some("trace.csv".into());
    let mut w = output(Some(&out_dir.join("model.json")))?;
    write_model_json(&model, &mut w)?;
    w.flush()?;
    let mut w = output(Some(&out_dir.join("report.json")))?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    w.flush()?;
    let mut w = output(Some(&out_dir.join("couplings.csv")))?;
    report.write_couplings_csv(&mut w)?;
    w.flush()?;
    let mut w = output(Some(&out_dir.join("trace.csv")))?;
    report.write_trace_csv(&mut w)?;
    w.flush()?;
    log::info!("fitted {} components, nll {}", model.n_components(), report.nll);
    Ok(())
}

fn cmd_evaluate(
    model: &Path,
    data: Option<&Path>,
    truth: Option<&str>,
    metrics: &[String],
    n_mc: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let model = read_model(model)?;
    let batch = data.map(read_batch).transpose()?.map(|b| b.normalized()).transpose()?;
    let target = truth.map(builtin_target).transpose()?;
    let mut rows = Vec::with_capacity(metrics.len());
    for m in metrics {
        let need_data = || batch.as_ref().context(format!("metric '{m}' needs --data"));
        let need_truth = || target.as_ref().context(format!("metric '{m}' needs --truth"));
        let value = match m.as_str() {
            "nll" => neg_log_likelihood(&model, need_data()?)?,
            "log_lik" => -neg_log_likelihood(&model, need_data()?)?,
            "nll_per_sample" => {
                let b = need_data()?;
                neg_log_likelihood(&model, b)? / b.total_weight()
            }
            "e_l1" => mc_relative_error(need_truth()?, &model, 1, n_mc, seed)?,
            "e_l2" => mc_relative_error(need_truth()?, &model, 2, n_mc, seed)?,
            other => bail!("unknown metric '{other}'"),
        };
        rows.push((m.clone(), value));
    }
    let mut w = output(out)?;
    writeln!(w, "metric,value")?;
    for (m, v) in rows {
        writeln!(w, "{m},{}", format_decimal(v))?;
    }
    w.flush()?;
    Ok(())
}

fn families(only: Option<Family>) -> Vec<Family> {
    match only {
        Some(f) => vec![f],
        None => Family::ALL.to_vec(),
    }
}

/// Writes the per-family results and a summary `table.csv` with one row per family.
fn write_experiment(dir: &Path, outcomes: &[ExperimentOutcome]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = output(Some(&dir.join("table.csv")))?;
    writeln!(w, "family,n_samples,repeats,L_f,L_f_std,L_p_hat,L_p_hat_std,e_L1,e_L1_std,e_L2,e_L2_std")?;
    for o in outcomes {
        o.write_results(&dir.join(o.family.name()))?;
        let cols = [o.log_lik_truth(), o.log_lik_fit(), o.e_l1(), o.e_l2()];
        let vals: Vec<String> =
            cols.iter().flat_map(|c| [format_decimal(c.mean), format_decimal(c.std)]).collect();
        writeln!(w, "{},{},{},{}", o.family.name(), o.n_samples, o.repeats.len(), vals.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_experiment(
    name: &str,
    setting: Setting,
    function: TestFunction,
    only: Option<Family>,
    full: bool,
    config: Option<&Path>,
    overrides: &RunConfig,
) -> Result<()> {
    let cfg = RunConfig::load(config, overrides)?;
    cfg.log_defaults();
    let seed = cfg.seed();
    let root = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    let repeats = cfg.repeats.unwrap_or(if full { 10 } else { 3 });
    let sizes: Vec<usize> = match (cfg.n_samples, full) {
        (Some(n), _) => vec![n],
        (None, false) => vec![10_000],
        (None, true) => vec![10_000, 50_000],
    };
    let suffix = |n: usize| if sizes.len() > 1 { format!("_n{n}") } else { String::new() };
    match name {
        "table1" | "table2" => {
            let exp = cfg.experiment()?;
            for &n in &sizes {
                let mut outcomes = Vec::new();
                for family in families(only.or(cfg.family)) {
                    outcomes.push(if name == "table1" {
                        run_mixture_experiment(setting, family, n, repeats, &exp, seed)?
                    } else {
                        run_function_experiment(function, family, n, repeats, &exp, seed)?
                    });
                }
                let label = if name == "table1" { setting.to_string() } else { function.to_string() };
                write_experiment(&root.join(format!("{name}_{label}{}", suffix(n))), &outcomes)?;
            }
        }
        "image" => {
            let base = cfg.image()?;
            for family in families(only.or(cfg.family)) {
                let mut ic = base;
                ic.selection.family = family;
                let o = run_image_experiment(&ic, seed)?;
                o.write_results(&root.join("image").join(family.name()))?;
                println!("{} accuracy {}", family.name(), format_decimal(o.accuracy));
            }
        }
        other => bail!("unknown experiment '{other}': expected table1, table2 or image"),
    }
    Ok(())
}
