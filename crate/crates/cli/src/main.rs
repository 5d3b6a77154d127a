use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use polymatch::config::ExperimentConfig;
use polymatch::gradcheck::{run_suite, DEFAULT_STEP, DEFAULT_TOLERANCE};
use polymatch::stats::{recommended_eta, sample_moment_report, write_moment_csv};
use polymatch::sweep::{
    emit_report, relative_error_reduction, run_sweep_on, ReportFormat, RowStatus, SweepResult,
    SweepSpec,
};
use polymatch::synth::{generate, SynthTaskSpec};
use polymatch::{Degree, FeatureConfig};

#[derive(Parser, Debug)]
#[command(
    name = "polymatch",
    version,
    about = "Scaled polynomial matching features: experiments and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every (degree, eta, seed) cell of a config and write reports.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "sweep-out")]
        out_dir: PathBuf,
        /// Overrides `[sweep] parallelism`.
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Monte-Carlo moments of each feature block under Gaussian inputs.
    Moments {
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 32)]
        d: usize,
        /// Defaults to 1/sigma.
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, default_value_t = 2)]
        degree: u8,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic task as train/val/test TSV files.
    Gen {
        #[arg(long)]
        out_dir: PathBuf,
        /// TOML file with the task fields; flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_val: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        signal_degree: Option<u8>,
        #[arg(long)]
        noise_level: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-difference check of every model gradient; exits 1 on failure.
    Gradcheck {
        #[arg(long, default_value_t = 3)]
        instances: u64,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Plotdata,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Plotdata => ReportFormat::PlotData,
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Sweep {
            config,
            out_dir,
            parallelism,
            format,
        } => sweep(config, out_dir, parallelism, format),
        Command::Moments {
            sigma,
            d,
            eta,
            degree,
            samples,
            seed,
        } => {
            let degree = Degree::try_from(degree)?;
            if !(sigma.is_finite() && sigma > 0.0) {
                bail!("sigma must be positive, got {sigma}");
            }
            let eta = eta.unwrap_or_else(|| recommended_eta(sigma, degree));
            let report =
                sample_moment_report(d, sigma, &FeatureConfig::new(degree, eta)?, samples, seed)?;
            write_moment_csv(&[report], std::io::stdout().lock())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Gen {
            out_dir,
            spec,
            d,
            sigma,
            n_train,
            n_val,
            n_test,
            signal_degree,
            noise_level,
            seed,
        } => {
            let mut task = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    SynthTaskSpec::from_toml_str(&text)?
                }
                None => SynthTaskSpec::default(),
            };
            task.d = d.unwrap_or(task.d);
            task.sigma = sigma.unwrap_or(task.sigma);
            task.n_train = n_train.unwrap_or(task.n_train);
            task.n_val = n_val.unwrap_or(task.n_val);
            task.n_test = n_test.unwrap_or(task.n_test);
            task.signal_degree = signal_degree.unwrap_or(task.signal_degree);
            task.noise_level = noise_level.unwrap_or(task.noise_level);
            task.seed = seed.unwrap_or(task.seed);
            let generated = generate(&task)?;
            for path in generated.write_tsv_splits(&out_dir)? {
                println!("{}", path.display());
            }
            std::fs::write(out_dir.join("task.toml"), task.to_toml_string()?)
                .with_context(|| format!("writing {}", out_dir.join("task.toml").display()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck {
            instances,
            step,
            tolerance,
        } => {
            let mut ok = true;
            for entry in run_suite(instances, step)? {
                let pass = entry.outcome.max_rel_error < tolerance;
                ok &= pass;
                let worst = entry
                    .outcome
                    .worst
                    .as_ref()
                    .map(|w| format!("{}[{}]", w.tensor, w.index))
                    .unwrap_or_default();
                println!(
                    "{} degree={} instance={} params={} max_rel_error={:.3e} worst={}",
                    if pass { "PASS" } else { "FAIL" },
                    entry.degree,
                    entry.instance,
                    entry.outcome.checked,
                    entry.outcome.max_rel_error,
                    worst,
                );
            }
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn sweep(
    config: PathBuf,
    out_dir: PathBuf,
    parallelism: Option<usize>,
    format: Format,
) -> Result<ExitCode> {
    let cfg = ExperimentConfig::from_file(&config)?;
    let mut spec = SweepSpec::from_config(&cfg);
    if let Some(p) = parallelism {
        spec.parallelism = p;
    }
    spec.validate()?;
    let dataset = spec.task.load()?;
    let total = spec.jobs().len();
    eprintln!(
        "{} runs: degrees {:?}, eta {:?}, seeds {:?}",
        total,
        spec.degrees.iter().map(|d| d.as_u8()).collect::<Vec<_>>(),
        spec.eta_grid,
        spec.seeds
    );

    let done = std::sync::atomic::AtomicUsize::new(0);
    let result = run_sweep_on(&spec, &dataset, |row| {
        let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        eprintln!(
            "[{n}/{total}] degree={} eta={} seed={} test={:.4} epochs={} {:?}",
            row.degree, row.eta, row.seed, row.test_accuracy, row.epochs_run, row.status
        );
    })?;

    for path in emit_report(&result, format.into(), &out_dir)? {
        println!("{}", path.display());
    }
    summarize(&result);
    if result.rows.iter().all(|r| r.status == RowStatus::Failed) {
        bail!("every run failed");
    }
    Ok(ExitCode::SUCCESS)
}

fn summarize(result: &SweepResult) {
    let mut degrees: Vec<_> = result.aggregates.iter().map(|a| a.degree).collect();
    degrees.dedup();
    for degree in degrees {
        let Some(best) = result.best_eta(degree) else {
            continue;
        };
        let base = result.aggregates.iter().find(|a| a.degree == degree);
        let mut line = format!(
            "degree {degree}: best eta {} mean {:.4} max {:.4}",
            best.eta, best.mean_accuracy, best.max_accuracy
        );
        if let Some(base) = base.filter(|b| b.eta != best.eta) {
            if let Ok(r) = relative_error_reduction(best.mean_accuracy, base.mean_accuracy) {
                line += &format!(
                    "; error reduction vs eta {}: {:.2}% (mean)",
                    base.eta,
                    100.0 * r
                );
            }
            if let Ok(r) = relative_error_reduction(best.max_accuracy, base.max_accuracy) {
                line += &format!(", {:.2}% (best run)", 100.0 * r);
            }
        }
        let failed = result
            .rows
            .iter()
            .filter(|r| r.degree == degree && r.status != RowStatus::Completed)
            .count();
        if failed > 0 {
            line += &format!("; {failed} diverged or failed runs");
        }
        eprintln!("{line}");
    }
}
