use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mfda::experiments::{
    budget_sweep, default_output_dir, forecast_rmse_study, generate_truth, lambda_sweep, run_twin_experiment,
    write_table, write_twin_outputs, Accounting, ExperimentConfig, ExperimentError, ModelKind, SurrogateChoice,
};
use mfda::surrogate::load_weights;

/// Multi-fidelity ensemble Kalman filter twin experiments.
#[derive(Parser)]
#[command(name = "mfda", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a twin experiment and write its diagnostics.
    Run {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Rerun a configuration for several values of λ.
    SweepLambda {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run every (N_X, N_U) split of a fixed budget.
    SweepBudget {
        config: PathBuf,
        /// Budget in full-model run equivalents.
        #[arg(long)]
        budget: f64,
        /// Cost ratio of a full-model run to a surrogate run.
        #[arg(long)]
        speedup: f64,
        #[arg(long, value_enum, default_value_t = AccountingArg::ControlFree)]
        accounting: AccountingArg,
        /// Only these values of N_X.
        #[arg(long, value_delimiter = ',')]
        n_x: Option<Vec<usize>>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Forecast RMSE of the surrogates against the full model.
    ForecastRmse {
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        surrogates: Option<Vec<SurrogateChoice>>,
        #[arg(long, value_delimiter = ',', default_values_t = [6.0, 24.0, 168.0])]
        leads: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        ics: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate the truth trajectory (Lorenz-2005) or snapshot library (QG).
    Truth { config: PathBuf },
    /// Print the manifest of a weight container.
    DescribeWeights { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum AccountingArg {
    ControlFree,
    ControlCharged,
}

impl From<AccountingArg> for Accounting {
    fn from(a: AccountingArg) -> Self {
        match a {
            AccountingArg::ControlFree => Accounting::ControlFree,
            AccountingArg::ControlCharged => Accounting::ControlCharged,
        }
    }
}

fn output_dir(cfg: &ExperimentConfig, config: &Path, output: Option<PathBuf>) -> PathBuf {
    output.unwrap_or_else(|| default_output_dir(cfg, config))
}

fn default_surrogates(cfg: &ExperimentConfig) -> Vec<SurrogateChoice> {
    let mut list = match cfg.model {
        ModelKind::Lorenz2005 => vec![SurrogateChoice::LowRes(120), SurrogateChoice::LowRes(240), SurrogateChoice::LowRes(480)],
        ModelKind::Qg => vec![SurrogateChoice::LowRes(32), SurrogateChoice::LowRes(64)],
    };
    if cfg.weights_path().exists() {
        list.push(SurrogateChoice::Nn);
    } else {
        eprintln!("note: no weights at {}, skipping the neural surrogate", cfg.weights_path().display());
    }
    list
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn execute(command: Command) -> Result<(), ExperimentError> {
    match command {
        Command::Run { config, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = output_dir(&cfg, &config, output);
            match run_twin_experiment(&cfg) {
                Ok(report) => {
                    write_twin_outputs(&dir, &report)?;
                    println!(
                        "averaged rmse {:.4}  spread {:.4}  hr spread {:.4}  ({} replicates, outputs in {})",
                        report.series.averaged_rmse,
                        report.series.averaged_spread,
                        report.series.averaged_hr_spread,
                        report.replicate_rmse.len(),
                        dir.display()
                    );
                    Ok(())
                }
                Err(ExperimentError::Diverged { replicate, cycle, rmse, partial }) => {
                    write_twin_outputs(&dir, &partial)?;
                    eprintln!("partial outputs in {}", dir.display());
                    Err(ExperimentError::Diverged { replicate, cycle, rmse, partial })
                }
                Err(e) => Err(e),
            }
        }
        Command::SweepLambda { config, values, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rows = lambda_sweep(&cfg, &values)?;
            println!("{:>6} {:>10} {:>10} {:>10}", "lambda", "rmse", "spread_hr", "spread_mf");
            for r in &rows {
                println!("{:>6.2} {:>10.4} {:>10.4} {:>10.4}", r.lambda, r.rmse, r.spread_hr, r.spread_mf);
            }
            let dir = output_dir(&cfg, &config, output);
            write_table(&dir, "lambda_sweep", &cfg, &rows, "lambda", &["rmse", "spread_hr", "spread_mf"])?;
            Ok(())
        }
        Command::SweepBudget { config, budget, speedup, accounting, n_x, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rows = budget_sweep(&cfg, budget, speedup, accounting.into(), n_x.as_deref())?;
            println!("{:>4} {:>5} {:>7} {:>10} {:>10}", "n_x", "n_u", "hr_%", "rmse", "spread");
            for r in &rows {
                println!("{:>4} {:>5} {:>7.1} {:>10.4} {:>10.4}", r.n_x, r.n_u, r.hr_percent, r.rmse, r.spread);
            }
            let dir = output_dir(&cfg, &config, output);
            write_table(&dir, "budget_sweep", &cfg, &rows, "hr_percent", &["rmse", "spread"])?;
            Ok(())
        }
        Command::ForecastRmse { config, surrogates, leads, ics, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let surrogates = surrogates.unwrap_or_else(|| default_surrogates(&cfg));
            let rows = forecast_rmse_study(&cfg, &surrogates, &leads, ics)?;
            println!("{:>9} {:>8} {:>10}", "surrogate", "lead_h", "rmse");
            for r in &rows {
                println!("{:>9} {:>8} {:>10}", r.surrogate, r.lead_hours, fmt_opt(r.rmse));
            }
            let dir = output_dir(&cfg, &config, output);
            write_table(&dir, "forecast_rmse", &cfg, &rows, "lead_hours", &["rmse"])?;
            Ok(())
        }
        Command::Truth { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (path, file) = generate_truth(&cfg)?;
            println!("wrote {} states of size {} to {}", file.len(), file.dim(), path.display());
            Ok(())
        }
        Command::DescribeWeights { file } => {
            let weights = load_weights(&file).map_err(|e| {
                if e.is_missing() {
                    ExperimentError::MissingArtifact {
                        what: "weight file".into(),
                        path: file.display().to_string(),
                    }
                } else {
                    e.into()
                }
            })?;
            print!("{}", weights.describe());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
