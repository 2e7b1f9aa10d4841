use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use esc51::experiment::{compare, render_reports, run_training};
use esc51::{final_decile_mean, AgentConfig, Algorithm};

#[derive(Parser)]
#[command(name = "esc51", about = "Categorical distributional RL: ES-C51 vs QL-C51", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long, default_value_t = 500_000)]
    total_timesteps: u64,
    #[arg(long, default_value_t = 101)]
    n_atoms: usize,
    #[arg(long, default_value_t = -100.0, allow_hyphen_values = true)]
    v_min: f64,
    #[arg(long, default_value_t = 100.0, allow_hyphen_values = true)]
    v_max: f64,
    #[arg(long, default_value_t = 1.0)]
    tau_start: f64,
    #[arg(long, default_value_t = 0.01)]
    tau_floor: f64,
    /// Fraction of total timesteps over which the temperature decays.
    #[arg(long, default_value_t = 0.75)]
    tau_fraction: f64,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 10_000)]
    learning_starts: u64,
    #[arg(long, default_value_t = 10)]
    train_frequency: u64,
    #[arg(long, default_value_t = 500)]
    target_update: u64,
    /// Sticky-action repeat probability; 0 disables the wrapper.
    #[arg(long, default_value_t = 0.0)]
    sticky: f64,
    /// Probe-set size for the policy-churn diagnostic; 0 disables it.
    #[arg(long, default_value_t = 0)]
    churn_probe: usize,
}

impl HyperArgs {
    fn config(&self, algorithm: Algorithm, seed: u64) -> AgentConfig {
        AgentConfig {
            algorithm,
            seed,
            total_timesteps: self.total_timesteps,
            n_atoms: self.n_atoms,
            v_min: self.v_min,
            v_max: self.v_max,
            tau_start: self.tau_start,
            tau_floor: self.tau_floor,
            tau_decay_fraction: self.tau_fraction,
            gamma: self.gamma,
            batch_size: self.batch_size,
            learning_starts: self.learning_starts,
            train_frequency: self.train_frequency,
            target_update_interval: self.target_update,
            churn_probe_size: self.churn_probe,
            ..AgentConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one training run and write its episode CSV + summary JSON.
    Train {
        /// Environment: cartpole, acrobot, or equal-mean.
        #[arg(long)]
        env: String,
        /// Algorithm: ql-c51 or es-c51.
        #[arg(long)]
        algo: Algorithm,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        hyper: HyperArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both algorithms over a seed sweep and emit a comparison report.
    Compare {
        #[arg(long)]
        env: String,
        /// Comma-separated seed list, e.g. 1,2,3,4,5.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[command(flatten)]
        hyper: HyperArgs,
        /// Moving-average window (episodes) for the plot-data file.
        #[arg(long, default_value_t = 20)]
        plot_window: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the comparison reports found in a results directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Train { env, algo, seed, hyper, out } => {
            let config = hyper.config(algo, seed);
            let record = run_training(&config, &env, hyper.sticky, Some(&out))?;
            let decile = final_decile_mean(&record.returns());
            println!(
                "{env} {algo} seed {seed}: {} episodes in {:.1}s{}",
                record.episodes.len(),
                record.duration_secs,
                match decile {
                    Ok(d) => format!(", final-decile mean {d:.2}"),
                    Err(_) => String::new(),
                }
            );
            if let Some(t) = record.diverged_at {
                eprintln!("warning: run diverged at timestep {t}");
            }
        }
        Command::Compare { env, seeds, hyper, plot_window, out } => {
            let base = hyper.config(Algorithm::EsC51, 0);
            let report = compare(&env, &base, &seeds, hyper.sticky, &out, plot_window)?;
            println!(
                "{env}: es-c51 {:.2} ± {:.2} vs ql-c51 {:.2} ± {:.2} | improvement {:+.2}% | p = {:.6}{}",
                report.es_mean,
                report.es_std,
                report.ql_mean,
                report.ql_std,
                report.improvement_pct,
                report.wilcoxon_p,
                if report.low_power { " (low power)" } else { "" }
            );
        }
        Command::Report { input } => {
            print!("{}", render_reports(&input)?);
        }
    }
    Ok(())
}
