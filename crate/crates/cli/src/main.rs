use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use stitchqm::pipeline::{self, RunConfig};
use stitchqm::Error;

/// Seasonal quantile-mapping bias correction of daily precipitation grids.
#[derive(Parser, Debug)]
#[command(name = "stitchqm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Between-season and between-month t-test rejection tables.
    Stationarity(ConfigArgs),
    /// Fit wet-day models per pixel and season for both reference stacks.
    Fit(ConfigArgs),
    /// Correct the future model stack with every fitted model.
    Correct(ConfigArgs),
    /// Score corrected stacks against the target stack.
    Evaluate(ConfigArgs),
    /// Goodness-of-fit and QQ diagnostics for one pixel.
    Diagnose {
        #[command(flatten)]
        config: ConfigArgs,
        /// Latitude index of the pixel.
        #[arg(long)]
        lat_index: usize,
        /// Longitude index of the pixel.
        #[arg(long)]
        lon_index: usize,
    },
}

/// Run configuration: a `key = value` file plus per-key overrides.
#[derive(Args, Debug)]
struct ConfigArgs {
    /// Configuration file with `key = value` lines.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Observation reference stack (GSF).
    #[arg(long)]
    obs_path: Option<String>,
    /// Model reference stack (GSF).
    #[arg(long)]
    mod_ref_path: Option<String>,
    /// Model stack to correct (GSF).
    #[arg(long)]
    mod_fut_path: Option<String>,
    /// Observation stack used as evaluation target (GSF).
    #[arg(long)]
    target_path: Option<String>,
    /// Directory for every output file [default: out].
    #[arg(long)]
    output_dir: Option<String>,
    /// Comma-separated subset of DJF,MAM,JJA,SON [default: all].
    #[arg(long)]
    seasons: Option<String>,
    /// Comma-separated subset of gamma,expw,egp,emp,stitchbj [default: all].
    #[arg(long)]
    models: Option<String>,
    /// Wet-day threshold in mm [default: 1.0].
    #[arg(long)]
    wet_threshold_mm: Option<String>,
    /// EGP left-censoring level in mm [default: 3.0].
    #[arg(long)]
    egp_censor_mm: Option<String>,
    /// Family-wise level of the goodness-of-fit test [default: 0.05].
    #[arg(long)]
    bj_level: Option<String>,
    /// Number of evaluation quantiles [default: 50].
    #[arg(long)]
    n_quantiles: Option<String>,
    /// Seed of the dry-day jitter [default: 0].
    #[arg(long)]
    seed: Option<String>,
    /// Worker threads, 0 for all processors [default: 0].
    #[arg(long)]
    threads: Option<String>,
    /// Reference model of the difference metrics [default: emp].
    #[arg(long)]
    baseline_model: Option<String>,
    /// Use Welch's t-test instead of the pooled one [default: false].
    #[arg(long)]
    ttest_welch: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let flags = [
            ("obs_path", &self.obs_path),
            ("mod_ref_path", &self.mod_ref_path),
            ("mod_fut_path", &self.mod_fut_path),
            ("target_path", &self.target_path),
            ("output_dir", &self.output_dir),
            ("seasons", &self.seasons),
            ("models", &self.models),
            ("wet_threshold_mm", &self.wet_threshold_mm),
            ("egp_censor_mm", &self.egp_censor_mm),
            ("bj_level", &self.bj_level),
            ("n_quantiles", &self.n_quantiles),
            ("seed", &self.seed),
            ("threads", &self.threads),
            ("baseline_model", &self.baseline_model),
            ("ttest_welch", &self.ttest_welch),
        ];
        debug_assert_eq!(flags.len(), pipeline::CONFIG_KEYS.len());
        flags
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }

    fn load(&self) -> Result<RunConfig, Error> {
        RunConfig::load(self.config.as_deref(), &self.overrides())
    }
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Stationarity(args) => {
            let cfg = args.load()?;
            pipeline::cmd_stationarity(&cfg)?;
            let mut paths = vec![cfg.output_dir.join("stationarity_seasons.csv")];
            paths.extend(
                cfg.seasons
                    .iter()
                    .map(|s| cfg.output_dir.join(format!("stationarity_months_{s}.csv"))),
            );
            print_paths(&paths);
        }
        Command::Fit(args) => print_paths(&pipeline::cmd_fit(&args.load()?)?),
        Command::Correct(args) => print_paths(&pipeline::cmd_correct(&args.load()?)?),
        Command::Evaluate(args) => {
            let cfg = args.load()?;
            let eval = pipeline::cmd_evaluate(&cfg)?;
            info!("evaluated {} pixel-season-model rows", eval.rows.len());
            print_paths(&[cfg.output_dir.join("metrics.csv"), cfg.output_dir.join("summary.csv")]);
        }
        Command::Diagnose {
            config,
            lat_index,
            lon_index,
        } => {
            let cfg = config.load()?;
            let (_, path) = pipeline::cmd_diagnose(&cfg, lat_index, lon_index)?;
            print_paths(&[path]);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
