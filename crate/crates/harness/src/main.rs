use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use pdmd_core::dp::calibrate_sigma;
use pdmd_core::fed::{write_round_metrics_csv, FedAlgorithm};
use pdmd_core::optim::{AlphaSchedule, LearningRate};
use pdmd_core::stability::write_reports_csv;
use pdmd_core::synth::SynthConfig;
use pdmd_harness::commands::{self, resolve_output, FedSimArgs, MapSource, StabilityArgs};
use pdmd_harness::experiment::write_records_file;
use pdmd_harness::record::write_summaries;
use pdmd_harness::{read_records, run_experiment, summarize, CellSummary, ExperimentSpec};

#[derive(Parser)]
#[command(name = "pdmd", version, about = "Private mirror descent with public data: experiments and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the Gaussian noise scale σ for a privacy budget.
    Calibrate {
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        /// Per-example clip norm L.
        #[arg(long)]
        clip: f64,
        /// Number of noisy steps T.
        #[arg(long)]
        steps: usize,
        /// Private sample count.
        #[arg(long)]
        n: usize,
    },
    /// Write a synthetic public/private split as CSV.
    GenData {
        #[arg(long, default_value_t = 500)]
        p: usize,
        #[arg(long, default_value_t = 10_000)]
        n_private: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
    },
    /// Run a grid-search experiment described by a TOML file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Record wall-clock time per run (output is then not reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Compare analytic and Monte-Carlo noise displacement of one mirror step.
    Stability {
        #[arg(long, default_value_t = 20)]
        p: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Random unit directions checked in addition to the eigenvectors.
        #[arg(long, default_value_t = 4)]
        extra_dirs: usize,
        #[arg(long, value_enum, default_value_t = MapKind::Random)]
        map: MapKind,
        /// Condition number of the random map.
        #[arg(long, default_value_t = 100.0)]
        condition: f64,
        #[arg(long, default_value = "stability.csv")]
        out: PathBuf,
    },
    /// Simulate federated training on client-partitioned synthetic data.
    Fedsim {
        #[arg(long, default_value_t = 200)]
        p: usize,
        #[arg(long, value_enum, default_value_t = FedKind::DpFedavg)]
        algorithm: FedKind,
        #[arg(long, default_value_t = 100)]
        clients: usize,
        #[arg(long, default_value_t = 10)]
        public_clients: usize,
        #[arg(long, default_value_t = 16)]
        examples_per_client: usize,
        #[arg(long, default_value_t = 50)]
        rounds: usize,
        #[arg(long, default_value_t = 20)]
        clients_per_round: usize,
        #[arg(long, default_value_t = 1)]
        local_steps: usize,
        #[arg(long, default_value_t = 16)]
        local_batch: usize,
        #[arg(long, default_value_t = 1.0)]
        client_lr: f64,
        #[arg(long, default_value_t = 1.0)]
        server_lr: f64,
        #[arg(long, default_value_t = 1.0)]
        clip: f64,
        #[arg(long, default_value_t = 0.4)]
        noise_multiplier: f64,
        /// Cosine horizon for the private weight; defaults to the round count.
        #[arg(long)]
        alpha_k: Option<usize>,
        #[arg(long)]
        warm_start: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "fedsim.csv")]
        out: PathBuf,
    },
    /// Best grid point per (algorithm, p) with 95% confidence half-widths.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        /// Also write the summary as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MapKind {
    Random,
    Synthetic,
}

#[derive(Clone, Copy, ValueEnum)]
enum FedKind {
    DpFedavg,
    PdaDpmd,
}

fn print_summary(rows: &[CellSummary]) -> io::Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "{:<16} {:>6} {:>10} {:>6} {:>6} {:>7} {:>6} {:>12} {:>12}", "algorithm", "p", "lr", "clip", "epochs", "alpha_K", "trials", "mean_loss", "ci95")?;
    for s in rows {
        let k = s.alpha_k.map_or("-".to_string(), |k| k.to_string());
        writeln!(
            out,
            "{:<16} {:>6} {:>10.3e} {:>6} {:>6} {:>7} {:>6} {:>12.6} {:>12.6}",
            s.algorithm.name(),
            s.p,
            s.lr,
            s.clip,
            s.epochs,
            k,
            s.trials,
            s.mean_loss,
            s.ci_half_width
        )?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Calibrate { eps, delta, clip, steps, n } => {
            println!("{}", calibrate_sigma(clip, steps, eps, delta, n)?);
        }
        Command::GenData { p, n_private, seed, out_dir } => {
            let cfg = SynthConfig { p, n_private, seed, ..SynthConfig::default() };
            let dir = match std::env::var_os(commands::OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
                Some(d) => PathBuf::from(d),
                None => out_dir,
            };
            for path in commands::gen_data(&cfg, &dir)? {
                println!("{}", path.display());
            }
        }
        Command::Simulate { config, out, workers, timing } => {
            let mut spec = ExperimentSpec::from_file(&config)
                .with_context(|| format!("loading experiment config {}", config.display()))?;
            if let Some(o) = out {
                spec.output = o;
            }
            if let Some(w) = workers {
                spec.workers = w;
            }
            spec.record_timing |= timing;
            let path = resolve_output(&spec.output);
            let records = run_experiment(&spec)?;
            write_records_file(&records, &path)?;
            let failed = records.iter().filter(|r| !r.is_ok()).count();
            eprintln!("wrote {} records ({failed} failed) to {}", records.len(), path.display());
            match summarize(&records) {
                Ok(rows) => print_summary(&rows)?,
                Err(e) => eprintln!("no summary: {e}"),
            }
        }
        Command::Stability { p, seed, eta, sigma, samples, extra_dirs, map, condition, out } => {
            let source = match map {
                MapKind::Random => MapSource::Random { condition },
                MapKind::Synthetic => MapSource::Synthetic,
            };
            let args = StabilityArgs { p, seed, eta, sigma, samples, extra_directions: extra_dirs, source };
            let reports = commands::stability(&args)?;
            let path = resolve_output(&out);
            write_reports_csv(&reports, commands::create_file(&path)?)?;
            let worst = reports.iter().map(|r| r.relative_error).fold(0.0, f64::max);
            println!("{} directions, max relative error {worst:.4}, written to {}", reports.len(), path.display());
        }
        Command::Fedsim {
            p,
            algorithm,
            clients,
            public_clients,
            examples_per_client,
            rounds,
            clients_per_round,
            local_steps,
            local_batch,
            client_lr,
            server_lr,
            clip,
            noise_multiplier,
            alpha_k,
            warm_start,
            seed,
            out,
        } => {
            let mut args = FedSimArgs::defaults(p);
            args.synth.seed = seed;
            args.private_clients = clients;
            args.public_clients = public_clients;
            args.examples_per_client = examples_per_client;
            args.warm_start = warm_start;
            args.algorithm = match algorithm {
                FedKind::DpFedavg => FedAlgorithm::DpFedAvg,
                FedKind::PdaDpmd => FedAlgorithm::PdaDpmd,
            };
            args.config.rounds = rounds;
            args.config.clients_per_round = clients_per_round;
            args.config.local_steps = local_steps;
            args.config.local_batch_size = local_batch;
            args.config.client_lr = client_lr;
            args.config.server_lr = LearningRate::Constant(server_lr);
            args.config.clip_norm = clip;
            args.config.noise_multiplier = noise_multiplier;
            args.config.alpha = AlphaSchedule::Cosine { horizon: alpha_k.unwrap_or(rounds) };
            let metrics = commands::fedsim(&args)?;
            let path = resolve_output(&out);
            write_round_metrics_csv(&metrics, commands::create_file(&path)?)?;
            if let Some(last) = metrics.last() {
                println!(
                    "round {}: train {:.6}, eval {:.6}; written to {}",
                    last.round,
                    last.train_loss,
                    last.eval_loss,
                    path.display()
                );
            }
        }
        Command::Summarize { input, out } => {
            let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let records = read_records(BufReader::new(file)).with_context(|| format!("reading {}", input.display()))?;
            let rows = summarize(&records)?;
            print_summary(&rows)?;
            if let Some(o) = out {
                let path = resolve_output(&o);
                write_summaries(&rows, commands::create_file(&path)?)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
