use std::io::{ErrorKind, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use fspda::graph::{build_incidence, spectral_constants, SamplerSpec, SpectralMode};
use fspda::harness::{
    analyze, load_config, override_config, parse_sampler_spec, parse_topology_spec, run_batch, run_preset, PresetRun,
    PRESET_NAMES,
};

#[derive(Parser)]
#[command(name = "fspda", version, about = "Decentralized primal-dual optimization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a JSON experiment config over one or more seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Output directory (defaults to `output.dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Field override, e.g. `hyperparams.alpha=0.01`.
        #[arg(long = "override", value_name = "K=V")]
        overrides: Vec<String>,
    },
    /// Run a named desk-scale experiment preset.
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "override", value_name = "K=V")]
        overrides: Vec<String>,
        /// Number of seeds (defaults to the preset's own choice).
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, default_value_t = 0)]
        master_seed: u64,
    },
    /// Recompute aggregates and summaries of a batch directory.
    Analyze { dir: PathBuf },
    /// Print the spectral constants of a graph and edge law.
    Spectral {
        /// `ring:5`, `complete:5`, `path:4`, `star:6`, `er:8:0.4[:seed]`, `file:<path>`.
        #[arg(long)]
        topology: String,
        /// `one_edge`, `full`, `bernoulli:<p>`, `periodic:<P>`, optionally `,s=<sparsity>`.
        #[arg(long)]
        sampler: String,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Estimate by Monte Carlo with this many samples instead of exact enumeration.
        #[arg(long)]
        monte_carlo: Option<u64>,
    },
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seeds,
            out,
            overrides,
        } => {
            let cfg = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
            let cfg = override_config(&cfg, &overrides)?;
            let out = out.or_else(|| cfg.output.dir.clone());
            let runs = [PresetRun {
                label: "run".into(),
                config: cfg,
            }];
            let res = run_batch("custom", &runs, seeds, out.as_deref())?;
            emit(&serde_json::to_string_pretty(&res.summary)?)?;
        }
        Command::Preset {
            name,
            out,
            overrides,
            seeds,
            master_seed,
        } => {
            let res = run_preset(&name, master_seed, seeds, &overrides, out.as_deref())?;
            emit(&serde_json::to_string_pretty(&res.summary)?)?;
        }
        Command::Analyze { dir } => {
            let summary = analyze(&dir).with_context(|| format!("analyzing {}", dir.display()))?;
            emit(&serde_json::to_string_pretty(&summary)?)?;
        }
        Command::Spectral {
            topology,
            sampler,
            dim,
            monte_carlo,
        } => {
            let topo = parse_topology_spec(&topology)?.build()?;
            let inc = build_incidence(&topo);
            let s = parse_sampler_spec(&sampler)?;
            let spec = SamplerSpec::new(s.edge_law(inc.edge_count())?, s.sparsity, 0);
            let mode = match monte_carlo {
                Some(samples) => SpectralMode::MonteCarlo { samples },
                None => SpectralMode::exact(),
            };
            let report = spectral_constants(&spec, &inc, dim, mode)?;
            emit(&serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(())
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
