use std::path::PathBuf;
use std::process::ExitCode;

use ballwise::domain::RadiusCap;
use ballwise_cli::commands::{cmd_adjust, cmd_distances, cmd_simulate, cmd_tessellate, cmd_test, Common};
use ballwise_cli::CliError;
use clap::{Args, Parser, Subcommand};

/// Ball-wise local inference for functional data on triangulated manifolds.
#[derive(Debug, Parser)]
#[command(name = "ballwise", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Overrides the seed in the config.
    #[arg(long, global = true, env = "BALLWISE_SEED")]
    seed: Option<u64>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, env = "BALLWISE_THREADS", default_value_t = 0)]
    threads: usize,
    /// Directory for relative output paths (default: next to the config).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write an icosphere mesh as OFF.
    Tessellate {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        order: u64,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precompute a mesh's geodesic distance matrix for reuse in configs.
    Distances {
        #[arg(long)]
        mesh: PathBuf,
        /// CSV of `i,j,length` edge-length overrides.
        #[arg(long)]
        edge_lengths: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the permutation test and write p-values and a manifest.
    Test {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-adjust the cached ball p-values of a `test` run under smaller caps.
    Adjust {
        #[arg(long)]
        config: PathBuf,
        /// One cap per component, comma separated (`inf` allowed).
        #[arg(long, value_delimiter = ',', required = true)]
        caps: Vec<RadiusCap>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a JSON list of simulation scenarios and write their error rates.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = Common {
        seed: cli.global.seed,
        out_dir: cli.global.out_dir,
        threads: cli.global.threads,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} threads: {e}", common.threads)))?;
    pool.install(|| match cli.command {
        Command::Tessellate { order, radius, out } => {
            let path = cmd_tessellate(order as usize, radius, &out, &common)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Distances { mesh, edge_lengths, out } => {
            let path = cmd_distances(&mesh, edge_lengths.as_deref(), &out, &common)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Test { config } => {
            let summary = cmd_test(&config, &common)?;
            println!(
                "{} ({} balls, {} points with adjusted p <= alpha)",
                summary.points.display(),
                summary.family_size,
                summary.rejected
            );
            Ok(())
        }
        Command::Adjust { config, caps, out } => {
            let path = cmd_adjust(&config, &caps, out.as_deref(), &common)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Simulate { config, out } => {
            let (path, rows) = cmd_simulate(&config, out.as_deref(), &common)?;
            println!("{} ({} scenarios)", path.display(), rows.len());
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ballwise: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
