use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use blobspace_cli::commands::{self, CliResult};
use blobspace_cli::simulate::SimulationConfig;
use blobspace_core::atlas::AtlasConfig;
use blobspace_core::blobshape::{DEFAULT_ISO_LEVEL, DEFAULT_MESH_RESOLUTION};
use blobspace_core::embedding::{EmbeddingParams, MapPoint};
use blobspace_service::ServiceConfig;

/// Chair design-space exploration: corpus, map, meshes, service and simulator.
#[derive(Parser)]
#[command(name = "blobspace", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural chair corpus as JSON Lines.
    GenCorpus {
        #[arg(long, default_value_t = 2000)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the 2D exploration map over a corpus and save the model.
    FitEmbedding {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: EmbeddingArgs,
    },
    /// Extract the isosurface of one corpus shape as OBJ.
    ExportMesh {
        #[arg(long)]
        corpus: PathBuf,
        /// Shape id within the corpus.
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MESH_RESOLUTION)]
        resolution: usize,
        #[arg(long, default_value_t = DEFAULT_ISO_LEVEL)]
        iso_level: f64,
    },
    /// Run the HTTP service.
    Serve {
        /// TOML config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured port.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Run the synthetic-user ROI convergence simulation.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct EmbeddingArgs {
    #[arg(long, default_value_t = 50)]
    n_neighbors: usize,
    #[arg(long, default_value_t = 0.5)]
    min_dist: f64,
    #[arg(long, default_value_t = 12)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    n_epochs: usize,
}

impl EmbeddingArgs {
    fn params(&self) -> EmbeddingParams {
        EmbeddingParams {
            n_neighbors: self.n_neighbors,
            min_dist: self.min_dist,
            seed: self.seed,
            n_epochs: self.n_epochs,
            ..EmbeddingParams::default()
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 15)]
    rounds: usize,
    /// Parent plus generated children; fixed at 4.
    #[arg(long, default_value_t = 4)]
    options_per_round: usize,
    /// Hidden target as `x,y`; each seed draws a corpus position when omitted.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    target: Option<MapPoint>,
    /// Inverse softmax temperature of the user; noiseless when omitted.
    #[arg(long)]
    noise: Option<f64>,
    /// Number of seeds, simulated as 0..K.
    #[arg(long, default_value_t = 50)]
    seeds: u64,
    #[arg(long, default_value = "metrics.json")]
    out: PathBuf,
    /// Also write an SVG convergence plot.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Corpus JSON Lines; generated when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Fitted map for `--corpus`; refit when omitted.
    #[arg(long)]
    embedding: Option<PathBuf>,
    /// Size of the generated corpus when `--corpus` is omitted.
    #[arg(long, default_value_t = 2000)]
    corpus_size: usize,
}

fn parse_point(s: &str) -> Result<MapPoint, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected x,y, got `{s}`"));
    }
    let x: f64 = parts[0].trim().parse().map_err(|e| format!("{e}"))?;
    let y: f64 = parts[1].trim().parse().map_err(|e| format!("{e}"))?;
    Ok([x, y])
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenCorpus { size, seed, out } => commands::gen_corpus(size, seed, &out),
        Command::FitEmbedding {
            corpus,
            out,
            params,
        } => commands::fit_embedding_file(&corpus, &params.params(), &out),
        Command::ExportMesh {
            corpus,
            id,
            out,
            resolution,
            iso_level,
        } => commands::export_mesh(&corpus, &id, resolution, iso_level, &out),
        Command::Serve { config, port } => {
            let mut config = match config {
                Some(path) => ServiceConfig::load(&path)?,
                None => ServiceConfig::default(),
            };
            if let Some(port) = port {
                config.port = port;
            }
            tokio::runtime::Runtime::new()?.block_on(blobspace_service::serve(config))
        }
        Command::Simulate(args) => {
            let atlas_config = AtlasConfig {
                corpus_size: args.corpus_size,
                ..AtlasConfig::default()
            };
            let atlas = commands::load_atlas(
                args.corpus.as_deref(),
                args.embedding.as_deref(),
                &atlas_config,
            )?;
            let config = SimulationConfig {
                rounds: args.rounds,
                options_per_round: args.options_per_round,
                target: args.target,
                noise: args.noise,
                seeds: (0..args.seeds).collect(),
            };
            let metrics = commands::run_simulation(atlas, &config, &args.out, args.svg.as_deref())?;
            println!(
                "success rate {:.2}, final mean distance {:.3} (radius {:.3})",
                metrics.aggregate.success_rate,
                metrics
                    .aggregate
                    .mean_distance
                    .last()
                    .copied()
                    .unwrap_or(f64::NAN),
                metrics.success_radius
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
