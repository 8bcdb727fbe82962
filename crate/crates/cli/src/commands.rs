//! Subcommand implementations.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use blobspace_core::atlas::{generate_corpus, read_corpus, write_corpus, Atlas, AtlasConfig};
use blobspace_core::blobshape::{export_obj, extract_mesh, ShapeId};
use blobspace_core::embedding::{fit_embedding, EmbeddingArtifact, EmbeddingParams};
use blobspace_core::genprovider::MockProvider;
use blobspace_service::session::DEFAULT_FIELD_RESOLUTION;
use blobspace_service::Engine;

use crate::simulate::{convergence_svg, simulate, Metrics, SimulationConfig};

pub type CliResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

fn reader(path: &Path) -> CliResult<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| format!("{}: {e}", path.display()))?,
    ))
}

fn writer(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| format!("{}: {e}", path.display()))?,
    ))
}

pub fn gen_corpus(size: usize, seed: u64, out: &Path) -> CliResult<()> {
    write_corpus(&generate_corpus(size, seed), writer(out)?)?;
    Ok(())
}

pub fn fit_embedding_file(corpus: &Path, params: &EmbeddingParams, out: &Path) -> CliResult<()> {
    let shapes = read_corpus(reader(corpus)?)?;
    let rows: Vec<Vec<f64>> = shapes.iter().map(|s| s.flatten()).collect();
    let model = fit_embedding(&rows, params)?;
    serde_json::to_writer(writer(out)?, &model.to_artifact())?;
    Ok(())
}

pub fn export_mesh(
    corpus: &Path,
    id: &str,
    resolution: usize,
    iso_level: f64,
    out: &Path,
) -> CliResult<()> {
    let shapes = read_corpus(reader(corpus)?)?;
    let id = ShapeId::new(id);
    let shape = shapes
        .iter()
        .find(|s| s.id == id)
        .ok_or_else(|| format!("no shape `{id}` in {}", corpus.display()))?;
    let mesh = extract_mesh(shape, resolution, iso_level)?;
    std::fs::write(out, export_obj(&mesh)?)?;
    Ok(())
}

/// Load a corpus (and optionally its fitted map), or generate both.
pub fn load_atlas(
    corpus: Option<&Path>,
    embedding: Option<&Path>,
    config: &AtlasConfig,
) -> CliResult<Atlas> {
    Ok(match (corpus, embedding) {
        (None, None) => Atlas::generate(config)?,
        (Some(c), None) => Atlas::fit(read_corpus(reader(c)?)?, config)?,
        (Some(c), Some(e)) => {
            let artifact: EmbeddingArtifact = serde_json::from_reader(reader(e)?)?;
            Atlas::from_artifact(read_corpus(reader(c)?)?, artifact, config)?
        }
        (None, Some(_)) => return Err("--embedding requires --corpus".into()),
    })
}

/// Run the simulator with the mock provider and write the metrics (and plot).
pub fn run_simulation(
    atlas: Atlas,
    config: &SimulationConfig,
    out: &Path,
    svg: Option<&Path>,
) -> CliResult<Metrics> {
    let engine = Engine {
        atlas: Arc::new(atlas),
        provider: Arc::new(MockProvider),
        field_resolution: DEFAULT_FIELD_RESOLUTION,
    };
    let metrics = simulate(&engine, config)?;
    serde_json::to_writer_pretty(writer(out)?, &metrics)?;
    if let Some(svg) = svg {
        std::fs::write(svg, convergence_svg(&metrics))?;
    }
    Ok(metrics)
}
