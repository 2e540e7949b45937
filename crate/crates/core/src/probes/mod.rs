//! Measurement instruments: local Lipschitz constants of the embedding,
//! perturbation heatmaps, linear-probe noise robustness and the
//! linearized-training check.

mod heatmap;
mod lipschitz;
mod ntk;
mod robustness;

use thiserror::Error;

use crate::ad::{AdError, Linearization, Tape, Var};
use crate::geometry::{Conformation, GeometryError};
use crate::model::{rows_from_flat, GeoRecon, ModelError, Trainable};
use crate::tensor::Tensor;

pub use heatmap::{heatmap, write_heatmap_csv, HeatmapGrid, HeatmapSpec};
pub use lipschitz::{
    lipschitz_power, lipschitz_report, percentile, write_lipschitz_csv, write_lipschitz_summary_csv, LipschitzEstimate,
    LipschitzReport, LipschitzRow, LipschitzSummary, PowerMethod,
};
pub use ntk::{ntk_check, write_ntk_csv, LinearizationReport, NtkConfig, RangeSummary};
pub use robustness::{noise_robustness_check, RobustnessReport};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("no non-rigid directions: the Lipschitz constant is undefined for this geometry")]
    Undefined,
    #[error("step count must be at least 1")]
    InvalidSteps,
    #[error("atom {atom} out of range for a {num_atoms}-atom molecule")]
    AtomOutOfRange { atom: usize, num_atoms: usize },
    #[error("heatmap axes must be orthonormal")]
    AxesNotOrthonormal,
    #[error("heatmap resolution must be odd and positive, got {0}")]
    InvalidResolution(usize),
    #[error("displacement range must be positive and finite, got {0}")]
    InvalidRange(f64),
    #[error("no molecules to probe")]
    EmptyCorpus,
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// A differentiable map from flat coordinates to an embedding vector.
pub trait EmbedFn: Sync {
    /// `coords` is a `1 x 3N` row; the result is read as a flat vector.
    fn embed<'t>(&self, tape: &'t Tape, coords: Var<'t>, species: &[u32]) -> Result<Var<'t>, ProbeError>;
}

/// The pooled graph embedding `g`.
impl EmbedFn for GeoRecon {
    fn embed<'t>(&self, tape: &'t Tape, coords: Var<'t>, species: &[u32]) -> Result<Var<'t>, ProbeError> {
        let m = self.bind(tape, &Trainable::Nothing);
        Ok(m.encode(rows_from_flat(coords), species)?.pool())
    }
}

/// Wraps a species-independent function of flat coordinates.
pub struct FnEmbed<F>(pub F);

impl<F> FnEmbed<F>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t> + Sync,
{
    /// Constructor that pins the closure's signature; prefer it over the
    /// tuple form when passing a closure literal.
    pub fn new(f: F) -> Self {
        FnEmbed(f)
    }
}

impl<F> EmbedFn for FnEmbed<F>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t> + Sync,
{
    fn embed<'t>(&self, tape: &'t Tape, coords: Var<'t>, _species: &[u32]) -> Result<Var<'t>, ProbeError> {
        Ok((self.0)(tape, coords))
    }
}

/// Evaluates `embed` at flat coordinates without recording gradients.
pub fn embed_flat<E: EmbedFn + ?Sized>(embed: &E, flat: &[f64], species: &[u32]) -> Result<Vec<f64>, ProbeError> {
    let tape = Tape::new();
    let x = tape.constant(Tensor::row(flat.to_vec()));
    Ok(embed.embed(&tape, x, species)?.value().into_data())
}

/// Records `embed` at `conf` for repeated Jacobian products.
pub fn linearize<E: EmbedFn + ?Sized>(embed: &E, conf: &Conformation) -> Result<Linearization, ProbeError> {
    let species = conf.atomic_numbers();
    Linearization::try_new(&conf.flat_coords(), |tape, x| embed.embed(tape, x, species))
}

pub(crate) fn write_text(path: &std::path::Path, text: &str) -> Result<(), ProbeError> {
    let io = |p: &std::path::Path, source| ProbeError::Io { path: p.display().to_string(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io(path, e))
}
