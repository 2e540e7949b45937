//! Equivariant encoder, pooling and the three heads (denoising, graph-
//! conditioned reconstruction, property readout).
//!
//! Vector features are stored as three `N x d` component matrices, one per
//! Cartesian axis. Every operation on them is either linear with invariant
//! coefficients or a product with an invariant gate, which is what makes
//! the vector outputs rotate with the input.

mod checkpoint;
mod encoder;
mod params;
mod spectral;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC};
pub use encoder::{rows_from_flat, Graph, ModelVars, NodeFeatures};
pub use params::{xavier_uniform, ParamBlock, ParamSet, Trainable};
pub use spectral::{spectral_factors, SpectralFactors};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::Tape;
use crate::geometry::{Conformation, Vec3};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("molecule has no atoms")]
    Empty,
    #[error("atomic number {z} at index {index} exceeds the embedding range (max_z = {max_z})")]
    SpeciesOutOfRange { index: usize, z: u32, max_z: u32 },
    #[error("atoms {i} and {j} coincide")]
    CoincidentAtoms { i: usize, j: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// Neighbor radius in Å.
    pub cutoff: f64,
    pub max_z: u32,
    pub num_rbf: usize,
    /// Summed messages are divided by this constant.
    pub avg_neighbors: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { num_layers: 4, hidden_dim: 64, cutoff: 5.0, max_z: 10, num_rbf: 32, avg_neighbors: 8.0 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.num_layers == 0 {
            return bad("num_layers must be at least 1");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be at least 1");
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return bad("cutoff must be positive");
        }
        if self.num_rbf == 0 {
            return bad("num_rbf must be at least 1");
        }
        if !(self.avg_neighbors > 0.0) {
            return bad("avg_neighbors must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Number of affine layers in the gate network.
    pub depth: usize,
    pub width: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { depth: 3, width: 64 }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.depth == 0 {
            return Err(ModelError::InvalidConfig("decoder depth must be at least 1".into()));
        }
        if self.width == 0 {
            return Err(ModelError::InvalidConfig("decoder width must be at least 1".into()));
        }
        Ok(())
    }
}

/// Block indices of one message-passing layer.
#[derive(Clone, Debug)]
pub(crate) struct LayerLayout {
    pub msg: [Affine; 2],
    pub filter: Affine,
    pub vec_u: usize,
    pub vec_v: usize,
    pub update: [Affine; 2],
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Affine {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub embedding: usize,
    pub layers: Vec<LayerLayout>,
    pub denoise_gate: [Affine; 2],
    pub denoise_vec: usize,
    pub decoder_mlp: Vec<Affine>,
    pub decoder_vec: usize,
    pub readout: [Affine; 2],
}

/// Name prefixes of the model components.
pub mod component {
    pub const ENCODER: &str = "encoder.";
    pub const DENOISE: &str = "denoise.";
    pub const DECODER: &str = "decoder.";
    pub const READOUT: &str = "readout.";
}

/// Encoder plus all heads, with their parameters.
#[derive(Clone, Debug)]
pub struct GeoRecon {
    encoder: EncoderConfig,
    decoder: DecoderConfig,
    params: ParamSet,
    layout: Layout,
}

fn push_affine(params: &mut ParamSet, rng: &mut Rng, name: &str, fan_in: usize, fan_out: usize) -> Affine {
    let w = params.push(format!("{name}.w"), xavier_uniform(rng, fan_in, fan_out));
    let b = params.push(format!("{name}.b"), Tensor::zeros([1, fan_out]));
    Affine { w, b }
}

impl GeoRecon {
    /// Freshly initialized model. Weights are Xavier-uniform, biases zero and
    /// species embeddings `0.1·N(0, 1)`.
    pub fn new(encoder: EncoderConfig, decoder: DecoderConfig, seed: u64) -> Result<Self, ModelError> {
        encoder.validate()?;
        decoder.validate()?;
        let mut rng = Rng::new(seed);
        let mut params = ParamSet::new();
        let d = encoder.hidden_dim;

        let rows = encoder.max_z as usize + 1;
        let emb = Tensor::new([rows, d], (0..rows * d).map(|_| 0.1 * rng.gaussian()).collect());
        let embedding = params.push("encoder.embedding", emb);

        let mut layers = Vec::with_capacity(encoder.num_layers);
        for l in 0..encoder.num_layers {
            let p = format!("encoder.layer{l}");
            let msg = [
                push_affine(&mut params, &mut rng, &format!("{p}.msg0"), d, d),
                push_affine(&mut params, &mut rng, &format!("{p}.msg1"), d, 3 * d),
            ];
            let filter = push_affine(&mut params, &mut rng, &format!("{p}.filter"), encoder.num_rbf, 3 * d);
            let vec_u = params.push(format!("{p}.vec_u"), xavier_uniform(&mut rng, d, d));
            let vec_v = params.push(format!("{p}.vec_v"), xavier_uniform(&mut rng, d, d));
            let update = [
                push_affine(&mut params, &mut rng, &format!("{p}.update0"), 2 * d, d),
                push_affine(&mut params, &mut rng, &format!("{p}.update1"), d, 2 * d),
            ];
            layers.push(LayerLayout { msg, filter, vec_u, vec_v, update });
        }

        let denoise_gate = [
            push_affine(&mut params, &mut rng, "denoise.gate0", d, d),
            push_affine(&mut params, &mut rng, "denoise.gate1", d, d),
        ];
        let denoise_vec = params.push("denoise.vec", xavier_uniform(&mut rng, d, d));

        let mut dims = vec![2 * d];
        dims.extend(std::iter::repeat(decoder.width).take(decoder.depth - 1));
        dims.push(d);
        let decoder_mlp = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| push_affine(&mut params, &mut rng, &format!("decoder.mlp{i}"), w[0], w[1]))
            .collect();
        let decoder_vec = params.push("decoder.vec", xavier_uniform(&mut rng, d, d));

        let readout = [
            push_affine(&mut params, &mut rng, "readout.layer0", d, d),
            push_affine(&mut params, &mut rng, "readout.layer1", d, 1),
        ];

        let layout = Layout { embedding, layers, denoise_gate, denoise_vec, decoder_mlp, decoder_vec, readout };
        Ok(GeoRecon { encoder, decoder, params, layout })
    }

    /// Rebuilds a model around stored parameters. Block names and shapes
    /// must match a fresh model of the same configuration.
    pub fn from_params(encoder: EncoderConfig, decoder: DecoderConfig, params: ParamSet) -> Result<Self, ModelError> {
        let mut model = GeoRecon::new(encoder, decoder, 0)?;
        if params.len() != model.params.len() {
            return Err(ModelError::DimensionMismatch { expected: model.params.len(), found: params.len() });
        }
        for (fresh, stored) in model.params.blocks().iter().zip(params.blocks()) {
            if fresh.name != stored.name || fresh.value.shape() != stored.value.shape() {
                return Err(ModelError::InvalidConfig(format!(
                    "parameter block {} {:?} does not match expected {} {:?}",
                    stored.name,
                    stored.value.shape(),
                    fresh.name,
                    fresh.value.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.encoder
    }

    pub fn decoder_config(&self) -> &DecoderConfig {
        &self.decoder
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.hidden_dim
    }

    /// Re-initializes the property readout (used when finetuning starts).
    pub fn reset_readout(&mut self, seed: u64) {
        let mut rng = Rng::new(seed);
        let d = self.encoder.hidden_dim;
        for (layer, (fan_in, fan_out)) in self.layout.readout.iter().zip([(d, d), (d, 1)]) {
            *self.params.value_mut(layer.w) = xavier_uniform(&mut rng, fan_in, fan_out);
            *self.params.value_mut(layer.b) = Tensor::zeros([1, fan_out]);
        }
    }

    /// Weight matrices of the property readout, in layer order.
    pub fn readout_weights(&self) -> Vec<Tensor> {
        self.layout.readout.iter().map(|a| self.params.block(a.w).value.clone()).collect()
    }

    /// Records the parameters on `tape`.
    pub fn bind<'m, 't>(&'m self, tape: &'t Tape, trainable: &Trainable) -> ModelVars<'m, 't> {
        ModelVars::new(self, tape, self.params.bind(tape, trainable))
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Per-atom features of one conformation.
    pub fn embed(&self, coords: &[Vec3], species: &[u32]) -> Result<NodeEmbedding, ModelError> {
        let tape = Tape::new();
        let m = self.bind(&tape, &Trainable::Nothing);
        let x = tape.constant(coords_tensor(coords));
        let nodes = m.encode(x, species)?;
        Ok(NodeEmbedding { scalars: nodes.scalars.value(), vectors: nodes.vectors.map(|v| v.value()) })
    }

    /// Pooled graph embedding `g` of one conformation.
    pub fn graph_embedding(&self, conf: &Conformation) -> Result<Vec<f64>, ModelError> {
        Ok(self.embed(conf.coords(), conf.atomic_numbers())?.pool())
    }

    /// Denoising-head output for one conformation.
    pub fn predict_noise(&self, coords: &[Vec3], species: &[u32]) -> Result<Vec<Vec3>, ModelError> {
        let tape = Tape::new();
        let m = self.bind(&tape, &Trainable::Nothing);
        let nodes = m.encode(tape.constant(coords_tensor(coords)), species)?;
        Ok(tensor_rows(&m.denoise(&nodes).value()))
    }

    /// Reconstruction-head output: `g` from `clean`, node features from `rec`.
    pub fn predict_reconstruction(&self, clean: &[Vec3], rec: &[Vec3], species: &[u32]) -> Result<Vec<Vec3>, ModelError> {
        let tape = Tape::new();
        let m = self.bind(&tape, &Trainable::Nothing);
        let g = m.encode(tape.constant(coords_tensor(clean)), species)?.pool();
        let nodes = m.encode(tape.constant(coords_tensor(rec)), species)?;
        Ok(tensor_rows(&m.reconstruct(g, &nodes)?.value()))
    }

    /// Property prediction for one conformation.
    pub fn predict_property(&self, conf: &Conformation) -> Result<f64, ModelError> {
        let tape = Tape::new();
        let m = self.bind(&tape, &Trainable::Nothing);
        let g = m.encode(tape.constant(coords_tensor(conf.coords())), conf.atomic_numbers())?.pool();
        Ok(m.readout(g).item())
    }
}

/// Scalar and vector node features as plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbedding {
    /// `N x d` invariant features.
    pub scalars: Tensor,
    /// Per Cartesian axis, an `N x d` matrix of vector-channel components.
    pub vectors: [Tensor; 3],
}

impl NodeEmbedding {
    /// Mean of the scalar rows.
    pub fn pool(&self) -> Vec<f64> {
        let (n, d) = (self.scalars.rows(), self.scalars.cols());
        (0..d)
            .map(|j| {
                let mut col: Vec<f64> = (0..n).map(|i| self.scalars.get(i, j)).collect();
                col.sort_by(f64::total_cmp);
                col.iter().sum::<f64>() / n as f64
            })
            .collect()
    }

    /// The 3-vector carried by `atom` in `channel`.
    pub fn vector(&self, atom: usize, channel: usize) -> Vec3 {
        [0, 1, 2].map(|a| self.vectors[a].get(atom, channel))
    }
}

/// `N x 3` tensor from coordinate rows.
pub fn coords_tensor(coords: &[Vec3]) -> Tensor {
    Tensor::from_rows(coords)
}

/// Coordinate rows from an `N x 3` tensor.
pub fn tensor_rows(t: &Tensor) -> Vec<Vec3> {
    t.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// `⟨w, g⟩ + b`.
pub fn linear_head(g: &[f64], w: &[f64], b: f64) -> Result<f64, ModelError> {
    if g.len() != w.len() {
        return Err(ModelError::DimensionMismatch { expected: w.len(), found: g.len() });
    }
    Ok(crate::tensor::dot(g, w) + b)
}
