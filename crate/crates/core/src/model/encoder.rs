//! Forward passes recorded on a tape.

use std::f64::consts::PI;

use super::{Affine, GeoRecon, ModelError};
use crate::ad::{concat, Tape, Var};
use crate::tensor::Tensor;

/// Directed neighbor pairs `(receiver, sender)` within the cutoff, with the
/// constant selection matrices used to gather and scatter along them.
#[derive(Clone, Debug)]
pub struct Graph {
    edges: Vec<(usize, usize)>,
    num_atoms: usize,
}

impl Graph {
    /// All ordered pairs `i ≠ j` with `‖r_j − r_i‖ < cutoff`.
    pub fn build(coords: &Tensor, cutoff: f64) -> Result<Self, ModelError> {
        let n = coords.rows();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d2: f64 = (0..3).map(|a| (coords.get(j, a) - coords.get(i, a)).powi(2)).sum();
                if d2 == 0.0 {
                    return Err(ModelError::CoincidentAtoms { i: i.min(j), j: i.max(j) });
                }
                if d2.sqrt() < cutoff {
                    edges.push((i, j));
                }
            }
        }
        Ok(Graph { edges, num_atoms: n })
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    fn selection(&self, pick: impl Fn(&(usize, usize)) -> usize) -> Tensor {
        let (e, n) = (self.edges.len(), self.num_atoms);
        let mut t = Tensor::zeros([e, n]);
        for (k, edge) in self.edges.iter().enumerate() {
            t.set(k, pick(edge), 1.0);
        }
        t
    }

    /// `E x N`, one-hot at each edge's sender.
    fn sender(&self) -> Tensor {
        self.selection(|e| e.1)
    }

    /// `E x N`, one-hot at each edge's receiver.
    fn receiver(&self) -> Tensor {
        self.selection(|e| e.0)
    }
}

/// Node features on a tape.
#[derive(Clone, Copy, Debug)]
pub struct NodeFeatures<'t> {
    /// `N x d` invariant features.
    pub scalars: Var<'t>,
    /// Per Cartesian axis, `N x d` vector-channel components.
    pub vectors: [Var<'t>; 3],
}

impl<'t> NodeFeatures<'t> {
    /// Mean pool of the scalar rows, `1 x d`.
    pub fn pool(&self) -> Var<'t> {
        self.scalars.mean_rows()
    }
}

/// Reshapes a flat `1 x 3N` coordinate row into `N x 3`.
pub fn rows_from_flat(x: Var<'_>) -> Var<'_> {
    let len = x.numel();
    assert_eq!(len % 3, 0, "flat coordinates must have length 3N");
    let rows: Vec<Var<'_>> = (0..len / 3).map(|i| x.slice_cols(3 * i, 3 * i + 3)).collect();
    concat(&rows, 0)
}

/// A model's parameters recorded on one tape.
pub struct ModelVars<'m, 't> {
    model: &'m GeoRecon,
    tape: &'t Tape,
    vars: Vec<Var<'t>>,
}

impl<'m, 't> ModelVars<'m, 't> {
    /// Wraps externally recorded parameters, one variable per block in block
    /// order, e.g. the variables a gradient checker perturbs.
    pub fn new(model: &'m GeoRecon, tape: &'t Tape, vars: Vec<Var<'t>>) -> Self {
        assert_eq!(vars.len(), model.params().len(), "one variable per parameter block");
        ModelVars { model, tape, vars }
    }

    /// Parameter variables in block order.
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn affine(&self, x: Var<'t>, a: Affine) -> Var<'t> {
        let n = x.shape()[0];
        x.matmul(self.vars[a.w]) + self.vars[a.b].broadcast_rows(n)
    }

    fn mlp2(&self, x: Var<'t>, layers: &[Affine; 2]) -> Var<'t> {
        self.affine(self.affine(x, layers[0]).silu(), layers[1])
    }

    /// Contracts vector channels with per-channel gates into one 3-vector
    /// per atom: `ε̂_c = ((V_c W) ∘ gates) · 1`.
    fn gated_vectors(&self, vectors: &[Var<'t>; 3], w: usize, gates: Var<'t>) -> Var<'t> {
        let d = self.model.hidden_dim();
        let ones = self.tape.ones([d, 1]);
        let comps: Vec<Var<'t>> = vectors.iter().map(|v| (v.matmul(self.vars[w]) * gates).matmul(ones)).collect();
        concat(&comps, 1)
    }

    /// Runs the message-passing encoder on `N x 3` coordinates.
    pub fn encode(&self, coords: Var<'t>, species: &[u32]) -> Result<NodeFeatures<'t>, ModelError> {
        let cfg = self.model.encoder_config();
        let layout = self.model.layout();
        let tape = self.tape;
        let shape = coords.shape();
        let n = species.len();
        if n == 0 {
            return Err(ModelError::Empty);
        }
        if shape != [n, 3] {
            return Err(ModelError::DimensionMismatch { expected: 3 * n, found: coords.numel() });
        }
        let d = cfg.hidden_dim;
        let vocab = cfg.max_z as usize + 1;
        let mut onehot = Tensor::zeros([n, vocab]);
        for (i, &z) in species.iter().enumerate() {
            if z == 0 || z > cfg.max_z {
                return Err(ModelError::SpeciesOutOfRange { index: i, z, max_z: cfg.max_z });
            }
            onehot.set(i, z as usize, 1.0);
        }
        let mut h = tape.constant(onehot).matmul(self.vars[layout.embedding]);
        let mut v = [tape.zeros([n, d]), tape.zeros([n, d]), tape.zeros([n, d])];

        let graph = Graph::build(&coords.value(), cfg.cutoff)?;
        let num_edges = graph.edges().len();
        let edge_terms = if num_edges > 0 {
            let sender_t = graph.sender();
            let receiver_t = graph.receiver();
            let aggregate = tape.constant(receiver_t.transpose().scale(1.0 / cfg.avg_neighbors));
            let send = tape.constant(sender_t.clone());
            let diff = tape.constant(sender_t.sub(&receiver_t));

            // r_ij = x_j − x_i for receiver i, sender j.
            let r = diff.matmul(coords);
            let dist = r.norm_rows();
            let unit = r * dist.powf(-1.0).broadcast_cols(3);
            let units: [Var<'t>; 3] = [0, 1, 2].map(|c| unit.slice_cols(c, c + 1).broadcast_cols(d));

            let k = cfg.num_rbf;
            let spacing = cfg.cutoff / k as f64;
            let gamma = 1.0 / (2.0 * spacing * spacing);
            let centers = Tensor::new(
                [num_edges, k],
                (0..num_edges).flat_map(|_| (1..=k).map(|m| spacing * m as f64)).collect(),
            );
            let offset = dist.broadcast_cols(k) - tape.constant(centers);
            let rbf = (offset * offset).scale(-gamma).exp();
            let envelope = ((dist * (PI / cfg.cutoff)).cos() + 1.0) * 0.5;
            Some((aggregate, send, units, rbf, envelope.broadcast_cols(3 * d)))
        } else {
            None
        };

        for layer in &layout.layers {
            if let Some((aggregate, send, units, rbf, envelope)) = &edge_terms {
                let filter = self.affine(*rbf, layer.filter) * *envelope;
                let x = send.matmul(self.mlp2(h, &layer.msg)) * filter;
                let (x_s, x_vv, x_vs) = (x.slice_cols(0, d), x.slice_cols(d, 2 * d), x.slice_cols(2 * d, 3 * d));
                let dh = aggregate.matmul(x_s);
                let dv: Vec<Var<'t>> =
                    (0..3).map(|c| aggregate.matmul(x_vv * send.matmul(v[c]) + x_vs * units[c])).collect();
                h = h + dh;
                for c in 0..3 {
                    v[c] = v[c] + dv[c];
                }
            }
            let uv: Vec<Var<'t>> = v.iter().map(|vc| vc.matmul(self.vars[layer.vec_u])).collect();
            let vv: Vec<Var<'t>> = v.iter().map(|vc| vc.matmul(self.vars[layer.vec_v])).collect();
            let s = uv[0] * vv[0] + uv[1] * vv[1] + uv[2] * vv[2];
            let a = self.mlp2(concat(&[h, s], 1), &layer.update);
            let (a_ss, a_vv) = (a.slice_cols(0, d), a.slice_cols(d, 2 * d));
            h = h + a_ss;
            for c in 0..3 {
                v[c] = v[c] + a_vv * uv[c];
            }
        }
        Ok(NodeFeatures { scalars: h, vectors: v })
    }

    /// Per-atom noise prediction, `N x 3`.
    pub fn denoise(&self, nodes: &NodeFeatures<'t>) -> Var<'t> {
        let layout = self.model.layout();
        let gates = self.mlp2(nodes.scalars, &layout.denoise_gate);
        self.gated_vectors(&nodes.vectors, layout.denoise_vec, gates)
    }

    /// Reconstruction head: every node sees `concat(g, h_i)` where `g` is the
    /// `1 x d` conditioning embedding and `h_i` the node's own scalars.
    pub fn reconstruct(&self, g: Var<'t>, nodes: &NodeFeatures<'t>) -> Result<Var<'t>, ModelError> {
        let layout = self.model.layout();
        let d = self.model.hidden_dim();
        let gshape = g.shape();
        if gshape != [1, d] {
            return Err(ModelError::DimensionMismatch { expected: d, found: g.numel() });
        }
        let n = nodes.scalars.shape()[0];
        let mut z = concat(&[g.broadcast_rows(n), nodes.scalars], 1);
        let last = layout.decoder_mlp.len() - 1;
        for (i, a) in layout.decoder_mlp.iter().enumerate() {
            z = self.affine(z, *a);
            if i < last {
                z = z.silu();
            }
        }
        Ok(self.gated_vectors(&nodes.vectors, layout.decoder_vec, z))
    }

    /// Scalar property prediction from a `1 x d` graph embedding.
    pub fn readout(&self, g: Var<'t>) -> Var<'t> {
        self.mlp2(g, &self.model.layout().readout)
    }
}
