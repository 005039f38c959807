use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MeshAeError;
use crate::diffcore::nn::{dense, gru_sequence, init_gru};
use crate::diffcore::{glorot, Bound, Checkpoint, DiffError, Graph, ParamSet, SparseMatrix, Tensor, Var};
use crate::geometry::io::{mesh_from_text, mesh_to_text, MeshHeader};
use crate::geometry::{adjacency, AdjacencyGraph, MeshVideo, SurfaceMesh, Vec3};
use crate::imageae::trajectory::{
    code_input, frame_angle, latent_trajectory, read_code, regularizer, trajectory_head, CodeVars, TrajectoryCode,
};

pub const CHECKPOINT_KIND: &str = "mesh-ae";

/// `H' = σ(Â H W + b)` on stacked `[B*n, F]` features. `hidden` selects
/// tanh, otherwise the layer is linear.
pub fn graph_conv(
    g: &mut Graph,
    adj: &Rc<SparseMatrix>,
    h: Var,
    w: Var,
    b: Option<Var>,
    hidden: bool,
) -> Result<Var, DiffError> {
    let ah = g.spmm(adj, h)?;
    let mut out = g.matmul(ah, w)?;
    if let Some(b) = b {
        out = g.add_row_bias(out, b)?;
    }
    if hidden {
        g.tanh(out)
    } else {
        Ok(out)
    }
}

/// Value-level [`graph_conv`] over `features: [n, F]` with `Â` built from
/// `graph`.
pub fn graph_conv_values(
    features: &Tensor,
    graph: &AdjacencyGraph,
    weights: &Tensor,
    hidden: bool,
) -> Result<Tensor, DiffError> {
    match features.dims2() {
        Some((rows, _)) if rows == graph.vertex_count() => {}
        _ => {
            return Err(DiffError::Shape {
                node: "graph_conv".into(),
                detail: format!("features {:?} on a {}-vertex graph", features.shape(), graph.vertex_count()),
            })
        }
    }
    let adj = Rc::new(graph.normalized());
    let mut g = Graph::new();
    let h = g.input(features.clone())?;
    let w = g.input(weights.clone())?;
    let out = graph_conv(&mut g, &adj, h, w, None, hidden)?;
    Ok(g.value(out).clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshAeConfig {
    /// Graph-conv width of the encoder and decoder.
    pub width: usize,
    pub hidden: usize,
    pub latent: usize,
    /// Per-vertex features emitted by the decoder's dense stage.
    pub vertex_features: usize,
    /// Displacements are expressed in units of this many mm.
    pub scale_mm: f64,
    pub kappa: f64,
}

impl Default for MeshAeConfig {
    fn default() -> Self {
        MeshAeConfig { width: 32, hidden: 64, latent: 16, vertex_features: 8, scale_mm: 10.0, kappa: 1e-4 }
    }
}

/// Graph-convolutional mesh autoencoder deforming a fixed template.
#[derive(Debug, Clone)]
pub struct MeshAe {
    pub config: MeshAeConfig,
    pub template: SurfaceMesh,
    pub params: ParamSet,
    adj: Rc<SparseMatrix>,
    /// Template coordinates centred and divided by their RMS radius.
    template_features: Tensor,
    /// Vertex indices of each labeled structure.
    segments: Vec<Vec<usize>>,
    /// Template coordinates relative to their structure's centroid, divided
    /// by that structure's RMS radius.
    local_features: Vec<Vec3>,
}

impl MeshAe {
    pub fn new(config: MeshAeConfig, template: SurfaceMesh, seed: u64) -> Result<Self, MeshAeError> {
        if config.latent < 3 {
            return Err(MeshAeError::Input(format!("latent dimension {} is below 3", config.latent)));
        }
        if !(config.scale_mm > 0.0) {
            return Err(MeshAeError::Input(format!("scale {} must be positive", config.scale_mm)));
        }
        let n = template.vertex_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let w = config.width;
        let segments = template.structures().len();
        p.init_dense("enc.gc0", 9, w, &mut rng);
        p.init_dense("enc.gc1", w, w, &mut rng);
        init_gru(&mut p, "enc.gru", segments * w, config.hidden, &mut rng);
        p.init_dense("enc.head", config.hidden, config.latent + 1, &mut rng);
        p.init_dense("dec.fc0", config.latent, config.hidden, &mut rng);
        p.init_dense("dec.fc1", config.hidden, n * config.vertex_features, &mut rng);
        p.init_dense("dec.gc0", config.vertex_features + 3, w, &mut rng);
        p.insert("dec.gc1.w", glorot(&[w, 3], w, 3, &mut rng));
        Self::assemble(config, template, p)
    }

    fn assemble(config: MeshAeConfig, template: SurfaceMesh, params: ParamSet) -> Result<Self, MeshAeError> {
        let adj = Rc::new(adjacency(&template).normalized());
        let v = template.vertices();
        let c: Vec3 = v.iter().sum::<Vec3>() / v.len() as f64;
        let rms = (v.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / v.len() as f64).sqrt().max(1e-9);
        let template_features =
            Tensor::new(vec![v.len(), 3], v.iter().flat_map(|p| ((p - c) / rms).iter().copied().collect::<Vec<_>>()).collect())?;
        let segments: Vec<Vec<usize>> = template.structures().into_iter().map(|s| template.vertex_indices_of(s)).collect();
        let mut local_features = vec![Vec3::zeros(); v.len()];
        for seg in &segments {
            let c: Vec3 = seg.iter().map(|&i| v[i]).sum::<Vec3>() / seg.len() as f64;
            let rms = (seg.iter().map(|&i| (v[i] - c).norm_squared()).sum::<f64>() / seg.len() as f64).sqrt().max(1e-9);
            for &i in seg {
                local_features[i] = (v[i] - c) / rms;
            }
        }
        Ok(MeshAe { config, template, params, adj, template_features, segments, local_features })
    }

    pub fn vertex_count(&self) -> usize {
        self.template.vertex_count()
    }

    fn check_video(&self, video: &MeshVideo) -> Result<(), MeshAeError> {
        if !video.frame(0).same_topology(&self.template) {
            return Err(MeshAeError::TopologyMismatch);
        }
        if video.len() < 2 {
            return Err(MeshAeError::Input(format!("need at least 2 frames, got {}", video.len())));
        }
        Ok(())
    }

    /// Frame-stacked vertex coordinates `[T*n, 3]` in mm.
    pub fn video_tensor(video: &MeshVideo) -> Tensor {
        let n = video.frame(0).vertex_count();
        let data = video.frames().iter().flat_map(|f| f.vertices().iter().flat_map(|p| [p.x, p.y, p.z])).collect();
        Tensor::new(vec![video.len() * n, 3], data).expect("video tensor shape")
    }

    /// Encoder input, `[T*n, 9]`: displacement `d` from the template (in
    /// `scale_mm` units), structure-local template position `q`, and `d ⊙ q`,
    /// whose structure mean tracks radial expansion.
    fn encoder_features(&self, coords: &Tensor) -> Tensor {
        let n = self.vertex_count();
        let frames = coords.len() / (3 * n);
        let tv = self.template.vertices();
        let mut out = Vec::with_capacity(frames * n * 9);
        for t in 0..frames {
            for i in 0..n {
                let row = &coords.data()[(t * n + i) * 3..(t * n + i) * 3 + 3];
                let q = self.local_features[i];
                let d: [f64; 3] = std::array::from_fn(|k| (row[k] - tv[i][k]) / self.config.scale_mm);
                out.extend_from_slice(&d);
                out.extend(q.iter());
                out.extend((0..3).map(|k| d[k] * q[k]));
            }
        }
        Tensor::new(vec![frames * n, 9], out).expect("encoder feature shape")
    }

    /// `coords: [T*n, 3]` in mm.
    pub fn encode_graph(&self, g: &mut Graph, p: &Bound, coords: &Tensor) -> Result<CodeVars, DiffError> {
        let n = self.vertex_count();
        let x = g.input(self.encoder_features(coords))?;
        let h = gc_layer(g, &self.adj, p, "enc.gc0", x)?;
        let h = gc_layer(g, &self.adj, p, "enc.gc1", h)?;
        let frames = coords.len() / (3 * n);
        let groups: Vec<Vec<usize>> = (0..frames)
            .flat_map(|t| self.segments.iter().map(move |seg| seg.iter().map(|&i| t * n + i).collect()))
            .collect();
        let pooled = g.group_mean_rows(h, &Rc::new(groups))?;
        let pooled = g.reshape(pooled, &[frames, self.segments.len() * self.config.width])?;
        let last = gru_sequence(g, p, "enc.gru", pooled, self.config.hidden)?;
        trajectory_head(g, p, "enc.head", last, self.config.latent)
    }

    /// Vertex coordinates `[T*n, 3]` (mm) at the given base angles.
    pub fn decode_graph(&self, g: &mut Graph, p: &Bound, code: &CodeVars, angles: &[f64]) -> Result<Var, DiffError> {
        let n = self.vertex_count();
        let t = angles.len();
        let z = latent_trajectory(g, code, angles)?;
        let h = dense(g, p, "dec.fc0", z)?;
        let h = g.tanh(h)?;
        let h = dense(g, p, "dec.fc1", h)?;
        let h = g.reshape(h, &[t * n, self.config.vertex_features])?;
        let pos = g.constant(tile_rows(&self.template_features, t))?;
        let h = g.concat(&[h, pos])?;
        let h = gc_layer(g, &self.adj, p, "dec.gc0", h)?;
        let d = graph_conv(g, &self.adj, h, p.get("dec.gc1.w")?, None, false)?;
        let d = g.scale(d, self.config.scale_mm)?;
        let base = Tensor::new(vec![n, 3], self.template.vertices().iter().flat_map(|v| [v.x, v.y, v.z]).collect())?;
        let base = g.constant(tile_rows(&base, t))?;
        g.add(base, d)
    }

    /// Frame-mean of the mean squared vertex distance, plus the trajectory
    /// prior.
    pub fn loss_graph(&self, g: &mut Graph, p: &Bound, coords: &Tensor) -> Result<Var, DiffError> {
        let frames = coords.len() / (3 * self.vertex_count());
        let code = self.encode_graph(g, p, coords)?;
        let angles: Vec<f64> = (0..frames).map(|t| frame_angle(t, frames)).collect();
        let recon = self.decode_graph(g, p, &code, &angles)?;
        mesh_recon_loss(g, recon, coords, &code, self.config.kappa)
    }

    pub fn encode(&self, video: &MeshVideo) -> Result<TrajectoryCode, MeshAeError> {
        self.check_video(video)?;
        let mut g = Graph::new();
        let p = g.bind(&self.params, false)?;
        let c = self.encode_graph(&mut g, &p, &Self::video_tensor(video))?;
        Ok(read_code(&g, &c))
    }

    /// Frames of one cycle sampled at `t = 0..frames` of a period `frames`.
    pub fn decode_video(&self, code: &TrajectoryCode, frames: usize) -> Result<MeshVideo, MeshAeError> {
        if frames < 2 {
            return Err(MeshAeError::Input(format!("need at least 2 output frames, got {frames}")));
        }
        let angles: Vec<f64> = (0..frames).map(|t| frame_angle(t, frames)).collect();
        let coords = self.decode_angles(code, &angles)?;
        let n = self.vertex_count();
        let meshes = (0..frames)
            .map(|t| self.template.with_vertices(coords[t * n..(t + 1) * n].to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MeshVideo::new(meshes)?)
    }

    pub fn decode(&self, code: &TrajectoryCode, t: usize, n: usize) -> Result<SurfaceMesh, MeshAeError> {
        let coords = self.decode_angles(code, &[frame_angle(t, n)])?;
        Ok(self.template.with_vertices(coords)?)
    }

    fn decode_angles(&self, code: &TrajectoryCode, angles: &[f64]) -> Result<Vec<Vec3>, MeshAeError> {
        let mut g = Graph::new();
        let p = g.bind(&self.params, false)?;
        let c = code_input(&mut g, code)?;
        let out = self.decode_graph(&mut g, &p, &c, angles)?;
        Ok(g.value(out).data().chunks_exact(3).map(|v| Vec3::new(v[0], v[1], v[2])).collect())
    }

    pub fn loss(&self, video: &MeshVideo) -> Result<f64, MeshAeError> {
        self.check_video(video)?;
        let mut g = Graph::new();
        let p = g.bind(&self.params, false)?;
        let l = self.loss_graph(&mut g, &p, &Self::video_tensor(video))?;
        Ok(g.value(l).item())
    }

    /// Parameters plus the configuration and the template in mesh text form.
    pub fn checkpoint(&self) -> Checkpoint {
        let (text, header) = mesh_to_text(&self.template);
        Checkpoint::new(CHECKPOINT_KIND, self.params.clone())
            .with_hyper("config", &self.config)
            .with_hyper("template", text)
            .with_hyper("template_header", header)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, MeshAeError> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(MeshAeError::Input(format!("checkpoint holds `{}`, expected `{CHECKPOINT_KIND}`", ck.kind)));
        }
        let config: MeshAeConfig = ck.hyper("config")?;
        let text: String = ck.hyper("template")?;
        let header: MeshHeader = ck.hyper("template_header")?;
        let template = mesh_from_text(&text, &header, "checkpoint template")?;
        let expected = MeshAe::new(config.clone(), template.clone(), 0)?;
        for (name, t) in expected.params.iter() {
            let got = ck.params.get(name)?;
            if got.shape() != t.shape() {
                return Err(MeshAeError::Input(format!("tensor `{name}` has shape {:?}, expected {:?}", got.shape(), t.shape())));
            }
        }
        Self::assemble(config, template, ck.params.clone())
    }
}

fn gc_layer(g: &mut Graph, adj: &Rc<SparseMatrix>, p: &Bound, name: &str, h: Var) -> Result<Var, DiffError> {
    graph_conv(g, adj, h, p.get(&format!("{name}.w"))?, Some(p.get(&format!("{name}.b"))?), true)
}

fn tile_rows(x: &Tensor, times: usize) -> Tensor {
    let mut shape = x.shape().to_vec();
    shape[0] *= times;
    Tensor::new(shape, x.data().repeat(times)).expect("tiled shape")
}

/// `mean_t mean_i ‖M_t,i − M̂_t,i‖² + κ (‖s‖² + (r − 1)²)`.
pub fn mesh_recon_loss(g: &mut Graph, recon: Var, coords: &Tensor, code: &CodeVars, kappa: f64) -> Result<Var, DiffError> {
    let target = g.constant(coords.clone())?;
    let mse = g.mse(recon, target)?;
    // mse averages over coordinates too; three coordinates per vertex
    let data = g.scale(mse, 3.0)?;
    let reg = regularizer(g, code, kappa)?;
    g.add(data, reg)
}
