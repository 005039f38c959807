use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trajectory::{
    code_input, frame_angle, latent_trajectory, read_code, regularizer, trajectory_head, CodeVars, TrajectoryCode,
};
use super::ImageAeError;
use crate::dataset::{CineSequence, ViewKind};
use crate::diffcore::nn::{dense, gru_sequence, init_gru};
use crate::diffcore::{Bound, Checkpoint, DiffError, Graph, ParamSet, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewSelection {
    Lax,
    LaxSax,
}

impl ViewSelection {
    pub fn views(self) -> Vec<ViewKind> {
        match self {
            ViewSelection::Lax => vec![ViewKind::Lax],
            ViewSelection::LaxSax => ViewKind::ALL.to_vec(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ViewSelection::Lax => "LAX",
            ViewSelection::LaxSax => "LAX+SAX",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageAeConfig {
    /// Square image side; a multiple of 8.
    pub size: usize,
    pub views: ViewSelection,
    pub channels: [usize; 3],
    pub feature: usize,
    pub hidden: usize,
    pub latent: usize,
    pub kappa: f64,
}

impl Default for ImageAeConfig {
    fn default() -> Self {
        ImageAeConfig { size: 64, views: ViewSelection::LaxSax, channels: [8, 16, 32], feature: 64, hidden: 64, latent: 16, kappa: 1e-4 }
    }
}

/// Normalized frames of the selected views, `[frames, views, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageInput {
    pub frames: usize,
    pub views: usize,
    pub size: usize,
    pub data: Vec<f64>,
}

impl ImageInput {
    pub fn from_cine(cine: &CineSequence, cfg: &ImageAeConfig) -> Result<Self, ImageAeError> {
        let views = cfg.views.views();
        if cine.size != cfg.size {
            return Err(ImageAeError::Input(format!("image size {} but the model expects {}", cine.size, cfg.size)));
        }
        if let Some(v) = views.iter().find(|v| cine.view_index(**v).is_none()) {
            return Err(ImageAeError::Input(format!("sequence has no {v} view")));
        }
        if cine.frames < 2 {
            return Err(ImageAeError::Input(format!("need at least 2 frames, got {}", cine.frames)));
        }
        Ok(ImageInput { frames: cine.frames, views: views.len(), size: cine.size, data: cine.normalized_views(&views) })
    }

    /// `[frames, 1, H, W]` of one view.
    fn view(&self, v: usize) -> Tensor {
        let p = self.size * self.size;
        let mut out = Vec::with_capacity(self.frames * p);
        for t in 0..self.frames {
            let start = (t * self.views + v) * p;
            out.extend_from_slice(&self.data[start..start + p]);
        }
        Tensor::new(vec![self.frames, 1, self.size, self.size], out).expect("view tensor shape")
    }
}

/// Per-view conv + recurrent encoders with a shared trajectory head, and a
/// dense + transposed-convolution decoder producing every selected view.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageAe {
    pub config: ImageAeConfig,
    pub params: ParamSet,
}

pub const CHECKPOINT_KIND: &str = "image-ae";

impl ImageAe {
    pub fn new(config: ImageAeConfig, seed: u64) -> Result<Self, ImageAeError> {
        if config.size % 8 != 0 || config.size < 8 {
            return Err(ImageAeError::Input(format!("image size {} is not a positive multiple of 8", config.size)));
        }
        if config.latent < 3 {
            return Err(ImageAeError::Input(format!("latent dimension {} is below 3", config.latent)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let [c1, c2, c3] = config.channels;
        let base = config.size / 8;
        let nv = config.views.views().len();
        for v in 0..nv {
            p.init_conv(&format!("enc.{v}.conv0"), 1, c1, 3, &mut rng);
            p.init_conv(&format!("enc.{v}.conv1"), c1, c2, 3, &mut rng);
            p.init_conv(&format!("enc.{v}.conv2"), c2, c3, 3, &mut rng);
            p.init_dense(&format!("enc.{v}.fc"), c3 * base * base, config.feature, &mut rng);
            init_gru(&mut p, &format!("enc.{v}.gru"), config.feature, config.hidden, &mut rng);
        }
        p.init_dense("enc.head", nv * config.hidden, config.latent + 1, &mut rng);
        p.init_dense("dec.fc", config.latent, c3 * base * base, &mut rng);
        p.init_conv_transpose("dec.up0", c3, c2, 4, &mut rng);
        p.init_conv_transpose("dec.up1", c2, c1, 4, &mut rng);
        p.init_conv_transpose("dec.up2", c1, nv, 4, &mut rng);
        Ok(ImageAe { config, params: p })
    }

    pub fn view_count(&self) -> usize {
        self.config.views.views().len()
    }

    pub fn encode_graph(&self, g: &mut Graph, p: &Bound, x: &ImageInput) -> Result<CodeVars, DiffError> {
        let mut finals = Vec::with_capacity(x.views);
        for v in 0..x.views {
            let mut h = g.input(x.view(v))?;
            for k in 0..3 {
                let w = p.get(&format!("enc.{v}.conv{k}.w"))?;
                let b = p.get(&format!("enc.{v}.conv{k}.b"))?;
                h = g.conv2d(h, w, b, 2, 1)?;
                h = g.tanh(h)?;
            }
            let flat = g.value(h).len() / x.frames;
            let h = g.reshape(h, &[x.frames, flat])?;
            let h = dense(g, p, &format!("enc.{v}.fc"), h)?;
            let h = g.tanh(h)?;
            finals.push(gru_sequence(g, p, &format!("enc.{v}.gru"), h, self.config.hidden)?);
        }
        let fused = if finals.len() == 1 { finals[0] } else { g.concat(&finals)? };
        trajectory_head(g, p, "enc.head", fused, self.config.latent)
    }

    /// Frames `[T, views, H, W]` at the given base angles.
    pub fn decode_graph(&self, g: &mut Graph, p: &Bound, code: &CodeVars, angles: &[f64]) -> Result<Var, DiffError> {
        let z = latent_trajectory(g, code, angles)?;
        let base = self.config.size / 8;
        let h = dense(g, p, "dec.fc", z)?;
        let h = g.tanh(h)?;
        let mut h = g.reshape(h, &[angles.len(), self.config.channels[2], base, base])?;
        for k in 0..3 {
            let w = p.get(&format!("dec.up{k}.w"))?;
            let b = p.get(&format!("dec.up{k}.b"))?;
            h = g.conv_transpose2d(h, w, b, 2, 1, 0)?;
            if k < 2 {
                h = g.tanh(h)?;
            }
        }
        Ok(h)
    }

    /// Frame-mean pixel MSE plus the trajectory prior.
    pub fn loss_graph(&self, g: &mut Graph, p: &Bound, x: &ImageInput) -> Result<Var, DiffError> {
        let code = self.encode_graph(g, p, x)?;
        let angles: Vec<f64> = (0..x.frames).map(|t| frame_angle(t, x.frames)).collect();
        let recon = self.decode_graph(g, p, &code, &angles)?;
        recon_loss(g, recon, x, &code, self.config.kappa)
    }

    pub fn encode(&self, cine: &CineSequence) -> Result<TrajectoryCode, ImageAeError> {
        let x = ImageInput::from_cine(cine, &self.config)?;
        let mut g = Graph::new();
        let p = g.bind(&self.params, false)?;
        let c = self.encode_graph(&mut g, &p, &x)?;
        Ok(read_code(&g, &c))
    }

    /// One frame per selected view, `[views, H, W]` flattened.
    pub fn decode(&self, code: &TrajectoryCode, t: usize, n: usize) -> Result<Vec<f64>, ImageAeError> {
        let mut g = Graph::new();
        let p = g.bind(&self.params, false)?;
        let c = code_input(&mut g, code)?;
        let out = self.decode_graph(&mut g, &p, &c, &[frame_angle(t, n)])?;
        Ok(g.value(out).data().to_vec())
    }

    pub fn loss(&self, cine: &CineSequence) -> Result<f64, ImageAeError> {
        let x = ImageInput::from_cine(cine, &self.config)?;
        let mut g = Graph::new();
        let p = g.bind(&self.params, false)?;
        let l = self.loss_graph(&mut g, &p, &x)?;
        Ok(g.value(l).item())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(CHECKPOINT_KIND, self.params.clone()).with_hyper("config", &self.config)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ImageAeError> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(ImageAeError::Input(format!("checkpoint holds '{}', not an image autoencoder", ck.kind)));
        }
        Ok(ImageAe { config: ck.hyper("config")?, params: ck.params.clone() })
    }
}

/// `mean((recon − target)²) + κ (‖s‖² + (r − 1)²)`.
pub fn recon_loss(g: &mut Graph, recon: Var, x: &ImageInput, code: &CodeVars, kappa: f64) -> Result<Var, DiffError> {
    let target = g.constant(Tensor::new(vec![x.frames, x.views, x.size, x.size], x.data.clone())?)?;
    let mse = g.mse(recon, target)?;
    let reg = regularizer(g, code, kappa)?;
    g.add(mse, reg)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::diffcore::{grad_check_with_floor, NETWORK_FLOOR};
    use rand::Rng;

    pub(crate) fn tiny() -> ImageAeConfig {
        ImageAeConfig { size: 8, views: ViewSelection::LaxSax, channels: [2, 2, 2], feature: 3, hidden: 3, latent: 4, kappa: 0.1 }
    }

    pub(crate) fn random_cine(frames: usize, size: usize, seed: u64) -> CineSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..frames * 4 * size * size).map(|_| rng.gen_range(0.0..1.0)).collect();
        CineSequence::new(frames, ViewKind::ALL.to_vec(), size, 2.0, data)
    }

    #[test]
    fn encode_is_deterministic_with_positive_radius() {
        let ae = ImageAe::new(tiny(), 1).unwrap();
        for seed in 0..5 {
            let cine = random_cine(3, 8, seed);
            let a = ae.encode(&cine).unwrap();
            assert_eq!(a, ae.encode(&cine).unwrap());
            assert!(a.r > 0.0);
            assert_eq!(a.latent_dim(), 4);
        }
    }

    #[test]
    fn decode_shape_and_periodicity() {
        let ae = ImageAe::new(ImageAeConfig { size: 16, ..tiny() }, 2).unwrap();
        let code = TrajectoryCode { r: 1.3, theta0: -0.5, s: vec![0.2, 0.4] };
        let f = ae.decode(&code, 3, 7).unwrap();
        assert_eq!(f.len(), 4 * 16 * 16);
        assert_eq!(f, ae.decode(&code, 3, 7).unwrap());
        assert_eq!(f, ae.decode(&code, 10, 7).unwrap());
    }

    #[test]
    fn lax_only_decodes_one_view() {
        let ae = ImageAe::new(ImageAeConfig { views: ViewSelection::Lax, ..tiny() }, 2).unwrap();
        let code = TrajectoryCode { r: 1.0, theta0: 0.0, s: vec![0.0; 2] };
        assert_eq!(ae.decode(&code, 0, 4).unwrap().len(), 64);
        assert!(ae.loss(&random_cine(3, 8, 0)).unwrap() > 0.0);
    }

    #[test]
    fn recon_loss_of_exact_and_offset_decoders() {
        let cine = random_cine(2, 8, 4);
        let x = ImageInput::from_cine(&cine, &tiny()).unwrap();
        for (offset, expected) in [(0.0, 0.0), (0.3, 0.09)] {
            let mut g = Graph::new();
            let shifted: Vec<f64> = x.data.iter().map(|v| v + offset).collect();
            let recon = g.input(Tensor::new(vec![2, 4, 8, 8], shifted).unwrap()).unwrap();
            let code = code_input(&mut g, &TrajectoryCode { r: 1.0, theta0: 0.0, s: vec![0.0; 2] }).unwrap();
            let l = recon_loss(&mut g, recon, &x, &code, 0.0).unwrap();
            assert!((g.value(l).item() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn input_mismatch_rejected() {
        let ae = ImageAe::new(tiny(), 0).unwrap();
        assert!(matches!(ae.encode(&random_cine(3, 16, 0)), Err(ImageAeError::Input(_))));
        assert!(matches!(ae.encode(&random_cine(1, 8, 0)), Err(ImageAeError::Input(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let ae = ImageAe::new(tiny(), 3).unwrap();
        let mut buf = Vec::new();
        ae.checkpoint().write_to(&mut buf).unwrap();
        let back = ImageAe::from_checkpoint(&Checkpoint::read_from(buf.as_slice()).unwrap()).unwrap();
        assert_eq!(back, ae);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        for seed in 0..3 {
            let ae = ImageAe::new(tiny(), seed).unwrap();
            let x = ImageInput::from_cine(&random_cine(3, 8, seed + 10), &tiny()).unwrap();
            let rep = grad_check_with_floor(&ae.params, |g, p| ae.loss_graph(g, p, &x), 1e-5, NETWORK_FLOOR).unwrap();
            assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        }
    }
}
