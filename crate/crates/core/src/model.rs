//! A small trainable network: a shared rectifier MLP over precomputed clip
//! features feeding a 7-way expression head and an 18-way AU head.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{NUM_AUS, NUM_EXPRESSIONS};
use crate::error::{Error, Result};

pub const DEFAULT_FEATURE_DIM: usize = 1024;
pub const DEFAULT_HIDDEN: [usize; 1] = [128];
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"AUDFCKPT";

/// Affine map `x W^T + b` with `W` stored as (out × in).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..=bound));
        Self {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(self.bias.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    pub backbone: Vec<Dense>,
    pub expression_head: Dense,
    pub au_head: Dense,
    pub seed: u64,
}

/// Gradients share the parameter layout.
pub type ModelGrads = ModelParams;

pub fn init_params(seed: u64, feature_dim: usize, hidden: &[usize]) -> Result<ModelParams> {
    if feature_dim == 0 || hidden.contains(&0) {
        return Err(Error::InvalidArgument("layer widths must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut backbone = Vec::with_capacity(hidden.len());
    let mut width = feature_dim;
    for &h in hidden {
        backbone.push(Dense::init(&mut rng, width, h));
        width = h;
    }
    let expression_head = Dense::init(&mut rng, width, NUM_EXPRESSIONS);
    let au_head = Dense::init(&mut rng, width, NUM_AUS);
    Ok(ModelParams {
        feature_dim,
        hidden: hidden.to_vec(),
        backbone,
        expression_head,
        au_head,
        seed,
    })
}

impl ModelParams {
    /// Width of the shared embedding fed to both heads.
    pub fn embedding_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.feature_dim)
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.backbone.iter().chain([&self.expression_head, &self.au_head])
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.backbone
            .iter_mut()
            .chain([&mut self.expression_head, &mut self.au_head])
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(Dense::len).sum()
    }

    pub fn zeros_like(&self) -> ModelGrads {
        ModelParams {
            feature_dim: self.feature_dim,
            hidden: self.hidden.clone(),
            backbone: self.backbone.iter().map(Dense::zeros_like).collect(),
            expression_head: self.expression_head.zeros_like(),
            au_head: self.au_head.zeros_like(),
            seed: self.seed,
        }
    }

    /// All parameters, layer by layer (weights row-major, then biases).
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers().flat_map(Dense::values).copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        for (slot, &v) in self.layers_mut().flat_map(Dense::values_mut).zip(flat) {
            *slot = v;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers().flat_map(Dense::values).all(|v| v.is_finite())
    }

    fn check_layout(&self) -> Result<()> {
        let mut width = self.feature_dim;
        for (layer, &h) in self.backbone.iter().zip(&self.hidden) {
            if layer.inputs() != width || layer.outputs() != h || layer.bias.len() != h {
                return Err(Error::Shape("backbone layer shapes are inconsistent".into()));
            }
            width = h;
        }
        if self.backbone.len() != self.hidden.len()
            || self.expression_head.weight.dim() != (NUM_EXPRESSIONS, width)
            || self.au_head.weight.dim() != (NUM_AUS, width)
            || self.expression_head.bias.len() != NUM_EXPRESSIONS
            || self.au_head.bias.len() != NUM_AUS
        {
            return Err(Error::Shape("head shapes are inconsistent".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub expression_logits: Array2<f64>,
    pub au_logits: Array2<f64>,
    /// Inputs to each layer of the backbone, then the shared embedding.
    activations: Vec<Array2<f64>>,
}

impl ForwardPass {
    pub fn embeddings(&self) -> &Array2<f64> {
        self.activations.last().expect("input is always cached")
    }

    pub fn batch(&self) -> usize {
        self.expression_logits.nrows()
    }
}

pub fn forward(params: &ModelParams, features: ArrayView2<f64>) -> Result<ForwardPass> {
    if features.ncols() != params.feature_dim {
        return Err(Error::Shape(format!(
            "features are {} wide, model expects {}",
            features.ncols(),
            params.feature_dim
        )));
    }
    let mut activations = Vec::with_capacity(params.backbone.len() + 1);
    activations.push(features.to_owned());
    for layer in &params.backbone {
        let mut z = layer.apply(activations.last().expect("nonempty").view());
        z.mapv_inplace(|v| v.max(0.0));
        activations.push(z);
    }
    let h = activations.last().expect("nonempty").view();
    Ok(ForwardPass {
        expression_logits: params.expression_head.apply(h),
        au_logits: params.au_head.apply(h),
        activations,
    })
}

fn accumulate_dense(layer: &Dense, grad: &mut Dense, input: ArrayView2<f64>, upstream: ArrayView2<f64>) -> Array2<f64> {
    grad.weight = upstream.t().dot(&input);
    grad.bias = upstream.sum_axis(Axis(0));
    upstream.dot(&layer.weight)
}

/// Gradients of the loss with respect to every parameter, given the loss
/// gradients on both heads' logits. Both heads feed the shared pathway.
pub fn backward(
    params: &ModelParams,
    pass: &ForwardPass,
    d_expression: ArrayView2<f64>,
    d_au: ArrayView2<f64>,
) -> Result<ModelGrads> {
    let n = pass.batch();
    if d_expression.dim() != (n, NUM_EXPRESSIONS) || d_au.dim() != (n, NUM_AUS) {
        return Err(Error::Shape(format!(
            "head gradients {:?} and {:?} for batch {n}",
            d_expression.dim(),
            d_au.dim()
        )));
    }
    let mut grads = params.zeros_like();
    let h = pass.embeddings().view();
    let mut upstream = accumulate_dense(&params.expression_head, &mut grads.expression_head, h, d_expression);
    upstream += &accumulate_dense(&params.au_head, &mut grads.au_head, h, d_au);

    for (i, layer) in params.backbone.iter().enumerate().rev() {
        // Rectifier: pass the gradient only where the unit was active.
        let output = &pass.activations[i + 1];
        upstream.zip_mut_with(output, |g, &a| {
            if a <= 0.0 {
                *g = 0.0
            }
        });
        upstream = accumulate_dense(
            layer,
            &mut grads.backbone[i],
            pass.activations[i].view(),
            upstream.view(),
        );
    }
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, learning_rate: f64, weight_decay: f64) -> Self {
        let n = params.num_params();
        Self {
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            learning_rate,
            weight_decay,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected adaptive-moment step with decoupled weight decay.
pub fn optimizer_step(params: &mut ModelParams, grads: &ModelGrads, state: &mut OptimizerState) -> Result<()> {
    let n = params.num_params();
    if grads.num_params() != n || state.first_moment.len() != n || state.second_moment.len() != n {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    if let Some((i, g)) = grads
        .layers()
        .flat_map(Dense::values)
        .enumerate()
        .find(|(_, g)| !g.is_finite())
    {
        return Err(Error::NonFinite(format!("gradient entry {i} is {g}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let wd = state.weight_decay;
    let eps = state.epsilon;
    let moments = state.first_moment.iter_mut().zip(state.second_moment.iter_mut());
    let pairs = params
        .layers_mut()
        .flat_map(Dense::values_mut)
        .zip(grads.layers().flat_map(Dense::values));
    for ((p, &g), (m, v)) in pairs.zip(moments) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    feature_dim: usize,
    hidden: Vec<usize>,
    seed: u64,
    param_count: usize,
    step: u64,
    beta1: f64,
    beta2: f64,
    learning_rate: f64,
    weight_decay: f64,
    epsilon: f64,
}

/// Binary checkpoint: magic, version, JSON metadata, little-endian f64
/// parameters and optimizer moments, then a SHA-256 of everything before it.
pub fn checkpoint_to_bytes(params: &ModelParams, state: &OptimizerState) -> Vec<u8> {
    let meta = CheckpointMeta {
        feature_dim: params.feature_dim,
        hidden: params.hidden.clone(),
        seed: params.seed,
        param_count: params.num_params(),
        step: state.step,
        beta1: state.beta1,
        beta2: state.beta2,
        learning_rate: state.learning_rate,
        weight_decay: state.weight_decay,
        epsilon: state.epsilon,
    };
    let meta = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(16 + meta.len() + 24 * params.num_params() + 32);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    let values = params
        .to_flat()
        .into_iter()
        .chain(state.first_moment.iter().copied())
        .chain(state.second_moment.iter().copied());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(ModelParams, OptimizerState)> {
    let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
    if bytes.len() < 16 + 32 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let meta_len = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
    let meta_end = 16usize
        .checked_add(meta_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("metadata overruns file"))?;
    let meta: CheckpointMeta = serde_json::from_slice(&body[16..meta_end]).map_err(|_| corrupt("bad metadata"))?;
    let floats: Vec<f64> = body[meta_end..]
        .chunks(8)
        .map(|c| {
            c.try_into()
                .map(f64::from_le_bytes)
                .map_err(|_| corrupt("ragged payload"))
        })
        .collect::<Result<_>>()?;
    let n = meta.param_count;
    if floats.len() != 3 * n {
        return Err(corrupt("payload length does not match parameter count"));
    }
    let mut params = init_params(meta.seed, meta.feature_dim, &meta.hidden)?;
    if params.num_params() != n {
        return Err(corrupt("parameter count does not match architecture"));
    }
    params.set_flat(&floats[..n])?;
    let state = OptimizerState {
        first_moment: floats[n..2 * n].to_vec(),
        second_moment: floats[2 * n..].to_vec(),
        step: meta.step,
        beta1: meta.beta1,
        beta2: meta.beta2,
        learning_rate: meta.learning_rate,
        weight_decay: meta.weight_decay,
        epsilon: meta.epsilon,
    };
    params.check_layout()?;
    Ok((params, state))
}

pub fn save_checkpoint(params: &ModelParams, state: &OptimizerState, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(params, state)).map_err(|e| Error::file(path, e))
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<(ModelParams, OptimizerState)> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn seeded_init_is_reproducible() {
        let a = init_params(7, 16, &[8]).unwrap();
        let b = init_params(7, 16, &[8]).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        assert_ne!(a.to_flat(), init_params(8, 16, &[8]).unwrap().to_flat());
        let bound = (6.0f64 / 24.0).sqrt();
        assert!(a.backbone[0].weight.iter().all(|w| w.abs() <= bound));
        assert!(a.layers().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn default_shapes() {
        let p = init_params(0, DEFAULT_FEATURE_DIM, &DEFAULT_HIDDEN).unwrap();
        assert_eq!(p.expression_head.weight.dim(), (7, 128));
        assert_eq!(p.au_head.weight.dim(), (18, 128));
        let flat = init_params(0, 12, &[]).unwrap();
        assert_eq!(flat.expression_head.weight.dim(), (7, 12));
        assert_eq!(flat.embedding_dim(), 12);
    }

    #[test]
    fn zero_model_is_uniform() {
        let mut p = init_params(1, 5, &[3]).unwrap();
        let zeros = vec![0.0; p.num_params()];
        p.set_flat(&zeros).unwrap();
        let x = Array2::from_elem((2, 5), 0.3);
        let out = forward(&p, x.view()).unwrap();
        assert!(out.expression_logits.iter().all(|&v| v == 0.0));
        assert!(out.au_logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_independence() {
        let p = init_params(3, 6, &[4]).unwrap();
        let sample = Array2::from_shape_fn((1, 6), |(_, j)| j as f64 * 0.37 - 1.0);
        let batch = Array2::from_shape_fn((32, 6), |(_, j)| sample[[0, j]]);
        let one = forward(&p, sample.view()).unwrap();
        let many = forward(&p, batch.view()).unwrap();
        for row in many.expression_logits.rows() {
            assert_eq!(row, one.expression_logits.row(0));
        }
        assert!(forward(&p, Array2::zeros((1, 5)).view()).is_err());
    }

    #[test]
    fn adam_fixed_point_and_first_step() {
        let mut p = init_params(4, 3, &[2]).unwrap();
        let before = p.clone();
        let mut state = OptimizerState::new(&p, 1e-3, 0.0);
        optimizer_step(&mut p, &before.zeros_like(), &mut state).unwrap();
        assert_eq!(p, before);

        // First step from zero moments: m̂ = g and v̂ = g², so the update is
        // lr · g / (|g| + eps).
        let mut grads = before.zeros_like();
        grads.au_head.weight[[0, 0]] = 0.25;
        grads.au_head.weight[[0, 1]] = -4.0;
        let mut p = before.clone();
        let mut state = OptimizerState::new(&p, 1e-3, 0.0);
        optimizer_step(&mut p, &grads, &mut state).unwrap();
        let d0 = before.au_head.weight[[0, 0]] - p.au_head.weight[[0, 0]];
        let d1 = before.au_head.weight[[0, 1]] - p.au_head.weight[[0, 1]];
        assert!((d0 - 1e-3 * 0.25 / (0.25 + 1e-8)).abs() < 1e-15);
        assert!((d1 + 1e-3 * 4.0 / (4.0 + 1e-8)).abs() < 1e-15);

        grads.expression_head.bias[0] = f64::NAN;
        assert!(matches!(
            optimizer_step(&mut p, &grads, &mut state),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let p = init_params(9, 10, &[6, 4]).unwrap();
        let mut state = OptimizerState::new(&p, 1e-3, 0.05);
        state.first_moment[3] = 0.125;
        state.step = 11;
        let bytes = checkpoint_to_bytes(&p, &state);
        let (p2, s2) = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(p2, p);
        assert_eq!(s2, state);

        let mut tail = bytes.clone();
        let last = tail.len() - 40;
        tail[last] ^= 0xff;
        assert!(matches!(checkpoint_from_bytes(&tail), Err(Error::CorruptCheckpoint(_))));
        assert!(matches!(
            checkpoint_from_bytes(&bytes[..bytes.len() - 5]),
            Err(Error::CorruptCheckpoint(_))
        ));

        let mut version = bytes.clone();
        version[8] = 2;
        assert!(matches!(
            checkpoint_from_bytes(&version),
            Err(Error::Version { found: 2, .. })
        ));
    }
}
