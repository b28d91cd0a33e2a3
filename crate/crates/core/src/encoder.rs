//! Feedforward embedding encoder with a hand-derived backward pass.
//!
//! The encoder is a stack of affine layers (row-vector convention:
//! z = a W + b with W of shape in x out), an elementwise activation on
//! every layer except the last, and a final per-row L2 normalization that
//! puts embeddings on the unit sphere. Gradients flow back through the
//! normalization VJP and then standard backprop; both parameter and input
//! gradients are produced so the whole pipeline can be checked by finite
//! differences.
//!
//! Also here: He/Xavier initialization, a bias-corrected Adam optimizer
//! with a step-decay learning-rate schedule, and a little-endian binary
//! checkpoint format (magic `BRME`).

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{l2_normalize, l2_normalize_vjp, Matrix};
use crate::rng::Rng;

/// Elementwise nonlinearity applied to hidden layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at a pre-activation value; relu uses subgradient 0 at 0.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => write!(f, "relu"),
            Activation::Tanh => write!(f, "tanh"),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidConfig(format!(
                "unknown activation {other:?} (expected relu or tanh)"
            ))),
        }
    }
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// Normal with std sqrt(2 / fan_in); the default for relu.
    He,
    /// Normal with std sqrt(2 / (fan_in + fan_out)).
    Xavier,
}

/// Parameters of the encoder.
///
/// `sizes` lists layer widths from input to output; a single entry means
/// zero layers (the encoder only normalizes). The output width must be at
/// least 2 so the unit sphere has room for more than two points.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::InvalidConfig("layer sizes must be non-empty".into()));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "layer sizes must be positive, got {sizes:?}"
        )));
    }
    let out = *sizes.last().unwrap();
    if out < 2 {
        return Err(Error::InvalidConfig(format!(
            "output dimension must be at least 2, got {out}"
        )));
    }
    Ok(())
}

impl EncoderParams {
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// Gradients mirroring [`EncoderParams`] shapes.
#[derive(Clone, Debug)]
pub struct EncoderGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl EncoderGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        EncoderGrads {
            weights: params
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// Activations retained by [`forward`] for the matching [`backward`] call.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    sizes: Vec<usize>,
    activation: Activation,
    inputs: Matrix,
    /// Pre-activation z_l per layer.
    pre_activations: Vec<Matrix>,
    /// Post-activation outputs of hidden layers (inputs to layers 1..).
    post_activations: Vec<Matrix>,
    /// Final affine output before row normalization.
    pre_norm: Matrix,
}

/// Draws weights with the given scheme and zeroes biases.
///
/// The draw order is fixed (layer by layer, row-major), so a given seed
/// always produces identical parameters.
pub fn init_params(
    rng: &mut Rng,
    sizes: &[usize],
    activation: Activation,
    scheme: InitScheme,
) -> Result<EncoderParams> {
    validate_sizes(sizes)?;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..sizes.len() - 1 {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let std = match scheme {
            InitScheme::He => (2.0 / fan_in as f64).sqrt(),
            InitScheme::Xavier => (2.0 / (fan_in + fan_out) as f64).sqrt(),
        };
        let mut w = Matrix::zeros(fan_in, fan_out);
        for v in w.data_mut() {
            *v = rng.normal() * std;
        }
        weights.push(w);
        biases.push(vec![0.0; fan_out]);
    }
    Ok(EncoderParams {
        sizes: sizes.to_vec(),
        weights,
        biases,
        activation,
    })
}

/// Runs the encoder over a batch of input rows.
///
/// Returns unit-norm embedding rows and the cache needed by [`backward`].
pub fn forward(params: &EncoderParams, inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "forward inputs",
            expected: params.input_dim(),
            got: inputs.cols(),
        });
    }
    let layers = params.num_layers();
    let mut pre_activations = Vec::with_capacity(layers);
    let mut post_activations = Vec::with_capacity(layers.saturating_sub(1));

    let mut current = inputs.clone();
    for l in 0..layers {
        let mut z = current.matmul(&params.weights[l])?;
        for i in 0..z.rows() {
            let row = z.row_mut(i);
            for (v, b) in row.iter_mut().zip(&params.biases[l]) {
                *v += *b;
            }
        }
        pre_activations.push(z.clone());
        if l + 1 < layers {
            for v in z.data_mut() {
                *v = params.activation.apply(*v);
            }
            post_activations.push(z.clone());
        }
        current = z;
    }

    let pre_norm = current;
    let mut embeddings = Matrix::zeros(pre_norm.rows(), pre_norm.cols());
    for i in 0..pre_norm.rows() {
        let unit = l2_normalize(pre_norm.row(i))?;
        embeddings.row_mut(i).copy_from_slice(&unit);
    }
    let cache = ForwardCache {
        sizes: params.sizes.clone(),
        activation: params.activation,
        inputs: inputs.clone(),
        pre_activations,
        post_activations,
        pre_norm,
    };
    Ok((embeddings, cache))
}

/// Backpropagates `grad_embeddings` through the encoder.
///
/// Applies the normalization VJP per row, then walks the affine layers in
/// reverse. Returns parameter gradients and the gradient over the inputs.
pub fn backward(
    params: &EncoderParams,
    cache: &ForwardCache,
    grad_embeddings: &Matrix,
) -> Result<(EncoderGrads, Matrix)> {
    if cache.sizes != params.sizes || cache.activation != params.activation {
        return Err(Error::CacheMismatch);
    }
    if grad_embeddings.rows() != cache.inputs.rows()
        || grad_embeddings.cols() != params.output_dim()
    {
        return Err(Error::ShapeMismatch {
            context: "backward grad_embeddings",
        });
    }

    let n = cache.inputs.rows();
    let mut grad = Matrix::zeros(n, params.output_dim());
    for i in 0..n {
        let g = l2_normalize_vjp(cache.pre_norm.row(i), grad_embeddings.row(i))?;
        grad.row_mut(i).copy_from_slice(&g);
    }

    let layers = params.num_layers();
    let mut grads = EncoderGrads {
        weights: Vec::with_capacity(layers),
        biases: Vec::with_capacity(layers),
    };
    for l in (0..layers).rev() {
        let layer_input = if l == 0 {
            &cache.inputs
        } else {
            &cache.post_activations[l - 1]
        };
        grads.weights.push(layer_input.transpose_matmul(&grad)?);
        let mut gb = vec![0.0; params.sizes[l + 1]];
        for i in 0..n {
            for (acc, g) in gb.iter_mut().zip(grad.row(i)) {
                *acc += *g;
            }
        }
        grads.biases.push(gb);

        grad = grad.matmul_transpose(&params.weights[l])?;
        if l > 0 {
            let z = &cache.pre_activations[l - 1];
            for (g, zv) in grad.data_mut().iter_mut().zip(z.data()) {
                *g *= params.activation.derivative(*zv);
            }
        }
    }
    grads.weights.reverse();
    grads.biases.reverse();
    Ok((grads, grad))
}

/// Adam optimizer state plus the step-decay learning-rate schedule.
///
/// The effective rate is base_lr * gamma^floor(epoch / decay_every); the
/// training loop advances `epoch` between epochs via [`AdamState::set_epoch`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m_weights: Vec<Matrix>,
    v_weights: Vec<Matrix>,
    m_biases: Vec<Vec<f64>>,
    v_biases: Vec<Vec<f64>>,
    step: u64,
    epoch: u32,
    pub base_lr: f64,
    pub gamma: f64,
    pub decay_every: u32,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &EncoderParams, base_lr: f64, gamma: f64, decay_every: u32) -> Result<Self> {
        if base_lr <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {base_lr}"
            )));
        }
        if gamma <= 0.0 || gamma > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "decay factor must lie in (0, 1], got {gamma}"
            )));
        }
        if decay_every == 0 {
            return Err(Error::InvalidConfig(
                "decay interval must be at least 1 epoch".into(),
            ));
        }
        Ok(AdamState {
            m_weights: params
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            v_weights: params
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            m_biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            step: 0,
            epoch: 0,
            base_lr,
            gamma,
            decay_every,
        })
    }

    pub fn set_epoch(&mut self, epoch: u32) {
        self.epoch = epoch;
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Scheduled learning rate for the current epoch.
    pub fn lr(&self) -> f64 {
        self.base_lr * self.gamma.powi((self.epoch / self.decay_every) as i32)
    }
}

fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, t: u64) {
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// One bias-corrected Adam step over every parameter tensor.
pub fn adam_step(
    params: &mut EncoderParams,
    grads: &EncoderGrads,
    state: &mut AdamState,
) -> Result<()> {
    let shapes_match = grads.weights.len() == params.weights.len()
        && grads.biases.len() == params.biases.len()
        && grads
            .weights
            .iter()
            .zip(&params.weights)
            .all(|(g, w)| g.rows() == w.rows() && g.cols() == w.cols())
        && grads
            .biases
            .iter()
            .zip(&params.biases)
            .all(|(g, b)| g.len() == b.len());
    if !shapes_match {
        return Err(Error::ShapeMismatch {
            context: "adam_step grads",
        });
    }
    state.step += 1;
    let (lr, t) = (state.lr(), state.step);
    for l in 0..params.weights.len() {
        adam_update(
            params.weights[l].data_mut(),
            grads.weights[l].data(),
            state.m_weights[l].data_mut(),
            state.v_weights[l].data_mut(),
            lr,
            t,
        );
        adam_update(
            &mut params.biases[l],
            &grads.biases[l],
            &mut state.m_biases[l],
            &mut state.v_biases[l],
            lr,
            t,
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoint format: little-endian binary, magic "BRME".
//
//   magic            4 bytes  "BRME"
//   version          u32      currently 1
//   activation       u32      0 = relu, 1 = tanh
//   num sizes        u32
//   sizes            u32 each
//   weights, biases  f64 blobs per layer, row-major, layer order
//   adam step        u64
//   adam epoch       u32
//   base_lr          f64
//   gamma            f64
//   decay_every      u32
//   adam moments     f64 blobs (m_w, v_w, m_b, v_b) per layer
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"BRME";
const CHECKPOINT_VERSION: u32 = 1;

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        ByteWriter { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64_slice(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + len > self.buf.len() {
            return Err(Error::TruncatedFile {
                path: self.path.to_string(),
                detail: format!("ran out of bytes reading {what}"),
            });
        }
        let slice = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, len: usize, what: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(self.f64(what)?);
        }
        Ok(out)
    }
}

/// Serializes parameters and optimizer state to `path`.
pub fn save_checkpoint(path: &Path, params: &EncoderParams, state: &AdamState) -> Result<()> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(params.activation.code());
    w.u32(params.sizes.len() as u32);
    for &s in &params.sizes {
        w.u32(s as u32);
    }
    for l in 0..params.num_layers() {
        w.f64_slice(params.weights[l].data());
        w.f64_slice(&params.biases[l]);
    }
    w.u64(state.step);
    w.u32(state.epoch);
    w.f64(state.base_lr);
    w.f64(state.gamma);
    w.u32(state.decay_every);
    for l in 0..params.num_layers() {
        w.f64_slice(state.m_weights[l].data());
        w.f64_slice(state.v_weights[l].data());
        w.f64_slice(&state.m_biases[l]);
        w.f64_slice(&state.v_biases[l]);
    }
    std::fs::write(path, &w.buf)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(EncoderParams, AdamState)> {
    let bytes = std::fs::read(path)?;
    let path_str = path.display().to_string();
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path_str,
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
        });
    }
    let mut r = ByteReader {
        buf: &bytes,
        pos: 4,
        path: &path_str,
    };
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse {
            path: path_str,
            detail: format!("unsupported checkpoint version {version}"),
        });
    }
    let act_code = r.u32("activation")?;
    let activation = Activation::from_code(act_code).ok_or_else(|| Error::Parse {
        path: path_str.clone(),
        detail: format!("unknown activation code {act_code}"),
    })?;
    let n_sizes = r.u32("size count")? as usize;
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        sizes.push(r.u32("layer size")? as usize);
    }
    validate_sizes(&sizes).map_err(|e| Error::Parse {
        path: path_str.clone(),
        detail: format!("invalid layer sizes: {e}"),
    })?;

    let layers = sizes.len() - 1;
    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    for l in 0..layers {
        let (rows, cols) = (sizes[l], sizes[l + 1]);
        let data = r.f64_vec(rows * cols, "weights")?;
        weights.push(Matrix::from_vec(rows, cols, data).expect("sizes agree"));
        biases.push(r.f64_vec(cols, "biases")?);
    }
    let params = EncoderParams {
        sizes: sizes.clone(),
        weights,
        biases,
        activation,
    };
    if !params.is_finite() {
        return Err(Error::Parse {
            path: path_str,
            detail: "non-finite parameter values".into(),
        });
    }

    let step = r.u64("adam step")?;
    let epoch = r.u32("adam epoch")?;
    let base_lr = r.f64("base_lr")?;
    let gamma = r.f64("gamma")?;
    let decay_every = r.u32("decay_every")?;
    let mut state =
        AdamState::new(&params, base_lr, gamma, decay_every).map_err(|e| Error::Parse {
            path: path_str.clone(),
            detail: format!("invalid optimizer config: {e}"),
        })?;
    state.step = step;
    state.epoch = epoch;
    for l in 0..layers {
        let (rows, cols) = (sizes[l], sizes[l + 1]);
        state.m_weights[l] =
            Matrix::from_vec(rows, cols, r.f64_vec(rows * cols, "adam m")?).expect("sizes agree");
        state.v_weights[l] =
            Matrix::from_vec(rows, cols, r.f64_vec(rows * cols, "adam v")?).expect("sizes agree");
        state.m_biases[l] = r.f64_vec(cols, "adam m bias")?;
        state.v_biases[l] = r.f64_vec(cols, "adam v bias")?;
    }
    let trailing = bytes.len() - r.pos;
    if trailing != 0 {
        return Err(Error::Parse {
            path: path_str,
            detail: format!("{trailing} trailing bytes"),
        });
    }
    Ok((params, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;

    fn identity_params(dim: usize) -> EncoderParams {
        EncoderParams {
            sizes: vec![dim, dim],
            weights: vec![Matrix::identity(dim)],
            biases: vec![vec![0.0; dim]],
            activation: Activation::Relu,
        }
    }

    fn normalize_only(dim: usize) -> EncoderParams {
        EncoderParams {
            sizes: vec![dim],
            weights: vec![],
            biases: vec![],
            activation: Activation::Relu,
        }
    }

    #[test]
    fn zero_depth_passes_unit_rows_through() {
        let params = normalize_only(3);
        let inputs = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.6, 0.8]]).unwrap();
        let (out, _) = forward(&params, &inputs).unwrap();
        assert_eq!(out.data(), inputs.data());
    }

    #[test]
    fn identity_layer_only_normalizes() {
        let params = identity_params(2);
        let inputs = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let (out, _) = forward(&params, &inputs).unwrap();
        assert!((out.get(0, 0) - 0.6).abs() <= 1e-15);
        assert!((out.get(0, 1) - 0.8).abs() <= 1e-15);
    }

    #[test]
    fn outputs_are_unit_rows() {
        let mut rng = Rng::new(307);
        let params = init_params(&mut rng, &[5, 7, 3], Activation::Relu, InitScheme::He).unwrap();
        let inputs = Matrix::from_vec(6, 5, (0..30).map(|_| rng.normal()).collect()).unwrap();
        let (out, _) = forward(&params, &inputs).unwrap();
        for i in 0..out.rows() {
            assert!((norm(out.row(i)) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = Rng::new(311);
        let params = init_params(&mut rng, &[4, 6, 3], Activation::Tanh, InitScheme::He).unwrap();
        let inputs = Matrix::from_vec(5, 4, (0..20).map(|_| rng.normal()).collect()).unwrap();
        let (a, _) = forward(&params, &inputs).unwrap();
        let (b, _) = forward(&params, &inputs).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn zero_vector_input_is_degenerate() {
        let params = normalize_only(2);
        let inputs = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            forward(&params, &inputs),
            Err(Error::DegenerateNorm { .. })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = Rng::new(313);
        let params = init_params(&mut rng, &[4, 5, 3], Activation::Relu, InitScheme::He).unwrap();
        let inputs = Matrix::from_vec(4, 4, (0..16).map(|_| rng.normal()).collect()).unwrap();
        let (_, cache) = forward(&params, &inputs).unwrap();
        let upstream = Matrix::zeros(4, 3);
        let (grads, input_grad) = backward(&params, &cache, &upstream).unwrap();
        assert!(grads
            .weights
            .iter()
            .all(|w| w.data().iter().all(|&g| g == 0.0)));
        assert!(grads.biases.iter().all(|b| b.iter().all(|&g| g == 0.0)));
        assert!(input_grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_layer_matches_hand_jacobian() {
        // W = I, x = (3, 4), loss = first embedding coordinate.
        // Normalization VJP: ((1,0) - 0.6 (0.6,0.8)) / 5 = (0.128, -0.096).
        let params = identity_params(2);
        let inputs = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let (_, cache) = forward(&params, &inputs).unwrap();
        let upstream = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let (grads, input_grad) = backward(&params, &cache, &upstream).unwrap();

        let expected_w = [[0.384, -0.288], [0.512, -0.384]];
        for (i, row) in expected_w.iter().enumerate() {
            for (j, want) in row.iter().enumerate() {
                assert!((grads.weights[0].get(i, j) - want).abs() <= 1e-12);
            }
        }
        assert!((grads.biases[0][0] - 0.128).abs() <= 1e-12);
        assert!((grads.biases[0][1] + 0.096).abs() <= 1e-12);
        assert!((input_grad.get(0, 0) - 0.128).abs() <= 1e-12);
        assert!((input_grad.get(0, 1) + 0.096).abs() <= 1e-12);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = Rng::new(317);
        let p1 = init_params(&mut rng, &[4, 5, 3], Activation::Relu, InitScheme::He).unwrap();
        let p2 = init_params(&mut rng, &[4, 6, 3], Activation::Relu, InitScheme::He).unwrap();
        let inputs = Matrix::from_vec(4, 4, (0..16).map(|_| rng.normal()).collect()).unwrap();
        let (_, cache) = forward(&p1, &inputs).unwrap();
        let upstream = Matrix::zeros(4, 3);
        assert!(matches!(
            backward(&p2, &cache, &upstream),
            Err(Error::CacheMismatch)
        ));
    }

    /// Smooth scalar head for finite-difference checks: sum of all
    /// embedding coordinates weighted by fixed coefficients.
    fn probe_loss(params: &EncoderParams, inputs: &Matrix) -> f64 {
        let (out, _) = forward(params, inputs).unwrap();
        out.data()
            .iter()
            .enumerate()
            .map(|(k, &v)| v * ((k % 7) as f64 - 2.5))
            .sum()
    }

    fn probe_upstream(rows: usize, cols: usize) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for (k, v) in m.data_mut().iter_mut().enumerate() {
            *v = (k % 7) as f64 - 2.5;
        }
        m
    }

    #[test]
    fn gradients_match_finite_differences_on_smooth_net() {
        // tanh avoids relu kinks so every coordinate can be checked
        let mut rng = Rng::new(331);
        let mut params =
            init_params(&mut rng, &[4, 6, 3], Activation::Tanh, InitScheme::Xavier).unwrap();
        let inputs = Matrix::from_vec(5, 4, (0..20).map(|_| rng.normal()).collect()).unwrap();
        let (out, cache) = forward(&params, &inputs).unwrap();
        let upstream = probe_upstream(out.rows(), out.cols());
        let (grads, input_grad) = backward(&params, &cache, &upstream).unwrap();

        let h = 1e-6;
        let tol = 1e-5;
        for l in 0..params.num_layers() {
            for idx in 0..params.weights()[l].data().len() {
                let orig = params.weights()[l].data()[idx];
                params.weights_mut()[l].data_mut()[idx] = orig + h;
                let fp = probe_loss(&params, &inputs);
                params.weights_mut()[l].data_mut()[idx] = orig - h;
                let fm = probe_loss(&params, &inputs);
                params.weights_mut()[l].data_mut()[idx] = orig;
                let numeric = (fp - fm) / (2.0 * h);
                let analytic = grads.weights[l].data()[idx];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    ((analytic - numeric) / denom).abs() <= tol,
                    "weight {l}/{idx}: {analytic} vs {numeric}"
                );
            }
            for idx in 0..params.biases()[l].len() {
                let orig = params.biases()[l][idx];
                params.biases_mut()[l][idx] = orig + h;
                let fp = probe_loss(&params, &inputs);
                params.biases_mut()[l][idx] = orig - h;
                let fm = probe_loss(&params, &inputs);
                params.biases_mut()[l][idx] = orig;
                let numeric = (fp - fm) / (2.0 * h);
                let analytic = grads.biases[l][idx];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    ((analytic - numeric) / denom).abs() <= tol,
                    "bias {l}/{idx}: {analytic} vs {numeric}"
                );
            }
        }
        let mut perturbed = inputs.clone();
        for idx in 0..inputs.data().len() {
            let orig = inputs.data()[idx];
            perturbed.data_mut()[idx] = orig + h;
            let fp = probe_loss(&params, &perturbed);
            perturbed.data_mut()[idx] = orig - h;
            let fm = probe_loss(&params, &perturbed);
            perturbed.data_mut()[idx] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = input_grad.data()[idx];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                ((analytic - numeric) / denom).abs() <= tol,
                "input {idx}: {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut params = identity_params(2);
        let mut state = AdamState::new(&params, 1e-3, 0.5, 50).unwrap();
        let mut grads = EncoderGrads::zeros_like(&params);
        grads.weights[0].set(0, 0, 2.5);
        grads.weights[0].set(1, 1, -0.7);
        let before = params.weights[0].clone();
        adam_step(&mut params, &grads, &mut state).unwrap();
        let d00 = params.weights[0].get(0, 0) - before.get(0, 0);
        let d11 = params.weights[0].get(1, 1) - before.get(1, 1);
        assert!((d00 + 1e-3).abs() <= 1e-3 * 1e-6);
        assert!((d11 - 1e-3).abs() <= 1e-3 * 1e-6);
        // untouched coordinates keep zero moments and stay put
        assert_eq!(params.weights[0].get(0, 1), before.get(0, 1));
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let mut params = identity_params(3);
        let mut state = AdamState::new(&params, 1e-3, 0.5, 50).unwrap();
        let grads = EncoderGrads::zeros_like(&params);
        let before = params.clone();
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn adam_descends_a_parabola() {
        // f(w) = w^2 on the (0,0) weight entry, lr = 0.1
        let mut params = identity_params(2);
        let mut state = AdamState::new(&params, 0.1, 0.5, 50).unwrap();
        let mut last = params.weights[0].get(0, 0).abs();
        for _ in 0..10 {
            let w = params.weights[0].get(0, 0);
            let mut grads = EncoderGrads::zeros_like(&params);
            grads.weights[0].set(0, 0, 2.0 * w);
            adam_step(&mut params, &grads, &mut state).unwrap();
            let now = params.weights[0].get(0, 0).abs();
            assert!(now < last, "|w| went {last} -> {now}");
            last = now;
        }
    }

    #[test]
    fn adam_rejects_mismatched_grads() {
        let mut rng = Rng::new(337);
        let mut params =
            init_params(&mut rng, &[4, 5, 3], Activation::Relu, InitScheme::He).unwrap();
        let other = init_params(&mut rng, &[4, 6, 3], Activation::Relu, InitScheme::He).unwrap();
        let mut state = AdamState::new(&params, 1e-3, 0.5, 50).unwrap();
        let grads = EncoderGrads::zeros_like(&other);
        assert!(matches!(
            adam_step(&mut params, &grads, &mut state),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn learning_rate_schedule_is_exact() {
        let params = identity_params(2);
        let mut state = AdamState::new(&params, 1e-3, 0.5, 50).unwrap();
        for (epoch, expect) in [(0, 1e-3), (49, 1e-3), (50, 5e-4), (99, 5e-4), (100, 2.5e-4)] {
            state.set_epoch(epoch);
            assert_eq!(state.lr(), expect);
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(
            &mut Rng::new(41),
            &[4, 5, 3],
            Activation::Relu,
            InitScheme::He,
        )
        .unwrap();
        let b = init_params(
            &mut Rng::new(41),
            &[4, 5, 3],
            Activation::Relu,
            InitScheme::He,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn he_init_hits_target_variance() {
        // pool draws from many re-inits of a [4, 4] layer
        let mut draws = Vec::new();
        for seed in 0..700u64 {
            let p = init_params(
                &mut Rng::new(seed),
                &[4, 4],
                Activation::Relu,
                InitScheme::He,
            )
            .unwrap();
            draws.extend_from_slice(p.weights()[0].data());
        }
        assert!(draws.len() >= 10_000);
        let mean: f64 = draws.iter().sum::<f64>() / draws.len() as f64;
        let var: f64 =
            draws.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / draws.len() as f64;
        let target = 2.0 / 4.0;
        assert!(var > target / 3.0 && var < target * 3.0, "variance {var}");
    }

    #[test]
    fn empty_hidden_list_is_one_affine_layer() {
        let p = init_params(&mut Rng::new(43), &[8, 4], Activation::Relu, InitScheme::He).unwrap();
        assert_eq!(p.num_layers(), 1);
        assert!(p.biases()[0].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn bad_sizes_are_rejected() {
        let mut rng = Rng::new(47);
        assert!(init_params(&mut rng, &[], Activation::Relu, InitScheme::He).is_err());
        assert!(init_params(&mut rng, &[4, 0, 3], Activation::Relu, InitScheme::He).is_err());
        assert!(init_params(&mut rng, &[4, 1], Activation::Relu, InitScheme::He).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut rng = Rng::new(353);
        let mut params =
            init_params(&mut rng, &[4, 6, 3], Activation::Tanh, InitScheme::Xavier).unwrap();
        let mut state = AdamState::new(&params, 1e-3, 0.5, 50).unwrap();
        // push some non-trivial optimizer state
        let inputs = Matrix::from_vec(4, 4, (0..16).map(|_| rng.normal()).collect()).unwrap();
        let (out, cache) = forward(&params, &inputs).unwrap();
        let upstream = probe_upstream(out.rows(), out.cols());
        let (grads, _) = backward(&params, &cache, &upstream).unwrap();
        state.set_epoch(57);
        adam_step(&mut params, &grads, &mut state).unwrap();

        save_checkpoint(&path, &params, &state).unwrap();
        let (loaded_params, loaded_state) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_params, params);
        assert_eq!(loaded_state, state);

        // saving the loaded state again reproduces the file bit for bit
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&path2, &loaded_params, &loaded_state).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn checkpoint_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = identity_params(2);
        let state = AdamState::new(&params, 1e-3, 0.5, 50).unwrap();
        save_checkpoint(&path, &params, &state).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad = dir.path().join("bad.ckpt");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&bad), Err(Error::BadMagic { .. })));

        let full = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &full[..full.len() - 5]).unwrap();
        assert!(matches!(
            load_checkpoint(&cut),
            Err(Error::TruncatedFile { .. })
        ));
    }
}
