//! End-to-end gradient verification for the risk objective.
//!
//! For each seed this builds a small random encoder and input batch, runs
//! the assembled analytic gradient (risk backward chained through
//! normalization and the affine layers), and compares every weight, bias,
//! and input coordinate against a central finite difference of the whole
//! pipeline.
//!
//! The objective is piecewise smooth: it has kinks wherever a pair
//! distance crosses a histogram node and wherever a relu pre-activation
//! crosses zero. A finite-difference probe that straddles such a kink
//! disagrees with the one-sided analytic derivative no matter how correct
//! the code is, so individual seeds are allowed to fail; callers assert on
//! the pass count across many seeds rather than on any single one.

use crate::brm::{brm_backward_impl, brm_risk};
use crate::encoder::{backward, forward, init_params, Activation, EncoderParams, InitScheme};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::pairs::{build_histograms, distance_matrix, enumerate_pairs, EmbeddingBatch};
use crate::rng::Rng;

/// Shape and tolerances of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Seeds are `base_seed..base_seed + num_seeds`.
    pub base_seed: u64,
    pub num_seeds: u64,
    pub batch_size: usize,
    pub num_classes: usize,
    /// Encoder widths from input to embedding dimension.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    /// Histogram resolution of the probed risk.
    pub bins: usize,
    /// Central-difference step.
    pub step: f64,
    /// Relative-error ceiling for a coordinate to count as matching.
    pub tolerance: f64,
    /// Negates part of the analytic gradient so tests can confirm the
    /// checker actually catches wrong gradients.
    pub plant_fault: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            base_seed: 0,
            num_seeds: 100,
            batch_size: 16,
            num_classes: 4,
            layer_sizes: vec![8, 10, 8],
            activation: Activation::Relu,
            bins: 15,
            step: 1e-5,
            tolerance: 1e-4,
            plant_fault: false,
        }
    }
}

/// Outcome for one seed, with the worst relative error split out by
/// which component it came from.
#[derive(Clone, Copy, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub weights_err: f64,
    pub biases_err: f64,
    pub inputs_err: f64,
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub passed: bool,
}

/// Outcome over all seeds.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub results: Vec<SeedResult>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passes(&self) -> usize {
        self.results.iter().filter(|r| r.passed).count()
    }

    pub fn total(&self) -> usize {
        self.results.len()
    }

    pub fn worst(&self) -> f64 {
        self.results
            .iter()
            .map(|r| r.max_rel_err)
            .fold(0.0, f64::max)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Risk of the whole pipeline as a plain function of parameters and
/// inputs; this is what the finite differences probe.
fn pipeline_risk(
    params: &EncoderParams,
    inputs: &Matrix,
    labels: &[usize],
    bins: usize,
) -> Result<f64> {
    let (embeddings, _) = forward(params, inputs)?;
    let batch = EmbeddingBatch::new(embeddings, labels.to_vec())?;
    let pairs = enumerate_pairs(batch.labels())?;
    let dist = distance_matrix(&batch)?;
    let hist = build_histograms(&dist, &pairs, bins)?;
    Ok(brm_risk(&hist))
}

fn check_one_seed(cfg: &GradCheckConfig, seed: u64) -> Result<SeedResult> {
    let mut rng = Rng::new(seed);
    let mut params = init_params(&mut rng, &cfg.layer_sizes, cfg.activation, InitScheme::He)?;
    let input_dim = cfg.layer_sizes[0];
    let mut inputs = Matrix::zeros(cfg.batch_size, input_dim);
    for v in inputs.data_mut() {
        *v = rng.normal();
    }
    let labels: Vec<usize> = (0..cfg.batch_size).map(|i| i % cfg.num_classes).collect();

    // analytic gradient through the full stack
    let (embeddings, cache) = forward(&params, &inputs)?;
    let batch = EmbeddingBatch::new(embeddings, labels.clone())?;
    let pairs = enumerate_pairs(batch.labels())?;
    let risk = brm_backward_impl(&batch, &pairs, cfg.bins, cfg.plant_fault)?;
    let (grads, grad_inputs) = backward(&params, &cache, &risk.grad_embeddings)?;

    let h = cfg.step;
    let mut weights_err = 0.0f64;
    let mut biases_err = 0.0f64;
    let mut inputs_err = 0.0f64;
    let mut coords = 0usize;
    let num_layers = params.weights().len();
    for layer in 0..num_layers {
        let (rows, cols) = {
            let w = &params.weights()[layer];
            (w.rows(), w.cols())
        };
        for r in 0..rows {
            for c in 0..cols {
                let original = params.weights()[layer].get(r, c);
                params.weights_mut()[layer].set(r, c, original + h);
                let up = pipeline_risk(&params, &inputs, &labels, cfg.bins)?;
                params.weights_mut()[layer].set(r, c, original - h);
                let down = pipeline_risk(&params, &inputs, &labels, cfg.bins)?;
                params.weights_mut()[layer].set(r, c, original);
                let fd = (up - down) / (2.0 * h);
                weights_err = weights_err.max(rel_err(grads.weights[layer].get(r, c), fd));
                coords += 1;
            }
        }
        let width = params.biases()[layer].len();
        for b in 0..width {
            let original = params.biases()[layer][b];
            params.biases_mut()[layer][b] = original + h;
            let up = pipeline_risk(&params, &inputs, &labels, cfg.bins)?;
            params.biases_mut()[layer][b] = original - h;
            let down = pipeline_risk(&params, &inputs, &labels, cfg.bins)?;
            params.biases_mut()[layer][b] = original;
            let fd = (up - down) / (2.0 * h);
            biases_err = biases_err.max(rel_err(grads.biases[layer][b], fd));
            coords += 1;
        }
    }
    for r in 0..inputs.rows() {
        for c in 0..inputs.cols() {
            let original = inputs.get(r, c);
            inputs.set(r, c, original + h);
            let up = pipeline_risk(&params, &inputs, &labels, cfg.bins)?;
            inputs.set(r, c, original - h);
            let down = pipeline_risk(&params, &inputs, &labels, cfg.bins)?;
            inputs.set(r, c, original);
            let fd = (up - down) / (2.0 * h);
            inputs_err = inputs_err.max(rel_err(grad_inputs.get(r, c), fd));
            coords += 1;
        }
    }

    let max_rel_err = weights_err.max(biases_err).max(inputs_err);
    Ok(SeedResult {
        seed,
        weights_err,
        biases_err,
        inputs_err,
        max_rel_err,
        coords_checked: coords,
        passed: max_rel_err <= cfg.tolerance,
    })
}

/// Runs the check over all configured seeds.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.layer_sizes.is_empty() || cfg.batch_size < 2 || cfg.bins < 2 {
        return Err(crate::error::Error::InvalidConfig(format!(
            "gradcheck needs at least 1 layer size, 2 samples, and 2 bins; got {:?}, {}, {}",
            cfg.layer_sizes, cfg.batch_size, cfg.bins
        )));
    }
    let mut results = Vec::with_capacity(cfg.num_seeds as usize);
    for s in 0..cfg.num_seeds {
        results.push(check_one_seed(cfg, cfg.base_seed.wrapping_add(s))?);
    }
    Ok(GradCheckReport {
        results,
        tolerance: cfg.tolerance,
    })
}
