//! Fully connected network with ReLU hidden layers, trained with
//! mini-batch Adam on an MSE loss plus an optional L1 weight penalty.
//!
//! Everything is implemented directly on flat row-major weight buffers:
//! the network is small enough that a scalar implementation trains in
//! seconds and keeps the arithmetic easy to audit against the
//! finite-difference oracle in the tests.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::datagen::{NormStats, RegressionDataset, TargetKind};
use crate::error::{Error, Result};
use crate::rng::{stream, StreamRole};

/// Weights and biases of the network plus the normalization statistics
/// of the dataset it was trained on. `weights[l]` is row-major with
/// shape (layer_sizes[l+1], layer_sizes[l]).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParameters {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub norm: NormStats,
    pub target_kind: TargetKind,
}

impl MlpParameters {
    /// Zero-initialized network of the given shape.
    pub fn zeros(layer_sizes: &[usize], norm: NormStats, target_kind: TargetKind) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            weights.push(vec![0.0; w[1] * w[0]]);
            biases.push(vec![0.0; w[1]]);
        }
        MlpParameters {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            norm,
            target_kind,
        }
    }

    /// Seeded uniform initialization scaled by 1/sqrt(fan_in) per layer.
    pub fn init(
        layer_sizes: &[usize],
        seed: u64,
        norm: NormStats,
        target_kind: TargetKind,
    ) -> Self {
        let mut rng = stream(seed, 0, StreamRole::NetworkInit, 0);
        let mut params = Self::zeros(layer_sizes, norm, target_kind);
        for l in 0..params.weights.len() {
            let limit = 1.0 / (layer_sizes[l] as f64).sqrt();
            for w in params.weights[l].iter_mut() {
                *w = rng.gen_range(-limit..limit);
            }
            for b in params.biases[l].iter_mut() {
                *b = rng.gen_range(-limit..limit);
            }
        }
        params
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn layer_count(&self) -> usize {
        self.weights.len()
    }
}

/// Forward pass on an already standardized feature vector. Hidden layers
/// apply ReLU; the output layer is affine.
pub fn forward(params: &MlpParameters, feature: &[f64]) -> Result<Vec<f64>> {
    if feature.len() != params.input_dim() {
        return Err(Error::ShapeMismatch {
            context: "network input",
            expected: params.input_dim(),
            actual: feature.len(),
        });
    }
    let mut activation = feature.to_vec();
    for l in 0..params.layer_count() {
        activation = layer_forward(params, l, &activation);
    }
    Ok(activation)
}

fn layer_forward(params: &MlpParameters, layer: usize, input: &[f64]) -> Vec<f64> {
    let (rows, cols) = (params.layer_sizes[layer + 1], params.layer_sizes[layer]);
    let w = &params.weights[layer];
    let b = &params.biases[layer];
    let last = layer + 1 == params.layer_sizes.len() - 1;
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (wi, xi) in row.iter().zip(input) {
            acc += wi * xi;
        }
        out.push(if last { acc } else { acc.max(0.0) });
    }
    out
}

/// Gradient buffers shaped like the parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(params: &MlpParameters) -> Self {
        Gradients {
            weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// Total loss (mean squared error over the batch plus `lambda` times the
/// L1 norm of the weights) and its gradients by reverse accumulation.
///
/// The MSE averages over both samples and output components. Biases are
/// not penalized, and the L1 subgradient at exactly zero is taken as 0.
pub fn loss_and_gradients(
    params: &MlpParameters,
    features: &[&[f64]],
    targets: &[&[f64]],
    lambda: f64,
) -> Result<(f64, Gradients)> {
    assert_eq!(features.len(), targets.len());
    assert!(!features.is_empty(), "empty batch");
    let layers = params.layer_count();
    let batch = features.len() as f64;
    let denom = batch * params.output_dim() as f64;

    let mut grads = Gradients::zeros_like(params);
    let mut mse_sum = 0.0;

    // activations[0] is the input; activations[l+1] the output of layer l.
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
    for (x, y) in features.iter().zip(targets) {
        if x.len() != params.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected: params.input_dim(),
                actual: x.len(),
            });
        }
        activations.clear();
        activations.push(x.to_vec());
        for l in 0..layers {
            let next = layer_forward(params, l, activations.last().unwrap());
            activations.push(next);
        }
        let out = activations.last().unwrap();
        let mut delta: Vec<f64> = out
            .iter()
            .zip(*y)
            .map(|(o, t)| {
                let e = o - t;
                mse_sum += e * e;
                2.0 * e / denom
            })
            .collect();

        for l in (0..layers).rev() {
            let input = &activations[l];
            let (rows, cols) = (params.layer_sizes[l + 1], params.layer_sizes[l]);
            let gw = &mut grads.weights[l];
            for r in 0..rows {
                let d = delta[r];
                if d != 0.0 {
                    let row = &mut gw[r * cols..(r + 1) * cols];
                    for (g, xi) in row.iter_mut().zip(input) {
                        *g += d * xi;
                    }
                }
                grads.biases[l][r] += d;
            }
            if l > 0 {
                // Propagate through W^T and the ReLU gate of layer l-1.
                let w = &params.weights[l];
                let mut prev = vec![0.0; cols];
                for r in 0..rows {
                    let d = delta[r];
                    if d != 0.0 {
                        let row = &w[r * cols..(r + 1) * cols];
                        for (p, wi) in prev.iter_mut().zip(row) {
                            *p += d * wi;
                        }
                    }
                }
                for (p, a) in prev.iter_mut().zip(&activations[l]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    let mut l1 = 0.0;
    if lambda != 0.0 {
        for (w_layer, g_layer) in params.weights.iter().zip(&mut grads.weights) {
            for (w, g) in w_layer.iter().zip(g_layer.iter_mut()) {
                l1 += w.abs();
                *g += lambda * w.signum() * if *w == 0.0 { 0.0 } else { 1.0 };
            }
        }
    }

    let total = mse_sum / denom + lambda * l1;
    if !total.is_finite() {
        return Err(Error::TrainingDiverged { epoch: 0 });
    }
    Ok((total, grads))
}

/// First and second moment accumulators for Adam, with the step counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m_weights: Vec<Vec<f64>>,
    pub v_weights: Vec<Vec<f64>>,
    pub m_biases: Vec<Vec<f64>>,
    pub v_biases: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &MlpParameters) -> Self {
        AdamState {
            m_weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            step: 0,
        }
    }
}

/// Optimizer and training-loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub layer_sizes: Vec<usize>,
    /// L1 penalty coefficient; 0 trains a dense network.
    pub lambda: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            layer_sizes: vec![13, 20, 20, 20, 20, 8],
            lambda: 0.0,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 100,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut MlpParameters,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let t = state.step as f64;
    let m_corr = 1.0 - cfg.beta1.powf(t);
    let v_corr = 1.0 - cfg.beta2.powf(t);

    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / m_corr;
            let v_hat = v[i] / v_corr;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    };
    for l in 0..params.weights.len() {
        update(
            &mut params.weights[l],
            &grads.weights[l],
            &mut state.m_weights[l],
            &mut state.v_weights[l],
        );
        update(
            &mut params.biases[l],
            &grads.biases[l],
            &mut state.m_biases[l],
            &mut state.v_biases[l],
        );
    }
}

/// Per-epoch loss record: mean total batch loss over the epoch and MSE
/// on the held-out validation split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub train_total: f64,
    pub val_mse: f64,
}

/// Trains a network on the dataset.
///
/// Features and targets are standardized with the dataset statistics.
/// The last 10% of a seeded shuffle is held out for loss monitoring
/// only; the remaining pairs are reshuffled every epoch and consumed in
/// `batch_size` chunks (the trailing short batch included).
pub fn train(
    dataset: &RegressionDataset,
    cfg: &TrainConfig,
) -> Result<(MlpParameters, Vec<EpochLoss>)> {
    assert!(!dataset.features.is_empty(), "empty dataset");
    let norm = dataset.norm.clone();
    let features: Vec<Vec<f64>> = dataset
        .features
        .iter()
        .map(|f| norm.normalize_feature(f).to_vec())
        .collect();
    let targets: Vec<Vec<f64>> = dataset
        .targets
        .iter()
        .map(|t| norm.normalize_target(t).to_vec())
        .collect();

    let mut params = MlpParameters::init(&cfg.layer_sizes, cfg.seed, norm, dataset.target_kind);
    let mut adam = AdamState::new(&params);

    let mut shuffle_rng = stream(cfg.seed, 0, StreamRole::BatchShuffle, 0);
    let mut indices: Vec<usize> = (0..features.len()).collect();
    indices.shuffle(&mut shuffle_rng);
    let n_val = (features.len() / 10).max(1).min(features.len() - 1);
    let (train_idx, val_idx) = indices.split_at(features.len() - n_val);
    let mut train_idx = train_idx.to_vec();

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let batch_x: Vec<&[f64]> = chunk.iter().map(|&i| features[i].as_slice()).collect();
            let batch_y: Vec<&[f64]> = chunk.iter().map(|&i| targets[i].as_slice()).collect();
            let (loss, grads) = loss_and_gradients(&params, &batch_x, &batch_y, cfg.lambda)
                .map_err(|e| match e {
                    Error::TrainingDiverged { .. } => Error::TrainingDiverged { epoch },
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            adam_step(&mut params, &grads, &mut adam, cfg);
            loss_sum += loss;
            batches += 1;
        }

        let mut val_se = 0.0;
        for &i in val_idx {
            let out = forward(&params, &features[i])?;
            for (o, t) in out.iter().zip(&targets[i]) {
                val_se += (o - t) * (o - t);
            }
        }
        let val_mse = val_se / (val_idx.len() as f64 * params.output_dim() as f64);
        if !val_mse.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(EpochLoss {
            train_total: loss_sum / batches as f64,
            val_mse,
        });
    }
    Ok((params, history))
}

/// Zeroes every weight with magnitude strictly below the threshold.
/// Biases are untouched. Returns the fraction of weights pruned.
pub fn magnitude_prune(params: &mut MlpParameters, threshold: f64) -> f64 {
    let mut total = 0usize;
    let mut pruned = 0usize;
    for layer in params.weights.iter_mut() {
        for w in layer.iter_mut() {
            total += 1;
            if w.abs() < threshold {
                *w = 0.0;
                pruned += 1;
            }
        }
    }
    pruned as f64 / total as f64
}

/// Exact nonzero count and absolute sum over the weights.
pub fn sparsity_metrics(params: &MlpParameters) -> (usize, f64) {
    let mut l0 = 0usize;
    let mut l1 = 0.0;
    for layer in &params.weights {
        for w in layer {
            if *w != 0.0 {
                l0 += 1;
            }
            l1 += w.abs();
        }
    }
    (l0, l1)
}

/// On-disk model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub norm_stats: NormStats,
    pub target_kind: TargetKind,
    pub train_config: TrainConfig,
    pub final_losses: Vec<EpochLoss>,
    /// Experiment-level tag (e.g. "costa_sparse"), when trained as part
    /// of a model grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_type: Option<String>,
}

impl ModelFile {
    pub fn from_parts(
        params: &MlpParameters,
        train_config: &TrainConfig,
        final_losses: &[EpochLoss],
        model_type: Option<String>,
    ) -> Self {
        ModelFile {
            layer_sizes: params.layer_sizes.clone(),
            weights: params.weights.clone(),
            biases: params.biases.clone(),
            norm_stats: params.norm.clone(),
            target_kind: params.target_kind,
            train_config: train_config.clone(),
            final_losses: final_losses.to_vec(),
            model_type,
        }
    }

    pub fn into_params(self) -> MlpParameters {
        MlpParameters {
            layer_sizes: self.layer_sizes,
            weights: self.weights,
            biases: self.biases,
            norm: self.norm_stats,
            target_kind: self.target_kind,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelFile> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::identity_norm_stats;

    fn small_net(seed: u64) -> MlpParameters {
        MlpParameters::init(
            &[13, 20, 20, 20, 20, 8],
            seed,
            identity_norm_stats(),
            TargetKind::StateDerivative,
        )
    }

    #[test]
    fn zero_network_maps_to_zero() {
        let params = MlpParameters::zeros(
            &[13, 20, 8],
            identity_norm_stats(),
            TargetKind::StateDerivative,
        );
        let out = forward(&params, &[1.0; 13]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_unit_chain_is_identity_on_positives() {
        let mut params = MlpParameters::zeros(
            &[2, 3, 1],
            identity_norm_stats(),
            TargetKind::StateDerivative,
        );
        // input[0] -> hidden unit 1 -> output, all weights 1.
        params.weights[0][2] = 1.0; // hidden row 1, input col 0 (3x2 row-major)
        params.weights[1][1] = 1.0; // output row 0, hidden col 1
        let out = forward(&params, &[0.7, -4.0]).unwrap();
        assert_eq!(out, vec![0.7]);
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let params = small_net(1);
        assert!(matches!(
            forward(&params, &[0.0; 5]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    /// Independent forward pass written as plain nested loops over fresh
    /// buffers. Kept deliberately separate from the implementation path.
    fn forward_oracle(params: &MlpParameters, x: &[f64]) -> Vec<f64> {
        let mut current: Vec<f64> = x.to_vec();
        let n_layers = params.layer_sizes.len() - 1;
        for l in 0..n_layers {
            let rows = params.layer_sizes[l + 1];
            let cols = params.layer_sizes[l];
            let mut next = vec![0.0; rows];
            for r in 0..rows {
                let mut s = 0.0;
                for c in 0..cols {
                    s += params.weights[l][r * cols + c] * current[c];
                }
                s += params.biases[l][r];
                next[r] = s;
            }
            if l != n_layers - 1 {
                for v in next.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            current = next;
        }
        current
    }

    #[test]
    fn forward_matches_triple_loop_oracle() {
        use rand::Rng;
        let params = small_net(3);
        let mut rng = stream(4, 0, StreamRole::NetworkInit, 1);
        for _ in 0..20 {
            let x: Vec<f64> = (0..13).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = forward(&params, &x).unwrap();
            let b = forward_oracle(&params, &x);
            for (ai, bi) in a.iter().zip(&b) {
                assert!((ai - bi).abs() < 1e-12);
            }
        }
    }

    fn random_batch(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        use rand::Rng;
        let mut rng = stream(seed, 1, StreamRole::BatchShuffle, 0);
        let xs = (0..n)
            .map(|_| (0..13).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        let ys = (0..n)
            .map(|_| (0..8).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        (xs, ys)
    }

    fn as_refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|x| x.as_slice()).collect()
    }

    #[test]
    fn zero_lambda_loss_is_pure_mse() {
        let params = small_net(5);
        let (xs, ys) = random_batch(6, 4);
        let (loss, _) = loss_and_gradients(&params, &as_refs(&xs), &as_refs(&ys), 0.0).unwrap();
        let mut mse = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            let out = forward(&params, x).unwrap();
            for (o, t) in out.iter().zip(y) {
                mse += (o - t) * (o - t);
            }
        }
        mse /= (xs.len() * 8) as f64;
        assert!((loss - mse).abs() < 1e-12);
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradients() {
        let params = small_net(7);
        let (xs, _) = random_batch(8, 3);
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| forward(&params, x).unwrap()).collect();
        let (loss, grads) =
            loss_and_gradients(&params, &as_refs(&xs), &as_refs(&ys), 0.0).unwrap();
        assert_eq!(loss, 0.0);
        for g in grads.weights.iter().chain(grads.biases.iter()) {
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    /// Central finite differences against backprop. With an L1 penalty the
    /// check skips weights within 10h of the |w| kink.
    fn gradient_check(lambda: f64, seed: u64) -> f64 {
        let h = 1e-5;
        let params = small_net(seed);
        let (xs, ys) = random_batch(seed + 1, 3);
        let (xr, yr) = (as_refs(&xs), as_refs(&ys));
        let (_, grads) = loss_and_gradients(&params, &xr, &yr, lambda).unwrap();

        let mut worst: f64 = 0.0;
        let mut probe = params.clone();
        for l in 0..params.weights.len() {
            for i in 0..params.weights[l].len() {
                let w0 = params.weights[l][i];
                if lambda != 0.0 && w0.abs() < 10.0 * h {
                    continue;
                }
                probe.weights[l][i] = w0 + h;
                let (lp, _) = loss_and_gradients(&probe, &xr, &yr, lambda).unwrap();
                probe.weights[l][i] = w0 - h;
                let (lm, _) = loss_and_gradients(&probe, &xr, &yr, lambda).unwrap();
                probe.weights[l][i] = w0;
                let fd = (lp - lm) / (2.0 * h);
                let bp = grads.weights[l][i];
                let scale = fd.abs().max(bp.abs()).max(1e-4);
                worst = worst.max((fd - bp).abs() / scale);
            }
            for i in 0..params.biases[l].len() {
                let b0 = params.biases[l][i];
                probe.biases[l][i] = b0 + h;
                let (lp, _) = loss_and_gradients(&probe, &xr, &yr, lambda).unwrap();
                probe.biases[l][i] = b0 - h;
                let (lm, _) = loss_and_gradients(&probe, &xr, &yr, lambda).unwrap();
                probe.biases[l][i] = b0;
                let fd = (lp - lm) / (2.0 * h);
                let bp = grads.biases[l][i];
                let scale = fd.abs().max(bp.abs()).max(1e-4);
                worst = worst.max((fd - bp).abs() / scale);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_central_differences() {
        let worst = gradient_check(0.0, 11);
        assert!(worst <= 1e-5, "max relative error {worst}");
    }

    #[test]
    fn gradients_match_central_differences_with_l1() {
        let worst = gradient_check(1e-4, 13);
        assert!(worst <= 1e-5, "max relative error {worst}");
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut params = small_net(15);
        let before = params.clone();
        let grads = Gradients::zeros_like(&params);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &TrainConfig::default());
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_magnitude_is_the_learning_rate() {
        // At t = 1 the bias corrections cancel and the update is
        // lr * g / (|g| + eps) for every nonzero gradient entry.
        let mut params = small_net(16);
        let before = params.clone();
        let mut grads = Gradients::zeros_like(&params);
        for g in grads.weights[0].iter_mut() {
            *g = 0.37;
        }
        let cfg = TrainConfig::default();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &cfg);
        for (after, b) in params.weights[0].iter().zip(&before.weights[0]) {
            let step = (after - b).abs();
            assert!(
                step <= cfg.learning_rate && step >= cfg.learning_rate * 0.999,
                "step {step}"
            );
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut params = small_net(17);
            let (xs, ys) = random_batch(18, 8);
            let mut state = AdamState::new(&params);
            let cfg = TrainConfig::default();
            for _ in 0..10 {
                let (_, grads) =
                    loss_and_gradients(&params, &as_refs(&xs), &as_refs(&ys), 1e-4).unwrap();
                adam_step(&mut params, &grads, &mut state, &cfg);
            }
            params
        };
        assert_eq!(run(), run());
    }

    /// A dataset whose targets are an affine function of the features.
    fn affine_dataset(n: usize, seed: u64) -> RegressionDataset {
        use rand::Rng;
        let mut rng = stream(seed, 2, StreamRole::BatchShuffle, 0);
        let coeffs: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..13).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut features = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let x: [f64; 13] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let y: [f64; 8] = std::array::from_fn(|r| {
                0.1 + coeffs[r].iter().zip(&x).map(|(c, xi)| c * xi).sum::<f64>()
            });
            features.push(x);
            targets.push(y);
        }
        let mut ds = RegressionDataset {
            features,
            targets,
            target_kind: TargetKind::StateDerivative,
            norm: identity_norm_stats(),
        };
        // Real statistics, as build_dataset would produce.
        let stats = {
            let n = ds.features.len() as f64;
            let mut fm = [0.0; 13];
            let mut fs = [0.0; 13];
            for f in &ds.features {
                for i in 0..13 {
                    fm[i] += f[i] / n;
                }
            }
            for f in &ds.features {
                for i in 0..13 {
                    fs[i] += (f[i] - fm[i]) * (f[i] - fm[i]) / n;
                }
            }
            let mut tm = [0.0; 8];
            let mut ts = [0.0; 8];
            for t in &ds.targets {
                for i in 0..8 {
                    tm[i] += t[i] / n;
                }
            }
            for t in &ds.targets {
                for i in 0..8 {
                    ts[i] += (t[i] - tm[i]) * (t[i] - tm[i]) / n;
                }
            }
            NormStats {
                feature_mean: fm,
                feature_std: fs.map(f64::sqrt),
                target_mean: tm,
                target_std: ts.map(f64::sqrt),
                state_std: [1.0; 8],
            }
        };
        ds.norm = stats;
        ds
    }

    #[test]
    fn training_recovers_an_affine_map() {
        let ds = affine_dataset(6000, 21);
        let cfg = TrainConfig {
            seed: 22,
            ..TrainConfig::default()
        };
        let (_, history) = train(&ds, &cfg).unwrap();
        let final_val = history.last().unwrap().val_mse;
        assert!(final_val < 1e-4, "validation MSE {final_val}");
    }

    #[test]
    fn l1_training_shrinks_the_weight_norm() {
        let ds = affine_dataset(1500, 23);
        let dense_cfg = TrainConfig {
            seed: 24,
            epochs: 40,
            ..TrainConfig::default()
        };
        let sparse_cfg = TrainConfig {
            lambda: 1e-4,
            ..dense_cfg.clone()
        };
        let (dense, _) = train(&ds, &dense_cfg).unwrap();
        let (sparse, _) = train(&ds, &sparse_cfg).unwrap();
        let (_, dense_l1) = sparsity_metrics(&dense);
        let (_, sparse_l1) = sparsity_metrics(&sparse);
        assert!(
            sparse_l1 < dense_l1,
            "sparse {sparse_l1} vs dense {dense_l1}"
        );
    }

    #[test]
    fn training_is_seed_deterministic() {
        let ds = affine_dataset(400, 25);
        let cfg = TrainConfig {
            seed: 26,
            epochs: 5,
            ..TrainConfig::default()
        };
        let (a, ha) = train(&ds, &cfg).unwrap();
        let (b, hb) = train(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn pruning_edge_cases() {
        let mut params = small_net(27);
        let original = params.clone();
        assert_eq!(magnitude_prune(&mut params, 0.0), 0.0);
        assert_eq!(params, original);

        let fraction = magnitude_prune(&mut params, f64::INFINITY);
        assert_eq!(fraction, 1.0);
        assert!(params.weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));
        assert_eq!(params.biases, original.biases);
    }

    #[test]
    fn pruned_fraction_matches_counting_oracle() {
        let mut params = small_net(28);
        let threshold = 0.05;
        let expected = {
            let mut below = 0usize;
            let mut total = 0usize;
            for layer in &params.weights {
                for w in layer {
                    total += 1;
                    if w.abs() < threshold {
                        below += 1;
                    }
                }
            }
            below as f64 / total as f64
        };
        assert_eq!(magnitude_prune(&mut params, threshold), expected);
    }

    #[test]
    fn pruned_fraction_is_monotone_in_threshold() {
        let params = small_net(29);
        let mut last = -1.0;
        for threshold in [0.0, 1e-3, 1e-2, 5e-2, 1e-1, 0.2, 1.0] {
            let mut copy = params.clone();
            let fraction = magnitude_prune(&mut copy, threshold);
            assert!(fraction >= last);
            last = fraction;
        }
    }

    #[test]
    fn sparsity_metrics_edges() {
        let mut params = MlpParameters::zeros(
            &[2, 2, 1],
            identity_norm_stats(),
            TargetKind::Residual,
        );
        assert_eq!(sparsity_metrics(&params), (0, 0.0));
        params.weights[0][1] = -2.0;
        assert_eq!(sparsity_metrics(&params), (1, 2.0));
    }

    #[test]
    fn model_file_round_trips() {
        let ds = affine_dataset(300, 30);
        let cfg = TrainConfig {
            seed: 31,
            epochs: 2,
            ..TrainConfig::default()
        };
        let (params, history) = train(&ds, &cfg).unwrap();
        let file = ModelFile::from_parts(&params, &cfg, &history, Some("ddm_dense".into()));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        file.save(&path).unwrap();
        let back = ModelFile::load(&path).unwrap();
        assert_eq!(back.into_params(), params);
    }
}
