//! Minibatch training with the Adam optimizer: seeded shuffling, a fixed
//! validation split, per-epoch loss history, and a CSV writer for it.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::kernels::{loss, LossKind};
use crate::network::{backward, forward, init_params, LayerSpec, NetworkError};
use crate::rng::{shuffle, Stream};
use crate::scalar::Scalar;
use crate::tensor::{ConvWeights, Tensor, TensorError};

use thiserror::Error;

const SALT_SPLIT: u64 = 0x73706C74;
const SALT_SHUFFLE: u64 = 0x73687566;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid training config: {reason}")]
    BadConfig { reason: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
}

/// Adam hyperparameters. The defaults are step size 1e-3, beta1 0.9,
/// beta2 0.999, epsilon 1e-8.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

struct BlockMoments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// First and second moment estimates, one pair per parameter block.
/// Moments are kept in f64 regardless of the network scalar type.
pub struct OptimizerState {
    blocks: Vec<BlockMoments>,
    step: u64,
}

impl OptimizerState {
    pub fn new<S: Scalar>(params: &[ConvWeights<S>]) -> Self {
        let blocks = params
            .iter()
            .map(|p| {
                let n = p.param_count();
                BlockMoments {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                }
            })
            .collect();
        OptimizerState { blocks, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place. Kernel elements come first in
/// each block's moment vectors, then the biases.
pub fn adam_step<S: Scalar>(
    params: &mut [ConvWeights<S>],
    grads: &[ConvWeights<S>],
    state: &mut OptimizerState,
    opt: &AdamParams,
) -> Result<(), TrainError> {
    if params.len() != state.blocks.len() || grads.len() != params.len() {
        return Err(TrainError::BadConfig {
            reason: format!(
                "optimizer state holds {} blocks, got {} params and {} grads",
                state.blocks.len(),
                params.len(),
                grads.len()
            ),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if !p.same_geometry(g) {
            return Err(TrainError::BadConfig {
                reason: "gradient geometry does not match parameters".into(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let m_corr = 1.0 - opt.beta1.powi(t);
    let v_corr = 1.0 - opt.beta2.powi(t);
    for ((p, g), mom) in params.iter_mut().zip(grads).zip(&mut state.blocks) {
        let kn = g.kernel_data().len();
        let grad_at = |i: usize| {
            if i < kn {
                g.kernel_data()[i].to_f64()
            } else {
                g.bias()[i - kn].to_f64()
            }
        };
        for i in 0..mom.m.len() {
            let gv = grad_at(i);
            mom.m[i] = opt.beta1 * mom.m[i] + (1.0 - opt.beta1) * gv;
            mom.v[i] = opt.beta2 * mom.v[i] + (1.0 - opt.beta2) * gv * gv;
            let m_hat = mom.m[i] / m_corr;
            let v_hat = mom.v[i] / v_corr;
            let update = opt.step_size * m_hat / (v_hat.sqrt() + opt.epsilon);
            let slot = if i < kn {
                &mut p.kernel_data_mut()[i]
            } else {
                &mut p.bias_mut()[i - kn]
            };
            *slot = S::from_f64(slot.to_f64() - update);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub validation_fraction: f64,
    pub seed: u64,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 10,
            loss: LossKind::Bce,
            validation_fraction: 0.1,
            seed: 0,
            adam: AdamParams::default(),
        }
    }
}

/// Per-epoch mean losses. `val_loss` entries are None when the validation
/// split is empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<Option<f64>>,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.train_loss.last().copied()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EpochReport {
    pub epoch: usize,
    pub epochs: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

pub struct TrainOutcome<S = f32> {
    pub params: Vec<ConvWeights<S>>,
    pub history: TrainHistory,
}

/// Splits `0..n` into (train, validation) index sets. The validation set
/// holds round(fraction * n) items chosen by a seeded shuffle; both sets
/// come back sorted.
pub fn validation_split(
    n: usize,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(TrainError::BadConfig {
            reason: format!("validation fraction {fraction} outside [0, 1)"),
        });
    }
    let val_n = (fraction * n as f64).round() as usize;
    if n > 0 && val_n >= n {
        return Err(TrainError::BadConfig {
            reason: format!("validation split {val_n} of {n} leaves no training data"),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut stream = Stream::keyed(seed, SALT_SPLIT, 0);
    shuffle(&mut order, &mut stream);
    let mut val: Vec<usize> = order[..val_n].to_vec();
    let mut train: Vec<usize> = order[val_n..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

fn gather_batch<S: Scalar>(from: &Tensor<S>, indices: &[usize]) -> Tensor<S> {
    let [_, h, w, c] = from.shape();
    let stride = h * w * c;
    let mut data = Vec::with_capacity(indices.len() * stride);
    for &i in indices {
        data.extend_from_slice(&from.data()[i * stride..(i + 1) * stride]);
    }
    Tensor::from_vec([indices.len(), h, w, c], data).expect("gathered batch length")
}

fn mean_loss_over<S: Scalar>(
    params: &[ConvWeights<S>],
    spec: &[LayerSpec],
    noisy: &Tensor<S>,
    clean: &Tensor<S>,
    indices: &[usize],
    kind: LossKind,
    batch_size: usize,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for chunk in indices.chunks(batch_size) {
        let x = gather_batch(noisy, chunk);
        let y = gather_batch(clean, chunk);
        let (out, _) = forward(params, spec, &x)?;
        let (l, _) = loss(&out, &y, kind)?;
        total += l.to_f64() * chunk.len() as f64;
    }
    Ok(total / indices.len() as f64)
}

/// Trains explicitly supplied initial parameters on (noisy, clean) pairs
/// and reports each finished epoch through `progress`. The shuffle order,
/// validation split, and therefore the resulting parameters are fully
/// determined by the initial parameters and `config.seed`.
pub fn train_from<S: Scalar>(
    spec: &[LayerSpec],
    mut params: Vec<ConvWeights<S>>,
    noisy: &Tensor<S>,
    clean: &Tensor<S>,
    config: &TrainConfig,
    progress: &mut dyn FnMut(EpochReport),
) -> Result<TrainOutcome<S>, TrainError> {
    if config.batch_size == 0 {
        return Err(TrainError::BadConfig {
            reason: "batch size must be at least 1".into(),
        });
    }
    if config.epochs == 0 {
        return Err(TrainError::BadConfig {
            reason: "epoch count must be at least 1".into(),
        });
    }
    if noisy.shape() != clean.shape() {
        return Err(TrainError::from(TensorError::ShapeMismatch {
            context: "training pairs",
            expected: clean.shape(),
            got: noisy.shape(),
        }));
    }
    let n = noisy.batch();
    if n == 0 {
        return Err(TrainError::BadConfig {
            reason: "no training images".into(),
        });
    }
    let (train_idx, val_idx) = validation_split(n, config.validation_fraction, config.seed)?;
    if config.batch_size > train_idx.len() {
        return Err(TrainError::BadConfig {
            reason: format!(
                "batch size {} exceeds the {} training images left after the validation split",
                config.batch_size,
                train_idx.len()
            ),
        });
    }
    let mut state = OptimizerState::new(&params);
    let mut history = TrainHistory::default();

    for epoch in 0..config.epochs {
        let mut order = train_idx.clone();
        let mut stream = Stream::keyed(config.seed, SALT_SHUFFLE, epoch as u64);
        shuffle(&mut order, &mut stream);

        let mut epoch_total = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = gather_batch(noisy, chunk);
            let y = gather_batch(clean, chunk);
            let (out, cache) = forward(&params, spec, &x)?;
            let (l, d_out) = loss(&out, &y, config.loss)?;
            let l = l.to_f64();
            if !l.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch: epoch + 1,
                    batch: bi + 1,
                });
            }
            epoch_total += l * chunk.len() as f64;
            let grads = backward(&params, spec, &cache, &d_out)?;
            adam_step(&mut params, &grads, &mut state, &config.adam)?;
        }
        let train_loss = epoch_total / order.len() as f64;
        let val_loss = if val_idx.is_empty() {
            None
        } else {
            Some(mean_loss_over(
                &params,
                spec,
                noisy,
                clean,
                &val_idx,
                config.loss,
                config.batch_size,
            )?)
        };
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        progress(EpochReport {
            epoch: epoch + 1,
            epochs: config.epochs,
            train_loss,
            val_loss,
        });
    }
    Ok(TrainOutcome { params, history })
}

/// Initializes the network from `config.seed` and trains it, so the whole
/// run is determined by (data, spec, config).
pub fn train<S: Scalar>(
    noisy: &Tensor<S>,
    clean: &Tensor<S>,
    spec: &[LayerSpec],
    config: &TrainConfig,
) -> Result<TrainOutcome<S>, TrainError> {
    train_with_progress(noisy, clean, spec, config, &mut |_| {})
}

/// [`train`] with a per-epoch progress callback.
pub fn train_with_progress<S: Scalar>(
    noisy: &Tensor<S>,
    clean: &Tensor<S>,
    spec: &[LayerSpec],
    config: &TrainConfig,
    progress: &mut dyn FnMut(EpochReport),
) -> Result<TrainOutcome<S>, TrainError> {
    let params = init_params(spec, config.seed)?;
    train_from(spec, params, noisy, clean, config, progress)
}

/// Writes `epoch,train_loss,val_loss` rows, 1-based epochs, empty val cell
/// when no validation split was used. Output bytes are deterministic.
pub fn write_history_csv(history: &TrainHistory, path: &Path) -> std::io::Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for (i, (t, v)) in history.train_loss.iter().zip(&history.val_loss).enumerate() {
        match v {
            Some(v) => out.push_str(&format!("{},{},{}\n", i + 1, t, v)),
            None => out.push_str(&format!("{},{},\n", i + 1, t)),
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;

    fn tiny_spec() -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv(3, 3, 1, 4),
            LayerSpec::relu(),
            LayerSpec::MaxPool,
            LayerSpec::conv(3, 3, 4, 4),
            LayerSpec::relu(),
            LayerSpec::Upsample,
            LayerSpec::conv(3, 3, 4, 1),
            LayerSpec::sigmoid(),
        ]
    }

    fn rand_images(seed: u64, n: usize, side: usize) -> Tensor<f32> {
        let mut s = Stream::keyed(seed, 0xDA7A, 0);
        Tensor::from_fn([n, side, side, 1], |_, _, _, _| {
            s.range_f64(0.05, 0.95) as f32
        })
    }

    fn single_param_block(value: f64) -> Vec<ConvWeights<f64>> {
        let kernels = Tensor::from_vec([1, 1, 1, 1], vec![value]).unwrap();
        vec![ConvWeights::from_parts(kernels, vec![0.0]).unwrap()]
    }

    fn single_grad_block(g: f64, gb: f64) -> Vec<ConvWeights<f64>> {
        let kernels = Tensor::from_vec([1, 1, 1, 1], vec![g]).unwrap();
        vec![ConvWeights::from_parts(kernels, vec![gb]).unwrap()]
    }

    #[test]
    fn adam_first_step_matches_closed_form() {
        // t=1: mHat = g, vHat = g*g, update = step * g / (|g| + eps)
        let mut params = single_param_block(0.0);
        let grads = single_grad_block(2.0, -0.5);
        let mut state = OptimizerState::new(&params);
        let opt = AdamParams::default();
        adam_step(&mut params, &grads, &mut state, &opt).unwrap();
        let expect_w = -opt.step_size * 2.0 / (2.0 + opt.epsilon);
        let expect_b = opt.step_size * 0.5 / (0.5 + opt.epsilon);
        assert!((params[0].kernel_data()[0] - expect_w).abs() < 1e-15);
        assert!((params[0].bias()[0] - expect_b).abs() < 1e-15);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_second_step_matches_closed_form() {
        let mut params = single_param_block(0.0);
        let grads = single_grad_block(2.0, 0.0);
        let mut state = OptimizerState::new(&params);
        let opt = AdamParams::default();
        adam_step(&mut params, &grads, &mut state, &opt).unwrap();
        adam_step(&mut params, &grads, &mut state, &opt).unwrap();

        let g = 2.0;
        let m1 = (1.0 - opt.beta1) * g;
        let m2 = opt.beta1 * m1 + (1.0 - opt.beta1) * g;
        let v1 = (1.0 - opt.beta2) * g * g;
        let v2 = opt.beta2 * v1 + (1.0 - opt.beta2) * g * g;
        let step1 = opt.step_size * (m1 / (1.0 - opt.beta1))
            / ((v1 / (1.0 - opt.beta2)).sqrt() + opt.epsilon);
        let step2 = opt.step_size * (m2 / (1.0 - opt.beta1.powi(2)))
            / ((v2 / (1.0 - opt.beta2.powi(2))).sqrt() + opt.epsilon);
        let expect = -(step1 + step2);
        assert!((params[0].kernel_data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn adam_converges_on_a_quadratic() {
        // minimize (w - 3)^2 by feeding its gradient 2 (w - 3)
        let mut params = single_param_block(0.0);
        let mut state = OptimizerState::new(&params);
        let opt = AdamParams {
            step_size: 0.1,
            ..AdamParams::default()
        };
        for _ in 0..1000 {
            let w = params[0].kernel_data()[0];
            let grads = single_grad_block(2.0 * (w - 3.0), 0.0);
            adam_step(&mut params, &grads, &mut state, &opt).unwrap();
        }
        assert!((params[0].kernel_data()[0] - 3.0).abs() < 0.05);
    }

    #[test]
    fn adam_rejects_mismatched_geometry() {
        let mut params = single_param_block(0.0);
        let kernels = Tensor::from_vec([3, 3, 1, 1], vec![0.0; 9]).unwrap();
        let grads = vec![ConvWeights::from_parts(kernels, vec![0.0]).unwrap()];
        let mut state = OptimizerState::new(&params);
        let r = adam_step(&mut params, &grads, &mut state, &AdamParams::default());
        assert!(matches!(r, Err(TrainError::BadConfig { .. })));
    }

    #[test]
    fn validation_split_partitions_and_rounds() {
        let (train, val) = validation_split(20, 0.1, 5).unwrap();
        assert_eq!(val.len(), 2);
        assert_eq!(train.len(), 18);
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());

        // round-half-away-from-zero: 25 * 0.1 = 2.5 -> 3
        let (_, val) = validation_split(25, 0.1, 5).unwrap();
        assert_eq!(val.len(), 3);

        let (train, val) = validation_split(7, 0.0, 5).unwrap();
        assert!(val.is_empty());
        assert_eq!(train.len(), 7);
    }

    #[test]
    fn validation_split_is_seed_deterministic() {
        let a = validation_split(50, 0.2, 11).unwrap();
        let b = validation_split(50, 0.2, 11).unwrap();
        assert_eq!(a, b);
        let c = validation_split(50, 0.2, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn validation_split_rejects_bad_fractions() {
        assert!(validation_split(10, 1.0, 0).is_err());
        assert!(validation_split(10, -0.1, 0).is_err());
        assert!(validation_split(3, 0.9, 0).is_err());
    }

    #[test]
    fn gather_batch_picks_rows() {
        let t = Tensor::from_vec([3, 1, 2, 1], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let picked = gather_batch(&t, &[2, 0]);
        assert_eq!(picked.shape(), [2, 1, 2, 1]);
        assert_eq!(picked.data(), &[5.0, 6.0, 1.0, 2.0]);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let spec = tiny_spec();
        let clean = rand_images(21, 6, 8);
        let noisy = clean.clone();
        let config = TrainConfig {
            epochs: 12,
            batch_size: 2,
            loss: LossKind::Mse,
            validation_fraction: 0.2,
            seed: 33,
            ..TrainConfig::default()
        };
        let run1 = train::<f32>(&noisy, &clean, &spec, &config).unwrap();
        let run2 = train::<f32>(&noisy, &clean, &spec, &config).unwrap();

        assert_eq!(run1.history.epochs(), 12);
        assert!(run1.history.train_loss[11] < run1.history.train_loss[0]);
        assert!(run1.history.val_loss.iter().all(|v| v.is_some()));

        assert_eq!(run1.params, run2.params);
        assert_eq!(run1.history, run2.history);

        let other_seed = TrainConfig { seed: 34, ..config };
        let run3 = train::<f32>(&noisy, &clean, &spec, &other_seed).unwrap();
        assert_ne!(run1.params, run3.params);
    }

    #[test]
    fn training_without_validation_reports_none() {
        let spec = tiny_spec();
        let clean = rand_images(22, 3, 8);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 2,
            loss: LossKind::Bce,
            validation_fraction: 0.0,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train::<f32>(&clean, &clean, &spec, &config).unwrap();
        assert_eq!(out.history.val_loss, vec![None]);
    }

    #[test]
    fn training_uses_the_last_partial_batch() {
        // 5 train images with batch size 2 -> 3 optimizer steps per epoch
        let spec = tiny_spec();
        let clean = rand_images(23, 5, 8);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 2,
            loss: LossKind::Mse,
            validation_fraction: 0.0,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut seen = 0;
        let out = train_with_progress::<f32>(&clean, &clean, &spec, &config, &mut |r| {
            seen += 1;
            assert_eq!(r.epoch, 1);
            assert!(r.train_loss.is_finite());
        })
        .unwrap();
        assert_eq!(seen, 1);
        drop(out);
    }

    #[test]
    fn validation_loss_is_pure_evaluation() {
        let spec = tiny_spec();
        let clean = rand_images(28, 4, 8);
        let params = init_params::<f32>(&spec, 8).unwrap();
        let a = mean_loss_over(&params, &spec, &clean, &clean, &[0, 2], LossKind::Mse, 2).unwrap();
        let b = mean_loss_over(&params, &spec, &clean, &clean, &[0, 2], LossKind::Mse, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_epochs_is_rejected() {
        let spec = tiny_spec();
        let clean = rand_images(29, 3, 8);
        let config = TrainConfig {
            epochs: 0,
            batch_size: 1,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        };
        let r = train::<f32>(&clean, &clean, &spec, &config);
        assert!(matches!(r, Err(TrainError::BadConfig { .. })));
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let spec = tiny_spec();
        let clean = rand_images(30, 3, 8);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 4,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        };
        let r = train::<f32>(&clean, &clean, &spec, &config);
        assert!(matches!(r, Err(TrainError::BadConfig { .. })));
    }

    #[test]
    fn non_finite_loss_aborts_with_context() {
        // the NaN goes into the target: a NaN input would be flushed to
        // zero by the first relu and never reach the loss
        let spec = tiny_spec();
        let noisy = rand_images(24, 2, 8);
        let mut clean = rand_images(25, 2, 8);
        clean.data_mut()[0] = f32::NAN;
        let config = TrainConfig {
            epochs: 1,
            batch_size: 2,
            loss: LossKind::Mse,
            validation_fraction: 0.0,
            seed: 5,
            ..TrainConfig::default()
        };
        let r = train::<f32>(&noisy, &clean, &spec, &config);
        assert!(matches!(
            r,
            Err(TrainError::NonFinite { epoch: 1, batch: 1 })
        ));
    }

    #[test]
    fn history_csv_bytes_are_exact() {
        let history = TrainHistory {
            train_loss: vec![0.5, 0.25],
            val_loss: vec![Some(0.75), None],
        };
        let path = std::env::temp_dir().join("denoise_core_history_test.csv");
        write_history_csv(&history, &path).unwrap();
        let got = fs::read_to_string(&path).unwrap();
        assert_eq!(got, "epoch,train_loss,val_loss\n1,0.5,0.75\n2,0.25,\n");
        fs::remove_file(&path).ok();
    }

    #[test]
    fn mismatched_pair_shapes_are_rejected() {
        let spec = tiny_spec();
        let a = rand_images(26, 2, 8);
        let b = rand_images(27, 3, 8);
        let r = train::<f32>(&a, &b, &spec, &TrainConfig::default());
        assert!(matches!(r, Err(TrainError::Tensor(_))));
    }
}
