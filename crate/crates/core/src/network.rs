//! The convolutional denoising autoencoder: layer specs, Glorot
//! initialization, and forward/backward passes composed from the kernels.

use crate::kernels::{
    activation, activation_grad, conv2d, conv2d_grads, maxpool2, maxpool2_backward, upsample2,
    upsample2_backward, Activation, PoolMask,
};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::{ConvWeights, Tensor, TensorError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

const SALT_INIT: u64 = 0x696E_6974;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: TensorError,
    },
    #[error("invalid layer spec at index {layer}: {reason}")]
    BadSpec { layer: usize, reason: String },
    #[error("{got} parameter blocks for a spec with {expected} conv layers")]
    ParamCount { expected: usize, got: usize },
    #[error("cache does not match this call (layer {layer}): {reason}")]
    StaleCache { layer: usize, reason: String },
}

/// One layer of the network. Conv layers carry their own parameters; the
/// rest are parameter-free.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
    },
    Activation {
        activation: Activation,
    },
    MaxPool,
    Upsample,
}

impl LayerSpec {
    pub fn conv(kh: usize, kw: usize, cin: usize, cout: usize) -> Self {
        LayerSpec::Conv { kh, kw, cin, cout }
    }

    pub fn relu() -> Self {
        LayerSpec::Activation {
            activation: Activation::Relu,
        }
    }

    pub fn sigmoid() -> Self {
        LayerSpec::Activation {
            activation: Activation::Sigmoid,
        }
    }
}

/// Per-layer state captured by [`forward`] for the matching [`backward`].
pub struct ForwardCache<S = f32> {
    items: Vec<CacheItem<S>>,
    output_shape: [usize; 4],
}

enum CacheItem<S> {
    Conv { input: Tensor<S> },
    Activation { pre: Tensor<S> },
    MaxPool { mask: PoolMask },
    Upsample { input_shape: [usize; 4] },
}

impl<S> ForwardCache<S> {
    pub fn layer_count(&self) -> usize {
        self.items.len()
    }

    pub fn output_shape(&self) -> [usize; 4] {
        self.output_shape
    }

    #[cfg(test)]
    fn pooled_shape_at(&self, layer: usize) -> Option<[usize; 4]> {
        match &self.items[layer] {
            CacheItem::MaxPool { mask } => Some(mask.pooled_shape()),
            _ => None,
        }
    }
}

/// The two-stage hourglass: conv+relu, pool, conv+relu, pool, conv+relu,
/// upsample, conv+relu, upsample, conv+sigmoid. Single-channel in and out.
pub fn hourglass(filters: usize, kernel: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(kernel, kernel, 1, filters),
        LayerSpec::relu(),
        LayerSpec::MaxPool,
        LayerSpec::conv(kernel, kernel, filters, filters),
        LayerSpec::relu(),
        LayerSpec::MaxPool,
        LayerSpec::conv(kernel, kernel, filters, filters),
        LayerSpec::relu(),
        LayerSpec::Upsample,
        LayerSpec::conv(kernel, kernel, filters, filters),
        LayerSpec::relu(),
        LayerSpec::Upsample,
        LayerSpec::conv(kernel, kernel, filters, 1),
        LayerSpec::sigmoid(),
    ]
}

/// The standard architecture: 3x3 kernels, 32 filters per conv layer,
/// 64x64x1 in and out, 16x16x32 bottleneck after the second pool.
pub fn default_architecture() -> Vec<LayerSpec> {
    hourglass(32, 3)
}

/// Checks channel chaining, kernel oddness, pool/upsample balance, and that
/// the output shape can equal the input shape.
pub fn validate_spec(spec: &[LayerSpec]) -> Result<(), NetworkError> {
    let mut channels: Option<(usize, usize)> = None; // (input, current)
    let mut scale_log2: i32 = 0;
    for (i, layer) in spec.iter().enumerate() {
        match *layer {
            LayerSpec::Conv { kh, kw, cin, cout } => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(NetworkError::BadSpec {
                        layer: i,
                        reason: format!("kernel extents must be odd, got {kh}x{kw}"),
                    });
                }
                if cin == 0 || cout == 0 {
                    return Err(NetworkError::BadSpec {
                        layer: i,
                        reason: "zero channel count".into(),
                    });
                }
                match channels {
                    None => channels = Some((cin, cout)),
                    Some((first, cur)) => {
                        if cin != cur {
                            return Err(NetworkError::BadSpec {
                                layer: i,
                                reason: format!(
                                    "conv takes {cin} channels but the previous layer yields {cur}"
                                ),
                            });
                        }
                        channels = Some((first, cout));
                    }
                }
            }
            LayerSpec::MaxPool => scale_log2 -= 1,
            LayerSpec::Upsample => scale_log2 += 1,
            LayerSpec::Activation { .. } => {}
        }
    }
    let (first, last) = channels.ok_or(NetworkError::BadSpec {
        layer: 0,
        reason: "spec has no conv layers".into(),
    })?;
    if scale_log2 != 0 {
        return Err(NetworkError::BadSpec {
            layer: spec.len().saturating_sub(1),
            reason: format!("pools and upsamples are unbalanced (net log2 scale {scale_log2})"),
        });
    }
    if first != last {
        return Err(NetworkError::BadSpec {
            layer: spec.len().saturating_sub(1),
            reason: format!("output channels {last} differ from input channels {first}"),
        });
    }
    Ok(())
}

/// Channel count the first conv layer expects.
pub fn input_channels(spec: &[LayerSpec]) -> usize {
    spec.iter()
        .find_map(|l| match *l {
            LayerSpec::Conv { cin, .. } => Some(cin),
            _ => None,
        })
        .unwrap_or(1)
}

pub fn conv_layer_count(spec: &[LayerSpec]) -> usize {
    spec.iter()
        .filter(|l| matches!(l, LayerSpec::Conv { .. }))
        .count()
}

/// Total trainable scalars: kernel elements plus one bias per output map.
pub fn param_count(spec: &[LayerSpec]) -> usize {
    spec.iter()
        .map(|l| match *l {
            LayerSpec::Conv { kh, kw, cin, cout } => kh * kw * cin * cout + cout,
            _ => 0,
        })
        .sum()
}

/// Glorot-uniform kernels, zero biases, fully determined by `seed`.
///
/// Each weight is drawn from U[-a, a) with a = sqrt(6 / (fanIn + fanOut)),
/// fanIn = kh*kw*cin and fanOut = kh*kw*cout.
pub fn init_params<S: Scalar>(
    spec: &[LayerSpec],
    seed: u64,
) -> Result<Vec<ConvWeights<S>>, NetworkError> {
    validate_spec(spec)?;
    let mut params = Vec::new();
    let mut conv_index = 0u64;
    for (i, layer) in spec.iter().enumerate() {
        if let LayerSpec::Conv { kh, kw, cin, cout } = *layer {
            let fan_in = (kh * kw * cin) as f64;
            let fan_out = (kh * kw * cout) as f64;
            let a = (6.0 / (fan_in + fan_out)).sqrt();
            let mut stream = Stream::keyed(seed, SALT_INIT, conv_index);
            let kernels = Tensor::from_fn([kh, kw, cin, cout], |_, _, _, _| {
                S::from_f64(stream.range_f64(-a, a))
            });
            let block = ConvWeights::from_parts(kernels, vec![S::zero(); cout])
                .map_err(|source| NetworkError::Layer { layer: i, source })?;
            params.push(block);
            conv_index += 1;
        }
    }
    Ok(params)
}

fn check_params_match<S: Scalar>(
    params: &[ConvWeights<S>],
    spec: &[LayerSpec],
) -> Result<(), NetworkError> {
    let convs = conv_layer_count(spec);
    if params.len() != convs {
        return Err(NetworkError::ParamCount {
            expected: convs,
            got: params.len(),
        });
    }
    let mut pi = 0;
    for (i, layer) in spec.iter().enumerate() {
        if let LayerSpec::Conv { kh, kw, cin, cout } = *layer {
            let block = &params[pi];
            if block.kernel_h() != kh
                || block.kernel_w() != kw
                || block.in_channels() != cin
                || block.out_channels() != cout
            {
                return Err(NetworkError::BadSpec {
                    layer: i,
                    reason: format!(
                        "parameter block {pi} is {}x{}x{}x{}, spec wants {kh}x{kw}x{cin}x{cout}",
                        block.kernel_h(),
                        block.kernel_w(),
                        block.in_channels(),
                        block.out_channels()
                    ),
                });
            }
            pi += 1;
        }
    }
    Ok(())
}

/// Runs the network over a batch. Returns the reconstruction (inside (0,1)
/// when the spec ends in a sigmoid) and the cache the backward pass needs.
pub fn forward<S: Scalar>(
    params: &[ConvWeights<S>],
    spec: &[LayerSpec],
    batch: &Tensor<S>,
) -> Result<(Tensor<S>, ForwardCache<S>), NetworkError> {
    validate_spec(spec)?;
    check_params_match(params, spec)?;
    let mut cur = batch.clone();
    let mut items = Vec::with_capacity(spec.len());
    let mut pi = 0;
    for (i, layer) in spec.iter().enumerate() {
        let wrap = |source| NetworkError::Layer { layer: i, source };
        match *layer {
            LayerSpec::Conv { .. } => {
                let out = conv2d(&cur, &params[pi], false).map_err(wrap)?;
                items.push(CacheItem::Conv { input: cur });
                cur = out;
                pi += 1;
            }
            LayerSpec::Activation { activation: act } => {
                let out = activation(&cur, act);
                items.push(CacheItem::Activation { pre: cur });
                cur = out;
            }
            LayerSpec::MaxPool => {
                let (out, mask) = maxpool2(&cur).map_err(wrap)?;
                items.push(CacheItem::MaxPool { mask });
                cur = out;
            }
            LayerSpec::Upsample => {
                items.push(CacheItem::Upsample {
                    input_shape: cur.shape(),
                });
                cur = upsample2(&cur);
            }
        }
    }
    let output_shape = cur.shape();
    Ok((
        cur,
        ForwardCache {
            items,
            output_shape,
        },
    ))
}

/// Walks the cache backwards and returns the exact loss gradient for every
/// kernel and bias, in the same block order as the parameters.
pub fn backward<S: Scalar>(
    params: &[ConvWeights<S>],
    spec: &[LayerSpec],
    cache: &ForwardCache<S>,
    d_reconstruction: &Tensor<S>,
) -> Result<Vec<ConvWeights<S>>, NetworkError> {
    check_params_match(params, spec)?;
    if cache.items.len() != spec.len() {
        return Err(NetworkError::StaleCache {
            layer: 0,
            reason: format!(
                "cache has {} layers, spec has {}",
                cache.items.len(),
                spec.len()
            ),
        });
    }
    if d_reconstruction.shape() != cache.output_shape {
        return Err(NetworkError::StaleCache {
            layer: spec.len().saturating_sub(1),
            reason: format!(
                "upstream gradient shape {:?} does not match forward output {:?}",
                d_reconstruction.shape(),
                cache.output_shape
            ),
        });
    }

    let mut grads_rev: Vec<ConvWeights<S>> = Vec::with_capacity(params.len());
    let mut d = d_reconstruction.clone();
    let mut pi = params.len();
    for (i, layer) in spec.iter().enumerate().rev() {
        let wrap = |source| NetworkError::Layer { layer: i, source };
        match (layer, &cache.items[i]) {
            (LayerSpec::Conv { .. }, CacheItem::Conv { input }) => {
                pi -= 1;
                let (d_input, d_w) =
                    conv2d_grads(input, &params[pi], false, &d).map_err(wrap)?;
                grads_rev.push(d_w);
                d = d_input;
            }
            (
                LayerSpec::Activation { activation: act },
                CacheItem::Activation { pre },
            ) => {
                d = activation_grad(pre, &d, *act).map_err(wrap)?;
            }
            (LayerSpec::MaxPool, CacheItem::MaxPool { mask }) => {
                d = maxpool2_backward(mask, &d).map_err(wrap)?;
            }
            (LayerSpec::Upsample, CacheItem::Upsample { input_shape }) => {
                let summed = upsample2_backward(&d).map_err(wrap)?;
                if summed.shape() != *input_shape {
                    return Err(NetworkError::StaleCache {
                        layer: i,
                        reason: "upsample gradient shape mismatch".into(),
                    });
                }
                d = summed;
            }
            _ => {
                return Err(NetworkError::StaleCache {
                    layer: i,
                    reason: "cache entry kind does not match the spec".into(),
                });
            }
        }
    }
    grads_rev.reverse();
    Ok(grads_rev)
}
