//! Numerical kernels: convolution, pooling, upsampling, activations, losses,
//! each paired with its hand-derived gradient.
//!
//! All convolutions use same (zero) padding, so spatial shape is preserved.
//! Every function is a pure, deterministic map of its inputs.

use crate::scalar::Scalar;
use crate::tensor::{ConvWeights, Tensor, TensorError};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Mse,
}

/// Predictions are clamped to [CLAMP, 1-CLAMP] inside the cross-entropy loss
/// so log terms stay finite.
pub const BCE_CLAMP: f64 = 1e-7;

/// 2D convolution with same (zero) padding.
///
/// With `flip_kernels` set, kernels are reversed along both spatial axes
/// before application (true convolution rather than cross-correlation).
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    w: &ConvWeights<S>,
    flip_kernels: bool,
) -> Result<Tensor<S>, TensorError> {
    let [n, h, wid, cin] = input.shape();
    if cin != w.in_channels() {
        return Err(TensorError::ChannelMismatch {
            context: "conv2d",
            expected: w.in_channels(),
            got: cin,
        });
    }
    let (kh, kw) = (w.kernel_h(), w.kernel_w());
    let (cout, ph, pw) = (w.out_channels(), kh / 2, kw / 2);
    let kd = w.kernel_data();

    let mut out = Tensor::zeros([n, h, wid, cout]);
    let out_data = out.data_mut();
    let in_data = input.data();
    let mut acc = vec![S::zero(); cout];

    for b in 0..n {
        for oy in 0..h {
            for ox in 0..wid {
                acc.copy_from_slice(w.bias());
                for ky in 0..kh {
                    let iy = (oy + ky).wrapping_sub(ph);
                    if iy >= h {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox + kx).wrapping_sub(pw);
                        if ix >= wid {
                            continue;
                        }
                        let (wky, wkx) = if flip_kernels {
                            (kh - 1 - ky, kw - 1 - kx)
                        } else {
                            (ky, kx)
                        };
                        let x_base = ((b * h + iy) * wid + ix) * cin;
                        let w_base = (wky * kw + wkx) * cin * cout;
                        for ic in 0..cin {
                            let xv = in_data[x_base + ic];
                            let w_row = &kd[w_base + ic * cout..w_base + (ic + 1) * cout];
                            for (a, &wv) in acc.iter_mut().zip(w_row) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
                let o_base = ((b * h + oy) * wid + ox) * cout;
                out_data[o_base..o_base + cout].copy_from_slice(&acc);
            }
        }
    }
    Ok(out)
}

/// Gradients of `sum(upstream * conv2d(input, w, flip_kernels))` with respect
/// to the input, the kernels, and the biases. The bias gradient for channel k
/// is the sum of `upstream` over batch and spatial dimensions at channel k.
pub fn conv2d_grads<S: Scalar>(
    input: &Tensor<S>,
    w: &ConvWeights<S>,
    flip_kernels: bool,
    upstream: &Tensor<S>,
) -> Result<(Tensor<S>, ConvWeights<S>), TensorError> {
    let [n, h, wid, cin] = input.shape();
    if cin != w.in_channels() {
        return Err(TensorError::ChannelMismatch {
            context: "conv2d_grads",
            expected: w.in_channels(),
            got: cin,
        });
    }
    let (kh, kw) = (w.kernel_h(), w.kernel_w());
    let (cout, ph, pw) = (w.out_channels(), kh / 2, kw / 2);
    let expected = [n, h, wid, cout];
    if upstream.shape() != expected {
        return Err(TensorError::ShapeMismatch {
            context: "conv2d_grads upstream",
            expected,
            got: upstream.shape(),
        });
    }

    let kd = w.kernel_data();
    // kernels transposed to (ky, kx, cout, cin) so the input-gradient inner
    // loop walks contiguous memory
    let mut kt = vec![S::zero(); kd.len()];
    for ky in 0..kh {
        for kx in 0..kw {
            let base = (ky * kw + kx) * cin * cout;
            for ic in 0..cin {
                for oc in 0..cout {
                    kt[base + oc * cin + ic] = kd[base + ic * cout + oc];
                }
            }
        }
    }

    let mut d_input = Tensor::zeros(input.shape());
    let mut d_w = w.zeros_like();
    let in_data = input.data();
    let up_data = upstream.data();

    {
        let d_in = d_input.data_mut();
        let d_kernel = d_w.kernel_data_mut();
        for b in 0..n {
            for oy in 0..h {
                for ox in 0..wid {
                    let u_base = ((b * h + oy) * wid + ox) * cout;
                    let u_row = &up_data[u_base..u_base + cout];
                    for ky in 0..kh {
                        let iy = (oy + ky).wrapping_sub(ph);
                        if iy >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox + kx).wrapping_sub(pw);
                            if ix >= wid {
                                continue;
                            }
                            let (wky, wkx) = if flip_kernels {
                                (kh - 1 - ky, kw - 1 - kx)
                            } else {
                                (ky, kx)
                            };
                            let x_base = ((b * h + iy) * wid + ix) * cin;
                            let w_base = (wky * kw + wkx) * cin * cout;
                            // d_input[b, iy, ix, ic] += sum_oc u * w[.., ic, oc]
                            let d_in_row = &mut d_in[x_base..x_base + cin];
                            for oc in 0..cout {
                                let uv = u_row[oc];
                                let kt_row = &kt[w_base + oc * cin..w_base + (oc + 1) * cin];
                                for (d, &wv) in d_in_row.iter_mut().zip(kt_row) {
                                    *d += uv * wv;
                                }
                            }
                            // d_w[.., ic, oc] += x[b, iy, ix, ic] * u[oc]
                            for ic in 0..cin {
                                let xv = in_data[x_base + ic];
                                let dw_row = &mut d_kernel
                                    [w_base + ic * cout..w_base + (ic + 1) * cout];
                                for (d, &uv) in dw_row.iter_mut().zip(u_row) {
                                    *d += xv * uv;
                                }
                            }
                        }
                    }
                }
            }
        }

        let d_bias = d_w.bias_mut();
        for chunk in up_data.chunks_exact(cout) {
            for (d, &uv) in d_bias.iter_mut().zip(chunk) {
                *d += uv;
            }
        }
    }

    Ok((d_input, d_w))
}

/// Which of the four positions of a 2x2 pooling window held the maximum,
/// per pooled element, in row-major window order (ties take the first).
#[derive(Clone, Debug, PartialEq)]
pub struct PoolMask {
    input_shape: [usize; 4],
    pooled_shape: [usize; 4],
    wins: Vec<u8>,
}

impl PoolMask {
    pub fn input_shape(&self) -> [usize; 4] {
        self.input_shape
    }

    pub fn pooled_shape(&self) -> [usize; 4] {
        self.pooled_shape
    }

    /// Winning window position (0..4, row-major) for each pooled element.
    pub fn wins(&self) -> &[u8] {
        &self.wins
    }
}

/// 2x2 max pooling with stride 2.
pub fn maxpool2<S: Scalar>(input: &Tensor<S>) -> Result<(Tensor<S>, PoolMask), TensorError> {
    let [n, h, w, c] = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::OddSpatial {
            context: "maxpool2",
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, oh, ow, c]);
    let mut wins = vec![0u8; n * oh * ow * c];
    let in_data = input.data();
    let out_data = out.data_mut();

    let mut o = 0;
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = ((b * h + 2 * oy) * w + 2 * ox) * c;
                for ch in 0..c {
                    let candidates = [
                        in_data[base + ch],
                        in_data[base + c + ch],
                        in_data[base + w * c + ch],
                        in_data[base + w * c + c + ch],
                    ];
                    let mut best = 0usize;
                    for (i, &v) in candidates.iter().enumerate().skip(1) {
                        if v > candidates[best] {
                            best = i;
                        }
                    }
                    out_data[o] = candidates[best];
                    wins[o] = best as u8;
                    o += 1;
                }
            }
        }
    }
    let pooled_shape = [n, oh, ow, c];
    Ok((
        out,
        PoolMask {
            input_shape: [n, h, w, c],
            pooled_shape,
            wins,
        },
    ))
}

/// Routes each upstream value to the window position that won the forward max;
/// every other position receives zero.
pub fn maxpool2_backward<S: Scalar>(
    mask: &PoolMask,
    upstream: &Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    if upstream.shape() != mask.pooled_shape {
        return Err(TensorError::ShapeMismatch {
            context: "maxpool2_backward upstream",
            expected: mask.pooled_shape,
            got: upstream.shape(),
        });
    }
    let [n, h, w, c] = mask.input_shape;
    let [_, oh, ow, _] = mask.pooled_shape;
    let mut out = Tensor::zeros(mask.input_shape);
    let out_data = out.data_mut();
    let up_data = upstream.data();

    let mut o = 0;
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = ((b * h + 2 * oy) * w + 2 * ox) * c;
                for ch in 0..c {
                    let win = mask.wins[o] as usize;
                    let (dy, dx) = (win / 2, win % 2);
                    out_data[base + (dy * w + dx) * c + ch] = up_data[o];
                    o += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour 2x upsampling in both spatial dimensions.
pub fn upsample2<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let [n, h, w, c] = input.shape();
    let mut out = Tensor::zeros([n, 2 * h, 2 * w, c]);
    let in_data = input.data();
    let out_data = out.data_mut();
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let src = ((b * h + y) * w + x) * c;
                let row = &in_data[src..src + c];
                for dy in 0..2 {
                    for dx in 0..2 {
                        let dst = ((b * 2 * h + 2 * y + dy) * 2 * w + 2 * x + dx) * c;
                        out_data[dst..dst + c].copy_from_slice(row);
                    }
                }
            }
        }
    }
    out
}

/// Gradient of `upsample2`: sums each replicated 2x2 block back into its
/// source cell.
pub fn upsample2_backward<S: Scalar>(upstream: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    let [n, h, w, c] = upstream.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::OddSpatial {
            context: "upsample2_backward",
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, oh, ow, c]);
    let out_data = out.data_mut();
    let up_data = upstream.data();
    for b in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                let dst = ((b * oh + y) * ow + x) * c;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let src = ((b * h + 2 * y + dy) * w + 2 * x + dx) * c;
                        for ch in 0..c {
                            out_data[dst + ch] += up_data[src + ch];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Elementwise activation. relu(x) = max(0, x); sigmoid(x) = 1/(1+e^-x).
pub fn activation<S: Scalar>(x: &Tensor<S>, kind: Activation) -> Tensor<S> {
    match kind {
        Activation::Relu => x.map(|v| if v > S::zero() { v } else { S::zero() }),
        Activation::Sigmoid => x.map(sigmoid_scalar),
    }
}

#[inline]
fn sigmoid_scalar<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

/// Exact elementwise activation derivative applied to `upstream`.
/// The relu derivative at exactly zero is defined as zero.
pub fn activation_grad<S: Scalar>(
    x: &Tensor<S>,
    upstream: &Tensor<S>,
    kind: Activation,
) -> Result<Tensor<S>, TensorError> {
    x.same_shape(upstream, "activation_grad")?;
    let mut out = Tensor::zeros(x.shape());
    let out_data = out.data_mut();
    for (o, (&xv, &uv)) in out_data.iter_mut().zip(x.data().iter().zip(upstream.data())) {
        *o = match kind {
            Activation::Relu => {
                if xv > S::zero() {
                    uv
                } else {
                    S::zero()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid_scalar(xv);
                uv * s * (S::one() - s)
            }
        };
    }
    Ok(out)
}

/// Mean loss over all elements and its exact gradient with respect to `pred`.
///
/// bce: mean of -[t ln p + (1-t) ln(1-p)] with p clamped to
/// [BCE_CLAMP, 1-BCE_CLAMP]; the gradient is zero where the clamp is active.
/// mse: mean of (p-t)^2.
pub fn loss<S: Scalar>(
    pred: &Tensor<S>,
    target: &Tensor<S>,
    kind: LossKind,
) -> Result<(S, Tensor<S>), TensorError> {
    pred.same_shape(target, "loss")?;
    let n = S::from_f64(pred.len() as f64);
    let mut d_pred = Tensor::zeros(pred.shape());
    let d = d_pred.data_mut();
    let mut total = S::zero();
    match kind {
        LossKind::Mse => {
            let two = S::from_f64(2.0);
            for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
                let diff = p - t;
                total += diff * diff;
                d[i] = two * diff / n;
            }
        }
        LossKind::Bce => {
            let eps = S::from_f64(BCE_CLAMP);
            let lo = eps;
            let hi = S::one() - eps;
            for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
                let pc = if p < lo {
                    lo
                } else if p > hi {
                    hi
                } else {
                    p
                };
                total = total - (t * pc.ln() + (S::one() - t) * (S::one() - pc).ln());
                d[i] = if p < lo || p > hi {
                    S::zero()
                } else {
                    (pc - t) / (pc * (S::one() - pc) * n)
                };
            }
        }
    }
    Ok((total / n, d_pred))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn rand_tensor(seed: u64, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
        let mut s = Stream::keyed(seed, 0xABCD, 1);
        Tensor::from_fn(shape, |_, _, _, _| s.range_f64(lo, hi))
    }

    fn rand_weights(seed: u64, kh: usize, kw: usize, cin: usize, cout: usize) -> ConvWeights<f64> {
        let mut s = Stream::keyed(seed, 0xABCE, 2);
        let kernels = Tensor::from_fn([kh, kw, cin, cout], |_, _, _, _| s.range_f64(-1.0, 1.0));
        let bias = (0..cout).map(|_| s.range_f64(-0.5, 0.5)).collect();
        ConvWeights::from_parts(kernels, bias).unwrap()
    }

    /// Direct quadruple-loop convolution, the independent oracle.
    fn conv2d_reference(
        input: &Tensor<f64>,
        w: &ConvWeights<f64>,
        flip: bool,
    ) -> Tensor<f64> {
        let [n, h, wid, cin] = input.shape();
        let (kh, kw, cout) = (w.kernel_h(), w.kernel_w(), w.out_channels());
        let (ph, pw) = (kh as isize / 2, kw as isize / 2);
        Tensor::from_fn([n, h, wid, cout], |b, oy, ox, oc| {
            let mut acc = w.bias()[oc];
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = oy as isize + ky as isize - ph;
                    let ix = ox as isize + kx as isize - pw;
                    if iy < 0 || iy >= h as isize || ix < 0 || ix >= wid as isize {
                        continue;
                    }
                    let (wky, wkx) = if flip { (kh - 1 - ky, kw - 1 - kx) } else { (ky, kx) };
                    for ic in 0..cin {
                        acc += input.at(b, iy as usize, ix as usize, ic)
                            * w.kernels().at(wky, wkx, ic, oc);
                    }
                }
            }
            acc
        })
    }

    fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let input = rand_tensor(1, [2, 4, 5, 1], 0.0, 1.0);
        let w = ConvWeights::from_parts(
            Tensor::from_vec([1, 1, 1, 1], vec![1.0]).unwrap(),
            vec![0.0],
        )
        .unwrap();
        let out = conv2d(&input, &w, false).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn impulse_under_ones_kernel_fills_the_window() {
        // every 3x3 window of a 3x3 image covers the centre impulse exactly once
        let mut input: Tensor<f64> = Tensor::zeros([1, 3, 3, 1]);
        *input.at_mut(0, 1, 1, 0) = 1.0;
        let w = ConvWeights::from_parts(Tensor::filled([3, 3, 1, 1], 1.0), vec![0.0]).unwrap();
        let out = conv2d(&input, &w, false).unwrap();
        assert_eq!(out.data(), &[1.0; 9]);
    }

    #[test]
    fn flipping_an_asymmetric_kernel_equals_reversing_it() {
        let input = rand_tensor(2, [1, 4, 6, 1], -1.0, 1.0);
        let forward = ConvWeights::from_parts(
            Tensor::from_vec([1, 3, 1, 1], vec![0.25, -0.5, 1.0]).unwrap(),
            vec![0.0],
        )
        .unwrap();
        let reversed = ConvWeights::from_parts(
            Tensor::from_vec([1, 3, 1, 1], vec![1.0, -0.5, 0.25]).unwrap(),
            vec![0.0],
        )
        .unwrap();
        let flipped = conv2d(&input, &forward, true).unwrap();
        let plain = conv2d(&input, &reversed, false).unwrap();
        assert_eq!(flipped, plain);
    }

    #[test]
    fn conv2d_matches_the_quadruple_loop_reference() {
        for (seed, shape, k) in [
            (3, [2, 5, 5, 2], (3usize, 3usize, 2usize, 3usize)),
            (4, [1, 6, 4, 3], (1, 3, 3, 2)),
            (5, [2, 4, 4, 1], (5, 5, 1, 2)),
        ] {
            let input = rand_tensor(seed, shape, -1.0, 1.0);
            let w = rand_weights(seed + 10, k.0, k.1, k.2, k.3);
            for flip in [false, true] {
                let fast = conv2d(&input, &w, flip).unwrap();
                let slow = conv2d_reference(&input, &w, flip);
                assert!(
                    max_abs_diff(&fast, &slow) < 1e-12,
                    "seed {seed} flip {flip}"
                );
            }
        }
    }

    #[test]
    fn conv2d_is_linear_in_the_input() {
        let x = rand_tensor(6, [1, 5, 5, 2], -1.0, 1.0);
        let y = rand_tensor(7, [1, 5, 5, 2], -1.0, 1.0);
        let mut w = rand_weights(8, 3, 3, 2, 2);
        w.bias_mut().fill(0.0);
        let (a, b) = (0.7, -1.3);
        let combined = Tensor::from_vec(
            x.shape(),
            x.data()
                .iter()
                .zip(y.data())
                .map(|(&xv, &yv)| a * xv + b * yv)
                .collect(),
        )
        .unwrap();
        let lhs = conv2d(&combined, &w, false).unwrap();
        let cx = conv2d(&x, &w, false).unwrap();
        let cy = conv2d(&y, &w, false).unwrap();
        let rhs = Tensor::from_vec(
            lhs.shape(),
            cx.data()
                .iter()
                .zip(cy.data())
                .map(|(&xv, &yv)| a * xv + b * yv)
                .collect(),
        )
        .unwrap();
        assert!(max_abs_diff(&lhs, &rhs) < 1e-5);
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let input = rand_tensor(9, [1, 4, 4, 2], 0.0, 1.0);
        let w = rand_weights(10, 3, 3, 3, 1);
        assert!(matches!(
            conv2d(&input, &w, false),
            Err(TensorError::ChannelMismatch {
                expected: 3,
                got: 2,
                ..
            })
        ));
    }

    #[test]
    fn conv2d_grads_reject_bad_upstream_shape() {
        let input = rand_tensor(11, [1, 4, 4, 2], 0.0, 1.0);
        let w = rand_weights(12, 3, 3, 2, 2);
        let upstream = rand_tensor(13, [1, 4, 3, 2], 0.0, 1.0);
        assert!(matches!(
            conv2d_grads(&input, &w, false, &upstream),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let input = rand_tensor(14, [1, 4, 4, 2], -1.0, 1.0);
        let w = rand_weights(15, 3, 3, 2, 2);
        let upstream = Tensor::zeros([1, 4, 4, 2]);
        let (d_input, d_w) = conv2d_grads(&input, &w, false, &upstream).unwrap();
        assert!(d_input.data().iter().all(|&v| v == 0.0));
        assert!(d_w.kernel_data().iter().all(|&v| v == 0.0));
        assert!(d_w.bias().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_routes_upstream_to_input_gradient() {
        let input = rand_tensor(16, [2, 3, 3, 1], -1.0, 1.0);
        let w = ConvWeights::from_parts(
            Tensor::from_vec([1, 1, 1, 1], vec![1.0]).unwrap(),
            vec![0.0],
        )
        .unwrap();
        let upstream = rand_tensor(17, [2, 3, 3, 1], -1.0, 1.0);
        let (d_input, _) = conv2d_grads(&input, &w, false, &upstream).unwrap();
        assert_eq!(d_input, upstream);
    }

    #[test]
    fn bias_gradient_sums_upstream_per_channel() {
        let input = rand_tensor(18, [2, 4, 4, 1], -1.0, 1.0);
        let w = rand_weights(19, 3, 3, 1, 3);
        let upstream = rand_tensor(20, [2, 4, 4, 3], -1.0, 1.0);
        let (_, d_w) = conv2d_grads(&input, &w, false, &upstream).unwrap();
        for oc in 0..3 {
            let mut expected = 0.0;
            for b in 0..2 {
                for y in 0..4 {
                    for x in 0..4 {
                        expected += upstream.at(b, y, x, oc);
                    }
                }
            }
            assert!((d_w.bias()[oc] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn maxpool_on_a_constant_image_keeps_the_value_and_marks_first_position() {
        let input: Tensor<f64> = Tensor::filled([1, 4, 4, 2], 0.3);
        let (out, mask) = maxpool2(&input).unwrap();
        assert_eq!(out, Tensor::filled([1, 2, 2, 2], 0.3));
        assert!(mask.wins().iter().all(|&w| w == 0));
    }

    #[test]
    fn maxpool_single_window_enumeration() {
        let input = Tensor::from_vec([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, mask) = maxpool2(&input).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(mask.wins(), &[3]); // position (1,1)
    }

    #[test]
    fn maxpool_monotone_raster() {
        let input = Tensor::from_vec([1, 4, 4, 1], (1..=16).map(f64::from).collect()).unwrap();
        let (out, _) = maxpool2(&input).unwrap();
        assert_eq!(out.data(), &[6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn maxpool_matches_per_window_max_oracle() {
        let input = rand_tensor(21, [2, 6, 8, 3], -1.0, 1.0);
        let (out, _) = maxpool2(&input).unwrap();
        for b in 0..2 {
            for oy in 0..3 {
                for ox in 0..4 {
                    for c in 0..3 {
                        let mut m = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                m = m.max(input.at(b, 2 * oy + dy, 2 * ox + dx, c));
                            }
                        }
                        assert_eq!(out.at(b, oy, ox, c), m);
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_rejects_odd_extents() {
        let input: Tensor<f64> = Tensor::zeros([1, 3, 4, 1]);
        assert!(matches!(
            maxpool2(&input),
            Err(TensorError::OddSpatial { height: 3, .. })
        ));
    }

    #[test]
    fn maxpool_backward_routes_single_gradient() {
        let input = Tensor::from_vec([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (_, mask) = maxpool2(&input).unwrap();
        let upstream = Tensor::from_vec([1, 1, 1, 1], vec![2.5]).unwrap();
        let grad = maxpool2_backward(&mask, &upstream).unwrap();
        assert_eq!(grad.data(), &[0.0, 0.0, 0.0, 2.5]);
    }

    #[test]
    fn maxpool_backward_conserves_the_upstream_sum() {
        let input = rand_tensor(22, [2, 6, 4, 2], -1.0, 1.0);
        let (_, mask) = maxpool2(&input).unwrap();
        let upstream = rand_tensor(23, [2, 3, 2, 2], -1.0, 1.0);
        let grad = maxpool2_backward(&mask, &upstream).unwrap();
        let s_up: f64 = upstream.data().iter().sum();
        let s_grad: f64 = grad.data().iter().sum();
        assert!((s_up - s_grad).abs() < 1e-12);
        // at most one nonzero per 2x2 window
        for b in 0..2 {
            for oy in 0..3 {
                for ox in 0..2 {
                    for c in 0..2 {
                        let nonzero = (0..4)
                            .filter(|&i| {
                                grad.at(b, 2 * oy + i / 2, 2 * ox + i % 2, c) != 0.0
                            })
                            .count();
                        assert!(nonzero <= 1);
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_backward_checks_upstream_shape() {
        let input: Tensor<f64> = Tensor::zeros([1, 4, 4, 1]);
        let (_, mask) = maxpool2(&input).unwrap();
        let upstream: Tensor<f64> = Tensor::zeros([1, 2, 3, 1]);
        assert!(maxpool2_backward(&mask, &upstream).is_err());
    }

    #[test]
    fn upsample_replicates_each_cell() {
        let input = Tensor::from_vec([1, 1, 1, 1], vec![0.7]).unwrap();
        let out = upsample2(&input);
        assert_eq!(out, Tensor::filled([1, 2, 2, 1], 0.7));
    }

    #[test]
    fn upsample_backward_sums_the_four_replicas() {
        let upstream: Tensor<f64> = Tensor::filled([1, 2, 2, 1], 1.0);
        let grad = upsample2_backward(&upstream).unwrap();
        assert_eq!(grad.data(), &[4.0]);
    }

    #[test]
    fn upsample_then_maxpool_is_identity() {
        let input = rand_tensor(24, [2, 3, 5, 2], -1.0, 1.0);
        let (pooled, _) = maxpool2(&upsample2(&input)).unwrap();
        assert_eq!(pooled, input);
    }

    #[test]
    fn relu_and_sigmoid_point_values() {
        let x: Tensor<f64> = Tensor::from_vec([1, 1, 3, 1], vec![-1.0, 0.0, 2.0]).unwrap();
        let r = activation(&x, Activation::Relu);
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
        let s = activation(&x, Activation::Sigmoid);
        assert!((s.data()[1] - 0.5).abs() < 1e-15);
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn relu_gradient_is_zero_at_exactly_zero() {
        let x = Tensor::from_vec([1, 1, 3, 1], vec![-1.0, 0.0, 2.0]).unwrap();
        let upstream: Tensor<f64> = Tensor::filled([1, 1, 3, 1], 5.0);
        let g = activation_grad(&x, &upstream, Activation::Relu).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn mse_of_identical_tensors_is_zero_with_zero_gradient() {
        let x = rand_tensor(25, [1, 3, 3, 1], 0.0, 1.0);
        let (v, d) = loss(&x, &x.clone(), LossKind::Mse).unwrap();
        assert_eq!(v, 0.0);
        assert!(d.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn bce_at_half_is_ln_two() {
        let pred: Tensor<f64> = Tensor::filled([1, 2, 2, 1], 0.5);
        let target: Tensor<f64> = Tensor::filled([1, 2, 2, 1], 0.5);
        let (v, _) = loss(&pred, &target, LossKind::Bce).unwrap();
        // -(0.5 ln 0.5 + 0.5 ln 0.5) = ln 2 per element
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn losses_reject_shape_mismatch() {
        let a: Tensor<f64> = Tensor::zeros([1, 2, 2, 1]);
        let b: Tensor<f64> = Tensor::zeros([1, 2, 3, 1]);
        assert!(loss(&a, &b, LossKind::Mse).is_err());
    }

    #[test]
    fn bce_clamps_out_of_range_predictions() {
        let pred: Tensor<f64> = Tensor::from_vec([1, 1, 2, 1], vec![0.0, 1.0]).unwrap();
        let target: Tensor<f64> = Tensor::from_vec([1, 1, 2, 1], vec![0.0, 1.0]).unwrap();
        let (v, d) = loss(&pred, &target, LossKind::Bce).unwrap();
        assert!(v.is_finite());
        // clamped coordinates carry zero gradient
        assert_eq!(d.data(), &[0.0, 0.0]);
    }

    #[test]
    fn kernels_keep_outputs_finite_on_finite_inputs() {
        let input = rand_tensor(26, [2, 4, 4, 2], -10.0, 10.0);
        let w = rand_weights(27, 3, 3, 2, 4);
        let out = conv2d(&input, &w, false).unwrap();
        assert!(out.all_finite());
        let act = activation(&out, Activation::Sigmoid);
        assert!(act.all_finite());
        let (pooled, mask) = maxpool2(&input).unwrap();
        assert!(pooled.all_finite());
        assert!(maxpool2_backward(&mask, &pooled).unwrap().all_finite());
    }
}
