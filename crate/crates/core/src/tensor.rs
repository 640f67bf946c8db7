//! Dense rank-4 tensors, single-channel images, and convolution weights.
//!
//! Tensors are laid out row-major with the batch dimension outermost and
//! channels innermost: index (b, y, x, c) maps to
//! `((b * height + y) * width + x) * channels + c`.

use crate::scalar::Scalar;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("data length {got} does not match shape {shape:?} (needs {expected})")]
    LengthMismatch {
        shape: [usize; 4],
        expected: usize,
        got: usize,
    },
    #[error("{context}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: [usize; 4],
        got: [usize; 4],
    },
    #[error("{context}: input has {got} channels but the kernels take {expected}")]
    ChannelMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("kernel extents must be odd, got {kh}x{kw}")]
    EvenKernel { kh: usize, kw: usize },
    #[error("{context}: spatial extents must be even, got {height}x{width}")]
    OddSpatial {
        context: &'static str,
        height: usize,
        width: usize,
    },
    #[error("bias length {got} does not match output channel count {expected}")]
    BiasMismatch { expected: usize, got: usize },
}

/// Dense (batch, height, width, channels) array of scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S = f32> {
    shape: [usize; 4],
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: [usize; 4], value: S) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<S>) -> Result<Self, TensorError> {
        let expected = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor by evaluating `f` at every (b, y, x, c) index.
    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> S) -> Self {
        let mut t = Tensor::zeros(shape);
        let mut i = 0;
        for b in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    for c in 0..shape[3] {
                        t.data[i] = f(b, y, x, c);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, b: usize, y: usize, x: usize, c: usize) -> usize {
        ((b * self.shape[1] + y) * self.shape[2] + x) * self.shape[3] + c
    }

    #[inline]
    pub fn at(&self, b: usize, y: usize, x: usize, c: usize) -> S {
        self.data[self.idx(b, y, x, c)]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, y: usize, x: usize, c: usize) -> &mut S {
        let i = self.idx(b, y, x, c);
        &mut self.data[i]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor<S>, context: &'static str) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                context,
                expected: self.shape,
                got: other.shape,
            });
        }
        Ok(())
    }
}

/// Single-channel image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<S = f32> {
    height: usize,
    width: usize,
    data: Vec<S>,
}

impl<S: Scalar> Image<S> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: vec![S::zero(); height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: S) -> Self {
        Image {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<S>) -> Result<Self, TensorError> {
        if data.len() != height * width {
            return Err(TensorError::LengthMismatch {
                shape: [1, height, width, 1],
                expected: height * width,
                got: data.len(),
            });
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut img = Image::zeros(height, width);
        let mut i = 0;
        for y in 0..height {
            for x in 0..width {
                img.data[i] = f(y, x);
                i += 1;
            }
        }
        img
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> S {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize) -> &mut S {
        &mut self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (S, S) {
        let mut lo = S::infinity();
        let mut hi = S::neg_infinity();
        for &v in &self.data {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        (lo, hi)
    }
}

/// Stacks same-sized single-channel images into an (n, h, w, 1) tensor.
pub fn images_to_tensor<S: Scalar>(images: &[Image<S>]) -> Result<Tensor<S>, TensorError> {
    let (h, w) = match images.first() {
        Some(img) => (img.height(), img.width()),
        None => return Ok(Tensor::zeros([0, 0, 0, 1])),
    };
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.height() != h || img.width() != w {
            return Err(TensorError::ShapeMismatch {
                context: "images_to_tensor",
                expected: [1, h, w, 1],
                got: [1, img.height(), img.width(), 1],
            });
        }
        data.extend_from_slice(img.data());
    }
    Tensor::from_vec([images.len(), h, w, 1], data)
}

/// Splits an (n, h, w, 1) tensor back into n images.
pub fn tensor_to_images<S: Scalar>(t: &Tensor<S>) -> Result<Vec<Image<S>>, TensorError> {
    if t.channels() != 1 {
        return Err(TensorError::ChannelMismatch {
            context: "tensor_to_images",
            expected: 1,
            got: t.channels(),
        });
    }
    let (h, w) = (t.height(), t.width());
    let per = h * w;
    Ok((0..t.batch())
        .map(|b| Image {
            height: h,
            width: w,
            data: t.data()[b * per..(b + 1) * per].to_vec(),
        })
        .collect())
}

/// Convolution parameters: kernels shaped (kernelH, kernelW, inChannels,
/// outChannels) plus one bias per output feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights<S = f32> {
    kernels: Tensor<S>,
    bias: Vec<S>,
}

impl<S: Scalar> ConvWeights<S> {
    /// Zero-initialized weights for the given kernel geometry.
    pub fn zeros(kh: usize, kw: usize, cin: usize, cout: usize) -> Result<Self, TensorError> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(TensorError::EvenKernel { kh, kw });
        }
        Ok(ConvWeights {
            kernels: Tensor::zeros([kh, kw, cin, cout]),
            bias: vec![S::zero(); cout],
        })
    }

    pub fn from_parts(kernels: Tensor<S>, bias: Vec<S>) -> Result<Self, TensorError> {
        let [kh, kw, _, cout] = kernels.shape();
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(TensorError::EvenKernel { kh, kw });
        }
        if bias.len() != cout {
            return Err(TensorError::BiasMismatch {
                expected: cout,
                got: bias.len(),
            });
        }
        Ok(ConvWeights { kernels, bias })
    }

    /// Same geometry as `self`, all values zero.
    pub fn zeros_like(&self) -> Self {
        ConvWeights {
            kernels: Tensor::zeros(self.kernels.shape()),
            bias: vec![S::zero(); self.bias.len()],
        }
    }

    #[inline]
    pub fn kernel_h(&self) -> usize {
        self.kernels.shape()[0]
    }

    #[inline]
    pub fn kernel_w(&self) -> usize {
        self.kernels.shape()[1]
    }

    #[inline]
    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[2]
    }

    #[inline]
    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[3]
    }

    #[inline]
    pub fn kernels(&self) -> &Tensor<S> {
        &self.kernels
    }

    #[inline]
    pub fn kernel_data(&self) -> &[S] {
        self.kernels.data()
    }

    #[inline]
    pub fn kernel_data_mut(&mut self) -> &mut [S] {
        self.kernels.data_mut()
    }

    #[inline]
    pub fn bias(&self) -> &[S] {
        &self.bias
    }

    #[inline]
    pub fn bias_mut(&mut self) -> &mut [S] {
        &mut self.bias
    }

    /// Kernel element count plus bias count.
    pub fn param_count(&self) -> usize {
        self.kernels.len() + self.bias.len()
    }

    pub fn same_geometry(&self, other: &ConvWeights<S>) -> bool {
        self.kernels.shape() == other.kernels.shape() && self.bias.len() == other.bias.len()
    }

    pub fn all_finite(&self) -> bool {
        self.kernels.all_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}
