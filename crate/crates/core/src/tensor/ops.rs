use rand::Rng;

use super::{Real, Result, Tensor, TensorError};
use crate::tensor::ProbVector;

/// Forward-pass mode. Dropout is the only mode-dependent op.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

const K: usize = 3;

fn conv_dims<T: Real>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    input.expect_rank("conv2d", 3)?;
    weight.expect_rank("conv2d", 4)?;
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let f = weight.shape()[0];
    if weight.shape()[1..] != [c, K, K] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d weight",
            expected: vec![f, c, K, K],
            found: weight.shape().to_vec(),
        });
    }
    Ok((c, h, w, f))
}

/// Unfolds 3x3 same-padded windows into a `[c*9, h*w]` matrix.
fn im2col<T: Real>(src: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); c * K * K * hw];
    for ch in 0..c {
        let plane = &src[ch * hw..(ch + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &mut cols[((ch * K + ky) * K + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    // x range where x + kx - 1 stays inside [0, w)
                    let x0 = if kx == 0 { 1 } else { 0 };
                    let x1 = if kx == 2 { w - 1 } else { w };
                    for x in x0..x1 {
                        dst[x] = src_row[x + kx - 1];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); c * hw];
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &cols[((ch * K + ky) * K + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    let x0 = if kx == 0 { 1 } else { 0 };
                    let x1 = if kx == 2 { w - 1 } else { w };
                    for x in x0..x1 {
                        dst_row[x + kx - 1] += src[x];
                    }
                }
            }
        }
    }
    out
}

/// 3x3 convolution, stride 1, one pixel of zero padding.
pub fn conv2d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w, f) = conv_dims(input, weight)?;
    if bias.shape() != [f] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d bias",
            expected: vec![f],
            found: bias.shape().to_vec(),
        });
    }
    let hw = h * w;
    let cols = im2col(input.data(), c, h, w);
    let mut out = Vec::with_capacity(f * hw);
    for &b in bias.data() {
        out.extend(std::iter::repeat_n(b, hw));
    }
    T::gemm(f, c * K * K, hw, weight.data(), false, &cols, false, T::one(), &mut out);
    Tensor::new(vec![f, h, w], out)
}

/// Gradients of a [`conv2d`] call. `input` is `None` when not requested.
#[derive(Debug, Clone)]
pub struct ConvGrads<T: Real> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let (c, h, w, f) = conv_dims(input, weight)?;
    if grad_out.shape() != [f, h, w] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_backward",
            expected: vec![f, h, w],
            found: grad_out.shape().to_vec(),
        });
    }
    let hw = h * w;
    let ck = c * K * K;
    let cols = im2col(input.data(), c, h, w);
    let mut gw = vec![T::zero(); f * ck];
    T::gemm(f, hw, ck, grad_out.data(), false, &cols, true, T::zero(), &mut gw);
    let gb: Vec<T> = grad_out.data().chunks_exact(hw).map(|p| p.iter().copied().sum()).collect();
    let gi = if need_input_grad {
        let mut gcols = vec![T::zero(); ck * hw];
        T::gemm(ck, f, hw, weight.data(), true, grad_out.data(), false, T::zero(), &mut gcols);
        Some(Tensor::new(vec![c, h, w], col2im(&gcols, c, h, w))?)
    } else {
        None
    };
    Ok(ConvGrads {
        input: gi,
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![f], gb)?,
    })
}

/// Flat input positions selected by a 2x2 max pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgmaxIndices {
    pub input_shape: Vec<usize>,
    pub indices: Vec<u32>,
}

/// 2x2 max pooling with stride 2. Ties resolve to the first window
/// position in row-major order.
pub fn maxpool2<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, ArgmaxIndices)> {
    input.expect_rank("maxpool2", 3)?;
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::OddSpatial {
            op: "maxpool2",
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let base = ch * h * w + 2 * y * w + 2 * x;
                let mut best = base;
                for cand in [base + 1, base + w, base + w + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                out.push(src[best]);
                idx.push(best as u32);
            }
        }
    }
    Ok((
        Tensor::new(vec![c, oh, ow], out)?,
        ArgmaxIndices {
            input_shape: input.shape().to_vec(),
            indices: idx,
        },
    ))
}

pub fn maxpool2_backward<T: Real>(grad_out: &Tensor<T>, argmax: &ArgmaxIndices) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.indices.len() {
        return Err(TensorError::ShapeMismatch {
            op: "maxpool2_backward",
            expected: vec![argmax.indices.len()],
            found: grad_out.shape().to_vec(),
        });
    }
    let mut g = Tensor::zeros(&argmax.input_shape);
    let gd = g.data_mut();
    for (&i, &v) in argmax.indices.iter().zip(grad_out.data()) {
        gd[i as usize] += v;
    }
    Ok(g)
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Passes `grad` through where the forward output was positive.
pub fn relu_backward<T: Real>(output: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(grad.shape().to_vec(), data).expect("relu_backward shapes agree")
}

fn linear_dims<T: Real>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize)> {
    weight.expect_rank("linear", 2)?;
    let (d_out, d_in) = (weight.shape()[0], weight.shape()[1]);
    if input.len() != d_in {
        return Err(TensorError::ShapeMismatch {
            op: "linear input",
            expected: vec![d_in],
            found: input.shape().to_vec(),
        });
    }
    Ok((d_out, d_in))
}

/// `y = W x + b`. Any input shape is flattened.
pub fn linear<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (d_out, d_in) = linear_dims(input, weight)?;
    if bias.shape() != [d_out] {
        return Err(TensorError::ShapeMismatch {
            op: "linear bias",
            expected: vec![d_out],
            found: bias.shape().to_vec(),
        });
    }
    let mut out = bias.data().to_vec();
    T::gemm(d_out, d_in, 1, weight.data(), false, input.data(), false, T::one(), &mut out);
    Tensor::new(vec![d_out], out)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T: Real> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<LinearGrads<T>> {
    let (d_out, d_in) = linear_dims(input, weight)?;
    if grad_out.len() != d_out {
        return Err(TensorError::ShapeMismatch {
            op: "linear_backward",
            expected: vec![d_out],
            found: grad_out.shape().to_vec(),
        });
    }
    let mut gw = vec![T::zero(); d_out * d_in];
    T::gemm(d_out, 1, d_in, grad_out.data(), false, input.data(), false, T::zero(), &mut gw);
    let gi = if need_input_grad {
        let mut gi = vec![T::zero(); d_in];
        T::gemm(d_in, d_out, 1, weight.data(), true, grad_out.data(), false, T::zero(), &mut gi);
        Some(Tensor::new(input.shape().to_vec(), gi)?)
    } else {
        None
    };
    Ok(LinearGrads {
        input: gi,
        weight: Tensor::new(vec![d_out, d_in], gw)?,
        bias: Tensor::new(vec![d_out], grad_out.data().to_vec())?,
    })
}

/// Numerically stable softmax (max-shifted).
pub fn softmax<T: Real>(logits: &Tensor<T>) -> ProbVector<T> {
    let max = logits
        .data()
        .iter()
        .copied()
        .fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.data().iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    ProbVector::from_normalized(Tensor::from_vec(exps.into_iter().map(|e| e / total).collect()))
}

/// Per-element scale factors of an inverted-dropout draw: 0 or 1/(1-p).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask<T: Real> {
    pub scale: Vec<T>,
}

impl<T: Real> DropoutMask<T> {
    pub fn apply(&self, t: &Tensor<T>) -> Tensor<T> {
        let data = t.data().iter().zip(&self.scale).map(|(&x, &s)| x * s).collect();
        Tensor::new(t.shape().to_vec(), data).expect("mask matches tensor")
    }
}

/// Inverted dropout; returns the mask used in train mode so the backward
/// pass can replay it.
pub fn dropout_with_mask<T: Real, R: Rng + ?Sized>(
    input: &Tensor<T>,
    p: f32,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<DropoutMask<T>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(TensorError::Config(format!("dropout probability {p} not in [0,1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::lit(1.0 / (1.0 - p as f64));
    let scale: Vec<T> = (0..input.len())
        .map(|_| if rng.random::<f32>() < p { T::zero() } else { keep })
        .collect();
    let mask = DropoutMask { scale };
    Ok((mask.apply(input), Some(mask)))
}

pub fn dropout<T: Real, R: Rng + ?Sized>(input: &Tensor<T>, p: f32, mode: Mode, rng: &mut R) -> Result<Tensor<T>> {
    dropout_with_mask(input, p, mode, rng).map(|(t, _)| t)
}
