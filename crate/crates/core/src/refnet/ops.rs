use crate::error::{Error, Result};
use crate::matcore::{Mat, Scalar, Tensor4};
use crate::refnet::{BatchNorm, Conv, Dense, LayerNorm, Mha};

pub fn dense_fwd<T: Scalar>(x: &Mat<T>, l: &Dense<T>) -> Result<Mat<T>> {
    if x.cols() != l.inputs() {
        return Err(Error::shape(
            "dense",
            format!(
                "input has {} columns, layer expects {}",
                x.cols(),
                l.inputs()
            ),
        ));
    }
    x.matmul(&l.weight.transpose())?.add_row_broadcast(&l.bias)
}

/// Lowers one sample to a `(c*kh*kw) x (oh*ow)` patch matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &Tensor4<T>,
    sample: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Mat<T> {
    let (c, h, w) = (x.c(), x.h(), x.w());
    let mut cols = Mat::zeros(c * kh * kw, oh * ow);
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let r = (ch * kh + ky) * kw + kx;
                let row = cols.row_mut(r);
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        row[oy * ow + ox] = x[(sample, ch, iy as usize, ix as usize)];
                    }
                }
            }
        }
    }
    cols
}

/// Convolution without bias.
pub fn conv_linear<T: Scalar>(
    x: &Tensor4<T>,
    kernels: &Tensor4<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor4<T>> {
    let [out_ch, in_ch, kh, kw] = kernels.dims();
    if x.c() != in_ch {
        return Err(Error::shape(
            "conv",
            format!("input has {} channels, kernels expect {in_ch}", x.c()),
        ));
    }
    let probe = Conv {
        kernels: kernels.clone(),
        bias: vec![T::ZERO; out_ch],
        stride,
        padding,
    };
    let (oh, ow) = probe.output_hw(x.h(), x.w())?;
    let kmat = Mat::new(out_ch, in_ch * kh * kw, kernels.as_slice().to_vec())?;
    let mut data = Vec::with_capacity(x.n() * out_ch * oh * ow);
    for a in 0..x.n() {
        let cols = im2col(x, a, kh, kw, stride, padding, oh, ow);
        data.extend(kmat.matmul(&cols)?.into_vec());
    }
    Tensor4::new([x.n(), out_ch, oh, ow], data)
}

pub fn conv_fwd<T: Scalar>(x: &Tensor4<T>, l: &Conv<T>) -> Result<Tensor4<T>> {
    let y = conv_linear(x, &l.kernels, l.stride, l.padding)?;
    let bias = Mat::from_fn(y.n(), y.c(), |_, k| l.bias[k]);
    y.add_channel_bias(&bias)
}

/// Applies frozen batch statistics per channel (4-D) or per column (2-D).
pub fn batchnorm_fwd<T: Scalar>(x: &Tensor4<T>, bn: &BatchNorm<T>) -> Result<Tensor4<T>> {
    if x.c() != bn.channels() {
        return Err(Error::shape(
            "batchnorm",
            format!("{} channels vs {} parameters", x.c(), bn.channels()),
        ));
    }
    let (scale, shift) = bn.affine()?;
    let hw = x.h() * x.w();
    let mut out = x.clone();
    let c = x.c();
    for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
        let ch = (i / hw) % c;
        *v = *v * scale[ch] + shift[ch];
    }
    Ok(out)
}

/// Folds a following batch normalization into the convolution.
pub fn bn_fuse<T: Scalar>(conv: &Conv<T>, bn: &BatchNorm<T>) -> Result<Conv<T>> {
    if bn.channels() != conv.out_channels() {
        return Err(Error::shape(
            "bn_fuse",
            format!(
                "{} bn channels vs {} conv outputs",
                bn.channels(),
                conv.out_channels()
            ),
        ));
    }
    let (scale, shift) = bn.affine()?;
    let [_, in_ch, kh, kw] = conv.kernels.dims();
    let per_out = in_ch * kh * kw;
    let mut kernels = conv.kernels.clone();
    for (i, v) in kernels.as_mut_slice().iter_mut().enumerate() {
        *v *= scale[i / per_out];
    }
    let bias = (0..bn.channels())
        .map(|k| shift[k] + conv.bias[k] * scale[k])
        .collect();
    Conv::new(kernels, bias, conv.stride, conv.padding)
}

/// Non-overlapping `k x k` window means.
pub fn avgpool_fwd<T: Scalar>(x: &Tensor4<T>, k: usize) -> Result<Tensor4<T>> {
    if k == 0 || !x.h().is_multiple_of(k) || !x.w().is_multiple_of(k) {
        return Err(Error::shape(
            "avgpool",
            format!("{}x{} is not divisible by window {k}", x.h(), x.w()),
        ));
    }
    let (oh, ow) = (x.h() / k, x.w() / k);
    let inv = T::ONE / T::from_f64((k * k) as f64);
    Ok(Tensor4::from_fn([x.n(), x.c(), oh, ow], |a, c, y, xx| {
        let mut s = T::ZERO;
        for dy in 0..k {
            for dx in 0..k {
                s += x[(a, c, y * k + dy, xx * k + dx)];
            }
        }
        s * inv
    }))
}

pub fn flatten_fwd<T: Scalar>(x: &Tensor4<T>) -> Mat<T> {
    x.flatten()
}

#[inline]
pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::ZERO {
        x
    } else {
        T::ZERO
    }
}

/// `x·Φ(x)` with the exact Gaussian CDF.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    x * half * (T::ONE + (x * inv_sqrt2).erf())
}

pub fn softmax_rows<T: Scalar>(x: &Mat<T>) -> Mat<T> {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let m = row.iter().copied().fold(row[0], Scalar::max);
        let mut sum = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Large negative score used for masked-out positions.
const MASKED_SCORE: f64 = -1e30;

/// Scaled dot-product attention over all heads; `allowed(i, j)` gates score `(i, j)`.
pub(crate) fn attention<T: Scalar>(
    x: &Mat<T>,
    wq: &Mat<T>,
    wk: &Mat<T>,
    wv: &Mat<T>,
    wo: &Mat<T>,
    heads: usize,
    allowed: Option<&dyn Fn(usize, usize) -> bool>,
) -> Result<Mat<T>> {
    let d_model = wq.rows();
    if x.cols() != d_model {
        return Err(Error::shape(
            "mha",
            format!("input has {} columns, d_model is {d_model}", x.cols()),
        ));
    }
    if heads == 0 || !d_model.is_multiple_of(heads) {
        return Err(Error::InvalidArgument(format!(
            "d_model {d_model} is not divisible by {heads} heads"
        )));
    }
    let d = d_model / heads;
    let q = x.matmul(wq)?;
    let k = x.matmul(wk)?;
    let v = x.matmul(wv)?;
    let seq = x.rows();
    let scale = T::ONE / T::from_f64(d as f64).sqrt();
    let mut concat = Mat::zeros(seq, d_model);
    for h in 0..heads {
        let qh = q.submatrix(0, seq, h * d, d);
        let kh = k.submatrix(0, seq, h * d, d);
        let vh = v.submatrix(0, seq, h * d, d);
        let mut scores = qh.matmul(&kh.transpose())?.scale(scale);
        if let Some(allowed) = allowed {
            for i in 0..seq {
                for j in 0..seq {
                    if !allowed(i, j) {
                        scores[(i, j)] = T::from_f64(MASKED_SCORE);
                    }
                }
            }
        }
        let head = softmax_rows(&scores).matmul(&vh)?;
        for i in 0..seq {
            concat.row_mut(i)[h * d..(h + 1) * d].copy_from_slice(head.row(i));
        }
    }
    concat.matmul(wo)
}

pub fn mha_fwd<T: Scalar>(x: &Mat<T>, l: &Mha<T>) -> Result<Mat<T>> {
    let causal = |i: usize, j: usize| j <= i;
    let allowed: Option<&dyn Fn(usize, usize) -> bool> =
        if l.causal { Some(&causal) } else { None };
    attention(x, &l.wq, &l.wk, &l.wv, &l.wo, l.heads, allowed)
}

/// Row-wise standardization `(x - mean) / sqrt(var + eps)`.
pub fn norm_rows<T: Scalar>(x: &Mat<T>, eps: T) -> Mat<T> {
    let mut out = x.clone();
    let n = T::from_f64(x.cols() as f64);
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::ONE / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}

pub fn layernorm_fwd<T: Scalar>(x: &Mat<T>, l: &LayerNorm<T>) -> Result<Mat<T>> {
    if x.cols() != l.dim() {
        return Err(Error::shape(
            "layernorm",
            format!("input has {} columns, layer has {}", x.cols(), l.dim()),
        ));
    }
    let mut y = norm_rows(x, l.eps);
    for i in 0..y.rows() {
        for ((v, &g), &b) in y.row_mut(i).iter_mut().zip(&l.gamma).zip(&l.beta) {
            *v = *v * g + b;
        }
    }
    Ok(y)
}
