//! Layer kernels. Forward passes are generic over the element type, backward
//! passes run in `f64`.

use super::tensor::{gemm, Mat, Scalar, Tensor};
use crate::error::{Error, Result};

/// Same-padded, stride-1 2D convolution (cross-correlation).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T = f64> {
    /// `[out_ch, in_ch, kh, kw]`
    pub weight: Tensor<T>,
    /// `[out_ch]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let s = weight.shape();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch(format!("conv weight must be rank 4, got {s:?}")));
        }
        if s[2].is_multiple_of(2) || s[3].is_multiple_of(2) {
            return Err(Error::ShapeMismatch(format!(
                "conv kernel must be odd-sized, got {}x{}",
                s[2], s[3]
            )));
        }
        if bias.shape() != [s[0]] {
            return Err(Error::ShapeMismatch(format!(
                "conv bias {:?} does not match {} output channels",
                bias.shape(),
                s[0]
            )));
        }
        Ok(Conv2d { weight, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    pub fn cast<U: Scalar>(&self) -> Conv2d<U> {
        Conv2d {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
        let &[n, c, h, w] = x.shape() else {
            return Err(Error::ShapeMismatch(format!(
                "conv input must be [N,C,H,W], got {:?}",
                x.shape()
            )));
        };
        let (kh, kw) = self.kernel();
        if c != self.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        if h < kh || w < kw {
            return Err(Error::ShapeMismatch(format!(
                "conv input {h}x{w} smaller than kernel {kh}x{kw}"
            )));
        }
        Ok((n, c, h, w))
    }
}

/// Fully connected layer `y = x W^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T = f64> {
    /// `[out_dim, in_dim]`
    pub weight: Tensor<T>,
    /// `[out_dim]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let s = weight.shape();
        if s.len() != 2 || bias.shape() != [s[0]] {
            return Err(Error::ShapeMismatch(format!(
                "dense weight {s:?} / bias {:?} inconsistent",
                bias.shape()
            )));
        }
        Ok(Dense { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn cast<U: Scalar>(&self) -> Dense<U> {
        Dense {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Unrolls the receptive fields of one sample into a `[c*kh*kw, h*w]` matrix
/// (zero padding outside the image).
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, kh: usize, kw: usize, cols: &mut [T]) {
    let (ph, pw) = (kh / 2, kw / 2);
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                // output column range whose source x stays in bounds
                let x_lo = pw.saturating_sub(kx);
                let x_hi = (w + pw).saturating_sub(kx).min(w);
                for oy in 0..h {
                    let line = &mut dst[oy * w..(oy + 1) * w];
                    let sy = oy as isize + ky as isize - ph as isize;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        line.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    line[..x_lo].fill(T::ZERO);
                    line[x_hi..].fill(T::ZERO);
                    let off = x_lo + kx - pw;
                    line[x_lo..x_hi].copy_from_slice(&src[off..off + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Scatters a column matrix back onto one sample, accumulating overlaps.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize, x: &mut [f64]) {
    let (ph, pw) = (kh / 2, kw / 2);
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let x_lo = pw.saturating_sub(kx);
                let x_hi = (w + pw).saturating_sub(kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for oy in 0..h {
                    let sy = oy as isize + ky as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let off = x_lo + kx - pw;
                    let dst = &mut plane[sy as usize * w + off..sy as usize * w + off + (x_hi - x_lo)];
                    for (d, s) in dst.iter_mut().zip(&src[oy * w + x_lo..oy * w + x_hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, layer: &Conv2d<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = layer.check_input(x)?;
    let (kh, kw) = layer.kernel();
    let o = layer.out_channels();
    let k = c * kh * kw;
    let hw = h * w;
    let mut cols = vec![T::ZERO; k * hw];
    let mut out = Tensor::zeros(&[n, o, h, w]);
    let wmat = Mat::row_major(layer.weight.data(), o, k);
    for (xs, ys) in x
        .data()
        .chunks_exact(c * hw)
        .zip(out.data_mut().chunks_exact_mut(o * hw))
    {
        im2col(xs, c, h, w, kh, kw, &mut cols);
        for (plane, &b) in ys.chunks_exact_mut(hw).zip(layer.bias.data()) {
            plane.fill(b);
        }
        gemm(wmat, Mat::row_major(&cols, k, hw), T::ONE, ys);
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its input, weights and bias.
pub struct ConvGrads {
    pub grad_x: Option<Tensor>,
    pub grad_w: Tensor,
    pub grad_b: Tensor,
}

pub fn conv2d_backward(x: &Tensor, layer: &Conv2d, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let g = conv2d_backward_inner(x, layer, grad_out, true)?;
    Ok((g.grad_x.expect("requested"), g.grad_w, g.grad_b))
}

pub(crate) fn conv2d_backward_inner(
    x: &Tensor,
    layer: &Conv2d,
    grad_out: &Tensor,
    want_grad_x: bool,
) -> Result<ConvGrads> {
    let (n, c, h, w) = layer.check_input(x)?;
    let (kh, kw) = layer.kernel();
    let o = layer.out_channels();
    if grad_out.shape() != [n, o, h, w] {
        return Err(Error::ShapeMismatch(format!(
            "conv grad_out {:?} does not match output [{n},{o},{h},{w}]",
            grad_out.shape()
        )));
    }
    let k = c * kh * kw;
    let hw = h * w;
    let mut cols = vec![0.0; k * hw];
    let mut gcols = vec![0.0; k * hw];
    let mut grad_w = Tensor::zeros(layer.weight.shape());
    let mut grad_b = Tensor::zeros(&[o]);
    let mut grad_x = want_grad_x.then(|| Tensor::zeros(x.shape()));
    let wmat = Mat::row_major(layer.weight.data(), o, k);
    for i in 0..n {
        let xs = &x.data()[i * c * hw..(i + 1) * c * hw];
        let gs = &grad_out.data()[i * o * hw..(i + 1) * o * hw];
        im2col(xs, c, h, w, kh, kw, &mut cols);
        // dW += dY * cols^T
        gemm(
            Mat::row_major(gs, o, hw),
            Mat::row_major(&cols, k, hw).t(),
            1.0,
            grad_w.data_mut(),
        );
        for (gb, plane) in grad_b.data_mut().iter_mut().zip(gs.chunks_exact(hw)) {
            *gb += plane.iter().sum::<f64>();
        }
        if let Some(gx) = grad_x.as_mut() {
            gemm(wmat.t(), Mat::row_major(gs, o, hw), 0.0, &mut gcols);
            col2im(
                &gcols,
                c,
                h,
                w,
                kh,
                kw,
                &mut gx.data_mut()[i * c * hw..(i + 1) * c * hw],
            );
        }
    }
    Ok(ConvGrads { grad_x, grad_w, grad_b })
}

/// Argmax bookkeeping of a 2x2 max-pool: the winning position (0..4, row-major
/// within the window) of every output element.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    winners: Vec<u8>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn winners(&self) -> &[u8] {
        &self.winners
    }
}

pub fn maxpool2d_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "max-pool input must be [N,C,H,W], got {:?}",
            x.shape()
        )));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddDimension { height: h, width: w });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut winners = vec![0u8; n * c * oh * ow];
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let at = |dy: usize, dx: usize| src[base + (2 * oy + dy) * w + 2 * ox + dx];
                let candidates = [at(0, 0), at(0, 1), at(1, 0), at(1, 1)];
                let mut best = 0;
                for (i, &v) in candidates.iter().enumerate().skip(1) {
                    // strict comparison keeps the first index on ties
                    if v > candidates[best] {
                        best = i;
                    }
                }
                let o = plane * oh * ow + oy * ow + ox;
                dst[o] = candidates[best];
                winners[o] = best as u8;
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            input_shape: x.shape().to_vec(),
            winners,
        },
    ))
}

pub fn maxpool2d_backward(indices: &PoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    let &[n, c, h, w] = indices.input_shape.as_slice() else {
        unreachable!("indices come from a 4D forward pass");
    };
    let (oh, ow) = (h / 2, w / 2);
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(Error::ShapeMismatch(format!(
            "max-pool grad_out {:?} does not match [{n},{c},{oh},{ow}]",
            grad_out.shape()
        )));
    }
    let mut grad_x = Tensor::zeros(&indices.input_shape);
    let gx = grad_x.data_mut();
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = plane * oh * ow + oy * ow + ox;
                let win = indices.winners[o] as usize;
                let (dy, dx) = (win / 2, win % 2);
                gx[plane * h * w + (2 * oy + dy) * w + 2 * ox + dx] += grad_out.data()[o];
            }
        }
    }
    Ok(grad_x)
}

pub fn dense_forward<T: Scalar>(x: &Tensor<T>, layer: &Dense<T>) -> Result<Tensor<T>> {
    let &[n, d] = x.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "dense input must be [N,D], got {:?}",
            x.shape()
        )));
    };
    if d != layer.in_dim() {
        return Err(Error::ShapeMismatch(format!(
            "dense expects {} inputs, got {d}",
            layer.in_dim()
        )));
    }
    let o = layer.out_dim();
    let mut out = Tensor::zeros(&[n, o]);
    for row in out.data_mut().chunks_exact_mut(o) {
        row.copy_from_slice(layer.bias.data());
    }
    gemm(
        Mat::row_major(x.data(), n, d),
        Mat::row_major(layer.weight.data(), o, d).t(),
        T::ONE,
        out.data_mut(),
    );
    Ok(out)
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn dense_backward(x: &Tensor, layer: &Dense, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (gx, gw, gb) = dense_backward_inner(x, layer, grad_out, true)?;
    Ok((gx.expect("requested"), gw, gb))
}

pub(crate) fn dense_backward_inner(
    x: &Tensor,
    layer: &Dense,
    grad_out: &Tensor,
    want_grad_x: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let (d, o) = (layer.in_dim(), layer.out_dim());
    let n = x.shape()[0];
    if x.shape() != [n, d] || grad_out.shape() != [n, o] {
        return Err(Error::ShapeMismatch(format!(
            "dense backward shapes x {:?} grad_out {:?} vs layer {o}x{d}",
            x.shape(),
            grad_out.shape()
        )));
    }
    let g = Mat::row_major(grad_out.data(), n, o);
    let mut grad_w = Tensor::zeros(&[o, d]);
    gemm(g.t(), Mat::row_major(x.data(), n, d), 0.0, grad_w.data_mut());
    let mut grad_b = Tensor::zeros(&[o]);
    for row in grad_out.data().chunks_exact(o) {
        for (b, &v) in grad_b.data_mut().iter_mut().zip(row) {
            *b += v;
        }
    }
    let grad_x = want_grad_x.then(|| {
        let mut gx = Tensor::zeros(&[n, d]);
        gemm(g, Mat::row_major(layer.weight.data(), o, d), 0.0, gx.data_mut());
        gx
    });
    Ok((grad_x, grad_w, grad_b))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Passes `grad_out` where `x > 0`, zero elsewhere.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch(format!(
            "relu backward {:?} vs {:?}",
            x.shape(),
            grad_out.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let &[_, c] = logits.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "softmax input must be [N,C], got {:?}",
            logits.shape()
        )));
    };
    if c < 2 {
        return Err(Error::ShapeMismatch("softmax needs at least 2 classes".into()));
    }
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        let max = row.iter().copied().fold(row[0], |m, v| if v > m { v } else { m });
        let mut total = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    out.ensure_finite("softmax")
}

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean negative log-likelihood of the true classes.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let &[n, c] = probs.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "cross-entropy input must be [N,C], got {:?}",
            probs.shape()
        )));
    };
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for (row, &label) in probs.data().chunks_exact(c).zip(labels) {
        if label >= c {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        total -= row[label].max(PROB_FLOOR).ln();
    }
    Ok(total / n as f64)
}

/// Gradient of mean cross-entropy with respect to the logits feeding the
/// softmax: `(p - onehot) / N`.
pub fn softmax_cross_entropy_grad(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let &[n, c] = probs.shape() else {
        return Err(Error::ShapeMismatch("expected [N,C] probabilities".into()));
    };
    let mut g = probs.clone();
    for (row, &label) in g.data_mut().chunks_exact_mut(c).zip(labels) {
        if label >= c {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }
    Ok(g)
}
