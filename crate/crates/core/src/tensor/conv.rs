//! Convolution and pooling kernels on NCHW buffers.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Output extent of a strided, zero-padded window along one axis.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    let padded = input + 2 * padding;
    if kernel == 0 || kernel > padded {
        return Err(Error::invalid(format!(
            "kernel extent {kernel} larger than padded input extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_ch: usize,
    pub h: usize,
    pub w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (&[batch, in_ch, h, w], &[out_ch, kc, kh, kw]) = (input, kernel) else {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: kernel.to_vec(),
            });
        };
        if kc != in_ch {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: kernel.to_vec(),
            });
        }
        let oh = conv_output_extent(h, kh, stride, padding)?;
        let ow = conv_output_extent(w, kw, stride, padding)?;
        Ok(Self {
            batch,
            in_ch,
            h,
            w,
            out_ch,
            kh,
            kw,
            stride,
            padding,
            oh,
            ow,
        })
    }

    /// Rows of one image's column matrix.
    pub fn col_rows(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_ch, self.oh, self.ow]
    }
}

fn im2col<T: Scalar>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    let (s, p) = (g.stride as isize, g.padding as isize);
    for c in 0..g.in_ch {
        let chan = &image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oh in 0..g.oh {
                    let ih = oh as isize * s + ki as isize - p;
                    let out_row = &mut dst[oh * g.ow..(oh + 1) * g.ow];
                    if ih < 0 || ih >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &chan[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, slot) in out_row.iter_mut().enumerate() {
                        let iw = ow as isize * s + kj as isize - p;
                        *slot = if iw < 0 || iw >= g.w as isize {
                            T::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let plane = g.out_plane();
    let (s, p) = (g.stride as isize, g.padding as isize);
    for c in 0..g.in_ch {
        let chan = &mut image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oh in 0..g.oh {
                    let ih = oh as isize * s + ki as isize - p;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    for ow in 0..g.ow {
                        let iw = ow as isize * s + kj as isize - p;
                        if iw >= 0 && iw < g.w as isize {
                            let dst = &mut chan[ih as usize * g.w + iw as usize];
                            *dst = *dst + src[oh * g.ow + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding. Returns the output and the per-image
/// column matrices needed by the backward pass.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Vec<T>)> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    let rows = g.col_rows();
    let plane = g.out_plane();
    let in_size = g.in_ch * g.h * g.w;
    let out_size = g.out_ch * plane;
    let mut cols = vec![T::zero(); g.batch * rows * plane];
    let mut out = vec![T::zero(); g.batch * out_size];
    for b in 0..g.batch {
        let col = &mut cols[b * rows * plane..(b + 1) * rows * plane];
        im2col(&g, &input.data()[b * in_size..(b + 1) * in_size], col);
        T::gemm(
            g.out_ch,
            rows,
            plane,
            T::one(),
            kernel.data(),
            rows as isize,
            1,
            col,
            plane as isize,
            1,
            T::zero(),
            &mut out[b * out_size..(b + 1) * out_size],
            plane as isize,
            1,
        );
    }
    Ok((Tensor::new(g.out_shape(), out)?, cols))
}

/// Gradients of [`conv2d_forward`] with respect to input (optional) and kernel.
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    kernel: &Tensor<T>,
    cols: &[T],
    grad_out: &[T],
    want_input: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let rows = g.col_rows();
    let plane = g.out_plane();
    let out_size = g.out_ch * plane;
    let in_size = g.in_ch * g.h * g.w;
    let mut grad_kernel = vec![T::zero(); g.out_ch * rows];
    let mut grad_input = want_input.then(|| vec![T::zero(); g.batch * in_size]);
    let mut dcol = vec![T::zero(); if want_input { rows * plane } else { 0 }];
    for b in 0..g.batch {
        let dy = &grad_out[b * out_size..(b + 1) * out_size];
        let col = &cols[b * rows * plane..(b + 1) * rows * plane];
        // dK += dY_b * cols_b^T
        T::gemm(
            g.out_ch,
            plane,
            rows,
            T::one(),
            dy,
            plane as isize,
            1,
            col,
            1,
            plane as isize,
            T::one(),
            &mut grad_kernel,
            rows as isize,
            1,
        );
        if let Some(gi) = grad_input.as_mut() {
            // dcols_b = K^T * dY_b
            T::gemm(
                rows,
                g.out_ch,
                plane,
                T::one(),
                kernel.data(),
                1,
                rows as isize,
                dy,
                plane as isize,
                1,
                T::zero(),
                &mut dcol,
                plane as isize,
                1,
            );
            col2im(g, &dcol, &mut gi[b * in_size..(b + 1) * in_size]);
        }
    }
    (grad_input, grad_kernel)
}

/// 2x2 max pooling with stride 2 (trailing odd rows/columns dropped).
/// Ties resolve to the first element in row-major window order.
pub fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let &[b, c, h, w] = input.shape() else {
        return Err(Error::invalid(format!(
            "maxpool2 expects NCHW input, got {:?}",
            input.shape()
        )));
    };
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::invalid(format!("maxpool2 input {h}x{w} too small")));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new([b, c, oh, ow], out)?, argmax))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_returns_input() {
        let x = Tensor::<f64>::from_fn([2, 1, 4, 5], |i| i as f64 * 0.1);
        let k = Tensor::ones([1, 1, 1, 1]);
        let (y, _) = conv2d_forward(&x, &k, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_on_constant_input() {
        let x = Tensor::<f64>::ones([1, 1, 5, 5]);
        let k = Tensor::ones([1, 1, 3, 3]);
        let (y, _) = conv2d_forward(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let x = Tensor::<f32>::from_fn([1, 2, 6, 6], |i| i as f32);
        let k = Tensor::zeros([3, 2, 3, 3]);
        let (y, _) = conv2d_forward(&x, &k, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn padding_and_stride_extent() {
        assert_eq!(conv_output_extent(28, 3, 1, 1).unwrap(), 28);
        assert_eq!(conv_output_extent(7, 3, 2, 0).unwrap(), 3);
        assert!(conv_output_extent(2, 5, 1, 1).is_err());
        assert!(conv_output_extent(5, 3, 0, 0).is_err());
    }

    #[test]
    fn maxpool_ties_pick_first() {
        let x = Tensor::<f64>::new([1, 1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let (y, arg) = maxpool2_forward(&x).unwrap();
        assert_eq!(y.data(), &[1.0]);
        assert_eq!(arg, vec![0]);
        let x = Tensor::<f64>::new([1, 1, 2, 2], vec![0.0, 2.0, 2.0, 1.0]).unwrap();
        assert_eq!(maxpool2_forward(&x).unwrap().1, vec![1]);
    }
}
