//! Valid-padding cross-correlation over 1 or 3 spatial axes, lowered to gemm
//! through an im2col buffer.

use serde::{Deserialize, Serialize};

use super::spatial3;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub rank: usize,
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    /// Stride-1 convolution with a cubic (or 1-D) kernel.
    pub fn new(rank: usize, kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            rank,
            kernel: vec![kernel; rank],
            stride: vec![1; rank],
            in_channels,
            out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank != 1 && self.rank != 3 {
            return Err(Error::param(
                "conv",
                format!("rank {} unsupported", self.rank),
            ));
        }
        if self.kernel.len() != self.rank || self.stride.len() != self.rank {
            return Err(Error::param("conv", "kernel/stride length must equal rank"));
        }
        if self.kernel.iter().chain(&self.stride).any(|&v| v == 0) {
            return Err(Error::param(
                "conv",
                "kernel and stride extents must be positive",
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::param("conv", "channel counts must be positive"));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels];
        s.extend(&self.kernel);
        s
    }

    /// Output spatial extents for the given input extents.
    pub fn output_extents(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        if input.len() != self.rank {
            return Err(Error::dim(
                "conv",
                0,
                format!("expected {} spatial axes, got {}", self.rank, input.len()),
            ));
        }
        input
            .iter()
            .zip(self.kernel.iter().zip(&self.stride))
            .enumerate()
            .map(|(axis, (&n, (&k, &s)))| {
                if n < k {
                    Err(Error::dim(
                        "conv",
                        axis + 2,
                        format!("input extent {n} smaller than kernel {k}"),
                    ))
                } else {
                    Ok((n - k) / s + 1)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    pub fn new(input_shape: &[usize], weight_shape: &[usize], spec: &ConvSpec) -> Result<Self> {
        spec.validate()?;
        if input_shape.len() != spec.rank + 2 {
            return Err(Error::dim(
                "conv",
                0,
                format!(
                    "input rank {} does not match rank-{} convolution",
                    input_shape.len(),
                    spec.rank
                ),
            ));
        }
        if input_shape[1] != spec.in_channels {
            return Err(Error::dim(
                "conv",
                1,
                format!(
                    "input has {} channels, spec {}",
                    input_shape[1], spec.in_channels
                ),
            ));
        }
        if weight_shape != spec.weight_shape().as_slice() {
            return Err(Error::dim(
                "conv",
                0,
                format!(
                    "weight shape {weight_shape:?}, spec needs {:?}",
                    spec.weight_shape()
                ),
            ));
        }
        let out = spec.output_extents(&input_shape[2..])?;
        let pad = |v: &[usize], fill: usize| -> [usize; 3] {
            if v.len() == 1 {
                [fill, fill, v[0]]
            } else {
                [v[0], v[1], v[2]]
            }
        };
        Ok(Self {
            batch: input_shape[0],
            cin: spec.in_channels,
            cout: spec.out_channels,
            input: spatial3(&input_shape[2..]).expect("rank validated"),
            kernel: pad(&spec.kernel, 1),
            stride: pad(&spec.stride, 1),
            output: pad(&out, 1),
        })
    }

    pub fn in_vol(&self) -> usize {
        self.input.iter().product()
    }

    pub fn out_vol(&self) -> usize {
        self.output.iter().product()
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }
}

pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [od, oh, ow] = g.output;
    let n = g.out_vol();
    let mut row = 0;
    for c in 0..g.cin {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst_row = &mut cols[row * n..(row + 1) * n];
                    for oz in 0..od {
                        let iz = oz * sd + kz;
                        for oy in 0..oh {
                            let iy = oy * sh + ky;
                            let src = (iz * ih + iy) * iw + kx;
                            let dst = &mut dst_row[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                            if sw == 1 {
                                dst.copy_from_slice(&xc[src..src + ow]);
                            } else {
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = xc[src + ox * sw];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub(crate) fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [od, oh, ow] = g.output;
    let n = g.out_vol();
    let mut row = 0;
    for c in 0..g.cin {
        let dxc = &mut dx[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let src_row = &cols[row * n..(row + 1) * n];
                    for oz in 0..od {
                        let iz = oz * sd + kz;
                        for oy in 0..oh {
                            let iy = oy * sh + ky;
                            let dst = (iz * ih + iy) * iw + kx;
                            let src = &src_row[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                            if sw == 1 {
                                for (d, s) in dxc[dst..dst + ow].iter_mut().zip(src) {
                                    *d += *s;
                                }
                            } else {
                                for (ox, s) in src.iter().enumerate() {
                                    dxc[dst + ox * sw] += *s;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub(crate) fn forward_raw<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let k = g.col_rows();
    let n = g.out_vol();
    let in_stride = g.cin * g.in_vol();
    let out_stride = g.cout * n;
    let mut out = vec![T::zero(); g.batch * out_stride];
    let mut cols = vec![T::zero(); k * n];
    for b in 0..g.batch {
        im2col(&x[b * in_stride..(b + 1) * in_stride], g, &mut cols);
        let ob = &mut out[b * out_stride..(b + 1) * out_stride];
        if let Some(bias) = bias {
            for (co, chunk) in ob.chunks_mut(n).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bias[co]);
            }
        }
        T::gemm(
            g.cout,
            k,
            n,
            T::one(),
            w,
            (k, 1),
            &cols,
            (n, 1),
            T::one(),
            ob,
            (n, 1),
        );
    }
    out
}

/// Accumulates weight, bias and (optionally) input gradients.
pub(crate) fn backward_raw<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    g: &ConvGeom,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
    dx: Option<&mut [T]>,
) {
    let k = g.col_rows();
    let n = g.out_vol();
    let in_stride = g.cin * g.in_vol();
    let out_stride = g.cout * n;
    if let Some(db) = db {
        for b in 0..g.batch {
            let dyb = &dy[b * out_stride..(b + 1) * out_stride];
            for (co, chunk) in dyb.chunks(n).enumerate() {
                db[co] += chunk.iter().copied().sum::<T>();
            }
        }
    }
    if dw.is_none() && dx.is_none() {
        return;
    }
    let mut cols = vec![T::zero(); k * n];
    let mut dw = dw;
    let mut dx = dx;
    for b in 0..g.batch {
        let dyb = &dy[b * out_stride..(b + 1) * out_stride];
        if let Some(dw) = dw.as_deref_mut() {
            im2col(&x[b * in_stride..(b + 1) * in_stride], g, &mut cols);
            // dW += dY_b (cout x n) * cols^T (n x k)
            T::gemm(
                g.cout,
                n,
                k,
                T::one(),
                dyb,
                (n, 1),
                &cols,
                (1, n),
                T::one(),
                dw,
                (k, 1),
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dcols = W^T (k x cout) * dY_b (cout x n)
            T::gemm(
                k,
                g.cout,
                n,
                T::one(),
                w,
                (1, k),
                dyb,
                (n, 1),
                T::zero(),
                &mut cols,
                (n, 1),
            );
            col2im_add(&cols, g, &mut dx[b * in_stride..(b + 1) * in_stride]);
        }
    }
}

/// Stand-alone convolution on tensors: `input` is `[batch, in_ch, spatial...]`,
/// `weights` is `[out_ch, in_ch, kernel...]`.
pub fn conv_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input.shape(), weights.shape(), spec)?;
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::dim(
                "conv",
                1,
                format!(
                    "bias has {} entries for {} channels",
                    b.len(),
                    spec.out_channels
                ),
            ));
        }
    }
    let out = forward_raw(input.data(), weights.data(), bias.map(|b| b.data()), &g);
    let mut shape = vec![g.batch, g.cout];
    shape.extend(spec.output_extents(&input.shape()[2..])?);
    Tensor::new(shape, out)
}
