use super::spatial3;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pooled values plus the flat input index each maximum came from.
#[derive(Debug, Clone)]
pub struct PoolOutput<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

pub(crate) fn pooled_extents(
    input: &[usize],
    window: &[usize],
    stride: &[usize],
) -> Result<Vec<usize>> {
    if window.len() != input.len() || stride.len() != input.len() {
        return Err(Error::dim(
            "max_pool",
            0,
            format!(
                "{} spatial axes but window {:?} / stride {:?}",
                input.len(),
                window,
                stride
            ),
        ));
    }
    if window.iter().chain(stride).any(|&v| v == 0) {
        return Err(Error::param(
            "max_pool",
            "window and stride must be positive",
        ));
    }
    input
        .iter()
        .zip(window.iter().zip(stride))
        .enumerate()
        .map(|(axis, (&n, (&w, &s)))| {
            if w > n {
                Err(Error::dim(
                    "max_pool",
                    axis + 2,
                    format!("window {w} larger than extent {n}"),
                ))
            } else {
                Ok((n - w) / s + 1)
            }
        })
        .collect()
}

/// Max pooling over the spatial axes of `[batch, channels, spatial...]`.
pub fn max_pool_forward<T: Scalar>(
    input: &Tensor<T>,
    window: &[usize],
    stride: &[usize],
) -> Result<PoolOutput<T>> {
    let shape = input.shape();
    if shape.len() != 3 && shape.len() != 5 {
        return Err(Error::dim(
            "max_pool",
            0,
            format!("expected rank 3 or 5 input, got {shape:?}"),
        ));
    }
    let out_ext = pooled_extents(&shape[2..], window, stride)?;
    let lift = |v: &[usize]| spatial3(v).expect("rank checked");
    let [id, ih, iw] = lift(&shape[2..]);
    let [wd, wh, ww] = lift(window);
    let [sd, sh, sw] = lift(stride);
    let [od, oh, ow] = lift(&out_ext);
    let planes = shape[0] * shape[1];
    let in_vol = id * ih * iw;
    let out_vol = od * oh * ow;
    let x = input.data();
    let mut out = Vec::with_capacity(planes * out_vol);
    let mut argmax = Vec::with_capacity(planes * out_vol);
    for p in 0..planes {
        let base = p * in_vol;
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + (oz * sd * ih + oy * sh) * iw + ox * sw;
                    let mut best_v = x[best];
                    for kz in 0..wd {
                        for ky in 0..wh {
                            let row = base + ((oz * sd + kz) * ih + oy * sh + ky) * iw + ox * sw;
                            for kx in 0..ww {
                                let v = x[row + kx];
                                if v > best_v {
                                    best_v = v;
                                    best = row + kx;
                                }
                            }
                        }
                    }
                    out.push(best_v);
                    argmax.push(best);
                }
            }
        }
    }
    let mut out_shape = shape[..2].to_vec();
    out_shape.extend(out_ext);
    Ok(PoolOutput {
        output: Tensor::new(out_shape, out)?,
        argmax,
    })
}
