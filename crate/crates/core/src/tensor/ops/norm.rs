//! Per-channel batch normalization kernels over `[batch, channels, spatial...]`.

use crate::scalar::Scalar;

pub(crate) struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub train: bool,
}

/// `(batch, channels, plane)` where plane is the product of the spatial extents.
pub(crate) fn layout(shape: &[usize]) -> (usize, usize, usize) {
    (
        shape[0],
        shape[1],
        shape[2..].iter().product::<usize>().max(1),
    )
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward<T: Scalar>(
    x: &[T],
    shape: &[usize],
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
    train: bool,
    momentum: T,
    eps: T,
) -> (Vec<T>, BnCache<T>) {
    let (nb, nc, plane) = layout(shape);
    let count = T::from_usize_lossy(nb * plane);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); nc];
    for c in 0..nc {
        let (mean, var) = if train {
            let mut sum = T::zero();
            for b in 0..nb {
                let off = (b * nc + c) * plane;
                sum += x[off..off + plane].iter().copied().sum::<T>();
            }
            let mean = sum / count;
            let mut sq = T::zero();
            for b in 0..nb {
                let off = (b * nc + c) * plane;
                sq += x[off..off + plane]
                    .iter()
                    .map(|&v| (v - mean) * (v - mean))
                    .sum::<T>();
            }
            let var = sq / count;
            let unbiased = if nb * plane > 1 {
                sq / (count - T::one())
            } else {
                var
            };
            running_mean[c] = momentum * running_mean[c] + (T::one() - momentum) * mean;
            running_var[c] = momentum * running_var[c] + (T::one() - momentum) * unbiased;
            (mean, var)
        } else {
            (running_mean[c], running_var[c])
        };
        let istd = T::one() / (var + eps).sqrt();
        inv_std[c] = istd;
        for b in 0..nb {
            let off = (b * nc + c) * plane;
            for i in off..off + plane {
                let h = (x[i] - mean) * istd;
                xhat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            train,
        },
    )
}

pub(crate) fn backward<T: Scalar>(
    dy: &[T],
    shape: &[usize],
    gamma: &[T],
    cache: &BnCache<T>,
    dx: Option<&mut [T]>,
    dgamma: Option<&mut [T]>,
    dbeta: Option<&mut [T]>,
) {
    let (nb, nc, plane) = layout(shape);
    let count = T::from_usize_lossy(nb * plane);
    let mut sum_dy = vec![T::zero(); nc];
    let mut sum_dy_xhat = vec![T::zero(); nc];
    for b in 0..nb {
        for c in 0..nc {
            let off = (b * nc + c) * plane;
            for i in off..off + plane {
                sum_dy[c] += dy[i];
                sum_dy_xhat[c] += dy[i] * cache.xhat[i];
            }
        }
    }
    if let Some(dg) = dgamma {
        for c in 0..nc {
            dg[c] += sum_dy_xhat[c];
        }
    }
    if let Some(db) = dbeta {
        for c in 0..nc {
            db[c] += sum_dy[c];
        }
    }
    if let Some(dx) = dx {
        for b in 0..nb {
            for c in 0..nc {
                let off = (b * nc + c) * plane;
                let scale = gamma[c] * cache.inv_std[c];
                if cache.train {
                    let mean_dy = sum_dy[c] / count;
                    let mean_dy_xhat = sum_dy_xhat[c] / count;
                    for i in off..off + plane {
                        dx[i] += scale * (dy[i] - mean_dy - cache.xhat[i] * mean_dy_xhat);
                    }
                } else {
                    for i in off..off + plane {
                        dx[i] += scale * dy[i];
                    }
                }
            }
        }
    }
}
