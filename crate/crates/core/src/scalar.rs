//! Scalar abstraction shared by every tensor routine.
//!
//! Training runs in `f32`; gradient checking runs the exact same code in `f64`
//! so that finite differences are not swamped by rounding.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real number type a [`Tensor`](crate::Tensor) can hold.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Probability clamp used by the binary cross-entropy loss.
    fn prob_clamp() -> Self;

    /// `c = alpha * a * b + beta * c` on strided row/column layouts.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`. Strides are in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );

    /// Logistic function applied in place.
    fn sigmoid_slice(xs: &mut [Self]);

    /// Hyperbolic tangent applied in place.
    fn tanh_slice(xs: &mut [Self]);

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every float scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float scalar converts to f64")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to every float scalar")
    }
}

fn max_offset(rows: usize, cols: usize, strides: (usize, usize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * strides.0 + (cols - 1) * strides.1 + 1
    }
}

/// `exp` for `f32` written with plain arithmetic so loops over slices
/// vectorize: Cody-Waite range reduction and a degree-7 polynomial, relative
/// error below 2e-7 on the clamped range.
#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const ROUND: f32 = 12_582_912.0; // 1.5 * 2^23
    let x = x.clamp(-87.0, 88.0);
    let n = (x * std::f32::consts::LOG2_E + ROUND) - ROUND;
    let r = x - n * 0.693_359_4 - n * -2.121_944_4e-4;
    let p = (((((1.987_569_1e-4 * r + 1.398_199_9e-3) * r + 8.333_452e-3) * r + 4.166_579_6e-2)
        * r
        + 1.666_666_5e-1)
        * r
        + 0.5)
        * r
        * r
        + r
        + 1.0;
    p * f32::from_bits(((n as i32 + 127) as u32) << 23)
}

fn sigmoid_f32(xs: &mut [f32]) {
    for v in xs {
        *v = 1.0 / (1.0 + exp_f32(-*v));
    }
}

fn tanh_f32(xs: &mut [f32]) {
    for v in xs {
        *v = 1.0 - 2.0 / (1.0 + exp_f32(2.0 * *v));
    }
}

fn sigmoid_f64(xs: &mut [f64]) {
    for v in xs {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
}

fn tanh_f64(xs: &mut [f64]) {
    for v in xs {
        *v = v.tanh();
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path, $clamp:expr, $sigmoid:path, $tanh:path) => {
        impl Scalar for $t {
            fn prob_clamp() -> Self {
                $clamp
            }

            fn sigmoid_slice(xs: &mut [Self]) {
                $sigmoid(xs)
            }

            fn tanh_slice(xs: &mut [Self]) {
                $tanh(xs)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
                c_strides: (usize, usize),
            ) {
                assert!(
                    a.len() >= max_offset(m, k, a_strides),
                    "gemm: lhs too short"
                );
                assert!(
                    b.len() >= max_offset(k, n, b_strides),
                    "gemm: rhs too short"
                );
                assert!(
                    c.len() >= max_offset(m, n, c_strides),
                    "gemm: output too short"
                );
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the asserts above guarantee every index touched by the
                // kernel lies inside the borrowed slices, and `c` is borrowed
                // mutably so it cannot alias `a` or `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm, 1e-7, sigmoid_f32, tanh_f32);
impl_scalar!(f64, matrixmultiply::dgemm, 1e-12, sigmoid_f64, tanh_f64);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_hand_product() {
        // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, 1.0, &a, (2, 1), &b, (2, 1), 0.0, &mut c, (2, 1));
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        // transposed lhs through strides
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, 1.0, &a, (1, 2), &b, (2, 1), 0.0, &mut c, (2, 1));
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
    }

    #[test]
    fn f32_activations_track_the_exact_ones() {
        let xs: Vec<f32> = (-4000..=4000).map(|i| i as f32 / 100.0).collect();
        let mut s = xs.clone();
        let mut t = xs.clone();
        f32::sigmoid_slice(&mut s);
        f32::tanh_slice(&mut t);
        for ((x, s), t) in xs.iter().zip(&s).zip(&t) {
            let x = *x as f64;
            assert!(
                (*s as f64 - 1.0 / (1.0 + (-x).exp())).abs() < 2e-7,
                "sigmoid({x})"
            );
            assert!((*t as f64 - x.tanh()).abs() < 4e-7, "tanh({x})");
        }
        for x in [-200.0f32, -90.0, 90.0, 200.0] {
            let mut v = [x];
            f32::sigmoid_slice(&mut v);
            assert!(v[0].is_finite() && (0.0..=1.0).contains(&v[0]));
        }
        assert!((exp_f32(1.0) - std::f32::consts::E).abs() < 1e-6);
    }

    #[test]
    fn gemm_accumulates_with_beta() {
        let a = [1.0f32, 1.0];
        let b = [2.0f32, 3.0];
        let mut c = [10.0f32];
        f32::gemm(1, 2, 1, 1.0, &a, (2, 1), &b, (1, 1), 1.0, &mut c, (1, 1));
        assert_eq!(c, [15.0]);
    }
}
