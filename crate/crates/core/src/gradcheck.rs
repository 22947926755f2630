//! Central finite-difference oracle for checking analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Mode};
use crate::zoo::{Model, ModelInput};

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central-difference estimate of the gradient of `f` at `params`.
pub fn numeric_gradient<T: Scalar, F>(mut f: F, params: &[T], step: T) -> Vec<T>
where
    F: FnMut(&[T]) -> T,
{
    let mut p = params.to_vec();
    let two = T::one() + T::one();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = f(&p);
            p[i] = orig - step;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (two * step)
        })
        .collect()
}

/// Largest relative error between `analytic` and the central-difference
/// gradient of `f` at `params`.
pub fn finite_diff_check<T: Scalar, F>(f: F, params: &[T], analytic: &[T], step: T) -> f64
where
    F: FnMut(&[T]) -> T,
{
    assert_eq!(
        params.len(),
        analytic.len(),
        "one analytic entry per parameter"
    );
    numeric_gradient(f, params, step)
        .iter()
        .zip(analytic)
        .map(|(n, a)| relative_error(a.to_f64_lossy(), n.to_f64_lossy()))
        .fold(0.0, f64::max)
}

/// Finite-difference result for one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Entries whose default interval straddled a ReLU or pooling kink and
    /// were re-differenced with a smaller step.
    pub refined: usize,
    /// Entries sitting on a kink at every step tried; left out of the error.
    pub on_kink: usize,
    pub max_rel_error: f64,
}

/// Smallest step tried when refining around a kink.
const MIN_STEP: f64 = 1e-7;

/// Compares tape gradients of the train-mode BCE loss with central differences
/// for every trainable tensor of `model`. Dropout masks are drawn from a fresh
/// generator seeded with `dropout_seed` on every evaluation, so the loss is a
/// deterministic function of the parameters. Tensors with more than
/// `max_entries` elements are checked on a seeded random subset.
///
/// The central difference is only an oracle where the loss is smooth across
/// `[θ - h, θ + h]`. When the ReLU sign patterns or pooling argmaxes differ
/// between the two ends and the centre, the step is divided by ten until they
/// agree.
pub fn check_model_gradients(
    model: &Model<f64>,
    input: &ModelInput<f64>,
    labels: &[f64],
    step: f64,
    max_entries: usize,
    dropout_seed: u64,
) -> Result<Vec<ParamCheck>> {
    let loss_of = |m: &Model<f64>, g: &mut Graph<f64>| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let p = m.forward_frozen(g, input, Mode::Train, &mut rng)?;
        let l = g.bce(p, labels)?;
        Ok(g.value(l).data()[0])
    };
    let eval = |m: &Model<f64>| -> Result<(f64, u64)> {
        let mut h = Graph::no_grad().with_kink_tracking();
        let l = loss_of(m, &mut h)?;
        Ok((l, h.kink_signature().expect("tracking enabled")))
    };

    let mut analytic = model.params().clone();
    {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let p = model.forward_frozen(&mut g, input, Mode::Train, &mut rng)?;
        let loss = g.bce(p, labels)?;
        g.backward(loss)?;
        analytic.zero_grads();
        g.accumulate_param_grads(&mut analytic);
    }
    let (_, centre) = eval(model)?;

    let mut probe = model.clone();
    let mut pick = ChaCha8Rng::seed_from_u64(dropout_seed ^ 0x5eed);
    let mut out = Vec::new();
    for id in model.params().ids() {
        let param = model.params().get(id);
        if !param.trainable {
            continue;
        }
        let n = param.value.len();
        let mut entries: Vec<usize> = if n > max_entries {
            sample(&mut pick, n, max_entries).into_vec()
        } else {
            (0..n).collect()
        };
        entries.sort_unstable();
        let mut check = ParamCheck {
            name: param.name.clone(),
            checked: 0,
            refined: 0,
            on_kink: 0,
            max_rel_error: 0.0,
        };
        for &i in &entries {
            let orig = param.value.data()[i];
            let mut h = step;
            let numeric = loop {
                probe.params_mut().get_mut(id).value.data_mut()[i] = orig + h;
                let (up, s_up) = eval(&probe)?;
                probe.params_mut().get_mut(id).value.data_mut()[i] = orig - h;
                let (down, s_down) = eval(&probe)?;
                if s_up == centre && s_down == centre {
                    break Some((up - down) / (2.0 * h));
                }
                h /= 10.0;
                if h < MIN_STEP {
                    break None;
                }
            };
            probe.params_mut().get_mut(id).value.data_mut()[i] = orig;
            match numeric {
                Some(numeric) => {
                    check.checked += 1;
                    if h < step {
                        check.refined += 1;
                    }
                    check.max_rel_error = check
                        .max_rel_error
                        .max(relative_error(analytic.get(id).grad[i], numeric));
                }
                None => check.on_kink += 1,
            }
        }
        out.push(check);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let err = finite_diff_check(|w: &[f64]| w[0] * w[0], &[3.0], &[6.0], 1e-3);
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let err = finite_diff_check(|w: &[f64]| w[0] * w[0], &[3.0], &[5.0], 1e-3);
        assert!(err > 0.1);
    }
}
