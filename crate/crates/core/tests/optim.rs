mod common;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use icadenoise_core::optim::{AdamConfig, AdamState, EarlyStopping, StopDecision};
use icadenoise_core::{ParamStore, Tensor};
use proptest::prelude::*;
use rand::Rng;

/// Adam written out longhand on plain vectors.
struct Reference {
    theta: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Reference {
    fn step(&mut self, g: &[f64], lr: f64) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        self.t += 1;
        for i in 0..self.theta.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = self.m[i] / (1.0 - b1.powi(self.t));
            let v_hat = self.v[i] / (1.0 - b2.powi(self.t));
            self.theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

fn store_of<T: icadenoise_core::Scalar>(values: &[f64]) -> ParamStore<T> {
    let mut s = ParamStore::new();
    s.add("a", Tensor::from_f64(vec![3], &values[..3]).unwrap(), true)
        .unwrap();
    s.add(
        "frozen",
        Tensor::from_f64(vec![2], &[5.0, 6.0]).unwrap(),
        false,
    )
    .unwrap();
    s.add(
        "b",
        Tensor::from_f64(vec![2, 2], &values[3..]).unwrap(),
        true,
    )
    .unwrap();
    s
}

fn flat<T: icadenoise_core::Scalar>(s: &ParamStore<T>) -> Vec<f64> {
    s.iter()
        .filter(|p| p.trainable)
        .flat_map(|p| {
            p.value
                .data()
                .iter()
                .map(|v| v.to_f64_lossy())
                .collect::<Vec<_>>()
        })
        .collect()
}

fn set_grads<T: icadenoise_core::Scalar>(s: &mut ParamStore<T>, g: &[f64]) {
    let mut k = 0;
    for p in s.iter_mut().filter(|p| p.trainable) {
        for slot in p.grad.iter_mut() {
            *slot = T::from_f64_lossy(g[k]);
            k += 1;
        }
    }
}

fn trajectory_deviation<T: icadenoise_core::Scalar>(seed: u64) -> f64 {
    let mut r = common::rng(seed);
    let init: Vec<f64> = (0..7).map(|_| r.gen_range(-1.0..1.0)).collect();
    let lr = 1e-2;
    let mut store = store_of::<T>(&init);
    let mut adam = AdamState::new(
        &store,
        AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        },
    );
    let mut reference = Reference {
        theta: init.clone(),
        m: vec![0.0; 7],
        v: vec![0.0; 7],
        t: 0,
    };
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let g: Vec<f64> = (0..7).map(|_| r.gen_range(-2.0..2.0)).collect();
        set_grads(&mut store, &g);
        adam.step(&mut store).unwrap();
        reference.step(&g, lr);
        for (a, b) in flat(&store).iter().zip(&reference.theta) {
            worst = worst.max((a - b).abs());
        }
    }
    assert_eq!(adam.step_count(), 50);
    assert_eq!(
        store.by_name("frozen").unwrap().value.data()[0].to_f64_lossy(),
        5.0
    );
    worst
}

#[test]
fn fifty_steps_track_the_longhand_reference() {
    for seed in 0..5 {
        let d64 = trajectory_deviation::<f64>(seed);
        let d32 = trajectory_deviation::<f32>(seed);
        assert!(d64 <= 1e-12, "f64 deviation {d64}");
        assert!(d32 <= 1e-6, "f32 deviation {d32}");
    }
}

#[test]
fn first_step_from_zero() {
    let mut s = ParamStore::<f64>::new();
    s.add("w", Tensor::from_f64(vec![1], &[0.0]).unwrap(), true)
        .unwrap();
    s.iter_mut().next().unwrap().grad[0] = 1.0;
    let mut adam = AdamState::new(&s, AdamConfig::default());
    adam.step(&mut s).unwrap();
    assert!((s.by_name("w").unwrap().value.data()[0] + 0.001).abs() < 1e-9);
    // gradients are left for the caller to clear
    assert_eq!(s.by_name("w").unwrap().grad[0], 1.0);
}

fn snapshot_hash(values: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    values.iter().for_each(|v| v.to_bits().hash(&mut h));
    h.finish()
}

proptest! {
    #[test]
    fn zero_gradients_leave_parameters_alone(init in prop::collection::vec(-10f64..10.0, 7), steps in 1usize..20) {
        let mut store = store_of::<f64>(&init);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        for k in 1..=steps {
            adam.step(&mut store).unwrap();
            prop_assert_eq!(adam.step_count(), k as u64);
        }
        prop_assert_eq!(flat(&store), init);
    }

    #[test]
    fn second_moments_stay_nonnegative(grads in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 7), 1..15)) {
        let mut store = store_of::<f64>(&[0.0; 7]);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        for g in &grads {
            set_grads(&mut store, g);
            adam.step(&mut store).unwrap();
            for (m, v) in adam.first_moment().iter().zip(adam.second_moment()) {
                prop_assert_eq!(m.len(), v.len());
                prop_assert!(v.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn early_stopping_restores_the_best_parameters(
        metrics in prop::collection::vec(0.0f64..1.0, 1..40),
        patience in 1usize..6,
    ) {
        // Each epoch's "parameters" are derived from the epoch number.
        let params = |epoch: usize| vec![epoch as f64, (epoch * epoch) as f64];
        let mut es = EarlyStopping::new(patience);
        let mut best = f64::NEG_INFINITY;
        let mut best_epoch = 0;
        let mut since = 0;
        let mut stopped = None;
        for (i, &m) in metrics.iter().enumerate() {
            let epoch = i + 1;
            if m > best {
                best = m;
                best_epoch = epoch;
                since = 0;
            } else {
                since += 1;
            }
            let d = es.step(m, || Ok::<_, ()>(params(epoch))).unwrap();
            prop_assert_eq!(es.epochs_since_improvement(), since);
            prop_assert_eq!(d == StopDecision::Stop, since >= patience);
            if d == StopDecision::Stop {
                stopped = Some(epoch);
                break;
            }
        }
        prop_assert_eq!(es.best_metric(), Some(best));
        prop_assert_eq!(es.best_epoch(), best_epoch);
        prop_assert_eq!(snapshot_hash(es.best_snapshot().unwrap()), snapshot_hash(&params(best_epoch)));
        if let Some(e) = stopped {
            prop_assert_eq!(e, best_epoch + patience);
        }
    }
}
