mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use icadenoise_core::optim::{AdamConfig, AdamState};
use icadenoise_core::zoo::{
    combine_models, ArchSpec, Domain, InputDims, LayerShape, Model, ModelConfig, ModelId,
    ModelInput,
};
use icadenoise_core::{Error, Graph, Mode, Tensor};
use serde::{Deserialize, Serialize};

fn dims(spatial: [usize; 3], temporal: usize, frequency: usize) -> InputDims {
    InputDims {
        spatial,
        temporal,
        frequency,
    }
}

fn reduced() -> InputDims {
    dims([24, 27, 24], 1200, 600)
}

fn batch(dims: &InputDims, n: usize, seed: u64) -> ModelInput<f64> {
    let mut rng = common::rng(seed);
    let mut input = ModelInput::default();
    for d in [Domain::Spatial, Domain::Temporal, Domain::Frequency] {
        let mut shape = vec![n, 1];
        shape.extend(dims.extents(d));
        input.set(d, common::random_tensor(&mut rng, shape));
    }
    input
}

fn set(model: &mut Model<f64>, name: &str, data: Vec<f64>) {
    let p = model
        .params_mut()
        .by_name_mut(name)
        .unwrap_or_else(|| panic!("{name}"));
    assert_eq!(p.value.len(), data.len(), "{name}");
    p.value.data_mut().copy_from_slice(&data);
}

fn value(model: &Model<f64>, name: &str) -> Vec<f64> {
    model
        .params()
        .by_name(name)
        .unwrap_or_else(|| panic!("{name}"))
        .value
        .data()
        .to_vec()
}

#[test]
fn sm1_and_sm2_differ_exactly_by_batch_norm_entries() {
    let names = |id| -> BTreeSet<String> {
        Model::<f32>::build(ModelConfig::canonical(id), 0)
            .unwrap()
            .params()
            .names()
            .into_iter()
            .collect()
    };
    let sm1 = names(ModelId::Sm1);
    let sm2 = names(ModelId::Sm2);
    assert!(sm1.is_subset(&sm2));
    let extra: BTreeSet<String> = sm2.difference(&sm1).cloned().collect();
    let mut expected = BTreeSet::new();
    for b in 0..3 {
        for s in ["gamma", "beta", "running_mean", "running_var"] {
            expected.insert(format!("spatial.block{b}.bn.{s}"));
        }
    }
    assert_eq!(extra, expected);
}

/// Skip path alone: crop, 1x1x1 projection, ReLU, pooling per block, then the
/// model's dense layers.
fn skip_path_reference(model: &Model<f64>, input: &ModelInput<f64>) -> Vec<f64> {
    use icadenoise_core::tensor::ConvSpec;
    let mut g = Graph::no_grad();
    let p = |g: &mut Graph<f64>, name: &str| {
        g.input(model.params().by_name(name).unwrap().value.clone())
    };
    let mut x = g.input(input.spatial.clone().unwrap());
    for b in 0..3 {
        let cin = g.shape(x)[1];
        let w = p(&mut g, &format!("spatial.block{b}.skip.weight"));
        let cout = g.shape(w)[0];
        let target: Vec<usize> = g.shape(x)[2..].iter().map(|e| e - 2).collect();
        let c = g.crop(x, &target).unwrap();
        let bias = p(&mut g, &format!("spatial.block{b}.skip.bias"));
        let y = g
            .conv(c, w, Some(bias), &ConvSpec::new(3, 1, cin, cout))
            .unwrap();
        let y = g.relu(y);
        x = g.max_pool(y, &[2, 2, 2], &[2, 2, 2]).unwrap();
    }
    let mut h = g.flatten(x).unwrap();
    for name in ["spatial.dense0", "spatial.dense1"] {
        let w = p(&mut g, &format!("{name}.weight"));
        let b = p(&mut g, &format!("{name}.bias"));
        let z = g.dense(h, w, Some(b)).unwrap();
        h = g.relu(z);
    }
    let w = p(&mut g, "head.out.weight");
    let b = p(&mut g, "head.out.bias");
    let z = g.dense(h, w, Some(b)).unwrap();
    let out = g.sigmoid(z);
    g.value(out).data().to_vec()
}

#[test]
fn sm3_with_zero_residual_branch_is_its_skip_path() {
    let d = dims([30, 30, 30], 64, 32);
    let cfg = ModelConfig::build_config(ModelId::Sm3, d, &ArchSpec::canonical()).unwrap();
    let mut model = Model::<f64>::build(cfg, 4).unwrap();
    for b in 0..3 {
        for part in ["weight", "bias"] {
            let n = value(&model, &format!("spatial.block{b}.conv.{part}")).len();
            set(
                &mut model,
                &format!("spatial.block{b}.conv.{part}"),
                vec![0.0; n],
            );
        }
    }
    let input = batch(&d, 3, 1);
    let got = model.predict(&input).unwrap();
    let want = skip_path_reference(&model, &input);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-12, "{got:?} vs {want:?}");
    }
}

#[test]
fn same_seed_gives_identical_archives() {
    for id in ModelId::ALL {
        let a = Model::<f32>::build(ModelConfig::canonical(id), 17)
            .unwrap()
            .to_archive()
            .unwrap();
        let b = Model::<f32>::build(ModelConfig::canonical(id), 17)
            .unwrap()
            .to_archive()
            .unwrap();
        let c = Model::<f32>::build(ModelConfig::canonical(id), 18)
            .unwrap()
            .to_archive()
            .unwrap();
        assert_eq!(a, b, "{id}");
        assert_ne!(a, c, "{id}");
    }
}

#[test]
fn parameter_shapes_depend_only_on_the_config() {
    for id in ModelId::ALL {
        let shapes = |seed| -> Vec<(String, Vec<usize>)> {
            Model::<f32>::build(ModelConfig::canonical(id), seed)
                .unwrap()
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.value.shape().to_vec()))
                .collect()
        };
        assert_eq!(shapes(1), shapes(2));
    }
}

#[test]
fn archive_round_trip_preserves_predictions() {
    let d = dims([12, 12, 12], 64, 32);
    let cfg = ModelConfig::build_config(ModelId::Comb1, d, &ArchSpec::compact()).unwrap();
    let model = Model::<f64>::build(cfg, 3).unwrap();
    let input = batch(&d, 2, 5);
    let restored = Model::<f64>::from_archive(&model.to_archive().unwrap()).unwrap();
    assert_eq!(restored.config(), model.config());
    // archives hold 32-bit values
    for (a, b) in model
        .predict(&input)
        .unwrap()
        .iter()
        .zip(restored.predict(&input).unwrap())
    {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn outputs_lie_strictly_inside_the_unit_interval() {
    let d = reduced();
    let input = batch(&d, 2, 8);
    for id in ModelId::ALL {
        let cfg = ModelConfig::build_config(id, d, &ArchSpec::canonical()).unwrap();
        let model = Model::<f64>::build(cfg, 5).unwrap();
        let p = model.predict(&input).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0), "{id}: {p:?}");
    }
}

#[test]
fn missing_domain_is_a_mismatch_error() {
    let d = dims([12, 12, 12], 64, 32);
    let model = Model::<f64>::build(
        ModelConfig::build_config(ModelId::Comb3, d, &ArchSpec::compact()).unwrap(),
        0,
    )
    .unwrap();
    let mut input = batch(&d, 2, 0);
    input.temporal = None;
    assert!(matches!(
        model.predict(&input),
        Err(Error::DomainMismatch { .. })
    ));
    let sm1 = Model::<f64>::build(
        ModelConfig::build_config(ModelId::Sm1, d, &ArchSpec::compact()).unwrap(),
        0,
    )
    .unwrap();
    let mut only_time = batch(&d, 2, 0);
    only_time.spatial = None;
    assert!(matches!(
        sm1.predict(&only_time),
        Err(Error::DomainMismatch { .. })
    ));
    let wrong = batch(&dims([12, 12, 13], 64, 32), 2, 0);
    assert!(matches!(sm1.predict(&wrong), Err(Error::Dimension { .. })));
}

#[test]
fn comb2_with_twin_branches_equals_doubled_features() {
    let d = dims([12, 12, 12], 64, 64);
    let cfg = ModelConfig::build_config(ModelId::Comb2, d, &ArchSpec::canonical()).unwrap();
    let mut model = Model::<f64>::build(cfg, 6).unwrap();
    let temporal: Vec<String> = model
        .params()
        .names()
        .into_iter()
        .filter(|n| n.starts_with("temporal."))
        .collect();
    for name in &temporal {
        let v = value(&model, name);
        set(&mut model, &name.replacen("temporal.", "frequency.", 1), v);
    }
    let mut input = batch(&d, 4, 2);
    input.frequency = input.temporal.clone();

    let mut g = Graph::no_grad();
    let (feats, out) = model.forward_features(&mut g, &input).unwrap();
    assert_eq!(g.value(feats[0]).data(), g.value(feats[1]).data());
    let got = g.value(out).data().to_vec();

    // one branch's features through a first fusion layer whose two column
    // blocks are summed
    let f = g.value(feats[0]).clone();
    let w = f.shape()[1];
    let w0 = model
        .params()
        .by_name("head.dense0.weight")
        .unwrap()
        .value
        .clone();
    let rows = w0.shape()[0];
    let summed: Vec<f64> = (0..rows)
        .flat_map(|r| {
            let row = &w0.data()[r * 2 * w..(r + 1) * 2 * w];
            (0..w).map(move |c| row[c] + row[w + c])
        })
        .collect();
    let mut h = Graph::no_grad();
    let fi = h.input(f);
    let wi = h.input(Tensor::new(vec![rows, w], summed).unwrap());
    let bi = h.input(
        model
            .params()
            .by_name("head.dense0.bias")
            .unwrap()
            .value
            .clone(),
    );
    let z = h.dense(fi, wi, Some(bi)).unwrap();
    let mut x = h.relu(z);
    for name in ["head.dense1", "head.out"] {
        let wv = h.input(
            model
                .params()
                .by_name(&format!("{name}.weight"))
                .unwrap()
                .value
                .clone(),
        );
        let bv = h.input(
            model
                .params()
                .by_name(&format!("{name}.bias"))
                .unwrap()
                .value
                .clone(),
        );
        let z = h.dense(x, wv, Some(bv)).unwrap();
        x = if name == "head.out" {
            h.sigmoid(z)
        } else {
            h.relu(z)
        };
    }
    for (a, b) in got.iter().zip(h.value(x).data()) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn tm2_without_lstm_contribution_reproduces_tm1() {
    let d = dims([12, 12, 12], 200, 100);
    let arch = ArchSpec::canonical();
    let tm1 = Model::<f64>::build(
        ModelConfig::build_config(ModelId::Tm1, d, &arch).unwrap(),
        1,
    )
    .unwrap();
    let mut tm2 = Model::<f64>::build(
        ModelConfig::build_config(ModelId::Tm2, d, &arch).unwrap(),
        2,
    )
    .unwrap();
    for b in 0..3 {
        for part in ["weight", "bias"] {
            let v = value(&tm1, &format!("temporal.block{b}.conv.{part}"));
            set(
                &mut tm2,
                &format!("temporal.par0.path0.block{b}.conv.{part}"),
                v,
            );
        }
    }
    let w1 = tm1
        .params()
        .by_name("temporal.dense0.weight")
        .unwrap()
        .value
        .clone();
    let (units, conv_width) = (w1.shape()[0], w1.shape()[1]);
    let lstm = arch.lstm_hidden;
    let mut w2 = Vec::new();
    for r in 0..units {
        w2.extend_from_slice(&w1.data()[r * conv_width..(r + 1) * conv_width]);
        w2.extend(std::iter::repeat(0.0).take(lstm));
    }
    set(&mut tm2, "temporal.dense0.weight", w2);
    for name in ["temporal.dense0.bias", "head.out.weight", "head.out.bias"] {
        let v = value(&tm1, name);
        set(&mut tm2, name, v);
    }
    let input = batch(&d, 4, 3);
    let a = tm1.predict(&input).unwrap();
    let b = tm2.predict(&input).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12, "{a:?} vs {b:?}");
    }
}

#[test]
fn fusion_width_is_the_sum_of_branch_widths() {
    let plan = |id| {
        Model::<f32>::build(ModelConfig::canonical(id), 0)
            .unwrap()
            .plan()
            .clone()
    };
    let comb3 = plan(ModelId::Comb3);
    let sm1 = plan(ModelId::Sm1);
    let tm1 = plan(ModelId::Tm1);
    assert_eq!(
        comb3.branch_widths,
        vec![sm1.branch_widths[0], tm1.branch_widths[0]]
    );
    assert_eq!(comb3.branch_widths, vec![32, 64]);
    let model = Model::<f32>::build(ModelConfig::canonical(ModelId::Comb3), 0).unwrap();
    assert_eq!(
        model
            .params()
            .by_name("head.dense0.weight")
            .unwrap()
            .value
            .shape(),
        &[128, 96]
    );
    assert_eq!(
        model
            .params()
            .by_name("head.dense1.weight")
            .unwrap()
            .value
            .shape(),
        &[32, 128]
    );
    assert_eq!(
        model
            .params()
            .by_name("head.out.weight")
            .unwrap()
            .value
            .shape(),
        &[1, 32]
    );
}

#[test]
fn combining_rejects_duplicates_and_checks_arity() {
    let sm1 = ModelConfig::canonical(ModelId::Sm1);
    let sm2 = ModelConfig::canonical(ModelId::Sm2);
    assert!(matches!(
        combine_models(ModelId::Comb3, &[sm1.clone(), sm2], &[128, 32]),
        Err(Error::Config(_))
    ));
    assert!(combine_models(ModelId::Comb3, &[sm1], &[128, 32]).is_err());
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct GoldenEntry {
    param_count: usize,
    layers: Vec<LayerShape>,
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/zoo_manifest.json")
}

/// Set `UPDATE_GOLDEN=1` to rewrite the manifest after an intended change.
#[test]
fn canonical_shapes_match_the_golden_manifest() {
    let current: BTreeMap<String, GoldenEntry> = ModelId::ALL
        .iter()
        .map(|&id| {
            let model = Model::<f32>::build(ModelConfig::canonical(id), 0).unwrap();
            assert_eq!(model.plan().param_count(), model.params().trainable_count());
            (
                id.to_string(),
                GoldenEntry {
                    param_count: model.plan().param_count(),
                    layers: model.plan().layers.clone(),
                },
            )
        })
        .collect();
    let path = golden_path();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(
            &path,
            serde_json::to_string_pretty(&current).unwrap() + "\n",
        )
        .unwrap();
    }
    let golden: BTreeMap<String, GoldenEntry> =
        serde_json::from_str(&std::fs::read_to_string(&path).expect("golden manifest present"))
            .unwrap();
    assert_eq!(current, golden);
}

#[test]
fn eval_forward_ignores_batch_composition() {
    let d = reduced();
    for id in ModelId::ALL {
        let cfg = ModelConfig::build_config(id, d, &ArchSpec::canonical()).unwrap();
        let mut model = Model::<f32>::build(cfg, 9).unwrap();
        // move running statistics away from their initial values
        let warm = batch(&d, 4, 99);
        let mut g = Graph::new();
        model
            .forward(&mut g, &to_f32(&warm), Mode::Train, &mut common::rng(0))
            .unwrap();

        let input = to_f32(&batch(&d, 3, 10));
        let together = model.predict(&input).unwrap();
        for i in 0..3 {
            let alone = model.predict(&sample_f32(&input, i)).unwrap();
            assert!((alone[0] - together[i]).abs() <= 1e-5, "{id} sample {i}");
        }
    }
}

fn to_f32(input: &ModelInput<f64>) -> ModelInput<f32> {
    let mut out = ModelInput::default();
    for d in input.supplied() {
        out.set(d, input.get(d).unwrap().cast::<f32>());
    }
    out
}

fn sample_f32(input: &ModelInput<f32>, i: usize) -> ModelInput<f32> {
    let mut out = ModelInput::default();
    for d in input.supplied() {
        let t = input.get(d).unwrap();
        let per: usize = t.shape()[1..].iter().product();
        let mut shape = t.shape().to_vec();
        shape[0] = 1;
        out.set(
            d,
            Tensor::new(shape, t.data()[i * per..(i + 1) * per].to_vec()).unwrap(),
        );
    }
    out
}

fn train_loss(model: &Model<f64>, input: &ModelInput<f64>, labels: &[f64]) -> f64 {
    let mut g = Graph::no_grad();
    let p = model
        .forward_frozen(&mut g, input, Mode::Train, &mut common::rng(77))
        .unwrap();
    let l = g.bce(p, labels).unwrap();
    g.value(l).data()[0]
}

#[test]
fn one_adam_step_lowers_the_training_loss() {
    let d = dims([24, 27, 24], 300, 150);
    let labels = [0.0, 1.0, 0.0, 1.0];
    let cfg_adam = AdamConfig {
        learning_rate: 1e-4,
        ..AdamConfig::default()
    };
    for id in ModelId::ALL {
        let cfg = ModelConfig::build_config(id, d, &ArchSpec::canonical()).unwrap();
        for seed in 0..5u64 {
            let mut model = Model::<f64>::build(cfg.clone(), seed).unwrap();
            let input = batch(&d, 4, 100 + seed);
            let before = train_loss(&model, &input, &labels);
            let mut g = Graph::new();
            let p = model
                .forward_frozen(&mut g, &input, Mode::Train, &mut common::rng(77))
                .unwrap();
            let loss = g.bce(p, &labels).unwrap();
            g.backward(loss).unwrap();
            model.params_mut().zero_grads();
            g.accumulate_param_grads(model.params_mut());
            let mut adam = AdamState::new(model.params(), cfg_adam);
            adam.step(model.params_mut()).unwrap();
            let after = train_loss(&model, &input, &labels);
            assert!(after < before, "{id} seed {seed}: {before} -> {after}");
        }
    }
}
