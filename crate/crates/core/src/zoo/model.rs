use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Domain, ModelConfig, Stage};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    read_archive, write_archive, ConvSpec, Graph, Mode, ParamId, ParamStore, Tensor, Var,
};

/// Output extents (batch axis excluded) of one named layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub path: String,
    pub output: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Conv/dense weights feeding ReLU.
    He {
        fan_in: usize,
    },
    /// Output unit feeding the sigmoid.
    Glorot {
        fan_in: usize,
        fan_out: usize,
    },
    Lstm {
        hidden: usize,
    },
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
    trainable: bool,
}

/// Shapes and parameter layout implied by a config, computed without
/// allocating any parameters.
#[derive(Debug, Clone)]
pub struct ModelPlan {
    pub layers: Vec<LayerShape>,
    /// Width of each branch's feature vector, in branch order.
    pub branch_widths: Vec<usize>,
    params: Vec<ParamSpec>,
}

impl ModelPlan {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut plan = ModelPlan {
            layers: Vec::new(),
            branch_widths: Vec::new(),
            params: Vec::new(),
        };
        for branch in &config.branches {
            let mut shape = vec![1];
            shape.extend(config.input.extents(branch.domain));
            let out = plan.stages(branch.domain.name(), branch.domain, &branch.stages, shape)?;
            plan.branch_widths.push(out.iter().product());
        }
        let mut width: usize = plan.branch_widths.iter().sum();
        if config.branches.len() > 1 {
            plan.layers.push(LayerShape {
                path: "head.concat".into(),
                output: vec![width],
            });
        }
        for (i, &units) in config.head.iter().enumerate() {
            plan.dense(
                &format!("head.dense{i}"),
                width,
                units,
                Init::He { fan_in: width },
            );
            width = units;
        }
        plan.dense(
            "head.out",
            width,
            1,
            Init::Glorot {
                fan_in: width,
                fan_out: 1,
            },
        );
        Ok(plan)
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }

    fn add(&mut self, name: String, shape: Vec<usize>, init: Init, trainable: bool) {
        self.params.push(ParamSpec {
            name,
            shape,
            init,
            trainable,
        });
    }

    fn dense(&mut self, path: &str, n_in: usize, units: usize, init: Init) {
        self.add(format!("{path}.weight"), vec![units, n_in], init, true);
        self.add(format!("{path}.bias"), vec![units], Init::Zeros, true);
        self.layers.push(LayerShape {
            path: path.to_string(),
            output: vec![units],
        });
    }

    fn stages(
        &mut self,
        prefix: &str,
        domain: Domain,
        stages: &[Stage],
        mut shape: Vec<usize>,
    ) -> Result<Vec<usize>> {
        let rank = domain.conv_rank();
        let mut names = StageNames::default();
        for stage in stages {
            let path = names.next(prefix, stage);
            match stage {
                Stage::ConvBlock {
                    out_channels,
                    kernel,
                    batch_norm,
                    residual,
                    pool,
                } => {
                    let cin = shape[0];
                    let spec = ConvSpec::new(rank, *kernel, cin, *out_channels);
                    let mut out = spec
                        .output_extents(&shape[1..])
                        .map_err(|e| e.context(format!("layer {path}")))?;
                    let fan_in = cin * kernel.pow(rank as u32);
                    self.add(
                        format!("{path}.conv.weight"),
                        spec.weight_shape(),
                        Init::He { fan_in },
                        true,
                    );
                    self.add(
                        format!("{path}.conv.bias"),
                        vec![*out_channels],
                        Init::Zeros,
                        true,
                    );
                    if *batch_norm {
                        self.add(
                            format!("{path}.bn.gamma"),
                            vec![*out_channels],
                            Init::Ones,
                            true,
                        );
                        self.add(
                            format!("{path}.bn.beta"),
                            vec![*out_channels],
                            Init::Zeros,
                            true,
                        );
                        self.add(
                            format!("{path}.bn.running_mean"),
                            vec![*out_channels],
                            Init::Zeros,
                            false,
                        );
                        self.add(
                            format!("{path}.bn.running_var"),
                            vec![*out_channels],
                            Init::Ones,
                            false,
                        );
                    }
                    if *residual && cin != *out_channels {
                        let skip = ConvSpec::new(rank, 1, cin, *out_channels);
                        self.add(
                            format!("{path}.skip.weight"),
                            skip.weight_shape(),
                            Init::He { fan_in: cin },
                            true,
                        );
                        self.add(
                            format!("{path}.skip.bias"),
                            vec![*out_channels],
                            Init::Zeros,
                            true,
                        );
                    }
                    if let Some(p) = pool {
                        out = crate::tensor::ops::pool::pooled_extents(
                            &out,
                            &vec![*p; rank],
                            &vec![*p; rank],
                        )
                        .map_err(|e| e.context(format!("layer {path}")))?;
                    }
                    shape = vec![*out_channels];
                    shape.extend(out);
                }
                Stage::Flatten => shape = vec![shape.iter().product()],
                Stage::Dense { units } => {
                    let n_in = shape.iter().product();
                    self.dense(&path, n_in, *units, Init::He { fan_in: n_in });
                    shape = vec![*units];
                    continue;
                }
                Stage::Lstm { hidden } => {
                    if shape.len() != 2 {
                        return Err(Error::Config(format!(
                            "{path}: LSTM needs a [channels, time] input, got {shape:?}"
                        )));
                    }
                    let (features, h) = (shape[0], *hidden);
                    if h == 0 {
                        return Err(Error::Config(format!(
                            "{path}: hidden size must be positive"
                        )));
                    }
                    self.add(
                        format!("{path}.w_ih"),
                        vec![4 * h, features],
                        Init::Lstm { hidden: h },
                        true,
                    );
                    self.add(
                        format!("{path}.w_hh"),
                        vec![4 * h, h],
                        Init::Lstm { hidden: h },
                        true,
                    );
                    self.add(
                        format!("{path}.bias"),
                        vec![4 * h],
                        Init::Lstm { hidden: h },
                        true,
                    );
                    shape = vec![h];
                }
                Stage::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(Error::Config(format!(
                            "{path}: dropout rate {rate} outside [0, 1)"
                        )));
                    }
                }
                Stage::Parallel { paths } => {
                    let mut width = 0;
                    for (j, sub) in paths.iter().enumerate() {
                        let out =
                            self.stages(&format!("{path}.path{j}"), domain, sub, shape.clone())?;
                        width += out.iter().product::<usize>();
                    }
                    shape = vec![width];
                }
            }
            self.layers.push(LayerShape {
                path,
                output: shape.clone(),
            });
        }
        Ok(vec![shape.iter().product()])
    }
}

#[derive(Default)]
struct StageNames {
    block: usize,
    dense: usize,
    lstm: usize,
    par: usize,
    dropout: usize,
    flatten: usize,
}

impl StageNames {
    fn next(&mut self, prefix: &str, stage: &Stage) -> String {
        let (kind, counter) = match stage {
            Stage::ConvBlock { .. } => ("block", &mut self.block),
            Stage::Dense { .. } => ("dense", &mut self.dense),
            Stage::Lstm { .. } => ("lstm", &mut self.lstm),
            Stage::Parallel { .. } => ("par", &mut self.par),
            Stage::Dropout { .. } => ("dropout", &mut self.dropout),
            Stage::Flatten => ("flatten", &mut self.flatten),
        };
        let name = format!("{prefix}.{kind}{counter}");
        *counter += 1;
        name
    }
}

/// One batch of model inputs. Spatial maps are `[batch, 1, x, y, z]`,
/// timecourses and spectra `[batch, 1, length]`.
#[derive(Debug, Clone, Default)]
pub struct ModelInput<T> {
    pub spatial: Option<Tensor<T>>,
    pub temporal: Option<Tensor<T>>,
    pub frequency: Option<Tensor<T>>,
}

impl<T: Scalar> ModelInput<T> {
    pub fn get(&self, domain: Domain) -> Option<&Tensor<T>> {
        match domain {
            Domain::Spatial => self.spatial.as_ref(),
            Domain::Temporal => self.temporal.as_ref(),
            Domain::Frequency => self.frequency.as_ref(),
        }
    }

    pub fn set(&mut self, domain: Domain, t: Tensor<T>) {
        match domain {
            Domain::Spatial => self.spatial = Some(t),
            Domain::Temporal => self.temporal = Some(t),
            Domain::Frequency => self.frequency = Some(t),
        }
    }

    pub fn supplied(&self) -> Vec<Domain> {
        [Domain::Spatial, Domain::Temporal, Domain::Frequency]
            .into_iter()
            .filter(|&d| self.get(d).is_some())
            .collect()
    }

    pub fn batch_size(&self) -> Option<usize> {
        self.supplied()
            .first()
            .map(|&d| self.get(d).expect("supplied").shape()[0])
    }
}

/// An instantiated network: configuration plus named parameters.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    plan: ModelPlan,
    params: ParamStore<T>,
}

type BnUpdates<T> = Vec<(ParamId, Vec<T>)>;

impl<T: Scalar> Model<T> {
    /// Instantiates parameters deterministically from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let plan = ModelPlan::new(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for spec in &plan.params {
            let n: usize = spec.shape.iter().product();
            let uniform = |rng: &mut ChaCha8Rng, limit: f64| -> Vec<T> {
                (0..n)
                    .map(|_| T::from_f64_lossy(rng.gen_range(-limit..limit)))
                    .collect()
            };
            let data = match spec.init {
                Init::He { fan_in } => uniform(&mut rng, (6.0 / fan_in as f64).sqrt()),
                Init::Glorot { fan_in, fan_out } => {
                    uniform(&mut rng, (6.0 / (fan_in + fan_out) as f64).sqrt())
                }
                Init::Lstm { hidden } => uniform(&mut rng, 1.0 / (hidden as f64).sqrt()),
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
            };
            params.add(
                spec.name.clone(),
                Tensor::new(spec.shape.clone(), data)?,
                spec.trainable,
            )?;
        }
        Ok(Self {
            config,
            plan,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn plan(&self) -> &ModelPlan {
        &self.plan
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Parameter archive with the model configuration embedded as metadata.
    pub fn to_archive(&self) -> Result<Vec<u8>> {
        write_archive(&self.params, Some(serde_json::to_value(&self.config)?))
    }

    pub fn from_archive(bytes: &[u8]) -> Result<Self> {
        let (manifest, _) = read_archive::<T>(bytes)?;
        let config: ModelConfig = serde_json::from_value(
            manifest
                .metadata
                .ok_or_else(|| Error::Format("archive carries no model configuration".into()))?,
        )?;
        let mut model = Model::build(config, 0)?;
        model.params.load_archive(bytes)?;
        Ok(model)
    }

    fn check_input(&self, input: &ModelInput<T>) -> Result<usize> {
        let mut batch = None;
        for branch in &self.config.branches {
            let t = input
                .get(branch.domain)
                .ok_or_else(|| Error::DomainMismatch {
                    model: self.config.id.to_string(),
                    expected: format!("{:?}", self.config.domains()),
                    supplied: format!("{:?}", input.supplied()),
                })?;
            let mut expect = vec![t.shape()[0], 1];
            expect.extend(self.config.input.extents(branch.domain));
            if t.shape() != expect.as_slice() {
                return Err(Error::dim(
                    "model input",
                    0,
                    format!(
                        "{} input has shape {:?}, expected {expect:?}",
                        branch.domain,
                        t.shape()
                    ),
                ));
            }
            match batch {
                None => batch = Some(t.shape()[0]),
                Some(b) if b != t.shape()[0] => {
                    return Err(Error::dim(
                        "model input",
                        0,
                        "domains disagree on batch size",
                    ));
                }
                _ => {}
            }
        }
        Ok(batch.expect("validated configs have a branch"))
    }

    fn p(&self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
        Ok(g.param(&self.params, id))
    }

    fn run_stages<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        prefix: &str,
        domain: Domain,
        stages: &[Stage],
        mut x: Var,
        mode: Mode,
        rng: &mut R,
        bn: &mut BnUpdates<T>,
    ) -> Result<Var> {
        let rank = domain.conv_rank();
        let mut names = StageNames::default();
        for stage in stages {
            let path = names.next(prefix, stage);
            x = match stage {
                Stage::ConvBlock {
                    out_channels,
                    kernel,
                    batch_norm,
                    residual,
                    pool,
                } => {
                    let cin = g.shape(x)[1];
                    let spec = ConvSpec::new(rank, *kernel, cin, *out_channels);
                    let w = self.p(g, &format!("{path}.conv.weight"))?;
                    let b = self.p(g, &format!("{path}.conv.bias"))?;
                    let mut y = g.conv(x, w, Some(b), &spec)?;
                    if *batch_norm {
                        let gamma = self.p(g, &format!("{path}.bn.gamma"))?;
                        let beta = self.p(g, &format!("{path}.bn.beta"))?;
                        let mean_id = self
                            .params
                            .id(&format!("{path}.bn.running_mean"))
                            .expect("planned");
                        let var_id = self
                            .params
                            .id(&format!("{path}.bn.running_var"))
                            .expect("planned");
                        let mut rm = self.params.get(mean_id).value.data().to_vec();
                        let mut rv = self.params.get(var_id).value.data().to_vec();
                        y = g.batch_norm(y, gamma, beta, &mut rm, &mut rv, mode)?;
                        if mode == Mode::Train {
                            bn.push((mean_id, rm));
                            bn.push((var_id, rv));
                        }
                    }
                    if *residual {
                        let target = g.shape(y)[2..].to_vec();
                        let mut skip = g.crop(x, &target)?;
                        if cin != *out_channels {
                            let sw = self.p(g, &format!("{path}.skip.weight"))?;
                            let sb = self.p(g, &format!("{path}.skip.bias"))?;
                            skip = g.conv(
                                skip,
                                sw,
                                Some(sb),
                                &ConvSpec::new(rank, 1, cin, *out_channels),
                            )?;
                        }
                        y = g.add(y, skip)?;
                    }
                    y = g.relu(y);
                    if let Some(p) = pool {
                        y = g.max_pool(y, &vec![*p; rank], &vec![*p; rank])?;
                    }
                    y
                }
                Stage::Flatten => g.flatten(x)?,
                Stage::Dense { units: _ } => {
                    let flat = if g.shape(x).len() > 2 {
                        g.flatten(x)?
                    } else {
                        x
                    };
                    let w = self.p(g, &format!("{path}.weight"))?;
                    let b = self.p(g, &format!("{path}.bias"))?;
                    let y = g.dense(flat, w, Some(b))?;
                    g.relu(y)
                }
                Stage::Lstm { hidden } => {
                    let s = g.shape(x).to_vec();
                    let seq = if s[1] == 1 {
                        g.reshape(x, vec![s[0], s[2], 1])?
                    } else {
                        g.swap_last(x)?
                    };
                    let wi = self.p(g, &format!("{path}.w_ih"))?;
                    let wh = self.p(g, &format!("{path}.w_hh"))?;
                    let b = self.p(g, &format!("{path}.bias"))?;
                    g.lstm(seq, wi, wh, b, *hidden)?
                }
                Stage::Dropout { rate } => g.dropout(x, *rate, mode, rng)?,
                Stage::Parallel { paths } => {
                    let mut outs = Vec::with_capacity(paths.len());
                    for (j, sub) in paths.iter().enumerate() {
                        let o = self.run_stages(
                            g,
                            &format!("{path}.path{j}"),
                            domain,
                            sub,
                            x,
                            mode,
                            rng,
                            bn,
                        )?;
                        outs.push(if g.shape(o).len() > 2 {
                            g.flatten(o)?
                        } else {
                            o
                        });
                    }
                    g.concat(&outs)?
                }
            };
        }
        if g.shape(x).len() > 2 {
            x = g.flatten(x)?;
        }
        Ok(x)
    }

    fn run<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        input: &ModelInput<T>,
        mode: Mode,
        rng: &mut R,
        bn: &mut BnUpdates<T>,
    ) -> Result<(Vec<Var>, Var)> {
        self.check_input(input)?;
        let mut feats = Vec::with_capacity(self.config.branches.len());
        for branch in &self.config.branches {
            let x = g.input(input.get(branch.domain).expect("checked").clone());
            feats.push(self.run_stages(
                g,
                branch.domain.name(),
                branch.domain,
                &branch.stages,
                x,
                mode,
                rng,
                bn,
            )?);
        }
        let mut h = if feats.len() == 1 {
            feats[0]
        } else {
            g.concat(&feats)?
        };
        for i in 0..self.config.head.len() {
            let w = self.p(g, &format!("head.dense{i}.weight"))?;
            let b = self.p(g, &format!("head.dense{i}.bias"))?;
            let y = g.dense(h, w, Some(b))?;
            h = g.relu(y);
        }
        let w = self.p(g, "head.out.weight")?;
        let b = self.p(g, "head.out.bias")?;
        let logit = g.dense(h, w, Some(b))?;
        Ok((feats, g.sigmoid(logit)))
    }

    /// Records a forward pass on `g` and returns the `[batch, 1]` probability
    /// node. In train mode batch-norm running statistics are updated.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        g: &mut Graph<T>,
        input: &ModelInput<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let mut bn = Vec::new();
        let (_, out) = self.run(g, input, mode, rng, &mut bn)?;
        for (id, values) in bn {
            self.params
                .get_mut(id)
                .value
                .data_mut()
                .copy_from_slice(&values);
        }
        Ok(out)
    }

    /// Like [`Model::forward`] but leaves batch-norm running statistics as
    /// they are.
    pub fn forward_frozen<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        input: &ModelInput<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        Ok(self.run(g, input, mode, rng, &mut Vec::new())?.1)
    }

    /// Per-branch feature nodes (the inputs of the fusion head) and the output,
    /// in eval mode.
    pub fn forward_features(
        &self,
        g: &mut Graph<T>,
        input: &ModelInput<T>,
    ) -> Result<(Vec<Var>, Var)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.run(g, input, Mode::Eval, &mut rng, &mut Vec::new())
    }

    /// Eval-mode artifact probabilities, one per sample.
    pub fn predict(&self, input: &ModelInput<T>) -> Result<Vec<T>> {
        let mut g = Graph::no_grad();
        let (_, out) = self.forward_features(&mut g, input)?;
        Ok(g.value(out).data().to_vec())
    }
}
