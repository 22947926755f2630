use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Spatial,
    Temporal,
    Frequency,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Spatial => "spatial",
            Domain::Temporal => "temporal",
            Domain::Frequency => "frequency",
        }
    }

    /// Spatial axes of the convolutions applied to this input.
    pub fn conv_rank(self) -> usize {
        match self {
            Domain::Spatial => 3,
            Domain::Temporal | Domain::Frequency => 1,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Sm1,
    Sm2,
    Sm3,
    Tm1,
    Tm2,
    Ps1,
    Ps2,
    Comb1,
    Comb2,
    Comb3,
    Comb4,
}

impl ModelId {
    pub const ALL: [ModelId; 11] = [
        ModelId::Sm1,
        ModelId::Sm2,
        ModelId::Sm3,
        ModelId::Tm1,
        ModelId::Tm2,
        ModelId::Ps1,
        ModelId::Ps2,
        ModelId::Comb1,
        ModelId::Comb2,
        ModelId::Comb3,
        ModelId::Comb4,
    ];

    pub const SINGLE_DOMAIN: [ModelId; 7] = [
        ModelId::Sm1,
        ModelId::Sm2,
        ModelId::Sm3,
        ModelId::Tm1,
        ModelId::Tm2,
        ModelId::Ps1,
        ModelId::Ps2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Sm1 => "sm1",
            ModelId::Sm2 => "sm2",
            ModelId::Sm3 => "sm3",
            ModelId::Tm1 => "tm1",
            ModelId::Tm2 => "tm2",
            ModelId::Ps1 => "ps1",
            ModelId::Ps2 => "ps2",
            ModelId::Comb1 => "comb1",
            ModelId::Comb2 => "comb2",
            ModelId::Comb3 => "comb3",
            ModelId::Comb4 => "comb4",
        }
    }

    /// Branches a combined model fuses; a single-domain model is its own branch.
    pub fn parts(self) -> Vec<ModelId> {
        use ModelId::*;
        match self {
            Comb1 => vec![Sm1, Tm1, Ps1],
            Comb2 => vec![Tm1, Ps1],
            Comb3 => vec![Sm1, Tm1],
            Comb4 => vec![Tm2, Ps2],
            single => vec![single],
        }
    }

    pub fn is_combined(self) -> bool {
        self.parts() != vec![self]
    }

    pub fn domains(self) -> Vec<Domain> {
        use ModelId::*;
        let mut d: Vec<Domain> = self
            .parts()
            .into_iter()
            .map(|p| match p {
                Sm1 | Sm2 | Sm3 => Domain::Spatial,
                Tm1 | Tm2 => Domain::Temporal,
                Ps1 | Ps2 => Domain::Frequency,
                _ => unreachable!("parts are single-domain"),
            })
            .collect();
        d.sort();
        d
    }

    /// Spatial-only models; these use the smaller batch and shorter patience.
    pub fn is_spatial_only(self) -> bool {
        self.domains() == [Domain::Spatial]
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown model id {s:?}")))
    }
}

/// Input extents per domain (batch and channel axes excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub spatial: [usize; 3],
    pub temporal: usize,
    pub frequency: usize,
}

impl Default for InputDims {
    fn default() -> Self {
        Self {
            spatial: [45, 54, 45],
            temporal: 1200,
            frequency: 600,
        }
    }
}

impl InputDims {
    pub fn extents(&self, domain: Domain) -> Vec<usize> {
        match domain {
            Domain::Spatial => self.spatial.to_vec(),
            Domain::Temporal => vec![self.temporal],
            Domain::Frequency => vec![self.frequency],
        }
    }
}

/// Width/kernel choices shared by every architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub spatial_channels: Vec<usize>,
    pub spatial_kernel: usize,
    pub spatial_pool: usize,
    pub spatial_dense: Vec<usize>,
    /// `(channels, kernel)` per 1-D conv block.
    pub sequence_blocks: Vec<(usize, usize)>,
    pub sequence_pool: usize,
    pub sequence_dense: Vec<usize>,
    pub lstm_hidden: usize,
    pub dropout: f64,
    pub fusion_dense: Vec<usize>,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self::canonical()
    }
}

impl ArchSpec {
    pub fn canonical() -> Self {
        Self {
            spatial_channels: vec![8, 16, 32],
            spatial_kernel: 3,
            spatial_pool: 2,
            spatial_dense: vec![128, 32],
            sequence_blocks: vec![(16, 5), (32, 5), (64, 3)],
            sequence_pool: 2,
            sequence_dense: vec![64],
            lstm_hidden: 64,
            dropout: 0.3,
            fusion_dense: vec![128, 32],
        }
    }

    /// Narrow, shallower variant that fits a 12³ map; used for gradient checks.
    pub fn compact() -> Self {
        Self {
            spatial_channels: vec![2, 3],
            spatial_kernel: 3,
            spatial_pool: 2,
            spatial_dense: vec![4, 3],
            sequence_blocks: vec![(2, 5), (3, 5), (3, 3)],
            sequence_pool: 2,
            sequence_dense: vec![4],
            lstm_hidden: 3,
            dropout: 0.3,
            fusion_dense: vec![128, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stage {
    /// Convolution, optional batch norm, optional projected skip connection,
    /// ReLU, optional max pooling.
    ConvBlock {
        out_channels: usize,
        kernel: usize,
        batch_norm: bool,
        residual: bool,
        pool: Option<usize>,
    },
    Flatten,
    /// Fully connected layer followed by ReLU.
    Dense {
        units: usize,
    },
    /// Runs every path on the same input; flattened outputs are concatenated.
    Parallel {
        paths: Vec<Vec<Stage>>,
    },
    /// Final hidden state of an LSTM over the sequence axis.
    Lstm {
        hidden: usize,
    },
    Dropout {
        rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub domain: Domain,
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub id: ModelId,
    pub input: InputDims,
    pub branches: Vec<BranchConfig>,
    /// Hidden ReLU widths after the branch features are joined; a single
    /// sigmoid unit always follows.
    pub head: Vec<usize>,
}

fn spatial_stages(arch: &ArchSpec, batch_norm: bool, residual: bool) -> Vec<Stage> {
    let mut stages: Vec<Stage> = arch
        .spatial_channels
        .iter()
        .map(|&c| Stage::ConvBlock {
            out_channels: c,
            kernel: arch.spatial_kernel,
            batch_norm,
            residual,
            pool: Some(arch.spatial_pool),
        })
        .collect();
    stages.push(Stage::Flatten);
    stages.extend(
        arch.spatial_dense
            .iter()
            .map(|&u| Stage::Dense { units: u }),
    );
    stages
}

fn sequence_conv_stack(arch: &ArchSpec) -> Vec<Stage> {
    let mut stages: Vec<Stage> = arch
        .sequence_blocks
        .iter()
        .map(|&(c, k)| Stage::ConvBlock {
            out_channels: c,
            kernel: k,
            batch_norm: false,
            residual: false,
            pool: Some(arch.sequence_pool),
        })
        .collect();
    stages.push(Stage::Flatten);
    stages
}

fn sequence_stages(arch: &ArchSpec, with_lstm: bool) -> Vec<Stage> {
    let mut stages = if with_lstm {
        vec![Stage::Parallel {
            paths: vec![
                sequence_conv_stack(arch),
                vec![
                    Stage::Lstm {
                        hidden: arch.lstm_hidden,
                    },
                    Stage::Dropout { rate: arch.dropout },
                ],
            ],
        }]
    } else {
        sequence_conv_stack(arch)
    };
    stages.extend(
        arch.sequence_dense
            .iter()
            .map(|&u| Stage::Dense { units: u }),
    );
    stages
}

impl ModelConfig {
    /// Architecture for `id` at the given input extents.
    pub fn build_config(id: ModelId, input: InputDims, arch: &ArchSpec) -> Result<Self> {
        use ModelId::*;
        let branch = |domain, stages| BranchConfig { domain, stages };
        let single = |b: BranchConfig| ModelConfig {
            id,
            input,
            branches: vec![b],
            head: vec![],
        };
        Ok(match id {
            Sm1 => single(branch(Domain::Spatial, spatial_stages(arch, false, false))),
            Sm2 => single(branch(Domain::Spatial, spatial_stages(arch, true, false))),
            Sm3 => single(branch(Domain::Spatial, spatial_stages(arch, true, true))),
            Tm1 => single(branch(Domain::Temporal, sequence_stages(arch, false))),
            Tm2 => single(branch(Domain::Temporal, sequence_stages(arch, true))),
            Ps1 => single(branch(Domain::Frequency, sequence_stages(arch, false))),
            Ps2 => single(branch(Domain::Frequency, sequence_stages(arch, true))),
            Comb1 | Comb2 | Comb3 | Comb4 => {
                let parts = id
                    .parts()
                    .into_iter()
                    .map(|p| ModelConfig::build_config(p, input, arch))
                    .collect::<Result<Vec<_>>>()?;
                combine_models(id, &parts, &arch.fusion_dense)?
            }
        })
    }

    pub fn canonical(id: ModelId) -> Self {
        Self::build_config(id, InputDims::default(), &ArchSpec::canonical())
            .expect("canonical configs are valid")
    }

    pub fn domains(&self) -> Vec<Domain> {
        let mut d: Vec<Domain> = self.branches.iter().map(|b| b.domain).collect();
        d.sort();
        d
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::Config(format!("{}: no branches", self.id)));
        }
        let mut domains = self.domains();
        domains.dedup();
        if domains.len() != self.branches.len() {
            return Err(Error::Config(format!(
                "{}: duplicate input domains",
                self.id
            )));
        }
        if domains != self.id.domains() {
            return Err(Error::Config(format!(
                "{} must consume {:?}, config has {:?}",
                self.id,
                self.id.domains(),
                domains
            )));
        }
        Ok(())
    }
}

/// Fuses single-domain configurations: every branch keeps all its layers up to
/// (not including) its output unit, the features are concatenated and passed
/// through the fusion widths, then a single sigmoid unit.
pub fn combine_models(id: ModelId, parts: &[ModelConfig], fusion: &[usize]) -> Result<ModelConfig> {
    if !(2..=3).contains(&parts.len()) {
        return Err(Error::Config(format!(
            "a combined model fuses 2 or 3 branches, got {}",
            parts.len()
        )));
    }
    let mut branches = Vec::new();
    for p in parts {
        if p.branches.len() != 1 || !p.head.is_empty() {
            return Err(Error::Config(format!(
                "{} is not a single-domain model",
                p.id
            )));
        }
        if branches
            .iter()
            .any(|b: &BranchConfig| b.domain == p.branches[0].domain)
        {
            return Err(Error::Config(format!(
                "duplicate {} branch in combination",
                p.branches[0].domain
            )));
        }
        branches.push(p.branches[0].clone());
    }
    let input = parts[0].input;
    let cfg = ModelConfig {
        id,
        input,
        branches,
        head: fusion.to_vec(),
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_parse_and_print() {
        for id in ModelId::ALL {
            assert_eq!(id.name().parse::<ModelId>().unwrap(), id);
        }
        assert!("sm9".parse::<ModelId>().is_err());
    }

    #[test]
    fn domain_assignments() {
        use Domain::*;
        assert_eq!(ModelId::Sm3.domains(), vec![Spatial]);
        assert_eq!(ModelId::Tm2.domains(), vec![Temporal]);
        assert_eq!(ModelId::Ps1.domains(), vec![Frequency]);
        assert_eq!(ModelId::Comb1.domains(), vec![Spatial, Temporal, Frequency]);
        assert_eq!(ModelId::Comb2.domains(), vec![Temporal, Frequency]);
        assert_eq!(ModelId::Comb3.domains(), vec![Spatial, Temporal]);
        assert_eq!(ModelId::Comb4.domains(), vec![Temporal, Frequency]);
        for id in ModelId::ALL {
            ModelConfig::canonical(id).validate().unwrap();
        }
    }

    #[test]
    fn combinations_follow_the_listed_parts() {
        use ModelId::*;
        assert_eq!(Comb1.parts(), vec![Sm1, Tm1, Ps1]);
        assert_eq!(Comb2.parts(), vec![Tm1, Ps1]);
        assert_eq!(Comb3.parts(), vec![Sm1, Tm1]);
        assert_eq!(Comb4.parts(), vec![Tm2, Ps2]);
        let comb4 = ModelConfig::canonical(Comb4);
        assert_eq!(comb4.head, vec![128, 32]);
        assert_eq!(comb4.branches[0], ModelConfig::canonical(Tm2).branches[0]);
        assert_eq!(comb4.branches[1], ModelConfig::canonical(Ps2).branches[0]);
    }

    #[test]
    fn duplicate_domains_are_rejected() {
        let tm1 = ModelConfig::canonical(ModelId::Tm1);
        let tm2 = ModelConfig::canonical(ModelId::Tm2);
        assert!(matches!(
            combine_models(ModelId::Comb2, &[tm1.clone(), tm2], &[128, 32]),
            Err(Error::Config(_))
        ));
        assert!(combine_models(ModelId::Comb2, &[tm1], &[128, 32]).is_err());
    }
}
