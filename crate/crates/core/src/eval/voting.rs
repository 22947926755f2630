use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::THRESHOLD;
use crate::data::Label;
use crate::error::{Error, Result};
use crate::zoo::ModelId;

/// Tolerance on the weight sum.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Soft-voting ensemble: `p = sum_i w_i p_i`, artifact when `p > 0.5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct VotingSchema {
    name: String,
    entries: Vec<(ModelId, f64)>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    name: String,
    weights: Vec<(ModelId, f64)>,
}

impl TryFrom<RawSchema> for VotingSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        VotingSchema::new(raw.name, raw.weights)
    }
}

impl From<VotingSchema> for RawSchema {
    fn from(s: VotingSchema) -> Self {
        RawSchema {
            name: s.name,
            weights: s.entries,
        }
    }
}

impl VotingSchema {
    pub fn new(name: impl Into<String>, entries: Vec<(ModelId, f64)>) -> Result<Self> {
        let name = name.into();
        let fail = |msg: String| Err(Error::Schema(format!("{name}: {msg}")));
        if entries.is_empty() {
            return fail("no models".into());
        }
        for (i, (id, w)) in entries.iter().enumerate() {
            if !(w.is_finite() && *w > 0.0) {
                return fail(format!("weight of {id} is {w}, must be positive"));
            }
            if entries[..i].iter().any(|(other, _)| other == id) {
                return fail(format!("{id} listed twice"));
            }
        }
        let sum: f64 = entries.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return fail(format!("weights sum to {sum}, not 1"));
        }
        Ok(Self { name, entries })
    }

    /// The four ensembles evaluated by default.
    pub fn defaults() -> Vec<VotingSchema> {
        use ModelId::*;
        [
            ("Schema_1", [(Sm1, 0.5), (Tm1, 0.25), (Ps1, 0.25)].to_vec()),
            ("Schema_2", [(Sm1, 0.5), (Tm2, 0.25), (Ps2, 0.25)].to_vec()),
            ("Schema_3", [(Sm2, 0.5), (Tm2, 0.25), (Ps2, 0.25)].to_vec()),
            ("Schema_4", [(Tm2, 0.5), (Ps2, 0.5)].to_vec()),
        ]
        .into_iter()
        .map(|(n, e)| VotingSchema::new(n, e).expect("default schemas are valid"))
        .collect()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entries(&self) -> &[(ModelId, f64)] {
        &self.entries
    }

    pub fn models(&self) -> impl Iterator<Item = ModelId> + '_ {
        self.entries.iter().map(|(id, _)| *id)
    }

    /// Combined probability and decision; `probabilities` follow the entry order.
    pub fn weighted_vote(&self, probabilities: &[f64]) -> Result<(f64, Label)> {
        if probabilities.len() != self.entries.len() {
            return Err(Error::Schema(format!(
                "{}: {} probabilities for {} models",
                self.name,
                probabilities.len(),
                self.entries.len()
            )));
        }
        let mut p = 0.0;
        for ((id, w), &q) in self.entries.iter().zip(probabilities) {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Schema(format!(
                    "{}: probability {q} of {id} outside [0, 1]",
                    self.name
                )));
            }
            p += w * q;
        }
        let label = if p > THRESHOLD {
            Label::Artifact
        } else {
            Label::Signal
        };
        Ok((p, label))
    }

    /// Reads schemas from JSON. The file is either one weight map
    /// (`{"sm1": 0.5, "tm1": 0.25, "ps1": 0.25}`, named after the file stem)
    /// or a map from schema names to weight maps.
    pub fn from_json(text: &str, default_name: &str) -> Result<Vec<VotingSchema>> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum File {
            One(BTreeMap<String, f64>),
            Many(BTreeMap<String, BTreeMap<String, f64>>),
        }
        let parse = |name: &str, weights: BTreeMap<String, f64>| -> Result<VotingSchema> {
            let entries = weights
                .into_iter()
                .map(|(k, w)| {
                    Ok((
                        k.parse::<ModelId>()
                            .map_err(|e| Error::Schema(e.to_string()))?,
                        w,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            VotingSchema::new(name, entries)
        };
        let file: File = serde_json::from_str(text)
            .map_err(|e| Error::Schema(format!("{default_name}: {e}")))?;
        match file {
            File::One(w) => Ok(vec![parse(default_name, w)?]),
            File::Many(m) => m.into_iter().map(|(name, w)| parse(&name, w)).collect(),
        }
    }

    pub fn read(path: &Path) -> Result<Vec<VotingSchema>> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::from(e).context(path.display().to_string()))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("schema");
        Self::from_json(&text, stem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ModelId::*;

    #[test]
    fn weighted_sum_example() {
        let s = &VotingSchema::defaults()[0];
        let (p, d) = s.weighted_vote(&[0.9, 0.8, 0.7]).unwrap();
        assert!((p - 0.825).abs() < 1e-15);
        assert_eq!(d, Label::Artifact);
    }

    #[test]
    fn exact_half_is_signal() {
        let s = VotingSchema::new("s", vec![(Tm2, 0.5), (Ps2, 0.5)]).unwrap();
        assert_eq!(s.weighted_vote(&[0.5, 0.5]).unwrap(), (0.5, Label::Signal));
        assert_eq!(s.weighted_vote(&[1.0, 0.0]).unwrap(), (0.5, Label::Signal));
    }

    #[test]
    fn weight_validation() {
        assert!(VotingSchema::new("s", vec![(Sm1, 0.5), (Tm1, 0.4)]).is_err());
        assert!(VotingSchema::new("s", vec![(Sm1, 1.5), (Tm1, -0.5)]).is_err());
        assert!(VotingSchema::new("s", vec![(Sm1, 0.5), (Sm1, 0.5)]).is_err());
        assert!(VotingSchema::new("s", vec![]).is_err());
        assert!(VotingSchema::new("s", vec![(Sm1, 0.5 + 5e-10), (Tm1, 0.5)]).is_ok());
        assert!(VotingSchema::new("s", vec![(Sm1, 0.5 + 5e-9), (Tm1, 0.5)]).is_err());
    }

    #[test]
    fn count_mismatch_is_schema_error() {
        let s = &VotingSchema::defaults()[3];
        assert!(matches!(s.weighted_vote(&[0.3]), Err(Error::Schema(_))));
    }

    #[test]
    fn json_forms() {
        let one =
            VotingSchema::from_json(r#"{"sm2": 0.5, "tm2": 0.25, "ps2": 0.25}"#, "mine").unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].name(), "mine");
        let many =
            VotingSchema::from_json(r#"{"a": {"tm2": 0.5, "ps2": 0.5}, "b": {"sm1": 1.0}}"#, "x")
                .unwrap();
        assert_eq!(
            many.iter().map(|s| s.name()).collect::<Vec<_>>(),
            ["a", "b"]
        );
        let bad = VotingSchema::from_json(r#"{"sm2": 0.5, "tm2": 0.25, "ps2": 0.15}"#, "s3");
        assert!(matches!(bad, Err(Error::Schema(_))));
        assert!(VotingSchema::from_json(r#"{"xx9": 1.0}"#, "s").is_err());
    }

    #[test]
    fn serde_round_trip_revalidates() {
        let s = VotingSchema::defaults().remove(2);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<VotingSchema>(&json).unwrap(), s);
        let broken = json.replace("0.25", "0.2");
        assert!(serde_json::from_str::<VotingSchema>(&broken).is_err());
    }
}
