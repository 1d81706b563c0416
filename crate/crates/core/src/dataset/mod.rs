//! Benchmark datasets: schema, encoding, normalization, folds and projection.
//!
//! Every sample is split into a continuous part and a 1-of-K encoded
//! categorical part. All downstream modules consume that layout through
//! [`FeatureLayout`].

mod idx;
mod load;
mod normalize;
mod pca;
mod split;
pub mod synthetic;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use idx::{load_mnist, read_idx_images, read_idx_labels, IdxImages};
pub use load::{load_dataset, load_schema};
pub use normalize::{apply_zscore, zscore_normalize, ZScoreParams};
pub use pca::{pca_project, PcaProjection};
pub use split::{stratified_kfold, FoldSplit};

/// Stable, dense sample identifier (index into [`Dataset::samples`]).
pub type SampleId = usize;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: unknown category {value:?} for attribute {attribute}")]
    UnknownCategory {
        line: u64,
        attribute: String,
        value: String,
    },
    #[error("line {line}: unknown class {value:?}")]
    UnknownClass { line: u64, value: String },
    #[error("no samples")]
    NoSamples,
    #[error("dataset is already normalized")]
    AlreadyNormalized,
    #[error("fold count must be at least 2, got {0}")]
    TooFewFolds(usize),
    #[error("class {class} has {count} samples, fewer than {folds} folds")]
    ClassTooSmall {
        class: usize,
        count: usize,
        folds: usize,
    },
    #[error("sample {0} has no class label")]
    MissingLabel(SampleId),
    #[error("pca: {0}")]
    Pca(String),
    #[error("idx: {0}")]
    Idx(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttributeKind {
    Continuous,
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    #[serde(flatten)]
    pub kind: AttributeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub name: String,
    pub classes: Vec<String>,
}

/// Attribute layout plus the class column, as read from a schema file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub attributes: Vec<Attribute>,
    pub label: LabelSpec,
}

impl Schema {
    pub fn continuous(names: &[&str], label: &str, classes: &[&str]) -> Self {
        Schema {
            attributes: names
                .iter()
                .map(|n| Attribute {
                    name: n.to_string(),
                    kind: AttributeKind::Continuous,
                })
                .collect(),
            label: LabelSpec {
                name: label.to_string(),
                classes: classes.iter().map(|c| c.to_string()).collect(),
            },
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.attributes.is_empty() {
            return Err(DatasetError::Schema("at least one feature attribute is required".into()));
        }
        let mut seen = HashSet::new();
        for attr in &self.attributes {
            if !seen.insert(attr.name.as_str()) {
                return Err(DatasetError::Schema(format!("duplicate attribute {}", attr.name)));
            }
            if let AttributeKind::Categorical { categories } = &attr.kind {
                if categories.len() < 2 {
                    return Err(DatasetError::Schema(format!(
                        "categorical attribute {} needs at least 2 categories",
                        attr.name
                    )));
                }
                let distinct: HashSet<_> = categories.iter().collect();
                if distinct.len() != categories.len() {
                    return Err(DatasetError::Schema(format!(
                        "categorical attribute {} has duplicate categories",
                        attr.name
                    )));
                }
            }
        }
        let classes: HashSet<_> = self.label.classes.iter().collect();
        if classes.len() != self.label.classes.len() {
            return Err(DatasetError::Schema("class names must be unique".into()));
        }
        if self.label.classes.is_empty() {
            return Err(DatasetError::Schema("at least one class is required".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> FeatureLayout {
        let mut n_continuous = 0;
        let mut categorical = Vec::new();
        for attr in &self.attributes {
            match &attr.kind {
                AttributeKind::Continuous => n_continuous += 1,
                AttributeKind::Categorical { categories } => categorical.push(categories.len()),
            }
        }
        FeatureLayout {
            n_continuous,
            categorical,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.label.classes.len()
    }

    pub fn categorical_attributes(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.attributes.iter().filter_map(|a| match &a.kind {
            AttributeKind::Categorical { categories } => Some((a.name.as_str(), categories.as_slice())),
            AttributeKind::Continuous => None,
        })
    }

    /// Category names of `sample`, one per categorical attribute.
    pub fn decode_categories<'a>(&'a self, sample: &Sample) -> Vec<&'a str> {
        let layout = self.layout();
        self.categorical_attributes()
            .zip(layout.category_codes(&sample.categorical))
            .map(|((_, cats), code)| cats[code].as_str())
            .collect()
    }
}

/// Dimension counts shared by datasets, mixture models and kernels.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub n_continuous: usize,
    /// `K_d` for every categorical attribute, in attribute order.
    pub categorical: Vec<usize>,
}

impl FeatureLayout {
    pub fn continuous_only(n: usize) -> Self {
        FeatureLayout {
            n_continuous: n,
            categorical: Vec::new(),
        }
    }

    pub fn n_categorical(&self) -> usize {
        self.categorical.len()
    }

    pub fn encoded_len(&self) -> usize {
        self.categorical.iter().sum()
    }

    /// Index of the active category in every 1-of-K block.
    pub fn category_codes(&self, encoded: &[u8]) -> Vec<usize> {
        let mut offset = 0;
        let mut codes = Vec::with_capacity(self.categorical.len());
        for &k in &self.categorical {
            let block = &encoded[offset..offset + k];
            codes.push(block.iter().position(|&v| v == 1).unwrap_or(0));
            offset += k;
        }
        codes
    }

    /// Inverse of [`category_codes`](Self::category_codes).
    pub fn encode_codes(&self, codes: &[usize]) -> Vec<u8> {
        let mut out = vec![0u8; self.encoded_len()];
        let mut offset = 0;
        for (&k, &code) in self.categorical.iter().zip(codes) {
            out[offset + code] = 1;
            offset += k;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: SampleId,
    pub continuous: Vec<f64>,
    /// Concatenated 1-of-K blocks, one per categorical attribute.
    pub categorical: Vec<u8>,
    pub label: Option<usize>,
}

impl Sample {
    pub fn new(id: SampleId, continuous: Vec<f64>, label: Option<usize>) -> Self {
        Sample {
            id,
            continuous,
            categorical: Vec::new(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub name: String,
    pub source: Option<String>,
    pub normalized: bool,
    pub zscore: Option<ZScoreParams>,
    /// Fraction of variance kept when the dataset came out of a PCA projection.
    pub pca_retained: Option<f64>,
}

impl Provenance {
    pub fn named(name: impl Into<String>) -> Self {
        Provenance {
            name: name.into(),
            source: None,
            normalized: false,
            zscore: None,
            pca_retained: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Schema,
    pub samples: Vec<Sample>,
    pub provenance: Provenance,
}

impl Dataset {
    /// Builds a dataset from already encoded samples, renumbering ids densely.
    pub fn from_samples(
        name: impl Into<String>,
        schema: Schema,
        mut samples: Vec<Sample>,
    ) -> Result<Self, DatasetError> {
        schema.validate()?;
        if samples.is_empty() {
            return Err(DatasetError::NoSamples);
        }
        let layout = schema.layout();
        for (i, s) in samples.iter_mut().enumerate() {
            s.id = i;
            if s.continuous.len() != layout.n_continuous || s.categorical.len() != layout.encoded_len() {
                return Err(DatasetError::MalformedRow {
                    line: i as u64 + 1,
                    reason: "sample does not match schema arity".into(),
                });
            }
            if let Some(c) = s.label {
                if c >= schema.n_classes() {
                    return Err(DatasetError::UnknownClass {
                        line: i as u64 + 1,
                        value: c.to_string(),
                    });
                }
            }
        }
        Ok(Dataset {
            schema,
            samples,
            provenance: Provenance::named(name),
        })
    }

    pub fn name(&self) -> &str {
        &self.provenance.name
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn layout(&self) -> FeatureLayout {
        self.schema.layout()
    }

    pub fn n_classes(&self) -> usize {
        self.schema.n_classes()
    }

    pub fn sample(&self, id: SampleId) -> &Sample {
        &self.samples[id]
    }

    pub fn label(&self, id: SampleId) -> Option<usize> {
        self.samples[id].label
    }

    /// Per-class sample counts (unlabeled samples are ignored).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for s in &self.samples {
            if let Some(c) = s.label {
                counts[c] += 1;
            }
        }
        counts
    }

    pub fn subset(&self, ids: &[SampleId]) -> Vec<&Sample> {
        ids.iter().map(|&id| &self.samples[id]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed_schema() -> Schema {
        Schema {
            attributes: vec![
                Attribute {
                    name: "x".into(),
                    kind: AttributeKind::Continuous,
                },
                Attribute {
                    name: "color".into(),
                    kind: AttributeKind::Categorical {
                        categories: vec!["a".into(), "b".into(), "c".into()],
                    },
                },
                Attribute {
                    name: "flag".into(),
                    kind: AttributeKind::Categorical {
                        categories: vec!["no".into(), "yes".into()],
                    },
                },
            ],
            label: LabelSpec {
                name: "y".into(),
                classes: vec!["p".into(), "q".into()],
            },
        }
    }

    #[test]
    fn schema_json_shape() {
        let text = r#"{"attributes":[{"name":"x","kind":"continuous"},
            {"name":"color","kind":"categorical","categories":["a","b","c"]},
            {"name":"flag","kind":"categorical","categories":["no","yes"]}],
            "label":{"name":"y","classes":["p","q"]}}"#;
        let schema: Schema = serde_json::from_str(text).unwrap();
        assert_eq!(schema, mixed_schema());
        let layout = schema.layout();
        assert_eq!(layout.n_continuous, 1);
        assert_eq!(layout.categorical, vec![3, 2]);
        assert_eq!(layout.encoded_len(), 5);
    }

    #[test]
    fn schema_rejects_single_category_and_duplicate_classes() {
        let mut s = mixed_schema();
        s.attributes[2].kind = AttributeKind::Categorical {
            categories: vec!["only".into()],
        };
        assert!(s.validate().is_err());
        let mut s = mixed_schema();
        s.label.classes = vec!["p".into(), "p".into()];
        assert!(s.validate().is_err());
        let mut s = mixed_schema();
        s.attributes.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn codes_round_trip() {
        let layout = mixed_schema().layout();
        let enc = layout.encode_codes(&[1, 0]);
        assert_eq!(enc, vec![0, 1, 0, 1, 0]);
        assert_eq!(layout.category_codes(&enc), vec![1, 0]);
    }
}
