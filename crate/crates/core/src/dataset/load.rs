use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use super::{AttributeKind, Dataset, DatasetError, Provenance, Sample, Schema};

pub fn load_schema(path: impl AsRef<Path>) -> Result<Schema, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let schema: Schema =
        serde_json::from_reader(file).map_err(|e| DatasetError::Schema(format!("{}: {e}", path.display())))?;
    schema.validate()?;
    Ok(schema)
}

/// Reads a headered CSV file and encodes it according to `schema`.
///
/// Columns are matched by header name, so extra columns are ignored. A
/// missing label column or an empty label cell yields unlabeled samples.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    schema.validate()?;
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => {
            return Err(DatasetError::MalformedRow {
                line: 1,
                reason: e.to_string(),
            })
        }
    };
    if header.is_empty() {
        return Err(DatasetError::NoSamples);
    }
    let column: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let mut attr_cols = Vec::with_capacity(schema.attributes.len());
    for attr in &schema.attributes {
        let col = *column.get(attr.name.as_str()).ok_or_else(|| DatasetError::MalformedRow {
            line: 1,
            reason: format!("header lacks attribute column {:?}", attr.name),
        })?;
        attr_cols.push(col);
    }
    let label_col = column.get(schema.label.name.as_str()).copied();
    let class_index: HashMap<&str, usize> = schema
        .label
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let layout = schema.layout();

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DatasetError::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != header.len() {
            return Err(DatasetError::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let mut continuous = Vec::with_capacity(layout.n_continuous);
        let mut codes = Vec::with_capacity(layout.n_categorical());
        for (attr, &col) in schema.attributes.iter().zip(&attr_cols) {
            let raw = &record[col];
            match &attr.kind {
                AttributeKind::Continuous => {
                    let v: f64 = raw.parse().map_err(|_| DatasetError::MalformedRow {
                        line,
                        reason: format!("attribute {}: {raw:?} is not a number", attr.name),
                    })?;
                    if !v.is_finite() {
                        return Err(DatasetError::MalformedRow {
                            line,
                            reason: format!("attribute {}: non-finite value", attr.name),
                        });
                    }
                    continuous.push(v);
                }
                AttributeKind::Categorical { categories } => {
                    let code = categories.iter().position(|c| c == raw).ok_or_else(|| {
                        DatasetError::UnknownCategory {
                            line,
                            attribute: attr.name.clone(),
                            value: raw.to_string(),
                        }
                    })?;
                    codes.push(code);
                }
            }
        }
        let label = match label_col.map(|c| &record[c]) {
            None | Some("") => None,
            Some(name) => Some(*class_index.get(name).ok_or_else(|| DatasetError::UnknownClass {
                line,
                value: name.to_string(),
            })?),
        };
        samples.push(Sample {
            id: samples.len(),
            continuous,
            categorical: layout.encode_codes(&codes),
            label,
        });
    }
    if samples.is_empty() {
        return Err(DatasetError::NoSamples);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(Dataset {
        schema: schema.clone(),
        samples,
        provenance: Provenance {
            source: Some(path.display().to_string()),
            ..Provenance::named(name)
        },
    })
}
