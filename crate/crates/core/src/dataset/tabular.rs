use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};

/// How the raw label column maps onto the positive class (class index 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LabelRule {
    /// Positive when the trimmed value is one of `values`.
    OneOf { values: Vec<String> },
    /// Positive when the numeric value exceeds `threshold`.
    GreaterThan { threshold: f64 },
}

impl LabelRule {
    fn is_positive(&self, raw: &str) -> std::result::Result<bool, String> {
        match self {
            LabelRule::OneOf { values } => Ok(values.iter().any(|v| v.trim() == raw)),
            LabelRule::GreaterThan { threshold } => raw
                .parse::<f64>()
                .map(|v| v > *threshold)
                .map_err(|_| format!("label {raw:?} is not numeric")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalColumn {
    pub name: String,
    /// Known categories. Values outside the list go to an extra "other"
    /// slot; when absent, categories are the sorted distinct values seen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub label_column: String,
    pub positive: LabelRule,
    #[serde(default)]
    pub categorical: Vec<CategoricalColumn>,
    #[serde(default)]
    pub numeric: Vec<String>,
}

const MISSING_LABELS: [&str; 2] = ["", "?"];

struct Encoder {
    column: usize,
    categories: Vec<String>,
    has_other: bool,
}

impl Encoder {
    fn width(&self) -> usize {
        self.categories.len() + usize::from(self.has_other)
    }

    fn slot(&self, value: &str) -> Option<usize> {
        match self.categories.iter().position(|c| c == value) {
            Some(i) => Some(i),
            None if self.has_other => Some(self.categories.len()),
            None => None,
        }
    }
}

/// Loads a comma-separated file with a header row into a binary dataset.
///
/// Categorical columns are one-hot encoded (in schema order), followed by
/// numeric columns standardised to zero mean and unit population variance
/// using statistics of this file only.
pub fn load_tabular(path: impl AsRef<Path>, schema: &TabularSchema) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            message: format!("missing column {name:?}"),
        })
    };
    let label_col = column(&schema.label_column)?;
    let cat_cols = schema
        .categorical
        .iter()
        .map(|c| column(&c.name))
        .collect::<Result<Vec<_>>>()?;
    let num_cols = schema.numeric.iter().map(|c| column(c)).collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
            parse_err(line, e.to_string())
        })?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        rows.push((line, record));
    }

    let encoders: Vec<Encoder> = schema
        .categorical
        .iter()
        .zip(&cat_cols)
        .map(|(spec, &col)| match &spec.categories {
            Some(known) => Encoder {
                column: col,
                categories: known.iter().map(|s| s.trim().to_string()).collect(),
                has_other: true,
            },
            None => Encoder {
                column: col,
                categories: rows
                    .iter()
                    .map(|(_, r)| r[col].to_string())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect(),
                has_other: false,
            },
        })
        .collect();

    let cat_width: usize = encoders.iter().map(Encoder::width).sum();
    let width = cat_width + num_cols.len();
    let mut features = Array2::zeros((rows.len(), width));
    let mut labels = Vec::with_capacity(rows.len());

    for (r, (line, record)) in rows.iter().enumerate() {
        let raw_label = &record[label_col];
        if MISSING_LABELS.contains(&raw_label) {
            return Err(parse_err(
                *line,
                format!("missing label in column {:?}", schema.label_column),
            ));
        }
        let positive = schema
            .positive
            .is_positive(raw_label)
            .map_err(|m| parse_err(*line, m))?;
        labels.push(usize::from(positive));

        let mut offset = 0;
        for enc in &encoders {
            let slot = enc
                .slot(&record[enc.column])
                .expect("category seen while building encoder");
            features[[r, offset + slot]] = 1.0;
            offset += enc.width();
        }
        for (j, &col) in num_cols.iter().enumerate() {
            let raw = &record[col];
            features[[r, cat_width + j]] = raw.parse::<f64>().map_err(|_| {
                parse_err(
                    *line,
                    format!("column {:?}: {raw:?} is not a number", schema.numeric[j]),
                )
            })?;
        }
    }

    let n = rows.len() as f64;
    for j in cat_width..width {
        let mut col = features.column_mut(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        col.mapv_inplace(|v| if std > 0.0 { (v - mean) / std } else { v - mean });
    }

    LabeledDataset::new(features, labels, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> TabularSchema {
        TabularSchema {
            label_column: "income".into(),
            positive: LabelRule::OneOf {
                values: vec![">50K".into(), ">50K.".into()],
            },
            categorical: vec![CategoricalColumn {
                name: "work".into(),
                categories: None,
            }],
            numeric: vec!["age".into()],
        }
    }

    fn write(dir: &Path, body: &str) -> std::path::PathBuf {
        let path = dir.join("data.csv");
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn one_hot_and_standardise() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "age,work,income\n1.0, a ,<=50K\n3.0,b, >50K\n");
        let ds = load_tabular(&path, &schema()).unwrap();
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.features().row(0).to_vec(), vec![1.0, 0.0, -1.0]);
        assert_eq!(ds.features().row(1).to_vec(), vec![0.0, 1.0, 1.0]);
        assert_eq!(load_tabular(&path, &schema()).unwrap(), ds);
    }

    #[test]
    fn unknown_categories_go_to_other() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "age,work,income\n1,a,>50K\n2,z,<=50K\n");
        let mut s = schema();
        s.categorical[0].categories = Some(vec!["a".into(), "b".into()]);
        let ds = load_tabular(&path, &s).unwrap();
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.features()[[1, 2]], 1.0);
    }

    #[test]
    fn missing_label_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "age,work,income\n1,a,>50K\n2,b,\n");
        let err = load_tabular(&path, &schema()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "age,work,income\n1,a,>50K\n2,b\n");
        assert!(matches!(
            load_tabular(&path, &schema()),
            Err(Error::Parse { line: 3, .. })
        ));
        let path = write(dir.path(), "age,work,income\n1,a,>50K\nold,b,>50K\n");
        assert!(matches!(
            load_tabular(&path, &schema()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn numeric_threshold_rule() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "age,work,income\n1,a,40000\n2,a,60000\n");
        let mut s = schema();
        s.positive = LabelRule::GreaterThan { threshold: 50_000.0 };
        assert_eq!(load_tabular(&path, &s).unwrap().labels(), &[0, 1]);
    }
}
