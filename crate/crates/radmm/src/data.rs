//! Dataset ingestion: CSV loading, preprocessing (one-hot encoding,
//! column and row normalization, label mapping), train/test splitting,
//! node partitioning, and seeded synthetic data.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Dataset;

/// Role of one CSV column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
}

/// Schema of a CSV source: column roles plus the label mapping
/// (e.g. `{">50K": 1, "<=50K": -1}`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    pub columns: BTreeMap<String, ColumnKind>,
    pub label_mapping: BTreeMap<String, i8>,
    /// Cell content that marks a missing value.
    #[serde(default = "default_missing_marker")]
    pub missing_marker: String,
    /// Drop rows containing missing values during preprocessing.
    #[serde(default = "default_true")]
    pub drop_missing: bool,
}

fn default_missing_marker() -> String {
    "?".to_string()
}

fn default_true() -> bool {
    true
}

/// A parsed CSV table with missing-value markers preserved.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub column_names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub rows: Vec<Vec<String>>,
    pub label_column: usize,
    pub schema: Schema,
}

/// Loads a comma-separated UTF-8 file with a header row that must match
/// the schema's column set, including exactly one label column.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::ParseError {
            row: 0,
            message: e.to_string(),
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::ParseError {
            row: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(|s| s.to_string())
        .collect();
    load_rows(headers, reader.records(), schema)
}

fn load_rows(
    headers: Vec<String>,
    records: impl Iterator<Item = std::result::Result<csv::StringRecord, csv::Error>>,
    schema: &Schema,
) -> Result<RawTable> {
    let mut kinds = Vec::with_capacity(headers.len());
    for name in &headers {
        let kind = schema
            .columns
            .get(name)
            .ok_or_else(|| Error::SchemaMismatch(format!("unknown column {name:?}")))?;
        kinds.push(*kind);
    }
    for name in schema.columns.keys() {
        if !headers.iter().any(|h| h == name) {
            return Err(Error::SchemaMismatch(format!("missing column {name:?}")));
        }
    }
    let label_columns: Vec<usize> = kinds
        .iter()
        .enumerate()
        .filter(|(_, k)| **k == ColumnKind::Label)
        .map(|(i, _)| i)
        .collect();
    let label_column = match label_columns.as_slice() {
        [one] => *one,
        _ => {
            return Err(Error::SchemaMismatch(
                "schema must name exactly one label column".into(),
            ))
        }
    };
    let mut rows = Vec::new();
    for (idx, record) in records.enumerate() {
        let record = record.map_err(|e| Error::ParseError {
            row: idx + 1,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::ParseError {
                row: idx + 1,
                message: format!("expected {} columns, got {}", headers.len(), record.len()),
            });
        }
        rows.push(record.iter().map(|s| s.to_string()).collect());
    }
    Ok(RawTable {
        column_names: headers,
        kinds,
        rows,
        label_column,
        schema: schema.clone(),
    })
}

/// Parses CSV text instead of a file; same contract as [`load_csv`].
pub fn load_csv_str(text: &str, schema: &Schema) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::ParseError {
            row: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(|s| s.to_string())
        .collect();
    load_rows(headers, reader.records(), schema)
}

/// Preprocessing pipeline:
/// 1. drop rows with missing values (when enabled),
/// 2. one-hot encode each categorical column (lexicographic category
///    order for a deterministic layout),
/// 3. scale each numeric column so its maximum absolute value is 1,
/// 4. rescale each row by `max(1, ||row||)` so norms stay at most 1,
/// 5. map labels to `{-1, +1}`.
pub fn preprocess(raw: &RawTable) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let rows: Vec<&Vec<String>> = if raw.schema.drop_missing {
        raw.rows
            .iter()
            .filter(|r| !r.iter().any(|c| *c == raw.schema.missing_marker))
            .collect()
    } else {
        raw.rows.iter().collect()
    };
    if rows.is_empty() {
        return Err(Error::EmptyAfterFiltering);
    }

    // category inventory per categorical column
    let mut categories: Vec<Vec<String>> = vec![Vec::new(); raw.column_names.len()];
    for (col, kind) in raw.kinds.iter().enumerate() {
        if *kind == ColumnKind::Categorical {
            let mut values: Vec<String> = rows.iter().map(|r| r[col].clone()).collect();
            values.sort();
            values.dedup();
            categories[col] = values;
        }
    }
    let dim: usize = raw
        .kinds
        .iter()
        .enumerate()
        .map(|(col, kind)| match kind {
            ColumnKind::Numeric => 1,
            ColumnKind::Categorical => categories[col].len(),
            ColumnKind::Label => 0,
        })
        .sum();

    let mut features = DMatrix::zeros(rows.len(), dim);
    let mut labels = DVector::zeros(rows.len());
    for (n, row) in rows.iter().enumerate() {
        let mut out = 0;
        for (col, kind) in raw.kinds.iter().enumerate() {
            match kind {
                ColumnKind::Numeric => {
                    features[(n, out)] =
                        row[col].parse::<f64>().map_err(|_| Error::ParseError {
                            row: n + 1,
                            message: format!(
                                "column {:?}: {:?} is not numeric",
                                raw.column_names[col], row[col]
                            ),
                        })?;
                    out += 1;
                }
                ColumnKind::Categorical => {
                    let pos = categories[col]
                        .binary_search(&row[col])
                        .expect("category inventoried above");
                    features[(n, out + pos)] = 1.0;
                    out += categories[col].len();
                }
                ColumnKind::Label => {
                    let mapped = raw
                        .schema
                        .label_mapping
                        .get(&row[col])
                        .ok_or_else(|| Error::UnmappableLabel(row[col].clone()))?;
                    labels[n] = *mapped as f64;
                }
            }
        }
    }
    for &y in labels.iter() {
        if y != 1.0 && y != -1.0 {
            return Err(Error::UnmappableLabel(y.to_string()));
        }
    }
    normalize_features(&mut features);
    Ok((features, labels))
}

/// Column max-abs scaling followed by per-row norm capping. Idempotent
/// on already normalized data.
pub fn normalize_features(features: &mut DMatrix<f64>) {
    for mut col in features.column_iter_mut() {
        let max_abs = col.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if max_abs > 0.0 {
            col /= max_abs;
        }
    }
    for mut row in features.row_iter_mut() {
        let norm = row.norm();
        if norm > 1.0 {
            row /= norm;
        }
    }
}

/// Training data partitioned across nodes plus a held-out test set.
#[derive(Debug, Clone)]
pub struct PartitionedData {
    pub train: Vec<Dataset>,
    pub test: Dataset,
    pub dim: usize,
}

impl PartitionedData {
    pub fn batch_sizes(&self) -> Vec<usize> {
        self.train.iter().map(|d| d.n_samples()).collect()
    }
}

/// Seeded shuffle, test fraction split off first, remaining rows dealt
/// round-robin to nodes so sizes differ by at most one.
pub fn split_and_partition(
    features: &DMatrix<f64>,
    labels: &DVector<f64>,
    n_nodes: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<PartitionedData> {
    let total = features.nrows();
    let n_test = (test_fraction * total as f64).floor() as usize;
    let n_train = total - n_test;
    if n_train < n_nodes {
        return Err(Error::TooFewSamples {
            needed: n_nodes,
            got: n_train,
        });
    }
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let gather = |indices: &[usize]| -> Result<Dataset> {
        let mut f = DMatrix::zeros(indices.len(), features.ncols());
        let mut y = DVector::zeros(indices.len());
        for (out, &idx) in indices.iter().enumerate() {
            f.row_mut(out).copy_from(&features.row(idx));
            y[out] = labels[idx];
        }
        Dataset::new(f, y)
    };

    let test = gather(&order[..n_test])?;
    let mut node_indices: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for (pos, &idx) in order[n_test..].iter().enumerate() {
        node_indices[pos % n_nodes].push(idx);
    }
    let train = node_indices
        .iter()
        .map(|idx| gather(idx))
        .collect::<Result<Vec<_>>>()?;
    Ok(PartitionedData {
        train,
        test,
        dim: features.ncols(),
    })
}

/// Two Gaussian clusters at `+/- separation * u` for a random unit
/// direction `u`, labeled by cluster, rows rescaled to norm at most 1.
pub fn synthetic_classification(
    n_samples: usize,
    d: usize,
    separation: f64,
    seed: u64,
) -> (DMatrix<f64>, DVector<f64>) {
    assert!(n_samples >= 2 && d >= 1);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut direction = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
    direction /= direction.norm();
    let mut features = DMatrix::zeros(n_samples, d);
    let mut labels = DVector::zeros(n_samples);
    for n in 0..n_samples {
        let label = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut x = &direction * (label * separation);
        for v in x.iter_mut() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *v += noise;
        }
        let norm = x.norm();
        if norm > 1.0 {
            x /= norm;
        }
        features.row_mut(n).copy_from(&x.transpose());
        labels[n] = label;
    }
    (features, labels)
}

/// Convenience: synthetic data, preprocessed shape, partitioned across
/// nodes.
pub fn synthetic_partitioned(
    n_samples: usize,
    d: usize,
    separation: f64,
    n_nodes: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<PartitionedData> {
    let (features, labels) = synthetic_classification(n_samples, d, separation, seed);
    split_and_partition(&features, &labels, n_nodes, test_fraction, seed ^ 0x5eed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adult_like_schema() -> Schema {
        let mut columns = BTreeMap::new();
        columns.insert("age".to_string(), ColumnKind::Numeric);
        columns.insert("workclass".to_string(), ColumnKind::Categorical);
        columns.insert("income".to_string(), ColumnKind::Label);
        let mut label_mapping = BTreeMap::new();
        label_mapping.insert(">50K".to_string(), 1);
        label_mapping.insert("<=50K".to_string(), -1);
        Schema {
            columns,
            label_mapping,
            missing_marker: "?".to_string(),
            drop_missing: true,
        }
    }

    const SAMPLE: &str = "age,workclass,income\n\
        40,Private,>50K\n\
        25,State-gov,<=50K\n\
        60,Private,<=50K\n";

    #[test]
    fn loads_well_formed_file() {
        let raw = load_csv_str(SAMPLE, &adult_like_schema()).unwrap();
        assert_eq!(raw.rows.len(), 3);
        assert_eq!(raw.label_column, 2);
    }

    #[test]
    fn wrong_column_count_reports_row() {
        let bad = "age,workclass,income\n40,Private,>50K\n25,State-gov\n";
        match load_csv_str(bad, &adult_like_schema()) {
            Err(Error::ParseError { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn missing_markers_preserved_in_raw() {
        let text = "age,workclass,income\n40,?,>50K\n25,Private,<=50K\n";
        let raw = load_csv_str(text, &adult_like_schema()).unwrap();
        assert_eq!(raw.rows[0][1], "?");
        // and dropped by preprocess
        let (features, _) = preprocess(&raw).unwrap();
        assert_eq!(features.nrows(), 1);
    }

    #[test]
    fn schema_mismatch_detected() {
        let text = "age,unknown,income\n40,x,>50K\n";
        assert!(matches!(
            load_csv_str(text, &adult_like_schema()),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn one_hot_layout_and_scaling() {
        let raw = load_csv_str(SAMPLE, &adult_like_schema()).unwrap();
        let (features, labels) = preprocess(&raw).unwrap();
        // age is scaled by max 60; categories Private < State-gov.
        // Rows are then rescaled to the unit ball, which preserves
        // within-row ratios, so age / indicator recovers age/60.
        assert_eq!(features.ncols(), 3);
        let ages = [40.0, 25.0, 60.0];
        let expected_hot = [1, 2, 1];
        for n in 0..3 {
            let hot = expected_hot[n];
            let cold = 3 - hot;
            assert!(features[(n, hot)] > 0.0);
            assert_eq!(features[(n, cold)], 0.0);
            let ratio = features[(n, 0)] / features[(n, hot)];
            assert!((ratio - ages[n] / 60.0).abs() < 1e-12);
        }
        assert_eq!(labels.as_slice(), &[1.0, -1.0, -1.0]);
    }

    #[test]
    fn rows_normalized_to_unit_ball() {
        let raw = load_csv_str(SAMPLE, &adult_like_schema()).unwrap();
        let (features, _) = preprocess(&raw).unwrap();
        for row in features.row_iter() {
            assert!(row.norm() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn preprocess_idempotent_on_normalized_numeric() {
        let mut m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.3, 0.4]);
        let before = m.clone();
        normalize_features(&mut m);
        assert_eq!(m, before);
    }

    #[test]
    fn all_missing_rows_is_error() {
        let text = "age,workclass,income\n?,Private,>50K\n";
        let raw = load_csv_str(text, &adult_like_schema()).unwrap();
        assert!(matches!(preprocess(&raw), Err(Error::EmptyAfterFiltering)));
    }

    #[test]
    fn unmappable_label_is_error() {
        let text = "age,workclass,income\n40,Private,unknown\n";
        let raw = load_csv_str(text, &adult_like_schema()).unwrap();
        assert!(matches!(preprocess(&raw), Err(Error::UnmappableLabel(_))));
    }

    fn toy_matrix(n: usize) -> (DMatrix<f64>, DVector<f64>) {
        let features = DMatrix::from_fn(n, 2, |i, j| ((i * 2 + j) % 7) as f64 / 10.0);
        let labels = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        (features, labels)
    }

    #[test]
    fn partition_sizes_even_split() {
        let (f, y) = toy_matrix(100);
        let part = split_and_partition(&f, &y, 5, 0.2, 3).unwrap();
        assert_eq!(part.batch_sizes(), vec![16; 5]);
        assert_eq!(part.test.n_samples(), 20);
    }

    #[test]
    fn partition_sizes_differ_by_at_most_one() {
        let (f, y) = toy_matrix(101);
        let part = split_and_partition(&f, &y, 5, 0.2, 3).unwrap();
        let mut sizes = part.batch_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![16, 16, 16, 16, 17]);
    }

    #[test]
    fn partition_deterministic() {
        let (f, y) = toy_matrix(40);
        let a = split_and_partition(&f, &y, 3, 0.25, 9).unwrap();
        let b = split_and_partition(&f, &y, 3, 0.25, 9).unwrap();
        for (da, db) in a.train.iter().zip(&b.train) {
            assert_eq!(da, db);
        }
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn partition_preserves_multiset() {
        let (f, y) = toy_matrix(23);
        let part = split_and_partition(&f, &y, 4, 0.3, 5).unwrap();
        let mut collected: Vec<(Vec<u64>, i64)> = Vec::new();
        let push = |out: &mut Vec<(Vec<u64>, i64)>, d: &Dataset| {
            for n in 0..d.n_samples() {
                let bits: Vec<u64> =
                    d.features().row(n).iter().map(|v| v.to_bits()).collect();
                out.push((bits, d.labels()[n] as i64));
            }
        };
        for d in &part.train {
            push(&mut collected, d);
        }
        push(&mut collected, &part.test);
        let mut original: Vec<(Vec<u64>, i64)> = (0..23)
            .map(|n| {
                (
                    f.row(n).iter().map(|v| v.to_bits()).collect(),
                    y[n] as i64,
                )
            })
            .collect();
        collected.sort();
        original.sort();
        assert_eq!(collected, original);
    }

    #[test]
    fn too_few_samples_rejected() {
        let (f, y) = toy_matrix(4);
        assert!(matches!(
            split_and_partition(&f, &y, 5, 0.2, 1),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn synthetic_rows_in_unit_ball() {
        let (f, y) = synthetic_classification(200, 6, 3.0, 11);
        for row in f.row_iter() {
            assert!(row.norm() <= 1.0 + 1e-12);
        }
        assert!(y.iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn synthetic_separable_by_generating_direction() {
        // with large separation the sign of the projection onto the
        // generating direction recovers the label for nearly all samples
        let (f, y) = synthetic_classification(500, 10, 5.0, 4);
        // recover a direction from the class means
        let mut mean_pos = DVector::zeros(10);
        let mut mean_neg = DVector::zeros(10);
        let (mut np, mut nn) = (0.0, 0.0);
        for n in 0..500 {
            if y[n] > 0.0 {
                mean_pos += f.row(n).transpose();
                np += 1.0;
            } else {
                mean_neg += f.row(n).transpose();
                nn += 1.0;
            }
        }
        let dir = mean_pos / np - mean_neg / nn;
        let errors = (0..500)
            .filter(|&n| (f.row(n).transpose().dot(&dir)).signum() != y[n])
            .count();
        assert!(errors as f64 / 500.0 <= 0.02, "error {errors}/500");
    }

    #[test]
    fn schema_round_trips_through_json() {
        let schema = adult_like_schema();
        let json = serde_json::to_string(&schema).unwrap();
        let back: Schema = serde_json::from_str(&json).unwrap();
        assert_eq!(back.columns, schema.columns);
        assert_eq!(back.label_mapping, schema.label_mapping);
    }
}
