//! Tabular datasets with a binary label and binary sensitive attributes.
//!
//! Rows carry a dense feature vector, a label in `{0, 1}` and one `{0, 1}`
//! value per named sensitive attribute. Group `a` is attribute value 0 and
//! group `b` is value 1 throughout the crate.

use std::collections::BTreeMap;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FairError, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    /// Row-major, `n * d` entries.
    features: Vec<f64>,
    labels: Vec<u8>,
    sensitive: IndexMap<String, Vec<u8>>,
}

impl Dataset {
    /// Builds a dataset and checks every invariant, including that each
    /// sensitive attribute has at least one row in all four (group, label)
    /// cells.
    pub fn new(
        feature_names: Vec<String>,
        features: Vec<f64>,
        labels: Vec<u8>,
        sensitive: IndexMap<String, Vec<u8>>,
    ) -> Result<Self> {
        let n = labels.len();
        let d = feature_names.len();
        if n == 0 {
            return Err(FairError::validation("dataset has no rows"));
        }
        if d == 0 {
            return Err(FairError::validation("dataset has no feature columns"));
        }
        if features.len() != n * d {
            return Err(FairError::validation(format!(
                "feature matrix has {} entries, expected {n}x{d}",
                features.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(FairError::validation(format!("label at row {i} is not 0 or 1")));
        }
        for (name, col) in &sensitive {
            if col.len() != n {
                return Err(FairError::validation(format!(
                    "sensitive column {name} has length {}, expected {n}",
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|&z| z > 1) {
                return Err(FairError::validation(format!(
                    "sensitive column {name} at row {i} is not 0 or 1"
                )));
            }
        }
        let data = Dataset {
            feature_names,
            features,
            labels,
            sensitive,
        };
        data.check_cells()?;
        Ok(data)
    }

    fn check_cells(&self) -> Result<()> {
        for (name, col) in &self.sensitive {
            let mut counts = [[0usize; 2]; 2];
            for (&z, &y) in col.iter().zip(&self.labels) {
                counts[z as usize][y as usize] += 1;
            }
            for (z, row) in counts.iter().enumerate() {
                for (y, &count) in row.iter().enumerate() {
                    if count == 0 {
                        return Err(FairError::validation(format!(
                            "empty (group,label) cell for attribute {name}: group {z}, label {y}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sensitive(&self) -> &IndexMap<String, Vec<u8>> {
        &self.sensitive
    }

    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.sensitive.keys().map(String::as_str)
    }

    pub fn attribute(&self, name: &str) -> Result<&[u8]> {
        self.sensitive
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| FairError::config(format!("unknown sensitive attribute {name:?}")))
    }

    /// A new dataset holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        let d = self.n_features();
        let mut features = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            features.extend_from_slice(self.row(i));
        }
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        let sensitive = self
            .sensitive
            .iter()
            .map(|(k, col)| (k.clone(), rows.iter().map(|&i| col[i]).collect()))
            .collect();
        Dataset::new(self.feature_names.clone(), features, labels, sensitive)
    }

    pub(crate) fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }
}

/// Indices `i` with `attribute[i] == group` and `label[i] == label`.
pub fn group_view(data: &Dataset, attribute: &str, group: u8, label: u8) -> Result<Vec<usize>> {
    let col = data.attribute(attribute)?;
    Ok(col
        .iter()
        .zip(data.labels())
        .enumerate()
        .filter(|(_, (&z, &y))| z == group && y == label)
        .map(|(i, _)| i)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Splits rows so that every joint stratum (label plus every sensitive
/// attribute) keeps `train_fraction` of its rows on the train side, within
/// one row.
///
/// Rows inside a stratum are ordered by their content before the seeded
/// shuffle, so the assignment does not depend on file order.
pub fn stratified_split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train_rows, test_rows) = stratified_split_indices(data, spec)?;
    Ok((data.subset(&train_rows)?, data.subset(&test_rows)?))
}

/// Row indices of the train and test sides, each sorted ascending.
pub fn stratified_split_indices(data: &Dataset, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = data.n_rows() as f64;
    let frac = spec.train_fraction;
    if !(frac > 0.0 && frac < 1.0) {
        return Err(FairError::config(format!(
            "train_fraction must lie in (0,1), got {frac}"
        )));
    }
    if frac * n < 1.0 || (1.0 - frac) * n < 1.0 {
        return Err(FairError::validation(format!(
            "train_fraction {frac} leaves an empty side for {} rows",
            data.n_rows()
        )));
    }

    let mut strata: BTreeMap<Vec<u8>, Vec<usize>> = BTreeMap::new();
    for i in 0..data.n_rows() {
        let mut key = Vec::with_capacity(1 + data.sensitive().len());
        key.push(data.labels()[i]);
        key.extend(data.sensitive().values().map(|col| col[i]));
        strata.entry(key).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (key, mut rows) in strata {
        if rows.len() < 2 {
            return Err(FairError::validation(format!(
                "stratum {key:?} has {} row(s); at least 2 are needed to split",
                rows.len()
            )));
        }
        rows.sort_by(|&i, &j| compare_rows(data.row(i), data.row(j)));
        rows.shuffle(&mut rng);
        let size = rows.len();
        let take = ((frac * size as f64).round() as usize).clamp(1, size - 1);
        train.extend_from_slice(&rows[..take]);
        test.extend_from_slice(&rows[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

fn compare_rows(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Per-column `(x - mean) / std`, fitted on one dataset and reused on others.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Standardizer {
        let n = data.n_rows() as f64;
        let d = data.n_features();
        let mut means = vec![0.0; d];
        for i in 0..data.n_rows() {
            for (m, x) in means.iter_mut().zip(data.row(i)) {
                *m += x;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; d];
        for i in 0..data.n_rows() {
            for ((v, x), m) in vars.iter_mut().zip(data.row(i)).zip(&means) {
                *v += (x - m).powi(2);
            }
        }
        // Constant columns are centered but left unscaled.
        let stds = vars
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { means, stds }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.n_features() != self.means.len() {
            return Err(FairError::config(format!(
                "standardizer fitted on {} features, dataset has {}",
                self.means.len(),
                data.n_features()
            )));
        }
        let d = self.means.len();
        let mut out = data.clone();
        for (j, x) in out.features_mut().iter_mut().enumerate() {
            let c = j % d;
            *x = (*x - self.means[c]) / self.stds[c];
        }
        Ok(out)
    }

    /// Rewrites a model fitted on standardized features so it gives the
    /// same logits on raw features.
    pub fn fold_into(&self, params: &ModelParams) -> Result<ModelParams> {
        if params.dim() != self.means.len() {
            return Err(FairError::config(format!(
                "standardizer fitted on {} features, model has {} weights",
                self.means.len(),
                params.dim()
            )));
        }
        let mut out = params.clone();
        for (j, w) in out.weights.iter_mut().enumerate() {
            *w /= self.stds[j];
            out.bias -= *w * self.means[j];
        }
        Ok(out)
    }
}

/// Reads a headered CSV. Every column that is neither the label nor a
/// sensitive column becomes a feature, in header order.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, sensitive_columns: &[String]) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| FairError::io(path, e))?;
    read_csv(file, label_column, sensitive_columns)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    label_column: &str,
    sensitive_columns: &[String],
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| FairError::Data(format!("cannot read header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FairError::config(format!("column {name:?} not found in header")))
    };
    let label_idx = find(label_column)?;
    let sensitive_idx = sensitive_columns
        .iter()
        .map(|name| find(name))
        .collect::<Result<Vec<_>>>()?;
    for (k, name) in sensitive_columns.iter().enumerate() {
        if name == label_column || sensitive_columns[..k].contains(name) {
            return Err(FairError::config(format!("column {name:?} is used twice")));
        }
    }
    let feature_idx: Vec<usize> = (0..header.len())
        .filter(|i| *i != label_idx && !sensitive_idx.contains(i))
        .collect();
    let feature_names = feature_idx.iter().map(|&i| header[i].clone()).collect();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut sensitive: IndexMap<String, Vec<u8>> = sensitive_columns
        .iter()
        .map(|s| (s.clone(), Vec::new()))
        .collect();

    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| FairError::Data(format!("row {row}: {e}")))?;
        if record.len() != header.len() {
            return Err(FairError::Data(format!(
                "row {row} has {} cells, header has {}",
                record.len(),
                header.len()
            )));
        }
        let binary = |idx: usize| -> Result<u8> {
            match record[idx].trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(FairError::Cell {
                    row,
                    column: header[idx].clone(),
                    message: format!("expected 0 or 1, found {other:?}"),
                }),
            }
        };
        labels.push(binary(label_idx)?);
        for (name, &idx) in sensitive_columns.iter().zip(&sensitive_idx) {
            let v = binary(idx)?;
            sensitive[name.as_str()].push(v);
        }
        for &idx in &feature_idx {
            let cell = record[idx].trim();
            if cell.is_empty() {
                return Err(FairError::Cell {
                    row,
                    column: header[idx].clone(),
                    message: "empty cell".into(),
                });
            }
            let x: f64 = cell.parse().map_err(|_| FairError::Cell {
                row,
                column: header[idx].clone(),
                message: format!("not a number: {cell:?}"),
            })?;
            if !x.is_finite() {
                return Err(FairError::Cell {
                    row,
                    column: header[idx].clone(),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            features.push(x);
        }
    }
    Dataset::new(feature_names, features, labels, sensitive)
}

/// Writes features, then sensitive columns, then the label column.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| FairError::io(path, e))?;
    write_csv_to(data, file, label_column).map_err(|e| match e {
        FairError::Data(msg) => FairError::io(path, std::io::Error::other(msg)),
        other => other,
    })
}

pub fn write_csv_to<W: std::io::Write>(data: &Dataset, writer: W, label_column: &str) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = data.feature_names().iter().map(String::as_str).collect();
    header.extend(data.attribute_names());
    header.push(label_column);
    let err = |e: csv::Error| FairError::Data(e.to_string());
    wtr.write_record(&header).map_err(err)?;
    let mut cells = Vec::with_capacity(header.len());
    for i in 0..data.n_rows() {
        cells.clear();
        cells.extend(data.row(i).iter().map(|x| x.to_string()));
        cells.extend(data.sensitive().values().map(|col| col[i].to_string()));
        cells.push(data.labels()[i].to_string());
        wtr.write_record(&cells).map_err(err)?;
    }
    wtr.flush().map_err(|e| FairError::Data(e.to_string()))?;
    Ok(())
}
