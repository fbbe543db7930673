//! Feature tables: CSV ingestion, PCA reduction to feature-map angles and a
//! synthetic two-class dataset.

use std::f64::consts::TAU;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh_real, RMatrix, RVector};
use crate::rng::substream;

/// Rectangular table of finite features, optionally labelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Option<Vec<f64>>,
    pub provenance: String,
}

impl FeatureTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<f64>>, labels: Option<Vec<f64>>, provenance: impl Into<String>) -> Result<Self> {
        if let Some(bad) = rows.iter().position(|r| r.len() != columns.len()) {
            return Err(Error::ContractViolation(format!(
                "row {bad} has {} values, expected {}",
                rows[bad].len(),
                columns.len()
            )));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::ContractViolation("features must be finite".into()));
        }
        if let Some(l) = &labels {
            if l.len() != rows.len() {
                return Err(Error::DimensionMismatch {
                    expected: rows.len(),
                    got: l.len(),
                });
            }
        }
        Ok(Self {
            columns,
            rows,
            labels,
            provenance: provenance.into(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn to_matrix(&self) -> RMatrix {
        RMatrix::from_fn(self.n_rows(), self.n_features(), |r, c| self.rows[r][c])
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = self.columns.clone();
        if self.labels.is_some() {
            header.push("label".into());
        }
        wr.write_record(&header)?;
        for (r, row) in self.rows.iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            if let Some(l) = &self.labels {
                rec.push(format!("{:.17e}", l[r]));
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Expected CSV layout. Every non-label column is a feature.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Columns that must appear in the header.
    #[serde(default)]
    pub required: Vec<String>,
    #[serde(default)]
    pub label_column: Option<String>,
}

/// Read a headed CSV of numbers. Rows and columns in errors are 1-based, the
/// header being row 1.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<FeatureTable> {
    let file = std::fs::File::open(path)?;
    ingest_csv_reader(file, path, schema)
}

pub fn ingest_csv_reader<R: Read>(reader: R, path: &Path, schema: &CsvSchema) -> Result<FeatureTable> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let schema_err = |message: String| Error::Schema {
        path: path.to_path_buf(),
        message,
    };
    if header.is_empty() || header.iter().all(String::is_empty) {
        let missing = if schema.required.is_empty() {
            "a header row".to_string()
        } else {
            format!("header with columns {:?}", schema.required)
        };
        return Err(schema_err(format!("empty file: missing {missing}")));
    }
    for req in schema.required.iter().chain(&schema.label_column) {
        if !header.contains(req) {
            return Err(schema_err(format!("missing header column {req:?}")));
        }
    }
    let label_idx = schema
        .label_column
        .as_ref()
        .and_then(|l| header.iter().position(|h| h == l));
    let columns: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(c, _)| Some(*c) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in rd.records().enumerate() {
        let row_no = r + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: row_no,
                col: rec.len().min(header.len()) + 1,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let mut row = Vec::with_capacity(columns.len());
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: row_no,
                col: c + 1,
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: row_no,
                    col: c + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            if Some(c) == label_idx {
                labels.push(v);
            } else {
                row.push(v);
            }
        }
        rows.push(row);
    }
    FeatureTable::new(
        columns,
        rows,
        label_idx.map(|_| labels),
        format!("csv:{}", path.display()),
    )
}

/// Principal axes of a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    #[serde(with = "crate::linalg::real_vec")]
    pub mean: RVector,
    /// Columns are unit principal axes, by non-increasing variance.
    #[serde(with = "crate::linalg::real_rows")]
    pub components: RMatrix,
    pub variances: Vec<f64>,
}

impl Pca {
    /// Top-`k` axes of the sample covariance. Each axis is signed so its
    /// largest-magnitude coordinate is positive.
    pub fn fit(table: &FeatureTable, k: usize) -> Result<Self> {
        let (n, p) = (table.n_rows(), table.n_features());
        if n < 2 {
            return Err(Error::InvalidDimension("PCA needs at least two rows".into()));
        }
        if k == 0 || k > p {
            return Err(Error::InvalidDimension(format!("cannot keep {k} of {p} components")));
        }
        let x = table.to_matrix();
        let mean = RVector::from_fn(p, |c, _| x.column(c).mean());
        let centered = RMatrix::from_fn(n, p, |r, c| x[(r, c)] - mean[c]);
        let cov = centered.transpose() * &centered / (n - 1) as f64;
        let (vals, vecs) = eigh_real(&cov);
        let mut components = RMatrix::zeros(p, k);
        let mut variances = Vec::with_capacity(k);
        for j in 0..k {
            let src = p - 1 - j;
            let mut col = vecs.column(src).into_owned();
            let lead = col.iter().fold(0.0f64, |m, v| if v.abs() > m.abs() { *v } else { m });
            if lead < 0.0 {
                col.neg_mut();
            }
            components.set_column(j, &col);
            variances.push(vals[src].max(0.0));
        }
        Ok(Self {
            mean,
            components,
            variances,
        })
    }

    /// Scores `(x - mean) · components` for every row.
    pub fn project(&self, table: &FeatureTable) -> RMatrix {
        let x = table.to_matrix();
        let centered = RMatrix::from_fn(x.nrows(), x.ncols(), |r, c| x[(r, c)] - self.mean[c]);
        centered * &self.components
    }

    pub fn reconstruct(&self, scores: &RMatrix) -> RMatrix {
        let mut x = scores * self.components.transpose();
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        x
    }
}

/// Project onto the top `k` principal axes and rescale each axis to
/// `[0, 2π]` for use as feature-map angles. A constant axis maps to 0.
pub fn pca_reduce(table: &FeatureTable, k: usize) -> Result<FeatureTable> {
    let pca = Pca::fit(table, k)?;
    let scores = pca.project(table);
    let mut rows = vec![vec![0.0; k]; table.n_rows()];
    for j in 0..k {
        let col = scores.column(j);
        let (lo, hi) = (col.min(), col.max());
        let span = hi - lo;
        for (r, row) in rows.iter_mut().enumerate() {
            row[j] = if span > 1e-12 * (hi.abs() + lo.abs()).max(1e-300) {
                TAU * (col[r] - lo) / span
            } else {
                0.0
            };
        }
    }
    FeatureTable::new(
        (0..k).map(|j| format!("pc{j}")).collect(),
        rows,
        table.labels.clone(),
        format!("pca(k={k}) of {}", table.provenance),
    )
}

/// Two Gaussian blobs in `n_features` dimensions with labels `±1`.
pub fn synthetic_dataset(n_rows: usize, n_features: usize, seed: u64) -> Result<FeatureTable> {
    if n_rows == 0 || n_features == 0 {
        return Err(Error::InvalidDimension("empty synthetic dataset".into()));
    }
    let mut rng = substream(seed, "synthetic-data", 0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rows = Vec::with_capacity(n_rows);
    let mut labels = Vec::with_capacity(n_rows);
    for r in 0..n_rows {
        let class = if r % 2 == 0 { 1.0 } else { -1.0 };
        // the class shifts every coordinate, with a decaying spread per axis
        let row = (0..n_features)
            .map(|c| class * 1.5 + normal.sample(&mut rng) / (1.0 + c as f64))
            .collect();
        rows.push(row);
        labels.push(class);
    }
    FeatureTable::new(
        (0..n_features).map(|c| format!("x{c}")).collect(),
        rows,
        Some(labels),
        format!("synthetic(seed={seed})"),
    )
}

/// Read the long-format output table written by
/// [`crate::circuit::OutputTable::write_csv`].
pub fn read_output_table(path: &Path) -> Result<crate::circuit::OutputTable> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let want = ["sample_id", "obs_label", "value"];
    if header != want {
        return Err(Error::Schema {
            path: PathBuf::from(path),
            message: format!("expected header {want:?}, found {header:?}"),
        });
    }
    let mut labels: Vec<String> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rd.records().enumerate() {
        let rec = rec?;
        let parse_err = |col: usize, message: String| Error::Parse {
            path: PathBuf::from(path),
            row: r + 2,
            col,
            message,
        };
        let s: usize = rec[0].parse().map_err(|_| parse_err(1, format!("bad sample id {:?}", &rec[0])))?;
        let label = rec[1].to_string();
        let v: f64 = rec[2].parse().map_err(|_| parse_err(3, format!("bad value {:?}", &rec[2])))?;
        let c = match labels.iter().position(|l| *l == label) {
            Some(c) => c,
            None => {
                if !values.is_empty() && s > 0 {
                    return Err(parse_err(2, format!("label {label:?} first seen after sample 0")));
                }
                labels.push(label);
                labels.len() - 1
            }
        };
        if s == values.len() {
            values.push(Vec::new());
        }
        if s + 1 != values.len() || values[s].len() != c {
            return Err(parse_err(1, "rows must be grouped by sample in label order".into()));
        }
        values[s].push(v);
    }
    if values.iter().any(|row| row.len() != labels.len()) {
        return Err(Error::Schema {
            path: PathBuf::from(path),
            message: "incomplete sample rows".into(),
        });
    }
    Ok(crate::circuit::OutputTable { labels, values })
}
