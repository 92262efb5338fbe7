//! Predictions, labels, datasets, and CSV ingestion.
//!
//! A dataset is an ordered list of (prediction, label) records. Order is
//! preserved exactly as ingested: the linear calibration error estimator
//! pairs consecutive records, so reordering would change its value.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Default tolerance for `|sum − 1|` when validating simplex vectors.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// Most negative entry accepted before a vector is rejected outright;
/// anything in `[NEGATIVE_TOL, 0)` is treated as float drift and clamped.
const NEGATIVE_TOL: f64 = -1e-12;

/// A point on the (m−1)-dimensional probability simplex: non-negative
/// entries summing to one. Construction normalizes away float drift within
/// tolerance and rejects anything worse.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector {
    entries: Vec<f64>,
}

impl SimplexVector {
    /// Validate and normalize a probability vector with the default
    /// tolerance.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(entries, SIMPLEX_TOL)
    }

    /// Validate and normalize with an explicit `|sum − 1|` tolerance.
    ///
    /// Entries in `[-1e-12, 0)` are clamped to zero; entries below that, or
    /// a sum off by more than `tol`, are rejected.
    pub fn with_tolerance(entries: Vec<f64>, tol: f64) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::bad_param(format!(
                "simplex vectors need at least 2 classes, got {}",
                entries.len()
            )));
        }
        let mut entries = entries;
        let mut sum = 0.0;
        for e in &mut entries {
            if !e.is_finite() {
                return Err(Error::NotOnSimplex {
                    reason: format!("non-finite entry {e}"),
                });
            }
            if *e < 0.0 {
                if *e < NEGATIVE_TOL {
                    return Err(Error::NotOnSimplex {
                        reason: format!("negative entry {e}"),
                    });
                }
                *e = 0.0;
            }
            sum += *e;
        }
        if (sum - 1.0).abs() > tol {
            return Err(Error::NotOnSimplex {
                reason: format!("entries sum to {sum}"),
            });
        }
        if sum != 1.0 {
            for e in &mut entries {
                *e /= sum;
            }
        }
        Ok(Self { entries })
    }

    /// Number of classes m.
    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Index (0-based) of the largest entry; ties break toward the lowest
    /// index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &e) in self.entries.iter().enumerate().skip(1) {
            if e > self.entries[best] {
                best = i;
            }
        }
        best
    }
}

/// A prediction paired with the observed class label (1-based, matching the
/// {1, …, m} convention used throughout).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    prediction: SimplexVector,
    label: usize,
}

impl PredictionRecord {
    pub fn new(prediction: SimplexVector, label: usize) -> Result<Self> {
        let m = prediction.dim();
        if label < 1 || label > m {
            return Err(Error::BadLabel {
                label: label as i64,
                classes: m,
            });
        }
        Ok(Self { prediction, label })
    }

    pub fn prediction(&self) -> &SimplexVector {
        &self.prediction
    }

    /// 1-based class label.
    pub fn label(&self) -> usize {
        self.label
    }

    /// Residual e_label − prediction: entries sum to zero, each in [−1, 1].
    pub fn residual(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.prediction.dim()];
        self.residual_into(&mut r);
        r
    }

    /// Fill a caller-provided buffer with the residual; the estimators'
    /// inner loops reuse scratch space instead of allocating.
    pub(crate) fn residual_into(&self, out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(self.prediction.entries()) {
            *o = -p;
        }
        out[self.label - 1] += 1.0;
    }
}

/// An immutable, order-preserving list of labeled predictions with a shared
/// class count.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    records: Vec<PredictionRecord>,
    class_count: usize,
}

impl LabeledDataset {
    /// Build from validated records. All records must share `class_count`
    /// dimensions. An empty record list is allowed (for example, a sampled
    /// dataset with n = 0).
    pub fn new(records: Vec<PredictionRecord>, class_count: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::bad_param(format!(
                "class count must be at least 2, got {class_count}"
            )));
        }
        for rec in &records {
            if rec.prediction.dim() != class_count {
                return Err(Error::DimensionMismatch {
                    expected: class_count,
                    got: rec.prediction.dim(),
                });
            }
        }
        Ok(Self {
            records,
            class_count,
        })
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of classes m.
    pub fn class_count(&self) -> usize {
        self.class_count
    }
}

/// Validate raw (probability vector, label) rows into a dataset, preserving
/// row order. Vectors are normalized within `tol`; rows violating the
/// tolerance, the label range, or the dimension are rejected.
pub fn validate_dataset(rows: &[(Vec<f64>, usize)], m: usize, tol: f64) -> Result<LabeledDataset> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut records = Vec::with_capacity(rows.len());
    for (vector, label) in rows {
        if vector.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: vector.len(),
            });
        }
        let prediction = SimplexVector::with_tolerance(vector.clone(), tol)?;
        records.push(PredictionRecord::new(prediction, *label)?);
    }
    LabeledDataset::new(records, m)
}

/// Read a dataset from CSV with header `p1,...,pm,y`. Rows are validated
/// like `validate_dataset` with the default tolerance; row order is
/// preserved.
pub fn load_dataset_csv<R: BufRead>(reader: R) -> Result<LabeledDataset> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => {
            return Err(Error::ParseError {
                line: 1,
                reason: "missing header".into(),
            })
        }
    };
    let m = parse_header(&header)?;

    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != m + 1 {
            return Err(Error::ParseError {
                line: line_no,
                reason: format!("expected {} fields, got {}", m + 1, fields.len()),
            });
        }
        let mut entries = Vec::with_capacity(m);
        for f in &fields[..m] {
            let v: f64 = f.trim().parse().map_err(|_| Error::ParseError {
                line: line_no,
                reason: format!("bad probability {f:?}"),
            })?;
            entries.push(v);
        }
        let label: i64 = fields[m].trim().parse().map_err(|_| Error::ParseError {
            line: line_no,
            reason: format!("bad label {:?}", fields[m]),
        })?;
        if label < 1 || label as usize > m {
            return Err(Error::BadLabel { label, classes: m });
        }
        let prediction = SimplexVector::with_tolerance(entries, SIMPLEX_TOL)?;
        records.push(PredictionRecord::new(prediction, label as usize)?);
    }
    LabeledDataset::new(records, m)
}

fn parse_header(header: &str) -> Result<usize> {
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() < 3 || fields[fields.len() - 1].trim() != "y" {
        return Err(Error::ParseError {
            line: 1,
            reason: format!("expected header p1,...,pm,y, got {header:?}"),
        });
    }
    let m = fields.len() - 1;
    for (i, f) in fields[..m].iter().enumerate() {
        let expected = format!("p{}", i + 1);
        if f.trim() != expected {
            return Err(Error::ParseError {
                line: 1,
                reason: format!("expected column {expected:?}, got {f:?}"),
            });
        }
    }
    Ok(m)
}

/// Write a dataset as CSV with header `p1,...,pm,y`. Floats are emitted
/// with the shortest representation that round-trips, so load ∘ write is
/// the identity up to renormalization noise (≤ 1e-12 per entry).
pub fn write_dataset_csv<W: Write>(ds: &LabeledDataset, mut writer: W) -> Result<()> {
    let m = ds.class_count();
    let mut header = String::new();
    for c in 1..=m {
        header.push_str(&format!("p{c},"));
    }
    header.push('y');
    writeln!(writer, "{header}")?;
    for rec in ds.records() {
        let mut row = String::new();
        for p in rec.prediction().entries() {
            row.push_str(&format!("{p},"));
        }
        row.push_str(&rec.label().to_string());
        writeln!(writer, "{row}")?;
    }
    Ok(())
}
