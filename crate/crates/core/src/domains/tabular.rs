//! CSV ingestion: drift-sorted tabular sequences.

use std::collections::BTreeSet;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::domain::{Domain, DomainSequence, ShiftKind};

/// How the sorted rows are cut into domains.
#[derive(Debug, Clone)]
pub struct CsvSplit {
    pub n_source: usize,
    pub n_per_domain: usize,
    pub t_count: usize,
    /// When set, the target is the final `n_target` rows of the sorted
    /// order; otherwise every row after the intermediates belongs to it.
    pub n_target: Option<usize>,
}

/// Load a header-carrying CSV, sort rows ascending by `drift_column`, and cut
/// source / intermediate / target domains from the sorted order. The label
/// column is `label_column` or, when absent, the last column; raw label
/// values are mapped to contiguous class ids by sorted order of appearance.
pub fn load_sorted_column_csv(
    path: &Path,
    drift_column: &str,
    label_column: Option<&str>,
    split: &CsvSplit,
) -> Result<DomainSequence> {
    let display = path.display().to_string();
    let fmt = |detail: String| Error::FileFormat {
        path: display.clone(),
        detail,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let drift_idx = headers
        .iter()
        .position(|h| h == drift_column)
        .ok_or_else(|| fmt(format!("missing drift column '{drift_column}'")))?;
    let label_idx = match label_column {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| fmt(format!("missing label column '{name}'")))?,
        None => headers.len() - 1,
    };
    if label_idx == drift_idx {
        return Err(fmt("label and drift columns coincide".into()));
    }

    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&j| j != label_idx).collect();
    let mut rows: Vec<(f64, Vec<f64>, i64)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(fmt(format!(
                "row {} has {} fields, header has {}",
                line + 2,
                record.len(),
                headers.len()
            )));
        }
        let parse = |j: usize| -> Result<f64> {
            record[j]
                .trim()
                .parse::<f64>()
                .map_err(|_| fmt(format!("non-numeric value '{}' at row {}", &record[j], line + 2)))
        };
        let drift = parse(drift_idx)?;
        let label_raw = parse(label_idx)?;
        if label_raw.fract() != 0.0 {
            return Err(fmt(format!("non-integer label at row {}", line + 2)));
        }
        let features: Vec<f64> = feature_cols
            .iter()
            .map(|&j| parse(j))
            .collect::<Result<_>>()?;
        rows.push((drift, features, label_raw as i64));
    }

    // stable ascending sort on the drift column
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[a].0.total_cmp(&rows[b].0));

    let class_values: BTreeSet<i64> = rows.iter().map(|r| r.2).collect();
    let classes: Vec<i64> = class_values.into_iter().collect();
    if classes.len() < 2 {
        return Err(fmt("need at least two distinct labels".into()));
    }
    let class_id = |raw: i64| classes.iter().position(|&c| c == raw).unwrap();

    let needed = split.n_source
        + split.t_count * split.n_per_domain
        + split.n_target.unwrap_or(1).max(1);
    if rows.len() < needed {
        return Err(Error::InsufficientRows {
            path: display,
            needed,
            have: rows.len(),
        });
    }

    let d = rows[0].1.len();
    let make_domain = |idx_slice: &[usize], t: usize| -> Result<Domain> {
        let mut data = Vec::with_capacity(idx_slice.len() * d);
        let mut labels = Vec::with_capacity(idx_slice.len());
        for &i in idx_slice {
            data.extend_from_slice(&rows[i].1);
            labels.push(class_id(rows[i].2));
        }
        let features = Tensor::matrix(idx_slice.len(), d, data)?;
        if t == 0 {
            Domain::labeled(features, labels, 0)
        } else {
            Domain::with_sealed_labels(features, labels, t)
        }
    };

    let mut domains = Vec::with_capacity(split.t_count + 2);
    domains.push(make_domain(&order[..split.n_source], 0)?);
    let mut cursor = split.n_source;
    for t in 1..=split.t_count {
        domains.push(make_domain(&order[cursor..cursor + split.n_per_domain], t)?);
        cursor += split.n_per_domain;
    }
    let target_rows: &[usize] = match split.n_target {
        Some(nt) => {
            if order.len() < cursor + nt {
                return Err(Error::InsufficientRows {
                    path: display,
                    needed: cursor + nt,
                    have: order.len(),
                });
            }
            &order[order.len() - nt..]
        }
        None => &order[cursor..],
    };
    domains.push(make_domain(target_rows, split.t_count + 1)?);

    DomainSequence::new(domains, ShiftKind::SortedColumn, classes.len())
}
