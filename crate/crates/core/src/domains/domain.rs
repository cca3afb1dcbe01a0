//! Domains and domain sequences with sealed evaluation labels.
//!
//! Labels for intermediate and target domains exist only inside
//! [`SealedLabels`], whose value slice is not reachable from outside the
//! crate; the training path sees labels exclusively through
//! [`Domain::train_labels`], which is `None` for every domain past the
//! source. Evaluation turns sealed labels into accuracy numbers without
//! exposing them.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Ground-truth labels usable only for evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedLabels {
    values: Vec<usize>,
}

impl SealedLabels {
    pub fn new(values: Vec<usize>) -> Self {
        SealedLabels { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Fraction of predictions matching the sealed labels.
    pub fn accuracy_against(&self, predictions: &[usize]) -> Result<f64> {
        if predictions.len() != self.values.len() {
            return Err(Error::LengthMismatch {
                expected: self.values.len(),
                got: predictions.len(),
            });
        }
        let hits = self
            .values
            .iter()
            .zip(predictions)
            .filter(|(a, b)| a == b)
            .count();
        Ok(hits as f64 / self.values.len() as f64)
    }

    // Evaluation-side access for diagnostics (sharpness needs per-example
    // losses against true labels). Not visible outside the crate; the
    // training path never calls it, which a source-level test enforces.
    pub(crate) fn eval_slice(&self) -> &[usize] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum LabelStore {
    Open(Vec<usize>),
    Sealed(SealedLabels),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    Rotation,
    AdditiveShift,
    SortedColumn,
    FileSequence,
}

/// One domain: a feature matrix and labels that are open (source) or sealed
/// (intermediates and target).
#[derive(Debug, Clone)]
pub struct Domain {
    features: Tensor,
    labels: LabelStore,
    index: usize,
}

impl Domain {
    /// Domain with openly readable labels (the labeled source).
    pub fn labeled(features: Tensor, labels: Vec<usize>, index: usize) -> Result<Self> {
        Self::check(&features, labels.len())?;
        Ok(Domain {
            features,
            labels: LabelStore::Open(labels),
            index,
        })
    }

    /// Domain whose labels are usable only for evaluation.
    pub fn with_sealed_labels(features: Tensor, labels: Vec<usize>, index: usize) -> Result<Self> {
        Self::check(&features, labels.len())?;
        Ok(Domain {
            features,
            labels: LabelStore::Sealed(SealedLabels::new(labels)),
            index,
        })
    }

    fn check(features: &Tensor, n_labels: usize) -> Result<()> {
        if features.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "domain",
                detail: format!("features must be (n, d), got {:?}", features.shape()),
            });
        }
        if features.rows() != n_labels {
            return Err(Error::LengthMismatch {
                expected: features.rows(),
                got: n_labels,
            });
        }
        Ok(())
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Labels available to the training path: `Some` only for open-label
    /// domains (the source).
    pub fn train_labels(&self) -> Option<&[usize]> {
        match &self.labels {
            LabelStore::Open(labels) => Some(labels),
            LabelStore::Sealed(_) => None,
        }
    }

    pub fn has_sealed_labels(&self) -> bool {
        matches!(self.labels, LabelStore::Sealed(_))
    }

    /// Accuracy of predictions against this domain's ground truth, open or
    /// sealed.
    pub fn evaluate_accuracy(&self, predictions: &[usize]) -> Result<f64> {
        match &self.labels {
            LabelStore::Open(labels) => {
                if predictions.len() != labels.len() {
                    return Err(Error::LengthMismatch {
                        expected: labels.len(),
                        got: predictions.len(),
                    });
                }
                let hits = labels
                    .iter()
                    .zip(predictions)
                    .filter(|(a, b)| a == b)
                    .count();
                Ok(hits as f64 / labels.len() as f64)
            }
            LabelStore::Sealed(sealed) => sealed.accuracy_against(predictions),
        }
    }

    pub(crate) fn eval_labels(&self) -> &[usize] {
        match &self.labels {
            LabelStore::Open(labels) => labels,
            LabelStore::Sealed(sealed) => sealed.eval_slice(),
        }
    }
}

/// Ordered domains mu_0..mu_T: a labeled source followed by unlabeled
/// shifted domains, the last of which is the target.
#[derive(Debug, Clone)]
pub struct DomainSequence {
    domains: Vec<Domain>,
    shift_kind: ShiftKind,
    n_classes: usize,
}

impl DomainSequence {
    pub fn new(domains: Vec<Domain>, shift_kind: ShiftKind, n_classes: usize) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::InvalidParam("empty domain sequence".into()));
        }
        if domains[0].train_labels().is_none() {
            return Err(Error::InvalidParam(
                "domain 0 must carry open labels".into(),
            ));
        }
        for (t, d) in domains.iter().enumerate() {
            if d.index() != t {
                return Err(Error::InvalidParam(format!(
                    "domain at position {t} carries index {}",
                    d.index()
                )));
            }
            if t >= 1 && !d.has_sealed_labels() {
                return Err(Error::InvalidParam(format!(
                    "domain {t} must have sealed labels"
                )));
            }
        }
        if n_classes < 2 {
            return Err(Error::InvalidParam("need at least two classes".into()));
        }
        Ok(DomainSequence {
            domains,
            shift_kind,
            n_classes,
        })
    }

    /// Number of domains, T+1.
    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    /// Number of adaptation steps T.
    pub fn t_count(&self) -> usize {
        self.domains.len() - 1
    }

    pub fn shift_kind(&self) -> ShiftKind {
        self.shift_kind
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn domain(&self, t: usize) -> &Domain {
        &self.domains[t]
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn source(&self) -> &Domain {
        &self.domains[0]
    }

    pub fn target(&self) -> &Domain {
        self.domains.last().unwrap()
    }

    /// Write one `domain_NNN.csv` per domain. Labels are included only for
    /// the open-label source.
    pub fn export_csv_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for d in &self.domains {
            let path = dir.join(format!("domain_{:03}.csv", d.index()));
            let mut file = fs::File::create(&path)?;
            let cols = d.dim();
            let mut header: Vec<String> = (0..cols).map(|j| format!("x{j}")).collect();
            let labels = d.train_labels();
            if labels.is_some() {
                header.push("label".into());
            }
            writeln!(file, "{}", header.join(","))?;
            for i in 0..d.n() {
                let mut row: Vec<String> = (0..cols)
                    .map(|j| format!("{}", d.features().at(i, j)))
                    .collect();
                if let Some(labels) = labels {
                    row.push(labels[i].to_string());
                }
                writeln!(file, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}
