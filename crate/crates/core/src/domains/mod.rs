//! Gradually shifting domain sequences: synthetic generators, file
//! ingestion, and pseudo-labels for self-training.

mod domain;
mod idx;
mod pseudo;
mod synth;
mod tabular;

pub use domain::{Domain, DomainSequence, SealedLabels, ShiftKind};
pub use idx::{load_idx_images, LabeledData};
pub use pseudo::{predict_features, pseudo_label};
pub use synth::{gen_additive_shift, gen_rotating_moons};
pub use tabular::{load_sorted_column_csv, CsvSplit};
