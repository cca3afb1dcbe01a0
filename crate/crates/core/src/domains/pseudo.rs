//! Pseudo-label generation for self-training.

use crate::error::Result;
use crate::nn::{MlpModel, Mode};

use super::domain::Domain;

/// Argmax predictions of the model on a domain's features, in eval mode.
/// Ties break toward the lower class index.
pub fn pseudo_label(model: &MlpModel, domain: &Domain) -> Result<Vec<usize>> {
    predict(model, domain)
}

/// Argmax predictions on arbitrary features, eval mode, lower-index ties.
pub fn predict_features(
    model: &MlpModel,
    features: &crate::autodiff::Tensor,
) -> Result<Vec<usize>> {
    let logits = model.forward(features, Mode::Eval)?;
    let (b, c) = (logits.rows(), logits.cols());
    let mut preds = Vec::with_capacity(b);
    for i in 0..b {
        let mut best = 0usize;
        let mut best_val = logits.at(i, 0);
        for j in 1..c {
            let v = logits.at(i, j);
            if v > best_val {
                best_val = v;
                best = j;
            }
        }
        preds.push(best);
    }
    Ok(preds)
}

fn predict(model: &MlpModel, domain: &Domain) -> Result<Vec<usize>> {
    predict_features(model, domain.features())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::domains::Domain;
    use crate::nn::MlpConfig;

    fn identity_model() -> MlpModel {
        let config = MlpConfig {
            widths: vec![2, 2],
            use_batchnorm: false,
            dropout_rate: 0.0,
        };
        let mut m = MlpModel::new(config, 0).unwrap();
        m.set_params(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        m
    }

    #[test]
    fn argmax_and_tie_break() {
        let model = identity_model();
        let features = Tensor::matrix(2, 2, vec![2.0, 1.0, 1.0, 1.0]).unwrap();
        let domain = Domain::with_sealed_labels(features, vec![0, 0], 1).unwrap();
        let preds = pseudo_label(&model, &domain).unwrap();
        assert_eq!(preds, vec![0, 0]); // (2,1) -> 0; tie (1,1) -> 0
    }

    #[test]
    fn pseudo_label_accuracy_equals_eval_accuracy_on_labeled_data() {
        let model = identity_model();
        let features = Tensor::matrix(4, 2, vec![2.0, 1.0, 0.0, 3.0, 5.0, -1.0, -2.0, 4.0]).unwrap();
        let labels = vec![0, 1, 0, 0];
        let domain = Domain::labeled(features, labels.clone(), 0).unwrap();
        let preds = pseudo_label(&model, &domain).unwrap();
        let acc_direct = domain.evaluate_accuracy(&preds).unwrap();
        let hits = preds.iter().zip(&labels).filter(|(a, b)| a == b).count();
        assert_eq!(acc_direct, hits as f64 / labels.len() as f64);
    }
}
