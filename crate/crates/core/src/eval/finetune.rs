//! Retrieval augmentation of a pretrained model against genuine fine-tuning.

use serde::{Deserialize, Serialize};

use crate::datastore::{Datastore, DatastoreMeta};
use crate::error::{Error, Result};
use crate::eval::report::{Curve, EvalOrdering, EvalReport, Metrics};
use crate::eval::sweep::{token_accuracies, GridPoint};
use crate::eval::TokenSample;
use crate::toylm::{train_epoch, ToyLm, TrainConfig};
use crate::vocab::TokenId;

/// Token accuracy per fine-tuning epoch for the bare model and each augmentor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneComparison {
    /// `original[e]` is the accuracy of the model after `e` epochs.
    pub original: Vec<f64>,
    /// One series per augmentor, same indexing as `original`.
    pub augmented: Vec<(String, Vec<f64>)>,
    pub train: TrainConfig,
}

impl FinetuneComparison {
    pub fn epochs_max(&self) -> usize {
        self.original.len() - 1
    }

    pub fn series(&self, label: &str) -> Option<&[f64]> {
        if label == "original" {
            return Some(&self.original);
        }
        self.augmented.iter().find(|(l, _)| l == label).map(|(_, s)| s.as_slice())
    }

    pub fn into_report(self) -> Result<EvalReport> {
        let mut curves = Vec::with_capacity(1 + self.augmented.len());
        let mut push = |name: &str, ys: &[f64]| {
            let mut c = Curve::new(name, "epoch", "token_accuracy");
            for (e, &y) in ys.iter().enumerate() {
                c.push(e as f64, y);
            }
            curves.push(c);
        };
        push("original", &self.original);
        for (label, ys) in &self.augmented {
            push(label, ys);
        }
        Ok(EvalReport {
            method: "compare-finetune".to_string(),
            config: serde_json::json!({
                "train": self.train,
                "augmentors": self.augmented.iter().map(|(l, _)| l).collect::<Vec<_>>(),
            }),
            metrics: Metrics { token_accuracy: self.original.last().copied(), line_em: None, line_es: None },
            ordering: EvalOrdering::Parallel,
            samples: Vec::new(),
            rows: Vec::new(),
            curves,
        })
    }
}

/// Fine-tunes `pretrained` on `corpus` one epoch at a time up to
/// `epochs_max`. Epoch 0 is the pretrained model itself. At every epoch the
/// datastore is rebuilt from that epoch's model over `corpus`, and the model
/// alone plus every augmentor are scored on `testset`.
pub fn compare_finetune(
    pretrained: &ToyLm,
    corpus: &[TokenId],
    testset: &[TokenSample],
    epochs_max: usize,
    train: &TrainConfig,
    augmentors: &[GridPoint],
) -> Result<FinetuneComparison> {
    if epochs_max == 0 {
        return Err(Error::invalid("epochs_max must be at least 1"));
    }
    if augmentors.iter().any(|a| matches!(a, GridPoint::Original)) {
        return Err(Error::invalid("the original model is always evaluated; list only augmentors"));
    }
    let mut points = vec![GridPoint::Original];
    points.extend_from_slice(augmentors);

    let mut original = Vec::with_capacity(epochs_max + 1);
    let mut augmented: Vec<(String, Vec<f64>)> = augmentors.iter().map(|a| (a.label(), Vec::new())).collect();
    let mut model = pretrained.clone();
    for epoch in 0..=epochs_max {
        if epoch > 0 {
            train_epoch(&mut model, corpus, train, (epoch - 1) as u64)?;
        }
        let meta = DatastoreMeta::describe(&model.fingerprint(), &format!("finetune-epoch-{epoch}"), 0);
        let ds = Datastore::build(&model, corpus, meta)?;
        let accs = token_accuracies(&model, &ds, testset, &points)?;
        original.push(accs[0]);
        for ((_, series), acc) in augmented.iter_mut().zip(&accs[1..]) {
            series.push(*acc);
        }
    }
    Ok(FinetuneComparison { original, augmented, train: train.clone() })
}
