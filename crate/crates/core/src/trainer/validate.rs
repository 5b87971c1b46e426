use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::model::{argmax_rows, ModelParams};
use crate::scenario::Scenario;

const EVAL_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    /// `correct / total`.
    pub micro: f64,
    /// Unweighted mean of per-class accuracies over the classes present.
    pub macro_avg: f64,
}

/// Argmax predictions for every sample, ties to the lowest class index.
pub fn predict(params: &ModelParams<f32>, set: &LabeledSet<f32>) -> Result<Vec<usize>> {
    let per = set.shape().len();
    let classes = params.spec().class_count;
    let mut out = Vec::with_capacity(set.len());
    for chunk in set.pixels().chunks(EVAL_CHUNK * per) {
        let logits = params.forward_pixels(chunk, chunk.len() / per)?;
        out.extend(argmax_rows(&logits, classes));
    }
    Ok(out)
}

pub fn accuracy(params: &ModelParams<f32>, set: &LabeledSet<f32>) -> Result<Accuracy> {
    if set.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot measure accuracy on an empty test set".into(),
        ));
    }
    let pred = predict(params, set)?;
    let classes = set.class_count();
    let mut hit = vec![0usize; classes];
    let mut seen = vec![0usize; classes];
    for (&p, &y) in pred.iter().zip(set.labels()) {
        seen[y] += 1;
        if p == y {
            hit[y] += 1;
        }
    }
    let correct: usize = hit.iter().sum();
    let present: Vec<usize> = (0..classes).filter(|&c| seen[c] > 0).collect();
    let macro_avg = present
        .iter()
        .map(|&c| hit[c] as f64 / seen[c] as f64)
        .sum::<f64>()
        / present.len() as f64;
    Ok(Accuracy {
        correct,
        total: set.len(),
        micro: correct as f64 / set.len() as f64,
        macro_avg,
    })
}

/// Accuracy on the union of the test sets of steps `1..=upto_t`.
pub fn validate(params: &ModelParams<f32>, scenario: &Scenario, upto_t: usize) -> Result<Accuracy> {
    accuracy(params, &scenario.cumulative_test(upto_t)?)
}
