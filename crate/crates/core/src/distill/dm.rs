//! Distribution-matching objective.
//!
//! `L = sum_c || mean_{x in real[c]} psi(x) - mean_{x' in synth[c]} psi(x') ||_2`
//! where `psi` is the flattened output of the network's last block.

use super::dsa::{augment_backward, augment_pixels, AugmentationDraw};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::model::{ModelParams, Want};
use crate::scalar::Scalar;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DmLoss {
    pub value: f64,
    /// `(class, term)` for every matched class, ascending by class.
    pub per_class: Vec<(usize, f64)>,
    /// Classes present in the synthetic set but absent from the real batch.
    pub skipped_classes: Vec<usize>,
}

fn check_pair<T: Scalar>(
    params: &ModelParams<T>,
    real: &LabeledSet<T>,
    synthetic: &LabeledSet<T>,
) -> Result<()> {
    let spec = params.spec();
    for (name, set) in [("real", real), ("synthetic", synthetic)] {
        if set.shape() != spec.input_shape || set.class_count() != spec.class_count {
            return Err(Error::ShapeMismatch {
                expected: format!("{} with {} classes", spec.input_shape, spec.class_count),
                actual: format!(
                    "{name} set {} with {} classes",
                    set.shape(),
                    set.class_count()
                ),
            });
        }
    }
    Ok(())
}

fn mean_rows<T: Scalar>(rows: &[T], dim: usize) -> Vec<T> {
    let n = rows.len() / dim;
    let mut mean = vec![T::zero(); dim];
    for row in rows.chunks(dim) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let inv = T::of(1.0 / n as f64);
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

fn class_pixels<T: Scalar>(
    set: &LabeledSet<T>,
    idx: &[usize],
    draw: Option<&AugmentationDraw>,
) -> Vec<T> {
    let px = set.select(idx).pixels().to_vec();
    match draw {
        Some(d) => augment_pixels(&px, set.shape(), d),
        None => px,
    }
}

fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    real: &LabeledSet<T>,
    synthetic: &LabeledSet<T>,
    draw: Option<&AugmentationDraw>,
    want_grad: bool,
) -> Result<(DmLoss, Option<Vec<T>>)> {
    check_pair(params, real, synthetic)?;
    let dim = params.spec().flatten_dim();
    let per_image = synthetic.shape().len();
    let mut out = DmLoss::default();
    let mut grad = want_grad.then(|| vec![T::zero(); synthetic.pixels().len()]);

    for class in synthetic.classes_present() {
        let real_idx = real.indices_of_class(class);
        if real_idx.is_empty() {
            out.skipped_classes.push(class);
            continue;
        }
        let real_mean = mean_rows(
            &params.embed_pixels(&class_pixels(real, &real_idx, draw), real_idx.len())?,
            dim,
        );
        let syn_idx = synthetic.indices_of_class(class);
        let syn_px = class_pixels(synthetic, &syn_idx, draw);
        let tape = params.forward_tape(&syn_px, syn_idx.len())?;
        let syn_mean = mean_rows(tape.features(), dim);

        let diff: Vec<T> = real_mean
            .iter()
            .zip(&syn_mean)
            .map(|(&a, &b)| a - b)
            .collect();
        let norm = diff.iter().map(|&d| d.f64() * d.f64()).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!(
                "distribution-matching term of class {class}"
            )));
        }
        out.value += norm;
        out.per_class.push((class, norm));

        if let Some(g) = grad.as_mut() {
            if norm == 0.0 {
                continue;
            }
            // d||r - mean(s)|| / d s_i = -(r - mean(s)) / (||.|| * n_syn)
            let scale = T::of(-1.0 / (norm * syn_idx.len() as f64));
            let row: Vec<T> = diff.iter().map(|&d| d * scale).collect();
            let gf: Vec<T> = row
                .iter()
                .copied()
                .cycle()
                .take(dim * syn_idx.len())
                .collect();
            let gin = params
                .backward_tape(&tape, &gf, Want::INPUT, None)
                .expect("input gradient requested");
            let gin = match draw {
                Some(d) => augment_backward(&gin, synthetic.shape(), d),
                None => gin,
            };
            for (k, &i) in syn_idx.iter().enumerate() {
                let dst = &mut g[i * per_image..(i + 1) * per_image];
                for (a, &b) in dst.iter_mut().zip(&gin[k * per_image..(k + 1) * per_image]) {
                    *a += b;
                }
            }
        }
    }
    Ok((out, grad))
}

/// Distribution-matching loss between `real` and `synthetic` under `params`.
/// When `draw` is given it is applied to both sets before embedding.
pub fn dm_loss<T: Scalar>(
    params: &ModelParams<T>,
    real: &LabeledSet<T>,
    synthetic: &LabeledSet<T>,
    draw: Option<&AugmentationDraw>,
) -> Result<DmLoss> {
    Ok(evaluate(params, real, synthetic, draw, false)?.0)
}

/// Loss plus its gradient with respect to the synthetic pixels.
pub fn dm_loss_grad<T: Scalar>(
    params: &ModelParams<T>,
    real: &LabeledSet<T>,
    synthetic: &LabeledSet<T>,
    draw: Option<&AugmentationDraw>,
) -> Result<(DmLoss, Vec<T>)> {
    let (loss, grad) = evaluate(params, real, synthetic, draw, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

/// Loss plus its gradient with respect to the network parameters.
pub fn dm_loss_param_grad<T: Scalar>(
    params: &ModelParams<T>,
    real: &LabeledSet<T>,
    synthetic: &LabeledSet<T>,
    draw: Option<&AugmentationDraw>,
) -> Result<(DmLoss, Vec<T>)> {
    check_pair(params, real, synthetic)?;
    let dim = params.spec().flatten_dim();
    let mut out = DmLoss::default();
    let mut grad = vec![T::zero(); params.len()];
    for class in synthetic.classes_present() {
        let real_idx = real.indices_of_class(class);
        if real_idx.is_empty() {
            out.skipped_classes.push(class);
            continue;
        }
        let syn_idx = synthetic.indices_of_class(class);
        let rt = params.forward_tape(&class_pixels(real, &real_idx, draw), real_idx.len())?;
        let st = params.forward_tape(&class_pixels(synthetic, &syn_idx, draw), syn_idx.len())?;
        let diff: Vec<T> = mean_rows(rt.features(), dim)
            .iter()
            .zip(&mean_rows(st.features(), dim))
            .map(|(&a, &b)| a - b)
            .collect();
        let norm = diff.iter().map(|&d| d.f64() * d.f64()).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!(
                "distribution-matching term of class {class}"
            )));
        }
        out.value += norm;
        out.per_class.push((class, norm));
        if norm == 0.0 {
            continue;
        }
        for (tape, n, sign) in [(&rt, real_idx.len(), 1.0), (&st, syn_idx.len(), -1.0)] {
            let scale = T::of(sign / (norm * n as f64));
            let gf: Vec<T> = diff
                .iter()
                .map(|&d| d * scale)
                .cycle()
                .take(dim * n)
                .collect();
            params.backward_tape(tape, &gf, Want::PARAMS, Some(&mut grad));
        }
    }
    Ok((out, grad))
}
