//! Forward and backward passes for the ConvNetD family.
//!
//! Activations are `(N, C, H, W)` row-major. Convolutions go through im2col
//! and one GEMM per sample. Reductions always run in sample order, so results
//! are bit-reproducible for a given build.

use super::params::{BlockLayout, ModelParams};
use super::spec::pooled;
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::scalar::{gemm, Mat, Scalar};

pub const NORM_EPS: f64 = 1e-5;

/// Which gradients a backward pass should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Want {
    pub params: bool,
    pub input: bool,
}

impl Want {
    pub const PARAMS: Want = Want {
        params: true,
        input: false,
    };
    pub const INPUT: Want = Want {
        params: false,
        input: true,
    };
    pub const BOTH: Want = Want {
        params: true,
        input: true,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// Loss driving a backward pass.
#[derive(Clone, Copy, Debug)]
pub enum Loss<'a, T> {
    /// Softmax cross-entropy against the batch labels.
    CrossEntropy(Reduction),
    /// Caller-supplied gradient with respect to the logits, `(N, classes)`.
    LogitGrad(&'a [T]),
    /// Caller-supplied gradient with respect to the embedding, `(N, F)`.
    /// The classifier receives no gradient.
    FeatureGrad(&'a [T]),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<T> {
    /// Same layout as [`ModelParams::values`].
    pub params: Option<Vec<T>>,
    /// Same layout as the batch pixels.
    pub input: Option<Vec<T>>,
}

struct BlockCache<T> {
    input: Vec<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    relu: Vec<T>,
    h: usize,
    w: usize,
}

/// Intermediate activations retained for a backward pass.
pub struct Tape<T> {
    n: usize,
    blocks: Vec<BlockCache<T>>,
    features: Vec<T>,
}

impl<T: Scalar> Tape<T> {
    pub fn batch_len(&self) -> usize {
        self.n
    }

    /// Flattened last-block activations, `(N, F)`.
    pub fn features(&self) -> &[T] {
        &self.features
    }

    /// Which ReLU units are active, block by block.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.blocks
            .iter()
            .flat_map(|b| b.relu.iter().map(|&v| v > T::zero()))
            .collect()
    }
}

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ch * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, d) in dst.iter_mut().enumerate() {
                        let sx = x as isize + kx as isize - 1;
                        *d = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut dx[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ch * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

fn avg_pool<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (ph, pw) = (pooled(h), pooled(w));
    let quarter = T::of(0.25);
    let mut out = vec![T::zero(); planes * ph * pw];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ph * pw..(p + 1) * ph * pw];
        for i in 0..ph {
            let (r0, r1) = (2 * i, (2 * i + 1).min(h - 1));
            for j in 0..pw {
                let (c0, c1) = (2 * j, (2 * j + 1).min(w - 1));
                dst[i * pw + j] = quarter
                    * (src[r0 * w + c0] + src[r0 * w + c1] + src[r1 * w + c0] + src[r1 * w + c1]);
            }
        }
    }
    out
}

fn avg_pool_backward<T: Scalar>(dout: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (ph, pw) = (pooled(h), pooled(w));
    let quarter = T::of(0.25);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dout[p * ph * pw..(p + 1) * ph * pw];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..ph {
            let (r0, r1) = (2 * i, (2 * i + 1).min(h - 1));
            for j in 0..pw {
                let (c0, c1) = (2 * j, (2 * j + 1).min(w - 1));
                let g = quarter * src[i * pw + j];
                dst[r0 * w + c0] += g;
                dst[r0 * w + c1] += g;
                dst[r1 * w + c0] += g;
                dst[r1 * w + c1] += g;
            }
        }
    }
    dx
}

impl<T: Scalar> ModelParams<T> {
    fn check_batch(&self, pixels: &[T], n: usize) -> Result<()> {
        let per = self.spec().input_shape.len();
        if pixels.len() != n * per {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} images of {}", self.spec().input_shape),
                actual: format!("{} values", pixels.len()),
            });
        }
        Ok(())
    }

    fn check_set(&self, batch: &LabeledSet<T>) -> Result<()> {
        if batch.shape() != self.spec().input_shape {
            return Err(Error::ShapeMismatch {
                expected: self.spec().input_shape.to_string(),
                actual: batch.shape().to_string(),
            });
        }
        Ok(())
    }

    /// conv -> norm -> relu for one block; returns (xhat, inv_std, relu).
    fn block_forward(
        &self,
        bl: &BlockLayout,
        b: usize,
        x: &[T],
        n: usize,
        h: usize,
        w: usize,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let (cin, cout, hw) = (bl.in_channels, bl.out_channels, h * w);
        let kernel = Mat::row_major(self.kernel(b), cout, cin * 9);
        let mut cols = vec![T::zero(); cin * 9 * hw];
        let mut y = vec![T::zero(); n * cout * hw];
        for s in 0..n {
            im2col(&x[s * cin * hw..(s + 1) * cin * hw], cin, h, w, &mut cols);
            gemm(
                T::one(),
                kernel,
                Mat::row_major(&cols, cin * 9, hw),
                T::zero(),
                &mut y[s * cout * hw..(s + 1) * cout * hw],
            );
        }

        let cpg = cout / bl.groups;
        let glen = cpg * hw;
        let inv_len = T::of(1.0 / glen as f64);
        let eps = T::of(NORM_EPS);
        let (gamma, beta) = (self.gamma(b), self.beta(b));
        let mut inv_std = vec![T::zero(); n * bl.groups];
        let mut relu = vec![T::zero(); y.len()];
        for s in 0..n {
            for g in 0..bl.groups {
                let off = (s * cout + g * cpg) * hw;
                let seg = &mut y[off..off + glen];
                let mean = seg.iter().copied().sum::<T>() * inv_len;
                let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_len;
                let is = T::one() / (var + eps).sqrt();
                inv_std[s * bl.groups + g] = is;
                for (ci, chunk) in seg.chunks_mut(hw).enumerate() {
                    let c = g * cpg + ci;
                    let r = &mut relu[off + ci * hw..off + (ci + 1) * hw];
                    for (v, r) in chunk.iter_mut().zip(r.iter_mut()) {
                        *v = (*v - mean) * is;
                        let z = gamma[c] * *v + beta[c];
                        *r = if z > T::zero() { z } else { T::zero() };
                    }
                }
            }
        }
        (y, inv_std, relu)
    }

    fn run(&self, pixels: &[T], n: usize, keep: bool) -> Result<Tape<T>> {
        self.check_batch(pixels, n)?;
        let spec = self.spec();
        let (mut h, mut w) = (spec.input_shape.height, spec.input_shape.width);
        let mut x = pixels.to_vec();
        let mut blocks = Vec::new();
        for (b, bl) in self.layout().blocks.iter().enumerate() {
            let (xhat, inv_std, relu) = self.block_forward(bl, b, &x, n, h, w);
            let next = avg_pool(&relu, n * bl.out_channels, h, w);
            if keep {
                blocks.push(BlockCache {
                    input: std::mem::take(&mut x),
                    xhat,
                    inv_std,
                    relu,
                    h,
                    w,
                });
            }
            x = next;
            h = pooled(h);
            w = pooled(w);
        }
        Ok(Tape {
            n,
            blocks,
            features: x,
        })
    }

    fn classify(&self, features: &[T], n: usize) -> Vec<T> {
        let (classes, f) = (self.spec().class_count, self.spec().flatten_dim());
        let mut logits = vec![T::zero(); n * classes];
        for row in logits.chunks_mut(classes) {
            row.copy_from_slice(self.fc_bias());
        }
        gemm(
            T::one(),
            Mat::row_major(features, n, f),
            Mat::row_major(self.fc_weight(), classes, f).t(),
            T::one(),
            &mut logits,
        );
        logits
    }

    /// Flattened final-block activations for `n` images, `(n, F)`.
    pub fn embed_pixels(&self, pixels: &[T], n: usize) -> Result<Vec<T>> {
        Ok(self.run(pixels, n, false)?.features)
    }

    pub fn embed(&self, batch: &LabeledSet<T>) -> Result<Vec<T>> {
        self.check_set(batch)?;
        self.embed_pixels(batch.pixels(), batch.len())
    }

    /// Logits for `n` images, `(n, classes)`.
    pub fn forward_pixels(&self, pixels: &[T], n: usize) -> Result<Vec<T>> {
        let features = self.embed_pixels(pixels, n)?;
        Ok(self.classify(&features, n))
    }

    pub fn forward(&self, batch: &LabeledSet<T>) -> Result<Vec<T>> {
        self.check_set(batch)?;
        self.forward_pixels(batch.pixels(), batch.len())
    }

    /// Linear classifier applied to precomputed embeddings.
    pub fn classify_features(&self, features: &[T]) -> Vec<T> {
        let n = features.len() / self.spec().flatten_dim();
        self.classify(features, n)
    }

    /// Forward pass that keeps the activations needed by [`Self::backward_tape`].
    pub fn forward_tape(&self, pixels: &[T], n: usize) -> Result<Tape<T>> {
        self.run(pixels, n, true)
    }

    /// Backpropagate a gradient with respect to the embedding through the blocks.
    pub fn backward_tape(
        &self,
        tape: &Tape<T>,
        grad_features: &[T],
        want: Want,
        into: Option<&mut [T]>,
    ) -> Option<Vec<T>> {
        let n = tape.n;
        assert_eq!(
            grad_features.len(),
            tape.features.len(),
            "feature gradient shape"
        );
        let mut local;
        let mut pgrad: Option<&mut [T]> = if want.params {
            match into {
                Some(buf) => Some(buf),
                None => {
                    local = vec![T::zero(); self.len()];
                    Some(&mut local[..])
                }
            }
        } else {
            None
        };

        let mut dp = grad_features.to_vec();
        let depth = self.layout().blocks.len();
        let mut input_grad = None;
        for b in (0..depth).rev() {
            let bl = &self.layout().blocks[b];
            let cache = &tape.blocks[b];
            let (h, w) = (cache.h, cache.w);
            let (cin, cout, hw) = (bl.in_channels, bl.out_channels, h * w);
            let mut dz = avg_pool_backward(&dp, n * cout, h, w);
            for (g, &r) in dz.iter_mut().zip(&cache.relu) {
                if r <= T::zero() {
                    *g = T::zero();
                }
            }

            // norm backward, in place: dz becomes dy
            let cpg = cout / bl.groups;
            let glen = cpg * hw;
            let inv_len = T::of(1.0 / glen as f64);
            let gamma = self.gamma(b);
            let mut dxhat = vec![T::zero(); glen];
            for s in 0..n {
                for g in 0..bl.groups {
                    let off = (s * cout + g * cpg) * hw;
                    let xhat = &cache.xhat[off..off + glen];
                    let seg = &mut dz[off..off + glen];
                    if let Some(pg) = pgrad.as_deref_mut() {
                        for ci in 0..cpg {
                            let c = g * cpg + ci;
                            let (zs, xs) =
                                (&seg[ci * hw..(ci + 1) * hw], &xhat[ci * hw..(ci + 1) * hw]);
                            let dgamma: T = zs.iter().zip(xs).map(|(&a, &b)| a * b).sum();
                            let dbeta: T = zs.iter().copied().sum();
                            pg[bl.gamma.start + c] += dgamma;
                            pg[bl.beta.start + c] += dbeta;
                        }
                    }
                    for ci in 0..cpg {
                        let gm = gamma[g * cpg + ci];
                        for k in ci * hw..(ci + 1) * hw {
                            dxhat[k] = seg[k] * gm;
                        }
                    }
                    let mean_d = dxhat.iter().copied().sum::<T>() * inv_len;
                    let mean_dx = dxhat.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<T>() * inv_len;
                    let is = cache.inv_std[s * bl.groups + g];
                    for k in 0..glen {
                        seg[k] = is * (dxhat[k] - mean_d - xhat[k] * mean_dx);
                    }
                }
            }

            // conv backward
            let need_dx = b > 0 || want.input;
            let mut dx = if need_dx {
                vec![T::zero(); n * cin * hw]
            } else {
                Vec::new()
            };
            let kernel = Mat::row_major(self.kernel(b), cout, cin * 9);
            let mut cols = vec![T::zero(); cin * 9 * hw];
            let mut dcols = vec![T::zero(); cin * 9 * hw];
            for s in 0..n {
                let dy = Mat::row_major(&dz[s * cout * hw..(s + 1) * cout * hw], cout, hw);
                if let Some(pg) = pgrad.as_deref_mut() {
                    im2col(
                        &cache.input[s * cin * hw..(s + 1) * cin * hw],
                        cin,
                        h,
                        w,
                        &mut cols,
                    );
                    gemm(
                        T::one(),
                        dy,
                        Mat::row_major(&cols, cin * 9, hw).t(),
                        T::one(),
                        &mut pg[bl.kernel.clone()],
                    );
                }
                if need_dx {
                    gemm(T::one(), kernel.t(), dy, T::zero(), &mut dcols);
                    col2im_add(&dcols, cin, h, w, &mut dx[s * cin * hw..(s + 1) * cin * hw]);
                }
            }
            if b == 0 && want.input {
                input_grad = Some(dx);
            } else {
                dp = dx;
            }
        }
        input_grad
    }

    /// Gradients of a loss over `batch` with respect to the parameters and/or
    /// the input pixels. Returns the loss value (0 for caller-supplied
    /// gradients) alongside the gradients.
    pub fn backward(
        &self,
        batch: &LabeledSet<T>,
        loss: Loss<'_, T>,
        want: Want,
    ) -> Result<(f64, Gradients<T>)> {
        self.check_set(batch)?;
        let n = batch.len();
        let tape = self.forward_tape(batch.pixels(), n)?;
        let (classes, f) = (self.spec().class_count, self.spec().flatten_dim());
        let mut pgrad = if want.params {
            Some(vec![T::zero(); self.len()])
        } else {
            None
        };

        let (value, grad_features) = match loss {
            Loss::FeatureGrad(g) => {
                if g.len() != n * f {
                    return Err(Error::ShapeMismatch {
                        expected: format!("({n}, {f}) feature gradient"),
                        actual: format!("{} values", g.len()),
                    });
                }
                (0.0, g.to_vec())
            }
            Loss::LogitGrad(_) | Loss::CrossEntropy(_) => {
                let (value, dlogits) = match loss {
                    Loss::LogitGrad(g) => {
                        if g.len() != n * classes {
                            return Err(Error::ShapeMismatch {
                                expected: format!("({n}, {classes}) logit gradient"),
                                actual: format!("{} values", g.len()),
                            });
                        }
                        (0.0, g.to_vec())
                    }
                    Loss::CrossEntropy(red) => {
                        let logits = self.classify(tape.features(), n);
                        cross_entropy(&logits, batch.labels(), classes, red)?
                    }
                    Loss::FeatureGrad(_) => unreachable!(),
                };
                if let Some(pg) = pgrad.as_deref_mut() {
                    let layout = self.layout();
                    gemm(
                        T::one(),
                        Mat::row_major(&dlogits, n, classes).t(),
                        Mat::row_major(tape.features(), n, f),
                        T::one(),
                        &mut pg[layout.fc_weight.clone()],
                    );
                    for row in dlogits.chunks(classes) {
                        for (acc, &g) in pg[layout.fc_bias.clone()].iter_mut().zip(row) {
                            *acc += g;
                        }
                    }
                }
                let mut dfeat = vec![T::zero(); n * f];
                gemm(
                    T::one(),
                    Mat::row_major(&dlogits, n, classes),
                    Mat::row_major(self.fc_weight(), classes, f),
                    T::zero(),
                    &mut dfeat,
                );
                (value, dfeat)
            }
        };
        let input = self.backward_tape(&tape, &grad_features, want, pgrad.as_deref_mut());
        let grads = Gradients {
            params: pgrad,
            input,
        };
        if grads
            .params
            .iter()
            .chain(grads.input.iter())
            .any(|g| g.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite("gradient contains NaN or infinity".into()));
        }
        Ok((value, grads))
    }
}

/// Softmax cross-entropy. Returns the loss and its gradient w.r.t. the logits.
pub fn cross_entropy<T: Scalar>(
    logits: &[T],
    labels: &[usize],
    classes: usize,
    reduction: Reduction,
) -> Result<(f64, Vec<T>)> {
    let n = labels.len();
    let scale = match reduction {
        Reduction::Mean => 1.0 / n.max(1) as f64,
        Reduction::Sum => 1.0,
    };
    let mut total = 0.0f64;
    let mut grad = vec![T::zero(); logits.len()];
    for (i, (row, &y)) in logits.chunks(classes).zip(labels).enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logits of batch sample {i}")));
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let denom: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_denom = denom.ln();
        total += (log_denom - (row[y] - max)).f64();
        let g = &mut grad[i * classes..(i + 1) * classes];
        for (k, (gk, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v - max).exp() / denom;
            let target = if k == y { T::one() } else { T::zero() };
            *gk = (p - target) * T::of(scale);
        }
    }
    let value = total * scale;
    if !value.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    Ok((value, grad))
}

/// Index of the largest logit per row; ties go to the lowest class index.
pub fn argmax_rows<T: Scalar>(logits: &[T], classes: usize) -> Vec<usize> {
    logits
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
