//! Differentiable siamese augmentation.
//!
//! A draw fixes one transform and its parameters; applying the same draw to a
//! real batch and a synthetic batch transforms both identically. Every
//! transform is linear in the pixel values, so its backward pass is the
//! transpose of the forward sampling.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{ImageShape, LabeledSet};
use crate::scalar::Scalar;
use crate::seed::Rng;

pub const MAX_ROTATION_DEGREES: f64 = 15.0;
pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);
pub const MAX_SHIFT_FRACTION: f64 = 0.125;
pub const CUTOUT_FRACTION: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    Rotate,
    Scale,
    Flip,
    Shift,
    Cutout,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 5] = [
        AugmentKind::Rotate,
        AugmentKind::Scale,
        AugmentKind::Flip,
        AugmentKind::Shift,
        AugmentKind::Cutout,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AugmentKind::Rotate => "rotate",
            AugmentKind::Scale => "scale",
            AugmentKind::Flip => "flip",
            AugmentKind::Shift => "shift",
            AugmentKind::Cutout => "cutout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        AugmentKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// One concrete transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    /// Clockwise rotation about the image center.
    Rotate { degrees: f64 },
    /// Zoom about the image center; factors above 1 enlarge the content.
    Scale { factor: f64 },
    /// Horizontal mirror.
    Flip,
    /// Content moves right by `dx` and down by `dy` pixels.
    Shift { dx: i64, dy: i64 },
    /// Zero a `size x size` square whose top-left corner is `(top, left)`.
    Cutout {
        top: usize,
        left: usize,
        size: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationDraw {
    pub op: AugmentOp,
}

impl AugmentationDraw {
    pub fn identity() -> Self {
        AugmentationDraw {
            op: AugmentOp::Rotate { degrees: 0.0 },
        }
    }

    /// Sample one op from `kinds` with parameters valid for `shape`.
    pub fn sample(rng: &mut Rng, shape: ImageShape, kinds: &[AugmentKind]) -> Self {
        let kind = *kinds.choose(rng).expect("at least one augmentation kind");
        let op = match kind {
            AugmentKind::Rotate => AugmentOp::Rotate {
                degrees: rng.gen_range(-MAX_ROTATION_DEGREES..=MAX_ROTATION_DEGREES),
            },
            AugmentKind::Scale => AugmentOp::Scale {
                factor: rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1),
            },
            AugmentKind::Flip => AugmentOp::Flip,
            AugmentKind::Shift => {
                let max_x = (shape.width as f64 * MAX_SHIFT_FRACTION).round() as i64;
                let max_y = (shape.height as f64 * MAX_SHIFT_FRACTION).round() as i64;
                AugmentOp::Shift {
                    dx: rng.gen_range(-max_x..=max_x),
                    dy: rng.gen_range(-max_y..=max_y),
                }
            }
            AugmentKind::Cutout => {
                let size = ((shape.height.min(shape.width) as f64 * CUTOUT_FRACTION).round()
                    as usize)
                    .max(1);
                AugmentOp::Cutout {
                    top: rng.gen_range(0..=shape.height - size.min(shape.height)),
                    left: rng.gen_range(0..=shape.width - size.min(shape.width)),
                    size,
                }
            }
        };
        AugmentationDraw { op }
    }
}

type Taps = [(usize, f64); 4];

enum Plan {
    Identity,
    Flip,
    Mask(Vec<bool>),
    /// Per output pixel, up to four weighted source pixels in the same plane.
    Warp(Vec<Taps>),
}

/// Inverse map for an affine warp: output (x, y) samples the source at
/// `center + m * (p - center) - offset`.
fn warp_plan(h: usize, w: usize, m: [[f64; 2]; 2], offset: (f64, f64)) -> Plan {
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut taps = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 - cx, y as f64 - cy);
            let sx = cx + m[0][0] * px + m[0][1] * py - offset.0;
            let sy = cy + m[1][0] * px + m[1][1] * py - offset.1;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let mut t: Taps = [(0, 0.0); 4];
            let corners = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1.0, y0, fx * (1.0 - fy)),
                (x0, y0 + 1.0, (1.0 - fx) * fy),
                (x0 + 1.0, y0 + 1.0, fx * fy),
            ];
            for (slot, (qx, qy, wt)) in t.iter_mut().zip(corners) {
                if wt != 0.0 && qx >= 0.0 && qy >= 0.0 && (qx as usize) < w && (qy as usize) < h {
                    *slot = (qy as usize * w + qx as usize, wt);
                }
            }
            taps.push(t);
        }
    }
    Plan::Warp(taps)
}

fn plan(op: &AugmentOp, shape: ImageShape) -> Plan {
    let (h, w) = (shape.height, shape.width);
    match *op {
        AugmentOp::Rotate { degrees } if degrees == 0.0 => Plan::Identity,
        AugmentOp::Rotate { degrees } => {
            let (s, c) = (degrees * PI / 180.0).sin_cos();
            // clockwise on screen (y down): the source of p is R(-a) p
            warp_plan(h, w, [[c, s], [-s, c]], (0.0, 0.0))
        }
        AugmentOp::Scale { factor } if factor == 1.0 => Plan::Identity,
        AugmentOp::Scale { factor } => {
            let inv = 1.0 / factor;
            warp_plan(h, w, [[inv, 0.0], [0.0, inv]], (0.0, 0.0))
        }
        AugmentOp::Flip => Plan::Flip,
        AugmentOp::Shift { dx: 0, dy: 0 } => Plan::Identity,
        AugmentOp::Shift { dx, dy } => {
            warp_plan(h, w, [[1.0, 0.0], [0.0, 1.0]], (dx as f64, dy as f64))
        }
        AugmentOp::Cutout { top, left, size } => {
            let mut keep = vec![true; h * w];
            for y in top..(top + size).min(h) {
                for x in left..(left + size).min(w) {
                    keep[y * w + x] = false;
                }
            }
            Plan::Mask(keep)
        }
    }
}

fn apply_plan<T: Scalar>(plan: &Plan, pixels: &[T], shape: ImageShape, transpose: bool) -> Vec<T> {
    let (h, w) = (shape.height, shape.width);
    let hw = h * w;
    match plan {
        Plan::Identity => pixels.to_vec(),
        Plan::Flip => {
            let mut out = vec![T::zero(); pixels.len()];
            for (src, dst) in pixels.chunks(w).zip(out.chunks_mut(w)) {
                for x in 0..w {
                    dst[x] = src[w - 1 - x];
                }
            }
            out
        }
        Plan::Mask(keep) => {
            let mut out = pixels.to_vec();
            for plane in out.chunks_mut(hw) {
                for (v, &k) in plane.iter_mut().zip(keep) {
                    if !k {
                        *v = T::zero();
                    }
                }
            }
            out
        }
        Plan::Warp(taps) => {
            let mut out = vec![T::zero(); pixels.len()];
            for (src, dst) in pixels.chunks(hw).zip(out.chunks_mut(hw)) {
                for (o, t) in taps.iter().enumerate() {
                    for &(i, wt) in t {
                        if wt == 0.0 {
                            continue;
                        }
                        if transpose {
                            dst[i] += T::of(wt) * src[o];
                        } else {
                            dst[o] += T::of(wt) * src[i];
                        }
                    }
                }
            }
            out
        }
    }
}

/// Transform raw pixels (any number of images of `shape`).
pub fn augment_pixels<T: Scalar>(
    pixels: &[T],
    shape: ImageShape,
    draw: &AugmentationDraw,
) -> Vec<T> {
    apply_plan(&plan(&draw.op, shape), pixels, shape, false)
}

/// Pull a gradient with respect to augmented pixels back to the originals.
pub fn augment_backward<T: Scalar>(
    grad_out: &[T],
    shape: ImageShape,
    draw: &AugmentationDraw,
) -> Vec<T> {
    apply_plan(&plan(&draw.op, shape), grad_out, shape, true)
}

/// Apply `draw` to every image of `batch`; labels are unchanged.
pub fn dsa_apply<T: Scalar>(batch: &LabeledSet<T>, draw: &AugmentationDraw) -> LabeledSet<T> {
    let pixels = augment_pixels(batch.pixels(), batch.shape(), draw);
    LabeledSet::new(
        batch.shape(),
        batch.class_count(),
        pixels,
        batch.labels().to_vec(),
    )
    .expect("augmentation preserves shape")
}
