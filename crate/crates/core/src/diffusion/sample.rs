use serde::{Deserialize, Serialize};

use crate::backbone::{DenoiserInput, ReferenceInput};
use crate::imageio::{Mask, RgbImage};
use crate::numerics::{Element, Tensor};

/// Similarity transform placing the reference object in the target frame:
/// rotate by `angle_deg` and scale about `center`, then translate by `(tx, ty)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub angle_deg: f64,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
    /// Pivot in reference-image coordinates.
    pub center: (f64, f64),
}

impl Pose {
    pub fn identity(center: (f64, f64)) -> Self {
        Self {
            angle_deg: 0.0,
            scale: 1.0,
            tx: 0.0,
            ty: 0.0,
            center,
        }
    }

    /// Forward map from reference to target coordinates.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        (
            self.scale * (c * dx - s * dy) + self.center.0 + self.tx,
            self.scale * (s * dx + c * dy) + self.center.1 + self.ty,
        )
    }

    /// Inverse map from target to reference coordinates.
    pub fn invert(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (
            (x - self.center.0 - self.tx) / self.scale,
            (y - self.center.1 - self.ty) / self.scale,
        );
        (c * dx + s * dy + self.center.0, -s * dx + c * dy + self.center.1)
    }
}

/// One composition item. `mask_bg` is 1 where the background is kept and 0 in
/// the placement hole; `mask_ref` marks the object in `reference`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositionSample {
    pub gt: RgbImage,
    pub bg: RgbImage,
    pub reference: RgbImage,
    pub mask_bg: Mask,
    pub mask_ref: Mask,
    pub pose: Pose,
    pub seed: u64,
}

impl CompositionSample {
    /// `I_bg^M = M_bg ⊙ I_gt`.
    pub fn masked_bg(&self) -> RgbImage {
        self.gt.masked(&self.mask_bg)
    }

    /// `I_ref^M = M_ref ⊙ I_ref`.
    pub fn masked_ref(&self) -> RgbImage {
        self.reference.masked(&self.mask_ref)
    }

    /// `M̄_bg`, derived on demand.
    pub fn hole(&self) -> Mask {
        self.mask_bg.complement()
    }

    pub fn size(&self) -> usize {
        self.gt.width
    }

    /// Model-space tensors in `[-1, 1]`; masked images are zero in the masked-out region.
    pub fn example<T: Element>(&self) -> TrainingExample<T> {
        let gt = self.gt.to_tensor::<T>();
        let mask = self.mask_bg.to_tensor::<T>();
        let ref_mask = self.mask_ref.to_tensor::<T>();
        TrainingExample {
            masked_bg: apply_mask(&gt, &mask),
            reference: Some(ReferenceInput {
                image: apply_mask(&self.reference.to_tensor::<T>(), &ref_mask),
                mask: ref_mask,
            }),
            gt,
            mask,
        }
    }
}

/// `m ⊙ x` for `x: C×H×W` and `m: 1×H×W`, exact zeros where `m = 0`.
pub fn apply_mask<T: Element>(x: &Tensor<T>, m: &Tensor<T>) -> Tensor<T> {
    let hw = m.numel();
    Tensor::from_fn(x.shape(), |i| {
        if m.data()[i % hw] != T::zero() {
            x.data()[i]
        } else {
            T::zero()
        }
    })
}

/// `m ? a : b` per pixel, bitwise.
pub fn select<T: Element>(m: &Tensor<T>, a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let hw = m.numel();
    Tensor::from_fn(a.shape(), |i| {
        if m.data()[i % hw] != T::zero() {
            a.data()[i]
        } else {
            b.data()[i]
        }
    })
}

/// Model-space training item.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample<T> {
    pub gt: Tensor<T>,
    pub mask: Tensor<T>,
    pub masked_bg: Tensor<T>,
    pub reference: Option<ReferenceInput<T>>,
}

impl<T: Element> TrainingExample<T> {
    pub fn input(&self, noisy: Tensor<T>) -> DenoiserInput<T> {
        DenoiserInput {
            noisy,
            mask: self.mask.clone(),
            masked_bg: self.masked_bg.clone(),
            reference: self.reference.clone(),
        }
    }
}
