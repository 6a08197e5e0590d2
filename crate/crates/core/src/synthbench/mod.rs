//! Procedural composition samples and the augmentation scheme.

mod augment;
mod dataset;
mod scene;

pub use augment::{
    augment_image, augment_mask, blur_threshold, bounding_box, dilate, erode, AugmentRecord, AugmentationConfig,
    Interp, MaskBranch,
};
pub use dataset::{read_dataset, read_manifest, write_dataset, ManifestRecord, MANIFEST};
pub use scene::{generate_scene, recompose, render_background, warp, BackgroundFamily, ObjectFamily, SceneConfig};

/// Samples for seeds `base, base+1, ...`.
pub fn generate_dataset(
    cfg: &SceneConfig,
    count: usize,
    base_seed: u64,
) -> crate::Result<Vec<crate::diffusion::CompositionSample>> {
    (0..count as u64).map(|i| generate_scene(cfg, base_seed + i)).collect()
}

/// Training-time perturbation of one sample: the reference image and its mask
/// receive the image transforms, and the placement hole receives one mask
/// branch. The ground truth is untouched, so the model still learns to fill
/// the (possibly enlarged) hole with the true composite.
pub fn augment_sample(
    s: &crate::diffusion::CompositionSample,
    cfg: &AugmentationConfig,
    seed: u64,
) -> crate::Result<crate::diffusion::CompositionSample> {
    let (reference, mask_ref, _) = augment_image(&s.reference, &s.mask_ref, cfg, seed)?;
    let (hole, _) = augment_mask(&s.hole(), cfg, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    Ok(crate::diffusion::CompositionSample {
        reference,
        mask_ref,
        mask_bg: hole.complement(),
        ..s.clone()
    })
}
