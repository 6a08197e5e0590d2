//! Feature-consistency measurements and image-quality metrics.

mod consistency;
mod metrics;
mod report;

pub use consistency::{
    composition_cosine, cosine_similarity, denoising_loss, downsample_mask, eval_draws, feature_composition_cosine,
    feature_l2, layer_l2, mean_rows, region_merging_loss, separated_inputs, EvalDraw, SeparatedInputs,
};
pub use metrics::{
    format_float, gaussian_taps, psnr, psnr_rgb, serialize_float, ssim_plane, ssim_rgb, Ssim, SSIM_C1, SSIM_C2,
    SSIM_SIGMA, SSIM_WINDOW,
};
pub use report::{ConsistencyReport, ReportMeta};
