//! Frame filtering, mask filtering and oracle-driven pairing for real-scene data.

mod cluster;
mod filters;
mod pairs;

pub use cluster::{cluster_objects, cosine, CLUSTER_THRESHOLD};
pub use filters::{
    blur_filter, component_sizes, largest_cc_ratio, mask_filter, sharpness_scores, sharpness_scores_gray, FilterConfig,
    Sharpness, LAPLACIAN_THRESHOLD, MASK_CC_THRESHOLD, SOBEL_THRESHOLD,
};
pub use pairs::{
    build_pairs, crop, manifest_jsonl, read_frames, write_pairs, BBox, CandidateDetector, Curated, CurationConfig,
    CurationStats, Detection, Detector, Embedder, FrameIndexEntry, FrameRecord, HistogramEmbedder, LabeledMask,
    MaskEntry, NonFlatVerifier, ObjectInstance, OracleHooks, PairMasks, PairRecord, Verifier, FRAME_INDEX,
    PAIRS_MANIFEST,
};
