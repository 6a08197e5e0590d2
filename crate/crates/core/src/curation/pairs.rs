use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cluster::{cluster_objects, CLUSTER_THRESHOLD};
use super::filters::{blur_filter, largest_cc_ratio, mask_filter, sharpness_scores, FilterConfig, Sharpness};
use crate::error::{Error, Result};
use crate::imageio::{read_mask, read_ppm, write_mask, Mask, RgbImage};

/// A candidate segmentation shipped with a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledMask {
    pub label: String,
    pub mask: Mask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub source: String,
    pub index: usize,
    pub image: RgbImage,
    pub masks: Vec<LabeledMask>,
}

impl FrameRecord {
    /// Stable identifier used in manifests.
    pub fn id(&self) -> String {
        format!("{}/{:05}", self.source, self.index)
    }
}

/// Inclusive pixel bounds `(x0, y0, x1, y1)`.
pub type BBox = (usize, usize, usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub label: String,
    pub bbox: BBox,
}

pub trait Detector {
    fn detect(&self, frame: &FrameRecord) -> Vec<Detection>;
}

pub trait Verifier {
    fn verify(&self, crop: &RgbImage, label: &str) -> bool;
}

/// Must return unit-norm vectors of a fixed dimension.
pub trait Embedder {
    fn embed(&self, crop: &RgbImage) -> Vec<f64>;
}

pub struct OracleHooks<'a> {
    pub detector: &'a dyn Detector,
    pub verifier: &'a dyn Verifier,
    pub embedder: &'a dyn Embedder,
}

/// Reports the bounding box of every candidate mask.
#[derive(Clone, Copy, Debug, Default)]
pub struct CandidateDetector;

impl Detector for CandidateDetector {
    fn detect(&self, frame: &FrameRecord) -> Vec<Detection> {
        frame
            .masks
            .iter()
            .filter_map(|m| {
                m.mask.bbox().map(|bbox| Detection {
                    label: m.label.clone(),
                    bbox,
                })
            })
            .collect()
    }
}

/// Accepts any crop that is not a single flat colour.
#[derive(Clone, Copy, Debug, Default)]
pub struct NonFlatVerifier;

impl Verifier for NonFlatVerifier {
    fn verify(&self, crop: &RgbImage, _label: &str) -> bool {
        crop.data.chunks_exact(3).any(|p| p != &crop.data[..3])
    }
}

/// L2-normalised joint RGB histogram with `bins` levels per channel.
#[derive(Clone, Copy, Debug)]
pub struct HistogramEmbedder {
    pub bins: usize,
}

impl Default for HistogramEmbedder {
    fn default() -> Self {
        Self { bins: 4 }
    }
}

impl Embedder for HistogramEmbedder {
    fn embed(&self, crop: &RgbImage) -> Vec<f64> {
        let b = self.bins.max(1);
        let mut h = vec![0.0; b * b * b];
        for p in crop.data.chunks_exact(3) {
            let q = |v: u8| v as usize * b / 256;
            h[(q(p[0]) * b + q(p[1])) * b + q(p[2])] += 1.0;
        }
        let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            h.iter_mut().for_each(|v| *v /= norm);
        }
        h
    }
}

pub fn crop(img: &RgbImage, (x0, y0, x1, y1): BBox) -> RgbImage {
    let mut out = RgbImage::new(x1 - x0 + 1, y1 - y0 + 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            out.set(x - x0, y - y0, img.get(x, y));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    pub filters: FilterConfig,
    pub cluster_threshold: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            filters: FilterConfig::default(),
            cluster_threshold: CLUSTER_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairMasks {
    pub reference: String,
    pub target: String,
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub cluster: usize,
    pub reference: String,
    pub target: String,
    pub masks: PairMasks,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationStats {
    pub frames: usize,
    pub blurred: usize,
    pub detections: usize,
    pub rejected_by_verifier: usize,
    pub rejected_by_mask: usize,
    pub clusters: usize,
    pub singleton_clusters: usize,
    pub pairs: usize,
}

/// A surviving object instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectInstance {
    pub frame: String,
    pub index: usize,
    pub label: String,
    /// Manifest name of the stored mask.
    pub mask_name: String,
    pub mask: Mask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curated {
    pub pairs: Vec<PairRecord>,
    /// Objects referenced by `pairs`, keyed by mask name.
    pub masks: BTreeMap<String, Mask>,
    pub scores: Vec<(String, Sharpness)>,
    pub stats: CurationStats,
}

fn object_mask(frame: &FrameRecord, det: &Detection) -> Mask {
    let (x0, y0, x1, y1) = det.bbox;
    let in_box = |x: usize, y: usize| x >= x0 && x <= x1 && y >= y0 && y <= y1;
    match frame.masks.iter().find(|m| m.label == det.label) {
        Some(m) => Mask::from_fn(m.mask.width, m.mask.height, |x, y| m.mask.get(x, y) && in_box(x, y)),
        None => Mask::from_fn(frame.image.width, frame.image.height, in_box),
    }
}

/// Blur rejection, detection, verification, mask filtering, clustering and
/// pairing. Clustering runs within each source; within a cluster the earliest
/// frame is the reference and every later frame yields one pair.
pub fn build_pairs(frames: &[FrameRecord], hooks: &OracleHooks, cfg: &CurationConfig) -> Result<Curated> {
    let mut stats = CurationStats {
        frames: frames.len(),
        ..CurationStats::default()
    };
    let mut scores = Vec::with_capacity(frames.len());
    let mut by_source: BTreeMap<&str, Vec<(ObjectInstance, Vec<f64>)>> = BTreeMap::new();

    let mut order: Vec<&FrameRecord> = frames.iter().collect();
    order.sort_by(|a, b| (&a.source, a.index).cmp(&(&b.source, b.index)));
    for frame in order {
        let s = sharpness_scores(&frame.image)?;
        scores.push((frame.id(), s));
        if !blur_filter(&s, &cfg.filters) {
            stats.blurred += 1;
            continue;
        }
        for (k, det) in hooks.detector.detect(frame).into_iter().enumerate() {
            stats.detections += 1;
            let (x0, y0, x1, y1) = det.bbox;
            if x0 > x1 || y0 > y1 || x1 >= frame.image.width || y1 >= frame.image.height {
                return Err(Error::range(
                    "detection box",
                    format!("{:?} in frame {}", det.bbox, frame.id()),
                ));
            }
            let patch = crop(&frame.image, det.bbox);
            if !hooks.verifier.verify(&patch, &det.label) {
                stats.rejected_by_verifier += 1;
                continue;
            }
            let mask = object_mask(frame, &det);
            if mask.is_empty() || !mask_filter(largest_cc_ratio(&mask)?, &cfg.filters) {
                stats.rejected_by_mask += 1;
                continue;
            }
            let emb = hooks.embedder.embed(&patch);
            by_source.entry(frame.source.as_str()).or_default().push((
                ObjectInstance {
                    frame: frame.id(),
                    index: frame.index,
                    mask_name: format!("{}_{k}.pgm", frame.id().replace('/', "_")),
                    label: det.label,
                    mask,
                },
                emb,
            ));
        }
    }

    let mut pairs = Vec::new();
    let mut masks = BTreeMap::new();
    let mut next_cluster = 0;
    for objects in by_source.values() {
        let embs: Vec<Vec<f64>> = objects.iter().map(|(_, e)| e.clone()).collect();
        let labels = cluster_objects(&embs, cfg.cluster_threshold)?;
        let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
        for c in 0..n_clusters {
            stats.clusters += 1;
            // objects are already in frame order; keep the first instance per frame
            let mut members: Vec<&ObjectInstance> = Vec::new();
            for ((o, _), &l) in objects.iter().zip(&labels) {
                if l == c && members.last().is_none_or(|m| m.index != o.index) {
                    members.push(o);
                }
            }
            if members.len() < 2 {
                stats.singleton_clusters += 1;
                continue;
            }
            let reference = members[0];
            for target in &members[1..] {
                pairs.push(PairRecord {
                    cluster: next_cluster,
                    reference: reference.frame.clone(),
                    target: target.frame.clone(),
                    masks: PairMasks {
                        reference: reference.mask_name.clone(),
                        target: target.mask_name.clone(),
                    },
                });
                masks.insert(target.mask_name.clone(), target.mask.clone());
            }
            masks.insert(reference.mask_name.clone(), reference.mask.clone());
            next_cluster += 1;
        }
    }
    stats.pairs = pairs.len();
    Ok(Curated {
        pairs,
        masks,
        scores,
        stats,
    })
}

/// JSON-lines text of the pair manifest.
pub fn manifest_jsonl(pairs: &[PairRecord]) -> Result<String> {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}

pub const PAIRS_MANIFEST: &str = "pairs.jsonl";

/// Writes `pairs.jsonl` and every referenced mask as PGM into `dir`.
pub fn write_pairs(curated: &Curated, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, m) in &curated.masks {
        write_mask(&dir.join(name), m)?;
    }
    let path = dir.join(PAIRS_MANIFEST);
    fs::write(&path, manifest_jsonl(&curated.pairs)?).map_err(|e| Error::io(&path, e))
}

/// One line of a frame directory's `index.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameIndexEntry {
    pub source: String,
    pub index: usize,
    pub image: String,
    #[serde(default)]
    pub masks: Vec<MaskEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub label: String,
    pub path: String,
}

pub const FRAME_INDEX: &str = "index.jsonl";

/// Loads PPM frames and PGM candidate masks listed in `dir/index.jsonl`.
pub fn read_frames(dir: &Path) -> Result<Vec<FrameRecord>> {
    let path = dir.join(FRAME_INDEX);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut frames = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: FrameIndexEntry =
            serde_json::from_str(&line).map_err(|err| Error::format(&path, format!("line {}: {err}", n + 1)))?;
        let image = read_ppm(&dir.join(&e.image))?;
        let masks = e
            .masks
            .iter()
            .map(|m| {
                let mask = read_mask(&dir.join(&m.path))?;
                if (mask.width, mask.height) != (image.width, image.height) {
                    return Err(Error::format(dir.join(&m.path), "mask size differs from its frame"));
                }
                Ok(LabeledMask {
                    label: m.label.clone(),
                    mask,
                })
            })
            .collect::<Result<_>>()?;
        frames.push(FrameRecord {
            source: e.source,
            index: e.index,
            image,
            masks,
        });
    }
    Ok(frames)
}
