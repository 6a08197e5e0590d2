use std::collections::HashMap;

use mixcomp::curation::{Detection, Detector, Embedder, FrameRecord, LabeledMask, Verifier};
use mixcomp::imageio::{Mask, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const S: usize = 24;
pub const RED: [u8; 3] = [255, 0, 0];
pub const NEAR_RED: [u8; 3] = [250, 0, 0];
pub const GREEN: [u8; 3] = [0, 255, 0];
pub const BLUE: [u8; 3] = [0, 0, 255];

pub fn rect(x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
    Mask::from_fn(S, S, |x, y| x >= x0 && x <= x1 && y >= y0 && y <= y1)
}

pub struct Obj {
    label: &'static str,
    bbox: (usize, usize, usize, usize),
    color: [u8; 3],
    mask: Mask,
}

pub fn obj(label: &'static str, bbox: (usize, usize, usize, usize), color: [u8; 3]) -> Obj {
    Obj {
        label,
        bbox,
        color,
        mask: rect(bbox.0, bbox.1, bbox.2, bbox.3),
    }
}

pub fn frame(source: &str, index: usize, objs: &[Obj], sharp: bool, seed: u64) -> FrameRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = RgbImage::filled(S, S, [128, 128, 128]);
    if sharp {
        image.data.iter_mut().for_each(|v| *v = rng.gen());
    }
    for o in objs {
        let (x0, y0, x1, y1) = o.bbox;
        for y in y0..=y1 {
            for x in x0..=x1 {
                image.set(x, y, o.color);
            }
        }
    }
    FrameRecord {
        source: source.into(),
        index,
        image,
        masks: objs
            .iter()
            .map(|o| LabeledMask {
                label: o.label.into(),
                mask: o.mask.clone(),
            })
            .collect(),
    }
}

/// Reports every candidate mask's label over its painted box, in the order given.
pub struct ScriptedDetector(pub HashMap<String, Vec<Detection>>);

impl Detector for ScriptedDetector {
    fn detect(&self, f: &FrameRecord) -> Vec<Detection> {
        self.0.get(&f.id()).cloned().unwrap_or_default()
    }
}

pub struct RejectLabel(pub &'static str);

impl Verifier for RejectLabel {
    fn verify(&self, _crop: &RgbImage, label: &str) -> bool {
        label != self.0
    }
}

/// Maps the solid colour of a crop to a fixed unit vector.
pub struct ColorEmbedder;

impl Embedder for ColorEmbedder {
    fn embed(&self, crop: &RgbImage) -> Vec<f64> {
        match crop.get(0, 0) {
            RED => vec![1.0, 0.0, 0.0],
            NEAR_RED => vec![0.9, 0.19f64.sqrt(), 0.0],
            GREEN => vec![0.0, 1.0, 0.0],
            BLUE => vec![0.0, 0.0, 1.0],
            c => panic!("unexpected colour {c:?}"),
        }
    }
}

pub fn scripted_frames() -> (Vec<FrameRecord>, ScriptedDetector) {
    let cup = |c| obj("cup", (2, 2, 7, 7), c);
    let ball = || obj("ball", (12, 12, 17, 17), GREEN);
    let mut broken = obj("ball", (12, 12, 19, 19), GREEN);
    broken.mask = Mask::from_fn(S, S, |x, y| {
        (12..=14).contains(&x) && (12..=14).contains(&y) || (17..=19).contains(&x) && (17..=19).contains(&y)
    });
    let frames = vec![
        // deliberately out of order; the pipeline sorts by (source, index)
        frame("b", 2, &[cup(RED)], true, 12),
        frame("a", 0, &[cup(RED), ball()], true, 0),
        frame("a", 1, &[cup(RED)], true, 1),
        frame("a", 2, &[cup(RED)], false, 2),
        frame("a", 3, &[cup(RED), obj("ghost", (14, 2, 20, 8), BLUE)], true, 3),
        frame("a", 4, &[broken], true, 4),
        frame("a", 5, &[ball()], true, 5),
        frame("a", 6, &[cup(RED), obj("mug", (14, 2, 20, 8), NEAR_RED)], true, 6),
        frame("b", 0, &[cup(RED)], true, 10),
        frame("b", 1, &[obj("box", (5, 5, 12, 12), BLUE)], true, 11),
    ];
    let mut dets = HashMap::new();
    for f in &frames {
        let d: Vec<Detection> = f
            .masks
            .iter()
            .map(|m| Detection {
                label: m.label.clone(),
                bbox: m.mask.bbox().unwrap(),
            })
            .collect();
        dets.insert(f.id(), d);
    }
    (frames, ScriptedDetector(dets))
}

pub const EXPECTED_MANIFEST: &str = r#"{"cluster":0,"reference":"a/00000","target":"a/00001","masks":{"reference":"a_00000_0.pgm","target":"a_00001_0.pgm"}}
{"cluster":0,"reference":"a/00000","target":"a/00003","masks":{"reference":"a_00000_0.pgm","target":"a_00003_0.pgm"}}
{"cluster":0,"reference":"a/00000","target":"a/00006","masks":{"reference":"a_00000_0.pgm","target":"a_00006_0.pgm"}}
{"cluster":1,"reference":"a/00000","target":"a/00005","masks":{"reference":"a_00000_1.pgm","target":"a_00005_0.pgm"}}
{"cluster":2,"reference":"b/00000","target":"b/00002","masks":{"reference":"b_00000_0.pgm","target":"b_00002_0.pgm"}}
"#;
