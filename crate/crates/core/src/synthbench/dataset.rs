use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::{CompositionSample, Pose};
use crate::error::{Error, Result};
use crate::imageio::{read_mask, read_ppm, write_mask, write_ppm};

pub const MANIFEST: &str = "manifest.jsonl";

/// One manifest line. Paths are relative to the dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub gt: String,
    pub bg: String,
    #[serde(rename = "ref")]
    pub reference: String,
    pub mask_bg: String,
    pub mask_ref: String,
    pub seed: u64,
    pub pose: Pose,
}

/// Writes every sample's images and masks plus `manifest.jsonl` into `dir`.
pub fn write_dataset(samples: &[CompositionSample], dir: &Path) -> Result<Vec<ManifestRecord>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST);
    let file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut out = BufWriter::new(file);
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let id = format!("{i:05}");
        let rec = ManifestRecord {
            gt: format!("{id}_gt.ppm"),
            bg: format!("{id}_bg.ppm"),
            reference: format!("{id}_ref.ppm"),
            mask_bg: format!("{id}_mask_bg.pgm"),
            mask_ref: format!("{id}_mask_ref.pgm"),
            id,
            seed: s.seed,
            pose: s.pose,
        };
        write_ppm(&dir.join(&rec.gt), &s.gt)?;
        write_ppm(&dir.join(&rec.bg), &s.bg)?;
        write_ppm(&dir.join(&rec.reference), &s.reference)?;
        write_mask(&dir.join(&rec.mask_bg), &s.mask_bg)?;
        write_mask(&dir.join(&rec.mask_ref), &s.mask_ref)?;
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(&manifest_path, e))?;
        records.push(rec);
    }
    out.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(records)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRecord>> {
    let path = dir.join(MANIFEST);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::format(&path, format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_dataset(dir: &Path) -> Result<Vec<CompositionSample>> {
    let resolve = |p: &str| -> PathBuf { dir.join(p) };
    read_manifest(dir)?
        .into_iter()
        .map(|r| {
            Ok(CompositionSample {
                gt: read_ppm(&resolve(&r.gt))?,
                bg: read_ppm(&resolve(&r.bg))?,
                reference: read_ppm(&resolve(&r.reference))?,
                mask_bg: read_mask(&resolve(&r.mask_bg))?,
                mask_ref: read_mask(&resolve(&r.mask_ref))?,
                pose: r.pose,
                seed: r.seed,
            })
        })
        .collect()
}
