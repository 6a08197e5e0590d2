use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mixcomp::backbone::ReferenceInput;
use mixcomp::conlab::{
    denoising_loss, eval_draws, feature_composition_cosine, layer_l2, mean_rows, psnr_rgb, region_merging_loss,
    serialize_float, ssim_rgb, ConsistencyReport, ReportMeta,
};
use mixcomp::curation::{
    build_pairs, read_frames, write_pairs, CandidateDetector, HistogramEmbedder, NonFlatVerifier, OracleHooks,
};
use mixcomp::diffusion::{
    build_variant, inpaint_sample, load_model, train, CompositionSample, LossRecord, Model, TrainingExample, Variant,
};
use mixcomp::imageio::{read_ppm, write_ppm, RgbImage};
use mixcomp::synthbench::{augment_sample, generate_dataset, read_dataset, write_dataset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::rundir::RunDir;
use crate::ContractViolation;

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Training samples from `data.dir` or generated from the scene config.
fn training_samples(cfg: &RunConfig) -> Result<Vec<CompositionSample>> {
    let samples = match &cfg.data.dir {
        Some(dir) => read_dataset(dir)?,
        None => generate_dataset(&cfg.scene, cfg.data.count, cfg.data.seed)?,
    };
    if samples.is_empty() {
        bail!(mixcomp::Error::Empty("training dataset"));
    }
    if let Some(s) = samples.iter().find(|s| s.size() != cfg.model.image_size()) {
        bail!(mixcomp::Error::Config(format!(
            "dataset image size {} differs from model image size {}",
            s.size(),
            cfg.model.image_size()
        )));
    }
    if !cfg.data.augment {
        return Ok(samples);
    }
    samples
        .iter()
        .map(|s| Ok(augment_sample(s, &cfg.augmentation, s.seed)?))
        .collect()
}

/// Held-out samples from `data.dir` when given, otherwise generated from the eval seeds.
fn eval_samples(cfg: &RunConfig, count: usize) -> Result<Vec<CompositionSample>> {
    let samples = match &cfg.data.dir {
        Some(dir) => read_dataset(dir)?.into_iter().take(count).collect(),
        None => generate_dataset(&cfg.scene, count, cfg.eval.sample_seed)?,
    };
    if samples.is_empty() {
        bail!(mixcomp::Error::Empty("evaluation samples"));
    }
    Ok(samples)
}

fn examples(samples: &[CompositionSample]) -> Vec<TrainingExample<f32>> {
    samples.iter().map(|s| s.example()).collect()
}

pub fn gen(cfg: &RunConfig, run: &RunDir) -> Result<()> {
    let mut samples = generate_dataset(&cfg.scene, cfg.data.count, cfg.data.seed)?;
    if cfg.data.augment {
        samples = samples
            .iter()
            .map(|s| augment_sample(s, &cfg.augmentation, s.seed))
            .collect::<mixcomp::Result<_>>()?;
    }
    let records = write_dataset(&samples, &run.join("dataset"))?;
    eprintln!("wrote {} samples to {}", records.len(), run.join("dataset").display());
    Ok(())
}

fn train_variant(cfg: &RunConfig, data: &[TrainingExample<f32>], run: &RunDir, stem: &str) -> Result<Model<f32>> {
    let schedule = cfg.schedule()?;
    let mut model = build_variant::<f32>(&cfg.model)?;
    let every = (cfg.train.steps / 20).max(1);
    let log = train(&mut model, data, &schedule, &cfg.train, |r| {
        if r.step % every == 0 || r.step == cfg.train.steps {
            eprintln!(
                "[{}] step {:>5} loss {:.5} ({:.1}s)",
                r.variant, r.step, r.loss, r.wall_time
            );
        }
        Ok(())
    })?;
    write_csv::<LossRecord>(&run.join(format!("{stem}loss.csv")), &log)?;
    mixcomp::checkpoint::save(&run.join(format!("{stem}model.ckpt")), &model.store, model.meta())?;
    Ok(model)
}

pub fn train_cmd(cfg: &RunConfig, run: &RunDir) -> Result<()> {
    let data = examples(&training_samples(cfg)?);
    train_variant(cfg, &data, run, "")?;
    Ok(())
}

#[derive(Serialize)]
struct SampleRow {
    id: String,
    seed: u64,
    preserved: bool,
    #[serde(serialize_with = "serialize_float")]
    psnr: f64,
    ssim: f64,
}

pub fn sample(cfg: &RunConfig, run: &RunDir, checkpoint: &Path) -> Result<()> {
    let model = load_model::<f32>(checkpoint)?;
    let mut cfg = cfg.clone();
    cfg.model = model.config.clone();
    let schedule = cfg.schedule()?;
    let samples = eval_samples(&cfg, cfg.sample.count)?;
    let (out_dir, gt_dir, bg_dir) = (run.join("outputs"), run.join("gt"), run.join("masked_bg"));
    for d in [&out_dir, &gt_dir, &bg_dir] {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sample.seed);
    let mut rows = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let ex = s.example::<f32>();
        let reference: Option<&ReferenceInput<f32>> = if cfg.sample.reference_free {
            None
        } else {
            ex.reference.as_ref()
        };
        let out = inpaint_sample(
            &ex.masked_bg,
            &ex.mask,
            reference,
            &model,
            &schedule,
            cfg.sample.steps,
            &mut rng,
        )?;
        let img = RgbImage::from_tensor(&out)?;
        let preserved = img.masked(&s.mask_bg) == s.masked_bg();
        let name = format!("{i:05}.ppm");
        write_ppm(&out_dir.join(&name), &img)?;
        write_ppm(&gt_dir.join(&name), &s.gt)?;
        write_ppm(&bg_dir.join(&name), &s.masked_bg())?;
        rows.push(SampleRow {
            id: format!("{i:05}"),
            seed: s.seed,
            preserved,
            psnr: psnr_rgb(&img, &s.gt)?,
            ssim: ssim_rgb(&img, &s.gt)?.value,
        });
    }
    write_csv(&run.join("samples.csv"), &rows)?;
    if let Some(bad) = rows.iter().find(|r| !r.preserved) {
        bail!(ContractViolation(format!(
            "sample {} changed the known background",
            bad.id
        )));
    }
    eprintln!("sampled {} images; background preserved in all", rows.len());
    Ok(())
}

/// Layer-averaged ℓ2 curves for `models` over the configured evaluation draws.
fn l2_curves(cfg: &RunConfig, models: &[(String, Model<f32>)]) -> Result<BTreeMap<String, Vec<f64>>> {
    let schedule = cfg.schedule()?;
    let eval = examples(&eval_samples(cfg, cfg.eval.samples)?);
    let draws = eval_draws::<f32>(eval.len(), eval[0].gt.shape(), &schedule, cfg.eval.draws, cfg.eval.seed)?;
    let mut out = BTreeMap::new();
    for (name, model) in models {
        let rows = draws
            .iter()
            .map(|d| Ok(layer_l2(model, &eval[d.sample], d.t, &d.eps, &schedule)?))
            .collect::<Result<Vec<_>>>()?;
        out.insert(name.clone(), mean_rows(&rows));
    }
    Ok(out)
}

#[derive(Serialize)]
struct L2Row<'a> {
    layer: &'a str,
    variant: &'a str,
    l2: f64,
}

pub fn ablate(cfg: &RunConfig, run: &RunDir) -> Result<()> {
    let data = examples(&training_samples(cfg)?);
    let mut models = Vec::new();
    for v in Variant::ALL {
        let mut c = cfg.clone();
        c.model.variant = v;
        let model = train_variant(&c, &data, run, &format!("{v}_"))?;
        models.push((v.name().to_string(), model));
    }
    let curves = l2_curves(cfg, &models)?;
    let layers = cfg.model.layer_ids();
    let mut rows = Vec::new();
    for v in Variant::ALL {
        for (layer, &l2) in layers.iter().zip(&curves[v.name()]) {
            rows.push(L2Row {
                layer,
                variant: v.name(),
                l2,
            });
        }
    }
    write_csv(&run.join("l2_profile.csv"), &rows)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (shared, frozen) = (&curves["shared"], &curves["dual_frozen"]);
    let wins = shared.iter().zip(frozen).filter(|(s, f)| s <= f).count();
    write_json(
        &run.join("ablation.json"),
        &serde_json::json!({
            "layers": layers,
            "layer_mean_l2": curves.iter().map(|(k, v)| (k.clone(), mean(v))).collect::<BTreeMap<_, _>>(),
            "shared_le_dual_frozen_layers": wins,
        }),
    )?;
    Ok(())
}

pub fn conlab(cfg: &RunConfig, run: &RunDir, checkpoint: &Path, compare: &[(String, PathBuf)]) -> Result<()> {
    let model = load_model::<f32>(checkpoint)?;
    let mut cfg = cfg.clone();
    cfg.model = model.config.clone();
    let schedule = cfg.schedule()?;
    let samples = eval_samples(&cfg, cfg.eval.samples)?;
    let eval = examples(&samples);
    let draws = eval_draws::<f32>(eval.len(), eval[0].gt.shape(), &schedule, cfg.eval.draws, cfg.eval.seed)?;
    let mut report = ConsistencyReport {
        layers: cfg.model.layer_ids(),
        meta: ReportMeta {
            checkpoint: checkpoint.display().to_string(),
            samples: eval.len(),
            draws: draws.len(),
            seed: cfg.eval.seed,
        },
        ..ConsistencyReport::default()
    };
    let mut cosines = Vec::with_capacity(draws.len());
    for d in &draws {
        let ex = &eval[d.sample];
        report
            .merging_loss
            .push(region_merging_loss(&model, ex, d.t, &d.eps, &schedule)?);
        report
            .training_loss
            .push(denoising_loss(&model, ex, d.t, &d.eps, &schedule)?);
        let per_layer = feature_composition_cosine(&model, ex, d.t, &d.eps, &schedule)?;
        cosines.push(per_layer.into_iter().map(|(_, c)| c).collect::<Vec<_>>());
    }
    report.cosine = mean_rows(&cosines);

    let mut models = vec![(model.variant().name().to_string(), model)];
    for (name, path) in compare {
        match load_model::<f32>(path) {
            Ok(m) if m.config.layer_ids() == report.layers => models.push((name.clone(), m)),
            Ok(_) => eprintln!("skipping {name}: layer plan differs from {}", checkpoint.display()),
            Err(e) => eprintln!("skipping {name}: {e}"),
        }
    }
    report.l2 = l2_curves(&cfg, &models)?;
    report.validate()?;
    fs::write(run.join("report.csv"), report.to_csv()).context("writing report.csv")?;
    write_json(&run.join("report.json"), &report)?;
    write_json(&run.join("summary.json"), &report.summary())?;
    eprintln!(
        "merging loss {:.5} vs denoising loss {:.5}; min layer cosine {:.4}",
        report.mean_merging_loss().unwrap_or(f64::NAN),
        report.mean_training_loss().unwrap_or(f64::NAN),
        report.cosine.iter().cloned().fold(f64::INFINITY, f64::min)
    );
    Ok(())
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    frame: &'a str,
    sobel_var: f64,
    laplacian_var: f64,
}

pub fn curate(cfg: &RunConfig, run: &RunDir, frames: &Path) -> Result<()> {
    let frames = read_frames(frames)?;
    let (detector, verifier, embedder) = (CandidateDetector, NonFlatVerifier, HistogramEmbedder::default());
    let hooks = OracleHooks {
        detector: &detector,
        verifier: &verifier,
        embedder: &embedder,
    };
    let curated = build_pairs(&frames, &hooks, &cfg.curation)?;
    write_pairs(&curated, &run.path)?;
    let rows: Vec<ScoreRow> = curated
        .scores
        .iter()
        .map(|(f, s)| ScoreRow {
            frame: f,
            sobel_var: s.sobel_var,
            laplacian_var: s.laplacian_var,
        })
        .collect();
    write_csv(&run.join("scores.csv"), &rows)?;
    write_json(&run.join("stats.json"), &curated.stats)?;
    eprintln!("{} pairs from {} frames", curated.stats.pairs, curated.stats.frames);
    Ok(())
}

#[derive(Serialize)]
struct MetricRow {
    name: String,
    #[serde(serialize_with = "serialize_float")]
    psnr: f64,
    ssim: f64,
    ssim_global_fallback: bool,
}

fn ppm_names(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".ppm"))
        .collect();
    names.sort();
    Ok(names)
}

pub fn metrics(run: &RunDir, outputs: &Path, gt: &Path) -> Result<()> {
    let names = ppm_names(outputs)?;
    if names.is_empty() {
        bail!(mixcomp::Error::Empty("output images"));
    }
    let mut rows = Vec::with_capacity(names.len());
    for name in names {
        let a = read_ppm(&outputs.join(&name))?;
        let b = read_ppm(&gt.join(&name))?;
        let s = ssim_rgb(&a, &b)?;
        rows.push(MetricRow {
            psnr: psnr_rgb(&a, &b)?,
            ssim: s.value,
            ssim_global_fallback: s.global_fallback,
            name,
        });
    }
    write_csv(&run.join("metrics.csv"), &rows)?;
    eprintln!("scored {} images", rows.len());
    Ok(())
}
