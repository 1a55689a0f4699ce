//! End-to-end commands: train, render, evaluate, interpolate, gradcheck.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, EFFECTIVE_CONFIG, FULL_SCALE_STEPS};
use crate::diff::{grad_check, GradCheckOptions, GradCheckReport};
use crate::error::{Error, Result};
use crate::field::{latent_interpolate, FieldModel, ModelMode};
use crate::metrics::{evaluate_views, write_curve_csv, write_heatmap, EvalView, Evaluation};
use crate::objective::{loss_graph, EntropyDraws, LossBreakdown, LossConfig, TrainBatch};
use crate::raster::Raster;
use crate::render::{
    midpoint_samples, render_rays, stratified_samples, Camera, Latents, PixelPrediction,
    PredictionMaps, RayBatch,
};
use crate::rng::{self, stream};
use crate::scenes::{generate_dataset, CameraRig, RayDataset};
use crate::train::{StepRecord, Trainer, TrainingRays};

pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const REPORT: &str = "report.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Load the configured dataset, or generate it from the scene with the
/// dataset substream.
pub fn prepare_dataset(cfg: &RunConfig) -> Result<RayDataset> {
    if let Some(path) = &cfg.data.path {
        return RayDataset::load(path);
    }
    let scene = cfg.scene()?;
    generate_dataset(
        &scene,
        &cfg.rig(),
        cfg.data.train_views,
        cfg.data.test_views,
        (cfg.data.width, cfg.data.height),
        cfg.data.n_dense,
        &mut rng::substream(cfg.seed, stream::DATASET),
    )
}

/// Freshly initialized model for `cfg`.
pub fn init_model(cfg: &RunConfig) -> Result<FieldModel> {
    FieldModel::new(
        cfg.model.clone(),
        &mut rng::substream(cfg.seed, stream::INIT),
    )
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub dataset_dir: PathBuf,
    pub log: PathBuf,
    pub records: Vec<StepRecord>,
}

/// Train per `cfg`, writing into `cfg.out_dir`:
/// `config.json`, `dataset/`, `model.ckpt`, `checkpoints/step_NNNNNN.ckpt`
/// and `train_log.jsonl`. On a numeric failure the last good parameters are
/// saved as `last_good.ckpt` and the error is returned.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    create_dir(out)?;
    cfg.save(&out.join(EFFECTIVE_CONFIG))?;
    let ds = prepare_dataset(cfg)?;
    let dataset_dir = match &cfg.data.path {
        Some(p) => p.clone(),
        None => {
            let dir = out.join("dataset");
            ds.save(&dir)?;
            dir
        }
    };
    let model = init_model(cfg)?;
    let ckpt_dir = out.join("checkpoints");
    let checkpoint = out.join(FINAL_CHECKPOINT);
    let log = out.join(TRAIN_LOG);
    let mut writer = BufWriter::new(File::create(&log).map_err(|e| Error::io(&log, e))?);
    let mut records = Vec::with_capacity(cfg.steps);
    if cfg.steps == 0 {
        model.save(&checkpoint)?;
        writer.flush().map_err(|e| Error::io(&log, e))?;
        return Ok(TrainOutcome {
            checkpoint,
            dataset_dir,
            log,
            records,
        });
    }
    create_dir(&ckpt_dir)?;
    let data = TrainingRays::from_dataset(&ds)?;
    let mut trainer = Trainer::new(
        model,
        cfg.train.clone(),
        cfg.steps,
        data,
        ds.scene.bounds,
        cfg.seed,
    )?;
    while trainer.step_index() < cfg.steps {
        let rec = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                writer.flush().map_err(|e| Error::io(&log, e))?;
                if e.is_numeric() {
                    trainer.model().save(&out.join(LAST_GOOD_CHECKPOINT))?;
                }
                return Err(e);
            }
        };
        let line = serde_json::to_string(&rec).map_err(|source| Error::Json {
            path: log.clone(),
            source,
        })?;
        writeln!(writer, "{line}").map_err(|e| Error::io(&log, e))?;
        if rec.step % cfg.train.checkpoint_every == 0 && rec.step < cfg.steps {
            trainer
                .model()
                .save(&ckpt_dir.join(format!("step_{:06}.ckpt", rec.step)))?;
        }
        records.push(rec);
    }
    writer.flush().map_err(|e| Error::io(&log, e))?;
    trainer.model().save(&checkpoint)?;
    Ok(TrainOutcome {
        checkpoint,
        dataset_dir,
        log,
        records,
    })
}

/// Quadrature and sampling settings shared by the rendering commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub samples: usize,
    pub nodes: usize,
    pub chunk: usize,
    pub seed: u64,
}

impl RenderOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            samples: cfg.render.samples,
            nodes: cfg.render.nodes,
            chunk: cfg.render.chunk,
            seed: cfg.seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.samples == 0 {
            problems.push("samples must be >= 1".to_string());
        }
        if self.nodes < 2 {
            problems.push("nodes must be >= 2".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Camera for rendering: an explicit pose, or an azimuth on a rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    /// Row-major camera-to-world 4x4 matrix.
    #[serde(default)]
    pub pose: Option<Vec<f64>>,
    #[serde(default)]
    pub focal: Option<f64>,
    #[serde(default)]
    pub azimuth_deg: Option<f64>,
    #[serde(default)]
    pub rig: Option<CameraRig>,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
    #[serde(default)]
    pub background: [f64; 3],
}

fn default_near() -> f64 {
    2.0
}

fn default_far() -> f64 {
    6.0
}

impl CameraSpec {
    /// The camera of a dataset view with the dataset's range and background.
    pub fn from_view(ds: &RayDataset, view: usize) -> Result<Self> {
        let v = ds
            .views
            .get(view)
            .ok_or_else(|| Error::invalid(format!("view {view} out of range")))?;
        Ok(Self {
            pose: Some(v.camera.pose().to_vec()),
            focal: Some(v.camera.focal),
            azimuth_deg: None,
            rig: None,
            width: v.camera.width,
            height: v.camera.height,
            near: ds.scene.near,
            far: ds.scene.far,
            background: ds.scene.background,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))
    }

    pub fn camera(&self) -> Result<Camera> {
        match (&self.pose, self.azimuth_deg) {
            (Some(pose), None) => {
                let focal = self.focal.ok_or_else(|| {
                    Error::Config(vec!["camera: pose needs a focal length".into()])
                })?;
                Camera::from_pose(pose, focal, self.width, self.height)
            }
            (None, Some(az)) => {
                self.rig
                    .clone()
                    .unwrap_or_default()
                    .camera(az, self.width, self.height)
            }
            _ => Err(Error::Config(vec![
                "camera: give exactly one of `pose` or `azimuth_deg`".into(),
            ])),
        }
    }
}

/// Render every pixel of `camera` with midpoint quadrature.
pub fn render_view(
    model: &FieldModel,
    camera: &Camera,
    near: f64,
    far: f64,
    background: [f64; 3],
    latents: &Latents,
    opts: &RenderOptions,
) -> Result<Vec<PixelPrediction>> {
    let rays = camera.rays(near, far)?;
    let nodes = rays
        .iter()
        .map(|r| midpoint_samples(r, opts.nodes))
        .collect::<Result<Vec<_>>>()?;
    let ids = (0..rays.len() as u64).collect();
    let batch = RayBatch::new(rays, nodes, ids)?;
    render_rays(model, &batch, latents, background, opts.chunk)
}

fn render_latents(model: &FieldModel, opts: &RenderOptions) -> Latents {
    Latents::draw(
        model.mode(),
        opts.samples,
        &mut rng::substream(opts.seed, stream::RENDERING),
    )
}

/// Render color, depth and variance maps into `out` (`color.png`,
/// `depth.pfm`, `color_var.pfm`, `depth_var.pfm`).
pub fn cmd_render(
    checkpoint: &Path,
    camera: &CameraSpec,
    opts: &RenderOptions,
    out: &Path,
) -> Result<PredictionMaps> {
    opts.validate()?;
    let model = FieldModel::load(checkpoint)?;
    let cam = camera.camera()?;
    let latents = render_latents(&model, opts);
    let preds = render_view(
        &model,
        &cam,
        camera.near,
        camera.far,
        camera.background,
        &latents,
        opts,
    )?;
    let maps = PredictionMaps::from_predictions(cam.width, cam.height, &preds);
    create_dir(out)?;
    maps.write(out, "")?;
    Ok(maps)
}

/// Render every test view and compute the metric suite against `ds`.
/// Also returns the per-view predictions, in test-split order.
pub fn evaluate_model(
    model: &FieldModel,
    ds: &RayDataset,
    opts: &RenderOptions,
    bandwidth: f64,
) -> Result<(Evaluation, Vec<Vec<PixelPrediction>>)> {
    opts.validate()?;
    if ds.test.is_empty() {
        return Err(Error::invalid("dataset has an empty test split"));
    }
    let latents = render_latents(model, opts);
    let mut preds = Vec::with_capacity(ds.test.len());
    let mut names = Vec::with_capacity(ds.test.len());
    for &i in &ds.test {
        let v = &ds.views[i];
        preds.push(render_view(
            model,
            &v.camera,
            ds.scene.near,
            ds.scene.far,
            ds.scene.background,
            &latents,
            opts,
        )?);
        names.push(format!("view_{i:03}"));
    }
    let views: Vec<EvalView> = ds
        .test
        .iter()
        .zip(&preds)
        .zip(&names)
        .map(|((&i, p), name)| {
            let v = &ds.views[i];
            EvalView {
                name,
                gt_color: &v.image,
                gt_depth: &v.depth,
                gt_opacity: &v.opacity,
                predictions: p,
                near: ds.scene.near,
            }
        })
        .collect();
    let eval = evaluate_views(&views, bandwidth)?;
    Ok((eval, preds))
}

/// Evaluate a checkpoint on the test split of the dataset in `dataset`,
/// writing `report.json`, sparsification CSVs and per-view error and
/// uncertainty heat maps into `out`.
pub fn cmd_evaluate(
    checkpoint: &Path,
    dataset: &Path,
    opts: &RenderOptions,
    bandwidth: f64,
    notes: Vec<String>,
    out: &Path,
) -> Result<Evaluation> {
    let model = FieldModel::load(checkpoint)?;
    let ds = RayDataset::load(dataset)?;
    let (mut eval, preds) = evaluate_model(&model, &ds, opts, bandwidth)?;
    eval.report.notes = notes;
    create_dir(out)?;
    let report = out.join(REPORT);
    let text = serde_json::to_string_pretty(&eval.report).map_err(|source| Error::Json {
        path: report.clone(),
        source,
    })?;
    fs::write(&report, text + "\n").map_err(|e| Error::io(&report, e))?;
    write_curve_csv(&out.join("sparsification_color.csv"), &eval.curves.color)?;
    if let Some(c) = &eval.curves.depth_rmse {
        write_curve_csv(&out.join("sparsification_depth_rmse.csv"), c)?;
    }
    if let Some(c) = &eval.curves.depth_mae {
        write_curve_csv(&out.join("sparsification_depth_mae.csv"), c)?;
    }
    for (&i, preds) in ds.test.iter().zip(&preds) {
        let v = &ds.views[i];
        let (w, h) = (v.camera.width, v.camera.height);
        let mut err = Raster::new(w, h, 1);
        let mut unc = Raster::new(w, h, 1);
        for (j, p) in preds.iter().enumerate() {
            let gt = v.image.pixel(j);
            err.data[j] = (0..3).map(|c| (p.color_mean[c] - gt[c]).abs()).sum::<f64>() / 3.0;
            unc.data[j] = p.color_var_mean();
        }
        write_heatmap(&out.join(format!("view_{i:03}_error.png")), &err)?;
        write_heatmap(&out.join(format!("view_{i:03}_uncertainty.png")), &unc)?;
    }
    Ok(eval)
}

/// Standard-normal draw for the global latent, keyed by `seed`.
pub fn latent_from_seed(model: &FieldModel, seed: u64) -> Vec<f64> {
    model
        .prior()
        .sample(1, &mut rng::substream(seed, stream::RENDERING))
        .remove(0)
}

/// Render one frame with a fixed global latent `z` (single sample).
pub fn render_with_latent(
    model: &FieldModel,
    camera: &CameraSpec,
    z: &[f64],
    opts: &RenderOptions,
) -> Result<PredictionMaps> {
    if model.mode() != ModelMode::Cfnerf {
        return Err(Error::invalid(
            "latent rendering needs a model with a global latent",
        ));
    }
    let cam = camera.camera()?;
    let latents = Latents::Shared(vec![model.prior().standardize(z)]);
    let preds = render_view(
        model,
        &cam,
        camera.near,
        camera.far,
        camera.background,
        &latents,
        opts,
    )?;
    Ok(PredictionMaps::from_predictions(
        cam.width, cam.height, &preds,
    ))
}

/// Frames along the segment between the latents of `seeds.0` and
/// `seeds.1`: frame `i` uses `lambda = i / (frames - 1)` on
/// `lambda * z1 + (1 - lambda) * z2`. Writes `frame_NNN_color.png` and
/// `frame_NNN_depth.pfm`.
pub fn cmd_interpolate(
    checkpoint: &Path,
    camera: &CameraSpec,
    seeds: (u64, u64),
    frames: usize,
    opts: &RenderOptions,
    out: &Path,
) -> Result<Vec<PredictionMaps>> {
    if frames < 2 {
        return Err(Error::Config(vec![format!(
            "interpolation needs at least 2 frames, got {frames}"
        )]));
    }
    opts.validate()?;
    let model = FieldModel::load(checkpoint)?;
    let z1 = latent_from_seed(&model, seeds.0);
    let z2 = latent_from_seed(&model, seeds.1);
    create_dir(out)?;
    let mut all = Vec::with_capacity(frames);
    for i in 0..frames {
        let lambda = i as f64 / (frames - 1) as f64;
        let z = latent_interpolate(&z1, &z2, lambda)?;
        let maps = render_with_latent(&model, camera, &z, opts)?;
        crate::raster::write_png(&out.join(format!("frame_{i:03}_color.png")), &maps.color)?;
        crate::raster::write_pfm(&out.join(format!("frame_{i:03}_depth.pfm")), &maps.depth)?;
        all.push(maps);
    }
    Ok(all)
}

/// Gradient check of the full training loss on a small batch: 2 rays from
/// the centre of the first training view, 8 nodes, K = 2, M = 4.
pub fn cmd_gradcheck(
    cfg: &RunConfig,
    opts: GradCheckOptions,
) -> Result<(GradCheckReport, LossBreakdown)> {
    cfg.validate()?;
    let scene = cfg.scene()?;
    let model = init_model(cfg)?;
    let cam = cfg.rig().camera(0.0, cfg.data.width, cfg.data.height)?;
    let mut r = rng::substream(cfg.seed, stream::TRAINING);
    let (cx, cy) = (cam.width / 2, cam.height / 2);
    let mut rays = Vec::new();
    let mut nodes = Vec::new();
    let mut colors = Vec::new();
    let mut depths = Vec::new();
    for (u, v) in [(cx, cy), (cx.saturating_sub(cam.width / 5), cy)] {
        let ray = cam.pixel_ray(u, v, scene.near, scene.far)?;
        let px = scene.oracle_render(&ray, cfg.data.n_dense)?;
        nodes.push(stratified_samples(&ray, 8, &mut r)?);
        rays.push(ray);
        colors.push(px.color);
        depths.push(px.depth);
    }
    let batch = TrainBatch {
        rays: RayBatch::new(rays, nodes, vec![0, 1])?,
        colors,
        depths: Some(depths),
        latents: Latents::draw(model.mode(), 2, &mut r),
        background: scene.background,
    };
    let draws = EntropyDraws::sample(
        &scene.bounds,
        4,
        &mut rng::substream(cfg.seed, stream::ENTROPY),
    )?;
    let loss_cfg = LossConfig {
        entropy_weight: cfg.train.entropy_weight,
        depth_weight: cfg.train.depth_weight,
        bandwidth: cfg.train.bandwidth,
    };
    let (breakdown, _) = crate::objective::batch_loss(&model, &batch, &draws, &loss_cfg)?;
    let report = grad_check(
        model.params(),
        |g, store| Ok(loss_graph(g, &model, store, &batch, &draws, &loss_cfg)?.total),
        opts,
    )?;
    Ok((report, breakdown))
}

/// Notes recorded in every evaluation report of a run.
pub fn run_notes(cfg: &RunConfig) -> Vec<String> {
    vec![
        format!(
            "desk-scale training: {} steps (full scale: {FULL_SCALE_STEPS})",
            cfg.steps
        ),
        format!(
            "model mode: {}",
            match cfg.model.mode {
                ModelMode::Cfnerf => "cfnerf",
                ModelMode::SnerfBaseline => "snerf-baseline",
            }
        ),
        format!(
            "evaluation bandwidth reuses the training bandwidth {}",
            cfg.train.bandwidth
        ),
    ]
}
