//! The two optimization stages: static initialization of the canonical
//! cloud, then joint training of the cloud, hash tables, deformation MLP and
//! audio smoother.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use talksplat_core::audio::SmootherShape;
use talksplat_core::audio::SmootherWeights;
use talksplat_core::deform::{DeformField, HIDDEN, POSE_FREQUENCIES};
use talksplat_core::densify::{densify_and_prune, DensifyStats};
use talksplat_core::loss::{total_loss, ImageDims, LossConfig, LossTerms, Target};
use talksplat_core::math;
use talksplat_core::metrics::psnr;
use talksplat_core::model::{Condition, DeformableModel, FrameForward, ModelGrads};
use talksplat_core::optim::Adam;
use talksplat_core::raster::Pose;
use talksplat_core::rng::{self, label};
use talksplat_core::sh;
use talksplat_core::{Gaussian, GaussianCloud};

use crate::checkpoint::{Checkpoint, CheckpointMeta, ConditionKind, Precision};
use crate::config::TrainConfig;
use crate::dataset::{Dataset, Frame, Region, Split};
use crate::error::{Error, Result};

/// Header of `metrics.csv`.
pub const METRICS_HEADER: [&str; 8] = ["iteration", "color", "mask", "perceptual", "lips", "total", "psnr", "gaussians"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub terms: LossTerms,
    /// PSNR of the sampled training frame.
    pub psnr: f64,
    pub gaussians: usize,
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
}

/// Where a stage writes its outputs; `None` keeps everything in memory.
#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub dir: Option<PathBuf>,
}

/// `n` Gaussians uniform in the initialization cube, identity rotation,
/// mid-gray color and low opacity.
pub fn random_cloud(cfg: &TrainConfig) -> Result<GaussianCloud> {
    let init = &cfg.init;
    let mut r = rng::fork(cfg.seed, label::INIT);
    let mut cloud = GaussianCloud::new(init.sh_degree)?;
    let half = init.cube_side / 2.0;
    let spacing = init.cube_side / (init.gaussians as f64).cbrt();
    let scale_raw = (init.scale_fraction * spacing).ln();
    let stride = sh::coeff_count(init.sh_degree) * 3;
    for _ in 0..init.gaussians {
        let mean = [0; 3].map(|_| r.random_range(-half..half));
        let mut coeffs = vec![0.0; stride];
        for c in coeffs.iter_mut().take(3) {
            *c = r.random_range(-0.5..0.5);
        }
        cloud.push(Gaussian { mean, scale_raw: [scale_raw; 3], rotation: [1.0, 0.0, 0.0, 0.0], sh: coeffs, opacity_raw: math::logit(init.opacity) })?;
    }
    Ok(cloud)
}

/// Learning-rate groups in registration order.
fn build_optimizer(model: &DeformableModel, cfg: &TrainConfig) -> Adam {
    let lr = &cfg.lr;
    let c = &model.cloud;
    let mut adam = Adam::default();
    adam.add_group("means", lr.position * cfg.extent(), c.len() * 3);
    adam.add_group("scales", lr.scale, c.len() * 3);
    adam.add_group("rotations", lr.rotation, c.len() * 4);
    adam.add_group("sh", lr.sh, c.sh.len());
    adam.add_group("opacities", lr.opacity, c.len());
    if let Some(f) = &model.field {
        if let Some(e) = &f.encoder {
            adam.add_group("tables", lr.hash, e.tables.len());
        }
        adam.add_group("mlp", lr.mlp, f.mlp.params.len());
    }
    if let Some(s) = &model.smoother {
        adam.add_group("smoother", lr.smoother, s.params.len());
    }
    adam
}

fn apply_updates(adam: &mut Adam, model: &mut DeformableModel, g: &ModelGrads) -> Result<()> {
    adam.begin_step();
    let c = &mut model.cloud;
    adam.update(0, c.means.as_flattened_mut(), g.cloud.means.as_flattened())?;
    adam.update(1, c.scales_raw.as_flattened_mut(), g.cloud.scales_raw.as_flattened())?;
    adam.update(2, c.rotations.as_flattened_mut(), g.cloud.rotations.as_flattened())?;
    adam.update(3, &mut c.sh, &g.cloud.sh)?;
    adam.update(4, &mut c.opacities_raw, &g.cloud.opacities_raw)?;
    let mut next = 5;
    if let Some(f) = &mut model.field {
        if let Some(e) = &mut f.encoder {
            adam.update(next, &mut e.tables, &g.tables)?;
            next += 1;
        }
        adam.update(next, &mut f.mlp.params, &g.mlp)?;
        next += 1;
    }
    if let Some(s) = &mut model.smoother {
        adam.update(next, &mut s.params, &g.smoother)?;
    }
    Ok(())
}

fn remap_cloud_groups(adam: &mut Adam, row_map: &[Option<usize>], sh_stride: usize) -> Result<()> {
    for (g, width) in [(0, 3), (1, 3), (2, 4), (3, sh_stride), (4, 1)] {
        adam.remap_rows(g, row_map, width)?;
    }
    Ok(())
}

/// Frames decoded once per stage.
pub struct FrameCache {
    frames: Vec<Option<Frame>>,
}

impl FrameCache {
    pub fn load(ds: &Dataset, indices: &[usize]) -> Result<Self> {
        let mut frames = vec![None; ds.len()];
        for &i in indices {
            frames[i] = Some(ds.load_frame(i)?);
        }
        Ok(Self { frames })
    }

    pub fn get(&self, i: usize) -> &Frame {
        self.frames[i].as_ref().expect("frame loaded")
    }
}

/// The driving condition of frame `i` for a model of kind `kind`.
pub fn condition<'a>(ds: &'a Dataset, kind: ConditionKind, i: usize, pose: &'a Pose) -> Condition<'a> {
    match kind {
        ConditionKind::Static => Condition::Static,
        ConditionKind::Audio => Condition::Audio { track: &ds.audio, frame: i, eye: ds.manifest.frames[i].eye },
        ConditionKind::Pose => Condition::Pose(pose),
    }
}

/// Forward render of dataset frame `i`.
pub fn render_frame(model: &DeformableModel, kind: ConditionKind, ds: &Dataset, i: usize, record: bool) -> Result<FrameForward> {
    let pose = ds.pose(i);
    let cond = condition(ds, kind, i, &pose);
    Ok(model.forward(&cond, &ds.camera(i), &ds.manifest.background, record)?)
}

fn meta_for(ds: &Dataset, cfg: &TrainConfig, kind: ConditionKind) -> CheckpointMeta {
    let m = &ds.manifest;
    CheckpointMeta {
        region: m.region,
        condition: kind,
        iteration: 0,
        seed: cfg.seed,
        width: m.width,
        height: m.height,
        intrinsics: m.intrinsics,
        background: m.background,
        torso_view: m.torso_view,
        sh_degree: 0,
        encoder: None,
        mlp_dims: None,
        smoother: None,
        optimizer: None,
    }
}

struct Logger {
    file: Option<(PathBuf, csv::Writer<File>)>,
}

impl Logger {
    fn new(dir: Option<&Path>) -> Result<Self> {
        let Some(dir) = dir else { return Ok(Self { file: None }) };
        let path = dir.join("metrics.csv");
        let exists = path.exists();
        let f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(f);
        if !exists {
            w.write_record(METRICS_HEADER).map_err(|e| Error::format(&path, e.to_string()))?;
        }
        Ok(Self { file: Some((path, w)) })
    }

    fn row(&mut self, row: &LogRow) -> Result<()> {
        if let Some((path, w)) = &mut self.file {
            let t = &row.terms;
            let rec = [
                row.iteration.to_string(),
                t.color.to_string(),
                t.mask.to_string(),
                t.perceptual.to_string(),
                t.lips.to_string(),
                t.total.to_string(),
                row.psnr.to_string(),
                row.gaussians.to_string(),
            ];
            w.write_record(&rec).map_err(|e| Error::format(path, e.to_string()))?;
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Writes the resolved configuration next to the outputs and logs it.
pub fn echo_config(cfg: &TrainConfig, dir: Option<&Path>) -> Result<()> {
    let text = cfg.to_toml();
    log::info!("resolved configuration:\n{text}");
    if let Some(dir) = dir {
        let path = dir.join("config.toml");
        fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn all_finite(g: &ModelGrads) -> bool {
    let c = &g.cloud;
    c.means.as_flattened().iter().chain(c.scales_raw.as_flattened()).chain(c.rotations.as_flattened()).chain(&c.sh).chain(&c.opacities_raw).chain(&g.tables).chain(&g.mlp).chain(&g.smoother).all(|v| v.is_finite())
}

/// The shared optimization loop.
fn optimize(ds: &Dataset, cfg: &TrainConfig, mut model: DeformableModel, kind: ConditionKind, iterations: usize, out: &Outputs) -> Result<StageResult> {
    let train = ds.indices(Some(Split::Train));
    if train.is_empty() {
        return Err(Error::Config("dataset has no training frames".into()));
    }
    if let Some(dir) = &out.dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    echo_config(cfg, out.dir.as_deref())?;
    let loss_cfg: LossConfig = cfg.loss_config()?;
    let densify_cfg = cfg.densify_config();
    let frames = FrameCache::load(ds, &train)?;
    let dims = ImageDims::rgb(ds.manifest.width, ds.manifest.height);
    let mut sampler = rng::fork(cfg.seed, label::SAMPLING);
    let mut densify_rng = rng::fork(cfg.seed, label::DENSIFY);
    let mut adam = build_optimizer(&model, cfg);
    let mut stats = DensifyStats::new(model.cloud.len());
    let mut logger = Logger::new(out.dir.as_deref())?;
    let mut log = Vec::new();
    let meta = meta_for(ds, cfg, kind);

    for it in 1..=iterations {
        let i = train[sampler.random_range(0..train.len())];
        let frame = frames.get(i);
        let fwd = render_frame(&model, kind, ds, i, true)?;
        let target = Target { rgb: &frame.rgb, mask: Some(&frame.mask), lips: &ds.manifest.frames[i].lips };
        let eval = total_loss(&loss_cfg, &fwd.output.rgb, &fwd.output.alpha, &target, dims)?;
        if !eval.terms.total.is_finite() {
            return Err(Error::Diverged { iteration: it, detail: format!("loss terms {:?} on frame {i}", eval.terms) });
        }
        let grads = model.backward(&fwd, &eval.d_rgb, Some(&eval.d_alpha))?;
        if !all_finite(&grads) {
            return Err(Error::Diverged { iteration: it, detail: format!("non-finite gradient on frame {i} (loss {:?})", eval.terms) });
        }
        apply_updates(&mut adam, &mut model, &grads)?;

        let d = &cfg.densify;
        if d.enabled && it <= d.stop {
            stats.accumulate(&grads.screen_grad_norm, &grads.cloud.means, &grads.visible)?;
            if it >= d.start && it % d.interval == 0 {
                let outcome = densify_and_prune(&model.cloud, &stats, &densify_cfg, &mut densify_rng)?;
                if outcome.cloud.is_empty() {
                    return Err(Error::Diverged { iteration: it, detail: "density control removed every Gaussian".into() });
                }
                remap_cloud_groups(&mut adam, &outcome.row_map, model.cloud.sh_stride())?;
                log::debug!("iteration {it}: pruned {} cloned {} split {} capped {} -> {} Gaussians", outcome.pruned, outcome.cloned, outcome.split, outcome.capped, outcome.cloud.len());
                model.cloud = outcome.cloud;
                stats = DensifyStats::new(model.cloud.len());
            }
        }

        if it % cfg.log_every.max(1) == 0 || it == iterations {
            let row = LogRow { iteration: it, terms: eval.terms, psnr: psnr(&fwd.output.rgb, &frame.rgb)?, gaussians: model.cloud.len() };
            log::info!("iteration {it}: loss {:.6} psnr {:.2} gaussians {}", row.terms.total, row.psnr, row.gaussians);
            logger.row(&row)?;
            log.push(row);
        }
        if let Some(dir) = &out.dir {
            if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it != iterations {
                let ck = Checkpoint::new(CheckpointMeta { iteration: it, ..meta.clone() }, model.clone(), Some(adam.clone()));
                ck.save(&dir.join(format!("checkpoint_{it}.gsck")), Precision::F64)?;
            }
        }
    }
    let checkpoint = Checkpoint::new(CheckpointMeta { iteration: iterations, ..meta }, model, Some(adam));
    if let Some(dir) = &out.dir {
        checkpoint.save(&dir.join("checkpoint.gsck"), Precision::F64)?;
    }
    Ok(StageResult { checkpoint, log })
}

/// Optimizes a randomly initialized static cloud against the dataset's
/// training frames.
pub fn static_init_stage(ds: &Dataset, cfg: &TrainConfig, out: &Outputs) -> Result<StageResult> {
    cfg.validate()?;
    let model = DeformableModel::static_model(random_cloud(cfg)?);
    optimize(ds, cfg, model, ConditionKind::Static, cfg.static_iterations, out)
}

/// Condition kind used for a dataset region.
pub fn region_condition(region: Region) -> ConditionKind {
    match region {
        Region::Head => ConditionKind::Audio,
        Region::Torso => ConditionKind::Pose,
    }
}

/// A fresh deformation field (and smoother for the head) on top of `cloud`.
pub fn deformable_model(ds: &Dataset, cfg: &TrainConfig, cloud: GaussianCloud) -> Result<DeformableModel> {
    let m = &cfg.model;
    let (smoother, condition_dim) = match ds.manifest.region {
        Region::Head => {
            let shape = SmootherShape { input_dim: ds.audio.dim(), channels: m.audio_channels, output_dim: m.audio_dim, window: m.audio_window };
            let s = SmootherWeights::new(shape, &mut rng::fork(cfg.seed, label::SMOOTHER))?;
            let d = s.output_dim() + 1;
            (Some(s), d)
        }
        Region::Torso => (None, 7 * 2 * POSE_FREQUENCIES),
    };
    let field = DeformField::new(cfg.encoder_config(), condition_dim, &HIDDEN, &mut rng::fork(cfg.seed, label::MLP))?;
    Ok(DeformableModel { cloud, field: Some(field), smoother })
}

/// Joint optimization of the cloud and the deformation field. Starts from
/// `init` (a static-stage checkpoint) unless the configuration skips static
/// initialization, in which case a fresh random cloud is used.
pub fn deform_train_stage(ds: &Dataset, init: Option<&Checkpoint>, cfg: &TrainConfig, out: &Outputs) -> Result<StageResult> {
    cfg.validate()?;
    let cloud = match (init, cfg.skip_static_init) {
        (_, true) => random_cloud(cfg)?,
        (Some(ck), false) => {
            if ck.meta.region != ds.manifest.region {
                return Err(Error::Config(format!("initial checkpoint is for region {:?}, dataset is {:?}", ck.meta.region, ds.manifest.region)));
            }
            ck.model.cloud.clone()
        }
        (None, false) => return Err(Error::Config("deformation training needs a static checkpoint (or skip_static_init = true)".into())),
    };
    let model = deformable_model(ds, cfg, cloud)?;
    optimize(ds, cfg, model, region_condition(ds.manifest.region), cfg.deform_iterations, out)
}

/// PSNR of every frame in `indices`.
pub fn evaluate_psnr(model: &DeformableModel, kind: ConditionKind, ds: &Dataset, indices: &[usize]) -> Result<Vec<f64>> {
    indices
        .iter()
        .map(|&i| {
            let out = render_frame(model, kind, ds, i, false)?;
            let gt = ds.load_frame(i)?;
            Ok(psnr(&out.output.rgb, &gt.rgb)?)
        })
        .collect()
}

/// Mean learned displacement of every frame in `indices`.
pub fn displacement_series(model: &DeformableModel, kind: ConditionKind, ds: &Dataset, indices: &[usize]) -> Result<Vec<[f64; 3]>> {
    indices
        .iter()
        .map(|&i| {
            let pose = ds.pose(i);
            let cond = condition(ds, kind, i, &pose);
            let cloud = model.deform(&cond)?;
            let n = cloud.len() as f64;
            let mut d = [0.0; 3];
            for (a, b) in cloud.means.iter().zip(&model.cloud.means) {
                for k in 0..3 {
                    d[k] += (a[k] - b[k]) / n;
                }
            }
            Ok(d)
        })
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
