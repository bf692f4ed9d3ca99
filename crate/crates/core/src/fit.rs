//! Per-scene fitting: alternating satellite / panorama / perspective
//! passes over ray batches, the gravity regularizer each iteration, and
//! bias-corrected Adam over all parameter groups.
//!
//! Each iteration's randomness (view choice, pixel batch, stratified
//! offsets, gravity pairs) is drawn up front into an [`IterationPlan`], so
//! the loss value and its gradients are plain deterministic functions of
//! the model. Evaluation is chunked with a fixed split and reduced in
//! chunk order, making runs reproducible regardless of thread count.

use crate::autodiff::{
    adam_step, gravity_loss_with_grads, march_backward, march_ray_cached, AdamHyper, AdamState,
    Gradients, MarchScratch, PixelAdjoint,
};
use crate::cameras::{
    pano_pixel_for_direction, pixel_ray, sample_training_view, CameraSpec, Pose, Ray,
    ViewSamplerConfig,
};
use crate::error::{Error, Result};
use crate::field::{Decoder, SceneExtent, SceneModel, SkyMap, TriPlaneField};
use crate::img::ScalarImage;
use crate::losses::{
    depth_loss, gravity_loss_from_pairs, photometric_loss, sample_gravity_pairs, sky_masked_l1,
    sky_opacity_bce, total_loss, GravityConfig, GravityPair, LossReport, LossTerms, LossWeights,
};
use crate::math::Vec3;
use crate::renderer::{hash_u64, MarchConfig, PixelRender};
use crate::supervision::SupervisionSet;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub iterations: usize,
    pub adam: AdamHyper,
    /// Exponential learning-rate decay target; the rate interpolates from
    /// `adam.lr` to this value over the run when set.
    pub lr_end: Option<f64>,
    pub rays_per_batch: usize,
    pub weights: LossWeights,
    pub gravity: GravityConfig,
    pub march: MarchConfig,
    pub seed: u64,
    pub extent: SceneExtent,
    pub res: usize,
    pub channels: usize,
    pub hidden: usize,
    pub d_w: usize,
    pub sky_height: usize,
    pub sky_width: usize,
    /// Uniform noise amplitude applied to plane init (0 = zero init).
    pub init_noise: f64,
    /// Photometric weight factor for perspective crops relative to
    /// panoramas.
    pub perspective_weight: f64,
    /// Perspective crop sampler; None disables perspective supervision.
    pub perspective: Option<ViewSamplerConfig>,
    /// Every k-th iteration runs the satellite pass (photometric + depth).
    pub sat_every: usize,
    /// Cap on rays per satellite pass; the view is rendered on a strided
    /// lattice when the full image exceeds it.
    pub sat_max_rays: usize,
    /// Snapshot cadence for divergence recovery.
    pub snapshot_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 4000,
            adam: AdamHyper::default(),
            lr_end: None,
            rays_per_batch: 1024,
            weights: LossWeights::default(),
            gravity: GravityConfig::default(),
            march: MarchConfig {
                jitter: true,
                ..Default::default()
            },
            seed: 0,
            extent: SceneExtent {
                l_base: 50.0,
                tokens_per_side: 16,
                pad_tokens: 2,
            },
            res: 64,
            channels: 8,
            hidden: 32,
            d_w: 8,
            sky_height: 128,
            sky_width: 128,
            init_noise: 0.0,
            perspective_weight: 0.5,
            perspective: Some(ViewSamplerConfig::default()),
            sat_every: 4,
            sat_max_rays: 8192,
            snapshot_every: 500,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.adam.lr
            )));
        }
        if self.rays_per_batch == 0 {
            return Err(Error::InvalidConfig("rays_per_batch must be >= 1".into()));
        }
        self.weights.validate()?;
        self.gravity.validate()?;
        self.march.validate()?;
        Ok(())
    }

    /// Fresh model with seeded decoder init and the configured sky/codes.
    pub fn init_model(&self, n_codes: usize, rng: &mut impl Rng) -> SceneModel {
        let decoder = Decoder::init(self.channels, self.hidden, self.d_w, rng);
        let mut field = TriPlaneField::new(self.res, self.channels, decoder, self.extent);
        if self.init_noise > 0.0 {
            for plane in field.planes.iter_mut() {
                for v in plane.iter_mut() {
                    *v = rng.gen_range(-self.init_noise..self.init_noise);
                }
            }
        }
        SceneModel {
            field,
            sky: SkyMap::new(self.sky_height, self.sky_width, [0.5; 3]),
            codes: vec![vec![0.0; self.d_w]; n_codes],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PassKind {
    Panorama,
    Perspective,
    Satellite,
}

impl PassKind {
    pub fn label(self) -> &'static str {
        match self {
            PassKind::Panorama => "pano",
            PassKind::Perspective => "persp",
            PassKind::Satellite => "sat",
        }
    }
}

/// One ray of a training batch.
#[derive(Clone, Copy, Debug)]
pub struct RayJob {
    pub origin: Vec3,
    pub dir: Vec3,
    pub code: usize,
    pub jitter: Option<u64>,
}

/// Everything random about one iteration, drawn up front.
pub struct IterationPlan {
    pub kind: PassKind,
    pub jobs: Vec<RayJob>,
    pub gt_rgb: Vec<[f64; 3]>,
    /// Photometric validity (perspective crops may leave the panorama's
    /// angular coverage).
    pub gt_valid: Vec<bool>,
    /// Per-ray sky label for the BCE/sky-L1 terms (panorama passes).
    pub sky_mask: Option<Vec<bool>>,
    /// Satellite passes: lattice dims plus the subsampled depth label.
    pub lattice: Option<(usize, usize, ScalarImage)>,
    /// Photometric weight factor for this pass (perspective halves it).
    pub rgb_factor: f64,
    pub gravity_pairs: Vec<GravityPair>,
}

fn per_ray_seed(base: u64, index: usize) -> u64 {
    hash_u64(base ^ (index as u64).wrapping_mul(0x2545f4914f6cdd1d))
}

/// Draw the plan for iteration `iter`. Consumes main-thread randomness
/// only; the result makes loss and gradients deterministic in the model.
pub fn plan_iteration(
    views: &SupervisionSet,
    cfg: &FitConfig,
    iter: usize,
    rng: &mut ChaCha8Rng,
) -> IterationPlan {
    let phase = iter % cfg.sat_every.max(1);
    let use_persp = cfg.perspective.is_some();
    let kind = if phase == cfg.sat_every.max(1) - 1 && !views.satellites.is_empty() {
        PassKind::Satellite
    } else if use_persp && phase % 2 == 1 {
        PassKind::Perspective
    } else {
        PassKind::Panorama
    };
    let jitter_base = hash_u64(cfg.seed ^ (iter as u64).wrapping_mul(0x9e3779b97f4a7c15));
    let jitter = |i: usize| {
        if cfg.march.jitter {
            Some(per_ray_seed(jitter_base, i))
        } else {
            None
        }
    };

    let mut plan = IterationPlan {
        kind,
        jobs: Vec::new(),
        gt_rgb: Vec::new(),
        gt_valid: Vec::new(),
        sky_mask: None,
        lattice: None,
        rgb_factor: 1.0,
        gravity_pairs: sample_gravity_pairs(cfg.extent.half(), &cfg.gravity, rng),
    };

    match kind {
        PassKind::Panorama => {
            let view = &views.panoramas[rng.gen_range(0..views.panoramas.len())];
            let (w, h) = (view.image.width, view.image.height);
            let mut sky = Vec::with_capacity(cfg.rays_per_batch);
            for i in 0..cfg.rays_per_batch {
                let px = rng.gen_range(0..w * h);
                let ray = pixel_ray(&view.camera, px % w, px / w);
                plan.jobs.push(RayJob {
                    origin: ray.origin,
                    dir: ray.dir,
                    code: view.code,
                    jitter: jitter(i),
                });
                plan.gt_rgb.push(view.image.data[px]);
                plan.gt_valid.push(true);
                sky.push(view.sky_mask.as_ref().map_or(false, |m| m.data[px]));
            }
            if views.panoramas[0].sky_mask.is_some() {
                plan.sky_mask = Some(sky);
            }
        }
        PassKind::Perspective => {
            let view = &views.panoramas[rng.gen_range(0..views.panoramas.len())];
            let sampler = cfg.perspective.as_ref().expect("perspective pass");
            let sampled = sample_training_view(sampler, rng);
            let CameraSpec::Panorama {
                pose: pano_pose,
                yaw_span,
                pitch_span,
                ..
            } = &view.camera
            else {
                unreachable!("panorama views carry panorama cameras")
            };
            let crop_world = CameraSpec::Perspective {
                pose: Pose::new(
                    pano_pose.position,
                    pano_pose.yaw + sampled.yaw,
                    sampled.pitch,
                    0.0,
                ),
                fov_deg: sampled.fov_deg,
                width: sampler.width,
                height: sampler.height,
            };
            // Local crop camera expressed in the panorama frame; its pixel
            // rays index the panorama image for ground truth.
            let crop_local = CameraSpec::Perspective {
                pose: Pose::new(Vec3::ZERO, sampled.yaw, sampled.pitch, 0.0),
                fov_deg: sampled.fov_deg,
                width: sampler.width,
                height: sampler.height,
            };
            let identity = Pose::level(Vec3::ZERO, 0.0);
            let full_wrap = (*yaw_span - std::f64::consts::TAU).abs() < 1e-12;
            plan.rgb_factor = cfg.perspective_weight;
            for i in 0..cfg.rays_per_batch {
                let px = rng.gen_range(0..sampler.width * sampler.height);
                let (x, y) = (px % sampler.width, px / sampler.width);
                let world = pixel_ray(&crop_world, x, y);
                let local_dir = pixel_ray(&crop_local, x, y).dir;
                let (u, v) = pano_pixel_for_direction(
                    &identity,
                    *yaw_span,
                    *pitch_span,
                    view.image.width,
                    view.image.height,
                    local_dir,
                );
                let pitch_dir = local_dir.z.clamp(-1.0, 1.0).asin();
                let mut ok = pitch_dir.abs() <= pitch_span / 2.0 + 1e-12;
                if !full_wrap {
                    let yaw_dir = local_dir.x.atan2(local_dir.y);
                    ok &= yaw_dir.abs() <= yaw_span / 2.0 + 1e-12;
                }
                plan.jobs.push(RayJob {
                    origin: world.origin,
                    dir: world.dir,
                    code: view.code,
                    jitter: jitter(i),
                });
                plan.gt_rgb.push(if ok {
                    view.image.sample_bilinear(u - 0.5, v - 0.5, full_wrap)
                } else {
                    [0.0; 3]
                });
                plan.gt_valid.push(ok);
            }
        }
        PassKind::Satellite => {
            let view = &views.satellites[rng.gen_range(0..views.satellites.len())];
            let (w, h) = (view.image.width, view.image.height);
            let mut stride = 1usize;
            while (w / stride) * (h / stride) > cfg.sat_max_rays {
                stride += 1;
            }
            let (lw, lh) = (w / stride, h / stride);
            let mut label = ScalarImage::new(lw, lh);
            for (j, ly) in (0..lh).enumerate() {
                for lx in 0..lw {
                    let (x, y) = (lx * stride, ly * stride);
                    let ray = pixel_ray(&view.camera, x, y);
                    let i = plan.jobs.len();
                    plan.jobs.push(RayJob {
                        origin: ray.origin,
                        dir: ray.dir,
                        code: view.code,
                        jitter: jitter(i),
                    });
                    plan.gt_rgb.push(view.image.get(x, y));
                    plan.gt_valid.push(true);
                    if let Some(dl) = &view.depth_label {
                        let src = dl.idx(x, y);
                        let dst = j * lw + lx;
                        label.values[dst] = dl.values[src];
                        label.valid[dst] = dl.valid[src];
                    }
                }
            }
            if view.depth_label.is_some() {
                plan.lattice = Some((lw, lh, label));
            }
        }
    }
    plan
}

/// Fixed worker count bounds the per-chunk gradient buffers; the chunk
/// split depends only on the job count, keeping reductions deterministic.
const MAX_CHUNKS: usize = 4;

pub struct ChunkWorker {
    grads: Gradients,
    scratches: Vec<MarchScratch>,
    dh: Vec<f64>,
}

fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    if n == 0 {
        return Vec::new();
    }
    let chunks = MAX_CHUNKS.min(n);
    let size = n.div_ceil(chunks);
    (0..chunks)
        .map(|c| (c * size, ((c + 1) * size).min(n)))
        .filter(|(a, b)| a < b)
        .collect()
}

fn forward_batch(model: &SceneModel, march: &MarchConfig, jobs: &[RayJob]) -> Vec<PixelRender> {
    let ranges = chunk_ranges(jobs.len());
    let chunks: Vec<Vec<PixelRender>> = ranges
        .par_iter()
        .map(|&(a, b)| {
            let mut scratch = MarchScratch::default();
            jobs[a..b]
                .iter()
                .map(|job| {
                    march_ray_cached(
                        &model.field,
                        &model.sky,
                        &model.codes[job.code],
                        Ray {
                            origin: job.origin,
                            dir: job.dir,
                        },
                        march,
                        job.jitter,
                        &mut scratch,
                    )
                })
                .collect()
        })
        .collect();
    chunks.into_concat()
}

trait Concat<T> {
    fn into_concat(self) -> Vec<T>;
}

impl<T> Concat<T> for Vec<Vec<T>> {
    fn into_concat(self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.iter().map(Vec::len).sum());
        for chunk in self {
            out.extend(chunk);
        }
        out
    }
}

/// Forward march of a batch with per-ray caches retained inside the
/// workers, so the backward pass can run without recomputing.
fn forward_batch_cached(
    model: &SceneModel,
    march: &MarchConfig,
    jobs: &[RayJob],
    workers: &mut Vec<ChunkWorker>,
) -> Vec<PixelRender> {
    let ranges = chunk_ranges(jobs.len());
    while workers.len() < ranges.len() {
        workers.push(ChunkWorker {
            grads: Gradients::zeros_like(model),
            scratches: Vec::new(),
            dh: Vec::new(),
        });
    }
    let used = ranges.len();
    let chunks: Vec<Vec<PixelRender>> = workers[..used]
        .par_iter_mut()
        .zip(ranges.par_iter())
        .map(|(worker, &(a, b))| {
            if worker.scratches.len() < b - a {
                worker.scratches.resize_with(b - a, MarchScratch::default);
            }
            jobs[a..b]
                .iter()
                .zip(worker.scratches.iter_mut())
                .map(|(job, scratch)| {
                    march_ray_cached(
                        &model.field,
                        &model.sky,
                        &model.codes[job.code],
                        Ray {
                            origin: job.origin,
                            dir: job.dir,
                        },
                        march,
                        job.jitter,
                        scratch,
                    )
                })
                .collect()
        })
        .collect();
    chunks.into_concat()
}

/// Backward over caches left behind by [`forward_batch_cached`].
fn backward_batch(
    model: &SceneModel,
    jobs: &[RayJob],
    adjoints: &[PixelAdjoint],
    workers: &mut [ChunkWorker],
    grads: &mut Gradients,
) {
    let ranges = chunk_ranges(jobs.len());
    let used = ranges.len();
    workers[..used]
        .par_iter_mut()
        .zip(ranges.par_iter())
        .for_each(|(worker, &(a, b))| {
            worker.grads.scale(0.0);
            for (i, (job, adj)) in jobs[a..b].iter().zip(&adjoints[a..b]).enumerate() {
                march_backward(
                    &model.field,
                    &model.codes[job.code],
                    job.code,
                    &worker.scratches[i],
                    adj,
                    &mut worker.grads,
                    &mut worker.dh,
                );
            }
        });
    for worker in &workers[..used] {
        grads.add_assign(&worker.grads);
    }
}

/// Loss terms and per-ray adjoints of one planned iteration given the
/// forward outputs.
fn plan_losses(
    plan: &IterationPlan,
    cfg: &FitConfig,
    outputs: &[PixelRender],
) -> Result<(LossTerms, Vec<PixelAdjoint>)> {
    let w = &cfg.weights;
    let mut terms = LossTerms::default();
    let mut adjoints = vec![PixelAdjoint::default(); outputs.len()];

    let rgb: Vec<[f64; 3]> = outputs.iter().map(|o| o.rgb).collect();
    let (l2, g_l2) = photometric_loss(&rgb, &plan.gt_rgb, Some(&plan.gt_valid))?;
    terms.rgb = plan.rgb_factor * l2;
    for (adj, g) in adjoints.iter_mut().zip(&g_l2) {
        for ch in 0..3 {
            adj.rgb[ch] += w.rgb * plan.rgb_factor * g[ch];
        }
    }

    if let Some(sky_mask) = &plan.sky_mask {
        let t_out: Vec<f64> = outputs.iter().map(|o| o.t_out).collect();
        let (bce, g_bce) = sky_opacity_bce(&t_out, sky_mask);
        terms.sky_opacity = bce;
        for (adj, g) in adjoints.iter_mut().zip(&g_bce) {
            adj.t_out += w.sky_opacity * g;
        }
        let (l1, g_l1, _) = sky_masked_l1(&rgb, &plan.gt_rgb, sky_mask);
        terms.sky_l1 = l1;
        for (adj, g) in adjoints.iter_mut().zip(&g_l1) {
            for ch in 0..3 {
                adj.rgb[ch] += w.sky_l1 * g[ch];
            }
        }
    }

    if let Some((lw, lh, label)) = &plan.lattice {
        let mut pred = ScalarImage::new(*lw, *lh);
        for (i, o) in outputs.iter().enumerate() {
            pred.values[i] = if o.depth_valid { o.depth } else { 0.0 };
            pred.valid[i] = o.depth_valid;
        }
        match depth_loss(&pred, label, w.lambda_grad) {
            Ok((value, g_depth, _)) => {
                terms.depth = value;
                for (adj, g) in adjoints.iter_mut().zip(&g_depth) {
                    adj.depth += w.depth * g;
                }
            }
            // Early iterations can be fully transparent; skip the term
            // until enough pixels carry valid depth.
            Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((terms, adjoints))
}

/// Deterministic loss of one planned iteration (no gradients).
pub fn iteration_loss(model: &SceneModel, plan: &IterationPlan, cfg: &FitConfig) -> Result<LossReport> {
    let outputs = forward_batch(model, &cfg.march, &plan.jobs);
    let (mut terms, _) = plan_losses(plan, cfg, &outputs)?;
    terms.gravity = gravity_loss_from_pairs(
        |p| model.field.density_at(p),
        &plan.gravity_pairs,
        cfg.gravity.epsilon,
    );
    total_loss(&terms, &cfg.weights)
}

/// Loss and parameter gradients of one planned iteration.
pub fn iteration_gradients(
    model: &SceneModel,
    plan: &IterationPlan,
    cfg: &FitConfig,
    workers: &mut Vec<ChunkWorker>,
    grads: &mut Gradients,
) -> Result<LossReport> {
    let outputs = forward_batch_cached(model, &cfg.march, &plan.jobs, workers);
    let (mut terms, adjoints) = plan_losses(plan, cfg, &outputs)?;
    backward_batch(model, &plan.jobs, &adjoints, workers, grads);
    terms.gravity = gravity_loss_with_grads(
        model,
        &plan.gravity_pairs,
        cfg.gravity.epsilon,
        cfg.weights.gravity,
        grads,
    );
    total_loss(&terms, &cfg.weights)
}

/// Wrapper owning the worker pool, for callers outside this module.
pub struct GradientEvaluator {
    workers: Vec<ChunkWorker>,
}

impl Default for GradientEvaluator {
    fn default() -> Self {
        GradientEvaluator {
            workers: Vec::new(),
        }
    }
}

impl GradientEvaluator {
    pub fn evaluate(
        &mut self,
        model: &SceneModel,
        plan: &IterationPlan,
        cfg: &FitConfig,
        grads: &mut Gradients,
    ) -> Result<LossReport> {
        iteration_gradients(model, plan, cfg, &mut self.workers, grads)
    }
}

/// One training-log record; written as a `key=value` line.
#[derive(Clone, Debug)]
pub struct LogRecord {
    pub iteration: usize,
    pub kind: &'static str,
    pub rgb: f64,
    pub gravity: f64,
    pub sky_opacity: f64,
    pub sky_l1: f64,
    pub depth: f64,
    pub total: f64,
    pub millis: f64,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        format!(
            "iter={} kind={} rgb={:.6} grav={:.6} sky_op={:.6} sky_l1={:.6} depth={:.6} total={:.6} ms={:.2}",
            self.iteration,
            self.kind,
            self.rgb,
            self.gravity,
            self.sky_opacity,
            self.sky_l1,
            self.depth,
            self.total,
            self.millis
        )
    }
}

pub struct FitResult {
    pub model: SceneModel,
    pub log: Vec<LogRecord>,
    /// Set when training aborted on a non-finite total; the model is the
    /// last snapshot taken before the divergence.
    pub diverged_at: Option<usize>,
}

/// Fit a scene model to the supervision set.
pub fn fit_scene(views: &SupervisionSet, cfg: &FitConfig) -> Result<FitResult> {
    views.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = cfg.init_model(views.n_codes(), &mut rng);
    let mut state = AdamState::new(&model);
    let mut grads = Gradients::zeros_like(&model);
    let mut workers = Vec::new();
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut snapshot = model.clone();
    for iter in 0..cfg.iterations {
        let start = Instant::now();
        let plan = plan_iteration(views, cfg, iter, &mut rng);
        grads.scale(0.0);
        let report = iteration_gradients(&model, &plan, cfg, &mut workers, &mut grads)?;
        if !report.total.is_finite() {
            return Ok(FitResult {
                model: snapshot,
                log,
                diverged_at: Some(iter),
            });
        }
        let mut hyper = cfg.adam;
        if let Some(lr_end) = cfg.lr_end {
            let t = iter as f64 / (cfg.iterations.max(2) - 1) as f64;
            hyper.lr = cfg.adam.lr * (lr_end / cfg.adam.lr).powf(t);
        }
        adam_step(&mut model, &grads, &mut state, &hyper)?;
        log.push(LogRecord {
            iteration: iter,
            kind: plan.kind.label(),
            rgb: report.rgb,
            gravity: report.gravity,
            sky_opacity: report.sky_opacity,
            sky_l1: report.sky_l1,
            depth: report.depth,
            total: report.total,
            millis: start.elapsed().as_secs_f64() * 1e3,
        });
        if cfg.snapshot_every > 0 && (iter + 1) % cfg.snapshot_every == 0 {
            snapshot = model.clone();
        }
    }
    Ok(FitResult {
        model,
        log,
        diverged_at: None,
    })
}
