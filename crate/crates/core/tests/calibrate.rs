//! Manual calibration harness (run with --ignored --nocapture).

use terraplane::cameras::CameraSpec;
use terraplane::field::SceneExtent;
use terraplane::fit::{fit_scene, FitConfig};
use terraplane::losses::GravityConfig;
use terraplane::metrics::psnr;
use terraplane::renderer::{render_view, FieldSource, MarchConfig};
use terraplane::synth;

#[test]
#[ignore]
fn calibrate_a2() {
    let spec = synth::city_block();
    let cameras = synth::city_block_cameras(256, 64);
    let t0 = std::time::Instant::now();
    let views = synth::generate_supervision(&spec, &cameras, 7, &synth::gt_march()).unwrap();
    eprintln!("supervision: {:.1}s", t0.elapsed().as_secs_f64());
    let holdout_cam = cameras.holdout_pano.clone().unwrap();
    let holdout_gt = render_view(&spec, &holdout_cam, &synth::gt_march(), None).unwrap();

    for (iters, hidden, lr) in [(8000usize, 16usize, 1e-2f64)] {
        let cfg = FitConfig {
            iterations: iters,
            rays_per_batch: 1024,
            res: 64,
            channels: 8,
            hidden,
            d_w: 8,
            sky_height: 64,
            sky_width: 128,
            extent: SceneExtent {
                l_base: 50.0,
                tokens_per_side: 16,
                pad_tokens: 2,
            },
            march: MarchConfig {
                n_samples: 64,
                jitter: true,
                ..Default::default()
            },
            gravity: GravityConfig {
                samples: 512,
                delta_max: 1.5625,
                epsilon: 1.0,
            },
            sat_max_rays: 4096,
            seed: 1,
            adam: terraplane::autodiff::AdamHyper {
                lr,
                ..Default::default()
            },
            lr_end: Some(lr / 10.0),
            ..Default::default()
        };
        let t0 = std::time::Instant::now();
        let result = fit_scene(&views, &cfg).unwrap();
        let fit_secs = t0.elapsed().as_secs_f64();

        let eval_march = MarchConfig::default();
        let model = &result.model;
        let code = model.mean_code();
        let src = FieldSource::new(&model.field, &model.sky, &code).unwrap();
        let render = render_view(&src, &holdout_cam, &eval_march, None).unwrap();
        let db = psnr(&render.color_image(), &holdout_gt.color_image()).unwrap();

        // Height MAE against the analytic surface.
        let sat_cam = CameraSpec::Orthographic {
            center: [0.0, 0.0],
            extent: 50.0,
            altitude: 60.0,
            width: 128,
            height: 128,
        };
        let sat = render_view(&src, &sat_cam, &eval_march, None).unwrap();
        let rays = terraplane::cameras::make_rays(&sat_cam).unwrap();
        let mut errs: Vec<f64> = Vec::new();
        for i in 0..rays.len() {
            let truth = spec.analytic_depth(rays.origins[i], rays.directions[i]);
            if let (true, Some(t)) = (sat.valid[i], truth) {
                errs.push((t - sat.depth[i]).abs());
            }
        }
        let n = errs.len();
        let mae = errs.iter().sum::<f64>() / n.max(1) as f64;
        let mut sorted = errs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p) as usize];
        eprintln!(
            "err quantiles: p50 {:.2} p75 {:.2} p90 {:.2} p95 {:.2} p99 {:.2} max {:.2}",
            q(0.5), q(0.75), q(0.9), q(0.95), q(0.99), q(1.0)
        );
        let last = &result.log[result.log.len() - 1];
        eprintln!(
            "iters {iters} hidden {hidden} lr {lr}: fit {fit_secs:.0}s psnr {db:.2} dB mae {mae:.3} m valid {n}/{} last-total {:.4}",
            rays.len(),
            last.total
        );
    }
}
