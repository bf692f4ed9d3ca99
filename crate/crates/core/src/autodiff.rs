//! Reverse-mode differentiation of the fixed render/loss graph: cached ray
//! marching with exact adjoints through compositing, the decoder, plane
//! sampling, and the sky lookup, plus gradient buffers and the Adam update.
//!
//! Adjoints propagate in transmittance space: with T[m] the transmittance
//! after m samples, the loss depends on T linearly through the sample
//! weights w[k] = T[k] - T[k+1] and the residual T[n], and dT[m]/dsigma_k
//! = -delta * T[m] for k < m. This avoids dividing by (1 - alpha) and
//! stays stable for opaque samples.

use crate::cameras::Ray;
use crate::error::{Error, Result};
use crate::field::{PlaneTaps, SceneModel, SkyTaps, TriPlaneField};
use crate::losses::GravityPair;
use crate::math::{sigmoid, softplus, Vec3};
use crate::renderer::{intersect_cube, stratified_offset, MarchConfig, PixelRender};

/// Gradient buffers mirroring [`SceneModel`] exactly.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub planes: [Vec<f64>; 3],
    pub trunk_w: Vec<f64>,
    pub trunk_b: Vec<f64>,
    pub density_w: Vec<f64>,
    pub density_b: f64,
    pub color_w: Vec<f64>,
    pub color_b: [f64; 3],
    pub sky: Vec<f64>,
    pub codes: Vec<Vec<f64>>,
}

pub const PARAM_GROUPS: [&str; 4] = ["planes", "decoder", "sky", "illumination"];

impl Gradients {
    pub fn zeros_like(model: &SceneModel) -> Gradients {
        let f = &model.field;
        Gradients {
            planes: [
                vec![0.0; f.planes[0].len()],
                vec![0.0; f.planes[1].len()],
                vec![0.0; f.planes[2].len()],
            ],
            trunk_w: vec![0.0; f.decoder.trunk_w.len()],
            trunk_b: vec![0.0; f.decoder.trunk_b.len()],
            density_w: vec![0.0; f.decoder.density_w.len()],
            density_b: 0.0,
            color_w: vec![0.0; f.decoder.color_w.len()],
            color_b: [0.0; 3],
            sky: vec![0.0; model.sky.data.len()],
            codes: model.codes.iter().map(|c| vec![0.0; c.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.1.iter_mut().zip(b.1) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, s) in self.slices_mut() {
            for x in s.iter_mut() {
                *x *= factor;
            }
        }
    }

    /// Named slices, group label repeated per underlying buffer. The order
    /// matches [`model_slices_mut`] element for element.
    pub fn slices(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            ("planes", &self.planes[0]),
            ("planes", &self.planes[1]),
            ("planes", &self.planes[2]),
            ("decoder", &self.trunk_w),
            ("decoder", &self.trunk_b),
            ("decoder", &self.density_w),
            ("decoder", std::slice::from_ref(&self.density_b)),
            ("decoder", &self.color_w),
            ("decoder", &self.color_b),
            ("sky", &self.sky),
        ];
        for c in &self.codes {
            out.push(("illumination", c));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let [p0, p1, p2] = &mut self.planes;
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("planes", p0.as_mut_slice()),
            ("planes", p1.as_mut_slice()),
            ("planes", p2.as_mut_slice()),
            ("decoder", self.trunk_w.as_mut_slice()),
            ("decoder", self.trunk_b.as_mut_slice()),
            ("decoder", self.density_w.as_mut_slice()),
            ("decoder", std::slice::from_mut(&mut self.density_b)),
            ("decoder", self.color_w.as_mut_slice()),
            ("decoder", self.color_b.as_mut_slice()),
            ("sky", self.sky.as_mut_slice()),
        ];
        for c in &mut self.codes {
            out.push(("illumination", c.as_mut_slice()));
        }
        out
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (name, s) in self.slices() {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.into()));
            }
        }
        Ok(())
    }
}

/// Named parameter slices of a model, in the same order as
/// [`Gradients::slices`].
pub fn model_slices_mut(model: &mut SceneModel) -> Vec<(&'static str, &mut [f64])> {
    let f = &mut model.field;
    let [p0, p1, p2] = &mut f.planes;
    let d = &mut f.decoder;
    let mut out: Vec<(&'static str, &mut [f64])> = vec![
        ("planes", p0.as_mut_slice()),
        ("planes", p1.as_mut_slice()),
        ("planes", p2.as_mut_slice()),
        ("decoder", d.trunk_w.as_mut_slice()),
        ("decoder", d.trunk_b.as_mut_slice()),
        ("decoder", d.density_w.as_mut_slice()),
        ("decoder", std::slice::from_mut(&mut d.density_b)),
        ("decoder", d.color_w.as_mut_slice()),
        ("decoder", d.color_b.as_mut_slice()),
        ("sky", model.sky.data.as_mut_slice()),
    ];
    for c in &mut model.codes {
        out.push(("illumination", c.as_mut_slice()));
    }
    out
}

/// Number of parameters in a named group.
pub fn group_len(model: &SceneModel, group: &str) -> usize {
    let f = &model.field;
    match group {
        "planes" => f.planes.iter().map(Vec::len).sum(),
        "decoder" => f.decoder.param_count(),
        "sky" => model.sky.data.len(),
        "illumination" => model.codes.iter().map(Vec::len).sum(),
        _ => 0,
    }
}

/// Add `delta` to the group-flattened parameter `idx`.
pub fn nudge_param(model: &mut SceneModel, group: &str, idx: usize, delta: f64) {
    let mut remaining = idx;
    for (name, s) in model_slices_mut(model) {
        if name != group {
            continue;
        }
        if remaining < s.len() {
            s[remaining] += delta;
            return;
        }
        remaining -= s.len();
    }
    panic!("parameter index {idx} out of range for group {group}");
}

/// Group-flattened gradient read, mirroring [`nudge_param`] indexing.
pub fn gradient_value(grads: &Gradients, group: &str, idx: usize) -> f64 {
    let mut remaining = idx;
    for (name, s) in grads.slices() {
        if name != group {
            continue;
        }
        if remaining < s.len() {
            return s[remaining];
        }
        remaining -= s.len();
    }
    panic!("parameter index {idx} out of range for group {group}");
}

/// Per-ray forward cache reused across rays and iterations.
#[derive(Default)]
pub struct MarchScratch {
    pub n: usize,
    pub t0: f64,
    pub delta: f64,
    ts: Vec<f64>,
    taps: Vec<Option<[PlaneTaps; 3]>>,
    h: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    sigma_pre: Vec<f64>,
    /// Transmittance after k samples; trans[0] = 1, trans[n] = t_out.
    trans: Vec<f64>,
    weights: Vec<f64>,
    colors: Vec<[f64; 3]>,
    sky_taps: Option<SkyTaps>,
    sky_rgb: [f64; 3],
    sum_w: f64,
    depth: f64,
    depth_valid: bool,
    dir: Vec3,
}

impl MarchScratch {
    fn reserve(&mut self, n: usize, channels: usize, hidden: usize) {
        self.ts.resize(n, 0.0);
        self.taps.resize(n, None);
        self.h.resize(n * channels, 0.0);
        self.z1.resize(n * hidden, 0.0);
        self.a1.resize(n * hidden, 0.0);
        self.sigma_pre.resize(n, 0.0);
        self.trans.resize(n + 1, 0.0);
        self.weights.resize(n, 0.0);
        self.colors.resize(n, [0.0; 3]);
    }
}

/// Forward march of one ray against a tri-plane model, retaining the
/// per-sample state needed by [`march_backward`]. Produces the same
/// result as the generic renderer path.
pub fn march_ray_cached(
    field: &TriPlaneField,
    sky: &crate::field::SkyMap,
    code: &[f64],
    ray: Ray,
    cfg: &MarchConfig,
    jitter_seed: Option<u64>,
    scratch: &mut MarchScratch,
) -> PixelRender {
    let (channels, hidden) = (field.channels, field.decoder.hidden);
    let (sky_rgb, sky_taps) = sky.sample(ray.dir);
    scratch.sky_taps = Some(sky_taps);
    scratch.sky_rgb = sky_rgb;
    scratch.dir = ray.dir;
    scratch.n = 0;

    let span = intersect_cube(ray.origin, ray.dir, field.extent.half())
        .map(|(t0, t1)| (t0.max(cfg.t_near), t1.min(cfg.t_far)));
    let (t0, t1) = match span {
        Some((t0, t1)) if t1 > t0 => (t0, t1),
        _ => {
            scratch.depth_valid = false;
            return PixelRender {
                rgb: sky_rgb,
                depth: f64::NAN,
                depth_valid: false,
                opacity: 0.0,
                weight_sum: 0.0,
                t_out: 1.0,
            };
        }
    };
    let n = cfg.n_samples;
    scratch.reserve(n, channels, hidden);
    scratch.n = n;
    scratch.t0 = t0;
    let delta = (t1 - t0) / n as f64;
    scratch.delta = delta;

    let mut transmittance = 1.0;
    scratch.trans[0] = 1.0;
    let mut rgb = [0.0; 3];
    let mut sum_w = 0.0;
    let mut sum_wt = 0.0;
    for k in 0..n {
        let u = match jitter_seed {
            Some(seed) => stratified_offset(seed, k),
            None => 0.5,
        };
        let t = t0 + (k as f64 + u) * delta;
        scratch.ts[k] = t;
        let p = ray.origin + ray.dir * t;
        let h = &mut scratch.h[k * channels..(k + 1) * channels];
        scratch.taps[k] = field.sample_into(p, h);

        // Decoder forward, written out against the flat caches.
        let dec = &field.decoder;
        let mut sigma_pre = dec.density_b;
        for r in 0..hidden {
            let row = &dec.trunk_w[r * channels..(r + 1) * channels];
            let mut z = dec.trunk_b[r];
            for (w, hv) in row.iter().zip(h.iter()) {
                z += w * hv;
            }
            let a = softplus(z);
            scratch.z1[k * hidden + r] = z;
            scratch.a1[k * hidden + r] = a;
            sigma_pre += dec.density_w[r] * a;
        }
        scratch.sigma_pre[k] = sigma_pre;
        let sigma = softplus(sigma_pre);
        let a1 = &scratch.a1[k * hidden..(k + 1) * hidden];
        let u_len = hidden + dec.d_w;
        let mut color = [0.0; 3];
        for (i, out) in color.iter_mut().enumerate() {
            let row = &dec.color_w[i * u_len..(i + 1) * u_len];
            let mut c = dec.color_b[i];
            for (w, a) in row[..hidden].iter().zip(a1) {
                c += w * a;
            }
            for (w, cv) in row[hidden..].iter().zip(code) {
                c += w * cv;
            }
            *out = sigmoid(c);
        }
        scratch.colors[k] = color;

        let att = (-sigma * delta).exp();
        let alpha = 1.0 - att;
        let w = transmittance * alpha;
        scratch.weights[k] = w;
        for (acc, c) in rgb.iter_mut().zip(color) {
            *acc += w * c;
        }
        sum_w += w;
        sum_wt += w * t;
        transmittance *= att;
        scratch.trans[k + 1] = transmittance;
    }
    let t_out = transmittance;
    for (acc, c) in rgb.iter_mut().zip(sky_rgb) {
        *acc += t_out * c;
    }
    let depth_valid = sum_w >= cfg.depth_valid_threshold;
    scratch.sum_w = sum_w;
    scratch.depth = if depth_valid { sum_wt / sum_w } else { f64::NAN };
    scratch.depth_valid = depth_valid;
    PixelRender {
        rgb,
        depth: scratch.depth,
        depth_valid,
        opacity: 1.0 - t_out,
        weight_sum: sum_w,
        t_out,
    }
}

/// Adjoint seed for one rendered pixel.
#[derive(Clone, Copy, Debug, Default)]
pub struct PixelAdjoint {
    pub rgb: [f64; 3],
    /// Ignored when the pixel's depth was invalid.
    pub depth: f64,
    pub t_out: f64,
}

fn sky_backward(grads: &mut Gradients, taps: &SkyTaps, bar: [f64; 3]) {
    for m in 0..4 {
        let base = taps.idx[m] * 3;
        for ch in 0..3 {
            // The sample is clamped to [0, 1]; gradient passes only inside.
            if (0.0..=1.0).contains(&taps.pre_clamp[ch]) {
                grads.sky[base + ch] += taps.w[m] * bar[ch];
            }
        }
    }
}

/// Backpropagate one pixel's adjoint through the cached march into the
/// gradient buffers. `code_idx` selects the illumination code the ray was
/// rendered with.
#[allow(clippy::too_many_arguments)]
pub fn march_backward(
    field: &TriPlaneField,
    code: &[f64],
    code_idx: usize,
    scratch: &MarchScratch,
    adjoint: &PixelAdjoint,
    grads: &mut Gradients,
    dh: &mut Vec<f64>,
) {
    let sky_taps = scratch.sky_taps.as_ref().expect("march cache missing");
    if scratch.n == 0 {
        // Ray missed the volume: rgb = sky, t_out constant.
        sky_backward(grads, sky_taps, adjoint.rgb);
        return;
    }
    let n = scratch.n;
    let (channels, hidden) = (field.channels, field.decoder.hidden);
    let dec = &field.decoder;
    let delta = scratch.delta;

    // Weight adjoints: w_hat[k] = dL/dw_k.
    let depth_term = |k: usize| -> f64 {
        if scratch.depth_valid && adjoint.depth != 0.0 {
            adjoint.depth * (scratch.ts[k] - scratch.depth) / scratch.sum_w
        } else {
            0.0
        }
    };
    let w_hat = |k: usize| -> f64 {
        let c = scratch.colors[k];
        adjoint.rgb[0] * c[0] + adjoint.rgb[1] * c[1] + adjoint.rgb[2] * c[2] + depth_term(k)
    };
    let t_hat = adjoint.t_out
        + adjoint.rgb[0] * scratch.sky_rgb[0]
        + adjoint.rgb[1] * scratch.sky_rgb[1]
        + adjoint.rgb[2] * scratch.sky_rgb[2];

    // Suffix accumulation over transmittance adjoints.
    let mut q = scratch.trans[n] * (t_hat - w_hat(n - 1));
    dh.resize(channels, 0.0);
    for k in (0..n).rev() {
        let sigma_bar = -delta * q;
        if k > 0 {
            q += scratch.trans[k] * (w_hat(k) - w_hat(k - 1));
        }
        let rgb_bar = [
            adjoint.rgb[0] * scratch.weights[k],
            adjoint.rgb[1] * scratch.weights[k],
            adjoint.rgb[2] * scratch.weights[k],
        ];
        if sigma_bar == 0.0 && rgb_bar == [0.0; 3] {
            continue;
        }

        // Density head.
        let d_sigma_pre = sigma_bar * sigmoid(scratch.sigma_pre[k]);
        let a1 = &scratch.a1[k * hidden..(k + 1) * hidden];
        let z1 = &scratch.z1[k * hidden..(k + 1) * hidden];
        let h = &scratch.h[k * channels..(k + 1) * channels];
        grads.density_b += d_sigma_pre;
        // Color head.
        let u_len = hidden + dec.d_w;
        let c = scratch.colors[k];
        let d_cpre = [
            rgb_bar[0] * c[0] * (1.0 - c[0]),
            rgb_bar[1] * c[1] * (1.0 - c[1]),
            rgb_bar[2] * c[2] * (1.0 - c[2]),
        ];
        for r in 0..hidden {
            let mut da = d_sigma_pre * dec.density_w[r];
            grads.density_w[r] += d_sigma_pre * a1[r];
            for i in 0..3 {
                if d_cpre[i] != 0.0 {
                    grads.color_w[i * u_len + r] += d_cpre[i] * a1[r];
                    da += d_cpre[i] * dec.color_w[i * u_len + r];
                }
            }
            // Trunk.
            let dz = da * sigmoid(z1[r]);
            grads.trunk_b[r] += dz;
            let row_w = &dec.trunk_w[r * channels..(r + 1) * channels];
            let row_g = &mut grads.trunk_w[r * channels..(r + 1) * channels];
            for ch in 0..channels {
                row_g[ch] += dz * h[ch];
                dh[ch] += dz * row_w[ch];
            }
        }
        for i in 0..3 {
            if d_cpre[i] != 0.0 {
                grads.color_b[i] += d_cpre[i];
                let code_grad = &mut grads.codes[code_idx];
                for (t, cg) in code_grad.iter_mut().enumerate() {
                    *cg += d_cpre[i] * dec.color_w[i * u_len + hidden + t];
                }
            }
        }
        let _ = code;

        // Planes through the bilinear taps.
        if let Some(taps) = &scratch.taps[k] {
            for (plane_grad, t) in grads.planes.iter_mut().zip(taps) {
                for m in 0..4 {
                    let base = t.idx[m] * channels;
                    let w = t.w[m];
                    for (ch, dhv) in dh.iter().enumerate() {
                        plane_grad[base + ch] += w * dhv;
                    }
                }
            }
        }
        dh.fill(0.0);
    }

    // Sky contribution through the residual transmittance.
    let sky_bar = [
        adjoint.rgb[0] * scratch.trans[n],
        adjoint.rgb[1] * scratch.trans[n],
        adjoint.rgb[2] * scratch.trans[n],
    ];
    sky_backward(grads, sky_taps, sky_bar);
}

/// Density at a point with the caches needed for the density-only
/// backward used by the gravity term. Returns sigma.
struct DensityEval {
    taps: Option<[PlaneTaps; 3]>,
    h: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    sigma_pre: f64,
}

fn density_forward(field: &TriPlaneField, p: Vec3, eval: &mut DensityEval) -> f64 {
    let (channels, hidden) = (field.channels, field.decoder.hidden);
    eval.h.resize(channels, 0.0);
    eval.z1.resize(hidden, 0.0);
    eval.a1.resize(hidden, 0.0);
    eval.taps = field.sample_into(p, &mut eval.h);
    let dec = &field.decoder;
    let mut sigma_pre = dec.density_b;
    for r in 0..hidden {
        let row = &dec.trunk_w[r * channels..(r + 1) * channels];
        let mut z = dec.trunk_b[r];
        for (w, hv) in row.iter().zip(&eval.h) {
            z += w * hv;
        }
        eval.z1[r] = z;
        eval.a1[r] = softplus(z);
        sigma_pre += dec.density_w[r] * eval.a1[r];
    }
    eval.sigma_pre = sigma_pre;
    softplus(sigma_pre)
}

fn density_backward(
    field: &TriPlaneField,
    eval: &DensityEval,
    sigma_bar: f64,
    grads: &mut Gradients,
    dh: &mut Vec<f64>,
) {
    let (channels, hidden) = (field.channels, field.decoder.hidden);
    let dec = &field.decoder;
    let d_sigma_pre = sigma_bar * sigmoid(eval.sigma_pre);
    grads.density_b += d_sigma_pre;
    dh.resize(channels, 0.0);
    dh.fill(0.0);
    for r in 0..hidden {
        grads.density_w[r] += d_sigma_pre * eval.a1[r];
        let dz = d_sigma_pre * dec.density_w[r] * sigmoid(eval.z1[r]);
        grads.trunk_b[r] += dz;
        let row_w = &dec.trunk_w[r * channels..(r + 1) * channels];
        let row_g = &mut grads.trunk_w[r * channels..(r + 1) * channels];
        for ch in 0..channels {
            row_g[ch] += dz * eval.h[ch];
            dh[ch] += dz * row_w[ch];
        }
    }
    if let Some(taps) = &eval.taps {
        for (plane_grad, t) in grads.planes.iter_mut().zip(taps) {
            for m in 0..4 {
                let base = t.idx[m] * channels;
                for (ch, dhv) in dh.iter().enumerate() {
                    plane_grad[base + ch] += t.w[m] * dhv;
                }
            }
        }
    }
}

/// Gravity loss over the given pairs with gradients scaled by `weight`
/// accumulated into `grads`. Returns the unweighted loss value.
pub fn gravity_loss_with_grads(
    model: &SceneModel,
    pairs: &[GravityPair],
    epsilon: f64,
    weight: f64,
    grads: &mut Gradients,
) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let field = &model.field;
    let mut lo = DensityEval {
        taps: None,
        h: Vec::new(),
        z1: Vec::new(),
        a1: Vec::new(),
        sigma_pre: 0.0,
    };
    let mut hi = DensityEval {
        taps: None,
        h: Vec::new(),
        z1: Vec::new(),
        a1: Vec::new(),
        sigma_pre: 0.0,
    };
    let mut dh = Vec::new();
    let inv_m = 1.0 / pairs.len() as f64;
    let mut value = 0.0;
    for pair in pairs {
        let sigma_lo = density_forward(field, pair.p, &mut lo);
        let sigma_hi = density_forward(field, pair.p + Vec3::UP * pair.dz, &mut hi);
        let excess = sigma_hi - sigma_lo - epsilon;
        if excess > 0.0 {
            value += excess;
            density_backward(field, &hi, weight * inv_m, grads, &mut dh);
            density_backward(field, &lo, -weight * inv_m, grads, &mut dh);
        }
    }
    value * inv_m
}

/// Adam hyperparameters; the learning rate lives in the fit config.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &SceneModel) -> AdamState {
        AdamState {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            t: 0,
        }
    }
}

/// Bias-corrected Adam update of one parameter slice.
pub fn adam_update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    hp: &AdamHyper,
) {
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

/// One Adam step over every parameter group. Non-finite gradients abort
/// with the offending group named.
pub fn adam_step(
    model: &mut SceneModel,
    grads: &Gradients,
    state: &mut AdamState,
    hp: &AdamHyper,
) -> Result<()> {
    grads.assert_finite()?;
    state.t += 1;
    let t = state.t;
    let g = grads.slices();
    let mut m = state.m.slices_mut();
    let mut v = state.v.slices_mut();
    for (i, (_, p)) in model_slices_mut(model).into_iter().enumerate() {
        adam_update_slice(p, g[i].1, m[i].1, v[i].1, t, hp);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Decoder, SceneExtent, SkyMap};
    use crate::math::vec3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model(seed: u64) -> SceneModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extent = SceneExtent::new(20.0, 16, 0).unwrap();
        let mut field = TriPlaneField::new(8, 3, Decoder::init(3, 6, 2, &mut rng), extent);
        for plane in field.planes.iter_mut() {
            for v in plane.iter_mut() {
                *v = rng.gen_range(-0.8..0.8);
            }
        }
        // Denser so depth is valid along most rays.
        field.decoder.density_b = 0.5;
        let mut sky = SkyMap::new(6, 12, [0.5; 3]);
        for v in sky.data.iter_mut() {
            *v = rng.gen_range(0.1..0.9);
        }
        let codes = vec![
            (0..2).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            (0..2).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        ];
        SceneModel { field, sky, codes }
    }

    #[test]
    fn cached_march_matches_generic_renderer() {
        let model = small_model(1);
        let src = crate::renderer::FieldSource::new(&model.field, &model.sky, &model.codes[0])
            .unwrap();
        let cfg = MarchConfig {
            n_samples: 24,
            ..Default::default()
        };
        let mut scratch = MarchScratch::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..50 {
            let ray = Ray {
                origin: vec3(
                    rng.gen_range(-15.0..15.0),
                    rng.gen_range(-15.0..15.0),
                    rng.gen_range(-15.0..25.0),
                ),
                dir: vec3(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .normalized(),
            };
            if ray.dir.length() == 0.0 {
                continue;
            }
            let a = crate::renderer::march_ray(&src, ray, &cfg, Some(i));
            let b = march_ray_cached(
                &model.field,
                &model.sky,
                &model.codes[0],
                ray,
                &cfg,
                Some(i),
                &mut scratch,
            );
            for ch in 0..3 {
                assert!((a.rgb[ch] - b.rgb[ch]).abs() < 1e-12);
            }
            assert!((a.t_out - b.t_out).abs() < 1e-12);
            assert_eq!(a.depth_valid, b.depth_valid);
            if a.depth_valid {
                assert!((a.depth - b.depth).abs() < 1e-12);
            }
        }
    }

    /// Scalar objective over a couple of rays exercising rgb, t_out, and
    /// depth adjoints at once.
    fn toy_objective(model: &SceneModel, rays: &[Ray], cfg: &MarchConfig) -> f64 {
        let mut scratch = MarchScratch::default();
        let mut acc = 0.0;
        for (i, ray) in rays.iter().enumerate() {
            let code = i % model.codes.len();
            let px = march_ray_cached(
                &model.field,
                &model.sky,
                &model.codes[code],
                *ray,
                cfg,
                None,
                &mut scratch,
            );
            acc += 0.7 * px.rgb[0] + 0.2 * px.rgb[1] - 0.4 * px.rgb[2] + 0.3 * px.t_out;
            if px.depth_valid {
                acc += 0.05 * px.depth;
            }
        }
        acc
    }

    #[test]
    fn march_backward_matches_finite_differences() {
        let mut model = small_model(3);
        let cfg = MarchConfig {
            n_samples: 16,
            ..Default::default()
        };
        let rays = vec![
            Ray {
                origin: vec3(0.0, 0.0, 18.0),
                dir: vec3(0.05, -0.1, -1.0).normalized(),
            },
            Ray {
                origin: vec3(-14.0, 2.0, 1.0),
                dir: vec3(1.0, 0.2, 0.05).normalized(),
            },
            // Misses the cube entirely, so the sky dominates its adjoint.
            Ray {
                origin: vec3(0.0, 0.0, 30.0),
                dir: vec3(0.3, 0.2, 1.0).normalized(),
            },
        ];
        // Analytic gradients.
        let mut grads = Gradients::zeros_like(&model);
        let mut scratch = MarchScratch::default();
        let mut dh = Vec::new();
        for (i, ray) in rays.iter().enumerate() {
            let code = i % model.codes.len();
            let px = march_ray_cached(
                &model.field,
                &model.sky,
                &model.codes[code],
                *ray,
                &cfg,
                None,
                &mut scratch,
            );
            let adods = PixelAdjoint {
                rgb: [0.7, 0.2, -0.4],
                depth: if px.depth_valid { 0.05 } else { 0.0 },
                t_out: 0.3,
            };
            march_backward(
                &model.field,
                &model.codes[code],
                code,
                &scratch,
                &adods,
                &mut grads,
                &mut dh,
            );
        }
        // Finite differences over a sample of parameters in every group.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let step = 1e-5;
        for group in PARAM_GROUPS {
            let len = group_len(&model, group);
            let mut checked = 0;
            let mut attempts = 0;
            while checked < 12 && attempts < 120 {
                attempts += 1;
                let idx = rng.gen_range(0..len);
                nudge_param(&mut model, group, idx, step);
                let plus = toy_objective(&model, &rays, &cfg);
                nudge_param(&mut model, group, idx, -2.0 * step);
                let minus = toy_objective(&model, &rays, &cfg);
                nudge_param(&mut model, group, idx, step);
                let numeric = (plus - minus) / (2.0 * step);
                let analytic = gradient_value(&grads, group, idx);
                // Central differences with step 1e-5 carry ~1e-11 noise;
                // relative comparison is meaningless below that.
                if numeric.abs() < 1e-7 && analytic.abs() < 1e-7 {
                    continue;
                }
                let rel = (analytic - numeric).abs() / numeric.abs().max(analytic.abs());
                assert!(
                    rel < 1e-4,
                    "group {group} idx {idx}: analytic {analytic} vs numeric {numeric}"
                );
                checked += 1;
            }
            assert!(checked > 0, "no usable parameters sampled in {group}");
        }
    }

    #[test]
    fn gravity_gradients_match_finite_differences() {
        let mut model = small_model(5);
        // Make density vary strongly so some pairs are active.
        for v in model.field.planes[1].iter_mut() {
            *v *= 3.0;
        }
        let pairs = crate::losses::sample_gravity_pairs(
            model.field.extent.half(),
            &crate::losses::GravityConfig {
                samples: 64,
                delta_max: 1.5,
                epsilon: 0.05,
            },
            &mut ChaCha8Rng::seed_from_u64(6),
        );
        let eval = |m: &SceneModel| {
            crate::losses::gravity_loss_from_pairs(|p| m.field.density_at(p), &pairs, 0.05)
        };
        let base = eval(&model);
        assert!(base > 0.0, "need active pairs for a meaningful check");
        let mut grads = Gradients::zeros_like(&model);
        let value = gravity_loss_with_grads(&model, &pairs, 0.05, 1.0, &mut grads);
        assert!((value - base).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let step = 1e-5;
        for group in ["planes", "decoder"] {
            let len = group_len(&model, group);
            let mut checked = 0;
            for _ in 0..100 {
                if checked >= 10 {
                    break;
                }
                let idx = rng.gen_range(0..len);
                nudge_param(&mut model, group, idx, step);
                let plus = eval(&model);
                nudge_param(&mut model, group, idx, -2.0 * step);
                let minus = eval(&model);
                nudge_param(&mut model, group, idx, step);
                let numeric = (plus - minus) / (2.0 * step);
                let analytic = gradient_value(&grads, group, idx);
                if numeric.abs() < 1e-9 && analytic.abs() < 1e-9 {
                    continue;
                }
                let rel = (analytic - numeric).abs() / numeric.abs().max(analytic.abs());
                assert!(rel < 1e-4, "{group}[{idx}]: {analytic} vs {numeric}");
                checked += 1;
            }
            assert!(checked > 0);
        }
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let hp = AdamHyper {
            lr: 0.01,
            ..Default::default()
        };
        for g in [5.0, -0.3, 1e-4] {
            let mut p = [1.0];
            let mut m = [0.0];
            let mut v = [0.0];
            adam_update_slice(&mut p, &[g], &mut m, &mut v, 1, &hp);
            let update = (1.0 - p[0]).abs();
            assert!(
                (update - hp.lr).abs() < hp.lr * 1e-3,
                "grad {g}: update {update}"
            );
            assert_eq!((1.0 - p[0]).signum(), g.signum());
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let hp = AdamHyper::default();
        let mut p = [2.0];
        let mut m = [0.5];
        let mut v = [0.25];
        adam_update_slice(&mut p, &[0.0], &mut m, &mut v, 3, &hp);
        assert!((m[0] - 0.45).abs() < 1e-12);
        assert!((v[0] - 0.25 * 0.999).abs() < 1e-12);
        // Parameter moves only through the decayed first moment.
        assert!(p[0] < 2.0);
        let mut p2 = [2.0];
        let mut m2 = [0.0];
        let mut v2 = [0.0];
        adam_update_slice(&mut p2, &[0.0], &mut m2, &mut v2, 1, &hp);
        assert_eq!(p2[0], 2.0);
    }

    #[test]
    fn adam_minimizes_square() {
        let hp = AdamHyper {
            lr: 0.1,
            ..Default::default()
        };
        let mut p = [1.0];
        let mut m = [0.0];
        let mut v = [0.0];
        for t in 1..=100 {
            let g = 2.0 * p[0];
            adam_update_slice(&mut p, &[g], &mut m, &mut v, t, &hp);
        }
        assert!(p[0].abs() < 0.05, "x after 100 steps: {}", p[0]);
    }

    #[test]
    fn adam_step_rejects_non_finite_gradients() {
        let model0 = small_model(8);
        let mut model = model0.clone();
        let mut grads = Gradients::zeros_like(&model);
        grads.sky[0] = f64::NAN;
        let mut state = AdamState::new(&model);
        let err = adam_step(&mut model, &grads, &mut state, &AdamHyper::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref g) if g == "sky"));
    }

    #[test]
    fn lr_zero_step_is_identity() {
        let model0 = small_model(9);
        let mut model = model0.clone();
        let mut grads = Gradients::zeros_like(&model);
        for (_, s) in grads.slices_mut() {
            for v in s.iter_mut() {
                *v = 0.37;
            }
        }
        let mut state = AdamState::new(&model);
        adam_step(
            &mut model,
            &grads,
            &mut state,
            &AdamHyper {
                lr: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(model.field.planes[0], model0.field.planes[0]);
        assert_eq!(model.sky.data, model0.sky.data);
        assert_eq!(model.codes, model0.codes);
    }
}
