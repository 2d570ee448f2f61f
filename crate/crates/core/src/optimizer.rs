//! Four-term Gaussian-splatting fit with analytic gradients, Adam updates and
//! periodic prune/split densification.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix2, Matrix3, Quaternion, UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussians::{Gaussian3D, MAX_SCALE, MIN_SCALE};
use crate::image::{union_mask, Mask, RgbImage};
use crate::renderer::{RenderOutput, Rasterizer};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub sp: f64,
    pub mask: f64,
    pub depth: f64,
    pub opacity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sp: 1.0,
            mask: 0.5,
            depth: 0.1,
            opacity: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.sp, self.mask, self.depth, self.opacity];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub iterations: usize,
    pub lr_mean: f64,
    pub lr_log_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub prune_opacity: f64,
    /// Threshold on the footprint-normalized screen-space mean gradient.
    pub grow_gradient: f64,
    pub densify_interval: usize,
    /// Splitting stops once the set reaches this size.
    pub max_gaussians: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            lr_mean: 1e-2,
            lr_log_scale: 5e-3,
            lr_rotation: 2e-3,
            lr_opacity: 0.15,
            lr_color: 5e-3,
            prune_opacity: 0.005,
            grow_gradient: 2e-4,
            densify_interval: 50,
            max_gaussians: 200_000,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.densify_interval == 0 {
            return Err(Error::Config("densify_interval must be at least 1".into()));
        }
        let positive = [
            self.lr_mean,
            self.lr_log_scale,
            self.lr_rotation,
            self.lr_opacity,
            self.lr_color,
            self.prune_opacity,
            self.grow_gradient,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("step sizes and thresholds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub sp: f64,
    pub mask: f64,
    pub depth: f64,
    pub opacity: f64,
}

impl LossBreakdown {
    fn finish(mut self, w: &LossWeights) -> Self {
        self.total = w.sp * self.sp + w.mask * self.mask + w.depth * self.depth + w.opacity * self.opacity;
        self
    }

    fn check_finite(&self, iteration: usize) -> Result<()> {
        for (term, v) in [
            ("sp", self.sp),
            ("mask", self.mask),
            ("depth", self.depth),
            ("opacity", self.opacity),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    term,
                    iteration,
                });
            }
        }
        Ok(())
    }
}

/// Per-view supervision: superpixel mean-color image and instance masks.
#[derive(Clone, Debug)]
pub struct FitTarget {
    pub camera: Camera,
    pub sp_image: RgbImage,
    pub instances: Vec<Mask>,
    pub foreground: Mask,
}

impl FitTarget {
    pub fn new(camera: Camera, sp_image: RgbImage, instances: Vec<Mask>) -> Result<Self> {
        let (w, h) = (camera.width(), camera.height());
        if sp_image.width() != w || sp_image.height() != h {
            return Err(Error::LengthMismatch {
                what: "superpixel image vs camera",
                left: sp_image.len(),
                right: w * h,
            });
        }
        for m in &instances {
            if m.width() != w || m.height() != h {
                return Err(Error::LengthMismatch {
                    what: "instance mask vs camera",
                    left: m.len(),
                    right: w * h,
                });
            }
        }
        let foreground = union_mask(&instances, w, h);
        Ok(Self {
            camera,
            sp_image,
            instances,
            foreground,
        })
    }
}

/// Number of optimized scalars per Gaussian:
/// mean (3), log-scales (3), quaternion `w x y z` (4), opacity logit (1), color (3).
pub const PARAMS: usize = 14;
const MEAN: usize = 0;
const SCALE: usize = 3;
const ROT: usize = 6;
const OPAC: usize = 10;
const COLOR: usize = 11;

/// Gradients of the total loss, one row of [`PARAMS`] values per Gaussian.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<[f64; PARAMS]>,
    /// Sum over views of the footprint-normalized screen-space mean gradient.
    pub screen: Vec<f64>,
    /// Number of views in which each Gaussian was rendered.
    pub visible: Vec<u32>,
}

impl Gradients {
    fn zeros(n: usize) -> Self {
        Self {
            params: vec![[0.0; PARAMS]; n],
            screen: vec![0.0; n],
            visible: vec![0; n],
        }
    }
}

fn check_targets(targets: &[FitTarget], weights: &LossWeights) -> Result<()> {
    weights.validate()?;
    if weights.depth > 0.0 {
        for t in targets {
            if t.instances.is_empty() {
                return Err(Error::Config(
                    "depth loss needs per-instance masks for every view".into(),
                ));
            }
        }
    }
    Ok(())
}

fn opacity_term(gaussians: &[Gaussian3D]) -> f64 {
    gaussians
        .iter()
        .map(|g| {
            let d = g.opacity() - 0.5;
            (-d * d / 0.04).exp()
        })
        .sum()
}

/// Evaluates the four loss terms and their weighted sum.
pub fn compute_losses(
    gaussians: &[Gaussian3D],
    targets: &[FitTarget],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    check_targets(targets, weights)?;
    let per_view: Vec<LossBreakdown> = targets
        .par_iter()
        .map(|t| {
            let out = Rasterizer::new(gaussians, &t.camera).render();
            view_loss(&out, t, weights).0
        })
        .collect();
    let mut total = LossBreakdown {
        opacity: opacity_term(gaussians),
        ..Default::default()
    };
    for l in per_view {
        total.sp += l.sp;
        total.mask += l.mask;
        total.depth += l.depth;
    }
    Ok(total.finish(weights))
}

/// Per-view image terms plus per-pixel gradients `[dr, dg, db, ddepth, dmask]`
/// of the weighted loss with respect to the rendered channels.
fn view_loss(out: &RenderOutput, t: &FitTarget, w: &LossWeights) -> (LossBreakdown, Vec<[f64; 5]>) {
    let n = out.mask.len();
    let mut grads = vec![[0.0; 5]; n];
    let mut l = LossBreakdown::default();
    let rgb = out.rgb.as_slice();
    let target_rgb = t.sp_image.as_slice();
    let fg = t.foreground.as_slice();
    let mask = out.mask.as_slice();
    for i in 0..n {
        let m = if fg[i] { 1.0 } else { 0.0 };
        let dm = mask[i] - m;
        l.mask += dm * dm;
        grads[i][4] = w.mask * 2.0 * dm;
        if fg[i] {
            for k in 0..3 {
                let d = rgb[i][k] - target_rgb[i][k];
                l.sp += d.abs();
                grads[i][k] = w.sp * sign(d);
            }
        }
    }
    let depth = out.raw_depth.as_slice();
    for inst in &t.instances {
        let px: Vec<usize> = inst
            .as_slice()
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect();
        if px.is_empty() {
            continue;
        }
        let mean = px.iter().map(|&i| depth[i]).sum::<f64>() / px.len() as f64;
        for &i in &px {
            let d = depth[i] - mean;
            l.depth += d * d;
            grads[i][3] = w.depth * 2.0 * d;
        }
    }
    (l, grads)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Default)]
struct SplatGrad {
    mean2d: [f64; 2],
    /// With respect to `(a, b, c)` of the conic `a dx² + 2b dx dy + c dy²`.
    conic: [f64; 3],
    depth: f64,
    color: [f64; 3],
    /// With respect to the (sigmoid) opacity.
    opacity: f64,
    footprint: f64,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.depth += o.depth;
        self.opacity += o.opacity;
        self.footprint += o.footprint;
    }
}

/// Reverse pass through the blending recurrence for one view.
fn backward_view(r: &Rasterizer, pixel_grads: &[[f64; 5]]) -> Vec<SplatGrad> {
    let width = r.width();
    let per_tile: Vec<Vec<SplatGrad>> = (0..r.tile_count())
        .into_par_iter()
        .map(|t| {
            let mut acc = vec![SplatGrad::default(); r.tile_splats(t).len()];
            if acc.is_empty() {
                return acc;
            }
            let (x0, y0, x1, y1) = r.tile_bounds(t);
            let mut buf = Vec::new();
            let mut phi = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    let gp = &pixel_grads[y * width + x];
                    if gp.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    r.contribs(t, x, y, &mut buf);
                    phi.clear();
                    phi.extend(buf.iter().map(|c| {
                        let s = &r.splats[c.splat as usize];
                        gp[0] * s.color[0] + gp[1] * s.color[1] + gp[2] * s.color[2] + gp[3] * s.depth + gp[4]
                    }));
                    let mut suffix = 0.0;
                    for (c, &f) in buf.iter().zip(&phi).rev() {
                        let s = &r.splats[c.splat as usize];
                        let sg = &mut acc[c.slot as usize];
                        let wgt = c.t * c.alpha;
                        for k in 0..3 {
                            sg.color[k] += wgt * gp[k];
                        }
                        sg.depth += wgt * gp[3];
                        sg.footprint += 1.0;
                        let dalpha = c.t * f - suffix / (1.0 - c.alpha);
                        suffix += wgt * f;
                        if c.clipped {
                            continue;
                        }
                        sg.opacity += dalpha * c.g;
                        let dpow = dalpha * s.opacity * c.g;
                        let dx = x as f64 - s.mean.x;
                        let dy = y as f64 - s.mean.y;
                        let [a, b, cc] = s.conic;
                        sg.conic[0] += -0.5 * dpow * dx * dx;
                        sg.conic[1] += -dpow * dx * dy;
                        sg.conic[2] += -0.5 * dpow * dy * dy;
                        sg.mean2d[0] += dpow * (a * dx + b * dy);
                        sg.mean2d[1] += dpow * (b * dx + cc * dy);
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = vec![SplatGrad::default(); r.splats.len()];
    for (t, acc) in per_tile.iter().enumerate() {
        for (slot, g) in acc.iter().enumerate() {
            out[r.tile_splats(t)[slot] as usize].add(g);
        }
    }
    out
}

/// Chains a splat gradient back to the Gaussian parameters.
fn splat_to_params(
    g: &Gaussian3D,
    s: &crate::renderer::Splat2D,
    sg: &SplatGrad,
    camera: &Camera,
    out: &mut [f64; PARAMS],
) {
    let k = &camera.intrinsics;
    let w = camera.extrinsics.rotation.transpose();
    let (x, y, z) = (s.p_cam.x, s.p_cam.y, s.p_cam.z);
    let [a, b, c] = s.conic;
    let conic = Matrix2::new(a, b, b, c);
    let g_conic = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let g_cov2 = -(conic * g_conic * conic);

    let jw = s.jw;
    let sigma = g.covariance();
    let g_sigma: Matrix3<f64> = jw.transpose() * g_cov2 * jw;

    // Camera-space mean: through the screen mean, the depth channel and J.
    let sigma_c = w * sigma * w.transpose();
    let jmat = nalgebra::Matrix2x3::new(k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z));
    let g_j = 2.0 * g_cov2 * jmat * sigma_c;
    let mut gp = Vector3::new(
        sg.mean2d[0] * k.fx / z,
        sg.mean2d[1] * k.fy / z,
        -sg.mean2d[0] * k.fx * x / (z * z) - sg.mean2d[1] * k.fy * y / (z * z) + sg.depth,
    );
    gp.x += g_j[(0, 2)] * (-k.fx / (z * z));
    gp.y += g_j[(1, 2)] * (-k.fy / (z * z));
    gp.z += g_j[(0, 0)] * (-k.fx / (z * z))
        + g_j[(0, 2)] * (2.0 * k.fx * x / (z * z * z))
        + g_j[(1, 1)] * (-k.fy / (z * z))
        + g_j[(1, 2)] * (2.0 * k.fy * y / (z * z * z));
    let gm = camera.extrinsics.rotation * gp;
    for i in 0..3 {
        out[MEAN + i] += gm[i];
    }

    // Σ = M Mᵀ with M = R·S.
    let rot = g.rotation.to_rotation_matrix().into_inner();
    let scales = g.scales();
    let m = rot * Matrix3::from_diagonal(&scales);
    let g_m = 2.0 * g_sigma * m;
    let g_s = rot.transpose() * g_m;
    for i in 0..3 {
        out[SCALE + i] += g_s[(i, i)] * scales[i];
    }
    let g_r = g_m * Matrix3::from_diagonal(&scales);
    let gq = quaternion_grad(g.rotation.quaternion(), &g_r);
    for i in 0..4 {
        out[ROT + i] += gq[i];
    }

    let o = s.opacity;
    out[OPAC] += sg.opacity * o * (1.0 - o);
    for i in 0..3 {
        out[COLOR + i] += sg.color[i];
    }
}

/// Gradient with respect to the raw `(w, x, y, z)` of a unit quaternion,
/// projected onto the tangent of the unit sphere.
fn quaternion_grad(q: &Quaternion<f64>, gr: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let g = |r: usize, c: usize| gr[(r, c)];
    let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
        - 2.0 * x * g(2, 2));
    let dy = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
        - 2.0 * y * g(2, 2));
    let dz = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) + y * g(1, 2)
        + x * g(2, 0)
        + y * g(2, 1));
    let v = Vector4::new(dw, dx, dy, dz);
    let qv = Vector4::new(w, x, y, z);
    v - qv * qv.dot(&v)
}

/// Loss and analytic gradients with respect to every Gaussian parameter.
pub fn loss_and_gradients(
    gaussians: &[Gaussian3D],
    targets: &[FitTarget],
    weights: &LossWeights,
) -> Result<(LossBreakdown, Gradients)> {
    check_targets(targets, weights)?;
    let n = gaussians.len();
    let per_view: Vec<(LossBreakdown, Gradients)> = targets
        .par_iter()
        .map(|t| {
            let r = Rasterizer::new(gaussians, &t.camera);
            let out = r.render();
            let (l, pg) = view_loss(&out, t, weights);
            let sgs = backward_view(&r, &pg);
            let mut grads = Gradients::zeros(n);
            for (s, sg) in r.splats().iter().zip(&sgs) {
                splat_to_params(&gaussians[s.source], s, sg, &t.camera, &mut grads.params[s.source]);
                if sg.footprint > 0.0 {
                    let norm = (sg.mean2d[0].powi(2) + sg.mean2d[1].powi(2)).sqrt();
                    grads.screen[s.source] += norm / sg.footprint;
                    grads.visible[s.source] += 1;
                }
            }
            (l, grads)
        })
        .collect();
    let mut loss = LossBreakdown {
        opacity: opacity_term(gaussians),
        ..Default::default()
    };
    let mut grads = Gradients::zeros(n);
    for (l, g) in per_view {
        loss.sp += l.sp;
        loss.mask += l.mask;
        loss.depth += l.depth;
        for i in 0..n {
            for p in 0..PARAMS {
                grads.params[i][p] += g.params[i][p];
            }
            grads.screen[i] += g.screen[i];
            grads.visible[i] += g.visible[i];
        }
    }
    for (g, row) in gaussians.iter().zip(grads.params.iter_mut()) {
        let o = g.opacity();
        let d = o - 0.5;
        row[OPAC] += weights.opacity * (-d * d / 0.04).exp() * (-2.0 * d / 0.04) * o * (1.0 - o);
    }
    Ok((loss.finish(weights), grads))
}

/// One row of the optimization log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub iteration: usize,
    pub total: f64,
    pub sp: f64,
    pub mask: f64,
    pub depth: f64,
    pub opacity: f64,
    pub gaussian_count: usize,
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    write_log_to(crate::io::create(path)?, rows).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Clone, Debug)]
pub struct OptimResult {
    pub gaussians: Vec<Gaussian3D>,
    pub initial: LossBreakdown,
    pub final_loss: LossBreakdown,
    pub log: Vec<LogRow>,
}

#[derive(Clone, Copy)]
struct AdamState {
    m: [f64; PARAMS],
    v: [f64; PARAMS],
    screen: f64,
    seen: u32,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            m: [0.0; PARAMS],
            v: [0.0; PARAMS],
            screen: 0.0,
            seen: 0,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;

fn apply_step(g: &mut Gaussian3D, delta: &[f64; PARAMS]) {
    for i in 0..3 {
        g.mean[i] += delta[MEAN + i];
        g.log_scales[i] += delta[SCALE + i];
    }
    let q = g.rotation.quaternion();
    let raw = Quaternion::new(q.w + delta[ROT], q.i + delta[ROT + 1], q.j + delta[ROT + 2], q.k + delta[ROT + 3]);
    g.rotation = UnitQuaternion::from_quaternion(raw);
    g.opacity_logit += delta[OPAC];
    for i in 0..3 {
        g.color[i] += delta[COLOR + i];
    }
    clamp_params(g);
}

fn clamp_params(g: &mut Gaussian3D) {
    let (lo, hi) = ((MIN_SCALE * 1.0001).ln(), (MAX_SCALE * 0.9999).ln());
    for i in 0..3 {
        g.log_scales[i] = g.log_scales[i].clamp(lo, hi);
        g.color[i] = g.color[i].clamp(0.0, 1.0);
    }
    g.opacity_logit = g.opacity_logit.clamp(-30.0, 30.0);
}

/// Runs the fit. The returned set is the lowest-loss iterate observed, so
/// the final loss never exceeds the initial one.
pub fn optimize(
    gaussians: Vec<Gaussian3D>,
    targets: &[FitTarget],
    weights: &LossWeights,
    cfg: &OptimConfig,
) -> Result<OptimResult> {
    cfg.validate()?;
    check_targets(targets, weights)?;
    if targets.len() < 2 {
        return Err(Error::InsufficientViews {
            needed: 2,
            got: targets.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lr = lr_table(cfg);
    let mut gs = gaussians;
    for g in gs.iter_mut() {
        clamp_params(g);
    }
    let mut state = vec![AdamState::default(); gs.len()];
    let mut log = Vec::with_capacity(cfg.iterations + 1);
    let mut best: Option<(f64, Vec<Gaussian3D>, LossBreakdown)> = None;
    let mut initial = None;
    let mut step = 0i32;

    for it in 0..cfg.iterations {
        let (loss, grads) = loss_and_gradients(&gs, targets, weights)?;
        loss.check_finite(it)?;
        initial.get_or_insert(loss);
        log.push(LogRow {
            iteration: it,
            total: loss.total,
            sp: loss.sp,
            mask: loss.mask,
            depth: loss.depth,
            opacity: loss.opacity,
            gaussian_count: gs.len(),
        });
        if best.as_ref().is_none_or(|b| loss.total < b.0) {
            best = Some((loss.total, gs.clone(), loss));
        }
        step += 1;
        let bc1 = 1.0 - BETA1.powi(step);
        let bc2 = 1.0 - BETA2.powi(step);
        for ((g, st), (row, (&scr, &vis))) in gs
            .iter_mut()
            .zip(state.iter_mut())
            .zip(grads.params.iter().zip(grads.screen.iter().zip(&grads.visible)))
        {
            let mut delta = [0.0; PARAMS];
            for p in 0..PARAMS {
                st.m[p] = BETA1 * st.m[p] + (1.0 - BETA1) * row[p];
                st.v[p] = BETA2 * st.v[p] + (1.0 - BETA2) * row[p] * row[p];
                let mhat = st.m[p] / bc1;
                let vhat = st.v[p] / bc2;
                delta[p] = -lr[p] * mhat / (vhat.sqrt() + ADAM_EPS);
            }
            apply_step(g, &delta);
            st.screen += scr;
            st.seen += vis;
        }
        let last = it + 1 == cfg.iterations;
        if (it + 1) % cfg.densify_interval == 0 && !last {
            densify(&mut gs, &mut state, cfg, &mut rng);
        }
    }
    let final_loss = compute_losses(&gs, targets, weights)?;
    final_loss.check_finite(cfg.iterations)?;
    log.push(LogRow {
        iteration: cfg.iterations,
        total: final_loss.total,
        sp: final_loss.sp,
        mask: final_loss.mask,
        depth: final_loss.depth,
        opacity: final_loss.opacity,
        gaussian_count: gs.len(),
    });
    let initial = initial.unwrap_or(final_loss);
    let (gaussians, final_loss) = match best {
        Some((total, set, loss)) if total < final_loss.total => (set, loss),
        _ => (gs, final_loss),
    };
    Ok(OptimResult {
        gaussians,
        initial,
        final_loss,
        log,
    })
}

fn lr_table(cfg: &OptimConfig) -> [f64; PARAMS] {
    let mut lr = [0.0; PARAMS];
    lr[MEAN..SCALE].fill(cfg.lr_mean);
    lr[SCALE..ROT].fill(cfg.lr_log_scale);
    lr[ROT..OPAC].fill(cfg.lr_rotation);
    lr[OPAC] = cfg.lr_opacity;
    lr[COLOR..].fill(cfg.lr_color);
    lr
}

/// Prunes transparent Gaussians and splits those with large accumulated
/// screen-space gradients into two smaller children.
fn densify(gs: &mut Vec<Gaussian3D>, state: &mut Vec<AdamState>, cfg: &OptimConfig, rng: &mut ChaCha8Rng) {
    let mut next = Vec::with_capacity(gs.len());
    let mut next_state = Vec::with_capacity(gs.len());
    let mut budget = cfg.max_gaussians.saturating_sub(gs.len());
    let shrink = 0.6f64.ln();
    for (g, st) in gs.drain(..).zip(state.drain(..)) {
        if g.opacity() < cfg.prune_opacity {
            continue;
        }
        let avg = if st.seen > 0 { st.screen / st.seen as f64 } else { 0.0 };
        if avg > cfg.grow_gradient && budget > 0 {
            budget -= 1;
            let rot = g.rotation.to_rotation_matrix();
            let scales = g.scales();
            for _ in 0..2 {
                let eps = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                let mut child = g.clone();
                child.mean = g.mean + rot * scales.component_mul(&eps);
                child.log_scales = g.log_scales.add_scalar(shrink);
                clamp_params(&mut child);
                next.push(child);
                next_state.push(AdamState::default());
            }
        } else {
            next.push(g);
            next_state.push(AdamState {
                screen: 0.0,
                seen: 0,
                ..st
            });
        }
    }
    *gs = next;
    *state = next_state;
}

/// Writes the log rows as CSV to any writer.
pub fn write_log_to<W: Write>(w: W, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Extrinsics, Intrinsics};
    use crate::gaussians::logit;
    use approx::assert_relative_eq;

    fn cam_at(eye: Vector3<f64>) -> Camera {
        Camera::new(
            Intrinsics::new(40.0, 40.0, 15.5, 15.5, 32, 32).unwrap(),
            Extrinsics::look_at(eye, Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0)).unwrap(),
        )
    }

    fn disk(cx: f64, cy: f64, r: f64) -> Mask {
        Mask::from_fn(32, 32, |x, y| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
    }

    fn target(cam: Camera, masks: Vec<Mask>) -> FitTarget {
        let sp = RgbImage::new(32, 32, [0.6, 0.3, 0.2]);
        FitTarget::new(cam, sp, masks).unwrap()
    }

    #[test]
    fn opacity_half_contributes_one() {
        let g = Gaussian3D::isotropic(Vector3::zeros(), 0.1, 0.5, [0.0; 3]);
        assert_relative_eq!(opacity_term(&[g]), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn empty_render_mask_term_is_area() {
        let m = disk(16.0, 16.0, 5.0);
        let area = m.count() as f64;
        let t = target(cam_at(Vector3::new(4.0, 0.0, 0.0)), vec![m]);
        let l = compute_losses(&[], &[t], &LossWeights::default()).unwrap();
        assert_relative_eq!(l.mask, area, epsilon = 1e-12);
        assert_eq!(l.depth, 0.0);
        assert_relative_eq!(l.total, 1.0 * l.sp + 0.5 * l.mask, epsilon = 1e-9);
    }

    #[test]
    fn missing_instances_is_config_error() {
        let t = FitTarget::new(
            cam_at(Vector3::new(4.0, 0.0, 0.0)),
            RgbImage::new(32, 32, [0.0; 3]),
            vec![],
        )
        .unwrap();
        let e = compute_losses(&[], &[t], &LossWeights::default()).unwrap_err();
        assert!(e.is_config());
    }

    #[test]
    fn single_view_rejected() {
        let t = target(cam_at(Vector3::new(4.0, 0.0, 0.0)), vec![disk(16.0, 16.0, 3.0)]);
        let e = optimize(vec![], &[t], &LossWeights::default(), &OptimConfig::default()).unwrap_err();
        assert!(matches!(e, Error::InsufficientViews { .. }));
    }

    #[test]
    fn prune_only_returns_empty() {
        let t1 = target(cam_at(Vector3::new(4.0, 0.0, 0.0)), vec![disk(16.0, 16.0, 3.0)]);
        let t2 = target(cam_at(Vector3::new(0.0, 4.0, 0.0)), vec![disk(16.0, 16.0, 3.0)]);
        let mut g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 3.0), 0.05, 0.5, [0.5; 3]);
        g.opacity_logit = logit(1e-4);
        let cfg = OptimConfig {
            iterations: 3,
            densify_interval: 1,
            lr_opacity: 1e-9,
            ..Default::default()
        };
        let w = LossWeights {
            opacity: 0.0,
            ..Default::default()
        };
        let out = optimize(vec![g], &[t1, t2], &w, &cfg).unwrap();
        assert!(out.gaussians.is_empty() || out.final_loss.total <= out.initial.total);
        assert!(out.final_loss.total <= out.initial.total + 1e-12);
    }

    #[test]
    fn loss_decreases_on_simple_fit() {
        let cams = [Vector3::new(4.0, 0.0, 0.0), Vector3::new(0.0, 4.0, 0.0)];
        let targets: Vec<_> = cams
            .iter()
            .map(|&e| target(cam_at(e), vec![disk(15.5, 15.5, 4.0)]))
            .collect();
        let g = Gaussian3D::isotropic(Vector3::new(0.1, -0.1, 0.1), 0.2, 0.3, [0.2; 3]);
        let cfg = OptimConfig {
            iterations: 60,
            lr_mean: 5e-3,
            densify_interval: 1000,
            ..Default::default()
        };
        let out = optimize(vec![g], &targets, &LossWeights::default(), &cfg).unwrap();
        assert!(out.final_loss.total < 0.5 * out.initial.total, "{:?} {:?}", out.initial, out.final_loss);
    }

    #[test]
    fn quaternion_gradient_matches_finite_differences() {
        let q = UnitQuaternion::from_euler_angles(0.3, -0.2, 0.7);
        let gr = Matrix3::new(0.3, -1.0, 0.5, 0.2, 0.7, -0.4, 1.1, 0.05, -0.6);
        let f = |q: &Quaternion<f64>| {
            let r = UnitQuaternion::from_quaternion(*q).to_rotation_matrix().into_inner();
            r.component_mul(&gr).sum()
        };
        let an = quaternion_grad(q.quaternion(), &gr);
        let h = 1e-6;
        for i in 0..4 {
            let mut p = *q.quaternion();
            let mut m = *q.quaternion();
            p.coords[(i + 3) % 4] += h;
            m.coords[(i + 3) % 4] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - an[i]).abs() < 1e-6, "{i}: {fd} vs {}", an[i]);
        }
    }

    #[test]
    fn log_csv_has_header() {
        let mut buf = Vec::new();
        write_log_to(
            &mut buf,
            &[LogRow {
                iteration: 0,
                total: 1.0,
                sp: 0.5,
                mask: 1.0,
                depth: 0.0,
                opacity: 0.0,
                gaussian_count: 3,
            }],
        )
        .unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("iteration,total,sp,mask,depth,opacity,gaussian_count"));
    }
}
