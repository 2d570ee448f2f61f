//! The 3D Gaussian scene representation.
//!
//! Gaussians are created two ways: along rays through superpixel centers
//! during training (then carved by the background masks), and one per
//! back-projected pixel when fusing predicted depth at inference.

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::{DepthImage, Mask, Rgb};
use crate::superpixel::SuperpixelMap;
use crate::view::CameraView;

pub const MIN_SCALE: f64 = 1e-6;
pub const MAX_SCALE: f64 = 10.0;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    /// Natural log of the per-axis standard deviations (m).
    pub log_scales: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub opacity_logit: f64,
    /// Degree-0 color.
    pub color: Rgb,
    pub ped_id: Option<u32>,
}

impl Gaussian3D {
    pub fn isotropic(mean: Vector3<f64>, scale: f64, opacity: f64, color: Rgb) -> Self {
        Self {
            mean,
            log_scales: Vector3::repeat(scale.clamp(MIN_SCALE * 1.0001, MAX_SCALE * 0.9999).ln()),
            rotation: UnitQuaternion::identity(),
            opacity_logit: logit(opacity),
            color,
            ped_id: None,
        }
    }

    #[inline]
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    #[inline]
    pub fn scales(&self) -> Vector3<f64> {
        self.log_scales.map(f64::exp)
    }

    /// `Σ = R·diag(s)²·Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s2 = Matrix3::from_diagonal(&self.scales().map(|s| s * s));
        r * s2 * r.transpose()
    }

    /// Checks the representation invariants.
    pub fn is_valid(&self) -> bool {
        let s_ok = self
            .scales()
            .iter()
            .all(|&s| s > MIN_SCALE && s < MAX_SCALE);
        let q_ok = (self.rotation.quaternion().norm() - 1.0).abs() < 1e-9;
        let o = self.opacity();
        s_ok && q_ok
            && o > 0.0
            && o < 1.0
            && self.mean.iter().all(|v| v.is_finite())
            && self.color.iter().all(|c| c.is_finite())
    }

    /// Clamps log-scales into the valid range and renormalizes the quaternion.
    pub fn sanitize(&mut self) {
        let (lo, hi) = ((MIN_SCALE * 1.0001).ln(), (MAX_SCALE * 0.9999).ln());
        self.log_scales = self.log_scales.map(|v| v.clamp(lo, hi));
        self.rotation = UnitQuaternion::new_normalize(*self.rotation.quaternion());
        self.opacity_logit = self.opacity_logit.clamp(-30.0, 30.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaySamplingConfig {
    pub samples_per_ray: usize,
    pub t_near: f64,
    pub t_far: f64,
    pub initial_opacity: f64,
}

impl Default for RaySamplingConfig {
    fn default() -> Self {
        Self {
            samples_per_ray: 16,
            t_near: 0.5,
            t_far: 60.0,
            initial_opacity: 0.01,
        }
    }
}

impl RaySamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_ray == 0 {
            return Err(Error::Config("samples_per_ray must be >= 1".into()));
        }
        if !(self.t_near > 0.0 && self.t_near < self.t_far) {
            return Err(Error::Config(format!(
                "ray range must satisfy 0 < t_near < t_far (got {}, {})",
                self.t_near, self.t_far
            )));
        }
        if !(self.initial_opacity > 0.0 && self.initial_opacity < 1.0) {
            return Err(Error::Config("initial_opacity must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Axis-aligned box bounding the scene volume.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// Parametric interval `[t0, t1]` where `origin + t·dir` is inside the box.
    pub fn ray_interval(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let (mut ta, mut tb) = ((self.min[a] - origin[a]) * inv, (self.max[a] - origin[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t0 <= t1).then_some((t0, t1))
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

/// Radius of the circle with the area of `n` pixels of size `dx × dy`.
pub fn superpixel_radius(n: usize, dx: f64, dy: f64) -> f64 {
    (n as f64 * dx * dy / std::f64::consts::PI).sqrt()
}

/// Radius of a sphere at distance `t` from the ray origin `o` that fills the
/// cone spanned by a circle of radius `r` centered at `c` on an image plane
/// at focal distance `f`.
pub fn init_scale(t: f64, f: f64, r: f64, c: &Vector3<f64>, o: &Vector3<f64>) -> Result<f64> {
    let dist = (c - o).norm();
    if !(t > 0.0) {
        return Err(Error::DegenerateCone(format!("t must be > 0, got {t}")));
    }
    if !(f > 0.0) || !(r >= 0.0) {
        return Err(Error::DegenerateCone(format!("need f > 0 and r >= 0 (f={f}, r={r})")));
    }
    if !(dist > f) {
        return Err(Error::DegenerateCone(format!(
            "center distance {dist} must exceed focal length {f}"
        )));
    }
    let off_axis2 = dist * dist - f * f;
    if !(off_axis2 > r * r) {
        return Err(Error::DegenerateCone(format!(
            "circle of radius {r} straddles the principal point"
        )));
    }
    let edge = off_axis2.sqrt() - r;
    Ok(t * f * r / (dist * (edge * edge + f * f).sqrt()))
}

/// Sphere scale for a circle on the unit-depth image plane; falls back to the
/// on-axis closed form when the circle covers the principal point.
fn cone_scale(t: f64, r: f64, c: &Vector3<f64>, o: &Vector3<f64>) -> f64 {
    init_scale(t, 1.0, r, c, o).unwrap_or_else(|_| t * r / (r * r + 1.0).sqrt())
}

/// Casts rays through superpixel centroids and places `samples_per_ray`
/// spherical Gaussians uniformly in `t` along each ray. When `bounds` is
/// given the sampling interval is clipped to it; rays missing the box
/// produce no Gaussians.
pub fn init_from_superpixels(
    views: &[CameraView],
    maps: &[SuperpixelMap],
    cfg: &RaySamplingConfig,
    bounds: Option<&Aabb>,
) -> Result<Vec<Gaussian3D>> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::InsufficientViews { needed: 1, got: 0 });
    }
    if views.len() != maps.len() {
        return Err(Error::LengthMismatch {
            what: "views vs superpixel maps",
            left: views.len(),
            right: maps.len(),
        });
    }
    let mut out = Vec::new();
    for (view, map) in views.iter().zip(maps) {
        let cam = &view.camera;
        let o = cam.center();
        let (dx, dy) = cam.pixel_pitch_unit_depth();
        for seg in &map.segments {
            let dir = cam.ray_direction(&seg.centroid);
            let c = o + cam.extrinsics.rotation * cam.pixel_direction_camera(&seg.centroid);
            let r = superpixel_radius(seg.count, dx, dy);
            let (mut t0, mut t1) = (cfg.t_near, cfg.t_far);
            if let Some(b) = bounds {
                match b.ray_interval(&o, &dir) {
                    Some((a, z)) => {
                        t0 = t0.max(a);
                        t1 = t1.min(z);
                    }
                    None => continue,
                }
                if t0 > t1 {
                    continue;
                }
            }
            let n = cfg.samples_per_ray;
            for k in 0..n {
                let t = if n == 1 {
                    0.5 * (t0 + t1)
                } else {
                    t0 + (t1 - t0) * k as f64 / (n - 1) as f64
                };
                let s = cone_scale(t, r, &c, &o);
                out.push(Gaussian3D::isotropic(
                    o + dir * t,
                    s,
                    cfg.initial_opacity,
                    seg.mean_color,
                ));
            }
        }
    }
    Ok(out)
}

/// Ray sampling restricted to `band` meters of depth around each
/// superpixel's median predicted depth. Superpixels without a finite
/// prediction fall back to the full `[t_near, t_far]` range.
pub fn init_from_depth(
    views: &[CameraView],
    maps: &[SuperpixelMap],
    depths: &[DepthImage],
    cfg: &RaySamplingConfig,
    band: f64,
    band_samples: usize,
    opacity: f64,
) -> Result<Vec<Gaussian3D>> {
    cfg.validate()?;
    if !(band > 0.0) || band_samples == 0 || !(opacity > 0.0 && opacity < 1.0) {
        return Err(Error::Config("depth band and band samples must be > 0 and opacity in (0, 1)".into()));
    }
    if views.len() != maps.len() || views.len() != depths.len() {
        return Err(Error::LengthMismatch {
            what: "views vs superpixel maps vs depths",
            left: views.len(),
            right: maps.len().min(depths.len()),
        });
    }
    let mut out = Vec::new();
    for ((view, map), depth) in views.iter().zip(maps).zip(depths) {
        let cam = &view.camera;
        let o = cam.center();
        let (dx, dy) = cam.pixel_pitch_unit_depth();
        let mut per_seg: Vec<Vec<f64>> = vec![Vec::new(); map.segments.len()];
        for (x, y, l) in map.labels.iter_xy() {
            if let Some(l) = l {
                let d = *depth.get(x, y);
                if d.is_finite() && d > 0.0 {
                    per_seg[*l as usize].push(d);
                }
            }
        }
        for (seg, samples) in map.segments.iter().zip(per_seg.iter_mut()) {
            let cdir = cam.pixel_direction_camera(&seg.centroid);
            // Depth is camera z; the unit-z direction converts it to range.
            let scale = cdir.norm();
            let dir = cam.ray_direction(&seg.centroid);
            let c = o + cam.extrinsics.rotation * cdir;
            let r = superpixel_radius(seg.count, dx, dy);
            let (t0, t1, alpha, n) = if samples.is_empty() {
                (cfg.t_near, cfg.t_far, cfg.initial_opacity, cfg.samples_per_ray)
            } else {
                samples.sort_by(f64::total_cmp);
                let d = samples[samples.len() / 2];
                (((d - band) * scale).max(cfg.t_near), (d + band) * scale, opacity, band_samples)
            };
            for k in 0..n {
                let t = if n == 1 {
                    0.5 * (t0 + t1)
                } else {
                    t0 + (t1 - t0) * k as f64 / (n - 1) as f64
                };
                let s = cone_scale(t, r, &c, &o);
                out.push(Gaussian3D::isotropic(o + dir * t, s, alpha, seg.mean_color));
            }
        }
    }
    Ok(out)
}

/// True when the Gaussian's mean lands on background in some view that sees it.
pub fn projects_to_background(g: &Gaussian3D, views: &[CameraView], foregrounds: &[Mask]) -> bool {
    views.iter().zip(foregrounds).any(|(v, fg)| {
        let Ok(p) = v.camera.project(&g.mean) else {
            return false;
        };
        if p.depth <= 0.0 || !v.camera.intrinsics.contains(&p.pixel) {
            return false;
        }
        !fg.nearest(p.pixel.x, p.pixel.y).copied().unwrap_or(false)
    })
}

/// Removes Gaussians whose mean projects onto background (`M^v = 0`) in any
/// view that sees it. Gaussians outside every frustum are kept.
pub fn cull_background(gaussians: Vec<Gaussian3D>, views: &[CameraView]) -> Vec<Gaussian3D> {
    let fgs: Vec<Mask> = views.iter().map(|v| v.foreground()).collect();
    let keep: Vec<bool> = gaussians
        .par_iter()
        .map(|g| !projects_to_background(g, views, &fgs))
        .collect();
    gaussians
        .into_iter()
        .zip(keep)
        .filter_map(|(g, k)| k.then_some(g))
        .collect()
}

/// Where a fused point came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointSource {
    /// Index into the camera list passed alongside.
    pub view: usize,
    pub pixel: Vector2<f64>,
    /// Camera-space depth (m).
    pub depth: f64,
}

pub const FUSED_OPACITY: f64 = 0.99;

/// One Gaussian per fused point: the pixel color, a ray-aligned frame and a
/// scale equal to the single-pixel footprint at the point's range.
pub fn from_point_cloud(
    points: &[Vector3<f64>],
    colors: &[Rgb],
    sources: &[PointSource],
    cameras: &[Camera],
) -> Result<Vec<Gaussian3D>> {
    if points.len() != colors.len() {
        return Err(Error::LengthMismatch {
            what: "points vs colors",
            left: points.len(),
            right: colors.len(),
        });
    }
    if points.len() != sources.len() {
        return Err(Error::LengthMismatch {
            what: "points vs sources",
            left: points.len(),
            right: sources.len(),
        });
    }
    let z = Vector3::z();
    points
        .par_iter()
        .zip(colors.par_iter())
        .zip(sources.par_iter())
        .map(|((p, c), src)| {
            let cam = cameras.get(src.view).ok_or_else(|| {
                Error::Data(format!("point source references unknown view {}", src.view))
            })?;
            let o = cam.center();
            let (dx, dy) = cam.pixel_pitch_unit_depth();
            let r = superpixel_radius(1, dx, dy);
            let cdir = cam.pixel_direction_camera(&src.pixel);
            let ray = cam.extrinsics.rotation * cdir;
            let t = src.depth * ray.norm();
            let s = cone_scale(t, r, &(o + ray), &o);
            let mut g = Gaussian3D::isotropic(*p, s, FUSED_OPACITY, *c);
            g.rotation = UnitQuaternion::rotation_between(&z, &ray.normalize())
                .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
            Ok(g)
        })
        .collect()
}

/// Back-projects every pixel of `mask` with a valid positive depth.
pub fn backproject_mask(
    view_index: usize,
    view: &CameraView,
    depth: &DepthImage,
    mask: &Mask,
) -> (Vec<Vector3<f64>>, Vec<Rgb>, Vec<PointSource>) {
    let mut pts = Vec::new();
    let mut cols = Vec::new();
    let mut srcs = Vec::new();
    for (x, y, &b) in mask.iter_xy() {
        if !b {
            continue;
        }
        let d = *depth.get(x, y);
        if !(d > 0.0) || !d.is_finite() {
            continue;
        }
        let px = Vector2::new(x as f64, y as f64);
        let p = view.camera.unproject(&px, d).expect("positive depth");
        pts.push(p);
        cols.push(*view.image.get(x, y));
        srcs.push(PointSource {
            view: view_index,
            pixel: px,
            depth: d,
        });
    }
    (pts, cols, srcs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Extrinsics, Intrinsics};
    use crate::image::RgbImage;
    use crate::superpixel::Segment;
    use crate::image::Grid;
    use approx::assert_relative_eq;

    #[test]
    fn radius_examples() {
        assert_relative_eq!(superpixel_radius(400, 0.005, 0.005), 0.056_418_958, epsilon = 1e-8);
        let n = (std::f64::consts::PI * 1e4).round() as usize;
        assert_relative_eq!(superpixel_radius(n, 0.01, 0.01), 1.0, epsilon = 1e-4);
        let a = superpixel_radius(50, 0.01, 0.01);
        let b = superpixel_radius(50, 0.03, 0.03);
        assert_relative_eq!(b, 3.0 * a, epsilon = 1e-12);
    }

    #[test]
    fn init_scale_worked_value() {
        // c at distance sqrt(2) from o on a plane at focal distance 1.
        let o = Vector3::zeros();
        let c = Vector3::new(1.0, 0.0, 1.0);
        let s = init_scale(2.0, 1.0, 0.1, &c, &o).unwrap();
        assert_relative_eq!(s, 0.105_117, epsilon = 1e-6);
        let s2 = init_scale(4.0, 1.0, 0.1, &c, &o).unwrap();
        assert_relative_eq!(s2, 2.0 * s, epsilon = 1e-12);
        let tiny = init_scale(2.0, 1.0, 1e-9, &c, &o).unwrap();
        assert!(tiny < 1e-8);
    }

    #[test]
    fn init_scale_preconditions() {
        let o = Vector3::zeros();
        assert!(init_scale(1.0, 1.0, 0.1, &Vector3::new(0.0, 0.0, 1.0), &o).is_err());
        assert!(init_scale(1.0, 1.0, 0.5, &Vector3::new(0.3, 0.0, 1.0), &o).is_err());
        assert!(init_scale(0.0, 1.0, 0.1, &Vector3::new(1.0, 0.0, 1.0), &o).is_err());
    }

    fn simple_view(masks: Vec<Mask>) -> CameraView {
        let k = Intrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        CameraView {
            id: 0,
            name: "c0".into(),
            camera: Camera::new(k, Extrinsics::identity()),
            image: RgbImage::new(100, 100, [0.5; 3]),
            masks,
            depth: None,
        }
    }

    fn one_segment_map(centroid: Vector2<f64>, count: usize) -> SuperpixelMap {
        SuperpixelMap {
            labels: Grid::new(100, 100, None),
            segments: vec![Segment {
                pedestrian: 0,
                segment: 0,
                count,
                mean_color: [0.2, 0.4, 0.6],
                centroid,
            }],
        }
    }

    #[test]
    fn ray_init_collinear_and_reprojects() {
        let view = simple_view(vec![]);
        let centroid = Vector2::new(63.2, 41.7);
        let map = one_segment_map(centroid, 40);
        let cfg = RaySamplingConfig {
            samples_per_ray: 8,
            t_near: 1.0,
            t_far: 9.0,
            initial_opacity: 0.01,
        };
        let gs = init_from_superpixels(std::slice::from_ref(&view), &[map], &cfg, None).unwrap();
        assert_eq!(gs.len(), 8);
        let dir = view.camera.ray_direction(&centroid);
        for g in &gs {
            assert!(g.mean.cross(&dir).norm() < 1e-12);
            let p = view.camera.project(&g.mean).unwrap();
            assert!((p.pixel - centroid).norm() < 0.5);
            assert_relative_eq!(g.opacity(), 0.01, epsilon = 1e-12);
            assert_eq!(g.color, [0.2, 0.4, 0.6]);
            assert!(g.is_valid());
        }
        // Scale grows linearly with distance along the ray.
        let s0 = gs[0].scales().x / gs[0].mean.norm();
        let s7 = gs[7].scales().x / gs[7].mean.norm();
        assert_relative_eq!(s0, s7, epsilon = 1e-9);
    }

    #[test]
    fn depth_init_stays_in_band() {
        let view = simple_view(vec![]);
        let mut map = one_segment_map(Vector2::new(50.0, 50.0), 9);
        map.segments.push(Segment {
            segment: 1,
            centroid: Vector2::new(20.0, 70.0),
            ..map.segments[0].clone()
        });
        for y in 48..51 {
            for x in 48..51 {
                map.labels.set(x, y, Some(0));
            }
        }
        map.labels.set(20, 70, Some(1));
        // Segment 0 has depth 3 (one outlier); segment 1 has no prediction.
        let mut depth = DepthImage::new(100, 100, f64::NAN);
        for y in 48..51 {
            for x in 48..51 {
                depth.set(x, y, 3.0);
            }
        }
        depth.set(48, 48, 9.0);
        let cfg = RaySamplingConfig::default();
        let gs = init_from_depth(&[view], &[map], &[depth.clone()], &cfg, 0.3, 4, 0.1).unwrap();
        assert_eq!(gs.len(), 4 + cfg.samples_per_ray);
        for g in &gs[..4] {
            assert!((2.7 - 1e-9..=3.3 + 1e-9).contains(&g.mean.z), "z = {}", g.mean.z);
            assert_relative_eq!(g.opacity(), 0.1, epsilon = 1e-12);
        }
        for g in &gs[4..] {
            assert_relative_eq!(g.opacity(), cfg.initial_opacity, epsilon = 1e-12);
        }
        let bad = init_from_depth(&[simple_view(vec![])], &[one_segment_map(Vector2::new(1.0, 1.0), 1)], &[depth], &cfg, 0.0, 4, 0.1);
        assert!(bad.unwrap_err().is_config());
    }

    #[test]
    fn ray_init_count() {
        let views = vec![simple_view(vec![]), simple_view(vec![])];
        let mut m2 = one_segment_map(Vector2::new(20.0, 20.0), 10);
        m2.segments.push(m2.segments[0].clone());
        let maps = vec![one_segment_map(Vector2::new(50.0, 50.0), 10), m2];
        let cfg = RaySamplingConfig::default();
        let gs = init_from_superpixels(&views, &maps, &cfg, None).unwrap();
        assert_eq!(gs.len(), 3 * cfg.samples_per_ray);
    }

    #[test]
    fn ray_init_clipped_by_bounds() {
        let view = simple_view(vec![]);
        let map = one_segment_map(Vector2::new(50.0, 50.0), 10);
        let b = Aabb {
            min: [-1.0, -1.0, 2.0],
            max: [1.0, 1.0, 4.0],
        };
        let gs = init_from_superpixels(&[view], &[map], &RaySamplingConfig::default(), Some(&b)).unwrap();
        assert!(gs.iter().all(|g| b.contains(&g.mean)));
        assert_relative_eq!(gs[0].mean.z, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn culling_rules() {
        let fg = Mask::from_fn(100, 100, |x, _| x < 50);
        let views = vec![simple_view(vec![fg.clone()]), simple_view(vec![fg])];
        let inside = Gaussian3D::isotropic(Vector3::new(-0.5, 0.0, 4.0), 0.01, 0.5, [0.0; 3]);
        let outside = Gaussian3D::isotropic(Vector3::new(0.5, 0.0, 4.0), 0.01, 0.5, [0.0; 3]);
        let unseen = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, -4.0), 0.01, 0.5, [0.0; 3]);
        let kept = cull_background(vec![inside.clone(), outside, unseen.clone()], &views);
        assert_eq!(kept, vec![inside, unseen]);
    }

    #[test]
    fn point_cloud_scale_matches_footprint() {
        let k = Intrinsics::new(1000.0, 1000.0, 500.0, 400.0, 1000, 800).unwrap();
        let cam = Camera::new(k, Extrinsics::identity());
        let px = Vector2::new(520.0, 410.0);
        let p = cam.unproject(&px, 4.0).unwrap();
        let src = PointSource {
            view: 0,
            pixel: px,
            depth: 4.0,
        };
        let gs = from_point_cloud(&[p], &[[1.0, 0.0, 0.0]], &[src], &[cam]).unwrap();
        assert_eq!(gs.len(), 1);
        // Linearized footprint: one-pixel circle radius times depth over focal.
        let lin = 4.0 * superpixel_radius(1, 1.0, 1.0) / 1000.0;
        let s = gs[0].scales().x;
        assert!((s - lin).abs() / lin < 0.1, "{s} vs {lin}");
        assert_relative_eq!(gs[0].opacity(), FUSED_OPACITY, epsilon = 1e-12);
        let axis = gs[0].rotation * Vector3::z();
        assert!(axis.cross(&cam.ray_direction(&px)).norm() < 1e-9);

        assert!(from_point_cloud(&[], &[], &[], &[cam]).unwrap().is_empty());
        assert!(from_point_cloud(&[p], &[], &[src], &[cam]).is_err());
    }
}
