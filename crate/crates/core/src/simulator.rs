//! Synthetic multi-camera scenes of capsule pedestrians on a ground plane,
//! with exact depth, instance masks and a ground-truth segmentation oracle.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Extrinsics, GroundRange, Intrinsics};
use crate::compensation::SegmentationOracle;
use crate::depthfilter::DepthLookup;
use crate::error::{Error, Result};
use crate::image::{DepthImage, Grid, Mask, Rgb, RgbImage};
use crate::view::CameraView;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub pedestrians: usize,
    pub area: GroundRange,
    pub radius: f64,
    pub height: f64,
    /// Minimum distance between pedestrian centers; at least `2·radius`.
    pub min_separation: f64,
    pub cameras: usize,
    pub ring_radius: f64,
    pub camera_height: f64,
    /// Height of the point all cameras look at.
    pub look_height: f64,
    pub width: usize,
    pub image_height: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    /// Candidate (upper, lower) color pairs; empty means random colors.
    pub palette: Vec<[Rgb; 2]>,
    /// Relative per-view brightness jitter.
    pub brightness_jitter: f64,
    /// Probability of dropping each visible instance mask.
    pub missed_mask_rate: f64,
    /// Masks smaller than this many pixels are not reported.
    pub min_mask_pixels: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            pedestrians: 10,
            area: GroundRange {
                x_min: -3.0,
                x_max: 3.0,
                y_min: -3.0,
                y_max: 3.0,
            },
            radius: 0.25,
            height: 1.7,
            min_separation: 1.0,
            cameras: 6,
            ring_radius: 8.0,
            camera_height: 4.0,
            look_height: 0.5,
            width: 256,
            image_height: 256,
            fov_deg: 60.0,
            palette: Vec::new(),
            brightness_jitter: 0.1,
            missed_mask_rate: 0.0,
            min_mask_pixels: 20,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.area.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.radius > 0.0) || !(self.height > 2.0 * self.radius) {
            return bad("capsule needs radius > 0 and height > 2·radius");
        }
        if self.min_separation < 2.0 * self.radius {
            return bad("min_separation must be at least 2·radius");
        }
        if self.cameras < 1 || self.width == 0 || self.image_height == 0 {
            return bad("need at least one camera and a non-empty image");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad("fov_deg must be in (0, 180)");
        }
        if !(0.0..=1.0).contains(&self.missed_mask_rate) || !(0.0..1.0).contains(&self.brightness_jitter) {
            return bad("rates must lie in [0, 1]");
        }
        if !(self.camera_height > 0.0) {
            return bad("cameras must be above the ground");
        }
        Ok(())
    }
}

/// A vertical capsule standing on the ground plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Capsule {
    pub center: Vector2<f64>,
    pub radius: f64,
    pub height: f64,
    pub colors: [Rgb; 2],
}

impl Capsule {
    fn axis(&self) -> (Vector3<f64>, Vector3<f64>) {
        (
            Vector3::new(self.center.x, self.center.y, self.radius),
            Vector3::new(self.center.x, self.center.y, self.height - self.radius),
        )
    }

    /// Smallest positive ray parameter at which `o + t·d` hits the capsule.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let (a, b) = self.axis();
        let r = self.radius;
        let mut best = f64::INFINITY;
        // Side wall of the vertical cylinder.
        let (ox, oy) = (o.x - a.x, o.y - a.y);
        let qa = d.x * d.x + d.y * d.y;
        if qa > 1e-18 {
            let qb = 2.0 * (ox * d.x + oy * d.y);
            let qc = ox * ox + oy * oy - r * r;
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let s = disc.sqrt();
                for t in [(-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa)] {
                    let z = o.z + t * d.z;
                    if t > 1e-9 && z >= a.z && z <= b.z && t < best {
                        best = t;
                    }
                }
            }
        }
        for c in [a, b] {
            let oc = o - c;
            let qa = d.dot(d);
            let qb = 2.0 * oc.dot(d);
            let qc = oc.dot(&oc) - r * r;
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let s = disc.sqrt();
                for t in [(-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa)] {
                    if t > 1e-9 && t < best {
                        best = t;
                    }
                }
            }
        }
        best.is_finite().then_some(best)
    }

    fn color_at(&self, p: &Vector3<f64>) -> Rgb {
        if p.z > 0.55 * self.height {
            self.colors[0]
        } else {
            self.colors[1]
        }
    }
}

/// What a camera ray hits first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Hit {
    Pedestrian { id: usize, depth: f64 },
    Ground { depth: f64 },
    Sky,
}

impl Hit {
    pub fn depth(&self) -> Option<f64> {
        match *self {
            Hit::Pedestrian { depth, .. } | Hit::Ground { depth } => Some(depth),
            Hit::Sky => None,
        }
    }
}

/// Exact scene geometry, usable without any rendered images.
#[derive(Clone, Debug)]
pub struct SceneGeometry {
    pub capsules: Vec<Capsule>,
    pub cameras: Vec<Camera>,
}

impl SceneGeometry {
    /// First surface hit through a continuous pixel of camera `view`;
    /// depth is camera-space z.
    pub fn cast(&self, view: usize, pixel: &Vector2<f64>) -> Hit {
        let cam = &self.cameras[view];
        let o = cam.center();
        // Unit-z camera direction, so the ray parameter equals the depth.
        let d = cam.extrinsics.rotation * cam.pixel_direction_camera(pixel);
        let mut best = Hit::Sky;
        let mut best_t = f64::INFINITY;
        for (id, c) in self.capsules.iter().enumerate() {
            if let Some(t) = c.intersect(&o, &d) {
                if t < best_t {
                    best_t = t;
                    best = Hit::Pedestrian { id, depth: t };
                }
            }
        }
        if let Some(t) = cam.ground_depth_at(pixel) {
            if t < best_t {
                best = Hit::Ground { depth: t };
            }
        }
        best
    }

    /// Whether the world point `p` is the first surface seen by camera `view`.
    pub fn point_visible(&self, view: usize, p: &Vector3<f64>) -> bool {
        let cam = &self.cameras[view];
        let Ok(proj) = cam.project(p) else {
            return false;
        };
        if proj.is_behind() || !cam.intrinsics.contains(&proj.pixel) {
            return false;
        }
        self.cast(view, &proj.pixel)
            .depth()
            .is_some_and(|d| (d - proj.depth).abs() <= 1e-6 * proj.depth.max(1.0))
    }
}

/// Exact depth at continuous pixel coordinates.
impl DepthLookup for SceneGeometry {
    fn depth_at(&self, view: usize, pixel: Vector2<f64>) -> Option<f64> {
        self.cast(view, &pixel).depth()
    }
}

#[derive(Clone, Debug)]
pub struct GroundTruthBundle {
    pub geometry: SceneGeometry,
    /// Per-view depth of the first hit (pedestrian or ground).
    pub depth: Vec<DepthImage>,
    /// Per-view pedestrian id at each pixel.
    pub instance_maps: Vec<Grid<Option<usize>>>,
    /// Per view, the pedestrian id of each reported instance mask in
    /// `CameraView::masks` order.
    pub mask_ids: Vec<Vec<usize>>,
    /// Per view, every visible pedestrian (reported or not) with its silhouette.
    pub silhouettes: Vec<Vec<(usize, Mask)>>,
    /// Ground-plane locations.
    pub locations: Vec<Vector2<f64>>,
    /// `covisible[p][v]`: pedestrian `p` has a silhouette in view `v`.
    pub covisible: Vec<Vec<bool>>,
    /// `(view, pedestrian)` masks removed by the missed-mask injection.
    pub dropped: Vec<(usize, usize)>,
}

impl GroundTruthBundle {
    /// Depth restricted to pedestrian pixels (NaN elsewhere).
    pub fn pedestrian_depth(&self, view: usize) -> DepthImage {
        let map = &self.instance_maps[view];
        let d = &self.depth[view];
        DepthImage::from_fn(d.width(), d.height(), |x, y| {
            if map.get(x, y).is_some() {
                *d.get(x, y)
            } else {
                f64::NAN
            }
        })
    }

    pub fn silhouette(&self, view: usize, ped: usize) -> Option<&Mask> {
        self.silhouettes[view].iter().find(|(p, _)| *p == ped).map(|(_, m)| m)
    }

    pub fn oracle(&self) -> GtOracle {
        gt_oracle(self)
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> Rgb {
    [
        rng.random_range(0.1..0.95),
        rng.random_range(0.1..0.95),
        rng.random_range(0.1..0.95),
    ]
}

fn ground_color(p: &Vector3<f64>) -> Rgb {
    let checker = ((p.x.floor() + p.y.floor()) as i64).rem_euclid(2) == 0;
    if checker {
        [0.42, 0.42, 0.40]
    } else {
        [0.50, 0.50, 0.48]
    }
}

/// Cameras evenly spaced on a ring, all looking at the area center.
pub fn ring_cameras(cfg: &SceneConfig) -> Result<Vec<Camera>> {
    let fx = 0.5 * cfg.width as f64 / (0.5 * cfg.fov_deg.to_radians()).tan();
    let k = Intrinsics::new(
        fx,
        fx,
        (cfg.width as f64 - 1.0) / 2.0,
        (cfg.image_height as f64 - 1.0) / 2.0,
        cfg.width,
        cfg.image_height,
    )?;
    let cx = 0.5 * (cfg.area.x_min + cfg.area.x_max);
    let cy = 0.5 * (cfg.area.y_min + cfg.area.y_max);
    let target = Vector3::new(cx, cy, cfg.look_height);
    (0..cfg.cameras)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / cfg.cameras as f64 + 0.3;
            let eye = Vector3::new(
                cx + cfg.ring_radius * a.cos(),
                cy + cfg.ring_radius * a.sin(),
                cfg.camera_height,
            );
            Ok(Camera::new(k, Extrinsics::look_at(eye, target, Vector3::z())?))
        })
        .collect()
}

fn place(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vector2<f64>>> {
    let max_attempts = 1000 * (cfg.pedestrians + 1);
    let mut out: Vec<Vector2<f64>> = Vec::with_capacity(cfg.pedestrians);
    let a = &cfg.area;
    let margin = cfg.radius;
    let (xl, xh) = (a.x_min + margin, a.x_max - margin);
    let (yl, yh) = (a.y_min + margin, a.y_max - margin);
    if !(xl < xh && yl < yh) && cfg.pedestrians > 0 {
        return Err(Error::Placement(0));
    }
    let mut attempts = 0;
    while out.len() < cfg.pedestrians {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Placement(max_attempts));
        }
        let p = Vector2::new(rng.random_range(xl..=xh), rng.random_range(yl..=yh));
        if out.iter().all(|q| (p - q).norm() >= cfg.min_separation) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Builds a scene from explicit pedestrian positions and cameras.
pub fn scene_from_parts(
    cfg: &SceneConfig,
    locations: Vec<Vector2<f64>>,
    cameras: Vec<Camera>,
) -> Result<(Vec<CameraView>, GroundTruthBundle)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c0105);
    let capsules: Vec<Capsule> = locations
        .iter()
        .enumerate()
        .map(|(i, &center)| {
            let colors = if cfg.palette.is_empty() {
                [random_color(&mut rng), random_color(&mut rng)]
            } else {
                cfg.palette[i % cfg.palette.len()]
            };
            Capsule {
                center,
                radius: cfg.radius,
                height: cfg.height,
                colors,
            }
        })
        .collect();
    let jitter: Vec<f64> = (0..cameras.len())
        .map(|_| 1.0 + rng.random_range(-1.0..=1.0) * cfg.brightness_jitter)
        .collect();
    let geometry = SceneGeometry {
        capsules,
        cameras: cameras.clone(),
    };

    let rendered: Vec<(RgbImage, DepthImage, Grid<Option<usize>>)> = (0..cameras.len())
        .into_par_iter()
        .map(|v| render_view(&geometry, v, jitter[v]))
        .collect();

    let n_peds = locations.len();
    let mut covisible = vec![vec![false; cameras.len()]; n_peds];
    let mut silhouettes = Vec::with_capacity(cameras.len());
    for (v, (_, _, map)) in rendered.iter().enumerate() {
        let mut per: Vec<(usize, Mask)> = (0..n_peds)
            .map(|p| (p, Mask::from_fn(map.width(), map.height(), |x, y| *map.get(x, y) == Some(p))))
            .filter(|(_, m)| m.count() >= cfg.min_mask_pixels.max(1))
            .collect();
        per.sort_by_key(|(p, _)| *p);
        for (p, _) in &per {
            covisible[*p][v] = true;
        }
        silhouettes.push(per);
    }

    let mut dropped = Vec::new();
    let mut views = Vec::with_capacity(cameras.len());
    let mut mask_ids = Vec::with_capacity(cameras.len());
    let mut depth = Vec::with_capacity(cameras.len());
    let mut instance_maps = Vec::with_capacity(cameras.len());
    for (v, (image, d, map)) in rendered.into_iter().enumerate() {
        let mut masks = Vec::new();
        let mut ids = Vec::new();
        for (p, m) in &silhouettes[v] {
            if cfg.missed_mask_rate > 0.0 && rng.random_bool(cfg.missed_mask_rate) {
                dropped.push((v, *p));
                continue;
            }
            masks.push(m.clone());
            ids.push(*p);
        }
        views.push(CameraView {
            id: v,
            name: format!("cam{v}"),
            camera: cameras[v],
            image,
            masks,
            depth: None,
        });
        mask_ids.push(ids);
        depth.push(d);
        instance_maps.push(map);
    }
    Ok((
        views,
        GroundTruthBundle {
            geometry,
            depth,
            instance_maps,
            mask_ids,
            silhouettes,
            locations,
            covisible,
            dropped,
        },
    ))
}

fn render_view(geo: &SceneGeometry, v: usize, brightness: f64) -> (RgbImage, DepthImage, Grid<Option<usize>>) {
    let cam = &geo.cameras[v];
    let (w, h) = (cam.width(), cam.height());
    let mut image = RgbImage::new(w, h, [0.0; 3]);
    let mut depth = DepthImage::new(w, h, f64::NAN);
    let mut map = Grid::new(w, h, None);
    let o = cam.center();
    for y in 0..h {
        for x in 0..w {
            let px = Vector2::new(x as f64, y as f64);
            let dir = cam.extrinsics.rotation * cam.pixel_direction_camera(&px);
            let (color, d) = match geo.cast(v, &px) {
                Hit::Pedestrian { id, depth } => {
                    map.set(x, y, Some(id));
                    (geo.capsules[id].color_at(&(o + dir * depth)), depth)
                }
                Hit::Ground { depth } => (ground_color(&(o + dir * depth)), depth),
                Hit::Sky => ([0.7, 0.8, 0.95], f64::NAN),
            };
            image.set(x, y, color.map(|c| (c * brightness).clamp(0.0, 1.0)));
            depth.set(x, y, d);
        }
    }
    (image, depth, map)
}

/// Generates a random scene per `cfg`; fully determined by `cfg.seed`.
pub fn generate_scene(cfg: &SceneConfig) -> Result<(Vec<CameraView>, GroundTruthBundle)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let locations = place(cfg, &mut rng)?;
    let cameras = ring_cameras(cfg)?;
    scene_from_parts(cfg, locations, cameras)
}

/// Segmentation oracle answering from ground-truth silhouettes.
#[derive(Clone, Debug)]
pub struct GtOracle {
    /// Per view, the full (unfiltered) instance map.
    pub instance_maps: Vec<Grid<Option<usize>>>,
}

pub fn gt_oracle(bundle: &GroundTruthBundle) -> GtOracle {
    GtOracle {
        instance_maps: bundle.instance_maps.clone(),
    }
}

impl SegmentationOracle for GtOracle {
    fn segment(&self, view: &CameraView, points: &[Vector2<f64>], bbox: [f64; 4]) -> Result<Mask> {
        let map = self
            .instance_maps
            .get(view.id)
            .ok_or_else(|| Error::Oracle(format!("no ground truth for view {}", view.id)))?;
        let (w, h) = (map.width(), map.height());
        let mut votes = std::collections::BTreeMap::<usize, usize>::new();
        for p in points {
            if let Some(Some(id)) = map.nearest(p.x, p.y) {
                *votes.entry(*id).or_default() += 1;
            }
        }
        let winner = votes
            .iter()
            .find(|(_, &c)| 2 * c > points.len())
            .map(|(&id, _)| id);
        let Some(id) = winner else {
            return Ok(Mask::new(w, h, false));
        };
        let mask = Mask::from_fn(w, h, |x, y| *map.get(x, y) == Some(id));
        let [x0, y0, x1, y1] = bbox;
        let touches = mask.iter_xy().any(|(x, y, &b)| {
            b && (x as f64) >= x0.floor() && (x as f64) <= x1.ceil() && (y as f64) >= y0.floor() && (y as f64) <= y1.ceil()
        });
        Ok(if touches { mask } else { Mask::new(w, h, false) })
    }
}
