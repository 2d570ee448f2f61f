//! CPU Gaussian-splatting rasterizer.
//!
//! Gaussians are projected to 2D splats (EWA with a 0.3 px² low-pass), sorted
//! globally by mean depth and alpha-composited front to back at pixel
//! centers. Splats are binned into square tiles by their 3σ bounding boxes;
//! binning only limits which splats a pixel visits and never changes the
//! composited result.

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::gaussians::Gaussian3D;
use crate::image::{DepthImage, Grid, Mask, Rgb, RgbImage};

pub const LOW_PASS: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.99;
pub const T_MIN: f64 = 1e-4;
pub const NEAR_PLANE: f64 = 0.01;
/// Accumulated alpha above which the normalized depth is reported.
pub const DEPTH_ALPHA_MIN: f64 = 1e-3;
const TILE: usize = 16;

/// A Gaussian projected onto the image plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub mean: Vector2<f64>,
    /// Screen-space covariance including the low-pass term (px²).
    pub cov: Matrix2<f64>,
    /// Inverse covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    /// Camera-space depth of the Gaussian mean.
    pub depth: f64,
    /// Index into the Gaussian slice the splat came from.
    pub source: usize,
    pub opacity: f64,
    pub color: Rgb,
    /// Inclusive pixel bounds of the 3σ box, clipped to the frame.
    pub bbox: [usize; 4],
    /// Camera-space mean.
    pub(crate) p_cam: Vector3<f64>,
    /// `J·W`, the linearized world-to-screen map at the mean.
    pub(crate) jw: Matrix2x3<f64>,
}

/// Projects one Gaussian; `None` when it is behind the near plane or its 3σ
/// box misses the frame.
pub fn project_gaussian(g: &Gaussian3D, source: usize, camera: &Camera) -> Option<Splat2D> {
    let w = camera.extrinsics.rotation.transpose();
    let pc = w * (g.mean - camera.extrinsics.translation);
    if pc.z <= NEAR_PLANE {
        return None;
    }
    let k = &camera.intrinsics;
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let j = Matrix2x3::new(
        k.fx / z,
        0.0,
        -k.fx * x / (z * z),
        0.0,
        k.fy / z,
        -k.fy * y / (z * z),
    );
    let jw = j * w;
    let cov = jw * g.covariance() * jw.transpose() + Matrix2::identity() * LOW_PASS;
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    if !(det > 0.0) {
        return None;
    }
    let conic = [cov[(1, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det];
    let mean = Vector2::new(k.fx * x / z + k.cx, k.fy * y / z + k.cy);
    let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = (3.0 * lambda_max.sqrt()).ceil();
    let (wf, hf) = (k.width as f64, k.height as f64);
    let x0 = (mean.x - radius).floor().max(0.0);
    let y0 = (mean.y - radius).floor().max(0.0);
    let x1 = (mean.x + radius).ceil().min(wf - 1.0);
    let y1 = (mean.y + radius).ceil().min(hf - 1.0);
    if !(x0 <= x1 && y0 <= y1) || !mean.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(Splat2D {
        mean,
        cov,
        conic,
        depth: z,
        source,
        opacity: g.opacity(),
        color: g.color,
        bbox: [x0 as usize, y0 as usize, x1 as usize, y1 as usize],
        p_cam: pc,
        jw,
    })
}

/// Total order used for compositing: mean depth, then the Gaussian's
/// parameters so that ties do not depend on input order.
fn composite_order(a: &Gaussian3D, b: &Gaussian3D, da: f64, db: f64) -> std::cmp::Ordering {
    da.total_cmp(&db)
        .then_with(|| {
            let ka = sort_key(a);
            let kb = sort_key(b);
            ka.iter()
                .zip(kb.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .then_with(|| a.ped_id.cmp(&b.ped_id))
}

fn sort_key(g: &Gaussian3D) -> [f64; 14] {
    let q = g.rotation.quaternion();
    [
        g.mean.x,
        g.mean.y,
        g.mean.z,
        g.opacity_logit,
        g.log_scales.x,
        g.log_scales.y,
        g.log_scales.z,
        q.w,
        q.i,
        q.j,
        q.k,
        g.color[0],
        g.color[1],
        g.color[2],
    ]
}

/// One splat's contribution at one pixel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Contrib {
    /// Index into `Rasterizer::splats`.
    pub splat: u32,
    /// Position of the splat in its tile's list.
    pub slot: u32,
    pub alpha: f64,
    /// Transmittance before this splat.
    pub t: f64,
    /// Gaussian falloff `G′(u)`.
    pub g: f64,
    pub clipped: bool,
}

/// Depth-sorted, tile-binned splats for one camera.
pub struct Rasterizer {
    pub(crate) splats: Vec<Splat2D>,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    width: usize,
    height: usize,
}

impl Rasterizer {
    pub fn new(gaussians: &[Gaussian3D], camera: &Camera) -> Self {
        let mut splats: Vec<Splat2D> = gaussians
            .par_iter()
            .enumerate()
            .filter_map(|(i, g)| project_gaussian(g, i, camera))
            .collect();
        splats.sort_by(|a, b| {
            composite_order(&gaussians[a.source], &gaussians[b.source], a.depth, b.depth)
        });
        let (width, height) = (camera.width(), camera.height());
        let tiles_x = width.div_ceil(TILE);
        let tiles_y = height.div_ceil(TILE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (i, s) in splats.iter().enumerate() {
            let [x0, y0, x1, y1] = s.bbox;
            for ty in y0 / TILE..=y1 / TILE {
                for tx in x0 / TILE..=x1 / TILE {
                    tiles[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
        Self {
            splats,
            tiles,
            tiles_x,
            width,
            height,
        }
    }

    pub fn splats(&self) -> &[Splat2D] {
        &self.splats
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub(crate) fn tile_splats(&self, t: usize) -> &[u32] {
        &self.tiles[t]
    }

    pub(crate) fn tile_count(&self) -> usize {
        self.tiles.len()
    }

    /// Pixel range `(x0, y0, x1, y1)` (exclusive end) covered by a tile.
    pub(crate) fn tile_bounds(&self, t: usize) -> (usize, usize, usize, usize) {
        let tx = t % self.tiles_x;
        let ty = t / self.tiles_x;
        (
            tx * TILE,
            ty * TILE,
            ((tx + 1) * TILE).min(self.width),
            ((ty + 1) * TILE).min(self.height),
        )
    }

    /// Front-to-back contributions at pixel `(x, y)` of tile `t`.
    pub(crate) fn contribs(&self, t: usize, x: usize, y: usize, out: &mut Vec<Contrib>) {
        out.clear();
        let (px, py) = (x as f64, y as f64);
        let mut trans = 1.0;
        for (slot, &si) in self.tiles[t].iter().enumerate() {
            let s = &self.splats[si as usize];
            let [x0, y0, x1, y1] = s.bbox;
            if x < x0 || x > x1 || y < y0 || y > y1 {
                continue;
            }
            let dx = px - s.mean.x;
            let dy = py - s.mean.y;
            let [a, b, c] = s.conic;
            let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
            if power > 0.0 {
                continue;
            }
            let g = power.exp();
            let raw = s.opacity * g;
            let (alpha, clipped) = if raw > ALPHA_MAX {
                (ALPHA_MAX, true)
            } else {
                (raw, false)
            };
            if alpha <= 0.0 {
                continue;
            }
            out.push(Contrib {
                splat: si,
                slot: slot as u32,
                alpha,
                t: trans,
                g,
                clipped,
            });
            trans *= 1.0 - alpha;
            if trans < T_MIN {
                break;
            }
        }
    }

    pub fn render(&self) -> RenderOutput {
        let (w, h) = (self.width, self.height);
        let tiles: Vec<Vec<(usize, Rgb, f64, f64)>> = (0..self.tile_count())
            .into_par_iter()
            .map(|t| {
                let (x0, y0, x1, y1) = self.tile_bounds(t);
                let mut buf = Vec::new();
                let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
                for y in y0..y1 {
                    for x in x0..x1 {
                        self.contribs(t, x, y, &mut buf);
                        let mut rgb = [0.0; 3];
                        let mut depth = 0.0;
                        let mut acc = 0.0;
                        for c in &buf {
                            let s = &self.splats[c.splat as usize];
                            let wgt = c.t * c.alpha;
                            for k in 0..3 {
                                rgb[k] += wgt * s.color[k];
                            }
                            depth += wgt * s.depth;
                            acc += wgt;
                        }
                        out.push((y * w + x, rgb, depth, acc));
                    }
                }
                out
            })
            .collect();
        let mut rgb = RgbImage::new(w, h, [0.0; 3]);
        let mut raw_depth = DepthImage::new(w, h, 0.0);
        let mut mask = Grid::new(w, h, 0.0);
        for tile in tiles {
            for (i, c, d, a) in tile {
                rgb.as_mut_slice()[i] = c;
                raw_depth.as_mut_slice()[i] = d;
                mask.as_mut_slice()[i] = a;
            }
        }
        let depth = DepthImage::from_fn(w, h, |x, y| {
            let a = *mask.get(x, y);
            if a > DEPTH_ALPHA_MIN {
                *raw_depth.get(x, y) / a
            } else {
                f64::NAN
            }
        });
        RenderOutput {
            rgb,
            depth,
            raw_depth,
            mask,
        }
    }

    /// Per-Gaussian visibility inside `query_mask`: `Σ T·α / Σ α` over the
    /// masked pixels the Gaussian contributes to, indexed like the input
    /// Gaussians. Gaussians with no contribution inside the mask get 0.
    pub fn weights(&self, n_gaussians: usize, query_mask: &Mask) -> Vec<f64> {
        let mut num = vec![0.0; n_gaussians];
        let mut den = vec![0.0; n_gaussians];
        let Some((bx0, by0, bx1, by1)) = query_mask.bbox() else {
            return num;
        };
        let per_tile: Vec<Vec<(usize, f64, f64)>> = (0..self.tile_count())
            .into_par_iter()
            .map(|t| {
                let (x0, y0, x1, y1) = self.tile_bounds(t);
                let mut acc = Vec::new();
                if x1 <= bx0 || x0 > bx1 || y1 <= by0 || y0 > by1 {
                    return acc;
                }
                let mut buf = Vec::new();
                for y in y0.max(by0)..y1.min(by1 + 1) {
                    for x in x0.max(bx0)..x1.min(bx1 + 1) {
                        if !*query_mask.get(x, y) {
                            continue;
                        }
                        self.contribs(t, x, y, &mut buf);
                        for c in &buf {
                            let src = self.splats[c.splat as usize].source;
                            acc.push((src, c.t * c.alpha, c.alpha));
                        }
                    }
                }
                acc
            })
            .collect();
        for tile in per_tile {
            for (i, ta, a) in tile {
                num[i] += ta;
                den[i] += a;
            }
        }
        num.iter()
            .zip(&den)
            .map(|(&n, &d)| if d > 0.0 { n / d } else { 0.0 })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub rgb: RgbImage,
    /// Depth normalized by accumulated alpha; NaN where alpha ≤ 1e-3.
    pub depth: DepthImage,
    /// `Σ Tᵢαᵢ dᵢ` without normalization.
    pub raw_depth: DepthImage,
    /// Soft mask `Σ Tᵢαᵢ`.
    pub mask: Grid<f64>,
}

pub fn render(gaussians: &[Gaussian3D], camera: &Camera) -> RenderOutput {
    Rasterizer::new(gaussians, camera).render()
}

/// Blend weight of every Gaussian restricted to `query_mask`.
pub fn accumulate_weights(gaussians: &[Gaussian3D], camera: &Camera, query_mask: &Mask) -> Vec<f64> {
    Rasterizer::new(gaussians, camera).weights(gaussians.len(), query_mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Extrinsics, Intrinsics};
    use crate::gaussians::logit;
    use approx::assert_relative_eq;

    fn cam() -> Camera {
        Camera::new(
            Intrinsics::new(50.0, 50.0, 16.0, 16.0, 32, 32).unwrap(),
            Extrinsics::identity(),
        )
    }

    fn g(x: f64, y: f64, z: f64, s: f64, o: f64) -> Gaussian3D {
        Gaussian3D::isotropic(Vector3::new(x, y, z), s, o, [0.2, 0.5, 0.8])
    }

    #[test]
    fn isotropic_on_axis_is_isotropic() {
        let s = project_gaussian(&g(0.0, 0.0, 4.0, 0.1, 0.5), 0, &cam()).unwrap();
        assert!((s.cov[(0, 0)] - s.cov[(1, 1)]).abs() < 1e-9);
        assert!(s.cov[(0, 1)].abs() < 1e-9);
    }

    #[test]
    fn depth_doubling_quarters_covariance() {
        let a = project_gaussian(&g(0.0, 0.0, 2.0, 0.1, 0.5), 0, &cam()).unwrap();
        let b = project_gaussian(&g(0.0, 0.0, 4.0, 0.1, 0.5), 0, &cam()).unwrap();
        // Oracle: J scales as 1/z, so Σ′ (before low-pass) scales as 1/z².
        let ea = a.cov[(0, 0)] - LOW_PASS;
        let eb = b.cov[(0, 0)] - LOW_PASS;
        assert_relative_eq!(eb / ea, 0.25, epsilon = 1e-12);
        assert_relative_eq!(ea, (50.0 * 0.1 / 2.0f64).powi(2), epsilon = 1e-9);
    }

    #[test]
    fn behind_camera_culled() {
        assert!(project_gaussian(&g(0.0, 0.0, -3.0, 0.1, 0.5), 0, &cam()).is_none());
        assert!(project_gaussian(&g(100.0, 0.0, 1.0, 0.01, 0.5), 0, &cam()).is_none());
    }

    #[test]
    fn single_opaque_splat() {
        let mut a = g(0.0, 0.0, 3.0, 0.05, 0.5);
        a.opacity_logit = 40.0;
        let out = render(&[a], &cam());
        assert_relative_eq!(*out.mask.get(16, 16), ALPHA_MAX, epsilon = 1e-12);
        assert_relative_eq!(*out.depth.get(16, 16), 3.0, epsilon = 1e-12);
        assert!(out.depth.get(0, 0).is_nan());
    }

    #[test]
    fn two_half_alpha_splats() {
        // Large splats so G′ ≈ 1 at the center pixel.
        let near = g(0.0, 0.0, 2.0, 1e-6 * 2.0, 0.5);
        let far = g(0.0, 0.0, 4.0, 1e-6 * 4.0, 0.5);
        let out = render(&[far, near], &cam());
        assert_relative_eq!(*out.mask.get(16, 16), 0.75, epsilon = 1e-9);
        assert_relative_eq!(*out.raw_depth.get(16, 16), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn empty_scene() {
        let out = render(&[], &cam());
        assert!(out.mask.as_slice().iter().all(|&m| m == 0.0));
        assert!(out.depth.as_slice().iter().all(|d| d.is_nan()));
    }

    #[test]
    fn weights_examples() {
        let c = cam();
        let full = Mask::new(32, 32, true);
        let mut a = g(0.0, 0.0, 3.0, 0.05, 0.5);
        a.opacity_logit = logit(0.999);
        let w = accumulate_weights(&[a.clone()], &c, &full);
        assert_relative_eq!(w[0], 1.0, epsilon = 1e-12);

        // A three-layer opaque occluder in front of a small splat.
        let mut occ = g(0.0, 0.0, 2.0, 0.2, 0.5);
        occ.opacity_logit = 40.0;
        let mut occ2 = occ.clone();
        occ2.mean.z = 2.01;
        let mut occ3 = occ.clone();
        occ3.mean.z = 2.02;
        let hidden = g(0.0, 0.0, 5.0, 0.02, 0.9);
        let w = accumulate_weights(&[hidden, occ, occ2, occ3], &c, &full);
        assert!(w[0] < 1e-3, "{}", w[0]);

        let corner = Mask::from_fn(32, 32, |x, y| x < 3 && y < 3);
        let w = accumulate_weights(&[a], &c, &corner);
        assert_eq!(w[0], 0.0);
    }
}
