//! Recovery of missed instance masks from other views' depth.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::camera::{reproject, Camera};
use crate::error::{Error, Result};
use crate::image::{DepthImage, Mask};
use crate::localization::dbscan;
use crate::view::CameraView;

/// A promptable segmenter: point prompts plus a box `[x0, y0, x1, y1]`
/// (inclusive pixel bounds) in, binary mask out.
pub trait SegmentationOracle: Sync {
    fn segment(&self, view: &CameraView, points: &[Vector2<f64>], bbox: [f64; 4]) -> Result<Mask>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompensationThresholds {
    /// Minimum number of projected points.
    pub tau_pcs: usize,
    /// Maximum fraction of projected points already on foreground.
    pub tau_m: f64,
    /// DBSCAN radius in pixels.
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for CompensationThresholds {
    fn default() -> Self {
        Self {
            tau_pcs: 50,
            tau_m: 0.5,
            eps: 10.0,
            min_pts: 5,
        }
    }
}

impl CompensationThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.tau_pcs == 0 || !(self.tau_m > 0.0 && self.tau_m < 1.0) || !(self.eps > 0.0) || self.min_pts == 0 {
            return Err(Error::Config(
                "compensation needs tau_pcs ≥ 1, 0 < tau_m < 1, eps > 0, min_pts ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// Reprojects every masked source pixel with valid depth into `reference`
/// and keeps the largest DBSCAN cluster of the in-frame results.
pub fn project_instance(
    src: &Camera,
    depth: &DepthImage,
    mask: &Mask,
    reference: &Camera,
    eps: f64,
    min_pts: usize,
) -> Result<Vec<Vector2<f64>>> {
    let mut pts: Vec<[f64; 2]> = Vec::new();
    for (x, y) in mask.pixels() {
        let d = *depth.get(x, y);
        if !(d.is_finite() && d > 0.0) {
            continue;
        }
        if let Ok(rp) = reproject(&Vector2::new(x as f64, y as f64), d, src, reference) {
            if rp.usable() {
                pts.push([rp.pixel.x, rp.pixel.y]);
            }
        }
    }
    if pts.is_empty() {
        return Ok(Vec::new());
    }
    let labels = dbscan(&pts, eps, min_pts)?;
    let k = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for l in labels.iter().flatten() {
        sizes[*l] += 1;
    }
    // Largest cluster; ties go to the lower label.
    let Some(best) = (0..k).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))) else {
        return Ok(Vec::new());
    };
    Ok(pts
        .iter()
        .zip(&labels)
        .filter(|(_, l)| **l == Some(best))
        .map(|(p, _)| Vector2::new(p[0], p[1]))
        .collect())
}

fn overlap_fraction(points: &[Vector2<f64>], fg: &Mask) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let hits = points
        .iter()
        .filter(|p| *fg.nearest(p.x, p.y).unwrap_or(&false))
        .count();
    hits as f64 / points.len() as f64
}

fn bounds(points: &[Vector2<f64>], w: usize, h: usize) -> [f64; 4] {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    [x0.max(0.0), y0.max(0.0), x1.min(w as f64 - 1.0), y1.min(h as f64 - 1.0)]
}

/// Up to nine interior prompts: the distance-transform maximum inside each
/// cell of a 3×3 grid over the mask's bounding box.
pub fn interior_prompts(mask: &Mask) -> Vec<Vector2<f64>> {
    let Some((x0, y0, x1, y1)) = mask.bbox() else {
        return Vec::new();
    };
    let dt = mask.distance_transform();
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut out = Vec::new();
    for cy in 0..3 {
        for cx in 0..3 {
            let (xa, xb) = (x0 + bw * cx / 3, x0 + bw * (cx + 1) / 3);
            let (ya, yb) = (y0 + bh * cy / 3, y0 + bh * (cy + 1) / 3);
            let mut best: Option<(u32, usize, usize)> = None;
            for y in ya..yb {
                for x in xa..xb {
                    if *mask.get(x, y) {
                        let d = *dt.get(x, y);
                        if best.is_none_or(|b| d > b.0) {
                            best = Some((d, x, y));
                        }
                    }
                }
            }
            if let Some((_, x, y)) = best {
                out.push(Vector2::new(x as f64, y as f64));
            }
        }
    }
    out
}

/// Source view with the depth used to project its instances.
pub struct CompensationSource<'a> {
    pub view: &'a CameraView,
    pub depth: &'a DepthImage,
}

/// Returns new masks for `reference`; its existing masks are left untouched
/// and each new mask excludes pixels already covered by foreground.
pub fn compensate(
    reference: &CameraView,
    sources: &[CompensationSource<'_>],
    oracle: &dyn SegmentationOracle,
    th: &CompensationThresholds,
) -> Result<Vec<Mask>> {
    th.validate()?;
    let (w, h) = (reference.width(), reference.height());
    let mut fg = reference.foreground();
    let mut added = Vec::new();
    for src in sources {
        if src.view.id == reference.id {
            continue;
        }
        for (i, inst) in src.view.masks.iter().enumerate() {
            let pts = project_instance(&src.view.camera, src.depth, inst, &reference.camera, th.eps, th.min_pts)?;
            if pts.len() < th.tau_pcs || overlap_fraction(&pts, &fg) > th.tau_m {
                continue;
            }
            let initial = match oracle.segment(reference, &pts, bounds(&pts, w, h)) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("oracle failed for view {} instance {i}: {e}", src.view.id);
                    continue;
                }
            };
            let Some((bx0, by0, bx1, by1)) = initial.bbox() else {
                continue;
            };
            let prompts = interior_prompts(&initial);
            let bbox = [bx0 as f64, by0 as f64, bx1 as f64, by1 as f64];
            let refined = match oracle.segment(reference, &prompts, bbox) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("oracle refinement failed for view {} instance {i}: {e}", src.view.id);
                    continue;
                }
            };
            let n = refined.count();
            if n == 0 || !refined.same_shape(&fg) {
                continue;
            }
            if refined.intersection_count(&fg) as f64 / n as f64 > th.tau_m {
                continue;
            }
            let fresh = Mask::from_fn(w, h, |x, y| *refined.get(x, y) && !*fg.get(x, y));
            if fresh.count() == 0 {
                continue;
            }
            fg.union_with(&fresh);
            added.push(fresh);
        }
    }
    Ok(added)
}
