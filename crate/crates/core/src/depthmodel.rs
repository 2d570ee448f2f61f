//! Monocular depth predictors and metric scale alignment.
//!
//! Neural predictors stay outside the process. They read exported
//! pseudo-depth and write depth frames into a drop-in directory, which
//! [`DropInPredictor`] consumes before falling back to the baseline.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::Vector2;

use crate::camera::{ground_depth_exact, GroundRange};
use crate::depthfilter::PseudoDepthMap;
use crate::error::{Error, Result};
use crate::image::{DepthImage, Mask};
use crate::io::read_depth;
use crate::superpixel::segment_pedestrians;
use crate::view::CameraView;

/// A per-view depth predictor refined from pseudo-depth labels.
pub trait DepthPredictor: Send {
    /// Metric depth for `view`; NaN marks pixels without a prediction.
    fn predict(&self, view: &CameraView) -> Result<DepthImage>;
    /// Absorbs one round of filtered pseudo-depth.
    fn update(&mut self, pseudo: &[PseudoDepthMap]) -> Result<()>;
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Scales relative depth to metric using the median ratio over ground
/// pixels. Returns the scale and the rescaled image.
pub fn align_scale(d_rel: &DepthImage, d_metric_ground: &DepthImage, ground_mask: &Mask) -> Result<(f64, DepthImage)> {
    if !d_rel.same_shape(d_metric_ground) || !d_rel.same_shape(ground_mask) {
        return Err(Error::Data("align_scale inputs differ in size".into()));
    }
    let mut ratios: Vec<f64> = ground_mask
        .iter_xy()
        .filter(|(_, _, &g)| g)
        .filter_map(|(x, y, _)| {
            let (r, m) = (*d_rel.get(x, y), *d_metric_ground.get(x, y));
            (r > 0.0 && r.is_finite() && m > 0.0 && m.is_finite()).then(|| m / r)
        })
        .collect();
    if ratios.is_empty() {
        return Err(Error::EmptyGroundMask);
    }
    let s = median(&mut ratios);
    Ok((s, d_rel.map(|&d| d * s)))
}

/// Deterministic stand-in for a fine-tuned network: exact ground depth on
/// background, and per superpixel the median of all pseudo-depth collected
/// so far for that view.
#[derive(Clone, Debug)]
pub struct BaselinePredictor {
    /// Superpixels per pedestrian mask.
    pub k: usize,
    pub ground: Option<GroundRange>,
    /// Superpixel depths farther than this (m) from their instance's median
    /// are replaced by that median.
    pub max_spread: f64,
    /// Latest valid pseudo-depth per pixel, keyed by view id.
    history: BTreeMap<usize, DepthImage>,
}

impl BaselinePredictor {
    pub fn new(k: usize, ground: Option<GroundRange>) -> Self {
        Self {
            k,
            ground,
            max_spread: 0.5,
            history: BTreeMap::new(),
        }
    }

    /// Pixels with accumulated pseudo-depth for a view.
    pub fn coverage(&self, view: usize) -> usize {
        self.history
            .get(&view)
            .map_or(0, |h| h.as_slice().iter().filter(|d| d.is_finite()).count())
    }

    /// Accumulated pseudo-depth for each of `views` (all invalid where none
    /// was collected); feeding it to [`DepthPredictor::update`] on a fresh
    /// predictor restores this state.
    pub fn snapshot(&self, views: &[CameraView]) -> Vec<PseudoDepthMap> {
        views
            .iter()
            .map(|v| {
                let depth = self
                    .history
                    .get(&v.id)
                    .cloned()
                    .unwrap_or_else(|| DepthImage::new(v.width(), v.height(), f64::NAN));
                PseudoDepthMap {
                    view: v.id,
                    valid: depth.map(|d| d.is_finite()),
                    depth,
                }
            })
            .collect()
    }
}

/// Depth where the ray through the lowest mask pixel meets the ground.
fn standing_depth(view: &CameraView, mask: &Mask) -> Option<f64> {
    let (x0, _, x1, y1) = mask.bbox()?;
    let xs: Vec<usize> = (x0..=x1).filter(|&x| *mask.get(x, y1)).collect();
    let xm = xs.iter().sum::<usize>() as f64 / xs.len() as f64;
    // Search downward in case the bottom row looks above the horizon.
    (y1..view.height()).find_map(|y| view.camera.ground_depth_at(&Vector2::new(xm, y as f64 + 0.5)))
}

impl DepthPredictor for BaselinePredictor {
    fn predict(&self, view: &CameraView) -> Result<DepthImage> {
        let mut out = ground_depth_exact(&view.camera, self.ground.as_ref());
        let fg = view.foreground();
        for (x, y, &f) in fg.iter_xy() {
            if f {
                out.set(x, y, f64::NAN);
            }
        }
        if view.masks.is_empty() {
            return Ok(out);
        }
        let sp = segment_pedestrians(&view.image, &view.masks, self.k)?;
        let hist = self.history.get(&view.id);
        let mut samples: Vec<Vec<f64>> = vec![Vec::new(); sp.segments.len()];
        if let Some(h) = hist {
            for (x, y, l) in sp.labels.iter_xy() {
                if let Some(s) = l {
                    let d = *h.get(x, y);
                    if d.is_finite() {
                        samples[*s as usize].push(d);
                    }
                }
            }
        }
        let seg_depth: Vec<Option<f64>> = samples
            .iter_mut()
            .map(|v| (!v.is_empty()).then(|| median(v)))
            .collect();

        for (ped, mask) in view.masks.iter().enumerate() {
            let segs: Vec<usize> = sp.segments_of(ped).collect();
            let filled: Vec<usize> = segs.iter().copied().filter(|&s| seg_depth[s].is_some()).collect();
            let mut inst: Vec<f64> = mask
                .pixels()
                .into_iter()
                .filter_map(|(x, y)| hist.map(|h| *h.get(x, y)).filter(|d| d.is_finite()))
                .collect();
            let fallback = if inst.is_empty() {
                standing_depth(view, mask)
            } else {
                Some(median(&mut inst))
            };
            let resolve = |s: usize| -> Option<f64> {
                let d = seg_depth[s].or_else(|| {
                    let c = sp.segments[s].centroid;
                    filled
                        .iter()
                        .min_by(|&&a, &&b| {
                            let da = (sp.segments[a].centroid - c).norm_squared();
                            let db = (sp.segments[b].centroid - c).norm_squared();
                            da.total_cmp(&db).then(a.cmp(&b))
                        })
                        .and_then(|&n| seg_depth[n])
                });
                match (d, fallback) {
                    (Some(d), Some(m)) if (d - m).abs() > self.max_spread => Some(m),
                    _ => d,
                }
            };
            let per_seg: BTreeMap<usize, Option<f64>> = segs.iter().map(|&s| (s, resolve(s))).collect();
            for (x, y) in mask.pixels() {
                let d = sp
                    .labels
                    .get(x, y)
                    .and_then(|s| per_seg.get(&(s as usize)).copied().flatten())
                    .or(fallback);
                if let Some(d) = d {
                    out.set(x, y, d);
                }
            }
        }
        Ok(out)
    }

    fn update(&mut self, pseudo: &[PseudoDepthMap]) -> Result<()> {
        for p in pseudo {
            let entry = self
                .history
                .entry(p.view)
                .or_insert_with(|| DepthImage::new(p.depth.width(), p.depth.height(), f64::NAN));
            if !entry.same_shape(&p.depth) || !p.valid.same_shape(&p.depth) {
                return Err(Error::Data(format!("pseudo-depth for view {} changed size", p.view)));
            }
            for (x, y, &v) in p.valid.iter_xy() {
                let d = *p.depth.get(x, y);
                if v && d.is_finite() && d > 0.0 {
                    entry.set(x, y, d);
                }
            }
        }
        Ok(())
    }
}

/// Uses `<dir>/<frame>/<camera>.f32` when present, the inner predictor
/// otherwise. Drop-in frames are taken as already metric.
pub struct DropInPredictor<P> {
    pub dir: PathBuf,
    pub frame: String,
    pub inner: P,
}

impl<P: DepthPredictor> DepthPredictor for DropInPredictor<P> {
    fn predict(&self, view: &CameraView) -> Result<DepthImage> {
        let path = self.dir.join(&self.frame).join(format!("{}.f32", view.name));
        if path.exists() {
            let d = read_depth(&path)?;
            if d.width() != view.width() || d.height() != view.height() {
                return Err(Error::format(&path, "drop-in depth size differs from the view"));
            }
            return Ok(d);
        }
        self.inner.predict(view)
    }

    fn update(&mut self, pseudo: &[PseudoDepthMap]) -> Result<()> {
        self.inner.update(pseudo)
    }
}
