//! Orchestration: the self-training loop over frames and the inference path.

use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::GroundRange;
use crate::compensation::{compensate, CompensationSource, CompensationThresholds, SegmentationOracle};
use crate::depthfilter::{generate_pseudo_depth, FilterParams, PseudoDepthMap};
use crate::depthmodel::DepthPredictor;
use crate::error::{Error, Result};
use crate::gaussians::{
    backproject_mask, cull_background, from_point_cloud, init_from_depth, init_from_superpixels, Aabb,
    Gaussian3D, RaySamplingConfig,
};
use crate::image::{DepthImage, Mask};
use crate::io;
use crate::localization::{localize, Detection, LocalizeParams};
use crate::matching::{match_labels, LabeledScene};
use crate::metrics::{evaluate, EvalResult};
use crate::optimizer::{optimize, write_log, FitTarget, LossWeights, OptimConfig};
use crate::superpixel::{mean_color_image, segment_pedestrians, SuperpixelMap};
use crate::view::CameraView;

/// Prefix of environment variables overriding configuration keys; nested
/// keys are joined with `__`, e.g. `MVHUMAN__OPTIM__ITERATIONS=50`.
pub const ENV_PREFIX: &str = "MVHUMAN__";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Drop-in depth root holding `<frame>/<camera>.f32`.
    pub depth_dropin: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub loops: usize,
    /// Superpixels per pedestrian mask (K).
    pub superpixels: usize,
    pub rays: RaySamplingConfig,
    /// Scene volume for ray sampling; derived from the calibration's ground
    /// range and `scene_height` when absent.
    pub bounds: Option<Aabb>,
    pub scene_height: f64,
    /// Half-width (m) of the depth band sampled around predicted depth in
    /// loops after the first.
    pub depth_band: f64,
    /// Samples per ray inside the depth band.
    pub depth_samples: usize,
    /// Opacity of Gaussians placed from predicted depth.
    pub depth_init_opacity: f64,
    pub loss: LossWeights,
    pub optim: OptimConfig,
    pub filter: FilterParams,
    pub compensation: CompensationThresholds,
    pub tau_vis: f64,
    pub localize: LocalizeParams,
    /// Metric gate (m).
    pub gate: f64,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            loops: 3,
            superpixels: 30,
            rays: RaySamplingConfig::default(),
            bounds: None,
            scene_height: 2.0,
            depth_band: 0.3,
            depth_samples: 4,
            depth_init_opacity: 0.1,
            loss: LossWeights::default(),
            optim: OptimConfig::default(),
            filter: FilterParams::default(),
            compensation: CompensationThresholds::default(),
            tau_vis: 0.05,
            localize: LocalizeParams::default(),
            gate: 0.5,
            paths: PathsConfig::default(),
        }
    }
}

fn scalar(text: &str) -> toml::Value {
    if let Ok(i) = text.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = text.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = text.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(text.to_string())
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.loops == 0 {
            return Err(Error::Config("loops must be at least 1".into()));
        }
        if self.depth_samples == 0 {
            return Err(Error::Config("depth_samples must be at least 1".into()));
        }
        if self.superpixels == 0 {
            return Err(Error::Config("superpixels must be at least 1".into()));
        }
        if !(self.tau_vis > 0.0 && self.tau_vis < 1.0) {
            return Err(Error::Config(format!("tau_vis must lie in (0, 1), got {}", self.tau_vis)));
        }
        if !(self.gate > 0.0) || !(self.scene_height > 0.0) || !(self.depth_band > 0.0) {
            return Err(Error::Config("gate, scene_height and depth_band must be positive".into()));
        }
        if !(self.depth_init_opacity > 0.0 && self.depth_init_opacity < 1.0) {
            return Err(Error::Config("depth_init_opacity must lie in (0, 1)".into()));
        }
        if !(self.filter.tau > 0.0) {
            return Err(Error::Config("filter.tau must be positive".into()));
        }
        self.rays.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        self.compensation.validate()?;
        self.localize.validate()
    }

    /// Parses a TOML document, applies `MVHUMAN__` overrides from `env`
    /// and validates the result.
    pub fn from_toml_with_env(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut root: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (key, value) in env {
            let Some(rest) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let path: Vec<String> = rest.split("__").map(str::to_lowercase).collect();
            if path.iter().any(String::is_empty) {
                return Err(Error::Config(format!("malformed override {key}")));
            }
            let mut table = &mut root;
            for part in &path[..path.len() - 1] {
                let entry = table
                    .entry(part.clone())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                table = entry
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("override {key}: {part} is not a table")))?;
            }
            table.insert(path[path.len() - 1].clone(), scalar(&value));
        }
        let cfg: PipelineConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file (if any) and applies overrides from the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    /// Explicit bounds, else the ground range extruded to `scene_height`.
    pub fn volume(&self, ground: Option<&GroundRange>) -> Option<Aabb> {
        self.bounds.or_else(|| {
            ground.map(|g| Aabb {
                min: [g.x_min, g.y_min, 0.0],
                max: [g.x_max, g.y_max, self.scene_height],
            })
        })
    }
}

/// One synchronized multi-camera capture.
#[derive(Clone, Debug)]
pub struct Frame {
    pub name: String,
    pub views: Vec<CameraView>,
}

fn require_views(views: &[CameraView]) -> Result<()> {
    if views.len() < 2 {
        return Err(Error::InsufficientViews {
            needed: 2,
            got: views.len(),
        });
    }
    Ok(())
}

fn superpixels(views: &[CameraView], k: usize) -> Result<Vec<SuperpixelMap>> {
    views.iter().map(|v| segment_pedestrians(&v.image, &v.masks, k)).collect()
}

/// Everything produced for one frame in one loop.
#[derive(Clone, Debug)]
pub struct FrameResult {
    pub gaussians: Vec<Gaussian3D>,
    pub pseudo: Vec<PseudoDepthMap>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Initializes, optimizes and filters one frame. `predicted` selects the
/// depth-guided initialization.
pub fn fit_frame(
    frame: &Frame,
    cfg: &PipelineConfig,
    ground: Option<&GroundRange>,
    predicted: Option<&[DepthImage]>,
    log_path: Option<&Path>,
) -> Result<FrameResult> {
    require_views(&frame.views)?;
    let views = &frame.views;
    let maps = superpixels(views, cfg.superpixels)?;
    let init = match predicted {
        None => init_from_superpixels(views, &maps, &cfg.rays, cfg.volume(ground).as_ref())?,
        Some(d) => init_from_depth(views, &maps, d, &cfg.rays, cfg.depth_band, cfg.depth_samples, cfg.depth_init_opacity)?,
    };
    let init = cull_background(init, views);
    // The depth term needs instances; views without any are left out of the fit.
    let targets = views
        .iter()
        .zip(&maps)
        .filter(|(v, _)| !v.masks.is_empty())
        .map(|(v, m)| FitTarget::new(v.camera, mean_color_image(&v.image, m), v.masks.clone()))
        .collect::<Result<Vec<_>>>()?;
    if targets.len() < 2 || init.is_empty() {
        log::info!("frame {}: fewer than two views with pedestrians; nothing to fit", frame.name);
        let pseudo = views
            .iter()
            .map(|v| PseudoDepthMap {
                view: v.id,
                depth: DepthImage::new(v.camera.intrinsics.width, v.camera.intrinsics.height, f64::NAN),
                valid: Mask::new(v.camera.intrinsics.width, v.camera.intrinsics.height, false),
            })
            .collect();
        return Ok(FrameResult {
            gaussians: Vec::new(),
            pseudo,
            initial_loss: 0.0,
            final_loss: 0.0,
        });
    }
    let fit = optimize(init, &targets, &cfg.loss, &cfg.optim)?;
    if let Some(p) = log_path {
        write_log(p, &fit.log)?;
    }
    let pseudo = generate_pseudo_depth(&fit.gaussians, views, &cfg.filter)?;
    Ok(FrameResult {
        gaussians: fit.gaussians,
        pseudo,
        initial_loss: fit.initial.total,
        final_loss: fit.final_loss.total,
    })
}

/// Adds compensated masks to every view of `frame`; returns how many were
/// added per view. Source depth comes from the predictor.
pub fn compensate_frame<P: DepthPredictor>(
    frame: &mut Frame,
    predictor: &P,
    oracle: &dyn SegmentationOracle,
    th: &CompensationThresholds,
) -> Result<Vec<usize>> {
    let depths = frame
        .views
        .iter()
        .map(|v| predictor.predict(v))
        .collect::<Result<Vec<_>>>()?;
    // Masks computed against the frame as it was, then appended together.
    let added: Vec<Vec<Mask>> = frame
        .views
        .iter()
        .map(|reference| {
            let sources: Vec<CompensationSource> = frame
                .views
                .iter()
                .zip(&depths)
                .filter(|(v, _)| v.id != reference.id)
                .map(|(view, depth)| CompensationSource { view, depth })
                .collect();
            compensate(reference, &sources, oracle, th)
        })
        .collect::<Result<_>>()?;
    Ok(frame
        .views
        .iter_mut()
        .zip(added)
        .map(|(v, new)| {
            let n = new.len();
            v.masks.extend(new);
            n
        })
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LoopReport {
    /// 1-based.
    pub iteration: usize,
    pub valid_pixels: usize,
    pub foreground_pixels: usize,
    pub masks_added: usize,
    pub frames_failed: usize,
    pub mean_final_loss: f64,
}

/// Runs `cfg.loops` rounds of fit → pseudo-depth → predictor update →
/// compensation over all frames. `predictors[f]` and `oracles[f]` serve
/// frame `f`; an empty `oracles` disables compensation. Compensation runs
/// between loops only. Frames that fail are logged and skipped; a
/// configuration error aborts.
pub fn run_training_loop<P: DepthPredictor>(
    frames: &mut [Frame],
    cfg: &PipelineConfig,
    ground: Option<&GroundRange>,
    predictors: &mut [P],
    oracles: &[&dyn SegmentationOracle],
    output: Option<&Path>,
) -> Result<Vec<LoopReport>> {
    cfg.validate()?;
    if predictors.len() != frames.len() {
        return Err(Error::Config(format!("{} predictors for {} frames", predictors.len(), frames.len())));
    }
    if !oracles.is_empty() && oracles.len() != frames.len() {
        return Err(Error::Config(format!("{} oracles for {} frames", oracles.len(), frames.len())));
    }
    let mut reports = Vec::with_capacity(cfg.loops);
    for l in 1..=cfg.loops {
        let compensate_now = l < cfg.loops && !oracles.is_empty();
        let outcomes: Vec<Result<FrameOutcome>> = frames
            .par_iter_mut()
            .zip(predictors.par_iter_mut())
            .enumerate()
            .map(|(f, (frame, predictor))| {
                let dir = output.map(|o| o.join(format!("loop{l}")).join(&frame.name));
                let oracle = if compensate_now { Some(oracles[f]) } else { None };
                train_frame(frame, predictor, oracle, cfg, ground, l == 1, dir.as_deref())
            })
            .collect();
        let mut rep = LoopReport {
            iteration: l,
            ..Default::default()
        };
        let mut losses = Vec::new();
        for (frame, outcome) in frames.iter().zip(outcomes) {
            match outcome {
                Ok(o) => {
                    rep.valid_pixels += o.valid_pixels;
                    rep.foreground_pixels += o.foreground_pixels;
                    rep.masks_added += o.masks_added;
                    losses.push(o.final_loss);
                }
                Err(e) if e.is_config() => return Err(e),
                Err(e) => {
                    log::warn!("loop {l}, frame {}: {e}; skipped", frame.name);
                    rep.frames_failed += 1;
                }
            }
        }
        rep.mean_final_loss = if losses.is_empty() {
            f64::NAN
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        log::info!(
            "loop {l}: {} valid pseudo-depth pixels of {} foreground, {} masks added, {} frames failed",
            rep.valid_pixels,
            rep.foreground_pixels,
            rep.masks_added,
            rep.frames_failed
        );
        reports.push(rep);
    }
    Ok(reports)
}

struct FrameOutcome {
    valid_pixels: usize,
    foreground_pixels: usize,
    masks_added: usize,
    final_loss: f64,
}

fn train_frame<P: DepthPredictor>(
    frame: &mut Frame,
    predictor: &mut P,
    oracle: Option<&dyn SegmentationOracle>,
    cfg: &PipelineConfig,
    ground: Option<&GroundRange>,
    first: bool,
    dir: Option<&Path>,
) -> Result<FrameOutcome> {
    let predicted = if first {
        None
    } else {
        Some(frame.views.iter().map(|v| predictor.predict(v)).collect::<Result<Vec<_>>>()?)
    };
    let log_path = dir.map(|d| d.join("optim.csv"));
    let res = fit_frame(frame, cfg, ground, predicted.as_deref(), log_path.as_deref())?;
    if let Some(d) = dir {
        io::export_pseudo_depth(&d.join("pseudo"), &frame.views, &res.pseudo)?;
    }
    let out = FrameOutcome {
        valid_pixels: res.pseudo.iter().map(PseudoDepthMap::valid_count).sum(),
        foreground_pixels: frame.views.iter().map(|v| v.foreground().count()).sum(),
        masks_added: 0,
        final_loss: res.final_loss,
    };
    predictor.update(&res.pseudo)?;
    let masks_added = match oracle {
        Some(o) => compensate_frame(frame, predictor, o, &cfg.compensation)?.iter().sum(),
        None => 0,
    };
    Ok(FrameOutcome { masks_added, ..out })
}

#[derive(Clone, Debug)]
pub struct InferenceOutput {
    pub scene: LabeledScene,
    pub detections: Vec<Detection>,
    /// Present when ground truth was supplied.
    pub evaluation: Option<EvalResult>,
}

/// Predicts depth per view, fuses the foreground into Gaussians, matches
/// identities and localizes. Views without masks are skipped.
pub fn run_inference<P: DepthPredictor>(
    views: &[CameraView],
    predictor: &P,
    cfg: &PipelineConfig,
    gt: Option<&[Vector2<f64>]>,
) -> Result<InferenceOutput> {
    cfg.validate()?;
    require_views(views)?;
    let used: Vec<&CameraView> = views
        .iter()
        .filter(|v| {
            if v.masks.is_empty() {
                log::warn!("camera {} has no masks; skipped", v.name);
            }
            !v.masks.is_empty()
        })
        .collect();
    let (mut pts, mut cols, mut srcs) = (Vec::new(), Vec::new(), Vec::new());
    for (i, v) in used.iter().enumerate() {
        let depth = predictor.predict(v)?;
        let (p, c, s) = backproject_mask(i, v, &depth, &v.foreground());
        pts.extend(p);
        cols.extend(c);
        srcs.extend(s);
    }
    let cams: Vec<_> = used.iter().map(|v| v.camera).collect();
    let gaussians = from_point_cloud(&pts, &cols, &srcs, &cams)?;
    let owned: Vec<CameraView> = used.into_iter().cloned().collect();
    let scene = match_labels(gaussians, &owned, cfg.tau_vis);
    let detections = localize(&scene.gaussians, &cfg.localize)?;
    let evaluation = match gt {
        Some(gt) => {
            let d: Vec<Vector2<f64>> = detections.iter().map(|d| Vector2::new(d.x, d.y)).collect();
            Some(evaluate(&d, gt, cfg.gate)?)
        }
        None => None,
    };
    Ok(InferenceOutput {
        scene,
        detections,
        evaluation,
    })
}

/// Bird's-eye scatter of detections (blue dots) and ground truth (green
/// rings of the gate radius) over `range`, `size` pixels on the long side.
pub fn plot_bev(
    path: &Path,
    detections: &[Vector2<f64>],
    gt: &[Vector2<f64>],
    range: &GroundRange,
    gate: f64,
    size: u32,
) -> Result<()> {
    range.validate()?;
    let (sx, sy) = (range.x_max - range.x_min, range.y_max - range.y_min);
    let px_per_m = size as f64 / sx.max(sy);
    let (w, h) = ((sx * px_per_m).ceil() as u32 + 1, (sy * px_per_m).ceil() as u32 + 1);
    let mut img = ::image::RgbImage::from_pixel(w, h, ::image::Rgb([255, 255, 255]));
    let to_px = |p: &Vector2<f64>| ((p.x - range.x_min) * px_per_m, (range.y_max - p.y) * px_per_m);
    // One-meter grid.
    let mut gx = range.x_min.ceil();
    while gx <= range.x_max {
        let (x, _) = to_px(&Vector2::new(gx, range.y_min));
        for y in 0..h {
            img.put_pixel((x.round() as u32).min(w - 1), y, ::image::Rgb([225, 225, 225]));
        }
        gx += 1.0;
    }
    let mut gy = range.y_min.ceil();
    while gy <= range.y_max {
        let (_, y) = to_px(&Vector2::new(range.x_min, gy));
        for x in 0..w {
            img.put_pixel(x, (y.round() as u32).min(h - 1), ::image::Rgb([225, 225, 225]));
        }
        gy += 1.0;
    }
    let mut dot = |cx: f64, cy: f64, r: f64, ring: bool, color: [u8; 3]| {
        let (x0, x1) = ((cx - r - 1.0).floor().max(0.0) as u32, ((cx + r + 1.0).ceil() as u32).min(w - 1));
        let (y0, y1) = ((cy - r - 1.0).floor().max(0.0) as u32, ((cy + r + 1.0).ceil() as u32).min(h - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = (x as f64 - cx).hypot(y as f64 - cy);
                if (ring && (d - r).abs() <= 0.75) || (!ring && d <= r) {
                    img.put_pixel(x, y, ::image::Rgb(color));
                }
            }
        }
    };
    for g in gt {
        let (x, y) = to_px(g);
        dot(x, y, gate * px_per_m, true, [0, 160, 0]);
    }
    for d in detections {
        let (x, y) = to_px(d);
        dot(x, y, 3.0, false, [20, 60, 220]);
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    img.save(path).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depthmodel::BaselinePredictor;
    use crate::simulator::{generate_scene, SceneConfig};

    #[test]
    fn env_overrides_nested_keys() {
        let env = vec![
            ("MVHUMAN__OPTIM__ITERATIONS".to_string(), "7".to_string()),
            ("MVHUMAN__TAU_VIS".to_string(), "0.2".to_string()),
            ("MVHUMAN__PATHS__OUTPUT".to_string(), "/tmp/out".to_string()),
            ("OTHER".to_string(), "x".to_string()),
        ];
        let cfg = PipelineConfig::from_toml_with_env("loops = 2\n[filter]\ntau = 0.05\n", env).unwrap();
        assert_eq!(cfg.loops, 2);
        assert_eq!(cfg.optim.iterations, 7);
        assert_eq!(cfg.tau_vis, 0.2);
        assert_eq!(cfg.filter.tau, 0.05);
        assert_eq!(cfg.paths.output, Some(PathBuf::from("/tmp/out")));
        let back = PipelineConfig::from_toml_with_env(&cfg.to_toml(), Vec::new()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_config_is_config_error() {
        for text in ["loops = 0", "tau_vis = 1.5", "bogus = 1", "[optim]\niterations = 0"] {
            let e = PipelineConfig::from_toml_with_env(text, Vec::new()).unwrap_err();
            assert!(e.is_config(), "{text}: {e}");
        }
    }

    fn tiny() -> (Vec<CameraView>, crate::simulator::GroundTruthBundle) {
        generate_scene(&SceneConfig {
            pedestrians: 0,
            cameras: 2,
            width: 48,
            image_height: 48,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn single_camera_inference_is_rejected() {
        let (views, _) = tiny();
        let p = BaselinePredictor::new(30, None);
        let e = run_inference(&views[..1], &p, &PipelineConfig::default(), None).unwrap_err();
        assert!(matches!(e, Error::InsufficientViews { needed: 2, got: 1 }));
    }

    #[test]
    fn empty_frame_gives_no_detections() {
        let (views, gt) = tiny();
        let p = BaselinePredictor::new(30, None);
        let out = run_inference(&views, &p, &PipelineConfig::default(), Some(&gt.locations)).unwrap();
        assert!(out.detections.is_empty());
        assert_eq!(out.evaluation.unwrap().moda, 1.0);

        let mut frames = vec![Frame {
            name: "f".into(),
            views,
        }];
        let cfg = PipelineConfig {
            loops: 2,
            optim: OptimConfig {
                iterations: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut preds = vec![BaselinePredictor::new(30, None)];
        let reps = run_training_loop(&mut frames, &cfg, None, &mut preds, &[], None).unwrap();
        assert_eq!(reps.len(), 2);
        assert!(reps.iter().all(|r| r.valid_pixels == 0));
    }

    #[test]
    fn bev_plot_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bev.png");
        let r = GroundRange {
            x_min: -3.0,
            x_max: 3.0,
            y_min: -2.0,
            y_max: 2.0,
        };
        plot_bev(&p, &[Vector2::new(0.0, 0.0)], &[Vector2::new(0.1, 0.0)], &r, 0.5, 300).unwrap();
        let img = ::image::open(&p).unwrap().into_rgb8();
        assert_eq!(img.width(), 301);
        let center = img.get_pixel(150, 100).0;
        assert_eq!(center, [20, 60, 220]);
    }
}
