//! On-disk formats.
//!
//! | file | layout |
//! |------|--------|
//! | `calibration.toml` | `[[camera]]` tables with `name`, `width`, `height`, `fx`, `fy`, `cx`, `cy`, `rotation` (3 rows, camera-to-world), `translation` (camera center); optional `[ground]` with `x_min`, `x_max`, `y_min`, `y_max` |
//! | `*.f32` depth | `b"DPTH"`, `u32` version (1), `u32` width, `u32` height, then `width·height` little-endian `f32` in row-major order; NaN marks invalid pixels |
//! | `*.gspl` Gaussians | `b"GSPL"`, `u32` version (1), `u64` count, then per Gaussian 14 little-endian `f64` (mean xyz, log-scales xyz, quaternion wxyz, opacity logit, color rgb) and one `u32` pedestrian id (0 = none) |
//! | instance masks | 16-bit grayscale PNG; 0 is background, every other value one instance (ordered by value) |
//! | validity masks | 8-bit grayscale PNG, 0 or 255 |
//! | images | 8-bit RGB PNG |
//! | detections CSV | `frame,x,y,confidence,id` |
//! | ground-truth CSV | `frame,x,y` |
//!
//! A dataset directory holds `calibration.toml`, `images/<frame>/<camera>.png`,
//! `masks/<frame>/<camera>.png`, optionally `depth/<frame>/<camera>.f32`,
//! `gt.csv` and, for simulated data, `oracle/<frame>/<camera>.png` holding
//! every pedestrian's full silhouette (label = pedestrian index + 1).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ::image::{GrayImage, ImageBuffer, Luma, RgbImage as PngRgb};
use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Extrinsics, GroundRange, Intrinsics};
use crate::compensation::SegmentationOracle;
use crate::depthfilter::PseudoDepthMap;
use crate::error::{Error, Result};
use crate::gaussians::Gaussian3D;
use crate::image::{DepthImage, Grid, Mask, RgbImage};
use crate::localization::Detection;
use crate::simulator::{GroundTruthBundle, GtOracle};
use crate::view::CameraView;

const DEPTH_MAGIC: &[u8; 4] = b"DPTH";
const GAUSS_MAGIC: &[u8; 4] = b"GSPL";
const VERSION: u32 = 1;

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- calibration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// Camera center.
    pub translation: [f64; 3],
}

impl CameraRecord {
    pub fn from_camera(name: &str, cam: &Camera) -> Self {
        let r = cam.extrinsics.rotation;
        let t = cam.extrinsics.translation;
        let k = cam.intrinsics;
        Self {
            name: name.to_string(),
            width: k.width,
            height: k.height,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        let k = Intrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?;
        let r = Matrix3::from_fn(|i, j| self.rotation[i][j]);
        let e = Extrinsics::new(r, Vector3::from(self.translation))?;
        Ok(Camera::new(k, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    #[serde(rename = "camera")]
    pub cameras: Vec<CameraRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground: Option<GroundRange>,
}

impl Calibration {
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        self.cameras.iter().map(CameraRecord::camera).collect()
    }
}

pub fn read_calibration(path: &Path) -> Result<Calibration> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cal: Calibration = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    for c in &cal.cameras {
        c.camera().map_err(|e| Error::format(path, format!("camera {}: {e}", c.name)))?;
    }
    Ok(cal)
}

pub fn write_calibration(path: &Path, cal: &Calibration) -> Result<()> {
    let text = toml::to_string_pretty(cal).map_err(|e| Error::format(path, e.to_string()))?;
    create(path)?.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- depth

pub fn write_depth_to<W: Write>(mut w: W, depth: &DepthImage) -> std::io::Result<()> {
    w.write_all(DEPTH_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(depth.width() as u32).to_le_bytes())?;
    w.write_all(&(depth.height() as u32).to_le_bytes())?;
    for &d in depth.as_slice() {
        let v = if d.is_finite() { d as f32 } else { f32::NAN };
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn write_depth(path: &Path, depth: &DepthImage) -> Result<()> {
    write_depth_to(create(path)?, depth).map_err(|e| Error::io(path, e))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_depth(path: &Path) -> Result<DepthImage> {
    let mut r = open(path)?;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != DEPTH_MAGIC {
        return Err(Error::format(path, "not a DPTH depth file"));
    }
    let version = read_u32(&mut r).map_err(|e| Error::io(path, e))?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported depth version {version}")));
    }
    let w = read_u32(&mut r).map_err(|e| Error::io(path, e))? as usize;
    let h = read_u32(&mut r).map_err(|e| Error::io(path, e))? as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * w * h {
        return Err(Error::format(
            path,
            format!("expected {} depth bytes for {w}x{h}, found {}", 4 * w * h, bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(DepthImage::from_vec(w, h, data))
}

// ---------------------------------------------------------------- gaussians

pub fn write_gaussians_to<W: Write>(mut w: W, gaussians: &[Gaussian3D]) -> std::io::Result<()> {
    w.write_all(GAUSS_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(gaussians.len() as u64).to_le_bytes())?;
    for g in gaussians {
        let q = g.rotation.quaternion();
        let vals = [
            g.mean.x,
            g.mean.y,
            g.mean.z,
            g.log_scales.x,
            g.log_scales.y,
            g.log_scales.z,
            q.w,
            q.i,
            q.j,
            q.k,
            g.opacity_logit,
            g.color[0],
            g.color[1],
            g.color[2],
        ];
        for v in vals {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&g.ped_id.unwrap_or(0).to_le_bytes())?;
    }
    w.flush()
}

pub fn write_gaussians(path: &Path, gaussians: &[Gaussian3D]) -> Result<()> {
    write_gaussians_to(create(path)?, gaussians).map_err(|e| Error::io(path, e))
}

pub fn read_gaussians(path: &Path) -> Result<Vec<Gaussian3D>> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != GAUSS_MAGIC {
        return Err(Error::format(path, "not a GSPL Gaussian file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported Gaussian version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    const RECORD: usize = 14 * 8 + 4;
    let body = &bytes[16..];
    if body.len() != n * RECORD {
        return Err(Error::format(path, format!("expected {n} records, found {} bytes", body.len())));
    }
    body.chunks_exact(RECORD)
        .map(|rec| {
            let f: Vec<f64> = rec[..112]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let id = u32::from_le_bytes(rec[112..].try_into().unwrap());
            let g = Gaussian3D {
                mean: Vector3::new(f[0], f[1], f[2]),
                log_scales: Vector3::new(f[3], f[4], f[5]),
                rotation: UnitQuaternion::from_quaternion(Quaternion::new(f[6], f[7], f[8], f[9])),
                opacity_logit: f[10],
                color: [f[11], f[12], f[13]],
                ped_id: (id != 0).then_some(id),
            };
            if g.is_valid() {
                Ok(g)
            } else {
                Err(Error::format(path, "record with non-finite or out-of-range values"))
            }
        })
        .collect()
}

// ---------------------------------------------------------------- images

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let out = PngRgb::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let c = img.get(x as usize, y as usize);
        ::image::Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    save(path, |p| out.save(p))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = ::image::open(path).map_err(|e| Error::format(path, e.to_string()))?.into_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::from_fn(w as usize, h as usize, |x, y| {
        img.get_pixel(x as u32, y as u32).0.map(|v| v as f64 / 255.0)
    }))
}

fn save(path: &Path, f: impl FnOnce(&Path) -> ::image::ImageResult<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    f(path).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let out = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if *mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    save(path, |p| out.save(p))
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = ::image::open(path).map_err(|e| Error::format(path, e.to_string()))?.into_luma8();
    let (w, h) = img.dimensions();
    Ok(Mask::from_fn(w as usize, h as usize, |x, y| img.get_pixel(x as u32, y as u32).0[0] > 127))
}

/// Writes disjoint instance masks as one 16-bit image; mask `i` gets `ids[i]`.
pub fn write_instance_masks(path: &Path, masks: &[Mask], ids: &[u32], width: usize, height: usize) -> Result<()> {
    if masks.len() != ids.len() {
        return Err(Error::LengthMismatch {
            what: "masks vs ids",
            left: masks.len(),
            right: ids.len(),
        });
    }
    if let Some(&bad) = ids.iter().find(|&&i| i == 0 || i > u16::MAX as u32) {
        return Err(Error::Data(format!("instance id {bad} does not fit a 16-bit label (1..=65535)")));
    }
    let mut buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(width as u32, height as u32);
    for (m, &id) in masks.iter().zip(ids) {
        for (x, y) in m.pixels() {
            buf.put_pixel(x as u32, y as u32, Luma([id as u16]));
        }
    }
    save(path, |p| buf.save(p))
}

/// Reads a 16-bit instance image into masks ordered by label, with labels.
pub fn read_instance_masks(path: &Path) -> Result<(Vec<Mask>, Vec<u32>)> {
    let img = ::image::open(path).map_err(|e| Error::format(path, e.to_string()))?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut by_id: BTreeMap<u16, Mask> = BTreeMap::new();
    for (x, y, p) in img.enumerate_pixels() {
        let id = p.0[0];
        if id != 0 {
            by_id
                .entry(id)
                .or_insert_with(|| Mask::new(w, h, false))
                .set(x as usize, y as usize, true);
        }
    }
    let ids = by_id.keys().map(|&k| k as u32).collect();
    Ok((by_id.into_values().collect(), ids))
}

// ---------------------------------------------------------------- csv

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: String,
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
    pub id: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub frame: String,
    pub x: f64,
    pub y: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

pub fn write_detections(path: &Path, frame: &str, dets: &[Detection]) -> Result<()> {
    let rows: Vec<_> = dets
        .iter()
        .map(|d| DetectionRecord {
            frame: frame.to_string(),
            x: d.x,
            y: d.y,
            confidence: d.confidence,
            id: d.id,
        })
        .collect();
    write_csv(path, &rows)
}

pub fn write_detection_records(path: &Path, rows: &[DetectionRecord]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    read_csv(path)
}

pub fn write_ground_truth(path: &Path, rows: &[GroundTruthRecord]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthRecord>> {
    read_csv(path)
}

/// Locations of one frame from a ground-truth or detection table.
pub fn frame_points<'a>(rows: impl IntoIterator<Item = (&'a str, f64, f64)>, frame: &str) -> Vec<Vector2<f64>> {
    rows.into_iter()
        .filter(|(f, _, _)| *f == frame)
        .map(|(_, x, y)| Vector2::new(x, y))
        .collect()
}

// ---------------------------------------------------------------- datasets

/// Paths inside a dataset directory.
#[derive(Clone, Debug)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn calibration(&self) -> PathBuf {
        self.root.join("calibration.toml")
    }

    pub fn image(&self, frame: &str, camera: &str) -> PathBuf {
        self.root.join("images").join(frame).join(format!("{camera}.png"))
    }

    pub fn masks(&self, frame: &str, camera: &str) -> PathBuf {
        self.root.join("masks").join(frame).join(format!("{camera}.png"))
    }

    pub fn depth(&self, frame: &str, camera: &str) -> PathBuf {
        self.root.join("depth").join(frame).join(format!("{camera}.f32"))
    }

    /// Directory of oracle silhouettes for one frame.
    pub fn oracle(&self, frame: &str) -> PathBuf {
        self.root.join("oracle").join(frame)
    }

    pub fn ground_truth(&self) -> PathBuf {
        self.root.join("gt.csv")
    }

    /// Frame names found under `images/`, sorted.
    pub fn frames(&self) -> Result<Vec<String>> {
        let dir = self.root.join("images");
        let mut out: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().to_str().map(str::to_string))
            .collect();
        out.sort();
        Ok(out)
    }
}

/// One frame of calibrated views loaded from a dataset directory. Views
/// without a mask file get no masks and a warning.
pub fn load_frame(layout: &DatasetLayout, cal: &Calibration, frame: &str) -> Result<Vec<CameraView>> {
    let cams = cal.cameras()?;
    cal.cameras
        .iter()
        .zip(cams)
        .enumerate()
        .map(|(id, (rec, camera))| {
            let ipath = layout.image(frame, &rec.name);
            let image = read_rgb(&ipath)?;
            if image.width() != rec.width || image.height() != rec.height {
                return Err(Error::format(
                    &ipath,
                    format!(
                        "image is {}x{}, calibration says {}x{}",
                        image.width(),
                        image.height(),
                        rec.width,
                        rec.height
                    ),
                ));
            }
            let mpath = layout.masks(frame, &rec.name);
            let masks = if mpath.exists() {
                let (m, _) = read_instance_masks(&mpath)?;
                if m.iter().any(|m| !m.same_shape(&image)) {
                    return Err(Error::format(&mpath, "mask size differs from image"));
                }
                m
            } else {
                log::warn!("no masks for camera {} in frame {frame}", rec.name);
                Vec::new()
            };
            let dpath = layout.depth(frame, &rec.name);
            let depth = if dpath.exists() { Some(read_depth(&dpath)?) } else { None };
            Ok(CameraView {
                id,
                name: rec.name.clone(),
                camera,
                image,
                masks,
                depth,
            })
        })
        .collect()
}

/// Writes images and masks of one frame (mask `i` labeled `i + 1`).
pub fn save_frame(layout: &DatasetLayout, frame: &str, views: &[CameraView]) -> Result<()> {
    for v in views {
        write_rgb(&layout.image(frame, &v.name), &v.image)?;
        let ids: Vec<u32> = (1..=v.masks.len() as u32).collect();
        write_instance_masks(&layout.masks(frame, &v.name), &v.masks, &ids, v.width(), v.height())?;
        if let Some(d) = &v.depth {
            write_depth(&layout.depth(frame, &v.name), d)?;
        }
    }
    Ok(())
}

/// Writes `<dir>/<camera>.f32` plus `<dir>/<camera>_valid.png` per map.
pub fn export_pseudo_depth(dir: &Path, views: &[CameraView], maps: &[PseudoDepthMap]) -> Result<()> {
    for m in maps {
        let v = views
            .iter()
            .find(|v| v.id == m.view)
            .ok_or_else(|| Error::Data(format!("pseudo-depth for unknown view {}", m.view)))?;
        write_depth(&dir.join(format!("{}.f32", v.name)), &m.labels())?;
        write_mask(&dir.join(format!("{}_valid.png", v.name)), &m.valid)?;
    }
    Ok(())
}

/// Reads what [`export_pseudo_depth`] wrote for the given views.
pub fn import_pseudo_depth(dir: &Path, views: &[CameraView]) -> Result<Vec<PseudoDepthMap>> {
    views
        .iter()
        .map(|v| {
            let depth = read_depth(&dir.join(format!("{}.f32", v.name)))?;
            let valid = read_mask(&dir.join(format!("{}_valid.png", v.name)))?;
            Ok(PseudoDepthMap {
                view: v.id,
                depth,
                valid,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- oracle

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub camera: String,
    pub width: usize,
    pub height: usize,
    pub image: Option<PathBuf>,
    pub points: Vec<[f64; 2]>,
    /// `[x0, y0, x1, y1]`, inclusive pixel bounds.
    pub bbox: [f64; 4],
    /// Where the answering service must write the mask PNG.
    pub response: PathBuf,
}

/// Segmentation by an external service: each call writes
/// `request_<n>.json` (a [`PromptRequest`]) into `dir` and waits for the
/// 8-bit mask PNG named in its `response` field.
pub struct FileExchangeOracle {
    pub dir: PathBuf,
    pub timeout: Duration,
    /// Per camera name, the image file the service should segment.
    pub images: BTreeMap<String, PathBuf>,
    counter: std::sync::atomic::AtomicUsize,
}

impl FileExchangeOracle {
    pub fn new(dir: impl Into<PathBuf>, timeout: Duration) -> Self {
        Self {
            dir: dir.into(),
            timeout,
            images: BTreeMap::new(),
            counter: Default::default(),
        }
    }
}

impl SegmentationOracle for FileExchangeOracle {
    fn segment(&self, view: &CameraView, points: &[Vector2<f64>], bbox: [f64; 4]) -> Result<Mask> {
        let n = self.counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        let response = self.dir.join(format!("response_{n:06}.png"));
        let req = PromptRequest {
            camera: view.name.clone(),
            width: view.width(),
            height: view.height(),
            image: self.images.get(&view.name).cloned(),
            points: points.iter().map(|p| [p.x, p.y]).collect(),
            bbox,
            response: response.clone(),
        };
        let rpath = self.dir.join(format!("request_{n:06}.json"));
        let text = serde_json::to_string_pretty(&req).map_err(|e| Error::Oracle(e.to_string()))?;
        create(&rpath)?.write_all(text.as_bytes()).map_err(|e| Error::io(&rpath, e))?;
        let start = Instant::now();
        while !response.exists() {
            if start.elapsed() > self.timeout {
                return Err(Error::Oracle(format!("no response at {} within {:?}", response.display(), self.timeout)));
            }
            std::thread::sleep(Duration::from_millis(20));
        }
        let mask = read_mask(&response).map_err(|e| Error::Oracle(e.to_string()))?;
        if mask.width() != view.width() || mask.height() != view.height() {
            return Err(Error::Oracle(format!("response mask for {} has the wrong size", view.name)));
        }
        Ok(mask)
    }
}

// ---------------------------------------------------------------- simulated data

/// Per-view oracle silhouettes as `<dir>/<camera>.png`; pedestrian `p` is
/// stored as label `p + 1`.
pub fn write_oracle_maps(dir: &Path, views: &[CameraView], maps: &[Grid<Option<usize>>]) -> Result<()> {
    for (v, map) in views.iter().zip(maps) {
        let mut buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(map.width() as u32, map.height() as u32);
        for (x, y, p) in map.iter_xy() {
            if let Some(p) = p {
                let label = u16::try_from(p + 1).map_err(|_| Error::Data(format!("pedestrian index {p} exceeds 16 bits")))?;
                buf.put_pixel(x as u32, y as u32, Luma([label]));
            }
        }
        save(&dir.join(format!("{}.png", v.name)), |p| buf.save(p))?;
    }
    Ok(())
}

/// Rebuilds a [`GtOracle`] from what [`write_oracle_maps`] wrote.
pub fn read_oracle_maps(dir: &Path, views: &[CameraView]) -> Result<GtOracle> {
    let mut instance_maps = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        if v.id != i {
            return Err(Error::Data("oracle maps need views numbered 0..n in order".into()));
        }
        let path = dir.join(format!("{}.png", v.name));
        let img = ::image::open(&path).map_err(|e| Error::format(&path, e.to_string()))?.into_luma16();
        let map = Grid::from_fn(img.width() as usize, img.height() as usize, |x, y| {
            let l = img.get_pixel(x as u32, y as u32).0[0];
            (l > 0).then(|| l as usize - 1)
        });
        if map.width() != v.width() || map.height() != v.height() {
            return Err(Error::format(&path, "oracle map size differs from image"));
        }
        instance_maps.push(map);
    }
    Ok(GtOracle { instance_maps })
}

/// Writes simulated frames as a dataset: calibration (with the ground
/// range), images, reported masks, `gt.csv`, and the full silhouettes under
/// `oracle/<frame>/` for a ground-truth segmentation oracle.
pub fn save_simulated(
    layout: &DatasetLayout,
    frames: &[(String, Vec<CameraView>, GroundTruthBundle)],
    ground: GroundRange,
) -> Result<()> {
    let Some((_, first, _)) = frames.first() else {
        return Err(Error::Data("no frames to write".into()));
    };
    let cal = Calibration {
        cameras: first.iter().map(|v| CameraRecord::from_camera(&v.name, &v.camera)).collect(),
        ground: Some(ground),
    };
    write_calibration(&layout.calibration(), &cal)?;
    let mut gt_rows = Vec::new();
    for (name, views, gt) in frames {
        save_frame(layout, name, views)?;
        write_oracle_maps(&layout.oracle(name), views, &gt.instance_maps)?;
        gt_rows.extend(gt.locations.iter().map(|p| GroundTruthRecord {
            frame: name.clone(),
            x: p.x,
            y: p.y,
        }));
    }
    write_ground_truth(&layout.ground_truth(), &gt_rows)
}
