use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector2;
use serde_json::json;

use mvhuman::camera::GroundRange;
use mvhuman::compensation::SegmentationOracle;
use mvhuman::depthfilter::{generate_pseudo_depth, PseudoDepthMap};
use mvhuman::depthmodel::{BaselinePredictor, DepthPredictor, DropInPredictor};
use mvhuman::error::{Error, Result};
use mvhuman::gaussians::{cull_background, init_from_depth, init_from_superpixels};
use mvhuman::image::DepthImage;
use mvhuman::io::{self, Calibration, DatasetLayout, DetectionRecord, FileExchangeOracle};
use mvhuman::metrics::{evaluate, evaluate_frames, EvalResult};
use mvhuman::optimizer::{optimize, write_log, FitTarget};
use mvhuman::pipeline::{compensate_frame, plot_bev, run_inference, run_training_loop, Frame, PipelineConfig};
use mvhuman::simulator::{generate_scene, SceneConfig};
use mvhuman::superpixel::{mean_color_image, segment_pedestrians};
use mvhuman::view::CameraView;

#[derive(Parser)]
#[command(name = "mvhuman", version, about = "Label-free multiview pedestrian detection from calibrated cameras")]
#[command(after_help = "Any configuration key can be overridden through the environment: \
MVHUMAN__<SECTION>__<KEY>=value, e.g. MVHUMAN__OPTIM__ITERATIONS=50 or MVHUMAN__LOOPS=2.\n\
Exit status: 0 success, 1 configuration error, 2 data error.")]
struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DatasetArg {
    /// Dataset directory; defaults to `paths.dataset` from the configuration.
    #[arg(short, long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Root of `<frame>/<camera>.png` oracle silhouettes (defaults to the
    /// dataset's `oracle/` directory when present).
    #[arg(long, conflicts_with = "oracle_exchange")]
    oracle_maps: Option<PathBuf>,
    /// Exchange directory of an external segmentation service: requests are
    /// written as JSON, answers read back as PNG masks.
    #[arg(long)]
    oracle_exchange: Option<PathBuf>,
    /// Seconds to wait for each external answer.
    #[arg(long, default_value_t = 60)]
    oracle_timeout: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic multi-camera dataset with ground truth.
    Simulate {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        frames: usize,
        /// Scene description (TOML); defaults to the built-in scene.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Seed of the first frame; frame `i` uses `seed + i`.
        #[arg(long)]
        seed: Option<u64>,
        /// Fraction of visible instance masks to drop.
        #[arg(long)]
        missed_mask_rate: Option<f64>,
    },
    /// Place initial Gaussians for one frame.
    Init {
        #[command(flatten)]
        dataset: DatasetArg,
        #[arg(short, long)]
        frame: String,
        /// Output `.gspl` file.
        #[arg(short, long)]
        out: PathBuf,
        /// Predictor state root (`<frame>/<camera>.f32`); when given, Gaussians
        /// are placed around its predicted depth instead of along whole rays.
        #[arg(long)]
        predictor: Option<PathBuf>,
    },
    /// Fit Gaussians of one frame to its images and masks.
    Optimize {
        #[command(flatten)]
        dataset: DatasetArg,
        #[arg(short, long)]
        frame: String,
        #[arg(short, long)]
        gaussians: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Per-iteration loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Render and filter pseudo-depth from fitted Gaussians.
    PseudoDepth {
        #[command(flatten)]
        dataset: DatasetArg,
        #[arg(short, long)]
        frame: String,
        #[arg(short, long)]
        gaussians: PathBuf,
        /// Output root; maps go to `<out>/<frame>/`.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Recover missed masks of one frame from the other views.
    Compensate {
        #[command(flatten)]
        dataset: DatasetArg,
        #[arg(short, long)]
        frame: String,
        /// Predictor state or pseudo-depth root (`<frame>/<camera>.f32`).
        #[arg(long)]
        predictor: PathBuf,
        #[command(flatten)]
        oracle: OracleArgs,
        /// Dataset to write the extended masks into (defaults to the input).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the full self-training loop over every frame.
    TrainLoop {
        #[command(flatten)]
        dataset: DatasetArg,
        /// Output directory; defaults to `paths.output`.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        oracle: OracleArgs,
        /// Skip compensation between loops.
        #[arg(long)]
        no_compensation: bool,
    },
    /// Detect pedestrians in every frame.
    Infer {
        #[command(flatten)]
        dataset: DatasetArg,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Predictor state root written by `train-loop`.
        #[arg(long)]
        predictor: Option<PathBuf>,
    },
    /// Score a detections CSV against ground truth.
    Evaluate {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Match gate in meters (defaults to the configured gate).
        #[arg(long)]
        gate: Option<f64>,
    },
    /// Draw detections and ground truth of one frame from above.
    PlotBev {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(short, long)]
        frame: String,
        #[arg(short, long)]
        out: PathBuf,
        /// Plot extent `x_min,x_max,y_min,y_max`; defaults to the data's extent.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        range: Option<Vec<f64>>,
        #[arg(long, default_value_t = 600)]
        size: u32,
    },
}

/// Baseline predictor, optionally overridden by metric depth files.
enum Predictor {
    Baseline(BaselinePredictor),
    DropIn(DropInPredictor<BaselinePredictor>),
}

impl Predictor {
    fn new(cfg: &PipelineConfig, ground: Option<GroundRange>, frame: &str) -> Self {
        let base = BaselinePredictor::new(cfg.superpixels, ground);
        match &cfg.paths.depth_dropin {
            Some(dir) => Predictor::DropIn(DropInPredictor {
                dir: dir.clone(),
                frame: frame.to_string(),
                inner: base,
            }),
            None => Predictor::Baseline(base),
        }
    }

    fn baseline(&self) -> &BaselinePredictor {
        match self {
            Predictor::Baseline(b) => b,
            Predictor::DropIn(d) => &d.inner,
        }
    }

    /// Restores accumulated pseudo-depth from `<root>/<frame>/`.
    fn restore(&mut self, root: &Path, frame: &str, views: &[CameraView]) -> Result<()> {
        let maps = io::import_pseudo_depth(&root.join(frame), views)?;
        self.update(&maps)
    }
}

impl DepthPredictor for Predictor {
    fn predict(&self, view: &CameraView) -> Result<DepthImage> {
        match self {
            Predictor::Baseline(b) => b.predict(view),
            Predictor::DropIn(d) => d.predict(view),
        }
    }

    fn update(&mut self, pseudo: &[PseudoDepthMap]) -> Result<()> {
        match self {
            Predictor::Baseline(b) => b.update(pseudo),
            Predictor::DropIn(d) => d.update(pseudo),
        }
    }
}

struct Dataset {
    layout: DatasetLayout,
    cal: Calibration,
}

impl Dataset {
    fn open(arg: &DatasetArg, cfg: &PipelineConfig) -> Result<Self> {
        let root = arg
            .dataset
            .clone()
            .or_else(|| cfg.paths.dataset.clone())
            .ok_or_else(|| Error::Config("no dataset given (--dataset or paths.dataset)".into()))?;
        let layout = DatasetLayout::new(root);
        let cal = io::read_calibration(&layout.calibration())?;
        Ok(Self { layout, cal })
    }

    fn frame(&self, name: &str) -> Result<Vec<CameraView>> {
        io::load_frame(&self.layout, &self.cal, name)
    }

    fn gt(&self) -> Result<Option<Vec<io::GroundTruthRecord>>> {
        let p = self.layout.ground_truth();
        if p.exists() {
            io::read_ground_truth(&p).map(Some)
        } else {
            Ok(None)
        }
    }
}

fn output_dir(arg: &Option<PathBuf>, cfg: &PipelineConfig) -> Result<PathBuf> {
    arg.clone()
        .or_else(|| cfg.paths.output.clone())
        .ok_or_else(|| Error::Config("no output directory given (--out or paths.output)".into()))
}

/// Oracle for one frame, if any source is configured.
fn oracle_for(args: &OracleArgs, ds: &Dataset, frame: &str, views: &[CameraView]) -> Result<Option<Box<dyn SegmentationOracle>>> {
    if let Some(dir) = &args.oracle_exchange {
        let mut o = FileExchangeOracle::new(dir.join(frame), Duration::from_secs(args.oracle_timeout));
        for v in views {
            o.images.insert(v.name.clone(), ds.layout.image(frame, &v.name));
        }
        return Ok(Some(Box::new(o)));
    }
    let root = match &args.oracle_maps {
        Some(r) => r.join(frame),
        None => ds.layout.oracle(frame),
    };
    if args.oracle_maps.is_some() || root.exists() {
        return Ok(Some(Box::new(io::read_oracle_maps(&root, views)?)));
    }
    Ok(None)
}

fn simulate(
    out: &Path,
    frames: usize,
    scene: Option<&Path>,
    seed: Option<u64>,
    missed: Option<f64>,
) -> Result<()> {
    let mut sc: SceneConfig = match scene {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SceneConfig::default(),
    };
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(m) = missed {
        sc.missed_mask_rate = m;
    }
    if frames == 0 {
        return Err(Error::Config("--frames must be at least 1".into()));
    }
    let mut data = Vec::with_capacity(frames);
    for f in 0..frames {
        let cfg = SceneConfig {
            seed: sc.seed + f as u64,
            ..sc.clone()
        };
        let (views, gt) = generate_scene(&cfg)?;
        data.push((format!("{f:04}"), views, gt));
    }
    io::save_simulated(&DatasetLayout::new(out), &data, sc.area)?;
    log::info!("wrote {frames} frame(s) to {}", out.display());
    Ok(())
}

fn fit_targets(views: &[CameraView], cfg: &PipelineConfig) -> Result<Vec<FitTarget>> {
    views
        .iter()
        .filter(|v| !v.masks.is_empty())
        .map(|v| {
            let sp = segment_pedestrians(&v.image, &v.masks, cfg.superpixels)?;
            FitTarget::new(v.camera, mean_color_image(&v.image, &sp), v.masks.clone())
        })
        .collect()
}

fn write_reports(path: &Path, reports: &[mvhuman::pipeline::LoopReport]) -> Result<()> {
    let mut text = String::from("loop,valid_pixels,foreground_pixels,masks_added,frames_failed,mean_final_loss\n");
    for r in reports {
        text += &format!(
            "{},{},{},{},{},{}\n",
            r.iteration, r.valid_pixels, r.foreground_pixels, r.masks_added, r.frames_failed, r.mean_final_loss
        );
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Extent of the given points padded by one meter.
fn bev_range(points: impl Iterator<Item = (f64, f64)>) -> GroundRange {
    let mut r = GroundRange {
        x_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        y_min: f64::INFINITY,
        y_max: f64::NEG_INFINITY,
    };
    for (x, y) in points {
        r.x_min = r.x_min.min(x);
        r.x_max = r.x_max.max(x);
        r.y_min = r.y_min.min(y);
        r.y_max = r.y_max.max(y);
    }
    if !r.x_min.is_finite() {
        return GroundRange {
            x_min: -1.0,
            x_max: 1.0,
            y_min: -1.0,
            y_max: 1.0,
        };
    }
    GroundRange {
        x_min: r.x_min - 1.0,
        x_max: r.x_max + 1.0,
        y_min: r.y_min - 1.0,
        y_max: r.y_max + 1.0,
    }
}

fn to_json(v: serde_json::Value) -> String {
    serde_json::to_string_pretty(&v).expect("JSON values serialize")
}

fn run(cli: Cli) -> Result<()> {
    let cfg = PipelineConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate {
            out,
            frames,
            scene,
            seed,
            missed_mask_rate,
        } => simulate(&out, frames, scene.as_deref(), seed, missed_mask_rate),

        Command::Init {
            dataset,
            frame,
            out,
            predictor,
        } => {
            let ds = Dataset::open(&dataset, &cfg)?;
            let views = ds.frame(&frame)?;
            let maps = views
                .iter()
                .map(|v| segment_pedestrians(&v.image, &v.masks, cfg.superpixels))
                .collect::<Result<Vec<_>>>()?;
            let gs = match predictor {
                None => init_from_superpixels(&views, &maps, &cfg.rays, cfg.volume(ds.cal.ground.as_ref()).as_ref())?,
                Some(root) => {
                    let mut p = Predictor::new(&cfg, ds.cal.ground, &frame);
                    p.restore(&root, &frame, &views)?;
                    let depths = views.iter().map(|v| p.predict(v)).collect::<Result<Vec<_>>>()?;
                    init_from_depth(&views, &maps, &depths, &cfg.rays, cfg.depth_band, cfg.depth_samples, cfg.depth_init_opacity)?
                }
            };
            let gs = cull_background(gs, &views);
            log::info!("{} Gaussians", gs.len());
            io::write_gaussians(&out, &gs)
        }

        Command::Optimize {
            dataset,
            frame,
            gaussians,
            out,
            log,
        } => {
            let ds = Dataset::open(&dataset, &cfg)?;
            let views = ds.frame(&frame)?;
            let gs = io::read_gaussians(&gaussians)?;
            let targets = fit_targets(&views, &cfg)?;
            let fit = optimize(gs, &targets, &cfg.loss, &cfg.optim)?;
            log::info!(
                "loss {:.3} -> {:.3}, {} Gaussians",
                fit.initial.total,
                fit.final_loss.total,
                fit.gaussians.len()
            );
            if let Some(l) = log {
                write_log(&l, &fit.log)?;
            }
            io::write_gaussians(&out, &fit.gaussians)
        }

        Command::PseudoDepth {
            dataset,
            frame,
            gaussians,
            out,
        } => {
            let ds = Dataset::open(&dataset, &cfg)?;
            let views = ds.frame(&frame)?;
            let gs = io::read_gaussians(&gaussians)?;
            let maps = generate_pseudo_depth(&gs, &views, &cfg.filter)?;
            let valid: usize = maps.iter().map(PseudoDepthMap::valid_count).sum();
            log::info!("{valid} valid pseudo-depth pixels");
            io::export_pseudo_depth(&out.join(&frame), &views, &maps)
        }

        Command::Compensate {
            dataset,
            frame,
            predictor,
            oracle,
            out,
        } => {
            let ds = Dataset::open(&dataset, &cfg)?;
            let views = ds.frame(&frame)?;
            let mut p = Predictor::new(&cfg, ds.cal.ground, &frame);
            p.restore(&predictor, &frame, &views)?;
            let orc = oracle_for(&oracle, &ds, &frame, &views)?
                .ok_or_else(|| Error::Config("compensation needs --oracle-maps or --oracle-exchange".into()))?;
            let mut f = Frame { name: frame, views };
            let added = compensate_frame(&mut f, &p, orc.as_ref(), &cfg.compensation)?;
            log::info!("added masks per view: {added:?}");
            let target = out.map(DatasetLayout::new).unwrap_or_else(|| ds.layout.clone());
            if target.root != ds.layout.root {
                io::write_calibration(&target.calibration(), &ds.cal)?;
            }
            io::save_frame(&target, &f.name, &f.views)
        }

        Command::TrainLoop {
            dataset,
            out,
            oracle,
            no_compensation,
        } => {
            let ds = Dataset::open(&dataset, &cfg)?;
            let out = output_dir(&out, &cfg)?;
            let mut frames = Vec::new();
            for name in ds.layout.frames()? {
                match ds.frame(&name) {
                    Ok(views) => frames.push(Frame { name, views }),
                    Err(e) if e.is_config() => return Err(e),
                    Err(e) => log::warn!("frame {name}: {e}; skipped"),
                }
            }
            if frames.is_empty() {
                return Err(Error::Data(format!("no usable frames in {}", ds.layout.root.display())));
            }
            let oracles: Vec<Box<dyn SegmentationOracle>> = if no_compensation {
                Vec::new()
            } else {
                let mut v = Vec::new();
                for f in &frames {
                    match oracle_for(&oracle, &ds, &f.name, &f.views)? {
                        Some(o) => v.push(o),
                        None => {
                            log::warn!("no segmentation oracle available; compensation disabled");
                            v.clear();
                            break;
                        }
                    }
                }
                v
            };
            let refs: Vec<&dyn SegmentationOracle> = oracles.iter().map(|o| o.as_ref()).collect();
            let mut preds: Vec<Predictor> = frames.iter().map(|f| Predictor::new(&cfg, ds.cal.ground, &f.name)).collect();
            let reports = run_training_loop(&mut frames, &cfg, ds.cal.ground.as_ref(), &mut preds, &refs, Some(&out))?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_reports(&out.join("loops.csv"), &reports)?;
            std::fs::write(out.join("config.toml"), cfg.to_toml()).map_err(|e| Error::io(&out, e))?;
            let final_ds = DatasetLayout::new(out.join("dataset"));
            io::write_calibration(&final_ds.calibration(), &ds.cal)?;
            for (f, p) in frames.iter().zip(&preds) {
                io::export_pseudo_depth(&out.join("predictor").join(&f.name), &f.views, &p.baseline().snapshot(&f.views))?;
                io::save_frame(&final_ds, &f.name, &f.views)?;
            }
            for r in &reports {
                println!(
                    "loop {}: {} valid pseudo-depth pixels, {} masks added",
                    r.iteration, r.valid_pixels, r.masks_added
                );
            }
            Ok(())
        }

        Command::Infer {
            dataset,
            out,
            predictor,
        } => {
            let ds = Dataset::open(&dataset, &cfg)?;
            let out = output_dir(&out, &cfg)?;
            let gt = ds.gt()?;
            let mut rows: Vec<DetectionRecord> = Vec::new();
            let mut per_frame: Vec<(String, EvalResult)> = Vec::new();
            let mut pooled = Vec::new();
            for name in ds.layout.frames()? {
                let views = match ds.frame(&name) {
                    Ok(v) => v,
                    Err(e) if e.is_config() => return Err(e),
                    Err(e) => {
                        log::warn!("frame {name}: {e}; skipped");
                        continue;
                    }
                };
                let mut p = Predictor::new(&cfg, ds.cal.ground, &name);
                if let Some(root) = &predictor {
                    p.restore(root, &name, &views)?;
                }
                let truth = gt
                    .as_ref()
                    .map(|g| io::frame_points(g.iter().map(|r| (r.frame.as_str(), r.x, r.y)), &name));
                let res = run_inference(&views, &p, &cfg, truth.as_deref())?;
                let dets: Vec<_> = res.detections.iter().map(|d| Vector2::new(d.x, d.y)).collect();
                let range = ds
                    .cal
                    .ground
                    .unwrap_or_else(|| bev_range(dets.iter().chain(truth.iter().flatten()).map(|p| (p.x, p.y))));
                plot_bev(
                    &out.join("bev").join(format!("{name}.png")),
                    &dets,
                    truth.as_deref().unwrap_or(&[]),
                    &range,
                    cfg.gate,
                    600,
                )?;
                rows.extend(res.detections.iter().map(|d| DetectionRecord {
                    frame: name.clone(),
                    x: d.x,
                    y: d.y,
                    confidence: d.confidence,
                    id: d.id,
                }));
                if let (Some(e), Some(t)) = (res.evaluation, truth) {
                    log::info!("frame {name}: MODA {:.3}, MODP {:.3}", e.moda, e.modp);
                    per_frame.push((name.clone(), e));
                    pooled.push((dets, t));
                }
            }
            io::write_detection_records(&out.join("detections.csv"), &rows)?;
            if !pooled.is_empty() {
                let total = evaluate_frames(pooled.iter().map(|(d, t)| (&d[..], &t[..])), cfg.gate)?;
                let text = to_json(json!({ "total": total, "frames": per_frame }));
                std::fs::write(out.join("metrics.json"), &text).map_err(|e| Error::io(&out, e))?;
                println!("{}", to_json(json!(total)));
            }
            Ok(())
        }

        Command::Evaluate { detections, gt, gate } => {
            let gate = gate.unwrap_or(cfg.gate);
            let dets = io::read_detections(&detections)?;
            let truth = io::read_ground_truth(&gt)?;
            let mut frames: Vec<&str> = truth.iter().map(|r| r.frame.as_str()).collect();
            frames.extend(dets.iter().map(|r| r.frame.as_str()));
            frames.sort_unstable();
            frames.dedup();
            let pairs: Vec<_> = frames
                .iter()
                .map(|f| {
                    (
                        io::frame_points(dets.iter().map(|r| (r.frame.as_str(), r.x, r.y)), f),
                        io::frame_points(truth.iter().map(|r| (r.frame.as_str(), r.x, r.y)), f),
                    )
                })
                .collect();
            let per_frame = frames
                .iter()
                .zip(&pairs)
                .map(|(f, (d, t))| Ok((f.to_string(), evaluate(d, t, gate)?)))
                .collect::<Result<Vec<_>>>()?;
            let total = evaluate_frames(pairs.iter().map(|(d, t)| (&d[..], &t[..])), gate)?;
            println!("{}", to_json(json!({ "total": total, "frames": per_frame })));
            Ok(())
        }

        Command::PlotBev {
            detections,
            gt,
            frame,
            out,
            range,
            size,
        } => {
            let dets = io::frame_points(
                io::read_detections(&detections)?.iter().map(|r| (r.frame.as_str(), r.x, r.y)),
                &frame,
            );
            let truth = match gt {
                Some(p) => io::frame_points(
                    io::read_ground_truth(&p)?.iter().map(|r| (r.frame.as_str(), r.x, r.y)),
                    &frame,
                ),
                None => Vec::new(),
            };
            let range = match range {
                Some(r) => GroundRange {
                    x_min: r[0],
                    x_max: r[1],
                    y_min: r[2],
                    y_max: r[3],
                },
                None => bev_range(dets.iter().chain(&truth).map(|p| (p.x, p.y))),
            };
            plot_bev(&out, &dets, &truth, &range, cfg.gate, size)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
