use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dyadic_activity::activity_map::{ground_truth, MapParameters, SessionInfo};
use dyadic_activity::dataset::synthetic::MovingTexture;
use dyadic_activity::dataset::{load_split, ActivityKind, ClipSet, RecordClips, SplitSet};
use dyadic_activity::error::{Error, Result};
use dyadic_activity::frames::FrameDescriptor;
use dyadic_activity::inference::{
    choose_batch_size, classifications, classify_proposals, sweep_batch_sizes,
    write_classifications, SWEEP_SIZES,
};
use dyadic_activity::model::{load_weights, save_weights, ModelConfig, INPUT_SIDE};
use dyadic_activity::pipeline::{
    build_map, raw_decode_command, run_pipeline, transcode_command, SessionConfig,
};
use dyadic_activity::projection::{
    project_session, reduction_stats, write_regions, ProjectionParams,
};
use dyadic_activity::proposals::{
    generate_typing_proposals, generate_writing_proposals, read_inits, read_proposals,
    write_proposals, ProposalParams,
};
use dyadic_activity::select::{select_optimal, train_grid, GridEntry, GridSets};
use dyadic_activity::tracking::{read_detections, track_keyboard, KeyboardTrack, TrackSchedule};
use dyadic_activity::train::{train_model_with, Control, TrainConfig};
use dyadic_activity::{frames::RawVideo, inference::read_classifications};

#[derive(Parser)]
#[command(
    name = "dyadic",
    version,
    about = "Typing and writing activity maps for session videos"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Typing,
    Writing,
}

impl From<Kind> for ActivityKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Typing => ActivityKind::Typing,
            Kind::Writing => ActivityKind::Writing,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the archive transcode command (and optionally the raw decode).
    TranscodeCmd {
        input: String,
        output: String,
        /// Also print the decode into raw RGB frames at this path.
        #[arg(long)]
        raw: Option<String>,
    },
    /// Keyboard track from scheduled detections.
    Track {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seconds between trusted detections.
        #[arg(long, default_value_t = 5)]
        period: u32,
    },
    /// Stable hand regions per window.
    Project {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        threshold: u8,
        #[arg(long, default_value_t = 8)]
        cell: usize,
        #[arg(long, default_value_t = 12)]
        window: usize,
        #[arg(long, default_value_t = 0.001)]
        min_area: f64,
    },
    /// Person-attributed 3-second proposals.
    Propose {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        frames: PathBuf,
        /// Region initializations, one person per line.
        #[arg(long)]
        regions: PathBuf,
        /// Keyboard track (typing).
        #[arg(long)]
        track: Option<PathBuf>,
        /// Stable regions (writing).
        #[arg(long)]
        stable: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        min_presence: f64,
        #[arg(long, default_value_t = 12)]
        window: usize,
    },
    /// Train one grid member.
    Train(TrainArgs),
    /// Pick the grid member with the best validation AUC.
    Select(SelectArgs),
    /// Classify proposals.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        batch: usize,
    },
    /// Batch-size sweep on benchmark clips, or replay of a recorded curve.
    Sweep {
        #[arg(long, required_unless_present = "replay")]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 33)]
        clips: usize,
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_SIZES)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// JSON object mapping batch size to speed multiple.
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster classified proposals into an activity map.
    Map {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        classification: PathBuf,
        #[arg(long)]
        session_id: String,
        #[arg(long)]
        base_url: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        gap: f64,
        #[arg(long, default_value_t = 0.0)]
        min_duration: f64,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Keep overlapping typing of different persons.
        #[arg(long)]
        no_resolve: bool,
        /// Ground-truth labels for TP/FP/FN marks.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Activity evaluated against the labels.
        #[arg(long, value_enum, default_value = "typing")]
        kind: Kind,
    },
    /// Every stage of one session from its config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "typing")]
        kind: Kind,
    },
}

#[derive(Args)]
struct SelectArgs {
    /// JSON array of already evaluated grid entries.
    #[arg(long, required_unless_present = "synthetic")]
    grid: Option<PathBuf>,
    /// Train all twelve configs on moving textures first.
    #[arg(long, conflicts_with = "grid")]
    synthetic: bool,
    #[arg(long, default_value_t = 200)]
    train_count: usize,
    #[arg(long, default_value_t = 50)]
    val_count: usize,
    #[arg(long, default_value_t = INPUT_SIDE)]
    side: usize,
    #[arg(long, default_value_t = 50)]
    min_epochs: usize,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Keep each trained model here.
    #[arg(long)]
    weights_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 4)]
    depth: u8,
    #[arg(long, default_value_t = 10)]
    fr: u32,
    #[arg(long)]
    out: PathBuf,
    /// Labeled records; needs --manifest and --frames-dir.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory holding one `<session>.toml` sidecar per session.
    #[arg(long)]
    frames_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "typing")]
    kind: Kind,
    /// Train on the moving-texture set instead of labeled sessions.
    #[arg(long, conflicts_with = "labels")]
    synthetic: bool,
    #[arg(long, default_value_t = 200)]
    train_count: usize,
    #[arg(long, default_value_t = 50)]
    val_count: usize,
    #[arg(long, default_value_t = INPUT_SIDE)]
    side: usize,
    #[arg(long, default_value_t = 50)]
    min_epochs: usize,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    flip: bool,
    /// Write the per-epoch history as JSON.
    #[arg(long)]
    history: Option<PathBuf>,
}

fn write_json(path: &PathBuf, v: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v).expect("serializable") + "\n";
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })
}

fn read_text(path: &PathBuf) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })
}

fn train(a: TrainArgs) -> Result<()> {
    let config = ModelConfig::new(a.depth, a.fr)?;
    let tc = TrainConfig {
        min_epochs: a.min_epochs,
        max_epochs: a.max_epochs,
        patience: a.patience,
        learning_rate: a.lr,
        batch_size: a.batch,
        seed: a.seed,
        flip: a.flip,
    };
    let log = |s: &dyadic_activity::train::EpochStats| {
        println!(
            "epoch {:3}  train {:.4}  val {:.4}  auc {:.3}  acc {:.1}%",
            s.epoch, s.train_loss, s.val_loss, s.val_auc, s.val_accuracy
        );
        Control::Continue
    };
    let (train_set, val_set): (Box<dyn ClipSet>, Box<dyn ClipSet>) = if a.synthetic {
        let n = config.clip_frames();
        (
            Box::new(MovingTexture::new(
                a.seed.wrapping_add(1),
                a.train_count,
                n,
                a.side,
            )),
            Box::new(MovingTexture::new(
                a.seed.wrapping_add(2),
                a.val_count,
                n,
                a.side,
            )),
        )
    } else {
        let missing = || {
            Error::Config("--labels needs --manifest and --frames-dir (or use --synthetic)".into())
        };
        let labels = a.labels.as_ref().ok_or_else(missing)?;
        let manifest = a.manifest.as_ref().ok_or_else(missing)?;
        let dir = a.frames_dir.as_ref().ok_or_else(missing)?;
        let split = load_split(labels, manifest)?;
        let kind: ActivityKind = a.kind.into();
        let pick = |s| {
            split
                .set(s)
                .iter()
                .filter(|r| r.activity.kind() == kind)
                .cloned()
                .collect::<Vec<_>>()
        };
        (
            Box::new(RecordClips::new(pick(SplitSet::Train), dir, a.fr, a.side)?),
            Box::new(RecordClips::new(pick(SplitSet::Val), dir, a.fr, a.side)?),
        )
    };
    let out = train_model_with(config, &*train_set, &*val_set, &tc, log)?;
    save_weights(&out.model, &a.out)?;
    println!(
        "best epoch {} of {}; weights {}",
        out.best_epoch,
        out.history.len(),
        a.out.display()
    );
    if let Some(h) = &a.history {
        write_json(h, &out.history)?;
    }
    Ok(())
}

fn select(a: SelectArgs) -> Result<()> {
    let entries: Vec<GridEntry> = match &a.grid {
        Some(grid) => serde_json::from_str(&read_text(grid)?)
            .map_err(|e| Error::Config(format!("{}: {e}", grid.display())))?,
        None => {
            let tc = TrainConfig {
                min_epochs: a.min_epochs,
                max_epochs: a.max_epochs,
                seed: a.seed,
                ..TrainConfig::default()
            };
            if let Some(d) = &a.weights_dir {
                std::fs::create_dir_all(d).map_err(|e| Error::Io {
                    path: d.clone(),
                    source: e,
                })?;
            }
            let sets = |fr| {
                let n = ModelConfig::new(1, fr)?.clip_frames();
                Ok(GridSets {
                    train: Box::new(MovingTexture::new(
                        a.seed.wrapping_add(1),
                        a.train_count,
                        n,
                        a.side,
                    )),
                    val: Box::new(MovingTexture::new(
                        a.seed.wrapping_add(2),
                        a.val_count,
                        n,
                        a.side,
                    )),
                    test: None,
                })
            };
            train_grid(
                &ModelConfig::grid(),
                sets,
                &tc,
                a.weights_dir.as_deref(),
                a.threads,
            )?
        }
    };
    let report = select_optimal(&entries)?;
    print!("{}", report.render());
    if let Some(o) = &a.out {
        report.save(o)?;
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::TranscodeCmd { input, output, raw } => {
            println!("{}", transcode_command(&input, &output));
            if let Some(raw) = raw {
                println!("{}", raw_decode_command(&output, &raw));
            }
        }
        Cmd::Track {
            frames,
            detections,
            out,
            period,
        } => {
            let desc = FrameDescriptor::load(&frames)?;
            let dets = read_detections(&detections)?;
            let schedule = TrackSchedule {
                period_seconds: period,
                ..TrackSchedule::default()
            };
            let track = track_keyboard(&dets, &mut RawVideo::open(&desc)?, &schedule)?;
            track.save(&out)?;
            let n = track.boxes.iter().flatten().count();
            println!("{n} of {} frames carry a keyboard box", track.len());
        }
        Cmd::Project {
            frames,
            detections,
            out,
            threshold,
            cell,
            window,
            min_area,
        } => {
            let desc = FrameDescriptor::load(&frames)?;
            let dets = read_detections(&detections)?;
            let p = ProjectionParams {
                window_seconds: window,
                vote_threshold: threshold,
                cell,
                min_area_fraction: min_area,
            };
            let w = project_session(
                &dets,
                desc.frame_count,
                desc.fps,
                desc.width,
                desc.height,
                &p,
            )?;
            write_regions(&out, &w)?;
            let s = reduction_stats(&dets, &w, desc.fps, &p);
            println!(
                "{} windows, {} regions; hand detections {} -> {} ({:.1}% reduction)",
                w.len(),
                w.iter().map(|w| w.regions.len()).sum::<usize>(),
                s.raw,
                s.retained,
                s.reduction_percent
            );
        }
        Cmd::Propose {
            kind,
            frames,
            regions,
            track,
            stable,
            out,
            min_presence,
            window,
        } => {
            let desc = FrameDescriptor::load(&frames)?;
            let inits = read_inits(&regions)?;
            let props = match kind {
                Kind::Typing => {
                    let t = track
                        .ok_or_else(|| Error::Config("typing proposals need --track".into()))?;
                    let track = KeyboardTrack::load(&t, desc.frame_count)?;
                    generate_typing_proposals(&track, &inits, &ProposalParams { min_presence })?
                }
                Kind::Writing => {
                    let s = stable
                        .ok_or_else(|| Error::Config("writing proposals need --stable".into()))?;
                    let windows = dyadic_activity::projection::read_regions(&s)?;
                    generate_writing_proposals(
                        &windows,
                        &inits,
                        window * desc.fps as usize,
                        desc.frame_count,
                    )?
                }
            };
            write_proposals(&out, &props)?;
            println!("{} proposals", props.len());
        }
        Cmd::Train(a) => train(a)?,
        Cmd::Select(a) => select(a)?,
        Cmd::Infer {
            weights,
            frames,
            proposals,
            out,
            batch,
        } => {
            let model = load_weights(&weights)?;
            let props = read_proposals(&proposals)?;
            let mut src = RawVideo::open(&FrameDescriptor::load(&frames)?)?;
            let t0 = std::time::Instant::now();
            let probs = classify_proposals(&model, &mut src, &props, batch)?;
            let wall = t0.elapsed().as_secs_f64();
            let c = classifications(&probs);
            write_classifications(&out, &c)?;
            let r = dyadic_activity::inference::ThroughputReport::new(batch, props.len(), wall, 0);
            println!(
                "{} proposals, {} positive; {:.1} clips/s ({:.1}x realtime)",
                c.len(),
                c.iter().filter(|c| c.label == 1).count(),
                r.clips_per_second,
                r.speed_multiple
            );
        }
        Cmd::Sweep {
            weights,
            clips,
            sizes,
            reps,
            replay,
            out,
        } => {
            if let Some(path) = replay {
                let curve: std::collections::BTreeMap<usize, f64> =
                    serde_json::from_str(&read_text(&path)?)
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let curve: Vec<(usize, f64)> = curve.into_iter().collect();
                let chosen =
                    choose_batch_size(&curve).ok_or_else(|| Error::Data("empty curve".into()))?;
                for (b, s) in &curve {
                    println!("{}{b:>4}  {s}x", if *b == chosen { "*" } else { " " });
                }
                println!("chosen batch size {chosen}");
                return Ok(());
            }
            let model = load_weights(weights.as_ref().expect("clap requires weights"))?;
            let set = MovingTexture::new(0, clips, model.config().clip_frames(), model.side());
            let result = sweep_batch_sizes(&model, &set, &sizes, reps)?;
            print!("{}", result.render());
            println!("chosen batch size {}", result.chosen);
            if let Some(o) = out {
                result.save(o)?;
            }
        }
        Cmd::Map {
            frames,
            proposals,
            classification,
            session_id,
            base_url,
            out,
            gap,
            min_duration,
            threshold,
            no_resolve,
            labels,
            kind,
        } => {
            let desc = FrameDescriptor::load(&frames)?;
            let props = read_proposals(&proposals)?;
            let c = read_classifications(&classification)?;
            let mut probs = vec![f32::NAN; props.len()];
            for x in &c {
                let slot = probs.get_mut(x.id).ok_or_else(|| {
                    Error::Data(format!(
                        "classification id {} beyond {} proposals",
                        x.id,
                        props.len()
                    ))
                })?;
                *slot = x.probability as f32;
            }
            if let Some(i) = probs.iter().position(|p| p.is_nan()) {
                return Err(Error::Data(format!("proposal {i} has no classification")));
            }
            let params = MapParameters {
                gap_seconds: gap,
                min_duration_seconds: min_duration,
                probability_threshold: threshold,
                resolve_simultaneous: !no_resolve,
            };
            let session = SessionInfo {
                id: session_id,
                duration: desc.frame_count as f64 / desc.fps as f64,
                base_url,
            };
            let truth = match &labels {
                Some(p) => Some(ground_truth(
                    &dyadic_activity::dataset::read_records(p)?,
                    &session.id,
                    kind.into(),
                    desc.fps as f64,
                )),
                None => None,
            };
            let doc = build_map(&props, &probs, desc.fps, session, &params, truth.as_deref())?;
            doc.emit(&out)?;
            println!("{} clusters -> {}", doc.clusters.len(), out.display());
        }
        Cmd::Run { config, kind } => {
            let c = SessionConfig::load(&config)?;
            let r = run_pipeline(&c, kind.into())?;
            print!("{}", r.timing.render());
            println!(
                "{} proposals, {} clusters -> {}",
                r.proposals,
                r.doc.clusters.len(),
                r.map_path.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
