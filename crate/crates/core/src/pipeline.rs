//! Session configuration, stage orchestration and timing reports.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::activity_map::{
    cluster_instances, evaluate, filter_min_duration, ground_truth, resolve_simultaneous_typing,
    ActivityInstance, ActivityMapDoc, Interval, MapParameters, SessionInfo,
};
use crate::dataset::ActivityKind;
use crate::error::{Error, Result};
use crate::frames::{FrameDescriptor, RawVideo};
use crate::inference::{classifications, classify_proposals, write_classifications};
use crate::projection::{project_session, write_regions, ProjectionParams};
use crate::proposals::{
    generate_typing_proposals, generate_writing_proposals, read_inits, write_proposals, Proposal,
    ProposalParams,
};
use crate::tracking::{read_detections, track_keyboard, TrackSchedule};

pub const CONFIG_SCHEMA: &str = "session/1";

/// Fallback output directory when the config names none.
pub const OUTPUT_DIR_ENV: &str = "DYADIC_OUTPUT_DIR";

/// Frame source given either as a sidecar path or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FramesRef {
    Sidecar(PathBuf),
    Inline(FrameDescriptor),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingSection {
    pub period_seconds: u32,
}

impl Default for TrackingSection {
    fn default() -> Self {
        Self { period_seconds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceSection {
    pub batch_size: usize,
}

impl Default for InferenceSection {
    fn default() -> Self {
        Self { batch_size: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub schema: String,
    pub session_id: String,
    pub frames: FramesRef,
    pub detections: PathBuf,
    pub regions: PathBuf,
    pub weights: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Ground-truth labels for TP/FP/FN marks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default)]
    pub tracking: TrackingSection,
    #[serde(default)]
    pub projection: ProjectionParams,
    #[serde(default)]
    pub proposals: ProposalParams,
    #[serde(default)]
    pub inference: InferenceSection,
    #[serde(default)]
    pub map: MapParameters,
}

impl SessionConfig {
    pub fn new(
        session_id: &str,
        frames: FramesRef,
        detections: PathBuf,
        regions: PathBuf,
        weights: PathBuf,
    ) -> Self {
        Self {
            schema: CONFIG_SCHEMA.into(),
            session_id: session_id.into(),
            frames,
            detections,
            regions,
            weights,
            output_dir: None,
            labels: None,
            base_url: None,
            tracking: TrackingSection::default(),
            projection: ProjectionParams::default(),
            proposals: ProposalParams::default(),
            inference: InferenceSection::default(),
            map: MapParameters::default(),
        }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e
                .span()
                .map_or(0, |s| text[..s.start].lines().count().max(1)),
            reason: e.message().to_string(),
        })?;
        if c.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "schema `{}`, expected `{CONFIG_SCHEMA}`",
                c.schema
            )));
        }
        Ok(c)
    }

    /// Loads a config; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut c.frames {
            FramesRef::Sidecar(p) => fix(p),
            FramesRef::Inline(d) => fix(&mut d.path),
        }
        fix(&mut c.detections);
        fix(&mut c.regions);
        fix(&mut c.weights);
        if let Some(p) = c.output_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = c.labels.as_mut() {
            fix(p);
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn descriptor(&self) -> Result<FrameDescriptor> {
        let d = match &self.frames {
            FramesRef::Sidecar(p) => FrameDescriptor::load(p)?,
            FramesRef::Inline(d) => d.clone(),
        };
        d.validate()?;
        Ok(d)
    }

    /// Config value, else the environment, else `dyadic-out`.
    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("dyadic-out"))
    }

    pub fn base_url(&self) -> String {
        self.base_url
            .clone()
            .unwrap_or_else(|| format!("https://video.example.org/{}", self.session_id))
    }

    /// Checks the invariants that hold before any stage runs.
    pub fn check_inputs(&self) -> Result<FrameDescriptor> {
        let d = self.descriptor()?;
        if d.fps as usize != crate::dataset::SOURCE_FPS {
            return Err(Error::Config(format!(
                "pipeline input must be {} fps, got {}",
                crate::dataset::SOURCE_FPS,
                d.fps
            )));
        }
        let mut need = vec![&d.path, &self.detections, &self.regions, &self.weights];
        need.extend(self.labels.as_ref());
        for p in need {
            if !p.exists() {
                return Err(Error::Config(format!("missing input {}", p.display())));
            }
        }
        if self.inference.batch_size == 0 {
            return Err(Error::Config(
                "inference batch_size must be positive".into(),
            ));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub wall_seconds: f64,
    /// Session duration over wall duration.
    pub realtime_multiple: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub session_seconds: f64,
    pub stages: Vec<StageTiming>,
}

/// `HH:MM:SS`, rounded to the nearest second.
pub fn hms(seconds: f64) -> String {
    let s = seconds.max(0.0).round() as u64;
    format!("{:02}:{:02}:{:02}", s / 3600, s / 60 % 60, s % 60)
}

/// Whole multiples from 1 up, two decimals below.
pub fn format_multiple(m: f64) -> String {
    if !m.is_finite() {
        return "inf ×".into();
    }
    if m >= 1.0 {
        format!("{} ×", m.round() as u64)
    } else {
        format!("{m:.2} ×")
    }
}

fn multiple(session: f64, wall: f64) -> f64 {
    if wall > 0.0 {
        session / wall
    } else {
        f64::INFINITY
    }
}

impl TimingReport {
    pub fn new(session_seconds: f64) -> Self {
        Self {
            session_seconds,
            stages: Vec::new(),
        }
    }

    pub fn push(&mut self, stage: &str, wall_seconds: f64) {
        self.stages.push(StageTiming {
            stage: stage.into(),
            wall_seconds,
            realtime_multiple: multiple(self.session_seconds, wall_seconds),
        });
    }

    pub fn total_seconds(&self) -> f64 {
        self.stages.iter().map(|s| s.wall_seconds).sum()
    }

    pub fn total_multiple(&self) -> f64 {
        multiple(self.session_seconds, self.total_seconds())
    }

    /// `HH:MM:SS (N ×)` for a duration against this session.
    pub fn cell(&self, wall_seconds: f64) -> String {
        format!(
            "{} ({})",
            hms(wall_seconds),
            format_multiple(multiple(self.session_seconds, wall_seconds))
        )
    }

    pub fn render(&self) -> String {
        let width = self
            .stages
            .iter()
            .map(|s| s.stage.len())
            .max()
            .unwrap_or(0)
            .max("total".len());
        let mut out = format!("{:width$}  {}\n", "session", hms(self.session_seconds));
        for s in &self.stages {
            out.push_str(&format!(
                "{:width$}  {}\n",
                s.stage,
                self.cell(s.wall_seconds)
            ));
        }
        out.push_str(&format!(
            "{:width$}  {}\n",
            "total",
            self.cell(self.total_seconds())
        ));
        out
    }
}

fn shell_quote(s: &str) -> String {
    let plain = !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_./:=+,@%".contains(c));
    if plain {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', r"'\''"))
    }
}

/// Streaming transcode for the session archive.
pub fn transcode_command(input: &str, output: &str) -> String {
    format!(
        "ffmpeg -i {} \\\n  -vf scale=858:480 \\\n  -c:v libx264 \\\n  -c:a mp3 -b:a 255k \\\n  -b:v 2.5M \\\n  -maxrate 2.5M \\\n  -bufsize 1.25M \\\n  -r 30 \\\n  -x264-params \\\n  \"keyint=30:min-keyint=30:no-scenecut\" \\\n  {}",
        shell_quote(input),
        shell_quote(output)
    )
}

/// Decode of a transcoded video into the raw frame layout read here.
pub fn raw_decode_command(input: &str, output: &str) -> String {
    format!(
        "ffmpeg -i {} -an -f rawvideo -pix_fmt rgb24 {}",
        shell_quote(input),
        shell_quote(output)
    )
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub doc: ActivityMapDoc,
    pub timing: TimingReport,
    pub proposals: usize,
    pub output_dir: PathBuf,
    pub map_path: PathBuf,
}

fn timed<T>(report: &mut TimingReport, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t0 = Instant::now();
    let out = f().map_err(|e| e.in_stage(stage))?;
    report.push(stage, t0.elapsed().as_secs_f64());
    Ok(out)
}

/// Runs every stage for one activity kind. Each stage writes its output
/// file into the output directory before the next starts, so a failure
/// leaves the earlier results in place.
pub fn run_pipeline(config: &SessionConfig, kind: ActivityKind) -> Result<RunOutcome> {
    let desc = config.check_inputs().map_err(|e| e.in_stage("config"))?;
    let out_dir = config.output_dir();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e).in_stage("config"))?;
    let model = crate::model::load_weights(&config.weights).map_err(|e| e.in_stage("model"))?;
    let fps = desc.fps;
    let session_seconds = desc.frame_count as f64 / fps as f64;
    let mut report = TimingReport::new(session_seconds);

    let inits = read_inits(&config.regions).map_err(|e| e.in_stage("propose"))?;
    let proposals = match kind {
        ActivityKind::Typing => {
            let track = timed(&mut report, "track", || {
                let dets = read_detections(&config.detections)?;
                let mut frames = RawVideo::open(&desc)?;
                let schedule = TrackSchedule {
                    period_seconds: config.tracking.period_seconds,
                    ..TrackSchedule::default()
                };
                let track = track_keyboard(&dets, &mut frames, &schedule)?;
                track.save(out_dir.join("track.jsonl"))?;
                Ok(track)
            })?;
            timed(&mut report, "propose", || {
                let p = generate_typing_proposals(&track, &inits, &config.proposals)?;
                write_proposals(out_dir.join("proposals.jsonl"), &p)?;
                Ok(p)
            })?
        }
        ActivityKind::Writing => {
            let p = &config.projection;
            let windows = timed(&mut report, "project", || {
                let dets = read_detections(&config.detections)?;
                let w = project_session(&dets, desc.frame_count, fps, desc.width, desc.height, p)?;
                write_regions(out_dir.join("stable_regions.jsonl"), &w)?;
                Ok(w)
            })?;
            timed(&mut report, "propose", || {
                let w = p.window_seconds * fps as usize;
                let props = generate_writing_proposals(&windows, &inits, w, desc.frame_count)?;
                write_proposals(out_dir.join("proposals.jsonl"), &props)?;
                Ok(props)
            })?
        }
    };

    let probs = timed(&mut report, "classify", || {
        let mut frames = RawVideo::open(&desc)?;
        let probs =
            classify_proposals(&model, &mut frames, &proposals, config.inference.batch_size)?;
        write_classifications(
            out_dir.join("classification.jsonl"),
            &classifications(&probs),
        )?;
        Ok(probs)
    })?;

    let map_path = out_dir.join("actmap.json");
    let doc = timed(&mut report, "map", || {
        let session = SessionInfo {
            id: config.session_id.clone(),
            duration: session_seconds,
            base_url: config.base_url(),
        };
        let truth = match &config.labels {
            Some(p) => Some(ground_truth(
                &crate::dataset::read_records(p)?,
                &config.session_id,
                kind,
                fps as f64,
            )),
            None => None,
        };
        let doc = build_map(
            &proposals,
            &probs,
            fps,
            session,
            &config.map,
            truth.as_deref(),
        )?;
        doc.emit(&map_path)?;
        Ok(doc)
    })?;

    let report_text = report.render();
    let p = out_dir.join("timing.txt");
    std::fs::write(&p, &report_text).map_err(|e| Error::io(&p, e))?;
    let p = out_dir.join("timing.json");
    std::fs::write(
        &p,
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    )
    .map_err(|e| Error::io(&p, e))?;

    Ok(RunOutcome {
        doc,
        timing: report,
        proposals: proposals.len(),
        output_dir: out_dir,
        map_path,
    })
}

/// Clusters the proposals classified at or above the threshold into a
/// map document. With `truth`, clusters carry TP/FP marks and missed
/// intervals are listed.
pub fn build_map(
    proposals: &[Proposal],
    probs: &[f32],
    fps: u32,
    session: SessionInfo,
    params: &MapParameters,
    truth: Option<&[Interval]>,
) -> Result<ActivityMapDoc> {
    if proposals.len() != probs.len() {
        return Err(Error::shape("probabilities", proposals.len(), probs.len()));
    }
    let instances: Vec<ActivityInstance> = proposals
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p as f64 >= params.probability_threshold)
        .map(|(pr, &p)| ActivityInstance {
            kind: pr.kind,
            person: pr.person.clone(),
            t_start: pr.frame_start as f64 / fps as f64,
            t_end: pr.frame_end() as f64 / fps as f64,
            probability: p as f64,
        })
        .collect();
    let mut clusters = filter_min_duration(
        cluster_instances(&instances, params.gap_seconds),
        params.min_duration_seconds,
    );
    if params.resolve_simultaneous {
        clusters = resolve_simultaneous_typing(clusters);
    }
    let mut doc = ActivityMapDoc::new(session, params.clone(), clusters);
    if let Some(truth) = truth {
        doc.evaluation = Some(evaluate(&doc.clusters, truth));
    }
    Ok(doc)
}

/// Opens the configured frame source.
pub fn open_frames(config: &SessionConfig) -> Result<RawVideo> {
    RawVideo::open(&config.descriptor()?)
}
