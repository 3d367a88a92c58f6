//! The replay state machine that ties every stage together.
//!
//! Per frame: the gaze detector runs; inside an attention event the eye
//! feature and trigger run; a non-neutral frame opens (or extends) a capture
//! window in which the provider, region selection and fusion run. A window
//! closes after `off_streak` consecutive neutral frames, when attention ends,
//! or at the end of the stream, and then yields one record.

use std::fmt::Write as _;

use crate::archive::TensorArchive;
use crate::config::{Config, ExtractorKind};
use crate::dataio::FrameEntry;
use crate::domain::{mean, EmotionLabel, EmotionshipRecord, Region};
use crate::energy::UsageLedger;
use crate::error::{Error, Result};
use crate::eyefeat::{
    extract_eye_feature, EyeFeatureExtractor, LinearExtractor, MockExtractor, PassthroughExtractor, TriggerModel,
};
use crate::fusion::{fuse_classify, FusionHead};
use crate::gaze::AttentionDetector;
use crate::metrics::majority_vote;
use crate::roiselect::{select_attended, select_candidates, summarize};
use crate::vlprovider::{EmbeddingStore, ProviderClient};

/// Everything the pipeline evaluates, loaded once and used read-only.
pub struct Models {
    pub extractor: Box<dyn EyeFeatureExtractor>,
    pub trigger: TriggerModel,
    pub head: FusionHead,
    pub store: EmbeddingStore,
}

impl Models {
    pub fn from_archive(archive: &TensorArchive, cfg: &Config, store: EmbeddingStore) -> Result<Self> {
        let d_raw = cfg.fusion.d_eye_raw();
        let extractor: Box<dyn EyeFeatureExtractor> = match cfg.extractor {
            ExtractorKind::Passthrough => Box::new(PassthroughExtractor { dim: d_raw }),
            ExtractorKind::Mock => Box::new(MockExtractor {
                dim: d_raw,
                seed: cfg.extractor_seed,
            }),
            ExtractorKind::Linear => Box::new(LinearExtractor::from_archive(archive, d_raw)?),
        };
        Ok(Self {
            extractor,
            trigger: TriggerModel::from_archive(archive, cfg.fusion.d_eye, cfg.trigger_theta)?,
            head: FusionHead::from_archive(archive, cfg.fusion)?,
            store,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Idle,
    Attending,
    Capturing,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Idle => "idle",
            Mode::Attending => "attending",
            Mode::Capturing => "capturing",
        }
    }
}

/// Per-frame trace used for the influential-score time series.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePoint {
    pub t: u64,
    pub mode: Mode,
    pub p_non_neutral: Option<f64>,
    pub emotion: Option<EmotionLabel>,
    pub influential_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncompleteWindow {
    pub t_start: u64,
    pub t_end: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub frames: usize,
    pub attention_events: usize,
    pub neye_frames: usize,
    pub non_neutral_frames: usize,
    pub capturing_frames: usize,
    pub fused_frames: usize,
    pub windows: usize,
    /// `(t, frame_id)` of capturing frames for which the provider found no regions.
    pub empty_region_frames: Vec<(u64, String)>,
    pub incomplete: Vec<IncompleteWindow>,
}

impl Diagnostics {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "frames = {}", self.frames);
        let _ = writeln!(out, "attention_events = {}", self.attention_events);
        let _ = writeln!(out, "neye_frames = {}", self.neye_frames);
        let _ = writeln!(out, "non_neutral_frames = {}", self.non_neutral_frames);
        let _ = writeln!(out, "capturing_frames = {}", self.capturing_frames);
        let _ = writeln!(out, "fused_frames = {}", self.fused_frames);
        let _ = writeln!(out, "windows = {}", self.windows);
        let _ = writeln!(out, "empty_region_frames = {}", self.empty_region_frames.len());
        for (t, id) in &self.empty_region_frames {
            let _ = writeln!(out, "empty_regions t={t} frame_id={id}");
        }
        let _ = writeln!(out, "incomplete_windows = {}", self.incomplete.len());
        for w in &self.incomplete {
            let _ = writeln!(out, "incomplete t_start={} t_end={} reason={}", w.t_start, w.t_end, w.reason);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<EmotionshipRecord>,
    pub ledger: UsageLedger,
    pub diagnostics: Diagnostics,
    pub series: Vec<FramePoint>,
}

impl RunOutput {
    /// `t,mode,p_non_neutral,emotion,influential_score`, blanks where a
    /// stage did not run.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("t,mode,p_non_neutral,emotion,influential_score\n");
        for p in &self.series {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                p.t,
                p.mode.name(),
                p.p_non_neutral.map(|v| format!("{v:.6}")).unwrap_or_default(),
                p.emotion.map(|e| e.name().to_string()).unwrap_or_default(),
                p.influential_score.map(|v| format!("{v:.6}")).unwrap_or_default(),
            );
        }
        out
    }
}

struct FusedFrame {
    t: u64,
    emotion: EmotionLabel,
    score: f64,
    region: Region,
    caption: String,
}

#[derive(Default)]
struct Window {
    t_start: u64,
    t_last: u64,
    fused: Vec<FusedFrame>,
}

impl Window {
    fn into_record(self) -> Result<Option<EmotionshipRecord>> {
        if self.fused.is_empty() {
            return Ok(None);
        }
        let emotions: Vec<EmotionLabel> = self.fused.iter().map(|f| f.emotion).collect();
        let emotion = majority_vote(&emotions)?;
        // modal attended region by id; ties go to the region seen first
        let mut order: Vec<(u32, usize, usize)> = Vec::new();
        for (i, f) in self.fused.iter().enumerate() {
            match order.iter_mut().find(|(id, _, _)| *id == f.region.id) {
                Some(entry) => entry.1 += 1,
                None => order.push((f.region.id, 1, i)),
            }
        }
        let mut best = order[0];
        for e in &order[1..] {
            if e.1 > best.1 {
                best = *e;
            }
        }
        let first = &self.fused[best.2];
        let is_series: Vec<f64> = self.fused.iter().map(|f| f.score).collect();
        let record = EmotionshipRecord {
            t_start: self.t_start,
            t_end: self.fused.last().map_or(self.t_last, |f| f.t),
            emotion,
            region: first.region.clone(),
            summary_tag: first.caption.clone(),
            influential_score: mean(&is_series),
            is_series,
        };
        record.validate()?;
        Ok(Some(record))
    }
}

/// Single-stream pipeline instance.
pub struct Pipeline<'a> {
    cfg: &'a Config,
    models: &'a Models,
    client: &'a mut ProviderClient,
    detector: AttentionDetector,
    window: Option<Window>,
    neutral_streak: usize,
    prev_t: Option<u64>,
    out: RunOutput,
}

impl<'a> Pipeline<'a> {
    pub fn new(cfg: &'a Config, models: &'a Models, client: &'a mut ProviderClient) -> Result<Self> {
        cfg.validate()?;
        if models.trigger.d_eye() != cfg.fusion.d_eye || models.head.dims() != cfg.fusion {
            return Err(Error::Model("model dimensions disagree with the configuration".into()));
        }
        Ok(Self {
            cfg,
            models,
            client,
            detector: AttentionDetector::new(cfg.gaze.clone()),
            window: None,
            neutral_streak: 0,
            prev_t: None,
            out: RunOutput {
                records: Vec::new(),
                ledger: UsageLedger::default(),
                diagnostics: Diagnostics::default(),
                series: Vec::new(),
            },
        })
    }

    fn close_window(&mut self) -> Result<()> {
        self.neutral_streak = 0;
        if let Some(w) = self.window.take() {
            self.out.diagnostics.windows += 1;
            if let Some(r) = w.into_record()? {
                self.out.records.push(r);
            }
        }
        Ok(())
    }

    fn abandon_window(&mut self, t: u64, err: &Error) {
        self.neutral_streak = 0;
        let t_start = self.window.take().map_or(t, |w| w.t_start);
        self.out.diagnostics.windows += 1;
        self.out.diagnostics.incomplete.push(IncompleteWindow {
            t_start,
            t_end: t,
            reason: err.to_string(),
        });
    }

    /// Provider, region selection and fusion for one capturing frame.
    fn fuse(&mut self, frame: &FrameEntry, feature: &crate::eyefeat::EyeFeature) -> Result<Option<FusedFrame>> {
        let regions = self.client.fetch_regions(&frame.scene)?;
        let cands = select_candidates(&regions, frame.eye.gaze, self.cfg.max_candidates);
        if cands.is_empty() {
            self.out
                .diagnostics
                .empty_region_frames
                .push((frame.scene.t, frame.scene.frame_id.clone()));
            return Ok(None);
        }
        let id = &frame.scene.frame_id;
        let (region, _answer) = select_attended(&cands, id, &self.cfg.question, self.client, &self.models.store)?;
        let caption = summarize(&cands, id, self.client)?;
        let out = fuse_classify(feature, &cands, &self.models.head)?;
        Ok(Some(FusedFrame {
            t: frame.eye.t,
            emotion: out.emotion,
            score: out.influential_score,
            region,
            caption,
        }))
    }

    pub fn step(&mut self, frame: &FrameEntry) -> Result<()> {
        let t = frame.eye.t;
        if self.prev_t.is_some_and(|p| t <= p) {
            return Err(Error::Input(format!("frame at t={t} is not after the previous frame")));
        }
        let dt = self.prev_t.map_or(0, |p| t - p);
        self.prev_t = Some(t);
        self.out.diagnostics.frames += 1;
        self.out.ledger.always_on_ms += dt;

        let update = self.detector.update(t, frame.eye.gaze);
        if update.event.is_some() {
            self.out.diagnostics.attention_events += 1;
        }
        let mut point = FramePoint {
            t,
            mode: Mode::Idle,
            p_non_neutral: None,
            emotion: None,
            influential_score: None,
        };
        if !update.attending {
            self.close_window()?;
            self.out.series.push(point);
            return Ok(());
        }

        point.mode = Mode::Attending;
        self.out.diagnostics.neye_frames += 1;
        self.out.ledger.neye_ms += dt;
        let feature = extract_eye_feature(&frame.eye, self.models.extractor.as_ref())?;
        let decision = self.models.trigger.classify(&feature)?;
        point.p_non_neutral = Some(decision.p_non_neutral);

        if decision.is_non_neutral {
            self.out.diagnostics.non_neutral_frames += 1;
            self.neutral_streak = 0;
            let w = self.window.get_or_insert_with(|| Window {
                t_start: t,
                ..Default::default()
            });
            w.t_last = t;
            point.mode = Mode::Capturing;
            self.out.diagnostics.capturing_frames += 1;
            self.out.ledger.captured_ms += dt;
            match self.fuse(frame, &feature) {
                Ok(Some(f)) => {
                    self.out.diagnostics.fused_frames += 1;
                    point.emotion = Some(f.emotion);
                    point.influential_score = Some(f.score);
                    if let Some(w) = self.window.as_mut() {
                        w.fused.push(f);
                    }
                }
                Ok(None) => {}
                Err(e) if e.is_provider() => self.abandon_window(t, &e),
                Err(e) => return Err(e),
            }
        } else if let Some(w) = self.window.as_mut() {
            w.t_last = t;
            point.mode = Mode::Capturing;
            self.out.diagnostics.capturing_frames += 1;
            self.out.ledger.captured_ms += dt;
            self.neutral_streak += 1;
            if self.neutral_streak >= self.cfg.off_streak {
                self.close_window()?;
            }
        }
        self.out.series.push(point);
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunOutput> {
        self.close_window()?;
        Ok(self.out)
    }
}

/// Runs a whole stream through a fresh pipeline.
pub fn run(frames: &[FrameEntry], models: &Models, client: &mut ProviderClient, cfg: &Config) -> Result<RunOutput> {
    let mut p = Pipeline::new(cfg, models, client)?;
    for f in frames {
        p.step(f)?;
    }
    p.finish()
}
