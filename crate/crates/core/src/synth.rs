//! Deterministic synthetic streams for tests, demos and self-checks.
//!
//! Each synthetic moment is a saccade burst followed by a fixation on one
//! region of a scene. While fixating, the wearer is neutral for a lead-in,
//! shows the moment's emotion for a while, then returns to neutral. Eye
//! features and the attended region's visual feature both carry the label,
//! so a trained head can separate the classes.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::archive::TensorArchive;
use crate::config::{Config, FusionDims, OptimizerKind, TrainConfig};
use crate::dataio::{manifest_text, EyeLine, FrameLine, ManifestHeader, SceneLine};
use crate::domain::{EmotionLabel, Rect, Region};
use crate::error::{Error, Result};
use crate::eyefeat::TriggerModel;
use crate::fusion::{flatten_candidates, train_head, FusionHead, TrainReport, TrainingSample};
use crate::roiselect::select_candidates;
use crate::vlprovider::mock::sidecar_path;
use crate::vlprovider::protocol::{encode, Op, Sidecar};

/// Gaze trace of a saccade burst followed by a fixation; returns the samples
/// and the timestamp of the first fixation sample.
pub fn saccade_fixation_trace(
    rng: &mut impl Rng,
    saccade_frames: usize,
    fixation_frames: usize,
    sigma: f64,
    fps: f64,
) -> (Vec<(u64, [f64; 2])>, u64) {
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let mut out = Vec::with_capacity(saccade_frames + fixation_frames);
    for i in 0..saccade_frames {
        out.push((frame_time(i, fps), [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)]));
    }
    let target = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];
    for i in saccade_frames..saccade_frames + fixation_frames {
        let g = [target[0] + noise.sample(rng), target[1] + noise.sample(rng)];
        out.push((frame_time(i, fps), g));
    }
    (out, frame_time(saccade_frames, fps))
}

pub fn frame_time(index: usize, fps: f64) -> u64 {
    (index as f64 * 1000.0 / fps).round() as u64
}

const DISTRACTORS: [&str; 12] = [
    "chair", "wall", "lamp", "window", "plant", "door", "shelf", "table", "ceiling", "floor", "curtain", "clock",
];

fn cue(label: EmotionLabel) -> &'static str {
    match label {
        EmotionLabel::Neutrality => "empty hallway",
        EmotionLabel::Happiness => "smiling child",
        EmotionLabel::Surprise => "sudden firework",
        EmotionLabel::Anger => "shouting driver",
        EmotionLabel::Fear => "growling dog",
        EmotionLabel::Disgust => "rotten food",
        EmotionLabel::Sadness => "broken vase",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub dims: FusionDims,
    pub max_candidates: usize,
    pub moments: Vec<EmotionLabel>,
    pub saccade_frames: usize,
    pub lead_frames: usize,
    pub emotional_frames: usize,
    pub tail_frames: usize,
    pub regions_per_frame: usize,
    pub eye_noise: f64,
    pub gaze_noise: f64,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dims: FusionDims {
                d_vis: 16,
                d_eye: 16,
                r_max: 6,
                se_reduction: 4,
            },
            max_candidates: 6,
            moments: Vec::new(),
            saccade_frames: 8,
            lead_frames: 20,
            emotional_frames: 20,
            tail_frames: 20,
            regions_per_frame: 6,
            eye_noise: 0.3,
            gaze_noise: 0.003,
            fps: 30.0,
            seed: 1,
        }
    }
}

impl SynthSpec {
    /// `n` moments cycling through the six non-neutral classes.
    pub fn cycling(n: usize, seed: u64) -> Self {
        Self {
            moments: (0..n).map(|i| EmotionLabel::NON_NEUTRAL[i % 6]).collect(),
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.dims.d_eye_raw() < 7 || self.dims.d_vis < 6 {
            return Err(Error::Config("synthetic data needs d_eye >= 9 and d_vis >= 6".into()));
        }
        if self.regions_per_frame == 0 || self.regions_per_frame > 9 {
            return Err(Error::Config("regions_per_frame must be in 1..=9".into()));
        }
        if self.max_candidates == 0 || self.max_candidates > self.dims.r_max {
            return Err(Error::Config("max_candidates must be in 1..=r_max".into()));
        }
        Ok(())
    }

    pub fn frames_per_moment(&self) -> usize {
        self.saccade_frames + self.lead_frames + self.emotional_frames + self.tail_frames
    }

    /// Config matching the generated data.
    pub fn config(&self) -> Config {
        Config {
            fusion: self.dims,
            max_candidates: self.max_candidates,
            ..Config::default()
        }
    }
}

/// One generated frame with everything the tests need to check against.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub t: u64,
    pub moment: usize,
    pub eye_raw: Vec<f64>,
    pub pupil: [f64; 2],
    pub gaze: [f64; 2],
    pub frame_id: String,
    pub label: EmotionLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthMoment {
    pub label: EmotionLabel,
    pub frame_id: String,
    pub regions: Vec<Region>,
    pub gt_attended: u32,
    /// First and last emotional frame times.
    pub t_emotion: (u64, u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthStream {
    pub frames: Vec<SynthFrame>,
    pub moments: Vec<SynthMoment>,
}

fn eye_vector(rng: &mut ChaCha8Rng, label: EmotionLabel, d_raw: usize, noise: &Normal<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d_raw).map(|_| noise.sample(rng)).collect();
    v[0] += if label.is_neutral() { -1.0 } else { 1.0 };
    if let Some(c) = label.class_index() {
        v[1 + c] += 1.0;
    }
    v
}

fn scene(rng: &mut ChaCha8Rng, spec: &SynthSpec, label: EmotionLabel) -> (Vec<Region>, u32) {
    let mut cells: Vec<usize> = (0..9).collect();
    cells.shuffle(rng);
    let mut names: Vec<&str> = DISTRACTORS.to_vec();
    names.shuffle(rng);
    let gt = rng.random_range(0..spec.regions_per_frame);
    let small = Normal::new(0.0, 0.1).expect("finite");
    let wide = Normal::new(0.0, 0.3).expect("finite");
    let regions = cells[..spec.regions_per_frame]
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let cx = 0.2 + 0.3 * (cell % 3) as f64;
            let cy = 0.2 + 0.3 * (cell / 3) as f64;
            let feature: Vec<f32> = if i == gt {
                let mut f: Vec<f64> = (0..spec.dims.d_vis).map(|_| small.sample(rng)).collect();
                if let Some(c) = label.class_index() {
                    f[c] += 1.0;
                }
                f.into_iter().map(|x| x as f32).collect()
            } else {
                (0..spec.dims.d_vis).map(|_| wide.sample(rng) as f32).collect()
            };
            Region {
                id: i as u32,
                rect: Rect::from([cx, cy, 0.12, 0.12]),
                tag: if i == gt { cue(label).to_string() } else { names[i].to_string() },
                feature,
            }
        })
        .collect();
    (regions, gt as u32)
}

/// Generates the stream described by `spec`.
pub fn generate(spec: &SynthSpec) -> Result<SynthStream> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let eye_noise = Normal::new(0.0, spec.eye_noise).map_err(|e| Error::Config(e.to_string()))?;
    let gaze_noise = Normal::new(0.0, spec.gaze_noise).map_err(|e| Error::Config(e.to_string()))?;
    let d_raw = spec.dims.d_eye_raw();
    let mut frames = Vec::new();
    let mut moments = Vec::new();
    let mut index = 0usize;
    for (m, &label) in spec.moments.iter().enumerate() {
        let frame_id = format!("m{m:04}");
        let (regions, gt) = scene(&mut rng, spec, label);
        let target = regions[gt as usize].rect.center();
        let emo_start = spec.saccade_frames + spec.lead_frames;
        let emo_end = emo_start + spec.emotional_frames;
        for k in 0..spec.frames_per_moment() {
            let t = frame_time(index, spec.fps);
            index += 1;
            let frame_label = if (emo_start..emo_end).contains(&k) { label } else { EmotionLabel::Neutrality };
            let gaze = if k < spec.saccade_frames {
                [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)]
            } else {
                [target[0] + gaze_noise.sample(&mut rng), target[1] + gaze_noise.sample(&mut rng)]
            };
            frames.push(SynthFrame {
                t,
                moment: m,
                eye_raw: eye_vector(&mut rng, frame_label, d_raw, &eye_noise),
                pupil: [0.4 + 0.02 * rng.random::<f64>(), 0.35 + 0.02 * rng.random::<f64>()],
                gaze,
                frame_id: frame_id.clone(),
                label: frame_label,
            });
        }
        let first = frames.len() - spec.frames_per_moment();
        moments.push(SynthMoment {
            label,
            frame_id,
            regions,
            gt_attended: gt,
            t_emotion: (frames[first + emo_start].t, frames[first + emo_end - 1].t),
        });
    }
    Ok(SynthStream { frames, moments })
}

/// Trigger that reads the arousal channel: `p(non-neutral) = sigmoid(2k a)`.
pub fn arousal_trigger(d_eye: usize, k: f64, theta: f64) -> Result<TriggerModel> {
    let mut w = vec![0.0; 2 * d_eye];
    w[0] = -k;
    w[d_eye] = k;
    TriggerModel::new(w, vec![0.0, 0.0], theta)
}

/// Fusion training samples from the emotional frames of a stream.
pub fn training_samples(spec: &SynthSpec, stream: &SynthStream) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for f in stream.frames.iter().filter(|f| !f.label.is_neutral()) {
        let moment = &stream.moments[f.moment];
        let cands = select_candidates(&moment.regions, f.gaze, spec.max_candidates);
        let mut f_eye = f.eye_raw.clone();
        f_eye.extend_from_slice(&f.pupil);
        out.push(TrainingSample {
            f_eye,
            fc: flatten_candidates(&cands, &spec.dims)?,
            label: f.label,
        });
    }
    Ok(out)
}

pub fn default_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 0.01,
        batch: 64,
        epochs: 30,
        seed,
        optimizer: OptimizerKind::Adam,
    }
}

/// Trains a head on a fresh stream drawn with `seed`: `moments` scenes with
/// `frames` emotional frames each.
pub fn train_synthetic_head(spec: &SynthSpec, moments: usize, frames: usize, seed: u64) -> Result<(FusionHead, TrainReport)> {
    let train_spec = SynthSpec {
        moments: SynthSpec::cycling(moments, seed).moments,
        lead_frames: 0,
        emotional_frames: frames,
        tail_frames: 0,
        seed,
        ..spec.clone()
    };
    let stream = generate(&train_spec)?;
    let samples = training_samples(&train_spec, &stream)?;
    train_head(&samples, FusionHead::init(spec.dims, seed)?, &default_train_config(seed))
}

/// Files written by [`write_demo`].
#[derive(Debug, Clone, PartialEq)]
pub struct DemoFiles {
    pub manifest: PathBuf,
    pub sidecar_dir: PathBuf,
    pub models: PathBuf,
    pub truth: PathBuf,
    pub stream: SynthStream,
}

/// Writes a replayable demo: manifest, sidecars, model archive (arousal
/// trigger plus a head trained on an independent stream) and truth labels
/// for every non-neutral moment.
pub fn write_demo(dir: &Path, spec: &SynthSpec) -> Result<DemoFiles> {
    let stream = generate(spec)?;
    let sidecar_dir = dir.join("sidecars");
    std::fs::create_dir_all(&sidecar_dir).map_err(|e| Error::io(&sidecar_dir, e))?;
    for m in &stream.moments {
        let sc = Sidecar {
            op: Op::Regions,
            frame_id: m.frame_id.clone(),
            regions: m.regions.clone(),
            gt_attended: Some(m.gt_attended),
        };
        let p = sidecar_path(&sidecar_dir, &m.frame_id);
        std::fs::write(&p, encode(&sc) + "\n").map_err(|e| Error::io(&p, e))?;
    }

    let mut header = ManifestHeader {
        sidecar_dir: Some("sidecars".into()),
        ..Default::default()
    };
    let cfg = spec.config();
    for key in ["fusion.d_vis", "fusion.d_eye", "fusion.r_max", "fusion.se_reduction", "roi.max_candidates"] {
        header.config.insert(key.into(), cfg.get(key).expect("known key"));
    }
    let mut seen = std::collections::HashSet::new();
    let lines: Vec<FrameLine> = stream
        .frames
        .iter()
        .map(|f| FrameLine {
            t: f.t,
            eye: EyeLine {
                feature: Some(f.eye_raw.clone()),
                pupil: f.pupil,
                gaze: Some(f.gaze),
                ..Default::default()
            },
            scene: SceneLine {
                frame_id: f.frame_id.clone(),
                size: None,
                sidecar: seen.insert(f.frame_id.clone()),
            },
            label: Some(f.label),
        })
        .collect();
    let manifest = dir.join("manifest.jsonl");
    std::fs::write(&manifest, manifest_text(&header, &lines)).map_err(|e| Error::io(&manifest, e))?;

    let mut archive = TensorArchive::new();
    arousal_trigger(spec.dims.d_eye, 4.0, cfg.trigger_theta)?.write_to(&mut archive)?;
    let (head, _) = train_synthetic_head(spec, 300, 4, spec.seed.wrapping_add(1000))?;
    head.write_to(&mut archive)?;
    let models = dir.join("models.bin");
    archive.save(&models)?;

    let truth = dir.join("truth.txt");
    let text: String = stream
        .moments
        .iter()
        .filter(|m| !m.label.is_neutral())
        .map(|m| format!("{}\n", m.label))
        .collect();
    std::fs::write(&truth, text).map_err(|e| Error::io(&truth, e))?;

    Ok(DemoFiles {
        manifest,
        sidecar_dir,
        models,
        truth,
        stream,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_deterministic() {
        let spec = SynthSpec::cycling(3, 9);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SynthSpec::cycling(3, 10);
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn stream_shape() {
        let spec = SynthSpec::cycling(2, 1);
        let s = generate(&spec).unwrap();
        assert_eq!(s.frames.len(), 2 * spec.frames_per_moment());
        assert!(s.frames.windows(2).all(|w| w[0].t < w[1].t));
        let emotional = s.frames.iter().filter(|f| !f.label.is_neutral()).count();
        assert_eq!(emotional, 2 * spec.emotional_frames);
        for m in &s.moments {
            let gt = &m.regions[m.gt_attended as usize];
            assert_eq!(gt.tag, cue(m.label));
        }
    }

    #[test]
    fn trigger_reads_arousal() {
        let t = arousal_trigger(4, 4.0, 0.5).unwrap();
        let f = crate::eyefeat::EyeFeature {
            t: 0,
            vector: vec![1.0, 0.0, 0.0, 0.0],
        };
        assert!(t.classify(&f).unwrap().is_non_neutral);
    }

    #[test]
    fn trace_fixation_starts_after_saccades() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (s, t0) = saccade_fixation_trace(&mut rng, 10, 30, 0.0, 30.0);
        assert_eq!(s.len(), 40);
        assert_eq!(t0, s[10].0);
        assert!(s[10..].iter().all(|x| x.1 == s[10].1));
    }
}
