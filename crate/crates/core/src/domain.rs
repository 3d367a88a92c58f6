//! Domain types shared by every stage of the pipeline.
//!
//! All geometry is held in normalized scene coordinates, `[0,1]²` with the
//! origin at the top-left corner. Pixel coordinates only appear in the
//! `from_pixels` / `to_pixels` helpers used at ingestion and export.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seven-way emotion label. The discriminant is the wire/integer code and the
/// declaration order doubles as the tie-break order: lower code wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum EmotionLabel {
    Neutrality = 0,
    Happiness = 1,
    Surprise = 2,
    Anger = 3,
    Fear = 4,
    Disgust = 5,
    Sadness = 6,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 7] = [
        EmotionLabel::Neutrality,
        EmotionLabel::Happiness,
        EmotionLabel::Surprise,
        EmotionLabel::Anger,
        EmotionLabel::Fear,
        EmotionLabel::Disgust,
        EmotionLabel::Sadness,
    ];

    /// The six classes the fusion head and the macro metrics range over.
    pub const NON_NEUTRAL: [EmotionLabel; 6] = [
        EmotionLabel::Happiness,
        EmotionLabel::Surprise,
        EmotionLabel::Anger,
        EmotionLabel::Fear,
        EmotionLabel::Disgust,
        EmotionLabel::Sadness,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Index into the six-way classifier output (`happiness` is 0).
    pub fn class_index(self) -> Option<usize> {
        match self {
            EmotionLabel::Neutrality => None,
            other => Some(other as usize - 1),
        }
    }

    pub fn from_class_index(index: usize) -> Option<Self> {
        Self::NON_NEUTRAL.get(index).copied()
    }

    pub fn is_neutral(self) -> bool {
        self == EmotionLabel::Neutrality
    }

    pub fn is_positive(self) -> bool {
        matches!(self, EmotionLabel::Happiness | EmotionLabel::Surprise)
    }

    pub fn is_negative(self) -> bool {
        !self.is_neutral() && !self.is_positive()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Neutrality => "neutrality",
            EmotionLabel::Happiness => "happiness",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Sadness => "sadness",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    /// Accepts either the lowercase name or the integer code.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(code) = s.parse::<u8>() {
            return Self::from_code(code)
                .ok_or_else(|| Error::Input(format!("emotion code {code} out of range 0..=6")));
        }
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|e| e.name() == lower)
            .ok_or_else(|| Error::Input(format!("unknown emotion label `{s}`")))
    }
}

/// Frame size in pixels, `(height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct FrameSize {
    pub height: u32,
    pub width: u32,
}

impl FrameSize {
    pub const SCENE_DEFAULT: FrameSize = FrameSize {
        height: 960,
        width: 1280,
    };

    pub fn new(height: u32, width: u32) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Data(format!("frame size must be positive, got {height}x{width}")));
        }
        Ok(Self { height, width })
    }
}

impl From<[u32; 2]> for FrameSize {
    fn from(v: [u32; 2]) -> Self {
        Self {
            height: v[0],
            width: v[1],
        }
    }
}

impl From<FrameSize> for [u32; 2] {
    fn from(s: FrameSize) -> Self {
        [s.height, s.width]
    }
}

/// Where the raw eye embedding `f_e` comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSource {
    /// Precomputed embedding, already loaded.
    Vector(Vec<f64>),
    /// Opaque reference to an eye frame; only usable by extractors that
    /// derive a feature from the reference itself.
    FrameRef(String),
}

/// One timestamped eye-camera observation.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeSample {
    pub t: u64,
    pub source: FeatureSource,
    pub pupil: [f64; 2],
    pub gaze: [f64; 2],
    pub frame_size: FrameSize,
}

impl EyeSample {
    /// Validates the pupil and clamps the gaze point into the unit square.
    pub fn new(
        t: u64,
        source: FeatureSource,
        pupil: [f64; 2],
        gaze: [f64; 2],
        frame_size: FrameSize,
    ) -> Result<Self> {
        if !gaze.iter().all(|g| g.is_finite()) {
            return Err(Error::Data(format!("non-finite gaze at t={t}")));
        }
        if !pupil.iter().all(|p| p.is_finite() && *p >= 0.0) {
            return Err(Error::Data(format!("pupil components must be finite and >= 0 at t={t}")));
        }
        Ok(Self {
            t,
            source,
            pupil,
            gaze: [gaze[0].clamp(0.0, 1.0), gaze[1].clamp(0.0, 1.0)],
            frame_size,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneFrame {
    pub t: u64,
    pub frame_id: String,
    pub size: FrameSize,
}

/// Axis-aligned rectangle `(cx, cy, w, h)` in normalized scene coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for Rect {
    fn from(v: [f64; 4]) -> Self {
        Rect {
            cx: v[0],
            cy: v[1],
            w: v[2],
            h: v[3],
        }
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.cx, r.cy, r.w, r.h]
    }
}

impl Rect {
    /// Builds a normalized rect from a top-left pixel box.
    pub fn from_pixels(x: f64, y: f64, w: f64, h: f64, size: FrameSize) -> Rect {
        let (fw, fh) = (f64::from(size.width), f64::from(size.height));
        Rect {
            cx: (x + w / 2.0) / fw,
            cy: (y + h / 2.0) / fh,
            w: w / fw,
            h: h / fh,
        }
    }

    /// Inverse of [`Rect::from_pixels`]: `(x, y, w, h)` with top-left origin.
    pub fn to_pixels(&self, size: FrameSize) -> (f64, f64, f64, f64) {
        let (fw, fh) = (f64::from(size.width), f64::from(size.height));
        let (w, h) = (self.w * fw, self.h * fh);
        (self.cx * fw - w / 2.0, self.cy * fh - h / 2.0, w, h)
    }

    pub fn center(&self) -> [f64; 2] {
        [self.cx, self.cy]
    }

    pub fn intersects_unit_square(&self) -> bool {
        self.cx - self.w / 2.0 < 1.0
            && self.cx + self.w / 2.0 > 0.0
            && self.cy - self.h / 2.0 < 1.0
            && self.cy + self.h / 2.0 > 0.0
    }
}

/// A candidate region of interest reported by the vision-language provider.
///
/// `id` is the provider-assigned index of the region within its frame and is
/// how later requests refer back to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: u32,
    pub rect: Rect,
    pub tag: String,
    pub feature: Vec<f32>,
}

impl Region {
    pub fn validate(&self, d_vis: usize) -> Result<()> {
        let r = &self.rect;
        if !(r.cx.is_finite() && r.cy.is_finite() && r.w.is_finite() && r.h.is_finite()) {
            return Err(Error::Data(format!("region {} has a non-finite rect", self.id)));
        }
        if r.w <= 0.0 || r.h <= 0.0 {
            return Err(Error::Data(format!("region {} has non-positive extent", self.id)));
        }
        if !r.intersects_unit_square() {
            return Err(Error::Data(format!("region {} lies outside the frame", self.id)));
        }
        if self.feature.len() != d_vis {
            return Err(Error::Data(format!(
                "region {} feature has length {}, expected {d_vis}",
                self.id,
                self.feature.len()
            )));
        }
        Ok(())
    }
}

/// The emotionship tuple for one emotional moment: what was felt, what was
/// looked at, a caption for it, and how much the scene drove the prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionshipRecord {
    pub t_start: u64,
    pub t_end: u64,
    pub emotion: EmotionLabel,
    pub region: Region,
    pub summary_tag: String,
    pub influential_score: f64,
    pub is_series: Vec<f64>,
}

impl EmotionshipRecord {
    pub fn validate(&self) -> Result<()> {
        if self.emotion.is_neutral() {
            return Err(Error::Data("record emotion must be non-neutral".into()));
        }
        if self.t_start > self.t_end {
            return Err(Error::Data(format!(
                "record interval reversed: {} > {}",
                self.t_start, self.t_end
            )));
        }
        if self.is_series.is_empty() {
            return Err(Error::Data("record has an empty influential-score series".into()));
        }
        if let Some(bad) = self.is_series.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::Data(format!("influential score {bad} outside (0,1)")));
        }
        if !(self.influential_score > 0.0 && self.influential_score < 1.0) {
            return Err(Error::Data(format!(
                "influential score {} outside (0,1)",
                self.influential_score
            )));
        }
        let mean = mean(&self.is_series);
        if (mean - self.influential_score).abs() > 1e-12 {
            return Err(Error::Data(format!(
                "influential score {} is not the series mean {mean}",
                self.influential_score
            )));
        }
        Ok(())
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn codes_round_trip() {
        for e in EmotionLabel::ALL {
            assert_eq!(EmotionLabel::from_code(e.code()), Some(e));
            assert_eq!(e.name().parse::<EmotionLabel>().unwrap(), e);
        }
        assert_eq!(EmotionLabel::from_code(7), None);
        assert_eq!(EmotionLabel::ALL.iter().filter(|e| e.is_neutral()).count(), 1);
    }

    #[test]
    fn valence_partition() {
        let pos: Vec<_> = EmotionLabel::ALL.iter().filter(|e| e.is_positive()).collect();
        let neg: Vec<_> = EmotionLabel::ALL.iter().filter(|e| e.is_negative()).collect();
        assert_eq!(pos.len(), 2);
        assert_eq!(neg.len(), 4);
        assert!(!EmotionLabel::Neutrality.is_positive() && !EmotionLabel::Neutrality.is_negative());
    }

    #[test]
    fn gaze_is_clamped() {
        let s = EyeSample::new(
            0,
            FeatureSource::FrameRef("e".into()),
            [0.1, 0.2],
            [-0.3, 1.7],
            FrameSize::new(240, 320).unwrap(),
        )
        .unwrap();
        assert_eq!(s.gaze, [0.0, 1.0]);
    }

    #[test]
    fn rejects_negative_pupil() {
        let r = EyeSample::new(
            0,
            FeatureSource::FrameRef("e".into()),
            [-0.1, 0.2],
            [0.5, 0.5],
            FrameSize::new(240, 320).unwrap(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn region_invariants() {
        let mut r = Region {
            id: 0,
            rect: Rect::from([0.5, 0.5, 0.1, 0.1]),
            tag: "cup".into(),
            feature: vec![0.0; 4],
        };
        assert!(r.validate(4).is_ok());
        assert!(r.validate(5).is_err());
        r.rect.w = 0.0;
        assert!(r.validate(4).is_err());
        r.rect = Rect::from([1.5, 0.5, 0.2, 0.2]);
        assert!(r.validate(4).is_err());
    }

    proptest! {
        #[test]
        fn pixel_round_trip(
            x in 0.0f64..1200.0, y in 0.0f64..900.0,
            w in 1.0f64..400.0, h in 1.0f64..400.0,
            fh in 100u32..2000, fw in 100u32..2000,
        ) {
            let size = FrameSize::new(fh, fw).unwrap();
            let (x2, y2, w2, h2) = Rect::from_pixels(x, y, w, h, size).to_pixels(size);
            prop_assert!((x - x2).abs() <= 0.5);
            prop_assert!((y - y2).abs() <= 0.5);
            prop_assert!((w - w2).abs() <= 0.5);
            prop_assert!((h - h2).abs() <= 0.5);
        }
    }
}
