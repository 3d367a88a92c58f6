//! Replay manifests, record files and label lists.
//!
//! A manifest is JSON lines. An optional first line without `t` is the
//! header:
//!
//! ```text
//! {"sidecar_dir":"sidecars","config":{"pipeline.off_streak":"10"}}
//! {"t":0,"eye":{"feature":[0.1,0.2],"pupil":[0.3,0.4],"gaze":[0.5,0.5]},"scene":{"frame_id":"f0000","sidecar":true},"label":"happiness"}
//! ```
//!
//! `eye` takes exactly one of `feature` (inline), `feature_ref` (a text file
//! of whitespace-separated numbers, relative to the manifest) or `frame_ref`
//! (opaque eye-frame id), and exactly one of `gaze` (normalized) or
//! `gaze_px` (scene pixels). `scene.sidecar: true` asserts that
//! `<sidecar_dir>/<frame_id>.json` exists.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{EmotionLabel, EmotionshipRecord, EyeSample, FeatureSource, FrameSize, SceneFrame};
use crate::error::{Error, Result};
use crate::vlprovider::mock::sidecar_path;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar_dir: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EyeLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_ref: Option<String>,
    pub pupil: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze_px: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<FrameSize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneLine {
    pub frame_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<FrameSize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub sidecar: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameLine {
    pub t: u64,
    pub eye: EyeLine,
    pub scene: SceneLine,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<EmotionLabel>,
}

/// One validated manifest frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub line: usize,
    pub eye: EyeSample,
    pub scene: SceneFrame,
    pub label: Option<EmotionLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub sidecar_dir: PathBuf,
    /// Config overrides from the header, in key order.
    pub config: Vec<(String, String)>,
    pub frames: Vec<FrameEntry>,
}

/// Serializes a header and frames into manifest text.
pub fn manifest_text(header: &ManifestHeader, frames: &[FrameLine]) -> String {
    let mut out = String::new();
    if *header != ManifestHeader::default() {
        out.push_str(&serde_json::to_string(header).expect("header serializes"));
        out.push('\n');
    }
    for f in frames {
        out.push_str(&serde_json::to_string(f).expect("frame serializes"));
        out.push('\n');
    }
    out
}

fn read_feature_file(path: &Path) -> std::result::Result<Vec<f64>, String> {
    let text = std::fs::read_to_string(path).map_err(|_| format!("dangling reference: feature file `{}` not found", path.display()))?;
    text.split_whitespace()
        .map(|v| v.parse::<f64>().map_err(|_| format!("feature file `{}`: bad number `{v}`", path.display())))
        .collect()
}

fn frame_entry(raw: FrameLine, base: &Path, sidecar_dir: &Path) -> std::result::Result<FrameEntry, String> {
    let FrameLine { t, eye, scene, label } = raw;
    let scene_size = scene.size.unwrap_or(FrameSize::SCENE_DEFAULT);
    FrameSize::new(scene_size.height, scene_size.width).map_err(|e| e.to_string())?;
    let source = match (eye.feature, eye.feature_ref, eye.frame_ref) {
        (Some(v), None, None) => FeatureSource::Vector(v),
        (None, Some(r), None) => FeatureSource::Vector(read_feature_file(&base.join(r))?),
        (None, None, Some(r)) => FeatureSource::FrameRef(r),
        _ => return Err("eye needs exactly one of feature, feature_ref, frame_ref".into()),
    };
    if let FeatureSource::Vector(v) = &source {
        if v.iter().any(|x| !x.is_finite()) {
            return Err("eye feature contains a non-finite value".into());
        }
    }
    let gaze = match (eye.gaze, eye.gaze_px) {
        (Some(g), None) => g,
        (None, Some([x, y])) => [x / f64::from(scene_size.width), y / f64::from(scene_size.height)],
        _ => return Err("eye needs exactly one of gaze, gaze_px".into()),
    };
    if scene.frame_id.is_empty() {
        return Err("scene.frame_id is empty".into());
    }
    if scene.sidecar {
        let p = sidecar_path(sidecar_dir, &scene.frame_id);
        if !p.is_file() {
            return Err(format!("dangling reference: sidecar `{}` not found", p.display()));
        }
    }
    let eye = EyeSample::new(t, source, eye.pupil, gaze, eye.size.unwrap_or(scene_size)).map_err(|e| e.to_string())?;
    Ok(FrameEntry {
        line: 0,
        eye,
        scene: SceneFrame {
            t,
            frame_id: scene.frame_id,
            size: scene_size,
        },
        label,
    })
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Manifest> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = Manifest {
        path: path.to_path_buf(),
        sidecar_dir: base.clone(),
        config: Vec::new(),
        frames: Vec::new(),
    };
    let mut last_t: Option<u64> = None;
    let mut seen_content = false;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::parse(path, n, e.to_string()))?;
        if !seen_content && value.get("t").is_none() {
            seen_content = true;
            let header: ManifestHeader = serde_json::from_value(value).map_err(|e| Error::parse(path, n, format!("header: {e}")))?;
            if let Some(dir) = header.sidecar_dir {
                manifest.sidecar_dir = base.join(dir);
                if !manifest.sidecar_dir.is_dir() {
                    return Err(Error::parse(
                        path,
                        n,
                        format!("dangling reference: sidecar directory `{}` not found", manifest.sidecar_dir.display()),
                    ));
                }
            }
            manifest.config = header.config.into_iter().collect();
            continue;
        }
        seen_content = true;
        let raw: FrameLine = serde_json::from_value(value).map_err(|e| Error::parse(path, n, e.to_string()))?;
        if let Some(prev) = last_t {
            if raw.t <= prev {
                return Err(Error::parse(
                    path,
                    n,
                    format!("timestamp {} does not increase past {prev}", raw.t),
                ));
            }
        }
        last_t = Some(raw.t);
        let mut entry = frame_entry(raw, &base, &manifest.sidecar_dir).map_err(|r| Error::parse(path, n, r))?;
        entry.line = n;
        manifest.frames.push(entry);
    }
    Ok(manifest)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

/// One record per line, keys in declaration order.
pub fn records_text(records: &[EmotionshipRecord]) -> Result<String> {
    let mut out = String::new();
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|e| Error::Data(format!("record {i}: {e}")))?;
        let _ = writeln!(out, "{}", serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?);
    }
    Ok(out)
}

pub fn write_records(records: &[EmotionshipRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = records_text(records)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_records(text: &str, origin: &Path) -> Result<Vec<EmotionshipRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: EmotionshipRecord = serde_json::from_str(line).map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        r.validate().map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        out.push(r);
    }
    Ok(out)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<EmotionshipRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, path)
}

/// One label per non-blank line, by name or code; `#` starts a comment.
pub fn parse_labels(text: &str, origin: &Path) -> Result<Vec<EmotionLabel>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        out.push(line.parse().map_err(|e: Error| Error::parse(origin, i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<EmotionLabel>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Rect, Region};
    use proptest::prelude::*;

    const THREE: &str = r#"{"t":0,"eye":{"feature":[0.1],"pupil":[0.2,0.3],"gaze":[0.5,0.5]},"scene":{"frame_id":"a"}}
{"t":33,"eye":{"frame_ref":"e1","pupil":[0.2,0.3],"gaze_px":[640,480]},"scene":{"frame_id":"b","size":[960,1280]},"label":"fear"}
{"t":67,"eye":{"feature":[0.1],"pupil":[0.2,0.3],"gaze":[1.5,-0.1]},"scene":{"frame_id":"c"},"label":"neutrality"}
"#;

    #[test]
    fn loads_three_frames() {
        let m = parse_manifest(THREE, Path::new("m.jsonl")).unwrap();
        assert_eq!(m.frames.len(), 3);
        assert_eq!(m.frames[1].eye.gaze, [0.5, 0.5]);
        assert_eq!(m.frames[2].eye.gaze, [1.0, 0.0]);
        assert_eq!(m.frames[1].label, Some(EmotionLabel::Fear));
        assert_eq!(m.frames[2].line, 3);
    }

    #[test]
    fn decreasing_timestamp_cites_line() {
        let text = THREE.replace("\"t\":33", "\"t\":0");
        let err = parse_manifest(&text, Path::new("m.jsonl")).unwrap_err();
        assert!(err.to_string().starts_with("m.jsonl:2:"), "{err}");
    }

    #[test]
    fn missing_sidecar_is_named() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sc")).unwrap();
        let text = format!(
            "{}\n{}\n",
            r#"{"sidecar_dir":"sc","config":{"gaze.window":"5"}}"#,
            r#"{"t":0,"eye":{"feature":[0.1],"pupil":[0,0],"gaze":[0.5,0.5]},"scene":{"frame_id":"x9","sidecar":true}}"#
        );
        let path = dir.path().join("m.jsonl");
        let err = parse_manifest(&text, &path).unwrap_err();
        assert!(err.to_string().contains("x9.json"), "{err}");
        assert!(err.to_string().contains(":2:"), "{err}");
        std::fs::write(dir.path().join("sc/x9.json"), "{}").unwrap();
        let m = parse_manifest(&text, &path).unwrap();
        assert_eq!(m.config, vec![("gaze.window".to_string(), "5".to_string())]);
    }

    #[test]
    fn feature_refs_resolve() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("f.txt"), "1 2\n3\n").unwrap();
        let path = dir.path().join("m.jsonl");
        let line = r#"{"t":5,"eye":{"feature_ref":"f.txt","pupil":[0,0],"gaze":[0.5,0.5]},"scene":{"frame_id":"a"}}"#;
        let m = parse_manifest(line, &path).unwrap();
        assert_eq!(m.frames[0].eye.source, FeatureSource::Vector(vec![1.0, 2.0, 3.0]));
        let err = parse_manifest(&line.replace("f.txt", "g.txt"), &path).unwrap_err();
        assert!(err.to_string().contains("g.txt"), "{err}");
    }

    #[test]
    fn malformed_lines() {
        for bad in [
            r#"{"t":0,"eye":{"pupil":[0,0],"gaze":[0.5,0.5]},"scene":{"frame_id":"a"}}"#,
            r#"{"t":0,"eye":{"feature":[1],"pupil":[0,0]},"scene":{"frame_id":"a"}}"#,
            r#"{"t":0,"eye":{"feature":[1],"pupil":[-1,0],"gaze":[0.5,0.5]},"scene":{"frame_id":"a"}}"#,
            r#"{"t":0,"eye":{"feature":[1],"pupil":[0,0],"gaze":[0.5,0.5]},"scene":{"frame_id":"a"},"extra":1}"#,
            r#"{"t":0,"eye":{"feature":[1],"pupil":[0,0],"gaze":[0.5,0.5]},"scene":{"frame_id":"a"},"label":"bored"}"#,
            "{\"t\":0,",
        ] {
            let err = parse_manifest(bad, Path::new("m")).unwrap_err();
            assert!(err.to_string().starts_with("m:1:"), "{bad}: {err}");
        }
    }

    #[test]
    fn writer_round_trips() {
        let frames: Vec<FrameLine> = (0..2)
            .map(|i| FrameLine {
                t: i * 33,
                eye: EyeLine {
                    feature: Some(vec![0.25]),
                    pupil: [0.1, 0.2],
                    gaze: Some([0.3, 0.4]),
                    ..Default::default()
                },
                scene: SceneLine {
                    frame_id: format!("f{i}"),
                    size: None,
                    sidecar: false,
                },
                label: Some(EmotionLabel::Anger),
            })
            .collect();
        let text = manifest_text(&ManifestHeader::default(), &frames);
        assert_eq!(text.lines().count(), 2);
        let m = parse_manifest(&text, Path::new("m")).unwrap();
        assert_eq!(m.frames[1].scene.frame_id, "f1");
    }

    fn record(is: Vec<f64>) -> EmotionshipRecord {
        let mean = is.iter().sum::<f64>() / is.len() as f64;
        EmotionshipRecord {
            t_start: 10,
            t_end: 20,
            emotion: EmotionLabel::Sadness,
            region: Region {
                id: 2,
                rect: Rect::from([0.5, 0.5, 0.2, 0.1]),
                tag: "rainy window".into(),
                feature: vec![0.5, -1.0],
            },
            summary_tag: "a scene of rainy window".into(),
            influential_score: mean,
            is_series: is,
        }
    }

    #[test]
    fn records_empty_and_invalid() {
        assert_eq!(records_text(&[]).unwrap(), "");
        let mut bad = record(vec![0.5]);
        bad.influential_score = 1.0;
        bad.is_series = vec![1.0];
        assert!(matches!(records_text(&[bad]), Err(Error::Data(_))));
    }

    #[test]
    fn record_key_order() {
        let line = records_text(&[record(vec![0.25, 0.75])]).unwrap();
        assert_eq!(
            line,
            "{\"t_start\":10,\"t_end\":20,\"emotion\":\"sadness\",\"region\":{\"id\":2,\"rect\":[0.5,0.5,0.2,0.1],\"tag\":\"rainy window\",\"feature\":[0.5,-1.0]},\"summary_tag\":\"a scene of rainy window\",\"influential_score\":0.5,\"is_series\":[0.25,0.75]}\n"
        );
    }

    #[test]
    fn labels_file() {
        let l = parse_labels("happiness\n# c\n\n3\n", Path::new("t")).unwrap();
        assert_eq!(l, vec![EmotionLabel::Happiness, EmotionLabel::Anger]);
        assert!(parse_labels("x\n", Path::new("t")).unwrap_err().to_string().starts_with("t:1:"));
    }

    proptest! {
        #[test]
        fn records_round_trip(series in prop::collection::vec(prop::collection::vec(0.001f64..0.999, 1..5), 0..4)) {
            let recs: Vec<_> = series.into_iter().map(record).collect();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("r.jsonl");
            write_records(&recs, &p).unwrap();
            prop_assert_eq!(read_records(&p).unwrap(), recs);
        }
    }
}
