//! Wire format spoken with vision-language providers.
//!
//! One JSON object per line, UTF-8, `\n` terminated. Keys are always emitted
//! in declaration order and absent optional keys are omitted, so a decoded
//! canonical message re-encodes to the same bytes. Floats use the shortest
//! decimal that round-trips (`f32` for region features, `f64` for rects).

use serde::{Deserialize, Serialize};

use crate::domain::Region;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Regions,
    Vqa,
    Caption,
    /// Only used in responses to requests that could not be decoded.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderRequest {
    pub op: Op,
    pub frame_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_ids: Option<Vec<u32>>,
}

impl ProviderRequest {
    pub fn regions(frame_id: &str) -> Self {
        Self {
            op: Op::Regions,
            frame_id: frame_id.to_string(),
            question: None,
            candidate_ids: None,
        }
    }

    pub fn vqa(frame_id: &str, question: &str, candidate_ids: Vec<u32>) -> Self {
        Self {
            op: Op::Vqa,
            frame_id: frame_id.to_string(),
            question: Some(question.to_string()),
            candidate_ids: Some(candidate_ids),
        }
    }

    pub fn caption(frame_id: &str, candidate_ids: Vec<u32>) -> Self {
        Self {
            op: Op::Caption,
            frame_id: frame_id.to_string(),
            question: None,
            candidate_ids: Some(candidate_ids),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderResponse {
    pub op: Op,
    pub frame_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<Vec<Region>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ProviderResponse {
    pub fn error(op: Op, frame_id: &str, message: impl Into<String>) -> Self {
        Self {
            op,
            frame_id: frame_id.to_string(),
            regions: None,
            answer: None,
            tag: None,
            error: Some(message.into()),
        }
    }
}

/// Per-frame region annotation: a `regions` response plus the index of the
/// truly attended region, when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub op: Op,
    pub frame_id: String,
    pub regions: Vec<Region>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_attended: Option<u32>,
}

fn protocol_error(line: &str, err: &serde_json::Error) -> Error {
    // column is 1-based and counts bytes within the (single) line
    let offset = if err.line() <= 1 {
        err.column().saturating_sub(1)
    } else {
        line.len()
    };
    Error::Protocol {
        offset,
        reason: err.to_string(),
    }
}

pub fn encode<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("protocol messages always serialize")
}

pub fn decode<'a, T: Deserialize<'a>>(line: &'a str) -> Result<T> {
    let trimmed = line.strip_suffix('\n').unwrap_or(line);
    if let Some(pos) = trimmed.find('\n') {
        return Err(Error::Protocol {
            offset: pos,
            reason: "embedded newline".into(),
        });
    }
    serde_json::from_str(trimmed).map_err(|e| protocol_error(trimmed, &e))
}

/// Checks that `resp` answers `req` and carries the payload its op requires.
pub fn check_response(req: &ProviderRequest, resp: &ProviderResponse, d_vis: usize) -> Result<()> {
    if let Some(msg) = &resp.error {
        return Err(Error::ProviderRejected(msg.clone()));
    }
    if resp.op != req.op {
        return Err(Error::Protocol {
            offset: 0,
            reason: format!("response op {:?} does not mirror request op {:?}", resp.op, req.op),
        });
    }
    if resp.frame_id != req.frame_id {
        return Err(Error::Protocol {
            offset: 0,
            reason: format!("response frame `{}` for request frame `{}`", resp.frame_id, req.frame_id),
        });
    }
    let missing = |what: &str| Error::Protocol {
        offset: 0,
        reason: format!("{:?} response without `{what}`", req.op),
    };
    match req.op {
        Op::Regions => {
            let regions = resp.regions.as_ref().ok_or_else(|| missing("regions"))?;
            validate_regions(regions, d_vis)?;
        }
        Op::Vqa => {
            let a = resp.answer.as_deref().ok_or_else(|| missing("answer"))?;
            if a.trim().is_empty() {
                return Err(missing("answer"));
            }
        }
        Op::Caption => {
            let t = resp.tag.as_deref().ok_or_else(|| missing("tag"))?;
            if t.trim().is_empty() {
                return Err(missing("tag"));
            }
        }
        Op::Error => {
            return Err(Error::Protocol {
                offset: 0,
                reason: "`error` is not a request op".into(),
            })
        }
    }
    Ok(())
}

pub fn validate_regions(regions: &[Region], d_vis: usize) -> Result<()> {
    for (i, r) in regions.iter().enumerate() {
        r.validate(d_vis).map_err(|e| Error::Protocol {
            offset: 0,
            reason: format!("region {i}: {e}"),
        })?;
    }
    Ok(())
}

/// Recorded exchange: lines `> request` and `< response`, strictly alternating.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub exchanges: Vec<(String, String)>,
}

impl Transcript {
    pub fn parse(text: &str) -> Result<Self> {
        let mut exchanges = Vec::new();
        let mut lines = text.lines().enumerate();
        while let Some((i, req)) = lines.next() {
            let req = req.strip_prefix("> ").ok_or_else(|| Error::Protocol {
                offset: 0,
                reason: format!("transcript line {}: expected `> `", i + 1),
            })?;
            let (j, resp) = lines.next().ok_or_else(|| Error::Protocol {
                offset: 0,
                reason: format!("transcript line {}: request without response", i + 1),
            })?;
            let resp = resp.strip_prefix("< ").ok_or_else(|| Error::Protocol {
                offset: 0,
                reason: format!("transcript line {}: expected `< `", j + 1),
            })?;
            exchanges.push((req.to_string(), resp.to_string()));
        }
        Ok(Self { exchanges })
    }

    pub fn to_text(&self) -> String {
        self.exchanges
            .iter()
            .map(|(q, a)| format!("> {q}\n< {a}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Rect;

    fn region(id: u32, tag: &str) -> Region {
        Region {
            id,
            rect: Rect::from([0.25, 0.5, 0.1, 0.2]),
            tag: tag.into(),
            feature: vec![0.1, -2.5, 3.0],
        }
    }

    #[test]
    fn request_bytes_are_fixed() {
        let r = ProviderRequest::vqa("s01", "why?", vec![2, 0]);
        assert_eq!(
            encode(&r),
            r#"{"op":"vqa","frame_id":"s01","question":"why?","candidate_ids":[2,0]}"#
        );
        assert_eq!(encode(&ProviderRequest::regions("a")), r#"{"op":"regions","frame_id":"a"}"#);
    }

    #[test]
    fn response_round_trip() {
        let resp = ProviderResponse {
            op: Op::Regions,
            frame_id: "s01".into(),
            regions: Some(vec![region(0, "cup")]),
            answer: None,
            tag: None,
            error: None,
        };
        let line = encode(&resp);
        assert_eq!(
            line,
            r#"{"op":"regions","frame_id":"s01","regions":[{"id":0,"rect":[0.25,0.5,0.1,0.2],"tag":"cup","feature":[0.1,-2.5,3.0]}]}"#
        );
        let back: ProviderResponse = decode(&line).unwrap();
        assert_eq!(back, resp);
        assert_eq!(encode(&back), line);
    }

    #[test]
    fn malformed_payload_reports_offset() {
        let err = decode::<ProviderResponse>(r#"{"op":"vqa","frame_id":"x","answer":}"#).unwrap_err();
        match err {
            Error::Protocol { offset, .. } => assert_eq!(offset, 36),
            other => panic!("{other:?}"),
        }
        assert!(decode::<ProviderResponse>(r#"{"op":"vqa","frame_id":"x","extra":1}"#).is_err());
    }

    #[test]
    fn wrong_feature_length_is_protocol_error() {
        let req = ProviderRequest::regions("s01");
        let resp = ProviderResponse {
            op: Op::Regions,
            frame_id: "s01".into(),
            regions: Some(vec![region(0, "cup")]),
            answer: None,
            tag: None,
            error: None,
        };
        assert!(check_response(&req, &resp, 3).is_ok());
        assert!(matches!(check_response(&req, &resp, 4), Err(Error::Protocol { .. })));
    }

    #[test]
    fn op_must_mirror() {
        let req = ProviderRequest::caption("s01", vec![0]);
        let mut resp = ProviderResponse::error(Op::Caption, "s01", "x");
        resp.error = None;
        resp.op = Op::Vqa;
        resp.answer = Some("a".into());
        assert!(check_response(&req, &resp, 3).is_err());
        let rejected = ProviderResponse::error(Op::Caption, "s01", "no such frame");
        assert!(matches!(check_response(&req, &rejected, 3), Err(Error::ProviderRejected(_))));
    }

    #[test]
    fn transcript_text_round_trip() {
        let text = "> {\"a\":1}\n< {\"b\":2}\n";
        let t = Transcript::parse(text).unwrap();
        assert_eq!(t.exchanges.len(), 1);
        assert_eq!(t.to_text(), text);
        assert!(Transcript::parse("> x\n").is_err());
    }
}
