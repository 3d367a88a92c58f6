//! Client side of the vision-language provider boundary.
//!
//! The pipeline never talks to a detector or captioning model directly; it
//! sends `regions`, `vqa` and `caption` requests through a [`Transport`] and
//! validates every response before use. See `docs/protocol.md` for the wire
//! grammar.

pub mod conformance;
pub mod embedding;
pub mod mock;
pub mod protocol;
pub mod transport;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::domain::{Region, SceneFrame};
use crate::error::{Error, Result};

pub use embedding::{similarity, EmbeddingStore};
pub use mock::{MockProvider, MockTransport};
pub use protocol::{Op, ProviderRequest, ProviderResponse, Sidecar, Transcript};
pub use transport::{ExecTransport, HttpTransport, ReplayTransport};

/// Moves one encoded request line to a provider and returns its response line.
pub trait Transport {
    fn exchange(&mut self, request_line: &str) -> Result<String>;
}

/// Parsed `--provider` value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    /// In-process mock reading sidecars from the manifest's sidecar directory.
    Mock,
    Exec(String),
    Http(String),
    /// Replays a recorded transcript.
    Replay(PathBuf),
}

impl std::str::FromStr for ProviderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "mock" {
            Ok(Self::Mock)
        } else if let Some(cmd) = s.strip_prefix("exec:") {
            Ok(Self::Exec(cmd.to_string()))
        } else if let Some(url) = s.strip_prefix("http:") {
            // accept both `http:HOST:PORT` and `http:http://HOST:PORT`
            let url = if url.starts_with("http://") || url.starts_with("https://") {
                url.to_string()
            } else {
                format!("http://{}", url.trim_start_matches('/'))
            };
            Ok(Self::Http(url))
        } else if let Some(path) = s.strip_prefix("replay:") {
            Ok(Self::Replay(PathBuf::from(path)))
        } else {
            Err(Error::Input(format!(
                "unknown provider `{s}` (mock | exec:CMD | http:URL | replay:FILE)"
            )))
        }
    }
}

impl ProviderSpec {
    /// Builds the transport, failing early when the provider cannot be reached.
    pub fn connect(&self, sidecar_dir: &Path, timeout: Duration) -> Result<Box<dyn Transport>> {
        Ok(match self {
            Self::Mock => Box::new(MockTransport(MockProvider::new(sidecar_dir))),
            Self::Exec(cmd) => Box::new(ExecTransport::spawn(cmd, timeout)?),
            Self::Http(url) => {
                let t = HttpTransport::new(url, timeout);
                t.probe()?;
                Box::new(t)
            }
            Self::Replay(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Box::new(ReplayTransport::new(Transcript::parse(&text)?))
            }
        })
    }
}

/// Typed, validating client over any transport. Responses are cached by
/// request bytes, so repeated questions about a frame never hit the wire twice.
pub struct ProviderClient {
    transport: Box<dyn Transport>,
    d_vis: usize,
    max_candidates: usize,
    cache: HashMap<String, String>,
    transcript: Transcript,
}

impl ProviderClient {
    pub fn new(transport: Box<dyn Transport>, d_vis: usize, max_candidates: usize) -> Self {
        Self {
            transport,
            d_vis,
            max_candidates,
            cache: HashMap::new(),
            transcript: Transcript::default(),
        }
    }

    /// Every exchange that actually went over the transport, in order.
    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    fn call(&mut self, req: &ProviderRequest) -> Result<ProviderResponse> {
        let line = protocol::encode(req);
        let resp_line = match self.cache.get(&line) {
            Some(r) => r.clone(),
            None => {
                let r = self.transport.exchange(&line)?;
                self.transcript.exchanges.push((line.clone(), r.clone()));
                self.cache.insert(line, r.clone());
                r
            }
        };
        let resp: ProviderResponse = protocol::decode(&resp_line)?;
        protocol::check_response(req, &resp, self.d_vis)?;
        Ok(resp)
    }

    fn candidate_ids(&self, candidates: &[Region]) -> Result<Vec<u32>> {
        if candidates.is_empty() {
            return Err(Error::Precondition("candidate list is empty".into()));
        }
        if candidates.len() > self.max_candidates {
            return Err(Error::Precondition(format!(
                "{} candidates exceed the limit of {}",
                candidates.len(),
                self.max_candidates
            )));
        }
        Ok(candidates.iter().map(|r| r.id).collect())
    }

    pub fn fetch_regions(&mut self, frame: &SceneFrame) -> Result<Vec<Region>> {
        let resp = self.call(&ProviderRequest::regions(&frame.frame_id))?;
        Ok(resp.regions.unwrap_or_default())
    }

    pub fn vqa(&mut self, frame_id: &str, question: &str, candidates: &[Region]) -> Result<String> {
        let ids = self.candidate_ids(candidates)?;
        let resp = self.call(&ProviderRequest::vqa(frame_id, question, ids))?;
        Ok(resp.answer.unwrap_or_default())
    }

    pub fn caption(&mut self, frame_id: &str, candidates: &[Region]) -> Result<String> {
        let ids = self.candidate_ids(candidates)?;
        let resp = self.call(&ProviderRequest::caption(frame_id, ids))?;
        Ok(resp.tag.unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_provider_specs() {
        assert_eq!("mock".parse::<ProviderSpec>().unwrap(), ProviderSpec::Mock);
        assert_eq!(
            "exec:python serve.py --mode stdio".parse::<ProviderSpec>().unwrap(),
            ProviderSpec::Exec("python serve.py --mode stdio".into())
        );
        assert_eq!(
            "http:127.0.0.1:9".parse::<ProviderSpec>().unwrap(),
            ProviderSpec::Http("http://127.0.0.1:9".into())
        );
        assert_eq!(
            "http:http://h:1/".parse::<ProviderSpec>().unwrap(),
            ProviderSpec::Http("http://h:1/".into())
        );
        assert!("grpc:x".parse::<ProviderSpec>().is_err());
    }

    struct Canned(Vec<String>, usize);
    impl Transport for Canned {
        fn exchange(&mut self, _: &str) -> Result<String> {
            self.1 += 1;
            Ok(self.0[self.1 - 1].clone())
        }
    }

    #[test]
    fn cache_avoids_repeat_traffic() {
        let t = Canned(vec![r#"{"op":"caption","frame_id":"f","tag":"x"}"#.into()], 0);
        let mut c = ProviderClient::new(Box::new(t), 2, 10);
        let region = Region {
            id: 0,
            rect: crate::domain::Rect::from([0.5, 0.5, 0.1, 0.1]),
            tag: "x".into(),
            feature: vec![0.0, 0.0],
        };
        assert_eq!(c.caption("f", std::slice::from_ref(&region)).unwrap(), "x");
        assert_eq!(c.caption("f", std::slice::from_ref(&region)).unwrap(), "x");
        assert_eq!(c.transcript().exchanges.len(), 1);
        assert!(matches!(c.caption("f", &[]), Err(Error::Precondition(_))));
    }
}
