//! Deterministic provider backed by sidecar annotation files.
//!
//! Sidecars live at `<dir>/<frame_id>.json`, one [`Sidecar`] object per file.
//! `regions` returns the sidecar's regions verbatim. `vqa` answers with the
//! tag of the candidate matching `gt_attended` (or, when that region is not a
//! candidate, the candidate whose center is nearest to it), falling back to
//! the first candidate. `caption` wraps the same tag as `a scene of <tag>`.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use crate::domain::Region;
use crate::error::{Error, Result};
use crate::vlprovider::protocol::{decode, encode, Op, ProviderRequest, ProviderResponse, Sidecar};
use crate::vlprovider::Transport;

pub const CAPTION_PREFIX: &str = "a scene of ";

#[derive(Debug, Clone)]
pub struct MockProvider {
    dir: PathBuf,
    loaded: HashMap<String, Sidecar>,
}

pub fn sidecar_path(dir: &Path, frame_id: &str) -> PathBuf {
    dir.join(format!("{frame_id}.json"))
}

pub fn load_sidecar(path: &Path) -> Result<Sidecar> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sidecar: Sidecar = decode(text.trim_end_matches('\n'))?;
    if sidecar.op != Op::Regions {
        return Err(Error::Protocol {
            offset: 0,
            reason: format!("sidecar {} must have op `regions`", path.display()),
        });
    }
    if let Some(gt) = sidecar.gt_attended {
        if !sidecar.regions.iter().any(|r| r.id == gt) {
            return Err(Error::Data(format!(
                "sidecar {}: gt_attended {gt} names no region",
                path.display()
            )));
        }
    }
    Ok(sidecar)
}

impl MockProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            loaded: HashMap::new(),
        }
    }

    fn sidecar(&mut self, frame_id: &str) -> std::result::Result<&Sidecar, String> {
        if !self.loaded.contains_key(frame_id) {
            if frame_id.is_empty() || frame_id.contains(['/', '\\']) || frame_id.starts_with('.') {
                return Err(format!("invalid frame_id `{frame_id}`"));
            }
            let path = sidecar_path(&self.dir, frame_id);
            if !path.exists() {
                return Err(format!("unknown frame_id `{frame_id}`"));
            }
            let sc = load_sidecar(&path).map_err(|e| e.to_string())?;
            self.loaded.insert(frame_id.to_string(), sc);
        }
        Ok(&self.loaded[frame_id])
    }

    fn attended_tag(sidecar: &Sidecar, ids: &[u32]) -> std::result::Result<String, String> {
        let candidates: Vec<&Region> = ids
            .iter()
            .map(|id| {
                sidecar
                    .regions
                    .iter()
                    .find(|r| r.id == *id)
                    .ok_or_else(|| format!("unknown candidate id {id}"))
            })
            .collect::<std::result::Result<_, _>>()?;
        let first = candidates.first().ok_or("empty candidate list")?;
        let Some(gt) = sidecar
            .gt_attended
            .and_then(|g| sidecar.regions.iter().find(|r| r.id == g))
        else {
            return Ok(first.tag.clone());
        };
        let [gx, gy] = gt.rect.center();
        let mut best = *first;
        let mut best_d = f64::INFINITY;
        for c in &candidates {
            if c.id == gt.id {
                return Ok(c.tag.clone());
            }
            let [x, y] = c.rect.center();
            let d = (x - gx).hypot(y - gy);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        Ok(best.tag.clone())
    }

    pub fn respond(&mut self, req: &ProviderRequest) -> ProviderResponse {
        let frame_id = req.frame_id.clone();
        let sidecar = match self.sidecar(&frame_id) {
            Ok(sc) => sc.clone(),
            Err(msg) => return ProviderResponse::error(req.op, &frame_id, msg),
        };
        let mut resp = ProviderResponse {
            op: req.op,
            frame_id: frame_id.clone(),
            regions: None,
            answer: None,
            tag: None,
            error: None,
        };
        match req.op {
            Op::Regions => resp.regions = Some(sidecar.regions),
            Op::Vqa | Op::Caption => {
                if req.op == Op::Vqa && req.question.is_none() {
                    return ProviderResponse::error(req.op, &frame_id, "vqa request without question");
                }
                let ids = req.candidate_ids.as_deref().unwrap_or_default();
                match Self::attended_tag(&sidecar, ids) {
                    Ok(tag) if req.op == Op::Vqa => resp.answer = Some(tag),
                    Ok(tag) => resp.tag = Some(format!("{CAPTION_PREFIX}{tag}")),
                    Err(msg) => return ProviderResponse::error(req.op, &frame_id, msg),
                }
            }
            Op::Error => return ProviderResponse::error(Op::Error, &frame_id, "`error` is not a request op"),
        }
        resp
    }

    /// Handles one wire line; never fails, malformed input yields an error response.
    pub fn handle_line(&mut self, line: &str) -> String {
        match decode::<ProviderRequest>(line) {
            Ok(req) => encode(&self.respond(&req)),
            Err(e) => encode(&ProviderResponse::error(Op::Error, "", e.to_string())),
        }
    }

    /// Serves requests line by line until `input` closes.
    pub fn serve<R: BufRead, W: Write>(&mut self, input: R, mut output: W) -> std::io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            writeln!(output, "{}", self.handle_line(&line))?;
            output.flush()?;
        }
        Ok(())
    }
}

/// Runs the mock in-process, still passing every message through the codec.
#[derive(Debug, Clone)]
pub struct MockTransport(pub MockProvider);

impl Transport for MockTransport {
    fn exchange(&mut self, request_line: &str) -> Result<String> {
        Ok(self.0.handle_line(request_line))
    }
}
