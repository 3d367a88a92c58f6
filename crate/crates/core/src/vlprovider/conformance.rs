//! Conformance checks any provider implementation must pass.

use std::fmt::Write as _;

use crate::vlprovider::protocol::{self, Op, ProviderRequest, ProviderResponse};
use crate::vlprovider::Transport;

pub const UNKNOWN_FRAME: &str = "__conformance_unknown_frame__";

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConformanceReport {
    pub checks: Vec<Check>,
}

impl ConformanceReport {
    pub fn all_passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{} {}{}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                if c.detail.is_empty() { String::new() } else { format!(" ({})", c.detail) }
            );
        }
        out
    }

    fn record(&mut self, name: String, outcome: Result<(), String>) {
        let (passed, detail) = match outcome {
            Ok(()) => (true, String::new()),
            Err(d) => (false, d),
        };
        self.checks.push(Check { name, passed, detail });
    }
}

fn exchange(transport: &mut dyn Transport, req: &ProviderRequest) -> Result<String, String> {
    transport
        .exchange(&protocol::encode(req))
        .map_err(|e| format!("transport: {e}"))
}

fn decode_canonical(line: &str) -> Result<ProviderResponse, String> {
    let resp: ProviderResponse = protocol::decode(line).map_err(|e| e.to_string())?;
    let again = protocol::encode(&resp);
    if again != line {
        return Err(format!("non-canonical encoding: got `{line}`, canonical `{again}`"));
    }
    Ok(resp)
}

fn expect_ok(
    transport: &mut dyn Transport,
    req: &ProviderRequest,
    d_vis: usize,
) -> Result<(String, ProviderResponse), String> {
    let line = exchange(transport, req)?;
    let resp = decode_canonical(&line)?;
    protocol::check_response(req, &resp, d_vis).map_err(|e| e.to_string())?;
    Ok((line, resp))
}

fn expect_error(transport: &mut dyn Transport, line: &str) -> Result<(), String> {
    let resp_line = transport.exchange(line).map_err(|e| format!("transport: {e}"))?;
    let resp = decode_canonical(&resp_line)?;
    if resp.error.is_none() {
        return Err(format!("expected an error response, got `{resp_line}`"));
    }
    Ok(())
}

/// Runs every check against `transport` using the given frame ids, which
/// must be known to the provider.
pub fn run(transport: &mut dyn Transport, frame_ids: &[String], d_vis: usize, question: &str) -> ConformanceReport {
    let mut report = ConformanceReport::default();

    for frame in frame_ids {
        let regions_req = ProviderRequest::regions(frame);
        let first = expect_ok(transport, &regions_req, d_vis);
        let regions = first.as_ref().ok().and_then(|(_, r)| r.regions.clone()).unwrap_or_default();
        report.record(
            format!("regions[{frame}] schema+invariants"),
            first.as_ref().map(|_| ()).map_err(Clone::clone).and_then(|()| {
                let mut ids: Vec<u32> = regions.iter().map(|r| r.id).collect();
                ids.sort_unstable();
                ids.dedup();
                if ids.len() != regions.len() {
                    return Err("duplicate region ids".into());
                }
                match regions.iter().find(|r| r.tag.trim().is_empty() || r.tag != r.tag.to_lowercase()) {
                    Some(r) => Err(format!("region {} tag `{}` must be non-empty lowercase", r.id, r.tag)),
                    None => Ok(()),
                }
            }),
        );
        report.record(
            format!("regions[{frame}] deterministic"),
            match (&first, exchange(transport, &regions_req)) {
                (Ok((a, _)), Ok(b)) if *a == b => Ok(()),
                (Ok(_), Ok(b)) => Err(format!("second response differs: `{b}`")),
                (Err(e), _) => Err(e.clone()),
                (_, Err(e)) => Err(e),
            },
        );

        if regions.is_empty() {
            continue;
        }
        let ids: Vec<u32> = regions.iter().take(3).map(|r| r.id).collect();
        report.record(
            format!("vqa[{frame}]"),
            expect_ok(transport, &ProviderRequest::vqa(frame, question, ids.clone()), d_vis).map(|_| ()),
        );
        report.record(
            format!("caption[{frame}]"),
            expect_ok(transport, &ProviderRequest::caption(frame, ids), d_vis).map(|_| ()),
        );
        report.record(
            format!("vqa[{frame}] empty candidates rejected"),
            expect_error(transport, &protocol::encode(&ProviderRequest::vqa(frame, question, vec![]))),
        );
    }

    report.record(
        "unknown frame rejected".into(),
        expect_error(transport, &protocol::encode(&ProviderRequest::regions(UNKNOWN_FRAME))),
    );
    report.record(
        "malformed request rejected".into(),
        expect_error(transport, r#"{"op":"regions","frame_id":"#),
    );
    report.record(
        "error responses mirror op".into(),
        exchange(transport, &ProviderRequest::caption(UNKNOWN_FRAME, vec![0])).and_then(|line| {
            let resp = decode_canonical(&line)?;
            if resp.op == Op::Caption && resp.error.is_some() {
                Ok(())
            } else {
                Err(format!("got `{line}`"))
            }
        }),
    );
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Rect, Region};
    use crate::vlprovider::mock::{sidecar_path, MockProvider, MockTransport};
    use crate::vlprovider::protocol::Sidecar;
    use crate::error::Result;

    #[test]
    fn mock_passes() {
        let dir = tempfile::tempdir().unwrap();
        let sc = Sidecar {
            op: Op::Regions,
            frame_id: "f1".into(),
            regions: (0..4)
                .map(|i| Region {
                    id: i,
                    rect: Rect::from([0.2 * f64::from(i) + 0.1, 0.5, 0.1, 0.1]),
                    tag: format!("thing {i}"),
                    feature: vec![0.5; 3],
                })
                .collect(),
            gt_attended: Some(1),
        };
        std::fs::write(sidecar_path(dir.path(), "f1"), protocol::encode(&sc)).unwrap();
        let mut t = MockTransport(MockProvider::new(dir.path()));
        let report = run(&mut t, &["f1".to_string()], 3, "q?");
        assert!(report.all_passed(), "{}", report.to_text());
    }

    struct Sloppy;
    impl Transport for Sloppy {
        fn exchange(&mut self, _: &str) -> Result<String> {
            Ok(r#"{"frame_id":"f1","op":"regions","regions":[]}"#.into())
        }
    }

    #[test]
    fn non_canonical_provider_fails() {
        let report = run(&mut Sloppy, &["f1".to_string()], 3, "q?");
        assert!(!report.all_passed());
        assert!(report.failures().any(|c| c.detail.contains("non-canonical")));
    }
}
