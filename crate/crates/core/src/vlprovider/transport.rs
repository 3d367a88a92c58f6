//! Byte transports for the provider protocol: a child process speaking
//! newline-delimited messages on stdin/stdout, HTTP `POST /v1/op`, and a
//! transcript replayer.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::vlprovider::protocol::Transcript;
use crate::vlprovider::Transport;

/// `exec:CMD`: runs `sh -c CMD` and exchanges one line per request.
pub struct ExecTransport {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
}

impl ExecTransport {
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::ProviderUnavailable(format!("cannot spawn `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut buf = String::new();
                match reader.read_line(&mut buf) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(buf)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
            timeout,
        })
    }
}

impl Transport for ExecTransport {
    fn exchange(&mut self, request_line: &str) -> Result<String> {
        self.stdin
            .write_all(format!("{request_line}\n").as_bytes())
            .and_then(|()| self.stdin.flush())
            .map_err(|e| Error::ProviderUnavailable(format!("write to provider failed: {e}")))?;
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line.trim_end_matches(['\n', '\r']).to_string()),
            Ok(Err(e)) => Err(Error::ProviderUnavailable(format!("read from provider failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::ProviderUnavailable(format!(
                "no response within {} ms",
                self.timeout.as_millis()
            ))),
            Err(RecvTimeoutError::Disconnected) => {
                Err(Error::ProviderUnavailable("provider closed its output".into()))
            }
        }
    }
}

impl Drop for ExecTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// `http:URL`: each request is the body of `POST <URL>/v1/op`.
pub struct HttpTransport {
    endpoint: String,
    agent: ureq::Agent,
    timeout: Duration,
}

impl HttpTransport {
    pub fn new(base: &str, timeout: Duration) -> Self {
        let base = base.trim_end_matches('/');
        let endpoint = if base.ends_with("/v1/op") {
            base.to_string()
        } else {
            format!("{base}/v1/op")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint,
            agent,
            timeout,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Opens (and drops) a TCP connection to the endpoint's host.
    pub fn probe(&self) -> Result<()> {
        let uri: ureq::http::Uri = self
            .endpoint
            .parse()
            .map_err(|e| Error::ProviderUnavailable(format!("bad provider URL `{}`: {e}", self.endpoint)))?;
        let host = uri
            .host()
            .ok_or_else(|| Error::ProviderUnavailable(format!("no host in `{}`", self.endpoint)))?;
        let port = uri.port_u16().unwrap_or(80);
        let addrs = (host, port)
            .to_socket_addrs()
            .map_err(|e| Error::ProviderUnavailable(format!("cannot resolve {host}:{port}: {e}")))?;
        for addr in addrs {
            if TcpStream::connect_timeout(&addr, self.timeout).is_ok() {
                return Ok(());
            }
        }
        Err(Error::ProviderUnavailable(format!("cannot connect to {host}:{port}")))
    }
}

impl Transport for HttpTransport {
    fn exchange(&mut self, request_line: &str) -> Result<String> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json")
            .send(format!("{request_line}\n"))
            .map_err(|e| Error::ProviderUnavailable(format!("POST {} failed: {e}", self.endpoint)))?;
        let status = resp.status();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::ProviderUnavailable(format!("reading response failed: {e}")))?;
        if !status.is_success() {
            return Err(Error::ProviderUnavailable(format!("provider answered HTTP {status}")));
        }
        Ok(body.trim_end_matches(['\n', '\r']).to_string())
    }
}

/// Serves responses from a recorded transcript, checking that every request
/// matches the recording byte for byte.
#[derive(Debug, Clone)]
pub struct ReplayTransport {
    transcript: Transcript,
    next: usize,
}

impl ReplayTransport {
    pub fn new(transcript: Transcript) -> Self {
        Self { transcript, next: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.transcript.exchanges.len() - self.next
    }
}

impl Transport for ReplayTransport {
    fn exchange(&mut self, request_line: &str) -> Result<String> {
        let (req, resp) = self.transcript.exchanges.get(self.next).ok_or_else(|| {
            Error::ProviderUnavailable(format!("transcript exhausted after {} exchanges", self.next))
        })?;
        if req != request_line {
            let offset = req
                .bytes()
                .zip(request_line.bytes())
                .position(|(a, b)| a != b)
                .unwrap_or_else(|| req.len().min(request_line.len()));
            return Err(Error::Protocol {
                offset,
                reason: format!("request {} diverges from transcript", self.next),
            });
        }
        self.next += 1;
        Ok(resp.clone())
    }
}
