//! Child-process backend. One session owns one child; requests to it are
//! serialised. A writer thread feeds stdin and a reader thread drains
//! stdout so a stalled child can always be timed out.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::raster::ScalarRaster;

use super::protocol::{Op, Payload, Request, Response};
use super::Patch;

enum Line {
    Data(String),
    Eof,
    Failed(String),
}

pub struct ExternalSession {
    child: Child,
    to_child: Option<Sender<String>>,
    from_child: Receiver<Line>,
    writer: Option<JoinHandle<()>>,
    next_id: u64,
    timeout: Duration,
    dead: bool,
}

impl ExternalSession {
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config("external backend command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::BackendFailure {
                reason: format!("cannot spawn {program}: {e}"),
                unprocessed: Vec::new(),
            })?;

        let mut stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");

        let (to_child, requests) = mpsc::channel::<String>();
        let writer = std::thread::spawn(move || {
            for line in requests {
                if stdin.write_all(line.as_bytes()).is_err() || stdin.write_all(b"\n").is_err() {
                    break;
                }
                if stdin.flush().is_err() {
                    break;
                }
            }
        });

        let (tx, from_child) = mpsc::channel::<Line>();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut buf = String::new();
                match reader.read_line(&mut buf) {
                    Ok(0) => {
                        let _ = tx.send(Line::Eof);
                        break;
                    }
                    Ok(_) => {
                        if tx.send(Line::Data(buf)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Line::Failed(e.to_string()));
                        break;
                    }
                }
            }
        });

        Ok(Self {
            child,
            to_child: Some(to_child),
            from_child,
            writer: Some(writer),
            next_id: 0,
            timeout,
            dead: false,
        })
    }

    fn fail(&mut self, reason: String, unprocessed: Vec<(u32, u32)>) -> Error {
        self.kill();
        Error::BackendFailure { reason, unprocessed }
    }

    fn kill(&mut self) {
        if !self.dead {
            self.dead = true;
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }

    /// Sends `requests` and collects one response per request id.
    /// `tags` names each request in failure reports.
    fn exchange(&mut self, requests: Vec<Request>, tags: &[(u32, u32)]) -> Result<Vec<Payload>> {
        if self.dead {
            return Err(Error::BackendFailure {
                reason: "backend already terminated".into(),
                unprocessed: tags.to_vec(),
            });
        }
        let first_id = requests.first().map_or(self.next_id, |r| r.id);
        let count = requests.len();
        let sender = self.to_child.as_ref().expect("sender alive while session alive");
        for req in &requests {
            if sender.send(req.encode()).is_err() {
                return Err(self.fail("backend stdin closed".into(), tags.to_vec()));
            }
        }

        let deadline = Instant::now() + self.timeout;
        let mut slots: Vec<Option<Payload>> = vec![None; count];
        let mut filled = 0;
        while filled < count {
            let unprocessed = |slots: &[Option<Payload>]| -> Vec<(u32, u32)> {
                slots
                    .iter()
                    .zip(tags)
                    .filter(|(s, _)| s.is_none())
                    .map(|(_, &t)| t)
                    .collect()
            };
            let wait = deadline.saturating_duration_since(Instant::now());
            let line = match self.from_child.recv_timeout(wait) {
                Ok(Line::Data(l)) => l,
                Ok(Line::Eof) => {
                    let u = unprocessed(&slots);
                    return Err(self.fail("backend exited".into(), u));
                }
                Ok(Line::Failed(e)) => {
                    let u = unprocessed(&slots);
                    return Err(self.fail(format!("reading backend output: {e}"), u));
                }
                Err(RecvTimeoutError::Timeout) => {
                    let u = unprocessed(&slots);
                    return Err(self.fail(format!("backend timed out after {:?}", self.timeout), u));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    let u = unprocessed(&slots);
                    return Err(self.fail("backend reader vanished".into(), u));
                }
            };
            let resp = match Response::decode(&line) {
                Ok(r) => r,
                Err(e) => {
                    self.kill();
                    return Err(e);
                }
            };
            let slot = resp
                .id
                .checked_sub(first_id)
                .map(|i| i as usize)
                .filter(|&i| i < count);
            let Some(i) = slot else {
                self.kill();
                return Err(Error::Protocol(format!("unexpected response id {}", resp.id)));
            };
            if slots[i].is_some() {
                self.kill();
                return Err(Error::Protocol(format!("duplicate response id {}", resp.id)));
            }
            if let Payload::Error(msg) = &resp.payload {
                let msg = msg.clone();
                self.kill();
                return Err(Error::Protocol(format!("backend reported error for id {}: {msg}", resp.id)));
            }
            slots[i] = Some(resp.payload);
            filled += 1;
        }
        Ok(slots.into_iter().map(|s| s.expect("all filled")).collect())
    }

    fn pixel_requests(&mut self, op: Op, patches: &[Patch]) -> Vec<Request> {
        patches
            .iter()
            .map(|p| {
                let id = self.next_id;
                self.next_id += 1;
                Request::pixels(id, op, p.pixels.height(), p.pixels.width(), p.pixels.as_raw())
            })
            .collect()
    }

    pub fn classify(&mut self, patches: &[Patch]) -> Result<Vec<f64>> {
        let reqs = self.pixel_requests(Op::Classify, patches);
        let tags: Vec<(u32, u32)> = patches.iter().map(|p| (p.grid_x, p.grid_y)).collect();
        let payloads = self.exchange(reqs, &tags)?;
        let mut out = Vec::with_capacity(payloads.len());
        for (payload, tag) in payloads.into_iter().zip(&tags) {
            match payload {
                Payload::Probability(p) if p.is_finite() && (0.0..=1.0).contains(&p) => out.push(p),
                Payload::Probability(p) => {
                    self.kill();
                    return Err(Error::Protocol(format!("probability {p} for patch {tag:?} is not in [0,1]")));
                }
                other => {
                    self.kill();
                    return Err(Error::Protocol(format!("expected a probability for {tag:?}, got {other:?}")));
                }
            }
        }
        Ok(out)
    }

    pub fn features(&mut self, patches: &[Patch], dim: usize) -> Result<Vec<Vec<f64>>> {
        let reqs = self.pixel_requests(Op::Features, patches);
        let tags: Vec<(u32, u32)> = patches.iter().map(|p| (p.grid_x, p.grid_y)).collect();
        let payloads = self.exchange(reqs, &tags)?;
        let mut out = Vec::with_capacity(payloads.len());
        for (payload, tag) in payloads.into_iter().zip(&tags) {
            match payload {
                Payload::Features(f) if f.len() == dim && f.iter().all(|v| v.is_finite()) => out.push(f),
                other => {
                    self.kill();
                    return Err(Error::Protocol(format!(
                        "expected {dim} finite features for {tag:?}, got {other:?}"
                    )));
                }
            }
        }
        Ok(out)
    }

    /// Asks the backend to refine the planar tensor stored at `tensor_path`.
    pub fn refine(&mut self, tensor_path: &Path, width: u32, height: u32) -> Result<ScalarRaster> {
        let id = self.next_id;
        self.next_id += 1;
        let path = tensor_path
            .canonicalize()
            .map_err(|e| Error::io(tensor_path, e))?;
        let req = Request::refine(id, height, width, &path.to_string_lossy());
        let payload = self.exchange(vec![req], &[(0, 0)])?.pop().expect("one response");
        match payload {
            Payload::Raster {
                height: h,
                width: w,
                values,
            } => {
                if (w, h) != (width, height) {
                    self.kill();
                    return Err(Error::Protocol(format!(
                        "refined raster is {w}x{h}, expected {width}x{height}"
                    )));
                }
                if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
                    self.kill();
                    return Err(Error::Protocol("refined raster has values outside [0,1]".into()));
                }
                ScalarRaster::from_vec(w, h, values)
            }
            other => {
                self.kill();
                Err(Error::Protocol(format!("expected a raster, got {other:?}")))
            }
        }
    }
}

impl Drop for ExternalSession {
    fn drop(&mut self) {
        // Closing stdin lets a well-behaved child exit on its own.
        self.to_child.take();
        if let Some(w) = self.writer.take() {
            if self.dead {
                let _ = w.join();
            } else {
                drop(w);
            }
        }
        if !self.dead {
            let deadline = Instant::now() + Duration::from_millis(500);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = self.child.try_wait() {
                    self.dead = true;
                    return;
                }
                std::thread::sleep(Duration::from_millis(5));
            }
        }
        self.kill();
    }
}
