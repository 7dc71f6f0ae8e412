//! Scriptable stand-in for an external backend, used to exercise the wire
//! protocol. The `slideseg stub-backend --mode <mode>` subcommand runs it.
//!
//! Modes:
//! * `const:<p>`     every classify answers `p`; features are `[p; 6]`;
//!   refine returns a constant-`p` raster
//! * `first-pixel`   classify answers `pixels[0] / 255`
//! * `scale:<s>`     refine returns the heatmap channel times `s`;
//!   classify answers `s`
//! * `nan`, `out-of-range`, `bad-json`, `wrong-id`, `error`, `wrong-dims`
//!   produce the corresponding malformed reply
//! * `exit-after:<n>` answers `n` requests then exits
//! * `hang`          reads requests and never answers

use std::io::{self, BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::heatmap::read_f32_le;

use super::protocol::{Op, Payload, Request, Response};

#[derive(Debug, Clone, PartialEq)]
pub enum StubMode {
    Const(f64),
    FirstPixel,
    Scale(f64),
    Nan,
    OutOfRange,
    BadJson,
    WrongId,
    Error,
    WrongDims,
    ExitAfter(usize),
    Hang,
}

impl std::str::FromStr for StubMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad stub mode {s:?}")))
        };
        Ok(match s {
            "first-pixel" => StubMode::FirstPixel,
            "nan" => StubMode::Nan,
            "out-of-range" => StubMode::OutOfRange,
            "bad-json" => StubMode::BadJson,
            "wrong-id" => StubMode::WrongId,
            "error" => StubMode::Error,
            "wrong-dims" => StubMode::WrongDims,
            "hang" => StubMode::Hang,
            _ => {
                if let Some(v) = s.strip_prefix("const:") {
                    StubMode::Const(num(v)?)
                } else if let Some(v) = s.strip_prefix("scale:") {
                    StubMode::Scale(num(v)?)
                } else if let Some(v) = s.strip_prefix("exit-after:") {
                    StubMode::ExitAfter(
                        v.parse()
                            .map_err(|_| Error::Config(format!("bad stub mode {s:?}")))?,
                    )
                } else {
                    return Err(Error::Config(format!("unknown stub mode {s:?}")));
                }
            }
        })
    }
}

fn answer(mode: &StubMode, req: &Request) -> Result<String> {
    let id = req.id;
    let payload = match (mode, req.op) {
        (StubMode::Nan, _) => return Ok(format!(r#"{{"id":{id},"p":NaN}}"#)),
        (StubMode::BadJson, _) => return Ok(format!(r#"{{"id":{id},"p":"#)),
        (StubMode::OutOfRange, _) => Payload::Probability(1.5),
        (StubMode::WrongId, _) => return Ok(Response::probability(id + 1000, 0.5).encode()),
        (StubMode::Error, _) => Payload::Error("stub failure".into()),
        (StubMode::Const(p), Op::Classify) => Payload::Probability(*p),
        (StubMode::Const(p), Op::Features) => Payload::Features(vec![*p; 6]),
        (StubMode::FirstPixel, Op::Classify) => {
            let px = req.decode_pixels()?;
            Payload::Probability(f64::from(px[0]) / 255.0)
        }
        (StubMode::FirstPixel, Op::Features) => {
            let px = req.decode_pixels()?;
            Payload::Features(px.iter().take(6).map(|&b| f64::from(b)).collect())
        }
        (StubMode::Scale(s), Op::Classify) => Payload::Probability(*s),
        (_, Op::Refine) => {
            let (h, w) = (req.shape[0], req.shape[1]);
            let n = h as usize * w as usize;
            let values = match mode {
                StubMode::Const(p) => vec![*p as f32; n],
                StubMode::Scale(s) => {
                    let path = req.path.as_deref().unwrap_or_default();
                    let data = read_f32_le(Path::new(path))?;
                    if data.len() != 4 * n {
                        return Err(Error::Protocol("tensor size does not match shape".into()));
                    }
                    data[3 * n..].iter().map(|v| v * *s as f32).collect()
                }
                StubMode::WrongDims => {
                    return Ok(Response {
                        id,
                        payload: Payload::Raster {
                            height: h,
                            width: w + 1,
                            values: vec![0.0; h as usize * (w as usize + 1)],
                        },
                    }
                    .encode())
                }
                _ => vec![0.0; n],
            };
            Payload::Raster {
                height: h,
                width: w,
                values,
            }
        }
        (StubMode::WrongDims, _) => Payload::Features(vec![0.0; 2]),
        (_, _) => Payload::Probability(0.5),
    };
    Ok(Response { id, payload }.encode())
}

/// Serves requests from `input` until EOF.
pub fn run_stub(mode: &StubMode, input: impl BufRead, mut output: impl Write) -> io::Result<()> {
    let mut served = 0usize;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let StubMode::ExitAfter(n) = mode {
            if served >= *n {
                return Ok(());
            }
        }
        if matches!(mode, StubMode::Hang) {
            continue;
        }
        let reply = match Request::decode(&line).and_then(|req| answer(mode, &req)) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64()))
                    .unwrap_or(0);
                Response {
                    id,
                    payload: Payload::Error(e.to_string()),
                }
                .encode()
            }
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
        served += 1;
    }
    Ok(())
}
