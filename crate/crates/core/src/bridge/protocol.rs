//! Line-delimited JSON wire format spoken with external backends.
//!
//! Requests (one per line):
//!
//! ```text
//! {"id":n,"op":"classify","shape":[224,224,3],"pixels_b64":"..."}
//! {"id":n,"op":"features","shape":[224,224,3],"pixels_b64":"..."}
//! {"id":n,"op":"refine","shape":[H,W,4],"path":"/abs/fused.f32"}
//! ```
//!
//! Responses:
//!
//! ```text
//! {"id":n,"p":x}
//! {"id":n,"f":[...]}
//! {"id":n,"shape":[H,W],"r_b64":"..."}      little-endian f32, row-major
//! {"id":n,"error":"message"}
//! ```

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Classify,
    Features,
    Refine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub id: u64,
    pub op: Op,
    pub shape: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pixels_b64: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub path: Option<String>,
}

impl Request {
    pub fn pixels(id: u64, op: Op, height: u32, width: u32, pixels: &[u8]) -> Self {
        Self {
            id,
            op,
            shape: vec![height, width, 3],
            pixels_b64: Some(B64.encode(pixels)),
            path: None,
        }
    }

    pub fn refine(id: u64, height: u32, width: u32, path: &str) -> Self {
        Self {
            id,
            op: Op::Refine,
            shape: vec![height, width, 4],
            pixels_b64: None,
            path: Some(path.to_string()),
        }
    }

    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("request serialises")
    }

    pub fn decode(line: &str) -> Result<Self> {
        let req: Request = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed request: {e}")))?;
        match req.op {
            Op::Classify | Op::Features if req.pixels_b64.is_none() || req.shape.len() != 3 => {
                Err(Error::Protocol(format!("request {} lacks pixels or shape", req.id)))
            }
            Op::Refine if req.path.is_none() || req.shape.len() != 3 => {
                Err(Error::Protocol(format!("refine request {} lacks path or shape", req.id)))
            }
            _ => Ok(req),
        }
    }

    /// Decoded pixel bytes, checked against `shape`.
    pub fn decode_pixels(&self) -> Result<Vec<u8>> {
        let b64 = self
            .pixels_b64
            .as_deref()
            .ok_or_else(|| Error::Protocol("no pixel payload".into()))?;
        let bytes = B64
            .decode(b64)
            .map_err(|e| Error::Protocol(format!("bad base64: {e}")))?;
        let want: usize = self.shape.iter().map(|&d| d as usize).product();
        if bytes.len() != want {
            return Err(Error::Protocol(format!(
                "payload has {} bytes, shape {:?} needs {want}",
                bytes.len(),
                self.shape
            )));
        }
        Ok(bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Probability(f64),
    Features(Vec<f64>),
    Raster { height: u32, width: u32, values: Vec<f32> },
    Error(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub id: u64,
    pub payload: Payload,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResponse {
    id: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    f: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    shape: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    r_b64: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    error: Option<String>,
}

impl Response {
    pub fn probability(id: u64, p: f64) -> Self {
        Self {
            id,
            payload: Payload::Probability(p),
        }
    }

    pub fn encode(&self) -> String {
        let mut raw = RawResponse {
            id: self.id,
            p: None,
            f: None,
            shape: None,
            r_b64: None,
            error: None,
        };
        match &self.payload {
            Payload::Probability(p) => raw.p = Some(*p),
            Payload::Features(f) => raw.f = Some(f.clone()),
            Payload::Raster { height, width, values } => {
                raw.shape = Some(vec![*height, *width]);
                let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
                raw.r_b64 = Some(B64.encode(bytes));
            }
            Payload::Error(e) => raw.error = Some(e.clone()),
        }
        serde_json::to_string(&raw).expect("response serialises")
    }

    /// Parses one response line. Exactly one payload must be present; values
    /// are checked for finiteness only (range checks belong to the caller).
    pub fn decode(line: &str) -> Result<Self> {
        let raw: RawResponse = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed response: {e}")))?;
        let present = [raw.p.is_some(), raw.f.is_some(), raw.r_b64.is_some(), raw.error.is_some()]
            .iter()
            .filter(|&&b| b)
            .count();
        if present != 1 {
            return Err(Error::Protocol(format!(
                "response {} carries {present} payloads, expected exactly one",
                raw.id
            )));
        }
        let payload = if let Some(p) = raw.p {
            Payload::Probability(p)
        } else if let Some(f) = raw.f {
            Payload::Features(f)
        } else if let Some(b64) = raw.r_b64 {
            let shape = raw
                .shape
                .filter(|s| s.len() == 2)
                .ok_or_else(|| Error::Protocol(format!("raster response {} lacks [H,W] shape", raw.id)))?;
            let bytes = B64
                .decode(b64)
                .map_err(|e| Error::Protocol(format!("bad base64 raster: {e}")))?;
            if bytes.len() != shape[0] as usize * shape[1] as usize * 4 {
                return Err(Error::Protocol(format!(
                    "raster response {} has {} bytes for shape {:?}",
                    raw.id,
                    bytes.len(),
                    shape
                )));
            }
            let values = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Payload::Raster {
                height: shape[0],
                width: shape[1],
                values,
            }
        } else {
            Payload::Error(raw.error.expect("counted above"))
        };
        Ok(Self { id: raw.id, payload })
    }
}
