//! Patch classifier / feature extractor backends.
//!
//! Two kinds exist: the built-in [`heuristic`] model and an external process
//! spoken to over the line-delimited JSON [`protocol`]. Trained networks are
//! attached only through the latter.

pub mod external;
pub mod heuristic;
pub mod protocol;
pub mod stub;

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RgbBlock;

pub use external::ExternalSession;

pub const PATCH_SIDE: u32 = 224;
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackendKind {
    Heuristic,
    ExternalProcess,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    pub batch_size: usize,
    /// 0 when the backend cannot emit features.
    pub feature_dim: usize,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

impl BackendDescriptor {
    pub fn heuristic() -> Self {
        Self {
            kind: BackendKind::Heuristic,
            command: None,
            batch_size: 64,
            feature_dim: heuristic::FEATURE_DIM,
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }

    pub fn external(command: Vec<String>) -> Self {
        Self {
            kind: BackendKind::ExternalProcess,
            command: Some(command),
            batch_size: 32,
            feature_dim: 0,
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }

    /// Parses the `heuristic` / `exec:<cmd args...>` selector.
    pub fn parse(selector: &str) -> Result<Self> {
        if selector == "heuristic" {
            return Ok(Self::heuristic());
        }
        if let Some(cmd) = selector.strip_prefix("exec:") {
            let parts: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            let d = Self::external(parts);
            d.validate()?;
            return Ok(d);
        }
        Err(Error::Config(format!(
            "unknown backend {selector:?}; expected heuristic or exec:<cmd>"
        )))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.kind == BackendKind::ExternalProcess
            && self.command.as_ref().map_or(true, |c| c.is_empty())
        {
            return Err(Error::Config("external backend needs a command".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn spawn(&self) -> Result<ExternalSession> {
        self.validate()?;
        let cmd = self
            .command
            .as_ref()
            .ok_or_else(|| Error::Config("external backend needs a command".into()))?;
        ExternalSession::spawn(cmd, self.timeout())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchProbability {
    pub grid_x: u32,
    pub grid_y: u32,
    pub p_tumor: f64,
}

/// A patch headed for a backend, tagged with its lattice position.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub grid_x: u32,
    pub grid_y: u32,
    pub pixels: RgbBlock,
}

fn check_shapes(patches: &[Patch]) -> Result<()> {
    for p in patches {
        if p.pixels.dimensions() != (PATCH_SIDE, PATCH_SIDE) {
            return Err(Error::Size(format!(
                "patch ({},{}) is {:?}, expected {PATCH_SIDE}x{PATCH_SIDE}",
                p.grid_x,
                p.grid_y,
                p.pixels.dimensions()
            )));
        }
    }
    Ok(())
}

/// One probability per patch, in input order.
pub fn classify_batch(backend: &BackendDescriptor, patches: &[Patch]) -> Result<Vec<PatchProbability>> {
    backend.validate()?;
    check_shapes(patches)?;
    if patches.is_empty() {
        return Ok(Vec::new());
    }
    let probs: Vec<f64> = match backend.kind {
        BackendKind::Heuristic => patches
            .par_iter()
            .map(|p| heuristic::classify_patch(&p.pixels))
            .collect(),
        BackendKind::ExternalProcess => {
            let mut session = backend.spawn()?;
            let mut out = Vec::with_capacity(patches.len());
            for (i, chunk) in patches.chunks(backend.batch_size).enumerate() {
                match session.classify(chunk) {
                    Ok(p) => out.extend(p),
                    Err(Error::BackendFailure { reason, mut unprocessed }) => {
                        let done = (i + 1) * backend.batch_size;
                        unprocessed.extend(patches.iter().skip(done).map(|p| (p.grid_x, p.grid_y)));
                        return Err(Error::BackendFailure { reason, unprocessed });
                    }
                    Err(e) => return Err(e),
                }
            }
            out
        }
    };
    Ok(patches
        .iter()
        .zip(probs)
        .map(|(p, prob)| PatchProbability {
            grid_x: p.grid_x,
            grid_y: p.grid_y,
            p_tumor: prob,
        })
        .collect())
}

/// One `feature_dim`-long vector per patch, in input order.
pub fn extract_features(backend: &BackendDescriptor, patches: &[Patch]) -> Result<Vec<Vec<f64>>> {
    backend.validate()?;
    if backend.feature_dim == 0 {
        return Err(Error::Capability("backend does not emit features".into()));
    }
    check_shapes(patches)?;
    if patches.is_empty() {
        return Ok(Vec::new());
    }
    match backend.kind {
        BackendKind::Heuristic => {
            if backend.feature_dim != heuristic::FEATURE_DIM {
                return Err(Error::Capability(format!(
                    "heuristic backend emits {} features, descriptor says {}",
                    heuristic::FEATURE_DIM,
                    backend.feature_dim
                )));
            }
            Ok(patches
                .par_iter()
                .map(|p| heuristic::patch_features(&p.pixels).to_vec())
                .collect())
        }
        BackendKind::ExternalProcess => {
            let mut session = backend.spawn()?;
            let mut out = Vec::with_capacity(patches.len());
            for chunk in patches.chunks(backend.batch_size) {
                out.extend(session.features(chunk, backend.feature_dim)?);
            }
            Ok(out)
        }
    }
}
