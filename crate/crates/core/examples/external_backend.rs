//! Runs a classifier in a separate process over the line-delimited JSON
//! protocol. The example re-executes itself with `--serve` to play the
//! backend, so the pattern carries over to a model served from any language.
//!
//! cargo run --release --example external_backend

use std::io::{BufRead, Write};

use slideseg::bridge::heuristic::classify_patch;
use slideseg::bridge::protocol::{Op, Payload, Request, Response};
use slideseg::bridge::{classify_batch, BackendDescriptor, Patch, PATCH_SIDE};
use slideseg::phantom::{generate_phantom, PhantomSpec};
use slideseg::tissue::{build_patch_grid, compute_tissue_mask, extract_patch, DEFAULT_PATCH_SIZE};
use slideseg::RgbBlock;

/// Backend side: answer each request with the heuristic score.
fn serve() -> Result<(), Box<dyn std::error::Error>> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in std::io::stdin().lock().lines() {
        let line = line?;
        let reply = match Request::decode(&line) {
            Ok(req) if req.op == Op::Classify => {
                let (h, w) = (req.shape[0], req.shape[1]);
                let payload = req
                    .decode_pixels()
                    .and_then(|px| RgbBlock::from_raw(w, h, px).ok_or_else(|| slideseg::Error::Protocol("shape".into())))
                    .map(|img| Payload::Probability(classify_patch(&img)))
                    .unwrap_or_else(|e| Payload::Error(e.to_string()));
                Response { id: req.id, payload }
            }
            Ok(req) => Response {
                id: req.id,
                payload: Payload::Error("only classify is supported".into()),
            },
            Err(e) => Response {
                id: 0,
                payload: Payload::Error(e.to_string()),
            },
        };
        writeln!(out, "{}", reply.encode())?;
        out.flush()?;
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    if std::env::args().any(|a| a == "--serve") {
        return serve();
    }
    let ph = generate_phantom(&PhantomSpec::with_seed(1).scaled_to(2048))?;
    let slide = &ph.slide;
    let tissue = compute_tissue_mask(slide, slide.level_nearest_factor(32.0), 0.02, 0.95)?;
    let grid = build_patch_grid(slide, 0, DEFAULT_PATCH_SIZE, &tissue, None)?;
    let patches = grid
        .tissue_records()
        .map(|r| {
            Ok(Patch {
                grid_x: r.grid_x,
                grid_y: r.grid_y,
                pixels: extract_patch(slide, &grid, r, PATCH_SIDE)?,
            })
        })
        .collect::<slideseg::Result<Vec<_>>>()?;

    let exe = std::env::current_exe()?.to_string_lossy().into_owned();
    let external = BackendDescriptor::external(vec![exe, "--serve".into()]);
    let remote = classify_batch(&external, &patches)?;
    let local = classify_batch(&BackendDescriptor::heuristic(), &patches)?;
    let worst = remote
        .iter()
        .zip(&local)
        .map(|(a, b)| (a.p_tumor - b.p_tumor).abs())
        .fold(0.0, f64::max);
    println!("{} patches through the external process, max deviation from in-process {worst:.2e}", remote.len());
    Ok(())
}
