//! Retention maps of a finished run as CSV rows or an SVG picture.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pipeline::PipelineRun;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    Csv,
    Svg,
}

impl FromStr for MapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "svg" => Ok(Self::Svg),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Video,
    Audio,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Audio => "audio",
        }
    }
}

/// One input token's fate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapRow {
    pub chunk_id: usize,
    pub modality: Modality,
    /// Index in the input stream (video: `frame * patches + patch`).
    pub position: usize,
    pub retained: bool,
    /// Row of the compressed stream that carries this token, if any.
    pub representative_id: Option<usize>,
}

/// Every input token, chunk by chunk, video before audio.
pub fn retention_rows(run: &PipelineRun) -> Vec<MapRow> {
    let p = run.grid.0 * run.grid.1;
    let mut rows = Vec::new();
    let mut v_off = 0;
    let mut a_off = 0;
    for (id, c) in run.chunks.iter().enumerate() {
        let f0 = c.chunk.f_lo - 1;
        for (i, (&kept, &owner)) in c
            .video
            .token_mask
            .iter()
            .zip(&c.video.patch_owner)
            .enumerate()
        {
            rows.push(MapRow {
                chunk_id: id,
                modality: Modality::Video,
                position: f0 * p + i,
                retained: kept,
                representative_id: Some(v_off + owner),
            });
        }
        let t0 = c.chunk.t_lo - 1;
        for (i, rep) in c.audio.representative().into_iter().enumerate() {
            rows.push(MapRow {
                chunk_id: id,
                modality: Modality::Audio,
                position: t0 + i,
                retained: c.audio.retained_mask[i],
                representative_id: rep.map(|r| a_off + r),
            });
        }
        v_off += c.video.survivor_count();
        a_off += c.audio.retained.len();
    }
    rows
}

/// Header plus one line per input token; dropped tokens have an empty
/// representative.
pub fn retention_csv(run: &PipelineRun) -> String {
    let mut out = String::from("chunk_id,modality,position,retained,representative_id\n");
    for r in retention_rows(run) {
        let rep = r
            .representative_id
            .map(|x| x.to_string())
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            r.chunk_id,
            r.modality.as_str(),
            r.position,
            u8::from(r.retained),
            rep
        )
        .expect("write to string");
    }
    out
}

const CELL: usize = 8;
const GAP: usize = 6;
const KEPT: &str = "#3b6ea5";
const PRUNED: &str = "#c8c8c8";
const AXIS: &str = "#e8e8e8";

/// Per chunk, one patch grid per frame (pruned cells gray) above an audio
/// timeline with retained tokens marked and retained anchors ticked.
pub fn retention_svg(run: &PipelineRun) -> String {
    let (gh, gw) = run.grid;
    let frame_w = gw * CELL;
    let frame_h = gh * CELL;
    let band_h = frame_h + 40;
    let max_frames = run
        .chunks
        .iter()
        .map(|c| c.chunk.num_frames())
        .max()
        .unwrap_or(0);
    let width = (GAP + max_frames * (frame_w + GAP)).max(400);
    let height = GAP + run.chunks.len() * (band_h + GAP);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    )
    .unwrap();
    for (id, c) in run.chunks.iter().enumerate() {
        let y0 = GAP + id * (band_h + GAP);
        writeln!(s, r#"<g id="chunk-{id}">"#).unwrap();
        let p = gh * gw;
        for f in 0..c.chunk.num_frames() {
            let x0 = GAP + f * (frame_w + GAP);
            for r in 0..gh {
                for col in 0..gw {
                    let kept = c.video.token_mask[f * p + r * gw + col];
                    writeln!(
                        s,
                        r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{}" stroke="white" stroke-width="0.5"/>"#,
                        x0 + col * CELL,
                        y0 + r * CELL,
                        if kept { KEPT } else { PRUNED }
                    )
                    .unwrap();
                }
            }
        }
        let ty = y0 + frame_h + 20;
        let span = (width - 2 * GAP) as f64;
        let n = c.audio.num_tokens().max(1) as f64;
        writeln!(
            s,
            r#"<line x1="{GAP}" y1="{ty}" x2="{}" y2="{ty}" stroke="{AXIS}" stroke-width="4"/>"#,
            width - GAP
        )
        .unwrap();
        for &t in &c.audio.retained {
            let x = GAP as f64 + span * (t as f64 + 0.5) / n;
            writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{ty}" x2="{x:.2}" y2="{}" stroke="{KEPT}" stroke-width="1"/>"#,
                ty + 4
            )
            .unwrap();
        }
        for &h in &c.audio.anchors {
            let x = GAP as f64 + span * (h as f64 + 0.5) / n;
            writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black" stroke-width="1.5"/>"#,
                ty - 8,
                ty
            )
            .unwrap();
        }
        writeln!(s, "</g>").unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub fn export_retention_map(
    run: &PipelineRun,
    path: impl AsRef<Path>,
    format: MapFormat,
) -> Result<()> {
    let text = match format {
        MapFormat::Csv => retention_csv(run),
        MapFormat::Svg => retention_svg(run),
    };
    std::fs::write(path, text)?;
    Ok(())
}
