//! Tile downsampling and panel composition.
//!
//! Frames are resized to the plan's tile size with half-pixel-centered
//! bilinear interpolation, then laid out left to right, top to bottom.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framesource::{contains_color, Frame, FrameReader, Rgb};
use crate::policy::{SamplePlan, VideoMeta};

/// Provenance marker for black padding tiles.
pub const PADDING_INDEX: i64 = -1;
pub const MANIFEST_NAME: &str = "manifest.json";
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub struct PanelImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    pub grid_rows: u32,
    pub grid_cols: u32,
    pub tile_width: u32,
    pub tile_height: u32,
    pub source_indices: Vec<i64>,
    pub source_timestamps: Vec<f64>,
    pub panel_ordinal: u64,
}

impl PanelImage {
    pub fn contains_color(&self, color: Rgb) -> bool {
        contains_color(&self.pixels, color)
    }

    /// Cuts the panel back into its tiles, in reading order.
    pub fn slice_tiles(&self) -> Vec<Vec<u8>> {
        let (tw, th) = (self.tile_width as usize, self.tile_height as usize);
        let stride = self.width as usize * 3;
        (0..self.grid_rows as usize * self.grid_cols as usize)
            .map(|k| {
                let (r, c) = (k / self.grid_cols as usize, k % self.grid_cols as usize);
                let mut tile = Vec::with_capacity(tw * th * 3);
                for y in 0..th {
                    let start = (r * th + y) * stride + c * tw * 3;
                    tile.extend_from_slice(&self.pixels[start..start + tw * 3]);
                }
                tile
            })
            .collect()
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_png(&self.pixels, self.width, self.height)
    }
}

pub fn encode_png(pixels: &[u8], width: u32, height: u32) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    image::write_buffer_with_format(
        &mut out,
        pixels,
        width,
        height,
        image::ColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::InvalidGeometry(format!("png encode failed: {e}")))?;
    Ok(out.into_inner())
}

/// Bilinear resize with half-pixel centers; rounds half away from zero.
pub fn downsample_tile(frame: &Frame, tile_width: u32, tile_height: u32) -> Result<Frame> {
    if tile_width == 0 || tile_height == 0 {
        return Err(Error::InvalidGeometry(format!(
            "tile size {tile_width}x{tile_height} must be non-zero"
        )));
    }
    if (tile_width, tile_height) == (frame.width, frame.height) {
        return Ok(frame.clone());
    }
    let xs = axis_weights(frame.width, tile_width);
    let ys = axis_weights(frame.height, tile_height);
    let src_stride = frame.width as usize * 3;
    let mut pixels = Vec::with_capacity(tile_width as usize * tile_height as usize * 3);
    for &(y0, y1, fy) in &ys {
        let row0 = &frame.pixels[y0 * src_stride..(y0 + 1) * src_stride];
        let row1 = &frame.pixels[y1 * src_stride..(y1 + 1) * src_stride];
        for &(x0, x1, fx) in &xs {
            for ch in 0..3 {
                let p00 = f64::from(row0[x0 * 3 + ch]);
                let p01 = f64::from(row0[x1 * 3 + ch]);
                let p10 = f64::from(row1[x0 * 3 + ch]);
                let p11 = f64::from(row1[x1 * 3 + ch]);
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                let v = top + (bottom - top) * fy;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(Frame {
        index: frame.index,
        timestamp_seconds: frame.timestamp_seconds,
        width: tile_width,
        height: tile_height,
        pixels,
    })
}

/// Source neighbours and fractional weight for each destination coordinate.
fn axis_weights(src: u32, dst: u32) -> Vec<(usize, usize, f64)> {
    let scale = f64::from(src) / f64::from(dst);
    let max = f64::from(src - 1);
    (0..dst)
        .map(|d| {
            let s = ((f64::from(d) + 0.5) * scale - 0.5).clamp(0.0, max);
            let s0 = s.floor();
            let i0 = s0 as usize;
            let i1 = (i0 + 1).min(src as usize - 1);
            (i0, i1, s - s0)
        })
        .collect()
}

/// Lays tiles out row-major; tile `k` lands at row `k / cols`, column `k % cols`.
pub fn compose_panel(tiles: &[Frame], grid_rows: u32, grid_cols: u32) -> Result<PanelImage> {
    let cells = grid_rows as usize * grid_cols as usize;
    if cells == 0 || tiles.len() != cells {
        return Err(Error::InvalidGeometry(format!(
            "{} tiles do not fill a {grid_rows}x{grid_cols} grid",
            tiles.len()
        )));
    }
    let (tw, th) = (tiles[0].width, tiles[0].height);
    if let Some(t) = tiles.iter().find(|t| (t.width, t.height) != (tw, th)) {
        return Err(Error::InvalidGeometry(format!(
            "tile {}x{} differs from {tw}x{th}",
            t.width, t.height
        )));
    }
    let (width, height) = (grid_cols * tw, grid_rows * th);
    let stride = width as usize * 3;
    let row_bytes = tw as usize * 3;
    let mut pixels = vec![0u8; stride * height as usize];
    for (k, tile) in tiles.iter().enumerate() {
        let (r, c) = (k / grid_cols as usize, k % grid_cols as usize);
        for y in 0..th as usize {
            let dst = (r * th as usize + y) * stride + c * row_bytes;
            pixels[dst..dst + row_bytes]
                .copy_from_slice(&tile.pixels[y * row_bytes..(y + 1) * row_bytes]);
        }
    }
    Ok(PanelImage {
        width,
        height,
        pixels,
        grid_rows,
        grid_cols,
        tile_width: tw,
        tile_height: th,
        source_indices: tiles.iter().map(|t| t.index as i64).collect(),
        source_timestamps: tiles.iter().map(|t| t.timestamp_seconds).collect(),
        panel_ordinal: 0,
    })
}

/// Builds panel `ordinal` of `plan` from its (at most `rows * cols`) frames,
/// padding with black tiles when the chunk is short.
pub fn compose_chunk(chunk: &[Frame], plan: &SamplePlan, ordinal: u64) -> Result<PanelImage> {
    let cells = plan.grid_rows as usize * plan.grid_cols as usize;
    if chunk.is_empty() || chunk.len() > cells {
        return Err(Error::PlanViolation(format!(
            "chunk of {} frames for a {} grid",
            chunk.len(),
            plan.grid()
        )));
    }
    let mut tiles = chunk
        .iter()
        .map(|f| downsample_tile(f, plan.tile_width, plan.tile_height))
        .collect::<Result<Vec<_>>>()?;
    let real = tiles.len();
    tiles.resize_with(cells, || {
        Frame::solid(0, 0.0, plan.tile_width, plan.tile_height, [0, 0, 0])
    });
    let mut panel = compose_panel(&tiles, plan.grid_rows, plan.grid_cols)?;
    for k in real..cells {
        panel.source_indices[k] = PADDING_INDEX;
        panel.source_timestamps[k] = -1.0;
    }
    panel.panel_ordinal = ordinal;
    Ok(panel)
}

/// Turns the sampled frames of one video into the plan's panel sequence.
pub fn panelize_sequence(frames: &[Frame], plan: &SamplePlan) -> Result<Vec<PanelImage>> {
    if frames.len() as u64 != plan.frames_to_sample {
        return Err(Error::PlanViolation(format!(
            "plan expects {} frames, got {}",
            plan.frames_to_sample,
            frames.len()
        )));
    }
    if frames.windows(2).any(|w| w[0].index >= w[1].index) {
        return Err(Error::PlanViolation("frames are not sorted by index".into()));
    }
    let cells = plan.grid().cells() as usize;
    let panels = frames
        .par_chunks(cells)
        .enumerate()
        .map(|(i, chunk)| compose_chunk(chunk, plan, i as u64))
        .collect::<Result<Vec<_>>>()?;
    if panels.len() as u64 != plan.panel_count {
        return Err(Error::PlanViolation(format!(
            "produced {} panels, plan says {}",
            panels.len(),
            plan.panel_count
        )));
    }
    Ok(panels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    pub output_path: String,
    pub panel_ordinal: u64,
    pub source_indices: Vec<i64>,
    pub source_timestamps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub toolkit_version: String,
    pub video_uri: String,
    pub meta: VideoMeta,
    pub plan: SamplePlan,
    /// Fully resolved run configuration.
    pub config: serde_json::Value,
    pub panels: Vec<PanelRecord>,
}

impl Manifest {
    pub fn new(
        video_uri: &str,
        meta: &VideoMeta,
        plan: &SamplePlan,
        config: serde_json::Value,
        panels: &[PanelImage],
        output_paths: &[String],
    ) -> Result<Self> {
        if panels.len() != output_paths.len() {
            return Err(Error::PlanViolation(
                "one output path is needed per panel".into(),
            ));
        }
        let manifest = Manifest {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            video_uri: video_uri.to_string(),
            meta: meta.clone(),
            plan: plan.clone(),
            config,
            panels: panels
                .iter()
                .zip(output_paths)
                .map(|(p, path)| PanelRecord {
                    output_path: path.clone(),
                    panel_ordinal: p.panel_ordinal,
                    source_indices: p.source_indices.clone(),
                    source_timestamps: p.source_timestamps.clone(),
                })
                .collect(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Checks provenance: real indices flatten to the plan's indices and
    /// padding only occurs at the tail of the final panel.
    pub fn validate(&self) -> Result<()> {
        let flat: Vec<i64> = self
            .panels
            .iter()
            .flat_map(|p| p.source_indices.iter().copied())
            .collect();
        let real: Vec<u64> = flat
            .iter()
            .filter(|&&i| i != PADDING_INDEX)
            .map(|&i| i as u64)
            .collect();
        if real != self.plan.frame_indices {
            return Err(Error::PlanViolation(
                "panel provenance does not match the sampled indices".into(),
            ));
        }
        if let Some(first_pad) = flat.iter().position(|&i| i == PADDING_INDEX) {
            let cells = self.plan.grid().cells() as usize;
            if flat[first_pad..].iter().any(|&i| i != PADDING_INDEX)
                || first_pad < flat.len().saturating_sub(cells)
            {
                return Err(Error::PlanViolation(
                    "padding tiles outside the final panel".into(),
                ));
            }
        }
        if self
            .panels
            .iter()
            .enumerate()
            .any(|(i, p)| p.panel_ordinal != i as u64)
        {
            return Err(Error::PlanViolation("panel ordinals out of sequence".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(&fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Panel image paths resolved against the manifest's directory, in ordinal order.
    pub fn image_paths(&self, manifest_dir: &Path) -> Vec<PathBuf> {
        self.panels
            .iter()
            .map(|p| manifest_dir.join(&p.output_path))
            .collect()
    }
}

/// Reads the plan's frames, composes panels, writes `panel_NNNN.png` and
/// `manifest.json` into `out_dir`.
pub fn panelize_to_dir<R: FrameReader>(
    source: &mut R,
    video_uri: &str,
    plan: &SamplePlan,
    config: serde_json::Value,
    out_dir: &Path,
) -> Result<Manifest> {
    let meta = source.meta().clone();
    let frames = source.read_frames(&plan.frame_indices)?;
    let panels = panelize_sequence(&frames, plan)?;
    fs::create_dir_all(out_dir)?;
    let names: Vec<String> = panels
        .iter()
        .map(|p| format!("panel_{:04}.png", p.panel_ordinal))
        .collect();
    panels
        .par_iter()
        .zip(&names)
        .try_for_each(|(p, name)| -> Result<()> {
            fs::write(out_dir.join(name), p.encode_png()?)?;
            Ok(())
        })?;
    let manifest = Manifest::new(video_uri, &meta, plan, config, &panels, &names)?;
    manifest.save(&out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}
