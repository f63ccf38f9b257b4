//! Frame access for image-sequence directories and external decoder pipes.
//!
//! The decoder contract is raw packed RGB24 on stdout: `width * height * 3`
//! bytes per frame, row-major, no headers, frames back to back.

use std::fs;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SourceError};
use crate::policy::VideoMeta;

pub const DEFAULT_DECODER_CMD: &str =
    "ffmpeg -v error -nostdin -i {uri} -f rawvideo -pix_fmt rgb24 -s {width}x{height} -";
pub const DEFAULT_PROBE_CMD: &str = "ffprobe -v error -select_streams v:0 -count_packets \
     -show_entries stream=width,height,avg_frame_rate,nb_read_packets -of json {uri}";
pub const SIDECAR_NAME: &str = "meta.json";

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];
const STDERR_EXCERPT: usize = 512;

pub type Rgb = [u8; 3];

/// One decoded frame, packed RGB24.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u64,
    pub timestamp_seconds: f64,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(index: u64, timestamp_seconds: f64, width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize * 3;
        if width == 0 || height == 0 || pixels.len() != expected {
            return Err(Error::InvalidGeometry(format!(
                "{width}x{height} frame needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Frame {
            index,
            timestamp_seconds,
            width,
            height,
            pixels,
        })
    }

    pub fn solid(index: u64, timestamp_seconds: f64, width: u32, height: u32, color: Rgb) -> Self {
        let pixels = color.repeat(width as usize * height as usize);
        Frame {
            index,
            timestamp_seconds,
            width,
            height,
            pixels,
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn contains_color(&self, color: Rgb) -> bool {
        contains_color(&self.pixels, color)
    }
}

pub fn contains_color(pixels: &[u8], color: Rgb) -> bool {
    pixels.chunks_exact(3).any(|p| p == color)
}

/// Anything that can hand out frames by ordinal.
pub trait FrameReader {
    fn meta(&self) -> &VideoMeta;

    /// Returns frames for strictly increasing `indices`, in order.
    fn read_frames(&mut self, indices: &[u64]) -> Result<Vec<Frame>>;
}

pub fn check_indices(indices: &[u64], frame_count: u64) -> Result<()> {
    if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::Index(format!(
            "indices must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    if let Some(&last) = indices.last() {
        if last >= frame_count {
            return Err(Error::Index(format!(
                "index {last} out of range for {frame_count} frames"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    ImageDirectory,
    DecoderPipe,
}

#[derive(Debug, Clone, Default)]
pub struct ProbeOptions {
    pub fps_override: Option<f64>,
    /// Template with `{uri}`; output is JSON in ffprobe's `streams` layout or
    /// a flat `{frame_count, fps, width, height}` object.
    pub probe_cmd: Option<String>,
    /// Template with `{uri}`, `{width}`, `{height}` placeholders.
    pub decoder_cmd: Option<String>,
}

#[derive(Debug, Clone)]
pub struct FrameSource {
    pub kind: SourceKind,
    pub uri: String,
    pub meta: VideoMeta,
    files: Vec<PathBuf>,
    decoder_cmd: String,
}

#[derive(Debug, Default, Deserialize)]
struct Sidecar {
    fps: Option<f64>,
    width: Option<u32>,
    height: Option<u32>,
}

impl FrameSource {
    /// Probes `uri` and returns a ready source.
    pub fn open(uri: &str, opts: &ProbeOptions) -> Result<Self> {
        let path = Path::new(uri);
        if path.is_dir() {
            open_directory(uri, path, opts)
        } else {
            open_decoder(uri, opts)
        }
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    fn read_directory(&self, indices: &[u64]) -> Result<Vec<Frame>> {
        indices
            .iter()
            .map(|&i| {
                let path = &self.files[i as usize];
                let img = image::open(path)
                    .map_err(|e| SourceError::Unreadable {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })?
                    .to_rgb8();
                if img.width() != self.meta.width || img.height() != self.meta.height {
                    return Err(SourceError::Unreadable {
                        path: path.display().to_string(),
                        message: format!(
                            "frame is {}x{}, expected {}x{}",
                            img.width(),
                            img.height(),
                            self.meta.width,
                            self.meta.height
                        ),
                    }
                    .into());
                }
                Frame::new(i, self.meta.timestamp_of(i), img.width(), img.height(), img.into_raw())
            })
            .collect()
    }

    fn read_pipe(&self, indices: &[u64]) -> Result<Vec<Frame>> {
        let Some(&last) = indices.last() else {
            return Ok(Vec::new());
        };
        let argv = expand_template(&self.decoder_cmd, &self.uri, self.meta.width, self.meta.height);
        let mut child = spawn(&argv, &self.uri)?;
        let stderr = drain_stderr(&mut child);
        let mut stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));

        let stride = self.meta.width as usize * self.meta.height as usize * 3;
        let mut out = Vec::with_capacity(indices.len());
        let mut wanted = indices.iter().copied().peekable();
        let mut buf = vec![0u8; stride];
        for ordinal in 0..=last {
            if let Err(e) = stdout.read_exact(&mut buf) {
                let _ = child.kill();
                let status = child.wait().ok();
                return Err(SourceError::Decoder {
                    uri: self.uri.clone(),
                    message: format!(
                        "short read at frame {ordinal} ({e}); exit status {}",
                        status.map_or("unknown".to_string(), |s| s.to_string())
                    ),
                    stderr: join_stderr(stderr),
                }
                .into());
            }
            if wanted.peek() == Some(&ordinal) {
                wanted.next();
                out.push(Frame::new(
                    ordinal,
                    self.meta.timestamp_of(ordinal),
                    self.meta.width,
                    self.meta.height,
                    buf.clone(),
                )?);
            }
        }
        drop(stdout);
        let _ = child.kill();
        let _ = child.wait();
        let _ = join_stderr(stderr);
        Ok(out)
    }
}

impl FrameReader for FrameSource {
    fn meta(&self) -> &VideoMeta {
        &self.meta
    }

    fn read_frames(&mut self, indices: &[u64]) -> Result<Vec<Frame>> {
        check_indices(indices, self.meta.frame_count)?;
        match self.kind {
            SourceKind::ImageDirectory => self.read_directory(indices),
            SourceKind::DecoderPipe => self.read_pipe(indices),
        }
    }
}

/// Probes metadata only.
pub fn probe(uri: &str, opts: &ProbeOptions) -> Result<VideoMeta> {
    FrameSource::open(uri, opts).map(|s| s.meta)
}

fn open_directory(uri: &str, dir: &Path, opts: &ProbeOptions) -> Result<FrameSource> {
    let unreadable = |e: std::io::Error| SourceError::Unreadable {
        path: uri.to_string(),
        message: e.to_string(),
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(unreadable)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(SourceError::Empty(uri.to_string()).into());
    }

    let sidecar_path = dir.join(SIDECAR_NAME);
    let sidecar: Sidecar = if sidecar_path.is_file() {
        let text = fs::read_to_string(&sidecar_path).map_err(unreadable)?;
        serde_json::from_str(&text).map_err(|e| SourceError::Unreadable {
            path: sidecar_path.display().to_string(),
            message: e.to_string(),
        })?
    } else {
        Sidecar::default()
    };

    let (width, height) = match (sidecar.width, sidecar.height) {
        (Some(w), Some(h)) => (w, h),
        _ => image::image_dimensions(&files[0]).map_err(|e| SourceError::Unreadable {
            path: files[0].display().to_string(),
            message: e.to_string(),
        })?,
    };
    let fps = opts.fps_override.or(sidecar.fps).unwrap_or(1.0);
    let meta = VideoMeta::new(files.len() as u64, fps, width, height);
    meta.validate()?;
    Ok(FrameSource {
        kind: SourceKind::ImageDirectory,
        uri: uri.to_string(),
        meta,
        files,
        decoder_cmd: String::new(),
    })
}

#[derive(Deserialize)]
struct FlatProbe {
    frame_count: u64,
    fps: f64,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct FfprobeOutput {
    streams: Vec<FfprobeStream>,
}

#[derive(Deserialize)]
struct FfprobeStream {
    width: u32,
    height: u32,
    avg_frame_rate: String,
    nb_read_packets: Option<String>,
    nb_frames: Option<String>,
}

fn parse_rate(rate: &str) -> Option<f64> {
    match rate.split_once('/') {
        Some((n, d)) => {
            let (n, d): (f64, f64) = (n.parse().ok()?, d.parse().ok()?);
            (d != 0.0).then(|| n / d)
        }
        None => rate.parse().ok(),
    }
}

pub(crate) fn parse_probe_output(uri: &str, text: &str) -> Result<VideoMeta> {
    let bad = |message: String| SourceError::Decoder {
        uri: uri.to_string(),
        message,
        stderr: String::new(),
    };
    if let Ok(flat) = serde_json::from_str::<FlatProbe>(text) {
        return Ok(VideoMeta::new(flat.frame_count, flat.fps, flat.width, flat.height));
    }
    let out: FfprobeOutput =
        serde_json::from_str(text).map_err(|e| bad(format!("unparsable probe output: {e}")))?;
    let s = out
        .streams
        .first()
        .ok_or_else(|| bad("probe found no video stream".into()))?;
    let fps = parse_rate(&s.avg_frame_rate)
        .filter(|f| *f > 0.0)
        .ok_or_else(|| bad(format!("bad frame rate `{}`", s.avg_frame_rate)))?;
    let frames = s
        .nb_read_packets
        .as_deref()
        .or(s.nb_frames.as_deref())
        .and_then(|n| n.parse::<u64>().ok())
        .ok_or_else(|| bad("probe did not report a frame count".into()))?;
    Ok(VideoMeta::new(frames, fps, s.width, s.height))
}

fn open_decoder(uri: &str, opts: &ProbeOptions) -> Result<FrameSource> {
    let template = opts.probe_cmd.as_deref().unwrap_or(DEFAULT_PROBE_CMD);
    let argv = expand_template(template, uri, 0, 0);
    let output = Command::new(&argv[0])
        .args(&argv[1..])
        .stdin(Stdio::null())
        .output()
        .map_err(|e| SourceError::Decoder {
            uri: uri.to_string(),
            message: format!("cannot run `{}`: {e}", argv[0]),
            stderr: String::new(),
        })?;
    if !output.status.success() {
        return Err(SourceError::Decoder {
            uri: uri.to_string(),
            message: format!("probe exited with {}", output.status),
            stderr: excerpt(&output.stderr),
        }
        .into());
    }
    let mut meta = parse_probe_output(uri, &String::from_utf8_lossy(&output.stdout))?;
    if let Some(fps) = opts.fps_override {
        meta = VideoMeta::new(meta.frame_count, fps, meta.width, meta.height);
    }
    meta.validate()?;
    Ok(FrameSource {
        kind: SourceKind::DecoderPipe,
        uri: uri.to_string(),
        meta,
        files: Vec::new(),
        decoder_cmd: opts
            .decoder_cmd
            .clone()
            .unwrap_or_else(|| DEFAULT_DECODER_CMD.to_string()),
    })
}

/// Splits on whitespace first, then substitutes, so paths with spaces stay one argument.
pub fn expand_template(template: &str, uri: &str, width: u32, height: u32) -> Vec<String> {
    template
        .split_whitespace()
        .map(|tok| {
            tok.replace("{uri}", uri)
                .replace("{width}", &width.to_string())
                .replace("{height}", &height.to_string())
        })
        .collect()
}

fn spawn(argv: &[String], uri: &str) -> Result<Child> {
    if argv.is_empty() {
        return Err(Error::Config("empty decoder command".into()));
    }
    Command::new(&argv[0])
        .args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| {
            SourceError::Decoder {
                uri: uri.to_string(),
                message: format!("cannot run `{}`: {e}", argv[0]),
                stderr: String::new(),
            }
            .into()
        })
}

fn drain_stderr(child: &mut Child) -> Option<JoinHandle<Vec<u8>>> {
    let mut err = child.stderr.take()?;
    Some(std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err.read_to_end(&mut buf);
        buf
    }))
}

fn join_stderr(handle: Option<JoinHandle<Vec<u8>>>) -> String {
    handle
        .and_then(|h| h.join().ok())
        .map(|b| excerpt(&b))
        .unwrap_or_default()
}

fn excerpt(bytes: &[u8]) -> String {
    let start = bytes.len().saturating_sub(STDERR_EXCERPT);
    String::from_utf8_lossy(&bytes[start..]).trim().to_string()
}

/// Writes frames as `frame_NNNNNN.png` plus a `meta.json` sidecar.
pub fn write_image_directory<I>(dir: &Path, frames: I, fps: f64) -> Result<FrameSource>
where
    I: IntoIterator<Item = Frame>,
{
    fs::create_dir_all(dir)?;
    let mut size = None;
    for frame in frames {
        size.get_or_insert((frame.width, frame.height));
        let path = dir.join(format!("frame_{:06}.png", frame.index));
        image::save_buffer(&path, &frame.pixels, frame.width, frame.height, image::ColorType::Rgb8)
            .map_err(|e| SourceError::Unreadable {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
    }
    let (width, height) = size.ok_or_else(|| SourceError::Empty(dir.display().to_string()))?;
    let sidecar = serde_json::json!({ "fps": fps, "width": width, "height": height });
    fs::write(dir.join(SIDECAR_NAME), serde_json::to_vec_pretty(&sidecar)?)?;
    FrameSource::open(&dir.to_string_lossy(), &ProbeOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_expansion_keeps_spaces_in_uri() {
        let argv = expand_template("dec -i {uri} -s {width}x{height} -", "/a b/c.mp4", 64, 48);
        assert_eq!(argv, vec!["dec", "-i", "/a b/c.mp4", "-s", "64x48", "-"]);
    }

    #[test]
    fn probe_output_layouts() {
        let ff = r#"{"streams":[{"width":640,"height":360,"avg_frame_rate":"30000/1001","nb_read_packets":"300"}]}"#;
        let m = parse_probe_output("x", ff).unwrap();
        assert_eq!((m.frame_count, m.width, m.height), (300, 640, 360));
        assert!((m.fps - 29.97).abs() < 0.01);
        let flat = r#"{"frame_count":7200,"fps":2.0,"width":32,"height":32}"#;
        let m = parse_probe_output("x", flat).unwrap();
        assert_eq!(m.duration_seconds, 3600.0);
        assert!(parse_probe_output("x", r#"{"streams":[]}"#).is_err());
    }

    #[test]
    fn index_checks() {
        assert!(check_indices(&[0, 3, 9], 10).is_ok());
        assert!(matches!(check_indices(&[9, 2], 10), Err(Error::Index(_))));
        assert!(matches!(check_indices(&[2, 2], 10), Err(Error::Index(_))));
        assert!(matches!(check_indices(&[10], 10), Err(Error::Index(_))));
    }

    #[test]
    fn frame_length_is_checked() {
        assert!(Frame::new(0, 0.0, 2, 2, vec![0; 12]).is_ok());
        assert!(Frame::new(0, 0.0, 2, 2, vec![0; 11]).is_err());
        assert!(Frame::solid(0, 0.0, 3, 2, [1, 2, 3]).contains_color([1, 2, 3]));
    }
}
