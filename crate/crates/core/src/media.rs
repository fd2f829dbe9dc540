//! Decoded frames, clips, and the PNG/PPM codecs that feed the sampler.

use std::fs;
use std::io::{self, BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use regex::Regex;

use crate::config::OffsetPolicy;
use crate::error::{Error, Result};
use crate::rng::{stream_id, Domain, KeyedStream};

/// One RGB8 frame, row-major, 3 bytes per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct FrameBuffer {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for FrameBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrameBuffer")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl FrameBuffer {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidFrame(format!("empty frame {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::InvalidFrame(format!(
                "{height}x{width} frame needs {} bytes, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(FrameBuffer {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        assert!(height > 0 && width > 0, "empty frame");
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(height * width * 3)
            .collect();
        FrameBuffer {
            height,
            width,
            data,
        }
    }

    /// Builds a frame from a per-pixel function.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Self {
        assert!(height > 0 && width > 0, "empty frame");
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        FrameBuffer {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[u8] {
        let stride = self.width * 3;
        &self.data[y * stride..(y + 1) * stride]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// An ordered run of equally sized frames.
///
/// Frames are shared, so repeating a frame (short clips, snippets) costs no copy.
#[derive(Debug, Clone)]
pub struct MediaClip {
    frames: Vec<Arc<FrameBuffer>>,
    nominal_fps: Option<f64>,
}

impl MediaClip {
    pub fn new(frames: Vec<FrameBuffer>) -> Result<Self> {
        Self::from_shared(frames.into_iter().map(Arc::new).collect())
    }

    pub fn from_shared(frames: Vec<Arc<FrameBuffer>>) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptyClip)?;
        let dims = first.dims();
        if let Some(odd) = frames.iter().find(|f| f.dims() != dims) {
            return Err(Error::MixedDimensions {
                first: dims,
                other: odd.dims(),
                path: PathBuf::new(),
            });
        }
        Ok(MediaClip {
            frames,
            nominal_fps: None,
        })
    }

    pub fn with_fps(mut self, fps: f64) -> Self {
        self.nominal_fps = Some(fps);
        self
    }

    pub fn nominal_fps(&self) -> Option<f64> {
        self.nominal_fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn frame(&self, i: usize) -> &FrameBuffer {
        &self.frames[i]
    }

    pub fn frames(&self) -> &[Arc<FrameBuffer>] {
        &self.frames
    }
}

/// Either a still image or a clip; the pyramid treats an image as a one-frame clip.
#[derive(Debug, Clone)]
pub enum Media {
    Image(Arc<FrameBuffer>),
    Video(MediaClip),
}

impl Media {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Media::Image(f) => f.dims(),
            Media::Video(c) => c.dims(),
        }
    }

    pub fn is_video(&self) -> bool {
        matches!(self, Media::Video(_))
    }

    pub fn frame_count(&self) -> usize {
        match self {
            Media::Image(_) => 1,
            Media::Video(c) => c.len(),
        }
    }

    pub fn shared_frames(&self) -> Vec<Arc<FrameBuffer>> {
        match self {
            Media::Image(f) => vec![Arc::clone(f)],
            Media::Video(c) => c.frames().to_vec(),
        }
    }
}

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Decodes a PNG or binary PPM file.
/// Wraps an I/O error with the path it concerns.
fn at(path: &Path) -> impl Fn(io::Error) -> Error + '_ {
    move |e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<FrameBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(at(path))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match decode_image(&bytes) {
        Err(Error::UnsupportedFormat(_)) if matches!(ext.as_deref(), Some("png" | "ppm")) => {
            Err(Error::CorruptFile(format!("{}: bad magic", path.display())))
        }
        other => other,
    }
}

/// Decodes in-memory PNG or PPM bytes, dispatching on the magic number.
pub fn decode_image(bytes: &[u8]) -> Result<FrameBuffer> {
    if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' && bytes[1].is_ascii_digit() {
        Err(Error::UnsupportedFormat(format!(
            "netpbm variant P{} (only P6 is supported)",
            bytes[1] as char
        )))
    } else {
        Err(Error::UnsupportedFormat("unrecognized magic".into()))
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<FrameBuffer> {
    let corrupt = |e: png::DecodingError| Error::CorruptFile(format!("png: {e}"));
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(corrupt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::CorruptFile("png: image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(corrupt)?;
    buf.truncate(info.buffer_size());

    let (height, width) = (info.height as usize, info.width as usize);
    let channels = info.color_type.samples();
    let sample_bytes = match info.bit_depth {
        png::BitDepth::Eight => 1,
        png::BitDepth::Sixteen => 2,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "png bit depth {other:?} after expansion"
            )))
        }
    };
    let stride = width * channels * sample_bytes;
    let mut data = Vec::with_capacity(height * width * 3);
    for row in buf.chunks_exact(info.line_size).take(height) {
        for px in row[..stride].chunks_exact(channels * sample_bytes) {
            // 16-bit samples are big-endian: keep the high byte.
            let sample = |c: usize| px[c * sample_bytes];
            match info.color_type {
                png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => {
                    let v = sample(0);
                    data.extend_from_slice(&[v, v, v]);
                }
                png::ColorType::Rgb | png::ColorType::Rgba => {
                    data.extend_from_slice(&[sample(0), sample(1), sample(2)]);
                }
                png::ColorType::Indexed => {
                    return Err(Error::UnsupportedFormat("unexpanded palette png".into()))
                }
            }
        }
    }
    FrameBuffer::new(height, width, data)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<FrameBuffer> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Whitespace and `#` comments may precede each header field.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::CorruptFile("ppm: malformed header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::CorruptFile("ppm: header value out of range".into()))?;
    }
    let [width, height, maxval] = fields;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::CorruptFile(
            "ppm: missing separator before payload".into(),
        ));
    }
    pos += 1;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "ppm maxval {maxval} (only 255)"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::CorruptFile(format!(
            "ppm: empty image {width}x{height}"
        )));
    }
    let need = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::CorruptFile("ppm: dimensions overflow".into()))?;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(Error::CorruptFile(format!(
            "ppm: payload {} bytes, header declares {need}",
            payload.len()
        )));
    }
    FrameBuffer::new(height, width, payload[..need].to_vec())
}

pub fn encode_ppm(frame: &FrameBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.data);
    out
}

pub fn encode_png(frame: &FrameBuffer) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, frame.width as u32, frame.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writer
            .write_image_data(&frame.data)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    Ok(out)
}

/// Binary greyscale PGM (P5), one byte per pixel.
pub fn encode_pgm(height: usize, width: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), height * width, "pgm payload size");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

/// Writes `bytes` to `path` through a temporary sibling, renaming on success.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut builder = tempfile::Builder::new();
    // Temp files default to 0600; give the result ordinary file permissions.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir).map_err(at(dir))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        w.write_all(bytes)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| at(path)(e.error))?;
    Ok(())
}

/// Writes a frame as PNG or PPM depending on the extension (PNG by default).
pub fn save_image(path: impl AsRef<Path>, frame: &FrameBuffer) -> Result<()> {
    let path = path.as_ref();
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("ppm") => encode_ppm(frame),
        _ => encode_png(frame)?,
    };
    write_atomic(path, &bytes)
}

fn frame_name_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"^frame_\d{6}\.(png|ppm)$").expect("static regex"))
}

/// Loads `frame_NNNNNN.{png,ppm}` files from a directory in index order.
///
/// Files that do not match the naming pattern are ignored.
pub fn load_clip(dir: impl AsRef<Path>) -> Result<MediaClip> {
    let dir = dir.as_ref();
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(at(dir))? {
        let entry = entry?;
        let name = entry.file_name();
        if let Some(name) = name.to_str() {
            if frame_name_pattern().is_match(name) {
                names.push(name.to_owned());
            }
        }
    }
    // Zero-padded indices sort lexically.
    names.sort();
    if names.is_empty() {
        return Err(Error::EmptyClip);
    }
    let mut frames: Vec<Arc<FrameBuffer>> = Vec::with_capacity(names.len());
    for name in &names {
        let path = dir.join(name);
        let frame = load_image(&path)?;
        if let Some(first) = frames.first() {
            if first.dims() != frame.dims() {
                return Err(Error::MixedDimensions {
                    first: first.dims(),
                    other: frame.dims(),
                    path,
                });
            }
        }
        frames.push(Arc::new(frame));
    }
    MediaClip::from_shared(frames)
}

/// Writes a clip as `frame_000000.png`, `frame_000001.png`, ... into `dir`.
pub fn save_clip(dir: impl AsRef<Path>, clip: &MediaClip) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, frame) in clip.frames().iter().enumerate() {
        save_image(dir.join(format!("frame_{i:06}.png")), frame)?;
    }
    Ok(())
}

/// Source frame indices picked for `count` output frames out of `len`.
///
/// The clip is cut into `count` equal temporal bins. `Center` takes each
/// bin's midpoint; `Random` draws uniformly inside the bin from a stream
/// keyed by (seed, bin). Clips shorter than `count` repeat cyclically.
pub fn frame_indices(len: usize, count: usize, policy: OffsetPolicy, seed: u64) -> Vec<usize> {
    assert!(len >= 1 && count >= 1, "frame selection needs frames");
    if len < count {
        return (0..count).map(|k| k % len).collect();
    }
    (0..count)
        .map(|k| match policy {
            OffsetPolicy::Center => (2 * k + 1) * len / (2 * count),
            OffsetPolicy::Random => {
                let lo = k * len / count;
                let hi = (k + 1) * len / count;
                let mut rng =
                    KeyedStream::new(seed, stream_id(Domain::FrameJitter, 0, 0, k as u64));
                lo + rng.below((hi - lo) as u64) as usize
            }
        })
        .collect()
}

pub fn select_frames(
    clip: &MediaClip,
    count: usize,
    policy: OffsetPolicy,
    seed: u64,
) -> Result<MediaClip> {
    if count == 0 {
        return Err(Error::InvalidConfig(
            "frame count must be at least 1".into(),
        ));
    }
    let frames = frame_indices(clip.len(), count, policy, seed)
        .into_iter()
        .map(|i| Arc::clone(&clip.frames[i]))
        .collect();
    Ok(MediaClip {
        frames,
        nominal_fps: clip.nominal_fps,
    })
}

/// Cuts the first `snippet_len * n_snippets` frames into contiguous snippets.
pub fn split_snippets(
    clip: &MediaClip,
    snippet_len: usize,
    n_snippets: usize,
) -> Result<Vec<MediaClip>> {
    if snippet_len == 0 || n_snippets == 0 {
        return Err(Error::InvalidConfig("snippets must be non-empty".into()));
    }
    let needed = snippet_len * n_snippets;
    if clip.len() < needed {
        return Err(Error::InsufficientFrames {
            needed,
            available: clip.len(),
        });
    }
    Ok(clip.frames[..needed]
        .chunks_exact(snippet_len)
        .map(|chunk| MediaClip {
            frames: chunk.to_vec(),
            nominal_fps: clip.nominal_fps,
        })
        .collect())
}
