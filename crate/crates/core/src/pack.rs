//! Binary container for sampled tensors, previews, and provenance audits.
//!
//! Container layout, all integers little-endian:
//!
//! ```text
//! magic        4  b"SAMA"
//! version      u16 = 1
//! kind         u8  1 = image, 2 = video
//! H, W, T      u32 x 3
//! n_scales     u8
//! spatial_mask u8  0 none, 1 window, 2 patch
//! temporal     u8  0 none, 1 progressive, 2 choppy, 3 mixed
//! seed         u64
//! schedule_len u16, then schedule_len bytes (scale id per frame pair)
//! flags        u8  bit 0 = provenance present
//! payload      T * H * W * 3 bytes RGB8, frame-major then row-major
//! provenance   per pixel: u8 scale, u16 src_frame, u32 src_y, u32 src_x
//! ```

use std::path::Path;

use crate::config::{SpatialMaskKind, TemporalMaskKind};
use crate::error::{Error, Result};
use crate::media::{write_atomic, FrameBuffer};
use crate::pyramid::PyramidLevel;
use crate::tensor::{ProvenanceEntry, SampleMeta, SampledTensor, TensorKind};

pub const MAGIC: [u8; 4] = *b"SAMA";
pub const VERSION: u16 = 1;
pub const FLAG_PROVENANCE: u8 = 1;
pub const PROVENANCE_ENTRY_BYTES: usize = 11;

/// Header size in bytes for a schedule of `schedule_len` entries.
pub fn header_len(schedule_len: usize) -> usize {
    4 + 2 + 1 + 4 * 3 + 1 + 1 + 1 + 8 + 2 + schedule_len + 1
}

pub fn encode_container(t: &SampledTensor) -> Result<Vec<u8>> {
    let dim = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::DimMismatch(format!("{what} {v} exceeds u32")))
    };
    let schedule_len = u16::try_from(t.meta.schedule.len())
        .map_err(|_| Error::DimMismatch("schedule longer than 65535".into()))?;
    let pixels = t.frames * t.pixels_per_frame();
    let prov_bytes = t
        .provenance
        .as_ref()
        .map_or(0, |_| pixels * PROVENANCE_ENTRY_BYTES);
    let mut out = Vec::with_capacity(header_len(t.meta.schedule.len()) + t.data.len() + prov_bytes);

    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(t.kind.code());
    out.extend_from_slice(&dim(t.height, "height")?.to_le_bytes());
    out.extend_from_slice(&dim(t.width, "width")?.to_le_bytes());
    out.extend_from_slice(&dim(t.frames, "frames")?.to_le_bytes());
    out.push(t.meta.n_scales);
    out.push(t.meta.spatial_mask.code());
    out.push(t.meta.temporal_mask.code());
    out.extend_from_slice(&t.meta.seed.to_le_bytes());
    out.extend_from_slice(&schedule_len.to_le_bytes());
    out.extend_from_slice(&t.meta.schedule);
    out.push(if t.provenance.is_some() {
        FLAG_PROVENANCE
    } else {
        0
    });
    out.extend_from_slice(&t.data);
    if let Some(prov) = &t.provenance {
        for p in prov {
            out.push(p.scale_id);
            out.extend_from_slice(&p.src_frame.to_le_bytes());
            out.extend_from_slice(&p.src_y.to_le_bytes());
            out.extend_from_slice(&p.src_x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes through a temporary file so a failed write leaves no partial output.
pub fn write_container(t: &SampledTensor, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_container(t)?)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<SampledTensor> {
    decode_container(&std::fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptFile(format!("truncated {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }
}

pub fn decode_container(bytes: &[u8]) -> Result<SampledTensor> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r
        .array("magic")
        .map_err(|_| Error::UnsupportedFormat("not a SAMA container".into()))?;
    if magic != MAGIC {
        return Err(Error::UnsupportedFormat("not a SAMA container".into()));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedFormat(format!(
            "container version {version}"
        )));
    }
    let kind_code = r.u8("kind")?;
    let kind = TensorKind::from_code(kind_code)
        .ok_or_else(|| Error::CorruptFile(format!("unknown tensor kind {kind_code}")))?;
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let frames = r.u32("frames")? as usize;
    if height == 0 || width == 0 || frames == 0 {
        return Err(Error::CorruptFile(format!(
            "empty dims {frames}x{height}x{width}"
        )));
    }
    let n_scales = r.u8("n_scales")?;
    let spatial_code = r.u8("spatial mask")?;
    let spatial_mask = SpatialMaskKind::from_code(spatial_code)
        .ok_or_else(|| Error::CorruptFile(format!("unknown spatial mask {spatial_code}")))?;
    let temporal_code = r.u8("temporal mask")?;
    let temporal_mask = TemporalMaskKind::from_code(temporal_code)
        .ok_or_else(|| Error::CorruptFile(format!("unknown temporal mask {temporal_code}")))?;
    let seed = r.u64("seed")?;
    let schedule_len = r.u16("schedule length")? as usize;
    let schedule = r.take(schedule_len, "schedule")?.to_vec();
    let flags = r.u8("flags")?;
    if flags & !FLAG_PROVENANCE != 0 {
        return Err(Error::CorruptFile(format!("unknown flags {flags:#04x}")));
    }

    let pixels = frames
        .checked_mul(height)
        .and_then(|p| p.checked_mul(width))
        .ok_or_else(|| Error::CorruptFile("dimensions overflow".into()))?;
    let data_len = pixels
        .checked_mul(3)
        .ok_or_else(|| Error::CorruptFile("dimensions overflow".into()))?;
    let data = r.take(data_len, "payload")?.to_vec();
    let provenance = if flags & FLAG_PROVENANCE != 0 {
        let raw = r.take(
            pixels
                .checked_mul(PROVENANCE_ENTRY_BYTES)
                .ok_or_else(|| Error::CorruptFile("dimensions overflow".into()))?,
            "provenance",
        )?;
        let entries: Vec<ProvenanceEntry> = raw
            .chunks_exact(PROVENANCE_ENTRY_BYTES)
            .map(|c| ProvenanceEntry {
                scale_id: c[0],
                src_frame: u16::from_le_bytes([c[1], c[2]]),
                src_y: u32::from_le_bytes([c[3], c[4], c[5], c[6]]),
                src_x: u32::from_le_bytes([c[7], c[8], c[9], c[10]]),
            })
            .collect();
        if let Some(bad) = entries.iter().find(|e| e.scale_id >= n_scales) {
            return Err(Error::CorruptFile(format!(
                "provenance scale {} outside {n_scales} scales",
                bad.scale_id
            )));
        }
        Some(entries)
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::CorruptFile(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let meta = SampleMeta {
        n_scales,
        spatial_mask,
        temporal_mask,
        seed,
        schedule,
    };
    SampledTensor::new(kind, height, width, frames, data, provenance, meta)
        .map_err(|e| Error::CorruptFile(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreviewStyle {
    Plain,
    Tinted,
    Bordered,
}

impl std::str::FromStr for PreviewStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(PreviewStyle::Plain),
            "tinted" => Ok(PreviewStyle::Tinted),
            "bordered" => Ok(PreviewStyle::Bordered),
            other => Err(Error::InvalidConfig(format!(
                "unknown preview style `{other}`"
            ))),
        }
    }
}

/// Display color for a scale: hues spread evenly, scale 0 red.
pub fn scale_color(scale: u8, n_scales: u8) -> [u8; 3] {
    let n = n_scales.max(1) as f64;
    let hue = (scale as f64 / n) * 6.0;
    let sector = hue.floor() as u32 % 6;
    let f = hue - hue.floor();
    let (up, down) = ((f * 255.0).round() as u8, ((1.0 - f) * 255.0).round() as u8);
    match sector {
        0 => [255, up, 0],
        1 => [down, 255, 0],
        2 => [0, 255, up],
        3 => [0, down, 255],
        4 => [up, 0, 255],
        _ => [255, 0, down],
    }
}

/// True where the pixel does not continue its left or upper neighbor in the source.
fn starts_region(prov: &[ProvenanceEntry], w: usize, y: usize, x: usize) -> bool {
    let p = prov[y * w + x];
    let left = x > 0 && {
        let l = prov[y * w + x - 1];
        l.scale_id == p.scale_id
            && l.src_frame == p.src_frame
            && l.src_y == p.src_y
            && l.src_x + 1 == p.src_x
    };
    let up = y > 0 && {
        let u = prov[(y - 1) * w + x];
        u.scale_id == p.scale_id
            && u.src_frame == p.src_frame
            && u.src_x == p.src_x
            && u.src_y + 1 == p.src_y
    };
    !(left && up)
}

/// One frame per tensor frame.
///
/// `Tinted` blends each pixel 25% toward its scale color. `Bordered` draws a
/// 1px outline, in the scale color, around every contiguous fragment region
/// (where the source coordinates jump) and around the frame edge.
pub fn render_preview(t: &SampledTensor, style: PreviewStyle) -> Result<Vec<FrameBuffer>> {
    if style != PreviewStyle::Plain && t.provenance.is_none() {
        return Err(Error::MissingProvenance);
    }
    let (h, w) = (t.height, t.width);
    let n_scales = t.meta.n_scales;
    (0..t.frames)
        .map(|f| {
            let mut frame = t.frame(f);
            let Some(all) = &t.provenance else {
                return Ok(frame);
            };
            let prov = &all[f * h * w..(f + 1) * h * w];
            match style {
                PreviewStyle::Plain => {}
                PreviewStyle::Tinted => {
                    for (px, p) in frame.data_mut().chunks_exact_mut(3).zip(prov) {
                        let color = scale_color(p.scale_id, n_scales);
                        for c in 0..3 {
                            px[c] = ((3 * px[c] as u16 + color[c] as u16 + 2) / 4) as u8;
                        }
                    }
                }
                PreviewStyle::Bordered => {
                    for y in 0..h {
                        for x in 0..w {
                            let edge = y == h - 1 || x == w - 1;
                            if edge || starts_region(prov, w, y, x) {
                                let color = scale_color(prov[y * w + x].scale_id, n_scales);
                                frame.set_pixel(y, x, color);
                            }
                        }
                    }
                }
            }
            Ok(frame)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub checked: usize,
    pub mismatches: usize,
    /// `(frame, y, x)` of the first few mismatching pixels.
    pub first_mismatches: Vec<(usize, usize, usize)>,
    /// Fraction of output pixels drawn from each scale.
    pub scale_shares: Vec<f64>,
    pub missing_provenance: bool,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        !self.missing_provenance && self.mismatches == 0
    }
}

/// Re-fetches every output pixel from the pyramid through its provenance
/// entry and counts byte mismatches. Dangling references count as mismatches.
pub fn provenance_audit(t: &SampledTensor, pyramid: &[PyramidLevel]) -> AuditReport {
    let Some(prov) = &t.provenance else {
        return AuditReport {
            checked: 0,
            mismatches: 0,
            first_mismatches: Vec::new(),
            scale_shares: Vec::new(),
            missing_provenance: true,
        };
    };
    let (h, w) = (t.height, t.width);
    let mut mismatches = 0;
    let mut first = Vec::new();
    let mut counts = vec![0usize; pyramid.len().max(t.meta.n_scales as usize)];
    for (i, p) in prov.iter().enumerate() {
        let (f, y, x) = (i / (h * w), (i / w) % h, i % w);
        let s = p.scale_id as usize;
        if s >= counts.len() {
            counts.resize(s + 1, 0);
        }
        counts[s] += 1;
        let source = pyramid
            .get(s)
            .and_then(|level| level.frame(p.src_frame as usize))
            .filter(|fr| (p.src_y as usize) < fr.height() && (p.src_x as usize) < fr.width())
            .map(|fr| fr.pixel(p.src_y as usize, p.src_x as usize));
        if source != Some(t.pixel(f, y, x)) {
            mismatches += 1;
            if first.len() < 8 {
                first.push((f, y, x));
            }
        }
    }
    let total = prov.len() as f64;
    AuditReport {
        checked: prov.len(),
        mismatches,
        first_mismatches: first,
        scale_shares: counts.into_iter().map(|c| c as f64 / total).collect(),
        missing_provenance: false,
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn tensor(
        kind: TensorKind,
        h: usize,
        w: usize,
        frames: usize,
        with_prov: bool,
    ) -> SampledTensor {
        let data = (0..frames * h * w * 3)
            .map(|i| (i * 7 % 251) as u8)
            .collect();
        let prov = with_prov.then(|| {
            (0..frames * h * w)
                .map(|i| ProvenanceEntry {
                    scale_id: (i % 2) as u8,
                    src_frame: (i / (h * w)) as u16,
                    src_y: (i / w % h) as u32 + 100,
                    src_x: (i % w) as u32 * 3,
                })
                .collect()
        });
        let meta = SampleMeta {
            n_scales: 2,
            spatial_mask: SpatialMaskKind::Window,
            temporal_mask: TemporalMaskKind::None,
            seed: 0xdead_beef,
            schedule: if kind == TensorKind::Video {
                vec![0, 1]
            } else {
                vec![]
            },
        };
        SampledTensor::new(kind, h, w, frames, data, prov, meta).unwrap()
    }

    #[test]
    fn minimal_image_size() {
        let t = tensor(TensorKind::Image, 8, 8, 1, false);
        let bytes = encode_container(&t).unwrap();
        assert_eq!(header_len(0), 33);
        assert_eq!(bytes.len(), 33 + 192);
        let t = tensor(TensorKind::Image, 8, 8, 1, true);
        assert_eq!(encode_container(&t).unwrap().len(), 33 + 192 + 64 * 11);
    }

    #[test]
    fn header_fields_little_endian() {
        let t = tensor(TensorKind::Video, 2, 3, 4, true);
        let b = encode_container(&t).unwrap();
        assert_eq!(&b[0..4], b"SAMA");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(b[6], 2);
        assert_eq!(&b[7..11], &2u32.to_le_bytes());
        assert_eq!(&b[11..15], &3u32.to_le_bytes());
        assert_eq!(&b[15..19], &4u32.to_le_bytes());
        assert_eq!(&b[19..22], &[2, 1, 0]);
        assert_eq!(&b[22..30], &0xdead_beefu64.to_le_bytes());
        assert_eq!(&b[30..32], &[2, 0]);
        assert_eq!(&b[32..34], &[0, 1]);
        assert_eq!(b[34], FLAG_PROVENANCE);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sama");
        let t = tensor(TensorKind::Video, 5, 7, 4, true);
        write_container(&t, &path).unwrap();
        assert_eq!(read_container(&path).unwrap(), t);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let t = tensor(TensorKind::Image, 4, 4, 1, true);
        let good = encode_container(&t).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_container(&bad),
            Err(Error::UnsupportedFormat(_))
        ));

        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(matches!(
            decode_container(&v2),
            Err(Error::UnsupportedFormat(_))
        ));

        for cut in [3, 20, 40, good.len() - 1] {
            assert!(
                matches!(
                    decode_container(&good[..cut]),
                    Err(Error::CorruptFile(_)) | Err(Error::UnsupportedFormat(_))
                ),
                "cut at {cut}"
            );
        }
        assert!(matches!(
            decode_container(&good[..good.len() - 1]),
            Err(Error::CorruptFile(_))
        ));

        let mut long = good.clone();
        long.push(0);
        assert!(matches!(
            decode_container(&long),
            Err(Error::CorruptFile(_))
        ));
    }

    #[test]
    fn rejects_out_of_range_scale() {
        let mut t = tensor(TensorKind::Image, 2, 2, 1, true);
        t.provenance.as_mut().unwrap()[0].scale_id = 5;
        let bytes = encode_container(&t).unwrap();
        assert!(matches!(
            decode_container(&bytes),
            Err(Error::CorruptFile(_))
        ));
    }

    proptest! {
        #[test]
        fn container_roundtrip(h in 1usize..6, w in 1usize..6, frames in 1usize..4,
                               seed: u64, prov: bool, sched in proptest::collection::vec(0u8..2, 0..5)) {
            let kind = if frames == 1 { TensorKind::Image } else { TensorKind::Video };
            let mut t = tensor(kind, h, w, frames, prov);
            t.meta.seed = seed;
            t.meta.schedule = sched;
            let bytes = encode_container(&t).unwrap();
            prop_assert_eq!(decode_container(&bytes).unwrap(), t.clone());
            prop_assert_eq!(encode_container(&t).unwrap(), bytes);
        }
    }

    #[test]
    fn plain_preview_is_identity() {
        let t = tensor(TensorKind::Video, 4, 6, 3, false);
        let frames = render_preview(&t, PreviewStyle::Plain).unwrap();
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f.data(), t.frame_data(i));
        }
        assert!(matches!(
            render_preview(&t, PreviewStyle::Tinted),
            Err(Error::MissingProvenance)
        ));
    }

    #[test]
    fn single_scale_tint_is_uniform() {
        let mut t = tensor(TensorKind::Image, 4, 4, 1, true);
        t.data.iter_mut().for_each(|b| *b = 100);
        for p in t.provenance.as_mut().unwrap() {
            p.scale_id = 0;
        }
        t.meta.n_scales = 1;
        let out = &render_preview(&t, PreviewStyle::Tinted).unwrap()[0];
        let first = out.pixel(0, 0);
        assert_ne!(first, [100, 100, 100]);
        assert!(out.data().chunks_exact(3).all(|px| px == first));
    }

    #[test]
    fn scale_colors_distinct() {
        let colors: Vec<_> = (0..16).map(|s| scale_color(s, 16)).collect();
        for i in 0..16 {
            for j in i + 1..16 {
                assert_ne!(colors[i], colors[j]);
            }
        }
        assert_eq!(scale_color(0, 2), [255, 0, 0]);
    }

    #[test]
    fn audit_detects_single_corruption() {
        use std::sync::Arc;
        let level = FrameBuffer::from_fn(4, 4, |y, x| [y as u8, x as u8, 7]);
        let pyramid = vec![PyramidLevel::new(0, vec![Some(Arc::new(level.clone()))]).unwrap()];
        let prov: Vec<_> = (0..16)
            .map(|i| ProvenanceEntry {
                scale_id: 0,
                src_frame: 0,
                src_y: (i / 4) as u32,
                src_x: (i % 4) as u32,
            })
            .collect();
        let meta = SampleMeta {
            n_scales: 1,
            spatial_mask: SpatialMaskKind::None,
            temporal_mask: TemporalMaskKind::None,
            seed: 0,
            schedule: vec![],
        };
        let mut t = SampledTensor::new(
            TensorKind::Image,
            4,
            4,
            1,
            level.into_data(),
            Some(prov),
            meta,
        )
        .unwrap();
        let report = provenance_audit(&t, &pyramid);
        assert!(report.passed());
        assert_eq!(report.checked, 16);
        assert_eq!(report.scale_shares, vec![1.0]);
        t.data[17] ^= 0x40;
        let report = provenance_audit(&t, &pyramid);
        assert_eq!(report.mismatches, 1);
        assert_eq!(report.first_mismatches, vec![(0, 1, 1)]);
    }
}
