//! Scale masks and the composition of per-scale fragment mosaics into one
//! fixed-size, scale-interlaced output.
//!
//! Spatial masks are checkerboards whose tile (0,0) belongs to the raw
//! scale. Temporal masks assign one pyramid level to each pair of frames.

use crate::config::{SpatialMaskKind, TemporalMaskKind};
use crate::error::{Error, Result};
use crate::fragments::FragmentMosaic;
use crate::tensor::{ProvenanceEntry, SampleMeta, SampledTensor, TensorKind};

/// Per-pixel scale assignment over an output frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleMap {
    pub height: usize,
    pub width: usize,
    scales: Vec<u8>,
}

impl ScaleMap {
    pub fn uniform(height: usize, width: usize, scale: u8) -> Self {
        ScaleMap {
            height,
            width,
            scales: vec![scale; height * width],
        }
    }

    pub fn scale_at(&self, y: usize, x: usize) -> u8 {
        self.scales[y * self.width + x]
    }

    pub fn scales(&self) -> &[u8] {
        &self.scales
    }

    /// 0/1 indicator of pixels assigned to `scale`.
    pub fn indicator(&self, scale: u8) -> Vec<u8> {
        self.scales.iter().map(|&s| u8::from(s == scale)).collect()
    }

    /// Number of `block x block` tiles owned by each scale.
    pub fn tile_counts(&self, block: usize, n_scales: usize) -> Vec<usize> {
        let mut counts = vec![0; n_scales];
        for ty in (0..self.height).step_by(block) {
            for tx in (0..self.width).step_by(block) {
                counts[self.scale_at(ty, tx) as usize] += 1;
            }
        }
        counts
    }
}

/// Binary checkerboard: 1 selects the finer scale, 0 the coarser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialMask {
    pub kind: SpatialMaskKind,
    pub block: usize,
    pub height: usize,
    pub width: usize,
    bitmap: Vec<u8>,
}

impl SpatialMask {
    /// Mask with an explicit bitmap of 0/1 values.
    pub fn from_bitmap(
        kind: SpatialMaskKind,
        block: usize,
        height: usize,
        width: usize,
        bitmap: Vec<u8>,
    ) -> Result<Self> {
        if bitmap.len() != height * width {
            return Err(Error::DimMismatch(format!(
                "bitmap has {} entries for {height}x{width}",
                bitmap.len()
            )));
        }
        if bitmap.iter().any(|&b| b > 1) {
            return Err(Error::InvalidConfig(
                "spatial mask values must be 0 or 1".into(),
            ));
        }
        Ok(SpatialMask {
            kind,
            block,
            height,
            width,
            bitmap,
        })
    }

    pub fn bitmap(&self) -> &[u8] {
        &self.bitmap
    }

    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.bitmap[y * self.width + x]
    }

    /// Scale map sending 1 to `fine` and 0 to `coarse`.
    pub fn to_scale_map(&self, fine: u8, coarse: u8) -> ScaleMap {
        ScaleMap {
            height: self.height,
            width: self.width,
            scales: self
                .bitmap
                .iter()
                .map(|&b| if b == 1 { fine } else { coarse })
                .collect(),
        }
    }

    pub fn ones(&self) -> usize {
        self.bitmap.iter().filter(|&&b| b == 1).count()
    }
}

fn check_tiling(height: usize, width: usize, block: usize) -> Result<()> {
    if block == 0 || height % block != 0 || width % block != 0 {
        return Err(Error::IndivisibleDims {
            height,
            width,
            block,
        });
    }
    Ok(())
}

pub fn make_spatial_mask(kind: SpatialMaskKind, out_h: usize, out_w: usize) -> Result<SpatialMask> {
    let block = kind
        .block()
        .ok_or_else(|| Error::InvalidConfig("no spatial mask kind selected".into()))?;
    check_tiling(out_h, out_w, block)?;
    let bitmap = (0..out_h)
        .flat_map(|y| (0..out_w).map(move |x| u8::from((y / block + x / block) % 2 == 0)))
        .collect();
    Ok(SpatialMask {
        kind,
        block,
        height: out_h,
        width: out_w,
        bitmap,
    })
}

/// Bayer-style multi-scale mask: a 2x2 tile super-pattern
/// `[[0,1],[2,3]]` for four scales, `[[0,1],[1,2]]` for three.
pub fn make_interlace_mask(
    n_scales: usize,
    out_h: usize,
    out_w: usize,
    block: usize,
) -> Result<ScaleMap> {
    let pattern: [[u8; 2]; 2] = match n_scales {
        3 => [[0, 1], [1, 2]],
        4 => [[0, 1], [2, 3]],
        n => {
            return Err(Error::BadArity(format!(
                "interlace mask takes 3 or 4 scales, got {n}"
            )))
        }
    };
    check_tiling(out_h, out_w, block)?;
    let scales = (0..out_h)
        .flat_map(|y| (0..out_w).map(move |x| pattern[(y / block) % 2][(x / block) % 2]))
        .collect();
    Ok(ScaleMap {
        height: out_h,
        width: out_w,
        scales,
    })
}

/// Level assignment per frame pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalMask {
    pub kind: TemporalMaskKind,
    schedule: Vec<usize>,
}

impl TemporalMask {
    /// Arbitrary schedule, mainly for tests and overrides.
    pub fn from_schedule(kind: TemporalMaskKind, schedule: Vec<usize>) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::BadArity("empty temporal schedule".into()));
        }
        Ok(TemporalMask { kind, schedule })
    }

    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    /// Output frame count covered by the schedule.
    pub fn frames(&self) -> usize {
        self.schedule.len() * 2
    }

    /// Scale id of every output frame.
    pub fn per_frame(&self) -> Vec<usize> {
        self.schedule.iter().flat_map(|&s| [s, s]).collect()
    }
}

pub fn make_temporal_mask(
    kind: TemporalMaskKind,
    frames: usize,
    n_levels: usize,
) -> Result<TemporalMask> {
    if frames == 0 || frames % 2 != 0 {
        return Err(Error::BadArity(format!(
            "{frames} frames do not split into pairs"
        )));
    }
    let pairs = frames / 2;
    let need = |expected: usize| {
        if n_levels == expected {
            Ok(())
        } else {
            Err(Error::BadArity(format!(
                "{kind} mask over {frames} frames needs {expected} levels, got {n_levels}"
            )))
        }
    };
    let schedule = match kind {
        TemporalMaskKind::None => {
            return Err(Error::InvalidConfig(
                "no temporal mask kind selected".into(),
            ))
        }
        TemporalMaskKind::Progressive => {
            need(pairs)?;
            (0..pairs).collect()
        }
        TemporalMaskKind::Choppy => {
            need(2)?;
            (0..pairs).map(|k| k % 2).collect()
        }
        TemporalMaskKind::Mixed => {
            if frames % 4 != 0 {
                return Err(Error::BadArity(format!(
                    "mixed mask needs a multiple of 4 frames, got {frames}"
                )));
            }
            need(frames / 4)?;
            (0..pairs).map(|k| k % (frames / 4)).collect()
        }
    };
    Ok(TemporalMask { kind, schedule })
}

fn check_mosaic_dims(a: &FragmentMosaic, b: &FragmentMosaic) -> Result<()> {
    if (a.height(), a.width(), a.frag_h, a.frag_w) != (b.height(), b.width(), b.frag_h, b.frag_w) {
        return Err(Error::DimMismatch(format!(
            "mosaic {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    if a.frames.len() != b.frames.len() {
        return Err(Error::DimMismatch(format!(
            "mosaic frame counts {} vs {}",
            a.frames.len(),
            b.frames.len()
        )));
    }
    Ok(())
}

/// Copies pixel `(y, x)` of `mosaic` frame `t` into the output and records where it came from.
fn take(
    mosaic: &FragmentMosaic,
    t: usize,
    y: usize,
    x: usize,
    data: &mut Vec<u8>,
    prov: &mut Vec<ProvenanceEntry>,
) -> Result<()> {
    let frame = mosaic
        .frame(t)
        .ok_or_else(|| Error::DimMismatch(format!("scale {} has no frame {t}", mosaic.scale_id)))?;
    data.extend_from_slice(&frame.pixel(y, x));
    let (sy, sx) = mosaic.source_of(y, x);
    prov.push(ProvenanceEntry {
        scale_id: mosaic.scale_id as u8,
        src_frame: t as u16,
        src_y: sy as u32,
        src_x: sx as u32,
    });
    Ok(())
}

/// Per-pixel select between two mosaics: mask 1 takes `fine`, 0 takes `coarse`.
///
/// Applied to every frame when the mosaics come from a clip.
pub fn compose_spatial(
    fine: &FragmentMosaic,
    coarse: &FragmentMosaic,
    mask: &SpatialMask,
) -> Result<SampledTensor> {
    check_mosaic_dims(fine, coarse)?;
    let (h, w) = (fine.height(), fine.width());
    if (mask.height, mask.width) != (h, w) {
        return Err(Error::DimMismatch(format!(
            "mask {}x{} vs mosaic {h}x{w}",
            mask.height, mask.width
        )));
    }
    let frames = fine.frames.len();
    let mut data = Vec::with_capacity(frames * h * w * 3);
    let mut prov = Vec::with_capacity(frames * h * w);
    for t in 0..frames {
        for y in 0..h {
            for x in 0..w {
                let src = if mask.at(y, x) == 1 { fine } else { coarse };
                take(src, t, y, x, &mut data, &mut prov)?;
            }
        }
    }
    let meta = SampleMeta {
        n_scales: (fine.scale_id.max(coarse.scale_id) + 1) as u8,
        spatial_mask: mask.kind,
        temporal_mask: TemporalMaskKind::None,
        seed: 0,
        schedule: Vec::new(),
    };
    let kind = if frames == 1 {
        TensorKind::Image
    } else {
        TensorKind::Video
    };
    SampledTensor::new(kind, h, w, frames, data, Some(prov), meta)
}

/// Frames `2k, 2k+1` of the output are frames `2k, 2k+1` of the mosaic at
/// level `schedule[k]`; time is never reordered.
pub fn compose_temporal(mosaics: &[FragmentMosaic], mask: &TemporalMask) -> Result<SampledTensor> {
    let first = mosaics
        .first()
        .ok_or_else(|| Error::BadArity("no mosaics to compose".into()))?;
    for m in mosaics {
        check_mosaic_dims(first, m)?;
    }
    let by_scale = |s: usize| {
        mosaics
            .iter()
            .find(|m| m.scale_id == s)
            .ok_or_else(|| Error::BadArity(format!("schedule references missing scale {s}")))
    };
    let frames = mask.frames();
    if first.frames.len() < frames {
        return Err(Error::BadArity(format!(
            "schedule covers {frames} frames, mosaics have {}",
            first.frames.len()
        )));
    }
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(frames * h * w * 3);
    let mut prov = Vec::with_capacity(frames * h * w);
    for (t, scale) in mask.per_frame().into_iter().enumerate() {
        let src = by_scale(scale)?;
        for y in 0..h {
            for x in 0..w {
                take(src, t, y, x, &mut data, &mut prov)?;
            }
        }
    }
    let n_scales = mosaics.iter().map(|m| m.scale_id).max().unwrap_or(0) + 1;
    let meta = SampleMeta {
        n_scales: n_scales as u8,
        spatial_mask: SpatialMaskKind::None,
        temporal_mask: mask.kind,
        seed: 0,
        schedule: mask.schedule().iter().map(|&s| s as u8).collect(),
    };
    SampledTensor::new(TensorKind::Video, h, w, frames, data, Some(prov), meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::FrameBuffer;

    /// Brute-force count of checkerboard tiles with (i + j) even.
    fn even_tiles(rows: usize, cols: usize) -> usize {
        (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i + j) % 2 == 0))
            .filter(|&b| b)
            .count()
    }

    fn flat_mosaic(scale_id: usize, frames: usize, rgb: [u8; 3]) -> FragmentMosaic {
        FragmentMosaic {
            scale_id,
            grid_rows: 7,
            grid_cols: 7,
            frag_h: 32,
            frag_w: 32,
            offsets: (0..49).map(|c| ((c / 7) * 40, (c % 7) * 40)).collect(),
            frames: (0..frames)
                .map(|_| Some(FrameBuffer::filled(224, 224, rgb)))
                .collect(),
        }
    }

    fn textured_mosaic(scale_id: usize, frames: usize, salt: u8) -> FragmentMosaic {
        let mut m = flat_mosaic(scale_id, frames, [0; 3]);
        for (t, f) in m.frames.iter_mut().enumerate() {
            *f = Some(FrameBuffer::from_fn(224, 224, |y, x| {
                [y as u8, x as u8, salt.wrapping_add(t as u8)]
            }));
        }
        m
    }

    #[test]
    fn window_mask_counts() {
        let mask = make_spatial_mask(SpatialMaskKind::Window, 224, 224).unwrap();
        assert_eq!(even_tiles(7, 7), 25);
        let map = mask.to_scale_map(0, 1);
        assert_eq!(map.tile_counts(32, 2), vec![25, 24]);
        assert_eq!(mask.ones(), 25 * 32 * 32);
    }

    #[test]
    fn patch_mask_counts() {
        let mask = make_spatial_mask(SpatialMaskKind::Patch, 224, 224).unwrap();
        assert_eq!(even_tiles(56, 56), 1568);
        assert_eq!(mask.to_scale_map(0, 1).tile_counts(4, 2), vec![1568, 1568]);
    }

    #[test]
    fn mask_is_blockwise_checkerboard() {
        let mask = make_spatial_mask(SpatialMaskKind::Window, 256, 256).unwrap();
        for y in 0..256 {
            for x in 0..256 {
                assert_eq!(mask.at(y, x), u8::from((y / 32 + x / 32) % 2 == 0));
            }
        }
        assert_eq!(mask.at(0, 0), 1);
    }

    #[test]
    fn indivisible_mask_rejected() {
        assert!(matches!(
            make_spatial_mask(SpatialMaskKind::Window, 230, 224),
            Err(Error::IndivisibleDims { .. })
        ));
    }

    #[test]
    fn all_ones_and_zeros_select_one_input() {
        let m0 = textured_mosaic(0, 1, 10);
        let m1 = textured_mosaic(1, 1, 99);
        let ones =
            SpatialMask::from_bitmap(SpatialMaskKind::Window, 32, 224, 224, vec![1; 224 * 224])
                .unwrap();
        let zeros =
            SpatialMask::from_bitmap(SpatialMaskKind::Window, 32, 224, 224, vec![0; 224 * 224])
                .unwrap();
        assert_eq!(
            compose_spatial(&m0, &m1, &ones).unwrap().frame(0),
            *m0.frame(0).unwrap()
        );
        assert_eq!(
            compose_spatial(&m0, &m1, &zeros).unwrap().frame(0),
            *m1.frame(0).unwrap()
        );
    }

    #[test]
    fn red_blue_checkerboard() {
        let red = flat_mosaic(0, 1, [255, 0, 0]);
        let blue = flat_mosaic(1, 1, [0, 0, 255]);
        let mask = make_spatial_mask(SpatialMaskKind::Window, 224, 224).unwrap();
        let out = compose_spatial(&red, &blue, &mask).unwrap();
        let mut red_tiles = 0;
        for ty in 0..7 {
            for tx in 0..7 {
                let px = out.pixel(0, ty * 32 + 5, tx * 32 + 7);
                if px == [255, 0, 0] {
                    red_tiles += 1;
                    assert_eq!((ty + tx) % 2, 0);
                } else {
                    assert_eq!(px, [0, 0, 255]);
                }
            }
        }
        assert_eq!(red_tiles, 25);
    }

    #[test]
    fn swapping_inputs_complements_provenance() {
        let m0 = textured_mosaic(0, 1, 1);
        let m1 = textured_mosaic(1, 1, 2);
        let mask = make_spatial_mask(SpatialMaskKind::Patch, 224, 224).unwrap();
        let a = compose_spatial(&m0, &m1, &mask).unwrap();
        let b = compose_spatial(&m1, &m0, &mask).unwrap();
        let pa = a.provenance.as_ref().unwrap();
        let pb = b.provenance.as_ref().unwrap();
        for i in 0..pa.len() {
            assert_eq!(pa[i].scale_id + pb[i].scale_id, 1);
            // Together the two outputs reconstruct both mosaics.
            let (y, x) = (i / 224, i % 224);
            let (from0, from1) = if pa[i].scale_id == 0 {
                (&a, &b)
            } else {
                (&b, &a)
            };
            assert_eq!(from0.pixel(0, y, x), m0.frame(0).unwrap().pixel(y, x));
            assert_eq!(from1.pixel(0, y, x), m1.frame(0).unwrap().pixel(y, x));
        }
    }

    #[test]
    fn compose_rejects_mismatched_dims() {
        let m0 = flat_mosaic(0, 1, [0; 3]);
        let mut m1 = flat_mosaic(1, 1, [0; 3]);
        m1.frag_h = 16;
        let mask = make_spatial_mask(SpatialMaskKind::Window, 224, 224).unwrap();
        assert!(matches!(
            compose_spatial(&m0, &m1, &mask),
            Err(Error::DimMismatch(_))
        ));
        let small = make_spatial_mask(SpatialMaskKind::Window, 192, 224).unwrap();
        let m1 = flat_mosaic(1, 1, [0; 3]);
        assert!(matches!(
            compose_spatial(&m0, &m1, &small),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn temporal_schedules() {
        let p = make_temporal_mask(TemporalMaskKind::Progressive, 32, 16).unwrap();
        assert_eq!(p.schedule(), (0..16).collect::<Vec<_>>().as_slice());
        let c = make_temporal_mask(TemporalMaskKind::Choppy, 32, 2).unwrap();
        assert_eq!(c.schedule(), [0, 1].repeat(8).as_slice());
        let m = make_temporal_mask(TemporalMaskKind::Mixed, 32, 8).unwrap();
        let half: Vec<usize> = (0..8).collect();
        assert_eq!(m.schedule(), [half.clone(), half].concat().as_slice());
        // Mixed restricted to its first half is progressive at T/2.
        let p16 = make_temporal_mask(TemporalMaskKind::Progressive, 16, 8).unwrap();
        assert_eq!(&m.schedule()[..8], p16.schedule());
    }

    #[test]
    fn temporal_arity_errors() {
        assert!(matches!(
            make_temporal_mask(TemporalMaskKind::Progressive, 32, 15),
            Err(Error::BadArity(_))
        ));
        assert!(matches!(
            make_temporal_mask(TemporalMaskKind::Choppy, 32, 16),
            Err(Error::BadArity(_))
        ));
        assert!(matches!(
            make_temporal_mask(TemporalMaskKind::Mixed, 30, 7),
            Err(Error::BadArity(_))
        ));
        assert!(matches!(
            make_temporal_mask(TemporalMaskKind::Progressive, 31, 15),
            Err(Error::BadArity(_))
        ));
    }

    #[test]
    fn interlace_mask_tile_counts() {
        // Brute-force count of the 2x2 super-pattern over a 7x7 tile grid.
        let oracle = |pattern: [[u8; 2]; 2], n: usize| {
            let mut counts = vec![0; n];
            for i in 0..7 {
                for j in 0..7 {
                    counts[pattern[i % 2][j % 2] as usize] += 1;
                }
            }
            counts
        };
        let four = make_interlace_mask(4, 224, 224, 32).unwrap();
        assert_eq!(four.tile_counts(32, 4), oracle([[0, 1], [2, 3]], 4));
        assert_eq!(four.tile_counts(32, 4), vec![16, 12, 12, 9]);
        let three = make_interlace_mask(3, 224, 224, 32).unwrap();
        assert_eq!(three.tile_counts(32, 3), oracle([[0, 1], [1, 2]], 3));
        // On an even tile grid the middle scale owns exactly twice the tiles.
        let even = make_interlace_mask(3, 256, 256, 32).unwrap();
        assert_eq!(even.tile_counts(32, 3), vec![16, 32, 16]);
        assert!(matches!(
            make_interlace_mask(4, 224, 224, 64),
            Err(Error::IndivisibleDims { .. })
        ));
        assert!(matches!(
            make_interlace_mask(2, 224, 224, 32),
            Err(Error::BadArity(_))
        ));
    }

    #[test]
    fn indicators_partition_unity() {
        let maps = [
            make_spatial_mask(SpatialMaskKind::Window, 224, 224)
                .unwrap()
                .to_scale_map(0, 1),
            make_spatial_mask(SpatialMaskKind::Patch, 256, 256)
                .unwrap()
                .to_scale_map(0, 1),
            make_interlace_mask(3, 224, 224, 32).unwrap(),
            make_interlace_mask(4, 256, 256, 4).unwrap(),
        ];
        for map in &maps {
            let n = *map.scales().iter().max().unwrap() + 1;
            let mut sum = vec![0u8; map.scales().len()];
            for s in 0..n {
                for (acc, v) in sum.iter_mut().zip(map.indicator(s)) {
                    *acc += v;
                }
            }
            assert!(sum.iter().all(|&v| v == 1));
        }
    }

    #[test]
    fn temporal_override_all_zero_is_level_zero() {
        let mosaics: Vec<_> = (0..4)
            .map(|s| textured_mosaic(s, 8, s as u8 * 40))
            .collect();
        let mask = TemporalMask::from_schedule(TemporalMaskKind::Progressive, vec![0; 4]).unwrap();
        let out = compose_temporal(&mosaics, &mask).unwrap();
        for t in 0..8 {
            assert_eq!(out.frame(t), *mosaics[0].frame(t).unwrap());
        }
    }

    #[test]
    fn progressive_provenance_scales() {
        let mosaics: Vec<_> = (0..16).map(|s| textured_mosaic(s, 32, s as u8)).collect();
        let mask = make_temporal_mask(TemporalMaskKind::Progressive, 32, 16).unwrap();
        let out = compose_temporal(&mosaics, &mask).unwrap();
        let expected: Vec<u8> = (0..16u8).flat_map(|s| [s, s]).collect();
        for t in 0..32 {
            let p = out.provenance_at(t, 100, 3).unwrap();
            assert_eq!(p.scale_id, expected[t]);
            assert_eq!(p.src_frame as usize, t);
        }
    }

    #[test]
    fn choppy_colors() {
        let red = flat_mosaic(0, 32, [255, 0, 0]);
        let blue = flat_mosaic(1, 32, [0, 0, 255]);
        let mask = make_temporal_mask(TemporalMaskKind::Choppy, 32, 2).unwrap();
        let out = compose_temporal(&[red, blue], &mask).unwrap();
        let colors: String = (0..32)
            .map(|t| {
                if out.pixel(t, 0, 0) == [255, 0, 0] {
                    'R'
                } else {
                    'B'
                }
            })
            .collect();
        assert_eq!(colors, "RRBB".repeat(8));
    }

    #[test]
    fn temporal_needs_enough_frames() {
        let mosaics: Vec<_> = (0..2).map(|s| flat_mosaic(s, 2, [0; 3])).collect();
        let mask = make_temporal_mask(TemporalMaskKind::Choppy, 4, 2).unwrap();
        assert!(matches!(
            compose_temporal(&mosaics, &mask),
            Err(Error::BadArity(_))
        ));
    }
}
