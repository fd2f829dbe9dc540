//! Multi-granularity pyramid: aspect-preserving bilinear downscales whose
//! min-side falls linearly from the raw resolution to the sampler's output size.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::config::SamplerConfig;
use crate::error::{Error, Result};
use crate::media::{FrameBuffer, Media, MediaClip};

/// Per-level target `(height, width)`, level 0 first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleSchedule {
    levels: Vec<(usize, usize)>,
}

impl ScaleSchedule {
    pub fn levels(&self) -> &[(usize, usize)] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn min_sides(&self) -> Vec<usize> {
        self.levels.iter().map(|&(h, w)| h.min(w)).collect()
    }
}

/// `round(num / den)` with halves rounded up, for non-negative operands.
fn div_round_half_up(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

/// Dimensions with the given min-side, the other side following the raw aspect ratio.
///
/// The long side is derived from the raw dimensions directly, never from a
/// previously rounded level.
pub fn dims_for_min_side(raw_h: usize, raw_w: usize, min_side: usize) -> (usize, usize) {
    let (short, long) = (raw_h.min(raw_w), raw_h.max(raw_w));
    let other = div_round_half_up(min_side * long, short);
    if raw_h <= raw_w {
        (min_side, other)
    } else {
        (other, min_side)
    }
}

/// Linear min-side schedule from `min(raw_h, raw_w)` down to `target_min`.
///
/// Level `k` has min-side `round(raw_min + k * (target_min - raw_min) / (levels - 1))`,
/// evaluated in integer arithmetic, so the last level hits `target_min` exactly.
/// A single-level schedule is just the raw size.
pub fn scale_schedule(
    raw_h: usize,
    raw_w: usize,
    target_min: usize,
    levels: usize,
) -> Result<ScaleSchedule> {
    if levels == 0 {
        return Err(Error::InvalidConfig(
            "pyramid needs at least one level".into(),
        ));
    }
    if raw_h == 0 || raw_w == 0 {
        return Err(Error::InvalidFrame(format!("empty frame {raw_h}x{raw_w}")));
    }
    let raw_min = raw_h.min(raw_w);
    if raw_min < target_min {
        return Err(Error::InputTooSmall {
            min_side: raw_min,
            target: target_min,
        });
    }
    if levels == 1 {
        return Ok(ScaleSchedule {
            levels: vec![(raw_h, raw_w)],
        });
    }
    let steps = levels - 1;
    let drop = raw_min - target_min;
    let levels = (0..levels)
        .map(|k| {
            if k == 0 {
                return (raw_h, raw_w);
            }
            let min_side = div_round_half_up(raw_min * steps - k * drop, steps);
            dims_for_min_side(raw_h, raw_w, min_side)
        })
        .collect();
    Ok(ScaleSchedule { levels })
}

/// Smallest coarsest-level min-side whose level covers an `out_h x out_w` mosaic.
///
/// For square outputs this is just the output side. For non-square outputs
/// with a mismatched aspect ratio the min-side grows until both axes fit.
pub fn coarsest_min_side(raw_h: usize, raw_w: usize, out_h: usize, out_w: usize) -> usize {
    let mut min_side = out_h.min(out_w);
    loop {
        let (h, w) = dims_for_min_side(raw_h, raw_w, min_side);
        if h >= out_h && w >= out_w {
            return min_side;
        }
        min_side += 1;
    }
}

struct Taps {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// Half-pixel-center sample positions for resampling `input` cells into `output`.
fn taps(input: usize, output: usize) -> Vec<Taps> {
    let last = (input - 1) as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * input as f64 / output as f64 - 0.5).clamp(0.0, last);
            let lo = src.floor() as usize;
            Taps {
                lo,
                hi: (lo + 1).min(input - 1),
                frac: src - lo as f64,
            }
        })
        .collect()
}

const RESIZE_BAND: usize = 16;

/// Two horizontally resampled source rows, keyed by source row index.
struct RowCache {
    keys: [usize; 2],
    rows: [Vec<f64>; 2],
}

impl RowCache {
    fn new(len: usize) -> Self {
        Self {
            keys: [usize::MAX; 2],
            rows: [vec![0.0; len], vec![0.0; len]],
        }
    }

    fn fill(&mut self, slot: usize, frame: &FrameBuffer, cols: &[Taps], y: usize) {
        let src = frame.row(y);
        for (out, tx) in self.rows[slot].chunks_exact_mut(3).zip(cols) {
            let (pa, pb, fx) = (
                &src[tx.lo * 3..tx.lo * 3 + 3],
                &src[tx.hi * 3..tx.hi * 3 + 3],
                tx.frac,
            );
            for c in 0..3 {
                out[c] = (1.0 - fx) * pa[c] as f64 + fx * pb[c] as f64;
            }
        }
        self.keys[slot] = y;
    }

    fn pair(
        &mut self,
        frame: &FrameBuffer,
        cols: &[Taps],
        lo: usize,
        hi: usize,
    ) -> (&[f64], &[f64]) {
        let lo_slot = match self.keys.iter().position(|&k| k == lo) {
            Some(s) => s,
            None => {
                // Keep the slot holding `hi` if there is one.
                let s = usize::from(self.keys[0] == hi);
                self.fill(s, frame, cols, lo);
                s
            }
        };
        let hi_slot = if lo == hi {
            lo_slot
        } else {
            match self.keys.iter().position(|&k| k == hi) {
                Some(s) => s,
                None => {
                    let s = 1 - lo_slot;
                    self.fill(s, frame, cols, hi);
                    s
                }
            }
        };
        (&self.rows[lo_slot], &self.rows[hi_slot])
    }
}

/// Bilinear resample with half-pixel-center alignment.
///
/// Channels are interpolated independently, clamped to `[0, 255]` and
/// rounded half-up. Rows are processed in parallel; the result does not
/// depend on the thread count.
pub fn bilinear_resize(frame: &FrameBuffer, out_h: usize, out_w: usize) -> FrameBuffer {
    assert!(out_h >= 1 && out_w >= 1, "resize target must be non-empty");
    if frame.dims() == (out_h, out_w) {
        return frame.clone();
    }
    let cols = taps(frame.width(), out_w);
    let rows = taps(frame.height(), out_h);
    let mut data = vec![0u8; out_h * out_w * 3];
    // Bands of rows share a cache of horizontally interpolated source rows;
    // neighbouring output rows usually read overlapping source rows.
    data.par_chunks_mut(out_w * 3 * RESIZE_BAND)
        .zip(rows.par_chunks(RESIZE_BAND))
        .for_each(|(band, band_rows)| {
            let mut cache = RowCache::new(out_w * 3);
            for (out_row, ty) in band.chunks_exact_mut(out_w * 3).zip(band_rows) {
                let (t, u) = cache.pair(frame, &cols, ty.lo, ty.hi);
                let fy = ty.frac;
                for ((o, &t), &u) in out_row.iter_mut().zip(t).zip(u) {
                    let v = (1.0 - fy) * t + fy * u;
                    // Non-negative here, so truncation is floor.
                    *o = (v.clamp(0.0, 255.0) + 0.5) as u8;
                }
            }
        });
    FrameBuffer::new(out_h, out_w, data).expect("resize output sized by construction")
}

/// Bilinearly upscales so the min-side reaches `target_min`; identity otherwise.
pub fn upscale_if_small(media: Media, target_min: usize) -> Media {
    let (h, w) = media.dims();
    if h.min(w) >= target_min {
        return media;
    }
    let (out_h, out_w) = dims_for_min_side(h, w, target_min);
    match media {
        Media::Image(frame) => Media::Image(Arc::new(bilinear_resize(&frame, out_h, out_w))),
        Media::Video(clip) => {
            let frames = resize_shared(clip.frames(), out_h, out_w);
            let mut resized = MediaClip::from_shared(frames).expect("non-empty clip stays valid");
            if let Some(fps) = clip.nominal_fps() {
                resized = resized.with_fps(fps);
            }
            Media::Video(resized)
        }
    }
}

/// Resizes each distinct buffer once; repeated `Arc`s keep sharing.
fn resize_shared(frames: &[Arc<FrameBuffer>], out_h: usize, out_w: usize) -> Vec<Arc<FrameBuffer>> {
    let mut unique: Vec<&Arc<FrameBuffer>> = Vec::new();
    let mut slot_of = HashMap::new();
    let slots: Vec<usize> = frames
        .iter()
        .map(|f| {
            *slot_of.entry(Arc::as_ptr(f)).or_insert_with(|| {
                unique.push(f);
                unique.len() - 1
            })
        })
        .collect();
    let resized: Vec<Arc<FrameBuffer>> = unique
        .par_iter()
        .map(|f| Arc::new(bilinear_resize(f, out_h, out_w)))
        .collect();
    slots.into_iter().map(|s| Arc::clone(&resized[s])).collect()
}

/// One pyramid level. Frames not requested at build time are absent.
#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub scale_id: usize,
    pub height: usize,
    pub width: usize,
    frames: Vec<Option<Arc<FrameBuffer>>>,
}

impl PyramidLevel {
    pub fn new(scale_id: usize, frames: Vec<Option<Arc<FrameBuffer>>>) -> Result<Self> {
        let dims = frames
            .iter()
            .flatten()
            .map(|f| f.dims())
            .next()
            .ok_or_else(|| Error::InvalidFrame(format!("level {scale_id} has no frames")))?;
        if frames.iter().flatten().any(|f| f.dims() != dims) {
            return Err(Error::DimMismatch(format!(
                "level {scale_id} mixes frame sizes"
            )));
        }
        Ok(PyramidLevel {
            scale_id,
            height: dims.0,
            width: dims.1,
            frames,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, i: usize) -> Option<&FrameBuffer> {
        self.frames.get(i).and_then(|f| f.as_deref())
    }

    pub fn shared_frame(&self, i: usize) -> Option<&Arc<FrameBuffer>> {
        self.frames.get(i).and_then(|f| f.as_ref())
    }

    /// Number of frames actually materialized.
    pub fn present_frames(&self) -> usize {
        self.frames.iter().flatten().count()
    }
}

/// Min-side of the coarsest level for these raw dims under `config`.
pub fn target_for(config: &SamplerConfig, raw_h: usize, raw_w: usize) -> usize {
    coarsest_min_side(raw_h, raw_w, config.out_height(), config.out_width())
}

/// Schedule the pipeline uses for media of the given raw size (after upscaling).
pub fn pyramid_schedule(
    config: &SamplerConfig,
    raw_h: usize,
    raw_w: usize,
) -> Result<ScaleSchedule> {
    let target = target_for(config, raw_h, raw_w);
    let (h, w) = if raw_h.min(raw_w) < target {
        dims_for_min_side(raw_h, raw_w, target)
    } else {
        (raw_h, raw_w)
    };
    scale_schedule(h, w, target, config.n_scales)
}

/// Full pyramid: every level holds every frame.
pub fn build_pyramid(media: &Media, config: &SamplerConfig) -> Result<Vec<PyramidLevel>> {
    build_pyramid_with(media, config, |_, _| true)
}

/// Pyramid restricted to the `(scale_id, frame)` pairs for which `wanted` holds.
///
/// Level 0 shares the (possibly upscaled) input buffers. Every other level
/// resamples each distinct source buffer once, in parallel.
pub fn build_pyramid_with(
    media: &Media,
    config: &SamplerConfig,
    wanted: impl Fn(usize, usize) -> bool + Sync,
) -> Result<Vec<PyramidLevel>> {
    if config.n_scales == 0 {
        return Err(Error::InvalidConfig(
            "pyramid needs at least one level".into(),
        ));
    }
    let (raw_h, raw_w) = media.dims();
    let target = target_for(config, raw_h, raw_w);
    let base = upscale_if_small(media.clone(), target);
    let (h, w) = base.dims();
    let schedule = scale_schedule(h, w, target, config.n_scales)?;
    let sources = base.shared_frames();

    let mut jobs: Vec<(usize, &Arc<FrameBuffer>)> = Vec::new();
    let mut plan: Vec<Vec<Option<usize>>> = Vec::with_capacity(schedule.len());
    for scale in 0..schedule.len() {
        let mut seen: HashMap<*const FrameBuffer, usize> = HashMap::new();
        let row = sources
            .iter()
            .enumerate()
            .map(|(i, src)| {
                if scale == 0 || !wanted(scale, i) {
                    return None;
                }
                let key = Arc::as_ptr(src);
                Some(*seen.entry(key).or_insert_with(|| {
                    jobs.push((scale, src));
                    jobs.len() - 1
                }))
            })
            .collect();
        plan.push(row);
    }

    let resized: Vec<Arc<FrameBuffer>> = jobs
        .par_iter()
        .map(|&(scale, src)| {
            let (lh, lw) = schedule.levels()[scale];
            Arc::new(bilinear_resize(src, lh, lw))
        })
        .collect();

    plan.into_iter()
        .enumerate()
        .map(|(scale, row)| {
            let frames = if scale == 0 {
                sources
                    .iter()
                    .enumerate()
                    .map(|(i, src)| wanted(0, i).then(|| Arc::clone(src)))
                    .collect::<Vec<_>>()
            } else {
                row.into_iter()
                    .map(|job| job.map(|j| Arc::clone(&resized[j])))
                    .collect()
            };
            let (lh, lw) = schedule.levels()[scale];
            if frames.iter().all(Option::is_none) {
                return Ok(PyramidLevel {
                    scale_id: scale,
                    height: lh,
                    width: lw,
                    frames,
                });
            }
            PyramidLevel::new(scale, frames)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent scalar bilinear: evaluates the half-pixel formula per sample.
    fn oracle_resize(frame: &FrameBuffer, out_h: usize, out_w: usize) -> FrameBuffer {
        let (in_h, in_w) = frame.dims();
        FrameBuffer::from_fn(out_h, out_w, |y, x| {
            let sy = ((y as f64 + 0.5) * in_h as f64 / out_h as f64 - 0.5)
                .max(0.0)
                .min((in_h - 1) as f64);
            let sx = ((x as f64 + 0.5) * in_w as f64 / out_w as f64 - 0.5)
                .max(0.0)
                .min((in_w - 1) as f64);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(in_h - 1), (x0 + 1).min(in_w - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let mut px = [0u8; 3];
            for c in 0..3 {
                let p = |yy: usize, xx: usize| frame.pixel(yy, xx)[c] as f64;
                let top = (1.0 - fx) * p(y0, x0) + fx * p(y0, x1);
                let bot = (1.0 - fx) * p(y1, x0) + fx * p(y1, x1);
                let v = (1.0 - fy) * top + fy * bot;
                px[c] = (v.max(0.0).min(255.0) + 0.5).floor() as u8;
            }
            px
        })
    }

    fn noise_frame(h: usize, w: usize, salt: u32) -> FrameBuffer {
        FrameBuffer::from_fn(h, w, |y, x| {
            let v = (y as u32 * 7919 + x as u32 * 104_729 + salt).wrapping_mul(2_654_435_761);
            [(v >> 24) as u8, (v >> 16) as u8, (v >> 8) as u8]
        })
    }

    #[test]
    fn two_level_schedule_1080p() {
        let s = scale_schedule(1080, 1920, 224, 2).unwrap();
        assert_eq!(s.levels(), &[(1080, 1920), (224, 398)]);
    }

    #[test]
    fn single_level_schedule() {
        let s = scale_schedule(224, 224, 224, 1).unwrap();
        assert_eq!(s.levels(), &[(224, 224)]);
    }

    #[test]
    fn sixteen_level_schedule_matches_linear_oracle() {
        let s = scale_schedule(1080, 1920, 224, 16).unwrap();
        assert_eq!(s.len(), 16);
        for (k, &m) in s.min_sides().iter().enumerate() {
            let exact = 1080.0 - k as f64 * 856.0 / 15.0;
            assert!((m as f64 - exact).abs() <= 0.5, "level {k}: {m} vs {exact}");
            assert_eq!(m, (exact + 0.5).floor() as usize);
        }
        assert_eq!(*s.min_sides().last().unwrap(), 224);
        assert!(s.min_sides().windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn portrait_schedule_keeps_orientation() {
        let s = scale_schedule(1920, 1080, 224, 2).unwrap();
        assert_eq!(s.levels()[1], (398, 224));
    }

    #[test]
    fn too_small_input_rejected() {
        assert!(matches!(
            scale_schedule(100, 200, 224, 2),
            Err(Error::InputTooSmall { .. })
        ));
    }

    #[test]
    fn non_square_output_coverage() {
        // Portrait source, landscape mosaic: min-side must grow to 256.
        assert_eq!(coarsest_min_side(400, 224, 224, 256), 256);
        assert_eq!(coarsest_min_side(1080, 1920, 224, 224), 224);
    }

    #[test]
    fn half_pixel_example() {
        let frame = FrameBuffer::from_fn(2, 2, |_, x| if x == 0 { [0; 3] } else { [255; 3] });
        let out = bilinear_resize(&frame, 2, 1);
        assert_eq!(out.data(), &[128, 128, 128, 128, 128, 128]);
        assert_eq!(out, oracle_resize(&frame, 2, 1));
    }

    #[test]
    fn constant_frames_stay_constant() {
        let frame = FrameBuffer::filled(37, 91, [17, 130, 250]);
        for (h, w) in [(5, 5), (37, 91), (100, 13), (1, 1)] {
            let out = bilinear_resize(&frame, h, w);
            assert_eq!(out, FrameBuffer::filled(h, w, [17, 130, 250]));
        }
    }

    #[test]
    fn identity_resize_is_byte_exact() {
        let frame = noise_frame(23, 41, 3);
        assert_eq!(bilinear_resize(&frame, 23, 41), frame);
    }

    #[test]
    fn matches_scalar_oracle() {
        let frame = noise_frame(31, 47, 11);
        for (h, w) in [(7, 9), (31, 20), (64, 100), (1, 47), (13, 1)] {
            assert_eq!(bilinear_resize(&frame, h, w), oracle_resize(&frame, h, w));
        }
    }

    #[test]
    fn gradient_plane_within_one_step() {
        // Upsample a linear ramp, then resize again: interior samples must sit
        // on the analytic plane within one intensity step.
        let ramp = FrameBuffer::from_fn(16, 16, |y, x| {
            [(x * 8) as u8, (y * 8) as u8, (x * 4 + y * 4) as u8]
        });
        let up = bilinear_resize(&ramp, 64, 64);
        let down = bilinear_resize(&up, 40, 40);
        for y in 0..40 {
            for x in 0..40 {
                // Map back to ramp coordinates through both half-pixel transforms.
                let uy = (y as f64 + 0.5) * 64.0 / 40.0 - 0.5;
                let ux = (x as f64 + 0.5) * 64.0 / 40.0 - 0.5;
                let ry = (uy + 0.5) * 16.0 / 64.0 - 0.5;
                let rx = (ux + 0.5) * 16.0 / 64.0 - 0.5;
                if !(0.0..=15.0).contains(&ry) || !(0.0..=15.0).contains(&rx) {
                    continue;
                }
                if uy < 0.0 || ux < 0.0 || uy > 63.0 || ux > 63.0 {
                    continue;
                }
                let px = down.pixel(y, x);
                assert!((px[0] as f64 - rx * 8.0).abs() <= 1.0, "x-ramp at {y},{x}");
                assert!((px[1] as f64 - ry * 8.0).abs() <= 1.0, "y-ramp at {y},{x}");
            }
        }
    }

    #[test]
    fn upscale_small_media() {
        let img = Media::Image(Arc::new(FrameBuffer::filled(100, 200, [1, 2, 3])));
        assert_eq!(upscale_if_small(img, 224).dims(), (224, 448));
        let img = Media::Image(Arc::new(FrameBuffer::filled(224, 448, [1, 2, 3])));
        assert_eq!(upscale_if_small(img, 224).dims(), (224, 448));
        let Media::Image(dot) = upscale_if_small(
            Media::Image(Arc::new(FrameBuffer::filled(1, 1, [9, 8, 7]))),
            224,
        ) else {
            unreachable!()
        };
        assert_eq!(*dot, FrameBuffer::filled(224, 224, [9, 8, 7]));
    }

    #[test]
    fn pyramid_levels_follow_schedule() {
        let media = Media::Image(Arc::new(noise_frame(1080, 1920, 0)));
        let cfg = SamplerConfig {
            grid_rows: 7,
            grid_cols: 7,
            ..SamplerConfig::iqa()
        };
        let levels = build_pyramid(&media, &cfg).unwrap();
        let dims: Vec<_> = levels.iter().map(|l| (l.height, l.width)).collect();
        assert_eq!(dims, vec![(1080, 1920), (224, 398)]);
        let Media::Image(raw) = &media else {
            unreachable!()
        };
        assert_eq!(levels[0].frame(0).unwrap(), &**raw);
    }

    #[test]
    fn single_level_pyramid_is_raw() {
        let raw = noise_frame(300, 260, 1);
        let cfg = SamplerConfig {
            n_scales: 1,
            spatial_mask: crate::config::SpatialMaskKind::None,
            ..SamplerConfig::vqa()
        };
        let levels = build_pyramid(&Media::Image(Arc::new(raw.clone())), &cfg).unwrap();
        assert_eq!(levels.len(), 1);
        assert_eq!(levels[0].frame(0).unwrap(), &raw);
    }

    #[test]
    fn video_pyramid_conserves_frames() {
        let frames: Vec<_> = (0..32).map(|i| noise_frame(54, 96, i)).collect();
        let clip = MediaClip::new(frames).unwrap();
        let cfg = SamplerConfig {
            grid_rows: 4,
            grid_cols: 4,
            frag_h: 8,
            frag_w: 8,
            ..SamplerConfig::vqa()
        };
        let levels = build_pyramid(&Media::Video(clip.clone()), &cfg).unwrap();
        let schedule = scale_schedule(54, 96, 32, 16).unwrap();
        assert_eq!(levels.len(), 16);
        for (level, &dims) in levels.iter().zip(schedule.levels()) {
            assert_eq!(level.frame_count(), 32);
            assert_eq!(level.present_frames(), 32);
            assert_eq!((level.height, level.width), dims);
            for i in [0, 17, 31] {
                assert_eq!(
                    level.frame(i).unwrap(),
                    &bilinear_resize(clip.frame(i), dims.0, dims.1)
                );
            }
        }
    }

    #[test]
    fn sparse_pyramid_skips_unwanted_frames() {
        let clip = MediaClip::new((0..4).map(|i| noise_frame(64, 64, i)).collect()).unwrap();
        let cfg = SamplerConfig {
            grid_rows: 2,
            grid_cols: 2,
            frag_h: 8,
            frag_w: 8,
            frames_out: 4,
            n_scales: 2,
            ..SamplerConfig::vqa()
        };
        let levels = build_pyramid_with(&Media::Video(clip), &cfg, |s, f| f / 2 == s).unwrap();
        assert!(levels[0].frame(0).is_some() && levels[0].frame(2).is_none());
        assert!(levels[1].frame(3).is_some() && levels[1].frame(1).is_none());
        assert_eq!((levels[1].height, levels[1].width), (16, 16));
    }

    #[test]
    fn repeated_frames_share_one_resize() {
        let frame = Arc::new(noise_frame(300, 300, 2));
        let clip = MediaClip::from_shared(vec![Arc::clone(&frame); 8]).unwrap();
        let cfg = SamplerConfig {
            frames_out: 8,
            n_scales: 4,
            ..SamplerConfig::vqa()
        };
        let levels = build_pyramid(&Media::Video(clip), &cfg).unwrap();
        for level in &levels {
            let first = level.shared_frame(0).unwrap();
            assert!((1..8).all(|i| Arc::ptr_eq(first, level.shared_frame(i).unwrap())));
        }
    }
}
