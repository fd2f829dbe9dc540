//! End-to-end sampling: pyramid, fragment offsets, masked gather.
//!
//! The pipeline never materializes a full mosaic per scale. Each output pixel
//! is fetched directly from the level its mask selects, so the gather touches
//! exactly `H x W x T` pixels whatever the number of scales. Only the pyramid
//! stage grows with `n_scales`, and it only resamples the frames the mask
//! actually reads.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::config::{SamplerConfig, SpatialMaskKind, TemporalMaskKind};
use crate::error::{Error, Result};
use crate::fragments::{level_offsets, sample_fragments, FragmentMosaic};
use crate::masks::{
    compose_spatial, compose_temporal, make_spatial_mask, make_temporal_mask, ScaleMap, SpatialMask,
};
use crate::media::{select_frames, FrameBuffer, Media, MediaClip};
use crate::pyramid::{build_pyramid, build_pyramid_with, PyramidLevel};
use crate::tensor::{ProvenanceEntry, SampleMeta, SampledTensor, TensorKind};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub pyramid: Duration,
    pub fragments: Duration,
    pub compose: Duration,
}

#[derive(Debug, Clone)]
pub struct SampleRun {
    pub tensor: SampledTensor,
    /// The (sparse) pyramid the tensor was gathered from.
    pub pyramid: Vec<PyramidLevel>,
    pub timings: StageTimings,
    pub warnings: Vec<String>,
}

/// Which scale supplies the pixels of one output frame.
#[derive(Debug, Clone)]
enum FramePlan {
    Uniform(usize),
    Map(Arc<ScaleMap>),
}

impl FramePlan {
    fn scales(&self) -> Vec<usize> {
        match self {
            FramePlan::Uniform(s) => vec![*s],
            FramePlan::Map(map) => {
                let mut seen = [false; 256];
                map.scales().iter().for_each(|&s| seen[s as usize] = true);
                (0..256).filter(|&s| seen[s]).collect()
            }
        }
    }
}

struct Plan {
    frames: Vec<FramePlan>,
    schedule: Vec<u8>,
}

fn plan(config: &SamplerConfig, frames: usize) -> Result<Plan> {
    let (h, w) = (config.out_height(), config.out_width());
    let spatial = match config.spatial_mask {
        SpatialMaskKind::None => None,
        kind => Some(make_spatial_mask(kind, h, w)?),
    };
    let temporal = match config.temporal_mask {
        TemporalMaskKind::None => None,
        kind => Some(make_temporal_mask(kind, frames, config.n_scales)?),
    };
    let plan = match (spatial, temporal) {
        (None, None) => Plan {
            frames: vec![FramePlan::Uniform(0); frames],
            schedule: Vec::new(),
        },
        (Some(mask), None) => {
            let map = Arc::new(mask.to_scale_map(0, 1));
            Plan {
                frames: vec![FramePlan::Map(map); frames],
                schedule: Vec::new(),
            }
        }
        (None, Some(mask)) => Plan {
            frames: mask
                .per_frame()
                .into_iter()
                .map(FramePlan::Uniform)
                .collect(),
            schedule: mask.schedule().iter().map(|&s| s as u8).collect(),
        },
        (Some(spatial), Some(mask)) => {
            let last = config.n_scales - 1;
            let mut maps: HashMap<usize, Arc<ScaleMap>> = HashMap::new();
            let frames = mask
                .per_frame()
                .into_iter()
                .map(|s| {
                    let map = maps.entry(s).or_insert_with(|| {
                        Arc::new(spatial.to_scale_map(s as u8, (s + 1).min(last) as u8))
                    });
                    FramePlan::Map(Arc::clone(map))
                })
                .collect();
            Plan {
                frames,
                schedule: mask.schedule().iter().map(|&s| s as u8).collect(),
            }
        }
    };
    Ok(plan)
}

fn meta_for(config: &SamplerConfig, schedule: Vec<u8>) -> SampleMeta {
    SampleMeta {
        n_scales: config.n_scales as u8,
        spatial_mask: config.spatial_mask,
        temporal_mask: config.temporal_mask,
        seed: config.seed,
        schedule,
    }
}

/// Samples a still image.
pub fn sample_image(frame: &FrameBuffer, config: &SamplerConfig) -> Result<SampleRun> {
    config.validate(false)?;
    run(&Media::Image(Arc::new(frame.clone())), config)
}

/// Selects `frames_out` frames from `clip` and samples them.
pub fn sample_video(clip: &MediaClip, config: &SamplerConfig) -> Result<SampleRun> {
    config.validate(true)?;
    let selected = select_frames(clip, config.frames_out, config.offset_policy, config.seed)?;
    run(&Media::Video(selected), config)
}

fn run(media: &Media, config: &SamplerConfig) -> Result<SampleRun> {
    let frames = media.frame_count();
    let plan = plan(config, frames)?;
    let uses: Vec<Vec<bool>> = plan
        .frames
        .iter()
        .map(|p| {
            let mut row = vec![false; config.n_scales];
            p.scales().into_iter().for_each(|s| row[s] = true);
            row
        })
        .collect();

    let start = Instant::now();
    let pyramid = build_pyramid_with(media, config, |s, f| uses[f][s])?;
    let pyramid_time = start.elapsed();

    let start = Instant::now();
    let offsets = pyramid
        .iter()
        .map(|level| {
            if level.present_frames() == 0 {
                return Ok(None);
            }
            level_offsets(level.height, level.width, level.scale_id, config).map(|(_, o)| Some(o))
        })
        .collect::<Result<Vec<_>>>()?;
    let fragments_time = start.elapsed();

    let start = Instant::now();
    let (h, w) = (config.out_height(), config.out_width());
    let mut data = vec![0u8; frames * h * w * 3];
    let mut prov = vec![ProvenanceEntry::default(); frames * h * w];
    data.par_chunks_mut(h * w * 3)
        .zip(prov.par_chunks_mut(h * w))
        .enumerate()
        .for_each(|(t, (out, out_prov))| {
            gather_frame(
                t,
                &plan.frames[t],
                &pyramid,
                &offsets,
                config,
                out,
                out_prov,
            )
        });
    let kind = if media.is_video() {
        TensorKind::Video
    } else {
        TensorKind::Image
    };
    let tensor = SampledTensor::new(
        kind,
        h,
        w,
        frames,
        data,
        Some(prov),
        meta_for(config, plan.schedule),
    )?;
    let compose_time = start.elapsed();

    Ok(SampleRun {
        tensor,
        pyramid,
        timings: StageTimings {
            pyramid: pyramid_time,
            fragments: fragments_time,
            compose: compose_time,
        },
        warnings: config.warnings(),
    })
}

fn gather_frame(
    t: usize,
    plan: &FramePlan,
    pyramid: &[PyramidLevel],
    offsets: &[Option<Vec<(usize, usize)>>],
    config: &SamplerConfig,
    out: &mut [u8],
    out_prov: &mut [ProvenanceEntry],
) {
    let (fh, fw, cols) = (config.frag_h, config.frag_w, config.grid_cols);
    let w = cols * fw;
    let source = |s: usize| -> (&FrameBuffer, &[(usize, usize)]) {
        let frame = pyramid[s].frame(t).expect("planned frame was built");
        let offsets = offsets[s].as_deref().expect("planned level has offsets");
        (frame, offsets)
    };
    let entry = |s: usize, sy: usize, sx: usize| ProvenanceEntry {
        scale_id: s as u8,
        src_frame: t as u16,
        src_y: sy as u32,
        src_x: sx as u32,
    };
    match plan {
        FramePlan::Uniform(s) => {
            let (frame, offsets) = source(*s);
            for (cell, &(oy, ox)) in offsets.iter().enumerate() {
                let (r, c) = (cell / cols, cell % cols);
                for dy in 0..fh {
                    let y = r * fh + dy;
                    let start = y * w + c * fw;
                    out[start * 3..(start + fw) * 3]
                        .copy_from_slice(&frame.row(oy + dy)[ox * 3..(ox + fw) * 3]);
                    for dx in 0..fw {
                        out_prov[start + dx] = entry(*s, oy + dy, ox + dx);
                    }
                }
            }
        }
        FramePlan::Map(map) => {
            let mut sources: Vec<Option<(&FrameBuffer, &[(usize, usize)])>> =
                vec![None; pyramid.len()];
            for s in plan.scales() {
                sources[s] = Some(source(s));
            }
            // Copy maximal runs that stay inside one fragment and one scale.
            for y in 0..map.height {
                let (r, dy) = (y / fh, y % fh);
                let scales = &map.scales()[y * w..(y + 1) * w];
                let mut x = 0;
                while x < w {
                    let s = scales[x];
                    let cell_end = (x / fw + 1) * fw;
                    let end = scales[x + 1..cell_end]
                        .iter()
                        .position(|&v| v != s)
                        .map_or(cell_end, |k| x + 1 + k);
                    let s = s as usize;
                    let (frame, offsets) = sources[s].expect("scale in map");
                    let (oy, ox) = offsets[r * cols + x / fw];
                    let (sy, sx) = (oy + dy, ox + x % fw);
                    let i = y * w + x;
                    let n = end - x;
                    out[i * 3..(i + n) * 3].copy_from_slice(&frame.row(sy)[sx * 3..(sx + n) * 3]);
                    for k in 0..n {
                        out_prov[i + k] = entry(s, sy, sx + k);
                    }
                    x = end;
                }
            }
        }
    }
}

/// Reference implementation through the explicit per-scale mosaics.
///
/// Builds the full pyramid, gathers a complete mosaic at every level and
/// composes with the standalone mask operators. `media` must already hold the
/// frames to sample (no frame selection happens here). Slow; used to
/// cross-check the fused pipeline.
pub fn sample_unfused(
    media: &Media,
    config: &SamplerConfig,
) -> Result<(SampledTensor, Vec<PyramidLevel>)> {
    config.validate(media.is_video())?;
    let frames = media.frame_count();
    let pyramid = build_pyramid(media, config)?;
    let mosaics = pyramid
        .iter()
        .map(|level| sample_fragments(level, config))
        .collect::<Result<Vec<FragmentMosaic>>>()?;
    let (h, w) = (config.out_height(), config.out_width());

    let composed = match (config.spatial_mask, config.temporal_mask) {
        (SpatialMaskKind::None, TemporalMaskKind::None) => {
            let all = SpatialMask::from_bitmap(SpatialMaskKind::None, 1, h, w, vec![1; h * w])?;
            compose_spatial(&mosaics[0], &mosaics[0], &all)?
        }
        (kind, TemporalMaskKind::None) => {
            let mask = make_spatial_mask(kind, h, w)?;
            compose_spatial(&mosaics[0], &mosaics[1], &mask)?
        }
        (SpatialMaskKind::None, kind) => {
            let mask = make_temporal_mask(kind, frames, config.n_scales)?;
            compose_temporal(&mosaics, &mask)?
        }
        (spatial_kind, temporal_kind) => {
            let spatial = make_spatial_mask(spatial_kind, h, w)?;
            let schedule = make_temporal_mask(temporal_kind, frames, config.n_scales)?;
            let last = config.n_scales - 1;
            let mut data = Vec::with_capacity(frames * h * w * 3);
            let mut prov = Vec::with_capacity(frames * h * w);
            for (k, &s) in schedule.schedule().iter().enumerate() {
                let pair = compose_spatial(&mosaics[s], &mosaics[(s + 1).min(last)], &spatial)?;
                for t in [2 * k, 2 * k + 1] {
                    data.extend_from_slice(pair.frame_data(t));
                    let p = pair.provenance.as_ref().ok_or(Error::MissingProvenance)?;
                    prov.extend_from_slice(&p[t * h * w..(t + 1) * h * w]);
                }
            }
            SampledTensor::new(
                TensorKind::Video,
                h,
                w,
                frames,
                data,
                Some(prov),
                meta_for(config, vec![]),
            )?
        }
    };
    let kind = if media.is_video() {
        TensorKind::Video
    } else {
        TensorKind::Image
    };
    let schedule = match config.temporal_mask {
        TemporalMaskKind::None => Vec::new(),
        kind => make_temporal_mask(kind, frames, config.n_scales)?
            .schedule()
            .iter()
            .map(|&s| s as u8)
            .collect(),
    };
    let tensor = SampledTensor::new(
        kind,
        h,
        w,
        frames,
        composed.data,
        composed.provenance,
        meta_for(config, schedule),
    )?;
    Ok((tensor, pyramid))
}
