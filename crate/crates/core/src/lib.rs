//! Scale-and-mask sampling of images and videos into fixed-size,
//! scale-interlaced fragment mosaics.
//!
//! The input is scaled into a pyramid whose min-side falls linearly from the
//! raw size to the model input size; one raw-resolution fragment is taken per
//! grid cell at every level; a spatial or temporal mask then picks, for each
//! output region, which level supplies it. Every output pixel carries its
//! provenance (scale, frame, source coordinates) so the gather can be audited.

pub mod config;
pub mod error;
pub mod fragments;
pub mod masks;
pub mod media;
pub mod pack;
pub mod pipeline;
pub mod pyramid;
pub mod rng;
pub mod tensor;

pub use config::{OffsetPolicy, SamplerConfig, SpatialMaskKind, TemporalMaskKind};
pub use error::{Error, Result};
pub use fragments::{choose_offsets, grid_partition, sample_fragments, FragmentMosaic, GridCell};
pub use masks::{
    compose_spatial, compose_temporal, make_interlace_mask, make_spatial_mask, make_temporal_mask,
    ScaleMap, SpatialMask, TemporalMask,
};
pub use media::{
    load_clip, load_image, select_frames, split_snippets, FrameBuffer, Media, MediaClip,
};
pub use pack::{
    provenance_audit, read_container, render_preview, write_container, AuditReport, PreviewStyle,
};
pub use pipeline::{sample_image, sample_unfused, sample_video, SampleRun, StageTimings};
pub use pyramid::{
    bilinear_resize, build_pyramid, scale_schedule, upscale_if_small, PyramidLevel, ScaleSchedule,
};
pub use tensor::{ProvenanceEntry, SampleMeta, SampledTensor, TensorKind};
