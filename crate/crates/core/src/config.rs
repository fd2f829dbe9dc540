use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial checkerboard interlacing between two pyramid scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialMaskKind {
    None,
    /// 32px tiles, one attention window each.
    Window,
    /// 4px tiles, one embedding patch each.
    Patch,
}

impl SpatialMaskKind {
    pub const WINDOW_BLOCK: usize = 32;
    pub const PATCH_BLOCK: usize = 4;

    pub fn block(self) -> Option<usize> {
        match self {
            SpatialMaskKind::None => None,
            SpatialMaskKind::Window => Some(Self::WINDOW_BLOCK),
            SpatialMaskKind::Patch => Some(Self::PATCH_BLOCK),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            SpatialMaskKind::None => 0,
            SpatialMaskKind::Window => 1,
            SpatialMaskKind::Patch => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SpatialMaskKind::None),
            1 => Some(SpatialMaskKind::Window),
            2 => Some(SpatialMaskKind::Patch),
            _ => None,
        }
    }
}

/// Assignment of pyramid levels to frame pairs along time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalMaskKind {
    None,
    Progressive,
    Choppy,
    Mixed,
}

impl TemporalMaskKind {
    pub fn code(self) -> u8 {
        match self {
            TemporalMaskKind::None => 0,
            TemporalMaskKind::Progressive => 1,
            TemporalMaskKind::Choppy => 2,
            TemporalMaskKind::Mixed => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(TemporalMaskKind::None),
            1 => Some(TemporalMaskKind::Progressive),
            2 => Some(TemporalMaskKind::Choppy),
            3 => Some(TemporalMaskKind::Mixed),
            _ => None,
        }
    }

    /// Number of pyramid levels the schedule addresses for `frames` output frames.
    pub fn levels_for(self, frames: usize) -> usize {
        match self {
            TemporalMaskKind::None => 1,
            TemporalMaskKind::Progressive => frames / 2,
            TemporalMaskKind::Choppy => 2,
            TemporalMaskKind::Mixed => frames / 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffsetPolicy {
    Random,
    Center,
}

macro_rules! impl_enum_text {
    ($ty:ty { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(<$ty>::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok(<$ty>::$variant),)+
                    other => Err(Error::InvalidConfig(format!(
                        "unknown {} `{}`",
                        stringify!($ty),
                        other
                    ))),
                }
            }
        }
    };
}

impl_enum_text!(SpatialMaskKind { None => "none", Window => "window", Patch => "patch" });
impl_enum_text!(TemporalMaskKind {
    None => "none",
    Progressive => "progressive",
    Choppy => "choppy",
    Mixed => "mixed",
});
impl_enum_text!(OffsetPolicy { Random => "random", Center => "center" });

/// Everything the sampler needs besides the pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub frag_h: usize,
    pub frag_w: usize,
    /// Output frame count; ignored for images.
    pub frames_out: usize,
    /// Total pyramid levels including the raw level.
    pub n_scales: usize,
    pub spatial_mask: SpatialMaskKind,
    pub temporal_mask: TemporalMaskKind,
    pub offset_policy: OffsetPolicy,
    pub seed: u64,
    /// Reuse one grid-relative offset draw per cell across all pyramid levels.
    pub aligned_offsets: bool,
}

impl SamplerConfig {
    /// 8x8 grid of 32px fragments (256x256), two scales, window mask.
    pub fn iqa() -> Self {
        SamplerConfig {
            grid_rows: 8,
            grid_cols: 8,
            frag_h: 32,
            frag_w: 32,
            frames_out: 1,
            n_scales: 2,
            spatial_mask: SpatialMaskKind::Window,
            temporal_mask: TemporalMaskKind::None,
            offset_policy: OffsetPolicy::Center,
            seed: 0,
            aligned_offsets: false,
        }
    }

    /// 7x7 grid of 32px fragments (224x224), 32 frames, 16-level progressive schedule.
    pub fn vqa() -> Self {
        SamplerConfig {
            grid_rows: 7,
            grid_cols: 7,
            frag_h: 32,
            frag_w: 32,
            frames_out: 32,
            n_scales: 16,
            spatial_mask: SpatialMaskKind::None,
            temporal_mask: TemporalMaskKind::Progressive,
            offset_policy: OffsetPolicy::Center,
            seed: 0,
            aligned_offsets: false,
        }
    }

    pub fn out_height(&self) -> usize {
        self.grid_rows * self.frag_h
    }

    pub fn out_width(&self) -> usize {
        self.grid_cols * self.frag_w
    }

    /// Min-side of the coarsest pyramid level.
    pub fn target_min(&self) -> usize {
        self.out_height().min(self.out_width())
    }

    pub fn combines_masks(&self) -> bool {
        self.spatial_mask != SpatialMaskKind::None && self.temporal_mask != TemporalMaskKind::None
    }

    /// Checks the configuration for a video run (`video == true`) or an image run.
    pub fn validate(&self, video: bool) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return bad("grid must be at least 1x1".into());
        }
        if self.frag_h == 0 || self.frag_w == 0 {
            return bad("fragment must be at least 1x1".into());
        }
        if self.n_scales == 0 {
            return bad("n_scales must be at least 1".into());
        }
        if self.n_scales > u8::MAX as usize {
            return bad(format!("n_scales {} exceeds 255", self.n_scales));
        }
        if video {
            if self.frames_out == 0 {
                return bad("frames_out must be at least 1".into());
            }
            if self.frames_out > u16::MAX as usize {
                return bad(format!("frames_out {} exceeds 65535", self.frames_out));
            }
        } else if self.temporal_mask != TemporalMaskKind::None {
            return bad("temporal masks apply to video only".into());
        }

        if let Some(block) = self.spatial_mask.block() {
            let (h, w) = (self.out_height(), self.out_width());
            if h % block != 0 || w % block != 0 {
                return Err(Error::IndivisibleDims {
                    height: h,
                    width: w,
                    block,
                });
            }
            if !self.combines_masks() && self.n_scales != 2 {
                return bad(format!(
                    "spatial masks interlace exactly 2 scales, got {}",
                    self.n_scales
                ));
            }
        }

        if self.temporal_mask != TemporalMaskKind::None {
            let t = self.frames_out;
            if t % 2 != 0 {
                return bad(format!("frames_out {t} must be even for temporal masks"));
            }
            if self.temporal_mask == TemporalMaskKind::Mixed && t % 4 != 0 {
                return bad(format!(
                    "frames_out {t} must be a multiple of 4 for the mixed mask"
                ));
            }
            let levels = self.temporal_mask.levels_for(t);
            if levels != self.n_scales {
                return Err(Error::BadArity(format!(
                    "{} mask over {t} frames needs {levels} scales, config has {}",
                    self.temporal_mask, self.n_scales
                )));
            }
        }

        if self.n_scales > 1
            && self.spatial_mask == SpatialMaskKind::None
            && self.temporal_mask == TemporalMaskKind::None
        {
            return bad(format!(
                "{} scales requested but no mask selects between them",
                self.n_scales
            ));
        }
        Ok(())
    }

    /// Non-fatal remarks about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.combines_masks() {
            out.push(
                "spatial and temporal masks combined: experimental, each frame pair interlaces \
                 its scheduled level with the next coarser one"
                    .to_string(),
            );
        }
        out
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig::iqa()
    }
}
