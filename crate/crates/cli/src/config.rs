//! Run configuration: regime defaults, then an optional JSON file, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use sama_core::{OffsetPolicy, SamplerConfig, SpatialMaskKind, TemporalMaskKind};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// JSON run configuration. Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid_rows: Option<usize>,
    pub grid_cols: Option<usize>,
    pub frag_h: Option<usize>,
    pub frag_w: Option<usize>,
    pub frames_out: Option<usize>,
    pub n_scales: Option<usize>,
    pub spatial_mask: Option<SpatialMaskKind>,
    pub temporal_mask: Option<TemporalMaskKind>,
    pub offset_policy: Option<OffsetPolicy>,
    pub seed: Option<u64>,
    pub aligned_offsets: Option<bool>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub preview: Option<String>,
    pub bench_reps: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Which experiment regime supplies the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Image,
    Video,
}

impl Regime {
    pub fn defaults(self) -> SamplerConfig {
        match self {
            Regime::Image => SamplerConfig::iqa(),
            Regime::Video => SamplerConfig::vqa(),
        }
    }
}

pub fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected AxB, got `{s}`"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("`{v}` is not a positive integer"))
            .and_then(|n| {
                if n == 0 {
                    Err("dimensions must be >= 1".to_string())
                } else {
                    Ok(n)
                }
            })
    };
    Ok((parse(a)?, parse(b)?))
}

fn parse_from_str<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

/// Sampler flags shared by the sampling subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct SamplerArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Fragment grid, rows x columns.
    #[arg(long, value_name = "RxC", value_parser = parse_pair)]
    pub grid: Option<(usize, usize)>,
    /// Fragment size, height x width.
    #[arg(long, value_name = "HxW", value_parser = parse_pair)]
    pub frag: Option<(usize, usize)>,
    /// Output frames (video).
    #[arg(long, value_name = "N")]
    pub frames: Option<usize>,
    /// Pyramid levels; derived from the masks when omitted.
    #[arg(long, value_name = "N")]
    pub scales: Option<usize>,
    /// none, window or patch.
    #[arg(long, value_name = "KIND", value_parser = parse_from_str::<SpatialMaskKind>)]
    pub spatial_mask: Option<SpatialMaskKind>,
    /// none, progressive, choppy or mixed.
    #[arg(long, value_name = "KIND", value_parser = parse_from_str::<TemporalMaskKind>)]
    pub temporal_mask: Option<TemporalMaskKind>,
    /// random or center.
    #[arg(long, value_name = "POLICY", value_parser = parse_from_str::<OffsetPolicy>)]
    pub offset: Option<OffsetPolicy>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Reuse one offset draw across all pyramid levels.
    #[arg(long)]
    pub aligned_offsets: bool,
}

/// Fully merged settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub sampler: SamplerConfig,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub preview: Option<String>,
    pub bench_reps: Option<usize>,
}

/// Merges defaults, file and flags, in that order of precedence.
///
/// When no level count is given anywhere it follows from the masks: the
/// temporal schedule's level count, 2 for a spatial mask alone, else 1.
pub fn resolve(regime: Regime, file: Option<&RunConfig>, args: &SamplerArgs) -> Resolved {
    let empty = RunConfig::default();
    let file = file.unwrap_or(&empty);
    let mut c = regime.defaults();

    let (rows, cols) = args.grid.unwrap_or((
        file.grid_rows.unwrap_or(c.grid_rows),
        file.grid_cols.unwrap_or(c.grid_cols),
    ));
    let (fh, fw) = args.frag.unwrap_or((
        file.frag_h.unwrap_or(c.frag_h),
        file.frag_w.unwrap_or(c.frag_w),
    ));
    c.grid_rows = rows;
    c.grid_cols = cols;
    c.frag_h = fh;
    c.frag_w = fw;
    c.frames_out = args.frames.or(file.frames_out).unwrap_or(c.frames_out);
    c.spatial_mask = args
        .spatial_mask
        .or(file.spatial_mask)
        .unwrap_or(c.spatial_mask);
    c.temporal_mask = args
        .temporal_mask
        .or(file.temporal_mask)
        .unwrap_or(c.temporal_mask);
    c.offset_policy = args
        .offset
        .or(file.offset_policy)
        .unwrap_or(c.offset_policy);
    c.seed = args.seed.or(file.seed).unwrap_or(c.seed);
    c.aligned_offsets = args.aligned_offsets || file.aligned_offsets.unwrap_or(c.aligned_offsets);
    c.n_scales = args.scales.or(file.n_scales).unwrap_or_else(|| {
        match (c.spatial_mask, c.temporal_mask) {
            (_, TemporalMaskKind::None) if c.spatial_mask != SpatialMaskKind::None => 2,
            (_, TemporalMaskKind::None) => 1,
            // Clamped so an image given a temporal mask fails on the mask, not the count.
            (_, t) => t.levels_for(c.frames_out).max(1),
        }
    });

    Resolved {
        sampler: c,
        input: file.input.clone(),
        out: file.out.clone(),
        preview: file.preview.clone(),
        bench_reps: file.bench_reps,
    }
}

/// Loads the file named by `--config` (if any), merges, and validates the sampler.
pub fn resolve_validated(regime: Regime, args: &SamplerArgs) -> CliResult<Resolved> {
    let file = args.config.as_deref().map(RunConfig::load).transpose()?;
    let resolved = resolve(regime, file.as_ref(), args);
    resolved
        .sampler
        .validate(regime == Regime::Video)
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(resolved)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs() {
        assert_eq!(parse_pair("7x7"), Ok((7, 7)));
        assert_eq!(parse_pair("32X16"), Ok((32, 16)));
        assert!(parse_pair("7").is_err());
        assert!(parse_pair("0x3").is_err());
        assert!(parse_pair("ax3").is_err());
    }

    #[test]
    fn regime_defaults_pass_through() {
        let r = resolve(Regime::Image, None, &SamplerArgs::default());
        assert_eq!(r.sampler, SamplerConfig::iqa());
        let r = resolve(Regime::Video, None, &SamplerArgs::default());
        assert_eq!(r.sampler, SamplerConfig::vqa());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = RunConfig::parse(
            r#"{"grid_rows": 4, "grid_cols": 4, "seed": 9, "frag_h": 16, "frag_w": 16}"#,
        )
        .unwrap();
        let args = SamplerArgs {
            seed: Some(11),
            ..Default::default()
        };
        let r = resolve(Regime::Image, Some(&file), &args);
        assert_eq!(
            (r.sampler.grid_rows, r.sampler.frag_h, r.sampler.seed),
            (4, 16, 11)
        );
    }

    #[test]
    fn level_count_follows_masks() {
        let choppy = SamplerArgs {
            temporal_mask: Some(TemporalMaskKind::Choppy),
            ..Default::default()
        };
        assert_eq!(resolve(Regime::Video, None, &choppy).sampler.n_scales, 2);
        let mixed = SamplerArgs {
            temporal_mask: Some(TemporalMaskKind::Mixed),
            ..Default::default()
        };
        assert_eq!(resolve(Regime::Video, None, &mixed).sampler.n_scales, 8);
        let short = SamplerArgs {
            frames: Some(8),
            ..Default::default()
        };
        assert_eq!(resolve(Regime::Video, None, &short).sampler.n_scales, 4);
        let plain = SamplerArgs {
            spatial_mask: Some(SpatialMaskKind::None),
            ..Default::default()
        };
        assert_eq!(resolve(Regime::Image, None, &plain).sampler.n_scales, 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::parse(r#"{"grid_rows": 4, "colour": "red"}"#),
            Err(CliError::Config(_))
        ));
        assert!(RunConfig::parse(r#"{"spatial_mask": "diagonal"}"#).is_err());
        assert!(
            RunConfig::parse(r#"{"spatial_mask": "patch", "offset_policy": "random"}"#).is_ok()
        );
    }
}
