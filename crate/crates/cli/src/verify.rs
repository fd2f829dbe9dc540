//! Self-checks run by `sama verify`.

use sama_core::masks::ScaleMap;
use sama_core::pack::encode_container;
use sama_core::{
    make_interlace_mask, make_spatial_mask, make_temporal_mask, provenance_audit, sample_image,
    sample_video, MediaClip, OffsetPolicy, SamplerConfig, SpatialMaskKind, TemporalMaskKind,
};
use sama_head::property_suite;

use crate::bench::synthetic_frame;
use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Number of runs compared byte for byte in the determinism replay.
    pub seed_replay: usize,
    /// Random instances per head property.
    pub head_instances: usize,
    pub seed: u64,
    /// Corrupt one gathered pixel before auditing, to exercise the failure path.
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed_replay: 2,
            head_instances: 100,
            seed: 0,
            inject_fault: false,
        }
    }
}

fn image_configs(seed: u64) -> Vec<SamplerConfig> {
    [SpatialMaskKind::Window, SpatialMaskKind::Patch]
        .into_iter()
        .map(|spatial_mask| SamplerConfig {
            spatial_mask,
            offset_policy: OffsetPolicy::Random,
            seed,
            ..SamplerConfig::iqa()
        })
        .collect()
}

fn video_configs(seed: u64) -> Vec<SamplerConfig> {
    [
        TemporalMaskKind::Progressive,
        TemporalMaskKind::Choppy,
        TemporalMaskKind::Mixed,
    ]
    .into_iter()
    .map(|temporal_mask| SamplerConfig {
        temporal_mask,
        n_scales: temporal_mask.levels_for(32),
        offset_policy: OffsetPolicy::Random,
        seed,
        ..SamplerConfig::vqa()
    })
    .collect()
}

fn test_clip(frames: usize, h: usize, w: usize) -> MediaClip {
    MediaClip::new(
        (0..frames)
            .map(|i| synthetic_frame(h, w, i as u32))
            .collect(),
    )
    .expect("non-empty clip")
}

fn audit_images(opts: &VerifyOptions) -> CliResult<Check> {
    let mut runs = 0;
    let mut mismatches = 0;
    let mut fault_pending = opts.inject_fault;
    for (h, w) in [(1080, 1920), (300, 257), (1, 1)] {
        let frame = synthetic_frame(h, w, (h * w) as u32);
        for config in image_configs(opts.seed) {
            let mut run = sample_image(&frame, &config)?;
            if fault_pending {
                run.tensor.data[3 * 1000] ^= 0xFF;
                fault_pending = false;
            }
            mismatches += provenance_audit(&run.tensor, &run.pyramid).mismatches;
            runs += 1;
        }
    }
    Ok(Check::new(
        "provenance audit (images)",
        mismatches == 0,
        format!("{runs} runs, {mismatches} mismatched pixels"),
    ))
}

fn audit_videos(opts: &VerifyOptions) -> CliResult<Check> {
    let clip = test_clip(40, 240, 320);
    let mut runs = 0;
    let mut mismatches = 0;
    for config in video_configs(opts.seed) {
        let run = sample_video(&clip, &config)?;
        mismatches += provenance_audit(&run.tensor, &run.pyramid).mismatches;
        runs += 1;
    }
    Ok(Check::new(
        "provenance audit (videos)",
        mismatches == 0,
        format!("{runs} runs, {mismatches} mismatched pixels"),
    ))
}

fn partitions(map: &ScaleMap, n: usize) -> bool {
    let sums = (0..n as u8).fold(vec![0u32; map.height * map.width], |mut acc, s| {
        acc.iter_mut()
            .zip(map.indicator(s))
            .for_each(|(a, v)| *a += v as u32);
        acc
    });
    sums.iter().all(|&v| v == 1)
}

/// Per-scale indicators sum to one everywhere; checkerboard tile counts match.
pub fn mask_partition() -> CliResult<Check> {
    let mut ok = true;
    let mut notes = Vec::new();
    for (kind, side, expect) in [
        (SpatialMaskKind::Window, 224, (25, 24)),
        (SpatialMaskKind::Patch, 224, (1568, 1568)),
        (SpatialMaskKind::Window, 256, (32, 32)),
        (SpatialMaskKind::Patch, 256, (2048, 2048)),
    ] {
        let map = make_spatial_mask(kind, side, side)?.to_scale_map(0, 1);
        let block = kind.block().expect("masked kind has a block");
        let counts = map.tile_counts(block, 2);
        ok &= partitions(&map, 2) && (counts[0], counts[1]) == expect;
        notes.push(format!("{kind} {side}: {}/{}", counts[0], counts[1]));
    }
    for n in [3, 4] {
        for block in [32, 4] {
            let map = make_interlace_mask(n, 224, 224, block)?;
            ok &= partitions(&map, n);
        }
    }
    Ok(Check::new("mask partition", ok, notes.join(", ")))
}

/// The three schedules at T = 32 against their closed forms.
pub fn temporal_schedules() -> CliResult<Check> {
    let progressive = make_temporal_mask(TemporalMaskKind::Progressive, 32, 16)?.per_frame();
    let choppy = make_temporal_mask(TemporalMaskKind::Choppy, 32, 2)?.per_frame();
    let mixed = make_temporal_mask(TemporalMaskKind::Mixed, 32, 8)?.per_frame();
    let expect_progressive: Vec<usize> = (0..32).map(|t| t / 2).collect();
    let expect_choppy: Vec<usize> = (0..32).map(|t| (t / 2) % 2).collect();
    let expect_mixed: Vec<usize> = (0..32).map(|t| (t / 2) % 8).collect();
    let ok = progressive == expect_progressive && choppy == expect_choppy && mixed == expect_mixed;
    Ok(Check::new(
        "temporal schedules",
        ok,
        "progressive, choppy, mixed at T=32",
    ))
}

/// Repeats identical sampling runs and compares the serialized containers.
pub fn determinism(opts: &VerifyOptions) -> CliResult<Check> {
    let frame = synthetic_frame(720, 1280, 5);
    let clip = test_clip(64, 180, 320);
    let image_cfg = &image_configs(opts.seed)[0];
    let video_cfg = &video_configs(opts.seed)[0];
    let runs = opts.seed_replay.max(2);
    let mut reference: Option<(Vec<u8>, Vec<u8>)> = None;
    let mut identical = true;
    for _ in 0..runs {
        let a = encode_container(&sample_image(&frame, image_cfg)?.tensor)?;
        let b = encode_container(&sample_video(&clip, video_cfg)?.tensor)?;
        match &reference {
            None => reference = Some((a, b)),
            Some((ra, rb)) => identical &= *ra == a && *rb == b,
        }
    }
    Ok(Check::new(
        "determinism replay",
        identical,
        format!("{runs} runs, image and video containers"),
    ))
}

pub fn run_verify(opts: &VerifyOptions) -> CliResult<Vec<Check>> {
    let mut checks = vec![
        audit_images(opts)?,
        audit_videos(opts)?,
        mask_partition()?,
        temporal_schedules()?,
        determinism(opts)?,
    ];
    for c in property_suite(opts.head_instances, opts.seed)? {
        checks.push(Check::new(
            format!("head: {}", c.name),
            c.passed(),
            format!(
                "worst {:.3e} (tol {:.0e}, {} instances)",
                c.worst, c.tolerance, c.instances
            ),
        ));
    }
    Ok(checks)
}

pub fn format_checks(checks: &[Check]) -> String {
    checks
        .iter()
        .map(|c| {
            format!(
                "{}  {:<48} {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            )
        })
        .collect()
}
