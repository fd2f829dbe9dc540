//! Per-stage timing of the sampler against the single-scale baseline.

use std::sync::Arc;
use std::time::{Duration, Instant};

use sama_core::media::{decode_image, encode_png};
use sama_core::pack::encode_container;
use sama_core::pyramid::build_pyramid;
use sama_core::{
    sample_image, sample_video, FrameBuffer, Media, MediaClip, SampleRun, SamplerConfig,
    SpatialMaskKind, TemporalMaskKind,
};

use crate::error::CliResult;

pub const STAGES: [&str; 5] = ["decode", "pyramid", "fragments", "compose", "pack"];

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub config: SamplerConfig,
    pub reps: usize,
    /// PNG-encoded input frames; one entry benches an image.
    pub encoded: Vec<Vec<u8>>,
    /// Level counts for the pyramid growth sweep.
    pub levels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageStats {
    pub name: &'static str,
    pub median: Duration,
    pub p95: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathReport {
    pub label: &'static str,
    pub stages: Vec<StageStats>,
    /// Median over reps of fragments + compose.
    pub gather_median: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub reps: usize,
    pub sama: PathReport,
    pub baseline: PathReport,
    /// `sama.gather_median / baseline.gather_median`.
    pub gather_ratio: f64,
    /// Median full-pyramid build time per level count.
    pub pyramid_by_levels: Vec<(usize, Duration)>,
}

impl BenchReport {
    pub fn pyramid_monotone(&self) -> bool {
        self.pyramid_by_levels.windows(2).all(|w| w[0].1 <= w[1].1)
    }
}

/// Deterministic textured frame for synthetic benches.
pub fn synthetic_frame(height: usize, width: usize, salt: u32) -> FrameBuffer {
    FrameBuffer::from_fn(height, width, |y, x| {
        let v = (y as u32)
            .wrapping_mul(2_654_435_761)
            .wrapping_add((x as u32).wrapping_mul(40_503))
            .wrapping_add(salt.wrapping_mul(97_531));
        let v = v ^ (v >> 15);
        [v as u8, (v >> 7) as u8, (v >> 17) as u8]
    })
}

pub fn synthetic_encoded(height: usize, width: usize, frames: usize) -> CliResult<Vec<Vec<u8>>> {
    (0..frames)
        .map(|i| Ok(encode_png(&synthetic_frame(height, width, i as u32))?))
        .collect()
}

/// Median and nearest-rank 95th percentile.
pub fn summarize(name: &'static str, samples: &[Duration]) -> StageStats {
    let mut sorted = samples.to_vec();
    sorted.sort();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2
    };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    StageStats {
        name,
        median,
        p95: sorted[rank - 1],
    }
}

fn median(samples: &[Duration]) -> Duration {
    summarize("", samples).median
}

/// The single-scale comparison path: same grid and fragments, raw resolution only.
pub fn baseline_config(config: &SamplerConfig) -> SamplerConfig {
    SamplerConfig {
        n_scales: 1,
        spatial_mask: SpatialMaskKind::None,
        temporal_mask: TemporalMaskKind::None,
        ..config.clone()
    }
}

fn decode(encoded: &[Vec<u8>]) -> CliResult<Media> {
    let frames = encoded
        .iter()
        .map(|b| decode_image(b))
        .collect::<sama_core::Result<Vec<_>>>()?;
    Ok(if frames.len() == 1 {
        Media::Image(Arc::new(frames.into_iter().next().expect("one frame")))
    } else {
        Media::Video(MediaClip::new(frames)?)
    })
}

fn sample(media: &Media, config: &SamplerConfig) -> CliResult<SampleRun> {
    Ok(match media {
        Media::Image(frame) => sample_image(frame, config)?,
        Media::Video(clip) => sample_video(clip, config)?,
    })
}

#[derive(Default)]
struct Samples {
    stages: [Vec<Duration>; 5],
    gather: Vec<Duration>,
}

impl Samples {
    fn run(&mut self, encoded: &[Vec<u8>], config: &SamplerConfig) -> CliResult<()> {
        let start = Instant::now();
        let media = decode(encoded)?;
        let decode_time = start.elapsed();
        let run = sample(&media, config)?;
        let start = Instant::now();
        std::hint::black_box(encode_container(&run.tensor)?);
        let pack_time = start.elapsed();
        let t = run.timings;
        for (slot, d) in
            self.stages
                .iter_mut()
                .zip([decode_time, t.pyramid, t.fragments, t.compose, pack_time])
        {
            slot.push(d);
        }
        self.gather.push(t.fragments + t.compose);
        Ok(())
    }

    fn report(&self, label: &'static str) -> PathReport {
        PathReport {
            label,
            stages: STAGES
                .iter()
                .zip(&self.stages)
                .map(|(name, s)| summarize(name, s))
                .collect(),
            gather_median: median(&self.gather),
        }
    }
}

pub fn run_bench(options: &BenchOptions) -> CliResult<BenchReport> {
    let reps = options.reps.max(1);
    let baseline = baseline_config(&options.config);
    let video = options.encoded.len() > 1;
    options.config.validate(video)?;
    baseline.validate(video)?;

    // One untimed pass each to settle allocations and caches.
    let mut warm = Samples::default();
    warm.run(&options.encoded, &options.config)?;
    warm.run(&options.encoded, &baseline)?;

    // Alternate the two paths so drift hits both equally.
    let (mut sama, mut single) = (Samples::default(), Samples::default());
    for _ in 0..reps {
        sama.run(&options.encoded, &options.config)?;
        single.run(&options.encoded, &baseline)?;
    }

    let media = decode(&options.encoded)?;
    let mut pyramid_by_levels = Vec::new();
    for &n in &options.levels {
        let config = SamplerConfig {
            n_scales: n,
            ..options.config.clone()
        };
        let mut times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let start = Instant::now();
            std::hint::black_box(build_pyramid(&media, &config)?);
            times.push(start.elapsed());
        }
        pyramid_by_levels.push((n, median(&times)));
    }

    let sama = sama.report("sama");
    let baseline = single.report("single-scale");
    let gather_ratio =
        sama.gather_median.as_secs_f64() / baseline.gather_median.as_secs_f64().max(1e-9);
    Ok(BenchReport {
        reps,
        sama,
        baseline,
        gather_ratio,
        pyramid_by_levels,
    })
}

pub fn format_report(report: &BenchReport) -> String {
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    let mut out = format!("reps: {}\n", report.reps);
    out += &format!(
        "{:<14}{:<10}{:>12}{:>12}\n",
        "path", "stage", "median_ms", "p95_ms"
    );
    for path in [&report.sama, &report.baseline] {
        for s in &path.stages {
            out += &format!(
                "{:<14}{:<10}{:>12.3}{:>12.3}\n",
                path.label,
                s.name,
                ms(s.median),
                ms(s.p95)
            );
        }
    }
    out += &format!(
        "gather (fragments+compose) median: sama {:.3} ms, single-scale {:.3} ms, ratio {:.3}\n",
        ms(report.sama.gather_median),
        ms(report.baseline.gather_median),
        report.gather_ratio
    );
    for (n, d) in &report.pyramid_by_levels {
        out += &format!("pyramid n_scales={n:<3} median {:.3} ms\n", ms(*d));
    }
    out += &format!(
        "pyramid time monotone in n_scales: {}\n",
        if report.pyramid_monotone() {
            "yes"
        } else {
            "no"
        }
    );
    out
}
