use std::path::{Path, PathBuf};

use sama_core::media::{encode_pgm, encode_png, save_image, write_atomic};
use sama_core::pack::encode_container;
use sama_core::{
    load_clip, load_image, make_interlace_mask, make_spatial_mask, make_temporal_mask,
    provenance_audit, read_container, render_preview, sample_image, sample_video, select_frames,
    split_snippets, FrameBuffer, PreviewStyle, SampleRun, SampledTensor, ScaleMap, SpatialMaskKind,
    TemporalMaskKind,
};

use crate::bench::{format_report, run_bench, synthetic_encoded, BenchOptions};
use crate::config::{resolve, resolve_validated, Regime, RunConfig, SamplerArgs};
use crate::error::{CliError, CliResult};
use crate::verify::{format_checks, run_verify, VerifyOptions};

/// Frames selected before splitting into snippets in inference mode.
pub const INFER_FRAMES: usize = 128;
pub const INFER_SNIPPETS: usize = 4;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn parse_style(s: &str) -> CliResult<PreviewStyle> {
    s.parse()
        .map_err(|e: sama_core::Error| CliError::Config(e.to_string()))
}

/// Fails unless every output pixel matches its recorded source.
fn audit(run: &SampleRun) -> CliResult<()> {
    let report = provenance_audit(&run.tensor, &run.pyramid);
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Invariant(format!(
            "provenance audit: {} of {} pixels differ from their source (first at {:?})",
            report.mismatches,
            report.checked,
            report.first_mismatches.first()
        )))
    }
}

fn shares_line(t: &SampledTensor) -> CliResult<String> {
    let shares = t.scale_shares()?;
    Ok(shares
        .iter()
        .enumerate()
        .map(|(s, v)| format!("scale {s}: {:.2}%", v * 100.0))
        .collect::<Vec<_>>()
        .join(", "))
}

/// Lays frames out row by row, at most eight per row, with a 2px gap.
pub fn contact_sheet(frames: &[FrameBuffer]) -> FrameBuffer {
    const GAP: usize = 2;
    let (h, w) = frames[0].dims();
    let cols = frames.len().min(8);
    let rows = frames.len().div_ceil(cols);
    let sheet_h = rows * h + (rows - 1) * GAP;
    let sheet_w = cols * w + (cols - 1) * GAP;
    let mut sheet = FrameBuffer::filled(sheet_h, sheet_w, [40, 40, 40]);
    for (i, f) in frames.iter().enumerate() {
        let (oy, ox) = ((i / cols) * (h + GAP), (i % cols) * (w + GAP));
        for y in 0..h {
            let start = ((oy + y) * sheet_w + ox) * 3;
            sheet.data_mut()[start..start + w * 3].copy_from_slice(f.row(y));
        }
    }
    sheet
}

fn preview_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}_preview.png"))
}

fn write_preview(t: &SampledTensor, style: PreviewStyle, path: &Path) -> CliResult<()> {
    let frames = render_preview(t, style)?;
    save_image(path, &contact_sheet(&frames)).map_err(|e| io_err(path, e))
}

fn require(path: Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    path.ok_or_else(|| CliError::Config(format!("missing {what}")))
}

pub struct SampleRequest {
    pub input: Option<PathBuf>,
    pub sampler: SamplerArgs,
    pub out: Option<PathBuf>,
    pub preview: Option<String>,
}

struct Prepared {
    input: PathBuf,
    out: PathBuf,
    style: Option<PreviewStyle>,
    config: sama_core::SamplerConfig,
    warnings: Vec<String>,
}

fn prepare(regime: Regime, req: SampleRequest) -> CliResult<Prepared> {
    let resolved = resolve_validated(regime, &req.sampler)?;
    let style = req
        .preview
        .or(resolved.preview)
        .map(|s| parse_style(&s))
        .transpose()?;
    Ok(Prepared {
        input: require(req.input.or(resolved.input), "input path")?,
        out: require(req.out.or(resolved.out), "--out path")?,
        style,
        warnings: resolved.sampler.warnings(),
        config: resolved.sampler,
    })
}

fn emit(out: &Path, run: &SampleRun, style: Option<PreviewStyle>) -> CliResult<()> {
    let bytes = encode_container(&run.tensor)?;
    if let Some(style) = style {
        write_preview(&run.tensor, style, &preview_path(out))?;
    }
    write_atomic(out, &bytes).map_err(|e| io_err(out, e))?;
    println!(
        "{}: {}x{}x{} ({})",
        out.display(),
        run.tensor.height,
        run.tensor.width,
        run.tensor.frames,
        shares_line(&run.tensor)?
    );
    Ok(())
}

pub fn sample_image_cmd(req: SampleRequest) -> CliResult<()> {
    let p = prepare(Regime::Image, req)?;
    p.warnings.iter().for_each(|w| eprintln!("warning: {w}"));
    let frame = load_image(&p.input)?;
    let run = sample_image(&frame, &p.config)?;
    audit(&run)?;
    emit(&p.out, &run, p.style)
}

fn snippet_path(out: &Path, k: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let name = match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_s{k}.{ext}"),
        None => format!("{stem}_s{k}"),
    };
    out.with_file_name(name)
}

pub fn sample_video_cmd(req: SampleRequest, infer: bool) -> CliResult<()> {
    let p = prepare(Regime::Video, req)?;
    p.warnings.iter().for_each(|w| eprintln!("warning: {w}"));
    let clip = load_clip(&p.input)?;
    if !infer {
        let run = sample_video(&clip, &p.config)?;
        audit(&run)?;
        return emit(&p.out, &run, p.style);
    }
    let selected = select_frames(
        &clip,
        INFER_FRAMES.max(p.config.frames_out * INFER_SNIPPETS),
        p.config.offset_policy,
        p.config.seed,
    )?;
    let snippets = split_snippets(&selected, p.config.frames_out, INFER_SNIPPETS)?;
    // Sample and audit everything before writing anything.
    let runs = snippets
        .iter()
        .enumerate()
        .map(|(k, snippet)| {
            let config = sama_core::SamplerConfig {
                seed: p.config.seed.wrapping_add(k as u64),
                ..p.config.clone()
            };
            let run = sample_video(snippet, &config)?;
            audit(&run)?;
            Ok(run)
        })
        .collect::<CliResult<Vec<_>>>()?;
    for (k, run) in runs.iter().enumerate() {
        emit(&snippet_path(&p.out, k), run, p.style)?;
    }
    Ok(())
}

pub fn preview_cmd(container: &Path, style: &str, out: &Path) -> CliResult<()> {
    let style = parse_style(style)?;
    let tensor = read_container(container)?;
    write_preview(&tensor, style, out)?;
    println!(
        "{}: {} frame(s), {}",
        out.display(),
        tensor.frames,
        shares_line(&tensor)?
    );
    Ok(())
}

pub fn masks_cmd(sampler: &SamplerArgs, out: &Path) -> CliResult<()> {
    let file = sampler.config.as_deref().map(RunConfig::load).transpose()?;
    let c = resolve(Regime::Image, file.as_ref(), sampler).sampler;
    let (h, w) = (c.out_height(), c.out_width());
    let kind = match c.spatial_mask {
        SpatialMaskKind::None => SpatialMaskKind::Window,
        k => k,
    };
    let block = kind.block().expect("masked kind has a block");
    let map: ScaleMap = match c.n_scales {
        1 => ScaleMap::uniform(h, w, 0),
        2 => make_spatial_mask(kind, h, w)?.to_scale_map(0, 1),
        n => make_interlace_mask(n, h, w, block)?,
    };
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let counts = map.tile_counts(block, c.n_scales);
    for s in 0..c.n_scales {
        let gray: Vec<u8> = map.indicator(s as u8).iter().map(|&v| v * 255).collect();
        let path = out.join(format!("scale{s}.pgm"));
        write_atomic(&path, &encode_pgm(h, w, &gray)).map_err(|e| io_err(&path, e))?;
        println!(
            "{}: {} of {} {block}px tiles",
            path.display(),
            counts[s],
            counts.iter().sum::<usize>()
        );
    }
    if c.temporal_mask != TemporalMaskKind::None {
        let levels = c.temporal_mask.levels_for(c.frames_out);
        let schedule = make_temporal_mask(c.temporal_mask, c.frames_out, levels)?;
        println!(
            "{} schedule per frame: {:?}",
            c.temporal_mask,
            schedule.per_frame()
        );
    }
    Ok(())
}

pub struct BenchRequest {
    pub sampler: SamplerArgs,
    pub input: Option<PathBuf>,
    pub size: (usize, usize),
    pub synthetic_frames: usize,
    pub reps: Option<usize>,
}

pub fn bench_cmd(req: BenchRequest) -> CliResult<()> {
    let regime = if req.synthetic_frames > 1 || req.input.as_deref().is_some_and(Path::is_dir) {
        Regime::Video
    } else {
        Regime::Image
    };
    let resolved = resolve_validated(regime, &req.sampler)?;
    let encoded = match req.input.or(resolved.input) {
        None => synthetic_encoded(req.size.0, req.size.1, req.synthetic_frames)?,
        Some(path) if path.is_dir() => {
            let clip = load_clip(&path)?;
            clip.frames()
                .iter()
                .map(|f| Ok(encode_png(f)?))
                .collect::<CliResult<Vec<_>>>()?
        }
        Some(path) => vec![std::fs::read(&path).map_err(|e| io_err(&path, e))?],
    };
    let options = BenchOptions {
        config: resolved.sampler,
        reps: req.reps.or(resolved.bench_reps).unwrap_or(20),
        encoded,
        levels: vec![2, 4, 8, 16],
    };
    print!("{}", format_report(&run_bench(&options)?));
    Ok(())
}

pub fn attn_check_cmd(instances: usize, seed: u64) -> CliResult<()> {
    let results = sama_head::property_suite(instances, seed)?;
    let mut failed = Vec::new();
    for r in &results {
        println!(
            "{}  {:<46} worst {:.3e}  tol {:.0e}  n={}",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.worst,
            r.tolerance,
            r.instances
        );
        if !r.passed() {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(format!(
            "failing properties: {}",
            failed.join(", ")
        )))
    }
}

pub fn verify_cmd(opts: &VerifyOptions) -> CliResult<()> {
    let checks = run_verify(opts)?;
    print!("{}", format_checks(&checks));
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(format!(
            "failing properties: {}",
            failed.join(", ")
        )))
    }
}
