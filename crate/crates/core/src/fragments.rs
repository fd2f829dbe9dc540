//! Grid partition and per-cell fragment gathering.

use crate::config::{OffsetPolicy, SamplerConfig};
use crate::error::{Error, Result};
use crate::media::FrameBuffer;
use crate::pyramid::PyramidLevel;
use crate::rng::{stream_id, Domain, KeyedStream};

/// One cell of a balanced grid partition, in level pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

/// Splits `level_h x level_w` into `grid_rows x grid_cols` cells, row-major.
///
/// Cell `(r, c)` spans rows `[r*H/G_h, (r+1)*H/G_h)` (floored), and likewise
/// for columns, so the cells tile the level exactly.
pub fn grid_partition(
    level_h: usize,
    level_w: usize,
    grid_rows: usize,
    grid_cols: usize,
) -> Result<Vec<GridCell>> {
    if grid_rows == 0 || level_h < grid_rows {
        return Err(Error::GridTooFine {
            size: level_h,
            cells: grid_rows,
        });
    }
    if grid_cols == 0 || level_w < grid_cols {
        return Err(Error::GridTooFine {
            size: level_w,
            cells: grid_cols,
        });
    }
    let bound = |i: usize, n: usize, total: usize| i * total / n;
    let mut cells = Vec::with_capacity(grid_rows * grid_cols);
    for row in 0..grid_rows {
        let (y0, y1) = (
            bound(row, grid_rows, level_h),
            bound(row + 1, grid_rows, level_h),
        );
        for col in 0..grid_cols {
            let (x0, x1) = (
                bound(col, grid_cols, level_w),
                bound(col + 1, grid_cols, level_w),
            );
            cells.push(GridCell {
                row,
                col,
                y0,
                x0,
                h: y1 - y0,
                w: x1 - x0,
            });
        }
    }
    Ok(cells)
}

/// Top-left corner of the fragment taken from each cell.
///
/// `Random` draws uniformly over the valid corners from a stream keyed by
/// `(seed, stream_scale, row, col)`; `Center` centers the fragment, ties
/// toward the top-left. Pass the same `stream_scale` for every level to get
/// grid-relative aligned offsets.
pub fn choose_offsets(
    cells: &[GridCell],
    frag_h: usize,
    frag_w: usize,
    policy: OffsetPolicy,
    seed: u64,
    stream_scale: usize,
) -> Result<Vec<(usize, usize)>> {
    cells
        .iter()
        .map(|cell| {
            if cell.h < frag_h || cell.w < frag_w {
                return Err(Error::CellSmallerThanFragment {
                    cell_h: cell.h,
                    cell_w: cell.w,
                    frag_h,
                    frag_w,
                });
            }
            let (span_y, span_x) = (cell.h - frag_h, cell.w - frag_w);
            Ok(match policy {
                OffsetPolicy::Center => (cell.y0 + span_y / 2, cell.x0 + span_x / 2),
                OffsetPolicy::Random => {
                    let stream = stream_id(
                        Domain::Fragment,
                        stream_scale as u64,
                        cell.row as u64,
                        cell.col as u64,
                    );
                    let mut rng = KeyedStream::new(seed, stream);
                    let dy = rng.below(span_y as u64 + 1) as usize;
                    let dx = rng.below(span_x as u64 + 1) as usize;
                    (cell.y0 + dy, cell.x0 + dx)
                }
            })
        })
        .collect()
}

/// Grid cells and chosen fragment corners for one level under `config`.
pub fn level_offsets(
    level_h: usize,
    level_w: usize,
    scale_id: usize,
    config: &SamplerConfig,
) -> Result<(Vec<GridCell>, Vec<(usize, usize)>)> {
    let cells = grid_partition(level_h, level_w, config.grid_rows, config.grid_cols)?;
    let stream_scale = if config.aligned_offsets { 0 } else { scale_id };
    let offsets = choose_offsets(
        &cells,
        config.frag_h,
        config.frag_w,
        config.offset_policy,
        config.seed,
        stream_scale,
    )?;
    Ok((cells, offsets))
}

/// Fixed-size mosaic of raw-resolution fragments taken from one level.
#[derive(Debug, Clone)]
pub struct FragmentMosaic {
    pub scale_id: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub frag_h: usize,
    pub frag_w: usize,
    /// Fragment corner in level coordinates, one per cell, row-major.
    pub offsets: Vec<(usize, usize)>,
    /// One mosaic per level frame; `None` where the level frame was not built.
    pub frames: Vec<Option<FrameBuffer>>,
}

impl FragmentMosaic {
    pub fn height(&self) -> usize {
        self.grid_rows * self.frag_h
    }

    pub fn width(&self) -> usize {
        self.grid_cols * self.frag_w
    }

    pub fn frame(&self, i: usize) -> Option<&FrameBuffer> {
        self.frames.get(i).and_then(Option::as_ref)
    }

    /// Level coordinates of mosaic pixel `(y, x)`.
    pub fn source_of(&self, y: usize, x: usize) -> (usize, usize) {
        let (r, c) = (y / self.frag_h, x / self.frag_w);
        let (oy, ox) = self.offsets[r * self.grid_cols + c];
        (oy + y % self.frag_h, ox + x % self.frag_w)
    }
}

/// Copies the `frag_h x frag_w` window at each offset into its mosaic cell.
pub fn gather(
    src: &FrameBuffer,
    offsets: &[(usize, usize)],
    grid_cols: usize,
    frag_h: usize,
    frag_w: usize,
) -> FrameBuffer {
    let grid_rows = offsets.len() / grid_cols;
    let (out_h, out_w) = (grid_rows * frag_h, grid_cols * frag_w);
    let mut data = vec![0u8; out_h * out_w * 3];
    let row_bytes = frag_w * 3;
    for (cell, &(oy, ox)) in offsets.iter().enumerate() {
        let (r, c) = (cell / grid_cols, cell % grid_cols);
        for dy in 0..frag_h {
            let src_row = &src.row(oy + dy)[ox * 3..ox * 3 + row_bytes];
            let start = ((r * frag_h + dy) * out_w + c * frag_w) * 3;
            data[start..start + row_bytes].copy_from_slice(src_row);
        }
    }
    FrameBuffer::new(out_h, out_w, data).expect("mosaic sized by construction")
}

/// Samples one fragment per grid cell of `level`, reusing the same offsets for
/// every frame so static content stays static.
pub fn sample_fragments(level: &PyramidLevel, config: &SamplerConfig) -> Result<FragmentMosaic> {
    let (_, offsets) = level_offsets(level.height, level.width, level.scale_id, config)?;
    let frames = (0..level.frame_count())
        .map(|i| {
            level
                .frame(i)
                .map(|f| gather(f, &offsets, config.grid_cols, config.frag_h, config.frag_w))
        })
        .collect();
    Ok(FragmentMosaic {
        scale_id: level.scale_id,
        grid_rows: config.grid_rows,
        grid_cols: config.grid_cols,
        frag_h: config.frag_h,
        frag_w: config.frag_w,
        offsets,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;

    fn level_of(frame: FrameBuffer, scale_id: usize) -> PyramidLevel {
        PyramidLevel::new(scale_id, vec![Some(Arc::new(frame))]).unwrap()
    }

    fn cfg(rows: usize, cols: usize, fh: usize, fw: usize, policy: OffsetPolicy) -> SamplerConfig {
        SamplerConfig {
            grid_rows: rows,
            grid_cols: cols,
            frag_h: fh,
            frag_w: fw,
            offset_policy: policy,
            ..SamplerConfig::iqa()
        }
    }

    #[test]
    fn exact_grid_224() {
        let cells = grid_partition(224, 224, 7, 7).unwrap();
        assert_eq!(cells.len(), 49);
        assert!(cells.iter().all(|c| c.h == 32 && c.w == 32));
        assert_eq!(
            cells[8],
            GridCell {
                row: 1,
                col: 1,
                y0: 32,
                x0: 32,
                h: 32,
                w: 32
            }
        );
    }

    #[test]
    fn floor_partition_230() {
        // Oracle: brute-force floor boundaries i*230/7.
        let bounds: Vec<usize> = (0..=7).map(|i| i * 230 / 7).collect();
        let expected: Vec<usize> = bounds.windows(2).map(|b| b[1] - b[0]).collect();
        assert_eq!(expected, vec![32, 33, 33, 33, 33, 33, 33]);
        let cells = grid_partition(230, 230, 7, 7).unwrap();
        let heights: Vec<usize> = cells.iter().step_by(7).map(|c| c.h).collect();
        assert_eq!(heights, expected);
        assert_eq!(heights.iter().sum::<usize>(), 230);
    }

    #[test]
    fn minimal_partition() {
        let cells = grid_partition(7, 7, 7, 7).unwrap();
        assert!(cells.iter().all(|c| c.h == 1 && c.w == 1));
        assert!(matches!(
            grid_partition(6, 7, 7, 7),
            Err(Error::GridTooFine { size: 6, cells: 7 })
        ));
    }

    #[test]
    fn single_position_cell() {
        let cell = [GridCell {
            row: 0,
            col: 0,
            y0: 64,
            x0: 32,
            h: 32,
            w: 32,
        }];
        for policy in [OffsetPolicy::Center, OffsetPolicy::Random] {
            for seed in 0..5 {
                assert_eq!(
                    choose_offsets(&cell, 32, 32, policy, seed, 0).unwrap(),
                    vec![(64, 32)]
                );
            }
        }
    }

    #[test]
    fn centered_offset() {
        let cell = [GridCell {
            row: 0,
            col: 0,
            y0: 0,
            x0: 0,
            h: 154,
            w: 274,
        }];
        assert_eq!(
            choose_offsets(&cell, 32, 32, OffsetPolicy::Center, 0, 0).unwrap(),
            vec![(61, 121)]
        );
    }

    #[test]
    fn random_offset_reproducible_and_bounded() {
        let cell = [GridCell {
            row: 0,
            col: 0,
            y0: 0,
            x0: 0,
            h: 154,
            w: 274,
        }];
        let a = choose_offsets(&cell, 32, 32, OffsetPolicy::Random, 42, 0).unwrap();
        assert_eq!(
            a,
            choose_offsets(&cell, 32, 32, OffsetPolicy::Random, 42, 0).unwrap()
        );
        let (y, x) = a[0];
        assert!(y <= 122 && x <= 242);
    }

    #[test]
    fn offsets_independent_of_cell_order() {
        let cells = grid_partition(500, 700, 5, 6).unwrap();
        let forward = choose_offsets(&cells, 16, 16, OffsetPolicy::Random, 9, 3).unwrap();
        let mut reversed = cells.clone();
        reversed.reverse();
        let mut backward = choose_offsets(&reversed, 16, 16, OffsetPolicy::Random, 9, 3).unwrap();
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn undersized_cell_rejected() {
        let cell = [GridCell {
            row: 0,
            col: 0,
            y0: 0,
            x0: 0,
            h: 31,
            w: 40,
        }];
        assert!(matches!(
            choose_offsets(&cell, 32, 32, OffsetPolicy::Center, 0, 0),
            Err(Error::CellSmallerThanFragment { .. })
        ));
    }

    #[test]
    fn identity_mosaic() {
        let frame = FrameBuffer::from_fn(224, 224, |y, x| [y as u8, x as u8, (y ^ x) as u8]);
        let mosaic = sample_fragments(
            &level_of(frame.clone(), 0),
            &cfg(7, 7, 32, 32, OffsetPolicy::Random),
        )
        .unwrap();
        assert_eq!(mosaic.frame(0).unwrap(), &frame);
    }

    #[test]
    fn gather_matches_index_oracle() {
        let frame = FrameBuffer::from_fn(1080, 1920, |y, x| {
            [(y % 251) as u8, (x % 241) as u8, ((y * 3 + x) % 239) as u8]
        });
        let config = cfg(7, 7, 32, 32, OffsetPolicy::Center);
        let mosaic = sample_fragments(&level_of(frame.clone(), 0), &config).unwrap();
        let out = mosaic.frame(0).unwrap();
        assert_eq!(out.dims(), (224, 224));
        // Recompute every source index from the partition formula directly.
        for y in 0..224 {
            for x in 0..224 {
                let (r, c) = (y / 32, x / 32);
                let (cy0, cy1) = (r * 1080 / 7, (r + 1) * 1080 / 7);
                let (cx0, cx1) = (c * 1920 / 7, (c + 1) * 1920 / 7);
                let sy = cy0 + (cy1 - cy0 - 32) / 2 + y % 32;
                let sx = cx0 + (cx1 - cx0 - 32) / 2 + x % 32;
                assert_eq!(out.pixel(y, x), frame.pixel(sy, sx), "pixel {y},{x}");
            }
        }
    }

    #[test]
    fn constant_level_constant_mosaic() {
        let frame = FrameBuffer::filled(333, 517, [3, 1, 4]);
        let mosaic = sample_fragments(
            &level_of(frame, 2),
            &cfg(7, 7, 32, 32, OffsetPolicy::Random),
        )
        .unwrap();
        assert_eq!(
            mosaic.frame(0).unwrap(),
            &FrameBuffer::filled(224, 224, [3, 1, 4])
        );
    }

    #[test]
    fn video_frames_share_offsets() {
        let frame = Arc::new(FrameBuffer::from_fn(300, 400, |y, x| [y as u8, x as u8, 0]));
        let level = PyramidLevel::new(1, vec![Some(Arc::clone(&frame)); 4]).unwrap();
        let mosaic = sample_fragments(&level, &cfg(3, 3, 16, 16, OffsetPolicy::Random)).unwrap();
        let first = mosaic.frame(0).unwrap();
        assert!((1..4).all(|i| mosaic.frame(i).unwrap() == first));
    }

    #[test]
    fn random_offsets_uniform_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        // A 10x7 cell with an 8x4 fragment has 3 x 4 = 12 valid corners.
        let cell = [GridCell {
            row: 2,
            col: 5,
            y0: 0,
            x0: 0,
            h: 10,
            w: 7,
        }];
        let mut counts = [0usize; 12];
        let draws = 10_000;
        for seed in 0..draws {
            let (y, x) = choose_offsets(&cell, 8, 4, OffsetPolicy::Random, seed, 1).unwrap()[0];
            counts[y * 4 + x] += 1;
        }
        let expected = draws as f64 / 12.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let p = 1.0 - ChiSquared::new(11.0).unwrap().cdf(stat);
        assert!(p > 0.01, "chi2 = {stat}, p = {p}, counts = {counts:?}");
    }
}
