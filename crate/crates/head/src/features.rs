use crate::error::{ensure_finite, Error, Result};

/// Backbone output: `h × w` positions, `t` temporal slots, `c` channels.
///
/// Stored slot-major, then row, column, channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub h: usize,
    pub w: usize,
    pub t: usize,
    pub c: usize,
    data: Vec<f64>,
}

/// Total downsampling of the backbone: 4×4 patch embedding and three 2× merges.
pub const SPATIAL_STRIDE: usize = 32;
/// Temporal patch size of the video backbone.
pub const TEMPORAL_STRIDE: usize = 2;

/// Feature-grid `(h, w, t)` for a sampled tensor of `out_h × out_w × frames`.
pub fn grid_dims(out_h: usize, out_w: usize, frames: usize) -> (usize, usize, usize) {
    (
        out_h / SPATIAL_STRIDE,
        out_w / SPATIAL_STRIDE,
        (frames / TEMPORAL_STRIDE).max(1),
    )
}

impl FeatureGrid {
    pub fn new(h: usize, w: usize, t: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || t == 0 || c == 0 {
            return Err(Error::DimMismatch(format!(
                "empty feature grid {h}x{w}x{t}x{c}"
            )));
        }
        if data.len() != h * w * t * c {
            return Err(Error::DimMismatch(format!(
                "feature grid {h}x{w}x{t}x{c} needs {} values, got {}",
                h * w * t * c,
                data.len()
            )));
        }
        ensure_finite("feature grid", data.iter())?;
        Ok(Self { h, w, t, c, data })
    }

    pub fn from_fn(
        h: usize,
        w: usize,
        t: usize,
        c: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(h * w * t * c);
        for s in 0..t {
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        data.push(f(y, x, s, ch));
                    }
                }
            }
        }
        Self::new(h, w, t, c, data)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn positions_per_slot(&self) -> usize {
        self.h * self.w
    }

    /// Channel vector at one position.
    pub fn at(&self, y: usize, x: usize, s: usize) -> &[f64] {
        let i = ((s * self.h + y) * self.w + x) * self.c;
        &self.data[i..i + self.c]
    }

    pub fn slot(&self, s: usize) -> &[f64] {
        let n = self.h * self.w * self.c;
        &self.data[s * n..(s + 1) * n]
    }

    /// Mean over positions and channels of each slot.
    pub fn slot_means(&self) -> Vec<f64> {
        (0..self.t)
            .map(|s| {
                let slot = self.slot(s);
                slot.iter().sum::<f64>() / slot.len() as f64
            })
            .collect()
    }

    /// Mean channel vector of each slot.
    pub fn slot_channel_means(&self) -> Vec<Vec<f64>> {
        let n = self.positions_per_slot() as f64;
        (0..self.t)
            .map(|s| {
                let mut acc = vec![0.0; self.c];
                for px in self.slot(s).chunks_exact(self.c) {
                    acc.iter_mut().zip(px).for_each(|(a, v)| *a += v);
                }
                acc.iter_mut().for_each(|a| *a /= n);
                acc
            })
            .collect()
    }

    /// Multiplies every value of slot `s` by `gains[s]`.
    pub fn scale_slots(&self, gains: &[f64]) -> Result<Self> {
        if gains.len() != self.t {
            return Err(Error::DimMismatch(format!(
                "{} gains for {} slots",
                gains.len(),
                self.t
            )));
        }
        let n = self.h * self.w * self.c;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v * gains[i / n])
            .collect();
        Self::new(self.h, self.w, self.t, self.c, data)
    }
}

/// Per-position quality scores, `t` slots of `h × w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub h: usize,
    pub w: usize,
    pub t: usize,
    data: Vec<f64>,
}

impl ScoreMap {
    pub fn new(h: usize, w: usize, t: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || t == 0 || data.len() != h * w * t {
            return Err(Error::DimMismatch(format!(
                "score map {h}x{w}x{t} with {} values",
                data.len()
            )));
        }
        ensure_finite("score map", data.iter())?;
        Ok(Self { h, w, t, data })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize, s: usize) -> f64 {
        self.data[(s * self.h + y) * self.w + x]
    }

    pub fn slot_means(&self) -> Vec<f64> {
        let n = self.h * self.w;
        self.data
            .chunks_exact(n)
            .map(|c| c.iter().sum::<f64>() / n as f64)
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// `self + eps * dir`.
    pub fn offset(&self, eps: f64, dir: &ScoreMap) -> Result<Self> {
        if (dir.h, dir.w, dir.t) != (self.h, self.w, self.t) {
            return Err(Error::DimMismatch("score map direction shape".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&dir.data)
            .map(|(a, b)| a + eps * b)
            .collect();
        Self::new(self.h, self.w, self.t, data)
    }
}
