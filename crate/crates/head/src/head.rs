//! Quality regression head and temporal pooling.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};
use crate::features::{FeatureGrid, ScoreMap};

pub const HIDDEN: usize = 64;

/// Two fully connected layers, `C → 64 → 1`, ReLU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `C × 64`.
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
}

impl HeadParams {
    pub fn new(w1: DMatrix<f64>, b1: DVector<f64>, w2: DVector<f64>, b2: f64) -> Result<Self> {
        if w1.ncols() != HIDDEN || b1.len() != HIDDEN || w2.len() != HIDDEN || w1.nrows() == 0 {
            return Err(Error::DimMismatch(format!(
                "head expects C x {HIDDEN} / {HIDDEN} / {HIDDEN}, got {}x{} / {} / {}",
                w1.nrows(),
                w1.ncols(),
                b1.len(),
                w2.len()
            )));
        }
        ensure_finite(
            "head params",
            w1.iter().chain(b1.iter()).chain(w2.iter()).chain([&b2]),
        )?;
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn channels(&self) -> usize {
        self.w1.nrows()
    }

    pub fn score(&self, z: &[f64]) -> f64 {
        let hidden = self.w1.tr_mul(&DVector::from_column_slice(z)) + &self.b1;
        self.w2.dot(&hidden.map(|v| v.max(0.0))) + self.b2
    }
}

/// Per-position scores and their global mean.
pub fn quality_head(z: &FeatureGrid, params: &HeadParams) -> Result<(ScoreMap, f64)> {
    if z.c != params.channels() {
        return Err(Error::DimMismatch(format!(
            "grid has {} channels, head expects {}",
            z.c,
            params.channels()
        )));
    }
    let scores: Vec<f64> = z
        .data()
        .chunks_exact(z.c)
        .map(|v| params.score(v))
        .collect();
    let map = ScoreMap::new(z.h, z.w, z.t, scores)?;
    let mean = map.mean();
    Ok((map, mean))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// `Σ_t softmax(w)_t · mean(q[.., .., t])`.
pub fn weighted_pool(q: &ScoreMap, weights: &[f64]) -> Result<f64> {
    if weights.len() != q.t {
        return Err(Error::DimMismatch(format!(
            "{} pooling weights for {} slots",
            weights.len(),
            q.t
        )));
    }
    ensure_finite("pooling weights", weights)?;
    let p = softmax(weights);
    Ok(p.iter().zip(q.slot_means()).map(|(p, m)| p * m).sum())
}

/// Small MLP producing one pooling logit per slot from that slot's mean features.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightNet {
    /// `hidden × C`.
    pub wa: DMatrix<f64>,
    pub ba: DVector<f64>,
    pub wb: DVector<f64>,
    pub bb: f64,
}

impl WeightNet {
    pub fn logits(&self, z: &FeatureGrid) -> Result<Vec<f64>> {
        if self.wa.ncols() != z.c
            || self.ba.len() != self.wa.nrows()
            || self.wb.len() != self.wa.nrows()
        {
            return Err(Error::DimMismatch(format!(
                "weight net {}x{} for {} channels",
                self.wa.nrows(),
                self.wa.ncols(),
                z.c
            )));
        }
        Ok(z.slot_channel_means()
            .into_iter()
            .map(|m| {
                let h = &self.wa * DVector::from_vec(m) + &self.ba;
                self.wb.dot(&h.map(|v| v.max(0.0))) + self.bb
            })
            .collect())
    }
}

/// Source of the temporal pooling logits.
#[derive(Debug, Clone, PartialEq)]
pub enum SlotWeights {
    /// One free parameter per slot.
    Free(Vec<f64>),
    /// Logits predicted from the features.
    Conditioned(WeightNet),
}

impl SlotWeights {
    pub fn logits(&self, z: &FeatureGrid) -> Result<Vec<f64>> {
        match self {
            SlotWeights::Free(w) => Ok(w.clone()),
            SlotWeights::Conditioned(net) => net.logits(z),
        }
    }
}

/// Head scores pooled with learned temporal weights.
pub fn weighted_score(z: &FeatureGrid, head: &HeadParams, weights: &SlotWeights) -> Result<f64> {
    let (q, _) = quality_head(z, head)?;
    weighted_pool(&q, &weights.logits(z)?)
}
