use crate::config::{SpatialMaskKind, TemporalMaskKind};
use crate::error::{Error, Result};
use crate::media::FrameBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Image,
    Video,
}

impl TensorKind {
    pub fn code(self) -> u8 {
        match self {
            TensorKind::Image => 1,
            TensorKind::Video => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(TensorKind::Image),
            2 => Some(TensorKind::Video),
            _ => None,
        }
    }
}

/// Where one output pixel came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ProvenanceEntry {
    pub scale_id: u8,
    /// Frame index within the pyramid level.
    pub src_frame: u16,
    pub src_y: u32,
    pub src_x: u32,
}

/// Sampling parameters recorded alongside the pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleMeta {
    pub n_scales: u8,
    pub spatial_mask: SpatialMaskKind,
    pub temporal_mask: TemporalMaskKind,
    pub seed: u64,
    /// Scale id per frame pair; empty for purely spatial sampling.
    pub schedule: Vec<u8>,
}

/// Packed sampler output: `frames x height x width x 3` RGB8 plus optional
/// per-pixel provenance in the same order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledTensor {
    pub kind: TensorKind,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub data: Vec<u8>,
    pub provenance: Option<Vec<ProvenanceEntry>>,
    pub meta: SampleMeta,
}

impl SampledTensor {
    pub fn new(
        kind: TensorKind,
        height: usize,
        width: usize,
        frames: usize,
        data: Vec<u8>,
        provenance: Option<Vec<ProvenanceEntry>>,
        meta: SampleMeta,
    ) -> Result<Self> {
        if height == 0 || width == 0 || frames == 0 {
            return Err(Error::DimMismatch(format!(
                "empty tensor {frames}x{height}x{width}"
            )));
        }
        if kind == TensorKind::Image && frames != 1 {
            return Err(Error::DimMismatch(format!(
                "image tensor with {frames} frames"
            )));
        }
        let pixels = frames * height * width;
        if data.len() != pixels * 3 {
            return Err(Error::DimMismatch(format!(
                "tensor data {} bytes, expected {}",
                data.len(),
                pixels * 3
            )));
        }
        if let Some(p) = &provenance {
            if p.len() != pixels {
                return Err(Error::DimMismatch(format!(
                    "provenance has {} entries, expected {pixels}",
                    p.len()
                )));
            }
        }
        Ok(SampledTensor {
            kind,
            height,
            width,
            frames,
            data,
            provenance,
            meta,
        })
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width
    }

    pub fn frame_data(&self, t: usize) -> &[u8] {
        let n = self.pixels_per_frame() * 3;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame(&self, t: usize) -> FrameBuffer {
        FrameBuffer::new(self.height, self.width, self.frame_data(t).to_vec())
            .expect("tensor frame sized by construction")
    }

    pub fn pixel(&self, t: usize, y: usize, x: usize) -> [u8; 3] {
        let i = ((t * self.height + y) * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn provenance_at(&self, t: usize, y: usize, x: usize) -> Option<ProvenanceEntry> {
        self.provenance
            .as_ref()
            .map(|p| p[(t * self.height + y) * self.width + x])
    }

    /// Fraction of output pixels drawn from each scale.
    pub fn scale_shares(&self) -> Result<Vec<f64>> {
        let prov = self.provenance.as_ref().ok_or(Error::MissingProvenance)?;
        let mut counts = vec![0usize; self.meta.n_scales.max(1) as usize];
        for entry in prov {
            let s = entry.scale_id as usize;
            if s >= counts.len() {
                counts.resize(s + 1, 0);
            }
            counts[s] += 1;
        }
        let total = prov.len() as f64;
        Ok(counts.into_iter().map(|c| c as f64 / total).collect())
    }
}
