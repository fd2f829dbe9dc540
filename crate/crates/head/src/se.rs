//! Squeeze-and-excitation gating over temporal slots.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};
use crate::features::FeatureGrid;

pub const REDUCTION: usize = 4;

/// Hidden width of the excitation MLP for `slots` inputs.
pub fn hidden_for(slots: usize) -> usize {
    (slots / REDUCTION).max(1)
}

/// Excitation MLP: `slots → slots/4 → slots`, ReLU then logistic.
#[derive(Debug, Clone, PartialEq)]
pub struct SeParams {
    /// `hidden × slots`.
    pub w_down: DMatrix<f64>,
    pub b_down: DVector<f64>,
    /// `slots × hidden`.
    pub w_up: DMatrix<f64>,
    pub b_up: DVector<f64>,
}

impl SeParams {
    pub fn new(
        w_down: DMatrix<f64>,
        b_down: DVector<f64>,
        w_up: DMatrix<f64>,
        b_up: DVector<f64>,
    ) -> Result<Self> {
        let (hidden, slots) = w_down.shape();
        if hidden == 0
            || slots == 0
            || b_down.len() != hidden
            || w_up.shape() != (slots, hidden)
            || b_up.len() != slots
        {
            return Err(Error::DimMismatch(format!(
                "SE params {}x{} / {} / {}x{} / {}",
                hidden,
                slots,
                b_down.len(),
                w_up.nrows(),
                w_up.ncols(),
                b_up.len()
            )));
        }
        ensure_finite(
            "SE params",
            w_down
                .iter()
                .chain(b_down.iter())
                .chain(w_up.iter())
                .chain(b_up.iter()),
        )?;
        Ok(Self {
            w_down,
            b_down,
            w_up,
            b_up,
        })
    }

    /// Zero weights and the given output bias: the gate is `σ(bias)` whatever the input.
    pub fn constant(slots: usize, bias: f64) -> Self {
        let hidden = hidden_for(slots);
        Self {
            w_down: DMatrix::zeros(hidden, slots),
            b_down: DVector::zeros(hidden),
            w_up: DMatrix::zeros(slots, hidden),
            b_up: DVector::from_element(slots, bias),
        }
    }

    pub fn slots(&self) -> usize {
        self.w_down.ncols()
    }

    /// `self + eps * dir`, parameter-wise.
    pub fn offset(&self, eps: f64, dir: &SeParams) -> Result<Self> {
        Self::new(
            &self.w_down + &dir.w_down * eps,
            &self.b_down + &dir.b_down * eps,
            &self.w_up + &dir.w_up * eps,
            &self.b_up + &dir.b_up * eps,
        )
    }

    /// Sum of elementwise products with another parameter set.
    pub fn dot(&self, other: &SeParams) -> f64 {
        self.w_down.dot(&other.w_down)
            + self.b_down.dot(&other.b_down)
            + self.w_up.dot(&other.w_up)
            + self.b_up.dot(&other.b_up)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediate values of one gate evaluation.
#[derive(Debug, Clone)]
pub struct SeTrace {
    pub squeeze: DVector<f64>,
    pub pre_hidden: DVector<f64>,
    pub hidden: DVector<f64>,
    pub gates: DVector<f64>,
}

pub fn se_trace(z: &FeatureGrid, params: &SeParams) -> Result<SeTrace> {
    if z.t != params.slots() {
        return Err(Error::DimMismatch(format!(
            "grid has {} slots, SE expects {}",
            z.t,
            params.slots()
        )));
    }
    let squeeze = DVector::from_vec(z.slot_means());
    let pre_hidden = &params.w_down * &squeeze + &params.b_down;
    let hidden = pre_hidden.map(|v| v.max(0.0));
    let gates = (&params.w_up * &hidden + &params.b_up).map(sigmoid);
    Ok(SeTrace {
        squeeze,
        pre_hidden,
        hidden,
        gates,
    })
}

/// Per-slot gate values in `(0, 1)`.
pub fn se_gates(z: &FeatureGrid, params: &SeParams) -> Result<Vec<f64>> {
    Ok(se_trace(z, params)?.gates.iter().cloned().collect())
}

/// `z` with every slot scaled by its gate.
pub fn se_gate(z: &FeatureGrid, params: &SeParams) -> Result<FeatureGrid> {
    z.scale_slots(&se_gates(z, params)?)
}
