//! Analytic gradients of the pooled outputs and their finite-difference checks.
//!
//! Every check compares the analytic directional derivative `⟨∇F, D⟩` with
//! the central difference `(F(x + hD) - F(x - hD)) / 2h` over a sweep of
//! step sizes and reports the relative error at each.

use nalgebra::DMatrix;

use crate::attention::{attend, attention_probs, AttnInputs, Variant};
use crate::error::{Error, Result};
use crate::features::{FeatureGrid, ScoreMap};
use crate::head::{softmax, weighted_pool};
use crate::se::{se_gate, se_trace, SeParams};

pub const STEP_SWEEP: [f64; 3] = [1e-3, 1e-4, 1e-5];

/// Derivatives below this magnitude count as zero when normalizing.
pub const ZERO_FLOOR: f64 = 1e-12;

/// `|a - b| / max(|a|, |b|, ZERO_FLOOR)`.
///
/// The floor keeps a true zero derivative (e.g. a bias that shifts whole
/// softmax rows) from turning rounding noise into a relative error of 1.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(ZERO_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdPoint {
    pub h: f64,
    pub estimate: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub analytic: f64,
    pub points: Vec<FdPoint>,
}

impl GradReport {
    pub fn best_rel_err(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.rel_err)
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest `|analytic - estimate|` over the sweep.
    pub fn best_abs_err(&self) -> f64 {
        self.points
            .iter()
            .map(|p| (p.estimate - self.analytic).abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn best_step(&self) -> f64 {
        self.points
            .iter()
            .min_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
            .map_or(f64::NAN, |p| p.h)
    }
}

/// Compares `analytic` against central differences of `f(eps)`, where
/// `f(eps)` evaluates the function at `x + eps * D`.
pub fn check_directional(analytic: f64, f: impl Fn(f64) -> Result<f64>) -> Result<GradReport> {
    let points = STEP_SWEEP
        .iter()
        .map(|&h| {
            let estimate = (f(h)? - f(-h)?) / (2.0 * h);
            Ok(FdPoint {
                h,
                estimate,
                rel_err: relative_error(analytic, estimate),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradReport { analytic, points })
}

/// Mean over all entries of the attention output.
pub fn pooled_attention(inputs: &AttnInputs, variant: Variant) -> f64 {
    attend(inputs, variant).mean()
}

/// Gradient of [`pooled_attention`] with respect to `R`.
pub fn grad_pooled_attention_r(inputs: &AttnInputs, variant: Variant) -> DMatrix<f64> {
    let l = inputs.tokens();
    if variant == Variant::Base {
        return DMatrix::zeros(l, l);
    }
    let p = attention_probs(inputs, variant);
    let v = inputs.v();
    let g = 1.0 / (v.nrows() * v.ncols()) as f64;
    // dF/dP = G Vᵀ with G constant, i.e. g times the row sums of V.
    let v_sums: Vec<f64> = v.row_iter().map(|r| r.sum() * g).collect();
    let d_p = DMatrix::from_fn(l, l, |_, j| v_sums[j]);
    let mut d_s = DMatrix::zeros(l, l);
    for i in 0..l {
        let inner: f64 = (0..l).map(|j| p[(i, j)] * d_p[(i, j)]).sum();
        for j in 0..l {
            d_s[(i, j)] = p[(i, j)] * (d_p[(i, j)] - inner);
        }
    }
    match variant {
        Variant::RsbAdd => d_s,
        Variant::RsbMul => d_s.component_mul(&inputs.scores()),
        Variant::Base => unreachable!(),
    }
}

pub fn check_attention_r(
    inputs: &AttnInputs,
    variant: Variant,
    dir: &DMatrix<f64>,
) -> Result<GradReport> {
    if dir.shape() != inputs.r().shape() {
        return Err(Error::DimMismatch("direction must match R".into()));
    }
    let analytic = grad_pooled_attention_r(inputs, variant).dot(dir);
    check_directional(analytic, |eps| {
        let moved = inputs.clone().with_r(inputs.r() + dir * eps)?;
        Ok(pooled_attention(&moved, variant))
    })
}

/// Gradient of [`weighted_pool`] with respect to the logits `w`.
pub fn grad_pool_weights(q: &ScoreMap, w: &[f64]) -> Result<Vec<f64>> {
    let pooled = weighted_pool(q, w)?;
    let p = softmax(w);
    Ok(p.iter()
        .zip(q.slot_means())
        .map(|(p, m)| p * (m - pooled))
        .collect())
}

pub fn check_pool_weights(q: &ScoreMap, w: &[f64], dir: &[f64]) -> Result<GradReport> {
    if dir.len() != w.len() {
        return Err(Error::DimMismatch("direction must match weights".into()));
    }
    let analytic = grad_pool_weights(q, w)?
        .iter()
        .zip(dir)
        .map(|(g, d)| g * d)
        .sum();
    check_directional(analytic, |eps| {
        let moved: Vec<f64> = w.iter().zip(dir).map(|(a, d)| a + eps * d).collect();
        weighted_pool(q, &moved)
    })
}

/// Gradient of [`weighted_pool`] with respect to the scores; the pool is linear in them.
pub fn grad_pool_scores(q: &ScoreMap, w: &[f64]) -> Result<ScoreMap> {
    if w.len() != q.t {
        return Err(Error::DimMismatch("weights must match slots".into()));
    }
    let p = softmax(w);
    let n = q.h * q.w;
    let data = (0..q.t * n).map(|i| p[i / n] / n as f64).collect();
    ScoreMap::new(q.h, q.w, q.t, data)
}

pub fn check_pool_scores(q: &ScoreMap, w: &[f64], dir: &ScoreMap) -> Result<GradReport> {
    let grad = grad_pool_scores(q, w)?;
    if (dir.h, dir.w, dir.t) != (q.h, q.w, q.t) {
        return Err(Error::DimMismatch("direction must match score map".into()));
    }
    let analytic = grad.data().iter().zip(dir.data()).map(|(g, d)| g * d).sum();
    check_directional(analytic, |eps| weighted_pool(&q.offset(eps, dir)?, w))
}

/// Mean over all entries of the gated grid.
pub fn pooled_se(z: &FeatureGrid, params: &SeParams) -> Result<f64> {
    let out = se_gate(z, params)?;
    Ok(out.data().iter().sum::<f64>() / out.data().len() as f64)
}

/// Gradient of [`pooled_se`] with respect to the excitation parameters.
pub fn grad_pooled_se(z: &FeatureGrid, params: &SeParams) -> Result<SeParams> {
    let trace = se_trace(z, params)?;
    let slots = z.t as f64;
    // F = (1/t) Σ_s g_s m_s, with m_s the slot mean (= the squeeze value).
    let d_gate = trace.squeeze.map(|m| m / slots);
    let d_u = d_gate.component_mul(&trace.gates.map(|g| g * (1.0 - g)));
    let d_hidden = params.w_up.tr_mul(&d_u);
    let d_pre = d_hidden.zip_map(&trace.pre_hidden, |d, a| if a > 0.0 { d } else { 0.0 });
    SeParams::new(
        &d_pre * trace.squeeze.transpose(),
        d_pre.clone(),
        &d_u * trace.hidden.transpose(),
        d_u,
    )
}

pub fn check_se_params(z: &FeatureGrid, params: &SeParams, dir: &SeParams) -> Result<GradReport> {
    let analytic = grad_pooled_se(z, params)?.dot(dir);
    check_directional(analytic, |eps| pooled_se(z, &params.offset(eps, dir)?))
}
