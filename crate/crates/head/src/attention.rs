//! Window attention with an optional relative scale bias.
//!
//! Three variants share one code path and differ only in how the logits are
//! formed from `A = QKᵀ/√d + B`:
//!
//! * `Base`:   `A`
//! * `RsbAdd`: `A + R`
//! * `RsbMul`: `A ⊙ R` (elementwise)

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Base,
    RsbAdd,
    RsbMul,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Base, Variant::RsbAdd, Variant::RsbMul];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Base => "base",
            Variant::RsbAdd => "rsb-add",
            Variant::RsbMul => "rsb-mul",
        })
    }
}

/// Validated attention operands. `Q`, `K` are `L×d`, `V` is `L×d_v`,
/// `B` and `R` are `L×L`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnInputs {
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    b: DMatrix<f64>,
    r: DMatrix<f64>,
}

fn check_square(name: &str, m: &DMatrix<f64>, l: usize) -> Result<()> {
    if m.shape() != (l, l) {
        return Err(Error::DimMismatch(format!(
            "{name} is {}x{}, expected {l}x{l}",
            m.nrows(),
            m.ncols()
        )));
    }
    ensure_finite(name, m.iter())
}

impl AttnInputs {
    pub fn new(
        q: DMatrix<f64>,
        k: DMatrix<f64>,
        v: DMatrix<f64>,
        b: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let (l, d) = q.shape();
        if l == 0 || d == 0 {
            return Err(Error::DimMismatch(format!("Q is {l}x{d}, needs L, d >= 1")));
        }
        if k.shape() != (l, d) {
            return Err(Error::DimMismatch(format!(
                "K is {}x{}, Q is {l}x{d}",
                k.nrows(),
                k.ncols()
            )));
        }
        if v.nrows() != l || v.ncols() == 0 {
            return Err(Error::DimMismatch(format!(
                "V is {}x{}, expected {l} rows",
                v.nrows(),
                v.ncols()
            )));
        }
        ensure_finite("Q", q.iter())?;
        ensure_finite("K", k.iter())?;
        ensure_finite("V", v.iter())?;
        check_square("B", &b, l)?;
        check_square("R", &r, l)?;
        Ok(Self { q, k, v, b, r })
    }

    /// Inputs with `B = 0` and `R = 0`.
    pub fn unbiased(q: DMatrix<f64>, k: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        let l = q.nrows();
        Self::new(q, k, v, DMatrix::zeros(l, l), DMatrix::zeros(l, l))
    }

    pub fn with_b(mut self, b: DMatrix<f64>) -> Result<Self> {
        check_square("B", &b, self.tokens())?;
        self.b = b;
        Ok(self)
    }

    pub fn with_r(mut self, r: DMatrix<f64>) -> Result<Self> {
        check_square("R", &r, self.tokens())?;
        self.r = r;
        Ok(self)
    }

    pub fn tokens(&self) -> usize {
        self.q.nrows()
    }

    pub fn dim(&self) -> usize {
        self.q.ncols()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// `QKᵀ/√d + B`.
    pub fn scores(&self) -> DMatrix<f64> {
        let scale = 1.0 / (self.dim() as f64).sqrt();
        &self.q * self.k.transpose() * scale + &self.b
    }

    pub fn logits(&self, variant: Variant) -> DMatrix<f64> {
        let a = self.scores();
        match variant {
            Variant::Base => a,
            Variant::RsbAdd => a + &self.r,
            Variant::RsbMul => a.component_mul(&self.r),
        }
    }
}

/// Row-wise softmax, max-subtracted for stability.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

pub fn attention_probs(inputs: &AttnInputs, variant: Variant) -> DMatrix<f64> {
    softmax_rows(&inputs.logits(variant))
}

pub fn attend(inputs: &AttnInputs, variant: Variant) -> DMatrix<f64> {
    attention_probs(inputs, variant) * inputs.v()
}

pub fn attn_base(inputs: &AttnInputs) -> DMatrix<f64> {
    attend(inputs, Variant::Base)
}

pub fn attn_rsb_add(inputs: &AttnInputs) -> DMatrix<f64> {
    attend(inputs, Variant::RsbAdd)
}

pub fn attn_rsb_mul(inputs: &AttnInputs) -> DMatrix<f64> {
    attend(inputs, Variant::RsbMul)
}

/// One learnable bias per ordered pair of pyramid levels.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeScaleTable {
    pub values: DMatrix<f64>,
}

impl RelativeScaleTable {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() || values.nrows() == 0 {
            return Err(Error::DimMismatch(format!(
                "scale table must be square and non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        ensure_finite("scale table", values.iter())?;
        Ok(Self { values })
    }

    pub fn n_scales(&self) -> usize {
        self.values.nrows()
    }

    /// Expands to an `L×L` bias: entry `(i, j)` is `table[scale(i), scale(j)]`.
    pub fn expand(&self, token_scales: &[usize]) -> Result<DMatrix<f64>> {
        let n = self.n_scales();
        if let Some(&bad) = token_scales.iter().find(|&&s| s >= n) {
            return Err(Error::DimMismatch(format!(
                "token scale {bad} >= {n} scales"
            )));
        }
        let l = token_scales.len();
        Ok(DMatrix::from_fn(l, l, |i, j| {
            self.values[(token_scales[i], token_scales[j])]
        }))
    }

    /// Pulls an `L×L` gradient back onto the table by summing over each pair.
    pub fn pull_back(&self, grad: &DMatrix<f64>, token_scales: &[usize]) -> Result<DMatrix<f64>> {
        let l = token_scales.len();
        if grad.shape() != (l, l) {
            return Err(Error::DimMismatch(format!(
                "gradient is {}x{}, expected {l}x{l}",
                grad.nrows(),
                grad.ncols()
            )));
        }
        let n = self.n_scales();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..l {
            for j in 0..l {
                out[(token_scales[i], token_scales[j])] += grad[(i, j)];
            }
        }
        Ok(out)
    }
}

/// Scale id of each token when a window spans consecutive frame pairs.
///
/// `schedule[k]` is the level of frame pair `k`; each pair contributes
/// `tokens_per_slot` tokens.
pub fn token_scales(schedule: &[usize], tokens_per_slot: usize) -> Vec<usize> {
    schedule
        .iter()
        .flat_map(|&s| std::iter::repeat_n(s, tokens_per_slot))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Plain nested-loop evaluation, no nalgebra.
    fn oracle(
        q: &[Vec<f64>],
        k: &[Vec<f64>],
        v: &[Vec<f64>],
        logit: impl Fn(usize, usize, f64) -> f64,
    ) -> Vec<Vec<f64>> {
        let l = q.len();
        let d = q[0].len();
        (0..l)
            .map(|i| {
                let raw: Vec<f64> = (0..l)
                    .map(|j| {
                        let dot: f64 = (0..d).map(|c| q[i][c] * k[j][c]).sum();
                        logit(i, j, dot / (d as f64).sqrt())
                    })
                    .collect();
                let m = raw.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = raw.iter().map(|x| (x - m).exp()).collect();
                let z: f64 = e.iter().sum();
                (0..v[0].len())
                    .map(|c| (0..l).map(|j| e[j] / z * v[j][c]).sum())
                    .collect()
            })
            .collect()
    }

    fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| m.row(i).iter().cloned().collect())
            .collect()
    }

    fn sample(l: usize, d: usize, salt: f64) -> DMatrix<f64> {
        DMatrix::from_fn(l, d, |i, j| ((i * 7 + j * 3) as f64 * 0.37 + salt).sin())
    }

    #[test]
    fn two_token_example() {
        let q = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let inputs = AttnInputs::unbiased(q.clone(), q.clone(), q).unwrap();
        let out = attn_base(&inputs);
        let e = std::f64::consts::E;
        assert!((out[(0, 0)] - e / (e + 1.0)).abs() < 1e-12);
        assert!((out[(0, 0)] - 0.7311).abs() < 1e-4);
        assert!((out[(1, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_queries_average_values() {
        let v = sample(5, 3, 0.2);
        let inputs =
            AttnInputs::unbiased(DMatrix::zeros(5, 3), sample(5, 3, 1.0), v.clone()).unwrap();
        let out = attn_base(&inputs);
        let mean = v.row_mean();
        for i in 0..5 {
            assert!((out.row(i) - &mean).amax() < 1e-12);
        }
    }

    #[test]
    fn strong_negative_bias_isolates_tokens() {
        let v = sample(4, 2, 0.5);
        let b = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { -1e30 });
        let inputs = AttnInputs::unbiased(sample(4, 2, 0.1), sample(4, 2, 0.3), v.clone())
            .unwrap()
            .with_b(b)
            .unwrap();
        assert!((attn_base(&inputs) - v).amax() < 1e-12);
    }

    #[test]
    fn reductions_to_base() {
        let inputs = AttnInputs::unbiased(sample(6, 4, 0.0), sample(6, 4, 1.0), sample(6, 4, 2.0))
            .unwrap()
            .with_b(sample(6, 6, 3.0))
            .unwrap();
        let base = attn_base(&inputs);
        assert!((attn_rsb_add(&inputs) - &base).amax() <= 1e-12);
        let ones = inputs
            .clone()
            .with_r(DMatrix::from_element(6, 6, 1.0))
            .unwrap();
        assert!((attn_rsb_mul(&ones) - &base).amax() <= 1e-12);
        let shifted = inputs
            .clone()
            .with_r(DMatrix::from_element(6, 6, 2.5))
            .unwrap();
        assert!((attn_rsb_add(&shifted) - &base).amax() <= 1e-9);
    }

    #[test]
    fn zero_r_multiplier_gives_uniform_attention() {
        let v = sample(5, 2, 0.7);
        let inputs = AttnInputs::unbiased(sample(5, 2, 0.1), sample(5, 2, 0.4), v.clone()).unwrap();
        let out = attn_rsb_mul(&inputs);
        let mean = v.row_mean();
        for i in 0..5 {
            assert!((out.row(i) - &mean).amax() < 1e-12);
        }
    }

    #[test]
    fn three_token_cases_match_oracle() {
        let (q, k, v) = (sample(3, 2, 0.3), sample(3, 2, 1.3), sample(3, 2, 2.3));
        let (b, r) = (sample(3, 3, 4.0), sample(3, 3, 5.0));
        let inputs =
            AttnInputs::new(q.clone(), k.clone(), v.clone(), b.clone(), r.clone()).unwrap();
        let (qr, kr, vr) = (rows(&q), rows(&k), rows(&v));
        let cases: [(Variant, Box<dyn Fn(usize, usize, f64) -> f64>); 3] = [
            (Variant::Base, Box::new(|i, j, s| s + b[(i, j)])),
            (
                Variant::RsbAdd,
                Box::new(|i, j, s| s + b[(i, j)] + r[(i, j)]),
            ),
            (
                Variant::RsbMul,
                Box::new(|i, j, s| (s + b[(i, j)]) * r[(i, j)]),
            ),
        ];
        for (variant, logit) in cases {
            let expected = oracle(&qr, &kr, &vr, logit);
            let got = rows(&attend(&inputs, variant));
            for (ge, ee) in got.iter().flatten().zip(expected.iter().flatten()) {
                assert!((ge - ee).abs() < 1e-9, "{variant}");
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&sample(7, 7, 0.9).scale(30.0));
        for row in p.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        let q = sample(3, 2, 0.0);
        assert!(matches!(
            AttnInputs::unbiased(q.clone(), sample(3, 3, 0.0), q.clone()),
            Err(Error::DimMismatch(_))
        ));
        assert!(matches!(
            AttnInputs::unbiased(q.clone(), q.clone(), sample(2, 2, 0.0)),
            Err(Error::DimMismatch(_))
        ));
        let mut bad = q.clone();
        bad[(1, 1)] = f64::NAN;
        assert!(matches!(
            AttnInputs::unbiased(bad, q.clone(), q.clone()),
            Err(Error::NonFiniteInput(_))
        ));
        let inputs = AttnInputs::unbiased(q.clone(), q.clone(), q).unwrap();
        assert!(inputs.with_r(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn scale_table_expansion() {
        let table =
            RelativeScaleTable::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0])).unwrap();
        let scales = token_scales(&[0, 1], 2);
        assert_eq!(scales, vec![0, 0, 1, 1]);
        let r = table.expand(&scales).unwrap();
        assert_eq!(r[(0, 3)], 1.0);
        assert_eq!(r[(3, 0)], 2.0);
        assert_eq!(r[(2, 3)], 3.0);
        let back = table
            .pull_back(&DMatrix::from_element(4, 4, 1.0), &scales)
            .unwrap();
        assert_eq!(back, DMatrix::from_element(2, 2, 4.0));
        assert!(table.expand(&[2]).is_err());
    }
}
