//! Randomized property checks over the head numerics.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    attend, softmax_rows, token_scales, AttnInputs, RelativeScaleTable, Variant,
};
use crate::error::Result;
use crate::features::{FeatureGrid, ScoreMap};
use crate::grad::{
    check_attention_r, check_directional, check_pool_scores, check_pool_weights, check_se_params,
    grad_pooled_attention_r, pooled_attention,
};
use crate::head::{quality_head, HeadParams, HIDDEN};
use crate::se::{hidden_for, SeParams};

pub const MAX_TOKENS: usize = 16;
pub const MAX_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    /// Worst observed error over all instances.
    pub worst: f64,
    pub tolerance: f64,
    pub instances: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Random attention inputs with `L ≤ 16`, `d ≤ 8`, all operands in `[-1, 1)`.
pub fn random_inputs(rng: &mut ChaCha8Rng) -> AttnInputs {
    let l = rng.random_range(1..=MAX_TOKENS);
    let d = rng.random_range(1..=MAX_DIM);
    AttnInputs::new(
        random_matrix(rng, l, d),
        random_matrix(rng, l, d),
        random_matrix(rng, l, d),
        random_matrix(rng, l, l),
        random_matrix(rng, l, l),
    )
    .expect("random inputs are well formed")
}

pub fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, t: usize, c: usize) -> FeatureGrid {
    let data = (0..h * w * t * c)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    FeatureGrid::new(h, w, t, c, data).expect("sized by construction")
}

pub fn random_head(rng: &mut ChaCha8Rng, c: usize) -> HeadParams {
    HeadParams::new(
        random_matrix(rng, c, HIDDEN),
        random_vector(rng, HIDDEN),
        random_vector(rng, HIDDEN),
        rng.random_range(-1.0..1.0),
    )
    .expect("sized by construction")
}

pub fn random_se(rng: &mut ChaCha8Rng, slots: usize) -> SeParams {
    let hidden = hidden_for(slots);
    SeParams::new(
        random_matrix(rng, hidden, slots),
        random_vector(rng, hidden),
        random_matrix(rng, slots, hidden),
        random_vector(rng, slots),
    )
    .expect("sized by construction")
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

struct Tracker {
    name: &'static str,
    tolerance: f64,
    worst: f64,
    instances: usize,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            worst: 0.0,
            instances: 0,
        }
    }

    fn record(&mut self, err: f64) {
        // NaN must fail the check, so compare explicitly.
        self.worst = if err.is_nan() {
            f64::INFINITY
        } else {
            self.worst.max(err)
        };
        self.instances += 1;
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name,
            worst: self.worst,
            tolerance: self.tolerance,
            instances: self.instances,
        }
    }
}

/// Runs every property on `instances` random draws per property.
///
/// Instance `i` uses the stream seeded with `seed + i`, so reports are reproducible.
pub fn property_suite(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut add_zero = Tracker::new("rsb-add with R=0 equals base", 1e-12);
    let mut mul_one = Tracker::new("rsb-mul with R=1 equals base", 1e-12);
    let mut rows = Tracker::new("softmax rows sum to one", 1e-6);
    let mut shift = Tracker::new("row-constant logit shift invariance", 1e-9);
    let mut grad_add = Tracker::new("rsb-add gradient wrt R", 1e-4);
    let mut grad_mul = Tracker::new("rsb-mul gradient wrt R", 1e-4);
    let mut grad_table = Tracker::new("scale-table gradient via expansion", 1e-4);
    let mut grad_w = Tracker::new("weighted pool gradient wrt weights", 1e-4);
    // Linear in the scores: the difference quotient is exact up to cancellation,
    // so this one is measured as absolute error.
    let mut grad_q = Tracker::new("weighted pool gradient wrt scores (abs)", 1e-10);
    let mut grad_se = Tracker::new("SE gate gradient wrt parameters", 1e-4);
    let mut perm = Tracker::new("head mean invariant to position permutation", 1e-12);

    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let inputs = random_inputs(&mut rng);
        let l = inputs.tokens();
        let base = attend(&inputs, Variant::Base);

        let zero_r = inputs.clone().with_r(DMatrix::zeros(l, l))?;
        add_zero.record(max_abs_diff(&attend(&zero_r, Variant::RsbAdd), &base));
        let ones_r = inputs.clone().with_r(DMatrix::from_element(l, l, 1.0))?;
        mul_one.record(max_abs_diff(&attend(&ones_r, Variant::RsbMul), &base));

        let offsets: Vec<f64> = (0..l).map(|_| rng.random_range(-50.0..50.0)).collect();
        for variant in Variant::ALL {
            let logits = inputs.logits(variant);
            let p = softmax_rows(&logits);
            for row in p.row_iter() {
                rows.record((row.sum() - 1.0).abs());
            }
            let shifted = DMatrix::from_fn(l, l, |r, c| logits[(r, c)] + offsets[r]);
            shift.record(max_abs_diff(
                &(softmax_rows(&shifted) * inputs.v()),
                &(p * inputs.v()),
            ));
        }
        let row_shift = DMatrix::from_fn(l, l, |r, _| offsets[r]);
        let r_shifted = inputs.clone().with_r(inputs.r() + row_shift)?;
        shift.record(max_abs_diff(
            &attend(&r_shifted, Variant::RsbAdd),
            &attend(&inputs, Variant::RsbAdd),
        ));

        let dir = random_matrix(&mut rng, l, l);
        grad_add.record(check_attention_r(&inputs, Variant::RsbAdd, &dir)?.best_rel_err());
        grad_mul.record(check_attention_r(&inputs, Variant::RsbMul, &dir)?.best_rel_err());

        // R built from a per-scale-pair table over a temporal schedule. A window
        // drawn from a single scale gets a row-constant R, whose derivative is
        // exactly zero (covered by the shift property), so mix at least two.
        let n_scales = rng.random_range(2..=4);
        let per_slot = rng.random_range(1..=4).min(l.saturating_sub(1).max(1));
        let mut schedule: Vec<usize> = (0..l.div_ceil(per_slot))
            .map(|_| rng.random_range(0..n_scales))
            .collect();
        if schedule.len() > 1 && schedule.iter().all(|&s| s == schedule[0]) {
            schedule[1] = (schedule[0] + 1) % n_scales;
        }
        let scales: Vec<usize> = token_scales(&schedule, per_slot)
            .into_iter()
            .take(l)
            .collect();
        let table = RelativeScaleTable::new(random_matrix(&mut rng, n_scales, n_scales))?;
        let table_dir = random_matrix(&mut rng, n_scales, n_scales);
        let at_table = inputs.clone().with_r(table.expand(&scales)?)?;
        let analytic = table
            .pull_back(
                &grad_pooled_attention_r(&at_table, Variant::RsbAdd),
                &scales,
            )?
            .dot(&table_dir);
        let report = check_directional(analytic, |eps| {
            let moved = RelativeScaleTable::new(&table.values + &table_dir * eps)?;
            Ok(pooled_attention(
                &inputs.clone().with_r(moved.expand(&scales)?)?,
                Variant::RsbAdd,
            ))
        })?;
        grad_table.record(report.best_rel_err());

        let (h, w) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let t = rng.random_range(1..=16);
        let c = rng.random_range(1..=8);
        let z = random_grid(&mut rng, h, w, t, c);
        let head = random_head(&mut rng, c);
        let (q, mean) = quality_head(&z, &head)?;
        let weights: Vec<f64> = (0..t).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w_dir: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        grad_w.record(check_pool_weights(&q, &weights, &w_dir)?.best_rel_err());
        let q_dir = ScoreMap::new(
            h,
            w,
            t,
            (0..h * w * t)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )?;
        grad_q.record(check_pool_scores(&q, &weights, &q_dir)?.best_abs_err());

        let se = random_se(&mut rng, t);
        let se_dir = random_se(&mut rng, t);
        grad_se.record(check_se_params(&z, &se, &se_dir)?.best_rel_err());

        let mut order: Vec<usize> = (0..h * w * t).collect();
        order.shuffle(&mut rng);
        let permuted: Vec<f64> = order
            .iter()
            .flat_map(|&p| z.data()[p * c..(p + 1) * c].iter().cloned())
            .collect();
        let (_, permuted_mean) = quality_head(&FeatureGrid::new(h, w, t, c, permuted)?, &head)?;
        perm.record(relative_error_scaled(mean, permuted_mean));
    }

    Ok([
        add_zero, mul_one, rows, shift, grad_add, grad_mul, grad_table, grad_w, grad_q, grad_se,
        perm,
    ]
    .into_iter()
    .map(Tracker::finish)
    .collect())
}

// Absolute difference, scaled down when the means themselves are large.
fn relative_error_scaled(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
