//! Reference numerics for a scale-aware quality head.
//!
//! Window attention with an additive or multiplicative relative scale bias,
//! a two-layer regression head with mean or learned temporal pooling, a
//! squeeze-and-excitation gate over temporal slots, and analytic gradients
//! checked against central differences. No training happens here; parameters
//! are supplied by the caller or drawn at random for property checks.

pub mod attention;
pub mod error;
pub mod features;
pub mod grad;
pub mod head;
pub mod se;
pub mod suite;

pub use attention::{
    attend, attention_probs, attn_base, attn_rsb_add, attn_rsb_mul, softmax_rows, token_scales,
    AttnInputs, RelativeScaleTable, Variant,
};
pub use error::{Error, Result};
pub use features::{grid_dims, FeatureGrid, ScoreMap};
pub use grad::{relative_error, GradReport, STEP_SWEEP};
pub use head::{
    quality_head, weighted_pool, weighted_score, HeadParams, SlotWeights, WeightNet, HIDDEN,
};
pub use se::{se_gate, se_gates, SeParams, REDUCTION};
pub use suite::{property_suite, CheckResult};
