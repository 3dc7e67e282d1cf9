use serde::{Deserialize, Serialize};

/// Proposed-vs-baseline accuracy difference, in percentage points and
/// relative to the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gain {
    pub pp: f64,
    /// `None` when the baseline accuracy is zero.
    pub rel_pct: Option<f64>,
}

pub fn compute_gain(ta_baseline: f64, ta_proposed: f64) -> Gain {
    let pp = ta_proposed - ta_baseline;
    let rel_pct = (ta_baseline > 0.0).then(|| 100.0 * pp / ta_baseline);
    Gain { pp, rel_pct }
}

/// `100·(1 − TT_p/TT_b)`; positive when the proposed head trains faster.
pub fn tt_reduction_pct(tt_baseline: f64, tt_proposed: f64) -> Option<f64> {
    (tt_baseline > 0.0).then(|| 100.0 * (1.0 - tt_proposed / tt_baseline))
}
