//! Exact binomial intervals and the cost formulas used in reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LabError;
use crate::agents::UsageEntry;

fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

/// `P(X <= k)` for `X ~ Binomial(n, p)`, summed in log space.
fn cdf(k: u64, n: u64, p: f64) -> f64 {
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return if k >= n { 1.0 } else { 0.0 };
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let terms: Vec<f64> = (0..=k).map(|i| ln_choose(n, i) + i as f64 * lp + (n - i) as f64 * lq).collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()).exp().min(1.0)
}

/// Root of a decreasing function on `[0, 1]`.
fn bisect(f: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact two-sided interval for a binomial proportion.
pub fn clopper_pearson(successes: u64, n: u64, confidence: f64) -> Result<(f64, f64), LabError> {
    if n == 0 || successes > n {
        return Err(LabError::Domain(format!("need 0 <= successes <= n and n >= 1, got {successes}/{n}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(LabError::Domain(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    let tail = (1.0 - confidence) / 2.0;
    let low = if successes == 0 {
        0.0
    } else {
        // P(X >= k) = 1 - P(X <= k - 1) rises with p.
        bisect(|p| tail - (1.0 - cdf(successes - 1, n, p)))
    };
    let high = if successes == n {
        1.0
    } else {
        bisect(|p| cdf(successes, n, p) - tail)
    };
    Ok((low, high))
}

/// Expected cost per task: inference loops, expected failure loss and
/// operator time.
pub fn tco(n_loops: f64, c_inf: f64, p_fail: f64, c_cat: f64, c_hitl: f64) -> Result<f64, LabError> {
    if !(0.0..=1.0).contains(&p_fail) {
        return Err(LabError::Domain(format!("p_fail must lie in [0, 1], got {p_fail}")));
    }
    if [n_loops, c_inf, c_cat, c_hitl].iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(LabError::Domain("counts and costs must be finite and non-negative".into()));
    }
    Ok(n_loops * c_inf + p_fail * c_cat + c_hitl)
}

/// Probability that at least one of `s` independent constraints fails when
/// each holds with probability `p`.
pub fn joint_failure(p: f64, s: u32) -> f64 {
    1.0 - p.powi(s as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Price {
    /// Currency per million input tokens.
    pub input: f64,
    pub output: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub prices: BTreeMap<String, Price>,
}

impl Default for CostModel {
    fn default() -> Self {
        let prices = [
            ("gpt-4o", Price { input: 2.50, output: 10.00 }),
            ("gpt-4o-mini", Price { input: 0.15, output: 0.60 }),
        ];
        CostModel {
            prices: prices.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

impl CostModel {
    /// Exact id first, then the longest known id the model name starts with
    /// followed by a `-`, so dated snapshots price like their family.
    pub fn price(&self, model: &str) -> Option<Price> {
        if let Some(p) = self.prices.get(model) {
            return Some(*p);
        }
        self.prices
            .iter()
            .filter(|(k, _)| model.strip_prefix(k.as_str()).is_some_and(|rest| rest.starts_with('-')))
            .max_by_key(|(k, _)| k.len())
            .map(|(_, p)| *p)
    }
}

pub fn cost_rollup(ledger: &[UsageEntry], model: &CostModel) -> Result<f64, LabError> {
    ledger.iter().try_fold(0.0, |acc, e| {
        let p = model.price(&e.model).ok_or_else(|| LabError::UnknownModel(e.model.clone()))?;
        Ok(acc + (e.input_tokens as f64 * p.input + e.output_tokens as f64 * p.output) / 1e6)
    })
}
