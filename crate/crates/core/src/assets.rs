//! The shipped benchmark registries, problems and plans, compiled in.

use crate::harness::{load_registry_str, HarnessRegistry};
use crate::rad::{parse_plan, ProblemSpec, RadPlan};

pub const AD_HARNESS: &str = include_str!("../assets/harnesses/ad_degradation.yaml");
pub const AD_PASS_HARNESS: &str = include_str!("../assets/harnesses/ad_degradation_pass.yaml");
/// The original rules-only file, kept byte-for-byte.
pub const AD_RULES_ONLY: &str = include_str!("../assets/harnesses/ad_degradation_rules.yaml");
pub const PHARMA_HARNESS: &str = include_str!("../assets/harnesses/pharma_flow_reactor.yaml");
pub const PHARMA_PASS_HARNESS: &str = include_str!("../assets/harnesses/pharma_flow_reactor_pass.yaml");

pub const AD_PROBLEM: &str = include_str!("../assets/problems/ad_degradation.json");
pub const AD_PASS_PROBLEM: &str = include_str!("../assets/problems/ad_degradation_pass.json");
pub const PHARMA_PROBLEM: &str = include_str!("../assets/problems/pharma_flow_reactor.json");
pub const PHARMA_PASS_PROBLEM: &str = include_str!("../assets/problems/pharma_flow_reactor_pass.json");

pub const AD_LISTING_PLAN: &str = include_str!("../assets/plans/ad_listing.json");

/// Harness names accepted by [`harness`].
pub const HARNESS_NAMES: [&str; 5] = [
    "ad_degradation",
    "ad_degradation_pass",
    "ad_degradation_rules",
    "pharma_flow_reactor",
    "pharma_flow_reactor_pass",
];

pub const PROBLEM_NAMES: [&str; 4] = [
    "ad_degradation",
    "ad_degradation_pass",
    "pharma_flow_reactor",
    "pharma_flow_reactor_pass",
];

pub fn harness_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "ad_degradation" => AD_HARNESS,
        "ad_degradation_pass" => AD_PASS_HARNESS,
        "ad_degradation_rules" => AD_RULES_ONLY,
        "pharma_flow_reactor" => PHARMA_HARNESS,
        "pharma_flow_reactor_pass" => PHARMA_PASS_HARNESS,
        _ => return None,
    })
}

pub fn problem_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "ad_degradation" => AD_PROBLEM,
        "ad_degradation_pass" => AD_PASS_PROBLEM,
        "pharma_flow_reactor" => PHARMA_PROBLEM,
        "pharma_flow_reactor_pass" => PHARMA_PASS_PROBLEM,
        _ => return None,
    })
}

/// Loads a shipped registry. The assets are tested, so a parse failure is a
/// build defect and panics.
pub fn harness(name: &str) -> Option<HarnessRegistry> {
    harness_text(name).map(|t| load_registry_str(t, name).expect("shipped harness parses"))
}

pub fn problem(name: &str) -> Option<ProblemSpec> {
    problem_text(name).map(|t| ProblemSpec::from_json(t).expect("shipped problem parses"))
}

pub fn ad_registry() -> HarnessRegistry {
    harness("ad_degradation").expect("known name")
}

pub fn ad_pass_registry() -> HarnessRegistry {
    harness("ad_degradation_pass").expect("known name")
}

pub fn pharma_registry() -> HarnessRegistry {
    harness("pharma_flow_reactor").expect("known name")
}

pub fn pharma_pass_registry() -> HarnessRegistry {
    harness("pharma_flow_reactor_pass").expect("known name")
}

pub fn ad_problem() -> ProblemSpec {
    problem("ad_degradation").expect("known name")
}

pub fn ad_pass_problem() -> ProblemSpec {
    problem("ad_degradation_pass").expect("known name")
}

pub fn pharma_problem() -> ProblemSpec {
    problem("pharma_flow_reactor").expect("known name")
}

pub fn pharma_pass_problem() -> ProblemSpec {
    problem("pharma_flow_reactor_pass").expect("known name")
}

pub fn ad_listing_plan() -> RadPlan {
    parse_plan(AD_LISTING_PLAN).expect("shipped plan parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_shipped_asset_loads() {
        for n in HARNESS_NAMES {
            assert!(harness(n).is_some(), "{n}");
        }
        for n in PROBLEM_NAMES {
            assert!(problem(n).is_some(), "{n}");
        }
        assert_eq!(ad_listing_plan().nodes.len(), 2);
        assert!(harness("nope").is_none());
    }
}
