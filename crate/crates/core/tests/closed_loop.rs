//! End-to-end runs against the in-process server.

use rp_testbed::harness::Harness;
use rp_testbed::rp::{validate_https, ResourceBudget};
use rp_testbed::scenario::{TestId, TestParams};

fn control_params(test: TestId) -> TestParams {
    let mut params = TestParams::defaults_for(test);
    params.control = true;
    params.width = 2;
    params.depth = Some(1);
    params.roa_count = 3;
    params
}

#[test]
fn control_tree_yields_vrps_cleanly() {
    let harness = Harness::start("example.org").unwrap();
    let instance = harness
        .engine
        .new_instance(TestId::F, control_params(TestId::F));
    let tal = harness.engine.tal_for(&instance);
    let outcome = validate_https(&tal, &ResourceBudget::defended(), &[], harness.connect_addr);
    assert_eq!(outcome.violations, vec![], "warnings: {:?}", outcome.warnings);
    assert_eq!(outcome.repos_visited, 3);
    assert!(!outcome.partial);
    assert!(
        outcome.warnings.is_empty(),
        "unexpected warnings: {:?}",
        outcome.warnings
    );
    // 3 ROAs at the root plus 3 on each of two children; the children are
    // siblings at equal depth so their VRPs coincide pairwise
    assert_eq!(outcome.vrps.len(), 6, "vrps: {:?}", outcome.vrps);
}

#[test]
fn broken_object_is_warn_and_continue() {
    let harness = Harness::start("example.org").unwrap();
    let instance = harness
        .engine
        .new_instance(TestId::F, TestParams::defaults_for(TestId::F));
    let tal = harness.engine.tal_for(&instance);
    let outcome = validate_https(&tal, &ResourceBudget::defended(), &[], harness.connect_addr);
    assert!(outcome.violations.is_empty());
    assert_eq!(outcome.vrps.len(), 1, "good.roa survives");
    assert!(
        outcome.warnings.iter().any(|w| w.contains("broken.roa")),
        "warnings: {:?}",
        outcome.warnings
    );
}

#[test]
fn infinite_chain_stops_at_depth_limit() {
    let harness = Harness::start("example.org").unwrap();
    let instance = harness
        .engine
        .new_instance(TestId::A, TestParams::defaults_for(TestId::A));
    let tal = harness.engine.tal_for(&instance);
    let outcome = validate_https(&tal, &ResourceBudget::defended(), &[], harness.connect_addr);
    assert!(outcome
        .violations
        .iter()
        .any(|(name, measured)| name == "max_depth" && *measured == 12));
    assert_eq!(outcome.repos_visited, 13, "root plus twelve descendants");
    assert!(outcome.partial);
}

#[test]
fn rate_limit_is_skipped_not_waited() {
    let harness = Harness::start("example.org").unwrap();
    let instance = harness
        .engine
        .new_instance(TestId::B, TestParams::defaults_for(TestId::B));
    let tal = harness.engine.tal_for(&instance);
    let started = std::time::Instant::now();
    let outcome = validate_https(&tal, &ResourceBudget::defended(), &[], harness.connect_addr);
    assert!(outcome
        .violations
        .iter()
        .any(|(name, measured)| name == "max_retry_after" && *measured == 86_400));
    assert!(started.elapsed().as_secs() < 5, "did not wait out Retry-After");
}

#[test]
fn redirect_chain_hits_limit() {
    let harness = Harness::start("example.org").unwrap();
    let instance = harness
        .engine
        .new_instance(TestId::C, TestParams::defaults_for(TestId::C));
    let tal = harness.engine.tal_for(&instance);
    let outcome = validate_https(&tal, &ResourceBudget::defended(), &[], harness.connect_addr);
    assert!(
        outcome
            .violations
            .iter()
            .any(|(name, _)| name == "max_redirects"),
        "violations: {:?}",
        outcome.violations
    );
}

#[test]
fn xxe_document_rejected_with_zero_callbacks() {
    let harness = Harness::start("example.org").unwrap();
    let instance = harness
        .engine
        .new_instance(TestId::M, TestParams::defaults_for(TestId::M));
    let tal = harness.engine.tal_for(&instance);
    let outcome = validate_https(&tal, &ResourceBudget::defended(), &[], harness.connect_addr);
    assert!(outcome
        .violations
        .iter()
        .any(|(name, _)| name.starts_with("xml_rejected")));
    assert_eq!(harness.observations.callback_hits(&instance.uuid), 0);
}
