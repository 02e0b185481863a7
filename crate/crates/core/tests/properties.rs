//! Property tests over the codec, classifier, sandbox, and budgets.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use proptest::prelude::*;

use rp_testbed::harness::Harness;
use rp_testbed::materialize::{materialize_publishes, MaterializeOptions};
use rp_testbed::resources::{AddressFamily, Prefix};
use rp_testbed::roa::{build_roa, RoaContent};
use rp_testbed::rp::{classify, validate_https, Limit, ResourceBudget, RouteValidity, Vrp};
use rp_testbed::scenario::{TestId, TestParams};
use rp_testbed::sigobj::DecodeMode;

//------------ Strategies ----------------------------------------------------

fn prefix_strategy() -> impl Strategy<Value = Prefix> {
    (any::<bool>(), any::<u128>(), 0u8..=128).prop_map(|(v6, bits, len)| {
        if v6 {
            Prefix::new(AddressFamily::Ipv6, bits, len).unwrap()
        } else {
            let len = len % 33;
            Prefix::new(AddressFamily::Ipv4, (bits as u32 as u128) << 96, len).unwrap()
        }
    })
}

fn vrp_strategy() -> impl Strategy<Value = Vrp> {
    (prefix_strategy(), 0u8..=128, any::<u32>()).prop_map(|(prefix, extra, asn)| Vrp {
        max_length: prefix
            .len
            .saturating_add(extra % 9)
            .min(prefix.family.bit_width()),
        prefix,
        asn,
    })
}

//------------ Codec round trip ----------------------------------------------

proptest! {
    #[test]
    fn roa_roundtrips(
        as_id in any::<u32>(),
        entries in proptest::collection::vec(
            (prefix_strategy(), proptest::option::of(0u8..=128)),
            1..8
        )
    ) {
        // clamp maxLength into the legal window so build_roa accepts it
        let prefixes: Vec<(Prefix, Option<u8>)> = entries
            .into_iter()
            .map(|(p, ml)| {
                let ml = ml.map(|m| {
                    p.len + m % (p.family.bit_width() - p.len + 1)
                });
                (p, ml)
            })
            .collect();
        let roa = build_roa(as_id, &prefixes).unwrap();
        let encoded = roa.encode();
        let decoded = RoaContent::decode(&encoded, DecodeMode::Strict).unwrap();
        prop_assert_eq!(roa.as_id, decoded.as_id);
        // the encoding groups blocks by address family, so compare in a
        // family-stable canonical order
        let canonical = |content: &RoaContent| {
            let mut blocks = content.blocks.clone();
            blocks.sort_by_key(|b| {
                (
                    matches!(b.family, AddressFamily::Ipv6),
                    b.prefix_bits.clone(),
                    b.prefix_len,
                    b.max_length,
                )
            });
            blocks
        };
        prop_assert_eq!(canonical(&roa), canonical(&decoded));
    }

    //------------ Classification monotonicity -------------------------------

    #[test]
    fn classify_valid_stays_valid_under_superset(
        vrps in proptest::collection::btree_set(vrp_strategy(), 1..16),
        extra in proptest::collection::btree_set(vrp_strategy(), 0..8),
        pick in any::<proptest::sample::Index>(),
        sublen in 0u8..=8,
    ) {
        // announce inside some VRP so at least Valid cases occur often
        let base = *pick.get(&vrps.iter().copied().collect::<Vec<_>>());
        let len = (base.prefix.len + sublen % 9).min(base.max_length);
        let announcement = (
            Prefix::new(base.prefix.family, base.prefix.bits, len).unwrap(),
            base.asn,
        );
        let verdict = classify(announcement, &vrps);
        if verdict == RouteValidity::Valid {
            let mut superset: BTreeSet<Vrp> = vrps.clone();
            superset.extend(extra);
            prop_assert_eq!(classify(announcement, &superset), RouteValidity::Valid);
        }
    }

    #[test]
    fn classify_never_unknown_with_covering_vrp(
        vrps in proptest::collection::btree_set(vrp_strategy(), 1..16),
        pick in any::<proptest::sample::Index>(),
        asn in any::<u32>(),
    ) {
        let base = *pick.get(&vrps.iter().copied().collect::<Vec<_>>());
        let announcement = (base.prefix, asn);
        prop_assert_ne!(classify(announcement, &vrps), RouteValidity::Unknown);
    }

    //------------ Sandbox ----------------------------------------------------

    #[test]
    fn materializer_never_escapes(
        segments in proptest::collection::vec(
            prop_oneof![
                Just("..".to_string()),
                Just(".".to_string()),
                Just("".to_string()),
                "[a-z]{1,6}",
                Just("..\\x".to_string()),
            ],
            0..8
        ),
        scheme in prop_oneof![
            Just("rsync://"),
            Just("https://"),
            Just(""),
        ],
    ) {
        let outer = tempfile::tempdir().unwrap();
        let root = outer.path().join("root");
        std::fs::create_dir_all(&root).unwrap();
        let uri = format!("{scheme}host/module/{}/leaf.roa", segments.join("/"));
        let options = MaterializeOptions { depth_cap: 0, disk_budget: 1 << 20 };
        let _ = materialize_publishes(&root, &[(uri, vec![1u8; 4])], &options).unwrap();

        let canon = root.canonicalize().unwrap();
        let mut stack = vec![canon.clone()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path().canonicalize().unwrap();
                prop_assert!(path.starts_with(&canon));
                if path.is_dir() {
                    stack.push(path);
                }
            }
        }
        // the sandbox root stayed the only child of the scratch directory
        let count = std::fs::read_dir(outer.path()).unwrap().count();
        prop_assert_eq!(count, 1);
    }
}

//------------ Budget monotonicity -------------------------------------------

fn shared_harness() -> &'static Harness {
    static HARNESS: OnceLock<Harness> = OnceLock::new();
    HARNESS.get_or_init(|| Harness::start("property.test").unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]
    #[test]
    fn deeper_budget_visits_no_fewer_repos(d1 in 0u64..5, extra in 0u64..5) {
        let d2 = d1 + extra;
        let harness = shared_harness();
        let mut params = TestParams::defaults_for(TestId::A);
        params.depth = None;
        let instance = harness.engine.new_instance(TestId::A, params);
        let tal = harness.engine.tal_for(&instance);
        let mut visited = Vec::new();
        for depth in [d1, d2] {
            let mut budget = ResourceBudget::defended();
            budget.max_depth = Limit::At(depth);
            let outcome = validate_https(&tal, &budget, &[], harness.connect_addr);
            visited.push(outcome.repos_visited);
        }
        prop_assert!(visited[0] <= visited[1], "{} > {}", visited[0], visited[1]);
    }
}
