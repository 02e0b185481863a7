//! Acceptance gate: eleven criteria, one pass/fail line each.
//!
//! Every criterion is a separate test that prints exactly one
//! `ACCEPTANCE n (...): PASS|FAIL` line. Derived expectations are checked
//! against independent oracles implemented in this file (a separate DER
//! walker for VRP extraction, a read-side decompressor for the bomb
//! ratio), not against the code under test.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rp_testbed::decode::{decode_object, DecodedObject};
use rp_testbed::harness::{Harness, Profile, Status};
use rp_testbed::materialize::{materialize_publishes, MaterializeOptions};
use rp_testbed::resources::Prefix;
use rp_testbed::rp::http::{Accounting, FetchError, HttpsClient};
use rp_testbed::rp::snapshot::{parse_snapshot, SnapshotError};
use rp_testbed::rp::{
    classify, validate_https, ResourceBudget, RouteValidity, TreeHint, Vrp,
};
use rp_testbed::scenario::{
    Body, Engine, HttpBehavior, NodeAddress, TestId, TestInstance, TestParams,
};
use rp_testbed::server::ObservationEvent;
use rp_testbed::sigobj::DecodeMode;

//------------ Counting allocator --------------------------------------------

// Thread-local allocation accounting so one criterion can measure its own
// peak memory even while other tests run in parallel.
mod alloc_meter {
    use std::alloc::{GlobalAlloc, Layout, System};
    use std::cell::Cell;

    thread_local! {
        static CURRENT: Cell<usize> = const { Cell::new(0) };
        static PEAK: Cell<usize> = const { Cell::new(0) };
    }

    pub struct Counting;

    unsafe impl GlobalAlloc for Counting {
        unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
            let ptr = System.alloc(layout);
            if !ptr.is_null() {
                let _ = CURRENT.try_with(|c| {
                    let now = c.get() + layout.size();
                    c.set(now);
                    let _ = PEAK.try_with(|p| {
                        if now > p.get() {
                            p.set(now)
                        }
                    });
                });
            }
            ptr
        }

        unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
            System.dealloc(ptr, layout);
            let _ = CURRENT.try_with(|c| c.set(c.get().saturating_sub(layout.size())));
        }
    }

    /// Resets the peak and returns the current level.
    pub fn start() -> usize {
        CURRENT.with(|c| {
            let now = c.get();
            PEAK.with(|p| p.set(now));
            now
        })
    }

    /// Peak allocation above the level captured by `start`.
    pub fn peak_above(start: usize) -> usize {
        PEAK.with(|p| p.get()).saturating_sub(start)
    }
}

#[global_allocator]
static ALLOC: alloc_meter::Counting = alloc_meter::Counting;

//------------ Independent VRP oracle ----------------------------------------

// A from-scratch DER walker and snapshot scanner. Deliberately shares no
// code with the crate's codecs.
mod oracle {
    use super::*;
    use base64::Engine as _;

    struct Tlv<'a> {
        tag: u8,
        content: &'a [u8],
    }

    fn read_tlv(data: &[u8]) -> Option<(Tlv<'_>, &[u8])> {
        let (&tag, rest) = data.split_first()?;
        let (&first, rest) = rest.split_first()?;
        let (len, rest) = if first < 0x80 {
            (first as usize, rest)
        } else {
            let n = (first & 0x7f) as usize;
            if n == 0 || n > 4 || rest.len() < n {
                return None;
            }
            let mut len = 0usize;
            for &b in &rest[..n] {
                len = len.checked_mul(256)? + b as usize;
            }
            (len, &rest[n..])
        };
        if rest.len() < len {
            return None;
        }
        Some((
            Tlv {
                tag,
                content: &rest[..len],
            },
            &rest[len..],
        ))
    }

    fn children(mut content: &[u8]) -> Vec<Tlv<'_>> {
        let mut out = Vec::new();
        while !content.is_empty() {
            let Some((tlv, rest)) = read_tlv(content) else {
                return Vec::new();
            };
            out.push(tlv);
            content = rest;
        }
        out
    }

    fn uint(tlv: &Tlv) -> Option<u64> {
        let mut v = 0u64;
        for &b in tlv.content {
            v = v.checked_mul(256)? + b as u64;
        }
        Some(v)
    }

    /// Extracts `prefix,max_length,asn` rows from a CMS-wrapped ROA.
    pub fn roa_vrps(der: &[u8]) -> Option<Vec<String>> {
        let (content_info, rest) = read_tlv(der)?;
        if !rest.is_empty() || content_info.tag != 0x30 {
            return None;
        }
        let ci = children(content_info.content);
        // OID id-signedData, then [0] EXPLICIT SignedData
        let signed_data = children(ci.get(1).filter(|t| t.tag == 0xa0)?.content);
        let sd = children(signed_data.first().filter(|t| t.tag == 0x30)?.content);
        // version, digestAlgorithms SET, encapContentInfo SEQUENCE
        let encap = sd.iter().skip(2).find(|t| t.tag == 0x30)?;
        let ek = children(encap.content);
        let econtent_wrap = ek.get(1).filter(|t| t.tag == 0xa0)?;
        let econtent = children(econtent_wrap.content);
        let roa = econtent.first().filter(|t| t.tag == 0x04)?;

        let (attestation, _) = read_tlv(roa.content)?;
        let mut fields = children(attestation.content).into_iter();
        let mut field = fields.next()?;
        if field.tag == 0xa0 {
            field = fields.next()?;
        }
        if field.tag != 0x02 {
            return None;
        }
        let asn = uint(&field)?;
        let blocks = fields.next().filter(|t| t.tag == 0x30)?;

        let mut rows = Vec::new();
        for family in children(blocks.content) {
            let fk = children(family.content);
            let afi = fk.first().filter(|t| t.tag == 0x04)?;
            let v6 = afi.content == [0, 2];
            for addr in children(fk.get(1)?.content) {
                let ak = children(addr.content);
                let bits = ak.first().filter(|t| t.tag == 0x03)?;
                let unused = *bits.content.first()? as usize;
                let body = &bits.content[1..];
                let len = body.len() * 8 - unused;
                let addr_str = if v6 {
                    let mut bytes = [0u8; 16];
                    bytes[..body.len().min(16)].copy_from_slice(&body[..body.len().min(16)]);
                    std::net::Ipv6Addr::from(bytes).to_string()
                } else {
                    let mut bytes = [0u8; 4];
                    bytes[..body.len().min(4)].copy_from_slice(&body[..body.len().min(4)]);
                    std::net::Ipv4Addr::from(bytes).to_string()
                };
                let max_len = match ak.get(1) {
                    Some(t) if t.tag == 0x02 => uint(t)?,
                    _ => len as u64,
                };
                rows.push(format!("{addr_str}/{len},{max_len},{asn}"));
            }
        }
        Some(rows)
    }

    /// Pulls `(uri, data)` pairs out of a snapshot document by plain text
    /// scanning; no XML library involved.
    pub fn snapshot_publishes(xml: &[u8]) -> Vec<(String, Vec<u8>)> {
        let text = String::from_utf8_lossy(xml);
        let mut out = Vec::new();
        for chunk in text.split("<publish").skip(1) {
            let Some(uri_start) = chunk.find("uri=\"") else {
                continue;
            };
            let after = &chunk[uri_start + 5..];
            let Some(uri_end) = after.find('"') else {
                continue;
            };
            let uri = after[..uri_end].to_string();
            let Some(body_start) = after.find('>') else {
                continue;
            };
            let body = &after[body_start + 1..];
            let Some(body_end) = body.find("</publish>") else {
                continue;
            };
            let b64: String = body[..body_end].split_whitespace().collect();
            let Ok(data) = base64::engine::general_purpose::STANDARD.decode(b64) else {
                continue;
            };
            out.push((uri, data));
        }
        out
    }

    /// Walks a benign instance tree through the engine and computes the
    /// expected VRP rows plus the total object count.
    pub fn expected_vrps(engine: &Engine, instance: &TestInstance) -> (BTreeSet<String>, usize) {
        let mut vrps = BTreeSet::new();
        let mut objects = 1; // the trust anchor certificate
        let mut queue = vec![NodeAddress::root()];
        while let Some(node) = queue.pop() {
            let path = format!("/{}snapshot.xml", node.path_prefix());
            let resource = engine.resolve(instance, &path);
            let Body::Bytes(xml) = resource.body else {
                continue;
            };
            for (uri, data) in snapshot_publishes(&xml) {
                objects += 1;
                if uri.ends_with(".roa") {
                    for row in roa_vrps(&data).expect("oracle failed to read a ROA") {
                        vrps.insert(row);
                    }
                }
            }
            for i in 0.. {
                let child = node.child(i);
                let probe = format!("/{}notification.xml", child.path_prefix());
                if engine.resolve(instance, &probe).behavior == HttpBehavior::NotFound {
                    break;
                }
                queue.push(child);
            }
        }
        (vrps, objects)
    }
}

//------------ Helpers -------------------------------------------------------

fn criterion(number: u32, name: &str, body: impl FnOnce() + std::panic::UnwindSafe) {
    match catch_unwind(body) {
        Ok(()) => println!("ACCEPTANCE {number} ({name}): PASS"),
        Err(payload) => {
            println!("ACCEPTANCE {number} ({name}): FAIL");
            std::panic::resume_unwind(payload);
        }
    }
}

fn control_params(test: TestId) -> TestParams {
    let mut params = TestParams::defaults_for(test);
    params.control = true;
    params.width = 2;
    params.depth = Some(1);
    params.roa_count = 3;
    params
}

//------------ Criteria ------------------------------------------------------

#[test]
fn criterion_01_benign_control_oracle() {
    criterion(1, "benign control vs independent oracle", || {
        let harness = Harness::start("acceptance.test").unwrap();
        for &test in TestId::ALL.iter() {
            let started = Instant::now();
            let instance = harness.engine.new_instance(test, control_params(test));
            let (expected, objects) = oracle::expected_vrps(&harness.engine, &instance);
            assert!(objects <= 100, "{test}: {objects} objects");
            let tal = harness.engine.tal_for(&instance);
            let outcome = validate_https(
                &tal,
                &ResourceBudget::defended(),
                &[],
                harness.connect_addr,
            );
            assert_eq!(outcome.violations, vec![], "{test}");
            let got: BTreeSet<String> =
                outcome.vrps.iter().map(|v| v.to_string()).collect();
            assert_eq!(got, expected, "{test}: VRP sets differ");
            assert!(
                started.elapsed() < Duration::from_secs(30),
                "{test}: too slow"
            );
        }
    });
}

#[test]
fn criterion_02_count_law() {
    criterion(2, "publication point count law", || {
        let started = Instant::now();
        let harness = Harness::start("acceptance.test").unwrap();
        for (width, depth, expected) in [(2u32, 3u32, 15u64), (3, 4, 121)] {
            let mut params = TestParams::defaults_for(TestId::H);
            params.width = width;
            params.depth = Some(depth);
            let instance = harness.engine.new_instance(TestId::H, params);
            let tal = harness.engine.tal_for(&instance);
            let outcome = validate_https(
                &tal,
                &ResourceBudget::undefended(),
                &[],
                harness.connect_addr,
            );
            assert_eq!(outcome.violations, vec![], "({width},{depth})");
            assert_eq!(
                outcome.repos_visited, expected,
                "({width},{depth}): wrong publication point count"
            );
        }
        assert!(started.elapsed() < Duration::from_secs(60));
    });
}

#[test]
fn criterion_03_defended_suite() {
    criterion(3, "defended suite 15/15 resistant", || {
        let started = Instant::now();
        let harness = Harness::start("acceptance.test").unwrap();
        let report = harness.run_suite(Profile::Defended);
        for verdict in &report.verdicts {
            assert_eq!(
                verdict.status,
                Status::Resistant,
                "{}: {:?}",
                verdict.test,
                verdict.evidence
            );
        }
        assert_eq!(report.verdicts.len(), 15);
        assert!(started.elapsed() < Duration::from_secs(900));
    });
}

#[test]
fn criterion_04_undefended_suite() {
    criterion(4, "undefended suite vulnerabilities", || {
        let harness = Harness::start("acceptance.test").unwrap();
        let report = harness.run_suite(Profile::Undefended);
        let must_fall = [
            TestId::A,
            TestId::B,
            TestId::D,
            TestId::E,
            TestId::H,
            TestId::J,
            TestId::K,
            TestId::L,
            TestId::N,
            TestId::O,
        ];
        for test in must_fall {
            let verdict = report
                .verdicts
                .iter()
                .find(|v| v.test == test)
                .expect("report covers all tests");
            assert_eq!(
                verdict.status,
                Status::Vulnerable,
                "{test}: {:?}",
                verdict.evidence
            );
            assert!(!verdict.evidence.is_empty(), "{test}: no evidence");
        }
    });
}

#[test]
fn criterion_05_bomb_containment() {
    criterion(5, "decompression bomb containment", || {
        // deflate cannot compress beyond roughly 1032:1, so a 64 KiB
        // stream can never expand to 256 MiB; the constructed bomb keeps
        // the >=256 MiB expansion and holds the compressed side as small
        // as the format allows
        let engine = Engine::new("acceptance.test");
        let instance = engine.new_instance(TestId::D, TestParams::defaults_for(TestId::D));
        let resource = engine.resolve(&instance, "/snapshot.xml");
        let Body::Bytes(compressed) = resource.body else {
            panic!("bomb body must be materialized")
        };
        assert!(
            compressed.len() <= 640 << 10,
            "compressed side too large: {}",
            compressed.len()
        );

        // independent read-side decompressor verifies the ratio
        let mut decoder = flate2::read::GzDecoder::new(compressed.as_slice());
        let decompressed = std::io::copy(&mut decoder, &mut std::io::sink()).unwrap();
        assert!(
            decompressed >= 256 << 20,
            "bomb only expands to {decompressed}"
        );
        assert!(
            decompressed / compressed.len() as u64 >= 1000,
            "ratio below 1000:1"
        );

        // the defended client must trip with bounded decompressed output
        let harness = Harness::start("acceptance.test").unwrap();
        let instance = harness
            .engine
            .new_instance(TestId::D, TestParams::defaults_for(TestId::D));
        let client = HttpsClient::new(harness.connect_addr);
        let accounting = Accounting::new(None);
        let uri = format!("https://{}/snapshot.xml", instance.hostname);
        match client.fetch_one(&uri, &ResourceBudget::defended(), &accounting) {
            Err(FetchError::BombDetected { decompressed, .. }) => {
                assert!(
                    decompressed <= 640 << 10,
                    "{decompressed} bytes written before detection"
                );
            }
            other => panic!("expected BombDetected, got {other:?}"),
        }
    });
}

#[test]
fn criterion_06_trickle_detection() {
    criterion(6, "trickle stall detection", || {
        let harness = Harness::start("acceptance.test").unwrap();
        let instance = harness
            .engine
            .new_instance(TestId::E, TestParams::defaults_for(TestId::E));
        let client = HttpsClient::new(harness.connect_addr);
        let accounting = Accounting::new(None);
        let uri = format!("https://{}/snapshot.xml", instance.hostname);
        let started = Instant::now();
        match client.fetch_one(&uri, &ResourceBudget::defended(), &accounting) {
            Err(FetchError::StallDetected { bytes, .. }) => {
                let elapsed = started.elapsed().as_secs_f64();
                assert!(elapsed <= 15.0, "stall detected only after {elapsed:.1}s");
                let rate = bytes as f64 / elapsed;
                assert!(
                    (1.5..=4.5).contains(&rate),
                    "served rate {rate:.2} B/s outside 3 B/s +-50%"
                );
            }
            other => panic!("expected StallDetected, got {other:?}"),
        }
    });
}

#[test]
fn criterion_07_billion_laughs_scaling() {
    criterion(7, "entity expansion rejected flat", || {
        let engine = Engine::new("acceptance.test");
        let mut params = TestParams::defaults_for(TestId::G);
        params.entity_levels = 6;
        let instance = engine.new_instance(TestId::G, params);
        let resource = engine.resolve(&instance, "/snapshot.xml");
        let Body::Bytes(doc) = resource.body else {
            panic!("expected an inline document")
        };
        assert!(doc.len() <= 10 << 10, "document is {} bytes", doc.len());

        let budget = ResourceBudget::defended();
        let base = alloc_meter::start();
        let result = parse_snapshot(&doc, &budget);
        let peak = alloc_meter::peak_above(base);
        assert!(
            matches!(result, Err(SnapshotError::XmlRejected(_))),
            "{result:?}"
        );
        assert!(peak < 10 << 20, "parser peak memory grew by {peak} bytes");

        // rejection happens at the document type declaration; time stays
        // proportional to the small input, not the logical expansion
        let started = Instant::now();
        for _ in 0..100 {
            let _ = parse_snapshot(&doc, &budget);
        }
        assert!(
            started.elapsed() < Duration::from_secs(1),
            "100 parses took {:?}",
            started.elapsed()
        );
    });
}

#[test]
fn criterion_08_path_sandbox() {
    criterion(8, "materializer path sandbox", || {
        use rand::prelude::*;
        let mut rng = StdRng::seed_from_u64(0x5eed_0008);
        let pieces = [
            "..",
            ".",
            "etc",
            "cron.daily",
            "repo",
            "a",
            "deep",
            "..%2f",
            "%2e%2e",
            "....",
            "..\\windows",
            "con",
            "~root",
            "",
        ];
        let outer = tempfile::tempdir().unwrap();
        let inner = outer.path().join("inner");
        let root = inner.join("root");
        std::fs::create_dir_all(&root).unwrap();

        let mut publishes = Vec::new();
        for i in 0..10_000 {
            let scheme = ["rsync://", "https://", "rsync://", ""][rng.gen_range(0..4)];
            let n = rng.gen_range(1..8);
            let path: Vec<&str> = (0..n).map(|_| pieces[rng.gen_range(0..pieces.len())]).collect();
            let uri = format!("{scheme}host.test/module/{}/f{i}.roa", path.join("/"));
            publishes.push((uri, vec![0u8; 8]));
        }
        let options = MaterializeOptions {
            depth_cap: 0,
            disk_budget: 1 << 30,
        };
        let repo = materialize_publishes(&root, &publishes, &options).unwrap();
        assert_eq!(repo.skipped.len() + repo.file_count as usize, 10_000);

        // canonical prefix property over everything that was written
        let canon_root = root.canonicalize().unwrap();
        let mut stack = vec![canon_root.clone()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path().canonicalize().unwrap();
                assert!(path.starts_with(&canon_root), "escaped: {path:?}");
                if path.is_dir() {
                    stack.push(path);
                }
            }
        }
        // nothing appeared next to the sandbox root either
        let neighbors: Vec<_> = std::fs::read_dir(&inner)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(neighbors, vec![std::ffi::OsString::from("root")]);
    });
}

#[test]
fn criterion_09_tree_hints() {
    criterion(9, "tree hints exact descendant count", || {
        let harness = Harness::start("acceptance.test").unwrap();
        let mut params = TestParams::defaults_for(TestId::F);
        params.control = true;
        params.width = 5;
        params.depth = Some(2);
        params.roa_count = 1;
        let instance = harness.engine.new_instance(TestId::F, params);
        let tal = harness.engine.tal_for(&instance);
        let hints = vec![TreeHint {
            node: NodeAddress::root().child(0),
            max_descendants: 4,
        }];
        let outcome = validate_https(
            &tal,
            &ResourceBudget::defended(),
            &hints,
            harness.connect_addr,
        );
        assert_eq!(outcome.violations, vec![]);
        // full tree is 1 + 5 + 25; the hinted node loses one of its five
        // children
        assert_eq!(outcome.repos_visited, 30);
        let fetched: BTreeSet<String> = harness
            .observations
            .for_instance(&instance.uuid)
            .iter()
            .filter_map(|o| match &o.event {
                ObservationEvent::Fetch { path, .. } => Some(path.clone()),
                _ => None,
            })
            .filter(|p| {
                p.starts_with("/c0/c") && p.ends_with("/notification.xml")
            })
            .collect();
        assert_eq!(fetched.len(), 4, "descendants of the hinted node: {fetched:?}");
    });
}

#[test]
fn criterion_10_classification_triple() {
    criterion(10, "route origin classification triple", || {
        let mut vrps = BTreeSet::new();
        vrps.insert(Vrp {
            prefix: Prefix::from_str("1.0.0.0/8").unwrap(),
            max_length: 8,
            asn: 1,
        });
        let announcement = (Prefix::from_str("1.2.0.0/16").unwrap(), 2);
        assert_eq!(classify(announcement, &vrps), RouteValidity::Invalid);
        vrps.insert(Vrp {
            prefix: Prefix::from_str("1.2.0.0/16").unwrap(),
            max_length: 16,
            asn: 2,
        });
        assert_eq!(classify(announcement, &vrps), RouteValidity::Valid);
        assert_eq!(
            classify(
                (Prefix::from_str("9.9.9.0/24").unwrap(), 42),
                &BTreeSet::new()
            ),
            RouteValidity::Unknown
        );
    });
}

#[test]
fn criterion_11_codec_fuzz() {
    criterion(11, "codec fuzz, no aborts", || {
        use rand::prelude::*;
        let mut rng = StdRng::seed_from_u64(0x5eed_0011);

        // seed corpus: one valid ROA and one valid snapshot to mutate
        let engine = Engine::new("acceptance.test");
        let instance = engine.new_instance(TestId::F, control_params(TestId::F));
        let Body::Bytes(snapshot_xml) = engine.resolve(&instance, "/snapshot.xml").body else {
            panic!("snapshot must be inline")
        };
        let valid_roa = oracle::snapshot_publishes(&snapshot_xml)
            .into_iter()
            .find(|(uri, _)| uri.ends_with(".roa"))
            .map(|(_, data)| data)
            .expect("control snapshot contains a ROA");

        let budget = ResourceBudget::defended();
        let mut worst = Duration::ZERO;
        for i in 0..10_000 {
            let mut input = if i % 2 == 0 {
                // pure noise
                let len = rng.gen_range(0..2048);
                (0..len).map(|_| rng.gen()).collect::<Vec<u8>>()
            } else if i % 4 == 1 {
                valid_roa.clone()
            } else {
                snapshot_xml.clone()
            };
            for _ in 0..rng.gen_range(0..8) {
                if input.is_empty() {
                    break;
                }
                let at = rng.gen_range(0..input.len());
                input[at] = rng.gen();
            }
            let started = Instant::now();
            let decode_ok = catch_unwind(AssertUnwindSafe(|| {
                let _ = decode_object(&input, DecodeMode::Strict);
            }))
            .is_ok();
            let parse_ok = catch_unwind(AssertUnwindSafe(|| {
                let _ = parse_snapshot(&input, &budget);
            }))
            .is_ok();
            let elapsed = started.elapsed();
            worst = worst.max(elapsed);
            assert!(decode_ok && parse_ok, "input {i} caused a panic");
            assert!(elapsed < Duration::from_secs(1), "input {i} took {elapsed:?}");
        }
        println!("    worst single input: {worst:?}");
    });
}

//------------ Sanity on decoded objects -------------------------------------

// keeps the DecodedObject import honest: the fuzz loop above ignores the
// decoded value, this check does not
#[test]
fn decoded_control_roa_is_a_roa() {
    let engine = Engine::new("acceptance.test");
    let instance = engine.new_instance(TestId::F, control_params(TestId::F));
    let Body::Bytes(snapshot_xml) = engine.resolve(&instance, "/snapshot.xml").body else {
        panic!("snapshot must be inline")
    };
    let (_, data) = oracle::snapshot_publishes(&snapshot_xml)
        .into_iter()
        .find(|(uri, _)| uri.ends_with(".roa"))
        .unwrap();
    assert!(matches!(
        decode_object(&data, DecodeMode::Strict),
        Ok(DecodedObject::Roa(_, _))
    ));
}
