//! Budget-enforcing mini relying party.
//!
//! Fetches from a TAL through RRDP, validates certificates, manifests,
//! CRLs and ROAs, and emits VRPs, while every fetch and every traversal
//! step is charged against a `ResourceBudget`. A tripped limit stops the
//! run, records the violation, and flags the partial VRP set instead of
//! letting a hostile repository consume the host.

pub mod http;
pub mod snapshot;

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::time::Duration;

use chrono::Utc;
use sha2::{Digest, Sha256};

use crate::cert::Cert;
use crate::decode::{decode_object, DecodedObject};
use crate::resources::{Prefix, ResourceSet};
use crate::scenario::NodeAddress;
use crate::sigobj::DecodeMode;
use crate::tal::Tal;
use http::{Accounting, FetchError, HttpsClient};
use snapshot::{parse_notification, parse_snapshot, SnapshotError};

//------------ Limit ---------------------------------------------------------

/// One budget knob: enforced at a value, or individually disabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Limit {
    Off,
    At(u64),
}

impl Limit {
    pub fn exceeded_by(self, value: u64) -> bool {
        matches!(self, Limit::At(max) if value > max)
    }

    pub fn value(self) -> Option<u64> {
        match self {
            Limit::Off => None,
            Limit::At(v) => Some(v),
        }
    }
}

impl fmt::Display for Limit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Limit::Off => write!(f, "off"),
            Limit::At(v) => write!(f, "{v}"),
        }
    }
}

//------------ ResourceBudget ------------------------------------------------

/// The relying party's defense configuration. Every limit can be disabled
/// on its own, which is how the vulnerable profile is built.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ResourceBudget {
    pub max_depth: Limit,
    pub max_repos: Limit,
    pub max_total_bytes: Limit,
    pub max_object_bytes: Limit,
    /// Seconds of wall clock for the whole run.
    pub max_wall_time: Limit,
    /// Bytes per second over a 10 s rolling window.
    pub min_transfer_rate: Limit,
    pub max_redirects: Limit,
    /// Largest Retry-After honored; beyond it the repository is skipped.
    pub max_retry_after: Limit,
    pub max_decompress_ratio: Limit,
    pub max_vrps: Limit,
    pub max_path_len: Limit,
    pub hints_enabled: bool,
    /// Reject publish URIs that escape their repository root.
    pub reject_traversal: bool,
}

impl ResourceBudget {
    /// Production-shaped defaults: each passes the benign control profile
    /// with an order of magnitude of headroom and trips its attack.
    pub fn defended() -> ResourceBudget {
        ResourceBudget {
            max_depth: Limit::At(12),
            max_repos: Limit::At(5000),
            max_total_bytes: Limit::At(2 << 30),
            max_object_bytes: Limit::At(20 << 20),
            max_wall_time: Limit::At(1800),
            min_transfer_rate: Limit::At(1024),
            max_redirects: Limit::At(5),
            max_retry_after: Limit::At(600),
            max_decompress_ratio: Limit::At(10),
            max_vrps: Limit::At(2_000_000),
            max_path_len: Limit::At(64 << 10),
            hints_enabled: true,
            reject_traversal: true,
        }
    }

    /// Everything off: the behavior of an unguarded relying party.
    pub fn undefended() -> ResourceBudget {
        ResourceBudget {
            max_depth: Limit::Off,
            max_repos: Limit::Off,
            max_total_bytes: Limit::Off,
            max_object_bytes: Limit::Off,
            max_wall_time: Limit::Off,
            min_transfer_rate: Limit::Off,
            max_redirects: Limit::Off,
            max_retry_after: Limit::Off,
            max_decompress_ratio: Limit::Off,
            max_vrps: Limit::Off,
            max_path_len: Limit::Off,
            hints_enabled: false,
            reject_traversal: false,
        }
    }

    pub fn wall_time(&self) -> Option<Duration> {
        self.max_wall_time.value().map(Duration::from_secs)
    }

    /// Applies one `key=value` override; `off` disables a limit.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn limit(value: &str) -> Result<Limit, String> {
            if value.eq_ignore_ascii_case("off") {
                return Ok(Limit::Off);
            }
            value
                .parse()
                .map(Limit::At)
                .map_err(|e| format!("bad limit value {value:?}: {e}"))
        }
        fn flag(value: &str) -> Result<bool, String> {
            value
                .parse()
                .map_err(|e| format!("bad flag value {value:?}: {e}"))
        }
        match key {
            "max_depth" => self.max_depth = limit(value)?,
            "max_repos" => self.max_repos = limit(value)?,
            "max_total_bytes" => self.max_total_bytes = limit(value)?,
            "max_object_bytes" => self.max_object_bytes = limit(value)?,
            "max_wall_time" => self.max_wall_time = limit(value)?,
            "min_transfer_rate" => self.min_transfer_rate = limit(value)?,
            "max_redirects" => self.max_redirects = limit(value)?,
            "max_retry_after" => self.max_retry_after = limit(value)?,
            "max_decompress_ratio" => self.max_decompress_ratio = limit(value)?,
            "max_vrps" => self.max_vrps = limit(value)?,
            "max_path_len" => self.max_path_len = limit(value)?,
            "hints_enabled" => self.hints_enabled = flag(value)?,
            "reject_traversal" => self.reject_traversal = flag(value)?,
            other => return Err(format!("unknown budget key {other:?}")),
        }
        Ok(())
    }
}

//------------ Vrp -----------------------------------------------------------

/// Validated ROA Payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Vrp {
    pub prefix: Prefix,
    pub max_length: u8,
    pub asn: u32,
}

impl fmt::Display for Vrp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.prefix, self.max_length, self.asn)
    }
}

//------------ TreeHint ------------------------------------------------------

/// Parent-supplied recursive descendant limit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeHint {
    pub node: NodeAddress,
    pub max_descendants: u64,
}

/// Effective limit at a node: the strictest hint among the node and its
/// ancestors; `Limit::Off` when none of them carries one.
pub fn effective_limit(hints: &[TreeHint], node: &NodeAddress) -> Limit {
    hints
        .iter()
        .filter(|h| is_ancestor_or_self(&h.node, node))
        .map(|h| h.max_descendants)
        .min()
        .map_or(Limit::Off, Limit::At)
}

fn is_ancestor_or_self(ancestor: &NodeAddress, node: &NodeAddress) -> bool {
    node.0.len() >= ancestor.0.len() && node.0[..ancestor.0.len()] == ancestor.0[..]
}

//------------ classify ------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteValidity {
    Valid,
    Invalid,
    Unknown,
}

/// Route origin validation: UNKNOWN without a covering VRP, INVALID when
/// covered but mismatched, VALID when some VRP authorizes the origin.
pub fn classify(announcement: (Prefix, u32), vrps: &BTreeSet<Vrp>) -> RouteValidity {
    let (prefix, origin) = announcement;
    let mut covered = false;
    for vrp in vrps {
        if vrp.prefix.covers(&prefix) {
            covered = true;
            if vrp.asn == origin && prefix.len <= vrp.max_length {
                return RouteValidity::Valid;
            }
        }
    }
    if covered {
        RouteValidity::Invalid
    } else {
        RouteValidity::Unknown
    }
}

//------------ ValidationOutcome ---------------------------------------------

#[derive(Debug, Clone)]
pub struct ValidationOutcome {
    pub vrps: BTreeSet<Vrp>,
    pub warnings: Vec<String>,
    /// (limit name, measured value); empty iff the run finished in budget.
    pub violations: Vec<(String, u64)>,
    pub repos_visited: u64,
    pub bytes_fetched: u64,
    pub elapsed: Duration,
    /// Set when a violation cut the traversal short.
    pub partial: bool,
}

impl ValidationOutcome {
    pub fn vrps_csv(&self) -> String {
        let mut out = String::from("prefix,max_length,asn\n");
        for vrp in &self.vrps {
            out.push_str(&vrp.to_string());
            out.push('\n');
        }
        out
    }
}

//------------ Source --------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SourceError {
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("{0}")]
    Unavailable(String),
}

/// Where repository data comes from: live RRDP over HTTPS, or a
/// materialized directory tree.
pub trait Source {
    /// DER of the trust anchor certificate for this TAL.
    fn trust_cert(
        &mut self,
        tal: &Tal,
        budget: &ResourceBudget,
        accounting: &Accounting,
    ) -> Result<Vec<u8>, SourceError>;

    /// The publish set visible through a CA's RRDP notification URI,
    /// as (rsync URI, bytes) pairs.
    fn publishes(
        &mut self,
        notify_uri: &str,
        budget: &ResourceBudget,
        accounting: &Accounting,
    ) -> Result<Vec<(String, Vec<u8>)>, SourceError>;
}

/// Live RRDP source.
pub struct HttpsSource {
    pub client: HttpsClient,
}

impl Source for HttpsSource {
    fn trust_cert(
        &mut self,
        tal: &Tal,
        budget: &ResourceBudget,
        accounting: &Accounting,
    ) -> Result<Vec<u8>, SourceError> {
        let uri = tal
            .uris
            .iter()
            .find(|u| u.starts_with("https://"))
            .ok_or_else(|| SourceError::Unavailable("TAL has no https URI".into()))?;
        let der = self.client.fetch_one(uri, budget, accounting)?;
        let cert = Cert::decode(&der)
            .map_err(|e| SourceError::Unavailable(format!("trust anchor: {e}")))?;
        if cert.spki != tal.public_key {
            return Err(SourceError::Unavailable(
                "trust anchor key differs from TAL".into(),
            ));
        }
        Ok(der)
    }

    fn publishes(
        &mut self,
        notify_uri: &str,
        budget: &ResourceBudget,
        accounting: &Accounting,
    ) -> Result<Vec<(String, Vec<u8>)>, SourceError> {
        let notification_bytes = self.client.fetch_one(notify_uri, budget, accounting)?;
        let notification = parse_notification(&notification_bytes)?;
        let snapshot_bytes =
            self.client
                .fetch_one(&notification.snapshot_uri, budget, accounting)?;
        let digest = hex::encode(Sha256::digest(&snapshot_bytes));
        if !digest.eq_ignore_ascii_case(&notification.snapshot_hash) {
            return Err(SourceError::Unavailable("snapshot hash mismatch".into()));
        }
        let snapshot = parse_snapshot(&snapshot_bytes, budget)?;
        Ok(snapshot
            .publishes
            .into_iter()
            .map(|p| (p.uri, p.data))
            .collect())
    }
}

/// Materialized-directory source: every file below the root, addressed by
/// the rsync URI it was published under.
pub struct DirSource {
    pub root: std::path::PathBuf,
    pub module_base: String,
    cache: Option<Vec<(String, Vec<u8>)>>,
}

impl DirSource {
    /// `module_base` is the URI prefix the tree was materialized from,
    /// e.g. "rsync://h-xyz.example.org/repo/".
    pub fn new(root: std::path::PathBuf, module_base: String) -> DirSource {
        DirSource {
            root,
            module_base,
            cache: None,
        }
    }

    fn load(&mut self) -> Result<&Vec<(String, Vec<u8>)>, SourceError> {
        if self.cache.is_none() {
            let mut files = Vec::new();
            let mut stack = vec![self.root.clone()];
            while let Some(dir) = stack.pop() {
                let entries = std::fs::read_dir(&dir)
                    .map_err(|e| SourceError::Unavailable(format!("{dir:?}: {e}")))?;
                for entry in entries.flatten() {
                    let path = entry.path();
                    if path.is_dir() {
                        stack.push(path);
                    } else if let Ok(rel) = path.strip_prefix(&self.root) {
                        let rel = rel
                            .components()
                            .map(|c| c.as_os_str().to_string_lossy())
                            .collect::<Vec<_>>()
                            .join("/");
                        let data = std::fs::read(&path)
                            .map_err(|e| SourceError::Unavailable(format!("{path:?}: {e}")))?;
                        files.push((format!("{}{rel}", self.module_base), data));
                    }
                }
            }
            files.sort();
            self.cache = Some(files);
        }
        Ok(self.cache.as_ref().unwrap())
    }
}

impl Source for DirSource {
    fn trust_cert(
        &mut self,
        tal: &Tal,
        _budget: &ResourceBudget,
        _accounting: &Accounting,
    ) -> Result<Vec<u8>, SourceError> {
        let der = std::fs::read(self.root.join("ta.cer"))
            .map_err(|e| SourceError::Unavailable(format!("ta.cer: {e}")))?;
        let cert = Cert::decode(&der)
            .map_err(|e| SourceError::Unavailable(format!("trust anchor: {e}")))?;
        if cert.spki != tal.public_key {
            return Err(SourceError::Unavailable(
                "trust anchor key differs from TAL".into(),
            ));
        }
        Ok(der)
    }

    fn publishes(
        &mut self,
        _notify_uri: &str,
        _budget: &ResourceBudget,
        _accounting: &Accounting,
    ) -> Result<Vec<(String, Vec<u8>)>, SourceError> {
        Ok(self.load()?.clone())
    }
}

//------------ validate ------------------------------------------------------

struct CaTask {
    cert: Cert,
    resources: ResourceSet,
    node: NodeAddress,
}

/// Breadth-first validation from a TAL down the tree.
pub fn validate(
    tal: &Tal,
    budget: &ResourceBudget,
    hints: &[TreeHint],
    source: &mut dyn Source,
) -> ValidationOutcome {
    let accounting = Accounting::new(budget.wall_time());
    let mut outcome = ValidationOutcome {
        vrps: BTreeSet::new(),
        warnings: Vec::new(),
        violations: Vec::new(),
        repos_visited: 0,
        bytes_fetched: 0,
        elapsed: Duration::ZERO,
        partial: false,
    };
    let mut hint_counts: HashMap<NodeAddress, u64> = HashMap::new();
    let mut queue: VecDeque<CaTask> = VecDeque::new();

    'run: {
        let ta_der = match source.trust_cert(tal, budget, &accounting) {
            Ok(der) => der,
            Err(err) => {
                record_source_error(&mut outcome, err, "trust anchor");
                break 'run;
            }
        };
        let ta = match Cert::decode(&ta_der) {
            Ok(cert) => cert,
            Err(err) => {
                outcome.warnings.push(format!("trust anchor undecodable: {err}"));
                break 'run;
            }
        };
        if ta.verify_signature(&ta.spki).is_err() {
            outcome.warnings.push("trust anchor self-signature invalid".into());
            break 'run;
        }
        let ta_resources = ta.effective_resources(&ResourceSet::all());
        queue.push_back(CaTask {
            cert: ta,
            resources: ta_resources,
            node: NodeAddress::root(),
        });

        while let Some(task) = queue.pop_front() {
            if let Err(err) = accounting.check_time() {
                record_fetch_error(&mut outcome, err, &accounting);
                break;
            }
            if budget.max_depth.exceeded_by(u64::from(task.node.depth())) {
                outcome.violations.push((
                    "max_depth".into(),
                    budget.max_depth.value().unwrap_or_default(),
                ));
                break;
            }
            if budget.max_repos.exceeded_by(outcome.repos_visited + 1) {
                outcome
                    .violations
                    .push(("max_repos".into(), outcome.repos_visited));
                break;
            }
            outcome.repos_visited += 1;
            let stop = process_ca(
                &task,
                budget,
                hints,
                source,
                &accounting,
                &mut outcome,
                &mut hint_counts,
                &mut queue,
            );
            if stop {
                break;
            }
        }
    }

    outcome.bytes_fetched = accounting
        .total_bytes
        .load(std::sync::atomic::Ordering::Relaxed);
    outcome.elapsed = accounting.started.elapsed();
    outcome.partial = !outcome.violations.is_empty();
    outcome
}

/// Convenience front-end for the live testbed.
pub fn validate_https(
    tal: &Tal,
    budget: &ResourceBudget,
    hints: &[TreeHint],
    connect_addr: std::net::SocketAddr,
) -> ValidationOutcome {
    let mut source = HttpsSource {
        client: HttpsClient::new(connect_addr),
    };
    validate(tal, budget, hints, &mut source)
}

#[allow(clippy::too_many_arguments)]
fn process_ca(
    task: &CaTask,
    budget: &ResourceBudget,
    hints: &[TreeHint],
    source: &mut dyn Source,
    accounting: &Accounting,
    outcome: &mut ValidationOutcome,
    hint_counts: &mut HashMap<NodeAddress, u64>,
    queue: &mut VecDeque<CaTask>,
) -> bool {
    let ca = &task.cert;
    let Some(notify_uri) = &ca.sia_notify else {
        outcome
            .warnings
            .push(format!("{}: no RRDP notification URI", ca.subject_cn));
        return false;
    };
    let publish_list = match source.publishes(notify_uri, budget, accounting) {
        Ok(list) => list,
        Err(err) => {
            let fatal = matches!(
                err,
                SourceError::Fetch(
                    FetchError::WallTimeExceeded
                        | FetchError::TotalBytesExceeded
                        | FetchError::Cancelled
                )
            );
            record_source_error(outcome, err, &ca.subject_cn);
            return fatal;
        }
    };
    let publishes: HashMap<&str, &Vec<u8>> = publish_list
        .iter()
        .map(|(uri, data)| (uri.as_str(), data))
        .collect();
    let Some(repo_base) = &ca.sia_repository else {
        outcome
            .warnings
            .push(format!("{}: no repository URI", ca.subject_cn));
        return false;
    };
    let Some(mft_uri) = &ca.sia_manifest else {
        outcome
            .warnings
            .push(format!("{}: no manifest URI", ca.subject_cn));
        return false;
    };

    // manifest
    let Some(mft_bytes) = publishes.get(mft_uri.as_str()) else {
        outcome
            .warnings
            .push(format!("{}: manifest not published", ca.subject_cn));
        return false;
    };
    let manifest = match decode_object(mft_bytes, DecodeMode::Strict) {
        Ok(DecodedObject::Manifest(obj, content)) => Some((obj, content)),
        Ok(_) => None,
        Err(err) => {
            outcome
                .warnings
                .push(format!("{}: manifest invalid: {err}", ca.subject_cn));
            None
        }
    };
    let Some((mft_obj, mft_content)) = manifest else {
        return false;
    };
    let now = Utc::now();
    if !check_ee(&mft_obj.ee_cert, ca, "manifest", outcome) {
        return false;
    }
    if now < mft_content.this_update || now > mft_content.next_update {
        outcome
            .warnings
            .push(format!("{}: manifest outside its window", ca.subject_cn));
    }

    // CRL: required, and the manifest EE must not be revoked
    let crl = mft_content
        .entries
        .iter()
        .find(|(name, _)| name.ends_with(".crl"))
        .and_then(|(name, hash)| {
            let uri = format!("{repo_base}{name}");
            let bytes = publishes.get(uri.as_str())?;
            if Sha256::digest(bytes)[..] != hash[..] {
                outcome
                    .warnings
                    .push(format!("{}: CRL hash mismatch", ca.subject_cn));
                return None;
            }
            match crate::cert::Crl::decode(bytes) {
                Ok(crl) => Some(crl),
                Err(err) => {
                    outcome
                        .warnings
                        .push(format!("{}: CRL invalid: {err}", ca.subject_cn));
                    None
                }
            }
        });
    match &crl {
        Some(crl) => {
            if crl.verify_signature(&ca.spki).is_err() {
                outcome
                    .warnings
                    .push(format!("{}: CRL signature invalid", ca.subject_cn));
            } else if crl.next_update.is_some_and(|n| n < now) {
                outcome
                    .warnings
                    .push(format!("{}: CRL stale", ca.subject_cn));
            }
        }
        None => {
            outcome
                .warnings
                .push(format!("{}: no usable CRL", ca.subject_cn));
        }
    }
    let revoked = |serial: u64| crl.as_ref().is_some_and(|c| c.is_revoked(serial));
    if revoked(mft_obj.ee_cert.serial) {
        outcome
            .warnings
            .push(format!("{}: manifest EE revoked", ca.subject_cn));
        return false;
    }

    // manifest entries: completeness, hashes, then per-type validation
    let mut children: Vec<CaTask> = Vec::new();
    for (name, expected_hash) in &mft_content.entries {
        if name.ends_with(".crl") {
            continue;
        }
        let uri = format!("{repo_base}{name}");
        let Some(bytes) = publishes.get(uri.as_str()) else {
            outcome
                .warnings
                .push(format!("{}: listed file missing: {name}", ca.subject_cn));
            continue;
        };
        if Sha256::digest(bytes)[..] != expected_hash[..] {
            outcome
                .warnings
                .push(format!("{}: hash mismatch: {name}", ca.subject_cn));
            continue;
        }
        if name.ends_with(".cer") {
            match Cert::decode(bytes) {
                Ok(child) => {
                    if child.verify_signature(&ca.spki).is_err() {
                        outcome.warnings.push(format!(
                            "{}: child signature invalid: {name}",
                            ca.subject_cn
                        ));
                        continue;
                    }
                    if child.aki.is_some() && child.aki != ca.ski {
                        outcome
                            .warnings
                            .push(format!("{}: child AKI mismatch: {name}", ca.subject_cn));
                        continue;
                    }
                    if !child.validity.contains_time(now) {
                        outcome
                            .warnings
                            .push(format!("{}: child expired: {name}", ca.subject_cn));
                        continue;
                    }
                    if revoked(child.serial) {
                        outcome
                            .warnings
                            .push(format!("{}: child revoked: {name}", ca.subject_cn));
                        continue;
                    }
                    if !child.claims_within(&task.resources) {
                        outcome.warnings.push(format!(
                            "{}: child overclaims resources: {name}",
                            ca.subject_cn
                        ));
                        continue;
                    }
                    let resources = child.effective_resources(&task.resources);
                    let node = task.node.child(children.len() as u32);
                    children.push(CaTask {
                        cert: child,
                        resources,
                        node,
                    });
                }
                Err(err) => {
                    outcome
                        .warnings
                        .push(format!("{}: bad certificate {name}: {err}", ca.subject_cn));
                }
            }
        } else {
            match decode_object(bytes, DecodeMode::Strict) {
                Ok(DecodedObject::Roa(obj, roa)) => {
                    if !check_ee(&obj.ee_cert, ca, name, outcome) || revoked(obj.ee_cert.serial) {
                        continue;
                    }
                    let ee_resources = obj.ee_cert.effective_resources(&task.resources);
                    for block in &roa.blocks {
                        let Some(prefix) = block.to_prefix() else {
                            outcome.warnings.push(format!(
                                "{}: unrepresentable prefix in {name}",
                                ca.subject_cn
                            ));
                            continue;
                        };
                        if !ee_resources.contains_prefix(&prefix) {
                            outcome.warnings.push(format!(
                                "{}: ROA prefix outside resources in {name}",
                                ca.subject_cn
                            ));
                            continue;
                        }
                        outcome.vrps.insert(Vrp {
                            prefix,
                            max_length: block.max_length.unwrap_or(block.prefix_len) as u8,
                            asn: roa.as_id,
                        });
                        if budget.max_vrps.exceeded_by(outcome.vrps.len() as u64) {
                            outcome
                                .violations
                                .push(("max_vrps".into(), outcome.vrps.len() as u64));
                            return true;
                        }
                    }
                }
                Ok(DecodedObject::Manifest(..)) => {
                    outcome
                        .warnings
                        .push(format!("{}: unexpected manifest: {name}", ca.subject_cn));
                }
                Ok(DecodedObject::Ghostbusters(..)) => {}
                Err(err) => {
                    // broken objects produce a warning and the run moves on
                    outcome
                        .warnings
                        .push(format!("{}: bad object {name}: {err}", ca.subject_cn));
                }
            }
        }
    }

    // enqueue children, first-come-first-served under tree hints
    for child in children {
        if budget.hints_enabled && !admit_child(hints, &child.node, hint_counts) {
            outcome.warnings.push(format!(
                "{}: child skipped by tree hint",
                child.cert.subject_cn
            ));
            continue;
        }
        queue.push_back(child);
    }
    false
}

/// Checks hint budgets for a prospective child and, when admitted, charges
/// every hinted ancestor.
fn admit_child(
    hints: &[TreeHint],
    child: &NodeAddress,
    counts: &mut HashMap<NodeAddress, u64>,
) -> bool {
    let applicable: Vec<&TreeHint> = hints
        .iter()
        .filter(|h| is_ancestor_or_self(&h.node, child) && h.node.0.len() < child.0.len())
        .collect();
    for hint in &applicable {
        if *counts.get(&hint.node).unwrap_or(&0) >= hint.max_descendants {
            return false;
        }
    }
    for hint in &applicable {
        *counts.entry(hint.node.clone()).or_insert(0) += 1;
    }
    true
}

fn check_ee(
    ee: &Cert,
    ca: &Cert,
    what: &str,
    outcome: &mut ValidationOutcome,
) -> bool {
    let now = Utc::now();
    if ee.verify_signature(&ca.spki).is_err() {
        outcome
            .warnings
            .push(format!("{}: {what} EE signature invalid", ca.subject_cn));
        return false;
    }
    if ee.aki.is_some() && ee.aki != ca.ski {
        outcome
            .warnings
            .push(format!("{}: {what} EE AKI mismatch", ca.subject_cn));
        return false;
    }
    if !ee.validity.contains_time(now) {
        outcome
            .warnings
            .push(format!("{}: {what} EE outside validity", ca.subject_cn));
        return false;
    }
    true
}

fn record_source_error(outcome: &mut ValidationOutcome, err: SourceError, who: &str) {
    match err {
        SourceError::Fetch(f) => {
            // reuse the fetch mapping without an accounting reference
            match f {
                FetchError::RedirectLimit { hops } => {
                    outcome
                        .violations
                        .push(("max_redirects".into(), u64::from(hops)));
                }
                FetchError::RateLimitExcessive { retry_after } => {
                    outcome
                        .violations
                        .push(("max_retry_after".into(), retry_after));
                }
                FetchError::BombDetected { decompressed, .. } => {
                    outcome
                        .violations
                        .push(("max_decompress_ratio".into(), decompressed));
                }
                FetchError::StallDetected { bytes, .. } => {
                    outcome.violations.push(("min_transfer_rate".into(), bytes));
                }
                FetchError::ObjectTooLarge { limit } => {
                    outcome.violations.push(("max_object_bytes".into(), limit));
                }
                FetchError::TotalBytesExceeded => {
                    outcome.violations.push(("max_total_bytes".into(), 0));
                }
                FetchError::WallTimeExceeded => {
                    outcome.violations.push(("max_wall_time".into(), 0));
                }
                FetchError::Cancelled => {
                    outcome.warnings.push(format!("{who}: run cancelled"));
                }
                FetchError::Http(msg) | FetchError::Io(msg) => {
                    outcome.warnings.push(format!("{who}: fetch failed: {msg}"));
                }
            }
        }
        SourceError::Snapshot(s) => match s {
            SnapshotError::XmlRejected(reason) => {
                outcome.violations.push((format!("xml_rejected:{reason}"), 1));
            }
            SnapshotError::PathTooLong { len, .. } => {
                outcome.violations.push(("max_path_len".into(), len));
            }
            SnapshotError::PathTraversal(uri) => {
                outcome.violations.push(("path_traversal".into(), 1));
                outcome.warnings.push(format!("{who}: traversal URI {uri}"));
            }
            SnapshotError::Malformed(msg) => {
                outcome
                    .warnings
                    .push(format!("{who}: malformed snapshot: {msg}"));
            }
        },
        SourceError::Unavailable(msg) => {
            outcome.warnings.push(format!("{who}: {msg}"));
        }
    }
}

fn record_fetch_error(outcome: &mut ValidationOutcome, err: FetchError, accounting: &Accounting) {
    match err {
        FetchError::WallTimeExceeded => {
            outcome
                .violations
                .push(("max_wall_time".into(), accounting.started.elapsed().as_secs()));
        }
        other => record_source_error(outcome, SourceError::Fetch(other), "run"),
    }
}
