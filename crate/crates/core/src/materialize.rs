//! RRDP-to-filesystem bridge for rsync serving.
//!
//! Walks an instance's publication points, parses each snapshot and writes
//! one file per publish element under a per-instance root. Publish URIs
//! that would escape the root after normalization are skipped and logged,
//! never written; an external rsync daemon serves the result read-only.

use std::path::{Component, Path, PathBuf};

use crate::rp::snapshot::{parse_snapshot, SnapshotError};
use crate::rp::{Limit, ResourceBudget};
use crate::scenario::{Body, Engine, HttpBehavior, NodeAddress, TestInstance};

/// Default per-instance disk cap.
pub const DEFAULT_DISK_BUDGET: u64 = 1 << 30;
/// Default depth to which unbounded chains are materialized.
pub const DEFAULT_DEPTH_CAP: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MaterializeError {
    #[error("disk budget of {budget} bytes exceeded")]
    DiskBudgetExceeded { budget: u64 },
    #[error("I/O error: {0}")]
    Io(String),
}

#[derive(Debug, Clone)]
pub struct MaterializeOptions {
    pub depth_cap: u32,
    pub disk_budget: u64,
}

impl Default for MaterializeOptions {
    fn default() -> Self {
        MaterializeOptions {
            depth_cap: DEFAULT_DEPTH_CAP,
            disk_budget: DEFAULT_DISK_BUDGET,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaterializedRepo {
    pub root_dir: PathBuf,
    pub instance_uuid: String,
    pub hostname: String,
    pub file_count: u64,
    pub byte_count: u64,
    /// Publish URIs skipped because they would escape the root.
    pub skipped: Vec<String>,
    /// Snapshots that could not be interpreted at all.
    pub unparsable: Vec<String>,
}

/// Materializes one instance under `root_dir`.
pub fn materialize(
    engine: &Engine,
    instance: &TestInstance,
    root_dir: &Path,
    options: &MaterializeOptions,
) -> Result<MaterializedRepo, MaterializeError> {
    std::fs::create_dir_all(root_dir).map_err(io_err)?;
    let mut repo = MaterializedRepo {
        root_dir: root_dir.to_path_buf(),
        instance_uuid: instance.uuid.clone(),
        hostname: instance.hostname.clone(),
        file_count: 0,
        byte_count: 0,
        skipped: Vec::new(),
        unparsable: Vec::new(),
    };

    // trust anchor certificate at the module root
    if let Body::Bytes(ta) = engine.resolve(instance, "/ta.cer").body {
        write_file(&mut repo, root_dir.join("ta.cer"), &ta, options)?;
    }

    // snapshots are parsed with transfer defenses off: the sandbox below is
    // the materializer's own line of defense
    let mut parse_budget = ResourceBudget::undefended();
    parse_budget.max_path_len = Limit::At(16 << 20);

    let mut queue = vec![NodeAddress::root()];
    while let Some(node) = queue.pop() {
        let path = format!("/{}snapshot.xml", node.path_prefix());
        let resource = engine.resolve(instance, &path);
        let (body, label) = match (&resource.body, &resource.behavior) {
            (Body::Bytes(b), HttpBehavior::Normal | HttpBehavior::Trickle { .. }) => {
                (b.clone(), path.clone())
            }
            _ => {
                repo.unparsable.push(path.clone());
                continue;
            }
        };
        let snapshot = match parse_snapshot(&body, &parse_budget) {
            Ok(snapshot) => snapshot,
            Err(SnapshotError::XmlRejected(reason)) => {
                log::warn!("{label}: snapshot not convertible: {reason}");
                repo.unparsable.push(label);
                continue;
            }
            Err(err) => {
                log::warn!("{label}: snapshot not convertible: {err}");
                repo.unparsable.push(label);
                continue;
            }
        };
        for publish in snapshot.publishes {
            match sandboxed_target(root_dir, &publish.uri) {
                Some(target) => {
                    write_file(&mut repo, target, &publish.data, options)?;
                }
                None => {
                    log::warn!("skipping escaping publish URI {}", publish.uri);
                    repo.skipped.push(publish.uri);
                }
            }
        }
        if node.depth() < options.depth_cap {
            // descend to children that actually exist
            for i in 0.. {
                let child = node.child(i);
                let probe = format!("/{}notification.xml", child.path_prefix());
                if engine.resolve(instance, &probe).behavior == HttpBehavior::NotFound {
                    break;
                }
                queue.push(child);
            }
        }
    }
    Ok(repo)
}

/// Writes arbitrary publish pairs under `root_dir` with the same sandbox;
/// the property-test entry point.
pub fn materialize_publishes(
    root_dir: &Path,
    publishes: &[(String, Vec<u8>)],
    options: &MaterializeOptions,
) -> Result<MaterializedRepo, MaterializeError> {
    std::fs::create_dir_all(root_dir).map_err(io_err)?;
    let mut repo = MaterializedRepo {
        root_dir: root_dir.to_path_buf(),
        instance_uuid: String::new(),
        hostname: String::new(),
        file_count: 0,
        byte_count: 0,
        skipped: Vec::new(),
        unparsable: Vec::new(),
    };
    for (uri, data) in publishes {
        match sandboxed_target(root_dir, uri) {
            Some(target) => write_file(&mut repo, target, data, options)?,
            None => repo.skipped.push(uri.clone()),
        }
    }
    Ok(repo)
}

/// Maps a publish URI to a path strictly below `root_dir`, or `None` when
/// the URI is not a clean rsync path under its module.
fn sandboxed_target(root_dir: &Path, uri: &str) -> Option<PathBuf> {
    if crate::rp::snapshot::uri_escapes_root(uri) {
        return None;
    }
    let rest = uri.strip_prefix("rsync://")?;
    let after_host = &rest[rest.find('/')? + 1..];
    let relative = &after_host[after_host.find('/')? + 1..];
    let mut target = root_dir.to_path_buf();
    for segment in relative.split('/').filter(|s| !s.is_empty()) {
        target.push(segment);
    }
    // belt and braces: re-check lexically on the joined path
    let mut depth = 0i64;
    for component in target.strip_prefix(root_dir).ok()?.components() {
        match component {
            Component::Normal(_) => depth += 1,
            Component::ParentDir => depth -= 1,
            Component::CurDir => return None,
            _ => return None,
        }
        if depth < 0 {
            return None;
        }
    }
    (depth > 0).then_some(target)
}

fn write_file(
    repo: &mut MaterializedRepo,
    target: PathBuf,
    data: &[u8],
    options: &MaterializeOptions,
) -> Result<(), MaterializeError> {
    if repo.byte_count + data.len() as u64 > options.disk_budget {
        return Err(MaterializeError::DiskBudgetExceeded {
            budget: options.disk_budget,
        });
    }
    if let Some(parent) = target.parent() {
        std::fs::create_dir_all(parent).map_err(io_err)?;
    }
    std::fs::write(&target, data).map_err(io_err)?;
    repo.file_count += 1;
    repo.byte_count += data.len() as u64;
    Ok(())
}

fn io_err(e: std::io::Error) -> MaterializeError {
    MaterializeError::Io(e.to_string())
}

/// One read-only rsync module per materialized repo, named by hostname.
pub fn emit_rsyncd_config(repos: &[MaterializedRepo]) -> String {
    let mut out = String::from("uid = nobody\ngid = nobody\nuse chroot = yes\n\n");
    for repo in repos {
        out.push_str(&format!(
            "[{}]\n    path = {}\n    comment = materialized test instance {}\n    read only = yes\n\n",
            repo.hostname,
            repo.root_dir.display(),
            repo.instance_uuid,
        ));
    }
    out
}
