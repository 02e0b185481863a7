//! Hardened RRDP XML parsing.
//!
//! Both notification and snapshot documents are parsed in streaming mode
//! with a fixed set of refusals: any DTD (and with it, any entity
//! definition) is rejected outright, entity references are never expanded,
//! and external references are never dereferenced. Publish URIs are length-
//! checked and path-normalized before anything downstream touches them.

use base64::Engine as _;
use quick_xml::events::Event;

use super::{Limit, ResourceBudget};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SnapshotError {
    #[error("XML rejected: {0}")]
    XmlRejected(String),
    #[error("publish URI length {len} exceeds limit {limit}")]
    PathTooLong { len: u64, limit: u64 },
    #[error("publish URI escapes its repository root: {0}")]
    PathTraversal(String),
    #[error("malformed document: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publish {
    pub uri: String,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub session_id: String,
    pub serial: u64,
    pub publishes: Vec<Publish>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotificationRef {
    pub session_id: String,
    pub serial: u64,
    pub snapshot_uri: String,
    pub snapshot_hash: String,
}

/// Parses a snapshot document, applying the XML and URI defenses.
pub fn parse_snapshot(bytes: &[u8], budget: &ResourceBudget) -> Result<Snapshot, SnapshotError> {
    let mut reader = quick_xml::Reader::from_reader(bytes);
    reader.config_mut().expand_empty_elements = false;

    let mut session_id = String::new();
    let mut serial = 0u64;
    let mut publishes = Vec::new();
    let mut current_uri: Option<String> = None;
    let mut current_text = String::new();
    let mut buf = Vec::new();
    let b64 = base64::engine::general_purpose::STANDARD;

    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| classify_xml_error(e))?;
        match event {
            Event::DocType(_) => {
                return Err(SnapshotError::XmlRejected("entity definitions".into()))
            }
            Event::Start(start) | Event::Empty(start) => {
                let name = start.local_name().as_ref().to_vec();
                match name.as_slice() {
                    b"snapshot" => {
                        for attr in start.attributes().with_checks(false).flatten() {
                            let value = String::from_utf8_lossy(&attr.value).into_owned();
                            match attr.key.local_name().as_ref() {
                                b"session_id" => session_id = value,
                                b"serial" => {
                                    serial = value.parse().map_err(|_| {
                                        SnapshotError::Malformed("bad serial".into())
                                    })?
                                }
                                _ => {}
                            }
                        }
                    }
                    b"publish" => {
                        let mut uri = None;
                        for attr in start.attributes().with_checks(false).flatten() {
                            if attr.key.local_name().as_ref() == b"uri" {
                                // raw bytes on purpose: unescaping is where
                                // entity expansion would happen
                                uri = Some(String::from_utf8_lossy(&attr.value).into_owned());
                            }
                        }
                        let uri =
                            uri.ok_or_else(|| SnapshotError::Malformed("publish without uri".into()))?;
                        check_uri(&uri, budget)?;
                        current_uri = Some(uri);
                        current_text.clear();
                    }
                    _ => {}
                }
            }
            Event::Text(text) => {
                if current_uri.is_some() {
                    current_text.push_str(&String::from_utf8_lossy(&text));
                }
            }
            Event::End(end) => {
                if end.local_name().as_ref() == b"publish" {
                    if let Some(uri) = current_uri.take() {
                        let compact: String =
                            current_text.chars().filter(|c| !c.is_whitespace()).collect();
                        let data = b64
                            .decode(compact.as_bytes())
                            .map_err(|e| SnapshotError::Malformed(format!("base64: {e}")))?;
                        publishes.push(Publish { uri, data });
                    }
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if session_id.is_empty() {
        return Err(SnapshotError::Malformed("missing snapshot element".into()));
    }
    Ok(Snapshot {
        session_id,
        serial,
        publishes,
    })
}

/// Parses a notification document under the same XML defenses.
pub fn parse_notification(bytes: &[u8]) -> Result<NotificationRef, SnapshotError> {
    let mut reader = quick_xml::Reader::from_reader(bytes);
    let mut out = NotificationRef {
        session_id: String::new(),
        serial: 0,
        snapshot_uri: String::new(),
        snapshot_hash: String::new(),
    };
    let mut buf = Vec::new();
    loop {
        match reader
            .read_event_into(&mut buf)
            .map_err(|e| classify_xml_error(e))?
        {
            Event::DocType(_) => {
                return Err(SnapshotError::XmlRejected("entity definitions".into()))
            }
            Event::Start(start) | Event::Empty(start) => {
                match start.local_name().as_ref() {
                    b"notification" => {
                        for attr in start.attributes().with_checks(false).flatten() {
                            let value = String::from_utf8_lossy(&attr.value).into_owned();
                            match attr.key.local_name().as_ref() {
                                b"session_id" => out.session_id = value,
                                b"serial" => out.serial = value.parse().unwrap_or(0),
                                _ => {}
                            }
                        }
                    }
                    b"snapshot" => {
                        for attr in start.attributes().with_checks(false).flatten() {
                            let value = String::from_utf8_lossy(&attr.value).into_owned();
                            match attr.key.local_name().as_ref() {
                                b"uri" => out.snapshot_uri = value,
                                b"hash" => out.snapshot_hash = value,
                                _ => {}
                            }
                        }
                    }
                    _ => {}
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if out.snapshot_uri.is_empty() {
        return Err(SnapshotError::Malformed("missing snapshot reference".into()));
    }
    Ok(out)
}

fn classify_xml_error(e: quick_xml::Error) -> SnapshotError {
    SnapshotError::Malformed(format!("XML: {e}"))
}

fn check_uri(uri: &str, budget: &ResourceBudget) -> Result<(), SnapshotError> {
    if let Limit::At(limit) = budget.max_path_len {
        if uri.len() as u64 > limit {
            return Err(SnapshotError::PathTooLong {
                len: uri.len() as u64,
                limit,
            });
        }
    }
    if budget.reject_traversal && uri_escapes_root(uri) {
        return Err(SnapshotError::PathTraversal(uri.to_string()));
    }
    Ok(())
}

/// True when the path of an rsync URI would escape its repository root
/// after lexical normalization, or contains `.`/`..` segments at all.
pub fn uri_escapes_root(uri: &str) -> bool {
    let Some(rest) = uri.strip_prefix("rsync://") else {
        // non-rsync publish URIs are out of place; treat as escaping
        return true;
    };
    let path = match rest.find('/') {
        Some(pos) => &rest[pos + 1..],
        None => return true,
    };
    // first segment is the module name; a real file resolves strictly
    // below it, so the normalized depth must end at 2 or more
    let mut depth: i64 = 0;
    for segment in path.split('/') {
        match segment {
            "" => {}
            "." => return true,
            ".." => {
                depth -= 1;
                if depth < 1 {
                    return true;
                }
            }
            _ => depth += 1,
        }
    }
    depth < 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rp::ResourceBudget;

    fn budget() -> ResourceBudget {
        ResourceBudget::defended()
    }

    fn wrap(publishes: &str) -> Vec<u8> {
        format!(
            "<snapshot xmlns=\"http://www.ripe.net/rpki/rrdp\" version=\"1\" \
             session_id=\"s\" serial=\"1\">{publishes}</snapshot>"
        )
        .into_bytes()
    }

    #[test]
    fn plain_snapshot_parses() {
        let doc = wrap("<publish uri=\"rsync://h/repo/a.roa\">AAEC</publish>");
        let snap = parse_snapshot(&doc, &budget()).unwrap();
        assert_eq!(snap.serial, 1);
        assert_eq!(snap.publishes.len(), 1);
        assert_eq!(snap.publishes[0].data, vec![0, 1, 2]);
    }

    #[test]
    fn doctype_rejected_immediately() {
        let doc = b"<?xml version=\"1.0\"?><!DOCTYPE snapshot [<!ENTITY a \"b\">]>\
                    <snapshot session_id=\"s\" serial=\"1\"/>";
        assert_eq!(
            parse_snapshot(doc, &budget()).unwrap_err(),
            SnapshotError::XmlRejected("entity definitions".into())
        );
    }

    #[test]
    fn traversal_uri_rejected() {
        let doc = wrap(
            "<publish uri=\"rsync://h/repo/../../etc/cron.daily/evil.roa\">AA==</publish>",
        );
        assert!(matches!(
            parse_snapshot(&doc, &budget()).unwrap_err(),
            SnapshotError::PathTraversal(_)
        ));
        let mut open = budget();
        open.reject_traversal = false;
        assert!(parse_snapshot(&doc, &open).is_ok());
    }

    #[test]
    fn oversized_uri_rejected() {
        let long = "p".repeat(70 * 1024);
        let doc = wrap(&format!("<publish uri=\"rsync://h/repo/{long}\">AA==</publish>"));
        assert!(matches!(
            parse_snapshot(&doc, &budget()).unwrap_err(),
            SnapshotError::PathTooLong { .. }
        ));
    }

    #[test]
    fn escape_detector() {
        assert!(!uri_escapes_root("rsync://h/repo/a/b.roa"));
        assert!(uri_escapes_root("rsync://h/repo/../x"));
        assert!(uri_escapes_root("rsync://h/repo/a/../../x"));
        assert!(uri_escapes_root("rsync://h/repo/./x"));
        assert!(uri_escapes_root("https://h/repo/x"));
        assert!(uri_escapes_root("rsync://h/repo/"));
    }
}
