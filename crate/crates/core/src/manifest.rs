//! Manifest eContent (RFC 6486).

use chrono::{DateTime, Utc};
use sha2::{Digest, Sha256};

use crate::cert::ObjectError;
use crate::der::{self};
use crate::oid;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestContent {
    pub manifest_number: u64,
    pub this_update: DateTime<Utc>,
    pub next_update: DateTime<Utc>,
    pub entries: Vec<(String, [u8; 32])>,
}

impl ManifestContent {
    /// Builds the content listing `files` as `(name, bytes)` pairs; hashes
    /// are computed here.
    pub fn for_files<'a>(
        manifest_number: u64,
        this_update: DateTime<Utc>,
        next_update: DateTime<Utc>,
        files: impl IntoIterator<Item = (&'a str, &'a [u8])>,
    ) -> Result<ManifestContent, ObjectError> {
        let mut entries = Vec::new();
        for (name, bytes) in files {
            entries.push((name.to_string(), Sha256::digest(bytes).into()));
        }
        ManifestContent::new(manifest_number, this_update, next_update, entries)
    }

    pub fn new(
        manifest_number: u64,
        this_update: DateTime<Utc>,
        next_update: DateTime<Utc>,
        entries: Vec<(String, [u8; 32])>,
    ) -> Result<ManifestContent, ObjectError> {
        let mut names: Vec<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        if let Some(dup) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(ObjectError::DuplicateEntry(dup[0].to_string()));
        }
        if this_update >= next_update {
            return Err(ObjectError::BoundsViolation(
                "thisUpdate must precede nextUpdate".into(),
            ));
        }
        Ok(ManifestContent {
            manifest_number,
            this_update,
            next_update,
            entries,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let files: Vec<Vec<u8>> = self
            .entries
            .iter()
            .map(|(name, hash)| der::seq(&[&der::ia5_string(name), &der::bit_string(0, hash)]))
            .collect();
        let refs: Vec<&[u8]> = files.iter().map(|v| v.as_slice()).collect();
        der::seq(&[
            &der::uint(self.manifest_number),
            &encode_gen_time(self.this_update),
            &encode_gen_time(self.next_update),
            &oid::SHA256.encode(),
            &der::seq(&refs),
        ])
    }

    pub fn decode(data: &[u8]) -> Result<ManifestContent, ObjectError> {
        let (content, _) = der::parse_all(data, |rd| {
            rd.sequence(|s| {
                if s.peek_tag() == Some(der::ctx(0)) {
                    s.nested(der::ctx(0), |v| v.uint().map(|_| ()))?;
                }
                let manifest_number = s.uint()?;
                let this_update = decode_gen_time(s)?;
                let next_update = decode_gen_time(s)?;
                let hash_alg = s.oid()?;
                if hash_alg != *oid::SHA256 {
                    return Err(der::DerError::BadValue("unsupported hash".into()));
                }
                let mut entries = Vec::new();
                s.sequence(|files| {
                    while !files.is_empty() {
                        files.sequence(|f| {
                            let name = f.expect(der::TAG_IA5_STRING)?;
                            let (unused, hash) = f.bit_string()?;
                            if unused != 0 || hash.len() != 32 {
                                return Err(der::DerError::BadValue("bad file hash".into()));
                            }
                            let mut h = [0u8; 32];
                            h.copy_from_slice(hash);
                            entries.push((String::from_utf8_lossy(name).into_owned(), h));
                            Ok(())
                        })?;
                    }
                    Ok(())
                })?;
                Ok(ManifestContent {
                    manifest_number,
                    this_update,
                    next_update,
                    entries,
                })
            })
        })?;
        // re-run the constructor checks on decoded data
        ManifestContent::new(
            content.manifest_number,
            content.this_update,
            content.next_update,
            content.entries,
        )
    }

    pub fn entry(&self, name: &str) -> Option<&[u8; 32]> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, h)| h)
    }
}

fn encode_gen_time(t: DateTime<Utc>) -> Vec<u8> {
    der::tlv(
        der::TAG_GENERALIZED_TIME,
        t.format("%Y%m%d%H%M%SZ").to_string().as_bytes(),
    )
}

fn decode_gen_time(rd: &mut der::Reader<'_>) -> Result<DateTime<Utc>, der::DerError> {
    let content = rd.expect(der::TAG_GENERALIZED_TIME)?;
    let s = std::str::from_utf8(content)
        .map_err(|_| der::DerError::BadValue("non-ASCII time".into()))?;
    chrono::NaiveDateTime::parse_from_str(s, "%Y%m%d%H%M%SZ")
        .map(|dt| chrono::TimeZone::from_utc_datetime(&Utc, &dt))
        .map_err(|_| der::DerError::BadValue(format!("bad time {s:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn times() -> (DateTime<Utc>, DateTime<Utc>) {
        (
            Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap(),
            Utc.with_ymd_and_hms(2026, 1, 2, 0, 0, 0).unwrap(),
        )
    }

    #[test]
    fn round_trip() {
        let (t0, t1) = times();
        let content = ManifestContent::for_files(
            7,
            t0,
            t1,
            [
                ("a.roa", b"aaa".as_slice()),
                ("b.roa", b"bbb".as_slice()),
                ("ca.crl", b"ccc".as_slice()),
            ],
        )
        .unwrap();
        let decoded = ManifestContent::decode(&content.encode()).unwrap();
        assert_eq!(decoded, content);
        assert_eq!(decoded.entries.len(), 3);
    }

    #[test]
    fn empty_manifest_is_valid() {
        let (t0, t1) = times();
        let content = ManifestContent::new(1, t0, t1, Vec::new()).unwrap();
        let decoded = ManifestContent::decode(&content.encode()).unwrap();
        assert!(decoded.entries.is_empty());
    }

    #[test]
    fn duplicate_entry_rejected() {
        let (t0, t1) = times();
        let err = ManifestContent::for_files(
            1,
            t0,
            t1,
            [("a.roa", b"x".as_slice()), ("a.roa", b"y".as_slice())],
        )
        .unwrap_err();
        assert!(matches!(err, ObjectError::DuplicateEntry(_)));
    }

    #[test]
    fn update_order_enforced() {
        let (t0, _) = times();
        assert!(matches!(
            ManifestContent::new(1, t0, t0, Vec::new()),
            Err(ObjectError::BoundsViolation(_))
        ));
    }
}
