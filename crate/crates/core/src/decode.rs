//! Top-level signed object decoding.
//!
//! `decode_object` accepts arbitrary bytes and classifies them by the CMS
//! content type. It never panics; malformed input maps to an error.

use crate::cert::ObjectError;
use crate::manifest::ManifestContent;
use crate::oid;
use crate::roa::RoaContent;
use crate::sigobj::{DecodeMode, SignedObject};

#[derive(Debug, Clone)]
pub enum DecodedObject {
    Manifest(Box<SignedObject>, ManifestContent),
    Roa(Box<SignedObject>, RoaContent),
    Ghostbusters(Box<SignedObject>, String),
}

impl DecodedObject {
    pub fn signed(&self) -> &SignedObject {
        match self {
            DecodedObject::Manifest(s, _) => s,
            DecodedObject::Roa(s, _) => s,
            DecodedObject::Ghostbusters(s, _) => s,
        }
    }
}

pub fn decode_object(data: &[u8], mode: DecodeMode) -> Result<DecodedObject, ObjectError> {
    let signed = SignedObject::decode(data, mode)?;
    if signed.content_type == *oid::CT_MANIFEST {
        let content = ManifestContent::decode(&signed.econtent)?;
        Ok(DecodedObject::Manifest(Box::new(signed), content))
    } else if signed.content_type == *oid::CT_ROA {
        let content = RoaContent::decode(&signed.econtent, mode)?;
        Ok(DecodedObject::Roa(Box::new(signed), content))
    } else if signed.content_type == *oid::CT_GHOSTBUSTERS {
        let text = String::from_utf8_lossy(&signed.econtent).into_owned();
        Ok(DecodedObject::Ghostbusters(Box::new(signed), text))
    } else {
        Err(ObjectError::WrongContentType)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cert::Validity;
    use crate::keys::{KeyMode, KeyPair};
    use crate::roa::build_roa;
    use crate::sigobj::{sign_object, IssuerContext};
    use chrono::{TimeZone, Utc};
    use rand::{Rng, SeedableRng};

    fn bundle_with(content_type: &crate::der::Oid, econtent: &[u8]) -> Vec<u8> {
        let ca = KeyPair::derive([1u8; 32], KeyMode::Fast);
        let ee = KeyPair::derive([2u8; 32], KeyMode::Fast);
        let validity = Validity::new(
            Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap(),
            Utc.with_ymd_and_hms(2027, 1, 1, 0, 0, 0).unwrap(),
        )
        .unwrap();
        sign_object(
            content_type,
            econtent,
            &IssuerContext {
                key: &ca,
                cn: "ca",
                crl_uri: "rsync://example.org/repo/ca.crl",
                aia_uri: "rsync://example.org/ca.cer",
            },
            &ee,
            "rsync://example.org/repo/x.roa",
            validity,
            1,
        )
        .der
    }

    #[test]
    fn roa_round_trip() {
        let roa = build_roa(65001, &[("10.0.0.0/8".parse().unwrap(), Some(24))]).unwrap();
        let der = bundle_with(&oid::CT_ROA, &roa.encode());
        match decode_object(&der, DecodeMode::Strict).unwrap() {
            DecodedObject::Roa(_, content) => assert_eq!(content, roa),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn nul_content_roa_is_error_not_crash() {
        let der = bundle_with(&oid::CT_ROA, &[0]);
        let err = decode_object(&der, DecodeMode::Strict).unwrap_err();
        assert!(matches!(
            err,
            ObjectError::MalformedDer(_) | ObjectError::BoundsViolation(_)
        ));
    }

    #[test]
    fn random_bytes_total() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(42);
        for _ in 0..200 {
            let len = rng.gen_range(0..4096);
            let data: Vec<u8> = (0..len).map(|_| rng.r#gen()).collect();
            let start = std::time::Instant::now();
            let _ = decode_object(&data, DecodeMode::Strict);
            assert!(start.elapsed().as_secs() < 1);
        }
    }
}
