//! CMS signed objects (RFC 5652 profiled by RFC 6488).
//!
//! A signed object wraps DER eContent in a SignedData structure carrying a
//! one-off end-entity certificate issued by the publishing CA. Encoding is
//! always DER; decoding is total and, in strict mode, verifies the signature
//! chain down to the eContent digest.

use sha2::{Digest, Sha256};

use crate::cert::{build_ee_cert, Cert, ObjectError, Validity};
use crate::der::{self, Oid};
use crate::keys::{KeyPair, PublicKey};
use crate::oid;

/// Decode strictness. STRICT enforces DER, signatures and content bounds;
/// LAX only requires well-formed structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Strict,
    Lax,
}

/// A DER-encoded CMS object plus its embedded EE certificate.
#[derive(Debug, Clone)]
pub struct SignedObjectBundle {
    pub content_type_oid: Oid,
    pub econtent: Vec<u8>,
    pub ee_cert: Vec<u8>,
    pub der: Vec<u8>,
}

/// Everything `sign_object` needs to know about the issuing CA.
pub struct IssuerContext<'a> {
    pub key: &'a KeyPair,
    pub cn: &'a str,
    /// rsync URI of the CRL in the issuer's publication point.
    pub crl_uri: &'a str,
    /// rsync URI of the issuer's own certificate.
    pub aia_uri: &'a str,
}

/// Signs `econtent` as a CMS signed object of the given type.
///
/// An empty `econtent` is accepted; the broken-object scenarios rely on
/// bodies as small as a single byte.
pub fn sign_object(
    content_type: &Oid,
    econtent: &[u8],
    issuer: &IssuerContext<'_>,
    ee_key: &KeyPair,
    object_uri: &str,
    validity: Validity,
    ee_serial: u64,
) -> SignedObjectBundle {
    let ee_cert = build_ee_cert(
        issuer.key,
        issuer.cn,
        ee_key,
        &format!("ee-{ee_serial}"),
        object_uri,
        issuer.crl_uri,
        issuer.aia_uri,
        validity,
        ee_serial,
    );
    let digest_alg = der::seq(&[&oid::SHA256.encode()]);
    let econtent_digest = Sha256::digest(econtent);

    // signedAttrs: contentType + messageDigest, DER-sorted by encoding
    let attr_content_type = der::seq(&[
        &oid::CONTENT_TYPE.encode(),
        &der::set(&[&content_type.encode()]),
    ]);
    let attr_message_digest = der::seq(&[
        &oid::MESSAGE_DIGEST.encode(),
        &der::set(&[&der::octet_string(&econtent_digest)]),
    ]);
    let mut attrs = [attr_content_type, attr_message_digest];
    attrs.sort();
    let attr_refs: Vec<&[u8]> = attrs.iter().map(|v| v.as_slice()).collect();
    let signed_attrs_set = der::set(&attr_refs);
    let signature = ee_key.sign(&signed_attrs_set);
    // in the message the attributes are tagged [0] IMPLICIT
    let signed_attrs_tagged = der::tlv(der::ctx(0), &signed_attrs_set[2 + len_len(&signed_attrs_set)..]);

    let signer_info = der::seq(&[
        &der::uint(3),
        &der::tlv(der::ctx_prim(0), &ee_key.key_id()),
        &digest_alg,
        &signed_attrs_tagged,
        &ee_key.signature_algorithm(),
        &der::octet_string(&signature),
    ]);

    let encap = der::seq(&[
        &content_type.encode(),
        &der::tlv(der::ctx(0), &der::octet_string(econtent)),
    ]);
    let signed_data = der::seq(&[
        &der::uint(3),
        &der::set(&[&digest_alg]),
        &encap,
        &der::tlv(der::ctx(0), &ee_cert),
        &der::set(&[&signer_info]),
    ]);
    let der_full = der::seq(&[
        &oid::SIGNED_DATA.encode(),
        &der::tlv(der::ctx(0), &signed_data),
    ]);
    SignedObjectBundle {
        content_type_oid: content_type.clone(),
        econtent: econtent.to_vec(),
        ee_cert,
        der: der_full,
    }
}

/// Number of length octets following the tag of an encoded TLV.
fn len_len(tlv: &[u8]) -> usize {
    match tlv.get(1) {
        Some(&b) if b < 0x80 => 0,
        Some(&b) => (b & 0x7f) as usize,
        None => 0,
    }
}

/// A decoded CMS signed object, before content interpretation.
#[derive(Debug, Clone)]
pub struct SignedObject {
    pub content_type: Oid,
    pub econtent: Vec<u8>,
    pub ee_cert: Cert,
    pub signed_attrs: Vec<u8>,
    pub signature: Vec<u8>,
    pub message_digest: Vec<u8>,
    pub attr_content_type: Option<Oid>,
    pub ber: bool,
}

impl SignedObject {
    pub fn decode(data: &[u8], mode: DecodeMode) -> Result<SignedObject, ObjectError> {
        let (mut obj, ber) = der::parse_all(data, |rd| {
            rd.sequence(|outer| {
                let ct = outer.oid()?;
                if ct != *oid::SIGNED_DATA {
                    return Err(der::DerError::BadValue("not a SignedData".into()));
                }
                outer.nested(der::ctx(0), parse_signed_data)
            })
        })?;
        obj.ber = ber;
        if mode == DecodeMode::Strict {
            if obj.ber {
                return Err(ObjectError::BerEncoding);
            }
            obj.verify()?;
        }
        Ok(obj)
    }

    /// Verifies the digest of the eContent and the signature over the
    /// signed attributes with the EE certificate's key.
    pub fn verify(&self) -> Result<(), ObjectError> {
        let digest = Sha256::digest(&self.econtent);
        if self.message_digest[..] != digest[..] {
            return Err(ObjectError::SignatureInvalid);
        }
        if let Some(attr_ct) = &self.attr_content_type {
            if *attr_ct != self.content_type {
                return Err(ObjectError::SignatureInvalid);
            }
        }
        let key = PublicKey::from_spki(&self.ee_cert.spki)?;
        if key.verify(&self.signed_attrs, &self.signature) {
            Ok(())
        } else {
            Err(ObjectError::SignatureInvalid)
        }
    }
}

fn parse_signed_data(sd: &mut der::Reader<'_>) -> Result<SignedObject, der::DerError> {
    sd.sequence(|s| {
        s.uint()?; // version
        s.nested(der::TAG_SET, |algs| {
            while !algs.is_empty() {
                algs.raw_tlv()?;
            }
            Ok(())
        })?;
        let (content_type, econtent) = s.sequence(|encap| {
            let ct = encap.oid()?;
            let econtent = if encap.is_empty() {
                Vec::new()
            } else {
                encap.nested(der::ctx(0), |wrap| {
                    // eContent may be a primitive octet string or, in BER,
                    // a constructed one; accept both and concatenate.
                    let mut out = Vec::new();
                    while !wrap.is_empty() {
                        collect_octets(wrap, &mut out, 0)?;
                    }
                    Ok(out)
                })?
            };
            Ok((ct, econtent))
        })?;
        let ee_cert_raw = if s.peek_tag() == Some(der::ctx(0)) {
            s.nested(der::ctx(0), |certs| {
                let first = certs.raw_tlv()?.to_vec();
                while !certs.is_empty() {
                    certs.raw_tlv()?;
                }
                Ok(first)
            })?
        } else {
            return Err(der::DerError::BadValue("missing certificates".into()));
        };
        if s.peek_tag() == Some(der::ctx(1)) {
            s.raw_tlv()?; // crls, ignored
        }
        let (signed_attrs, signature, message_digest, attr_content_type) =
            s.nested(der::TAG_SET, |infos| {
                let out = infos.sequence(parse_signer_info)?;
                while !infos.is_empty() {
                    infos.raw_tlv()?;
                }
                Ok(out)
            })?;
        let ee_cert = Cert::decode(&ee_cert_raw)
            .map_err(|e| der::DerError::BadValue(format!("EE cert: {e}")))?;
        Ok(SignedObject {
            content_type,
            econtent,
            ee_cert,
            signed_attrs,
            signature,
            message_digest,
            attr_content_type,
            ber: false,
        })
    })
}

type SignerInfoParts = (Vec<u8>, Vec<u8>, Vec<u8>, Option<Oid>);

fn parse_signer_info(si: &mut der::Reader<'_>) -> Result<SignerInfoParts, der::DerError> {
    si.uint()?; // version
    si.raw_tlv()?; // sid
    si.raw_tlv()?; // digest algorithm
    let mut message_digest = Vec::new();
    let mut attr_content_type = None;
    let signed_attrs = if si.peek_tag() == Some(der::ctx(0)) {
        let raw = si.raw_tlv()?;
        // re-tag [0] IMPLICIT back to SET for signature verification
        let content = &raw[1 + 1 + len_len(raw)..];
        let as_set = der::tlv(der::TAG_SET, content);
        let ctx = der::ReaderCtx::new();
        let mut rd = ctx.reader(content);
        while !rd.is_empty() {
            rd.sequence(|attr| {
                let attr_oid = attr.oid()?;
                attr.nested(der::TAG_SET, |vals| {
                    if attr_oid == *oid::MESSAGE_DIGEST {
                        message_digest = vals.octet_string()?.to_vec();
                    } else if attr_oid == *oid::CONTENT_TYPE {
                        attr_content_type = Some(vals.oid()?);
                    } else {
                        while !vals.is_empty() {
                            vals.raw_tlv()?;
                        }
                    }
                    Ok(())
                })
            })?;
        }
        as_set
    } else {
        return Err(der::DerError::BadValue("missing signed attributes".into()));
    };
    si.raw_tlv()?; // signature algorithm
    let signature = si.octet_string()?.to_vec();
    while !si.is_empty() {
        si.raw_tlv()?;
    }
    Ok((signed_attrs, signature, message_digest, attr_content_type))
}

fn collect_octets(
    rd: &mut der::Reader<'_>,
    out: &mut Vec<u8>,
    depth: usize,
) -> Result<(), der::DerError> {
    if depth > 8 {
        return Err(der::DerError::DepthExceeded);
    }
    let (tag, content) = rd.read_tlv()?;
    if tag == der::TAG_OCTET_STRING {
        out.extend_from_slice(content);
        Ok(())
    } else if tag == 0x24 {
        // constructed OCTET STRING (BER)
        let ctx = der::ReaderCtx::new();
        let mut inner = ctx.reader(content);
        while !inner.is_empty() {
            collect_octets(&mut inner, out, depth + 1)?;
        }
        Ok(())
    } else {
        Err(der::DerError::UnexpectedTag {
            expected: der::TAG_OCTET_STRING,
            found: tag,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::KeyMode;
    use chrono::{TimeZone, Utc};

    fn validity() -> Validity {
        Validity::new(
            Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap(),
            Utc.with_ymd_and_hms(2027, 1, 1, 0, 0, 0).unwrap(),
        )
        .unwrap()
    }

    fn sample_bundle(econtent: &[u8]) -> SignedObjectBundle {
        let ca = KeyPair::derive([1u8; 32], KeyMode::Fast);
        let ee = KeyPair::derive([2u8; 32], KeyMode::Fast);
        sign_object(
            &oid::CT_ROA,
            econtent,
            &IssuerContext {
                key: &ca,
                cn: "ca",
                crl_uri: "rsync://example.org/repo/ca.crl",
                aia_uri: "rsync://example.org/ca.cer",
            },
            &ee,
            "rsync://example.org/repo/obj.roa",
            validity(),
            11,
        )
    }

    #[test]
    fn sign_decode_round_trip() {
        let bundle = sample_bundle(b"not a real roa body");
        let obj = SignedObject::decode(&bundle.der, DecodeMode::Strict).unwrap();
        assert_eq!(obj.content_type, *oid::CT_ROA);
        assert_eq!(obj.econtent, b"not a real roa body");
        assert_eq!(obj.ee_cert.serial, 11);
    }

    #[test]
    fn single_nul_byte_body_encodes() {
        let bundle = sample_bundle(&[0]);
        let obj = SignedObject::decode(&bundle.der, DecodeMode::Strict).unwrap();
        assert_eq!(obj.econtent, vec![0]);
    }

    #[test]
    fn tampered_econtent_fails_strict() {
        let bundle = sample_bundle(b"payload");
        // flip one byte inside the eContent
        let needle = b"payload";
        let pos = bundle
            .der
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        let mut tampered = bundle.der.clone();
        tampered[pos] ^= 0xff;
        assert_eq!(
            SignedObject::decode(&tampered, DecodeMode::Strict).unwrap_err(),
            ObjectError::SignatureInvalid
        );
        // lax decode still succeeds structurally
        SignedObject::decode(&tampered, DecodeMode::Lax).unwrap();
    }
}
