//! RPKI resource certificates and CRLs.
//!
//! Builds CA and end-entity certificates with the RFC 6487 extension set
//! (SIA/AIA/SKI/AKI, key usage, policies and the critical RFC 3779 resource
//! extensions) and strictly decodes them back.

use chrono::{DateTime, TimeZone, Utc};

use crate::der::{self, Oid, Reader};
use crate::keys::{key_identifier, KeyPair, PublicKey};
use crate::oid;
use crate::resources::ResourceSet;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ObjectError {
    #[error("malformed DER: {0}")]
    MalformedDer(String),
    #[error("signature invalid")]
    SignatureInvalid,
    #[error("bounds violation: {0}")]
    BoundsViolation(String),
    #[error("duplicate entry: {0}")]
    DuplicateEntry(String),
    #[error("prefix out of range")]
    PrefixOutOfRange,
    #[error("empty resources")]
    EmptyResources,
    #[error("BER encoding in strict mode")]
    BerEncoding,
    #[error("wrong content type")]
    WrongContentType,
}

impl From<der::DerError> for ObjectError {
    fn from(e: der::DerError) -> Self {
        ObjectError::MalformedDer(e.to_string())
    }
}

//------------ Validity ------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Validity {
    pub not_before: DateTime<Utc>,
    pub not_after: DateTime<Utc>,
}

impl Validity {
    pub fn new(not_before: DateTime<Utc>, not_after: DateTime<Utc>) -> Option<Validity> {
        if not_before < not_after {
            Some(Validity {
                not_before,
                not_after,
            })
        } else {
            None
        }
    }

    /// The default window around an instance creation time: one hour of
    /// backdating, 24 hours of lifetime.
    pub fn around(created_at: DateTime<Utc>) -> Validity {
        Validity {
            not_before: created_at - chrono::Duration::hours(1),
            not_after: created_at + chrono::Duration::hours(24),
        }
    }

    pub fn contains_time(&self, t: DateTime<Utc>) -> bool {
        self.not_before <= t && t <= self.not_after
    }

    pub fn contains(&self, other: &Validity) -> bool {
        self.not_before <= other.not_before && other.not_after <= self.not_after
    }

    fn encode(&self) -> Vec<u8> {
        der::seq(&[&encode_time(self.not_before), &encode_time(self.not_after)])
    }
}

fn encode_time(t: DateTime<Utc>) -> Vec<u8> {
    if (1950..2050).contains(&chrono::Datelike::year(&t)) {
        der::tlv(
            der::TAG_UTC_TIME,
            t.format("%y%m%d%H%M%SZ").to_string().as_bytes(),
        )
    } else {
        der::tlv(
            der::TAG_GENERALIZED_TIME,
            t.format("%Y%m%d%H%M%SZ").to_string().as_bytes(),
        )
    }
}

fn decode_time(rd: &mut Reader<'_>) -> Result<DateTime<Utc>, der::DerError> {
    let (tag, content) = rd.read_tlv()?;
    let s = std::str::from_utf8(content)
        .map_err(|_| der::DerError::BadValue("non-ASCII time".into()))?;
    let parsed = match tag {
        der::TAG_UTC_TIME => chrono::NaiveDateTime::parse_from_str(s, "%y%m%d%H%M%SZ"),
        der::TAG_GENERALIZED_TIME => chrono::NaiveDateTime::parse_from_str(s, "%Y%m%d%H%M%SZ"),
        _ => return Err(der::DerError::BadValue("unexpected time tag".into())),
    };
    parsed
        .map(|dt| Utc.from_utc_datetime(&dt))
        .map_err(|_| der::DerError::BadValue(format!("bad time {s:?}")))
}

//------------ Building ------------------------------------------------------

/// URIs carried by a CA certificate.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CaUris {
    /// rsync URI of the publication point directory (SIA caRepository).
    pub repository: String,
    /// rsync URI of the manifest inside the repository (SIA rpkiManifest).
    pub manifest: String,
    /// HTTPS URI of the RRDP notification file (SIA rpkiNotify).
    pub rrdp_notify: String,
    /// rsync URI of the issuing CA's certificate (AIA); absent for roots.
    pub aia: Option<String>,
    /// rsync URI of the CRL covering this certificate; absent for roots.
    pub crl: Option<String>,
}

/// A built CA certificate together with the fields needed downstream.
#[derive(Debug, Clone)]
pub struct CaCertificate {
    pub serial: u64,
    pub validity: Validity,
    pub resources: ResourceSet,
    pub uris: CaUris,
    pub subject_cn: String,
    pub ski: [u8; 20],
    pub aki: [u8; 20],
    pub der: Vec<u8>,
}

fn name(cn: &str) -> Vec<u8> {
    der::seq(&[&der::set(&[&der::seq(&[
        &oid::COMMON_NAME.encode(),
        &der::printable_string(cn),
    ])])])
}

fn extension(ext_oid: &Oid, critical: bool, value: &[u8]) -> Vec<u8> {
    let wrapped = der::octet_string(value);
    if critical {
        der::seq(&[&ext_oid.encode(), &der::boolean(true), &wrapped])
    } else {
        der::seq(&[&ext_oid.encode(), &wrapped])
    }
}

fn uri_general_name(uri: &str) -> Vec<u8> {
    der::tlv(der::ctx_prim(6), uri.as_bytes())
}

fn access_description(method: &Oid, uri: &str) -> Vec<u8> {
    der::seq(&[&method.encode(), &uri_general_name(uri)])
}

fn key_usage(bits: u8, unused: u8) -> Vec<u8> {
    der::bit_string(unused, &[bits])
}

fn crl_distribution_points(uri: &str) -> Vec<u8> {
    // DistributionPoint with fullName GeneralNames
    let gn = der::tlv(der::ctx(0), &uri_general_name(uri));
    der::seq(&[&der::seq(&[&der::tlv(der::ctx(0), &gn)])])
}

fn certificate_policies() -> Vec<u8> {
    der::seq(&[&der::seq(&[&oid::CP_IP_ADDR_AS_NUMBER.encode()])])
}

fn signed(tbs: &[u8], signer: &KeyPair) -> Vec<u8> {
    let sig = signer.sign(tbs);
    der::seq(&[
        tbs,
        &signer.signature_algorithm(),
        &der::bit_string(0, &sig),
    ])
}

#[allow(clippy::too_many_arguments)]
fn build_tbs(
    serial: u64,
    signer: &KeyPair,
    issuer_cn: &str,
    subject_cn: &str,
    validity: &Validity,
    subject_spki: &[u8],
    extensions: &[Vec<u8>],
) -> Vec<u8> {
    let ext_refs: Vec<&[u8]> = extensions.iter().map(|v| v.as_slice()).collect();
    let exts = der::tlv(der::ctx(3), &der::seq(&ext_refs));
    der::seq(&[
        &der::tlv(der::ctx(0), &der::uint(2)), // v3
        &der::uint(serial),
        &signer.signature_algorithm(),
        &name(issuer_cn),
        &validity.encode(),
        &name(subject_cn),
        subject_spki,
        &exts,
    ])
}

/// Builds a CA certificate (self-signed when `uris.aia` is absent and the
/// issuer key equals the subject key).
pub fn build_ca_cert(
    issuer: &KeyPair,
    issuer_cn: &str,
    subject: &KeyPair,
    subject_cn: &str,
    resources: &ResourceSet,
    uris: &CaUris,
    validity: Validity,
    serial: u64,
) -> Result<CaCertificate, ObjectError> {
    if resources.is_empty() {
        return Err(ObjectError::EmptyResources);
    }
    let sia = der::seq(&[
        &access_description(&oid::AD_CA_REPOSITORY, &uris.repository),
        &access_description(&oid::AD_RPKI_MANIFEST, &uris.manifest),
        &access_description(&oid::AD_RPKI_NOTIFY, &uris.rrdp_notify),
    ]);
    let mut extensions = vec![
        extension(&oid::BASIC_CONSTRAINTS, true, &der::seq(&[&der::boolean(true)])),
        extension(
            &oid::SUBJECT_KEY_ID,
            false,
            &der::octet_string(&subject.key_id()),
        ),
        extension(
            &oid::AUTHORITY_KEY_ID,
            false,
            &der::seq(&[&der::tlv(der::ctx_prim(0), &issuer.key_id())]),
        ),
        // keyCertSign | cRLSign
        extension(&oid::KEY_USAGE, true, &key_usage(0b0000_0110, 1)),
        extension(&oid::CERTIFICATE_POLICIES, true, &certificate_policies()),
        extension(&oid::SUBJECT_INFO_ACCESS, false, &sia),
    ];
    if let Some(aia) = &uris.aia {
        extensions.push(extension(
            &oid::AUTHORITY_INFO_ACCESS,
            false,
            &der::seq(&[&access_description(&oid::AD_CA_ISSUERS, aia)]),
        ));
    }
    if let Some(crl) = &uris.crl {
        extensions.push(extension(
            &oid::CRL_DISTRIBUTION_POINTS,
            false,
            &crl_distribution_points(crl),
        ));
    }
    if !resources.v4().is_empty() || !resources.v6().is_empty() {
        extensions.push(extension(
            &oid::IP_ADDR_BLOCKS,
            true,
            &resources.encode_ip_addr_blocks(),
        ));
    }
    if !resources.asns().is_empty() {
        extensions.push(extension(&oid::AS_NUMBERS, true, &resources.encode_as_ids()));
    }
    let tbs = build_tbs(
        serial,
        issuer,
        issuer_cn,
        subject_cn,
        &validity,
        subject.spki(),
        &extensions,
    );
    Ok(CaCertificate {
        serial,
        validity,
        resources: resources.clone(),
        uris: uris.clone(),
        subject_cn: subject_cn.to_string(),
        ski: subject.key_id(),
        aki: issuer.key_id(),
        der: signed(&tbs, issuer),
    })
}

/// Builds the end-entity certificate embedded in a signed object. Resources
/// are inherited from the issuer.
pub fn build_ee_cert(
    issuer: &KeyPair,
    issuer_cn: &str,
    subject: &KeyPair,
    subject_cn: &str,
    object_uri: &str,
    crl_uri: &str,
    aia_uri: &str,
    validity: Validity,
    serial: u64,
) -> Vec<u8> {
    let inherit_ip = der::seq(&[
        &der::seq(&[
            &der::octet_string(&[0, 1]),
            &der::null(),
        ]),
        &der::seq(&[
            &der::octet_string(&[0, 2]),
            &der::null(),
        ]),
    ]);
    let inherit_as = der::seq(&[&der::tlv(der::ctx(0), &der::null())]);
    let sia = der::seq(&[&access_description(&oid::AD_SIGNED_OBJECT, object_uri)]);
    let extensions = vec![
        extension(
            &oid::SUBJECT_KEY_ID,
            false,
            &der::octet_string(&subject.key_id()),
        ),
        extension(
            &oid::AUTHORITY_KEY_ID,
            false,
            &der::seq(&[&der::tlv(der::ctx_prim(0), &issuer.key_id())]),
        ),
        // digitalSignature
        extension(&oid::KEY_USAGE, true, &key_usage(0b1000_0000, 7)),
        extension(&oid::CERTIFICATE_POLICIES, true, &certificate_policies()),
        extension(
            &oid::CRL_DISTRIBUTION_POINTS,
            false,
            &crl_distribution_points(crl_uri),
        ),
        extension(
            &oid::AUTHORITY_INFO_ACCESS,
            false,
            &der::seq(&[&access_description(&oid::AD_CA_ISSUERS, aia_uri)]),
        ),
        extension(&oid::SUBJECT_INFO_ACCESS, false, &sia),
        extension(&oid::IP_ADDR_BLOCKS, true, &inherit_ip),
        extension(&oid::AS_NUMBERS, true, &inherit_as),
    ];
    let tbs = build_tbs(
        serial,
        issuer,
        issuer_cn,
        subject_cn,
        &validity,
        subject.spki(),
        &extensions,
    );
    signed(&tbs, issuer)
}

//------------ Decoding ------------------------------------------------------

/// Resource extension content: inherited from the issuer or concrete.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InheritOr<T> {
    Inherit,
    Concrete(T),
}

/// A decoded certificate.
#[derive(Debug, Clone)]
pub struct Cert {
    pub der: Vec<u8>,
    pub tbs: Vec<u8>,
    pub signature: Vec<u8>,
    pub serial: u64,
    pub issuer_cn: String,
    pub subject_cn: String,
    pub validity: Validity,
    pub spki: Vec<u8>,
    pub is_ca: bool,
    pub ski: Option<[u8; 20]>,
    pub aki: Option<[u8; 20]>,
    pub ip_resources: Option<InheritOr<ResourceSet>>,
    pub as_resources: Option<InheritOr<Vec<(u32, u32)>>>,
    pub sia_repository: Option<String>,
    pub sia_manifest: Option<String>,
    pub sia_notify: Option<String>,
    pub sia_signed_object: Option<String>,
    pub aia: Option<String>,
    pub crl_dp: Option<String>,
    /// True when any BER-only encoding form was seen.
    pub ber: bool,
}

impl Cert {
    pub fn decode(data: &[u8]) -> Result<Cert, ObjectError> {
        let (mut cert, ber) = der::parse_all(data, |rd| {
            rd.sequence(|outer| {
                let tbs_raw = outer.raw_tlv()?;
                outer.raw_tlv()?; // signature algorithm
                let (_, sig) = {
                    let content = outer.expect(der::TAG_BIT_STRING)?;
                    if content.is_empty() {
                        return Err(der::DerError::BadValue("empty signature".into()));
                    }
                    (content[0], &content[1..])
                };
                let mut cert = parse_tbs(tbs_raw)?;
                cert.der = data.to_vec();
                cert.tbs = tbs_raw.to_vec();
                cert.signature = sig.to_vec();
                Ok(cert)
            })
        })?;
        cert.ber = ber;
        Ok(cert)
    }

    /// Checks this certificate's signature against the issuer's public key.
    pub fn verify_signature(&self, issuer_spki: &[u8]) -> Result<(), ObjectError> {
        let key = PublicKey::from_spki(issuer_spki)?;
        if key.verify(&self.tbs, &self.signature) {
            Ok(())
        } else {
            Err(ObjectError::SignatureInvalid)
        }
    }

    /// The concrete resources of this certificate given the issuer's set.
    pub fn effective_resources(&self, parent: &ResourceSet) -> ResourceSet {
        let prefixes: Vec<_> = match &self.ip_resources {
            Some(InheritOr::Concrete(set)) => set.prefixes().copied().collect(),
            Some(InheritOr::Inherit) => parent.prefixes().copied().collect(),
            None => Vec::new(),
        };
        let asns: Vec<_> = match &self.as_resources {
            Some(InheritOr::Concrete(ranges)) => ranges.clone(),
            Some(InheritOr::Inherit) => parent.asns().to_vec(),
            None => Vec::new(),
        };
        ResourceSet::new(prefixes, asns)
    }

    /// True when all claimed concrete resources are covered by `parent`.
    pub fn claims_within(&self, parent: &ResourceSet) -> bool {
        let claimed = ResourceSet::new(
            match &self.ip_resources {
                Some(InheritOr::Concrete(set)) => set.prefixes().copied().collect(),
                _ => Vec::new(),
            },
            match &self.as_resources {
                Some(InheritOr::Concrete(ranges)) => ranges.clone(),
                _ => Vec::new(),
            },
        );
        parent.contains(&claimed)
    }
}

fn parse_tbs(tbs_raw: &[u8]) -> Result<Cert, der::DerError> {
    let ctx = der::ReaderCtx::new();
    let mut rd = ctx.reader(tbs_raw);
    let cert = rd.sequence(|tbs| {
        if tbs.peek_tag() == Some(der::ctx(0)) {
            tbs.nested(der::ctx(0), |v| v.uint().map(|_| ()))?;
        }
        let serial = tbs.uint()?;
        tbs.raw_tlv()?; // signature algorithm
        let issuer_cn = parse_name(tbs)?;
        let validity = tbs.sequence(|v| {
            let nb = decode_time(v)?;
            let na = decode_time(v)?;
            Ok(Validity {
                not_before: nb,
                not_after: na,
            })
        })?;
        let subject_cn = parse_name(tbs)?;
        let spki = tbs.raw_tlv()?.to_vec();
        let mut cert = Cert {
            der: Vec::new(),
            tbs: Vec::new(),
            signature: Vec::new(),
            serial,
            issuer_cn,
            subject_cn,
            validity,
            spki,
            is_ca: false,
            ski: None,
            aki: None,
            ip_resources: None,
            as_resources: None,
            sia_repository: None,
            sia_manifest: None,
            sia_notify: None,
            sia_signed_object: None,
            aia: None,
            crl_dp: None,
            ber: false,
        };
        // skip issuerUniqueID / subjectUniqueID if present
        while matches!(tbs.peek_tag(), Some(t) if t == 0x81 || t == 0x82) {
            tbs.raw_tlv()?;
        }
        if tbs.peek_tag() == Some(der::ctx(3)) {
            tbs.nested(der::ctx(3), |wrap| {
                wrap.sequence(|exts| {
                    while !exts.is_empty() {
                        exts.sequence(|ext| parse_extension(ext, &mut cert))?;
                    }
                    Ok(())
                })
            })?;
        }
        Ok(cert)
    })?;
    if !rd.is_empty() {
        return Err(der::DerError::TrailingData);
    }
    Ok(cert)
}

fn parse_name(rd: &mut Reader<'_>) -> Result<String, der::DerError> {
    rd.sequence(|rdns| {
        let mut cn = String::new();
        while !rdns.is_empty() {
            rdns.nested(der::TAG_SET, |set| {
                while !set.is_empty() {
                    set.sequence(|atv| {
                        let attr = atv.oid()?;
                        let (tag, content) = atv.read_tlv()?;
                        if attr == *oid::COMMON_NAME
                            && matches!(
                                tag,
                                der::TAG_PRINTABLE_STRING | der::TAG_UTF8_STRING | der::TAG_IA5_STRING
                            )
                        {
                            cn = String::from_utf8_lossy(content).into_owned();
                        }
                        Ok(())
                    })?;
                }
                Ok(())
            })?;
        }
        Ok(cn)
    })
}

fn parse_extension(ext: &mut Reader<'_>, cert: &mut Cert) -> Result<(), der::DerError> {
    let ext_oid = ext.oid()?;
    if ext.peek_tag() == Some(der::TAG_BOOLEAN) {
        ext.boolean()?;
    }
    let value = ext.octet_string()?;
    if ext_oid == *oid::BASIC_CONSTRAINTS {
        let (is_ca, _) = der::parse_all(value, |rd| {
            rd.sequence(|s| {
                if s.peek_tag() == Some(der::TAG_BOOLEAN) {
                    s.boolean()
                } else {
                    Ok(false)
                }
            })
        })?;
        cert.is_ca = is_ca;
    } else if ext_oid == *oid::SUBJECT_KEY_ID {
        let (ski, _) = der::parse_all(value, |rd| rd.octet_string().map(|s| s.to_vec()))?;
        cert.ski = ski.try_into().ok();
    } else if ext_oid == *oid::AUTHORITY_KEY_ID {
        let (aki, _) = der::parse_all(value, |rd| {
            rd.sequence(|s| {
                let mut id = None;
                while !s.is_empty() {
                    let (tag, content) = s.read_tlv()?;
                    if tag == der::ctx_prim(0) {
                        id = content.to_vec().try_into().ok();
                    }
                }
                Ok(id)
            })
        })?;
        cert.aki = aki;
    } else if ext_oid == *oid::IP_ADDR_BLOCKS {
        cert.ip_resources = Some(match ResourceSet::decode_ip_addr_blocks(value) {
            Ok(set) => InheritOr::Concrete(set),
            Err(_) => {
                decode_ip_inherit(value)?;
                InheritOr::Inherit
            }
        });
    } else if ext_oid == *oid::AS_NUMBERS {
        cert.as_resources = Some(match ResourceSet::decode_as_ids(value) {
            Ok(ranges) => InheritOr::Concrete(ranges),
            Err(_) => {
                decode_as_inherit(value)?;
                InheritOr::Inherit
            }
        });
    } else if ext_oid == *oid::SUBJECT_INFO_ACCESS {
        for (method, uri) in parse_access_descriptions(value)? {
            if method == *oid::AD_CA_REPOSITORY {
                cert.sia_repository = Some(uri);
            } else if method == *oid::AD_RPKI_MANIFEST {
                cert.sia_manifest = Some(uri);
            } else if method == *oid::AD_RPKI_NOTIFY {
                cert.sia_notify = Some(uri);
            } else if method == *oid::AD_SIGNED_OBJECT {
                cert.sia_signed_object = Some(uri);
            }
        }
    } else if ext_oid == *oid::AUTHORITY_INFO_ACCESS {
        for (method, uri) in parse_access_descriptions(value)? {
            if method == *oid::AD_CA_ISSUERS {
                cert.aia = Some(uri);
            }
        }
    } else if ext_oid == *oid::CRL_DISTRIBUTION_POINTS {
        cert.crl_dp = parse_crl_dp(value)?;
    }
    // other extensions (key usage, policies) are accepted as-is
    Ok(())
}

fn decode_ip_inherit(value: &[u8]) -> Result<(), der::DerError> {
    der::parse_all(value, |rd| {
        rd.sequence(|families| {
            while !families.is_empty() {
                families.sequence(|fam| {
                    fam.octet_string()?;
                    fam.expect(der::TAG_NULL)?;
                    Ok(())
                })?;
            }
            Ok(())
        })
    })
    .map(|_| ())
}

fn decode_as_inherit(value: &[u8]) -> Result<(), der::DerError> {
    der::parse_all(value, |rd| {
        rd.sequence(|s| s.nested(der::ctx(0), |c| c.expect(der::TAG_NULL).map(|_| ())))
    })
    .map(|_| ())
}

fn parse_access_descriptions(value: &[u8]) -> Result<Vec<(Oid, String)>, der::DerError> {
    let (out, _) = der::parse_all(value, |rd| {
        rd.sequence(|s| {
            let mut out = Vec::new();
            while !s.is_empty() {
                s.sequence(|ad| {
                    let method = ad.oid()?;
                    let (tag, content) = ad.read_tlv()?;
                    if tag == der::ctx_prim(6) {
                        out.push((method, String::from_utf8_lossy(content).into_owned()));
                    }
                    Ok(())
                })?;
            }
            Ok(out)
        })
    })?;
    Ok(out)
}

fn parse_crl_dp(value: &[u8]) -> Result<Option<String>, der::DerError> {
    let (out, _) = der::parse_all(value, |rd| {
        rd.sequence(|points| {
            let mut uri = None;
            while !points.is_empty() {
                points.sequence(|dp| {
                    while !dp.is_empty() {
                        let (tag, content) = dp.read_tlv()?;
                        if tag == der::ctx(0) {
                            // DistributionPointName -> fullName -> GeneralNames
                            let ctx2 = der::ReaderCtx::new();
                            let mut inner = ctx2.reader(content);
                            if inner.peek_tag() == Some(der::ctx(0)) {
                                inner.nested(der::ctx(0), |names| {
                                    while !names.is_empty() {
                                        let (t, c) = names.read_tlv()?;
                                        if t == der::ctx_prim(6) {
                                            uri = Some(
                                                String::from_utf8_lossy(c).into_owned(),
                                            );
                                        }
                                    }
                                    Ok(())
                                })?;
                            }
                        }
                    }
                    Ok(())
                })?;
            }
            Ok(uri)
        })
    })?;
    Ok(out)
}

//------------ CRL -----------------------------------------------------------

/// Builds a CRL signed by `issuer`. Duplicate serials are collapsed.
pub fn build_crl(
    issuer: &KeyPair,
    issuer_cn: &str,
    revoked_serials: &[u64],
    validity: Validity,
    crl_number: u64,
) -> Vec<u8> {
    let mut serials: Vec<u64> = revoked_serials.to_vec();
    serials.sort_unstable();
    serials.dedup();
    let revoked: Vec<Vec<u8>> = serials
        .iter()
        .map(|&s| der::seq(&[&der::uint(s), &encode_time(validity.not_before)]))
        .collect();
    let revoked_refs: Vec<&[u8]> = revoked.iter().map(|v| v.as_slice()).collect();
    let extensions = der::tlv(
        der::ctx(0),
        &der::seq(&[
            &extension(
                &oid::AUTHORITY_KEY_ID,
                false,
                &der::seq(&[&der::tlv(der::ctx_prim(0), &issuer.key_id())]),
            ),
            &extension(&oid::CRL_NUMBER, false, &der::uint(crl_number)),
        ]),
    );
    let mut parts: Vec<&[u8]> = Vec::new();
    let version = der::uint(1);
    let alg = issuer.signature_algorithm();
    let issuer_name = name(issuer_cn);
    let this_update = encode_time(validity.not_before);
    let next_update = encode_time(validity.not_after);
    let revoked_seq;
    parts.push(&version);
    parts.push(&alg);
    parts.push(&issuer_name);
    parts.push(&this_update);
    parts.push(&next_update);
    if !revoked_refs.is_empty() {
        revoked_seq = der::seq(&revoked_refs);
        parts.push(&revoked_seq);
    }
    parts.push(&extensions);
    let tbs = der::seq(&parts);
    signed(&tbs, issuer)
}

/// A decoded CRL.
#[derive(Debug, Clone)]
pub struct Crl {
    pub tbs: Vec<u8>,
    pub signature: Vec<u8>,
    pub issuer_cn: String,
    pub this_update: DateTime<Utc>,
    pub next_update: Option<DateTime<Utc>>,
    pub revoked_serials: Vec<u64>,
    pub aki: Option<[u8; 20]>,
    pub ber: bool,
}

impl Crl {
    pub fn decode(data: &[u8]) -> Result<Crl, ObjectError> {
        let (mut crl, ber) = der::parse_all(data, |rd| {
            rd.sequence(|outer| {
                let tbs_raw = outer.raw_tlv()?;
                outer.raw_tlv()?; // signature algorithm
                let content = outer.expect(der::TAG_BIT_STRING)?;
                if content.is_empty() {
                    return Err(der::DerError::BadValue("empty signature".into()));
                }
                let mut crl = parse_tbs_cert_list(tbs_raw)?;
                crl.tbs = tbs_raw.to_vec();
                crl.signature = content[1..].to_vec();
                Ok(crl)
            })
        })?;
        crl.ber = ber;
        Ok(crl)
    }

    pub fn verify_signature(&self, issuer_spki: &[u8]) -> Result<(), ObjectError> {
        let key = PublicKey::from_spki(issuer_spki)?;
        if key.verify(&self.tbs, &self.signature) {
            Ok(())
        } else {
            Err(ObjectError::SignatureInvalid)
        }
    }

    pub fn is_revoked(&self, serial: u64) -> bool {
        self.revoked_serials.binary_search(&serial).is_ok()
    }
}

fn parse_tbs_cert_list(tbs_raw: &[u8]) -> Result<Crl, der::DerError> {
    let ctx = der::ReaderCtx::new();
    let mut rd = ctx.reader(tbs_raw);
    let crl = rd.sequence(|tbs| {
        if tbs.peek_tag() == Some(der::TAG_INTEGER) {
            tbs.uint()?;
        }
        tbs.raw_tlv()?; // signature algorithm
        let issuer_cn = parse_name(tbs)?;
        let this_update = decode_time(tbs)?;
        let next_update = if matches!(
            tbs.peek_tag(),
            Some(der::TAG_UTC_TIME) | Some(der::TAG_GENERALIZED_TIME)
        ) {
            Some(decode_time(tbs)?)
        } else {
            None
        };
        let mut revoked_serials = Vec::new();
        if tbs.peek_tag() == Some(der::TAG_SEQUENCE) {
            tbs.sequence(|list| {
                while !list.is_empty() {
                    list.sequence(|entry| {
                        revoked_serials.push(entry.uint()?);
                        decode_time(entry)?;
                        while !entry.is_empty() {
                            entry.raw_tlv()?;
                        }
                        Ok(())
                    })?;
                }
                Ok(())
            })?;
        }
        let mut aki = None;
        if tbs.peek_tag() == Some(der::ctx(0)) {
            tbs.nested(der::ctx(0), |wrap| {
                wrap.sequence(|exts| {
                    while !exts.is_empty() {
                        exts.sequence(|ext| {
                            let ext_oid = ext.oid()?;
                            if ext.peek_tag() == Some(der::TAG_BOOLEAN) {
                                ext.boolean()?;
                            }
                            let value = ext.octet_string()?;
                            if ext_oid == *oid::AUTHORITY_KEY_ID {
                                let (id, _) = der::parse_all(value, |r| {
                                    r.sequence(|s| {
                                        let mut id = None;
                                        while !s.is_empty() {
                                            let (tag, content) = s.read_tlv()?;
                                            if tag == der::ctx_prim(0) {
                                                id = content.to_vec().try_into().ok();
                                            }
                                        }
                                        Ok(id)
                                    })
                                })?;
                                aki = id;
                            }
                            Ok(())
                        })?;
                    }
                    Ok(())
                })
            })?;
        }
        revoked_serials.sort_unstable();
        Ok(Crl {
            tbs: Vec::new(),
            signature: Vec::new(),
            issuer_cn,
            this_update,
            next_update,
            revoked_serials,
            aki,
            ber: false,
        })
    })?;
    if !rd.is_empty() {
        return Err(der::DerError::TrailingData);
    }
    Ok(crl)
}

/// Key identifier helper re-exported for callers working from raw SPKI bytes.
pub fn spki_key_id(spki: &[u8]) -> [u8; 20] {
    key_identifier(spki)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::KeyMode;

    fn validity() -> Validity {
        Validity::new(
            Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap(),
            Utc.with_ymd_and_hms(2027, 1, 1, 0, 0, 0).unwrap(),
        )
        .unwrap()
    }

    fn uris() -> CaUris {
        CaUris {
            repository: "rsync://example.org/repo/".into(),
            manifest: "rsync://example.org/repo/mft.mft".into(),
            rrdp_notify: "https://example.org/notification.xml".into(),
            aia: None,
            crl: None,
        }
    }

    #[test]
    fn self_signed_root_round_trip() {
        let key = KeyPair::derive([1u8; 32], KeyMode::Fast);
        let cert = build_ca_cert(
            &key,
            "root",
            &key,
            "root",
            &ResourceSet::all(),
            &uris(),
            validity(),
            1,
        )
        .unwrap();
        let decoded = Cert::decode(&cert.der).unwrap();
        assert!(decoded.is_ca);
        assert!(!decoded.ber);
        assert_eq!(decoded.serial, 1);
        assert_eq!(decoded.ski, Some(key.key_id()));
        assert_eq!(decoded.aki, Some(key.key_id()));
        assert_eq!(
            decoded.ip_resources,
            Some(InheritOr::Concrete(ResourceSet::new(
                ResourceSet::all().prefixes().copied().collect::<Vec<_>>(),
                []
            )))
        );
        assert_eq!(
            decoded.as_resources,
            Some(InheritOr::Concrete(vec![(0, u32::MAX)]))
        );
        assert_eq!(decoded.sia_manifest.as_deref(), Some("rsync://example.org/repo/mft.mft"));
        decoded.verify_signature(key.spki()).unwrap();
    }

    #[test]
    fn child_containment() {
        let parent = KeyPair::derive([1u8; 32], KeyMode::Fast);
        let child = KeyPair::derive([2u8; 32], KeyMode::Fast);
        let child_res = ResourceSet::new(["1.2.0.0/16".parse().unwrap()], []);
        let cert = build_ca_cert(
            &parent,
            "parent",
            &child,
            "child",
            &child_res,
            &uris(),
            validity(),
            2,
        )
        .unwrap();
        let decoded = Cert::decode(&cert.der).unwrap();
        let parent_res = ResourceSet::new(["1.0.0.0/8".parse().unwrap()], []);
        assert!(decoded.claims_within(&parent_res));
        let outside = ResourceSet::new(["2.0.0.0/8".parse().unwrap()], []);
        assert!(!decoded.claims_within(&outside));
    }

    #[test]
    fn empty_resources_rejected() {
        let key = KeyPair::derive([1u8; 32], KeyMode::Fast);
        let err = build_ca_cert(
            &key,
            "root",
            &key,
            "root",
            &ResourceSet::default(),
            &uris(),
            validity(),
            1,
        )
        .unwrap_err();
        assert_eq!(err, ObjectError::EmptyResources);
    }

    #[test]
    fn ee_cert_inherits() {
        let parent = KeyPair::derive([1u8; 32], KeyMode::Fast);
        let ee = KeyPair::derive([2u8; 32], KeyMode::Fast);
        let der = build_ee_cert(
            &parent,
            "parent",
            &ee,
            "ee",
            "rsync://example.org/repo/obj.roa",
            "rsync://example.org/repo/crl.crl",
            "rsync://example.org/parent.cer",
            validity(),
            7,
        );
        let decoded = Cert::decode(&der).unwrap();
        assert!(!decoded.is_ca);
        assert_eq!(decoded.ip_resources, Some(InheritOr::Inherit));
        assert_eq!(decoded.as_resources, Some(InheritOr::Inherit));
        assert_eq!(
            decoded.sia_signed_object.as_deref(),
            Some("rsync://example.org/repo/obj.roa")
        );
        decoded.verify_signature(parent.spki()).unwrap();
    }

    #[test]
    fn crl_round_trip() {
        let key = KeyPair::derive([1u8; 32], KeyMode::Fast);
        let der = build_crl(&key, "root", &[5, 3, 5], validity(), 1);
        let crl = Crl::decode(&der).unwrap();
        assert_eq!(crl.revoked_serials, vec![3, 5]);
        assert!(crl.is_revoked(3));
        assert!(!crl.is_revoked(4));
        assert_eq!(crl.aki, Some(key.key_id()));
        crl.verify_signature(key.spki()).unwrap();

        let empty = build_crl(&key, "root", &[], validity(), 2);
        let crl = Crl::decode(&empty).unwrap();
        assert!(crl.revoked_serials.is_empty());
    }
}
