//! Object identifiers used by the RPKI profile.

use std::sync::LazyLock;

use crate::der::Oid;

macro_rules! oids {
    ($($name:ident = [$($arc:expr),*];)*) => {
        $(pub static $name: LazyLock<Oid> =
            LazyLock::new(|| Oid::from_arcs(&[$($arc),*]));)*
    };
}

oids! {
    RSA_ENCRYPTION = [1, 2, 840, 113549, 1, 1, 1];
    SHA256_WITH_RSA = [1, 2, 840, 113549, 1, 1, 11];
    EC_PUBLIC_KEY = [1, 2, 840, 10045, 2, 1];
    PRIME256V1 = [1, 2, 840, 10045, 3, 1, 7];
    ECDSA_WITH_SHA256 = [1, 2, 840, 10045, 4, 3, 2];
    SHA256 = [2, 16, 840, 1, 101, 3, 4, 2, 1];

    SIGNED_DATA = [1, 2, 840, 113549, 1, 7, 2];
    CONTENT_TYPE = [1, 2, 840, 113549, 1, 9, 3];
    MESSAGE_DIGEST = [1, 2, 840, 113549, 1, 9, 4];
    SIGNING_TIME = [1, 2, 840, 113549, 1, 9, 5];

    CT_ROA = [1, 2, 840, 113549, 1, 9, 16, 1, 24];
    CT_MANIFEST = [1, 2, 840, 113549, 1, 9, 16, 1, 26];
    CT_GHOSTBUSTERS = [1, 2, 840, 113549, 1, 9, 16, 1, 35];

    COMMON_NAME = [2, 5, 4, 3];
    BASIC_CONSTRAINTS = [2, 5, 29, 19];
    SUBJECT_KEY_ID = [2, 5, 29, 14];
    AUTHORITY_KEY_ID = [2, 5, 29, 35];
    KEY_USAGE = [2, 5, 29, 15];
    CRL_DISTRIBUTION_POINTS = [2, 5, 29, 31];
    CERTIFICATE_POLICIES = [2, 5, 29, 32];
    CRL_NUMBER = [2, 5, 29, 20];

    IP_ADDR_BLOCKS = [1, 3, 6, 1, 5, 5, 7, 1, 7];
    AS_NUMBERS = [1, 3, 6, 1, 5, 5, 7, 1, 8];
    AUTHORITY_INFO_ACCESS = [1, 3, 6, 1, 5, 5, 7, 1, 1];
    SUBJECT_INFO_ACCESS = [1, 3, 6, 1, 5, 5, 7, 1, 11];
    AD_CA_ISSUERS = [1, 3, 6, 1, 5, 5, 7, 48, 2];
    AD_CA_REPOSITORY = [1, 3, 6, 1, 5, 5, 7, 48, 5];
    AD_RPKI_MANIFEST = [1, 3, 6, 1, 5, 5, 7, 48, 10];
    AD_SIGNED_OBJECT = [1, 3, 6, 1, 5, 5, 7, 48, 11];
    AD_RPKI_NOTIFY = [1, 3, 6, 1, 5, 5, 7, 48, 13];
    CP_IP_ADDR_AS_NUMBER = [1, 3, 6, 1, 5, 5, 7, 14, 2];
}
