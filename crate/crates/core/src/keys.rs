//! Deterministic key pairs.
//!
//! Every key is derived from a 32-byte seed so that repository content can be
//! regenerated on demand without storing key material. Two algorithms are
//! supported: the RPKI-profile RSA-2048 default, and a fast P-256 mode for
//! tests that need thousands of signatures.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use p256::ecdsa::signature::{Signer, Verifier};
use rand_chacha::rand_core::SeedableRng;
use rsa::signature::SignatureEncoding;
use rsa::traits::PublicKeyParts;
use sha2::{Digest, Sha256};

use crate::der::{self, Oid};
use crate::oid;

/// Bound on the shared seed-to-key cache.
const KEY_CACHE_CAPACITY: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum KeyMode {
    /// ECDSA P-256, derived directly from the seed. Fast enough to sign
    /// tens of thousands of objects per run.
    Fast,
    /// RSA-2048 per the RPKI profile, generated from a seeded RNG.
    Rsa2048,
}

impl Default for KeyMode {
    fn default() -> Self {
        KeyMode::Fast
    }
}

#[derive(Clone)]
enum KeyInner {
    Fast(p256::ecdsa::SigningKey),
    Rsa(Box<rsa::RsaPrivateKey>),
}

/// A deterministic signing key pair.
#[derive(Clone)]
pub struct KeyPair {
    seed: [u8; 32],
    mode: KeyMode,
    inner: KeyInner,
    spki: Vec<u8>,
    key_id: [u8; 20],
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair")
            .field("mode", &self.mode)
            .field("key_id", &hex::encode(self.key_id))
            .finish()
    }
}

impl KeyPair {
    pub fn derive(seed: [u8; 32], mode: KeyMode) -> KeyPair {
        let inner = match mode {
            KeyMode::Fast => {
                // Rejection-sample a scalar; the first candidate is accepted
                // for all but a negligible fraction of seeds.
                let mut counter = 0u32;
                loop {
                    let mut h = Sha256::new();
                    h.update(seed);
                    h.update(counter.to_be_bytes());
                    let digest = h.finalize();
                    if let Ok(key) = p256::ecdsa::SigningKey::from_bytes(&digest) {
                        break KeyInner::Fast(key);
                    }
                    counter += 1;
                }
            }
            KeyMode::Rsa2048 => {
                let mut rng = rand_chacha::ChaCha20Rng::from_seed(seed);
                let key = rsa::RsaPrivateKey::new(&mut rng, 2048)
                    .expect("RSA key generation cannot fail for a working RNG");
                KeyInner::Rsa(Box::new(key))
            }
        };
        let spki = encode_spki(&inner);
        let key_id = key_identifier(&spki);
        KeyPair {
            seed,
            mode,
            inner,
            spki,
            key_id,
        }
    }

    pub fn seed(&self) -> [u8; 32] {
        self.seed
    }

    pub fn mode(&self) -> KeyMode {
        self.mode
    }

    /// DER-encoded SubjectPublicKeyInfo.
    pub fn spki(&self) -> &[u8] {
        &self.spki
    }

    /// 20-byte key identifier used for SKI/AKI.
    pub fn key_id(&self) -> [u8; 20] {
        self.key_id
    }

    /// DER AlgorithmIdentifier for signatures made by this key.
    pub fn signature_algorithm(&self) -> Vec<u8> {
        match self.inner {
            KeyInner::Fast(_) => der::seq(&[&oid::ECDSA_WITH_SHA256.encode()]),
            KeyInner::Rsa(_) => der::seq(&[&oid::SHA256_WITH_RSA.encode(), &der::null()]),
        }
    }

    /// Signs `data`, returning the signature in the wire form matching
    /// `signature_algorithm`. Deterministic for a given (key, data).
    pub fn sign(&self, data: &[u8]) -> Vec<u8> {
        match &self.inner {
            KeyInner::Fast(key) => {
                let sig: p256::ecdsa::Signature = key.sign(data);
                sig.to_der().as_bytes().to_vec()
            }
            KeyInner::Rsa(key) => {
                let signing = rsa::pkcs1v15::SigningKey::<Sha256>::new((**key).clone());
                signing.sign(data).to_vec()
            }
        }
    }
}

fn encode_spki(inner: &KeyInner) -> Vec<u8> {
    match inner {
        KeyInner::Fast(key) => {
            let point = key.verifying_key().to_encoded_point(false);
            der::seq(&[
                &der::seq(&[&oid::EC_PUBLIC_KEY.encode(), &oid::PRIME256V1.encode()]),
                &der::bit_string(0, point.as_bytes()),
            ])
        }
        KeyInner::Rsa(key) => {
            let pub_key = der::seq(&[
                &der::uint_bytes(&key.n().to_bytes_be()),
                &der::uint_bytes(&key.e().to_bytes_be()),
            ]);
            der::seq(&[
                &der::seq(&[&oid::RSA_ENCRYPTION.encode(), &der::null()]),
                &der::bit_string(0, &pub_key),
            ])
        }
    }
}

/// Key identifier over the subjectPublicKey bits (SHA-256 truncated to
/// 20 bytes; used consistently on both the issuing and validating side).
pub fn key_identifier(spki: &[u8]) -> [u8; 20] {
    let bits = spki_key_bits(spki).unwrap_or(spki.to_vec());
    let digest = Sha256::digest(&bits);
    let mut id = [0u8; 20];
    id.copy_from_slice(&digest[..20]);
    id
}

fn spki_key_bits(spki: &[u8]) -> Option<Vec<u8>> {
    der::parse_all(spki, |rd| {
        rd.sequence(|s| {
            s.raw_tlv()?;
            Ok(s.bit_string()?.1.to_vec())
        })
    })
    .ok()
    .map(|(bits, _)| bits)
}

/// Parsed public key ready for verification.
pub enum PublicKey {
    P256(p256::ecdsa::VerifyingKey),
    Rsa(rsa::RsaPublicKey),
}

impl PublicKey {
    pub fn from_spki(spki: &[u8]) -> Result<PublicKey, der::DerError> {
        let (key, _) = der::parse_all(spki, |rd| {
            rd.sequence(|s| {
                let alg = s.sequence(|a| {
                    let oid = a.oid()?;
                    while !a.is_empty() {
                        a.raw_tlv()?;
                    }
                    Ok(oid)
                })?;
                let (_, bits) = s.bit_string()?;
                parse_key(&alg, bits)
            })
        })?;
        Ok(key)
    }

    pub fn verify(&self, data: &[u8], signature: &[u8]) -> bool {
        match self {
            PublicKey::P256(key) => p256::ecdsa::Signature::from_der(signature)
                .map(|sig| key.verify(data, &sig).is_ok())
                .unwrap_or(false),
            PublicKey::Rsa(key) => {
                let verifying = rsa::pkcs1v15::VerifyingKey::<Sha256>::new(key.clone());
                rsa::pkcs1v15::Signature::try_from(signature)
                    .map(|sig| verifying.verify(data, &sig).is_ok())
                    .unwrap_or(false)
            }
        }
    }
}

fn parse_key(alg: &Oid, bits: &[u8]) -> Result<PublicKey, der::DerError> {
    if *alg == *oid::EC_PUBLIC_KEY {
        p256::ecdsa::VerifyingKey::from_sec1_bytes(bits)
            .map(PublicKey::P256)
            .map_err(|_| der::DerError::BadValue("invalid EC point".into()))
    } else if *alg == *oid::RSA_ENCRYPTION {
        let (key, _) = der::parse_all(bits, |rd| {
            rd.sequence(|s| {
                let n = s.uint_bytes()?.to_vec();
                let e = s.uint_bytes()?.to_vec();
                Ok((n, e))
            })
        })?;
        rsa::RsaPublicKey::new(
            rsa::BigUint::from_bytes_be(&key.0),
            rsa::BigUint::from_bytes_be(&key.1),
        )
        .map(PublicKey::Rsa)
        .map_err(|_| der::DerError::BadValue("invalid RSA key".into()))
    } else {
        Err(der::DerError::BadValue("unknown key algorithm".into()))
    }
}

//------------ KeyCache ------------------------------------------------------

/// Bounded seed-to-key cache shared across generators.
#[derive(Default)]
pub struct KeyCache {
    inner: Mutex<CacheInner>,
}

#[derive(Default)]
struct CacheInner {
    map: HashMap<([u8; 32], KeyMode), Arc<KeyPair>>,
    order: VecDeque<([u8; 32], KeyMode)>,
}

impl KeyCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, seed: [u8; 32], mode: KeyMode) -> Arc<KeyPair> {
        {
            let inner = self.inner.lock().unwrap();
            if let Some(key) = inner.map.get(&(seed, mode)) {
                return key.clone();
            }
        }
        let key = Arc::new(KeyPair::derive(seed, mode));
        let mut inner = self.inner.lock().unwrap();
        if inner.map.len() >= KEY_CACHE_CAPACITY {
            if let Some(oldest) = inner.order.pop_front() {
                inner.map.remove(&oldest);
            }
        }
        inner.map.insert((seed, mode), key.clone());
        inner.order.push_back((seed, mode));
        key
    }
}

/// Seed for a node's key: SHA-256 of the instance UUID and node path.
pub fn node_seed(instance_uuid: &str, node_path: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(instance_uuid.as_bytes());
    h.update(b"/");
    h.update(node_path.as_bytes());
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_same_key() {
        let a = KeyPair::derive([0u8; 32], KeyMode::Fast);
        let b = KeyPair::derive([0u8; 32], KeyMode::Fast);
        assert_eq!(a.spki(), b.spki());
        assert_eq!(a.key_id(), b.key_id());
    }

    #[test]
    fn distinct_seeds_distinct_keys() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..1000 {
            let seed: [u8; 32] = rng.r#gen();
            let key = KeyPair::derive(seed, KeyMode::Fast);
            assert!(seen.insert(key.spki().to_vec()), "public key collision");
        }
    }

    #[test]
    fn sign_verify_round_trip_fast() {
        let seed = node_seed("instance-uuid", "node-path");
        let key = KeyPair::derive(seed, KeyMode::Fast);
        let sig = key.sign(b"test message");
        let pub_key = PublicKey::from_spki(key.spki()).unwrap();
        assert!(pub_key.verify(b"test message", &sig));
        assert!(!pub_key.verify(b"other message", &sig));
    }

    #[test]
    fn sign_verify_round_trip_rsa() {
        let key = KeyPair::derive([3u8; 32], KeyMode::Rsa2048);
        let again = KeyPair::derive([3u8; 32], KeyMode::Rsa2048);
        assert_eq!(key.spki(), again.spki());
        let sig = key.sign(b"test message");
        let pub_key = PublicKey::from_spki(key.spki()).unwrap();
        assert!(pub_key.verify(b"test message", &sig));
    }

    #[test]
    fn cache_returns_same_key() {
        let cache = KeyCache::new();
        let a = cache.get([9u8; 32], KeyMode::Fast);
        let b = cache.get([9u8; 32], KeyMode::Fast);
        assert!(Arc::ptr_eq(&a, &b));
    }
}
