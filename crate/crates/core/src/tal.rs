//! Trust anchor locators (RFC 8630 layout).

use base64::Engine as _;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tal {
    /// Ordered URIs of the root certificate; HTTPS entries conventionally
    /// precede rsync ones.
    pub uris: Vec<String>,
    /// DER SubjectPublicKeyInfo of the root key.
    pub public_key: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TalError {
    #[error("TAL must list at least one URI")]
    NoUris,
    #[error("malformed TAL: {0}")]
    Malformed(String),
}

impl Tal {
    pub fn new(uris: Vec<String>, public_key: Vec<u8>) -> Result<Tal, TalError> {
        if uris.is_empty() {
            return Err(TalError::NoUris);
        }
        Ok(Tal { uris, public_key })
    }

    /// One URI per line, a blank line, then the base64 key.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = String::new();
        for uri in &self.uris {
            out.push_str(uri);
            out.push('\n');
        }
        out.push('\n');
        let b64 = base64::engine::general_purpose::STANDARD.encode(&self.public_key);
        for chunk in b64.as_bytes().chunks(64) {
            out.push_str(std::str::from_utf8(chunk).unwrap());
            out.push('\n');
        }
        out.into_bytes()
    }

    pub fn decode(data: &[u8]) -> Result<Tal, TalError> {
        let text = std::str::from_utf8(data)
            .map_err(|_| TalError::Malformed("not UTF-8".into()))?;
        let mut uris = Vec::new();
        let mut b64 = String::new();
        let mut in_key = false;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                if !uris.is_empty() {
                    in_key = true;
                }
                continue;
            }
            if in_key {
                b64.push_str(line);
            } else if line.starts_with('#') {
                continue;
            } else {
                uris.push(line.to_string());
            }
        }
        if uris.is_empty() {
            return Err(TalError::NoUris);
        }
        let public_key = base64::engine::general_purpose::STANDARD
            .decode(&b64)
            .map_err(|e| TalError::Malformed(format!("bad base64: {e}")))?;
        if public_key.is_empty() {
            return Err(TalError::Malformed("missing public key".into()));
        }
        Ok(Tal { uris, public_key })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_uri_round_trip() {
        let tal = Tal::new(
            vec!["https://example.org/ta.cer".into()],
            vec![0x30, 0x03, 0x01, 0x02, 0x03],
        )
        .unwrap();
        assert_eq!(Tal::decode(&tal.encode()).unwrap(), tal);
    }

    #[test]
    fn uri_order_preserved() {
        let tal = Tal::new(
            vec![
                "https://example.org/ta.cer".into(),
                "rsync://example.org/ta.cer".into(),
            ],
            vec![1, 2, 3],
        )
        .unwrap();
        let decoded = Tal::decode(&tal.encode()).unwrap();
        assert_eq!(decoded.uris, tal.uris);
    }

    #[test]
    fn empty_uris_rejected() {
        assert_eq!(Tal::new(vec![], vec![1]).unwrap_err(), TalError::NoUris);
    }
}
