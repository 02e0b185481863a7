//! Budget-enforcing HTTPS client.
//!
//! A deliberately small, synchronous client: every robustness defense is
//! applied inline during the transfer, which keeps the accounting exact.
//! Endpoint certificates are not validated against the web PKI; RRDP
//! forbids that, and the testbed serves self-signed certificates.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::{Limit, ResourceBudget};

/// Rolling window for the minimum-transfer-rate defense.
pub const STALL_WINDOW: Duration = Duration::from_secs(10);
/// Decompressed bytes below which the ratio defense never trips, so tiny
/// well-compressed responses are not misclassified.
const BOMB_FLOOR: u64 = 256 * 1024;
/// Chunk size for body reads and decompression.
const CHUNK: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FetchError {
    #[error("redirect limit exceeded after {hops} hops")]
    RedirectLimit { hops: u32 },
    #[error("Retry-After {retry_after}s exceeds the acceptable maximum")]
    RateLimitExcessive { retry_after: u64 },
    #[error("decompression bomb: {decompressed} bytes out of {compressed} in")]
    BombDetected { compressed: u64, decompressed: u64 },
    #[error("transfer stalled: {bytes} bytes in the last {window_secs}s")]
    StallDetected { bytes: u64, window_secs: u64 },
    #[error("object exceeds size limit ({limit} bytes)")]
    ObjectTooLarge { limit: u64 },
    #[error("total transfer budget exhausted")]
    TotalBytesExceeded,
    #[error("wall clock budget exhausted")]
    WallTimeExceeded,
    #[error("run cancelled")]
    Cancelled,
    #[error("HTTP error: {0}")]
    Http(String),
    #[error("I/O error: {0}")]
    Io(String),
}

/// Shared, atomically updated ledger for one validation run.
#[derive(Debug)]
pub struct Accounting {
    pub total_bytes: AtomicU64,
    pub started: Instant,
    pub deadline: Option<Instant>,
    pub cancelled: AtomicBool,
}

impl Accounting {
    pub fn new(max_wall_time: Option<Duration>) -> Accounting {
        let started = Instant::now();
        Accounting {
            total_bytes: AtomicU64::new(0),
            started,
            deadline: max_wall_time.map(|d| started + d),
            cancelled: AtomicBool::new(false),
        }
    }

    pub fn check_time(&self) -> Result<(), FetchError> {
        if self.cancelled.load(Ordering::Relaxed) {
            return Err(FetchError::Cancelled);
        }
        match self.deadline {
            Some(d) if Instant::now() >= d => Err(FetchError::WallTimeExceeded),
            _ => Ok(()),
        }
    }

    fn charge(&self, bytes: u64, budget: &ResourceBudget) -> Result<(), FetchError> {
        let total = self.total_bytes.fetch_add(bytes, Ordering::Relaxed) + bytes;
        if let Limit::At(max) = budget.max_total_bytes {
            if total > max {
                return Err(FetchError::TotalBytesExceeded);
            }
        }
        Ok(())
    }
}

/// Connection settings: where to TCP-connect and how to name the peer.
#[derive(Clone)]
pub struct HttpsClient {
    /// Overrides DNS: every host connects here. The logical hostname still
    /// travels in SNI and the Host header, which is what routes requests.
    pub connect_addr: SocketAddr,
    tls: Arc<rustls::ClientConfig>,
}

struct Response {
    status: u16,
    headers: Vec<(String, String)>,
    stream: rustls::StreamOwned<rustls::ClientConnection, TcpStream>,
    buffered: Vec<u8>,
}

impl Response {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

impl HttpsClient {
    pub fn new(connect_addr: SocketAddr) -> HttpsClient {
        let config = rustls::ClientConfig::builder()
            .dangerous()
            .with_custom_certificate_verifier(Arc::new(AcceptAnyCert))
            .with_no_client_auth();
        HttpsClient {
            connect_addr,
            tls: Arc::new(config),
        }
    }

    /// Fetches one URI, following redirects, and returns the body after
    /// applying every transfer defense in `budget`.
    pub fn fetch_one(
        &self,
        uri: &str,
        budget: &ResourceBudget,
        accounting: &Accounting,
    ) -> Result<Vec<u8>, FetchError> {
        let mut current = uri.to_string();
        let mut hops = 0u32;
        loop {
            accounting.check_time()?;
            let (host, path) = split_https_uri(&current)?;
            let response = self.request(&host, &path, accounting)?;
            match response.status {
                301 | 302 | 303 | 307 | 308 => {
                    let location = response
                        .header("Location")
                        .ok_or_else(|| FetchError::Http("redirect without Location".into()))?
                        .to_string();
                    hops += 1;
                    if let Limit::At(max) = budget.max_redirects {
                        if u64::from(hops) > max {
                            return Err(FetchError::RedirectLimit { hops });
                        }
                    }
                    current = location;
                }
                429 => {
                    let retry_after: u64 = response
                        .header("Retry-After")
                        .and_then(|v| v.trim().parse().ok())
                        .unwrap_or(1);
                    if let Limit::At(max) = budget.max_retry_after {
                        if retry_after > max {
                            return Err(FetchError::RateLimitExcessive { retry_after });
                        }
                    }
                    // honor the request; an undefended client waits it out
                    let wake = Instant::now() + Duration::from_secs(retry_after);
                    loop {
                        accounting.check_time()?;
                        if Instant::now() >= wake {
                            break;
                        }
                        std::thread::sleep(Duration::from_millis(200));
                    }
                }
                200 => return self.read_body(response, budget, accounting),
                status => return Err(FetchError::Http(format!("status {status} for {current}"))),
            }
        }
    }

    fn request(
        &self,
        host: &str,
        path: &str,
        accounting: &Accounting,
    ) -> Result<Response, FetchError> {
        accounting.check_time()?;
        let tcp = TcpStream::connect_timeout(&self.connect_addr, Duration::from_secs(10))
            .map_err(|e| FetchError::Io(format!("connect: {e}")))?;
        tcp.set_read_timeout(Some(Duration::from_millis(250)))
            .map_err(|e| FetchError::Io(e.to_string()))?;
        tcp.set_nodelay(true).ok();
        let server_name = rustls::pki_types::ServerName::try_from(host.to_string())
            .map_err(|e| FetchError::Io(format!("bad server name {host:?}: {e}")))?;
        let conn = rustls::ClientConnection::new(self.tls.clone(), server_name)
            .map_err(|e| FetchError::Io(format!("TLS: {e}")))?;
        let mut stream = rustls::StreamOwned::new(conn, tcp);
        let request =
            format!("GET {path} HTTP/1.1\r\nHost: {host}\r\nConnection: close\r\nUser-Agent: rp-testbed-minirp/0.1\r\n\r\n");
        write_all_patient(&mut stream, request.as_bytes(), accounting)?;

        // read the header block; a stalled server trips the wall clock
        let mut head = Vec::with_capacity(512);
        let buffered;
        let mut byte_buf = [0u8; 2048];
        loop {
            accounting.check_time()?;
            match stream.read(&mut byte_buf) {
                Ok(0) => return Err(FetchError::Http("EOF before response headers".into())),
                Ok(n) => {
                    head.extend_from_slice(&byte_buf[..n]);
                    if let Some(pos) = find_header_end(&head) {
                        buffered = head.split_off(pos + 4);
                        break;
                    }
                    if head.len() > 64 * 1024 {
                        return Err(FetchError::Http("response header too large".into()));
                    }
                }
                Err(e) if is_timeout(&e) => continue,
                Err(e) => return Err(FetchError::Io(e.to_string())),
            }
        }
        let text = String::from_utf8_lossy(&head);
        let mut lines = text.lines();
        let status_line = lines.next().unwrap_or_default();
        let status: u16 = status_line
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FetchError::Http(format!("bad status line {status_line:?}")))?;
        let headers = lines
            .filter_map(|l| {
                let (name, value) = l.split_once(':')?;
                Some((name.trim().to_string(), value.trim().to_string()))
            })
            .collect();
        Ok(Response {
            status,
            headers,
            stream,
            buffered,
        })
    }

    fn read_body(
        &self,
        mut response: Response,
        budget: &ResourceBudget,
        accounting: &Accounting,
    ) -> Result<Vec<u8>, FetchError> {
        let content_length: Option<u64> = response
            .header("Content-Length")
            .and_then(|v| v.parse().ok());
        let gzip = response
            .header("Content-Encoding")
            .is_some_and(|v| v.eq_ignore_ascii_case("gzip"));

        let mut raw_total = 0u64;
        let mut out = Vec::new();
        let mut decoder = gzip.then(|| GzStream::new());
        let mut window_start = Instant::now();
        let mut window_bytes = 0u64;
        let mut chunk = vec![0u8; CHUNK];

        let mut pending = std::mem::take(&mut response.buffered);
        let mut eof = false;
        loop {
            accounting.check_time()?;
            let n = if !pending.is_empty() {
                let n = pending.len().min(chunk.len());
                chunk[..n].copy_from_slice(&pending[..n]);
                pending.drain(..n);
                n
            } else {
                match response.stream.read(&mut chunk) {
                    Ok(0) => {
                        eof = true;
                        0
                    }
                    Ok(n) => n,
                    Err(e) if is_timeout(&e) => 0,
                    Err(e)
                        if matches!(
                            e.kind(),
                            std::io::ErrorKind::UnexpectedEof
                                | std::io::ErrorKind::ConnectionReset
                                | std::io::ErrorKind::ConnectionAborted
                        ) =>
                    {
                        eof = true;
                        0
                    }
                    Err(e) => return Err(FetchError::Io(e.to_string())),
                }
            };
            if n > 0 {
                raw_total += n as u64;
                window_bytes += n as u64;
                accounting.charge(n as u64, budget)?;
                if let Some(dec) = decoder.as_mut() {
                    dec.feed(&chunk[..n], budget)?;
                } else {
                    out.extend_from_slice(&chunk[..n]);
                }
                let decoded_len = decoder
                    .as_ref()
                    .map_or(out.len() as u64, |d| d.output_len());
                if let Limit::At(max) = budget.max_object_bytes {
                    if decoded_len > max {
                        return Err(FetchError::ObjectTooLarge { limit: max });
                    }
                }
            }
            if let Some(len) = content_length {
                if raw_total >= len {
                    break;
                }
            }
            if eof && pending.is_empty() {
                break;
            }
            // rolling-window stall defense
            let elapsed = window_start.elapsed();
            if elapsed >= STALL_WINDOW {
                if let Limit::At(min_rate) = budget.min_transfer_rate {
                    let need = min_rate.saturating_mul(elapsed.as_secs());
                    if window_bytes < need {
                        return Err(FetchError::StallDetected {
                            bytes: window_bytes,
                            window_secs: elapsed.as_secs(),
                        });
                    }
                }
                window_start = Instant::now();
                window_bytes = 0;
            }
        }
        match decoder {
            Some(dec) => dec.finish(),
            None => Ok(out),
        }
    }
}

/// Streaming gzip decoder with inline ratio accounting. Input is fed in
/// small slices so the ratio defense trips with fine granularity: at
/// detection time the decompressed output is bounded by the floor plus
/// one slice's worth of expansion.
struct GzStream {
    decoder: flate2::write::GzDecoder<Vec<u8>>,
    consumed: u64,
}

/// Input slice size fed per ratio check.
const GZ_FEED: usize = 256;

impl GzStream {
    fn new() -> GzStream {
        GzStream {
            decoder: flate2::write::GzDecoder::new(Vec::new()),
            consumed: 0,
        }
    }

    fn output_len(&self) -> u64 {
        self.decoder.get_ref().len() as u64
    }

    fn feed(&mut self, input: &[u8], budget: &ResourceBudget) -> Result<(), FetchError> {
        for slice in input.chunks(GZ_FEED) {
            self.decoder
                .write_all(slice)
                .map_err(|e| FetchError::Http(format!("gzip: {e}")))?;
            self.consumed += slice.len() as u64;
            if let Limit::At(ratio) = budget.max_decompress_ratio {
                let out = self.output_len();
                if out > ratio.saturating_mul(self.consumed.max(1)) && out > BOMB_FLOOR {
                    return Err(FetchError::BombDetected {
                        compressed: self.consumed,
                        decompressed: out,
                    });
                }
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<Vec<u8>, FetchError> {
        self.decoder
            .finish()
            .map_err(|e| FetchError::Http(format!("gzip: {e}")))
    }
}

fn write_all_patient(
    stream: &mut impl Write,
    data: &[u8],
    accounting: &Accounting,
) -> Result<(), FetchError> {
    let mut written = 0;
    while written < data.len() {
        accounting.check_time()?;
        match stream.write(&data[written..]) {
            Ok(n) => written += n,
            Err(e) if is_timeout(&e) => continue,
            Err(e) => return Err(FetchError::Io(e.to_string())),
        }
    }
    stream.flush().ok();
    Ok(())
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(
        e.kind(),
        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
    )
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

/// Splits an https URI into (host, path). Ports are ignored: the client
/// always connects to its configured address.
pub fn split_https_uri(uri: &str) -> Result<(String, String), FetchError> {
    let rest = uri
        .strip_prefix("https://")
        .ok_or_else(|| FetchError::Http(format!("not an https URI: {uri}")))?;
    let (authority, path) = match rest.find('/') {
        Some(pos) => (&rest[..pos], &rest[pos..]),
        None => (rest, "/"),
    };
    let host = authority.split(':').next().unwrap_or(authority);
    if host.is_empty() {
        return Err(FetchError::Http(format!("empty host in {uri}")));
    }
    Ok((host.to_ascii_lowercase(), path.to_string()))
}

//------------ AcceptAnyCert -------------------------------------------------

/// RRDP endpoints are not validated against the web PKI (RFC 8182, 3.2);
/// the testbed's certificates are self-signed by design.
#[derive(Debug)]
struct AcceptAnyCert;

impl rustls::client::danger::ServerCertVerifier for AcceptAnyCert {
    fn verify_server_cert(
        &self,
        _end_entity: &rustls::pki_types::CertificateDer<'_>,
        _intermediates: &[rustls::pki_types::CertificateDer<'_>],
        _server_name: &rustls::pki_types::ServerName<'_>,
        _ocsp_response: &[u8],
        _now: rustls::pki_types::UnixTime,
    ) -> Result<rustls::client::danger::ServerCertVerified, rustls::Error> {
        Ok(rustls::client::danger::ServerCertVerified::assertion())
    }

    fn verify_tls12_signature(
        &self,
        _message: &[u8],
        _cert: &rustls::pki_types::CertificateDer<'_>,
        _dss: &rustls::DigitallySignedStruct,
    ) -> Result<rustls::client::danger::HandshakeSignatureValid, rustls::Error> {
        Ok(rustls::client::danger::HandshakeSignatureValid::assertion())
    }

    fn verify_tls13_signature(
        &self,
        _message: &[u8],
        _cert: &rustls::pki_types::CertificateDer<'_>,
        _dss: &rustls::DigitallySignedStruct,
    ) -> Result<rustls::client::danger::HandshakeSignatureValid, rustls::Error> {
        Ok(rustls::client::danger::HandshakeSignatureValid::assertion())
    }

    fn supported_verify_schemes(&self) -> Vec<rustls::SignatureScheme> {
        rustls::crypto::ring::default_provider()
            .signature_verification_algorithms
            .supported_schemes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uri_splitting() {
        assert_eq!(
            split_https_uri("https://h-x.example.org/notification.xml").unwrap(),
            ("h-x.example.org".into(), "/notification.xml".into())
        );
        assert_eq!(
            split_https_uri("https://HOST:8443").unwrap(),
            ("host".into(), "/".into())
        );
        assert!(split_https_uri("rsync://host/x").is_err());
    }
}
