//! SNI-routed HTTPS front end.
//!
//! One listener serves every live instance. The TLS server name selects the
//! instance, the scenario engine produces the resource and a behavior
//! directive, and this module turns the directive into wire behavior:
//! rate limits, redirect chains, gzip bodies, trickled writes and streamed
//! multi-gigabyte payloads. Every request is recorded in the observation
//! log so the harness can reason about what a relying party actually did.

use std::io::Write as _;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{bail, Context};
use chrono::{DateTime, Utc};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_rustls::TlsAcceptor;

use crate::scenario::{fill_random_stream, Body, Engine, HttpBehavior, TestInstance};

/// Cap on concurrently held trickle connections.
const MAX_TRICKLE_CONNECTIONS: usize = 256;
/// Chunk size for streamed payloads.
const STREAM_CHUNK: usize = 1 << 20;

//------------ Observation ---------------------------------------------------

/// One server-side event, attributable to an instance.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Observation {
    pub instance_uuid: String,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub event: ObservationEvent,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ObservationEvent {
    /// A resource was requested. `depth` is the tree depth encoded in the
    /// path, for chain scenarios.
    Fetch { path: String, depth: u32 },
    /// The out-of-band callback URI was hit (XXE detection).
    CallbackHit { path: String },
    /// Bytes written on a streaming response so far.
    BytesServed { path: String, bytes: u64 },
    /// A trickled connection has been held open this long.
    ConnectionHeld { path: String, seconds: u64 },
}

/// In-memory observation store with optional line-delimited JSON persistence.
pub struct ObservationLog {
    obs_dir: Option<PathBuf>,
    inner: Mutex<std::collections::HashMap<String, Vec<Observation>>>,
}

impl ObservationLog {
    pub fn new(obs_dir: Option<PathBuf>) -> ObservationLog {
        ObservationLog {
            obs_dir,
            inner: Mutex::new(std::collections::HashMap::new()),
        }
    }

    pub fn record(&self, instance_uuid: &str, event: ObservationEvent) {
        let obs = Observation {
            instance_uuid: instance_uuid.to_string(),
            timestamp: Utc::now(),
            event,
        };
        if let Some(dir) = &self.obs_dir {
            if let Ok(line) = serde_json::to_string(&obs) {
                let path = dir.join(format!("{instance_uuid}.jsonl"));
                let result = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .and_then(|mut f| writeln!(f, "{line}"));
                if let Err(err) = result {
                    log::warn!("observation persistence failed for {path:?}: {err}");
                }
            }
        }
        self.inner
            .lock()
            .unwrap()
            .entry(obs.instance_uuid.clone())
            .or_default()
            .push(obs);
    }

    pub fn for_instance(&self, instance_uuid: &str) -> Vec<Observation> {
        self.inner
            .lock()
            .unwrap()
            .get(instance_uuid)
            .cloned()
            .unwrap_or_default()
    }

    /// Deepest tree node fetched for this instance.
    pub fn max_fetch_depth(&self, instance_uuid: &str) -> Option<u32> {
        self.for_instance(instance_uuid)
            .iter()
            .filter_map(|o| match &o.event {
                ObservationEvent::Fetch { depth, .. } => Some(*depth),
                _ => None,
            })
            .max()
    }

    pub fn fetch_count(&self, instance_uuid: &str) -> usize {
        self.for_instance(instance_uuid)
            .iter()
            .filter(|o| matches!(o.event, ObservationEvent::Fetch { .. }))
            .count()
    }

    pub fn callback_hits(&self, instance_uuid: &str) -> usize {
        self.for_instance(instance_uuid)
            .iter()
            .filter(|o| matches!(o.event, ObservationEvent::CallbackHit { .. }))
            .count()
    }

    pub fn bytes_served(&self, instance_uuid: &str) -> u64 {
        self.for_instance(instance_uuid)
            .iter()
            .filter_map(|o| match &o.event {
                ObservationEvent::BytesServed { bytes, .. } => Some(*bytes),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }
}

//------------ TLS setup -----------------------------------------------------

/// Self-signed wildcard certificate for the testbed domain. Relying parties
/// must not validate RRDP endpoints against the web PKI, so self-signed is
/// both sufficient and the honest choice.
pub fn self_signed_tls(base_domain: &str) -> anyhow::Result<rustls::ServerConfig> {
    let names = vec![
        format!("*.{base_domain}"),
        base_domain.to_string(),
        "localhost".to_string(),
    ];
    let signed = rcgen::generate_simple_self_signed(names)?;
    let cert = signed.cert.der().clone();
    let key = rustls::pki_types::PrivateKeyDer::Pkcs8(
        signed.key_pair.serialize_der().into(),
    );
    server_config(vec![cert], key)
}

/// TLS configuration from PEM files on disk.
pub fn tls_from_files(cert_path: &str, key_path: &str) -> anyhow::Result<rustls::ServerConfig> {
    let certs: Vec<_> = rustls_pemfile::certs(&mut std::io::BufReader::new(
        std::fs::File::open(cert_path).with_context(|| format!("reading {cert_path}"))?,
    ))
    .collect::<Result<_, _>>()?;
    let key = rustls_pemfile::private_key(&mut std::io::BufReader::new(
        std::fs::File::open(key_path).with_context(|| format!("reading {key_path}"))?,
    ))?
    .context("no private key in file")?;
    server_config(certs, key)
}

fn server_config(
    certs: Vec<rustls::pki_types::CertificateDer<'static>>,
    key: rustls::pki_types::PrivateKeyDer<'static>,
) -> anyhow::Result<rustls::ServerConfig> {
    let mut config = rustls::ServerConfig::builder()
        .with_no_client_auth()
        .with_single_cert(certs, key)?;
    config.alpn_protocols = vec![b"http/1.1".to_vec()];
    Ok(config)
}

//------------ AttackServer --------------------------------------------------

pub struct AttackServer {
    engine: Arc<Engine>,
    observations: Arc<ObservationLog>,
    acceptor: TlsAcceptor,
    trickle_permits: Arc<tokio::sync::Semaphore>,
}

impl AttackServer {
    pub fn new(
        engine: Arc<Engine>,
        observations: Arc<ObservationLog>,
        tls: rustls::ServerConfig,
    ) -> AttackServer {
        AttackServer {
            engine,
            observations,
            acceptor: TlsAcceptor::from(Arc::new(tls)),
            trickle_permits: Arc::new(tokio::sync::Semaphore::new(MAX_TRICKLE_CONNECTIONS)),
        }
    }

    /// Binds and serves forever. Returns once the listener fails.
    pub async fn serve(self: Arc<Self>, listen: SocketAddr) -> anyhow::Result<()> {
        let listener = TcpListener::bind(listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        self.serve_on(listener).await
    }

    /// Serves on an already bound listener.
    pub async fn serve_on(self: Arc<Self>, listener: TcpListener) -> anyhow::Result<()> {
        loop {
            let (stream, peer) = listener.accept().await?;
            let server = self.clone();
            tokio::spawn(async move {
                if let Err(err) = server.handle(stream).await {
                    log::debug!("connection from {peer}: {err:#}");
                }
            });
        }
    }

    async fn handle(&self, stream: TcpStream) -> anyhow::Result<()> {
        stream.set_nodelay(true).ok();
        let mut tls = self.acceptor.accept(stream).await.context("TLS accept")?;
        let sni = tls
            .get_ref()
            .1
            .server_name()
            .map(|n| n.to_ascii_lowercase());
        let request = read_request(&mut tls).await?;
        let host = sni
            .or_else(|| request.host.clone())
            .unwrap_or_default();
        let Some(instance) = self.engine.lookup(&host) else {
            write_simple(&mut tls, 421, "Misdirected Request", "unknown host\n").await?;
            return Ok(());
        };
        self.respond(&mut tls, &instance, &request.path).await
    }

    async fn respond(
        &self,
        tls: &mut (impl AsyncWriteExt + Unpin),
        instance: &TestInstance,
        path: &str,
    ) -> anyhow::Result<()> {
        let resource = self.engine.resolve(instance, path);
        let depth = path.matches("/c").count() as u32;
        self.observations.record(
            &instance.uuid,
            ObservationEvent::Fetch {
                path: path.to_string(),
                depth,
            },
        );
        if path.starts_with("/callback/") {
            self.observations.record(
                &instance.uuid,
                ObservationEvent::CallbackHit {
                    path: path.to_string(),
                },
            );
        }
        match resource.behavior {
            HttpBehavior::Normal => {
                let Body::Bytes(body) = resource.body else {
                    bail!("normal responses carry in-memory bodies")
                };
                write_response(tls, 200, "OK", resource.media_type, &[], &body).await
            }
            HttpBehavior::NotFound => {
                write_simple(tls, 404, "Not Found", "not found\n").await
            }
            HttpBehavior::RateLimit { retry_after_secs } => {
                let Body::Bytes(body) = resource.body else {
                    bail!("rate limit body")
                };
                write_response(
                    tls,
                    429,
                    "Too Many Requests",
                    "text/plain",
                    &[("Retry-After", retry_after_secs.to_string())],
                    &body,
                )
                .await
            }
            HttpBehavior::RedirectChain { next_hop } => {
                let location = format!("https://{}/redirect/{next_hop}", instance.hostname);
                write_response(
                    tls,
                    302,
                    "Found",
                    "text/plain",
                    &[("Location", location)],
                    b"",
                )
                .await
            }
            HttpBehavior::GzipBomb { .. } => {
                let Body::Bytes(body) = resource.body else {
                    bail!("bomb body")
                };
                write_response(
                    tls,
                    200,
                    "OK",
                    resource.media_type,
                    &[("Content-Encoding", "gzip".to_string())],
                    &body,
                )
                .await
            }
            HttpBehavior::Trickle { rate_bytes_per_sec } => {
                let Body::Bytes(body) = resource.body else {
                    bail!("trickle body")
                };
                self.trickle(tls, instance, path, &body, rate_bytes_per_sec)
                    .await
            }
            HttpBehavior::Huge { total_len } => {
                let Body::RandomStream { seed, .. } = resource.body else {
                    bail!("huge responses are streamed")
                };
                self.stream_random(tls, instance, path, total_len, seed).await
            }
        }
    }

    /// Writes the body a few bytes per second, never closing early.
    async fn trickle(
        &self,
        tls: &mut (impl AsyncWriteExt + Unpin),
        instance: &TestInstance,
        path: &str,
        body: &[u8],
        rate: u64,
    ) -> anyhow::Result<()> {
        let _permit = self
            .trickle_permits
            .clone()
            .acquire_owned()
            .await
            .context("trickle slots exhausted")?;
        write_head(tls, 200, "OK", "application/xml", &[], body.len() as u64).await?;
        let mut sent = 0usize;
        let mut seconds = 0u64;
        let step = rate.max(1) as usize;
        while sent < body.len() {
            let end = (sent + step).min(body.len());
            tls.write_all(&body[sent..end]).await?;
            tls.flush().await?;
            sent = end;
            seconds += 1;
            if seconds % 10 == 0 {
                self.observations.record(
                    &instance.uuid,
                    ObservationEvent::ConnectionHeld {
                        path: path.to_string(),
                        seconds,
                    },
                );
            }
            if sent < body.len() {
                tokio::time::sleep(Duration::from_secs(1)).await;
            }
        }
        tls.shutdown().await.ok();
        Ok(())
    }

    /// Streams a deterministic pseudorandom payload without buffering it.
    async fn stream_random(
        &self,
        tls: &mut (impl AsyncWriteExt + Unpin),
        instance: &TestInstance,
        path: &str,
        total_len: u64,
        seed: u64,
    ) -> anyhow::Result<()> {
        write_head(tls, 200, "OK", "application/octet-stream", &[], total_len).await?;
        let mut chunk = vec![0u8; STREAM_CHUNK];
        let mut offset = 0u64;
        while offset < total_len {
            let n = ((total_len - offset) as usize).min(chunk.len());
            fill_random_stream(seed, offset, &mut chunk[..n]);
            tls.write_all(&chunk[..n]).await?;
            offset += n as u64;
            if offset % (64 << 20) == 0 || offset == total_len {
                self.observations.record(
                    &instance.uuid,
                    ObservationEvent::BytesServed {
                        path: path.to_string(),
                        bytes: offset,
                    },
                );
            }
        }
        tls.shutdown().await.ok();
        Ok(())
    }
}

//------------ HTTP plumbing -------------------------------------------------

struct Request {
    path: String,
    host: Option<String>,
}

async fn read_request(stream: &mut (impl AsyncReadExt + Unpin)) -> anyhow::Result<Request> {
    let mut buf = Vec::with_capacity(1024);
    let mut byte = [0u8; 1];
    while !buf.ends_with(b"\r\n\r\n") {
        if buf.len() > 64 * 1024 {
            bail!("request header too large");
        }
        let n = stream.read(&mut byte).await?;
        if n == 0 {
            bail!("connection closed mid-request");
        }
        buf.push(byte[0]);
    }
    let text = String::from_utf8_lossy(&buf);
    let mut lines = text.lines();
    let request_line = lines.next().context("empty request")?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().context("missing method")?;
    let path = parts.next().context("missing path")?.to_string();
    if method != "GET" && method != "HEAD" {
        bail!("unsupported method {method}");
    }
    let mut host = None;
    for line in lines {
        if let Some(value) = line.strip_prefix("Host:").or_else(|| line.strip_prefix("host:")) {
            let value = value.trim();
            let value = value.split(':').next().unwrap_or(value);
            host = Some(value.to_ascii_lowercase());
        }
    }
    Ok(Request { path, host })
}

async fn write_head(
    stream: &mut (impl AsyncWriteExt + Unpin),
    status: u16,
    reason: &str,
    content_type: &str,
    extra: &[(&str, String)],
    content_length: u64,
) -> anyhow::Result<()> {
    let mut head = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: {content_type}\r\nContent-Length: {content_length}\r\nConnection: close\r\n"
    );
    for (name, value) in extra {
        head.push_str(name);
        head.push_str(": ");
        head.push_str(value);
        head.push_str("\r\n");
    }
    head.push_str("\r\n");
    stream.write_all(head.as_bytes()).await?;
    stream.flush().await?;
    Ok(())
}

async fn write_response(
    stream: &mut (impl AsyncWriteExt + Unpin),
    status: u16,
    reason: &str,
    content_type: &str,
    extra: &[(&str, String)],
    body: &[u8],
) -> anyhow::Result<()> {
    write_head(stream, status, reason, content_type, extra, body.len() as u64).await?;
    stream.write_all(body).await?;
    stream.flush().await?;
    stream.shutdown().await.ok();
    Ok(())
}

async fn write_simple(
    stream: &mut (impl AsyncWriteExt + Unpin),
    status: u16,
    reason: &str,
    body: &str,
) -> anyhow::Result<()> {
    write_response(stream, status, reason, "text/plain", &[], body.as_bytes()).await
}
