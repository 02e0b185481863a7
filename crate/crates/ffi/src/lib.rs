//! C ABI surface for the testbed engine.
//!
//! Exposes instance minting, TAL export, and content resolution through
//! opaque handles so the scenario generator can be embedded in non-Rust
//! harnesses. All functions return a status code; out parameters are only
//! written on `RPTB_OK`. Buffers returned by the library stay owned by the
//! handle they came from and live until that handle is freed.

use std::ffi::{c_char, CStr};
use std::ptr;
use std::sync::Arc;

use rp_testbed::scenario::{Body, Engine, HttpBehavior, TestId, TestInstance, TestParams};

//------------ Status codes --------------------------------------------------

/// Result of an FFI call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum RptbStatus {
    /// Success.
    RptbOk = 0,
    /// A required pointer argument was null.
    RptbErrNullArg = 1,
    /// A string argument was not valid UTF-8.
    RptbErrBadUtf8 = 2,
    /// The test letter is not one of A through O.
    RptbErrUnknownTest = 3,
    /// A `key=value` parameter override was malformed or unknown.
    RptbErrBadParam = 4,
    /// The hostname does not belong to a registered instance.
    RptbErrUnknownInstance = 5,
}

//------------ Opaque handles ------------------------------------------------

/// Scenario engine handle.
pub struct RptbEngine {
    inner: Engine,
}

/// One minted test instance. Owns the C strings handed out for it.
pub struct RptbInstance {
    inner: Arc<TestInstance>,
    hostname: Vec<u8>,
    uuid: Vec<u8>,
    tal: Vec<u8>,
}

/// One resolved resource: body bytes plus the HTTP behavior the attack
/// server would apply when serving it.
pub struct RptbResource {
    body: Vec<u8>,
    behavior: RptbBehavior,
    behavior_value: u64,
    total_len: u64,
}

/// HTTP behavior attached to a resource.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum RptbBehavior {
    /// Plain 200 response.
    RptbBehaviorNormal = 0,
    /// 404; the path does not exist for this instance.
    RptbBehaviorNotFound = 1,
    /// 429; `behavior_value` is the Retry-After seconds.
    RptbBehaviorRateLimit = 2,
    /// 302; `behavior_value` is the next hop index.
    RptbBehaviorRedirect = 3,
    /// Body is a gzip stream served with Content-Encoding: gzip;
    /// `behavior_value` is the decompressed length.
    RptbBehaviorGzipBomb = 4,
    /// Body is served at `behavior_value` bytes per second.
    RptbBehaviorTrickle = 5,
    /// Body is a pseudorandom stream of `total_len` bytes; only a prefix
    /// is materialized in the buffer.
    RptbBehaviorHuge = 6,
}

//------------ Helpers -------------------------------------------------------

unsafe fn utf8_arg<'a>(s: *const c_char) -> Result<&'a str, RptbStatus> {
    if s.is_null() {
        return Err(RptbStatus::RptbErrNullArg);
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| RptbStatus::RptbErrBadUtf8)
}

fn nul_terminated(s: &str) -> Vec<u8> {
    let mut v = s.as_bytes().to_vec();
    v.push(0);
    v
}

//------------ Engine lifecycle ----------------------------------------------

/// Creates an engine minting hostnames under `base_domain`.
///
/// # Safety
/// `base_domain` must be a valid NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rptb_engine_new(
    base_domain: *const c_char,
    out: *mut *mut RptbEngine,
) -> RptbStatus {
    if out.is_null() {
        return RptbStatus::RptbErrNullArg;
    }
    let domain = match utf8_arg(base_domain) {
        Ok(d) => d,
        Err(status) => return status,
    };
    let engine = Box::new(RptbEngine {
        inner: Engine::new(domain),
    });
    *out = Box::into_raw(engine);
    RptbStatus::RptbOk
}

/// Frees an engine. Instances and resources minted from it stay valid.
///
/// # Safety
/// `engine` must come from `rptb_engine_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rptb_engine_free(engine: *mut RptbEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

//------------ Instance minting ----------------------------------------------

/// Mints a fresh instance of the test named by `letter` (A through O,
/// case-insensitive). `params` is an optional array of `n_params`
/// NUL-terminated `key=value` overrides.
///
/// # Safety
/// `engine` and `out` must be valid; `params` must point to `n_params`
/// valid C strings when `n_params` is nonzero.
#[no_mangle]
pub unsafe extern "C" fn rptb_instance_new(
    engine: *mut RptbEngine,
    letter: c_char,
    params: *const *const c_char,
    n_params: usize,
    out: *mut *mut RptbInstance,
) -> RptbStatus {
    if engine.is_null() || out.is_null() || (params.is_null() && n_params > 0) {
        return RptbStatus::RptbErrNullArg;
    }
    let engine = &(*engine).inner;
    let Some(test) = TestId::from_letter((letter as u8 as char).to_ascii_uppercase()) else {
        return RptbStatus::RptbErrUnknownTest;
    };
    let mut test_params = TestParams::defaults_for(test);
    for i in 0..n_params {
        let pair = match utf8_arg(*params.add(i)) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let Some((key, value)) = pair.split_once('=') else {
            return RptbStatus::RptbErrBadParam;
        };
        if test_params.set(key, value).is_err() {
            return RptbStatus::RptbErrBadParam;
        }
    }
    let instance = engine.new_instance(test, test_params);
    let tal = engine.tal_for(&instance).encode();
    let handle = Box::new(RptbInstance {
        hostname: nul_terminated(&instance.hostname),
        uuid: nul_terminated(&instance.uuid),
        tal,
        inner: instance,
    });
    *out = Box::into_raw(handle);
    RptbStatus::RptbOk
}

/// The instance hostname, valid until the instance is freed.
///
/// # Safety
/// `instance` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rptb_instance_hostname(instance: *const RptbInstance) -> *const c_char {
    if instance.is_null() {
        return ptr::null();
    }
    (*instance).hostname.as_ptr() as *const c_char
}

/// The instance UUID, valid until the instance is freed.
///
/// # Safety
/// `instance` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rptb_instance_uuid(instance: *const RptbInstance) -> *const c_char {
    if instance.is_null() {
        return ptr::null();
    }
    (*instance).uuid.as_ptr() as *const c_char
}

/// The trust anchor locator for the instance. Writes the buffer pointer
/// and length; the buffer is owned by the instance.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rptb_instance_tal(
    instance: *const RptbInstance,
    data_out: *mut *const u8,
    len_out: *mut usize,
) -> RptbStatus {
    if instance.is_null() || data_out.is_null() || len_out.is_null() {
        return RptbStatus::RptbErrNullArg;
    }
    *data_out = (*instance).tal.as_ptr();
    *len_out = (*instance).tal.len();
    RptbStatus::RptbOk
}

/// Frees an instance handle and every buffer handed out for it.
///
/// # Safety
/// `instance` must come from `rptb_instance_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rptb_instance_free(instance: *mut RptbInstance) {
    if !instance.is_null() {
        drop(Box::from_raw(instance));
    }
}

//------------ Content resolution --------------------------------------------

/// Resolves `path` (e.g. "/ta.cer", "/notification.xml") for an instance.
/// Streamed bodies are materialized up to `max_stream_bytes`; `total_len`
/// on the resource reports the full logical size.
///
/// # Safety
/// `engine`, `path`, and `out` must be valid; the instance must have been
/// minted from the same engine.
#[no_mangle]
pub unsafe extern "C" fn rptb_resolve(
    engine: *mut RptbEngine,
    instance: *const RptbInstance,
    path: *const c_char,
    max_stream_bytes: usize,
    out: *mut *mut RptbResource,
) -> RptbStatus {
    if engine.is_null() || instance.is_null() || out.is_null() {
        return RptbStatus::RptbErrNullArg;
    }
    let engine = &(*engine).inner;
    let inst = &(*instance).inner;
    let path = match utf8_arg(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    if engine.lookup(&inst.hostname).is_none() {
        return RptbStatus::RptbErrUnknownInstance;
    }
    let generated = engine.resolve(inst, path);
    let total_len = generated.body.len();
    let body = match generated.body {
        Body::Bytes(b) => b,
        Body::RandomStream { total_len, seed } => {
            let take = (total_len as usize).min(max_stream_bytes);
            let mut buf = vec![0u8; take];
            rp_testbed::scenario::fill_random_stream(seed, 0, &mut buf);
            buf
        }
    };
    let (behavior, behavior_value) = match generated.behavior {
        HttpBehavior::Normal => (RptbBehavior::RptbBehaviorNormal, 0),
        HttpBehavior::NotFound => (RptbBehavior::RptbBehaviorNotFound, 0),
        HttpBehavior::RateLimit { retry_after_secs } => {
            (RptbBehavior::RptbBehaviorRateLimit, retry_after_secs)
        }
        HttpBehavior::RedirectChain { next_hop } => (RptbBehavior::RptbBehaviorRedirect, next_hop),
        HttpBehavior::GzipBomb {
            decompressed_len, ..
        } => (RptbBehavior::RptbBehaviorGzipBomb, decompressed_len),
        HttpBehavior::Trickle { rate_bytes_per_sec } => {
            (RptbBehavior::RptbBehaviorTrickle, rate_bytes_per_sec)
        }
        HttpBehavior::Huge { total_len } => (RptbBehavior::RptbBehaviorHuge, total_len),
    };
    let resource = Box::new(RptbResource {
        body,
        behavior,
        behavior_value,
        total_len,
    });
    *out = Box::into_raw(resource);
    RptbStatus::RptbOk
}

/// The resource body. The buffer is owned by the resource.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rptb_resource_body(
    resource: *const RptbResource,
    data_out: *mut *const u8,
    len_out: *mut usize,
) -> RptbStatus {
    if resource.is_null() || data_out.is_null() || len_out.is_null() {
        return RptbStatus::RptbErrNullArg;
    }
    *data_out = (*resource).body.as_ptr();
    *len_out = (*resource).body.len();
    RptbStatus::RptbOk
}

/// The HTTP behavior attached to the resource.
///
/// # Safety
/// `resource` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rptb_resource_behavior(resource: *const RptbResource) -> RptbBehavior {
    if resource.is_null() {
        return RptbBehavior::RptbBehaviorNotFound;
    }
    (*resource).behavior
}

/// The behavior parameter (Retry-After seconds, serving rate, and so on);
/// zero when the behavior carries none.
///
/// # Safety
/// `resource` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rptb_resource_behavior_value(resource: *const RptbResource) -> u64 {
    if resource.is_null() {
        return 0;
    }
    (*resource).behavior_value
}

/// The full logical body length, which exceeds the buffer length for
/// streamed bodies.
///
/// # Safety
/// `resource` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rptb_resource_total_len(resource: *const RptbResource) -> u64 {
    if resource.is_null() {
        return 0;
    }
    (*resource).total_len
}

/// Frees a resource handle.
///
/// # Safety
/// `resource` must come from `rptb_resolve` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rptb_resource_free(resource: *mut RptbResource) {
    if !resource.is_null() {
        drop(Box::from_raw(resource));
    }
}
