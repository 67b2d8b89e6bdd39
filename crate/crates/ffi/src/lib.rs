//! C ABI over the acnet engine.
//!
//! Graphs cross the boundary as opaque `AcnetGraph` handles. Every function
//! returns an `AcnetStatus`; on failure the message is available from
//! `acnet_last_error` until the next call on the same thread.

use acnet::analyzer::{count_flops, count_macs, count_params, netscore};
use acnet::graph::{deserialize_graph, load_weights, save_weights, serialize_graph, seed_prototype, ModelGraph, PrototypeConfig};
use acnet::{Error, Tensor};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcnetStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Dimension = 3,
    Config = 4,
    Data = 5,
    Parse = 6,
    Integrity = 7,
    Incompatible = 8,
    Numeric = 9,
    Domain = 10,
    Io = 11,
    Panic = 12,
    Other = 13,
}

/// Opaque model handle.
pub struct AcnetGraph {
    inner: ModelGraph,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AcnetStatus {
    match e {
        Error::Dimension(_) => AcnetStatus::Dimension,
        Error::Config(_) | Error::Build { .. } => AcnetStatus::Config,
        Error::Data(_) => AcnetStatus::Data,
        Error::Parse(_) => AcnetStatus::Parse,
        Error::Integrity(_) => AcnetStatus::Integrity,
        Error::Incompatible(_) => AcnetStatus::Incompatible,
        Error::Numeric(_) | Error::Diverged { .. } => AcnetStatus::Numeric,
        Error::Domain(_) | Error::UndefinedMetric(_) => AcnetStatus::Domain,
        Error::Io { .. } => AcnetStatus::Io,
        Error::State(_) => AcnetStatus::Other,
    }
}

enum Fail {
    Status(AcnetStatus, String),
    Engine(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Engine(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AcnetStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AcnetStatus::Ok,
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Fail::Engine(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            AcnetStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(AcnetStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail::Status(AcnetStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn graph_ref<'a>(g: *const AcnetGraph) -> Result<&'a AcnetGraph, Fail> {
    g.as_ref().ok_or_else(|| null("graph"))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn boxed(g: ModelGraph) -> *mut AcnetGraph {
    Box::into_raw(Box::new(AcnetGraph { inner: g }))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn acnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or null.
///
/// The pointer stays valid until the next acnet call on the same thread.
#[no_mangle]
pub extern "C" fn acnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Builds a graph from its JSON description.
///
/// # Safety
/// `json` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acnet_graph_from_json(json: *const c_char, seed: u64, out: *mut *mut AcnetGraph) -> AcnetStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let text = str_arg(json, "json")?;
        *out = boxed(deserialize_graph(text, seed)?);
        Ok(())
    })
}

/// Builds the default prototype for `height`×`width` single-channel images.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acnet_graph_seed_prototype(height: usize, width: usize, seed: u64, out: *mut *mut AcnetGraph) -> AcnetStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let specs = seed_prototype(&PrototypeConfig::default())?;
        *out = boxed(acnet::graph::build_graph(&specs, [1, 1, height, width], seed)?);
        Ok(())
    })
}

/// Releases a graph. Null is a no-op.
///
/// # Safety
/// `graph` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn acnet_graph_free(graph: *mut AcnetGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Serialized graph description; free with `acnet_string_free`.
///
/// # Safety
/// `graph` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acnet_graph_to_json(graph: *const AcnetGraph, out: *mut *mut c_char) -> AcnetStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        let out = out_ref(out, "out")?;
        *out = CString::new(serialize_graph(&g.inner)).expect("json has no nul").into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn acnet_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads weights; on failure the graph keeps its previous weights.
///
/// # Safety
/// `graph` must be a live handle; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn acnet_graph_load_weights(graph: *mut AcnetGraph, path: *const c_char) -> AcnetStatus {
    guard(|| {
        let g = graph.as_mut().ok_or_else(|| null("graph"))?;
        load_weights(&mut g.inner, Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `graph` must be a live handle; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn acnet_graph_save_weights(graph: *const AcnetGraph, path: *const c_char) -> AcnetStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        save_weights(&g.inner, Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Writes the bound input shape (N, C, H, W) into `out[0..4]`.
///
/// # Safety
/// `graph` must be a live handle; `out` must point to 4 writable values.
#[no_mangle]
pub unsafe extern "C" fn acnet_graph_input_shape(graph: *const AcnetGraph, out: *mut usize) -> AcnetStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, 4).copy_from_slice(&g.inner.input_shape());
        Ok(())
    })
}

/// # Safety
/// `graph` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acnet_graph_param_count(graph: *const AcnetGraph, out: *mut u64) -> AcnetStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        *out_ref(out, "out")? = count_params(&g.inner);
        Ok(())
    })
}

/// FLOPs and MACs of one `channels`×`height`×`width` image.
///
/// # Safety
/// `graph` must be a live handle; `flops` and `macs` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acnet_graph_cost(
    graph: *const AcnetGraph,
    channels: usize,
    height: usize,
    width: usize,
    flops: *mut u64,
    macs: *mut u64,
) -> AcnetStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        let shape = [1, channels, height, width];
        let f = count_flops(&g.inner, shape)?;
        let m = count_macs(&g.inner, shape)?;
        *out_ref(flops, "flops")? = f;
        *out_ref(macs, "macs")? = m;
        Ok(())
    })
}

/// Positive-class probabilities for `n` images laid out NCHW.
///
/// `images` holds `n * C * H * W` values matching the graph's input shape;
/// `scores` receives `n` values.
///
/// # Safety
/// `graph` must be a live handle; the buffers must have the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn acnet_graph_predict(
    graph: *const AcnetGraph,
    images: *const f64,
    n: usize,
    scores: *mut f64,
) -> AcnetStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        if images.is_null() {
            return Err(null("images"));
        }
        if scores.is_null() {
            return Err(null("scores"));
        }
        let [_, c, h, w] = g.inner.input_shape();
        let data = std::slice::from_raw_parts(images, n * c * h * w).to_vec();
        let batch = Tensor::from_vec([n, c, h, w], data)?;
        let s = acnet::train::predict_scores(&g.inner, &batch, 32)?;
        std::slice::from_raw_parts_mut(scores, n).copy_from_slice(&s);
        Ok(())
    })
}

/// ROC AUC of `n` scores against 0/1 labels.
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acnet_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> AcnetStatus {
    guard(|| {
        if scores.is_null() {
            return Err(null("scores"));
        }
        if labels.is_null() {
            return Err(null("labels"));
        }
        let out = out_ref(out, "out")?;
        let s = std::slice::from_raw_parts(scores, n);
        let l: Vec<usize> = std::slice::from_raw_parts(labels, n).iter().map(|&x| x as usize).collect();
        *out = acnet::metrics::roc_auc(s, &l)?;
        Ok(())
    })
}

/// NetScore of a model with the given accuracy, parameter and MAC counts.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acnet_netscore(auc: f64, params: u64, macs: u64, out: *mut f64) -> AcnetStatus {
    guard(|| {
        *out_ref(out, "out")? = netscore(auc, params, macs)?;
        Ok(())
    })
}
