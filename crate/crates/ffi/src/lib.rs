//! C ABI for the rategraph engine.
//!
//! Graphs and models are opaque handles created by `rg_graph_from_*` and
//! `rg_model_load` and released with the matching `*_free`. Every fallible call
//! returns an [`RgStatus`]; on failure the message is available from
//! [`rg_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use rategraph::eval;
use rategraph::features::{featurize, FeatureContext, N_FEATURES};
use rategraph::ingest::{read_interchange, BusinessId, IdMap, ReviewEdge, UserId};
use rategraph::models::ModelFile;
use rategraph::{BipartiteGraph, Error, Matrix, Node};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Lookup = 5,
    Construction = 6,
    Convergence = 7,
    Shape = 8,
    Stat = 9,
    Config = 10,
    Panic = 11,
}

impl From<&Error> for RgStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io(_) | Error::Dependency { .. } => RgStatus::Io,
            Error::Parse { .. }
            | Error::Schema { .. }
            | Error::Validation { .. }
            | Error::Format { .. }
            | Error::Csv(_)
            | Error::Json(_) => RgStatus::Parse,
            Error::Lookup { .. } => RgStatus::Lookup,
            Error::Construction(_) | Error::Split(_) => RgStatus::Construction,
            Error::Convergence { .. } | Error::Divergence(_) | Error::Fit(_) => RgStatus::Convergence,
            Error::Shape { .. } => RgStatus::Shape,
            Error::Stat(_) => RgStatus::Stat,
            Error::Config(_) => RgStatus::Config,
            Error::Input(_) => RgStatus::InvalidArgument,
        }
    }
}

/// Side of the bipartite graph a node id refers to.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgNodeKind {
    User = 0,
    Business = 1,
}

/// Metrics of one prediction vector.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RgMetrics {
    pub rmse: f64,
    pub relerror: f64,
    pub r2: f64,
}

/// Immutable review graph, optionally with the string ids it was read with.
pub struct RgGraph {
    graph: BipartiteGraph,
    ids: Option<IdMap>,
}

/// A trained model together with its feature standardizer.
pub struct RgModel {
    file: ModelFile,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `body`, converting errors and panics into status codes.
fn guard<F>(body: F) -> RgStatus
where
    F: FnOnce() -> Result<(), (RgStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => RgStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RgStatus::Panic
        }
    }
}

fn engine(e: Error) -> (RgStatus, String) {
    (RgStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (RgStatus, String) {
    (RgStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn input<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (RgStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn output<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], (RgStatus, String)> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, n))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (RgStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (RgStatus::InvalidArgument, "path is not valid UTF-8".to_string()))?;
    Ok(PathBuf::from(s))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a graph from parallel edge arrays of length `n`.
///
/// # Safety
/// Each array must hold `n` readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_graph_from_edges(
    users: *const u32,
    businesses: *const u32,
    stars: *const u8,
    timestamps: *const i64,
    n: usize,
    out: *mut *mut RgGraph,
) -> RgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (u, b) = (input(users, n, "users")?, input(businesses, n, "businesses")?);
        let (s, t) = (input(stars, n, "stars")?, input(timestamps, n, "timestamps")?);
        let edges = (0..n).map(|i| ReviewEdge::new(u[i], b[i], s[i], t[i])).collect();
        let graph = BipartiteGraph::from_edges(edges).map_err(engine)?;
        *out = Box::into_raw(Box::new(RgGraph { graph, ids: None }));
        Ok(())
    })
}

/// Reads an edge interchange CSV (`user_id,business_id,stars,unix_ts`).
/// String ids are interned in order of first appearance.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_graph_from_csv(path: *const c_char, out: *mut *mut RgGraph) -> RgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let file = File::open(&path).map_err(|e| engine(Error::Io(e)))?;
        let mut ids = IdMap::new();
        let edges = read_interchange(BufReader::new(file), &mut ids).map_err(engine)?;
        let graph =
            BipartiteGraph::with_id_space(edges, ids.n_users(), ids.n_businesses()).map_err(engine)?;
        *out = Box::into_raw(Box::new(RgGraph { graph, ids: Some(ids) }));
        Ok(())
    })
}

/// Releases a graph. NULL is ignored.
///
/// # Safety
/// `g` must come from an `rg_graph_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rg_graph_free(g: *mut RgGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Numbers of users, businesses and edges present in the graph. Any output
/// pointer may be NULL.
///
/// # Safety
/// `g` must be a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn rg_graph_counts(
    g: *const RgGraph,
    n_users: *mut usize,
    n_businesses: *mut usize,
    n_edges: *mut usize,
) -> RgStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("graph"))?;
        for (p, v) in [(n_users, g.graph.n_users()), (n_businesses, g.graph.n_businesses()), (n_edges, g.graph.n_edges())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Degree of one node.
///
/// # Safety
/// `g` must be a live graph handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_graph_degree(g: *const RgGraph, kind: RgNodeKind, id: u32, out: *mut usize) -> RgStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("graph"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let node = match kind {
            RgNodeKind::User => Node::User(UserId(id)),
            RgNodeKind::Business => Node::Business(BusinessId(id)),
        };
        *out = g.graph.degree(node).map_err(engine)?;
        Ok(())
    })
}

/// Integer id of a string id from the CSV the graph was read from.
///
/// # Safety
/// `g` must be a live graph handle, `name` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rg_graph_lookup(
    g: *const RgGraph,
    kind: RgNodeKind,
    name: *const c_char,
    out: *mut u32,
) -> RgStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("graph"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if name.is_null() {
            return Err(null("name"));
        }
        let name = CStr::from_ptr(name).to_string_lossy();
        let ids = g
            .ids
            .as_ref()
            .ok_or_else(|| (RgStatus::InvalidArgument, "graph was not built from a CSV file".to_string()))?;
        let id = match kind {
            RgNodeKind::User => ids.user(&name).map(|u| u.0),
            RgNodeKind::Business => ids.business(&name).map(|b| b.0),
        };
        *out = id.ok_or_else(|| (RgStatus::Lookup, format!("unknown id `{name}`")))?;
        Ok(())
    })
}

/// Number of columns written per pair by [`rg_featurize`].
#[no_mangle]
pub extern "C" fn rg_n_features() -> usize {
    N_FEATURES
}

/// Raw features of `n` (user, business) pairs on graph `g`, written
/// row-major into `out`, which must hold `n * rg_n_features()` doubles.
///
/// # Safety
/// Arrays must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn rg_featurize(
    g: *const RgGraph,
    users: *const u32,
    businesses: *const u32,
    n: usize,
    out: *mut f64,
) -> RgStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("graph"))?;
        let (u, b) = (input(users, n, "users")?, input(businesses, n, "businesses")?);
        let out = output(out, n * N_FEATURES, "out")?;
        let ctx = FeatureContext::new(&g.graph).map_err(engine)?;
        let pairs: Vec<_> = (0..n).map(|i| (UserId(u[i]), BusinessId(b[i]), 0.0)).collect();
        let fm = featurize(&ctx, &pairs).map_err(engine)?;
        for (dst, row) in out.chunks_exact_mut(N_FEATURES).zip(&fm.rows) {
            dst.copy_from_slice(&row.features);
        }
        Ok(())
    })
}

/// Loads a model file written by the `train` stage.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_model_load(path: *const c_char, out: *mut *mut RgModel) -> RgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let file = ModelFile::load(&path).map_err(engine)?;
        *out = Box::into_raw(Box::new(RgModel { file }));
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `m` must come from [`rg_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rg_model_free(m: *mut RgModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Expected column count, or 0 for models that ignore their input.
///
/// # Safety
/// `m` must be a live model handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_model_input_width(m: *const RgModel, out: *mut usize) -> RgStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.file.model.input_width().unwrap_or(0);
        Ok(())
    })
}

/// Predicts ratings for `rows` raw (unstandardized) feature rows of `cols`
/// columns each. `out` must hold `rows` doubles.
///
/// # Safety
/// `x` must hold `rows * cols` doubles and `out` `rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn rg_model_predict(
    m: *const RgModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> RgStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("model"))?;
        let n = rows.checked_mul(cols).ok_or_else(|| (RgStatus::InvalidArgument, "rows * cols overflows".to_string()))?;
        let data = input(x, n, "x")?.to_vec();
        let out = output(out, rows, "out")?;
        let x = Matrix::new(rows, cols, data).map_err(engine)?;
        out.copy_from_slice(&m.file.predict_raw(&x).map_err(engine)?);
        Ok(())
    })
}

/// RMSE, relative error and R² of `n` predictions.
///
/// # Safety
/// `pred` and `truth` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_metrics(pred: *const f64, truth: *const f64, n: usize, out: *mut RgMetrics) -> RgStatus {
    guard(|| {
        let (p, t) = (input(pred, n, "pred")?, input(truth, n, "truth")?);
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = RgMetrics {
            rmse: eval::rmse(p, t).map_err(engine)?,
            relerror: eval::relerror(p, t).map_err(engine)?,
            r2: eval::r2_score(p, t).map_err(engine)?,
        };
        Ok(())
    })
}
