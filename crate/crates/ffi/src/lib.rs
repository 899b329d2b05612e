//! C ABI for the darc causal-discovery library.
//!
//! # Conventions
//!
//! - Every fallible function returns a [`DarcStatus`] and writes its results
//!   through out-pointers; `DARC_STATUS_OK` (0) means success and is the only
//!   status that writes outputs.
//! - On failure a thread-local message describes what went wrong;
//!   [`darc_last_error_message`] returns it. The pointer stays valid until
//!   the next failing call on the same thread.
//! - `DarcDataset` and `DarcTrainResult` are opaque handles. Release each
//!   with its `_free` function exactly once; `_free(NULL)` is a no-op.
//! - Adjacency matrices cross the boundary as row-major `uint8_t` buffers of
//!   length `d * d` with entries 0 or 1 and a zero diagonal; data matrices as
//!   row-major `double` buffers.
//! - Panics are caught at the boundary and reported as `DARC_STATUS_PANIC`
//!   rather than unwinding into the caller.
//!
//! The generated header lives at `include/darc.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use darc_core::cli::{synthesize, GenerateConfig};
use darc_core::dataset::MaskedDataset;
use darc_core::metrics::compute_metrics;
use darc_core::numeric::acyclicity_value;
use darc_core::trainer::{train, TrainConfig, TrainResult};
use darc_core::DarcError;
use nalgebra::DMatrix;

/// Result status of every fallible call in this interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DarcStatus {
    /// The call succeeded and all out-parameters are filled.
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Invalid arguments, configuration, or input files.
    InvalidArgument = 3,
    /// The call failed while running (I/O, numerical blow-up).
    RuntimeError = 4,
    /// An internal invariant was violated; the library caught a panic.
    Panic = 5,
}

/// Edge-recovery quality of an estimated graph against the ground truth.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DarcGraphMetrics {
    /// False discovery rate over directed edges; 0 when nothing is estimated.
    pub fdr: f64,
    /// True positive rate over directed edges; 0 when the truth is empty.
    pub tpr: f64,
    /// Structural Hamming distance (a reversed edge costs 1).
    pub shd: u64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    /// Estimated edges whose reverse is a true edge.
    pub reversed: u64,
}

/// A possibly incomplete data matrix (opaque).
pub struct DarcDataset {
    inner: MaskedDataset,
}

/// Everything a training run produced (opaque).
pub struct DarcTrainResult {
    inner: TrainResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: DarcStatus, message: &str) -> DarcStatus {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
    status
}

fn fail_err(err: &DarcError) -> DarcStatus {
    let status = if err.is_usage() {
        DarcStatus::InvalidArgument
    } else {
        DarcStatus::RuntimeError
    };
    fail(status, &err.to_string())
}

fn guarded<F: FnOnce() -> DarcStatus>(body: F) -> DarcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let detail = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(DarcStatus::Panic, &format!("internal panic: {detail}"))
        }
    }
}

/// # Safety
/// `ptr` must be NULL or a NUL-terminated C string valid for reads.
unsafe fn required_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, DarcStatus> {
    if ptr.is_null() {
        return Err(fail(DarcStatus::NullPointer, &format!("{what} is NULL")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(DarcStatus::InvalidUtf8, &format!("{what} is not valid UTF-8")))
}

fn required_out<T>(ptr: *mut T, what: &str) -> Result<(), DarcStatus> {
    if ptr.is_null() {
        Err(fail(DarcStatus::NullPointer, &format!("{what} is NULL")))
    } else {
        Ok(())
    }
}

/// Reads a row-major 0/1 byte buffer into a square adjacency matrix.
///
/// # Safety
/// `buf` must point to `d * d` readable bytes.
unsafe fn adjacency_from_bytes(buf: *const u8, d: usize) -> Result<DMatrix<f64>, DarcStatus> {
    let cells = std::slice::from_raw_parts(buf, d * d);
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let v = cells[i * d + j];
            if v > 1 {
                return Err(fail(
                    DarcStatus::InvalidArgument,
                    &format!("adjacency entry ({i}, {j}) is {v}; entries must be 0 or 1"),
                ));
            }
            a[(i, j)] = v as f64;
        }
    }
    Ok(a)
}

fn write_adjacency_bytes(a: &DMatrix<f64>, buf: *mut u8, len: usize) -> Result<(), DarcStatus> {
    let d = a.nrows();
    if len != d * d {
        return Err(fail(
            DarcStatus::InvalidArgument,
            &format!("buffer holds {len} entries but the graph needs {d} * {d} = {}", d * d),
        ));
    }
    let cells = unsafe { std::slice::from_raw_parts_mut(buf, len) };
    for i in 0..d {
        for j in 0..d {
            cells[i * d + j] = if a[(i, j)] != 0.0 { 1 } else { 0 };
        }
    }
    Ok(())
}

/// Returns the library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn darc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Returns the message of the most recent failure on this thread, or an
/// empty string if nothing has failed yet. The pointer is valid until the
/// next failing darc call on the same thread.
#[no_mangle]
pub extern "C" fn darc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Builds a dataset from a dense row-major matrix.
///
/// `mask` may be NULL (fully observed) or point to `rows * cols` bytes where
/// 1 marks an observed cell and 0 a missing one. Masked cells of `values`
/// are ignored.
///
/// # Safety
/// `values` must point to `rows * cols` readable doubles and `mask`, when
/// non-NULL, to `rows * cols` readable bytes; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn darc_dataset_from_dense(
    values: *const f64,
    mask: *const u8,
    rows: usize,
    cols: usize,
    out: *mut *mut DarcDataset,
) -> DarcStatus {
    guarded(|| {
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        if values.is_null() {
            return fail(DarcStatus::NullPointer, "values is NULL");
        }
        let cells = std::slice::from_raw_parts(values, rows * cols);
        let x = DMatrix::from_row_slice(rows, cols, cells);
        let names = MaskedDataset::default_names(cols);
        let built = if mask.is_null() {
            MaskedDataset::from_complete(x, names)
        } else {
            let mask_cells = std::slice::from_raw_parts(mask, rows * cols);
            let m = DMatrix::from_fn(rows, cols, |i, j| {
                if mask_cells[i * cols + j] != 0 { 1.0 } else { 0.0 }
            });
            MaskedDataset::with_mask(x, m, names)
        };
        match built {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(DarcDataset { inner: ds }));
                DarcStatus::Ok
            }
            Err(e) => fail_err(&e),
        }
    })
}

/// Loads a dataset from a CSV file with a header row.
///
/// Cells equal to `missing_token` (NULL means the empty string) are treated
/// as missing.
///
/// # Safety
/// `path` must be a NUL-terminated string; `missing_token` NULL or the same;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn darc_dataset_load_csv(
    path: *const c_char,
    missing_token: *const c_char,
    out: *mut *mut DarcDataset,
) -> DarcStatus {
    guarded(|| {
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        let path = match required_str(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let token = if missing_token.is_null() {
            ""
        } else {
            match required_str(missing_token, "missing_token") {
                Ok(s) => s,
                Err(status) => return status,
            }
        };
        match MaskedDataset::load_csv(Path::new(path), token) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(DarcDataset { inner: ds }));
                DarcStatus::Ok
            }
            Err(e) => fail_err(&e),
        }
    })
}

/// Generates a synthetic dataset from a JSON configuration.
///
/// `config_json` is a JSON object with any of the keys `d`, `n`, `scheme`,
/// `sem`, `noise`, `missing_rate`, and `seed`; `"{}"` selects all defaults.
/// The result is identical to what the command-line `generate` writes for
/// the same configuration. When `truth` is non-NULL it receives the
/// ground-truth adjacency matrix and `truth_len` must equal `d * d`.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be valid;
/// `truth` must be NULL or point to `truth_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn darc_generate(
    config_json: *const c_char,
    out: *mut *mut DarcDataset,
    truth: *mut u8,
    truth_len: usize,
) -> DarcStatus {
    guarded(|| {
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        let config = match required_str(config_json, "config_json") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let cfg: GenerateConfig = match serde_json::from_str(config) {
            Ok(c) => c,
            Err(e) => {
                return fail(
                    DarcStatus::InvalidArgument,
                    &format!("invalid generate config: {e}"),
                )
            }
        };
        if !truth.is_null() && truth_len != cfg.d * cfg.d {
            return fail(
                DarcStatus::InvalidArgument,
                &format!(
                    "truth buffer holds {truth_len} entries but d = {} needs {}",
                    cfg.d,
                    cfg.d * cfg.d
                ),
            );
        }
        match synthesize(&cfg) {
            Ok((graph, _, masked)) => {
                if !truth.is_null() {
                    if let Err(status) = write_adjacency_bytes(graph.adjacency(), truth, truth_len)
                    {
                        return status;
                    }
                }
                *out = Box::into_raw(Box::new(DarcDataset { inner: masked }));
                DarcStatus::Ok
            }
            Err(e) => fail_err(&e),
        }
    })
}

/// Number of rows (samples).
///
/// # Safety
/// `dataset` must be a live handle from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn darc_dataset_rows(
    dataset: *const DarcDataset,
    out: *mut usize,
) -> DarcStatus {
    guarded(|| {
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        if dataset.is_null() {
            return fail(DarcStatus::NullPointer, "dataset is NULL");
        }
        *out = (*dataset).inner.n();
        DarcStatus::Ok
    })
}

/// Number of columns (variables).
///
/// # Safety
/// `dataset` must be a live handle from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn darc_dataset_cols(
    dataset: *const DarcDataset,
    out: *mut usize,
) -> DarcStatus {
    guarded(|| {
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        if dataset.is_null() {
            return fail(DarcStatus::NullPointer, "dataset is NULL");
        }
        *out = (*dataset).inner.d();
        DarcStatus::Ok
    })
}

/// Number of missing cells.
///
/// # Safety
/// `dataset` must be a live handle from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn darc_dataset_masked_count(
    dataset: *const DarcDataset,
    out: *mut usize,
) -> DarcStatus {
    guarded(|| {
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        if dataset.is_null() {
            return fail(DarcStatus::NullPointer, "dataset is NULL");
        }
        *out = (*dataset).inner.masked_count();
        DarcStatus::Ok
    })
}

/// Releases a dataset handle. NULL is a no-op.
///
/// # Safety
/// `dataset` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn darc_dataset_free(dataset: *mut DarcDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Runs the full structure search on a dataset.
///
/// `config_json` is a JSON object of training settings (see the library's
/// `TrainConfig`); `"{}"` selects all defaults. Blocks until training
/// finishes.
///
/// # Safety
/// `dataset` must be a live handle; `config_json` a NUL-terminated string;
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn darc_train_run(
    dataset: *const DarcDataset,
    config_json: *const c_char,
    out: *mut *mut DarcTrainResult,
) -> DarcStatus {
    guarded(|| {
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        if dataset.is_null() {
            return fail(DarcStatus::NullPointer, "dataset is NULL");
        }
        let config = match required_str(config_json, "config_json") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let cfg: TrainConfig = match serde_json::from_str(config) {
            Ok(c) => c,
            Err(e) => {
                return fail(
                    DarcStatus::InvalidArgument,
                    &format!("invalid train config: {e}"),
                )
            }
        };
        match train(&(*dataset).inner, &cfg) {
            Ok((result, _params)) => {
                *out = Box::into_raw(Box::new(DarcTrainResult { inner: result }));
                DarcStatus::Ok
            }
            Err(e) => fail_err(&e),
        }
    })
}

/// Number of variables the result's graphs are defined over.
///
/// # Safety
/// `result` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn darc_result_dim(
    result: *const DarcTrainResult,
    out: *mut usize,
) -> DarcStatus {
    guarded(|| {
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        if result.is_null() {
            return fail(DarcStatus::NullPointer, "result is NULL");
        }
        *out = (*result).inner.column_names.len();
        DarcStatus::Ok
    })
}

/// Number of completed training epochs.
///
/// # Safety
/// `result` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn darc_result_epochs(
    result: *const DarcTrainResult,
    out: *mut usize,
) -> DarcStatus {
    guarded(|| {
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        if result.is_null() {
            return fail(DarcStatus::NullPointer, "result is NULL");
        }
        *out = (*result).inner.trace.len();
        DarcStatus::Ok
    })
}

/// Whether training ever sampled an acyclic graph (and so has a best graph).
///
/// # Safety
/// `result` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn darc_result_has_best(
    result: *const DarcTrainResult,
    out: *mut bool,
) -> DarcStatus {
    guarded(|| {
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        if result.is_null() {
            return fail(DarcStatus::NullPointer, "result is NULL");
        }
        *out = (*result).inner.best.is_some();
        DarcStatus::Ok
    })
}

unsafe fn copy_result_graph(
    result: *const DarcTrainResult,
    buf: *mut u8,
    len: usize,
    pruned: bool,
) -> DarcStatus {
    if result.is_null() {
        return fail(DarcStatus::NullPointer, "result is NULL");
    }
    if buf.is_null() {
        return fail(DarcStatus::NullPointer, "buf is NULL");
    }
    let inner = &(*result).inner;
    let graph = if pruned {
        inner.pruned.as_ref()
    } else {
        inner.best.as_ref().map(|b| &b.adjacency)
    };
    match graph {
        Some(a) => match write_adjacency_bytes(a, buf, len) {
            Ok(()) => DarcStatus::Ok,
            Err(status) => status,
        },
        None => fail(
            DarcStatus::InvalidArgument,
            "no best graph: training never sampled an acyclic graph (check darc_result_has_best)",
        ),
    }
}

/// Copies the best scoring adjacency matrix into `buf` (row-major, `d * d`).
///
/// Fails if no acyclic graph was ever sampled or `len != d * d`.
///
/// # Safety
/// `result` must be a live handle; `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn darc_result_best_adjacency(
    result: *const DarcTrainResult,
    buf: *mut u8,
    len: usize,
) -> DarcStatus {
    guarded(|| copy_result_graph(result, buf, len, false))
}

/// Copies the pruned best adjacency matrix into `buf` (row-major, `d * d`).
///
/// Fails under the same conditions as `darc_result_best_adjacency`.
///
/// # Safety
/// `result` must be a live handle; `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn darc_result_pruned_adjacency(
    result: *const DarcTrainResult,
    buf: *mut u8,
    len: usize,
) -> DarcStatus {
    guarded(|| copy_result_graph(result, buf, len, true))
}

/// Score of the best graph (lower is better). Fails if there is none.
///
/// # Safety
/// `result` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn darc_result_best_score(
    result: *const DarcTrainResult,
    out: *mut f64,
) -> DarcStatus {
    guarded(|| {
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        if result.is_null() {
            return fail(DarcStatus::NullPointer, "result is NULL");
        }
        match &(*result).inner.best {
            Some(best) => {
                *out = best.score;
                DarcStatus::Ok
            }
            None => fail(
                DarcStatus::InvalidArgument,
                "no best graph: training never sampled an acyclic graph",
            ),
        }
    })
}

/// Reward of the best graph (higher is better). Fails if there is none.
///
/// # Safety
/// `result` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn darc_result_best_reward(
    result: *const DarcTrainResult,
    out: *mut f64,
) -> DarcStatus {
    guarded(|| {
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        if result.is_null() {
            return fail(DarcStatus::NullPointer, "result is NULL");
        }
        match &(*result).inner.best {
            Some(best) => {
                *out = best.reward;
                DarcStatus::Ok
            }
            None => fail(
                DarcStatus::InvalidArgument,
                "no best graph: training never sampled an acyclic graph",
            ),
        }
    })
}

/// Releases a training-result handle. NULL is a no-op.
///
/// # Safety
/// `result` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn darc_result_free(result: *mut DarcTrainResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Compares an estimated graph against the ground truth.
///
/// Both graphs are row-major `d * d` 0/1 buffers with zero diagonals.
///
/// # Safety
/// `estimated` and `truth` must each point to `d * d` readable bytes; `out`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn darc_graph_metrics(
    estimated: *const u8,
    truth: *const u8,
    d: usize,
    out: *mut DarcGraphMetrics,
) -> DarcStatus {
    guarded(|| {
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        if estimated.is_null() {
            return fail(DarcStatus::NullPointer, "estimated is NULL");
        }
        if truth.is_null() {
            return fail(DarcStatus::NullPointer, "truth is NULL");
        }
        let est = match adjacency_from_bytes(estimated, d) {
            Ok(a) => a,
            Err(status) => return status,
        };
        let tru = match adjacency_from_bytes(truth, d) {
            Ok(a) => a,
            Err(status) => return status,
        };
        match compute_metrics(&est, &tru) {
            Ok(m) => {
                *out = DarcGraphMetrics {
                    fdr: m.fdr,
                    tpr: m.tpr,
                    shd: m.shd as u64,
                    true_positives: m.true_positives as u64,
                    false_positives: m.false_positives as u64,
                    false_negatives: m.false_negatives as u64,
                    reversed: m.reversed as u64,
                };
                DarcStatus::Ok
            }
            Err(e) => fail_err(&e),
        }
    })
}

/// Evaluates the acyclicity functional on a weighted row-major `d * d`
/// matrix. The value is 0 exactly when the graph is acyclic and grows with
/// cycle strength.
///
/// # Safety
/// `matrix` must point to `d * d` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn darc_acyclicity(
    matrix: *const f64,
    d: usize,
    out: *mut f64,
) -> DarcStatus {
    guarded(|| {
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        if matrix.is_null() {
            return fail(DarcStatus::NullPointer, "matrix is NULL");
        }
        let cells = std::slice::from_raw_parts(matrix, d * d);
        let a = DMatrix::from_row_slice(d, d, cells);
        match acyclicity_value(&a) {
            Ok(h) => {
                *out = h;
                DarcStatus::Ok
            }
            Err(e) => fail_err(&e),
        }
    })
}
