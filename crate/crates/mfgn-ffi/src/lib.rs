//! C ABI over the mfgn engine.
//!
//! Every function returns an [`MfgnStatus`] and passes results through out
//! parameters. Models and posteriors are opaque handles released with
//! their matching `*_free`; returned strings are NUL-terminated UTF-8
//! released with [`mfgn_string_free`]. After any non-OK status,
//! [`mfgn_last_error_message`] returns a description of the failure on the
//! calling thread (valid until the next failing call on that thread).
//! Panics never unwind across the boundary; they surface as
//! `MFGN_STATUS_INTERNAL`.
//!
//! The C header is generated into `include/mfgn.h` at build time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use mfgn::dataset::{ingest, load_schema};
use mfgn::evidence::{expand, parse_query};
use mfgn::inference::{posterior, Estimate, Posterior};
use mfgn::learning::{em_fit, EmConfig};
use mfgn::model::MfgnModel;
use mfgn::Error;

/// Result of every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfgnStatus {
    /// Success.
    Ok = 0,
    /// A required pointer was null or an argument was out of range.
    InvalidArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Malformed model text, dataset, schema, or query.
    InvalidData = 3,
    /// Learning failed or the training table is degenerate.
    FitFailure = 4,
    /// The evidence has zero probability under the model.
    ZeroEvidence = 5,
    /// The request is not supported in closed form.
    Unsupported = 6,
    /// An internal invariant failed (a bug; never data-dependent by design).
    Internal = 7,
}

/// Opaque handle to a mixture model.
pub struct MfgnModelHandle {
    inner: MfgnModel,
}

/// Opaque handle to a posterior over target attributes.
pub struct MfgnPosteriorHandle {
    inner: Posterior,
    targets: Vec<usize>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> =
        RefCell::new(CString::new("").expect("empty string has no NUL"));
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("NUL bytes replaced");
    });
}

fn status_of(e: &Error) -> MfgnStatus {
    match e {
        Error::ZeroEvidence(_) => MfgnStatus::ZeroEvidence,
        Error::FitFailure(_) | Error::DegenerateTable(_) => MfgnStatus::FitFailure,
        Error::Unsupported(_)
        | Error::UnsupportedEstimator(_)
        | Error::UnsupportedConjunction(_) => MfgnStatus::Unsupported,
        _ => MfgnStatus::InvalidData,
    }
}

fn fail(status: MfgnStatus, msg: &str) -> MfgnStatus {
    set_error(msg);
    status
}

fn fail_with(e: &Error) -> MfgnStatus {
    fail(status_of(e), &e.to_string())
}

/// Runs `f` with panics caught and converted to `Internal`.
fn guarded<F: FnOnce() -> MfgnStatus>(f: F) -> MfgnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(MfgnStatus::Internal, "internal panic"),
    }
}

/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, MfgnStatus> {
    if ptr.is_null() {
        return Err(fail(MfgnStatus::InvalidArgument, &format!("`{name}` is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(MfgnStatus::InvalidUtf8, &format!("`{name}` is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, MfgnStatus> {
    if ptr.is_null() {
        return Err(fail(MfgnStatus::InvalidArgument, &format!("`{name}` is null")));
    }
    Ok(&mut *ptr)
}

unsafe fn handle_arg<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, MfgnStatus> {
    if ptr.is_null() {
        return Err(fail(MfgnStatus::InvalidArgument, &format!("`{name}` is null")));
    }
    Ok(&*ptr)
}

/// Message describing the most recent failure on the calling thread. Never
/// null; empty before the first failure. The pointer is invalidated by the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mfgn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parses the `mfgn-model v1` text format into a model handle.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out_model` must be a valid
/// pointer. On success `*out_model` owns the model.
#[no_mangle]
pub unsafe extern "C" fn mfgn_model_parse(
    text: *const c_char,
    out_model: *mut *mut MfgnModelHandle,
) -> MfgnStatus {
    guarded(|| {
        let (text, out) = match (utf8_arg(text, "text"), out_arg(out_model, "out_model")) {
            (Ok(t), Ok(o)) => (t, o),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match MfgnModel::load(text) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(MfgnModelHandle { inner: model }));
                MfgnStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Renders a model back to the `mfgn-model v1` text format. The returned
/// string is released with [`mfgn_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out_text` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfgn_model_render(
    model: *const MfgnModelHandle,
    out_text: *mut *mut c_char,
) -> MfgnStatus {
    guarded(|| {
        let (model, out) = match (handle_arg(model, "model"), out_arg(out_text, "out_text")) {
            (Ok(m), Ok(o)) => (m, o),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let text = model.inner.save().replace('\0', " ");
        *out = CString::new(text).expect("NUL bytes replaced").into_raw();
        MfgnStatus::Ok
    })
}

/// Fits a mixture to a dataset. `data` is the dataset text (header plus
/// rows, uncertain-cell grammar) and `schema` the sidecar text; the fit is
/// deterministic given `seed`.
///
/// # Safety
/// `data` and `schema` must be NUL-terminated strings; `out_model` must be
/// a valid pointer. On success `*out_model` owns the model.
#[no_mangle]
pub unsafe extern "C" fn mfgn_model_train(
    data: *const c_char,
    schema: *const c_char,
    components: usize,
    seed: u64,
    out_model: *mut *mut MfgnModelHandle,
) -> MfgnStatus {
    guarded(|| {
        let (data, schema, out) = match (
            utf8_arg(data, "data"),
            utf8_arg(schema, "schema"),
            out_arg(out_model, "out_model"),
        ) {
            (Ok(d), Ok(s), Ok(o)) => (d, s, o),
            (Err(s), ..) | (_, Err(s), _) | (.., Err(s)) => return s,
        };
        if components == 0 {
            return fail(MfgnStatus::InvalidArgument, "`components` must be at least 1");
        }
        let result = load_schema(schema)
            .and_then(|schema| ingest(data, &schema))
            .and_then(|table| em_fit(&table, &EmConfig::new(components, seed)));
        match result {
            Ok((model, _report)) => {
                *out = Box::into_raw(Box::new(MfgnModelHandle { inner: model }));
                MfgnStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Number of attributes in the model's schema.
///
/// # Safety
/// `model` must be a live handle; `out_count` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfgn_model_attribute_count(
    model: *const MfgnModelHandle,
    out_count: *mut usize,
) -> MfgnStatus {
    guarded(|| {
        let (model, out) = match (handle_arg(model, "model"), out_arg(out_count, "out_count")) {
            (Ok(m), Ok(o)) => (m, o),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        *out = model.inner.schema().len();
        MfgnStatus::Ok
    })
}

/// Number of mixture components.
///
/// # Safety
/// `model` must be a live handle; `out_count` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfgn_model_component_count(
    model: *const MfgnModelHandle,
    out_count: *mut usize,
) -> MfgnStatus {
    guarded(|| {
        let (model, out) = match (handle_arg(model, "model"), out_arg(out_count, "out_count")) {
            (Ok(m), Ok(o)) => (m, o),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        *out = model.inner.component_count();
        MfgnStatus::Ok
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfgn_model_free(model: *mut MfgnModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Conditions a model on a query and prepares posteriors for the target
/// attributes. `targets` is a comma-separated attribute list; pass null to
/// target every attribute the query leaves unobserved.
///
/// # Safety
/// `model` must be a live handle, `query` a NUL-terminated string,
/// `targets` null or a NUL-terminated string, and `out_posterior` a valid
/// pointer. On success `*out_posterior` owns the posterior.
#[no_mangle]
pub unsafe extern "C" fn mfgn_posterior_new(
    model: *const MfgnModelHandle,
    query: *const c_char,
    targets: *const c_char,
    out_posterior: *mut *mut MfgnPosteriorHandle,
) -> MfgnStatus {
    guarded(|| {
        let (model, query, out) = match (
            handle_arg(model, "model"),
            utf8_arg(query, "query"),
            out_arg(out_posterior, "out_posterior"),
        ) {
            (Ok(m), Ok(q), Ok(o)) => (m, q, o),
            (Err(s), ..) | (_, Err(s), _) | (.., Err(s)) => return s,
        };
        let schema = model.inner.schema();
        let evidence = match parse_query(query, schema).and_then(|e| expand(&e, schema)) {
            Ok(e) => e,
            Err(e) => return fail_with(&e),
        };
        let target_list: Vec<usize> = if targets.is_null() {
            let observed = evidence.observed_attributes();
            (0..schema.len()).filter(|j| !observed.contains(j)).collect()
        } else {
            let list = match utf8_arg(targets, "targets") {
                Ok(l) => l,
                Err(s) => return s,
            };
            let names: Vec<&str> =
                list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            let mut resolved = Vec::with_capacity(names.len());
            for name in names {
                match schema.index_of(name) {
                    Ok(j) => resolved.push(j),
                    Err(e) => return fail_with(&e),
                }
            }
            resolved
        };
        if target_list.is_empty() {
            return fail(
                MfgnStatus::InvalidArgument,
                "no target attributes: the query observes everything",
            );
        }
        match posterior(&model.inner, &evidence, &target_list) {
            Ok(post) => {
                *out = Box::into_raw(Box::new(MfgnPosteriorHandle {
                    inner: post,
                    targets: target_list,
                }));
                MfgnStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Number of target attributes held by a posterior.
///
/// # Safety
/// `posterior` must be a live handle; `out_count` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfgn_posterior_target_count(
    posterior: *const MfgnPosteriorHandle,
    out_count: *mut usize,
) -> MfgnStatus {
    guarded(|| {
        let (post, out) =
            match (handle_arg(posterior, "posterior"), out_arg(out_count, "out_count")) {
                (Ok(p), Ok(o)) => (p, o),
                (Err(s), _) | (_, Err(s)) => return s,
            };
        *out = post.targets.len();
        MfgnStatus::Ok
    })
}

/// Natural log of the total evidence probability.
///
/// # Safety
/// `posterior` must be a live handle; `out_value` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfgn_posterior_log_evidence(
    posterior: *const MfgnPosteriorHandle,
    out_value: *mut f64,
) -> MfgnStatus {
    guarded(|| {
        let (post, out) =
            match (handle_arg(posterior, "posterior"), out_arg(out_value, "out_value")) {
                (Ok(p), Ok(o)) => (p, o),
                (Err(s), _) | (_, Err(s)) => return s,
            };
        *out = post.inner.log_evidence();
        MfgnStatus::Ok
    })
}

fn find_target(post: &MfgnPosteriorHandle, attr: &str) -> Result<usize, MfgnStatus> {
    let schema = post.inner.schema();
    let j = schema.index_of(attr).map_err(|e| fail_with(&e))?;
    if !post.targets.contains(&j) {
        return Err(fail(
            MfgnStatus::InvalidArgument,
            &format!("attribute `{attr}` is not a target of this posterior"),
        ));
    }
    Ok(j)
}

/// Posterior mean and standard deviation of a continuous target.
///
/// # Safety
/// `posterior` must be a live handle, `attr` a NUL-terminated string, and
/// `out_mean`/`out_std` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mfgn_posterior_mean_std(
    posterior: *const MfgnPosteriorHandle,
    attr: *const c_char,
    out_mean: *mut f64,
    out_std: *mut f64,
) -> MfgnStatus {
    guarded(|| {
        let (post, attr, out_mean, out_std) = match (
            handle_arg(posterior, "posterior"),
            utf8_arg(attr, "attr"),
            out_arg(out_mean, "out_mean"),
            out_arg(out_std, "out_std"),
        ) {
            (Ok(p), Ok(a), Ok(m), Ok(s)) => (p, a, m, s),
            (Err(s), ..) | (_, Err(s), ..) | (_, _, Err(s), _) | (.., Err(s)) => return s,
        };
        let j = match find_target(post, attr) {
            Ok(j) => j,
            Err(s) => return s,
        };
        match post.inner.estimate(j, None) {
            Ok(Estimate::Continuous { mean, std }) => {
                *out_mean = mean;
                *out_std = std;
                MfgnStatus::Ok
            }
            Ok(Estimate::Symbolic { .. }) => fail(
                MfgnStatus::InvalidArgument,
                &format!("attribute `{attr}` is symbolic; use mfgn_posterior_category_probs"),
            ),
            Err(e) => fail_with(&e),
        }
    })
}

/// Posterior category distribution of a symbolic target. Writes the
/// probabilities (in schema label order) into `out_probs` and the category
/// count into `out_count`; `capacity` must be at least that count.
///
/// # Safety
/// `posterior` must be a live handle, `attr` a NUL-terminated string,
/// `out_probs` an array of at least `capacity` doubles, and `out_count` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfgn_posterior_category_probs(
    posterior: *const MfgnPosteriorHandle,
    attr: *const c_char,
    out_probs: *mut f64,
    capacity: usize,
    out_count: *mut usize,
) -> MfgnStatus {
    guarded(|| {
        let (post, attr, out_count) = match (
            handle_arg(posterior, "posterior"),
            utf8_arg(attr, "attr"),
            out_arg(out_count, "out_count"),
        ) {
            (Ok(p), Ok(a), Ok(c)) => (p, a, c),
            (Err(s), ..) | (_, Err(s), _) | (.., Err(s)) => return s,
        };
        let j = match find_target(post, attr) {
            Ok(j) => j,
            Err(s) => return s,
        };
        match post.inner.estimate(j, None) {
            Ok(Estimate::Symbolic { q, .. }) => {
                *out_count = q.len();
                if capacity < q.len() {
                    return fail(
                        MfgnStatus::InvalidArgument,
                        &format!("capacity {capacity} is below the category count {}", q.len()),
                    );
                }
                if out_probs.is_null() {
                    return fail(MfgnStatus::InvalidArgument, "`out_probs` is null");
                }
                std::ptr::copy_nonoverlapping(q.as_ptr(), out_probs, q.len());
                MfgnStatus::Ok
            }
            Ok(Estimate::Continuous { .. }) => fail(
                MfgnStatus::InvalidArgument,
                &format!("attribute `{attr}` is continuous; use mfgn_posterior_mean_std"),
            ),
            Err(e) => fail_with(&e),
        }
    })
}

/// Index (in schema label order) of the most probable category of a
/// symbolic target.
///
/// # Safety
/// `posterior` must be a live handle, `attr` a NUL-terminated string, and
/// `out_index` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfgn_posterior_map_category(
    posterior: *const MfgnPosteriorHandle,
    attr: *const c_char,
    out_index: *mut usize,
) -> MfgnStatus {
    guarded(|| {
        let (post, attr, out) = match (
            handle_arg(posterior, "posterior"),
            utf8_arg(attr, "attr"),
            out_arg(out_index, "out_index"),
        ) {
            (Ok(p), Ok(a), Ok(o)) => (p, a, o),
            (Err(s), ..) | (_, Err(s), _) | (.., Err(s)) => return s,
        };
        let j = match find_target(post, attr) {
            Ok(j) => j,
            Err(s) => return s,
        };
        match post.inner.estimate(j, None) {
            Ok(Estimate::Symbolic { ep, .. }) => {
                *out = ep;
                MfgnStatus::Ok
            }
            Ok(Estimate::Continuous { .. }) => fail(
                MfgnStatus::InvalidArgument,
                &format!("attribute `{attr}` is continuous; use mfgn_posterior_mean_std"),
            ),
            Err(e) => fail_with(&e),
        }
    })
}

/// Posterior density of a continuous target at `x`.
///
/// # Safety
/// `posterior` must be a live handle, `attr` a NUL-terminated string, and
/// `out_value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfgn_posterior_pdf(
    posterior: *const MfgnPosteriorHandle,
    attr: *const c_char,
    x: f64,
    out_value: *mut f64,
) -> MfgnStatus {
    guarded(|| {
        let (post, attr, out) = match (
            handle_arg(posterior, "posterior"),
            utf8_arg(attr, "attr"),
            out_arg(out_value, "out_value"),
        ) {
            (Ok(p), Ok(a), Ok(o)) => (p, a, o),
            (Err(s), ..) | (_, Err(s), _) | (.., Err(s)) => return s,
        };
        let j = match find_target(post, attr) {
            Ok(j) => j,
            Err(s) => return s,
        };
        match post.inner.pdf(j, &mfgn::model::Value::Continuous(x)) {
            Ok(p) => {
                *out = p;
                MfgnStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Releases a posterior handle. Null is ignored.
///
/// # Safety
/// `posterior` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfgn_posterior_free(posterior: *mut MfgnPosteriorHandle) {
    if !posterior.is_null() {
        drop(Box::from_raw(posterior));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `text` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfgn_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}
