//! C ABI for the spec and file-tree utilities.
//!
//! Every fallible function returns an [`SfStatus`]. On failure a message is
//! kept per thread and can be read with [`sf_last_error`] until the next
//! call on that thread. Strings returned through out-pointers are owned by
//! the caller and released with [`sf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use serde_json::json;
use specforge::codetree::{materialize, parse_filetree, repair_json, FileTree};
use specforge::spec_engine::{list_crud_operations, parse_spec, validate_spec, SpecDocument};
use specforge::{Finding, Severity};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseFailed = 3,
    InvalidTree = 4,
    Io = 5,
    Panic = 6,
}

/// Parsed OpenAPI document.
pub struct SfSpec(SpecDocument);

/// Parsed file tree (relative path to contents).
pub struct SfFileTree(FileTree);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', "\\0");
    let c = CString::new(text).expect("NUL bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: SfStatus, message: impl Into<String>) -> SfStatus {
    set_error(message);
    status
}

/// Run `f`, turning panics into [`SfStatus::Panic`].
fn guard(f: impl FnOnce() -> SfStatus) -> SfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SfStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, SfStatus> {
    if p.is_null() {
        return Err(fail(SfStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(SfStatus::InvalidUtf8, format!("{name} is not UTF-8: {e}")))
}

fn to_c(s: String) -> Result<*mut c_char, SfStatus> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(SfStatus::InvalidUtf8, "result contains a NUL byte"))
}

fn findings_json(findings: &[Finding]) -> String {
    serde_json::to_string(findings).expect("findings serialize")
}

/// Repair malformed model JSON. `*out` receives the repaired text, which is
/// strict JSON when the repair succeeded; callers should still parse it.
///
/// # Safety
/// `input` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_repair_json(input: *const c_char, out: *mut *mut c_char) -> SfStatus {
    guard(|| {
        if out.is_null() {
            return fail(SfStatus::NullArgument, "out is null");
        }
        let text = match read_str(input, "input") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let (repaired, _) = repair_json(text);
        match to_c(repaired) {
            Ok(p) => {
                *out = p;
                SfStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Parse an OpenAPI YAML or JSON document.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_spec_parse(text: *const c_char, out: *mut *mut SfSpec) -> SfStatus {
    guard(|| {
        if out.is_null() {
            return fail(SfStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let text = match read_str(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_spec(text) {
            Ok(doc) => {
                *out = Box::into_raw(Box::new(SfSpec(doc)));
                SfStatus::Ok
            }
            Err(e) => fail(SfStatus::ParseFailed, findings_json(&e.findings)),
        }
    })
}

/// Structural validation. `*findings_out` receives a JSON array of
/// `{severity, location, message}`; `*error_count` the number of errors.
///
/// # Safety
/// `spec` must come from [`sf_spec_parse`]; out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sf_spec_validate(
    spec: *const SfSpec,
    findings_out: *mut *mut c_char,
    error_count: *mut usize,
) -> SfStatus {
    guard(|| {
        if spec.is_null() || findings_out.is_null() || error_count.is_null() {
            return fail(SfStatus::NullArgument, "null argument");
        }
        let findings = validate_spec(&(*spec).0);
        *error_count = findings.iter().filter(|f| f.severity == Severity::Error).count();
        match to_c(findings_json(&findings)) {
            Ok(p) => {
                *findings_out = p;
                SfStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// JSON array of `{method, path}` in CRUD order.
///
/// # Safety
/// `spec` must come from [`sf_spec_parse`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sf_spec_operations(spec: *const SfSpec, out: *mut *mut c_char) -> SfStatus {
    guard(|| {
        if spec.is_null() || out.is_null() {
            return fail(SfStatus::NullArgument, "null argument");
        }
        let ops: Vec<_> = list_crud_operations(&(*spec).0)
            .iter()
            .map(|o| json!({"method": o.method.as_str(), "path": o.path}))
            .collect();
        match to_c(serde_json::Value::Array(ops).to_string()) {
            Ok(p) => {
                *out = p;
                SfStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// # Safety
/// `spec` must come from [`sf_spec_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sf_spec_free(spec: *mut SfSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Parse strict file-tree JSON, enforcing the path rules.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_filetree_parse(json: *const c_char, out: *mut *mut SfFileTree) -> SfStatus {
    guard(|| {
        if out.is_null() {
            return fail(SfStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let text = match read_str(json, "json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_filetree(text) {
            Ok(tree) => {
                *out = Box::into_raw(Box::new(SfFileTree(tree)));
                SfStatus::Ok
            }
            Err(e) => fail(SfStatus::InvalidTree, e.to_string()),
        }
    })
}

/// Number of files; 0 for a null handle.
///
/// # Safety
/// `tree` must be null or come from [`sf_filetree_parse`].
#[no_mangle]
pub unsafe extern "C" fn sf_filetree_len(tree: *const SfFileTree) -> usize {
    if tree.is_null() {
        0
    } else {
        (*tree).0.len()
    }
}

/// Write the tree under the existing directory `root`. `*bytes_written`
/// receives the bytes written; identical files are skipped.
///
/// # Safety
/// `tree` must come from [`sf_filetree_parse`]; `root` must be a
/// NUL-terminated string; `bytes_written` may be null.
#[no_mangle]
pub unsafe extern "C" fn sf_filetree_materialize(
    tree: *const SfFileTree,
    root: *const c_char,
    bytes_written: *mut u64,
) -> SfStatus {
    guard(|| {
        if tree.is_null() {
            return fail(SfStatus::NullArgument, "tree is null");
        }
        let root = match read_str(root, "root") {
            Ok(r) => r,
            Err(s) => return s,
        };
        match materialize(&(*tree).0, Path::new(root)) {
            Ok(report) => {
                if !bytes_written.is_null() {
                    *bytes_written = report.bytes_written;
                }
                SfStatus::Ok
            }
            Err(e) => fail(SfStatus::Io, e.to_string()),
        }
    })
}

/// # Safety
/// `tree` must come from [`sf_filetree_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sf_filetree_free(tree: *mut SfFileTree) {
    if !tree.is_null() {
        drop(Box::from_raw(tree));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn sf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failure on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn sf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, static.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
