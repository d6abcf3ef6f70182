use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use serde_json::Value;
use specforge_ffi::*;

const PRODUCT_SPEC: &str = include_str!("../../core/tests/fixtures/product_spec.yml");

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut std::ffi::c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_owned();
    sf_string_free(p);
    s
}

fn last_error() -> Option<String> {
    let p = sf_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p).to_string_lossy().into_owned() })
}

#[test]
fn repair_round_trip() {
    unsafe {
        let mut out = ptr::null_mut();
        let input = c("```json\n{\"a\": [1, 2,],}\n```");
        assert_eq!(sf_repair_json(input.as_ptr(), &mut out), SfStatus::Ok);
        assert_eq!(take(out), r#"{"a": [1, 2]}"#);
        assert!(last_error().is_none());
    }
}

#[test]
fn null_arguments_are_reported() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(sf_repair_json(ptr::null(), &mut out), SfStatus::NullArgument);
        assert!(last_error().unwrap().contains("input"));
        let input = c("{}");
        assert_eq!(sf_repair_json(input.as_ptr(), ptr::null_mut()), SfStatus::NullArgument);
        assert_eq!(sf_filetree_len(ptr::null()), 0);
        sf_spec_free(ptr::null_mut());
        sf_filetree_free(ptr::null_mut());
        sf_string_free(ptr::null_mut());
    }
}

#[test]
fn invalid_utf8_is_reported() {
    unsafe {
        let bytes = [0xffu8, 0xfe, 0];
        let mut out = ptr::null_mut();
        assert_eq!(sf_repair_json(bytes.as_ptr().cast(), &mut out), SfStatus::InvalidUtf8);
    }
}

#[test]
fn spec_parse_validate_and_operations() {
    unsafe {
        let mut spec = ptr::null_mut();
        let text = c(PRODUCT_SPEC);
        assert_eq!(sf_spec_parse(text.as_ptr(), &mut spec), SfStatus::Ok);
        let (mut findings, mut errors) = (ptr::null_mut(), usize::MAX);
        assert_eq!(sf_spec_validate(spec, &mut findings, &mut errors), SfStatus::Ok);
        let findings: Value = serde_json::from_str(&take(findings)).unwrap();
        assert!(findings.is_array());
        assert_eq!(errors, 0);
        let mut ops = ptr::null_mut();
        assert_eq!(sf_spec_operations(spec, &mut ops), SfStatus::Ok);
        let ops: Value = serde_json::from_str(&take(ops)).unwrap();
        let methods: Vec<&str> = ops.as_array().unwrap().iter().map(|o| o["method"].as_str().unwrap()).collect();
        assert_eq!(methods, ["POST", "GET", "PUT", "DELETE"]);
        sf_spec_free(spec);
    }
}

#[test]
fn spec_parse_failure_sets_error() {
    unsafe {
        let mut spec = ptr::null_mut();
        let text = c("openapi: [unclosed");
        assert_eq!(sf_spec_parse(text.as_ptr(), &mut spec), SfStatus::ParseFailed);
        assert!(spec.is_null());
        let err: Value = serde_json::from_str(&last_error().unwrap()).unwrap();
        assert!(!err.as_array().unwrap().is_empty());
    }
}

#[test]
fn filetree_parse_and_materialize() {
    unsafe {
        let mut tree = ptr::null_mut();
        let json = c(r#"{"a.txt": "one", "dir/b.txt": "two"}"#);
        assert_eq!(sf_filetree_parse(json.as_ptr(), &mut tree), SfStatus::Ok);
        assert_eq!(sf_filetree_len(tree), 2);
        let dir = tempfile::tempdir().unwrap();
        let root = c(dir.path().to_str().unwrap());
        let mut written = 0u64;
        assert_eq!(sf_filetree_materialize(tree, root.as_ptr(), &mut written), SfStatus::Ok);
        assert_eq!(written, 6);
        assert_eq!(sf_filetree_materialize(tree, root.as_ptr(), &mut written), SfStatus::Ok);
        assert_eq!(written, 0);
        assert_eq!(std::fs::read_to_string(dir.path().join("dir/b.txt")).unwrap(), "two");
        sf_filetree_free(tree);
    }
}

#[test]
fn unsafe_tree_paths_are_rejected() {
    unsafe {
        for bad in [r#"{"../x": "1"}"#, r#"{"/etc/x": "1"}"#, r#"{"a//b": "1"}"#, r#"["not", "object"]"#] {
            let mut tree = ptr::null_mut();
            let json = c(bad);
            assert_eq!(sf_filetree_parse(json.as_ptr(), &mut tree), SfStatus::InvalidTree, "{bad}");
            assert!(tree.is_null());
            assert!(last_error().is_some());
        }
    }
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(sf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/specforge.h")).unwrap();
    for name in [
        "sf_repair_json",
        "sf_spec_parse",
        "sf_spec_validate",
        "sf_spec_operations",
        "sf_spec_free",
        "sf_filetree_parse",
        "sf_filetree_len",
        "sf_filetree_materialize",
        "sf_filetree_free",
        "sf_string_free",
        "sf_last_error",
        "sf_version",
        "SF_STATUS_INVALID_TREE",
    ] {
        assert!(header.contains(name), "{name}");
    }
}

/// Directory holding the built libraries (target/<profile>).
fn lib_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_static_library() {
    let lib = lib_dir().join("libspecforge_ffi.a");
    assert!(lib.is_file(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "specforge.h"
int main(void) {
    char *out = NULL;
    if (sf_repair_json("{\"a\": 1,}", &out) != SF_STATUS_OK) return 1;
    if (strcmp(out, "{\"a\": 1}") != 0) return 2;
    sf_string_free(out);
    SfFileTree *tree = NULL;
    if (sf_filetree_parse("{\"../x\": \"1\"}", &tree) != SF_STATUS_INVALID_TREE) return 3;
    if (sf_last_error() == NULL || tree != NULL) return 4;
    printf("%s\n", sf_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("cc available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
