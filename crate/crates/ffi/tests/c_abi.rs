use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use msnet::image::Map;
use msnet::metrics::evaluate_pair;
use msnet::model::{Model, ModelConfig};
use msnet::tensor::Tensor;
use msnet_ffi::*;

fn new_model(depth: usize, add: bool) -> *mut MsnetModel {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { msnet_model_new(32, 4, depth, add, true, 7, &mut h) }, MsnetStatus::Ok);
    h
}

fn image(side: usize) -> Vec<f64> {
    (0..3 * side * side).map(|i| ((i * 37) % 101) as f64 / 100.0).collect()
}

#[test]
fn predict_matches_core_and_survives_checkpoint() {
    let h = new_model(3, false);
    let x = image(32);
    let mut a = vec![0.0; 32 * 32];
    assert_eq!(unsafe { msnet_model_predict(h, x.as_ptr(), x.len(), a.as_mut_ptr(), a.len()) }, MsnetStatus::Ok);

    let core = Model::new(ModelConfig { input_size: 32, channels: 4, depth: 3, seed: 7, ..Default::default() }).unwrap();
    let expect = core.predict(&Tensor::new(&[1, 3, 32, 32], x.clone()).unwrap()).unwrap();
    assert_eq!(a.as_slice(), expect.data());

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { msnet_model_save(h, path.as_ptr()) }, MsnetStatus::Ok);
    let mut h2 = ptr::null_mut();
    assert_eq!(unsafe { msnet_model_load(path.as_ptr(), &mut h2) }, MsnetStatus::Ok);
    let mut b = vec![0.0; 32 * 32];
    assert_eq!(unsafe { msnet_model_predict(h2, x.as_ptr(), x.len(), b.as_mut_ptr(), b.len()) }, MsnetStatus::Ok);
    assert_eq!(a, b);
    unsafe {
        assert_eq!(msnet_model_input_size(h2), 32);
        assert_eq!(msnet_model_param_count(h2), core.param_count());
        msnet_model_free(h);
        msnet_model_free(h2);
    }
}

#[test]
fn shape_errors_are_reported() {
    let h = new_model(2, false);
    let x = image(16);
    let mut out = vec![0.0; 32 * 32];
    let st = unsafe { msnet_model_predict(h, x.as_ptr(), x.len(), out.as_mut_ptr(), out.len()) };
    assert_eq!(st, MsnetStatus::Shape);
    let msg = unsafe { CStr::from_ptr(msnet_last_error()) }.to_string_lossy().into_owned();
    assert!(msg.contains("3x32x32"), "{msg}");
    unsafe { msnet_model_free(h) };
}

#[test]
fn missing_checkpoint_is_io_error() {
    let path = CString::new("/nonexistent/m.ckpt").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { msnet_model_load(path.as_ptr(), &mut h) }, MsnetStatus::Io);
    assert!(h.is_null());
}

#[test]
fn add_and_subtract_have_equal_parameter_counts() {
    let (s, a) = (new_model(5, false), new_model(5, true));
    unsafe {
        assert_eq!(msnet_model_param_count(s), msnet_model_param_count(a));
        msnet_model_free(s);
        msnet_model_free(a);
    }
}

#[test]
fn evaluate_matches_core() {
    let gt: Vec<f64> = (0..64).map(|i| if (i % 8) > 2 && (i / 8) < 5 { 1.0 } else { 0.0 }).collect();
    let pred: Vec<f64> = (0..64).map(|i| ((i * 13) % 17) as f64 / 16.0).collect();
    let mut s = MsnetScores::default();
    assert_eq!(unsafe { msnet_evaluate(pred.as_ptr(), gt.as_ptr(), 8, 8, 0.5, &mut s) }, MsnetStatus::Ok);
    let e = evaluate_pair(&Map::new(8, 8, pred.clone()).unwrap(), &Map::new(8, 8, gt.clone()).unwrap(), 0.5).unwrap();
    assert_eq!([s.dice, s.iou, s.weighted_fmeasure, s.s_measure, s.e_measure, s.mae], e.values());

    let st = unsafe { msnet_evaluate(pred.as_ptr(), gt.as_ptr(), 8, 8, 1.5, &mut s) };
    assert_eq!(st, MsnetStatus::Metric);
    let nonbinary = vec![0.5; 64];
    let st = unsafe { msnet_evaluate(pred.as_ptr(), nonbinary.as_ptr(), 8, 8, 0.5, &mut s) };
    assert_eq!(st, MsnetStatus::Metric);
}

/// Test binaries and the freshly built cdylib share `target/<profile>/deps`.
fn lib_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header_and_library() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "msnet.h"
int main(void) {
    MsnetModel *m = NULL;
    if (msnet_model_new(48, 4, 5, false, true, 0, &m) != MSNET_STATUS_INVALID_ARGUMENT) return 1;
    if (msnet_last_error() == NULL) return 2;
    if (msnet_model_new(32, 4, 2, true, false, 0, &m) != MSNET_STATUS_OK) return 3;
    double img[3 * 32 * 32] = {0};
    double out[32 * 32];
    if (msnet_model_predict(m, img, 3 * 32 * 32, out, 32 * 32) != MSNET_STATUS_OK) return 4;
    for (int i = 0; i < 32 * 32; i++) if (!(out[i] >= 0.0 && out[i] <= 1.0)) return 5;
    double gt[4] = {0, 1, 1, 0};
    MsnetScores s;
    if (msnet_evaluate(gt, gt, 2, 2, 0.5, &s) != MSNET_STATUS_OK || s.dice != 1.0 || s.mae != 0.0) return 6;
    printf("%zu %s\n", msnet_model_param_count(m), msnet_version());
    msnet_model_free(m);
    return 0;
}
"#,
    )
    .unwrap();
    let lib_dir = lib_dir();
    assert!(lib_dir.join("libmsnet_ffi.so").exists() || lib_dir.join("libmsnet_ffi.dylib").exists(), "cdylib missing in {}", lib_dir.display());
    let bin = dir.path().join("probe");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib_dir)
        .args(["-lmsnet_ffi", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&bin).env("LD_LIBRARY_PATH", &lib_dir).env("DYLD_LIBRARY_PATH", &lib_dir).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.trim().ends_with(env!("CARGO_PKG_VERSION")), "{text}");
}
