use std::ffi::{CStr, CString};
use std::ptr;

use dnnlab_ffi::*;

fn init(sizes: &[usize], seed: u64) -> *mut DnnNetwork {
    let mut net = ptr::null_mut();
    let st = unsafe { dnn_network_init(sizes.as_ptr(), sizes.len(), seed, 0.5, &mut net) };
    assert_eq!(st, DnnStatus::Ok);
    assert!(!net.is_null());
    net
}

fn last_error() -> Option<String> {
    let p = dnn_last_error_message();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

#[test]
fn dims_and_posteriors() {
    let net = init(&[4, 6, 5, 3], 7);
    let (mut d, mut k, mut h) = (0, 0, 0);
    assert_eq!(unsafe { dnn_network_dims(net, &mut d, &mut k, &mut h) }, DnnStatus::Ok);
    assert_eq!((d, k, h), (4, 3, 2));

    let x = [0.1, -0.4, 0.3, 0.9];
    let mut p = [0.0; 3];
    assert_eq!(unsafe { dnn_network_posteriors(net, x.as_ptr(), 4, p.as_mut_ptr(), 3) }, DnnStatus::Ok);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let mut c = usize::MAX;
    assert_eq!(unsafe { dnn_network_predict(net, x.as_ptr(), 4, &mut c) }, DnnStatus::Ok);
    let best = (0..3).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
    assert_eq!(c, best);
    unsafe { dnn_network_free(net) };
}

#[test]
fn shape_errors_set_message() {
    let net = init(&[4, 6, 3], 1);
    let x = [0.0; 5];
    let mut p = [0.0; 3];
    let st = unsafe { dnn_network_posteriors(net, x.as_ptr(), 5, p.as_mut_ptr(), 3) };
    assert_eq!(st, DnnStatus::Shape);
    assert!(last_error().is_some());

    let st = unsafe { dnn_network_posteriors(net, x.as_ptr(), 4, p.as_mut_ptr(), 2) };
    assert_eq!(st, DnnStatus::Shape);

    // a success clears the message
    let (mut d, mut k, mut h) = (0, 0, 0);
    unsafe { dnn_network_dims(net, &mut d, &mut k, &mut h) };
    assert!(last_error().is_none());
    unsafe { dnn_network_free(net) };
}

#[test]
fn null_pointers_are_rejected() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { dnn_network_init(ptr::null(), 3, 0, 0.1, &mut out) }, DnnStatus::NullPointer);
    assert_eq!(unsafe { dnn_network_from_json(ptr::null(), &mut out) }, DnnStatus::NullPointer);
    let mut c = 0;
    assert_eq!(unsafe { dnn_network_predict(ptr::null(), [0.0].as_ptr(), 1, &mut c) }, DnnStatus::NullPointer);
    let mut v = 0.0;
    assert_eq!(unsafe { dnn_kl_divergence(ptr::null(), ptr::null(), 2, &mut v) }, DnnStatus::NullPointer);
    unsafe {
        dnn_network_free(ptr::null_mut());
        dnn_transform_free(ptr::null_mut());
        dnn_string_free(ptr::null_mut());
    }
}

#[test]
fn json_and_file_round_trip() {
    let net = init(&[3, 4, 2], 11);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { dnn_network_to_json(net, &mut s) }, DnnStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { dnn_network_from_json(s, &mut back) }, DnnStatus::Ok);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { dnn_network_save(back, path.as_ptr()) }, DnnStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { dnn_network_load(path.as_ptr(), &mut loaded) }, DnnStatus::Ok);
    let mut s2 = ptr::null_mut();
    assert_eq!(unsafe { dnn_network_to_json(loaded, &mut s2) }, DnnStatus::Ok);
    unsafe {
        assert_eq!(CStr::from_ptr(s), CStr::from_ptr(s2));
        dnn_string_free(s);
        dnn_string_free(s2);
        dnn_network_free(net);
        dnn_network_free(back);
        dnn_network_free(loaded);
    }
}

#[test]
fn load_errors_map_to_status() {
    let mut out = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(unsafe { dnn_network_load(missing.as_ptr(), &mut out) }, DnnStatus::MissingFile);
    let bad = CString::new("{not json").unwrap();
    assert_eq!(unsafe { dnn_network_from_json(bad.as_ptr(), &mut out) }, DnnStatus::Parse);
    assert!(out.is_null());
}

#[test]
fn spectral_norm_and_kl() {
    // diag(3, 2) rotated is still norm 3
    let m = [0.0, 3.0, 2.0, 0.0];
    let mut v = 0.0;
    assert_eq!(unsafe { dnn_spectral_norm(m.as_ptr(), 2, 2, &mut v) }, DnnStatus::Ok);
    assert!((v - 3.0).abs() < 1e-8);

    let p = [0.5, 0.5];
    let q = [0.25, 0.75];
    assert_eq!(unsafe { dnn_kl_divergence(p.as_ptr(), q.as_ptr(), 2, &mut v) }, DnnStatus::Ok);
    let want = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
    assert!((v - want).abs() < 1e-12);
}

#[test]
fn gain_norms_per_layer() {
    let net = init(&[3, 5, 4, 2], 3);
    let frames = [0.1, 0.2, 0.3, -1.0, 0.5, 0.0];
    let (mut mean, mut max) = ([0.0; 2], [0.0; 2]);
    let st = unsafe { dnn_network_gain_norms(net, frames.as_ptr(), 2, 3, mean.as_mut_ptr(), max.as_mut_ptr(), 2) };
    assert_eq!(st, DnnStatus::Ok);
    for l in 0..2 {
        assert!(mean[l] > 0.0 && mean[l] <= max[l] + 1e-15);
    }
    let st = unsafe { dnn_network_gain_norms(net, frames.as_ptr(), 2, 3, mean.as_mut_ptr(), max.as_mut_ptr(), 3) };
    assert_eq!(st, DnnStatus::Shape);
    unsafe { dnn_network_free(net) };
}

#[test]
fn transforms() {
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { dnn_transform_identity(3, &mut t) }, DnnStatus::Ok);
    let f = [1.0, -2.0, 0.5];
    let mut y = [0.0; 3];
    assert_eq!(unsafe { dnn_transform_apply_frame(t, f.as_ptr(), 3, y.as_mut_ptr()) }, DnnStatus::Ok);
    assert_eq!(y, f);
    unsafe { dnn_transform_free(t) };

    let a = [2.0, 0.0, 1.0, 1.0];
    let b = [0.5, -0.5];
    assert_eq!(unsafe { dnn_transform_new(a.as_ptr(), b.as_ptr(), 2, &mut t) }, DnnStatus::Ok);
    let mut d = 0;
    assert_eq!(unsafe { dnn_transform_dim(t, &mut d) }, DnnStatus::Ok);
    assert_eq!(d, 2);
    let f = [1.0, 3.0];
    let mut y = [0.0; 2];
    assert_eq!(unsafe { dnn_transform_apply_frame(t, f.as_ptr(), 2, y.as_mut_ptr()) }, DnnStatus::Ok);
    assert_eq!(y, [2.5, 3.5]);
    assert_eq!(unsafe { dnn_transform_apply_frame(t, f.as_ptr(), 1, y.as_mut_ptr()) }, DnnStatus::Shape);
    unsafe { dnn_transform_free(t) };

    assert_eq!(unsafe { dnn_transform_identity(0, &mut t) }, DnnStatus::InvalidArgument);
}

#[test]
fn header_lists_every_entry_point() {
    let header = include_str!("../include/dnnlab.h");
    for name in [
        "dnn_last_error_message",
        "dnn_network_init",
        "dnn_network_posteriors",
        "dnn_network_gain_norms",
        "dnn_spectral_norm",
        "dnn_transform_apply_frame",
        "DNN_STATUS_PANIC",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
