use std::ffi::{CStr, CString};
use std::ptr;

use fitmask::data::Image;
use fitmask::evaluation::{extract_features, FrozenModel};
use fitmask::training::{save_checkpoint, ModelState, TrainConfig};
use fitmask_ffi::*;

fn last_error() -> String {
    let p = fm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn saved_model(dir: &std::path::Path) -> (std::path::PathBuf, TrainConfig) {
    let config = TrainConfig::desk();
    let state = ModelState::init(&config).unwrap();
    let path = dir.join("m.fmck");
    save_checkpoint(&path, &config, &state).unwrap();
    (path, config)
}

fn test_images(n: usize) -> (Vec<Image>, Vec<f32>) {
    let mut images = Vec::new();
    let mut flat = Vec::new();
    for i in 0..n {
        let px: Vec<f32> = (0..64 * 64 * 3)
            .map(|j| (((j * 7 + i * 13) % 97) as f32) / 96.0)
            .collect();
        flat.extend_from_slice(&px);
        images.push(Image::new(64, 64, px).unwrap());
    }
    (images, flat)
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/fitmask.h")).unwrap();
    for name in [
        "fm_last_error",
        "fm_version",
        "fm_model_load",
        "fm_model_free",
        "fm_model_info",
        "fm_model_extract",
        "fm_model_attention",
        "fm_retrieval_eval",
        "fm_attention_normalize",
        "FmRetrievalReport",
        "FM_STATUS_NULL_POINTER",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    assert!(header.contains("typedef struct FmModel FmModel"));
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(fm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    let mut out = ptr::null_mut();
    let s = unsafe { fm_model_load(ptr::null(), &mut out) };
    assert_eq!(s, FmStatus::NullPointer);
    assert!(last_error().contains("path"));
    let s = unsafe { fm_model_info(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(s, FmStatus::NullPointer);
    unsafe { fm_model_free(ptr::null_mut()) };
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("none.fmck").to_str().unwrap()).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { fm_model_load(path.as_ptr(), &mut out) }, FmStatus::Io);
    assert!(out.is_null());
    assert!(last_error().contains("none.fmck"));
}

#[test]
fn features_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, config) = saved_model(dir.path());
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { fm_model_load(cpath.as_ptr(), &mut model) }, FmStatus::Ok);

    let (mut size, mut dim, mut h, mut w) = (0, 0, 0, 0);
    assert_eq!(unsafe { fm_model_info(model, &mut size, &mut dim, &mut h, &mut w) }, FmStatus::Ok);
    assert_eq!((size, dim, h, w), (64, 64, 4, 4));

    let (images, flat) = test_images(3);
    let mut out = vec![0.0; 3 * dim];
    let s = unsafe { fm_model_extract(model, flat.as_ptr(), 3, 64, 64, out.as_mut_ptr(), out.len()) };
    assert_eq!(s, FmStatus::Ok, "{}", last_error());
    let frozen = FrozenModel::load(&path).unwrap();
    assert_eq!(frozen.feature_dim(), config.encoder.feature_channels);
    assert_eq!(out, extract_features(&frozen, &images).unwrap().data);

    let mut short = vec![0.0; dim];
    let s = unsafe { fm_model_extract(model, flat.as_ptr(), 3, 64, 64, short.as_mut_ptr(), short.len()) };
    assert_eq!(s, FmStatus::Argument);

    let mut mask = vec![0.0; h * w];
    let s = unsafe { fm_model_attention(model, flat.as_ptr(), 64, 64, mask.as_mut_ptr(), mask.len()) };
    assert_eq!(s, FmStatus::Ok, "{}", last_error());
    assert!(mask.iter().all(|v| v.is_finite()));
    unsafe { fm_model_free(model) };
}

#[test]
fn retrieval_on_class_indicator_features_is_perfect() {
    let labels: Vec<u32> = (0..12).map(|i| i % 3).collect();
    let features: Vec<f64> = labels
        .iter()
        .flat_map(|&l| (0..3).map(move |j| if j == l { 1.0 } else { 0.0 }))
        .collect();
    let mut r = FmRetrievalReport::default();
    let s = unsafe { fm_retrieval_eval(features.as_ptr(), 12, 3, labels.as_ptr(), FmSimilarity::Cosine, &mut r) };
    assert_eq!(s, FmStatus::Ok);
    assert_eq!((r.rank1, r.rank5, r.map, r.queries), (100.0, 100.0, 100.0, 12));
}

#[test]
fn attention_normalize_follows_the_literal_formula() {
    let raw = [1.0, 3.0, 2.0, 5.0];
    let mut out = [0.0; 4];
    assert_eq!(unsafe { fm_attention_normalize(raw.as_ptr(), 2, 2, FmScaling::Literal, out.as_mut_ptr()) }, FmStatus::Ok);
    for (o, r) in out.iter().zip(raw) {
        assert_eq!(*o, (r - 1.0) / (1e-7 + 5.0));
    }
    let flat = [2.0; 4];
    assert_eq!(unsafe { fm_attention_normalize(flat.as_ptr(), 2, 2, FmScaling::Range, out.as_mut_ptr()) }, FmStatus::Ok);
    assert_eq!(out, [0.25; 4]);
    let bad = [f64::NAN; 4];
    assert_eq!(unsafe { fm_attention_normalize(bad.as_ptr(), 2, 2, FmScaling::Literal, out.as_mut_ptr()) }, FmStatus::Numeric);
}
