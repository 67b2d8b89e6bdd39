use acnet_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

fn last_error() -> String {
    let p = acnet_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn prototype(h: usize, w: usize) -> *mut AcnetGraph {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { acnet_graph_seed_prototype(h, w, 1, &mut g) }, AcnetStatus::Ok);
    assert!(!g.is_null());
    g
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(acnet_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn prototype_counts_match_engine() {
    let g = prototype(128, 128);
    let mut params = 0u64;
    let (mut flops, mut macs) = (0u64, 0u64);
    let mut shape = [0usize; 4];
    unsafe {
        assert_eq!(acnet_graph_param_count(g, &mut params), AcnetStatus::Ok);
        assert_eq!(acnet_graph_cost(g, 1, 128, 128, &mut flops, &mut macs), AcnetStatus::Ok);
        assert_eq!(acnet_graph_input_shape(g, shape.as_mut_ptr()), AcnetStatus::Ok);
        acnet_graph_free(g);
    }
    let specs = acnet::graph::seed_prototype(&Default::default()).unwrap();
    let cost = acnet::analyzer::total_cost(&specs, [1, 1, 128, 128]).unwrap();
    assert_eq!(params, cost.params);
    assert_eq!(flops, cost.flops);
    assert_eq!(macs, cost.macs);
    assert_eq!(shape, [1, 1, 128, 128]);
}

#[test]
fn json_round_trip_and_predict() {
    let g = prototype(16, 16);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { acnet_graph_to_json(g, &mut json) }, AcnetStatus::Ok);
    let mut g2 = ptr::null_mut();
    assert_eq!(unsafe { acnet_graph_from_json(json, 1, &mut g2) }, AcnetStatus::Ok);
    unsafe { acnet_string_free(json) };

    let images: Vec<f64> = (0..3 * 256).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect();
    let mut a = [0.0; 3];
    let mut b = [0.0; 3];
    unsafe {
        assert_eq!(acnet_graph_predict(g, images.as_ptr(), 3, a.as_mut_ptr()), AcnetStatus::Ok);
        assert_eq!(acnet_graph_predict(g2, images.as_ptr(), 3, b.as_mut_ptr()), AcnetStatus::Ok);
        acnet_graph_free(g);
        acnet_graph_free(g2);
    }
    assert_eq!(a, b);
    assert!(a.iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn weights_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("w.bin").to_str().unwrap()).unwrap();
    let src = prototype(16, 16);
    let mut dst = ptr::null_mut();
    assert_eq!(unsafe { acnet_graph_seed_prototype(16, 16, 99, &mut dst) }, AcnetStatus::Ok);
    let img = vec![0.25; 256];
    let (mut p, mut q) = (0.0, 0.0);
    unsafe {
        assert_eq!(acnet_graph_save_weights(src, path.as_ptr()), AcnetStatus::Ok);
        assert_eq!(acnet_graph_load_weights(dst, path.as_ptr()), AcnetStatus::Ok);
        acnet_graph_predict(src, img.as_ptr(), 1, &mut p);
        acnet_graph_predict(dst, img.as_ptr(), 1, &mut q);
        acnet_graph_free(src);
        acnet_graph_free(dst);
    }
    assert_eq!(p.to_bits(), q.to_bits());
}

#[test]
fn errors_map_to_status_codes() {
    let mut g = ptr::null_mut();
    let bad = CString::new("{}").unwrap();
    assert_eq!(unsafe { acnet_graph_from_json(bad.as_ptr(), 0, &mut g) }, AcnetStatus::Parse);
    assert!(g.is_null());
    assert!(last_error().contains("parse"));

    assert_eq!(unsafe { acnet_graph_from_json(ptr::null(), 0, &mut g) }, AcnetStatus::NullArgument);
    assert_eq!(unsafe { acnet_graph_param_count(ptr::null(), &mut 0) }, AcnetStatus::NullArgument);

    let missing = CString::new("/nonexistent/acnet/w.bin").unwrap();
    let g = prototype(16, 16);
    assert_eq!(unsafe { acnet_graph_load_weights(g, missing.as_ptr()) }, AcnetStatus::Io);
    let (mut f, mut m) = (0, 0);
    assert_eq!(unsafe { acnet_graph_cost(g, 3, 16, 16, &mut f, &mut m) }, AcnetStatus::Dimension);
    unsafe { acnet_graph_free(g) };

    let mut out = 0.0;
    assert_eq!(unsafe { acnet_netscore(0.0, 1, 1, &mut out) }, AcnetStatus::Domain);
    let labels = [1u8, 1];
    assert_eq!(unsafe { acnet_roc_auc([0.1, 0.2].as_ptr(), labels.as_ptr(), 2, &mut out) }, AcnetStatus::Domain);

    // A success clears the previous message.
    assert_eq!(unsafe { acnet_netscore(1.0, 1_000_000, 1_000_000, &mut out) }, AcnetStatus::Ok);
    assert_eq!(out, 80.0);
    assert!(acnet_last_error().is_null());
}

#[test]
fn roc_auc_counts_ties_as_half() {
    let scores = [0.1, 0.4, 0.4, 0.9];
    let labels = [0u8, 0, 1, 1];
    let mut auc = 0.0;
    assert_eq!(unsafe { acnet_roc_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut auc) }, AcnetStatus::Ok);
    assert_eq!(auc, 0.875);
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/acnet.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in ["acnet_graph_predict", "acnet_last_error", "ACNET_STATUS_OK", "typedef struct AcnetGraph AcnetGraph"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(&src, "#include \"acnet.h\"\nint main(void) { AcnetGraph *g = 0; (void)acnet_graph_free; return g != 0; }\n")
        .unwrap();
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header failed to compile"),
        Err(e) => eprintln!("skipping C compile check: {e}"),
    }
}
