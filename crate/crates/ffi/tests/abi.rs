use std::ffi::{c_char, CStr, CString};
use std::ptr;

use seqscript::data::pgm::write_pgm;
use seqscript::layers::Parameters;
use seqscript::model::{checkpoint, ArchConfig, Model};
use seqscript::train::eval::classify;
use seqscript::{Rng, Tensor};
use seqscript_ffi::*;

fn tiny_model() -> Model {
    Model::build(ArchConfig::tiny(vec!["latin".into(), "greek".into(), "thai".into()]), 3).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ss_last_error()) }.to_string_lossy().into_owned()
}

fn load(m: &Model) -> *mut SsModel {
    let bytes = checkpoint::to_bytes(m);
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { ss_model_load_bytes(bytes.as_ptr(), bytes.len(), &mut h) }, SsStatus::Ok);
    assert!(!h.is_null());
    h
}

#[test]
fn load_query_free() {
    let m = tiny_model();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ssid");
    checkpoint::save(&m, &p).unwrap();
    let cpath = CString::new(p.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { ss_model_load(cpath.as_ptr(), &mut h) }, SsStatus::Ok);
    assert_eq!(last_error(), "");
    unsafe {
        assert_eq!(ss_model_param_count(h), m.param_count());
        assert_eq!(ss_model_num_scripts(h), 3);

        let mut needed = 0usize;
        let mut small = [0 as c_char; 3];
        assert_eq!(ss_model_script_name(h, 1, small.as_mut_ptr(), small.len(), &mut needed), SsStatus::BufferTooSmall);
        assert_eq!(needed, 6);
        let mut buf = [0 as c_char; 16];
        assert_eq!(ss_model_script_name(h, 1, buf.as_mut_ptr(), buf.len(), &mut needed), SsStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "greek");
        assert_eq!(ss_model_script_name(h, 3, buf.as_mut_ptr(), buf.len(), ptr::null_mut()), SsStatus::Usage);
        ss_model_free(h);
        ss_model_free(ptr::null_mut());
        assert_eq!(ss_model_param_count(ptr::null()), 0);
    }
}

#[test]
fn inference_matches_the_library() {
    let m = tiny_model();
    let h = load(&m);
    let mut rng = Rng::new(8);
    for w in [16, 23, 40] {
        let data: Vec<f64> = (0..24 * w).map(|_| rng.uniform(0.0, 1.0)).collect();
        let img = Tensor::from_vec(&[24, w, 1], data.clone()).unwrap();
        let want = classify(&m, &img).unwrap();

        let mut script = 99i32;
        let mut counts = [7usize; 3];
        let st = unsafe { ss_model_infer(h, data.as_ptr(), 24, w, &mut script, counts.as_mut_ptr(), 3) };
        assert_eq!(st, SsStatus::Ok, "{}", last_error());
        assert_eq!(script, want.script.map_or(-1, |s| s as i32));
        assert_eq!(counts.to_vec(), want.counts);

        // the PGM path quantizes, so compare against the quantized image
        let pgm = write_pgm(&img).unwrap();
        let q = seqscript::data::pgm::read_pgm(&pgm).unwrap();
        let want_q = classify(&m, &q).unwrap();
        let st = unsafe { ss_model_infer_pgm(h, pgm.as_ptr(), pgm.len(), &mut script, ptr::null_mut(), 0) };
        assert_eq!(st, SsStatus::Ok);
        assert_eq!(script, want_q.script.map_or(-1, |s| s as i32));
    }
    unsafe { ss_model_free(h) };
}

#[test]
fn errors_are_codes_with_messages() {
    let m = tiny_model();
    let h = load(&m);
    let mut script = 0i32;
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(ss_model_load(ptr::null(), &mut out), SsStatus::NullArgument);
        assert!(last_error().contains("path"));

        let missing = CString::new("/nonexistent/dir/m.ssid").unwrap();
        assert_eq!(ss_model_load(missing.as_ptr(), &mut out), SsStatus::Io);
        assert!(out.is_null());

        let junk = b"NOPE\x01\x00\x00\x00";
        assert_eq!(ss_model_load_bytes(junk.as_ptr(), junk.len(), &mut out), SsStatus::Format);
        assert!(!last_error().is_empty());

        let px = [0.5f64; 24 * 4];
        // too narrow for the pool chain
        assert_eq!(ss_model_infer(h, px.as_ptr(), 24, 4, &mut script, ptr::null_mut(), 0), SsStatus::Numeric);
        assert_eq!(ss_model_infer(h, ptr::null(), 24, 4, &mut script, ptr::null_mut(), 0), SsStatus::NullArgument);

        let px = [0.5f64; 24 * 20];
        let mut counts = [0usize; 2];
        assert_eq!(
            ss_model_infer(h, px.as_ptr(), 24, 20, &mut script, counts.as_mut_ptr(), 2),
            SsStatus::BufferTooSmall
        );

        let bad_pgm = b"P5 3 2 255\nab";
        assert_eq!(
            ss_model_infer_pgm(h, bad_pgm.as_ptr(), bad_pgm.len(), &mut script, ptr::null_mut(), 0),
            SsStatus::Format
        );
        ss_model_free(h);
    }
}

#[test]
fn header_declares_the_abi() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/seqscript.h")).unwrap();
    for sym in [
        "ss_last_error",
        "ss_model_load",
        "ss_model_load_bytes",
        "ss_model_free",
        "ss_model_param_count",
        "ss_model_num_scripts",
        "ss_model_script_name",
        "ss_model_infer",
        "ss_model_infer_pgm",
        "SS_STATUS_BUFFER_TOO_SMALL",
        "typedef struct SsModel SsModel",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}
