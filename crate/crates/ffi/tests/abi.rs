use std::ffi::{CStr, CString};
use std::ptr;

use ucda_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ucda_last_error()) }.to_string_lossy().into_owned()
}

const NET: &str = r#"{
    "version": 1,
    "input": {"h": 8, "w": 8, "c": 3, "scale_exp": -7},
    "layers": [
        {"kind": "conv3x3", "out_channels": 8, "activation": "relu", "pool": "max", "scale_exp": -4},
        {"kind": "deconv2x", "out_channels": 4, "scale_exp": -4}
    ]
}"#;

#[test]
fn resource_helpers() {
    let mut cfg = unsafe { std::mem::zeroed::<UcdaHwConfig>() };
    assert_eq!(unsafe { ucda_hw_config_default(&mut cfg) }, UcdaStatus::Ok);
    assert_eq!((cfg.tn, cfg.tm, cfg.arrays, cfg.clock_hz), (8, 8, 1, 220_000_000));
    let (mut gops, mut dsp) = (0.0, 0);
    unsafe {
        assert_eq!(ucda_peak_gops(&cfg, &mut gops), UcdaStatus::Ok);
        assert_eq!(ucda_dsp_equiv(ptr::null(), &mut dsp), UcdaStatus::Ok);
    }
    assert!((gops - 253.44).abs() < 1e-9);
    assert_eq!(dsp, 576);

    cfg.clock_hz = 0;
    assert_eq!(unsafe { ucda_peak_gops(&cfg, &mut gops) }, UcdaStatus::InvalidArgument);
    assert!(last_error().contains("clock"), "{}", last_error());
    assert_eq!(unsafe { ucda_dsp_equiv(ptr::null(), ptr::null_mut()) }, UcdaStatus::NullPointer);
}

#[test]
fn deconv_patch_example() {
    let win = [1i8, 2, 3, 4];
    let k: [i8; 9] = [1, 2, 3, 4, 5, 6, 7, 8, 9];
    let mut out = [0i32; 4];
    assert_eq!(
        unsafe { ucda_deconv_patch(win.as_ptr(), k.as_ptr(), out.as_mut_ptr()) },
        UcdaStatus::Ok
    );
    assert_eq!(out, [64, 36, 36, 20]);
}

#[test]
fn compile_execute_round_trip() {
    unsafe {
        let json = CString::new(NET).unwrap();
        let mut prog = ptr::null_mut();
        assert_eq!(ucda_program_compile_json(json.as_ptr(), ptr::null(), &mut prog), UcdaStatus::Ok);
        let mut n = 0;
        ucda_program_len(prog, &mut n);
        assert_eq!(n, 2);
        let mut dump = ptr::null_mut();
        assert_eq!(ucda_program_dump(prog, &mut dump), UcdaStatus::Ok);
        assert!(CStr::from_ptr(dump).to_str().unwrap().contains("op=deconv2x pad=TL"));
        ucda_string_free(dump);

        let mut wts = ptr::null_mut();
        assert_eq!(ucda_weights_random(prog, 3, &mut wts), UcdaStatus::Ok);
        let (mut bytes, mut len) = (ptr::null_mut(), 0);
        assert_eq!(ucda_weights_encode(wts, &mut bytes, &mut len), UcdaStatus::Ok);
        let mut reloaded = ptr::null_mut();
        assert_eq!(ucda_weights_load(bytes, len, &mut reloaded), UcdaStatus::Ok);
        ucda_bytes_free(bytes, len);

        let mut input = ptr::null_mut();
        assert_eq!(ucda_tensor_random_input(prog, 9, &mut input), UcdaStatus::Ok);
        let mut outs = [ptr::null_mut(); 2];
        let mut report = UcdaCycleReport::default();
        for (o, w) in outs.iter_mut().zip([wts, reloaded]) {
            assert_eq!(ucda_execute(prog, w, input, o, &mut report), UcdaStatus::Ok);
        }
        assert!(report.total_cycles > 0);
        assert_eq!(report.multiplications, 9 * 64 * 3 * 8 + 9 * 16 * 8 * 4);

        let (mut h, mut w, mut c, mut s) = (0, 0, 0, 0);
        ucda_tensor_shape(outs[0], &mut h, &mut w, &mut c, &mut s);
        assert_eq!((h, w, c, s), (8, 8, 4, -4));
        let data = |t| {
            let (mut p, mut n) = (ptr::null(), 0);
            ucda_tensor_data(t, &mut p, &mut n);
            std::slice::from_raw_parts(p, n).to_vec()
        };
        assert_eq!(data(outs[0]), data(outs[1]));

        for o in outs {
            ucda_tensor_free(o);
        }
        ucda_tensor_free(input);
        ucda_weights_free(wts);
        ucda_weights_free(reloaded);
        ucda_program_free(prog);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let bad = CString::new("{\"version\": 1").unwrap();
        let mut prog = ptr::null_mut();
        assert_eq!(ucda_program_compile_json(bad.as_ptr(), ptr::null(), &mut prog), UcdaStatus::Parse);
        assert!(prog.is_null());
        assert!(!last_error().is_empty());

        let mut cfg = std::mem::zeroed::<UcdaHwConfig>();
        ucda_hw_config_default(&mut cfg);
        cfg.if_bank_bits = 64;
        assert_eq!(ucda_program_segnet_basic(&cfg, &mut prog), UcdaStatus::Infeasible);
        assert!(last_error().contains("layer 0"), "{}", last_error());

        let junk = [0u8; 8];
        let mut w = ptr::null_mut();
        assert_eq!(ucda_weights_load(junk.as_ptr(), junk.len(), &mut w), UcdaStatus::Parse);

        let mut t = ptr::null_mut();
        let data = [0i8; 5];
        assert_eq!(ucda_tensor_new(2, 2, 1, 0, data.as_ptr(), 5, &mut t), UcdaStatus::InvalidArgument);
        assert_eq!(ucda_tensor_new(1, 5, 1, 0, data.as_ptr(), 5, &mut t), UcdaStatus::Ok);
        assert_eq!(last_error(), "");
        ucda_tensor_free(t);
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/ucda.h");
    let src = include_str!("../src/lib.rs");
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .filter_map(|l| l.split('(').next())
        .collect();
    assert!(exports.len() > 15);
    for name in exports {
        let decl = format!("{name}(");
        assert!(
            header.lines().any(|l| l.split_whitespace().any(|t| t.trim_start_matches('*').starts_with(&decl))),
            "{name} missing from header"
        );
    }
    assert!(header.contains("typedef struct UcdaProgram UcdaProgram;"));
}
