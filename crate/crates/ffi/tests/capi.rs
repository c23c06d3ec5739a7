use std::ffi::{CStr, CString};
use std::ptr;

use gaitgp_ffi::*;

fn last_error() -> String {
    let p = gaitgp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn unit_params() -> GaitgpKernelParams {
    GaitgpKernelParams {
        periodic_variance: 1.0,
        periodic_lengthscale: 1.0,
        period: 1.0,
        se_variance: 1.0,
        se_lengthscale: 1.0,
        matern_variance: 1.0,
        matern_lengthscale: 1.0,
    }
}

#[test]
fn kernel_eval_matches_core() {
    let params = unit_params();
    let mut v = 0.0;
    assert_eq!(
        unsafe { gaitgp_kernel_eval(&params, 0.0, 0.5, &mut v) },
        GaitgpStatus::Ok
    );
    assert!((v - 1.8027198398).abs() < 1e-9, "{v}");
    assert!(gaitgp_last_error().is_null());
}

#[test]
fn invalid_kernel_params_report_validation_error() {
    let mut params = unit_params();
    params.se_lengthscale = -1.0;
    let mut v = 0.0;
    assert_eq!(
        unsafe { gaitgp_kernel_eval(&params, 0.0, 0.5, &mut v) },
        GaitgpStatus::InvalidInput
    );
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { gaitgp_kernel_eval(ptr::null(), 0.0, 0.5, &mut v) },
        GaitgpStatus::NullPointer
    );
    assert!(last_error().contains("params"));
}

#[test]
fn mogp_fit_predict_save_load() {
    let n = 12;
    let times: Vec<f64> = (0..n).map(|i| (i % 6) as f64 / 5.0).collect();
    let outputs: Vec<usize> = (0..n).map(|i| i / 6).collect();
    let values: Vec<f64> = times
        .iter()
        .zip(&outputs)
        .map(|(t, o)| (2.0 * std::f64::consts::PI * t).sin() * (1.0 + *o as f64))
        .collect();
    let mut h: *mut GaitgpMogp = ptr::null_mut();
    let st = unsafe {
        gaitgp_mogp_fit(
            times.as_ptr(),
            outputs.as_ptr(),
            values.as_ptr(),
            n,
            50,
            1,
            &mut h,
        )
    };
    assert_eq!(st, GaitgpStatus::Ok);
    let mut m = 0;
    assert_eq!(unsafe { gaitgp_mogp_outputs(h, &mut m) }, GaitgpStatus::Ok);
    assert_eq!(m, 2);
    let mut lml = 0.0;
    assert_eq!(unsafe { gaitgp_mogp_lml(h, &mut lml) }, GaitgpStatus::Ok);
    assert!(lml.is_finite());

    let q = [0.1, 0.5, 0.9];
    let (mut mean, mut std) = (vec![0.0; 6], vec![0.0; 6]);
    let st = unsafe { gaitgp_mogp_predict(h, q.as_ptr(), 3, mean.as_mut_ptr(), std.as_mut_ptr()) };
    assert_eq!(st, GaitgpStatus::Ok);
    assert!(std.iter().all(|s| *s >= 0.0));

    let mut b = vec![0.0; 4];
    assert_eq!(
        unsafe { gaitgp_mogp_coregionalization(h, b.as_mut_ptr()) },
        GaitgpStatus::Ok
    );
    assert_eq!(b[1], b[2]);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.mogp").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { gaitgp_mogp_save(h, path.as_ptr()) },
        GaitgpStatus::Ok
    );
    let mut h2: *mut GaitgpMogp = ptr::null_mut();
    assert_eq!(
        unsafe { gaitgp_mogp_load(path.as_ptr(), &mut h2) },
        GaitgpStatus::Ok
    );
    let (mut mean2, mut std2) = (vec![0.0; 6], vec![0.0; 6]);
    unsafe { gaitgp_mogp_predict(h2, q.as_ptr(), 3, mean2.as_mut_ptr(), std2.as_mut_ptr()) };
    assert_eq!(mean, mean2);
    assert_eq!(std, std2);
    unsafe {
        gaitgp_mogp_free(h);
        gaitgp_mogp_free(h2);
        gaitgp_mogp_free(ptr::null_mut());
    }
}

#[test]
fn mogp_load_missing_file_fails() {
    let path = CString::new("/nonexistent/model.mogp").unwrap();
    let mut h: *mut GaitgpMogp = ptr::null_mut();
    assert_eq!(
        unsafe { gaitgp_mogp_load(path.as_ptr(), &mut h) },
        GaitgpStatus::InvalidInput
    );
    assert!(h.is_null());
    assert!(last_error().contains("model.mogp"));
}

#[test]
fn hmm_round_trip_and_decoding() {
    let mut h: *mut GaitgpHmm = ptr::null_mut();
    assert_eq!(unsafe { gaitgp_hmm_default(&mut h) }, GaitgpStatus::Ok);
    let obs = [0.0, 0.1, -0.2, 0.3, 1.5, -1.0, 0.2, 0.0];
    let mut ll = 0.0;
    assert_eq!(
        unsafe { gaitgp_hmm_forward(h, obs.as_ptr(), 4, &mut ll) },
        GaitgpStatus::Ok
    );
    let mut states = [0u8; 4];
    let mut lj = 0.0;
    assert_eq!(
        unsafe { gaitgp_hmm_viterbi(h, obs.as_ptr(), 4, states.as_mut_ptr(), &mut lj) },
        GaitgpStatus::Ok
    );
    assert!(states.iter().all(|s| (1..=4).contains(s)));
    assert!(lj <= ll + 1e-12);

    let mut need = 0;
    assert_eq!(
        unsafe { gaitgp_hmm_to_document(h, ptr::null_mut(), 0, &mut need) },
        GaitgpStatus::Ok
    );
    let mut buf = vec![0 as std::ffi::c_char; need];
    assert_eq!(
        unsafe { gaitgp_hmm_to_document(h, buf.as_mut_ptr(), need, &mut need) },
        GaitgpStatus::Ok
    );
    let mut h2: *mut GaitgpHmm = ptr::null_mut();
    assert_eq!(
        unsafe { gaitgp_hmm_from_document(buf.as_ptr(), &mut h2) },
        GaitgpStatus::Ok
    );
    let mut ll2 = 0.0;
    unsafe { gaitgp_hmm_forward(h2, obs.as_ptr(), 4, &mut ll2) };
    assert_eq!(ll.to_bits(), ll2.to_bits());
    unsafe {
        gaitgp_hmm_free(h);
        gaitgp_hmm_free(h2);
    }
}

#[test]
fn hmm_new_rejects_bad_probabilities() {
    let pi = [0.5, 0.5, 0.5, 0.5];
    let a = [0.25; 16];
    let mu = [0.0; 8];
    let cov = [1.0, 0.0, 0.0, 1.0];
    let mut h: *mut GaitgpHmm = ptr::null_mut();
    let st = unsafe { gaitgp_hmm_new(pi.as_ptr(), a.as_ptr(), mu.as_ptr(), cov.as_ptr(), &mut h) };
    assert_eq!(st, GaitgpStatus::InvalidInput);
    assert!(h.is_null());
    let pi = [0.25; 4];
    let st = unsafe { gaitgp_hmm_new(pi.as_ptr(), a.as_ptr(), mu.as_ptr(), cov.as_ptr(), &mut h) };
    assert_eq!(st, GaitgpStatus::Ok);
    unsafe { gaitgp_hmm_free(h) };
}

#[test]
fn metrics_through_c_abi() {
    let a = [1.0, 2.0, 3.0];
    let b = [2.0, 4.0, 3.0];
    let mut v = 0.0;
    assert_eq!(
        unsafe { gaitgp_mae(a.as_ptr(), b.as_ptr(), 3, &mut v) },
        GaitgpStatus::Ok
    );
    assert_eq!(v, 1.0);
    assert_eq!(
        unsafe { gaitgp_r_squared(a.as_ptr(), a.as_ptr(), 3, &mut v) },
        GaitgpStatus::Ok
    );
    assert_eq!(v, 1.0);
    assert_eq!(
        unsafe { gaitgp_dtw(a.as_ptr(), 3, a.as_ptr(), 3, &mut v) },
        GaitgpStatus::Ok
    );
    assert_eq!(v, 0.0);
    assert_eq!(
        unsafe { gaitgp_mae(a.as_ptr(), b.as_ptr(), 0, &mut v) },
        GaitgpStatus::InvalidInput
    );
}

#[test]
fn version_is_cargo_version() {
    let v = unsafe { CStr::from_ptr(gaitgp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/gaitgp.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in [
        "gaitgp_mogp_predict",
        "gaitgp_hmm_viterbi",
        "gaitgp_dtw",
        "GaitgpStatus",
        "GaitgpMogp",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        format!("#include \"{header}\"\nint main(void) {{ GaitgpMogp *m = 0; gaitgp_mogp_free(m); return 0; }}\n"),
    )
    .unwrap();
    match std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        ),
        Err(e) => eprintln!("skipping C compile check: {e}"),
    }
}
