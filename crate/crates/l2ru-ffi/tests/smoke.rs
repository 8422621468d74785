//! End-to-end exercise of the C interface from Rust: load, query, run,
//! certify, and free both handle kinds, plus the documented error paths.

use std::ffi::{c_int, CStr, CString};
use std::ptr;

use l2ru::lti::{LtiSystem, Trajectory};
use l2ru::mlp::Activation;
use l2ru::model::{
    build, forward, init_params, model_to_json, Engine, InitKind, ModelShape, ParamKind,
};
use l2ru::numerics::Matrix;
use l2ru_ffi::*;

fn sample_model_json() -> String {
    let shape = ModelShape {
        kind: ParamKind::Kappa,
        layer_count: 2,
        width: 4,
        input_dim: 2,
        output_dim: 3,
        mlp_hidden: vec![5],
        activation: Activation::Tanh,
        gamma_hat: 2.5,
    };
    let params = init_params(&shape, InitKind::Random, 11).expect("init");
    let model = build(&params).expect("build");
    model_to_json(&model).expect("serialize")
}

fn sample_system_json() -> String {
    let a = Matrix::new(2, 2, vec![0.5, 0.1, 0.0, 0.4]).unwrap();
    let b = Matrix::new(2, 1, vec![1.0, 0.5]).unwrap();
    let c = Matrix::new(1, 2, vec![1.0, -0.25]).unwrap();
    let d = Matrix::new(1, 1, vec![0.1]).unwrap();
    let sys = LtiSystem::new(a, b, c, d).unwrap();
    serde_json::to_string(&sys).unwrap()
}

fn last_error_text() -> String {
    let ptr = l2ru_last_error();
    assert!(!ptr.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(ptr) }.to_str().unwrap().to_string()
}

#[test]
fn version_is_a_static_string() {
    let ptr = l2ru_version();
    assert!(!ptr.is_null());
    let text = unsafe { CStr::from_ptr(ptr) }.to_str().unwrap();
    assert_eq!(text, env!("CARGO_PKG_VERSION"));
}

#[test]
fn model_round_trip_through_the_abi() {
    let json = sample_model_json();
    let cjson = CString::new(json.clone()).unwrap();
    let mut handle: *mut L2ruModelHandle = ptr::null_mut();
    let status = unsafe { l2ru_model_load_json(cjson.as_ptr(), &mut handle) };
    assert_eq!(status, L2ruStatus::Ok);
    assert!(!handle.is_null());

    let (mut ins, mut outs, mut layers) = (0usize, 0usize, 0usize);
    unsafe {
        assert_eq!(l2ru_model_input_dim(handle, &mut ins), L2ruStatus::Ok);
        assert_eq!(l2ru_model_output_dim(handle, &mut outs), L2ruStatus::Ok);
        assert_eq!(l2ru_model_layer_count(handle, &mut layers), L2ruStatus::Ok);
    }
    assert_eq!((ins, outs, layers), (2, 3, 2));

    let mut gamma_hat = 0.0;
    let mut certified = 0.0;
    unsafe {
        assert_eq!(l2ru_model_gamma_hat(handle, &mut gamma_hat), L2ruStatus::Ok);
        assert_eq!(
            l2ru_model_certified_gain(handle, &mut certified),
            L2ruStatus::Ok
        );
    }
    assert_eq!(gamma_hat, 2.5);
    assert!((certified - gamma_hat).abs() <= 1e-9 * gamma_hat);

    let mut ok_flag: c_int = -1;
    unsafe {
        assert_eq!(l2ru_model_certify(handle, &mut ok_flag), L2ruStatus::Ok);
    }
    assert_eq!(ok_flag, 1);

    // Forward pass matches the library call on both engines.
    let samples = 40;
    let input: Vec<f64> = (0..samples * ins)
        .map(|k| ((k * 37 + 11) % 19) as f64 / 19.0 - 0.5)
        .collect();
    let reference = {
        let model = l2ru::model::model_from_json(&json).unwrap();
        let u = Trajectory::from_flat(ins, input.clone()).unwrap();
        forward(&model, &u, Engine::Recursive).unwrap()
    };
    for engine in [0, 1] {
        let mut output = vec![f64::NAN; samples * outs];
        let status = unsafe {
            l2ru_model_forward(handle, input.as_ptr(), samples, engine, output.as_mut_ptr())
        };
        assert_eq!(status, L2ruStatus::Ok, "engine {engine}");
        for (got, want) in output.iter().zip(reference.as_flat()) {
            assert!((got - want).abs() <= 1e-10, "engine {engine}");
        }
    }

    unsafe { l2ru_model_free(handle) };
}

#[test]
fn model_load_reports_errors_without_touching_out() {
    let mut handle: *mut L2ruModelHandle = ptr::null_mut();

    let status = unsafe { l2ru_model_load_json(ptr::null(), &mut handle) };
    assert_eq!(status, L2ruStatus::NullPointer);
    assert!(handle.is_null());

    let bad = CString::new("{\"not\": \"a model\"}").unwrap();
    let status = unsafe { l2ru_model_load_json(bad.as_ptr(), &mut handle) };
    assert_eq!(status, L2ruStatus::Parse);
    assert!(handle.is_null());
    assert!(last_error_text().contains("model"));

    let missing = CString::new("/nonexistent/model.json").unwrap();
    let status = unsafe { l2ru_model_load_file(missing.as_ptr(), &mut handle) };
    assert_eq!(status, L2ruStatus::Io);
    assert!(last_error_text().contains("cannot read"));

    let json = CString::new(sample_model_json()).unwrap();
    let status = unsafe { l2ru_model_load_json(json.as_ptr(), ptr::null_mut()) };
    assert_eq!(status, L2ruStatus::NullPointer);
}

#[test]
fn forward_rejects_bad_engine_flag() {
    let json = CString::new(sample_model_json()).unwrap();
    let mut handle: *mut L2ruModelHandle = ptr::null_mut();
    unsafe {
        assert_eq!(
            l2ru_model_load_json(json.as_ptr(), &mut handle),
            L2ruStatus::Ok
        );
    }
    let input = [0.0; 4];
    let mut output = [0.0; 6];
    let status =
        unsafe { l2ru_model_forward(handle, input.as_ptr(), 2, 7, output.as_mut_ptr()) };
    assert_eq!(status, L2ruStatus::InvalidArgument);
    assert!(last_error_text().contains("engine flag"));
    unsafe { l2ru_model_free(handle) };
}

#[test]
fn system_round_trip_and_gains() {
    let json = sample_system_json();
    let cjson = CString::new(json.clone()).unwrap();
    let mut handle: *mut L2ruSystemHandle = ptr::null_mut();
    unsafe {
        assert_eq!(
            l2ru_system_load_json(cjson.as_ptr(), &mut handle),
            L2ruStatus::Ok
        );
    }

    let (mut n, mut nu, mut ny) = (0usize, 0usize, 0usize);
    unsafe {
        assert_eq!(
            l2ru_system_dims(handle, &mut n, &mut nu, &mut ny),
            L2ruStatus::Ok
        );
        // Null skips are allowed.
        assert_eq!(
            l2ru_system_dims(handle, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()),
            L2ruStatus::Ok
        );
    }
    assert_eq!((n, nu, ny), (2, 1, 1));

    let (mut sweep, mut cert) = (0.0, 0.0);
    unsafe {
        assert_eq!(
            l2ru_system_hinf_norm(handle, 1e-7, &mut sweep),
            L2ruStatus::Ok
        );
        assert_eq!(
            l2ru_system_certified_bound(handle, 1e-7, &mut cert),
            L2ruStatus::Ok
        );
    }
    let sys: LtiSystem = serde_json::from_str(&json).unwrap();
    let direct = l2ru::lti::hinf_norm(&sys, 1e-7).unwrap();
    assert!((sweep - direct).abs() <= 1e-12 * direct.max(1.0));
    assert!((cert - sweep).abs() <= 1e-4 * sweep);

    unsafe { l2ru_system_free(handle) };
    unsafe { l2ru_system_free(ptr::null_mut()) };
}

#[test]
fn system_load_rejects_malformed_input() {
    let mut handle: *mut L2ruSystemHandle = ptr::null_mut();
    // Decodes fine but fails validation: A is 2x2 while B has one state row.
    let bad = CString::new(
        "{\"A\":[[0.1,0.0],[0.0,0.1]],\"B\":[[1.0]],\"C\":[[1.0,0.0]],\"D\":[[0.0]]}",
    )
    .unwrap();
    let status = unsafe { l2ru_system_load_json(bad.as_ptr(), &mut handle) };
    assert_eq!(status, L2ruStatus::Parse);
    assert!(handle.is_null());
}

#[test]
fn generated_header_declares_the_interface() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("l2ru.h");
    let text = std::fs::read_to_string(&header).expect("header generated by the build script");
    for symbol in [
        "l2ru_version",
        "l2ru_last_error",
        "l2ru_model_load_file",
        "l2ru_model_load_json",
        "l2ru_model_free",
        "l2ru_model_forward",
        "l2ru_model_gamma_hat",
        "l2ru_model_certified_gain",
        "l2ru_model_certify",
        "l2ru_system_load_file",
        "l2ru_system_free",
        "l2ru_system_hinf_norm",
        "typedef struct L2ruModelHandle L2ruModelHandle",
        "typedef struct L2ruSystemHandle L2ruSystemHandle",
        "L2RU_STATUS_OK",
    ] {
        assert!(text.contains(symbol), "header is missing `{symbol}`");
    }
}
