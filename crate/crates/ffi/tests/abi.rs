use std::ffi::CString;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use ocu_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { ocu_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

#[test]
fn perf_reproduces_reference_numbers() {
    let mut p = OcuPerf::default();
    let s = unsafe { ocu_perf(3, 3, 16, 1e11, 8e6, 8.0, 1e-13, 0.1, &mut p) };
    assert_eq!(s, OcuStatus::Ok);
    assert_eq!(p.ops_conv, 17);
    assert_eq!(p.speed_ocu, 1.7e12);
    assert_eq!(p.speed_ocl, 8.16e13);
    assert_eq!(p.energy_total, 1.808e-4);
}

#[test]
fn invalid_perf_input_sets_status_and_message() {
    let mut p = OcuPerf::default();
    let s = unsafe { ocu_perf(3, 0, 16, 1e11, 8e6, 8.0, 1e-13, 0.1, &mut p) };
    assert_ne!(s, OcuStatus::Ok);
    assert!(!last_error().is_empty());
    let s = unsafe { ocu_perf(3, 3, 16, 1e11, 8e6, 8.0, 1e-13, 0.1, ptr::null_mut()) };
    assert_eq!(s, OcuStatus::NullPointer);
    assert!(last_error().contains("out"));
}

#[test]
fn model_fit_and_convolve_round_trip() {
    let mut model: *mut OcuModel = ptr::null_mut();
    assert_eq!(unsafe { ocu_model_new(2, 24, 3, false, 7, &mut model) }, OcuStatus::Ok);
    let mut inputs = 0usize;
    assert_eq!(unsafe { ocu_model_num_inputs(model, &mut inputs) }, OcuStatus::Ok);
    assert_eq!(inputs, 4);

    let kernel = [0.5, 0.25, 0.0, 0.25];
    let mut mse = f64::NAN;
    let s = unsafe { ocu_model_fit(model, kernel.as_ptr(), kernel.len(), 16, 600, 0.02, 1, &mut mse) };
    assert_eq!(s, OcuStatus::Ok, "{}", last_error());
    assert!(mse.is_finite() && mse < 0.01, "mse {mse}");

    let size = 8;
    let image: Vec<f64> = (0..size * size).map(|i| (i % 7) as f64 / 7.0).collect();
    let mut g = 0usize;
    assert_eq!(unsafe { ocu_model_output_size(model, size, &mut g) }, OcuStatus::Ok);
    assert_eq!(g, 7);
    let mut optical = vec![0.0; g * g];
    let mut exact = vec![0.0; g * g];
    unsafe {
        assert_eq!(ocu_model_convolve(model, image.as_ptr(), size, optical.as_mut_ptr(), optical.len()), OcuStatus::Ok);
        assert_eq!(
            ocu_conv2d_reference(image.as_ptr(), size, kernel.as_ptr(), 2, exact.as_mut_ptr(), exact.len()),
            OcuStatus::Ok
        );
    }
    let err = optical.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / exact.len() as f64;
    assert!(err < 0.02, "convolution mse {err}");

    let mut small = vec![0.0; 3];
    let s = unsafe { ocu_model_convolve(model, image.as_ptr(), size, small.as_mut_ptr(), small.len()) };
    assert_eq!(s, OcuStatus::BufferTooSmall);
    unsafe { ocu_model_free(model) };
}

#[test]
fn bad_geometry_and_missing_files_are_reported() {
    let mut model: *mut OcuModel = ptr::null_mut();
    let s = unsafe { ocu_model_new(3, 0, 3, false, 0, &mut model) };
    assert_eq!(s, OcuStatus::InvalidGeometry);
    assert!(model.is_null());

    let path = CString::new("/nonexistent/checkpoint.json").unwrap();
    let mut net: *mut OcuNetwork = ptr::null_mut();
    assert_eq!(unsafe { ocu_network_load(path.as_ptr(), &mut net) }, OcuStatus::Io);
    unsafe {
        ocu_network_free(ptr::null_mut());
        ocu_model_free(ptr::null_mut());
    }
}

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/ocu.h");
    assert!(header.exists(), "build script did not write {}", header.display());
    let Ok(cc) = which_cc() else {
        println!("no C compiler found; header checked for existence only");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include "ocu.h"
#include <stdio.h>
int main(void) {
    OcuPerf p;
    OcuStatus s = ocu_perf(3, 3, 16, 1e11, 8e6, 8.0, 1e-13, 0.1, &p);
    if (s != OCU_STATUS_OK) return 1;
    if (p.ops_conv != 17 || p.speed_ocl != 8.16e13) return 2;
    OcuModel *m = NULL;
    if (ocu_model_new(3, 0, 3, false, 0, &m) != OCU_STATUS_INVALID_GEOMETRY) return 3;
    char msg[128];
    if (ocu_last_error(msg, sizeof msg) == 0) return 4;
    printf("ok\n");
    return 0;
}
"#,
    )
    .unwrap();
    let mut cmd = Command::new(cc);
    cmd.args(["-std=c99", "-Wall", "-Werror", "-I"]).arg(crate_dir.join("include")).arg(&src);
    // target/<profile>/deps/abi-* → target/<profile>/libocu_ffi.a
    let lib = std::env::current_exe()
        .unwrap()
        .parent()
        .and_then(|d| d.parent())
        .map(|d| d.join("libocu_ffi.a"))
        .filter(|p| p.exists());
    let Some(lib) = lib else {
        let status = cmd.arg("-fsyntax-only").status().unwrap();
        assert!(status.success(), "ocu.h does not compile as C99");
        return;
    };
    let exe = dir.path().join("smoke");
    let status = cmd.arg(&lib).args(["-lm", "-lpthread", "-ldl", "-o"]).arg(&exe).status().unwrap();
    assert!(status.success(), "C smoke test failed to build");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C smoke test exited with {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
        .ok_or(())
}
