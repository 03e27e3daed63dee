use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use protab_ffi::*;

const SMALL_CONFIG: &str = r#"
max_epochs = 4
patience = 2
batch_size = 64

[data]
preset = "synthetic"

[model]
hidden_dim = 16
depth = 2
"#;

fn last_error() -> String {
    let p = protab_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn train_predict_save_load() {
    let cfg = CString::new(SMALL_CONFIG).unwrap();
    let mut model = ptr::null_mut();
    let mut summary = ProtabTrainSummary::default();
    let st = unsafe { protab_train(cfg.as_ptr(), 0, &mut model, &mut summary) };
    assert_eq!(st, ProtabStatus::Ok);
    assert!(!model.is_null());
    assert_eq!(summary.higher_is_better, 1);
    assert!(summary.test >= 0.0 && summary.test <= 1.0);

    let name = CString::new("synthetic").unwrap();
    let dir = CString::new("data").unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { protab_dataset_load_preset(name.as_ptr(), dir.as_ptr(), &mut ds) }, ProtabStatus::Ok);
    let (mut rows, mut feats) = (0usize, 0usize);
    assert_eq!(unsafe { protab_dataset_shape(ds, &mut rows, &mut feats) }, ProtabStatus::Ok);
    assert!(rows > 0 && feats > 0);

    let mut dim = 0usize;
    assert_eq!(unsafe { protab_model_output_dim(model, &mut dim) }, ProtabStatus::Ok);
    let mut written = 0usize;
    let st = unsafe { protab_model_predict(model, ds, ptr::null_mut(), 0, &mut written) };
    assert_eq!(st, ProtabStatus::BufferTooSmall);
    assert_eq!(written, rows * dim);
    let mut buf = vec![0.0; written];
    let st = unsafe { protab_model_predict(model, ds, buf.as_mut_ptr(), buf.len(), &mut written) };
    assert_eq!(st, ProtabStatus::Ok);
    assert!(buf.iter().all(|v| v.is_finite()));

    let tmp = tempfile::tempdir().unwrap();
    let path = CString::new(tmp.path().join("m.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { protab_model_save(model, path.as_ptr()) }, ProtabStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { protab_model_load(path.as_ptr(), &mut loaded) }, ProtabStatus::Ok);
    let mut acc = 0.0;
    assert_eq!(unsafe { protab_model_evaluate(model, ds, &mut acc) }, ProtabStatus::Ok);
    assert!((0.0..=1.0).contains(&acc));

    unsafe {
        protab_model_free(loaded);
        protab_model_free(model);
        protab_dataset_free(ds);
    }
}

#[test]
fn bad_inputs_map_to_status_codes() {
    let cfg = CString::new("no_such_key = 1").unwrap();
    let mut model = ptr::null_mut();
    let st = unsafe { protab_train(cfg.as_ptr(), 0, &mut model, ptr::null_mut()) };
    assert_eq!(st, ProtabStatus::InvalidArgument, "{}", last_error());
    assert!(model.is_null());

    let name = CString::new("nope").unwrap();
    let dir = CString::new("data").unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { protab_dataset_load_preset(name.as_ptr(), dir.as_ptr(), &mut ds) }, ProtabStatus::Data);
    assert!(last_error().contains("nope"));
    assert_eq!(unsafe { protab_dataset_load_preset(ptr::null(), dir.as_ptr(), &mut ds) }, ProtabStatus::NullPointer);

    let mut out = 0.0;
    let st = unsafe { protab_sinkhorn(ptr::null(), 2, ptr::null(), 2, ptr::null(), 0.1, 10, 1e-6, ptr::null_mut(), &mut out) };
    assert_eq!(st, ProtabStatus::NullPointer);
}

#[test]
fn numeric_entry_points() {
    let a = [0.5, 0.5];
    let b = [0.5, 0.5];
    let cost = [0.0, 1.0, 1.0, 0.0];
    let mut plan = [0.0; 4];
    let mut value = f64::NAN;
    let st = unsafe {
        protab_sinkhorn(a.as_ptr(), 2, b.as_ptr(), 2, cost.as_ptr(), 0.01, 2000, 1e-9, plan.as_mut_ptr(), &mut value)
    };
    assert_eq!(st, ProtabStatus::Ok);
    assert!(value.abs() < 1e-6, "{value}");
    assert!((plan[0] - 0.5).abs() < 1e-6 && (plan[3] - 0.5).abs() < 1e-6);

    let protos = [1.0, 0.0, 0.0, 0.0, 2.0, 0.0];
    let mut loss = 0.0;
    let mut grad = [f64::NAN; 6];
    let st = unsafe { protab_orthogonalization_loss(protos.as_ptr(), 2, 3, &mut loss, grad.as_mut_ptr()) };
    assert_eq!(st, ProtabStatus::Ok);
    assert!((loss - 1.0).abs() < 1e-12);
    assert!(grad.iter().all(|g| g.is_finite()));

    assert_eq!(protab_choose_k(14), 3);
    assert_eq!(protab_choose_k(1), 2);

    let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let y = [0.0; 6];
    let mut w = ProtabWilcoxon::default();
    assert_eq!(unsafe { protab_wilcoxon(x.as_ptr(), y.as_ptr(), 6, &mut w) }, ProtabStatus::Ok);
    assert_eq!(w.exact, 1);
    assert!((w.p_value - 2.0 / 64.0).abs() < 1e-12);
}

fn target_dir() -> PathBuf {
    // .../target/<profile>/deps/abi-<hash>
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(|p| p.parent()).unwrap().to_path_buf()
}

/// Compiles and runs a C program against the generated header and the static library.
#[test]
fn c_program_links_against_header() {
    let Ok(status) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler available; skipping");
        return;
    };
    assert!(status.status.success());
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let lib = target_dir().join("libprotab_ffi.a");
    assert!(include.join("protab.h").exists(), "header not generated");
    assert!(lib.exists(), "static library missing at {}", lib.display());

    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "protab.h"
int main(void) {
    double r[3] = {0.2, 0.3, 0.5};
    double c[3] = {1.0, 2.0, 4.0};
    double out = 0.0;
    if (protab_singleton_ot(r, c, 3, &out) != PROTAB_STATUS_OK) return 1;
    if (out < 2.8 - 1e-12 || out > 2.8 + 1e-12) return 2;
    if (protab_singleton_ot(NULL, c, 3, &out) != PROTAB_STATUS_NULL_POINTER) return 3;
    if (protab_last_error() == NULL) return 4;
    printf("%s\n", protab_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = tmp.path().join("main");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "cc failed: {}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
