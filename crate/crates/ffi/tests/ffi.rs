use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use tale_ffi::*;

fn write_log(dir: &Path) -> PathBuf {
    let mut text = String::new();
    for u in 0..40 {
        for k in 0..8 {
            let item = (u + k) % 12;
            text.push_str(&format!("u{u} i{item} {}\n", 1_000_000 + k * 3600 + u));
        }
    }
    let path = dir.join("log.txt");
    std::fs::write(&path, text).unwrap();
    path
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(tale_last_error()) }.to_string_lossy().into_owned()
}

fn prepared(dir: &Path) -> *mut TaleDataset {
    let log = write_log(dir);
    let cfg = cstr(&format!("input_path = {:?}\nk_core = 0\n", log.display().to_string()));
    let mut ds = ptr::null_mut();
    let status = unsafe { tale_dataset_prepare(cfg.as_ptr(), &mut ds) };
    assert_eq!(status, TaleStatus::Ok, "{}", last_error());
    ds
}

#[test]
fn train_recommend_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = prepared(dir.path());
    unsafe {
        assert_eq!(tale_dataset_num_items(ds), 12);
        assert_eq!(tale_dataset_num_users(ds), 40);

        let cfg = cstr("lambda = 1.0\ntau_time = 0.5\nc = 0.3\n");
        let mut model = ptr::null_mut();
        assert_eq!(tale_train(ds, cfg.as_ptr(), &mut model), TaleStatus::Ok, "{}", last_error());
        assert_eq!(tale_model_num_items(model), 12);

        let mut idx = 0u32;
        assert_eq!(tale_model_item_index(model, cstr("i3").as_ptr(), &mut idx), TaleStatus::Ok);
        let mut buf = [0 as std::ffi::c_char; 8];
        assert_eq!(tale_model_item_id(model, idx, buf.as_mut_ptr(), buf.len()), TaleStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "i3");
        assert_eq!(tale_model_item_id(model, idx, buf.as_mut_ptr(), 2), TaleStatus::InvalidArgument);
        assert_eq!(tale_model_item_index(model, cstr("nope").as_ptr(), &mut idx), TaleStatus::NotFound);
        assert!(last_error().contains("nope"));

        let history = [idx];
        let mut items = [0u32; 20];
        let mut scores = [0f64; 20];
        let mut len = 0usize;
        let status = tale_recommend(model, history.as_ptr(), 1, 20, true, items.as_mut_ptr(), scores.as_mut_ptr(), &mut len);
        assert_eq!(status, TaleStatus::Ok);
        assert_eq!(len, 11);
        assert!(!items[..len].contains(&history[0]));
        assert!(scores[..len].windows(2).all(|w| w[0] >= w[1]));
        let mut next = 0u32;
        tale_model_item_index(model, cstr("i4").as_ptr(), &mut next);
        assert_eq!(items[0], next);

        let mut metrics = TaleMetrics::default();
        assert_eq!(tale_evaluate(model, ds, true, &mut metrics), TaleStatus::Ok);
        assert_eq!(metrics.users, 40);
        assert!(metrics.hr_at_1 > 0.9);
        assert_eq!(metrics.hr_at_1, metrics.ndcg_at_1);

        let path = dir.path().join("m.bin");
        let p = cstr(path.to_str().unwrap());
        assert_eq!(tale_model_save(model, p.as_ptr(), false), TaleStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(tale_model_load(p.as_ptr(), &mut loaded), TaleStatus::Ok);
        let mut again = TaleMetrics::default();
        assert_eq!(tale_evaluate(loaded, ds, true, &mut again), TaleStatus::Ok);
        assert_eq!(again, metrics);

        tale_model_free(loaded);
        tale_model_free(model);
        tale_dataset_free(ds);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(tale_model_load(ptr::null(), &mut model), TaleStatus::NullPointer);
        assert_eq!(tale_model_load(cstr("/nonexistent/model.bin").as_ptr(), &mut model), TaleStatus::Io);
        assert!(!last_error().is_empty());
        assert!(model.is_null());

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.bin");
        std::fs::write(&junk, b"not a model").unwrap();
        assert_eq!(tale_model_load(cstr(junk.to_str().unwrap()).as_ptr(), &mut model), TaleStatus::Format);

        let ds = prepared(dir.path());
        assert_eq!(tale_train(ds, cstr("lambda = -1.0").as_ptr(), &mut model), TaleStatus::Config);
        assert_eq!(tale_train(ds, cstr("unknown_key = 1").as_ptr(), &mut model), TaleStatus::Config);
        assert_eq!(tale_train(ptr::null(), ptr::null(), &mut model), TaleStatus::NullPointer);
        let mut metrics = TaleMetrics::default();
        assert_eq!(tale_evaluate(ptr::null(), ds, true, &mut metrics), TaleStatus::NullPointer);
        tale_dataset_free(ds);
        tale_dataset_free(ptr::null_mut());
        tale_model_free(ptr::null_mut());
        assert_eq!(CStr::from_ptr(tale_version()).to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}

fn target_dir() -> PathBuf {
    // tests run from <target>/<profile>/deps
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_static_library() {
    let lib = target_dir().join("libtale_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping: no C compiler or static library");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let log = write_log(dir.path());
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "tale.h"

int main(int argc, char **argv) {
    char cfg[4096];
    snprintf(cfg, sizeof cfg, "input_path = \"%s\"\nk_core = 0\nlambda = 1.0\n", argv[1]);
    TaleDataset *ds = NULL;
    if (tale_dataset_prepare(cfg, &ds) != TALE_STATUS_OK) { fprintf(stderr, "%s\n", tale_last_error()); return 1; }
    TaleModel *model = NULL;
    if (tale_train(ds, cfg, &model) != TALE_STATUS_OK) { fprintf(stderr, "%s\n", tale_last_error()); return 2; }
    TaleMetrics m;
    if (tale_evaluate(model, ds, true, &m) != TALE_STATUS_OK) return 3;
    printf("%llu %.3f\n", (unsigned long long)m.users, m.hr_at_10);
    tale_model_free(model);
    tale_dataset_free(ds);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).arg(&log).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("40 "), "{text}");
}
