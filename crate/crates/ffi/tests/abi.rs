use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use ideal_ffi::*;

fn last_error() -> String {
    let p = ideal_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_config() -> *mut IdealConfig {
    let text = CString::new("budget = 3\ncycles = 2\ntrain_steps_per_cycle = 5\nhidden_layers = [8]\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { ideal_config_from_toml(text.as_ptr(), &mut cfg) }, IdealStatus::Ok);
    cfg
}

fn small_dataset(seed: u64) -> *mut IdealDataset {
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { ideal_dataset_synthetic(2, 2, 40, 3, 0.1, seed, &mut ds) }, IdealStatus::Ok);
    ds
}

#[test]
fn engine_round_trip() {
    unsafe {
        let cfg = small_config();
        let ds = small_dataset(1);
        assert_eq!(ideal_dataset_len(ds), 80);
        assert_eq!(ideal_dataset_dim(ds), 3);
        let mut eng = ptr::null_mut();
        assert_eq!(ideal_engine_new(cfg, ds, &mut eng), IdealStatus::Ok);
        ideal_config_free(cfg);
        ideal_dataset_free(ds);
        let start = ideal_engine_labeled_count(eng);
        let mut s = IdealCycleSummary::default();
        assert_eq!(ideal_engine_run_cycle(eng, &mut s), IdealStatus::Ok);
        assert_eq!(s.n_selected, 3);
        assert!((0.0..=1.0).contains(&s.accuracy));
        assert!(s.mean_in_total.is_finite());
        assert_eq!(ideal_engine_labeled_count(eng), start + 3);

        let mut ids = [0u64; 2];
        let mut n = 0;
        assert_eq!(ideal_engine_last_selected(eng, ids.as_mut_ptr(), 2, &mut n), IdealStatus::BufferTooSmall);
        assert_eq!(n, 3);
        let mut ids = [0u64; 3];
        assert_eq!(ideal_engine_last_selected(eng, ids.as_mut_ptr(), 3, &mut n), IdealStatus::Ok);
        ideal_engine_free(eng);
    }
}

#[test]
fn random_strategy_has_no_inconsistency() {
    unsafe {
        let cfg = small_config();
        assert_eq!(ideal_config_set_strategy(cfg, IdealStrategy::Random), IdealStatus::Ok);
        assert_eq!(ideal_config_set_seed(cfg, 9), IdealStatus::Ok);
        let ds = small_dataset(2);
        let mut eng = ptr::null_mut();
        assert_eq!(ideal_engine_new(cfg, ds, &mut eng), IdealStatus::Ok);
        let mut s = IdealCycleSummary::default();
        assert_eq!(ideal_engine_run_cycle(eng, &mut s), IdealStatus::Ok);
        assert!(s.mean_in_total.is_nan());
        ideal_engine_free(eng);
        ideal_config_free(cfg);
        ideal_dataset_free(ds);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let bad = CString::new("bogus = 1\n").unwrap();
        let mut cfg = ptr::null_mut();
        assert_eq!(ideal_config_from_toml(bad.as_ptr(), &mut cfg), IdealStatus::Config);
        assert!(last_error().contains("bogus"));
        assert!(cfg.is_null());

        assert_eq!(ideal_config_from_toml(ptr::null(), &mut cfg), IdealStatus::NullPointer);

        let cfg = ideal_config_default();
        assert_eq!(ideal_config_set_budget(cfg, 0, 1), IdealStatus::Config);
        ideal_config_free(cfg);

        let missing = CString::new("/nonexistent/data.csv").unwrap();
        let mut ds = ptr::null_mut();
        assert_eq!(ideal_dataset_load(missing.as_ptr(), &mut ds), IdealStatus::Io);

        assert_eq!(ideal_dataset_synthetic(2, 0, 10, 2, 0.1, 0, &mut ds), IdealStatus::Usage);

        let p = [0.7, 0.7];
        let mut out = 0.0;
        assert_eq!(ideal_entropy(p.as_ptr(), 2, &mut out), IdealStatus::Usage);

        // success clears the stored message
        let ok = [0.5, 0.5];
        assert_eq!(ideal_entropy(ok.as_ptr(), 2, &mut out), IdealStatus::Ok);
        assert!(ideal_last_error().is_null());
        assert!((out - 2f64.ln()).abs() < 1e-15);
    }
}

#[test]
fn scoring_primitives() {
    unsafe {
        let preds = [1.0, 0.0, 0.0, 1.0];
        let mut v = 0.0;
        assert_eq!(ideal_coarse_inconsistency(preds.as_ptr(), 2, 2, &mut v), IdealStatus::Ok);
        assert!((v - 0.5).abs() < 1e-15);

        let coarse = [1.0, 0.0];
        let perturbed = [0.5, 0.5];
        assert_eq!(ideal_fine_inconsistency(coarse.as_ptr(), perturbed.as_ptr(), 1, 2, &mut v), IdealStatus::Ok);
        assert!((v - 2f64.ln()).abs() < 1e-12);

        let values = [3.0, 1.0, 2.0, 2.0];
        let mut pct = [0.0; 4];
        assert_eq!(ideal_percentiles(values.as_ptr(), 4, pct.as_mut_ptr()), IdealStatus::Ok);
        assert_eq!(pct, [0.75, 0.0, 0.25, 0.25]);

        let p = [0.5, 0.5];
        let q = [0.5, 0.5];
        assert_eq!(ideal_kl_divergence(p.as_ptr(), q.as_ptr(), 2, &mut v), IdealStatus::Ok);
        assert_eq!(v, 0.0);
    }
}

#[test]
fn header_matches_and_c_program_runs() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(crate_dir.join("include/ideal.h")).unwrap();
    for name in ["ideal_engine_run_cycle", "ideal_last_error", "IDEAL_STATUS_POOL_EXHAUSTED", "IdealCycleSummary"] {
        assert!(header.contains(name), "header lacks {name}");
    }
    // target/<profile>/deps/abi-* -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap();
    let lib = profile_dir.join("libideal_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping C build: no cc or no static library at {}", lib.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let bin = tmp.path().join("smoke");
    let status = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Wextra", "-Werror", "-I"])
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C smoke program failed to compile");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C smoke program exited with {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("cycle 0"));
}
