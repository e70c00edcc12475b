use std::ffi::{CStr, CString};
use std::ptr;
use telerisk_core::risk::{self, DriverPosterior, GammaPrior, MltcProfile};
use telerisk_ffi::*;

fn last_error() -> String {
    let p = telerisk_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn wave(n: usize) -> Vec<f64> {
    (0..n).map(|t| (t as f64 * 0.37).sin() + 0.1 * (t as f64 * 1.9).cos()).collect()
}

#[test]
fn modwt_round_trip_through_handles() {
    let x = wave(256);
    let mut d = ptr::null_mut();
    unsafe {
        assert_eq!(telerisk_modwt_forward(x.as_ptr(), x.len(), 4, TeleriskFamily::D4, &mut d), TeleriskStatus::Ok);
        assert_eq!(telerisk_decomposition_len(d), 256);
        assert_eq!(telerisk_decomposition_levels(d), 4);
        let mut back = vec![0.0; 256];
        assert_eq!(telerisk_decomposition_inverse(d, back.as_mut_ptr(), back.len()), TeleriskStatus::Ok);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
        let mut agg = vec![0.0; 256];
        assert_eq!(
            telerisk_decomposition_aggregate(d, TeleriskRule::SignedMaxAbs, agg.as_mut_ptr(), agg.len()),
            TeleriskStatus::Ok
        );
        let mut level = vec![0.0; 256];
        assert_eq!(telerisk_decomposition_level(d, 1, level.as_mut_ptr(), level.len()), TeleriskStatus::Ok);
        assert!(agg.iter().zip(&level).all(|(a, l)| a.abs() >= l.abs()));
        assert_eq!(telerisk_decomposition_level(d, 5, level.as_mut_ptr(), level.len()), TeleriskStatus::Config);
        assert_eq!(telerisk_decomposition_level(d, 0, level.as_mut_ptr(), 10), TeleriskStatus::BufferTooSmall);
        telerisk_decomposition_free(d);
    }
}

#[test]
fn short_series_is_a_data_error() {
    let x = wave(8);
    let mut d = ptr::null_mut();
    let status = unsafe { telerisk_modwt_forward(x.as_ptr(), x.len(), 6, TeleriskFamily::D4, &mut d) };
    assert_eq!(status, TeleriskStatus::Data);
    assert!(d.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_arguments_are_reported() {
    let mut d = ptr::null_mut();
    let status = unsafe { telerisk_modwt_forward(ptr::null(), 64, 2, TeleriskFamily::Haar, &mut d) };
    assert_eq!(status, TeleriskStatus::NullPointer);
    assert!(last_error().contains("samples"));
    unsafe {
        telerisk_decomposition_free(ptr::null_mut());
        telerisk_severity_model_free(ptr::null_mut());
        telerisk_driver_posterior_free(ptr::null_mut());
        telerisk_string_free(ptr::null_mut());
    }
}

#[test]
fn weights_match_the_library() {
    let pis = [0.00071, 0.00322, 0.00547, 0.01591];
    let mut w = [0.0; 4];
    unsafe {
        assert_eq!(telerisk_severity_weights(pis.as_ptr(), 4, 1.7, w.as_mut_ptr()), TeleriskStatus::Ok);
    }
    assert_eq!(w.to_vec(), risk::severity_weights(&pis, 1.7).unwrap().weights);
    let bad = [0.5, 1.5];
    assert_eq!(unsafe { telerisk_severity_weights(bad.as_ptr(), 2, 1.0, w.as_mut_ptr()) }, TeleriskStatus::Config);
}

#[test]
fn trip_and_driver_indices_agree_with_core() {
    let alpha = [2.0, 3.0, 1.5];
    let beta = [1000.0, 800.0, 1200.0];
    let weights = [0.5, 0.2, 0.3];
    let trips: [([u64; 3], u64); 3] = [([1, 0, 2], 400), ([3, 1, 0], 350), ([0, 0, 1], 500)];
    let prior = GammaPrior { alpha: alpha.to_vec(), beta: beta.to_vec(), omega: 0.0, fallback_used: vec![false; 3] };
    let sw = risk::SeverityWeights { gamma: 1.0, weights: weights.to_vec() };
    let mut core = DriverPosterior::new("", &prior);

    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(telerisk_driver_posterior_new(alpha.as_ptr(), beta.as_ptr(), 3, &mut h), TeleriskStatus::Ok);
        let mut idx = 0.0;
        assert_eq!(telerisk_driver_posterior_index(h, weights.as_ptr(), 3, &mut idx), TeleriskStatus::Data);
        for (counts, e) in &trips {
            let profile =
                MltcProfile { driver_id: String::new(), trip_id: String::new(), exposure: *e, counts: counts.to_vec() };
            let mut ti = 0.0;
            assert_eq!(
                telerisk_trip_index(alpha.as_ptr(), beta.as_ptr(), weights.as_ptr(), counts.as_ptr(), 3, *e, &mut ti),
                TeleriskStatus::Ok
            );
            assert_eq!(ti, risk::trip_index(&profile, &prior, &sw).unwrap().index);
            assert_eq!(telerisk_driver_posterior_update(h, counts.as_ptr(), 3, *e), TeleriskStatus::Ok);
            core.update(&profile).unwrap();
            assert_eq!(telerisk_driver_posterior_index(h, weights.as_ptr(), 3, &mut idx), TeleriskStatus::Ok);
            assert_eq!(idx, core.index(&sw).unwrap());
        }
        let mut means = [0.0; 3];
        assert_eq!(telerisk_driver_posterior_means(h, means.as_mut_ptr(), 3), TeleriskStatus::Ok);
        for (k, m) in means.iter().enumerate() {
            assert_eq!(*m, core.posterior_mean(k));
        }
        telerisk_driver_posterior_free(h);
    }
}

#[test]
fn severity_model_fit_json_and_counts() {
    // two bulk clusters plus sparse tails on either side
    let mut data = Vec::new();
    for i in 0..1800 {
        let u = ((i * 7919) % 1000) as f64 / 1000.0 - 0.5;
        data.push(if i % 2 == 0 { -0.015 + 0.01 * u } else { 0.015 + 0.01 * u });
    }
    for k in 0..100 {
        let mag = 0.05 + 0.0015 * k as f64;
        data.push(if k % 2 == 0 { -mag } else { mag });
    }
    let mut m = ptr::null_mut();
    unsafe {
        let status = telerisk_severity_fit(data.as_ptr(), data.len(), 2, 1, 1, 0.05, 3, 3, 1, &mut m);
        assert_eq!(
            status,
            TeleriskStatus::Ok,
            "{}",
            if status == TeleriskStatus::Ok { String::new() } else { last_error() }
        );
        assert_eq!(telerisk_severity_layer_count(m), 2);
        assert!(telerisk_severity_loglik(m).is_finite());
        let mut pis = [0.0; 2];
        assert_eq!(telerisk_severity_layer_probabilities(m, pis.as_mut_ptr(), 2), TeleriskStatus::Ok);
        assert!(pis.iter().all(|p| *p > 0.0 && *p < 0.1));

        let retained: Vec<usize> = (0..data.len()).step_by(3).collect();
        let mut counts = [0u64; 2];
        let mut exposure = 0;
        assert_eq!(
            telerisk_severity_mltc(
                m,
                data.as_ptr(),
                data.len(),
                retained.as_ptr(),
                retained.len(),
                counts.as_mut_ptr(),
                2,
                &mut exposure
            ),
            TeleriskStatus::Ok
        );
        assert_eq!(exposure, retained.len() as u64);
        assert!(counts.iter().sum::<u64>() > 0);

        let mut json = ptr::null_mut();
        assert_eq!(telerisk_severity_model_to_json(m, &mut json), TeleriskStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(telerisk_severity_model_from_json(json, &mut again), TeleriskStatus::Ok);
        assert_eq!(telerisk_severity_loglik(again), telerisk_severity_loglik(m));
        telerisk_string_free(json);
        telerisk_severity_model_free(again);
        telerisk_severity_model_free(m);

        let garbage = CString::new("{\"gaussians\": 3}").unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(telerisk_severity_model_from_json(garbage.as_ptr(), &mut none), TeleriskStatus::Data);
        assert!(none.is_null());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/telerisk.h")).unwrap();
    let source = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exported: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exported.len() >= 20);
    for name in exported {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    std::fs::write(&src, "#include \"telerisk.h\"\nint main(void) { return telerisk_last_error() == NULL ? 0 : 1; }\n")
        .unwrap();
    let out = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok())
        .ok_or(())
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "telerisk.h"

int main(void) {
    double x[128], back[128];
    for (int t = 0; t < 128; t++) x[t] = sin(0.3 * t);
    TeleriskDecomposition *d = NULL;
    if (telerisk_modwt_forward(x, 128, 3, TELERISK_FAMILY_D4, &d) != TELERISK_STATUS_OK) return 1;
    if (telerisk_decomposition_inverse(d, back, 128) != TELERISK_STATUS_OK) return 2;
    telerisk_decomposition_free(d);
    for (int t = 0; t < 128; t++) if (fabs(x[t] - back[t]) > 1e-10) return 3;

    double pis[2] = {0.01, 0.001}, w[2];
    if (telerisk_severity_weights(pis, 2, 1.0, w) != TELERISK_STATUS_OK) return 4;
    if (!(w[1] > w[0])) return 5;
    if (telerisk_severity_weights(pis, 2, -1.0, w) != TELERISK_STATUS_CONFIG) return 6;
    if (telerisk_last_error() == NULL) return 7;
    printf("ok %s\n", telerisk_version());
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else { return };
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let lib = [deps.join("libtelerisk_ffi.a"), deps.join("../libtelerisk_ffi.a")].into_iter().find(|p| p.is_file());
    let Some(lib) = lib else {
        eprintln!("static library not built; skipping link check");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let out = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = std::process::Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
