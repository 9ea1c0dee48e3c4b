use std::ffi::{c_char, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use seqmetro::asymptotics::covariance_matrix;
use seqmetro::instrument::build_generators;
use seqmetro::model::{ChannelSpec, ModelSpec};
use seqmetro::thermometer::{thermometer_instrument, ThermometerParams};
use seqmetro::trajectory::sample_statistics;
use seqmetro_ffi::*;

const P: (f64, f64, f64, f64, f64) = (1.0, 2.0, 0.7, 0.5, 0.3);

fn thermometer() -> *mut SmInstrument {
    let mut h = ptr::null_mut();
    let st = unsafe { sm_instrument_thermometer(P.0, P.1, P.2, P.3, P.4, &mut h) };
    assert_eq!(st, SmStatus::Ok);
    assert!(!h.is_null());
    h
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { sm_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn moments_match_library() {
    let p = ThermometerParams::new(P.0, P.1, P.2, P.3, P.4).unwrap();
    let gen = build_generators(&thermometer_instrument(&p).unwrap(), 2).unwrap();
    let rep = covariance_matrix(&gen, 2).unwrap();
    let h = thermometer();
    unsafe {
        let mut d = 0usize;
        assert_eq!(sm_instrument_dim(h, &mut d), SmStatus::Ok);
        assert_eq!(d, 2);
        let mut m = 0.0;
        assert_eq!(sm_stationary_mean(h, &mut m), SmStatus::Ok);
        assert_eq!(m, rep.mean);
        let mut s2 = 0.0;
        assert_eq!(sm_sigma2(h, &mut s2), SmStatus::Ok);
        assert!((s2 - rep.sigma2).abs() < 1e-14);
        let mut cov = [0.0; 9];
        assert_eq!(sm_covariance_matrix(h, 2, cov.as_mut_ptr(), cov.len()), SmStatus::Ok);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(cov[3 * i + j], rep.sigma[(i, j)]);
            }
        }
        sm_instrument_free(h);
    }
}

#[test]
fn sampling_matches_library_seeds() {
    let p = ThermometerParams::new(P.0, P.1, P.2, P.3, P.4).unwrap();
    let inst = thermometer_instrument(&p).unwrap();
    let direct = sample_statistics(&inst, &p.initial_state().unwrap(), 200, 2, 99).unwrap();
    let h = thermometer();
    let mut out = [0.0; 3];
    unsafe {
        assert_eq!(sm_sample_statistics(h, 200, 2, 99, out.as_mut_ptr(), 3), SmStatus::Ok);
        assert_eq!(out.to_vec(), direct.vector());
        let mut a = vec![0.0; 12];
        let mut b = vec![0.0; 12];
        assert_eq!(sm_sample_batch(h, 50, 2, 4, 5, a.as_mut_ptr(), a.len()), SmStatus::Ok);
        assert_eq!(sm_sample_batch(h, 50, 2, 4, 5, b.as_mut_ptr(), b.len()), SmStatus::Ok);
        assert_eq!(a, b);
        sm_instrument_free(h);
    }
}

#[test]
fn errors_are_reported() {
    let h = thermometer();
    unsafe {
        let mut cov = [0.0; 4];
        assert_eq!(sm_covariance_matrix(h, 2, cov.as_mut_ptr(), cov.len()), SmStatus::BufferTooSmall);
        assert!(last_error().contains("9 needed"));
        assert_eq!(sm_sigma2(h, ptr::null_mut()), SmStatus::NullPointer);
        assert_eq!(sm_sigma2(ptr::null(), &mut 0.0), SmStatus::NullPointer);
        let mut out = [0.0; 3];
        assert_eq!(sm_sample_statistics(h, 2, 2, 0, out.as_mut_ptr(), 3), SmStatus::InvalidArgument);
        let mut bad = ptr::null_mut();
        assert_eq!(
            sm_instrument_thermometer(1.0, 0.5, 0.0, 1.0, 0.0, &mut bad),
            SmStatus::InvalidArgument
        );
        assert!(bad.is_null());
        sm_instrument_free(h);
        sm_instrument_free(ptr::null_mut());
    }
    let mut buf = [0 as c_char; 4];
    let n = unsafe { sm_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 3);
    assert_eq!(buf[3], 0);
}

#[test]
fn json_models() {
    let p = ThermometerParams::new(P.0, P.1, P.2, P.3, P.4).unwrap();
    let mut spec = ModelSpec::thermometer(&p).unwrap();
    let text = CString::new(spec.to_json().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(sm_instrument_from_json(text.as_ptr(), &mut h), SmStatus::Ok);
        let mut m = 0.0;
        assert_eq!(sm_stationary_mean(h, &mut m), SmStatus::Ok);
        // ⟨S⟩* = cos2η · z*, z* = -γ/γβ
        assert!((m + 0.5 * (2.0 * P.4).cos()).abs() < 1e-12);
        sm_instrument_free(h);

        let broken = CString::new("{\"dimension\": 2,").unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(sm_instrument_from_json(broken.as_ptr(), &mut h), SmStatus::Parse);
        assert!(h.is_null());
        assert!(last_error().contains("parse error"));

        // identity channel: every state is fixed
        spec.channel = ChannelSpec {
            kraus: vec![vec![vec![[1.0, 0.0], [0.0, 0.0]], vec![[0.0, 0.0], [1.0, 0.0]]]],
        };
        spec.measurement.truncate(0);
        spec.measurement.push(seqmetro::model::OutcomeSpec {
            value: 1.0,
            kraus: vec![vec![vec![[1.0, 0.0], [0.0, 0.0]], vec![[0.0, 0.0], [0.0, 0.0]]]],
        });
        spec.measurement.push(seqmetro::model::OutcomeSpec {
            value: -1.0,
            kraus: vec![vec![vec![[0.0, 0.0], [0.0, 0.0]], vec![[0.0, 0.0], [1.0, 0.0]]]],
        });
        let text = CString::new(spec.to_json().unwrap()).unwrap();
        assert_eq!(sm_instrument_from_json(text.as_ptr(), &mut h), SmStatus::Ok);
        assert_eq!(sm_sigma2(h, &mut 0.0), SmStatus::NonErgodic);
        sm_instrument_free(h);
    }
}

#[test]
fn thermometer_fisher_layout() {
    let mut out = [0.0; 5];
    let st = unsafe { sm_thermometer_fisher(P.0, P.1, P.2, P.3, P.4, 2, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, SmStatus::Ok);
    assert!(out[0] > 0.0 && out[1] >= out[0] && out[2] >= out[1]);
    let p = ThermometerParams::new(P.0, P.1, P.2, P.3, P.4).unwrap();
    let (f, fq) = seqmetro::thermometer::fisher_standard(&p).unwrap();
    assert_eq!((out[3], out[4]), (f, fq));
    assert!(f <= fq * (1.0 + 1e-12));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/seqmetro.h")).unwrap();
    for name in [
        "sm_version",
        "sm_last_error_message",
        "sm_instrument_thermometer",
        "sm_instrument_from_json",
        "sm_instrument_free",
        "sm_instrument_dim",
        "sm_stationary_mean",
        "sm_sigma2",
        "sm_covariance_matrix",
        "sm_sample_statistics",
        "sm_sample_batch",
        "sm_thermometer_fisher",
        "typedef struct SmInstrument SmInstrument",
        "SM_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "seqmetro.h"

int main(void) {
    SmInstrument *h = NULL;
    if (sm_instrument_thermometer(1.0, 2.0, 0.7, 0.5, 0.3, &h) != SM_STATUS_OK) return 1;
    double mean = 0.0, s2 = 0.0;
    if (sm_stationary_mean(h, &mean) != SM_STATUS_OK) return 2;
    if (sm_sigma2(h, &s2) != SM_STATUS_OK) return 3;
    double small[1];
    if (sm_covariance_matrix(h, 1, small, 1) != SM_STATUS_BUFFER_TOO_SMALL) return 4;
    char msg[128];
    sm_last_error_message(msg, sizeof msg);
    sm_instrument_free(h);
    printf("%.17g %.17g %s\n", mean, s2, msg);
    return 0;
}
"#;

fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?;
    let lib = dir.join("libseqmetro_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_against_static_library() {
    let Some(lib) = static_lib() else {
        panic!("libseqmetro_ffi.a not found next to the test binary");
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler on PATH; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg(&src)
        .arg(format!("-I{}", concat!(env!("CARGO_MANIFEST_DIR"), "/include")))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut parts = text.split_whitespace();
    let mean: f64 = parts.next().unwrap().parse().unwrap();
    let s2: f64 = parts.next().unwrap().parse().unwrap();
    let p = ThermometerParams::new(P.0, P.1, P.2, P.3, P.4).unwrap();
    let gen = build_generators(&thermometer_instrument(&p).unwrap(), 1).unwrap();
    assert_eq!(mean, gen.mean());
    assert!((s2 - seqmetro::asymptotics::sigma2(&gen).unwrap()).abs() < 1e-14);
    assert!(text.contains("needed"));
}
