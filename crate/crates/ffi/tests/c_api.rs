use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use spo_ffi::*;

fn matrix(rows: &[[f64; 3]]) -> *mut SpoMatrix {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { spo_matrix_new(flat.as_ptr(), 3, &mut m) }, SpoStatus::Ok);
    m
}

#[test]
fn counterexample_minimax_winner() {
    let m = matrix(&[[0.0, 0.4, -1.0], [-0.4, 0.0, 1.0], [1.0, -1.0, 0.0]]);
    assert_eq!(unsafe { spo_matrix_size(m) }, 3);
    let mut p = [0.0; 3];
    let (mut v, mut e) = (1.0, 1.0);
    assert_eq!(unsafe { spo_minimax_winner(m, p.as_mut_ptr(), 3, &mut v, &mut e) }, SpoStatus::Ok);
    for (got, want) in p.iter().zip([5.0 / 12.0, 5.0 / 12.0, 1.0 / 6.0]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert!(v.abs() < 1e-12 && e.abs() < 1e-12);
    let mut short = [0.0; 2];
    let st = unsafe { spo_minimax_winner(m, short.as_mut_ptr(), 2, ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, SpoStatus::DimensionMismatch);
    unsafe { spo_matrix_free(m) };
}

#[test]
fn exploitability_of_a_pure_strategy() {
    // rock-paper-scissors: pure rock loses 1 to paper, exploitability 2
    let m = matrix(&[[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]]);
    let mut out = 0.0;
    let rock = [1.0, 0.0, 0.0];
    assert_eq!(unsafe { spo_exploitability(m, rock.as_ptr(), 3, &mut out) }, SpoStatus::Ok);
    assert_eq!(out, 2.0);
    let bad = [0.7, 0.7, 0.0];
    assert_eq!(unsafe { spo_exploitability(m, bad.as_ptr(), 3, &mut out) }, SpoStatus::InvalidInput);
    unsafe { spo_matrix_free(m) };
}

#[test]
fn hedge_self_play_stays_uniform_on_rps() {
    let m = matrix(&[[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]]);
    let mut avg = [0.0; 3];
    let mut regret = f64::NAN;
    let st = unsafe { spo_selfplay_hedge(m, 200, 0.0, avg.as_mut_ptr(), 3, &mut regret) };
    assert_eq!(st, SpoStatus::Ok);
    assert_eq!(avg, [1.0 / 3.0; 3]);
    assert!(regret.abs() < 1e-12);
    unsafe { spo_matrix_free(m) };
}

#[test]
fn experiment_handle_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        "scenario = \"dpo-counterexample\"\noutput = {:?}\njobs = 1\n",
        dir.path().to_str().unwrap()
    );
    let cfg = CString::new(cfg).unwrap();
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { spo_experiment_run(cfg.as_ptr(), &mut e) }, SpoStatus::Ok);
    assert_eq!(unsafe { spo_experiment_passed(e) }, 1);
    let mut needed = 0usize;
    let mut tiny = [0 as c_char; 4];
    let st = unsafe { spo_experiment_summary_json(e, tiny.as_mut_ptr(), tiny.len(), &mut needed) };
    assert_eq!(st, SpoStatus::BufferTooSmall);
    let mut buf = vec![0 as c_char; needed];
    let st = unsafe { spo_experiment_summary_json(e, buf.as_mut_ptr(), buf.len(), ptr::null_mut()) };
    assert_eq!(st, SpoStatus::Ok);
    let json = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    assert!(json.contains("\"scenario\":\"dpo-counterexample\""));
    assert!(dir.path().join("summary.json").exists());
    unsafe { spo_experiment_free(e) };
    assert_eq!(unsafe { spo_experiment_passed(ptr::null()) }, -1);
}

#[test]
fn bad_config_sets_the_error_message() {
    let cfg = CString::new("scenario = \"no-such-scenario\"").unwrap();
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { spo_experiment_run(cfg.as_ptr(), &mut e) }, SpoStatus::Config);
    assert!(e.is_null());
    let mut buf = [0 as c_char; 256];
    unsafe { spo_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let msg = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy();
    assert!(msg.contains("no-such-scenario"), "{msg}");
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/spo_ffi.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "spo_last_error_message",
        "spo_matrix_new",
        "spo_matrix_free",
        "spo_matrix_size",
        "spo_minimax_winner",
        "spo_exploitability",
        "spo_selfplay_hedge",
        "spo_experiment_run",
        "spo_experiment_passed",
        "spo_experiment_summary_json",
        "spo_experiment_free",
        "SPO_STATUS_BUFFER_TOO_SMALL",
    ] {
        assert!(text.contains(f), "{f} missing from header");
    }
    // syntax check only when a C compiler is around
    if let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"]).arg(&header).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
