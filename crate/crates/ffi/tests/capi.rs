use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use condpolicy::conditioning::{psi, CondConfig};
use condpolicy::rollout::gae;
use condpolicy_ffi::*;

fn last_error() -> String {
    let n = unsafe { cp_last_error(ptr::null_mut(), 0) };
    let mut buf = vec![0 as std::ffi::c_char; n + 1];
    unsafe { cp_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned()
}

fn new_policy(obs: usize, act: usize, hidden: &[usize], discrete: bool, seed: u64) -> *mut CpPolicy {
    let mut p = ptr::null_mut();
    let st = unsafe { cp_policy_new(obs, act, hidden.as_ptr(), hidden.len(), discrete, seed, &mut p) };
    assert_eq!(st, CpStatus::Ok, "{}", last_error());
    assert!(!p.is_null());
    p
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(cp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn psi_matches_core() {
    let j = [0.25, 1.0, 7.0, 20.0, 31.5];
    let (mut p, mut lo, mut hi) = (0.0, 0.0, 0.0);
    let st = unsafe { cp_psi(j.as_ptr(), j.len(), 1.0, 20.0, &mut p, &mut lo, &mut hi) };
    assert_eq!(st, CpStatus::Ok);
    let want = psi(&j, &CondConfig::default());
    assert_eq!((p, lo, hi), (want.psi, want.psi_min, want.psi_max));
    // (0.75² + 11.5²) / 5
    assert!((p - (0.5625 + 132.25) / 5.0).abs() < 1e-12);

    let (mut a, mut b) = (0.0, 0.0);
    assert_eq!(unsafe { cp_psi_terms(0.5, 1.0, 20.0, &mut a, &mut b) }, CpStatus::Ok);
    assert_eq!((a, b), (0.25, 0.0));
    assert_eq!(unsafe { cp_psi_terms(22.0, 1.0, 20.0, &mut a, &mut b) }, CpStatus::Ok);
    assert_eq!((a, b), (0.0, 4.0));
}

#[test]
fn psi_rejects_bad_interval_with_message() {
    let j = [1.0];
    let st = unsafe {
        cp_psi(
            j.as_ptr(),
            1,
            5.0,
            2.0,
            ptr::null_mut(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(st, CpStatus::InvalidArgument);
    assert!(last_error().contains("lambda_min"), "{}", last_error());
    // Success clears the message.
    assert_eq!(
        unsafe {
            cp_psi(
                j.as_ptr(),
                1,
                1.0,
                2.0,
                ptr::null_mut(),
                ptr::null_mut(),
                ptr::null_mut(),
            )
        },
        CpStatus::Ok
    );
    assert_eq!(last_error(), "");
}

#[test]
fn null_inputs_are_reported() {
    let st = unsafe {
        cp_psi(
            ptr::null(),
            3,
            1.0,
            20.0,
            ptr::null_mut(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(st, CpStatus::NullPointer);
    assert!(last_error().contains('j'));
    let (mut a, mut b) = (0usize, 0usize);
    let mut d = false;
    assert_eq!(
        unsafe { cp_policy_dims(ptr::null(), &mut a, &mut b, &mut d) },
        CpStatus::NullPointer
    );
    assert_eq!(
        unsafe { cp_policy_load(ptr::null(), &mut ptr::null_mut()) },
        CpStatus::NullPointer
    );
    unsafe { cp_policy_free(ptr::null_mut()) };
}

#[test]
fn truncated_error_buffer_is_terminated() {
    let st = unsafe {
        cp_psi(
            ptr::null(),
            3,
            1.0,
            20.0,
            ptr::null_mut(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(st, CpStatus::NullPointer);
    let full = unsafe { cp_last_error(ptr::null_mut(), 0) };
    let mut buf = [1 as std::ffi::c_char; 4];
    assert_eq!(unsafe { cp_last_error(buf.as_mut_ptr(), buf.len()) }, full);
    assert_eq!(buf[3], 0);
}

#[test]
fn gae_matches_core() {
    let rewards = [1.0, 0.5, -0.2, 2.0, 0.0, 1.0];
    let values = [0.3, 0.1, 0.4, -0.5, 0.2, 0.9];
    let dones = [false, false, true, false, false, false];
    let truncs = [false, false, false, false, true, false];
    let boot = [0.0, 0.0, 0.0, 0.0, 0.7, 1.1];
    let mut adv = [0.0; 6];
    let mut ret = [0.0; 6];
    let st = unsafe {
        cp_gae(
            rewards.as_ptr(),
            values.as_ptr(),
            dones.as_ptr(),
            truncs.as_ptr(),
            boot.as_ptr(),
            6,
            0.99,
            0.95,
            adv.as_mut_ptr(),
            ret.as_mut_ptr(),
        )
    };
    assert_eq!(st, CpStatus::Ok, "{}", last_error());
    let (a, r) = gae(&rewards, &values, &dones, &truncs, &boot, 0.99, 0.95).unwrap();
    assert_eq!((adv.to_vec(), ret.to_vec()), (a, r));
    // Terminal step: advantage is the plain one-step error.
    assert!((adv[2] - (-0.2 - 0.4)).abs() < 1e-15);

    let bad = unsafe {
        cp_gae(
            rewards.as_ptr(),
            values.as_ptr(),
            dones.as_ptr(),
            truncs.as_ptr(),
            boot.as_ptr(),
            6,
            1.5,
            0.95,
            adv.as_mut_ptr(),
            ret.as_mut_ptr(),
        )
    };
    assert_eq!(bad, CpStatus::InvalidArgument);
}

#[test]
fn policy_roundtrip_and_outputs() {
    let p = new_policy(3, 2, &[8, 8], false, 7);
    let (mut obs, mut act) = (0usize, 0usize);
    let mut discrete = true;
    assert_eq!(
        unsafe { cp_policy_dims(p, &mut obs, &mut act, &mut discrete) },
        CpStatus::Ok
    );
    assert_eq!((obs, act, discrete), (3, 2, false));

    let states = [0.1, -0.2, 0.3, 1.0, 0.5, -1.5];
    let mut mean = [0.0; 4];
    assert_eq!(
        unsafe { cp_policy_act_mode(p, states.as_ptr(), 2, mean.as_mut_ptr(), 4) },
        CpStatus::Ok
    );
    let mut raw = [0.0; 4];
    assert_eq!(
        unsafe { cp_policy_actor_out(p, states.as_ptr(), 2, raw.as_mut_ptr(), 4) },
        CpStatus::Ok
    );
    assert_eq!(mean, raw);
    let mut small = [0.0; 3];
    assert_eq!(
        unsafe { cp_policy_actor_out(p, states.as_ptr(), 2, small.as_mut_ptr(), 3) },
        CpStatus::BufferTooSmall
    );

    let dir = tempfile::tempdir().unwrap();
    let file = CString::new(dir.path().join("p.cpol").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { cp_policy_save(p, file.as_ptr()) }, CpStatus::Ok);
    let mut q = ptr::null_mut();
    assert_eq!(unsafe { cp_policy_load(file.as_ptr(), &mut q) }, CpStatus::Ok);
    let mut v1 = [0.0; 2];
    let mut v2 = [0.0; 2];
    let mut again = [0.0; 4];
    unsafe {
        assert_eq!(cp_policy_values(p, states.as_ptr(), 2, v1.as_mut_ptr()), CpStatus::Ok);
        assert_eq!(cp_policy_values(q, states.as_ptr(), 2, v2.as_mut_ptr()), CpStatus::Ok);
        assert_eq!(
            cp_policy_act_mode(q, states.as_ptr(), 2, again.as_mut_ptr(), 4),
            CpStatus::Ok
        );
        cp_policy_free(p);
        cp_policy_free(q);
    }
    assert_eq!(v1, v2);
    assert_eq!(mean, again);
}

#[test]
fn discrete_mode_is_argmax() {
    let p = new_policy(4, 3, &[6], true, 2);
    let states = [0.3, -1.0, 0.2, 0.0, 1.0, 1.0, -0.5, 2.0];
    let mut logits = [0.0; 6];
    let mut act = [0.0; 2];
    unsafe {
        assert_eq!(
            cp_policy_actor_out(p, states.as_ptr(), 2, logits.as_mut_ptr(), 6),
            CpStatus::Ok
        );
        assert_eq!(
            cp_policy_act_mode(p, states.as_ptr(), 2, act.as_mut_ptr(), 2),
            CpStatus::Ok
        );
        cp_policy_free(p);
    }
    for r in 0..2 {
        let row = &logits[r * 3..r * 3 + 3];
        let best = (0..3).fold(0, |b, i| if row[i] > row[b] { i } else { b });
        assert_eq!(act[r], best as f64);
    }
}

#[test]
fn missing_checkpoint_is_io_error() {
    let file = CString::new("/nonexistent/dir/x.cpol").unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { cp_policy_load(file.as_ptr(), &mut p) }, CpStatus::Io);
    assert!(p.is_null());
    assert!(last_error().contains("x.cpol"));
}

#[test]
fn garbage_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cpol");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    let file = CString::new(path.to_str().unwrap()).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { cp_policy_load(file.as_ptr(), &mut p) }, CpStatus::Checkpoint);
}

#[test]
fn estimate_lies_within_exact_spectrum() {
    // Square Jacobian, so the estimate is bracketed by the extreme singular values.
    let p = new_policy(3, 3, &[16], false, 11);
    let states = [0.2, -0.4, 0.9, -1.0, 0.0, 0.5];
    let mut j = [0.0; 2];
    let mut j2 = [0.0; 2];
    unsafe {
        assert_eq!(
            cp_conditioning_estimate(p, states.as_ptr(), 2, 1e-4, 3, j.as_mut_ptr()),
            CpStatus::Ok
        );
        assert_eq!(
            cp_conditioning_estimate(p, states.as_ptr(), 2, 1e-4, 3, j2.as_mut_ptr()),
            CpStatus::Ok
        );
    }
    assert_eq!(j, j2);
    for (i, &ji) in j.iter().enumerate() {
        let (mut hi, mut lo, mut cond) = (0.0, 0.0, 0.0);
        let st = unsafe { cp_conditioning_exact(p, states[i * 3..].as_ptr(), 1e-5, &mut hi, &mut lo, &mut cond) };
        assert_eq!(st, CpStatus::Ok, "{}", last_error());
        assert!(lo <= hi && (cond - hi / lo).abs() < 1e-9 * cond);
        let slack = 1e-3 * hi;
        assert!(ji >= lo - slack && ji <= hi + slack, "{lo} <= {ji} <= {hi}");
    }
    let mut out = 0.0;
    let st = unsafe { cp_conditioning_exact(p, states.as_ptr(), -1.0, &mut out, &mut out, &mut out) };
    assert_eq!(st, CpStatus::InvalidArgument);
    unsafe { cp_policy_free(p) };
}

#[test]
fn header_is_generated_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/condpolicy.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "cp_version",
        "cp_last_error",
        "cp_policy_new",
        "cp_psi",
        "cp_gae",
        "CP_STATUS_OK",
        "typedef struct CpPolicy",
    ] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c99"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler found; skipping header compile check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
