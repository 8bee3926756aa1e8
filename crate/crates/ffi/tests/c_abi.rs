use std::ffi::{c_char, CString};
use std::ptr;

use meal_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { meal_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&b| b as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn build(tier: &str, seed: u64) -> *mut MealModel {
    let tier = CString::new(tier).unwrap();
    let mut m = ptr::null_mut();
    let s = unsafe { meal_model_build(tier.as_ptr(), 4, 8, seed, &mut m) };
    assert_eq!(s, MealStatus::Ok, "{}", last_error());
    m
}

fn images(n: usize) -> Vec<f64> {
    (0..n * 8 * 8 * 3).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect()
}

#[test]
fn model_forward_and_round_trip() {
    let m = build("student-tiny", 3);
    unsafe {
        assert_eq!(meal_model_num_classes(m), 4);
        assert_eq!(meal_model_resolution(m), 8);
        let x = images(2);
        let mut a = vec![0.0; 8];
        assert_eq!(meal_model_forward(m, x.as_ptr(), 2, a.as_mut_ptr(), a.len()), MealStatus::Ok);
        assert!(a.iter().all(|v| v.is_finite()));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
        assert_eq!(meal_model_save(m, path.as_ptr()), MealStatus::Ok, "{}", last_error());
        let mut back = ptr::null_mut();
        assert_eq!(meal_model_load(path.as_ptr(), &mut back), MealStatus::Ok, "{}", last_error());
        let mut b = vec![0.0; 8];
        assert_eq!(meal_model_forward(back, x.as_ptr(), 2, b.as_mut_ptr(), b.len()), MealStatus::Ok);
        assert_eq!(a, b);
        meal_model_free(back);
        meal_model_free(m);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let tier = CString::new("huge").unwrap();
    let mut m = ptr::null_mut();
    let s = unsafe { meal_model_build(tier.as_ptr(), 4, 8, 0, &mut m) };
    assert_ne!(s, MealStatus::Ok);
    assert!(m.is_null());
    assert!(!last_error().is_empty());

    let missing = CString::new("/nonexistent/ckpt.json").unwrap();
    assert_eq!(unsafe { meal_model_load(missing.as_ptr(), &mut m) }, MealStatus::MissingFile);

    let mut out = [0.0; 8];
    let s = unsafe { meal_model_forward(ptr::null(), ptr::null(), 1, out.as_mut_ptr(), 8) };
    assert_eq!(s, MealStatus::NullPointer);

    let model = build("student-tiny", 0);
    let x = images(2);
    let s = unsafe { meal_model_forward(model, x.as_ptr(), 2, out.as_mut_ptr(), 3) };
    assert_eq!(s, MealStatus::InvalidArgument);
    assert!(last_error().contains("needed"));
    unsafe { meal_model_free(model) };
}

#[test]
fn ensemble_averages_members() {
    let a = build("student-tiny", 1);
    let b = build("student-tiny", 2);
    let members = [a as *const MealModel, b as *const MealModel];
    let mut e = ptr::null_mut();
    unsafe {
        assert_eq!(meal_ensemble_new(members.as_ptr(), 2, &mut e), MealStatus::Ok, "{}", last_error());
        let x = images(3);
        let mut p = vec![0.0; 12];
        assert_eq!(meal_ensemble_predict(e, x.as_ptr(), 3, p.as_mut_ptr(), p.len()), MealStatus::Ok);
        for row in p.chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        let mut expected = vec![0.0; 12];
        for m in [a, b] {
            let mut z = vec![0.0; 12];
            meal_model_forward(m, x.as_ptr(), 3, z.as_mut_ptr(), 12);
            for (row, acc) in z.chunks(4).zip(expected.chunks_mut(4)) {
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                for (o, v) in acc.iter_mut().zip(row) {
                    *o += (v - mx).exp() / s / 2.0;
                }
            }
        }
        for (u, v) in p.iter().zip(&expected) {
            assert!((u - v).abs() < 1e-12);
        }
        meal_ensemble_free(e);
        assert_eq!(meal_ensemble_new(members.as_ptr(), 0, &mut e), MealStatus::Config);
        meal_model_free(a);
        meal_model_free(b);
    }
}

#[test]
fn losses_match_closed_forms() {
    let p = [0.5, 0.5];
    let z = [0.0, 0.0];
    let mut v = f64::NAN;
    let mut g = [f64::NAN; 2];
    unsafe {
        assert_eq!(meal_kl_loss(p.as_ptr(), z.as_ptr(), 1, 2, &mut v, g.as_mut_ptr()), MealStatus::Ok);
        assert!(v.abs() < 1e-12);
        assert!(g.iter().all(|x| x.abs() < 1e-12));
        assert_eq!(meal_ce_loss(p.as_ptr(), z.as_ptr(), 1, 2, &mut v, ptr::null_mut()), MealStatus::Ok);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);

        let y = [1.0, 0.0];
        let q = [0.5, 0.5];
        assert_eq!(meal_bce_loss(y.as_ptr(), q.as_ptr(), 2, &mut v), MealStatus::Ok);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-6);

        assert_eq!(
            meal_multilabel_sigmoid_ce(y.as_ptr(), z.as_ptr(), 1, 2, &mut v, g.as_mut_ptr()),
            MealStatus::Ok
        );
        assert!((v - std::f64::consts::LN_2).abs() < 1e-6);
        assert!((g[0] + 0.25).abs() < 1e-12 && (g[1] - 0.25).abs() < 1e-12);

        let bad = [0.7, 0.7];
        assert_ne!(
            meal_kl_loss(bad.as_ptr(), z.as_ptr(), 1, 2, &mut v, ptr::null_mut()),
            MealStatus::Ok
        );
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { std::ffi::CStr::from_ptr(meal_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_surface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/meal.h")).unwrap();
    for name in [
        "meal_model_build",
        "meal_model_forward",
        "meal_ensemble_predict",
        "meal_kl_loss",
        "meal_last_error_message",
        "MEAL_STATUS_PANIC",
        "typedef struct MealModel MealModel",
    ] {
        assert!(header.contains(name), "{name}");
    }
}
