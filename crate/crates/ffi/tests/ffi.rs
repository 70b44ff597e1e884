use probit_sun_ffi::*;
use std::ffi::CString;
use std::ptr;

fn last_error() -> String {
    let mut buf = vec![0u8; 512];
    let n = unsafe { psun_last_error(buf.as_mut_ptr().cast(), buf.len()) };
    String::from_utf8_lossy(&buf[..n.min(511)]).into_owned()
}

fn scalar(n: usize) -> *mut PsunModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { psun_model_scalar(n, 0.0, 1.0, 2.0, 1.0, 1.0, 1.0, &mut m) }, PsunStatus::Ok);
    m
}

#[test]
fn filter_reproduces_predictive_probabilities() {
    let m = scalar(2);
    let mut f = ptr::null_mut();
    unsafe {
        assert_eq!(psun_filter_new(m, 3, &mut f), PsunStatus::Ok);
        psun_model_free(m);
        let mut p = [0.0];
        assert_eq!(psun_filter_predict(f, p.as_mut_ptr(), 1), PsunStatus::Ok);
        assert!((p[0] - 0.5).abs() < 1e-12);
        let mut prob = 0.0;
        assert_eq!(psun_filter_step(f, [1u8].as_ptr(), 1, &mut prob), PsunStatus::Ok);
        assert!((prob - 0.5).abs() < 1e-12);
        assert_eq!(psun_filter_step(f, [1u8].as_ptr(), 1, &mut prob), PsunStatus::Ok);
        assert!((prob - 0.709786).abs() < 1e-4, "{prob}");
        assert_eq!(psun_filter_time(f), 2);
        assert_eq!(psun_filter_latent_dim(f), 2);
        assert_eq!(psun_filter_step(f, [1u8].as_ptr(), 1, ptr::null_mut()), PsunStatus::InvalidArgument);
        let mut draws = vec![0.0; 1000];
        assert_eq!(psun_filter_sample(f, 1000, 1, draws.as_mut_ptr(), 1000), PsunStatus::Ok);
        assert!(draws.iter().sum::<f64>() / 1000.0 > 0.5);
        psun_filter_free(f);
    }
}

#[test]
fn marginal_likelihood_of_scalar_example() {
    let m = scalar(2);
    let (mut v, mut se) = (0.0, 0.0);
    unsafe {
        assert_eq!(psun_marginal_likelihood(m, [1u8, 1].as_ptr(), 2, 0, &mut v, &mut se), PsunStatus::Ok);
        assert!((v - 0.354893).abs() < 1e-3);
        assert_eq!(psun_marginal_likelihood(m, [1u8].as_ptr(), 1, 0, &mut v, &mut se), PsunStatus::InvalidArgument);
        assert_eq!(psun_marginal_likelihood(m, [1u8, 2].as_ptr(), 2, 0, &mut v, &mut se), PsunStatus::Validation);
        psun_model_free(m);
    }
}

#[test]
fn error_codes_and_messages() {
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(psun_model_scalar(3, 0.0, 1.0, 2.0, 1.0, 1.0, 1.0, ptr::null_mut()), PsunStatus::NullPointer);
        assert!(last_error().contains("null"));
        assert_eq!(psun_model_scalar(3, 0.0, -1.0, 2.0, 1.0, 1.0, 1.0, &mut m), PsunStatus::Validation);
        assert!(m.is_null());
        let bad = CString::new(r#"{"n": 2, "F": [[1.0]], "W": "x"}"#).unwrap();
        assert_eq!(psun_model_from_json(bad.as_ptr(), &mut m), PsunStatus::Validation);
        assert!(last_error().contains("/W"), "{}", last_error());
        let good = CString::new(r#"{"n": 4, "F": [[1.0, 0.5]]}"#).unwrap();
        assert_eq!(psun_model_from_json(good.as_ptr(), &mut m), PsunStatus::Ok);
        let (mut n, mut p, mut k) = (0, 0, 0);
        assert_eq!(psun_model_dims(m, &mut n, &mut p, &mut k), PsunStatus::Ok);
        assert_eq!((n, p, k), (4, 2, 1));
        psun_model_free(m);
        psun_model_free(ptr::null_mut());
        assert_eq!(psun_filter_step(ptr::null_mut(), ptr::null(), 1, ptr::null_mut()), PsunStatus::NullPointer);
    }
}

#[test]
fn header_is_generated() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/probit_sun.h")).unwrap();
    for name in ["psun_filter_new", "psun_filter_step", "psun_model_free", "PSUN_STATUS_PANIC", "typedef struct PsunModel PsunModel"] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let h = concat!(env!("CARGO_MANIFEST_DIR"), "/include/probit_sun.h");
    match std::process::Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", h]).output() {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler found; header syntax check skipped"),
    }
}
