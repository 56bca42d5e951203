//! Drive the C surface the way a foreign binding would: build a config,
//! run a replicate, read metrics back, and exercise the error paths.

use std::ffi::{CStr, CString};
use std::ptr;

use topk_bandit_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn config_parse_run_and_read_back() {
    unsafe {
        let text = c("l = 8\nk = 2\ntau = 0.1\nt = 20\nn_es = 4\nf_in = 5\nm = 4\nj_steps = 2\nnoise_sigma = 0\n");
        let mut cfg: *mut TkbConfig = ptr::null_mut();
        assert_eq!(tkb_config_parse(text.as_ptr(), &mut cfg), TkbStatus::Ok);
        assert_eq!(tkb_config_validate(cfg), TkbStatus::Ok);

        let mut series: *mut TkbSeries = ptr::null_mut();
        assert_eq!(tkb_run(cfg, 5, 0, &mut series), TkbStatus::Ok);
        assert_eq!(tkb_series_len(series), 20);

        let mut reward = f64::NAN;
        assert_eq!(tkb_series_reward(series, 0, &mut reward), TkbStatus::Ok);
        assert!(reward.is_finite());
        let mut violation = f64::NAN;
        assert_eq!(tkb_series_violation(series, 19, &mut violation), TkbStatus::Ok);
        assert!((0.0..=1.0).contains(&violation));
        let mut sampler = -1;
        assert_eq!(tkb_series_sampler(series, 0, &mut sampler), TkbStatus::Ok);
        assert_eq!(sampler, 4, "exploration rounds come from the random sampler");
        let name = tkb_sampler_name(sampler);
        assert_eq!(CStr::from_ptr(name).to_str().unwrap(), "random");

        let mut mean = f64::NAN;
        assert_eq!(tkb_series_mean_reward(series, &mut mean), TkbStatus::Ok);
        assert!(mean.is_finite());

        // Determinism through the C surface.
        let mut series2: *mut TkbSeries = ptr::null_mut();
        assert_eq!(tkb_run(cfg, 5, 0, &mut series2), TkbStatus::Ok);
        for i in 0..20 {
            let (mut a, mut b) = (0.0, 0.0);
            tkb_series_reward(series, i, &mut a);
            tkb_series_reward(series2, i, &mut b);
            assert_eq!(a.to_bits(), b.to_bits());
        }

        let dir = std::env::temp_dir().join(format!("tkb-ffi-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let csv = dir.join("out.csv");
        let csv_c = c(csv.to_str().unwrap());
        assert_eq!(tkb_series_export_csv(series, csv_c.as_ptr()), TkbStatus::Ok);
        let contents = std::fs::read_to_string(&csv).unwrap();
        assert!(contents.starts_with("t,reward,violation_rate,chosen_sampler,score\n"));
        std::fs::remove_dir_all(&dir).ok();

        tkb_series_free(series);
        tkb_series_free(series2);
        tkb_config_free(cfg);
    }
}

#[test]
fn invalid_config_reports_error_message() {
    unsafe {
        let mut cfg: *mut TkbConfig = ptr::null_mut();
        assert_eq!(tkb_config_default(&mut cfg), TkbStatus::Ok);
        let key = c("lambda");
        let value = c("-2");
        assert_eq!(tkb_config_set(cfg, key.as_ptr(), value.as_ptr()), TkbStatus::Ok);
        assert_eq!(tkb_config_validate(cfg), TkbStatus::Config);
        let msg = CStr::from_ptr(tkb_last_error()).to_str().unwrap();
        assert!(msg.contains("lambda"), "{msg}");
        tkb_config_free(cfg);
    }
}

#[test]
fn unknown_key_is_rejected() {
    unsafe {
        let mut cfg: *mut TkbConfig = ptr::null_mut();
        assert_eq!(tkb_config_default(&mut cfg), TkbStatus::Ok);
        let key = c("bogus_key");
        let value = c("1");
        assert_eq!(
            tkb_config_set(cfg, key.as_ptr(), value.as_ptr()),
            TkbStatus::Config
        );
        tkb_config_free(cfg);
    }
}

#[test]
fn ned_and_constraint_count_work_on_raw_buffers() {
    unsafe {
        let u = [1.0f64, 0.0];
        let v = [0.0f64, 1.0];
        let mut d = f64::NAN;
        assert_eq!(tkb_ned(u.as_ptr(), v.as_ptr(), 2, &mut d), TkbStatus::Ok);
        assert_eq!(d, 1.0);

        // Degenerate input surfaces as a status code.
        let z = [0.0f64, 0.0];
        assert_eq!(
            tkb_ned(z.as_ptr(), z.as_ptr(), 2, &mut d),
            TkbStatus::DegenerateInput
        );

        // Two identical rows and one distant row, threshold 0.1.
        let features = [0.5f64, 0.5, 0.5, 0.5, 5.0, 5.0];
        let mut count = usize::MAX;
        assert_eq!(
            tkb_constraint_count(features.as_ptr(), 3, 2, 0.1, &mut count),
            TkbStatus::Ok
        );
        assert_eq!(count, 1);
    }
}

#[test]
fn null_pointers_are_rejected_not_crashing() {
    unsafe {
        assert_eq!(
            tkb_config_parse(ptr::null(), ptr::null_mut()),
            TkbStatus::NullPointer
        );
        let mut out = 0.0;
        assert_eq!(
            tkb_series_reward(ptr::null(), 0, &mut out),
            TkbStatus::NullPointer
        );
        assert!(tkb_sampler_name(17).is_null());
    }
}
