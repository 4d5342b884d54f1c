use std::ffi::{c_char, CStr, CString};
use std::ptr;

use openadopt_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        oa_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn date(year: i32, month: u32, day: u32) -> OaDate {
    OaDate { year, month, day }
}

#[test]
fn registry_handle_lifecycle() {
    let csv = CString::new(
        "model_id,organization,total_params,release_date\n\
         Qwen/Qwen3-8B,Qwen,8.2B,2025-04-29\nopenai/gpt-oss-120b,OpenAI,117B,2025-08-05\n",
    )
    .unwrap();
    let mut reg: *mut OaRegistry = ptr::null_mut();
    unsafe {
        assert_eq!(oa_registry_from_csv(csv.as_ptr(), &mut reg), OaStatus::Ok);
        let mut n = 0usize;
        assert_eq!(oa_registry_len(reg, &mut n), OaStatus::Ok);
        assert_eq!(n, 2);

        let id = CString::new("openai/gpt-oss-120b").unwrap();
        let mut b = OaSizeBucket::Sub1B;
        assert_eq!(oa_registry_bucket(reg, id.as_ptr(), &mut b), OaStatus::Ok);
        assert_eq!(b, OaSizeBucket::B100To250);
        let mut region = 9u32;
        assert_eq!(oa_registry_region(reg, id.as_ptr(), &mut region), OaStatus::Ok);
        assert_eq!(region, 0);

        let missing = CString::new("nobody/nothing").unwrap();
        assert_eq!(oa_registry_bucket(reg, missing.as_ptr(), &mut b), OaStatus::NotFound);
        assert!(last_error().contains("nobody/nothing"));
        oa_registry_free(reg);
    }
}

#[test]
fn null_and_bad_input() {
    unsafe {
        let mut reg: *mut OaRegistry = ptr::null_mut();
        assert_eq!(oa_registry_from_csv(ptr::null(), &mut reg), OaStatus::NullPointer);
        let bad = CString::new("not,a,registry\n").unwrap();
        assert_eq!(oa_registry_from_csv(bad.as_ptr(), &mut reg), OaStatus::Registry);
        assert!(reg.is_null());
        let mut out = 0.0;
        assert_eq!(oa_ram_score(1.0, 0.0, &mut out), OaStatus::Ram);
        assert_eq!(oa_adjust_elo(date(2025, 2, 30), 1300.0, &mut out), OaStatus::InvalidArgument);
        oa_registry_free(ptr::null_mut());
    }
}

#[test]
fn series_filter_and_milestone() {
    unsafe {
        let id = CString::new("a/b").unwrap();
        let mut s: *mut OaSeries = ptr::null_mut();
        assert_eq!(oa_series_new(id.as_ptr(), &mut s), OaStatus::Ok);
        let deltas = [10.0, 12.0, 11.0, 9.0, 10.0, 5000.0, 10.0, 11.0];
        let mut cum = 100.0;
        assert_eq!(oa_series_push(s, date(2026, 1, 1), cum), OaStatus::Ok);
        for (i, d) in deltas.iter().enumerate() {
            cum += d;
            assert_eq!(oa_series_push(s, date(2026, 1, 2 + i as u32), cum), OaStatus::Ok);
        }
        assert_eq!(oa_series_push(s, date(2026, 1, 2), 1.0), OaStatus::Series);

        let mut filtered: *mut OaSeries = ptr::null_mut();
        let mut flagged = 0usize;
        assert_eq!(oa_iqr_filter(s, 2.5, &mut filtered, &mut flagged), OaStatus::Ok);
        assert_eq!(flagged, 1);
        let mut last = 0.0;
        assert_eq!(oa_series_value(filtered, 8, &mut last), OaStatus::Ok);
        assert_eq!(last, 100.0 + 73.0 + 10.5);

        let (mut v, mut present) = (0.0, false);
        assert_eq!(oa_milestone_value(filtered, date(2026, 1, 1), 7, &mut v, &mut present), OaStatus::Ok);
        assert!(present);
        assert_eq!(oa_milestone_value(filtered, date(2026, 1, 1), 30, &mut v, &mut present), OaStatus::Ok);
        assert!(!present);
        assert_eq!(oa_milestone_value(filtered, date(2026, 1, 1), 8, &mut v, &mut present), OaStatus::Series);

        oa_series_free(filtered);
        oa_series_free(s);
    }
}

#[test]
fn curve_and_scores() {
    let json = CString::new(
        r#"{"bucket":"1-5B","reference_date":"2026-04-02",
            "milestones":[{"t":7,"median":48000,"q1":20000,"q3":90000,"support":10}],
            "members":[]}"#,
    )
    .unwrap();
    unsafe {
        let mut c: *mut OaCurve = ptr::null_mut();
        assert_eq!(oa_curve_from_json(json.as_ptr(), &mut c), OaStatus::Ok);
        let mut m = 0.0;
        assert_eq!(oa_curve_median(c, 7, &mut m), OaStatus::Ok);
        assert_eq!(m, 48_000.0);
        let mut score = 0.0;
        assert_eq!(oa_curve_score(c, 7, 166_000.0, &mut score), OaStatus::Ok);
        assert!((score - 3.458).abs() < 1e-3);
        assert_eq!(oa_curve_score(c, 14, 1.0, &mut score), OaStatus::NotFound);
        oa_curve_free(c);

        let mut elo = 0.0;
        assert_eq!(oa_adjust_elo(date(2025, 1, 10), 1300.0, &mut elo), OaStatus::Ok);
        assert_eq!(elo, 1359.2);
        assert_eq!(oa_adjust_elo(date(2025, 5, 19), 1300.0, &mut elo), OaStatus::Ok);
        assert_eq!(elo, 1300.0);

        let mut b = OaSizeBucket::Sub1B;
        assert_eq!(oa_classify_size_bucket(8_000_000_000, &mut b), OaStatus::Ok);
        assert_eq!(b, OaSizeBucket::B7To9);
        assert_eq!(oa_classify_size_bucket(0, &mut b), OaStatus::InvalidArgument);

        let v = CStr::from_ptr(oa_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn error_message_truncates() {
    unsafe {
        let mut out = 0.0;
        oa_ram_score(1.0, -1.0, &mut out);
        let full = oa_last_error_message(ptr::null_mut(), 0);
        let mut small = [0 as c_char; 5];
        assert_eq!(oa_last_error_message(small.as_mut_ptr(), small.len()), full);
        assert_eq!(CStr::from_ptr(small.as_ptr()).to_bytes().len(), 4);
    }
}
