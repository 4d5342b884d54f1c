//! C ABI over `openadopt`.
//!
//! Objects cross the boundary as opaque handles created by `oa_*_new` or
//! `oa_*_from_*` and released with the matching `oa_*_free`. Every fallible
//! call returns an [`OaStatus`]; on failure the message is kept per thread
//! and can be copied out with [`oa_last_error_message`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use chrono::NaiveDate;
use openadopt::benchmarks::{adjust_elo, EloObservation};
use openadopt::ram::{ram_score, ReferenceCurve};
use openadopt::registry::{classify_size_bucket, ModelId, OrgAliases, Region, Registry, SizeBucket};
use openadopt::series::{iqr_filter, milestone_value, DownloadSeries, FilterConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Registry = 4,
    Series = 5,
    Ram = 6,
    Benchmarks = 7,
    NotFound = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OaSizeBucket {
    Sub1B = 0,
    B1To5 = 1,
    B7To9 = 2,
    B10To50 = 3,
    B50To100 = 4,
    B100To250 = 5,
    B250Plus = 6,
}

impl From<SizeBucket> for OaSizeBucket {
    fn from(b: SizeBucket) -> Self {
        match b {
            SizeBucket::Sub1B => OaSizeBucket::Sub1B,
            SizeBucket::B1to5 => OaSizeBucket::B1To5,
            SizeBucket::B7to9 => OaSizeBucket::B7To9,
            SizeBucket::B10to50 => OaSizeBucket::B10To50,
            SizeBucket::B50to100 => OaSizeBucket::B50To100,
            SizeBucket::B100to250 => OaSizeBucket::B100To250,
            SizeBucket::B250plus => OaSizeBucket::B250Plus,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OaDate {
    pub year: i32,
    pub month: u32,
    pub day: u32,
}

/// Opaque model registry.
pub struct OaRegistry(Registry);
/// Opaque cumulative download series.
pub struct OaSeries(DownloadSeries);
/// Opaque RAM reference curve.
pub struct OaCurve(ReferenceCurve);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

type Fallible<T> = Result<T, (OaStatus, String)>;

fn guard(f: impl FnOnce() -> Fallible<()>) -> OaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            OaStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            OaStatus::Panic
        }
    }
}

fn err<T>(status: OaStatus, msg: impl ToString) -> Fallible<T> {
    Err((status, msg.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char) -> Fallible<&'a str> {
    if p.is_null() {
        return err(OaStatus::NullPointer, "null string argument");
    }
    CStr::from_ptr(p).to_str().map_err(|e| (OaStatus::InvalidUtf8, e.to_string()))
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Fallible<&'a mut T> {
    p.as_mut().ok_or((OaStatus::NullPointer, "null output pointer".to_string()))
}

unsafe fn handle<'a, T>(p: *const T) -> Fallible<&'a T> {
    p.as_ref().ok_or((OaStatus::NullPointer, "null handle".to_string()))
}

fn to_date(d: OaDate) -> Fallible<NaiveDate> {
    NaiveDate::from_ymd_opt(d.year, d.month, d.day).ok_or((
        OaStatus::InvalidArgument,
        format!("invalid date {}-{}-{}", d.year, d.month, d.day),
    ))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn oa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// excluding the terminator.
#[no_mangle]
pub unsafe extern "C" fn oa_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses registry CSV text with the bundled alias table.
#[no_mangle]
pub unsafe extern "C" fn oa_registry_from_csv(
    csv: *const c_char,
    out: *mut *mut OaRegistry,
) -> OaStatus {
    guard(|| {
        let out = out_arg(out)?;
        let text = str_arg(csv)?;
        let (reg, _) = Registry::from_csv(text, OrgAliases::default())
            .map_err(|e| (OaStatus::Registry, e.to_string()))?;
        *out = Box::into_raw(Box::new(OaRegistry(reg)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn oa_registry_free(reg: *mut OaRegistry) {
    if !reg.is_null() {
        drop(Box::from_raw(reg));
    }
}

#[no_mangle]
pub unsafe extern "C" fn oa_registry_len(reg: *const OaRegistry, out: *mut usize) -> OaStatus {
    guard(|| {
        *out_arg(out)? = handle(reg)?.0.len();
        Ok(())
    })
}

/// Size bucket of a registered model.
#[no_mangle]
pub unsafe extern "C" fn oa_registry_bucket(
    reg: *const OaRegistry,
    model_id: *const c_char,
    out: *mut OaSizeBucket,
) -> OaStatus {
    guard(|| {
        let reg = handle(reg)?;
        let id = str_arg(model_id)?;
        let out = out_arg(out)?;
        match reg.0.get(id) {
            Some(r) => {
                *out = r.bucket().into();
                Ok(())
            }
            None => err(OaStatus::NotFound, format!("{id} not in registry")),
        }
    })
}

/// Region of any hub id: 0 USA, 1 China, 2 Europe, 3 Other.
#[no_mangle]
pub unsafe extern "C" fn oa_registry_region(
    reg: *const OaRegistry,
    model_id: *const c_char,
    out: *mut u32,
) -> OaStatus {
    guard(|| {
        let reg = handle(reg)?;
        let id = str_arg(model_id)?;
        *out_arg(out)? = match reg.0.attribute(id).1 {
            Region::Usa => 0,
            Region::China => 1,
            Region::Europe => 2,
            Region::Other => 3,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn oa_classify_size_bucket(total_params: i64, out: *mut OaSizeBucket) -> OaStatus {
    guard(|| {
        let b = classify_size_bucket(i128::from(total_params))
            .map_err(|e| (OaStatus::InvalidArgument, e.to_string()))?;
        *out_arg(out)? = b.into();
        Ok(())
    })
}

/// Creates an empty series for `model_id` (must be `org/name`).
#[no_mangle]
pub unsafe extern "C" fn oa_series_new(model_id: *const c_char, out: *mut *mut OaSeries) -> OaStatus {
    guard(|| {
        let out = out_arg(out)?;
        let id = ModelId::parse(str_arg(model_id)?).map_err(|e| (OaStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(OaSeries(DownloadSeries::empty(id.as_str()))));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn oa_series_free(s: *mut OaSeries) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Appends a point; dates must be strictly increasing.
#[no_mangle]
pub unsafe extern "C" fn oa_series_push(s: *mut OaSeries, date: OaDate, cumulative: f64) -> OaStatus {
    guard(|| {
        let s = out_arg(s)?;
        let mut pts = s.0.points().to_vec();
        pts.push((to_date(date)?, cumulative));
        s.0 = DownloadSeries::new(s.0.model_id.clone(), pts)
            .map_err(|e| (OaStatus::Series, e.to_string()))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn oa_series_len(s: *const OaSeries, out: *mut usize) -> OaStatus {
    guard(|| {
        *out_arg(out)? = handle(s)?.0.len();
        Ok(())
    })
}

/// Value of point `index`.
#[no_mangle]
pub unsafe extern "C" fn oa_series_value(s: *const OaSeries, index: usize, out: *mut f64) -> OaStatus {
    guard(|| {
        let s = handle(s)?;
        let out = out_arg(out)?;
        match s.0.points().get(index) {
            Some(p) => {
                *out = p.1;
                Ok(())
            }
            None => err(OaStatus::InvalidArgument, format!("index {index} out of range")),
        }
    })
}

/// IQR spike filter with multiplier `k`. Writes a new series handle and the
/// number of flagged deltas.
#[no_mangle]
pub unsafe extern "C" fn oa_iqr_filter(
    s: *const OaSeries,
    k: f64,
    out: *mut *mut OaSeries,
    flagged: *mut usize,
) -> OaStatus {
    guard(|| {
        let s = handle(s)?;
        let out = out_arg(out)?;
        let cfg = FilterConfig { iqr_multiplier: k, ..FilterConfig::default() };
        let res = iqr_filter(&s.0, &cfg).map_err(|e| (OaStatus::Series, e.to_string()))?;
        if let Some(f) = flagged.as_mut() {
            *f = res.flagged.len();
        }
        *out = Box::into_raw(Box::new(OaSeries(res.series)));
        Ok(())
    })
}

/// Downloads `t` days after `release`. `*present` is false when the
/// milestone lies beyond the series.
#[no_mangle]
pub unsafe extern "C" fn oa_milestone_value(
    s: *const OaSeries,
    release: OaDate,
    t: u32,
    out: *mut f64,
    present: *mut bool,
) -> OaStatus {
    guard(|| {
        let s = handle(s)?;
        let v = milestone_value(&s.0, to_date(release)?, t).map_err(|e| (OaStatus::Series, e.to_string()))?;
        *out_arg(present)? = v.is_some();
        *out_arg(out)? = v.unwrap_or(0.0);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn oa_ram_score(downloads: f64, median: f64, out: *mut f64) -> OaStatus {
    guard(|| {
        *out_arg(out)? = ram_score(downloads, median).map_err(|e| (OaStatus::Ram, e.to_string()))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn oa_curve_from_json(json: *const c_char, out: *mut *mut OaCurve) -> OaStatus {
    guard(|| {
        let out = out_arg(out)?;
        let curve = ReferenceCurve::from_json(str_arg(json)?).map_err(|e| (OaStatus::Ram, e.to_string()))?;
        *out = Box::into_raw(Box::new(OaCurve(curve)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn oa_curve_free(c: *mut OaCurve) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Reference median at milestone `t`.
#[no_mangle]
pub unsafe extern "C" fn oa_curve_median(c: *const OaCurve, t: u32, out: *mut f64) -> OaStatus {
    guard(|| {
        let c = handle(c)?;
        let out = out_arg(out)?;
        match c.0.at(t) {
            Some(m) => {
                *out = m.median;
                Ok(())
            }
            None => err(OaStatus::NotFound, format!("no reference value at t={t}")),
        }
    })
}

/// RAM score of `downloads` at milestone `t` against the curve.
#[no_mangle]
pub unsafe extern "C" fn oa_curve_score(c: *const OaCurve, t: u32, downloads: f64, out: *mut f64) -> OaStatus {
    guard(|| {
        let c = handle(c)?;
        let out = out_arg(out)?;
        let Some(m) = c.0.at(t) else {
            return err(OaStatus::NotFound, format!("no reference value at t={t}"));
        };
        *out = ram_score(downloads, m.median).map_err(|e| (OaStatus::Ram, e.to_string()))?;
        Ok(())
    })
}

/// Arena rating after the recalibration shift for a rating observed on `date`.
#[no_mangle]
pub unsafe extern "C" fn oa_adjust_elo(date: OaDate, elo: f64, out: *mut f64) -> OaStatus {
    guard(|| {
        let obs = EloObservation {
            model_id: ModelId::parse("ffi/observation").expect("valid id"),
            region: Region::Other,
            observed_at: to_date(date)?,
            elo,
            adjusted: false,
        };
        *out_arg(out)? = adjust_elo(&obs).map_err(|e| (OaStatus::Benchmarks, e.to_string()))?.elo;
        Ok(())
    })
}
