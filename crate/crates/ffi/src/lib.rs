//! C ABI over the `slogan` library.
//!
//! Datasets, models and training configurations cross the boundary as opaque
//! handles created by `*_new`/`*_load` style functions and released with the
//! matching `*_free`. Every fallible call returns a [`SloganStatus`]; on
//! failure [`slogan_last_error`] describes what went wrong on the calling
//! thread. Panics never unwind into C: they are caught and reported as
//! [`SloganStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use slogan::graphdata::{gen_synthetic_biased, parse_tudataset, Dataset, Domain, SynthConfig};
use slogan::gradcore::Rng;
use slogan::trainer::{self, Model, TrainConfig};
use slogan::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SloganStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    InvalidConfig = 4,
    Io = 5,
    Parse = 6,
    Numeric = 7,
    Panic = 8,
}

/// Opaque graph dataset.
pub struct SloganDataset(Dataset);

/// Opaque trained model.
pub struct SloganModel(Model);

/// Opaque training configuration.
pub struct SloganConfig(TrainConfig);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SloganStatus {
    match err {
        Error::MissingFile(_) | Error::Io { .. } => SloganStatus::Io,
        Error::Parse { .. } | Error::Json(_) => SloganStatus::Parse,
        Error::InvalidConfig { .. } => SloganStatus::InvalidConfig,
        Error::NonFinite(_) | Error::NonPositiveLog { .. } => SloganStatus::Numeric,
        _ => SloganStatus::InvalidInput,
    }
}

enum Failure {
    Status(SloganStatus, String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

/// Runs `f`, translating errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SloganStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SloganStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            SloganStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(SloganStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(SloganStatus::InvalidUtf8, format!("`{what}` is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null if none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn slogan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn slogan_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default training configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn slogan_config_new(out: *mut *mut SloganConfig) -> SloganStatus {
    guard(|| put(out, SloganConfig(TrainConfig::default()), "out"))
}

/// Configuration from a JSON object; keys not given keep their defaults
/// (`{"seed": 3, "adapt_epochs": 10}`). Unknown keys are rejected.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn slogan_config_from_json(json: *const c_char, out: *mut *mut SloganConfig) -> SloganStatus {
    guard(|| {
        let text = as_str(json, "json")?;
        let overrides: serde_json::Value = serde_json::from_str(text).map_err(Error::from)?;
        let serde_json::Value::Object(overrides) = overrides else {
            return Err(Failure::Status(SloganStatus::InvalidConfig, "config must be a JSON object".into()));
        };
        let mut merged = serde_json::to_value(TrainConfig::default()).map_err(Error::from)?;
        let fields = merged.as_object_mut().expect("struct serialises to an object");
        for (k, v) in overrides {
            if !fields.contains_key(&k) {
                return Err(Error::InvalidConfig { key: k, msg: "unknown key".into() }.into());
            }
            fields.insert(k, v);
        }
        let cfg: TrainConfig = serde_json::from_value(merged).map_err(Error::from)?;
        cfg.validate()?;
        put(out, SloganConfig(cfg), "out")
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slogan_config_free(cfg: *mut SloganConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Loads `root/name_*.txt` (or `root/name/name_*.txt`) tagged as `domain`
/// (0 source, 1 target).
///
/// # Safety
/// `root` and `name` must be NUL-terminated strings and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn slogan_dataset_load_tu(
    root: *const c_char,
    name: *const c_char,
    domain: u32,
    out: *mut *mut SloganDataset,
) -> SloganStatus {
    guard(|| {
        let domain = match domain {
            0 => Domain::Source,
            1 => Domain::Target,
            d => return Err(Failure::Status(SloganStatus::InvalidInput, format!("unknown domain {d}"))),
        };
        let ds = parse_tudataset(as_str(root, "root")?, as_str(name, "name")?)?.with_domain(domain);
        put(out, SloganDataset(ds), "out")
    })
}

/// Synthetic source/target pair with spurious correlation `rho_s`.
///
/// # Safety
/// `out_source` and `out_target` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slogan_dataset_synthetic(
    rho_s: f64,
    n_per_domain: usize,
    seed: u64,
    out_source: *mut *mut SloganDataset,
    out_target: *mut *mut SloganDataset,
) -> SloganStatus {
    guard(|| {
        if out_source.is_null() || out_target.is_null() {
            return Err(null("out"));
        }
        let cfg = SynthConfig { rho_s: rho_s as _, n_per_domain, ..SynthConfig::default() };
        let (s, t) = gen_synthetic_biased(&cfg, &mut Rng::new(seed))?;
        put(out_source, SloganDataset(s), "out_source")?;
        put(out_target, SloganDataset(t), "out_target")
    })
}

/// Number of graphs, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn slogan_dataset_len(ds: *const SloganDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `ds` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slogan_dataset_free(ds: *mut SloganDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Source-only warm-up; `out` receives a new model.
///
/// # Safety
/// `source` and `cfg` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn slogan_model_warmup(
    source: *const SloganDataset,
    cfg: *const SloganConfig,
    out: *mut *mut SloganModel,
) -> SloganStatus {
    guard(|| {
        let (model, _) = trainer::warmup(&as_ref(source, "source")?.0, &as_ref(cfg, "cfg")?.0)?;
        put(out, SloganModel(model), "out")
    })
}

/// Adapts `model` in place to the unlabelled use of `target`.
///
/// # Safety
/// All handles must be live; `model` must not be used concurrently.
#[no_mangle]
pub unsafe extern "C" fn slogan_model_adapt(
    model: *mut SloganModel,
    source: *const SloganDataset,
    target: *const SloganDataset,
    cfg: *const SloganConfig,
) -> SloganStatus {
    guard(|| {
        let model = as_mut(model, "model")?;
        trainer::adapt(
            &mut model.0,
            &as_ref(source, "source")?.0,
            &as_ref(target, "target")?.0,
            &as_ref(cfg, "cfg")?.0,
            &mut (),
        )?;
        Ok(())
    })
}

/// Classification accuracy of `model` on a labelled dataset.
///
/// # Safety
/// Handles must be live and `out_accuracy` writable.
#[no_mangle]
pub unsafe extern "C" fn slogan_model_accuracy(
    model: *const SloganModel,
    ds: *const SloganDataset,
    out_accuracy: *mut f64,
) -> SloganStatus {
    guard(|| {
        let report = trainer::evaluate(&as_ref(ds, "ds")?.0, &as_ref(model, "model")?.0)?;
        *as_mut(out_accuracy, "out_accuracy")? = report.accuracy as f64;
        Ok(())
    })
}

/// Epochs the model has been trained for, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn slogan_model_epochs(model: *const SloganModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.epochs_done)
}

/// # Safety
/// `model` must be live and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn slogan_model_save(model: *const SloganModel, path: *const c_char) -> SloganStatus {
    guard(|| Ok(as_ref(model, "model")?.0.save(as_str(path, "path")?)?))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn slogan_model_load(path: *const c_char, out: *mut *mut SloganModel) -> SloganStatus {
    guard(|| {
        let model = Model::load(as_str(path, "path")?)?;
        put(out, SloganModel(model), "out")
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slogan_model_free(model: *mut SloganModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
