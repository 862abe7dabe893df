//! C ABI over `ebm-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! and released with the matching `*_free`. Every fallible call returns an
//! [`EbmStatus`]; on failure [`ebm_last_error`] describes the problem for
//! the calling thread. Panics never unwind into C.
//!
//! Arrays are caller-owned: coordinates are `n_atoms * 3` doubles, type
//! rows `n_atoms * n_types` doubles, both row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ebm_core::config::RunConfig;
use ebm_core::energy::{load_checkpoint, EnergyModel, Potential};
use ebm_core::mla::{self, LabeledCloud, SamplerConfig};
use ebm_core::state::{MixedState, SizeHistogram};
use ebm_core::tempering::{self, PriorRefill};
use ebm_core::{rng, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EbmStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Numerical = 3,
    Io = 4,
    InvalidArgument = 5,
    Panic = 6,
}

impl From<&Error> for EbmStatus {
    fn from(e: &Error) -> Self {
        match e.exit_code() {
            2 => match e {
                Error::Config { .. } | Error::Checkpoint(_) => EbmStatus::Config,
                _ => EbmStatus::InvalidArgument,
            },
            3 => EbmStatus::Numerical,
            _ => EbmStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EbmStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EbmStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            EbmStatus::NullPointer
        }
        Ok(Err(Fail::Arg(m))) => {
            set_error(m);
            EbmStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            EbmStatus::from(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            EbmStatus::Panic
        }
    }
}

unsafe fn cstr<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn state_from(coords: *const f64, types: *const f64, n_atoms: usize, n_types: usize) -> Result<MixedState, Fail> {
    if n_atoms == 0 {
        return Err(Fail::Arg("n_atoms must be >= 1".into()));
    }
    let c = slice(coords, n_atoms * 3, "coords")?;
    let t = slice(types, n_atoms * n_types, "types")?;
    let coords = c.chunks_exact(3).map(|v| [v[0], v[1], v[2]]).collect();
    Ok(MixedState::new(coords, t.to_vec(), n_types)?)
}

/// Trained energy model.
pub struct EbmModel {
    model: EnergyModel,
}

/// Mirror-Langevin stepper with its own random stream.
pub struct EbmSampler {
    cfg: SamplerConfig,
    rng: rng::Rng,
}

/// Discrete samples from [`ebm_generate`].
pub struct EbmSamples {
    samples: Vec<LabeledCloud>,
    energies: Vec<f64>,
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn ebm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ebm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint. `use_ema` selects the averaged parameters.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ebm_model_load(path: *const c_char, use_ema: bool, out: *mut *mut EbmModel) -> EbmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let ck = load_checkpoint(cstr(path, "path")?)?;
        let model = if use_ema { ck.ema } else { ck.raw };
        *out = Box::into_raw(Box::new(EbmModel { model }));
        Ok(())
    })
}

/// Freshly initialized model from the `[model]` section of a run config.
/// A NULL `config_toml` uses the defaults.
///
/// # Safety
/// `config_toml` is NULL or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ebm_model_new(config_toml: *const c_char, out: *mut *mut EbmModel) -> EbmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let cfg = run_config(config_toml)?;
        *out = Box::into_raw(Box::new(EbmModel {
            model: EnergyModel::new(cfg.model)?,
        }));
        Ok(())
    })
}

unsafe fn run_config(text: *const c_char) -> Result<RunConfig, Fail> {
    if text.is_null() {
        Ok(RunConfig::default())
    } else {
        Ok(RunConfig::from_toml(cstr(text, "config_toml")?)?)
    }
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ebm_model_free(model: *mut EbmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of atom types K, or 0 for NULL.
///
/// # Safety
/// `model` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ebm_model_n_types(model: *const EbmModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.n_types)
}

/// Total energy and, when the output arrays are non-NULL, its gradients.
///
/// # Safety
/// Array lengths must match `n_atoms` and the model's K.
#[no_mangle]
pub unsafe extern "C" fn ebm_energy(
    model: *const EbmModel,
    n_atoms: usize,
    coords: *const f64,
    types: *const f64,
    energy: *mut f64,
    grad_coords: *mut f64,
    grad_types: *mut f64,
) -> EbmStatus {
    guard(|| {
        let m = &model.as_ref().ok_or(Fail::Null("model"))?.model;
        if energy.is_null() {
            return Err(Fail::Null("energy"));
        }
        let k = m.config.n_types;
        let s = state_from(coords, types, n_atoms, k)?;
        let want = !grad_coords.is_null() || !grad_types.is_null();
        let e = if want { m.evaluate(&s)? } else { m.energy(&s)? };
        *energy = e.total;
        if !grad_coords.is_null() {
            let g = slice_mut(grad_coords, n_atoms * 3, "grad_coords")?;
            for (dst, src) in g.chunks_exact_mut(3).zip(&e.grad_coords) {
                dst.copy_from_slice(src);
            }
        }
        if !grad_types.is_null() {
            slice_mut(grad_types, n_atoms * k, "grad_types")?.copy_from_slice(&e.grad_types);
        }
        Ok(())
    })
}

/// Sampler from the `[sampler]` section of a run config (NULL: defaults).
///
/// # Safety
/// `config_toml` is NULL or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ebm_sampler_new(config_toml: *const c_char, seed: u64, out: *mut *mut EbmSampler) -> EbmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let cfg = run_config(config_toml)?;
        *out = Box::into_raw(Box::new(EbmSampler {
            cfg: cfg.sampler,
            rng: rng::root(seed),
        }));
        Ok(())
    })
}

/// # Safety
/// `sampler` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ebm_sampler_free(sampler: *mut EbmSampler) {
    if !sampler.is_null() {
        drop(Box::from_raw(sampler));
    }
}

/// One mirror-Langevin step in place. A diverged step leaves the arrays
/// untouched and sets `*diverged`.
///
/// # Safety
/// Array lengths must match `n_atoms` and the model's K.
#[no_mangle]
pub unsafe extern "C" fn ebm_sampler_step(
    sampler: *mut EbmSampler,
    model: *const EbmModel,
    n_atoms: usize,
    coords: *mut f64,
    types: *mut f64,
    diverged: *mut bool,
) -> EbmStatus {
    guard(|| {
        let sm = sampler.as_mut().ok_or(Fail::Null("sampler"))?;
        let m = &model.as_ref().ok_or(Fail::Null("model"))?.model;
        let k = m.config.n_types;
        sm.cfg.validate(k)?;
        let s = state_from(coords, types, n_atoms, k)?;
        let (next, rep) = mla::mla_step(&s, m, None, &sm.cfg, &mut sm.rng)?;
        for (dst, src) in slice_mut(coords, n_atoms * 3, "coords")?.chunks_exact_mut(3).zip(&next.coords) {
            dst.copy_from_slice(src);
        }
        slice_mut(types, n_atoms * k, "types")?.copy_from_slice(&next.types);
        if !diverged.is_null() {
            *diverged = rep.diverged;
        }
        Ok(())
    })
}

/// Parallel-tempering generation of `count` samples, with the prior and
/// size distribution taken from the config's dataset section.
///
/// # Safety
/// `config_toml` is NULL or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ebm_generate(
    model: *const EbmModel,
    config_toml: *const c_char,
    count: usize,
    out: *mut *mut EbmSamples,
) -> EbmStatus {
    guard(|| {
        let m = &model.as_ref().ok_or(Fail::Null("model"))?.model;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let cfg = run_config(config_toml)?;
        if cfg.model.n_types != m.config.n_types {
            return Err(Error::config("model.n_types", "config K differs from the model").into());
        }
        let data = cfg.load_dataset()?;
        let refill = PriorRefill {
            prior: cfg.prior(&data)?,
            sizes: SizeHistogram::from_states(&data),
        };
        let g = tempering::generate(m, count, &cfg.ladder()?, &cfg.sampler, &refill, cfg.seed)?;
        *out = Box::into_raw(Box::new(EbmSamples {
            samples: g.samples,
            energies: g.energies,
        }));
        Ok(())
    })
}

/// # Safety
/// `samples` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ebm_samples_len(samples: *const EbmSamples) -> usize {
    samples.as_ref().map_or(0, |s| s.samples.len())
}

/// Atom count of sample `index`, or 0 when out of range.
///
/// # Safety
/// `samples` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ebm_samples_n_atoms(samples: *const EbmSamples, index: usize) -> usize {
    samples
        .as_ref()
        .and_then(|s| s.samples.get(index))
        .map_or(0, |c| c.coords.len())
}

/// Copy sample `index` out: `coords` holds `3 * n_atoms` doubles and
/// `labels` `n_atoms` integers. `energy` may be NULL.
///
/// # Safety
/// Buffers must be sized from [`ebm_samples_n_atoms`].
#[no_mangle]
pub unsafe extern "C" fn ebm_samples_get(
    samples: *const EbmSamples,
    index: usize,
    coords: *mut f64,
    labels: *mut u32,
    energy: *mut f64,
) -> EbmStatus {
    guard(|| {
        let s = samples.as_ref().ok_or(Fail::Null("samples"))?;
        let c = s
            .samples
            .get(index)
            .ok_or_else(|| Fail::Arg(format!("sample index {index} out of range ({})", s.samples.len())))?;
        let n = c.coords.len();
        for (dst, src) in slice_mut(coords, 3 * n, "coords")?.chunks_exact_mut(3).zip(&c.coords) {
            dst.copy_from_slice(src);
        }
        for (dst, &l) in slice_mut(labels, n, "labels")?.iter_mut().zip(&c.labels) {
            *dst = l as u32;
        }
        if !energy.is_null() {
            *energy = s.energies[index];
        }
        Ok(())
    })
}

/// # Safety
/// `samples` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ebm_samples_free(samples: *mut EbmSamples) {
    if !samples.is_null() {
        drop(Box::from_raw(samples));
    }
}
