//! C ABI over `pailab`.
//!
//! Grid kernels cross the boundary as opaque `PaiGridKernel` handles that
//! the caller releases with `pai_grid_kernel_free`. Every fallible call
//! returns a `PaiStatus`; on failure the message is available through
//! `pai_last_error_message` on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use pailab::cutmetric::{cut_distance_sorted, cut_norm};
use pailab::gntk::{complexity_term, path_density, GramMatrix};
use pailab::limitg::{theoretical_graphon, GridKernel};
use pailab::numkit::{erf, erfinv, Activation, Rng64};
use pailab::saliency::{empirical_graphon, GraphonConfig, Method};
use pailab::{Error, Matrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaiStatus {
    Ok = 0,
    InvalidArgument = 1,
    Domain = 2,
    Unsupported = 3,
    Budget = 4,
    Numeric = 5,
    Format = 6,
    Io = 7,
    EmptyDataset = 8,
    UndefinedCorrelation = 9,
    InsufficientCore = 10,
    Contract = 11,
    NullPointer = 12,
    Panic = 13,
}

/// Opaque `G × G` kernel.
pub struct PaiGridKernel {
    inner: GridKernel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PaiStatus {
    match e {
        Error::Argument(_) => PaiStatus::InvalidArgument,
        Error::Domain(_) => PaiStatus::Domain,
        Error::Feature(_) => PaiStatus::Unsupported,
        Error::Budget { .. } => PaiStatus::Budget,
        Error::Numeric(_) => PaiStatus::Numeric,
        Error::Format { .. } => PaiStatus::Format,
        Error::Io { .. } => PaiStatus::Io,
        Error::EmptyDataset(_) => PaiStatus::EmptyDataset,
        Error::UndefinedCorrelation(_) => PaiStatus::UndefinedCorrelation,
        Error::InsufficientCore { .. } => PaiStatus::InsufficientCore,
        Error::Contract(_) => PaiStatus::Contract,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PaiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PaiStatus::Ok
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PaiStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            PaiStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::arg(format!("{what} is not UTF-8"))))
}

unsafe fn kernel_ref<'a>(k: *const PaiGridKernel, what: &'static str) -> Result<&'a GridKernel, Failure> {
    non_null(k, what)?;
    Ok(&(*k).inner)
}

unsafe fn emit_kernel(out: *mut *mut PaiGridKernel, k: GridKernel) {
    *out = Box::into_raw(Box::new(PaiGridKernel { inner: k }));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pai_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// in bytes excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pai_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

#[no_mangle]
pub extern "C" fn pai_erf(x: f64) -> f64 {
    erf(x)
}

/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pai_erfinv(u: f64, out: *mut f64) -> PaiStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = erfinv(u)?;
        Ok(())
    })
}

/// Kernel from `size * size` row-major cells.
///
/// # Safety
/// `cells` must be valid for `size * size` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn pai_grid_kernel_new(
    size: usize,
    cells: *const f64,
    out: *mut *mut PaiGridKernel,
) -> PaiStatus {
    guard(|| {
        non_null(cells, "cells")?;
        non_null(out, "out")?;
        let n = size
            .checked_mul(size)
            .ok_or_else(|| Error::arg("grid size overflows"))?;
        let data = slice::from_raw_parts(cells, n).to_vec();
        emit_kernel(out, GridKernel::new(size, data)?);
        Ok(())
    })
}

/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pai_grid_kernel_constant(
    size: usize,
    value: f64,
    out: *mut *mut PaiGridKernel,
) -> PaiStatus {
    guard(|| {
        non_null(out, "out")?;
        emit_kernel(out, GridKernel::constant(size, value)?);
        Ok(())
    })
}

/// Block-averaged theoretical graphon of `method` (e.g. "snip") for
/// `activation` (e.g. "tanh") at density `rho`.
///
/// # Safety
/// `method` and `activation` must be NUL-terminated strings; `out` valid
/// for one write.
#[no_mangle]
pub unsafe extern "C" fn pai_theoretical_graphon_new(
    method: *const c_char,
    activation: *const c_char,
    rho: f64,
    grid: usize,
    mc_samples: usize,
    seed: u64,
    out: *mut *mut PaiGridKernel,
) -> PaiStatus {
    guard(|| {
        let method: Method = str_arg(method, "method")?.parse()?;
        let activation: Activation = str_arg(activation, "activation")?.parse()?;
        non_null(out, "out")?;
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::arg(format!("density must lie in (0,1], got {rho}")).into());
        }
        let mut rng = Rng64::new(seed);
        let (w, _) = theoretical_graphon(method, activation, rho, grid, mc_samples, &mut rng)?;
        emit_kernel(out, w);
        Ok(())
    })
}

/// Seed-averaged sorted masks of width `width`, pooled to `grid`.
///
/// # Safety
/// As for `pai_theoretical_graphon_new`.
#[no_mangle]
pub unsafe extern "C" fn pai_empirical_graphon_new(
    method: *const c_char,
    activation: *const c_char,
    rho: f64,
    width: usize,
    seeds: usize,
    grid: usize,
    seed: u64,
    out: *mut *mut PaiGridKernel,
) -> PaiStatus {
    guard(|| {
        let cfg = GraphonConfig {
            method: str_arg(method, "method")?.parse()?,
            activation: str_arg(activation, "activation")?.parse()?,
            rho,
            width,
            seeds,
            grid,
            seed,
            label: 0.0,
        };
        non_null(out, "out")?;
        emit_kernel(out, empirical_graphon(&cfg)?.probs);
        Ok(())
    })
}

/// Grid size `G`, or 0 for a null handle.
///
/// # Safety
/// `k` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pai_grid_kernel_size(k: *const PaiGridKernel) -> usize {
    if k.is_null() {
        0
    } else {
        (*k).inner.size()
    }
}

/// # Safety
/// `k` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pai_grid_kernel_mean(k: *const PaiGridKernel, out: *mut f64) -> PaiStatus {
    guard(|| {
        let k = kernel_ref(k, "kernel")?;
        non_null(out, "out")?;
        *out = k.mean();
        Ok(())
    })
}

/// Copies the `G * G` row-major cells into `out` (`len` must be at least
/// `G * G`).
///
/// # Safety
/// `k` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn pai_grid_kernel_copy(
    k: *const PaiGridKernel,
    out: *mut f64,
    len: usize,
) -> PaiStatus {
    guard(|| {
        let k = kernel_ref(k, "kernel")?;
        non_null(out, "out")?;
        let cells = k.cells();
        if len < cells.len() {
            return Err(Error::arg(format!("buffer holds {len} values, need {}", cells.len())).into());
        }
        ptr::copy_nonoverlapping(cells.as_ptr(), out, cells.len());
        Ok(())
    })
}

/// # Safety
/// `k` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pai_grid_kernel_free(k: *mut PaiGridKernel) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// Cut norm of `a − b` on their shared grid.
///
/// # Safety
/// `a`, `b` must be live handles; `value`, `upper_bound` valid for one
/// write each (`upper_bound` may be null).
#[no_mangle]
pub unsafe extern "C" fn pai_cut_distance(
    a: *const PaiGridKernel,
    b: *const PaiGridKernel,
    value: *mut f64,
    upper_bound: *mut f64,
) -> PaiStatus {
    guard(|| {
        let (a, b) = (kernel_ref(a, "a")?, kernel_ref(b, "b")?);
        non_null(value, "value")?;
        let r = cut_distance_sorted(a, b)?;
        *value = r.value;
        if !upper_bound.is_null() {
            *upper_bound = r.upper_bound;
        }
        Ok(())
    })
}

/// Cut norm of a `rows × cols` row-major matrix: exact when the smaller
/// side is at most 22, heuristic otherwise.
///
/// # Safety
/// `data` must be valid for `rows * cols` reads; outputs as for
/// `pai_cut_distance`.
#[no_mangle]
pub unsafe extern "C" fn pai_cut_norm(
    rows: usize,
    cols: usize,
    data: *const f64,
    value: *mut f64,
    upper_bound: *mut f64,
) -> PaiStatus {
    guard(|| {
        non_null(data, "data")?;
        non_null(value, "value")?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::arg("matrix size overflows"))?;
        let b = Matrix::from_vec(rows, cols, slice::from_raw_parts(data, n).to_vec())?;
        let r = cut_norm(&b)?;
        *value = r.value;
        if !upper_bound.is_null() {
            *upper_bound = r.upper_bound;
        }
        Ok(())
    })
}

/// Path density through three kernels indexed `[later, earlier]`; writes
/// `G` values.
///
/// # Safety
/// Handles must be live and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn pai_path_density(
    w1: *const PaiGridKernel,
    w2: *const PaiGridKernel,
    w3: *const PaiGridKernel,
    out: *mut f64,
    len: usize,
) -> PaiStatus {
    guard(|| {
        let p = path_density(kernel_ref(w1, "w1")?, kernel_ref(w2, "w2")?, kernel_ref(w3, "w3")?)?;
        non_null(out, "out")?;
        if len < p.len() {
            return Err(Error::arg(format!("buffer holds {len} values, need {}", p.len())).into());
        }
        ptr::copy_nonoverlapping(p.as_ptr(), out, p.len());
        Ok(())
    })
}

/// `yᵀK⁻¹y` for an `m × m` row-major Gram matrix, with the jitter applied.
///
/// # Safety
/// `k` valid for `m * m` reads, `y` for `m` reads, `value` for one write;
/// `jitter` may be null.
#[no_mangle]
pub unsafe extern "C" fn pai_complexity_term(
    m: usize,
    k: *const f64,
    y: *const f64,
    value: *mut f64,
    jitter: *mut f64,
) -> PaiStatus {
    guard(|| {
        non_null(k, "k")?;
        non_null(y, "y")?;
        non_null(value, "value")?;
        let n = m.checked_mul(m).ok_or_else(|| Error::arg("matrix size overflows"))?;
        let gram = GramMatrix::new(Matrix::from_vec(m, m, slice::from_raw_parts(k, n).to_vec())?)?;
        let (v, j) = complexity_term(&gram, slice::from_raw_parts(y, m))?;
        *value = v;
        if !jitter.is_null() {
            *jitter = j;
        }
        Ok(())
    })
}
