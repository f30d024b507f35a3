//! C ABI over `ucda-core`.
//!
//! Every function returns a [`UcdaStatus`]; on failure the message is
//! available from [`ucda_last_error`] on the same thread. Objects are
//! opaque handles released with their `_free` function. Strings returned
//! through `char **` are released with [`ucda_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ucda_core::controller::{
    compile, decode_weights, encode_weights, execute, random_weights, segnet_basic_preset, NetDescription, Program,
};
use ucda_core::datapath::CycleReport;
use ucda_core::kernels::KernelSet;
use ucda_core::patchdeconv::{deconv_patch, Kernel3x3, Window2x2};
use ucda_core::{perf, Error, HwConfig, HwParams, QTensor, Shape3};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UcdaStatus {
    Ok = 0,
    NullPointer = 1,
    Parse = 2,
    Infeasible = 3,
    Runtime = 4,
    InvalidArgument = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UcdaHwConfig {
    pub tn: u32,
    pub tm: u32,
    pub arrays: u32,
    pub stream_bits: u64,
    pub clock_hz: u64,
    pub if_bank_bits: u64,
    pub of_bits: u64,
    pub weight_bits: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UcdaCycleReport {
    pub weight_cycles: u64,
    pub priming_cycles: u64,
    pub compute_cycles: u64,
    pub drain_cycles: u64,
    pub transfer_cycles: u64,
    pub total_cycles: u64,
    pub multiplications: u64,
    pub additions: u64,
    pub buffer_reads: u64,
    pub buffer_writes: u64,
}

impl From<CycleReport> for UcdaCycleReport {
    fn from(r: CycleReport) -> Self {
        UcdaCycleReport {
            weight_cycles: r.weight_cycles,
            priming_cycles: r.priming_cycles,
            compute_cycles: r.compute_cycles,
            drain_cycles: r.drain_cycles,
            transfer_cycles: r.transfer_cycles,
            total_cycles: r.total_cycles,
            multiplications: r.multiplications,
            additions: r.additions,
            buffer_reads: r.buffer_reads,
            buffer_writes: r.buffer_writes,
        }
    }
}

/// A compiled program together with the network it came from.
pub struct UcdaProgram {
    net: NetDescription,
    program: Program,
    cfg: HwConfig,
}

pub struct UcdaTensor(QTensor);

pub struct UcdaWeights(Vec<KernelSet>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> UcdaStatus {
    match e {
        Error::Parse(_) | Error::WeightFormat(_) => UcdaStatus::Parse,
        Error::Infeasible { .. } | Error::CapacityExceeded { .. } => UcdaStatus::Infeasible,
        Error::InvalidArgument(_) | Error::InvalidConfig(_) | Error::ShapeMismatch(_) => UcdaStatus::InvalidArgument,
        Error::Command { source, .. } => match status_of(source) {
            UcdaStatus::Parse | UcdaStatus::InvalidArgument => UcdaStatus::Runtime,
            s => s,
        },
        _ => UcdaStatus::Runtime,
    }
}

struct Fail(UcdaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(UcdaStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> UcdaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            UcdaStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(&m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            UcdaStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn hw_from(c: &UcdaHwConfig) -> Result<HwConfig, Fail> {
    Ok(HwConfig::new(HwParams {
        tn: c.tn as usize,
        tm: c.tm as usize,
        arrays: c.arrays as usize,
        stream_bits: c.stream_bits,
        clock_hz: c.clock_hz,
        if_bank_bits: c.if_bank_bits,
        of_bits: c.of_bits,
        weight_bits: c.weight_bits,
    })?)
}

unsafe fn hw_or_default(c: *const UcdaHwConfig) -> Result<HwConfig, Fail> {
    match c.as_ref() {
        Some(c) => hw_from(c),
        None => Ok(HwConfig::default()),
    }
}

/// Message of the last failed call on this thread; empty after success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ucda_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ucda_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Fills `out` with the default hardware configuration.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ucda_hw_config_default(out: *mut UcdaHwConfig) -> UcdaStatus {
    guard(|| {
        let p = HwParams::default();
        *out_ptr(out, "out")? = UcdaHwConfig {
            tn: p.tn as u32,
            tm: p.tm as u32,
            arrays: p.arrays as u32,
            stream_bits: p.stream_bits,
            clock_hz: p.clock_hz,
            if_bank_bits: p.if_bank_bits,
            of_bits: p.of_bits,
            weight_bits: p.weight_bits,
        };
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null (defaults) or valid; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ucda_peak_gops(cfg: *const UcdaHwConfig, out: *mut f64) -> UcdaStatus {
    guard(|| {
        let cfg = hw_or_default(cfg)?;
        *out_ptr(out, "out")? = perf::peak_gops(&cfg);
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null (defaults) or valid; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ucda_dsp_equiv(cfg: *const UcdaHwConfig, out: *mut u64) -> UcdaStatus {
    guard(|| {
        let cfg = hw_or_default(cfg)?;
        *out_ptr(out, "out")? = perf::dsp_equiv(&cfg);
        Ok(())
    })
}

/// One 2x2 output patch from a 2x2 window `{IF11, IF12, IF21, IF22}` and a
/// rotated 3x3 kernel in row-major order.
///
/// # Safety
/// `window` must hold 4 values, `rotated_kernel` 9 and `out` room for 4.
#[no_mangle]
pub unsafe extern "C" fn ucda_deconv_patch(
    window: *const i8,
    rotated_kernel: *const i8,
    out: *mut i32,
) -> UcdaStatus {
    guard(|| {
        if window.is_null() || rotated_kernel.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let w = std::slice::from_raw_parts(window, 4);
        let k: &[i8; 9] = std::slice::from_raw_parts(rotated_kernel, 9).try_into().expect("9 taps");
        let win = Window2x2 {
            if11: w[0],
            if12: w[1],
            if21: w[2],
            if22: w[3],
        };
        let p = deconv_patch(win, &Kernel3x3::from_rotated(k));
        std::slice::from_raw_parts_mut(out, 4).copy_from_slice(&p.as_array());
        Ok(())
    })
}

fn boxed_program(net: NetDescription, cfg: HwConfig) -> Result<*mut UcdaProgram, Fail> {
    let program = compile(&net, &cfg)?;
    Ok(Box::into_raw(Box::new(UcdaProgram { net, program, cfg })))
}

/// Compiles a network description (UTF-8 JSON).
///
/// # Safety
/// `json` must be a NUL-terminated string; `cfg` null or valid; `out`
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ucda_program_compile_json(
    json: *const c_char,
    cfg: *const UcdaHwConfig,
    out: *mut *mut UcdaProgram,
) -> UcdaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| Fail(UcdaStatus::Parse, "network text is not UTF-8".into()))?;
        let net = NetDescription::from_json(text).map_err(|e| Fail(UcdaStatus::Parse, e.to_string()))?;
        *out = boxed_program(net, hw_or_default(cfg)?)?;
        Ok(())
    })
}

/// Compiles the built-in SegNet-Basic network.
///
/// # Safety
/// `cfg` null or valid; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ucda_program_segnet_basic(cfg: *const UcdaHwConfig, out: *mut *mut UcdaProgram) -> UcdaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed_program(segnet_basic_preset(), hw_or_default(cfg)?)?;
        Ok(())
    })
}

/// # Safety
/// `p` must be a live program; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ucda_program_len(p: *const UcdaProgram, out: *mut usize) -> UcdaStatus {
    guard(|| {
        *out_ptr(out, "out")? = as_ref(p, "program")?.program.commands.len();
        Ok(())
    })
}

/// The program's text dump; free with [`ucda_string_free`].
///
/// # Safety
/// `p` must be a live program; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ucda_program_dump(p: *const UcdaProgram, out: *mut *mut c_char) -> UcdaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let dump = as_ref(p, "program")?.program.dump();
        *out = CString::new(dump).expect("dump has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a program not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ucda_program_free(p: *mut UcdaProgram) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Copies `len` int8 values into a new `h x w x c` tensor.
///
/// # Safety
/// `data` must hold `len` values; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ucda_tensor_new(
    h: u32,
    w: u32,
    c: u32,
    scale_exp: i32,
    data: *const i8,
    len: usize,
    out: *mut *mut UcdaTensor,
) -> UcdaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if data.is_null() && len > 0 {
            return Err(null("data"));
        }
        let v = if len == 0 { Vec::new() } else { std::slice::from_raw_parts(data, len).to_vec() };
        let t = QTensor::new(Shape3::new(h as usize, w as usize, c as usize), scale_exp, v)?;
        *out = Box::into_raw(Box::new(UcdaTensor(t)));
        Ok(())
    })
}

/// A seeded random tensor shaped like the program's input.
///
/// # Safety
/// `p` must be a live program; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ucda_tensor_random_input(p: *const UcdaProgram, seed: u64, out: *mut *mut UcdaTensor) -> UcdaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let net = &as_ref(p, "program")?.net;
        let t = ucda_core::controller::random_input(net.input.shape(), net.input.scale_exp, seed);
        *out = Box::into_raw(Box::new(UcdaTensor(t)));
        Ok(())
    })
}

/// # Safety
/// `t` must be a live tensor; each output pointer null or valid.
#[no_mangle]
pub unsafe extern "C" fn ucda_tensor_shape(
    t: *const UcdaTensor,
    h: *mut u32,
    w: *mut u32,
    c: *mut u32,
    scale_exp: *mut i32,
) -> UcdaStatus {
    guard(|| {
        let t = &as_ref(t, "tensor")?.0;
        if let Some(h) = h.as_mut() {
            *h = t.height() as u32;
        }
        if let Some(w) = w.as_mut() {
            *w = t.width() as u32;
        }
        if let Some(c) = c.as_mut() {
            *c = t.channels() as u32;
        }
        if let Some(s) = scale_exp.as_mut() {
            *s = t.scale_exp();
        }
        Ok(())
    })
}

/// Borrows the tensor payload; valid while the tensor lives.
///
/// # Safety
/// `t` must be a live tensor; `data` and `len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ucda_tensor_data(t: *const UcdaTensor, data: *mut *const i8, len: *mut usize) -> UcdaStatus {
    guard(|| {
        let t = &as_ref(t, "tensor")?.0;
        *out_ptr(data, "data")? = t.data().as_ptr();
        *out_ptr(len, "len")? = t.data().len();
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a tensor not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ucda_tensor_free(t: *mut UcdaTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Parses a weight image.
///
/// # Safety
/// `bytes` must hold `len` bytes; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ucda_weights_load(bytes: *const u8, len: usize, out: *mut *mut UcdaWeights) -> UcdaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        let sets = decode_weights(std::slice::from_raw_parts(bytes, len))?;
        *out = Box::into_raw(Box::new(UcdaWeights(sets)));
        Ok(())
    })
}

/// Seeded random weights for the program's network.
///
/// # Safety
/// `p` must be a live program; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ucda_weights_random(p: *const UcdaProgram, seed: u64, out: *mut *mut UcdaWeights) -> UcdaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let sets = random_weights(&as_ref(p, "program")?.net, seed)?;
        *out = Box::into_raw(Box::new(UcdaWeights(sets)));
        Ok(())
    })
}

/// Serializes weights; the caller frees the buffer with
/// [`ucda_bytes_free`].
///
/// # Safety
/// `wts` must be live; `bytes` and `len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ucda_weights_encode(wts: *const UcdaWeights, bytes: *mut *mut u8, len: *mut usize) -> UcdaStatus {
    guard(|| {
        let image = encode_weights(&as_ref(wts, "weights")?.0).into_boxed_slice();
        let bytes = out_ptr(bytes, "bytes")?;
        let len = out_ptr(len, "len")?;
        *len = image.len();
        *bytes = Box::into_raw(image) as *mut u8;
        Ok(())
    })
}

/// # Safety
/// `bytes`/`len` must come from [`ucda_weights_encode`].
#[no_mangle]
pub unsafe extern "C" fn ucda_bytes_free(bytes: *mut u8, len: usize) {
    if !bytes.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(bytes, len)));
    }
}

/// # Safety
/// `w` must be null or weights not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ucda_weights_free(w: *mut UcdaWeights) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Runs the program; `report` (optional) receives the summed counters.
///
/// # Safety
/// Handles must be live; `out` valid for writes; `report` null or valid.
#[no_mangle]
pub unsafe extern "C" fn ucda_execute(
    p: *const UcdaProgram,
    wts: *const UcdaWeights,
    input: *const UcdaTensor,
    out: *mut *mut UcdaTensor,
    report: *mut UcdaCycleReport,
) -> UcdaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let p = as_ref(p, "program")?;
        let (t, r) = execute(&p.program, &as_ref(wts, "weights")?.0, &as_ref(input, "input")?.0, &p.cfg)?;
        if let Some(rep) = report.as_mut() {
            *rep = r.into();
        }
        *out = Box::into_raw(Box::new(UcdaTensor(t)));
        Ok(())
    })
}
