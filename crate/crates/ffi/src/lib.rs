//! C ABI over the core crate.
//!
//! Every function returns a [`CpStatus`]; on failure the message is kept per
//! thread and read back with [`cp_last_error`]. Policies are opaque handles
//! owned by the caller and released with [`cp_policy_free`]. No panic crosses
//! the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use condpolicy::conditioning::{estimate_j, exact_condition_number, psi, psi_terms, CondConfig};
use condpolicy::envs::Action;
use condpolicy::numkit::{Rng, Tensor};
use condpolicy::policy::{checkpoint, HeadKind, NetSpec, PolicyNetwork};
use condpolicy::rollout::gae;
use condpolicy::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Numeric = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque policy network.
pub struct CpPolicy {
    net: PolicyNetwork,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        // Interior NULs would truncate the C string early.
        e.extend(msg.bytes().map(|b| if b == 0 { b'?' } else { b }));
    });
}

struct Fail(CpStatus, String);

impl From<Error> for Fail {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::Io { .. } => CpStatus::Io,
            Error::Checkpoint(_) | Error::Parse { .. } => CpStatus::Checkpoint,
            Error::Num(_) | Error::NonFinite(_) | Error::DegenerateJacobian { .. } => CpStatus::Numeric,
            _ => CpStatus::InvalidArgument,
        };
        Fail(code, err.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(CpStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any failure, and converts panics into [`CpStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CpStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            CpStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(CpStatus::NullPointer, format!("{what} is null"))
}

/// `len` elements at `p`; a null pointer is allowed only when `len == 0`.
unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn net_ref<'a>(p: *const CpPolicy) -> Result<&'a PolicyNetwork, Fail> {
    p.as_ref().map(|h| &h.net).ok_or_else(|| null("policy"))
}

unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn state_matrix(net: &PolicyNetwork, data: *const f64, n_states: usize) -> Result<Tensor, Fail> {
    let dim = net.spec().obs_dim;
    let xs = input(data, n_states * dim, "states")?;
    Ok(Tensor::matrix(n_states, dim, xs.to_vec()).map_err(Error::from)?)
}

fn hand_out(net: PolicyNetwork, out: *mut *mut CpPolicy) {
    unsafe { *out = Box::into_raw(Box::new(CpPolicy { net })) };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to fit) and returns the full message length without the NUL.
/// The message is empty after a successful call.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cp_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            ptr::copy_nonoverlapping(e.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Builds a freshly initialized policy. `hidden` lists `n_hidden` layer widths.
///
/// # Safety
/// `hidden` must point to `n_hidden` values (or be null when zero); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_policy_new(
    obs_dim: usize,
    act_dim: usize,
    hidden: *const usize,
    n_hidden: usize,
    discrete: bool,
    seed: u64,
    out: *mut *mut CpPolicy,
) -> CpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let hidden = input(hidden, n_hidden, "hidden")?.to_vec();
        if obs_dim == 0 || act_dim == 0 || hidden.contains(&0) {
            return Err(invalid("dimensions must be positive"));
        }
        let head = if discrete {
            HeadKind::Categorical
        } else {
            HeadKind::Gaussian
        };
        let net = PolicyNetwork::init(NetSpec::new(obs_dim, act_dim, hidden, head), seed)?;
        hand_out(net, out);
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_policy_load(path: *const c_char, out: *mut *mut CpPolicy) -> CpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let net = checkpoint::load(c_path(path)?)?;
        hand_out(net, out);
        Ok(())
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `policy` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cp_policy_save(policy: *const CpPolicy, path: *const c_char) -> CpStatus {
    guard(|| Ok(checkpoint::save(net_ref(policy)?, c_path(path)?)?))
}

/// Releases a policy. Null is ignored.
///
/// # Safety
/// `policy` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cp_policy_free(policy: *mut CpPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Observation width, action width (or count) and whether actions are discrete.
///
/// # Safety
/// `policy` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_policy_dims(
    policy: *const CpPolicy,
    obs_dim: *mut usize,
    act_dim: *mut usize,
    discrete: *mut bool,
) -> CpStatus {
    guard(|| {
        let spec = net_ref(policy)?.spec();
        if obs_dim.is_null() || act_dim.is_null() || discrete.is_null() {
            return Err(null("out"));
        }
        *obs_dim = spec.obs_dim;
        *act_dim = spec.act_dim;
        *discrete = spec.head == HeadKind::Categorical;
        Ok(())
    })
}

/// Actor outputs (gaussian means or categorical logits), row-major
/// `n_states × act_dim`.
///
/// # Safety
/// `states` holds `n_states × obs_dim` values; `out` has room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn cp_policy_actor_out(
    policy: *const CpPolicy,
    states: *const f64,
    n_states: usize,
    out: *mut f64,
    out_len: usize,
) -> CpStatus {
    guard(|| {
        let net = net_ref(policy)?;
        let y = net.actor_out(&state_matrix(net, states, n_states)?)?;
        if out_len < y.data().len() {
            return Err(Fail(
                CpStatus::BufferTooSmall,
                format!("need {} outputs, buffer holds {out_len}", y.data().len()),
            ));
        }
        output(out, y.data().len(), "out")?.copy_from_slice(y.data());
        Ok(())
    })
}

/// Deterministic actions. Gaussian heads write `act_dim` means per state;
/// categorical heads write one argmax index (as a double) per state.
///
/// # Safety
/// `states` holds `n_states × obs_dim` values; `out` has room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn cp_policy_act_mode(
    policy: *const CpPolicy,
    states: *const f64,
    n_states: usize,
    out: *mut f64,
    out_len: usize,
) -> CpStatus {
    guard(|| {
        let net = net_ref(policy)?;
        let (dist, _) = net.forward(&state_matrix(net, states, n_states)?)?;
        let per = match net.spec().head {
            HeadKind::Gaussian => net.spec().act_dim,
            HeadKind::Categorical => 1,
        };
        if out_len < n_states * per {
            return Err(Fail(
                CpStatus::BufferTooSmall,
                format!("need {} outputs, buffer holds {out_len}", n_states * per),
            ));
        }
        let out = output(out, n_states * per, "out")?;
        for i in 0..n_states {
            match dist.row(i).mode() {
                Action::Continuous(m) => out[i * per..(i + 1) * per].copy_from_slice(&m),
                Action::Discrete(a) => out[i] = a as f64,
            }
        }
        Ok(())
    })
}

/// State values, one per state.
///
/// # Safety
/// `states` holds `n_states × obs_dim` values; `out` holds `n_states`.
#[no_mangle]
pub unsafe extern "C" fn cp_policy_values(
    policy: *const CpPolicy,
    states: *const f64,
    n_states: usize,
    out: *mut f64,
) -> CpStatus {
    guard(|| {
        let net = net_ref(policy)?;
        let v = net.values(&state_matrix(net, states, n_states)?)?;
        output(out, n_states, "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Per-state sampled sensitivity `‖f(s + δ) − f(s)‖ / ε` with `‖δ‖ = ε`.
/// The same `seed` draws the same perturbations.
///
/// # Safety
/// `states` holds `n_states × obs_dim` values; `out_j` holds `n_states`.
#[no_mangle]
pub unsafe extern "C" fn cp_conditioning_estimate(
    policy: *const CpPolicy,
    states: *const f64,
    n_states: usize,
    delta_scale: f64,
    seed: u64,
    out_j: *mut f64,
) -> CpStatus {
    guard(|| {
        let net = net_ref(policy)?;
        let cfg = CondConfig {
            delta_scale,
            ..CondConfig::default()
        };
        cfg.validate()?;
        let j = estimate_j(net, &state_matrix(net, states, n_states)?, &cfg, &mut Rng::new(seed))?;
        output(out_j, n_states, "out_j")?.copy_from_slice(&j);
        Ok(())
    })
}

/// Exact spectrum of the actor Jacobian at one state, using central
/// differences of step `h`. Fails with [`CpStatus::Numeric`] when every
/// singular value is numerically zero.
///
/// # Safety
/// `state` holds `obs_dim` values; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_conditioning_exact(
    policy: *const CpPolicy,
    state: *const f64,
    h: f64,
    sigma_max: *mut f64,
    sigma_min_positive: *mut f64,
    condition_number: *mut f64,
) -> CpStatus {
    guard(|| {
        let net = net_ref(policy)?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("step must be positive, got {h}")));
        }
        let s = input(state, net.spec().obs_dim, "state")?;
        if sigma_max.is_null() || sigma_min_positive.is_null() || condition_number.is_null() {
            return Err(null("out"));
        }
        let e = exact_condition_number(net, s, h)?;
        *sigma_max = e.sigma_max;
        *sigma_min_positive = e.sigma_min_positive;
        *condition_number = e.condition_number;
        Ok(())
    })
}

/// Clamp penalty of sensitivities `j`, mean-reduced over `n` entries.
/// Any out pointer may be null.
///
/// # Safety
/// `j` holds `n` values.
#[no_mangle]
pub unsafe extern "C" fn cp_psi(
    j: *const f64,
    n: usize,
    lambda_min: f64,
    lambda_max: f64,
    out_psi: *mut f64,
    out_psi_min: *mut f64,
    out_psi_max: *mut f64,
) -> CpStatus {
    guard(|| {
        let cfg = CondConfig {
            lambda_min,
            lambda_max,
            ..CondConfig::default()
        };
        cfg.validate()?;
        let p = psi(input(j, n, "j")?, &cfg);
        for (dst, v) in [(out_psi, p.psi), (out_psi_min, p.psi_min), (out_psi_max, p.psi_max)] {
            if let Some(d) = dst.as_mut() {
                *d = v;
            }
        }
        Ok(())
    })
}

/// Per-state clamp terms for one sensitivity value.
///
/// # Safety
/// Both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_psi_terms(
    j: f64,
    lambda_min: f64,
    lambda_max: f64,
    out_psi_min: *mut f64,
    out_psi_max: *mut f64,
) -> CpStatus {
    guard(|| {
        let cfg = CondConfig {
            lambda_min,
            lambda_max,
            ..CondConfig::default()
        };
        cfg.validate()?;
        if out_psi_min.is_null() || out_psi_max.is_null() {
            return Err(null("out"));
        }
        (*out_psi_min, *out_psi_max) = psi_terms(j, &cfg);
        Ok(())
    })
}

/// Generalized advantages for one environment's trajectory of length `n`.
/// `bootstrap_values[t]` is read only at truncations and at the last step.
///
/// # Safety
/// Every input holds `n` entries; both outputs have room for `n`.
#[no_mangle]
pub unsafe extern "C" fn cp_gae(
    rewards: *const f64,
    values: *const f64,
    dones: *const bool,
    truncations: *const bool,
    bootstrap_values: *const f64,
    n: usize,
    gamma: f64,
    lambda: f64,
    out_advantages: *mut f64,
    out_returns: *mut f64,
) -> CpStatus {
    guard(|| {
        let (adv, ret) = gae(
            input(rewards, n, "rewards")?,
            input(values, n, "values")?,
            input(dones, n, "dones")?,
            input(truncations, n, "truncations")?,
            input(bootstrap_values, n, "bootstrap_values")?,
            gamma,
            lambda,
        )?;
        output(out_advantages, n, "out_advantages")?.copy_from_slice(&adv);
        output(out_returns, n, "out_returns")?.copy_from_slice(&ret);
        Ok(())
    })
}
